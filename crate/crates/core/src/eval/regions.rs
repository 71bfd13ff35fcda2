use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::metrics::sliced_wasserstein;
use crate::error::{Error, Result};

/// A set of base records, given directly or as a shape in micron coordinates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RegionShape {
    Indices { indices: Vec<usize> },
    Disc { center: [f64; 2], radius: f64 },
    /// Closed polygon; points on the boundary count as inside.
    Polygon { vertices: Vec<[f64; 2]> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionSelection {
    pub label: String,
    #[serde(flatten)]
    pub shape: RegionShape,
}

/// A base record with its position and latent, the unit regions select from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentPoint {
    pub index: usize,
    pub x: f64,
    pub y: f64,
    pub latent: Vec<f64>,
}

fn in_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    let mut inside = false;
    for i in 0..n {
        let (a, b) = (poly[i], poly[(i + 1) % n]);
        // Boundary: collinear and within the segment's box.
        let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        if cross == 0.0
            && p[0] >= a[0].min(b[0])
            && p[0] <= a[0].max(b[0])
            && p[1] >= a[1].min(b[1])
            && p[1] <= a[1].max(b[1])
        {
            return true;
        }
        if (a[1] > p[1]) != (b[1] > p[1]) {
            let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

impl RegionSelection {
    /// Positions in `points` of the selected records, ascending.
    pub fn resolve(&self, points: &[LatentPoint]) -> Result<Vec<usize>> {
        let picked: Vec<usize> = match &self.shape {
            RegionShape::Indices { indices } => {
                let mut want = indices.clone();
                want.sort_unstable();
                want.dedup();
                let found: Vec<usize> = (0..points.len())
                    .filter(|&i| want.binary_search(&points[i].index).is_ok())
                    .collect();
                if found.len() != want.len() {
                    return Err(Error::Validation(format!(
                        "region '{}' names records that are not in the point set",
                        self.label
                    )));
                }
                found
            }
            RegionShape::Disc { center, radius } => {
                if !(*radius >= 0.0) {
                    return Err(Error::Validation(format!("region '{}' has a negative radius", self.label)));
                }
                (0..points.len())
                    .filter(|&i| {
                        let (dx, dy) = (points[i].x - center[0], points[i].y - center[1]);
                        dx * dx + dy * dy <= radius * radius
                    })
                    .collect()
            }
            RegionShape::Polygon { vertices } => {
                if vertices.len() < 3 {
                    return Err(Error::Validation(format!("region '{}' needs at least 3 vertices", self.label)));
                }
                (0..points.len())
                    .filter(|&i| in_polygon([points[i].x, points[i].y], vertices))
                    .collect()
            }
        };
        if picked.is_empty() {
            return Err(Error::Validation(format!("region '{}' selects no records", self.label)));
        }
        Ok(picked)
    }

    pub fn latents(&self, points: &[LatentPoint]) -> Result<Array2<f64>> {
        let rows = self.resolve(points)?;
        let dim = points[rows[0]].latent.len();
        let mut out = Array2::zeros((rows.len(), dim));
        for (r, &i) in rows.iter().enumerate() {
            out.row_mut(r).assign(&ndarray::ArrayView1::from(&points[i].latent));
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionComparison {
    pub region_a: String,
    pub region_b: String,
    pub count_a: usize,
    pub count_b: usize,
    pub distance: f64,
    pub method: String,
    pub projections: usize,
    pub seed: u64,
}

/// Sliced W1 between the latents of two regions, in raw latent units.
pub fn region_separation(
    points: &[LatentPoint],
    a: &RegionSelection,
    b: &RegionSelection,
    projections: usize,
    seed: u64,
) -> Result<RegionComparison> {
    let la = a.latents(points)?;
    let lb = b.latents(points)?;
    let distance = sliced_wasserstein(&la, &lb, projections, seed)?;
    Ok(RegionComparison {
        region_a: a.label.clone(),
        region_b: b.label.clone(),
        count_a: la.nrows(),
        count_b: lb.nrows(),
        distance,
        method: if la.ncols() == 1 { "wasserstein-1d" } else { "sliced-wasserstein" }.into(),
        projections,
        seed,
    })
}
