use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::dataset::{MultiScaleDataset, ScanGroup};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlattenMode {
    /// One row per parent: parent values then a fixed number of child slots.
    Joint,
    /// One row per (parent, child) pair: parent values then child values.
    Concatenative,
}

/// Everything needed to flatten a group the same way at fit and inference time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlattenSpec {
    pub mode: FlattenMode,
    pub parent_dim: usize,
    pub child_dim: usize,
    /// Child slots per joint row; unused in concatenative mode.
    pub budget: usize,
    /// Per-dimension child mean used to fill empty joint slots.
    pub padding: Vec<f32>,
}

/// Where a flattened row came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowSource {
    pub parent: usize,
    /// Children occupying the row's child slots, in slot order.
    pub children: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlattenedView {
    pub spec: FlattenSpec,
    pub matrix: Array2<f64>,
    pub rows: Vec<RowSource>,
}

impl FlattenSpec {
    /// `budget` defaults to the largest child count in the dataset.
    pub fn for_dataset(ds: &MultiScaleDataset, mode: FlattenMode, budget: Option<usize>) -> Result<Self> {
        if ds.scales.len() != 2 {
            return Err(Error::Unsupported(format!(
                "flattened baselines need exactly two scales, dataset has {}",
                ds.scales.len()
            )));
        }
        let base = ds.base();
        let max_children = ds.nestings[0].edges.iter().map(Vec::len).max().unwrap_or(0);
        let budget = budget.unwrap_or(max_children);
        if mode == FlattenMode::Joint && budget == 0 {
            return Err(Error::Config("joint flattening needs a positive child budget".into()));
        }
        let n = base.len().max(1) as f64;
        let padding = base
            .records
            .columns()
            .into_iter()
            .map(|c| (c.iter().map(|&v| v as f64).sum::<f64>() / n) as f32)
            .collect();
        Ok(Self {
            mode,
            parent_dim: ds.root().dim(),
            child_dim: base.dim(),
            budget,
            padding,
        })
    }

    pub fn width(&self) -> usize {
        match self.mode {
            FlattenMode::Joint => self.parent_dim + self.budget * self.child_dim,
            FlattenMode::Concatenative => self.parent_dim + self.child_dim,
        }
    }

    /// Flattened rows of one two-level group, with the child indices of each row.
    pub fn group_rows(&self, group: &ScanGroup) -> Result<Vec<(Vec<f64>, Vec<usize>)>> {
        let root = &group.root;
        if root.values.len() != self.parent_dim || root.children.iter().any(|c| !c.children.is_empty()) {
            return Err(Error::Shape("flattening expects two-level groups matching the fitted dims".into()));
        }
        if root.children.iter().any(|c| c.values.len() != self.child_dim) {
            return Err(Error::Shape(format!("child records must have {} values", self.child_dim)));
        }
        let parent: Vec<f64> = root.values.iter().map(|&v| v as f64).collect();
        match self.mode {
            FlattenMode::Concatenative => Ok(root
                .children
                .iter()
                .map(|c| {
                    let mut row = parent.clone();
                    row.extend(c.values.iter().map(|&v| v as f64));
                    (row, vec![c.index])
                })
                .collect()),
            FlattenMode::Joint => {
                let mut order: Vec<usize> = (0..root.children.len()).collect();
                let coords: Option<Vec<[f32; 2]>> = root.children.iter().map(|c| c.coord).collect();
                match (coords, centroid(group)) {
                    (Some(cs), Some(center)) => {
                        let dist = |i: usize| {
                            let dx = cs[i][0] as f64 - center[0];
                            let dy = cs[i][1] as f64 - center[1];
                            dx * dx + dy * dy
                        };
                        order.sort_by(|&a, &b| {
                            dist(a)
                                .total_cmp(&dist(b))
                                .then(root.children[a].index.cmp(&root.children[b].index))
                        });
                    }
                    _ if order.len() > self.budget => {
                        return Err(Error::Format(format!(
                            "group {} needs truncation to {} children but lacks coordinates",
                            root.index, self.budget
                        )));
                    }
                    _ => order.sort_by_key(|&i| root.children[i].index),
                }
                order.truncate(self.budget);
                let mut row = parent;
                for &i in &order {
                    row.extend(root.children[i].values.iter().map(|&v| v as f64));
                }
                for _ in order.len()..self.budget {
                    row.extend(self.padding.iter().map(|&v| v as f64));
                }
                Ok(vec![(row, order.iter().map(|&i| root.children[i].index).collect())])
            }
        }
    }
}

/// Parent coordinate if present, else the mean child coordinate.
fn centroid(group: &ScanGroup) -> Option<[f64; 2]> {
    if let Some(c) = group.root.coord {
        return Some([c[0] as f64, c[1] as f64]);
    }
    let cs: Option<Vec<[f32; 2]>> = group.root.children.iter().map(|c| c.coord).collect();
    let cs = cs.filter(|c| !c.is_empty())?;
    let n = cs.len() as f64;
    Some([
        cs.iter().map(|c| c[0] as f64).sum::<f64>() / n,
        cs.iter().map(|c| c[1] as f64).sum::<f64>() / n,
    ])
}

pub fn flatten_with(ds: &MultiScaleDataset, spec: &FlattenSpec) -> Result<FlattenedView> {
    let mut data = Vec::new();
    let mut rows = Vec::new();
    for group in ds.scan_groups()? {
        for (row, children) in spec.group_rows(&group)? {
            data.extend(row);
            rows.push(RowSource {
                parent: group.root_index(),
                children,
            });
        }
    }
    let matrix = Array2::from_shape_vec((rows.len(), spec.width()), data).expect("row widths");
    Ok(FlattenedView {
        spec: spec.clone(),
        matrix,
        rows,
    })
}

pub fn flatten(ds: &MultiScaleDataset, mode: FlattenMode, budget: Option<usize>) -> Result<FlattenedView> {
    flatten_with(ds, &FlattenSpec::for_dataset(ds, mode, budget)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{DataScale, NestingMap};
    use ndarray::array;

    fn tiny() -> MultiScaleDataset {
        let parent = DataScale::new("p", array![[1.0f32, 2.0], [3.0, 4.0]], Some(array![[0.0f32, 0.0], [10.0, 0.0]])).unwrap();
        let child = DataScale::new(
            "c",
            array![[0.0f32, 0.0, 1.0], [1.0, 1.0, 1.0], [2.0, 2.0, 2.0], [3.0, 3.0, 4.0]],
            Some(array![[3.0f32, 0.0], [1.0, 0.0], [-1.0, 0.0], [9.0, 0.0]]),
        )
        .unwrap();
        let nest = NestingMap::new("p", "c", vec![vec![0, 1, 2], vec![3]]);
        MultiScaleDataset::new("tiny", vec![parent, child], vec![nest]).unwrap()
    }

    #[test]
    fn concatenative_rows() {
        let v = flatten(&tiny(), FlattenMode::Concatenative, None).unwrap();
        assert_eq!(v.matrix.dim(), (4, 5));
        assert_eq!(v.matrix.row(1).to_vec(), vec![1.0, 2.0, 1.0, 1.0, 1.0]);
        assert_eq!(v.rows[3], RowSource { parent: 1, children: vec![3] });
    }

    #[test]
    fn joint_orders_by_distance_and_pads() {
        let v = flatten(&tiny(), FlattenMode::Joint, Some(2)).unwrap();
        assert_eq!(v.matrix.dim(), (2, 2 + 2 * 3));
        // Children 1 and 2 tie at distance 1; index breaks the tie.
        assert_eq!(v.rows[0].children, vec![1, 2]);
        assert_eq!(v.matrix.row(0).to_vec(), vec![1.0, 2.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        assert_eq!(v.rows[1].children, vec![3]);
        assert_eq!(v.matrix.row(1).to_vec(), vec![3.0, 4.0, 3.0, 3.0, 4.0, 1.5, 1.5, 2.0]);
    }

    #[test]
    fn joint_width_matches_budget() {
        let ds = crate::dataset::generate_synthetic(&crate::dataset::SynthConfig {
            width: 16,
            height: 16,
            ..Default::default()
        })
        .unwrap();
        let spec = FlattenSpec::for_dataset(&ds.dataset, FlattenMode::Joint, Some(100)).unwrap();
        assert_eq!(spec.width(), 1608);
        let concat = flatten(&ds.dataset, FlattenMode::Concatenative, None).unwrap();
        assert_eq!(concat.matrix.nrows(), ds.dataset.nestings[0].total_edges());
    }

    #[test]
    fn truncation_without_coords_fails() {
        let mut ds = tiny();
        ds.scales[1].coords = None;
        ds.scales[0].coords = None;
        assert!(matches!(flatten(&ds, FlattenMode::Joint, Some(2)), Err(Error::Format(_))));
        let v = flatten(&ds, FlattenMode::Joint, Some(3)).unwrap();
        assert_eq!(v.rows[0].children, vec![0, 1, 2]);
    }

    #[test]
    fn deeper_datasets_are_rejected() {
        let s = |id: &str| DataScale::new(id, array![[1.0f32]], None).unwrap();
        let ds = MultiScaleDataset::new(
            "deep",
            vec![s("a"), s("b"), s("c")],
            vec![NestingMap::new("a", "b", vec![vec![0]]), NestingMap::new("b", "c", vec![vec![0]])],
        )
        .unwrap();
        assert!(matches!(flatten(&ds, FlattenMode::Concatenative, None), Err(Error::Unsupported(_))));
    }
}
