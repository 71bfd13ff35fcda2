use std::collections::HashMap;

use super::{DataScale, NestingMap};
use crate::error::{Error, Result};

/// Nests every child record whose position lies within `radius` (inclusive)
/// of a parent's position. A child may land under several parents.
pub fn build_nesting_from_coords(parent: &DataScale, child: &DataScale, radius: f64) -> Result<NestingMap> {
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Config(format!("radius must be positive, got {radius}")));
    }
    let pc = parent
        .coords
        .as_ref()
        .ok_or_else(|| Error::Format(format!("scale '{}' has no coords", parent.id)))?;
    let cc = child
        .coords
        .as_ref()
        .ok_or_else(|| Error::Format(format!("scale '{}' has no coords", child.id)))?;

    // Bucket children on a square grid with cell side `radius`; a disc query
    // then touches at most the 3x3 neighbourhood of the parent's cell.
    let cell = |x: f64| (x / radius).floor() as i64;
    let mut buckets: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (j, row) in cc.outer_iter().enumerate() {
        let (x, y) = (row[0] as f64, row[1] as f64);
        buckets.entry((cell(x), cell(y))).or_default().push(j);
    }

    let r2 = radius * radius;
    let mut edges = Vec::with_capacity(pc.nrows());
    for (i, row) in pc.outer_iter().enumerate() {
        let (px, py) = (row[0] as f64, row[1] as f64);
        let (cx, cy) = (cell(px), cell(py));
        let mut members = Vec::new();
        for gx in cx - 1..=cx + 1 {
            for gy in cy - 1..=cy + 1 {
                if let Some(list) = buckets.get(&(gx, gy)) {
                    for &j in list {
                        let dx = cc[[j, 0]] as f64 - px;
                        let dy = cc[[j, 1]] as f64 - py;
                        if dx * dx + dy * dy <= r2 {
                            members.push(j);
                        }
                    }
                }
            }
        }
        if members.is_empty() {
            return Err(Error::Validation(format!(
                "parent {i} of scale '{}' has no '{}' records within {radius}",
                parent.id, child.id
            )));
        }
        edges.push(members);
    }
    Ok(NestingMap::new(parent.id.clone(), child.id.clone(), edges))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{array, Array2};
    use proptest::prelude::*;

    fn positioned(id: &str, coords: Array2<f32>) -> DataScale {
        let n = coords.nrows();
        DataScale::new(id, Array2::zeros((n, 1)), Some(coords)).unwrap()
    }

    #[test]
    fn within_radius_only() {
        let p = positioned("q", array![[0.0, 0.0]]);
        let c = positioned("p", array![[0.0, 50.0], [0.0, 80.0]]);
        let n = build_nesting_from_coords(&p, &c, 75.0).unwrap();
        assert_eq!(n.edges, vec![vec![0]]);
    }

    #[test]
    fn boundary_inclusive() {
        let p = positioned("q", array![[0.0, 0.0]]);
        let c = positioned("p", array![[0.0, 75.0], [45.0, 60.0]]);
        let n = build_nesting_from_coords(&p, &c, 75.0).unwrap();
        assert_eq!(n.edges, vec![vec![0, 1]]);
    }

    #[test]
    fn shared_child_under_two_parents() {
        let p = positioned("q", array![[0.0, 0.0], [100.0, 0.0]]);
        let c = positioned("p", array![[50.0, 0.0]]);
        let n = build_nesting_from_coords(&p, &c, 75.0).unwrap();
        assert_eq!(n.edges, vec![vec![0], vec![0]]);
    }

    #[test]
    fn empty_parent_is_named() {
        let p = positioned("q", array![[0.0, 0.0], [500.0, 0.0]]);
        let c = positioned("p", array![[10.0, 0.0]]);
        let err = build_nesting_from_coords(&p, &c, 75.0).unwrap_err();
        assert!(err.to_string().contains("parent 1"), "{err}");
    }

    #[test]
    fn missing_coords_is_format_error() {
        let p = DataScale::new("q", Array2::zeros((1, 1)), None).unwrap();
        let c = positioned("p", array![[10.0, 0.0]]);
        assert!(matches!(build_nesting_from_coords(&p, &c, 75.0), Err(Error::Format(_))));
    }

    fn brute_force(p: &Array2<f32>, c: &Array2<f32>, r: f64) -> Vec<Vec<usize>> {
        p.outer_iter()
            .map(|pr| {
                (0..c.nrows())
                    .filter(|&j| {
                        let dx = c[[j, 0]] as f64 - pr[0] as f64;
                        let dy = c[[j, 1]] as f64 - pr[1] as f64;
                        dx * dx + dy * dy <= r * r
                    })
                    .collect()
            })
            .collect()
    }

    proptest! {
        // Integer-valued coordinates keep translated distances exact in f32.
        #[test]
        fn translation_invariant_and_matches_brute_force(
            pts in proptest::collection::vec((-200i32..200, -200i32..200), 1..40),
            parents in proptest::collection::vec((-200i32..200, -200i32..200), 1..6),
            shift in (-1000i32..1000, -1000i32..1000),
            radius in 20u32..150,
        ) {
            let to_arr = |v: &[(i32, i32)], dx: i32, dy: i32| {
                Array2::from_shape_fn((v.len(), 2), |(i, k)| {
                    if k == 0 { (v[i].0 + dx) as f32 } else { (v[i].1 + dy) as f32 }
                })
            };
            let r = radius as f64;
            let c0 = to_arr(&pts, 0, 0);
            let p0 = to_arr(&parents, 0, 0);
            let expected = brute_force(&p0, &c0, r);
            prop_assume!(expected.iter().all(|e| !e.is_empty()));
            let a = build_nesting_from_coords(&positioned("q", p0), &positioned("p", c0), r).unwrap();
            prop_assert_eq!(&a.edges, &expected);
            let b = build_nesting_from_coords(
                &positioned("q", to_arr(&parents, shift.0, shift.1)),
                &positioned("p", to_arr(&pts, shift.0, shift.1)),
                r,
            ).unwrap();
            prop_assert_eq!(a.edges, b.edges);
        }
    }
}
