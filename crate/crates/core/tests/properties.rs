use std::collections::BTreeSet;

use ndarray::Array2;
use nested_fusion::dataset::{read_dataset, write_dataset};
use nested_fusion::eval::{
    latent_heatmap, r_squared, sliced_wasserstein, subsample, wasserstein_1d, LatentPoint, RegionSelection, RegionShape,
};
use nested_fusion::{DataScale, MultiScaleDataset, NestingMap};
use proptest::prelude::*;

fn close(a: f64, b: f64, scale: f64) -> bool {
    (a - b).abs() <= 1e-9 * (1.0 + scale)
}

fn sample() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0..100.0f64, 1..40)
}

/// Level sizes, record dims and, per nesting, the child list of every parent.
fn nested_dataset() -> impl Strategy<Value = MultiScaleDataset> {
    (2usize..=4)
        .prop_flat_map(|levels| (prop::collection::vec(1usize..7, levels), prop::collection::vec(1usize..4, levels)))
        .prop_flat_map(|(sizes, dims)| {
            let nests: Vec<_> = sizes
                .windows(2)
                .map(|w| prop::collection::vec(prop::collection::btree_set(0..w[1], 1..=w[1]), w[0]))
                .collect();
            let values: Vec<_> = sizes
                .iter()
                .zip(&dims)
                .map(|(&n, &d)| prop::collection::vec(-5.0f32..5.0, n * d))
                .collect();
            (Just(sizes), Just(dims), nests, values)
        })
        .prop_map(|(sizes, dims, nests, values)| {
            let scales = (0..sizes.len())
                .map(|l| {
                    let records = Array2::from_shape_vec((sizes[l], dims[l]), values[l].clone()).unwrap();
                    DataScale::new(format!("s{l}"), records, None).unwrap()
                })
                .collect();
            let nestings = nests
                .iter()
                .enumerate()
                .map(|(k, edges)| {
                    let edges = edges.iter().map(|s| s.iter().copied().collect()).collect();
                    NestingMap::new(format!("s{k}"), format!("s{}", k + 1), edges)
                })
                .collect();
            MultiScaleDataset::new("random", scales, nestings).unwrap()
        })
}

/// Base records reached from `index` at `level` by walking every nesting edge.
fn descendants(ds: &MultiScaleDataset, level: usize, index: usize, out: &mut BTreeSet<usize>) {
    match ds.nestings.get(level) {
        None => {
            out.insert(index);
        }
        Some(n) => {
            for &c in n.children(index) {
                descendants(ds, level + 1, c, out);
            }
        }
    }
}

proptest! {
    #[test]
    fn wasserstein_is_a_metric(a in sample(), b in sample(), c in sample()) {
        let (ab, ba) = (wasserstein_1d(&a, &b), wasserstein_1d(&b, &a));
        prop_assert!(close(ab, ba, ab));
        prop_assert_eq!(wasserstein_1d(&a, &a), 0.0);
        let (ac, cb) = (wasserstein_1d(&a, &c), wasserstein_1d(&c, &b));
        prop_assert!(ab <= ac + cb + 1e-9 * (1.0 + ab));
    }

    #[test]
    fn wasserstein_translation_and_scale(a in sample(), b in sample(), t in -50.0..50.0f64, k in -4.0..4.0f64) {
        let w = wasserstein_1d(&a, &b);
        let shift = |v: &[f64]| v.iter().map(|x| x + t).collect::<Vec<_>>();
        let scale = |v: &[f64]| v.iter().map(|x| x * k).collect::<Vec<_>>();
        prop_assert!(close(wasserstein_1d(&shift(&a), &shift(&b)), w, w));
        prop_assert!(close(wasserstein_1d(&scale(&a), &scale(&b)), k.abs() * w, w * k.abs()));
    }

    #[test]
    fn shifting_one_sample_moves_it_by_the_shift(a in sample(), t in -50.0..50.0f64) {
        let moved: Vec<f64> = a.iter().map(|x| x + t).collect();
        prop_assert!(close(wasserstein_1d(&a, &moved), t.abs(), t.abs()));
    }

    #[test]
    fn sliced_wasserstein_symmetry_translation_scale(
        a in prop::collection::vec(-10.0..10.0f64, 2..40),
        b in prop::collection::vec(-10.0..10.0f64, 2..40),
        t in -5.0..5.0f64,
        k in 0.1..3.0f64,
        seed in 0u64..1000,
    ) {
        let m = |v: &[f64]| Array2::from_shape_vec((v.len() / 2, 2), v[..v.len() / 2 * 2].to_vec()).unwrap();
        let (ma, mb) = (m(&a), m(&b));
        let w = sliced_wasserstein(&ma, &mb, 32, seed).unwrap();
        prop_assert!(close(sliced_wasserstein(&mb, &ma, 32, seed).unwrap(), w, w));
        let w_shift = sliced_wasserstein(&(&ma + t), &(&mb + t), 32, seed).unwrap();
        prop_assert!(close(w_shift, w, w));
        let w_scale = sliced_wasserstein(&(&ma * k), &(&mb * k), 32, seed).unwrap();
        prop_assert!(close(w_scale, k * w, k * w));
    }

    #[test]
    fn beta_is_the_union_of_descendants(ds in nested_dataset()) {
        prop_assert!(ds.validate().is_ok());
        for level in 0..ds.scales.len() {
            for i in 0..ds.scales[level].len() {
                let mut want = BTreeSet::new();
                descendants(&ds, level, i, &mut want);
                prop_assert_eq!(ds.beta_at(level, i).unwrap(), want.into_iter().collect::<Vec<_>>());
            }
        }
        for g in ds.scan_groups().unwrap() {
            let mut members = g.base_members();
            members.sort_unstable();
            prop_assert_eq!(members, ds.beta_at(0, g.root_index()).unwrap());
        }
    }

    #[test]
    fn dataset_round_trips_exactly(ds in nested_dataset()) {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&ds, dir.path()).unwrap();
        let back = read_dataset(dir.path()).unwrap();
        prop_assert_eq!(back, ds);
    }

    #[test]
    fn r_squared_never_exceeds_one(t in prop::collection::vec(-10.0..10.0f64, 6..30), noise in prop::collection::vec(-1.0..1.0f64, 30)) {
        let n = t.len() / 2;
        let truth = Array2::from_shape_vec((n, 2), t[..2 * n].to_vec()).unwrap();
        let pred = &truth + &Array2::from_shape_vec((n, 2), noise[..2 * n].to_vec()).unwrap();
        if let Ok(r) = r_squared(&truth, &pred) {
            prop_assert!(r <= 1.0);
            prop_assert_eq!(r_squared(&truth, &truth).unwrap(), 1.0);
        }
    }

    #[test]
    fn heatmap_conserves_points(v in prop::collection::vec(-10.0..10.0f64, 2..200), bins in 1usize..50) {
        let n = v.len() / 2;
        let pts = Array2::from_shape_vec((n, 2), v[..2 * n].to_vec()).unwrap();
        let h = latent_heatmap(&pts, bins).unwrap();
        prop_assert_eq!(h.counts.len(), bins);
        prop_assert!(h.counts.iter().all(|r| r.len() == bins));
        prop_assert_eq!(h.counts.iter().flatten().sum::<u64>(), n as u64);
    }

    #[test]
    fn subsample_is_a_seeded_sorted_subset(n in 1usize..300, cap in 1usize..150, seed in any::<u64>()) {
        let pts = Array2::from_shape_fn((n, 2), |(i, j)| (i * 2 + j) as f64);
        let idx: Vec<usize> = (0..n).map(|i| i + 1000).collect();
        let s = subsample(&idx, &pts, cap, seed);
        prop_assert_eq!(s.indices.len(), n.min(cap));
        prop_assert!(s.indices.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(s.indices.iter().zip(&s.values).all(|(&i, v)| v[0] == ((i - 1000) * 2) as f64));
        prop_assert_eq!(s, subsample(&idx, &pts, cap, seed));
    }

    #[test]
    fn larger_discs_select_supersets(r in 1.0..40.0f64, extra in 0.0..40.0f64, cx in 0.0..100.0f64, cy in 0.0..100.0f64) {
        let pts: Vec<LatentPoint> = (0..100)
            .map(|i| LatentPoint { index: i, x: (i % 10) as f64 * 10.0, y: (i / 10) as f64 * 10.0, latent: vec![0.0] })
            .collect();
        let disc = |radius| RegionSelection { label: "d".into(), shape: RegionShape::Disc { center: [cx, cy], radius } };
        if let Ok(small) = disc(r).resolve(&pts) {
            let big = disc(r + extra).resolve(&pts).unwrap();
            prop_assert!(small.iter().all(|i| big.contains(i)));
        }
    }
}
