//! Multi-scale dataset model: scales ordered coarsest to finest, nesting maps
//! between adjacent scales, and the base-point correspondence they induce.

mod io;
mod nesting;
mod synth;

use std::collections::BTreeMap;

use ndarray::{Array2, ArrayView1};

use crate::error::{Error, Result};

pub use io::{read_dataset, read_labels, write_dataset, write_labels, FORMAT_VERSION};
pub use nesting::build_nesting_from_coords;
pub use synth::{generate_synthetic, SynthConfig, SyntheticDataset};

/// One measurement scale: `N` records of `dim` values, optionally positioned
/// in flat micron coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct DataScale {
    pub id: String,
    pub records: Array2<f32>,
    pub coords: Option<Array2<f32>>,
    pub meta: BTreeMap<String, String>,
}

impl DataScale {
    pub fn new(id: impl Into<String>, records: Array2<f32>, coords: Option<Array2<f32>>) -> Result<Self> {
        let id = id.into();
        if records.nrows() == 0 || records.ncols() == 0 {
            return Err(Error::Validation(format!("scale '{id}' has no records or zero dim")));
        }
        if let Some(c) = &coords {
            if c.nrows() != records.nrows() || c.ncols() != 2 {
                return Err(Error::Validation(format!(
                    "scale '{id}': coords shape {:?} does not match {} records",
                    c.shape(),
                    records.nrows()
                )));
            }
        }
        Ok(Self {
            id,
            records,
            coords,
            meta: BTreeMap::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.records.ncols()
    }

    pub fn len(&self) -> usize {
        self.records.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.records.nrows() == 0
    }

    pub fn record(&self, i: usize) -> ArrayView1<'_, f32> {
        self.records.row(i)
    }

    pub fn coord(&self, i: usize) -> Option<[f32; 2]> {
        self.coords.as_ref().map(|c| [c[[i, 0]], c[[i, 1]]])
    }
}

/// Parent record index to the sorted, duplicate-free child indices covering it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NestingMap {
    pub parent: String,
    pub child: String,
    pub edges: Vec<Vec<usize>>,
}

impl NestingMap {
    /// Builds a map, sorting and de-duplicating every child list.
    pub fn new(parent: impl Into<String>, child: impl Into<String>, mut edges: Vec<Vec<usize>>) -> Self {
        for list in &mut edges {
            list.sort_unstable();
            list.dedup();
        }
        Self {
            parent: parent.into(),
            child: child.into(),
            edges,
        }
    }

    pub fn children(&self, parent_index: usize) -> &[usize] {
        &self.edges[parent_index]
    }

    pub fn total_edges(&self) -> usize {
        self.edges.iter().map(Vec::len).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiScaleDataset {
    pub name: String,
    /// Coarsest first; the last scale is the base (maximum resolution) scale.
    pub scales: Vec<DataScale>,
    /// `nestings[k]` links `scales[k]` to `scales[k + 1]`.
    pub nestings: Vec<NestingMap>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ValidationReport {
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.errors.is_empty()
    }

    pub fn into_result(self) -> Result<Vec<String>> {
        if self.errors.is_empty() {
            Ok(self.warnings)
        } else {
            Err(Error::Validation(self.errors.join("; ")))
        }
    }
}

impl MultiScaleDataset {
    pub fn new(name: impl Into<String>, scales: Vec<DataScale>, nestings: Vec<NestingMap>) -> Result<Self> {
        let ds = Self {
            name: name.into(),
            scales,
            nestings,
        };
        ds.check_structure()?;
        Ok(ds)
    }

    fn check_structure(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::Validation("dataset has no scales".into()));
        }
        if self.nestings.len() + 1 != self.scales.len() {
            return Err(Error::Validation(format!(
                "{} scales need {} nestings, found {}",
                self.scales.len(),
                self.scales.len() - 1,
                self.nestings.len()
            )));
        }
        for (k, nest) in self.nestings.iter().enumerate() {
            let (p, c) = (&self.scales[k].id, &self.scales[k + 1].id);
            if &nest.parent != p || &nest.child != c {
                return Err(Error::Validation(format!(
                    "nesting {k} links '{}'->'{}' but scales are '{p}'->'{c}'",
                    nest.parent, nest.child
                )));
            }
        }
        Ok(())
    }

    pub fn base_level(&self) -> usize {
        self.scales.len() - 1
    }

    pub fn base(&self) -> &DataScale {
        &self.scales[self.base_level()]
    }

    pub fn root(&self) -> &DataScale {
        &self.scales[0]
    }

    pub fn level_of(&self, scale_id: &str) -> Result<usize> {
        self.scales
            .iter()
            .position(|s| s.id == scale_id)
            .ok_or_else(|| Error::InvalidReference(format!("unknown scale '{scale_id}'")))
    }

    /// Base-scale record indices underlying `index` at `scale_id`: the record
    /// itself on the base scale, else the union over its nested children.
    pub fn beta(&self, scale_id: &str, index: usize) -> Result<Vec<usize>> {
        let level = self.level_of(scale_id)?;
        self.beta_at(level, index)
    }

    pub fn beta_at(&self, level: usize, index: usize) -> Result<Vec<usize>> {
        let scale = self
            .scales
            .get(level)
            .ok_or_else(|| Error::InvalidReference(format!("level {level} out of range")))?;
        if index >= scale.len() {
            return Err(Error::InvalidReference(format!(
                "index {index} out of range for scale '{}' ({} records)",
                scale.id,
                scale.len()
            )));
        }
        let mut frontier = vec![index];
        for nest in &self.nestings[level..] {
            let mut next: Vec<usize> = frontier
                .iter()
                .flat_map(|&i| nest.edges.get(i).into_iter().flatten().copied())
                .collect();
            next.sort_unstable();
            next.dedup();
            frontier = next;
        }
        Ok(frontier)
    }

    /// Checks every structural invariant. Base records covered by no parent are
    /// reported as warnings.
    pub fn validate(&self) -> ValidationReport {
        let mut report = ValidationReport::default();
        if let Err(e) = self.check_structure() {
            report.errors.push(e.to_string());
            return report;
        }
        for scale in &self.scales {
            if scale.is_empty() {
                report.errors.push(format!("scale '{}' has no records", scale.id));
            }
            if let Some(c) = &scale.coords {
                if c.nrows() != scale.len() || c.ncols() != 2 {
                    report
                        .errors
                        .push(format!("scale '{}': coords shape {:?} mismatch", scale.id, c.shape()));
                }
            }
            if scale.records.iter().any(|v| !v.is_finite()) {
                report.errors.push(format!("scale '{}' contains non-finite values", scale.id));
            }
        }
        for (k, nest) in self.nestings.iter().enumerate() {
            let n_parent = self.scales[k].len();
            let n_child = self.scales[k + 1].len();
            if nest.edges.len() != n_parent {
                report.errors.push(format!(
                    "nesting '{}'->'{}' has {} parent entries, scale has {n_parent}",
                    nest.parent,
                    nest.child,
                    nest.edges.len()
                ));
            }
            let mut covered = vec![false; n_child];
            for (p, list) in nest.edges.iter().enumerate() {
                if list.is_empty() {
                    report
                        .errors
                        .push(format!("nesting '{}'->'{}': parent {p} has no children", nest.parent, nest.child));
                }
                if list.windows(2).any(|w| w[0] >= w[1]) {
                    report.errors.push(format!(
                        "nesting '{}'->'{}': parent {p} child list not sorted/unique",
                        nest.parent, nest.child
                    ));
                }
                for &c in list {
                    if c >= n_child {
                        report.errors.push(format!(
                            "nesting '{}'->'{}': edge {p}->{c} out of range ({n_child} children)",
                            nest.parent, nest.child
                        ));
                    } else {
                        covered[c] = true;
                    }
                }
            }
            let orphans = covered.iter().filter(|c| !**c).count();
            if orphans > 0 {
                report.warnings.push(format!(
                    "{orphans} record(s) of scale '{}' are not nested under any '{}' record",
                    nest.child, nest.parent
                ));
            }
        }
        report
    }

    /// Builds the scan group rooted at coarsest-scale record `root_index`.
    pub fn scan_group(&self, root_index: usize) -> Result<ScanGroup> {
        if root_index >= self.root().len() {
            return Err(Error::InvalidReference(format!(
                "root index {root_index} out of range ({} records)",
                self.root().len()
            )));
        }
        Ok(ScanGroup {
            root: self.group_node(0, root_index),
        })
    }

    pub fn scan_groups(&self) -> Result<Vec<ScanGroup>> {
        (0..self.root().len()).map(|i| self.scan_group(i)).collect()
    }

    fn group_node(&self, level: usize, index: usize) -> GroupNode {
        let scale = &self.scales[level];
        let children = match self.nestings.get(level) {
            Some(nest) => nest.edges[index]
                .iter()
                .map(|&c| self.group_node(level + 1, c))
                .collect(),
            None => Vec::new(),
        };
        GroupNode {
            level,
            index,
            values: scale.record(index).to_vec(),
            coord: scale.coord(index),
            children,
        }
    }

    /// Whether each base record is covered by at least one root record.
    pub fn base_coverage(&self) -> Vec<bool> {
        let mut covered = vec![self.scales.len() == 1; self.base().len()];
        if self.scales.len() > 1 {
            for root in 0..self.root().len() {
                for b in self.beta_at(0, root).expect("root index in range") {
                    covered[b] = true;
                }
            }
        }
        covered
    }
}

/// A record at some level together with its nested descendants.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupNode {
    pub level: usize,
    pub index: usize,
    pub values: Vec<f32>,
    pub coord: Option<[f32; 2]>,
    pub children: Vec<GroupNode>,
}

impl GroupNode {
    pub fn leaf(level: usize, index: usize, values: Vec<f32>) -> Self {
        Self {
            level,
            index,
            values,
            coord: None,
            children: Vec::new(),
        }
    }

    pub fn node_count(&self) -> usize {
        1 + self.children.iter().map(GroupNode::node_count).sum::<usize>()
    }

    /// Nodes in sequence order: this node first, then each child's subtree.
    pub fn preorder(&self) -> Vec<&GroupNode> {
        let mut out = Vec::with_capacity(self.node_count());
        self.preorder_into(&mut out);
        out
    }

    fn preorder_into<'a>(&'a self, out: &mut Vec<&'a GroupNode>) {
        out.push(self);
        for c in &self.children {
            c.preorder_into(out);
        }
    }
}

/// One coarsest-scale record and everything nested below it; the unit of
/// training and inference.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanGroup {
    pub root: GroupNode,
}

impl ScanGroup {
    pub fn root_index(&self) -> usize {
        self.root.index
    }

    pub fn node_count(&self) -> usize {
        self.root.node_count()
    }

    /// Deepest level present; equals the base level for dataset-built groups.
    pub fn base_level(&self) -> usize {
        self.root.preorder().iter().map(|n| n.level).max().unwrap_or(0)
    }

    /// Distinct base-level indices in order of first appearance.
    pub fn base_members(&self) -> Vec<usize> {
        let base = self.base_level();
        let mut seen = std::collections::BTreeSet::new();
        self.root
            .preorder()
            .into_iter()
            .filter(|n| n.level == base && seen.insert(n.index))
            .map(|n| n.index)
            .collect()
    }

    /// Per level below the root: the (index, values) members in sequence order.
    pub fn children_by_level(&self) -> Vec<Vec<(usize, Vec<f32>)>> {
        let base = self.base_level();
        let mut levels = vec![Vec::new(); base.saturating_sub(self.root.level)];
        for n in self.root.preorder().into_iter().skip(1) {
            levels[n.level - self.root.level - 1].push((n.index, n.values.clone()));
        }
        levels
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn scale(id: &str, n: usize, dim: usize) -> DataScale {
        let records = Array2::from_shape_fn((n, dim), |(i, j)| (i * dim + j) as f32);
        DataScale::new(id, records, None).unwrap()
    }

    fn three_level() -> MultiScaleDataset {
        MultiScaleDataset::new(
            "three",
            vec![scale("top", 1, 2), scale("mid", 2, 3), scale("base", 3, 4)],
            vec![
                NestingMap::new("top", "mid", vec![vec![0, 1]]),
                NestingMap::new("mid", "base", vec![vec![0, 1], vec![1, 2]]),
            ],
        )
        .unwrap()
    }

    #[test]
    fn beta_base_is_singleton() {
        let ds = three_level();
        assert_eq!(ds.beta("base", 2).unwrap(), vec![2]);
    }

    #[test]
    fn beta_one_hop_is_edge_list() {
        let ds = MultiScaleDataset::new(
            "two",
            vec![scale("q", 1, 2), scale("p", 6, 2)],
            vec![NestingMap::new("q", "p", vec![vec![3, 4, 5]])],
        )
        .unwrap();
        assert_eq!(ds.beta("q", 0).unwrap(), vec![3, 4, 5]);
    }

    #[test]
    fn beta_unions_shared_children() {
        let ds = three_level();
        assert_eq!(ds.beta("top", 0).unwrap(), vec![0, 1, 2]);
        assert_eq!(ds.beta("mid", 1).unwrap(), vec![1, 2]);
    }

    #[test]
    fn beta_rejects_bad_references() {
        let ds = three_level();
        assert!(matches!(ds.beta("nope", 0), Err(Error::InvalidReference(_))));
        assert!(matches!(ds.beta("mid", 2), Err(Error::InvalidReference(_))));
    }

    #[test]
    fn validate_well_formed() {
        let report = three_level().validate();
        assert!(report.errors.is_empty());
        assert!(report.warnings.is_empty());
    }

    #[test]
    fn validate_flags_out_of_range_edge() {
        let mut ds = three_level();
        ds.nestings[1].edges[1] = vec![1, 3];
        let report = ds.validate();
        assert_eq!(report.errors.len(), 1);
        assert!(report.errors[0].contains("1->3"), "{:?}", report.errors);
    }

    #[test]
    fn validate_empty_nesting_is_error() {
        let mut ds = three_level();
        ds.nestings[1].edges[0].clear();
        let report = ds.validate();
        assert!(report.errors.iter().any(|e| e.contains("parent 0 has no children")));
    }

    #[test]
    fn orphan_is_warning_only() {
        let ds = MultiScaleDataset::new(
            "orphan",
            vec![scale("q", 1, 2), scale("p", 3, 2)],
            vec![NestingMap::new("q", "p", vec![vec![0, 1]])],
        )
        .unwrap();
        let report = ds.validate();
        assert!(report.is_ok());
        assert_eq!(report.warnings.len(), 1);
        assert_eq!(ds.base_coverage(), vec![true, true, false]);
    }

    #[test]
    fn structure_mismatch_rejected() {
        let err = MultiScaleDataset::new("bad", vec![scale("q", 1, 2), scale("p", 3, 2)], vec![]);
        assert!(err.is_err());
    }

    #[test]
    fn scan_group_mirrors_edges() {
        let ds = three_level();
        let g = ds.scan_group(0).unwrap();
        assert_eq!(g.node_count(), 7);
        let order: Vec<(usize, usize)> = g.root.preorder().iter().map(|n| (n.level, n.index)).collect();
        assert_eq!(order, vec![(0, 0), (1, 0), (2, 0), (2, 1), (1, 1), (2, 1), (2, 2)]);
        assert_eq!(g.base_members(), vec![0, 1, 2]);
        let by_level = g.children_by_level();
        assert_eq!(by_level[0].iter().map(|m| m.0).collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(by_level[1].len(), 4);
        assert_eq!(by_level[0][1].1, vec![3.0, 4.0, 5.0]);
    }
}
