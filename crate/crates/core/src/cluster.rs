//! Cluster membership, cluster means and within-cluster centering.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Assignment of `N` units to `G` clusters with dense ids `0..G`.
///
/// Ids are assigned by first appearance of each label, so the mapping is
/// stable under any reordering that keeps the first unit of each cluster in
/// the same relative order.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize))]
pub struct ClusterIndex {
    labels: Vec<String>,
    group_of: Vec<usize>,
    /// Units sorted by group, ascending unit index within each group.
    order: Vec<usize>,
    offsets: Vec<usize>,
}

impl ClusterIndex {
    /// Build from one label per unit.
    pub fn from_labels<S: AsRef<str>>(labels: &[S]) -> Result<Self> {
        let mut ids: BTreeMap<&str, usize> = BTreeMap::new();
        let mut names = Vec::new();
        let mut group_of = Vec::with_capacity(labels.len());
        for l in labels {
            let l = l.as_ref();
            let next = ids.len();
            let g = *ids.entry(l).or_insert_with(|| {
                names.push(l.to_string());
                next
            });
            group_of.push(g);
        }
        Self::build(names, group_of)
    }

    /// Build from integer group ids; ids are re-densified by first appearance.
    pub fn from_group_ids(ids: &[usize]) -> Result<Self> {
        let mut map: BTreeMap<usize, usize> = BTreeMap::new();
        let mut names = Vec::new();
        let mut group_of = Vec::with_capacity(ids.len());
        for &id in ids {
            let next = map.len();
            let g = *map.entry(id).or_insert_with(|| {
                names.push(id.to_string());
                next
            });
            group_of.push(g);
        }
        Self::build(names, group_of)
    }

    /// Contiguous clusters of the given sizes, labelled `0..G`.
    pub fn from_sizes(sizes: &[usize]) -> Result<Self> {
        if sizes.contains(&0) {
            return Err(Error::InvalidParameter("cluster sizes must be >= 1".into()));
        }
        let group_of: Vec<usize> = sizes.iter().enumerate().flat_map(|(g, &n)| core::iter::repeat_n(g, n)).collect();
        let names = (0..sizes.len()).map(|g| g.to_string()).collect();
        Self::build(names, group_of)
    }

    fn build(labels: Vec<String>, group_of: Vec<usize>) -> Result<Self> {
        let g = labels.len();
        let mut counts = vec![0usize; g];
        for &c in &group_of {
            counts[c] += 1;
        }
        let mut offsets = Vec::with_capacity(g + 1);
        offsets.push(0);
        for c in &counts {
            offsets.push(offsets.last().unwrap() + c);
        }
        let mut cursor = offsets[..g].to_vec();
        let mut order = vec![0usize; group_of.len()];
        for (i, &c) in group_of.iter().enumerate() {
            order[cursor[c]] = i;
            cursor[c] += 1;
        }
        Ok(ClusterIndex { labels, group_of, order, offsets })
    }

    pub fn n_units(&self) -> usize {
        self.group_of.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn group_of(&self) -> &[usize] {
        &self.group_of
    }

    #[inline]
    pub fn group(&self, unit: usize) -> usize {
        self.group_of[unit]
    }

    /// Units of cluster `g`, ascending.
    pub fn members(&self, g: usize) -> &[usize] {
        &self.order[self.offsets[g]..self.offsets[g + 1]]
    }

    pub fn size(&self, g: usize) -> usize {
        self.offsets[g + 1] - self.offsets[g]
    }

    pub fn sizes(&self) -> Vec<usize> {
        (0..self.n_clusters()).map(|g| self.size(g)).collect()
    }

    fn check(&self, len: usize) -> Result<()> {
        if len != self.n_units() {
            return Err(Error::DimensionMismatch {
                what: "cluster-indexed vector",
                expected: self.n_units(),
                found: len,
            });
        }
        Ok(())
    }

    /// Per-cluster sums, accumulated in ascending unit order.
    pub fn sums(&self, v: &[f64]) -> Result<Vec<f64>> {
        self.check(v.len())?;
        let mut s = vec![0.0; self.n_clusters()];
        for (x, &g) in v.iter().zip(&self.group_of) {
            s[g] += x;
        }
        Ok(s)
    }

    /// Per-cluster sums of `a_i * b_i`.
    pub fn cross_sums(&self, a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
        self.check(a.len())?;
        self.check(b.len())?;
        let mut s = vec![0.0; self.n_clusters()];
        for ((x, y), &g) in a.iter().zip(b).zip(&self.group_of) {
            s[g] += x * y;
        }
        Ok(s)
    }

    /// Number of clusters in which `v` takes more than one value.
    pub fn clusters_with_variation(&self, v: &[f64]) -> Result<usize> {
        self.check(v.len())?;
        Ok((0..self.n_clusters())
            .filter(|&g| {
                let m = self.members(g);
                m.iter().any(|&i| v[i] != v[m[0]])
            })
            .count())
    }
}

/// Cluster averages `v̄_g`.
pub fn cluster_means(v: &[f64], idx: &ClusterIndex) -> Result<Vec<f64>> {
    let mut s = idx.sums(v)?;
    for (g, m) in s.iter_mut().enumerate() {
        *m /= idx.size(g) as f64;
    }
    Ok(s)
}

/// `v_i - v̄_{c(i)}` for every unit.
pub fn center_by_cluster(v: &[f64], idx: &ClusterIndex) -> Result<Vec<f64>> {
    let means = cluster_means(v, idx)?;
    Ok(v.iter().zip(idx.group_of()).map(|(x, &g)| x - means[g]).collect())
}

/// Column-wise [`center_by_cluster`].
pub fn center_matrix_by_cluster(m: &Matrix, idx: &ClusterIndex) -> Result<Matrix> {
    let mut out = m.clone();
    for j in 0..m.cols() {
        let c = center_by_cluster(m.col(j), idx)?;
        out.col_mut(j).copy_from_slice(&c);
    }
    Ok(out)
}

/// Dense `N x G` cluster indicator matrix. Only used by tests and oracles:
/// production code never materializes the dummies.
pub fn cluster_dummies(idx: &ClusterIndex) -> Matrix {
    let mut m = Matrix::zeros(idx.n_units(), idx.n_clusters());
    for (i, &g) in idx.group_of().iter().enumerate() {
        m[(i, g)] = 1.0;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_pairs() -> ClusterIndex {
        ClusterIndex::from_sizes(&[2, 2]).unwrap()
    }

    #[test]
    fn center_two_point_clusters() {
        let c = center_by_cluster(&[1.0, 3.0, 2.0, 6.0], &two_pairs()).unwrap();
        assert_eq!(c, [-1.0, 1.0, -2.0, 2.0]);
    }

    #[test]
    fn singleton_centers_to_zero() {
        let idx = ClusterIndex::from_sizes(&[1, 3]).unwrap();
        let c = center_by_cluster(&[7.25, 1.0, 2.0, 3.0], &idx).unwrap();
        assert_eq!(c[0], 0.0);
    }

    #[test]
    fn cluster_constant_input_centers_to_zero() {
        let c = center_by_cluster(&[4.0, 4.0, -1.5, -1.5], &two_pairs()).unwrap();
        assert!(c.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn means_of_pairs() {
        assert_eq!(cluster_means(&[1.0, 3.0, 2.0, 6.0], &two_pairs()).unwrap(), [2.0, 4.0]);
        assert_eq!(cluster_means(&[0.5; 4], &two_pairs()).unwrap(), [0.5, 0.5]);
    }

    #[test]
    fn labels_by_first_appearance() {
        let idx = ClusterIndex::from_labels(&["B", "A", "B", "A"]).unwrap();
        assert_eq!(idx.group_of(), &[0, 1, 0, 1]);
        assert_eq!(idx.labels(), &["B".to_string(), "A".to_string()]);
        assert_eq!(idx.members(0), &[0, 2]);
        assert_eq!(idx.sizes(), [2, 2]);
    }

    #[test]
    fn group_ids_are_densified() {
        let idx = ClusterIndex::from_group_ids(&[40, 7, 40, 9]).unwrap();
        assert_eq!(idx.group_of(), &[0, 1, 0, 2]);
        assert_eq!(idx.n_clusters(), 3);
    }

    #[test]
    fn wrong_length_is_rejected() {
        assert!(matches!(center_by_cluster(&[1.0], &two_pairs()), Err(Error::DimensionMismatch { .. })));
    }
}
