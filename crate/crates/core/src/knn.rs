//! Exact k-nearest-neighbor distance queries and k-NN density evaluation
//! over d-dimensional point sets.
//!
//! Brute-force selection over Euclidean distances is the semantic
//! definition; [`KnnIndex`] is a kd-tree that returns bit-identical
//! distances and amortizes repeated queries against one reference set.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::collections::BinaryHeap;

/// Distance floor below which a neighbor distance is clamped before the
/// density formula divides by rho^d. Duplicate rows occur in real datasets,
/// so this is a flagged clamp rather than an error.
pub const RHO_FLOOR: f64 = 1e-12;

/// An ordered set of d-dimensional points from one distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    data: Vec<f64>,
    d: usize,
}

impl PointSet {
    /// Builds a point set from row vectors. All rows must share one
    /// dimension, hold only finite values, and there must be at least one.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::EmptyPointSet);
        }
        let d = rows[0].len();
        if d == 0 {
            return Err(Error::InvalidDimension(0));
        }
        let mut data = Vec::with_capacity(rows.len() * d);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != d {
                return Err(Error::ShapeMismatch {
                    expected: d,
                    got: row.len(),
                });
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteCoordinate { index: i });
            }
            data.extend_from_slice(row);
        }
        Ok(Self { data, d })
    }

    /// Builds a point set from a flat row-major buffer of length m * d.
    pub fn from_flat(data: Vec<f64>, d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidDimension(0));
        }
        if data.is_empty() || data.len() % d != 0 {
            return Err(Error::EmptyPointSet);
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteCoordinate { index: pos / d });
        }
        Ok(Self { data, d })
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.d
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.data[i * self.d..(i + 1) * self.d]
    }

    pub fn iter_points(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.d)
    }

    /// Copies the points at `indices` (in order) into a new set.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.d);
        for &i in indices {
            data.extend_from_slice(self.point(i));
        }
        Self { data, d: self.d }
    }

    /// Resamples `n` points with replacement.
    pub fn resample_with_replacement<R: rand::Rng>(&self, n: usize, rng: &mut R) -> Self {
        let m = self.len();
        let mut data = Vec::with_capacity(n * self.d);
        for _ in 0..n {
            let i = rng.random_range(0..m);
            data.extend_from_slice(self.point(i));
        }
        Self { data, d: self.d }
    }
}

/// Result of a k-th nearest neighbor query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnnQueryResult {
    /// Distance to the k-th nearest reference point.
    pub rho: f64,
    pub k: usize,
}

/// k-NN density value together with the degenerate-geometry flag raised
/// when the neighbor distance was clamped to [`RHO_FLOOR`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub value: f64,
    pub degenerate: bool,
}

/// Squared Euclidean distance, accumulated in coordinate order. Every
/// distance in this crate (index or brute force) goes through this one
/// function so alternate query paths agree bit for bit.
#[inline]
pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.len() {
        let t = a[i] - b[i];
        s += t * t;
    }
    s
}

/// Lebesgue volume of the d-dimensional Euclidean unit ball,
/// pi^(d/2) / Gamma(d/2 + 1).
pub fn unit_ball_volume(d: usize) -> Result<f64> {
    if d == 0 {
        return Err(Error::InvalidDimension(0));
    }
    let half_d = d as f64 / 2.0;
    let log_vol = half_d * std::f64::consts::PI.ln() - statrs::function::gamma::ln_gamma(half_d + 1.0);
    Ok(log_vol.exp())
}

fn validate_query(query: &[f64], reference: &PointSet, k: usize) -> Result<()> {
    if query.len() != reference.dim() {
        return Err(Error::ShapeMismatch {
            expected: reference.dim(),
            got: query.len(),
        });
    }
    if query.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFiniteCoordinate { index: 0 });
    }
    if k == 0 || k > reference.len() {
        return Err(Error::InsufficientNeighbors {
            k,
            m: reference.len(),
        });
    }
    Ok(())
}

/// Distance from `query` to its k-th nearest point of `reference` (the k-th
/// order statistic of the distance multiset). The query is not required to
/// be a member of the reference set and no self-exclusion is performed.
pub fn knn_distance(query: &[f64], reference: &PointSet, k: usize) -> Result<KnnQueryResult> {
    validate_query(query, reference, k)?;
    let mut sq: Vec<f64> = reference.iter_points().map(|p| sq_dist(query, p)).collect();
    let (_, kth, _) = sq.select_nth_unstable_by(k - 1, |a, b| a.partial_cmp(b).unwrap());
    Ok(KnnQueryResult {
        rho: kth.sqrt(),
        k,
    })
}

/// k-NN density estimate k / (m * c * rho^d), where c is the unit-ball
/// volume. Distances below [`RHO_FLOOR`] are clamped and flagged.
pub fn knn_density(query: &[f64], reference: &PointSet, k: usize) -> Result<DensityEstimate> {
    let rho = knn_distance(query, reference, k)?.rho;
    let c = unit_ball_volume(reference.dim())?;
    Ok(density_from_rho(rho, k, reference.len(), reference.dim(), c))
}

#[inline]
pub(crate) fn density_from_rho(
    rho: f64,
    k: usize,
    m: usize,
    d: usize,
    ball_volume: f64,
) -> DensityEstimate {
    let degenerate = rho < RHO_FLOOR;
    let rho = if degenerate { RHO_FLOOR } else { rho };
    DensityEstimate {
        value: k as f64 / (m as f64 * ball_volume * rho.powi(d as i32)),
        degenerate,
    }
}

#[derive(Debug, Clone)]
enum Node {
    Leaf {
        start: usize,
        end: usize,
    },
    Branch {
        axis: usize,
        split: f64,
        left: usize,
        right: usize,
    },
}

const LEAF_SIZE: usize = 16;

/// kd-tree over one reference set for repeated exact k-NN queries.
/// Returns distances bit-identical to the brute-force definition.
#[derive(Debug, Clone)]
pub struct KnnIndex {
    d: usize,
    coords: Vec<f64>,
    nodes: Vec<Node>,
    root: usize,
    m: usize,
}

struct HeapDist(f64);

impl PartialEq for HeapDist {
    fn eq(&self, other: &Self) -> bool {
        self.0 == other.0
    }
}
impl Eq for HeapDist {}
impl PartialOrd for HeapDist {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapDist {
    fn cmp(&self, other: &Self) -> Ordering {
        // coordinates are finite by PointSet invariant
        self.0.partial_cmp(&other.0).unwrap()
    }
}

impl KnnIndex {
    pub fn build(reference: &PointSet) -> Self {
        let d = reference.dim();
        let m = reference.len();
        let mut order: Vec<usize> = (0..m).collect();
        let mut nodes = Vec::new();
        let root = Self::build_node(reference, &mut order, 0, m, &mut nodes);
        // permute coordinates into leaf order for contiguous scans
        let mut coords = Vec::with_capacity(m * d);
        for &i in &order {
            coords.extend_from_slice(reference.point(i));
        }
        Self {
            d,
            coords,
            nodes,
            root,
            m,
        }
    }

    fn build_node(
        ps: &PointSet,
        order: &mut [usize],
        offset: usize,
        len: usize,
        nodes: &mut Vec<Node>,
    ) -> usize {
        let slice = &mut order[offset..offset + len];
        if len <= LEAF_SIZE {
            nodes.push(Node::Leaf {
                start: offset,
                end: offset + len,
            });
            return nodes.len() - 1;
        }
        // split on the axis with the widest spread
        let d = ps.dim();
        let mut axis = 0;
        let mut best_spread = -1.0;
        for a in 0..d {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for &i in slice.iter() {
                let v = ps.point(i)[a];
                lo = lo.min(v);
                hi = hi.max(v);
            }
            if hi - lo > best_spread {
                best_spread = hi - lo;
                axis = a;
            }
        }
        if best_spread <= 0.0 {
            // all points identical in every coordinate
            nodes.push(Node::Leaf {
                start: offset,
                end: offset + len,
            });
            return nodes.len() - 1;
        }
        let mid = len / 2;
        slice.select_nth_unstable_by(mid, |&a, &b| {
            ps.point(a)[axis].partial_cmp(&ps.point(b)[axis]).unwrap()
        });
        let split = ps.point(slice[mid])[axis];
        let left = Self::build_node(ps, order, offset, mid, nodes);
        let right = Self::build_node(ps, order, offset + mid, len - mid, nodes);
        nodes.push(Node::Branch {
            axis,
            split,
            left,
            right,
        });
        nodes.len() - 1
    }

    pub fn len(&self) -> usize {
        self.m
    }

    pub fn is_empty(&self) -> bool {
        self.m == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    fn point(&self, slot: usize) -> &[f64] {
        &self.coords[slot * self.d..(slot + 1) * self.d]
    }

    fn search(&self, node: usize, query: &[f64], k: usize, heap: &mut BinaryHeap<HeapDist>) {
        match self.nodes[node] {
            Node::Leaf { start, end } => {
                for slot in start..end {
                    let sq = sq_dist(query, self.point(slot));
                    if heap.len() < k {
                        heap.push(HeapDist(sq));
                    } else if sq < heap.peek().unwrap().0 {
                        heap.pop();
                        heap.push(HeapDist(sq));
                    }
                }
            }
            Node::Branch {
                axis,
                split,
                left,
                right,
            } => {
                let diff = query[axis] - split;
                let (near, far) = if diff <= 0.0 { (left, right) } else { (right, left) };
                self.search(near, query, k, heap);
                if heap.len() < k || diff * diff < heap.peek().unwrap().0 {
                    self.search(far, query, k, heap);
                }
            }
        }
    }

    /// Distances to the k nearest reference points, sorted ascending.
    pub fn k_nearest_sorted(&self, query: &[f64], k: usize) -> Result<Vec<f64>> {
        if query.len() != self.d {
            return Err(Error::ShapeMismatch {
                expected: self.d,
                got: query.len(),
            });
        }
        if k == 0 || k > self.m {
            return Err(Error::InsufficientNeighbors { k, m: self.m });
        }
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.search(self.root, query, k, &mut heap);
        let mut sq: Vec<f64> = heap.into_iter().map(|h| h.0).collect();
        sq.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(sq.into_iter().map(f64::sqrt).collect())
    }

    /// Distance to the k-th nearest reference point.
    pub fn kth_distance(&self, query: &[f64], k: usize) -> Result<f64> {
        Ok(*self
            .k_nearest_sorted(query, k)?
            .last()
            .expect("k >= 1 checked"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ps1(xs: &[f64]) -> PointSet {
        PointSet::from_rows(&xs.iter().map(|&x| vec![x]).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn ball_volume_low_dims() {
        assert!((unit_ball_volume(1).unwrap() - 2.0).abs() < 1e-12);
        assert!((unit_ball_volume(2).unwrap() - std::f64::consts::PI).abs() / std::f64::consts::PI < 1e-12);
        let v3 = 4.0 * std::f64::consts::PI / 3.0;
        assert!((unit_ball_volume(3).unwrap() - v3).abs() / v3 < 1e-12);
        let v4 = std::f64::consts::PI * std::f64::consts::PI / 2.0;
        assert!((unit_ball_volume(4).unwrap() - v4).abs() / v4 < 1e-12);
        let v5 = 8.0 * std::f64::consts::PI * std::f64::consts::PI / 15.0;
        assert!((unit_ball_volume(5).unwrap() - v5).abs() / v5 < 1e-12);
    }

    #[test]
    fn ball_volume_zero_dim_rejected() {
        assert!(matches!(
            unit_ball_volume(0),
            Err(Error::InvalidDimension(0))
        ));
    }

    #[test]
    fn knn_distance_sorted_example() {
        let reference = ps1(&[1.0, 3.0, 7.0]);
        let r = knn_distance(&[0.0], &reference, 2).unwrap();
        assert_eq!(r.rho, 3.0);
        assert_eq!(knn_distance(&[0.0], &reference, 1).unwrap().rho, 1.0);
        assert_eq!(knn_distance(&[0.0], &reference, 3).unwrap().rho, 7.0);
    }

    #[test]
    fn knn_distance_coincident_point() {
        let reference = PointSet::from_rows(&[vec![0.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let r = knn_distance(&[0.0, 0.0], &reference, 1).unwrap();
        assert_eq!(r.rho, 0.0);
    }

    #[test]
    fn knn_distance_error_paths() {
        let reference = ps1(&[1.0, 2.0]);
        assert!(matches!(
            knn_distance(&[0.0], &reference, 3),
            Err(Error::InsufficientNeighbors { k: 3, m: 2 })
        ));
        assert!(matches!(
            knn_distance(&[0.0, 0.0], &reference, 1),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn density_hand_example() {
        // distances {1.5, 0.5, 0.5, 1.5}, rho(k=2) = 0.5, c = 2
        let reference = ps1(&[0.0, 1.0, 2.0, 3.0]);
        let dens = knn_density(&[1.5], &reference, 2).unwrap();
        assert!((dens.value - 0.5).abs() < 1e-15);
        assert!(!dens.degenerate);
    }

    #[test]
    fn density_clamps_duplicates() {
        let reference = ps1(&[0.5, 0.5, 0.5, 2.0]);
        let dens = knn_density(&[0.5], &reference, 3).unwrap();
        assert!(dens.degenerate);
        assert!(dens.value.is_finite());
        assert!(dens.value > 0.0);
    }

    #[test]
    fn index_matches_brute_on_line() {
        let reference = ps1(&[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let idx = KnnIndex::build(&reference);
        for k in 1..=7 {
            let brute = knn_distance(&[2.4], &reference, k).unwrap().rho;
            assert_eq!(idx.kth_distance(&[2.4], k).unwrap(), brute);
        }
    }

    #[test]
    fn index_handles_all_identical_points() {
        let reference = PointSet::from_rows(&vec![vec![1.0, 1.0]; 40]).unwrap();
        let idx = KnnIndex::build(&reference);
        assert_eq!(idx.kth_distance(&[1.0, 1.0], 40).unwrap(), 0.0);
        assert_eq!(idx.kth_distance(&[2.0, 1.0], 1).unwrap(), 1.0);
    }

    #[test]
    fn rho_monotone_in_k() {
        let reference = ps1(&[0.3, 1.0, -2.0, 5.0, 0.9]);
        let mut prev = 0.0;
        for k in 1..=5 {
            let rho = knn_distance(&[0.0], &reference, k).unwrap().rho;
            assert!(rho >= prev);
            prev = rho;
        }
    }

    #[test]
    fn pointset_validation() {
        assert!(matches!(
            PointSet::from_rows(&[]),
            Err(Error::EmptyPointSet)
        ));
        assert!(matches!(
            PointSet::from_rows(&[vec![1.0], vec![1.0, 2.0]]),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(matches!(
            PointSet::from_rows(&[vec![f64::NAN]]),
            Err(Error::NonFiniteCoordinate { index: 0 })
        ));
    }
}
