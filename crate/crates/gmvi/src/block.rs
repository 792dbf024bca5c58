//! Coordinate blocks and the diagonally scaled Euclidean geometry shared by
//! every solver in this crate.
//!
//! A [`BlockPartition`] splits the coordinates `0..d` into `m` contiguous,
//! ordered blocks. Vectors ([`BlockVector`]) and diagonal scalings
//! ([`DiagonalScaling`]) carry a handle to their partition so per-block views
//! are cheap index ranges into flat storage, never copies.

use std::ops::Range;
use std::sync::Arc;

/// An ordered, disjoint split of `0..d` into `m` contiguous blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockPartition {
    sizes: Vec<usize>,
    /// Prefix sums; `offsets[m] == d`.
    offsets: Vec<usize>,
}

impl BlockPartition {
    /// Builds a partition from block sizes. Panics if `sizes` is empty or
    /// any size is zero.
    pub fn new(sizes: Vec<usize>) -> Arc<Self> {
        assert!(!sizes.is_empty(), "partition needs at least one block");
        assert!(sizes.iter().all(|&s| s > 0), "every block must be nonempty");
        let mut offsets = Vec::with_capacity(sizes.len() + 1);
        let mut acc = 0usize;
        offsets.push(0);
        for &s in &sizes {
            acc += s;
            offsets.push(acc);
        }
        Arc::new(Self { sizes, offsets })
    }

    /// One block covering all of `0..d`.
    pub fn single(d: usize) -> Arc<Self> {
        Self::new(vec![d])
    }

    /// Splits `0..d` into `blocks` contiguous blocks whose sizes differ by at
    /// most one; the leading `d % blocks` blocks get the extra coordinate.
    pub fn near_equal(d: usize, blocks: usize) -> Arc<Self> {
        assert!(blocks >= 1 && blocks <= d, "need 1 <= blocks <= d");
        let q = d / blocks;
        let r = d % blocks;
        let sizes = (0..blocks).map(|i| if i < r { q + 1 } else { q }).collect();
        Self::new(sizes)
    }

    /// Concatenates two partitions (used for saddle problems: x-blocks then
    /// y-blocks over the stacked vector).
    pub fn concat(a: &Self, b: &Self) -> Arc<Self> {
        let mut sizes = a.sizes.clone();
        sizes.extend_from_slice(&b.sizes);
        Self::new(sizes)
    }

    pub fn num_blocks(&self) -> usize {
        self.sizes.len()
    }

    pub fn dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn size(&self, i: usize) -> usize {
        self.sizes[i]
    }

    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    /// Coordinate range of block `i`.
    pub fn range(&self, i: usize) -> Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }
}

/// A positive diagonal rescaling of the coordinates, sliced per block.
#[derive(Debug, Clone)]
pub struct DiagonalScaling {
    diag: Vec<f64>,
    partition: Arc<BlockPartition>,
}

impl DiagonalScaling {
    /// Panics unless every entry is strictly positive and finite and the
    /// length matches the partition dimension.
    pub fn new(diag: Vec<f64>, partition: &Arc<BlockPartition>) -> Self {
        assert_eq!(
            diag.len(),
            partition.dim(),
            "scaling/partition dimension mismatch"
        );
        assert!(
            diag.iter().all(|&x| x > 0.0 && x.is_finite()),
            "scaling entries must be strictly positive"
        );
        Self {
            diag,
            partition: Arc::clone(partition),
        }
    }

    pub fn identity(partition: &Arc<BlockPartition>) -> Self {
        Self {
            diag: vec![1.0; partition.dim()],
            partition: Arc::clone(partition),
        }
    }

    pub fn entries(&self) -> &[f64] {
        &self.diag
    }

    /// The diagonal of the block-`i` slice.
    pub fn block(&self, i: usize) -> &[f64] {
        &self.diag[self.partition.range(i)]
    }

    pub fn partition(&self) -> &Arc<BlockPartition> {
        &self.partition
    }
}

/// A length-`d` vector carrying its block partition.
#[derive(Debug, Clone)]
pub struct BlockVector {
    data: Vec<f64>,
    partition: Arc<BlockPartition>,
}

impl BlockVector {
    pub fn zeros(partition: &Arc<BlockPartition>) -> Self {
        Self {
            data: vec![0.0; partition.dim()],
            partition: Arc::clone(partition),
        }
    }

    /// Panics if `data.len() != partition.dim()`.
    pub fn from_vec(data: Vec<f64>, partition: &Arc<BlockPartition>) -> Self {
        assert_eq!(
            data.len(),
            partition.dim(),
            "vector/partition dimension mismatch"
        );
        Self {
            data,
            partition: Arc::clone(partition),
        }
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn partition(&self) -> &Arc<BlockPartition> {
        &self.partition
    }

    pub fn block(&self, i: usize) -> &[f64] {
        &self.data[self.partition.range(i)]
    }

    pub fn block_mut(&mut self, i: usize) -> &mut [f64] {
        let r = self.partition.range(i);
        &mut self.data[r]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn copy_from(&mut self, other: &BlockVector) {
        debug_assert_eq!(self.dim(), other.dim());
        self.data.copy_from_slice(&other.data);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// Neumaier compensated summation; keeps norms deterministic and accurate
/// independent of dimension.
pub(crate) fn compensated_sum(terms: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for t in terms {
        let s = sum + t;
        if sum.abs() >= t.abs() {
            comp += (sum - s) + t;
        } else {
            comp += (t - s) + sum;
        }
        sum = s;
    }
    sum + comp
}

fn check_dims(v: &BlockVector, s: &DiagonalScaling) {
    assert_eq!(
        v.dim(),
        s.entries().len(),
        "vector/scaling dimension mismatch"
    );
}

/// The scaled norm `sqrt(sum_j lambda_j v_j^2)`.
pub fn scaled_norm(v: &BlockVector, s: &DiagonalScaling) -> f64 {
    check_dims(v, s);
    scaled_norm_slice(v.as_slice(), s.entries())
}

/// Slice form of [`scaled_norm`], used for per-block norms.
pub fn scaled_norm_slice(v: &[f64], lambda: &[f64]) -> f64 {
    assert_eq!(v.len(), lambda.len(), "vector/scaling dimension mismatch");
    compensated_sum(v.iter().zip(lambda).map(|(x, l)| l * x * x))
        .max(0.0)
        .sqrt()
}

/// The inverse-scaled norm `sqrt(sum_j v_j^2 / lambda_j)`.
pub fn inverse_scaled_norm(v: &BlockVector, s: &DiagonalScaling) -> f64 {
    check_dims(v, s);
    compensated_sum(v.as_slice().iter().zip(s.entries()).map(|(x, l)| x * x / l))
        .max(0.0)
        .sqrt()
}

/// Plain inner product with compensated summation.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "inner product dimension mismatch");
    compensated_sum(a.iter().zip(b).map(|(x, y)| x * y))
}

/// Euclidean norm of a slice.
pub fn euclidean_norm(v: &[f64]) -> f64 {
    compensated_sum(v.iter().map(|x| x * x)).max(0.0).sqrt()
}

/// The partially updated point `(u_new^0, .., u_new^{b-1}, u_old^b, .., u_old^{m-1})`:
/// blocks before `b` come from `u_new`, the rest from `u_old`. With `b = 0`
/// this is `u_old` unchanged.
pub fn prefix_splice(u_new: &BlockVector, u_old: &BlockVector, b: usize) -> BlockVector {
    let mut out = u_old.clone();
    prefix_splice_into(u_new, u_old, b, &mut out);
    out
}

/// In-place form of [`prefix_splice`].
pub fn prefix_splice_into(
    u_new: &BlockVector,
    u_old: &BlockVector,
    b: usize,
    out: &mut BlockVector,
) {
    let p = u_new.partition();
    assert_eq!(
        p.as_ref(),
        u_old.partition().as_ref(),
        "splice arguments share a partition"
    );
    assert!(b < p.num_blocks(), "block index {b} out of range");
    let cut = p.offset(b);
    out.as_mut_slice()[..cut].copy_from_slice(&u_new.as_slice()[..cut]);
    out.as_mut_slice()[cut..].copy_from_slice(&u_old.as_slice()[cut..]);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partition_offsets() {
        let p = BlockPartition::new(vec![2, 3, 1]);
        assert_eq!(p.dim(), 6);
        assert_eq!(p.num_blocks(), 3);
        assert_eq!(p.range(1), 2..5);
        assert_eq!(p.offset(2), 5);
    }

    #[test]
    fn near_equal_split() {
        let p = BlockPartition::near_equal(123, 4);
        assert_eq!(p.sizes(), &[31, 31, 31, 30]);
        let q = BlockPartition::near_equal(8, 4);
        assert_eq!(q.sizes(), &[2, 2, 2, 2]);
    }

    #[test]
    #[should_panic(expected = "nonempty")]
    fn zero_block_rejected() {
        BlockPartition::new(vec![2, 0]);
    }

    #[test]
    fn scaled_norm_identity() {
        let p = BlockPartition::single(2);
        let v = BlockVector::from_vec(vec![3.0, 4.0], &p);
        let s = DiagonalScaling::identity(&p);
        assert_eq!(scaled_norm(&v, &s), 5.0);
        assert_eq!(inverse_scaled_norm(&v, &s), 5.0);
    }

    #[test]
    fn scaled_norm_diag() {
        let p = BlockPartition::single(2);
        let v = BlockVector::from_vec(vec![1.0, 2.0], &p);
        let s = DiagonalScaling::new(vec![4.0, 1.0], &p);
        // sqrt(4 + 4)
        assert!((scaled_norm(&v, &s) - 8.0f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn inverse_scaled_norm_diag() {
        let p = BlockPartition::single(2);
        let v = BlockVector::from_vec(vec![2.0, 0.0], &p);
        let s = DiagonalScaling::new(vec![4.0, 1.0], &p);
        assert_eq!(inverse_scaled_norm(&v, &s), 1.0);
    }

    #[test]
    fn zero_vector_norms() {
        let p = BlockPartition::new(vec![1, 2]);
        let v = BlockVector::zeros(&p);
        let s = DiagonalScaling::new(vec![2.0, 0.5, 7.0], &p);
        assert_eq!(scaled_norm(&v, &s), 0.0);
        assert_eq!(inverse_scaled_norm(&v, &s), 0.0);
    }

    #[test]
    fn splice_edges() {
        let p = BlockPartition::new(vec![1, 1]);
        let new = BlockVector::from_vec(vec![1.0, 2.0], &p);
        let old = BlockVector::from_vec(vec![9.0, 9.0], &p);
        // b = 0: empty prefix, old unchanged
        assert_eq!(prefix_splice(&new, &old, 0).as_slice(), &[9.0, 9.0]);
        // b = 1 (last block): first block new, last block old
        assert_eq!(prefix_splice(&new, &old, 1).as_slice(), &[1.0, 9.0]);
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn splice_index_out_of_range() {
        let p = BlockPartition::new(vec![1, 1]);
        let v = BlockVector::zeros(&p);
        prefix_splice(&v, &v, 2);
    }

    #[test]
    fn splice_idempotent() {
        let p = BlockPartition::new(vec![2, 1, 3]);
        let u = BlockVector::from_vec((0..6).map(|i| i as f64).collect(), &p);
        for b in 0..p.num_blocks() {
            assert_eq!(prefix_splice(&u, &u, b).as_slice(), u.as_slice());
        }
    }

    #[test]
    #[should_panic(expected = "dimension mismatch")]
    fn norm_dimension_mismatch() {
        let p2 = BlockPartition::single(2);
        let p3 = BlockPartition::single(3);
        let v = BlockVector::zeros(&p3);
        let s = DiagonalScaling::identity(&p2);
        scaled_norm(&v, &s);
    }
}
