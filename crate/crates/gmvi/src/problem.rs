//! The GMVI problem abstraction: a monotone operator `F` paired with a
//! block-separable convex regularizer `g`, exposed through full/per-block
//! operator evaluation and per-block proximal maps.
//!
//! Three concrete families live here: dense linear operators (bilinear
//! saddles and strongly monotone quadratic VIs) and the sparse saddle-point
//! SVM. All instances are immutable after construction and safe to share
//! across threads.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::block::{dot, BlockPartition, BlockVector, DiagonalScaling};
use crate::error::{Error, Result};

/// Per-block regularizer `g^i`, restricted to the prox-friendly forms the
/// solvers need. All variants are coordinate-separable within the block.
#[derive(Debug, Clone, PartialEq)]
pub enum BlockFn {
    /// `g^i = 0`; the prox reduces to a scaled gradient step.
    Zero,
    /// `l1*|w|_1 + (l2/2)*|w|_2^2` in plain (unscaled) coordinates.
    ElasticNet { l1: f64, l2: f64 },
    /// `l1*|w|_1 + (mu/2)*|w|_{Lambda_i}^2`; strongly convex with modulus
    /// exactly `mu` in the block's scaled norm.
    ScaledQuadratic { l1: f64, mu: f64 },
    /// Indicator of the box `[lo, hi]` applied coordinate-wise.
    Box { lo: f64, hi: f64 },
}

impl BlockFn {
    /// `g^i(w)`; `+inf` outside the domain.
    pub fn value(&self, w: &[f64], lambda: &[f64]) -> f64 {
        match *self {
            BlockFn::Zero => 0.0,
            BlockFn::ElasticNet { l1, l2 } => {
                let a: f64 = w.iter().map(|x| x.abs()).sum();
                let q: f64 = w.iter().map(|x| x * x).sum();
                l1 * a + 0.5 * l2 * q
            }
            BlockFn::ScaledQuadratic { l1, mu } => {
                let a: f64 = w.iter().map(|x| x.abs()).sum();
                let q: f64 = w.iter().zip(lambda).map(|(x, l)| l * x * x).sum();
                l1 * a + 0.5 * mu * q
            }
            BlockFn::Box { lo, hi } => {
                if w.iter().all(|&x| x >= lo && x <= hi) {
                    0.0
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// `argmin_w { a<linear, w> + a g^i(w) + 1/2 |w - v|_{Lambda_i}^2 }`,
    /// computed coordinate-wise through `z_j = v_j - a*linear_j/lambda_j`.
    pub fn prox(&self, v: &[f64], linear: &[f64], a: f64, lambda: &[f64], out: &mut [f64]) {
        assert!(a > 0.0, "prox step size must be positive, got {a}");
        assert!(v.len() == linear.len() && v.len() == lambda.len() && v.len() == out.len());
        match *self {
            BlockFn::Zero => {
                for j in 0..v.len() {
                    out[j] = v[j] - a * linear[j] / lambda[j];
                }
            }
            BlockFn::ElasticNet { l1, l2 } => {
                for j in 0..v.len() {
                    let z = v[j] - a * linear[j] / lambda[j];
                    out[j] = soft_threshold(z, a * l1 / lambda[j]) / (1.0 + a * l2 / lambda[j]);
                }
            }
            BlockFn::ScaledQuadratic { l1, mu } => {
                for j in 0..v.len() {
                    let z = v[j] - a * linear[j] / lambda[j];
                    out[j] = soft_threshold(z, a * l1 / lambda[j]) / (1.0 + a * mu);
                }
            }
            BlockFn::Box { lo, hi } => {
                for j in 0..v.len() {
                    let z = v[j] - a * linear[j] / lambda[j];
                    out[j] = z.clamp(lo, hi);
                }
            }
        }
    }
}

fn soft_threshold(z: f64, t: f64) -> f64 {
    if z > t {
        z - t
    } else if z < -t {
        z + t
    } else {
        0.0
    }
}

/// The problem interface every solver consumes: operator evaluation, block
/// proximal maps, the block geometry, and enough metadata for diagnostics.
pub trait GmviProblem: Sync {
    fn partition(&self) -> &Arc<BlockPartition>;

    fn scaling(&self) -> &DiagonalScaling;

    /// The regularizer attached to block `i`.
    fn block_fn(&self, i: usize) -> &BlockFn;

    /// Writes `F^i(u)` (the block-`i` subvector of `F(u)`) into `out`.
    fn eval_block_into(&self, u: &BlockVector, i: usize, out: &mut [f64]);

    /// Strong convexity modulus of `g` in the scaled norm; 0 when merely convex.
    fn mu(&self) -> f64 {
        0.0
    }

    /// Known global Lipschitz constant, when the instance ships one.
    fn known_lipschitz(&self) -> Option<f64> {
        None
    }

    /// Dense matrix of the linear part of `F`, when the operator is affine
    /// and small enough to materialize. Used by Lipschitz diagnostics only.
    fn dense_operator(&self) -> Option<DenseMatrix> {
        None
    }

    /// Cost of one full operator evaluation in integer work units. Block
    /// costs must sum to this exactly so pass accounting stays exact.
    fn eval_cost_units(&self) -> u64 {
        self.partition().dim() as u64
    }

    fn block_cost_units(&self, i: usize) -> u64 {
        self.partition().size(i) as u64
    }

    /// `F(u)`, assembled block by block so it agrees with `eval_block_into`
    /// bit for bit.
    fn eval_full_into(&self, u: &BlockVector, out: &mut BlockVector) {
        let m = self.partition().num_blocks();
        for i in 0..m {
            let r = self.partition().range(i);
            // split borrow: the output block never aliases the input
            let mut buf = vec![0.0; r.len()];
            self.eval_block_into(u, i, &mut buf);
            out.block_mut(i).copy_from_slice(&buf);
        }
    }

    /// `g(u) = sum_i g^i(u^i)`; `+inf` outside the domain.
    fn g_value(&self, u: &BlockVector) -> f64 {
        let m = self.partition().num_blocks();
        let mut total = 0.0;
        for i in 0..m {
            total += self.block_fn(i).value(u.block(i), self.scaling().block(i));
            if total.is_infinite() {
                return f64::INFINITY;
            }
        }
        total
    }

    /// Block proximal step `argmin_w { a<linear, w> + a g^i(w) + 1/2 |w - v|^2_{Lambda_i} }`.
    fn prox_block_into(&self, i: usize, v: &[f64], linear: &[f64], a: f64, out: &mut [f64]) {
        self.block_fn(i)
            .prox(v, linear, a, self.scaling().block(i), out);
    }
}

/// Allocating convenience around [`GmviProblem::eval_full_into`]; rejects
/// non-finite input.
pub fn eval_full<P: GmviProblem + ?Sized>(problem: &P, u: &BlockVector) -> Result<BlockVector> {
    if !u.is_finite() {
        return Err(Error::Numeric(
            "operator evaluated at a non-finite point".into(),
        ));
    }
    let mut out = BlockVector::zeros(problem.partition());
    problem.eval_full_into(u, &mut out);
    Ok(out)
}

/// Allocating convenience around [`GmviProblem::prox_block_into`].
pub fn prox_block<P: GmviProblem + ?Sized>(
    problem: &P,
    i: usize,
    v: &[f64],
    linear: &[f64],
    a: f64,
) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    problem.prox_block_into(i, v, linear, a, &mut out);
    out
}

// ---------------------------------------------------------------------------
// Dense matrices (small instances and diagnostics)
// ---------------------------------------------------------------------------

/// Row-major dense matrix; only what the linear instances and the Lipschitz
/// diagnostics need.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |x| x.len());
        assert!(rows.iter().all(|x| x.len() == c), "ragged rows");
        Self {
            rows: r,
            cols: c,
            data: rows.into_iter().flatten().collect(),
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn scale(&mut self, c: f64) {
        for x in &mut self.data {
            *x *= c;
        }
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn matvec_into(&self, x: &[f64], out: &mut [f64]) {
        assert_eq!(x.len(), self.cols);
        assert_eq!(out.len(), self.rows);
        for i in 0..self.rows {
            out[i] = plain_dot(self.row(i), x);
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.matvec_into(x, &mut out);
        out
    }
}

#[inline]
fn plain_dot(a: &[f64], b: &[f64]) -> f64 {
    let mut s = 0.0;
    for (x, y) in a.iter().zip(b) {
        s += x * y;
    }
    s
}

/// Spectral norm via power iteration on `B^T B`, to relative tolerance `tol`.
pub fn spectral_norm(b: &DenseMatrix, tol: f64) -> f64 {
    let n = b.cols();
    if n == 0 || b.rows() == 0 {
        return 0.0;
    }
    // deterministic, non-degenerate start
    let mut v: Vec<f64> = (0..n).map(|j| 1.0 + 0.01 * (j as f64 + 1.0)).collect();
    normalize(&mut v);
    let mut sigma = 0.0f64;
    let mut bv = vec![0.0; b.rows()];
    let mut btbv = vec![0.0; n];
    let bt = b.transpose();
    for _ in 0..20_000 {
        b.matvec_into(&v, &mut bv);
        bt.matvec_into(&bv, &mut btbv);
        let lam = norm2(&btbv);
        if lam == 0.0 {
            return 0.0;
        }
        let next = lam.sqrt();
        v.copy_from_slice(&btbv);
        normalize(&mut v);
        if (next - sigma).abs() <= tol * next.max(1e-300) {
            return next;
        }
        sigma = next;
    }
    sigma
}

fn norm2(v: &[f64]) -> f64 {
    plain_dot(v, v).max(0.0).sqrt()
}

fn normalize(v: &mut [f64]) {
    let n = norm2(v);
    if n > 0.0 {
        for x in v.iter_mut() {
            *x /= n;
        }
    }
}

// ---------------------------------------------------------------------------
// Dense linear instances
// ---------------------------------------------------------------------------

/// A GMVI with affine operator `F(u) = A u + q` and per-block prox-friendly
/// regularizers. Covers both test families: bilinear saddles (skew `A`) and
/// quadratic VIs (`A = S + W` with `S` PSD).
#[derive(Debug, Clone)]
pub struct LinearVi {
    a: DenseMatrix,
    q: Vec<f64>,
    partition: Arc<BlockPartition>,
    scaling: DiagonalScaling,
    block_fns: Vec<BlockFn>,
    mu: f64,
    known_lipschitz: Option<f64>,
}

impl LinearVi {
    pub fn new(
        a: DenseMatrix,
        q: Vec<f64>,
        partition: Arc<BlockPartition>,
        scaling: DiagonalScaling,
        block_fns: Vec<BlockFn>,
        mu: f64,
    ) -> Self {
        let d = partition.dim();
        assert_eq!(a.rows(), d);
        assert_eq!(a.cols(), d);
        assert_eq!(q.len(), d);
        assert_eq!(block_fns.len(), partition.num_blocks());
        Self {
            a,
            q,
            partition,
            scaling,
            block_fns,
            mu,
            known_lipschitz: None,
        }
    }

    pub fn with_known_lipschitz(mut self, l: f64) -> Self {
        self.known_lipschitz = Some(l);
        self
    }

    pub fn operator_matrix(&self) -> &DenseMatrix {
        &self.a
    }
}

impl GmviProblem for LinearVi {
    fn partition(&self) -> &Arc<BlockPartition> {
        &self.partition
    }

    fn scaling(&self) -> &DiagonalScaling {
        &self.scaling
    }

    fn block_fn(&self, i: usize) -> &BlockFn {
        &self.block_fns[i]
    }

    fn eval_block_into(&self, u: &BlockVector, i: usize, out: &mut [f64]) {
        let r = self.partition.range(i);
        for (o, row) in r.clone().enumerate() {
            out[o] = plain_dot(self.a.row(row), u.as_slice()) + self.q[row];
        }
    }

    fn mu(&self) -> f64 {
        self.mu
    }

    fn known_lipschitz(&self) -> Option<f64> {
        self.known_lipschitz
    }

    fn dense_operator(&self) -> Option<DenseMatrix> {
        Some(self.a.clone())
    }
}

/// Builds the canonical monotone saddle instance: `F(x, y) = (M y, -M^T x)`,
/// monotone by skew-symmetry of the stacked operator.
pub fn bilinear_saddle(
    m: &DenseMatrix,
    reg: BlockFn,
    x_blocks: usize,
    y_blocks: usize,
) -> LinearVi {
    let (dx, dy) = (m.rows(), m.cols());
    let px = BlockPartition::near_equal(dx, x_blocks);
    let py = BlockPartition::near_equal(dy, y_blocks);
    let partition = BlockPartition::concat(&px, &py);
    let d = dx + dy;
    let mut a = DenseMatrix::zeros(d, d);
    for i in 0..dx {
        for j in 0..dy {
            a.set(i, dx + j, m.get(i, j));
            a.set(dx + j, i, -m.get(i, j));
        }
    }
    let fns = vec![reg; partition.num_blocks()];
    let scaling = DiagonalScaling::identity(&partition);
    LinearVi::new(a, vec![0.0; d], partition, scaling, fns, 0.0)
}

/// Builds a quadratic VI: `F(u) = (S + W) u + q` with `S` PSD and `W` skew,
/// `g = (mu/2)|.|_Lambda^2 + l1 |.|_1`. With `mu > 0` the instance is
/// strongly monotone in the composite sense.
pub fn quadratic_vi(
    s: &DenseMatrix,
    w: &DenseMatrix,
    q: Vec<f64>,
    mu: f64,
    l1: f64,
    blocks: usize,
) -> LinearVi {
    let d = s.rows();
    assert_eq!(s.cols(), d);
    assert_eq!(w.rows(), d);
    assert_eq!(w.cols(), d);
    let mut a = DenseMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            a.set(i, j, s.get(i, j) + w.get(i, j));
        }
    }
    let partition = BlockPartition::near_equal(d, blocks);
    let fns = vec![BlockFn::ScaledQuadratic { l1, mu }; partition.num_blocks()];
    let scaling = DiagonalScaling::identity(&partition);
    LinearVi::new(a, q, partition, scaling, fns, mu)
}

/// Random dense coupling matrix with entries in `[-1, 1]`, optionally
/// rescaled to unit spectral norm.
pub fn random_coupling(dx: usize, dy: usize, unit_spectral: bool, seed: u64) -> DenseMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = DenseMatrix::zeros(dx, dy);
    for i in 0..dx {
        for j in 0..dy {
            m.set(i, j, rng.gen_range(-1.0..1.0));
        }
    }
    if unit_spectral {
        let s = spectral_norm(&m, 1e-10);
        if s > 0.0 {
            m.scale(1.0 / s);
        }
    }
    m
}

/// Random PSD + skew quadratic instance. `sigma` is a guaranteed lower bound
/// on the symmetric part's smallest eigenvalue.
pub fn random_quadratic(
    d: usize,
    blocks: usize,
    sigma: f64,
    mu: f64,
    l1: f64,
    seed: u64,
) -> LinearVi {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut g = DenseMatrix::zeros(d, d);
    let mut b = DenseMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            g.set(i, j, rng.gen_range(-1.0..1.0));
            b.set(i, j, rng.gen_range(-1.0..1.0));
        }
    }
    // S = G^T G / d + sigma I  (PSD, min eigenvalue >= sigma)
    let gt = g.transpose();
    let mut s = DenseMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            s.set(
                i,
                j,
                plain_dot(gt.row(i), &(0..d).map(|k| g.get(k, j)).collect::<Vec<_>>()) / d as f64,
            );
        }
        s.set(i, i, s.get(i, i) + sigma);
    }
    // W = (B - B^T)/2, skew
    let mut w = DenseMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            w.set(i, j, 0.5 * (b.get(i, j) - b.get(j, i)));
        }
    }
    let q: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    quadratic_vi(&s, &w, q, mu, l1, blocks)
}

// ---------------------------------------------------------------------------
// Saddle-point SVM
// ---------------------------------------------------------------------------

/// CSR/CSC views of the signed data matrix `Abar` (features x samples).
#[derive(Debug, Clone)]
pub struct SparsePair {
    pub d: usize,
    pub n: usize,
    /// row-major: per-feature sample lists
    pub csr_indptr: Vec<usize>,
    pub csr_cols: Vec<u32>,
    pub csr_vals: Vec<f64>,
    /// column-major: per-sample feature lists
    pub csc_indptr: Vec<usize>,
    pub csc_rows: Vec<u32>,
    pub csc_vals: Vec<f64>,
}

impl SparsePair {
    /// Builds both layouts from per-column entries (`cols[i]` holds the
    /// sorted `(row, value)` list of column `i`).
    pub fn from_columns(d: usize, cols: &[Vec<(u32, f64)>]) -> Self {
        let n = cols.len();
        let nnz: usize = cols.iter().map(|c| c.len()).sum();
        let mut csc_indptr = Vec::with_capacity(n + 1);
        let mut csc_rows = Vec::with_capacity(nnz);
        let mut csc_vals = Vec::with_capacity(nnz);
        csc_indptr.push(0);
        for col in cols {
            debug_assert!(
                col.windows(2).all(|w| w[0].0 < w[1].0),
                "column rows must be sorted"
            );
            for &(r, v) in col {
                assert!((r as usize) < d, "row index out of range");
                csc_rows.push(r);
                csc_vals.push(v);
            }
            csc_indptr.push(csc_rows.len());
        }
        // transpose to CSR with a counting pass
        let mut counts = vec![0usize; d];
        for &r in &csc_rows {
            counts[r as usize] += 1;
        }
        let mut csr_indptr = vec![0usize; d + 1];
        for j in 0..d {
            csr_indptr[j + 1] = csr_indptr[j] + counts[j];
        }
        let mut csr_cols = vec![0u32; nnz];
        let mut csr_vals = vec![0.0f64; nnz];
        let mut cursor = csr_indptr.clone();
        for i in 0..n {
            for k in csc_indptr[i]..csc_indptr[i + 1] {
                let r = csc_rows[k] as usize;
                let slot = cursor[r];
                csr_cols[slot] = i as u32;
                csr_vals[slot] = csc_vals[k];
                cursor[r] += 1;
            }
        }
        Self {
            d,
            n,
            csr_indptr,
            csr_cols,
            csr_vals,
            csc_indptr,
            csc_rows,
            csc_vals,
        }
    }

    pub fn nnz(&self) -> usize {
        self.csr_vals.len()
    }

    /// The l2 norm of feature row `j`.
    pub fn row_norm(&self, j: usize) -> f64 {
        self.csr_vals[self.csr_indptr[j]..self.csr_indptr[j + 1]]
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// The l2 norm of sample column `i`.
    pub fn col_norm(&self, i: usize) -> f64 {
        self.csc_vals[self.csc_indptr[i]..self.csc_indptr[i + 1]]
            .iter()
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// The elastic-net saddle-point SVM:
/// `F(x, y) = (1/n) (Abar y, 1 - Abar^T x)`,
/// `g(x, y) = l1 |x|_1 + (l2/2) |x|_2^2 + sum_j indicator_{[-1,0]}(y_j)`.
#[derive(Debug, Clone)]
pub struct SvmSaddle {
    abar: SparsePair,
    l1: f64,
    l2: f64,
    partition: Arc<BlockPartition>,
    x_blocks: usize,
    scaling: DiagonalScaling,
    block_fns: Vec<BlockFn>,
}

impl SvmSaddle {
    pub fn new(
        abar: SparsePair,
        l1: f64,
        l2: f64,
        x_blocks: usize,
        y_blocks: usize,
        scaling_diag: Option<Vec<f64>>,
    ) -> Self {
        let (d, n) = (abar.d, abar.n);
        let px = BlockPartition::near_equal(d, x_blocks);
        let py = BlockPartition::near_equal(n, y_blocks);
        let partition = BlockPartition::concat(&px, &py);
        let scaling = match scaling_diag {
            Some(diag) => DiagonalScaling::new(diag, &partition),
            None => DiagonalScaling::identity(&partition),
        };
        let mut block_fns = vec![BlockFn::ElasticNet { l1, l2 }; x_blocks];
        block_fns.extend(vec![BlockFn::Box { lo: -1.0, hi: 0.0 }; y_blocks]);
        Self {
            abar,
            l1,
            l2,
            partition,
            x_blocks,
            scaling,
            block_fns,
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.abar.d, self.abar.n)
    }

    pub fn regularizers(&self) -> (f64, f64) {
        (self.l1, self.l2)
    }

    pub fn matrix(&self) -> &SparsePair {
        &self.abar
    }

    fn is_x_block(&self, i: usize) -> bool {
        i < self.x_blocks
    }
}

impl GmviProblem for SvmSaddle {
    fn partition(&self) -> &Arc<BlockPartition> {
        &self.partition
    }

    fn scaling(&self) -> &DiagonalScaling {
        &self.scaling
    }

    fn block_fn(&self, i: usize) -> &BlockFn {
        &self.block_fns[i]
    }

    fn eval_block_into(&self, u: &BlockVector, i: usize, out: &mut [f64]) {
        let d = self.abar.d;
        let inv_n = 1.0 / self.abar.n as f64;
        let r = self.partition.range(i);
        let uu = u.as_slice();
        if self.is_x_block(i) {
            // rows j of (1/n) Abar y; y lives at coordinates d..d+n
            for (o, j) in r.clone().enumerate() {
                let mut s = 0.0;
                for k in self.abar.csr_indptr[j]..self.abar.csr_indptr[j + 1] {
                    s += self.abar.csr_vals[k] * uu[d + self.abar.csr_cols[k] as usize];
                }
                out[o] = s * inv_n;
            }
        } else {
            // entries i of (1/n)(1 - Abar^T x)
            for (o, row) in r.clone().enumerate() {
                let sample = row - d;
                let mut s = 0.0;
                for k in self.abar.csc_indptr[sample]..self.abar.csc_indptr[sample + 1] {
                    s += self.abar.csc_vals[k] * uu[self.abar.csc_rows[k] as usize];
                }
                out[o] = (1.0 - s) * inv_n;
            }
        }
    }

    fn eval_cost_units(&self) -> u64 {
        (2 * self.abar.nnz() + self.abar.d + self.abar.n).max(1) as u64
    }

    fn block_cost_units(&self, i: usize) -> u64 {
        let r = self.partition.range(i);
        let nnz = if self.is_x_block(i) {
            self.abar.csr_indptr[r.end] - self.abar.csr_indptr[r.start]
        } else {
            let d = self.abar.d;
            self.abar.csc_indptr[r.end - d] - self.abar.csc_indptr[r.start - d]
        };
        (nnz + r.len()) as u64
    }

    fn dense_operator(&self) -> Option<DenseMatrix> {
        let (d, n) = (self.abar.d, self.abar.n);
        let inv_n = 1.0 / n as f64;
        let mut a = DenseMatrix::zeros(d + n, d + n);
        for i in 0..n {
            for k in self.abar.csc_indptr[i]..self.abar.csc_indptr[i + 1] {
                let j = self.abar.csc_rows[k] as usize;
                let v = self.abar.csc_vals[k] * inv_n;
                a.set(j, d + i, v);
                a.set(d + i, j, -v);
            }
        }
        Some(a)
    }
}

// ---------------------------------------------------------------------------
// Instrumentation and checks
// ---------------------------------------------------------------------------

/// Wraps a problem and counts operator work in the problem's own integer
/// units; `passes()` converts to full-evaluation equivalents.
pub struct CountingProblem<'a, P: GmviProblem + ?Sized> {
    inner: &'a P,
    units: AtomicU64,
}

impl<'a, P: GmviProblem + ?Sized> CountingProblem<'a, P> {
    pub fn new(inner: &'a P) -> Self {
        Self {
            inner,
            units: AtomicU64::new(0),
        }
    }

    pub fn units(&self) -> u64 {
        self.units.load(Ordering::Relaxed)
    }

    pub fn passes(&self) -> f64 {
        self.units() as f64 / self.inner.eval_cost_units() as f64
    }

    pub fn reset(&self) {
        self.units.store(0, Ordering::Relaxed);
    }
}

impl<'a, P: GmviProblem + ?Sized> GmviProblem for CountingProblem<'a, P> {
    fn partition(&self) -> &Arc<BlockPartition> {
        self.inner.partition()
    }

    fn scaling(&self) -> &DiagonalScaling {
        self.inner.scaling()
    }

    fn block_fn(&self, i: usize) -> &BlockFn {
        self.inner.block_fn(i)
    }

    fn eval_block_into(&self, u: &BlockVector, i: usize, out: &mut [f64]) {
        self.units
            .fetch_add(self.inner.block_cost_units(i), Ordering::Relaxed);
        self.inner.eval_block_into(u, i, out);
    }

    fn eval_full_into(&self, u: &BlockVector, out: &mut BlockVector) {
        // charge as one full evaluation, not per block
        self.units
            .fetch_add(self.inner.eval_cost_units(), Ordering::Relaxed);
        self.inner.eval_full_into(u, out);
    }

    fn mu(&self) -> f64 {
        self.inner.mu()
    }

    fn known_lipschitz(&self) -> Option<f64> {
        self.inner.known_lipschitz()
    }

    fn dense_operator(&self) -> Option<DenseMatrix> {
        self.inner.dense_operator()
    }

    fn eval_cost_units(&self) -> u64 {
        self.inner.eval_cost_units()
    }

    fn block_cost_units(&self, i: usize) -> u64 {
        self.inner.block_cost_units(i)
    }
}

/// Result of a randomized monotonicity probe.
#[derive(Debug, Clone, Copy)]
pub struct MonotoneReport {
    pub samples: usize,
    /// Minimum of `<F(u)-F(v), u-v> / |u-v|^2` over the sampled pairs.
    pub min_ratio: f64,
}

/// Samples random pairs and verifies `<F(u)-F(v), u-v> >= -1e-12 |u-v|^2`.
/// Fails with a construction error on any violation.
pub fn check_monotone<P: GmviProblem + ?Sized>(
    problem: &P,
    samples: usize,
    seed: u64,
) -> Result<MonotoneReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = problem.partition();
    let d = p.dim();
    let mut min_ratio = f64::INFINITY;
    for _ in 0..samples {
        let u = BlockVector::from_vec((0..d).map(|_| rng.gen_range(-1.0..1.0)).collect(), p);
        let v = BlockVector::from_vec((0..d).map(|_| rng.gen_range(-1.0..1.0)).collect(), p);
        let fu = eval_full(problem, &u)?;
        let fv = eval_full(problem, &v)?;
        let df: Vec<f64> = fu
            .as_slice()
            .iter()
            .zip(fv.as_slice())
            .map(|(a, b)| a - b)
            .collect();
        let du: Vec<f64> = u
            .as_slice()
            .iter()
            .zip(v.as_slice())
            .map(|(a, b)| a - b)
            .collect();
        let dist2 = dot(&du, &du);
        if dist2 == 0.0 {
            continue;
        }
        let ratio = dot(&df, &du) / dist2;
        min_ratio = min_ratio.min(ratio);
        if ratio < -1e-12 {
            return Err(Error::NonMonotone(format!(
                "inner product ratio {ratio:.3e} below -1e-12 on a sampled pair"
            )));
        }
    }
    Ok(MonotoneReport { samples, min_ratio })
}
