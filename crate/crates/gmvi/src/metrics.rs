//! Progress metrics: the restricted gap, the merit-function bound that
//! certifies it, the SVM primal objective, and global Lipschitz references
//! for linear operators.

use crate::block::{dot, BlockVector};
use crate::error::{Error, Result};
use crate::problem::{eval_full, DenseMatrix, GmviProblem, SparsePair, SvmSaddle};
use crate::trace::RunTrace;

/// `Gap(candidate; reference) = <F(reference), candidate - reference>
///                              + g(candidate) - g(reference)`.
/// Nonpositive at every reference when the candidate solves the problem;
/// may take either sign otherwise. Both points must lie in `dom(g)`.
pub fn restricted_gap<P: GmviProblem + ?Sized>(
    problem: &P,
    candidate: &BlockVector,
    reference: &BlockVector,
) -> Result<f64> {
    let g_cand = problem.g_value(candidate);
    let g_ref = problem.g_value(reference);
    if !g_cand.is_finite() || !g_ref.is_finite() {
        return Err(Error::Usage(
            "restricted gap needs both points inside dom(g)".into(),
        ));
    }
    let f_ref = eval_full(problem, reference)?;
    let diff: Vec<f64> = candidate
        .as_slice()
        .iter()
        .zip(reference.as_slice())
        .map(|(a, b)| a - b)
        .collect();
    Ok(dot(f_ref.as_slice(), &diff) + g_cand - g_ref)
}

/// The merit-function upper bound on the ergodic restricted gap:
/// `(sum_k theta_k h_k(u)) / (sum_k theta_k a_k)` with
/// `h_k(u) = a_k (<F(u_k), u_k - u> + g(u_k) - g(u))`.
///
/// Requires a trace recorded with iterates. Also recomputes the ergodic
/// point and asserts the certified inequality
/// `Gap(uhat_K; u) <= bound + 1e-10`.
pub fn merit_bound<P: GmviProblem + ?Sized>(
    trace: &RunTrace,
    problem: &P,
    u: &BlockVector,
) -> Result<f64> {
    let iterates = trace
        .iterates
        .as_ref()
        .ok_or_else(|| Error::Usage("merit bound needs a trace with recorded iterates".into()))?;
    if trace.rows.is_empty() {
        return Err(Error::Usage(
            "merit bound needs at least one recorded cycle".into(),
        ));
    }
    let g_u = problem.g_value(u);
    if !g_u.is_finite() {
        return Err(Error::Usage(
            "merit bound reference point outside dom(g)".into(),
        ));
    }
    let d = u.dim();
    let mut num = 0.0;
    let mut den = 0.0;
    let mut erg = vec![0.0; d];
    for row in &trace.rows {
        // iterates[0] is u_1
        let u_k = &iterates[row.k - 1];
        let f_k = eval_full(problem, u_k)?;
        let diff: Vec<f64> = u_k
            .as_slice()
            .iter()
            .zip(u.as_slice())
            .map(|(a, b)| a - b)
            .collect();
        let h_k = row.a * (dot(f_k.as_slice(), &diff) + problem.g_value(u_k) - g_u);
        num += row.theta * h_k;
        den += row.theta * row.a;
        for (e, x) in erg.iter_mut().zip(u_k.as_slice()) {
            *e += row.theta * row.a * x;
        }
    }
    let bound = num / den;
    let ergodic = BlockVector::from_vec(erg.into_iter().map(|x| x / den).collect(), u.partition());
    let gap = restricted_gap(problem, &ergodic, u)?;
    assert!(
        gap <= bound + 1e-10,
        "merit bound must dominate the ergodic gap: gap {gap} > bound {bound}"
    );
    Ok(bound)
}

/// SVM primal objective from the inner maximization in closed form:
/// `f(x) = (1/n) sum_i max(0, 1 - b_i A_i^T x) + l1 |x|_1 + (l2/2) |x|_2^2`.
pub fn svm_primal_parts(abar: &SparsePair, x: &[f64], l1: f64, l2: f64) -> f64 {
    assert_eq!(x.len(), abar.d, "x length must equal the feature count");
    let n = abar.n;
    let mut hinge = 0.0;
    for i in 0..n {
        let mut margin = 0.0;
        for k in abar.csc_indptr[i]..abar.csc_indptr[i + 1] {
            margin += abar.csc_vals[k] * x[abar.csc_rows[k] as usize];
        }
        hinge += (1.0 - margin).max(0.0);
    }
    let abs: f64 = x.iter().map(|v| v.abs()).sum();
    let sq: f64 = x.iter().map(|v| v * v).sum();
    hinge / n as f64 + l1 * abs + 0.5 * l2 * sq
}

/// [`svm_primal_parts`] using the problem's own regularization; `x` is the
/// feature part of the stacked `(x, y)` vector.
pub fn svm_primal(svm: &SvmSaddle, x: &[f64]) -> f64 {
    let (l1, l2) = svm.regularizers();
    svm_primal_parts(svm.matrix(), x, l1, l2)
}

/// Global Lipschitz references for a linear operator: `L` is the spectral
/// norm of the scaled operator, `Lhat` the spectral norm of its
/// splice-structured part (block row `i` restricted to columns of blocks
/// `>= i`), both by power iteration to relative tolerance 1e-8.
pub fn lipschitz_reference<P: GmviProblem + ?Sized>(problem: &P) -> Result<(f64, f64)> {
    let a = problem
        .dense_operator()
        .ok_or_else(|| Error::Unsupported("Lipschitz reference needs a linear operator".into()))?;
    let partition = problem.partition();
    let lam = problem.scaling().entries();
    let d = partition.dim();
    assert_eq!(a.rows(), d);
    // scaled operator Lambda^{-1/2} A Lambda^{-1/2}
    let mut scaled = DenseMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            scaled.set(i, j, a.get(i, j) / (lam[i].sqrt() * lam[j].sqrt()));
        }
    }
    let l_global = crate::problem::spectral_norm(&scaled, 1e-8);
    // splice structure: block row i sees only the not-yet-updated columns
    let mut spliced = DenseMatrix::zeros(d, d);
    for b in 0..partition.num_blocks() {
        let cut = partition.offset(b);
        for i in partition.range(b) {
            for j in cut..d {
                spliced.set(i, j, scaled.get(i, j));
            }
        }
    }
    let lhat_global = crate::problem::spectral_norm(&spliced, 1e-8);
    Ok((l_global, lhat_global))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aduca::{run, SolverConfig, StepRule, Stopping};
    use crate::block::{BlockPartition, DiagonalScaling};
    use crate::problem::{bilinear_saddle, quadratic_vi, BlockFn, LinearVi};

    #[test]
    fn gap_identical_points_is_zero() {
        let m = DenseMatrix::from_rows(vec![vec![1.0]]);
        let p = bilinear_saddle(&m, BlockFn::Zero, 1, 1);
        let u = BlockVector::from_vec(vec![0.4, -0.2], p.partition());
        assert_eq!(restricted_gap(&p, &u, &u).unwrap(), 0.0);
    }

    #[test]
    fn gap_rotation_example() {
        // F(x, y) = (y, -x); candidate (1, 0) against reference (0, 1)
        let m = DenseMatrix::from_rows(vec![vec![1.0]]);
        let p = bilinear_saddle(&m, BlockFn::Zero, 1, 1);
        let cand = BlockVector::from_vec(vec![1.0, 0.0], p.partition());
        let refp = BlockVector::from_vec(vec![0.0, 1.0], p.partition());
        assert_eq!(restricted_gap(&p, &cand, &refp).unwrap(), 1.0);
    }

    #[test]
    fn gap_nonnegative_against_exact_solution() {
        // strongly monotone 1-D instance: F(u) = u + 1, g = 0, u* = -1;
        // candidates on a grid, reference at u*
        let part = BlockPartition::single(1);
        let p = LinearVi::new(
            DenseMatrix::identity(1),
            vec![1.0],
            part.clone(),
            DiagonalScaling::identity(&part),
            vec![BlockFn::Zero],
            0.0,
        );
        let star = BlockVector::from_vec(vec![-1.0], p.partition());
        for i in -10..=10 {
            let cand = BlockVector::from_vec(vec![i as f64 / 5.0], p.partition());
            let g = restricted_gap(&p, &cand, &star).unwrap();
            assert!(
                g >= -1e-15,
                "gap against the solution must be >= 0, got {g}"
            );
        }
    }

    #[test]
    fn gap_domain_error() {
        // Box indicator puts y outside dom(g)
        let abar = SparsePair::from_columns(1, &[vec![(0, 1.0)]]);
        let svm = SvmSaddle::new(abar, 0.0, 0.0, 1, 1, None);
        let inside = BlockVector::from_vec(vec![0.0, -0.5], svm.partition());
        let outside = BlockVector::from_vec(vec![0.0, 0.5], svm.partition());
        assert!(restricted_gap(&svm, &outside, &inside).is_err());
        assert!(restricted_gap(&svm, &inside, &outside).is_err());
    }

    #[test]
    fn merit_bound_single_cycle_equals_gap() {
        // skew operator: <F(a) - F(b), a - b> = 0, so at K = 1 the merit
        // bound h_1(u)/a_1 collapses onto the restricted gap exactly
        let m = DenseMatrix::from_rows(vec![vec![1.0, -0.3], vec![0.2, 0.8]]);
        let p = bilinear_saddle(&m, BlockFn::Zero, 1, 1);
        let u0 = BlockVector::from_vec(vec![1.0, 0.5, -0.2, 0.3], p.partition());
        let cfg = SolverConfig::reference(StepRule::FullySpecified).with_record_iterates(true);
        let res = run(&p, &u0, &cfg, &Stopping::cycles(1)).unwrap();
        let u = BlockVector::from_vec(vec![0.1, 0.1, 0.0, -0.4], p.partition());
        let bound = merit_bound(&res.trace, &p, &u).unwrap();
        let gap = restricted_gap(&p, &res.ergodic, &u).unwrap();
        assert!((bound - gap).abs() < 1e-12, "bound {bound} vs gap {gap}");
    }

    #[test]
    fn merit_bound_dominates_gap_on_random_run() {
        let m = crate::problem::random_coupling(5, 5, true, 17);
        let p = bilinear_saddle(&m, BlockFn::Zero, 2, 2);
        let u0 = BlockVector::from_vec(vec![0.7; 10], p.partition());
        let cfg = SolverConfig::reference(StepRule::SimplifiedUnknownMu).with_record_iterates(true);
        let res = run(&p, &u0, &cfg, &Stopping::cycles(60)).unwrap();
        let star = BlockVector::zeros(p.partition());
        // the assert inside merit_bound is the check
        let bound = merit_bound(&res.trace, &p, &star).unwrap();
        assert!(bound.is_finite());
    }

    #[test]
    fn merit_bound_requires_iterates() {
        let part = BlockPartition::single(1);
        let p = LinearVi::new(
            DenseMatrix::identity(1),
            vec![0.0],
            part.clone(),
            DiagonalScaling::identity(&part),
            vec![BlockFn::Zero],
            0.0,
        );
        let u0 = BlockVector::from_vec(vec![1.0], p.partition());
        let cfg = SolverConfig::reference(StepRule::FullySpecified);
        let res = run(&p, &u0, &cfg, &Stopping::cycles(3)).unwrap();
        assert!(merit_bound(&res.trace, &p, &u0).is_err());
    }

    #[test]
    fn svm_primal_examples() {
        // single sample A_1 = (1, 0), b = 1
        let abar = SparsePair::from_columns(2, &[vec![(0, 1.0)]]);
        assert_eq!(svm_primal_parts(&abar, &[0.0, 0.0], 0.0, 0.0), 1.0);
        // margin >= 1 for all samples: hinge inactive
        assert_eq!(svm_primal_parts(&abar, &[2.0, 0.0], 0.0, 0.0), 0.0);
        let f = svm_primal_parts(&abar, &[2.0, 0.0], 1e-4, 1e-4);
        assert!((f - 4e-4).abs() < 1e-18);
    }

    #[test]
    fn svm_primal_convex_midpoint() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let mut cols: Vec<Vec<(u32, f64)>> = Vec::new();
        for _ in 0..12 {
            let mut c = Vec::new();
            for j in 0..6u32 {
                if rng.gen_bool(0.5) {
                    c.push((j, rng.gen_range(-1.0..1.0)));
                }
            }
            cols.push(c);
        }
        let abar = SparsePair::from_columns(6, &cols);
        for _ in 0..40 {
            let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let y: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let mid: Vec<f64> = x.iter().zip(&y).map(|(a, b)| 0.5 * (a + b)).collect();
            let fm = svm_primal_parts(&abar, &mid, 1e-3, 1e-3);
            let avg = 0.5 * svm_primal_parts(&abar, &x, 1e-3, 1e-3)
                + 0.5 * svm_primal_parts(&abar, &y, 1e-3, 1e-3);
            assert!(fm <= avg + 1e-12, "midpoint convexity: {fm} > {avg}");
        }
    }

    #[test]
    fn lipschitz_reference_identity() {
        let part = BlockPartition::near_equal(4, 2);
        let p = LinearVi::new(
            DenseMatrix::identity(4),
            vec![0.0; 4],
            part.clone(),
            DiagonalScaling::identity(&part),
            vec![BlockFn::Zero; 2],
            0.0,
        );
        let (l, lhat) = lipschitz_reference(&p).unwrap();
        assert!((l - 1.0).abs() < 1e-7);
        assert!(lhat <= 1.0 + 1e-7);
    }

    #[test]
    fn lipschitz_reference_single_block_coincides() {
        let m = crate::problem::random_coupling(3, 3, false, 5);
        let part = BlockPartition::single(3);
        let p = LinearVi::new(
            m,
            vec![0.0; 3],
            part.clone(),
            DiagonalScaling::identity(&part),
            vec![BlockFn::Zero],
            0.0,
        );
        let (l, lhat) = lipschitz_reference(&p).unwrap();
        assert!((l - lhat).abs() < 1e-7 * l.max(1.0));
    }

    #[test]
    fn lipschitz_reference_rotation() {
        // exhaustively checkable 2x2 case: L = 1, Lhat = 1 (the splice
        // keeps only the (0,1) entry, a rank-one unit)
        let m = DenseMatrix::from_rows(vec![vec![1.0]]);
        let p = bilinear_saddle(&m, BlockFn::Zero, 1, 1);
        let (l, lhat) = lipschitz_reference(&p).unwrap();
        assert!((l - 1.0).abs() < 1e-7);
        assert!((lhat - 1.0).abs() < 1e-7);
    }

    #[test]
    fn lipschitz_reference_quadratic_psd() {
        // cross-check the power iteration against nalgebra's SVD
        let p = quadratic_vi(
            &DenseMatrix::identity(6),
            &DenseMatrix::zeros(6, 6),
            vec![0.0; 6],
            0.0,
            0.0,
            3,
        );
        let (l, _) = lipschitz_reference(&p).unwrap();
        assert!((l - 1.0).abs() < 1e-7);
    }
}
