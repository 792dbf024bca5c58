//! Property tests for the geometric primitives, prox maps, and data
//! round-trips.

use gmvi::block::{
    dot, inverse_scaled_norm, prefix_splice, scaled_norm, scaled_norm_slice, BlockPartition,
    BlockVector, DiagonalScaling,
};
use gmvi::problem::BlockFn;
use proptest::prelude::*;

fn partition_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..5, 1..5)
}

proptest! {
    #[test]
    fn norm_decomposes_over_blocks(sizes in partition_strategy(), seed in 0u64..1000) {
        let p = BlockPartition::new(sizes);
        let d = p.dim();
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let v = BlockVector::from_vec((0..d).map(|_| rng.gen_range(-10.0..10.0)).collect(), &p);
        let s = DiagonalScaling::new((0..d).map(|_| rng.gen_range(0.1..10.0)).collect(), &p);
        let total = scaled_norm(&v, &s).powi(2);
        let per_block: f64 = (0..p.num_blocks())
            .map(|i| scaled_norm_slice(v.block(i), s.block(i)).powi(2))
            .sum();
        prop_assert!((total - per_block).abs() <= 1e-12 * total.max(1.0));
    }

    #[test]
    fn generalized_cauchy_schwarz(d in 1usize..12, seed in 0u64..1000) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let p = BlockPartition::single(d);
        let v = BlockVector::from_vec((0..d).map(|_| rng.gen_range(-5.0..5.0)).collect(), &p);
        let w = BlockVector::from_vec((0..d).map(|_| rng.gen_range(-5.0..5.0)).collect(), &p);
        let s = DiagonalScaling::new((0..d).map(|_| rng.gen_range(0.05..20.0)).collect(), &p);
        let lhs = scaled_norm(&v, &s) * inverse_scaled_norm(&w, &s);
        let rhs = dot(v.as_slice(), w.as_slice()).abs();
        prop_assert!(lhs >= rhs - 1e-9 * rhs.max(1.0), "{lhs} < {rhs}");
    }

    #[test]
    fn splice_of_identical_vectors_is_identity(sizes in partition_strategy(), x in -5.0f64..5.0) {
        let p = BlockPartition::new(sizes);
        let u = BlockVector::from_vec((0..p.dim()).map(|i| x + i as f64).collect(), &p);
        for b in 0..p.num_blocks() {
            let spliced = prefix_splice(&u, &u, b);
            prop_assert_eq!(spliced.as_slice(), u.as_slice());
        }
    }
}

fn prox_cases() -> Vec<BlockFn> {
    vec![
        BlockFn::Zero,
        BlockFn::ElasticNet { l1: 0.3, l2: 0.2 },
        BlockFn::ElasticNet { l1: 0.0, l2: 0.0 },
        BlockFn::ScaledQuadratic { l1: 0.15, mu: 0.4 },
        BlockFn::Box { lo: -1.0, hi: 0.0 },
    ]
}

/// Subgradient membership of the prox output:
/// `0 in a*linear + a*dg(w) + Lambda(w - v)` at tolerance 1e-10.
fn check_prox_optimality(f: &BlockFn, v: &[f64], lin: &[f64], a: f64, lam: &[f64], w: &[f64]) {
    let tol = 1e-10;
    for j in 0..v.len() {
        let base = a * lin[j] + lam[j] * (w[j] - v[j]);
        match *f {
            BlockFn::Zero => assert!(base.abs() <= tol, "zero prox residual {base}"),
            BlockFn::ElasticNet { l1, l2 } => {
                let r = base + a * l2 * w[j];
                if w[j] > 0.0 {
                    assert!((r + a * l1).abs() <= tol, "positive branch {r}");
                } else if w[j] < 0.0 {
                    assert!((r - a * l1).abs() <= tol, "negative branch {r}");
                } else {
                    assert!(r.abs() <= a * l1 + tol, "kink branch {r} vs {}", a * l1);
                }
            }
            BlockFn::ScaledQuadratic { l1, mu } => {
                let r = base + a * mu * lam[j] * w[j];
                if w[j] > 0.0 {
                    assert!((r + a * l1).abs() <= tol);
                } else if w[j] < 0.0 {
                    assert!((r - a * l1).abs() <= tol);
                } else {
                    assert!(r.abs() <= a * l1 + tol);
                }
            }
            BlockFn::Box { lo, hi } => {
                assert!(w[j] >= lo && w[j] <= hi, "prox output outside the box");
                if w[j] > lo && w[j] < hi {
                    assert!(base.abs() <= tol, "interior residual {base}");
                } else if w[j] == lo {
                    assert!(
                        base >= -tol,
                        "lower corner needs nonnegative residual, got {base}"
                    );
                } else {
                    assert!(
                        base <= tol,
                        "upper corner needs nonpositive residual, got {base}"
                    );
                }
            }
        }
    }
}

proptest! {
    #[test]
    fn prox_satisfies_optimality_conditions(
        d in 1usize..6,
        case in 0usize..5,
        a in 0.01f64..20.0,
        seed in 0u64..500,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let f = &prox_cases()[case];
        let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let lin: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let lam: Vec<f64> = (0..d).map(|_| rng.gen_range(0.1..5.0)).collect();
        let mut w = vec![0.0; d];
        f.prox(&v, &lin, a, &lam, &mut w);
        check_prox_optimality(f, &v, &lin, a, &lam, &w);
    }

    #[test]
    fn prox_nonexpansive_in_scaled_norm(
        d in 1usize..6,
        case in 0usize..5,
        a in 0.01f64..20.0,
        seed in 0u64..500,
    ) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let f = &prox_cases()[case];
        let lin: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let lam: Vec<f64> = (0..d).map(|_| rng.gen_range(0.1..5.0)).collect();
        let v1: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let v2: Vec<f64> = (0..d).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let (mut w1, mut w2) = (vec![0.0; d], vec![0.0; d]);
        f.prox(&v1, &lin, a, &lam, &mut w1);
        f.prox(&v2, &lin, a, &lam, &mut w2);
        let dw: Vec<f64> = w1.iter().zip(&w2).map(|(x, y)| x - y).collect();
        let dv: Vec<f64> = v1.iter().zip(&v2).map(|(x, y)| x - y).collect();
        let lhs = scaled_norm_slice(&dw, &lam);
        let rhs = scaled_norm_slice(&dv, &lam);
        prop_assert!(lhs <= rhs + 1e-12 * rhs.max(1.0), "{lhs} > {rhs}");
    }

    #[test]
    fn libsvm_round_trip(n in 1usize..20, seed in 0u64..500) {
        let ds = gmvi::data::synth_classification(n, 9, 3, 0.3, seed);
        let text = ds.to_libsvm_string();
        let back = gmvi::data::parse_libsvm(std::io::Cursor::new(text)).unwrap();
        prop_assert_eq!(&ds.rows, &back.rows);
        prop_assert_eq!(&ds.labels, &back.labels);
    }

    #[test]
    fn trace_csv_round_trip(n in 0usize..20, seed in 0u64..500) {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut t = gmvi::trace::RunTrace::new("prop", 3);
        for k in 1..=n {
            t.rows.push(gmvi::trace::CycleRecord {
                k,
                a: rng.gen_range(1e-9..1e3),
                l: rng.gen_range(0.0..1e4),
                lhat: rng.gen_range(0.0..1e4),
                omega: rng.gen_range(0.9..1.0),
                theta: rng.gen_range(1.0..1e6),
                passes: 2.0 * k as f64,
                wall_ms: None,
                gap: if rng.gen_bool(0.5) { Some(rng.gen_range(-1.0..1.0)) } else { None },
                primal: if rng.gen_bool(0.5) { Some(rng.gen_range(0.0..2.0)) } else { None },
                s_k: None,
                curvature_active: false,
            });
        }
        let parsed = gmvi::trace::parse_csv_str(&gmvi::trace::csv_string(&t)).unwrap();
        let expected: Vec<gmvi::trace::CsvRow> = t.rows.iter().map(gmvi::trace::CsvRow::from).collect();
        prop_assert_eq!(parsed, expected);
    }
}

/// The closed-form inner maximizer over the dual box matches what the
/// y-block prox drives toward for large steps, and the resulting objective
/// agrees with the primal closed form.
#[test]
fn svm_dual_maximizer_consistency() {
    use gmvi::block::BlockVector;
    use gmvi::problem::GmviProblem;
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
    let ds = gmvi::data::synth_classification(25, 8, 3, 0.2, 5);
    let svm = gmvi::data::build_svm_problem(&ds, 1e-3, 1e-3, 2, 3, true).unwrap();
    let (d, n) = svm.dims();
    let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let mut u = BlockVector::zeros(svm.partition());
    u.as_mut_slice()[..d].copy_from_slice(&x);

    // F restricted to the y blocks at (x, 0) gives (1/n)(1 - margins)
    let mut f = BlockVector::zeros(svm.partition());
    svm.eval_full_into(&u, &mut f);
    let a_big = 1e9;
    let mut y_star = Vec::with_capacity(n);
    for b in 2..svm.partition().num_blocks() {
        let r = svm.partition().range(b);
        let zeros = vec![0.0; r.len()];
        let mut out = vec![0.0; r.len()];
        svm.prox_block_into(b, &zeros, f.block(b), a_big, &mut out);
        y_star.extend_from_slice(&out);
    }
    // closed form: y_i = -1 when the hinge is active, 0 otherwise
    let abar = svm.matrix();
    let mut inner_obj = 0.0;
    for i in 0..n {
        let mut margin = 0.0;
        for k in abar.csc_indptr[i]..abar.csc_indptr[i + 1] {
            margin += abar.csc_vals[k] * x[abar.csc_rows[k] as usize];
        }
        let expect = if 1.0 - margin > 0.0 { -1.0 } else { 0.0 };
        assert_eq!(y_star[i], expect, "sample {i}: margin {margin}");
        inner_obj += y_star[i] * (-1.0 + margin) / n as f64;
    }
    let (l1, l2) = svm.regularizers();
    let reg: f64 = l1 * x.iter().map(|v| v.abs()).sum::<f64>()
        + 0.5 * l2 * x.iter().map(|v| v * v).sum::<f64>();
    let primal = gmvi::metrics::svm_primal(&svm, &x);
    assert!(
        (inner_obj + reg - primal).abs() <= 1e-12 * primal.abs().max(1.0),
        "inner max {} + reg {} vs primal closed form {}",
        inner_obj,
        reg,
        primal
    );
}
