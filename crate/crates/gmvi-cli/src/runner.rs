//! Experiment execution: builds the problem, expands solver grids and
//! ablations into runs, executes them (optionally in parallel), and emits
//! one trace CSV per run plus a machine-readable summary. Identical config
//! and seed produce byte-identical artifacts.

use std::path::Path;
use std::sync::Arc;

use gmvi::aduca::{self, CycleMetrics, SolverConfig, Stopping};
use gmvi::baselines::{graal_run, pccm_run, GraalConfig, PccmConfig};
use gmvi::block::{euclidean_norm, BlockVector};
use gmvi::data;
use gmvi::error::{Error, Result};
use gmvi::metrics::{restricted_gap, svm_primal};
use gmvi::problem::{
    bilinear_saddle, random_coupling, BlockFn, DenseMatrix, GmviProblem, LinearVi, SvmSaddle,
};
use gmvi::trace::{emit_csv, RunTrace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{parse_rule, ExperimentConfig, ProblemSpec, SolverSpec};

/// Problem instances prepared for a whole experiment. SVM problems carry
/// both geometries so individual solvers can opt out of the rescaling.
enum Built {
    Linear {
        problem: LinearVi,
        ustar: Option<Vec<f64>>,
        skew: bool,
    },
    Svm {
        scaled: Arc<SvmSaddle>,
        plain: Arc<SvmSaddle>,
    },
}

fn build_problem(cfg: &ExperimentConfig) -> Result<Built> {
    match &cfg.problem {
        ProblemSpec::Bilinear {
            dx,
            dy,
            x_blocks,
            y_blocks,
            unit_spectral,
        } => {
            let m = random_coupling(*dx, *dy, *unit_spectral, cfg.seed);
            let problem = bilinear_saddle(&m, BlockFn::Zero, *x_blocks, *y_blocks);
            Ok(Built::Linear {
                problem,
                ustar: None,
                skew: true,
            })
        }
        ProblemSpec::Quadratic {
            d,
            blocks,
            sigma,
            mu,
            l1,
            scale,
        } => {
            let base = gmvi::problem::random_quadratic(*d, *blocks, *sigma, *mu, *l1, cfg.seed);
            let problem = rescale_linear(&base, *scale, *mu, *l1, *blocks);
            // u* solves (A + mu I) u = -q when the l1 term is absent
            let ustar = if *l1 == 0.0 {
                Some(solve_vi_star(&problem, *mu))
            } else {
                None
            };
            Ok(Built::Linear {
                problem,
                ustar,
                skew: false,
            })
        }
        ProblemSpec::Svm {
            dataset,
            subsample_n,
            subsample_seed,
            l1,
            l2,
            x_blocks,
            y_blocks,
            use_scaling,
        } => {
            let ds = data::read_libsvm_file(dataset)?;
            let ds = maybe_subsample(ds, *subsample_n, *subsample_seed, cfg.seed)?;
            build_svm_pair(&ds, *l1, *l2, *x_blocks, *y_blocks, *use_scaling)
        }
        ProblemSpec::SynthSvm {
            n,
            subsample_n,
            subsample_seed,
            l1,
            l2,
            x_blocks,
            y_blocks,
            use_scaling,
        } => {
            let ds = data::synth_a9a_like(*n, cfg.seed);
            let ds = maybe_subsample(ds, *subsample_n, *subsample_seed, cfg.seed)?;
            build_svm_pair(&ds, *l1, *l2, *x_blocks, *y_blocks, *use_scaling)
        }
    }
}

fn maybe_subsample(
    ds: data::SparseDataset,
    n: Option<usize>,
    seed: Option<u64>,
    default_seed: u64,
) -> Result<data::SparseDataset> {
    match n {
        Some(target) => data::subsample(&ds, target, seed.unwrap_or(default_seed)),
        None => Ok(ds),
    }
}

fn build_svm_pair(
    ds: &data::SparseDataset,
    l1: f64,
    l2: f64,
    x_blocks: usize,
    y_blocks: usize,
    use_scaling: bool,
) -> Result<Built> {
    let scaled = data::build_svm_problem(ds, l1, l2, x_blocks, y_blocks, use_scaling)?;
    let plain = data::build_svm_problem(ds, l1, l2, x_blocks, y_blocks, false)?;
    Ok(Built::Svm {
        scaled: Arc::new(scaled),
        plain: Arc::new(plain),
    })
}

fn rescale_linear(base: &LinearVi, scale: f64, mu: f64, l1: f64, blocks: usize) -> LinearVi {
    if scale == 1.0 {
        return base.clone();
    }
    let d = base.partition().dim();
    let a0 = base.operator_matrix();
    let mut a = DenseMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            a.set(i, j, a0.get(i, j) * scale);
        }
    }
    let z = BlockVector::zeros(base.partition());
    let mut q = BlockVector::zeros(base.partition());
    base.eval_full_into(&z, &mut q);
    let q: Vec<f64> = q.as_slice().iter().map(|x| x * scale).collect();
    let part = gmvi::block::BlockPartition::near_equal(d, blocks);
    LinearVi::new(
        a,
        q,
        part.clone(),
        gmvi::block::DiagonalScaling::identity(&part),
        vec![BlockFn::ScaledQuadratic { l1, mu }; blocks],
        mu,
    )
}

/// Direct dense solve of `(A + mu Lambda) u = -q` by partial-pivot
/// elimination; the gap reference for quadratic instances.
fn solve_vi_star(problem: &LinearVi, mu: f64) -> Vec<f64> {
    let d = problem.partition().dim();
    let a = problem.operator_matrix();
    let lam = problem.scaling().entries();
    let z = BlockVector::zeros(problem.partition());
    let mut qv = BlockVector::zeros(problem.partition());
    problem.eval_full_into(&z, &mut qv);
    let mut m: Vec<Vec<f64>> = (0..d)
        .map(|i| {
            let mut row: Vec<f64> = a.row(i).to_vec();
            row[i] += mu * lam[i];
            row
        })
        .collect();
    let mut x: Vec<f64> = qv.as_slice().iter().map(|v| -v).collect();
    for col in 0..d {
        let piv = (col..d)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        m.swap(col, piv);
        x.swap(col, piv);
        let pv = m[col][col];
        for row in col + 1..d {
            let f = m[row][col] / pv;
            for j in col..d {
                m[row][j] -= f * m[col][j];
            }
            x[row] -= f * x[col];
        }
    }
    for col in (0..d).rev() {
        x[col] /= m[col][col];
        for row in 0..col {
            x[row] -= m[row][col] * x[col];
        }
    }
    x
}

/// One expanded run: a concrete solver configuration against one problem
/// geometry.
struct Job {
    name: String,
    action: JobAction,
}

enum JobAction {
    Aduca { cfg: SolverConfig, plain: bool },
    Graal { cfg: GraalConfig, plain: bool },
    Pccm { cfg: PccmConfig, plain: bool },
}

fn format_float_tag(v: f64) -> String {
    // compact, filename-safe float tags: 0.0001 -> "1e-4"
    if v == 0.0 {
        "0".to_string()
    } else {
        format!("{v:e}").replace("e0", "").replace('.', "p")
    }
}

fn expand_jobs(cfg: &ExperimentConfig) -> Result<Vec<Job>> {
    let mut jobs = Vec::new();
    for spec in &cfg.solvers {
        match spec {
            SolverSpec::Aduca {
                rule,
                beta,
                gamma,
                rho,
                mu_override,
                mu_ablation,
                parallel,
                plain_geometry,
            } => {
                let rule = parse_rule(rule)?;
                let mut mus = vec![*mu_override];
                for mu in mu_ablation {
                    if !mus.contains(mu) {
                        mus.push(*mu);
                    }
                }
                let tag_mu = mus.len() > 1;
                for mu in mus {
                    let mut sc = SolverConfig::new(*beta, *gamma, *rho, rule);
                    sc.mu_override = mu;
                    sc.parallel = *parallel;
                    let name = if tag_mu {
                        format!("aduca_mu{}", format_float_tag(mu))
                    } else {
                        "aduca".to_string()
                    };
                    jobs.push(Job {
                        name,
                        action: JobAction::Aduca {
                            cfg: sc,
                            plain: *plain_geometry,
                        },
                    });
                }
            }
            SolverSpec::Graal {
                lambda0,
                growth,
                lambda_max,
                plain_geometry,
            } => {
                let tag = lambda0.len() > 1;
                for l0 in lambda0 {
                    let mut gc = GraalConfig::new(*l0);
                    if let Some(g) = growth {
                        gc.growth = *g;
                    }
                    gc.lambda_max = *lambda_max;
                    let name = if tag {
                        format!("graal_l0{}", format_float_tag(*l0))
                    } else {
                        "graal".to_string()
                    };
                    jobs.push(Job {
                        name,
                        action: JobAction::Graal {
                            cfg: gc,
                            plain: *plain_geometry,
                        },
                    });
                }
            }
            SolverSpec::Pccm {
                step,
                plain_geometry,
            } => {
                let tag = step.len() > 1;
                for a in step {
                    let name = if tag {
                        format!("pccm_a{}", format_float_tag(*a))
                    } else {
                        "pccm".to_string()
                    };
                    jobs.push(Job {
                        name,
                        action: JobAction::Pccm {
                            cfg: PccmConfig::new(*a),
                            plain: *plain_geometry,
                        },
                    });
                }
            }
        }
    }
    // duplicate names would overwrite each other's artifacts
    let mut seen = std::collections::HashSet::new();
    for j in &jobs {
        if !seen.insert(j.name.clone()) {
            return Err(Error::Config(format!("duplicate run name {:?}", j.name)));
        }
    }
    Ok(jobs)
}

struct RunRecord {
    name: String,
    trace: RunTrace,
    final_gap: Option<f64>,
    final_primal: Option<f64>,
    min_primal: Option<f64>,
    total_passes: f64,
    cycles: usize,
    converged: bool,
    diverged: bool,
    backtracks: u32,
}

fn initial_point(built: &Built, seed: u64) -> BlockVector {
    match built {
        Built::Linear { problem, .. } => {
            // random unit vector, deterministic in the seed
            let d = problem.partition().dim();
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
            let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let n = euclidean_norm(&v);
            if n > 0.0 {
                v.iter_mut().for_each(|x| *x /= n);
            }
            BlockVector::from_vec(v, problem.partition())
        }
        Built::Svm { scaled, .. } => BlockVector::zeros(scaled.partition()),
    }
}

fn linear_gap(
    problem: &LinearVi,
    skew: bool,
    ustar: &Option<Vec<f64>>,
    point: &BlockVector,
) -> Option<f64> {
    if skew {
        // unit-ball sup of the restricted gap for a skew operator with g = 0
        let f = gmvi::problem::eval_full(problem, point).ok()?;
        Some(euclidean_norm(f.as_slice()))
    } else {
        let ustar = ustar.as_ref()?;
        let reference = BlockVector::from_vec(ustar.clone(), problem.partition());
        restricted_gap(problem, point, &reference).ok()
    }
}

fn execute_job(
    job: &Job,
    built: &Built,
    cfg: &ExperimentConfig,
    u0: &BlockVector,
) -> Result<RunRecord> {
    let stopping = Stopping {
        max_cycles: cfg.budget.max_cycles,
        gap_tolerance: cfg.gap_tolerance,
        pass_budget: cfg.budget.max_passes,
    };
    let cadence = cfg.metric_cadence;
    match built {
        Built::Linear {
            problem,
            ustar,
            skew,
        } => {
            let observe = |k: usize, point: &BlockVector| -> CycleMetrics {
                if k % cadence != 0 {
                    return CycleMetrics::default();
                }
                let gap = linear_gap(problem, *skew, ustar, point);
                CycleMetrics {
                    gap,
                    primal: None,
                    stop_metric: gap,
                }
            };
            let (res, name) = match &job.action {
                JobAction::Aduca { cfg: sc, .. } => (
                    aduca::run_observed(problem, u0, sc, &stopping, |ev| {
                        observe(ev.k, ev.ergodic)
                    })?,
                    &job.name,
                ),
                JobAction::Graal { cfg: gc, .. } => (
                    graal_run(problem, u0, gc, &stopping, |k, u, _| observe(k, u))?,
                    &job.name,
                ),
                JobAction::Pccm { cfg: pc, .. } => (
                    pccm_run(problem, u0, pc, &stopping, |k, u, _| observe(k, u))?,
                    &job.name,
                ),
            };
            let final_gap = res.trace.rows.iter().rev().find_map(|r| r.gap);
            Ok(RunRecord {
                name: name.clone(),
                final_gap,
                final_primal: None,
                min_primal: None,
                total_passes: res.trace.total_passes(),
                cycles: res.cycles,
                converged: res.converged,
                diverged: res.diverged,
                backtracks: res.backtracks,
                trace: res.trace,
            })
        }
        Built::Svm { scaled, plain } => {
            let (d, _) = scaled.dims();
            let primal_of = |point: &BlockVector| svm_primal(scaled, &point.as_slice()[..d]);
            let observe = |k: usize, point: &BlockVector| -> CycleMetrics {
                if k % cadence != 0 {
                    return CycleMetrics::default();
                }
                let p = primal_of(point);
                CycleMetrics {
                    gap: None,
                    primal: Some(p),
                    stop_metric: Some(p),
                }
            };
            let pick = |plain_geom: bool| -> &SvmSaddle {
                if plain_geom {
                    plain
                } else {
                    scaled
                }
            };
            let res = match &job.action {
                JobAction::Aduca { cfg: sc, plain } => {
                    aduca::run_observed(pick(*plain), u0, sc, &stopping, |ev| {
                        observe(ev.k, ev.u_next)
                    })?
                }
                JobAction::Graal { cfg: gc, plain } => {
                    graal_run(pick(*plain), u0, gc, &stopping, |k, u, _| observe(k, u))?
                }
                JobAction::Pccm { cfg: pc, plain } => {
                    pccm_run(pick(*plain), u0, pc, &stopping, |k, u, _| observe(k, u))?
                }
            };
            let final_primal = res.trace.rows.iter().rev().find_map(|r| r.primal);
            let min_primal = res
                .trace
                .rows
                .iter()
                .filter_map(|r| r.primal)
                .fold(f64::INFINITY, f64::min);
            Ok(RunRecord {
                name: job.name.clone(),
                final_gap: None,
                final_primal,
                min_primal: if min_primal.is_finite() {
                    Some(min_primal)
                } else {
                    None
                },
                total_passes: res.trace.total_passes(),
                cycles: res.cycles,
                converged: res.converged,
                diverged: res.diverged,
                backtracks: res.backtracks,
                trace: res.trace,
            })
        }
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.16e}")).unwrap_or_default()
}

/// Runs every expanded job and writes `<name>.csv` traces, `summary.csv`,
/// and `config_snapshot.toml` into the output directory.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: &Path, workers: usize) -> Result<()> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let built = build_problem(cfg)?;
    let jobs = expand_jobs(cfg)?;
    let u0 = initial_point(&built, cfg.seed);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
    let results: Vec<Result<RunRecord>> = pool.install(|| {
        use rayon::prelude::*;
        jobs.par_iter()
            .map(|job| execute_job(job, &built, cfg, &u0))
            .collect()
    });
    let mut records = Vec::with_capacity(results.len());
    for r in results {
        records.push(r?);
    }

    // reference value: the best primal seen by any run
    let f_star = records
        .iter()
        .filter_map(|r| r.min_primal)
        .fold(f64::INFINITY, f64::min);
    let f_star = if f_star.is_finite() {
        Some(f_star)
    } else {
        None
    };

    // seed-suffixed names let runs with different seeds share a directory
    // and be grouped by `summarize`
    for rec in &records {
        emit_csv(
            &rec.trace,
            &out_dir.join(format!("{}_seed{}.csv", rec.name, cfg.seed)),
        )?;
    }
    let mut summary = String::from(
        "run,final_gap,final_primal,min_primal,f_star,passes_to_tol,total_passes,cycles,converged,diverged,backtracks\n",
    );
    for rec in &records {
        let passes_to_tol = f_star.and_then(|fs| {
            rec.trace
                .rows
                .iter()
                .find(|r| r.primal.is_some_and(|p| p - fs <= 1e-3))
                .map(|r| r.passes)
        });
        summary.push_str(&format!(
            "{}_seed{},{},{},{},{},{},{},{},{},{},{}\n",
            rec.name,
            cfg.seed,
            fmt_opt(rec.final_gap),
            fmt_opt(rec.final_primal),
            fmt_opt(rec.min_primal),
            fmt_opt(f_star),
            fmt_opt(passes_to_tol),
            fmt_opt(Some(rec.total_passes)),
            rec.cycles,
            rec.converged,
            rec.diverged,
            rec.backtracks,
        ));
    }
    std::fs::write(out_dir.join("summary.csv"), summary)
        .map_err(|e| Error::io(out_dir.join("summary.csv"), e))?;
    std::fs::write(out_dir.join("config_snapshot.toml"), cfg.snapshot())
        .map_err(|e| Error::io(out_dir.join("config_snapshot.toml"), e))?;
    Ok(())
}

/// Builds the text report for a directory of trace CSVs: per run the final
/// metrics and passes to tolerance, with min/median aggregation across
/// `_seed*`-suffixed groups.
pub fn summarize(dir: &Path, tolerance: f64) -> Result<String> {
    let mut entries: Vec<(String, Vec<gmvi::trace::CsvRow>)> = Vec::new();
    let mut names: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| {
            p.extension().is_some_and(|x| x == "csv")
                && p.file_name().is_some_and(|n| n != "summary.csv")
        })
        .collect();
    names.sort();
    for path in names {
        let rows = gmvi::trace::parse_csv_file(&path)?;
        let stem = path.file_stem().unwrap().to_string_lossy().into_owned();
        entries.push((stem, rows));
    }
    if entries.is_empty() {
        return Err(Error::Usage(format!(
            "no trace CSVs found in {}",
            dir.display()
        )));
    }
    let f_star = entries
        .iter()
        .flat_map(|(_, rows)| rows.iter().filter_map(|r| r.primal))
        .fold(f64::INFINITY, f64::min);

    let fmt = |v: Option<f64>| {
        v.map(|x| format!("{x:.3e}"))
            .unwrap_or_else(|| "n/a".into())
    };
    let mut out = String::new();
    out.push_str(&format!(
        "{:<24} {:>10} {:>12} {:>12} {:>14} {:>10}\n",
        "run", "cycles", "final_gap", "final_primal", "passes_to_tol", "passes"
    ));
    let mut group_tols: std::collections::BTreeMap<String, Vec<f64>> = Default::default();
    for (name, rows) in &entries {
        let final_gap = rows.iter().rev().find_map(|r| r.gap);
        let final_primal = rows.iter().rev().find_map(|r| r.primal);
        let passes_to_tol = if f_star.is_finite() {
            rows.iter()
                .find(|r| r.primal.is_some_and(|p| p - f_star <= tolerance))
                .map(|r| r.passes)
        } else {
            rows.iter()
                .find(|r| r.gap.is_some_and(|g| g <= tolerance))
                .map(|r| r.passes)
        };
        let passes = rows.last().map(|r| r.passes).unwrap_or(0.0);
        out.push_str(&format!(
            "{:<24} {:>10} {:>12} {:>12} {:>14} {:>10}\n",
            name,
            rows.len(),
            fmt(final_gap),
            fmt(final_primal),
            fmt(passes_to_tol),
            passes
        ));
        let group = match name.find("_seed") {
            Some(i) => name[..i].to_string(),
            None => name.clone(),
        };
        if let Some(t) = passes_to_tol {
            group_tols.entry(group).or_default().push(t);
        }
    }
    if f_star.is_finite() {
        out.push_str(&format!(
            "\nreference f* = {f_star:.6e} (best primal across traces)\n"
        ));
    }
    let multi: Vec<_> = group_tols.iter().filter(|(_, v)| v.len() > 1).collect();
    if !multi.is_empty() {
        out.push_str(&format!(
            "\n{:<24} {:>14} {:>14}\n",
            "group", "min_to_tol", "median_to_tol"
        ));
        for (g, vals) in multi {
            let mut v = vals.clone();
            v.sort_by(f64::total_cmp);
            let median = v[v.len() / 2];
            out.push_str(&format!("{:<24} {:>14} {:>14}\n", g, v[0], median));
        }
    }
    Ok(out)
}
