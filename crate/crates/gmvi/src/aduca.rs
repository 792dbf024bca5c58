//! Adaptive delayed-update cyclic solver for GMVIs.
//!
//! One outer cycle `k` sweeps all blocks with information that is one full
//! cycle old: the delayed block operator values are extrapolated, the prox
//! center is a geometric mix of iterate and previous center, and the step
//! size is chosen at cycle start from two local Lipschitz surrogates — the
//! consecutive-iterate estimate `L_k` and the within-cycle estimate
//! `Lhat_k`. Because every block update reads only cycle-start data, the
//! block loop can run in parallel and reproduces the sequential iterates bit
//! for bit.
//!
//! No global Lipschitz constants are required; a one-time backtracking
//! initialization picks `a_0` and the adaptive rules take over from there.

use std::sync::Arc;

use crate::block::{inverse_scaled_norm, scaled_norm, BlockVector, DiagonalScaling};
use crate::error::{Error, Result};
use crate::problem::{CountingProblem, GmviProblem};
use crate::trace::{CycleRecord, InitRecord, RunTrace};

/// Step-size selection rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepRule {
    /// The full set of inequalities, including the two deeper-history
    /// families; admits the largest steps when `mu` is known.
    Complete,
    /// Single-inequality simplification that still uses `omega`/`phi`
    /// (and therefore `mu`).
    SimplifiedKnownMu,
    /// Parameter-free form `a_k = min{rho0 a_{k-1}, s_k sqrt(a_{k-1}/a_{k-2})}`.
    SimplifiedUnknownMu,
    /// The numeric rule `a_k = min{1.15 a_{k-1}, min{0.093/L_k, 0.079/Lhat_k} sqrt(a_{k-1}/a_{k-2})}`.
    FullySpecified,
}

impl StepRule {
    pub fn name(&self) -> &'static str {
        match self {
            StepRule::Complete => "complete",
            StepRule::SimplifiedKnownMu => "simplified_known_mu",
            StepRule::SimplifiedUnknownMu => "simplified_unknown_mu",
            StepRule::FullySpecified => "fully_specified",
        }
    }
}

/// Hard-coded constants of the fully specified rule.
pub const FULLY_SPECIFIED_GROWTH: f64 = 1.15;
pub const FULLY_SPECIFIED_C: f64 = 0.093;
pub const FULLY_SPECIFIED_C_HAT: f64 = 0.079;

/// Backtracking halving factor.
pub const HALVING_FACTOR: f64 = 2.0;

/// Solver hyperparameters. `beta` is the extrapolation weight; `gamma` and
/// `rho` bound the step growth. Admissible domain:
/// `beta in ((sqrt(5)-1)/2, 1)`, `gamma in (0, 1 - 1/(beta(1+beta)))`,
/// `rho in (1, 1/beta)`.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    pub beta: f64,
    pub gamma: f64,
    pub rho: f64,
    /// Conservative lower bound on the strong convexity modulus fed to the
    /// averaging weights; 0 disables them entirely.
    pub mu_override: f64,
    pub rule: StepRule,
    /// Cap on any step size; only binding in zero-curvature stretches.
    pub max_step: f64,
    /// Run the per-cycle block loop on the rayon pool.
    pub parallel: bool,
    /// Keep every iterate `u_k` in the trace (needed by merit-function
    /// diagnostics; costs O(K d) memory).
    pub record_iterates: bool,
}

impl SolverConfig {
    pub fn new(beta: f64, gamma: f64, rho: f64, rule: StepRule) -> Self {
        Self {
            beta,
            gamma,
            rho,
            mu_override: 0.0,
            rule,
            max_step: 1e6,
            parallel: false,
            record_iterates: false,
        }
    }

    /// The reference configuration `beta = 0.8, gamma = 0.2, rho = 1.2`.
    pub fn reference(rule: StepRule) -> Self {
        Self::new(0.8, 0.2, 1.2, rule)
    }

    pub fn with_mu(mut self, mu: f64) -> Self {
        self.mu_override = mu;
        self
    }

    pub fn with_parallel(mut self, on: bool) -> Self {
        self.parallel = on;
        self
    }

    pub fn with_record_iterates(mut self, on: bool) -> Self {
        self.record_iterates = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let lo = (5.0f64.sqrt() - 1.0) / 2.0;
        if !(self.beta > lo && self.beta < 1.0) {
            return Err(Error::Config(format!(
                "beta = {} outside ((sqrt(5)-1)/2, 1) = ({lo:.6}, 1)",
                self.beta
            )));
        }
        let gamma_hi = 1.0 - 1.0 / (self.beta * (1.0 + self.beta));
        if !(self.gamma > 0.0 && self.gamma < gamma_hi) {
            return Err(Error::Config(format!(
                "gamma = {} outside (0, 1 - 1/(beta(1+beta))) = (0, {gamma_hi:.6})",
                self.gamma
            )));
        }
        let rho_hi = 1.0 / self.beta;
        if !(self.rho > 1.0 && self.rho < rho_hi) {
            return Err(Error::Config(format!(
                "rho = {} outside (1, 1/beta) = (1, {rho_hi:.6})",
                self.rho
            )));
        }
        if !(self.mu_override >= 0.0) {
            return Err(Error::Config(format!(
                "mu_override = {} must be >= 0",
                self.mu_override
            )));
        }
        if !(self.max_step > 0.0) {
            return Err(Error::Config(format!(
                "max_step = {} must be > 0",
                self.max_step
            )));
        }
        Ok(())
    }
}

/// Constants derived from `(beta, gamma, rho)`; `c` and `c_hat` are the
/// absolute constants of the parameter-free step rule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivedConstants {
    pub rho0: f64,
    pub tau: f64,
    pub eta: f64,
    pub c: f64,
    pub c_hat: f64,
}

/// Closed forms: `rho0 = min{rho, beta(1+beta)(1-gamma)}`,
/// `tau = 3 rho0^2 (1+rho beta) / (2 (rho beta)^2 + 3 rho0^2 (1+rho beta))`,
/// `eta = sqrt(gamma(1+beta)/(1+beta^2))`,
/// `c = (eta rho / 2) sqrt(tau beta / (3(1+rho beta)))`,
/// `c_hat = (eta / 2) sqrt((1-tau) rho / 2)`.
pub fn derive_constants(cfg: &SolverConfig) -> Result<DerivedConstants> {
    cfg.validate()?;
    let (beta, gamma, rho) = (cfg.beta, cfg.gamma, cfg.rho);
    let rho0 = rho.min(beta * (1.0 + beta) * (1.0 - gamma));
    let rb = rho * beta;
    let tau = 3.0 * rho0 * rho0 * (1.0 + rb) / (2.0 * rb * rb + 3.0 * rho0 * rho0 * (1.0 + rb));
    let eta = (gamma * (1.0 + beta) / (1.0 + beta * beta)).sqrt();
    let c = (eta * rho / 2.0) * (tau * beta / (3.0 * (1.0 + rb))).sqrt();
    let c_hat = (eta / 2.0) * ((1.0 - tau) * rho / 2.0).sqrt();
    // consequences of the hyperparameter domain
    debug_assert!(rho0 > 1.0);
    debug_assert!(tau > 0.0 && tau < 1.0);
    debug_assert!(c <= 1.0 / 2.0f64.sqrt());
    Ok(DerivedConstants {
        rho0,
        tau,
        eta,
        c,
        c_hat,
    })
}

/// `omega_k` for step size `a`; equals 1 when `mu = 0` and lies in
/// `(rho beta, 1)` when `mu a > 0`.
pub fn omega(cfg: &SolverConfig, a: f64) -> f64 {
    let mu = cfg.mu_override;
    (1.0 + cfg.rho * cfg.beta * mu * a) / (1.0 + mu * a)
}

/// `phi_j = sqrt(a_j (beta mu a_{j-1} + 1) / (beta a_{j-1}))`.
pub fn phi(cfg: &SolverConfig, a_j: f64, a_jm1: f64) -> f64 {
    (a_j * (cfg.beta * cfg.mu_override * a_jm1 + 1.0) / (cfg.beta * a_jm1)).sqrt()
}

#[inline]
fn div_or_inf(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        f64::INFINITY
    } else {
        num / den
    }
}

#[inline]
fn lip_ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        // x/0 = inf for x > 0; the 0/0 case carries no curvature information
        if num == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        num / den
    }
}

/// Local Lipschitz estimates of the current cycle:
/// `L_k = |F(u_k) - F(u_{k-1})|_{inv} / |u_k - u_{k-1}|` and
/// `Lhat_k = |F(u_k) - Ftilde_k|_{inv} / |u_k - u_{k-1}|`, with the
/// conventions `x/0 = inf` (x > 0) and `0/0 = 0`.
pub fn local_lip_estimates(
    u_k: &BlockVector,
    u_prev: &BlockVector,
    f_u_k: &BlockVector,
    f_tilde_k: &BlockVector,
    f_u_prev: &BlockVector,
    scaling: &DiagonalScaling,
) -> (f64, f64) {
    let diff_u = sub(u_k, u_prev);
    let denom = scaled_norm(&diff_u, scaling);
    let l = lip_ratio(inverse_scaled_norm(&sub(f_u_k, f_u_prev), scaling), denom);
    let lhat = lip_ratio(inverse_scaled_norm(&sub(f_u_k, f_tilde_k), scaling), denom);
    (l, lhat)
}

fn sub(a: &BlockVector, b: &BlockVector) -> BlockVector {
    let mut out = a.clone();
    for (x, y) in out.as_mut_slice().iter_mut().zip(b.as_slice()) {
        *x -= y;
    }
    out
}

/// The extrapolated block operator
/// `Fbar_k^i = Ftilde_k^i + (a_{k-1} omega_{k-1} / a_k)(F^i(u_{k-1}) - Ftilde_{k-1}^i)`.
pub fn extrapolated_operator(
    f_tilde_k: &[f64],
    f_u_prev: &[f64],
    f_tilde_prev: &[f64],
    a_prev: f64,
    omega_prev: f64,
    a_k: f64,
    out: &mut [f64],
) {
    assert!(a_k > 0.0, "extrapolation needs a positive step");
    let coef = a_prev * omega_prev / a_k;
    for j in 0..out.len() {
        out[j] = f_tilde_k[j] + coef * (f_u_prev[j] - f_tilde_prev[j]);
    }
}

/// Everything a step rule may consult at the start of cycle `k`. Histories
/// carry the below-index-zero conventions already applied: `a_{-1} = a_0`
/// and earlier entries extend by `a_0`, `omega_i = 1` for `i < 0`,
/// `Lhat_i = 0` for `i <= 0`.
#[derive(Debug, Clone, Copy)]
pub struct StepInputs {
    pub k: usize,
    /// `a_{k-1}, a_{k-2}, a_{k-3}, a_{k-4}`
    pub a_prev: [f64; 4],
    /// `omega_{k-1}, omega_{k-2}, omega_{k-3}`
    pub omega_prev: [f64; 3],
    /// `Lhat_{k-1}, Lhat_{k-2}`
    pub lhat_prev: [f64; 2],
    pub l_k: f64,
    pub lhat_k: f64,
}

/// Outcome of the step selection. `s_k` and `curvature_active` are recorded
/// for the two-branch rules where the curvature branch has the closed form
/// `s_k sqrt(a_{k-1}/a_{k-2})`.
#[derive(Debug, Clone, Copy)]
pub struct StepDecision {
    pub a_k: f64,
    pub s_k: Option<f64>,
    pub curvature_active: bool,
}

/// The complete inequality family evaluated at one cycle; returns the list
/// of named upper bounds applicable at this `k`.
pub(crate) fn complete_bounds(
    inp: &StepInputs,
    cst: &DerivedConstants,
    cfg: &SolverConfig,
) -> Vec<(&'static str, f64)> {
    let (eta, tau) = (cst.eta, cst.tau);
    let [a1, a2, a3, a4] = inp.a_prev;
    let [o1, o2, o3] = inp.omega_prev;
    let mut out = Vec::with_capacity(6);
    out.push(("growth: a_k <= rho a_{k-1}", cfg.rho * a1));
    let denom = 1.0 - (1.0 - cfg.gamma) * cfg.beta * cfg.beta * cfg.mu_override * a1;
    let b2 = if denom > 0.0 {
        cfg.beta * (1.0 + cfg.beta) * (1.0 - cfg.gamma) * a1 / denom
    } else {
        f64::INFINITY
    };
    out.push(("growth: strongly convex relaxation", b2));
    let phi1 = phi(cfg, a1, a2);
    out.push((
        "curvature: L_k bound (k>=1)",
        div_or_inf(
            eta / 2.0 * tau.sqrt() * o1 / (3.0f64.sqrt() * (1.0 + o1).sqrt()) * phi1,
            inp.l_k,
        ),
    ));
    out.push((
        "curvature: Lhat_k bound (k>=1)",
        div_or_inf(
            eta / 2.0 * ((1.0 - tau) * o1 / 2.0).sqrt() * phi1,
            inp.lhat_k,
        ),
    ));
    if inp.k >= 2 {
        let phi2 = phi(cfg, a2, a3);
        out.push((
            "curvature: Lhat_{k-1} bound (k>=2)",
            div_or_inf(
                eta * tau.sqrt() / (2.0 * 3.0f64.sqrt()) * o1 * o2.sqrt() / (1.0 + o1).sqrt()
                    * phi2,
                inp.lhat_prev[0],
            ),
        ));
    }
    if inp.k >= 3 {
        let phi3 = phi(cfg, a3, a4);
        out.push((
            "curvature: Lhat_{k-2} bound (k>=3)",
            div_or_inf(
                eta * tau.sqrt() / (2.0 * 3.0f64.sqrt()) * o1 / (1.0 + o1).sqrt()
                    * (o3 / o2).sqrt()
                    * (a1 / a2)
                    * phi3,
                inp.lhat_prev[1],
            ),
        ));
    }
    out
}

/// Largest step allowed by `rule` at this cycle, capped at `cfg.max_step`.
pub fn step_size(
    rule: StepRule,
    inp: &StepInputs,
    cst: &DerivedConstants,
    cfg: &SolverConfig,
) -> StepDecision {
    let [a1, a2, ..] = inp.a_prev;
    let (a_k, s_k, curvature) = match rule {
        StepRule::Complete => {
            let bound = complete_bounds(inp, cst, cfg)
                .into_iter()
                .map(|(_, b)| b)
                .fold(f64::INFINITY, f64::min);
            (bound, None, f64::INFINITY)
        }
        StepRule::SimplifiedKnownMu => {
            let o1 = inp.omega_prev[0];
            let phi1 = phi(cfg, a1, a2);
            let term_l = div_or_inf(
                cst.tau.sqrt() * o1 / (3.0f64.sqrt() * (1.0 + o1).sqrt()),
                inp.l_k,
            );
            let term_lh = div_or_inf(((1.0 - cst.tau) * o1).sqrt() / 2.0f64.sqrt(), inp.lhat_k);
            let curv = cst.eta / 2.0 * term_l.min(term_lh) * phi1;
            ((cst.rho0 * a1).min(curv), None, f64::INFINITY)
        }
        StepRule::SimplifiedUnknownMu => {
            let s = div_or_inf(cst.c, inp.l_k).min(div_or_inf(cst.c_hat, inp.lhat_k));
            let curv = s * (a1 / a2).sqrt();
            ((cst.rho0 * a1).min(curv), Some(s), curv)
        }
        StepRule::FullySpecified => {
            let s = div_or_inf(FULLY_SPECIFIED_C, inp.l_k)
                .min(div_or_inf(FULLY_SPECIFIED_C_HAT, inp.lhat_k));
            let curv = s * (a1 / a2).sqrt();
            ((FULLY_SPECIFIED_GROWTH * a1).min(curv), Some(s), curv)
        }
    };
    let capped = a_k.min(cfg.max_step);
    StepDecision {
        a_k: capped,
        s_k: s_k.filter(|s| s.is_finite()),
        curvature_active: capped == curvature && curvature.is_finite(),
    }
}

// ---------------------------------------------------------------------------
// Backtracking initialization
// ---------------------------------------------------------------------------

/// Output of the one-time backtracking initialization.
#[derive(Debug, Clone)]
pub struct InitOutcome {
    pub a0: f64,
    /// The first prox iterate, recomputed at the accepted `a0`.
    pub u1: BlockVector,
    /// Delayed block operator values at `u1` (prefix new, suffix `u0`).
    pub f_tilde_1: BlockVector,
    pub f_u0: BlockVector,
    /// Number of halvings performed after the first probe of `a_start`.
    pub backtracks: u32,
    pub probe_l1: f64,
    pub probe_lhat1: f64,
    /// `L_1` measured at the accepted `(a0, u1)` pair.
    pub final_l1: f64,
}

fn prox_full_step<P: GmviProblem + ?Sized>(
    problem: &P,
    u0: &BlockVector,
    f_u0: &BlockVector,
    a: f64,
    out: &mut BlockVector,
) {
    let m = problem.partition().num_blocks();
    for i in 0..m {
        let mut buf = vec![0.0; problem.partition().size(i)];
        problem.prox_block_into(i, u0.block(i), f_u0.block(i), a, &mut buf);
        out.block_mut(i).copy_from_slice(&buf);
    }
}

/// Evaluates the delayed operator: block `i` of the output is `F^i` at the
/// point whose blocks before `i` come from `u_new` and the rest from
/// `u_old`. Costs exactly one full pass.
fn eval_spliced<P: GmviProblem + ?Sized>(
    problem: &P,
    u_new: &BlockVector,
    u_old: &BlockVector,
    out: &mut BlockVector,
) {
    let m = problem.partition().num_blocks();
    let mut moving = u_old.clone();
    for i in 0..m {
        let mut buf = vec![0.0; problem.partition().size(i)];
        problem.eval_block_into(&moving, i, &mut buf);
        out.block_mut(i).copy_from_slice(&buf);
        moving.block_mut(i).copy_from_slice(u_new.block(i));
    }
}

fn eval_spliced_parallel<P: GmviProblem + ?Sized>(
    problem: &P,
    u_new: &BlockVector,
    u_old: &BlockVector,
    out: &mut BlockVector,
) {
    use rayon::prelude::*;
    let m = problem.partition().num_blocks();
    let results: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|i| {
            let point = crate::block::prefix_splice(u_new, u_old, i);
            let mut buf = vec![0.0; problem.partition().size(i)];
            problem.eval_block_into(&point, i, &mut buf);
            buf
        })
        .collect();
    for (i, buf) in results.into_iter().enumerate() {
        out.block_mut(i).copy_from_slice(&buf);
    }
}

/// Backtracking initialization: probe with `a = 1`, set
/// `a_start = min{C/L_1, Chat/Lhat_1}` (capped at `max_step` when both
/// estimates vanish), then halve until `a_0 <= 1/(sqrt(2) L_1)`.
pub fn initialize<P: GmviProblem + ?Sized>(
    problem: &P,
    u0: &BlockVector,
    cst: &DerivedConstants,
    cfg: &SolverConfig,
) -> Result<InitOutcome> {
    if !u0.is_finite() {
        return Err(Error::Numeric("initial point is not finite".into()));
    }
    let scaling = problem.scaling();
    let partition = Arc::clone(problem.partition());
    let mut f_u0 = BlockVector::zeros(&partition);
    problem.eval_full_into(u0, &mut f_u0);
    if !f_u0.is_finite() {
        return Err(Error::Numeric(
            "operator not finite at the initial point".into(),
        ));
    }

    // probe with unit step
    let mut u1 = BlockVector::zeros(&partition);
    prox_full_step(problem, u0, &f_u0, 1.0, &mut u1);
    if !u1.is_finite() {
        return Err(Error::Numeric(
            "probe prox step produced a non-finite point".into(),
        ));
    }
    let mut f_tilde = BlockVector::zeros(&partition);
    eval_spliced(problem, &u1, u0, &mut f_tilde);
    let mut f_u1 = BlockVector::zeros(&partition);
    problem.eval_full_into(&u1, &mut f_u1);
    let (probe_l1, probe_lhat1) = local_lip_estimates(&u1, u0, &f_u1, &f_tilde, &f_u0, scaling);

    let a_start = div_or_inf(cst.c, probe_l1)
        .min(div_or_inf(cst.c_hat, probe_lhat1))
        .min(cfg.max_step);

    let mut halvings = 0u32;
    let mut a0;
    let mut final_l1;
    loop {
        a0 = a_start / HALVING_FACTOR.powi(halvings as i32);
        prox_full_step(problem, u0, &f_u0, a0, &mut u1);
        if !u1.is_finite() {
            return Err(Error::Numeric(
                "prox step produced a non-finite point".into(),
            ));
        }
        problem.eval_full_into(&u1, &mut f_u1);
        let denom = scaled_norm(&sub(&u1, u0), scaling);
        final_l1 = lip_ratio(inverse_scaled_norm(&sub(&f_u1, &f_u0), scaling), denom);
        if a0 <= div_or_inf(1.0, 2.0f64.sqrt() * final_l1) {
            break;
        }
        halvings += 1;
        if a0 < 1e-300 {
            return Err(Error::Numeric(
                "backtracking initialization failed to terminate".into(),
            ));
        }
    }
    // delayed operator at the accepted u1
    eval_spliced(problem, &u1, u0, &mut f_tilde);

    Ok(InitOutcome {
        a0,
        u1,
        f_tilde_1: f_tilde,
        f_u0,
        backtracks: halvings,
        probe_l1,
        probe_lhat1,
        final_l1,
    })
}

// ---------------------------------------------------------------------------
// The cycle loop
// ---------------------------------------------------------------------------

/// Stopping policy for [`run`]. At least one cycle is required.
#[derive(Debug, Clone)]
pub struct Stopping {
    pub max_cycles: usize,
    /// Stop once the observer's stop metric drops to this value.
    pub gap_tolerance: Option<f64>,
    /// Stop once cumulative operator passes reach this budget.
    pub pass_budget: Option<f64>,
}

impl Stopping {
    pub fn cycles(max_cycles: usize) -> Self {
        Self {
            max_cycles,
            gap_tolerance: None,
            pass_budget: None,
        }
    }
}

/// Metrics an observer may attach to the just-finished cycle.
#[derive(Debug, Clone, Copy, Default)]
pub struct CycleMetrics {
    pub gap: Option<f64>,
    pub primal: Option<f64>,
    /// Compared against `Stopping::gap_tolerance` when present.
    pub stop_metric: Option<f64>,
}

/// Snapshot of the cycle the solver just finished.
pub struct CycleEvent<'a> {
    pub k: usize,
    pub a_k: f64,
    pub l_k: f64,
    pub lhat_k: f64,
    pub omega_k: f64,
    pub theta_k: f64,
    pub s_k: Option<f64>,
    pub curvature_active: bool,
    /// Cumulative operator passes, including initialization.
    pub passes: f64,
    /// `u_{k+1}`.
    pub u_next: &'a BlockVector,
    /// `u_k` (the iterate entering the ergodic average this cycle).
    pub u_cur: &'a BlockVector,
    /// `v_k`.
    pub v_cur: &'a BlockVector,
    /// Running ergodic point `uhat_k`.
    pub ergodic: &'a BlockVector,
}

/// Final solver output.
#[derive(Debug, Clone)]
pub struct SolveResult {
    /// Ergodic point `uhat_K` (theta-a weighted average of `u_1..u_K`).
    pub ergodic: BlockVector,
    /// `v_{K+1}`, the extrapolated last point; converges linearly under
    /// strong convexity.
    pub last_extrapolated: BlockVector,
    /// `u_{K+1}`.
    pub final_iterate: BlockVector,
    pub trace: RunTrace,
    pub backtracks: u32,
    pub converged: bool,
    pub diverged: bool,
    pub cycles: usize,
}

/// In-flight solver state; drive it with [`Aduca::cycle`] or use [`run`].
pub struct Aduca<'a, P: GmviProblem + ?Sized> {
    meter: CountingProblem<'a, P>,
    cfg: SolverConfig,
    cst: DerivedConstants,
    k: usize,
    u_prev: BlockVector,
    u_cur: BlockVector,
    u_next: BlockVector,
    v_prev: BlockVector,
    v_cur: BlockVector,
    f_u_prev: BlockVector,
    f_u_cur: BlockVector,
    f_tilde_prev: BlockVector,
    f_tilde_cur: BlockVector,
    f_tilde_next: BlockVector,
    f_bar: BlockVector,
    a_hist: [f64; 4],
    omega_hist: [f64; 3],
    lhat_hist: [f64; 2],
    theta_prev: f64,
    acc_u: Vec<f64>,
    acc_w: f64,
    ergodic_buf: BlockVector,
    last: Option<CycleRecord>,
    trace: RunTrace,
    backtracks: u32,
    diverged: bool,
}

impl<'a, P: GmviProblem + ?Sized> Aduca<'a, P> {
    /// Validates the configuration, runs the backtracking initialization,
    /// and sets up cycle 1.
    pub fn new(problem: &'a P, u0: &BlockVector, cfg: SolverConfig) -> Result<Self> {
        let cst = derive_constants(&cfg)?;
        let meter = CountingProblem::new(problem);
        let init = initialize(&meter, u0, &cst, &cfg)?;
        let partition = Arc::clone(problem.partition());
        let d = partition.dim();
        let omega0 = omega(&cfg, init.a0);
        let init_passes = meter.passes();
        let mut trace = RunTrace::new("aduca", problem.eval_cost_units());
        trace.config_summary = format!(
            "rule={} beta={} gamma={} rho={} mu={} max_step={} parallel={}",
            cfg.rule.name(),
            cfg.beta,
            cfg.gamma,
            cfg.rho,
            cfg.mu_override,
            cfg.max_step,
            cfg.parallel
        );
        trace.init = Some(InitRecord {
            a0: init.a0,
            backtracks: init.backtracks,
            probe_l1: init.probe_l1,
            probe_lhat1: init.probe_lhat1,
            final_l1: init.final_l1,
            passes: init_passes,
        });
        if cfg.record_iterates {
            trace.iterates = Some(vec![init.u1.clone()]);
        }
        Ok(Self {
            meter,
            cfg,
            cst,
            k: 1,
            u_prev: u0.clone(),
            u_cur: init.u1.clone(),
            u_next: BlockVector::zeros(&partition),
            v_prev: u0.clone(),
            v_cur: BlockVector::zeros(&partition),
            f_u_prev: init.f_u0.clone(),
            f_u_cur: BlockVector::zeros(&partition),
            f_tilde_prev: init.f_u0,
            f_tilde_cur: init.f_tilde_1,
            f_tilde_next: BlockVector::zeros(&partition),
            f_bar: BlockVector::zeros(&partition),
            a_hist: [init.a0; 4],
            omega_hist: [omega0, 1.0, 1.0],
            lhat_hist: [0.0, 0.0],
            theta_prev: 1.0,
            acc_u: vec![0.0; d],
            acc_w: 0.0,
            ergodic_buf: BlockVector::zeros(&partition),
            last: None,
            trace,
            backtracks: init.backtracks,
            diverged: false,
        })
    }

    pub fn constants(&self) -> &DerivedConstants {
        &self.cst
    }

    pub fn passes(&self) -> f64 {
        self.meter.passes()
    }

    /// Runs one full cycle. Returns false (and stops mutating) once the
    /// iterates have left the finite range.
    pub fn cycle(&mut self) -> bool {
        if self.diverged {
            return false;
        }
        let k = self.k;
        // (a) full operator at the cycle anchor
        self.meter.eval_full_into(&self.u_cur, &mut self.f_u_cur);
        let (l_k, lhat_k) = local_lip_estimates(
            &self.u_cur,
            &self.u_prev,
            &self.f_u_cur,
            &self.f_tilde_cur,
            &self.f_u_prev,
            self.meter.scaling(),
        );
        // (b) step size from cycle-start data only
        let inputs = StepInputs {
            k,
            a_prev: self.a_hist,
            omega_prev: self.omega_hist,
            lhat_prev: self.lhat_hist,
            l_k,
            lhat_k,
        };
        let decision = step_size(self.cfg.rule, &inputs, &self.cst, &self.cfg);
        let a_k = decision.a_k;
        let omega_k = omega(&self.cfg, a_k);
        let theta_k = self.theta_prev / self.omega_hist[0];

        // (c) block updates from cycle-start snapshots
        let beta = self.cfg.beta;
        {
            extrapolated_operator(
                self.f_tilde_cur.as_slice(),
                self.f_u_prev.as_slice(),
                self.f_tilde_prev.as_slice(),
                self.a_hist[0],
                self.omega_hist[0],
                a_k,
                self.f_bar.as_mut_slice(),
            );
            let vc = self.v_cur.as_mut_slice();
            for j in 0..vc.len() {
                vc[j] = (1.0 - beta) * self.u_cur.as_slice()[j] + beta * self.v_prev.as_slice()[j];
            }
        }
        if self.cfg.parallel {
            use rayon::prelude::*;
            let m = self.meter.partition().num_blocks();
            let partition = Arc::clone(self.meter.partition());
            let results: Vec<Vec<f64>> = (0..m)
                .into_par_iter()
                .map(|i| {
                    let mut buf = vec![0.0; partition.size(i)];
                    self.meter.prox_block_into(
                        i,
                        self.v_cur.block(i),
                        self.f_bar.block(i),
                        a_k,
                        &mut buf,
                    );
                    buf
                })
                .collect();
            for (i, buf) in results.into_iter().enumerate() {
                self.u_next.block_mut(i).copy_from_slice(&buf);
            }
        } else {
            let m = self.meter.partition().num_blocks();
            for i in 0..m {
                let mut buf = vec![0.0; self.meter.partition().size(i)];
                self.meter.prox_block_into(
                    i,
                    self.v_cur.block(i),
                    self.f_bar.block(i),
                    a_k,
                    &mut buf,
                );
                self.u_next.block_mut(i).copy_from_slice(&buf);
            }
        }
        if !self.u_next.is_finite() {
            self.diverged = true;
            return false;
        }
        // (d) delayed operator for the next cycle: one amortized full pass
        if self.cfg.parallel {
            eval_spliced_parallel(
                &self.meter,
                &self.u_next,
                &self.u_cur,
                &mut self.f_tilde_next,
            );
        } else {
            eval_spliced(
                &self.meter,
                &self.u_next,
                &self.u_cur,
                &mut self.f_tilde_next,
            );
        }

        // (e)-(f) weights and ergodic accumulators
        let w = theta_k * a_k;
        for (acc, x) in self.acc_u.iter_mut().zip(self.u_cur.as_slice()) {
            *acc += w * x;
        }
        self.acc_w += w;
        for (e, acc) in self.ergodic_buf.as_mut_slice().iter_mut().zip(&self.acc_u) {
            *e = acc / self.acc_w;
        }

        let row = CycleRecord {
            k,
            a: a_k,
            l: l_k,
            lhat: lhat_k,
            omega: omega_k,
            theta: theta_k,
            passes: self.meter.passes(),
            wall_ms: None,
            gap: None,
            primal: None,
            s_k: decision.s_k,
            curvature_active: decision.curvature_active,
        };
        self.trace.rows.push(row.clone());
        if let Some(iters) = self.trace.iterates.as_mut() {
            iters.push(self.u_next.clone());
        }
        self.last = Some(row);

        // rotate state into cycle k+1
        std::mem::swap(&mut self.u_prev, &mut self.u_cur);
        std::mem::swap(&mut self.u_cur, &mut self.u_next);
        std::mem::swap(&mut self.v_prev, &mut self.v_cur);
        std::mem::swap(&mut self.f_u_prev, &mut self.f_u_cur);
        std::mem::swap(&mut self.f_tilde_prev, &mut self.f_tilde_cur);
        std::mem::swap(&mut self.f_tilde_cur, &mut self.f_tilde_next);
        self.a_hist = [a_k, self.a_hist[0], self.a_hist[1], self.a_hist[2]];
        self.omega_hist = [omega_k, self.omega_hist[0], self.omega_hist[1]];
        self.lhat_hist = [lhat_k, self.lhat_hist[0]];
        self.theta_prev = theta_k;
        self.k += 1;
        true
    }

    /// View of the last completed cycle; panics before the first cycle.
    pub fn event(&self) -> CycleEvent<'_> {
        let row = self.last.as_ref().expect("no cycle completed yet");
        CycleEvent {
            k: row.k,
            a_k: row.a,
            l_k: row.l,
            lhat_k: row.lhat,
            omega_k: row.omega,
            theta_k: row.theta,
            s_k: row.s_k,
            curvature_active: row.curvature_active,
            passes: row.passes,
            // after rotation u_cur holds u_{k+1}, u_prev holds u_k, v_prev holds v_k
            u_next: &self.u_cur,
            u_cur: &self.u_prev,
            v_cur: &self.v_prev,
            ergodic: &self.ergodic_buf,
        }
    }

    pub fn attach_metrics(&mut self, metrics: CycleMetrics) {
        if let Some(row) = self.trace.rows.last_mut() {
            row.gap = metrics.gap;
            row.primal = metrics.primal;
        }
        if let Some(row) = self.last.as_mut() {
            row.gap = metrics.gap;
            row.primal = metrics.primal;
        }
    }

    /// Finalizes: `uhat_K` from the accumulators and
    /// `v_{K+1} = (1-beta) u_{K+1} + beta v_K`.
    pub fn finish(self, converged: bool) -> Result<SolveResult> {
        if self.acc_w == 0.0 {
            return Err(Error::Usage(
                "at least one cycle is required (K >= 1)".into(),
            ));
        }
        let partition = Arc::clone(self.u_cur.partition());
        let ergodic = BlockVector::from_vec(
            self.acc_u.iter().map(|x| x / self.acc_w).collect(),
            &partition,
        );
        let beta = self.cfg.beta;
        let v_final = BlockVector::from_vec(
            self.u_cur
                .as_slice()
                .iter()
                .zip(self.v_prev.as_slice())
                .map(|(u, v)| (1.0 - beta) * u + beta * v)
                .collect(),
            &partition,
        );
        let cycles = self.k - 1;
        Ok(SolveResult {
            ergodic,
            last_extrapolated: v_final,
            final_iterate: self.u_cur.clone(),
            trace: self.trace,
            backtracks: self.backtracks,
            converged,
            diverged: self.diverged,
            cycles,
        })
    }
}

/// Runs the solver to the stopping condition with a per-cycle observer that
/// may compute metrics (kept out of pass accounting: evaluate them against
/// the raw problem, not the solver's meter).
pub fn run_observed<P, F>(
    problem: &P,
    u0: &BlockVector,
    cfg: &SolverConfig,
    stopping: &Stopping,
    mut observer: F,
) -> Result<SolveResult>
where
    P: GmviProblem + ?Sized,
    F: FnMut(&CycleEvent<'_>) -> CycleMetrics,
{
    if stopping.max_cycles == 0 {
        return Err(Error::Usage(
            "at least one cycle is required (K >= 1)".into(),
        ));
    }
    let mut solver = Aduca::new(problem, u0, cfg.clone())?;
    let mut converged = false;
    for _ in 0..stopping.max_cycles {
        if !solver.cycle() {
            break;
        }
        let metrics = observer(&solver.event());
        solver.attach_metrics(metrics);
        if let (Some(tol), Some(m)) = (stopping.gap_tolerance, metrics.stop_metric) {
            if m <= tol {
                converged = true;
                break;
            }
        }
        if let Some(budget) = stopping.pass_budget {
            if solver.passes() >= budget {
                break;
            }
        }
    }
    solver.finish(converged)
}

/// [`run_observed`] without metrics.
pub fn run<P: GmviProblem + ?Sized>(
    problem: &P,
    u0: &BlockVector,
    cfg: &SolverConfig,
    stopping: &Stopping,
) -> Result<SolveResult> {
    run_observed(problem, u0, cfg, stopping, |_| CycleMetrics::default())
}

// ---------------------------------------------------------------------------
// Step condition replay
// ---------------------------------------------------------------------------

/// One violated inequality found when replaying a trace.
#[derive(Debug, Clone)]
pub struct StepViolation {
    pub k: usize,
    pub condition: &'static str,
    pub allowed: f64,
    pub actual: f64,
}

/// Re-evaluates the complete step-size inequality families on every recorded
/// cycle with slack `1e-12 * a_k`. A conforming trace returns an empty list;
/// traces from any of the simplified rules must conform.
pub fn check_step_conditions(
    trace: &RunTrace,
    cfg: &SolverConfig,
    cst: &DerivedConstants,
) -> Result<Vec<StepViolation>> {
    let init = trace
        .init
        .as_ref()
        .ok_or_else(|| Error::Usage("trace lacks an initialization record".into()))?;
    let a0 = init.a0;
    let omega0 = omega(cfg, a0);
    let a_at = |j: i64, rows: &[CycleRecord]| -> f64 {
        if j <= 0 {
            a0
        } else {
            rows[(j - 1) as usize].a
        }
    };
    let omega_at = |j: i64, rows: &[CycleRecord]| -> f64 {
        if j < 0 {
            1.0
        } else if j == 0 {
            omega0
        } else {
            rows[(j - 1) as usize].omega
        }
    };
    let lhat_at = |j: i64, rows: &[CycleRecord]| -> f64 {
        if j <= 0 {
            0.0
        } else {
            rows[(j - 1) as usize].lhat
        }
    };
    let mut violations = Vec::new();
    let rows = &trace.rows;
    for (idx, row) in rows.iter().enumerate() {
        let k = row.k;
        debug_assert_eq!(k, idx + 1, "cycle indices must be dense and 1-based");
        let kk = k as i64;
        let inputs = StepInputs {
            k,
            a_prev: [
                a_at(kk - 1, rows),
                a_at(kk - 2, rows),
                a_at(kk - 3, rows),
                a_at(kk - 4, rows),
            ],
            omega_prev: [
                omega_at(kk - 1, rows),
                omega_at(kk - 2, rows),
                omega_at(kk - 3, rows),
            ],
            lhat_prev: [lhat_at(kk - 1, rows), lhat_at(kk - 2, rows)],
            l_k: row.l,
            lhat_k: row.lhat,
        };
        let slack = 1e-12 * row.a;
        for (name, bound) in complete_bounds(&inputs, cst, cfg) {
            if row.a > bound + slack {
                violations.push(StepViolation {
                    k,
                    condition: name,
                    allowed: bound,
                    actual: row.a,
                });
            }
        }
    }
    Ok(violations)
}
