//! Phase I: box-relaxed likelihood minimization followed by per-entry slicing
//! onto the PAM grid.
//!
//! The relaxation replaces `s in S^{2K}` by the box `|s_n| <= max level` and
//! is solved with an accelerated projected gradient method. The step at each
//! iterate `u` is `1 / L(u)` with `L(u) = ||G||_2^2 max_m d_m(u)`, and momentum
//! is reset whenever the gradient at `u` points along the last step
//! (gradient-based adaptive restart).

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constellation::PamConstellation;
use crate::error::{check_len, Error, Result};
use crate::likelihood::LikelihoodProblem;

/// Floor applied to the local smoothness bound before inverting it.
pub const MIN_SMOOTHNESS: f64 = 1e-12;

/// Below this iterate norm the stopping test uses the absolute change.
const ZERO_NORM: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Phase1Method {
    /// Accelerated projected gradient with local-smoothness steps and
    /// adaptive restart. The detector's default.
    Accelerated,
    /// Plain projected gradient with a fixed step, kept for convergence
    /// comparisons. `None` uses `1 / L(s0)`.
    ConstantStep { step: Option<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Stop once `||s_{t+1} - s_t|| / ||s_t||` drops below this.
    pub rel_tol: f64,
    pub max_iters: usize,
    pub power_iter_tol: f64,
    pub power_iter_max: usize,
    /// Record `f(s_t)` at every iteration. Costs one extra objective
    /// evaluation per iteration.
    pub record_objective: bool,
    pub method: Phase1Method,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-6,
            max_iters: 500,
            power_iter_tol: 1e-10,
            power_iter_max: 1000,
            record_objective: true,
            method: Phase1Method::Accelerated,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rel_tol > 0.0 && self.rel_tol.is_finite()) {
            return Err(Error::Config(format!("rel_tol must be positive, got {}", self.rel_tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::Config("max_iters must be at least 1".into()));
        }
        if !(self.power_iter_tol > 0.0) || self.power_iter_max == 0 {
            return Err(Error::Config(
                "power iteration needs a positive tolerance and at least one iteration".into(),
            ));
        }
        if let Phase1Method::ConstantStep { step: Some(eta) } = self.method {
            if !(eta > 0.0 && eta.is_finite()) {
                return Err(Error::Config(format!("constant step must be positive, got {eta}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Tolerance,
    #[default]
    MaxIters,
}

/// Per-run diagnostics of the Phase I solver.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolverTrace {
    pub iterations: usize,
    pub restarts: usize,
    /// `f(s_t)` after each iteration; empty unless recording was requested.
    pub objective_history: Vec<f64>,
    /// Step length `1 / L` used at each iteration.
    pub step_sizes: Vec<f64>,
    pub converged_by: StopReason,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phase1Result {
    /// Relaxed solution, inside the box.
    pub s_soft: Vec<f64>,
    /// `s_soft` sliced entrywise onto the PAM grid.
    pub s_proj: Vec<f64>,
    pub trace: SolverTrace,
}

/// Largest squared singular value of `g` by power iteration on `G^T G`.
///
/// Starts from the normalized all-ones vector. If that start happens to be
/// (numerically) orthogonal to the dominant direction the result would fall
/// below the largest squared column norm, which is a lower bound; in that case
/// the iteration is repeated from the dominant column's unit vector.
pub fn spectral_norm_sq(g: &DMatrix<f64>, tol: f64, max_iters: usize) -> f64 {
    let n = g.ncols();
    if n == 0 || g.nrows() == 0 {
        return 0.0;
    }
    let (best_col, max_col_sq) = g
        .column_iter()
        .map(|c| c.norm_squared())
        .enumerate()
        .fold((0, 0.0), |acc, (i, v)| if v > acc.1 { (i, v) } else { acc });
    if max_col_sq == 0.0 {
        return 0.0;
    }
    let ones = DVector::from_element(n, 1.0 / (n as f64).sqrt());
    let estimate = power_iteration(g, ones, tol, max_iters);
    if estimate >= max_col_sq * (1.0 - 1e-12) {
        return estimate;
    }
    let mut e = DVector::zeros(n);
    e[best_col] = 1.0;
    estimate.max(power_iteration(g, e, tol, max_iters))
}

fn power_iteration(g: &DMatrix<f64>, mut v: DVector<f64>, tol: f64, max_iters: usize) -> f64 {
    let mut lambda = 0.0;
    for _ in 0..max_iters.max(1) {
        let w = g.tr_mul(&(g * &v));
        let rayleigh = v.dot(&w);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        v = w / norm;
        let converged = (rayleigh - lambda).abs() <= tol * rayleigh;
        lambda = rayleigh;
        if converged {
            break;
        }
    }
    lambda
}

/// Entrywise clamp onto the box `|s_n| <= max level`.
pub fn project_box(s: &[f64], pam: &PamConstellation) -> Vec<f64> {
    let mut out = s.to_vec();
    project_box_in_place(&mut out, pam.max_level());
    out
}

fn project_box_in_place(s: &mut [f64], bound: f64) {
    for v in s {
        *v = v.clamp(-bound, bound);
    }
}

/// Solves the box relaxation starting from `s0` (which must lie in the box)
/// and slices the result onto the grid.
pub fn solve_phase1(
    p: &LikelihoodProblem,
    pam: &PamConstellation,
    cfg: &SolverConfig,
    s0: &[f64],
) -> Result<Phase1Result> {
    cfg.validate()?;
    check_len("initial point", s0.len(), p.dim())?;
    let bound = pam.max_level();
    if let Some(v) = s0.iter().find(|v| !(v.abs() <= bound + 1e-12)) {
        return Err(Error::InvalidInput(format!(
            "initial point entry {v} lies outside the box |s| <= {bound}"
        )));
    }
    let g_norm_sq = p
        .g_norm_sq()
        .unwrap_or_else(|| spectral_norm_sq(p.g(), cfg.power_iter_tol, cfg.power_iter_max));

    let (s_soft, trace) = match cfg.method {
        Phase1Method::Accelerated => accelerated(p, g_norm_sq, bound, cfg, s0)?,
        Phase1Method::ConstantStep { step } => constant_step(p, g_norm_sq, bound, cfg, s0, step)?,
    };
    let s_proj = s_soft
        .iter()
        .map(|&v| pam.level(pam.nearest_index(v)))
        .collect();
    Ok(Phase1Result {
        s_soft,
        s_proj,
        trace,
    })
}

fn accelerated(
    p: &LikelihoodProblem,
    g_norm_sq: f64,
    bound: f64,
    cfg: &SolverConfig,
    s0: &[f64],
) -> Result<(Vec<f64>, SolverTrace)> {
    let n = s0.len();
    let mut trace = SolverTrace::default();
    let mut s = DVector::from_row_slice(s0);
    let mut u = s.clone();
    let mut beta = 1.0f64;

    for _ in 0..cfg.max_iters {
        let (grad, d_max) = p.gradient_and_max_curvature(u.as_slice());
        if !grad.iter().all(|v| v.is_finite()) || !d_max.is_finite() {
            return Err(numerical_failure("non-finite gradient", trace));
        }
        let smoothness = (g_norm_sq * d_max).max(MIN_SMOOTHNESS);
        let step = 1.0 / smoothness;

        let mut s_next = &u - &grad * step;
        project_box_in_place(s_next.as_mut_slice(), bound);
        debug_assert!(s_next.iter().all(|v| v.abs() <= bound));

        let beta_next = (1.0 + (1.0 + 4.0 * beta * beta).sqrt()) / 2.0;
        let delta = &s_next - &s;
        if grad.dot(&delta) > 0.0 {
            beta = 1.0;
            u = s_next.clone();
            trace.restarts += 1;
        } else {
            u = &s_next + &delta * ((beta - 1.0) / beta_next);
            beta = beta_next;
        }

        trace.iterations += 1;
        trace.step_sizes.push(step);
        if cfg.record_objective {
            trace.objective_history.push(p.objective_raw(s_next.as_slice()));
        }
        let done = small_change(delta.norm(), s.norm(), cfg.rel_tol);
        s = s_next;
        if done {
            trace.converged_by = StopReason::Tolerance;
            break;
        }
    }
    debug_assert_eq!(s.len(), n);
    Ok((s.as_slice().to_vec(), trace))
}

fn constant_step(
    p: &LikelihoodProblem,
    g_norm_sq: f64,
    bound: f64,
    cfg: &SolverConfig,
    s0: &[f64],
    step: Option<f64>,
) -> Result<(Vec<f64>, SolverTrace)> {
    let mut trace = SolverTrace::default();
    let mut s = DVector::from_row_slice(s0);
    let eta = match step {
        Some(eta) => eta,
        None => {
            let (_, d_max) = p.gradient_and_max_curvature(s0);
            1.0 / (g_norm_sq * d_max).max(MIN_SMOOTHNESS)
        }
    };

    for _ in 0..cfg.max_iters {
        let (grad, _) = p.gradient_and_max_curvature(s.as_slice());
        if !grad.iter().all(|v| v.is_finite()) {
            return Err(numerical_failure("non-finite gradient", trace));
        }
        let mut s_next = &s - &grad * eta;
        project_box_in_place(s_next.as_mut_slice(), bound);

        trace.iterations += 1;
        trace.step_sizes.push(eta);
        if cfg.record_objective {
            trace.objective_history.push(p.objective_raw(s_next.as_slice()));
        }
        let done = small_change((&s_next - &s).norm(), s.norm(), cfg.rel_tol);
        s = s_next;
        if done {
            trace.converged_by = StopReason::Tolerance;
            break;
        }
    }
    Ok((s.as_slice().to_vec(), trace))
}

fn small_change(change: f64, norm: f64, rel_tol: f64) -> bool {
    if norm < ZERO_NORM {
        change < rel_tol
    } else {
        change / norm < rel_tol
    }
}

fn numerical_failure(message: &str, trace: SolverTrace) -> Error {
    Error::NumericalFailure {
        message: format!("{message} after {} iterations", trace.iterations),
        trace: Some(Box::new(trace)),
    }
}
