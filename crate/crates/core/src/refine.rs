//! Phase II: re-decide the least reliable coordinates exactly.
//!
//! The distance between each relaxed entry and its sliced value is a
//! reliability score. The `R` least reliable coordinates may switch to their
//! second-closest level, giving a codebook of `2^R` candidates that all agree
//! with the Phase I decision elsewhere. The candidate with the smallest
//! negative log-likelihood is the final decision.

use num_complex::Complex64;

use crate::constellation::{reconstruct_complex, PamConstellation};
use crate::error::{check_len, Error, Result};
use crate::likelihood::{log_q_raw, LikelihoodProblem};
use crate::solver::{solve_phase1, SolverConfig, SolverTrace};

/// Absolute residuals `|s_soft - s_proj|`.
pub fn residuals(s_soft: &[f64], s_proj: &[f64]) -> Result<Vec<f64>> {
    check_len("projected vector", s_proj.len(), s_soft.len())?;
    Ok(s_soft
        .iter()
        .zip(s_proj)
        .map(|(a, b)| (a - b).abs())
        .collect())
}

/// Indices of the `r` largest residuals, returned in ascending index order.
/// Equal residuals favour the smaller index; `r` beyond the length selects
/// every index.
pub fn select_unreliable(z: &[f64], r: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..z.len()).collect();
    // Stable sort keeps ascending index among equal residuals.
    order.sort_by(|&a, &b| z[b].total_cmp(&z[a]));
    order.truncate(r.min(z.len()));
    order.sort_unstable();
    order
}

/// Coordinates selected for refinement and their alternative levels.
#[derive(Debug, Clone, PartialEq)]
pub struct RefinementPlan {
    refine: usize,
    indices: Vec<usize>,
    alternates: Vec<f64>,
}

impl RefinementPlan {
    /// Selects the `refine` least reliable coordinates of a Phase I output and
    /// pairs each with its second-closest level. `refine` is clamped to `2K`.
    pub fn build(
        s_soft: &[f64],
        s_proj: &[f64],
        refine: usize,
        pam: &PamConstellation,
    ) -> Result<Self> {
        if refine > s_soft.len() {
            log::warn!(
                "refinement parameter {refine} exceeds 2K = {}; clamping",
                s_soft.len()
            );
        }
        let z = residuals(s_soft, s_proj)?;
        let indices = select_unreliable(&z, refine);
        let alternates = indices
            .iter()
            .map(|&n| pam.second_nearest(s_soft[n]))
            .collect::<Result<_>>()?;
        Ok(Self {
            refine,
            indices,
            alternates,
        })
    }

    /// The requested refinement parameter (before clamping).
    pub fn refine(&self) -> usize {
        self.refine
    }

    /// Selected coordinates, ascending.
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    /// Second-closest level for each entry of [`indices`](Self::indices).
    pub fn alternates(&self) -> &[f64] {
        &self.alternates
    }

    pub fn alternate_for(&self, index: usize) -> Option<f64> {
        self.indices
            .iter()
            .position(|&n| n == index)
            .map(|i| self.alternates[i])
    }
}

/// The refined codebook: every combination of base or alternate level over
/// the planned coordinates. Candidates are produced lazily in binary-counter
/// order, bit `i` of the counter selecting the alternate for the `i`-th
/// smallest planned index.
#[derive(Debug, Clone)]
pub struct Codebook {
    base: Vec<f64>,
    indices: Vec<usize>,
    alternates: Vec<f64>,
}

impl Codebook {
    pub fn new(s_proj: &[f64], plan: &RefinementPlan) -> Result<Self> {
        for (&n, &alt) in plan.indices.iter().zip(&plan.alternates) {
            let base = *s_proj.get(n).ok_or_else(|| {
                Error::Shape(format!("planned index {n} outside vector of length {}", s_proj.len()))
            })?;
            if base == alt {
                return Err(Error::InvalidInput(format!(
                    "alternate level for coordinate {n} equals the projected level {base}"
                )));
            }
        }
        if plan.indices.len() >= usize::BITS as usize {
            return Err(Error::InvalidParameter(format!(
                "cannot enumerate 2^{} candidates",
                plan.indices.len()
            )));
        }
        Ok(Self {
            base: s_proj.to_vec(),
            indices: plan.indices.clone(),
            alternates: plan.alternates.clone(),
        })
    }

    pub fn len(&self) -> usize {
        1usize << self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn base(&self) -> &[f64] {
        &self.base
    }

    /// Candidate number `code`.
    pub fn candidate(&self, code: usize) -> Vec<f64> {
        let mut s = self.base.clone();
        for (bit, (&n, &alt)) in self.indices.iter().zip(&self.alternates).enumerate() {
            if code >> bit & 1 == 1 {
                s[n] = alt;
            }
        }
        s
    }

    pub fn iter(&self) -> impl Iterator<Item = Vec<f64>> + '_ {
        (0..self.len()).map(move |code| self.candidate(code))
    }
}

/// Best codebook entry under the likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub s_hat: Vec<f64>,
    /// Position of the winner in enumeration order.
    pub code: usize,
    pub objective: f64,
}

/// Exhaustive likelihood minimization over the codebook.
///
/// `A s` is cached for the base candidate; every other candidate is formed by
/// adding the column updates of its switched coordinates to that cache, in
/// ascending coordinate order. A given candidate therefore gets the same
/// objective value in any codebook that contains it. Partial sums that already
/// reach the incumbent are abandoned, since every term is nonnegative. Ties go
/// to the earliest candidate.
pub fn detect(p: &LikelihoodProblem, codebook: &Codebook) -> Result<Selection> {
    check_len("codebook vectors", codebook.base.len(), p.dim())?;
    let a = p.scaled();
    let rows = a.nrows();
    let base_args = p.arguments_raw(&codebook.base);
    let deltas: Vec<f64> = codebook
        .indices
        .iter()
        .zip(&codebook.alternates)
        .map(|(&n, &alt)| alt - codebook.base[n])
        .collect();

    let mut best_code = 0;
    let mut best = f64::INFINITY;
    let mut args = vec![0.0; rows];
    for code in 0..codebook.len() {
        args.copy_from_slice(&base_args);
        for (bit, (&n, &delta)) in codebook.indices.iter().zip(&deltas).enumerate() {
            if code >> bit & 1 == 1 {
                for (t, g) in args.iter_mut().zip(a.column(n).iter()) {
                    *t += g * delta;
                }
            }
        }
        let mut acc = 0.0;
        let mut pruned = false;
        for &t in &args {
            acc -= log_q_raw(t);
            if acc >= best {
                pruned = true;
                break;
            }
        }
        if !pruned && acc < best {
            best = acc;
            best_code = code;
        }
    }
    if !best.is_finite() {
        return Err(Error::numerical("codebook search produced no finite objective"));
    }
    Ok(Selection {
        s_hat: codebook.candidate(best_code),
        code: best_code,
        objective: best,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoPhaseDiagnostics {
    pub trace: SolverTrace,
    pub s_soft: Vec<f64>,
    pub s_proj: Vec<f64>,
    /// Coordinates that were refined.
    pub refined: Vec<usize>,
    pub candidates: usize,
    /// `f` at the Phase I decision.
    pub phase1_objective: f64,
    /// `f` at the final decision.
    pub final_objective: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TwoPhaseOutput {
    pub x_hat: Vec<Complex64>,
    pub s_hat: Vec<f64>,
    pub diagnostics: TwoPhaseDiagnostics,
}

/// Full detector: Phase I from the origin, then refinement over `refine`
/// coordinates.
pub fn two_phase_detect(
    p: &LikelihoodProblem,
    pam: &PamConstellation,
    cfg: &SolverConfig,
    refine: usize,
) -> Result<TwoPhaseOutput> {
    let phase1 = solve_phase1(p, pam, cfg, &vec![0.0; p.dim()])?;
    let plan = RefinementPlan::build(&phase1.s_soft, &phase1.s_proj, refine, pam)?;
    let codebook = Codebook::new(&phase1.s_proj, &plan)?;
    let selection = detect(p, &codebook)?;
    let phase1_objective = p.objective_raw(&phase1.s_proj);
    let users = p.dim() / 2;
    Ok(TwoPhaseOutput {
        x_hat: reconstruct_complex(&selection.s_hat, users)?,
        s_hat: selection.s_hat,
        diagnostics: TwoPhaseDiagnostics {
            trace: phase1.trace,
            s_soft: phase1.s_soft,
            s_proj: phase1.s_proj,
            refined: plan.indices,
            candidates: codebook.len(),
            phase1_objective,
            final_objective: selection.objective,
        },
    })
}
