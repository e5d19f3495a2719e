//! Reference detectors: exhaustive maximum likelihood and a one-bit
//! zero-forcing baseline.

use nalgebra::{DMatrix, DVector};

use crate::channel::{OneBitObservation, RealizedSystem};
use crate::constellation::PamConstellation;
use crate::error::{check_len, Error, Result};
use crate::likelihood::{log_q_raw, LikelihoodProblem};

/// Cap on the number of grid points the ML search may visit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleBudget {
    pub max_points: u64,
}

impl Default for OracleBudget {
    fn default() -> Self {
        Self {
            max_points: 1 << 20,
        }
    }
}

impl OracleBudget {
    /// Checks that `sqrt(Q)^{2K}` points fit in the budget.
    pub fn check(&self, levels: usize, dim: usize) -> Result<u128> {
        if self.max_points == 0 {
            return Err(Error::Config("oracle budget must allow at least one point".into()));
        }
        let needed = (levels as u128)
            .checked_pow(dim as u32)
            .unwrap_or(u128::MAX);
        if needed > u128::from(self.max_points) {
            return Err(Error::Budget {
                needed,
                max: self.max_points,
            });
        }
        Ok(needed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlDetection {
    pub s_hat: Vec<f64>,
    pub objective: f64,
    /// Level index of each coordinate.
    pub indices: Vec<usize>,
}

/// Exact minimizer of the negative log-likelihood over `S^{2K}`.
///
/// Depth-first branch and bound over the coordinates, with partial products
/// `sum_{n<j} a_n s_n` carried down the tree. Since `-ln Q` is increasing,
/// replacing every undecided coordinate by its worst case gives a lower bound
/// for a whole subtree; subtrees whose bound exceeds the incumbent are
/// skipped, and siblings are visited best bound first. Among equal minimizers
/// the lexicographically first index vector (coordinate 0 most significant)
/// is returned, independent of visit order.
pub fn ml_detect(
    p: &LikelihoodProblem,
    pam: &PamConstellation,
    users: usize,
    budget: OracleBudget,
) -> Result<MlDetection> {
    search(p, pam, users, budget, None)
}

/// Same result as [`ml_detect`], but the search starts with `incumbent` (a
/// grid point, e.g. another detector's decision) as the best point so far,
/// which lets it discard more of the tree early.
pub fn ml_detect_with_incumbent(
    p: &LikelihoodProblem,
    pam: &PamConstellation,
    users: usize,
    budget: OracleBudget,
    incumbent: &[f64],
) -> Result<MlDetection> {
    check_len("incumbent", incumbent.len(), 2 * users)?;
    let indices: Vec<usize> = incumbent.iter().map(|&v| pam.nearest_index(v)).collect();
    if indices.iter().zip(incumbent).any(|(&i, &v)| pam.level(i) != v) {
        return Err(Error::InvalidInput("incumbent is not a grid point".into()));
    }
    search(p, pam, users, budget, Some(indices))
}

fn search(
    p: &LikelihoodProblem,
    pam: &PamConstellation,
    users: usize,
    budget: OracleBudget,
    incumbent: Option<Vec<usize>>,
) -> Result<MlDetection> {
    let dim = 2 * users;
    check_len("channel columns", p.dim(), dim)?;
    budget.check(pam.order(), dim)?;

    let a = p.scaled();
    let rows = a.nrows();
    // slack[j][m] = max_level * sum_{n >= j} |a_mn|
    let mut slack = vec![vec![0.0; rows]; dim + 1];
    for j in (0..dim).rev() {
        let (head, tail) = slack.split_at_mut(j + 1);
        for ((out, &next), &g) in head[j].iter_mut().zip(&tail[0]).zip(a.column(j).iter()) {
            *out = next + pam.max_level() * g.abs();
        }
    }
    let mut search = Search {
        a,
        levels: pam.levels(),
        slack,
        digits: vec![0; dim],
        best: f64::INFINITY,
        best_digits: vec![0; dim],
    };
    if let Some(digits) = incumbent {
        search.best = search.value_of(&digits);
        search.best_digits = digits;
    }
    search.descend(0, &vec![0.0; rows]);
    finish(pam, search.best_digits, search.best)
}

/// Relative margin applied before discarding a subtree, so rounding in the
/// bound can never drop a tied or better point.
const PRUNE_MARGIN: f64 = 1e-9;

struct Search<'a> {
    a: &'a DMatrix<f64>,
    levels: &'a [f64],
    slack: Vec<Vec<f64>>,
    digits: Vec<usize>,
    best: f64,
    best_digits: Vec<usize>,
}

impl Search<'_> {
    fn cutoff(&self) -> f64 {
        self.best + PRUNE_MARGIN * (1.0 + self.best.abs())
    }

    // `-sum ln Q(args)`, abandoned once it passes `limit`.
    fn bounded_sum(args: impl Iterator<Item = f64>, limit: f64) -> f64 {
        let mut acc = 0.0;
        for t in args {
            acc -= log_q_raw(t);
            if acc > limit {
                break;
            }
        }
        acc
    }

    // Objective of one point, with the same arithmetic as the tree walk so
    // that ties compare exactly.
    fn value_of(&self, digits: &[usize]) -> f64 {
        let last = digits.len() - 1;
        let mut prefix = vec![0.0; self.a.nrows()];
        for (j, &d) in digits[..last].iter().enumerate() {
            let s = self.levels[d];
            for (out, &g) in prefix.iter_mut().zip(self.a.column(j).iter()) {
                *out += g * s;
            }
        }
        let s = self.levels[digits[last]];
        Self::bounded_sum(
            prefix.iter().zip(self.a.column(last).iter()).map(|(&pre, &g)| pre + g * s),
            f64::INFINITY,
        )
    }

    fn descend(&mut self, j: usize, prefix: &[f64]) {
        let col = self.a.column(j);
        if j + 1 == self.digits.len() {
            for (d, &s) in self.levels.iter().enumerate() {
                let value = Self::bounded_sum(prefix.iter().zip(col.iter()).map(|(&pre, &g)| pre + g * s), self.best);
                self.digits[j] = d;
                if value < self.best || (value == self.best && self.digits < self.best_digits) {
                    self.best = value;
                    self.best_digits.copy_from_slice(&self.digits);
                }
            }
            return;
        }

        let slack = &self.slack[j + 1];
        let cutoff = self.cutoff();
        let mut children: Vec<(f64, usize, Vec<f64>)> = self
            .levels
            .iter()
            .enumerate()
            .map(|(d, &s)| {
                let next: Vec<f64> = prefix.iter().zip(col.iter()).map(|(&pre, &g)| pre + g * s).collect();
                let bound = Self::bounded_sum(next.iter().zip(slack).map(|(&t, &r)| t - r), cutoff);
                (bound, d, next)
            })
            .filter(|(bound, _, _)| !(*bound > cutoff))
            .collect();
        children.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
        for (bound, d, next) in children {
            if bound > self.cutoff() {
                continue;
            }
            self.digits[j] = d;
            self.descend(j + 1, &next);
        }
    }
}

fn finish(pam: &PamConstellation, indices: Vec<usize>, objective: f64) -> Result<MlDetection> {
    if !objective.is_finite() {
        return Err(Error::numerical("ML search produced no finite objective"));
    }
    Ok(MlDetection {
        s_hat: indices.iter().map(|&i| pam.level(i)).collect(),
        objective,
        indices,
    })
}

/// Relative singular-value threshold below which `G` counts as rank deficient.
const RANK_TOL: f64 = 1e-10;

/// One-bit zero-forcing stand-in: `G^+ b`, rescaled to unit average symbol
/// energy per user, then sliced onto the grid.
///
/// One-bit outputs carry no amplitude information, so some rescaling is
/// needed before slicing; the unit-energy normalization is a convention of
/// this crate and only matters for alphabets with more than two levels.
pub fn zf_onebit_detect(
    sys: &RealizedSystem,
    obs: &OneBitObservation,
    pam: &PamConstellation,
    users: usize,
) -> Result<Vec<f64>> {
    let g = sys.g();
    check_len("channel columns", g.ncols(), 2 * users)?;
    check_len("observation", obs.len(), g.nrows())?;
    if g.nrows() < g.ncols() {
        return Err(Error::numerical(format!(
            "zero forcing needs 2M >= 2K, got {} x {}",
            g.nrows(),
            g.ncols()
        )));
    }
    let svd = g.clone().svd(true, true);
    let s_max = svd.singular_values.max();
    let s_min = svd.singular_values.min();
    if !(s_max > 0.0) || s_min <= RANK_TOL * s_max {
        return Err(Error::numerical(format!(
            "channel matrix is rank deficient (singular values {s_min:e}..{s_max:e})"
        )));
    }
    let pinv = svd
        .pseudo_inverse(RANK_TOL * s_max)
        .map_err(|e| Error::numerical(e.to_string()))?;
    let b = DVector::from_iterator(obs.len(), obs.bits().iter().map(|&v| f64::from(v)));
    let estimate = pinv * b;
    let norm = estimate.norm();
    let alpha = if norm > 0.0 {
        (users as f64).sqrt() / norm
    } else {
        1.0
    };
    Ok(estimate
        .iter()
        .map(|&v| pam.level(pam.nearest_index(alpha * v)))
        .collect())
}
