//! Seeded Monte Carlo driver for symbol-error-rate sweeps.
//!
//! Every trial owns an independent random stream keyed by
//! `(base_seed, point_index, trial_index)`, so results do not depend on how
//! trials are scheduled across threads.

mod output;

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::channel::{draw_channel, PathLossModel, Placement};
use crate::constellation::PamConstellation;
use crate::error::{Error, Result};
use crate::likelihood::LikelihoodProblem;
use crate::oracle::{ml_detect, ml_detect_with_incumbent, zf_onebit_detect, OracleBudget};
use crate::refine::two_phase_detect;
use crate::solver::SolverConfig;

pub use output::{emit, read_csv, read_json, round_sig, write_csv, write_json, OutputFormat, SerRecord};

/// Detectors that can appear in a panel.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectorSpec {
    TwoPhase { refine: usize },
    Ml,
    /// Pseudo-inverse of the sign vector; a stand-in for the published
    /// one-bit ZF receiver.
    ZfOneBit,
}

impl DetectorSpec {
    /// Identifier used in output records.
    pub fn id(&self) -> String {
        match self {
            DetectorSpec::TwoPhase { refine } => format!("two_phase_r{refine}"),
            DetectorSpec::Ml => "ml".into(),
            DetectorSpec::ZfOneBit => "zf1bit_standin".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointKind {
    SnrDb,
    PowerDbw,
}

impl PointKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PointKind::SnrDb => "snr_db",
            PointKind::PowerDbw => "power_dbw",
        }
    }
}

impl std::str::FromStr for PointKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "snr_db" => Ok(PointKind::SnrDb),
            "power_dbw" => Ok(PointKind::PowerDbw),
            other => Err(Error::Format(format!("unknown point kind {other:?}"))),
        }
    }
}

/// Users dropped at random around the base station with distance-dependent
/// channel variances and a common transmit power.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PathLossScenario {
    pub model: PathLossModel,
    pub sigma2_dbw: f64,
    pub placement: Placement,
}

impl Default for PathLossScenario {
    fn default() -> Self {
        Self {
            model: PathLossModel::default(),
            sigma2_dbw: -130.0,
            placement: Placement::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sweep {
    /// Symmetric users with unit power and unit channel variance; the point
    /// value is `10 log10(1 / sigma^2)`.
    SnrDb(Vec<f64>),
    /// Path-loss scenario; the point value is the per-user transmit power.
    PowerDbw {
        points: Vec<f64>,
        scenario: PathLossScenario,
    },
}

impl Sweep {
    pub fn points(&self) -> &[f64] {
        match self {
            Sweep::SnrDb(points) | Sweep::PowerDbw { points, .. } => points,
        }
    }

    pub fn kind(&self) -> PointKind {
        match self {
            Sweep::SnrDb(_) => PointKind::SnrDb,
            Sweep::PowerDbw { .. } => PointKind::PowerDbw,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub antennas: usize,
    pub users: usize,
    pub qam: usize,
    pub detectors: Vec<DetectorSpec>,
    pub sweep: Sweep,
    pub trials: u64,
    pub base_seed: u64,
    pub solver: SolverConfig,
    pub budget: OracleBudget,
    /// Worker threads; `None` uses all available cores.
    pub workers: Option<usize>,
}

impl ExperimentConfig {
    /// Two-phase detector only (R = 4 for 4-QAM, else 6, at most 2K),
    /// 1000 trials, seed 0, default solver and oracle budget, all cores.
    ///
    /// ```
    /// use onebit_core::harness::{sweep, DetectorSpec, ExperimentConfig, Sweep};
    ///
    /// let mut cfg = ExperimentConfig::new(16, 2, 16, Sweep::SnrDb(vec![0.0, 10.0]));
    /// cfg.detectors.push(DetectorSpec::Ml);
    /// cfg.trials = 20;
    /// let records = sweep(&cfg).unwrap();
    /// assert_eq!(records.len(), 4);
    /// ```
    pub fn new(antennas: usize, users: usize, qam: usize, sweep: Sweep) -> Self {
        let refine = (if qam == 4 { 4 } else { 6 }).min(2 * users);
        Self {
            antennas,
            users,
            qam,
            detectors: vec![DetectorSpec::TwoPhase { refine }],
            sweep,
            trials: 1000,
            base_seed: 0,
            solver: SolverConfig::default(),
            budget: OracleBudget::default(),
            workers: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.antennas == 0 || self.users == 0 {
            return Err(Error::Config(format!(
                "need at least one antenna and one user, got M = {}, K = {}",
                self.antennas, self.users
            )));
        }
        let pam = PamConstellation::new(self.qam).map_err(|e| Error::Config(e.to_string()))?;
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if self.detectors.is_empty() {
            return Err(Error::Config("detector panel is empty".into()));
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if let Some(v) = self.sweep.points().iter().find(|v| !v.is_finite()) {
            return Err(Error::Config(format!("operating point {v} is not finite")));
        }
        if let Sweep::PowerDbw { scenario, .. } = &self.sweep {
            scenario
                .placement
                .validate()
                .map_err(|e| Error::Config(e.to_string()))?;
            let m = &scenario.model;
            if !(m.d0 > 0.0 && m.lambda > 0.0 && m.nu.is_finite()) || !scenario.sigma2_dbw.is_finite() {
                return Err(Error::Config(format!("invalid path-loss scenario {scenario:?}")));
            }
        }
        self.solver.validate()?;
        if self.detectors.contains(&DetectorSpec::Ml) {
            self.budget.check(pam.order(), 2 * self.users)?;
        }
        Ok(())
    }
}

/// Result of one detector on one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorOutcome {
    /// Users whose complex symbol was decided wrongly.
    pub symbol_errors: u64,
    /// Phase I iterations; zero for non-iterative detectors.
    pub iterations: u64,
    pub seconds: f64,
    /// Negative log-likelihood of the final decision.
    pub objective: f64,
    /// Negative log-likelihood of the Phase I decision (two-phase only).
    pub phase1_objective: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    /// One entry per configured detector, in panel order.
    pub detectors: Vec<DetectorOutcome>,
}

/// A validated configuration ready to run trials.
#[derive(Debug, Clone)]
pub struct Experiment {
    cfg: ExperimentConfig,
    pam: PamConstellation,
}

impl Experiment {
    pub fn new(mut cfg: ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        // Traces are not reported; skip the extra objective evaluations.
        cfg.solver.record_objective = false;
        let dim = 2 * cfg.users;
        for spec in &mut cfg.detectors {
            if let DetectorSpec::TwoPhase { refine } = spec {
                if *refine > dim {
                    log::warn!("refinement parameter {refine} exceeds 2K = {dim}; using {dim}");
                    *refine = dim;
                }
            }
        }
        let pam = PamConstellation::new(cfg.qam)?;
        Ok(Self { cfg, pam })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    /// Runs every detector of the panel on one freshly drawn instance.
    pub fn run_trial(&self, point_index: usize, trial_index: u64) -> Result<TrialOutcome> {
        let cfg = &self.cfg;
        let point = *cfg.sweep.points().get(point_index).ok_or_else(|| {
            Error::InvalidInput(format!("point index {point_index} out of range"))
        })?;
        let (k, pam) = (cfg.users, &self.pam);
        let mut rng = trial_rng(cfg.base_seed, point_index as u64, trial_index);

        let (powers, variances, sigma2) = match &cfg.sweep {
            Sweep::SnrDb(_) => (vec![1.0; k], vec![1.0; k], db_to_linear(-point)),
            Sweep::PowerDbw { scenario, .. } => {
                let variances = (0..k)
                    .map(|_| {
                        let d = scenario.placement.sample_distance(&mut rng);
                        scenario.model.variance(d)
                    })
                    .collect::<Result<Vec<_>>>()?;
                (vec![db_to_linear(point); k], variances, db_to_linear(scenario.sigma2_dbw))
            }
        };
        let channel = draw_channel(&mut rng, cfg.antennas, k, &powers, &variances)?;
        let truth: Vec<usize> = (0..2 * k).map(|_| rng.gen_range(0..pam.order())).collect();
        let s: Vec<f64> = truth.iter().map(|&i| pam.level(i)).collect();
        let sys = channel.lift_to_real(sigma2)?;
        let obs = sys.transmit(&s, &mut rng)?;

        let mut problem = LikelihoodProblem::from_system(&sys, &obs)?;
        let mut norm_seconds = 0.0;
        if cfg.detectors.iter().any(|d| matches!(d, DetectorSpec::TwoPhase { .. })) {
            let start = Instant::now();
            problem.cache_spectral_norm(cfg.solver.power_iter_tol, cfg.solver.power_iter_max);
            norm_seconds = start.elapsed().as_secs_f64();
        }

        // A decision already made in this trial seeds the ML search; the ML
        // answer does not depend on it.
        let mut incumbent: Option<Vec<f64>> = None;
        let mut detectors = Vec::with_capacity(cfg.detectors.len());
        for spec in &cfg.detectors {
            let start = Instant::now();
            let (s_hat, iterations, objective, phase1_objective) = match *spec {
                DetectorSpec::TwoPhase { refine } => {
                    let out = two_phase_detect(&problem, pam, &cfg.solver, refine)?;
                    incumbent.get_or_insert_with(|| out.s_hat.clone());
                    let d = out.diagnostics;
                    (out.s_hat, d.trace.iterations as u64, d.final_objective, Some(d.phase1_objective))
                }
                DetectorSpec::Ml => {
                    let out = match &incumbent {
                        Some(start) => ml_detect_with_incumbent(&problem, pam, k, cfg.budget, start)?,
                        None => ml_detect(&problem, pam, k, cfg.budget)?,
                    };
                    (out.s_hat, 0, out.objective, None)
                }
                DetectorSpec::ZfOneBit => {
                    let s_hat = zf_onebit_detect(&sys, &obs, pam, k)?;
                    (s_hat, 0, f64::NAN, None)
                }
            };
            let mut seconds = start.elapsed().as_secs_f64();
            if matches!(spec, DetectorSpec::TwoPhase { .. }) {
                seconds += norm_seconds;
            }
            let objective = if objective.is_nan() {
                problem.objective_raw(&s_hat)
            } else {
                objective
            };
            detectors.push(DetectorOutcome {
                symbol_errors: count_symbol_errors(pam, &truth, &s_hat, k),
                iterations,
                seconds,
                objective,
                phase1_objective,
            });
        }
        Ok(TrialOutcome { detectors })
    }

    /// All trials of one operating point, aggregated per detector.
    pub fn run_point(&self, point_index: usize) -> Result<Vec<SerRecord>> {
        let outcomes = (0..self.cfg.trials)
            .into_par_iter()
            .map(|t| self.run_trial(point_index, t))
            .collect::<Result<Vec<_>>>()?;
        Ok(self.aggregate(point_index, &outcomes))
    }

    fn aggregate(&self, point_index: usize, outcomes: &[TrialOutcome]) -> Vec<SerRecord> {
        let cfg = &self.cfg;
        let trials = outcomes.len() as u64;
        let symbols_total = trials * cfg.users as u64;
        cfg.detectors
            .iter()
            .enumerate()
            .map(|(j, spec)| {
                let (mut errors, mut iters, mut seconds) = (0u64, 0u64, 0.0f64);
                for o in outcomes {
                    let d = &o.detectors[j];
                    errors += d.symbol_errors;
                    iters += d.iterations;
                    seconds += d.seconds;
                }
                let ser = errors as f64 / symbols_total as f64;
                SerRecord {
                    detector: spec.id(),
                    point_kind: cfg.sweep.kind(),
                    point_value: cfg.sweep.points()[point_index],
                    trials,
                    symbols_total,
                    symbol_errors: errors,
                    ser,
                    ci95: 1.96 * (ser * (1.0 - ser) / symbols_total as f64).sqrt(),
                    wall_time_s: seconds,
                    mean_iters: iters as f64 / trials as f64,
                }
            })
            .collect()
    }

    /// One record per (operating point, detector), points in sweep order and
    /// detectors in panel order.
    pub fn sweep(&self) -> Result<Vec<SerRecord>> {
        let mut builder = rayon::ThreadPoolBuilder::new();
        if let Some(n) = self.cfg.workers {
            builder = builder.num_threads(n);
        }
        let pool = builder
            .build()
            .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
        pool.install(|| {
            let mut records = Vec::new();
            for point_index in 0..self.cfg.sweep.points().len() {
                records.extend(self.run_point(point_index)?);
            }
            Ok(records)
        })
    }
}

/// Validates `cfg` and runs one trial.
pub fn run_trial(cfg: &ExperimentConfig, point_index: usize, trial_index: u64) -> Result<TrialOutcome> {
    Experiment::new(cfg.clone())?.run_trial(point_index, trial_index)
}

/// Validates `cfg` and runs the full sweep.
pub fn sweep(cfg: &ExperimentConfig) -> Result<Vec<SerRecord>> {
    Experiment::new(cfg.clone())?.sweep()
}

/// Independent stream for one trial: the ChaCha key is built from the three
/// indices, so streams never overlap.
pub fn trial_rng(base_seed: u64, point_index: u64, trial_index: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&base_seed.to_le_bytes());
    key[8..16].copy_from_slice(&point_index.to_le_bytes());
    key[16..24].copy_from_slice(&trial_index.to_le_bytes());
    key[24..].copy_from_slice(b"onebit\0\0");
    ChaCha8Rng::from_seed(key)
}

fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// A user's symbol is wrong if either its in-phase or quadrature level is.
fn count_symbol_errors(pam: &PamConstellation, truth: &[usize], s_hat: &[f64], users: usize) -> u64 {
    (0..users)
        .filter(|&k| {
            pam.nearest_index(s_hat[k]) != truth[k]
                || pam.nearest_index(s_hat[k + users]) != truth[k + users]
        })
        .count() as u64
}
