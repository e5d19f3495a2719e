//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits with a
//! nonzero status if any criterion fails.

use std::process::ExitCode;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use onebit_core::channel::{draw_channel, OneBitObservation};
use onebit_core::harness::{
    write_csv, DetectorSpec, Experiment, ExperimentConfig, PathLossScenario, Sweep, TrialOutcome,
};
use onebit_core::oracle::OracleBudget;
use onebit_core::refine::{detect, Codebook, RefinementPlan};
use onebit_core::solver::{solve_phase1, Phase1Method, SolverConfig};
use onebit_core::{LikelihoodProblem, PamConstellation};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

struct Verdict {
    id: u8,
    name: &'static str,
    passed: bool,
    detail: String,
}

fn main() -> ExitCode {
    let start = Instant::now();
    let mut objective_pairs = Vec::new();
    let mut verdicts = Vec::new();

    let mut timed = |f: &mut dyn FnMut() -> Verdict| {
        let t = Instant::now();
        let v = f();
        eprintln!("criterion {} done in {:.1} s", v.id, t.elapsed().as_secs_f64());
        verdicts.push(v);
    };
    timed(&mut || {
        let (v, pairs) = ml_coincidence(1, "ML coincidence, 4-QAM (M=32, K=4, R=4)", 32, 4, 4, 4, &[0.0, 5.0, 10.0]);
        objective_pairs.extend(pairs);
        v
    });
    timed(&mut || {
        let (v, pairs) = ml_coincidence(2, "ML coincidence, 16-QAM (M=64, K=3, R=6)", 64, 3, 16, 6, &[5.0, 10.0, 15.0]);
        objective_pairs.extend(pairs);
        v
    });
    timed(&mut || likelihood_inequality(&objective_pairs));
    timed(&mut gradient_check);
    timed(&mut smoothness_bound);
    timed(&mut acceleration_benefit);
    timed(&mut refinement_monotonicity);
    timed(&mut baseline_ordering);
    timed(&mut numerical_robustness);
    timed(&mut reproducibility);

    let mut failed = 0;
    for v in &verdicts {
        let tag = if v.passed { "PASS" } else { "FAIL" };
        println!("[{tag}] criterion {:>2}: {} -- {}", v.id, v.name, v.detail);
        failed += usize::from(!v.passed);
    }
    println!(
        "acceptance: {} passed, {} failed ({:.1} s)",
        verdicts.len() - failed,
        failed,
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn snr_config(
    antennas: usize,
    users: usize,
    qam: usize,
    detectors: Vec<DetectorSpec>,
    snr_db: &[f64],
    trials: u64,
    seed: u64,
) -> ExperimentConfig {
    ExperimentConfig {
        antennas,
        users,
        qam,
        detectors,
        sweep: Sweep::SnrDb(snr_db.to_vec()),
        trials,
        base_seed: seed,
        solver: SolverConfig::default(),
        budget: OracleBudget::default(),
        workers: None,
    }
}

fn run_all(exp: &Experiment, point: usize) -> Vec<TrialOutcome> {
    (0..exp.config().trials)
        .into_par_iter()
        .map(|t| exp.run_trial(point, t).expect("trial failed"))
        .collect()
}

/// Two-phase and ML symbol-error rates agree within three binomial standard
/// errors at every point. Returns the (phase I, ML) objective pairs too.
fn ml_coincidence(
    id: u8,
    name: &'static str,
    antennas: usize,
    users: usize,
    qam: usize,
    refine: usize,
    snr_db: &[f64],
) -> (Verdict, Vec<(f64, f64)>) {
    const TRIALS: u64 = 20_000;
    let cfg = snr_config(
        antennas,
        users,
        qam,
        vec![DetectorSpec::TwoPhase { refine }, DetectorSpec::Ml],
        snr_db,
        TRIALS,
        1000 + u64::from(id),
    );
    let exp = Experiment::new(cfg).unwrap();
    let mut passed = true;
    let mut parts = Vec::new();
    let mut pairs = Vec::new();
    for (i, snr) in snr_db.iter().enumerate() {
        let outcomes = run_all(&exp, i);
        let n = (TRIALS * users as u64) as f64;
        let e_tp: u64 = outcomes.iter().map(|o| o.detectors[0].symbol_errors).sum();
        let e_ml: u64 = outcomes.iter().map(|o| o.detectors[1].symbol_errors).sum();
        let (p_tp, p_ml) = (e_tp as f64 / n, e_ml as f64 / n);
        let pooled = (p_tp + p_ml) / 2.0;
        let se = (pooled * (1.0 - pooled) / n).sqrt();
        let ok = (p_tp - p_ml).abs() <= 3.0 * se;
        passed &= ok;
        parts.push(format!("{snr} dB: {p_tp:.5} vs {p_ml:.5} (3se {:.5})", 3.0 * se));
        pairs.extend(
            outcomes
                .iter()
                .map(|o| (o.detectors[0].phase1_objective.unwrap(), o.detectors[1].objective)),
        );
    }
    let verdict = Verdict {
        id,
        name,
        passed,
        detail: parts.join("; "),
    };
    (verdict, pairs)
}

fn likelihood_inequality(pairs: &[(f64, f64)]) -> Verdict {
    let violations = pairs.iter().filter(|(f1, fml)| f1 < &(fml - 1e-9) || f1.is_nan() || fml.is_nan()).count();
    Verdict {
        id: 3,
        name: "f(phase I) >= f(ML)",
        passed: violations == 0 && pairs.len() >= 50_000,
        detail: format!("{violations} violations in {} trials", pairs.len()),
    }
}

fn random_problem(rng: &mut ChaCha8Rng, m: usize, k: usize, gamma: f64) -> (LikelihoodProblem, PamConstellation) {
    let qam = if rng.gen_bool(0.5) { 4 } else { 16 };
    let pam = PamConstellation::new(qam).unwrap();
    let ch = draw_channel(rng, m, k, &vec![1.0; k], &vec![1.0; k]).unwrap();
    let sys = ch.lift_to_real(2.0 / gamma).unwrap();
    let s: Vec<f64> = (0..2 * k).map(|_| pam.level(rng.gen_range(0..pam.order()))).collect();
    let obs = sys.transmit(&s, rng).unwrap();
    (LikelihoodProblem::from_system(&sys, &obs).unwrap(), pam)
}

fn box_point(rng: &mut ChaCha8Rng, n: usize, pam: &PamConstellation) -> Vec<f64> {
    let b = pam.max_level();
    (0..n).map(|_| rng.gen_range(-b..=b)).collect()
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (rng.gen_range(lo.ln()..=hi.ln())).exp()
}

fn gradient_check() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let m = rng.gen_range(1..=64);
        let k = rng.gen_range(1..=8);
        let gamma = log_uniform(&mut rng, 0.1, 100.0);
        let (p, pam) = random_problem(&mut rng, m, k, gamma);
        let s = box_point(&mut rng, 2 * k, &pam);
        let grad = p.gradient(&s).unwrap();
        let h = 1e-6;
        let fd = DVector::from_fn(2 * k, |i, _| {
            let (mut up, mut dn) = (s.clone(), s.clone());
            up[i] += h;
            dn[i] -= h;
            (p.objective(&up).unwrap() - p.objective(&dn).unwrap()) / (2.0 * h)
        });
        let err = (&grad - &fd).norm() / grad.norm().max(1e-300);
        worst = worst.max(err);
    }
    Verdict {
        id: 4,
        name: "gradient vs central differences",
        passed: worst < 1e-5,
        detail: format!("worst relative error {worst:.2e} over 100 instances"),
    }
}

fn smoothness_bound() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let m = rng.gen_range(1..=8);
        let k = rng.gen_range(1..=2);
        let gamma = log_uniform(&mut rng, 0.1, 100.0);
        let (mut p, pam) = random_problem(&mut rng, m, k, gamma);
        p.cache_spectral_norm(1e-12, 100_000);
        let s = box_point(&mut rng, 2 * k, &pam);
        let n = 2 * k;
        let h = 1e-5;
        let mut hess = DMatrix::from_fn(n, n, |i, j| {
            let (mut up, mut dn) = (s.clone(), s.clone());
            up[j] += h;
            dn[j] -= h;
            (p.gradient(&up).unwrap()[i] - p.gradient(&dn).unwrap()[i]) / (2.0 * h)
        });
        hess = (&hess + hess.transpose()) * 0.5;
        let spectral = hess
            .symmetric_eigenvalues()
            .iter()
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        let bound = p.local_smoothness(&s).unwrap();
        worst = worst.max(spectral / bound);
    }
    Verdict {
        id: 5,
        name: "Hessian norm <= local smoothness bound",
        passed: worst <= 1.001,
        detail: format!("max ||H|| / L = {worst:.6} over 100 instances"),
    }
}

fn acceleration_benefit() -> Verdict {
    let (m, k) = (64, 8);
    let pam = PamConstellation::new(4).unwrap();
    let sigma2 = 10f64.powf(-1.0);
    let base = SolverConfig {
        rel_tol: 1e-6,
        max_iters: 1_000_000,
        record_objective: false,
        ..SolverConfig::default()
    };
    let constant = SolverConfig {
        method: Phase1Method::ConstantStep { step: None },
        ..base.clone()
    };
    let results: Vec<(usize, usize)> = (0..100u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(600 + i);
            let ch = draw_channel(&mut rng, m, k, &[1.0; 8], &[1.0; 8]).unwrap();
            let sys = ch.lift_to_real(sigma2).unwrap();
            let s: Vec<f64> = (0..2 * k).map(|_| pam.level(rng.gen_range(0..2))).collect();
            let obs = sys.transmit(&s, &mut rng).unwrap();
            let p = LikelihoodProblem::from_system(&sys, &obs).unwrap();
            let zero = vec![0.0; 2 * k];
            let fast = solve_phase1(&p, &pam, &base, &zero).unwrap().trace.iterations;
            let slow = solve_phase1(&p, &pam, &constant, &zero).unwrap().trace.iterations;
            (fast, slow)
        })
        .collect();
    let wins = results.iter().filter(|(a, c)| a < c).count();
    let mean = |f: fn(&(usize, usize)) -> usize| results.iter().map(f).sum::<usize>() as f64 / 100.0;
    Verdict {
        id: 6,
        name: "accelerated beats constant step",
        passed: wins >= 90,
        detail: format!(
            "fewer iterations on {wins}/100 (mean {:.1} vs {:.1})",
            mean(|r| r.0),
            mean(|r| r.1)
        ),
    }
}

fn refinement_monotonicity() -> Verdict {
    let (m, k) = (32, 4);
    let pam = PamConstellation::new(16).unwrap();
    let cfg = SolverConfig {
        record_objective: false,
        ..SolverConfig::default()
    };
    let violations: usize = (0..1000u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(700 + i);
            let snr_db = rng.gen_range(0.0..20.0);
            let ch = draw_channel(&mut rng, m, k, &[1.0; 4], &[1.0; 4]).unwrap();
            let sys = ch.lift_to_real(10f64.powf(-snr_db / 10.0)).unwrap();
            let s: Vec<f64> = (0..2 * k).map(|_| pam.level(rng.gen_range(0..4))).collect();
            let obs = sys.transmit(&s, &mut rng).unwrap();
            let p = LikelihoodProblem::from_system(&sys, &obs).unwrap();
            let phase1 = solve_phase1(&p, &pam, &cfg, &[0.0; 8]).unwrap();
            let values: Vec<f64> = [0, 2, 4, 6]
                .iter()
                .map(|&r| {
                    let plan = RefinementPlan::build(&phase1.s_soft, &phase1.s_proj, r, &pam).unwrap();
                    let book = Codebook::new(&phase1.s_proj, &plan).unwrap();
                    detect(&p, &book).unwrap().objective
                })
                .collect();
            usize::from(values.windows(2).any(|w| w[1] > w[0]))
        })
        .sum();
    Verdict {
        id: 7,
        name: "f(final) non-increasing in R",
        passed: violations == 0,
        detail: format!("{violations} violations in 1000 instances"),
    }
}

fn baseline_ordering() -> Verdict {
    const TRIALS: u64 = 20_000;
    let points = vec![-40.0, -20.0, 0.0];
    let cfg = ExperimentConfig {
        sweep: Sweep::PowerDbw {
            points: points.clone(),
            scenario: PathLossScenario::default(),
        },
        ..snr_config(
            64,
            4,
            4,
            vec![DetectorSpec::TwoPhase { refine: 4 }, DetectorSpec::ZfOneBit],
            &[],
            TRIALS,
            808,
        )
    };
    let records = Experiment::new(cfg).unwrap().sweep().unwrap();
    let curve: Vec<String> = records
        .chunks(2)
        .map(|pair| format!("{} dBW: {:.5}/{:.5}", pair[0].point_value, pair[0].ser, pair[1].ser))
        .collect();
    let last = &records[records.len() - 2..];
    let (tp, zf) = (last[0].ser, last[1].ser);
    Verdict {
        id: 8,
        name: "ZF stand-in SER >= 2x two-phase SER at highest power",
        passed: zf > 0.0 && zf >= 2.0 * tp,
        detail: format!("two-phase/ZF {}", curve.join("; ")),
    }
}

fn numerical_robustness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut bad = 0usize;
    let mut evaluations = 0usize;
    let mut max_t = 0.0f64;
    while evaluations < 10_000 {
        let m = rng.gen_range(1..=32);
        let k = rng.gen_range(1..=4);
        let pam = PamConstellation::new(if rng.gen_bool(0.5) { 4 } else { 64 }).unwrap();
        let gamma = log_uniform(&mut rng, 1e-3, 1e6);
        let mut g = DMatrix::from_fn(2 * m, 2 * k, |_, _| rng.sample::<f64, _>(StandardNormal));
        let s: Vec<f64> = if rng.gen_bool(0.3) {
            (0..2 * k).map(|_| pam.max_level() * if rng.gen_bool(0.5) { 1.0 } else { -1.0 }).collect()
        } else {
            box_point(&mut rng, 2 * k, &pam)
        };
        // Rescale so the largest |g_m^T s| hits a target in [1e-3, 50].
        let gs = &g * DVector::from_row_slice(&s);
        let peak = gs.amax();
        if peak > 0.0 {
            g *= log_uniform(&mut rng, 1e-3, 50.0) / peak;
        }
        let bits: Vec<i8> = (0..2 * m).map(|_| if rng.gen_bool(0.5) { 1 } else { -1 }).collect();
        let obs = OneBitObservation::new(bits).unwrap();
        let mut p = LikelihoodProblem::new(g, &obs, gamma).unwrap();
        p.cache_spectral_norm(1e-10, 1000);
        max_t = max_t.max(p.arguments(&s).unwrap().iter().fold(0.0f64, |a, t| a.max(t.abs())));
        let f = p.objective(&s).unwrap();
        let grad = p.gradient(&s).unwrap();
        let d = p.curvature(&s).unwrap();
        let l = p.local_smoothness(&s).unwrap();
        let finite = f.is_finite() && grad.iter().all(|v| v.is_finite()) && d.iter().all(|v| v.is_finite()) && l.is_finite();
        bad += usize::from(!finite);
        evaluations += 1;
    }
    Verdict {
        id: 9,
        name: "no NaN/Inf under stress",
        passed: bad == 0,
        detail: format!("{bad} non-finite results in {evaluations} evaluations (max |t| = {max_t:.3e})"),
    }
}

fn reproducibility() -> Verdict {
    let run = |workers: usize| -> String {
        let cfg = ExperimentConfig {
            workers: Some(workers),
            ..snr_config(
                16,
                2,
                16,
                vec![DetectorSpec::TwoPhase { refine: 2 }, DetectorSpec::Ml, DetectorSpec::ZfOneBit],
                &[0.0, 6.0, 12.0],
                300,
                42,
            )
        };
        let records = Experiment::new(cfg).unwrap().sweep().unwrap();
        let mut buf = Vec::new();
        write_csv(&records, &mut buf).unwrap();
        String::from_utf8(buf)
            .unwrap()
            .lines()
            .map(|line| {
                let mut cols: Vec<&str> = line.split(',').collect();
                cols.remove(8);
                cols.join(",")
            })
            .collect::<Vec<_>>()
            .join("\n")
    };
    let a = run(1);
    let b = run(1);
    let c = run(8);
    let passed = a == b && a == c && a.lines().count() == 10;
    Verdict {
        id: 10,
        name: "byte-identical CSV across runs and worker counts",
        passed,
        detail: format!(
            "repeat run {}, 1 vs 8 workers {}",
            if a == b { "identical" } else { "differs" },
            if a == c { "identical" } else { "differs" }
        ),
    }
}
