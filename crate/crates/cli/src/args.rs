use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{ArgGroup, Parser, ValueEnum};
use onebit_core::channel::{ExponentSign, PathLossModel, Placement};
use onebit_core::harness::{DetectorSpec, ExperimentConfig, OutputFormat, PathLossScenario, Sweep};
use onebit_core::oracle::OracleBudget;
use onebit_core::solver::SolverConfig;

/// Bad user input; reported with exit code 2.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn config_err(msg: impl Into<String>) -> anyhow::Error {
    ConfigError(msg.into()).into()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum DetectorKind {
    TwoPhase,
    Ml,
    Zf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

/// Monte Carlo symbol error rates of one-bit massive MIMO detectors.
#[derive(Debug, Parser)]
#[command(name = "simulate", version, args_override_self = true)]
#[command(group(ArgGroup::new("sweep").required(true).args(["snr_db", "power_dbw"])))]
pub struct Cli {
    /// Base-station antennas M
    #[arg(long)]
    pub antennas: usize,

    /// Users K
    #[arg(long)]
    pub users: usize,

    /// QAM order (4, 16, 64, ...)
    #[arg(long, default_value_t = 4)]
    pub qam: usize,

    /// Detector panel
    #[arg(long, value_enum, value_delimiter = ',', default_value = "two_phase")]
    pub detectors: Vec<DetectorKind>,

    /// Coordinates re-tested in the refinement stage [default: 4 for 4-QAM, 6 otherwise]
    #[arg(long)]
    pub refine: Option<usize>,

    /// SNR points in dB, as start:step:stop or a comma list
    #[arg(long, allow_hyphen_values = true)]
    pub snr_db: Option<String>,

    /// Transmit powers in dBW for the path-loss scenario, as start:step:stop or a comma list
    #[arg(long, allow_hyphen_values = true)]
    pub power_dbw: Option<String>,

    /// Path-loss scenario, e.g. d0=100,nu=3.2,lambda=0.15,sigma2dbw=-130,exp_sign=+1
    /// (also radius, min_dist, bs_height)
    #[arg(long, requires = "power_dbw", allow_hyphen_values = true)]
    pub pathloss: Option<String>,

    /// Trials per operating point
    #[arg(long, default_value_t = 1000)]
    pub trials: u64,

    /// Base seed
    #[arg(long, default_value_t = 0)]
    pub seed: u64,

    /// Phase I stopping threshold on the relative iterate change
    #[arg(long, default_value_t = 1e-6)]
    pub rel_tol: f64,

    /// Phase I iteration cap
    #[arg(long, default_value_t = 500)]
    pub max_iters: usize,

    /// Largest number of grid points the ML search may visit
    #[arg(long, default_value_t = 1 << 20)]
    pub ml_max_points: u64,

    /// Output file; standard output when omitted
    #[arg(long)]
    pub out: Option<PathBuf>,

    #[arg(long, value_enum, default_value = "csv")]
    pub format: Format,

    /// Worker threads [default: all cores]
    #[arg(long)]
    pub workers: Option<usize>,

    /// Flat key=value file with the same keys as the flags; flags win
    #[arg(long)]
    pub config: Option<PathBuf>,
}

impl Cli {
    pub fn output_format(&self) -> OutputFormat {
        match self.format {
            Format::Csv => OutputFormat::Csv,
            Format::Json => OutputFormat::Json,
        }
    }

    pub fn experiment(&self) -> anyhow::Result<ExperimentConfig> {
        let refine = self
            .refine
            .unwrap_or_else(|| (if self.qam == 4 { 4 } else { 6 }).min(2 * self.users));
        let mut detectors = Vec::new();
        for kind in &self.detectors {
            let spec = match kind {
                DetectorKind::TwoPhase => DetectorSpec::TwoPhase { refine },
                DetectorKind::Ml => DetectorSpec::Ml,
                DetectorKind::Zf => DetectorSpec::ZfOneBit,
            };
            if !detectors.contains(&spec) {
                detectors.push(spec);
            }
        }
        let sweep = match (&self.snr_db, &self.power_dbw) {
            (Some(spec), None) => Sweep::SnrDb(parse_points(spec)?),
            (None, Some(spec)) => Sweep::PowerDbw {
                points: parse_points(spec)?,
                scenario: match &self.pathloss {
                    Some(s) => parse_pathloss(s)?,
                    None => PathLossScenario::default(),
                },
            },
            _ => return Err(config_err("give exactly one of --snr-db and --power-dbw")),
        };
        Ok(ExperimentConfig {
            antennas: self.antennas,
            users: self.users,
            qam: self.qam,
            detectors,
            sweep,
            trials: self.trials,
            base_seed: self.seed,
            solver: SolverConfig {
                rel_tol: self.rel_tol,
                max_iters: self.max_iters,
                ..SolverConfig::default()
            },
            budget: OracleBudget {
                max_points: self.ml_max_points,
            },
            workers: self.workers,
        })
    }
}

/// Expands a config file into `--key value` pairs placed ahead of the real
/// arguments, so anything given on the command line takes precedence.
pub fn merge_config_file(args: Vec<String>) -> anyhow::Result<Vec<String>> {
    let Some(path) = find_config_path(&args) else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path).with_context(|| format!("reading config file {}", path.display()))?;
    let mut merged = vec![args[0].clone()];
    merged.extend(config_file_args(&text, &path)?);
    merged.extend(args.into_iter().skip(1));
    Ok(merged)
}

fn find_config_path(args: &[String]) -> Option<PathBuf> {
    let mut found = None;
    let mut iter = args.iter().skip(1);
    while let Some(arg) = iter.next() {
        if arg == "--config" {
            found = iter.next().map(PathBuf::from);
        } else if let Some(v) = arg.strip_prefix("--config=") {
            found = Some(PathBuf::from(v));
        }
    }
    found
}

pub fn config_file_args(text: &str, path: &Path) -> anyhow::Result<Vec<String>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or_default().trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            config_err(format!("{}:{}: expected key=value, got {raw:?}", path.display(), n + 1))
        })?;
        let key = key.trim().replace('_', "-");
        if key == "config" {
            return Err(config_err(format!("{}:{}: config files cannot nest", path.display(), n + 1)));
        }
        out.push(format!("--{key}={}", value.trim()));
    }
    Ok(out)
}

/// `start:step:stop` (inclusive) or `a,b,c`.
pub fn parse_points(spec: &str) -> anyhow::Result<Vec<f64>> {
    let number = |s: &str| -> anyhow::Result<f64> {
        let v: f64 = s
            .trim()
            .parse()
            .map_err(|_| config_err(format!("not a number: {s:?} in {spec:?}")))?;
        if !v.is_finite() {
            return Err(config_err(format!("not finite: {s:?}")));
        }
        Ok(v)
    };
    let parts: Vec<&str> = spec.split(':').collect();
    match parts.as_slice() {
        [start, step, stop] => {
            let (start, step, stop) = (number(start)?, number(step)?, number(stop)?);
            if step == 0.0 || (stop - start) * step < 0.0 {
                return Err(config_err(format!("range {spec:?} does not reach its end")));
            }
            let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
            if count > 100_000 {
                return Err(config_err(format!("range {spec:?} has too many points")));
            }
            Ok((0..count).map(|i| start + i as f64 * step).collect())
        }
        [_] => spec.split(',').filter(|s| !s.trim().is_empty()).map(number).collect(),
        _ => Err(config_err(format!("expected start:step:stop or a comma list, got {spec:?}"))),
    }
}

pub fn parse_pathloss(spec: &str) -> anyhow::Result<PathLossScenario> {
    let mut scenario = PathLossScenario::default();
    let (model, placement): (&mut PathLossModel, &mut Placement) = (&mut scenario.model, &mut scenario.placement);
    let mut sigma2_dbw = scenario.sigma2_dbw;
    for item in spec.split(',').filter(|s| !s.trim().is_empty()) {
        let (key, value) = item
            .split_once('=')
            .ok_or_else(|| config_err(format!("expected key=value in --pathloss, got {item:?}")))?;
        let key = key.trim();
        let value = value.trim();
        let number = || -> anyhow::Result<f64> {
            value
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| config_err(format!("--pathloss {key}: not a number: {value:?}")))
        };
        match key {
            "d0" => model.d0 = number()?,
            "nu" => model.nu = number()?,
            "lambda" => model.lambda = number()?,
            "sigma2dbw" | "sigma2_dbw" => sigma2_dbw = number()?,
            "radius" => placement.radius = number()?,
            "min_dist" | "min_distance" => placement.min_distance = number()?,
            "bs_height" => placement.bs_height = number()?,
            "exp_sign" => {
                model.exponent_sign = match value {
                    "+1" | "1" => ExponentSign::AsPrinted,
                    "-1" => ExponentSign::Decaying,
                    _ => return Err(config_err(format!("--pathloss exp_sign must be +1 or -1, got {value:?}"))),
                }
            }
            _ => return Err(config_err(format!("unknown --pathloss key {key:?}"))),
        }
    }
    scenario.sigma2_dbw = sigma2_dbw;
    Ok(scenario)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges_and_lists() {
        assert_eq!(parse_points("0:2:6").unwrap(), vec![0.0, 2.0, 4.0, 6.0]);
        assert_eq!(parse_points("-40:5:-30").unwrap(), vec![-40.0, -35.0, -30.0]);
        assert_eq!(parse_points("10:-5:0").unwrap(), vec![10.0, 5.0, 0.0]);
        assert_eq!(parse_points("0:0.1:0.3").unwrap().len(), 4);
        assert_eq!(parse_points("1,2.5,-3").unwrap(), vec![1.0, 2.5, -3.0]);
        assert_eq!(parse_points("7").unwrap(), vec![7.0]);
        assert!(parse_points("0:0:5").is_err());
        assert!(parse_points("0:1:-5").is_err());
        assert!(parse_points("a,b").is_err());
        assert!(parse_points("1:2").is_err());
    }

    #[test]
    fn pathloss_spec() {
        let s = parse_pathloss("d0=50,nu=2.5,lambda=0.1,sigma2dbw=-120,exp_sign=-1,radius=300").unwrap();
        assert_eq!(s.model.d0, 50.0);
        assert_eq!(s.model.nu, 2.5);
        assert_eq!(s.model.lambda, 0.1);
        assert_eq!(s.sigma2_dbw, -120.0);
        assert_eq!(s.model.exponent_sign, ExponentSign::Decaying);
        assert_eq!(s.placement.radius, 300.0);
        assert_eq!(s.placement.bs_height, 100.0);
        assert!(parse_pathloss("exp_sign=2").is_err());
        assert!(parse_pathloss("foo=1").is_err());
        assert!(parse_pathloss("nu").is_err());
    }

    #[test]
    fn config_file_lines() {
        let text = "# comment\nantennas = 32\nsnr_db=0:5:10\n\nrel-tol=1e-5 # trailing\n";
        let args = config_file_args(text, Path::new("x.cfg")).unwrap();
        assert_eq!(args, vec!["--antennas=32", "--snr-db=0:5:10", "--rel-tol=1e-5"]);
        assert!(config_file_args("antennas", Path::new("x.cfg")).is_err());
        assert!(config_file_args("config=y", Path::new("x.cfg")).is_err());
    }

    #[test]
    fn flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        fs::write(&path, "antennas=32\nusers=4\nsnr-db=0,5\ntrials=10\n").unwrap();
        let argv: Vec<String> = ["simulate", "--config", path.to_str().unwrap(), "--users", "2"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        let cli = Cli::try_parse_from(merge_config_file(argv).unwrap()).unwrap();
        assert_eq!(cli.antennas, 32);
        assert_eq!(cli.users, 2);
        assert_eq!(cli.trials, 10);
        let exp = cli.experiment().unwrap();
        assert_eq!(exp.sweep, Sweep::SnrDb(vec![0.0, 5.0]));
        assert_eq!(exp.detectors, vec![DetectorSpec::TwoPhase { refine: 4 }]);
    }

    #[test]
    fn default_refine_follows_qam() {
        let refine = |users: &str, qam: &str| {
            let cli = Cli::try_parse_from([
                "simulate", "--antennas", "8", "--users", users, "--qam", qam, "--snr-db", "0",
            ])
            .unwrap();
            cli.experiment().unwrap().detectors
        };
        assert_eq!(refine("3", "16"), vec![DetectorSpec::TwoPhase { refine: 6 }]);
        assert_eq!(refine("3", "4"), vec![DetectorSpec::TwoPhase { refine: 4 }]);
        // Capped at 2K.
        assert_eq!(refine("2", "16"), vec![DetectorSpec::TwoPhase { refine: 4 }]);
        assert_eq!(refine("1", "64"), vec![DetectorSpec::TwoPhase { refine: 2 }]);
    }

    #[test]
    fn sweep_is_required_and_exclusive() {
        assert!(Cli::try_parse_from(["simulate", "--antennas", "8", "--users", "2"]).is_err());
        assert!(Cli::try_parse_from([
            "simulate", "--antennas", "8", "--users", "2", "--snr-db", "0", "--power-dbw", "-10"
        ])
        .is_err());
        assert!(Cli::try_parse_from([
            "simulate", "--antennas", "8", "--users", "2", "--power-dbw", "-40:5:0",
            "--pathloss", "exp_sign=-1", "--detectors", "two_phase,zf"
        ])
        .is_ok());
    }
}
