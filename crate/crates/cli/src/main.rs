mod args;

use std::io::Write;
use std::process::ExitCode;
use std::time::Instant;

use clap::Parser;
use log::info;
use onebit_core::harness::{emit, write_csv, write_json, Experiment, OutputFormat};
use onebit_core::Error;

use args::{merge_config_file, Cli, ConfigError};

const EXIT_IO: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let argv = match merge_config_file(std::env::args().collect()) {
        Ok(argv) => argv,
        Err(e) => return report(&e),
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => e.exit(),
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report(&e),
    }
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let experiment = Experiment::new(cli.experiment()?)?;
    let cfg = experiment.config();
    info!(
        "M = {}, K = {}, {}-QAM, {} points x {} trials",
        cfg.antennas,
        cfg.users,
        cfg.qam,
        cfg.sweep.points().len(),
        cfg.trials
    );
    let start = Instant::now();
    let records = experiment.sweep()?;
    info!("finished in {:.2} s", start.elapsed().as_secs_f64());

    let format = cli.output_format();
    match &cli.out {
        Some(path) => emit(&records, format, path)?,
        None => {
            let mut stdout = std::io::stdout().lock();
            match format {
                OutputFormat::Csv => write_csv(&records, &mut stdout)?,
                OutputFormat::Json => write_json(&records, &mut stdout)?,
            }
            stdout.flush()?;
        }
    }
    Ok(())
}

fn report(err: &anyhow::Error) -> ExitCode {
    eprintln!("error: {err:#}");
    ExitCode::from(exit_code(err))
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<ConfigError>().is_some() {
        return EXIT_CONFIG;
    }
    match err.downcast_ref::<Error>() {
        Some(
            Error::Config(_)
            | Error::Budget { .. }
            | Error::InvalidConstellation(_)
            | Error::InvalidParameter(_),
        ) => EXIT_CONFIG,
        Some(Error::NumericalFailure { .. }) => EXIT_NUMERICAL,
        Some(_) | None => EXIT_IO,
    }
}
