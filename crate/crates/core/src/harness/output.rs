use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PointKind;
use crate::error::{Error, Result};

const CSV_HEADER: [&str; 10] = [
    "detector",
    "point_kind",
    "point_value",
    "trials",
    "symbols_total",
    "symbol_errors",
    "ser",
    "ci95",
    "wall_time_s",
    "mean_iters",
];

/// Aggregated outcome of one detector at one operating point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SerRecord {
    pub detector: String,
    pub point_kind: PointKind,
    pub point_value: f64,
    pub trials: u64,
    pub symbols_total: u64,
    pub symbol_errors: u64,
    pub ser: f64,
    /// Half-width of the normal-approximation 95% interval.
    pub ci95: f64,
    /// Detector time summed over trials.
    pub wall_time_s: f64,
    pub mean_iters: f64,
}

impl SerRecord {
    /// Copy with every float rounded as it would be written out.
    pub fn rounded(&self) -> Self {
        Self {
            point_value: round_sig(self.point_value),
            ser: round_sig(self.ser),
            ci95: round_sig(self.ci95),
            wall_time_s: round_sig(self.wall_time_s),
            mean_iters: round_sig(self.mean_iters),
            ..self.clone()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputFormat {
    Csv,
    Json,
}

impl std::str::FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::Config(format!("unknown output format {other:?}"))),
        }
    }
}

/// Rounds to 9 significant digits.
pub fn round_sig(v: f64) -> f64 {
    if v == 0.0 || !v.is_finite() {
        return v;
    }
    format!("{v:.8e}").parse().unwrap_or(v)
}

fn fmt_float(v: f64) -> String {
    format!("{}", round_sig(v))
}

pub fn write_csv<W: Write>(records: &[SerRecord], out: W) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.detector.clone(),
            r.point_kind.as_str().to_string(),
            fmt_float(r.point_value),
            r.trials.to_string(),
            r.symbols_total.to_string(),
            r.symbol_errors.to_string(),
            fmt_float(r.ser),
            fmt_float(r.ci95),
            fmt_float(r.wall_time_s),
            fmt_float(r.mean_iters),
        ])?;
    }
    w.flush()
}

pub fn write_json<W: Write>(records: &[SerRecord], out: W) -> std::io::Result<()> {
    let rounded: Vec<SerRecord> = records.iter().map(SerRecord::rounded).collect();
    let mut out = out;
    serde_json::to_writer_pretty(&mut out, &rounded)?;
    out.write_all(b"\n")?;
    out.flush()
}

/// Writes `records` to `path` in the given format.
pub fn emit(records: &[SerRecord], format: OutputFormat, path: &Path) -> Result<()> {
    let io_err = |source| Error::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = BufWriter::new(File::create(path).map_err(io_err)?);
    match format {
        OutputFormat::Csv => write_csv(records, file),
        OutputFormat::Json => write_json(records, file),
    }
    .map_err(io_err)
}

pub fn read_csv(path: &Path) -> Result<Vec<SerRecord>> {
    parse_csv(open(path)?)
}

pub fn read_json(path: &Path) -> Result<Vec<SerRecord>> {
    serde_json::from_reader(open(path)?).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub(crate) fn parse_csv<R: Read>(input: R) -> Result<Vec<SerRecord>> {
    let mut reader = csv::Reader::from_reader(input);
    let header = reader.headers().map_err(|e| Error::Format(e.to_string()))?;
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Format(format!("unexpected header {header:?}")));
    }
    reader
        .records()
        .map(|row| {
            let row = row.map_err(|e| Error::Format(e.to_string()))?;
            let field = |i: usize| row.get(i).unwrap_or_default();
            let float = |i: usize| -> Result<f64> {
                field(i)
                    .parse()
                    .map_err(|_| Error::Format(format!("{}: not a number: {:?}", CSV_HEADER[i], field(i))))
            };
            let int = |i: usize| -> Result<u64> {
                field(i)
                    .parse()
                    .map_err(|_| Error::Format(format!("{}: not an integer: {:?}", CSV_HEADER[i], field(i))))
            };
            Ok(SerRecord {
                detector: field(0).to_string(),
                point_kind: field(1).parse()?,
                point_value: float(2)?,
                trials: int(3)?,
                symbols_total: int(4)?,
                symbol_errors: int(5)?,
                ser: float(6)?,
                ci95: float(7)?,
                wall_time_s: float(8)?,
                mean_iters: float(9)?,
            })
        })
        .collect()
}
