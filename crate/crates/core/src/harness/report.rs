//! Convergence reports and their CSV and JSON forms.

use std::fmt;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{Norm, ReportFormat};
use crate::error::{Error, Result};
use crate::fit::FitReport;
use crate::grid::{fmt17, parse_num};
use crate::richardson::RichardsonWeights;

/// Which approximation an error belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Series {
    /// `u^h` as computed.
    Plain,
    /// `(u^h)^+`.
    Clipped,
    /// Richardson combination on the coarsest of its grids.
    Extrapolated,
}

impl fmt::Display for Series {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Series::Plain => "plain",
            Series::Clipped => "clipped",
            Series::Extrapolated => "extrapolated",
        })
    }
}

impl std::str::FromStr for Series {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "plain" => Ok(Series::Plain),
            "clipped" => Ok(Series::Clipped),
            "extrapolated" => Ok(Series::Extrapolated),
            _ => Err(Error::Parse(format!("unknown series `{s}`"))),
        }
    }
}

fn parse_norm(s: &str) -> Result<Norm> {
    match s {
        "sup" => Ok(Norm::Sup),
        "l2h" => Ok(Norm::L2h),
        _ => Err(Error::Parse(format!("unknown norm `{s}`"))),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelInfo {
    pub level: usize,
    pub h: f64,
    pub points_per_axis: usize,
    pub dt: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub series: Series,
    pub level: usize,
    pub h: f64,
    pub seed: u64,
    pub norm: Norm,
    pub error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    /// Mean of `error^p` over seeds.
    pub value: f64,
    /// Half-width of the bootstrap 95% interval.
    pub half_width: f64,
    /// Fewer than two seeds: no spread can be estimated.
    pub degenerate: bool,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentRow {
    pub series: Series,
    pub norm: Norm,
    pub level: usize,
    pub h: f64,
    pub p: f64,
    pub estimate: MomentEstimate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFit {
    pub series: Series,
    pub norm: Norm,
    pub seed: u64,
    pub fit: FitReport,
}

/// Fit of `(E error^p)^{1/p}` against `h`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentFit {
    pub series: Series,
    pub norm: Norm,
    pub p: f64,
    pub fit: FitReport,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RuntimeInfo {
    pub seconds: f64,
    pub threads: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub levels: Vec<LevelInfo>,
    pub seeds: Vec<u64>,
    pub reference: String,
    pub rows: Vec<ErrorRow>,
    pub seed_fits: Vec<SeedFit>,
    pub moments: Vec<MomentRow>,
    pub moment_fits: Vec<MomentFit>,
    pub weights: Option<RichardsonWeights>,
    /// The clipped-error bound was checked on at least one run.
    pub clipping_checked: bool,
    /// Discrete `𝓚_1(T)` of the free terms on the coarsest grid.
    pub data_norm: Option<f64>,
    pub notes: Vec<String>,
    pub runtime: RuntimeInfo,
}

impl ConvergenceReport {
    /// `(h, error)` pairs for one seed.
    pub fn pairs(&self, series: Series, norm: Norm, seed: u64) -> Vec<(f64, f64)> {
        self.rows
            .iter()
            .filter(|r| r.series == series && r.norm == norm && r.seed == seed)
            .map(|r| (r.h, r.error))
            .collect()
    }

    pub fn seed_fit(&self, series: Series, norm: Norm, seed: u64) -> Option<&FitReport> {
        self.seed_fits
            .iter()
            .find(|f| f.series == series && f.norm == norm && f.seed == seed)
            .map(|f| &f.fit)
    }

    pub fn moment_fit(&self, series: Series, norm: Norm, p: f64) -> Option<&FitReport> {
        self.moment_fits
            .iter()
            .find(|f| f.series == series && f.norm == norm && f.p == p)
            .map(|f| &f.fit)
    }

    /// The report without wall-clock data, for comparing runs.
    pub fn without_runtime(&self) -> Self {
        let mut r = self.clone();
        r.runtime = RuntimeInfo {
            seconds: 0.0,
            threads: 0,
        };
        r
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

const CSV_HEADER: [&str; 6] = ["series", "level", "h", "seed", "norm", "error"];

pub fn write_error_csv<W: std::io::Write>(rows: &[ErrorRow], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(CSV_HEADER)?;
    for r in rows {
        out.write_record([
            r.series.to_string(),
            r.level.to_string(),
            fmt17(r.h),
            r.seed.to_string(),
            r.norm.to_string(),
            fmt17(r.error),
        ])?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_error_csv<R: std::io::Read>(r: R) -> Result<Vec<ErrorRow>> {
    let mut reader = csv::Reader::from_reader(r);
    let header = reader.headers()?.clone();
    if header.iter().ne(CSV_HEADER) {
        return Err(Error::Parse(format!("unexpected header {:?}", header)));
    }
    reader
        .records()
        .map(|rec| {
            let rec = rec?;
            Ok(ErrorRow {
                series: rec[0].parse()?,
                level: parse_num(&rec[1])?,
                h: parse_num(&rec[2])?,
                seed: parse_num(&rec[3])?,
                norm: parse_norm(&rec[4])?,
                error: parse_num(&rec[5])?,
            })
        })
        .collect()
}

/// Writes `errors.csv` or `report.json` into `dir` and returns the paths.
pub fn emit_report(report: &ConvergenceReport, format: ReportFormat, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let path = match format {
        ReportFormat::Csv => {
            let p = dir.join("errors.csv");
            write_error_csv(&report.rows, BufWriter::new(File::create(&p)?))?;
            p
        }
        ReportFormat::Json => {
            let p = dir.join("report.json");
            std::fs::write(&p, report.to_json()?)?;
            p
        }
    };
    Ok(vec![path])
}
