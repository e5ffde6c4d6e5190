//! Benchmark harness and command line: run designs on seeded inputs, check
//! them against the oracle, and emit JSON, CSV or a table.

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use clap::{Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::designs::{run_design, DesignError, DesignId, Dims};
use crate::oracle::{mmult_ref, Matrix};
use crate::runtime::{RunError, Width};

pub const EXIT_OK: i32 = 0;
pub const EXIT_UNVERIFIED: i32 = 1;
pub const EXIT_STUCK: i32 = 2;
pub const EXIT_USAGE: i32 = 3;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid {field}: {message}")]
    Config { field: &'static str, message: String },
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Default)]
pub enum Format {
    #[default]
    Table,
    Json,
    Csv,
}

#[derive(Clone, Debug)]
pub struct Config {
    pub width_bits: u32,
    pub max_cycles: u64,
    pub seed: u64,
    pub dims: Vec<Dims>,
    pub designs: Vec<DesignId>,
    pub format: Format,
    pub small_values: bool,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            width_bits: 16,
            max_cycles: 1_000_000,
            seed: 42,
            dims: vec![Dims { n: 3, m: 3, k: 3 }],
            designs: DesignId::ALL.to_vec(),
            format: Format::Table,
            small_values: false,
        }
    }
}

impl Config {
    pub fn validate(&self) -> Result<Width, BenchError> {
        if !(4..=64).contains(&self.width_bits) {
            return Err(BenchError::Config {
                field: "width",
                message: format!("{} is outside [4, 64]", self.width_bits),
            });
        }
        if self.max_cycles == 0 {
            return Err(BenchError::Config {
                field: "max_cycles",
                message: "must be at least 1".into(),
            });
        }
        if self.designs.is_empty() {
            return Err(BenchError::Config {
                field: "designs",
                message: "no design selected".into(),
            });
        }
        if self.dims.is_empty() {
            return Err(BenchError::Config {
                field: "dims",
                message: "no dimensions given".into(),
            });
        }
        if let Some(d) = self.dims.iter().find(|d| d.n == 0 || d.m == 0 || d.k == 0) {
            return Err(BenchError::Config {
                field: "dims",
                message: format!("{d} has a zero dimension"),
            });
        }
        Width::new(self.width_bits).map_err(|e| BenchError::Config {
            field: "width",
            message: e.to_string(),
        })
    }
}

pub fn parse_dims(s: &str) -> Result<Dims, BenchError> {
    let parts: Vec<&str> = s.split([',', 'x']).map(str::trim).collect();
    let bad = || BenchError::Config {
        field: "dims",
        message: format!("expected n,m,k but got `{s}`"),
    };
    if parts.len() != 3 {
        return Err(bad());
    }
    let v: Vec<usize> = parts.iter().map(|p| p.parse().map_err(|_| bad())).collect::<Result<_, _>>()?;
    Ok(Dims { n: v[0], m: v[1], k: v[2] })
}

pub fn parse_designs(s: &str) -> Result<Vec<DesignId>, BenchError> {
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            DesignId::from_str(p).map_err(|e| BenchError::Config {
                field: "designs",
                message: e.to_string(),
            })
        })
        .collect()
}

fn ser_dims<S: Serializer>(d: &Dims, s: S) -> Result<S::Ok, S::Error> {
    s.collect_str(d)
}

fn de_dims<'de, D: Deserializer<'de>>(d: D) -> Result<Dims, D::Error> {
    let s = String::deserialize(d)?;
    parse_dims(&s).map_err(serde::de::Error::custom)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub design: DesignId,
    #[serde(serialize_with = "ser_dims", deserialize_with = "de_dims")]
    pub dims: Dims,
    pub cycles: u64,
    pub communications: u64,
    pub process_count: u64,
    pub channel_count: u64,
    pub items_out: u64,
    pub throughput_items_per_cycle: f64,
    pub verified: bool,
    pub warnings: Vec<String>,
}

/// Flat CSV row; warnings are a JSON array in one cell.
#[derive(Serialize, Deserialize)]
struct CsvRow {
    design: DesignId,
    dims: String,
    cycles: u64,
    communications: u64,
    process_count: u64,
    channel_count: u64,
    items_out: u64,
    throughput_items_per_cycle: f64,
    verified: bool,
    warnings: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Failure {
    Mismatch,
    Stuck,
}

#[derive(Clone, Debug)]
pub struct Outcome {
    pub report: RunReport,
    pub failure: Option<Failure>,
}

/// Seeded inputs; the same for every design at the same dims.
pub fn random_inputs(dims: Dims, width: Width, seed: u64, small_values: bool) -> (Matrix, Matrix) {
    let mix = seed ^ ((dims.n as u64) << 40) ^ ((dims.m as u64) << 20) ^ dims.k as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(mix);
    let (lo, hi) = if small_values {
        (-8, 8)
    } else {
        (width.min_value(), width.max_value())
    };
    let mut draw = |len: usize| -> Vec<i64> { (0..len).map(|_| rng.gen_range(lo..=hi)).collect() };
    let rows: Vec<Vec<i64>> = (0..dims.n).map(|_| draw(dims.m)).collect();
    let cols: Vec<Vec<i64>> = (0..dims.k).map(|_| draw(dims.m)).collect();
    (
        Matrix::from_rows(&rows).expect("rectangular"),
        Matrix::from_cols(dims.m, &cols).expect("rectangular"),
    )
}

pub fn run_one(design: DesignId, dims: Dims, width: Width, cfg: &Config) -> Outcome {
    let (ass, bss) = random_inputs(dims, width, cfg.seed, cfg.small_values);
    let want = mmult_ref(&ass, &bss, width).expect("dims agree");
    let empty = |warnings: Vec<String>| RunReport {
        design,
        dims,
        cycles: 0,
        communications: 0,
        process_count: 0,
        channel_count: 0,
        items_out: 0,
        throughput_items_per_cycle: 0.0,
        verified: false,
        warnings,
    };
    match run_design(design, &ass, &bss, width, cfg.max_cycles) {
        Ok(run) => {
            let verified = run.css == want;
            let m = run.metrics;
            Outcome {
                report: RunReport {
                    design,
                    dims,
                    cycles: m.cycles,
                    communications: m.communications,
                    process_count: m.process_count,
                    channel_count: m.channel_count,
                    items_out: m.items_out,
                    throughput_items_per_cycle: m.throughput.unwrap_or(0.0),
                    verified,
                    warnings: run.warnings,
                },
                failure: (!verified).then_some(Failure::Mismatch),
            }
        }
        Err(e) => {
            let failure = match &e {
                DesignError::Run {
                    source: RunError::Deadlock(_) | RunError::CycleBudgetExceeded { .. },
                    ..
                } => Failure::Stuck,
                _ => Failure::Mismatch,
            };
            let mut report = empty(vec![e.to_string()]);
            if let DesignError::Run { source: RunError::CycleBudgetExceeded { max_cycles }, .. } = &e {
                report.cycles = *max_cycles;
            }
            Outcome {
                report,
                failure: Some(failure),
            }
        }
    }
}

/// Every (design, dims) pair, run in parallel, in (design, dims) order.
pub fn cmd_run(cfg: &Config) -> Result<Vec<Outcome>, BenchError> {
    let width = cfg.validate()?;
    let mut jobs: Vec<(DesignId, Dims)> = cfg
        .designs
        .iter()
        .flat_map(|&d| cfg.dims.iter().map(move |&x| (d, x)))
        .collect();
    jobs.sort();
    jobs.dedup();
    Ok(jobs.par_iter().map(|&(d, x)| run_one(d, x, width, cfg)).collect())
}

/// As [`cmd_run`], sorted by throughput, highest first.
pub fn cmd_compare(cfg: &Config) -> Result<Vec<Outcome>, BenchError> {
    let mut distinct = cfg.designs.clone();
    distinct.sort();
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(BenchError::Usage("compare needs at least two designs".into()));
    }
    let mut out = cmd_run(cfg)?;
    out.sort_by(|a, b| {
        b.report
            .throughput_items_per_cycle
            .total_cmp(&a.report.throughput_items_per_cycle)
            .then((a.report.design, a.report.dims).cmp(&(b.report.design, b.report.dims)))
    });
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub k: usize,
    pub cycles: u64,
    pub throughput_items_per_cycle: f64,
    pub verified: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepSeries {
    pub design: DesignId,
    pub n: usize,
    pub m: usize,
    pub points: Vec<SweepPoint>,
    /// Least-squares line through the points with k > 1.
    pub slope: f64,
    pub intercept: f64,
    pub max_residual: f64,
    pub affine: bool,
}

/// Least-squares fit `y = a + b x`; returns (b, a, max |residual|).
pub fn affine_fit(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    if points.len() < 2 {
        return (0.0, points.first().map_or(0.0, |p| p.1), 0.0);
    }
    let (sx, sy) = points.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0, b + p.1));
    let (mx, my) = (sx / n, sy / n);
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let b = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    let a = my - b * mx;
    let r = points.iter().map(|p| (p.1 - (a + b * p.0)).abs()).fold(0.0, f64::max);
    (b, a, r)
}

/// Cycles against k for each pipelined design and each (n, m) in the dims
/// list. The ks are those given plus a k = 1 baseline; a lone k is extended
/// with 2k and 4k.
pub fn cmd_sweep_k(cfg: &Config) -> Result<Vec<SweepSeries>, BenchError> {
    let width = cfg.validate()?;
    if let Some(d) = cfg.designs.iter().find(|d| !d.is_pipelined()) {
        return Err(BenchError::Usage(format!(
            "{d} is not a pipelined design; sweep-k takes d3, d4 or d5 (use compare for the others)"
        )));
    }
    let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for d in &cfg.dims {
        groups.entry((d.n, d.m)).or_default().push(d.k);
    }
    let mut jobs = Vec::new();
    for (&(n, m), ks) in &mut groups {
        if ks.len() == 1 {
            let k = ks[0];
            ks.extend([2 * k, 4 * k]);
        }
        ks.push(1);
        ks.sort_unstable();
        ks.dedup();
        let mut designs = cfg.designs.clone();
        designs.sort();
        designs.dedup();
        for d in designs {
            jobs.push((d, n, m, ks.clone()));
        }
    }
    Ok(jobs
        .par_iter()
        .map(|(design, n, m, ks)| {
            let points: Vec<SweepPoint> = ks
                .iter()
                .map(|&k| {
                    let o = run_one(*design, Dims { n: *n, m: *m, k }, width, cfg);
                    SweepPoint {
                        k,
                        cycles: o.report.cycles,
                        throughput_items_per_cycle: o.report.throughput_items_per_cycle,
                        verified: o.failure.is_none(),
                    }
                })
                .collect();
            let fit: Vec<(f64, f64)> = points
                .iter()
                .filter(|p| p.k > 1)
                .map(|p| (p.k as f64, p.cycles as f64))
                .collect();
            let (slope, intercept, max_residual) = affine_fit(&fit);
            SweepSeries {
                design: *design,
                n: *n,
                m: *m,
                affine: max_residual < 1.0 && points.iter().all(|p| p.verified),
                points,
                slope,
                intercept,
                max_residual,
            }
        })
        .collect())
}

pub fn write_reports<W: Write>(out: &mut W, reports: &[RunReport], format: Format) -> Result<(), BenchError> {
    match format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut *out, reports)?;
            writeln!(out)?;
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            for r in reports {
                w.serialize(CsvRow {
                    design: r.design,
                    dims: r.dims.to_string(),
                    cycles: r.cycles,
                    communications: r.communications,
                    process_count: r.process_count,
                    channel_count: r.channel_count,
                    items_out: r.items_out,
                    throughput_items_per_cycle: r.throughput_items_per_cycle,
                    verified: r.verified,
                    warnings: serde_json::to_string(&r.warnings)?,
                })?;
            }
            w.flush()?;
        }
        Format::Table => {
            writeln!(
                out,
                "{:<6} {:<10} {:>8} {:>8} {:>7} {:>7} {:>6} {:>10} {:>8}",
                "design", "dims", "cycles", "comms", "procs", "chans", "items", "items/cyc", "verified"
            )?;
            for r in reports {
                writeln!(
                    out,
                    "{:<6} {:<10} {:>8} {:>8} {:>7} {:>7} {:>6} {:>10.4} {:>8}",
                    r.design.tag(),
                    r.dims.to_string(),
                    r.cycles,
                    r.communications,
                    r.process_count,
                    r.channel_count,
                    r.items_out,
                    r.throughput_items_per_cycle,
                    r.verified
                )?;
                for w in &r.warnings {
                    writeln!(out, "       warning: {w}")?;
                }
            }
        }
    }
    Ok(())
}

pub fn read_reports_json(s: &str) -> Result<Vec<RunReport>, BenchError> {
    Ok(serde_json::from_str(s)?)
}

pub fn read_reports_csv(s: &str) -> Result<Vec<RunReport>, BenchError> {
    let mut r = csv::Reader::from_reader(s.as_bytes());
    r.deserialize::<CsvRow>()
        .map(|row| {
            let row = row?;
            Ok(RunReport {
                design: row.design,
                dims: parse_dims(&row.dims)?,
                cycles: row.cycles,
                communications: row.communications,
                process_count: row.process_count,
                channel_count: row.channel_count,
                items_out: row.items_out,
                throughput_items_per_cycle: row.throughput_items_per_cycle,
                verified: row.verified,
                warnings: serde_json::from_str(&row.warnings)?,
            })
        })
        .collect()
}

pub fn write_sweep<W: Write>(out: &mut W, series: &[SweepSeries], format: Format) -> Result<(), BenchError> {
    match format {
        Format::Json => {
            serde_json::to_writer_pretty(&mut *out, series)?;
            writeln!(out)?;
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(["design", "n", "m", "k", "cycles", "throughput_items_per_cycle", "verified"])?;
            for s in series {
                for p in &s.points {
                    w.write_record([
                        s.design.tag().to_string(),
                        s.n.to_string(),
                        s.m.to_string(),
                        p.k.to_string(),
                        p.cycles.to_string(),
                        p.throughput_items_per_cycle.to_string(),
                        p.verified.to_string(),
                    ])?;
                }
            }
            w.flush()?;
        }
        Format::Table => {
            for s in series {
                writeln!(
                    out,
                    "{} ({}x{}): cycles = {:.3} + {:.3} k, max residual {:.3}{}",
                    s.design,
                    s.n,
                    s.m,
                    s.intercept,
                    s.slope,
                    s.max_residual,
                    if s.affine { "" } else { "  (not affine)" }
                )?;
                for p in &s.points {
                    writeln!(out, "  k={:<5} cycles={:<8} items/cyc={:.4}", p.k, p.cycles, p.throughput_items_per_cycle)?;
                }
            }
        }
    }
    Ok(())
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::Table => "table",
            Format::Json => "json",
            Format::Csv => "csv",
        })
    }
}

#[derive(Parser, Debug)]
#[command(name = "procnet", about = "Simulate and compare matrix-multiplication process networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct CommonArgs {
    /// Comma-separated design list, e.g. d1,d3
    #[arg(long, default_value = "d1,d2,d3,d4,d5")]
    designs: String,
    /// Dimensions n,m,k (repeatable)
    #[arg(long = "dims")]
    dims: Vec<String>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Word width in bits
    #[arg(long, default_value_t = 16)]
    width: u32,
    #[arg(long, default_value_t = 1_000_000)]
    max_cycles: u64,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    format: Format,
    /// Draw matrix entries from [-8, 8]
    #[arg(long)]
    small_values: bool,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run each design at each dims and verify against the oracle
    Run(CommonArgs),
    /// Run at least two designs and rank them by throughput
    Compare(CommonArgs),
    /// Cycles against k for pipelined designs
    SweepK(CommonArgs),
}

fn config_from(args: &CommonArgs) -> Result<Config, BenchError> {
    let dims = if args.dims.is_empty() {
        vec![Dims { n: 3, m: 3, k: 3 }]
    } else {
        args.dims.iter().map(|d| parse_dims(d)).collect::<Result<_, _>>()?
    };
    Ok(Config {
        width_bits: args.width,
        max_cycles: args.max_cycles,
        seed: args.seed,
        dims,
        designs: parse_designs(&args.designs)?,
        format: args.format,
        small_values: args.small_values,
    })
}

fn exit_code(outcomes: &[Outcome]) -> i32 {
    if outcomes.iter().any(|o| o.failure == Some(Failure::Stuck)) {
        EXIT_STUCK
    } else if outcomes.iter().any(|o| o.failure.is_some()) {
        EXIT_UNVERIFIED
    } else {
        EXIT_OK
    }
}

fn dispatch<W: Write>(cli: Cli, out: &mut W) -> Result<i32, BenchError> {
    match cli.command {
        Command::Run(a) => {
            let cfg = config_from(&a)?;
            let o = cmd_run(&cfg)?;
            write_reports(out, &o.iter().map(|x| x.report.clone()).collect::<Vec<_>>(), cfg.format)?;
            Ok(exit_code(&o))
        }
        Command::Compare(a) => {
            let cfg = config_from(&a)?;
            let o = cmd_compare(&cfg)?;
            write_reports(out, &o.iter().map(|x| x.report.clone()).collect::<Vec<_>>(), cfg.format)?;
            Ok(exit_code(&o))
        }
        Command::SweepK(a) => {
            let mut cfg = config_from(&a)?;
            if a.designs == "d1,d2,d3,d4,d5" {
                cfg.designs.retain(|d| d.is_pipelined());
            }
            let s = cmd_sweep_k(&cfg)?;
            write_sweep(out, &s, cfg.format)?;
            Ok(if s.iter().all(|x| x.points.iter().all(|p| p.verified)) {
                EXIT_OK
            } else {
                EXIT_UNVERIFIED
            })
        }
    }
}

/// Parse `args` (including the program name), run, write to `out` and
/// `err`, and return the process exit status.
pub fn main_with_args<I, T, W, E>(args: I, out: &mut W, err: &mut E) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
    W: Write,
    E: Write,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{e}");
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli, out) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            match e {
                BenchError::Config { .. } | BenchError::Usage(_) => EXIT_USAGE,
                _ => EXIT_UNVERIFIED,
            }
        }
    }
}
