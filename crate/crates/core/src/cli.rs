//! Command-line front end.
//!
//! Every subcommand resolves a config (JSON file, then flag overrides),
//! runs on a pool capped by `--threads` / `BMC_LAB_THREADS`, writes CSV or
//! JSON outputs plus `manifest.json` into `--out`, and maps errors to exit
//! codes: 2 configuration, 3 numeric rejection, 4 resource cap.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiments::{
    self, CltReport, ExperimentConfig, FunctionDesc, SlopeConfig, SlopeResult, SlopeSummary, SupercriticalReport,
    Target,
};
use crate::kernels::{check_assumptions, BarParams, Regime, RegimeTag};
use crate::spectral::SymmetricKernel;
use crate::tree_sim::{with_threads, FunctionalSeq, InitialLaw, Shape};
use crate::variance;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_RESOURCE: i32 = 4;
pub const EXIT_IO: i32 = 1;
pub const THREADS_ENV: &str = "BMC_LAB_THREADS";

#[derive(Debug, Parser)]
#[command(name = "bmc-lab", version, about = "Bifurcating Markov chain laboratory for the Gaussian BAR kernel")]
struct Cli {
    /// Worker threads (falls back to BMC_LAB_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Replicate the regime-normalised fluctuation statistic.
    Simulate(RunArgs),
    /// Limiting variance by spectral series.
    Variance(VarianceArgs),
    /// Empirical versus series variance, KS distance and sample moments.
    Clt(RunArgs),
    /// Phase-transition slope experiment.
    Slopes(SlopeArgs),
    /// Tree/generation ratio and martingale increments in the super-critical regime.
    Supercritical(RunArgs),
    /// Martingale paths (2a)^-n M_Gn(Rf).
    Martingale(RunArgs),
    /// Integrability of the function h for the symmetric kernel.
    CheckAssumptions(AssumptionArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ShapeArg {
    Single,
    Tree,
    Custom,
}

impl From<ShapeArg> for Shape {
    fn from(s: ShapeArg) -> Self {
        match s {
            ShapeArg::Single => Shape::Single,
            ShapeArg::Tree => Shape::Tree,
            ShapeArg::Custom => Shape::Custom,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum TargetArg {
    #[value(name = "Gn", alias = "gn")]
    Gn,
    #[value(name = "Tn", alias = "tn")]
    Tn,
}

impl From<TargetArg> for Target {
    fn from(t: TargetArg) -> Self {
        match t {
            TargetArg::Gn => Target::Gn,
            TargetArg::Tn => Target::Tn,
        }
    }
}

#[derive(Debug, Clone, Args)]
struct KernelArgs {
    /// Symmetric coefficient: sets a0 = a1 = a.
    #[arg(long, allow_hyphen_values = true)]
    a: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    a0: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    a1: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    b0: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    b1: Option<f64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    rho: Option<f64>,
}

impl KernelArgs {
    fn apply(&self, p: &mut BarParams) {
        if let Some(a) = self.a {
            p.a0 = a;
            p.a1 = a;
        }
        let fields = [
            (self.a0, &mut p.a0),
            (self.a1, &mut p.a1),
            (self.b0, &mut p.b0),
            (self.b1, &mut p.b1),
            (self.sigma, &mut p.sigma),
            (self.rho, &mut p.rho),
        ];
        for (v, slot) in fields {
            if let Some(v) = v {
                *slot = v;
            }
        }
    }
}

#[derive(Debug, Clone, Args)]
struct RunArgs {
    /// JSON config file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the resolved config as JSON and exit.
    #[arg(long)]
    dump_config: bool,
    #[command(flatten)]
    kernel: KernelArgs,
    /// Test function: x, x^p (p <= 8), a constant, or monomial coefficients "[c0,c1,...]".
    #[arg(long, allow_hyphen_values = true)]
    f: Option<String>,
    #[arg(long, value_enum)]
    shape: Option<ShapeArg>,
    /// Functions f_0, f_1, ... of the custom shape (repeatable).
    #[arg(long, allow_hyphen_values = true)]
    custom: Vec<String>,
    /// Initial law: stationary, dirac:X or gaussian:MEAN:VAR.
    #[arg(long, allow_hyphen_values = true)]
    nu: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    target: Option<TargetArg>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RegimeArg {
    Auto,
    Sub,
    Crit,
}

#[derive(Debug, Clone, Args)]
struct VarianceArgs {
    #[arg(long, value_enum, default_value = "auto")]
    regime: RegimeArg,
    #[arg(long, allow_hyphen_values = true)]
    a: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    #[arg(long, default_value = "x", allow_hyphen_values = true)]
    f: String,
    #[arg(long, value_enum, default_value = "single")]
    shape: ShapeArg,
    #[arg(long, allow_hyphen_values = true)]
    custom: Vec<String>,
    #[arg(long, default_value_t = variance::DEFAULT_TOL)]
    tol: f64,
    /// Also write variance.json into this directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
struct SlopeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    dump_config: bool,
    /// Test function (one per run).
    #[arg(long, allow_hyphen_values = true)]
    f: Option<String>,
    /// Grid "start:stop:step" or a comma list.
    #[arg(long)]
    alphas: Option<String>,
    #[arg(long)]
    sigma: Option<f64>,
    /// Deepest generation n_max.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    n_min: Option<usize>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    outer_repeats: Option<usize>,
    /// Regression target (repeatable).
    #[arg(long, value_enum)]
    target: Vec<TargetArg>,
    #[arg(long, allow_hyphen_values = true)]
    nu: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write slopes.svg.
    #[arg(long)]
    plot: bool,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug, Clone, Args)]
struct AssumptionArgs {
    #[arg(long, allow_hyphen_values = true)]
    a: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma: f64,
    /// Also write assumptions.json into this directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Provenance record written next to every run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_digest: String,
    pub master_seed: Option<u64>,
    pub tool_version: String,
    pub wall_time_seconds: f64,
    pub outputs: Vec<String>,
}

/// Sorted keys, no whitespace.
pub fn canonical_json<T: Serialize>(value: &T) -> Result<String> {
    // serde_json::Value keeps object keys in a BTreeMap, hence sorted
    let v = serde_json::to_value(value).map_err(|e| Error::Config(e.to_string()))?;
    serde_json::to_string(&v).map_err(|e| Error::Config(e.to_string()))
}

/// First 64 bits of the SHA-256 of the canonical JSON, as 16 hex digits.
pub fn config_digest<T: Serialize>(value: &T) -> Result<String> {
    let hash = Sha256::digest(canonical_json(value)?.as_bytes());
    Ok(hash[..8].iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    }))
}

/// 17 significant digits.
pub fn fmt_float(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn parse_function(s: &str) -> Result<FunctionDesc> {
    let t = s.trim();
    let list = t.strip_prefix('[').and_then(|r| r.strip_suffix(']'));
    let desc = match list {
        Some(inner) => FunctionDesc::Coeffs(parse_floats(inner)?),
        None if t.contains(',') => FunctionDesc::Coeffs(parse_floats(t)?),
        None => FunctionDesc::Expr(t.to_string()),
    };
    desc.coefficients()?;
    Ok(desc)
}

fn parse_floats(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("bad number '{}' in coefficient list", p.trim())))
        })
        .collect()
}

pub fn parse_initial_law(s: &str) -> Result<InitialLaw> {
    let parts: Vec<&str> = s.trim().split(':').collect();
    let num = |p: &str| {
        p.trim()
            .parse::<f64>()
            .map_err(|_| Error::Config(format!("bad number '{p}' in initial law '{s}'")))
    };
    match parts.as_slice() {
        ["stationary"] => Ok(InitialLaw::Stationary),
        ["dirac", x] => Ok(InitialLaw::Dirac { x0: num(x)? }),
        ["gaussian", m, v] => Ok(InitialLaw::Gaussian {
            mean: num(m)?,
            var: num(v)?,
        }),
        _ => Err(Error::Config(format!(
            "initial law '{s}' not understood (stationary, dirac:X, gaussian:MEAN:VAR)"
        ))),
    }
}

/// `start:stop:step` (inclusive, rounded to the step) or a comma list.
pub fn parse_alphas(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let v = parse_floats(&parts.join(","))?;
        let (start, stop, step) = (v[0], v[1], v[2]);
        if !(step > 0.0) || stop < start {
            return Err(Error::Config(format!("bad grid '{s}'")));
        }
        let count = ((stop - start) / step + 1e-9).floor() as usize;
        // decimal rounding keeps grid points such as 0.15 exact in the CSV
        Ok((0..=count)
            .map(|i| {
                let v = start + i as f64 * step;
                (v * 1e12).round() / 1e12
            })
            .collect())
    } else {
        parse_floats(s)
    }
}

fn read_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| Error::Config(format!("invalid config {}: {e}", path.display())))
}

fn resolve_run(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => read_config(path)?,
        None => ExperimentConfig::symmetric(0.5, 1.0, FunctionDesc::monomial(1), 10, 1000, 0)?,
    };
    args.kernel.apply(&mut cfg.params);
    if let Some(f) = &args.f {
        cfg.f = parse_function(f)?;
    }
    if let Some(s) = args.shape {
        cfg.shape = s.into();
    }
    if !args.custom.is_empty() {
        cfg.custom = args.custom.iter().map(|s| parse_function(s)).collect::<Result<_>>()?;
    }
    if let Some(nu) = &args.nu {
        cfg.nu = parse_initial_law(nu)?;
    }
    if let Some(n) = args.n {
        cfg.n = n;
    }
    if let Some(r) = args.replicas {
        cfg.replicas = r;
    }
    if let Some(s) = args.seed {
        cfg.master_seed = s;
    }
    if let Some(t) = args.target {
        cfg.target = t.into();
    }
    if let Some(t) = args.tol {
        cfg.tol = t;
    }
    cfg.params = cfg.params.validated().map_err(|e| Error::Config(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn resolve_slopes(args: &SlopeArgs) -> Result<SlopeConfig> {
    let mut cfg = match &args.config {
        Some(path) => read_config(path)?,
        None => SlopeConfig {
            alphas: parse_alphas("0.05:0.95:0.05")?,
            sigma: 1.0,
            fs: vec![FunctionDesc::monomial(1)],
            targets: vec![Target::Gn],
            n_min: experiments::DEFAULT_N_MIN,
            n_max: 12,
            replicas: 500,
            outer_repeats: experiments::DEFAULT_OUTER_REPEATS,
            master_seed: 0,
            nu: InitialLaw::Stationary,
        },
    };
    if let Some(f) = &args.f {
        cfg.fs = vec![parse_function(f)?];
    }
    if let Some(a) = &args.alphas {
        cfg.alphas = parse_alphas(a)?;
    }
    if let Some(s) = args.sigma {
        cfg.sigma = s;
    }
    if let Some(n) = args.n {
        cfg.n_max = n;
    }
    if let Some(n) = args.n_min {
        cfg.n_min = n;
    }
    if let Some(r) = args.replicas {
        cfg.replicas = r;
    }
    if let Some(o) = args.outer_repeats {
        cfg.outer_repeats = o;
    }
    if !args.target.is_empty() {
        cfg.targets = args.target.iter().map(|&t| t.into()).collect();
    }
    if let Some(nu) = &args.nu {
        cfg.nu = parse_initial_law(nu)?;
    }
    if let Some(s) = args.seed {
        cfg.master_seed = s;
    }
    if cfg.fs.len() != 1 {
        return Err(Error::Config("the slopes command takes exactly one test function".into()));
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn stats_csv(values: &[f64]) -> String {
    let mut s = String::from("replica,statistic\n");
    for (r, v) in values.iter().enumerate() {
        let _ = writeln!(s, "{r},{}", fmt_float(*v));
    }
    s
}

pub fn slopes_csv(results: &[SlopeResult]) -> String {
    let mut s = String::from("alpha,target,n_min,n_max,slope,stderr,h1,h2,replicas,outer_repeat\n");
    for r in results {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            fmt_float(r.alpha),
            r.target,
            r.n_min,
            r.n_max,
            fmt_float(r.slope),
            fmt_float(r.stderr),
            fmt_float(r.h1),
            fmt_float(r.h2),
            r.replicas,
            r.outer_repeat
        );
    }
    s
}

pub fn slopes_summary_csv(summary: &[SlopeSummary]) -> String {
    let mut s = String::from("alpha,target,mean_slope,sd,lower,upper,h1,h2,repeats\n");
    for r in summary {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            fmt_float(r.alpha),
            r.target,
            fmt_float(r.mean_slope),
            fmt_float(r.sd),
            fmt_float(r.lower),
            fmt_float(r.upper),
            fmt_float(r.h1),
            fmt_float(r.h2),
            r.repeats
        );
    }
    s
}

pub fn clt_csv(report: &CltReport) -> String {
    let ks = report.ks_distance.map_or_else(|| "NaN".to_string(), fmt_float);
    format!(
        "n,empirical_variance,series_variance,ks_distance,ks_threshold,mean,skewness,kurtosis\n{},{},{},{},{},{},{},{}\n",
        report.n,
        fmt_float(report.empirical_variance),
        fmt_float(report.series_variance),
        ks,
        fmt_float(report.ks_threshold),
        fmt_float(report.moments.mean),
        fmt_float(report.moments.skewness),
        fmt_float(report.moments.kurtosis)
    )
}

pub fn supercritical_csv(report: &SupercriticalReport) -> String {
    let mut s = String::from("replica,generation_statistic,tree_statistic\n");
    for (r, (g, t)) in report.generation_stats.iter().zip(&report.tree_stats).enumerate() {
        let _ = writeln!(s, "{r},{},{}", fmt_float(*g), fmt_float(*t));
    }
    s
}

pub fn martingale_increments_csv(report: &SupercriticalReport) -> String {
    let mut s = String::from("n,mean_martingale,mean_abs_increment\n");
    for (k, m) in report.martingale_means.iter().enumerate() {
        let inc = report.martingale_l1_diffs.get(k).map_or_else(|| "NaN".to_string(), |v| fmt_float(*v));
        let _ = writeln!(s, "{k},{},{inc}", fmt_float(*m));
    }
    s
}

pub fn martingale_csv(paths: &[Vec<f64>]) -> String {
    let mut s = String::from("replica,n,martingale\n");
    for (r, path) in paths.iter().enumerate() {
        for (k, v) in path.iter().enumerate() {
            let _ = writeln!(s, "{r},{k},{}", fmt_float(*v));
        }
    }
    s
}

const SVG_W: f64 = 800.0;
const SVG_H: f64 = 500.0;
const MARGIN: f64 = 60.0;

/// Mean slopes per target in black/grey with ±2 sd bars, `h₁` in red, `h₂` dashed blue.
pub fn slopes_svg(summary: &[SlopeSummary]) -> String {
    let finite = |v: f64| v.is_finite().then_some(v);
    let ys: Vec<f64> = summary
        .iter()
        .flat_map(|r| [finite(r.lower), finite(r.upper), Some(r.h1), Some(r.h2)])
        .flatten()
        .collect();
    let y_lo = ys.iter().cloned().fold(-1.0f64, f64::min) - 0.1;
    let y_hi = ys.iter().cloned().fold(0.0f64, f64::max) + 0.05;
    let px = |a: f64| MARGIN + a * (SVG_W - 2.0 * MARGIN);
    let py = |y: f64| SVG_H - MARGIN - (y - y_lo) / (y_hi - y_lo) * (SVG_H - 2.0 * MARGIN);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SVG_W}" height="{SVG_H}" viewBox="0 0 {SVG_W} {SVG_H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (x0, x1, yb, yt) = (px(0.0), px(1.0), py(y_lo), py(y_hi));
    let _ = writeln!(s, r#"<line x1="{x0:.2}" y1="{yb:.2}" x2="{x1:.2}" y2="{yb:.2}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0:.2}" y1="{yb:.2}" x2="{x0:.2}" y2="{yt:.2}" stroke="black"/>"#);
    for i in 0..=10 {
        let a = i as f64 / 10.0;
        let x = px(a);
        let _ = writeln!(s, r#"<line x1="{x:.2}" y1="{yb:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, yb + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{a:.1}</text>"#, yb + 20.0);
    }
    let step = if y_hi - y_lo > 1.5 { 0.5 } else { 0.25 };
    let mut y = (y_lo / step).ceil() * step;
    while y <= y_hi {
        let yy = py(y);
        let _ = writeln!(s, r#"<line x1="{:.2}" y1="{yy:.2}" x2="{x0:.2}" y2="{yy:.2}" stroke="black"/>"#, x0 - 5.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{y:.2}</text>"#, x0 - 8.0, yy + 4.0);
        y += step;
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">alpha</text>"#,
        SVG_W / 2.0,
        SVG_H - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{:.2}" text-anchor="middle" transform="rotate(-90 15 {:.2})">slope</text>"#,
        SVG_H / 2.0,
        SVG_H / 2.0
    );

    let curve = |h: fn(f64) -> f64| -> String {
        (1..200)
            .map(|i| {
                let a = i as f64 / 200.0;
                format!("{:.2},{:.2}", px(a), py(h(a)))
            })
            .collect::<Vec<_>>()
            .join(" ")
    };
    let _ = writeln!(
        s,
        r#"<polyline fill="none" stroke="red" stroke-width="1.5" points="{}"/>"#,
        curve(experiments::h1)
    );
    let _ = writeln!(
        s,
        r#"<polyline fill="none" stroke="blue" stroke-width="1.5" stroke-dasharray="6,4" points="{}"/>"#,
        curve(experiments::h2)
    );

    for (target, colour) in [(Target::Gn, "black"), (Target::Tn, "grey")] {
        let rows: Vec<&SlopeSummary> = summary
            .iter()
            .filter(|r| r.target == target && r.mean_slope.is_finite())
            .collect();
        if rows.is_empty() {
            continue;
        }
        let pts: Vec<String> = rows
            .iter()
            .map(|r| format!("{:.2},{:.2}", px(r.alpha), py(r.mean_slope)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        );
        for r in rows {
            if r.sd.is_finite() {
                let x = px(r.alpha);
                let _ = writeln!(
                    s,
                    r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{colour}"/>"#,
                    py(r.lower),
                    py(r.upper)
                );
            }
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{colour}"/>"#,
                px(r.alpha),
                py(r.mean_slope)
            );
        }
    }
    let legend = [
        ("black", "", "empirical slope (Gn)"),
        ("red", "", "h1"),
        ("blue", r#" stroke-dasharray="6,4""#, "h2"),
    ];
    for (i, (colour, dash, label)) in legend.iter().enumerate() {
        let y = MARGIN + 15.0 * i as f64;
        let x = SVG_W - MARGIN - 160.0;
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="{colour}" stroke-width="2"{dash}/>"#,
            x + 25.0
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{label}</text>"#, x + 32.0, y + 4.0);
    }
    s.push_str("</svg>\n");
    s
}

struct Outputs {
    dir: PathBuf,
    written: Vec<String>,
}

impl Outputs {
    fn new(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Outputs {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, contents)?;
        self.written.push(path.display().to_string());
        Ok(())
    }

    fn finish<T: Serialize>(mut self, command: &str, config: &T, seed: Option<u64>, started: Instant) -> Result<()> {
        let manifest_path = self.dir.join("manifest.json");
        self.written.push(manifest_path.display().to_string());
        let manifest = RunManifest {
            command: command.to_string(),
            config_digest: config_digest(config)?,
            master_seed: seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            wall_time_seconds: started.elapsed().as_secs_f64(),
            outputs: self.written,
        };
        let json = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Config(e.to_string()))?;
        fs::write(manifest_path, json + "\n")?;
        Ok(())
    }
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(|e| Error::Config(e.to_string()))?;
    println!("{json}");
    Ok(())
}

fn run_simulate(args: &RunArgs) -> Result<()> {
    let cfg = resolve_run(args)?;
    if args.dump_config {
        return print_json(&cfg);
    }
    let started = Instant::now();
    let stats = experiments::replicate_statistic(&cfg)?;
    let mut out = Outputs::new(&args.out)?;
    out.write("stats.csv", &stats_csv(&stats))?;
    let (mean, var) = crate::numeric::mean_var(&stats);
    println!(
        "replicas = {}  mean = {}  variance = {}",
        stats.len(),
        fmt_float(mean),
        fmt_float(var)
    );
    out.finish("simulate", &cfg, Some(cfg.master_seed), started)
}

fn run_clt(args: &RunArgs) -> Result<()> {
    let cfg = resolve_run(args)?;
    if args.dump_config {
        return print_json(&cfg);
    }
    let started = Instant::now();
    let report = experiments::clt_study(&cfg)?;
    let mut out = Outputs::new(&args.out)?;
    out.write("clt.csv", &clt_csv(&report))?;
    out.write("stats.csv", &stats_csv(&report.statistics))?;
    println!(
        "regime = {}  empirical variance = {}  series variance = {}",
        report.regime.regime,
        fmt_float(report.empirical_variance),
        fmt_float(report.series_variance)
    );
    match report.ks_distance {
        Some(d) => println!(
            "KS distance = {}  (5% threshold {})",
            fmt_float(d),
            fmt_float(report.ks_threshold)
        ),
        None => println!("KS distance skipped (point-mass limit)"),
    }
    for f in &report.flags {
        println!("flag: {f}");
    }
    out.finish("clt", &cfg, Some(cfg.master_seed), started)
}

fn run_supercritical(args: &RunArgs) -> Result<()> {
    let cfg = resolve_run(args)?;
    if args.dump_config {
        return print_json(&cfg);
    }
    let started = Instant::now();
    let report = experiments::supercritical_study(&cfg)?;
    let mut out = Outputs::new(&args.out)?;
    out.write("supercritical.csv", &supercritical_csv(&report))?;
    out.write("martingale_increments.csv", &martingale_increments_csv(&report))?;
    println!(
        "median tree/generation ratio = {}  (limit 2a/(2a-1) = {})",
        fmt_float(report.ratio_median),
        fmt_float(report.expected_ratio)
    );
    for f in &report.flags {
        println!("flag: {f}");
    }
    out.finish("supercritical", &cfg, Some(cfg.master_seed), started)
}

fn run_martingale(args: &RunArgs) -> Result<()> {
    let cfg = resolve_run(args)?;
    if args.dump_config {
        return print_json(&cfg);
    }
    let started = Instant::now();
    let paths = experiments::martingale_study(&cfg)?;
    let mut out = Outputs::new(&args.out)?;
    out.write("martingale.csv", &martingale_csv(&paths))?;
    println!("wrote {} martingale paths of length {}", paths.len(), cfg.n + 1);
    out.finish("martingale", &cfg, Some(cfg.master_seed), started)
}

fn run_slopes(args: &SlopeArgs) -> Result<()> {
    let cfg = resolve_slopes(args)?;
    if args.dump_config {
        return print_json(&cfg);
    }
    let started = Instant::now();
    let study = experiments::slope_study(&cfg)?;
    let mut out = Outputs::new(&args.out)?;
    out.write("slopes.csv", &slopes_csv(&study.results))?;
    out.write("slopes_summary.csv", &slopes_summary_csv(&study.summary))?;
    if args.plot {
        out.write("slopes.svg", &slopes_svg(&study.summary))?;
    }
    for r in &study.summary {
        println!(
            "alpha = {:.4}  {}  mean slope = {:+.4} (+/- {:.4})  h1 = {:+.4}  h2 = {:+.4}",
            r.alpha,
            r.target,
            r.mean_slope,
            2.0 * r.sd,
            r.h1,
            r.h2
        );
    }
    out.finish("slopes", &cfg, Some(cfg.master_seed), started)
}

#[derive(Serialize)]
struct VarianceOutput<'a> {
    a: f64,
    sigma: f64,
    f: String,
    shape: Shape,
    #[serde(flatten)]
    report: &'a variance::VarianceReport,
}

fn run_variance(args: &VarianceArgs) -> Result<()> {
    let kernel = SymmetricKernel::new(args.a, args.sigma).map_err(|e| Error::Config(e.to_string()))?;
    let sa = kernel.sigma_a();
    let f = parse_function(&args.f)?;
    let fseq = match ShapeArg::into(args.shape) {
        Shape::Single => FunctionalSeq::single(f.to_spectral(sa)?),
        Shape::Tree => FunctionalSeq::tree(f.to_spectral(sa)?),
        Shape::Custom => {
            if args.custom.is_empty() {
                return Err(Error::Config("custom shape needs --custom functions".into()));
            }
            FunctionalSeq::custom(
                args.custom
                    .iter()
                    .map(|s| parse_function(s)?.to_spectral(sa))
                    .collect::<Result<Vec<_>>>()?,
            )?
        }
    };
    let regime = match args.regime {
        RegimeArg::Sub => Regime::Subcritical,
        RegimeArg::Crit => Regime::Critical,
        RegimeArg::Auto => RegimeTag::classify(args.a).regime,
    };
    let report = match regime {
        Regime::Subcritical => variance::sigma_sub(&kernel, &fseq, args.tol)?,
        Regime::Critical => variance::sigma_crit(&kernel, &fseq, args.tol)?,
        Regime::Supercritical => {
            return Err(Error::WrongRegime {
                operation: "variance (use the supercritical or martingale command)",
                expected: "sub-critical or critical",
                actual: Regime::Supercritical,
                a: args.a,
            })
        }
    };
    println!("regime = {}", report.regime.regime);
    println!("value = {}", fmt_float(report.value));
    println!("sigma1 = {}  sigma2 = {}", fmt_float(report.sigma1), fmt_float(report.sigma2));
    println!(
        "tail bound = {}  truncation = {}",
        fmt_float(report.tail_bound),
        report.truncation.k_max
    );
    if let Some(dir) = &args.out {
        let mut out = Outputs::new(dir)?;
        let record = VarianceOutput {
            a: args.a,
            sigma: args.sigma,
            f: f.label(),
            shape: fseq.shape(),
            report: &report,
        };
        let json = serde_json::to_string_pretty(&record).map_err(|e| Error::Config(e.to_string()))?;
        out.write("variance.json", &(json + "\n"))?;
    }
    Ok(())
}

fn run_check_assumptions(args: &AssumptionArgs) -> Result<()> {
    let report = check_assumptions(args.a, args.sigma).map_err(|e| Error::Config(e.to_string()))?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::Config(e.to_string()))?;
    println!("{json}");
    if let Some(dir) = &args.out {
        let mut out = Outputs::new(dir)?;
        out.write("assumptions.json", &(json + "\n"))?;
    }
    Ok(())
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) | Error::InvalidParams(_) => EXIT_CONFIG,
        Error::ResourceCap { .. } => EXIT_RESOURCE,
        Error::Io(_) => EXIT_IO,
        Error::DegreeCap { .. }
        | Error::ScaleMismatch { .. }
        | Error::NotSymmetric
        | Error::WrongRegime { .. }
        | Error::NoConvergence { .. } => EXIT_NUMERIC,
    }
}

fn threads_from_env() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => v
            .trim()
            .parse::<usize>()
            .map(Some)
            .map_err(|_| Error::Config(format!("{THREADS_ENV} must be a positive integer, got '{v}'"))),
        _ => Ok(None),
    }
}

/// Parses `argv` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = (|| {
        let threads = match cli.threads {
            Some(t) => Some(t),
            None => threads_from_env()?,
        };
        if threads == Some(0) {
            return Err(Error::Config("thread count must be at least 1".into()));
        }
        with_threads(threads, || match &cli.command {
            Command::Simulate(a) => run_simulate(a),
            Command::Variance(a) => run_variance(a),
            Command::Clt(a) => run_clt(a),
            Command::Slopes(a) => run_slopes(a),
            Command::Supercritical(a) => run_supercritical(a),
            Command::Martingale(a) => run_martingale(a),
            Command::CheckAssumptions(a) => run_check_assumptions(a),
        })?
    })();
    match result {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
