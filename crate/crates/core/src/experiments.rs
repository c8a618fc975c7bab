//! Monte-Carlo studies: CLT checks per regime, super-critical limits and the
//! phase-transition slope experiment.

use std::fmt;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::kernels::{BarParams, Regime, RegimeTag};
use crate::numeric::{mean_var, ols, OlsFit};
use crate::rng::RandomStream;
use crate::spectral::{SpectralFn, SymmetricKernel};
use crate::tree_sim::{generation_sums, replicate, simulate_streaming, FunctionalSeq, InitialLaw, NStatistic, Shape};
use crate::variance::{self, VarianceReport};

/// Highest monomial power accepted in function descriptors.
pub const MAX_MONOMIAL_POWER: usize = 8;
pub const DEFAULT_N_MIN: usize = 5;
pub const DEFAULT_OUTER_REPEATS: usize = 20;

/// A test function: `"x"`, `"x^p"`, a constant such as `"1.5"`, or monomial coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FunctionDesc {
    Expr(String),
    Coeffs(Vec<f64>),
}

impl FunctionDesc {
    pub fn monomial(p: usize) -> Self {
        FunctionDesc::Expr(if p == 1 { "x".into() } else { format!("x^{p}") })
    }

    /// Monomial coefficients `[c_0, c_1, ...]`.
    pub fn coefficients(&self) -> Result<Vec<f64>> {
        match self {
            FunctionDesc::Coeffs(c) => {
                if c.is_empty() || c.len() > MAX_MONOMIAL_POWER + 1 {
                    return Err(Error::Config(format!(
                        "coefficient list must have 1..={} entries",
                        MAX_MONOMIAL_POWER + 1
                    )));
                }
                Ok(c.clone())
            }
            FunctionDesc::Expr(e) => {
                let e = e.trim();
                let power = if e == "x" {
                    Some(1)
                } else if let Some(p) = e.strip_prefix("x^") {
                    Some(p.trim().parse::<usize>().map_err(|_| Error::Config(format!("bad power in '{e}'")))?)
                } else {
                    None
                };
                match power {
                    Some(p) if p > MAX_MONOMIAL_POWER => Err(Error::Config(format!(
                        "power {p} in '{e}' exceeds {MAX_MONOMIAL_POWER}"
                    ))),
                    Some(p) => {
                        let mut c = vec![0.0; p + 1];
                        c[p] = 1.0;
                        Ok(c)
                    }
                    None => e
                        .parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .map(|v| vec![v])
                        .ok_or_else(|| Error::Config(format!("unrecognised function '{e}' (use x, x^p or a number)"))),
                }
            }
        }
    }

    pub fn to_spectral(&self, sigma_a: f64) -> Result<SpectralFn> {
        SpectralFn::from_monomial(&self.coefficients()?, sigma_a)
    }

    pub fn label(&self) -> String {
        match self {
            FunctionDesc::Expr(e) => e.trim().to_string(),
            FunctionDesc::Coeffs(c) => {
                let parts: Vec<String> = c.iter().map(|v| v.to_string()).collect();
                format!("[{}]", parts.join(";"))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Target {
    /// The last generation `𝔾_n`.
    #[default]
    Gn,
    /// The whole tree `𝕋_n`.
    Tn,
}

impl fmt::Display for Target {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Target::Gn => "Gn",
            Target::Tn => "Tn",
        })
    }
}

fn default_nu() -> InitialLaw {
    InitialLaw::Stationary
}

fn default_shape() -> Shape {
    Shape::Single
}

fn default_tol() -> f64 {
    variance::DEFAULT_TOL
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub params: BarParams,
    #[serde(default = "default_nu")]
    pub nu: InitialLaw,
    /// Function of the single and tree shapes.
    pub f: FunctionDesc,
    #[serde(default = "default_shape")]
    pub shape: Shape,
    /// `f_0, f_1, ...` of the custom shape.
    #[serde(default)]
    pub custom: Vec<FunctionDesc>,
    pub n: usize,
    pub replicas: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub target: Target,
    #[serde(default = "default_tol")]
    pub tol: f64,
}

impl ExperimentConfig {
    pub fn symmetric(a: f64, sigma: f64, f: FunctionDesc, n: usize, replicas: usize, master_seed: u64) -> Result<Self> {
        Ok(ExperimentConfig {
            params: BarParams::symmetric(a, sigma)?,
            nu: default_nu(),
            f,
            shape: default_shape(),
            custom: Vec::new(),
            n,
            replicas,
            master_seed,
            target: Target::Gn,
            tol: default_tol(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validated()?;
        if self.replicas < 2 {
            return Err(Error::Config(format!("replicas must be >= 2, got {}", self.replicas)));
        }
        if self.n < 3 {
            return Err(Error::Config(format!("depth n must be >= 3, got {}", self.n)));
        }
        if self.target == Target::Tn && self.shape != Shape::Tree {
            return Err(Error::Config("target Tn requires the tree shape".into()));
        }
        if self.shape == Shape::Custom && self.custom.is_empty() {
            return Err(Error::Config("custom shape needs a non-empty 'custom' list".into()));
        }
        self.nu.validate(&self.params)
    }

    pub fn kernel(&self) -> Result<SymmetricKernel> {
        self.params.symmetric_kernel()
    }

    pub fn fseq(&self) -> Result<FunctionalSeq> {
        let sa = self.params.sigma_a()?;
        match self.shape {
            Shape::Single => Ok(FunctionalSeq::single(self.f.to_spectral(sa)?)),
            Shape::Tree => Ok(FunctionalSeq::tree(self.f.to_spectral(sa)?)),
            Shape::Custom => FunctionalSeq::custom(
                self.custom
                    .iter()
                    .map(|d| d.to_spectral(sa))
                    .collect::<Result<Vec<_>>>()?,
            ),
        }
    }

    pub fn master(&self) -> RandomStream {
        RandomStream::new(self.master_seed)
    }
}

/// Factor turning `N_{n,∅}(𝔣)` into the statistic reported for `regime` and `target`.
fn normalisation(tag: RegimeTag, n: usize, target: Target) -> f64 {
    let nf = n as f64;
    let regime = match tag.regime {
        Regime::Subcritical => 1.0,
        Regime::Critical => nf.powf(-0.5),
        Regime::Supercritical => 2f64.powf(nf / 2.0) * (2.0 * tag.alpha).powf(-nf),
    };
    let tree = match (tag.regime, target) {
        (Regime::Supercritical, _) | (_, Target::Gn) => 1.0,
        // |𝔾_n|^{-1/2} -> |𝕋_n|^{-1/2}
        (_, Target::Tn) => (2.0 - 2f64.powf(-nf)).powf(-0.5),
    };
    regime * tree
}

/// The regime-normalised fluctuation statistic, one value per replica.
///
/// Sub-critical: `|𝔸_n|^{-1/2}`-scaled sum; critical: an extra `n^{-1/2}`;
/// super-critical: `(2α)^{-n} Σ_ℓ M_{𝔾_{n-ℓ}}(f̃_ℓ)`.
pub fn replicate_statistic(cfg: &ExperimentConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let tag = cfg.params.regime()?;
    let fseq = cfg.fseq()?;
    let factor = normalisation(tag, cfg.n, cfg.target);
    replicate(&cfg.master(), cfg.replicas, |_, stream| {
        let mut acc = NStatistic::new(&fseq, cfg.n);
        simulate_streaming(&cfg.nu, &cfg.params, cfg.n, stream, |buf| acc.observe(buf))?;
        Ok(acc.value() * factor)
    })
}

/// Mean and population central-moment ratios of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleMoments {
    pub mean: f64,
    /// Unbiased variance.
    pub variance: f64,
    pub skewness: f64,
    /// Non-excess kurtosis (3 for a Gaussian).
    pub kurtosis: f64,
}

pub fn sample_moments(values: &[f64]) -> SampleMoments {
    let (mean, variance) = mean_var(values);
    let n = values.len() as f64;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in values {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    let (skewness, kurtosis) = if m2 > 0.0 {
        (m3 / m2.powf(1.5), m4 / (m2 * m2))
    } else {
        (0.0, 0.0)
    };
    SampleMoments {
        mean,
        variance,
        skewness,
        kurtosis,
    }
}

/// One-sample Kolmogorov-Smirnov distance to a continuous CDF.
pub fn ks_distance(values: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max)
}

/// 5%-level critical value `1.36 / √R` of the KS distance.
pub fn ks_threshold(replicas: usize) -> f64 {
    1.36 / (replicas as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    pub n: usize,
    pub regime: RegimeTag,
    pub empirical_variance: f64,
    pub series_variance: f64,
    pub series: VarianceReport,
    /// `None` when the limit is a point mass.
    pub ks_distance: Option<f64>,
    pub ks_threshold: f64,
    pub moments: SampleMoments,
    pub flags: Vec<String>,
    pub statistics: Vec<f64>,
}

/// Replicates the normalised statistic and compares it with the series variance.
pub fn clt_study(cfg: &ExperimentConfig) -> Result<CltReport> {
    cfg.validate()?;
    let kernel = cfg.kernel()?;
    let tag = RegimeTag::classify(kernel.a());
    let fseq = cfg.fseq()?;
    let series = match tag.regime {
        Regime::Subcritical => variance::sigma_sub(&kernel, &fseq, cfg.tol)?,
        Regime::Critical => variance::sigma_crit(&kernel, &fseq, cfg.tol)?,
        Regime::Supercritical => {
            return Err(Error::WrongRegime {
                operation: "clt_study (use supercritical_study)",
                expected: "sub-critical or critical",
                actual: tag.regime,
                a: kernel.a(),
            })
        }
    };
    let series_variance = match cfg.target {
        Target::Gn => series.value,
        Target::Tn => series.value / 2.0,
    };
    let statistics = replicate_statistic(cfg)?;
    let moments = sample_moments(&statistics);
    let mut flags = Vec::new();
    if !matches!(cfg.nu, InitialLaw::Stationary) {
        flags.push("initial_law_not_stationary".to_string());
    }
    let ks = if series_variance > 0.0 {
        let normal = Normal::new(0.0, series_variance.sqrt()).map_err(|e| Error::InvalidParams(e.to_string()))?;
        Some(ks_distance(&statistics, |v| normal.cdf(v)))
    } else {
        flags.push("ks_skipped_point_mass".to_string());
        None
    };
    if moments.variance == 0.0 {
        flags.push("degenerate_sample".to_string());
    }
    Ok(CltReport {
        n: cfg.n,
        regime: tag,
        empirical_variance: moments.variance,
        series_variance,
        series,
        ks_distance: ks,
        ks_threshold: ks_threshold(cfg.replicas),
        moments,
        flags,
        statistics,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupercriticalReport {
    pub n: usize,
    pub regime: RegimeTag,
    /// Median over replicas of the tree statistic over the generation statistic.
    pub ratio_median: f64,
    /// `2α / (2α - 1)`.
    pub expected_ratio: f64,
    /// `E|M_{k+1} - M_k|` for `k = 0..n`.
    pub martingale_l1_diffs: Vec<f64>,
    /// `E[M_k]` for `k = 0..=n`.
    pub martingale_means: Vec<f64>,
    pub generation_stats: Vec<f64>,
    pub tree_stats: Vec<f64>,
    pub flags: Vec<String>,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n == 0 {
        f64::NAN
    } else if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Rescaled limits and martingale increments in the super-critical regime.
pub fn supercritical_study(cfg: &ExperimentConfig) -> Result<SupercriticalReport> {
    cfg.validate()?;
    let kernel = cfg.kernel()?;
    let tag = RegimeTag::classify(kernel.a());
    if tag.regime != Regime::Supercritical {
        return Err(Error::WrongRegime {
            operation: "supercritical_study",
            expected: "super-critical",
            actual: tag.regime,
            a: kernel.a(),
        });
    }
    let f = cfg.f.to_spectral(kernel.sigma_a())?;
    let funcs = [f.center(), f.project_r()];
    let per_replica = replicate(&cfg.master(), cfg.replicas, |_, stream| {
        let sums = generation_sums(&cfg.nu, &cfg.params, cfg.n, stream, &funcs)?;
        let centered: Vec<f64> = sums.iter().map(|s| s[0]).collect();
        let rf: Vec<f64> = sums.iter().map(|s| s[1]).collect();
        let limits = variance::supercritical_limits_from_sums(&kernel, &centered)?;
        let path = variance::martingale_from_sums(&kernel, &rf)?;
        Ok((limits, path))
    })?;
    let r = per_replica.len() as f64;
    let mut flags = Vec::new();
    let mut ratios: Vec<f64> = per_replica
        .iter()
        .filter(|((g, _), _)| *g != 0.0)
        .map(|((g, t), _)| t / g)
        .collect();
    if ratios.len() < per_replica.len() {
        flags.push(format!("zero_generation_statistic:{}", per_replica.len() - ratios.len()));
    }
    let ratio_median = median(&mut ratios);
    let martingale_means = (0..=cfg.n)
        .map(|k| per_replica.iter().map(|(_, p)| p[k]).sum::<f64>() / r)
        .collect();
    let martingale_l1_diffs = (0..cfg.n)
        .map(|k| per_replica.iter().map(|(_, p)| (p[k + 1] - p[k]).abs()).sum::<f64>() / r)
        .collect();
    let two_alpha = 2.0 * tag.alpha;
    Ok(SupercriticalReport {
        n: cfg.n,
        regime: tag,
        ratio_median,
        expected_ratio: two_alpha / (two_alpha - 1.0),
        martingale_l1_diffs,
        martingale_means,
        generation_stats: per_replica.iter().map(|((g, _), _)| *g).collect(),
        tree_stats: per_replica.iter().map(|((_, t), _)| *t).collect(),
        flags,
    })
}

/// Martingale paths `M_k = (2a)^{-k} M_{𝔾_k}(R f)`, `k = 0..=n`, one per replica.
pub fn martingale_study(cfg: &ExperimentConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let kernel = cfg.kernel()?;
    let rf = [cfg.f.to_spectral(kernel.sigma_a())?.project_r()];
    replicate(&cfg.master(), cfg.replicas, |_, stream| {
        let sums = generation_sums(&cfg.nu, &cfg.params, cfg.n, stream, &rf)?;
        let per_gen: Vec<f64> = sums.iter().map(|s| s[0]).collect();
        variance::martingale_from_sums(&kernel, &per_gen)
    })
}

/// `h₁(α) = log₂(α² ∨ 1/2)`, the limiting slope when `R f ≠ 0`.
pub fn h1(alpha: f64) -> f64 {
    (alpha * alpha).max(0.5).log2()
}

/// `h₂(α) = log₂(α⁴ ∨ 1/2)`, the limiting slope when `R f = 0` and `f̂ ≠ 0`.
pub fn h2(alpha: f64) -> f64 {
    alpha.powi(4).max(0.5).log2()
}

fn default_sigma() -> f64 {
    1.0
}

fn default_targets() -> Vec<Target> {
    vec![Target::Gn]
}

fn default_n_min() -> usize {
    DEFAULT_N_MIN
}

fn default_outer() -> usize {
    DEFAULT_OUTER_REPEATS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SlopeConfig {
    pub alphas: Vec<f64>,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    pub fs: Vec<FunctionDesc>,
    #[serde(default = "default_targets")]
    pub targets: Vec<Target>,
    #[serde(default = "default_n_min")]
    pub n_min: usize,
    pub n_max: usize,
    pub replicas: usize,
    #[serde(default = "default_outer")]
    pub outer_repeats: usize,
    pub master_seed: u64,
    #[serde(default = "default_nu")]
    pub nu: InitialLaw,
}

impl SlopeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.alphas.is_empty() || self.alphas.iter().any(|&a| !(a > 0.0 && a < 1.0)) {
            return Err(Error::Config("alphas must be a non-empty list inside (0, 1)".into()));
        }
        if self.n_max < self.n_min + 3 {
            return Err(Error::Config(format!(
                "need n_max >= n_min + 3, got n_min = {}, n_max = {}",
                self.n_min, self.n_max
            )));
        }
        if self.replicas < 2 || self.outer_repeats < 1 || self.fs.is_empty() || self.targets.is_empty() {
            return Err(Error::Config(
                "need replicas >= 2, outer_repeats >= 1 and at least one function and target".into(),
            ));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::Config("sigma must be > 0".into()));
        }
        for f in &self.fs {
            f.coefficients()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeResult {
    pub alpha: f64,
    pub target: Target,
    pub f: String,
    pub n_min: usize,
    pub n_max: usize,
    pub slope: f64,
    pub stderr: f64,
    pub h1: f64,
    pub h2: f64,
    pub replicas: usize,
    pub outer_repeat: usize,
    pub flags: Vec<String>,
}

/// Mean and spread of the slope over outer repeats.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeSummary {
    pub alpha: f64,
    pub target: Target,
    pub f: String,
    pub mean_slope: f64,
    pub sd: f64,
    /// `mean - 2 sd`.
    pub lower: f64,
    /// `mean + 2 sd`.
    pub upper: f64,
    pub h1: f64,
    pub h2: f64,
    pub repeats: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeStudy {
    pub results: Vec<SlopeResult>,
    pub summary: Vec<SlopeSummary>,
}

/// OLS slope of `log var` against `log size`, skipping non-positive variances.
pub fn fit_log_slope(sizes: &[f64], variances: &[f64]) -> (Option<OlsFit>, usize) {
    let (x, y): (Vec<f64>, Vec<f64>) = sizes
        .iter()
        .zip(variances)
        .filter(|(_, v)| v.is_finite() && **v > 0.0)
        .map(|(s, v)| (s.ln(), v.ln()))
        .unzip();
    let omitted = sizes.len() - x.len();
    (ols(&x, &y), omitted)
}

/// For every α, outer repeat, function and target: the regression slope of
/// `log Var(|𝔸_k|^{-1} M_{𝔸_k}(f))` on `log |𝔸_k|` over `k ∈ [n_min, n_max]`.
///
/// All functions and targets share the simulated trees of a given α and repeat.
pub fn slope_study(cfg: &SlopeConfig) -> Result<SlopeStudy> {
    cfg.validate()?;
    let seed = RandomStream::new(cfg.master_seed);
    let mut results = Vec::new();
    for &alpha in &cfg.alphas {
        let params = BarParams::symmetric(alpha, cfg.sigma)?;
        let sa = params.sigma_a()?;
        let funcs = cfg
            .fs
            .iter()
            .map(|d| d.to_spectral(sa).map(|f| f.center()))
            .collect::<Result<Vec<_>>>()?;
        for outer in 0..cfg.outer_repeats {
            let master = seed.split(alpha.to_bits()).split(outer as u64);
            let sums = replicate(&master, cfg.replicas, |_, stream| {
                generation_sums(&cfg.nu, &params, cfg.n_max, stream, &funcs)
            })?;
            for (j, desc) in cfg.fs.iter().enumerate() {
                for &target in &cfg.targets {
                    let mut sizes = Vec::new();
                    let mut variances = Vec::new();
                    for k in cfg.n_min..=cfg.n_max {
                        let size = match target {
                            Target::Gn => 2f64.powi(k as i32),
                            Target::Tn => 2f64.powi(k as i32 + 1) - 1.0,
                        };
                        let values: Vec<f64> = sums
                            .iter()
                            .map(|s| {
                                let m = match target {
                                    Target::Gn => s[k][j],
                                    Target::Tn => s[..=k].iter().map(|g| g[j]).sum(),
                                };
                                m / size
                            })
                            .collect();
                        sizes.push(size);
                        variances.push(mean_var(&values).1);
                    }
                    let (fit, omitted) = fit_log_slope(&sizes, &variances);
                    let mut flags = Vec::new();
                    if omitted > 0 {
                        flags.push(format!("degenerate_variance_points_omitted:{omitted}"));
                    }
                    let (slope, stderr) = match fit {
                        Some(fit) => (fit.slope, fit.stderr),
                        None => {
                            flags.push("too_few_points".into());
                            (f64::NAN, f64::NAN)
                        }
                    };
                    results.push(SlopeResult {
                        alpha,
                        target,
                        f: desc.label(),
                        n_min: cfg.n_min,
                        n_max: cfg.n_max,
                        slope,
                        stderr,
                        h1: h1(alpha),
                        h2: h2(alpha),
                        replicas: cfg.replicas,
                        outer_repeat: outer,
                        flags,
                    });
                }
            }
        }
    }
    let summary = summarise(cfg, &results);
    Ok(SlopeStudy { results, summary })
}

fn summarise(cfg: &SlopeConfig, results: &[SlopeResult]) -> Vec<SlopeSummary> {
    let mut out = Vec::new();
    for &alpha in &cfg.alphas {
        for desc in &cfg.fs {
            let label = desc.label();
            for &target in &cfg.targets {
                let slopes: Vec<f64> = results
                    .iter()
                    .filter(|r| r.alpha == alpha && r.target == target && r.f == label && r.slope.is_finite())
                    .map(|r| r.slope)
                    .collect();
                let (mean, var) = if slopes.is_empty() {
                    (f64::NAN, f64::NAN)
                } else {
                    mean_var(&slopes)
                };
                let sd = var.sqrt();
                out.push(SlopeSummary {
                    alpha,
                    target,
                    f: label.clone(),
                    mean_slope: mean,
                    sd,
                    lower: mean - 2.0 * sd,
                    upper: mean + 2.0 * sd,
                    h1: h1(alpha),
                    h2: h2(alpha),
                    repeats: slopes.len(),
                });
            }
        }
    }
    out
}
