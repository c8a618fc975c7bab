//! The Gaussian bifurcating autoregressive (BAR) transition.
//!
//! Children of a node with trait `x` are
//! `(a0 x + b0 + ε0, a1 x + b1 + ε1)` with `(ε0, ε1) ~ N(0, Γ)`,
//! `Γ = [[σ², ρ], [ρ, σ²]]`. The kernel is symmetric when `a0 = a1`,
//! `b0 = b1 = 0` and `ρ = 0`; only then are the invariant law `μ`, the
//! closed-form `Q^n`, and the spectral machinery available.

use std::f64::consts::PI;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::GaussHermite;
use crate::rng::RandomStream;
use crate::spectral::SymmetricKernel;

/// Half-width of the band around `2a² = 1` classified as critical.
pub const EPS_REGIME: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BarParams {
    pub a0: f64,
    pub a1: f64,
    pub b0: f64,
    pub b1: f64,
    pub sigma: f64,
    pub rho: f64,
}

impl BarParams {
    pub fn symmetric(a: f64, sigma: f64) -> Result<Self> {
        BarParams {
            a0: a,
            a1: a,
            b0: 0.0,
            b1: 0.0,
            sigma,
            rho: 0.0,
        }
        .validated()
    }

    pub fn validated(self) -> Result<Self> {
        for (name, v) in [("a0", self.a0), ("a1", self.a1)] {
            if !(v.is_finite() && v.abs() < 1.0) {
                return Err(Error::InvalidParams(format!("{name} must lie in (-1, 1), got {v}")));
            }
        }
        if !(self.b0.is_finite() && self.b1.is_finite()) {
            return Err(Error::InvalidParams("b0 and b1 must be finite".into()));
        }
        if !(self.sigma.is_finite() && self.sigma > 0.0) {
            return Err(Error::InvalidParams(format!("sigma must be > 0, got {}", self.sigma)));
        }
        if !(self.rho.is_finite() && self.rho.abs() <= self.sigma * self.sigma) {
            return Err(Error::InvalidParams(format!(
                "|rho| must not exceed sigma^2, got rho = {}",
                self.rho
            )));
        }
        Ok(self)
    }

    pub fn is_symmetric(&self) -> bool {
        self.a0 == self.a1 && self.b0 == 0.0 && self.b1 == 0.0 && self.rho == 0.0
    }

    pub fn symmetric_kernel(&self) -> Result<SymmetricKernel> {
        if !self.is_symmetric() {
            return Err(Error::NotSymmetric);
        }
        SymmetricKernel::new(self.a0, self.sigma)
    }

    /// `σ (1 - a²)^{-1/2}`; symmetric kernels only.
    pub fn sigma_a(&self) -> Result<f64> {
        Ok(self.symmetric_kernel()?.sigma_a())
    }

    pub fn regime(&self) -> Result<RegimeTag> {
        Ok(RegimeTag::classify(self.symmetric_kernel()?.a()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Subcritical,
    Critical,
    Supercritical,
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Regime::Subcritical => "sub-critical",
            Regime::Critical => "critical",
            Regime::Supercritical => "super-critical",
        })
    }
}

/// Ergodic rate `α = |a|` of the symmetric kernel and its regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeTag {
    pub alpha: f64,
    pub regime: Regime,
}

impl RegimeTag {
    pub fn classify(a: f64) -> Self {
        let alpha = a.abs();
        let excess = 2.0 * alpha * alpha - 1.0;
        let regime = if excess < -EPS_REGIME {
            Regime::Subcritical
        } else if excess.abs() <= EPS_REGIME {
            Regime::Critical
        } else {
            Regime::Supercritical
        };
        RegimeTag { alpha, regime }
    }
}

/// Precomputed affine maps and Cholesky factor of `Γ`.
#[derive(Debug, Clone, Copy)]
pub struct ChildSampler {
    a0: f64,
    a1: f64,
    b0: f64,
    b1: f64,
    l11: f64,
    l21: f64,
    l22: f64,
}

impl ChildSampler {
    pub fn new(params: &BarParams) -> Self {
        let s = params.sigma;
        let l21 = params.rho / s;
        let l22 = (s * s - l21 * l21).max(0.0).sqrt();
        ChildSampler {
            a0: params.a0,
            a1: params.a1,
            b0: params.b0,
            b1: params.b1,
            l11: s,
            l21,
            l22,
        }
    }

    /// Children of the node at heap index `node` (root = 1) with trait `x`.
    ///
    /// The two standard normals are read at counters `2 node` and
    /// `2 node + 1`, the heap indices of the children.
    #[inline]
    pub fn sample(&self, x: f64, stream: &RandomStream, node: u64) -> (f64, f64) {
        let z0 = stream.normal(2 * node);
        let z1 = stream.normal(2 * node + 1);
        let e0 = self.l11 * z0;
        let e1 = self.l21 * z0 + self.l22 * z1;
        (self.a0 * x + self.b0 + e0, self.a1 * x + self.b1 + e1)
    }
}

pub fn sample_children(x: f64, params: &BarParams, stream: &RandomStream, node: u64) -> (f64, f64) {
    ChildSampler::new(params).sample(x, stream, node)
}

/// One draw of `a^n x + (1 - a^{2n})^{1/2} σ_a G`.
pub fn sample_qn(x: f64, n: u32, params: &BarParams, stream: &RandomStream, counter: u64) -> Result<f64> {
    let kernel = params.symmetric_kernel()?;
    if n == 0 {
        return Ok(x);
    }
    let an = kernel.a().powi(n as i32);
    let sd = (1.0 - an * an).max(0.0).sqrt() * kernel.sigma_a();
    Ok(an * x + sd * stream.normal(counter))
}

/// Reference measure for transition densities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DensityBase {
    /// Densities with respect to `μ` (resp. `μ ⊗ μ`); symmetric kernels only.
    #[default]
    Mu,
    Lebesgue,
}

fn normal_pdf(z: f64, sd: f64) -> f64 {
    (-(z * z) / (2.0 * sd * sd)).exp() / ((2.0 * PI).sqrt() * sd)
}

/// Density of `Q(x, dy)`.
pub fn density_q(params: &BarParams, x: f64, y: f64, base: DensityBase) -> Result<f64> {
    match base {
        DensityBase::Mu => {
            let k = params.symmetric_kernel()?;
            let a = k.a();
            let s2 = k.sigma() * k.sigma();
            let quad = a * a * y * y + a * a * x * x - 2.0 * a * x * y;
            Ok((-quad / (2.0 * s2)).exp() / (1.0 - a * a).sqrt())
        }
        DensityBase::Lebesgue => {
            let s = params.sigma;
            Ok(0.5
                * (normal_pdf(y - params.a0 * x - params.b0, s)
                    + normal_pdf(y - params.a1 * x - params.b1, s)))
        }
    }
}

/// Density of `P(x, dy, dz)`.
pub fn density_p(params: &BarParams, x: f64, y: f64, z: f64, base: DensityBase) -> Result<f64> {
    match base {
        DensityBase::Mu => Ok(density_q(params, x, y, base)? * density_q(params, x, z, base)?),
        DensityBase::Lebesgue => {
            let s2 = params.sigma * params.sigma;
            let det = s2 * s2 - params.rho * params.rho;
            if det <= 0.0 {
                return Err(Error::InvalidParams(
                    "|rho| = sigma^2: the noise is degenerate and has no density".into(),
                ));
            }
            let u = y - params.a0 * x - params.b0;
            let v = z - params.a1 * x - params.b1;
            let g = u * u - 2.0 * params.rho / s2 * u * v + v * v;
            Ok((-(s2 / (2.0 * det)) * g).exp() / (2.0 * PI * det.sqrt()))
        }
    }
}

/// `𝔥(x) = (∫ q(x, y)² μ(dy))^{1/2}` in closed form.
pub fn frak_h(x: f64, kernel: &SymmetricKernel) -> f64 {
    h_profile(kernel).eval(x)
}

/// `C exp(β x²)`, kept in log form.
#[derive(Debug, Clone, Copy, PartialEq)]
struct GaussExp {
    log_c: f64,
    beta: f64,
}

impl GaussExp {
    fn eval(&self, x: f64) -> f64 {
        (self.log_c + self.beta * x * x).exp()
    }

    fn powi(&self, k: i32) -> GaussExp {
        GaussExp {
            log_c: self.log_c * k as f64,
            beta: self.beta * k as f64,
        }
    }

    fn mul(&self, other: &GaussExp) -> GaussExp {
        GaussExp {
            log_c: self.log_c + other.log_c,
            beta: self.beta + other.beta,
        }
    }

    /// `Q` applied in closed form; `None` when the Gaussian integral diverges.
    fn apply_q(&self, kernel: &SymmetricKernel) -> (Option<GaussExp>, f64) {
        let s2 = kernel.sigma() * kernel.sigma();
        let a = kernel.a();
        let margin = 1.0 - 2.0 * self.beta * s2;
        if margin <= 0.0 {
            return (None, margin);
        }
        (
            Some(GaussExp {
                log_c: self.log_c - 0.5 * margin.ln(),
                beta: self.beta * a * a / margin,
            }),
            margin,
        )
    }

    /// `∫ C exp(β x²) μ(dx)`, with the relative margin `1 - 2βσ_a²`.
    fn mu_integral(&self, sigma_a: f64) -> (Option<f64>, f64) {
        let margin = 1.0 - 2.0 * self.beta * sigma_a * sigma_a;
        if margin <= 0.0 {
            (None, margin)
        } else {
            (Some((self.log_c - 0.5 * margin.ln()).exp()), margin)
        }
    }
}

fn h_profile(kernel: &SymmetricKernel) -> GaussExp {
    let a2 = kernel.a() * kernel.a();
    let s2 = kernel.sigma() * kernel.sigma();
    GaussExp {
        log_c: -0.25 * (1.0 - a2 * a2).ln(),
        beta: a2 * (1.0 - a2) / (1.0 + a2) / (2.0 * s2),
    }
}

/// Relative margin below which a finiteness decision is flagged as near threshold.
pub const NEAR_THRESHOLD_MARGIN: f64 = 1e-3;
/// Relative disagreement between closed form and quadrature that raises a flag.
pub const QUADRATURE_MISMATCH_TOL: f64 = 1e-6;
pub const CROSS_CHECK_ORDERS: [usize; 3] = [32, 64, 128];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionNorms {
    /// `‖𝔥‖_{L²(μ)}`, always finite for `|a| < 1`.
    pub h_l2: f64,
    pub h_l4: Option<f64>,
    pub qh_l4: Option<f64>,
    /// `‖P(P(𝔥⊗²) ⊗_sym 𝔥)‖_{L²(μ)}`.
    pub hilsch2_l2: Option<f64>,
}

/// Quadrature values of a norm at the cross-check orders.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossCheck {
    pub name: String,
    pub closed_form: f64,
    pub orders: Vec<usize>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub a: f64,
    pub sigma: f64,
    #[serde(rename = "h_in_L4")]
    pub h_in_l4: bool,
    #[serde(rename = "Qh_in_L4")]
    pub qh_in_l4: bool,
    pub hilsch2_holds: bool,
    pub norms: AssumptionNorms,
    pub cross_checks: Vec<CrossCheck>,
    pub flags: Vec<String>,
}

/// Integrability of `𝔥` and of the kernel terms built on it, for the
/// symmetric kernel with parameter `a` and noise scale `sigma`.
///
/// Every function involved is of the form `C exp(β x²)`, so finiteness is
/// decided by the sign of the quadratic's leading coefficient. Finite norms
/// are then recomputed by nested Gauss-Hermite quadrature.
pub fn check_assumptions(a: f64, sigma: f64) -> Result<AssumptionReport> {
    let kernel = SymmetricKernel::new(a, sigma)?;
    let sigma_a = kernel.sigma_a();
    let mut flags = Vec::new();
    let mut note_margin = |name: &str, margin: f64| {
        if margin.abs() < NEAR_THRESHOLD_MARGIN {
            flags.push(format!("near_threshold:{name}:margin={margin:.3e}"));
        }
    };

    let h = h_profile(&kernel);
    let (h2, _) = h.powi(2).mu_integral(sigma_a);
    let h_l2 = h2.expect("h is square integrable for |a| < 1").sqrt();

    let (h4, m_h) = h.powi(4).mu_integral(sigma_a);
    note_margin("h_in_L4", m_h);

    let (qh, _) = h.apply_q(&kernel);
    let qh = qh.expect("Q h is finite for |a| < 1");
    let (qh4, m_qh) = qh.powi(4).mu_integral(sigma_a);
    note_margin("Qh_in_L4", m_qh);

    // P(P(h⊗h) ⊗_sym h) = Q((Qh)²) · Qh for the symmetric kernel.
    let (q_qh2, m_inner) = qh.powi(2).apply_q(&kernel);
    note_margin("hilsch2_inner", m_inner);
    let (hs2, m_hs2) = match q_qh2 {
        Some(inner) => inner.mul(&qh).powi(2).mu_integral(sigma_a),
        None => (None, m_inner),
    };
    note_margin("hilsch2", m_hs2);

    let norms = AssumptionNorms {
        h_l2,
        h_l4: h4.map(|v| v.powf(0.25)),
        qh_l4: qh4.map(|v| v.powf(0.25)),
        hilsch2_l2: hs2.map(f64::sqrt),
    };

    let mut cross_checks = Vec::new();
    if let Some(v) = h4 {
        cross_checks.push(cross_check("h_L4^4", v, &kernel, h.powi(4).beta, |rule, x| {
            let h_num = h_by_definition(rule, &kernel, x);
            h_num.powi(4)
        }));
    }
    if let Some(v) = qh4 {
        cross_checks.push(cross_check("Qh_L4^4", v, &kernel, qh.powi(4).beta, |rule, x| {
            q_numeric(rule, &kernel, x, |y| frak_h(y, &kernel)).powi(4)
        }));
    }
    if let (Some(v), Some(inner)) = (hs2, q_qh2) {
        let beta = inner.mul(&qh).powi(2).beta;
        cross_checks.push(cross_check("hilsch2_L2^2", v, &kernel, beta, |rule, x| {
            let qh_at = |y: f64| q_numeric(rule, &kernel, y, |w| frak_h(w, &kernel));
            let outer = q_numeric(rule, &kernel, x, |y| qh_at(y).powi(2));
            (outer * qh_at(x)).powi(2)
        }));
    }
    for check in &cross_checks {
        let best = *check.values.last().expect("at least one order");
        let rel = ((best - check.closed_form) / check.closed_form).abs();
        if !(rel <= QUADRATURE_MISMATCH_TOL) {
            flags.push(format!("quadrature_mismatch:{}:rel={rel:.3e}", check.name));
        }
    }

    Ok(AssumptionReport {
        a,
        sigma,
        h_in_l4: h4.is_some(),
        qh_in_l4: qh4.is_some(),
        hilsch2_holds: hs2.is_some(),
        norms,
        cross_checks,
        flags,
    })
}

/// `𝔥(x)` from its defining integral `(∫ q(x, y)² μ(dy))^{1/2}`.
pub fn h_by_definition(rule: &GaussHermite, kernel: &SymmetricKernel, x: f64) -> f64 {
    let a = kernel.a();
    let s2 = kernel.sigma() * kernel.sigma();
    let q = |y: f64| (-(a * a * y * y + a * a * x * x - 2.0 * a * x * y) / (2.0 * s2)).exp() / (1.0 - a * a).sqrt();
    rule.expect_normal(0.0, kernel.sigma_a(), |y| q(y).powi(2)).sqrt()
}

fn q_numeric(rule: &GaussHermite, kernel: &SymmetricKernel, x: f64, f: impl Fn(f64) -> f64) -> f64 {
    rule.expect_normal(kernel.a() * x, kernel.sigma(), f)
}

/// `∫ F dμ` where `F(x) ≈ C exp(β x²)`: the factor `exp(β x²)` is folded into
/// the Gaussian weight and the remaining bounded factor is integrated.
fn cross_check(
    name: &str,
    closed_form: f64,
    kernel: &SymmetricKernel,
    beta: f64,
    integrand: impl Fn(&GaussHermite, f64) -> f64,
) -> CrossCheck {
    let sigma_a = kernel.sigma_a();
    let lambda = 1.0 / (2.0 * sigma_a * sigma_a) - beta;
    let values = CROSS_CHECK_ORDERS
        .iter()
        .map(|&order| {
            let rule = GaussHermite::new(order);
            // far nodes can overflow the unbounded factor; their weight is negligible
            let total = rule.integrate(|t| {
                let x = t / lambda.sqrt();
                let v = integrand(&rule, x) * (-beta * x * x).exp();
                if v.is_finite() {
                    v
                } else {
                    0.0
                }
            });
            total / ((2.0 * PI).sqrt() * sigma_a * lambda.sqrt())
        })
        .collect();
    CrossCheck {
        name: name.to_string(),
        closed_form,
        orders: CROSS_CHECK_ORDERS.to_vec(),
        values,
    }
}
