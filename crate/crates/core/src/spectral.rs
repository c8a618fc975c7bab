//! Exact function algebra in the Hermite eigenbasis of the symmetric BAR
//! transition operator.
//!
//! A [`SpectralFn`] stores `f(x) = Σ c_n He_n(x / σ_a)`, where `He_n` are the
//! probabilists' Hermite polynomials and `σ_a` is the standard deviation of
//! the invariant law `μ = N(0, σ_a²)`. In this basis `Q` is diagonal with
//! eigenvalues `a^n`, `⟨μ, He_m He_n⟩ = n! 1{m = n}`, and for the symmetric
//! kernel `P(f ⊗ g) = (Qf)(Qg)`.

use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Highest Hermite index a [`SpectralFn`] may carry.
pub const DEGREE_CAP: usize = 64;

const TRIM_THRESHOLD: f64 = 1e-300;
const SCALE_REL_TOL: f64 = 1e-12;

fn factorials() -> &'static [f64; DEGREE_CAP + 1] {
    static TABLE: OnceLock<[f64; DEGREE_CAP + 1]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = [1.0; DEGREE_CAP + 1];
        for n in 1..=DEGREE_CAP {
            t[n] = t[n - 1] * n as f64;
        }
        t
    })
}

/// `n!` as a float, for `n <= DEGREE_CAP`.
pub fn factorial(n: usize) -> f64 {
    factorials()[n]
}

/// Probabilists' Hermite polynomial `He_n(u)` by the three-term recurrence.
pub fn hermite(n: usize, u: f64) -> f64 {
    let (mut prev, mut cur) = (1.0, u);
    if n == 0 {
        return prev;
    }
    for k in 1..n {
        let next = u * cur - k as f64 * prev;
        prev = cur;
        cur = next;
    }
    cur
}

pub fn same_scale(left: f64, right: f64) -> Result<()> {
    if (left - right).abs() <= SCALE_REL_TOL * left.abs().max(right.abs()) {
        Ok(())
    } else {
        Err(Error::ScaleMismatch { left, right })
    }
}

/// A polynomial test function expressed in the scaled Hermite basis.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralFn {
    sigma_a: f64,
    coeffs: Vec<f64>,
}

impl SpectralFn {
    pub fn new(sigma_a: f64, coeffs: Vec<f64>) -> Result<Self> {
        if !(sigma_a.is_finite() && sigma_a > 0.0) {
            return Err(Error::InvalidParams(format!(
                "stationary scale must be positive and finite, got {sigma_a}"
            )));
        }
        if let Some(bad) = coeffs.iter().find(|c| !c.is_finite()) {
            return Err(Error::InvalidParams(format!("non-finite coefficient {bad}")));
        }
        let mut f = SpectralFn { sigma_a, coeffs };
        f.trim();
        if f.coeffs.len() > DEGREE_CAP + 1 {
            return Err(Error::DegreeCap {
                degree: f.coeffs.len() - 1,
                cap: DEGREE_CAP,
            });
        }
        Ok(f)
    }

    pub fn zero(sigma_a: f64) -> Self {
        SpectralFn {
            sigma_a,
            coeffs: Vec::new(),
        }
    }

    pub fn constant(sigma_a: f64, c: f64) -> Self {
        let mut f = SpectralFn {
            sigma_a,
            coeffs: vec![c],
        };
        f.trim();
        f
    }

    /// The eigenfunction `ḡ_n(x) = He_n(x / σ_a)`.
    pub fn basis(sigma_a: f64, n: usize) -> Result<Self> {
        let mut coeffs = vec![0.0; n + 1];
        coeffs[n] = 1.0;
        SpectralFn::new(sigma_a, coeffs)
    }

    /// Converts `Σ poly[k] x^k` into the Hermite basis.
    ///
    /// Uses `x He_n(u) = σ_a (He_{n+1}(u) + n He_{n-1}(u))` to build the
    /// expansion of each power incrementally.
    pub fn from_monomial(poly: &[f64], sigma_a: f64) -> Result<Self> {
        let degree = poly.iter().rposition(|&c| c != 0.0).unwrap_or(0);
        if degree > DEGREE_CAP {
            return Err(Error::DegreeCap {
                degree,
                cap: DEGREE_CAP,
            });
        }
        if !(sigma_a.is_finite() && sigma_a > 0.0) {
            return Err(Error::InvalidParams(format!(
                "stationary scale must be positive and finite, got {sigma_a}"
            )));
        }
        let mut out = vec![0.0; degree + 1];
        let mut power = vec![1.0];
        for (k, &c) in poly.iter().enumerate().take(degree + 1) {
            if k > 0 {
                let mut next = vec![0.0; power.len() + 1];
                for (n, &p) in power.iter().enumerate() {
                    next[n + 1] += sigma_a * p;
                    if n > 0 {
                        next[n - 1] += sigma_a * n as f64 * p;
                    }
                }
                power = next;
            }
            if c != 0.0 {
                for (o, &p) in out.iter_mut().zip(&power) {
                    *o += c * p;
                }
            }
        }
        SpectralFn::new(sigma_a, out)
    }

    fn trim(&mut self) {
        while let Some(&last) = self.coeffs.last() {
            let n = self.coeffs.len() - 1;
            let weight = if n <= DEGREE_CAP {
                factorial(n).sqrt()
            } else {
                f64::INFINITY
            };
            if last == 0.0 || (last.abs() * weight < TRIM_THRESHOLD) {
                self.coeffs.pop();
            } else {
                break;
            }
        }
    }

    pub fn sigma_a(&self) -> f64 {
        self.sigma_a
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn coeff(&self, n: usize) -> f64 {
        self.coeffs.get(n).copied().unwrap_or(0.0)
    }

    /// Highest index with a non-zero coefficient; the zero function has degree 0.
    pub fn degree(&self) -> usize {
        self.coeffs.len().saturating_sub(1)
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Lowest index with a non-zero coefficient, `None` for the zero function.
    pub fn min_index(&self) -> Option<usize> {
        self.coeffs.iter().position(|&c| c != 0.0)
    }

    pub fn eval(&self, x: f64) -> f64 {
        let u = x / self.sigma_a;
        let mut acc = 0.0;
        let (mut prev, mut cur) = (0.0, 1.0);
        for (k, &c) in self.coeffs.iter().enumerate() {
            if k > 0 {
                let next = u * cur - (k - 1) as f64 * prev;
                prev = cur;
                cur = next;
            }
            acc += c * cur;
        }
        acc
    }

    /// `Σ |c_n He_n(x / σ_a)|`, the scale against which evaluation error is measured.
    pub fn eval_magnitude(&self, x: f64) -> f64 {
        let u = x / self.sigma_a;
        let mut acc = 0.0;
        let (mut prev, mut cur) = (0.0, 1.0);
        for (k, &c) in self.coeffs.iter().enumerate() {
            if k > 0 {
                let next = u * cur - (k - 1) as f64 * prev;
                prev = cur;
                cur = next;
            }
            acc += (c * cur).abs();
        }
        acc
    }

    /// `⟨μ, f⟩`.
    pub fn mean(&self) -> f64 {
        self.coeff(0)
    }

    /// `⟨μ, f g⟩ = Σ n! c_n d_n`.
    pub fn mu_inner(&self, other: &SpectralFn) -> Result<f64> {
        same_scale(self.sigma_a, other.sigma_a)?;
        Ok(self
            .coeffs
            .iter()
            .zip(&other.coeffs)
            .enumerate()
            .map(|(n, (c, d))| factorial(n) * c * d)
            .sum())
    }

    pub fn norm_sq(&self) -> f64 {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(n, c)| factorial(n) * c * c)
            .sum()
    }

    /// `‖f‖_{L²(μ)}`.
    pub fn norm(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    /// Pointwise product via `He_m He_n = Σ_j C(m,j) C(n,j) j! He_{m+n-2j}`.
    pub fn product(&self, other: &SpectralFn) -> Result<SpectralFn> {
        same_scale(self.sigma_a, other.sigma_a)?;
        if self.is_zero() || other.is_zero() {
            return Ok(SpectralFn::zero(self.sigma_a));
        }
        let degree = self.degree() + other.degree();
        if degree > DEGREE_CAP {
            return Err(Error::DegreeCap {
                degree,
                cap: DEGREE_CAP,
            });
        }
        let mut out = vec![0.0; degree + 1];
        for (m, &c) in self.coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for (n, &d) in other.coeffs.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let mut link = 1.0;
                for j in 0..=m.min(n) {
                    out[m + n - 2 * j] += c * d * link;
                    link *= ((m - j) * (n - j)) as f64 / (j + 1) as f64;
                }
            }
        }
        SpectralFn::new(self.sigma_a, out)
    }

    pub fn scale(&self, factor: f64) -> SpectralFn {
        let mut f = SpectralFn {
            sigma_a: self.sigma_a,
            coeffs: self.coeffs.iter().map(|c| c * factor).collect(),
        };
        f.trim();
        f
    }

    pub fn add(&self, other: &SpectralFn) -> Result<SpectralFn> {
        same_scale(self.sigma_a, other.sigma_a)?;
        let len = self.coeffs.len().max(other.coeffs.len());
        let coeffs = (0..len).map(|n| self.coeff(n) + other.coeff(n)).collect();
        SpectralFn::new(self.sigma_a, coeffs)
    }

    pub fn sub(&self, other: &SpectralFn) -> Result<SpectralFn> {
        self.add(&other.scale(-1.0))
    }

    /// `f̃ = f - ⟨μ, f⟩`.
    pub fn center(&self) -> SpectralFn {
        self.keep(|n| n != 0)
    }

    /// Orthogonal projection onto the eigenspace of `ḡ_1`.
    pub fn project_r(&self) -> SpectralFn {
        self.keep(|n| n == 1)
    }

    /// `f̂ = f̃ - R f`.
    pub fn hat(&self) -> SpectralFn {
        self.keep(|n| n >= 2)
    }

    fn keep(&self, pred: impl Fn(usize) -> bool) -> SpectralFn {
        let mut f = SpectralFn {
            sigma_a: self.sigma_a,
            coeffs: self
                .coeffs
                .iter()
                .enumerate()
                .map(|(n, &c)| if pred(n) { c } else { 0.0 })
                .collect(),
        };
        f.trim();
        f
    }
}

/// The symmetric BAR operators `Q` and `P` acting on [`SpectralFn`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymmetricKernel {
    a: f64,
    sigma: f64,
}

impl SymmetricKernel {
    pub fn new(a: f64, sigma: f64) -> Result<Self> {
        if !(a.is_finite() && a.abs() < 1.0) {
            return Err(Error::InvalidParams(format!("|a| must be < 1, got {a}")));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::InvalidParams(format!("sigma must be > 0, got {sigma}")));
        }
        Ok(SymmetricKernel { a, sigma })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// `σ_a = σ (1 - a²)^{-1/2}`.
    pub fn sigma_a(&self) -> f64 {
        self.sigma / (1.0 - self.a * self.a).sqrt()
    }

    pub fn eigenvalue(&self, n: usize) -> f64 {
        self.a.powi(n as i32)
    }

    pub fn from_monomial(&self, poly: &[f64]) -> Result<SpectralFn> {
        SpectralFn::from_monomial(poly, self.sigma_a())
    }

    pub fn check(&self, f: &SpectralFn) -> Result<()> {
        same_scale(self.sigma_a(), f.sigma_a)
    }

    /// `Q^k f`: coefficient `n` is multiplied by `a^{kn}`.
    pub fn apply_q(&self, f: &SpectralFn, k: usize) -> Result<SpectralFn> {
        self.check(f)?;
        if k == 0 {
            return Ok(f.clone());
        }
        let step = if k <= i32::MAX as usize {
            self.a.powi(k as i32)
        } else {
            self.a.powf(k as f64)
        };
        let coeffs = f
            .coeffs
            .iter()
            .enumerate()
            .map(|(n, &c)| c * step.powi(n as i32))
            .collect();
        SpectralFn::new(f.sigma_a, coeffs)
    }

    /// `P(f ⊗ g) = (Qf)(Qg)` for the symmetric kernel.
    pub fn p_apply(&self, f: &SpectralFn, g: &SpectralFn) -> Result<SpectralFn> {
        self.apply_q(f, 1)?.product(&self.apply_q(g, 1)?)
    }

    /// `⟨μ, P(f ⊗_sym g)⟩ = ⟨μ, (Qf)(Qg)⟩`, without forming the product.
    pub fn p_mean(&self, f: &SpectralFn, g: &SpectralFn) -> Result<f64> {
        self.apply_q(f, 1)?.mu_inner(&self.apply_q(g, 1)?)
    }
}
