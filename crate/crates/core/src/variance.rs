//! Limiting variances of the fluctuation statistics and the super-critical martingales.
//!
//! Sub-critical (`2a² < 1`):
//! `Σ = Σ1 + 2 Σ2` with
//! `Σ1 = Σ_ℓ 2^{-ℓ} ⟨μ, f̃_ℓ²⟩ + Σ_{ℓ,k≥0} 2^{k-ℓ} ⟨μ, P((Q^k f̃_ℓ)⊗²)⟩` and
//! `Σ2 = Σ_{0≤ℓ<k} 2^{-ℓ} ⟨μ, f̃_k Q^{k-ℓ} f̃_ℓ⟩ + Σ_{0≤ℓ<k, r≥0} 2^{r-ℓ} ⟨μ, P(Q^r f̃_k ⊗_sym Q^{k-ℓ+r} f̃_ℓ)⟩`.
//!
//! Critical (`2a² = 1`, normalisation `n^{-1/2}`):
//! `Σ1 = Σ_k 2^{-k} ⟨μ, P(R f_k ⊗_sym R f_k)⟩`,
//! `Σ2 = Σ_{ℓ<k} 2^{-(k+ℓ)/2} ⟨μ, P(R f_k ⊗_sym R f_ℓ)⟩`.
//!
//! All indices are truncated at a common `N`. With `m` the lowest Hermite
//! index present and `B = sup ‖f̃_ℓ‖²`, each term is bounded by a geometric
//! expression in its indices, which yields the reported tail bound.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::{Regime, RegimeTag};
use crate::numeric::KahanSum;
use crate::spectral::{SpectralFn, SymmetricKernel};
use crate::tree_sim::{m_sum, FunctionalSeq, GenerationBuffer};

pub const DEFAULT_TOL: f64 = 1e-10;
/// Largest common truncation index tried before giving up.
pub const MAX_TERMS: usize = 1 << 12;
const FIRST_TRUNCATION: usize = 16;
const SQRT_HALF: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Truncation {
    pub k_max: usize,
    pub l_max: usize,
    pub r_max: usize,
}

impl Truncation {
    fn uniform(n: usize) -> Self {
        Truncation {
            k_max: n,
            l_max: n,
            r_max: n,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub value: f64,
    pub sigma1: f64,
    pub sigma2: f64,
    pub truncation: Truncation,
    pub tail_bound: f64,
    pub regime: RegimeTag,
}

fn require_regime(kernel: &SymmetricKernel, operation: &'static str, expected: Regime) -> Result<RegimeTag> {
    let tag = RegimeTag::classify(kernel.a());
    if tag.regime != expected {
        return Err(Error::WrongRegime {
            operation,
            expected: match expected {
                Regime::Subcritical => "sub-critical",
                Regime::Critical => "critical",
                Regime::Supercritical => "super-critical",
            },
            actual: tag.regime,
            a: kernel.a(),
        });
    }
    Ok(tag)
}

fn half_pow(n: usize) -> f64 {
    0.5f64.powi(n as i32)
}

/// `Σ_{ℓ=0}^{n} 2^{-ℓ}`.
fn weight(n: usize) -> f64 {
    2.0 - half_pow(n)
}

struct Partial {
    sigma1: f64,
    sigma2: f64,
}

fn zero_report(regime: RegimeTag) -> VarianceReport {
    VarianceReport {
        value: 0.0,
        sigma1: 0.0,
        sigma2: 0.0,
        truncation: Truncation::uniform(0),
        tail_bound: 0.0,
        regime,
    }
}

/// Grows the truncation until the tail bound is within `tol` of the partial sum.
fn converge(
    tol: f64,
    regime: RegimeTag,
    first: usize,
    mut sums: impl FnMut(usize) -> Result<Partial>,
    tail: impl Fn(usize) -> f64,
) -> Result<VarianceReport> {
    if !(tol > 0.0) {
        return Err(Error::InvalidParams(format!("tolerance must be positive, got {tol}")));
    }
    let mut n = first.max(1);
    loop {
        let p = sums(n)?;
        let value = p.sigma1 + 2.0 * p.sigma2;
        let bound = tail(n);
        if bound <= tol * value.abs() {
            return Ok(VarianceReport {
                value,
                sigma1: p.sigma1,
                sigma2: p.sigma2,
                truncation: Truncation::uniform(n),
                tail_bound: bound,
                regime,
            });
        }
        if n >= MAX_TERMS {
            return Err(Error::NoConvergence { tol, max_terms: MAX_TERMS });
        }
        n = (2 * n).min(MAX_TERMS);
    }
}

/// `Q^j f` for `j = 0..len`.
fn q_powers(kernel: &SymmetricKernel, f: &SpectralFn, len: usize) -> Result<Vec<SpectralFn>> {
    (0..len).map(|j| kernel.apply_q(f, j)).collect()
}

/// `h_j = 2^{j/2} Q^{j+1} f` for `j = 0..len`, so that `2^r ⟨μ, (Q^{r+1} f)(Q^{r+d+1} g)⟩`
/// becomes `2^{-d/2} ⟨μ, h_r(f) h_{r+d}(g)⟩` without overflowing `2^r`.
fn scaled_powers(kernel: &SymmetricKernel, f: &SpectralFn, len: usize) -> Result<Vec<SpectralFn>> {
    let mut out = Vec::with_capacity(len);
    let mut cur = kernel.apply_q(f, 1)?;
    for _ in 0..len {
        let next = kernel.apply_q(&cur, 1)?.scale(std::f64::consts::SQRT_2);
        out.push(std::mem::replace(&mut cur, next));
    }
    Ok(out)
}

/// The sub-critical variance `Σ^sub(𝔣)` of `|𝔾_n|^{-1/2} Σ_ℓ M_{𝔾_{n-ℓ}}(f̃_ℓ)`.
pub fn sigma_sub(kernel: &SymmetricKernel, fseq: &FunctionalSeq, tol: f64) -> Result<VarianceReport> {
    let regime = require_regime(kernel, "sigma_sub", Regime::Subcritical)?;
    for f in fseq.funcs() {
        kernel.check(f)?;
    }
    let centered = fseq.centered();
    let funcs = centered.funcs();
    let Some(m) = funcs.iter().filter_map(SpectralFn::min_index).min() else {
        return Ok(zero_report(regime));
    };
    let b = funcs.iter().map(SpectralFn::norm_sq).fold(0.0, f64::max);
    let a = kernel.a().abs();
    let rho = a.powi(2 * m as i32);
    let ra = a.powi(m as i32);
    let support = centered.support_len();

    let tail = |n: usize| {
        let ell_tail = support.map_or(true, |len| len > n + 1);
        // Σ over {(ℓ, d): ℓ + d > N, d ≥ 1} of 2^{-ℓ} ra^d
        let ld_tail = if ell_tail {
            let mut s = KahanSum::new();
            for l in 0..=n {
                s.add(half_pow(l) * ra.powi((n - l + 1) as i32) / (1.0 - ra));
            }
            s.add(half_pow(n) * ra / (1.0 - ra));
            s.value()
        } else {
            0.0
        };
        let ld_box = 2.0 * ra / (1.0 - ra);
        let r_all = rho / (1.0 - 2.0 * rho);
        let r_tail = rho * (2.0 * rho).powi((n + 1) as i32) / (1.0 - 2.0 * rho);
        let t1a = if ell_tail { b * half_pow(n) } else { 0.0 };
        let t1b = b * weight(n) * r_tail + if ell_tail { b * half_pow(n) * r_all } else { 0.0 };
        let t2a = b * ld_tail;
        let t2b = b * (ld_tail * r_all + ld_box * r_tail);
        t1a + t1b + 2.0 * (t2a + t2b)
    };

    match support {
        None => {
            let g = &funcs[0];
            let sums = |n: usize| -> Result<Partial> {
                let q = q_powers(kernel, g, n + 1)?;
                let h = scaled_powers(kernel, g, 2 * n + 2)?;
                let mut s1 = KahanSum::new();
                s1.add(weight(n) * g.norm_sq());
                let mut inner = KahanSum::new();
                for hk in &h[..=n] {
                    inner.add(hk.norm_sq());
                }
                s1.add(weight(n) * inner.value());
                let mut s2 = KahanSum::new();
                for d in 1..=n {
                    let w = weight(n - d);
                    s2.add(w * g.mu_inner(&q[d])?);
                    let mut rs = KahanSum::new();
                    for r in 0..=n {
                        rs.add(h[r].mu_inner(&h[r + d])?);
                    }
                    s2.add(w * SQRT_HALF.powi(d as i32) * rs.value());
                }
                Ok(Partial {
                    sigma1: s1.value(),
                    sigma2: s2.value(),
                })
            };
            converge(tol, regime, FIRST_TRUNCATION, sums, tail)
        }
        Some(len) => {
            let sums = |n: usize| -> Result<Partial> {
                let top = len.min(n + 1);
                let q = funcs[..top]
                    .iter()
                    .map(|f| q_powers(kernel, f, top))
                    .collect::<Result<Vec<_>>>()?;
                let h = funcs[..top]
                    .iter()
                    .map(|f| scaled_powers(kernel, f, 2 * n + 2))
                    .collect::<Result<Vec<_>>>()?;
                let mut s1 = KahanSum::new();
                let mut s2 = KahanSum::new();
                for l in 0..top {
                    let wl = half_pow(l);
                    s1.add(wl * q[l][0].norm_sq());
                    for hk in &h[l][..=n] {
                        s1.add(wl * hk.norm_sq());
                    }
                    for k in l + 1..top {
                        let d = k - l;
                        s2.add(wl * q[k][0].mu_inner(&q[l][d])?);
                        let mut rs = KahanSum::new();
                        for r in 0..=n {
                            rs.add(h[k][r].mu_inner(&h[l][r + d])?);
                        }
                        s2.add(wl * SQRT_HALF.powi(d as i32) * rs.value());
                    }
                }
                Ok(Partial {
                    sigma1: s1.value(),
                    sigma2: s2.value(),
                })
            };
            converge(tol, regime, FIRST_TRUNCATION.max(len - 1), sums, tail)
        }
    }
}

/// The critical variance `Σ^crit(𝔣)` of `n^{-1/2} |𝔾_n|^{-1/2} Σ_ℓ M_{𝔾_{n-ℓ}}(f̃_ℓ)`.
pub fn sigma_crit(kernel: &SymmetricKernel, fseq: &FunctionalSeq, tol: f64) -> Result<VarianceReport> {
    let regime = require_regime(kernel, "sigma_crit", Regime::Critical)?;
    for f in fseq.funcs() {
        kernel.check(f)?;
    }
    // P(R f ⊗_sym R g) = (Q R f)(Q R g)
    let qr = fseq
        .funcs()
        .iter()
        .map(|f| kernel.apply_q(&f.project_r(), 1))
        .collect::<Result<Vec<_>>>()?;
    if qr.iter().all(SpectralFn::is_zero) {
        return Ok(zero_report(regime));
    }
    let b = qr.iter().map(SpectralFn::norm_sq).fold(0.0, f64::max);
    let s = SQRT_HALF;
    let support = fseq.support_len();
    let tail = |n: usize| {
        if support.is_some_and(|len| len <= n + 1) {
            return 0.0;
        }
        let t1 = b * half_pow(n);
        let t2 = b * s.powi((n + 1) as i32) / ((1.0 - s) * (1.0 - s));
        t1 + 2.0 * t2
    };
    match support {
        None => {
            let c = qr[0].norm_sq();
            let sums = |n: usize| -> Result<Partial> {
                let mut s2 = KahanSum::new();
                for k in 1..=n {
                    for l in 0..k {
                        s2.add(s.powi((k + l) as i32));
                    }
                }
                Ok(Partial {
                    sigma1: weight(n) * c,
                    sigma2: c * s2.value(),
                })
            };
            converge(tol, regime, FIRST_TRUNCATION, sums, tail)
        }
        Some(len) => {
            let sums = |n: usize| -> Result<Partial> {
                let top = len.min(n + 1);
                let mut s1 = KahanSum::new();
                let mut s2 = KahanSum::new();
                for k in 0..top {
                    s1.add(half_pow(k) * qr[k].norm_sq());
                    for l in 0..k {
                        s2.add(s.powi((k + l) as i32) * qr[k].mu_inner(&qr[l])?);
                    }
                }
                Ok(Partial {
                    sigma1: s1.value(),
                    sigma2: s2.value(),
                })
            };
            converge(tol, regime, len - 1, sums, tail)
        }
    }
}

fn require_nonzero_a(kernel: &SymmetricKernel) -> Result<()> {
    if kernel.a() == 0.0 {
        return Err(Error::InvalidParams(
            "a = 0: Q has no nonzero eigenvalue besides 1, the martingale is undefined".into(),
        ));
    }
    Ok(())
}

/// `M_n = (2a)^{-n} M_{𝔾_n}(R f)` from per-generation sums `M_{𝔾_n}(R f)`.
pub fn martingale_from_sums(kernel: &SymmetricKernel, rf_sums: &[f64]) -> Result<Vec<f64>> {
    require_nonzero_a(kernel)?;
    let two_a = 2.0 * kernel.a();
    Ok(rf_sums
        .iter()
        .enumerate()
        .map(|(n, s)| s / two_a.powi(n as i32))
        .collect())
}

/// `M_n = (2a)^{-n} M_{𝔾_n}(R f)` for every stored generation.
pub fn martingale_path(kernel: &SymmetricKernel, f: &SpectralFn, gens: &[GenerationBuffer]) -> Result<Vec<f64>> {
    require_nonzero_a(kernel)?;
    kernel.check(f)?;
    let rf = f.project_r();
    let sums: Vec<f64> = gens.iter().map(|g| m_sum(g, &rf)).collect();
    martingale_from_sums(kernel, &sums)
}

/// `((2α)^{-n} M_{𝔾_n}(f̃), (2α)^{-n} M_{𝕋_n}(f̃))` from sums `M_{𝔾_g}(f̃)`, `g = 0..=n`.
pub fn supercritical_limits_from_sums(kernel: &SymmetricKernel, centered_sums: &[f64]) -> Result<(f64, f64)> {
    require_regime(kernel, "supercritical_limits", Regime::Supercritical)?;
    let n = centered_sums
        .len()
        .checked_sub(1)
        .ok_or_else(|| Error::InvalidParams("at least one generation is required".into()))?;
    let scale = (2.0 * kernel.a().abs()).powi(-(n as i32));
    let mut tree = KahanSum::new();
    for s in centered_sums {
        tree.add(*s);
    }
    Ok((scale * centered_sums[n], scale * tree.value()))
}

/// The rescaled generation and tree statistics at the deepest stored generation.
pub fn supercritical_limits(kernel: &SymmetricKernel, f: &SpectralFn, gens: &[GenerationBuffer]) -> Result<(f64, f64)> {
    kernel.check(f)?;
    let ft = f.center();
    let sums: Vec<f64> = gens.iter().map(|g| m_sum(g, &ft)).collect();
    supercritical_limits_from_sums(kernel, &sums)
}
