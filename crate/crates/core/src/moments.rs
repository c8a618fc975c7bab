//! Exact first and second moments of `M_{𝔾_n}(f)` from the many-to-one formulas.
//!
//! Every term is an exact [`SpectralFn`]; the only rounding comes from
//! evaluating the terms at `x` and adding them (compensated, in order of `k`).

use crate::error::{Error, Result};
use crate::numeric::KahanSum;
use crate::spectral::{SpectralFn, SymmetricKernel};

fn pow2(n: usize) -> f64 {
    2f64.powi(n as i32)
}

/// `E_x[M_{𝔾_n}(f)] = 2^n Q^n f(x)`.
pub fn exact_mean(kernel: &SymmetricKernel, f: &SpectralFn, n: usize, x: f64) -> Result<f64> {
    Ok(pow2(n) * kernel.apply_q(f, n)?.eval(x))
}

/// `E_x[M_{𝔾_n}(f)²] = 2^n Q^n(f²)(x) + Σ_{k<n} 2^{n+k} Q^{n-k-1}(P(Q^k f ⊗ Q^k f))(x)`.
pub fn exact_second_moment(kernel: &SymmetricKernel, f: &SpectralFn, n: usize, x: f64) -> Result<f64> {
    exact_cross_moment(kernel, f, f, n, n, x)
}

/// `E_x[M_{𝔾_n}(f) M_{𝔾_m}(g)]` for `n ≥ m`:
/// `2^n Q^m(g Q^{n-m} f)(x) + Σ_{k<m} 2^{n+k} Q^{m-k-1}(P(Q^k g ⊗_sym Q^{n-m+k} f))(x)`.
pub fn exact_cross_moment(
    kernel: &SymmetricKernel,
    f: &SpectralFn,
    g: &SpectralFn,
    n: usize,
    m: usize,
    x: f64,
) -> Result<f64> {
    if n < m {
        return Err(Error::InvalidParams(format!(
            "cross moment needs n >= m, got n = {n}, m = {m}"
        )));
    }
    kernel.check(f)?;
    kernel.check(g)?;
    let mut total = KahanSum::new();
    let diag = g.product(&kernel.apply_q(f, n - m)?)?;
    total.add(pow2(n) * kernel.apply_q(&diag, m)?.eval(x));
    for k in 0..m {
        let inner = kernel.p_apply(&kernel.apply_q(g, k)?, &kernel.apply_q(f, n - m + k)?)?;
        total.add(pow2(n + k) * kernel.apply_q(&inner, m - k - 1)?.eval(x));
    }
    Ok(total.value())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kernel() -> SymmetricKernel {
        SymmetricKernel::new(0.5, 1.0).unwrap()
    }

    #[test]
    fn mean_examples() {
        let k = kernel();
        let one = SpectralFn::constant(k.sigma_a(), 1.0);
        assert_eq!(exact_mean(&k, &one, 5, 0.3).unwrap(), 32.0);
        let x = k.from_monomial(&[0.0, 1.0]).unwrap();
        assert!((exact_mean(&k, &x, 3, 1.0).unwrap() - 1.0).abs() < 1e-15);
        let x2 = k.from_monomial(&[0.0, 0.0, 1.0]).unwrap();
        assert!((exact_mean(&k, &x2, 0, 1.7).unwrap() - 1.7 * 1.7).abs() < 1e-14);
    }

    #[test]
    fn second_moment_examples() {
        let k = kernel();
        let f = k.from_monomial(&[0.2, -1.0, 0.5]).unwrap();
        let v = exact_second_moment(&k, &f, 0, 1.3).unwrap();
        assert!((v - f.eval(1.3).powi(2)).abs() < 1e-14);
        let x = k.from_monomial(&[0.0, 1.0]).unwrap();
        assert!((exact_second_moment(&k, &x, 1, 0.0).unwrap() - 2.0).abs() < 1e-14);
    }

    #[test]
    fn cross_moment_with_constant() {
        let k = kernel();
        let f = k.from_monomial(&[0.0, 1.0, 1.0, -0.3]).unwrap();
        let one = SpectralFn::constant(k.sigma_a(), 1.0);
        for (n, m) in [(3, 1), (4, 4), (5, 0)] {
            let cross = exact_cross_moment(&k, &f, &one, n, m, 0.7).unwrap();
            let expected = pow2(m) * exact_mean(&k, &f, n, 0.7).unwrap();
            assert!((cross - expected).abs() < 1e-12 * expected.abs().max(1.0), "{n},{m}");
        }
        assert!(exact_cross_moment(&k, &f, &one, 1, 2, 0.0).is_err());
    }

    #[test]
    fn rejects_mismatched_scale() {
        let k = kernel();
        let f = SpectralFn::from_monomial(&[0.0, 1.0], 3.0).unwrap();
        assert!(exact_mean(&k, &f, 2, 0.0).is_err());
    }
}
