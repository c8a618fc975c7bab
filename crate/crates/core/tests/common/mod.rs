//! Independent oracles shared by the integration and acceptance tests.
//!
//! Nothing here touches the Hermite machinery: polynomials stay in the
//! monomial basis and expectations come from Gauss–Hermite quadrature or
//! from Gaussian moment identities.

#![allow(dead_code)]

use bmc_lab::quadrature::GaussHermite;
use bmc_lab::rng::RandomStream;

pub fn horner(poly: &[f64], x: f64) -> f64 {
    poly.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

/// `Σ |c_i| |x|^i`, the size of the terms that cancel in `horner`.
pub fn horner_abs(poly: &[f64], x: f64) -> f64 {
    poly.iter().rev().fold(0.0, |acc, c| acc * x.abs() + c.abs())
}

pub fn poly_mul(p: &[f64], q: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; p.len() + q.len() - 1];
    for (i, a) in p.iter().enumerate() {
        for (j, b) in q.iter().enumerate() {
            out[i + j] += a * b;
        }
    }
    out
}

pub fn stationary_sd(a: f64, sigma: f64) -> f64 {
    sigma / (1.0 - a * a).sqrt()
}

/// `Q^k f(x) = E f(a^k x + s_k Z)` with `s_k² = σ² Σ_{j<k} a^{2j}`.
pub fn q_power_law(a: f64, sigma: f64, k: usize, x: f64) -> (f64, f64) {
    let var: f64 = (0..k).map(|j| a.powi(2 * j as i32)).sum::<f64>() * sigma * sigma;
    (a.powi(k as i32) * x, var.sqrt())
}

pub fn q_power_gh(poly: &[f64], a: f64, sigma: f64, k: usize, x: f64) -> f64 {
    let (m, s) = q_power_law(a, sigma, k, x);
    GaussHermite::order64().expect_normal(m, s, |y| horner(poly, y))
}

/// `(E f(Y)²)^{1/2}` under the same law, an upper bound for `|Q^k f(x)|`.
pub fn q_power_gh_l2(poly: &[f64], a: f64, sigma: f64, k: usize, x: f64) -> f64 {
    let (m, s) = q_power_law(a, sigma, k, x);
    GaussHermite::order64()
        .expect_normal(m, s, |y| horner(poly, y).powi(2))
        .sqrt()
}

pub fn mu_inner_gh(p: &[f64], q: &[f64], a: f64, sigma: f64) -> f64 {
    GaussHermite::order64().expect_normal(0.0, stationary_sd(a, sigma), |y| horner(p, y) * horner(q, y))
}

pub fn mu_norm_gh(p: &[f64], a: f64, sigma: f64) -> f64 {
    mu_inner_gh(p, p, a, sigma).sqrt()
}

/// Coefficients uniform on [-1, 1], degree uniform on 0..=max_degree.
pub fn random_polys(seed: u64, count: usize, max_degree: usize) -> Vec<Vec<f64>> {
    let stream = RandomStream::new(seed);
    let mut counter = 0u64;
    let mut next = || {
        counter += 1;
        stream.uniform(counter)
    };
    (0..count)
        .map(|_| {
            let degree = ((next() * (max_degree + 1) as f64) as usize).min(max_degree);
            (0..=degree).map(|_| 2.0 * next() - 1.0).collect()
        })
        .collect()
}

pub fn double_factorial(n: i64) -> f64 {
    if n <= 0 {
        1.0
    } else {
        (1..=n).rev().step_by(2).map(|v| v as f64).product()
    }
}

pub fn binom(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|v| v as f64).product()
}

/// `E[Ẋ^i Ẏ^j]` for a centred Gaussian pair with variances `vx, vy` and covariance `c`,
/// by Isserlis: sum over the number `k` of cross pairings.
pub fn centred_joint_moment(i: usize, j: usize, vx: f64, vy: f64, c: f64) -> f64 {
    let mut total = 0.0;
    for k in 0..=i.min(j) {
        let (ri, rj) = (i - k, j - k);
        if ri % 2 == 1 || rj % 2 == 1 {
            continue;
        }
        total += binom(i, k)
            * binom(j, k)
            * factorial(k)
            * c.powi(k as i32)
            * double_factorial(ri as i64 - 1)
            * vx.powi((ri / 2) as i32)
            * double_factorial(rj as i64 - 1)
            * vy.powi((rj / 2) as i32);
    }
    total
}

/// `E[X^p Y^q]` for a Gaussian pair with means `mx, my`.
pub fn joint_moment(p: usize, q: usize, mx: f64, my: f64, vx: f64, vy: f64, c: f64) -> f64 {
    let mut total = 0.0;
    for i in 0..=p {
        for j in 0..=q {
            total += binom(p, i)
                * binom(q, j)
                * mx.powi((p - i) as i32)
                * my.powi((q - j) as i32)
                * centred_joint_moment(i, j, vx, vy, c);
        }
    }
    total
}

/// Joint law of the symmetric BAR tree (ρ = 0) started from `dirac(x0)`:
/// each node is Gaussian and any two nodes are jointly Gaussian.
pub struct TreeGaussian {
    pub a: f64,
    pub sigma: f64,
    pub x0: f64,
}

impl TreeGaussian {
    pub fn mean(&self, gen: usize) -> f64 {
        self.a.powi(gen as i32) * self.x0
    }

    pub fn var(&self, gen: usize) -> f64 {
        (0..gen).map(|j| self.a.powi(2 * j as i32)).sum::<f64>() * self.sigma * self.sigma
    }

    /// Covariance of `(gu, pu)` and `(gv, pv)` through their last common ancestor.
    pub fn cov(&self, gu: usize, pu: u64, gv: usize, pv: u64) -> f64 {
        let (mut g1, mut p1, mut g2, mut p2) = (gu, pu, gv, pv);
        while g1 > g2 {
            g1 -= 1;
            p1 >>= 1;
        }
        while g2 > g1 {
            g2 -= 1;
            p2 >>= 1;
        }
        while p1 != p2 {
            p1 >>= 1;
            p2 >>= 1;
            g1 -= 1;
        }
        let gw = g1;
        self.a.powi((gu - gw) as i32) * self.a.powi((gv - gw) as i32) * self.var(gw)
    }

    /// `E[f(X_u) g(X_v)]` for monomial-basis polynomials.
    pub fn pair_expectation(&self, f: &[f64], g: &[f64], gu: usize, pu: u64, gv: usize, pv: u64) -> f64 {
        let (mx, my) = (self.mean(gu), self.mean(gv));
        let (vx, vy) = (self.var(gu), self.var(gv));
        let c = self.cov(gu, pu, gv, pv);
        let mut total = 0.0;
        for (p, cf) in f.iter().enumerate() {
            for (q, cg) in g.iter().enumerate() {
                if *cf != 0.0 && *cg != 0.0 {
                    total += cf * cg * joint_moment(p, q, mx, my, vx, vy, c);
                }
            }
        }
        total
    }

    /// `E[M_{𝔾_n}(f) M_{𝔾_m}(g)]` by enumerating all node pairs.
    pub fn cross_moment(&self, f: &[f64], g: &[f64], n: usize, m: usize) -> f64 {
        let mut total = 0.0;
        for pu in 0..(1u64 << n) {
            for pv in 0..(1u64 << m) {
                total += self.pair_expectation(f, g, n, pu, m, pv);
            }
        }
        total
    }

    pub fn mean_sum(&self, f: &[f64], n: usize) -> f64 {
        let (m, v) = (self.mean(n), self.var(n));
        let single: f64 = f
            .iter()
            .enumerate()
            .map(|(p, c)| c * joint_moment(p, 0, m, 0.0, v, 0.0, 0.0))
            .sum();
        2f64.powi(n as i32) * single
    }
}

pub fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
