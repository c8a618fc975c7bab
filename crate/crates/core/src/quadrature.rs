//! Gauss-Hermite quadrature for Gaussian expectations.
//!
//! Nodes and weights are found by Newton iteration on the orthonormal
//! Hermite recurrence, which avoids the overflow of the raw polynomials at
//! high order. An `n`-point rule integrates `e^{-t^2} p(t)` exactly for
//! polynomials of degree up to `2n - 1`.

use std::f64::consts::PI;
use std::sync::OnceLock;

const NEWTON_TOL: f64 = 1e-14;
const NEWTON_MAX_ITER: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    pub fn new(order: usize) -> Self {
        assert!(order >= 1, "quadrature order must be positive");
        let n = order;
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let pim4 = PI.powf(-0.25);
        let nf = n as f64;
        let mut z = 0.0_f64;
        for i in 0..(n + 1) / 2 {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * nodes[0],
                3 => 1.91 * z - 0.91 * nodes[1],
                _ => 2.0 * z - nodes[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..NEWTON_MAX_ITER {
                let mut p1 = pim4;
                let mut p2 = 0.0;
                for j in 1..=n {
                    let jf = j as f64;
                    let p3 = p2;
                    p2 = p1;
                    p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= NEWTON_TOL * z.abs().max(1.0) {
                    break;
                }
            }
            nodes[i] = z;
            nodes[n - 1 - i] = -z;
            weights[i] = 2.0 / (pp * pp);
            weights[n - 1 - i] = weights[i];
        }
        GaussHermite { nodes, weights }
    }

    /// Shared 64-point rule.
    pub fn order64() -> &'static GaussHermite {
        static RULE: OnceLock<GaussHermite> = OnceLock::new();
        RULE.get_or_init(|| GaussHermite::new(64))
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `∫ e^{-t^2} f(t) dt`.
    pub fn integrate<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&t, &w)| w * f(t))
            .sum()
    }

    /// `E[f(G)]` for `G ~ N(0, 1)`.
    pub fn expect_std_normal<F: Fn(f64) -> f64>(&self, f: F) -> f64 {
        let s2 = std::f64::consts::SQRT_2;
        self.integrate(|t| f(s2 * t)) / PI.sqrt()
    }

    /// `E[f(mean + sd G)]` for `G ~ N(0, 1)`.
    pub fn expect_normal<F: Fn(f64) -> f64>(&self, mean: f64, sd: f64, f: F) -> f64 {
        self.expect_std_normal(|z| f(mean + sd * z))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn double_factorial_odd(k: u32) -> f64 {
        // (k-1)!! for even k
        (1..k).step_by(2).map(|j| j as f64).product()
    }

    #[test]
    fn weights_sum_to_sqrt_pi() {
        for &n in &[1, 2, 5, 32, 64, 128] {
            let rule = GaussHermite::new(n);
            let total: f64 = rule.weights().iter().sum();
            assert!((total - PI.sqrt()).abs() < 1e-13, "n={n} total={total}");
        }
    }

    #[test]
    fn nodes_are_sorted_descending_and_symmetric() {
        let rule = GaussHermite::new(64);
        for w in rule.nodes().windows(2) {
            assert!(w[0] > w[1]);
        }
        for i in 0..32 {
            assert_eq!(rule.nodes()[i], -rule.nodes()[63 - i]);
        }
    }

    #[test]
    fn gaussian_moments_are_exact() {
        let rule = GaussHermite::order64();
        for k in 0..=40u32 {
            let m = rule.expect_std_normal(|z| z.powi(k as i32));
            let exact = if k % 2 == 1 { 0.0 } else { double_factorial_odd(k) };
            let scale = double_factorial_odd(k + 1).max(1.0);
            assert!((m - exact).abs() < 1e-12 * scale, "k={k}: {m} vs {exact}");
        }
    }

    #[test]
    fn two_point_rule_matches_closed_form() {
        let rule = GaussHermite::new(2);
        let x = (0.5_f64).sqrt();
        assert!((rule.nodes()[0] - x).abs() < 1e-15);
        assert!((rule.weights()[0] - PI.sqrt() / 2.0).abs() < 1e-15);
    }

    #[test]
    fn smooth_expectation() {
        // E[cos(G)] = e^{-1/2}
        let rule = GaussHermite::new(32);
        let v = rule.expect_std_normal(f64::cos);
        assert!((v - (-0.5_f64).exp()).abs() < 1e-14);
    }
}
