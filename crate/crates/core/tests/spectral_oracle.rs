mod common;

use bmc_lab::spectral::{SpectralFn, SymmetricKernel};
use common::*;
use proptest::prelude::*;

const A_GRID: [f64; 4] = [0.2, 0.5, std::f64::consts::FRAC_1_SQRT_2, 0.85];

fn points(sa: f64) -> [f64; 5] {
    [-2.5 * sa, -0.7 * sa, 0.0, 0.4 * sa, 1.9 * sa]
}

#[test]
fn mu_inner_matches_quadrature() {
    let polys = random_polys(11, 60, 8);
    for &a in &A_GRID {
        let k = SymmetricKernel::new(a, 1.0).unwrap();
        for pair in polys.chunks(2) {
            let (p, q) = (&pair[0], &pair[1]);
            let got = k.from_monomial(p).unwrap().mu_inner(&k.from_monomial(q).unwrap()).unwrap();
            let want = mu_inner_gh(p, q, a, 1.0);
            let scale = mu_norm_gh(p, a, 1.0) * mu_norm_gh(q, a, 1.0);
            assert!((got - want).abs() <= 1e-10 * scale, "a={a} {p:?} {q:?}: {got} vs {want}");
        }
    }
}

#[test]
fn q_powers_match_quadrature() {
    let polys = random_polys(12, 40, 8);
    for &a in &A_GRID {
        let k = SymmetricKernel::new(a, 0.8).unwrap();
        for p in &polys {
            let f = k.from_monomial(p).unwrap();
            for steps in [1, 2, 5] {
                let qf = k.apply_q(&f, steps).unwrap();
                for x in points(k.sigma_a()) {
                    let want = q_power_gh(p, a, 0.8, steps, x);
                    let scale = q_power_gh_l2(p, a, 0.8, steps, x);
                    assert!((qf.eval(x) - want).abs() <= 1e-10 * scale, "a={a} k={steps} x={x}");
                }
            }
        }
    }
}

#[test]
fn p_of_tensor_is_product_of_q() {
    let polys = random_polys(13, 20, 6);
    let k = SymmetricKernel::new(0.5, 1.0).unwrap();
    for pair in polys.chunks(2) {
        let pf = k.p_apply(&k.from_monomial(&pair[0]).unwrap(), &k.from_monomial(&pair[1]).unwrap()).unwrap();
        for x in points(k.sigma_a()) {
            // children are independent given the parent when ρ = 0
            let want = q_power_gh(&pair[0], 0.5, 1.0, 1, x) * q_power_gh(&pair[1], 0.5, 1.0, 1, x);
            let scale = q_power_gh_l2(&pair[0], 0.5, 1.0, 1, x) * q_power_gh_l2(&pair[1], 0.5, 1.0, 1, x);
            assert!((pf.eval(x) - want).abs() <= 1e-10 * scale);
        }
    }
}

#[test]
fn projectors_on_monomials() {
    let k = SymmetricKernel::new(0.5, 1.0).unwrap();
    let sa = k.sigma_a();
    let x3 = k.from_monomial(&[0.0, 0.0, 0.0, 1.0]).unwrap();
    // E_μ[x⁴] / σ_a² = 3σ_a²
    let r = x3.project_r();
    assert!((r.eval(1.0) - 3.0 * sa * sa).abs() < 1e-12);
    let x2 = k.from_monomial(&[0.0, 0.0, 1.0]).unwrap();
    assert!(x2.project_r().is_zero());
    assert!((x2.center().eval(0.0) + sa * sa).abs() < 1e-12);
    assert!(x2.hat().mu_inner(&SpectralFn::constant(sa, 1.0)).unwrap().abs() < 1e-14);
}

proptest! {
    #[test]
    fn product_agrees_pointwise(
        p in prop::collection::vec(-1.0f64..1.0, 1..9),
        q in prop::collection::vec(-1.0f64..1.0, 1..9),
        a in -0.9f64..0.9,
        x in -4.0f64..4.0,
    ) {
        let k = SymmetricKernel::new(a, 1.3).unwrap();
        let prod = k.from_monomial(&p).unwrap().product(&k.from_monomial(&q).unwrap()).unwrap();
        let want = horner(&poly_mul(&p, &q), x);
        let scale = (horner_abs(&p, x) * horner_abs(&q, x)).max(prod.eval_magnitude(x)) + 1.0;
        prop_assert!((prod.eval(x) - want).abs() <= 1e-9 * scale);
    }

    #[test]
    fn apply_q_composes(p in prop::collection::vec(-1.0f64..1.0, 1..9), a in -0.9f64..0.9, i in 0usize..4, j in 0usize..4) {
        let k = SymmetricKernel::new(a, 1.0).unwrap();
        let f = k.from_monomial(&p).unwrap();
        let lhs = k.apply_q(&k.apply_q(&f, i).unwrap(), j).unwrap();
        let rhs = k.apply_q(&f, i + j).unwrap();
        for (l, r) in lhs.coeffs().iter().zip(rhs.coeffs()) {
            prop_assert!((l - r).abs() <= 1e-14 * (1.0 + r.abs()));
        }
    }

    #[test]
    fn q_preserves_mu_mean(p in prop::collection::vec(-1.0f64..1.0, 1..9), a in -0.9f64..0.9, steps in 0usize..6) {
        let k = SymmetricKernel::new(a, 1.0).unwrap();
        let f = k.from_monomial(&p).unwrap();
        let qf = k.apply_q(&f, steps).unwrap();
        prop_assert!((qf.mean() - f.mean()).abs() <= 1e-12 * (1.0 + f.norm()));
    }
}
