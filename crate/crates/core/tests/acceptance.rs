//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

mod common;

use std::f64::consts::FRAC_1_SQRT_2;
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use bmc_lab::experiments::{
    clt_study, h1, h2, slope_study, supercritical_study, ExperimentConfig, FunctionDesc, SlopeConfig, Target,
};
use bmc_lab::kernels::{check_assumptions, BarParams};
use bmc_lab::moments::{exact_cross_moment, exact_mean, exact_second_moment};
use bmc_lab::rng::RandomStream;
use bmc_lab::spectral::SymmetricKernel;
use bmc_lab::tree_sim::{generation_sums, replicate, InitialLaw};
use common::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

const MONOMIALS: [&[f64]; 3] = [&[0.0, 1.0], &[0.0, 0.0, 1.0], &[0.0, 0.0, 0.0, 1.0]];

fn spectral_oracle() -> Outcome {
    let polys = random_polys(20_240_601, 200, 8);
    let mut worst: f64 = 0.0;
    for a in [0.2, 0.5, FRAC_1_SQRT_2, 0.85] {
        let k = SymmetricKernel::new(a, 1.0).unwrap();
        let sa = k.sigma_a();
        let fs: Vec<_> = polys.iter().map(|p| k.from_monomial(p).unwrap()).collect();
        for i in 0..polys.len() {
            let j = (i + 1) % polys.len();
            let (p, q) = (&polys[i], &polys[j]);

            let got = fs[i].mu_inner(&fs[j]).unwrap();
            let scale = mu_norm_gh(p, a, 1.0) * mu_norm_gh(q, a, 1.0);
            worst = worst.max((got - mu_inner_gh(p, q, a, 1.0)).abs() / scale);

            // product: L²(μ) distance to the pointwise product, by quadrature
            let prod = fs[i].product(&fs[j]).unwrap();
            let pq = poly_mul(p, q);
            let diff = bmc_lab::quadrature::GaussHermite::order64()
                .expect_normal(0.0, sa, |x| (prod.eval(x) - horner(&pq, x)).powi(2))
                .sqrt();
            worst = worst.max(diff / mu_norm_gh(&pq, a, 1.0));

            for steps in [1, 3] {
                let qf = k.apply_q(&fs[i], steps).unwrap();
                for x in [-2.0 * sa, -0.5 * sa, 0.0, 0.3 * sa, 1.5 * sa] {
                    let want = q_power_gh(p, a, 1.0, steps, x);
                    let scale = q_power_gh_l2(p, a, 1.0, steps, x);
                    worst = worst.max((qf.eval(x) - want).abs() / scale);
                }
            }
        }
    }
    outcome(worst <= 1e-10, format!("worst relative error {worst:.2e} (tol 1e-10)"))
}

fn many_to_one_mc() -> Outcome {
    const REPLICAS: usize = 20_000;
    const DEPTH: usize = 8;
    let mut worst_z: f64 = 0.0;
    let mut checks = 0;
    let mut failures = Vec::new();
    for a in [0.3, FRAC_1_SQRT_2, 0.85] {
        let params = BarParams::symmetric(a, 1.0).unwrap();
        let k = params.symmetric_kernel().unwrap();
        let funcs: Vec<_> = MONOMIALS.iter().map(|p| k.from_monomial(p).unwrap()).collect();
        for x0 in [0.0, 1.0] {
            let nu = InitialLaw::Dirac { x0 };
            let master = RandomStream::new(7).split(a.to_bits()).split(x0.to_bits());
            let sums = replicate(&master, REPLICAS, |_, s| generation_sums(&nu, &params, DEPTH, s, &funcs)).unwrap();
            for (j, f) in funcs.iter().enumerate() {
                for n in 0..=DEPTH {
                    let m: Vec<f64> = sums.iter().map(|r| r[n][j]).collect();
                    let m2: Vec<f64> = m.iter().map(|v| v * v).collect();
                    let targets = [
                        ("mean", &m, exact_mean(&k, f, n, x0).unwrap()),
                        ("second", &m2, exact_second_moment(&k, f, n, x0).unwrap()),
                    ];
                    for (what, sample, exact) in targets {
                        checks += 1;
                        // generation 0 is deterministic under a point mass
                        let z = if sample.iter().all(|v| *v == sample[0]) {
                            if (sample[0] - exact).abs() <= 1e-12 * exact.abs().max(1.0) {
                                0.0
                            } else {
                                f64::INFINITY
                            }
                        } else {
                            let (mean, se) = mean_and_se(sample);
                            (mean - exact).abs() / se
                        };
                        worst_z = worst_z.max(z);
                        if z > 4.0 {
                            failures.push(format!("a={a:.4} x0={x0} f=x^{} n={n} {what}: z={z:.2}", j + 1));
                        }
                    }
                }
            }
        }
    }
    outcome(
        failures.is_empty(),
        format!("{checks} checks, worst |z| = {worst_z:.2} (tol 4 SE) {failures:?}"),
    )
}

fn isserlis_oracle() -> Outcome {
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for a in [0.3, FRAC_1_SQRT_2, 0.85] {
        let k = SymmetricKernel::new(a, 1.0).unwrap();
        let funcs: Vec<_> = MONOMIALS.iter().map(|p| k.from_monomial(p).unwrap()).collect();
        for x0 in [0.0, 1.0] {
            let tree = TreeGaussian { a, sigma: 1.0, x0 };
            for (i, f) in MONOMIALS.iter().enumerate() {
                for (j, g) in MONOMIALS.iter().enumerate() {
                    for n in 0..=4 {
                        for m in 0..=n {
                            let want = tree.cross_moment(f, g, n, m);
                            let got = exact_cross_moment(&k, &funcs[i], &funcs[j], n, m, x0).unwrap();
                            let cs = (tree.cross_moment(f, f, n, n) * tree.cross_moment(g, g, m, m)).sqrt();
                            let scale = cs.max(mu_norm_gh(f, a, 1.0) * mu_norm_gh(g, a, 1.0));
                            worst = worst.max((got - want).abs() / scale);
                            if i == j && n == m {
                                let second = exact_second_moment(&k, &funcs[i], n, x0).unwrap();
                                worst = worst.max((second - want).abs() / scale);
                            }
                            count += 1;
                        }
                    }
                }
            }
        }
    }
    outcome(
        worst <= 1e-8,
        format!("{count} moment pairs, worst relative error {worst:.2e} (tol 1e-8)"),
    )
}

fn subcritical_clt() -> Outcome {
    let mut cfg = ExperimentConfig::symmetric(0.5, 1.0, FunctionDesc::monomial(1), 12, 5000, 2024).unwrap();
    cfg.nu = InitialLaw::Stationary;
    let report = clt_study(&cfg).unwrap();
    let closed_form = 1.0 / (1.0 - 2.0 * 0.25);
    let rel = (report.empirical_variance / closed_form - 1.0).abs();
    let series_ok = (report.series_variance - closed_form).abs() < 1e-9;
    let ks = report.ks_distance.unwrap_or(f64::INFINITY);
    outcome(
        rel < 0.05 && ks < 0.03 && series_ok,
        format!(
            "variance {:.4} vs {closed_form} (rel {rel:.4}, tol 0.05), series {:.12}, KS {ks:.4} (tol 0.03)",
            report.empirical_variance, report.series_variance
        ),
    )
}

fn critical_clt() -> Outcome {
    let mut cfg = ExperimentConfig::symmetric(FRAC_1_SQRT_2, 1.0, FunctionDesc::monomial(1), 14, 5000, 2025).unwrap();
    cfg.nu = InitialLaw::Dirac { x0: 0.0 };
    let report = clt_study(&cfg).unwrap();
    let closed_form = 1.0;
    let rel = (report.empirical_variance / closed_form - 1.0).abs();
    let series_ok = (report.series_variance - closed_form).abs() < 1e-9;
    outcome(
        rel < 0.10 && series_ok,
        format!(
            "variance {:.4} vs {closed_form} (rel {rel:.4}, tol 0.10), series {:.12}, start dirac(0)",
            report.empirical_variance, report.series_variance
        ),
    )
}

fn phase_transition_slopes() -> Outcome {
    let alphas: Vec<f64> = (2..=19).map(|i| i as f64 * 0.05).collect();
    let mut worst: f64 = 0.0;
    let mut misses = Vec::new();
    for (f, h) in [(FunctionDesc::monomial(1), h1 as fn(f64) -> f64), (FunctionDesc::monomial(2), h2)] {
        let cfg = SlopeConfig {
            alphas: alphas.clone(),
            sigma: 1.0,
            fs: vec![f.clone()],
            targets: vec![Target::Gn],
            n_min: bmc_lab::experiments::DEFAULT_N_MIN,
            n_max: 12,
            replicas: 500,
            outer_repeats: 20,
            master_seed: 1515,
            nu: InitialLaw::Stationary,
        };
        let study = slope_study(&cfg).unwrap();
        for row in &study.summary {
            let dev = (row.mean_slope - h(row.alpha)).abs();
            worst = worst.max(if dev.is_nan() { f64::INFINITY } else { dev });
            if !(dev <= 0.15) {
                misses.push(format!("{} alpha={:.2}: {:.3} vs {:.3}", f.label(), row.alpha, row.mean_slope, h(row.alpha)));
            }
        }
    }
    outcome(
        misses.is_empty(),
        format!("{} grid points x 2 functions, worst |slope - h| = {worst:.3} (tol 0.15) {misses:?}", alphas.len()),
    )
}

fn supercritical_limits() -> Outcome {
    let cfg = ExperimentConfig::symmetric(0.85, 1.0, FunctionDesc::monomial(1), 14, 2000, 31).unwrap();
    let report = supercritical_study(&cfg).unwrap();
    let expected = 1.7 / 0.7;
    let rel = (report.ratio_median / expected - 1.0).abs();
    let d = &report.martingale_l1_diffs;
    let decreasing = (8..13).all(|k| d[k + 1] < d[k]);
    let shown: Vec<String> = d[8..=13].iter().map(|v| format!("{v:.4}")).collect();
    outcome(
        rel < 0.10 && decreasing,
        format!(
            "median ratio {:.4} vs {expected:.4} (rel {rel:.4}, tol 0.10); E|M_(n+1)-M_n|, n=8..13: [{}]",
            report.ratio_median,
            shown.join(", ")
        ),
    )
}

fn assumption_thresholds() -> Outcome {
    let r = |a: f64| check_assumptions(a, 1.0).unwrap();
    let checks = [
        ("Qh_in_L4 @0.75", r(0.75).qh_in_l4, true),
        ("Qh_in_L4 @0.76", r(0.76).qh_in_l4, false),
        ("hilsch2 @0.724", r(0.724).hilsch2_holds, true),
        ("hilsch2 @0.725", r(0.725).hilsch2_holds, false),
        ("h_in_L4 @0.57", r(0.57).h_in_l4, true),
        ("h_in_L4 @0.58", r(0.58).h_in_l4, false),
    ];
    let bad: Vec<&str> = checks.iter().filter(|(_, got, want)| got != want).map(|(n, _, _)| *n).collect();
    outcome(bad.is_empty(), format!("{} threshold checks, mismatches {bad:?}", checks.len()))
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "csv"))
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

fn determinism() -> Outcome {
    let runs: [&[&str]; 6] = [
        &["simulate", "--a", "0.5", "--n", "10", "--replicas", "200", "--f", "x^3"],
        &["simulate", "--a", "0.6", "--n", "16", "--replicas", "3", "--shape", "tree", "--f", "x"],
        &["clt", "--a", "0.7071067811865476", "--n", "9", "--replicas", "300", "--nu", "dirac:0"],
        &["slopes", "--f", "x^2", "--alphas", "0.4,0.8", "--n", "9", "--replicas", "60", "--outer-repeats", "3"],
        &["supercritical", "--a", "0.85", "--n", "10", "--replicas", "150"],
        &["martingale", "--a", "0.9", "--n", "8", "--replicas", "40", "--f", "[0,1,0,1]"],
    ];
    let root = tempfile::TempDir::new().unwrap();
    let mut mismatches = Vec::new();
    for (i, args) in runs.iter().enumerate() {
        let mut reference = None;
        for threads in 1..=8 {
            let out = root.path().join(format!("run{i}_t{threads}"));
            let o = Command::new(env!("CARGO_BIN_EXE_bmc-lab"))
                .env_remove("BMC_LAB_THREADS")
                .args(["--threads", &threads.to_string()])
                .args(*args)
                .args(["--seed", "77", "--out"])
                .arg(&out)
                .output()
                .unwrap();
            if !o.status.success() {
                mismatches.push(format!("{} failed with {:?}", args[0], o.status.code()));
                continue;
            }
            let files = csv_files(&out);
            match &reference {
                None => reference = Some(files),
                Some(r) if *r != files => mismatches.push(format!("{} threads={threads}", args[0])),
                Some(_) => {}
            }
        }
    }
    outcome(
        mismatches.is_empty(),
        format!("{} commands x threads 1..8, differing outputs {mismatches:?}", runs.len()),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, Duration); 9] = [
        ("spectral oracle equivalence", spectral_oracle, Duration::from_secs(1)),
        ("many-to-one moments", many_to_one_mc, Duration::from_secs(60)),
        ("brute-force depth-4 oracle", isserlis_oracle, Duration::from_secs(10)),
        ("subcritical CLT", subcritical_clt, Duration::from_secs(120)),
        ("critical CLT", critical_clt, Duration::from_secs(300)),
        ("phase-transition slopes", phase_transition_slopes, Duration::from_secs(900)),
        ("supercritical limits", supercritical_limits, Duration::from_secs(180)),
        ("assumption thresholds", assumption_thresholds, Duration::from_secs(5)),
        ("determinism across thread counts", determinism, Duration::MAX),
    ];
    let only: Option<usize> = std::env::args().skip(1).find_map(|a| a.parse().ok());
    let mut failed = 0;
    for (i, (name, run, budget)) in criteria.iter().enumerate() {
        let id = i + 1;
        if only.is_some_and(|o| o != id) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run));
        let elapsed = start.elapsed();
        let (pass, detail) = match result {
            Ok(o) => (o.pass, o.detail),
            Err(e) => {
                let msg = e
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                (false, format!("panicked: {msg}"))
            }
        };
        let in_time = elapsed <= *budget;
        let pass = pass && in_time;
        if !pass {
            failed += 1;
        }
        let budget_note = if *budget == Duration::MAX {
            String::new()
        } else {
            format!(", budget {}s", budget.as_secs())
        };
        println!(
            "{} criterion {id} {name}: {detail} [{:.2}s{budget_note}]",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
