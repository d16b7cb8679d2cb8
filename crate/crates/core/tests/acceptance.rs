//! Acceptance criteria, one PASS/FAIL line each.
//!
//! Runs as a plain binary (`harness = false`). Set `HARCHOW_ACCEPTANCE=1,4`
//! to run a subset.

mod common;

use std::time::Instant;

use common::*;
use harchow::bases::{fourier_matrix, gram_transform, phi_tilde_matrix, BasisBank, BasisFamily, KernelMatrix};
use harchow::chowtest::{
    compute_statistics, fit_scores, run_test, wald_stat, KPolicy, TestOptions, TestVariant,
};
use harchow::fixedlimit::{critical_value, simulate_limit_range, CvCache, LimitSpec, StatKind};
use harchow::longrun::{sandwich_variance, score_matrix, series_average};
use harchow::mcstudy::{power_experiment, size_csv, size_experiment, DgpSpec, PowerConfig, SizeConfig, SizeRow};
use harchow::numkit::dist::{dist_quantile, DistFamily};
use harchow::numkit::rng::{standard_normals, RngStream};
use harchow::regression::{ols_fit, BreakHypothesis, RegressionData};
use harchow::Matrix;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

fn main() {
    let selected: Option<Vec<usize>> = std::env::var("HARCHOW_ACCEPTANCE")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: Vec<(usize, &str, fn() -> Outcome)> = vec![
        (1, "kernel orthonormality of transformed bases", c1_orthonormality),
        (2, "discrete kernel identity at integer break", c2_kernel_identity),
        (3, "brute-force oracle on T=12 fixture", c3_oracle),
        (4, "simulated scaled limit matches F quantiles", c4_bridge),
        (5, "finite-sample F test calibration", c5_calibration),
        (6, "data-driven K size table cells", c6_table),
        (7, "per-K rejection pattern", c7_figure),
        (8, "size-adjusted power", c8_power),
        (9, "invariances", c9_invariance),
        (10, "reproducibility across worker counts", c10_reproducible),
    ];
    let mut failed = 0;
    for (id, name, f) in criteria {
        if let Some(sel) = &selected {
            if !sel.contains(&id) {
                continue;
            }
        }
        let start = Instant::now();
        let out = f();
        let secs = start.elapsed().as_secs_f64();
        let tag = if out.pass { "PASS" } else { "FAIL" };
        println!("criterion {id:>2} [{tag}] {name} ({secs:.1}s): {}", out.detail);
        if !out.pass {
            failed += 1;
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn c1_orthonormality() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for t in [50, 100, 200] {
        for lambda in [0.3, 0.4, 0.5] {
            let c = KernelMatrix::new(t, lambda).unwrap();
            for k in (2..=20).step_by(2) {
                let raw = fourier_matrix(t, k).unwrap();
                let star = gram_transform(&raw, &c).unwrap();
                let g = c.gram(&star.matrix);
                worst = worst.max(g.max_abs_diff(&Matrix::identity(k)));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(worst <= 1e-8 && secs < 5.0, format!("max |Gram - I| = {worst:.2e}, {secs:.2}s (limit 1e-8, 5s)"))
}

fn c2_kernel_identity() -> Outcome {
    let mut worst: f64 = 0.0;
    for (t, lambda) in [(100, 0.4), (50, 0.5)] {
        let k = 20;
        let phi = fourier(t, k);
        let kb = (lambda * t as f64).round() as usize;
        let c = kernel(t, lambda, kb);
        let lhs = scale(&mul(&transpose(&phi), &mul(&c, &phi)), 1.0 / (t * t) as f64);
        let tilde = phi_tilde_matrix(&fourier_matrix(t, k).unwrap().matrix, lambda).unwrap();
        let mut rhs = zeros(k, k);
        for i in 0..k {
            for j in 0..k {
                rhs[i][j] = (0..t).map(|s| tilde[(s, i)] * tilde[(s, j)]).sum::<f64>() / t as f64;
            }
        }
        worst = worst.max(max_abs_diff(&lhs, &rhs));
    }
    Outcome::new(worst <= 1e-10, format!("max elementwise difference {worst:.2e} (limit 1e-10)"))
}

fn oracle_fixture() -> (Vec<f64>, Dense, Vec<f64>) {
    let t = 12;
    let x1: Vec<f64> = (0..t).map(|i| (0.7 * i as f64 + 0.3).sin() + 0.1 * i as f64).collect();
    let z: Vec<f64> = (0..t).map(|i| (1.3 * i as f64).cos()).collect();
    let y: Vec<f64> = (0..t)
        .map(|i| 0.5 + 0.8 * x1[i] - 0.4 * z[i] + (2.1 * i as f64 + 0.5).sin() * 0.9 + if i >= 6 { 0.3 } else { 0.0 })
        .collect();
    let x: Dense = x1.iter().map(|v| vec![1.0, *v]).collect();
    (y, x, z)
}

fn c3_oracle() -> Outcome {
    let (t, k, lambda, kb) = (12usize, 4usize, 0.5, 6usize);
    let (y, x, z) = oracle_fixture();

    // brute force
    let mut xt = zeros(t, 4);
    for i in 0..t {
        let off = if i < kb { 0 } else { 2 };
        xt[i][off] = x[i][0];
        xt[i][off + 1] = x[i][1];
    }
    let zm = col(&z);
    let mz = sub(&eye(t), &mul(&mul(&zm, &inv(&mul(&transpose(&zm), &zm))), &transpose(&zm)));
    let xz = mul(&mz, &xt);
    let yz = mul(&mz, &col(&y));
    let xtx = mul(&transpose(&xz), &xz);
    let beta = mul(&inv(&xtx), &mul(&transpose(&xz), &yz));
    let u = sub(&yz, &mul(&xz, &beta));
    let q = scale(&xtx, 1.0 / t as f64);
    let phi = fourier(t, k);
    let c = kernel(t, lambda, kb);
    let g = scale(&mul(&transpose(&phi), &mul(&c, &phi)), 1.0 / (t * t) as f64);
    let phi_star = mul(&phi, &inv(&chol_upper(&g)));
    let mut omega = zeros(4, 4);
    for j in 0..k {
        let mut a = [0.0; 4];
        for s in 0..t {
            for (cc, av) in a.iter_mut().enumerate() {
                *av += phi_star[s][j] * xz[s][cc] * u[s][0] / (t as f64).sqrt();
            }
        }
        for r in 0..4 {
            for cc in 0..4 {
                omega[r][cc] += a[r] * a[cc] / k as f64;
            }
        }
    }
    let rm: Dense = vec![vec![1.0, 0.0, -1.0, 0.0], vec![0.0, 1.0, 0.0, -1.0]];
    let qi = inv(&q);
    let v = mul(&mul(&mul(&mul(&rm, &qi), &omega), &qi), &transpose(&rm));
    let rb = mul(&rm, &beta);
    let f = t as f64 * mul(&mul(&transpose(&rb), &inv(&v)), &rb)[0][0];
    let f_scaled = (k - 2 + 1) as f64 / (k * 2) as f64 * lambda * (1.0 - lambda) * f;

    // library
    let xm = Matrix::from_vec(t, 2, x.concat()).unwrap();
    let data = RegressionData::new(y.clone(), xm, Some(Matrix::column_vector(&z)), lambda).unwrap();
    let opts = TestOptions {
        variant: TestVariant::FTransformed,
        k: KPolicy::Fixed(k),
        ..TestOptions::default()
    };
    let rep = run_test(&data, &BreakHypothesis::full(2), &opts, &CvCache::in_memory()).unwrap();

    let beta_o: Vec<f64> = beta.iter().map(|r| r[0]).collect();
    let beta_err = beta_o
        .iter()
        .zip(&rep.beta_hat)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / max_abs(&beta);
    let omega_err = max_abs_diff(&omega, &rep.omega_hat) / max_abs(&omega);
    let f_ok = rel_close(f, rep.f_raw, 1e-9);
    let fs_ok = rel_close(f_scaled, rep.statistic_scaled, 1e-9);
    Outcome::new(
        beta_err <= 1e-9 && omega_err <= 1e-9 && f_ok && fs_ok,
        format!(
            "beta rel {beta_err:.1e}, Omega rel {omega_err:.1e}, F_T {f:.10} vs {:.10}, scaled {f_scaled:.10} vs {:.10}",
            rep.f_raw, rep.statistic_scaled
        ),
    )
}

fn c4_bridge() -> Outcome {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut lines = Vec::new();
    for (p, ks) in [(1usize, 8usize..=8usize), (2, 8..=12)] {
        let spec = LimitSpec {
            p,
            k: *ks.start(),
            lambda: 0.4,
            family: BasisFamily::FourierTransformed,
            grid: 1000,
            reps: 100_000,
            seed: 11,
        };
        let dists = simulate_limit_range(&spec, *ks.start(), *ks.end(), &[StatKind::ScaledFInf]).unwrap();
        for d in dists.iter().filter(|d| (p, d.spec.k) == (1, 8) || (p == 2 && [8, 12].contains(&d.spec.k))) {
            let k = d.spec.k;
            let f = DistFamily::FisherF {
                df1: p as f64,
                df2: (k - p + 1) as f64,
            };
            for alpha in [0.10, 0.05, 0.01] {
                let sim = critical_value(d, alpha).unwrap();
                let exact = dist_quantile(f, 1.0 - alpha).unwrap();
                let rel = (sim / exact - 1.0).abs();
                worst = worst.max(rel);
                lines.push(format!("p={p} K={k} q={:.2}: {sim:.3}/{exact:.3}", 1.0 - alpha));
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    Outcome::new(
        worst <= 0.025 && secs < 120.0,
        format!("max rel diff {:.2}% (limit 2.5%, {secs:.0}s); {}", 100.0 * worst, lines.join("; ")),
    )
}

fn find<'a>(rows: &'a [SizeRow], rho: f64, psi: f64, v: TestVariant, k: KPolicy) -> &'a SizeRow {
    rows.iter()
        .find(|r| r.rho == rho && r.psi == psi && r.variant == v && r.k_policy == k)
        .expect("row present")
}

fn c5_calibration() -> Outcome {
    let mut cfg = SizeConfig::new(vec![DgpSpec::new(200, 0.0, 0.0)], vec![KPolicy::Fixed(8)]);
    cfg.variants = vec![TestVariant::FTransformed];
    cfg.reps = 2000;
    cfg.seed = 5;
    let rows = size_experiment(&cfg).unwrap();
    let r = &rows[0];
    Outcome::new(
        (0.035..=0.075).contains(&r.rejection) && r.failures == 0,
        format!("rejection {:.4} (s.e. {:.4}, failures {}), target [0.035, 0.075]", r.rejection, r.mc_se, r.failures),
    )
}

fn c6_table() -> Outcome {
    let start = Instant::now();
    let designs = [(0.6, 0.0), (0.9, 0.0), (0.6, 0.6), (0.9, 0.9)];
    let mut cfg = SizeConfig::new(
        designs.iter().map(|&(r, p)| DgpSpec::new(100, r, p)).collect(),
        vec![KPolicy::Auto],
    );
    cfg.reps = 2000;
    cfg.seed = 6;
    let rows = size_experiment(&cfg).unwrap();
    let mut cfg500 = SizeConfig::new(vec![DgpSpec::new(500, 0.0, 0.0)], vec![KPolicy::Auto]);
    cfg500.variants = vec![TestVariant::ChisqTransformed, TestVariant::FTransformed];
    cfg500.reps = 2000;
    cfg500.seed = 6;
    let rows500 = size_experiment(&cfg500).unwrap();

    let a = KPolicy::Auto;
    let chi = find(&rows, 0.9, 0.0, TestVariant::ChisqFourier, a).rejection;
    let fnt = find(&rows, 0.9, 0.0, TestVariant::FTransformed, a).rejection;
    let f500 = find(&rows500, 0.0, 0.0, TestVariant::FTransformed, a).rejection;
    let mut checks = vec![
        ((chi - 0.511).abs() <= 0.05, format!("chisq-fourier(0.9) {chi:.3} vs 0.511±0.05")),
        ((fnt - 0.209).abs() <= 0.05, format!("f-transformed(0.9) {fnt:.3} vs 0.209±0.05")),
        (chi - fnt >= 0.20, format!("gap {:.3} >= 0.20", chi - fnt)),
        ((f500 - 0.048).abs() <= 0.02, format!("f-transformed(T=500, rho=0) {f500:.3} vs 0.048±0.02")),
    ];
    for &(rho, psi) in &designs {
        for (chisq, f) in [
            (TestVariant::ChisqFourier, TestVariant::NonstandardFourier),
            (TestVariant::ChisqTransformed, TestVariant::FTransformed),
        ] {
            let rc = find(&rows, rho, psi, chisq, a).rejection;
            let rf = find(&rows, rho, psi, f, a).rejection;
            checks.push((
                (rf - 0.05).abs() < (rc - 0.05).abs(),
                format!("rho={rho} psi={psi} {f} {rf:.3} closer than {chisq} {rc:.3}"),
            ));
        }
    }
    let ave_k = find(&rows, 0.9, 0.0, TestVariant::ChisqFourier, a).ave_k;
    let secs = start.elapsed().as_secs_f64();
    let failed: Vec<&String> = checks.iter().filter(|c| !c.0).map(|c| &c.1).collect();
    let summary: Vec<String> = checks.iter().take(4).map(|c| c.1.clone()).collect();
    Outcome::new(
        failed.is_empty(),
        format!(
            "{}; Ave(K) at rho=0.9 {ave_k:.2}; {secs:.0}s; failed: {:?}",
            summary.join("; "),
            failed
        ),
    )
}

fn c7_figure() -> Outcome {
    let ks: Vec<KPolicy> = (2..=20).step_by(2).map(KPolicy::Fixed).collect();
    let mut cfg = SizeConfig::new(vec![DgpSpec::new(100, 0.9, 0.0), DgpSpec::new(100, 0.0, 0.0)], ks.clone());
    cfg.reps = 2000;
    cfg.seed = 7;
    let rows = size_experiment(&cfg).unwrap();
    let mut failed = Vec::new();
    for &k in &ks {
        for (chisq, f) in [
            (TestVariant::ChisqFourier, TestVariant::NonstandardFourier),
            (TestVariant::ChisqTransformed, TestVariant::FTransformed),
        ] {
            let rc = find(&rows, 0.9, 0.0, chisq, k);
            let rf = find(&rows, 0.9, 0.0, f, k);
            let se = (rc.mc_se.powi(2) + rf.mc_se.powi(2)).sqrt();
            if rc.rejection - rf.rejection <= 2.0 * se {
                failed.push(format!("rho=0.9 K={k}: {chisq} {:.3} vs {f} {:.3}", rc.rejection, rf.rejection));
            }
            if let KPolicy::Fixed(kv) = k {
                let r0 = find(&rows, 0.0, 0.0, f, k).rejection;
                if kv >= 6 && !(0.03..=0.09).contains(&r0) {
                    failed.push(format!("rho=0 K={kv}: {f} {r0:.3} outside [0.03, 0.09]"));
                }
            }
        }
    }
    let k2 = KPolicy::Fixed(2);
    let k20 = KPolicy::Fixed(20);
    Outcome::new(
        failed.is_empty(),
        format!(
            "rho=0.9 chisq-fourier K=2 {:.3}, K=20 {:.3}; f-transformed K=2 {:.3}, K=20 {:.3}; failed: {failed:?}",
            find(&rows, 0.9, 0.0, TestVariant::ChisqFourier, k2).rejection,
            find(&rows, 0.9, 0.0, TestVariant::ChisqFourier, k20).rejection,
            find(&rows, 0.9, 0.0, TestVariant::FTransformed, k2).rejection,
            find(&rows, 0.9, 0.0, TestVariant::FTransformed, k20).rejection,
        ),
    )
}

fn c8_power() -> Outcome {
    let deltas: Vec<f64> = (0..=6).map(|i| i as f64 * 0.2).collect();
    let mut cfg = PowerConfig::new(DgpSpec::new(200, 0.6, 0.0), deltas.clone());
    cfg.reps = 2000;
    cfg.seed = 8;
    let res = power_experiment(&cfg).unwrap();
    let power = |d: f64, v: TestVariant| {
        res.rows
            .iter()
            .find(|r| r.delta == d && r.variant == v)
            .expect("row")
            .power
    };
    let mut worst: f64 = 0.0;
    let mut curve = Vec::new();
    for &d in &deltas {
        let pf = power(d, TestVariant::ChisqFourier);
        let pt = power(d, TestVariant::FTransformed);
        worst = worst.max((pf - pt).abs());
        curve.push(format!("{d:.1}:{pf:.3}/{pt:.3}"));
    }
    let idx = |v: TestVariant| cfg.variants.iter().position(|x| *x == v).unwrap();
    let mut identical = true;
    for per_delta in &res.decisions {
        for v in [TestVariant::ChisqFourier, TestVariant::ChisqTransformed] {
            identical &= per_delta[idx(v)] == per_delta[idx(v.partner())];
        }
    }
    Outcome::new(
        worst <= 0.03 && identical,
        format!("max |Fourier - transformed| {worst:.3} (limit 0.03); pair decisions identical: {identical}; {}", curve.join(" ")),
    )
}

fn random_data(t: usize, seed: u64) -> (Vec<f64>, Matrix) {
    let mut rng = RngStream::new(seed, 0);
    let q = standard_normals(&mut rng, t);
    let e = standard_normals(&mut rng, t);
    let mut x = Matrix::zeros(t, 2);
    let mut y = vec![0.0; t];
    let mut u = 0.0;
    for i in 0..t {
        u = 0.5 * u + e[i];
        x[(i, 0)] = 1.0;
        x[(i, 1)] = q[i];
        y[i] = 0.3 + 0.7 * q[i] + u;
    }
    (y, x)
}

fn c9_invariance() -> Outcome {
    let t = 150;
    let (y, x) = random_data(t, 9);
    let hyp = BreakHypothesis::full(2);
    let opts = TestOptions {
        variant: TestVariant::FTransformed,
        k: KPolicy::Fixed(8),
        ..TestOptions::default()
    };
    let cache = CvCache::in_memory();
    let f_of = |y: Vec<f64>, x: Matrix| {
        let data = RegressionData::new(y, x, None, 0.4).unwrap();
        run_test(&data, &hyp, &opts, &cache).unwrap().f_raw
    };
    let base = f_of(y.clone(), x.clone());
    let d = Matrix::from_rows(&[[2.0, 0.5], [-1.0, 3.0]]);
    let f_xd = f_of(y.clone(), x.matmul(&d));
    let f_cy = f_of(y.iter().map(|v| -3.7 * v).collect(), x.clone());

    // basis sign flips and permutations
    let data = RegressionData::new(y.clone(), x.clone(), None, 0.4).unwrap();
    let fit = ols_fit(&data, &hyp).unwrap();
    let bank = BasisBank::new(t, 0.4, 8).unwrap();
    let phi = bank.basis(BasisFamily::FourierTransformed, 8).unwrap().matrix;
    let mut shuffled = Matrix::zeros(t, 8);
    let perm = [5, 2, 7, 0, 1, 6, 3, 4];
    for (j, &src) in perm.iter().enumerate() {
        let sign = if j % 3 == 0 { -1.0 } else { 1.0 };
        shuffled.set_column(j, &phi.column(src).iter().map(|v| sign * v).collect::<Vec<_>>());
    }
    let r = hyp.r();
    let s = score_matrix(&fit.xz, &fit.residuals).unwrap();
    let contrast = r.matvec(&fit.beta_hat);
    let f_basis = |m: &Matrix| {
        let omega = series_average(m, 8, &s).unwrap();
        wald_stat(&contrast, &sandwich_variance(&r, &fit.q_hat, &omega).unwrap(), t).unwrap()
    };
    let f_orig = f_basis(&phi);
    let f_shuf = f_basis(&shuffled);
    let scores = fit_scores(&fit).unwrap();
    let f_lib = compute_statistics(&fit, &scores, &r, &bank, BasisFamily::FourierTransformed, 8)
        .unwrap()
        .f_raw;

    // p = 1: F and two-sided t decisions
    let hyp1 = BreakHypothesis::new(Matrix::from_rows(&[[0.0, 1.0]])).unwrap();
    let mut mismatches = 0;
    for seed in 0..300 {
        let (y, x) = random_data(100, 1000 + seed);
        let data = RegressionData::new(y, x, None, 0.4).unwrap();
        for (k, alpha) in [(4, 0.05), (8, 0.10), (12, 0.01)] {
            let mk = |v| TestOptions {
                variant: v,
                k: KPolicy::Fixed(k),
                alpha,
                ..TestOptions::default()
            };
            let f = run_test(&data, &hyp1, &mk(TestVariant::FTransformed), &cache).unwrap();
            let tt = run_test(&data, &hyp1, &mk(TestVariant::TTransformed), &cache).unwrap();
            if f.reject != tt.reject {
                mismatches += 1;
            }
        }
    }
    let checks = [
        rel_close(base, f_xd, 1e-8),
        rel_close(base, f_cy, 1e-8),
        rel_close(f_orig, f_shuf, 1e-8),
        rel_close(f_orig, f_lib, 1e-12),
    ];
    Outcome::new(
        checks.iter().all(|c| *c) && mismatches == 0,
        format!(
            "F_T {base:.10}; XD {f_xd:.10}; cY {f_cy:.10}; permuted basis {f_shuf:.10}; t/F decision mismatches {mismatches}/900"
        ),
    )
}

fn c10_reproducible() -> Outcome {
    let run = |workers| {
        let mut cfg = SizeConfig::new(
            vec![DgpSpec::new(100, 0.3, 0.0), DgpSpec::new(100, 0.9, 0.9)],
            vec![KPolicy::Fixed(4), KPolicy::Auto],
        );
        cfg.reps = 500;
        cfg.limit_reps = 2000;
        cfg.seed = 10;
        cfg.workers = Some(workers);
        size_csv(&size_experiment(&cfg).unwrap())
    };
    let outputs: Vec<String> = [1, 4, 8].into_iter().map(run).collect();
    let same = outputs.windows(2).all(|w| w[0] == w[1]);
    Outcome::new(same, format!("CSV byte-identical at 1/4/8 workers: {same} ({} bytes)", outputs[0].len()))
}
