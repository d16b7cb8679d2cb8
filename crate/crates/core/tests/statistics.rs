mod common;

use harchow::bases::{break_index, norm_factor, BasisBank, BasisFamily};
use harchow::chowtest::{run_test, scaling_factor, KPolicy, TestOptions, TestVariant};
use harchow::fixedlimit::CvCache;
use harchow::mcstudy::{simulate_dgp, DgpSpec};
use harchow::numkit::rng::{standard_normals, RngStream};
use harchow::regression::{BreakHypothesis, RegressionData};
use harchow::Matrix;
use proptest::prelude::*;

/// Regime-demeaned, regime-scaled copy of one column, written out longhand.
fn tilde(col: &[f64], lambda: f64, kb: usize) -> Vec<f64> {
    let t = col.len();
    let mut m1 = 0.0;
    for v in &col[..kb] {
        m1 += v;
    }
    m1 /= kb as f64;
    let mut m2 = 0.0;
    for v in &col[kb..] {
        m2 += v;
    }
    m2 /= (t - kb) as f64;
    (0..t)
        .map(|i| if i < kb { (col[i] - m1) / lambda } else { -(col[i] - m2) / (1.0 - lambda) })
        .collect()
}

#[test]
fn raw_norm_factor_by_direct_summation() {
    let (t, lambda, k) = (100, 0.4, 4);
    let dense = common::fourier(t, k);
    let kb = break_index(t, lambda);
    let mut total = 0.0;
    for j in 0..k {
        let col: Vec<f64> = (0..t).map(|i| dense[i][j]).collect();
        for v in tilde(&col, lambda, kb) {
            total += v * v;
        }
    }
    let oracle = total / (k * t) as f64;

    let bank = BasisBank::new(t, lambda, k).unwrap();
    let lib = bank.norm_factor(BasisFamily::FourierRaw, k);
    assert!((lib - oracle).abs() < 1e-12 * oracle, "{lib} vs {oracle}");
    let phi = bank.basis(BasisFamily::FourierRaw, k).unwrap().matrix;
    assert!((norm_factor(&phi, lambda).unwrap() - oracle).abs() < 1e-12 * oracle);
}

fn fixture(t: usize, rho: f64, seed: u64, lambda: f64) -> RegressionData {
    let spec = DgpSpec {
        lambda,
        ..DgpSpec::new(t, rho, 0.0)
    };
    let (mut a, mut b) = spec.streams(seed, 0);
    let (y, x) = simulate_dgp(&spec, &mut a, &mut b).unwrap();
    RegressionData::new(y, x, None, lambda).unwrap()
}

fn report(data: &RegressionData, variant: TestVariant, k: usize) -> harchow::chowtest::TestReport {
    let opts = TestOptions {
        variant,
        k: KPolicy::Fixed(k),
        ..TestOptions::default()
    };
    run_test(data, &BreakHypothesis::full(2), &opts, &CvCache::in_memory()).unwrap()
}

#[test]
fn scaled_over_modified_ratio() {
    // lambda T integer: the transformed basis is exactly kernel-orthonormal,
    // so the norm factor is one and the ratio is (K-p+1)/(Kp)
    let data = fixture(200, 0.3, 5, 0.4);
    for k in [2usize, 6, 10] {
        let r = report(&data, TestVariant::FTransformed, k);
        assert!((r.norm_factor - 1.0).abs() < 1e-9, "K={k}: {}", r.norm_factor);
        let expect = (k - 1) as f64 / (2 * k) as f64;
        assert!((r.f_scaled / r.f_modified - expect).abs() < 1e-9 * expect);
        assert!((r.f_scaled / r.f_raw - scaling_factor(2, k, 0.4).unwrap()).abs() < 1e-12);
    }
}

#[test]
fn transformed_norm_factor_tends_to_one() {
    // lambda T not an integer: the deviation from one shrinks with T
    let mut last = f64::INFINITY;
    for t in [101usize, 401, 1601] {
        let bank = BasisBank::new(t, 0.4, 6).unwrap();
        let dev = (bank.norm_factor(BasisFamily::FourierTransformed, 6) - 1.0).abs();
        assert!(dev < last, "T={t}: {dev} >= {last}");
        assert!(dev * t as f64 <= 20.0, "T={t}: deviation {dev}");
        last = dev;
    }
}

#[test]
fn dense_oracle_on_random_fixture() {
    // F_T = T (R b)' [R Q^-1 Omega Q^-1 R']^-1 (R b) with every piece dense
    let data = fixture(60, 0.5, 9, 0.5);
    let k = 6;
    let r = report(&data, TestVariant::ChisqFourier, k);
    let t = 60usize;
    let kb = break_index(t, 0.5);
    let xt: Vec<Vec<f64>> = (0..t)
        .map(|i| {
            let row = data.x.row(i);
            if i < kb {
                vec![row[0], row[1], 0.0, 0.0]
            } else {
                vec![0.0, 0.0, row[0], row[1]]
            }
        })
        .collect();
    let xtx = common::mul(&common::transpose(&xt), &xt);
    let xty = common::mul(&common::transpose(&xt), &common::col(&data.y));
    let beta = common::mul(&common::inv(&xtx), &xty);
    let resid: Vec<f64> = (0..t)
        .map(|i| data.y[i] - (0..4).map(|j| xt[i][j] * beta[j][0]).sum::<f64>())
        .collect();
    let q = common::scale(&xtx, 1.0 / t as f64);
    let phi = common::fourier(t, k);
    let mut omega = common::zeros(4, 4);
    for j in 0..k {
        let mut g = vec![0.0; 4];
        for i in 0..t {
            for c in 0..4 {
                g[c] += phi[i][j] * xt[i][c] * resid[i];
            }
        }
        for a in 0..4 {
            for b in 0..4 {
                omega[a][b] += g[a] * g[b] / (t as f64 * k as f64);
            }
        }
    }
    let rm = vec![vec![1.0, 0.0, -1.0, 0.0], vec![0.0, 1.0, 0.0, -1.0]];
    let qi = common::inv(&q);
    let v = common::mul(&common::mul(&common::mul(&common::mul(&rm, &qi), &omega), &qi), &common::transpose(&rm));
    let rb = common::mul(&rm, &beta);
    let f = common::mul(&common::mul(&common::transpose(&rb), &common::inv(&v)), &rb)[0][0] * t as f64;
    assert!(common::rel_close(r.f_raw, f, 1e-9), "{} vs {f}", r.f_raw);
}

fn random_data(seed: u64, t: usize, lambda: f64) -> RegressionData {
    let mut g = RngStream::new(seed, 0);
    let q = standard_normals(&mut g, t);
    let e = standard_normals(&mut g, t);
    let rows: Vec<Vec<f64>> = q.iter().map(|&v| vec![1.0, v]).collect();
    let y: Vec<f64> = q.iter().zip(&e).map(|(a, b)| 0.3 * a + b).collect();
    RegressionData::new(y, Matrix::from_rows(&rows), None, lambda).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn invariant_to_scaling_y(seed in 0u64..10_000, c in prop_oneof![-50.0f64..-0.01, 0.01f64..50.0], k in 2usize..12) {
        let d = random_data(seed, 80, 0.4);
        let scaled = RegressionData::new(d.y.iter().map(|v| c * v).collect(), d.x.clone(), None, 0.4).unwrap();
        let a = report(&d, TestVariant::FTransformed, k);
        let b = report(&scaled, TestVariant::FTransformed, k);
        prop_assert!((a.f_raw - b.f_raw).abs() <= 1e-8 * a.f_raw.max(1.0));
        prop_assert_eq!(a.reject, b.reject);
    }

    #[test]
    fn invariant_to_reparametrizing_x(seed in 0u64..10_000, s in 0.1f64..10.0, shift in -3.0f64..3.0) {
        // X -> X D with D = [[1, shift], [0, s]] spans the same column space
        let d = random_data(seed, 80, 0.5);
        let rows: Vec<Vec<f64>> = (0..80).map(|i| {
            let r = d.x.row(i);
            vec![r[0], shift * r[0] + s * r[1]]
        }).collect();
        let moved = RegressionData::new(d.y.clone(), Matrix::from_rows(&rows), None, 0.5).unwrap();
        let a = report(&d, TestVariant::ChisqFourier, 8);
        let b = report(&moved, TestVariant::ChisqFourier, 8);
        prop_assert!((a.f_raw - b.f_raw).abs() <= 1e-7 * a.f_raw.max(1.0));
    }

    #[test]
    fn one_restriction_f_is_t_squared(seed in 0u64..10_000, k in 1usize..15) {
        let d = random_data(seed, 100, 0.3);
        let hyp = BreakHypothesis::new(Matrix::from_rows(&[[0.0, 1.0]])).unwrap();
        let opts = TestOptions { variant: TestVariant::TTransformed, k: KPolicy::Fixed(k), ..TestOptions::default() };
        let r = run_test(&d, &hyp, &opts, &CvCache::in_memory()).unwrap();
        prop_assert!((r.statistic_raw.powi(2) - r.f_raw).abs() <= 1e-9 * r.f_raw.max(1.0));
        prop_assert!((r.statistic_scaled.powi(2) - r.f_scaled).abs() <= 1e-9 * r.f_scaled.max(1.0));
        prop_assert_eq!(r.statistic_raw.signum(), r.contrast[0].signum());
    }
}
