//! Monte Carlo size and size-adjusted power of the break tests.
//!
//! The design has `X_t = (1, q_t)` with
//!
//! ```text
//! q_t = rho q_{t-1} + e_{q,t}
//! u_t = rho u_{t-1} + e_{u,t} + psi e_{u,t-1}
//! Y_t = X_t beta(t) + u_t,   beta(t) = 0 up to the break, (delta, delta) after
//! ```
//!
//! Replication `r` of a cell draws `q` and `u` innovations from substreams
//! `2r` and `2r + 1` of a seed derived from the master seed and the cell
//! (excluding `delta`, so power curves use common random numbers). Results do
//! not depend on the number of worker threads.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autok::{choose_k, KRule};
use crate::bases::{break_index, BasisBank, BasisFamily};
use crate::chowtest::{compute_statistics, decide, fit_scores, Alternative, KPolicy, LimitSettings, Statistics, TestVariant};
use crate::error::{Error, Result};
use crate::fixedlimit::CvCache;
use crate::numkit::rng::{derive_seed, RngStream};
use crate::numkit::Matrix;
use crate::regression::{ols_fit, BreakHypothesis, RegressionData};

pub const BURN_IN: usize = 500;
pub const DEFAULT_REPS: usize = 2000;
pub const FULL_REPS: usize = 10_000;
pub const DEFAULT_LAMBDA: f64 = 0.4;

const CELL_TAG: u64 = 0x43454c4c; // "CELL"
const CV_TAG: u64 = 0x4356; // "CV"

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DgpSpec {
    #[serde(rename = "T")]
    pub t: usize,
    pub rho: f64,
    pub psi: f64,
    pub delta: f64,
    pub lambda: f64,
}

impl DgpSpec {
    pub fn new(t: usize, rho: f64, psi: f64) -> Self {
        Self {
            t,
            rho,
            psi,
            delta: 0.0,
            lambda: DEFAULT_LAMBDA,
        }
    }

    pub fn with_delta(self, delta: f64) -> Self {
        Self { delta, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho.abs() < 1.0) {
            return Err(Error::Config(format!("|rho| must be below one, got {}", self.rho)));
        }
        if self.t < 50 {
            return Err(Error::Config(format!("T must be at least 50, got {}", self.t)));
        }
        if !self.psi.is_finite() || !self.delta.is_finite() {
            return Err(Error::Config("psi and delta must be finite".into()));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::Domain(format!("break fraction must lie in (0, 1), got {}", self.lambda)));
        }
        Ok(())
    }

    /// Seed shared by every replication of the cell; `delta` is left out.
    pub fn cell_seed(&self, master: u64) -> u64 {
        derive_seed(
            master,
            &[CELL_TAG, self.t as u64, self.rho.to_bits(), self.psi.to_bits(), self.lambda.to_bits()],
        )
    }

    /// Innovation streams of replication `rep`.
    pub fn streams(&self, master: u64, rep: usize) -> (RngStream, RngStream) {
        let s = self.cell_seed(master);
        (RngStream::new(s, 2 * rep as u64), RngStream::new(s, 2 * rep as u64 + 1))
    }
}

/// Draws `(Y, X)` with a burn-in of [`BURN_IN`] discarded observations.
pub fn simulate_dgp(spec: &DgpSpec, rng_q: &mut RngStream, rng_u: &mut RngStream) -> Result<(Vec<f64>, Matrix)> {
    simulate_dgp_with_burn_in(spec, BURN_IN, rng_q, rng_u)
}

/// [`simulate_dgp`] with an explicit number of discarded start-up draws.
pub fn simulate_dgp_with_burn_in(
    spec: &DgpSpec,
    burn_in: usize,
    rng_q: &mut RngStream,
    rng_u: &mut RngStream,
) -> Result<(Vec<f64>, Matrix)> {
    spec.validate()?;
    let t = spec.t;
    let k = break_index(t, spec.lambda);
    let (mut q, mut u, mut e_prev) = (0.0, 0.0, 0.0);
    let mut y = Vec::with_capacity(t);
    let mut x = Matrix::zeros(t, 2);
    for i in 0..burn_in + t {
        let eq = rng_q.standard_normal();
        let eu = rng_u.standard_normal();
        q = spec.rho * q + eq;
        u = spec.rho * u + eu + spec.psi * e_prev;
        e_prev = eu;
        if i >= burn_in {
            let s = i - burn_in;
            x[(s, 0)] = 1.0;
            x[(s, 1)] = q;
            let shift = if s < k { 0.0 } else { spec.delta * (1.0 + q) };
            y.push(shift + u);
        }
    }
    Ok((y, x))
}

/// Statistics of one replication under one K policy.
#[derive(Debug, Clone)]
struct PolicyStats {
    raw: Option<Statistics>,
    transformed: Option<Statistics>,
}

struct Replication {
    /// One entry per K policy; `None` marks a failed replication.
    per_policy: Vec<Option<PolicyStats>>,
}

fn replicate(
    spec: &DgpSpec,
    master: u64,
    rep: usize,
    policies: &[KPolicy],
    rule: KRule,
    families: (bool, bool),
    bank: &BasisBank,
) -> Replication {
    let run = || -> Result<Vec<Option<PolicyStats>>> {
        let (mut rq, mut ru) = spec.streams(master, rep);
        let (y, x) = simulate_dgp(spec, &mut rq, &mut ru)?;
        let data = RegressionData::new(y, x, None, spec.lambda)?;
        let hyp = BreakHypothesis::full(2);
        let r = hyp.r();
        let fit = ols_fit(&data, &hyp)?;
        let scores = fit_scores(&fit)?;
        let mut auto_k = None;
        let mut out = Vec::with_capacity(policies.len());
        for policy in policies {
            let k = match policy {
                KPolicy::Fixed(k) => *k,
                KPolicy::Auto => match auto_k {
                    Some(k) => k,
                    None => match choose_k(&r, &fit.q_hat, &fit.xz, &fit.residuals, rule) {
                        Ok(a) => {
                            auto_k = Some(a.k);
                            a.k
                        }
                        Err(_) => {
                            out.push(None);
                            continue;
                        }
                    },
                },
            };
            let k_tr = match policy {
                KPolicy::Auto => k.min(bank.k_max(BasisFamily::FourierTransformed)),
                KPolicy::Fixed(_) => k,
            };
            let raw = families
                .0
                .then(|| compute_statistics(&fit, &scores, &r, bank, BasisFamily::FourierRaw, k));
            let tr = families
                .1
                .then(|| compute_statistics(&fit, &scores, &r, bank, BasisFamily::FourierTransformed, k_tr));
            match (raw.transpose(), tr.transpose()) {
                (Ok(raw), Ok(transformed)) => out.push(Some(PolicyStats { raw, transformed })),
                _ => out.push(None),
            }
        }
        Ok(out)
    };
    Replication {
        per_policy: run().unwrap_or_else(|_| vec![None; policies.len()]),
    }
}

fn needs_families(variants: &[TestVariant]) -> (bool, bool) {
    (
        variants.iter().any(|v| v.family() == BasisFamily::FourierRaw),
        variants.iter().any(|v| v.family() == BasisFamily::FourierTransformed),
    )
}

fn max_k(policies: &[KPolicy], t: usize) -> usize {
    policies
        .iter()
        .map(|p| match p {
            KPolicy::Fixed(k) => *k,
            KPolicy::Auto => t - 2,
        })
        .max()
        .unwrap_or(2)
}

/// Runs `f` on a pool with `workers` threads, or on the global pool.
pub fn with_workers<R: Send>(workers: Option<usize>, f: impl FnOnce() -> R + Send) -> Result<R> {
    match workers {
        None => Ok(f()),
        Some(0) => Err(Error::Config("workers must be positive".into())),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
            Ok(pool.install(f))
        }
    }
}

fn check_common(reps: usize, alpha: f64, variants: &[TestVariant], policies: &[KPolicy]) -> Result<()> {
    if reps < 500 {
        return Err(Error::Config(format!("replications must be >= 500, got {reps}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("level must lie in (0, 1), got {alpha}")));
    }
    if variants.is_empty() || policies.is_empty() {
        return Err(Error::Config("no variants or K policies selected".into()));
    }
    if let Some(v) = variants.iter().find(|v| v.is_t()) {
        return Err(Error::Config(format!("variant {v} needs p = 1; the study tests p = 2")));
    }
    for p in policies {
        if let KPolicy::Fixed(k) = p {
            if *k < 2 {
                return Err(Error::KTooSmall { k: *k, p: 2 });
            }
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SizeConfig {
    pub cells: Vec<DgpSpec>,
    pub k_policies: Vec<KPolicy>,
    pub k_rule: KRule,
    pub variants: Vec<TestVariant>,
    pub reps: usize,
    pub seed: u64,
    pub alpha: f64,
    /// Simulation settings for the nonstandard reference; the seed is
    /// derived from the master seed.
    pub limit_grid: usize,
    pub limit_reps: usize,
    pub workers: Option<usize>,
}

impl SizeConfig {
    pub fn new(cells: Vec<DgpSpec>, k_policies: Vec<KPolicy>) -> Self {
        let defaults = LimitSettings::default();
        Self {
            cells,
            k_policies,
            k_rule: KRule::default(),
            variants: TestVariant::F_TESTS.to_vec(),
            reps: DEFAULT_REPS,
            seed: 0,
            alpha: 0.05,
            limit_grid: defaults.grid,
            limit_reps: defaults.reps,
            workers: None,
        }
    }

    fn limit(&self, t: usize) -> LimitSettings {
        LimitSettings {
            grid: self.limit_grid.max(t),
            reps: self.limit_reps,
            seed: derive_seed(self.seed, &[CV_TAG]),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SizeRow {
    #[serde(rename = "T")]
    pub t: usize,
    pub rho: f64,
    pub psi: f64,
    pub lambda: f64,
    pub variant: TestVariant,
    pub k_policy: KPolicy,
    pub reps: usize,
    pub successes: usize,
    pub failures: usize,
    pub rejections: usize,
    pub rejection: f64,
    pub mc_se: f64,
    /// Average K actually used.
    pub ave_k: f64,
}

/// Null rejection frequencies, one row per cell, K policy and variant.
pub fn size_experiment(cfg: &SizeConfig) -> Result<Vec<SizeRow>> {
    check_common(cfg.reps, cfg.alpha, &cfg.variants, &cfg.k_policies)?;
    if cfg.cells.is_empty() {
        return Err(Error::Config("empty cell list".into()));
    }
    for c in &cfg.cells {
        c.validate()?;
        if let Some(k) = cfg.k_policies.iter().find_map(|p| match p {
            KPolicy::Fixed(k) if *k > c.t - 2 => Some(*k),
            _ => None,
        }) {
            return Err(Error::Config(format!("K = {k} exceeds T - 2 for T = {}", c.t)));
        }
    }
    with_workers(cfg.workers, || {
        let cache = CvCache::in_memory();
        let mut rows = Vec::new();
        for cell in &cfg.cells {
            rows.extend(size_cell(cfg, cell, &cache)?);
        }
        Ok(rows)
    })?
}

fn size_cell(cfg: &SizeConfig, cell: &DgpSpec, cache: &CvCache) -> Result<Vec<SizeRow>> {
    let families = needs_families(&cfg.variants);
    let bank = BasisBank::new(cell.t, cell.lambda, max_k(&cfg.k_policies, cell.t))?;
    let reps: Vec<Replication> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| replicate(cell, cfg.seed, r, &cfg.k_policies, cfg.k_rule, families, &bank))
        .collect();

    let limit = cfg.limit(cell.t);
    let mut rows = Vec::new();
    for (pi, policy) in cfg.k_policies.iter().enumerate() {
        for &variant in &cfg.variants {
            let pick = |ps: &PolicyStats| match variant.family() {
                BasisFamily::FourierRaw => ps.raw.clone(),
                BasisFamily::FourierTransformed => ps.transformed.clone(),
            };
            let stats: Vec<Option<Statistics>> = reps
                .iter()
                .map(|r| r.per_policy[pi].as_ref().and_then(pick))
                .collect();
            if let Some(kind) = variant.limit_kind() {
                let ks: BTreeSet<usize> = stats.iter().flatten().map(|s| s.k).collect();
                if let (Some(&lo), Some(&hi)) = (ks.first(), ks.last()) {
                    cache.ensure_range(&limit.spec(2, lo, cell.lambda), lo, hi, kind)?;
                }
            }
            let (mut rejections, mut successes, mut k_sum) = (0usize, 0usize, 0usize);
            for s in stats.iter().flatten() {
                let dist = match variant.limit_kind() {
                    Some(kind) => Some(
                        cache
                            .get(&limit.spec(2, s.k, cell.lambda), kind)
                            .ok_or_else(|| Error::Config("missing simulated reference".into()))?,
                    ),
                    None => None,
                };
                let d = decide(variant, s, cfg.alpha, Alternative::TwoSided, dist.as_deref())?;
                successes += 1;
                k_sum += s.k;
                rejections += usize::from(d.reject);
            }
            let rate = if successes > 0 { rejections as f64 / successes as f64 } else { f64::NAN };
            rows.push(SizeRow {
                t: cell.t,
                rho: cell.rho,
                psi: cell.psi,
                lambda: cell.lambda,
                variant,
                k_policy: *policy,
                reps: cfg.reps,
                successes,
                failures: cfg.reps - successes,
                rejections,
                rejection: rate,
                mc_se: mc_se(rate, successes),
                ave_k: if successes > 0 { k_sum as f64 / successes as f64 } else { f64::NAN },
            });
        }
    }
    Ok(rows)
}

pub fn mc_se(rate: f64, n: usize) -> f64 {
    if n == 0 {
        f64::NAN
    } else {
        (rate * (1.0 - rate) / n as f64).sqrt()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PowerConfig {
    /// Null design; `delta` is ignored.
    pub base: DgpSpec,
    pub deltas: Vec<f64>,
    pub k: KPolicy,
    pub k_rule: KRule,
    pub variants: Vec<TestVariant>,
    pub reps: usize,
    pub seed: u64,
    pub alpha: f64,
    pub workers: Option<usize>,
}

impl PowerConfig {
    pub fn new(base: DgpSpec, deltas: Vec<f64>) -> Self {
        Self {
            base,
            deltas,
            k: KPolicy::Auto,
            k_rule: KRule::default(),
            variants: TestVariant::F_TESTS.to_vec(),
            reps: DEFAULT_REPS,
            seed: 0,
            alpha: 0.05,
            workers: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerRow {
    #[serde(rename = "T")]
    pub t: usize,
    pub rho: f64,
    pub psi: f64,
    pub delta: f64,
    pub variant: TestVariant,
    pub basis_family: BasisFamily,
    pub power: f64,
    pub mc_se: f64,
    /// Empirical `(1 - alpha)` quantile of the statistic under the null.
    pub critical_value: f64,
    pub successes: usize,
    pub failures: usize,
}

#[derive(Debug, Clone)]
pub struct PowerResult {
    pub rows: Vec<PowerRow>,
    /// `decisions[d][v][r]`: size-adjusted decision of variant `v` at
    /// `deltas[d]` in replication `r` (`None` for failed replications).
    pub decisions: Vec<Vec<Vec<Option<bool>>>>,
}

fn test_statistic(variant: TestVariant, ps: &PolicyStats) -> Option<f64> {
    match variant.family() {
        BasisFamily::FourierRaw => ps.raw.as_ref().map(|s| s.f_modified),
        BasisFamily::FourierTransformed => ps.transformed.as_ref().map(|s| s.f_scaled),
    }
}

/// Lower type-1 empirical quantile of the finite values.
fn empirical_quantile(values: &[f64], q: f64) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let idx = ((q * v.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    v[idx.min(v.len()) - 1]
}

/// Size-adjusted power: each statistic is compared with its own empirical
/// null quantile from the same design and seeds.
pub fn power_experiment(cfg: &PowerConfig) -> Result<PowerResult> {
    check_common(cfg.reps, cfg.alpha, &cfg.variants, &[cfg.k])?;
    cfg.base.validate()?;
    if cfg.deltas.is_empty() {
        return Err(Error::Config("empty delta grid".into()));
    }
    let base = cfg.base.with_delta(0.0);
    let families = needs_families(&cfg.variants);
    let bank = BasisBank::new(base.t, base.lambda, max_k(&[cfg.k], base.t))?;
    let policies = [cfg.k];
    let statistics = |spec: DgpSpec| -> Vec<Vec<Option<f64>>> {
        let reps: Vec<Replication> = (0..cfg.reps)
            .into_par_iter()
            .map(|r| replicate(&spec, cfg.seed, r, &policies, cfg.k_rule, families, &bank))
            .collect();
        cfg.variants
            .iter()
            .map(|&v| {
                reps.iter()
                    .map(|r| r.per_policy[0].as_ref().and_then(|ps| test_statistic(v, ps)))
                    .collect()
            })
            .collect()
    };
    with_workers(cfg.workers, || {
        let null = statistics(base);
        let cvs: Vec<f64> = null
            .iter()
            .map(|s| empirical_quantile(&s.iter().flatten().copied().collect::<Vec<_>>(), 1.0 - cfg.alpha))
            .collect();
        let mut rows = Vec::new();
        let mut decisions = Vec::new();
        for &delta in &cfg.deltas {
            let stats = if delta == 0.0 { null.clone() } else { statistics(base.with_delta(delta)) };
            let mut per_variant = Vec::new();
            for ((v, s), &cv) in cfg.variants.iter().zip(&stats).zip(&cvs) {
                let d: Vec<Option<bool>> = s.iter().map(|x| x.map(|x| x > cv)).collect();
                let successes = d.iter().flatten().count();
                let hits = d.iter().flatten().filter(|b| **b).count();
                let power = if successes > 0 { hits as f64 / successes as f64 } else { f64::NAN };
                rows.push(PowerRow {
                    t: base.t,
                    rho: base.rho,
                    psi: base.psi,
                    delta,
                    variant: *v,
                    basis_family: v.family(),
                    power,
                    mc_se: mc_se(power, successes),
                    critical_value: cv,
                    successes,
                    failures: cfg.reps - successes,
                });
                per_variant.push(d);
            }
            decisions.push(per_variant);
        }
        PowerResult { rows, decisions }
    })
}

/// The eight `(rho, psi)` designs of the data-driven-K size table.
pub const TABLE1_DESIGNS: [(f64, f64); 8] = [
    (0.0, 0.0),
    (0.3, 0.0),
    (0.6, 0.0),
    (0.9, 0.0),
    (-0.6, 0.0),
    (-0.3, 0.0),
    (0.6, 0.6),
    (0.9, 0.9),
];

pub fn table1_cells(t: usize) -> Vec<DgpSpec> {
    TABLE1_DESIGNS.iter().map(|&(rho, psi)| DgpSpec::new(t, rho, psi)).collect()
}

/// `start:end:step`, inclusive.
pub fn k_grid(start: usize, end: usize, step: usize) -> Result<Vec<KPolicy>> {
    if step == 0 || start > end {
        return Err(Error::Config(format!("invalid K grid {start}:{end}:{step}")));
    }
    Ok((start..=end).step_by(step).map(KPolicy::Fixed).collect())
}

/// Default grid of the per-K figures: 2 to 20 in steps of 2.
pub fn figure_k_grid() -> Vec<KPolicy> {
    k_grid(2, 20, 2).expect("static grid")
}

fn fmt_num(x: f64, decimals: usize) -> String {
    if x.is_nan() {
        String::new()
    } else {
        format!("{x:.decimals$}")
    }
}

/// Long-format size table: one row per cell, variant and K policy.
pub fn size_csv(rows: &[SizeRow]) -> String {
    let mut s = String::from("T,rho,psi,lambda,variant,k_policy,reps,successes,failures,rejections,rejection,mc_se,ave_k\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.rho,
            r.psi,
            r.lambda,
            r.variant,
            r.k_policy,
            r.reps,
            r.successes,
            r.failures,
            r.rejections,
            fmt_num(r.rejection, 6),
            fmt_num(r.mc_se, 6),
            fmt_num(r.ave_k, 4)
        );
    }
    s
}

/// Wide table with one column per `(rho, psi)` design and one row per
/// variant, plus the average K of the first variant.
pub fn table_csv(rows: &[SizeRow]) -> String {
    let mut designs: Vec<(usize, f64, f64)> = Vec::new();
    let mut variants: Vec<TestVariant> = Vec::new();
    for r in rows {
        if !designs.contains(&(r.t, r.rho, r.psi)) {
            designs.push((r.t, r.rho, r.psi));
        }
        if !variants.contains(&r.variant) {
            variants.push(r.variant);
        }
    }
    let mut ts: Vec<usize> = designs.iter().map(|d| d.0).collect();
    ts.dedup();
    let mut s = String::new();
    for t in ts {
        let cols: Vec<(f64, f64)> = designs.iter().filter(|d| d.0 == t).map(|d| (d.1, d.2)).collect();
        s.push_str("T,test");
        for (rho, psi) in &cols {
            let _ = write!(s, ",rho={rho} psi={psi}");
        }
        s.push('\n');
        let find = |v: TestVariant, rho: f64, psi: f64| {
            rows.iter().find(|r| r.t == t && r.variant == v && r.rho == rho && r.psi == psi)
        };
        for &v in &variants {
            let _ = write!(s, "{t},{v}");
            for &(rho, psi) in &cols {
                let _ = write!(s, ",{}", find(v, rho, psi).map_or(String::new(), |r| fmt_num(r.rejection, 3)));
            }
            s.push('\n');
        }
        let _ = write!(s, "{t},ave_k");
        for &(rho, psi) in &cols {
            let _ = write!(s, ",{}", find(variants[0], rho, psi).map_or(String::new(), |r| fmt_num(r.ave_k, 2)));
        }
        s.push('\n');
    }
    s
}

/// Plot-ready per-K rejection curves (fixed K policies only).
pub fn figure_csv(rows: &[SizeRow]) -> String {
    let mut s = String::from("T,rho,psi,K,variant,rejection,mc_se\n");
    for r in rows {
        if let KPolicy::Fixed(k) = r.k_policy {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                r.t,
                r.rho,
                r.psi,
                k,
                r.variant,
                fmt_num(r.rejection, 6),
                fmt_num(r.mc_se, 6)
            );
        }
    }
    s
}

/// Plot-ready size-adjusted power curves.
pub fn power_csv(rows: &[PowerRow]) -> String {
    let mut s = String::from("T,rho,psi,delta,variant,basis,power,mc_se,critical_value,successes,failures\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.rho,
            r.psi,
            r.delta,
            r.variant,
            r.basis_family.as_str(),
            fmt_num(r.power, 6),
            fmt_num(r.mc_se, 6),
            fmt_num(r.critical_value, 6),
            r.successes,
            r.failures
        );
    }
    s
}
