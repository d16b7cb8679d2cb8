//! Simulated fixed-K limiting distributions and their critical values.
//!
//! Brownian motion on `[0, 1]` is replaced by scaled partial sums of `n` iid
//! normals. For each replication
//!
//! ```text
//! eta_0 = sqrt(lambda (1 - lambda)) sum_i phi_tilde_0(r_i) e_i / sqrt(n)
//! eta_j = sum_i phi_tilde_j(r_i) e_i / sqrt(n),          j = 1..K
//! F_inf = eta_0' (K^{-1} sum_j eta_j eta_j')^{-1} eta_0 / (lambda (1 - lambda))
//! ```
//!
//! with `phi_tilde_j` computed by the finite-sample formula at `T = n`. All
//! K up to a maximum are produced from the same `eta` draws, so a single
//! simulation serves every K (and the draws for one K do not depend on the
//! maximum).

use std::collections::HashMap;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bases::{fourier_matrix, phi_tilde_matrix, phi_tilde_zero, BasisBank, BasisFamily};
use crate::error::{Error, Result};
use crate::numkit::linalg::cholesky;
use crate::numkit::rng::{derive_seed, RngStream};
use crate::numkit::Matrix;

pub const DEFAULT_GRID: usize = 1000;
pub const DEFAULT_REPS: usize = 10_000;

/// Share of singular replications tolerated before the simulation fails.
pub const MAX_SINGULAR_SHARE: f64 = 0.001;

const REDRAW_TAG: u64 = 0x5245_4452_4157; // "REDRAW"
const MAGIC: &[u8; 4] = b"HCV1";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatKind {
    /// `F_inf` of the raw Wald statistic.
    FInf,
    /// `lambda (1-lambda) K^{-1} sum_j ∫ phi_tilde_j^2 · F_inf`.
    FStarInf,
    /// Signed `t*_inf` (requires `p = 1`).
    TStarInf,
    /// `((K-p+1)/(Kp)) lambda (1-lambda) F_inf`.
    ScaledFInf,
}

impl StatKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            StatKind::FInf => "f_inf",
            StatKind::FStarInf => "f_star_inf",
            StatKind::TStarInf => "t_star_inf",
            StatKind::ScaledFInf => "scaled_f_inf",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "f_inf" | "f-inf" => Some(StatKind::FInf),
            "f_star_inf" | "f-star-inf" => Some(StatKind::FStarInf),
            "t_star_inf" | "t-star-inf" => Some(StatKind::TStarInf),
            "scaled_f_inf" | "scaled-f-inf" => Some(StatKind::ScaledFInf),
            _ => None,
        }
    }

    fn code(&self) -> u8 {
        match self {
            StatKind::FInf => 0,
            StatKind::FStarInf => 1,
            StatKind::TStarInf => 2,
            StatKind::ScaledFInf => 3,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        [StatKind::FInf, StatKind::FStarInf, StatKind::TStarInf, StatKind::ScaledFInf]
            .into_iter()
            .find(|k| k.code() == c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitSpec {
    pub p: usize,
    pub k: usize,
    pub lambda: f64,
    pub family: BasisFamily,
    pub grid: usize,
    pub reps: usize,
    pub seed: u64,
}

impl LimitSpec {
    pub fn new(p: usize, k: usize, lambda: f64, family: BasisFamily) -> Self {
        Self {
            p,
            k,
            lambda,
            family,
            grid: DEFAULT_GRID,
            reps: DEFAULT_REPS,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid < 100 {
            return Err(Error::Config(format!("grid size must be >= 100, got {}", self.grid)));
        }
        if self.reps < 1000 {
            return Err(Error::Config(format!("replications must be >= 1000, got {}", self.reps)));
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return Err(Error::Domain(format!("break fraction must lie in (0, 1), got {}", self.lambda)));
        }
        if self.p == 0 {
            return Err(Error::Config("p must be positive".into()));
        }
        if self.k < self.p {
            return Err(Error::KTooSmall { k: self.k, p: self.p });
        }
        if self.k > self.grid - 2 {
            return Err(Error::Config(format!(
                "K = {} exceeds grid size - 2 = {}",
                self.k,
                self.grid - 2
            )));
        }
        Ok(())
    }

    fn with_k(&self, k: usize) -> Self {
        Self { k, ..*self }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDistribution {
    pub spec: LimitSpec,
    pub kind: StatKind,
    /// Sorted ascending.
    pub draws: Vec<f64>,
    /// Replications redrawn because the weighting matrix was singular.
    pub redraws: usize,
}

impl SimulatedDistribution {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    fn abs_sorted(&self) -> Vec<f64> {
        let mut a: Vec<f64> = self.draws.iter().map(|v| v.abs()).collect();
        a.sort_by(f64::total_cmp);
        a
    }
}

/// Lower type-1 order statistic: `x_(ceil(q N))` of the sorted sample.
fn order_statistic(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    let idx = ((q * n as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[idx.min(n) - 1]
}

/// Empirical `(1 - alpha)` quantile.
pub fn critical_value(dist: &SimulatedDistribution, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(order_statistic(&dist.draws, 1.0 - alpha))
}

/// Empirical `(1 - alpha)` quantile of `|draw|`, for two-sided t tests.
pub fn critical_value_two_sided(dist: &SimulatedDistribution, alpha: f64) -> Result<f64> {
    check_alpha(alpha)?;
    Ok(order_statistic(&dist.abs_sorted(), 1.0 - alpha))
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!("level must lie in (0, 1), got {alpha}")))
    }
}

/// `(#{draws >= x} + 1) / (N + 1)`.
pub fn empirical_p(dist: &SimulatedDistribution, x: f64) -> f64 {
    let below = dist.draws.partition_point(|&d| d < x);
    let n = dist.draws.len();
    ((n - below) + 1) as f64 / (n + 1) as f64
}

/// `(#{draws <= x} + 1) / (N + 1)`.
pub fn empirical_p_lower(dist: &SimulatedDistribution, x: f64) -> f64 {
    let at_most = dist.draws.partition_point(|&d| d <= x);
    (at_most + 1) as f64 / (dist.draws.len() + 1) as f64
}

/// `(#{|draws| >= |x|} + 1) / (N + 1)`.
pub fn empirical_p_two_sided(dist: &SimulatedDistribution, x: f64) -> f64 {
    let a = x.abs();
    let upper = dist.draws.len() - dist.draws.partition_point(|&d| d < a);
    let lower = dist.draws.partition_point(|&d| d <= -a);
    let count = if a == 0.0 { dist.draws.len() } else { upper + lower };
    (count + 1) as f64 / (dist.draws.len() + 1) as f64
}

/// `phi_tilde` functions of the basis family on the `n`-point grid.
struct GridFunctions {
    tilde: Matrix,
    tilde0: Vec<f64>,
    /// prefix[k] = sum over the first k columns of (1/n) sum_i phi_tilde^2
    norm_prefix: Vec<f64>,
}

fn grid_functions(spec: &LimitSpec, k_max: usize) -> Result<GridFunctions> {
    let n = spec.grid;
    let phi = match spec.family {
        BasisFamily::FourierRaw => fourier_matrix(n, k_max)?.matrix,
        BasisFamily::FourierTransformed => {
            let bank = BasisBank::new(n, spec.lambda, k_max)?;
            bank.basis(BasisFamily::FourierTransformed, k_max)?.matrix
        }
    };
    let tilde = phi_tilde_matrix(&phi, spec.lambda)?;
    let mut norm_prefix = vec![0.0];
    let mut acc = 0.0;
    for j in 0..k_max {
        acc += tilde.column(j).iter().map(|v| v * v).sum::<f64>() / n as f64;
        norm_prefix.push(acc);
    }
    Ok(GridFunctions {
        tilde,
        tilde0: phi_tilde_zero(n, spec.lambda),
        norm_prefix,
    })
}

/// Raw per-replication draws: `F_inf` and, for `p = 1`, signed `t_inf`.
struct RawDraws {
    k_min: usize,
    /// f[k - k_min][rep]
    f: Vec<Vec<f64>>,
    t: Vec<Vec<f64>>,
    redraws: Vec<usize>,
    norm_prefix: Vec<f64>,
}

struct Workspace {
    e: Vec<f64>,
    eta0: Vec<f64>,
    eta: Vec<f64>,
}

fn draw_eta(g: &GridFunctions, p: usize, k: usize, lambda: f64, rng: &mut RngStream, ws: &mut Workspace) {
    let n = g.tilde.rows();
    ws.e.resize(n * p, 0.0);
    rng.fill_normals(&mut ws.e);
    ws.eta0.clear();
    ws.eta0.resize(p, 0.0);
    ws.eta.clear();
    ws.eta.resize(k * p, 0.0);
    for i in 0..n {
        let e_i = &ws.e[i * p..(i + 1) * p];
        let w0 = g.tilde0[i];
        for (acc, &e) in ws.eta0.iter_mut().zip(e_i) {
            *acc += w0 * e;
        }
        let row = &g.tilde.row(i)[..k];
        for (j, &w) in row.iter().enumerate() {
            let dst = &mut ws.eta[j * p..(j + 1) * p];
            for (acc, &e) in dst.iter_mut().zip(e_i) {
                *acc += w * e;
            }
        }
    }
    let s = 1.0 / (n as f64).sqrt();
    let s0 = (lambda * (1.0 - lambda)).sqrt() * s;
    for v in &mut ws.eta0 {
        *v *= s0;
    }
    for v in &mut ws.eta {
        *v *= s;
    }
}

/// `eta_0' W^{-1} eta_0` with `W = K^{-1} sum_{j<K} eta_j eta_j'`, from a
/// running sum of outer products. `None` when `W` is singular.
fn quad_form(sum_outer: &Matrix, k: usize, eta0: &[f64]) -> Option<f64> {
    let p = eta0.len();
    let w = sum_outer.scale(1.0 / k as f64);
    if p == 1 {
        let v = w[(0, 0)];
        return if v > 0.0 { Some(eta0[0] * eta0[0] / v) } else { None };
    }
    let u = cholesky(&w).ok()?;
    // ||U'^{-1} eta0||^2
    let mut y = vec![0.0; p];
    for i in 0..p {
        let mut acc = eta0[i];
        for (k2, yk) in y.iter().enumerate().take(i) {
            acc -= u[(k2, i)] * yk;
        }
        y[i] = acc / u[(i, i)];
    }
    Some(y.iter().map(|v| v * v).sum())
}

fn add_outer(sum: &mut Matrix, v: &[f64]) {
    let p = v.len();
    for a in 0..p {
        for b in 0..p {
            sum[(a, b)] += v[a] * v[b];
        }
    }
}

fn redraw_stream(rep: usize, k: usize, attempt: usize) -> u64 {
    derive_seed(REDRAW_TAG, &[rep as u64, k as u64, attempt as u64])
}

fn simulate_raw(spec: &LimitSpec, k_min: usize, k_max: usize) -> Result<RawDraws> {
    spec.with_k(k_max).validate()?;
    spec.with_k(k_min).validate()?;
    let g = grid_functions(spec, k_max)?;
    let p = spec.p;
    let lam = spec.lambda;
    let ll = lam * (1.0 - lam);
    let n_k = k_max - k_min + 1;

    struct RepOut {
        f: Vec<f64>,
        t: Vec<f64>,
        redrawn: Vec<usize>,
    }

    let per_rep: Vec<RepOut> = (0..spec.reps)
        .into_par_iter()
        .map_init(
            || Workspace {
                e: Vec::new(),
                eta0: Vec::new(),
                eta: Vec::new(),
            },
            |ws, rep| {
                let mut rng = RngStream::new(spec.seed, rep as u64);
                draw_eta(&g, p, k_max, lam, &mut rng, ws);
                let mut f = vec![f64::NAN; n_k];
                let mut t = if p == 1 { vec![f64::NAN; n_k] } else { Vec::new() };
                let mut redrawn = Vec::new();
                let mut sum = Matrix::zeros(p, p);
                for j in 0..k_max {
                    add_outer(&mut sum, &ws.eta[j * p..(j + 1) * p]);
                    let k = j + 1;
                    if k < k_min {
                        continue;
                    }
                    let slot = k - k_min;
                    match quad_form(&sum, k, &ws.eta0) {
                        Some(q) => {
                            f[slot] = q / ll;
                            if p == 1 {
                                t[slot] = (ws.eta0[0] / ll.sqrt()) / (sum[(0, 0)] / k as f64).sqrt();
                            }
                        }
                        None => redrawn.push(k),
                    }
                }
                // Singular K values get fresh draws from dedicated substreams.
                let mut ws2 = Workspace {
                    e: Vec::new(),
                    eta0: Vec::new(),
                    eta: Vec::new(),
                };
                for &k in &redrawn {
                    let slot = k - k_min;
                    for attempt in 0..1000 {
                        let mut r2 = RngStream::new(spec.seed, redraw_stream(rep, k, attempt));
                        draw_eta(&g, p, k, lam, &mut r2, &mut ws2);
                        let mut s2 = Matrix::zeros(p, p);
                        for j in 0..k {
                            add_outer(&mut s2, &ws2.eta[j * p..(j + 1) * p]);
                        }
                        if let Some(q) = quad_form(&s2, k, &ws2.eta0) {
                            f[slot] = q / ll;
                            if p == 1 {
                                t[slot] = (ws2.eta0[0] / ll.sqrt()) / (s2[(0, 0)] / k as f64).sqrt();
                            }
                            break;
                        }
                    }
                }
                RepOut { f, t, redrawn }
            },
        )
        .collect();

    let mut f = vec![Vec::with_capacity(spec.reps); n_k];
    let mut t = if p == 1 { vec![Vec::with_capacity(spec.reps); n_k] } else { Vec::new() };
    let mut redraws = vec![0usize; n_k];
    for r in &per_rep {
        for s in 0..n_k {
            f[s].push(r.f[s]);
            if p == 1 {
                t[s].push(r.t[s]);
            }
        }
        for &k in &r.redrawn {
            redraws[k - k_min] += 1;
        }
    }
    for (s, &count) in redraws.iter().enumerate() {
        if count as f64 > MAX_SINGULAR_SHARE * spec.reps as f64 || f[s].iter().any(|v| !v.is_finite()) {
            return Err(Error::SingularReplications {
                singular: count,
                reps: spec.reps,
            });
        }
    }
    Ok(RawDraws {
        k_min,
        f,
        t,
        redraws,
        norm_prefix: g.norm_prefix,
    })
}

fn build_distribution(
    spec: &LimitSpec,
    raw: &RawDraws,
    k: usize,
    kind: StatKind,
) -> Result<SimulatedDistribution> {
    let slot = k - raw.k_min;
    let p = spec.p;
    let ll = spec.lambda * (1.0 - spec.lambda);
    let nf = raw.norm_prefix[k] / k as f64;
    let mut draws: Vec<f64> = match kind {
        StatKind::FInf => raw.f[slot].clone(),
        StatKind::FStarInf => raw.f[slot].iter().map(|v| ll * nf * v).collect(),
        StatKind::ScaledFInf => {
            let c = (k - p + 1) as f64 / (k * p) as f64 * ll;
            raw.f[slot].iter().map(|v| c * v).collect()
        }
        StatKind::TStarInf => {
            if p != 1 {
                return Err(Error::Config("t_star_inf requires p = 1".into()));
            }
            let c = (ll * nf).sqrt();
            raw.t[slot].iter().map(|v| c * v).collect()
        }
    };
    draws.sort_by(f64::total_cmp);
    Ok(SimulatedDistribution {
        spec: spec.with_k(k),
        kind,
        draws,
        redraws: raw.redraws[slot],
    })
}

/// Simulates the limiting distribution of `kind` for `spec`.
pub fn simulate_limit(spec: &LimitSpec, kind: StatKind) -> Result<SimulatedDistribution> {
    let mut all = simulate_limit_range(spec, spec.k, spec.k, &[kind])?;
    Ok(all.remove(0))
}

/// Simulates every `K` in `k_min..=k_max` (and every requested kind) from one
/// set of draws. Output is ordered by K, then by kind.
pub fn simulate_limit_range(
    spec: &LimitSpec,
    k_min: usize,
    k_max: usize,
    kinds: &[StatKind],
) -> Result<Vec<SimulatedDistribution>> {
    if k_min > k_max {
        return Err(Error::Config(format!("empty K range {k_min}..={k_max}")));
    }
    if kinds.contains(&StatKind::TStarInf) && spec.p != 1 {
        return Err(Error::Config("t_star_inf requires p = 1".into()));
    }
    let raw = simulate_raw(spec, k_min, k_max)?;
    let mut out = Vec::with_capacity((k_max - k_min + 1) * kinds.len());
    for k in k_min..=k_max {
        for &kind in kinds {
            out.push(build_distribution(spec, &raw, k, kind)?);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CvKey {
    pub kind: StatKind,
    pub family: BasisFamily,
    pub p: usize,
    pub k: usize,
    pub lambda_micro: i64,
    pub grid: usize,
    pub reps: usize,
    pub seed: u64,
}

impl CvKey {
    pub fn new(spec: &LimitSpec, kind: StatKind) -> Self {
        Self {
            kind,
            family: spec.family,
            p: spec.p,
            k: spec.k,
            lambda_micro: (spec.lambda * 1e6).round() as i64,
            grid: spec.grid,
            reps: spec.reps,
            seed: spec.seed,
        }
    }

    pub fn file_name(&self) -> String {
        format!(
            "cv_{}_{}_p{}_k{}_l{}_n{}_r{}_s{}.bin",
            self.kind.as_str(),
            self.family.as_str(),
            self.p,
            self.k,
            self.lambda_micro,
            self.grid,
            self.reps,
            self.seed
        )
    }
}

/// In-memory critical-value store, optionally backed by a directory of
/// cache files.
#[derive(Debug, Default)]
pub struct CvCache {
    dir: Option<PathBuf>,
    map: RwLock<HashMap<CvKey, Arc<SimulatedDistribution>>>,
}

impl CvCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn with_dir(dir: impl Into<PathBuf>) -> Self {
        Self {
            dir: Some(dir.into()),
            map: RwLock::new(HashMap::new()),
        }
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn get(&self, spec: &LimitSpec, kind: StatKind) -> Option<Arc<SimulatedDistribution>> {
        let key = CvKey::new(spec, kind);
        if let Some(d) = self.map.read().expect("cache lock").get(&key) {
            return Some(Arc::clone(d));
        }
        let path = self.dir.as_ref()?.join(key.file_name());
        let dist = read_cache_file(&path).ok()?;
        if CvKey::new(&dist.spec, dist.kind) != key {
            return None;
        }
        let dist = Arc::new(dist);
        self.map.write().expect("cache lock").insert(key, Arc::clone(&dist));
        Some(dist)
    }

    fn insert(&self, dist: SimulatedDistribution) -> Result<Arc<SimulatedDistribution>> {
        let key = CvKey::new(&dist.spec, dist.kind);
        if let Some(dir) = &self.dir {
            std::fs::create_dir_all(dir)?;
            write_cache_file(&dir.join(key.file_name()), &dist)?;
        }
        let dist = Arc::new(dist);
        self.map.write().expect("cache lock").insert(key, Arc::clone(&dist));
        Ok(dist)
    }

    pub fn get_or_simulate(&self, spec: &LimitSpec, kind: StatKind) -> Result<Arc<SimulatedDistribution>> {
        if let Some(d) = self.get(spec, kind) {
            return Ok(d);
        }
        self.insert(simulate_limit(spec, kind)?)
    }

    /// Makes every `K` in `k_min..=k_max` available for `kind`, simulating
    /// the missing ones in a single pass.
    pub fn ensure_range(&self, spec: &LimitSpec, k_min: usize, k_max: usize, kind: StatKind) -> Result<()> {
        let missing = (k_min..=k_max).any(|k| self.get(&spec.with_k(k), kind).is_none());
        if !missing {
            return Ok(());
        }
        for dist in simulate_limit_range(spec, k_min, k_max, &[kind])? {
            self.insert(dist)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.map.read().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Writes the binary cache format: `HCV1`, version, spec fields, then the
/// sorted draws as little-endian `f64`.
pub fn write_cache_file(path: &Path, dist: &SimulatedDistribution) -> Result<()> {
    let mut buf = Vec::with_capacity(64 + 8 * dist.draws.len());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    buf.push(dist.kind.code());
    buf.push(dist.spec.family.code());
    buf.extend_from_slice(&(dist.spec.p as u32).to_le_bytes());
    buf.extend_from_slice(&(dist.spec.k as u32).to_le_bytes());
    buf.extend_from_slice(&dist.spec.lambda.to_le_bytes());
    buf.extend_from_slice(&(dist.spec.grid as u32).to_le_bytes());
    buf.extend_from_slice(&(dist.spec.reps as u32).to_le_bytes());
    buf.extend_from_slice(&dist.spec.seed.to_le_bytes());
    buf.extend_from_slice(&(dist.redraws as u64).to_le_bytes());
    buf.extend_from_slice(&(dist.draws.len() as u64).to_le_bytes());
    for d in &dist.draws {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&buf)?;
        f.sync_all()?;
    }
    std::fs::rename(tmp, path)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.buf.len() {
            return Err(Error::CacheFormat("truncated file".into()));
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn read_cache_file(path: &Path) -> Result<SimulatedDistribution> {
    let mut buf = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut buf)?;
    let mut c = Cursor { buf: &buf, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::CacheFormat("bad magic".into()));
    }
    let version = c.u32()?;
    if version != FORMAT_VERSION {
        return Err(Error::CacheFormat(format!("unsupported version {version}")));
    }
    let kind = StatKind::from_code(c.u8()?).ok_or_else(|| Error::CacheFormat("bad kind".into()))?;
    let family = BasisFamily::from_code(c.u8()?).ok_or_else(|| Error::CacheFormat("bad family".into()))?;
    let p = c.u32()? as usize;
    let k = c.u32()? as usize;
    let lambda = c.f64()?;
    let grid = c.u32()? as usize;
    let reps = c.u32()? as usize;
    let seed = c.u64()?;
    let redraws = c.u64()? as usize;
    let count = c.u64()? as usize;
    let mut draws = Vec::with_capacity(count);
    for _ in 0..count {
        draws.push(c.f64()?);
    }
    if c.pos != buf.len() {
        return Err(Error::CacheFormat("trailing bytes".into()));
    }
    Ok(SimulatedDistribution {
        spec: LimitSpec {
            p,
            k,
            lambda,
            family,
            grid,
            reps,
            seed,
        },
        kind,
        draws,
        redraws,
    })
}

/// CSV export: a commented header with the spec, then one draw per line.
pub fn write_csv(path: &Path, dist: &SimulatedDistribution) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    let s = &dist.spec;
    writeln!(
        f,
        "# version={FORMAT_VERSION} kind={} family={} p={} k={} lambda={} grid={} reps={} seed={} redraws={}",
        dist.kind.as_str(),
        s.family.as_str(),
        s.p,
        s.k,
        s.lambda,
        s.grid,
        s.reps,
        s.seed,
        dist.redraws
    )?;
    writeln!(f, "draw")?;
    for d in &dist.draws {
        writeln!(f, "{d}")?;
    }
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(family: BasisFamily, p: usize, k: usize) -> LimitSpec {
        LimitSpec {
            p,
            k,
            lambda: 0.4,
            family,
            grid: 200,
            reps: 2000,
            seed: 17,
        }
    }

    fn toy(draws: Vec<f64>) -> SimulatedDistribution {
        SimulatedDistribution {
            spec: small_spec(BasisFamily::FourierRaw, 1, 2),
            kind: StatKind::FInf,
            draws,
            redraws: 0,
        }
    }

    #[test]
    fn order_statistics() {
        let d = toy((1..=10).map(f64::from).collect());
        assert_eq!(critical_value(&d, 0.5).unwrap(), 5.0);
        assert_eq!(critical_value(&d, 0.1).unwrap(), 9.0);
        assert_eq!(critical_value(&d, 0.05).unwrap(), 10.0);
        assert!(critical_value(&d, 0.0).is_err());
    }

    #[test]
    fn empirical_p_conventions() {
        let d = toy((1..=10).map(f64::from).collect());
        assert_eq!(empirical_p(&d, 0.0), 1.0);
        assert_eq!(empirical_p(&d, 10.0), 2.0 / 11.0);
        assert_eq!(empirical_p(&d, 100.0), 1.0 / 11.0);
        let sym = toy(vec![-3.0, -1.0, 1.0, 2.0]);
        assert_eq!(empirical_p_two_sided(&sym, 1.5), 3.0 / 5.0);
        assert_eq!(critical_value_two_sided(&sym, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn reproducible_with_seed() {
        let spec = small_spec(BasisFamily::FourierRaw, 2, 4);
        let a = simulate_limit(&spec, StatKind::FStarInf).unwrap();
        let b = simulate_limit(&spec, StatKind::FStarInf).unwrap();
        assert_eq!(a, b);
        assert!(a.draws.iter().all(|v| v.is_finite() && *v >= 0.0));
        assert!(a.draws.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn range_matches_single_k() {
        let spec = small_spec(BasisFamily::FourierRaw, 1, 5);
        let single = simulate_limit(&spec, StatKind::TStarInf).unwrap();
        let range = simulate_limit_range(&spec, 1, 9, &[StatKind::TStarInf]).unwrap();
        assert_eq!(range[4], single);
    }

    #[test]
    fn kinds_are_scalings_of_f_inf() {
        let spec = small_spec(BasisFamily::FourierTransformed, 2, 6);
        let all = simulate_limit_range(&spec, 6, 6, &[StatKind::FInf, StatKind::ScaledFInf]).unwrap();
        let c = 5.0 / 12.0 * 0.24;
        for (a, b) in all[0].draws.iter().zip(&all[1].draws) {
            assert!((a * c - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn rejects_invalid_specs() {
        let mut s = small_spec(BasisFamily::FourierRaw, 2, 1);
        assert!(matches!(s.validate(), Err(Error::KTooSmall { .. })));
        s.k = 4;
        s.grid = 50;
        assert!(s.validate().is_err());
        s.grid = 200;
        s.reps = 10;
        assert!(s.validate().is_err());
        let t = small_spec(BasisFamily::FourierRaw, 2, 4);
        assert!(simulate_limit(&t, StatKind::TStarInf).is_err());
    }

    #[test]
    fn cache_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = small_spec(BasisFamily::FourierRaw, 2, 3);
        let dist = simulate_limit(&spec, StatKind::FStarInf).unwrap();
        let path = dir.path().join("x.bin");
        write_cache_file(&path, &dist).unwrap();
        assert_eq!(read_cache_file(&path).unwrap(), dist);
        std::fs::write(&path, b"nope").unwrap();
        assert!(matches!(read_cache_file(&path), Err(Error::CacheFormat(_))));
    }

    #[test]
    fn cache_persists_and_reloads() {
        let dir = tempfile::tempdir().unwrap();
        let spec = small_spec(BasisFamily::FourierRaw, 1, 3);
        let a = CvCache::with_dir(dir.path()).get_or_simulate(&spec, StatKind::FStarInf).unwrap();
        let fresh = CvCache::with_dir(dir.path());
        let b = fresh.get(&spec, StatKind::FStarInf).expect("loaded from disk");
        assert_eq!(*a, *b);
        let mem = CvCache::in_memory();
        mem.ensure_range(&spec, 1, 4, StatKind::FStarInf).unwrap();
        assert_eq!(mem.len(), 4);
        assert_eq!(*mem.get(&spec, StatKind::FStarInf).unwrap(), *a);
    }
}
