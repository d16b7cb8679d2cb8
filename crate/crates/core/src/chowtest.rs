//! Chow-type break tests built on the series variance estimator.
//!
//! Statistics, for `R = [𝓡, -𝓡]` and `V = R Q^{-1} Omega Q^{-1} R'`:
//!
//! ```text
//! F_T   = T (R b)' V^{-1} (R b)                 t_T   = sqrt(T) R b / sqrt(V)
//! F*_T  = lambda (1-lambda) nf F_T              t*_T  = sqrt(lambda (1-lambda) nf) t_T
//! F~*_T = ((K-p+1)/(Kp)) lambda (1-lambda) F_T  t~*_T = sqrt(lambda (1-lambda)) t_T
//! ```
//!
//! where `nf = (1/(K T)) sum_j sum_t phi_tilde_j(t/T)^2`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autok::{choose_k, to_rows, KRule, PluginSummary};
use crate::bases::{BasisBank, BasisFamily};
use crate::error::{Error, Result};
use crate::fixedlimit::{
    critical_value, critical_value_two_sided, empirical_p, empirical_p_lower, empirical_p_two_sided,
    CvCache, LimitSpec, SimulatedDistribution, StatKind, DEFAULT_GRID, DEFAULT_REPS,
};
use crate::longrun::{sandwich_variance, score_matrix, series_average};
use crate::numkit::dist::{dist_cdf, dist_quantile, dist_sf, two_sided_p, DistFamily};
use crate::numkit::linalg::spd_solve_vec;
use crate::numkit::Matrix;
use crate::regression::{ols_fit, BreakHypothesis, FitResult, RegressionData};

pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestVariant {
    /// `F*_T` against `chi2_p`.
    ChisqFourier,
    /// `F*_T` against the simulated `F*_inf`.
    NonstandardFourier,
    /// `F~*_T` against `Kp/(K-p+1) chi2_p`.
    ChisqTransformed,
    /// `F~*_T` against `F(p, K-p+1)`.
    FTransformed,
    /// `t*_T` against `N(0, 1)`.
    NormalFourier,
    /// `t*_T` against the simulated `t*_inf`.
    NonstandardTFourier,
    /// `t~*_T` against `N(0, 1)`.
    NormalTransformed,
    /// `t~*_T` against `t_K`.
    TTransformed,
}

impl TestVariant {
    pub const ALL: [TestVariant; 8] = [
        TestVariant::ChisqFourier,
        TestVariant::NonstandardFourier,
        TestVariant::ChisqTransformed,
        TestVariant::FTransformed,
        TestVariant::NormalFourier,
        TestVariant::NonstandardTFourier,
        TestVariant::NormalTransformed,
        TestVariant::TTransformed,
    ];

    /// The two pairs of Wald-type tests used in the Monte Carlo study.
    pub const F_TESTS: [TestVariant; 4] = [
        TestVariant::ChisqFourier,
        TestVariant::NonstandardFourier,
        TestVariant::ChisqTransformed,
        TestVariant::FTransformed,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TestVariant::ChisqFourier => "chisq-fourier",
            TestVariant::NonstandardFourier => "nonstandard-fourier",
            TestVariant::ChisqTransformed => "chisq-transformed",
            TestVariant::FTransformed => "f-transformed",
            TestVariant::NormalFourier => "normal-fourier",
            TestVariant::NonstandardTFourier => "nonstandard-t-fourier",
            TestVariant::NormalTransformed => "normal-transformed",
            TestVariant::TTransformed => "t-transformed",
        }
    }

    pub fn family(&self) -> BasisFamily {
        match self {
            TestVariant::ChisqFourier
            | TestVariant::NonstandardFourier
            | TestVariant::NormalFourier
            | TestVariant::NonstandardTFourier => BasisFamily::FourierRaw,
            _ => BasisFamily::FourierTransformed,
        }
    }

    pub fn is_t(&self) -> bool {
        matches!(
            self,
            TestVariant::NormalFourier
                | TestVariant::NonstandardTFourier
                | TestVariant::NormalTransformed
                | TestVariant::TTransformed
        )
    }

    pub fn is_nonstandard(&self) -> bool {
        matches!(self, TestVariant::NonstandardFourier | TestVariant::NonstandardTFourier)
    }

    /// Kind of simulated limit used as reference, if any.
    pub fn limit_kind(&self) -> Option<StatKind> {
        match self {
            TestVariant::NonstandardFourier => Some(StatKind::FStarInf),
            TestVariant::NonstandardTFourier => Some(StatKind::TStarInf),
            _ => None,
        }
    }

    /// The other test built on the same statistic.
    pub fn partner(&self) -> TestVariant {
        match self {
            TestVariant::ChisqFourier => TestVariant::NonstandardFourier,
            TestVariant::NonstandardFourier => TestVariant::ChisqFourier,
            TestVariant::ChisqTransformed => TestVariant::FTransformed,
            TestVariant::FTransformed => TestVariant::ChisqTransformed,
            TestVariant::NormalFourier => TestVariant::NonstandardTFourier,
            TestVariant::NonstandardTFourier => TestVariant::NormalFourier,
            TestVariant::NormalTransformed => TestVariant::TTransformed,
            TestVariant::TTransformed => TestVariant::NormalTransformed,
        }
    }
}

impl fmt::Display for TestVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TestVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TestVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant '{s}'")))
    }
}

/// Serialized as the command-line form: `"auto"` or the integer as a string.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum KPolicy {
    Fixed(usize),
    Auto,
}

impl From<KPolicy> for String {
    fn from(k: KPolicy) -> String {
        k.to_string()
    }
}

impl TryFrom<String> for KPolicy {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl fmt::Display for KPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KPolicy::Fixed(k) => write!(f, "{k}"),
            KPolicy::Auto => f.write_str("auto"),
        }
    }
}

impl FromStr for KPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "auto" {
            return Ok(KPolicy::Auto);
        }
        s.parse::<usize>()
            .map(KPolicy::Fixed)
            .map_err(|_| Error::Config(format!("K must be a positive integer or 'auto', got '{s}'")))
    }
}

/// Alternative for the t variants; the F variants are always upper-tailed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    #[default]
    TwoSided,
    Greater,
    Less,
}

impl FromStr for Alternative {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-sided" => Ok(Alternative::TwoSided),
            "greater" => Ok(Alternative::Greater),
            "less" => Ok(Alternative::Less),
            _ => Err(Error::Config(format!("unknown alternative '{s}'"))),
        }
    }
}

/// Simulation settings for the nonstandard references.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitSettings {
    pub grid: usize,
    pub reps: usize,
    pub seed: u64,
}

impl Default for LimitSettings {
    fn default() -> Self {
        Self {
            grid: DEFAULT_GRID,
            reps: DEFAULT_REPS,
            seed: 0,
        }
    }
}

impl LimitSettings {
    pub fn spec(&self, p: usize, k: usize, lambda: f64) -> LimitSpec {
        LimitSpec {
            p,
            k,
            lambda,
            family: BasisFamily::FourierRaw,
            grid: self.grid,
            reps: self.reps,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestOptions {
    pub variant: TestVariant,
    pub k: KPolicy,
    pub alpha: f64,
    pub alternative: Alternative,
    pub k_rule: KRule,
    pub limit: LimitSettings,
}

impl Default for TestOptions {
    fn default() -> Self {
        Self {
            variant: TestVariant::FTransformed,
            k: KPolicy::Auto,
            alpha: DEFAULT_ALPHA,
            alternative: Alternative::TwoSided,
            k_rule: KRule::default(),
            limit: LimitSettings::default(),
        }
    }
}

/// Reference distribution of the reported statistic.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "name", rename_all = "kebab-case")]
pub enum Reference {
    /// `scale * chi2_df`.
    ChiSquare { df: usize, scale: f64 },
    Normal,
    #[serde(rename = "fisher-f")]
    FisherF { df1: usize, df2: usize },
    StudentT { df: usize },
    NonstandardSimulated { kind: StatKind, spec: LimitSpec },
}

pub fn wald_stat(contrast: &[f64], v: &Matrix, t: usize) -> Result<f64> {
    if v.rows() != contrast.len() || !v.is_square() {
        return Err(Error::Dimension("wald_stat: V must be p x p".into()));
    }
    let x = spd_solve_vec(v, contrast)?;
    let q: f64 = contrast.iter().zip(&x).map(|(a, b)| a * b).sum();
    Ok(t as f64 * q.max(0.0))
}

pub fn t_stat(contrast: f64, v: f64, t: usize) -> Result<f64> {
    if !(v > 0.0) {
        return Err(Error::NotPositiveDefinite { index: 0, pivot: v });
    }
    Ok((t as f64).sqrt() * contrast / v.sqrt())
}

pub fn modified_f(f: f64, norm_factor: f64, lambda: f64) -> f64 {
    lambda * (1.0 - lambda) * norm_factor * f
}

pub fn modified_t(t: f64, norm_factor: f64, lambda: f64) -> f64 {
    (lambda * (1.0 - lambda) * norm_factor).sqrt() * t
}

/// `((K-p+1)/(Kp)) lambda (1-lambda)`.
pub fn scaling_factor(p: usize, k: usize, lambda: f64) -> Result<f64> {
    if k < p {
        return Err(Error::KTooSmall { k, p });
    }
    Ok((k - p + 1) as f64 / (k * p) as f64 * (lambda * (1.0 - lambda)))
}

pub fn scaled_f(f: f64, p: usize, k: usize, lambda: f64) -> Result<f64> {
    Ok(scaling_factor(p, k, lambda)? * f)
}

pub fn scaled_t(t: f64, lambda: f64) -> f64 {
    (lambda * (1.0 - lambda)).sqrt() * t
}

/// Every statistic for one basis family and one K.
#[derive(Debug, Clone)]
pub struct Statistics {
    pub family: BasisFamily,
    pub k: usize,
    pub p: usize,
    pub lambda: f64,
    pub norm_factor: f64,
    pub contrast: Vec<f64>,
    pub omega_hat: Matrix,
    pub sandwich: Matrix,
    pub f_raw: f64,
    pub f_modified: f64,
    pub f_scaled: f64,
    pub t_raw: Option<f64>,
    pub t_modified: Option<f64>,
    pub t_scaled: Option<f64>,
}

/// Score matrix `X_{z,t} u_t` of a fit, computed once and reused across K.
pub fn fit_scores(fit: &FitResult) -> Result<Matrix> {
    score_matrix(&fit.xz, &fit.residuals)
}

/// Statistics from a fitted regression and the first `k` columns of the
/// chosen basis family in `bank`.
pub fn compute_statistics(
    fit: &FitResult,
    scores: &Matrix,
    r: &Matrix,
    bank: &BasisBank,
    family: BasisFamily,
    k: usize,
) -> Result<Statistics> {
    let p = r.rows();
    if k < p {
        return Err(Error::KTooSmall { k, p });
    }
    if bank.t != fit.t() {
        return Err(Error::Dimension(format!("basis built for T = {}, data have T = {}", bank.t, fit.t())));
    }
    let avail = bank.k_max(family);
    if k > avail {
        return Err(match family {
            BasisFamily::FourierTransformed => Error::BasisRankDeficient {
                requested: k,
                available: avail,
            },
            BasisFamily::FourierRaw => Error::Dimension(format!("K = {k} exceeds {avail}")),
        });
    }
    let lambda = bank.lambda;
    let t = fit.t();
    let omega = series_average(bank.matrix(family), k, scores)?;
    let v = sandwich_variance(r, &fit.q_hat, &omega)?;
    let contrast = r.matvec(&fit.beta_hat);
    let f_raw = wald_stat(&contrast, &v, t)?;
    let nf = bank.norm_factor(family, k);
    let t_raw = if p == 1 {
        Some(t_stat(contrast[0], v[(0, 0)], t)?)
    } else {
        None
    };
    Ok(Statistics {
        family,
        k,
        p,
        lambda,
        norm_factor: nf,
        f_modified: modified_f(f_raw, nf, lambda),
        f_scaled: scaled_f(f_raw, p, k, lambda)?,
        t_modified: t_raw.map(|x| modified_t(x, nf, lambda)),
        t_scaled: t_raw.map(|x| scaled_t(x, lambda)),
        contrast,
        omega_hat: omega,
        sandwich: v,
        f_raw,
        t_raw,
    })
}

/// Statistic, reference and decision of one variant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decision {
    pub statistic: f64,
    pub reference: Reference,
    pub p_value: f64,
    pub critical_value: f64,
    pub reject: bool,
}

fn analytic(d: DistFamily, x: f64, alpha: f64, upper_only: bool, alt: Alternative) -> Result<(f64, f64)> {
    if upper_only {
        return Ok((dist_sf(d, x)?, dist_quantile(d, 1.0 - alpha)?));
    }
    Ok(match alt {
        Alternative::TwoSided => (two_sided_p(d, x)?, dist_quantile(d, 1.0 - alpha / 2.0)?),
        Alternative::Greater => (dist_sf(d, x)?, dist_quantile(d, 1.0 - alpha)?),
        Alternative::Less => (dist_cdf(d, x)?, dist_quantile(d, alpha)?),
    })
}

/// Applies `variant` to `stats`. Nonstandard variants need the simulated
/// distribution matching `(p, K, lambda)`.
pub fn decide(
    variant: TestVariant,
    stats: &Statistics,
    alpha: f64,
    alternative: Alternative,
    limit: Option<&SimulatedDistribution>,
) -> Result<Decision> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Domain(format!("level must lie in (0, 1), got {alpha}")));
    }
    if variant.family() != stats.family {
        return Err(Error::Config(format!(
            "variant {variant} needs {} statistics, got {}",
            variant.family().as_str(),
            stats.family.as_str()
        )));
    }
    let (p, k) = (stats.p, stats.k);
    let need_t = |x: Option<f64>| {
        x.ok_or_else(|| Error::Config(format!("variant {variant} requires a single restriction (p = 1), got p = {p}")))
    };
    let (statistic, reference, p_value, critical_value) = match variant {
        TestVariant::ChisqFourier => {
            let d = DistFamily::ChiSquare { df: p as f64 };
            let (pv, cv) = analytic(d, stats.f_modified, alpha, true, alternative)?;
            (stats.f_modified, Reference::ChiSquare { df: p, scale: 1.0 }, pv, cv)
        }
        TestVariant::ChisqTransformed => {
            let scale = (k * p) as f64 / (k - p + 1) as f64;
            let d = DistFamily::ChiSquare { df: p as f64 };
            let (pv, cv) = analytic(d, stats.f_scaled * scale, alpha, true, alternative)?;
            (stats.f_scaled, Reference::ChiSquare { df: p, scale }, pv, scale * cv)
        }
        TestVariant::FTransformed => {
            let (df1, df2) = (p, k - p + 1);
            let d = DistFamily::FisherF {
                df1: df1 as f64,
                df2: df2 as f64,
            };
            let (pv, cv) = analytic(d, stats.f_scaled, alpha, true, alternative)?;
            (stats.f_scaled, Reference::FisherF { df1, df2 }, pv, cv)
        }
        TestVariant::NormalFourier | TestVariant::NormalTransformed => {
            let x = if variant == TestVariant::NormalFourier {
                need_t(stats.t_modified)?
            } else {
                need_t(stats.t_scaled)?
            };
            let (pv, cv) = analytic(DistFamily::Normal, x, alpha, false, alternative)?;
            (x, Reference::Normal, pv, cv)
        }
        TestVariant::TTransformed => {
            let x = need_t(stats.t_scaled)?;
            let (pv, cv) = analytic(DistFamily::StudentT { df: k as f64 }, x, alpha, false, alternative)?;
            (x, Reference::StudentT { df: k }, pv, cv)
        }
        TestVariant::NonstandardFourier | TestVariant::NonstandardTFourier => {
            let kind = variant.limit_kind().expect("nonstandard variant");
            let dist = limit.ok_or_else(|| Error::Config(format!("variant {variant} needs a simulated reference")))?;
            if dist.kind != kind
                || dist.spec.p != p
                || dist.spec.k != k
                || dist.spec.family != BasisFamily::FourierRaw
                || (dist.spec.lambda - stats.lambda).abs() > 1e-6
            {
                return Err(Error::Config("simulated reference does not match (p, K, lambda)".into()));
            }
            if kind == StatKind::FStarInf {
                let x = stats.f_modified;
                (x, Reference::NonstandardSimulated { kind, spec: dist.spec }, empirical_p(dist, x), critical_value(dist, alpha)?)
            } else {
                let x = need_t(stats.t_modified)?;
                let (pv, cv) = match alternative {
                    Alternative::TwoSided => (empirical_p_two_sided(dist, x), critical_value_two_sided(dist, alpha)?),
                    Alternative::Greater => (empirical_p(dist, x), critical_value(dist, alpha)?),
                    Alternative::Less => (empirical_p_lower(dist, x), -critical_value(dist, alpha)?),
                };
                (x, Reference::NonstandardSimulated { kind, spec: dist.spec }, pv, cv)
            }
        }
    };
    Ok(Decision {
        statistic,
        reference,
        p_value: p_value.clamp(0.0, 1.0),
        critical_value,
        reject: p_value < alpha,
    })
}

/// `lambda (1-lambda) F_T` against `chi2_p`: the second form of the
/// transformed chi-square test.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AltForm {
    pub statistic: f64,
    pub p_value: f64,
    pub critical_value: f64,
    pub reject: bool,
}

pub fn chisq_transformed_alt(stats: &Statistics, alpha: f64) -> Result<AltForm> {
    let d = DistFamily::ChiSquare { df: stats.p as f64 };
    let x = stats.lambda * (1.0 - stats.lambda) * stats.f_raw;
    let p_value = dist_sf(d, x)?;
    Ok(AltForm {
        statistic: x,
        p_value,
        critical_value: dist_quantile(d, 1.0 - alpha)?,
        reject: p_value < alpha,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AutoKReport {
    pub k_hat: usize,
    pub k_star: Option<f64>,
    pub rule: KRule,
    /// Set when the choice exceeded the rank of the transformed basis and was
    /// reduced to it.
    pub rank_limited: bool,
    pub plugin: PluginSummary,
}

#[derive(Debug, Clone, Serialize)]
pub struct TestReport {
    pub variant: TestVariant,
    pub basis_family: BasisFamily,
    pub sample_size: usize,
    pub lambda: f64,
    pub break_index: usize,
    pub p: usize,
    #[serde(rename = "K")]
    pub k: usize,
    pub k_policy: KPolicy,
    pub alpha: f64,
    pub alternative: Option<Alternative>,
    /// `F_T` or `t_T`.
    pub statistic_raw: f64,
    /// `F*_T` or `t*_T`.
    pub statistic_modified: f64,
    /// `F~*_T` or `t~*_T`.
    pub statistic_scaled: f64,
    pub f_raw: f64,
    pub f_modified: f64,
    pub f_scaled: f64,
    pub norm_factor: f64,
    pub statistic: f64,
    pub reference: Reference,
    pub p_value: f64,
    pub critical_value: f64,
    pub reject: bool,
    pub alt_form: Option<AltForm>,
    pub auto_k: Option<AutoKReport>,
    pub beta_hat: Vec<f64>,
    pub contrast: Vec<f64>,
    pub sandwich: Vec<Vec<f64>>,
    pub omega_hat: Vec<Vec<f64>>,
}

/// Full pipeline: fit, choose K, build the basis, compute statistics and
/// compare with the variant's reference.
pub fn run_test(data: &RegressionData, hyp: &BreakHypothesis, opts: &TestOptions, cache: &CvCache) -> Result<TestReport> {
    let variant = opts.variant;
    let p = hyp.p();
    if variant.is_t() && p != 1 {
        return Err(Error::Config(format!("variant {variant} requires p = 1, got p = {p}")));
    }
    if !(opts.alpha > 0.0 && opts.alpha < 1.0) {
        return Err(Error::Domain(format!("level must lie in (0, 1), got {}", opts.alpha)));
    }
    let fit = ols_fit(data, hyp)?;
    let t = fit.t();
    let r = hyp.r();
    let family = variant.family();

    let (k_requested, auto) = match opts.k {
        KPolicy::Fixed(k) => {
            if k < p {
                return Err(Error::KTooSmall { k, p });
            }
            if k > t - 2 {
                return Err(Error::Config(format!("K = {k} exceeds T - 2 = {}", t - 2)));
            }
            (k, None)
        }
        KPolicy::Auto => {
            let a = choose_k(&r, &fit.q_hat, &fit.xz, &fit.residuals, opts.k_rule)?;
            (a.k, Some(a))
        }
    };
    let bank = BasisBank::new(t, data.lambda, k_requested)?;
    let avail = bank.k_max(family);
    let k = if auto.is_some() { k_requested.min(avail) } else { k_requested };
    if k < p {
        return Err(Error::BasisRankDeficient {
            requested: p,
            available: avail,
        });
    }
    let scores = fit_scores(&fit)?;
    let stats = compute_statistics(&fit, &scores, &r, &bank, family, k)?;

    let limit = match variant.limit_kind() {
        Some(kind) => Some(cache.get_or_simulate(&opts.limit.spec(p, k, data.lambda), kind)?),
        None => None,
    };
    let decision = decide(variant, &stats, opts.alpha, opts.alternative, limit.as_deref())?;
    let alt_form = match variant {
        TestVariant::ChisqTransformed => Some(chisq_transformed_alt(&stats, opts.alpha)?),
        _ => None,
    };

    let (raw, modified, scaled) = if variant.is_t() {
        (
            stats.t_raw.expect("p = 1"),
            stats.t_modified.expect("p = 1"),
            stats.t_scaled.expect("p = 1"),
        )
    } else {
        (stats.f_raw, stats.f_modified, stats.f_scaled)
    };
    let auto_k = auto.map(|a| AutoKReport {
        k_hat: a.k,
        k_star: a.k_star,
        rule: a.rule,
        rank_limited: k < a.k,
        plugin: a.model.summary(a.k_star.unwrap_or(f64::INFINITY)),
    });

    Ok(TestReport {
        variant,
        basis_family: family,
        sample_size: t,
        lambda: data.lambda,
        break_index: fit.break_index,
        p,
        k,
        k_policy: opts.k,
        alpha: opts.alpha,
        alternative: variant.is_t().then_some(opts.alternative),
        statistic_raw: raw,
        statistic_modified: modified,
        statistic_scaled: scaled,
        f_raw: stats.f_raw,
        f_modified: stats.f_modified,
        f_scaled: stats.f_scaled,
        norm_factor: stats.norm_factor,
        statistic: decision.statistic,
        reference: decision.reference,
        p_value: decision.p_value,
        critical_value: decision.critical_value,
        reject: decision.reject,
        alt_form,
        auto_k,
        beta_hat: fit.beta_hat.clone(),
        contrast: stats.contrast.clone(),
        sandwich: to_rows(&stats.sandwich),
        omega_hat: to_rows(&stats.omega_hat),
    })
}
