use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use serde_json::json;

use harchow::bases::BasisFamily;
use harchow::chowtest::{run_test, KPolicy, LimitSettings, Reference, TestOptions, TestReport};
use harchow::fixedlimit::{
    critical_value, critical_value_two_sided, simulate_limit, write_csv, CvCache, CvKey, LimitSpec, StatKind,
};
use harchow::mcstudy::{
    figure_csv, k_grid, power_csv, power_experiment, simulate_dgp, size_csv, size_experiment, table_csv, DgpSpec,
    PowerConfig, SizeConfig, FULL_REPS, TABLE1_DESIGNS,
};
use harchow::numkit::dist::{dist_quantile, DistFamily};
use harchow::regression::{BreakHypothesis, RegressionData};
use harchow::Matrix;

use crate::args::{Layout, McPowerArgs, McSizeArgs, Preset, ReportFormat, SimulateCvArgs, SimulateDataArgs, TestArgs};
use crate::data::{check_roles, Table};
use crate::CliError;

const SCHEMA: u32 = 1;
const CV_LEVELS: [f64; 3] = [0.10, 0.05, 0.01];

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn emit(output: Option<&Path>, text: &str) -> Result<(), CliError> {
    match output {
        Some(p) => std::fs::write(p, text).map_err(|e| io_err(p, e)),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())
                .and_then(|_| out.flush())
                .map_err(|e| CliError::Io(format!("stdout: {e}")))
        }
    }
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("report serializes");
    s.push('\n');
    s
}

fn envelope<C: Serialize, R: Serialize>(command: &str, config: &C, seed: u64, result: R) -> serde_json::Value {
    json!({
        "schema": SCHEMA,
        "command": command,
        "library_version": harchow::VERSION,
        "seed": seed,
        "config": config,
        "result": result,
    })
}

pub fn test(a: &TestArgs) -> Result<(), CliError> {
    check_roles(&a.y, &a.x, &a.z)?;
    if a.intercept && a.x.iter().chain(&a.z).any(|n| n == "const") {
        return Err(CliError::Usage("--intercept adds a column named 'const'; rename the data column".into()));
    }
    let table = Table::read(&a.data)?;
    let y = table.column(&a.y)?.to_vec();
    let mut x_names = a.x.clone();
    let mut x = table.matrix(&a.x)?;
    if a.intercept {
        let mut cols = vec![vec![1.0; y.len()]];
        cols.extend((0..x.cols()).map(|j| x.column(j)));
        x = Matrix::from_columns(&cols)?;
        x_names.insert(0, "const".into());
    }
    let z = if a.z.is_empty() { None } else { Some(table.matrix(&a.z)?) };
    let data = RegressionData::new(y, x, z, a.lambda)?;
    let hyp = hypothesis(&x_names, &a.test_on)?;
    let opts = TestOptions {
        variant: a.variant,
        k: a.k,
        alpha: a.alpha,
        alternative: a.alternative,
        k_rule: a.k_rule,
        limit: LimitSettings {
            grid: a.limit_grid,
            reps: a.limit_reps,
            seed: a.seed,
        },
    };
    let cache = match &a.cache_dir {
        Some(d) => CvCache::with_dir(d),
        None => CvCache::in_memory(),
    };
    let report = run_test(&data, &hyp, &opts, &cache)?;
    let text = match a.format {
        ReportFormat::Json => {
            let mut env = envelope("test", a, a.seed, &report);
            env["tested_columns"] = json!(tested_names(&x_names, &a.test_on));
            to_json(&env)
        }
        ReportFormat::Text => text_report(&report, &x_names),
    };
    emit(a.output.as_deref(), &text)
}

fn tested_names(x_names: &[String], test_on: &[String]) -> Vec<String> {
    if test_on.is_empty() {
        x_names.to_vec()
    } else {
        test_on.to_vec()
    }
}

/// Selector restrictions on the named breaking regressors.
fn hypothesis(x_names: &[String], test_on: &[String]) -> Result<BreakHypothesis, CliError> {
    let m = x_names.len();
    if test_on.is_empty() {
        return Ok(BreakHypothesis::full(m));
    }
    let mut rows = Vec::with_capacity(test_on.len());
    for name in test_on {
        let j = x_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| CliError::Usage(format!("--test-on column '{name}' is not among the breaking regressors")))?;
        let mut row = vec![0.0; m];
        row[j] = 1.0;
        if rows.contains(&row) {
            return Err(CliError::Usage(format!("--test-on lists '{name}' twice")));
        }
        rows.push(row);
    }
    Ok(BreakHypothesis::new(Matrix::from_rows(&rows))?)
}

fn describe_reference(r: &Reference) -> String {
    match r {
        Reference::ChiSquare { df, scale } if *scale == 1.0 => format!("chi2({df})"),
        Reference::ChiSquare { df, scale } => format!("{scale:.6} * chi2({df})"),
        Reference::Normal => "N(0, 1)".into(),
        Reference::FisherF { df1, df2 } => format!("F({df1}, {df2})"),
        Reference::StudentT { df } => format!("t({df})"),
        Reference::NonstandardSimulated { kind, spec } => format!(
            "simulated {} (grid {}, {} replications, seed {})",
            kind.as_str(),
            spec.grid,
            spec.reps,
            spec.seed
        ),
    }
}

fn text_report(r: &TestReport, x_names: &[String]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "test            {} ({} basis)", r.variant, r.basis_family.as_str());
    let _ = writeln!(s, "regressors      {}", x_names.join(", "));
    let _ = writeln!(s, "sample          T = {}, break after observation {} (lambda = {})", r.sample_size, r.break_index, r.lambda);
    let _ = writeln!(s, "restrictions    p = {}", r.p);
    match &r.auto_k {
        Some(a) => {
            let _ = writeln!(
                s,
                "K               {} (data-driven, {} rule{})",
                r.k,
                a.rule,
                if a.rank_limited { ", limited by basis rank" } else { "" }
            );
        }
        None => {
            let _ = writeln!(s, "K               {}", r.k);
        }
    }
    let _ = writeln!(s, "raw             {:.6}", r.statistic_raw);
    let _ = writeln!(s, "modified        {:.6}", r.statistic_modified);
    let _ = writeln!(s, "scaled          {:.6}", r.statistic_scaled);
    let _ = writeln!(s, "statistic       {:.6}", r.statistic);
    let _ = writeln!(s, "reference       {}", describe_reference(&r.reference));
    let _ = writeln!(s, "critical value  {:.6} (alpha = {})", r.critical_value, r.alpha);
    let _ = writeln!(s, "p-value         {:.6}", r.p_value);
    let _ = writeln!(s, "decision        {}", if r.reject { "reject no break" } else { "do not reject" });
    if let Some(alt) = &r.alt_form {
        let _ = writeln!(
            s,
            "chi2(p) form    {:.6}, p-value {:.6}, critical value {:.6}",
            alt.statistic, alt.p_value, alt.critical_value
        );
    }
    s
}

#[derive(Serialize)]
struct QuantileRow {
    alpha: f64,
    quantile: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    two_sided: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    reference: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rel_diff: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    compare_quantile: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    grid_diff: Option<f64>,
}

pub fn simulate_cv(a: &SimulateCvArgs) -> Result<(), CliError> {
    let family = BasisFamily::parse(&a.family)
        .ok_or_else(|| CliError::Usage(format!("unknown basis family '{}'", a.family)))?;
    let kind = match &a.kind {
        Some(k) => StatKind::parse(k).ok_or_else(|| CliError::Usage(format!("unknown limit statistic '{k}'")))?,
        None if family == BasisFamily::FourierTransformed => StatKind::ScaledFInf,
        None => StatKind::FStarInf,
    };
    let spec = LimitSpec {
        p: a.p,
        k: a.k,
        lambda: a.lambda,
        family,
        grid: a.grid,
        reps: a.reps,
        seed: a.seed,
    };
    spec.validate()?;
    let compare_spec = a.compare_grid.map(|n| LimitSpec { grid: n, ..spec });
    if let Some(c) = &compare_spec {
        c.validate()?;
    }

    let started = Instant::now();
    let cache = CvCache::with_dir(&a.cache_dir);
    let cached = cache.get(&spec, kind).is_some();
    let dist = cache.get_or_simulate(&spec, kind)?;
    let compare = compare_spec.map(|c| simulate_limit(&c, kind)).transpose()?;
    let cache_file = a.cache_dir.join(CvKey::new(&spec, kind).file_name());
    if let Some(p) = &a.csv {
        write_csv(p, &dist)?;
    }

    let reference = |alpha: f64| -> Result<Option<f64>, CliError> {
        if kind != StatKind::ScaledFInf {
            return Ok(None);
        }
        let d = DistFamily::FisherF {
            df1: spec.p as f64,
            df2: (spec.k - spec.p + 1) as f64,
        };
        Ok(Some(dist_quantile(d, 1.0 - alpha)?))
    };
    let mut rows = Vec::with_capacity(CV_LEVELS.len());
    for alpha in CV_LEVELS {
        let quantile = critical_value(&dist, alpha)?;
        let reference = reference(alpha)?;
        let compare_quantile = compare.as_ref().map(|c| critical_value(c, alpha)).transpose()?;
        rows.push(QuantileRow {
            alpha,
            quantile,
            two_sided: (kind == StatKind::TStarInf)
                .then(|| critical_value_two_sided(&dist, alpha))
                .transpose()?,
            reference,
            rel_diff: reference.map(|r| (quantile - r) / r),
            compare_quantile,
            grid_diff: compare_quantile.map(|c| quantile - c),
        });
    }

    let text = match a.format {
        ReportFormat::Json => to_json(&envelope(
            "simulate-cv",
            a,
            a.seed,
            json!({
                "kind": kind,
                "spec": spec,
                "cache_file": cache_file,
                "from_cache": cached,
                "redraws": dist.redraws,
                "quantiles": rows,
            }),
        )),
        ReportFormat::Text => {
            let mut s = String::new();
            let _ = writeln!(
                s,
                "{} on {} basis: p = {}, K = {}, lambda = {}, grid = {}, {} replications, seed {}",
                kind.as_str(),
                family.as_str(),
                spec.p,
                spec.k,
                spec.lambda,
                spec.grid,
                spec.reps,
                spec.seed
            );
            let _ = writeln!(
                s,
                "cache file: {}{}",
                cache_file.display(),
                if cached { " (reused)" } else { "" }
            );
            if dist.redraws > 0 {
                let _ = writeln!(s, "redrawn singular replications: {}", dist.redraws);
            }
            let mut header = String::from("alpha   quantile");
            if kind == StatKind::TStarInf {
                header.push_str("   |t| quantile");
            }
            if kind == StatKind::ScaledFInf {
                let _ = write!(header, "   F({},{})   rel diff", spec.p, spec.k - spec.p + 1);
            }
            if let Some(c) = &compare_spec {
                let _ = write!(header, "   grid {}   difference", c.grid);
            }
            let _ = writeln!(s, "{header}");
            for r in &rows {
                let _ = write!(s, "{:<7} {:>9.4}", r.alpha, r.quantile);
                if let Some(v) = r.two_sided {
                    let _ = write!(s, "   {v:>12.4}");
                }
                if let (Some(f), Some(d)) = (r.reference, r.rel_diff) {
                    let _ = write!(s, "   {f:>7.4}   {:>7.2}%", 100.0 * d);
                }
                if let (Some(c), Some(d)) = (r.compare_quantile, r.grid_diff) {
                    let _ = write!(s, "   {c:>9.4}   {d:>+10.4}");
                }
                s.push('\n');
            }
            s
        }
    };
    emit(None, &text)?;
    eprintln!("done in {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}

/// `auto`, `a:b:step` or a comma separated list of policies.
fn parse_k_policies(s: &str) -> Result<Vec<KPolicy>, CliError> {
    let s = s.trim();
    if s.contains(':') {
        let parts: Vec<usize> = s
            .split(':')
            .map(|p| p.trim().parse::<usize>())
            .collect::<Result<_, _>>()
            .map_err(|_| CliError::Usage(format!("invalid K range '{s}'")))?;
        let [a, b, step] = parts[..] else {
            return Err(CliError::Usage(format!("K range must be start:end:step, got '{s}'")));
        };
        return Ok(k_grid(a, b, step)?);
    }
    let out = s
        .split(',')
        .map(|p| p.trim().parse::<KPolicy>())
        .collect::<Result<Vec<_>, _>>()?;
    Ok(out)
}

/// Designs from `rho:psi` pairs or 1-based indices into the preset list.
fn parse_cells(s: &str) -> Result<Vec<(f64, f64)>, CliError> {
    let tokens: Vec<&str> = s.split(',').map(str::trim).filter(|t| !t.is_empty()).collect();
    if tokens.is_empty() {
        return Err(CliError::Usage("the cell list is empty".into()));
    }
    tokens
        .into_iter()
        .map(|t| {
            if let Some((rho, psi)) = t.split_once(':') {
                let rho = rho.trim().parse::<f64>();
                let psi = psi.trim().parse::<f64>();
                match (rho, psi) {
                    (Ok(r), Ok(p)) => Ok((r, p)),
                    _ => Err(CliError::Usage(format!("invalid cell '{t}', expected rho:psi"))),
                }
            } else {
                let i: usize = t
                    .parse()
                    .map_err(|_| CliError::Usage(format!("invalid cell '{t}', expected rho:psi or an index")))?;
                (1..=TABLE1_DESIGNS.len())
                    .contains(&i)
                    .then(|| TABLE1_DESIGNS[i - 1])
                    .ok_or_else(|| CliError::Usage(format!("cell index {i} is outside 1..={}", TABLE1_DESIGNS.len())))
            }
        })
        .collect()
}

fn sidecar(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn mc_size(a: &McSizeArgs) -> Result<(), CliError> {
    if a.t.is_empty() {
        return Err(CliError::Usage("no sample sizes given".into()));
    }
    let designs = match &a.cells {
        Some(s) => parse_cells(s)?,
        None => TABLE1_DESIGNS.to_vec(),
    };
    let k_spec = a.k.clone().unwrap_or_else(|| match a.preset {
        Preset::Table1 => "auto".into(),
        Preset::Figure => "2:20:2".into(),
    });
    let policies = parse_k_policies(&k_spec)?;
    let layout = a.layout.unwrap_or(match a.preset {
        Preset::Table1 => Layout::Wide,
        Preset::Figure => Layout::Figure,
    });
    let cells: Vec<DgpSpec> = a
        .t
        .iter()
        .flat_map(|&t| {
            designs.iter().map(move |&(rho, psi)| DgpSpec {
                lambda: a.lambda,
                ..DgpSpec::new(t, rho, psi)
            })
        })
        .collect();
    let mut cfg = SizeConfig::new(cells, policies);
    cfg.k_rule = a.k_rule;
    cfg.variants = a.variants.clone();
    cfg.reps = if a.full_reps { FULL_REPS } else { a.reps };
    cfg.seed = a.seed;
    cfg.alpha = a.alpha;
    cfg.limit_grid = a.limit_grid;
    cfg.limit_reps = a.limit_reps;
    cfg.workers = a.workers;

    let started = Instant::now();
    let rows = size_experiment(&cfg)?;
    let csv = match layout {
        Layout::Wide => table_csv(&rows),
        Layout::Long => size_csv(&rows),
        Layout::Figure => figure_csv(&rows),
    };
    emit(a.output.as_deref(), &csv)?;
    if let Some(out) = &a.output {
        let meta = envelope("mc-size", a, a.seed, json!({ "resolved": cfg, "layout": layout, "rows": rows }));
        let path = sidecar(out);
        std::fs::write(&path, to_json(&meta)).map_err(|e| io_err(&path, e))?;
    }
    eprintln!(
        "{} cells x {} K policies x {} tests, {} replications, {:.1}s",
        cfg.cells.len(),
        cfg.k_policies.len(),
        cfg.variants.len(),
        cfg.reps,
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

/// A comma separated list or an inclusive `start:end:step` range.
fn parse_deltas(s: &str) -> Result<Vec<f64>, CliError> {
    let bad = || CliError::Usage(format!("invalid break sizes '{s}'"));
    if s.contains(':') {
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad())?;
        let [a, b, step] = parts[..] else {
            return Err(bad());
        };
        if !(step > 0.0) || b < a {
            return Err(bad());
        }
        let n = ((b - a) / step + 1e-9).floor() as usize;
        // rounding keeps grid points such as 0.6 free of accumulated error
        return Ok((0..=n).map(|i| ((a + i as f64 * step) * 1e12).round() / 1e12).collect());
    }
    let v: Vec<f64> = s
        .split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| bad())?;
    if v.is_empty() {
        return Err(bad());
    }
    Ok(v)
}

pub fn mc_power(a: &McPowerArgs) -> Result<(), CliError> {
    let base = DgpSpec {
        lambda: a.lambda,
        ..DgpSpec::new(a.t, a.rho, a.psi)
    };
    let mut cfg = PowerConfig::new(base, parse_deltas(&a.deltas)?);
    cfg.k = a.k;
    cfg.k_rule = a.k_rule;
    cfg.variants = a.variants.clone();
    cfg.reps = a.reps;
    cfg.seed = a.seed;
    cfg.alpha = a.alpha;
    cfg.workers = a.workers;

    let started = Instant::now();
    let res = power_experiment(&cfg)?;
    emit(a.output.as_deref(), &power_csv(&res.rows))?;
    if let Some(out) = &a.output {
        let meta = envelope("mc-power", a, a.seed, json!({ "resolved": cfg, "rows": res.rows }));
        let path = sidecar(out);
        std::fs::write(&path, to_json(&meta)).map_err(|e| io_err(&path, e))?;
    }
    eprintln!(
        "{} break sizes x {} tests, {} replications, {:.1}s",
        cfg.deltas.len(),
        cfg.variants.len(),
        cfg.reps,
        started.elapsed().as_secs_f64()
    );
    Ok(())
}

pub fn simulate_data(a: &SimulateDataArgs) -> Result<(), CliError> {
    let spec = DgpSpec {
        delta: a.delta,
        lambda: a.lambda,
        ..DgpSpec::new(a.t, a.rho, a.psi)
    };
    let (mut rq, mut ru) = spec.streams(a.seed, 0);
    let (y, x) = simulate_dgp(&spec, &mut rq, &mut ru)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let io = |e: csv::Error| CliError::Io(e.to_string());
    w.write_record(["y", "const", "q"]).map_err(io)?;
    for (i, yi) in y.iter().enumerate() {
        w.write_record([yi.to_string(), x[(i, 0)].to_string(), x[(i, 1)].to_string()])
            .map_err(io)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
    emit(a.output.as_deref(), &String::from_utf8(bytes).expect("ascii csv"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_policy_lists() {
        assert_eq!(parse_k_policies("auto").unwrap(), vec![KPolicy::Auto]);
        assert_eq!(
            parse_k_policies("2:6:2").unwrap(),
            vec![KPolicy::Fixed(2), KPolicy::Fixed(4), KPolicy::Fixed(6)]
        );
        assert_eq!(parse_k_policies("4, auto").unwrap(), vec![KPolicy::Fixed(4), KPolicy::Auto]);
        assert!(parse_k_policies("2:6").is_err());
        assert!(parse_k_policies("x").is_err());
    }

    #[test]
    fn cell_lists() {
        assert_eq!(parse_cells("4").unwrap(), vec![(0.9, 0.0)]);
        assert_eq!(parse_cells("0.6:0.6, -0.3:0").unwrap(), vec![(0.6, 0.6), (-0.3, 0.0)]);
        assert!(parse_cells("").is_err());
        assert!(parse_cells(" , ").is_err());
        assert!(parse_cells("9").is_err());
    }

    #[test]
    fn delta_grids() {
        let d = parse_deltas("0:1.2:0.2").unwrap();
        assert_eq!(d, vec![0.0, 0.2, 0.4, 0.6, 0.8, 1.0, 1.2]);
        assert_eq!(parse_deltas("0, 0.5").unwrap(), vec![0.0, 0.5]);
        assert!(parse_deltas("1:0:0.1").is_err());
        assert!(parse_deltas("").is_err());
    }

    #[test]
    fn selector_hypothesis() {
        let names = vec!["const".to_string(), "q".to_string()];
        let h = hypothesis(&names, &["q".to_string()]).unwrap();
        assert_eq!(h.p(), 1);
        assert_eq!(hypothesis(&names, &[]).unwrap().p(), 2);
        assert!(hypothesis(&names, &["w".to_string()]).is_err());
    }
}
