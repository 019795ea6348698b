use loja_core::curve::{kinf_witness_check, SGrid, Variant};
use loja_core::kinf::{
    candidate_report_json, detect_asymptotic_values, geometric_radii, malgrange_certificate, sweep_min_product,
    write_sweep_csv, SweepOptions, SweepStatus, SweepVariant,
};
use loja_core::levelset::{project_to_levelset, AdaptiveOracle, LevelSpec, ProjectionOptions};
use loja_core::loja::{
    counterexample_sweep, fit_constants, fit_report_json, r_bound, test_inequality, write_ratio_csv,
    CertificateOptions, DistBackend, FormKind, LojaForm, Region, SampleRatio, SamplerSpec,
};
use loja_core::registry;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::config::{Common, Function, Real, RealList};
use crate::error::CliError;
use crate::output::Report;

fn require(ok: bool, msg: &str) -> Result<(), CliError> {
    if ok {
        Ok(())
    } else {
        Err(CliError::config(msg))
    }
}

fn insert(json: &mut Value, key: &str, value: impl Into<Value>) {
    if let Value::Object(m) = json {
        m.insert(key.to_string(), value.into());
    }
}

fn default_r0() -> f64 {
    10.0
}
fn default_factor() -> f64 {
    2.0
}
fn default_radii() -> usize {
    10
}
fn default_sweep_starts() -> usize {
    16
}
fn default_sweep_iters() -> usize {
    3000
}
fn default_band() -> f64 {
    0.05
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    t: Option<Real>,
    #[serde(default = "default_variant")]
    variant: SweepVariant,
    /// Restricts the sweep to `|f - t| <= window`; with variant K it also
    /// yields a Malgrange certificate with this delta.
    window: Option<f64>,
    #[serde(default = "default_r0")]
    r0: f64,
    #[serde(default = "default_factor")]
    factor: f64,
    #[serde(default = "default_radii")]
    radii: usize,
    #[serde(default = "default_sweep_starts")]
    starts: usize,
    #[serde(default = "default_sweep_iters")]
    max_iters: usize,
    #[serde(default = "default_band")]
    epsilon: f64,
    #[serde(default = "default_band")]
    cluster_tol: f64,
}

fn default_variant() -> SweepVariant {
    SweepVariant::K
}

pub fn sweep(common: &Common, cfg: SweepConfig) -> Result<Report, CliError> {
    let func = crate::config::function(common, None)?;
    let t = func.level(cfg.t);
    require(cfg.r0 > 0.0 && cfg.r0.is_finite(), "r0 must be positive")?;
    require(cfg.factor > 1.0 && cfg.factor.is_finite(), "factor must exceed 1")?;
    require(cfg.epsilon > 0.0, "epsilon must be positive")?;
    require(cfg.cluster_tol >= 0.0, "cluster_tol must be nonnegative")?;
    require(cfg.max_iters >= 1, "max_iters must be at least 1")?;
    let radii = geometric_radii(cfg.r0, cfg.factor, cfg.radii);
    let opts = SweepOptions { starts: cfg.starts, seed: common.seed, max_iters: cfg.max_iters };
    let records = sweep_min_product(&func.compiled, t, &radii, cfg.window, cfg.variant, &opts)?;
    if records.iter().all(|r| r.status == SweepStatus::Inconclusive) {
        return Err(CliError::Numerical("every radius was inconclusive".into()));
    }
    let set = detect_asymptotic_values(&records, cfg.variant, cfg.epsilon, cfg.cluster_tol);
    let candidates: Value = serde_json::from_str(&candidate_report_json(&set)?)?;
    let malgrange = match (cfg.variant, cfg.window) {
        (SweepVariant::K, Some(delta)) => Some(malgrange_certificate(t, &records, delta)),
        _ => None,
    };
    let inconclusive: Vec<f64> =
        records.iter().filter(|r| r.status == SweepStatus::Inconclusive).map(|r| r.radius).collect();
    let json = json!({
        "function_id": func.id,
        "t": t,
        "variant": cfg.variant.name(),
        "window": cfg.window,
        "seed": common.seed,
        "radii": radii,
        "epsilon": cfg.epsilon,
        "cluster_tol": cfg.cluster_tol,
        "candidates": candidates["candidates"],
        "inconclusive_radii": inconclusive,
        "malgrange": malgrange,
    });
    let mut csv = Vec::new();
    write_sweep_csv(&mut csv, &records)?;
    Ok(Report { name: "sweep", json, files: vec![("sweep.csv".into(), csv)] })
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(rename_all = "lowercase")]
enum SamplerKind {
    Annulus,
    Box,
    Curve,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(rename_all = "lowercase")]
enum BackendKind {
    Auto,
    Oracle,
    Projection,
}

fn default_form() -> FormKind {
    FormKind::Mixed
}
fn default_beta() -> Real {
    Real(1.0)
}
fn default_sampler() -> SamplerKind {
    SamplerKind::Annulus
}
fn default_r_min() -> f64 {
    1.0
}
fn default_r_max() -> f64 {
    100.0
}
fn default_count() -> usize {
    1000
}
fn default_backend() -> BackendKind {
    BackendKind::Auto
}
fn default_proj_starts() -> usize {
    ProjectionOptions::default().starts
}
fn default_proj_iters() -> usize {
    ProjectionOptions::default().max_iters
}
fn default_resolution() -> f64 {
    AdaptiveOracle::default().resolution
}

/// Keys of `fit` and `check`.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LojaConfig {
    t: Option<Real>,
    #[serde(default = "default_form")]
    form: FormKind,
    /// Defaults to `1 / r_bound(n, d)` for polynomials.
    alpha: Option<Real>,
    #[serde(default = "default_beta")]
    beta: Real,
    /// Constant under test (`check` only).
    c: Option<Real>,
    #[serde(default = "default_sampler")]
    sampler: SamplerKind,
    #[serde(default = "default_r_min")]
    r_min: f64,
    #[serde(default = "default_r_max")]
    r_max: f64,
    lo: Option<RealList>,
    hi: Option<RealList>,
    curve: Option<String>,
    curve_s_min: Option<f64>,
    s_start: Option<f64>,
    s_end: Option<f64>,
    #[serde(default = "default_count")]
    count: usize,
    #[serde(default = "default_backend")]
    backend: BackendKind,
    #[serde(default = "default_proj_starts")]
    starts: usize,
    #[serde(default = "default_proj_iters")]
    max_iters: usize,
    #[serde(default = "default_resolution")]
    resolution: f64,
}

/// `1 / r_bound(n, d)` when `f` is a polynomial of positive degree.
fn bound_alpha(func: &Function) -> Result<Option<f64>, CliError> {
    match func.expr.degree() {
        Some(d) if d >= 1 => {
            let n = u32::try_from(func.expr.arity()).map_err(|_| CliError::config("arity too large"))?;
            Ok(Some(1.0 / r_bound(n, d)? as f64))
        }
        _ => Ok(None),
    }
}

fn form(func: &Function, kind: FormKind, alpha: Option<Real>, beta: Real) -> Result<LojaForm, CliError> {
    let alpha = match alpha {
        Some(a) => a.0,
        None => bound_alpha(func)?
            .ok_or_else(|| CliError::config("alpha is required when the function is not a polynomial"))?,
    };
    Ok(LojaForm::new(kind, alpha, beta.0)?)
}

fn projection_options(starts: usize, max_iters: usize, seed: u64) -> Result<ProjectionOptions, CliError> {
    require(starts >= 1, "starts must be at least 1")?;
    require(max_iters >= 1, "max_iters must be at least 1")?;
    Ok(ProjectionOptions { starts, max_iters, seed })
}

fn oracle_options(resolution: f64) -> Result<AdaptiveOracle, CliError> {
    require(resolution > 0.0 && resolution.is_finite(), "resolution must be positive")?;
    Ok(AdaptiveOracle { resolution, ..AdaptiveOracle::default() })
}

struct LojaSetup {
    t: f64,
    form: LojaForm,
    sampler: SamplerSpec,
    backend: DistBackend,
}

fn loja_setup(func: &Function, common: &Common, cfg: &LojaConfig, for_test: bool) -> Result<LojaSetup, CliError> {
    let arity = func.expr.arity();
    let region = match cfg.sampler {
        SamplerKind::Annulus => Region::Annulus { r_min: cfg.r_min, r_max: cfg.r_max },
        SamplerKind::Box => {
            let (Some(lo), Some(hi)) = (&cfg.lo, &cfg.hi) else {
                return Err(CliError::config("box sampler needs lo and hi"));
            };
            Region::Box { lo: lo.0.clone(), hi: hi.0.clone() }
        }
        SamplerKind::Curve => {
            let (curve, s_max) = func.curve(cfg.curve.as_deref(), cfg.curve_s_min)?;
            let s_min = cfg.s_start.unwrap_or(curve.s_min());
            Region::Curve { s_min, s_max: cfg.s_end.unwrap_or(s_max), curve }
        }
    };
    let backend = match cfg.backend {
        BackendKind::Oracle => DistBackend::Oracle(oracle_options(cfg.resolution)?),
        BackendKind::Projection => {
            DistBackend::Projection(projection_options(cfg.starts, cfg.max_iters, common.seed)?)
        }
        BackendKind::Auto => {
            let default =
                if for_test { DistBackend::default_for_test(arity) } else { DistBackend::default_for_fit(arity) };
            match default {
                DistBackend::Oracle(_) => DistBackend::Oracle(oracle_options(cfg.resolution)?),
                DistBackend::Projection(_) => {
                    DistBackend::Projection(projection_options(cfg.starts, cfg.max_iters, common.seed)?)
                }
            }
        }
    };
    Ok(LojaSetup {
        t: func.level(cfg.t),
        form: form(func, cfg.form, cfg.alpha, cfg.beta)?,
        sampler: SamplerSpec { region, count: cfg.count, seed: common.seed },
        backend,
    })
}

fn samples_csv(samples: &[SampleRatio], arity: usize) -> Result<Vec<u8>, CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = ["index", "lhs", "dist", "ratio"].map(String::from).to_vec();
    header.extend((1..=arity).map(|i| format!("x{i}")));
    w.write_record(&header)?;
    for s in samples {
        let mut row = vec![s.index.to_string(), s.lhs.to_string(), s.dist.to_string(), s.ratio.to_string()];
        row.extend(s.point.coords().iter().map(|c| c.to_string()));
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| CliError::Output(e.to_string()))
}

pub fn fit(common: &Common, cfg: LojaConfig) -> Result<Report, CliError> {
    let func = crate::config::function(common, None)?;
    require(cfg.c.is_none(), "c applies to check only")?;
    let s = loja_setup(&func, common, &cfg, false)?;
    let fit = fit_constants(&func.compiled, s.t, &s.form, &s.sampler, &s.backend)?;
    let mut json: Value = serde_json::from_str(&fit_report_json(&func.id, &fit)?)?;
    insert(&mut json, "excluded_near_fiber", fit.excluded_near_fiber);
    insert(&mut json, "inconclusive", fit.inconclusive);
    let csv = samples_csv(&fit.samples, func.expr.arity())?;
    Ok(Report { name: "fit", json, files: vec![("fit_samples.csv".into(), csv)] })
}

pub fn check(common: &Common, cfg: LojaConfig) -> Result<Report, CliError> {
    let func = crate::config::function(common, None)?;
    let c = cfg.c.ok_or_else(|| CliError::config("check needs the constant c"))?.0;
    let s = loja_setup(&func, common, &cfg, true)?;
    let violations = test_inequality(&func.compiled, s.t, &s.form, c, &s.sampler, &s.backend)?;
    let json = json!({
        "function_id": func.id,
        "t": s.t,
        "form": s.form,
        "c": c,
        "seed": common.seed,
        "samples": s.sampler.count,
        "dist_source": s.backend.source(),
        "pass": violations.is_empty(),
        "violations": violations,
    });
    let csv = samples_csv(&violations, func.expr.arity())?;
    Ok(Report { name: "check", json, files: vec![("violations.csv".into(), csv)] })
}

fn default_witness_variant() -> Variant {
    Variant::K
}
fn default_points() -> usize {
    25
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WitnessConfig {
    t: Option<Real>,
    curve: Option<String>,
    curve_s_min: Option<f64>,
    #[serde(default = "default_witness_variant")]
    variant: Variant,
    #[serde(default = "default_band")]
    epsilon: f64,
    s_start: Option<f64>,
    s_end: Option<f64>,
    #[serde(default = "default_points")]
    points: usize,
}

fn grid(start: Option<f64>, end: Option<f64>, default_end: f64, points: usize, s_min: f64) -> Result<SGrid, CliError> {
    let start = start.unwrap_or(10f64.max(s_min));
    let end = end.unwrap_or(default_end);
    require(start >= s_min, "s_start lies before the curve's s_min")?;
    require(end > start && end.is_finite(), "s_end must exceed s_start")?;
    Ok(SGrid::new(start, end, points))
}

pub fn witness(common: &Common, cfg: WitnessConfig) -> Result<Report, CliError> {
    let func = crate::config::function(common, None)?;
    let t = func.level(cfg.t);
    require(cfg.epsilon > 0.0, "epsilon must be positive")?;
    let (curve, _) = func.curve(cfg.curve.as_deref(), cfg.curve_s_min)?;
    let grid = grid(cfg.s_start, cfg.s_end, 1e4, cfg.points, curve.s_min())?;
    let report = kinf_witness_check(&func.compiled, &curve, &grid, t, cfg.variant, cfg.epsilon)?;
    let mut json = serde_json::to_value(&report)?;
    insert(&mut json, "function_id", func.id.clone());
    insert(&mut json, "curve", curve.component_strings());
    insert(&mut json, "grid", serde_json::to_value(grid)?);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["s", "norm", "f_value", "monitored"])?;
    for s in &report.samples {
        w.write_record([s.s, s.norm, s.f_value, s.monitored].map(|v| v.to_string()))?;
    }
    let csv = w.into_inner().map_err(|e| CliError::Output(e.to_string()))?;
    Ok(Report { name: "witness", json, files: vec![("witness.csv".into(), csv)] })
}

fn default_alpha() -> Real {
    Real(1.0)
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CertifyConfig {
    t: Option<Real>,
    #[serde(default = "default_form")]
    form: FormKind,
    #[serde(default = "default_alpha")]
    alpha: Real,
    /// Replaces `alpha` by `{0.05, 0.1, .., 1}` plus `1 / r_bound(n, d)` for
    /// polynomials.
    #[serde(default)]
    alpha_grid: bool,
    #[serde(default = "default_beta")]
    beta: Real,
    curve: Option<String>,
    curve_s_min: Option<f64>,
    s_start: Option<f64>,
    s_end: Option<f64>,
    #[serde(default = "default_points")]
    points: usize,
    #[serde(default = "default_proj_starts")]
    starts: usize,
    #[serde(default = "default_proj_iters")]
    max_iters: usize,
    #[serde(default = "default_resolution")]
    resolution: f64,
    #[serde(default = "default_true")]
    cross_check: bool,
    f_tol: Option<f64>,
}

pub fn certify(common: &Common, cfg: CertifyConfig) -> Result<Report, CliError> {
    let func = crate::config::function(common, None)?;
    let t = func.level(cfg.t);
    let (curve, s_max) = func.curve(cfg.curve.as_deref(), cfg.curve_s_min)?;
    let grid = grid(cfg.s_start, cfg.s_end, s_max, cfg.points, curve.s_min())?;
    if let Some(tol) = cfg.f_tol {
        require(tol > 0.0, "f_tol must be positive")?;
    }
    let forms: Vec<LojaForm> = if cfg.alpha_grid {
        let mut alphas: Vec<f64> = (1..=20).map(|k| 0.05 * k as f64).collect();
        if let Some(a) = bound_alpha(&func)? {
            if !alphas.iter().any(|b| (a - b).abs() < 1e-12) {
                alphas.push(a);
            }
        }
        alphas.sort_by(f64::total_cmp);
        alphas.into_iter().map(|a| LojaForm::new(cfg.form, a, cfg.beta.0)).collect::<Result<_, _>>()?
    } else {
        vec![LojaForm::new(cfg.form, cfg.alpha.0, cfg.beta.0)?]
    };
    let opts = CertificateOptions {
        grid,
        projection: projection_options(cfg.starts, cfg.max_iters, common.seed)?,
        oracle: oracle_options(cfg.resolution)?,
        cross_check: cfg.cross_check,
        f_tol: cfg.f_tol,
    };
    let certs = counterexample_sweep(&func.compiled, t, &forms, &curve, &opts)?;
    let mut files = Vec::with_capacity(certs.len());
    for (k, cert) in certs.iter().enumerate() {
        let mut csv = Vec::new();
        write_ratio_csv(&mut csv, cert)?;
        let name = if certs.len() == 1 { "ratios.csv".to_string() } else { format!("ratios_{k:02}.csv") };
        files.push((name, csv));
    }
    let json = json!({
        "function_id": func.id,
        "t": t,
        "curve": curve.component_strings(),
        "seed": common.seed,
        "certificates": certs,
    });
    Ok(Report { name: "certify", json, files })
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProjectConfig {
    t: Option<Real>,
    point: Option<RealList>,
    #[serde(default = "default_proj_starts")]
    starts: usize,
    #[serde(default = "default_proj_iters")]
    max_iters: usize,
    f_tol: Option<f64>,
}

pub fn project(common: &Common, cfg: ProjectConfig) -> Result<Report, CliError> {
    let point = cfg.point.ok_or_else(|| CliError::config("project needs a point"))?.0;
    let func = crate::config::function(common, Some(point.len()))?;
    require(
        point.len() == func.expr.arity(),
        &format!("point has {} coordinates, function has arity {}", point.len(), func.expr.arity()),
    )?;
    let t = func.level(cfg.t);
    let level = LevelSpec::new(&func.compiled, t, cfg.f_tol.unwrap_or(LevelSpec::DEFAULT_F_TOL))?;
    let opts = projection_options(cfg.starts, cfg.max_iters, common.seed)?;
    let result = project_to_levelset(&level, &point, &opts)?;
    if !(result.feasible || result.empty_fiber_presumed) {
        return Err(CliError::Numerical("projection found no feasible point".into()));
    }
    let mut json = serde_json::to_value(&result)?;
    insert(&mut json, "function_id", func.id);
    insert(&mut json, "t", t);
    insert(&mut json, "x", point);
    insert(&mut json, "f_tol", level.f_tol);
    Ok(Report { name: "project", json, files: Vec::new() })
}

/// `examples` takes no keys of its own.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExamplesConfig {}

pub fn examples(common: &Common, _cfg: ExamplesConfig) -> Result<Report, CliError> {
    require(common.expr.is_none(), "examples lists the registry; --expr does not apply")?;
    let list: Vec<_> = registry::examples().iter().filter(|e| common.example.as_deref().is_none_or(|id| e.id == id)).collect();
    if let Some(id) = &common.example {
        require(!list.is_empty(), &format!("unknown example `{id}`"))?;
    }
    Ok(Report { name: "examples", json: json!({ "examples": list }), files: Vec::new() })
}
