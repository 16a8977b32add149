//! Command-line experiment runner.
//!
//! Every subcommand reads an [`ExperimentConfig`], runs one pipeline and
//! writes CSV tables plus a JSON verdict into the output directory. Exit
//! codes: 0 when every check passes, 1 for config or validation errors, 2
//! when a numerical check breaches its tolerance or a solver fails.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use nalgebra::{Complex, DMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::ExperimentConfig;
use crate::convergence::{fiber_weight, ConvergenceLab, FiberMeasureModel, FiberMode, TestSection};
use crate::kahler::{metric_min_eigenvalue, polarization_decay_curve, OrbitPoint, ToricModel};
use crate::polytope::{DelzantPolytope, LatticePoint};
use crate::potential::check_strict_convexity;
use crate::prequantum::{
    flow_grid, flow_section, gluing_check_cp1, kostant_operator, lie_series, lift_section_consistency,
    lift_section_consistency_unscaled, log_section_norm_sq, route_residual, weight_decompose, GaugeSectionFrame,
    ThetaGridSection, WeightSection, FD_STEP,
};
use crate::quadrature::QuadratureSpec;
use crate::Error;

/// Interior margin for identity-check sample points.
const SAMPLE_MARGIN: f64 = 0.05;
/// Interior margin for polarization sample points.
const POLARIZATION_MARGIN: f64 = 0.1;
const ROUTE_TOL: f64 = 1e-12;
const HOLOMORPHIC_TOL: f64 = 1e-8;
const DUALITY_TOL: f64 = 1e-10;
const STRUCTURE_TOL: f64 = 1e-12;
const SLOPE_TOL: f64 = 0.1;
/// Residual above which a negative control counts as detected.
const CONTROL_THRESHOLD: f64 = 1e-3;

#[derive(Debug, Parser)]
#[command(name = "toric-lab", version, about = "Numerical experiments on toric Kähler models")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for quadrature.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed for sample-point selection.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Multiplies every check tolerance.
    #[arg(long, global = true, default_value_t = 1.0)]
    pub tol_scale: f64,
    /// Flips the sign of the CP¹ transition function.
    #[arg(long, global = true, hide = true)]
    pub corrupt_transition: bool,
}

#[derive(Debug, Clone, Copy, Subcommand, PartialEq, Eq)]
pub enum Command {
    /// Check the Delzant condition and strict convexity of φ.
    Validate,
    /// Tabulate g_t and ρ_t and the Legendre duality residual.
    PotentialFlow,
    /// Route equality, holomorphicity, weights, norms and gluing.
    SectionFlow,
    /// Decay of the angle between P_t and P_mix.
    Polarization,
    /// Two-chart check on CP¹.
    Gluing,
    /// Bundle-lift consistency.
    Lift,
    /// Convergence of normalised pairings to the fiber pairing.
    Converge,
    /// Merge JSON verdicts into summary.json.
    Report,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("i/o error on {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) => core_exit_code(e),
            _ => 1,
        }
    }
}

fn core_exit_code(e: &Error) -> i32 {
    match e {
        Error::NewtonFailed { .. }
        | Error::IllConditioned { .. }
        | Error::QuadratureStagnation { .. }
        | Error::QuadratureDepth { .. }
        | Error::RankDeficient { .. }
        | Error::MinimumOffCenter { .. } => 2,
        _ => 1,
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Parses `args` (program name first) and runs; returns the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    run(&cli)
}

pub fn run(cli: &Cli) -> i32 {
    let result = match cli.threads {
        Some(k) => match rayon::ThreadPoolBuilder::new().num_threads(k).build() {
            Ok(pool) => pool.install(|| dispatch(cli)),
            Err(e) => Err(CliError::Usage(e.to_string())),
        },
        None => dispatch(cli),
    };
    match result {
        Ok(true) => 0,
        Ok(false) => 2,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

struct Ctx<'a> {
    cli: &'a Cli,
    cfg: ExperimentConfig,
    out: PathBuf,
}

fn dispatch(cli: &Cli) -> CliResult<bool> {
    if cli.command == Command::Report {
        let out = cli.out.clone().unwrap_or_else(|| PathBuf::from("out"));
        return report(&out);
    }
    if !(cli.tol_scale > 0.0) {
        return Err(CliError::Usage("--tol-scale must be positive".into()));
    }
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Usage("--config is required".into()))?;
    let text = fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let cfg = ExperimentConfig::parse(&text)?;
    cfg.validate()?;
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output_dir.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out).map_err(|source| CliError::Io {
        path: out.display().to_string(),
        source,
    })?;
    let ctx = Ctx { cli, cfg, out };
    match cli.command {
        Command::Validate => validate(&ctx),
        Command::PotentialFlow => potential_flow(&ctx),
        Command::SectionFlow => section_flow(&ctx),
        Command::Polarization => polarization(&ctx),
        Command::Gluing => gluing(&ctx),
        Command::Lift => lift(&ctx),
        Command::Converge => converge(&ctx),
        Command::Report => unreachable!(),
    }
}

fn write_json(path: &Path, v: &impl Serialize) -> CliResult<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    fs::write(path, s).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write_csv(path: &Path, header: &[String], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.flush().map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })?;
    Ok(())
}

/// Deterministic interior sample points at distance > `margin` from ∂P.
pub fn sample_points(poly: &DelzantPolytope, count: usize, seed: u64, margin: f64) -> Vec<Vec<f64>> {
    let (lo, hi) = poly.bounding_box();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while out.len() < count && attempts < 1_000_000 {
        attempts += 1;
        let x: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| rng.random_range(*a..*b)).collect();
        if poly.is_interior(&x) && poly.boundary_distance(&x) > margin {
            out.push(x);
        }
    }
    out
}

fn sample_angles(n: usize, count: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    (0..count)
        .map(|_| (0..n).map(|_| rng.random_range(0.0..std::f64::consts::TAU)).collect())
        .collect()
}

#[derive(Debug, Clone, Serialize)]
struct CheckRow {
    check: String,
    lambda: String,
    t: f64,
    residual: f64,
    tolerance: f64,
    pass: bool,
}

impl CheckRow {
    fn new(check: &str, lambda: String, t: f64, residual: f64, tolerance: f64) -> Self {
        CheckRow {
            check: check.into(),
            lambda,
            t,
            residual,
            tolerance,
            pass: residual.is_finite() && residual < tolerance,
        }
    }

    /// A negative control passes when the corruption is detected.
    fn control(check: &str, lambda: String, t: f64, residual: f64) -> Self {
        CheckRow {
            check: check.into(),
            lambda,
            t,
            residual,
            tolerance: CONTROL_THRESHOLD,
            pass: residual > CONTROL_THRESHOLD,
        }
    }

    fn record(&self) -> Vec<String> {
        vec![
            self.check.clone(),
            self.lambda.clone(),
            self.t.to_string(),
            format!("{:e}", self.residual),
            format!("{:e}", self.tolerance),
            (self.pass as u8).to_string(),
        ]
    }
}

fn check_header() -> Vec<String> {
    ["check", "lambda", "t", "residual", "tolerance", "pass"]
        .iter()
        .map(|s| s.to_string())
        .collect()
}

fn write_checks(ctx: &Ctx, csv_stem: &str, stem: &str, rows: &[CheckRow]) -> CliResult<bool> {
    let recs: Vec<Vec<String>> = rows.iter().map(CheckRow::record).collect();
    write_csv(&ctx.out.join(format!("{csv_stem}.csv")), &check_header(), &recs)?;
    let pass = rows.iter().all(|r| r.pass);
    let failed: Vec<&CheckRow> = rows.iter().filter(|r| !r.pass).collect();
    let v = json!({
        "pass": pass,
        "checks": rows.len(),
        "failed": failed,
        "seed": ctx.cli.seed,
        "tol_scale": ctx.cli.tol_scale,
    });
    write_json(&ctx.out.join(format!("{stem}.json")), &v)?;
    println!("{stem}: {} of {} checks passed", rows.len() - failed.len(), rows.len());
    Ok(pass)
}

fn validate(ctx: &Ctx) -> CliResult<bool> {
    let model = ctx.cfg.model()?;
    let poly = model.polytope();
    let v = poly.validate_delzant()?;
    let grid: Vec<Vec<f64>> = poly.interior_grid(16, 0.0)?.into_iter().map(|s| s.point).collect();
    let min_eig = check_strict_convexity(&model.phi, &grid)?;
    let lattice = poly.lattice_points();
    let interior = poly.interior_lattice_points();
    write_json(
        &ctx.out.join("validate.json"),
        &json!({
            "name": poly.name(),
            "dim": poly.dim(),
            "facets": poly.facets().len(),
            "vertices": v.vertices,
            "lattice_points": lattice.iter().map(|l| l.0.clone()).collect::<Vec<_>>(),
            "interior_lattice_points": interior.iter().map(|l| l.0.clone()).collect::<Vec<_>>(),
            "phi": model.phi.descriptor(),
            "phi_min_eigenvalue": min_eig,
            "pass": true,
        }),
    )?;
    println!(
        "{}: Delzant, {} vertices, {} lattice points ({} interior), φ strictly convex (min eigenvalue {min_eig:.4})",
        poly.name(),
        v.vertices.len(),
        lattice.len(),
        interior.len()
    );
    Ok(true)
}

fn sample_count(ctx: &Ctx, default: usize) -> usize {
    ctx.cfg.flow_sample_points.unwrap_or(default)
}

fn potential_flow(ctx: &Ctx) -> CliResult<bool> {
    let model = ctx.cfg.model()?;
    let n = model.dim();
    let pts = sample_points(model.polytope(), sample_count(ctx, 200), ctx.cli.seed, SAMPLE_MARGIN);
    let times = ctx.cfg.flow_times();
    let tol = DUALITY_TOL * ctx.cli.tol_scale;
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|j| format!("x{}", j + 1)));
    header.extend(
        ["g_t", "rho_t", "rho_legendre", "residual"]
            .iter()
            .map(|s| s.to_string()),
    );
    let mut rows = Vec::new();
    let mut worst = 0.0f64;
    for &t in &times {
        let state = model.at(t)?;
        for x in &pts {
            let d = state.kahler_potential_duality(x)?;
            let g = state.flowed_potential(x)?;
            let rel = d.residual / d.formula.abs().max(1.0);
            worst = worst.max(rel);
            let mut r = vec![t.to_string()];
            r.extend(x.iter().map(|v| v.to_string()));
            r.push(g.value.to_string());
            r.push(d.formula.to_string());
            r.push(d.legendre.to_string());
            r.push(format!("{:e}", rel));
            rows.push(r);
        }
    }
    write_csv(&ctx.out.join("potential_flow.csv"), &header, &rows)?;
    let pass = worst < tol;
    write_json(
        &ctx.out.join("potential_flow.json"),
        &json!({
            "pass": pass,
            "max_residual": worst,
            "tolerance": tol,
            "samples": pts.len(),
            "t": times,
            "seed": ctx.cli.seed,
        }),
    )?;
    println!("potential-flow: max duality residual {worst:e} (tolerance {tol:e})");
    Ok(pass)
}

fn gluing_rows(ctx: &Ctx, model: &ToricModel, times: &[f64], corrupt: bool) -> CliResult<Vec<CheckRow>> {
    let poly = model.polytope();
    let tol = ctx.cfg.check_tolerance() * ctx.cli.tol_scale;
    let pts = sample_points(poly, 20, ctx.cli.seed, SAMPLE_MARGIN);
    let angles = sample_angles(1, pts.len(), ctx.cli.seed);
    let samples: Vec<(f64, f64)> = pts.iter().zip(&angles).map(|(x, a)| (x[0], a[0])).collect();
    let mut rows = Vec::new();
    for lam in poly.lattice_points() {
        for &t in times {
            let r = gluing_check_cp1(model, lam.0[0], t, &samples, corrupt)?;
            rows.push(CheckRow::new("gluing", lam.to_string(), t, r.residual, tol));
        }
    }
    Ok(rows)
}

/// Norms are reported, not checked: a quadrature that misses its tolerance
/// leaves a `NaN` row instead of aborting the run.
fn norm_row(model: &ToricModel, s: &WeightSection, spec: &QuadratureSpec) -> CliResult<Vec<String>> {
    let head = vec![s.weight.to_string(), s.time.to_string()];
    let tail = match log_section_norm_sq(model, s, spec) {
        Ok(ln) => vec![ln.exp().to_string(), ln.to_string(), "1".into()],
        Err(e @ (Error::QuadratureDepth { .. } | Error::QuadratureStagnation { .. })) => {
            eprintln!("warning: norm of weight {} at t = {}: {e}", s.weight, s.time);
            vec!["NaN".into(), "NaN".into(), "0".into()]
        }
        Err(e) => return Err(e.into()),
    };
    Ok(head.into_iter().chain(tail).collect())
}

fn section_flow(ctx: &Ctx) -> CliResult<bool> {
    let model = ctx.cfg.model()?;
    let poly = model.polytope();
    let n = model.dim();
    let weights = ctx.cfg.section_weights(poly)?;
    let times = ctx.cfg.section_times();
    let scale = ctx.cli.tol_scale;
    let check_tol = ctx.cfg.check_tolerance() * scale;
    let pts = sample_points(poly, sample_count(ctx, 50), ctx.cli.seed, SAMPLE_MARGIN);
    let angles = sample_angles(n, pts.len(), ctx.cli.seed);
    let orbit: Vec<OrbitPoint> = pts
        .iter()
        .zip(&angles)
        .map(|(x, a)| OrbitPoint::new(poly, x.clone(), a.clone()))
        .collect::<Result<_, _>>()?;
    let spec = ctx.cfg.quad_spec();
    let xi: Vec<f64> = (0..n).map(|j| 1.0 + 0.5 * j as f64).collect();
    let mut rows = Vec::new();
    let mut norms = Vec::new();
    for &t in &times {
        let frame = GaugeSectionFrame::new(&model, t)?;
        let mut worst = 0.0f64;
        for x in &pts {
            worst = worst.max(frame.holomorphicity_residual(x, FD_STEP)?);
        }
        rows.push(CheckRow::new(
            "holomorphic",
            "-".into(),
            t,
            worst,
            HOLOMORPHIC_TOL * scale,
        ));
    }
    for lam in &weights {
        let s0 = WeightSection::new(&model, lam.clone(), 0.0)?;
        norms.push(norm_row(&model, &s0, &spec)?);
        for &t in &times {
            let r = route_residual(&model, &s0, t, &pts)?;
            rows.push(CheckRow::new("route", lam.to_string(), t, r, ROUTE_TOL * scale));
            let st = flow_section(&s0, t)?;
            let k = kostant_operator(&model, &xi, &st, &orbit)?;
            rows.push(CheckRow::new("kostant", lam.to_string(), t, k.residual, check_tol));
            norms.push(norm_row(&model, &st, &spec)?);
        }
    }
    // weight decomposition of a combination of all weights, before and
    // after the flow
    let max_w = weights
        .iter()
        .flat_map(|l| l.0.iter())
        .map(|v| v.abs())
        .max()
        .unwrap_or(0) as usize;
    let points = (2 * max_w + 2).max(8);
    let xs: Vec<Vec<f64>> = pts.iter().take(4).cloned().collect();
    let terms: Vec<(Complex<f64>, WeightSection)> = weights
        .iter()
        .enumerate()
        .map(|(i, l)| {
            Ok((
                Complex::new(1.0, 0.25 * i as f64),
                WeightSection::new(&model, l.clone(), 0.0)?,
            ))
        })
        .collect::<Result<_, Error>>()?;
    let grid = ThetaGridSection::from_sections(&model, xs.clone(), points, &terms)?;
    for &t in &times {
        let flowed = flow_grid(&model, &grid, t)?;
        let comps = weight_decompose(&flowed, &weights)?;
        // errors are measured against the largest component anywhere on the
        // grid: components far below it are resolved only to its rounding
        let mut wants = Vec::with_capacity(terms.len());
        for (c, s) in &terms {
            let f = flow_section(s, t)?;
            let w: Vec<Complex<f64>> = xs
                .iter()
                .map(|x| Ok(c * (-f.amplitude_log(&model, x)?).exp()))
                .collect::<Result<_, Error>>()?;
            wants.push(w);
        }
        let size = wants.iter().flatten().map(|w| w.norm()).fold(0.0, f64::max);
        let mut worst = 0.0f64;
        for ((_, s), want) in terms.iter().zip(&wants) {
            for (i, w) in want.iter().enumerate() {
                let have = comps.get(&s.weight).map_or(Complex::new(0.0, 0.0), |v| v[i]);
                worst = worst.max((have - w).norm() / size);
            }
        }
        rows.push(CheckRow::new("equivariance", "all".into(), t, worst, ROUTE_TOL * scale));
    }
    let small_t = 0.05;
    let series = lie_series(&model, &grid, small_t, 30)?;
    let closed = flow_grid(&model, &grid, small_t)?;
    rows.push(CheckRow::new(
        "lie-series",
        "all".into(),
        small_t,
        series.relative_distance(&closed)?,
        ROUTE_TOL * scale,
    ));
    if n == 1 {
        rows.extend(gluing_rows(ctx, &model, &times, ctx.cli.corrupt_transition)?);
    }
    write_csv(
        &ctx.out.join("norms.csv"),
        &["lambda", "t", "norm_sq", "log_norm_sq", "converged"]
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>(),
        &norms,
    )?;
    write_checks(ctx, "checks", "section_flow", &rows)
}

fn polarization(ctx: &Ctx) -> CliResult<bool> {
    let model = ctx.cfg.model()?;
    let n = model.dim();
    let pts = sample_points(
        model.polytope(),
        sample_count(ctx, 20),
        ctx.cli.seed,
        POLARIZATION_MARGIN,
    );
    let times = ctx.cfg.flow_times();
    let scale = ctx.cli.tol_scale;
    let mut header = vec!["t".to_string()];
    header.extend((0..n).map(|j| format!("x{}", j + 1)));
    header.push("angle".into());
    header.push("slope_window".into());
    let mut rows = Vec::new();
    let mut slopes = Vec::new();
    let mut worst_j = 0.0f64;
    let mut min_metric = f64::INFINITY;
    let mut all_monotone = true;
    for x in &pts {
        let curve = polarization_decay_curve(&model, x, &times)?;
        for &(t, angle) in &curve.samples {
            let mut r = vec![t.to_string()];
            r.extend(x.iter().map(|v| v.to_string()));
            r.push(format!("{angle:e}"));
            r.push((curve.in_window(t) as u8).to_string());
            rows.push(r);
            let j = model.at(t)?.complex_structure(x)?;
            let sq = &j * &j + DMatrix::identity(2 * n, 2 * n);
            worst_j = worst_j.max(sq.amax());
            min_metric = min_metric.min(metric_min_eigenvalue(&j));
        }
        all_monotone &= curve.monotone;
        slopes.push(curve.slope);
    }
    write_csv(&ctx.out.join("decay.csv"), &header, &rows)?;
    let slope_ok = slopes.iter().all(|s| (s + 1.0).abs() <= SLOPE_TOL * scale);
    let pass = slope_ok && worst_j < STRUCTURE_TOL * scale && min_metric > 0.0 && all_monotone;
    let t_pos = times.iter().copied().find(|t| *t > 0.0).unwrap_or(f64::NAN);
    let window = (t_pos, times.last().copied().unwrap_or(f64::NAN));
    write_json(
        &ctx.out.join("polarization.json"),
        &json!({
            "pass": pass,
            "slopes": slopes,
            "slope_window": [window.0, window.1],
            "slope_tolerance": SLOPE_TOL * scale,
            "j_squared_residual": worst_j,
            "metric_min_eigenvalue": min_metric,
            "monotone": all_monotone,
            "samples": pts.len(),
            "seed": ctx.cli.seed,
        }),
    )?;
    let (lo, hi) = slopes
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| (a.min(*s), b.max(*s)));
    println!(
        "polarization: slopes in [{lo:.4}, {hi:.4}], |J² + I| ≤ {worst_j:e}, min metric eigenvalue {min_metric:e}"
    );
    Ok(pass)
}

fn gluing(ctx: &Ctx) -> CliResult<bool> {
    let model = ctx.cfg.model()?;
    if model.dim() != 1 {
        return Err(Error::Unsupported("gluing needs a one-dimensional model".into()).into());
    }
    let times = ctx.cfg.section_times();
    let mut rows = gluing_rows(ctx, &model, &times, ctx.cli.corrupt_transition)?;
    let control = gluing_rows(ctx, &model, &times[times.len() - 1..], true)?;
    for c in control {
        rows.push(CheckRow::control("gluing-corrupted", c.lambda, c.t, c.residual));
    }
    write_checks(ctx, "gluing", "gluing", &rows)
}

fn lift(ctx: &Ctx) -> CliResult<bool> {
    let model = ctx.cfg.model()?;
    let poly = model.polytope();
    let n = model.dim();
    let tol = ctx.cfg.check_tolerance() * ctx.cli.tol_scale;
    let pts = sample_points(poly, sample_count(ctx, 20), ctx.cli.seed, SAMPLE_MARGIN);
    let angles = sample_angles(n, pts.len(), ctx.cli.seed);
    let orbit: Vec<OrbitPoint> = pts
        .iter()
        .zip(&angles)
        .map(|(x, a)| OrbitPoint::new(poly, x.clone(), a.clone()))
        .collect::<Result<_, _>>()?;
    let times = ctx.cfg.section_times();
    let mut rows = Vec::new();
    for lam in ctx.cfg.section_weights(poly)? {
        let s0 = WeightSection::new(&model, lam.clone(), 0.0)?;
        for &t in &times {
            let r = lift_section_consistency(&model, &s0, t, &orbit)?;
            rows.push(CheckRow::new("lift", lam.to_string(), t, r, tol));
        }
        let t = *times.last().unwrap();
        let bad = lift_section_consistency_unscaled(&model, &s0, t, &orbit)?;
        rows.push(CheckRow::control("lift-unscaled", lam.to_string(), t, bad));
    }
    write_checks(ctx, "lift", "lift", &rows)
}

fn default_bumps(poly: &DelzantPolytope, lambda: &[f64]) -> crate::Result<Vec<TestSection>> {
    let r = 0.95 * poly.boundary_distance(lambda);
    Ok(vec![TestSection::new(poly, lambda.to_vec(), r, 0.5)?])
}

fn converge(ctx: &Ctx) -> CliResult<bool> {
    let model = ctx.cfg.model()?;
    let poly = model.polytope();
    let lam = ctx
        .cfg
        .experiment_lambda
        .clone()
        .ok_or_else(|| CliError::Usage("converge needs experiment.lambda".into()))?;
    let lambda = LatticePoint(lam);
    if !poly.is_interior(&lambda.to_f64()) {
        return Err(Error::NotRegular {
            lambda: lambda.to_f64(),
        }
        .into());
    }
    let bumps = if ctx.cfg.experiment_bumps.is_empty() {
        default_bumps(poly, &lambda.to_f64())?
    } else {
        ctx.cfg.bumps(poly)?
    };
    let mode = ctx.cfg.experiment_mode.unwrap_or(FiberMode::Normalized);
    let fiber = match mode {
        FiberMode::Normalized => FiberMeasureModel::normalized(),
        FiberMode::PaperForm => FiberMeasureModel::paper_form(poly, &lambda, 16)?,
    };
    let mut w_lambda = serde_json::Map::new();
    let interior = poly.interior_lattice_points();
    let ws: Vec<f64> = interior
        .iter()
        .map(|l| fiber_weight(poly, l, 16, std::f64::consts::TAU))
        .collect::<Result<_, _>>()?;
    for (l, w) in interior.iter().zip(&ws) {
        w_lambda.insert(l.to_string(), json!(w));
    }
    let w_max = ws.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w_min = ws.iter().cloned().fold(f64::INFINITY, f64::min);
    let spread = if ws.is_empty() { 0.0 } else { (w_max - w_min) / w_max };
    let lab = ConvergenceLab::new(&model, ctx.cfg.quad_spec());
    let times = ctx.cfg.experiment_times();
    let rep = lab.convergence_experiment(&lambda, &bumps, &times, &fiber)?;
    let mut rows = Vec::new();
    for (id, b) in rep.bumps.iter().enumerate() {
        for (k, t) in times.iter().enumerate() {
            rows.push(vec![
                lambda.to_string(),
                id.to_string(),
                t.to_string(),
                b.pairings[k].to_string(),
                b.fiber_value.to_string(),
                format!("{:e}", b.errors[k]),
            ]);
        }
    }
    write_csv(
        &ctx.out.join("convergence.csv"),
        &["lambda", "bump_id", "t", "pairing", "fiber_value", "abs_error"]
            .iter()
            .map(|s| s.to_string())
            .collect::<Vec<_>>(),
        &rows,
    )?;
    let pass = rep.pass && spread < 1e-6;
    write_json(
        &ctx.out.join("report.json"),
        &json!({
            "lambda": rep.lambda,
            "phi": rep.phi,
            "mode": rep.mode,
            "t_grid": rep.t_grid,
            "slope": rep.bumps.iter().map(|b| b.slope).collect::<Vec<_>>(),
            "slope_window": rep.bumps.iter().map(|b| [b.slope_window.0, b.slope_window.1]).collect::<Vec<_>>(),
            "final_error": rep.bumps.iter().map(|b| b.final_error).collect::<Vec<_>>(),
            "W_lambda": w_lambda,
            "W_lambda_spread": spread,
            "fiber_weight": rep.fiber_weight,
            "covariance_t": rep.covariance_t,
            "bumps": rep.bumps,
            "pass": pass,
            "seed": ctx.cli.seed,
        }),
    )?;
    for (id, b) in rep.bumps.iter().enumerate() {
        println!(
            "converge: λ = {lambda}, bump {id}: final error {:e}, slope {}",
            b.final_error,
            b.slope.map_or("n/a".into(), |s| format!("{s:.4}"))
        );
    }
    Ok(pass)
}

const REPORT_FILES: [(&str, &str); 7] = [
    ("validate", "validate.json"),
    ("potential-flow", "potential_flow.json"),
    ("section-flow", "section_flow.json"),
    ("polarization", "polarization.json"),
    ("gluing", "gluing.json"),
    ("lift", "lift.json"),
    ("converge", "report.json"),
];

fn report(out: &Path) -> CliResult<bool> {
    let mut summary = serde_json::Map::new();
    let mut all = true;
    println!("{:<16} verdict", "stage");
    for (name, file) in REPORT_FILES {
        let path = out.join(file);
        let Ok(text) = fs::read_to_string(&path) else {
            continue;
        };
        let v: Value = serde_json::from_str(&text)?;
        let pass = v.get("pass").and_then(Value::as_bool).unwrap_or(false);
        all &= pass;
        println!("{name:<16} {}", if pass { "PASS" } else { "FAIL" });
        summary.insert(name.into(), v);
    }
    if summary.is_empty() {
        return Err(CliError::Usage(format!("no reports found in {}", out.display())));
    }
    let n = summary.len();
    summary.insert("pass".into(), json!(all));
    write_json(&out.join("summary.json"), &Value::Object(summary))?;
    println!("{n} stage(s), overall {}", if all { "PASS" } else { "FAIL" });
    Ok(all)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sample_points_are_deterministic_and_interior() {
        let poly = DelzantPolytope::simplex(2, 1);
        let a = sample_points(&poly, 30, 7, 0.05);
        let b = sample_points(&poly, 30, 7, 0.05);
        assert_eq!(a, b);
        assert_eq!(a.len(), 30);
        assert!(a.iter().all(|x| poly.boundary_distance(x) > 0.05));
        assert_ne!(a, sample_points(&poly, 30, 8, 0.05));
    }

    #[test]
    fn exit_codes_by_error_class() {
        assert_eq!(core_exit_code(&Error::NotRegular { lambda: vec![0.0] }), 1);
        assert_eq!(
            core_exit_code(&Error::NewtonFailed {
                iterations: 3,
                residual: 1.0
            }),
            2
        );
        assert_eq!(CliError::Usage("x".into()).exit_code(), 1);
    }

    #[test]
    fn fmt_helpers() {
        let r = CheckRow::new("a", "1".into(), 0.5, 1e-13, 1e-12);
        assert_eq!(r.record()[5], "1");
        assert!(!CheckRow::control("c", "1".into(), 1.0, 1e-5).pass);
    }
}
