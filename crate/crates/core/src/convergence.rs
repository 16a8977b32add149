//! Normalised flowed sections and their collapse onto a moment fiber.
//!
//! For a weight-λ section the flowed density on `P` is proportional to
//! `e^{-t f_λ(x)}`. Normalising by `C_t` turns it into a probability density
//! converging to `δ(x - λ)`, so the pairing with a test section of profile
//! `H` tends to `H(λ)` with an `O(1/t)` error.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use serde::Serialize;

use crate::fit::loglog_slope;
use crate::kahler::{dot, ToricModel};
use crate::polytope::{DelzantPolytope, LatticePoint};
use crate::potential::{f_lambda_unchecked, min_eigenvalue, SmoothConvex};
use crate::prequantum::WeightSection;
use crate::quadrature::{integrate_vector, midpoint_fixed, QuadratureSpec};
use crate::{Error, Result};

/// Errors below this are treated as quadrature noise in monotonicity checks.
pub const NOISE_FLOOR: f64 = 1e-9;
/// Accepted deviation of the fitted log-log slope from -1.
pub const SLOPE_WINDOW: f64 = 0.15;
/// Final error accepted for a bump whose support contains λ.
pub const FINAL_ERROR_TOL: f64 = 1e-2;
/// Final error accepted for a bump supported away from λ.
pub const SEPARATED_TOL: f64 = 1e-6;

/// Profile `H(x) = h (1 - |x-c|²/R²)³` on the ball `|x - c| < R`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestSection {
    pub center: Vec<f64>,
    pub radius: f64,
    pub height: f64,
}

impl TestSection {
    pub fn new(poly: &DelzantPolytope, center: Vec<f64>, radius: f64, height: f64) -> Result<Self> {
        Error::check_dim(poly.dim(), center.len())?;
        if !(radius > 0.0) || !height.is_finite() {
            return Err(Error::BumpSupport(format!(
                "radius {radius} and height {height} must be positive and finite"
            )));
        }
        if !poly.is_interior(&center) || poly.boundary_distance(&center) <= radius {
            return Err(Error::BumpSupport(format!(
                "ball of radius {radius} about {center:?} meets the boundary"
            )));
        }
        Ok(TestSection { center, radius, height })
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let r2: f64 = x.iter().zip(&self.center).map(|(a, b)| (a - b) * (a - b)).sum();
        let u = r2 / (self.radius * self.radius);
        if u >= 1.0 {
            0.0
        } else {
            self.height * (1.0 - u).powi(3)
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        self.value(x) != 0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum FiberMode {
    Normalized,
    PaperForm,
}

impl std::str::FromStr for FiberMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normalized" => Ok(FiberMode::Normalized),
            "paper-form" => Ok(FiberMode::PaperForm),
            other => Err(Error::InvalidArgument(format!("unknown fiber mode `{other}`"))),
        }
    }
}

impl std::fmt::Display for FiberMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FiberMode::Normalized => "normalized",
            FiberMode::PaperForm => "paper-form",
        })
    }
}

/// Fiber measure together with its measured total weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FiberMeasureModel {
    pub mode: FiberMode,
    pub weight: f64,
}

impl FiberMeasureModel {
    pub fn normalized() -> Self {
        FiberMeasureModel {
            mode: FiberMode::Normalized,
            weight: 1.0,
        }
    }

    /// Paper-form model at the fiber over λ, with the weight measured on a
    /// θ-grid of `points` nodes per circle.
    pub fn paper_form(poly: &DelzantPolytope, lambda: &LatticePoint, points: usize) -> Result<Self> {
        Ok(FiberMeasureModel {
            mode: FiberMode::PaperForm,
            weight: fiber_weight(poly, lambda, points, TAU)?,
        })
    }
}

fn require_regular(poly: &DelzantPolytope, lambda: &LatticePoint) -> Result<()> {
    Error::check_dim(poly.dim(), lambda.dim())?;
    if poly.is_interior(&lambda.to_f64()) {
        Ok(())
    } else {
        Err(Error::NotRegular {
            lambda: lambda.to_f64(),
        })
    }
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Total mass of `(m-n)!/m! π^*vol_λ ∧ α^n` over the fiber above λ, for full
/// rank `m = n`. The reduced space is a point, `α = (dθ_1, …, dθ_n)` and
/// `α^n = n! dθ_1∧…∧dθ_n`; the torus integral is a θ-grid sum.
pub fn fiber_weight(poly: &DelzantPolytope, lambda: &LatticePoint, points: usize, circle: f64) -> Result<f64> {
    require_regular(poly, lambda)?;
    if points == 0 {
        return Err(Error::InvalidArgument("θ-grid needs at least one point".into()));
    }
    let n = poly.dim();
    let alpha = DMatrix::<f64>::identity(n, n);
    let density = factorial(n) * alpha.determinant() / factorial(n);
    let cells = points.pow(n as u32);
    let cell = (circle / points as f64).powi(n as i32);
    Ok((0..cells).map(|_| density * cell).sum())
}

/// `δ_{s_0}(τ)`: `H(λ)` times the fiber weight of the chosen model.
pub fn fiber_pairing_delta(
    poly: &DelzantPolytope,
    tau: &TestSection,
    lambda: &LatticePoint,
    fiber: &FiberMeasureModel,
) -> Result<f64> {
    require_regular(poly, lambda)?;
    Ok(tau.value(&lambda.to_f64()) * fiber.weight)
}

/// `C_t` stored through `log C_t^{-1}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormalizationConstant {
    pub lambda: Vec<f64>,
    pub t: f64,
    pub log_inverse: f64,
}

impl NormalizationConstant {
    pub fn value(&self) -> f64 {
        (-self.log_inverse).exp()
    }

    pub fn inverse(&self) -> f64 {
        self.log_inverse.exp()
    }
}

/// Moments of the normalised density.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConcentrationStats {
    pub t: f64,
    pub mass: f64,
    pub mean: Vec<f64>,
    pub covariance: Vec<Vec<f64>>,
    pub radius: f64,
    pub mass_within: f64,
}

/// Per-bump part of a [`ConvergenceReport`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BumpReport {
    pub bump: TestSection,
    pub contains_lambda: bool,
    pub pairings: Vec<f64>,
    pub fiber_value: f64,
    pub errors: Vec<f64>,
    pub slope: Option<f64>,
    pub slope_window: (f64, f64),
    pub final_error: f64,
    pub monotone: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceReport {
    pub lambda: Vec<i64>,
    pub phi: String,
    pub t_grid: Vec<f64>,
    pub mode: FiberMode,
    pub fiber_weight: f64,
    pub bumps: Vec<BumpReport>,
    /// Row-major `t·Cov` at each grid time.
    pub covariance_t: Vec<Vec<f64>>,
    pub pass: bool,
}

type Integrand<'a> = dyn Fn(&[f64]) -> f64 + Sync + 'a;

/// Quadrature-backed evaluation of `C_t`, pairings and concentration moments.
#[derive(Debug, Clone)]
pub struct ConvergenceLab<'a> {
    pub model: &'a ToricModel,
    pub spec: QuadratureSpec,
    /// Length of one torus circle; only enters through `(·)^n` factors that
    /// cancel in normalised quantities.
    pub circle_length: f64,
}

impl<'a> ConvergenceLab<'a> {
    pub fn new(model: &'a ToricModel, spec: QuadratureSpec) -> Self {
        ConvergenceLab {
            model,
            spec,
            circle_length: TAU,
        }
    }

    pub fn with_circle_length(mut self, circle: f64) -> Self {
        self.circle_length = circle;
        self
    }

    fn torus_log_volume(&self) -> f64 {
        self.model.dim() as f64 * self.circle_length.ln()
    }

    fn check(&self, lambda: &[f64], t: f64) -> Result<()> {
        Error::check_dim(self.model.dim(), lambda.len())?;
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::InvalidArgument(format!("flow time must be ≥ 0, got {t}")));
        }
        if !self.model.polytope().contains(lambda, 1e-12)?.inside {
            return Err(Error::NotInterior { point: lambda.to_vec() });
        }
        Ok(())
    }

    /// Quadrature settings for time `t`: a peak hint at λ once the predicted
    /// width `1/√(t·min eig Hess φ(λ))` drops below four cells.
    pub fn spec_for(&self, lambda: &[f64], t: f64) -> QuadratureSpec {
        let mut spec = self.spec.clone();
        if t > 0.0 && self.model.polytope().is_interior(lambda) {
            let eig = min_eigenvalue(&self.model.phi.hessian(lambda));
            let width = 1.0 / (t * eig).sqrt();
            if width < 4.0 / spec.resolution as f64 {
                spec.peaks.push(crate::quadrature::PeakHint {
                    center: lambda.to_vec(),
                    width,
                });
            }
        }
        spec
    }

    /// `∫_P e^{-t(f_λ - f_λ(λ))} (1, h_1, …, h_k) dx` on one mesh.
    fn weighted_integrals(&self, lambda: &[f64], t: f64, extra: &[&Integrand<'_>]) -> Result<Vec<f64>> {
        let phi = &self.model.phi;
        let f0 = -phi.value(lambda);
        let m = 1 + extra.len();
        let spec = self.spec_for(lambda, t);
        let r = integrate_vector(
            |x, out| {
                let w = (-t * (f_lambda_unchecked(phi, lambda, x) - f0)).exp();
                out[0] = w;
                for (o, h) in out[1..].iter_mut().zip(extra) {
                    *o = w * h(x);
                }
            },
            m,
            self.model.polytope(),
            &spec,
        )?;
        Ok(r.values)
    }

    /// `C_t = [(2π)^n ∫_P e^{-t f_λ} dx]^{-1}`.
    pub fn normalization_ct(&self, lambda: &[f64], t: f64) -> Result<NormalizationConstant> {
        self.check(lambda, t)?;
        let j = self.weighted_integrals(lambda, t, &[])?[0];
        Ok(NormalizationConstant {
            lambda: lambda.to_vec(),
            t,
            log_inverse: self.torus_log_volume() + j.ln() + t * self.model.phi.value(lambda),
        })
    }

    /// Leading Laplace term of `log C_t^{-1}` at interior λ:
    /// `(2π)^n e^{tφ(λ)} (2π/t)^{n/2} det(Hess φ(λ))^{-1/2}`.
    pub fn laplace_log_inverse(&self, lambda: &[f64], t: f64) -> Result<f64> {
        self.check(lambda, t)?;
        let n = self.model.dim() as f64;
        let det = self.model.phi.hessian(lambda).determinant();
        Ok(self.torus_log_volume() + t * self.model.phi.value(lambda) + 0.5 * n * (TAU / t).ln() - 0.5 * det.ln())
    }

    /// `ι(C_t s_t)(τ) = C_t (2π)^n ∫_P e^{-t f_λ} H dx`.
    pub fn pairing_iota(&self, s: &WeightSection, tau: &TestSection, c: &NormalizationConstant) -> Result<f64> {
        let lambda = s.lambda();
        self.check(&lambda, s.time)?;
        if c.lambda != lambda || c.t != s.time {
            return Err(Error::InvalidArgument(
                "normalisation constant belongs to a different section".into(),
            ));
        }
        let h = |x: &[f64]| tau.value(x);
        let j = self.weighted_integrals(&lambda, s.time, &[&h])?[1];
        let log_scale = self.torus_log_volume() + s.time * self.model.phi.value(&lambda) - c.log_inverse;
        Ok(j * log_scale.exp())
    }

    /// Mean, covariance and the mass within `radius` of λ for the normalised
    /// density.
    pub fn concentration_profile(&self, lambda: &[f64], t: f64, radius: f64) -> Result<ConcentrationStats> {
        self.check(lambda, t)?;
        let n = self.model.dim();
        let mut fns: Vec<Box<Integrand<'_>>> = Vec::new();
        for j in 0..n {
            let l = lambda[j];
            fns.push(Box::new(move |x: &[f64]| x[j] - l));
        }
        for j in 0..n {
            for k in j..n {
                let (lj, lk) = (lambda[j], lambda[k]);
                fns.push(Box::new(move |x: &[f64]| (x[j] - lj) * (x[k] - lk)));
            }
        }
        let refs: Vec<&Integrand<'_>> = fns.iter().map(|b| b.as_ref()).collect();
        let v = self.weighted_integrals(lambda, t, &refs)?;
        let mass = v[0];
        let centered: Vec<f64> = v[1..=n].iter().map(|a| a / mass).collect();
        let mean: Vec<f64> = centered.iter().zip(lambda).map(|(a, l)| a + l).collect();
        let mut cov = vec![vec![0.0; n]; n];
        let mut idx = 1 + n;
        for j in 0..n {
            for k in j..n {
                let c = v[idx] / mass - centered[j] * centered[k];
                cov[j][k] = c;
                cov[k][j] = c;
                idx += 1;
            }
        }
        let c = self.normalization_ct(lambda, t)?;
        let normalized_mass = mass * (self.torus_log_volume() + t * self.model.phi.value(lambda) - c.log_inverse).exp();
        let phi = &self.model.phi;
        let f0 = -phi.value(lambda);
        let spec = self.spec_for(lambda, t);
        let poly = self.model.polytope();
        let density = |x: &[f64]| (-t * (f_lambda_unchecked(phi, lambda, x) - f0)).exp();
        let level = 2;
        let total = midpoint_fixed(density, poly, &spec, level)?;
        let inner = midpoint_fixed(
            |x: &[f64]| {
                let d2: f64 = x.iter().zip(lambda).map(|(a, b)| (a - b) * (a - b)).sum();
                if d2 < radius * radius {
                    density(x)
                } else {
                    0.0
                }
            },
            poly,
            &spec,
            level,
        )?;
        Ok(ConcentrationStats {
            t,
            mass: normalized_mass,
            mean,
            covariance: cov,
            radius,
            mass_within: (inner / total).min(1.0),
        })
    }

    /// Pairings of the normalised flowed weight-λ section against each bump
    /// along `t_grid`, compared with the fiber pairing.
    pub fn convergence_experiment(
        &self,
        lambda: &LatticePoint,
        bumps: &[TestSection],
        t_grid: &[f64],
        fiber: &FiberMeasureModel,
    ) -> Result<ConvergenceReport> {
        let poly = self.model.polytope();
        require_regular(poly, lambda)?;
        if t_grid.is_empty() || t_grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument("t-grid must be nonempty and increasing".into()));
        }
        let lam = lambda.to_f64();
        let n = self.model.dim();
        let mut pairings = vec![Vec::with_capacity(t_grid.len()); bumps.len()];
        let mut covariance_t = Vec::with_capacity(t_grid.len());
        for &t in t_grid {
            self.check(&lam, t)?;
            let mut fns: Vec<Box<Integrand<'_>>> = bumps
                .iter()
                .map(|b| Box::new(move |x: &[f64]| b.value(x)) as Box<Integrand<'_>>)
                .collect();
            for j in 0..n {
                let l = lam[j];
                fns.push(Box::new(move |x: &[f64]| x[j] - l));
            }
            for j in 0..n {
                for k in 0..n {
                    let (lj, lk) = (lam[j], lam[k]);
                    fns.push(Box::new(move |x: &[f64]| (x[j] - lj) * (x[k] - lk)));
                }
            }
            let refs: Vec<&Integrand<'_>> = fns.iter().map(|b| b.as_ref()).collect();
            let v = self.weighted_integrals(&lam, t, &refs)?;
            let mass = v[0];
            for (i, p) in pairings.iter_mut().enumerate() {
                // C_t (2π)^n ∫ e^{-t f} H: the shifted exponentials cancel
                p.push(v[1 + i] / mass);
            }
            let off = 1 + bumps.len();
            let mean: Vec<f64> = (0..n).map(|j| v[off + j] / mass).collect();
            let cov: Vec<f64> = (0..n * n)
                .map(|jk| {
                    let (j, k) = (jk / n, jk % n);
                    t * (v[off + n + jk] / mass - mean[j] * mean[k])
                })
                .collect();
            covariance_t.push(cov);
        }
        let t_max = *t_grid.last().unwrap();
        let window = (t_max / 10.0, t_max);
        let mut reports = Vec::with_capacity(bumps.len());
        for (b, p) in bumps.iter().zip(pairings) {
            let target = fiber_pairing_delta(poly, b, lambda, &FiberMeasureModel::normalized())?;
            let errors: Vec<f64> = p.iter().map(|v| (v - target).abs()).collect();
            let monotone = errors.windows(2).all(|w| w[1] <= w[0] + NOISE_FLOOR);
            let final_error = *errors.last().unwrap();
            let contains_lambda = b.contains(&lam);
            let (ts, es): (Vec<f64>, Vec<f64>) = t_grid
                .iter()
                .zip(&errors)
                .filter(|(t, _)| **t >= window.0 * (1.0 - 1e-12))
                .map(|(t, e)| (*t, *e))
                .unzip();
            let slope = Some(loglog_slope(&ts, &es)).filter(|s| s.is_finite());
            let pass = if contains_lambda {
                monotone && final_error < FINAL_ERROR_TOL && slope.is_some_and(|s| (s + 1.0).abs() <= SLOPE_WINDOW)
            } else {
                monotone && final_error < SEPARATED_TOL
            };
            reports.push(BumpReport {
                bump: b.clone(),
                contains_lambda,
                fiber_value: fiber.weight * target,
                pairings: p,
                errors,
                slope,
                slope_window: window,
                final_error,
                monotone,
                pass,
            });
        }
        let pass = reports.iter().all(|r| r.pass);
        Ok(ConvergenceReport {
            lambda: lambda.0.clone(),
            phi: self.model.phi.descriptor(),
            t_grid: t_grid.to_vec(),
            mode: fiber.mode,
            fiber_weight: fiber.weight,
            bumps: reports,
            covariance_t,
            pass,
        })
    }
}

/// θ-averaged pairing of weight sections at the same flow time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OrthogonalityReport {
    pub theta_average: (f64, f64),
    pub radial: f64,
    pub residual: f64,
}

/// Pairs a weight-λ1 section with a weight-λ2 test object through a
/// discrete θ-average of `e^{i(λ1-λ2)·θ}` times the radial integral
/// `(2π)^n ∫_P e^{-A_{λ1,t} - A_{λ2,t}} dx`. For `λ1 ≠ λ2` the residual is the
/// modulus of the pairing; for `λ1 = λ2` it is zero.
pub fn weight_orthogonality_check(
    model: &ToricModel,
    lambda1: &LatticePoint,
    lambda2: &LatticePoint,
    t: f64,
    points: usize,
    spec: &QuadratureSpec,
) -> Result<OrthogonalityReport> {
    let s1 = WeightSection::new(model, lambda1.clone(), t)?;
    let s2 = WeightSection::new(model, lambda2.clone(), t)?;
    if points == 0 {
        return Err(Error::InvalidArgument("θ-grid needs at least one point".into()));
    }
    let n = model.dim();
    let diff: Vec<i64> = lambda1.0.iter().zip(&lambda2.0).map(|(a, b)| a - b).collect();
    if lambda1 != lambda2 && diff.iter().all(|d| d.rem_euclid(points as i64) == 0) {
        return Err(Error::Aliasing {
            first: lambda1.0.clone(),
            second: lambda2.0.clone(),
            points,
        });
    }
    let df: Vec<f64> = diff.iter().map(|&d| d as f64).collect();
    let cells = points.pow(n as u32);
    let mut avg = nalgebra::Complex::new(0.0, 0.0);
    for a in 0..cells {
        let mut rest = a;
        let mut theta = vec![0.0; n];
        for th in theta.iter_mut().rev() {
            *th = TAU * (rest % points) as f64 / points as f64;
            rest /= points;
        }
        avg += nalgebra::Complex::from_polar(1.0, dot(&df, &theta));
    }
    avg /= cells as f64;
    let r = crate::quadrature::integrate(
        |x: &[f64]| (-s1.amplitude_log_unchecked(model, x) - s2.amplitude_log_unchecked(model, x)).exp(),
        model.polytope(),
        spec,
    )?;
    let radial = r.value * TAU.powi(n as i32);
    let residual = if lambda1 == lambda2 { 0.0 } else { avg.norm() * radial };
    Ok(OrthogonalityReport {
        theta_average: (avg.re, avg.im),
        radial,
        residual,
    })
}
