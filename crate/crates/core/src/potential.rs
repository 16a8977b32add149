//! Strictly convex Hamiltonians `φ` on `t*`, the concentration functional
//! `f_λ(x) = (x - λ)·∇φ(x) - φ(x)`, and Legendre-transform helpers.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::polytope::DelzantPolytope;
use crate::{Error, Result};

/// A twice-differentiable function with analytic gradient and Hessian.
///
/// Implementors may restrict their domain via [`in_domain`](Self::in_domain);
/// Newton iterations use it to keep iterates admissible.
pub trait SmoothConvex: Send + Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> DVector<f64>;
    fn hessian(&self, x: &[f64]) -> DMatrix<f64>;
    fn in_domain(&self, _x: &[f64]) -> bool {
        true
    }
}

/// User-registered closed form.
pub trait ClosedForm: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> DVector<f64>;
    fn hessian(&self, x: &[f64]) -> DMatrix<f64>;
}

/// `coefficient · exp(⟨direction, x⟩)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpTerm {
    pub coefficient: f64,
    pub direction: Vec<f64>,
}

impl ExpTerm {
    fn exponent(&self, x: &[f64]) -> f64 {
        self.direction.iter().zip(x).map(|(a, b)| a * b).sum()
    }
}

#[derive(Debug, Clone)]
pub enum PotentialKind {
    /// `½xᵀQx + b·x + c + Σ a_i exp(v_i·x)`.
    Quadratic {
        q: DMatrix<f64>,
        b: DVector<f64>,
        c: f64,
        perturbations: Vec<ExpTerm>,
    },
    /// `log Σ w_i exp(a_i·x)` with positive weights.
    LogSumExp {
        terms: Vec<ExpTerm>,
    },
    Custom(Arc<dyn ClosedForm>),
}

#[derive(Debug, Clone)]
pub struct ConvexPotential {
    kind: PotentialKind,
    dim: usize,
}

impl ConvexPotential {
    /// `½|x|²`, the default Hamiltonian.
    pub fn isotropic(dim: usize) -> Self {
        Self::quadratic(DMatrix::identity(dim, dim), DVector::zeros(dim), 0.0).unwrap()
    }

    pub fn quadratic(q: DMatrix<f64>, b: DVector<f64>, c: f64) -> Result<Self> {
        Self::quadratic_perturbed(q, b, c, Vec::new())
    }

    pub fn quadratic_perturbed(q: DMatrix<f64>, b: DVector<f64>, c: f64, perturbations: Vec<ExpTerm>) -> Result<Self> {
        let dim = q.nrows();
        if q.ncols() != dim {
            return Err(Error::InvalidArgument("Q must be square".into()));
        }
        Error::check_dim(dim, b.len())?;
        for p in &perturbations {
            Error::check_dim(dim, p.direction.len())?;
        }
        if (&q - q.transpose()).amax() > 1e-12 * q.amax().max(1.0) {
            return Err(Error::InvalidArgument("Q must be symmetric".into()));
        }
        Ok(ConvexPotential {
            kind: PotentialKind::Quadratic { q, b, c, perturbations },
            dim,
        })
    }

    pub fn log_sum_exp(terms: Vec<ExpTerm>) -> Result<Self> {
        let dim = terms
            .first()
            .map(|t| t.direction.len())
            .ok_or_else(|| Error::InvalidArgument("log-sum-exp needs at least one term".into()))?;
        for t in &terms {
            Error::check_dim(dim, t.direction.len())?;
            if t.coefficient <= 0.0 {
                return Err(Error::InvalidArgument("log-sum-exp weights must be positive".into()));
            }
        }
        Ok(ConvexPotential {
            kind: PotentialKind::LogSumExp { terms },
            dim,
        })
    }

    pub fn custom(form: Arc<dyn ClosedForm>) -> Self {
        let dim = form.dim();
        ConvexPotential {
            kind: PotentialKind::Custom(form),
            dim,
        }
    }

    pub fn kind(&self) -> &PotentialKind {
        &self.kind
    }

    /// Short human-readable descriptor used in reports.
    pub fn descriptor(&self) -> String {
        match &self.kind {
            PotentialKind::Quadratic { q, perturbations, .. } => {
                let entries: Vec<String> = q.transpose().iter().map(|v| v.to_string()).collect();
                if perturbations.is_empty() {
                    format!("quadratic Q=[{}]", entries.join(" "))
                } else {
                    format!(
                        "quadratic Q=[{}] + {} exp terms",
                        entries.join(" "),
                        perturbations.len()
                    )
                }
            }
            PotentialKind::LogSumExp { terms } => format!("log-sum-exp ({} terms)", terms.len()),
            PotentialKind::Custom(f) => format!("custom {}", f.name()),
        }
    }

    /// Returns a copy with the constant term shifted by `delta`.
    pub fn shifted(&self, delta: f64) -> Self {
        let kind = match &self.kind {
            PotentialKind::Quadratic { q, b, c, perturbations } => PotentialKind::Quadratic {
                q: q.clone(),
                b: b.clone(),
                c: c + delta,
                perturbations: perturbations.clone(),
            },
            other => {
                return ConvexPotential {
                    kind: PotentialKind::Custom(Arc::new(Shifted {
                        base: ConvexPotential {
                            kind: other.clone(),
                            dim: self.dim,
                        },
                        delta,
                    })),
                    dim: self.dim,
                }
            }
        };
        ConvexPotential { kind, dim: self.dim }
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        Error::check_dim(self.dim, x.len())?;
        Ok(self.value(x))
    }

    pub fn grad(&self, x: &[f64]) -> Result<DVector<f64>> {
        Error::check_dim(self.dim, x.len())?;
        Ok(self.gradient(x))
    }

    pub fn hess(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        Error::check_dim(self.dim, x.len())?;
        Ok(self.hessian(x))
    }

    /// `f_λ(x) = (x - λ)·∇φ(x) - φ(x)`.
    pub fn f_lambda(&self, lambda: &[f64], x: &[f64]) -> Result<f64> {
        Error::check_dim(self.dim, lambda.len())?;
        Error::check_dim(self.dim, x.len())?;
        Ok(f_lambda_unchecked(self, lambda, x))
    }

    /// `x·∇φ(x) - φ(x)`, i.e. `f_0`.
    pub(crate) fn f_origin(&self, x: &[f64]) -> f64 {
        let g = self.gradient(x);
        x.iter().zip(g.iter()).map(|(a, b)| a * b).sum::<f64>() - self.value(x)
    }
}

#[inline]
pub(crate) fn f_lambda_unchecked(phi: &impl SmoothConvex, lambda: &[f64], x: &[f64]) -> f64 {
    let g = phi.gradient(x);
    x.iter()
        .zip(lambda)
        .zip(g.iter())
        .map(|((xi, li), gi)| (xi - li) * gi)
        .sum::<f64>()
        - phi.value(x)
}

#[derive(Debug)]
struct Shifted {
    base: ConvexPotential,
    delta: f64,
}

impl ClosedForm for Shifted {
    fn name(&self) -> &str {
        "shifted"
    }
    fn dim(&self) -> usize {
        self.base.dim
    }
    fn value(&self, x: &[f64]) -> f64 {
        SmoothConvex::value(&self.base, x) + self.delta
    }
    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        self.base.gradient(x)
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        self.base.hessian(x)
    }
}

impl SmoothConvex for ConvexPotential {
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        match &self.kind {
            PotentialKind::Quadratic { q, b, c, perturbations } => {
                let xv = DVector::from_column_slice(x);
                0.5 * xv.dot(&(q * &xv))
                    + b.dot(&xv)
                    + c
                    + perturbations
                        .iter()
                        .map(|p| p.coefficient * p.exponent(x).exp())
                        .sum::<f64>()
            }
            PotentialKind::LogSumExp { terms } => {
                let e: Vec<f64> = terms.iter().map(|t| t.coefficient.ln() + t.exponent(x)).collect();
                let m = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                m + e.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
            }
            PotentialKind::Custom(f) => f.value(x),
        }
    }

    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        match &self.kind {
            PotentialKind::Quadratic {
                q, b, perturbations, ..
            } => {
                let xv = DVector::from_column_slice(x);
                let mut g = q * &xv + b;
                for p in perturbations {
                    let w = p.coefficient * p.exponent(x).exp();
                    for (gi, di) in g.iter_mut().zip(&p.direction) {
                        *gi += w * di;
                    }
                }
                g
            }
            PotentialKind::LogSumExp { terms } => {
                let (w, _) = softmax(terms, x);
                let mut g = DVector::zeros(self.dim);
                for (t, wi) in terms.iter().zip(&w) {
                    for (gi, di) in g.iter_mut().zip(&t.direction) {
                        *gi += wi * di;
                    }
                }
                g
            }
            PotentialKind::Custom(f) => f.gradient(x),
        }
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        match &self.kind {
            PotentialKind::Quadratic { q, perturbations, .. } => {
                let mut h = q.clone();
                for p in perturbations {
                    let w = p.coefficient * p.exponent(x).exp();
                    let d = DVector::from_column_slice(&p.direction);
                    h += w * &d * d.transpose();
                }
                h
            }
            PotentialKind::LogSumExp { terms } => {
                let (w, _) = softmax(terms, x);
                let mut mean = DVector::zeros(self.dim);
                let mut second = DMatrix::zeros(self.dim, self.dim);
                for (t, wi) in terms.iter().zip(&w) {
                    let d = DVector::from_column_slice(&t.direction);
                    mean += *wi * &d;
                    second += *wi * &d * d.transpose();
                }
                second - &mean * mean.transpose()
            }
            PotentialKind::Custom(f) => f.hessian(x),
        }
    }
}

fn softmax(terms: &[ExpTerm], x: &[f64]) -> (Vec<f64>, f64) {
    let e: Vec<f64> = terms.iter().map(|t| t.coefficient.ln() + t.exponent(x)).collect();
    let m = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = e.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = w.iter().sum();
    (w.iter().map(|v| v / s).collect(), m + s.ln())
}

/// The BFMN functional `f_λ` attached to a Hamiltonian.
#[derive(Debug, Clone)]
pub struct ConcentrationFunctional {
    pub base: ConvexPotential,
    pub center: Vec<f64>,
}

impl ConcentrationFunctional {
    pub fn new(base: ConvexPotential, center: Vec<f64>) -> Result<Self> {
        Error::check_dim(base.dim, center.len())?;
        Ok(ConcentrationFunctional { base, center })
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        f_lambda_unchecked(&self.base, &self.center, x)
    }

    /// `∇f_λ(x) = Hess φ(x)·(x - λ)`.
    pub fn gradient(&self, x: &[f64]) -> DVector<f64> {
        let d = DVector::from_iterator(x.len(), x.iter().zip(&self.center).map(|(a, b)| a - b));
        self.base.hessian(x) * d
    }

    /// `Hess f_λ(λ) = Hess φ(λ)`.
    pub fn hessian_at_center(&self) -> DMatrix<f64> {
        self.base.hessian(&self.center)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinimumReport {
    pub argmin: Vec<f64>,
    pub min_value: f64,
    pub distance: f64,
    pub cell_size: f64,
    pub center_hessian_min_eigenvalue: f64,
}

/// Grid search for the minimum of `f_λ` over `P`; the minimum must lie
/// within one cell (sup-norm) of `λ` and `Hess f_λ(λ)` must be positive
/// definite.
pub fn f_lambda_min_check(
    phi: &ConvexPotential,
    lambda: &[f64],
    poly: &DelzantPolytope,
    resolution: usize,
) -> Result<MinimumReport> {
    Error::check_dim(poly.dim(), lambda.len())?;
    poly.require_interior(lambda)?;
    let f = ConcentrationFunctional::new(phi.clone(), lambda.to_vec())?;
    let grid = poly.interior_grid(resolution, 0.0)?;
    let (argmin, min_value) =
        grid.iter()
            .map(|s| (s.point.clone(), f.value(&s.point)))
            .fold(
                (Vec::new(), f64::INFINITY),
                |acc, (p, v)| {
                    if v < acc.1 {
                        (p, v)
                    } else {
                        acc
                    }
                },
            );
    let cell = 1.0 / resolution as f64;
    let distance = argmin
        .iter()
        .zip(lambda)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let eig = min_eigenvalue(&f.hessian_at_center());
    if eig <= 0.0 {
        return Err(Error::NotStrictlyConvex {
            point: lambda.to_vec(),
            eigenvalue: eig,
        });
    }
    if distance > cell * (1.0 + 1e-9) {
        return Err(Error::MinimumOffCenter { argmin, distance, cell });
    }
    Ok(MinimumReport {
        argmin,
        min_value,
        distance,
        cell_size: cell,
        center_hessian_min_eigenvalue: eig,
    })
}

pub(crate) fn min_eigenvalue(h: &DMatrix<f64>) -> f64 {
    let sym = (h + h.transpose()) * 0.5;
    SymmetricEigen::new(sym)
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Minimum Hessian eigenvalue of `φ` over `samples`; fails at the first
/// sample where it is not positive.
pub fn check_strict_convexity(phi: &impl SmoothConvex, samples: &[Vec<f64>]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no sample points".into()));
    }
    let mut best = f64::INFINITY;
    for x in samples {
        Error::check_dim(phi.dim(), x.len())?;
        let e = min_eigenvalue(&phi.hessian(x));
        if e <= 0.0 || !e.is_finite() {
            return Err(Error::NotStrictlyConvex {
                point: x.clone(),
                eigenvalue: e,
            });
        }
        best = best.min(e);
    }
    Ok(best)
}

/// Legendre transform data at a point: `y = ∇g(x)` and `g*(y) = x·y - g(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LegendrePoint {
    pub y: DVector<f64>,
    pub dual_value: f64,
}

pub fn legendre_dual(g: &impl SmoothConvex, x: &[f64]) -> Result<LegendrePoint> {
    Error::check_dim(g.dim(), x.len())?;
    let y = g.gradient(x);
    let dual_value = x.iter().zip(y.iter()).map(|(a, b)| a * b).sum::<f64>() - g.value(x);
    Ok(LegendrePoint { y, dual_value })
}

/// Newton settings for [`legendre_inverse`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NewtonOptions {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        NewtonOptions {
            tolerance: 1e-12,
            max_iterations: 50,
        }
    }
}

/// Solves `∇g(x) = y` by damped Newton from `start`. The step is halved
/// until the iterate stays in the domain and the residual decreases.
pub fn legendre_inverse(g: &impl SmoothConvex, y: &[f64], start: &[f64], opts: NewtonOptions) -> Result<Vec<f64>> {
    Error::check_dim(g.dim(), y.len())?;
    Error::check_dim(g.dim(), start.len())?;
    if !g.in_domain(start) {
        return Err(Error::NotInterior { point: start.to_vec() });
    }
    let target = DVector::from_column_slice(y);
    let mut x = DVector::from_column_slice(start);
    let scale = target.amax().max(1.0);
    let mut resid = g.gradient(x.as_slice()) - &target;
    for it in 0..opts.max_iterations {
        let rn = resid.amax();
        if rn <= opts.tolerance * scale {
            // one more undamped step polishes to rounding level
            if let Some(step) = g.hessian(x.as_slice()).lu().solve(&resid) {
                let cand = &x - step;
                if g.in_domain(cand.as_slice()) {
                    let r2 = g.gradient(cand.as_slice()) - &target;
                    if r2.amax() <= rn {
                        return Ok(cand.iter().copied().collect());
                    }
                }
            }
            return Ok(x.iter().copied().collect());
        }
        let step = g.hessian(x.as_slice()).lu().solve(&resid).ok_or(Error::NewtonFailed {
            iterations: it,
            residual: rn,
        })?;
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &x - alpha * &step;
            if g.in_domain(cand.as_slice()) {
                let r = g.gradient(cand.as_slice()) - &target;
                if r.amax() < rn || alpha < 1e-12 {
                    x = cand;
                    resid = r;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(Error::NewtonFailed {
                iterations: it,
                residual: rn,
            });
        }
    }
    let rn = resid.amax();
    if rn <= opts.tolerance * scale {
        Ok(x.iter().copied().collect())
    } else {
        Err(Error::NewtonFailed {
            iterations: opts.max_iterations,
            residual: rn,
        })
    }
}
