//! Toric Kähler structures along the imaginary-time flow of `φ(μ)`.
//!
//! On the open orbit we work in action-angle coordinates `(x, θ)` with
//! `ω = Σ dx_j ∧ dθ_j`. A symplectic potential `g` on the interior of `P`
//! determines the complex coordinates `w_j = exp(∂g/∂x_j + iθ_j)`. Flowing
//! by `φ` replaces `g_0` with `g_t = g_0 + tφ`, which yields the complex
//! structures `J_t`, the Kähler potentials `ρ_t` and the polarizations `P_t`.

use nalgebra::{Complex, DMatrix, DVector};
use serde::Serialize;

use crate::fit::loglog_slope;
use crate::polytope::DelzantPolytope;
use crate::potential::{legendre_inverse, min_eigenvalue, ConvexPotential, NewtonOptions, SmoothConvex};
use crate::{Error, Result};

type C64 = Complex<f64>;

/// Condition number above which `G_t` is reported as ill-conditioned.
pub const MAX_CONDITION: f64 = 1e12;

/// `g_P(x) = ½ Σ_k l_k(x) log l_k(x)` plus an optional smooth convex
/// correction.
#[derive(Debug, Clone)]
pub struct SymplecticPotential {
    polytope: DelzantPolytope,
    extra: Option<ConvexPotential>,
}

impl SymplecticPotential {
    pub fn guillemin(polytope: DelzantPolytope) -> Self {
        SymplecticPotential { polytope, extra: None }
    }

    pub fn with_correction(polytope: DelzantPolytope, extra: ConvexPotential) -> Result<Self> {
        Error::check_dim(polytope.dim(), extra.dim())?;
        Ok(SymplecticPotential {
            polytope,
            extra: Some(extra),
        })
    }

    pub fn polytope(&self) -> &DelzantPolytope {
        &self.polytope
    }

    /// Checked evaluation returning `(g, ∇g, Hess g)`.
    pub fn evaluate(&self, x: &[f64]) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        self.polytope.require_interior(x)?;
        Ok((self.value(x), self.gradient(x), self.hessian(x)))
    }
}

impl SmoothConvex for SymplecticPotential {
    fn dim(&self) -> usize {
        self.polytope.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let base: f64 = self
            .polytope
            .facets()
            .iter()
            .map(|f| {
                let l = f.value(x);
                l * l.ln()
            })
            .sum::<f64>()
            * 0.5;
        base + self.extra.as_ref().map_or(0.0, |e| e.value(x))
    }

    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        let n = self.dim();
        let mut g = DVector::zeros(n);
        for f in self.polytope.facets() {
            let w = 0.5 * (f.value(x).ln() + 1.0);
            for (gi, &ni) in g.iter_mut().zip(f.normal()) {
                *gi += w * ni as f64;
            }
        }
        if let Some(e) = &self.extra {
            g += e.gradient(x);
        }
        g
    }

    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        let n = self.dim();
        let mut h = DMatrix::zeros(n, n);
        for f in self.polytope.facets() {
            let w = 0.5 / f.value(x);
            for i in 0..n {
                for j in 0..n {
                    h[(i, j)] += w * (f.normal()[i] * f.normal()[j]) as f64;
                }
            }
        }
        if let Some(e) = &self.extra {
            h += e.hessian(x);
        }
        h
    }

    fn in_domain(&self, x: &[f64]) -> bool {
        self.polytope.is_interior(x)
    }
}

/// Polytope, initial symplectic potential and Hamiltonian: everything that
/// stays fixed along a flow.
#[derive(Debug, Clone)]
pub struct ToricModel {
    pub g0: SymplecticPotential,
    pub phi: ConvexPotential,
}

impl ToricModel {
    pub fn new(g0: SymplecticPotential, phi: ConvexPotential) -> Result<Self> {
        Error::check_dim(g0.dim(), phi.dim())?;
        Ok(ToricModel { g0, phi })
    }

    /// Guillemin potential with the default Hamiltonian `½|x|²`.
    pub fn standard(polytope: DelzantPolytope) -> Self {
        let n = polytope.dim();
        ToricModel {
            g0: SymplecticPotential::guillemin(polytope),
            phi: ConvexPotential::isotropic(n),
        }
    }

    pub fn with_phi(polytope: DelzantPolytope, phi: ConvexPotential) -> Result<Self> {
        Self::new(SymplecticPotential::guillemin(polytope), phi)
    }

    pub fn polytope(&self) -> &DelzantPolytope {
        self.g0.polytope()
    }

    pub fn dim(&self) -> usize {
        self.g0.dim()
    }

    pub fn at(&self, t: f64) -> Result<KahlerFlowState<'_>> {
        KahlerFlowState::new(self, t)
    }

    /// `ρ_0(x) = 2(x·∇g_0(x) - g_0(x))`.
    pub(crate) fn rho0(&self, x: &[f64]) -> f64 {
        let y = self.g0.gradient(x);
        2.0 * (dot(x, y.as_slice()) - self.g0.value(x))
    }
}

/// Model at flow time `t ≥ 0`.
#[derive(Debug, Clone, Copy)]
pub struct KahlerFlowState<'a> {
    pub model: &'a ToricModel,
    pub t: f64,
}

/// `g_t`, `∇g_t` and `G_t = Hess g_t` at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowedPotential {
    pub value: f64,
    pub gradient: DVector<f64>,
    pub hessian: DMatrix<f64>,
}

/// `ρ_t` by the flow formula and by Legendre duality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DualityCheck {
    pub formula: f64,
    pub legendre: f64,
    pub residual: f64,
}

impl<'a> KahlerFlowState<'a> {
    pub fn new(model: &'a ToricModel, t: f64) -> Result<Self> {
        if !(t >= 0.0) || !t.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "flow time must be finite and nonnegative, got {t}"
            )));
        }
        Ok(KahlerFlowState { model, t })
    }

    pub fn flowed_potential(&self, x: &[f64]) -> Result<FlowedPotential> {
        self.model.polytope().require_interior(x)?;
        let phi = &self.model.phi;
        Ok(FlowedPotential {
            value: self.model.g0.value(x) + self.t * phi.value(x),
            gradient: self.model.g0.gradient(x) + self.t * phi.gradient(x),
            hessian: self.model.g0.hessian(x) + self.t * phi.hessian(x),
        })
    }

    /// `ρ_t = ρ_0 - 2tφ + 2tβ(X_φ)` with `β(X_φ) = x·∇φ` in the invariant
    /// gauge.
    pub fn kahler_potential(&self, x: &[f64]) -> Result<f64> {
        self.model.polytope().require_interior(x)?;
        Ok(self.kahler_potential_unchecked(x))
    }

    pub(crate) fn kahler_potential_unchecked(&self, x: &[f64]) -> f64 {
        let phi = &self.model.phi;
        let beta = InvariantGauge.beta_of_hamiltonian(phi, x);
        self.model.rho0(x) - 2.0 * self.t * phi.value(x) + 2.0 * self.t * beta
    }

    /// Compares the flow formula for `ρ_t` with `2(x·∇g_t - g_t)`.
    pub fn kahler_potential_duality(&self, x: &[f64]) -> Result<DualityCheck> {
        let formula = self.kahler_potential(x)?;
        let g = self.flowed_potential(x)?;
        let legendre = 2.0 * (dot(x, g.gradient.as_slice()) - g.value);
        Ok(DualityCheck {
            formula,
            legendre,
            residual: (formula - legendre).abs(),
        })
    }

    fn hessian_checked(&self, x: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let g = self.flowed_potential(x)?.hessian;
        let eig = nalgebra::SymmetricEigen::new(g.clone()).eigenvalues;
        let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = eig.iter().cloned().fold(0.0, f64::max);
        let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
        if condition > MAX_CONDITION {
            return Err(Error::IllConditioned {
                point: x.to_vec(),
                condition,
            });
        }
        let inv = g.clone().try_inverse().ok_or_else(|| Error::IllConditioned {
            point: x.to_vec(),
            condition,
        })?;
        Ok((g, inv))
    }

    /// `J_t = [[0, -G_t⁻¹], [G_t, 0]]` in the frame `(∂_x, ∂_θ)`.
    pub fn complex_structure(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let n = self.model.dim();
        let (g, inv) = self.hessian_checked(x)?;
        let mut j = DMatrix::zeros(2 * n, 2 * n);
        j.view_mut((0, n), (n, n)).copy_from(&(-inv));
        j.view_mut((n, 0), (n, n)).copy_from(&g);
        Ok(j)
    }

    /// Anti-holomorphic directions `∂/∂w̄_j = ½(Σ_k (G_t⁻¹)_{kj} ∂_{x_k} + i ∂_{θ_j})`.
    pub fn polarization_basis(&self, x: &[f64]) -> Result<PolarizationFrame> {
        let n = self.model.dim();
        let (_, inv) = self.hessian_checked(x)?;
        let basis = DMatrix::from_fn(2 * n, n, |r, c| {
            if r < n {
                C64::new(0.5 * inv[(r, c)], 0.0)
            } else if r - n == c {
                C64::new(0.0, 0.5)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        PolarizationFrame::new(basis)
    }

    /// Image of `p` under `ψ_t`: the point whose `J_0`-holomorphic
    /// coordinates equal the `J_t`-holomorphic coordinates of `p`.
    pub fn flow_map_psi(&self, p: &OrbitPoint) -> Result<PsiImage> {
        let x = &p.x;
        self.model.polytope().require_interior(x)?;
        let log_modulus = self.model.g0.gradient(x) + self.t * self.model.phi.gradient(x);
        let image_x = legendre_inverse(&self.model.g0, log_modulus.as_slice(), x, NewtonOptions::default())?;
        Ok(PsiImage {
            point: OrbitPoint {
                x: image_x,
                theta: p.theta.clone(),
            },
            log_modulus,
        })
    }
}

/// Result of [`KahlerFlowState::flow_map_psi`].
#[derive(Debug, Clone, PartialEq)]
pub struct PsiImage {
    pub point: OrbitPoint,
    /// `log|w_j|` of the image in `J_0` coordinates, `∂g_0/∂x_j + t ∂φ/∂x_j`.
    pub log_modulus: DVector<f64>,
}

/// Point of the open orbit in action-angle coordinates.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrbitPoint {
    pub x: Vec<f64>,
    pub theta: Vec<f64>,
}

impl OrbitPoint {
    pub fn new(poly: &DelzantPolytope, x: Vec<f64>, theta: Vec<f64>) -> Result<Self> {
        Error::check_dim(poly.dim(), theta.len())?;
        poly.require_interior(&x)?;
        let theta = theta.into_iter().map(|t| t.rem_euclid(std::f64::consts::TAU)).collect();
        Ok(OrbitPoint { x, theta })
    }

    /// `J`-holomorphic coordinates `w_j = exp(y_j + iθ_j)` for log-moduli `y`.
    pub fn holomorphic_coordinates(&self, y: &DVector<f64>) -> Vec<C64> {
        y.iter()
            .zip(&self.theta)
            .map(|(&yj, &tj)| C64::from_polar(yj.exp(), tj))
            .collect()
    }
}

/// The invariant primitive `β = Σ x_j dθ_j` of `ω` on the open orbit.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct InvariantGauge;

impl InvariantGauge {
    /// `β(ξ_j^#) = x_j`.
    pub fn beta_of_fundamental(&self, x: &[f64], j: usize) -> f64 {
        x[j]
    }

    /// `β(X_φ)` for `X_φ = Σ ∂φ/∂x_j ∂/∂θ_j`.
    pub fn beta_of_hamiltonian(&self, phi: &impl SmoothConvex, x: &[f64]) -> f64 {
        dot(x, phi.gradient(x).as_slice())
    }

    /// `β` evaluated on a tangent vector `(v_x, v_θ)` at `p`.
    pub fn beta(&self, p: &OrbitPoint, v_theta: &[f64]) -> f64 {
        dot(&p.x, v_theta)
    }

    /// `X_φ(β(X_φ))` by a centred difference along the flow line of `X_φ`,
    /// which only moves the angles.
    pub fn hamiltonian_derivative_of_beta(&self, phi: &impl SmoothConvex, p: &OrbitPoint, h: f64) -> f64 {
        let field = phi.gradient(&p.x);
        let shifted = |s: f64| {
            let q = OrbitPoint {
                x: p.x.clone(),
                theta: p.theta.iter().zip(field.iter()).map(|(t, f)| t + s * f).collect(),
            };
            // β(X_φ) at q: the vector field and β only see q.x
            self.beta(&q, phi.gradient(&q.x).as_slice())
        };
        (shifted(h) - shifted(-h)) / (2.0 * h)
    }
}

/// `n` complex vectors in `C^{2n}` with respect to `(∂_x, ∂_θ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarizationFrame {
    basis: DMatrix<C64>,
}

impl PolarizationFrame {
    pub fn new(basis: DMatrix<C64>) -> Result<Self> {
        let rank = complex_rank(&basis);
        if rank < basis.ncols() {
            return Err(Error::RankDeficient {
                rank,
                expected: basis.ncols(),
            });
        }
        Ok(PolarizationFrame { basis })
    }

    pub fn basis(&self) -> &DMatrix<C64> {
        &self.basis
    }

    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    fn orthonormal(&self) -> DMatrix<C64> {
        self.basis.clone().svd(true, false).u.unwrap()
    }
}

fn complex_rank(m: &DMatrix<C64>) -> usize {
    let s = m.clone().svd(false, false).singular_values;
    let top = s.iter().cloned().fold(0.0, f64::max);
    s.iter().filter(|&&v| v > top * 1e-12 && v > 0.0).count()
}

/// `P_mix` on the open orbit: the complexified torus directions.
pub fn mixed_polarization_basis(n: usize) -> PolarizationFrame {
    let basis = DMatrix::from_fn(2 * n, n, |r, c| {
        if r >= n && r - n == c {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    });
    PolarizationFrame { basis }
}

/// Largest principal angle between two equal-rank subspaces of `C^{2n}`.
///
/// Small angles come from the sine route `‖(I - Q_B Q_Bᴴ) Q_A‖₂`, large ones
/// from the cosine route `σ_min(Q_Aᴴ Q_B)`.
pub fn subspace_angle(a: &PolarizationFrame, b: &PolarizationFrame) -> Result<f64> {
    if a.basis.nrows() != b.basis.nrows() {
        return Err(Error::DimensionMismatch {
            expected: a.basis.nrows(),
            actual: b.basis.nrows(),
        });
    }
    if a.rank() != b.rank() {
        return Err(Error::RankDeficient {
            rank: b.rank(),
            expected: a.rank(),
        });
    }
    let qa = a.orthonormal();
    let qb = b.orthonormal();
    let cross = qa.adjoint() * &qb;
    let cos_min = cross
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
        .min(1.0);
    let residual = &qa - &qb * (qb.adjoint() * &qa);
    let sin_max = residual
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .fold(0.0, f64::max)
        .min(1.0);
    Ok(if sin_max < std::f64::consts::FRAC_1_SQRT_2 {
        sin_max.asin()
    } else {
        cos_min.acos()
    })
}

/// Angle between `P_t` and `P_mix` along a grid of times.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayCurve {
    pub x: Vec<f64>,
    pub samples: Vec<(f64, f64)>,
    /// Log-log slope over the positive part of the grid.
    pub slope: f64,
    pub slope_window: (f64, f64),
    pub monotone: bool,
}

impl DecayCurve {
    pub fn in_window(&self, t: f64) -> bool {
        t >= self.slope_window.0 && t <= self.slope_window.1
    }
}

pub fn polarization_decay_curve(model: &ToricModel, x: &[f64], t_grid: &[f64]) -> Result<DecayCurve> {
    model.polytope().require_interior(x)?;
    if t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("t-grid must be increasing".into()));
    }
    let mix = mixed_polarization_basis(model.dim());
    let mut samples = Vec::with_capacity(t_grid.len());
    for &t in t_grid {
        let frame = model.at(t)?.polarization_basis(x)?;
        samples.push((t, subspace_angle(&frame, &mix)?));
    }
    let t_max = t_grid.last().copied().unwrap_or(0.0);
    let window: Vec<(f64, f64)> = samples.iter().filter(|(t, _)| *t > 0.0).cloned().collect();
    let slope = if window.len() >= 2 {
        let ts: Vec<f64> = window.iter().map(|s| s.0).collect();
        let vs: Vec<f64> = window.iter().map(|s| s.1).collect();
        loglog_slope(&ts, &vs)
    } else {
        f64::NAN
    };
    let monotone = samples.windows(2).all(|w| w[1].1 < w[0].1);
    Ok(DecayCurve {
        x: x.to_vec(),
        samples,
        slope,
        slope_window: (window.first().map_or(f64::NAN, |w| w.0), t_max),
        monotone,
    })
}

/// Metric `ω(·, J·)` in the `(∂_x, ∂_θ)` frame and its smallest eigenvalue
/// after symmetrisation.
pub fn metric_min_eigenvalue(j: &DMatrix<f64>) -> f64 {
    let n = j.nrows() / 2;
    let mut omega = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        omega[(i, n + i)] = 1.0;
        omega[(n + i, i)] = -1.0;
    }
    min_eigenvalue(&(omega * j))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cp1_unit() -> ToricModel {
        ToricModel::standard(DelzantPolytope::segment(1))
    }

    fn cp2_aniso() -> ToricModel {
        let phi = ConvexPotential::quadratic(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 4.0]),
            DVector::zeros(2),
            0.0,
        )
        .unwrap();
        ToricModel::with_phi(DelzantPolytope::simplex(2, 1), phi).unwrap()
    }

    fn random_interior(poly: &DelzantPolytope, rng: &mut ChaCha8Rng, margin: f64) -> Vec<f64> {
        let (lo, hi) = poly.bounding_box();
        loop {
            let x: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| rng.random_range(*a..*b)).collect();
            if poly.min_facet_value(&x) > margin {
                return x;
            }
        }
    }

    #[test]
    fn guillemin_examples() {
        let g = SymplecticPotential::guillemin(DelzantPolytope::segment(1));
        let (v, _, h) = g.evaluate(&[0.5]).unwrap();
        assert_relative_eq!(v, -0.5 * 2f64.ln(), epsilon = 1e-15);
        assert_relative_eq!(h[(0, 0)], 2.0, epsilon = 1e-15);
        let g2 = SymplecticPotential::guillemin(DelzantPolytope::simplex(2, 1));
        let third = 1.0 / 3.0;
        assert_relative_eq!(g2.value(&[third, third]), -0.5 * 3f64.ln(), epsilon = 1e-14);
        assert!(matches!(g.evaluate(&[1.0]), Err(Error::NotInterior { .. })));
        assert!(matches!(g.evaluate(&[-0.2]), Err(Error::NotInterior { .. })));
    }

    #[test]
    fn guillemin_derivatives_match_finite_differences() {
        let g = SymplecticPotential::guillemin(DelzantPolytope::simplex(2, 1));
        let x = [0.2, 0.3];
        let h = 1e-6;
        let grad = g.gradient(&x);
        let hess = g.hessian(&x);
        for i in 0..2 {
            let mut xp = x;
            let mut xm = x;
            xp[i] += h;
            xm[i] -= h;
            assert_relative_eq!((g.value(&xp) - g.value(&xm)) / (2.0 * h), grad[i], max_relative = 1e-7);
            let gd = (g.gradient(&xp) - g.gradient(&xm)) / (2.0 * h);
            for j in 0..2 {
                assert_relative_eq!(gd[j], hess[(j, i)], max_relative = 1e-7);
            }
        }
    }

    #[test]
    fn flowed_potential_examples() {
        let m = cp1_unit();
        let s0 = m.at(0.0).unwrap().flowed_potential(&[0.3]).unwrap();
        assert_relative_eq!(s0.value, m.g0.value(&[0.3]));
        let s = m.at(2.0).unwrap().flowed_potential(&[0.5]).unwrap();
        assert_relative_eq!(s.value, -0.5 * 2f64.ln() + 0.25, epsilon = 1e-15);
        assert_relative_eq!(s.hessian[(0, 0)], 4.0, epsilon = 1e-15);
        assert!(m.at(-1.0).is_err());
        let m2 = cp2_aniso();
        let mut prev = 0.0;
        for t in [0.0, 1.0, 2.0, 5.0] {
            let h = m2.at(t).unwrap().flowed_potential(&[0.2, 0.5]).unwrap().hessian;
            let e = min_eigenvalue(&h);
            assert!(e > prev);
            prev = e;
        }
    }

    #[test]
    fn kahler_potential_examples() {
        let m = cp1_unit();
        let r0 = m.at(0.0).unwrap().kahler_potential(&[0.5]).unwrap();
        assert_relative_eq!(r0, m.rho0(&[0.5]));
        let r2 = m.at(2.0).unwrap().kahler_potential(&[0.5]).unwrap();
        assert_relative_eq!(r2 - r0, 0.5, epsilon = 1e-14);
        // affine φ = a·x + c: ρ_t - ρ_0 = -2tc
        let affine = ConvexPotential::quadratic(DMatrix::zeros(1, 1), DVector::from_element(1, 0.7), 0.3).unwrap();
        let ma = ToricModel::with_phi(DelzantPolytope::segment(1), affine).unwrap();
        let d = ma.at(1.5).unwrap().kahler_potential(&[0.4]).unwrap() - ma.rho0(&[0.4]);
        assert_relative_eq!(d, -2.0 * 1.5 * 0.3, epsilon = 1e-14);
    }

    #[test]
    fn duality_residual_vanishes() {
        let m = cp1_unit();
        assert_eq!(
            m.at(0.0).unwrap().kahler_potential_duality(&[0.37]).unwrap().residual,
            0.0
        );
        assert!(m.at(1.0).unwrap().kahler_potential_duality(&[0.5]).unwrap().residual < 1e-12);
        let m2 = cp2_aniso();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let x = random_interior(m2.polytope(), &mut rng, 1e-4);
            let r = m2.at(5.0).unwrap().kahler_potential_duality(&x).unwrap().residual;
            assert!(r < 1e-10, "residual {r} at {x:?}");
        }
    }

    #[test]
    fn complex_structure_examples() {
        let m = cp1_unit();
        // G_t = 4 at x = 1/2, t = 2
        let j = m.at(2.0).unwrap().complex_structure(&[0.5]).unwrap();
        assert_relative_eq!(j[(0, 1)], -0.25, epsilon = 1e-15);
        assert_relative_eq!(j[(1, 0)], 4.0, epsilon = 1e-15);
        let sq = &j * &j + DMatrix::identity(2, 2);
        assert!(sq.amax() < 1e-15);
        let j0 = m.at(0.0).unwrap().complex_structure(&[0.5]).unwrap();
        assert_relative_eq!(j0[(1, 0)], 2.0, epsilon = 1e-15);

        let m2 = cp2_aniso();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let x = random_interior(m2.polytope(), &mut rng, 1e-3);
            let j = m2.at(1.0).unwrap().complex_structure(&x).unwrap();
            let sq = &j * &j + DMatrix::identity(4, 4);
            assert!(sq.amax() < 1e-12);
            assert!(metric_min_eigenvalue(&j) > 0.0);
        }
    }

    #[test]
    fn polarization_is_the_minus_i_eigenspace() {
        let m2 = cp2_aniso();
        let st = m2.at(3.0).unwrap();
        let x = [0.25, 0.4];
        let j = st.complex_structure(&x).unwrap().map(|v| C64::new(v, 0.0));
        let p = st.polarization_basis(&x).unwrap();
        let lhs = &j * p.basis();
        let rhs = p.basis() * C64::new(0.0, -1.0);
        assert!((lhs - rhs).iter().map(|z| z.norm()).fold(0.0, f64::max) < 1e-14);
    }

    #[test]
    fn polarization_basis_examples() {
        let m = cp1_unit();
        let p = m.at(0.0).unwrap().polarization_basis(&[0.5]).unwrap();
        assert_relative_eq!(p.basis()[(0, 0)].re, 0.25, epsilon = 1e-15);
        assert_relative_eq!(p.basis()[(1, 0)].im, 0.5, epsilon = 1e-15);
        let far = m.at(1e9).unwrap().polarization_basis(&[0.5]).unwrap();
        assert!(far.basis()[(0, 0)].norm() < 1e-9);
        assert_eq!(p.rank(), 1);
    }

    #[test]
    fn mixed_polarization_examples() {
        let p1 = mixed_polarization_basis(1);
        assert_eq!(p1.basis()[(1, 0)], C64::new(1.0, 0.0));
        assert_eq!(p1.basis()[(0, 0)], C64::new(0.0, 0.0));
        let p2 = mixed_polarization_basis(2);
        assert_eq!(p2.rank(), 2);
        assert_eq!(p2.basis().map(|c| c.conj()), *p2.basis());
    }

    #[test]
    fn subspace_angle_examples() {
        let m = cp1_unit();
        let a = m.at(0.0).unwrap().polarization_basis(&[0.5]).unwrap();
        let b = mixed_polarization_basis(1);
        assert!(subspace_angle(&b, &b).unwrap() < 1e-15);
        assert!(subspace_angle(&a, &a).unwrap() < 1e-7);
        assert_relative_eq!(subspace_angle(&a, &b).unwrap(), 0.5f64.atan(), epsilon = 1e-14);
        assert_relative_eq!(
            subspace_angle(&a, &b).unwrap(),
            subspace_angle(&b, &a).unwrap(),
            epsilon = 1e-14
        );
        let e1 = PolarizationFrame::new(DMatrix::from_column_slice(
            2,
            1,
            &[C64::new(1.0, 0.0), C64::new(0.0, 0.0)],
        ))
        .unwrap();
        let e2 = PolarizationFrame::new(DMatrix::from_column_slice(
            2,
            1,
            &[C64::new(0.0, 0.0), C64::new(0.0, 1.0)],
        ))
        .unwrap();
        assert_relative_eq!(
            subspace_angle(&e1, &e2).unwrap(),
            std::f64::consts::FRAC_PI_2,
            epsilon = 1e-14
        );
        assert!(matches!(
            PolarizationFrame::new(DMatrix::from_element(2, 2, C64::new(1.0, 0.0))),
            Err(Error::RankDeficient { .. })
        ));
    }

    #[test]
    fn psi_examples() {
        let m = cp1_unit();
        let p = OrbitPoint::new(m.polytope(), vec![0.5], vec![1.2]).unwrap();
        let id = m.at(0.0).unwrap().flow_map_psi(&p).unwrap();
        assert_relative_eq!(id.point.x[0], 0.5, epsilon = 1e-14);
        let img = m.at(1.0).unwrap().flow_map_psi(&p).unwrap();
        let w = img.point.holomorphic_coordinates(&img.log_modulus);
        assert_relative_eq!(w[0].norm(), 0.5f64.exp(), epsilon = 1e-14);
        assert_eq!(img.point.theta, p.theta);
        // ∇g_0 at the image reproduces ∇g_t at p
        let gt = m.at(1.0).unwrap().flowed_potential(&p.x).unwrap().gradient;
        assert_relative_eq!(m.g0.gradient(&img.point.x)[0], gt[0], epsilon = 1e-12);
    }

    #[test]
    fn beta_of_hamiltonian_is_flow_invariant() {
        let m = cp2_aniso();
        let p = OrbitPoint::new(m.polytope(), vec![0.2, 0.3], vec![0.4, 5.0]).unwrap();
        assert_eq!(InvariantGauge.hamiltonian_derivative_of_beta(&m.phi, &p, 1e-3), 0.0);
        assert_relative_eq!(
            InvariantGauge.beta_of_hamiltonian(&m.phi, &p.x),
            0.2 * 0.4 + 0.3 * 1.2,
            epsilon = 1e-15
        );
        assert_eq!(InvariantGauge.beta_of_fundamental(&p.x, 1), 0.3);
    }

    #[test]
    fn decay_curve_examples() {
        let m = cp1_unit();
        let grid: Vec<f64> = (0..=20).map(|k| 10.0 * 10f64.powf(k as f64 / 10.0)).collect();
        let c = polarization_decay_curve(&m, &[0.5], &grid).unwrap();
        assert!((c.slope + 1.0).abs() < 0.1, "slope {}", c.slope);
        assert!(c.monotone);
        assert!(c.samples.last().unwrap().1 < c.samples[0].1);
        let c0 = polarization_decay_curve(&m, &[0.5], &[0.0, 1.0]).unwrap();
        assert_relative_eq!(c0.samples[0].1, 0.5f64.atan(), epsilon = 1e-14);
        assert!(polarization_decay_curve(&m, &[0.5], &[2.0, 1.0]).is_err());
    }
}
