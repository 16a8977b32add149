//! Prequantum line bundle in the invariant gauge.
//!
//! On the open orbit the bundle is trivialised by a unitary frame `σ` with
//! `∇σ = -iβσ`, `β = Σ x_j dθ_j`. The holomorphic frame at time `t` is
//! `e^{-ρ_t/2}σ`, and the weight-λ section is `w^λ e^{-ρ_0/2}σ`. The quantum
//! operator `φ̂ = -i∇_{X_φ} + φ` acts on a weight-λ section by the scalar
//! `-f_λ(x)`, so `e^{tφ̂}` is the multiplier `e^{-t f_λ(x)}`.

use std::collections::BTreeMap;
use std::f64::consts::TAU;

use nalgebra::{Complex, DMatrix, DVector};
use rustfft::FftPlanner;
use serde::Serialize;

use crate::kahler::{dot, KahlerFlowState, OrbitPoint, ToricModel};
use crate::polytope::LatticePoint;
use crate::potential::{f_lambda_unchecked, legendre_inverse, min_eigenvalue, NewtonOptions, SmoothConvex};
use crate::quadrature::{integrate, integrate_peaked, QuadratureSpec};
use crate::{Error, Result};

type C64 = Complex<f64>;

/// Step used by the finite-difference convention checks.
pub const FD_STEP: f64 = 1e-3;

/// Weight-λ section flowed to time `t`; `|s_t| = e^{-A_{λ,t}}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeightSection {
    pub weight: LatticePoint,
    pub time: f64,
}

impl WeightSection {
    pub fn new(model: &ToricModel, weight: LatticePoint, time: f64) -> Result<Self> {
        Error::check_dim(model.dim(), weight.dim())?;
        check_time(time)?;
        let inside = model.polytope().contains(&weight.to_f64(), 1e-12)?;
        if !inside.inside {
            return Err(Error::InvalidArgument(format!(
                "weight {weight} is not a lattice point of the polytope"
            )));
        }
        Ok(WeightSection { weight, time })
    }

    pub fn lambda(&self) -> Vec<f64> {
        self.weight.to_f64()
    }

    /// `A_{λ,t}(x) = (x-λ)·∇g_0 - g_0 + t f_λ(x)`.
    pub fn amplitude_log(&self, model: &ToricModel, x: &[f64]) -> Result<f64> {
        model.polytope().require_interior(x)?;
        Ok(self.amplitude_log_unchecked(model, x))
    }

    pub(crate) fn amplitude_log_unchecked(&self, model: &ToricModel, x: &[f64]) -> f64 {
        let lambda = self.lambda();
        initial_amplitude_log(model, &lambda, x) + self.time * f_lambda_unchecked(&model.phi, &lambda, x)
    }

    /// `e^{-A} e^{iλ·θ}`.
    pub fn value(&self, model: &ToricModel, p: &OrbitPoint) -> Result<C64> {
        let a = self.amplitude_log(model, &p.x)?;
        let phase = dot(&self.lambda(), &p.theta);
        Ok(C64::from_polar((-a).exp(), phase))
    }
}

fn check_time(t: f64) -> Result<()> {
    if t >= 0.0 && t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!(
            "flow time must be finite and nonnegative, got {t}"
        )))
    }
}

/// `F_{λ,0}(x) = (x-λ)·∇g_0(x) - g_0(x)`.
pub(crate) fn initial_amplitude_log(model: &ToricModel, lambda: &[f64], x: &[f64]) -> f64 {
    let y = model.g0.gradient(x);
    let shift: Vec<f64> = x.iter().zip(lambda).map(|(a, b)| a - b).collect();
    dot(&shift, y.as_slice()) - model.g0.value(x)
}

/// Multiplier route: `e^{tφ̂}` multiplies by `e^{-t f_λ}`.
pub fn flow_section(s0: &WeightSection, t: f64) -> Result<WeightSection> {
    check_time(t)?;
    Ok(WeightSection {
        weight: s0.weight.clone(),
        time: s0.time + t,
    })
}

/// Geometric route: `(ψ_t^* w^λ)·e^{-ρ_t/2}σ`, with `ψ_t^* w^λ =
/// e^{λ·(∇g_0 + t∇φ) + iλ·θ}`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PullbackSection {
    pub weight: LatticePoint,
    pub time: f64,
}

pub fn flow_section_pullback(s0: &WeightSection, t: f64) -> Result<PullbackSection> {
    check_time(t)?;
    Ok(PullbackSection {
        weight: s0.weight.clone(),
        time: s0.time + t,
    })
}

impl PullbackSection {
    /// `log|ψ_t^* w^λ|`.
    pub fn pullback_log(&self, model: &ToricModel, x: &[f64]) -> Result<f64> {
        model.polytope().require_interior(x)?;
        let y = model.g0.gradient(x) + self.time * model.phi.gradient(x);
        Ok(dot(&self.weight.to_f64(), y.as_slice()))
    }

    /// `log|e^{-ρ_t/2}σ|`.
    pub fn frame_log(&self, model: &ToricModel, x: &[f64]) -> Result<f64> {
        Ok(-0.5 * model.at(self.time)?.kahler_potential(x)?)
    }

    /// Logarithm of the modulus of the section, i.e. `-A` by the other
    /// route.
    pub fn log_modulus(&self, model: &ToricModel, x: &[f64]) -> Result<f64> {
        Ok(self.pullback_log(model, x)? + self.frame_log(model, x)?)
    }

    pub fn value(&self, model: &ToricModel, p: &OrbitPoint) -> Result<C64> {
        let l = self.log_modulus(model, &p.x)?;
        Ok(C64::from_polar(l.exp(), dot(&self.weight.to_f64(), &p.theta)))
    }
}

/// Largest relative discrepancy between the two routes at `points`.
pub fn route_residual(model: &ToricModel, s0: &WeightSection, t: f64, points: &[Vec<f64>]) -> Result<f64> {
    let a = flow_section(s0, t)?;
    let b = flow_section_pullback(s0, t)?;
    let mut worst = 0.0f64;
    for x in points {
        let la = -a.amplitude_log(model, x)?;
        let lb = b.log_modulus(model, x)?;
        worst = worst.max((lb - la).exp_m1().abs());
    }
    Ok(worst)
}

/// The holomorphic frame `e^{-ρ_t/2}σ` at one flow time.
#[derive(Debug, Clone, Copy)]
pub struct GaugeSectionFrame<'a> {
    pub state: KahlerFlowState<'a>,
}

struct FlowedSymplectic<'a>(KahlerFlowState<'a>);

impl SmoothConvex for FlowedSymplectic<'_> {
    fn dim(&self) -> usize {
        self.0.model.dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.0.model.g0.value(x) + self.0.t * self.0.model.phi.value(x)
    }
    fn gradient(&self, x: &[f64]) -> DVector<f64> {
        self.0.model.g0.gradient(x) + self.0.t * self.0.model.phi.gradient(x)
    }
    fn hessian(&self, x: &[f64]) -> DMatrix<f64> {
        self.0.model.g0.hessian(x) + self.0.t * self.0.model.phi.hessian(x)
    }
    fn in_domain(&self, x: &[f64]) -> bool {
        self.0.model.polytope().is_interior(x)
    }
}

impl<'a> GaugeSectionFrame<'a> {
    pub fn new(model: &'a ToricModel, t: f64) -> Result<Self> {
        Ok(GaugeSectionFrame { state: model.at(t)? })
    }

    /// `log|e^{-ρ_t/2}σ| = -ρ_t(x)/2`.
    pub fn log_modulus(&self, x: &[f64]) -> Result<f64> {
        Ok(-0.5 * self.state.kahler_potential(x)?)
    }

    /// `max_j |∇_{∂/∂z̄_j}(e^{-ρ_t/2}σ)| / |e^{-ρ_t/2}σ|`, with
    /// `z_j = y_j + iθ_j`, `y = ∇g_t(x)`. The `y`-derivative is a
    /// five-point difference, each stencil point located by Newton on `g_t`.
    pub fn holomorphicity_residual(&self, x: &[f64], h: f64) -> Result<f64> {
        let model = self.state.model;
        model.polytope().require_interior(x)?;
        let g = FlowedSymplectic(self.state);
        let y0 = g.gradient(x);
        let opts = NewtonOptions {
            tolerance: 1e-14,
            max_iterations: 100,
        };
        let half_rho = |y: &DVector<f64>| -> Result<f64> {
            let xs = legendre_inverse(&g, y.as_slice(), x, opts)?;
            Ok(0.5 * self.state.kahler_potential_unchecked(&xs))
        };
        let mut worst = 0.0f64;
        for j in 0..model.dim() {
            let mut vals = [0.0; 4];
            for (slot, k) in [-2.0, -1.0, 1.0, 2.0].iter().enumerate() {
                let mut y = y0.clone();
                y[j] += k * h;
                vals[slot] = half_rho(&y)?;
            }
            let d = (vals[0] - 8.0 * vals[1] + 8.0 * vals[2] - vals[3]) / (12.0 * h);
            // ½(∂_y + i∂_θ) of e^{-ρ/2}, plus ½x_j from ∇_{∂θ_j}σ = -ix_jσ
            worst = worst.max(0.5 * (x[j] - d).abs());
        }
        Ok(worst)
    }
}

/// Result of applying `∇_{ξ#} + iμ^ξ` to a weight section.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KostantReport {
    pub eigenvalue: (f64, f64),
    pub expected: (f64, f64),
    pub residual: f64,
}

/// Applies `∇_{ξ#} + iξ·μ` pointwise, with `ξ# = Σ ξ_j ∂_{θ_j}` and the
/// derivative in `θ` taken by a five-point difference.
pub fn kostant_operator(
    model: &ToricModel,
    xi: &[f64],
    s: &WeightSection,
    samples: &[OrbitPoint],
) -> Result<KostantReport> {
    Error::check_dim(model.dim(), xi.len())?;
    let expected = C64::new(0.0, dot(xi, &s.lambda()));
    let gauge = crate::kahler::InvariantGauge;
    let h = FD_STEP;
    let mut worst = 0.0f64;
    let mut acc = C64::new(0.0, 0.0);
    for p in samples {
        let at = |k: f64| -> Result<C64> {
            let theta: Vec<f64> = p.theta.iter().zip(xi).map(|(a, b)| a + k * h * b).collect();
            let q = OrbitPoint { x: p.x.clone(), theta };
            s.value(model, &q)
        };
        let f = s.value(model, p)?;
        let deriv = (at(-2.0)? - at(-1.0)? * 8.0 + at(1.0)? * 8.0 - at(2.0)?) / (12.0 * h);
        // ∇_{ξ#}(Fσ) = (ξ#F - iβ(ξ#)F)σ
        let beta = gauge.beta(p, xi);
        let mu_xi = dot(xi, &p.x);
        let out = deriv - C64::new(0.0, beta) * f + C64::new(0.0, mu_xi) * f;
        let ev = out / f;
        worst = worst.max((ev - expected).norm());
        acc += ev;
    }
    let mean = if samples.is_empty() {
        expected
    } else {
        acc / samples.len() as f64
    };
    Ok(KostantReport {
        eigenvalue: (mean.re, mean.im),
        expected: (expected.re, expected.im),
        residual: worst,
    })
}

/// Coefficient of `φ̂σ = (φ - β(X_φ))σ`.
pub fn frame_quantum_coefficient(model: &ToricModel, x: &[f64]) -> Result<f64> {
    model.polytope().require_interior(x)?;
    Ok(-model.phi.f_origin(x))
}

/// Coefficient of `φ̂ s = -f_λ s` for a weight-λ section.
pub fn weight_quantum_coefficient(model: &ToricModel, lambda: &[f64], x: &[f64]) -> Result<f64> {
    Ok(-model.phi.f_lambda(lambda, x)?)
}

/// Values `F(x_i, θ_a)` of a section on `x`-samples times a uniform θ-grid
/// with `points` nodes per circle (row-major over the axes).
#[derive(Debug, Clone, PartialEq)]
pub struct ThetaGridSection {
    dim: usize,
    points: usize,
    xs: Vec<Vec<f64>>,
    values: Vec<Vec<C64>>,
}

impl ThetaGridSection {
    pub fn zeros(dim: usize, points: usize, xs: Vec<Vec<f64>>) -> Result<Self> {
        if points == 0 {
            return Err(Error::InvalidArgument("θ-grid needs at least one point".into()));
        }
        for x in &xs {
            Error::check_dim(dim, x.len())?;
        }
        let len = points.pow(dim as u32);
        let values = vec![vec![C64::new(0.0, 0.0); len]; xs.len()];
        Ok(ThetaGridSection {
            dim,
            points,
            xs,
            values,
        })
    }

    /// Samples `Σ c_k s_k` on the grid.
    pub fn from_sections(
        model: &ToricModel,
        xs: Vec<Vec<f64>>,
        points: usize,
        terms: &[(C64, WeightSection)],
    ) -> Result<Self> {
        let mut out = Self::zeros(model.dim(), points, xs)?;
        for (i, x) in out.xs.clone().iter().enumerate() {
            for (c, s) in terms {
                let amp = (-s.amplitude_log(model, x)?).exp();
                let lambda = s.lambda();
                for a in 0..out.values[i].len() {
                    let theta = out.angles(a);
                    out.values[i][a] += c * C64::from_polar(amp, dot(&lambda, &theta));
                }
            }
        }
        Ok(out)
    }

    pub fn xs(&self) -> &[Vec<f64>] {
        &self.xs
    }

    pub fn values(&self) -> &[Vec<C64>] {
        &self.values
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn angles(&self, flat: usize) -> Vec<f64> {
        let mut rest = flat;
        let mut out = vec![0.0; self.dim];
        for j in (0..self.dim).rev() {
            out[j] = TAU * (rest % self.points) as f64 / self.points as f64;
            rest /= self.points;
        }
        out
    }

    fn same_layout(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim || self.points != other.points || self.xs != other.xs {
            return Err(Error::InvalidArgument("grid sections live on different grids".into()));
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.same_layout(other)?;
        let mut out = self.clone();
        for (row, orow) in out.values.iter_mut().zip(&other.values) {
            for (v, o) in row.iter_mut().zip(orow) {
                *v += o;
            }
        }
        Ok(out)
    }

    pub fn scale(&self, c: C64) -> Self {
        let mut out = self.clone();
        for row in &mut out.values {
            for v in row.iter_mut() {
                *v *= c;
            }
        }
        out
    }

    /// `max |a - b| / max |a|`.
    pub fn relative_distance(&self, other: &Self) -> Result<f64> {
        self.same_layout(other)?;
        let mut diff = 0.0f64;
        let mut size = 0.0f64;
        for (row, orow) in self.values.iter().zip(&other.values) {
            for (v, o) in row.iter().zip(orow) {
                diff = diff.max((v - o).norm());
                size = size.max(v.norm());
            }
        }
        Ok(if size > 0.0 { diff / size } else { diff })
    }

    /// Signed frequency of flat index `a` along each axis.
    fn frequencies(&self, flat: usize) -> Vec<f64> {
        let n = self.points;
        let mut rest = flat;
        let mut out = vec![0.0; self.dim];
        for j in (0..self.dim).rev() {
            let k = rest % n;
            rest /= n;
            out[j] = if 2 * k == n {
                f64::NAN
            } else if 2 * k > n {
                k as f64 - n as f64
            } else {
                k as f64
            };
        }
        out
    }

    /// Multiplies each Fourier mode by `factor(x, k)`; the Nyquist mode of an
    /// even grid is passed `NaN` frequencies and is dropped.
    fn apply_modes(&self, factor: impl Fn(&[f64], &[f64]) -> C64) -> Self {
        let mut planner = FftPlanner::<f64>::new();
        let fwd = planner.plan_fft_forward(self.points);
        let inv = planner.plan_fft_inverse(self.points);
        let norm = (self.points.pow(self.dim as u32)) as f64;
        let mut out = self.clone();
        for (x, row) in self.xs.iter().zip(out.values.iter_mut()) {
            for axis in 0..self.dim {
                fft_axis(row, self.dim, self.points, axis, fwd.as_ref());
            }
            for (a, v) in row.iter_mut().enumerate() {
                let k = self.frequencies(a);
                *v = if k.iter().any(|q| q.is_nan()) {
                    C64::new(0.0, 0.0)
                } else {
                    *v * factor(x, &k) / norm
                };
            }
            for axis in 0..self.dim {
                fft_axis(row, self.dim, self.points, axis, inv.as_ref());
            }
        }
        out
    }
}

fn fft_axis(data: &mut [C64], dim: usize, n: usize, axis: usize, fft: &dyn rustfft::Fft<f64>) {
    let stride = n.pow((dim - 1 - axis) as u32);
    let block = stride * n;
    let mut line = vec![C64::new(0.0, 0.0); n];
    for start in (0..data.len()).step_by(block) {
        for off in 0..stride {
            for (k, l) in line.iter_mut().enumerate() {
                *l = data[start + off + k * stride];
            }
            fft.process(&mut line);
            for (k, l) in line.iter().enumerate() {
                data[start + off + k * stride] = *l;
            }
        }
    }
}

/// One application of `φ̂ = -i∇_{X_φ} + φ`, with `X_φ = Σ ∂_jφ ∂_{θ_j}`
/// and a spectral `θ`-derivative.
pub fn quantum_operator(model: &ToricModel, s: &ThetaGridSection) -> Result<ThetaGridSection> {
    Error::check_dim(model.dim(), s.dim)?;
    let phi = &model.phi;
    Ok(s.apply_modes(|x, k| {
        let g = phi.gradient(x);
        // -i·(i k·∇φ) + φ - x·∇φ
        C64::new(dot(k, g.as_slice()) + phi.value(x) - dot(x, g.as_slice()), 0.0)
    }))
}

/// `e^{tφ̂}` on a grid section: mode `k` is multiplied by `e^{-t f_k}`.
pub fn flow_grid(model: &ToricModel, s: &ThetaGridSection, t: f64) -> Result<ThetaGridSection> {
    check_time(t)?;
    Error::check_dim(model.dim(), s.dim)?;
    let phi = &model.phi;
    Ok(s.apply_modes(|x, k| C64::new((-t * f_lambda_unchecked(phi, k, x)).exp(), 0.0)))
}

/// Partial sum `Σ_{k<terms} t^k φ̂^k s / k!`.
pub fn lie_series(model: &ToricModel, s: &ThetaGridSection, t: f64, terms: usize) -> Result<ThetaGridSection> {
    let mut sum = s.scale(C64::new(0.0, 0.0));
    let mut term = s.clone();
    for k in 0..terms {
        sum = sum.add(&term)?;
        term = quantum_operator(model, &term)?.scale(C64::new(t / (k + 1) as f64, 0.0));
    }
    Ok(sum)
}

/// Fourier coefficients `c_λ(x_i)` of the candidate weights. Components that
/// vanish to rounding are omitted.
pub fn weight_decompose(s: &ThetaGridSection, candidates: &[LatticePoint]) -> Result<BTreeMap<LatticePoint, Vec<C64>>> {
    let n = s.points as i64;
    for (i, a) in candidates.iter().enumerate() {
        Error::check_dim(s.dim, a.dim())?;
        for b in &candidates[i + 1..] {
            if a != b && a.0.iter().zip(&b.0).all(|(p, q)| (p - q).rem_euclid(n) == 0) {
                return Err(Error::Aliasing {
                    first: a.0.clone(),
                    second: b.0.clone(),
                    points: s.points,
                });
            }
        }
    }
    let len = s.points.pow(s.dim as u32);
    let mut coeffs = BTreeMap::new();
    let mut scale = 0.0f64;
    for lam in candidates {
        let lf = lam.to_f64();
        let phases: Vec<C64> = (0..len)
            .map(|a| C64::from_polar(1.0 / len as f64, -dot(&lf, &s.angles(a))))
            .collect();
        let comp: Vec<C64> = s
            .values
            .iter()
            .map(|row| row.iter().zip(&phases).map(|(v, p)| v * p).sum())
            .collect();
        scale = comp.iter().map(|c| c.norm()).fold(scale, f64::max);
        coeffs.insert(lam.clone(), comp);
    }
    let floor = 1e-13 * scale;
    coeffs.retain(|_, comp| comp.iter().any(|c| c.norm() > floor));
    Ok(coeffs)
}

/// `(2π)^n ∫_P e^{-2A_{λ,t}} dx`.
pub fn section_norm_sq(model: &ToricModel, s: &WeightSection, spec: &QuadratureSpec) -> Result<f64> {
    Ok(log_section_norm_sq(model, s, spec)?.exp())
}

/// Logarithm of [`section_norm_sq`], integrated with the `t f_λ(λ)` part of
/// the exponent factored out.
pub fn log_section_norm_sq(model: &ToricModel, s: &WeightSection, spec: &QuadratureSpec) -> Result<f64> {
    let lambda = s.lambda();
    let n = model.dim();
    let t = s.time;
    let shift = -t * model.phi.value(&lambda);
    let integrand = |x: &[f64]| (-2.0 * (s.amplitude_log_unchecked(model, x) - shift)).exp();
    let poly = model.polytope();
    let h = min_eigenvalue(&model.phi.hessian(&lambda));
    let width = 1.0 / (2.0 * t * h).max(1e-300).sqrt();
    let cell = 1.0 / spec.resolution as f64;
    let r = if poly.is_interior(&lambda) && width < 4.0 * cell {
        integrate_peaked(integrand, poly, &lambda, width, spec)?
    } else {
        integrate(integrand, poly, spec)?
    };
    Ok(r.value.ln() + 2.0 * shift + n as f64 * TAU.ln())
}

/// Outcome of the two-chart check on CP¹.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GluingReport {
    pub residual: f64,
    pub samples: usize,
    pub corrupted: bool,
}

/// Compares the local representatives of `e^{tφ̂}s` on the charts
/// `U = {w}` and `V = {w' = 1/w}` of the segment `[0, d]`. In `V` the
/// coordinates are `x' = d - x`, `θ' = -θ`, the gauge is `β_V = (x-d)dθ`
/// and the transition is `h_UV = dθ`. With `corrupt` the sign of `h_UV`
/// is flipped.
pub fn gluing_check_cp1(
    model: &ToricModel,
    weight: i64,
    t: f64,
    samples: &[(f64, f64)],
    corrupt: bool,
) -> Result<GluingReport> {
    check_time(t)?;
    let poly = model.polytope();
    let (lo, hi) = poly.bounding_box();
    if poly.dim() != 1 || lo[0] != 0.0 || hi[0].fract() != 0.0 {
        return Err(Error::Unsupported(
            "the two-chart check needs a segment [0, d] with integer d".into(),
        ));
    }
    let d = hi[0];
    let lam = weight as f64;
    if !(0.0..=d).contains(&lam) {
        return Err(Error::InvalidArgument(format!("weight {weight} outside [0, {d}]")));
    }
    let g0 = &model.g0;
    let phi = &model.phi;
    let mut worst = 0.0f64;
    for &(x, theta) in samples {
        poly.require_interior(&[x])?;
        // chart U
        let y = g0.gradient(&[x])[0];
        let rho_u = 2.0 * (x * y - g0.value(&[x]));
        let dphi = phi.gradient(&[x])[0];
        let phi_x = phi.value(&[x]);
        let flow_u = t * lam * dphi + t * (phi_x - x * dphi);
        let gu = C64::from_polar((lam * y - 0.5 * rho_u + flow_u).exp(), lam * theta);
        // chart V, all quantities expressed through x' = d - x
        let xv = d - x;
        let gv0 = g0.value(&[d - xv]);
        let yv = -g0.gradient(&[d - xv])[0];
        let thv = -theta;
        let rho_v = 2.0 * (xv * yv - gv0);
        let dphi_v = -phi.gradient(&[d - xv])[0];
        let phi_v = phi.value(&[d - xv]);
        let mu = d - lam;
        let flow_v = t * mu * dphi_v + t * (phi_v - xv * dphi_v);
        let gv = C64::from_polar((mu * yv - 0.5 * rho_v + flow_v).exp(), mu * thv);
        let h = if corrupt { -d * theta } else { d * theta };
        let r = (gu - C64::from_polar(1.0, h) * gv).norm() / gu.norm();
        worst = worst.max(r);
    }
    Ok(GluingReport {
        residual: worst,
        samples: samples.len(),
        corrupted: corrupt,
    })
}

/// Fiber scale of `z^t` above a base point.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BundleLiftSample {
    pub x: Vec<f64>,
    pub theta: Vec<f64>,
    pub scale: f64,
}

/// `e^{t(φ - β(X_φ))} = e^{-t f_0(x)}`.
pub fn lift_scale(model: &ToricModel, p: &OrbitPoint, t: f64) -> Result<BundleLiftSample> {
    check_time(t)?;
    model.polytope().require_interior(&p.x)?;
    Ok(BundleLiftSample {
        x: p.x.clone(),
        theta: p.theta.clone(),
        scale: (-t * model.phi.f_origin(&p.x)).exp(),
    })
}

/// Compares `s̃_0` at the lifted and flowed fiber point with the
/// equivariant function of `e^{tφ̂}s_0`. The base point moves by `ψ_t`
/// (Newton inverse of `∇g_0`), the fiber by [`lift_scale`].
pub fn lift_section_consistency(model: &ToricModel, s0: &WeightSection, t: f64, samples: &[OrbitPoint]) -> Result<f64> {
    lift_residual(model, s0, t, samples, true)
}

/// Negative control for [`lift_section_consistency`]: the fiber scale is
/// dropped, so the residual is O(1) once `t > 0`.
pub fn lift_section_consistency_unscaled(
    model: &ToricModel,
    s0: &WeightSection,
    t: f64,
    samples: &[OrbitPoint],
) -> Result<f64> {
    lift_residual(model, s0, t, samples, false)
}

fn lift_residual(model: &ToricModel, s0: &WeightSection, t: f64, samples: &[OrbitPoint], scaled: bool) -> Result<f64> {
    if s0.time != 0.0 {
        return Err(Error::InvalidArgument("lift check starts from a time-0 section".into()));
    }
    let state = model.at(t)?;
    let flowed = flow_section(s0, t)?;
    let lambda = s0.lambda();
    let mut worst = 0.0f64;
    for p in samples {
        // J_0 log-modulus of ψ_t(p) is ∇g_0 + t∇φ at p by construction; the
        // image itself can sit closer to ∂P than f64 resolves at large t
        let y = state.flowed_potential(&p.x)?.gradient;
        let w_pow = dot(&lambda, y.as_slice());
        let phase = dot(&lambda, &p.theta);
        let frame = -0.5 * model.rho0(&p.x);
        let scale = if scaled { lift_scale(model, p, t)?.scale } else { 1.0 };
        let lhs = C64::from_polar(scale * (w_pow + frame).exp(), phase);
        let rhs = flowed.value(model, p)?;
        worst = worst.max((lhs - rhs).norm() / rhs.norm());
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::polytope::DelzantPolytope;
    use crate::potential::ConvexPotential;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn lp(v: &[i64]) -> LatticePoint {
        LatticePoint(v.to_vec())
    }

    fn unit() -> ToricModel {
        ToricModel::standard(DelzantPolytope::segment(1))
    }

    fn cp1() -> ToricModel {
        ToricModel::standard(DelzantPolytope::segment(2))
    }

    fn cp2() -> ToricModel {
        ToricModel::standard(DelzantPolytope::simplex(2, 1))
    }

    fn pt(x: &[f64], th: &[f64]) -> OrbitPoint {
        OrbitPoint {
            x: x.to_vec(),
            theta: th.to_vec(),
        }
    }

    #[test]
    fn amplitude_at_time_zero() {
        let m = unit();
        // e^{-2F} = x^λ (1-x)^{1-λ}
        for lam in [0i64, 1] {
            let s = WeightSection::new(&m, lp(&[lam]), 0.0).unwrap();
            for x in [0.1, 0.5, 0.77] {
                let a = s.amplitude_log(&m, &[x]).unwrap();
                let want = x.powi(lam as i32) * (1.0 - x).powi(1 - lam as i32);
                assert_relative_eq!((-2.0 * a).exp(), want, max_relative = 1e-13);
            }
        }
        assert!(WeightSection::new(&m, lp(&[2]), 0.0).is_err());
        assert!(WeightSection::new(&m, lp(&[0]), -1.0).is_err());
    }

    #[test]
    fn multiplier_examples() {
        let m = unit();
        let s = WeightSection::new(&m, lp(&[0]), 0.0).unwrap();
        let f = flow_section(&s, 1.0).unwrap();
        assert_eq!(f.weight, s.weight);
        let ratio = (s.amplitude_log(&m, &[0.5]).unwrap() - f.amplitude_log(&m, &[0.5]).unwrap()).exp();
        assert_relative_eq!(ratio, (-0.125f64).exp(), epsilon = 1e-14);
        assert_relative_eq!(ratio, 0.88250, epsilon = 1e-5);
        assert_eq!(flow_section(&s, 0.0).unwrap(), s);
        let a = flow_section(&flow_section(&s, 0.3).unwrap(), 1.1).unwrap();
        let b = flow_section(&s, 1.4).unwrap();
        let (la, lb) = (
            a.amplitude_log(&m, &[0.3]).unwrap(),
            b.amplitude_log(&m, &[0.3]).unwrap(),
        );
        assert!((la - lb).abs() < 1e-12);
    }

    #[test]
    fn pullback_example_on_unit_segment() {
        let m = unit();
        let s = WeightSection::new(&m, lp(&[1]), 0.0).unwrap();
        let pb = flow_section_pullback(&s, 1.0).unwrap();
        let base = flow_section_pullback(&s, 0.0).unwrap();
        let x = [0.5];
        let pull = pb.pullback_log(&m, &x).unwrap() - base.pullback_log(&m, &x).unwrap();
        let frame = pb.frame_log(&m, &x).unwrap() - base.frame_log(&m, &x).unwrap();
        assert_relative_eq!(pull, 0.5, epsilon = 1e-14);
        assert_relative_eq!(frame, -0.125, epsilon = 1e-14);
        // f_1(0.5) = 0.125 - 0.5
        assert_relative_eq!(pull + frame, 0.375, epsilon = 1e-14);
        let direct = s.amplitude_log(&m, &x).unwrap() - flow_section(&s, 1.0).unwrap().amplitude_log(&m, &x).unwrap();
        assert_relative_eq!(direct, 0.375, epsilon = 1e-14);
    }

    #[test]
    fn routes_agree_for_zero_weight() {
        let m = cp1();
        let s = WeightSection::new(&m, lp(&[0]), 0.0).unwrap();
        let pb = flow_section_pullback(&s, 2.0).unwrap();
        assert_eq!(
            pb.pullback_log(&m, &[0.7]).unwrap(),
            0.0 * pb.pullback_log(&m, &[0.7]).unwrap()
        );
        let r = route_residual(&m, &s, 2.0, &[vec![0.3], vec![1.0], vec![1.9]]).unwrap();
        assert!(r < 1e-12);
    }

    proptest! {
        #[test]
        fn routes_agree_on_simplex(lam in 0usize..6, x0 in 0.02f64..0.96, frac in 0.02f64..0.98, t in 0.0f64..10.0) {
            let m = ToricModel::standard(DelzantPolytope::simplex(2, 2));
            let lattice = m.polytope().lattice_points();
            let s = WeightSection::new(&m, lattice[lam].clone(), 0.0).unwrap();
            let x = vec![2.0 * x0, (2.0 - 2.0 * x0) * frac];
            prop_assume!(m.polytope().is_interior(&x));
            let r = route_residual(&m, &s, t, &[x]).unwrap();
            prop_assert!(r < 1e-12, "residual {r}");
        }
    }

    #[test]
    fn frame_is_holomorphic() {
        for m in [cp1(), cp2()] {
            for t in [0.0, 1.0, 5.0] {
                let frame = GaugeSectionFrame::new(&m, t).unwrap();
                let pts: Vec<Vec<f64>> = if m.dim() == 1 {
                    vec![vec![0.2], vec![1.0], vec![1.7]]
                } else {
                    vec![vec![0.2, 0.3], vec![0.6, 0.1], vec![0.25, 0.25]]
                };
                for x in pts {
                    let r = frame.holomorphicity_residual(&x, FD_STEP).unwrap();
                    assert!(r < 1e-8, "t={t} x={x:?} residual {r}");
                }
            }
        }
    }

    #[test]
    fn kostant_eigenvalues() {
        let m = unit();
        let samples = vec![pt(&[0.3], &[0.4]), pt(&[0.8], &[5.0])];
        let s1 = WeightSection::new(&m, lp(&[1]), 0.0).unwrap();
        let r = kostant_operator(&m, &[1.0], &s1, &samples).unwrap();
        assert!(r.residual < 1e-10);
        assert_relative_eq!(r.eigenvalue.1, 1.0, epsilon = 1e-10);
        let r2 = kostant_operator(&m, &[2.0], &s1, &samples).unwrap();
        assert_relative_eq!(r2.eigenvalue.1, 2.0 * r.eigenvalue.1, epsilon = 1e-10);
        let s0 = WeightSection::new(&m, lp(&[0]), 0.7).unwrap();
        let r0 = kostant_operator(&m, &[0.37], &s0, &samples).unwrap();
        assert!(r0.eigenvalue.0.abs() < 1e-10 && r0.eigenvalue.1.abs() < 1e-10);
        let m2 = cp2();
        let s = WeightSection::new(&m2, lp(&[1, 0]), 2.0).unwrap();
        let r = kostant_operator(&m2, &[0.5, -1.5], &s, &[pt(&[0.2, 0.5], &[1.0, 2.0])]).unwrap();
        assert!(r.residual < 1e-10);
        assert_relative_eq!(r.expected.1, 0.5);
    }

    #[test]
    fn quantum_operator_coefficients() {
        let m = unit();
        assert_relative_eq!(frame_quantum_coefficient(&m, &[0.5]).unwrap(), -0.125, epsilon = 1e-15);
        let c = weight_quantum_coefficient(&m, &[1.0], &[1.0 - 1e-9]).unwrap();
        assert_relative_eq!(c, 0.5, epsilon = 1e-8);
        let m2 = cp1();
        let c = weight_quantum_coefficient(&m2, &[1.0], &[1.0]).unwrap();
        assert_relative_eq!(c, m2.phi.eval(&[1.0]).unwrap(), epsilon = 1e-15);
    }

    fn grid_pair(m: &ToricModel, t: f64) -> (WeightSection, WeightSection, ThetaGridSection) {
        let a = WeightSection::new(m, lp(&[0]), t).unwrap();
        let b = WeightSection::new(m, lp(&[1]), t).unwrap();
        let xs = vec![vec![0.2], vec![0.9], vec![1.6]];
        let g = ThetaGridSection::from_sections(
            m,
            xs,
            8,
            &[(C64::new(1.0, 0.0), a.clone()), (C64::new(0.5, -2.0), b.clone())],
        )
        .unwrap();
        (a, b, g)
    }

    #[test]
    fn grid_operator_matches_pointwise_coefficient() {
        let m = cp1();
        let s = WeightSection::new(&m, lp(&[1]), 0.0).unwrap();
        let g = ThetaGridSection::from_sections(
            &m,
            vec![vec![0.2], vec![0.9], vec![1.6]],
            8,
            &[(C64::new(1.0, 0.0), s.clone())],
        )
        .unwrap();
        let q = quantum_operator(&m, &g).unwrap();
        for (i, x) in g.xs().iter().enumerate() {
            let c = weight_quantum_coefficient(&m, &[1.0], x).unwrap();
            for (a, v) in q.values()[i].iter().enumerate() {
                assert!((v - g.values()[i][a] * c).norm() < 1e-13);
            }
        }
        let (_, _, pair) = grid_pair(&m, 0.0);
        let lin = quantum_operator(&m, &pair.add(&g).unwrap()).unwrap();
        let sep = quantum_operator(&m, &pair).unwrap().add(&q).unwrap();
        assert!(lin.relative_distance(&sep).unwrap() < 1e-13);
    }

    #[test]
    fn lie_series_converges_to_closed_form() {
        let m = cp1();
        let (_, _, g) = grid_pair(&m, 0.0);
        let exact = flow_grid(&m, &g, 0.1).unwrap();
        let e5 = lie_series(&m, &g, 0.1, 5).unwrap().relative_distance(&exact).unwrap();
        let e15 = lie_series(&m, &g, 0.1, 15).unwrap().relative_distance(&exact).unwrap();
        assert!(e15 < 1e-13, "{e15}");
        assert!(e5 > e15);
    }

    #[test]
    fn decomposition_commutes_with_flow() {
        let m = cp1();
        let (a, b, g) = grid_pair(&m, 0.0);
        let candidates = m.polytope().lattice_points();
        let flowed = flow_grid(&m, &g, 2.0).unwrap();
        let comps = weight_decompose(&flowed, &candidates).unwrap();
        assert_eq!(comps.len(), 2);
        for (s, c) in [(a, C64::new(1.0, 0.0)), (b, C64::new(0.5, -2.0))] {
            let f = flow_section(&s, 2.0).unwrap();
            let comp = &comps[&s.weight];
            for (x, v) in g.xs().iter().zip(comp) {
                let want = c * (-f.amplitude_log(&m, x).unwrap()).exp();
                assert!((v - want).norm() <= 1e-12 * want.norm(), "{v} vs {want}");
            }
        }
        let single = ThetaGridSection::from_sections(
            &m,
            vec![vec![1.0]],
            8,
            &[(C64::new(1.0, 0.0), WeightSection::new(&m, lp(&[1]), 0.0).unwrap())],
        )
        .unwrap();
        let comps = weight_decompose(&single, &candidates).unwrap();
        assert_eq!(comps.keys().cloned().collect::<Vec<_>>(), vec![lp(&[1])]);
        let empty = ThetaGridSection::zeros(1, 8, vec![]).unwrap();
        assert!(weight_decompose(&empty, &candidates).unwrap().is_empty());
        assert!(weight_decompose(&g, &[]).unwrap().is_empty());
        let coarse = ThetaGridSection::zeros(1, 2, vec![vec![1.0]]).unwrap();
        assert!(matches!(
            weight_decompose(&coarse, &candidates),
            Err(Error::Aliasing { .. })
        ));
    }

    #[test]
    fn two_dimensional_grid_decomposition() {
        let m = ToricModel::standard(DelzantPolytope::simplex(2, 2));
        let terms: Vec<(C64, WeightSection)> = m
            .polytope()
            .lattice_points()
            .into_iter()
            .enumerate()
            .map(|(i, l)| (C64::new(1.0 + i as f64, 0.5), WeightSection::new(&m, l, 0.0).unwrap()))
            .collect();
        let g = ThetaGridSection::from_sections(&m, vec![vec![0.5, 0.7]], 6, &terms).unwrap();
        let flowed = flow_grid(&m, &g, 1.5).unwrap();
        let comps = weight_decompose(&flowed, &m.polytope().lattice_points()).unwrap();
        assert_eq!(comps.len(), 6);
        for (c, s) in &terms {
            let want = c * (-flow_section(s, 1.5).unwrap().amplitude_log(&m, &[0.5, 0.7]).unwrap()).exp();
            assert!((comps[&s.weight][0] - want).norm() <= 1e-12 * want.norm());
        }
    }

    #[test]
    fn norm_examples() {
        let m = unit();
        let spec = QuadratureSpec::default();
        let n0 = section_norm_sq(&m, &WeightSection::new(&m, lp(&[0]), 0.0).unwrap(), &spec).unwrap();
        let n1 = section_norm_sq(&m, &WeightSection::new(&m, lp(&[1]), 0.0).unwrap(), &spec).unwrap();
        assert_relative_eq!(n0, std::f64::consts::PI, max_relative = 1e-6);
        assert_relative_eq!(n1, n0, max_relative = 1e-9);
        // x (3-x)^2 on [0, 3] integrates to 81/12
        let m3 = ToricModel::standard(DelzantPolytope::segment(3));
        let n = section_norm_sq(&m3, &WeightSection::new(&m3, lp(&[1]), 0.0).unwrap(), &spec).unwrap();
        assert_relative_eq!(n, TAU * 81.0 / 12.0, max_relative = 1e-6);
    }

    #[test]
    fn log_norm_is_convex_and_nonincreasing_after_shift() {
        let m = cp1();
        let spec = QuadratureSpec::default().with_tol(1e-9);
        let ts = [0.0, 1.0, 2.0, 4.0, 6.0, 8.0];
        let vals: Vec<f64> = ts
            .iter()
            .map(|&t| {
                let s = WeightSection::new(&m, lp(&[1]), t).unwrap();
                log_section_norm_sq(&m, &s, &spec).unwrap() - 2.0 * t * m.phi.value(&[1.0])
            })
            .collect();
        for w in vals.windows(2) {
            assert!(w[1] < w[0]);
        }
        for i in 1..ts.len() - 1 {
            let (a, b, c) = (ts[i - 1], ts[i], ts[i + 1]);
            let interp = vals[i - 1] + (vals[i + 1] - vals[i - 1]) * (b - a) / (c - a);
            assert!(vals[i] <= interp + 1e-9);
        }
    }

    #[test]
    fn gluing_on_cp1() {
        let m = cp1();
        let samples = [(0.3, 0.4), (1.0, 2.5), (1.8, 5.9)];
        for lam in [0, 1, 2] {
            for t in [0.0, 1.0, 3.0] {
                let r = gluing_check_cp1(&m, lam, t, &samples, false).unwrap();
                assert!(r.residual < 1e-10, "λ={lam} t={t}: {}", r.residual);
            }
        }
        let bad = gluing_check_cp1(&m, 1, 3.0, &samples, true).unwrap();
        assert!(bad.residual > 0.1);
        assert!(gluing_check_cp1(&cp2(), 0, 1.0, &[], false).is_err());
        let unit = unit();
        let r = gluing_check_cp1(&unit, 1, 3.0, &[(0.5, 1.0)], false).unwrap();
        assert!(r.residual < 1e-10);
    }

    #[test]
    fn lift_scale_examples() {
        let m = unit();
        let p = pt(&[0.5], &[0.0]);
        assert_eq!(lift_scale(&m, &p, 0.0).unwrap().scale, 1.0);
        assert_relative_eq!(
            lift_scale(&m, &p, 1.0).unwrap().scale,
            (-0.125f64).exp(),
            epsilon = 1e-15
        );
        let (a, b) = (
            lift_scale(&m, &p, 0.4).unwrap().scale,
            lift_scale(&m, &p, 1.1).unwrap().scale,
        );
        assert_relative_eq!(a * b, lift_scale(&m, &p, 1.5).unwrap().scale, max_relative = 1e-14);
        assert!(lift_scale(&m, &pt(&[1.0], &[0.0]), 1.0).is_err());
    }

    #[test]
    fn lift_consistency() {
        let m = cp1();
        let samples: Vec<OrbitPoint> = [(0.2, 1.0), (0.9, 3.0), (1.5, 0.1), (1.9, 6.0)]
            .iter()
            .map(|&(x, th)| pt(&[x], &[th]))
            .collect();
        for lam in [0, 1, 2] {
            let s = WeightSection::new(&m, lp(&[lam]), 0.0).unwrap();
            assert!(lift_section_consistency(&m, &s, 0.0, &samples).unwrap() < 1e-14);
            for t in [0.5, 1.0, 2.0] {
                let r = lift_section_consistency(&m, &s, t, &samples).unwrap();
                assert!(r < 1e-10, "λ={lam} t={t}: {r}");
            }
        }
    }

    #[test]
    fn anisotropic_routes_and_frame() {
        let phi = ConvexPotential::quadratic(
            DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]),
            DVector::from_vec(vec![0.1, -0.3]),
            0.2,
        )
        .unwrap();
        let m = ToricModel::with_phi(DelzantPolytope::simplex(2, 2), phi).unwrap();
        let pts = vec![vec![0.3, 0.4], vec![1.2, 0.5]];
        for l in m.polytope().lattice_points() {
            let s = WeightSection::new(&m, l, 0.0).unwrap();
            assert!(route_residual(&m, &s, 3.0, &pts).unwrap() < 1e-12);
        }
        let frame = GaugeSectionFrame::new(&m, 2.0).unwrap();
        assert!(frame.holomorphicity_residual(&pts[0], FD_STEP).unwrap() < 1e-8);
    }
}
