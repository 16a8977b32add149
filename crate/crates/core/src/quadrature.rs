//! Error-controlled midpoint quadrature over polytope interiors.
//!
//! A mesh of axis-aligned cubes covers the polytope; cubes cut by the
//! boundary are clipped by recursive bisection, so integrands are only ever
//! evaluated at interior points. Successive uniform refinements of the mesh
//! give midpoint sums `M_k`; one Richardson step `R_k = (4M_k - M_{k-1})/3`
//! removes the `h²` term and `|R_k - R_{k-1}|` serves as error estimate.
//! Peak hints refine the mesh in geometric rings around a centre.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::fit::pairwise_sum;
use crate::polytope::{Cell, CellKind, DelzantPolytope, GridSample, DEFAULT_CLIP_DEPTH};
use crate::{Error, Result};

const CHUNK: usize = 4096;
/// Coarsest cell size used away from a peak by [`integrate_peaked`].
const PEAKED_FAR_RESOLUTION: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeakHint {
    pub center: Vec<f64>,
    pub width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuadratureSpec {
    /// Cells per unit length of the level-0 mesh.
    pub resolution: usize,
    /// Target error relative to the largest integral component.
    pub tol: f64,
    /// Maximum number of uniform refinements.
    pub max_depth: usize,
    /// Bisection depth for clipping boundary cells.
    pub clip_depth: usize,
    /// Evaluation budget for a single level.
    pub max_evaluations: usize,
    pub peaks: Vec<PeakHint>,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            resolution: 128,
            tol: 1e-10,
            max_depth: 6,
            clip_depth: DEFAULT_CLIP_DEPTH,
            max_evaluations: 1 << 22,
            peaks: Vec::new(),
        }
    }
}

impl QuadratureSpec {
    pub fn with_resolution(mut self, resolution: usize) -> Self {
        self.resolution = resolution;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_max_depth(mut self, depth: usize) -> Self {
        self.max_depth = depth;
        self
    }

    pub fn with_peak(mut self, center: Vec<f64>, width: f64) -> Self {
        self.peaks.push(PeakHint { center, width });
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.resolution < 4 {
            return Err(Error::InvalidArgument("quadrature resolution must be ≥ 4".into()));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument("quadrature tolerance must be > 0".into()));
        }
        for p in &self.peaks {
            if !(p.width > 0.0) {
                return Err(Error::InvalidArgument("peak width must be > 0".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QuadratureResult {
    pub value: f64,
    pub error: f64,
    pub evaluations: usize,
    pub levels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VectorResult {
    pub values: Vec<f64>,
    pub errors: Vec<f64>,
    pub evaluations: usize,
    pub levels: usize,
}

/// Integrates a scalar field over `P`.
pub fn integrate<F>(f: F, poly: &DelzantPolytope, spec: &QuadratureSpec) -> Result<QuadratureResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    spec.validate()?;
    let mesh = base_mesh(poly, spec);
    scalar(&f, poly, spec, mesh)
}

/// As [`integrate`] with geometric refinement rings around `center` down to
/// cell size `width/8`; the far field uses coarse cells of side 1/4.
pub fn integrate_peaked<F>(
    f: F,
    poly: &DelzantPolytope,
    center: &[f64],
    width: f64,
    spec: &QuadratureSpec,
) -> Result<QuadratureResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    spec.validate()?;
    let mesh = peaked_mesh(poly, center, width, spec)?;
    scalar(&f, poly, spec, mesh)
}

/// Integrates `m` components at once; `f(x, out)` fills `out[..m]`.
pub fn integrate_vector<F>(f: F, m: usize, poly: &DelzantPolytope, spec: &QuadratureSpec) -> Result<VectorResult>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    spec.validate()?;
    let mesh = base_mesh(poly, spec);
    refine_loop(&f, m, poly, spec, mesh)
}

/// Vector version of [`integrate_peaked`].
pub fn integrate_vector_peaked<F>(
    f: F,
    m: usize,
    poly: &DelzantPolytope,
    center: &[f64],
    width: f64,
    spec: &QuadratureSpec,
) -> Result<VectorResult>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    spec.validate()?;
    let mesh = peaked_mesh(poly, center, width, spec)?;
    refine_loop(&f, m, poly, spec, mesh)
}

/// Plain midpoint sum on the level-`level` refinement of the mesh of
/// `spec`, without error control. Meant for integrands with jumps.
pub fn midpoint_fixed<F>(f: F, poly: &DelzantPolytope, spec: &QuadratureSpec, level: usize) -> Result<f64>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    spec.validate()?;
    let mesh = base_mesh(poly, spec);
    let samples = level_samples(poly, &mesh, level, spec.clip_depth);
    if samples.is_empty() {
        return Err(Error::EmptyGrid { margin: 0.0 });
    }
    let g = |x: &[f64], out: &mut [f64]| out[0] = f(x);
    Ok(midpoint_sum(&g, 1, &samples)[0])
}

fn scalar<F>(f: &F, poly: &DelzantPolytope, spec: &QuadratureSpec, mesh: Vec<Cell>) -> Result<QuadratureResult>
where
    F: Fn(&[f64]) -> f64 + Sync,
{
    let g = |x: &[f64], out: &mut [f64]| out[0] = f(x);
    let r = refine_loop(&g, 1, poly, spec, mesh)?;
    Ok(QuadratureResult {
        value: r.values[0],
        error: r.errors[0],
        evaluations: r.evaluations,
        levels: r.levels,
    })
}

fn base_mesh(poly: &DelzantPolytope, spec: &QuadratureSpec) -> Vec<Cell> {
    let h = 1.0 / spec.resolution as f64;
    let cells: Vec<Cell> = poly
        .base_cells(h)
        .into_iter()
        .filter(|c| poly.classify(c, 0.0) != CellKind::Outside)
        .collect();
    if spec.peaks.is_empty() {
        cells
    } else {
        let mut out = Vec::new();
        for c in cells {
            ring_refine(poly, c, &spec.peaks, &mut out);
        }
        out
    }
}

fn peaked_mesh(poly: &DelzantPolytope, center: &[f64], width: f64, spec: &QuadratureSpec) -> Result<Vec<Cell>> {
    Error::check_dim(poly.dim(), center.len())?;
    if !(width > 0.0) {
        return Err(Error::InvalidArgument("peak width must be > 0".into()));
    }
    if !poly.is_interior(center) {
        return Err(Error::NotInterior { point: center.to_vec() });
    }
    let mut hints = spec.peaks.clone();
    hints.push(PeakHint {
        center: center.to_vec(),
        width,
    });
    let h = 1.0 / PEAKED_FAR_RESOLUTION as f64;
    let mut out = Vec::new();
    for c in poly.base_cells(h) {
        if poly.classify(&c, 0.0) != CellKind::Outside {
            ring_refine(poly, c, &hints, &mut out);
        }
    }
    Ok(out)
}

/// Splits `cell` until its side is at most `max(width, d)/8` for every hint,
/// `d` being the distance from the hint centre to the cell.
fn ring_refine(poly: &DelzantPolytope, cell: Cell, hints: &[PeakHint], out: &mut Vec<Cell>) {
    let needs_split = hints.iter().any(|p| {
        let d = cell.distance_to(&p.center);
        cell.h > p.width.max(d) / 8.0 * (1.0 + 1e-12)
    });
    if !needs_split {
        out.push(cell);
        return;
    }
    for child in cell.children() {
        if poly.classify(&child, 0.0) != CellKind::Outside {
            ring_refine(poly, child, hints, out);
        }
    }
}

fn level_samples(poly: &DelzantPolytope, mesh: &[Cell], level: usize, clip_depth: usize) -> Vec<GridSample> {
    fn descend(poly: &DelzantPolytope, cell: &Cell, k: usize, clip_depth: usize, out: &mut Vec<GridSample>) {
        if k == 0 {
            if let Some(s) = poly.clip_cell(cell, 0.0, clip_depth) {
                out.push(s);
            }
            return;
        }
        if poly.classify(cell, 0.0) == CellKind::Outside {
            return;
        }
        for child in cell.children() {
            descend(poly, &child, k - 1, clip_depth, out);
        }
    }
    let mut out = Vec::new();
    for c in mesh {
        descend(poly, c, level, clip_depth, &mut out);
    }
    out
}

fn midpoint_sum<F>(f: &F, m: usize, samples: &[GridSample]) -> Vec<f64>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    let chunk_sums: Vec<Vec<f64>> = samples
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut buf = vec![0.0; m];
            let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(chunk.len()); m];
            for s in chunk {
                f(&s.point, &mut buf);
                for (col, v) in cols.iter_mut().zip(&buf) {
                    col.push(v * s.volume);
                }
            }
            cols.iter().map(|c| pairwise_sum(c)).collect()
        })
        .collect();
    (0..m)
        .map(|i| {
            let col: Vec<f64> = chunk_sums.iter().map(|c| c[i]).collect();
            pairwise_sum(&col)
        })
        .collect()
}

fn refine_loop<F>(
    f: &F,
    m: usize,
    poly: &DelzantPolytope,
    spec: &QuadratureSpec,
    mesh: Vec<Cell>,
) -> Result<VectorResult>
where
    F: Fn(&[f64], &mut [f64]) + Sync,
{
    if mesh.is_empty() {
        return Err(Error::EmptyGrid { margin: 0.0 });
    }
    let mut evaluations = 0usize;
    let mut midpoints: Vec<Vec<f64>> = Vec::new();
    let mut extrapolated: Vec<Vec<f64>> = Vec::new();
    let mut estimates: Vec<f64> = Vec::new();
    for level in 0..=spec.max_depth {
        let samples = level_samples(poly, &mesh, level, spec.clip_depth);
        if samples.is_empty() {
            return Err(Error::EmptyGrid { margin: 0.0 });
        }
        if level > 0 && evaluations + samples.len() > spec.max_evaluations.saturating_mul(2) {
            break;
        }
        evaluations += samples.len();
        let mk = midpoint_sum(f, m, &samples);
        if let Some(prev) = midpoints.last() {
            let rk: Vec<f64> = mk.iter().zip(prev).map(|(a, b)| (4.0 * a - b) / 3.0).collect();
            extrapolated.push(rk);
        }
        midpoints.push(mk);
        if extrapolated.len() >= 2 {
            let cur = &extrapolated[extrapolated.len() - 1];
            let prev = &extrapolated[extrapolated.len() - 2];
            let errors: Vec<f64> = cur.iter().zip(prev).map(|(a, b)| (a - b).abs()).collect();
            let scale = cur.iter().map(|v| v.abs()).fold(0.0, f64::max);
            let worst = errors.iter().cloned().fold(0.0, f64::max);
            if worst <= spec.tol * scale || worst == 0.0 {
                return Ok(VectorResult {
                    values: cur.clone(),
                    errors,
                    evaluations,
                    levels: level + 1,
                });
            }
            estimates.push(worst);
            let k = estimates.len();
            if k >= 3 && estimates[k - 1] >= estimates[k - 2] && estimates[k - 2] >= estimates[k - 3] {
                return Err(Error::QuadratureStagnation {
                    value: cur[0],
                    estimate: worst,
                });
            }
        }
        if level < spec.max_depth {
            let next = samples.len() << poly.dim();
            if next > spec.max_evaluations {
                break;
            }
        }
    }
    let value = extrapolated.last().or(midpoints.last()).map_or(f64::NAN, |v| v[0]);
    Err(Error::QuadratureDepth {
        depth: midpoints.len().saturating_sub(1),
        value,
        estimate: estimates.last().copied().unwrap_or(f64::INFINITY),
    })
}
