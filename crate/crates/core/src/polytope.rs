//! Delzant moment polytopes given by facet data.
//!
//! A polytope is `P = {x : l_k(x) = ⟨x, ν_k⟩ + c_k ≥ 0}` with primitive inward
//! normals `ν_k ∈ Z^n`. Vertices, lattice points and sample grids are derived
//! from the facets.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

const GEOM_TOL: f64 = 1e-9;

/// Default recursion depth used to clip boundary cells.
pub const DEFAULT_CLIP_DEPTH: usize = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Facet {
    normal: Vec<i64>,
    offset: f64,
}

impl Facet {
    pub fn new(normal: Vec<i64>, offset: f64) -> Result<Self> {
        if normal.is_empty() || normal.iter().all(|&v| v == 0) {
            return Err(Error::InvalidFacet("normal must be nonzero".into()));
        }
        let g = normal.iter().fold(0i64, |acc, &v| gcd(acc, v.abs()));
        if g != 1 {
            return Err(Error::InvalidFacet(format!(
                "normal {normal:?} is not primitive (gcd {g})"
            )));
        }
        if !offset.is_finite() {
            return Err(Error::InvalidFacet("offset must be finite".into()));
        }
        Ok(Facet { normal, offset })
    }

    pub fn normal(&self) -> &[i64] {
        &self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    /// `l_k(x) = ⟨x, ν_k⟩ + c_k`.
    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        self.normal.iter().zip(x).map(|(&n, &xi)| n as f64 * xi).sum::<f64>() + self.offset
    }

    fn normal_f64(&self) -> impl Iterator<Item = f64> + '_ {
        self.normal.iter().map(|&v| v as f64)
    }

    fn normal_norm(&self) -> f64 {
        self.normal_f64().map(|v| v * v).sum::<f64>().sqrt()
    }
}

fn gcd(a: i64, b: i64) -> i64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Integer point of the polytope; orders lexicographically.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LatticePoint(pub Vec<i64>);

impl LatticePoint {
    pub fn coords(&self) -> &[i64] {
        &self.0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| v as f64).collect()
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

impl fmt::Display for LatticePoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|v| v.to_string()).collect();
        write!(f, "{}", parts.join(" "))
    }
}

/// Summary of a successful Delzant validation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Validation {
    pub vertices: Vec<Vec<f64>>,
    pub volume_hint: f64,
}

/// Result of [`DelzantPolytope::contains`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Containment {
    pub inside: bool,
    pub boundary: bool,
}

/// Midpoint-rule sample: a point and the Lebesgue volume it carries.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSample {
    pub point: Vec<f64>,
    pub volume: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelzantPolytope {
    dim: usize,
    facets: Vec<Facet>,
    name: String,
}

impl DelzantPolytope {
    /// Builds a polytope and checks the Delzant conditions.
    pub fn new(dim: usize, facets: Vec<Facet>, name: impl Into<String>) -> Result<Self> {
        let poly = Self::new_unchecked(dim, facets, name)?;
        poly.validate_delzant()?;
        Ok(poly)
    }

    /// Builds a polytope checking only dimensions; call
    /// [`validate_delzant`](Self::validate_delzant) before use.
    pub fn new_unchecked(dim: usize, facets: Vec<Facet>, name: impl Into<String>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("dimension must be positive".into()));
        }
        if facets.is_empty() {
            return Err(Error::InvalidArgument("facet list is empty".into()));
        }
        for f in &facets {
            Error::check_dim(dim, f.normal.len())?;
        }
        Ok(DelzantPolytope {
            dim,
            facets,
            name: name.into(),
        })
    }

    /// The segment `[0, length]`, moment polytope of CP¹.
    pub fn segment(length: i64) -> Self {
        assert!(length > 0);
        let facets = vec![
            Facet::new(vec![1], 0.0).unwrap(),
            Facet::new(vec![-1], length as f64).unwrap(),
        ];
        DelzantPolytope {
            dim: 1,
            facets,
            name: format!("segment-{length}"),
        }
    }

    /// The standard simplex `{x_i ≥ 0, size - Σx_i ≥ 0}`, moment polytope of CPⁿ.
    pub fn simplex(dim: usize, size: i64) -> Self {
        assert!(dim > 0 && size > 0);
        let mut facets: Vec<Facet> = (0..dim)
            .map(|i| {
                let mut n = vec![0; dim];
                n[i] = 1;
                Facet::new(n, 0.0).unwrap()
            })
            .collect();
        facets.push(Facet::new(vec![-1; dim], size as f64).unwrap());
        DelzantPolytope {
            dim,
            facets,
            name: format!("simplex-{dim}-{size}"),
        }
    }

    /// Axis-aligned box `[0, sides_0] × … × [0, sides_{n-1}]`.
    pub fn cube(sides: &[i64]) -> Self {
        let dim = sides.len();
        let mut facets = Vec::with_capacity(2 * dim);
        for (i, &s) in sides.iter().enumerate() {
            let mut n = vec![0; dim];
            n[i] = 1;
            facets.push(Facet::new(n.clone(), 0.0).unwrap());
            n[i] = -1;
            facets.push(Facet::new(n, s as f64).unwrap());
        }
        DelzantPolytope {
            dim,
            facets,
            name: format!("cube-{dim}"),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn facets(&self) -> &[Facet] {
        &self.facets
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }

    /// All facet values `l_k(x)`.
    pub fn facet_values(&self, x: &[f64]) -> Vec<f64> {
        self.facets.iter().map(|f| f.value(x)).collect()
    }

    pub fn min_facet_value(&self, x: &[f64]) -> f64 {
        self.facets.iter().map(|f| f.value(x)).fold(f64::INFINITY, f64::min)
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> Result<Containment> {
        Error::check_dim(self.dim, x.len())?;
        let m = self.min_facet_value(x);
        Ok(Containment {
            inside: m >= -tol,
            boundary: m <= tol,
        })
    }

    /// Strict interior test used by evaluation routines.
    pub fn is_interior(&self, x: &[f64]) -> bool {
        x.len() == self.dim && self.facets.iter().all(|f| f.value(x) > 0.0)
    }

    pub(crate) fn require_interior(&self, x: &[f64]) -> Result<()> {
        Error::check_dim(self.dim, x.len())?;
        if self.is_interior(x) {
            Ok(())
        } else {
            Err(Error::NotInterior { point: x.to_vec() })
        }
    }

    /// Euclidean distance from `x` to the facet hyperplane `l_k = 0`,
    /// minimised over facets.
    pub fn boundary_distance(&self, x: &[f64]) -> f64 {
        self.facets
            .iter()
            .map(|f| f.value(x) / f.normal_norm())
            .fold(f64::INFINITY, f64::min)
    }

    fn normal_matrix(&self, rows: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), self.dim, |r, c| self.facets[rows[r]].normal[c] as f64)
    }

    /// Vertices of `P`: solutions of `n` facet equations that satisfy all
    /// facet inequalities. Deduplicated, lexicographically ordered.
    pub fn vertices(&self) -> Vec<Vec<f64>> {
        let mut out: Vec<Vec<f64>> = Vec::new();
        for subset in combinations(self.facets.len(), self.dim) {
            let a = self.normal_matrix(&subset);
            let rhs = DVector::from_iterator(self.dim, subset.iter().map(|&k| -self.facets[k].offset));
            let Some(sol) = a.lu().solve(&rhs) else {
                continue;
            };
            let v: Vec<f64> = sol.iter().copied().collect();
            if self.min_facet_value(&v) < -GEOM_TOL {
                continue;
            }
            if !out.iter().any(|w| w.iter().zip(&v).all(|(a, b)| (a - b).abs() < 1e-8)) {
                out.push(v);
            }
        }
        out.sort_by(|a, b| a.partial_cmp(b).unwrap());
        out
    }

    fn check_bounded(&self) -> Result<()> {
        let n = self.dim;
        let all: Vec<usize> = (0..self.facets.len()).collect();
        let full = self.normal_matrix(&all);
        if full.rank(1e-9) < n {
            let svd = full.svd(false, true);
            let vt = svd.v_t.unwrap();
            let dir: Vec<f64> = vt.row(vt.nrows() - 1).iter().copied().collect();
            return Err(Error::Unbounded { direction: dir });
        }
        // Extreme rays of the recession cone {d : Nd ≥ 0} are cut out by n-1
        // independent active normals.
        let candidates: Vec<DVector<f64>> = if n == 1 {
            vec![DVector::from_element(1, 1.0)]
        } else {
            combinations(self.facets.len(), n - 1)
                .into_iter()
                .filter_map(|subset| {
                    let a = self.normal_matrix(&subset);
                    if a.rank(1e-9) < n - 1 {
                        return None;
                    }
                    let padded = a.insert_row(n - 1, 0.0);
                    let svd = padded.svd(false, true);
                    let vt = svd.v_t?;
                    let (idx, _) = svd
                        .singular_values
                        .iter()
                        .enumerate()
                        .min_by(|a, b| a.1.partial_cmp(b.1).unwrap())?;
                    Some(vt.row(idx).transpose())
                })
                .collect()
        };
        for d in candidates {
            for sign in [1.0, -1.0] {
                let d = &d * sign;
                let ok = self
                    .facets
                    .iter()
                    .all(|f| f.normal_f64().zip(d.iter()).map(|(a, b)| a * b).sum::<f64>() >= -1e-12);
                if ok {
                    return Err(Error::Unbounded {
                        direction: d.iter().copied().collect(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Checks boundedness, nonempty interior and the Delzant condition at
    /// every vertex (exactly `n` facets meet and their normals form a
    /// Z-basis).
    pub fn validate_delzant(&self) -> Result<Validation> {
        self.check_bounded()?;
        let vertices = self.vertices();
        if vertices.is_empty() {
            return Err(Error::EmptyInterior);
        }
        let centroid: Vec<f64> = (0..self.dim)
            .map(|i| vertices.iter().map(|v| v[i]).sum::<f64>() / vertices.len() as f64)
            .collect();
        if self.min_facet_value(&centroid) <= GEOM_TOL {
            return Err(Error::EmptyInterior);
        }
        for v in &vertices {
            let active: Vec<usize> = self
                .facets
                .iter()
                .enumerate()
                .filter(|(_, f)| f.value(v).abs() <= 1e-8)
                .map(|(k, _)| k)
                .collect();
            if active.len() != self.dim {
                return Err(Error::NonDelzantVertex {
                    vertex: v.clone(),
                    reason: format!("{} facets meet (expected {}): {:?}", active.len(), self.dim, active),
                });
            }
            let det = self.normal_matrix(&active).determinant();
            if (det.abs() - 1.0).abs() > 1e-9 {
                return Err(Error::NonDelzantVertex {
                    vertex: v.clone(),
                    reason: format!("normals {active:?} have determinant {det}"),
                });
            }
        }
        let (lo, hi) = bounds_of(&vertices, self.dim);
        let volume_hint = lo.iter().zip(&hi).map(|(a, b)| b - a).product();
        Ok(Validation { vertices, volume_hint })
    }

    /// Axis-aligned bounding box of the vertices.
    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        bounds_of(&self.vertices(), self.dim)
    }

    /// Integer points of `P`, lexicographically ordered.
    pub fn lattice_points(&self) -> Vec<LatticePoint> {
        let (lo, hi) = self.bounding_box();
        let lo: Vec<i64> = lo.iter().map(|v| (v - GEOM_TOL).ceil() as i64).collect();
        let hi: Vec<i64> = hi.iter().map(|v| (v + GEOM_TOL).floor() as i64).collect();
        let mut out = Vec::new();
        let mut cur = lo.clone();
        if lo.iter().zip(&hi).any(|(a, b)| a > b) {
            return out;
        }
        loop {
            let x: Vec<f64> = cur.iter().map(|&v| v as f64).collect();
            if self.min_facet_value(&x) >= -GEOM_TOL {
                out.push(LatticePoint(cur.clone()));
            }
            // odometer with the last coordinate fastest gives lexicographic order
            let mut i = self.dim;
            loop {
                if i == 0 {
                    return out;
                }
                i -= 1;
                if cur[i] < hi[i] {
                    cur[i] += 1;
                    for (j, c) in cur.iter_mut().enumerate().skip(i + 1) {
                        *c = lo[j];
                    }
                    break;
                }
            }
        }
    }

    /// Interior lattice points (strictly inside every facet).
    pub fn interior_lattice_points(&self) -> Vec<LatticePoint> {
        self.lattice_points()
            .into_iter()
            .filter(|p| self.is_interior(&p.to_f64()))
            .collect()
    }

    /// Midpoint samples of the axis-aligned cell decomposition with
    /// `resolution` cells per unit length, clipped to `{l_k ≥ margin}`.
    pub fn interior_grid(&self, resolution: usize, margin: f64) -> Result<Vec<GridSample>> {
        if resolution < 2 {
            return Err(Error::InvalidArgument("resolution must be at least 2".into()));
        }
        if margin < 0.0 {
            return Err(Error::InvalidArgument("margin must be nonnegative".into()));
        }
        let h = 1.0 / resolution as f64;
        let mut out = Vec::new();
        for cell in self.base_cells(h) {
            if let Some(s) = self.clip_cell(&cell, margin, DEFAULT_CLIP_DEPTH) {
                out.push(s);
            }
        }
        if out.is_empty() {
            return Err(Error::EmptyGrid { margin });
        }
        Ok(out)
    }

    /// Cubes of side `h` on the lattice `hZ^n` covering the bounding box.
    pub(crate) fn base_cells(&self, h: f64) -> Vec<Cell> {
        let (lo, hi) = self.bounding_box();
        let start: Vec<i64> = lo.iter().map(|v| (v / h + 1e-9).floor() as i64).collect();
        let count: Vec<usize> = hi
            .iter()
            .zip(&start)
            .map(|(v, &s)| (((v / h - 1e-9).ceil() as i64) - s).max(1) as usize)
            .collect();
        let total: usize = count.iter().product();
        let mut cells = Vec::with_capacity(total);
        let mut idx = vec![0usize; self.dim];
        for _ in 0..total {
            let center = (0..self.dim)
                .map(|i| (start[i] as f64 + idx[i] as f64 + 0.5) * h)
                .collect();
            cells.push(Cell { center, h });
            for i in (0..self.dim).rev() {
                idx[i] += 1;
                if idx[i] < count[i] {
                    break;
                }
                idx[i] = 0;
            }
        }
        cells
    }

    pub(crate) fn classify(&self, cell: &Cell, margin: f64) -> CellKind {
        let half = cell.h / 2.0;
        let mut cut = false;
        for f in &self.facets {
            let c = f.value(&cell.center);
            let spread: f64 = f.normal.iter().map(|&v| v.abs() as f64).sum::<f64>() * half;
            if c + spread < margin {
                return CellKind::Outside;
            }
            if c - spread < margin {
                cut = true;
            }
        }
        if cut {
            CellKind::Cut
        } else {
            CellKind::Inside
        }
    }

    /// Sample representing `cell ∩ {l_k ≥ margin}`, or `None` when empty.
    /// Cut cells are bisected to `depth` levels; the sample sits at the
    /// volume-weighted centroid of the retained leaves.
    pub(crate) fn clip_cell(&self, cell: &Cell, margin: f64, depth: usize) -> Option<GridSample> {
        match self.classify(cell, margin) {
            CellKind::Inside => Some(GridSample {
                point: cell.center.clone(),
                volume: cell.volume(),
            }),
            CellKind::Outside => None,
            CellKind::Cut => {
                let mut vol = 0.0;
                let mut moment = vec![0.0; self.dim];
                self.accumulate_clipped(cell, margin, depth, &mut vol, &mut moment);
                if vol <= 0.0 {
                    return None;
                }
                let point = moment.iter().map(|m| m / vol).collect();
                Some(GridSample { point, volume: vol })
            }
        }
    }

    fn accumulate_clipped(&self, cell: &Cell, margin: f64, depth: usize, vol: &mut f64, moment: &mut [f64]) {
        let weight = match self.classify(cell, margin) {
            CellKind::Outside => return,
            CellKind::Inside => 1.0,
            CellKind::Cut if depth > 0 => {
                for child in cell.children() {
                    self.accumulate_clipped(&child, margin, depth - 1, vol, moment);
                }
                return;
            }
            CellKind::Cut => {
                let m = self.min_facet_value(&cell.center) - margin;
                let scale = cell.h * 1e-9;
                if m > scale {
                    1.0
                } else if m >= -scale {
                    // leaf centre on the boundary: half the leaf lies inside
                    0.5
                } else {
                    return;
                }
            }
        };
        let v = cell.volume() * weight;
        *vol += v;
        for (m, c) in moment.iter_mut().zip(&cell.center) {
            *m += v * c;
        }
    }
}

/// Axis-aligned cube used by grids and quadrature.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Cell {
    pub center: Vec<f64>,
    pub h: f64,
}

impl Cell {
    pub fn volume(&self) -> f64 {
        self.h.powi(self.center.len() as i32)
    }

    pub fn children(&self) -> Vec<Cell> {
        let n = self.center.len();
        let q = self.h / 4.0;
        (0..1usize << n)
            .map(|mask| Cell {
                center: self
                    .center
                    .iter()
                    .enumerate()
                    .map(|(i, &c)| if mask >> (n - 1 - i) & 1 == 1 { c + q } else { c - q })
                    .collect(),
                h: self.h / 2.0,
            })
            .collect()
    }

    /// Euclidean distance from `p` to the cube (zero inside).
    pub fn distance_to(&self, p: &[f64]) -> f64 {
        let half = self.h / 2.0;
        self.center
            .iter()
            .zip(p)
            .map(|(&c, &x)| {
                let d = (x - c).abs() - half;
                if d > 0.0 {
                    d * d
                } else {
                    0.0
                }
            })
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum CellKind {
    Inside,
    Outside,
    Cut,
}

fn bounds_of(points: &[Vec<f64>], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut lo = vec![f64::INFINITY; dim];
    let mut hi = vec![f64::NEG_INFINITY; dim];
    for p in points {
        for i in 0..dim {
            lo[i] = lo[i].min(p[i]);
            hi[i] = hi[i].max(p[i]);
        }
    }
    (lo, hi)
}

fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    if k <= n {
        rec(0, n, k, &mut Vec::with_capacity(k), &mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unit_square_with(normal: Vec<i64>, offset: f64) -> DelzantPolytope {
        let facets = vec![
            Facet::new(vec![1, 0], 0.0).unwrap(),
            Facet::new(normal, offset).unwrap(),
            Facet::new(vec![-1, 0], 1.0).unwrap(),
            Facet::new(vec![0, -1], 1.0).unwrap(),
        ];
        DelzantPolytope::new_unchecked(2, facets, "square").unwrap()
    }

    #[test]
    fn segment_and_simplex_are_delzant() {
        DelzantPolytope::segment(1).validate_delzant().unwrap();
        DelzantPolytope::segment(2).validate_delzant().unwrap();
        DelzantPolytope::simplex(2, 1).validate_delzant().unwrap();
        DelzantPolytope::simplex(3, 2).validate_delzant().unwrap();
        DelzantPolytope::cube(&[1, 2]).validate_delzant().unwrap();
        let v = DelzantPolytope::simplex(2, 1).vertices();
        assert_eq!(v, vec![vec![0.0, 0.0], vec![0.0, 1.0], vec![1.0, 0.0]]);
    }

    #[test]
    fn replaced_square_normal_breaks_delzant() {
        // x + y - 1 ≥ 0 in place of y ≥ 0: three facets meet at (0, 1).
        let err = unit_square_with(vec![1, 1], -1.0).validate_delzant().unwrap_err();
        match err {
            Error::NonDelzantVertex { vertex, .. } => {
                assert_relative_eq!(vertex[0], 0.0, epsilon = 1e-12);
                assert_relative_eq!(vertex[1], 1.0, epsilon = 1e-12);
            }
            other => panic!("unexpected {other:?}"),
        }
        // x + 2y ≥ 0: simple, but the vertex determinants are ±2.
        let err = unit_square_with(vec![1, 2], 0.0).validate_delzant().unwrap_err();
        match err {
            Error::NonDelzantVertex { vertex, reason } => {
                // (0, 0) and (1, -1/2) both have determinant ±2
                let at_origin = vertex[0].abs() < 1e-12 && vertex[1].abs() < 1e-12;
                let at_corner = (vertex[0] - 1.0).abs() < 1e-12 && (vertex[1] + 0.5).abs() < 1e-12;
                assert!(at_origin || at_corner, "{vertex:?}");
                assert!(reason.contains("determinant"));
            }
            other => panic!("unexpected {other:?}"),
        }
        // with offset 0 the (1,1) replacement is still Delzant
        unit_square_with(vec![1, 1], 0.0).validate_delzant().unwrap();
    }

    #[test]
    fn unbounded_and_empty_are_rejected() {
        let half_line = DelzantPolytope::new_unchecked(1, vec![Facet::new(vec![1], 0.0).unwrap()], "ray").unwrap();
        assert!(matches!(half_line.validate_delzant(), Err(Error::Unbounded { .. })));
        let strip = DelzantPolytope::new_unchecked(
            2,
            vec![
                Facet::new(vec![1, 0], 0.0).unwrap(),
                Facet::new(vec![-1, 0], 1.0).unwrap(),
            ],
            "strip",
        )
        .unwrap();
        assert!(matches!(strip.validate_delzant(), Err(Error::Unbounded { .. })));
        let quadrant = DelzantPolytope::new_unchecked(
            2,
            vec![
                Facet::new(vec![1, 0], 0.0).unwrap(),
                Facet::new(vec![0, 1], 0.0).unwrap(),
                Facet::new(vec![1, -1], 1.0).unwrap(),
            ],
            "wedge",
        )
        .unwrap();
        assert!(matches!(quadrant.validate_delzant(), Err(Error::Unbounded { .. })));
        let point = DelzantPolytope::new_unchecked(
            1,
            vec![Facet::new(vec![1], 0.0).unwrap(), Facet::new(vec![-1], 0.0).unwrap()],
            "point",
        )
        .unwrap();
        assert_eq!(point.validate_delzant(), Err(Error::EmptyInterior));
        let empty = DelzantPolytope::new_unchecked(
            1,
            vec![Facet::new(vec![1], -2.0).unwrap(), Facet::new(vec![-1], 1.0).unwrap()],
            "empty",
        )
        .unwrap();
        assert_eq!(empty.validate_delzant(), Err(Error::EmptyInterior));
    }

    #[test]
    fn facet_must_be_primitive() {
        assert!(Facet::new(vec![2, 0], 0.0).is_err());
        assert!(Facet::new(vec![0, 0], 0.0).is_err());
        assert!(Facet::new(vec![2, 3], 0.0).is_ok());
    }

    #[test]
    fn contains_reports_boundary() {
        let p = DelzantPolytope::segment(1);
        assert_eq!(
            p.contains(&[0.5], 1e-12).unwrap(),
            Containment {
                inside: true,
                boundary: false
            }
        );
        assert_eq!(
            p.contains(&[0.0], 1e-12).unwrap(),
            Containment {
                inside: true,
                boundary: true
            }
        );
        assert!(!p.contains(&[1.1], 1e-12).unwrap().inside);
        assert!(matches!(
            p.contains(&[0.1, 0.2], 1e-12),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn lattice_points_small_cases() {
        let seg = DelzantPolytope::segment(1).lattice_points();
        assert_eq!(seg, vec![LatticePoint(vec![0]), LatticePoint(vec![1])]);
        let s1 = DelzantPolytope::simplex(2, 1).lattice_points();
        assert_eq!(
            s1,
            vec![
                LatticePoint(vec![0, 0]),
                LatticePoint(vec![0, 1]),
                LatticePoint(vec![1, 0])
            ]
        );
        // (d+1)(d+2)/2 for d = 2
        assert_eq!(DelzantPolytope::simplex(2, 2).lattice_points().len(), 6);
        assert_eq!(
            DelzantPolytope::simplex(2, 3).interior_lattice_points(),
            vec![LatticePoint(vec![1, 1])]
        );
    }

    #[test]
    fn lattice_points_ignore_facet_order() {
        let p = DelzantPolytope::simplex(2, 3);
        let mut facets = p.facets().to_vec();
        facets.reverse();
        let q = DelzantPolytope::new(2, facets, "reversed").unwrap();
        assert_eq!(p.lattice_points(), q.lattice_points());
    }

    #[test]
    fn interior_grid_on_unit_interval() {
        let g = DelzantPolytope::segment(1).interior_grid(4, 0.0).unwrap();
        let pts: Vec<f64> = g.iter().map(|s| s.point[0]).collect();
        assert_eq!(pts, vec![0.125, 0.375, 0.625, 0.875]);
        assert!(g.iter().all(|s| s.volume == 0.25));
        assert_eq!(
            DelzantPolytope::segment(1).interior_grid(4, 0.6),
            Err(Error::EmptyGrid { margin: 0.6 })
        );
    }

    #[test]
    fn simplex_grid_volume() {
        let g = DelzantPolytope::simplex(2, 1).interior_grid(128, 0.0).unwrap();
        let vol: f64 = g.iter().map(|s| s.volume).sum();
        assert!((vol - 0.5).abs() < 1e-3, "vol = {vol}");
        // samples stay strictly inside
        let p = DelzantPolytope::simplex(2, 1);
        assert!(g.iter().all(|s| p.is_interior(&s.point)));
    }

    #[test]
    fn grid_volume_converges_with_resolution() {
        // a slanted facet that does not pass through cell corners
        let facets = vec![
            Facet::new(vec![1, 0], 0.0).unwrap(),
            Facet::new(vec![0, 1], 0.0).unwrap(),
            Facet::new(vec![-1, 0], 2.0).unwrap(),
            Facet::new(vec![0, -1], 1.3).unwrap(),
            Facet::new(vec![-1, -1], 2.9).unwrap(),
        ];
        let p = DelzantPolytope::new(2, facets, "cut-box").unwrap();
        let exact = 2.0 * 1.3 - 0.5 * 0.4 * 0.4;
        let err = |r: usize| {
            let v: f64 = p.interior_grid(r, 0.0).unwrap().iter().map(|s| s.volume).sum();
            (v - exact).abs()
        };
        let (e1, e2) = (err(8), err(64));
        assert!(e2 < 1e-4, "e2 = {e2}");
        assert!(e2 <= e1 / 8.0 || e2 < 1e-12, "e1 = {e1}, e2 = {e2}");
    }

    #[test]
    fn margin_shrinks_grid() {
        let p = DelzantPolytope::simplex(2, 1);
        let g = p.interior_grid(64, 0.1).unwrap();
        assert!(g.iter().all(|s| p.min_facet_value(&s.point) >= 0.1 - 1e-12));
        let vol: f64 = g.iter().map(|s| s.volume).sum();
        // shrunk simplex {x,y ≥ 0.1, x + y ≤ 0.9} has area 0.245
        assert!((vol - 0.245).abs() < 2e-3, "vol = {vol}");
    }
}
