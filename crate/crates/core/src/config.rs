//! Plain-text experiment configuration.
//!
//! One `key = value` per line, `#` starts a comment. Keys are dotted
//! (`polytope.facet`, `quad.tol`, ...); unknown keys are rejected. List
//! values are whitespace separated and groups inside a value are separated
//! by `;`. A few keys may repeat:
//!
//! ```text
//! polytope.name = cp1
//! polytope.dim = 1
//! polytope.facet = 1 ; 0
//! polytope.facet = -1 ; 2
//! phi.kind = quadratic
//! phi.Q = 1
//! flow.t_grid = 10:1000:2
//! experiment.lambda = 1
//! experiment.bumps = 1 ; 0.95 ; 0.5
//! ```
//!
//! [`ExperimentConfig::to_text`] writes a canonical form that parses back
//! to the same value.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};

use crate::convergence::{FiberMode, TestSection};
use crate::fit::geometric_grid;
use crate::kahler::ToricModel;
use crate::polytope::{DelzantPolytope, Facet, LatticePoint};
use crate::potential::{ConvexPotential, ExpTerm};
use crate::quadrature::QuadratureSpec;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub enum TimeGrid {
    List(Vec<f64>),
    Geometric { start: f64, stop: f64, factor: f64 },
}

impl TimeGrid {
    pub fn values(&self) -> Vec<f64> {
        match self {
            TimeGrid::List(v) => v.clone(),
            TimeGrid::Geometric { start, stop, factor } => geometric_grid(*start, *stop, *factor),
        }
    }

    fn parse(s: &str) -> std::result::Result<Self, String> {
        if s.contains(':') {
            let parts: Vec<&str> = s.split(':').map(str::trim).collect();
            if parts.len() != 3 {
                return Err("geometric grid must be start:stop:factor".into());
            }
            let start = parse_f64(parts[0])?;
            let stop = parse_f64(parts[1])?;
            let factor = parse_f64(parts[2])?;
            if !(start > 0.0 && stop >= start && factor > 1.0) {
                return Err("geometric grid needs 0 < start ≤ stop and factor > 1".into());
            }
            Ok(TimeGrid::Geometric { start, stop, factor })
        } else {
            Ok(TimeGrid::List(parse_f64_list(s)?))
        }
    }

    fn render(&self) -> String {
        match self {
            TimeGrid::List(v) => join(v),
            TimeGrid::Geometric { start, stop, factor } => format!("{start}:{stop}:{factor}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LambdaSelection {
    All,
    List(Vec<Vec<i64>>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PhiKind {
    #[default]
    Quadratic,
    LogSumExp,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BumpSpec {
    pub center: Vec<f64>,
    pub radius: f64,
    pub height: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ExperimentConfig {
    pub polytope_name: Option<String>,
    pub polytope_dim: Option<usize>,
    pub facets: Vec<(Vec<i64>, f64)>,
    pub phi_kind: Option<PhiKind>,
    pub phi_q: Option<Vec<f64>>,
    pub phi_b: Option<Vec<f64>>,
    pub phi_c: Option<f64>,
    pub phi_perturbations: Vec<(f64, Vec<f64>)>,
    pub phi_lse: Vec<(f64, Vec<f64>)>,
    pub flow_t_grid: Option<TimeGrid>,
    pub flow_sample_points: Option<usize>,
    pub section_lambda: Option<LambdaSelection>,
    pub section_t: Option<Vec<f64>>,
    pub gauge_check_tolerance: Option<f64>,
    pub experiment_lambda: Option<Vec<i64>>,
    pub experiment_bumps: Vec<BumpSpec>,
    pub experiment_t_grid: Option<TimeGrid>,
    pub experiment_mode: Option<FiberMode>,
    pub quad_resolution: Option<usize>,
    pub quad_tol: Option<f64>,
    pub quad_max_depth: Option<usize>,
    pub output_dir: Option<String>,
}

fn parse_f64(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("`{s}` is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("`{s}` is not finite"))
    }
}

fn parse_f64_list(s: &str) -> std::result::Result<Vec<f64>, String> {
    let v: Vec<f64> = s
        .split_whitespace()
        .map(parse_f64)
        .collect::<std::result::Result<_, _>>()?;
    if v.is_empty() {
        Err("empty list".into())
    } else {
        Ok(v)
    }
}

fn parse_i64_list(s: &str) -> std::result::Result<Vec<i64>, String> {
    let v: Vec<i64> = s
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| format!("`{t}` is not an integer")))
        .collect::<std::result::Result<_, _>>()?;
    if v.is_empty() {
        Err("empty list".into())
    } else {
        Ok(v)
    }
}

fn parse_usize(s: &str) -> std::result::Result<usize, String> {
    s.parse().map_err(|_| format!("`{s}` is not a nonnegative integer"))
}

fn groups(s: &str, n: usize) -> std::result::Result<Vec<&str>, String> {
    let g: Vec<&str> = s.split(';').map(str::trim).collect();
    if g.len() == n {
        Ok(g)
    } else {
        Err(format!("expected {n} `;`-separated groups, found {}", g.len()))
    }
}

fn join<T: std::fmt::Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

fn set_once<T>(slot: &mut Option<T>, value: T) -> std::result::Result<(), String> {
    if slot.is_some() {
        return Err("key given twice".into());
    }
    *slot = Some(value);
    Ok(())
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let wrap = |message: String| Error::Config { line: idx + 1, message };
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| wrap(format!("expected `key = value`, found `{line}`")))?;
            cfg.apply(key.trim(), value.trim()).map_err(wrap)?;
        }
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, v: &str) -> std::result::Result<(), String> {
        match key {
            "polytope.name" => set_once(&mut self.polytope_name, v.to_string()),
            "polytope.dim" => set_once(&mut self.polytope_dim, parse_usize(v)?),
            "polytope.facet" => {
                let g = groups(v, 2)?;
                self.facets.push((parse_i64_list(g[0])?, parse_f64(g[1])?));
                Ok(())
            }
            "phi.kind" => {
                let k = match v {
                    "quadratic" => PhiKind::Quadratic,
                    "log-sum-exp" => PhiKind::LogSumExp,
                    other => return Err(format!("unknown phi.kind `{other}`")),
                };
                set_once(&mut self.phi_kind, k)
            }
            "phi.Q" => set_once(&mut self.phi_q, parse_f64_list(v)?),
            "phi.b" => set_once(&mut self.phi_b, parse_f64_list(v)?),
            "phi.c" => set_once(&mut self.phi_c, parse_f64(v)?),
            "phi.perturbation" => {
                let g = groups(v, 2)?;
                self.phi_perturbations.push((parse_f64(g[0])?, parse_f64_list(g[1])?));
                Ok(())
            }
            "phi.lse" => {
                let g = groups(v, 2)?;
                self.phi_lse.push((parse_f64(g[0])?, parse_f64_list(g[1])?));
                Ok(())
            }
            "flow.t_grid" => set_once(&mut self.flow_t_grid, TimeGrid::parse(v)?),
            "flow.sample_points" => set_once(&mut self.flow_sample_points, parse_usize(v)?),
            "section.lambda" => {
                if v == "all" {
                    if self.section_lambda.is_some() {
                        return Err("`all` cannot be combined with other weights".into());
                    }
                    self.section_lambda = Some(LambdaSelection::All);
                } else {
                    let l = parse_i64_list(v)?;
                    match &mut self.section_lambda {
                        None => self.section_lambda = Some(LambdaSelection::List(vec![l])),
                        Some(LambdaSelection::List(ls)) => ls.push(l),
                        Some(LambdaSelection::All) => return Err("`all` cannot be combined with other weights".into()),
                    }
                }
                Ok(())
            }
            "section.t" => set_once(&mut self.section_t, parse_f64_list(v)?),
            "gauge.check_tolerance" => set_once(&mut self.gauge_check_tolerance, parse_f64(v)?),
            "experiment.lambda" => set_once(&mut self.experiment_lambda, parse_i64_list(v)?),
            "experiment.bumps" => {
                let g = groups(v, 3)?;
                self.experiment_bumps.push(BumpSpec {
                    center: parse_f64_list(g[0])?,
                    radius: parse_f64(g[1])?,
                    height: parse_f64(g[2])?,
                });
                Ok(())
            }
            "experiment.t_grid" => set_once(&mut self.experiment_t_grid, TimeGrid::parse(v)?),
            "experiment.mode" => set_once(
                &mut self.experiment_mode,
                v.parse::<FiberMode>().map_err(|e| e.to_string())?,
            ),
            "quad.resolution" => set_once(&mut self.quad_resolution, parse_usize(v)?),
            "quad.tol" => set_once(&mut self.quad_tol, parse_f64(v)?),
            "quad.max_depth" => set_once(&mut self.quad_max_depth, parse_usize(v)?),
            "output.dir" => set_once(&mut self.output_dir, v.to_string()),
            other => Err(format!("unknown key `{other}`")),
        }
    }

    /// Canonical text form; `parse(to_text(c)) == c`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        if let Some(n) = &self.polytope_name {
            put("polytope.name", n.clone());
        }
        if let Some(d) = self.polytope_dim {
            put("polytope.dim", d.to_string());
        }
        for (n, c) in &self.facets {
            put("polytope.facet", format!("{} ; {c}", join(n)));
        }
        if let Some(k) = self.phi_kind {
            put(
                "phi.kind",
                match k {
                    PhiKind::Quadratic => "quadratic",
                    PhiKind::LogSumExp => "log-sum-exp",
                }
                .into(),
            );
        }
        if let Some(q) = &self.phi_q {
            put("phi.Q", join(q));
        }
        if let Some(b) = &self.phi_b {
            put("phi.b", join(b));
        }
        if let Some(c) = self.phi_c {
            put("phi.c", c.to_string());
        }
        for (a, v) in &self.phi_perturbations {
            put("phi.perturbation", format!("{a} ; {}", join(v)));
        }
        for (a, v) in &self.phi_lse {
            put("phi.lse", format!("{a} ; {}", join(v)));
        }
        if let Some(g) = &self.flow_t_grid {
            put("flow.t_grid", g.render());
        }
        if let Some(n) = self.flow_sample_points {
            put("flow.sample_points", n.to_string());
        }
        match &self.section_lambda {
            Some(LambdaSelection::All) => put("section.lambda", "all".into()),
            Some(LambdaSelection::List(ls)) => {
                for l in ls {
                    put("section.lambda", join(l));
                }
            }
            None => {}
        }
        if let Some(t) = &self.section_t {
            put("section.t", join(t));
        }
        if let Some(t) = self.gauge_check_tolerance {
            put("gauge.check_tolerance", t.to_string());
        }
        if let Some(l) = &self.experiment_lambda {
            put("experiment.lambda", join(l));
        }
        for b in &self.experiment_bumps {
            put(
                "experiment.bumps",
                format!("{} ; {} ; {}", join(&b.center), b.radius, b.height),
            );
        }
        if let Some(g) = &self.experiment_t_grid {
            put("experiment.t_grid", g.render());
        }
        if let Some(m) = self.experiment_mode {
            put("experiment.mode", m.to_string());
        }
        if let Some(r) = self.quad_resolution {
            put("quad.resolution", r.to_string());
        }
        if let Some(t) = self.quad_tol {
            put("quad.tol", t.to_string());
        }
        if let Some(d) = self.quad_max_depth {
            put("quad.max_depth", d.to_string());
        }
        if let Some(d) = &self.output_dir {
            put("output.dir", d.clone());
        }
        out
    }

    pub fn polytope(&self) -> Result<DelzantPolytope> {
        let dim = self
            .polytope_dim
            .ok_or_else(|| Error::InvalidArgument("missing polytope.dim".into()))?;
        if self.facets.is_empty() {
            return Err(Error::InvalidArgument("no polytope.facet lines".into()));
        }
        let facets = self
            .facets
            .iter()
            .map(|(n, c)| {
                Error::check_dim(dim, n.len())?;
                Facet::new(n.clone(), *c)
            })
            .collect::<Result<Vec<_>>>()?;
        DelzantPolytope::new(dim, facets, self.polytope_name.clone().unwrap_or_else(|| "P".into()))
    }

    pub fn phi(&self, dim: usize) -> Result<ConvexPotential> {
        match self.phi_kind.unwrap_or_default() {
            PhiKind::Quadratic => {
                let q = match &self.phi_q {
                    Some(q) if q.len() == dim * dim => DMatrix::from_row_slice(dim, dim, q),
                    Some(q) => {
                        return Err(Error::DimensionMismatch {
                            expected: dim * dim,
                            actual: q.len(),
                        })
                    }
                    None => DMatrix::identity(dim, dim),
                };
                let b = match &self.phi_b {
                    Some(b) => {
                        Error::check_dim(dim, b.len())?;
                        DVector::from_column_slice(b)
                    }
                    None => DVector::zeros(dim),
                };
                let terms = self
                    .phi_perturbations
                    .iter()
                    .map(|(a, v)| ExpTerm {
                        coefficient: *a,
                        direction: v.clone(),
                    })
                    .collect();
                ConvexPotential::quadratic_perturbed(q, b, self.phi_c.unwrap_or(0.0), terms)
            }
            PhiKind::LogSumExp => {
                if self.phi_q.is_some() || self.phi_b.is_some() || !self.phi_perturbations.is_empty() {
                    return Err(Error::InvalidArgument("log-sum-exp takes only phi.lse terms".into()));
                }
                let terms: Vec<ExpTerm> = self
                    .phi_lse
                    .iter()
                    .map(|(a, v)| ExpTerm {
                        coefficient: *a,
                        direction: v.clone(),
                    })
                    .collect();
                for t in &terms {
                    Error::check_dim(dim, t.direction.len())?;
                }
                let phi = ConvexPotential::log_sum_exp(terms)?;
                Ok(match self.phi_c {
                    Some(c) => phi.shifted(c),
                    None => phi,
                })
            }
        }
    }

    pub fn model(&self) -> Result<ToricModel> {
        let poly = self.polytope()?;
        let phi = self.phi(poly.dim())?;
        ToricModel::with_phi(poly, phi)
    }

    pub fn quad_spec(&self) -> QuadratureSpec {
        let mut spec = QuadratureSpec::default();
        if let Some(r) = self.quad_resolution {
            spec.resolution = r;
        }
        if let Some(t) = self.quad_tol {
            spec.tol = t;
        }
        if let Some(d) = self.quad_max_depth {
            spec.max_depth = d;
        }
        spec
    }

    pub fn flow_times(&self) -> Vec<f64> {
        self.flow_t_grid
            .as_ref()
            .map(TimeGrid::values)
            .unwrap_or_else(|| geometric_grid(10.0, 1000.0, 2.0))
    }

    pub fn experiment_times(&self) -> Vec<f64> {
        self.experiment_t_grid
            .as_ref()
            .map(TimeGrid::values)
            .unwrap_or_else(|| geometric_grid(10.0, 320.0, 2.0))
    }

    pub fn section_times(&self) -> Vec<f64> {
        self.section_t.clone().unwrap_or_else(|| vec![0.5, 2.0, 10.0])
    }

    pub fn check_tolerance(&self) -> f64 {
        self.gauge_check_tolerance.unwrap_or(1e-10)
    }

    pub fn section_weights(&self, poly: &DelzantPolytope) -> Result<Vec<LatticePoint>> {
        match &self.section_lambda {
            None | Some(LambdaSelection::All) => Ok(poly.lattice_points()),
            Some(LambdaSelection::List(ls)) => ls
                .iter()
                .map(|l| {
                    Error::check_dim(poly.dim(), l.len())?;
                    let p = LatticePoint(l.clone());
                    if poly.contains(&p.to_f64(), 1e-12)?.inside {
                        Ok(p)
                    } else {
                        Err(Error::InvalidArgument(format!("section.lambda {p} is not in P")))
                    }
                })
                .collect(),
        }
    }

    pub fn bumps(&self, poly: &DelzantPolytope) -> Result<Vec<TestSection>> {
        self.experiment_bumps
            .iter()
            .map(|b| TestSection::new(poly, b.center.clone(), b.radius, b.height))
            .collect()
    }

    /// Cross-field checks: the polytope is Delzant, referenced lattice points
    /// lie in `P` and time grids increase.
    pub fn validate(&self) -> Result<()> {
        let poly = self.polytope()?;
        poly.validate_delzant()?;
        self.phi(poly.dim())?;
        self.section_weights(&poly)?;
        if let Some(l) = &self.experiment_lambda {
            Error::check_dim(poly.dim(), l.len())?;
            let p: Vec<f64> = l.iter().map(|&v| v as f64).collect();
            if !poly.contains(&p, 1e-12)?.inside {
                return Err(Error::InvalidArgument("experiment.lambda is not in P".into()));
            }
        }
        for (name, grid) in [
            ("flow.t_grid", self.flow_times()),
            ("experiment.t_grid", self.experiment_times()),
            ("section.t", self.section_times()),
        ] {
            if grid.windows(2).any(|w| w[1] <= w[0]) || grid.iter().any(|t| *t < 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "{name} must be nonnegative and increasing"
                )));
            }
        }
        self.quad_spec().validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const CP1: &str = "\
# the sphere
polytope.name = cp1
polytope.dim = 1
polytope.facet = 1 ; 0
polytope.facet = -1 ; 2   # x ≤ 2
phi.kind = quadratic
phi.Q = 1
flow.t_grid = 10:1000:2
section.lambda = all
experiment.lambda = 1
experiment.bumps = 1 ; 0.95 ; 0.5
quad.tol = 1e-10
";

    #[test]
    fn parses_example() {
        let c = ExperimentConfig::parse(CP1).unwrap();
        assert_eq!(c.facets, vec![(vec![1], 0.0), (vec![-1], 2.0)]);
        assert_eq!(c.flow_times().len(), 7);
        let m = c.model().unwrap();
        assert_eq!(m.dim(), 1);
        c.validate().unwrap();
        assert_eq!(c.section_weights(m.polytope()).unwrap().len(), 3);
        assert_eq!(c.quad_spec().tol, 1e-10);
    }

    #[test]
    fn rejects_unknown_and_duplicate_keys() {
        let e = ExperimentConfig::parse("polytope.dim = 1\nquad.tolerance = 3\n").unwrap_err();
        assert!(matches!(e, Error::Config { line: 2, .. }));
        assert!(ExperimentConfig::parse("quad.tol = 1\nquad.tol = 2").is_err());
        assert!(ExperimentConfig::parse("polytope.facet = 1 0").is_err());
        assert!(ExperimentConfig::parse("flow.t_grid = 10:1").is_err());
        assert!(ExperimentConfig::parse("experiment.mode = fancy").is_err());
        assert!(ExperimentConfig::parse("just text").is_err());
    }

    #[test]
    fn validation_errors() {
        let mut c = ExperimentConfig::parse(CP1).unwrap();
        c.experiment_lambda = Some(vec![3]);
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::parse(CP1).unwrap();
        c.section_t = Some(vec![2.0, 1.0]);
        assert!(c.validate().is_err());
        let mut c = ExperimentConfig::parse(CP1).unwrap();
        c.phi_q = Some(vec![1.0, 0.0]);
        assert!(c.validate().is_err());
    }

    #[test]
    fn log_sum_exp_block() {
        let text = "polytope.dim = 1\npolytope.facet = 1 ; 0\npolytope.facet = -1 ; 1\nphi.kind = log-sum-exp\nphi.lse = 1 ; 1\nphi.lse = 1 ; -1\n";
        let c = ExperimentConfig::parse(text).unwrap();
        let m = c.model().unwrap();
        use crate::potential::SmoothConvex;
        assert!((m.phi.value(&[0.0]) - 2f64.ln()).abs() < 1e-15);
    }

    fn finite() -> impl Strategy<Value = f64> {
        prop_oneof![(-1e6f64..1e6), (1e-12f64..1e-3), Just(0.5), Just(-0.0)]
    }

    fn grid() -> impl Strategy<Value = TimeGrid> {
        prop_oneof![
            prop::collection::vec(finite(), 1..5).prop_map(TimeGrid::List),
            (0.1f64..10.0, 1.0f64..100.0, 1.1f64..3.0).prop_map(|(a, s, f)| TimeGrid::Geometric {
                start: a,
                stop: a * s,
                factor: f
            }),
        ]
    }

    prop_compose! {
        fn config()(
            name in prop::option::of("[a-z][a-z0-9_]{0,8}"),
            dim in prop::option::of(1usize..4),
            facets in prop::collection::vec((prop::collection::vec(-5i64..5, 1..4), finite()), 0..5),
            kind in prop::option::of(prop_oneof![Just(PhiKind::Quadratic), Just(PhiKind::LogSumExp)]),
            q in prop::option::of(prop::collection::vec(finite(), 1..5)),
            c in prop::option::of(finite()),
            pert in prop::collection::vec((finite(), prop::collection::vec(finite(), 1..3)), 0..3),
            fg in prop::option::of(grid()),
            sp in prop::option::of(0usize..100),
            lam in prop::option::of(prop_oneof![
                Just(LambdaSelection::All),
                prop::collection::vec(prop::collection::vec(-3i64..4, 1..3), 1..3).prop_map(LambdaSelection::List),
            ]),
            bumps in prop::collection::vec((prop::collection::vec(finite(), 1..3), finite(), finite()), 0..3),
            mode in prop::option::of(prop_oneof![Just(FiberMode::Normalized), Just(FiberMode::PaperForm)]),
            res in prop::option::of(4usize..512),
            tol in prop::option::of(1e-14f64..1e-2),
            dir in prop::option::of("[a-z/_]{1,10}"),
        ) -> ExperimentConfig {
            ExperimentConfig {
                polytope_name: name,
                polytope_dim: dim,
                facets,
                phi_kind: kind,
                phi_q: q,
                phi_c: c,
                phi_perturbations: pert,
                flow_t_grid: fg,
                flow_sample_points: sp,
                section_lambda: lam,
                experiment_bumps: bumps.into_iter().map(|(center, radius, height)| BumpSpec { center, radius, height }).collect(),
                experiment_mode: mode,
                quad_resolution: res,
                quad_tol: tol,
                output_dir: dir,
                ..Default::default()
            }
        }
    }

    proptest! {
        #[test]
        fn round_trip(c in config()) {
            let text = c.to_text();
            let back = ExperimentConfig::parse(&text).unwrap();
            prop_assert_eq!(&back, &c);
            prop_assert_eq!(back.to_text(), text);
        }
    }
}
