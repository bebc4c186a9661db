//! Scenario files, parameter sweeps and the CSV artifacts of a batch run.
//!
//! A scenario is a TOML file; its schema is documented in the repository README.
//! Outputs of [`write_artifacts`] are byte-identical for identical scenarios and seeds,
//! whatever the worker count.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;

use crate::acstruct::AlmostComplexStructure;
use crate::calculus::{d_zbar, lp_norm, lp_norm_on, w1p_norm, Field, NormConfig};
use crate::cauchy::CauchyOperator;
use crate::cousin::{classical_glue, glue_local, preglue, seed_pair};
use crate::error::{GlueError, Result};
use crate::grid::{build_cutoffs, build_domain, rectangle_pair, slab_pair, GoodPair, GridDomain, Lattice, Shape};
use crate::solver::{NewtonLimits, StopRule, Verdict, CERTIFICATE_HEADER};
use crate::transition::{glue_pair, seed_chart_pair, ChartMap, ChartTransition};

/// Scenarios shipped with the crate, runnable by name.
pub const BUILTIN: [(&str, &str); 6] = [
    ("classical-rect", include_str!("../scenarios/classical-rect.toml")),
    ("local-rect", include_str!("../scenarios/local-rect.toml")),
    ("residual-law", include_str!("../scenarios/residual-law.toml")),
    ("refinement-rect", include_str!("../scenarios/refinement-rect.toml")),
    ("pair-rotation", include_str!("../scenarios/pair-rotation.toml")),
    ("custom-smoothed", include_str!("../scenarios/custom-smoothed.toml")),
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pipeline {
    /// One-step Cauchy–Green formula (standard structure only).
    Classical,
    /// Pregluing plus Newton on the union.
    Local,
    /// Two charts related by a transition map.
    Pair,
}

impl Pipeline {
    pub fn name(&self) -> &'static str {
        match self {
            Pipeline::Classical => "classical",
            Pipeline::Local => "local",
            Pipeline::Pair => "pair",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum DomainSpec {
    Rectangle,
    Slab,
    Custom { omega1: Shape, omega2: Shape, nx: Option<usize>, ny: Option<usize>, center: Option<Complex64> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeedKind {
    /// The polynomial itself (and its shift by delta).
    Polynomial,
    /// Near-solutions obtained from the polynomial by the common seed map.
    Solution,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeedMapSpec {
    pub kind: SeedKind,
    /// Coefficients in `z`, one list per component.
    pub components: Vec<Vec<Complex64>>,
    /// Random polynomial of this degree and coefficient size added to every component,
    /// drawn from the scenario seed.
    pub perturbation: Option<(usize, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum ChartSpec {
    Identity,
    Rotation { theta: f64, offset: Complex64 },
    Affine { matrix: Vec<Vec<f64>>, b: Vec<f64> },
    Shear { c: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sweep {
    pub delta: Vec<f64>,
    pub gamma: Vec<f64>,
    pub h: Vec<f64>,
}

/// Builds a structure from its `[structure]` table.
pub type StructureFactory = fn(&toml::Table) -> Result<AlmostComplexStructure>;

/// Structure names resolvable from scenario files. The builtins are `standard`,
/// `j_eps` and `constant_lambda`; [`StructureRegistry::register`] adds more.
#[derive(Clone)]
pub struct StructureRegistry {
    entries: BTreeMap<String, StructureFactory>,
}

impl Default for StructureRegistry {
    fn default() -> Self {
        let mut r = StructureRegistry { entries: BTreeMap::new() };
        r.register("standard", build_standard);
        r.register("j_eps", build_j_eps);
        r.register("constant_lambda", build_constant_lambda);
        r
    }
}

impl StructureRegistry {
    pub fn register(&mut self, name: &str, factory: StructureFactory) {
        self.entries.insert(name.to_string(), factory);
    }
    pub fn names(&self) -> Vec<&str> {
        self.entries.keys().map(|s| s.as_str()).collect()
    }
    fn build(&self, table: &toml::Table) -> Result<AlmostComplexStructure> {
        let name = match table.get("name") {
            Some(toml::Value::String(s)) => s.clone(),
            Some(_) => return Err(invalid("structure.name", "must be a string")),
            None => "standard".to_string(),
        };
        let f = self.entries.get(&name).ok_or_else(|| invalid("structure.name", &format!("unknown structure `{name}` (known: {})", self.names().join(", "))))?;
        f(table)
    }
}

fn invalid(key: &str, message: &str) -> GlueError {
    GlueError::ConfigInvalid { key: key.to_string(), message: message.to_string() }
}

fn only_keys(table: &toml::Table, allowed: &[&str]) -> Result<()> {
    for k in table.keys() {
        if !allowed.contains(&k.as_str()) {
            return Err(invalid(&format!("structure.{k}"), "unknown key"));
        }
    }
    Ok(())
}

fn get_f64(table: &toml::Table, key: &str) -> Result<Option<f64>> {
    match table.get(key) {
        None => Ok(None),
        Some(toml::Value::Float(v)) => Ok(Some(*v)),
        Some(toml::Value::Integer(v)) => Ok(Some(*v as f64)),
        Some(_) => Err(invalid(&format!("structure.{key}"), "must be a number")),
    }
}

fn get_dim(table: &toml::Table) -> Result<usize> {
    match table.get("n") {
        None => Ok(1),
        Some(toml::Value::Integer(v)) if *v >= 1 => Ok(*v as usize),
        Some(_) => Err(invalid("structure.n", "must be a positive integer")),
    }
}

fn build_standard(t: &toml::Table) -> Result<AlmostComplexStructure> {
    only_keys(t, &["name", "n"])?;
    Ok(AlmostComplexStructure::standard(get_dim(t)?))
}

fn build_j_eps(t: &toml::Table) -> Result<AlmostComplexStructure> {
    only_keys(t, &["name", "n", "eps", "center", "width"])?;
    let n = get_dim(t)?;
    let eps = get_f64(t, "eps")?.ok_or_else(|| invalid("structure.eps", "required for j_eps"))?;
    let width = get_f64(t, "width")?.unwrap_or(1.5);
    let center = match t.get("center") {
        None => vec![Complex64::new(0.0, 0.0); n],
        Some(v) => {
            let pts: Vec<[f64; 2]> = v.clone().try_into().map_err(|_| invalid("structure.center", "must be a list of [re, im] pairs"))?;
            if pts.len() != n {
                return Err(invalid("structure.center", &format!("needs {n} points")));
            }
            pts.iter().map(|p| Complex64::new(p[0], p[1])).collect()
        }
    };
    if !(eps.is_finite() && width > 0.0) {
        return Err(invalid("structure.eps", "eps must be finite and width positive"));
    }
    AlmostComplexStructure::j_eps(n, eps, center, width).map_err(|e| invalid("structure", &e.to_string()))
}

fn build_constant_lambda(t: &toml::Table) -> Result<AlmostComplexStructure> {
    only_keys(t, &["name", "lambda"])?;
    let l = get_f64(t, "lambda")?.ok_or_else(|| invalid("structure.lambda", "required for constant_lambda"))?;
    AlmostComplexStructure::constant_lambda(l).map_err(|e| invalid("structure.lambda", &e.to_string()))
}

#[derive(Clone, Debug)]
pub struct Scenario {
    pub name: String,
    pub pipeline: Pipeline,
    pub seed: u64,
    pub p: f64,
    pub domains: DomainSpec,
    pub structure: toml::Table,
    pub seed_map: SeedMapSpec,
    pub chart: ChartSpec,
    pub sweep: Sweep,
    pub newton: NewtonLimits,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    name: Option<String>,
    pipeline: Option<String>,
    seed: Option<u64>,
    p: Option<f64>,
    domains: Option<RawDomains>,
    lattice: Option<RawLattice>,
    structure: Option<toml::Table>,
    seed_map: Option<RawSeedMap>,
    chart: Option<RawChart>,
    sweep: Option<RawSweep>,
    newton: Option<RawNewton>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDomains {
    pair: Option<String>,
    omega1: Option<RawShape>,
    omega2: Option<RawShape>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawShape {
    shape: String,
    center: Option<[f64; 2]>,
    radius: Option<f64>,
    extents: Option<[f64; 4]>,
    corner_radius: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLattice {
    h: Option<f64>,
    nx: Option<usize>,
    ny: Option<usize>,
    center: Option<[f64; 2]>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSeedMap {
    kind: Option<String>,
    coefficients: Option<Vec<[f64; 2]>>,
    components: Option<Vec<Vec<[f64; 2]>>>,
    perturbation: Option<RawPerturbation>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPerturbation {
    degree: usize,
    amplitude: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawChart {
    family: String,
    theta: Option<f64>,
    offset: Option<[f64; 2]>,
    matrix: Option<Vec<Vec<f64>>>,
    b: Option<Vec<f64>>,
    c: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    delta: Option<Vec<f64>>,
    gamma: Option<Vec<f64>>,
    h: Option<Vec<f64>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawNewton {
    max_iter: Option<usize>,
    tol: Option<f64>,
    stop: Option<String>,
}

/// Dotted key at a byte offset: the enclosing `[table]` header plus the key on that line.
fn key_at(text: &str, offset: usize) -> String {
    let offset = offset.min(text.len());
    let line_start = text[..offset].rfind('\n').map(|i| i + 1).unwrap_or(0);
    let line_end = text[offset..].find('\n').map(|i| offset + i).unwrap_or(text.len());
    let line = text[line_start..line_end].trim();
    let table = text[..line_start]
        .lines()
        .rev()
        .map(str::trim)
        .find(|l| l.starts_with('['))
        .map(|l| l.trim_matches(|c| c == '[' || c == ']').trim().to_string());
    if line.starts_with('[') {
        return line.trim_matches(|c| c == '[' || c == ']').trim().to_string();
    }
    let key = line.split('=').next().unwrap_or("").trim().to_string();
    match table {
        Some(t) if !key.is_empty() => format!("{t}.{key}"),
        Some(t) => t,
        None => key,
    }
}

fn complex(p: [f64; 2]) -> Complex64 {
    Complex64::new(p[0], p[1])
}

fn shape(raw: &RawShape, key: &str) -> Result<Shape> {
    let need = |name: &str| invalid(&format!("{key}.{name}"), &format!("required for shape `{}`", raw.shape));
    match raw.shape.as_str() {
        "rectangle" | "smoothed_rectangle" => {
            let [x0, x1, y0, y1] = raw.extents.ok_or_else(|| need("extents"))?;
            if !(x0 < x1 && y0 < y1) {
                return Err(invalid(&format!("{key}.extents"), "need x0 < x1 and y0 < y1"));
            }
            if raw.shape == "rectangle" {
                Ok(Shape::Rectangle { x0, x1, y0, y1 })
            } else {
                Ok(Shape::SmoothedRectangle { x0, x1, y0, y1, radius: raw.corner_radius.ok_or_else(|| need("corner_radius"))? })
            }
        }
        "disc" => {
            let radius = raw.radius.ok_or_else(|| need("radius"))?;
            if !(radius > 0.0) {
                return Err(invalid(&format!("{key}.radius"), "must be positive"));
            }
            Ok(Shape::Disc { center: complex(raw.center.ok_or_else(|| need("center"))?), radius })
        }
        other => Err(invalid(&format!("{key}.shape"), &format!("unknown shape `{other}` (rectangle, smoothed_rectangle, disc)"))),
    }
}

impl Scenario {
    pub fn parse(text: &str) -> Result<Scenario> {
        let raw: RawScenario = toml::from_str(text).map_err(|e| {
            let key = e.span().map(|s| key_at(text, s.start)).unwrap_or_default();
            invalid(&key, e.message().trim())
        })?;
        let name = raw.name.unwrap_or_else(|| "scenario".into());
        let pipeline = match raw.pipeline.as_deref() {
            Some("classical") => Pipeline::Classical,
            Some("local") | None => Pipeline::Local,
            Some("pair") => Pipeline::Pair,
            Some(other) => return Err(invalid("pipeline", &format!("unknown pipeline `{other}` (classical, local, pair)"))),
        };
        let p = raw.p.unwrap_or(4.0);
        NormConfig::new(p).map_err(|e| invalid("p", &e.to_string()))?;

        let lattice = raw.lattice.unwrap_or(RawLattice { h: None, nx: None, ny: None, center: None });
        let domains = match raw.domains {
            None => DomainSpec::Rectangle,
            Some(d) => match d.pair.as_deref() {
                Some("rectangle") | None if d.omega1.is_none() && d.omega2.is_none() => DomainSpec::Rectangle,
                Some("slab") => DomainSpec::Slab,
                Some("custom") | None => {
                    let o1 = d.omega1.as_ref().ok_or_else(|| invalid("domains.omega1", "required for custom domains"))?;
                    let o2 = d.omega2.as_ref().ok_or_else(|| invalid("domains.omega2", "required for custom domains"))?;
                    DomainSpec::Custom {
                        omega1: shape(o1, "domains.omega1")?,
                        omega2: shape(o2, "domains.omega2")?,
                        nx: lattice.nx,
                        ny: lattice.ny,
                        center: lattice.center.map(complex),
                    }
                }
                Some(other) => return Err(invalid("domains.pair", &format!("unknown pair `{other}` (rectangle, slab, custom)"))),
            },
        };
        if !matches!(domains, DomainSpec::Custom { .. }) && (lattice.nx.is_some() || lattice.ny.is_some() || lattice.center.is_some()) {
            return Err(invalid("lattice.nx", "nx, ny and center apply to custom domains only"));
        }
        if lattice.nx.is_some() != lattice.ny.is_some() {
            return Err(invalid("lattice.ny", "give both nx and ny or neither"));
        }

        let structure = raw.structure.unwrap_or_default();
        let sm = raw.seed_map.unwrap_or(RawSeedMap { kind: None, coefficients: None, components: None, perturbation: None });
        let kind = match sm.kind.as_deref() {
            Some("polynomial") | None => SeedKind::Polynomial,
            Some("solution") => SeedKind::Solution,
            Some(other) => return Err(invalid("seed_map.kind", &format!("unknown kind `{other}` (polynomial, solution)"))),
        };
        let components: Vec<Vec<Complex64>> = match (sm.coefficients, sm.components) {
            (Some(_), Some(_)) => return Err(invalid("seed_map.components", "give coefficients or components, not both")),
            (Some(c), None) => vec![c.into_iter().map(complex).collect()],
            (None, Some(cs)) => cs.into_iter().map(|c| c.into_iter().map(complex).collect()).collect(),
            (None, None) => vec![vec![Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(1.0, 0.0)]],
        };
        if components.is_empty() || components.iter().any(|c| c.is_empty()) {
            return Err(invalid("seed_map.components", "every component needs at least one coefficient"));
        }
        let perturbation = match sm.perturbation {
            Some(p) if !(p.amplitude >= 0.0 && p.amplitude.is_finite()) => return Err(invalid("seed_map.perturbation.amplitude", "must be finite and non-negative")),
            Some(p) => Some((p.degree, p.amplitude)),
            None => None,
        };

        let chart = match raw.chart {
            None => ChartSpec::Identity,
            Some(c) => match c.family.as_str() {
                "identity" => ChartSpec::Identity,
                "rotation" => ChartSpec::Rotation {
                    theta: c.theta.ok_or_else(|| invalid("chart.theta", "required for rotation"))?,
                    offset: complex(c.offset.unwrap_or([0.0, 0.0])),
                },
                "affine" => ChartSpec::Affine {
                    matrix: c.matrix.ok_or_else(|| invalid("chart.matrix", "required for affine"))?,
                    b: c.b.ok_or_else(|| invalid("chart.b", "required for affine"))?,
                },
                "shear" => ChartSpec::Shear { c: c.c.ok_or_else(|| invalid("chart.c", "required for shear"))? },
                other => return Err(invalid("chart.family", &format!("unknown family `{other}` (identity, rotation, affine, shear)"))),
            },
        };
        if pipeline != Pipeline::Pair && chart != ChartSpec::Identity {
            return Err(invalid("chart.family", "a chart transition needs pipeline = \"pair\""));
        }

        let sw = raw.sweep.unwrap_or(RawSweep { delta: None, gamma: None, h: None });
        let h = match (sw.h, lattice.h) {
            (Some(_), Some(_)) => return Err(invalid("sweep.h", "give lattice.h or sweep.h, not both")),
            (Some(h), None) => h,
            (None, Some(h)) => vec![h],
            (None, None) => vec![1.0 / 32.0],
        };
        let delta = sw.delta.unwrap_or_else(|| vec![1e-2]);
        let gamma = match (pipeline, sw.gamma) {
            (Pipeline::Pair, g) => g.unwrap_or_else(|| vec![0.1]),
            (_, None) => Vec::new(),
            (_, Some(_)) => return Err(invalid("sweep.gamma", "gamma applies to the pair pipeline only")),
        };
        for (key, list) in [("sweep.delta", &delta), ("sweep.h", &h)] {
            if list.is_empty() {
                return Err(invalid(key, "sweep lists must be nonempty"));
            }
        }
        if pipeline == Pipeline::Pair && gamma.is_empty() {
            return Err(invalid("sweep.gamma", "sweep lists must be nonempty"));
        }
        if let Some(v) = delta.iter().find(|v| !v.is_finite()) {
            return Err(invalid("sweep.delta", &format!("not finite: {v}")));
        }
        if let Some(v) = h.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(invalid("sweep.h", &format!("spacing must be positive: {v}")));
        }
        if let Some(v) = gamma.iter().find(|v| !(**v > 0.0 && **v < 1.0)) {
            return Err(invalid("sweep.gamma", &format!("gamma must lie in (0, 1): {v}")));
        }

        let mut newton = NewtonLimits::default();
        if let Some(n) = raw.newton {
            if let Some(m) = n.max_iter {
                newton.max_iter = m;
            }
            if let Some(t) = n.tol {
                if !(t > 0.0) {
                    return Err(invalid("newton.tol", "must be positive"));
                }
                newton.tol = Some(t);
            }
            newton.stop = match n.stop.as_deref() {
                None | Some("linear_remainder") => StopRule::LinearRemainder,
                Some("tolerance_only") => StopRule::ToleranceOnly,
                Some(other) => return Err(invalid("newton.stop", &format!("unknown rule `{other}` (linear_remainder, tolerance_only)"))),
            };
        }

        Ok(Scenario {
            name,
            pipeline,
            seed: raw.seed.unwrap_or(0),
            p,
            domains,
            structure,
            seed_map: SeedMapSpec { kind, components, perturbation },
            chart,
            sweep: Sweep { delta, gamma, h },
            newton,
        })
    }

    /// A builtin name or a path to a TOML file.
    pub fn load(source: &str) -> Result<Scenario> {
        if let Some((_, text)) = BUILTIN.iter().find(|(n, _)| *n == source) {
            return Scenario::parse(text);
        }
        let text = fs::read_to_string(source).map_err(|e| GlueError::Io(format!("{source}: {e}")))?;
        Scenario::parse(&text)
    }

    pub fn cfg(&self) -> NormConfig {
        NormConfig { p: self.p }
    }

    pub fn pair(&self, h: f64) -> Result<GoodPair> {
        let (a, b) = match &self.domains {
            DomainSpec::Rectangle => rectangle_pair(h)?,
            DomainSpec::Slab => slab_pair(h)?,
            DomainSpec::Custom { omega1, omega2, nx, ny, center } => {
                let (a0, a1, a2, a3) = omega1.bounding_box();
                let (b0, b1, b2, b3) = omega2.bounding_box();
                let (x0, x1, y0, y1) = (a0.min(b0), a1.max(b1), a2.min(b2), a3.max(b3));
                let lat = match (nx, ny) {
                    (Some(nx), Some(ny)) => {
                        let c = center.unwrap_or(Complex64::new(0.5 * (x0 + x1), 0.5 * (y0 + y1)));
                        let origin = c - Complex64::new((*nx as f64 - 1.0) * 0.5 * h, (*ny as f64 - 1.0) * 0.5 * h);
                        Lattice::new(origin, h, *nx, *ny)?
                    }
                    _ => Lattice::covering(x0, x1, y0, y1, h, 3)?,
                };
                (build_domain(omega1, lat)?, build_domain(omega2, lat)?)
            }
        };
        build_cutoffs(&a, &b)
    }

    pub fn structure(&self, registry: &StructureRegistry) -> Result<AlmostComplexStructure> {
        registry.build(&self.structure)
    }

    pub fn chart_map(&self, n: usize) -> Result<ChartMap> {
        Ok(match &self.chart {
            ChartSpec::Identity => ChartMap::Identity { n },
            ChartSpec::Rotation { theta, offset } => ChartMap::rotation(n, *theta, *offset),
            ChartSpec::Affine { matrix, b } => {
                let rows = matrix.len();
                if rows != 2 * n || matrix.iter().any(|r| r.len() != rows) {
                    return Err(invalid("chart.matrix", &format!("needs {0} rows of {0} entries", 2 * n)));
                }
                let m = DMatrix::from_fn(rows, rows, |r, c| matrix[r][c]);
                ChartMap::affine(m, b.clone()).map_err(|e| invalid("chart.matrix", &e.to_string()))?
            }
            ChartSpec::Shear { c } => {
                if n != 2 {
                    return Err(invalid("chart.family", "the shear needs n = 2"));
                }
                ChartMap::Shear { c: *c }
            }
        })
    }

    /// `sum_k c_k z^k` per component plus the seeded perturbation, on `domain`.
    pub fn base_field(&self, domain: &Arc<GridDomain>, n: usize) -> Result<Field> {
        let comps = &self.seed_map.components;
        if comps.len() != n && comps.len() != 1 {
            return Err(invalid("seed_map.components", &format!("structure has n = {n}, seed map has {} components", comps.len())));
        }
        let mut coeffs: Vec<Vec<Complex64>> = (0..n).map(|c| comps[c.min(comps.len() - 1)].clone()).collect();
        if let Some((degree, amp)) = self.seed_map.perturbation {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            for c in coeffs.iter_mut() {
                c.resize(c.len().max(degree + 1), Complex64::new(0.0, 0.0));
                for a in c.iter_mut().take(degree + 1) {
                    *a += Complex64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)) * amp;
                }
            }
        }
        Ok(Field::from_fn(domain, n, |z, out| {
            for (c, o) in coeffs.iter().zip(out.iter_mut()) {
                *o = c.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, a| acc * z + a);
            }
        }))
    }

    /// Sweep points in output order: `h` outermost, then `gamma`, then `delta`.
    pub fn points(&self) -> Vec<SweepPoint> {
        let gammas: Vec<Option<f64>> = if self.sweep.gamma.is_empty() { vec![None] } else { self.sweep.gamma.iter().map(|g| Some(*g)).collect() };
        let mut out = Vec::new();
        for &h in &self.sweep.h {
            for &gamma in &gammas {
                for &delta in &self.sweep.delta {
                    out.push(SweepPoint { run: out.len(), h, gamma, delta });
                }
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SweepPoint {
    pub run: usize,
    pub h: f64,
    pub gamma: Option<f64>,
    pub delta: f64,
}

/// What one sweep point produced.
#[derive(Clone, Debug)]
pub struct PointOutcome {
    pub point: SweepPoint,
    pub lattice: Lattice,
    pub fields: Vec<(&'static str, Field)>,
    /// Columns of `CERTIFICATE_HEADER`; the Newton constants are empty for the classical pipeline.
    pub certificate: Vec<String>,
    pub stop: String,
    pub tol: f64,
    /// Where the right inverse came from (`cauchy-green` for the classical pipeline).
    pub provenance: String,
    pub preglue_residual: f64,
    pub c0: f64,
    pub final_residual: f64,
    pub iterations: usize,
    pub verdict: String,
    /// Certified (Newton pipelines) or accepted (classical pipeline).
    pub ok: bool,
    /// `(residual, compatibility defect, drift)` per iterate.
    pub trace: Vec<(f64, Option<f64>, Option<f64>)>,
}

/// Everything a scenario needs before the first point runs; building it validates the scenario.
pub struct Prepared {
    pub scenario: Scenario,
    pub structure: AlmostComplexStructure,
    pub transition: Option<ChartTransition>,
    pub pairs: Vec<GoodPair>,
}

/// Resolves structure, chart and all grids; errors name the offending key.
pub fn prepare(scenario: &Scenario, registry: &StructureRegistry) -> Result<Prepared> {
    let j = scenario.structure(registry)?;
    if scenario.pipeline == Pipeline::Classical && !j.is_standard() {
        return Err(invalid("structure.name", "the classical pipeline needs the standard structure"));
    }
    let transition = match scenario.pipeline {
        Pipeline::Pair => {
            let map = scenario.chart_map(j.n())?;
            Some(ChartTransition::fitted(map, j.clone()).map_err(|e| invalid("chart", &e.to_string()))?)
        }
        _ => None,
    };
    let mut pairs = Vec::new();
    for &h in &scenario.sweep.h {
        let pair = scenario.pair(h).map_err(|e| invalid(if matches!(scenario.domains, DomainSpec::Custom { .. }) { "domains" } else { "sweep.h" }, &format!("h = {h}: {e}")))?;
        scenario.base_field(&pair.union, j.n())?;
        pairs.push(pair);
    }
    Ok(Prepared { scenario: scenario.clone(), structure: j, transition, pairs })
}

fn empty_cert(initial: f64, final_res: f64, dist: f64, verdict: &str) -> Vec<String> {
    let e = |v: f64| format!("{v:.12e}");
    vec![String::new(), String::new(), String::new(), String::new(), e(initial), "0".into(), e(final_res), e(dist), verdict.into()]
}

fn stop_name(s: crate::solver::StopReason) -> String {
    format!("{s:?}").to_lowercase()
}

/// Runs one sweep point.
pub fn run_point(prep: &Prepared, point: SweepPoint) -> Result<PointOutcome> {
    let sc = &prep.scenario;
    let cfg = sc.cfg();
    let pair = &prep.pairs[sc.sweep.h.iter().position(|&h| h == point.h).expect("point comes from the sweep")];
    let j = &prep.structure;
    let base = sc.base_field(&pair.union, j.n())?;
    let delta = point.delta;
    let lattice = *pair.lattice();
    match sc.pipeline {
        Pipeline::Classical | Pipeline::Local => {
            let (f1, f2) = match sc.seed_map.kind {
                SeedKind::Polynomial => (base.restrict(&pair.omega1)?, base.map(|v| v + delta).restrict(&pair.omega2)?),
                SeedKind::Solution => seed_pair(pair, j, &base, delta, cfg)?,
            };
            if sc.pipeline == Pipeline::Classical {
                let t = CauchyOperator::new(&pair.union);
                let pre = preglue(pair, j, &f1, &f2, cfg)?;
                let f = classical_glue(pair, &f1, &f2, &t)?;
                let interior = pair.union.interior_nodes(3.0);
                let res = lp_norm_on(&d_zbar(&f), &interior, cfg);
                let floor = t.holomorphy_floor(cfg);
                let ok = res <= floor;
                let verdict = if ok { "accepted" } else { "rejected" };
                let pre_res = lp_norm(&pre.residual, cfg);
                let dist = w1p_norm(&(&f - &pre.phi), cfg);
                return Ok(PointOutcome {
                    point,
                    lattice,
                    fields: vec![("union", f)],
                    certificate: empty_cert(pre_res, res, dist, verdict),
                    stop: "direct".into(),
                    provenance: "cauchy-green".into(),
                    tol: floor,
                    preglue_residual: pre_res,
                    c0: if pre.delta > 0.0 { pre_res / pre.delta } else { 0.0 },
                    final_residual: res,
                    iterations: 0,
                    verdict: verdict.into(),
                    ok,
                    trace: vec![(pre_res, None, None), (res, None, None)],
                });
            }
            let (f, cert, diag) = glue_local(pair, j, &f1, &f2, cfg, sc.newton)?;
            Ok(PointOutcome {
                point,
                lattice,
                fields: vec![("union", f)],
                certificate: cert.csv_row(),
                stop: stop_name(cert.stop),
                provenance: cert.provenance.clone(),
                tol: cert.tol,
                preglue_residual: diag.preglue_residual,
                c0: diag.c0,
                final_residual: cert.final_residual(),
                iterations: cert.iterations(),
                verdict: cert.verdict.to_string(),
                ok: cert.verdict == Verdict::Certified,
                trace: cert.residual_history.iter().map(|&r| (r, None, None)).collect(),
            })
        }
        Pipeline::Pair => {
            let tr = prep.transition.as_ref().expect("pair scenarios carry a transition");
            let gamma = point.gamma.expect("pair points carry gamma");
            let (f1, f2) = match sc.seed_map.kind {
                SeedKind::Polynomial => (base.restrict(&pair.omega1)?, tr.pull(&base.map(|v| v + delta).restrict(&pair.omega2)?)),
                SeedKind::Solution => seed_chart_pair(tr, pair, &base, delta, cfg)?,
            };
            let (g1, g2, cert, diag) = glue_pair(tr, pair, &f1, &f2, gamma, cfg, sc.newton)?;
            let trace = cert
                .residual_history
                .iter()
                .enumerate()
                .map(|(k, &r)| (r, diag.compatibility_trace.get(k).copied(), if k == 0 { None } else { diag.drift_trace.get(k - 1).copied() }))
                .collect();
            Ok(PointOutcome {
                point,
                lattice,
                fields: vec![("omega1", g1), ("omega2", g2)],
                certificate: cert.csv_row(),
                stop: stop_name(cert.stop),
                provenance: cert.provenance.clone(),
                tol: cert.tol,
                preglue_residual: diag.preglue_residual,
                c0: diag.c0,
                final_residual: cert.final_residual(),
                iterations: cert.iterations(),
                verdict: cert.verdict.to_string(),
                ok: cert.verdict == Verdict::Certified,
                trace,
            })
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunReport {
    pub scenario: Scenario,
    pub outcomes: Vec<PointOutcome>,
}

impl RunReport {
    pub fn all_ok(&self) -> bool {
        self.outcomes.iter().all(|o| o.ok)
    }
}

/// Runs every sweep point, `threads` workers at a time (all cores when `None`).
/// The first pipeline error aborts the run, tagged with the scenario and the point.
pub fn run_scenario(scenario: &Scenario, registry: &StructureRegistry, threads: Option<usize>) -> Result<RunReport> {
    let prep = prepare(scenario, registry)?;
    let points = scenario.points();
    let work = || -> Vec<Result<PointOutcome>> { points.par_iter().map(|&p| run_point(&prep, p)).collect() };
    let results = match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| GlueError::Io(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    let mut outcomes = Vec::with_capacity(results.len());
    for (r, p) in results.into_iter().zip(&points) {
        outcomes.push(r.map_err(|e| in_context(e, &scenario.name, p))?);
    }
    Ok(RunReport { scenario: scenario.clone(), outcomes })
}

fn in_context(e: GlueError, name: &str, p: &SweepPoint) -> GlueError {
    let gamma = p.gamma.map(|g| format!(", gamma = {g}")).unwrap_or_default();
    GlueError::InScenario { context: format!("scenario `{name}`, run {} (h = {}, delta = {}{gamma})", p.run, p.h, p.delta), inner: Box::new(e) }
}

/// Least-squares line `y = slope x + intercept` and its R^2 (None for a single point).
pub fn fit_line(x: &[f64], y: &[f64]) -> (f64, f64, Option<f64>) {
    let m = x.len() as f64;
    if x.len() < 2 {
        let s = if x.first().copied().unwrap_or(0.0) != 0.0 { y[0] / x[0] } else { 0.0 };
        return (s, 0.0, None);
    }
    let (mx, my) = (x.iter().sum::<f64>() / m, y.iter().sum::<f64>() / m);
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let sst: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    (slope, intercept, Some(if sst > 0.0 { 1.0 - sse / sst } else { 1.0 }))
}

pub const FIELDS_HEADER: [&str; 6] = ["run", "domain", "ix", "iy", "x", "y"];
pub const CERTIFICATES_PREFIX: [&str; 5] = ["run", "pipeline", "h", "gamma", "delta"];
pub const CERTIFICATES_SUFFIX: [&str; 3] = ["stop", "tol", "provenance"];
pub const SUMMARY_HEADER: [&str; 13] =
    ["run", "h", "gamma", "delta", "preglue_residual", "c0", "final_residual", "iterations", "verdict", "slope", "intercept", "r2", "ok"];
pub const TRACES_HEADER: [&str; 5] = ["run", "iteration", "residual", "compatibility_defect", "drift"];
pub const LATTICES_HEADER: [&str; 6] = ["run", "h", "origin_x", "origin_y", "nx", "ny"];

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    w.into_inner().map_err(|e| GlueError::Io(e.to_string()))
}

/// File names and contents of a run, in a fixed order.
pub fn artifacts(report: &RunReport, seed_ran: u64) -> Result<Vec<(String, Vec<u8>)>> {
    let sc = &report.scenario;
    let n = report.outcomes.first().and_then(|o| o.fields.first()).map(|(_, f)| f.n()).unwrap_or(1);
    let mut header: Vec<String> = FIELDS_HEADER.iter().map(|s| s.to_string()).collect();
    for c in 1..=n {
        header.push(format!("re{c}"));
        header.push(format!("im{c}"));
    }
    let mut field_rows = Vec::new();
    for o in &report.outcomes {
        for (name, f) in &o.fields {
            let d = f.domain();
            for (k, &i) in d.nodes().iter().enumerate() {
                let (ix, iy) = d.lattice().coords(i);
                let z = d.point(k);
                let mut row = vec![o.point.run.to_string(), name.to_string(), ix.to_string(), iy.to_string(), num(z.re), num(z.im)];
                for v in f.at(k) {
                    row.push(num(v.re));
                    row.push(num(v.im));
                }
                field_rows.push(row);
            }
        }
    }
    let h: Vec<&str> = header.iter().map(|s| s.as_str()).collect();
    let fields = csv_bytes(&h, field_rows)?;

    let cert_header: Vec<&str> = CERTIFICATES_PREFIX.iter().chain(CERTIFICATE_HEADER.iter()).chain(CERTIFICATES_SUFFIX.iter()).copied().collect();
    let certs = csv_bytes(
        &cert_header,
        report.outcomes.iter().map(|o| {
            let mut row = vec![o.point.run.to_string(), sc.pipeline.name().to_string(), num(o.point.h), opt(o.point.gamma), num(o.point.delta)];
            row.extend(o.certificate.iter().cloned());
            row.push(o.stop.clone());
            row.push(format!("{:.12e}", o.tol));
            row.push(o.provenance.clone());
            row
        }),
    )?;

    // residual-law fit per (h, gamma) group
    let mut fits: BTreeMap<(u64, u64), (f64, f64, Option<f64>)> = BTreeMap::new();
    for o in &report.outcomes {
        let key = (o.point.h.to_bits(), o.point.gamma.unwrap_or(-1.0).to_bits());
        if fits.contains_key(&key) {
            continue;
        }
        let group: Vec<&PointOutcome> = report.outcomes.iter().filter(|p| (p.point.h.to_bits(), p.point.gamma.unwrap_or(-1.0).to_bits()) == key).collect();
        let x: Vec<f64> = group.iter().map(|p| p.point.delta).collect();
        let y: Vec<f64> = group.iter().map(|p| p.preglue_residual).collect();
        fits.insert(key, fit_line(&x, &y));
    }
    let summary = csv_bytes(
        &SUMMARY_HEADER,
        report.outcomes.iter().map(|o| {
            let (s, i, r2) = fits[&(o.point.h.to_bits(), o.point.gamma.unwrap_or(-1.0).to_bits())];
            vec![
                o.point.run.to_string(),
                num(o.point.h),
                opt(o.point.gamma),
                num(o.point.delta),
                num(o.preglue_residual),
                num(o.c0),
                num(o.final_residual),
                o.iterations.to_string(),
                o.verdict.clone(),
                num(s),
                num(i),
                opt(r2),
                o.ok.to_string(),
            ]
        }),
    )?;

    let traces = csv_bytes(
        &TRACES_HEADER,
        report.outcomes.iter().flat_map(|o| {
            o.trace.iter().enumerate().map(move |(k, (r, c, d))| vec![o.point.run.to_string(), k.to_string(), num(*r), opt(*c), opt(*d)])
        }),
    )?;

    let lattices = csv_bytes(
        &LATTICES_HEADER,
        report.outcomes.iter().map(|o| {
            let l = o.lattice;
            vec![o.point.run.to_string(), num(l.h), num(l.origin.re), num(l.origin.im), l.nx.to_string(), l.ny.to_string()]
        }),
    )?;

    let meta = csv_bytes(
        &["key", "value"],
        [
            ("scenario", sc.name.clone()),
            ("pipeline", sc.pipeline.name().to_string()),
            ("seed", seed_ran.to_string()),
            ("p", num(sc.p)),
            ("components", n.to_string()),
            ("points", report.outcomes.len().to_string()),
            ("all_ok", report.all_ok().to_string()),
        ]
        .into_iter()
        .map(|(k, v)| vec![k.to_string(), v]),
    )?;

    let residual_plot = format!(
        "# residual law: pregluing residual against the overlap discrepancy\n\
         data: sweep_summary.csv\n\
         x: delta\n\
         y: preglue_residual\n\
         group: h, gamma\n\
         axes: log, log\n\
         overlay: line slope * delta + intercept\n"
    );
    let newton_plot = "# Newton convergence per run\n\
         data: traces.csv\n\
         x: iteration\n\
         y: residual\n\
         group: run\n\
         axes: linear, log\n"
        .to_string();
    let mut out = vec![
        ("fields.csv".to_string(), fields),
        ("certificates.csv".to_string(), certs),
        ("sweep_summary.csv".to_string(), summary),
        ("traces.csv".to_string(), traces),
        ("lattices.csv".to_string(), lattices),
        ("meta.csv".to_string(), meta),
        ("plot_residual_law.txt".to_string(), residual_plot.into_bytes()),
        ("plot_newton.txt".to_string(), newton_plot.into_bytes()),
    ];
    if sc.pipeline == Pipeline::Pair {
        let plot = "# compatibility defect per iterate\n\
             data: traces.csv\n\
             x: iteration\n\
             y: compatibility_defect\n\
             group: run\n\
             axes: linear, log\n"
            .to_string();
        out.push(("plot_compatibility.txt".to_string(), plot.into_bytes()));
    }
    Ok(out)
}

/// Writes every artifact to a temporary name in `dir`, then renames them into place.
pub fn write_artifacts(dir: &Path, files: &[(String, Vec<u8>)]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut staged = Vec::new();
    for (name, bytes) in files {
        let tmp = dir.join(format!(".{name}.partial"));
        fs::write(&tmp, bytes)?;
        staged.push((tmp, dir.join(name)));
    }
    let mut out = Vec::new();
    for (tmp, dest) in staged {
        fs::rename(&tmp, &dest)?;
        out.push(dest);
    }
    Ok(out)
}

/// Differences between the fields of two run directories.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldDiff {
    pub run: usize,
    pub domain: String,
    pub w1p: f64,
    pub c0: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareReport {
    pub diffs: Vec<FieldDiff>,
}

impl CompareReport {
    pub fn pass(&self) -> bool {
        !self.diffs.is_empty() && self.diffs.iter().all(|d| d.pass)
    }
}

type FieldRows = BTreeMap<(usize, String), Vec<(usize, usize, Vec<Complex64>)>>;

fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| GlueError::Io(format!("{}: {e}", path.display())))?;
    let header = r.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(String::from).collect());
    }
    Ok((header, rows))
}

fn parse<T: std::str::FromStr>(s: &str, path: &Path) -> Result<T> {
    s.parse().map_err(|_| GlueError::Io(format!("{}: cannot parse `{s}`", path.display())))
}

fn read_lattices(dir: &Path) -> Result<BTreeMap<usize, Lattice>> {
    let path = dir.join("lattices.csv");
    let (_, rows) = read_csv(&path)?;
    let mut out = BTreeMap::new();
    for r in rows {
        if r.len() != LATTICES_HEADER.len() {
            return Err(GlueError::Io(format!("{}: malformed row", path.display())));
        }
        let lat = Lattice::new(Complex64::new(parse(&r[2], &path)?, parse(&r[3], &path)?), parse(&r[1], &path)?, parse(&r[4], &path)?, parse(&r[5], &path)?)?;
        out.insert(parse(&r[0], &path)?, lat);
    }
    Ok(out)
}

fn read_fields(dir: &Path) -> Result<FieldRows> {
    let path = dir.join("fields.csv");
    let (header, rows) = read_csv(&path)?;
    if header.len() < 8 || (header.len() - 6) % 2 != 0 {
        return Err(GlueError::Io(format!("{}: unexpected header", path.display())));
    }
    let n = (header.len() - 6) / 2;
    let mut out: FieldRows = BTreeMap::new();
    for r in rows {
        let vals = (0..n).map(|c| Ok(Complex64::new(parse(&r[6 + 2 * c], &path)?, parse(&r[7 + 2 * c], &path)?))).collect::<Result<Vec<_>>>()?;
        out.entry((parse(&r[0], &path)?, r[1].clone())).or_default().push((parse(&r[2], &path)?, parse(&r[3], &path)?, vals));
    }
    Ok(out)
}

fn read_p(dir: &Path) -> Result<f64> {
    let path = dir.join("meta.csv");
    let (_, rows) = read_csv(&path)?;
    rows.iter().find(|r| r.first().map(|s| s == "p").unwrap_or(false)).map(|r| parse(&r[1], &path)).unwrap_or(Ok(4.0))
}

fn same_lattice(a: &Lattice, b: &Lattice) -> bool {
    let close = |x: f64, y: f64| (x - y).abs() <= 1e-12 * (1.0 + x.abs().max(y.abs()));
    a.nx == b.nx && a.ny == b.ny && close(a.h, b.h) && close(a.origin.re, b.origin.re) && close(a.origin.im, b.origin.im)
}

/// Per-field `W^{1,p}` and sup differences between two run directories. Norms are taken on
/// the node set with unit cell weights (shape occupancy is not stored in the artifacts).
pub fn compare(a: &Path, b: &Path, tol_w1p: f64, tol_c0: f64) -> Result<CompareReport> {
    let (la, lb) = (read_lattices(a)?, read_lattices(b)?);
    if la.len() != lb.len() || la.iter().zip(&lb).any(|((ra, x), (rb, y))| ra != rb || !same_lattice(x, y)) {
        return Err(GlueError::IncompatibleLattices("the runs use different lattices".into()));
    }
    let (fa, fb) = (read_fields(a)?, read_fields(b)?);
    if fa.keys().ne(fb.keys()) {
        return Err(GlueError::IncompatibleLattices("the runs hold different fields".into()));
    }
    let cfg = NormConfig::new(read_p(a)?)?;
    let mut diffs = Vec::new();
    for ((run, name), rows_a) in &fa {
        let rows_b = &fb[&(*run, name.clone())];
        let lat = *la.get(run).ok_or_else(|| GlueError::IncompatibleLattices(format!("run {run} has no lattice")))?;
        let index = |rows: &Vec<(usize, usize, Vec<Complex64>)>| -> Result<BTreeMap<usize, Vec<Complex64>>> {
            let mut m = BTreeMap::new();
            for (ix, iy, v) in rows {
                if *ix >= lat.nx || *iy >= lat.ny {
                    return Err(GlueError::IncompatibleLattices(format!("node ({ix}, {iy}) outside the lattice")));
                }
                m.insert(lat.index(*ix, *iy), v.clone());
            }
            Ok(m)
        };
        let (ma, mb) = (index(rows_a)?, index(rows_b)?);
        if ma.keys().ne(mb.keys()) {
            return Err(GlueError::IncompatibleLattices(format!("run {run}, {name}: node sets differ")));
        }
        let n = ma.values().next().map(|v| v.len()).unwrap_or(0);
        if mb.values().next().map(|v| v.len()).unwrap_or(0) != n {
            return Err(GlueError::IncompatibleLattices(format!("run {run}, {name}: component counts differ")));
        }
        let mut mask = vec![false; lat.len()];
        for &i in ma.keys() {
            mask[i] = true;
        }
        let dom = Arc::new(GridDomain::from_mask(lat, mask, vec![u64::MAX; lat.len()])?);
        let diff: Vec<Complex64> = ma.iter().flat_map(|(i, va)| va.iter().zip(&mb[i]).map(|(x, y)| x - y).collect::<Vec<_>>()).collect();
        let d = Field::from_values(&dom, n, diff)?;
        let (w, c) = (w1p_norm(&d, cfg), d.max_abs());
        diffs.push(FieldDiff { run: *run, domain: name.clone(), w1p: w, c0: c, pass: w <= tol_w1p && c <= tol_c0 });
    }
    Ok(CompareReport { diffs })
}

/// Parses, runs and writes a scenario. `seed` overrides the scenario's seed.
/// Returns the report; nothing is written unless every point ran.
pub fn run_to_dir(source: &str, out: &Path, seed: Option<u64>, threads: Option<usize>, registry: &StructureRegistry) -> Result<RunReport> {
    let mut sc = Scenario::load(source)?;
    if let Some(s) = seed {
        sc.seed = s;
    }
    let report = run_scenario(&sc, registry, threads)?;
    let files = artifacts(&report, sc.seed)?;
    write_artifacts(out, &files)?;
    Ok(report)
}
