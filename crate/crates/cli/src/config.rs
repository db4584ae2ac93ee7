//! Problem configuration: presets, JSON documents and dotted-key overrides.
//!
//! Resolution order is preset defaults, then the JSON document, then
//! `key=value` overrides. Every key of the document and of the overrides must
//! exist in the resolved schema; unknown keys are rejected with their path.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use microtop_core::fem::PlaneModel;
use microtop_core::filters::FilterKind;
use microtop_core::mesh::{DesignLayout, Edge, Load, LoadKind, MeshConfig, Support};
use microtop_core::optimizer::{InitialDesign, Material, OptimizerOptions, Schedule, SolverKind, SolverOptions};
use microtop_core::policy::RebuildPolicy;

use crate::CliError;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub preset: String,
    pub geometry: Geometry,
    pub material: MaterialConfig,
    pub support: SupportConfig,
    pub loads: Vec<LoadConfig>,
    pub layout: LayoutConfig,
    pub filter: FilterConfig,
    pub projection: ProjectionConfig,
    pub solver: SolverConfig,
    pub optimizer: OptimizerConfig,
    pub benchmark: BenchmarkConfig,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub length: f64,
    pub height: f64,
    /// Coarse cells across the height.
    pub mx: usize,
    /// Coarse cells along the length; `null` keeps the cells square.
    pub my: Option<usize>,
    /// Fine elements per coarse-cell edge.
    pub n: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MaterialConfig {
    pub emax: f64,
    pub emin: f64,
    pub nu: f64,
    pub plane_strain: bool,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum SupportConfig {
    DoubleClamped,
    Cantilever,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeConfig {
    Left,
    Right,
    Bottom,
    Top,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum Component {
    X,
    Y,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LoadConfig {
    /// Concentrated force at the node nearest `(x, y)`.
    Point { x: f64, y: f64, component: Component, magnitude: f64 },
    /// Force per unit length along an edge.
    Edge { edge: EdgeConfig, component: Component, magnitude: f64 },
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum LayoutConfig {
    Single,
    /// Layer thicknesses from the top down, summing to one.
    Layers { fractions: Vec<f64> },
    Slice,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub kind: FilterKindConfig,
    /// Radius in fine-element edge lengths.
    pub rmin: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum FilterKindConfig {
    Neighbourhood,
    Pde,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ProjectionMode {
    /// One realisation; SIMP continuation `p = 1..5` at fixed `beta`.
    Single,
    /// Several thresholds; stages `(1.5, beta0)`, `(p1, beta0)`, `(p1, beta1)`.
    Robust,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ProjectionConfig {
    pub mode: ProjectionMode,
    pub beta: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub p1: f64,
    pub etas: Vec<f64>,
    pub kappa: f64,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum SolverKindConfig {
    Direct,
    Msfem,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyConfig {
    Constant,
    Heuristic,
    HeuristicWarm,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub kind: SolverKindConfig,
    pub lambda_threshold: f64,
    pub tol: f64,
    pub policy: PolicyConfig,
    /// Rebuild threshold of the heuristic policies, in percent.
    pub threshold_pct: f64,
    pub max_modes: usize,
    pub max_gmres: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct OptimizerConfig {
    pub vf: f64,
    pub max_iter: usize,
    /// Iterations per continuation stage before it is forced to advance;
    /// `null` picks 50 (single) or 100 (robust).
    pub stage_cap: Option<usize>,
    /// Run the final stage to `max_iter` regardless of convergence.
    pub full_budget: bool,
    /// Random initial design from this seed; `null` starts from `vf`.
    pub seed: Option<u64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub lambdas: Vec<f64>,
    pub emins: Vec<f64>,
    pub tol: f64,
    /// Cross bar width as a fraction of the cell edge.
    pub bar_fraction: f64,
    /// Filter radius applied to the cross, in fine elements; 0 keeps it sharp.
    pub rmin: f64,
    pub penal: f64,
}

pub const PRESETS: &[&str] = &[
    "double-clamped",
    "doubleclamped-single-Mx4",
    "doubleclamped-robust-Mx16",
    "cantilever-distributed",
    "cantilever-concentrated",
    "cross-benchmark",
    "custom",
];

fn double_clamped() -> ProblemConfig {
    ProblemConfig {
        preset: "double-clamped".into(),
        geometry: Geometry {
            length: 2.0,
            height: 1.0,
            mx: 4,
            my: None,
            n: 40,
        },
        material: MaterialConfig {
            emax: 1.0,
            emin: 1e-9,
            nu: 0.3,
            plane_strain: false,
        },
        support: SupportConfig::DoubleClamped,
        loads: vec![LoadConfig::Point {
            x: 1.0,
            y: 0.5,
            component: Component::Y,
            magnitude: -0.01,
        }],
        layout: LayoutConfig::Single,
        filter: FilterConfig {
            kind: FilterKindConfig::Neighbourhood,
            rmin: 4.0,
        },
        projection: ProjectionConfig {
            mode: ProjectionMode::Single,
            beta: 64.0,
            beta0: 16.0,
            beta1: 64.0,
            p1: 5.0,
            etas: vec![0.5],
            kappa: 1.0,
        },
        solver: SolverConfig {
            kind: SolverKindConfig::Msfem,
            lambda_threshold: 6.5e-4,
            tol: 1e-6,
            policy: PolicyConfig::HeuristicWarm,
            threshold_pct: 20.0,
            max_modes: 200,
            max_gmres: 500,
        },
        optimizer: OptimizerConfig {
            vf: 0.5,
            max_iter: 300,
            stage_cap: None,
            full_budget: false,
            seed: None,
        },
        benchmark: BenchmarkConfig {
            lambdas: vec![5e-4, 1e-3, 3e-3, 1e-2],
            emins: vec![1e-3, 1e-6, 1e-9, 1e-12],
            tol: 1e-8,
            bar_fraction: 0.3,
            rmin: 4.0,
            penal: 3.0,
        },
    }
}

/// Preset defaults by name.
pub fn preset(name: &str) -> Result<ProblemConfig, CliError> {
    let mut c = double_clamped();
    c.preset = name.to_string();
    match name {
        "double-clamped" | "custom" => {}
        "doubleclamped-single-Mx4" => {
            c.solver.tol = 1e-5;
            c.optimizer.max_iter = 200;
            c.optimizer.full_budget = true;
        }
        "doubleclamped-robust-Mx16" => {
            c.geometry.mx = 16;
            c.projection.mode = ProjectionMode::Robust;
            c.projection.etas = vec![0.3, 0.5, 0.7];
        }
        "cantilever-distributed" => {
            c.support = SupportConfig::Cantilever;
            c.geometry.mx = 3;
            c.loads = vec![LoadConfig::Edge {
                edge: EdgeConfig::Right,
                component: Component::X,
                magnitude: 0.01,
            }];
            c.layout = LayoutConfig::Layers {
                fractions: vec![1.0 / 3.0; 3],
            };
            c.projection.mode = ProjectionMode::Robust;
            c.projection.etas = vec![0.3, 0.5, 0.7];
        }
        "cantilever-concentrated" => {
            c.support = SupportConfig::Cantilever;
            c.geometry.mx = 24;
            c.loads = vec![LoadConfig::Point {
                x: 2.0,
                y: 0.0,
                component: Component::Y,
                magnitude: -0.01,
            }];
            c.layout = LayoutConfig::Slice;
            c.projection.mode = ProjectionMode::Robust;
            c.projection.etas = vec![0.3, 0.5, 0.7];
        }
        "cross-benchmark" => {
            c.geometry.mx = 8;
            c.geometry.n = 20;
        }
        other => {
            return Err(CliError::Config(format!(
                "preset: unknown preset `{other}` (known: {})",
                PRESETS.join(", ")
            )))
        }
    }
    Ok(c)
}

/// Splits `a.b.c=value`; the value is parsed as JSON, falling back to a
/// plain string.
pub fn parse_override(s: &str) -> Result<(String, Value), CliError> {
    let (key, raw) = s
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{s}`: expected key=value")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(CliError::Config(format!("override `{s}`: empty key")));
    }
    let value = serde_json::from_str(raw.trim()).unwrap_or_else(|_| Value::String(raw.trim().to_string()));
    Ok((key.to_string(), value))
}

/// Replaces `base` leaves with `patch` leaves. Objects merge key by key; any
/// other value (including arrays) replaces wholesale, as does an object with a
/// `kind` tag, which selects a variant. Keys missing from `base` are unknown.
/// Internally tagged objects; a patch naming their `kind` replaces them whole.
const TAGGED: &[&str] = &["layout"];

fn merge(base: &mut Value, patch: &Value, path: &str) -> Result<(), CliError> {
    let tagged_swap = TAGGED.contains(&path) && patch.get("kind").is_some();
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) if !tagged_swap => {
            for (k, v) in p {
                let sub = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v, &sub)?,
                    None => return Err(CliError::Config(format!("{sub}: unknown key"))),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v.clone();
            Ok(())
        }
    }
}

fn set_dotted(root: &mut Value, key: &str, value: Value) -> Result<(), CliError> {
    let mut patch = value;
    for part in key.rsplit('.') {
        let mut m = Map::new();
        m.insert(part.to_string(), patch);
        patch = Value::Object(m);
    }
    merge(root, &patch, "")
}

/// Serialised defaults, with `null` optional fields kept as keys.
fn schema_value(c: &ProblemConfig) -> Value {
    serde_json::to_value(c).expect("config serialises")
}

/// Resolves a configuration from an optional document and overrides.
pub fn resolve(document: Option<&Value>, overrides: &[(String, Value)]) -> Result<ProblemConfig, CliError> {
    let preset_name = overrides
        .iter()
        .rev()
        .find(|(k, _)| k == "preset")
        .map(|(_, v)| v.clone())
        .or_else(|| document.and_then(|d| d.get("preset").cloned()))
        .unwrap_or_else(|| Value::String("double-clamped".into()));
    let preset_name = preset_name
        .as_str()
        .ok_or_else(|| CliError::Config("preset: expected a string".into()))?
        .to_string();
    let mut value = schema_value(&preset(&preset_name)?);
    if let Some(doc) = document {
        if !doc.is_object() {
            return Err(CliError::Config("config: top level must be a JSON object".into()));
        }
        merge(&mut value, doc, "")?;
    }
    for (k, v) in overrides {
        set_dotted(&mut value, k, v.clone())?;
    }
    let cfg: ProblemConfig = serde_json::from_value(value).map_err(|e| CliError::Config(format!("config: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load(path: Option<&Path>, overrides: &[(String, Value)]) -> Result<ProblemConfig, CliError> {
    let doc = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::Io(p.display().to_string(), e))?;
            Some(serde_json::from_str::<Value>(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?)
        }
        None => None,
    };
    resolve(doc.as_ref(), overrides)
}

fn positive(key: &str, v: f64) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::Config(format!("{key}: must be positive (got {v})")))
    }
}

impl ProblemConfig {
    pub fn my(&self) -> usize {
        self.geometry
            .my
            .unwrap_or_else(|| (self.geometry.mx as f64 * self.geometry.length / self.geometry.height).round() as usize)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let g = &self.geometry;
        positive("geometry.length", g.length)?;
        positive("geometry.height", g.height)?;
        if g.mx == 0 || g.n == 0 || self.my() == 0 {
            return Err(CliError::Config("geometry: mx, my and n must be at least 1".into()));
        }
        let hx = g.length / self.my() as f64;
        let hy = g.height / g.mx as f64;
        if (hx - hy).abs() > 1e-9 * hy {
            return Err(CliError::Config(format!(
                "geometry: coarse cells must be square (length/my = {hx}, height/mx = {hy})"
            )));
        }
        positive("material.emax", self.material.emax)?;
        positive("material.emin", self.material.emin)?;
        if self.material.emin >= self.material.emax {
            return Err(CliError::Config("material.emin: must be below material.emax".into()));
        }
        if let LayoutConfig::Layers { fractions } = &self.layout {
            let sum: f64 = fractions.iter().sum();
            if fractions.is_empty() || (sum - 1.0).abs() > 1e-9 || fractions.iter().any(|&f| f <= 0.0) {
                return Err(CliError::Config(format!(
                    "layout.fractions: thicknesses must be positive and sum to 1 (sum = {sum})"
                )));
            }
        }
        positive("filter.rmin", self.filter.rmin)?;
        let p = &self.projection;
        if p.etas.is_empty() {
            return Err(CliError::Config("projection.etas: at least one threshold is required".into()));
        }
        if p.etas.windows(2).any(|w| w[0] >= w[1]) {
            return Err(CliError::Config("projection.etas: thresholds must be strictly ascending".into()));
        }
        if p.etas.iter().any(|&e| !(0.0..=1.0).contains(&e)) {
            return Err(CliError::Config("projection.etas: thresholds must lie in [0, 1]".into()));
        }
        positive("projection.beta", p.beta)?;
        positive("projection.beta0", p.beta0)?;
        positive("projection.beta1", p.beta1)?;
        positive("projection.p1", p.p1)?;
        if p.kappa < 0.0 {
            return Err(CliError::Config("projection.kappa: must be non-negative".into()));
        }
        positive("solver.lambda_threshold", self.solver.lambda_threshold)?;
        positive("solver.tol", self.solver.tol)?;
        positive("solver.threshold_pct", self.solver.threshold_pct)?;
        if self.solver.max_gmres == 0 {
            return Err(CliError::Config("solver.max_gmres: must be at least 1".into()));
        }
        let o = &self.optimizer;
        if !(o.vf > 0.0 && o.vf < 1.0) {
            return Err(CliError::Config(format!("optimizer.vf: must lie in (0, 1) (got {})", o.vf)));
        }
        if o.max_iter == 0 {
            return Err(CliError::Config("optimizer.max_iter: must be at least 1".into()));
        }
        positive("benchmark.tol", self.benchmark.tol)?;
        if self.benchmark.lambdas.iter().any(|&l| l <= 0.0) || self.benchmark.emins.iter().any(|&e| e <= 0.0) {
            return Err(CliError::Config("benchmark: lambdas and emins must be positive".into()));
        }
        Ok(())
    }

    pub fn mesh_config(&self) -> MeshConfig {
        let comp = |c: Component| match c {
            Component::X => 0,
            Component::Y => 1,
        };
        MeshConfig {
            length: self.geometry.length,
            height: self.geometry.height,
            mx: self.geometry.mx,
            my: self.my(),
            n: self.geometry.n,
            support: match self.support {
                SupportConfig::DoubleClamped => Support::DoubleClamped,
                SupportConfig::Cantilever => Support::Cantilever,
            },
            loads: self
                .loads
                .iter()
                .map(|l| match *l {
                    LoadConfig::Point { x, y, component, magnitude } => Load {
                        kind: LoadKind::Point { x, y },
                        component: comp(component),
                        magnitude,
                    },
                    LoadConfig::Edge { edge, component, magnitude } => Load {
                        kind: LoadKind::Edge(match edge {
                            EdgeConfig::Left => Edge::Left,
                            EdgeConfig::Right => Edge::Right,
                            EdgeConfig::Bottom => Edge::Bottom,
                            EdgeConfig::Top => Edge::Top,
                        }),
                        component: comp(component),
                        magnitude,
                    },
                })
                .collect(),
        }
    }

    pub fn design_layout(&self) -> Result<DesignLayout, CliError> {
        Ok(match &self.layout {
            LayoutConfig::Single => DesignLayout::single(self.geometry.mx),
            LayoutConfig::Layers { fractions } => DesignLayout::layers(self.geometry.mx, fractions)?,
            LayoutConfig::Slice => DesignLayout::slice(self.geometry.mx),
        })
    }

    pub fn material(&self) -> Material {
        Material {
            emin: self.material.emin,
            emax: self.material.emax,
            nu: self.material.nu,
            model: if self.material.plane_strain {
                PlaneModel::Strain
            } else {
                PlaneModel::Stress
            },
        }
    }

    pub fn filter_kind(&self) -> FilterKind {
        match self.filter.kind {
            FilterKindConfig::Neighbourhood => FilterKind::Neighbourhood,
            FilterKindConfig::Pde => FilterKind::Pde,
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        let s = &self.solver;
        SolverOptions {
            kind: match s.kind {
                SolverKindConfig::Direct => SolverKind::Direct,
                SolverKindConfig::Msfem => SolverKind::Msfem,
            },
            lambda_threshold: s.lambda_threshold,
            max_modes: s.max_modes,
            tol: s.tol,
            policy: match s.policy {
                PolicyConfig::Constant => RebuildPolicy::Constant,
                PolicyConfig::Heuristic => RebuildPolicy::Heuristic {
                    threshold_pct: s.threshold_pct,
                    warm: false,
                },
                PolicyConfig::HeuristicWarm => RebuildPolicy::Heuristic {
                    threshold_pct: s.threshold_pct,
                    warm: true,
                },
            },
            warm_start: s.policy == PolicyConfig::HeuristicWarm,
            max_iter: s.max_gmres,
        }
    }

    pub fn schedule(&self) -> Schedule {
        let p = &self.projection;
        let mut s = match p.mode {
            ProjectionMode::Single => Schedule::single(p.beta, self.optimizer.max_iter),
            ProjectionMode::Robust => Schedule::robust(p.p1, p.beta0, p.beta1, self.optimizer.max_iter),
        };
        if let Some(cap) = self.optimizer.stage_cap {
            s.stage_cap = cap;
        }
        s.full_budget = self.optimizer.full_budget;
        s
    }

    pub fn optimizer_options(&self) -> OptimizerOptions {
        OptimizerOptions {
            vf: self.optimizer.vf,
            etas: self.projection.etas.clone(),
            kappa: match self.projection.mode {
                ProjectionMode::Single => 0.0,
                ProjectionMode::Robust => self.projection.kappa,
            },
            schedule: self.schedule(),
            solver: self.solver_options(),
            initial: self.optimizer.seed.map_or(InitialDesign::Uniform, InitialDesign::Random),
        }
    }
}
