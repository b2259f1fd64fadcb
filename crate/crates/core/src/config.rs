//! Scenario files (TOML).
//!
//! ```toml
//! version = 1
//!
//! [system]
//! C = [[1.0, 0.0], [0.0, 1.0]]
//! continuous = { A_cont = [[0.0, 1.0], [-1.0, 0.0]], tau = 0.1 }   # or A = [[...]]
//!
//! [graph]
//! p = 2
//! edges = [[1, 2]]            # 1-based; optional `weights = [...]`
//!
//! [security]
//! s = 0
//! attacks = [{ node = 1, kind = "jump", t0 = 10, offset = 0.5 }]
//!
//! [compression]
//! mode = "identity"           # identity | given (with D) | design (seed, max_tries)
//!
//! [tracker]
//! gains = "auto"              # auto | explicit (with k_p, k_i)
//! epsilon = 1e-6
//!
//! [run]
//! T = 300
//! x0 = [1.0, 0.0]
//! ```
//!
//! Unknown keys are rejected. [`ScenarioConfig::emit`] writes the canonical
//! form, which parses back to an identical value.

use std::collections::BTreeMap;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::adversary::{AttackError, AttackKind, AttackPlan, DEFAULT_EPSILON};
use crate::compress::{self, CompressError};
use crate::graph::{CommGraph, GraphError};
use crate::model::{self, LtiSystem, ModelError};
use crate::sim::{Scenario, TrackerInit};
use crate::tracker::TrackerGains;

pub const CONFIG_VERSION: u32 = 1;
pub const DEFAULT_DESIGN_TRIES: usize = 20;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid `{field}`: {message}")]
    Invalid { field: &'static str, message: String },
    #[error("unsupported config version {0} (expected {CONFIG_VERSION})")]
    Version(u32),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Compress(#[from] CompressError),
}

fn invalid(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field, message: message.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub version: u32,
    pub system: SystemConfig,
    pub graph: GraphConfig,
    pub security: SecurityConfig,
    #[serde(default)]
    pub compression: CompressionConfig,
    #[serde(default)]
    pub tracker: TrackerConfig,
    pub run: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decode: Option<DecodeConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    #[serde(rename = "A", default, skip_serializing_if = "Option::is_none")]
    pub a: Option<Vec<Vec<f64>>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub continuous: Option<ContinuousConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuousConfig {
    #[serde(rename = "A_cont")]
    pub a_cont: Vec<Vec<f64>>,
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphConfig {
    pub p: usize,
    pub edges: Vec<[usize; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SecurityConfig {
    pub s: usize,
    #[serde(default)]
    pub attacks: Vec<AttackConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "snake_case")]
pub enum AttackConfig {
    ConsistentFakeState { node: usize, fake_x0: Vec<f64> },
    CompanionDrift { node: usize, e0: Vec<f64> },
    Jump { node: usize, t0: usize, offset: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CompressionMode {
    #[default]
    Identity,
    Given,
    Design,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompressionConfig {
    pub mode: CompressionMode,
    #[serde(rename = "D", default, skip_serializing_if = "Option::is_none")]
    pub d: Option<Vec<Vec<f64>>>,
    /// Design seed; defaults to `run.seed`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tries: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GainsMode {
    #[default]
    Auto,
    Explicit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackerConfig {
    #[serde(default)]
    pub gains: GainsMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_i: Option<f64>,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub init: TrackerInit,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self { gains: GainsMode::Auto, k_p: None, k_i: None, epsilon: DEFAULT_EPSILON, init: TrackerInit::Input }
    }
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

fn default_cadence() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(rename = "T")]
    pub horizon: usize,
    pub x0: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_cadence")]
    pub decode_cadence: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary: Option<String>,
}

/// Input of the `decode` subcommand: a tracked vector `W` (length `v·n`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecodeConfig {
    #[serde(rename = "W")]
    pub w: Vec<f64>,
}

fn matrix(field: &'static str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, ConfigError> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 {
        return Err(invalid(field, "matrix must be non-empty"));
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != ncols) {
        return Err(invalid(field, format!("row {} has {} entries, expected {ncols}", bad + 1, rows[bad].len())));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl ScenarioConfig {
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text)?;
        if cfg.version != CONFIG_VERSION {
            return Err(ConfigError::Version(cfg.version));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    /// Canonical text form.
    pub fn emit(&self) -> String {
        toml::to_string(self).expect("config values are always representable")
    }

    pub fn system(&self) -> Result<LtiSystem, ConfigError> {
        let a = match (&self.system.a, &self.system.continuous) {
            (Some(a), None) => matrix("system.A", a)?,
            (None, Some(cont)) => model::discretize(&matrix("system.continuous.A_cont", &cont.a_cont)?, cont.tau)?,
            _ => return Err(invalid("system", "give exactly one of `A` and `continuous`")),
        };
        Ok(LtiSystem::new(a, matrix("system.C", &self.system.c)?)?)
    }

    pub fn comm_graph(&self) -> Result<CommGraph, ConfigError> {
        let g = &self.graph;
        let weights = match &g.weights {
            Some(w) if w.len() != g.edges.len() => {
                return Err(invalid("graph.weights", format!("{} weights for {} edges", w.len(), g.edges.len())))
            }
            Some(w) => w.clone(),
            None => vec![1.0; g.edges.len()],
        };
        let edges: Vec<_> = g.edges.iter().zip(weights).map(|(&[i, j], w)| (i, j, w)).collect();
        Ok(CommGraph::build(g.p, &edges)?)
    }

    pub fn attack_plan(&self, sys: &LtiSystem) -> Result<AttackPlan, ConfigError> {
        let mut attacks = BTreeMap::new();
        for a in &self.security.attacks {
            let (node, kind) = match a {
                AttackConfig::ConsistentFakeState { node, fake_x0 } => {
                    (*node, AttackKind::ConsistentFakeState { fake_x0: DVector::from_column_slice(fake_x0) })
                }
                AttackConfig::CompanionDrift { node, e0 } => {
                    (*node, AttackKind::CompanionDrift { e0: DVector::from_column_slice(e0) })
                }
                AttackConfig::Jump { node, t0, offset } => (*node, AttackKind::Jump { t0: *t0, offset: *offset }),
            };
            if node == 0 || node > sys.p() {
                return Err(invalid("security.attacks", format!("node {node} is outside 1..={}", sys.p())));
            }
            if attacks.insert(node - 1, kind).is_some() {
                return Err(invalid("security.attacks", format!("node {node} is attacked twice")));
            }
        }
        Ok(AttackPlan::new(sys, self.security.s, attacks)?)
    }

    pub fn design_seed(&self) -> u64 {
        self.compression.seed.unwrap_or(self.run.seed)
    }

    /// Resolves the compression matrix. Design mode runs the random search
    /// and fails if the instance is unsolvable.
    pub fn compression_matrix(&self, sys: &LtiSystem) -> Result<DMatrix<f64>, ConfigError> {
        let c = &self.compression;
        match (c.mode, &c.d) {
            (CompressionMode::Identity, None) => Ok(DMatrix::identity(sys.p(), sys.p())),
            (CompressionMode::Given, Some(d)) => matrix("compression.D", d),
            (CompressionMode::Design, None) => {
                let tries = c.max_tries.unwrap_or(DEFAULT_DESIGN_TRIES);
                Ok(compress::design_compression(sys, self.security.s, self.design_seed(), tries)?.d().clone())
            }
            (CompressionMode::Given, None) => Err(invalid("compression.D", "required when mode = \"given\"")),
            (_, Some(_)) => Err(invalid("compression.D", "only allowed when mode = \"given\"")),
        }
    }

    pub fn gains(&self) -> Result<Option<TrackerGains>, ConfigError> {
        let t = &self.tracker;
        match (t.gains, t.k_p, t.k_i) {
            (GainsMode::Auto, None, None) => Ok(None),
            (GainsMode::Explicit, Some(k_p), Some(k_i)) => Ok(Some(TrackerGains { k_p, k_i })),
            (GainsMode::Auto, _, _) => Err(invalid("tracker.k_p", "explicit gains require gains = \"explicit\"")),
            (GainsMode::Explicit, _, _) => Err(invalid("tracker.k_p", "gains = \"explicit\" needs both k_p and k_i")),
        }
    }

    pub fn to_scenario(&self) -> Result<Scenario, ConfigError> {
        let sys = self.system()?;
        let graph = self.comm_graph()?;
        if self.run.x0.len() != sys.n() {
            return Err(invalid("run.x0", format!("has {} entries, expected {}", self.run.x0.len(), sys.n())));
        }
        if self.run.decode_cadence == 0 {
            return Err(invalid("run.decode_cadence", "must be at least 1"));
        }
        if self.tracker.epsilon.is_nan() || self.tracker.epsilon < 0.0 {
            return Err(invalid("tracker.epsilon", "must be non-negative"));
        }
        Ok(Scenario {
            attack: self.attack_plan(&sys)?,
            d: self.compression_matrix(&sys)?,
            gains: self.gains()?,
            graph,
            s: self.security.s,
            x0: DVector::from_column_slice(&self.run.x0),
            horizon: self.run.horizon,
            epsilon: self.tracker.epsilon,
            seed: self.run.seed,
            decode_cadence: self.run.decode_cadence,
            tracker_init: self.tracker.init,
            sys,
        })
    }

    /// Config describing `sc` with an explicit system matrix and `D`.
    pub fn from_scenario(sc: &Scenario) -> Self {
        let attacks = sc
            .attack
            .attacks()
            .iter()
            .map(|(&i, kind)| match kind {
                AttackKind::ConsistentFakeState { fake_x0 } => {
                    AttackConfig::ConsistentFakeState { node: i + 1, fake_x0: fake_x0.iter().copied().collect() }
                }
                AttackKind::CompanionDrift { e0 } => {
                    AttackConfig::CompanionDrift { node: i + 1, e0: e0.iter().copied().collect() }
                }
                AttackKind::Jump { t0, offset } => AttackConfig::Jump { node: i + 1, t0: *t0, offset: *offset },
            })
            .collect();
        let edges = sc.graph.edges();
        Self {
            version: CONFIG_VERSION,
            system: SystemConfig { a: Some(matrix_rows(sc.sys.a())), c: matrix_rows(sc.sys.c()), continuous: None },
            graph: GraphConfig {
                p: sc.graph.p(),
                edges: edges.iter().map(|e| [e.i + 1, e.j + 1]).collect(),
                weights: edges.iter().any(|e| e.weight != 1.0).then(|| edges.iter().map(|e| e.weight).collect()),
            },
            security: SecurityConfig { s: sc.s, attacks },
            compression: CompressionConfig {
                mode: CompressionMode::Given,
                d: Some(matrix_rows(&sc.d)),
                seed: None,
                max_tries: None,
            },
            tracker: TrackerConfig {
                gains: if sc.gains.is_some() { GainsMode::Explicit } else { GainsMode::Auto },
                k_p: sc.gains.map(|g| g.k_p),
                k_i: sc.gains.map(|g| g.k_i),
                epsilon: sc.epsilon,
                init: sc.tracker_init,
            },
            run: RunConfig {
                horizon: sc.horizon,
                x0: sc.x0.iter().copied().collect(),
                seed: sc.seed,
                decode_cadence: sc.decode_cadence,
            },
            output: None,
            decode: None,
        }
    }
}
