use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matops::{is_controllable, is_observable, mahler_measure, RealMatrix, RealVector};
use crate::netgraph::{CommGraph, LaplacianSpectrum};
use crate::plantsim::{NoiseSpec, PlantModel, SensorSuite};
use crate::precision::Precision;
use crate::syncctl::TriggerParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    Event,
    Full,
    #[default]
    Both,
    SyncOnly,
}

impl RunMode {
    pub fn is_estimation(self) -> bool {
        self != RunMode::SyncOnly
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    #[serde(default)]
    pub mode: RunMode,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub precision: Precision,
    /// Trials whose per-step traces go to the trace CSV.
    #[serde(default = "default_trace_trials")]
    pub trace_trials: usize,
}

fn default_horizon() -> usize {
    400
}

fn default_trials() -> usize {
    100
}

fn default_trace_trials() -> usize {
    5
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            mode: RunMode::default(),
            horizon: default_horizon(),
            trials: default_trials(),
            seed: 0,
            precision: Precision::default(),
            trace_trials: default_trace_trials(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GraphSpec {
    Ring {
        nodes: usize,
    },
    Complete {
        nodes: usize,
    },
    Path {
        nodes: usize,
    },
    Star {
        nodes: usize,
    },
    /// Symmetric nonnegative weights with zero diagonal.
    Adjacency {
        weights: Vec<Vec<f64>>,
    },
}

impl GraphSpec {
    pub fn build(&self) -> Result<CommGraph> {
        match self {
            GraphSpec::Ring { nodes } => CommGraph::ring(*nodes),
            GraphSpec::Complete { nodes } => CommGraph::complete(*nodes),
            GraphSpec::Path { nodes } => CommGraph::path(*nodes),
            GraphSpec::Star { nodes } => CommGraph::star(*nodes),
            GraphSpec::Adjacency { weights } => CommGraph::from_adjacency(
                rows_to_matrix(weights)
                    .ok_or_else(|| Error::InvalidGraph("ragged adjacency".into()))?,
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSection {
    pub a: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub x0_cov: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSection {
    /// One observation row per sensor.
    pub c: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta: Option<f64>,
    /// Input vector of the synchronization layer; defaults to ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<Vec<f64>>,
    #[serde(default)]
    pub allow_complex: bool,
}

/// Standalone synchronization experiment; one scenario per noise spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyncSection {
    pub s: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    /// Noise input vector `L_i` per agent.
    pub inputs: Vec<Vec<f64>>,
    /// `eta_i(0) ~ N(0, initial_variance I)`, independently per agent.
    #[serde(default = "default_initial_variance")]
    pub initial_variance: f64,
    pub noise: Vec<NoiseSpec>,
}

fn default_initial_variance() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub trigger: TriggerParams,
    #[serde(default)]
    pub design: DesignSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<GraphSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plant: Option<PlantSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensors: Option<SensorSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sync: Option<SyncSection>,
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>]) -> Option<RealMatrix> {
    crate::plantsim::rows_to_matrix(rows)
}

/// Parsed and checked pieces of an estimation scenario.
#[derive(Debug, Clone)]
pub struct EstimationScenario {
    pub plant: PlantModel,
    pub sensors: SensorSuite,
    pub graph: CommGraph,
    pub b: Option<RealVector>,
}

/// Parsed and checked pieces of a sync-only scenario.
#[derive(Debug, Clone)]
pub struct SyncScenario {
    pub s: RealMatrix,
    pub b: RealVector,
    pub inputs: Vec<RealVector>,
    pub graph: CommGraph,
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let config: Self = serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Checks every precondition and reports all failures at once.
    pub fn validate(&self) -> Result<()> {
        let failures = self.failures();
        if failures.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(failures))
        }
    }

    pub fn failures(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.run.horizon == 0 {
            out.push("run.horizon: must be at least 1".into());
        }
        if self.run.trials == 0 {
            out.push("run.trials: must be at least 1".into());
        }
        if let Err(e) = self.trigger.validate() {
            out.push(format!("trigger: {e}"));
        }
        let graph = match &self.graph {
            None => {
                out.push("graph: missing [graph] section".into());
                None
            }
            Some(spec) => match spec.build() {
                Ok(g) => Some(g),
                Err(e) => {
                    out.push(format!("graph: {e}"));
                    None
                }
            },
        };
        let spectrum = graph.as_ref().and_then(|g| match g.spectrum() {
            Ok(s) => Some(s),
            Err(e) => {
                out.push(format!("graph: connectivity required: {e}"));
                None
            }
        });
        if self.run.mode.is_estimation() {
            self.estimation_failures(graph.as_ref(), spectrum.as_ref(), &mut out);
        } else {
            self.sync_failures(graph.as_ref(), spectrum.as_ref(), &mut out);
        }
        out
    }

    fn estimation_failures(
        &self,
        graph: Option<&CommGraph>,
        spectrum: Option<&LaplacianSpectrum>,
        out: &mut Vec<String>,
    ) {
        if self.sync.is_some() {
            out.push("sync: only used with mode = \"sync_only\"".into());
        }
        let plant = match &self.plant {
            None => {
                out.push("plant: missing [plant] section".into());
                None
            }
            Some(p) => match parse_plant(p) {
                Ok(p) => Some(p),
                Err(e) => {
                    out.push(format!("plant: {e}"));
                    None
                }
            },
        };
        let sensors = match &self.sensors {
            None => {
                out.push("sensors: missing [sensors] section".into());
                None
            }
            Some(s) => match parse_sensors(s) {
                Ok(s) => Some(s),
                Err(e) => {
                    out.push(format!("sensors: {e}"));
                    None
                }
            },
        };
        if let (Some(g), Some(s)) = (graph, &sensors) {
            if g.node_count() != s.count() {
                out.push(format!(
                    "graph: {} nodes but {} sensors (one node per sensor)",
                    g.node_count(),
                    s.count()
                ));
            }
        }
        let Some(plant) = plant else { return };
        if let Some(s) = &sensors {
            if s.state_dim() != plant.dim() {
                out.push(format!(
                    "sensors: observation rows have {} columns for a {}-state plant",
                    s.state_dim(),
                    plant.dim()
                ));
            } else if !is_observable(&plant.a, &s.c).unwrap_or(false) {
                out.push("sensors: (A, C) is not jointly observable".into());
            }
        }
        if let Some(b) = &self.design.b {
            if b.len() != plant.dim() {
                out.push(format!(
                    "design.b: length {} for a {}-state plant",
                    b.len(),
                    plant.dim()
                ));
            }
        }
        // The local-filter matrix shares the spectrum of A.
        if let Some(spec) = spectrum {
            mahler_failures(&plant.a, "A", spec, self.design.zeta, out);
        }
    }

    fn sync_failures(
        &self,
        graph: Option<&CommGraph>,
        spectrum: Option<&LaplacianSpectrum>,
        out: &mut Vec<String>,
    ) {
        if self.plant.is_some() || self.sensors.is_some() {
            out.push("plant/sensors: not used with mode = \"sync_only\"".into());
        }
        let Some(sync) = &self.sync else {
            out.push("sync: missing [sync] section for mode = \"sync_only\"".into());
            return;
        };
        let s = match rows_to_matrix(&sync.s) {
            Some(s) if s.is_square() && s.nrows() > 0 => s,
            _ => {
                out.push("sync.s: must be a nonempty square matrix".into());
                return;
            }
        };
        let n = s.nrows();
        if sync.b.len() != n {
            out.push(format!("sync.b: length {} for {n} states", sync.b.len()));
        } else if !is_controllable(&s, &RealMatrix::from_column_slice(n, 1, &sync.b))
            .unwrap_or(false)
        {
            out.push("sync: (S, B) is not controllable".into());
        }
        if let Some(g) = graph {
            if sync.inputs.len() != g.node_count() {
                out.push(format!(
                    "sync.inputs: {} vectors for {} agents",
                    sync.inputs.len(),
                    g.node_count()
                ));
            }
            for (kind, spec) in sync.noise.iter().map(|s| (s.kind(), s)) {
                if let Err(e) = spec.validate(g.node_count()) {
                    out.push(format!("sync.noise ({kind}): {e}"));
                }
            }
        }
        if sync.inputs.iter().any(|l| l.len() != n) {
            out.push(format!("sync.inputs: every vector must have length {n}"));
        }
        if sync.noise.is_empty() {
            out.push("sync.noise: at least one noise spec is required".into());
        }
        if !(sync.initial_variance.is_finite() && sync.initial_variance >= 0.0) {
            out.push(format!("sync.initial_variance: {}", sync.initial_variance));
        }
        if let Some(spec) = spectrum {
            mahler_failures(&s, "S", spec, self.design.zeta, out);
        }
    }

    pub fn estimation_scenario(&self) -> Result<EstimationScenario> {
        let missing = |what: &str| Error::Validation(vec![format!("{what}: missing section")]);
        let plant = parse_plant(self.plant.as_ref().ok_or_else(|| missing("plant"))?)?;
        let sensors = parse_sensors(self.sensors.as_ref().ok_or_else(|| missing("sensors"))?)?;
        let graph = self
            .graph
            .as_ref()
            .ok_or_else(|| missing("graph"))?
            .build()?;
        let b = self
            .design
            .b
            .as_ref()
            .map(|b| RealVector::from_row_slice(b));
        Ok(EstimationScenario {
            plant,
            sensors,
            graph,
            b,
        })
    }

    pub fn sync_scenario(&self) -> Result<SyncScenario> {
        let missing = |what: &str| Error::Validation(vec![format!("{what}: missing section")]);
        let sync = self.sync.as_ref().ok_or_else(|| missing("sync"))?;
        let graph = self
            .graph
            .as_ref()
            .ok_or_else(|| missing("graph"))?
            .build()?;
        let s = rows_to_matrix(&sync.s).ok_or_else(|| Error::Parse("ragged sync.s".into()))?;
        Ok(SyncScenario {
            s,
            b: RealVector::from_row_slice(&sync.b),
            inputs: sync
                .inputs
                .iter()
                .map(|l| RealVector::from_row_slice(l))
                .collect(),
            graph,
        })
    }
}

fn mahler_failures(
    s: &RealMatrix,
    name: &str,
    spec: &LaplacianSpectrum,
    zeta: Option<f64>,
    out: &mut Vec<String>,
) {
    let (Ok(mahler), Ok(threshold)) = (mahler_measure(s), spec.feasibility_threshold()) else {
        out.push(format!("{name}: Mahler measure could not be evaluated"));
        return;
    };
    if mahler >= threshold {
        out.push(format!(
            "synchronization infeasible: Mahler({name}) = {mahler} is not below \
             (1 + mu2/mu_m)/(1 - mu2/mu_m) = {threshold} (mu2 = {}, mu_m = {})",
            spec.mu2(),
            spec.mu_max()
        ));
        return;
    }
    if let Some(z) = zeta {
        let inv = 1.0 / z;
        if !(z > 0.0 && z <= 1.0 && mahler < inv && inv <= threshold) {
            out.push(format!(
                "design.zeta = {z}: need Mahler({name}) = {mahler} < 1/zeta <= {threshold}"
            ));
        }
    }
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<RealMatrix> {
    rows_to_matrix(rows).ok_or_else(|| Error::Parse(format!("{what}: rows have different lengths")))
}

fn parse_plant(p: &PlantSection) -> Result<PlantModel> {
    let plant = PlantModel::new(
        matrix(&p.a, "a")?,
        matrix(&p.q, "q")?,
        matrix(&p.x0_cov, "x0_cov")?,
    )?;
    plant.validate()?;
    Ok(plant)
}

fn parse_sensors(s: &SensorSection) -> Result<SensorSuite> {
    let sensors = SensorSuite::new(matrix(&s.c, "c")?, matrix(&s.r, "r")?)?;
    sensors.validate()?;
    Ok(sensors)
}

pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = std::fs::read_to_string(path)?;
    RunConfig::from_toml_str(&text)
}
