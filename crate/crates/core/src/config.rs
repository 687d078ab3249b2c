//! Pipeline configuration: one JSON document covering every stage.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::events::{EventDetectorParams, SpikeDetectorParams};
use crate::lasso::{PathOptions, SolverOptions, TopologyRule, WeightRule};
use crate::sim::{NeuronParams, SimConfig, SynapseParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub n_nodes: usize,
    pub p_connect: f64,
}

impl Default for GraphConfig {
    fn default() -> Self {
        GraphConfig {
            n_nodes: 20,
            p_connect: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    /// `run.seed` is replaced by the seed derived from the master seed.
    pub run: SimConfig,
    pub neuron: NeuronParams,
    pub synapse: SynapseParams,
    pub noise_synapse: SynapseParams,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            run: SimConfig::default(),
            neuron: NeuronParams::default(),
            synapse: SynapseParams::ampa(),
            noise_synapse: SynapseParams::noise(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EventsConfig {
    pub detector: EventDetectorParams,
    pub spikes: SpikeDetectorParams,
    /// Bin width in ms.
    pub delta: f64,
    /// Extra condition subsets (1-based) run next to the main detector.
    pub ablations: Vec<Vec<usize>>,
    /// Write and read rasters as dense 0/1 matrices instead of sparse lists.
    pub dense: bool,
}

impl Default for EventsConfig {
    fn default() -> Self {
        EventsConfig {
            detector: EventDetectorParams::default(),
            spikes: SpikeDetectorParams::default(),
            delta: 1.0,
            ablations: vec![vec![1], vec![2], vec![3]],
            dense: false,
        }
    }
}

impl EventsConfig {
    /// The main detector followed by each ablation, without duplicates.
    pub fn detectors(&self) -> Vec<EventDetectorParams> {
        let mut out = vec![self.detector.clone()];
        for a in &self.ablations {
            let d = self.detector.clone().with_conditions(a);
            if !out.iter().any(|o| o.tag() == d.tag()) {
                out.push(d);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct LassoConfig {
    pub weight_rule: WeightRule,
    pub path: PathOptions,
    pub solver: SolverOptions,
    pub topology_rule: TopologyRule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct XcorrConfig {
    /// Bins.
    pub max_lag: usize,
}

impl Default for XcorrConfig {
    fn default() -> Self {
        XcorrConfig { max_lag: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub curves_prefix: String,
    pub summary_prefix: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            curves_prefix: "curves".into(),
            summary_prefix: "summary".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub graph: GraphConfig,
    pub sim: SimSection,
    pub events: EventsConfig,
    pub lasso: LassoConfig,
    pub xcorr: XcorrConfig,
    pub eval: EvalConfig,
}

/// Offsets added to the master seed for each randomized stage.
const GRAPH_SEED_OFFSET: u64 = 1;
const SIM_SEED_OFFSET: u64 = 2;

impl PipelineConfig {
    pub fn graph_seed(&self) -> u64 {
        self.seed.wrapping_add(GRAPH_SEED_OFFSET)
    }

    pub fn sim_seed(&self) -> u64 {
        self.seed.wrapping_add(SIM_SEED_OFFSET)
    }

    /// Simulation settings with the derived seed filled in.
    pub fn sim_run(&self) -> SimConfig {
        SimConfig {
            seed: self.sim_seed(),
            ..self.sim.run.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.graph.n_nodes < 2 {
            return Err(Error::Parameter("graph.n_nodes must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.graph.p_connect) {
            return Err(Error::Parameter(
                "graph.p_connect must lie in [0, 1]".into(),
            ));
        }
        self.sim.run.validate()?;
        self.sim.neuron.validate()?;
        self.sim.synapse.validate()?;
        self.sim.noise_synapse.validate()?;
        for d in self.events.detectors() {
            d.validate()?;
        }
        if !(self.events.delta.is_finite() && self.events.delta > 0.0) {
            return Err(Error::Parameter("events.delta must be > 0".into()));
        }
        if self.events.delta > self.sim.run.duration {
            return Err(Error::Parameter(
                "events.delta exceeds the simulated duration".into(),
            ));
        }
        if self.events.spikes.lockout < 0.0 {
            return Err(Error::Parameter(
                "events.spikes.lockout must be >= 0".into(),
            ));
        }
        self.lasso.path.validate()?;
        self.lasso.solver.validate()?;
        if self.xcorr.max_lag == 0 {
            return Err(Error::Parameter("xcorr.max_lag must be positive".into()));
        }
        for p in [&self.eval.curves_prefix, &self.eval.summary_prefix] {
            if p.is_empty() || p.contains(['/', '\\']) {
                return Err(Error::Parameter(format!(
                    "output prefix `{p}` must be a non-empty file name"
                )));
            }
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> std::result::Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text).map_err(|source| Error::Json {
            path: path.to_owned(),
            source,
        })
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json_pretty() + "\n").map_err(|e| Error::io(path, e))
    }

    /// Applies `key.path=value` overrides. The value is parsed as JSON when
    /// possible and taken as a string otherwise.
    pub fn with_overrides(&self, overrides: &[String]) -> Result<Self> {
        let mut doc = serde_json::to_value(self).expect("config serializes");
        for item in overrides {
            let (key, raw) = item.split_once('=').ok_or_else(|| {
                Error::Parameter(format!("override `{item}` is not of the form key=value"))
            })?;
            let value: Value =
                serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
            let mut node = &mut doc;
            let parts: Vec<&str> = key.split('.').collect();
            for (depth, part) in parts.iter().enumerate() {
                let obj = node.as_object_mut().ok_or_else(|| {
                    Error::Parameter(format!(
                        "override `{key}`: `{}` is not a section",
                        parts[..depth].join(".")
                    ))
                })?;
                if !obj.contains_key(*part) {
                    return Err(Error::Parameter(format!(
                        "override `{key}`: unknown field `{part}`"
                    )));
                }
                node = obj.get_mut(*part).expect("checked above");
            }
            *node = value;
        }
        serde_json::from_value(doc)
            .map_err(|e| Error::Parameter(format!("override produced an invalid config: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        let c = PipelineConfig::default();
        c.validate().unwrap();
        let back = PipelineConfig::from_json_str(&c.to_json_pretty()).unwrap();
        assert_eq!(back, c);
        assert_eq!(c.graph.n_nodes, 20);
        assert_eq!(c.sim.synapse.gmax, 800.0);
        assert_eq!(c.sim.noise_synapse.r2, 0.1);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c = PipelineConfig::from_json_str(r#"{"seed": 9, "graph": {"n_nodes": 10}}"#).unwrap();
        assert_eq!(c.seed, 9);
        assert_eq!(c.graph.n_nodes, 10);
        assert_eq!(c.graph.p_connect, 0.3);
        assert!(PipelineConfig::from_json_str(r#"{"grpah": {}}"#).is_err());
    }

    #[test]
    fn overrides() {
        let c = PipelineConfig::default()
            .with_overrides(&[
                "graph.n_nodes=10".into(),
                "sim.run.duration=250.5".into(),
                "lasso.topology_rule=nonzero".into(),
                "events.detector.use_condition=[false,false,true]".into(),
            ])
            .unwrap();
        assert_eq!(c.graph.n_nodes, 10);
        assert_eq!(c.sim.run.duration, 250.5);
        assert_eq!(c.lasso.topology_rule, TopologyRule::Nonzero);
        assert_eq!(c.events.detector.tag(), "cond_iii");
        for bad in [
            "graph.nodes=3",
            "graph.n_nodes",
            "graph.n_nodes=\"x\"",
            "seed.x=1",
        ] {
            assert!(
                PipelineConfig::default()
                    .with_overrides(&[bad.into()])
                    .is_err(),
                "{bad}"
            );
        }
    }

    #[test]
    fn validation_failures() {
        let mut c = PipelineConfig::default();
        c.sim.run.duration = 0.0;
        assert!(matches!(c.validate(), Err(Error::Parameter(_))));
        let mut c = PipelineConfig::default();
        c.events.delta = -1.0;
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::default();
        c.events.ablations = vec![vec![]];
        assert!(c.validate().is_err());
        let mut c = PipelineConfig::default();
        c.eval.curves_prefix = "a/b".into();
        assert!(c.validate().is_err());
    }

    #[test]
    fn detectors_deduplicated() {
        let mut c = EventsConfig::default();
        c.ablations.push(vec![1, 2, 3]);
        c.ablations.push(vec![3]);
        let tags: Vec<String> = c.detectors().iter().map(|d| d.tag()).collect();
        assert_eq!(tags, vec!["all", "cond_i", "cond_ii", "cond_iii"]);
    }

    #[test]
    fn stage_seeds_differ() {
        let c = PipelineConfig {
            seed: u64::MAX,
            ..PipelineConfig::default()
        };
        assert_ne!(c.graph_seed(), c.sim_seed());
        assert_eq!(c.sim_run().seed, c.sim_seed());
    }
}
