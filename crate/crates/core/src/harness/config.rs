//! Experiment configuration: a versioned JSON document, named presets, and
//! expansion of sweeps into individual runs.

use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::estimators::StepSchedule;
use crate::network::Topology;
use crate::scenarios::{EstimatorKind, LocalizationConfig, MappingConfig};

pub const SCHEMA_VERSION: u32 = 1;

pub const PRESETS: [&str; 3] = ["localization-fig2", "localization-fig3-sweep", "mapping-desk"];

/// Environment variable that replaces every seed of a config.
pub const SEED_OVERRIDE_VAR: &str = "MC_SEED_OVERRIDE";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    /// Prefix of every output file; defaults to the scenario kind.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub scenario: ScenarioConfig,
    pub estimator: EstimatorConfig,
    pub run: RunConfig,
    #[serde(default)]
    pub sweep: SweepConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ScenarioConfig {
    Localization(LocalizationConfig),
    Mapping(MappingConfig),
}

impl ScenarioConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ScenarioConfig::Localization(_) => "localization",
            ScenarioConfig::Mapping(_) => "mapping",
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            ScenarioConfig::Localization(c) => c.seed,
            ScenarioConfig::Mapping(c) => c.seed,
        }
    }

    fn set_seed(&mut self, seed: u64) {
        match self {
            ScenarioConfig::Localization(c) => c.seed = seed,
            ScenarioConfig::Mapping(c) => c.seed = seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ScenarioConfig::Localization(c) => c.validate(),
            ScenarioConfig::Mapping(c) => c.validate(),
        }
    }
}

fn default_circular_alpha() -> f64 {
    0.8
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimatorConfig {
    pub kind: EstimatorKind,
    #[serde(default)]
    pub schedule: StepSchedule,
    /// Reverse-message exponent of circular BP.
    #[serde(default = "default_circular_alpha")]
    pub circular_alpha: f64,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub rounds: usize,
    /// Rounds between consensus-gap evaluations; 0 disables the column.
    #[serde(default)]
    pub consensus_every: usize,
    /// Track a centralized reference posterior for the `kl_ref` column (localization only).
    #[serde(default)]
    pub reference: bool,
    #[serde(default = "default_out")]
    pub out: PathBuf,
    #[serde(default)]
    pub emit_plot: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jobs: Option<usize>,
}

/// Lists that multiply the base configuration. Empty lists keep the base value.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub b: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub topology: Vec<Topology>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub estimator: Vec<EstimatorKind>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub seed: Vec<u64>,
}

/// One fully resolved run of a config.
#[derive(Clone, Debug, PartialEq)]
pub struct RunSpec {
    /// Scenario label used in file names; sweep coordinates are appended.
    pub label: String,
    pub scenario: ScenarioConfig,
    pub estimator: EstimatorKind,
    pub seed: u64,
    pub b: Option<f64>,
    pub topology: Option<String>,
}

impl RunSpec {
    pub fn file_name(&self) -> String {
        format!("{}_{}_seed{}.csv", self.label, self.estimator, self.seed)
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let config: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::config(if path == "." { "$".to_string() } else { path }, e.into_inner().to_string())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn preset(name: &str) -> Result<Self> {
        let exact = |alpha| StepSchedule::Constant { alpha };
        let paper_four =
            vec![EstimatorKind::Distributed, EstimatorKind::Marginal, EstimatorKind::Bp, EstimatorKind::CircularBp];
        let config = match name {
            "localization-fig2" => ExperimentConfig {
                schema_version: SCHEMA_VERSION,
                name: Some(name.into()),
                scenario: ScenarioConfig::Localization(LocalizationConfig::new(8, Topology::Ring, 1.0, 0)),
                estimator: EstimatorConfig { kind: EstimatorKind::Marginal, schedule: exact(1.0), circular_alpha: 0.8 },
                run: RunConfig {
                    rounds: 1600,
                    consensus_every: 100,
                    reference: true,
                    out: default_out(),
                    emit_plot: false,
                    jobs: None,
                },
                sweep: SweepConfig { estimator: paper_four, ..SweepConfig::default() },
            },
            "localization-fig3-sweep" => ExperimentConfig {
                schema_version: SCHEMA_VERSION,
                name: Some("localization-fig3".into()),
                scenario: ScenarioConfig::Localization(LocalizationConfig::new(8, Topology::Line, 1.0, 0)),
                estimator: EstimatorConfig { kind: EstimatorKind::Marginal, schedule: exact(1.0), circular_alpha: 0.8 },
                run: RunConfig {
                    rounds: 500,
                    consensus_every: 0,
                    reference: false,
                    out: default_out(),
                    emit_plot: false,
                    jobs: None,
                },
                sweep: SweepConfig {
                    b: vec![1.0, 2.0, 5.0, 10.0],
                    topology: [7, 11, 15, 19, 23, 27].into_iter().map(|edges| Topology::EdgeCount { edges }).collect(),
                    estimator: paper_four,
                    seed: Vec::new(),
                },
            },
            "mapping-desk" => ExperimentConfig {
                schema_version: SCHEMA_VERSION,
                name: Some(name.into()),
                scenario: ScenarioConfig::Mapping(MappingConfig::desk(0)),
                estimator: EstimatorConfig { kind: EstimatorKind::Marginal, schedule: exact(1.0), circular_alpha: 0.8 },
                run: RunConfig {
                    rounds: 20_000,
                    consensus_every: 1000,
                    reference: false,
                    out: default_out(),
                    emit_plot: false,
                    jobs: None,
                },
                sweep: SweepConfig::default(),
            },
            other => {
                return Err(Error::config("scenario", format!("unknown preset `{other}`; known: {}", PRESETS.join(", "))))
            }
        };
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::config(
                "schema_version",
                format!("unsupported version {} (expected {SCHEMA_VERSION})", self.schema_version),
            ));
        }
        if let Some(name) = &self.name {
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '.') {
                return Err(Error::config("name", "use ASCII letters, digits, '-' and '.'"));
            }
        }
        self.scenario.validate()?;
        self.estimator.schedule.validate()?;
        if !(0.0..=1.0).contains(&self.estimator.circular_alpha) {
            return Err(Error::config("estimator.circular_alpha", "must lie in [0, 1]"));
        }
        if matches!(self.estimator.schedule, StepSchedule::AdaptiveOracle { .. }) {
            return Err(Error::config("estimator.schedule", "the oracle schedule needs a grid objective"));
        }
        if self.run.jobs == Some(0) {
            return Err(Error::config("run.jobs", "need at least one worker"));
        }
        let is_mapping = matches!(self.scenario, ScenarioConfig::Mapping(_));
        if is_mapping && !self.sweep.b.is_empty() {
            return Err(Error::config("sweep.b", "only localization scenarios have a noise level"));
        }
        if is_mapping && !self.sweep.topology.is_empty() {
            return Err(Error::config("sweep.topology", "mapping topology is set in the scenario block"));
        }
        if let Some(b) = self.sweep.b.iter().find(|b| !(**b > 0.0 && b.is_finite())) {
            return Err(Error::config("sweep.b", format!("noise level {b} must be positive")));
        }
        for kind in self.estimators() {
            let bp = matches!(kind, EstimatorKind::Bp | EstimatorKind::CircularBp);
            if is_mapping && bp {
                return Err(Error::config("estimator.kind", format!("`{kind}` is not available for mapping")));
            }
        }
        Ok(())
    }

    pub fn estimators(&self) -> Vec<EstimatorKind> {
        if self.sweep.estimator.is_empty() {
            vec![self.estimator.kind]
        } else {
            self.sweep.estimator.clone()
        }
    }

    fn seeds(&self) -> Vec<u64> {
        if self.sweep.seed.is_empty() {
            vec![self.scenario.seed()]
        } else {
            self.sweep.seed.clone()
        }
    }

    /// Replaces every seed with `seed`.
    pub fn override_seed(&mut self, seed: u64) {
        self.scenario.set_seed(seed);
        self.sweep.seed.clear();
    }

    /// Uses a single estimator instead of the sweep list.
    pub fn override_estimator(&mut self, kind: EstimatorKind) {
        self.estimator.kind = kind;
        self.sweep.estimator.clear();
    }

    pub fn base_name(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.scenario.kind().to_string())
    }

    /// Runs in the order b, topology, estimator, seed.
    pub fn expand(&self) -> Vec<RunSpec> {
        let base = self.base_name();
        let mut out = Vec::new();
        let bs: Vec<Option<f64>> =
            if self.sweep.b.is_empty() { vec![None] } else { self.sweep.b.iter().copied().map(Some).collect() };
        let topos: Vec<Option<Topology>> = if self.sweep.topology.is_empty() {
            vec![None]
        } else {
            self.sweep.topology.iter().cloned().map(Some).collect()
        };
        for b in &bs {
            for topo in &topos {
                let mut label = base.clone();
                let mut scenario = self.scenario.clone();
                if let ScenarioConfig::Localization(c) = &mut scenario {
                    if let Some(b) = b {
                        c.b = *b;
                        label.push_str(&format!("-b{b}"));
                    }
                    if let Some(t) = topo {
                        c.topology = t.clone();
                        label.push_str(&format!("-{}", t.label()));
                    }
                }
                for estimator in self.estimators() {
                    for seed in self.seeds() {
                        let mut scenario = scenario.clone();
                        scenario.set_seed(seed);
                        out.push(RunSpec {
                            label: label.clone(),
                            scenario,
                            estimator,
                            seed,
                            b: *b,
                            topology: topo.as_ref().map(Topology::label),
                        });
                    }
                }
            }
        }
        out
    }

    /// SHA-256 of the config with output-only fields (path, plotting, worker count) cleared.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.run.out = PathBuf::new();
        c.run.emit_plot = false;
        c.run.jobs = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Reads the seed override, if set.
pub fn seed_override_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_OVERRIDE_VAR) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| Error::config(SEED_OVERRIDE_VAR, format!("`{v}` is not an unsigned integer"))),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(Error::config(SEED_OVERRIDE_VAR, e.to_string())),
    }
}

/// Command-line schedule syntax: `constant:ALPHA`, `robbins-monro`, or `robbins-monro:A,B,POWER`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScheduleArg(pub StepSchedule);

impl FromStr for ScheduleArg {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::config("estimator.schedule", format!("cannot parse schedule `{s}`"));
        let (head, tail) = s.split_once(':').map_or((s, None), |(h, t)| (h, Some(t)));
        let schedule = match (head, tail) {
            ("constant", Some(a)) => StepSchedule::Constant { alpha: a.trim().parse().map_err(|_| bad())? },
            ("robbins-monro", None) => StepSchedule::default(),
            ("robbins-monro", Some(args)) => {
                let v: Vec<f64> = args.split(',').map(|x| x.trim().parse()).collect::<std::result::Result<_, _>>().map_err(|_| bad())?;
                match v[..] {
                    [a, b, power] => StepSchedule::RobbinsMonro { a, b, power },
                    _ => return Err(bad()),
                }
            }
            _ => return Err(bad()),
        };
        schedule.validate()?;
        Ok(ScheduleArg(schedule))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_round_trip_through_json() {
        for name in PRESETS {
            let c = ExperimentConfig::preset(name).unwrap();
            let back = ExperimentConfig::from_json(&c.to_json()).unwrap();
            assert_eq!(back, c);
            assert_eq!(back.hash(), c.hash());
        }
    }

    #[test]
    fn sweep_expands_to_96_runs() {
        let runs = ExperimentConfig::preset("localization-fig3-sweep").unwrap().expand();
        assert_eq!(runs.len(), 96);
        let mut names: Vec<String> = runs.iter().map(RunSpec::file_name).collect();
        names.sort();
        names.dedup();
        assert_eq!(names.len(), 96);
        assert_eq!(runs[0].file_name(), "localization-fig3-b1-edges7_distributed_seed0.csv");
    }

    #[test]
    fn unknown_field_reports_path() {
        let mut v: serde_json::Value = serde_json::from_str(&ExperimentConfig::preset("mapping-desk").unwrap().to_json()).unwrap();
        v["run"]["roundz"] = 3.into();
        match ExperimentConfig::from_json(&v.to_string()) {
            Err(Error::Config { path, .. }) => assert!(path.starts_with("run"), "{path}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn hash_ignores_output_fields_only() {
        let a = ExperimentConfig::preset("localization-fig2").unwrap();
        let mut b = a.clone();
        b.run.out = "elsewhere".into();
        b.run.emit_plot = true;
        b.run.jobs = Some(3);
        assert_eq!(a.hash(), b.hash());
        b.run.rounds = 1599;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn schedule_syntax() {
        assert_eq!("constant:0.5".parse::<ScheduleArg>().unwrap().0, StepSchedule::Constant { alpha: 0.5 });
        assert_eq!("robbins-monro".parse::<ScheduleArg>().unwrap().0, StepSchedule::default());
        assert!("robbins-monro:1,1".parse::<ScheduleArg>().is_err());
        assert!("robbins-monro:1,1,0.4".parse::<ScheduleArg>().is_err());
        assert!("linear".parse::<ScheduleArg>().is_err());
    }

    #[test]
    fn bp_rejected_for_mapping() {
        let mut c = ExperimentConfig::preset("mapping-desk").unwrap();
        c.override_estimator(EstimatorKind::Bp);
        assert!(matches!(c.validate(), Err(Error::Config { .. })));
    }
}
