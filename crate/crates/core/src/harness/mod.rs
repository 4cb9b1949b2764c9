//! Experiment execution: runs every expanded config entry on a worker pool,
//! writes one CSV trace per run, a sweep summary, a manifest, and optional plots.

mod config;
pub mod plot;

use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::run_rounds;
use crate::scenarios::{EstimatorKind, LocalizationRun, LocalizationScenario, MappingRun, MappingScenario};
use crate::trace::RoundTrace;

pub use config::{
    seed_override_from_env, EstimatorConfig, ExperimentConfig, RunConfig, RunSpec, ScenarioConfig, ScheduleArg,
    SweepConfig, PRESETS, SCHEMA_VERSION, SEED_OVERRIDE_VAR,
};

pub const SUMMARY_FILE: &str = "summary.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Runs one resolved entry and returns its trace.
pub fn simulate(config: &ExperimentConfig, spec: &RunSpec) -> Result<RoundTrace> {
    let est = &config.estimator;
    let run = &config.run;
    match &spec.scenario {
        ScenarioConfig::Localization(c) => {
            let scenario = LocalizationScenario::build(c.clone())?;
            let mut sim =
                LocalizationRun::new(&scenario, spec.estimator, est.schedule.clone(), est.circular_alpha, run.consensus_every)?;
            if !run.reference {
                sim = sim.without_reference();
            }
            run_rounds(&mut sim, run.rounds)
        }
        ScenarioConfig::Mapping(c) => {
            let scenario = MappingScenario::build(c.clone())?;
            let mut sim = MappingRun::new(&scenario, spec.estimator, est.schedule.clone(), run.consensus_every)?;
            run_rounds(&mut sim, run.rounds)
        }
    }
}

/// Metadata of one finished run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunRecord {
    pub file: String,
    pub scenario: String,
    pub estimator: EstimatorKind,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub topology: Option<String>,
    pub rows: usize,
    /// Network-average error at the last round.
    pub final_error: Option<f64>,
    #[serde(skip)]
    pub series: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub library_version: String,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub runs: Vec<RunRecord>,
}

/// Seed-averaged final error of one (scenario, estimator) group.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub b: Option<f64>,
    pub topology: Option<String>,
    pub estimator: EstimatorKind,
    pub seeds: usize,
    pub round: usize,
    pub mean_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Outcome {
    pub out_dir: PathBuf,
    pub manifest: Manifest,
    pub summary: Vec<SummaryRow>,
}

fn io_context(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::config("run.out", format!("{}: {e}", path.display()))
}

/// Runs every entry of `config` on `jobs` workers (default: all cores) and writes results under `run.out`.
pub fn execute(config: &ExperimentConfig) -> Result<Outcome> {
    config.validate()?;
    let out = config.run.out.clone();
    fs::create_dir_all(&out).map_err(|e| io_context(&out, e))?;
    let specs = config.expand();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.run.jobs.unwrap_or(0))
        .build()
        .map_err(|e| Error::config("run.jobs", e.to_string()))?;
    let records: Vec<RunRecord> = pool.install(|| {
        specs
            .par_iter()
            .map(|spec| {
                let trace = simulate(config, spec)
                    .map_err(|e| Error::Run { run: spec.file_name(), source: Box::new(e) })?;
                let file = spec.file_name();
                let path = out.join(&file);
                let handle = fs::File::create(&path).map_err(|e| io_context(&path, e))?;
                trace.write_csv(BufWriter::new(handle))?;
                Ok(RunRecord {
                    file,
                    scenario: spec.label.clone(),
                    estimator: spec.estimator,
                    seed: spec.seed,
                    b: spec.b,
                    topology: spec.topology.clone(),
                    rows: trace.rows.len(),
                    final_error: trace.mean_error(config.run.rounds),
                    series: trace.mean_error_series(),
                })
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let summary = summarize(&records, config.run.rounds);
    write_summary(&out.join(SUMMARY_FILE), &summary)?;
    let manifest = Manifest {
        schema_version: SCHEMA_VERSION,
        library_version: env!("CARGO_PKG_VERSION").to_string(),
        config_hash: config.hash(),
        config: config.clone(),
        runs: records,
    };
    let path = out.join(MANIFEST_FILE);
    fs::write(&path, serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n")
        .map_err(|e| io_context(&path, e))?;
    if config.run.emit_plot {
        write_plots(&out, &manifest.runs)?;
    }
    Ok(Outcome { out_dir: out, manifest, summary })
}

/// Groups runs by scenario label and estimator, keeping first-seen order.
fn groups(records: &[RunRecord]) -> Vec<((String, EstimatorKind), Vec<&RunRecord>)> {
    let mut order = Vec::new();
    let mut map: BTreeMap<(String, EstimatorKind), Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        let key = (r.scenario.clone(), r.estimator);
        if !map.contains_key(&key) {
            order.push(key.clone());
        }
        map.entry(key).or_default().push(r);
    }
    order.into_iter().map(|k| (k.clone(), map.remove(&k).unwrap_or_default())).collect()
}

fn summarize(records: &[RunRecord], rounds: usize) -> Vec<SummaryRow> {
    groups(records)
        .into_iter()
        .map(|((scenario, estimator), runs)| {
            let finals: Vec<f64> = runs.iter().filter_map(|r| r.final_error).collect();
            SummaryRow {
                scenario,
                b: runs[0].b,
                topology: runs[0].topology.clone(),
                estimator,
                seeds: runs.len(),
                round: rounds,
                mean_error: if finals.is_empty() { f64::NAN } else { finals.iter().sum::<f64>() / finals.len() as f64 },
            }
        })
        .collect()
}

fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| io_context(path, e))?;
    for r in rows {
        w.serialize(r).map_err(|e| io_context(path, e))?;
    }
    w.flush()?;
    Ok(())
}

fn write_plots(out: &Path, runs: &[RunRecord]) -> Result<()> {
    let mut by_label: Vec<(String, Vec<(String, Vec<f64>)>)> = Vec::new();
    for ((label, estimator), group) in groups(runs) {
        let len = group.iter().map(|r| r.series.len()).min().unwrap_or(0);
        let avg: Vec<f64> =
            (0..len).map(|k| group.iter().map(|r| r.series[k]).sum::<f64>() / group.len() as f64).collect();
        match by_label.iter_mut().find(|(l, _)| *l == label) {
            Some((_, v)) => v.push((estimator.to_string(), avg)),
            None => by_label.push((label, vec![(estimator.to_string(), avg)])),
        }
    }
    for (label, series) in by_label {
        let ser: Vec<plot::Series<'_>> = series.iter().map(|(n, y)| plot::Series { name: n, y }).collect();
        let path = out.join(format!("{label}.svg"));
        fs::write(&path, plot::error_chart(&label, &ser)).map_err(|e| io_context(&path, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ExperimentConfig {
        let mut c = ExperimentConfig::preset("localization-fig2").unwrap();
        c.run.rounds = 5;
        c.run.emit_plot = true;
        c
    }

    #[test]
    fn writes_traces_summary_manifest_and_plot() {
        let dir = tempfile::tempdir().unwrap();
        let mut c = tiny();
        c.run.out = dir.path().to_path_buf();
        let outcome = execute(&c).unwrap();
        assert_eq!(outcome.manifest.runs.len(), 4);
        assert_eq!(outcome.summary.len(), 4);
        for r in &outcome.manifest.runs {
            let text = fs::read_to_string(dir.path().join(&r.file)).unwrap();
            assert_eq!(text.lines().count(), 1 + 5 * 8);
        }
        assert!(dir.path().join("localization-fig2.svg").exists());
        assert!(dir.path().join(MANIFEST_FILE).exists());
    }
}
