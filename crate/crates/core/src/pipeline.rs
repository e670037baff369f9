//! End-to-end stages shared by the CLI and the evaluation suites: training, running every
//! approach over experiment directories, scoring, window sweeps and the tutorial pipeline.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alert::{merge_sorted, FailureAlert};
use crate::baselines::{DetectorConfig, NgramModel, VmmModel};
use crate::error::{Error, Result};
use crate::eval::{aggregate, score, Label, Metrics, Outcome, ScoreConfig};
use crate::event::Trace;
use crate::fields::{select_fields, FieldSelection, FieldSelectorConfig};
use crate::io::{
    alerts_file_name, experiment_dirs, load_alerts, load_experiment, load_trace, write_alerts, ExperimentRecord,
    EXPERIMENT_FILE,
};
use crate::mining::{mine_rules, MiningConfig};
use crate::monitor::{monitor_trace, rest_only_alerts, MonitorOptions};
use crate::rules::RuleSet;
use crate::sim::{campaign, corpus, WorkloadConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Approach {
    Mr,
    Un,
    Pm,
    RestOnly,
    /// Rule alerts merged with REST error alerts.
    Combined,
}

impl Approach {
    pub const ALL: [Approach; 5] = [Approach::Mr, Approach::Un, Approach::Pm, Approach::RestOnly, Approach::Combined];

    pub fn name(self) -> &'static str {
        match self {
            Approach::Mr => "mr",
            Approach::Un => "un",
            Approach::Pm => "pm",
            Approach::RestOnly => "rest-only",
            Approach::Combined => "combined",
        }
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Approach {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Approach::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown approach {s:?}")))
    }
}

/// Everything learned from the fault-free corpus.
#[derive(Debug, Clone)]
pub struct Detectors {
    pub rules: RuleSet,
    pub ngrams: NgramModel,
    pub vmm: VmmModel,
    pub config: DetectorConfig,
    pub monitor: MonitorOptions,
}

impl Detectors {
    pub fn alerts(&self, approach: Approach, trace: &Trace) -> Result<Vec<FailureAlert>> {
        Ok(match approach {
            Approach::Mr => monitor_trace(&self.rules, trace, self.monitor)?,
            Approach::Un => self.ngrams.detect(trace),
            Approach::Pm => self.vmm.detect(trace, self.config.epsilon_pm),
            Approach::RestOnly => rest_only_alerts(trace),
            Approach::Combined => {
                let mr = monitor_trace(&self.rules, trace, self.monitor)?;
                merge_sorted(&[&mr, &rest_only_alerts(trace)])
            }
        })
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub fields: FieldSelectorConfig,
    pub delta_t_us: u64,
    pub detectors: DetectorConfig,
    pub monitor: MonitorOptions,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            fields: FieldSelectorConfig::default(),
            delta_t_us: crate::mining::DEFAULT_DELTA_T_US,
            detectors: DetectorConfig::default(),
            monitor: MonitorOptions::default(),
        }
    }
}

/// Selects correlation fields, mines rules and trains both baselines on fault-free traces.
pub fn train(traces: &[Trace], cfg: &TrainConfig) -> Result<(FieldSelection, Detectors)> {
    cfg.detectors.validate()?;
    let selection = select_fields(traces, &cfg.fields)?;
    let rules = mine_rules(traces, &MiningConfig::new(cfg.delta_t_us, selection.selected.iter().cloned())?)?;
    let ngrams = NgramModel::train(traces, cfg.detectors.n)?;
    let vmm = VmmModel::train(traces, cfg.detectors.max_order)?;
    Ok((
        selection,
        Detectors {
            rules,
            ngrams,
            vmm,
            config: cfg.detectors,
            monitor: cfg.monitor,
        },
    ))
}

#[derive(Debug, Clone)]
pub struct Experiment {
    pub dir: PathBuf,
    pub name: String,
    pub record: ExperimentRecord,
    pub trace: Trace,
}

pub fn load_experiment_dir(dir: &Path) -> Result<Experiment> {
    let record = load_experiment(dir.join(EXPERIMENT_FILE))?;
    let trace = load_trace(dir.join(&record.trace_path))?;
    Ok(Experiment {
        dir: dir.to_path_buf(),
        name: dir.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned()),
        record,
        trace,
    })
}

/// Loads every experiment under `dir`, sorted by directory name.
pub fn load_experiments(dir: impl AsRef<Path>) -> Result<Vec<Experiment>> {
    let dirs = experiment_dirs(dir)?;
    dirs.par_iter().map(|d| load_experiment_dir(d)).collect()
}

/// Runs `approach` over every experiment and writes `alerts.<approach>.jsonl` next to its trace.
pub fn monitor_experiments(experiments: &[Experiment], detectors: &Detectors, approach: Approach) -> Result<()> {
    experiments.par_iter().try_for_each(|e| {
        let alerts = detectors.alerts(approach, &e.trace)?;
        write_alerts(&alerts, e.dir.join(alerts_file_name(approach.name())))
    })
}

/// Alerts of `approach` as stored on disk; `combined` merges the `mr` and `rest-only` files.
pub fn stored_alerts(dir: &Path, approach: Approach) -> Result<Vec<FailureAlert>> {
    let load = |a: Approach| load_alerts(dir.join(alerts_file_name(a.name())));
    match approach {
        Approach::Combined => {
            let path = dir.join(alerts_file_name(approach.name()));
            if path.exists() {
                load_alerts(path)
            } else {
                Ok(merge_sorted(&[&load(Approach::Mr)?, &load(Approach::RestOnly)?]))
            }
        }
        a => load(a),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentOutcome {
    pub experiment: String,
    pub label: Label,
    pub detection_latency_us: Option<u64>,
    pub first_alert_us: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub approach: Approach,
    pub delta_t_us: u64,
    pub grace_us: u64,
    pub metrics: Metrics,
    pub experiments: Vec<ExperimentOutcome>,
}

pub fn report_to_string<T: Serialize>(report: &T) -> String {
    let mut s = serde_json::to_string_pretty(report).expect("reports always serialize");
    s.push('\n');
    s
}

/// Scores precomputed alert streams, one per experiment.
pub fn build_report(
    approach: Approach,
    experiments: &[(String, ExperimentRecord, Vec<FailureAlert>)],
    cfg: &ScoreConfig,
) -> Result<Report> {
    let rows: Vec<(ExperimentOutcome, Outcome)> = experiments
        .iter()
        .map(|(name, record, alerts)| {
            let o = score(alerts, record, cfg)?;
            Ok((
                ExperimentOutcome {
                    experiment: name.clone(),
                    label: o.label,
                    detection_latency_us: o.detection_latency_us,
                    first_alert_us: alerts.first().map(|a| a.ts_us),
                },
                o,
            ))
        })
        .collect::<Result<_>>()?;
    let outcomes: Vec<Outcome> = rows.iter().map(|(_, o)| *o).collect();
    Ok(Report {
        approach,
        delta_t_us: cfg.delta_t_us,
        grace_us: cfg.grace_us,
        metrics: aggregate(&outcomes)?,
        experiments: rows.into_iter().map(|(r, _)| r).collect(),
    })
}

/// Scores the alert files of `approach` stored in every experiment directory under `dir`.
pub fn evaluate_dir(dir: impl AsRef<Path>, approach: Approach, cfg: &ScoreConfig) -> Result<Report> {
    let dirs = experiment_dirs(dir)?;
    let rows = dirs
        .par_iter()
        .map(|d| {
            let record = load_experiment(d.join(EXPERIMENT_FILE))?;
            let alerts = stored_alerts(d, approach)?;
            let name = d.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned());
            Ok((name, record, alerts))
        })
        .collect::<Result<Vec<_>>>()?;
    if rows.is_empty() {
        return Err(Error::EmptySet);
    }
    build_report(approach, &rows, cfg)
}

/// Runs and scores `approach` in memory.
pub fn evaluate_in_memory(
    experiments: &[Experiment],
    detectors: &Detectors,
    approach: Approach,
    cfg: &ScoreConfig,
) -> Result<Report> {
    let rows = experiments
        .par_iter()
        .map(|e| Ok((e.name.clone(), e.record.clone(), detectors.alerts(approach, &e.trace)?)))
        .collect::<Result<Vec<_>>>()?;
    build_report(approach, &rows, cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub delta_t_s: f64,
    pub rules: usize,
    pub metrics: Metrics,
}

/// Re-mines with each window and re-monitors the experiments, scoring with the same window.
pub fn sweep_delta_t(
    traces: &[Trace],
    fields: &FieldSelection,
    experiments: &[Experiment],
    values_s: &[f64],
    grace_us: u64,
    monitor: MonitorOptions,
) -> Result<Vec<SweepRow>> {
    if values_s.is_empty() {
        return Err(Error::InvalidConfig("no time window values to sweep".into()));
    }
    values_s
        .iter()
        .map(|&s| {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::InvalidConfig(format!("time window {s} s must be positive")));
            }
            let delta_t_us = (s * 1e6).round() as u64;
            let rules = mine_rules(traces, &MiningConfig::new(delta_t_us, fields.selected.iter().cloned())?)?;
            let cfg = ScoreConfig { delta_t_us, grace_us };
            let rows = experiments
                .par_iter()
                .map(|e| Ok((e.name.clone(), e.record.clone(), monitor_trace(&rules, &e.trace, monitor)?)))
                .collect::<Result<Vec<_>>>()?;
            let report = build_report(Approach::Mr, &rows, &cfg)?;
            Ok(SweepRow {
                delta_t_s: s,
                rules: rules.len(),
                metrics: report.metrics,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TutorialReport {
    pub seed: u64,
    pub training_traces: usize,
    pub fields: Vec<String>,
    pub rules: Vec<String>,
    pub reports: Vec<Report>,
}

/// simulate → select fields → mine → inject campaign → monitor every approach → evaluate.
///
/// Writes the corpus under `work/traces`, experiments under `work/experiments` and returns the
/// report, which is also written to `work/report.json`.
pub fn tutorial(work: &Path, seed: u64, training_traces: usize, experiments: usize) -> Result<TutorialReport> {
    let traces = corpus(&WorkloadConfig::with_seed(seed), training_traces)?;
    let trace_dir = work.join("traces");
    std::fs::create_dir_all(&trace_dir).map_err(|e| Error::io(&trace_dir, e))?;
    for t in &traces {
        crate::io::write_trace(t, trace_dir.join(format!("{}.jsonl", t.trace_id)))?;
    }
    let (selection, detectors) = train(&traces, &TrainConfig::default())?;
    let exp_dir = work.join("experiments");
    campaign(&WorkloadConfig::experiment(seed), experiments, seed, &exp_dir)?;
    let loaded = load_experiments(&exp_dir)?;
    for a in [Approach::Mr, Approach::Un, Approach::Pm, Approach::RestOnly] {
        monitor_experiments(&loaded, &detectors, a)?;
    }
    let score_cfg = ScoreConfig {
        delta_t_us: detectors.rules.delta_t_us,
        ..ScoreConfig::default()
    };
    let reports = Approach::ALL
        .into_iter()
        .map(|a| evaluate_dir(&exp_dir, a, &score_cfg))
        .collect::<Result<Vec<_>>>()?;
    let report = TutorialReport {
        seed,
        training_traces,
        fields: selection.selected.iter().cloned().collect(),
        rules: detectors.rules.rules.iter().map(|r| r.id.clone()).collect(),
        reports,
    };
    crate::io::write_bytes(&work.join("report.json"), report_to_string(&report).as_bytes())?;
    Ok(report)
}
