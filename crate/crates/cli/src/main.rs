use std::fs::{self, File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::thread;
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use rulewatch::alert::FailureAlert;
use rulewatch::baselines::{DetectorConfig, NgramModel, VmmModel};
use rulewatch::eval::ScoreConfig;
use rulewatch::event::Trace;
use rulewatch::fields::{select_fields, FieldSelection, FieldSelectorConfig};
use rulewatch::io::{
    alerts_file_name, alerts_to_string, load_ruleset, load_trace, load_traces_dir, parse_event_line, write_alerts,
    write_experiment, write_ruleset, write_trace, ExperimentRecord, EXPERIMENT_FILE, TRACE_FILE,
};
use rulewatch::mining::{mine_rules, MiningConfig};
use rulewatch::monitor::{monitor_trace, rest_only_alerts, Monitor, MonitorOptions};
use rulewatch::pipeline::{
    evaluate_dir, load_experiments, report_to_string, sweep_delta_t, tutorial, Approach, Experiment,
};
use rulewatch::rules::RuleSet;
use rulewatch::sim::{campaign, inject, schedule, write_corpus, Catalog, FaultKind, FaultSpec, WorkloadConfig};

/// Mine monitoring rules from traced RPC/REST events and watch live streams for failures.
#[derive(Parser)]
#[command(name = "rulewatch", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Score body fields and pick the ones that correlate events of one operation.
    SelectFields(SelectFieldsArgs),
    /// Mine ORD/OCC/COUNT rules from a directory of fault-free traces.
    Mine(MineArgs),
    /// Generate fault-free multi-tenant traces.
    Simulate(SimulateArgs),
    /// Generate experiments with an injected fault.
    Inject(InjectArgs),
    /// Run a detector over a trace or a whole experiment campaign.
    Monitor(MonitorArgs),
    /// Score stored alerts of one approach against the experiments' ground truth.
    Evaluate(EvaluateArgs),
    /// Re-mine and re-score the campaign for several time windows.
    Sweep(SweepArgs),
    /// Run the whole pipeline end to end in a work directory.
    Tutorial(TutorialArgs),
}

#[derive(Args)]
struct Thresholds {
    /// Minimum propagation score of a correlation field.
    #[arg(long, default_value_t = 0.3)]
    eps1: f64,
    /// Minimum diversity score of a correlation field.
    #[arg(long, default_value_t = 0.3)]
    eps2: f64,
}

impl Thresholds {
    fn config(&self) -> Result<FieldSelectorConfig> {
        Ok(FieldSelectorConfig::new(self.eps1, self.eps2)?)
    }
}

#[derive(Args)]
struct SelectFieldsArgs {
    #[arg(long)]
    traces: PathBuf,
    #[command(flatten)]
    thresholds: Thresholds,
    /// Where to write the per-field report; printed to stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct MineArgs {
    #[arg(long)]
    traces: PathBuf,
    #[arg(long, default_value_t = 35.0)]
    delta_t_s: f64,
    #[command(flatten)]
    thresholds: Thresholds,
    /// Field report from `select-fields`; skips selection.
    #[arg(long)]
    fields: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct WorkloadArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Operation catalog replacing the bundled one.
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long)]
    tenants: Option<usize>,
    /// Workload length in seconds.
    #[arg(long)]
    duration_s: Option<u64>,
}

impl WorkloadArgs {
    fn config(&self, base: WorkloadConfig) -> Result<WorkloadConfig> {
        let mut cfg = WorkloadConfig { seed: self.seed, ..base };
        if let Some(path) = &self.catalog {
            cfg.catalog = Catalog::load(path)?;
            cfg.assignment = cfg.catalog.default_assignment.clone();
        }
        if let Some(t) = self.tenants {
            cfg.tenants = t;
        }
        if let Some(d) = self.duration_s {
            cfg.duration_us = d * 1_000_000;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    workload: WorkloadArgs,
    /// Number of traces to write.
    #[arg(long, default_value_t = 50)]
    traces: usize,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct InjectArgs {
    #[command(flatten)]
    workload: WorkloadArgs,
    /// Write this many experiments, three per workload, one per fault kind.
    #[arg(long, conflicts_with_all = ["op", "kind"])]
    campaign: Option<usize>,
    /// Target operation of a single experiment.
    #[arg(long, requires = "kind")]
    op: Option<String>,
    /// THROW_EXCEPTION, WRONG_RETURN or WRONG_PARAM.
    #[arg(long, requires = "op")]
    kind: Option<FaultKind>,
    /// Tenant running the target; the first tenant running it when omitted.
    #[arg(long)]
    tenant: Option<usize>,
    /// Activation time; the second RPC of the target operation when omitted.
    #[arg(long)]
    activation_us: Option<u64>,
    #[arg(long)]
    benign_probability: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MonitorArgs {
    #[arg(long, default_value = "mr")]
    approach: Approach,
    /// Rule file for `mr` and `combined`.
    #[arg(long)]
    rules: Option<PathBuf>,
    /// Fault-free traces to train `un` and `pm` on.
    #[arg(long)]
    train: Option<PathBuf>,
    /// Single trace to monitor.
    #[arg(long, conflicts_with = "experiments", requires = "alerts")]
    input: Option<PathBuf>,
    #[arg(long)]
    alerts: Option<PathBuf>,
    /// Campaign directory; writes `alerts.<approach>.jsonl` into every experiment.
    #[arg(long)]
    experiments: Option<PathBuf>,
    /// Tail a growing trace file and append alerts as they are raised.
    #[arg(long, requires = "input")]
    follow: bool,
    /// Stop following after this long without new events.
    #[arg(long, requires = "follow")]
    idle_timeout_s: Option<f64>,
    #[arg(long)]
    under_count_alerts: bool,
    #[arg(long, default_value_t = 3)]
    n: usize,
    #[arg(long, default_value_t = 3)]
    max_order: usize,
    #[arg(long, default_value_t = 0.01)]
    pm_threshold: f64,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    experiments: PathBuf,
    #[arg(long, default_value = "mr")]
    approach: Approach,
    #[arg(long, default_value_t = 35.0)]
    delta_t_s: f64,
    #[arg(long, default_value_t = 5.0)]
    grace_s: f64,
    /// Printed to stdout when omitted.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    traces: PathBuf,
    #[arg(long)]
    experiments: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "5,20,35,50")]
    delta_t_s: Vec<f64>,
    #[command(flatten)]
    thresholds: Thresholds,
    #[arg(long, default_value_t = 5.0)]
    grace_s: f64,
    #[arg(long)]
    under_count_alerts: bool,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct TutorialArgs {
    #[arg(long)]
    work: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    traces: usize,
    #[arg(long, default_value_t = 200)]
    experiments: usize,
}

/// Errors in how the tool was invoked rather than in the data it read.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(Usage(msg.into()))
}

fn seconds(s: f64, what: &str) -> Result<u64> {
    if !(s > 0.0 && s.is_finite()) {
        return Err(usage(format!("{what} must be a positive number of seconds, got {s}")));
    }
    Ok((s * 1e6).round() as u64)
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn load_corpus(dir: &Path) -> Result<Vec<Trace>> {
    let traces = load_traces_dir(dir)?;
    info!("loaded {} traces from {}", traces.len(), dir.display());
    Ok(traces)
}

fn select_fields_cmd(a: SelectFieldsArgs) -> Result<()> {
    let traces = load_corpus(&a.traces)?;
    let selection = select_fields(&traces, &a.thresholds.config()?)?;
    info!("selected fields {:?}", selection.selected);
    write_text(a.report.as_deref(), &report_to_string(&selection))
}

fn mine_cmd(a: MineArgs) -> Result<()> {
    let delta_t_us = seconds(a.delta_t_s, "--delta-t-s")?;
    let traces = load_corpus(&a.traces)?;
    let fields = match &a.fields {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let sel: FieldSelection =
                serde_json::from_str(&text).with_context(|| format!("{}: not a field report", path.display()))?;
            sel.selected
        }
        None => select_fields(&traces, &a.thresholds.config()?)?.selected,
    };
    let rules = mine_rules(&traces, &MiningConfig::new(delta_t_us, fields)?)?;
    info!("mined {} rules", rules.len());
    write_ruleset(&rules, &a.out)?;
    Ok(())
}

fn simulate_cmd(a: SimulateArgs) -> Result<()> {
    let cfg = a.workload.config(WorkloadConfig::default())?;
    let paths = write_corpus(&cfg, a.traces, &a.out)?;
    info!("wrote {} traces to {}", paths.len(), a.out.display());
    Ok(())
}

fn inject_cmd(a: InjectArgs) -> Result<()> {
    let mut cfg = a.workload.config(WorkloadConfig::experiment(0))?;
    if let Some(p) = a.benign_probability {
        cfg.benign_probability = p;
        cfg.validate()?;
    }
    if let Some(n) = a.campaign {
        let records = campaign(&cfg, n, cfg.seed, &a.out)?;
        info!("wrote {} experiments to {}", records.len(), a.out.display());
        return Ok(());
    }
    let (Some(op), Some(kind)) = (a.op, a.kind) else {
        return Err(usage("inject needs either --campaign N or --op and --kind"));
    };
    let sched = schedule(&cfg)?;
    let target = sched
        .ops
        .iter()
        .find(|o| o.op == op && a.tenant.is_none_or(|t| o.tenant == t))
        .ok_or_else(|| usage(format!("no {op} operation in the workload")))?;
    let activation_us = match a.activation_us {
        Some(t) => t,
        None => match target.rpc_positions().get(1) {
            Some(&i) => target.events[i].ts_us,
            None => return Err(usage(format!("{op} has no downstream RPC to activate on"))),
        },
    };
    let fault = FaultSpec {
        kind,
        target_op: op,
        target_tenant: target.tenant,
        activation_us,
    };
    let (trace, truth) = inject(&cfg, &fault)?;
    write_trace(&trace, a.out.join(TRACE_FILE))?;
    let record = ExperimentRecord {
        trace_path: TRACE_FILE.into(),
        t_start_us: truth.t_start_us,
        fault: truth.fault,
        first_failure_us: truth.first_failure_us,
        manifestation: truth.manifestation,
    };
    write_experiment(&record, a.out.join(EXPERIMENT_FILE))?;
    info!("wrote experiment to {}", a.out.display());
    Ok(())
}

enum Detector {
    Rules(RuleSet, MonitorOptions, bool),
    Ngrams(NgramModel),
    Markov(VmmModel, f64),
    Rest,
}

impl Detector {
    fn build(a: &MonitorArgs) -> Result<Self> {
        let options = MonitorOptions {
            under_count_alerts: a.under_count_alerts,
        };
        let rules = || -> Result<RuleSet> {
            let path = a.rules.as_ref().ok_or_else(|| usage(format!("--approach {} needs --rules", a.approach)))?;
            Ok(load_ruleset(path)?)
        };
        let corpus = || -> Result<Vec<Trace>> {
            let dir = a.train.as_ref().ok_or_else(|| usage(format!("--approach {} needs --train", a.approach)))?;
            load_corpus(dir)
        };
        let cfg = DetectorConfig {
            epsilon_pm: a.pm_threshold,
            n: a.n,
            max_order: a.max_order,
        };
        cfg.validate()?;
        Ok(match a.approach {
            Approach::Mr => Detector::Rules(rules()?, options, false),
            Approach::Combined => Detector::Rules(rules()?, options, true),
            Approach::Un => Detector::Ngrams(NgramModel::train(&corpus()?, cfg.n)?),
            Approach::Pm => Detector::Markov(VmmModel::train(&corpus()?, cfg.max_order)?, cfg.epsilon_pm),
            Approach::RestOnly => Detector::Rest,
        })
    }

    fn alerts(&self, trace: &Trace) -> Result<Vec<FailureAlert>> {
        Ok(match self {
            Detector::Rules(rules, options, combined) => {
                let mr = monitor_trace(rules, trace, *options)?;
                if *combined {
                    rulewatch::alert::merge_sorted(&[&mr, &rest_only_alerts(trace)])
                } else {
                    mr
                }
            }
            Detector::Ngrams(m) => m.detect(trace),
            Detector::Markov(m, eps) => m.detect(trace, *eps),
            Detector::Rest => rest_only_alerts(trace),
        })
    }
}

fn monitor_cmd(a: MonitorArgs) -> Result<()> {
    let detector = Detector::build(&a)?;
    if let Some(dir) = &a.experiments {
        let experiments: Vec<Experiment> = load_experiments(dir)?;
        if experiments.is_empty() {
            bail!("{}: no experiment directories", dir.display());
        }
        for e in &experiments {
            write_alerts(&detector.alerts(&e.trace)?, e.dir.join(alerts_file_name(a.approach.name())))?;
        }
        info!("monitored {} experiments with {}", experiments.len(), a.approach);
        return Ok(());
    }
    let (Some(input), Some(out)) = (&a.input, &a.alerts) else {
        return Err(usage("monitor needs --input and --alerts, or --experiments"));
    };
    if a.follow {
        let Detector::Rules(rules, options, _) = &detector else {
            return Err(usage("--follow is only supported for rule-based monitoring"));
        };
        let idle = a.idle_timeout_s.map(Duration::from_secs_f64);
        return follow(Monitor::compile(rules, *options)?, input, out, idle);
    }
    let trace = load_trace(input)?;
    let alerts = detector.alerts(&trace)?;
    info!("{} alerts", alerts.len());
    write_alerts(&alerts, out)?;
    Ok(())
}

const POLL: Duration = Duration::from_millis(200);
/// How far trace time driven by the wall clock trails the newest event, absorbing write lag.
const FOLLOW_SLACK_US: u64 = 2_000_000;

/// Tails `input`, feeding complete lines to the monitor and ticking it from wall-clock time
/// mapped onto trace time. Alerts are appended to `out` as soon as they are raised.
fn follow(mut monitor: Monitor, input: &Path, out: &Path, idle: Option<Duration>) -> Result<()> {
    let mut file = File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let mut sink = OpenOptions::new()
        .create(true)
        .write(true)
        .truncate(true)
        .open(out)
        .with_context(|| format!("opening {}", out.display()))?;
    let mut emit = |alerts: Vec<FailureAlert>| -> Result<()> {
        if !alerts.is_empty() {
            sink.write_all(alerts_to_string(&alerts).as_bytes())?;
            sink.flush()?;
        }
        Ok(())
    };
    let mut pending = String::new();
    let mut offset = 0u64;
    let mut line_no = 0usize;
    let mut anchor: Option<(u64, Instant)> = None;
    let mut last_data = Instant::now();
    loop {
        file.seek(SeekFrom::Start(offset))?;
        let mut chunk = String::new();
        let read = file.read_to_string(&mut chunk)?;
        offset += read as u64;
        pending.push_str(&chunk);
        let mut fed = false;
        while let Some(end) = pending.find('\n') {
            let line: String = pending.drain(..=end).collect();
            line_no += 1;
            if line.trim().is_empty() {
                continue;
            }
            let event = parse_event_line(line.trim_end(), input, line_no)?;
            anchor.get_or_insert((event.ts_us, Instant::now()));
            emit(monitor.feed(&event)?)?;
            fed = true;
        }
        if fed {
            last_data = Instant::now();
            continue;
        }
        if let (Some((ts0, t0)), Some(clock)) = (anchor, monitor.clock()) {
            let now = (ts0 + t0.elapsed().as_micros() as u64).saturating_sub(FOLLOW_SLACK_US);
            if now > clock {
                emit(monitor.tick(now)?)?;
            }
        }
        if idle.is_some_and(|d| last_data.elapsed() >= d) {
            if let Some(clock) = monitor.clock() {
                emit(monitor.tick(clock + monitor.max_delta_t_us())?)?;
            }
            return Ok(());
        }
        thread::sleep(POLL);
    }
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let cfg = ScoreConfig {
        delta_t_us: seconds(a.delta_t_s, "--delta-t-s")?,
        grace_us: (a.grace_s.max(0.0) * 1e6).round() as u64,
    };
    let report = evaluate_dir(&a.experiments, a.approach, &cfg)?;
    let m = &report.metrics;
    info!(
        "{}: TP {} FP {} FN {} TN {} precision {:.3} recall {:.3} F1 {:.3}",
        a.approach, m.tp, m.fp, m.fn_, m.tn, m.precision, m.recall, m.f1
    );
    write_text(a.report.as_deref(), &report_to_string(&report))
}

fn sweep_cmd(a: SweepArgs) -> Result<()> {
    let traces = load_corpus(&a.traces)?;
    let selection = select_fields(&traces, &a.thresholds.config()?)?;
    let experiments = load_experiments(&a.experiments)?;
    let options = MonitorOptions {
        under_count_alerts: a.under_count_alerts,
    };
    let grace_us = (a.grace_s.max(0.0) * 1e6).round() as u64;
    let rows = sweep_delta_t(&traces, &selection, &experiments, &a.delta_t_s, grace_us, options)?;
    eprintln!("{:>8} {:>6} {:>10} {:>7} {:>7} {:>12}", "window", "rules", "precision", "recall", "F1", "latency");
    for r in &rows {
        let latency = r.metrics.mean_latency_us.map_or("-".to_string(), |l| format!("{:.1} s", l / 1e6));
        eprintln!(
            "{:>6} s {:>6} {:>10.3} {:>7.3} {:>7.3} {:>12}",
            r.delta_t_s, r.rules, r.metrics.precision, r.metrics.recall, r.metrics.f1, latency
        );
    }
    write_text(a.report.as_deref(), &report_to_string(&rows))
}

fn tutorial_cmd(a: TutorialArgs) -> Result<()> {
    let report = tutorial(&a.work, a.seed, a.traces, a.experiments)?;
    for r in &report.reports {
        eprintln!("{:<10} F1 {:.3}", r.approach.name(), r.metrics.f1);
    }
    info!("report written to {}", a.work.join("report.json").display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SelectFields(a) => select_fields_cmd(a),
        Command::Mine(a) => mine_cmd(a),
        Command::Simulate(a) => simulate_cmd(a),
        Command::Inject(a) => inject_cmd(a),
        Command::Monitor(a) => monitor_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Sweep(a) => sweep_cmd(a),
        Command::Tutorial(a) => tutorial_cmd(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let mut msg = e.to_string();
            for cause in e.chain().skip(1) {
                let cause = cause.to_string();
                if !msg.contains(&cause) {
                    msg = format!("{msg}: {cause}");
                }
            }
            eprintln!("error: {msg}");
            ExitCode::from(if e.downcast_ref::<Usage>().is_some() { 1 } else { 2 })
        }
    }
}
