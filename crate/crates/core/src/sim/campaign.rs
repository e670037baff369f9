//! Fault-injection campaigns and fault-free training corpora written to disk.
//!
//! Experiments come in blocks of three sharing one workload, one target and one benign draw, one
//! experiment per fault kind.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use super::{generate, inject_into, mix, rng_for, schedule, FaultKind, FaultSpec, WorkloadConfig};
use crate::error::{Error, Result};
use crate::event::Trace;
use crate::io::{write_experiment, write_trace, ExperimentRecord, EXPERIMENT_FILE, TRACE_FILE};

/// `n` fault-free traces with seeds derived from `config.seed`.
pub fn corpus(config: &WorkloadConfig, n: usize) -> Result<Vec<Trace>> {
    (0..n)
        .into_par_iter()
        .map(|i| {
            let cfg = WorkloadConfig {
                seed: mix(config.seed, i as u64),
                ..config.clone()
            };
            let (mut trace, _) = generate(&cfg)?;
            trace.trace_id = format!("trace-{i:03}");
            Ok(trace)
        })
        .collect()
}

/// Writes [`corpus`] as `trace-NNN.jsonl` files into `dir`.
pub fn write_corpus(config: &WorkloadConfig, n: usize, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    corpus(config, n)?
        .iter()
        .map(|t| {
            let path = dir.join(format!("{}.jsonl", t.trace_id));
            write_trace(t, &path)?;
            Ok(path)
        })
        .collect()
}

fn run_block(config: &WorkloadConfig, block: usize, kinds: &[FaultKind], out: &Path) -> Result<Vec<ExperimentRecord>> {
    let cfg = WorkloadConfig {
        seed: mix(config.seed, block as u64 + 1),
        ..config.clone()
    };
    let s = schedule(&cfg)?;
    let mut rng = rng_for(cfg.seed, 0xb10c);
    let injectable = cfg.catalog.injectable_ops();
    let mut names: Vec<&str> = s.ops.iter().map(|o| o.op.as_str()).filter(|o| injectable.contains(o)).collect();
    names.sort_unstable();
    names.dedup();
    let name = *names
        .choose(&mut rng)
        .ok_or_else(|| Error::InvalidConfig("workload contains no injectable operation".into()))?;
    let candidates: Vec<usize> = (0..s.ops.len()).filter(|&i| s.ops[i].op == name).collect();
    let target = &s.ops[*candidates.choose(&mut rng).expect("name taken from the schedule")];
    // activate on a downstream event that every execution of the operation reaches
    let rpcs = target.rpc_positions();
    let reachable: Vec<usize> = rpcs[1..].iter().copied().filter(|&i| target.required[i]).collect();
    let activation_us = target.events[*reachable.choose(&mut rng).expect("injectable operations have a mandatory downstream step")].ts_us;
    let benign = rng.gen_bool(cfg.benign_probability);

    kinds
        .iter()
        .enumerate()
        .map(|(j, &kind)| {
            let fault = FaultSpec {
                kind,
                target_op: name.to_string(),
                target_tenant: target.tenant,
                activation_us,
            };
            let mut frng = rng_for(cfg.seed, 0xfa17 + j as u64);
            let (trace, truth) = inject_into(&cfg, s.clone(), &fault, benign, &mut frng)?;
            let dir = out.join(format!("exp-{:04}", block * FaultKind::ALL.len() + j));
            std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
            write_trace(&trace, dir.join(TRACE_FILE))?;
            let record = ExperimentRecord {
                trace_path: TRACE_FILE.into(),
                t_start_us: truth.t_start_us,
                fault: truth.fault,
                first_failure_us: truth.first_failure_us,
                manifestation: truth.manifestation,
            };
            write_experiment(&record, dir.join(EXPERIMENT_FILE))?;
            Ok(record)
        })
        .collect()
}

/// Writes `n` experiment directories `exp-NNNN` under `out` and returns their records in order.
pub fn campaign(config: &WorkloadConfig, n: usize, seed: u64, out: impl AsRef<Path>) -> Result<Vec<ExperimentRecord>> {
    if n == 0 {
        return Err(Error::InvalidConfig("a campaign needs at least one experiment".into()));
    }
    config.validate()?;
    let out = out.as_ref();
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let base = WorkloadConfig {
        seed,
        ..config.clone()
    };
    let per = FaultKind::ALL.len();
    let blocks: Vec<Vec<ExperimentRecord>> = (0..n.div_ceil(per))
        .into_par_iter()
        .map(|b| {
            let kinds = &FaultKind::ALL[..per.min(n - b * per)];
            run_block(&base, b, kinds, out)
        })
        .collect::<Result<_>>()?;
    Ok(blocks.into_iter().flatten().collect())
}
