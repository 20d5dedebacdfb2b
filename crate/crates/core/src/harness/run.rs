//! Whole-experiment driver: every trial through the file-backed stages, then the report.

use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::report::{write_failures, TrialFailure, UqReport};
use crate::harness::stages::{file_err, run_trial_stages, TrialContext};

pub const CONFIG_FILE: &str = "config.json";

/// Store the resolved config next to the trial directories so later stages can find it.
pub fn write_config(config: &ExperimentConfig, root: &Path) -> Result<()> {
    fs::create_dir_all(root).map_err(|e| file_err(root, e))?;
    let mut text = config.to_json();
    text.push('\n');
    fs::write(root.join(CONFIG_FILE), text)?;
    Ok(())
}

/// Run all trials on `workers` threads (each trial is single-threaded).
///
/// A failing trial is recorded and the rest continue; the returned report
/// lists the failures, and is an error only when no trial succeeded.
pub fn run(config: &ExperimentConfig, root: &Path, workers: usize) -> Result<UqReport> {
    config.validate()?;
    write_config(config, root)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<_> = pool.install(|| {
        (0..config.trials)
            .into_par_iter()
            .map(|i| {
                let ctx = TrialContext::new(config, i);
                log::info!("trial {i} (seed {}) started", ctx.seed);
                let r = run_trial_stages(config, &ctx, root);
                match &r {
                    Ok(_) => log::info!("trial {i} done"),
                    Err(e) => log::error!("trial {i} failed: {e}"),
                }
                (ctx, r)
            })
            .collect()
    });
    let mut trials = Vec::new();
    let mut failures = Vec::new();
    for (ctx, r) in results {
        match r {
            Ok(ev) => trials.push(ev),
            Err(e) => failures.push(TrialFailure {
                trial: ctx.index,
                seed: ctx.seed,
                error: e.to_string(),
            }),
        }
    }
    write_failures(root, &failures)?;
    if trials.is_empty() {
        return Err(Error::Numeric(format!(
            "all {} trials failed; first error: {}",
            failures.len(),
            failures.first().map_or("", |f| f.error.as_str())
        )));
    }
    let report = UqReport::new(config.task, trials, failures);
    report.write(root)?;
    Ok(report)
}
