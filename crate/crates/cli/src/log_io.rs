//! Training-log files: per-epoch loss records plus the run totals. The log
//! is what the comparison stage reads to contrast convergence behavior, so
//! it round-trips exactly (wall time included, though wall time is the one
//! field that will differ between otherwise identical runs).

use std::fs;
use std::path::Path;

use serde::Deserialize;

use tres_core::train::{EpochStats, TrainLog};

use crate::error::CliError;
use crate::jsonw::JsonWriter;

fn render_log(log: &TrainLog) -> String {
    let mut w = JsonWriter::new();
    w.begin_object();
    w.key("iterations").usize(log.iterations);
    w.key("converged").bool(log.converged);
    w.key("wall_time_s").f64(log.wall_time_s);
    w.key("epochs").begin_array();
    for e in &log.epochs {
        w.begin_object();
        w.key("iteration").usize(e.iteration);
        w.key("loss_total").f64(e.loss_total);
        w.key("loss_class").f64(e.loss_class);
        w.key("loss_reg").f64(e.loss_reg);
        w.end_object();
    }
    w.end_array();
    w.end_object();
    w.finish()
}

pub fn save_log(log: &TrainLog, path: &Path) -> Result<(), CliError> {
    fs::write(path, render_log(log)).map_err(|e| CliError::io(path, e))
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct EpochDoc {
    iteration: usize,
    loss_total: f64,
    loss_class: f64,
    loss_reg: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LogDoc {
    iterations: usize,
    converged: bool,
    wall_time_s: f64,
    epochs: Vec<EpochDoc>,
}

pub fn load_log(path: &Path) -> Result<TrainLog, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let doc: LogDoc =
        serde_json::from_str(&text).map_err(|e| CliError::format(path, e.to_string()))?;
    if doc.iterations != doc.epochs.len() {
        return Err(CliError::format(
            path,
            format!(
                "iterations {} but {} epoch records",
                doc.iterations,
                doc.epochs.len()
            ),
        ));
    }
    for (i, e) in doc.epochs.iter().enumerate() {
        if e.iteration != i + 1 {
            return Err(CliError::format(
                path,
                format!("epoch record {i} carries iteration {}", e.iteration),
            ));
        }
    }
    Ok(TrainLog {
        epochs: doc
            .epochs
            .iter()
            .map(|e| EpochStats {
                iteration: e.iteration,
                loss_total: e.loss_total,
                loss_class: e.loss_class,
                loss_reg: e.loss_reg,
            })
            .collect(),
        converged: doc.converged,
        iterations: doc.iterations,
        wall_time_s: doc.wall_time_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_log() -> TrainLog {
        TrainLog {
            epochs: (1..=3)
                .map(|i| EpochStats {
                    iteration: i,
                    loss_total: 10.0 / i as f64,
                    loss_class: 6.0 / i as f64,
                    loss_reg: 4.0 / i as f64,
                })
                .collect(),
            converged: true,
            iterations: 3,
            wall_time_s: 1.25,
        }
    }

    #[test]
    fn log_round_trips_exactly() {
        let log = sample_log();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.json");
        save_log(&log, &path).unwrap();
        assert_eq!(load_log(&path).unwrap(), log);
    }

    #[test]
    fn inconsistent_counts_are_rejected() {
        let log = sample_log();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("log.json");
        save_log(&log, &path).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        fs::write(&path, text.replacen("\"iterations\":3", "\"iterations\":4", 1)).unwrap();
        assert!(load_log(&path).is_err());
    }
}
