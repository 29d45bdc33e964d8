use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::destimator::{MonteCarloSummary, TrialMode, TrialSummary};
use crate::error::Result;
use crate::syncctl::EventRecord;

use super::sync_only::SyncSummary;

/// Artifact writer that deletes everything it created if any write fails.
pub(super) struct Outputs {
    dir: PathBuf,
    created: Vec<PathBuf>,
}

#[derive(Serialize)]
struct TraceRow {
    k: usize,
    trial: usize,
    sensor: usize,
    mse: f64,
    triggered: bool,
    avg_identity_residual: f64,
}

#[derive(Serialize)]
struct MeanRow<'a> {
    k: usize,
    mode: &'a str,
    sensor: Option<usize>,
    mse: f64,
}

#[derive(Serialize)]
struct SyncRow<'a> {
    k: usize,
    noise: &'a str,
    agent: usize,
    deviation_cov_trace: f64,
    max_consistency_residual: Option<f64>,
}

impl Outputs {
    pub(super) fn write_all(
        dir: &Path,
        body: impl FnOnce(&mut Self) -> Result<()>,
    ) -> Result<Vec<PathBuf>> {
        let existed = dir.exists();
        fs::create_dir_all(dir)?;
        let mut out = Self {
            dir: dir.to_path_buf(),
            created: Vec::new(),
        };
        match body(&mut out) {
            Ok(()) => Ok(out.created),
            Err(e) => {
                for path in &out.created {
                    let _ = fs::remove_file(path);
                }
                if !existed {
                    let _ = fs::remove_dir(dir);
                }
                Err(e)
            }
        }
    }

    fn path(&mut self, name: &str) -> PathBuf {
        let path = self.dir.join(name);
        self.created.push(path.clone());
        path
    }

    fn csv<R: Serialize>(&mut self, name: &str, rows: impl IntoIterator<Item = R>) -> Result<()> {
        let mut writer = csv::Writer::from_path(self.path(name))?;
        for row in rows {
            writer.serialize(row)?;
        }
        writer.flush()?;
        Ok(())
    }

    pub(super) fn json(&mut self, name: &str, text: &str) -> Result<()> {
        fs::write(self.path(name), format!("{text}\n"))?;
        Ok(())
    }

    pub(super) fn trial_trace(
        &mut self,
        name: &str,
        trials: &[TrialSummary],
        mode: TrialMode,
    ) -> Result<()> {
        let mut rows = Vec::new();
        for t in trials {
            let (sq, ident, fired) = match mode {
                TrialMode::Event => (
                    &t.event_sq_err,
                    &t.event_avg_identity,
                    t.event_triggered.as_ref(),
                ),
                TrialMode::Full => (&t.full_sq_err, &t.full_avg_identity, None),
            };
            let (Some(sq), Some(ident)) = (sq, ident) else {
                continue;
            };
            for (k, row) in sq.iter().enumerate() {
                for (i, &mse) in row.iter().enumerate() {
                    rows.push(TraceRow {
                        k,
                        trial: t.trial,
                        sensor: i,
                        mse,
                        triggered: fired.is_none_or(|f| f[k][i]),
                        avg_identity_residual: ident[k],
                    });
                }
            }
        }
        self.csv(name, rows)
    }

    pub(super) fn mean_mse(&mut self, name: &str, summary: &MonteCarloSummary) -> Result<()> {
        let mut rows = Vec::new();
        for (k, &mse) in summary.central_mse_trace.iter().enumerate() {
            rows.push(MeanRow {
                k,
                mode: "central",
                sensor: None,
                mse,
            });
        }
        for (label, mode) in [("event", &summary.event), ("full", &summary.full)] {
            let Some(mode) = mode else { continue };
            for (i, trace) in mode.mse_trace.iter().enumerate() {
                for (k, &mse) in trace.iter().enumerate() {
                    rows.push(MeanRow {
                        k,
                        mode: label,
                        sensor: Some(i),
                        mse,
                    });
                }
            }
        }
        self.csv(name, rows)
    }

    pub(super) fn event_log(&mut self, name: &str, log: &[EventRecord]) -> Result<()> {
        self.csv(name, log)
    }

    pub(super) fn sync_trace(&mut self, name: &str, scenarios: &[SyncSummary]) -> Result<()> {
        let mut rows = Vec::new();
        for sc in scenarios {
            for (agent, trace) in sc.cov_trace.iter().enumerate() {
                for (k, &v) in trace.iter().enumerate() {
                    rows.push(SyncRow {
                        k,
                        noise: sc.noise.kind(),
                        agent,
                        deviation_cov_trace: v,
                        max_consistency_residual: k.checked_sub(1).map(|j| sc.consistency_trace[j]),
                    });
                }
            }
        }
        self.csv(name, rows)
    }
}
