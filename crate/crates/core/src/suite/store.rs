use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::orchestrator::{ExperimentConfig, RoundLog};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FclStages {
    pub after_task1: MetricsReport,
    pub after_task2: MetricsReport,
    pub task1_after_task2: MetricsReport,
}

impl FclStages {
    fn bit_eq(&self, other: &FclStages) -> bool {
        self.after_task1.bit_eq(&other.after_task1)
            && self.after_task2.bit_eq(&other.after_task2)
            && self.task1_after_task2.bit_eq(&other.task1_after_task2)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum RunStatus {
    Completed,
    Failed { message: String },
}

/// Everything persisted for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub run_id: String,
    pub config: ExperimentConfig,
    pub status: RunStatus,
    pub rounds: Vec<RoundLog>,
    /// Metrics of the final round (after task 2 for FCL runs).
    pub final_report: Option<MetricsReport>,
    pub fcl: Option<FclStages>,
    pub version: String,
    /// Seconds since the Unix epoch when the record was created.
    pub timestamp: u64,
}

#[derive(Serialize, Deserialize)]
struct ReportFile {
    #[serde(flatten)]
    status: RunStatus,
    final_report: Option<MetricsReport>,
    fcl: Option<FclStages>,
}

#[derive(Serialize, Deserialize)]
struct MetaFile {
    run_id: String,
    version: String,
    timestamp: u64,
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0)
}

impl RunRecord {
    pub fn completed(run_id: String, config: ExperimentConfig, rounds: Vec<RoundLog>, fcl: Option<FclStages>) -> Self {
        let final_report = rounds.last().map(|r| r.metrics.clone());
        Self {
            run_id,
            config,
            status: RunStatus::Completed,
            rounds,
            final_report,
            fcl,
            version: VERSION.into(),
            timestamp: now(),
        }
    }

    pub fn failed(run_id: String, config: ExperimentConfig, message: String) -> Self {
        Self {
            run_id,
            config,
            status: RunStatus::Failed { message },
            rounds: Vec::new(),
            final_report: None,
            fcl: None,
            version: VERSION.into(),
            timestamp: now(),
        }
    }

    pub fn is_completed(&self) -> bool {
        self.status == RunStatus::Completed
    }

    /// Bitwise comparison of the science-relevant results.
    pub fn same_results(&self, other: &RunRecord) -> bool {
        let reports = match (&self.final_report, &other.final_report) {
            (Some(a), Some(b)) => a.bit_eq(b),
            (None, None) => true,
            _ => false,
        };
        let stages = match (&self.fcl, &other.fcl) {
            (Some(a), Some(b)) => a.bit_eq(b),
            (None, None) => true,
            _ => false,
        };
        reports && stages && self.rounds == other.rounds
    }
}

/// One directory per run id under `root`. Existing completed records are
/// never overwritten; recording the same run again checks that the results
/// are bit-identical instead.
#[derive(Debug, Clone)]
pub struct ResultsStore {
    root: PathBuf,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

impl ResultsStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn dir(&self, run_id: &str) -> PathBuf {
        self.root.join(run_id)
    }

    pub fn contains(&self, run_id: &str) -> bool {
        self.dir(run_id).join("meta.json").is_file()
    }

    pub fn record(&self, record: &RunRecord) -> Result<()> {
        if self.contains(&record.run_id) {
            let stored = self.load(&record.run_id)?;
            if stored.is_completed() {
                return check_same(&stored, record);
            }
        }
        self.write(record)
    }

    /// Compares a fresh record against the stored one.
    pub fn verify(&self, fresh: &RunRecord) -> Result<()> {
        if !self.contains(&fresh.run_id) {
            return Err(Error::Reproducibility {
                run_id: fresh.run_id.clone(),
                detail: "no stored record".into(),
            });
        }
        check_same(&self.load(&fresh.run_id)?, fresh)
    }

    fn write(&self, r: &RunRecord) -> Result<()> {
        let dir = self.dir(&r.run_id);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        write_json(&dir.join("config.json"), &r.config)?;
        write_json(&dir.join("rounds.json"), &r.rounds)?;
        write_rounds_csv(&dir.join("rounds.csv"), &r.rounds)?;
        write_json(
            &dir.join("report.json"),
            &ReportFile {
                status: r.status.clone(),
                final_report: r.final_report.clone(),
                fcl: r.fcl.clone(),
            },
        )?;
        // written last: its presence marks a complete record
        write_json(
            &dir.join("meta.json"),
            &MetaFile {
                run_id: r.run_id.clone(),
                version: r.version.clone(),
                timestamp: r.timestamp,
            },
        )
    }

    pub fn load(&self, run_id: &str) -> Result<RunRecord> {
        let dir = self.dir(run_id);
        let meta: MetaFile = read_json(&dir.join("meta.json"))?;
        let report: ReportFile = read_json(&dir.join("report.json"))?;
        Ok(RunRecord {
            run_id: meta.run_id,
            config: read_json(&dir.join("config.json"))?,
            status: report.status,
            rounds: read_json(&dir.join("rounds.json"))?,
            final_report: report.final_report,
            fcl: report.fcl,
            version: meta.version,
            timestamp: meta.timestamp,
        })
    }

    /// All stored records, ordered by run id.
    pub fn records(&self) -> Result<Vec<RunRecord>> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.root).map_err(|e| Error::io(&self.root, e))? {
            let entry = entry.map_err(|e| Error::io(&self.root, e))?;
            if let Some(id) = entry.file_name().to_str() {
                if self.contains(id) {
                    ids.push(id.to_string());
                }
            }
        }
        ids.sort();
        ids.iter().map(|id| self.load(id)).collect()
    }
}

fn check_same(stored: &RunRecord, fresh: &RunRecord) -> Result<()> {
    if !fresh.is_completed() {
        return Err(Error::Reproducibility {
            run_id: fresh.run_id.clone(),
            detail: "stored run completed but the re-run failed".into(),
        });
    }
    if stored.config != fresh.config {
        return Err(Error::Reproducibility {
            run_id: fresh.run_id.clone(),
            detail: "stored config differs".into(),
        });
    }
    if !stored.same_results(fresh) {
        return Err(Error::Reproducibility {
            run_id: fresh.run_id.clone(),
            detail: "metrics differ from the stored run".into(),
        });
    }
    Ok(())
}

fn write_rounds_csv(path: &Path, rounds: &[RoundLog]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "task,round,loss,rmse,mean_action_rmse,pcc,degenerate_actions,client_losses,wall_time_ms")
        .expect("writing to memory");
    for r in rounds {
        let m = &r.metrics;
        let losses: Vec<String> = r.client_losses.iter().map(|l| format!("{l:?}")).collect();
        writeln!(
            out,
            "{},{},{:?},{:?},{:?},{},{},{},{:.3}",
            r.task,
            r.round,
            m.avg_mse,
            m.avg_rmse,
            m.mean_action_rmse,
            m.avg_pcc.map(|p| format!("{p:?}")).unwrap_or_default(),
            m.degenerate_actions.len(),
            losses.join(";"),
            r.wall_time_ms
        )
        .expect("writing to memory");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
