use std::collections::BTreeMap;
use std::fmt::Write;
use std::str::FromStr;

use crate::cl::ClMethod;
use crate::error::{Error, Result};
use crate::metrics::MetricsReport;
use crate::orchestrator::RunMode;
use crate::strategy::StrategyKind;
use crate::suite::RunRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableFormat {
    Csv,
    Markdown,
}

impl FromStr for TableFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(TableFormat::Csv),
            "markdown" | "md" => Ok(TableFormat::Markdown),
            other => Err(Error::invalid("format", format!("expected csv or markdown, got {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Metric {
    Loss,
    Rmse,
    Pcc,
}

impl Metric {
    const ALL: [Metric; 3] = [Metric::Loss, Metric::Rmse, Metric::Pcc];

    fn name(self) -> &'static str {
        match self {
            Metric::Loss => "Loss",
            Metric::Rmse => "RMSE",
            Metric::Pcc => "PCC",
        }
    }

    fn of(self, r: &MetricsReport) -> Option<f64> {
        match self {
            Metric::Loss => Some(r.avg_mse),
            Metric::Rmse => Some(r.avg_rmse),
            Metric::Pcc => r.avg_pcc,
        }
    }

    fn higher_is_better(self) -> bool {
        self == Metric::Pcc
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Column {
    clients: usize,
    /// FCL stage (1 or 2); 0 for FL.
    stage: u8,
    metric: Metric,
}

impl Column {
    fn markdown(&self) -> String {
        match self.stage {
            0 => format!("{} ({} clients)", self.metric.name(), self.clients),
            s => format!("{} T{} ({} clients)", self.metric.name(), s, self.clients),
        }
    }

    fn csv(&self) -> String {
        match self.stage {
            0 => format!("c{}_{}", self.clients, self.metric.name().to_lowercase()),
            s => format!("c{}_task{}_{}", self.clients, s, self.metric.name().to_lowercase()),
        }
    }
}

type RowKey = (bool, usize, &'static str);

struct Section {
    columns: Vec<Column>,
    rows: Vec<(RowKey, Vec<Option<f64>>)>,
}

fn method_key(r: &RunRecord) -> (usize, &'static str) {
    match r.config.mode {
        RunMode::Fl => {
            let k = r.config.strategy.kind;
            (StrategyKind::ALL.iter().position(|s| *s == k).unwrap_or(0), k.label())
        }
        RunMode::Fcl => {
            let m = r.config.cl_method;
            (ClMethod::ALL.iter().position(|c| *c == m).map_or(0, |i| i + 1), m.label())
        }
    }
}

/// Per-stage reports of a record: `[(0, final)]` for FL, `[(1, after task
/// 1), (2, after task 2)]` for FCL.
fn stage_reports(r: &RunRecord) -> Vec<(u8, &MetricsReport)> {
    match (&r.fcl, &r.final_report) {
        (Some(f), _) => vec![(1, &f.after_task1), (2, &f.after_task2)],
        (None, Some(rep)) => vec![(0, rep)],
        (None, None) => Vec::new(),
    }
}

/// Cells covered by several records (e.g. a seed sweep) hold their mean.
fn build_section(records: &[&RunRecord]) -> Section {
    let mut cells: BTreeMap<(RowKey, Column), Vec<f64>> = BTreeMap::new();
    let mut rows: BTreeMap<RowKey, ()> = BTreeMap::new();
    for r in records {
        let (order, label) = method_key(r);
        let key = (r.config.augment, order, label);
        rows.insert(key, ());
        for (stage, rep) in stage_reports(r) {
            for metric in Metric::ALL {
                let col = Column {
                    clients: r.config.clients,
                    stage,
                    metric,
                };
                let entry = cells.entry((key, col)).or_default();
                if let Some(v) = metric.of(rep) {
                    entry.push(v);
                }
            }
        }
    }
    let mut columns: Vec<Column> = cells.keys().map(|(_, c)| *c).collect();
    columns.sort();
    columns.dedup();
    let rows = rows
        .into_keys()
        .map(|key| {
            let values = columns
                .iter()
                .map(|c| {
                    cells
                        .get(&(key, *c))
                        .filter(|v| !v.is_empty())
                        .map(|v| v.iter().sum::<f64>() / v.len() as f64)
                })
                .collect();
            (key, values)
        })
        .collect();
    Section { columns, rows }
}

fn round3(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

/// 1 = best, 2 = second best, 0 otherwise. Ranks use the printed
/// (3-decimal) values, ties share a rank; rows compete only within their
/// augmentation group.
fn ranks(section: &Section) -> Vec<Vec<u8>> {
    let mut out = vec![vec![0u8; section.columns.len()]; section.rows.len()];
    for aug in [false, true] {
        let members: Vec<usize> = (0..section.rows.len()).filter(|&i| section.rows[i].0 .0 == aug).collect();
        for (j, col) in section.columns.iter().enumerate() {
            let mut distinct: Vec<f64> = members
                .iter()
                .filter_map(|&i| section.rows[i].1[j].map(round3))
                .collect();
            distinct.sort_by(|a, b| a.total_cmp(b));
            if col.metric.higher_is_better() {
                distinct.reverse();
            }
            distinct.dedup();
            for &i in &members {
                if let Some(v) = section.rows[i].1[j].map(round3) {
                    out[i][j] = match distinct.iter().position(|d| *d == v) {
                        Some(0) => 1,
                        Some(1) => 2,
                        _ => 0,
                    };
                }
            }
        }
    }
    out
}

fn aug_label(aug: bool) -> &'static str {
    if aug {
        "aug"
    } else {
        "no-aug"
    }
}

fn markdown(section: &Section, title: &str, out: &mut String) {
    let ranks = ranks(section);
    let _ = writeln!(out, "### {title}\n");
    let header: Vec<String> = section.columns.iter().map(Column::markdown).collect();
    let _ = writeln!(out, "| Augmentation | Method | {} |", header.join(" | "));
    let _ = writeln!(out, "|---|---|{}", "---:|".repeat(section.columns.len()));
    for (i, ((aug, _, label), values)) in section.rows.iter().enumerate() {
        let cells: Vec<String> = values
            .iter()
            .zip(&ranks[i])
            .map(|(v, rank)| match (v, rank) {
                (None, _) => "n/a".into(),
                (Some(v), 1) => format!("**{v:.3}**"),
                (Some(v), 2) => format!("[{v:.3}]"),
                (Some(v), _) => format!("{v:.3}"),
            })
            .collect();
        let _ = writeln!(out, "| {} | {} | {} |", aug_label(*aug), label, cells.join(" | "));
    }
}

fn csv(section: &Section, mode: &str, out: &mut String) {
    let header: Vec<String> = section.columns.iter().map(Column::csv).collect();
    let _ = writeln!(out, "mode,augmentation,method,{}", header.join(","));
    for ((aug, _, label), values) in &section.rows {
        let cells: Vec<String> = values
            .iter()
            .map(|v| v.map(|v| format!("{v:.3}")).unwrap_or_default())
            .collect();
        let _ = writeln!(out, "{mode},{},{label},{}", aug_label(*aug), cells.join(","));
    }
}

/// Comparison tables of completed runs: one section for FL runs (rows =
/// strategies) and one for FCL runs (rows = CL methods), columns =
/// Loss/RMSE/PCC per client count (and per task stage for FCL).
pub fn emit_table(records: &[RunRecord], format: TableFormat) -> Result<String> {
    let done: Vec<&RunRecord> = records.iter().filter(|r| r.is_completed()).collect();
    if done.is_empty() {
        return Err(Error::EmptyDataset("results store (no completed runs)"));
    }
    let fl: Vec<&RunRecord> = done.iter().copied().filter(|r| r.config.mode == RunMode::Fl).collect();
    let fcl: Vec<&RunRecord> = done.iter().copied().filter(|r| r.config.mode == RunMode::Fcl).collect();
    let mut out = String::new();
    for (group, mode, title) in [
        (&fl, "fl", "Federated learning"),
        (&fcl, "fcl", "Federated continual learning"),
    ] {
        if group.is_empty() {
            continue;
        }
        if !out.is_empty() {
            out.push('\n');
        }
        let section = build_section(group);
        match format {
            TableFormat::Markdown => markdown(&section, title, &mut out),
            TableFormat::Csv => csv(&section, mode, &mut out),
        }
    }
    Ok(out)
}

/// A CSV block as emitted by [`emit_table`].
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl CsvTable {
    /// Numeric value of `column` in `row` (None for an empty cell).
    pub fn value(&self, row: usize, column: &str) -> Option<f64> {
        let j = self.header.iter().position(|h| h == column)?;
        self.rows.get(row)?.get(j)?.parse().ok()
    }
}

/// Parses the blank-line separated CSV blocks of [`emit_table`].
pub fn parse_csv_table(text: &str) -> Result<Vec<CsvTable>> {
    let mut tables = Vec::new();
    for block in text.split("\n\n").filter(|b| !b.trim().is_empty()) {
        let mut reader = csv::ReaderBuilder::new().from_reader(block.as_bytes());
        let header = reader.headers()?.iter().map(str::to_string).collect();
        let rows = reader
            .records()
            .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
            .collect::<std::result::Result<_, _>>()?;
        tables.push(CsvTable { header, rows });
    }
    Ok(tables)
}
