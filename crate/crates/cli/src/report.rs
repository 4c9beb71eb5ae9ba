//! Run and sweep artifacts: per-flow record CSVs, JSON summaries, the sweep
//! index and the figure tables.

use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use dcpsim_core::net::SuboptimalityRecord;
use dcpsim_core::sim::sweep::{Aggregates, CellResult, FigTable};
use dcpsim_core::sim::{RecordStats, RunOutput, RunSummary, SimConfig};
use serde::{Deserialize, Serialize};

pub const RECORDS_FILE: &str = "records.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const INDEX_FILE: &str = "index.json";

fn csv_err(e: csv::Error) -> io::Error {
    match e.into_kind() {
        csv::ErrorKind::Io(e) => e,
        other => io::Error::new(io::ErrorKind::InvalidData, format!("{other:?}")),
    }
}

pub fn write_records(path: &Path, records: &[SuboptimalityRecord]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in records {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()
}

pub fn read_records(path: &Path) -> io::Result<Vec<SuboptimalityRecord>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> io::Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()
}

pub fn write_summary(path: &Path, summary: &RunSummary) -> io::Result<()> {
    write_json(path, summary)
}

pub fn read_summary(path: &Path) -> io::Result<RunSummary> {
    Ok(serde_json::from_reader(io::BufReader::new(File::open(path)?))?)
}

/// Writes `records.csv` and `summary.json` into `dir`, creating it.
pub fn write_run(dir: &Path, out: &RunOutput) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    write_records(&dir.join(RECORDS_FILE), &out.records)?;
    write_summary(&dir.join(SUMMARY_FILE), &out.summary)
}

/// Re-reads a run directory and recomputes the statistics from the records.
/// `Ok(false)` if they differ from the summary.
pub fn verify_run(dir: &Path) -> io::Result<bool> {
    let records = read_records(&dir.join(RECORDS_FILE))?;
    let summary = read_summary(&dir.join(SUMMARY_FILE))?;
    Ok(RecordStats::from_records(&records) == summary.stats)
}

/// Directory name of one sweep cell, relative to the sweep root.
pub fn cell_dir(index: usize, cfg: &SimConfig) -> String {
    format!(
        "cell-{index:04}-n{}-g{}-t{}-{}-cl{}",
        cfg.n_controllers,
        cfg.grid_size,
        cfg.traffic.lo,
        cfg.traffic.hi,
        cfg.cl.initial().index()
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellConfig {
    pub n_controllers: u16,
    pub grid_size: u32,
    pub traffic: [u64; 2],
    pub cl: String,
    pub total_requests: u64,
    pub seed: u64,
}

impl From<&SimConfig> for CellConfig {
    fn from(c: &SimConfig) -> Self {
        CellConfig {
            n_controllers: c.n_controllers,
            grid_size: c.grid_size,
            traffic: [c.traffic.lo, c.traffic.hi],
            cl: c.cl.to_string(),
            total_requests: c.total_requests,
            seed: c.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub dir: String,
    pub config: CellConfig,
    pub summary: RunSummary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepIndex {
    pub cells: Vec<IndexEntry>,
    pub aggregates: Aggregates,
}

impl SweepIndex {
    pub fn new(cells: &[CellResult]) -> Self {
        SweepIndex {
            cells: cells
                .iter()
                .map(|c| IndexEntry {
                    dir: cell_dir(c.index, &c.config),
                    config: CellConfig::from(&c.config),
                    summary: c.summary.clone(),
                })
                .collect(),
            aggregates: Aggregates::from_cells(cells),
        }
    }
}

/// Header row then one row per entry; missing values are empty fields.
pub fn write_fig(path: &Path, table: &FigTable) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(&table.columns).map_err(csv_err)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|v| v.map(|x| x.to_string()).unwrap_or_default()))
            .map_err(csv_err)?;
    }
    w.flush()
}

/// Writes `index.json` and `fig3.csv` to `fig6.csv` under `root`. Returns the
/// written paths.
pub fn write_sweep(root: &Path, index: &SweepIndex) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(root)?;
    let mut written = vec![root.join(INDEX_FILE)];
    write_json(&written[0], index)?;
    let a = &index.aggregates;
    for (name, table) in [("fig3", &a.fig3), ("fig4", &a.fig4), ("fig5", &a.fig5), ("fig6", &a.fig6)] {
        let p = root.join(format!("{name}.csv"));
        write_fig(&p, table)?;
        written.push(p);
    }
    Ok(written)
}
