//! Command implementations behind the `dcpsim` binary.

pub mod config;
pub mod report;

use std::io;
use std::path::{Path, PathBuf};

use dcpsim_core::selfcheck::{self, SuiteReport};
use dcpsim_core::sim::sweep::{run_sweep, SweepAxes, SweepError};
use dcpsim_core::sim::{run, SimConfig, SimError};
use thiserror::Error;

use crate::config::{ConfigFile, LoadError};
use crate::report::SweepIndex;

pub const EXIT_OK: u8 = 0;
pub const EXIT_ORACLE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_IO: u8 = 3;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
    #[error("{0}")]
    Oracle(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Io(_) => EXIT_IO,
            CliError::Oracle(_) => EXIT_ORACLE,
        }
    }
}

impl From<LoadError> for CliError {
    fn from(e: LoadError) -> Self {
        match e {
            LoadError::Read { source, .. } if source.kind() != io::ErrorKind::NotFound => {
                CliError::Io(source)
            }
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(e) => CliError::Config(e.to_string()),
            other => CliError::Oracle(other.to_string()),
        }
    }
}

impl From<SweepError> for CliError {
    fn from(e: SweepError) -> Self {
        match e {
            SweepError::EmptyAxis(_) | SweepError::Level(_) => CliError::Config(e.to_string()),
            SweepError::Cell { source, .. } => source.into(),
            SweepError::Sink { source, .. } => CliError::Io(source),
        }
    }
}

fn with_path(e: io::Error, path: &Path) -> io::Error {
    io::Error::new(e.kind(), format!("{}: {e}", path.display()))
}

/// The file at `path`, or an empty configuration.
pub fn load_config(path: Option<&Path>) -> Result<ConfigFile, CliError> {
    Ok(match path {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    })
}

/// Runs one configuration and writes `records.csv` and `summary.json` to
/// `out`.
pub fn cmd_run(cfg: &SimConfig, out: &Path) -> Result<dcpsim_core::sim::RunSummary, CliError> {
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    let output = run(cfg)?;
    report::write_run(out, &output).map_err(|e| with_path(e, out))?;
    Ok(output.summary)
}

/// Runs every cell of the sweep, writing each cell's run directory as it
/// finishes, then the index and figure tables.
pub fn cmd_sweep(base: &SimConfig, axes: &SweepAxes, out: &Path, parallel: bool) -> Result<SweepIndex, CliError> {
    let cells = axes.cells(base)?;
    for c in &cells {
        c.validate().map_err(|e| CliError::Config(e.to_string()))?;
    }
    std::fs::create_dir_all(out).map_err(|e| with_path(e, out))?;
    let results = run_sweep(cells, parallel, |i, cfg, output| {
        report::write_run(&out.join(report::cell_dir(i, cfg)), output)
    })?;
    let index = SweepIndex::new(&results);
    report::write_sweep(out, &index).map_err(|e| with_path(e, out))?;
    Ok(index)
}

/// Which suite `oracle-check` should sabotage, to prove it reports failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    Dijkstra,
    Replay,
    Conservation,
}

#[derive(Debug, Clone, Copy)]
pub struct OracleCheck {
    pub seed: u64,
    pub dijkstra_cases: u64,
    pub replay_cases: u64,
    pub conservation_sequences: u64,
    pub vv_triples: u64,
    pub fault: Option<Fault>,
}

impl Default for OracleCheck {
    fn default() -> Self {
        OracleCheck {
            seed: 0,
            dijkstra_cases: 1000,
            replay_cases: 20,
            conservation_sequences: 10_000,
            vv_triples: 10_000,
            fault: None,
        }
    }
}

impl OracleCheck {
    pub fn run(&self) -> Vec<SuiteReport> {
        let s = self.seed;
        vec![
            selfcheck::dijkstra_enumeration(self.dijkstra_cases, s, self.fault == Some(Fault::Dijkstra)),
            selfcheck::single_controller_replay(
                self.replay_cases.div_ceil(4),
                2000,
                s,
                self.fault == Some(Fault::Replay),
            ),
            selfcheck::replay_equivalence(self.replay_cases, s),
            selfcheck::credit_conservation(self.conservation_sequences, s, self.fault == Some(Fault::Conservation)),
            selfcheck::version_vector_laws(self.vv_triples, s),
        ]
    }
}

/// Prints one line per suite; an error names the first failing suite.
pub fn cmd_oracle_check(check: &OracleCheck, out: &mut impl io::Write) -> Result<(), CliError> {
    let mut first_failure = None;
    for r in check.run() {
        writeln!(out, "{r}")?;
        if !r.ok() && first_failure.is_none() {
            first_failure = Some(r.to_string());
        }
    }
    match first_failure {
        None => Ok(()),
        Some(f) => Err(CliError::Oracle(f)),
    }
}

/// A quick end-to-end pass: small oracle suites, then a run written to and
/// re-read from `scratch`.
pub fn cmd_selftest(scratch: &Path, out: &mut impl io::Write) -> Result<(), CliError> {
    let check = OracleCheck {
        dijkstra_cases: 200,
        replay_cases: 4,
        conservation_sequences: 1000,
        vv_triples: 1000,
        ..OracleCheck::default()
    };
    cmd_oracle_check(&check, out)?;
    let cfg = SimConfig {
        grid_size: 6,
        total_requests: 1500,
        ..SimConfig::default()
    };
    let dir: PathBuf = scratch.join(format!("dcpsim-selftest-{}", std::process::id()));
    cmd_run(&cfg, &dir)?;
    let ok = report::verify_run(&dir)?;
    std::fs::remove_dir_all(&dir)?;
    if !ok {
        return Err(CliError::Oracle("records.csv does not reproduce summary.json".to_string()));
    }
    writeln!(out, "report-round-trip: 1/1 ok")?;
    Ok(())
}
