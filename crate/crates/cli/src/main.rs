use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dcpsim::config::{parse_cl, parse_traffic, ConfigFile};
use dcpsim::{cmd_oracle_check, cmd_run, cmd_selftest, cmd_sweep, load_config, CliError, Fault, OracleCheck};
use dcpsim_core::engine::ResolutionStrategy;
use dcpsim_core::sim::{ClMode, CreditMode, SimConfig, SyncTrigger, TrafficRange};

/// Eventually consistent SDN control-plane simulator.
///
/// Exit codes: 0 success, 1 oracle or self-check failure, 2 bad
/// configuration or usage, 3 I/O failure.
#[derive(Debug, Parser)]
#[command(name = "dcpsim", version)]
struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one configuration; writes records.csv and summary.json.
    Run {
        #[command(flatten)]
        sim: SimFlags,
        /// Output directory.
        #[arg(long, default_value = "out/run")]
        out: PathBuf,
    },
    /// Simulate the Cartesian product of the sweep axes; writes one
    /// directory per cell, index.json and fig3.csv to fig6.csv.
    Sweep {
        #[command(flatten)]
        sim: SimFlags,
        /// Grid sizes [default: 5,10,15,20,25].
        #[arg(long, value_delimiter = ',')]
        grids: Option<Vec<u32>>,
        /// Traffic ranges as lo:hi [default: 1:10,1:20,1:30].
        #[arg(long = "traffic-axis", value_delimiter = ',')]
        traffic_axis: Option<Vec<String>>,
        /// Consistency levels [default: 1..11].
        #[arg(long, value_delimiter = ',')]
        cls: Option<Vec<u8>>,
        /// Replica counts [default: 3].
        #[arg(long = "controllers-axis", value_delimiter = ',')]
        controllers_axis: Option<Vec<u16>>,
        /// Run cells on all cores.
        #[arg(long)]
        parallel: bool,
        /// Output directory.
        #[arg(long, default_value = "out/sweep")]
        out: PathBuf,
    },
    /// Run the brute-force reference suites.
    OracleCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Random grids checked against path enumeration.
        #[arg(long, default_value_t = 1000)]
        dijkstra_cases: u64,
        /// Small runs checked against the serialised replay.
        #[arg(long, default_value_t = 20)]
        replay_cases: u64,
        /// Credit operation sequences.
        #[arg(long, default_value_t = 10_000)]
        conservation_sequences: u64,
        /// Version vector triples.
        #[arg(long, default_value_t = 10_000)]
        vv_triples: u64,
        /// Deliberately break one suite to confirm failures are reported.
        #[arg(long, value_enum)]
        inject_fault: Option<FaultArg>,
    },
    /// Quick end-to-end check of the installation.
    Selftest,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum FaultArg {
    Dijkstra,
    Replay,
    Conservation,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum StrategyArg {
    Merge,
    LastWriterWins,
    PriorityById,
    UpdateInvalidation,
}

#[derive(Debug, Args)]
struct SimFlags {
    /// TOML configuration file; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Grid side length [default: 25].
    #[arg(long)]
    grid: Option<u32>,
    /// Number of controller replicas [default: 3].
    #[arg(long)]
    controllers: Option<u16>,
    /// Level 1..11, `adaptive` or `adaptive@<initial>` [default: 11].
    #[arg(long)]
    cl: Option<String>,
    /// Flow bandwidth range in Mbps, lo:hi [default: 1:10].
    #[arg(long)]
    traffic: Option<String>,
    /// Number of flow requests [default: 20000].
    #[arg(long)]
    requests: Option<u64>,
    /// Seed [default: 0].
    #[arg(long)]
    seed: Option<u64>,
    /// Use per-edge bandwidth escrow instead of execution credits.
    #[arg(long)]
    resource_credits: bool,
    /// Synchronise as soon as the first replica exhausts its credits.
    #[arg(long)]
    first_exhausted: bool,
    /// Conflict resolution strategy [default: merge].
    #[arg(long, value_enum)]
    strategy: Option<StrategyArg>,
    /// Cross-check every round against the serialised replay (slow).
    #[arg(long)]
    check_invariants: bool,
}

impl SimFlags {
    fn resolve(&self) -> Result<(ConfigFile, SimConfig), CliError> {
        let file = load_config(self.config.as_deref())?;
        let mut c = file.to_sim_config()?;
        if let Some(v) = self.grid {
            c.grid_size = v;
        }
        if let Some(v) = self.controllers {
            c.n_controllers = v;
        }
        if let Some(v) = &self.cl {
            c.cl = parse_cl(v, None)?;
        }
        if let Some(v) = &self.traffic {
            c.traffic = parse_traffic(v)?;
        }
        if let Some(v) = self.requests {
            c.total_requests = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if self.resource_credits {
            c.mode = CreditMode::ResourceCredit;
        }
        if self.first_exhausted {
            c.trigger = SyncTrigger::FirstExhausted;
        }
        if let Some(s) = self.strategy {
            c.strategy = match s {
                StrategyArg::Merge => ResolutionStrategy::Merge,
                StrategyArg::LastWriterWins => ResolutionStrategy::LastWriterWins,
                StrategyArg::PriorityById => ResolutionStrategy::PriorityById,
                StrategyArg::UpdateInvalidation => ResolutionStrategy::UpdateInvalidation,
            };
        }
        if self.check_invariants {
            c.check_invariants = true;
        }
        if matches!(c.cl, ClMode::Adaptive { .. }) {
            log::info!("adaptive level, starting at {}", c.cl.initial());
        }
        Ok((file, c))
    }
}

fn execute(cli: Cli) -> Result<(), CliError> {
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::Run { sim, out } => {
            let (_, cfg) = sim.resolve()?;
            let s = cmd_run(&cfg, &out)?;
            println!(
                "{} flows, {} scored, {} suboptimal; mean {:?}, p99 {:?}; {} sync rounds -> {}",
                s.stats.flows,
                s.stats.scored,
                s.stats.suboptimal,
                s.stats.mean,
                s.stats.p99,
                s.sync_rounds,
                out.display()
            );
        }
        Command::Sweep {
            sim,
            grids,
            traffic_axis,
            cls,
            controllers_axis,
            parallel,
            out,
        } => {
            let (file, base) = sim.resolve()?;
            let mut axes = file.sweep_axes();
            if let Some(v) = grids {
                axes.grids = v;
            }
            if let Some(v) = traffic_axis {
                axes.traffic = v.iter().map(|t| parse_traffic(t)).collect::<Result<Vec<TrafficRange>, _>>()?;
            }
            if let Some(v) = cls {
                axes.cls = v;
            }
            if let Some(v) = controllers_axis {
                axes.controllers = v;
            }
            let index = cmd_sweep(&base, &axes, &out, parallel)?;
            println!("{} cells -> {}", index.cells.len(), out.display());
        }
        Command::OracleCheck {
            seed,
            dijkstra_cases,
            replay_cases,
            conservation_sequences,
            vv_triples,
            inject_fault,
        } => {
            let check = OracleCheck {
                seed,
                dijkstra_cases,
                replay_cases,
                conservation_sequences,
                vv_triples,
                fault: inject_fault.map(|f| match f {
                    FaultArg::Dijkstra => Fault::Dijkstra,
                    FaultArg::Replay => Fault::Replay,
                    FaultArg::Conservation => Fault::Conservation,
                }),
            };
            cmd_oracle_check(&check, &mut stdout)?;
        }
        Command::Selftest => cmd_selftest(&std::env::temp_dir(), &mut stdout)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dcpsim: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
