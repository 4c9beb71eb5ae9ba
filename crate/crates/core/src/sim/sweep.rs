//! Cartesian sweeps and the figure aggregates computed over them.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::stats::{nearest_rank, spearman, Correlation};
use super::{run, ClMode, RunOutput, RunSummary, SimConfig, SimError, TrafficRange};
use crate::level::{ConsistencyLevel, LevelError};

/// Default traffic axis, the lower and upper halves and the full default
/// range.
pub const DEFAULT_TRAFFIC: [TrafficRange; 3] = [
    TrafficRange { lo: 1, hi: 10 },
    TrafficRange { lo: 1, hi: 20 },
    TrafficRange { lo: 1, hi: 30 },
];
pub const DEFAULT_GRIDS: [u32; 5] = [5, 10, 15, 20, 25];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SweepAxes {
    pub grids: Vec<u32>,
    pub traffic: Vec<TrafficRange>,
    pub cls: Vec<u8>,
    pub controllers: Vec<u16>,
}

impl Default for SweepAxes {
    fn default() -> Self {
        SweepAxes {
            grids: DEFAULT_GRIDS.to_vec(),
            traffic: DEFAULT_TRAFFIC.to_vec(),
            cls: (1..=11).collect(),
            controllers: vec![3],
        }
    }
}

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("sweep axis `{0}` is empty")]
    EmptyAxis(&'static str),
    #[error(transparent)]
    Level(#[from] LevelError),
    #[error("cell {index}: {source}")]
    Cell { index: usize, source: SimError },
    #[error("cell {index}: {source}")]
    Sink { index: usize, source: std::io::Error },
}

impl SweepAxes {
    /// Cells in axis order: grid, traffic, level, replicas (innermost).
    pub fn cells(&self, base: &SimConfig) -> Result<Vec<SimConfig>, SweepError> {
        for (name, empty) in [
            ("grids", self.grids.is_empty()),
            ("traffic", self.traffic.is_empty()),
            ("cls", self.cls.is_empty()),
            ("controllers", self.controllers.is_empty()),
        ] {
            if empty {
                return Err(SweepError::EmptyAxis(name));
            }
        }
        let mut out = Vec::new();
        for &g in &self.grids {
            for &t in &self.traffic {
                for &cl in &self.cls {
                    let cl = ConsistencyLevel::new(cl)?;
                    for &n in &self.controllers {
                        out.push(SimConfig {
                            grid_size: g,
                            traffic: t,
                            cl: ClMode::Fixed(cl),
                            n_controllers: n,
                            ..base.clone()
                        });
                    }
                }
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct CellResult {
    pub index: usize,
    pub config: SimConfig,
    pub summary: RunSummary,
    /// `1 - d_subopt` of every scored record, in record order.
    pub values: Vec<f64>,
}

impl CellResult {
    fn from_output(index: usize, config: SimConfig, out: &RunOutput) -> Self {
        CellResult {
            index,
            config,
            summary: out.summary.clone(),
            values: out.records.iter().filter_map(|r| r.suboptimality()).collect(),
        }
    }

    pub fn cl(&self) -> u8 {
        self.config.cl.initial().index()
    }
}

/// Runs every cell. `sink` sees each full run output (e.g. to write its
/// record file) before the records are dropped.
pub fn run_sweep<F>(cells: Vec<SimConfig>, parallel: bool, sink: F) -> Result<Vec<CellResult>, SweepError>
where
    F: Fn(usize, &SimConfig, &RunOutput) -> std::io::Result<()> + Sync,
{
    let one = |(index, cfg): (usize, SimConfig)| -> Result<CellResult, SweepError> {
        let out = run(&cfg).map_err(|source| SweepError::Cell { index, source })?;
        sink(index, &cfg, &out).map_err(|source| SweepError::Sink { index, source })?;
        log::info!(
            "cell {index}: n={} grid={} traffic={} cl={} mean={:?}",
            cfg.n_controllers,
            cfg.grid_size,
            cfg.traffic,
            cfg.cl,
            out.summary.stats.mean
        );
        Ok(CellResult::from_output(index, cfg, &out))
    };
    if parallel {
        use rayon::prelude::*;
        cells.into_par_iter().enumerate().map(one).collect()
    } else {
        cells.into_iter().enumerate().map(one).collect()
    }
}

/// A figure table: an x column followed by one column per series. Missing
/// combinations are `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigTable {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Option<f64>>>,
}

fn pooled<'a>(cells: impl Iterator<Item = &'a CellResult>) -> Vec<f64> {
    let mut v: Vec<f64> = cells.flat_map(|c| c.values.iter().copied()).collect();
    v.sort_by(f64::total_cmp);
    v
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn pct(x: Option<f64>) -> Option<f64> {
    x.map(|v| 100.0 * v)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellCorrelations {
    pub cl: Option<Correlation>,
    pub grid: Option<Correlation>,
    pub traffic_hi: Option<Correlation>,
    pub n_controllers: Option<Correlation>,
}

/// Everything the figure tables and the sweep index report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregates {
    /// p99 (%) per level and grid size, pooled over the other axes.
    pub fig3: FigTable,
    /// p99 (%) per level and traffic range on the largest grid.
    pub fig4: FigTable,
    /// CDF of the suboptimality (%) per level, pooled over all cells.
    pub fig5: FigTable,
    /// Mean (%) per level and replica count, pooled over the other axes.
    pub fig6: FigTable,
    pub fraction_suboptimal_by_cl: BTreeMap<u8, f64>,
    pub mean_by_cl: BTreeMap<u8, f64>,
    pub mean_by_controllers: BTreeMap<u16, f64>,
    pub correlations: CellCorrelations,
}

/// CDF sample points for fig5, in percent.
pub fn fig5_points() -> Vec<f64> {
    (0..=200).map(|i| i as f64 * 0.5).collect()
}

fn sorted_unique<T: Ord + Copy>(it: impl Iterator<Item = T>) -> Vec<T> {
    let mut v: Vec<T> = it.collect();
    v.sort_unstable();
    v.dedup();
    v
}

impl Aggregates {
    pub fn from_cells(cells: &[CellResult]) -> Self {
        let cls = sorted_unique(cells.iter().map(CellResult::cl));
        let grids = sorted_unique(cells.iter().map(|c| c.config.grid_size));
        let traffics = sorted_unique(cells.iter().map(|c| (c.config.traffic.lo, c.config.traffic.hi)));
        let ns = sorted_unique(cells.iter().map(|c| c.config.n_controllers));
        let largest = grids.last().copied();

        let table = |series: Vec<String>, value: &dyn Fn(u8, usize) -> Option<f64>| FigTable {
            columns: std::iter::once("cl".to_string()).chain(series.iter().cloned()).collect(),
            rows: cls
                .iter()
                .map(|&cl| {
                    std::iter::once(Some(cl as f64))
                        .chain((0..series.len()).map(|s| value(cl, s)))
                        .collect()
                })
                .collect(),
        };

        let fig3 = table(grids.iter().map(|g| format!("{g}x{g}")).collect(), &|cl, s| {
            let v = pooled(cells.iter().filter(|c| c.cl() == cl && c.config.grid_size == grids[s]));
            pct(nearest_rank(&v, 99.0))
        });
        let fig4 = table(traffics.iter().map(|(lo, hi)| format!("{lo}-{hi}")).collect(), &|cl, s| {
            let v = pooled(cells.iter().filter(|c| {
                c.cl() == cl
                    && Some(c.config.grid_size) == largest
                    && (c.config.traffic.lo, c.config.traffic.hi) == traffics[s]
            }));
            pct(nearest_rank(&v, 99.0))
        });
        let fig6 = table(ns.iter().map(|n| format!("n{n}")).collect(), &|cl, s| {
            let v = pooled(cells.iter().filter(|c| c.cl() == cl && c.config.n_controllers == ns[s]));
            pct(mean(&v))
        });

        let by_cl: Vec<Vec<f64>> = cls.iter().map(|&cl| pooled(cells.iter().filter(|c| c.cl() == cl))).collect();
        let fig5 = FigTable {
            columns: std::iter::once("suboptimality_pct".to_string())
                .chain(cls.iter().map(|cl| format!("cl{cl}")))
                .collect(),
            rows: fig5_points()
                .into_iter()
                .map(|x| {
                    std::iter::once(Some(x))
                        .chain(by_cl.iter().map(|v| {
                            (!v.is_empty()).then(|| {
                                // values are fractions; compare in percent
                                let below = v.partition_point(|s| 100.0 * s <= x);
                                below as f64 / v.len() as f64
                            })
                        }))
                        .collect()
                })
                .collect(),
        };

        let mut fraction_suboptimal_by_cl = BTreeMap::new();
        let mut mean_by_cl = BTreeMap::new();
        for (cl, v) in cls.iter().zip(&by_cl) {
            if !v.is_empty() {
                let subopt = v.iter().filter(|s| **s > 0.0).count();
                fraction_suboptimal_by_cl.insert(*cl, subopt as f64 / v.len() as f64);
                mean_by_cl.insert(*cl, mean(v).unwrap_or(0.0));
            }
        }
        let mut mean_by_controllers = BTreeMap::new();
        for &n in &ns {
            let v = pooled(cells.iter().filter(|c| c.config.n_controllers == n));
            if let Some(m) = mean(&v) {
                mean_by_controllers.insert(n, m);
            }
        }

        let scored: Vec<&CellResult> = cells.iter().filter(|c| c.summary.stats.mean.is_some()).collect();
        let y: Vec<f64> = scored.iter().map(|c| c.summary.stats.mean.unwrap_or(0.0)).collect();
        let corr = |x: Vec<f64>| spearman(&x, &y);
        let correlations = CellCorrelations {
            cl: corr(scored.iter().map(|c| c.cl() as f64).collect()),
            grid: corr(scored.iter().map(|c| c.config.grid_size as f64).collect()),
            traffic_hi: corr(scored.iter().map(|c| c.config.traffic.hi as f64).collect()),
            n_controllers: corr(scored.iter().map(|c| c.config.n_controllers as f64).collect()),
        };

        Aggregates {
            fig3,
            fig4,
            fig5,
            fig6,
            fraction_suboptimal_by_cl,
            mean_by_cl,
            mean_by_controllers,
            correlations,
        }
    }
}
