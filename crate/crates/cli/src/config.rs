//! TOML configuration files.
//!
//! Every key is optional; missing keys keep the simulator defaults. Per-level
//! tables are arrays of eleven entries, index 0 being `CL_1`.

use std::collections::BTreeMap;
use std::path::Path;

use dcpsim_core::engine::ResolutionStrategy;
use dcpsim_core::level::{ClPolicy, ConsistencyLevel, LevelError, ThresholdMap};
use dcpsim_core::net::Neighborhood;
use dcpsim_core::sim::sweep::SweepAxes;
use dcpsim_core::sim::{ClMode, ConfigError, CreditMode, SimConfig, SyncTrigger, ThresholdSetting, TrafficRange};
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("cannot parse {path}: {source}")]
    Parse { path: String, source: toml::de::Error },
    #[error("`{key}` needs one value per level (11), got {got}")]
    LevelTable { key: &'static str, got: usize },
    #[error("invalid `cl`: {0}")]
    Level(String),
    #[error("thresholds mode `explicit` needs both `min` and `max`")]
    IncompleteThresholds,
    #[error("invalid traffic range `{0}`, expected lo:hi")]
    Traffic(String),
    #[error(transparent)]
    Levels(#[from] LevelError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub policy: PolicySection,
    #[serde(default)]
    pub thresholds: ThresholdSection,
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    pub controllers: Option<u16>,
    pub grid: Option<u32>,
    pub neighborhood: Option<Neighborhood>,
    pub traffic: Option<[u64; 2]>,
    /// A level index, or `"adaptive"`.
    pub cl: Option<toml::Value>,
    /// Starting level in adaptive mode.
    pub initial_cl: Option<u8>,
    pub requests: Option<u64>,
    pub seed: Option<u64>,
    pub mode: Option<CreditMode>,
    pub trigger: Option<SyncTrigger>,
    pub strategy: Option<ResolutionStrategy>,
    pub observation_window: Option<usize>,
    pub conflict_weight: Option<f64>,
    pub subopt_weight: Option<f64>,
    pub propagation_delay_ms: Option<u64>,
    pub service_time_ms: Option<u64>,
    pub check_invariants: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicySection {
    pub credits: Option<Vec<u64>>,
    pub sync_periods_ms: Option<Vec<u64>>,
    pub resource_credits_kbps: Option<Vec<u64>>,
}

#[derive(Debug, Default, Deserialize, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdMode {
    #[default]
    Derived,
    Disabled,
    Explicit,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdSection {
    #[serde(default)]
    pub mode: ThresholdMode,
    pub min: Option<Vec<f64>>,
    pub max: Option<Vec<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub grids: Option<Vec<u32>>,
    pub traffic: Option<Vec<[u64; 2]>>,
    pub cls: Option<Vec<u8>>,
    pub controllers: Option<Vec<u16>>,
}

fn per_level<T: Copy>(key: &'static str, v: &[T]) -> Result<BTreeMap<ConsistencyLevel, T>, LoadError> {
    if v.len() != 11 {
        return Err(LoadError::LevelTable { key, got: v.len() });
    }
    Ok(ConsistencyLevel::all().zip(v.iter().copied()).collect())
}

/// Parses `11`, `CL_11` or `adaptive` / `adaptive@6`.
pub fn parse_cl(s: &str, initial: Option<u8>) -> Result<ClMode, LoadError> {
    let level = |x: &str| {
        x.trim_start_matches("CL_")
            .parse::<u8>()
            .map_err(|_| LoadError::Level(s.to_string()))
            .and_then(|i| ConsistencyLevel::new(i).map_err(|e| LoadError::Level(e.to_string())))
    };
    if let Some(rest) = s.strip_prefix("adaptive") {
        let initial = match rest.strip_prefix('@') {
            Some(i) => level(i)?,
            None if rest.is_empty() => match initial {
                Some(i) => ConsistencyLevel::new(i).map_err(|e| LoadError::Level(e.to_string()))?,
                None => ConsistencyLevel::MOST_RELAXED,
            },
            None => return Err(LoadError::Level(s.to_string())),
        };
        return Ok(ClMode::Adaptive { initial });
    }
    Ok(ClMode::Fixed(level(s)?))
}

/// Parses `lo:hi`.
pub fn parse_traffic(s: &str) -> Result<TrafficRange, LoadError> {
    let bad = || LoadError::Traffic(s.to_string());
    let (lo, hi) = s.split_once(':').ok_or_else(bad)?;
    Ok(TrafficRange::new(
        lo.trim().parse().map_err(|_| bad())?,
        hi.trim().parse().map_err(|_| bad())?,
    ))
}

impl ConfigFile {
    pub fn load(path: &Path) -> Result<Self, LoadError> {
        let text = std::fs::read_to_string(path).map_err(|source| LoadError::Read {
            path: path.display().to_string(),
            source,
        })?;
        toml::from_str(&text).map_err(|source| LoadError::Parse {
            path: path.display().to_string(),
            source,
        })
    }

    /// Applies the file on top of the defaults. The result is not yet
    /// validated; command-line overrides come first.
    pub fn to_sim_config(&self) -> Result<SimConfig, LoadError> {
        let mut c = SimConfig::default();
        let r = &self.run;
        macro_rules! set {
            ($field:ident, $value:expr) => {
                if let Some(v) = $value {
                    c.$field = v;
                }
            };
        }
        set!(n_controllers, r.controllers);
        set!(grid_size, r.grid);
        set!(neighborhood, r.neighborhood);
        set!(traffic, r.traffic.map(|[lo, hi]| TrafficRange::new(lo, hi)));
        set!(total_requests, r.requests);
        set!(seed, r.seed);
        set!(mode, r.mode);
        set!(trigger, r.trigger);
        set!(strategy, r.strategy);
        set!(observation_window, r.observation_window);
        set!(conflict_weight, r.conflict_weight);
        set!(subopt_weight, r.subopt_weight);
        set!(propagation_delay, r.propagation_delay_ms);
        set!(service_time, r.service_time_ms);
        set!(check_invariants, r.check_invariants);
        match &r.cl {
            None => {
                if let Some(i) = r.initial_cl {
                    c.cl = ClMode::Fixed(ConsistencyLevel::new(i)?);
                }
            }
            Some(toml::Value::Integer(i)) => {
                let i = u8::try_from(*i).map_err(|_| LoadError::Level(i.to_string()))?;
                c.cl = ClMode::Fixed(ConsistencyLevel::new(i)?);
            }
            Some(toml::Value::String(s)) => c.cl = parse_cl(s, r.initial_cl)?,
            Some(other) => return Err(LoadError::Level(other.to_string())),
        }

        let p = &self.policy;
        let mut policy = ClPolicy::default();
        if let Some(v) = &p.credits {
            policy = policy.with_credits(per_level("policy.credits", v)?);
        }
        if let Some(v) = &p.sync_periods_ms {
            policy = policy.with_sync_periods(per_level("policy.sync_periods_ms", v)?);
        }
        if let Some(v) = &p.resource_credits_kbps {
            policy = policy.with_resource_credits(Some(per_level("policy.resource_credits_kbps", v)?));
        }
        policy.validate()?;
        c.policy = policy;

        let t = &self.thresholds;
        c.thresholds = match t.mode {
            ThresholdMode::Derived => ThresholdSetting::Derived,
            ThresholdMode::Disabled => ThresholdSetting::Disabled,
            ThresholdMode::Explicit => {
                let (Some(min), Some(max)) = (&t.min, &t.max) else {
                    return Err(LoadError::IncompleteThresholds);
                };
                ThresholdSetting::Explicit(ThresholdMap::new(
                    per_level("thresholds.min", min)?,
                    per_level("thresholds.max", max)?,
                )?)
            }
        };
        Ok(c)
    }

    pub fn sweep_axes(&self) -> SweepAxes {
        let mut axes = SweepAxes::default();
        if let Some(s) = &self.sweep {
            if let Some(v) = &s.grids {
                axes.grids = v.clone();
            }
            if let Some(v) = &s.traffic {
                axes.traffic = v.iter().map(|[lo, hi]| TrafficRange::new(*lo, *hi)).collect();
            }
            if let Some(v) = &s.cls {
                axes.cls = v.clone();
            }
            if let Some(v) = &s.controllers {
                axes.controllers = v.clone();
            }
        }
        axes
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<SimConfig, LoadError> {
        toml::from_str::<ConfigFile>(s).unwrap().to_sim_config()
    }

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(parse("").unwrap(), SimConfig::default());
    }

    #[test]
    fn full_file() {
        let c = parse(
            r#"
            [run]
            controllers = 6
            grid = 10
            traffic = [1, 20]
            cl = "adaptive"
            initial_cl = 4
            requests = 5000
            seed = 9
            mode = "resource-credit"
            trigger = "first-exhausted"
            strategy = "last-writer-wins"

            [policy]
            sync_periods_ms = [10, 20, 30, 40, 50, 60, 70, 80, 90, 100, 110]

            [thresholds]
            mode = "explicit"
            min = [0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0]
            max = [1, 1, 1, 1, 1, 1, 1, 1, 1, 1, 1]
            "#,
        )
        .unwrap();
        assert_eq!(c.n_controllers, 6);
        assert_eq!(c.traffic, TrafficRange::new(1, 20));
        assert_eq!(c.cl, ClMode::Adaptive { initial: ConsistencyLevel::new(4).unwrap() });
        assert_eq!(c.mode, CreditMode::ResourceCredit);
        assert_eq!(c.trigger, SyncTrigger::FirstExhausted);
        assert_eq!(c.strategy, ResolutionStrategy::LastWriterWins);
        assert_eq!(c.policy.sync_period(ConsistencyLevel::new(3).unwrap()), 30);
        assert_eq!(c.policy.credits(ConsistencyLevel::new(3).unwrap()), 5);
        assert!(matches!(c.thresholds, ThresholdSetting::Explicit(_)));
    }

    #[test]
    fn fixed_level_as_integer() {
        let c = parse("[run]\ncl = 8").unwrap();
        assert_eq!(c.cl, ClMode::Fixed(ConsistencyLevel::new(8).unwrap()));
        assert!(parse("[run]\ncl = 12").is_err());
    }

    #[test]
    fn short_level_table_is_rejected() {
        let e = parse("[policy]\ncredits = [1, 2, 3]").unwrap_err();
        assert!(matches!(e, LoadError::LevelTable { got: 3, .. }), "{e}");
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<ConfigFile>("[run]\ngrid_size = 5").is_err());
    }

    #[test]
    fn cli_level_syntax() {
        assert_eq!(parse_cl("11", None).unwrap(), ClMode::Fixed(ConsistencyLevel::new(11).unwrap()));
        assert_eq!(parse_cl("CL_3", None).unwrap(), ClMode::Fixed(ConsistencyLevel::new(3).unwrap()));
        assert_eq!(
            parse_cl("adaptive@5", None).unwrap(),
            ClMode::Adaptive { initial: ConsistencyLevel::new(5).unwrap() }
        );
        assert!(parse_cl("adaptivex", None).is_err());
        assert!(parse_cl("0", None).is_err());
        assert_eq!(parse_traffic("1:30").unwrap(), TrafficRange::new(1, 30));
        assert!(parse_traffic("1-30").is_err());
    }

    #[test]
    fn sweep_axes() {
        let f: ConfigFile = toml::from_str("[sweep]\ngrids = [5]\ntraffic = [[1, 10]]\ncls = [1, 11]").unwrap();
        let a = f.sweep_axes();
        assert_eq!(a.grids, vec![5]);
        assert_eq!(a.cls, vec![1, 11]);
        assert_eq!(a.controllers, vec![3]);
    }
}
