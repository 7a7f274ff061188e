//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Lists are comma separated.
//! Relative paths are resolved against the directory holding the config file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::error::{invalid, Error, Result};
use crate::plearn::PolicyClass;

pub const DEFAULT_ALPHA_GRID: [f64; 8] = [0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0, 2.0];
pub const DEFAULT_BEHAVIOR_EPSILON: f64 = 0.3;

/// V-learning variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dynamics {
    /// Plug-in objective on observed next states.
    Det,
    /// Model-based objective with the tabular MLE transition estimate.
    Stoch,
}

/// Dataset size of a cell. `Exhaustive` replaces sampling by the exact `mu`-weighted support.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum SampleSize {
    Exhaustive,
    Finite(usize),
}

impl SampleSize {
    /// `0` stands for the exhaustive mode.
    pub fn as_count(self) -> usize {
        match self {
            SampleSize::Exhaustive => 0,
            SampleSize::Finite(n) => n,
        }
    }

    pub fn from_count(n: usize) -> Self {
        if n == 0 {
            SampleSize::Exhaustive
        } else {
            SampleSize::Finite(n)
        }
    }
}

/// How `alpha` is chosen per cell.
#[derive(Debug, Clone, PartialEq)]
pub enum AlphaSchedule {
    /// Every value of the grid at every `N`.
    Grid(Vec<f64>),
    /// `alpha = scale * N^(-1/12)`, one value per `N`.
    Theory { scale: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub mdp_file: PathBuf,
    pub alpha: AlphaSchedule,
    pub n_grid: Vec<SampleSize>,
    pub seeds: Vec<u64>,
    pub dynamics: Dynamics,
    pub policy_class: PolicyClass,
    pub split: bool,
    pub behavior_epsilon: f64,
    pub behavior_file: Option<PathBuf>,
}

impl ExperimentConfig {
    /// Config with the default alpha grid, det dynamics and sample splitting.
    pub fn new(mdp_file: PathBuf, n_grid: Vec<SampleSize>, seeds: Vec<u64>) -> Result<Self> {
        let cfg = Self {
            mdp_file,
            alpha: AlphaSchedule::Grid(DEFAULT_ALPHA_GRID.to_vec()),
            n_grid,
            seeds,
            dynamics: Dynamics::Det,
            policy_class: PolicyClass::default(),
            split: true,
            behavior_epsilon: DEFAULT_BEHAVIOR_EPSILON,
            behavior_file: None,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return invalid("seeds must not be empty");
        }
        if self.n_grid.is_empty() {
            return invalid("n_grid must not be empty");
        }
        match &self.alpha {
            AlphaSchedule::Grid(grid) => {
                if grid.is_empty() {
                    return invalid("alpha_grid must not be empty");
                }
                if grid.iter().any(|a| !(a.is_finite() && *a > 0.0)) {
                    return invalid("alpha_grid entries must be positive");
                }
            }
            AlphaSchedule::Theory { scale } => {
                if !(scale.is_finite() && *scale > 0.0) {
                    return invalid("alpha_scale must be positive");
                }
                if self.n_grid.contains(&SampleSize::Exhaustive) {
                    return invalid("the theory alpha schedule needs finite sample sizes");
                }
            }
        }
        if self.split && self.n_grid.contains(&SampleSize::Finite(1)) {
            return invalid("sample splitting needs at least two records");
        }
        if !(self.behavior_epsilon > 0.0 && self.behavior_epsilon <= 1.0) {
            return invalid("behavior_epsilon must lie in (0, 1]");
        }
        Ok(())
    }

    /// Alpha values used at sample size `n`.
    pub fn alphas_for(&self, n: SampleSize) -> Vec<f64> {
        match &self.alpha {
            AlphaSchedule::Grid(grid) => grid.clone(),
            AlphaSchedule::Theory { scale } => vec![scale * (n.as_count() as f64).powf(-1.0 / 12.0)],
        }
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return invalid(format!("line {}: expected key = value", lineno + 1));
            };
            let k = k.trim().to_string();
            if kv.insert(k.clone(), v.trim().to_string()).is_some() {
                return invalid(format!("duplicate key {k}"));
            }
        }
        let mut take = |k: &str| kv.remove(k);

        let resolve = |p: String| -> PathBuf {
            let p = PathBuf::from(p);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        let mdp_file = resolve(take("mdp_file").ok_or_else(|| Error::InvalidInput("mdp_file is required".into()))?);
        let schedule = take("alpha_schedule").unwrap_or_else(|| "grid".into());
        let grid = take("alpha_grid").map(|v| parse_list::<f64>(&v, "alpha_grid")).transpose()?;
        let scale = take("alpha_scale").map(|v| parse_one::<f64>(&v, "alpha_scale")).transpose()?;
        let alpha = match schedule.as_str() {
            "grid" => AlphaSchedule::Grid(grid.unwrap_or_else(|| DEFAULT_ALPHA_GRID.to_vec())),
            "theory" => AlphaSchedule::Theory { scale: scale.unwrap_or(1.0) },
            other => return invalid(format!("unknown alpha_schedule {other}")),
        };
        let n_grid = take("n_grid")
            .ok_or_else(|| Error::InvalidInput("n_grid is required".into()))?
            .split(',')
            .map(|t| match t.trim() {
                "exhaustive" => Ok(SampleSize::Exhaustive),
                t => match t.parse::<usize>() {
                    Ok(n) if n > 0 => Ok(SampleSize::Finite(n)),
                    _ => invalid(format!("bad n_grid entry {t:?}")),
                },
            })
            .collect::<Result<Vec<_>>>()?;
        let seeds = match take("seeds") {
            Some(v) if v.trim().is_empty() => Vec::new(),
            Some(v) => parse_list::<u64>(&v, "seeds")?,
            None => return invalid("seeds is required"),
        };
        let dynamics = match take("dynamics").as_deref().unwrap_or("det") {
            "det" => Dynamics::Det,
            "stoch" => Dynamics::Stoch,
            other => return invalid(format!("unknown dynamics {other}")),
        };
        let policy_class = match take("epsilon_floor") {
            Some(v) => PolicyClass::new(parse_one(&v, "epsilon_floor")?)?,
            None => PolicyClass::default(),
        };
        let split = match take("split").as_deref().unwrap_or("true") {
            "true" => true,
            "false" => false,
            other => return invalid(format!("split must be true or false, got {other}")),
        };
        let behavior_epsilon = take("behavior_epsilon")
            .map(|v| parse_one(&v, "behavior_epsilon"))
            .transpose()?
            .unwrap_or(DEFAULT_BEHAVIOR_EPSILON);
        let behavior_file = take("behavior_file").map(resolve);
        if let Some(k) = kv.keys().next() {
            return invalid(format!("unknown config key {k}"));
        }
        let cfg = Self { mdp_file, alpha, n_grid, seeds, dynamics, policy_class, split, behavior_epsilon, behavior_file };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_one<T: std::str::FromStr>(v: &str, key: &str) -> Result<T> {
    v.trim().parse().map_err(|_| Error::InvalidInput(format!("bad value {v:?} for {key}")))
}

fn parse_list<T: std::str::FromStr>(v: &str, key: &str) -> Result<Vec<T>> {
    v.split(',').map(|t| parse_one(t, key)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_paths() {
        let cfg = ExperimentConfig::parse("mdp_file = m.json\nn_grid = 100, exhaustive\nseeds = 1,2\n", Path::new("/x")).unwrap();
        assert_eq!(cfg.mdp_file, PathBuf::from("/x/m.json"));
        assert_eq!(cfg.alpha, AlphaSchedule::Grid(DEFAULT_ALPHA_GRID.to_vec()));
        assert_eq!(cfg.n_grid, vec![SampleSize::Finite(100), SampleSize::Exhaustive]);
        assert!(cfg.split);
    }

    #[test]
    fn empty_seeds_rejected() {
        let err = ExperimentConfig::parse("mdp_file = m.json\nn_grid = 100\nseeds =\n", Path::new("."));
        assert!(matches!(err, Err(Error::InvalidInput(_))));
    }

    #[test]
    fn unknown_key_rejected() {
        assert!(ExperimentConfig::parse("mdp_file = m\nn_grid = 4\nseeds = 1\ncolour = red\n", Path::new(".")).is_err());
    }

    #[test]
    fn theory_schedule() {
        let cfg = ExperimentConfig::parse(
            "mdp_file = m\nn_grid = 4096\nseeds = 1\nalpha_schedule = theory\nalpha_scale = 2\n",
            Path::new("."),
        )
        .unwrap();
        assert!((cfg.alphas_for(SampleSize::Finite(4096))[0] - 1.0).abs() < 1e-15);
    }
}
