//! Run and experiment configuration, stored as TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::aggregator::{StalenessProfile, WeightingMode};
use crate::channel::{NoiseFamily, NoiseModel};
use crate::dataset::GenParams;
use crate::error::{Result, SimError};
use crate::perceptron::DEFAULT_EPOCHS;
use crate::scheduler::{PolicyKind, SchedulePolicy};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StalenessConfig {
    pub tau_dl: usize,
    pub tau_ul: usize,
    pub profile: StalenessProfile,
}

impl StalenessConfig {
    pub fn tau(&self) -> usize {
        self.tau_dl + self.tau_ul
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// Number of server rounds `A`.
    pub horizon: u64,
    #[serde(default = "default_replicas")]
    pub replicas: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub weighting: WeightingMode,
    /// Horizons at which `K_A` is summarized. Defaults to `A/16, A/8, ..., A`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoints: Option<Vec<u64>>,
    /// Stop a noiseless run once `tau + 1` consecutive iterates are correct.
    #[serde(default)]
    pub stop_when_stable: bool,
    /// Load the dataset from this file instead of generating it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset_path: Option<PathBuf>,
    pub dataset: GenParams,
    pub staleness: StalenessConfig,
    pub schedule: SchedulePolicy,
    #[serde(default)]
    pub noise: NoiseModel,
}

fn default_seed() -> u64 {
    1
}
fn default_replicas() -> usize {
    1
}
fn default_epochs() -> usize {
    DEFAULT_EPOCHS
}

impl RunConfig {
    /// A small noiseless baseline: D=10, m=8, 25 examples each, tau=2.
    pub fn baseline() -> Self {
        Self {
            seed: 1,
            horizon: 500,
            replicas: 1,
            epochs: DEFAULT_EPOCHS,
            weighting: WeightingMode::Uniform,
            checkpoints: None,
            stop_when_stable: false,
            dataset_path: None,
            dataset: GenParams::new(10, 8, 25, 0.1, 1.0, 7),
            staleness: StalenessConfig {
                tau_dl: 1,
                tau_ul: 1,
                profile: StalenessProfile::new(vec![0.5, 0.3, 0.2]).expect("valid"),
            },
            schedule: SchedulePolicy::bernoulli(0.5, 0.3, false),
            noise: NoiseModel::none(),
        }
    }

    pub fn tau(&self) -> usize {
        self.staleness.tau()
    }

    pub fn validate(&self) -> Result<()> {
        if self.staleness.profile.tau() != self.tau() {
            return Err(SimError::Config(format!(
                "profile has {} entries but tau_dl + tau_ul + 1 = {}",
                self.staleness.profile.alpha().len(),
                self.tau() + 1
            )));
        }
        if self.epochs == 0 {
            return Err(SimError::Config("epochs must be at least 1".into()));
        }
        if self.replicas == 0 {
            return Err(SimError::Config("replicas must be at least 1".into()));
        }
        if self.dataset_path.is_none() {
            self.dataset.validate()?;
        }
        self.schedule.validate()?;
        self.noise.validate()?;
        if self.weighting == WeightingMode::FreshMistakeAware && !self.noise.is_noiseless() {
            return Err(SimError::Config(
                "fresh_mistake_aware weighting requires noise family `none`".into(),
            ));
        }
        if self.stop_when_stable && !self.noise.is_noiseless() {
            return Err(SimError::Config(
                "stop_when_stable is only sound on noiseless links".into(),
            ));
        }
        if let Some(cp) = &self.checkpoints {
            if cp.iter().any(|&a| a == 0 || a > self.horizon) {
                return Err(SimError::Config(format!(
                    "checkpoints must lie in 1..={}",
                    self.horizon
                )));
            }
        }
        Ok(())
    }

    /// Sorted, deduplicated checkpoint horizons.
    pub fn checkpoint_grid(&self) -> Vec<u64> {
        let mut cp = match &self.checkpoints {
            Some(c) => c.clone(),
            None => [16, 8, 4, 2, 1]
                .iter()
                .map(|d| self.horizon / d)
                .filter(|&a| a > 0)
                .collect(),
        };
        cp.sort_unstable();
        cp.dedup();
        cp
    }

    /// Inlines a scripted schedule file and makes file paths absolute
    /// relative to `base_dir`.
    pub fn resolve(&mut self, base_dir: &Path) -> Result<()> {
        if let Some(script) = self.schedule.script(Some(base_dir))? {
            self.schedule.kind = PolicyKind::Scripted {
                path: None,
                events: script.events,
            };
        }
        if let Some(p) = &self.dataset_path {
            if p.is_relative() {
                self.dataset_path = Some(base_dir.join(p));
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.resolve(path.parent().unwrap_or(Path::new(".")))?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepAxes {
    /// Profiles to compare; each must have `tau + 1` entries.
    pub profiles: Vec<StalenessProfile>,
    /// Total noise energies `V`, split evenly over the two links.
    #[serde(default = "default_energies")]
    pub noise_energies: Vec<f64>,
    /// Noise family used for every `V > 0`.
    #[serde(default = "default_family")]
    pub noise_family: NoiseFamily,
    /// Checkpoint horizons; the largest one is the run horizon.
    pub horizons: Vec<u64>,
}

fn default_energies() -> Vec<f64> {
    vec![0.0]
}
fn default_family() -> NoiseFamily {
    NoiseFamily::GaussianIsotropic
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default = "default_out")]
    pub output_dir: PathBuf,
    pub run: RunConfig,
    pub sweep: SweepAxes,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        let s = &self.sweep;
        if s.profiles.is_empty() || s.noise_energies.is_empty() || s.horizons.is_empty() {
            return Err(SimError::Config("sweep grid must be nonempty".into()));
        }
        let want = self.run.tau() + 1;
        if let Some(p) = s.profiles.iter().find(|p| p.alpha().len() != want) {
            return Err(SimError::Config(format!(
                "sweep profile {:?} has {} entries, expected {want}",
                p.alpha(),
                p.alpha().len()
            )));
        }
        if s.noise_energies.iter().any(|v| v.is_nan() || *v < 0.0) {
            return Err(SimError::Config("noise energies must be nonnegative".into()));
        }
        if s.horizons.contains(&0) {
            return Err(SimError::Config("horizons must be positive".into()));
        }
        Ok(())
    }

    /// The run configuration for one grid cell.
    pub fn cell(&self, profile: &StalenessProfile, energy: f64) -> Result<RunConfig> {
        let mut cfg = self.run.clone();
        cfg.staleness.profile = profile.clone();
        cfg.noise = NoiseModel::with_energy(self.sweep.noise_family, energy)?;
        let mut hs = self.sweep.horizons.clone();
        hs.sort_unstable();
        hs.dedup();
        cfg.horizon = *hs.last().expect("nonempty");
        cfg.checkpoints = Some(hs);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        cfg.run.validate()?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        let mut cfg = Self::from_toml(&text)?;
        cfg.run.resolve(path.parent().unwrap_or(Path::new(".")))?;
        Ok(cfg)
    }
}
