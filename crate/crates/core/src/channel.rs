//! Effective additive channel noise on downlink and uplink.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::unit_direction;
use crate::error::{Result, SimError};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    #[default]
    None,
    /// i.i.d. coordinates with variance `sigma2 / D`.
    GaussianIsotropic,
    /// Uniform direction, norm exactly `sqrt(sigma2)`.
    SphereUniform,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    #[serde(default)]
    pub family: NoiseFamily,
    #[serde(default)]
    pub sigma2_dl: f64,
    #[serde(default)]
    pub sigma2_ul: f64,
}

impl NoiseModel {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn new(family: NoiseFamily, sigma2_dl: f64, sigma2_ul: f64) -> Result<Self> {
        let m = Self {
            family,
            sigma2_dl,
            sigma2_ul,
        };
        m.validate()?;
        Ok(m)
    }

    /// Splits a total energy `v` evenly across the two links.
    pub fn with_energy(family: NoiseFamily, v: f64) -> Result<Self> {
        if v == 0.0 {
            return Ok(Self::none());
        }
        Self::new(family, v / 2.0, v / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma2_dl >= 0.0 && self.sigma2_ul >= 0.0) {
            return Err(SimError::Config("noise variances must be nonnegative".into()));
        }
        if self.family == NoiseFamily::None && (self.sigma2_dl > 0.0 || self.sigma2_ul > 0.0) {
            return Err(SimError::Config(
                "noise family `none` requires zero variances".into(),
            ));
        }
        if self.family != NoiseFamily::None && self.energy() == 0.0 {
            return Err(SimError::Config(
                "a noise family with zero variances should be `none`".into(),
            ));
        }
        Ok(())
    }

    pub fn is_noiseless(&self) -> bool {
        self.energy() == 0.0
    }

    pub fn energy(&self) -> f64 {
        noise_energy(self)
    }
}

/// Total per-round noise energy `sigma2_dl + sigma2_ul`.
pub fn noise_energy(model: &NoiseModel) -> f64 {
    match model.family {
        NoiseFamily::None => 0.0,
        _ => model.sigma2_dl + model.sigma2_ul,
    }
}

/// A zero-mean noise vector with `E|n|^2 = sigma2`.
pub fn sample_noise<R: Rng + ?Sized>(
    dim: usize,
    sigma2: f64,
    family: NoiseFamily,
    rng: &mut R,
) -> Vec<f64> {
    if sigma2 == 0.0 || family == NoiseFamily::None || dim == 0 {
        return vec![0.0; dim];
    }
    match family {
        NoiseFamily::None => unreachable!(),
        NoiseFamily::GaussianIsotropic => {
            let normal = Normal::new(0.0, (sigma2 / dim as f64).sqrt())
                .expect("finite nonnegative std dev");
            (0..dim).map(|_| normal.sample(rng)).collect()
        }
        NoiseFamily::SphereUniform => {
            let r = sigma2.sqrt();
            unit_direction(dim, rng).into_iter().map(|x| x * r).collect()
        }
    }
}

/// Returns `v + n` with `n` drawn from `rng`.
pub fn perturb<R: Rng + ?Sized>(v: &[f64], sigma2: f64, family: NoiseFamily, rng: &mut R) -> Vec<f64> {
    let n = sample_noise(v.len(), sigma2, family, rng);
    v.iter().zip(n).map(|(a, b)| a + b).collect()
}
