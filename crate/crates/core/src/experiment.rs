//! Parameter sweeps over profiles and noise energies, and the
//! reliable-support profile-design heuristic.

use std::io::Write;

use crate::aggregator::StalenessProfile;
use crate::config::ExperimentConfig;
use crate::engine::{monte_carlo_with_dataset, prepare_dataset, Execution, MonteCarloSummary};
use crate::error::{Result, SimError};

pub const DEFAULT_RELIABILITY_THRESHOLD: f64 = 0.5;

/// One grid cell's Monte Carlo summary.
#[derive(Clone, Debug)]
pub struct SweepCell {
    pub profile: StalenessProfile,
    pub energy: f64,
    pub summary: MonteCarloSummary,
}

/// Runs every `(profile, V)` cell of the grid against one shared dataset.
pub fn sweep(exp: &ExperimentConfig, reps: usize, exec: Execution) -> Result<Vec<SweepCell>> {
    exp.validate()?;
    let dataset = prepare_dataset(&exp.run)?;
    let mut cells = Vec::new();
    for profile in &exp.sweep.profiles {
        for &energy in &exp.sweep.noise_energies {
            let cfg = exp.cell(profile, energy)?;
            log::info!(
                "sweep cell: alpha={:?} V={energy} A={}",
                profile.alpha(),
                cfg.horizon
            );
            let summary = monte_carlo_with_dataset(&cfg, &dataset, reps, exec)?;
            cells.push(SweepCell {
                profile: profile.clone(),
                energy,
                summary,
            });
        }
    }
    Ok(cells)
}

pub const SWEEP_HEADER: [&str; 10] = [
    "profile", "s_bar", "V", "A", "mean_KA", "se_KA", "bound_thm1", "mean_Thit", "mean_Tstab",
    "censored_frac",
];

/// Long-format CSV: one row per `(profile, V, checkpoint)`.
pub fn write_sweep_csv<W: Write>(cells: &[SweepCell], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SWEEP_HEADER)?;
    for c in cells {
        let alpha = c
            .profile
            .alpha()
            .iter()
            .map(f64::to_string)
            .collect::<Vec<_>>()
            .join(";");
        for row in c.summary.csv_rows() {
            let mut rec = vec![
                alpha.clone(),
                c.profile.mean_staleness().to_string(),
                c.energy.to_string(),
            ];
            rec.extend(row);
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProfileDesign {
    pub profile: StalenessProfile,
    /// True when no bucket cleared the threshold and the uniform profile was used.
    pub fallback: bool,
}

/// All mass on the smallest staleness whose bucket is occupied more often
/// than `threshold`; uniform over `0..=tau` when none is.
pub fn design_profile(frequencies: &[f64], threshold: f64) -> Result<ProfileDesign> {
    if frequencies.is_empty() {
        return Err(SimError::Config("need at least one bucket frequency".into()));
    }
    if let Some(f) = frequencies.iter().find(|f| !(0.0..=1.0).contains(*f)) {
        return Err(SimError::Config(format!("frequency {f} not in [0, 1]")));
    }
    let tau = frequencies.len() - 1;
    match frequencies.iter().position(|&f| f > threshold) {
        Some(s) => Ok(ProfileDesign {
            profile: StalenessProfile::point(s, tau)?,
            fallback: false,
        }),
        None => {
            log::warn!("no staleness bucket is reliably present; using the uniform profile");
            Ok(ProfileDesign {
                profile: StalenessProfile::uniform(tau),
                fallback: true,
            })
        }
    }
}
