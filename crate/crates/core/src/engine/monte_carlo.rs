//! Independent replications and their summary statistics.
//!
//! Replica `r` runs with seed `replica_seed(base, r)` against a shared
//! dataset. Outcomes are merged by replica index, so the summary does not
//! depend on how many worker threads produced it.

use std::io::Write;

use crate::dataset::Dataset;
use crate::error::{Result, SimError};
use crate::rng::replica_seed;
use crate::scheduler::lower_bound_fresh_prob;
use crate::{aggregator::WeightingMode, config::RunConfig};

use super::checks::{
    check_noiseless_bound, check_one_step_noiseless, check_window_permanence, lemma2_residuals,
    theorem1_bound, theorem2_bounds, StabilizationBounds,
};
use super::trace::StopTime;
use super::{prepare_dataset, run_with_dataset};

/// How replicas are scheduled onto threads.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Execution {
    Sequential,
    /// Up to `jobs` worker threads. Falls back to sequential without the
    /// `parallel` feature.
    Parallel { jobs: usize },
}

impl Execution {
    pub fn with_jobs(jobs: usize) -> Self {
        if jobs <= 1 {
            Execution::Sequential
        } else {
            Execution::Parallel { jobs }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReplicaOutcome {
    pub replica: usize,
    pub seed: u64,
    pub rounds_run: u64,
    /// `K_A` at each checkpoint horizon.
    pub k_at: Vec<f64>,
    pub t_hit: StopTime,
    pub t_stab: StopTime,
    pub lemma1_checked: u64,
    pub lemma1_violations: u64,
    /// Pathwise noiseless checks; `None` on noisy runs.
    pub one_step_violations: Option<Vec<u64>>,
    pub bound_violations: Option<Vec<u64>>,
    pub window_violations: Option<Vec<u64>>,
    pub residual_a_mean: f64,
    pub residual_b_mean: f64,
}

/// Mean, standard error and normal 95% interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanStat {
    pub n: usize,
    pub mean: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

impl MeanStat {
    pub fn of(xs: &[f64]) -> Self {
        let n = xs.len();
        if n == 0 {
            return Self {
                n,
                mean: f64::NAN,
                se: f64::NAN,
                ci_lo: f64::NAN,
                ci_hi: f64::NAN,
            };
        }
        let mean = xs.iter().sum::<f64>() / n as f64;
        let se = if n > 1 {
            let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Self {
            n,
            mean,
            se,
            ci_lo: mean - 1.96 * se,
            ci_hi: mean + 1.96 * se,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HorizonStats {
    pub horizon: u64,
    pub k: MeanStat,
    pub bound_thm1: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StopStats {
    /// Over replicas where the stopping time was observed.
    pub reached: MeanStat,
    pub censored: usize,
    pub censored_frac: f64,
}

impl StopStats {
    fn of(times: impl Iterator<Item = StopTime>) -> Self {
        let times: Vec<StopTime> = times.collect();
        let reached: Vec<f64> = times.iter().filter_map(|t| t.reached()).map(|t| t as f64).collect();
        let censored = times.len() - reached.len();
        Self {
            reached: MeanStat::of(&reached),
            censored,
            censored_frac: if times.is_empty() {
                0.0
            } else {
                censored as f64 / times.len() as f64
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MonteCarloSummary {
    pub replicas: usize,
    pub s_factor: f64,
    pub margin: f64,
    pub radius: f64,
    pub energy: f64,
    pub tau: usize,
    pub horizons: Vec<HorizonStats>,
    pub t_hit: StopStats,
    pub t_stab: StopStats,
    pub residual_a: MeanStat,
    pub residual_b: MeanStat,
    pub lemma1_checked: u64,
    pub lemma1_violations: u64,
    pub noiseless: bool,
    pub one_step_violations: u64,
    pub bound_violations: u64,
    pub window_violations: u64,
    /// Present when the stabilization bounds apply to this configuration.
    pub stabilization: Option<StabilizationBounds>,
    pub outcomes: Vec<ReplicaOutcome>,
}

impl MonteCarloSummary {
    pub fn pathwise_violations(&self) -> u64 {
        self.lemma1_violations + self.one_step_violations + self.bound_violations + self.window_violations
    }

    /// Writes `A, mean_KA, se_KA, bound_thm1, mean_Thit, mean_Tstab, censored_frac`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        for row in self.csv_rows() {
            w.write_record(row)?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub const CSV_HEADER: [&'static str; 7] = [
        "A", "mean_KA", "se_KA", "bound_thm1", "mean_Thit", "mean_Tstab", "censored_frac",
    ];

    pub fn csv_rows(&self) -> Vec<[String; 7]> {
        self.horizons
            .iter()
            .map(|h| {
                [
                    h.horizon.to_string(),
                    h.k.mean.to_string(),
                    h.k.se.to_string(),
                    h.bound_thm1.to_string(),
                    self.t_hit.reached.mean.to_string(),
                    self.t_stab.reached.mean.to_string(),
                    self.t_stab.censored_frac.to_string(),
                ]
            })
            .collect()
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("utf8")
    }
}

/// Runs one replica and reduces it to its outcome.
pub fn run_replica(config: &RunConfig, dataset: &Dataset, replica: usize) -> Result<ReplicaOutcome> {
    let seed = replica_seed(config.seed, replica as u64);
    let trace = run_with_dataset(config, dataset, seed)?;
    let profile = &config.staleness.profile;
    let noiseless = config.noise.is_noiseless();
    let (res_a, res_b) = lemma2_residuals(
        &trace,
        profile,
        trace.margin,
        trace.radius,
        config.noise.energy(),
    );
    let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let clients = trace.rounds.iter().flat_map(|r| &r.clients);
    let (checked, bad) = clients.fold((0, 0), |(c, b), o| (c + 1, b + !o.lemma1_ok as u64));
    Ok(ReplicaOutcome {
        replica,
        seed,
        rounds_run: trace.len() as u64,
        k_at: config.checkpoint_grid().iter().map(|&a| trace.k_at(a)).collect(),
        t_hit: trace.t_hit,
        t_stab: trace.t_stab,
        lemma1_checked: checked,
        lemma1_violations: bad,
        one_step_violations: if noiseless {
            Some(check_one_step_noiseless(&trace, profile, trace.margin, trace.radius)?)
        } else {
            None
        },
        bound_violations: noiseless.then(|| check_noiseless_bound(&trace)),
        window_violations: noiseless.then(|| check_window_permanence(&trace)),
        residual_a_mean: mean(&res_a),
        residual_b_mean: mean(&res_b),
    })
}

pub fn monte_carlo(config: &RunConfig, reps: usize, exec: Execution) -> Result<MonteCarloSummary> {
    let dataset = prepare_dataset(config)?;
    monte_carlo_with_dataset(config, &dataset, reps, exec)
}

pub fn monte_carlo_with_dataset(
    config: &RunConfig,
    dataset: &Dataset,
    reps: usize,
    exec: Execution,
) -> Result<MonteCarloSummary> {
    if reps == 0 {
        return Err(SimError::Config("at least one replica is required".into()));
    }
    config.validate()?;
    let outcomes = run_all(config, dataset, reps, exec)?;
    Ok(summarize(config, dataset, outcomes))
}

fn run_all(config: &RunConfig, dataset: &Dataset, reps: usize, exec: Execution) -> Result<Vec<ReplicaOutcome>> {
    match exec {
        Execution::Sequential => (0..reps).map(|r| run_replica(config, dataset, r)).collect(),
        #[cfg(feature = "parallel")]
        Execution::Parallel { jobs } => {
            use rayon::prelude::*;
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(jobs)
                .build()
                .map_err(|e| SimError::Config(format!("thread pool: {e}")))?;
            pool.install(|| {
                (0..reps)
                    .into_par_iter()
                    .map(|r| run_replica(config, dataset, r))
                    .collect()
            })
        }
        #[cfg(not(feature = "parallel"))]
        Execution::Parallel { .. } => (0..reps).map(|r| run_replica(config, dataset, r)).collect(),
    }
}

fn summarize(config: &RunConfig, dataset: &Dataset, outcomes: Vec<ReplicaOutcome>) -> MonteCarloSummary {
    let profile = &config.staleness.profile;
    let (margin, radius) = (dataset.certified_margin, dataset.certified_radius);
    let energy = config.noise.energy();
    let s_factor = profile.s_factor();
    let horizons = config
        .checkpoint_grid()
        .iter()
        .enumerate()
        .map(|(i, &a)| {
            let ks: Vec<f64> = outcomes.iter().map(|o| o.k_at[i]).collect();
            HorizonStats {
                horizon: a,
                k: MeanStat::of(&ks),
                bound_thm1: theorem1_bound(s_factor, radius, margin, a, energy)
                    .expect("certified margin is positive"),
            }
        })
        .collect();
    let count = |f: fn(&ReplicaOutcome) -> Option<&Vec<u64>>| -> u64 {
        outcomes.iter().filter_map(f).map(|v| v.len() as u64).sum()
    };
    let noiseless = config.noise.is_noiseless();
    let stabilization = if noiseless && config.weighting == WeightingMode::FreshMistakeAware {
        lower_bound_fresh_prob(&config.schedule)
            .ok()
            .and_then(|p| theorem2_bounds(s_factor, radius, margin, profile.alpha()[0], p, config.tau()).ok())
    } else {
        None
    };
    let res_a: Vec<f64> = outcomes.iter().map(|o| o.residual_a_mean).collect();
    let res_b: Vec<f64> = outcomes.iter().map(|o| o.residual_b_mean).collect();
    MonteCarloSummary {
        replicas: outcomes.len(),
        s_factor,
        margin,
        radius,
        energy,
        tau: config.tau(),
        horizons,
        t_hit: StopStats::of(outcomes.iter().map(|o| o.t_hit)),
        t_stab: StopStats::of(outcomes.iter().map(|o| o.t_stab)),
        residual_a: MeanStat::of(&res_a),
        residual_b: MeanStat::of(&res_b),
        lemma1_checked: outcomes.iter().map(|o| o.lemma1_checked).sum(),
        lemma1_violations: outcomes.iter().map(|o| o.lemma1_violations).sum(),
        noiseless,
        one_step_violations: count(|o| o.one_step_violations.as_ref()),
        bound_violations: count(|o| o.bound_violations.as_ref()),
        window_violations: count(|o| o.window_violations.as_ref()),
        stabilization,
        outcomes,
    }
}
