//! Round-by-round simulation of the staleness-profile IPM perceptron.

mod checks;
mod monte_carlo;
mod trace;

pub use checks::{
    check_noiseless_bound, check_one_step_noiseless, check_window_permanence, compute_potentials,
    corrupt_kappa, extract_stop_times, lemma2_residuals, theorem1_bound, theorem2_bounds,
    StabilizationBounds,
};
pub use monte_carlo::{
    monte_carlo, monte_carlo_with_dataset, run_replica, Execution, HorizonStats, MeanStat,
    MonteCarloSummary, ReplicaOutcome, StopStats,
};
pub use trace::{ClientOutcome, IterateStats, RoundRecord, RunTrace, StopTime};

use crate::aggregator::{assign_weights, bucketize, ServerState, StalenessProfile};
use crate::channel::{perturb, sample_noise};
use crate::config::RunConfig;
use crate::dataset::{generate_dataset, is_globally_correct, Dataset};
use crate::error::{Result, SimError};
use crate::perceptron::{check_lemma1, local_train_ordered, shard_order};
use crate::rng::{self, derive_seed, Purpose};
use crate::scheduler::{Script, Scheduler};
use crate::vector::{dot, norm_sq};

/// Generates or loads the dataset a config describes.
pub fn prepare_dataset(config: &RunConfig) -> Result<Dataset> {
    match &config.dataset_path {
        Some(p) => Dataset::load(p),
        None => generate_dataset(&config.dataset),
    }
}

/// Everything that stays fixed across the rounds of one run.
pub struct Simulation<'a> {
    config: &'a RunConfig,
    dataset: &'a Dataset,
    script: Option<Script>,
    seed: u64,
    orders: Vec<Vec<usize>>,
}

impl<'a> Simulation<'a> {
    pub fn new(config: &'a RunConfig, dataset: &'a Dataset, seed: u64) -> Result<Self> {
        config.validate()?;
        let script = config.schedule.script(None)?;
        let orders = dataset
            .clients
            .iter()
            .enumerate()
            .map(|(i, shard)| shard_order(shard.len(), derive_seed(&[seed, Purpose::Order as u64, i as u64])))
            .collect();
        Ok(Self {
            config,
            dataset,
            script,
            seed,
            orders,
        })
    }

    pub fn profile(&self) -> &StalenessProfile {
        &self.config.staleness.profile
    }

    pub fn scheduler(&self) -> Result<Scheduler> {
        Scheduler::new(
            self.config.schedule.clone(),
            self.script.as_ref(),
            self.dataset.num_clients(),
            self.config.staleness.tau_dl,
            self.config.staleness.tau_ul,
            self.seed,
        )
    }

    pub fn iterate_stats(&self, w: &[f64]) -> Result<IterateStats> {
        Ok(IterateStats {
            a: dot(&self.dataset.witness, w),
            b: norm_sq(w),
            correct: is_globally_correct(w, self.dataset)?,
        })
    }

    /// One server round: arrivals, local training from (noisy) stale models,
    /// bucketing, weighting, aggregation.
    pub fn run_round(&self, state: &mut ServerState, sched: &mut Scheduler) -> Result<RoundRecord> {
        let t = state.round();
        let iterate = self.iterate_stats(state.current())?;
        let arrivals = sched.next_arrivals(t);
        let noise = &self.config.noise;
        let (margin, radius) = (self.dataset.certified_margin, self.dataset.certified_radius);

        let mut received = Vec::with_capacity(arrivals.len());
        let mut clients = Vec::with_capacity(arrivals.len());
        let mut mistakes = Vec::with_capacity(arrivals.len());
        for (idx, e) in arrivals.iter().enumerate() {
            if e.client >= self.dataset.num_clients() {
                return Err(SimError::Contract(format!("unknown client {}", e.client)));
            }
            // repeat arrivals of one client in a round get distinct noise streams
            let seq = arrivals[..idx].iter().filter(|o| o.client == e.client).count() as u64;
            let s = e.total_staleness();
            let stale = state.lagged(s)?;
            let mut dl_rng = rng::stream(self.seed, Purpose::Downlink, e.client as u64, t, seq);
            let delta = sample_noise(stale.len(), noise.sigma2_dl, noise.family, &mut dl_rng);
            let init: Vec<f64> = stale.iter().zip(&delta).map(|(a, b)| a + b).collect();
            let local = local_train_ordered(
                &init,
                &self.dataset.clients[e.client],
                &self.orders[e.client],
                self.config.epochs,
            )?;
            let lemma1_ok =
                check_lemma1(&local, stale, &delta, &self.dataset.witness, margin, radius);
            let mut ul_rng = rng::stream(self.seed, Purpose::Uplink, e.client as u64, t, seq);
            received.push(perturb(&local.w_out, noise.sigma2_ul, noise.family, &mut ul_rng));
            mistakes.push(local.mistakes);
            clients.push(ClientOutcome {
                client: e.client,
                staleness: s,
                mistakes: local.mistakes,
                lemma1_ok,
            });
        }

        let buckets = bucketize(&arrivals, self.config.tau())?;
        let assignment =
            assign_weights(&buckets, self.profile(), self.config.weighting, &mistakes, noise)?;
        let kappa = assignment.weighted_mistakes(&mistakes);
        state.step(&received, &assignment)?;
        Ok(RoundRecord {
            t,
            arrivals,
            assignment,
            clients,
            kappa,
            iterate,
        })
    }

    pub fn run(&self) -> Result<RunTrace> {
        let mut state = ServerState::new(self.dataset.dim(), self.config.tau());
        let mut sched = self.scheduler()?;
        let window = self.config.tau() + 1;
        let mut rounds = Vec::with_capacity(self.config.horizon as usize);
        let mut streak = 0usize;
        for _ in 0..self.config.horizon {
            let rec = self.run_round(&mut state, &mut sched)?;
            streak = if rec.iterate.correct { streak + 1 } else { 0 };
            rounds.push(rec);
            if self.config.stop_when_stable && streak >= window {
                break;
            }
        }
        let final_iterate = self.iterate_stats(state.current())?;
        let mut trace = RunTrace {
            config: self.config.clone(),
            seed: self.seed,
            margin: self.dataset.certified_margin,
            radius: self.dataset.certified_radius,
            rounds,
            final_iterate,
            k_prefix: Vec::new(),
            phi: Vec::new(),
            psi: Vec::new(),
            t_hit: StopTime::Censored,
            t_stab: StopTime::Censored,
        };
        trace.refresh_prefix();
        let (phi, psi) = compute_potentials(&trace, self.profile());
        trace.phi = phi;
        trace.psi = psi;
        let (hit, stab) = extract_stop_times(&trace);
        trace.t_hit = hit;
        trace.t_stab = stab;
        Ok(trace)
    }
}

/// Runs one configuration with its own seed.
pub fn run(config: &RunConfig) -> Result<RunTrace> {
    let dataset = prepare_dataset(config)?;
    run_with_dataset(config, &dataset, config.seed)
}

pub fn run_with_dataset(config: &RunConfig, dataset: &Dataset, seed: u64) -> Result<RunTrace> {
    Simulation::new(config, dataset, seed)?.run()
}
