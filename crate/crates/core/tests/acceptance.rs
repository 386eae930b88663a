//! Acceptance suite. Each test prints one `[PASS]`/`[FAIL]` line per
//! criterion and then asserts it.

use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use stale_ipm::aggregator::{
    alpha_identity_sides, assign_weights, bucketize, StalenessProfile, WeightingMode,
};
use stale_ipm::channel::{sample_noise, NoiseFamily, NoiseModel};
use stale_ipm::config::{RunConfig, StalenessConfig};
use stale_ipm::dataset::{GenParams, Partition};
use stale_ipm::engine::{
    check_noiseless_bound, check_one_step_noiseless, check_window_permanence, corrupt_kappa,
    monte_carlo, monte_carlo_with_dataset, prepare_dataset, run, run_with_dataset,
    Execution, MonteCarloSummary, RunTrace,
};
use stale_ipm::perceptron::shard_order;
use stale_ipm::rng::{self, derive_seed, Purpose};
use stale_ipm::scheduler::{ArrivalEvent, SchedulePolicy, Script, ScriptedEvent};

fn report(id: u32, name: &str, pass: bool, detail: impl AsRef<str>) {
    println!(
        "[{}] criterion {id:>2}: {name} :: {}",
        if pass { "PASS" } else { "FAIL" },
        detail.as_ref()
    );
    assert!(pass, "criterion {id} failed: {}", detail.as_ref());
}

fn jobs() -> Execution {
    Execution::with_jobs(std::thread::available_parallelism().map_or(1, |n| n.get()))
}

// ---------------------------------------------------------------------------
// randomized configuration family shared by criteria 1, 3, 4 and 10

const HORIZON: u64 = 300;

fn random_profile(rng: &mut ChaCha8Rng, tau: usize) -> StalenessProfile {
    let mut w: Vec<f64> = (0..=tau)
        .map(|_| if rng.random_bool(0.3) { 0.0 } else { rng.random::<f64>() })
        .collect();
    if w.iter().all(|&x| x == 0.0) {
        w[rng.random_range(0..=tau)] = 1.0;
    }
    let sum: f64 = w.iter().sum();
    let alpha: Vec<f64> = w.iter().map(|x| x / sum).collect();
    StalenessProfile::new(alpha).unwrap()
}

fn random_script(rng: &mut ChaCha8Rng, m: usize, tau_dl: usize, tau_ul: usize) -> Script {
    let mut events = Vec::new();
    for t in 0..HORIZON {
        for client in 0..m {
            if rng.random_bool(0.4) {
                events.push(ScriptedEvent {
                    t,
                    client,
                    s_dl: rng.random_range(0..=tau_dl),
                    s_ul: rng.random_range(0..=tau_ul),
                });
            }
        }
    }
    Script { events }
}

fn random_configs() -> Vec<RunConfig> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..50)
        .map(|i| {
            let dim = [2, 10][rng.random_range(0..2)];
            let m = [1, 4, 16][rng.random_range(0..3)];
            let tau = [0, 1, 3][rng.random_range(0..3)];
            let tau_dl = rng.random_range(0..=tau);
            let tau_ul = tau - tau_dl;
            let mut ds = GenParams::new(
                dim,
                m,
                rng.random_range(5..=20),
                rng.random_range(0.05..0.3),
                1.0,
                1000 + i,
            );
            if rng.random_bool(0.2) {
                ds.partition = Partition::LabelSkewed;
            }
            let schedule = if i % 2 == 0 {
                SchedulePolicy::bernoulli(
                    rng.random_range(0.2..1.0),
                    rng.random_range(0.0..0.6),
                    rng.random_bool(0.5),
                )
            } else {
                SchedulePolicy::scripted(random_script(&mut rng, m, tau_dl, tau_ul))
            };
            RunConfig {
                seed: 77 + i,
                horizon: HORIZON,
                replicas: 1,
                epochs: 1,
                weighting: if rng.random_bool(0.2) {
                    WeightingMode::FreshMistakeAware
                } else {
                    WeightingMode::Uniform
                },
                checkpoints: None,
                stop_when_stable: false,
                dataset_path: None,
                dataset: ds,
                staleness: StalenessConfig {
                    tau_dl,
                    tau_ul,
                    profile: random_profile(&mut rng, tau),
                },
                schedule,
                noise: NoiseModel::none(),
            }
        })
        .collect()
}

fn noiseless_traces() -> Vec<RunTrace> {
    random_configs().iter().map(|c| run(c).unwrap()).collect()
}

#[test]
fn c01_deterministic_noiseless_bound() {
    let start = Instant::now();
    let traces = noiseless_traces();
    let mut worst: f64 = 0.0;
    let mut violations = 0;
    for tr in &traces {
        violations += check_noiseless_bound(tr).len();
        let s = tr.config.staleness.profile.s_factor();
        let bound = s * tr.radius * tr.radius / (tr.margin * tr.margin);
        worst = worst.max(tr.k_prefix.last().unwrap() / bound);
    }
    let elapsed = start.elapsed();
    report(
        1,
        "K_A <= S R^2/gamma^2 pathwise, 50 noiseless configs",
        violations == 0 && elapsed < Duration::from_secs(60),
        format!("violations={violations} max K/bound={worst:.4} runtime={elapsed:.2?}"),
    );
}

#[test]
fn c02_classical_reduction() {
    let mut cfg = RunConfig::baseline();
    cfg.dataset = GenParams::new(10, 1, 40, 0.1, 1.0, 31);
    cfg.staleness = StalenessConfig {
        tau_dl: 0,
        tau_ul: 0,
        profile: StalenessProfile::new(vec![1.0]).unwrap(),
    };
    cfg.schedule = SchedulePolicy::always_fresh();
    cfg.horizon = 200;
    let ds = prepare_dataset(&cfg).unwrap();
    let seed = 4242;
    let trace = run_with_dataset(&cfg, &ds, seed).unwrap();

    // straight-line perceptron over the same visiting order, one pass per round
    let shard = &ds.clients[0];
    let order = shard_order(shard.len(), derive_seed(&[seed, Purpose::Order as u64, 0]));
    let mut w = vec![0.0; 10];
    let mut total = 0u64;
    let mut matches = true;
    for rec in &trace.rounds {
        let a: f64 = ds.witness.iter().zip(&w).map(|(p, q)| p * q).sum();
        let b: f64 = w.iter().map(|x| x * x).sum();
        let mut k = 0u64;
        for &j in &order {
            let ex = &shard[j];
            let score: f64 = ex.x.iter().zip(&w).map(|(p, q)| p * q).sum::<f64>() * ex.y;
            if score <= 0.0 {
                for (wi, xi) in w.iter_mut().zip(&ex.x) {
                    *wi += ex.y * xi;
                }
                k += 1;
            }
        }
        total += k;
        matches &= rec.iterate.a == a && rec.iterate.b == b && rec.kappa == k as f64;
    }
    let bound = (ds.certified_radius / ds.certified_margin).powi(2);
    report(
        2,
        "m=1, tau=0 reproduces the sequential perceptron",
        matches && (total as f64) <= bound,
        format!("round-for-round match={matches} mistakes={total} R^2/gamma^2={bound:.2}"),
    );
}

#[test]
fn c03_pathwise_lemma1() {
    let mut checked = 0u64;
    let mut bad = 0u64;
    for base in random_configs() {
        let variants = [
            NoiseModel::none(),
            NoiseModel::with_energy(NoiseFamily::GaussianIsotropic, 0.3).unwrap(),
            NoiseModel::with_energy(NoiseFamily::SphereUniform, 0.3).unwrap(),
        ];
        for noise in variants {
            let mut cfg = base.clone();
            cfg.noise = noise;
            if !noise.is_noiseless() {
                cfg.weighting = WeightingMode::Uniform;
            }
            let tr = run(&cfg).unwrap();
            for o in tr.rounds.iter().flat_map(|r| &r.clients) {
                checked += 1;
                bad += !o.lemma1_ok as u64;
            }
        }
    }
    report(
        3,
        "Lemma-1 progress/norm inequalities at every (client, round)",
        bad == 0 && checked > 0,
        format!("checked={checked} violations={bad} (noiseless, gaussian, sphere)"),
    );
}

#[test]
fn c04_one_step_potentials() {
    let traces = noiseless_traces();
    let mut violations = 0;
    for tr in &traces {
        let p = &tr.config.staleness.profile;
        violations += check_one_step_noiseless(tr, p, tr.margin, tr.radius).unwrap().len();
    }
    // tamper with a zero-mistake round of a stabilized trace
    let mut tr = traces
        .iter()
        .find(|t| t.config.tau() > 0 && t.rounds.iter().rev().take(10).all(|r| r.kappa == 0.0))
        .expect("some trace stabilizes")
        .clone();
    let target = tr.rounds[tr.len() - 5].t;
    corrupt_kappa(&mut tr, target, 1.0).unwrap();
    let p = tr.config.staleness.profile.clone();
    let flagged = check_one_step_noiseless(&tr, &p, tr.margin, tr.radius).unwrap();
    report(
        4,
        "one-step potential inequalities; tampering detected",
        violations == 0 && flagged == vec![target],
        format!("violations={violations} corrupted round={target} flagged={flagged:?}"),
    );
}

#[test]
fn c05_alpha_identity() {
    let mut rng = ChaCha8Rng::seed_from_u64(55);
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let tau = rng.random_range(0..6);
        let profile = random_profile(&mut rng, tau);
        let n = rng.random_range(0..12);
        let events: Vec<ArrivalEvent> = (0..n)
            .map(|c| {
                let s = rng.random_range(0..=tau);
                ArrivalEvent {
                    client: c,
                    round: 50,
                    s_dl: s,
                    s_ul: 0,
                }
            })
            .collect();
        let mistakes: Vec<u64> = (0..n).map(|_| rng.random_range(0..4)).collect();
        let buckets = bucketize(&events, tau).unwrap();
        let w = assign_weights(&buckets, &profile, WeightingMode::Uniform, &mistakes, &NoiseModel::none())
            .unwrap();
        let z: Vec<f64> = (0..=tau).map(|_| rng.random_range(-100.0..100.0)).collect();
        // direct evaluation of both sides
        let lhs: f64 = events
            .iter()
            .zip(&w.mu)
            .map(|(e, m)| m * z[e.total_staleness()])
            .sum::<f64>()
            + w.pi.iter().map(|(&s, p)| p * z[s]).sum::<f64>();
        let rhs: f64 = profile.alpha().iter().zip(&z).map(|(a, zz)| a * zz).sum();
        let (l2, r2) = alpha_identity_sides(&w, &buckets, &profile, &z);
        worst = worst.max((lhs - rhs).abs()).max((l2 - lhs).abs()).max((r2 - rhs).abs());
    }
    report(
        5,
        "alpha-identity over 10^4 random bucket configurations",
        worst <= 1e-9,
        format!("max |lhs - rhs| = {worst:.3e}"),
    );
}

fn desk_config() -> RunConfig {
    let mut cfg = RunConfig::baseline();
    cfg.dataset = GenParams::new(10, 8, 25, 0.1, 1.0, 7);
    cfg.horizon = 4000;
    cfg.checkpoints = Some(vec![250, 1000, 4000]);
    cfg
}

fn mc(cfg: &RunConfig, reps: usize) -> MonteCarloSummary {
    let ds = prepare_dataset(cfg).unwrap();
    monte_carlo_with_dataset(cfg, &ds, reps, jobs()).unwrap()
}

#[test]
fn c06_theorem1_in_expectation() {
    let start = Instant::now();
    let profiles = [vec![0.5, 0.3, 0.2], vec![0.2, 0.3, 0.5]];
    let mut all_ok = true;
    let mut lines = Vec::new();
    for alpha in &profiles {
        for v in [0.1, 0.4] {
            let mut cfg = desk_config();
            cfg.staleness.profile = StalenessProfile::new(alpha.clone()).unwrap();
            cfg.noise = NoiseModel::with_energy(NoiseFamily::GaussianIsotropic, v).unwrap();
            let s = mc(&cfg, 200);
            for h in &s.horizons {
                let ok = h.k.mean - 2.0 * h.k.se <= h.bound_thm1;
                all_ok &= ok;
                lines.push(format!(
                    "alpha={alpha:?} V={v} A={} mean={:.2} se={:.2} bound={:.2}",
                    h.horizon, h.k.mean, h.k.se, h.bound_thm1
                ));
            }
        }
    }
    let elapsed = start.elapsed();
    for l in &lines {
        println!("    {l}");
    }
    report(
        6,
        "mean K_A - 2 SE <= bound on the 2x3x2 grid, 200 replicas",
        all_ok && elapsed < Duration::from_secs(600),
        format!("cells={} runtime={elapsed:.2?}", lines.len()),
    );
}

#[test]
fn c07_sqrt_horizon_noise_scaling() {
    let mut cfg = desk_config();
    let quiet = mc(&cfg, 200);
    cfg.noise = NoiseModel::with_energy(NoiseFamily::GaussianIsotropic, 0.4).unwrap();
    let noisy = mc(&cfg, 200);
    let g: Vec<f64> = noisy
        .horizons
        .iter()
        .zip(&quiet.horizons)
        .map(|(n, q)| n.k.mean - q.k.mean)
        .collect();
    let (r_hi, r_lo) = (g[2] / g[1], g[1] / g[0]);
    let band = 1.4..=2.8;
    report(
        7,
        "plateau-subtracted K_A grows like sqrt(A)",
        band.contains(&r_hi) && band.contains(&r_lo),
        format!("G={g:.2?} G(4000)/G(1000)={r_hi:.3} G(1000)/G(250)={r_lo:.3}"),
    );
}

#[test]
fn c08_profile_ordering() {
    // every client lands every round, rotating through staleness 0..=3
    let m = 8;
    let horizon = 1500;
    let events = (0..horizon)
        .flat_map(|t| {
            (0..m).map(move |c| {
                let s = (c + t as usize) % 4;
                let s_dl = s.min(2);
                ScriptedEvent {
                    t,
                    client: c,
                    s_dl,
                    s_ul: s - s_dl,
                }
            })
        })
        .collect();
    let script = Script { events };
    let mut plateaus = Vec::new();
    let mut bounds = Vec::new();
    let mut within = true;
    for (s_bar, alpha) in [
        (0.0, vec![1.0, 0.0, 0.0, 0.0]),
        (1.0, vec![0.0, 1.0, 0.0, 0.0]),
        (3.0, vec![0.0, 0.0, 0.0, 1.0]),
    ] {
        let mut cfg = RunConfig::baseline();
        cfg.dataset = GenParams::new(10, m, 25, 0.1, 1.0, 7);
        cfg.staleness = StalenessConfig {
            tau_dl: 2,
            tau_ul: 1,
            profile: StalenessProfile::new(alpha).unwrap(),
        };
        cfg.schedule = SchedulePolicy::scripted(script.clone());
        cfg.horizon = horizon;
        cfg.checkpoints = Some(vec![horizon / 2, horizon]);
        let s = mc(&cfg, 50);
        assert_eq!(s.profile_s_bar(), s_bar);
        let plateau = s.horizons[1].k.mean;
        let settled = s.horizons[0].k.mean == plateau;
        let bound = s.horizons[1].bound_thm1;
        let worst = s.outcomes.iter().map(|o| o.k_at[1]).fold(0.0, f64::max);
        within &= settled && worst <= bound;
        println!("    s_bar={s_bar} plateau={plateau:.3} settled={settled} worst={worst:.3} bound={bound:.2}");
        plateaus.push(plateau);
        bounds.push(bound);
    }
    let nondecreasing = |v: &[f64]| v.windows(2).all(|w| w[0] <= w[1]);
    report(
        8,
        "noiseless plateaus and bounds ordered by s_bar",
        within && nondecreasing(&plateaus) && nondecreasing(&bounds),
        format!("plateaus={plateaus:.3?} bounds={bounds:.2?}"),
    );
}

trait SBar {
    fn profile_s_bar(&self) -> f64;
}

impl SBar for MonteCarloSummary {
    fn profile_s_bar(&self) -> f64 {
        self.s_factor - 1.0
    }
}

#[test]
fn c09_theorem2_stabilization() {
    let start = Instant::now();
    let mut cfg = RunConfig::baseline();
    cfg.dataset = GenParams::new(10, 8, 25, 0.1, 1.0, 7);
    cfg.staleness.profile = StalenessProfile::new(vec![0.5, 0.25, 0.25]).unwrap();
    cfg.weighting = WeightingMode::FreshMistakeAware;
    cfg.schedule = SchedulePolicy::bernoulli(0.5, 0.5, true);
    cfg.stop_when_stable = true;
    let ds = prepare_dataset(&cfg).unwrap();
    // horizon at 10x the hitting-time bound
    let probe = monte_carlo_with_dataset(&{
        let mut c = cfg.clone();
        c.horizon = 1;
        c
    }, &ds, 1, Execution::Sequential)
    .unwrap();
    let b = probe.stabilization.expect("stabilization bound applies");
    cfg.horizon = (10.0 * b.hit).ceil() as u64;
    let s = monte_carlo_with_dataset(&cfg, &ds, 500, jobs()).unwrap();
    let elapsed = start.elapsed();
    let censored = s.t_hit.censored.max(s.t_stab.censored) as f64 / s.replicas as f64;
    let pass = s.t_hit.reached.mean <= b.hit
        && s.t_stab.reached.mean <= b.stab
        && censored <= 0.01
        && elapsed < Duration::from_secs(300);
    report(
        9,
        "mean T_hit and T_stab within stabilization bounds",
        pass,
        format!(
            "mean T_hit={:.2} (bound {:.1}) mean T_stab={:.2} (bound {:.1}) censored={censored:.3} horizon={} runtime={elapsed:.2?}",
            s.t_hit.reached.mean, b.hit, s.t_stab.reached.mean, b.stab, cfg.horizon
        ),
    );
}

#[test]
fn c10_window_permanence() {
    let traces = noiseless_traces();
    let violations: usize = traces.iter().map(|t| check_window_permanence(t).len()).sum();
    let armed = traces
        .iter()
        .filter(|t| t.t_stab.reached().is_some())
        .count();
    report(
        10,
        "no incorrect iterate after tau+1 consecutive correct ones",
        violations == 0,
        format!("violations={violations} traces with certified stabilization={armed}/{}", traces.len()),
    );
}

#[test]
fn c11_channel_moments() {
    let dim = 10;
    let draws = 100_000;
    let sigma2 = 1.0;
    // Bonferroni over coordinates: family-wise 95%
    let z = 3.02;
    let mut details = Vec::new();
    let mut pass = true;
    for family in [NoiseFamily::GaussianIsotropic, NoiseFamily::SphereUniform] {
        let mut sum = vec![0.0; dim];
        let mut sumsq = vec![0.0; dim];
        let mut energy = 0.0;
        for i in 0..draws {
            let mut r = rng::stream(9, Purpose::Uplink, 0, i, 0);
            let n = sample_noise(dim, sigma2, family, &mut r);
            for (k, v) in n.iter().enumerate() {
                sum[k] += v;
                sumsq[k] += v * v;
            }
            energy += n.iter().map(|v| v * v).sum::<f64>();
        }
        let nf = draws as f64;
        let mut max_z: f64 = 0.0;
        for k in 0..dim {
            let mean = sum[k] / nf;
            let var = sumsq[k] / nf - mean * mean;
            max_z = max_z.max(mean.abs() / (var / nf).sqrt());
        }
        let e2 = energy / nf;
        let ok = max_z <= z && (e2 - sigma2).abs() <= 0.03 * sigma2;
        pass &= ok;
        details.push(format!("{family:?}: max|z|={max_z:.2} E|n|^2={e2:.4}"));
    }
    report(11, "noise is zero-mean with E|n|^2 = sigma^2", pass, details.join("; "));
}

#[test]
fn c12_determinism() {
    let mut cfg = RunConfig::baseline();
    cfg.noise = NoiseModel::with_energy(NoiseFamily::SphereUniform, 0.2).unwrap();
    cfg.horizon = 400;
    let a = run(&cfg).unwrap().to_csv_string();
    let b = run(&cfg).unwrap().to_csv_string();
    let s1 = monte_carlo(&cfg, 16, Execution::Sequential).unwrap();
    let s8 = monte_carlo(&cfg, 16, Execution::Parallel { jobs: 8 }).unwrap();
    let same_traces = a == b;
    let same_summary = s1.to_csv_string() == s8.to_csv_string() && s1 == s8;
    report(
        12,
        "byte-identical traces; summaries independent of job count",
        same_traces && same_summary,
        format!("trace bytes={} identical={same_traces} jobs1==jobs8: {same_summary}", a.len()),
    );
}
