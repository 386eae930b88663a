//! Server-side staleness-bucket aggregation with padding.
//!
//! Each round the server sorts arriving updates into buckets by total
//! staleness, gives bucket `s` total mass `alpha[s]`, and when a bucket is
//! empty assigns that mass to the cached iterate `w_{t-s}` instead. The new
//! iterate is therefore always a convex combination whose staleness
//! distribution is exactly the profile.

use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::channel::NoiseModel;
use crate::error::{Result, SimError};
use crate::scheduler::ArrivalEvent;
use crate::vector::axpy;

/// Tolerance on `sum(alpha) - 1` accepted (and normalized away) by
/// [`StalenessProfile::new`].
pub const PROFILE_SUM_TOL: f64 = 1e-9;
pub const MASS_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct StalenessProfile {
    /// As supplied; kept so serialization round-trips bit-exactly.
    raw: Vec<f64>,
    alpha: Vec<f64>,
    tails: Vec<f64>,
    mean_staleness: f64,
}

impl StalenessProfile {
    pub fn new(alpha: Vec<f64>) -> Result<Self> {
        if alpha.is_empty() {
            return Err(SimError::Profile("profile needs at least one entry".into()));
        }
        if let Some(a) = alpha.iter().find(|a| !(a.is_finite() && **a >= 0.0)) {
            return Err(SimError::Profile(format!("weight {a} is not a nonnegative real")));
        }
        let sum: f64 = alpha.iter().sum();
        if (sum - 1.0).abs() > PROFILE_SUM_TOL {
            return Err(SimError::Profile(format!("weights sum to {sum}, not 1")));
        }
        let raw = alpha;
        let alpha: Vec<f64> = raw.iter().map(|a| a / sum).collect();
        let mut tails = vec![0.0; alpha.len()];
        let mut acc = 0.0;
        for s in (0..alpha.len()).rev() {
            acc += alpha[s];
            tails[s] = acc;
        }
        tails[0] = 1.0;
        let mean_staleness = alpha.iter().enumerate().map(|(s, a)| s as f64 * a).sum();
        Ok(Self {
            raw,
            alpha,
            tails,
            mean_staleness,
        })
    }

    /// All mass on bucket `s` of a profile with bound `tau`.
    pub fn point(s: usize, tau: usize) -> Result<Self> {
        if s > tau {
            return Err(SimError::StalenessOutOfRange { staleness: s, tau });
        }
        let mut a = vec![0.0; tau + 1];
        a[s] = 1.0;
        Self::new(a)
    }

    pub fn uniform(tau: usize) -> Self {
        Self::new(vec![1.0 / (tau + 1) as f64; tau + 1]).expect("uniform profile is valid")
    }

    pub fn alpha(&self) -> &[f64] {
        &self.alpha
    }

    pub fn tau(&self) -> usize {
        self.alpha.len() - 1
    }

    /// `s_bar = sum_s s * alpha_s`.
    pub fn mean_staleness(&self) -> f64 {
        self.mean_staleness
    }

    /// `S = 1 + s_bar`.
    pub fn s_factor(&self) -> f64 {
        1.0 + self.mean_staleness
    }

    /// Tail sums `c_j = sum_{s >= j} alpha_s`, with `c_0 = 1`.
    pub fn tails(&self) -> &[f64] {
        &self.tails
    }
}

impl Serialize for StalenessProfile {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.raw.serialize(s)
    }
}

impl<'de> Deserialize<'de> for StalenessProfile {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let alpha = Vec::<f64>::deserialize(d)?;
        StalenessProfile::new(alpha).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeightingMode {
    /// `alpha_s / |B_s|` inside each nonempty bucket.
    #[default]
    Uniform,
    /// Fresh mass goes to fresh clients that made mistakes. Noiseless only.
    FreshMistakeAware,
}

/// Event indices grouped by total staleness, `slots[s] = B_s`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Buckets {
    pub slots: Vec<Vec<usize>>,
}

impl Buckets {
    pub fn tau(&self) -> usize {
        self.slots.len() - 1
    }

    pub fn is_empty(&self, s: usize) -> bool {
        self.slots[s].is_empty()
    }

    /// Staleness of every event, in event order.
    pub fn staleness_of_events(&self) -> Vec<usize> {
        let n = self.slots.iter().map(Vec::len).sum();
        let mut out = vec![0; n];
        for (s, slot) in self.slots.iter().enumerate() {
            for &i in slot {
                out[i] = s;
            }
        }
        out
    }
}

pub fn bucketize(events: &[ArrivalEvent], tau: usize) -> Result<Buckets> {
    let mut slots = vec![Vec::new(); tau + 1];
    for (i, e) in events.iter().enumerate() {
        let s = e.total_staleness();
        if s > tau {
            return Err(SimError::StalenessOutOfRange { staleness: s, tau });
        }
        slots[s].push(i);
    }
    Ok(Buckets { slots })
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightAssignment {
    /// Weight of each arriving update, in event order.
    pub mu: Vec<f64>,
    /// Padding weight per empty bucket.
    pub pi: BTreeMap<usize, f64>,
}

impl WeightAssignment {
    pub fn mass(&self) -> f64 {
        self.mu.iter().sum::<f64>() + self.pi.values().sum::<f64>()
    }

    /// `kappa = sum_i mu_i k_i`.
    pub fn weighted_mistakes(&self, mistakes: &[u64]) -> f64 {
        self.mu.iter().zip(mistakes).map(|(m, &k)| m * k as f64).sum()
    }
}

pub fn assign_weights(
    buckets: &Buckets,
    profile: &StalenessProfile,
    mode: WeightingMode,
    mistakes: &[u64],
    noise: &NoiseModel,
) -> Result<WeightAssignment> {
    if buckets.tau() != profile.tau() {
        return Err(SimError::Contract(format!(
            "profile tau {} does not match bucket tau {}",
            profile.tau(),
            buckets.tau()
        )));
    }
    if mode == WeightingMode::FreshMistakeAware && !noise.is_noiseless() {
        return Err(SimError::Contract(
            "mistake-aware weighting is only valid on noiseless links".into(),
        ));
    }
    let n: usize = buckets.slots.iter().map(Vec::len).sum();
    let mut out = WeightAssignment {
        mu: vec![0.0; n],
        pi: BTreeMap::new(),
    };
    for (s, slot) in buckets.slots.iter().enumerate() {
        let a = profile.alpha()[s];
        if slot.is_empty() {
            out.pi.insert(s, a);
            continue;
        }
        let targets: Vec<usize> = match mode {
            WeightingMode::FreshMistakeAware if s == 0 => {
                if mistakes.len() != n {
                    return Err(SimError::Contract(
                        "mistake counts must cover every arrival".into(),
                    ));
                }
                let mistaking: Vec<usize> =
                    slot.iter().copied().filter(|&i| mistakes[i] > 0).collect();
                if mistaking.is_empty() {
                    slot.clone()
                } else {
                    mistaking
                }
            }
            _ => slot.clone(),
        };
        let share = a / targets.len() as f64;
        for i in targets {
            out.mu[i] = share;
        }
    }
    Ok(out)
}

/// Checks `sum_i mu_i Z[s_i] + sum_empty pi_s Z[s] == sum_s alpha_s Z[s]`,
/// where `z[s]` stands for `Z_{t-s}`.
pub fn alpha_identity_check(
    assignment: &WeightAssignment,
    buckets: &Buckets,
    profile: &StalenessProfile,
    z: &[f64],
) -> bool {
    let (lhs, rhs) = alpha_identity_sides(assignment, buckets, profile, z);
    (lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs().max(rhs.abs()))
}

pub fn alpha_identity_sides(
    assignment: &WeightAssignment,
    buckets: &Buckets,
    profile: &StalenessProfile,
    z: &[f64],
) -> (f64, f64) {
    let stal = buckets.staleness_of_events();
    let lhs: f64 = assignment
        .mu
        .iter()
        .zip(&stal)
        .map(|(m, &s)| m * z[s])
        .sum::<f64>()
        + assignment.pi.iter().map(|(&s, p)| p * z[s]).sum::<f64>();
    let rhs = profile.alpha().iter().zip(z).map(|(a, zs)| a * zs).sum();
    (lhs, rhs)
}

/// Current iterate plus the last `tau + 1` iterates.
#[derive(Clone, Debug, PartialEq)]
pub struct ServerState {
    round: u64,
    /// `cache[s] = w_{t-s}`; entries before round 0 are zero vectors.
    cache: VecDeque<Vec<f64>>,
}

impl ServerState {
    pub fn new(dim: usize, tau: usize) -> Self {
        Self {
            round: 0,
            cache: std::iter::repeat_n(vec![0.0; dim], tau + 1).collect(),
        }
    }

    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn tau(&self) -> usize {
        self.cache.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.cache[0].len()
    }

    pub fn current(&self) -> &[f64] {
        &self.cache[0]
    }

    /// `w_{t-s}`.
    pub fn lagged(&self, s: usize) -> Result<&[f64]> {
        self.cache
            .get(s)
            .map(Vec::as_slice)
            .ok_or(SimError::StalenessOutOfRange {
                staleness: s,
                tau: self.tau(),
            })
    }

    /// Forms `w_{t+1}` from the received models (in event order) and the
    /// padding weights, then rotates the cache.
    pub fn step(&mut self, received: &[Vec<f64>], assignment: &WeightAssignment) -> Result<()> {
        let next = self.aggregate(received, assignment)?;
        self.cache.pop_back();
        self.cache.push_front(next);
        self.round += 1;
        Ok(())
    }

    pub fn aggregate(&self, received: &[Vec<f64>], assignment: &WeightAssignment) -> Result<Vec<f64>> {
        if received.len() != assignment.mu.len() {
            return Err(SimError::Contract(format!(
                "{} received models for {} weights",
                received.len(),
                assignment.mu.len()
            )));
        }
        let mass = assignment.mass();
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(SimError::MassDeviation { mass });
        }
        let d = self.dim();
        let mut next = vec![0.0; d];
        for (v, &m) in received.iter().zip(&assignment.mu) {
            if v.len() != d {
                return Err(SimError::DimensionMismatch {
                    expected: d,
                    got: v.len(),
                });
            }
            axpy(m, v, &mut next);
        }
        for (&s, &p) in &assignment.pi {
            axpy(p, self.lagged(s)?, &mut next);
        }
        Ok(next)
    }
}

/// Functional form of [`ServerState::step`].
pub fn server_step(
    mut state: ServerState,
    received: &[Vec<f64>],
    assignment: &WeightAssignment,
) -> Result<ServerState> {
    state.step(received, assignment)?;
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::NoiseFamily;

    fn ev(client: usize, s: usize) -> ArrivalEvent {
        ArrivalEvent {
            client,
            round: 10,
            s_dl: s,
            s_ul: 0,
        }
    }

    fn profile_532() -> StalenessProfile {
        StalenessProfile::new(vec![0.5, 0.3, 0.2]).unwrap()
    }

    #[test]
    fn profile_derived_quantities() {
        let p = profile_532();
        assert!((p.mean_staleness() - 0.7).abs() < 1e-15);
        assert!((p.s_factor() - 1.7).abs() < 1e-15);
        assert_eq!(p.tails()[0], 1.0);
        assert!((p.tails()[1] - 0.5).abs() < 1e-15);
        assert!((p.tails()[2] - 0.2).abs() < 1e-15);
        assert!((p.tails().iter().sum::<f64>() - p.s_factor()).abs() < 1e-12);
    }

    #[test]
    fn profile_validation() {
        assert!(StalenessProfile::new(vec![0.5, 0.6]).is_err());
        assert!(StalenessProfile::new(vec![1.5, -0.5]).is_err());
        assert!(StalenessProfile::new(vec![]).is_err());
        let p = StalenessProfile::new(vec![0.5, 0.5 + 5e-10]).unwrap();
        assert!((p.alpha().iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn bucketize_partitions_events() {
        let b = bucketize(&[ev(0, 0), ev(1, 0), ev(2, 2)], 2).unwrap();
        assert_eq!(b.slots, vec![vec![0, 1], vec![], vec![2]]);
        let empty = bucketize(&[], 2).unwrap();
        assert!(empty.slots.iter().all(Vec::is_empty));
        let single = bucketize(&[ev(0, 0)], 0).unwrap();
        assert_eq!(single.slots, vec![vec![0]]);
        assert!(bucketize(&[ev(0, 3)], 2).is_err());
    }

    #[test]
    fn uniform_weights_with_padding() {
        let b = bucketize(&[ev(0, 0), ev(1, 0), ev(2, 2)], 2).unwrap();
        let w = assign_weights(&b, &profile_532(), WeightingMode::Uniform, &[0, 0, 0], &NoiseModel::none())
            .unwrap();
        assert_eq!(w.mu, vec![0.25, 0.25, 0.2]);
        assert_eq!(w.pi.get(&1), Some(&0.3));
        assert_eq!(w.pi.len(), 1);
        assert!((w.mass() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mistake_aware_targets_fresh_mistakers() {
        let b = bucketize(&[ev(0, 0), ev(1, 0), ev(2, 2)], 2).unwrap();
        let w = assign_weights(
            &b,
            &profile_532(),
            WeightingMode::FreshMistakeAware,
            &[0, 3, 0],
            &NoiseModel::none(),
        )
        .unwrap();
        assert_eq!(w.mu, vec![0.0, 0.5, 0.2]);
        let fresh_kappa: f64 = b.slots[0].iter().map(|&i| w.mu[i] * [0.0, 3.0, 0.0][i]).sum();
        assert!(fresh_kappa >= 0.5);
        assert!((w.mass() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn mistake_aware_rejected_on_noisy_links() {
        let b = bucketize(&[ev(0, 0)], 2).unwrap();
        let noisy = NoiseModel::new(NoiseFamily::GaussianIsotropic, 0.1, 0.0).unwrap();
        assert!(assign_weights(&b, &profile_532(), WeightingMode::FreshMistakeAware, &[1], &noisy).is_err());
        assert!(assign_weights(&b, &StalenessProfile::uniform(1), WeightingMode::Uniform, &[1], &noisy).is_err());
    }

    #[test]
    fn all_padding_round() {
        let b = bucketize(&[], 2).unwrap();
        let w = assign_weights(&b, &profile_532(), WeightingMode::Uniform, &[], &NoiseModel::none()).unwrap();
        assert!(w.mu.is_empty());
        assert_eq!(w.pi.values().copied().collect::<Vec<_>>(), vec![0.5, 0.3, 0.2]);
    }

    #[test]
    fn identity_examples() {
        let b = bucketize(&[ev(0, 0), ev(1, 0), ev(2, 2)], 2).unwrap();
        let p = profile_532();
        let w = assign_weights(&b, &p, WeightingMode::Uniform, &[0; 3], &NoiseModel::none()).unwrap();
        assert_eq!(alpha_identity_sides(&w, &b, &p, &[1.0; 3]), (1.0, 1.0));
        let (l, r) = alpha_identity_sides(&w, &b, &p, &[0.0, 1.0, 2.0]);
        assert!((l - 0.7).abs() < 1e-15 && (r - 0.7).abs() < 1e-15);
        assert!(alpha_identity_check(&w, &b, &p, &[0.0, 1.0, 2.0]));
    }

    #[test]
    fn padding_only_step_with_fresh_profile_keeps_iterate() {
        let mut st = ServerState::new(2, 0);
        st.step(&[vec![3.0, 4.0]], &WeightAssignment { mu: vec![1.0], pi: BTreeMap::new() })
            .unwrap();
        assert_eq!(st.current(), &[3.0, 4.0]);
        let p = StalenessProfile::new(vec![1.0]).unwrap();
        let b = bucketize(&[], 0).unwrap();
        let w = assign_weights(&b, &p, WeightingMode::Uniform, &[], &NoiseModel::none()).unwrap();
        let st = server_step(st, &[], &w).unwrap();
        assert_eq!(st.current(), &[3.0, 4.0]);
        assert_eq!(st.round(), 2);
    }

    #[test]
    fn padding_mixes_cached_iterates() {
        let mut st = ServerState::new(1, 2);
        for v in [1.0, 2.0, 4.0] {
            let one = WeightAssignment { mu: vec![1.0], pi: BTreeMap::new() };
            // not a valid profile round, but a valid convex combination
            st.step(&[vec![v]], &one).unwrap();
        }
        // cache: w_3 = 4, w_2 = 2, w_1 = 1
        let p = profile_532();
        let w = assign_weights(&bucketize(&[], 2).unwrap(), &p, WeightingMode::Uniform, &[], &NoiseModel::none())
            .unwrap();
        st.step(&[], &w).unwrap();
        assert!((st.current()[0] - (0.5 * 4.0 + 0.3 * 2.0 + 0.2 * 1.0)).abs() < 1e-15);
        assert_eq!(st.lagged(1).unwrap(), &[4.0]);
        assert!(st.lagged(3).is_err());
    }

    #[test]
    fn step_rejects_bad_mass() {
        let mut st = ServerState::new(1, 0);
        let bad = WeightAssignment { mu: vec![0.9], pi: BTreeMap::new() };
        assert!(matches!(st.step(&[vec![1.0]], &bad), Err(SimError::MassDeviation { .. })));
        let ok = WeightAssignment { mu: vec![1.0], pi: BTreeMap::new() };
        assert!(st.step(&[vec![1.0, 2.0]], &ok).is_err());
    }
}
