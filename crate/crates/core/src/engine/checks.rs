//! Bounds and pathwise invariant checkers over a recorded trace.

use crate::aggregator::StalenessProfile;
use crate::error::{Result, SimError};
use crate::perceptron::within;

use super::trace::{RunTrace, StopTime};

/// `S R^2 / gamma^2 + sqrt(S A V) / gamma`.
pub fn theorem1_bound(s_factor: f64, radius: f64, margin: f64, horizon: u64, energy: f64) -> Result<f64> {
    if margin.is_nan() || margin <= 0.0 {
        return Err(SimError::Contract(format!("margin {margin} must be positive")));
    }
    Ok(s_factor * radius * radius / (margin * margin)
        + (s_factor * horizon as f64 * energy).sqrt() / margin)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StabilizationBounds {
    /// Bound on the expected first globally correct round.
    pub hit: f64,
    /// Bound on the expected round after which every iterate is correct.
    pub stab: f64,
}

/// `hit = S R^2 / (alpha_0 p_min gamma^2)` and `stab = (tau + 1) hit`.
pub fn theorem2_bounds(
    s_factor: f64,
    radius: f64,
    margin: f64,
    alpha0: f64,
    p_min: f64,
    tau: usize,
) -> Result<StabilizationBounds> {
    if !(alpha0 > 0.0 && p_min > 0.0) {
        return Err(SimError::Contract(format!(
            "stabilization bound needs alpha_0 > 0 and p_min > 0 (got {alpha0}, {p_min})"
        )));
    }
    if margin.is_nan() || margin <= 0.0 {
        return Err(SimError::Contract(format!("margin {margin} must be positive")));
    }
    let hit = s_factor * radius * radius / (alpha0 * p_min * margin * margin);
    Ok(StabilizationBounds {
        hit,
        stab: (tau as f64 + 1.0) * hit,
    })
}

/// Tail-sum potentials `Phi_t = sum_j c_j a_{t-j}` and `Psi_t = sum_j c_j b_{t-j}`
/// for `t = 0..=len`, with negative indices contributing zero.
pub fn compute_potentials(trace: &RunTrace, profile: &StalenessProfile) -> (Vec<f64>, Vec<f64>) {
    let c = profile.tails();
    let conv = |xs: &[f64]| -> Vec<f64> {
        (0..xs.len())
            .map(|t| {
                c.iter()
                    .enumerate()
                    .take(t + 1)
                    .map(|(j, cj)| cj * xs[t - j])
                    .sum()
            })
            .collect()
    };
    (conv(&trace.a_series()), conv(&trace.b_series()))
}

/// Rounds `t` where `Phi_{t+1} >= Phi_t + gamma kappa_t` or
/// `Psi_{t+1} <= Psi_t + R^2 kappa_t` fails. Only meaningful on noiseless runs.
pub fn check_one_step_noiseless(
    trace: &RunTrace,
    profile: &StalenessProfile,
    margin: f64,
    radius: f64,
) -> Result<Vec<u64>> {
    if !trace.config.noise.is_noiseless() {
        return Err(SimError::Contract(
            "one-step potential check applies to noiseless traces only".into(),
        ));
    }
    let (phi, psi) = compute_potentials(trace, profile);
    let r2 = radius * radius;
    Ok(trace
        .rounds
        .iter()
        .enumerate()
        .filter(|(t, r)| {
            let (prog_l, prog_r) = (phi[t + 1], phi[*t] + margin * r.kappa);
            let (norm_l, norm_r) = (psi[t + 1], psi[*t] + r2 * r.kappa);
            prog_l < prog_r - within(prog_l, prog_r) || norm_l > norm_r + within(norm_l, norm_r)
        })
        .map(|(_, r)| r.t)
        .collect())
}

/// Horizons `A` at which `K_A > S R^2 / gamma^2` (beyond 1e-9 relative).
pub fn check_noiseless_bound(trace: &RunTrace) -> Vec<u64> {
    let s = trace.config.staleness.profile.s_factor();
    let bound = s * trace.radius * trace.radius / (trace.margin * trace.margin);
    trace
        .k_prefix
        .iter()
        .enumerate()
        .skip(1)
        .filter(|(_, &k)| k > bound + 1e-9 * bound.abs().max(1.0))
        .map(|(a, _)| a as u64)
        .collect()
}

/// Indices of incorrect iterates that follow `tau + 1` consecutive correct ones.
pub fn check_window_permanence(trace: &RunTrace) -> Vec<u64> {
    let window = trace.config.tau() + 1;
    let mut streak = 0usize;
    let mut armed = false;
    let mut out = Vec::new();
    for (t, it) in trace.iterates().iter().enumerate() {
        if it.correct {
            streak += 1;
            if streak >= window {
                armed = true;
            }
        } else {
            streak = 0;
            if armed {
                out.push(t as u64);
            }
        }
    }
    out
}

/// First correct iterate, and the start of the final all-correct stretch
/// once it is certified by `tau + 1` consecutive correct iterates.
pub fn extract_stop_times(trace: &RunTrace) -> (StopTime, StopTime) {
    let its = trace.iterates();
    let hit = its
        .iter()
        .position(|i| i.correct)
        .map_or(StopTime::Censored, |t| StopTime::Reached(t as u64));
    let start = its.iter().rposition(|i| !i.correct).map_or(0, |t| t + 1);
    let window = trace.config.tau() + 1;
    let stab = if start + window <= its.len() {
        StopTime::Reached(start as u64)
    } else {
        StopTime::Censored
    };
    (hit, stab)
}

/// Per-round residuals of the expected progress and norm recursions:
/// `a_{t+1} - sum_s alpha_s a_{t-s} - gamma kappa_t` and
/// `sum_s alpha_s b_{t-s} + R^2 kappa_t + V - b_{t+1}`.
/// Both are nonnegative in expectation.
pub fn lemma2_residuals(
    trace: &RunTrace,
    profile: &StalenessProfile,
    margin: f64,
    radius: f64,
    energy: f64,
) -> (Vec<f64>, Vec<f64>) {
    let a = trace.a_series();
    let b = trace.b_series();
    let alpha = profile.alpha();
    let mix = |xs: &[f64], t: usize| -> f64 {
        alpha
            .iter()
            .enumerate()
            .filter(|(s, _)| *s <= t)
            .map(|(s, al)| al * xs[t - s])
            .sum()
    };
    trace
        .rounds
        .iter()
        .enumerate()
        .map(|(t, r)| {
            (
                a[t + 1] - mix(&a, t) - margin * r.kappa,
                mix(&b, t) + radius * radius * r.kappa + energy - b[t + 1],
            )
        })
        .unzip()
}

/// Adds `delta` to the recorded `kappa` of `round` and refreshes `K`.
/// Used to confirm the checkers notice tampering.
pub fn corrupt_kappa(trace: &mut RunTrace, round: u64, delta: f64) -> Result<()> {
    let rec = trace
        .rounds
        .iter_mut()
        .find(|r| r.t == round)
        .ok_or_else(|| SimError::Contract(format!("round {round} not in trace")))?;
    rec.kappa += delta;
    trace.refresh_prefix();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn theorem1_arithmetic() {
        assert_eq!(theorem1_bound(1.0, 1.0, 0.5, 12345, 0.0).unwrap(), 4.0);
        assert!((theorem1_bound(1.0, 1.0, 0.5, 100, 0.04).unwrap() - 8.0).abs() < 1e-12);
        for a in [1, 10, 1000] {
            assert_eq!(theorem1_bound(1.7, 2.0, 0.3, a, 0.0).unwrap(), 1.7 * 4.0 / 0.09);
        }
        assert!(theorem1_bound(1.0, 1.0, 0.0, 1, 0.0).is_err());
    }

    #[test]
    fn theorem2_arithmetic() {
        let b = theorem2_bounds(1.0, 1.0, 0.5, 1.0, 1.0, 0).unwrap();
        assert_eq!((b.hit, b.stab), (4.0, 4.0));
        let half = theorem2_bounds(1.0, 1.0, 0.5, 1.0, 0.5, 0).unwrap();
        let full = theorem2_bounds(1.0, 1.0, 0.5, 1.0, 1.0, 0).unwrap();
        assert_eq!(half.hit, 2.0 * full.hit);
        let t2 = theorem2_bounds(1.0, 1.0, 0.5, 1.0, 1.0, 2).unwrap();
        assert_eq!(t2.stab, 3.0 * t2.hit);
        assert!(theorem2_bounds(1.0, 1.0, 0.5, 0.0, 1.0, 0).is_err());
        assert!(theorem2_bounds(1.0, 1.0, 0.5, 1.0, 0.0, 0).is_err());
    }
}
