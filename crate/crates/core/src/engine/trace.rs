//! Per-round audit records and whole-run traces.

use std::io::Write;

use crate::aggregator::WeightAssignment;
use crate::config::RunConfig;
use crate::error::Result;
use crate::scheduler::ArrivalEvent;

/// What one arriving update did.
#[derive(Clone, Debug, PartialEq)]
pub struct ClientOutcome {
    pub client: usize,
    pub staleness: usize,
    pub mistakes: u64,
    pub lemma1_ok: bool,
}

/// Scalar summary of an iterate `w_t`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IterateStats {
    /// `<w*, w_t>`
    pub a: f64,
    /// `|w_t|^2`
    pub b: f64,
    pub correct: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoundRecord {
    pub t: u64,
    pub arrivals: Vec<ArrivalEvent>,
    pub assignment: WeightAssignment,
    pub clients: Vec<ClientOutcome>,
    /// `kappa_t = sum_i mu_i k_i`.
    pub kappa: f64,
    /// Stats of the iterate `w_t` the round started from.
    pub iterate: IterateStats,
}

/// A stopping time that may not have been observed within the horizon.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StopTime {
    Reached(u64),
    Censored,
}

impl StopTime {
    pub fn reached(self) -> Option<u64> {
        match self {
            StopTime::Reached(t) => Some(t),
            StopTime::Censored => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunTrace {
    pub config: RunConfig,
    pub seed: u64,
    pub margin: f64,
    pub radius: f64,
    pub rounds: Vec<RoundRecord>,
    /// Stats of the iterate after the last recorded round.
    pub final_iterate: IterateStats,
    /// `k_prefix[A] = K_A`, with `K_0 = 0`.
    pub k_prefix: Vec<f64>,
    pub phi: Vec<f64>,
    pub psi: Vec<f64>,
    pub t_hit: StopTime,
    pub t_stab: StopTime,
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.rounds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rounds.is_empty()
    }

    /// Iterate stats for `w_0..=w_A`.
    pub fn iterates(&self) -> Vec<IterateStats> {
        self.rounds
            .iter()
            .map(|r| r.iterate)
            .chain(std::iter::once(self.final_iterate))
            .collect()
    }

    pub fn a_series(&self) -> Vec<f64> {
        self.iterates().iter().map(|i| i.a).collect()
    }

    pub fn b_series(&self) -> Vec<f64> {
        self.iterates().iter().map(|i| i.b).collect()
    }

    pub fn kappas(&self) -> Vec<f64> {
        self.rounds.iter().map(|r| r.kappa).collect()
    }

    /// `K_A`, holding the last value past the end of an early-stopped run.
    pub fn k_at(&self, horizon: u64) -> f64 {
        let i = (horizon as usize).min(self.k_prefix.len() - 1);
        self.k_prefix[i]
    }

    /// Recomputes `k_prefix` from the round records.
    pub fn refresh_prefix(&mut self) {
        self.k_prefix = prefix_sums(&self.kappas());
    }

    /// Writes `t, n_arrivals, kappa, K_t, a_t, b_t, phi_t, psi_t, correct`.
    /// `K_t` is the running total including round `t`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "t", "n_arrivals", "kappa", "K_t", "a_t", "b_t", "phi_t", "psi_t", "correct",
        ])?;
        for (i, r) in self.rounds.iter().enumerate() {
            w.write_record([
                r.t.to_string(),
                r.arrivals.len().to_string(),
                r.kappa.to_string(),
                self.k_prefix[i + 1].to_string(),
                r.iterate.a.to_string(),
                r.iterate.b.to_string(),
                self.phi[i].to_string(),
                self.psi[i].to_string(),
                (r.iterate.correct as u8).to_string(),
            ])?;
        }
        w.flush().map_err(csv::Error::from)?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("in-memory write");
        String::from_utf8(buf).expect("utf8")
    }
}

pub fn prefix_sums(xs: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(xs.len() + 1);
    let mut acc = 0.0;
    out.push(acc);
    for x in xs {
        acc += x;
        out.push(acc);
    }
    out
}
