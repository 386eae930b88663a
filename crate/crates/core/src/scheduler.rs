//! Arrival schedules: which client updates land in each server round and
//! how stale they are.

use std::collections::BTreeMap;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::rng::{self, Purpose};

/// One client update applied at round `round`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ArrivalEvent {
    pub client: usize,
    pub round: u64,
    pub s_dl: usize,
    pub s_ul: usize,
}

impl ArrivalEvent {
    /// Round in which the client began local work, `t - s_ul`. May be negative.
    pub fn start_round(&self) -> i64 {
        self.round as i64 - self.s_ul as i64
    }

    pub fn total_staleness(&self) -> usize {
        self.s_dl + self.s_ul
    }

    /// Server version the client trained from, `t - s`. Negative versions
    /// resolve to the zero model.
    pub fn read_version(&self) -> i64 {
        self.start_round() - self.s_dl as i64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScriptedEvent {
    pub t: u64,
    pub client: usize,
    pub s_dl: usize,
    pub s_ul: usize,
}

/// A replayable per-round arrival list.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Script {
    pub events: Vec<ScriptedEvent>,
}

impl Script {
    /// Parses `t client s_dl s_ul` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut events = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            let err = |msg: String| SimError::Schedule { line: i + 1, msg };
            if f.len() != 4 {
                return Err(err(format!("expected `t client s_dl s_ul`, got `{line}`")));
            }
            let num = |s: &str| s.parse::<u64>().map_err(|e| err(format!("{s}: {e}")));
            events.push(ScriptedEvent {
                t: num(f[0])?,
                client: num(f[1])? as usize,
                s_dl: num(f[2])? as usize,
                s_ul: num(f[3])? as usize,
            });
        }
        Ok(Script { events })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        Self::parse(&text)
    }

    pub fn to_text(&self) -> String {
        self.events
            .iter()
            .map(|e| format!("{} {} {} {}\n", e.t, e.client, e.s_dl, e.s_ul))
            .collect()
    }

    pub fn validate(&self, num_clients: usize, tau_dl: usize, tau_ul: usize) -> Result<()> {
        for (i, e) in self.events.iter().enumerate() {
            let err = |msg: String| SimError::Schedule { line: i + 1, msg };
            if e.client >= num_clients {
                return Err(err(format!("client {} >= {num_clients}", e.client)));
            }
            if e.s_dl > tau_dl || e.s_ul > tau_ul {
                return Err(err(format!(
                    "staleness ({}, {}) exceeds bounds ({tau_dl}, {tau_ul})",
                    e.s_dl, e.s_ul
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyKind {
    BernoulliUniform {
        participation_prob: f64,
        #[serde(default)]
        fresh_prob: f64,
    },
    AlwaysFresh,
    Scripted {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        path: Option<String>,
        #[serde(default)]
        events: Vec<ScriptedEvent>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchedulePolicy {
    #[serde(flatten)]
    pub kind: PolicyKind,
    #[serde(default)]
    pub allow_multiple_inflight: bool,
}

impl SchedulePolicy {
    pub fn always_fresh() -> Self {
        Self {
            kind: PolicyKind::AlwaysFresh,
            allow_multiple_inflight: false,
        }
    }

    pub fn bernoulli(participation_prob: f64, fresh_prob: f64, allow_multiple_inflight: bool) -> Self {
        Self {
            kind: PolicyKind::BernoulliUniform {
                participation_prob,
                fresh_prob,
            },
            allow_multiple_inflight,
        }
    }

    pub fn scripted(script: Script) -> Self {
        Self {
            kind: PolicyKind::Scripted {
                path: None,
                events: script.events,
            },
            allow_multiple_inflight: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let PolicyKind::BernoulliUniform {
            participation_prob,
            fresh_prob,
        } = self.kind
        {
            if !(participation_prob > 0.0 && participation_prob <= 1.0) {
                return Err(SimError::Config(format!(
                    "participation_prob {participation_prob} not in (0, 1]"
                )));
            }
            if !(0.0..=1.0).contains(&fresh_prob) {
                return Err(SimError::Config(format!("fresh_prob {fresh_prob} not in [0, 1]")));
            }
        }
        Ok(())
    }

    /// Resolves a scripted policy's events, loading from `path` if needed.
    pub fn script(&self, base_dir: Option<&Path>) -> Result<Option<Script>> {
        match &self.kind {
            PolicyKind::Scripted { path, events } => {
                let mut all = events.clone();
                if let Some(p) = path {
                    let p = match base_dir {
                        Some(dir) if Path::new(p).is_relative() => dir.join(p),
                        _ => Path::new(p).to_path_buf(),
                    };
                    all.extend(Script::load(&p)?.events);
                }
                Ok(Some(Script { events: all }))
            }
            _ => Ok(None),
        }
    }
}

/// Constructive lower bound on `P(client i lands fresh in round t | history)`.
///
/// Errors for scripted policies and for blocking (one-in-flight) Bernoulli
/// clients, where no history-free bound exists.
pub fn lower_bound_fresh_prob(policy: &SchedulePolicy) -> Result<f64> {
    match policy.kind {
        PolicyKind::AlwaysFresh => Ok(1.0),
        PolicyKind::BernoulliUniform {
            participation_prob,
            fresh_prob,
        } => {
            if policy.allow_multiple_inflight {
                Ok(participation_prob * fresh_prob)
            } else {
                Err(SimError::Contract(
                    "no constructive fresh-participation bound with one job in flight per client"
                        .into(),
                ))
            }
        }
        PolicyKind::Scripted { .. } => Err(SimError::Contract(
            "scripted schedules have no constructive fresh-participation bound".into(),
        )),
    }
}

/// Stateful arrival generator for one run.
#[derive(Clone, Debug)]
pub struct Scheduler {
    policy: SchedulePolicy,
    num_clients: usize,
    tau_dl: usize,
    tau_ul: usize,
    seed: u64,
    queue: BTreeMap<u64, Vec<ArrivalEvent>>,
    /// First round at which each client may start a new job (blocking mode).
    free_from: Vec<u64>,
    started: u64,
    landed: u64,
}

impl Scheduler {
    /// `script` must be supplied (already resolved) for scripted policies.
    pub fn new(
        policy: SchedulePolicy,
        script: Option<&Script>,
        num_clients: usize,
        tau_dl: usize,
        tau_ul: usize,
        seed: u64,
    ) -> Result<Self> {
        policy.validate()?;
        let mut queue: BTreeMap<u64, Vec<ArrivalEvent>> = BTreeMap::new();
        let mut started = 0;
        if let PolicyKind::Scripted { .. } = policy.kind {
            let script = script.ok_or_else(|| {
                SimError::Config("scripted policy requires a resolved script".into())
            })?;
            script.validate(num_clients, tau_dl, tau_ul)?;
            for e in &script.events {
                queue.entry(e.t).or_default().push(ArrivalEvent {
                    client: e.client,
                    round: e.t,
                    s_dl: e.s_dl,
                    s_ul: e.s_ul,
                });
                started += 1;
            }
        }
        Ok(Self {
            policy,
            num_clients,
            tau_dl,
            tau_ul,
            seed,
            queue,
            free_from: vec![0; num_clients],
            started,
            landed: 0,
        })
    }

    pub fn tau(&self) -> usize {
        self.tau_dl + self.tau_ul
    }

    /// Jobs started so far (for scripted policies, the whole script).
    pub fn started(&self) -> u64 {
        self.started
    }

    pub fn landed(&self) -> u64 {
        self.landed
    }

    pub fn pending(&self) -> u64 {
        self.queue.values().map(|v| v.len() as u64).sum()
    }

    pub fn in_flight(&self, client: usize, t: u64) -> bool {
        self.free_from[client] > t
    }

    /// Events landing at round `t`, sorted by `(client, start round)`.
    /// Rounds must be requested in increasing order.
    pub fn next_arrivals(&mut self, t: u64) -> Vec<ArrivalEvent> {
        match self.policy.kind {
            PolicyKind::AlwaysFresh => {
                for client in 0..self.num_clients {
                    self.start(ArrivalEvent {
                        client,
                        round: t,
                        s_dl: 0,
                        s_ul: 0,
                    });
                }
            }
            PolicyKind::BernoulliUniform {
                participation_prob,
                fresh_prob,
            } => {
                for client in 0..self.num_clients {
                    if !self.policy.allow_multiple_inflight && self.in_flight(client, t) {
                        continue;
                    }
                    let mut rng =
                        rng::stream(self.seed, Purpose::Schedule, client as u64, t, 0);
                    if !rng.random_bool(participation_prob) {
                        continue;
                    }
                    let (s_dl, s_ul) = if rng.random_bool(fresh_prob) {
                        (0, 0)
                    } else {
                        (
                            rng.random_range(0..=self.tau_dl),
                            rng.random_range(0..=self.tau_ul),
                        )
                    };
                    self.start(ArrivalEvent {
                        client,
                        round: t + s_ul as u64,
                        s_dl,
                        s_ul,
                    });
                }
            }
            PolicyKind::Scripted { .. } => {}
        }
        // drop anything scheduled before t (rounds skipped by the caller)
        while let Some((&r, _)) = self.queue.first_key_value() {
            if r >= t {
                break;
            }
            self.queue.pop_first();
        }
        let mut out = self.queue.remove(&t).unwrap_or_default();
        out.sort_by_key(|e| (e.client, e.start_round(), e.s_dl));
        self.landed += out.len() as u64;
        out
    }

    fn start(&mut self, event: ArrivalEvent) {
        self.started += 1;
        let land = event.round;
        self.free_from[event.client] = self.free_from[event.client].max(land + 1);
        self.queue.entry(land).or_default().push(event);
    }
}

/// Fraction of rounds in which each staleness bucket `0..=tau` is nonempty.
pub fn estimate_occupancy(
    policy: &SchedulePolicy,
    script: Option<&Script>,
    num_clients: usize,
    tau_dl: usize,
    tau_ul: usize,
    seed: u64,
    rounds: u64,
) -> Result<Vec<f64>> {
    let mut sched = Scheduler::new(policy.clone(), script, num_clients, tau_dl, tau_ul, seed)?;
    let tau = tau_dl + tau_ul;
    let mut hits = vec![0u64; tau + 1];
    for t in 0..rounds {
        let mut seen = vec![false; tau + 1];
        for e in sched.next_arrivals(t) {
            seen[e.total_staleness()] = true;
        }
        for (h, s) in hits.iter_mut().zip(seen) {
            *h += s as u64;
        }
    }
    Ok(hits
        .into_iter()
        .map(|h| h as f64 / rounds.max(1) as f64)
        .collect())
}
