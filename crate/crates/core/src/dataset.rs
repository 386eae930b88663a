//! Margin-separable datasets partitioned across clients.
//!
//! A [`Dataset`] carries its own certificate: the stored witness separates
//! every example with margin at least `certified_margin`, and every example
//! lies inside the ball of radius `certified_radius`. Downstream bounds use
//! the certified values, never the generation targets.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::rng::{self, Purpose};
use crate::vector::{dot, norm};

pub const DEFAULT_ATTEMPT_BUDGET: u64 = 1_000_000;

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub x: Vec<f64>,
    /// Label, always `+1.0` or `-1.0`.
    pub y: f64,
}

impl Example {
    pub fn new(x: Vec<f64>, y: f64) -> Self {
        debug_assert!(y == 1.0 || y == -1.0);
        Self { x, y }
    }

    /// Signed score `y <w, x>`.
    #[inline]
    pub fn score(&self, w: &[f64]) -> f64 {
        self.y * dot(w, &self.x)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Partition {
    /// Equal contiguous chunks in generation order.
    #[default]
    Balanced,
    /// Sort by label first, then chunk: clients see mostly one class.
    LabelSkewed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenParams {
    pub dim: usize,
    pub num_clients: usize,
    pub examples_per_client: usize,
    pub target_margin: f64,
    pub radius: f64,
    pub seed: u64,
    #[serde(default)]
    pub partition: Partition,
    #[serde(default = "default_budget")]
    pub attempt_budget: u64,
}

fn default_budget() -> u64 {
    DEFAULT_ATTEMPT_BUDGET
}

impl GenParams {
    pub fn new(
        dim: usize,
        num_clients: usize,
        examples_per_client: usize,
        target_margin: f64,
        radius: f64,
        seed: u64,
    ) -> Self {
        Self {
            dim,
            num_clients,
            examples_per_client,
            target_margin,
            radius,
            seed,
            partition: Partition::Balanced,
            attempt_budget: DEFAULT_ATTEMPT_BUDGET,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(SimError::Config("dataset dimension must be positive".into()));
        }
        if self.num_clients == 0 || self.examples_per_client == 0 {
            return Err(SimError::Config(
                "num_clients and examples_per_client must be positive".into(),
            ));
        }
        if !(self.target_margin > 0.0 && self.radius > 0.0) {
            return Err(SimError::Config("margin and radius must be positive".into()));
        }
        if self.target_margin >= self.radius {
            return Err(SimError::Config(format!(
                "target margin {} must be below radius {}",
                self.target_margin, self.radius
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub clients: Vec<Vec<Example>>,
    pub witness: Vec<f64>,
    pub certified_margin: f64,
    pub certified_radius: f64,
}

/// Uniform point on the unit sphere in `dim` dimensions.
pub fn unit_direction<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let n = norm(&v);
        if n > 1e-300 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// Uniform point in the ball of the given radius.
pub fn ball_point<R: Rng + ?Sized>(dim: usize, radius: f64, rng: &mut R) -> Vec<f64> {
    let dir = unit_direction(dim, rng);
    let u: f64 = rng.random();
    let r = radius * u.powf(1.0 / dim as f64);
    dir.into_iter().map(|x| x * r).collect()
}

pub fn generate_dataset(params: &GenParams) -> Result<Dataset> {
    params.validate()?;
    let mut rng = rng::stream(params.seed, Purpose::Dataset, 0, 0, 0);
    let witness = unit_direction(params.dim, &mut rng);
    let total = params.num_clients * params.examples_per_client;
    let mut pool = Vec::with_capacity(total);
    for _ in 0..total {
        let mut attempts = 0u64;
        let example = loop {
            if attempts >= params.attempt_budget {
                return Err(SimError::RejectionBudget { attempts });
            }
            attempts += 1;
            let x = ball_point(params.dim, params.radius, &mut rng);
            let proj = dot(&witness, &x);
            if proj.abs() >= params.target_margin {
                let y = if proj > 0.0 { 1.0 } else { -1.0 };
                break Example::new(x, y);
            }
        };
        pool.push(example);
    }
    if params.partition == Partition::LabelSkewed {
        // stable: positives first
        pool.sort_by(|a, b| b.y.total_cmp(&a.y));
    }
    let mut it = pool.into_iter();
    let clients = (0..params.num_clients)
        .map(|_| it.by_ref().take(params.examples_per_client).collect())
        .collect();
    Dataset::from_parts(clients, witness)
}

impl Dataset {
    /// Builds a dataset and computes its certificate.
    pub fn from_parts(clients: Vec<Vec<Example>>, witness: Vec<f64>) -> Result<Self> {
        let mut ds = Dataset {
            clients,
            witness,
            certified_margin: 0.0,
            certified_radius: 0.0,
        };
        let wn = norm(&ds.witness);
        if (wn - 1.0).abs() > 1e-9 {
            return Err(SimError::Config(format!("witness norm {wn} is not 1")));
        }
        let d = ds.dim();
        for ex in ds.examples() {
            if ex.x.len() != d {
                return Err(SimError::DimensionMismatch {
                    expected: d,
                    got: ex.x.len(),
                });
            }
            if ex.y != 1.0 && ex.y != -1.0 {
                return Err(SimError::Config(format!("label {} not in {{-1, +1}}", ex.y)));
            }
        }
        let (margin, radius) = certify(&ds)?;
        ds.certified_margin = margin;
        ds.certified_radius = radius;
        Ok(ds)
    }

    pub fn dim(&self) -> usize {
        self.witness.len()
    }

    pub fn num_clients(&self) -> usize {
        self.clients.len()
    }

    pub fn len(&self) -> usize {
        self.clients.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The global multiset: every client's shard in client order.
    pub fn examples(&self) -> impl Iterator<Item = &Example> {
        self.clients.iter().flatten()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{} {} {} {}",
            self.dim(),
            self.num_clients(),
            self.certified_margin,
            self.certified_radius
        );
        for (i, shard) in self.clients.iter().enumerate() {
            for ex in shard {
                let _ = write!(out, "{} {}", i, ex.y as i32);
                for v in &ex.x {
                    let _ = write!(out, " {v}");
                }
                out.push('\n');
            }
        }
        out.push_str("witness");
        for v in &self.witness {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let perr = |line: usize, msg: String| SimError::Parse { line, msg };
        let (hl, header) = lines.next().ok_or(SimError::EmptyDataset)?;
        let h: Vec<&str> = header.split_whitespace().collect();
        if h.len() != 4 {
            return Err(perr(hl, "header must be `D m margin radius`".into()));
        }
        let dim: usize = h[0].parse().map_err(|e| perr(hl, format!("{e}")))?;
        let m: usize = h[1].parse().map_err(|e| perr(hl, format!("{e}")))?;
        let mut clients = vec![Vec::new(); m];
        let mut witness = None;
        for (ln, line) in lines {
            let toks: Vec<&str> = line.split_whitespace().collect();
            if toks[0] == "witness" {
                let w = parse_reals(&toks[1..], ln)?;
                if w.len() != dim {
                    return Err(perr(ln, format!("witness has {} coordinates", w.len())));
                }
                witness = Some(w);
                continue;
            }
            if toks.len() != dim + 2 {
                return Err(perr(ln, format!("expected {} fields", dim + 2)));
            }
            let client: usize = toks[0].parse().map_err(|e| perr(ln, format!("{e}")))?;
            if client >= m {
                return Err(perr(ln, format!("client {client} >= {m}")));
            }
            let y: i32 = toks[1].parse().map_err(|e| perr(ln, format!("{e}")))?;
            if y != 1 && y != -1 {
                return Err(perr(ln, format!("label {y} not in {{-1, +1}}")));
            }
            clients[client].push(Example::new(parse_reals(&toks[2..], ln)?, y as f64));
        }
        let witness = witness.ok_or_else(|| perr(0, "missing witness line".into()))?;
        Dataset::from_parts(clients, witness)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| SimError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| SimError::io(path, e))?;
        Self::from_text(&text)
    }
}

fn parse_reals(toks: &[&str], line: usize) -> Result<Vec<f64>> {
    toks.iter()
        .map(|t| {
            t.parse::<f64>().map_err(|e| SimError::Parse {
                line,
                msg: format!("{t}: {e}"),
            })
        })
        .collect()
}

/// Margin and radius certified by the stored witness.
pub fn certify(dataset: &Dataset) -> Result<(f64, f64)> {
    if dataset.is_empty() {
        return Err(SimError::EmptyDataset);
    }
    let mut margin = f64::INFINITY;
    let mut radius: f64 = 0.0;
    for ex in dataset.examples() {
        margin = margin.min(ex.score(&dataset.witness));
        radius = radius.max(norm(&ex.x));
    }
    if margin <= 0.0 {
        return Err(SimError::NotSeparated { margin });
    }
    Ok((margin, radius))
}

/// True iff `y <w, x> > 0` for every example.
pub fn is_globally_correct(w: &[f64], dataset: &Dataset) -> Result<bool> {
    if w.len() != dataset.dim() {
        return Err(SimError::DimensionMismatch {
            expected: dataset.dim(),
            got: w.len(),
        });
    }
    Ok(dataset.examples().all(|ex| ex.score(w) > 0.0))
}
