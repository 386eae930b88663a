//! Command-line driver for the stale-aggregation perceptron simulator.
//!
//! Exit status: 0 when every check passes, 2 for configuration errors,
//! 3 for I/O errors, 4 when a pathwise invariant is violated and 5 when a
//! statistical check fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use stale_ipm::config::{ExperimentConfig, RunConfig};
use stale_ipm::dataset::{generate_dataset, Dataset};
use stale_ipm::engine::{
    check_noiseless_bound, check_one_step_noiseless, check_window_permanence, corrupt_kappa,
    monte_carlo_with_dataset, prepare_dataset, run_with_dataset, Execution, MonteCarloSummary,
    RunTrace,
};
use stale_ipm::experiment::{
    design_profile, sweep, write_sweep_csv, DEFAULT_RELIABILITY_THRESHOLD,
};
use stale_ipm::rng::replica_seed;
use stale_ipm::scheduler::estimate_occupancy;
use stale_ipm::SimError;

const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_INVARIANT: u8 = 4;
const EXIT_STATISTICAL: u8 = 5;

/// Width of the one-sided interval used by the statistical verdicts, in SEs.
const VERDICT_SE: f64 = 2.0;

#[derive(Parser, Debug)]
#[command(name = "stale-ipm", version, about = "Semi-asynchronous perceptron aggregation simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// TOML configuration file; built-in baseline when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Base seed (overrides the config).
    #[arg(long, env = "STALE_IPM_SEED")]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "STALE_IPM_OUT", default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct Replicas {
    /// Monte Carlo replicas (overrides the config).
    #[arg(long)]
    reps: Option<usize>,
    /// Worker threads for replicas.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the dataset described by a run config and write it as text.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Output file; defaults to `<out>/dataset.txt`.
        #[arg(long)]
        file: Option<PathBuf>,
    },
    /// Run Monte Carlo replicas and report checker verdicts.
    Run {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        replicas: Replicas,
        /// Tamper with the recorded kappa of this round in replica 0 before
        /// checking, to confirm the checkers notice.
        #[arg(long)]
        corrupt_round: Option<u64>,
    },
    /// Run every (profile, V) cell of an experiment grid.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        replicas: Replicas,
    },
    /// Pick a staleness profile from per-bucket occupancy frequencies.
    ProfileDesign {
        #[command(flatten)]
        common: Common,
        /// Comma-separated frequencies for buckets 0..=tau; estimated from
        /// the configured schedule when omitted.
        #[arg(long, value_delimiter = ',')]
        freqs: Option<Vec<f64>>,
        /// A bucket is reliable when its frequency exceeds this.
        #[arg(long, default_value_t = DEFAULT_RELIABILITY_THRESHOLD)]
        threshold: f64,
        /// Rounds used to estimate occupancy.
        #[arg(long, default_value_t = 10_000)]
        rounds: u64,
    },
    /// Quick end-to-end check that the simulator and its checkers work.
    SelfTest {
        #[arg(long, env = "STALE_IPM_SEED")]
        seed: Option<u64>,
    },
}

/// How a finished command should exit.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
enum Outcome {
    Pass,
    Statistical,
    Invariant,
}

impl Outcome {
    fn code(self) -> u8 {
        match self {
            Outcome::Pass => 0,
            Outcome::Statistical => EXIT_STATISTICAL,
            Outcome::Invariant => EXIT_INVARIANT,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(outcome) => ExitCode::from(outcome.code()),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(error_code(&e))
        }
    }
}

fn error_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(sim) = cause.downcast_ref::<SimError>() {
            return match sim {
                SimError::Io { .. } => EXIT_IO,
                s if s.is_config() => EXIT_CONFIG,
                _ => EXIT_INVARIANT,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    EXIT_CONFIG
}

fn dispatch(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::GenData { common, file } => cmd_gen_data(&common, file),
        Command::Run {
            common,
            replicas,
            corrupt_round,
        } => cmd_run(&common, &replicas, corrupt_round),
        Command::Sweep { common, replicas } => cmd_sweep(&common, &replicas),
        Command::ProfileDesign {
            common,
            freqs,
            threshold,
            rounds,
        } => cmd_profile_design(&common, freqs, threshold, rounds),
        Command::SelfTest { seed } => cmd_self_test(seed),
    }
}

fn load_run_config(common: &Common) -> Result<RunConfig> {
    let mut cfg = match &common.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::baseline(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
        cfg.dataset.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_out(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| SimError::io(dir, e))?;
    Ok(())
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| SimError::io(path, e))?;
    Ok(())
}

fn cmd_gen_data(common: &Common, file: Option<PathBuf>) -> Result<Outcome> {
    let cfg = load_run_config(common)?;
    cfg.dataset.validate()?;
    let ds = generate_dataset(&cfg.dataset)?;
    let path = match file {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|p| !p.as_os_str().is_empty()) {
                create_out(parent)?;
            }
            p
        }
        None => {
            create_out(&common.out)?;
            common.out.join("dataset.txt")
        }
    };
    ds.save(&path)?;
    println!(
        "wrote {} ({} examples, D={}, m={}) certified margin={} radius={}",
        path.display(),
        ds.len(),
        ds.dim(),
        ds.num_clients(),
        ds.certified_margin,
        ds.certified_radius
    );
    Ok(Outcome::Pass)
}

/// One checker verdict line.
struct Verdict {
    name: &'static str,
    /// `None` when the checker does not apply to this configuration.
    pass: Option<bool>,
    pathwise: bool,
    detail: String,
}

impl Verdict {
    fn line(&self) -> String {
        let tag = match self.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "SKIP",
        };
        format!("{tag} {}: {}", self.name, self.detail)
    }
}

fn outcome_of(verdicts: &[Verdict]) -> Outcome {
    verdicts
        .iter()
        .filter(|v| v.pass == Some(false))
        .map(|v| {
            if v.pathwise {
                Outcome::Invariant
            } else {
                Outcome::Statistical
            }
        })
        .max()
        .unwrap_or(Outcome::Pass)
}

fn rounds_list(rounds: &[u64]) -> String {
    const SHOW: usize = 10;
    let head: Vec<String> = rounds.iter().take(SHOW).map(u64::to_string).collect();
    let more = if rounds.len() > SHOW { ", ..." } else { "" };
    format!("[{}{more}]", head.join(", "))
}

fn summary_verdicts(s: &MonteCarloSummary) -> Vec<Verdict> {
    let mut out = Vec::new();

    let mut ok = true;
    let cells: Vec<String> = s
        .horizons
        .iter()
        .map(|h| {
            let lo = h.k.mean - VERDICT_SE * h.k.se;
            ok &= lo <= h.bound_thm1;
            format!(
                "A={} mean K={:.3} (se {:.3}, 95% CI [{:.3}, {:.3}]) bound={:.3}",
                h.horizon, h.k.mean, h.k.se, h.k.ci_lo, h.k.ci_hi, h.bound_thm1
            )
        })
        .collect();
    out.push(Verdict {
        name: "theorem1",
        pass: Some(ok),
        pathwise: false,
        detail: cells.join("; "),
    });

    out.push(Verdict {
        name: "lemma1",
        pass: Some(s.lemma1_violations == 0),
        pathwise: true,
        detail: format!(
            "{} violations over {} client updates",
            s.lemma1_violations, s.lemma1_checked
        ),
    });

    for (name, count) in [
        ("one-step", s.one_step_violations),
        ("noiseless-bound", s.bound_violations),
        ("window-permanence", s.window_violations),
    ] {
        out.push(if s.noiseless {
            Verdict {
                name,
                pass: Some(count == 0),
                pathwise: true,
                detail: format!("{count} violating rounds over {} replicas", s.replicas),
            }
        } else {
            Verdict {
                name,
                pass: None,
                pathwise: true,
                detail: "noisy links".into(),
            }
        });
    }

    out.push(match s.stabilization {
        Some(b) => {
            let hit = s.t_hit.reached;
            let stab = s.t_stab.reached;
            let ok = hit.mean - VERDICT_SE * hit.se <= b.hit
                && stab.mean - VERDICT_SE * stab.se <= b.stab;
            Verdict {
                name: "theorem2",
                pass: Some(ok),
                pathwise: false,
                detail: format!(
                    "mean T_hit={:.2} (se {:.2}) bound={:.2}; mean T_stab={:.2} (se {:.2}) bound={:.2}; censored={}",
                    hit.mean, hit.se, b.hit, stab.mean, stab.se, b.stab, s.t_stab.censored
                ),
            }
        }
        None => Verdict {
            name: "theorem2",
            pass: None,
            pathwise: false,
            detail: "needs noiseless links, mistake-aware weighting and an unconditional fresh probability".into(),
        },
    });
    out
}

fn corruption_verdict(trace: &RunTrace, round: u64) -> Result<Verdict> {
    let mut tampered = trace.clone();
    corrupt_kappa(&mut tampered, round, 1.0)?;
    let profile = tampered.config.staleness.profile.clone();
    let flagged =
        check_one_step_noiseless(&tampered, &profile, tampered.margin, tampered.radius)?;
    let caught = flagged.contains(&round);
    Ok(Verdict {
        name: "one-step (corrupted replica 0)",
        pass: Some(flagged.is_empty()),
        pathwise: true,
        detail: format!(
            "kappa of round {round} raised by 1; flagged rounds {}{}",
            rounds_list(&flagged),
            if caught {
                format!("; injected round {round} identified")
            } else {
                String::new()
            }
        ),
    })
}

fn cmd_run(common: &Common, replicas: &Replicas, corrupt_round: Option<u64>) -> Result<Outcome> {
    let mut cfg = load_run_config(common)?;
    if let Some(r) = replicas.reps {
        cfg.replicas = r;
    }
    cfg.validate()?;
    if corrupt_round.is_some() && !cfg.noise.is_noiseless() {
        return Err(SimError::Config("--corrupt-round needs a noiseless config".into()).into());
    }
    let dataset = prepare_dataset(&cfg)?;
    let exec = Execution::with_jobs(replicas.jobs);
    let summary = monte_carlo_with_dataset(&cfg, &dataset, cfg.replicas, exec)?;
    let trace = run_with_dataset(&cfg, &dataset, replica_seed(cfg.seed, 0))?;

    let mut verdicts = summary_verdicts(&summary);
    if let Some(round) = corrupt_round {
        verdicts.push(corruption_verdict(&trace, round)?);
    }

    create_out(&common.out)?;
    write_file(&common.out.join("config.toml"), &cfg.to_toml())?;
    write_file(&common.out.join("trace.csv"), &trace.to_csv_string())?;
    write_file(&common.out.join("summary.csv"), &summary.to_csv_string())?;
    let lines: Vec<String> = verdicts.iter().map(Verdict::line).collect();
    let mut text = lines.join("\n");
    text.push('\n');
    write_file(&common.out.join("verdicts.txt"), &text)?;
    print!("{text}");
    Ok(outcome_of(&verdicts))
}

fn cmd_sweep(common: &Common, replicas: &Replicas) -> Result<Outcome> {
    let path = common
        .config
        .as_ref()
        .ok_or_else(|| SimError::Config("sweep needs --config with a [sweep] section".into()))?;
    let mut exp = ExperimentConfig::load(path)?;
    if let Some(seed) = common.seed {
        exp.run.seed = seed;
        exp.run.dataset.seed = seed;
    }
    let reps = replicas.reps.unwrap_or(exp.run.replicas);
    let cells = sweep(&exp, reps, Execution::with_jobs(replicas.jobs))?;

    create_out(&common.out)?;
    write_file(&common.out.join("config.toml"), &exp.to_toml())?;
    let csv_path = common.out.join("sweep.csv");
    let file = fs::File::create(&csv_path).map_err(|e| SimError::io(&csv_path, e))?;
    write_sweep_csv(&cells, std::io::BufWriter::new(file))?;

    let mut outcome = Outcome::Pass;
    for cell in &cells {
        let verdicts = summary_verdicts(&cell.summary);
        outcome = outcome.max(outcome_of(&verdicts));
        let failed: Vec<&str> = verdicts
            .iter()
            .filter(|v| v.pass == Some(false))
            .map(|v| v.name)
            .collect();
        println!(
            "alpha={:?} V={}: {}",
            cell.profile.alpha(),
            cell.energy,
            if failed.is_empty() {
                "PASS".to_string()
            } else {
                format!("FAIL {}", failed.join(", "))
            }
        );
    }
    println!("wrote {}", csv_path.display());
    Ok(outcome)
}

fn cmd_profile_design(
    common: &Common,
    freqs: Option<Vec<f64>>,
    threshold: f64,
    rounds: u64,
) -> Result<Outcome> {
    let freqs = match freqs {
        Some(f) => f,
        None => {
            let cfg = load_run_config(common)?;
            let script = cfg.schedule.script(None)?;
            let f = estimate_occupancy(
                &cfg.schedule,
                script.as_ref(),
                cfg.dataset.num_clients,
                cfg.staleness.tau_dl,
                cfg.staleness.tau_ul,
                cfg.seed,
                rounds,
            )?;
            println!("estimated occupancy over {rounds} rounds: {f:?}");
            f
        }
    };
    let design = design_profile(&freqs, threshold)?;
    if design.fallback {
        println!("warning: no bucket occupied more often than {threshold}; using uniform profile");
    }
    println!(
        "alpha = {:?} (mean staleness {})",
        design.profile.alpha(),
        design.profile.mean_staleness()
    );
    Ok(Outcome::Pass)
}

fn cmd_self_test(seed: Option<u64>) -> Result<Outcome> {
    let mut cfg = RunConfig::baseline();
    if let Some(s) = seed {
        cfg.seed = s;
        cfg.dataset.seed = s;
    }
    cfg.horizon = 300;
    let ds: Dataset = prepare_dataset(&cfg).context("generating self-test dataset")?;
    let summary = monte_carlo_with_dataset(&cfg, &ds, 8, Execution::Sequential)?;
    let mut verdicts = summary_verdicts(&summary);

    let trace = run_with_dataset(&cfg, &ds, replica_seed(cfg.seed, 0))?;
    let extra = [
        check_noiseless_bound(&trace).is_empty(),
        check_window_permanence(&trace).is_empty(),
    ];
    verdicts.push(Verdict {
        name: "single-trace checks",
        pass: Some(extra.iter().all(|&b| b)),
        pathwise: true,
        detail: format!("{} rounds", trace.len()),
    });

    // The checker must flag a tampered round that it would otherwise accept.
    let target = trace.rounds.iter().rev().find(|r| r.kappa == 0.0).map(|r| r.t);
    verdicts.push(match target {
        Some(round) => {
            let v = corruption_verdict(&trace, round)?;
            let caught = v.pass == Some(false) && v.detail.contains("identified");
            Verdict {
                name: "checker sensitivity",
                pass: Some(caught),
                pathwise: true,
                detail: v.detail,
            }
        }
        None => Verdict {
            name: "checker sensitivity",
            pass: None,
            pathwise: true,
            detail: "no quiet round to tamper with".into(),
        },
    });

    for v in &verdicts {
        println!("{}", v.line());
    }
    Ok(outcome_of(&verdicts))
}
