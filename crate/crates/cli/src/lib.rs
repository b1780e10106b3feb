//! Command implementations behind the `scaffold` binary.

pub mod config;
pub mod manifest;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use scaffold_core::bandit::{Baseline, BaselineKind, BanditHistory, ZoomingState};
use scaffold_core::curriculum::{continue_training, CurriculumMode};
use scaffold_core::envs::TaskKind;
use scaffold_core::geometry::Metric;
use scaffold_core::innerloop::{train_policy, PolicyDump};
use scaffold_core::orchestrator::{compare_conditions, run_outer_loop, test_time_policy, FixtureMode};

use config::RunConfig;
use manifest::{new_run_id, Run, RunManifest};

/// Failure classes, mapped to process exit codes.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 3,
        }
    }
}

impl From<scaffold_core::Error> for CliError {
    fn from(e: scaffold_core::Error) -> Self {
        CliError::Runtime(e.to_string())
    }
}

#[derive(Debug, Parser)]
#[command(name = "scaffold", version, about = "Fixture-scaffolding experiments at desk scale")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML file merged over the task's defaults.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory; defaults to `$SCAFFOLD_OUT/<run id>` (or `runs/<run id>`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; 1 gives bitwise-reproducible runs.
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long, value_parser = ["insertion", "wrench", "sd-insertion"])]
    pub task: Option<String>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Hard,
    PotentialField,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Smoothed zooming vs grid UCB1 vs uniform on a synthetic landscape.
    BanditBench {
        #[command(flatten)]
        common: Common,
    },
    /// Train a policy under one fixture condition.
    Train {
        #[command(flatten)]
        common: Common,
        /// none, optimal, suboptimal or pose=x,y,θ
        #[arg(long, default_value = "optimal")]
        fixture_mode: String,
    },
    /// Outer loop over fixture poses, Q-model fit and Q-map export.
    Outer {
        #[command(flatten)]
        common: Common,
    },
    /// Continue a trained policy while its fixture is removed.
    Curriculum {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: ModeArg,
        /// Policy dump written by `train`.
        #[arg(long = "policy")]
        policy_path: PathBuf,
        /// The fixture the policy was trained with.
        #[arg(long, default_value = "optimal")]
        fixture_mode: String,
    },
    /// Optimal vs suboptimal vs no fixture at equal budgets.
    Compare {
        #[command(flatten)]
        common: Common,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::BanditBench { .. } => "bandit-bench",
            Command::Train { .. } => "train",
            Command::Outer { .. } => "outer",
            Command::Curriculum { .. } => "curriculum",
            Command::Compare { .. } => "compare",
        }
    }

    fn common(&self) -> &Common {
        match self {
            Command::BanditBench { common }
            | Command::Train { common, .. }
            | Command::Outer { common }
            | Command::Curriculum { common, .. }
            | Command::Compare { common } => common,
        }
    }
}

/// Default output root: `$SCAFFOLD_OUT`, else `runs`.
pub fn output_root() -> PathBuf {
    std::env::var_os("SCAFFOLD_OUT").map_or_else(|| PathBuf::from("runs"), PathBuf::from)
}

/// Runs one command and returns the completed manifest.
pub fn run(cli: &Cli, args: Vec<String>) -> Result<RunManifest, CliError> {
    let common = cli.command.common();
    let task = common.task.as_deref().map(|t| TaskKind::parse(t).expect("clap restricts task names"));
    let mut cfg = RunConfig::load(common.config.as_deref(), task)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    let threads = common.threads.unwrap_or(cfg.train.workers);
    if threads < 1 {
        return Err(CliError::Config("--threads must be >= 1".into()));
    }
    cfg.train.workers = threads;
    cfg.outer.train.workers = threads;

    // parse everything that can fail on input before the run directory exists
    let fixture = match &cli.command {
        Command::Train { fixture_mode, .. } | Command::Curriculum { fixture_mode, .. } => {
            Some(FixtureMode::parse(fixture_mode).map_err(|e| CliError::Config(e.to_string()))?)
        }
        _ => None,
    };
    let policy = match &cli.command {
        Command::Curriculum { policy_path, .. } => Some(load_policy(policy_path)?),
        _ => None,
    };

    let name = cli.command.name();
    let run_id = new_run_id(name, cfg.seed);
    let dir = common.out.clone().unwrap_or_else(|| output_root().join(&run_id));
    let mut run = Run::start(
        &dir,
        RunManifest {
            run_id,
            command: name.to_string(),
            args,
            config: cfg.to_toml()?,
            seed: cfg.seed,
            threads,
            started: 0.0,
            finished: None,
            complete: false,
            artifacts: Vec::new(),
        },
    )?;
    run.write("config.toml", cfg.to_toml()?.as_bytes())?;

    match &cli.command {
        Command::BanditBench { .. } => bandit_bench(&cfg, &mut run)?,
        Command::Train { .. } => train(&cfg, fixture.as_ref().expect("parsed above"), &mut run)?,
        Command::Outer { .. } => outer(&cfg, &mut run)?,
        Command::Curriculum { mode, .. } => {
            let mode = match mode {
                ModeArg::Hard => CurriculumMode::HardRemoval,
                ModeArg::PotentialField => CurriculumMode::PotentialField,
            };
            let (p, v) = policy.expect("loaded above");
            curriculum(&cfg, fixture.as_ref().expect("parsed above"), mode, p, v, &mut run)?
        }
        Command::Compare { .. } => compare(&cfg, threads, &mut run)?,
    }
    run.finish()
}

fn load_policy(path: &Path) -> Result<(scaffold_core::innerloop::Policy, scaffold_core::innerloop::ValueFn), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read policy {}: {e}", path.display())))?;
    let dump: PolicyDump = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("bad policy dump {}: {e}", path.display())))?;
    dump.into_networks().map_err(|e| CliError::Config(format!("bad policy dump {}: {e}", path.display())))
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> scaffold_core::Result<()>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn json_bytes<T: serde::Serialize>(v: &T) -> Result<Vec<u8>, CliError> {
    serde_json::to_vec_pretty(v).map_err(|e| CliError::Runtime(format!("cannot encode json: {e}")))
}

/// Per-round regret CSV: `round, action_*, reward, regret, cumulative_regret`.
pub fn regret_csv(history: &BanditHistory, best: f64, dims: usize) -> Vec<u8> {
    let mut out = String::from("round,");
    for i in 0..dims {
        out += &format!("action_{i},");
    }
    out += "reward,regret,cumulative_regret\n";
    let mut cumulative = 0.0;
    for r in &history.rounds {
        let regret = best - r.reward;
        cumulative += regret;
        out += &r.round.to_string();
        for a in &r.action {
            out += &format!(",{a}");
        }
        out += &format!(",{},{regret},{cumulative}\n", r.reward);
    }
    out.into_bytes()
}

fn bandit_bench(cfg: &RunConfig, run: &mut Run) -> Result<(), CliError> {
    let b = &cfg.bandit_bench;
    let metric = Metric::for_box(b.metric, &b.action_box);
    let f = |a: &[f64]| b.landscape.value(a);
    let window = b.rounds.min(1000);
    let mut summary = String::from("algorithm,rounds,last_window_mean_reward,cumulative_regret\n");
    let runs: [(&str, Option<BaselineKind>); 3] = [
        ("smoothed-zooming", None),
        ("grid-ucb1", Some(BaselineKind::GridUcb1)),
        ("uniform", Some(BaselineKind::Uniform)),
    ];
    for (name, kind) in runs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let history = match kind {
            None => {
                let mut z = ZoomingState::new(b.action_box.clone(), b.h, b.horizon, metric.clone())?;
                z.run(f, b.rounds, &mut rng)?
            }
            Some(k) => Baseline::new(k, &b.action_box, &metric, b.h)?.run(f, b.rounds, &mut rng)?,
        };
        let tail = &history.rounds[history.rounds.len() - window..];
        let tail_mean = if window > 0 {
            tail.iter().map(|r| r.reward).sum::<f64>() / window as f64
        } else {
            0.0
        };
        let best = b.landscape.max_value();
        let regret: f64 = history.rounds.iter().map(|r| best - r.reward).sum();
        summary += &format!("{name},{},{tail_mean},{regret}\n", b.rounds);
        run.write(&format!("regret_{name}.csv"), &regret_csv(&history, best, b.action_box.dims()))?;
        println!("{name}: mean reward over the last {window} rounds {tail_mean:.4}");
    }
    run.write("summary.csv", summary.as_bytes())
}

fn train(cfg: &RunConfig, fixture: &FixtureMode, run: &mut Run) -> Result<(), CliError> {
    let scene = fixture.scene(&cfg.env).map_err(|e| CliError::Config(e.to_string()))?;
    let mut train = cfg.train.clone();
    train.seed = cfg.seed;
    let (policy, value, curve) = train_policy(&cfg.env, &scene, &train)?;
    run.write("curve.csv", &csv_bytes(|w| curve.write_csv(w))?)?;
    run.write("policy.json", &json_bytes(&PolicyDump::new(&policy, &value))?)?;
    println!(
        "{} / {}: final success {:.3} after {} steps",
        cfg.task,
        fixture.name(),
        curve.final_success(),
        train.total_steps
    );
    Ok(())
}

/// Q-map slices: orientation offsets of −15°, 0° and 15° for Insertion,
/// else the middle of the third pose dimension.
fn qmap_slices(cfg: &RunConfig) -> Vec<(String, f64)> {
    match cfg.task {
        TaskKind::Insertion => [-15.0f64, 0.0, 15.0]
            .iter()
            .map(|d| (format!("{d}"), d.to_radians()))
            .collect(),
        _ => {
            let c = cfg.outer.fixture_pose_box.center();
            vec![("mid".to_string(), c[2])]
        }
    }
}

pub const QMAP_RESOLUTION: usize = 41;

fn outer(cfg: &RunConfig, run: &mut Run) -> Result<(), CliError> {
    let result = run_outer_loop(&cfg.env, &cfg.outer, cfg.seed)?;
    run.write("trials.csv", &csv_bytes(|w| result.write_records_csv(w))?)?;
    run.write("qmodel.json", &json_bytes(&result.model)?)?;
    let context = vec![0.5; cfg.outer.context_dim()];
    let slices = qmap_slices(cfg);
    let thetas: Vec<f64> = slices.iter().map(|s| s.1).collect();
    let maps = result.model.export_qmap(&context, &thetas, QMAP_RESOLUTION)?;
    for ((label, _), map) in slices.iter().zip(&maps) {
        run.write(&format!("qmap_{label}.pgm"), &csv_bytes(|w| map.write_pgm(w))?)?;
        run.write(&format!("qmap_{label}.csv"), &csv_bytes(|w| map.write_csv(w))?)?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let best = test_time_policy(&result.model, &context, &cfg.outer.cem, &mut rng)?;
    let world = cfg.outer.world_pose(&best.best, [0.0, 0.0]);
    let mut text = String::from("frame,pose_0,pose_1,pose_2,predicted_r_f\n");
    text += &format!("box,{},{},{},{}\n", best.best[0], best.best[1], best.best[2], best.value);
    text += &format!("world,{},{},{},{}\n", world[0], world[1], world[2], best.value);
    run.write("test_pose.csv", text.as_bytes())?;
    println!(
        "{} rounds; test-time pose {:?} (predicted R^f {:.3}, fit rmse {:.3})",
        result.records.len(),
        world,
        best.value,
        result.model.train_rmse
    );
    Ok(())
}

fn curriculum(
    cfg: &RunConfig,
    fixture: &FixtureMode,
    mode: CurriculumMode,
    policy: scaffold_core::innerloop::Policy,
    value: scaffold_core::innerloop::ValueFn,
    run: &mut Run,
) -> Result<(), CliError> {
    let scene = fixture.scene(&cfg.env).map_err(|e| CliError::Config(e.to_string()))?;
    let g = scene
        .fixture
        .ok_or_else(|| CliError::Config("the curriculum needs a fixture to remove (fixture mode none)".into()))?;
    if policy.obs_dim() != cfg.env.obs_dim() || policy.act_dim() != cfg.env.action_dim() {
        return Err(CliError::Config(format!(
            "policy dimensions {}x{} do not match task {}",
            policy.obs_dim(),
            policy.act_dim(),
            cfg.task
        )));
    }
    let mut train = cfg.train.clone();
    train.seed = cfg.seed;
    let r = continue_training(policy, value, &cfg.env, &g, mode, &cfg.curriculum, &train)?;
    run.write("stages.csv", &csv_bytes(|w| r.write_stage_csv(w))?)?;
    run.write("curve.csv", &csv_bytes(|w| r.curve.write_csv(w))?)?;
    run.write("policy.json", &json_bytes(&PolicyDump::new(&r.policy, &r.value))?)?;
    println!(
        "{}: success {:.3} before removal, {:.3} at the end",
        mode.name(),
        r.initial.success_rate,
        r.final_success()
    );
    Ok(())
}

fn compare(cfg: &RunConfig, threads: usize, run: &mut Run) -> Result<(), CliError> {
    let mut train = cfg.train.clone();
    train.workers = 1;
    let report = compare_conditions(&cfg.env, &train, cfg.compare.budget, &cfg.compare.seeds, threads)
        .map_err(|e| match e {
            scaffold_core::Error::InvalidConfig(m) => CliError::Config(m),
            e => e.into(),
        })?;
    run.write("comparison.csv", &csv_bytes(|w| report.write_csv(w))?)?;
    let mut curves = String::from("condition,seed,env_steps,success_rate,mean_return\n");
    for c in &report.cells {
        for p in &c.curve.points {
            curves += &format!(
                "{},{},{},{},{}\n",
                c.condition, c.seed, p.env_steps, p.success_rate, p.mean_return
            );
        }
    }
    run.write("curves.csv", curves.as_bytes())?;
    for s in &report.summary {
        println!("{}: {:.3} ± {:.3}", s.condition, s.mean_success, s.std_success);
    }
    Ok(())
}
