//! The two-loop framework: an outer loop picks fixture poses with smoothed
//! zooming and scores each pose by an inner actor-critic run trained from
//! scratch; a kernel Q-model fitted on the outer records is maximized with
//! CEM at test time.

use std::f64::consts::FRAC_PI_2;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bandit::ZoomingState;
use crate::cem::{cem_argmax, CemConfig, CemResult};
use crate::envs::{fixture_at, optimal_fixture, suboptimal_fixture, EnvConfig, Scene, TaskKind};
use crate::error::{check_dim, Error, Result};
use crate::geometry::{ActionBox, FixtureGeometry};
use crate::innerloop::{LearningCurve, SurrogateEnv, TrainConfig, Trainer};
use crate::qmodel::{self, QModel, QModelConfig, QSample};

/// What the outer loop is rewarded with for one inner trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OuterRewardKind {
    /// Sum of the per-episode discounted returns of the trial.
    CumulativeReturn,
    /// Success rate of the trained policy at the end of the trial.
    FinalSuccess,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OuterConfig {
    /// Box of fixture poses, relative to `pose_origin`.
    pub fixture_pose_box: ActionBox,
    /// World pose that box coordinates are added to.
    pub pose_origin: Vec<f64>,
    pub inner_episodes_per_trial: usize,
    pub outer_rounds: usize,
    /// Bandit mesh spacing in normalized box units.
    pub h: f64,
    /// Bandit horizon T^f.
    pub horizon: usize,
    /// Number of bandit instances, one per bucket of the first context
    /// feature.
    pub context_buckets: usize,
    /// Per-trial horizontal shift of the whole task (x, y); its normalized
    /// value is the context. No shift means an empty context.
    pub scene_offset: Option<ActionBox>,
    pub reward: OuterRewardKind,
    /// Weight `γ^k` on the k-th episode's return in the cumulative reward.
    pub gamma_outer: f64,
    /// Train every inner trial from this seed, so that R^f is a function of
    /// the pose alone. By default each trial draws its own seed.
    pub inner_seed: Option<u64>,
    pub train: TrainConfig,
    pub qmodel: QModelConfig,
    pub cem: CemConfig,
}

impl OuterConfig {
    /// Desk-scale defaults for `env`'s task.
    pub fn for_env(env: &EnvConfig) -> Self {
        let t = &env.target;
        let (origin, lower, upper) = match env.kind {
            TaskKind::Insertion => (
                vec![t[0], t[1], FRAC_PI_2],
                vec![-0.02, -0.03, -FRAC_PI_2],
                vec![0.03, 0.03, FRAC_PI_2],
            ),
            TaskKind::Wrench => (t.clone(), vec![-0.02, -0.02, -0.03], vec![0.02, 0.02, 0.01]),
            TaskKind::SdInsertion => (t.clone(), vec![-0.03, -0.02, 0.0], vec![0.01, 0.02, 0.01]),
        };
        Self {
            fixture_pose_box: ActionBox::new(lower, upper).expect("default pose boxes are valid"),
            pose_origin: origin,
            inner_episodes_per_trial: 200,
            outer_rounds: 60,
            h: 0.1,
            horizon: 60,
            context_buckets: 1,
            scene_offset: None,
            reward: OuterRewardKind::CumulativeReturn,
            gamma_outer: 1.0,
            inner_seed: None,
            train: TrainConfig {
                workers: 1,
                ..TrainConfig::default()
            },
            qmodel: QModelConfig {
                ridge: 0.1,
                ..QModelConfig::default()
            },
            cem: CemConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        check_dim(self.fixture_pose_box.dims(), self.pose_origin.len())?;
        if self.fixture_pose_box.dims() != 3 {
            return bad(format!(
                "fixture poses have 3 dimensions, the box has {}",
                self.fixture_pose_box.dims()
            ));
        }
        if self.outer_rounds < 1 {
            return bad("outer_rounds must be >= 1 (nothing to fit)".into());
        }
        if self.outer_rounds > self.horizon {
            return bad(format!(
                "outer_rounds {} exceeds the bandit horizon {}",
                self.outer_rounds, self.horizon
            ));
        }
        if self.inner_episodes_per_trial < 1 {
            return bad("inner_episodes_per_trial must be >= 1".into());
        }
        if self.context_buckets < 1 {
            return bad("context_buckets must be >= 1".into());
        }
        if let Some(b) = &self.scene_offset {
            check_dim(2, b.dims())?;
        }
        if !(self.gamma_outer > 0.0 && self.gamma_outer <= 1.0) {
            return bad(format!("gamma_outer must be in (0, 1], got {}", self.gamma_outer));
        }
        self.train.validate()?;
        self.cem.validate()
    }

    /// Factor applied to R^f before the bandit sees it. Confidence radii
    /// are on the scale of a unit reward, so a cumulative reward is fed in
    /// as its per-episode mean.
    pub fn bandit_reward_scale(&self) -> f64 {
        match self.reward {
            OuterRewardKind::CumulativeReturn => 1.0 / self.inner_episodes_per_trial as f64,
            OuterRewardKind::FinalSuccess => 1.0,
        }
    }

    /// Number of context features.
    pub fn context_dim(&self) -> usize {
        if self.scene_offset.is_some() {
            2
        } else {
            0
        }
    }

    /// World fixture pose for box coordinates `pose` in a scene shifted by
    /// `offset`.
    pub fn world_pose(&self, pose: &[f64], offset: [f64; 2]) -> Vec<f64> {
        let mut w: Vec<f64> = self.pose_origin.iter().zip(pose).map(|(o, p)| o + p).collect();
        w[0] += offset[0];
        w[1] += offset[1];
        w
    }

    /// Box coordinates of a world pose in the unshifted scene.
    pub fn box_pose(&self, world: &[f64]) -> Vec<f64> {
        world.iter().zip(&self.pose_origin).map(|(w, o)| w - o).collect()
    }
}

/// Bandit instance that handles `context`: buckets split the first feature
/// into equal intervals of `[0, 1]`.
pub fn context_bucket(context: &[f64], buckets: usize) -> usize {
    match context.first() {
        Some(c) => ((c.clamp(0.0, 1.0) * buckets as f64) as usize).min(buckets - 1),
        None => 0,
    }
}

/// Sum over episodes of `gamma_outer^k` times episode k's discounted
/// return.
pub fn outer_reward(curve: &LearningCurve, gamma_outer: f64) -> Result<f64> {
    if curve.episodes.is_empty() {
        return Err(Error::InvalidConfig("outer reward of a trial with no episodes".into()));
    }
    let mut weight = 1.0;
    let mut total = 0.0;
    for e in &curve.episodes {
        total += weight * e.discounted_return;
        weight *= gamma_outer;
    }
    Ok(total)
}

/// R^f of a trial under the configured reward kind.
pub fn trial_reward(curve: &LearningCurve, cfg: &OuterConfig) -> Result<f64> {
    match cfg.reward {
        OuterRewardKind::CumulativeReturn => outer_reward(curve, cfg.gamma_outer),
        OuterRewardKind::FinalSuccess => curve
            .last()
            .map(|p| p.success_rate)
            .ok_or_else(|| Error::InvalidConfig("final-success reward of a trial with no evaluation".into())),
    }
}

/// Everything an inner trial is given.
#[derive(Debug, Clone)]
pub struct TrialInput<'a> {
    pub round: usize,
    /// The task with this trial's scene shift applied.
    pub env: &'a EnvConfig,
    pub fixture: &'a FixtureGeometry,
    /// Box coordinates of the fixture pose.
    pub pose: &'a [f64],
    pub context: &'a [f64],
    pub seed: u64,
}

/// Trains a fresh policy for `episodes` episodes with the fixture in place
/// and evaluates it once at the end.
pub fn rl_inner_trial(input: &TrialInput, train: &TrainConfig, episodes: usize) -> Result<LearningCurve> {
    let mut cfg = train.clone();
    cfg.seed = input.seed;
    cfg.eval_interval = usize::MAX;
    let env = input.env.clone();
    let scene = Scene::with_fixture(input.fixture.clone());
    let mut trainer = Trainer::new(|| SurrogateEnv::new(env.clone()), cfg)?;
    trainer.run_episodes(episodes, &scene)?;
    trainer.evaluate_now(&scene)?;
    Ok(trainer.into_parts().2)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuterTrialRecord {
    pub round: usize,
    pub bucket: usize,
    pub context: Vec<f64>,
    /// Box coordinates.
    pub fixture_pose: Vec<f64>,
    pub r_f: f64,
    pub inner_curve: LearningCurve,
}

#[derive(Debug, Clone)]
pub struct OuterResult {
    pub records: Vec<OuterTrialRecord>,
    pub model: QModel,
    pub bandits: Vec<ZoomingState>,
}

impl OuterResult {
    pub fn write_records_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let (c, d) = self
            .records
            .first()
            .map_or((0, 0), |r| (r.context.len(), r.fixture_pose.len()));
        let mut header = vec!["round".to_string(), "bucket".to_string()];
        header.extend((0..c).map(|i| format!("context_{i}")));
        header.extend((0..d).map(|i| format!("pose_{i}")));
        header.extend(["r_f", "final_success", "episodes", "env_steps"].map(String::from));
        writeln!(w, "{}", header.join(","))?;
        for r in &self.records {
            let mut row = vec![r.round.to_string(), r.bucket.to_string()];
            row.extend(r.context.iter().map(|v| v.to_string()));
            row.extend(r.fixture_pose.iter().map(|v| v.to_string()));
            row.push(r.r_f.to_string());
            row.push(r.inner_curve.final_success().to_string());
            row.push(r.inner_curve.episodes.len().to_string());
            row.push(r.inner_curve.episodes.last().map_or(0, |e| e.env_steps).to_string());
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Outer loop with actor-critic inner trials.
pub fn run_outer_loop(env: &EnvConfig, outer: &OuterConfig, seed: u64) -> Result<OuterResult> {
    let train = outer.train.clone();
    let episodes = outer.inner_episodes_per_trial;
    run_outer_loop_with(env, outer, seed, |input| rl_inner_trial(input, &train, episodes))
}

/// Outer loop with a caller-supplied inner trial. Each round samples a
/// context, asks that context's bandit for a pose, runs the trial, and feeds
/// R^f back; the Q-model is fitted on all records at the end.
pub fn run_outer_loop_with<F>(env: &EnvConfig, outer: &OuterConfig, seed: u64, mut trial: F) -> Result<OuterResult>
where
    F: FnMut(&TrialInput) -> Result<LearningCurve>,
{
    env.validate()?;
    outer.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bandits = (0..outer.context_buckets)
        .map(|_| ZoomingState::with_default_metric(outer.fixture_pose_box.clone(), outer.h, outer.horizon))
        .collect::<Result<Vec<_>>>()?;
    let mut records = Vec::with_capacity(outer.outer_rounds);
    for round in 0..outer.outer_rounds {
        let (offset, context) = match &outer.scene_offset {
            Some(b) => {
                let o: Vec<f64> = (0..2).map(|i| rng.random_range(b.lower()[i]..=b.upper()[i])).collect();
                ([o[0], o[1]], b.normalize(&o))
            }
            None => ([0.0, 0.0], Vec::new()),
        };
        let bucket = context_bucket(&context, outer.context_buckets);
        let pose = bandits[bucket].select_arm(&mut rng).action;
        let mut task = env.clone();
        task.target[0] += offset[0];
        task.target[1] += offset[1];
        let fixture = fixture_at(&task, &outer.world_pose(&pose, offset))?;
        let drawn = rng.random::<u64>();
        let trial_seed = outer.inner_seed.unwrap_or(drawn);
        let curve = trial(&TrialInput {
            round,
            env: &task,
            fixture: &fixture,
            pose: &pose,
            context: &context,
            seed: trial_seed,
        })?;
        let r_f = trial_reward(&curve, outer)?;
        bandits[bucket].update(&pose, r_f * outer.bandit_reward_scale())?;
        records.push(OuterTrialRecord {
            round,
            bucket,
            context,
            fixture_pose: pose,
            r_f,
            inner_curve: curve,
        });
    }
    let samples: Vec<QSample> = records
        .iter()
        .map(|r| QSample {
            context: r.context.clone(),
            action: r.fixture_pose.clone(),
            reward: r.r_f,
        })
        .collect();
    let model = qmodel::fit(&samples, &outer.fixture_pose_box, outer.qmodel)?;
    Ok(OuterResult {
        records,
        model,
        bandits,
    })
}

/// Test-time fixture pose: the CEM maximizer of the Q-model's prediction
/// over the pose box for `context`.
pub fn test_time_policy<R: Rng + ?Sized>(
    model: &QModel,
    context: &[f64],
    cfg: &CemConfig,
    rng: &mut R,
) -> Result<CemResult> {
    check_dim(model.context_dim, context.len())?;
    cem_argmax(
        |a| model.predict(context, a).unwrap_or(f64::NAN),
        &model.action_box,
        cfg,
        rng,
    )
}

/// Fixture setting for one training condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FixtureMode {
    None,
    Optimal,
    Suboptimal,
    /// Explicit world pose.
    Pose(Vec<f64>),
}

impl FixtureMode {
    /// Parses `none`, `optimal`, `suboptimal` or `pose=x,y,θ`.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FixtureMode::None),
            "optimal" => Ok(FixtureMode::Optimal),
            "suboptimal" => Ok(FixtureMode::Suboptimal),
            _ => {
                let body = s.strip_prefix("pose=").ok_or_else(|| {
                    Error::InvalidConfig(format!(
                        "unknown fixture mode '{s}' (expected none, optimal, suboptimal or pose=x,y,θ)"
                    ))
                })?;
                let pose = body
                    .split(',')
                    .map(|v| v.trim().parse::<f64>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|e| Error::InvalidConfig(format!("fixture pose '{body}': {e}")))?;
                check_dim(3, pose.len())?;
                if pose.iter().any(|v| !v.is_finite()) {
                    return Err(Error::InvalidConfig(format!("fixture pose '{body}' is not finite")));
                }
                Ok(FixtureMode::Pose(pose))
            }
        }
    }

    pub fn name(&self) -> String {
        match self {
            FixtureMode::None => "none".into(),
            FixtureMode::Optimal => "optimal".into(),
            FixtureMode::Suboptimal => "suboptimal".into(),
            FixtureMode::Pose(p) => format!("pose={},{},{}", p[0], p[1], p[2]),
        }
    }

    pub fn scene(&self, env: &EnvConfig) -> Result<Scene> {
        Ok(match self {
            FixtureMode::None => Scene::empty(),
            FixtureMode::Optimal => Scene::with_fixture(optimal_fixture(env)),
            FixtureMode::Suboptimal => Scene::with_fixture(suboptimal_fixture(env)),
            FixtureMode::Pose(p) => Scene::with_fixture(fixture_at(env, p)?),
        })
    }
}

/// One condition × seed training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub condition: String,
    pub seed: u64,
    pub final_success: f64,
    pub env_steps: usize,
    pub curve: LearningCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: String,
    pub mean_success: f64,
    /// Population standard deviation over seeds.
    pub std_success: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub budget: usize,
    pub cells: Vec<ComparisonCell>,
    pub summary: Vec<ConditionSummary>,
}

impl ComparisonReport {
    pub fn summary_for(&self, condition: &str) -> Option<&ConditionSummary> {
        self.summary.iter().find(|s| s.condition == condition)
    }

    /// One row per cell followed by one `mean` and one `std` row per
    /// condition.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "condition,seed,final_success,env_steps")?;
        for c in &self.cells {
            writeln!(w, "{},{},{},{}", c.condition, c.seed, c.final_success, c.env_steps)?;
        }
        for s in &self.summary {
            writeln!(w, "{},mean,{},{}", s.condition, s.mean_success, self.budget)?;
            writeln!(w, "{},std,{},{}", s.condition, s.std_success, self.budget)?;
        }
        Ok(())
    }
}

/// Trains the optimal, suboptimal and no-fixture conditions for `budget`
/// environment steps per seed and aggregates final success. Cells run on up
/// to `threads` threads; the result does not depend on the thread count.
pub fn compare_conditions(
    env: &EnvConfig,
    train: &TrainConfig,
    budget: usize,
    seeds: &[u64],
    threads: usize,
) -> Result<ComparisonReport> {
    if seeds.len() < 3 {
        return Err(Error::InvalidConfig(format!(
            "a comparison needs at least 3 seeds, got {}",
            seeds.len()
        )));
    }
    let conditions = [FixtureMode::Optimal, FixtureMode::Suboptimal, FixtureMode::None];
    let jobs: Vec<(&FixtureMode, u64)> = conditions
        .iter()
        .flat_map(|c| seeds.iter().map(move |s| (c, *s)))
        .collect();
    let run = |(mode, seed): (&FixtureMode, u64)| -> Result<ComparisonCell> {
        let scene = mode.scene(env)?;
        let mut cfg = train.clone();
        cfg.seed = seed;
        cfg.total_steps = budget;
        cfg.eval_interval = cfg.eval_interval.min(budget.max(1));
        let mut trainer = Trainer::new(|| SurrogateEnv::new(env.clone()), cfg)?;
        trainer.run_until(budget, &scene)?;
        let env_steps = trainer.env_steps();
        let curve = trainer.into_parts().2;
        Ok(ComparisonCell {
            condition: mode.name(),
            seed,
            final_success: curve.final_success(),
            env_steps,
            curve,
        })
    };
    let threads = threads.max(1);
    let mut cells = Vec::with_capacity(jobs.len());
    for chunk in jobs.chunks(threads) {
        let out: Vec<Result<ComparisonCell>> = std::thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|job| s.spawn(move || run(*job))).collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("comparison worker panicked"))
                .collect()
        });
        for c in out {
            cells.push(c?);
        }
    }
    let summary = conditions
        .iter()
        .map(|c| {
            let name = c.name();
            let vals: Vec<f64> = cells
                .iter()
                .filter(|x| x.condition == name)
                .map(|x| x.final_success)
                .collect();
            let n = vals.len() as f64;
            let mean = vals.iter().sum::<f64>() / n;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            ConditionSummary {
                condition: name,
                mean_success: mean,
                std_success: var.sqrt(),
            }
        })
        .collect();
    Ok(ComparisonReport { budget, cells, summary })
}
