//! Fixture removal: the trained-with fixture is moved away in stages while
//! training continues, optionally with a repulsive field left in its place.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::envs::{EnvConfig, Scene};
use crate::error::{Error, Result};
use crate::geometry::{FixtureGeometry, PotentialField};
use crate::innerloop::{LearningCurve, Policy, SceneSchedule, SurrogateEnv, TrainConfig, Trainer, ValueFn};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemovalSchedule {
    /// Metres moved per stage.
    pub displacement_per_stage: f64,
    pub steps_per_stage: usize,
    /// Horizontal unit vector.
    pub direction: [f64; 3],
    pub max_stages: usize,
}

impl Default for RemovalSchedule {
    fn default() -> Self {
        Self {
            displacement_per_stage: 0.01,
            steps_per_stage: 2000,
            direction: [1.0, 0.0, 0.0],
            max_stages: 8,
        }
    }
}

impl RemovalSchedule {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("removal schedule: {m}")));
        if !(self.displacement_per_stage > 0.0 && self.displacement_per_stage.is_finite()) {
            return bad("displacement_per_stage must be > 0");
        }
        if self.steps_per_stage == 0 {
            return bad("steps_per_stage must be >= 1");
        }
        let [dx, dy, dz] = self.direction;
        if dz != 0.0 {
            return bad("direction must be horizontal");
        }
        if ((dx * dx + dy * dy).sqrt() - 1.0).abs() > 1e-9 {
            return bad("direction must have unit length");
        }
        Ok(())
    }

    /// Stage active at `env_step`, capped at `max_stages`.
    pub fn stage_at(&self, env_step: usize) -> usize {
        (env_step / self.steps_per_stage).min(self.max_stages)
    }

    /// Displacement of the fixture from its trained-with pose at `env_step`.
    pub fn fixture_offset(&self, env_step: usize) -> [f64; 3] {
        self.stage_offset(self.stage_at(env_step))
    }

    pub fn stage_offset(&self, stage: usize) -> [f64; 3] {
        let m = self.displacement_per_stage * stage as f64;
        self.direction.map(|d| d * m)
    }

    /// Steps to run every stage once, the last stage included.
    pub fn total_steps(&self) -> usize {
        (self.max_stages + 1) * self.steps_per_stage
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CurriculumMode {
    #[serde(rename = "hard")]
    HardRemoval,
    #[serde(rename = "potential-field")]
    PotentialField,
}

impl CurriculumMode {
    pub fn name(self) -> &'static str {
        match self {
            CurriculumMode::HardRemoval => "hard",
            CurriculumMode::PotentialField => "potential-field",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "hard" => Ok(CurriculumMode::HardRemoval),
            "potential-field" => Ok(CurriculumMode::PotentialField),
            _ => Err(Error::InvalidConfig(format!(
                "unknown curriculum mode '{s}' (expected hard or potential-field)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldParams {
    pub gain: f64,
    pub cutoff: f64,
    pub exponent: u32,
    /// Scale the gain down linearly to zero over the stages.
    pub anneal: bool,
}

impl Default for FieldParams {
    fn default() -> Self {
        // a full-scale push of 1 cm per step balances the field where the
        // peg surface meets the original wall face
        Self {
            gain: 1.2e-4,
            cutoff: 0.02,
            exponent: 1,
            anneal: false,
        }
    }
}

/// Soft stand-in for `g`, anchored at `g`'s pose with the same shape and
/// extents.
pub fn substitute_potential(g: &FixtureGeometry, gain: f64, cutoff: f64, exponent: u32) -> Result<PotentialField> {
    PotentialField::new(g.clone(), gain, cutoff, exponent)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CurriculumConfig {
    pub schedule: RemovalSchedule,
    pub field: FieldParams,
}

/// Per-stage scenes, indexed by the schedule's stage.
#[derive(Debug, Clone)]
pub struct StageScenes {
    schedule: RemovalSchedule,
    scenes: Vec<Scene>,
}

impl StageScenes {
    /// The fixture is displaced per stage and dropped once its pose leaves
    /// the task workspace. In potential-field mode the field stays at the
    /// original pose in every stage.
    pub fn new(env: &EnvConfig, fixture: &FixtureGeometry, mode: CurriculumMode, cfg: &CurriculumConfig) -> Result<Self> {
        cfg.schedule.validate()?;
        let stages = cfg.schedule.max_stages;
        let mut scenes = Vec::with_capacity(stages + 1);
        for stage in 0..=stages {
            let moved = fixture.translated(cfg.schedule.stage_offset(stage));
            let field = match mode {
                CurriculumMode::HardRemoval => None,
                CurriculumMode::PotentialField => {
                    let p = &cfg.field;
                    let gain = if p.anneal && stages > 0 {
                        p.gain * (1.0 - stage as f64 / stages as f64)
                    } else {
                        p.gain
                    };
                    Some(substitute_potential(fixture, gain, p.cutoff, p.exponent)?)
                }
            };
            scenes.push(Scene {
                fixture: env.fixture_in_workspace(&moved).then_some(moved),
                field,
            });
        }
        Ok(Self {
            schedule: cfg.schedule.clone(),
            scenes,
        })
    }

    pub fn scene(&self, stage: usize) -> &Scene {
        &self.scenes[stage.min(self.scenes.len() - 1)]
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }
}

impl SceneSchedule for StageScenes {
    fn scene_at(&self, env_step: usize) -> &Scene {
        self.scene(self.schedule.stage_at(env_step))
    }
}

/// Evaluation at the end of one stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    /// Distance the fixture had moved during the stage.
    pub fixture_offset: f64,
    pub success_rate: f64,
    pub mean_return: f64,
}

#[derive(Debug, Clone)]
pub struct CurriculumResult {
    pub policy: Policy,
    pub value: ValueFn,
    /// Evaluation before removal starts (the fixture in place).
    pub initial: StageRecord,
    pub stages: Vec<StageRecord>,
    pub curve: LearningCurve,
}

impl CurriculumResult {
    /// Success rate after the last stage.
    pub fn final_success(&self) -> f64 {
        self.stages.last().map_or(self.initial.success_rate, |s| s.success_rate)
    }

    /// Header plus one row per stage; the pre-removal evaluation is not a
    /// stage and is left out.
    pub fn write_stage_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "stage,fixture_offset,success_rate,mean_return")?;
        for s in &self.stages {
            writeln!(w, "{},{},{},{}", s.stage, s.fixture_offset, s.success_rate, s.mean_return)?;
        }
        Ok(())
    }
}

/// Continues training `policy` and `value` (with fresh optimizer state)
/// while the fixture is removed per the schedule. Runs every stage once for
/// `steps_per_stage` steps and evaluates at each stage end under that
/// stage's scene. `train.total_steps` and `train.eval_interval` are
/// replaced by the schedule's.
pub fn continue_training(
    policy: Policy,
    value: ValueFn,
    env: &EnvConfig,
    fixture: &FixtureGeometry,
    mode: CurriculumMode,
    cfg: &CurriculumConfig,
    train: &TrainConfig,
) -> Result<CurriculumResult> {
    let scenes = StageScenes::new(env, fixture, mode, cfg)?;
    let sched = &cfg.schedule;
    let mut train = train.clone();
    train.total_steps = sched.total_steps();
    train.eval_interval = sched.steps_per_stage;
    let mut trainer = Trainer::from_parts(|| SurrogateEnv::new(env.clone()), policy, value, train)?;
    let first = trainer.evaluate_now(scenes.scene(0))?;
    let initial = StageRecord {
        stage: 0,
        fixture_offset: 0.0,
        success_rate: first.success_rate,
        mean_return: first.mean_return,
    };
    let mut stages = Vec::with_capacity(scenes.len());
    for stage in 0..scenes.len() {
        trainer.run_until((stage + 1) * sched.steps_per_stage, &scenes)?;
        let p = trainer.curve.last().copied().expect("run_until evaluates at stage ends");
        stages.push(StageRecord {
            stage,
            fixture_offset: sched.displacement_per_stage * stage as f64,
            success_rate: p.success_rate,
            mean_return: p.mean_return,
        });
    }
    let (policy, value, curve) = trainer.into_parts();
    Ok(CurriculumResult {
        policy,
        value,
        initial,
        stages,
        curve,
    })
}
