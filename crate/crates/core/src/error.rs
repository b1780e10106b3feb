use thiserror::Error;

/// Errors produced by the scaffolding library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid action box: {0}")]
    InvalidBox(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("point {0:?} lies outside the action box")]
    OutsideBox(Vec<f64>),

    #[error("non-finite reward {0}")]
    NonFiniteReward(f64),

    #[error("every sample in the batch scored non-finite")]
    AllSamplesNonFinite,

    #[error("kernel system is singular (ridge = {ridge}); use ridge > 0")]
    SingularSystem { ridge: f64 },

    #[error("episode already finished; call reset before stepping again")]
    EpisodeDone,

    #[error("could not sample a start pose outside the fixture after {0} attempts")]
    ResetFailed(usize),

    #[error(
        "non-finite loss at env step {env_step} ({what}); lower actor_lr/critic_lr \
         (currently {actor_lr}/{critic_lr}) or tighten grad_clip"
    )]
    NonFiniteLoss {
        env_step: usize,
        what: &'static str,
        actor_lr: f64,
        critic_lr: f64,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch { expected, got })
    }
}
