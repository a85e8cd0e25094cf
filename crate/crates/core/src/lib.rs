//! Item-response curriculum model for a procedurally generated platformer.
//!
//! A variational model learns latent student ability and level difficulty
//! from `(level parameters, reward)` interactions, then proposes levels whose
//! difficulty matches a student's inferred ability.

pub mod irt;
pub mod model;
pub mod pipeline;
pub mod session;
pub mod sim;
pub mod students;

pub use irt::{
    fit_normalizer, normalize, ogive_probability, std_normal_cdf, IrtError, Normalizer, Response,
};
pub use model::{
    load_checkpoint, save_checkpoint, train, GenerationMode, LatentPosterior, ModelError,
    Observation, PermModel, TrainConfig, TrainTrace,
};
pub use pipeline::{
    compare_curricula, evaluate, stage1_collect, stage2_teach, train_perm_from_corpus, Condition,
    Corpus, InteractionRecord, MetricsReport, PipelineError, RunConfig, SessionLog, TeachMode,
};
pub use session::{AttemptReport, NextLevel, Phase, Session, SessionError};
pub use sim::{
    generate_level, is_solvable, simulate_episode, Action, EpisodeResult, Level, LevelDescriptor,
    LevelParams,
};
pub use students::{Student, StudentSpec};
