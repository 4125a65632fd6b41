//! Hand-written networks with manual backpropagation.

pub mod actor;
pub mod checkpoint;
pub mod critic;
pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod params;

pub use actor::{argmax, entropy, sample_categorical, Actor, ActorCache, ActorConfig};
pub use checkpoint::{config_digest, Checkpoint};
pub use critic::{AttentionState, Critic, CriticCache, CriticConfig, HeadMode};
pub use gradcheck::{gradient_check, GradCheckReport, Probe};
pub use optim::{Adam, AdamConfig};
pub use params::{soft_update, ParamSet, Tensor};
