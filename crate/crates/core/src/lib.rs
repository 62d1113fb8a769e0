//! Cooperative multi-agent value factorization: NQMIX (sign-modulated
//! off-policy actor updates over a non-monotonic mixer), its NQMIX-M
//! ablation, and QMIX/VDN baselines, with toy games that have enumerable
//! optima.

pub mod agents;
pub mod check;
pub mod envs;
pub mod error;
pub mod harness;
pub mod learner;
pub mod mixers;
pub mod nn;

pub use error::{Error, Result};
pub use envs::{make_env, DecPomdpDescriptor, Env, JointAction};
pub use harness::{Evaluation, RunConfig};
pub use learner::{Algo, LearnerState, NqmixConfig};
pub use mixers::{Mixer, MixerKind};
