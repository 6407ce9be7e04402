//! Alternating releaser/adversary training with optional utility network.

pub mod algorithm;
pub mod assemble;
pub mod distortion;

pub use algorithm::{
    attacker_accuracy, attacker_inputs, derive_seed, fit_classifier, predict, release,
    releaser_gradient, train, train_attacker, train_observed, utility_accuracy, Architecture,
    BatchMoments, HyperParams, IterationLog, Networks, Phase, ReleaserContext, TrainObserver,
    TrainedSystem, UpdateCounts, Whitener, DIVERGENCE_LIMIT,
};
pub use assemble::{assemble_observed, attach_side_information, ObservedMode};
pub use distortion::{compute_distortion, norm_distortion, norm_distortion_grad, DistortionSpec};
