//! Small feedforward and Elman-recurrent networks with hand-written
//! reverse-mode gradients, the adversary and releaser losses, and SGD.

pub mod loss;
pub mod network;
pub mod optim;

pub use loss::{adversary_loss, releaser_loss, utility_loss, LossValue, ReleaserLoss, UtilityTerm};
pub use network::{
    backward, forward, Activation, ForwardTrace, Gradients, Layer, LayerSpec, NetworkParams,
};
pub use optim::Sgd;
