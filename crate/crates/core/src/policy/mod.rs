//! Squashed diagonal-Gaussian policy and its training objectives.

mod distribution;
mod loss;
mod network;

pub use distribution::{
    diag_gaussian_kl, gaussian_log_density, soft_q_weights, ActionDistribution, DistGrad, LOG_2PI,
    SQUASH_EPS,
};
pub use loss::{
    alignment_loss, alignment_weights, bootstrapped_policy_loss, policy_update,
    reverse_kl_surrogate_loss, AlignMetric, AlignmentConfig, PolicyInputs, PolicyLoss,
    PolicyMetrics, WeightMode,
};
pub use network::{Policy, PolicyBatch, PolicyConfig};
