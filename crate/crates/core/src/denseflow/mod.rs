//! Pixel-wise policy optimization for a toy Gaussian flow policy.

mod objective;
mod policy;
mod train;

pub use objective::{
    dense_advantages, denseflow_objective, denseflow_surrogate_value, flow_grpo_objective, image_ratio, kl_penalty,
    pixel_surrogate_at, pixel_surrogate_grad, pixel_surrogate_value, DenseRewardField, KlPenalty, PolicyGradient,
};
pub use policy::{sample_group, Condition, ToyFlowPolicy, Trajectory};
pub use train::{train_toy, CurvePoint, RewardSpec, TrainConfig, TrainMode, TrainOutcome};
