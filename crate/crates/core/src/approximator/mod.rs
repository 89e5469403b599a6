//! Small dense networks with exact reverse-mode gradients, Adam, global-norm
//! clipping and target-network averaging.

mod mlp;
mod optim;
mod params;

pub use mlp::{Mode, Trace, LAYER_NORM_EPS};
pub use optim::{
    adam_step, adam_step_in_place, clip_global_norm, clipped_step, ema_update,
    ema_update_in_place, l2_norm, OptimizerState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS,
};
pub use params::{init_params, Activation, Block, BlockKind, MlpSpec, ParamSet};
pub(crate) use params::{read_spec, read_u64, write_spec};
