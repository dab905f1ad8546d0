//! Dense tensors, the four layer kernels with their exact gradients,
//! orthogonal initialization and the Adam optimizer.

mod activation;
mod adam;
mod batchnorm;
mod conv;
mod init;
mod params;
mod tensor;

pub use activation::{gap_backward, gap_forward, relu_backward, relu_forward};
pub use adam::{sgd_step, AdamConfig, AdamState};
pub use batchnorm::{
    batchnorm_backward, batchnorm_forward, BnCache, BnGrads, Mode, RunningStats, BN_EPSILON, BN_MOMENTUM,
};
pub use conv::{conv1d_backward, conv1d_forward, same_padding, Conv1dGrads};
pub use init::orthogonal_init;
pub use params::{ParamLayout, ParamRecord, ParamSet};
pub use tensor::Tensor;

pub(crate) use activation::relu_mask_in_place;
pub(crate) use batchnorm::{bn_infer, bn_train};
pub(crate) use conv::{conv1d_backward_into, conv1d_forward_into};
