//! Self-supervised redundancy-reduction objective and a small encoder used to
//! exercise it.

pub mod augment;
pub mod check;
pub mod encoder;
pub mod loss;

pub use augment::{apply_distortions, DistortionSpec};
pub use check::{self_check, SelfCheck};
pub use encoder::{planted_factor_data, train_toy_encoder, Mlp, TileViews, TrainConfig, TrainedEncoder, VectorViews, ViewSource};
pub use loss::{barlow_twins_loss, bt_loss_gradient, cross_correlation, BtLoss, BtLossConfig};
