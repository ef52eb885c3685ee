//! Loss and feature kernels of the open-vocabulary detector, with gradient checking.

mod gradcheck;
mod loss;
mod matrix;
mod selfcheck;

pub use gradcheck::{grad_check, numeric_gradient, relative_error, GradCheckReport, RELATIVE_ERROR_FLOOR};
pub use loss::{
    cls_loss, cls_loss_grad, loc_loss, scene_feature, total_loss, visgt_loss, visgt_loss_grad, visual_mean_pool,
    LossWeights, SceneFeature,
};
pub use matrix::FeatureMatrix;
pub use selfcheck::{
    cls_grad_error, random_matrix, run_math_checks, visgt_grad_error, MathCheck, GRAD_CHECK_EPS, GRAD_CHECK_TOLERANCE,
};
