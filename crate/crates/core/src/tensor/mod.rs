//! Dense matrices and the attention-derived aggregates consumed by the
//! attribution methods.

mod matrix;
mod stack;

pub use matrix::Matrix;
pub use stack::{
    average_attention, contribution_matrix, raw_attention_importance, softmax_rows,
    AttentionStack, ContributionMatrix, GradientStack, ROW_SUM_RENORM_TOL, ROW_SUM_TOL,
};
pub(crate) use stack::softmax_in_place;
