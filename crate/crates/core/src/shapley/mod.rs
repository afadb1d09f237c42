//! Shapley attributions over attention-derived cooperative games.

mod closed_form;
mod exact;
mod game;
mod methods;
mod sampling;

pub use closed_form::{closed_form_cls, closed_form_mutual};
pub use exact::{coalition_values, exact_shapley, shapley_from_values, shapley_weights, DEFAULT_EXACT_LIMIT};
pub use game::{
    CharacteristicKind, CharacteristicSpec, Coalition, EmptyValue, FnGame, Game, PairReading, Payload,
};
pub use methods::{
    attribute, attribute_stacks, grad_sam_scores, AttributeOptions, AttributionResult, Method, StackInput,
};
pub use sampling::{draw_coalitions, kernel_weight, sampled_shapley, KernelWeight, SamplingMode, SamplingScheme};
