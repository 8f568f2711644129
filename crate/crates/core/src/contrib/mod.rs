//! Per-hidden-unit contributions to a scalar output target.

mod algorithms;
mod batch;
mod target;

pub(crate) use algorithms::path_point;
pub use algorithms::{
    actgrad, contribution, hidden_ig, hidden_ig_with_rule, hinput_grad, ig_input, Algorithm, BaselineSpec,
    ContribMethod, ContributionTensor, RiemannRule,
};
pub use batch::{batch_contributions, batch_contributions_streamed, Execution};
pub use target::{eval_target, ResolvedTarget, TargetKind, TargetSpec};
