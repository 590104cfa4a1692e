//! Reverse-mode differentiation over the localization pipeline.

mod check;
mod kabsch;
mod pipeline;
mod tape;
mod tensor;

pub use check::{finite_diff_check, PipelineInstance};
pub use kabsch::{kabsch_vjp, KabschAdjoints, PoseAdjoint, GRADIENT_GAP_TOLERANCE};
pub use pipeline::{
    attach_losses, attach_losses_to_camera, pipeline_gradients, record_pipeline, FrameContext,
    GradientBundle, LossNodes, LossStack, PipelineNodes,
};
pub use tape::{record_forward, Adjoints, NodeId, Op, Tape, ARCCOS_GRAD_CLAMP};
pub use tensor::Tensor;
