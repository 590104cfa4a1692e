//! The localization pipeline recorded on a tape: per-pixel depth, global
//! coordinates and weights, through back-projection and the Kabsch solve, to
//! the training losses.

use nalgebra::{Vector2, Vector3};

use super::tape::{Adjoints, NodeId, Op, Tape};
use super::tensor::Tensor;
use crate::geometry::{CameraIntrinsics, Pose};
use crate::losses::LossWeights;
use crate::Result;

/// Fixed per-frame data: pixels, their rays and the ground-truth pose.
#[derive(Clone, Debug)]
pub struct FrameContext {
    pub pixels: Vec<Vector2<f64>>,
    /// `K⁻¹·uᵢ` for each pixel.
    pub rays: Vec<Vector3<f64>>,
    pub intrinsics: CameraIntrinsics,
    pub pose_gt: Pose,
    /// Reprojection cost of a point behind the camera.
    pub penalty: f64,
}

impl FrameContext {
    /// `pixels` are homogeneous `(u, v, 1)`.
    pub fn new(
        pixels: &[Vector3<f64>],
        intrinsics: CameraIntrinsics,
        pose_gt: Pose,
        penalty: f64,
    ) -> Self {
        Self {
            pixels: pixels.iter().map(|u| Vector2::new(u.x, u.y)).collect(),
            rays: pixels.iter().map(|u| intrinsics.unproject(u)).collect(),
            intrinsics,
            pose_gt,
            penalty,
        }
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LossStack {
    /// `λp·pose + λc·consistency + λr·reprojection`.
    Full(LossWeights),
    /// Translation error alone.
    PositionOnly,
}

/// Nodes recorded by [`attach_losses`]. Terms a stack does not use are `None`.
#[derive(Clone, Copy, Debug)]
pub struct LossNodes {
    pub camera: NodeId,
    pub pose: NodeId,
    pub position: NodeId,
    pub rotation: Option<NodeId>,
    pub pose_loss: Option<NodeId>,
    pub consistency: Option<NodeId>,
    pub reprojection: Option<NodeId>,
    pub total: NodeId,
}

/// Records back-projection, Kabsch and the losses on top of existing
/// depth (`M × 1`), global (`M × 3`) and weight (`M × 1`) nodes.
pub fn attach_losses(
    tape: &mut Tape,
    depth: NodeId,
    global: NodeId,
    weights: NodeId,
    ctx: &FrameContext,
    stack: LossStack,
) -> Result<LossNodes> {
    let camera = tape.push(Op::BackProject {
        depth,
        rays: ctx.rays.clone(),
    })?;
    attach_losses_to_camera(tape, camera, global, weights, ctx, stack)
}

/// Like [`attach_losses`], starting from camera-frame points (`M × 3`).
pub fn attach_losses_to_camera(
    tape: &mut Tape,
    camera: NodeId,
    global: NodeId,
    weights: NodeId,
    ctx: &FrameContext,
    stack: LossStack,
) -> Result<LossNodes> {
    let pose = tape.push(Op::Kabsch {
        camera,
        global,
        weights,
    })?;
    let position = tape.push(Op::PositionLoss {
        pose,
        target: ctx.pose_gt.translation,
    })?;
    let w = match stack {
        LossStack::PositionOnly => {
            return Ok(LossNodes {
                camera,
                pose,
                position,
                rotation: None,
                pose_loss: None,
                consistency: None,
                reprojection: None,
                total: position,
            })
        }
        LossStack::Full(w) => w,
    };
    let rotation = tape.push(Op::RotationLoss {
        pose,
        target: ctx.pose_gt.rotation,
    })?;
    let pose_loss = tape.add(position, rotation)?;
    let consistency = tape.push(Op::ConsistencyLoss {
        camera,
        global,
        pose: ctx.pose_gt,
    })?;
    let reprojection = tape.push(Op::ReprojectionLoss {
        global,
        pixels: ctx.pixels.clone(),
        pose: ctx.pose_gt,
        intrinsics: ctx.intrinsics,
        penalty: ctx.penalty,
    })?;
    let a = tape.scale(pose_loss, w.lambda_p, 0.0)?;
    let b = tape.scale(consistency, w.lambda_c, 0.0)?;
    let c = tape.scale(reprojection, w.lambda_r, 0.0)?;
    let ab = tape.add(a, b)?;
    let total = tape.add(ab, c)?;
    Ok(LossNodes {
        camera,
        pose,
        position,
        rotation: Some(rotation),
        pose_loss: Some(pose_loss),
        consistency: Some(consistency),
        reprojection: Some(reprojection),
        total,
    })
}

/// Leaves and loss nodes of a pipeline recorded from raw maps.
#[derive(Clone, Copy, Debug)]
pub struct PipelineNodes {
    pub depth: NodeId,
    pub global: NodeId,
    pub weights: NodeId,
    pub losses: LossNodes,
}

/// Records the pipeline with the three maps as trainable leaves.
pub fn record_pipeline(
    depth: &[f64],
    global: &[Vector3<f64>],
    weights: &[f64],
    ctx: &FrameContext,
    stack: LossStack,
) -> Result<(Tape, PipelineNodes)> {
    let mut tape = Tape::new();
    let d = tape.leaf(Tensor::column(depth));
    let g = tape.leaf(Tensor::from_points(global));
    let w = tape.leaf(Tensor::column(weights));
    let losses = attach_losses(&mut tape, d, g, w, ctx, stack)?;
    Ok((
        tape,
        PipelineNodes {
            depth: d,
            global: g,
            weights: w,
            losses,
        },
    ))
}

/// Gradients of the total loss with respect to the predicted maps and,
/// in trainer mode, the flat parameter vector.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradientBundle {
    pub d_depth: Vec<f64>,
    pub d_global: Vec<Vector3<f64>>,
    pub d_weights: Vec<f64>,
    pub d_params: Vec<f64>,
}

impl GradientBundle {
    pub fn is_finite(&self) -> bool {
        self.d_depth
            .iter()
            .chain(&self.d_weights)
            .chain(&self.d_params)
            .all(|v| v.is_finite())
            && self
                .d_global
                .iter()
                .all(|v| v.iter().all(|x| x.is_finite()))
    }
}

/// Runs the backward pass of a recorded pipeline.
pub fn pipeline_gradients(tape: &Tape, nodes: &PipelineNodes) -> Result<GradientBundle> {
    let adj: Adjoints = tape.backward(nodes.losses.total)?;
    Ok(GradientBundle {
        d_depth: adj
            .get_or_zeros(nodes.depth, tape.value(nodes.depth))
            .into_data(),
        d_global: adj
            .get_or_zeros(nodes.global, tape.value(nodes.global))
            .to_points(),
        d_weights: adj
            .get_or_zeros(nodes.weights, tape.value(nodes.weights))
            .into_data(),
        d_params: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::{weighted_kabsch, CorrespondenceSet};
    use crate::autodiff::check::PipelineInstance;
    use crate::geometry::{PixelGrid, PointCloud};
    use crate::losses;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn matches_eager_losses() {
        for (seed, m) in [(1u64, 3usize), (2, 3), (3, 25)] {
            let inst = PipelineInstance::random(&mut ChaCha8Rng::seed_from_u64(seed), m);
            let w = LossWeights::default();
            let (tape, nodes) = record_pipeline(
                &inst.depth,
                &inst.global,
                &inst.weights,
                &inst.ctx,
                LossStack::Full(w),
            )
            .unwrap();

            let camera: Vec<_> = inst
                .ctx
                .rays
                .iter()
                .zip(&inst.depth)
                .map(|(r, d)| r * *d)
                .collect();
            let pixels = inst
                .ctx
                .pixels
                .iter()
                .map(|u| Vector3::new(u.x, u.y, 1.0))
                .collect();
            let c = CorrespondenceSet::new(
                PixelGrid {
                    width: 640,
                    height: 480,
                    pixels,
                },
                PointCloud::camera(camera),
                PointCloud::global(inst.global.clone()),
                inst.weights.clone(),
            )
            .unwrap();
            let (pose, _) = weighted_kabsch(&c).unwrap();
            let eager = losses::evaluate(
                &pose,
                &inst.ctx.pose_gt,
                &c,
                &inst.ctx.intrinsics,
                inst.ctx.penalty,
                &w,
            )
            .unwrap();
            assert!((tape.value(nodes.losses.total).item() - eager.total).abs() < 1e-12);
            assert!(
                (tape.value(nodes.losses.consistency.unwrap()).item() - eager.consistency).abs()
                    < 1e-12
            );
        }
    }

    #[test]
    fn position_only_stack_is_position_loss() {
        let inst = PipelineInstance::random(&mut ChaCha8Rng::seed_from_u64(4), 10);
        let (tape, nodes) = record_pipeline(
            &inst.depth,
            &inst.global,
            &inst.weights,
            &inst.ctx,
            LossStack::PositionOnly,
        )
        .unwrap();
        let p = tape.pose(nodes.losses.pose);
        let expected = losses::position_loss(&p.translation, &inst.ctx.pose_gt.translation);
        assert_eq!(tape.value(nodes.losses.total).item(), expected);
        let grads = pipeline_gradients(&tape, &nodes).unwrap();
        assert!(grads.is_finite());
    }

    #[test]
    fn gradients_are_bit_deterministic() {
        let inst = PipelineInstance::random(&mut ChaCha8Rng::seed_from_u64(5), 30);
        let run = || {
            let (tape, nodes) = record_pipeline(
                &inst.depth,
                &inst.global,
                &inst.weights,
                &inst.ctx,
                LossStack::Full(LossWeights::default()),
            )
            .unwrap();
            pipeline_gradients(&tape, &nodes).unwrap()
        };
        let (a, b) = (run(), run());
        let bits = |g: &GradientBundle| {
            g.d_depth
                .iter()
                .chain(&g.d_weights)
                .chain(g.d_global.iter().flat_map(|v| v.iter()))
                .map(|x| x.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&a), bits(&b));
    }
}
