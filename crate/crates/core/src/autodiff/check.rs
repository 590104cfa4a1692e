//! Central finite-difference checks of tape gradients.

use nalgebra::Vector3;
use rand::Rng;

use super::pipeline::{pipeline_gradients, record_pipeline, FrameContext, LossStack};
use super::tape::{NodeId, Tape};
use crate::geometry::{random_pose, CameraIntrinsics};
use crate::{Error, Result};

/// Below this gradient scale a leaf's error is reported in absolute terms.
const SCALE_FLOOR: f64 = 1e-10;

/// Compares `tape.backward(output)` with central differences of step `step`
/// on every coordinate of every leaf in `leaves`.
///
/// Per leaf the error is `max |analytic − numeric| / max |numeric|`; the
/// result is the largest over leaves. The tape is restored before returning.
pub fn finite_diff_check(
    tape: &mut Tape,
    output: NodeId,
    leaves: &[NodeId],
    step: f64,
) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::Config(format!(
            "finite-difference step must be positive, got {step}"
        )));
    }
    let adj = tape.backward(output)?;
    let mut worst: f64 = 0.0;
    for &leaf in leaves {
        let original = tape.value(leaf).clone();
        let analytic = adj.get_or_zeros(leaf, &original);
        let mut numeric = Vec::with_capacity(original.len());
        for i in 0..original.len() {
            let mut probe = original.clone();
            probe.data_mut()[i] = original.data()[i] + step;
            tape.set_leaf(leaf, probe.clone())?;
            tape.replay()?;
            let up = tape.value(output).item();
            probe.data_mut()[i] = original.data()[i] - step;
            tape.set_leaf(leaf, probe)?;
            tape.replay()?;
            let down = tape.value(output).item();
            numeric.push((up - down) / (2.0 * step));
        }
        tape.set_leaf(leaf, original)?;
        tape.replay()?;
        let scale = numeric.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let diff = analytic
            .data()
            .iter()
            .zip(&numeric)
            .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
        worst = worst.max(if scale < SCALE_FLOOR {
            diff
        } else {
            diff / scale
        });
    }
    Ok(worst)
}

/// A random, well-conditioned frame for gradient checks: predicted maps
/// near (but not at) a ground-truth configuration.
#[derive(Clone, Debug)]
pub struct PipelineInstance {
    pub depth: Vec<f64>,
    pub global: Vec<Vector3<f64>>,
    pub weights: Vec<f64>,
    pub ctx: FrameContext,
}

impl PipelineInstance {
    pub fn random<R: Rng + ?Sized>(rng: &mut R, m: usize) -> Self {
        let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0).expect("valid intrinsics");
        let pose_gt = random_pose(rng, 3.0);
        let pixels: Vec<_> = (0..m)
            .map(|_| Vector3::new(rng.gen_range(0.0..640.0), rng.gen_range(0.0..480.0), 1.0))
            .collect();
        let ctx = FrameContext::new(&pixels, k, pose_gt, 800.0);
        let true_depth: Vec<f64> = (0..m).map(|_| rng.gen_range(1.0..8.0)).collect();
        let global = ctx
            .rays
            .iter()
            .zip(&true_depth)
            .map(|(r, d)| {
                let noise = Vector3::new(
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.3..0.3),
                    rng.gen_range(-0.3..0.3),
                );
                pose_gt.transform_point(&(r * *d)) + noise
            })
            .collect();
        let depth = true_depth
            .iter()
            .map(|d| d * rng.gen_range(0.8..1.2))
            .collect();
        let weights = (0..m).map(|_| rng.gen_range(0.2..1.0)).collect();
        Self {
            depth,
            global,
            weights,
            ctx,
        }
    }

    /// Finite-difference error of the full pipeline under `stack`.
    pub fn check(&self, stack: LossStack, step: f64) -> Result<f64> {
        let (mut tape, nodes) =
            record_pipeline(&self.depth, &self.global, &self.weights, &self.ctx, stack)?;
        // Surfaces a degenerate-gradient error before any probing.
        pipeline_gradients(&tape, &nodes)?;
        finite_diff_check(
            &mut tape,
            nodes.losses.total,
            &[nodes.depth, nodes.global, nodes.weights],
            step,
        )
    }
}
