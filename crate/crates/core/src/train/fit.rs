use rand::seq::SliceRandom;

use super::adam::AdamConfig;
use super::model::TrainableModel;
use super::TrainConfig;
use crate::alignment::{weighted_kabsch, CorrespondenceSet};
use crate::autodiff::{attach_losses, attach_losses_to_camera, FrameContext, LossStack, Tape};
use crate::eval::median;
use crate::geometry::{rotation_angle_deg, Pose};
use crate::losses::{self, LossBreakdown, LossWeights};
use crate::robust::{
    solve_mask_filter, solve_no_filter, solve_pnp_ransac, solve_rigid_ransac, solve_weighted,
    RansacConfig, SolveReport, Strategy,
};
use crate::sim::{Observation, LABEL_DYNAMIC};
use crate::{Error, Result};

/// Default length of a position-only finetuning run.
pub const FINETUNE_EPOCHS: usize = 12;

/// Medians over frames after one epoch of updates.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based, counting epochs of earlier runs this model was resumed from.
    pub epoch: usize,
    pub losses: LossBreakdown,
    pub train_translation: f64,
    pub train_rotation: f64,
    pub heldout_translation: Option<f64>,
    pub heldout_rotation: Option<f64>,
    /// Frames whose update was skipped because the alignment was degenerate.
    pub skipped: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Translation error (m) and rotation error (degrees).
pub fn pose_errors(estimate: &Pose, truth: &Pose) -> Result<(f64, f64)> {
    Ok((
        (estimate.translation - truth.translation).norm(),
        rotation_angle_deg(&estimate.rotation, &truth.rotation)?,
    ))
}

/// Alignment failures that training skips and evaluation records.
pub(crate) fn is_degenerate(e: &Error) -> bool {
    matches!(
        e,
        Error::DegenerateGradient { .. }
            | Error::DegenerateGeometry
            | Error::DegenerateWeights
            | Error::InsufficientPoints { .. }
    )
}

fn context(obs: &Observation) -> FrameContext {
    FrameContext::new(
        &obs.hit_pixels(),
        obs.frame.intrinsics,
        obs.frame.pose_gt,
        obs.frame.grid.diagonal(),
    )
}

/// One gradient step on one frame. `Ok(false)` means the frame was skipped.
fn step(
    model: &mut TrainableModel,
    obs: &Observation,
    stack: LossStack,
    adam: &AdamConfig,
) -> Result<bool> {
    let cells: Vec<usize> = obs.cells().collect();
    let ctx = context(obs);
    let mut tape = Tape::new();
    let nodes = model.record(&mut tape, obs, &cells, true)?;
    let recorded = match nodes.depth {
        Some(depth) => attach_losses(&mut tape, depth, nodes.global, nodes.weights, &ctx, stack),
        None => attach_losses_to_camera(
            &mut tape,
            nodes.camera,
            nodes.global,
            nodes.weights,
            &ctx,
            stack,
        ),
    };
    let losses = match recorded {
        Ok(l) => l,
        Err(e) if is_degenerate(&e) => return Ok(false),
        Err(e) => return Err(e),
    };
    let adj = match tape.backward(losses.total) {
        Ok(a) => a,
        Err(e) if is_degenerate(&e) => return Ok(false),
        Err(e) => return Err(e),
    };
    let grads = model.gather_gradients(&tape, &adj, &nodes, &cells);
    if !grads.iter().all(|g| g.is_finite()) {
        return Ok(false);
    }
    model.apply_update(obs, &grads, adam)?;
    Ok(true)
}

struct FrameEval {
    losses: Option<LossBreakdown>,
    translation: f64,
    rotation: f64,
}

fn evaluate_frame(model: &TrainableModel, obs: &Observation, w: &LossWeights) -> Result<FrameEval> {
    let c = model.correspondences(obs)?;
    let pose = match weighted_kabsch(&c) {
        Ok((p, _)) => p,
        Err(e) if is_degenerate(&e) => {
            return Ok(FrameEval {
                losses: None,
                translation: f64::INFINITY,
                rotation: f64::INFINITY,
            })
        }
        Err(e) => return Err(e),
    };
    let truth = &obs.frame.pose_gt;
    let losses = losses::evaluate(
        &pose,
        truth,
        &c,
        &obs.frame.intrinsics,
        obs.frame.grid.diagonal(),
        w,
    )?;
    let (translation, rotation) = pose_errors(&pose, truth)?;
    Ok(FrameEval {
        losses: Some(losses),
        translation,
        rotation,
    })
}

fn median_by(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        f64::INFINITY
    } else {
        median(&v)
    }
}

fn epoch_record(
    model: &TrainableModel,
    observations: &[Observation],
    heldout: &[Observation],
    w: &LossWeights,
    skipped: usize,
) -> Result<EpochRecord> {
    let evals = observations
        .iter()
        .map(|o| evaluate_frame(model, o, w))
        .collect::<Result<Vec<_>>>()?;
    let ls: Vec<&LossBreakdown> = evals.iter().filter_map(|e| e.losses.as_ref()).collect();
    let component = |f: fn(&LossBreakdown) -> f64| median_by(ls.iter().map(|l| f(l)));
    let losses = LossBreakdown {
        position: component(|l| l.position),
        rotation: component(|l| l.rotation),
        pose: component(|l| l.pose),
        consistency: component(|l| l.consistency),
        reprojection: component(|l| l.reprojection),
        total: component(|l| l.total),
    };
    let (heldout_translation, heldout_rotation) = if heldout.is_empty() {
        (None, None)
    } else {
        let errs = heldout
            .iter()
            .map(|o| match localize(model, o, Strategy::Weighted) {
                Ok(r) => pose_errors(&r.pose, &o.frame.pose_gt),
                Err(e) if is_degenerate(&e) => Ok((f64::INFINITY, f64::INFINITY)),
                Err(e) => Err(e),
            })
            .collect::<Result<Vec<_>>>()?;
        (
            Some(median_by(errs.iter().map(|e| e.0))),
            Some(median_by(errs.iter().map(|e| e.1))),
        )
    };
    Ok(EpochRecord {
        epoch: model.epochs_completed,
        losses,
        train_translation: median_by(evals.iter().map(|e| e.translation)),
        train_rotation: median_by(evals.iter().map(|e| e.rotation)),
        heldout_translation,
        heldout_rotation,
        skipped,
    })
}

fn check_compatible(model: &TrainableModel, cfg: &TrainConfig) -> Result<()> {
    if model.mode != cfg.mode
        || model.camera_output != cfg.camera_output
        || model.depth_range != cfg.depth_range
        || model.resolution != cfg.resolution
        || model.hidden != cfg.hidden
    {
        return Err(Error::Config(
            "model architecture does not match the training config".into(),
        ));
    }
    Ok(())
}

/// Runs `cfg.epochs` epochs of per-frame steps in a seed-shuffled order,
/// recording medians over the training frames (and `heldout`, if given)
/// after each epoch.
pub fn train(
    mut model: TrainableModel,
    observations: &[Observation],
    heldout: &[Observation],
    cfg: &TrainConfig,
) -> Result<(TrainableModel, TrainHistory)> {
    cfg.validate()?;
    check_compatible(&model, cfg)?;
    if observations.is_empty() {
        return Err(Error::Config(
            "training needs at least one observation".into(),
        ));
    }
    let stack = LossStack::Full(cfg.loss_weights);
    let mut history = TrainHistory::default();
    let total = observations.len();
    for _ in 0..cfg.epochs {
        let epoch = model.epochs_completed;
        let mut order: Vec<usize> = (0..total).collect();
        order.shuffle(&mut crate::sim::stream_rng(cfg.seed, epoch as u64));
        let adam = AdamConfig {
            learning_rate: cfg.adam.learning_rate * cfg.schedule.factor(history.len(), cfg.epochs),
            ..cfg.adam
        };
        let mut skipped = 0;
        for &i in &order {
            if !step(&mut model, &observations[i], stack, &adam)? {
                skipped += 1;
            }
        }
        model.epochs_completed += 1;
        if 2 * skipped > total {
            return Err(Error::TrainingAborted {
                epoch: model.epochs_completed,
                skipped,
                total,
            });
        }
        history.epochs.push(epoch_record(
            &model,
            observations,
            heldout,
            &cfg.loss_weights,
            skipped,
        )?);
    }
    Ok((model, history))
}

/// Gradient steps on the translation error alone, starting from fresh
/// optimizer state. Epoch count and Adam settings come from the arguments.
pub fn finetune_position_only(
    mut model: TrainableModel,
    observations: &[Observation],
    epochs: usize,
    adam: &AdamConfig,
    seed: u64,
) -> Result<TrainableModel> {
    adam.validate()?;
    if observations.is_empty() || epochs == 0 {
        return Ok(model);
    }
    let saved = std::mem::take(&mut model.optimizer);
    let total = observations.len();
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..total).collect();
        order.shuffle(&mut crate::sim::stream_rng(
            seed ^ 0x5eed_f1e7,
            epoch as u64,
        ));
        let mut skipped = 0;
        for &i in &order {
            if !step(&mut model, &observations[i], LossStack::PositionOnly, adam)? {
                skipped += 1;
            }
        }
        if 2 * skipped > total {
            return Err(Error::TrainingAborted {
                epoch: epoch + 1,
                skipped,
                total,
            });
        }
    }
    model.optimizer = saved;
    Ok(model)
}

/// Predicts the maps for `obs` and solves for its pose with `strategy`,
/// using default RANSAC settings.
pub fn localize(
    model: &TrainableModel,
    obs: &Observation,
    strategy: Strategy,
) -> Result<SolveReport> {
    localize_with(model, obs, strategy, &default_ransac(strategy))
}

/// Default RANSAC settings for `strategy`, seed 0.
pub fn default_ransac(strategy: Strategy) -> RansacConfig {
    match strategy {
        Strategy::PnpRansac => RansacConfig::pnp(0),
        _ => RansacConfig::rigid(0),
    }
}

pub fn localize_with(
    model: &TrainableModel,
    obs: &Observation,
    strategy: Strategy,
    ransac: &RansacConfig,
) -> Result<SolveReport> {
    solve_observation(&model.correspondences(obs)?, obs, strategy, ransac)
}

/// Solves for the pose of `obs` from correspondences over its hit cells.
/// The mask strategy drops cells whose ground-truth label is dynamic.
pub fn solve_observation(
    c: &CorrespondenceSet,
    obs: &Observation,
    strategy: Strategy,
    ransac: &RansacConfig,
) -> Result<SolveReport> {
    match strategy {
        Strategy::NoFilter => solve_no_filter(c),
        Strategy::Weighted => solve_weighted(c),
        Strategy::MaskFilter => {
            let labels: Vec<u32> = obs.hits.iter().map(|h| h.label).collect();
            solve_mask_filter(c, &labels, &[LABEL_DYNAMIC])
        }
        Strategy::RigidRansac => solve_rigid_ransac(c, ransac),
        Strategy::PnpRansac => solve_pnp_ransac(c, &obs.frame.intrinsics, ransac),
    }
}
