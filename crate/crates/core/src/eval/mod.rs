//! Metrics, experiment runners and reports.

mod ablation;
mod benchmark;
mod report;

use std::time::Instant;

pub use ablation::{
    loss_variants, output_variants, resolution_variants, run_ablation, split_heldout,
    standard_variants, AblationRow, AblationSetup, Variant,
};
pub use benchmark::{benchmark, BenchmarkRow};
pub use report::{Report, Section};

use crate::robust::{RansacConfig, Strategy};
use crate::sim::{Observation, PredictedMaps};
use crate::train::{is_degenerate, pose_errors, solve_observation, TrainableModel};
use crate::{Error, Result};

/// Median with the lower-middle convention for even lengths. NaN sorts last.
pub fn median(values: &[f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty list");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrameResult {
    pub frame: usize,
    /// Meters; infinite when the solver failed on this frame.
    pub translation: f64,
    /// Degrees; infinite when the solver failed on this frame.
    pub rotation: f64,
    pub prediction_ms: f64,
    pub pose_ms: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalResult {
    pub strategy: Strategy,
    pub frames: Vec<FrameResult>,
    pub median_translation: f64,
    pub median_rotation: f64,
    /// Frames whose solve hit degenerate geometry or found no consensus.
    pub failures: usize,
}

impl EvalResult {
    pub fn new(strategy: Strategy, frames: Vec<FrameResult>) -> Result<Self> {
        if frames.is_empty() {
            return Err(Error::Config("nothing to evaluate".into()));
        }
        let t: Vec<f64> = frames.iter().map(|f| f.translation).collect();
        let r: Vec<f64> = frames.iter().map(|f| f.rotation).collect();
        Ok(Self {
            strategy,
            median_translation: median(&t),
            median_rotation: median(&r),
            failures: frames
                .iter()
                .filter(|f| f.translation.is_infinite())
                .count(),
            frames,
        })
    }

    /// Adds a summary section `name` and one section per frame. Timings are
    /// left out unless asked for, so reports of seeded runs compare byte for byte.
    pub fn write_to(&self, report: &mut Report, name: &str, timing: bool) {
        let s = report.section(name);
        s.push("strategy", self.strategy)
            .push("frames", self.frames.len())
            .push("failures", self.failures)
            .push("median_translation_m", self.median_translation)
            .push("median_rotation_deg", self.median_rotation);
        if timing {
            let mean = |f: fn(&FrameResult) -> f64| {
                self.frames.iter().map(f).sum::<f64>() / self.frames.len() as f64
            };
            s.push("mean_prediction_ms", mean(|f| f.prediction_ms))
                .push("mean_pose_ms", mean(|f| f.pose_ms));
        }
        for f in &self.frames {
            let s = report.section(format!("{name}.frame.{}", f.frame));
            s.push("translation_m", f.translation)
                .push("rotation_deg", f.rotation);
            if timing {
                s.push("prediction_ms", f.prediction_ms)
                    .push("pose_ms", f.pose_ms);
            }
        }
    }
}

fn elapsed_ms(start: Instant) -> f64 {
    start.elapsed().as_secs_f64() * 1e3
}

/// Scores `strategy` on maps produced by `predict`. Degenerate or
/// consensus-free frames count as infinite error; if every frame fails the
/// last error is returned.
pub fn evaluate_with(
    observations: &[Observation],
    strategy: Strategy,
    ransac: &RansacConfig,
    mut predict: impl FnMut(&Observation) -> Result<PredictedMaps>,
) -> Result<EvalResult> {
    let mut frames = Vec::with_capacity(observations.len());
    let mut last_error = None;
    for obs in observations {
        let start = Instant::now();
        let maps = predict(obs)?;
        let prediction_ms = elapsed_ms(start);
        let start = Instant::now();
        let c = obs.to_correspondences(&maps)?;
        let solved = solve_observation(&c, obs, strategy, ransac);
        let pose_ms = elapsed_ms(start);
        let (translation, rotation) = match solved {
            Ok(r) => pose_errors(&r.pose, &obs.frame.pose_gt)?,
            Err(e) if is_degenerate(&e) || matches!(e, Error::NoConsensus) => {
                last_error = Some(e);
                (f64::INFINITY, f64::INFINITY)
            }
            Err(e) => return Err(e),
        };
        frames.push(FrameResult {
            frame: obs.frame.id,
            translation,
            rotation,
            prediction_ms,
            pose_ms,
        });
    }
    let result = EvalResult::new(strategy, frames)?;
    match last_error {
        Some(e) if result.failures == result.frames.len() => Err(e),
        _ => Ok(result),
    }
}

/// Scores a trained model on `observations`.
pub fn evaluate(
    model: &TrainableModel,
    observations: &[Observation],
    strategy: Strategy,
    ransac: &RansacConfig,
) -> Result<EvalResult> {
    evaluate_with(observations, strategy, ransac, |obs| model.predict(obs))
}
