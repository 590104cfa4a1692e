//! Training the depth, global-coordinate and weight predictors from pose
//! labels through the differentiable alignment.

mod adam;
mod checkpoint;
mod fit;
mod model;

use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint};
pub(crate) use fit::is_degenerate;
pub use fit::{
    default_ransac, finetune_position_only, localize, localize_with, pose_errors,
    solve_observation, train, EpochRecord, TrainHistory, FINETUNE_EPOCHS,
};
pub use model::TrainableModel;

use crate::losses::LossWeights;
use crate::sim::{Resolution, INDOOR_DEPTH_RANGE};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum TrainMode {
    /// Free per-frame maps.
    Direct,
    /// Shared descriptor-conditioned predictor.
    Mlp,
}

/// What the camera branch predicts.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CameraOutput {
    /// A depth per pixel, back-projected along the pixel ray.
    Depth,
    /// Camera-frame 3D coordinates per pixel.
    Coordinates,
}

impl CameraOutput {
    pub(crate) fn dim(self) -> usize {
        match self {
            CameraOutput::Depth => 1,
            CameraOutput::Coordinates => 3,
        }
    }
}

macro_rules! text_enum {
    ($t:ty { $($v:path => $s:literal),+ $(,)? }) => {
        impl fmt::Display for $t {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(match self { $($v => $s),+ })
            }
        }

        impl FromStr for $t {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                match s.trim() {
                    $($s => Ok($v),)+
                    other => Err(Error::Config(format!("unknown {} `{other}`", stringify!($t)))),
                }
            }
        }
    };
}

text_enum!(TrainMode { TrainMode::Direct => "direct", TrainMode::Mlp => "mlp" });
text_enum!(CameraOutput { CameraOutput::Depth => "depth", CameraOutput::Coordinates => "coordinates" });

/// Per-epoch learning-rate multiplier.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LrSchedule {
    Constant,
    /// Half-cosine from 1 down to `final_fraction` over the run.
    Cosine {
        final_fraction: f64,
    },
}

impl LrSchedule {
    /// Multiplier for 0-based `epoch` of a run of `epochs`.
    pub fn factor(&self, epoch: usize, epochs: usize) -> f64 {
        match *self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine { final_fraction } => {
                let progress = if epochs > 1 {
                    epoch as f64 / (epochs - 1) as f64
                } else {
                    1.0
                };
                final_fraction
                    + (1.0 - final_fraction) * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
            }
        }
    }
}

impl fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LrSchedule::Constant => f.write_str("constant"),
            LrSchedule::Cosine { final_fraction } => write!(f, "cosine:{final_fraction}"),
        }
    }
}

impl FromStr for LrSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "constant" {
            return Ok(LrSchedule::Constant);
        }
        let bad = || {
            Error::Config(format!(
                "unknown schedule `{s}`; expected `constant` or `cosine:<fraction>`"
            ))
        };
        let fraction = s.strip_prefix("cosine:").ok_or_else(bad)?;
        let final_fraction: f64 = fraction.parse().map_err(|_| bad())?;
        if !(0.0..=1.0).contains(&final_fraction) {
            return Err(bad());
        }
        Ok(LrSchedule::Cosine { final_fraction })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub camera_output: CameraOutput,
    pub loss_weights: LossWeights,
    pub adam: AdamConfig,
    pub schedule: LrSchedule,
    pub epochs: usize,
    pub depth_range: (f64, f64),
    pub resolution: Resolution,
    /// Hidden layer widths of both heads (mlp mode).
    pub hidden: [usize; 2],
    pub seed: u64,
}

impl TrainConfig {
    /// Adam with `lr = 1e-4`, weight decay `5e-4` and 400 epochs.
    pub fn reference(mode: TrainMode) -> Self {
        Self {
            mode,
            camera_output: CameraOutput::Depth,
            loss_weights: LossWeights::default(),
            adam: AdamConfig::default(),
            schedule: LrSchedule::Constant,
            epochs: 400,
            depth_range: INDOOR_DEPTH_RANGE,
            resolution: Resolution::DEFAULT,
            hidden: [32, 32],
            seed: 0,
        }
    }

    /// Larger learning rates with a cosine decay, sized for desk-scale runs
    /// where each parameter sees far fewer updates than a CNN trained on
    /// images.
    pub fn desk(mode: TrainMode) -> Self {
        let learning_rate = match mode {
            TrainMode::Direct => 1e-1,
            TrainMode::Mlp => 1e-2,
        };
        let base = Self::reference(mode);
        Self {
            adam: AdamConfig {
                learning_rate,
                ..base.adam
            },
            schedule: LrSchedule::Cosine {
                final_fraction: 0.01,
            },
            ..base
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        let w = self.loss_weights;
        LossWeights::new(w.lambda_p, w.lambda_c, w.lambda_r)?;
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        let (lo, hi) = self.depth_range;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::Config(format!("invalid depth range [{lo}, {hi}]")));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden layers must be non-empty".into()));
        }
        Ok(())
    }

    /// Digest of everything that fixes the parameter layout.
    pub fn architecture_hash(&self) -> String {
        architecture_hash(
            self.mode,
            self.camera_output,
            self.depth_range,
            self.resolution,
            self.hidden,
        )
    }
}

pub(crate) fn architecture_hash(
    mode: TrainMode,
    camera: CameraOutput,
    range: (f64, f64),
    res: Resolution,
    hidden: [usize; 2],
) -> String {
    let text = format!(
        "mode={mode};camera={camera};range={:.16e},{:.16e};resolution={res};hidden={},{}",
        range.0, range.1, hidden[0], hidden[1]
    );
    Sha256::digest(text.as_bytes())
        .iter()
        .take(8)
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[cfg(test)]
mod tests;
