//! Run settings: built-in defaults, then a `key = value` config file, then
//! command-line flags.

use std::fmt::Display;
use std::str::FromStr;

use kloc_core::losses::LossWeights;
use kloc_core::robust::{RansacConfig, Strategy};
use kloc_core::sim::{RenderConfig, Resolution, TrajectoryMode};
use kloc_core::train::{LrSchedule, TrainConfig, TrainMode};
use kloc_core::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Settings {
    pub seed: u64,
    pub landmarks: usize,
    pub label_mix: f64,
    pub frames: usize,
    pub trajectory_mode: TrajectoryMode,
    pub resolution: Resolution,
    pub depth_sigma: f64,
    pub pixel_sigma: f64,
    pub outlier_rate: f64,
    /// `desk` or `reference` training hyperparameters.
    pub preset: String,
    pub train: TrainConfig,
    pub strategy: Option<Strategy>,
    pub ransac_iterations: Option<usize>,
    pub ransac_threshold: Option<f64>,
    pub ransac_sample: Option<usize>,
    /// Hold every fourth frame out of training and report on it.
    pub heldout: bool,
    pub benchmark_frames: usize,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            seed: 0,
            landmarks: 200,
            label_mix: 0.0,
            frames: 20,
            trajectory_mode: TrajectoryMode::Orbit,
            resolution: Resolution::DEFAULT,
            depth_sigma: 0.0,
            pixel_sigma: 0.0,
            outlier_rate: 0.0,
            preset: "desk".into(),
            train: TrainConfig::desk(TrainMode::Direct),
            strategy: None,
            ransac_iterations: None,
            ransac_threshold: None,
            ransac_sample: None,
            heldout: false,
            benchmark_frames: 100,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| Error::Config(format!("`{key} = {value}`: {e}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!(
            "`{key} = {value}`: expected true or false"
        ))),
    }
}

impl Settings {
    /// Applies one setting. `preset` and `mode` reset the training
    /// configuration, so put them before other training keys.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "seed" => {
                self.seed = parse(key, value)?;
                t.seed = self.seed;
            }
            "landmarks" => self.landmarks = parse(key, value)?,
            "label_mix" => self.label_mix = parse(key, value)?,
            "frames" => self.frames = parse(key, value)?,
            "trajectory" => self.trajectory_mode = parse(key, value)?,
            "resolution" => {
                self.resolution = parse(key, value)?;
                t.resolution = self.resolution;
            }
            "depth_sigma" => self.depth_sigma = parse(key, value)?,
            "pixel_sigma" => self.pixel_sigma = parse(key, value)?,
            "outlier_rate" => self.outlier_rate = parse(key, value)?,
            "preset" | "mode" => {
                let mode = if key == "mode" {
                    parse(key, value)?
                } else {
                    t.mode
                };
                let preset = if key == "preset" {
                    value
                } else {
                    self.preset.as_str()
                };
                let base = match preset {
                    "reference" => TrainConfig::reference(mode),
                    "desk" => TrainConfig::desk(mode),
                    _ => {
                        return Err(Error::Config(format!(
                            "unknown preset `{value}`; expected reference or desk"
                        )))
                    }
                };
                *t = TrainConfig {
                    resolution: self.resolution,
                    seed: self.seed,
                    ..base
                };
                self.preset = preset.to_string();
            }
            "camera_output" => t.camera_output = parse(key, value)?,
            "lambda_p" => t.loss_weights.lambda_p = parse(key, value)?,
            "lambda_c" => t.loss_weights.lambda_c = parse(key, value)?,
            "lambda_r" => t.loss_weights.lambda_r = parse(key, value)?,
            "learning_rate" => t.adam.learning_rate = parse(key, value)?,
            "beta1" => t.adam.beta1 = parse(key, value)?,
            "beta2" => t.adam.beta2 = parse(key, value)?,
            "epsilon" => t.adam.epsilon = parse(key, value)?,
            "weight_decay" => t.adam.weight_decay = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "schedule" => t.schedule = parse::<LrSchedule>(key, value)?,
            "depth_min" => t.depth_range.0 = parse(key, value)?,
            "depth_max" => t.depth_range.1 = parse(key, value)?,
            "hidden" => {
                let parts: Vec<&str> = value.split(',').map(str::trim).collect();
                if parts.len() != 2 {
                    return Err(Error::Config(format!(
                        "`hidden = {value}`: expected two widths like 32,32"
                    )));
                }
                t.hidden = [parse(key, parts[0])?, parse(key, parts[1])?];
            }
            "strategy" => self.strategy = Some(parse(key, value)?),
            "ransac_iterations" => self.ransac_iterations = Some(parse(key, value)?),
            "ransac_threshold" => self.ransac_threshold = Some(parse(key, value)?),
            "ransac_sample" => self.ransac_sample = Some(parse(key, value)?),
            "heldout" => self.heldout = parse_bool(key, value)?,
            "benchmark_frames" => self.benchmark_frames = parse(key, value)?,
            _ => return Err(Error::Config(format!("unknown setting `{key}`"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of a config file. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn apply_file(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("config line {}: expected `key = value`", i + 1))
            })?;
            self.apply(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Checks everything a command may use.
    pub fn validate(&self) -> Result<()> {
        let w = self.train.loss_weights;
        LossWeights::new(w.lambda_p, w.lambda_c, w.lambda_r)?;
        self.train.validate()?;
        if self.frames == 0 {
            return Err(Error::Config("frames must be at least 1".into()));
        }
        if self.landmarks == 0 {
            return Err(Error::Config("landmarks must be at least 1".into()));
        }
        Ok(())
    }

    pub fn render_config(&self) -> RenderConfig {
        let mut cfg = RenderConfig::noisy(self.depth_sigma, self.outlier_rate);
        cfg.noise.pixel_sigma = self.pixel_sigma;
        cfg.depth_range = self.train.depth_range;
        cfg
    }

    /// RANSAC settings for `strategy`: its defaults with any overrides.
    pub fn ransac(&self, strategy: Strategy) -> RansacConfig {
        let mut cfg = match strategy {
            Strategy::PnpRansac => RansacConfig::pnp(self.seed),
            _ => RansacConfig::rigid(self.seed),
        };
        if let Some(n) = self.ransac_iterations {
            cfg.max_iterations = n;
        }
        if let Some(t) = self.ransac_threshold {
            cfg.inlier_threshold = t;
        }
        if let Some(s) = self.ransac_sample {
            cfg.sample_size = s;
        }
        cfg
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_then_overrides() {
        let mut s = Settings::default();
        s.apply_file("# run\nmode = mlp\nepochs = 7\n\nlambda_r = 0\nhidden = 8, 4\nseed = 3\n")
            .unwrap();
        assert_eq!(s.train.mode, TrainMode::Mlp);
        assert_eq!(s.train.epochs, 7);
        assert_eq!(s.train.loss_weights.lambda_r, 0.0);
        assert_eq!(s.train.hidden, [8, 4]);
        assert_eq!((s.seed, s.train.seed), (3, 3));
        s.apply("epochs", "9").unwrap();
        assert_eq!(s.train.epochs, 9);
        s.apply("preset", "reference").unwrap();
        assert_eq!(s.train.adam.learning_rate, 1e-4);
        assert_eq!(s.train.mode, TrainMode::Mlp);
        assert_eq!(s.train.seed, 3);
        s.apply("mode", "direct").unwrap();
        assert_eq!(
            (s.train.mode, s.train.adam.learning_rate),
            (TrainMode::Direct, 1e-4)
        );
    }

    #[test]
    fn rejects_bad_input() {
        let mut s = Settings::default();
        assert!(s.apply("colour", "red").is_err());
        assert!(s.apply("epochs", "many").is_err());
        assert!(s.apply_file("epochs 3").is_err());
        assert!(s.apply("hidden", "3").is_err());
        s.apply("lambda_c", "-1").unwrap();
        assert!(s.validate().is_err());
    }

    #[test]
    fn ransac_overrides() {
        let mut s = Settings::default();
        s.apply("ransac_threshold", "0.25").unwrap();
        let r = s.ransac(Strategy::RigidRansac);
        assert_eq!(
            (r.max_iterations, r.inlier_threshold, r.sample_size),
            (2000, 0.25, 10)
        );
        assert_eq!(s.ransac(Strategy::PnpRansac).sample_size, 4);
    }
}
