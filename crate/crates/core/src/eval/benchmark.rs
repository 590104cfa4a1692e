//! Timing of prediction and pose computation per grid resolution.

use std::time::Instant;

use crate::alignment::weighted_kabsch;
use crate::sim::{
    generate_trajectory, render, RenderConfig, Resolution, SceneModel, TrajectoryConfig,
    TrajectoryMode,
};
use crate::train::TrainableModel;
use crate::{Error, Result};

use super::{elapsed_ms, Report};

#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkRow {
    pub resolution: Resolution,
    pub frames: usize,
    /// Correspondences per pose computation (every grid cell).
    pub correspondences: usize,
    pub mean_prediction_ms: f64,
    pub mean_pose_ms: f64,
}

impl BenchmarkRow {
    pub fn write_to(&self, report: &mut Report) {
        report
            .section(format!("benchmark.{}", self.resolution))
            .push("frames", self.frames)
            .push("correspondences", self.correspondences)
            .push("mean_prediction_ms", self.mean_prediction_ms)
            .push("mean_pose_ms", self.mean_pose_ms);
    }
}

/// Mean time to predict the full-grid maps and to align them with weighted
/// Kabsch over `n_frames` random views per resolution. Needs an mlp model,
/// which runs on any grid.
pub fn benchmark(
    model: &TrainableModel,
    scene: &SceneModel,
    resolutions: &[Resolution],
    n_frames: usize,
    seed: u64,
) -> Result<Vec<BenchmarkRow>> {
    if n_frames == 0 {
        return Err(Error::Config("benchmark needs at least one frame".into()));
    }
    let mut rows = Vec::with_capacity(resolutions.len());
    for &res in resolutions {
        let model = model.with_resolution(res)?;
        let traj = TrajectoryConfig::new(n_frames, TrajectoryMode::RandomLookAt, seed)
            .with_resolution(res);
        let frames = generate_trajectory(scene, &traj)?;
        let (mut predict_ms, mut pose_ms) = (0.0, 0.0);
        for frame in &frames {
            let obs = render(scene, frame, &RenderConfig::default(), seed)?;
            let start = Instant::now();
            let maps = model.predict(&obs)?;
            predict_ms += elapsed_ms(start);
            let c = obs.to_dense_correspondences(&maps)?;
            let start = Instant::now();
            let solved = weighted_kabsch(&c);
            pose_ms += elapsed_ms(start);
            solved?;
        }
        rows.push(BenchmarkRow {
            resolution: res,
            frames: frames.len(),
            correspondences: res.cells(),
            mean_prediction_ms: predict_ms / frames.len() as f64,
            mean_pose_ms: pose_ms / frames.len() as f64,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{generate_scene, Extent};
    use crate::train::{TrainConfig, TrainMode};

    #[test]
    fn rows_are_positive_and_sized_by_grid() {
        let scene = generate_scene(100, Extent::default(), 0.0, 4).unwrap();
        let cfg = TrainConfig {
            hidden: [8, 8],
            ..TrainConfig::desk(TrainMode::Mlp)
        };
        let model = TrainableModel::new(&cfg, scene.extent, &[]).unwrap();
        let rows = benchmark(
            &model,
            &scene,
            &[Resolution::DEFAULT, Resolution::LOW],
            3,
            4,
        )
        .unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].correspondences, 4800);
        assert_eq!(rows[1].correspondences, 1200);
        for r in &rows {
            assert_eq!(r.frames, 3);
            assert!(r.mean_prediction_ms > 0.0 && r.mean_pose_ms > 0.0);
        }
        let mut report = Report::new();
        rows[0].write_to(&mut report);
        assert_eq!(Report::parse(&report.to_string()).unwrap(), report);
    }

    #[test]
    fn direct_models_cannot_change_grid() {
        let scene = generate_scene(100, Extent::default(), 0.0, 4).unwrap();
        let model =
            TrainableModel::new(&TrainConfig::desk(TrainMode::Direct), scene.extent, &[]).unwrap();
        assert!(benchmark(&model, &scene, &[Resolution::LOW], 1, 0).is_err());
        let mlp =
            TrainableModel::new(&TrainConfig::desk(TrainMode::Mlp), scene.extent, &[]).unwrap();
        assert!(benchmark(&mlp, &scene, &[Resolution::LOW], 0, 0).is_err());
    }
}
