//! Paired training runs that vary one factor at a time: the loss terms,
//! the grid resolution and what the camera branch predicts.

use crate::losses::LossWeights;
use crate::robust::{RansacConfig, Strategy};
use crate::sim::{render, Frame, Observation, RenderConfig, Resolution, SceneModel};
use crate::train::{train, CameraOutput, TrainConfig, TrainableModel};
use crate::Result;

use super::{evaluate, EvalResult, Report};

/// Splits every fourth frame (index 2 mod 4) off for evaluation.
pub fn split_heldout<T: Clone>(items: &[T]) -> (Vec<T>, Vec<T>) {
    let (mut train, mut heldout) = (Vec::new(), Vec::new());
    for (i, item) in items.iter().enumerate() {
        if i % 4 == 2 {
            heldout.push(item.clone());
        } else {
            train.push(item.clone());
        }
    }
    (train, heldout)
}

pub struct AblationSetup<'a> {
    pub scene: &'a SceneModel,
    /// Camera poses; re-sampled on each variant's grid.
    pub frames: &'a [Frame],
    pub render: RenderConfig,
    pub render_seed: u64,
    /// Settings shared by every variant.
    pub base: TrainConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub group: &'static str,
    pub name: String,
    pub loss_weights: LossWeights,
    pub resolution: Resolution,
    pub camera_output: CameraOutput,
}

impl Variant {
    fn config(&self, base: &TrainConfig) -> TrainConfig {
        TrainConfig {
            loss_weights: self.loss_weights,
            resolution: self.resolution,
            camera_output: self.camera_output,
            ..*base
        }
    }

    fn same_run(&self, other: &Variant) -> bool {
        self.loss_weights == other.loss_weights
            && self.resolution == other.resolution
            && self.camera_output == other.camera_output
    }
}

fn variant(group: &'static str, name: impl Into<String>, base: &TrainConfig) -> Variant {
    Variant {
        group,
        name: name.into(),
        loss_weights: base.loss_weights,
        resolution: base.resolution,
        camera_output: base.camera_output,
    }
}

/// Pose only, pose with reprojection, pose with consistency, and all terms,
/// keeping the base weight of each term that is switched on.
pub fn loss_variants(base: &TrainConfig) -> Vec<Variant> {
    let w = base.loss_weights;
    [
        ("pose", false, false),
        ("pose+reprojection", false, true),
        ("pose+consistency", true, false),
        ("all", true, true),
    ]
    .into_iter()
    .map(|(name, c, r)| Variant {
        loss_weights: LossWeights {
            lambda_p: w.lambda_p,
            lambda_c: if c { w.lambda_c } else { 0.0 },
            lambda_r: if r { w.lambda_r } else { 0.0 },
        },
        ..variant("losses", name, base)
    })
    .collect()
}

pub fn resolution_variants(base: &TrainConfig) -> Vec<Variant> {
    [Resolution::HIGH, Resolution::DEFAULT, Resolution::LOW]
        .into_iter()
        .map(|resolution| Variant {
            resolution,
            ..variant("resolution", resolution.to_string(), base)
        })
        .collect()
}

pub fn output_variants(base: &TrainConfig) -> Vec<Variant> {
    [CameraOutput::Depth, CameraOutput::Coordinates]
        .into_iter()
        .map(|camera_output| Variant {
            camera_output,
            ..variant("output", camera_output.to_string(), base)
        })
        .collect()
}

/// The nine rows: four loss combinations, three resolutions, two outputs.
pub fn standard_variants(base: &TrainConfig) -> Vec<Variant> {
    let mut v = loss_variants(base);
    v.extend(resolution_variants(base));
    v.extend(output_variants(base));
    v
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    /// Weighted solve on the held-out frames.
    pub heldout: EvalResult,
    pub final_total_loss: f64,
    pub model: TrainableModel,
}

impl AblationRow {
    pub fn write_to(&self, report: &mut Report) {
        let v = &self.variant;
        let w = v.loss_weights;
        report
            .section(format!("{}.{}", v.group, v.name))
            .push("lambda_p", w.lambda_p)
            .push("lambda_c", w.lambda_c)
            .push("lambda_r", w.lambda_r)
            .push("resolution", v.resolution)
            .push("camera_output", v.camera_output)
            .push("final_total_loss", self.final_total_loss)
            .push("heldout_frames", self.heldout.frames.len())
            .push("heldout_failures", self.heldout.failures)
            .push("median_translation_m", self.heldout.median_translation)
            .push("median_rotation_deg", self.heldout.median_rotation);
    }
}

fn run_variant(setup: &AblationSetup<'_>, v: &Variant) -> Result<AblationRow> {
    let cfg = v.config(&setup.base);
    let observations = setup
        .frames
        .iter()
        .map(|f| {
            render(
                setup.scene,
                &f.at_resolution(v.resolution),
                &setup.render,
                setup.render_seed,
            )
        })
        .collect::<Result<Vec<Observation>>>()?;
    let (train_obs, heldout) = split_heldout(&observations);
    let model = TrainableModel::new(&cfg, setup.scene.extent, &train_obs)?;
    let (model, history) = train(model, &train_obs, &[], &cfg)?;
    let heldout = evaluate(
        &model,
        &heldout,
        Strategy::Weighted,
        &RansacConfig::rigid(0),
    )?;
    Ok(AblationRow {
        variant: v.clone(),
        heldout,
        final_total_loss: history.last().map_or(f64::NAN, |r| r.losses.total),
        model,
    })
}

/// Trains and scores each variant, reusing results for variants that
/// describe the same run.
pub fn run_ablation(setup: &AblationSetup<'_>, variants: &[Variant]) -> Result<Vec<AblationRow>> {
    let mut rows: Vec<AblationRow> = Vec::with_capacity(variants.len());
    for v in variants {
        let row = match rows.iter().find(|r| r.variant.same_run(v)) {
            Some(done) => AblationRow {
                variant: v.clone(),
                ..done.clone()
            },
            None => run_variant(setup, v)?,
        };
        rows.push(row);
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{
        generate_scene, generate_trajectory, Extent, TrajectoryConfig, TrajectoryMode,
    };
    use crate::train::TrainMode;

    #[test]
    fn heldout_split_takes_every_fourth() {
        let (t, h) = split_heldout(&(0..10).collect::<Vec<_>>());
        assert_eq!(h, vec![2, 6]);
        assert_eq!(t, vec![0, 1, 3, 4, 5, 7, 8, 9]);
        let (t, h) = split_heldout(&(0..20).collect::<Vec<_>>());
        assert_eq!((t.len(), h.len()), (15, 5));
    }

    #[test]
    fn standard_variants_have_nine_rows() {
        let base = TrainConfig::desk(TrainMode::Mlp);
        let v = standard_variants(&base);
        assert_eq!(v.len(), 9);
        assert_eq!(v.iter().filter(|r| r.group == "losses").count(), 4);
        assert_eq!(v.iter().filter(|r| r.group == "resolution").count(), 3);
        assert_eq!(v.iter().filter(|r| r.group == "output").count(), 2);
        assert_eq!(v[0].loss_weights.lambda_c, 0.0);
        assert_eq!(v[0].loss_weights.lambda_r, 0.0);
        assert_eq!(v[3].loss_weights, base.loss_weights);
        assert!(v[3].same_run(&v[5]) && v[3].same_run(&v[7]));
    }

    #[test]
    fn ablation_runs_and_reports_every_row() {
        let scene = generate_scene(60, Extent::default(), 0.0, 2).unwrap();
        let frames =
            generate_trajectory(&scene, &TrajectoryConfig::new(5, TrajectoryMode::Orbit, 2))
                .unwrap();
        let base = TrainConfig {
            epochs: 2,
            hidden: [6, 6],
            resolution: Resolution::LOW,
            ..TrainConfig::desk(TrainMode::Mlp)
        };
        let setup = AblationSetup {
            scene: &scene,
            frames: &frames,
            render: RenderConfig::default(),
            render_seed: 2,
            base,
        };
        let variants: Vec<Variant> = standard_variants(&base)
            .into_iter()
            .filter(|v| v.resolution != Resolution::HIGH)
            .collect();
        let rows = run_ablation(&setup, &variants).unwrap();
        assert_eq!(rows.len(), 8);
        assert_eq!(rows[3].heldout, rows[6].heldout);
        let mut report = Report::new();
        rows.iter().for_each(|r| r.write_to(&mut report));
        let back = Report::parse(&report.to_string()).unwrap();
        assert_eq!(back.sections.len(), 8);
        assert!(back.find("losses.pose+reprojection").is_some());
        assert_eq!(
            back.find("output.coordinates")
                .unwrap()
                .get("camera_output"),
            Some("coordinates")
        );
    }
}
