use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use kloc_core::eval::{self, AblationSetup, Report};
use kloc_core::robust::Strategy;
use kloc_core::sim::{
    generate_scene, generate_trajectory, read_observations, read_scene, read_trajectory, render,
    write_observations, write_scene, write_trajectory, Extent, Frame, Observation, Resolution,
    SceneModel, TrajectoryConfig,
};
use kloc_core::train::{
    read_checkpoint, train as fit, write_checkpoint, TrainMode, TrainableModel,
};
use kloc_core::Error;

use crate::settings::Settings;

pub const EXIT_OTHER: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_DEGENERATE: u8 = 4;
pub const EXIT_NO_CONSENSUS: u8 = 5;

pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if let Some(k) = cause.downcast_ref::<Error>() {
            return match k {
                Error::Config(_) => EXIT_USAGE,
                Error::Io(_) | Error::Parse { .. } => EXIT_IO,
                Error::DegenerateGeometry
                | Error::DegenerateWeights
                | Error::DegenerateGradient { .. }
                | Error::InsufficientPoints { .. }
                | Error::TrainingAborted { .. } => EXIT_DEGENERATE,
                Error::NoConsensus => EXIT_NO_CONSENSUS,
                _ => EXIT_OTHER,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return EXIT_IO;
        }
    }
    EXIT_OTHER
}

pub fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn emit(report: &Report, path: Option<&Path>) -> anyhow::Result<()> {
    match path {
        Some(p) => write(p, &report.to_string()),
        None => {
            print!("{report}");
            Ok(())
        }
    }
}

pub struct DataPaths {
    pub scene: PathBuf,
    pub trajectory: PathBuf,
    pub observations: Option<PathBuf>,
}

struct Data {
    scene: SceneModel,
    observations: Vec<Observation>,
}

fn load_scene(path: &Path) -> anyhow::Result<SceneModel> {
    read_scene(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn load_frames(path: &Path) -> anyhow::Result<Vec<Frame>> {
    read_trajectory(&read(path)?).with_context(|| format!("parsing {}", path.display()))
}

fn render_all(
    s: &Settings,
    scene: &SceneModel,
    frames: &[Frame],
) -> anyhow::Result<Vec<Observation>> {
    let cfg = s.render_config();
    Ok(frames
        .iter()
        .map(|f| render(scene, f, &cfg, s.seed))
        .collect::<kloc_core::Result<_>>()?)
}

fn load_data(s: &Settings, paths: &DataPaths) -> anyhow::Result<Data> {
    let scene = load_scene(&paths.scene)?;
    let frames = load_frames(&paths.trajectory)?;
    let observations = match &paths.observations {
        Some(p) => read_observations(&read(p)?, &frames)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => render_all(s, &scene, &frames)?,
    };
    Ok(Data {
        scene,
        observations,
    })
}

pub fn simulate(s: &Settings, out: &Path) -> anyhow::Result<()> {
    let scene = generate_scene(s.landmarks, Extent::default(), s.label_mix, s.seed)?;
    let mut traj =
        TrajectoryConfig::new(s.frames, s.trajectory_mode, s.seed).with_resolution(s.resolution);
    traj.depth_range = s.train.depth_range;
    let frames = generate_trajectory(&scene, &traj)?;
    let observations = render_all(s, &scene, &frames)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    write(&out.join("scene.kloc"), &write_scene(&scene))?;
    write(&out.join("trajectory.kloc"), &write_trajectory(&frames)?)?;
    write(
        &out.join("observations.kloc"),
        &write_observations(&observations),
    )?;
    println!(
        "wrote {} landmarks, {} frames, {} hits to {}",
        scene.landmarks.len(),
        frames.len(),
        observations.iter().map(|o| o.hits.len()).sum::<usize>(),
        out.display()
    );
    Ok(())
}

fn split(s: &Settings, observations: Vec<Observation>) -> (Vec<Observation>, Vec<Observation>) {
    if s.heldout {
        eval::split_heldout(&observations)
    } else {
        (observations, Vec::new())
    }
}

pub fn train(
    s: &Settings,
    paths: &DataPaths,
    model_out: &Path,
    resume: Option<&Path>,
    report_out: Option<&Path>,
) -> anyhow::Result<()> {
    let data = load_data(s, paths)?;
    let (train_obs, heldout) = split(s, data.observations);
    let model = match resume {
        Some(p) => {
            read_checkpoint(&read(p)?).with_context(|| format!("parsing {}", p.display()))?
        }
        None => TrainableModel::new(&s.train, data.scene.extent, &train_obs)?,
    };
    let (model, history) = fit(model, &train_obs, &heldout, &s.train)?;
    write(model_out, &write_checkpoint(&model))?;

    let mut report = Report::new();
    let c = &s.train;
    report
        .section("train")
        .push("mode", c.mode)
        .push("camera_output", c.camera_output)
        .push("train_frames", train_obs.len())
        .push("heldout_frames", heldout.len())
        .push("epochs_completed", model.epochs_completed)
        .push("learning_rate", c.adam.learning_rate)
        .push("schedule", c.schedule)
        .push("lambda_p", c.loss_weights.lambda_p)
        .push("lambda_c", c.loss_weights.lambda_c)
        .push("lambda_r", c.loss_weights.lambda_r)
        .push("seed", c.seed);
    for r in &history.epochs {
        let sec = report.section(format!("epoch.{}", r.epoch));
        sec.push("total", r.losses.total)
            .push("pose", r.losses.pose)
            .push("consistency", r.losses.consistency)
            .push("reprojection", r.losses.reprojection)
            .push("train_translation_m", r.train_translation)
            .push("train_rotation_deg", r.train_rotation)
            .push("skipped", r.skipped);
        if let (Some(t), Some(rot)) = (r.heldout_translation, r.heldout_rotation) {
            sec.push("heldout_translation_m", t)
                .push("heldout_rotation_deg", rot);
        }
    }
    emit(&report, report_out)
}

pub enum Predictor {
    Model(PathBuf),
    GroundTruth,
}

pub fn evaluate(
    s: &Settings,
    paths: &DataPaths,
    source: &Predictor,
    timing: bool,
    report_out: Option<&Path>,
) -> anyhow::Result<()> {
    let data = load_data(s, paths)?;
    let (_, heldout) = split(s, data.observations.clone());
    let frames = if s.heldout {
        heldout
    } else {
        data.observations
    };
    let model = match source {
        Predictor::Model(p) => {
            Some(read_checkpoint(&read(p)?).with_context(|| format!("parsing {}", p.display()))?)
        }
        Predictor::GroundTruth => None,
    };
    let strategies = match s.strategy {
        Some(st) => vec![st],
        None => Strategy::ALL.to_vec(),
    };
    let mut report = Report::new();
    report
        .section("evaluate")
        .push(
            "source",
            if model.is_some() {
                "model"
            } else {
                "ground-truth"
            },
        )
        .push("frames", frames.len())
        .push("seed", s.seed);
    for st in strategies {
        let result = eval::evaluate_with(&frames, st, &s.ransac(st), |obs| match &model {
            Some(m) => m.predict(obs),
            None => obs.ground_truth_maps(s.train.depth_range),
        })
        .with_context(|| format!("strategy {st}"))?;
        result.write_to(&mut report, st.name(), timing);
    }
    emit(&report, report_out)
}

pub fn ablate(
    s: &Settings,
    scene: &Path,
    trajectory: &Path,
    report_out: Option<&Path>,
) -> anyhow::Result<()> {
    if s.train.mode != TrainMode::Mlp {
        return Err(
            Error::Config("ablation scores held-out frames and needs `mode = mlp`".into()).into(),
        );
    }
    let scene = load_scene(scene)?;
    let frames = load_frames(trajectory)?;
    let setup = AblationSetup {
        scene: &scene,
        frames: &frames,
        render: s.render_config(),
        render_seed: s.seed,
        base: s.train,
    };
    let rows = eval::run_ablation(&setup, &eval::standard_variants(&s.train))?;
    let mut report = Report::new();
    report
        .section("ablation")
        .push("rows", rows.len())
        .push("frames", frames.len())
        .push("epochs", s.train.epochs)
        .push("seed", s.seed);
    rows.iter().for_each(|r| r.write_to(&mut report));
    emit(&report, report_out)
}

pub fn benchmark(
    s: &Settings,
    model: &Path,
    scene: &Path,
    report_out: Option<&Path>,
) -> anyhow::Result<()> {
    let model =
        read_checkpoint(&read(model)?).with_context(|| format!("parsing {}", model.display()))?;
    let scene = load_scene(scene)?;
    let res = [Resolution::HIGH, Resolution::DEFAULT, Resolution::LOW];
    let rows = eval::benchmark(&model, &scene, &res, s.benchmark_frames, s.seed)?;
    let mut report = Report::new();
    report
        .section("benchmark")
        .push("frames_per_resolution", s.benchmark_frames);
    rows.iter().for_each(|r| r.write_to(&mut report));
    emit(&report, report_out)
}
