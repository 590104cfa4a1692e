use std::fmt;
use std::str::FromStr;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;

use super::scene::SceneModel;
use crate::geometry::{invert, pose_to_quat, quat_to_pose, CameraIntrinsics, PixelGrid, Pose};
use crate::{Error, Result};

pub const INDOOR_DEPTH_RANGE: (f64, f64) = (0.1, 10.0);
pub const OUTDOOR_DEPTH_RANGE: (f64, f64) = (0.1, 600.0);

const BASE_WIDTH: usize = 640;
const BASE_HEIGHT: usize = 480;
const MIN_VISIBLE_FRACTION: f64 = 0.2;
const MAX_PLACEMENT_ATTEMPTS: usize = 100;

/// Intrinsics of the full-size 640 × 480 sensor.
pub fn base_intrinsics() -> CameraIntrinsics {
    CameraIntrinsics {
        fx: 525.0,
        fy: 525.0,
        cx: 320.0,
        cy: 240.0,
    }
}

/// Output grid size, written `HxW` (e.g. `60x80`).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Resolution {
    pub height: usize,
    pub width: usize,
}

impl Resolution {
    pub const HIGH: Resolution = Resolution {
        height: 120,
        width: 160,
    };
    pub const DEFAULT: Resolution = Resolution {
        height: 60,
        width: 80,
    };
    pub const LOW: Resolution = Resolution {
        height: 30,
        width: 40,
    };

    pub fn new(height: usize, width: usize) -> Result<Self> {
        if height == 0 || width == 0 || height * BASE_WIDTH != width * BASE_HEIGHT {
            return Err(Error::Config(format!(
                "resolution {height}x{width} is not a 4:3 downsampling of {BASE_HEIGHT}x{BASE_WIDTH}"
            )));
        }
        Ok(Self { height, width })
    }

    /// Downsampling factor relative to the 640 × 480 sensor.
    pub fn factor(&self) -> f64 {
        BASE_WIDTH as f64 / self.width as f64
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn intrinsics(&self) -> CameraIntrinsics {
        base_intrinsics().downsampled(self.factor())
    }
}

impl Default for Resolution {
    fn default() -> Self {
        Self::DEFAULT
    }
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.height, self.width)
    }
}

impl FromStr for Resolution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Config(format!("resolution `{s}` is not of the form HxW"));
        let (h, w) = s.trim().split_once(['x', 'X']).ok_or_else(bad)?;
        Resolution::new(
            h.trim().parse().map_err(|_| bad())?,
            w.trim().parse().map_err(|_| bad())?,
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TrajectoryMode {
    /// Evenly spaced yaw around the scene center, slightly above it.
    Orbit,
    /// Random positions around the scene looking at random interior points.
    RandomLookAt,
}

impl fmt::Display for TrajectoryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TrajectoryMode::Orbit => "orbit",
            TrajectoryMode::RandomLookAt => "random-look-at",
        })
    }
}

impl FromStr for TrajectoryMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "orbit" => Ok(TrajectoryMode::Orbit),
            "random-look-at" | "random" => Ok(TrajectoryMode::RandomLookAt),
            other => Err(Error::Config(format!("unknown trajectory mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrajectoryConfig {
    pub n_frames: usize,
    pub mode: TrajectoryMode,
    pub resolution: Resolution,
    pub depth_range: (f64, f64),
    pub seed: u64,
}

impl TrajectoryConfig {
    pub fn new(n_frames: usize, mode: TrajectoryMode, seed: u64) -> Self {
        Self {
            n_frames,
            mode,
            resolution: Resolution::DEFAULT,
            depth_range: INDOOR_DEPTH_RANGE,
            seed,
        }
    }

    pub fn with_resolution(self, resolution: Resolution) -> Self {
        Self { resolution, ..self }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub id: usize,
    /// Camera → global.
    pub pose_gt: Pose,
    pub intrinsics: CameraIntrinsics,
    pub grid: PixelGrid,
}

impl Frame {
    pub fn resolution(&self) -> Resolution {
        Resolution {
            height: self.grid.height,
            width: self.grid.width,
        }
    }

    /// The same camera sampled on another grid.
    pub fn at_resolution(&self, res: Resolution) -> Frame {
        Frame {
            id: self.id,
            pose_gt: self.pose_gt,
            intrinsics: res.intrinsics(),
            grid: PixelGrid::full(res.width, res.height),
        }
    }
}

/// Camera at `eye` looking at `target`, with world `+z` up and image rows
/// pointing down.
pub(crate) fn look_at(eye: Vector3<f64>, target: Vector3<f64>) -> Option<Pose> {
    let forward = (target - eye).try_normalize(1e-12)?;
    let right = forward.cross(&Vector3::z()).try_normalize(1e-9)?;
    let down = forward.cross(&right);
    Some(canonical_pose(Pose {
        rotation: Matrix3::from_columns(&[right, down, forward]),
        translation: eye,
    }))
}

/// Snaps a pose to one that survives the quaternion text format bit for bit.
pub(crate) fn canonical_pose(mut pose: Pose) -> Pose {
    for _ in 0..8 {
        let q = pose_to_quat(&pose);
        let next = quat_to_pose(&q).expect("rotation quaternions are unit length");
        if pose_to_quat(&next) == q {
            return next;
        }
        pose = next;
    }
    pose
}

/// Fraction of landmarks inside the depth range whose projection lands on the grid.
pub(crate) fn visible_fraction(
    scene: &SceneModel,
    pose: &Pose,
    res: Resolution,
    range: (f64, f64),
) -> f64 {
    let k = res.intrinsics();
    let w2c = invert(pose);
    let visible = scene
        .landmarks
        .iter()
        .filter(|l| {
            let p = w2c.transform_point(&l.position);
            if !(p.z >= range.0 && p.z <= range.1) {
                return false;
            }
            let u = (k.fx * p.x / p.z + k.cx).round();
            let v = (k.fy * p.y / p.z + k.cy).round();
            u >= 0.0 && v >= 0.0 && u < res.width as f64 && v < res.height as f64
        })
        .count();
    visible as f64 / scene.landmarks.len() as f64
}

fn random_look_at<R: Rng>(scene: &SceneModel, rng: &mut R) -> Option<Pose> {
    let span = scene.extent.span();
    let center = scene.extent.center();
    let yaw = rng.gen_range(0.0..std::f64::consts::TAU);
    let dist = rng.gen_range(0.8 * span..1.6 * span);
    let height = rng.gen_range(0.1 * span..0.6 * span);
    let eye = center + Vector3::new(dist * yaw.cos(), dist * yaw.sin(), height);
    let half = (scene.extent.max - scene.extent.min) * 0.25;
    let target = center + Vector3::from_fn(|i, _| rng.gen_range(-half[i]..=half[i]));
    look_at(eye, target)
}

/// Camera poses around `scene`, each seeing at least a fifth of the
/// landmarks within the depth range.
pub fn generate_trajectory(scene: &SceneModel, cfg: &TrajectoryConfig) -> Result<Vec<Frame>> {
    if cfg.n_frames == 0 {
        return Err(Error::Config(
            "a trajectory needs at least one frame".into(),
        ));
    }
    let (lo, hi) = cfg.depth_range;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::Config(format!("invalid depth range [{lo}, {hi}]")));
    }
    let res = cfg.resolution;
    let frame = |id, pose_gt| Frame {
        id,
        pose_gt,
        intrinsics: res.intrinsics(),
        grid: PixelGrid::full(res.width, res.height),
    };
    let ok = |p: &Pose| visible_fraction(scene, p, res, cfg.depth_range) >= MIN_VISIBLE_FRACTION;
    let span = scene.extent.span();
    let center = scene.extent.center();
    let mut frames = Vec::with_capacity(cfg.n_frames);
    let mut failed = 0;
    for id in 0..cfg.n_frames {
        let pose = match cfg.mode {
            TrajectoryMode::Orbit => {
                let yaw = std::f64::consts::TAU * id as f64 / cfg.n_frames as f64;
                let radius = 1.25 * span;
                let eye =
                    center + Vector3::new(radius * yaw.cos(), radius * yaw.sin(), 0.375 * span);
                look_at(eye, center).filter(ok)
            }
            TrajectoryMode::RandomLookAt => {
                let mut rng = super::stream_rng(cfg.seed, id as u64);
                (0..MAX_PLACEMENT_ATTEMPTS).find_map(|_| random_look_at(scene, &mut rng).filter(ok))
            }
        };
        match pose {
            Some(p) => frames.push(frame(id, p)),
            None => failed += 1,
        }
    }
    if failed > 0 {
        return Err(Error::Visibility { frames: failed });
    }
    Ok(frames)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::check_rotation;
    use crate::sim::scene::{generate_scene, Extent};

    fn scene() -> SceneModel {
        generate_scene(200, Extent::default(), 0.0, 3).unwrap()
    }

    fn yaw(p: &Pose) -> f64 {
        let f = p.rotation.column(2);
        f.y.atan2(f.x)
    }

    #[test]
    fn orbit_yaw_gaps() {
        let frames = generate_trajectory(
            &scene(),
            &TrajectoryConfig::new(4, TrajectoryMode::Orbit, 0),
        )
        .unwrap();
        assert_eq!(frames.len(), 4);
        for pair in frames.windows(2) {
            let gap =
                (yaw(&pair[1].pose_gt) - yaw(&pair[0].pose_gt)).rem_euclid(std::f64::consts::TAU);
            assert!(
                (gap.to_degrees() - 90.0).abs() < 1e-6,
                "{}",
                gap.to_degrees()
            );
        }
    }

    #[test]
    fn poses_are_rotations_and_visible() {
        let s = scene();
        for mode in [TrajectoryMode::Orbit, TrajectoryMode::RandomLookAt] {
            let cfg = TrajectoryConfig::new(12, mode, 9);
            let frames = generate_trajectory(&s, &cfg).unwrap();
            for f in &frames {
                check_rotation(&f.pose_gt.rotation).unwrap();
                assert!((f.pose_gt.rotation.determinant() - 1.0).abs() < 1e-12);
                assert!(visible_fraction(&s, &f.pose_gt, cfg.resolution, cfg.depth_range) >= 0.2);
                assert_eq!(f.grid.len(), 60 * 80);
            }
        }
    }

    #[test]
    fn deterministic() {
        let s = scene();
        let cfg = TrajectoryConfig::new(8, TrajectoryMode::RandomLookAt, 5);
        let a = generate_trajectory(&s, &cfg).unwrap();
        let b = generate_trajectory(&s, &cfg).unwrap();
        let bits = |fs: &[Frame]| {
            fs.iter()
                .flat_map(|f| {
                    f.pose_gt
                        .rotation
                        .iter()
                        .chain(f.pose_gt.translation.iter())
                        .map(|v| v.to_bits())
                        .collect::<Vec<_>>()
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&a), bits(&b));
        let c = generate_trajectory(&s, &TrajectoryConfig { seed: 6, ..cfg }).unwrap();
        assert_ne!(bits(&a), bits(&c));
    }

    #[test]
    fn visibility_failure_and_config_errors() {
        let s = scene();
        let tight = TrajectoryConfig {
            depth_range: (0.1, 0.5),
            ..TrajectoryConfig::new(2, TrajectoryMode::Orbit, 0)
        };
        assert!(matches!(
            generate_trajectory(&s, &tight),
            Err(Error::Visibility { frames: 2 })
        ));
        assert!(
            generate_trajectory(&s, &TrajectoryConfig::new(0, TrajectoryMode::Orbit, 0)).is_err()
        );
    }

    #[test]
    fn resolution_parsing() {
        let r: Resolution = "120x160".parse().unwrap();
        assert_eq!(r, Resolution::HIGH);
        assert_eq!(r.factor(), 4.0);
        assert_eq!(r.to_string(), "120x160");
        assert_eq!(Resolution::LOW.intrinsics().fx, 525.0 / 16.0);
        assert!("60x81".parse::<Resolution>().is_err());
        assert!("sixty".parse::<Resolution>().is_err());
    }
}
