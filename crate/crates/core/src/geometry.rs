//! Rigid transforms and the pinhole camera.
//!
//! A [`Pose`] always stores the camera→global transform `T`, so a camera-frame
//! point `c` lands at `T·c` in the scene. Projecting a global point therefore
//! goes through `T⁻¹` first. Angles are reported in degrees.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector2, Vector3};

use crate::{Error, Result};

/// Orthonormality tolerance used when validating user-provided rotations.
pub const ROTATION_TOLERANCE: f64 = 1e-6;

/// Minimum camera-frame depth (meters) a point needs to be projectable.
pub const MIN_PROJECTION_DEPTH: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a pose, rejecting matrices that are not proper rotations.
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        check_rotation(&rotation)?;
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn from_translation(translation: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation,
        }
    }

    /// Rotation about `axis` by `angle` radians, followed by `translation`.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64, translation: Vector3<f64>) -> Self {
        let rotation = Rotation3::from_scaled_axis(axis.normalize() * angle).into_inner();
        Self {
            rotation,
            translation,
        }
    }

    pub fn transform_point(&self, x: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * x + self.translation
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Pose) -> Pose {
        compose(self, other)
    }

    pub fn inverse(&self) -> Pose {
        invert(self)
    }
}

pub fn compose(a: &Pose, b: &Pose) -> Pose {
    Pose {
        rotation: a.rotation * b.rotation,
        translation: a.rotation * b.translation + a.translation,
    }
}

pub fn invert(p: &Pose) -> Pose {
    let rt = p.rotation.transpose();
    Pose {
        rotation: rt,
        translation: -(rt * p.translation),
    }
}

/// Largest entry of `RᵀR − I`, and `|det R − 1|`, whichever is worse.
pub fn orthonormality_error(r: &Matrix3<f64>) -> f64 {
    let gram = r.transpose() * r - Matrix3::identity();
    let ortho = gram.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    ortho.max((r.determinant() - 1.0).abs())
}

pub fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    let err = orthonormality_error(r);
    if err.is_finite() && err <= ROTATION_TOLERANCE {
        Ok(())
    } else {
        Err(Error::InvalidRotation(err))
    }
}

/// Geodesic angle between two rotations in radians.
///
/// Equal to `arccos(½(tr(R₁R₂ᵀ) − 1))`, evaluated as `atan2(sin θ, cos θ)`
/// with `sin θ` taken from the skew part of `R₁R₂ᵀ`. Plain `arccos` loses
/// about half the digits near zero angle (1e-8 rad of round-off noise).
pub fn rotation_angle_rad(r1: &Matrix3<f64>, r2: &Matrix3<f64>) -> Result<f64> {
    check_rotation(r1)?;
    check_rotation(r2)?;
    let q = r1 * r2.transpose();
    let cos = 0.5 * (q.trace() - 1.0);
    let axis = Vector3::new(
        q[(2, 1)] - q[(1, 2)],
        q[(0, 2)] - q[(2, 0)],
        q[(1, 0)] - q[(0, 1)],
    );
    let sin = 0.5 * axis.norm();
    Ok(sin.atan2(cos.clamp(-1.0, 1.0)))
}

pub fn rotation_angle_deg(r1: &Matrix3<f64>, r2: &Matrix3<f64>) -> Result<f64> {
    Ok(rotation_angle_rad(r1, r2)?.to_degrees())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
            return Err(Error::Config(format!(
                "focal lengths must be positive, got fx={fx} fy={fy}"
            )));
        }
        Ok(Self { fx, fy, cx, cy })
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    /// `K⁻¹·u` for a homogeneous pixel `u = (u, v, 1)`.
    pub fn unproject(&self, u: &Vector3<f64>) -> Vector3<f64> {
        Vector3::new((u.x - self.cx) / self.fx, (u.y - self.cy) / self.fy, 1.0)
    }

    /// Pinhole projection of a camera-frame point.
    pub fn project(&self, p: &Vector3<f64>) -> Result<Vector2<f64>> {
        if p.z <= MIN_PROJECTION_DEPTH {
            return Err(Error::BehindCamera(p.z));
        }
        Ok(Vector2::new(
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
        ))
    }

    /// Intrinsics for an image downsampled by `factor` (pixel centers at
    /// integer coordinates of the coarse grid).
    pub fn downsampled(&self, factor: f64) -> Self {
        Self {
            fx: self.fx / factor,
            fy: self.fy / factor,
            cx: self.cx / factor,
            cy: self.cy / factor,
        }
    }
}

/// Homogeneous pixel coordinates on a `width × height` grid.
#[derive(Clone, Debug, PartialEq)]
pub struct PixelGrid {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Vector3<f64>>,
}

impl PixelGrid {
    pub fn new(width: usize, height: usize, pixels: Vec<Vector3<f64>>) -> Result<Self> {
        for (i, p) in pixels.iter().enumerate() {
            let inside = p.x >= 0.0 && p.x < width as f64 && p.y >= 0.0 && p.y < height as f64;
            if !inside || p.z != 1.0 {
                return Err(Error::ShapeMismatch(format!(
                    "pixel {i} = ({}, {}, {}) is not a homogeneous pixel inside {width}x{height}",
                    p.x, p.y, p.z
                )));
            }
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Every cell of the grid in row-major order.
    pub fn full(width: usize, height: usize) -> Self {
        let pixels = (0..height)
            .flat_map(|v| (0..width).map(move |u| Vector3::new(u as f64, v as f64, 1.0)))
            .collect();
        Self {
            width,
            height,
            pixels,
        }
    }

    pub fn len(&self) -> usize {
        self.pixels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pixels.is_empty()
    }

    pub fn diagonal(&self) -> f64 {
        ((self.width * self.width + self.height * self.height) as f64).sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    pub values: Vec<f64>,
    pub range: (f64, f64),
}

impl DepthMap {
    pub fn new(values: Vec<f64>, range: (f64, f64)) -> Result<Self> {
        let (lo, hi) = range;
        if !(lo > 0.0 && hi >= lo) {
            return Err(Error::Config(format!("invalid depth range [{lo}, {hi}]")));
        }
        if let Some(bad) = values.iter().find(|d| !(**d >= lo && **d <= hi)) {
            if *bad <= 0.0 {
                return Err(Error::NonPositiveDepth(*bad));
            }
            return Err(Error::Config(format!(
                "depth {bad} outside range [{lo}, {hi}]"
            )));
        }
        Ok(Self { values, range })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CoordinateFrame {
    Camera,
    Global,
}

impl CoordinateFrame {
    pub fn flipped(self) -> Self {
        match self {
            CoordinateFrame::Camera => CoordinateFrame::Global,
            CoordinateFrame::Global => CoordinateFrame::Camera,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vector3<f64>>,
    pub frame: CoordinateFrame,
}

impl PointCloud {
    pub fn new(points: Vec<Vector3<f64>>, frame: CoordinateFrame) -> Self {
        Self { points, frame }
    }

    pub fn camera(points: Vec<Vector3<f64>>) -> Self {
        Self::new(points, CoordinateFrame::Camera)
    }

    pub fn global(points: Vec<Vector3<f64>>) -> Self {
        Self::new(points, CoordinateFrame::Global)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|p| p.iter().all(|v| v.is_finite()))
    }
}

/// Applies `p` to every point; the frame tag flips (camera ↔ global).
pub fn transform_points(p: &Pose, cloud: &PointCloud) -> PointCloud {
    PointCloud {
        points: cloud.points.iter().map(|x| p.transform_point(x)).collect(),
        frame: cloud.frame.flipped(),
    }
}

/// Lifts each pixel to `d·K⁻¹·u` in the camera frame.
pub fn back_project(d: &DepthMap, k: &CameraIntrinsics, g: &PixelGrid) -> Result<PointCloud> {
    if d.len() != g.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} depths for {} pixels",
            d.len(),
            g.len()
        )));
    }
    let points = d
        .values
        .iter()
        .zip(&g.pixels)
        .map(|(&depth, u)| {
            if depth > 0.0 {
                Ok(k.unproject(u) * depth)
            } else {
                Err(Error::NonPositiveDepth(depth))
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(PointCloud::camera(points))
}

/// Projects global-frame points into the camera whose camera→global pose is `p`.
pub fn project(p: &Pose, cloud: &PointCloud, k: &CameraIntrinsics) -> Result<Vec<Vector2<f64>>> {
    let world_to_camera = invert(p);
    cloud
        .points
        .iter()
        .map(|x| k.project(&world_to_camera.transform_point(x)))
        .collect()
}

fn canonical_quaternion(q: &UnitQuaternion<f64>) -> [f64; 4] {
    let c = q.quaternion().coords; // (i, j, k, w)
    let mut out = [c.w, c.x, c.y, c.z];
    let first = out.iter().copied().find(|v| *v != 0.0).unwrap_or(1.0);
    if first < 0.0 {
        out.iter_mut().for_each(|v| *v = -*v);
    }
    out
}

/// `[tx, ty, tz, qw, qx, qy, qz]`, Hamilton convention, sign fixed so the
/// first nonzero quaternion component is positive.
pub fn pose_to_quat(p: &Pose) -> [f64; 7] {
    let rot = Rotation3::from_matrix_unchecked(p.rotation);
    let q = canonical_quaternion(&UnitQuaternion::from_rotation_matrix(&rot));
    [
        p.translation.x,
        p.translation.y,
        p.translation.z,
        q[0],
        q[1],
        q[2],
        q[3],
    ]
}

pub fn quat_to_pose(v: &[f64; 7]) -> Result<Pose> {
    let q = nalgebra::Quaternion::new(v[3], v[4], v[5], v[6]);
    let norm = q.norm();
    if !(norm > 0.0 && norm.is_finite()) {
        return Err(Error::ZeroQuaternion);
    }
    let unit = UnitQuaternion::from_quaternion(q);
    Ok(Pose {
        rotation: unit.to_rotation_matrix().into_inner(),
        translation: Vector3::new(v[0], v[1], v[2]),
    })
}

/// Uniformly random rotation plus a translation drawn from `[-scale, scale]³`.
pub fn random_pose<R: rand::Rng + ?Sized>(rng: &mut R, scale: f64) -> Pose {
    let q = UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
        standard_normal(rng),
        standard_normal(rng),
        standard_normal(rng),
        standard_normal(rng),
    ));
    Pose {
        rotation: q.to_rotation_matrix().into_inner(),
        translation: Vector3::new(
            rng.gen_range(-scale..=scale),
            rng.gen_range(-scale..=scale),
            rng.gen_range(-scale..=scale),
        ),
    }
}

pub(crate) fn standard_normal<R: rand::Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn max_abs_diff(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
        (a - b).iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    fn random_vec(rng: &mut ChaCha8Rng, s: f64) -> Vector3<f64> {
        Vector3::new(
            rng.gen_range(-s..s),
            rng.gen_range(-s..s),
            rng.gen_range(-s..s),
        )
    }

    use rand::Rng;

    #[test]
    fn compose_with_identity_and_inverse() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_pose(&mut rng, 5.0);
        assert_eq!(compose(&Pose::identity(), &p), p);
        let e = compose(&p, &invert(&p));
        assert!(max_abs_diff(&e.rotation, &Matrix3::identity()) < 1e-12);
        assert!(e.translation.norm() < 1e-12);
    }

    #[test]
    fn compose_matches_sequential_application() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let a = random_pose(&mut rng, 5.0);
        let b = random_pose(&mut rng, 5.0);
        let ab = compose(&a, &b);
        for _ in 0..100 {
            let x = random_vec(&mut rng, 10.0);
            let direct = a.transform_point(&b.transform_point(&x));
            assert!((ab.transform_point(&x) - direct).norm() < 1e-12);
        }
    }

    #[test]
    fn invert_cases() {
        assert_eq!(invert(&Pose::identity()), Pose::identity());
        let p = Pose::from_translation(Vector3::new(1.0, 2.0, 3.0));
        let inv = invert(&p);
        assert_eq!(inv.rotation, Matrix3::identity());
        assert_eq!(inv.translation, Vector3::new(-1.0, -2.0, -3.0));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let p = random_pose(&mut rng, 10.0);
            let back = invert(&invert(&p));
            assert!(max_abs_diff(&back.rotation, &p.rotation) < 1e-12);
            assert!((back.translation - p.translation).norm() < 1e-12);
        }
    }

    #[test]
    fn transform_points_cases() {
        let cloud = PointCloud::camera(vec![Vector3::new(1.0, -2.0, 3.0)]);
        let same = transform_points(&Pose::identity(), &cloud);
        assert_eq!(same.points, cloud.points);
        assert_eq!(same.frame, CoordinateFrame::Global);

        let shift = Pose::from_translation(Vector3::new(0.0, 0.0, 1.0));
        let out = transform_points(&shift, &PointCloud::camera(vec![Vector3::zeros()]));
        assert_eq!(out.points, vec![Vector3::new(0.0, 0.0, 1.0)]);

        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = random_pose(&mut rng, 3.0);
        let pts: Vec<_> = (0..20).map(|_| random_vec(&mut rng, 4.0)).collect();
        let out = transform_points(&p, &PointCloud::camera(pts.clone()));
        for (x, y) in pts.iter().zip(&out.points) {
            // Elementwise evaluation of R·x + t.
            for r in 0..3 {
                let mut acc = p.translation[r];
                for c in 0..3 {
                    acc += p.rotation[(r, c)] * x[c];
                }
                assert!((acc - y[r]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rotation_angle_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let r = random_pose(&mut rng, 1.0).rotation;
        assert_eq!(rotation_angle_deg(&r, &r).unwrap(), 0.0);

        let half_turn =
            Pose::from_axis_angle(&Vector3::z(), std::f64::consts::PI, Vector3::zeros());
        let a = rotation_angle_deg(&Matrix3::identity(), &half_turn.rotation).unwrap();
        assert!((a - 180.0).abs() < 1e-9);

        for _ in 0..20 {
            let axis = random_vec(&mut rng, 1.0);
            let p = Pose::from_axis_angle(&axis, 30f64.to_radians(), Vector3::zeros());
            let a = rotation_angle_deg(&Matrix3::identity(), &p.rotation).unwrap();
            assert!((a - 30.0).abs() < 1e-9, "{a}");
        }
    }

    #[test]
    fn rotation_angle_rejects_non_rotation() {
        let bad = Matrix3::identity() * 1.1;
        assert!(matches!(
            rotation_angle_deg(&bad, &Matrix3::identity()),
            Err(Error::InvalidRotation(_))
        ));
        let reflection = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        assert!(rotation_angle_deg(&reflection, &Matrix3::identity()).is_err());
    }

    #[test]
    fn rotation_angle_clamps_round_off() {
        // trace slightly above 3 from round-off must not produce NaN.
        let tiny = Pose::from_axis_angle(&Vector3::x(), 1e-9, Vector3::zeros()).rotation;
        let mut r = Matrix3::identity();
        r[(0, 0)] += 5e-13;
        r[(1, 1)] += 5e-13;
        r[(2, 2)] += 5e-13;
        let a = rotation_angle_deg(&r, &Matrix3::identity()).unwrap();
        assert_eq!(a, 0.0);
        assert!(rotation_angle_deg(&tiny, &Matrix3::identity())
            .unwrap()
            .is_finite());
    }

    #[test]
    fn rotation_angle_symmetric_and_triangle() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let a = random_pose(&mut rng, 1.0).rotation;
            let b = random_pose(&mut rng, 1.0).rotation;
            let c = random_pose(&mut rng, 1.0).rotation;
            let ab = rotation_angle_deg(&a, &b).unwrap();
            let ba = rotation_angle_deg(&b, &a).unwrap();
            let bc = rotation_angle_deg(&b, &c).unwrap();
            let ac = rotation_angle_deg(&a, &c).unwrap();
            assert!((ab - ba).abs() < 1e-9);
            assert!(ac <= ab + bc + 1e-9);
        }
    }

    #[test]
    fn back_project_cases() {
        let k = CameraIntrinsics::new(100.0, 120.0, 32.0, 24.0).unwrap();
        let g = PixelGrid::new(64, 48, vec![Vector3::new(32.0, 24.0, 1.0)]).unwrap();
        let d = DepthMap::new(vec![2.0], (0.1, 10.0)).unwrap();
        assert_eq!(
            back_project(&d, &k, &g).unwrap().points,
            vec![Vector3::new(0.0, 0.0, 2.0)]
        );

        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let g = PixelGrid::new(4, 4, vec![Vector3::new(1.0, 1.0, 1.0)]).unwrap();
        let d = DepthMap::new(vec![3.0], (0.1, 10.0)).unwrap();
        assert_eq!(
            back_project(&d, &k, &g).unwrap().points,
            vec![Vector3::new(3.0, 3.0, 3.0)]
        );
    }

    #[test]
    fn back_project_errors() {
        let k = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let g = PixelGrid::full(2, 1);
        let d = DepthMap {
            values: vec![1.0, -1.0],
            range: (0.1, 10.0),
        };
        assert!(matches!(
            back_project(&d, &k, &g),
            Err(Error::NonPositiveDepth(_))
        ));
        let short = DepthMap::new(vec![1.0], (0.1, 10.0)).unwrap();
        assert!(matches!(
            back_project(&short, &k, &g),
            Err(Error::ShapeMismatch(_))
        ));
        assert!(DepthMap::new(vec![-1.0], (0.1, 10.0)).is_err());
    }

    #[test]
    fn project_cases() {
        let unit = CameraIntrinsics::new(1.0, 1.0, 0.0, 0.0).unwrap();
        let px = project(
            &Pose::identity(),
            &PointCloud::global(vec![Vector3::new(0.0, 0.0, 2.0)]),
            &unit,
        )
        .unwrap();
        assert_eq!(px, vec![Vector2::new(0.0, 0.0)]);

        // 100·2/2 + 320 = 420, 100·4/2 + 240 = 440.
        let k = CameraIntrinsics::new(100.0, 100.0, 320.0, 240.0).unwrap();
        let px = project(
            &Pose::identity(),
            &PointCloud::global(vec![Vector3::new(2.0, 4.0, 2.0)]),
            &k,
        )
        .unwrap();
        assert!((px[0] - Vector2::new(420.0, 440.0)).norm() < 1e-12);

        let behind = PointCloud::global(vec![Vector3::new(0.0, 0.0, -1.0)]);
        assert!(matches!(
            project(&Pose::identity(), &behind, &k),
            Err(Error::BehindCamera(_))
        ));
        let on_plane = PointCloud::global(vec![Vector3::new(1.0, 0.0, 0.0)]);
        assert!(project(&Pose::identity(), &on_plane, &k).is_err());
    }

    #[test]
    fn quaternion_cases() {
        let q = pose_to_quat(&Pose::identity());
        assert_eq!(&q[3..], &[1.0, 0.0, 0.0, 0.0]);
        let half = Pose::from_axis_angle(&Vector3::z(), std::f64::consts::PI, Vector3::zeros());
        let q = pose_to_quat(&half);
        assert!(q[3].abs() < 1e-12 && q[4].abs() < 1e-12 && q[5].abs() < 1e-12);
        assert!((q[6] - 1.0).abs() < 1e-12);
        let back = quat_to_pose(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(max_abs_diff(&back.rotation, &half.rotation) < 1e-12);
        assert!(matches!(
            quat_to_pose(&[0.0; 7]),
            Err(Error::ZeroQuaternion)
        ));
    }

    #[test]
    fn quaternion_input_is_normalized() {
        let p = quat_to_pose(&[1.0, 2.0, 3.0, 2.0, 0.0, 0.0, 0.0]).unwrap();
        assert!(max_abs_diff(&p.rotation, &Matrix3::identity()) < 1e-12);
    }

    #[test]
    fn quaternion_round_trip_random() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            let p = random_pose(&mut rng, 50.0);
            let back = quat_to_pose(&pose_to_quat(&p)).unwrap();
            assert!(max_abs_diff(&back.rotation, &p.rotation) < 1e-9);
            assert!((back.translation - p.translation).norm() < 1e-9);
        }
    }

    proptest! {
        #[test]
        fn back_project_then_project_is_identity(
            fx in 20.0f64..800.0, fy in 20.0f64..800.0,
            cx in 0.0f64..640.0, cy in 0.0f64..480.0,
            u in 0.0f64..640.0, v in 0.0f64..480.0, depth in 0.1f64..100.0,
        ) {
            let k = CameraIntrinsics::new(fx, fy, cx, cy).unwrap();
            let g = PixelGrid::new(640, 480, vec![Vector3::new(u, v, 1.0)]).unwrap();
            let d = DepthMap::new(vec![depth], (0.1, 100.0)).unwrap();
            let cloud = back_project(&d, &k, &g).unwrap();
            let px = project(&Pose::identity(), &cloud, &k).unwrap();
            prop_assert!((px[0] - Vector2::new(u, v)).norm() < 1e-9);
        }

        #[test]
        fn transform_preserves_distances(seed in 0u64..1000) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = random_pose(&mut rng, 10.0);
            let a = random_vec(&mut rng, 5.0);
            let b = random_vec(&mut rng, 5.0);
            let d0 = (a - b).norm();
            let d1 = (p.transform_point(&a) - p.transform_point(&b)).norm();
            prop_assert!((d0 - d1).abs() < 1e-12);
        }
    }
}
