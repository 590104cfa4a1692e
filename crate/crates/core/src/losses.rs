//! Training losses, evaluated eagerly.
//!
//! The tape in [`crate::autodiff`] records the same quantities as ops; these
//! functions are the reference values it is checked against.

use nalgebra::{Matrix3, Vector3};

use crate::alignment::CorrespondenceSet;
use crate::geometry::{check_rotation, invert, CameraIntrinsics, Pose, MIN_PROJECTION_DEPTH};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_p: f64,
    pub lambda_c: f64,
    pub lambda_r: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_p: 1.0,
            lambda_c: 1.0,
            lambda_r: 0.001,
        }
    }
}

impl LossWeights {
    pub fn new(lambda_p: f64, lambda_c: f64, lambda_r: f64) -> Result<Self> {
        for (name, v) in [
            ("lambda_p", lambda_p),
            ("lambda_c", lambda_c),
            ("lambda_r", lambda_r),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!(
                    "{name} must be a nonnegative number, got {v}"
                )));
            }
        }
        Ok(Self {
            lambda_p,
            lambda_c,
            lambda_r,
        })
    }

    /// Pose loss only.
    pub fn pose_only() -> Self {
        Self {
            lambda_p: 1.0,
            lambda_c: 0.0,
            lambda_r: 0.0,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    /// Meters.
    pub position: f64,
    /// Radians.
    pub rotation: f64,
    pub pose: f64,
    /// Meters.
    pub consistency: f64,
    /// Pixels.
    pub reprojection: f64,
    pub total: f64,
}

pub fn position_loss(t_hat: &Vector3<f64>, t_gt: &Vector3<f64>) -> f64 {
    (t_gt - t_hat).norm()
}

/// Geodesic angle between two rotations, in radians.
pub fn rotation_loss(r_hat: &Matrix3<f64>, r_gt: &Matrix3<f64>) -> Result<f64> {
    check_rotation(r_hat)?;
    check_rotation(r_gt)?;
    let cos = 0.5 * ((r_hat * r_gt.transpose()).trace() - 1.0);
    Ok(cos.clamp(-1.0, 1.0).acos())
}

/// Position error plus rotation error (meters + radians).
pub fn pose_loss(p_hat: &Pose, p_gt: &Pose) -> Result<f64> {
    Ok(position_loss(&p_hat.translation, &p_gt.translation)
        + rotation_loss(&p_hat.rotation, &p_gt.rotation)?)
}

/// Mean distance between each predicted global point and its camera point
/// mapped through `p_gt`.
pub fn consistency_loss(c: &CorrespondenceSet, p_gt: &Pose) -> Result<f64> {
    if c.is_empty() {
        return Err(Error::InsufficientPoints { needed: 1, got: 0 });
    }
    let sum: f64 = c
        .camera_points
        .points
        .iter()
        .zip(&c.global_points.points)
        .map(|(cam, g)| (g - p_gt.transform_point(cam)).norm())
        .sum();
    Ok(sum / c.len() as f64)
}

/// Mean pixel distance between each pixel and the projection of its global
/// point through `p_gt`. A point at or behind the camera plane costs `penalty`.
pub fn reprojection_loss(
    c: &CorrespondenceSet,
    p_gt: &Pose,
    k: &CameraIntrinsics,
    penalty: f64,
) -> Result<f64> {
    if c.is_empty() {
        return Err(Error::InsufficientPoints { needed: 1, got: 0 });
    }
    let w2c = invert(p_gt);
    let sum: f64 = c
        .pixels
        .pixels
        .iter()
        .zip(&c.global_points.points)
        .map(|(u, g)| {
            let p = w2c.transform_point(g);
            if p.z <= MIN_PROJECTION_DEPTH {
                return penalty;
            }
            let (px, py) = (k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy);
            ((px - u.x).powi(2) + (py - u.y).powi(2)).sqrt()
        })
        .sum();
    Ok(sum / c.len() as f64)
}

/// Combines already-computed components.
pub fn total_loss(
    position: f64,
    rotation: f64,
    consistency: f64,
    reprojection: f64,
    w: &LossWeights,
) -> LossBreakdown {
    let pose = position + rotation;
    LossBreakdown {
        position,
        rotation,
        pose,
        consistency,
        reprojection,
        total: w.lambda_p * pose + w.lambda_c * consistency + w.lambda_r * reprojection,
    }
}

/// Every loss for the estimate `p_hat` of a frame whose truth is `p_gt`.
pub fn evaluate(
    p_hat: &Pose,
    p_gt: &Pose,
    c: &CorrespondenceSet,
    k: &CameraIntrinsics,
    penalty: f64,
    w: &LossWeights,
) -> Result<LossBreakdown> {
    Ok(total_loss(
        position_loss(&p_hat.translation, &p_gt.translation),
        rotation_loss(&p_hat.rotation, &p_gt.rotation)?,
        consistency_loss(c, p_gt)?,
        reprojection_loss(c, p_gt, k, penalty)?,
        w,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::random_pose;
    use nalgebra::Vector2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::FRAC_PI_2;

    fn rng_vec(rng: &mut ChaCha8Rng, s: f64) -> Vector3<f64> {
        Vector3::new(
            rng.gen_range(-s..s),
            rng.gen_range(-s..s),
            rng.gen_range(-s..s),
        )
    }

    #[test]
    fn position_examples() {
        let a = Vector3::new(0.3, -1.0, 2.0);
        assert_eq!(position_loss(&a, &a), 0.0);
        assert_eq!(
            position_loss(&Vector3::zeros(), &Vector3::new(3.0, 4.0, 0.0)),
            5.0
        );
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = (rng_vec(&mut rng, 5.0), rng_vec(&mut rng, 5.0));
        let oracle = ((a.x - b.x).powi(2) + (a.y - b.y).powi(2) + (a.z - b.z).powi(2)).sqrt();
        assert!((position_loss(&a, &b) - oracle).abs() < 1e-12);
    }

    #[test]
    fn rotation_examples() {
        let r = random_pose(&mut ChaCha8Rng::seed_from_u64(2), 1.0).rotation;
        assert!(rotation_loss(&r, &r).unwrap() < 1e-7);
        let rx = Pose::from_axis_angle(&Vector3::x(), FRAC_PI_2, Vector3::zeros()).rotation;
        assert!((rotation_loss(&rx, &Matrix3::identity()).unwrap() - FRAC_PI_2).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let axis = rng_vec(&mut rng, 1.0);
            let angle = rng.gen_range(0.01..3.1);
            let r = Pose::from_axis_angle(&axis, angle, Vector3::zeros()).rotation;
            let base = random_pose(&mut rng, 1.0).rotation;
            assert!((rotation_loss(&(r * base), &base).unwrap() - angle).abs() < 1e-9);
        }
        assert!(matches!(
            rotation_loss(&(Matrix3::identity() * 2.0), &Matrix3::identity()),
            Err(Error::InvalidRotation(_))
        ));
    }

    #[test]
    fn pose_examples() {
        let p = random_pose(&mut ChaCha8Rng::seed_from_u64(4), 3.0);
        assert!(pose_loss(&p, &p).unwrap() < 1e-7);
        let shifted = Pose::from_translation(Vector3::new(0.0, 5.0, 0.0));
        assert_eq!(pose_loss(&shifted, &Pose::identity()).unwrap(), 5.0);
        let turned = Pose::from_axis_angle(&Vector3::z(), FRAC_PI_2, Vector3::zeros());
        assert!((pose_loss(&turned, &Pose::identity()).unwrap() - FRAC_PI_2).abs() < 1e-12);
    }

    #[test]
    fn consistency_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let t = random_pose(&mut rng, 2.0);
        let cam: Vec<_> = (0..10).map(|_| rng_vec(&mut rng, 3.0)).collect();
        let glob: Vec<_> = cam.iter().map(|c| t.transform_point(c)).collect();
        let c = CorrespondenceSet::from_clouds(cam.clone(), glob.clone(), vec![1.0; 10]).unwrap();
        assert!(consistency_loss(&c, &t).unwrap() < 1e-12);

        let two = CorrespondenceSet::from_clouds(
            vec![Vector3::zeros(), Vector3::x()],
            vec![Vector3::zeros(), Vector3::new(1.0, 1.0, 0.0)],
            vec![1.0, 1.0],
        )
        .unwrap();
        assert_eq!(consistency_loss(&two, &Pose::identity()).unwrap(), 0.5);

        let noisy: Vec<_> = glob.iter().map(|g| g + rng_vec(&mut rng, 0.5)).collect();
        let c = CorrespondenceSet::from_clouds(cam.clone(), noisy.clone(), vec![1.0; 10]).unwrap();
        let mut oracle = 0.0;
        for i in 0..10 {
            let m = t.rotation * cam[i] + t.translation;
            oracle += (noisy[i] - m).norm();
        }
        assert!((consistency_loss(&c, &t).unwrap() - oracle / 10.0).abs() < 1e-12);

        assert!(consistency_loss(&c.subset(&[]), &t).is_err());
    }

    fn pixel_set(pixels: &[Vector2<f64>], global: Vec<Vector3<f64>>) -> CorrespondenceSet {
        let mut c = CorrespondenceSet::from_clouds(
            vec![Vector3::zeros(); global.len()],
            global,
            vec![1.0; pixels.len()],
        )
        .unwrap();
        c.pixels.pixels = pixels.iter().map(|u| Vector3::new(u.x, u.y, 1.0)).collect();
        c
    }

    #[test]
    fn reprojection_examples() {
        let k = CameraIntrinsics::new(500.0, 520.0, 320.0, 240.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let t = random_pose(&mut rng, 2.0);
        let pixels: Vec<_> = (0..20)
            .map(|_| Vector2::new(rng.gen_range(0.0..640.0), rng.gen_range(0.0..480.0)))
            .collect();
        let global: Vec<_> = pixels
            .iter()
            .map(|u| {
                t.transform_point(
                    &(k.unproject(&Vector3::new(u.x, u.y, 1.0)) * rng.gen_range(1.0..8.0)),
                )
            })
            .collect();
        let c = pixel_set(&pixels, global.clone());
        assert!(reprojection_loss(&c, &t, &k, 800.0).unwrap() < 1e-9);

        // Point on the optical axis projects to the principal point; pixel 3 px away.
        let c = pixel_set(
            &[Vector2::new(323.0, 240.0)],
            vec![Vector3::new(0.0, 0.0, 2.0)],
        );
        assert!((reprojection_loss(&c, &Pose::identity(), &k, 800.0).unwrap() - 3.0).abs() < 1e-12);

        // Behind the camera.
        let c = pixel_set(
            &[Vector2::new(0.0, 0.0)],
            vec![Vector3::new(0.0, 0.0, -2.0)],
        );
        assert_eq!(
            reprojection_loss(&c, &Pose::identity(), &k, 800.0).unwrap(),
            800.0
        );

        // Eager oracle with the explicit matrix inverse.
        let noisy: Vec<_> = global.iter().map(|g| g + rng_vec(&mut rng, 0.05)).collect();
        let c = pixel_set(&pixels, noisy.clone());
        let rinv = t.rotation.try_inverse().unwrap();
        let mut oracle = 0.0;
        for (u, g) in pixels.iter().zip(&noisy) {
            let p = rinv * (g - t.translation);
            let proj = k.matrix() * p / p.z;
            oracle += (Vector2::new(proj.x, proj.y) - u).norm();
        }
        assert!((reprojection_loss(&c, &t, &k, 800.0).unwrap() - oracle / 20.0).abs() < 1e-9);
    }

    #[test]
    fn total_examples() {
        let w = LossWeights::default();
        assert_eq!(total_loss(0.0, 0.0, 0.0, 0.0, &w).total, 0.0);
        let b = total_loss(2.0, 0.0, 1.0, 100.0, &w);
        assert!((b.total - 3.1).abs() < 1e-12);
        let b = total_loss(1.25, 0.5, 7.0, 300.0, &LossWeights::pose_only());
        assert_eq!(b.total, b.pose);
        assert!(LossWeights::new(1.0, -0.1, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn rotation_loss_is_symmetric(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let a = random_pose(&mut rng, 1.0).rotation;
            let b = random_pose(&mut rng, 1.0).rotation;
            prop_assert!((rotation_loss(&a, &b).unwrap() - rotation_loss(&b, &a).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn consistency_is_permutation_invariant(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let t = random_pose(&mut rng, 2.0);
            let cam: Vec<_> = (0..8).map(|_| rng_vec(&mut rng, 3.0)).collect();
            let glob: Vec<_> = (0..8).map(|_| rng_vec(&mut rng, 3.0)).collect();
            let c = CorrespondenceSet::from_clouds(cam, glob, vec![1.0; 8]).unwrap();
            let perm = [3, 7, 0, 5, 1, 6, 2, 4];
            let a = consistency_loss(&c, &t).unwrap();
            let b = consistency_loss(&c.subset(&perm), &t).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn total_is_linear_in_each_lambda(
            comps in prop::array::uniform4(0.0f64..10.0),
            lam in prop::array::uniform3(0.0f64..5.0),
            k in 0.0f64..4.0,
        ) {
            let base = LossWeights::new(lam[0], lam[1], lam[2]).unwrap();
            let f = |w: &LossWeights| total_loss(comps[0], comps[1], comps[2], comps[3], w).total;
            let t0 = f(&base);
            let scaled_c = LossWeights { lambda_c: base.lambda_c * k, ..base };
            let expected = t0 + (k - 1.0) * base.lambda_c * comps[2];
            prop_assert!((f(&scaled_c) - expected).abs() < 1e-9 * (1.0 + expected.abs()));
            let b = total_loss(comps[0], comps[1], comps[2], comps[3], &base);
            prop_assert!(b.total >= 0.0);
            prop_assert!((b.total - (lam[0] * b.pose + lam[1] * b.consistency + lam[2] * b.reprojection)).abs() < 1e-12);
        }
    }
}
