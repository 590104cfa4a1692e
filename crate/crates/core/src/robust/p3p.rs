//! Perspective-three-point (Grunert's quartic) and reprojection refinement.
//!
//! Poses here are world→camera: `x_c = R·x_w + t`.

use nalgebra::{DMatrix, Matrix3, Matrix6, Rotation3, Vector2, Vector3, Vector6};

use crate::alignment::weighted_kabsch_raw;
use crate::geometry::{CameraIntrinsics, Pose, MIN_PROJECTION_DEPTH};

/// `|det[f₁ f₂ f₃]|` below this means the camera center is (nearly) on the
/// plane of the three points.
const BEARING_DET_TOLERANCE: f64 = 1e-10;
/// Relative area below which three world points count as collinear.
const COLLINEAR_TOLERANCE: f64 = 1e-10;
const ROOT_IMAG_TOLERANCE: f64 = 1e-6;

/// Real roots of `Σ coeffs[i]·xⁱ`, polished with Newton steps.
fn real_roots(coeffs: &[f64]) -> Vec<f64> {
    let scale = coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
    if scale == 0.0 {
        return vec![];
    }
    let mut degree = coeffs.len() - 1;
    while degree > 0 && coeffs[degree].abs() <= 1e-14 * scale {
        degree -= 1;
    }
    if degree == 0 {
        return vec![];
    }
    let lead = coeffs[degree];
    let companion = DMatrix::from_fn(degree, degree, |r, c| {
        if r == 0 {
            -coeffs[degree - 1 - c] / lead
        } else if r == c + 1 {
            1.0
        } else {
            0.0
        }
    });
    let eval = |x: f64| {
        let (mut p, mut dp) = (0.0, 0.0);
        for &c in coeffs[..=degree].iter().rev() {
            dp = dp * x + p;
            p = p * x + c;
        }
        (p, dp)
    };
    companion
        .complex_eigenvalues()
        .iter()
        .filter(|z| z.im.abs() <= ROOT_IMAG_TOLERANCE * (1.0 + z.re.abs()))
        .map(|z| {
            let mut x = z.re;
            for _ in 0..3 {
                let (p, dp) = eval(x);
                if dp == 0.0 {
                    break;
                }
                let next = x - p / dp;
                if !next.is_finite() || eval(next).0.abs() >= p.abs() {
                    break;
                }
                x = next;
            }
            x
        })
        .collect()
}

/// Candidate world→camera poses from three bearings `f` (unit vectors) and
/// their world points. Empty for degenerate configurations.
pub(crate) fn p3p(f: &[Vector3<f64>; 3], x: &[Vector3<f64>; 3]) -> Vec<Pose> {
    let area = (x[1] - x[0]).cross(&(x[2] - x[0])).norm();
    let span = (x[1] - x[0]).norm().max((x[2] - x[0]).norm());
    if area <= COLLINEAR_TOLERANCE * span * span {
        return vec![];
    }
    if Matrix3::from_columns(f).determinant().abs() < BEARING_DET_TOLERANCE {
        return vec![];
    }

    let a2 = (x[1] - x[2]).norm_squared();
    let b2 = (x[0] - x[2]).norm_squared();
    let c2 = (x[0] - x[1]).norm_squared();
    let ca = f[1].dot(&f[2]);
    let cb = f[0].dot(&f[2]);
    let cg = f[0].dot(&f[1]);
    let k = (a2 - c2) / b2;
    let p = (a2 + c2) / b2;

    let a4 = (k - 1.0).powi(2) - 4.0 * c2 / b2 * ca * ca;
    let a3 = 4.0 * (k * (1.0 - k) * cb - (1.0 - p) * ca * cg + 2.0 * c2 / b2 * ca * ca * cb);
    let a2c = 2.0
        * (k * k - 1.0 + 2.0 * k * k * cb * cb + 2.0 * (b2 - c2) / b2 * ca * ca
            - 4.0 * p * ca * cb * cg
            + 2.0 * (b2 - a2) / b2 * cg * cg);
    let a1 = 4.0 * (-k * (1.0 + k) * cb + 2.0 * a2 / b2 * cg * cg * cb - (1.0 - p) * ca * cg);
    let a0 = (1.0 + k).powi(2) - 4.0 * a2 / b2 * cg * cg;

    let mut poses = Vec::new();
    for v in real_roots(&[a0, a1, a2c, a3, a4]) {
        if v <= 0.0 {
            continue;
        }
        let denom = 2.0 * (cg - v * ca);
        if denom.abs() < 1e-14 {
            continue;
        }
        let u = ((k - 1.0) * v * v - 2.0 * k * cb * v + 1.0 + k) / denom;
        if u <= 0.0 {
            continue;
        }
        let q = 1.0 + v * v - 2.0 * v * cb;
        if q <= 0.0 {
            continue;
        }
        let s1 = (b2 / q).sqrt();
        let camera = [f[0] * s1, f[1] * (u * s1), f[2] * (v * s1)];
        // Camera→world from the three exact pairs, then inverted.
        if let Ok((c2w, _)) = weighted_kabsch_raw(&camera, x, &[1.0; 3]) {
            poses.push(c2w.inverse());
        }
    }
    poses
}

/// `π(R·x + t) − u`, or `None` when the point is at or behind the camera.
pub(crate) fn reprojection_residual(
    w2c: &Pose,
    x: &Vector3<f64>,
    u: &Vector2<f64>,
    k: &CameraIntrinsics,
) -> Option<Vector2<f64>> {
    let p = w2c.transform_point(x);
    if p.z <= MIN_PROJECTION_DEPTH {
        return None;
    }
    Some(Vector2::new(
        k.fx * p.x / p.z + k.cx - u.x,
        k.fy * p.y / p.z + k.cy - u.y,
    ))
}

/// Sum of squared reprojection errors, infinite if any point is behind.
pub(crate) fn reprojection_cost(
    w2c: &Pose,
    x: &[Vector3<f64>],
    u: &[Vector2<f64>],
    k: &CameraIntrinsics,
) -> f64 {
    let mut sum = 0.0;
    for (xi, ui) in x.iter().zip(u) {
        match reprojection_residual(w2c, xi, ui, k) {
            Some(r) => sum += r.norm_squared(),
            None => return f64::INFINITY,
        }
    }
    sum
}

/// Levenberg–Marquardt on the reprojection error, left-perturbing the
/// world→camera pose. Never returns a pose with higher cost than `start`.
pub(crate) fn refine(
    start: &Pose,
    x: &[Vector3<f64>],
    u: &[Vector2<f64>],
    k: &CameraIntrinsics,
) -> (Pose, f64) {
    let mut pose = *start;
    let mut cost = reprojection_cost(&pose, x, u, k);
    if !cost.is_finite() {
        return (pose, cost);
    }
    let mut lambda = 1e-3;
    for _ in 0..50 {
        let mut jtj = Matrix6::zeros();
        let mut jtr = Vector6::zeros();
        for (xi, ui) in x.iter().zip(u) {
            let p = pose.transform_point(xi);
            let r = Vector2::new(
                k.fx * p.x / p.z + k.cx - ui.x,
                k.fy * p.y / p.z + k.cy - ui.y,
            );
            let iz = 1.0 / p.z;
            let dpi = nalgebra::Matrix2x3::new(
                k.fx * iz,
                0.0,
                -k.fx * p.x * iz * iz,
                0.0,
                k.fy * iz,
                -k.fy * p.y * iz * iz,
            );
            // ∂p/∂ω = −[p]×, ∂p/∂δt = I
            let skew = Matrix3::new(0.0, -p.z, p.y, p.z, 0.0, -p.x, -p.y, p.x, 0.0);
            let jw = dpi * (-skew);
            let mut j = nalgebra::Matrix2x6::zeros();
            j.fixed_view_mut::<2, 3>(0, 0).copy_from(&jw);
            j.fixed_view_mut::<2, 3>(0, 3).copy_from(&dpi);
            jtj += j.transpose() * j;
            jtr += j.transpose() * r;
        }
        let mut improved = false;
        while lambda < 1e12 {
            let mut damped = jtj;
            for i in 0..6 {
                damped[(i, i)] += lambda * jtj[(i, i)].max(1e-12);
            }
            let Some(delta) = damped.lu().solve(&(-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let rot = Rotation3::new(Vector3::new(delta[0], delta[1], delta[2])).into_inner();
            let candidate = Pose {
                rotation: rot * pose.rotation,
                translation: rot * pose.translation + Vector3::new(delta[3], delta[4], delta[5]),
            };
            let c = reprojection_cost(&candidate, x, u, k);
            if c < cost {
                let converged = cost - c <= 1e-15 * cost.max(1e-300) || delta.norm() < 1e-14;
                pose = candidate;
                cost = c;
                lambda = (lambda * 0.1).max(1e-12);
                improved = !converged;
                break;
            }
            lambda *= 10.0;
        }
        if !improved {
            break;
        }
    }
    // Re-orthonormalize the accumulated product of small rotations.
    let rotation = Rotation3::from_matrix(&pose.rotation).into_inner();
    let pose = Pose {
        rotation,
        translation: pose.translation,
    };
    let final_cost = reprojection_cost(&pose, x, u, k);
    if final_cost <= cost {
        (pose, final_cost)
    } else {
        (pose, cost)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::random_pose;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quartic_roots() {
        // (x − 1)(x − 2)(x + 3)(x − 0.5) = x⁴ − 0.5x³ − 7x² + 9.5x − 3
        let mut r = real_roots(&[-3.0, 9.5, -7.0, -0.5, 1.0]);
        r.sort_by(f64::total_cmp);
        let expected = [-3.0, 0.5, 1.0, 2.0];
        for (a, b) in r.iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{r:?}");
        }
        // x² + 1 has none; a leading zero drops the degree.
        assert!(real_roots(&[1.0, 0.0, 1.0]).is_empty());
        assert_eq!(real_roots(&[-2.0, 1.0, 0.0]), vec![2.0]);
    }

    #[test]
    fn p3p_contains_ground_truth() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for _ in 0..100 {
            let w2c = random_pose(&mut rng, 2.0);
            let c2w = w2c.inverse();
            let cam: Vec<_> = (0..3)
                .map(|_| {
                    Vector3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(2.0..6.0),
                    )
                })
                .collect();
            let f = [cam[0].normalize(), cam[1].normalize(), cam[2].normalize()];
            let x = [
                c2w.transform_point(&cam[0]),
                c2w.transform_point(&cam[1]),
                c2w.transform_point(&cam[2]),
            ];
            let sols = p3p(&f, &x);
            let best = sols
                .iter()
                .map(|p| {
                    (p.rotation - w2c.rotation).norm() + (p.translation - w2c.translation).norm()
                })
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-6, "best {best} from {} solutions", sols.len());
        }
    }

    #[test]
    fn degenerate_samples_are_rejected() {
        let f = [
            Vector3::z(),
            Vector3::new(0.1, 0.0, 1.0).normalize(),
            Vector3::new(0.0, 0.1, 1.0).normalize(),
        ];
        let collinear = [Vector3::zeros(), Vector3::x(), Vector3::x() * 2.0];
        assert!(p3p(&f, &collinear).is_empty());
        // Camera center on the plane of the points: coplanar bearings.
        let flat = [
            Vector3::z(),
            Vector3::new(0.1, 0.0, 1.0).normalize(),
            Vector3::new(0.2, 0.0, 1.0).normalize(),
        ];
        let x = [
            Vector3::new(0.0, 0.0, 2.0),
            Vector3::new(0.3, 0.0, 3.0),
            Vector3::new(0.5, 1e-3, 2.5),
        ];
        assert!(p3p(&flat, &x).is_empty());
    }

    #[test]
    fn refinement_converges_from_nearby_pose() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let k = CameraIntrinsics::new(300.0, 300.0, 160.0, 120.0).unwrap();
        let w2c = random_pose(&mut rng, 1.0);
        let c2w = w2c.inverse();
        let x: Vec<_> = (0..30)
            .map(|_| {
                c2w.transform_point(&Vector3::new(
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(-1.0..1.0),
                    rng.gen_range(2.0..5.0),
                ))
            })
            .collect();
        let u: Vec<_> = x
            .iter()
            .map(|xi| {
                let p = w2c.transform_point(xi);
                Vector2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy)
            })
            .collect();
        let start = Pose {
            rotation: Rotation3::new(Vector3::new(0.02, -0.01, 0.03)).into_inner() * w2c.rotation,
            translation: w2c.translation + Vector3::new(0.05, -0.02, 0.04),
        };
        let (refined, cost) = refine(&start, &x, &u, &k);
        assert!(cost < 1e-16, "{cost}");
        assert!((refined.translation - w2c.translation).norm() < 1e-9);
    }
}
