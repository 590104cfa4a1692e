//! Weighted Kabsch alignment of a camera-frame cloud onto a global-frame cloud.
//!
//! Minimizes `Σ wᵢ ‖gᵢ − R·cᵢ − t‖²` over proper rotations `R` and
//! translations `t`. Weights are used as given; the centroids divide by
//! `Σ wᵢ`, so scaling all weights by a positive constant changes nothing.

use nalgebra::{Matrix3, Vector3, SVD};

use crate::geometry::{PixelGrid, PointCloud, Pose};
use crate::{Error, Result};

/// `σ₂ ≤ RANK_TOLERANCE·σ₁` marks the cross-covariance as rank-deficient.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Pixel-matched camera/global point pairs with per-pair weights.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrespondenceSet {
    pub pixels: PixelGrid,
    pub camera_points: PointCloud,
    pub global_points: PointCloud,
    pub weights: Vec<f64>,
}

impl CorrespondenceSet {
    pub fn new(
        pixels: PixelGrid,
        camera_points: PointCloud,
        global_points: PointCloud,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let m = pixels.len();
        if camera_points.len() != m || global_points.len() != m || weights.len() != m {
            return Err(Error::ShapeMismatch(format!(
                "correspondence lists differ: {} pixels, {} camera, {} global, {} weights",
                m,
                camera_points.len(),
                global_points.len(),
                weights.len()
            )));
        }
        let set = Self {
            pixels,
            camera_points,
            global_points,
            weights,
        };
        set.check_weights()?;
        Ok(set)
    }

    /// Builds a set whose pixels are irrelevant (all at the origin of a 1×1 grid).
    pub fn from_clouds(
        camera: Vec<Vector3<f64>>,
        global: Vec<Vector3<f64>>,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let pixels = PixelGrid {
            width: 1,
            height: 1,
            pixels: vec![Vector3::new(0.0, 0.0, 1.0); camera.len()],
        };
        Self::new(
            pixels,
            PointCloud::camera(camera),
            PointCloud::global(global),
            weights,
        )
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    fn check_weights(&self) -> Result<()> {
        if self.weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::DegenerateWeights);
        }
        if self.weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::DegenerateWeights);
        }
        Ok(())
    }

    /// Same correspondences with every weight replaced by `w`.
    pub fn with_uniform_weights(&self, w: f64) -> Self {
        Self {
            weights: vec![w; self.len()],
            ..self.clone()
        }
    }

    /// The correspondences at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        let pick = |v: &[Vector3<f64>]| indices.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Self {
            pixels: PixelGrid {
                width: self.pixels.width,
                height: self.pixels.height,
                pixels: pick(&self.pixels.pixels),
            },
            camera_points: PointCloud::new(
                pick(&self.camera_points.points),
                self.camera_points.frame,
            ),
            global_points: PointCloud::new(
                pick(&self.global_points.points),
                self.global_points.frame,
            ),
            weights: indices.iter().map(|&i| self.weights[i]).collect(),
        }
    }
}

/// Intermediate quantities of a solve, kept for differentiation.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentTrace {
    pub mu_c: Vector3<f64>,
    pub mu_g: Vector3<f64>,
    pub c_bar: Vec<Vector3<f64>>,
    pub g_bar: Vec<Vector3<f64>>,
    pub total_weight: f64,
    /// Cross-covariance `C̄ᵀ·W·Ḡ`.
    pub covariance: Matrix3<f64>,
    pub u: Matrix3<f64>,
    /// Singular values, nonincreasing and nonnegative.
    pub s: Vector3<f64>,
    pub v: Matrix3<f64>,
    /// `det(V·Uᵀ)`, either `+1` or `-1`.
    pub sign: f64,
    /// Weighted squared residual at the solution.
    pub cost: f64,
}

pub fn weighted_centroid(points: &[Vector3<f64>], weights: &[f64]) -> Result<Vector3<f64>> {
    if points.len() != weights.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} points, {} weights",
            points.len(),
            weights.len()
        )));
    }
    let total: f64 = weights.iter().sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::DegenerateWeights);
    }
    let sum = points
        .iter()
        .zip(weights)
        .fold(Vector3::zeros(), |acc, (p, w)| acc + p * *w);
    Ok(sum / total)
}

/// Closed-form weighted rigid alignment. Returns the camera→global pose
/// together with the trace needed by the backward pass.
pub fn weighted_kabsch(c: &CorrespondenceSet) -> Result<(Pose, AlignmentTrace)> {
    weighted_kabsch_raw(&c.camera_points.points, &c.global_points.points, &c.weights)
}

pub(crate) fn weighted_kabsch_raw(
    camera: &[Vector3<f64>],
    global: &[Vector3<f64>],
    weights: &[f64],
) -> Result<(Pose, AlignmentTrace)> {
    let m = weights.len();
    if camera.len() != m || global.len() != m {
        return Err(Error::ShapeMismatch(format!(
            "{} camera points, {} global points, {} weights",
            camera.len(),
            global.len(),
            m
        )));
    }
    if m < 3 {
        return Err(Error::InsufficientPoints { needed: 3, got: m });
    }
    if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
        return Err(Error::DegenerateWeights);
    }
    let mu_c = weighted_centroid(camera, weights)?;
    let mu_g = weighted_centroid(global, weights)?;
    let c_bar: Vec<_> = camera.iter().map(|p| p - mu_c).collect();
    let g_bar: Vec<_> = global.iter().map(|p| p - mu_g).collect();

    let mut covariance = Matrix3::zeros();
    for ((cb, gb), w) in c_bar.iter().zip(&g_bar).zip(weights) {
        if *w != 0.0 {
            covariance += (cb * *w) * gb.transpose();
        }
    }
    if !covariance.iter().all(|v| v.is_finite()) {
        return Err(Error::DegenerateGeometry);
    }

    let svd = SVD::new(covariance, true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::DegenerateGeometry),
    };
    let s = svd.singular_values;
    if !(s[0] > 0.0) || s[1] <= RANK_TOLERANCE * s[0] {
        return Err(Error::DegenerateGeometry);
    }
    let v = v_t.transpose();
    let sign = if (v * u.transpose()).determinant() < 0.0 {
        -1.0
    } else {
        1.0
    };
    let d = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, sign));
    let rotation = v * d * u.transpose();
    let translation = mu_g - rotation * mu_c;
    let pose = Pose {
        rotation,
        translation,
    };
    let cost = camera
        .iter()
        .zip(global)
        .zip(weights)
        .map(|((cp, gp), w)| w * (gp - pose.transform_point(cp)).norm_squared())
        .sum();
    let trace = AlignmentTrace {
        mu_c,
        mu_g,
        c_bar,
        g_bar,
        total_weight: weights.iter().sum(),
        covariance,
        u,
        s,
        v,
        sign,
        cost,
    };
    Ok((pose, trace))
}

/// Per-correspondence distances `‖gᵢ − R·cᵢ − t‖`.
pub fn alignment_residuals(p: &Pose, c: &CorrespondenceSet) -> Vec<f64> {
    c.camera_points
        .points
        .iter()
        .zip(&c.global_points.points)
        .map(|(cp, gp)| (gp - p.transform_point(cp)).norm())
        .collect()
}

/// `Σ wᵢ ‖gᵢ − R·cᵢ − t‖²` for an arbitrary pose.
pub fn weighted_cost(p: &Pose, c: &CorrespondenceSet) -> f64 {
    alignment_residuals(p, c)
        .iter()
        .zip(&c.weights)
        .map(|(r, w)| w * r * r)
        .sum()
}
