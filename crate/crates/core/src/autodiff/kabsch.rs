//! Vector-Jacobian product of the weighted Kabsch map.
//!
//! With `H = U·S·Vᵀ`, `D = diag(1, 1, s)` and `R = V·D·Uᵀ`, absorb the sign
//! into `Ṽ = V·D` and `S̃ = S·D`. The differential of the orthogonal factor
//! then only couples singular values through `1 / (s̃ᵢ + s̃ⱼ)`, which equals
//! `σᵢ + σⱼ` without reflection and `σᵢ − σ₃` with it. Those denominators are
//! the ones guarded against.

use nalgebra::{Matrix3, Vector3};

use crate::alignment::AlignmentTrace;
use crate::{Error, Result};

/// Relative singular-value gap below which the gradient is declared degenerate.
pub const GRADIENT_GAP_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PoseAdjoint {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct KabschAdjoints {
    pub camera: Vec<Vector3<f64>>,
    pub global: Vec<Vector3<f64>>,
    pub weights: Vec<f64>,
}

/// Pulls `(∂L/∂R, ∂L/∂t)` back onto the camera points, global points and
/// weights of the solve that produced `trace`.
pub fn kabsch_vjp(
    trace: &AlignmentTrace,
    weights: &[f64],
    d_pose: &PoseAdjoint,
) -> Result<KabschAdjoints> {
    let m = weights.len();
    let d = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, trace.sign));
    let v_tilde = trace.v * d;
    let rotation = v_tilde * trace.u.transpose();

    // t = μg − R·μc
    let d_mu_g = d_pose.translation;
    let d_mu_c = -(rotation.transpose() * d_pose.translation);
    let d_rotation = d_pose.rotation - d_pose.translation * trace.mu_c.transpose();

    let d_cov = if d_rotation.iter().all(|v| *v == 0.0) {
        Matrix3::zeros()
    } else {
        let s_tilde = Vector3::new(trace.s[0], trace.s[1], trace.sign * trace.s[2]);
        let a = v_tilde.transpose() * d_rotation * trace.u;
        let scale = trace.s[0];
        let mut p = Matrix3::zeros();
        for k in 0..3 {
            for l in 0..3 {
                if k == l {
                    continue;
                }
                let denom = s_tilde[k] + s_tilde[l];
                if denom.abs() < GRADIENT_GAP_TOLERANCE * scale {
                    return Err(Error::DegenerateGradient {
                        gap: denom.abs() / scale,
                    });
                }
                p[(k, l)] = (a[(l, k)] - a[(k, l)]) / denom;
            }
        }
        trace.u * p * v_tilde.transpose()
    };

    let total = trace.total_weight;
    let mut camera = Vec::with_capacity(m);
    let mut global = Vec::with_capacity(m);
    let mut d_weights = Vec::with_capacity(m);
    for i in 0..m {
        let (cb, gb, w) = (&trace.c_bar[i], &trace.g_bar[i], weights[i]);
        let cov_g = d_cov * gb;
        camera.push(cov_g * w + d_mu_c * (w / total));
        global.push(d_cov.transpose() * cb * w + d_mu_g * (w / total));
        d_weights.push(cb.dot(&cov_g) + (d_mu_c.dot(cb) + d_mu_g.dot(gb)) / total);
    }
    Ok(KabschAdjoints {
        camera,
        global,
        weights: d_weights,
    })
}
