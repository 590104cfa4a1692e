//! Pose strategies over a correspondence set: plain alignment, label
//! masking, rigid RANSAC, PnP RANSAC and learned weights.

mod p3p;

use std::fmt;
use std::str::FromStr;

use nalgebra::{Vector2, Vector3};
use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::alignment::{
    alignment_residuals, weighted_kabsch, weighted_kabsch_raw, CorrespondenceSet,
};
use crate::geometry::CameraIntrinsics;
use crate::geometry::Pose;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Strategy {
    NoFilter,
    MaskFilter,
    RigidRansac,
    PnpRansac,
    Weighted,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::NoFilter,
        Strategy::MaskFilter,
        Strategy::RigidRansac,
        Strategy::PnpRansac,
        Strategy::Weighted,
    ];

    /// Command-line spelling.
    pub fn name(self) -> &'static str {
        match self {
            Strategy::NoFilter => "none",
            Strategy::MaskFilter => "mask",
            Strategy::RigidRansac => "rigid-ransac",
            Strategy::PnpRansac => "pnp-ransac",
            Strategy::Weighted => "weighted",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RansacConfig {
    pub max_iterations: usize,
    /// Meters for rigid RANSAC, pixels for PnP.
    pub inlier_threshold: f64,
    pub sample_size: usize,
    pub seed: u64,
    /// Stop once this fraction of points are inliers. Off when `None`.
    pub early_exit_ratio: Option<f64>,
}

impl RansacConfig {
    /// 2000 hypotheses from 10-point samples, 10 cm threshold.
    pub fn rigid(seed: u64) -> Self {
        Self {
            max_iterations: 2000,
            inlier_threshold: 0.1,
            sample_size: 10,
            seed,
            early_exit_ratio: None,
        }
    }

    /// 2000 hypotheses from 4-point samples, 10 px threshold.
    pub fn pnp(seed: u64) -> Self {
        Self {
            max_iterations: 2000,
            inlier_threshold: 10.0,
            sample_size: 4,
            seed,
            early_exit_ratio: None,
        }
    }

    fn validate(&self, min_sample: usize) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if !(self.inlier_threshold > 0.0) {
            return Err(Error::Config(format!(
                "inlier threshold must be positive, got {}",
                self.inlier_threshold
            )));
        }
        if self.sample_size < min_sample {
            return Err(Error::Config(format!(
                "sample_size must be at least {min_sample}, got {}",
                self.sample_size
            )));
        }
        if let Some(r) = self.early_exit_ratio {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!(
                    "early exit ratio {r} is outside [0, 1]"
                )));
            }
        }
        Ok(())
    }

    /// Generator for hypothesis `k`: one stream per hypothesis.
    fn hypothesis_rng(&self, k: usize) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(k as u64);
        rng
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveReport {
    /// Camera→global.
    pub pose: Pose,
    pub strategy: Strategy,
    pub inlier_count: usize,
    pub iterations_used: usize,
    /// Squared residual sum minimized by the final fit (meters² or pixels²).
    pub cost: f64,
}

fn kabsch_report(c: &CorrespondenceSet, strategy: Strategy) -> Result<SolveReport> {
    let (pose, trace) = weighted_kabsch(c)?;
    Ok(SolveReport {
        pose,
        strategy,
        inlier_count: c.weights.iter().filter(|w| **w > 0.0).count(),
        iterations_used: 1,
        cost: trace.cost,
    })
}

/// Kabsch with every weight set to one.
pub fn solve_no_filter(c: &CorrespondenceSet) -> Result<SolveReport> {
    kabsch_report(&c.with_uniform_weights(1.0), Strategy::NoFilter)
}

/// Unit-weight Kabsch over points whose label is not in `excluded`.
pub fn solve_mask_filter(
    c: &CorrespondenceSet,
    labels: &[u32],
    excluded: &[u32],
) -> Result<SolveReport> {
    if labels.len() != c.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} labels for {} correspondences",
            labels.len(),
            c.len()
        )));
    }
    let keep: Vec<usize> = (0..c.len())
        .filter(|&i| !excluded.contains(&labels[i]))
        .collect();
    if keep.len() < 3 {
        return Err(Error::InsufficientPoints {
            needed: 3,
            got: keep.len(),
        });
    }
    let kept = if keep.len() == c.len() {
        c.clone()
    } else {
        c.subset(&keep)
    };
    kabsch_report(&kept.with_uniform_weights(1.0), Strategy::MaskFilter)
}

/// Kabsch with the predicted weights as given.
pub fn solve_weighted(c: &CorrespondenceSet) -> Result<SolveReport> {
    kabsch_report(c, Strategy::Weighted)
}

/// Winner so far: more inliers, then lower cost, then earlier index.
struct Best {
    inliers: Vec<usize>,
    cost: f64,
    pose: Pose,
}

impl Best {
    fn beaten_by(&self, count: usize, cost: f64) -> bool {
        count > self.inliers.len() || (count == self.inliers.len() && cost < self.cost)
    }
}

pub fn solve_rigid_ransac(c: &CorrespondenceSet, cfg: &RansacConfig) -> Result<SolveReport> {
    cfg.validate(3)?;
    let m = c.len();
    if m < cfg.sample_size {
        return Err(Error::InsufficientPoints {
            needed: cfg.sample_size,
            got: m,
        });
    }
    let cam = &c.camera_points.points;
    let glob = &c.global_points.points;
    let ones = vec![1.0; cfg.sample_size];
    let mut best: Option<Best> = None;
    let mut iterations = 0;
    for k in 0..cfg.max_iterations {
        iterations = k + 1;
        let sample = index::sample(&mut cfg.hypothesis_rng(k), m, cfg.sample_size).into_vec();
        let sc: Vec<_> = sample.iter().map(|&i| cam[i]).collect();
        let sg: Vec<_> = sample.iter().map(|&i| glob[i]).collect();
        let Ok((pose, _)) = weighted_kabsch_raw(&sc, &sg, &ones) else {
            continue;
        };
        let residuals = alignment_residuals(&pose, c);
        let inliers: Vec<usize> = (0..m)
            .filter(|&i| residuals[i] < cfg.inlier_threshold)
            .collect();
        let cost: f64 = inliers.iter().map(|&i| residuals[i] * residuals[i]).sum();
        if best
            .as_ref()
            .is_none_or(|b| b.beaten_by(inliers.len(), cost))
        {
            best = Some(Best {
                inliers,
                cost,
                pose,
            });
        }
        if let (Some(r), Some(b)) = (cfg.early_exit_ratio, &best) {
            if b.inliers.len() as f64 >= r * m as f64 {
                break;
            }
        }
    }
    let best = best
        .filter(|b| b.inliers.len() >= cfg.sample_size)
        .ok_or(Error::NoConsensus)?;
    let inlier_set = c.subset(&best.inliers).with_uniform_weights(1.0);
    let (pose, cost) = match weighted_kabsch(&inlier_set) {
        Ok((pose, trace)) if trace.cost <= best.cost => (pose, trace.cost),
        _ => (best.pose, best.cost),
    };
    Ok(SolveReport {
        pose,
        strategy: Strategy::RigidRansac,
        inlier_count: best.inliers.len(),
        iterations_used: iterations,
        cost,
    })
}

/// 2D–3D RANSAC: P3P on the first three sample points, the rest of the
/// sample picks among its solutions, inliers by reprojection distance, and a
/// final Levenberg–Marquardt refit on the inliers.
pub fn solve_pnp_ransac(
    c: &CorrespondenceSet,
    k: &CameraIntrinsics,
    cfg: &RansacConfig,
) -> Result<SolveReport> {
    cfg.validate(4)?;
    let m = c.len();
    if m < cfg.sample_size {
        return Err(Error::InsufficientPoints {
            needed: cfg.sample_size,
            got: m,
        });
    }
    let pixels: Vec<Vector2<f64>> = c
        .pixels
        .pixels
        .iter()
        .map(|u| Vector2::new(u.x, u.y))
        .collect();
    let bearings: Vec<Vector3<f64>> = c
        .pixels
        .pixels
        .iter()
        .map(|u| k.unproject(u).normalize())
        .collect();
    let world = &c.global_points.points;

    let mut best: Option<Best> = None;
    let mut iterations = 0;
    for it in 0..cfg.max_iterations {
        iterations = it + 1;
        let sample = index::sample(&mut cfg.hypothesis_rng(it), m, cfg.sample_size).into_vec();
        let f = [
            bearings[sample[0]],
            bearings[sample[1]],
            bearings[sample[2]],
        ];
        let x = [world[sample[0]], world[sample[1]], world[sample[2]]];
        let check = &sample[3..];
        let candidate = p3p::p3p(&f, &x)
            .into_iter()
            .map(|w2c| {
                let err = check
                    .iter()
                    .map(|&i| {
                        p3p::reprojection_residual(&w2c, &world[i], &pixels[i], k)
                            .map_or(f64::INFINITY, |r| r.norm_squared())
                    })
                    .sum::<f64>();
                (w2c, err)
            })
            .filter(|(_, e)| e.is_finite())
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let Some((w2c, _)) = candidate else {
            continue;
        };
        let mut inliers = Vec::new();
        let mut cost = 0.0;
        for i in 0..m {
            if let Some(r) = p3p::reprojection_residual(&w2c, &world[i], &pixels[i], k) {
                let d = r.norm();
                if d < cfg.inlier_threshold {
                    inliers.push(i);
                    cost += d * d;
                }
            }
        }
        if best
            .as_ref()
            .is_none_or(|b| b.beaten_by(inliers.len(), cost))
        {
            best = Some(Best {
                inliers,
                cost,
                pose: w2c,
            });
        }
        if let (Some(r), Some(b)) = (cfg.early_exit_ratio, &best) {
            if b.inliers.len() as f64 >= r * m as f64 {
                break;
            }
        }
    }
    let best = best
        .filter(|b| b.inliers.len() >= cfg.sample_size)
        .ok_or(Error::NoConsensus)?;
    let xs: Vec<_> = best.inliers.iter().map(|&i| world[i]).collect();
    let us: Vec<_> = best.inliers.iter().map(|&i| pixels[i]).collect();
    let (w2c, cost) = p3p::refine(&best.pose, &xs, &us, k);
    Ok(SolveReport {
        pose: w2c.inverse(),
        strategy: Strategy::PnpRansac,
        inlier_count: best.inliers.len(),
        iterations_used: iterations,
        cost,
    })
}
