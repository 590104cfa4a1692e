use nalgebra::Vector3;
use rand::Rng;

use super::scene::{Descriptor, SceneModel, LABEL_DYNAMIC, LABEL_STATIC};
use super::trajectory::{Frame, INDOOR_DEPTH_RANGE};
use crate::alignment::CorrespondenceSet;
use crate::geometry::{invert, standard_normal, DepthMap, PixelGrid, PointCloud};
use crate::{Error, Result};

/// Per-frame perturbations of the observed geometry.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct NoiseModel {
    /// Standard deviation of an isotropic 3D jitter, as a fraction of depth.
    pub depth_sigma: f64,
    /// Standard deviation of the image-plane jitter, in grid pixels.
    pub pixel_sigma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RenderConfig {
    pub noise: NoiseModel,
    /// Probability that a hit cell is replaced by another landmark's identity.
    pub outlier_rate: f64,
    pub depth_range: (f64, f64),
    /// World radius of each landmark disc; `None` uses 3.75% of the scene span.
    pub splat_radius: Option<f64>,
}

impl Default for RenderConfig {
    fn default() -> Self {
        Self {
            noise: NoiseModel::default(),
            outlier_rate: 0.0,
            depth_range: INDOOR_DEPTH_RANGE,
            splat_radius: None,
        }
    }
}

impl RenderConfig {
    pub fn noisy(depth_sigma: f64, outlier_rate: f64) -> Self {
        Self {
            noise: NoiseModel {
                depth_sigma,
                pixel_sigma: 0.0,
            },
            outlier_rate,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let NoiseModel {
            depth_sigma,
            pixel_sigma,
        } = self.noise;
        if !(depth_sigma >= 0.0
            && pixel_sigma >= 0.0
            && depth_sigma.is_finite()
            && pixel_sigma.is_finite())
        {
            return Err(Error::Config(format!(
                "noise sigmas must be finite and ≥ 0: {:?}",
                self.noise
            )));
        }
        if !(0.0..=1.0).contains(&self.outlier_rate) {
            return Err(Error::Config(format!(
                "outlier rate {} outside [0, 1]",
                self.outlier_rate
            )));
        }
        let (lo, hi) = self.depth_range;
        if !(lo > 0.0 && hi > lo) {
            return Err(Error::Config(format!("invalid depth range [{lo}, {hi}]")));
        }
        if matches!(self.splat_radius, Some(r) if !(r > 0.0 && r.is_finite())) {
            return Err(Error::Config("splat radius must be positive".into()));
        }
        Ok(())
    }
}

/// One grid cell covered by a landmark.
#[derive(Clone, Debug, PartialEq)]
pub struct Hit {
    /// Row-major index into the frame grid.
    pub cell: usize,
    pub landmark: usize,
    pub label: u32,
    pub outlier: bool,
    pub descriptor: Descriptor,
    pub depth_gt: f64,
    pub global_gt: Vector3<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    pub frame: Frame,
    /// Sorted by cell; cells without a hit see nothing.
    pub hits: Vec<Hit>,
}

/// Full-grid depth, global-coordinate and weight maps.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictedMaps {
    pub depth: DepthMap,
    pub global: Vec<Vector3<f64>>,
    pub weights: Vec<f64>,
    /// Camera-frame points predicted directly; when present they replace
    /// the back-projected depth.
    pub camera: Option<Vec<Vector3<f64>>>,
}

impl PredictedMaps {
    pub fn len(&self) -> usize {
        self.global.len()
    }

    pub fn is_empty(&self) -> bool {
        self.global.is_empty()
    }
}

impl Observation {
    pub fn hit_at(&self, cell: usize) -> Option<&Hit> {
        self.hits
            .binary_search_by_key(&cell, |h| h.cell)
            .ok()
            .map(|i| &self.hits[i])
    }

    pub fn cells(&self) -> impl Iterator<Item = usize> + '_ {
        self.hits.iter().map(|h| h.cell)
    }

    /// `K⁻¹·u` for a cell.
    pub fn ray(&self, cell: usize) -> Vector3<f64> {
        self.frame
            .intrinsics
            .unproject(&self.frame.grid.pixels[cell])
    }

    /// Unit-length viewing direction of a cell, in the camera frame.
    pub fn unit_ray(&self, cell: usize) -> Vector3<f64> {
        self.ray(cell).normalize()
    }

    /// Homogeneous pixels of the hit cells.
    pub fn hit_pixels(&self) -> Vec<Vector3<f64>> {
        self.cells().map(|c| self.frame.grid.pixels[c]).collect()
    }

    pub fn outlier_fraction(&self) -> f64 {
        if self.hits.is_empty() {
            return 0.0;
        }
        self.hits.iter().filter(|h| h.outlier).count() as f64 / self.hits.len() as f64
    }

    /// Maps that reproduce the rendered geometry exactly. Empty cells get
    /// `d_min`, the origin and zero weight.
    pub fn ground_truth_maps(&self, depth_range: (f64, f64)) -> Result<PredictedMaps> {
        let n = self.frame.grid.len();
        let mut depth = vec![depth_range.0; n];
        let mut global = vec![Vector3::zeros(); n];
        let mut weights = vec![0.0; n];
        for h in &self.hits {
            depth[h.cell] = h.depth_gt;
            global[h.cell] = h.global_gt;
            weights[h.cell] = 1.0;
        }
        Ok(PredictedMaps {
            depth: DepthMap::new(depth, depth_range)?,
            global,
            weights,
            camera: None,
        })
    }

    /// Pairs the predicted maps pixel by pixel over the hit cells.
    pub fn to_correspondences(&self, predicted: &PredictedMaps) -> Result<CorrespondenceSet> {
        self.correspondences_at(predicted, &self.cells().collect::<Vec<_>>())
    }

    /// Pairs the predicted maps over every grid cell.
    pub fn to_dense_correspondences(&self, predicted: &PredictedMaps) -> Result<CorrespondenceSet> {
        self.correspondences_at(predicted, &(0..self.frame.grid.len()).collect::<Vec<_>>())
    }

    fn correspondences_at(
        &self,
        predicted: &PredictedMaps,
        cells: &[usize],
    ) -> Result<CorrespondenceSet> {
        let n = self.frame.grid.len();
        let camera_len = predicted.camera.as_ref().map_or(n, Vec::len);
        if predicted.depth.len() != n
            || predicted.global.len() != n
            || predicted.weights.len() != n
            || camera_len != n
        {
            return Err(Error::ShapeMismatch(format!(
                "maps of size {}/{}/{} for a grid of {n} cells",
                predicted.depth.len(),
                predicted.global.len(),
                predicted.weights.len()
            )));
        }
        let grid = &self.frame.grid;
        let pixels: Vec<_> = cells.iter().map(|&c| grid.pixels[c]).collect();
        let camera = match &predicted.camera {
            Some(points) => cells.iter().map(|&c| points[c]).collect(),
            None => cells
                .iter()
                .map(|&c| self.ray(c) * predicted.depth.values[c])
                .collect(),
        };
        let global = cells.iter().map(|&c| predicted.global[c]).collect();
        CorrespondenceSet::new(
            PixelGrid {
                width: grid.width,
                height: grid.height,
                pixels,
            },
            PointCloud::camera(camera),
            PointCloud::global(global),
            cells.iter().map(|&c| predicted.weights[c]).collect(),
        )
    }
}

/// Renders landmark discs into the frame grid with a z-buffer. Dynamic
/// landmarks are displaced per frame; noise perturbs the observed 3D points
/// before rasterization, so the ground truth stays geometrically exact.
pub fn render(
    scene: &SceneModel,
    frame: &Frame,
    cfg: &RenderConfig,
    seed: u64,
) -> Result<Observation> {
    cfg.validate()?;
    let mut rng = super::stream_rng(seed, frame.id as u64);
    let span = scene.extent.span();
    let radius = cfg.splat_radius.unwrap_or(0.0375 * span);
    let k = frame.intrinsics;
    let (w, h) = (frame.grid.width, frame.grid.height);
    let w2c = invert(&frame.pose_gt);
    let (lo, hi) = cfg.depth_range;

    let mut zbuf = vec![f64::INFINITY; w * h];
    let mut owner: Vec<Option<(usize, Vector3<f64>)>> = vec![None; w * h];
    for l in &scene.landmarks {
        let motion = Vector3::new(
            standard_normal(&mut rng),
            standard_normal(&mut rng),
            standard_normal(&mut rng),
        );
        let step = rng.gen_range(0.125..0.25) * span;
        let jitter = Vector3::new(
            standard_normal(&mut rng),
            standard_normal(&mut rng),
            standard_normal(&mut rng),
        );
        let (du, dv) = (standard_normal(&mut rng), standard_normal(&mut rng));

        let mut world = l.position;
        if l.label == LABEL_DYNAMIC {
            world += motion.try_normalize(1e-12).unwrap_or_else(Vector3::x) * step;
        }
        let mut p = w2c.transform_point(&world);
        if p.z <= 0.0 {
            continue;
        }
        p += jitter * (cfg.noise.depth_sigma * p.z);
        p.x += cfg.noise.pixel_sigma * du * p.z / k.fx;
        p.y += cfg.noise.pixel_sigma * dv * p.z / k.fy;
        if !(p.z >= lo && p.z <= hi) {
            continue;
        }
        let uc = k.fx * p.x / p.z + k.cx;
        let vc = k.fy * p.y / p.z + k.cy;
        let (center_u, center_v) = (uc.round(), vc.round());
        let reach_u = radius * k.fx / p.z + 1.0;
        let reach_v = radius * k.fy / p.z + 1.0;
        let u0 = (uc - reach_u).floor().max(0.0);
        let v0 = (vc - reach_v).floor().max(0.0);
        let u1 = (uc + reach_u).ceil().min(w as f64 - 1.0);
        let v1 = (vc + reach_v).ceil().min(h as f64 - 1.0);
        if u0 > u1 || v0 > v1 {
            continue;
        }
        for v in v0 as usize..=v1 as usize {
            for u in u0 as usize..=u1 as usize {
                let q = k.unproject(&Vector3::new(u as f64, v as f64, 1.0)) * p.z;
                let lateral = ((q.x - p.x).powi(2) + (q.y - p.y).powi(2)).sqrt();
                let is_center = u as f64 == center_u && v as f64 == center_v;
                let cell = v * w + u;
                if (lateral <= radius || is_center) && p.z < zbuf[cell] {
                    zbuf[cell] = p.z;
                    owner[cell] = Some((l.id, q));
                }
            }
        }
    }

    let n = scene.landmarks.len();
    let mut hits = Vec::new();
    for (cell, o) in owner.into_iter().enumerate() {
        let Some((id, q)) = o else { continue };
        let flip = rng.gen_bool(cfg.outlier_rate);
        let other = if n > 1 {
            (id + rng.gen_range(1..n)) % n
        } else {
            id
        };
        let outlier = flip && n > 1;
        let l = &scene.landmarks[id];
        let (descriptor, global_gt) = if outlier {
            let o = &scene.landmarks[other];
            (o.descriptor, o.position)
        } else {
            (l.descriptor, frame.pose_gt.transform_point(&q))
        };
        hits.push(Hit {
            cell,
            landmark: id,
            label: if outlier || l.label == LABEL_DYNAMIC {
                LABEL_DYNAMIC
            } else {
                LABEL_STATIC
            },
            outlier,
            descriptor,
            depth_gt: q.z,
            global_gt,
        });
    }
    if hits.is_empty() {
        return Err(Error::NothingVisible(frame.id));
    }
    Ok(Observation {
        frame: frame.clone(),
        hits,
    })
}
