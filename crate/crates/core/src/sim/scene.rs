use nalgebra::Vector3;
use rand::Rng;

use crate::geometry::standard_normal;
use crate::{Error, Result};

pub const DESCRIPTOR_DIM: usize = 16;
pub const LABEL_STATIC: u32 = 0;
/// Landmarks that move between frames.
pub const LABEL_DYNAMIC: u32 = 1;

pub type Descriptor = [f64; DESCRIPTOR_DIM];

/// Axis-aligned bounding box, meters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Extent {
    pub min: Vector3<f64>,
    pub max: Vector3<f64>,
}

impl Default for Extent {
    /// A 4 × 4 × 2 m room-sized box resting on `z = 0`.
    fn default() -> Self {
        Self {
            min: Vector3::new(-2.0, -2.0, 0.0),
            max: Vector3::new(2.0, 2.0, 2.0),
        }
    }
}

impl Extent {
    pub fn new(min: Vector3<f64>, max: Vector3<f64>) -> Result<Self> {
        if !(0..3).all(|i| min[i].is_finite() && max[i].is_finite() && min[i] < max[i]) {
            return Err(Error::Config(format!(
                "empty or invalid extent {min:?} .. {max:?}"
            )));
        }
        Ok(Self { min, max })
    }

    pub fn center(&self) -> Vector3<f64> {
        (self.min + self.max) * 0.5
    }

    /// Longest side; the length scale relative tolerances refer to.
    pub fn span(&self) -> f64 {
        (self.max - self.min).max()
    }

    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Landmark {
    pub id: usize,
    pub position: Vector3<f64>,
    pub label: u32,
    pub descriptor: Descriptor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneModel {
    pub landmarks: Vec<Landmark>,
    pub extent: Extent,
}

impl SceneModel {
    /// Checks unique ids, distinct descriptors and containment.
    pub fn validate(&self) -> Result<()> {
        for (i, l) in self.landmarks.iter().enumerate() {
            if l.id != i {
                return Err(Error::Config(format!(
                    "landmark ids must be 0..n in order; found {} at {i}",
                    l.id
                )));
            }
            if !self.extent.contains(&l.position) {
                return Err(Error::Config(format!(
                    "landmark {i} lies outside the extent"
                )));
            }
        }
        for (i, a) in self.landmarks.iter().enumerate() {
            for b in &self.landmarks[i + 1..] {
                if a.descriptor == b.descriptor {
                    return Err(Error::Config(format!(
                        "landmarks {} and {} share a descriptor",
                        a.id, b.id
                    )));
                }
            }
        }
        Ok(())
    }
}

pub(crate) fn random_descriptor<R: Rng + ?Sized>(rng: &mut R) -> Descriptor {
    loop {
        let mut d = [0.0; DESCRIPTOR_DIM];
        d.iter_mut().for_each(|v| *v = standard_normal(rng));
        let n = d.iter().map(|v| v * v).sum::<f64>().sqrt();
        if n > 1e-6 {
            d.iter_mut().for_each(|v| *v /= n);
            return d;
        }
    }
}

/// Uniformly scattered landmarks with random unit descriptors. A fraction
/// `label_mix` of them is labeled dynamic.
pub fn generate_scene(
    n_landmarks: usize,
    extent: Extent,
    label_mix: f64,
    seed: u64,
) -> Result<SceneModel> {
    if n_landmarks == 0 {
        return Err(Error::Config("a scene needs at least one landmark".into()));
    }
    if !(0.0..=1.0).contains(&label_mix) {
        return Err(Error::Config(format!(
            "label mix {label_mix} is outside [0, 1]"
        )));
    }
    let extent = Extent::new(extent.min, extent.max)?;
    let mut rng = super::stream_rng(seed, 0);
    let landmarks = (0..n_landmarks)
        .map(|id| {
            let position = Vector3::from_fn(|i, _| rng.gen_range(extent.min[i]..=extent.max[i]));
            let label = if rng.gen_bool(label_mix) {
                LABEL_DYNAMIC
            } else {
                LABEL_STATIC
            };
            Landmark {
                id,
                position,
                label,
                descriptor: random_descriptor(&mut rng),
            }
        })
        .collect();
    let scene = SceneModel { landmarks, extent };
    scene.validate()?;
    Ok(scene)
}
