use std::collections::BTreeMap;

use nalgebra::Vector3;
use rand::Rng;

use super::adam::{adam_step, AdamConfig, AdamState};
use super::{CameraOutput, TrainConfig, TrainMode};
use crate::alignment::CorrespondenceSet;
use crate::autodiff::{Adjoints, NodeId, Op, Tape, Tensor};
use crate::geometry::{standard_normal, DepthMap, PixelGrid, PointCloud};
use crate::sim::{Extent, Observation, PredictedMaps, Resolution, DESCRIPTOR_DIM};
use crate::{Error, Result};

/// Initial spread of direct-mode global coordinates, as a fraction of the scene span.
const DIRECT_INIT_SIGMA: f64 = 0.01;

/// A fully connected layer stored row-major (`input × output`) followed by its bias.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct Dense {
    pub input: usize,
    pub output: usize,
    pub offset: usize,
}

impl Dense {
    fn len(&self) -> usize {
        (self.input + 1) * self.output
    }
}

/// Layer table of the two heads. The G-head maps a descriptor to global
/// coordinates; the D-head maps descriptor and unit ray through a shared
/// trunk into separate camera and weight layers.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Heads {
    pub g: [Dense; 3],
    pub d: [Dense; 4],
}

impl Heads {
    pub fn new(hidden: [usize; 2], camera_dim: usize) -> Self {
        let mut offset = 0;
        let mut dense = |input, output| {
            let d = Dense {
                input,
                output,
                offset,
            };
            offset += d.len();
            d
        };
        let g = [
            dense(DESCRIPTOR_DIM, hidden[0]),
            dense(hidden[0], hidden[1]),
            dense(hidden[1], 3),
        ];
        let d = [
            dense(DESCRIPTOR_DIM + 3, hidden[0]),
            dense(hidden[0], hidden[1]),
            dense(hidden[1], camera_dim),
            dense(hidden[1], 1),
        ];
        Self { g, d }
    }

    pub fn layers(&self) -> impl Iterator<Item = &Dense> {
        self.g.iter().chain(&self.d)
    }

    pub fn len(&self) -> usize {
        self.layers().map(Dense::len).sum()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Params {
    /// Per frame id: camera parameters, global coordinates and weight logits
    /// of every grid cell, concatenated.
    Direct(BTreeMap<usize, Vec<f64>>),
    Mlp(Vec<f64>),
}

/// Learnable depth, global-coordinate and weight predictor.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainableModel {
    pub mode: TrainMode,
    pub camera_output: CameraOutput,
    pub depth_range: (f64, f64),
    pub resolution: Resolution,
    pub hidden: [usize; 2],
    pub extent: Extent,
    pub epochs_completed: usize,
    pub(crate) params: Params,
    pub(crate) optimizer: BTreeMap<usize, AdamState>,
}

/// Nodes of the predicted maps on a tape, restricted to a set of cells.
pub(crate) struct MapNodes {
    /// Depth column; `None` when camera points are predicted directly.
    pub depth: Option<NodeId>,
    /// Camera-frame points (`Coordinates`) or the pre-activation column (`Depth`).
    pub camera: NodeId,
    pub global: NodeId,
    pub weights: NodeId,
    pub leaves: Vec<NodeId>,
}

impl TrainableModel {
    /// Fresh model for `cfg`. Direct mode allocates maps for the frames of `observations`.
    pub fn new(cfg: &TrainConfig, extent: Extent, observations: &[Observation]) -> Result<Self> {
        cfg.validate()?;
        let camera_dim = cfg.camera_output.dim();
        let mut rng = crate::sim::stream_rng(cfg.seed, u64::MAX);
        let params = match cfg.mode {
            TrainMode::Direct => {
                let mut maps = BTreeMap::new();
                for obs in observations {
                    check_grid(obs, cfg.resolution)?;
                    let cells = cfg.resolution.cells();
                    let mid = 0.5 * (cfg.depth_range.0 + cfg.depth_range.1);
                    let mut p = Vec::with_capacity(cells * (camera_dim + 4));
                    for cell in 0..cells {
                        match cfg.camera_output {
                            CameraOutput::Depth => p.push(0.0),
                            CameraOutput::Coordinates => p.extend((obs.ray(cell) * mid).iter()),
                        }
                    }
                    let sigma = DIRECT_INIT_SIGMA * extent.span();
                    for _ in 0..cells {
                        let c = extent.center();
                        p.extend((0..3).map(|i| c[i] + sigma * standard_normal(&mut rng)));
                    }
                    p.extend(std::iter::repeat_n(0.0, cells));
                    if maps.insert(obs.frame.id, p).is_some() {
                        return Err(Error::Config(format!(
                            "frame {} appears twice",
                            obs.frame.id
                        )));
                    }
                }
                Params::Direct(maps)
            }
            TrainMode::Mlp => {
                let heads = Heads::new(cfg.hidden, camera_dim);
                let mut p = vec![0.0; heads.len()];
                for l in heads.layers() {
                    let bound = 1.0 / (l.input as f64).sqrt();
                    for w in &mut p[l.offset..l.offset + l.input * l.output] {
                        *w = rng.gen_range(-bound..bound);
                    }
                }
                Params::Mlp(p)
            }
        };
        Ok(Self {
            mode: cfg.mode,
            camera_output: cfg.camera_output,
            depth_range: cfg.depth_range,
            resolution: cfg.resolution,
            hidden: cfg.hidden,
            extent,
            epochs_completed: 0,
            params,
            optimizer: BTreeMap::new(),
        })
    }

    pub(crate) fn heads(&self) -> Heads {
        Heads::new(self.hidden, self.camera_output.dim())
    }

    pub fn parameter_count(&self) -> usize {
        match &self.params {
            Params::Direct(m) => m.values().map(Vec::len).sum(),
            Params::Mlp(p) => p.len(),
        }
    }

    pub fn is_finite(&self) -> bool {
        match &self.params {
            Params::Direct(m) => m.values().flatten().all(|v| v.is_finite()),
            Params::Mlp(p) => p.iter().all(|v| v.is_finite()),
        }
    }

    /// The same predictor applied to another grid. Only mlp models are
    /// independent of the grid size.
    pub fn with_resolution(&self, resolution: Resolution) -> Result<Self> {
        if self.mode == TrainMode::Direct && resolution != self.resolution {
            return Err(Error::Config(
                "direct-mode maps are tied to their grid".into(),
            ));
        }
        Ok(Self {
            resolution,
            ..self.clone()
        })
    }

    /// Direct-mode frame ids with their own maps.
    pub fn frames(&self) -> Vec<usize> {
        match &self.params {
            Params::Direct(m) => m.keys().copied().collect(),
            Params::Mlp(_) => Vec::new(),
        }
    }

    /// Applies one Adam step to the parameter block that `obs` trains.
    pub(crate) fn apply_update(
        &mut self,
        obs: &Observation,
        grads: &[f64],
        adam: &AdamConfig,
    ) -> Result<()> {
        let (key, block) = match &mut self.params {
            Params::Direct(m) => {
                let id = obs.frame.id;
                let p = m.get_mut(&id).ok_or_else(|| {
                    Error::Config(format!("direct model has no maps for frame {id}"))
                })?;
                (id, p)
            }
            Params::Mlp(p) => (0, p),
        };
        let state = self
            .optimizer
            .entry(key)
            .or_insert_with(|| AdamState::new(block.len()));
        adam_step(block, grads, state, adam)
    }

    /// Records the maps at `cells` of `obs`. With `trainable` the parameters
    /// become tape leaves; otherwise constants.
    pub(crate) fn record(
        &self,
        tape: &mut Tape,
        obs: &Observation,
        cells: &[usize],
        trainable: bool,
    ) -> Result<MapNodes> {
        check_grid(obs, self.resolution)?;
        let put = |tape: &mut Tape, t: Tensor| {
            if trainable {
                tape.leaf(t)
            } else {
                tape.constant(t)
            }
        };
        let (lo, hi) = self.depth_range;
        let k = self.camera_output.dim();
        match &self.params {
            Params::Direct(maps) => {
                let p = maps.get(&obs.frame.id).ok_or_else(|| {
                    Error::Config(format!(
                        "direct model has no maps for frame {}",
                        obs.frame.id
                    ))
                })?;
                let n = self.resolution.cells();
                let gather = |base: usize, dim: usize| -> Vec<f64> {
                    cells
                        .iter()
                        .flat_map(|&c| p[base + c * dim..base + (c + 1) * dim].iter().copied())
                        .collect()
                };
                let m = cells.len();
                let camera = put(tape, Tensor::new(m, k, gather(0, k))?);
                let global = put(tape, Tensor::new(m, 3, gather(n * k, 3))?);
                let wlogit = put(tape, Tensor::new(m, 1, gather(n * (k + 3), 1))?);
                let weights = tape.sigmoid(wlogit)?;
                let depth = self.depth_from(tape, camera)?;
                Ok(MapNodes {
                    depth,
                    camera,
                    global,
                    weights,
                    leaves: vec![camera, global, wlogit],
                })
            }
            Params::Mlp(p) => {
                let heads = self.heads();
                let mut leaves = Vec::new();
                let layer = |tape: &mut Tape,
                             d: &Dense,
                             leaves: &mut Vec<NodeId>|
                 -> Result<(NodeId, NodeId)> {
                    let w_end = d.offset + d.input * d.output;
                    let w = put(
                        tape,
                        Tensor::new(d.input, d.output, p[d.offset..w_end].to_vec())?,
                    );
                    let b = put(
                        tape,
                        Tensor::new(1, d.output, p[w_end..w_end + d.output].to_vec())?,
                    );
                    leaves.extend([w, b]);
                    Ok((w, b))
                };
                let g: Vec<_> = heads
                    .g
                    .iter()
                    .map(|d| layer(tape, d, &mut leaves))
                    .collect::<Result<_>>()?;
                let dl: Vec<_> = heads
                    .d
                    .iter()
                    .map(|d| layer(tape, d, &mut leaves))
                    .collect::<Result<_>>()?;

                let m = cells.len();
                let mut xg = Vec::with_capacity(m * DESCRIPTOR_DIM);
                let mut xd = Vec::with_capacity(m * (DESCRIPTOR_DIM + 3));
                for &c in cells {
                    let desc = obs
                        .hit_at(c)
                        .map(|h| h.descriptor)
                        .unwrap_or([0.0; DESCRIPTOR_DIM]);
                    xg.extend(desc);
                    xd.extend(desc);
                    xd.extend(obs.unit_ray(c).iter());
                }
                let xg = tape.constant(Tensor::new(m, DESCRIPTOR_DIM, xg)?);
                let xd = tape.constant(Tensor::new(m, DESCRIPTOR_DIM + 3, xd)?);

                let half_span = 0.5 * self.extent.span();
                let h = dense_tanh(tape, xg, g[0])?;
                let h = dense_tanh(tape, h, g[1])?;
                let out = dense(tape, h, g[2])?;
                let scaled = tape.scale(out, half_span, 0.0)?;
                let center = tape.constant(Tensor::row(self.extent.center().as_slice()));
                let global = tape.add(scaled, center)?;

                let h = dense_tanh(tape, xd, dl[0])?;
                let h = dense_tanh(tape, h, dl[1])?;
                let raw = dense(tape, h, dl[2])?;
                let wlogit = dense(tape, h, dl[3])?;
                let weights = tape.sigmoid(wlogit)?;
                let camera = match self.camera_output {
                    CameraOutput::Depth => raw,
                    CameraOutput::Coordinates => {
                        let s = tape.scale(raw, half_span, 0.0)?;
                        let mid = tape.constant(Tensor::row(&[0.0, 0.0, 0.5 * (lo + hi)]));
                        tape.add(s, mid)?
                    }
                };
                let depth = self.depth_from(tape, camera)?;
                Ok(MapNodes {
                    depth,
                    camera,
                    global,
                    weights,
                    leaves,
                })
            }
        }
    }

    fn depth_from(&self, tape: &mut Tape, camera: NodeId) -> Result<Option<NodeId>> {
        let (lo, hi) = self.depth_range;
        Ok(match self.camera_output {
            CameraOutput::Depth => {
                let s = tape.sigmoid(camera)?;
                Some(tape.scale(s, hi - lo, lo)?)
            }
            CameraOutput::Coordinates => None,
        })
    }

    /// Flattens leaf adjoints into the layout of the parameter block.
    pub(crate) fn gather_gradients(
        &self,
        tape: &Tape,
        adj: &Adjoints,
        nodes: &MapNodes,
        cells: &[usize],
    ) -> Vec<f64> {
        let grad = |id: NodeId| adj.get_or_zeros(id, tape.value(id)).into_data();
        match &self.params {
            Params::Direct(_) => {
                let n = self.resolution.cells();
                let k = self.camera_output.dim();
                let mut out = vec![0.0; n * (k + 4)];
                let parts = [(0, k), (n * k, 3), (n * (k + 3), 1)];
                for (&leaf, (base, dim)) in nodes.leaves.iter().zip(parts) {
                    let g = grad(leaf);
                    for (j, &c) in cells.iter().enumerate() {
                        out[base + c * dim..base + (c + 1) * dim]
                            .copy_from_slice(&g[j * dim..(j + 1) * dim]);
                    }
                }
                out
            }
            Params::Mlp(_) => nodes.leaves.iter().flat_map(|&l| grad(l)).collect(),
        }
    }

    /// Depth (or camera points), global coordinates and weights at `cells`.
    fn evaluate_cells(
        &self,
        obs: &Observation,
        cells: &[usize],
    ) -> Result<(Vec<f64>, Vec<Vector3<f64>>, Vec<Vector3<f64>>, Vec<f64>)> {
        let mut tape = Tape::new();
        let nodes = self.record(&mut tape, obs, cells, false)?;
        let (lo, hi) = self.depth_range;
        let (depth, camera) = match nodes.depth {
            Some(d) => {
                let depth = tape.value(d).data().to_vec();
                let camera = cells
                    .iter()
                    .zip(&depth)
                    .map(|(&c, &z)| obs.ray(c) * z)
                    .collect();
                (depth, camera)
            }
            None => {
                let camera = tape.value(nodes.camera).to_points();
                (
                    camera
                        .iter()
                        .map(|p: &Vector3<f64>| p.z.clamp(lo, hi))
                        .collect(),
                    camera,
                )
            }
        };
        Ok((
            depth,
            camera,
            tape.value(nodes.global).to_points(),
            tape.value(nodes.weights).data().to_vec(),
        ))
    }

    /// Full-grid maps for `obs`. Cells without a landmark see a zero descriptor.
    pub fn predict(&self, obs: &Observation) -> Result<PredictedMaps> {
        let cells: Vec<usize> = (0..obs.frame.grid.len()).collect();
        let (depth, camera, global, weights) = self.evaluate_cells(obs, &cells)?;
        Ok(PredictedMaps {
            depth: DepthMap::new(depth, self.depth_range)?,
            global,
            weights,
            camera: match self.camera_output {
                CameraOutput::Depth => None,
                CameraOutput::Coordinates => Some(camera),
            },
        })
    }

    /// Correspondences over the hit cells of `obs`; equal to
    /// `obs.to_correspondences(&self.predict(obs)?)` at lower cost.
    pub fn correspondences(&self, obs: &Observation) -> Result<CorrespondenceSet> {
        let cells: Vec<usize> = obs.cells().collect();
        let (_, camera, global, weights) = self.evaluate_cells(obs, &cells)?;
        CorrespondenceSet::new(
            PixelGrid {
                width: obs.frame.grid.width,
                height: obs.frame.grid.height,
                pixels: obs.hit_pixels(),
            },
            PointCloud::camera(camera),
            PointCloud::global(global),
            weights,
        )
    }
}

fn dense(tape: &mut Tape, x: NodeId, (w, b): (NodeId, NodeId)) -> Result<NodeId> {
    let xw = tape.matmul(x, w)?;
    tape.push(Op::Add(xw, b))
}

fn dense_tanh(tape: &mut Tape, x: NodeId, layer: (NodeId, NodeId)) -> Result<NodeId> {
    let z = dense(tape, x, layer)?;
    tape.tanh(z)
}

fn check_grid(obs: &Observation, res: Resolution) -> Result<()> {
    let g = &obs.frame.grid;
    if g.width != res.width || g.height != res.height || g.len() != res.cells() {
        return Err(Error::ShapeMismatch(format!(
            "frame {} has a {}x{} grid, model expects {res}",
            obs.frame.id, g.height, g.width
        )));
    }
    Ok(())
}
