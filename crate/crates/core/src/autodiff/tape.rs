//! Fixed-vocabulary reverse-mode tape.
//!
//! Nodes are recorded eagerly in topological order; each stores its forward
//! value. Leaves can be overwritten and the whole tape replayed, which is what
//! the finite-difference checker relies on. Only nodes that (transitively)
//! depend on a trainable leaf receive adjoints.

use nalgebra::{Matrix3, Vector2, Vector3};

use super::kabsch::{kabsch_vjp, PoseAdjoint};
use super::tensor::{gemm, Tensor};
use crate::alignment::{weighted_kabsch_raw, AlignmentTrace};
use crate::geometry::{invert, CameraIntrinsics, Pose, MIN_PROJECTION_DEPTH};
use crate::{Error, Result};

pub type NodeId = usize;

/// Clamp applied to the `arccos` argument when differentiating.
pub const ARCCOS_GRAD_CLAMP: f64 = 1.0 - 1e-7;

#[derive(Clone, Debug)]
pub enum Op {
    Leaf {
        trainable: bool,
    },
    /// Elementwise sum; the right operand may be a `1 × cols` row broadcast over rows.
    Add(NodeId, NodeId),
    /// `scale·x + shift`, elementwise.
    Scale {
        x: NodeId,
        scale: f64,
        shift: f64,
    },
    MatMul(NodeId, NodeId),
    Sigmoid(NodeId),
    /// Frobenius norm, `1 × 1`.
    Norm(NodeId),
    /// Elementwise `arccos` with the argument clamped to `[-1, 1]`.
    Arccos(NodeId),
    /// Depth column `M × 1` times fixed rays `K⁻¹uᵢ`, giving `M × 3`.
    BackProject {
        depth: NodeId,
        rays: Vec<Vector3<f64>>,
    },
    /// Weighted Kabsch of `M × 3` camera and global points with `M × 1`
    /// weights; output `1 × 12` = rotation (row-major) then translation.
    Kabsch {
        camera: NodeId,
        global: NodeId,
        weights: NodeId,
    },
    /// Pixels `M × 2` of global points seen from the camera→global `pose`.
    Project {
        points: NodeId,
        pose: Pose,
        intrinsics: CameraIntrinsics,
    },
    /// `‖t_target − t̂‖` of a `1 × 12` pose node.
    PositionLoss {
        pose: NodeId,
        target: Vector3<f64>,
    },
    /// Geodesic angle (radians) between a `1 × 12` pose node and `target`.
    RotationLoss {
        pose: NodeId,
        target: Matrix3<f64>,
    },
    /// `(1/M) Σ ‖gᵢ − T·cᵢ‖`.
    ConsistencyLoss {
        camera: NodeId,
        global: NodeId,
        pose: Pose,
    },
    /// `(1/M) Σ ‖uᵢ − π(T⁻¹·gᵢ)‖`; points behind the camera cost `penalty`.
    ReprojectionLoss {
        global: NodeId,
        pixels: Vec<Vector2<f64>>,
        pose: Pose,
        intrinsics: CameraIntrinsics,
        penalty: f64,
    },
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf { .. } => "leaf",
            Op::Add(..) => "add",
            Op::Scale { .. } => "scale",
            Op::MatMul(..) => "matmul",
            Op::Sigmoid(_) => "sigmoid",
            Op::Norm(_) => "norm",
            Op::Arccos(_) => "arccos",
            Op::BackProject { .. } => "back-project",
            Op::Kabsch { .. } => "kabsch",
            Op::Project { .. } => "project",
            Op::PositionLoss { .. } => "position-loss",
            Op::RotationLoss { .. } => "rotation-loss",
            Op::ConsistencyLoss { .. } => "consistency-loss",
            Op::ReprojectionLoss { .. } => "reprojection-loss",
        }
    }

    fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Leaf { .. } => vec![],
            Op::Add(a, b) | Op::MatMul(a, b) => vec![*a, *b],
            Op::Scale { x, .. } | Op::Sigmoid(x) | Op::Norm(x) | Op::Arccos(x) => vec![*x],
            Op::BackProject { depth, .. } => vec![*depth],
            Op::Kabsch {
                camera,
                global,
                weights,
            } => vec![*camera, *global, *weights],
            Op::Project { points, .. } => vec![*points],
            Op::PositionLoss { pose, .. } | Op::RotationLoss { pose, .. } => vec![*pose],
            Op::ConsistencyLoss { camera, global, .. } => vec![*camera, *global],
            Op::ReprojectionLoss { global, .. } => vec![*global],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
    trace: Option<AlignmentTrace>,
    needs_grad: bool,
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoint of every node reached by the backward pass.
#[derive(Clone, Debug)]
pub struct Adjoints {
    grads: Vec<Option<Tensor>>,
}

impl Adjoints {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    /// Adjoint of `id`, or zeros shaped like `like` when nothing flowed there.
    pub fn get_or_zeros(&self, id: NodeId, like: &Tensor) -> Tensor {
        self.get(id)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(like.rows(), like.cols()))
    }
}

pub(crate) fn pose_from_row(t: &Tensor) -> Pose {
    let d = t.data();
    Pose {
        rotation: Matrix3::new(d[0], d[1], d[2], d[3], d[4], d[5], d[6], d[7], d[8]),
        translation: Vector3::new(d[9], d[10], d[11]),
    }
}

fn pose_to_row(p: &Pose) -> Tensor {
    let r = &p.rotation;
    Tensor::row(&[
        r[(0, 0)],
        r[(0, 1)],
        r[(0, 2)],
        r[(1, 0)],
        r[(1, 1)],
        r[(1, 2)],
        r[(2, 0)],
        r[(2, 1)],
        r[(2, 2)],
        p.translation.x,
        p.translation.y,
        p.translation.z,
    ])
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn shape_error(op: &str, detail: String) -> Error {
    Error::ShapeMismatch(format!("{op}: {detail}"))
}

/// Per-point reprojection term and, when differentiable, its gradient w.r.t. the global point.
fn reprojection_term(
    g: &Vector3<f64>,
    u: &Vector2<f64>,
    world_to_camera: &Pose,
    k: &CameraIntrinsics,
    penalty: f64,
) -> (f64, Option<Vector3<f64>>) {
    let p = world_to_camera.transform_point(g);
    if p.z <= MIN_PROJECTION_DEPTH {
        return (penalty, None);
    }
    let proj = Vector2::new(k.fx * p.x / p.z + k.cx, k.fy * p.y / p.z + k.cy);
    let r = proj - u;
    let norm = r.norm();
    if norm == 0.0 {
        return (0.0, Some(Vector3::zeros()));
    }
    let n = r / norm;
    // ∂π/∂p, transposed and applied to n.
    let jt_n = Vector3::new(
        k.fx / p.z * n.x,
        k.fy / p.z * n.y,
        -(k.fx * p.x * n.x + k.fy * p.y * n.y) / (p.z * p.z),
    );
    (norm, Some(world_to_camera.rotation.transpose() * jt_n))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id].value
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.nodes[id].op
    }

    /// Alignment trace of a Kabsch node.
    pub fn trace(&self, id: NodeId) -> Option<&AlignmentTrace> {
        self.nodes[id].trace.as_ref()
    }

    pub fn pose(&self, id: NodeId) -> Pose {
        pose_from_row(self.value(id))
    }

    /// A differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value, true)
    }

    /// A fixed input that receives no adjoint.
    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push_leaf(value, false)
    }

    fn push_leaf(&mut self, value: Tensor, trainable: bool) -> NodeId {
        self.nodes.push(Node {
            op: Op::Leaf { trainable },
            value,
            trace: None,
            needs_grad: trainable,
        });
        self.nodes.len() - 1
    }

    /// Records `op`, evaluating it immediately.
    pub fn push(&mut self, op: Op) -> Result<NodeId> {
        let inputs = op.inputs();
        if let Some(bad) = inputs.iter().find(|&&i| i >= self.nodes.len()) {
            return Err(shape_error(
                op.name(),
                format!("input {bad} is not recorded yet"),
            ));
        }
        let needs_grad = match op {
            Op::Leaf { trainable } => trainable,
            _ => inputs.iter().any(|&i| self.nodes[i].needs_grad),
        };
        let (value, trace) = self.evaluate(&op)?;
        self.nodes.push(Node {
            op,
            value,
            trace,
            needs_grad,
        });
        Ok(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::Add(a, b))
    }

    pub fn scale(&mut self, x: NodeId, scale: f64, shift: f64) -> Result<NodeId> {
        self.push(Op::Scale { x, scale, shift })
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.push(Op::MatMul(a, b))
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::Sigmoid(x))
    }

    /// `tanh(x) = 2·sigmoid(2x) − 1`, spelled with vocabulary ops.
    pub fn tanh(&mut self, x: NodeId) -> Result<NodeId> {
        let doubled = self.scale(x, 2.0, 0.0)?;
        let s = self.sigmoid(doubled)?;
        self.scale(s, 2.0, -1.0)
    }

    pub fn norm(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::Norm(x))
    }

    pub fn arccos(&mut self, x: NodeId) -> Result<NodeId> {
        self.push(Op::Arccos(x))
    }

    /// Replaces a leaf's value without replaying.
    pub fn set_leaf(&mut self, id: NodeId, value: Tensor) -> Result<()> {
        let node = &mut self.nodes[id];
        if !matches!(node.op, Op::Leaf { .. }) {
            return Err(shape_error(
                node.op.name(),
                format!("node {id} is not a leaf"),
            ));
        }
        if node.value.shape() != value.shape() {
            return Err(shape_error(
                "leaf",
                format!("{:?} replaced by {:?}", node.value.shape(), value.shape()),
            ));
        }
        node.value = value;
        Ok(())
    }

    /// Recomputes every non-leaf node from the current leaf values.
    pub fn replay(&mut self) -> Result<()> {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf { .. }) {
                continue;
            }
            let (value, trace) = self.evaluate(&self.nodes[i].op)?;
            self.nodes[i].value = value;
            self.nodes[i].trace = trace;
        }
        Ok(())
    }

    fn evaluate(&self, op: &Op) -> Result<(Tensor, Option<AlignmentTrace>)> {
        let v = |id: NodeId| &self.nodes[id].value;
        let value = match op {
            Op::Leaf { .. } => unreachable!("leaves are not evaluated"),
            Op::Add(a, b) => {
                let (a, b) = (v(*a), v(*b));
                let broadcast = b.rows() == 1 && b.cols() == a.cols();
                if a.shape() != b.shape() && !broadcast {
                    return Err(shape_error(
                        "add",
                        format!("{:?} + {:?}", a.shape(), b.shape()),
                    ));
                }
                let cols = a.cols();
                let data = a
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, x)| {
                        x + if broadcast {
                            b.data()[i % cols]
                        } else {
                            b.data()[i]
                        }
                    })
                    .collect();
                Tensor::new(a.rows(), cols, data)?
            }
            Op::Scale { x, scale, shift } => v(*x).map(|e| scale * e + shift),
            Op::MatMul(a, b) => {
                let (a, b) = (v(*a), v(*b));
                if a.cols() != b.rows() {
                    return Err(shape_error(
                        "matmul",
                        format!("{:?} x {:?}", a.shape(), b.shape()),
                    ));
                }
                let mut out = Tensor::zeros(a.rows(), b.cols());
                gemm(a, false, b, false, &mut out, false);
                out
            }
            Op::Sigmoid(x) => v(*x).map(sigmoid),
            Op::Norm(x) => Tensor::scalar(v(*x).data().iter().map(|e| e * e).sum::<f64>().sqrt()),
            Op::Arccos(x) => v(*x).map(|e| e.clamp(-1.0, 1.0).acos()),
            Op::BackProject { depth, rays } => {
                let d = v(*depth);
                if d.shape() != (rays.len(), 1) {
                    return Err(shape_error(
                        "back-project",
                        format!("depth {:?} for {} rays", d.shape(), rays.len()),
                    ));
                }
                if let Some(bad) = d.data().iter().find(|x| !(**x > 0.0)) {
                    return Err(Error::NonPositiveDepth(*bad));
                }
                let pts: Vec<_> = rays.iter().zip(d.data()).map(|(r, z)| r * *z).collect();
                Tensor::from_points(&pts)
            }
            Op::Kabsch {
                camera,
                global,
                weights,
            } => {
                let (c, g, w) = (v(*camera), v(*global), v(*weights));
                if c.cols() != 3 || g.shape() != c.shape() || w.shape() != (c.rows(), 1) {
                    return Err(shape_error(
                        "kabsch",
                        format!("{:?}, {:?}, {:?}", c.shape(), g.shape(), w.shape()),
                    ));
                }
                let (pose, trace) = weighted_kabsch_raw(&c.to_points(), &g.to_points(), w.data())?;
                return Ok((pose_to_row(&pose), Some(trace)));
            }
            Op::Project {
                points,
                pose,
                intrinsics,
            } => {
                let p = v(*points);
                if p.cols() != 3 {
                    return Err(shape_error("project", format!("{:?}", p.shape())));
                }
                let w2c = invert(pose);
                let mut data = Vec::with_capacity(p.rows() * 2);
                for g in p.to_points() {
                    let px = intrinsics.project(&w2c.transform_point(&g))?;
                    data.extend([px.x, px.y]);
                }
                Tensor::new(p.rows(), 2, data)?
            }
            Op::PositionLoss { pose, target } => {
                check_pose_row(v(*pose))?;
                let p = pose_from_row(v(*pose));
                Tensor::scalar((target - p.translation).norm())
            }
            Op::RotationLoss { pose, target } => {
                check_pose_row(v(*pose))?;
                let p = pose_from_row(v(*pose));
                let cos = 0.5 * ((p.rotation * target.transpose()).trace() - 1.0);
                Tensor::scalar(cos.clamp(-1.0, 1.0).acos())
            }
            Op::ConsistencyLoss {
                camera,
                global,
                pose,
            } => {
                let (c, g) = (v(*camera), v(*global));
                if c.cols() != 3 || c.shape() != g.shape() || c.rows() == 0 {
                    return Err(shape_error(
                        "consistency-loss",
                        format!("{:?}, {:?}", c.shape(), g.shape()),
                    ));
                }
                let sum: f64 = (0..c.rows())
                    .map(|i| (g.point(i) - pose.transform_point(&c.point(i))).norm())
                    .sum();
                Tensor::scalar(sum / c.rows() as f64)
            }
            Op::ReprojectionLoss {
                global,
                pixels,
                pose,
                intrinsics,
                penalty,
            } => {
                let g = v(*global);
                if g.shape() != (pixels.len(), 3) || pixels.is_empty() {
                    return Err(shape_error(
                        "reprojection-loss",
                        format!("{:?} for {} pixels", g.shape(), pixels.len()),
                    ));
                }
                let w2c = invert(pose);
                let sum: f64 = pixels
                    .iter()
                    .enumerate()
                    .map(|(i, u)| reprojection_term(&g.point(i), u, &w2c, intrinsics, *penalty).0)
                    .sum();
                Tensor::scalar(sum / pixels.len() as f64)
            }
        };
        Ok((value, None))
    }

    /// Propagates `d output = 1` back through the tape. `output` must be `1 × 1`.
    pub fn backward(&self, output: NodeId) -> Result<Adjoints> {
        if self.nodes[output].value.shape() != (1, 1) {
            return Err(shape_error(
                "backward",
                format!(
                    "output shape {:?} is not scalar",
                    self.nodes[output].value.shape()
                ),
            ));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        grads[output] = Some(Tensor::scalar(1.0));
        for id in (0..=output).rev() {
            let Some(upstream) = grads[id].take() else {
                continue;
            };
            let node = &self.nodes[id];
            for (input, g) in self.vjp(node, &upstream)? {
                if !self.nodes[input].needs_grad {
                    continue;
                }
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&g),
                    slot => *slot = Some(g),
                }
            }
            grads[id] = Some(upstream);
        }
        Ok(Adjoints { grads })
    }

    fn vjp(&self, node: &Node, up: &Tensor) -> Result<Vec<(NodeId, Tensor)>> {
        let v = |id: NodeId| &self.nodes[id].value;
        let wants = |id: NodeId| self.nodes[id].needs_grad;
        let out = match &node.op {
            Op::Leaf { .. } => vec![],
            Op::Add(a, b) => {
                let mut res = vec![(*a, up.clone())];
                if wants(*b) {
                    let bv = v(*b);
                    if bv.shape() == up.shape() {
                        res.push((*b, up.clone()));
                    } else {
                        let cols = up.cols();
                        let mut acc = vec![0.0; cols];
                        for (i, g) in up.data().iter().enumerate() {
                            acc[i % cols] += g;
                        }
                        res.push((*b, Tensor::row(&acc)));
                    }
                }
                res
            }
            Op::Scale { x, scale, .. } => vec![(*x, up.map(|g| g * scale))],
            Op::MatMul(a, b) => {
                let (av, bv) = (v(*a), v(*b));
                let mut res = Vec::new();
                if wants(*a) {
                    let mut ga = Tensor::zeros(av.rows(), av.cols());
                    gemm(up, false, bv, true, &mut ga, false);
                    res.push((*a, ga));
                }
                if wants(*b) {
                    let mut gb = Tensor::zeros(bv.rows(), bv.cols());
                    gemm(av, true, up, false, &mut gb, false);
                    res.push((*b, gb));
                }
                res
            }
            Op::Sigmoid(x) => {
                let y = &node.value;
                let data = up
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(g, s)| g * s * (1.0 - s))
                    .collect();
                vec![(*x, Tensor::new(y.rows(), y.cols(), data)?)]
            }
            Op::Norm(x) => {
                let n = node.value.item();
                let g = up.item();
                let xv = v(*x);
                let grad = if n == 0.0 {
                    Tensor::zeros(xv.rows(), xv.cols())
                } else {
                    xv.map(|e| g * e / n)
                };
                vec![(*x, grad)]
            }
            Op::Arccos(x) => {
                let xv = v(*x);
                let data = up
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(g, e)| {
                        let c = e.clamp(-ARCCOS_GRAD_CLAMP, ARCCOS_GRAD_CLAMP);
                        -g / (1.0 - c * c).sqrt()
                    })
                    .collect();
                vec![(*x, Tensor::new(xv.rows(), xv.cols(), data)?)]
            }
            Op::BackProject { depth, rays } => {
                let data: Vec<f64> = rays
                    .iter()
                    .enumerate()
                    .map(|(i, r)| up.point(i).dot(r))
                    .collect();
                vec![(*depth, Tensor::column(&data))]
            }
            Op::Kabsch {
                camera,
                global,
                weights,
            } => {
                let trace = node.trace.as_ref().expect("kabsch node keeps its trace");
                let d = up.data();
                let d_pose = PoseAdjoint {
                    rotation: Matrix3::new(d[0], d[1], d[2], d[3], d[4], d[5], d[6], d[7], d[8]),
                    translation: Vector3::new(d[9], d[10], d[11]),
                };
                let adj = kabsch_vjp(trace, v(*weights).data(), &d_pose)?;
                vec![
                    (*camera, Tensor::from_points(&adj.camera)),
                    (*global, Tensor::from_points(&adj.global)),
                    (*weights, Tensor::column(&adj.weights)),
                ]
            }
            Op::Project {
                points,
                pose,
                intrinsics: k,
            } => {
                let w2c = invert(pose);
                let pts = v(*points);
                let mut grads = Vec::with_capacity(pts.rows());
                for i in 0..pts.rows() {
                    let p = w2c.transform_point(&pts.point(i));
                    let (gu, gv) = (up.get(i, 0), up.get(i, 1));
                    let jt = Vector3::new(
                        k.fx / p.z * gu,
                        k.fy / p.z * gv,
                        -(k.fx * p.x * gu + k.fy * p.y * gv) / (p.z * p.z),
                    );
                    grads.push(w2c.rotation.transpose() * jt);
                }
                vec![(*points, Tensor::from_points(&grads))]
            }
            Op::PositionLoss { pose, target } => {
                let p = pose_from_row(v(*pose));
                let diff = p.translation - target;
                let n = diff.norm();
                let mut g = vec![0.0; 12];
                if n > 0.0 {
                    for k in 0..3 {
                        g[9 + k] = up.item() * diff[k] / n;
                    }
                }
                vec![(*pose, Tensor::row(&g))]
            }
            Op::RotationLoss { pose, target } => {
                let p = pose_from_row(v(*pose));
                let cos = 0.5 * ((p.rotation * target.transpose()).trace() - 1.0);
                let c = cos.clamp(-ARCCOS_GRAD_CLAMP, ARCCOS_GRAD_CLAMP);
                let factor = -up.item() / (1.0 - c * c).sqrt() * 0.5;
                let mut g = vec![0.0; 12];
                for r in 0..3 {
                    for col in 0..3 {
                        g[r * 3 + col] = factor * target[(r, col)];
                    }
                }
                vec![(*pose, Tensor::row(&g))]
            }
            Op::ConsistencyLoss {
                camera,
                global,
                pose,
            } => {
                let (c, g) = (v(*camera), v(*global));
                let m = c.rows();
                let scale = up.item() / m as f64;
                let mut dc = Vec::with_capacity(m);
                let mut dg = Vec::with_capacity(m);
                for i in 0..m {
                    let e = g.point(i) - pose.transform_point(&c.point(i));
                    let n = e.norm();
                    let unit = if n > 0.0 { e / n } else { Vector3::zeros() };
                    dg.push(unit * scale);
                    dc.push(-(pose.rotation.transpose() * unit) * scale);
                }
                vec![
                    (*camera, Tensor::from_points(&dc)),
                    (*global, Tensor::from_points(&dg)),
                ]
            }
            Op::ReprojectionLoss {
                global,
                pixels,
                pose,
                intrinsics,
                penalty,
            } => {
                let g = v(*global);
                let w2c = invert(pose);
                let scale = up.item() / pixels.len() as f64;
                let grads: Vec<_> = pixels
                    .iter()
                    .enumerate()
                    .map(|(i, u)| {
                        reprojection_term(&g.point(i), u, &w2c, intrinsics, *penalty)
                            .1
                            .map_or(Vector3::zeros(), |d| d * scale)
                    })
                    .collect();
                vec![(*global, Tensor::from_points(&grads))]
            }
        };
        Ok(out)
    }
}

fn check_pose_row(t: &Tensor) -> Result<()> {
    if t.shape() != (1, 12) {
        return Err(shape_error(
            "pose",
            format!("expected 1x12, got {:?}", t.shape()),
        ));
    }
    Ok(())
}

/// One line of a textual graph: `<op> <input ids...> [parameters...]`.
///
/// Only the structural ops can be written this way (`add`, `scale`,
/// `matmul`, `sigmoid`, `norm`, `arccos`); geometric ops carry fixed data
/// and are recorded through [`Tape::push`].
fn parse_program_line(line: &str, lineno: usize) -> Result<Op> {
    let mut parts = line.split_whitespace();
    let name = parts.next().unwrap_or_default();
    let args: Vec<&str> = parts.collect();
    let id = |i: usize| -> Result<NodeId> {
        args.get(i)
            .ok_or_else(|| Error::parse(lineno, format!("`{name}` is missing argument {}", i + 1)))?
            .parse()
            .map_err(|_| Error::parse(lineno, format!("bad node id `{}`", args[i])))
    };
    let num = |i: usize, default: f64| -> Result<f64> {
        match args.get(i) {
            None => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| Error::parse(lineno, format!("bad number `{s}`"))),
        }
    };
    let op = match name {
        "add" => Op::Add(id(0)?, id(1)?),
        "scale" => Op::Scale {
            x: id(0)?,
            scale: num(1, 1.0)?,
            shift: num(2, 0.0)?,
        },
        "matmul" => Op::MatMul(id(0)?, id(1)?),
        "sigmoid" => Op::Sigmoid(id(0)?),
        "norm" => Op::Norm(id(0)?),
        "arccos" => Op::Arccos(id(0)?),
        "back-project" | "kabsch" | "project" | "position-loss" | "rotation-loss"
        | "consistency-loss" | "reprojection-loss" => {
            return Err(Error::parse(
                lineno,
                format!("`{name}` needs fixed data and cannot be written as text"),
            ))
        }
        other => return Err(Error::UnknownOp(other.to_string())),
    };
    Ok(op)
}

/// Records `inputs` as trainable leaves `0..n`, then each line of `program` as a
/// new node. Returns the tape and the value of the last node, which must be
/// a scalar.
pub fn record_forward(inputs: Vec<Tensor>, program: &str) -> Result<(Tape, f64)> {
    let mut tape = Tape::new();
    for t in inputs {
        tape.leaf(t);
    }
    for (i, line) in program.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        tape.push(parse_program_line(line, i + 1)?)?;
    }
    let last = tape
        .len()
        .checked_sub(1)
        .ok_or_else(|| shape_error("record", "empty graph".into()))?;
    let value = tape.value(last);
    if value.shape() != (1, 1) {
        return Err(shape_error(
            "record",
            format!("output shape {:?} is not scalar", value.shape()),
        ));
    }
    let loss = value.item();
    Ok((tape, loss))
}
