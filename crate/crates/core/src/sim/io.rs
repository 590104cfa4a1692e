//! Line-based text formats. Floats are written with 17 significant digits,
//! which round-trips every `f64` exactly.

use std::fmt::Write as _;

use nalgebra::Vector3;

use super::render::{Hit, Observation};
use super::scene::{Descriptor, Extent, Landmark, SceneModel, DESCRIPTOR_DIM};
use super::trajectory::Frame;
use crate::geometry::{pose_to_quat, quat_to_pose, CameraIntrinsics, PixelGrid};
use crate::{Error, Result};

const SCENE_HEADER: &str = "KLOC-SCENE v1";
const TRAJ_HEADER: &str = "KLOC-TRAJ v1";
const OBS_HEADER: &str = "KLOC-OBS v1";

pub(crate) fn fmt_f64(out: &mut String, v: f64) {
    write!(out, " {v:.16e}").unwrap();
}

/// Non-empty, non-comment lines with their 1-based numbers.
pub(crate) fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

pub(crate) fn expect_header<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    header: &str,
) -> Result<()> {
    match lines.next() {
        Some((_, l)) if l == header => Ok(()),
        Some((n, l)) => Err(Error::parse(n, format!("expected `{header}`, found `{l}`"))),
        None => Err(Error::parse(0, format!("empty input, expected `{header}`"))),
    }
}

/// Whitespace-separated fields of one line, consumed left to right.
pub(crate) struct Fields<'a> {
    line: usize,
    parts: std::str::SplitWhitespace<'a>,
}

impl<'a> Fields<'a> {
    pub(crate) fn new(line: usize, text: &'a str) -> Self {
        Self {
            line,
            parts: text.split_whitespace(),
        }
    }

    pub(crate) fn keyword(&mut self, expected: &str) -> Result<()> {
        match self.parts.next() {
            Some(k) if k == expected => Ok(()),
            other => Err(Error::parse(
                self.line,
                format!("expected `{expected}`, found {other:?}"),
            )),
        }
    }

    pub(crate) fn next<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let raw = self
            .parts
            .next()
            .ok_or_else(|| Error::parse(self.line, format!("missing {what}")))?;
        raw.parse()
            .map_err(|_| Error::parse(self.line, format!("bad {what} `{raw}`")))
    }

    pub(crate) fn finite(&mut self, what: &str) -> Result<f64> {
        let v: f64 = self.next(what)?;
        if !v.is_finite() {
            return Err(Error::parse(self.line, format!("{what} is not finite")));
        }
        Ok(v)
    }

    pub(crate) fn vector(&mut self, what: &str) -> Result<Vector3<f64>> {
        Ok(Vector3::new(
            self.finite(what)?,
            self.finite(what)?,
            self.finite(what)?,
        ))
    }

    pub(crate) fn end(mut self) -> Result<()> {
        match self.parts.next() {
            None => Ok(()),
            Some(extra) => Err(Error::parse(
                self.line,
                format!("unexpected trailing field `{extra}`"),
            )),
        }
    }
}

fn descriptor(f: &mut Fields) -> Result<Descriptor> {
    let mut d = [0.0; DESCRIPTOR_DIM];
    for v in d.iter_mut() {
        *v = f.finite("descriptor component")?;
    }
    Ok(d)
}

pub fn write_scene(scene: &SceneModel) -> String {
    let mut out = format!("{SCENE_HEADER}\nextent");
    for v in scene.extent.min.iter().chain(scene.extent.max.iter()) {
        fmt_f64(&mut out, *v);
    }
    out.push('\n');
    for l in &scene.landmarks {
        write!(out, "landmark {}", l.id).unwrap();
        l.position.iter().for_each(|v| fmt_f64(&mut out, *v));
        writeln!(out, " {}", l.label).unwrap();
    }
    for l in &scene.landmarks {
        write!(out, "descriptor {}", l.id).unwrap();
        l.descriptor.iter().for_each(|v| fmt_f64(&mut out, *v));
        out.push('\n');
    }
    out
}

pub fn read_scene(text: &str) -> Result<SceneModel> {
    let mut lines = content_lines(text);
    expect_header(&mut lines, SCENE_HEADER)?;
    let (n, l) = lines
        .next()
        .ok_or_else(|| Error::parse(0, "missing extent line"))?;
    let mut f = Fields::new(n, l);
    f.keyword("extent")?;
    let extent = Extent::new(f.vector("extent min")?, f.vector("extent max")?)?;
    f.end()?;

    let mut landmarks: Vec<Landmark> = Vec::new();
    let mut descriptors = 0;
    for (n, l) in lines {
        let mut f = Fields::new(n, l);
        if l.starts_with("landmark") {
            f.keyword("landmark")?;
            let id: usize = f.next("landmark id")?;
            if id != landmarks.len() || descriptors > 0 {
                return Err(Error::parse(n, format!("landmark {id} out of order")));
            }
            let position = f.vector("position")?;
            let label = f.next("label")?;
            f.end()?;
            landmarks.push(Landmark {
                id,
                position,
                label,
                descriptor: [0.0; DESCRIPTOR_DIM],
            });
        } else {
            f.keyword("descriptor")?;
            let id: usize = f.next("descriptor id")?;
            if id != descriptors || id >= landmarks.len() {
                return Err(Error::parse(n, format!("descriptor {id} out of order")));
            }
            landmarks[id].descriptor = descriptor(&mut f)?;
            f.end()?;
            descriptors += 1;
        }
    }
    if landmarks.is_empty() || descriptors != landmarks.len() {
        return Err(Error::parse(
            0,
            format!(
                "{} landmarks but {descriptors} descriptors",
                landmarks.len()
            ),
        ));
    }
    let scene = SceneModel { landmarks, extent };
    scene.validate()?;
    Ok(scene)
}

/// All frames must share one camera.
pub fn write_trajectory(frames: &[Frame]) -> Result<String> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Config("cannot write an empty trajectory".into()))?;
    if frames.iter().any(|f| {
        f.intrinsics != first.intrinsics
            || f.grid.width != first.grid.width
            || f.grid.height != first.grid.height
    }) {
        return Err(Error::Config(
            "frames of one trajectory must share intrinsics and grid".into(),
        ));
    }
    let k = first.intrinsics;
    let mut out = format!("{TRAJ_HEADER}\ncamera");
    for v in [k.fx, k.fy, k.cx, k.cy] {
        fmt_f64(&mut out, v);
    }
    writeln!(out, " {} {}", first.grid.width, first.grid.height).unwrap();
    for f in frames {
        write!(out, "frame {}", f.id).unwrap();
        pose_to_quat(&f.pose_gt)
            .iter()
            .for_each(|v| fmt_f64(&mut out, *v));
        out.push('\n');
    }
    Ok(out)
}

pub fn read_trajectory(text: &str) -> Result<Vec<Frame>> {
    let mut lines = content_lines(text);
    expect_header(&mut lines, TRAJ_HEADER)?;
    let (n, l) = lines
        .next()
        .ok_or_else(|| Error::parse(0, "missing camera line"))?;
    let mut f = Fields::new(n, l);
    f.keyword("camera")?;
    let k = CameraIntrinsics::new(
        f.finite("fx")?,
        f.finite("fy")?,
        f.finite("cx")?,
        f.finite("cy")?,
    )?;
    let width: usize = f.next("width")?;
    let height: usize = f.next("height")?;
    f.end()?;
    if width == 0 || height == 0 {
        return Err(Error::parse(n, "grid must be non-empty"));
    }
    let grid = PixelGrid::full(width, height);
    let mut frames = Vec::new();
    for (n, l) in lines {
        let mut f = Fields::new(n, l);
        f.keyword("frame")?;
        let id = f.next("frame id")?;
        let mut q = [0.0; 7];
        for v in q.iter_mut() {
            *v = f.finite("pose component")?;
        }
        f.end()?;
        frames.push(Frame {
            id,
            pose_gt: quat_to_pose(&q).map_err(|e| Error::parse(n, e.to_string()))?,
            intrinsics: k,
            grid: grid.clone(),
        });
    }
    if frames.is_empty() {
        return Err(Error::parse(0, "trajectory has no frames"));
    }
    Ok(frames)
}

pub fn write_observations(observations: &[Observation]) -> String {
    let mut out = format!("{OBS_HEADER}\n");
    for o in observations {
        writeln!(out, "obs {} {}", o.frame.id, o.hits.len()).unwrap();
        for h in &o.hits {
            write!(
                out,
                "hit {} {} {} {}",
                h.cell,
                h.landmark,
                h.label,
                u8::from(h.outlier)
            )
            .unwrap();
            fmt_f64(&mut out, h.depth_gt);
            h.global_gt.iter().for_each(|v| fmt_f64(&mut out, *v));
            h.descriptor.iter().for_each(|v| fmt_f64(&mut out, *v));
            out.push('\n');
        }
    }
    out
}

/// Parses observations and attaches each to its frame by id.
pub fn read_observations(text: &str, frames: &[Frame]) -> Result<Vec<Observation>> {
    let mut lines = content_lines(text).peekable();
    expect_header(&mut lines, OBS_HEADER)?;
    let mut out = Vec::new();
    while let Some((n, l)) = lines.next() {
        let mut f = Fields::new(n, l);
        f.keyword("obs")?;
        let id: usize = f.next("frame id")?;
        let count: usize = f.next("hit count")?;
        f.end()?;
        let frame = frames
            .iter()
            .find(|fr| fr.id == id)
            .ok_or_else(|| Error::parse(n, format!("no frame with id {id}")))?;
        let mut hits: Vec<Hit> = Vec::with_capacity(count);
        for _ in 0..count {
            let (n, l) = lines
                .next()
                .ok_or_else(|| Error::parse(n, format!("observation {id} ends early")))?;
            let mut f = Fields::new(n, l);
            f.keyword("hit")?;
            let cell: usize = f.next("cell")?;
            if cell >= frame.grid.len() || hits.last().is_some_and(|h| h.cell >= cell) {
                return Err(Error::parse(
                    n,
                    format!("cell {cell} out of range or order"),
                ));
            }
            let landmark = f.next("landmark")?;
            let label = f.next("label")?;
            let outlier = match f.next::<u8>("outlier flag")? {
                0 => false,
                1 => true,
                _ => return Err(Error::parse(n, "outlier flag must be 0 or 1")),
            };
            let depth_gt = f.finite("depth")?;
            if depth_gt <= 0.0 {
                return Err(Error::parse(n, "depth must be positive"));
            }
            let global_gt = f.vector("global point")?;
            let descriptor = descriptor(&mut f)?;
            f.end()?;
            hits.push(Hit {
                cell,
                landmark,
                label,
                outlier,
                descriptor,
                depth_gt,
                global_gt,
            });
        }
        out.push(Observation {
            frame: frame.clone(),
            hits,
        });
    }
    Ok(out)
}
