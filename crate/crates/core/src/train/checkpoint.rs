//! `KLOC-MODEL v1`: a text header describing the architecture, then every
//! parameter block and its Adam state as 17-significant-digit floats.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use super::adam::AdamState;
use super::model::{Heads, Params, TrainableModel};
use super::{architecture_hash, CameraOutput, TrainMode};
use crate::sim::{Extent, Resolution};
use crate::{Error, Result};

const HEADER: &str = "KLOC-MODEL v1";
const PER_LINE: usize = 8;

fn push_values(out: &mut String, values: &[f64]) {
    for chunk in values.chunks(PER_LINE) {
        let line: Vec<String> = chunk.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
}

pub fn write_checkpoint(model: &TrainableModel) -> String {
    let hash = architecture_hash(
        model.mode,
        model.camera_output,
        model.depth_range,
        model.resolution,
        model.hidden,
    );
    let e = &model.extent;
    let mut out = String::new();
    writeln!(out, "{HEADER}").unwrap();
    writeln!(out, "mode {}", model.mode).unwrap();
    writeln!(out, "camera {}", model.camera_output).unwrap();
    writeln!(
        out,
        "range {:.16e} {:.16e}",
        model.depth_range.0, model.depth_range.1
    )
    .unwrap();
    writeln!(out, "resolution {}", model.resolution).unwrap();
    writeln!(out, "hidden {} {}", model.hidden[0], model.hidden[1]).unwrap();
    let ext: Vec<String> = e
        .min
        .iter()
        .chain(e.max.iter())
        .map(|v| format!("{v:.16e}"))
        .collect();
    writeln!(out, "extent {}", ext.join(" ")).unwrap();
    writeln!(out, "epochs {}", model.epochs_completed).unwrap();
    writeln!(out, "hash {hash}").unwrap();
    let blocks: Vec<(usize, &Vec<f64>)> = match &model.params {
        Params::Direct(m) => m.iter().map(|(k, v)| (*k, v)).collect(),
        Params::Mlp(p) => vec![(0, p)],
    };
    for (key, values) in blocks {
        writeln!(out, "block {key} {}", values.len()).unwrap();
        push_values(&mut out, values);
    }
    for (key, s) in &model.optimizer {
        writeln!(out, "adam {key} {} {}", s.step, s.len()).unwrap();
        push_values(&mut out, &s.m);
        push_values(&mut out, &s.v);
    }
    out
}

struct Tokens<'a> {
    items: Vec<(usize, &'a str)>,
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let items = text
            .lines()
            .enumerate()
            .flat_map(|(i, l)| l.split_whitespace().map(move |t| (i + 1, t)))
            .collect();
        Self { items, pos: 0 }
    }

    fn line(&self) -> usize {
        self.items
            .get(self.pos)
            .or(self.items.last())
            .map_or(0, |t| t.0)
    }

    fn raw(&mut self, what: &str) -> Result<&'a str> {
        let (_, t) = *self.items.get(self.pos).ok_or_else(|| {
            Error::parse(
                self.line(),
                format!("unexpected end of input, expected {what}"),
            )
        })?;
        self.pos += 1;
        Ok(t)
    }

    fn keyword(&mut self, k: &str) -> Result<()> {
        let line = self.line();
        match self.raw(k)? {
            t if t == k => Ok(()),
            t => Err(Error::parse(line, format!("expected `{k}`, found `{t}`"))),
        }
    }

    fn parse<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let line = self.line();
        let t = self.raw(what)?;
        t.parse()
            .map_err(|_| Error::parse(line, format!("bad {what} `{t}`")))
    }

    fn floats(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.parse::<f64>("parameter")).collect()
    }

    fn peek(&self) -> Option<&'a str> {
        self.items.get(self.pos).map(|t| t.1)
    }
}

pub fn read_checkpoint(text: &str) -> Result<TrainableModel> {
    let mut t = Tokens::new(text);
    for part in HEADER.split_whitespace() {
        t.keyword(part)?;
    }
    t.keyword("mode")?;
    let mode: TrainMode = t.parse("mode")?;
    t.keyword("camera")?;
    let camera_output: CameraOutput = t.parse("camera output")?;
    t.keyword("range")?;
    let depth_range = (t.parse("d_min")?, t.parse("d_max")?);
    t.keyword("resolution")?;
    let resolution: Resolution = t.parse("resolution")?;
    t.keyword("hidden")?;
    let hidden = [t.parse("hidden width")?, t.parse("hidden width")?];
    t.keyword("extent")?;
    let e = t.floats(6)?;
    let extent = Extent::new(
        nalgebra::Vector3::new(e[0], e[1], e[2]),
        nalgebra::Vector3::new(e[3], e[4], e[5]),
    )?;
    t.keyword("epochs")?;
    let epochs_completed = t.parse("epoch count")?;
    t.keyword("hash")?;
    let line = t.line();
    let hash: String = t.parse("hash")?;
    if hash != architecture_hash(mode, camera_output, depth_range, resolution, hidden) {
        return Err(Error::parse(
            line,
            "architecture hash does not match the header",
        ));
    }

    let block_len = match mode {
        TrainMode::Direct => resolution.cells() * (camera_output.dim() + 4),
        TrainMode::Mlp => Heads::new(hidden, camera_output.dim()).len(),
    };
    let mut blocks = BTreeMap::new();
    while t.peek() == Some("block") {
        t.keyword("block")?;
        let line = t.line();
        let key: usize = t.parse("block key")?;
        let len: usize = t.parse("block length")?;
        if len != block_len {
            return Err(Error::parse(
                line,
                format!("block of {len} values, architecture needs {block_len}"),
            ));
        }
        if blocks.insert(key, t.floats(len)?).is_some() {
            return Err(Error::parse(line, format!("duplicate block {key}")));
        }
    }
    let params = match mode {
        TrainMode::Direct => Params::Direct(blocks),
        TrainMode::Mlp => match blocks.remove(&0) {
            Some(p) if blocks.is_empty() => Params::Mlp(p),
            _ => {
                return Err(Error::parse(
                    t.line(),
                    "mlp checkpoint needs exactly one block `0`",
                ))
            }
        },
    };
    let mut optimizer = BTreeMap::new();
    while t.peek().is_some() {
        t.keyword("adam")?;
        let line = t.line();
        let key: usize = t.parse("adam key")?;
        let step = t.parse("adam step")?;
        let len: usize = t.parse("adam length")?;
        if len != block_len {
            return Err(Error::parse(
                line,
                "optimizer state does not match the block size",
            ));
        }
        let m = t.floats(len)?;
        let v = t.floats(len)?;
        optimizer.insert(key, AdamState { m, v, step });
    }
    Ok(TrainableModel {
        mode,
        camera_output,
        depth_range,
        resolution,
        hidden,
        extent,
        epochs_completed,
        params,
        optimizer,
    })
}
