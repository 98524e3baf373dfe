use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numkit::{ParamId, Rng, Tape, Tensor, Var};

/// Named trainable tensors in creation order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    /// `rows × cols` weight, uniform in `±1/√fan_in` with `fan_in = rows`.
    pub fn add_weight(&mut self, name: impl Into<String>, rows: usize, cols: usize, rng: &mut Rng) -> ParamId {
        let bound = 1.0 / (rows as f64).sqrt();
        let data = (0..rows * cols).map(|_| rng.uniform_in(-bound, bound)).collect();
        self.add(name, Tensor::matrix(rows, cols, data).expect("sized"))
    }

    pub fn add_bias(&mut self, name: impl Into<String>, len: usize) -> ParamId {
        self.add(name, Tensor::zeros(&[1, len]))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn set(&mut self, id: ParamId, value: Tensor) -> Result<()> {
        let cur = &self.tensors[id.0];
        if cur.shape() != value.shape() {
            return Err(Error::shape(
                "ParamStore::set",
                format!("{}: {:?} vs {:?}", self.names[id.0], cur.shape(), value.shape()),
            ));
        }
        self.tensors[id.0] = value;
        Ok(())
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Records every parameter on `tape`; the result is indexed by `ParamId`.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors
            .iter()
            .enumerate()
            .map(|(i, t)| tape.param(ParamId(i), t))
            .collect()
    }

    /// Replaces every tensor with the same-named, same-shaped entry from `entries`.
    pub fn load(&mut self, entries: &[(String, Tensor)]) -> Result<()> {
        if entries.len() != self.len() {
            return Err(Error::invalid(
                "checkpoint",
                format!("{} tensors, model expects {}", entries.len(), self.len()),
            ));
        }
        for (i, (name, t)) in entries.iter().enumerate() {
            if name != &self.names[i] || t.shape() != self.tensors[i].shape() {
                return Err(Error::invalid(
                    "checkpoint",
                    format!(
                        "entry {i} is {name} {:?}, model expects {} {:?}",
                        t.shape(),
                        self.names[i],
                        self.tensors[i].shape()
                    ),
                ));
            }
        }
        for (dst, (_, t)) in self.tensors.iter_mut().zip(entries) {
            *dst = t.clone();
        }
        Ok(())
    }
}

/// Checkpoint text: header `name,rows,cols,values`, then one line per tensor
/// `name,rows,cols,v0,v1,...` (row-major, shortest round-trip decimals), in
/// parameter-creation order.
pub fn format_checkpoint(store: &ParamStore) -> String {
    let mut out = String::from("name,rows,cols,values\n");
    for (name, t) in store.names().iter().zip(store.tensors()) {
        let _ = write!(out, "{name},{},{}", t.rows(), t.cols());
        for v in t.data() {
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

pub fn parse_checkpoint(text: &str, context: &str) -> Result<Vec<(String, Tensor)>> {
    let mut lines = text.lines();
    if lines.next() != Some("name,rows,cols,values") {
        return Err(Error::parse(context, "malformed checkpoint header"));
    }
    let mut out = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let at = || format!("{context} line {}", i + 2);
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 3 {
            return Err(Error::parse(at(), "truncated tensor record"));
        }
        let rows: usize = fields[1].parse().map_err(|_| Error::parse(at(), "bad rows"))?;
        let cols: usize = fields[2].parse().map_err(|_| Error::parse(at(), "bad cols"))?;
        let data = fields[3..]
            .iter()
            .map(|s| s.parse::<f64>().map_err(|_| Error::parse(at(), format!("bad value '{s}'"))))
            .collect::<Result<Vec<f64>>>()?;
        let t = Tensor::matrix(rows, cols, data).map_err(|e| Error::parse(at(), e.to_string()))?;
        out.push((fields[0].to_string(), t));
    }
    Ok(out)
}

pub fn write_checkpoint(store: &ParamStore, path: &Path) -> Result<()> {
    std::fs::write(path, format_checkpoint(store)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<(String, Tensor)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_checkpoint(&text, &path.display().to_string())
}
