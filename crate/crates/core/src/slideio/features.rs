use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::Magnification;
use crate::error::{Error, Result};

/// Patch feature vectors of one slide at one magnification, keyed by `(row, col)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub magnification: Magnification,
    pub dim: usize,
    pub rows: BTreeMap<(u32, u32), Vec<f64>>,
}

impl FeatureSet {
    pub fn new(magnification: Magnification, dim: usize) -> Self {
        FeatureSet {
            magnification,
            dim,
            rows: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, row: u32, col: u32, features: Vec<f64>) -> Result<()> {
        if features.len() != self.dim {
            return Err(Error::shape(
                "FeatureSet::insert",
                format!("vector of length {} in a {}-dim set", features.len(), self.dim),
            ));
        }
        if self.rows.insert((row, col), features).is_some() {
            return Err(Error::DuplicateKey {
                context: "feature set".into(),
                key: format!("({}, {row}, {col})", self.magnification),
            });
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn cells(&self) -> Vec<(u32, u32)> {
        self.rows.keys().copied().collect()
    }

    /// Keeps only the given cells.
    pub fn retain_cells(&self, keep: &std::collections::BTreeSet<(u32, u32)>) -> FeatureSet {
        FeatureSet {
            magnification: self.magnification,
            dim: self.dim,
            rows: self
                .rows
                .iter()
                .filter(|(k, _)| keep.contains(k))
                .map(|(k, v)| (*k, v.clone()))
                .collect(),
        }
    }
}

fn header(dim: usize) -> String {
    let mut h = String::from("mag,row,col");
    for i in 0..dim {
        let _ = write!(h, ",f{i}");
    }
    h
}

/// Serializes as CSV `mag,row,col,f0,...`, rows ascending by `(row, col)`, floats in
/// shortest round-trip form.
pub fn format_features(fs: &FeatureSet) -> String {
    let mut out = header(fs.dim);
    out.push('\n');
    for (&(r, c), v) in &fs.rows {
        let _ = write!(out, "{},{r},{c}", fs.magnification);
        for x in v {
            let _ = write!(out, ",{x}");
        }
        out.push('\n');
    }
    out
}

pub fn write_features(path: &Path, fs: &FeatureSet) -> Result<()> {
    std::fs::write(path, format_features(fs)).map_err(|e| Error::io(path, e))
}

/// Parses a feature file; every row's `mag` must equal `magnification`.
pub fn parse_features(text: &str, magnification: Magnification, context: &str) -> Result<FeatureSet> {
    let mut lines = text.lines();
    let head = lines
        .next()
        .ok_or_else(|| Error::parse(context, "missing header"))?;
    let cols: Vec<&str> = head.split(',').collect();
    if cols.len() < 3 || cols[..3] != ["mag", "row", "col"] {
        return Err(Error::parse(context, format!("malformed header '{head}'")));
    }
    let dim = cols.len() - 3;
    if head != header(dim) {
        return Err(Error::parse(context, format!("malformed header '{head}'")));
    }
    let mut fs = FeatureSet::new(magnification, dim);
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let at = || format!("{context} line {}", lineno + 2);
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != dim + 3 {
            return Err(Error::parse(
                at(),
                format!("expected {} values, found {}", dim + 3, fields.len()),
            ));
        }
        let mag: Magnification = fields[0].parse().map_err(|_| {
            Error::parse(at(), format!("bad magnification '{}'", fields[0]))
        })?;
        if mag != magnification {
            return Err(Error::parse(
                at(),
                format!("magnification {mag} in a {magnification}x file"),
            ));
        }
        let row: u32 = fields[1]
            .parse()
            .map_err(|_| Error::parse(at(), format!("bad row '{}'", fields[1])))?;
        let col: u32 = fields[2]
            .parse()
            .map_err(|_| Error::parse(at(), format!("bad col '{}'", fields[2])))?;
        let values = fields[3..]
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| Error::parse(at(), format!("bad value '{s}'")))
            })
            .collect::<Result<Vec<f64>>>()?;
        if fs.rows.insert((row, col), values).is_some() {
            return Err(Error::DuplicateKey {
                context: context.to_string(),
                key: format!("({mag}, {row}, {col})"),
            });
        }
    }
    Ok(fs)
}

pub fn read_features(path: &Path, magnification: Magnification) -> Result<FeatureSet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_features(&text, magnification, &path.display().to_string())
}
