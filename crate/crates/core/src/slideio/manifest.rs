use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Magnification, NUM_CLASSES};
use crate::error::{Error, Result};

pub const MANIFEST_HEADER: &str =
    "slide_id,patient_id,label,native_mag,feature_path_5x,feature_path_10x,feature_path_20x";

const MANIFEST_MAGS: [f64; 3] = [5.0, 10.0, 20.0];

#[derive(Debug, Clone, PartialEq)]
pub struct SlideRecord {
    pub slide_id: String,
    pub patient_id: String,
    pub label: usize,
    pub native_mag: f64,
    /// Feature file per magnification. Relative paths are resolved against the
    /// manifest's directory when read.
    pub feature_paths: BTreeMap<Magnification, PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    slide_id: String,
    patient_id: String,
    label: usize,
    native_mag: f64,
    feature_path_5x: String,
    feature_path_10x: String,
    feature_path_20x: String,
}

fn validate(rec: &SlideRecord, context: &str) -> Result<()> {
    if rec.label >= NUM_CLASSES {
        return Err(Error::parse(
            context,
            format!("slide {}: label {} outside 0..{NUM_CLASSES}", rec.slide_id, rec.label),
        ));
    }
    if !(rec.native_mag > 0.0) {
        return Err(Error::parse(
            context,
            format!("slide {}: native_mag {} <= 0", rec.slide_id, rec.native_mag),
        ));
    }
    Ok(())
}

/// Reads a manifest CSV; the header must match [`MANIFEST_HEADER`] exactly.
pub fn read_manifest(path: &Path) -> Result<Vec<SlideRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let context = path.display().to_string();
    let base = path.parent().unwrap_or_else(|| Path::new(""));
    let first = text.lines().next().unwrap_or("");
    if first.trim_end_matches('\r') != MANIFEST_HEADER {
        return Err(Error::parse(&context, format!("malformed header '{first}'")));
    }
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    let mut seen = std::collections::BTreeSet::new();
    for row in reader.deserialize::<Row>() {
        let row = row.map_err(|e| Error::parse(&context, e.to_string()))?;
        let mut feature_paths = BTreeMap::new();
        for (mag, p) in MANIFEST_MAGS.iter().zip([
            &row.feature_path_5x,
            &row.feature_path_10x,
            &row.feature_path_20x,
        ]) {
            if !p.is_empty() {
                feature_paths.insert(Magnification::new(*mag)?, base.join(p));
            }
        }
        let rec = SlideRecord {
            slide_id: row.slide_id,
            patient_id: row.patient_id,
            label: row.label,
            native_mag: row.native_mag,
            feature_paths,
        };
        validate(&rec, &context)?;
        if !seen.insert(rec.slide_id.clone()) {
            return Err(Error::DuplicateKey {
                context: context.clone(),
                key: rec.slide_id,
            });
        }
        out.push(rec);
    }
    Ok(out)
}

/// Writes a manifest; feature paths are written as given (callers pass paths relative
/// to the manifest's directory).
pub fn write_manifest(path: &Path, records: &[SlideRecord]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for rec in records {
        validate(rec, &path.display().to_string())?;
        let mut cols = [String::new(), String::new(), String::new()];
        for (mag, p) in &rec.feature_paths {
            let slot = MANIFEST_MAGS
                .iter()
                .position(|m| Magnification::new(*m).map(|m| m == *mag).unwrap_or(false))
                .ok_or_else(|| {
                    Error::invalid(
                        "manifest",
                        format!("magnification {mag}x has no manifest column"),
                    )
                })?;
            cols[slot] = p.to_string_lossy().into_owned();
        }
        let [c5, c10, c20] = cols;
        writer
            .serialize(Row {
                slide_id: rec.slide_id.clone(),
                patient_id: rec.patient_id.clone(),
                label: rec.label,
                native_mag: rec.native_mag,
                feature_path_5x: c5,
                feature_path_10x: c10,
                feature_path_20x: c20,
            })
            .map_err(|e| Error::parse("manifest", e.to_string()))?;
    }
    let mut bytes = writer
        .into_inner()
        .map_err(|e| Error::parse("manifest", e.to_string()))?;
    if records.is_empty() {
        bytes = format!("{MANIFEST_HEADER}\n").into_bytes();
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}
