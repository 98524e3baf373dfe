//! Slide-level inputs: tissue segmentation, patch grids, feature files, manifests and a
//! synthetic dataset generator.

mod features;
mod grid;
mod manifest;
mod segment;
mod synth;

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::str::FromStr;

use crate::error::{Error, Result};

pub use features::{read_features, write_features, FeatureSet};
pub use grid::{
    build_patch_grid, native_patch_size, write_grid_csv, write_grid_file, PatchEntry, PatchGrid,
};
pub use manifest::{read_manifest, write_manifest, SlideRecord, MANIFEST_HEADER};
pub use segment::{read_mask_pgm, read_ppm, segment_tissue, write_mask_pgm, Mask};
pub use features::{format_features, parse_features};
pub use synth::{class_mean, synth_dataset, synth_slides, SynthConfig, SynthOutput, SynthSlide};

pub const NUM_CLASSES: usize = 5;
pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["HGSC", "EC", "CCC", "LGSC", "MC"];

/// Apparent magnification such as 5, 10 or 20. Totally ordered by value.
#[derive(Debug, Clone, Copy)]
pub struct Magnification(f64);

impl Magnification {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value > 0.0 {
            Ok(Magnification(value))
        } else {
            Err(Error::invalid("magnification", format!("{value} is not positive")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Whether `other` is exactly twice this magnification.
    pub fn is_half_of(self, other: Magnification) -> bool {
        (other.0 - 2.0 * self.0).abs() <= 1e-9 * other.0
    }
}

impl PartialEq for Magnification {
    fn eq(&self, other: &Self) -> bool {
        self.0.total_cmp(&other.0) == Ordering::Equal
    }
}

impl Eq for Magnification {}

impl PartialOrd for Magnification {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Magnification {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl Hash for Magnification {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.0.to_bits().hash(state);
    }
}

impl fmt::Display for Magnification {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl FromStr for Magnification {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let trimmed = s.trim().trim_end_matches(['x', 'X']);
        let v: f64 = trimmed
            .parse()
            .map_err(|_| Error::parse("magnification", format!("'{s}' is not a number")))?;
        Magnification::new(v)
    }
}
