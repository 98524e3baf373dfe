//! Synthetic slides standing in for extracted patch features.
//!
//! Each slide is a full `rows × cols` lattice at the lowest magnification plus, for a
//! second magnification, the aligned lattice of `2·rows × 2·cols` children. Every
//! feature is `mean + noise_sd · N(0, 1)` per component. The mean is zero except inside
//! one contiguous rectangle of `ceil(rows/2) × ceil(cols/2)` low-magnification cells (and
//! their children), placed uniformly at random per slide, where it is the class mean
//!
//! ```text
//! class_mean(c, k) = (separation / √2) · e_{(c + 5k) mod dim}
//! ```
//!
//! for class `c` and magnification index `k` (0 = lowest). Distinct class means at one
//! magnification are therefore exactly `separation` apart (in units of `noise_sd` when
//! `noise_sd = 1`).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use super::features::{write_features, FeatureSet};
use super::manifest::{write_manifest, SlideRecord};
use super::{Magnification, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::numkit::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub n_patients: usize,
    pub slides_per_patient: usize,
    /// A single magnification or a doubling pair such as `[5, 10]`.
    pub mags: Vec<Magnification>,
    pub dim: usize,
    /// Extent of the lowest-magnification lattice.
    pub grid_rows: u32,
    pub grid_cols: u32,
    pub separation: f64,
    pub noise_sd: f64,
    pub native_mag: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_patients: 30,
            slides_per_patient: 1,
            mags: vec![
                Magnification::new(5.0).expect("positive"),
                Magnification::new(10.0).expect("positive"),
            ],
            dim: 16,
            grid_rows: 4,
            grid_cols: 4,
            separation: 4.0,
            noise_sd: 1.0,
            native_mag: 40.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub manifest_path: PathBuf,
    pub records: Vec<SlideRecord>,
}

pub fn class_mean(class: usize, mag_index: usize, dim: usize, separation: f64) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[(class + NUM_CLASSES * mag_index) % dim] = separation / std::f64::consts::SQRT_2;
    v
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        match self.mags.as_slice() {
            [_] => {}
            [lo, hi] if lo.is_half_of(*hi) => {}
            other => {
                return Err(Error::invalid(
                    "synthetic magnifications",
                    format!("{other:?} is neither one magnification nor a doubling pair"),
                ))
            }
        }
        if self.dim < NUM_CLASSES {
            return Err(Error::invalid(
                "synthetic dim",
                format!("{} < {NUM_CLASSES} classes", self.dim),
            ));
        }
        if self.n_patients == 0 || self.slides_per_patient == 0 {
            return Err(Error::invalid("synthetic size", "no slides requested"));
        }
        if self.grid_rows == 0 || self.grid_cols == 0 {
            return Err(Error::invalid("synthetic grid", "empty lattice"));
        }
        if self.mags.iter().any(|m| m.value() > self.native_mag) {
            return Err(Error::invalid(
                "synthetic magnifications",
                format!("exceed native {}x", self.native_mag),
            ));
        }
        Ok(())
    }
}

/// In-memory slide: label plus one feature set per magnification.
#[derive(Debug, Clone)]
pub struct SynthSlide {
    pub label: usize,
    pub features: Vec<FeatureSet>,
}

fn synth_slide(cfg: &SynthConfig, label: usize, rng: &mut Rng) -> Result<SynthSlide> {
    let region_rows = cfg.grid_rows.div_ceil(2);
    let region_cols = cfg.grid_cols.div_ceil(2);
    let top = rng.below((cfg.grid_rows - region_rows + 1) as usize) as u32;
    let left = rng.below((cfg.grid_cols - region_cols + 1) as usize) as u32;
    let in_region = |r: u32, c: u32| {
        (top..top + region_rows).contains(&r) && (left..left + region_cols).contains(&c)
    };

    let mut features = Vec::with_capacity(cfg.mags.len());
    for (k, &mag) in cfg.mags.iter().enumerate() {
        let scale = 1u32 << k;
        let mean = class_mean(label, k, cfg.dim, cfg.separation);
        let mut fs = FeatureSet::new(mag, cfg.dim);
        for r in 0..cfg.grid_rows * scale {
            for c in 0..cfg.grid_cols * scale {
                let signal = in_region(r / scale, c / scale);
                let v = (0..cfg.dim)
                    .map(|j| {
                        let mu = if signal { mean[j] } else { 0.0 };
                        mu + cfg.noise_sd * rng.normal()
                    })
                    .collect();
                fs.insert(r, c, v)?;
            }
        }
        features.push(fs);
    }
    Ok(SynthSlide { label, features })
}

/// Generates slides in memory. Patient `p` has class `p mod 5`.
pub fn synth_slides(cfg: &SynthConfig) -> Result<Vec<(String, String, SynthSlide)>> {
    cfg.validate()?;
    let mut rng = Rng::substream(cfg.seed, "synth");
    let mut out = Vec::new();
    for p in 0..cfg.n_patients {
        let label = p % NUM_CLASSES;
        let patient = format!("P{p:03}");
        for s in 0..cfg.slides_per_patient {
            let slide = synth_slide(cfg, label, &mut rng)?;
            out.push((format!("{patient}-S{s}"), patient.clone(), slide));
        }
    }
    Ok(out)
}

/// Writes `manifest.csv` and `features/<slide>_<mag>x.csv` under `out_dir`.
pub fn synth_dataset(cfg: &SynthConfig, out_dir: &Path) -> Result<SynthOutput> {
    let slides = synth_slides(cfg)?;
    let feat_dir = out_dir.join("features");
    std::fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    let mut records = Vec::with_capacity(slides.len());
    for (slide_id, patient_id, slide) in slides {
        let mut feature_paths = BTreeMap::new();
        for fs in &slide.features {
            let rel = PathBuf::from("features").join(format!("{slide_id}_{}x.csv", fs.magnification));
            write_features(&out_dir.join(&rel), fs)?;
            feature_paths.insert(fs.magnification, rel);
        }
        records.push(SlideRecord {
            slide_id,
            patient_id,
            label: slide.label,
            native_mag: cfg.native_mag,
            feature_paths,
        });
    }
    let manifest_path = out_dir.join("manifest.csv");
    write_manifest(&manifest_path, &records)?;
    Ok(SynthOutput {
        manifest_path,
        records,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_means_are_separation_apart() {
        for k in 0..2 {
            for a in 0..5 {
                for b in 0..a {
                    let ma = class_mean(a, k, 16, 4.0);
                    let mb = class_mean(b, k, 16, 4.0);
                    let d: f64 = ma.iter().zip(&mb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                    assert!((d - 4.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn balanced_labels_and_high_mag_extent() {
        let cfg = SynthConfig {
            grid_rows: 3,
            grid_cols: 5,
            ..SynthConfig::default()
        };
        let slides = synth_slides(&cfg).unwrap();
        assert_eq!(slides.len(), 30);
        let mut counts = [0; 5];
        for (_, _, s) in &slides {
            counts[s.label] += 1;
            let (lo, hi) = (&s.features[0], &s.features[1]);
            let lo_max = lo.cells().into_iter().fold((0, 0), |a, (r, c)| (a.0.max(r), a.1.max(c)));
            let hi_max = hi.cells().into_iter().fold((0, 0), |a, (r, c)| (a.0.max(r), a.1.max(c)));
            assert_eq!((lo_max.0 + 1, lo_max.1 + 1), (3, 5));
            assert_eq!((hi_max.0 + 1, hi_max.1 + 1), (6, 10));
            assert_eq!(hi.len(), 4 * lo.len());
        }
        assert_eq!(counts, [6; 5]);
    }

    #[test]
    fn invalid_magnification_pairs() {
        let m = |v: f64| Magnification::new(v).unwrap();
        let cfg = SynthConfig {
            mags: vec![m(5.0), m(20.0)],
            ..SynthConfig::default()
        };
        assert!(synth_slides(&cfg).is_err());
        let cfg = SynthConfig {
            mags: vec![m(10.0)],
            ..SynthConfig::default()
        };
        assert_eq!(synth_slides(&cfg).unwrap()[0].2.features.len(), 1);
    }
}
