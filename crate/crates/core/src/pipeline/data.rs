use crate::error::{Error, Result};
use crate::slideio::{read_features, FeatureSet, Magnification, SlideRecord, SynthSlide};

/// A labelled slide with its feature sets loaded, ascending by magnification.
#[derive(Debug, Clone)]
pub struct Slide {
    pub slide_id: String,
    pub patient_id: String,
    pub label: usize,
    pub features: Vec<FeatureSet>,
}

impl Slide {
    pub fn from_synth(slide_id: String, patient_id: String, synth: SynthSlide) -> Self {
        Slide {
            slide_id,
            patient_id,
            label: synth.label,
            features: synth.features,
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.features.first().map_or(0, |f| f.dim)
    }

    /// Keeps only the requested magnifications, in ascending order.
    pub fn restricted(&self, mags: &[Magnification]) -> Result<Slide> {
        let features = mags
            .iter()
            .map(|m| {
                self.features
                    .iter()
                    .find(|f| f.magnification == *m)
                    .cloned()
                    .ok_or_else(|| {
                        Error::invalid("slide", format!("{} has no {m}x features", self.slide_id))
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Slide { features, ..self.clone() })
    }
}

/// Reads the feature files of `mags` for every record. All slides must share one
/// feature width.
pub fn load_slides(records: &[SlideRecord], mags: &[Magnification]) -> Result<Vec<Slide>> {
    let mut slides = Vec::with_capacity(records.len());
    let mut dim: Option<usize> = None;
    for rec in records {
        let mut features = Vec::with_capacity(mags.len());
        for &m in mags {
            let path = rec.feature_paths.get(&m).ok_or_else(|| {
                Error::invalid("manifest", format!("slide {} has no {m}x feature path", rec.slide_id))
            })?;
            let fs = read_features(path, m)?;
            match dim {
                None => dim = Some(fs.dim),
                Some(d) if d != fs.dim => {
                    return Err(Error::invalid(
                        "features",
                        format!("{}: width {} but earlier slides have {d}", path.display(), fs.dim),
                    ))
                }
                _ => {}
            }
            features.push(fs);
        }
        if features.iter().all(FeatureSet::is_empty) {
            return Err(Error::EmptySlide(rec.slide_id.clone()));
        }
        slides.push(Slide {
            slide_id: rec.slide_id.clone(),
            patient_id: rec.patient_id.clone(),
            label: rec.label,
            features,
        });
    }
    Ok(slides)
}
