use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use super::data::Slide;
use crate::error::{Error, Result};
use crate::numkit::Rng;
use crate::slideio::NUM_CLASSES;

/// One cross-validation split; patient sets are disjoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FoldSplit {
    pub fold_id: usize,
    pub train_patients: BTreeSet<String>,
    pub val_patients: BTreeSet<String>,
}

impl FoldSplit {
    pub fn train_indices(&self, slides: &[Slide]) -> Vec<usize> {
        (0..slides.len())
            .filter(|&i| self.train_patients.contains(&slides[i].patient_id))
            .collect()
    }

    pub fn val_indices(&self, slides: &[Slide]) -> Vec<usize> {
        (0..slides.len())
            .filter(|&i| self.val_patients.contains(&slides[i].patient_id))
            .collect()
    }
}

/// Most frequent slide label per patient; ties go to the lower class.
pub fn patient_labels<'a>(
    slides: impl IntoIterator<Item = (&'a str, usize)>,
) -> Result<BTreeMap<String, usize>> {
    let mut counts: BTreeMap<String, [usize; NUM_CLASSES]> = BTreeMap::new();
    for (patient, label) in slides {
        if label >= NUM_CLASSES {
            return Err(Error::invalid("label", format!("{label} for patient {patient}")));
        }
        counts.entry(patient.to_string()).or_default()[label] += 1;
    }
    Ok(counts
        .into_iter()
        .map(|(p, c)| {
            let best = (0..NUM_CLASSES).fold(0, |b, k| if c[k] > c[b] { k } else { b });
            (p, best)
        })
        .collect())
}

/// Patient-level stratified k-fold split.
///
/// Patients are grouped by modal label; each class's patients are shuffled and dealt
/// round-robin, with the dealing position carried from one class to the next so fold
/// sizes differ by at most one.
pub fn make_folds(slides: &[Slide], k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    make_folds_from(
        slides.iter().map(|s| (s.patient_id.as_str(), s.label)),
        k,
        seed,
    )
}

pub fn make_folds_from<'a>(
    slides: impl IntoIterator<Item = (&'a str, usize)>,
    k: usize,
    seed: u64,
) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(Error::invalid("folds", format!("k = {k}; need at least 2")));
    }
    let labels = patient_labels(slides)?;
    let mut by_class: Vec<Vec<String>> = vec![Vec::new(); NUM_CLASSES];
    for (p, c) in labels {
        by_class[c].push(p);
    }
    for (c, patients) in by_class.iter().enumerate() {
        if patients.len() < k {
            return Err(Error::invalid(
                "folds",
                format!("class {c} has {} patients, fewer than k = {k}", patients.len()),
            ));
        }
    }
    let mut rng = Rng::substream(seed, "folds");
    let mut val: Vec<BTreeSet<String>> = vec![BTreeSet::new(); k];
    let mut next = 0usize;
    for mut patients in by_class {
        rng.shuffle(&mut patients);
        for p in patients {
            val[next % k].insert(p);
            next += 1;
        }
    }
    let all: BTreeSet<String> = val.iter().flatten().cloned().collect();
    Ok(val
        .into_iter()
        .enumerate()
        .map(|(fold_id, val_patients)| FoldSplit {
            fold_id,
            train_patients: all.difference(&val_patients).cloned().collect(),
            val_patients,
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn patients(n: usize) -> Vec<(String, usize)> {
        (0..n).map(|p| (format!("P{p:03}"), p % NUM_CLASSES)).collect()
    }

    fn folds(list: &[(String, usize)], k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
        make_folds_from(list.iter().map(|(p, c)| (p.as_str(), *c)), k, seed)
    }

    #[test]
    fn fifty_patients_five_folds() {
        let list = patients(50);
        let f = folds(&list, 5, 7).unwrap();
        for split in &f {
            assert_eq!(split.val_patients.len(), 10);
            let mut per_class = [0; NUM_CLASSES];
            for p in &split.val_patients {
                per_class[list.iter().find(|(q, _)| q == p).unwrap().1] += 1;
            }
            assert_eq!(per_class, [2; NUM_CLASSES]);
        }
    }

    #[test]
    fn too_few_patients_in_a_class() {
        let list = patients(14);
        assert!(folds(&list, 3, 0).is_err());
        assert!(folds(&list, 2, 0).is_ok());
    }

    #[test]
    fn modal_label_ties_go_low() {
        let l = patient_labels([("a", 3), ("a", 1), ("b", 2), ("b", 2), ("b", 0)]).unwrap();
        assert_eq!(l["a"], 1);
        assert_eq!(l["b"], 2);
    }

    proptest! {
        #[test]
        fn splits_partition_patients(n in 10usize..60, k in 2usize..5, seed in any::<u64>()) {
            let list = patients(n);
            prop_assume!(n / NUM_CLASSES >= k);
            let f = folds(&list, k, seed).unwrap();
            let all: BTreeSet<String> = list.iter().map(|(p, _)| p.clone()).collect();
            let mut seen = BTreeSet::new();
            let sizes: Vec<usize> = f.iter().map(|s| s.val_patients.len()).collect();
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            for s in &f {
                prop_assert!(s.train_patients.is_disjoint(&s.val_patients));
                let union: BTreeSet<String> = s.train_patients.union(&s.val_patients).cloned().collect();
                prop_assert_eq!(&union, &all);
                for p in &s.val_patients {
                    prop_assert!(seen.insert(p.clone()));
                }
            }
            prop_assert_eq!(seen, all);
            prop_assert_eq!(f, folds(&list, k, seed).unwrap());
        }
    }
}
