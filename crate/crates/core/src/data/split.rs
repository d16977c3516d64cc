use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::MultiViewDataset;
use crate::error::{Error, Result};
use crate::eval::openness;

/// Fractions of each known class assigned to training and validation; the
/// remainder goes to the known test set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitRatios {
    pub train: f64,
    pub val: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self { train: 0.1, val: 0.1 }
    }
}

/// Sample indices of an open-set experiment. The same layout is stored as
/// `split.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OpenSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test_known: Vec<usize>,
    pub test_unknown: Vec<usize>,
    pub known_class_ids: Vec<usize>,
    pub openness: f64,
}

impl OpenSplit {
    /// Test indices, known first.
    pub fn test(&self) -> Vec<usize> {
        self.test_known.iter().chain(&self.test_unknown).copied().collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Stratified split of the known classes; every sample of any other class is
/// an unknown test sample. Each known class contributes
/// `max(1, floor(ratio * n))` samples to training and to validation.
pub fn open_split(
    dataset: &MultiViewDataset,
    known_class_ids: &[usize],
    ratios: SplitRatios,
    seed: u64,
) -> Result<OpenSplit> {
    let known: BTreeSet<usize> = known_class_ids.iter().copied().collect();
    if known.is_empty() {
        return Err(Error::domain("no known classes given"));
    }
    if let Some(&bad) = known.iter().find(|&&c| c >= dataset.class_count) {
        return Err(Error::domain(format!("known class {bad} does not exist")));
    }
    if !(ratios.train > 0.0 && ratios.val >= 0.0 && ratios.train + ratios.val < 1.0) {
        return Err(Error::domain("split ratios must be positive and sum below 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = OpenSplit {
        train: Vec::new(),
        val: Vec::new(),
        test_known: Vec::new(),
        test_unknown: Vec::new(),
        known_class_ids: known.iter().copied().collect(),
        openness: 0.0,
    };
    for &c in &known {
        let mut idx: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.labels[i] == c).collect();
        if idx.len() < 3 {
            return Err(Error::domain(format!(
                "known class {c} has {} samples, at least 3 are needed",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        let n = idx.len() as f64;
        let n_train = ((ratios.train * n).floor() as usize).max(1);
        let n_val = ((ratios.val * n).floor() as usize).max(1);
        split.train.extend_from_slice(&idx[..n_train]);
        split.val.extend_from_slice(&idx[n_train..n_train + n_val]);
        split.test_known.extend_from_slice(&idx[n_train + n_val..]);
    }
    split.test_unknown = (0..dataset.len())
        .filter(|&i| !known.contains(&dataset.labels[i]))
        .collect();
    let unknown_classes: BTreeSet<usize> = split.test_unknown.iter().map(|&i| dataset.labels[i]).collect();
    split.openness = openness(known.len(), unknown_classes.len())?;
    for list in [&mut split.train, &mut split.val, &mut split.test_known] {
        list.sort_unstable();
    }
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn labelled(counts: &[usize]) -> MultiViewDataset {
        let labels: Vec<usize> = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
            .collect();
        let x = Array2::zeros((labels.len(), 1));
        MultiViewDataset::new("t", vec![x], labels, counts.len()).unwrap()
    }

    #[test]
    fn all_known_is_closed() {
        let d = labelled(&[30, 30]);
        let s = open_split(&d, &[0, 1], SplitRatios::default(), 1).unwrap();
        assert!(s.test_unknown.is_empty());
        assert_eq!(s.openness, 0.0);
        assert_eq!((s.train.len(), s.val.len(), s.test_known.len()), (6, 6, 48));
    }

    #[test]
    fn realized_openness() {
        let d = labelled(&[10; 15]);
        let known: Vec<usize> = (0..10).collect();
        let s = open_split(&d, &known, SplitRatios::default(), 2).unwrap();
        assert!((s.openness - (1.0 - 0.8_f64.sqrt())).abs() < 1e-15);
        assert_eq!(s.test_unknown.len(), 50);
    }

    #[test]
    fn tiny_class_rejected() {
        let d = labelled(&[10, 2]);
        assert!(open_split(&d, &[0, 1], SplitRatios::default(), 0).is_err());
        assert!(open_split(&d, &[0], SplitRatios::default(), 0).is_ok());
        assert!(open_split(&d, &[], SplitRatios::default(), 0).is_err());
    }

    #[test]
    fn json_round_trip() {
        let d = labelled(&[12, 12, 5]);
        let s = open_split(&d, &[0, 1], SplitRatios::default(), 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("split.json");
        s.save(&p).unwrap();
        assert_eq!(OpenSplit::load(&p).unwrap(), s);
    }
}
