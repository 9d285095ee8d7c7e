use std::collections::BTreeSet;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::capsnet::Architecture;
use crate::data::{subsample_per_class, LabeledImageSet};
use crate::error::{Error, Result};

/// One leave-classes-out run: the listed classes are held out of training and
/// become the anomalies of a balanced test set.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub dataset: String,
    pub anomalous: BTreeSet<usize>,
    pub seed: u64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Per-class cap on the training images.
    pub train_cap: Option<usize>,
    /// Scorer ids, see [`crate::scoring::find_scorer`].
    pub scorers: Vec<String>,
    pub arch: Architecture,
}

impl ExperimentSpec {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if self.anomalous.is_empty() {
            return Err(Error::Config("at least one anomalous class is required".into()));
        }
        if let Some(&c) = self.anomalous.iter().find(|&&c| c >= num_classes) {
            return Err(Error::Config(format!("anomalous class {c} outside 0..{num_classes}")));
        }
        if self.anomalous.len() >= num_classes {
            return Err(Error::Config(
                "anomalous classes cover every class; nothing is left to train on".into(),
            ));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.train_cap == Some(0) {
            return Err(Error::Config("training cap must be at least 1".into()));
        }
        if self.scorers.is_empty() {
            return Err(Error::Config("no score functions requested".into()));
        }
        Ok(())
    }

    pub fn normal_classes(&self, num_classes: usize) -> Vec<usize> {
        (0..num_classes).filter(|c| !self.anomalous.contains(c)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Splits {
    /// Normal-class training images, labels remapped to `0..C`.
    pub train: LabeledImageSet,
    /// Balanced test images with their original labels.
    pub test: LabeledImageSet,
    pub is_anomaly: Vec<bool>,
    /// Position of each test sample in the source test split.
    pub test_ids: Vec<usize>,
    /// `class_map[original] = Some(remapped)` for normal classes.
    pub class_map: Vec<Option<usize>>,
}

const BALANCE_STREAM: u64 = u64::MAX;

/// Training images of the classes not in `anomalous`, relabelled `0..C` in
/// class order and optionally capped per class. Returns the set and the
/// `original -> remapped` class table.
pub fn normal_training_set(
    train: &LabeledImageSet,
    anomalous: &BTreeSet<usize>,
    cap: Option<usize>,
    seed: u64,
) -> Result<(LabeledImageSet, Vec<Option<usize>>)> {
    let classes = train.num_classes;
    let mut class_map = vec![None; classes];
    for (new, old) in (0..classes).filter(|c| !anomalous.contains(c)).enumerate() {
        class_map[old] = Some(new);
    }
    let normal_count = class_map.iter().flatten().count();
    if normal_count == 0 {
        return Err(Error::Config(
            "anomalous classes cover every class; nothing is left to train on".into(),
        ));
    }
    let keep: Vec<usize> = (0..train.len())
        .filter(|&i| class_map[train.labels[i]].is_some())
        .collect();
    let mut set = train.select(&keep);
    set.labels
        .iter_mut()
        .for_each(|l| *l = class_map[*l].expect("normal class"));
    set.num_classes = normal_count;
    if let Some(cap) = cap {
        set = subsample_per_class(&set, cap, seed)?;
    }
    Ok((set, class_map))
}

pub fn build_splits(train: &LabeledImageSet, test: &LabeledImageSet, spec: &ExperimentSpec) -> Result<Splits> {
    spec.validate(train.num_classes)?;
    let (train_set, class_map) = normal_training_set(train, &spec.anomalous, spec.train_cap, spec.seed)?;

    let (anomalies, normals): (Vec<usize>, Vec<usize>) =
        (0..test.len()).partition(|&i| spec.anomalous.contains(&test.labels[i]));
    if anomalies.is_empty() || normals.is_empty() {
        return Err(Error::Contract(format!(
            "test split has {} normal and {} anomalous samples; both are needed",
            normals.len(),
            anomalies.len()
        )));
    }
    let (small, large) = if normals.len() <= anomalies.len() {
        (normals, anomalies)
    } else {
        (anomalies, normals)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(BALANCE_STREAM);
    let mut test_ids: Vec<usize> = index::sample(&mut rng, large.len(), small.len())
        .into_iter()
        .map(|j| large[j])
        .collect();
    test_ids.extend_from_slice(&small);
    test_ids.sort_unstable();

    Ok(Splits {
        train: train_set,
        test: test.select(&test_ids),
        is_anomaly: test_ids
            .iter()
            .map(|&i| spec.anomalous.contains(&test.labels[i]))
            .collect(),
        test_ids,
        class_map,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Split;
    use crate::tensor::Tensor;

    fn set(n: usize, classes: usize, split: Split) -> LabeledImageSet {
        let images = (0..n)
            .map(|i| Tensor::new(vec![1, 1, 1], vec![i as f64]).unwrap())
            .collect();
        LabeledImageSet::new(images, (0..n).map(|i| (i * 7) % classes).collect(), split, "t", classes).unwrap()
    }

    fn spec(anomalous: &[usize]) -> ExperimentSpec {
        ExperimentSpec {
            dataset: "t".into(),
            anomalous: anomalous.iter().copied().collect(),
            seed: 4,
            epochs: 1,
            batch_size: 10,
            train_cap: None,
            scorers: vec!["pp".into()],
            arch: Architecture::Tiny,
        }
    }

    #[test]
    fn single_anomaly_remaps_the_rest() {
        let s = build_splits(&set(200, 10, Split::Train), &set(100, 10, Split::Test), &spec(&[2])).unwrap();
        assert_eq!(s.train.num_classes, 9);
        assert_eq!(s.class_map[2], None);
        assert_eq!(s.class_map[3], Some(2));
        assert_eq!(s.class_map[9], Some(8));
        assert_eq!(s.train.len(), 180);
        assert_eq!(s.is_anomaly.iter().filter(|&&a| a).count(), 10);
        assert_eq!(s.test.len(), 20);
        assert!(s.test_ids.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn nine_of_ten_anomalous_is_legal() {
        let s = build_splits(
            &set(100, 10, Split::Train),
            &set(100, 10, Split::Test),
            &spec(&[1, 2, 3, 4, 5, 6, 7, 8, 9]),
        )
        .unwrap();
        assert_eq!(s.train.num_classes, 1);
        assert!(s.train.labels.iter().all(|&l| l == 0));
        assert_eq!(s.test.len(), 20);
        let all: Vec<usize> = (0..10).collect();
        assert!(matches!(
            build_splits(&set(10, 10, Split::Train), &set(10, 10, Split::Test), &spec(&all)),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            build_splits(&set(10, 10, Split::Train), &set(10, 10, Split::Test), &spec(&[])),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn seeded_and_capped() {
        let mut sp = spec(&[0, 3, 5]);
        sp.train_cap = Some(5);
        let a = build_splits(&set(300, 10, Split::Train), &set(100, 10, Split::Test), &sp).unwrap();
        let b = build_splits(&set(300, 10, Split::Train), &set(100, 10, Split::Test), &sp).unwrap();
        assert_eq!(a.test_ids, b.test_ids);
        assert_eq!(a.train.class_counts(), vec![5; 7]);
        sp.seed = 5;
        let c = build_splits(&set(300, 10, Split::Train), &set(100, 10, Split::Test), &sp).unwrap();
        assert_ne!(a.test_ids, c.test_ids);
    }
}
