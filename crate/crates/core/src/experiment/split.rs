use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::LabeledClip;
use crate::error::{Error, Result};

/// Speaker-level partition fractions. The test share is what remains after
/// train and validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub val_fraction: f64,
    pub seed: u64,
    pub speaker_disjoint: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            val_fraction: 0.1,
            seed: 0,
            speaker_disjoint: true,
        }
    }
}

impl SplitSpec {
    pub fn test_fraction(&self) -> f64 {
        (1.0 - self.train_fraction - self.val_fraction).max(0.0)
    }

    pub fn validate(&self) -> Result<()> {
        let open = |f: f64| f > 0.0 && f < 1.0;
        if !open(self.train_fraction) || !open(self.val_fraction) {
            return Err(Error::Config("split fractions must lie in (0, 1)".into()));
        }
        if self.train_fraction + self.val_fraction > 1.0 + 1e-12 {
            return Err(Error::Config(
                "train and validation fractions sum to more than 1".into(),
            ));
        }
        if !self.speaker_disjoint {
            return Err(Error::Config(
                "only speaker-disjoint splits are supported".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Split {
    pub train: Vec<LabeledClip>,
    pub val: Vec<LabeledClip>,
    pub test: Vec<LabeledClip>,
}

impl Split {
    pub fn partitions(&self) -> [(&'static str, &[LabeledClip]); 3] {
        [
            ("train", &self.train),
            ("val", &self.val),
            ("test", &self.test),
        ]
    }

    pub fn speakers(clips: &[LabeledClip]) -> BTreeSet<&str> {
        clips.iter().map(|c| c.record.speaker_id.as_str()).collect()
    }

    /// Fails if any speaker appears in two partitions.
    pub fn check_disjoint(&self) -> Result<()> {
        let sets = self
            .partitions()
            .map(|(name, clips)| (name, Self::speakers(clips)));
        for i in 0..3 {
            for j in i + 1..3 {
                if let Some(s) = sets[i].1.intersection(&sets[j].1).next() {
                    return Err(Error::Dataset(format!(
                        "speaker {s} appears in both {} and {}",
                        sets[i].0, sets[j].0
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Shuffles each class's speakers with `spec.seed` and deals them into
/// test, validation and train in that order. A speaker with clips of both
/// labels counts toward the class of the majority of its clips.
///
/// Per class of `n` speakers: `max(1, round(val * n))` go to validation,
/// `max(1, round(test * n))` to test when the test share is non-zero, and
/// the rest to train.
pub fn make_split(clips: &[LabeledClip], spec: &SplitSpec) -> Result<Split> {
    spec.validate()?;
    let mut votes: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for c in clips {
        let v = votes.entry(c.record.speaker_id.as_str()).or_default();
        if c.label {
            v.0 += 1;
        } else {
            v.1 += 1;
        }
    }
    let mut by_class: [Vec<&str>; 2] = [Vec::new(), Vec::new()];
    for (&speaker, &(pos, neg)) in &votes {
        by_class[usize::from(pos >= neg)].push(speaker);
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut part_of: BTreeMap<&str, usize> = BTreeMap::new();
    for (class, speakers) in by_class.iter_mut().enumerate().rev() {
        let n = speakers.len();
        if n == 0 {
            continue;
        }
        if n < 3 {
            return Err(Error::Dataset(format!(
                "{} class has {n} speakers; a speaker-disjoint split needs at least 3",
                if class == 1 { "atypical" } else { "typical" }
            )));
        }
        speakers.shuffle(&mut rng);
        let round = |f: f64| (f * n as f64).round() as usize;
        let n_val = round(spec.val_fraction).max(1);
        let n_test = if spec.test_fraction() > 1e-12 {
            round(spec.test_fraction()).max(1)
        } else {
            0
        };
        if n_val + n_test >= n {
            return Err(Error::Dataset(format!(
                "{n} speakers cannot fill {n_val} validation and {n_test} test slots and still train"
            )));
        }
        for (i, &s) in speakers.iter().enumerate() {
            let part = if i < n_test {
                2
            } else if i < n_test + n_val {
                1
            } else {
                0
            };
            part_of.insert(s, part);
        }
    }

    let mut split = Split::default();
    let mut sorted: Vec<&LabeledClip> = clips.iter().collect();
    sorted.sort_by(|a, b| a.record.clip_path.cmp(&b.record.clip_path));
    for c in sorted {
        let target = match part_of[c.record.speaker_id.as_str()] {
            0 => &mut split.train,
            1 => &mut split.val,
            _ => &mut split.test,
        };
        target.push(c.clone());
    }
    split.check_disjoint()?;
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::super::tests::record;
    use super::*;
    use crate::curation::{Corpus, DisfluencyType};
    use proptest::prelude::*;

    fn clips(speakers: &[(usize, bool, usize)]) -> Vec<LabeledClip> {
        speakers
            .iter()
            .flat_map(|&(id, label, count)| {
                let corpus = if label { Corpus::Tisa } else { Corpus::Ied };
                (0..count).map(move |i| LabeledClip {
                    record: record(
                        &format!("s{id:03}"),
                        corpus,
                        DisfluencyType::Prolongation,
                        i,
                    ),
                    label,
                })
            })
            .collect()
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let c = clips(&(0..10).map(|i| (i, i % 2 == 0, 3)).collect::<Vec<_>>());
        let spec = SplitSpec {
            seed: 7,
            ..SplitSpec::default()
        };
        let a = make_split(&c, &spec).unwrap();
        assert_eq!(a, make_split(&c, &spec).unwrap());
        let other = make_split(
            &c,
            &SplitSpec {
                seed: 8,
                ..spec.clone()
            },
        )
        .unwrap();
        assert_eq!(other.train.len() + other.val.len() + other.test.len(), 30);
    }

    #[test]
    fn hundred_single_clip_speakers() {
        let c = clips(&(0..100).map(|i| (i, i < 50, 1)).collect::<Vec<_>>());
        let s = make_split(&c, &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (80, 10, 10));
        for part in [&s.train, &s.val, &s.test] {
            let pos = part.iter().filter(|c| c.label).count();
            assert_eq!(pos * 2, part.len());
        }
    }

    #[test]
    fn too_few_speakers() {
        let c = clips(&[
            (0, true, 5),
            (1, true, 5),
            (2, false, 3),
            (3, false, 3),
            (4, false, 3),
        ]);
        assert!(matches!(
            make_split(&c, &SplitSpec::default()),
            Err(Error::Dataset(_))
        ));
    }

    #[test]
    fn bad_fractions() {
        for (t, v) in [(0.0, 0.1), (0.8, 0.0), (0.95, 0.1), (1.0, 0.1)] {
            let spec = SplitSpec {
                train_fraction: t,
                val_fraction: v,
                ..SplitSpec::default()
            };
            assert!(spec.validate().is_err(), "{t} {v}");
        }
    }

    #[test]
    fn leakage_detected() {
        let c = clips(&[(0, true, 2)]);
        let s = Split {
            train: vec![c[0].clone()],
            val: vec![],
            test: vec![c[1].clone()],
        };
        assert!(s.check_disjoint().is_err());
    }

    proptest! {
        #[test]
        fn speakers_never_straddle_partitions(
            counts in prop::collection::vec((any::<bool>(), 1usize..6), 8..40),
            seed in any::<u64>(),
        ) {
            let spk: Vec<(usize, bool, usize)> = counts.iter().enumerate().map(|(i, &(l, n))| (i, l, n)).collect();
            let c = clips(&spk);
            let pos = spk.iter().filter(|s| s.1).count();
            let spec = SplitSpec { seed, ..SplitSpec::default() };
            match make_split(&c, &spec) {
                Ok(s) => {
                    prop_assert_eq!(s.train.len() + s.val.len() + s.test.len(), c.len());
                    let sets = s.partitions().map(|(_, p)| Split::speakers(p));
                    prop_assert!(sets[0].is_disjoint(&sets[1]));
                    prop_assert!(sets[0].is_disjoint(&sets[2]));
                    prop_assert!(sets[1].is_disjoint(&sets[2]));
                    prop_assert!(!s.train.is_empty() && !s.val.is_empty() && !s.test.is_empty());
                }
                Err(_) => {
                    let thin = |k: usize| k > 0 && k < 3;
                    prop_assert!(thin(pos) || thin(spk.len() - pos));
                }
            }
        }
    }
}
