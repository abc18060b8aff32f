//! Class statistics over a labeled dataset: classes per image, conditional
//! co-occurrence, and positive/negative image counts per class.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::types::{ClassSet, LabelMap, IGNORE_INDEX};

/// Image-level label set derived from a dense label map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageLabelSet {
    pub image_id: String,
    pub present: ClassSet,
}

impl ImageLabelSet {
    /// True when no class reached the presence threshold.
    pub fn is_empty(&self) -> bool {
        self.present.is_empty()
    }
}

/// Classes covering at least `min_pixels` non-ignored pixels of `m`.
pub fn image_label_set(image_id: impl Into<String>, m: &LabelMap, min_pixels: usize) -> ImageLabelSet {
    let min_pixels = min_pixels.max(1);
    let mut counts = [0usize; 256];
    for &v in m.data() {
        counts[v as usize] += 1;
    }
    let present = (0..IGNORE_INDEX as usize).filter(|&c| counts[c] >= min_pixels).collect();
    ImageLabelSet { image_id: image_id.into(), present }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetStats {
    pub class_count: usize,
    pub image_count: usize,
    /// number of classes in an image -> number of images
    pub classes_per_image_hist: BTreeMap<usize, usize>,
    /// `pair_counts[a][b]` = images containing both `a` and `b`.
    pub pair_counts: Vec<Vec<usize>>,
    /// Row-major `C x C`; `cooccurrence[a * C + b] = pair_counts[a][b] / positives[a]`.
    pub cooccurrence: Vec<f64>,
    pub positives: Vec<usize>,
    pub negatives: Vec<usize>,
}

impl DatasetStats {
    pub fn cooccurrence_at(&self, a: usize, b: usize) -> f64 {
        self.cooccurrence[a * self.class_count + b]
    }
}

/// Reduces image label sets to [`DatasetStats`]. Order-independent.
pub fn compute_stats(sets: &[ImageLabelSet], class_count: usize) -> Result<DatasetStats> {
    if sets.is_empty() {
        return Err(Error::Empty("image label set list"));
    }
    for s in sets {
        if let Some(m) = s.present.max() {
            if m >= class_count {
                return Err(Error::ClassSet(alloc::format!(
                    "image {} contains class {m} but the catalog has {class_count} classes",
                    s.image_id
                )));
            }
        }
    }
    let c = class_count;
    let mut hist = BTreeMap::new();
    let mut pair_counts = vec![vec![0usize; c]; c];
    let mut members = Vec::with_capacity(c);
    for s in sets {
        *hist.entry(s.present.len()).or_insert(0) += 1;
        members.clear();
        members.extend(s.present.iter());
        for &a in &members {
            for &b in &members {
                pair_counts[a][b] += 1;
            }
        }
    }
    let positives: Vec<usize> = (0..c).map(|a| pair_counts[a][a]).collect();
    let negatives = positives.iter().map(|&p| sets.len() - p).collect();
    let mut cooccurrence = vec![0.0; c * c];
    for a in 0..c {
        if positives[a] == 0 {
            continue;
        }
        for b in 0..c {
            cooccurrence[a * c + b] = pair_counts[a][b] as f64 / positives[a] as f64;
        }
    }
    Ok(DatasetStats {
        class_count: c,
        image_count: sets.len(),
        classes_per_image_hist: hist,
        pair_counts,
        cooccurrence,
        positives,
        negatives,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;
    use alloc::format;
    use proptest::prelude::*;

    fn set(id: &str, cs: &[usize]) -> ImageLabelSet {
        ImageLabelSet { image_id: id.into(), present: cs.iter().copied().collect() }
    }

    #[test]
    fn presence_threshold() {
        let m = LabelMap::new(2, 2, vec![0, 0, 1, 255]).unwrap();
        let one = image_label_set("a", &m, 1);
        assert_eq!(one.present.iter().collect::<Vec<_>>(), vec![0, 1]);
        let two = image_label_set("a", &m, 2);
        assert_eq!(two.present.iter().collect::<Vec<_>>(), vec![0]);
        let ig = LabelMap::filled(3, 3, 255);
        assert!(image_label_set("z", &ig, 1).is_empty());
    }

    #[test]
    fn hand_example() {
        let (a, b) = (0, 1);
        let s = compute_stats(&[set("1", &[a, b]), set("2", &[a]), set("3", &[a, b])], 2).unwrap();
        assert!((s.cooccurrence_at(a, b) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(s.cooccurrence_at(b, a), 1.0);
        assert_eq!(s.positives[a], 3);
        assert_eq!(s.negatives[a], 0);
        assert_eq!(s.classes_per_image_hist.get(&1), Some(&1));
        assert_eq!(s.classes_per_image_hist.get(&2), Some(&2));
    }

    #[test]
    fn single_image_and_empty_class() {
        let s = compute_stats(&[set("1", &[0])], 3).unwrap();
        assert_eq!(s.cooccurrence_at(0, 0), 1.0);
        assert_eq!(s.cooccurrence_at(0, 1), 0.0);
        assert!(s.cooccurrence[3..].iter().all(|&v| v == 0.0));
        assert_eq!(s.negatives, vec![0, 1, 1]);
        assert!(compute_stats(&[], 3).is_err());
        assert!(compute_stats(&[set("1", &[5])], 3).is_err());
    }

    fn random_sets(seed: u64, n: usize, c: usize) -> Vec<ImageLabelSet> {
        let mut r = CounterRng::new(seed);
        (0..n)
            .map(|i| {
                let cs: Vec<usize> = (0..c).filter(|_| r.bernoulli(0.4)).collect();
                set(&format!("{i}"), &cs)
            })
            .collect()
    }

    proptest! {
        #[test]
        fn invariants_hold(seed in 0u64..5000, n in 1usize..30) {
            let c = 6;
            let sets = random_sets(seed, n, c);
            let s = compute_stats(&sets, c).unwrap();
            prop_assert_eq!(s.classes_per_image_hist.values().sum::<usize>(), n);
            for a in 0..c {
                prop_assert_eq!(s.positives[a] + s.negatives[a], n);
                if s.positives[a] > 0 {
                    prop_assert_eq!(s.cooccurrence_at(a, a), 1.0);
                }
                for b in 0..c {
                    let v = s.cooccurrence_at(a, b);
                    prop_assert!((0.0..=1.0).contains(&v));
                    let pairs = v * s.positives[a] as f64;
                    prop_assert!((pairs - libm::round(pairs)).abs() < 1e-9);
                }
            }
            let mut rev = sets.clone();
            rev.reverse();
            prop_assert_eq!(compute_stats(&rev, c).unwrap(), s.clone());

            let mut more = sets.clone();
            more.push(set("all", &(0..c).collect::<Vec<_>>()));
            let t = compute_stats(&more, c).unwrap();
            for a in 0..c {
                prop_assert_eq!(t.positives[a], s.positives[a] + 1);
                for b in 0..c {
                    prop_assert!(t.pair_counts[a][b] >= s.pair_counts[a][b]);
                }
            }
        }
    }
}
