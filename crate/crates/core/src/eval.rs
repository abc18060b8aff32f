//! Confusion-matrix evaluation and mIoU.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::head::LinearSegHead;
use crate::maskgen::{FeatureChannel, FeatureProvider};
use crate::types::{argmax_labels, resize_labels_nearest, ClassSet, LabelMap, IGNORE_INDEX};

/// Accumulated counts; rows are ground truth, columns are predictions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    class_count: usize,
    counts: Vec<u64>,
    /// Ground-truth pixels per class whose prediction was the ignore index.
    unlabeled: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(class_count: usize) -> Self {
        Self { class_count, counts: vec![0; class_count * class_count], unlabeled: vec![0; class_count] }
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.class_count + pred]
    }

    /// Adds every pixel whose ground truth is not ignored.
    pub fn accumulate(&mut self, pred: &LabelMap, gt: &LabelMap) -> Result<()> {
        pred.same_shape(gt)?;
        let c = self.class_count;
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            if g == IGNORE_INDEX {
                continue;
            }
            if g as usize >= c {
                return Err(Error::Value(format!("ground-truth label {g} is outside 0..{c}")));
            }
            if p == IGNORE_INDEX {
                self.unlabeled[g as usize] += 1;
                continue;
            }
            if p as usize >= c {
                return Err(Error::Value(format!("predicted label {p} is outside 0..{c}")));
            }
            self.counts[g as usize * c + p as usize] += 1;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.unlabeled.iter_mut().zip(&other.unlabeled) {
            *a += b;
        }
    }

    pub fn report(&self) -> Result<EvalReport> {
        let c = self.class_count;
        let total: u64 = self.counts.iter().sum::<u64>() + self.unlabeled.iter().sum::<u64>();
        if total == 0 {
            return Err(Error::Empty("set of labeled evaluation pixels"));
        }
        let iou: Vec<Option<f64>> = (0..c)
            .map(|k| {
                let tp = self.get(k, k);
                let fp: u64 = (0..c).filter(|&g| g != k).map(|g| self.get(g, k)).sum();
                let fn_: u64 = (0..c).filter(|&p| p != k).map(|p| self.get(k, p)).sum::<u64>() + self.unlabeled[k];
                let denom = tp + fp + fn_;
                (denom > 0).then(|| tp as f64 / denom as f64)
            })
            .collect();
        let defined: Vec<f64> = iou.iter().flatten().copied().collect();
        let miou = defined.iter().sum::<f64>() / defined.len() as f64;
        Ok(EvalReport { iou, miou, confusion: self.clone() })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    /// `None` marks a class absent from the ground truth and never predicted.
    pub iou: Vec<Option<f64>>,
    /// Mean over classes with defined IoU.
    pub miou: f64,
    pub confusion: ConfusionMatrix,
}

impl EvalReport {
    /// Mean IoU over the defined members of `classes`.
    pub fn mean_iou_over(&self, classes: &ClassSet) -> Option<f64> {
        let v: Vec<f64> = classes.iter().filter_map(|c| self.iou.get(c).copied().flatten()).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn undefined_classes(&self) -> Vec<usize> {
        self.iou.iter().enumerate().filter(|(_, v)| v.is_none()).map(|(i, _)| i).collect()
    }
}

/// Evaluates label-map pairs `(prediction, ground truth)`.
pub fn evaluate_labels<'a, I>(pairs: I, class_count: usize) -> Result<EvalReport>
where
    I: IntoIterator<Item = (&'a LabelMap, &'a LabelMap)>,
{
    let mut cm = ConfusionMatrix::new(class_count);
    let mut n = 0;
    for (p, g) in pairs {
        cm.accumulate(p, g)?;
        n += 1;
    }
    if n == 0 {
        return Err(Error::Empty("evaluation scene list"));
    }
    cm.report()
}

/// Head prediction for a scene's global view, upsampled to `(width, height)`.
pub fn predict_scene<P: FeatureProvider + ?Sized>(
    head: &LinearSegHead,
    provider: &P,
    scene: usize,
    width: usize,
    height: usize,
) -> Result<LabelMap> {
    let f = provider.features(scene, None, FeatureChannel::ModelInput)?;
    let probs = head.forward(&f)?;
    let pred = argmax_labels(&probs, None)?;
    resize_labels_nearest(&pred, width, height)
}

/// Evaluates the head on the given scenes against their ground truth.
/// Predictions use the unfiltered argmax.
pub fn evaluate<P, E>(
    head: &LinearSegHead,
    provider: &P,
    ground_truth: &[(usize, &LabelMap)],
    exec: &E,
) -> Result<EvalReport>
where
    P: FeatureProvider + Sync + ?Sized,
    E: Executor,
{
    if ground_truth.is_empty() {
        return Err(Error::Empty("evaluation scene list"));
    }
    let c = head.class_count();
    let parts = exec.map(ground_truth.len(), |i| -> Result<ConfusionMatrix> {
        let (scene, gt) = ground_truth[i];
        let pred = predict_scene(head, provider, scene, gt.width(), gt.height())?;
        let mut cm = ConfusionMatrix::new(c);
        cm.accumulate(&pred, gt)?;
        Ok(cm)
    });
    let mut cm = ConfusionMatrix::new(c);
    for p in parts {
        cm.merge(&p?);
    }
    cm.report()
}
