//! Consistency-aware region balancing.
//!
//! The pseudo-mask `P` is split against the model's label-filtered prediction
//! `S` into a consistent region (`P == S`) and an inconsistent region
//! (`P != S`). Each region gets its own mean cross-entropy, and the
//! inconsistent one is scaled by `w = mean(consistent queue) / mean(inconsistent
//! queue)`, clamped to `[0, 1]`.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::types::{argmax_labels, ClassSet, LabelMap, ProbabilityMap, IGNORE_INDEX};

/// Probabilities are clamped below at this value before taking the log.
pub const LOG_CLAMP: f64 = 1e-12;

/// Default queue capacity.
pub const DEFAULT_QUEUE_CAPACITY: usize = 100;

/// `S`: argmax restricted to the classes present in the image.
pub fn filtered_prediction(f: &ProbabilityMap, present: &ClassSet) -> Result<LabelMap> {
    if present.is_empty() {
        return Err(Error::ClassSet("image-level label set is empty".into()));
    }
    argmax_labels(f, Some(present))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionPartition {
    pub width: usize,
    pub height: usize,
    pub consistent: Vec<bool>,
    pub inconsistent: Vec<bool>,
    pub n_consistent: usize,
    pub n_inconsistent: usize,
}

impl RegionPartition {
    /// Mask of every non-ignored pixel of `P` (the union of both regions).
    pub fn valid(&self) -> Vec<bool> {
        self.consistent.iter().zip(&self.inconsistent).map(|(a, b)| *a || *b).collect()
    }
}

/// Splits the valid pixels of `pseudo` by agreement with `prediction`.
pub fn partition(pseudo: &LabelMap, prediction: &LabelMap) -> Result<RegionPartition> {
    pseudo.same_shape(prediction)?;
    let n = pseudo.len();
    let mut consistent = Vec::with_capacity(n);
    let mut inconsistent = Vec::with_capacity(n);
    let (mut nc, mut ni) = (0, 0);
    for (i, (&p, &s)) in pseudo.data().iter().zip(prediction.data()).enumerate() {
        if p == IGNORE_INDEX {
            consistent.push(false);
            inconsistent.push(false);
            continue;
        }
        if s == IGNORE_INDEX {
            return Err(Error::Value(format!(
                "prediction is ignore at pixel ({}, {}) where the pseudo-mask is valid",
                i % pseudo.width(),
                i / pseudo.width()
            )));
        }
        let same = p == s;
        consistent.push(same);
        inconsistent.push(!same);
        if same {
            nc += 1;
        } else {
            ni += 1;
        }
    }
    Ok(RegionPartition {
        width: pseudo.width(),
        height: pseudo.height(),
        consistent,
        inconsistent,
        n_consistent: nc,
        n_inconsistent: ni,
    })
}

/// Mean cross-entropy over a region; `pixel_count == 0` means the region was
/// empty and `value` is 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegionLoss {
    pub value: f64,
    pub pixel_count: usize,
}

impl RegionLoss {
    pub const EMPTY: RegionLoss = RegionLoss { value: 0.0, pixel_count: 0 };

    pub fn is_empty(&self) -> bool {
        self.pixel_count == 0
    }

    /// Sum of per-pixel losses (`value * pixel_count`).
    pub fn total(&self) -> f64 {
        self.value * self.pixel_count as f64
    }
}

fn region_check(f: &ProbabilityMap, labels: &LabelMap, region: &[bool]) -> Result<()> {
    f.same_grid(labels)?;
    if region.len() != labels.len() {
        return Err(Error::Shape(format!("region mask has {} pixels, labels {}", region.len(), labels.len())));
    }
    Ok(())
}

#[inline]
fn pixel_label(labels: &LabelMap, i: usize, classes: usize) -> Result<usize> {
    let y = labels.data()[i];
    if y == IGNORE_INDEX || y as usize >= classes {
        return Err(Error::Value(format!(
            "region pixel ({}, {}) has label {y}, which is not a valid class",
            i % labels.width(),
            i / labels.width()
        )));
    }
    Ok(y as usize)
}

/// `-(1/|R|) * sum_{i in R} log max(f_i[y_i], LOG_CLAMP)`.
pub fn region_cross_entropy(f: &ProbabilityMap, labels: &LabelMap, region: &[bool]) -> Result<RegionLoss> {
    region_check(f, labels, region)?;
    let c = f.class_count();
    let mut sum = 0.0;
    let mut count = 0usize;
    for (i, _) in region.iter().enumerate().filter(|(_, &r)| r) {
        let y = pixel_label(labels, i, c)?;
        sum -= libm::log(f.cell(i)[y].max(LOG_CLAMP));
        count += 1;
    }
    if count == 0 {
        return Ok(RegionLoss::EMPTY);
    }
    Ok(RegionLoss { value: sum / count as f64, pixel_count: count })
}

/// Adds `weight * d(region CE)/d(logits)` into `grad` (laid out like `f`).
///
/// At a region pixel the contribution is `weight * (f - onehot) / |R|`; pixels
/// whose label probability fell under [`LOG_CLAMP`] contribute nothing, matching
/// the clamped value.
pub fn region_logit_grad(
    f: &ProbabilityMap,
    labels: &LabelMap,
    region: &[bool],
    weight: f64,
    grad: &mut [f64],
) -> Result<usize> {
    region_check(f, labels, region)?;
    if grad.len() != f.data().len() {
        return Err(Error::Shape("gradient buffer does not match the probability map".into()));
    }
    let count = region.iter().filter(|&&r| r).count();
    if count == 0 || weight == 0.0 {
        return Ok(count);
    }
    let c = f.class_count();
    let scale = weight / count as f64;
    for (i, _) in region.iter().enumerate().filter(|(_, &r)| r) {
        let y = pixel_label(labels, i, c)?;
        let p = f.cell(i);
        if p[y] < LOG_CLAMP {
            continue;
        }
        let g = &mut grad[i * c..(i + 1) * c];
        for k in 0..c {
            g[k] += scale * p[k];
        }
        g[y] -= scale;
    }
    Ok(count)
}

/// Two bounded FIFO queues of recent region losses.
#[derive(Debug, Clone, PartialEq)]
pub struct LossHistory {
    capacity: usize,
    consistent: VecDeque<f64>,
    inconsistent: VecDeque<f64>,
}

impl LossHistory {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("loss queue capacity must be positive".into()));
        }
        Ok(Self { capacity, consistent: VecDeque::with_capacity(capacity), inconsistent: VecDeque::with_capacity(capacity) })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn consistent(&self) -> &VecDeque<f64> {
        &self.consistent
    }

    pub fn inconsistent(&self) -> &VecDeque<f64> {
        &self.inconsistent
    }

    pub fn is_ready(&self) -> bool {
        !self.consistent.is_empty() && !self.inconsistent.is_empty()
    }

    fn push_one(q: &mut VecDeque<f64>, cap: usize, v: f64) {
        if q.len() == cap {
            q.pop_front();
        }
        q.push_back(v);
    }

    /// Appends raw losses; `None` leaves that queue untouched.
    pub fn push(&mut self, consistent: Option<f64>, inconsistent: Option<f64>) -> Result<()> {
        for v in [consistent, inconsistent].into_iter().flatten() {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Value(format!("loss {v} is not a finite non-negative number")));
            }
        }
        if let Some(v) = consistent {
            Self::push_one(&mut self.consistent, self.capacity, v);
        }
        if let Some(v) = inconsistent {
            Self::push_one(&mut self.inconsistent, self.capacity, v);
        }
        Ok(())
    }
}

/// Pushes both region losses, skipping empty regions.
pub fn push_losses(h: &mut LossHistory, consistent: &RegionLoss, inconsistent: &RegionLoss) -> Result<()> {
    h.push(
        (!consistent.is_empty()).then_some(consistent.value),
        (!inconsistent.is_empty()).then_some(inconsistent.value),
    )
}

fn mean(q: &VecDeque<f64>) -> f64 {
    q.iter().sum::<f64>() / q.len() as f64
}

/// `clamp(mean_c / mean_i, 0, 1)`, or 1 when the inconsistent mean is 0.
pub fn adaptive_weight(h: &LossHistory) -> Result<f64> {
    if !h.is_ready() {
        return Err(Error::Empty("loss history queue"));
    }
    let mc = mean(&h.consistent);
    let mi = mean(&h.inconsistent);
    if mi == 0.0 {
        return Ok(1.0);
    }
    Ok((mc / mi).clamp(0.0, 1.0))
}

/// `L_c + w * L_i`.
pub fn carb_loss(consistent: &RegionLoss, inconsistent: &RegionLoss, w: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&w) {
        return Err(Error::Value(format!("region weight {w} is outside [0, 1]")));
    }
    Ok(consistent.value + w * inconsistent.value)
}
