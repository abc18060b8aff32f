//! Per-pixel linear softmax segmentation head and its optimizer.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::carb::{region_cross_entropy, region_logit_grad, RegionLoss};
use crate::error::{Error, Result};
use crate::types::{FeatureMap, LabelMap, ProbabilityMap, TextEmbeddingSet};

/// `softmax((W x + b) / tau)` applied independently at every cell.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSegHead {
    class_count: usize,
    dim: usize,
    /// `C x D`, row-major.
    pub weights: Vec<f64>,
    pub bias: Option<Vec<f64>>,
    temperature: f64,
}

/// Gradient with respect to the head parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrad {
    pub weights: Vec<f64>,
    pub bias: Option<Vec<f64>>,
}

impl HeadGrad {
    pub fn zeros_like(head: &LinearSegHead) -> Self {
        Self { weights: vec![0.0; head.weights.len()], bias: head.bias.as_ref().map(|b| vec![0.0; b.len()]) }
    }

    pub fn add_assign(&mut self, other: &HeadGrad) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            *a += b;
        }
        if let (Some(a), Some(b)) = (self.bias.as_mut(), other.bias.as_ref()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }
}

impl LinearSegHead {
    pub fn new(
        class_count: usize,
        dim: usize,
        weights: Vec<f64>,
        bias: Option<Vec<f64>>,
        temperature: f64,
    ) -> Result<Self> {
        if class_count == 0 || dim == 0 || weights.len() != class_count * dim {
            return Err(Error::Shape(format!(
                "head {class_count}x{dim} with {} weights",
                weights.len()
            )));
        }
        if let Some(b) = &bias {
            if b.len() != class_count {
                return Err(Error::Shape(format!("bias has {} entries for {class_count} classes", b.len())));
            }
        }
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::Value(format!("temperature {temperature} must be positive")));
        }
        let all = weights.iter().chain(bias.iter().flatten());
        if all.into_iter().any(|v| !v.is_finite()) {
            return Err(Error::Value("head parameters must be finite".into()));
        }
        Ok(Self { class_count, dim, weights, bias, temperature })
    }

    /// Weights set to the row-normalized text embeddings, zero bias.
    pub fn from_text(text: &TextEmbeddingSet, with_bias: bool, temperature: f64) -> Result<Self> {
        let (c, d) = (text.class_count(), text.dim());
        let mut w = Vec::with_capacity(c * d);
        for k in 0..c {
            let row = text.row(k);
            let n = libm::sqrt(row.iter().map(|&v| v as f64 * v as f64).sum::<f64>());
            w.extend(row.iter().map(|&v| v as f64 / n));
        }
        Self::new(c, d, w, with_bias.then(|| vec![0.0; c]), temperature)
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.bias.as_ref().map_or(0, |b| b.len())
    }

    fn check_dim(&self, f: &FeatureMap) -> Result<()> {
        if f.dim() != self.dim {
            return Err(Error::Shape(format!("features have dim {}, head expects {}", f.dim(), self.dim)));
        }
        Ok(())
    }

    pub fn forward(&self, f: &FeatureMap) -> Result<ProbabilityMap> {
        self.check_dim(f)?;
        let (c, d) = (self.class_count, self.dim);
        let inv_t = 1.0 / self.temperature;
        let mut out = Vec::with_capacity(f.cells() * c);
        let mut logits = vec![0.0f64; c];
        for i in 0..f.cells() {
            let x = f.cell(i);
            for k in 0..c {
                let w = &self.weights[k * d..(k + 1) * d];
                let mut z = 0.0;
                for j in 0..d {
                    z += w[j] * x[j] as f64;
                }
                if let Some(b) = &self.bias {
                    z += b[k];
                }
                logits[k] = z * inv_t;
            }
            softmax_into(&logits, &mut out);
        }
        ProbabilityMap::new_unchecked(f.height(), f.width(), c, out)
    }

    /// Chain rule from `d loss / d (pre-softmax logits)` to the parameters.
    pub fn backward(&self, f: &FeatureMap, logit_grad: &[f64], out: &mut HeadGrad) -> Result<()> {
        self.check_dim(f)?;
        let (c, d) = (self.class_count, self.dim);
        if logit_grad.len() != f.cells() * c {
            return Err(Error::Shape("logit gradient does not match the feature grid".into()));
        }
        let inv_t = 1.0 / self.temperature;
        for i in 0..f.cells() {
            let g = &logit_grad[i * c..(i + 1) * c];
            let x = f.cell(i);
            for k in 0..c {
                let gk = g[k] * inv_t;
                if gk == 0.0 {
                    continue;
                }
                let w = &mut out.weights[k * d..(k + 1) * d];
                for j in 0..d {
                    w[j] += gk * x[j] as f64;
                }
                if let Some(b) = out.bias.as_mut() {
                    b[k] += gk;
                }
            }
        }
        Ok(())
    }
}

fn softmax_into(logits: &[f64], out: &mut Vec<f64>) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let start = out.len();
    let mut s = 0.0;
    for &z in logits {
        let e = libm::exp(z - m);
        s += e;
        out.push(e);
    }
    for v in &mut out[start..] {
        *v /= s;
    }
}

/// One weighted cross-entropy term of a composed loss.
#[derive(Debug, Clone, Copy)]
pub struct LossTerm<'a> {
    pub region: &'a [bool],
    pub weight: f64,
}

/// Result of [`loss_and_grad`].
#[derive(Debug, Clone, PartialEq)]
pub struct LossGrad {
    pub loss: f64,
    pub grad: HeadGrad,
    /// Unweighted region loss of each term, in input order.
    pub terms: Vec<RegionLoss>,
    pub probs: ProbabilityMap,
}

/// `sum_t weight_t * CE(region_t)` on one view, with its analytic gradient.
pub fn loss_and_grad(
    head: &LinearSegHead,
    features: &FeatureMap,
    target: &LabelMap,
    terms: &[LossTerm<'_>],
) -> Result<LossGrad> {
    let probs = head.forward(features)?;
    loss_and_grad_with(head, features, probs, target, terms)
}

/// As [`loss_and_grad`] when the forward pass is already available.
pub fn loss_and_grad_with(
    head: &LinearSegHead,
    features: &FeatureMap,
    probs: ProbabilityMap,
    target: &LabelMap,
    terms: &[LossTerm<'_>],
) -> Result<LossGrad> {
    probs.same_grid(target)?;
    let mut logit_grad = vec![0.0; probs.data().len()];
    let mut loss = 0.0;
    let mut out = Vec::with_capacity(terms.len());
    for t in terms {
        let rl = region_cross_entropy(&probs, target, t.region)?;
        loss += t.weight * rl.value;
        region_logit_grad(&probs, target, t.region, t.weight, &mut logit_grad)?;
        out.push(rl);
    }
    let mut grad = HeadGrad::zeros_like(head);
    head.backward(features, &logit_grad, &mut grad)?;
    Ok(LossGrad { loss, grad, terms: out, probs })
}

/// Momentum SGD: `v <- mu v + g; theta <- theta - lr v`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumSgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Option<HeadGrad>,
}

impl MomentumSgd {
    pub fn new(lr: f64, momentum: f64) -> Result<Self> {
        if !(lr >= 0.0 && lr.is_finite()) || !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("invalid optimizer settings lr={lr} momentum={momentum}")));
        }
        Ok(Self { lr, momentum, velocity: None })
    }

    pub fn step(&mut self, head: &mut LinearSegHead, grad: &HeadGrad) {
        let v = self.velocity.get_or_insert_with(|| HeadGrad::zeros_like(head));
        let mu = self.momentum;
        let lr = self.lr;
        let update = |theta: &mut [f64], vel: &mut [f64], g: &[f64]| {
            for ((t, v), g) in theta.iter_mut().zip(vel.iter_mut()).zip(g) {
                *v = mu * *v + g;
                let delta = lr * *v;
                if delta != 0.0 {
                    *t -= delta;
                }
            }
        };
        update(&mut head.weights, &mut v.weights, &grad.weights);
        if let (Some(b), Some(vb), Some(gb)) = (head.bias.as_mut(), v.bias.as_mut(), grad.bias.as_ref()) {
            update(b, vb, gb);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;
    use crate::types::IGNORE_INDEX;

    fn fm(h: usize, w: usize, d: usize, v: Vec<f32>) -> FeatureMap {
        FeatureMap::new(h, w, d, v).unwrap()
    }

    #[test]
    fn forward_examples() {
        let head = LinearSegHead::new(2, 1, vec![1.0, -1.0], Some(vec![0.0, 0.0]), 1.0).unwrap();
        let p = head.forward(&fm(1, 1, 1, vec![0.0])).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);

        let head = LinearSegHead::new(3, 2, vec![1.0, 0.0, 0.0, 1.0, 3.0, -2.0], None, 1e9).unwrap();
        let p = head.forward(&fm(1, 1, 2, vec![0.7, -0.2])).unwrap();
        for &v in p.data() {
            assert!((v - 1.0 / 3.0).abs() < 1e-8);
        }
        assert!(head.forward(&fm(1, 1, 3, vec![0.0; 3])).is_err());
    }

    #[test]
    fn forward_matches_brute_force_softmax() {
        let mut r = CounterRng::new(37);
        let (c, d) = (5, 4);
        let w: Vec<f64> = (0..c * d).map(|_| r.normal()).collect();
        let b: Vec<f64> = (0..c).map(|_| r.normal()).collect();
        let head = LinearSegHead::new(c, d, w.clone(), Some(b.clone()), 0.7).unwrap();
        let f = fm(3, 3, d, (0..9 * d).map(|_| r.normal() as f32).collect());
        let p = head.forward(&f).unwrap();
        for i in 0..9 {
            let x = f.cell(i);
            let z: Vec<f64> = (0..c)
                .map(|k| ((0..d).map(|j| w[k * d + j] * x[j] as f64).sum::<f64>() + b[k]) / 0.7)
                .collect();
            let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
            let s: f64 = e.iter().sum();
            let sum: f64 = p.cell(i).iter().sum();
            assert!((sum - 1.0).abs() < 1e-6);
            for k in 0..c {
                assert!((p.cell(i)[k] - e[k] / s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn closed_form_single_pixel_gradient() {
        let head = LinearSegHead::new(2, 1, vec![0.0, 0.0], None, 1.0).unwrap();
        let f = fm(1, 1, 1, vec![1.0]);
        let t = LabelMap::new(1, 1, vec![0]).unwrap();
        let r = [true];
        let lg = loss_and_grad(&head, &f, &t, &[LossTerm { region: &r, weight: 1.0 }]).unwrap();
        assert_eq!(lg.probs.data(), &[0.5, 0.5]);
        assert_eq!(lg.grad.weights, vec![-0.5, 0.5]);
        assert!((lg.loss - core::f64::consts::LN_2).abs() < 1e-15);
    }

    #[test]
    fn all_ignore_target_gives_zero() {
        let head = LinearSegHead::new(2, 2, vec![0.3, 0.1, -0.4, 0.2], Some(vec![0.1, 0.0]), 1.0).unwrap();
        let f = fm(1, 2, 2, vec![1.0, 2.0, -1.0, 0.5]);
        let t = LabelMap::filled(2, 1, IGNORE_INDEX);
        let region = [false, false];
        let lg = loss_and_grad(&head, &f, &t, &[LossTerm { region: &region, weight: 1.0 }]).unwrap();
        assert_eq!(lg.loss, 0.0);
        assert!(lg.grad.weights.iter().chain(lg.grad.bias.iter().flatten()).all(|&g| g == 0.0));
    }

    #[test]
    fn zero_lr_step_is_bit_identical() {
        let mut r = CounterRng::new(3);
        let mut head = LinearSegHead::new(3, 2, (0..6).map(|_| r.normal()).collect(), Some(vec![-0.0, 0.0, 1.0]), 1.0).unwrap();
        let before = head.clone();
        let grad = HeadGrad { weights: (0..6).map(|_| r.normal()).collect(), bias: Some(vec![1.0, -1.0, 2.0]) };
        let mut opt = MomentumSgd::new(0.0, 0.9).unwrap();
        opt.step(&mut head, &grad);
        opt.step(&mut head, &grad);
        for (a, b) in head.weights.iter().zip(&before.weights) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        for (a, b) in head.bias.iter().flatten().zip(before.bias.iter().flatten()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn momentum_accumulates() {
        let mut head = LinearSegHead::new(1, 1, vec![0.0], None, 1.0).unwrap();
        let mut opt = MomentumSgd::new(0.1, 0.5).unwrap();
        let g = HeadGrad { weights: vec![1.0], bias: None };
        opt.step(&mut head, &g);
        opt.step(&mut head, &g);
        // v1 = 1, v2 = 1.5 -> theta = -0.1 - 0.15
        assert!((head.weights[0] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn from_text_normalizes_rows() {
        let t = TextEmbeddingSet::new(2, 2, vec![3.0, 4.0, 0.0, 2.0]).unwrap();
        let h = LinearSegHead::from_text(&t, true, 1.0).unwrap();
        assert_eq!(h.weights, vec![0.6, 0.8, 0.0, 1.0]);
        assert_eq!(h.bias, Some(vec![0.0, 0.0]));
    }
}
