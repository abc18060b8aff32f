//! Two-stage training of a [`LinearSegHead`] on pseudo-masks.
//!
//! Stage 1 minimizes plain cross-entropy on the global view and, depending on
//! the view mode, a sampled local view. Stage 2 splits each view's mask into
//! regions consistent and inconsistent with the filtered prediction and
//! down-weights the inconsistent one.

use alloc::boxed::Box;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::carb::{
    adaptive_weight, filtered_prediction, partition, push_losses, region_cross_entropy, LossHistory, RegionLoss,
    RegionPartition, DEFAULT_QUEUE_CAPACITY,
};
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalReport};
use crate::exec::Executor;
use crate::head::{loss_and_grad_with, HeadGrad, LinearSegHead, LossGrad, LossTerm, MomentumSgd};
use crate::maskgen::{cosine_pseudo_mask, sample_crop, CropConfig, CropSpec, FeatureChannel, FeatureProvider};
use crate::rng::{purpose, CounterRng};
use crate::stats::image_label_set;
use crate::synth::SyntheticDataset;
use crate::types::{resize_labels_nearest, ClassSet, FeatureMap, LabelMap, ProbabilityMap, TextEmbeddingSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ViewMode {
    /// Global view with a fixed pseudo-mask.
    Base,
    /// Fixed global mask plus one sampled local view per iteration.
    Local,
    /// As `Local`, with the global view resized and its mask regenerated
    /// every iteration.
    Dual,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Balance {
    Plain,
    Carb,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WeightMode {
    /// Ratio of queued mean losses.
    Adaptive,
    Fixed(f64),
}

/// How a view's consistent and inconsistent losses are normalized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RegionNorm {
    /// Each region's loss is its own mean: `L_c + w L_i`.
    Region,
    /// Each region is scaled by its share of the view's valid pixels, so that
    /// `w = 1` recovers the full-region loss.
    Pixel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskSource {
    /// Cosine argmax of pseudo-labeling features against text embeddings.
    Clip,
    /// The scene's precomputed noisy mask, cropped and resized to each view.
    NoisyOracle,
}

/// Label set a local view's pseudo-mask is restricted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LocalLabelSet {
    /// The whole image's label set.
    Image,
    /// Classes of the image set that also occur in the crop's ground truth.
    Crop,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub stage1_iters: usize,
    pub stage2_iters: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Local crop size and resize range; the range also drives the global
    /// resize in dual mode.
    pub crop: CropConfig,
    pub queue_capacity: usize,
    pub view: ViewMode,
    pub balance: Balance,
    pub weight: WeightMode,
    pub region_norm: RegionNorm,
    /// Keep the plain loss in stage 2 and add the balanced loss on top.
    pub stage2_keep_plain: bool,
    pub mask_source: MaskSource,
    pub local_label_set: LocalLabelSet,
    pub temperature: f64,
    pub bias: bool,
    /// Training mIoU is recorded every this many iterations (0 disables it).
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            stage1_iters: 1000,
            stage2_iters: 2000,
            lr: 0.1,
            momentum: 0.9,
            crop: CropConfig { crop_w: 64, crop_h: 64, r_min: 1.0, r_max: 2.0 },
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            view: ViewMode::Base,
            balance: Balance::Plain,
            weight: WeightMode::Adaptive,
            region_norm: RegionNorm::Region,
            stage2_keep_plain: false,
            mask_source: MaskSource::Clip,
            local_label_set: LocalLabelSet::Image,
            temperature: 1.0,
            bias: true,
            eval_every: 100,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn total_iters(&self) -> usize {
        self.stage1_iters + self.stage2_iters
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_iters() == 0 {
            return Err(Error::Config("at least one training iteration is required".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} must be in [0, 1)", self.momentum)));
        }
        if self.queue_capacity == 0 {
            return Err(Error::Config("queue capacity must be positive".into()));
        }
        if let WeightMode::Fixed(w) = self.weight {
            if !(0.0..=1.0).contains(&w) {
                return Err(Error::Config(format!("fixed weight {w} is outside [0, 1]")));
            }
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Config(format!("temperature {} must be positive", self.temperature)));
        }
        self.crop.validate()
    }
}

/// Per-scene label information the trainer needs besides features.
pub trait SceneLabels {
    /// Image-level label set used for mask generation and filtering.
    fn present(&self, scene: usize) -> Result<&ClassSet>;
    fn noisy_mask(&self, scene: usize) -> Option<&LabelMap>;
    fn ground_truth(&self, scene: usize) -> Option<&LabelMap>;
}

impl SceneLabels for SyntheticDataset {
    fn present(&self, scene: usize) -> Result<&ClassSet> {
        self.scenes.get(scene).map(|s| &s.present).ok_or(Error::Empty("scene"))
    }

    fn noisy_mask(&self, scene: usize) -> Option<&LabelMap> {
        self.scenes.get(scene).map(|s| &s.noisy_mask)
    }

    fn ground_truth(&self, scene: usize) -> Option<&LabelMap> {
        self.scenes.get(scene).map(|s| &s.ground_truth)
    }
}

/// Loss composition for one view with its regions already fixed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// Cross-entropy over every valid pixel.
    Plain,
    Balanced { w: f64, norm: RegionNorm, keep_plain: bool },
}

/// Analytic loss and gradient of `obj` on one view. `probs` must be
/// `head.forward(features)`.
pub fn view_loss_and_grad(
    head: &LinearSegHead,
    features: &FeatureMap,
    probs: ProbabilityMap,
    target: &LabelMap,
    part: &RegionPartition,
    obj: Objective,
) -> Result<LossGrad> {
    let valid = part.valid();
    let mut terms = Vec::with_capacity(3);
    match obj {
        Objective::Plain => terms.push(LossTerm { region: &valid, weight: 1.0 }),
        Objective::Balanced { w, norm, keep_plain } => {
            if keep_plain {
                terms.push(LossTerm { region: &valid, weight: 1.0 });
            }
            let (wc, wi) = match norm {
                RegionNorm::Region => (1.0, w),
                RegionNorm::Pixel => {
                    let n = (part.n_consistent + part.n_inconsistent).max(1) as f64;
                    (part.n_consistent as f64 / n, w * part.n_inconsistent as f64 / n)
                }
            };
            terms.push(LossTerm { region: &part.consistent, weight: wc });
            terms.push(LossTerm { region: &part.inconsistent, weight: wi });
        }
    }
    loss_and_grad_with(head, features, probs, target, &terms)
}

/// One telemetry record.
#[derive(Debug, Clone, PartialEq)]
pub struct TelemetryRow {
    /// 1-based.
    pub iter: usize,
    pub stage: u8,
    pub loss_total: f64,
    /// Pixel-weighted mean over the iteration's views; `None` for an empty region.
    pub loss_c: Option<f64>,
    pub loss_i: Option<f64>,
    pub w: f64,
    pub n_c: usize,
    pub n_i: usize,
    pub train_miou: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub head: LinearSegHead,
    pub telemetry: Vec<TelemetryRow>,
    pub iterations: usize,
}

struct View {
    features: FeatureMap,
    target: LabelMap,
}

struct Ctx<'a, P: ?Sized, L: ?Sized> {
    cfg: &'a TrainConfig,
    provider: &'a P,
    labels: &'a L,
    text: &'a TextEmbeddingSet,
}

impl<P: FeatureProvider + ?Sized, L: SceneLabels + ?Sized> Ctx<'_, P, L> {
    fn wrap(&self, scene: usize, iteration: usize, e: Error) -> Error {
        match e {
            e @ Error::Provider { .. } => e,
            e => Error::Provider { scene: self.provider.scene_id(scene), iteration: iteration as u64, source: Box::new(e) },
        }
    }

    fn view(&self, scene: usize, spec: Option<&CropSpec>, iteration: usize) -> Result<View> {
        self.view_inner(scene, spec).map_err(|e| self.wrap(scene, iteration, e))
    }

    fn view_inner(&self, scene: usize, spec: Option<&CropSpec>) -> Result<View> {
        let (fw, fh) = self.provider.frame_size(scene)?;
        let full = CropSpec::full(fw, fh);
        let s = spec.unwrap_or(&full);
        s.validate(fw, fh)?;
        let (gw, gh) = s.grid_size(self.provider.stride());
        let features = self.provider.features(scene, spec, FeatureChannel::ModelInput)?;
        let target = match self.cfg.mask_source {
            MaskSource::Clip => {
                let f = self.provider.features(scene, spec, FeatureChannel::PseudoLabel)?;
                let present = self.labels.present(scene)?;
                let allowed = match (spec, self.cfg.local_label_set) {
                    (Some(s), LocalLabelSet::Crop) => {
                        let gt = self.labels.ground_truth(scene).ok_or(Error::MissingView {
                            scene: self.provider.scene_id(scene),
                            view: "ground truth".into(),
                        })?;
                        let seen = image_label_set("", &gt.crop(s.x0, s.y0, s.crop_w, s.crop_h)?, 1).present;
                        let both: ClassSet = present.iter().filter(|&c| seen.contains(c)).collect();
                        if both.is_empty() {
                            present.clone()
                        } else {
                            both
                        }
                    }
                    _ => present.clone(),
                };
                cosine_pseudo_mask(&f, self.text, Some(&allowed))?.labels
            }
            MaskSource::NoisyOracle => {
                let noisy = self.labels.noisy_mask(scene).ok_or(Error::MissingView {
                    scene: self.provider.scene_id(scene),
                    view: "noisy mask".into(),
                })?;
                resize_labels_nearest(&noisy.crop(s.x0, s.y0, s.crop_w, s.crop_h)?, gw, gh)?
            }
        };
        if features.width() != gw || features.height() != gh || target.width() != gw || target.height() != gh {
            return Err(Error::Shape(format!(
                "view {} of scene {} does not have the expected {gw}x{gh} grid",
                s.file_stem(),
                self.provider.scene_id(scene)
            )));
        }
        Ok(View { features, target })
    }
}

fn pooled(losses: &[RegionLoss]) -> RegionLoss {
    let n: usize = losses.iter().map(|l| l.pixel_count).sum();
    if n == 0 {
        return RegionLoss::EMPTY;
    }
    RegionLoss { value: losses.iter().map(|l| l.total()).sum::<f64>() / n as f64, pixel_count: n }
}

/// Mean-IoU report of `head` on the ground truth of `scenes`, or `None` when
/// some scene has no ground truth.
pub fn train_report<P, L, E>(head: &LinearSegHead, provider: &P, labels: &L, scenes: &[usize], exec: &E) -> Result<Option<EvalReport>>
where
    P: FeatureProvider + Sync + ?Sized,
    L: SceneLabels + ?Sized,
    E: Executor,
{
    let mut gt = Vec::with_capacity(scenes.len());
    for &s in scenes {
        match labels.ground_truth(s) {
            Some(m) => gt.push((s, m)),
            None => return Ok(None),
        }
    }
    evaluate(head, provider, &gt, exec).map(Some)
}

/// Runs both stages. Scenes are drawn uniformly from `scenes` with
/// replacement. `exec` parallelizes mask precomputation and evaluation only.
pub fn train<P, L, E>(
    cfg: &TrainConfig,
    provider: &P,
    labels: &L,
    scenes: &[usize],
    text: &TextEmbeddingSet,
    exec: &E,
) -> Result<TrainOutcome>
where
    P: FeatureProvider + Sync + ?Sized,
    L: SceneLabels + Sync + ?Sized,
    E: Executor,
{
    cfg.validate()?;
    if scenes.is_empty() {
        return Err(Error::Empty("training scene list"));
    }
    if text.dim() != provider.dim() {
        return Err(Error::Shape(format!("text dim {} does not match feature dim {}", text.dim(), provider.dim())));
    }
    for &s in scenes {
        labels.present(s)?.check(text.class_count())?;
    }
    let ctx = Ctx { cfg, provider, labels, text };
    let mut head = LinearSegHead::from_text(text, cfg.bias, cfg.temperature)?;
    let mut opt = MomentumSgd::new(cfg.lr, cfg.momentum)?;
    let mut history = LossHistory::new(cfg.queue_capacity)?;

    // Fixed global views, indexed by position in `scenes`.
    let fixed: Vec<Option<View>> = if cfg.view == ViewMode::Dual {
        scenes.iter().map(|_| None).collect()
    } else {
        exec.map(scenes.len(), |i| ctx.view(scenes[i], None, 0))
            .into_iter()
            .map(|v| v.map(Some))
            .collect::<Result<_>>()?
    };

    let total = cfg.total_iters();
    let mut telemetry = Vec::with_capacity(total);
    for t in 0..total {
        let iter = t + 1;
        let stage: u8 = if t < cfg.stage1_iters { 1 } else { 2 };
        let pick = CounterRng::keyed(cfg.seed, &[purpose::SCENE_PICK, t as u64]).below(scenes.len() as u64) as usize;
        let scene = scenes[pick];
        let present = labels.present(scene)?;
        let (fw, fh) = provider.frame_size(scene).map_err(|e| ctx.wrap(scene, iter, e))?;

        let mut owned: Vec<View> = Vec::with_capacity(2);
        if cfg.view == ViewMode::Dual {
            let r = CounterRng::keyed(cfg.seed, &[purpose::GLOBAL_AUG, t as u64]).uniform(cfg.crop.r_min, cfg.crop.r_max);
            let spec = CropSpec { resize_ratio: r, ..CropSpec::full(fw, fh) };
            owned.push(ctx.view(scene, Some(&spec), iter)?);
        }
        if cfg.view != ViewMode::Base {
            let mut rng = CounterRng::keyed(cfg.seed, &[purpose::CROP, t as u64]);
            let spec = sample_crop(&mut rng, fw, fh, &cfg.crop).map_err(|e| ctx.wrap(scene, iter, e))?;
            owned.push(ctx.view(scene, Some(&spec), iter)?);
        }
        let views: Vec<&View> = fixed[pick].iter().chain(owned.iter()).collect();

        let mut fwd = Vec::with_capacity(views.len());
        let (mut lc, mut li) = (Vec::new(), Vec::new());
        for v in &views {
            let probs = head.forward(&v.features)?;
            let s = filtered_prediction(&probs, present)?;
            let part = partition(&v.target, &s)?;
            lc.push(region_cross_entropy(&probs, &v.target, &part.consistent)?);
            li.push(region_cross_entropy(&probs, &v.target, &part.inconsistent)?);
            fwd.push((probs, part));
        }
        let (pc, pi) = (pooled(&lc), pooled(&li));

        let balanced = stage == 2 && cfg.balance == Balance::Carb;
        let (obj, w) = if balanced {
            let w = match cfg.weight {
                WeightMode::Fixed(w) => w,
                WeightMode::Adaptive => {
                    push_losses(&mut history, &pc, &pi)?;
                    if history.is_ready() {
                        adaptive_weight(&history)?
                    } else {
                        1.0
                    }
                }
            };
            (Objective::Balanced { w, norm: cfg.region_norm, keep_plain: cfg.stage2_keep_plain }, w)
        } else {
            (Objective::Plain, 1.0)
        };

        let mut grad = HeadGrad::zeros_like(&head);
        let mut loss_total = 0.0;
        for (v, (probs, part)) in views.iter().zip(fwd) {
            let lg = view_loss_and_grad(&head, &v.features, probs, &v.target, &part, obj)?;
            loss_total += lg.loss;
            grad.add_assign(&lg.grad);
        }
        opt.step(&mut head, &grad);

        let train_miou = if cfg.eval_every > 0 && iter % cfg.eval_every == 0 {
            train_report(&head, provider, labels, scenes, exec)?.map(|r| r.miou)
        } else {
            None
        };
        telemetry.push(TelemetryRow {
            iter,
            stage,
            loss_total,
            loss_c: (!pc.is_empty()).then_some(pc.value),
            loss_i: (!pi.is_empty()).then_some(pi.value),
            w,
            n_c: pc.pixel_count,
            n_i: pi.pixel_count,
            train_miou,
        });
    }
    Ok(TrainOutcome { head, telemetry, iterations: total })
}

/// Scene ids of `provider` in index order.
pub fn scene_ids<P: FeatureProvider + ?Sized>(provider: &P) -> Vec<String> {
    (0..provider.scene_count()).map(|i| provider.scene_id(i)).collect()
}
