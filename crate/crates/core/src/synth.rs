//! Seeded synthetic scenes and a feature provider over them.
//!
//! A scene is a block-aligned label map made of a few large Voronoi regions
//! ("stuff" classes) plus small square objects from the small classes. Every
//! class has a unit prototype vector; a cell's feature is its class prototype
//! plus isotropic Gaussian noise.
//!
//! The pseudo-labeling channel additionally swaps small-object cells to a
//! confuser class with probability `p0 * min(1, a0 / apparent_area)`, where
//! the apparent area is the object's visible area scaled by the resize ratio
//! squared and by the field-of-view magnification `frame_area / crop_area`.
//! Cropping and upscaling therefore both make small objects easier to label,
//! while the model-input channel never confuses classes.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::maskgen::{CropSpec, FeatureChannel, FeatureProvider};
use crate::rng::{fold, purpose, CounterRng};
use crate::stats::image_label_set;
use crate::types::{ClassSet, FeatureMap, LabelMap, TextEmbeddingSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlobClasses {
    /// Blobs take a class present in the scene's ground truth.
    Present,
    /// Blobs take any class of the catalog.
    All,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub scene_count: usize,
    pub width: usize,
    pub height: usize,
    pub class_count: usize,
    /// The last `small_classes` class indices are small-object classes.
    pub small_classes: usize,
    pub dim: usize,
    /// Feature stride; region and object geometry is aligned to it.
    pub stride: usize,
    /// Feature noise standard deviation (both channels).
    pub sigma: f64,
    /// Perturbation of text embeddings away from the prototypes.
    pub text_noise: f64,
    pub regions_min: usize,
    pub regions_max: usize,
    pub objects_min: usize,
    pub objects_max: usize,
    /// Side lengths, in pixels, small objects are drawn from.
    pub object_sizes: Vec<usize>,
    pub confusion: bool,
    pub confusion_p0: f64,
    pub confusion_a0: f64,
    /// Target fraction of pixels corrupted in the noisy oracle masks.
    pub blob_fraction: f64,
    pub blob_radius_min: f64,
    pub blob_radius_max: f64,
    pub blob_classes: BlobClasses,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            scene_count: 50,
            width: 128,
            height: 128,
            class_count: 8,
            small_classes: 3,
            dim: 16,
            stride: 4,
            sigma: 0.3,
            text_noise: 0.3,
            regions_min: 3,
            regions_max: 6,
            objects_min: 1,
            objects_max: 4,
            object_sizes: vec![8, 12, 16],
            confusion: true,
            confusion_p0: 0.6,
            confusion_a0: 400.0,
            blob_fraction: 0.0,
            blob_radius_min: 3.0,
            blob_radius_max: 8.0,
            blob_classes: BlobClasses::Present,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.scene_count == 0 {
            return bad("scene_count must be positive".into());
        }
        if self.stride == 0 || self.width % self.stride != 0 || self.height % self.stride != 0 {
            return bad(format!(
                "frame {}x{} is not a positive multiple of stride {}",
                self.width, self.height, self.stride
            ));
        }
        if self.class_count < 2 || self.class_count > 255 {
            return bad(format!("class_count {} must be in 2..=255", self.class_count));
        }
        if self.small_classes >= self.class_count {
            return bad("at least one large class is required".into());
        }
        if self.dim < 2 {
            return bad("dim must be at least 2".into());
        }
        if self.regions_min == 0 || self.regions_min > self.regions_max {
            return bad("region count range is empty".into());
        }
        if self.objects_min > self.objects_max {
            return bad("object count range is empty".into());
        }
        if self.small_classes > 0 && self.objects_max > 0 {
            if self.object_sizes.is_empty() {
                return bad("object_sizes is empty".into());
            }
            for &s in &self.object_sizes {
                if s == 0 || s % self.stride != 0 || s > self.width || s > self.height {
                    return bad(format!("object size {s} must be a positive multiple of the stride inside the frame"));
                }
            }
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) || !(self.text_noise >= 0.0) {
            return bad("noise levels must be non-negative".into());
        }
        if !(0.0..=1.0).contains(&self.confusion_p0) || !(self.confusion_a0 > 0.0) {
            return bad("confusion_p0 must be in [0,1] and confusion_a0 positive".into());
        }
        if !(0.0..0.95).contains(&self.blob_fraction) {
            return bad(format!("blob_fraction {} must be in [0, 0.95)", self.blob_fraction));
        }
        if !(self.blob_radius_min > 0.0 && self.blob_radius_min <= self.blob_radius_max) {
            return bad("blob radius range is invalid".into());
        }
        Ok(())
    }

    pub fn large_classes(&self) -> usize {
        self.class_count - self.small_classes
    }

    pub fn small_class_set(&self) -> ClassSet {
        (self.large_classes()..self.class_count).collect()
    }
}

/// Axis-aligned small object in frame coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SmallObject {
    pub class: u8,
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl SmallObject {
    fn contains(&self, x: usize, y: usize) -> bool {
        x >= self.x && x < self.x + self.w && y >= self.y && y < self.y + self.h
    }

    fn overlap(&self, spec: &CropSpec) -> usize {
        let x1 = (self.x + self.w).min(spec.x0 + spec.crop_w);
        let y1 = (self.y + self.h).min(spec.y0 + spec.crop_h);
        let x0 = self.x.max(spec.x0);
        let y0 = self.y.max(spec.y0);
        x1.saturating_sub(x0) * y1.saturating_sub(y0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticScene {
    pub id: String,
    pub ground_truth: LabelMap,
    pub objects: Vec<SmallObject>,
    /// Ground truth corrupted by elliptical blobs.
    pub noisy_mask: LabelMap,
    /// Image-level labels (every class with at least one pixel).
    pub present: ClassSet,
}

impl SyntheticScene {
    /// Scene from explicit geometry; the noisy mask equals the ground truth.
    pub fn from_parts(id: impl Into<String>, ground_truth: LabelMap, objects: Vec<SmallObject>) -> Self {
        let id = id.into();
        let present = image_label_set(id.clone(), &ground_truth, 1).present;
        Self { id, noisy_mask: ground_truth.clone(), ground_truth, objects, present }
    }

    /// Fraction of pixels where the noisy mask differs from the ground truth.
    pub fn corrupted_fraction(&self) -> f64 {
        let diff = self
            .ground_truth
            .data()
            .iter()
            .zip(self.noisy_mask.data())
            .filter(|(a, b)| a != b)
            .count();
        diff as f64 / self.ground_truth.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    pub config: SynthConfig,
    pub seed: u64,
    /// `C x D` unit prototypes, row-major.
    pub prototypes: Vec<f64>,
    /// Small class -> class its pixels are mistaken for in pseudo-labels.
    pub confusers: Vec<Option<u8>>,
    pub text: TextEmbeddingSet,
    pub scenes: Vec<SyntheticScene>,
}

/// Minimum pairwise angle between prototypes, in degrees.
pub const MIN_PROTOTYPE_ANGLE_DEG: f64 = 10.0;

pub fn make_synthetic_dataset(cfg: &SynthConfig, seed: u64) -> Result<SyntheticDataset> {
    cfg.validate()?;
    let prototypes = make_prototypes(cfg, seed);
    let text = make_text(cfg, seed, &prototypes)?;
    let confusers = default_confusers(cfg);
    let scenes = (0..cfg.scene_count).map(|i| make_scene(cfg, seed, i)).collect::<Result<Vec<_>>>()?;
    Ok(SyntheticDataset { config: cfg.clone(), seed, prototypes, confusers, text, scenes })
}

/// Small class `L + j` is confused with large class `j mod L`.
pub fn default_confusers(cfg: &SynthConfig) -> Vec<Option<u8>> {
    let l = cfg.large_classes();
    (0..cfg.class_count).map(|c| if c >= l { Some(((c - l) % l) as u8) } else { None }).collect()
}

fn make_prototypes(cfg: &SynthConfig, seed: u64) -> Vec<f64> {
    let (c, d) = (cfg.class_count, cfg.dim);
    let min_cos = libm::cos(MIN_PROTOTYPE_ANGLE_DEG.to_radians());
    let mut attempt = 0u64;
    loop {
        let mut rng = CounterRng::keyed(seed, &[purpose::PROTOTYPES, attempt]);
        let mut p = Vec::with_capacity(c * d);
        for _ in 0..c {
            let v: Vec<f64> = (0..d).map(|_| rng.normal()).collect();
            let n = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
            p.extend(v.iter().map(|x| x / n));
        }
        let ok = (0..c).all(|a| {
            (a + 1..c).all(|b| {
                let cos: f64 = (0..d).map(|k| p[a * d + k] * p[b * d + k]).sum();
                cos.abs() < min_cos
            })
        });
        if ok {
            return p;
        }
        attempt += 1;
    }
}

fn make_text(cfg: &SynthConfig, seed: u64, prototypes: &[f64]) -> Result<TextEmbeddingSet> {
    let (c, d) = (cfg.class_count, cfg.dim);
    let mut attempt = 0u64;
    loop {
        let mut rng = CounterRng::keyed(seed, &[purpose::TEXT, attempt]);
        let mut t = Vec::with_capacity(c * d);
        for k in 0..c {
            let v: Vec<f64> = (0..d).map(|j| prototypes[k * d + j] + cfg.text_noise * rng.normal()).collect();
            let n = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>()).max(1e-12);
            t.extend(v.iter().map(|x| (x / n) as f32));
        }
        let text = TextEmbeddingSet::new(c, d, t)?;
        // every noiseless prototype must map to its own class
        let ok = (0..c).all(|k| {
            let f: Vec<f32> = prototypes[k * d..(k + 1) * d].iter().map(|&x| x as f32).collect();
            let fm = FeatureMap::new(1, 1, d, f).expect("prototype is finite");
            crate::maskgen::cosine_pseudo_mask(&fm, &text, None).map(|m| m.labels.data()[0] as usize == k).unwrap_or(false)
        });
        if ok || attempt > 1000 {
            return Ok(text);
        }
        attempt += 1;
    }
}

fn make_scene(cfg: &SynthConfig, seed: u64, index: usize) -> Result<SyntheticScene> {
    let mut rng = CounterRng::keyed(seed, &[purpose::SYNTH, index as u64]);
    let (w, h, s) = (cfg.width, cfg.height, cfg.stride);
    let (bw, bh) = (w / s, h / s);
    let large = cfg.large_classes();

    let n_regions = rng.range_inclusive(cfg.regions_min, cfg.regions_max);
    let seeds: Vec<(f64, f64, u8)> = (0..n_regions)
        .map(|_| (rng.uniform(0.0, bw as f64), rng.uniform(0.0, bh as f64), rng.below(large as u64) as u8))
        .collect();
    let mut gt = LabelMap::filled(w, h, 0);
    for by in 0..bh {
        for bx in 0..bw {
            let (cx, cy) = (bx as f64 + 0.5, by as f64 + 0.5);
            let mut best = (f64::INFINITY, 0u8);
            for &(sx, sy, class) in &seeds {
                let d = (sx - cx) * (sx - cx) + (sy - cy) * (sy - cy);
                if d < best.0 {
                    best = (d, class);
                }
            }
            for y in by * s..(by + 1) * s {
                for x in bx * s..(bx + 1) * s {
                    gt.set(x, y, best.1);
                }
            }
        }
    }

    let mut objects: Vec<SmallObject> = Vec::new();
    if cfg.small_classes > 0 && cfg.objects_max > 0 {
        let n_obj = rng.range_inclusive(cfg.objects_min, cfg.objects_max);
        let mut tries = 0;
        while objects.len() < n_obj && tries < 200 {
            tries += 1;
            let size = cfg.object_sizes[rng.below(cfg.object_sizes.len() as u64) as usize];
            let x = rng.range_inclusive(0, (w - size) / s) * s;
            let y = rng.range_inclusive(0, (h - size) / s) * s;
            let class = (large + rng.below(cfg.small_classes as u64) as usize) as u8;
            let cand = SmallObject { class, x, y, w: size, h: size };
            // keep one block of clearance so objects never touch
            let clash = objects.iter().any(|o| {
                cand.x < o.x + o.w + s && o.x < cand.x + cand.w + s && cand.y < o.y + o.h + s && o.y < cand.y + cand.h + s
            });
            if !clash {
                objects.push(cand);
            }
        }
        if objects.len() < cfg.objects_min {
            return Err(Error::Geometry(format!(
                "could not place {} non-overlapping objects in a {w}x{h} frame",
                cfg.objects_min
            )));
        }
        for o in &objects {
            for y in o.y..o.y + o.h {
                for x in o.x..o.x + o.w {
                    gt.set(x, y, o.class);
                }
            }
        }
    }

    let mut scene = SyntheticScene::from_parts(format!("scene{index:04}"), gt, objects);
    scene.noisy_mask = blob_noise(cfg, seed, index, &scene.ground_truth, &scene.present);
    Ok(scene)
}

/// Relabels random ellipses until at least `blob_fraction` of the pixels differ
/// from the ground truth.
fn blob_noise(cfg: &SynthConfig, seed: u64, index: usize, gt: &LabelMap, present: &ClassSet) -> LabelMap {
    let mut noisy = gt.clone();
    if cfg.blob_fraction <= 0.0 {
        return noisy;
    }
    let mut rng = CounterRng::keyed(seed, &[purpose::BLOBS, index as u64]);
    let target = libm::ceil(cfg.blob_fraction * gt.len() as f64) as usize;
    let pool: Vec<u8> = match cfg.blob_classes {
        BlobClasses::Present => present.iter().map(|c| c as u8).collect(),
        BlobClasses::All => (0..cfg.class_count as u8).collect(),
    };
    let (w, h) = (gt.width(), gt.height());
    let mut changed = 0usize;
    let mut guard = 0;
    while changed < target && guard < 100_000 {
        guard += 1;
        let cx = rng.uniform(0.0, w as f64);
        let cy = rng.uniform(0.0, h as f64);
        let a = rng.uniform(cfg.blob_radius_min, cfg.blob_radius_max);
        let b = rng.uniform(cfg.blob_radius_min, cfg.blob_radius_max);
        let theta = rng.uniform(0.0, core::f64::consts::PI);
        let class = pool[rng.below(pool.len() as u64) as usize];
        let (st, ct) = (libm::sin(theta), libm::cos(theta));
        let r = a.max(b);
        let x_lo = libm::floor(cx - r).max(0.0) as usize;
        let x_hi = (libm::ceil(cx + r) as usize).min(w - 1);
        let y_lo = libm::floor(cy - r).max(0.0) as usize;
        let y_hi = (libm::ceil(cy + r) as usize).min(h - 1);
        for y in y_lo..=y_hi {
            for x in x_lo..=x_hi {
                let dx = x as f64 + 0.5 - cx;
                let dy = y as f64 + 0.5 - cy;
                let u = (dx * ct + dy * st) / a;
                let v = (-dx * st + dy * ct) / b;
                if u * u + v * v <= 1.0 {
                    let before = noisy.get(x, y) != gt.get(x, y);
                    noisy.set(x, y, class);
                    let after = class != gt.get(x, y);
                    match (before, after) {
                        (false, true) => changed += 1,
                        (true, false) => changed -= 1,
                        _ => {}
                    }
                }
            }
        }
    }
    noisy
}

/// Feature provider over a [`SyntheticDataset`].
#[derive(Debug, Clone, Copy)]
pub struct SyntheticProvider<'a> {
    pub dataset: &'a SyntheticDataset,
    /// Key for feature noise; independent of the dataset's generation seed.
    pub seed: u64,
}

impl<'a> SyntheticProvider<'a> {
    pub fn new(dataset: &'a SyntheticDataset, seed: u64) -> Self {
        Self { dataset, seed }
    }

    /// Swap probability for a cell of `object` seen through `spec`.
    pub fn confusion_probability(&self, object: &SmallObject, spec: &CropSpec) -> f64 {
        let cfg = &self.dataset.config;
        let visible = object.overlap(spec) as f64;
        if visible == 0.0 {
            return 0.0;
        }
        let fov = (cfg.width * cfg.height) as f64 / (spec.crop_w * spec.crop_h) as f64;
        let apparent = visible * spec.resize_ratio * spec.resize_ratio * fov;
        cfg.confusion_p0 * (cfg.confusion_a0 / apparent).min(1.0)
    }

    fn view_key(spec: &CropSpec) -> u64 {
        [spec.x0 as u64, spec.y0 as u64, spec.crop_w as u64, spec.crop_h as u64, spec.resize_ratio.to_bits()]
            .iter()
            .fold(0x5EED, |k, &w| fold(k, w))
    }
}

impl FeatureProvider for SyntheticProvider<'_> {
    fn scene_count(&self) -> usize {
        self.dataset.scenes.len()
    }

    fn scene_id(&self, scene: usize) -> String {
        self.dataset.scenes.get(scene).map(|s| s.id.clone()).unwrap_or_else(|| format!("#{scene}"))
    }

    fn frame_size(&self, scene: usize) -> Result<(usize, usize)> {
        let s = self.dataset.scenes.get(scene).ok_or_else(|| Error::MissingView {
            scene: format!("#{scene}"),
            view: "global".into(),
        })?;
        Ok((s.ground_truth.width(), s.ground_truth.height()))
    }

    fn stride(&self) -> usize {
        self.dataset.config.stride
    }

    fn dim(&self) -> usize {
        self.dataset.config.dim
    }

    fn features(&self, scene: usize, view: Option<&CropSpec>, channel: FeatureChannel) -> Result<FeatureMap> {
        let (fw, fh) = self.frame_size(scene)?;
        let sc = &self.dataset.scenes[scene];
        let cfg = &self.dataset.config;
        let spec = view.copied().unwrap_or_else(|| CropSpec::full(fw, fh));
        spec.validate(fw, fh)?;
        let (gw, gh) = spec.grid_size(cfg.stride);
        let d = cfg.dim;
        let chan = match channel {
            FeatureChannel::PseudoLabel => purpose::PROVIDER,
            FeatureChannel::ModelInput => purpose::INPUT,
        };
        let key = Self::view_key(&spec);
        let confuse = channel == FeatureChannel::PseudoLabel && cfg.confusion;
        let mut data = Vec::with_capacity(gw * gh * d);
        for gy in 0..gh {
            let y = spec.y0 + gy * spec.crop_h / gh;
            for gx in 0..gw {
                let x = spec.x0 + gx * spec.crop_w / gw;
                let cell = (gy * gw + gx) as u64;
                let mut rng = CounterRng::keyed(self.seed, &[chan, scene as u64, key, cell]);
                let mut class = sc.ground_truth.get(x, y);
                if confuse {
                    if let Some(conf) = self.dataset.confusers.get(class as usize).copied().flatten() {
                        if let Some(obj) = sc.objects.iter().find(|o| o.contains(x, y)) {
                            if rng.bernoulli(self.confusion_probability(obj, &spec)) {
                                class = conf;
                            }
                        }
                    }
                }
                let proto = &self.dataset.prototypes[class as usize * d..(class as usize + 1) * d];
                data.extend(proto.iter().map(|&p| (p + cfg.sigma * rng.normal()) as f32));
            }
        }
        FeatureMap::new(gh, gw, d, data)
    }
}
