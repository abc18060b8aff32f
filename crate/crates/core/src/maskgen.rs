//! Pseudo-mask generation by cosine argmax against class text embeddings,
//! local view sampling, and composition of local masks into the global frame.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::CounterRng;
use crate::types::{resize_labels_nearest, ClassSet, FeatureMap, LabelMap, TextEmbeddingSet, IGNORE_INDEX};

/// Default feature stride (ViT-B/16 patch size).
pub const DEFAULT_STRIDE: usize = 16;

/// Crop rectangle in the global frame plus the resize ratio applied to it
/// before feature extraction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropSpec {
    pub x0: usize,
    pub y0: usize,
    pub crop_w: usize,
    pub crop_h: usize,
    pub resize_ratio: f64,
}

impl CropSpec {
    /// The whole frame at its native scale.
    pub fn full(width: usize, height: usize) -> Self {
        Self { x0: 0, y0: 0, crop_w: width, crop_h: height, resize_ratio: 1.0 }
    }

    pub fn validate(&self, frame_w: usize, frame_h: usize) -> Result<()> {
        if self.crop_w == 0 || self.crop_h == 0 {
            return Err(Error::Geometry(format!("empty crop {}x{}", self.crop_w, self.crop_h)));
        }
        if self.x0 + self.crop_w > frame_w || self.y0 + self.crop_h > frame_h {
            return Err(Error::Geometry(format!(
                "crop {}x{}+{}+{} does not fit a {frame_w}x{frame_h} frame",
                self.crop_w, self.crop_h, self.x0, self.y0
            )));
        }
        if !(self.resize_ratio.is_finite() && self.resize_ratio > 0.0) {
            return Err(Error::Geometry(format!("resize ratio {} is not positive", self.resize_ratio)));
        }
        Ok(())
    }

    /// View size in pixels after resizing: `(round(w * r), round(h * r))`.
    pub fn view_size(&self) -> (usize, usize) {
        let w = libm::round(self.crop_w as f64 * self.resize_ratio) as usize;
        let h = libm::round(self.crop_h as f64 * self.resize_ratio) as usize;
        (w.max(1), h.max(1))
    }

    /// Feature grid `(width, height)` for a given stride; at least one cell per axis.
    pub fn grid_size(&self, stride: usize) -> (usize, usize) {
        let (w, h) = self.view_size();
        ((w / stride).max(1), (h / stride).max(1))
    }

    /// Ratio in thousandths, as used in view file names.
    pub fn ratio_milli(&self) -> u64 {
        libm::round(self.resize_ratio * 1000.0) as u64
    }

    /// `<x0>_<y0>_<w>_<h>_<r_milli>`.
    pub fn file_stem(&self) -> String {
        format!("{}_{}_{}_{}_{}", self.x0, self.y0, self.crop_w, self.crop_h, self.ratio_milli())
    }

    /// Inverse of [`CropSpec::file_stem`].
    pub fn parse_stem(stem: &str) -> Option<Self> {
        let parts: Vec<u64> = stem.split('_').map(|p| p.parse().ok()).collect::<Option<_>>()?;
        if parts.len() != 5 {
            return None;
        }
        Some(Self {
            x0: parts[0] as usize,
            y0: parts[1] as usize,
            crop_w: parts[2] as usize,
            crop_h: parts[3] as usize,
            resize_ratio: parts[4] as f64 / 1000.0,
        })
    }
}

/// Local view sampling parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CropConfig {
    pub crop_w: usize,
    pub crop_h: usize,
    pub r_min: f64,
    pub r_max: f64,
}

impl Default for CropConfig {
    /// 512 x 512 patches, resize ratio uniform in [1, 2].
    fn default() -> Self {
        Self { crop_w: 512, crop_h: 512, r_min: 1.0, r_max: 2.0 }
    }
}

impl CropConfig {
    /// Vertically long patch (256 wide, 512 tall).
    pub fn vertical() -> Self {
        Self { crop_w: 256, crop_h: 512, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.crop_w == 0 || self.crop_h == 0 {
            return Err(Error::Config("crop size must be positive".into()));
        }
        if !(self.r_min > 0.0 && self.r_min <= self.r_max && self.r_max.is_finite()) {
            return Err(Error::Config(format!(
                "resize range [{}, {}] must satisfy 0 < r_min <= r_max",
                self.r_min, self.r_max
            )));
        }
        Ok(())
    }
}

/// Uniform top-left placement inside the frame and a uniform resize ratio.
/// Draw order: x0, y0, ratio.
pub fn sample_crop(rng: &mut CounterRng, global_w: usize, global_h: usize, cfg: &CropConfig) -> Result<CropSpec> {
    cfg.validate()?;
    if cfg.crop_w > global_w || cfg.crop_h > global_h {
        return Err(Error::Geometry(format!(
            "crop {}x{} is larger than the {global_w}x{global_h} frame",
            cfg.crop_w, cfg.crop_h
        )));
    }
    let x0 = rng.range_inclusive(0, global_w - cfg.crop_w);
    let y0 = rng.range_inclusive(0, global_h - cfg.crop_h);
    let resize_ratio = if cfg.r_min == cfg.r_max { cfg.r_min } else { rng.uniform(cfg.r_min, cfg.r_max) };
    Ok(CropSpec { x0, y0, crop_w: cfg.crop_w, crop_h: cfg.crop_h, resize_ratio })
}

/// Which feature stream a provider is asked for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FeatureChannel {
    /// Features matched against text embeddings to build pseudo-masks.
    PseudoLabel,
    /// Features fed to the segmentation head.
    ModelInput,
}

/// Source of dense features for a scene, either for the global view
/// (`view = None`) or for a crop.
///
/// Implementations must be deterministic for a fixed `(scene, view)` and
/// return a grid of `view.grid_size(self.stride())` cells.
pub trait FeatureProvider {
    fn scene_count(&self) -> usize;
    fn scene_id(&self, scene: usize) -> String;
    /// Global frame `(width, height)` in pixels.
    fn frame_size(&self, scene: usize) -> Result<(usize, usize)>;
    fn stride(&self) -> usize;
    fn dim(&self) -> usize;
    fn features(&self, scene: usize, view: Option<&CropSpec>, channel: FeatureChannel) -> Result<FeatureMap>;
}

/// Pseudo-labeling features of a crop, checked against the expected grid size.
pub fn local_view_features<P: FeatureProvider + ?Sized>(
    provider: &P,
    scene: usize,
    spec: &CropSpec,
) -> Result<FeatureMap> {
    let (fw, fh) = provider.frame_size(scene)?;
    spec.validate(fw, fh)?;
    let f = provider.features(scene, Some(spec), FeatureChannel::PseudoLabel)?;
    let (gw, gh) = spec.grid_size(provider.stride());
    if f.width() != gw || f.height() != gh {
        return Err(Error::Shape(format!(
            "view {} of scene {} produced a {}x{} grid, expected {gw}x{gh}",
            spec.file_stem(),
            provider.scene_id(scene),
            f.width(),
            f.height()
        )));
    }
    Ok(f)
}

/// Pseudo-mask at feature-grid resolution and the number of zero-norm cells
/// that were set to the ignore index.
#[derive(Debug, Clone, PartialEq)]
pub struct CosineMask {
    pub labels: LabelMap,
    pub zero_norm_cells: usize,
}

/// Per cell, the allowed class whose text embedding has the highest cosine
/// similarity with the cell's feature; ties go to the lowest class index.
pub fn cosine_pseudo_mask(
    features: &FeatureMap,
    text: &TextEmbeddingSet,
    allowed: Option<&ClassSet>,
) -> Result<CosineMask> {
    if features.dim() != text.dim() {
        return Err(Error::Shape(format!(
            "feature dim {} does not match text embedding dim {}",
            features.dim(),
            text.dim()
        )));
    }
    let c = text.class_count();
    if let Some(a) = allowed {
        a.check(c)?;
    }
    let classes: Vec<usize> = match allowed {
        Some(a) => a.iter().collect(),
        None => (0..c).collect(),
    };
    let text_norms: Vec<f64> = (0..c).map(|k| norm(text.row(k))).collect();
    let mut zero_norm_cells = 0;
    let mut data = Vec::with_capacity(features.cells());
    for i in 0..features.cells() {
        let f = features.cell(i);
        let fnorm = norm(f);
        if fnorm == 0.0 {
            zero_norm_cells += 1;
            data.push(IGNORE_INDEX);
            continue;
        }
        let mut best = (classes[0], f64::NEG_INFINITY);
        for &k in &classes {
            let cos = dot(f, text.row(k)) / (fnorm * text_norms[k]);
            if cos > best.1 {
                best = (k, cos);
            }
        }
        data.push(best.0 as u8);
    }
    Ok(CosineMask { labels: LabelMap::new(features.width(), features.height(), data)?, zero_norm_cells })
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

fn norm(a: &[f32]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// Writes a view-resolution local mask back into global coordinates.
///
/// `local` must be `spec.view_size()`; it is resized (nearest) to the crop
/// rectangle and written over `base`, or over an all-ignore canvas when no
/// base is given.
pub fn paste_local_mask(
    canvas_w: usize,
    canvas_h: usize,
    base: Option<&LabelMap>,
    local: &LabelMap,
    spec: &CropSpec,
) -> Result<LabelMap> {
    spec.validate(canvas_w, canvas_h)?;
    let (vw, vh) = spec.view_size();
    if local.width() != vw || local.height() != vh {
        return Err(Error::Geometry(format!(
            "local mask is {}x{} but view {} is {vw}x{vh}",
            local.width(),
            local.height(),
            spec.file_stem()
        )));
    }
    let mut out = match base {
        Some(b) => {
            if b.width() != canvas_w || b.height() != canvas_h {
                return Err(Error::Geometry(format!(
                    "base mask {}x{} does not match canvas {canvas_w}x{canvas_h}",
                    b.width(),
                    b.height()
                )));
            }
            b.clone()
        }
        None => LabelMap::filled(canvas_w, canvas_h, IGNORE_INDEX),
    };
    let back = resize_labels_nearest(local, spec.crop_w, spec.crop_h)?;
    for y in 0..spec.crop_h {
        for x in 0..spec.crop_w {
            out.set(spec.x0 + x, spec.y0 + y, back.get(x, y));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn fm(h: usize, w: usize, d: usize, v: &[f32]) -> FeatureMap {
        FeatureMap::new(h, w, d, v.to_vec()).unwrap()
    }

    #[test]
    fn axis_aligned_embeddings() {
        let t = TextEmbeddingSet::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let f = fm(1, 2, 2, &[0.9, 0.1, 0.2, 0.8]);
        let m = cosine_pseudo_mask(&f, &t, None).unwrap();
        assert_eq!(m.labels.data(), &[0, 1]);
        assert_eq!(m.zero_norm_cells, 0);
    }

    #[test]
    fn cell_equal_to_scaled_text_row() {
        let t = TextEmbeddingSet::new(3, 3, vec![1.0, 2.0, 0.5, -1.0, 0.3, 0.2, 0.1, 0.1, 4.0]).unwrap();
        for k in 0..3 {
            for scale in [0.01f32, 1.0, 37.0] {
                let v: Vec<f32> = t.row(k).iter().map(|x| x * scale).collect();
                let m = cosine_pseudo_mask(&fm(1, 1, 3, &v), &t, None).unwrap();
                assert_eq!(m.labels.data()[0] as usize, k);
            }
        }
    }

    #[test]
    fn zero_norm_cells_are_ignored_and_counted() {
        let t = TextEmbeddingSet::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let m = cosine_pseudo_mask(&fm(1, 2, 2, &[0.0, 0.0, 1.0, 1.0]), &t, None).unwrap();
        assert_eq!(m.labels.data(), &[IGNORE_INDEX, 0]);
        assert_eq!(m.zero_norm_cells, 1);
    }

    #[test]
    fn errors() {
        let t = TextEmbeddingSet::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert!(cosine_pseudo_mask(&fm(1, 1, 3, &[1.0, 0.0, 0.0]), &t, None).is_err());
        let f = fm(1, 1, 2, &[1.0, 0.0]);
        assert!(cosine_pseudo_mask(&f, &t, Some(&ClassSet::new())).is_err());
        let one: ClassSet = [1].into_iter().collect();
        assert_eq!(cosine_pseudo_mask(&f, &t, Some(&one)).unwrap().labels.data(), &[1]);
    }

    #[test]
    fn forced_and_default_crops() {
        let cfg = CropConfig::default();
        assert_eq!((cfg.crop_w, cfg.crop_h, cfg.r_min, cfg.r_max), (512, 512, 1.0, 2.0));
        let mut r = CounterRng::new(1);
        for _ in 0..50 {
            let s = sample_crop(&mut r, 512, 512, &cfg).unwrap();
            assert_eq!((s.x0, s.y0), (0, 0));
            assert!((1.0..=2.0).contains(&s.resize_ratio));
        }
        assert!(sample_crop(&mut r, 511, 512, &cfg).is_err());
        let v = CropConfig::vertical();
        assert!(v.crop_h > v.crop_w);
    }

    #[test]
    fn stem_round_trip() {
        let s = CropSpec { x0: 3, y0: 40, crop_w: 64, crop_h: 32, resize_ratio: 1.25 };
        assert_eq!(s.file_stem(), "3_40_64_32_1250");
        assert_eq!(CropSpec::parse_stem(&s.file_stem()), Some(s));
        assert_eq!(CropSpec::parse_stem("1_2_3"), None);
    }

    #[test]
    fn paste_identity_and_quarters() {
        let local = LabelMap::new(2, 2, vec![0, 1, 2, 3]).unwrap();
        let out = paste_local_mask(2, 2, None, &local, &CropSpec::full(2, 2)).unwrap();
        assert_eq!(out, local);

        let quads = [[0u8; 4], [1; 4], [2; 4], [3; 4]];
        let mut canvas: Option<LabelMap> = None;
        for (i, q) in quads.iter().enumerate() {
            let spec = CropSpec { x0: (i % 2) * 2, y0: (i / 2) * 2, crop_w: 2, crop_h: 2, resize_ratio: 1.0 };
            let lm = LabelMap::new(2, 2, q.to_vec()).unwrap();
            canvas = Some(paste_local_mask(4, 4, canvas.as_ref(), &lm, &spec).unwrap());
        }
        assert_eq!(
            canvas.unwrap().data(),
            &[0, 0, 1, 1, 0, 0, 1, 1, 2, 2, 3, 3, 2, 2, 3, 3]
        );
    }

    #[test]
    fn paste_inverse_nearest_collapses_blocks() {
        let local = LabelMap::new(4, 4, (0..16).collect()).unwrap();
        let spec = CropSpec { x0: 1, y0: 0, crop_w: 2, crop_h: 2, resize_ratio: 2.0 };
        let out = paste_local_mask(3, 3, None, &local, &spec).unwrap();
        assert_eq!(out.data(), &[255, 0, 2, 255, 8, 10, 255, 255, 255]);
        let bad = LabelMap::new(3, 3, vec![0; 9]).unwrap();
        assert!(paste_local_mask(3, 3, None, &bad, &spec).is_err());
    }

    #[test]
    fn paste_then_read_back_crop() {
        let mut r = CounterRng::new(77);
        for _ in 0..20 {
            let cfg = CropConfig { crop_w: 5, crop_h: 3, r_min: 1.0, r_max: 2.0 };
            let spec = sample_crop(&mut r, 9, 7, &cfg).unwrap();
            let (vw, vh) = spec.view_size();
            let local = LabelMap::new(vw, vh, (0..vw * vh).map(|_| r.below(5) as u8).collect()).unwrap();
            let out = paste_local_mask(9, 7, None, &local, &spec).unwrap();
            let back = out.crop(spec.x0, spec.y0, spec.crop_w, spec.crop_h).unwrap();
            assert_eq!(back, resize_labels_nearest(&local, spec.crop_w, spec.crop_h).unwrap());
            assert_eq!(out.valid_count(), 15);
        }
    }

    #[test]
    fn crop_origin_is_uniform() {
        let mut rng = CounterRng::new(5);
        let cfg = CropConfig::default();
        let mut counts = vec![0usize; 513];
        for _ in 0..10_000 {
            counts[sample_crop(&mut rng, 1024, 512, &cfg).unwrap().x0] += 1;
        }
        let expected = 10_000.0 / 513.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // Wilson-Hilferty approximation of the 0.99 quantile with 512 dof
        let k = 512.0f64;
        let z = 2.326_347_874;
        let crit = k * (1.0 - 2.0 / (9.0 * k) + z * (2.0 / (9.0 * k)).sqrt()).powi(3);
        assert!(chi2 < crit, "chi2 {chi2} >= {crit}");
    }
}
