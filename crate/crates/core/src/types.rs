//! Dense array types shared by every stage of the pipeline.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Label value excluded from every loss and from evaluation.
pub const IGNORE_INDEX: u8 = 255;

/// Maximum number of classes representable next to [`IGNORE_INDEX`].
pub const MAX_CLASSES: usize = 255;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassCatalog {
    names: Vec<String>,
    prompt_names: Vec<String>,
    palette: Vec<[u8; 3]>,
}

impl ClassCatalog {
    pub fn new(names: Vec<String>, prompt_names: Vec<String>, palette: Vec<[u8; 3]>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Empty("class catalog"));
        }
        if names.len() > MAX_CLASSES {
            return Err(Error::Config(format!(
                "{} classes exceed the maximum of {MAX_CLASSES}",
                names.len()
            )));
        }
        if prompt_names.len() != names.len() || palette.len() != names.len() {
            return Err(Error::Shape(format!(
                "catalog has {} names, {} prompt names and {} colors",
                names.len(),
                prompt_names.len(),
                palette.len()
            )));
        }
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() || prompt_names[i].is_empty() {
                return Err(Error::Config(format!("class {i} has an empty name")));
            }
            if names[..i].contains(n) {
                return Err(Error::Config(format!("duplicate class name {n:?}")));
            }
        }
        Ok(Self { names, prompt_names, palette })
    }

    /// Catalog with `C` generic classes `class0..` and a deterministic palette.
    pub fn generic(class_count: usize) -> Result<Self> {
        let names: Vec<String> = (0..class_count).map(|i| format!("class{i}")).collect();
        let palette = (0..class_count)
            .map(|i| {
                let h = crate::rng::splitmix64(i as u64);
                [h as u8, (h >> 8) as u8, (h >> 16) as u8]
            })
            .collect();
        Self::new(names.clone(), names, palette)
    }

    /// The 19 evaluated Cityscapes classes, with prompt renames applied
    /// (vegetation -> tree, terrain -> grass, person -> pedestrian).
    pub fn cityscapes() -> Self {
        const CLASSES: [(&str, [u8; 3]); 19] = [
            ("road", [128, 64, 128]),
            ("sidewalk", [244, 35, 232]),
            ("building", [70, 70, 70]),
            ("wall", [102, 102, 156]),
            ("fence", [190, 153, 153]),
            ("pole", [153, 153, 153]),
            ("traffic light", [250, 170, 30]),
            ("traffic sign", [220, 220, 0]),
            ("vegetation", [107, 142, 35]),
            ("terrain", [152, 251, 152]),
            ("sky", [70, 130, 180]),
            ("person", [220, 20, 60]),
            ("rider", [255, 0, 0]),
            ("car", [0, 0, 142]),
            ("truck", [0, 0, 70]),
            ("bus", [0, 60, 100]),
            ("train", [0, 80, 100]),
            ("motorcycle", [0, 0, 230]),
            ("bicycle", [119, 11, 32]),
        ];
        let names: Vec<String> = CLASSES.iter().map(|(n, _)| n.to_string()).collect();
        let prompts = names.iter().map(|n| prompt_rename(n).to_string()).collect();
        let palette = CLASSES.iter().map(|(_, c)| *c).collect();
        Self::new(names, prompts, palette).expect("static catalog is valid")
    }

    /// The 11 CamVid classes used for evaluation.
    pub fn camvid() -> Self {
        const CLASSES: [(&str, [u8; 3]); 11] = [
            ("sky", [128, 128, 128]),
            ("building", [128, 0, 0]),
            ("pole", [192, 192, 128]),
            ("road", [128, 64, 128]),
            ("sidewalk", [0, 0, 192]),
            ("tree", [128, 128, 0]),
            ("sign symbol", [192, 128, 128]),
            ("fence", [64, 64, 128]),
            ("car", [64, 0, 128]),
            ("pedestrian", [64, 64, 0]),
            ("bicyclist", [0, 128, 192]),
        ];
        let names: Vec<String> = CLASSES.iter().map(|(n, _)| n.to_string()).collect();
        let prompts = names.clone();
        let palette = CLASSES.iter().map(|(_, c)| *c).collect();
        Self::new(names, prompts, palette).expect("static catalog is valid")
    }

    pub fn class_count(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn prompt_names(&self) -> &[String] {
        &self.prompt_names
    }

    pub fn palette(&self) -> &[[u8; 3]] {
        &self.palette
    }

    pub fn ignore_index(&self) -> u8 {
        IGNORE_INDEX
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }
}

/// Prompt name used for a dataset class name when querying text embeddings.
pub fn prompt_rename(name: &str) -> &str {
    match name {
        "vegetation" => "tree",
        "terrain" => "grass",
        "person" => "pedestrian",
        other => other,
    }
}

/// Set of class indices `< 256`, stored as a bitset.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct ClassSet([u64; 4]);

impl ClassSet {
    pub const fn new() -> Self {
        Self([0; 4])
    }

    /// `{0, .., n-1}`.
    pub fn full(n: usize) -> Self {
        let mut s = Self::new();
        for c in 0..n.min(MAX_CLASSES) {
            s.insert(c);
        }
        s
    }

    pub fn insert(&mut self, c: usize) {
        debug_assert!(c < 256);
        self.0[c >> 6] |= 1 << (c & 63);
    }

    pub fn remove(&mut self, c: usize) {
        self.0[c >> 6] &= !(1 << (c & 63));
    }

    pub fn contains(&self, c: usize) -> bool {
        c < 256 && self.0[c >> 6] & (1 << (c & 63)) != 0
    }

    pub fn len(&self) -> usize {
        self.0.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.0 == [0; 4]
    }

    /// Ascending iteration.
    pub fn iter(&self) -> impl Iterator<Item = usize> + '_ {
        (0..256).filter(move |&c| self.contains(c))
    }

    pub fn max(&self) -> Option<usize> {
        (0..256).rev().find(|&c| self.contains(c))
    }

    /// Error unless non-empty and every member is `< class_count`.
    pub fn check(&self, class_count: usize) -> Result<()> {
        if self.is_empty() {
            return Err(Error::ClassSet("allowed class set is empty".into()));
        }
        match self.max() {
            Some(m) if m >= class_count => Err(Error::ClassSet(format!(
                "class {m} is not below the class count {class_count}"
            ))),
            _ => Ok(()),
        }
    }
}

impl FromIterator<usize> for ClassSet {
    fn from_iter<I: IntoIterator<Item = usize>>(iter: I) -> Self {
        let mut s = Self::new();
        for c in iter {
            s.insert(c);
        }
        s
    }
}

/// H x W grid of class indices, row-major; [`IGNORE_INDEX`] marks unlabeled pixels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl LabelMap {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Shape(format!("label map {width}x{height} is empty")));
        }
        if data.len() != width * height {
            return Err(Error::Shape(format!(
                "label map {width}x{height} needs {} values, got {}",
                width * height,
                data.len()
            )));
        }
        Ok(Self { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        assert!(width > 0 && height > 0);
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.data[y * self.width + x] = v;
    }

    /// Checks every value is below `class_count` or is the ignore index,
    /// reporting the first offending pixel.
    pub fn validate(&self, class_count: usize) -> Result<()> {
        for (i, &v) in self.data.iter().enumerate() {
            if v != IGNORE_INDEX && v as usize >= class_count {
                return Err(Error::LabelOutOfRange {
                    x: i % self.width,
                    y: i / self.width,
                    value: v as u32,
                    class_count,
                });
            }
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &LabelMap) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::Shape(format!(
                "label maps {}x{} and {}x{} differ",
                self.width, self.height, other.width, other.height
            )));
        }
        Ok(())
    }

    /// Sub-rectangle copy.
    pub fn crop(&self, x0: usize, y0: usize, w: usize, h: usize) -> Result<LabelMap> {
        if w == 0 || h == 0 || x0 + w > self.width || y0 + h > self.height {
            return Err(Error::Geometry(format!(
                "crop {w}x{h}+{x0}+{y0} outside {}x{}",
                self.width, self.height
            )));
        }
        let mut data = Vec::with_capacity(w * h);
        for y in y0..y0 + h {
            let row = y * self.width;
            data.extend_from_slice(&self.data[row + x0..row + x0 + w]);
        }
        Ok(LabelMap { width: w, height: h, data })
    }

    /// Count of non-ignored pixels.
    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|&&v| v != IGNORE_INDEX).count()
    }
}

/// Nearest-neighbour resize: output `(x, y)` reads input
/// `(floor(x * W / newW), floor(y * H / newH))`.
pub fn resize_labels_nearest(m: &LabelMap, new_w: usize, new_h: usize) -> Result<LabelMap> {
    if new_w == 0 || new_h == 0 {
        return Err(Error::Geometry(format!("target size {new_w}x{new_h} is empty")));
    }
    let xs: Vec<usize> = (0..new_w).map(|x| x * m.width / new_w).collect();
    let mut data = Vec::with_capacity(new_w * new_h);
    for y in 0..new_h {
        let row = (y * m.height / new_h) * m.width;
        data.extend(xs.iter().map(|&sx| m.data[row + sx]));
    }
    Ok(LabelMap { width: new_w, height: new_h, data })
}

/// Hf x Wf grid of D-dimensional features, depth fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    dim: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || dim == 0 {
            return Err(Error::Shape(format!("feature map {height}x{width}x{dim} is empty")));
        }
        if data.len() != height * width * dim {
            return Err(Error::Shape(format!(
                "feature map {height}x{width}x{dim} needs {} values, got {}",
                height * width * dim,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Value(format!("non-finite feature at flat index {i}")));
        }
        Ok(Self { height, width, dim, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Feature vector of flat cell index `i = y * W + x`.
    #[inline]
    pub fn cell(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

/// C x D matrix of class text embeddings, one row per class.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbeddingSet {
    class_count: usize,
    dim: usize,
    data: Vec<f32>,
}

impl TextEmbeddingSet {
    pub fn new(class_count: usize, dim: usize, data: Vec<f32>) -> Result<Self> {
        if class_count == 0 || dim == 0 {
            return Err(Error::Shape(format!("text embeddings {class_count}x{dim} are empty")));
        }
        if class_count > MAX_CLASSES {
            return Err(Error::Shape(format!("{class_count} classes exceed {MAX_CLASSES}")));
        }
        if data.len() != class_count * dim {
            return Err(Error::Shape(format!(
                "text embeddings {class_count}x{dim} need {} values, got {}",
                class_count * dim,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Value("non-finite text embedding".into()));
        }
        for c in 0..class_count {
            let row = &data[c * dim..(c + 1) * dim];
            if row.iter().map(|&v| v as f64 * v as f64).sum::<f64>() <= 0.0 {
                return Err(Error::Value(format!("text embedding row {c} has zero norm")));
            }
        }
        Ok(Self { class_count, dim, data })
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn row(&self, c: usize) -> &[f32] {
        &self.data[c * self.dim..(c + 1) * self.dim]
    }
}

/// H x W grid of per-pixel class distributions, class fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    height: usize,
    width: usize,
    class_count: usize,
    data: Vec<f64>,
}

impl ProbabilityMap {
    /// Validates range and per-pixel normalization (tolerance 1e-6).
    pub fn new(height: usize, width: usize, class_count: usize, data: Vec<f64>) -> Result<Self> {
        let pm = Self::new_unchecked(height, width, class_count, data)?;
        for (i, px) in pm.data.chunks_exact(class_count).enumerate() {
            if px.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::Value(format!("probability outside [0,1] at cell {i}")));
            }
            let s: f64 = px.iter().sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::Value(format!("probabilities at cell {i} sum to {s}")));
            }
        }
        Ok(pm)
    }

    /// Shape checks only; used for softmax outputs that are normalized by construction.
    pub(crate) fn new_unchecked(
        height: usize,
        width: usize,
        class_count: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        if height == 0 || width == 0 || class_count == 0 {
            return Err(Error::Shape(format!(
                "probability map {height}x{width}x{class_count} is empty"
            )));
        }
        if data.len() != height * width * class_count {
            return Err(Error::Shape(format!(
                "probability map {height}x{width}x{class_count} needs {} values, got {}",
                height * width * class_count,
                data.len()
            )));
        }
        Ok(Self { height, width, class_count, data })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn cells(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn cell(&self, i: usize) -> &[f64] {
        &self.data[i * self.class_count..(i + 1) * self.class_count]
    }

    pub fn same_grid(&self, m: &LabelMap) -> Result<()> {
        if self.width != m.width() || self.height != m.height() {
            return Err(Error::Shape(format!(
                "probability map {}x{} vs label map {}x{}",
                self.width,
                self.height,
                m.width(),
                m.height()
            )));
        }
        Ok(())
    }
}

/// Smallest index attaining the maximum of `values` restricted to `allowed`.
#[inline]
pub(crate) fn argmax_in<T: PartialOrd + Copy>(values: &[T], allowed: Option<&ClassSet>) -> usize {
    let mut best: Option<(usize, T)> = None;
    for (c, &v) in values.iter().enumerate() {
        if let Some(a) = allowed {
            if !a.contains(c) {
                continue;
            }
        }
        match best {
            Some((_, bv)) if !(v > bv) => {}
            _ => best = Some((c, v)),
        }
    }
    best.map(|(c, _)| c).unwrap_or(0)
}

/// Per-pixel argmax over `allowed` classes (all when `None`), ties to the lowest index.
pub fn argmax_labels(p: &ProbabilityMap, allowed: Option<&ClassSet>) -> Result<LabelMap> {
    if let Some(a) = allowed {
        a.check(p.class_count)?;
    }
    let data = p
        .data
        .chunks_exact(p.class_count)
        .map(|px| argmax_in(px, allowed) as u8)
        .collect();
    LabelMap::new(p.width, p.height, data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;
    use proptest::prelude::*;

    fn lm(w: usize, h: usize, d: &[u8]) -> LabelMap {
        LabelMap::new(w, h, d.to_vec()).unwrap()
    }

    #[test]
    fn catalog_rejects_duplicates_and_mismatched_lengths() {
        let n = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        assert!(ClassCatalog::new(n(&["a", "a"]), n(&["a", "b"]), vec![[0; 3]; 2]).is_err());
        assert!(ClassCatalog::new(n(&["a", "b"]), n(&["a"]), vec![[0; 3]; 2]).is_err());
        assert!(ClassCatalog::new(n(&["a", ""]), n(&["a", "b"]), vec![[0; 3]; 2]).is_err());
        let cs = ClassCatalog::cityscapes();
        assert_eq!(cs.class_count(), 19);
        let veg = cs.index_of("vegetation").unwrap();
        assert_eq!(cs.prompt_names()[veg], "tree");
        assert_eq!(cs.prompt_names()[cs.index_of("terrain").unwrap()], "grass");
        assert_eq!(cs.prompt_names()[cs.index_of("person").unwrap()], "pedestrian");
        assert_eq!(ClassCatalog::camvid().class_count(), 11);
        assert_eq!(cs.ignore_index(), 255);
    }

    #[test]
    fn validate_names_offending_pixel() {
        let m = lm(2, 2, &[0, 1, 200, 255]);
        match m.validate(19) {
            Err(Error::LabelOutOfRange { x: 0, y: 1, value: 200, .. }) => {}
            other => panic!("{other:?}"),
        }
        assert!(lm(2, 2, &[0, 1, 18, 255]).validate(19).is_ok());
    }

    #[test]
    fn resize_constant_identity_and_blocks() {
        let one = lm(1, 1, &[5]);
        assert_eq!(resize_labels_nearest(&one, 3, 3).unwrap().data(), &[5; 9]);
        let m = lm(2, 2, &[0, 1, 2, 3]);
        assert_eq!(resize_labels_nearest(&m, 2, 2).unwrap(), m);
        let up = resize_labels_nearest(&m, 4, 4).unwrap();
        assert_eq!(
            up.data(),
            &[0, 0, 1, 1, 0, 0, 1, 1, 2, 2, 3, 3, 2, 2, 3, 3]
        );
        assert!(resize_labels_nearest(&m, 0, 3).is_err());
        let ig = lm(1, 1, &[IGNORE_INDEX]);
        assert!(resize_labels_nearest(&ig, 2, 2).unwrap().data().iter().all(|&v| v == 255));
    }

    #[test]
    fn argmax_examples() {
        let p = ProbabilityMap::new(1, 1, 3, vec![0.2, 0.5, 0.3]).unwrap();
        assert_eq!(argmax_labels(&p, None).unwrap().data(), &[1]);
        let p = ProbabilityMap::new(1, 1, 3, vec![0.4, 0.4, 0.2]).unwrap();
        assert_eq!(argmax_labels(&p, None).unwrap().data(), &[0]);
        let p = ProbabilityMap::new(1, 1, 3, vec![0.5, 0.3, 0.2]).unwrap();
        let allowed: ClassSet = [1, 2].into_iter().collect();
        assert_eq!(argmax_labels(&p, Some(&allowed)).unwrap().data(), &[1]);
        assert!(argmax_labels(&p, Some(&ClassSet::new())).is_err());
        let bad: ClassSet = [3].into_iter().collect();
        assert!(argmax_labels(&p, Some(&bad)).is_err());
    }

    #[test]
    fn probability_map_validation() {
        assert!(ProbabilityMap::new(1, 1, 2, vec![0.5, 0.6]).is_err());
        assert!(ProbabilityMap::new(1, 1, 2, vec![1.5, -0.5]).is_err());
        assert!(ProbabilityMap::new(1, 1, 2, vec![0.5]).is_err());
    }

    #[test]
    fn text_embeddings_reject_zero_rows() {
        assert!(TextEmbeddingSet::new(2, 2, vec![1.0, 0.0, 0.0, 0.0]).is_err());
        assert!(TextEmbeddingSet::new(2, 2, vec![1.0, 0.0, 0.0, 1.0]).is_ok());
    }

    fn random_probs(seed: u64, h: usize, w: usize, c: usize) -> ProbabilityMap {
        let mut r = CounterRng::new(seed);
        let mut data = Vec::new();
        for _ in 0..h * w {
            let raw: Vec<f64> = (0..c).map(|_| r.next_f64() + 1e-3).collect();
            let s: f64 = raw.iter().sum();
            data.extend(raw.iter().map(|v| v / s));
        }
        ProbabilityMap::new(h, w, c, data).unwrap()
    }

    proptest! {
        #[test]
        fn argmax_full_set_agrees_with_singleton_of_winner(seed in 0u64..10_000) {
            let p = random_probs(seed, 3, 4, 5);
            let full = argmax_labels(&p, None).unwrap();
            let all = argmax_labels(&p, Some(&ClassSet::full(5))).unwrap();
            prop_assert_eq!(&full, &all);
            for i in 0..p.cells() {
                let k = full.data()[i] as usize;
                let single: ClassSet = [k].into_iter().collect();
                let px = ProbabilityMap::new(1, 1, 5, p.cell(i).to_vec()).unwrap();
                prop_assert_eq!(argmax_labels(&px, Some(&single)).unwrap().data()[0] as usize, k);
            }
        }

        #[test]
        fn nearest_resize_composes_over_integer_factors(
            w in 1usize..6, h in 1usize..6, a in 1usize..4, b in 1usize..4, seed in 0u64..1000
        ) {
            let mut r = CounterRng::new(seed);
            let m = LabelMap::new(w, h, (0..w * h).map(|_| r.below(4) as u8).collect()).unwrap();
            let once = resize_labels_nearest(&m, w * a * b, h * a * b).unwrap();
            let twice = resize_labels_nearest(&resize_labels_nearest(&m, w * a, h * a).unwrap(), w * a * b, h * a * b).unwrap();
            prop_assert_eq!(once, twice);
        }
    }
}
