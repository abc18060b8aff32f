//! Plain-text `key=value` configuration.
//!
//! Blank lines and lines starting with `#` are skipped. Section headers
//! (`[name]`) are allowed; keys are read only from the unnamed leading
//! section and from `[config]`, so a run manifest can be passed back as a
//! config file.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use carbseg_core::maskgen::CropConfig;
use carbseg_core::synth::{BlobClasses, SynthConfig};
use carbseg_core::train::{Balance, LocalLabelSet, MaskSource, RegionNorm, TrainConfig, ViewMode, WeightMode};

use crate::error::{Error, IoContext, Result};

#[derive(Debug, Clone, Default)]
pub struct KeyValues {
    path: PathBuf,
    entries: BTreeMap<String, (usize, String)>,
}

const SYNTH_KEYS: &[&str] = &[
    "scene_count", "width", "height", "class_count", "small_classes", "dim", "stride", "sigma", "text_noise",
    "regions_min", "regions_max", "objects_min", "objects_max", "object_sizes", "confusion", "confusion_p0",
    "confusion_a0", "blob_fraction", "blob_radius_min", "blob_radius_max", "blob_classes",
];

const TRAIN_KEYS: &[&str] = &[
    "stage1_iters", "stage2_iters", "lr", "momentum", "crop_w", "crop_h", "r_min", "r_max", "queue_capacity",
    "view", "balance", "weight", "region_norm", "stage2_keep_plain", "mask_source", "local_label_set",
    "temperature", "bias", "eval_every",
];

impl KeyValues {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut entries = BTreeMap::new();
        let mut active = true;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            let lineno = i + 1;
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if line.starts_with('[') && line.ends_with(']') {
                active = &line[1..line.len() - 1] == "config";
                continue;
            }
            if !active {
                continue;
            }
            let bad = |msg: String| Error::Line { path: path.to_path_buf(), line: lineno, msg };
            let (k, v) = line.split_once('=').ok_or_else(|| bad(format!("expected key=value, found {line:?}")))?;
            let k = k.trim();
            if !SYNTH_KEYS.contains(&k) && !TRAIN_KEYS.contains(&k) {
                return Err(bad(format!("unknown key {k:?}")));
            }
            if entries.insert(k.to_string(), (lineno, v.trim().to_string())).is_some() {
                return Err(bad(format!("duplicate key {k:?}")));
            }
        }
        Ok(Self { path: path.to_path_buf(), entries })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).at(path)?;
        Self::parse(&text, path)
    }

    fn get<T: FromStr>(&self, key: &str, target: &mut T) -> Result<()> {
        if let Some((line, v)) = self.entries.get(key) {
            *target = v.parse().map_err(|_| Error::Line {
                path: self.path.clone(),
                line: *line,
                msg: format!("cannot parse {key}={v:?}"),
            })?;
        }
        Ok(())
    }

    fn get_with<T>(&self, key: &str, target: &mut T, f: impl Fn(&str) -> Option<T>) -> Result<()> {
        if let Some((line, v)) = self.entries.get(key) {
            *target = f(v).ok_or_else(|| Error::Line {
                path: self.path.clone(),
                line: *line,
                msg: format!("invalid value {key}={v:?}"),
            })?;
        }
        Ok(())
    }

    fn config_error(&self, e: carbseg_core::Error) -> Error {
        Error::invalid(&self.path, e)
    }

    pub fn synth_config(&self) -> Result<SynthConfig> {
        let mut c = SynthConfig::default();
        self.get("scene_count", &mut c.scene_count)?;
        self.get("width", &mut c.width)?;
        self.get("height", &mut c.height)?;
        self.get("class_count", &mut c.class_count)?;
        self.get("small_classes", &mut c.small_classes)?;
        self.get("dim", &mut c.dim)?;
        self.get("stride", &mut c.stride)?;
        self.get("sigma", &mut c.sigma)?;
        self.get("text_noise", &mut c.text_noise)?;
        self.get("regions_min", &mut c.regions_min)?;
        self.get("regions_max", &mut c.regions_max)?;
        self.get("objects_min", &mut c.objects_min)?;
        self.get("objects_max", &mut c.objects_max)?;
        self.get_with("object_sizes", &mut c.object_sizes, |v| {
            v.split(',').map(|s| s.trim().parse().ok()).collect()
        })?;
        self.get("confusion", &mut c.confusion)?;
        self.get("confusion_p0", &mut c.confusion_p0)?;
        self.get("confusion_a0", &mut c.confusion_a0)?;
        self.get("blob_fraction", &mut c.blob_fraction)?;
        self.get("blob_radius_min", &mut c.blob_radius_min)?;
        self.get("blob_radius_max", &mut c.blob_radius_max)?;
        self.get_with("blob_classes", &mut c.blob_classes, |v| match v {
            "present" => Some(BlobClasses::Present),
            "all" => Some(BlobClasses::All),
            _ => None,
        })?;
        c.validate().map_err(|e| self.config_error(e))?;
        Ok(c)
    }

    pub fn train_config(&self, seed: u64) -> Result<TrainConfig> {
        let mut c = TrainConfig { seed, ..TrainConfig::default() };
        self.get("stage1_iters", &mut c.stage1_iters)?;
        self.get("stage2_iters", &mut c.stage2_iters)?;
        self.get("lr", &mut c.lr)?;
        self.get("momentum", &mut c.momentum)?;
        self.get("crop_w", &mut c.crop.crop_w)?;
        self.get("crop_h", &mut c.crop.crop_h)?;
        self.get("r_min", &mut c.crop.r_min)?;
        self.get("r_max", &mut c.crop.r_max)?;
        self.get("queue_capacity", &mut c.queue_capacity)?;
        self.get_with("view", &mut c.view, |v| match v {
            "base" => Some(ViewMode::Base),
            "local" => Some(ViewMode::Local),
            "dual" => Some(ViewMode::Dual),
            _ => None,
        })?;
        self.get_with("balance", &mut c.balance, |v| match v {
            "plain" => Some(Balance::Plain),
            "carb" => Some(Balance::Carb),
            _ => None,
        })?;
        self.get_with("weight", &mut c.weight, |v| match v {
            "adaptive" => Some(WeightMode::Adaptive),
            _ => v.parse().ok().map(WeightMode::Fixed),
        })?;
        self.get_with("region_norm", &mut c.region_norm, |v| match v {
            "region" => Some(RegionNorm::Region),
            "pixel" => Some(RegionNorm::Pixel),
            _ => None,
        })?;
        self.get("stage2_keep_plain", &mut c.stage2_keep_plain)?;
        self.get_with("mask_source", &mut c.mask_source, |v| match v {
            "clip" => Some(MaskSource::Clip),
            "noisy_oracle" => Some(MaskSource::NoisyOracle),
            _ => None,
        })?;
        self.get_with("local_label_set", &mut c.local_label_set, |v| match v {
            "image" => Some(LocalLabelSet::Image),
            "crop" => Some(LocalLabelSet::Crop),
            _ => None,
        })?;
        self.get("temperature", &mut c.temperature)?;
        self.get("bias", &mut c.bias)?;
        self.get("eval_every", &mut c.eval_every)?;
        c.validate().map_err(|e| self.config_error(e))?;
        Ok(c)
    }
}

/// Every synthetic-data key with its resolved value.
pub fn synth_entries(c: &SynthConfig) -> Vec<(String, String)> {
    let sizes: Vec<String> = c.object_sizes.iter().map(|s| s.to_string()).collect();
    let blob = match c.blob_classes {
        BlobClasses::Present => "present",
        BlobClasses::All => "all",
    };
    [
        ("scene_count", c.scene_count.to_string()),
        ("width", c.width.to_string()),
        ("height", c.height.to_string()),
        ("class_count", c.class_count.to_string()),
        ("small_classes", c.small_classes.to_string()),
        ("dim", c.dim.to_string()),
        ("stride", c.stride.to_string()),
        ("sigma", c.sigma.to_string()),
        ("text_noise", c.text_noise.to_string()),
        ("regions_min", c.regions_min.to_string()),
        ("regions_max", c.regions_max.to_string()),
        ("objects_min", c.objects_min.to_string()),
        ("objects_max", c.objects_max.to_string()),
        ("object_sizes", sizes.join(",")),
        ("confusion", c.confusion.to_string()),
        ("confusion_p0", c.confusion_p0.to_string()),
        ("confusion_a0", c.confusion_a0.to_string()),
        ("blob_fraction", c.blob_fraction.to_string()),
        ("blob_radius_min", c.blob_radius_min.to_string()),
        ("blob_radius_max", c.blob_radius_max.to_string()),
        ("blob_classes", blob.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Every training key with its resolved value. The seed is not included.
pub fn train_entries(c: &TrainConfig) -> Vec<(String, String)> {
    let CropConfig { crop_w, crop_h, r_min, r_max } = c.crop;
    let view = match c.view {
        ViewMode::Base => "base",
        ViewMode::Local => "local",
        ViewMode::Dual => "dual",
    };
    let balance = match c.balance {
        Balance::Plain => "plain",
        Balance::Carb => "carb",
    };
    let weight = match c.weight {
        WeightMode::Adaptive => "adaptive".to_string(),
        WeightMode::Fixed(w) => w.to_string(),
    };
    let norm = match c.region_norm {
        RegionNorm::Region => "region",
        RegionNorm::Pixel => "pixel",
    };
    let source = match c.mask_source {
        MaskSource::Clip => "clip",
        MaskSource::NoisyOracle => "noisy_oracle",
    };
    let local = match c.local_label_set {
        LocalLabelSet::Image => "image",
        LocalLabelSet::Crop => "crop",
    };
    [
        ("stage1_iters", c.stage1_iters.to_string()),
        ("stage2_iters", c.stage2_iters.to_string()),
        ("lr", c.lr.to_string()),
        ("momentum", c.momentum.to_string()),
        ("crop_w", crop_w.to_string()),
        ("crop_h", crop_h.to_string()),
        ("r_min", r_min.to_string()),
        ("r_max", r_max.to_string()),
        ("queue_capacity", c.queue_capacity.to_string()),
        ("view", view.to_string()),
        ("balance", balance.to_string()),
        ("weight", weight),
        ("region_norm", norm.to_string()),
        ("stage2_keep_plain", c.stage2_keep_plain.to_string()),
        ("mask_source", source.to_string()),
        ("local_label_set", local.to_string()),
        ("temperature", c.temperature.to_string()),
        ("bias", c.bias.to_string()),
        ("eval_every", c.eval_every.to_string()),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}
