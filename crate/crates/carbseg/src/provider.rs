//! Directory-backed features: `<root>/<scene>/global.dtn1` for the global
//! view and `<root>/<scene>/<x0>_<y0>_<w>_<h>_<r_milli>.dtn1` for crops.
//!
//! Both feature channels read the same files. The frame size of a scene is
//! its global grid times the stride.

use std::fs;
use std::path::{Path, PathBuf};

use carbseg_core::maskgen::{CropSpec, FeatureChannel, FeatureProvider};
use carbseg_core::{Error as CoreError, FeatureMap};

use crate::dtn1;
use crate::error::{Error, IoContext, Result};

pub const GLOBAL_FILE: &str = "global.dtn1";

#[derive(Debug, Clone)]
pub struct FileProvider {
    root: PathBuf,
    scenes: Vec<String>,
    frames: Vec<(usize, usize)>,
    stride: usize,
    dim: usize,
}

impl FileProvider {
    /// Scans `root` for scene directories holding a global view; scenes are
    /// sorted by name.
    pub fn open(root: impl AsRef<Path>, stride: usize) -> Result<Self> {
        let root = root.as_ref().to_path_buf();
        if stride == 0 {
            return Err(Error::Usage("--stride must be positive".into()));
        }
        let mut scenes = Vec::new();
        for entry in fs::read_dir(&root).at(&root)? {
            let p = entry.at(&root)?.path();
            if p.join(GLOBAL_FILE).is_file() {
                scenes.push(p.file_name().unwrap().to_string_lossy().into_owned());
            }
        }
        scenes.sort();
        if scenes.is_empty() {
            return Err(Error::format(&root, format!("no <scene>/{GLOBAL_FILE} files found")));
        }
        let mut frames = Vec::with_capacity(scenes.len());
        let mut dim = None;
        for s in &scenes {
            let p = root.join(s).join(GLOBAL_FILE);
            let t = dtn1::read_tensor(&p)?;
            if *dim.get_or_insert(t.depth) != t.depth {
                return Err(Error::format(&p, format!("feature dim {} differs from other scenes", t.depth)));
            }
            frames.push((t.cols * stride, t.rows * stride));
        }
        Ok(Self { root, scenes, frames, stride, dim: dim.unwrap() })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn scene_names(&self) -> &[String] {
        &self.scenes
    }

    pub fn view_path(&self, scene: usize, view: Option<&CropSpec>) -> PathBuf {
        let file = match view {
            None => GLOBAL_FILE.to_string(),
            Some(s) => format!("{}.dtn1", s.file_stem()),
        };
        self.root.join(&self.scenes[scene]).join(file)
    }

    /// Crop specs of the local-view files present for `scene`, sorted.
    pub fn local_views(&self, scene: usize) -> Result<Vec<CropSpec>> {
        let dir = self.root.join(&self.scenes[scene]);
        let mut out = Vec::new();
        for entry in fs::read_dir(&dir).at(&dir)? {
            let p = entry.at(&dir)?.path();
            if p.extension().and_then(|e| e.to_str()) != Some("dtn1") {
                continue;
            }
            if let Some(spec) = p.file_stem().and_then(|s| s.to_str()).and_then(CropSpec::parse_stem) {
                out.push(spec);
            }
        }
        out.sort_by_key(|s| (s.y0, s.x0, s.crop_h, s.crop_w, s.ratio_milli()));
        Ok(out)
    }
}

impl FeatureProvider for FileProvider {
    fn scene_count(&self) -> usize {
        self.scenes.len()
    }

    fn scene_id(&self, scene: usize) -> String {
        self.scenes.get(scene).cloned().unwrap_or_else(|| format!("#{scene}"))
    }

    fn frame_size(&self, scene: usize) -> carbseg_core::Result<(usize, usize)> {
        self.frames.get(scene).copied().ok_or_else(|| CoreError::MissingView {
            scene: format!("#{scene}"),
            view: "global".into(),
        })
    }

    fn stride(&self) -> usize {
        self.stride
    }

    fn dim(&self) -> usize {
        self.dim
    }

    fn features(&self, scene: usize, view: Option<&CropSpec>, _channel: FeatureChannel) -> carbseg_core::Result<FeatureMap> {
        let missing = || CoreError::MissingView {
            scene: self.scene_id(scene),
            view: view.map_or_else(|| "global".to_string(), |s| s.file_stem()),
        };
        if scene >= self.scenes.len() {
            return Err(missing());
        }
        let p = self.view_path(scene, view);
        if !p.is_file() {
            return Err(missing());
        }
        let t = dtn1::read_tensor(&p).map_err(|e| CoreError::Value(e.to_string()))?;
        t.into_features()
    }
}
