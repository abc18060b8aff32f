//! Head checkpoints: `weights.dtn1` as `(C, 1, D)`, `bias.dtn1` as
//! `(C, 1, 1)` when the head has a bias, and `head.meta` with `key=value`
//! lines for `class_count`, `dim`, `temperature`, `iteration` and `bias`.
//!
//! Parameters are stored as `f32`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use carbseg_core::head::LinearSegHead;

use crate::dtn1::{read_tensor, write_tensor, Tensor};
use crate::error::{Error, IoContext, Result};

pub const WEIGHTS_FILE: &str = "weights.dtn1";
pub const BIAS_FILE: &str = "bias.dtn1";
pub const META_FILE: &str = "head.meta";

pub fn write_checkpoint(dir: impl AsRef<Path>, head: &LinearSegHead, iteration: usize) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).at(dir)?;
    let (c, d) = (head.class_count(), head.dim());
    let mut out = Vec::new();
    let w = dir.join(WEIGHTS_FILE);
    write_tensor(&w, &Tensor { rows: c, cols: 1, depth: d, data: head.weights.iter().map(|&v| v as f32).collect() })?;
    out.push(w);
    let b = dir.join(BIAS_FILE);
    if let Some(bias) = &head.bias {
        write_tensor(&b, &Tensor { rows: c, cols: 1, depth: 1, data: bias.iter().map(|&v| v as f32).collect() })?;
        out.push(b);
    } else if b.exists() {
        fs::remove_file(&b).at(&b)?;
    }
    let meta = format!(
        "class_count={c}\ndim={d}\ntemperature={}\niteration={iteration}\nbias={}\n",
        head.temperature(),
        head.bias.is_some()
    );
    let m = dir.join(META_FILE);
    fs::write(&m, meta).at(&m)?;
    out.push(m);
    Ok(out)
}

/// Returns the head and the iteration it was saved at.
pub fn read_checkpoint(dir: impl AsRef<Path>) -> Result<(LinearSegHead, usize)> {
    let dir = dir.as_ref();
    let mp = dir.join(META_FILE);
    let text = fs::read_to_string(&mp).at(&mp)?;
    let mut meta = BTreeMap::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Line {
            path: mp.clone(),
            line: i + 1,
            msg: "expected key=value".into(),
        })?;
        meta.insert(k.trim().to_string(), v.trim().to_string());
    }
    fn field<T: std::str::FromStr>(meta: &BTreeMap<String, String>, key: &str, path: &Path) -> Result<T> {
        meta.get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| Error::format(path, format!("missing or invalid {key}")))
    }
    let c: usize = field(&meta, "class_count", &mp)?;
    let d: usize = field(&meta, "dim", &mp)?;
    let tau: f64 = field(&meta, "temperature", &mp)?;
    let iteration: usize = field(&meta, "iteration", &mp)?;
    let has_bias: bool = field(&meta, "bias", &mp)?;
    let wp = dir.join(WEIGHTS_FILE);
    let w = read_tensor(&wp)?;
    if w.dims() != (c, 1, d) {
        return Err(Error::format(&wp, format!("expected dims ({c}, 1, {d}), found {:?}", w.dims())));
    }
    let bias = if has_bias {
        let bp = dir.join(BIAS_FILE);
        let b = read_tensor(&bp)?;
        if b.dims() != (c, 1, 1) {
            return Err(Error::format(&bp, format!("expected dims ({c}, 1, 1), found {:?}", b.dims())));
        }
        Some(b.data.iter().map(|&v| v as f64).collect())
    } else {
        None
    };
    let head = LinearSegHead::new(c, d, w.data.iter().map(|&v| v as f64).collect(), bias, tau)
        .map_err(|e| Error::invalid(dir, e))?;
    Ok((head, iteration))
}
