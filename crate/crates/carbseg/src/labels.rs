//! Label maps on disk: binary graymaps (`P5`, maxval 255) or depth-1 `DTN1`.

use std::fs;
use std::path::{Path, PathBuf};

use carbseg_core::LabelMap;

use crate::dtn1;
use crate::error::{Error, IoContext, Result};

fn parse_pgm(bytes: &[u8]) -> std::result::Result<LabelMap, String> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err("not a binary graymap (missing P5 magic)".into());
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        if start == pos {
            return Err("malformed header".into());
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| "header number out of range".to_string())?;
    }
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(format!("maxval {maxval} is not supported, expected 255"));
    }
    if w == 0 || h == 0 {
        return Err("zero-sized image".into());
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err("malformed header".into()),
    }
    let data = &bytes[pos..];
    if data.len() != w * h {
        return Err(format!("expected {} pixel bytes, found {}", w * h, data.len()));
    }
    LabelMap::new(w, h, data.to_vec()).map_err(|e| e.to_string())
}

fn from_tensor(t: dtn1::Tensor) -> std::result::Result<LabelMap, String> {
    if t.depth != 1 {
        return Err(format!("label tensors must have depth 1, got {}", t.depth));
    }
    let mut data = Vec::with_capacity(t.data.len());
    for (i, &v) in t.data.iter().enumerate() {
        if v.fract() != 0.0 || !(0.0..=255.0).contains(&v) {
            return Err(format!("value {v} at pixel ({}, {}) is not a label", i % t.cols, i / t.cols));
        }
        data.push(v as u8);
    }
    LabelMap::new(t.cols, t.rows, data).map_err(|e| e.to_string())
}

/// Reads either format, detected by magic. With `class_count`, every value
/// must be a class index or the ignore index.
pub fn read_label_map(path: impl AsRef<Path>, class_count: Option<usize>) -> Result<LabelMap> {
    let path = path.as_ref();
    let bytes = fs::read(path).at(path)?;
    let m = if bytes.starts_with(dtn1::MAGIC) {
        dtn1::decode(&bytes).and_then(from_tensor)
    } else {
        parse_pgm(&bytes)
    }
    .map_err(|m| Error::format(path, m))?;
    if let Some(c) = class_count {
        m.validate(c).map_err(|e| Error::invalid(path, e))?;
    }
    Ok(m)
}

pub fn encode_pgm(m: &LabelMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", m.width(), m.height()).into_bytes();
    out.extend_from_slice(m.data());
    out
}

pub fn write_label_map(path: impl AsRef<Path>, m: &LabelMap) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(m)).at(path)
}

pub fn write_label_map_dtn1(path: impl AsRef<Path>, m: &LabelMap) -> Result<()> {
    let t = dtn1::Tensor { rows: m.height(), cols: m.width(), depth: 1, data: m.data().iter().map(|&v| v as f32).collect() };
    dtn1::write_tensor(path, &t)
}

/// `.pgm` and `.dtn1` files directly inside `dir`, sorted by file name.
pub fn list_label_files(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).at(dir)? {
        let p = entry.at(dir)?.path();
        let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("");
        if p.is_file() && (ext == "pgm" || ext == "dtn1") {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

pub fn file_stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}
