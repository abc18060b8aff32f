//! Class catalogs as tab-separated lines `index<TAB>name<TAB>prompt<TAB>R,G,B`.

use std::fs;
use std::path::Path;

use carbseg_core::ClassCatalog;

use crate::error::{Error, IoContext, Result};

pub fn parse_catalog(text: &str, path: &Path) -> Result<ClassCatalog> {
    let (mut names, mut prompts, mut palette) = (Vec::new(), Vec::new(), Vec::new());
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let bad = |msg: String| Error::Line { path: path.to_path_buf(), line: lineno, msg };
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(bad(format!("expected 4 tab-separated fields, found {}", cols.len())));
        }
        let index: usize = cols[0].trim().parse().map_err(|_| bad(format!("bad index {:?}", cols[0])))?;
        if index != names.len() {
            return Err(bad(format!("index {index} out of sequence, expected {}", names.len())));
        }
        let rgb: Vec<u8> = cols[3]
            .split(',')
            .map(|v| v.trim().parse::<u8>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(format!("bad color {:?}", cols[3])))?;
        if rgb.len() != 3 {
            return Err(bad(format!("bad color {:?}", cols[3])));
        }
        names.push(cols[1].to_string());
        prompts.push(cols[2].to_string());
        palette.push([rgb[0], rgb[1], rgb[2]]);
    }
    ClassCatalog::new(names, prompts, palette).map_err(|e| Error::invalid(path, e))
}

pub fn read_catalog(path: impl AsRef<Path>) -> Result<ClassCatalog> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).at(path)?;
    parse_catalog(&text, path)
}

pub fn format_catalog(c: &ClassCatalog) -> String {
    let mut out = String::new();
    for i in 0..c.class_count() {
        let [r, g, b] = c.palette()[i];
        out.push_str(&format!("{i}\t{}\t{}\t{r},{g},{b}\n", c.names()[i], c.prompt_names()[i]));
    }
    out
}

pub fn write_catalog(path: impl AsRef<Path>, c: &ClassCatalog) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_catalog(c)).at(path)
}
