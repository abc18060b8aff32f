//! The three dataset-statistics tables.

use std::fs;
use std::path::{Path, PathBuf};

use carbseg_core::stats::DatasetStats;
use carbseg_core::ClassCatalog;

use crate::error::{Error, IoContext, Result};

pub const HIST_FILE: &str = "classes_per_image.csv";
pub const COOCCURRENCE_FILE: &str = "cooccurrence.csv";
pub const POSNEG_FILE: &str = "positives_negatives.csv";

fn csv_bytes(rows: Vec<Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(&r).expect("writing to memory");
    }
    w.into_inner().expect("writing to memory")
}

/// `classes_in_image,image_count`, ascending.
pub fn hist_csv(s: &DatasetStats) -> Vec<u8> {
    let mut rows = vec![vec!["classes_in_image".to_string(), "image_count".to_string()]];
    rows.extend(s.classes_per_image_hist.iter().map(|(k, v)| vec![k.to_string(), v.to_string()]));
    csv_bytes(rows)
}

/// Row `a`, column `b`: fraction of images containing `a` that also contain `b`.
pub fn cooccurrence_csv(s: &DatasetStats, names: &[String]) -> Vec<u8> {
    let mut header = vec!["class".to_string()];
    header.extend(names.iter().cloned());
    let mut rows = vec![header];
    for a in 0..s.class_count {
        let mut r = vec![names[a].clone()];
        r.extend((0..s.class_count).map(|b| format!("{:.6}", s.cooccurrence_at(a, b))));
        rows.push(r);
    }
    csv_bytes(rows)
}

pub fn posneg_csv(s: &DatasetStats, names: &[String]) -> Vec<u8> {
    let mut rows = vec![["index", "class", "positives", "negatives"].map(String::from).to_vec()];
    for c in 0..s.class_count {
        rows.push(vec![c.to_string(), names[c].clone(), s.positives[c].to_string(), s.negatives[c].to_string()]);
    }
    csv_bytes(rows)
}

/// Writes the three tables into `dir` and returns their paths.
pub fn write_stats(dir: impl AsRef<Path>, s: &DatasetStats, catalog: &ClassCatalog) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    if catalog.class_count() != s.class_count {
        return Err(Error::Usage(format!(
            "catalog has {} classes, statistics have {}",
            catalog.class_count(),
            s.class_count
        )));
    }
    fs::create_dir_all(dir).at(dir)?;
    let names = catalog.names();
    let files = [
        (HIST_FILE, hist_csv(s)),
        (COOCCURRENCE_FILE, cooccurrence_csv(s, names)),
        (POSNEG_FILE, posneg_csv(s, names)),
    ];
    let mut out = Vec::new();
    for (name, bytes) in files {
        let p = dir.join(name);
        fs::write(&p, bytes).at(&p)?;
        out.push(p);
    }
    Ok(out)
}
