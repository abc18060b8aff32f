//! Window-averaged curves from telemetry: losses, region areas, weight.

use std::fs;
use std::path::{Path, PathBuf};

use carbseg_core::train::TelemetryRow;

use crate::error::{Error, IoContext, Result};

pub const DEFAULT_WINDOW: usize = 50;
pub const LOSS_FILE: &str = "loss_curve.csv";
pub const AREA_FILE: &str = "area_curve.csv";
pub const WEIGHT_FILE: &str = "weight_curve.csv";

/// Trailing mean over the last `window` present values (fewer at the start).
/// `None` when the window holds no value.
pub fn moving_average(values: &[Option<f64>], window: usize) -> Vec<Option<f64>> {
    (0..values.len())
        .map(|i| {
            let lo = (i + 1).saturating_sub(window);
            let present: Vec<f64> = values[lo..=i].iter().flatten().copied().collect();
            (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
        })
        .collect()
}

fn fmt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curves {
    pub iter: Vec<usize>,
    pub loss_c: Vec<Option<f64>>,
    pub loss_i: Vec<Option<f64>>,
    pub n_c: Vec<Option<f64>>,
    pub n_i: Vec<Option<f64>>,
    pub w: Vec<Option<f64>>,
}

pub fn compute_curves(rows: &[TelemetryRow], window: usize) -> Result<Curves> {
    if window == 0 {
        return Err(Error::Usage("--window must be at least 1".into()));
    }
    let col = |f: &dyn Fn(&TelemetryRow) -> Option<f64>| moving_average(&rows.iter().map(f).collect::<Vec<_>>(), window);
    Ok(Curves {
        iter: rows.iter().map(|r| r.iter).collect(),
        loss_c: col(&|r| r.loss_c),
        loss_i: col(&|r| r.loss_i),
        n_c: col(&|r| Some(r.n_c as f64)),
        n_i: col(&|r| Some(r.n_i as f64)),
        w: col(&|r| Some(r.w)),
    })
}

fn table(header: &str, iter: &[usize], cols: &[&[Option<f64>]]) -> String {
    let mut out = format!("{header}\n");
    for (k, it) in iter.iter().enumerate() {
        out.push_str(&it.to_string());
        for c in cols {
            out.push(',');
            out.push_str(&fmt(c[k]));
        }
        out.push('\n');
    }
    out
}

/// Writes `loss_curve.csv`, `area_curve.csv` and `weight_curve.csv`.
pub fn write_curves(dir: impl AsRef<Path>, c: &Curves) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).at(dir)?;
    let files = [
        (LOSS_FILE, table("iter,loss_c,loss_i", &c.iter, &[&c.loss_c, &c.loss_i])),
        (AREA_FILE, table("iter,n_c,n_i", &c.iter, &[&c.n_c, &c.n_i])),
        (WEIGHT_FILE, table("iter,w", &c.iter, &[&c.w])),
    ];
    let mut out = Vec::new();
    for (name, text) in files {
        let p = dir.join(name);
        fs::write(&p, text).at(&p)?;
        out.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_two_by_hand() {
        let v = [Some(1.0), Some(3.0), None, Some(8.0)];
        assert_eq!(moving_average(&v, 2), vec![Some(1.0), Some(2.0), Some(3.0), Some(8.0)]);
        assert_eq!(moving_average(&[None, None], 3), vec![None, None]);
        assert_eq!(moving_average(&v, 1), v.to_vec());
    }
}
