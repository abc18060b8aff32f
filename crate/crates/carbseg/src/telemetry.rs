//! Per-iteration training telemetry CSV.

use std::fs;
use std::path::Path;

use carbseg_core::train::TelemetryRow;

use crate::error::{Error, IoContext, Result};

pub const HEADER: &str = "iter,stage,loss_total,loss_c,loss_i,w,n_c,n_i,train_miou_every_100";

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Floats use the shortest representation that parses back to the same value.
pub fn format_telemetry(rows: &[TelemetryRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.iter,
            r.stage,
            r.loss_total,
            opt(r.loss_c),
            opt(r.loss_i),
            r.w,
            r.n_c,
            r.n_i,
            opt(r.train_miou)
        ));
    }
    out
}

pub fn write_telemetry(path: impl AsRef<Path>, rows: &[TelemetryRow]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_telemetry(rows)).at(path)
}

pub fn parse_telemetry(text: &str, path: &Path) -> Result<Vec<TelemetryRow>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_reader(text.as_bytes());
    let mut rows = Vec::new();
    for (i, rec) in reader.records().enumerate() {
        let line = i + 1;
        let bad = |msg: String| Error::Line { path: path.to_path_buf(), line, msg };
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        if i == 0 {
            let h: Vec<&str> = rec.iter().collect();
            if h.join(",") != HEADER {
                return Err(bad(format!("expected header {HEADER}")));
            }
            continue;
        }
        if rec.len() != 9 {
            return Err(bad(format!("expected 9 fields, found {}", rec.len())));
        }
        fn num<T: std::str::FromStr>(s: &str, name: &str) -> std::result::Result<T, String> {
            s.trim().parse().map_err(|_| format!("bad {name} value {s:?}"))
        }
        fn opt_num(s: &str, name: &str) -> std::result::Result<Option<f64>, String> {
            if s.trim().is_empty() {
                Ok(None)
            } else {
                num(s, name).map(Some)
            }
        }
        let row = (|| -> std::result::Result<TelemetryRow, String> {
            Ok(TelemetryRow {
                iter: num(&rec[0], "iter")?,
                stage: num(&rec[1], "stage")?,
                loss_total: num(&rec[2], "loss_total")?,
                loss_c: opt_num(&rec[3], "loss_c")?,
                loss_i: opt_num(&rec[4], "loss_i")?,
                w: num(&rec[5], "w")?,
                n_c: num(&rec[6], "n_c")?,
                n_i: num(&rec[7], "n_i")?,
                train_miou: opt_num(&rec[8], "train_miou_every_100")?,
            })
        })()
        .map_err(bad)?;
        rows.push(row);
    }
    if rows.is_empty() && text.trim().is_empty() {
        return Err(Error::format(path, "empty telemetry file"));
    }
    Ok(rows)
}

pub fn read_telemetry(path: impl AsRef<Path>) -> Result<Vec<TelemetryRow>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).at(path)?;
    parse_telemetry(&text, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let rows = vec![
            TelemetryRow { iter: 1, stage: 1, loss_total: 0.1 + 0.2, loss_c: Some(1.0 / 3.0), loss_i: None, w: 1.0, n_c: 5, n_i: 0, train_miou: None },
            TelemetryRow { iter: 2, stage: 2, loss_total: 2.5e-17, loss_c: None, loss_i: Some(7.25), w: 0.123456789, n_c: 0, n_i: 9, train_miou: Some(0.5) },
        ];
        let text = format_telemetry(&rows);
        assert_eq!(parse_telemetry(&text, Path::new("t")).unwrap(), rows);
    }

    #[test]
    fn malformed_row_names_its_line() {
        let text = format!("{HEADER}\n1,1,0.5,0.1,0.2,1,3,4,\n2,1,zzz,0.1,0.2,1,3,4,\n");
        let e = parse_telemetry(&text, Path::new("t.csv")).unwrap_err();
        assert!(e.to_string().starts_with("t.csv:3:"), "{e}");
        let e = parse_telemetry("iter,stage\n", Path::new("t.csv")).unwrap_err();
        assert!(e.to_string().starts_with("t.csv:1:"), "{e}");
    }
}
