//! Tabular / time-series CSV: one sample per row, `label,feature,...`.

use std::fs;
use std::path::Path;

use super::LabeledDataset;
use crate::container::write_atomic;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Default)]
pub struct CsvOptions {
    /// Per-sample shape; defaults to `[n_features]`.
    pub input_shape: Option<Vec<usize>>,
    /// Valid input range; defaults to the observed minimum and maximum.
    pub domain: Option<(f64, f64)>,
}

pub fn load_csv(path: impl AsRef<Path>, opts: &CsvOptions) -> Result<LabeledDataset> {
    let text = fs::read_to_string(path.as_ref())?;
    let mut inputs = Vec::new();
    let mut labels = Vec::new();
    let mut offset = 0u64;
    let mut width = None;
    for (line_no, line) in text.lines().enumerate() {
        let line_offset = offset;
        offset += line.len() as u64 + 1;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let label = match fields[0].parse::<f64>() {
            Ok(v) if v.fract() == 0.0 && v >= -1.0 => v as i64,
            Ok(v) => return Err(Error::format(line_offset, format!("line {}: bad label {v}", line_no + 1))),
            // header row
            Err(_) if inputs.is_empty() && width.is_none() => {
                width = Some(fields.len() - 1);
                continue;
            }
            Err(_) => {
                return Err(Error::format(line_offset, format!("line {}: bad label `{}`", line_no + 1, fields[0])));
            }
        };
        let values = fields[1..]
            .iter()
            .map(|f| {
                f.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::format(line_offset, format!("line {}: bad value `{f}`", line_no + 1)))
            })
            .collect::<Result<Vec<_>>>()?;
        match width {
            Some(w) if w != values.len() => {
                return Err(Error::format(
                    line_offset,
                    format!("line {}: {} features, expected {w}", line_no + 1, values.len()),
                ));
            }
            _ => width = Some(values.len()),
        }
        let shape = opts.input_shape.clone().unwrap_or_else(|| vec![values.len()]);
        inputs.push(Tensor::new(shape, values)?);
        labels.push(label);
    }
    let domain = match opts.domain {
        Some(d) => d,
        None => {
            let (lo, hi) = inputs
                .iter()
                .flat_map(|t| t.data().iter().copied())
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            if lo.is_finite() && lo < hi {
                (lo, hi)
            } else if lo.is_finite() {
                (lo - 0.5, hi + 0.5)
            } else {
                (0.0, 1.0)
            }
        }
    };
    let tag = path
        .as_ref()
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    LabeledDataset::new(inputs, labels, domain, tag)
}

/// Writes `label,features...` rows using shortest round-trip float formatting.
pub fn save_csv(ds: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::new();
    for (x, l) in ds.inputs.iter().zip(&ds.labels) {
        out.push_str(&l.to_string());
        for v in x.data() {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    write_atomic(path.as_ref(), out.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_rows_with_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ecg.csv");
        fs::write(&p, "label,a,b,c\n1,0.5,0.25,-1\n0,1e-3,2,3\n").unwrap();
        let ds = load_csv(
            &p,
            &CsvOptions {
                input_shape: Some(vec![1, 1, 3]),
                domain: None,
            },
        )
        .unwrap();
        assert_eq!(ds.labels, vec![1, 0]);
        assert_eq!(ds.inputs[1].data(), &[1e-3, 2.0, 3.0]);
        assert_eq!(ds.inputs[0].shape(), &[1, 1, 3]);
        assert_eq!(ds.domain, (-1.0, 3.0));

        let q = dir.path().join("back.csv");
        save_csv(&ds, &q).unwrap();
        let back = load_csv(&q, &CsvOptions { input_shape: Some(vec![1, 1, 3]), domain: None }).unwrap();
        assert_eq!(back.inputs, ds.inputs);
    }

    #[test]
    fn ragged_rows_fail() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.csv");
        fs::write(&p, "1,0.5,0.25\n0,1\n").unwrap();
        assert!(matches!(load_csv(&p, &CsvOptions::default()), Err(Error::Format { offset: 11, .. })));
    }
}
