//! IDX files (the MNIST container): big-endian magic and dimensions followed
//! by an unsigned-byte payload. Paths ending in `.gz` are decompressed.

use std::fs;
use std::io::Read;
use std::path::Path;

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use super::LabeledDataset;
use crate::container::write_atomic;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const LABELS_MAGIC: u32 = 0x0000_0801;
pub const IMAGES_MAGIC: u32 = 0x0000_0803;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

pub fn read_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 {
        return Err(Error::format(bytes.len() as u64, "truncated IDX magic"));
    }
    let magic = u32::from_be_bytes(bytes[0..4].try_into().unwrap());
    let rank = match magic {
        LABELS_MAGIC => 1,
        IMAGES_MAGIC => 3,
        other => {
            return Err(Error::format(0, format!("bad IDX magic {other:#010x}")));
        }
    };
    let mut dims = Vec::with_capacity(rank);
    for i in 0..rank {
        let off = 4 + 4 * i;
        let raw = bytes
            .get(off..off + 4)
            .ok_or_else(|| Error::format(off as u64, "truncated IDX dimensions"))?;
        dims.push(u32::from_be_bytes(raw.try_into().unwrap()) as usize);
    }
    let start = 4 + 4 * rank;
    let expected: usize = dims.iter().product();
    let payload = &bytes[start.min(bytes.len())..];
    if payload.len() < expected {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated IDX payload: {} of {} bytes", payload.len(), expected),
        ));
    }
    if payload.len() > expected {
        return Err(Error::format((start + expected) as u64, "trailing bytes after IDX payload"));
    }
    Ok(IdxArray {
        dims,
        data: payload.to_vec(),
    })
}

pub fn write_idx(array: &IdxArray) -> Result<Vec<u8>> {
    let magic = match array.dims.len() {
        1 => LABELS_MAGIC,
        3 => IMAGES_MAGIC,
        n => return Err(Error::invalid(format!("IDX arrays must have rank 1 or 3, got {n}"))),
    };
    if array.dims.iter().product::<usize>() != array.data.len() {
        return Err(Error::invalid("IDX dims do not match payload"));
    }
    let mut out = magic.to_be_bytes().to_vec();
    for &d in &array.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&array.data);
    Ok(out)
}

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let raw = fs::read(path)?;
    if path.extension().is_some_and(|e| e == "gz") {
        let mut out = Vec::new();
        GzDecoder::new(raw.as_slice()).read_to_end(&mut out)?;
        Ok(out)
    } else {
        Ok(raw)
    }
}

fn write_maybe_gz(path: &Path, bytes: &[u8]) -> Result<()> {
    if path.extension().is_some_and(|e| e == "gz") {
        let mut enc = GzEncoder::new(Vec::new(), Compression::default());
        std::io::Write::write_all(&mut enc, bytes)?;
        write_atomic(path, &enc.finish()?)
    } else {
        write_atomic(path, bytes)
    }
}

/// Loads an image IDX file (and optional label file) as a dataset of
/// `[1, height, width]` tensors scaled to `[0, 1]`.
pub fn load_idx(images: impl AsRef<Path>, labels: Option<&Path>) -> Result<LabeledDataset> {
    let img = read_idx(&read_maybe_gz(images.as_ref())?)?;
    if img.dims.len() != 3 {
        return Err(Error::format(0, "image file must use the 3-D magic 0x00000803"));
    }
    let (n, h, w) = (img.dims[0], img.dims[1], img.dims[2]);
    let labels: Vec<i64> = match labels {
        Some(p) => {
            let lab = read_idx(&read_maybe_gz(p)?)?;
            if lab.dims.len() != 1 || lab.dims[0] != n {
                return Err(Error::format(4, format!("label file holds {:?}, expected [{n}]", lab.dims)));
            }
            lab.data.iter().map(|&b| b as i64).collect()
        }
        None => vec![super::OOD_LABEL; n],
    };
    let inputs = img
        .data
        .chunks_exact(h * w)
        .map(|px| Tensor::new(vec![1, h, w], px.iter().map(|&b| b as f64 / 255.0).collect()))
        .collect::<Result<Vec<_>>>()?;
    let tag = images
        .as_ref()
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    LabeledDataset::new(inputs, labels, (0.0, 1.0), tag)
}

/// Writes images (quantized to bytes) and labels as IDX files.
pub fn save_idx(ds: &LabeledDataset, images: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<()> {
    let shape = ds.input_shape().ok_or_else(|| Error::Empty("dataset".into()))?;
    let (h, w) = match shape {
        [h, w] | [1, h, w] => (*h, *w),
        other => return Err(Error::invalid(format!("IDX images need [1,h,w] inputs, got {other:?}"))),
    };
    let (lo, hi) = ds.domain;
    let mut px = Vec::with_capacity(ds.len() * h * w);
    for x in &ds.inputs {
        px.extend(x.data().iter().map(|v| ((v - lo) / (hi - lo) * 255.0).round().clamp(0.0, 255.0) as u8));
    }
    let lab = ds
        .labels
        .iter()
        .map(|&l| u8::try_from(l).map_err(|_| Error::invalid(format!("label {l} does not fit IDX"))))
        .collect::<Result<Vec<_>>>()?;
    write_maybe_gz(
        images.as_ref(),
        &write_idx(&IdxArray {
            dims: vec![ds.len(), h, w],
            data: px,
        })?,
    )?;
    write_maybe_gz(
        labels.as_ref(),
        &write_idx(&IdxArray {
            dims: vec![ds.len()],
            data: lab,
        })?,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fixture() -> (Vec<u8>, Vec<u8>) {
        let mut images = vec![0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 2, 0, 0, 0, 2];
        images.extend_from_slice(&[0, 51, 102, 255, 255, 204, 153, 1]);
        let labels = vec![0, 0, 8, 1, 0, 0, 0, 2, 7, 3];
        (images, labels)
    }

    #[test]
    fn crafted_two_image_file() {
        let (images, labels) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img"), dir.path().join("lab"));
        fs::write(&ip, &images).unwrap();
        fs::write(&lp, &labels).unwrap();
        let ds = load_idx(&ip, Some(&lp)).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.labels, vec![7, 3]);
        assert_eq!(ds.inputs[0].shape(), &[1, 2, 2]);
        assert_eq!(ds.inputs[0].data(), &[0.0, 51.0 / 255.0, 102.0 / 255.0, 1.0]);
        assert_eq!(ds.inputs[1].data(), &[1.0, 204.0 / 255.0, 153.0 / 255.0, 1.0 / 255.0]);
    }

    #[test]
    fn empty_and_truncated_files_fail() {
        assert!(read_idx(&[]).is_err());
        let (images, _) = fixture();
        match read_idx(&images[..images.len() - 1]) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, images.len() as u64 - 1),
            other => panic!("unexpected {other:?}"),
        }
        let mut bad = images.clone();
        bad[3] = 0x09;
        assert!(matches!(read_idx(&bad), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn write_then_read_is_identity() {
        let (images, labels) = fixture();
        for raw in [images, labels] {
            let arr = read_idx(&raw).unwrap();
            assert_eq!(write_idx(&arr).unwrap(), raw);
        }
        let (images, labels) = fixture();
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("img.gz"), dir.path().join("lab.gz"));
        let ds = {
            fs::write(dir.path().join("i"), &images).unwrap();
            fs::write(dir.path().join("l"), &labels).unwrap();
            load_idx(dir.path().join("i"), Some(&dir.path().join("l"))).unwrap()
        };
        save_idx(&ds, &ip, &lp).unwrap();
        let back = load_idx(&ip, Some(&lp)).unwrap();
        assert_eq!(back.inputs, ds.inputs);
        assert_eq!(back.labels, ds.labels);
    }
}
