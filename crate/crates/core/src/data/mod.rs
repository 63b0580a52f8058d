//! Datasets: in-memory representation, file formats and generators.

mod csv;
mod dataset;
mod idx;
mod synth;

use std::path::{Path, PathBuf};

pub use self::csv::{load_csv, save_csv, CsvOptions};
pub use dataset::{LabeledDataset, OOD_LABEL};
pub use idx::{load_idx, read_idx, save_idx, write_idx, IdxArray};
pub use synth::{gen_blobs, gen_noise_ood, gen_noise_ood_in, BlobSpec, NoiseKind};

use crate::error::Result;

fn is_idx(path: &Path) -> bool {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    name.contains("-ubyte") || name.ends_with(".idx") || name.ends_with(".idx.gz")
}

/// Label file paired with an MNIST-style image file name, if it exists.
fn sibling_labels(images: &Path) -> Option<PathBuf> {
    let name = images.file_name()?.to_str()?;
    let labels = name.replace("images-idx3", "labels-idx1");
    if labels == name {
        return None;
    }
    let candidate = images.with_file_name(labels);
    candidate.exists().then_some(candidate)
}

/// Loads a dataset, choosing the format from the path:
///
/// - `IMAGES,LABELS` or an IDX file name (`*-ubyte[.gz]`, `*.idx[.gz]`):
///   IDX images with labels (inferred from MNIST naming when omitted);
/// - `*.csv`: `label,features...` rows;
/// - anything else: a dataset container.
pub fn load_path(spec: &str, csv: &CsvOptions) -> Result<LabeledDataset> {
    if let Some((images, labels)) = spec.split_once(',') {
        return load_idx(images, Some(Path::new(labels)));
    }
    let path = Path::new(spec);
    if is_idx(path) {
        return load_idx(path, sibling_labels(path).as_deref());
    }
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        return load_csv(path, csv);
    }
    LabeledDataset::load(path)
}
