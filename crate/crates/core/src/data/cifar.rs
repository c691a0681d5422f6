use std::path::{Path, PathBuf};

use super::{Dataset, Normalization, Provenance, Split, NUM_CLASSES};
use crate::autograd::Tensor;
use crate::{Error, Result};

/// One label byte followed by 32x32 red, green and blue planes.
pub const CIFAR_RECORD_BYTES: usize = 1 + 3 * 32 * 32;

const TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
const TEST_FILE: &str = "test_batch.bin";

/// Splits raw CIFAR-10 bytes into pixels scaled to `[0, 1]` and labels.
///
/// `base_offset` is added to reported byte offsets so errors point into the
/// original file.
pub fn parse_cifar_records(bytes: &[u8], base_offset: u64) -> Result<(Vec<f64>, Vec<usize>)> {
    if bytes.is_empty() || bytes.len() % CIFAR_RECORD_BYTES != 0 {
        return Err(Error::CorruptData {
            offset: base_offset + (bytes.len() - bytes.len() % CIFAR_RECORD_BYTES) as u64,
            reason: format!(
                "length {} is not a positive multiple of {CIFAR_RECORD_BYTES}",
                bytes.len()
            ),
        });
    }
    let n = bytes.len() / CIFAR_RECORD_BYTES;
    let mut pixels = Vec::with_capacity(n * (CIFAR_RECORD_BYTES - 1));
    let mut labels = Vec::with_capacity(n);
    for (i, record) in bytes.chunks_exact(CIFAR_RECORD_BYTES).enumerate() {
        let label = record[0] as usize;
        if label >= NUM_CLASSES {
            return Err(Error::CorruptData {
                offset: base_offset + (i * CIFAR_RECORD_BYTES) as u64,
                reason: format!("label {label} exceeds 9"),
            });
        }
        labels.push(label);
        pixels.extend(record[1..].iter().map(|&b| b as f64 / 255.0));
    }
    Ok((pixels, labels))
}

fn read_files(paths: &[PathBuf], limit: Option<usize>) -> Result<(Vec<f64>, Vec<usize>)> {
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for path in paths {
        if limit.is_some_and(|l| labels.len() >= l) {
            break;
        }
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
        let (p, l) = parse_cifar_records(&bytes, 0).map_err(|e| match e {
            Error::CorruptData { offset, reason } => Error::CorruptData {
                offset,
                reason: format!("{}: {reason}", path.display()),
            },
            other => other,
        })?;
        pixels.extend(p);
        labels.extend(l);
    }
    if let Some(l) = limit {
        if l < labels.len() {
            labels.truncate(l);
            pixels.truncate(l * (CIFAR_RECORD_BYTES - 1));
        }
    }
    Ok((pixels, labels))
}

/// Loads explicit batch files. Normalization is fitted on the loaded train
/// records and applied to both splits.
pub fn load_cifar10_files(
    train: &[PathBuf],
    test: &[PathBuf],
    train_limit: Option<usize>,
) -> Result<(Dataset, Dataset)> {
    let (train_px, train_labels) = read_files(train, train_limit)?;
    let (test_px, test_labels) = read_files(test, None)?;
    if train_labels.is_empty() || test_labels.is_empty() {
        return Err(Error::Data("CIFAR-10 split has no records".into()));
    }
    let mut train_images = Tensor::from_vec(vec![train_labels.len(), 3, 32, 32], train_px)?;
    let mut test_images = Tensor::from_vec(vec![test_labels.len(), 3, 32, 32], test_px)?;
    let norm = Normalization::fit(&train_images);
    norm.apply(&mut train_images);
    norm.apply(&mut test_images);
    Ok((
        Dataset::new(train_images, train_labels, Split::Train, Provenance::Cifar10, norm.clone())?,
        Dataset::new(test_images, test_labels, Split::Test, Provenance::Cifar10, norm)?,
    ))
}

/// Loads the standard binary distribution from `dir` (the five `data_batch_*.bin`
/// files and `test_batch.bin`). `train_limit` keeps only the first records.
pub fn load_cifar10(dir: &Path, train_limit: Option<usize>) -> Result<(Dataset, Dataset)> {
    let dir = if dir.join("cifar-10-batches-bin").is_dir() {
        dir.join("cifar-10-batches-bin")
    } else {
        dir.to_path_buf()
    };
    let train: Vec<PathBuf> = TRAIN_FILES.iter().map(|f| dir.join(f)).collect();
    if let Some(missing) = train.iter().chain([&dir.join(TEST_FILE)]).find(|p| !p.is_file()) {
        return Err(Error::Data(format!("missing CIFAR-10 file {}", missing.display())));
    }
    load_cifar10_files(&train, &[dir.join(TEST_FILE)], train_limit)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bad_length_rejected() {
        let err = parse_cifar_records(&[0u8; CIFAR_RECORD_BYTES + 5], 0).unwrap_err();
        assert!(matches!(err, Error::CorruptData { offset, .. } if offset == CIFAR_RECORD_BYTES as u64));
        assert!(parse_cifar_records(&[], 0).is_err());
    }

    #[test]
    fn bad_label_reports_offset() {
        let mut bytes = vec![0u8; 2 * CIFAR_RECORD_BYTES];
        bytes[CIFAR_RECORD_BYTES] = 10;
        let err = parse_cifar_records(&bytes, 100).unwrap_err();
        assert!(matches!(err, Error::CorruptData { offset, .. } if offset == 100 + CIFAR_RECORD_BYTES as u64));
    }

    #[test]
    fn plane_order_preserved() {
        let mut record = vec![0u8; CIFAR_RECORD_BYTES];
        record[0] = 7;
        record[1] = 255;
        record[1 + 1024] = 51;
        let (px, labels) = parse_cifar_records(&record, 0).unwrap();
        assert_eq!(labels, vec![7]);
        assert_eq!(px[0], 1.0);
        assert_eq!(px[1024], 0.2);
        assert_eq!(px[1], 0.0);
    }
}
