//! CIFAR-10 and CIFAR-100 binary batch files.
//!
//! CIFAR-10 records are 1 label byte + 3072 pixel bytes; CIFAR-100 records
//! carry a coarse and a fine label byte before the pixels. Pixels are 32x32,
//! channel-planar R, G, B.

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::{Dataset, DatasetName, Split};
use crate::error::{Error, Result};

pub const SIDE: usize = 32;
pub const IMAGE_BYTES: usize = 3 * SIDE * SIDE;
pub const RECORDS_PER_FILE: usize = 10_000;
pub const CIFAR10_RECORD: usize = 1 + IMAGE_BYTES;
pub const CIFAR100_RECORD: usize = 2 + IMAGE_BYTES;

pub const CIFAR10_TRAIN_FILES: [&str; 5] = [
    "data_batch_1.bin",
    "data_batch_2.bin",
    "data_batch_3.bin",
    "data_batch_4.bin",
    "data_batch_5.bin",
];
pub const CIFAR10_TEST_FILE: &str = "test_batch.bin";
pub const CIFAR100_TRAIN_FILE: &str = "train.bin";
pub const CIFAR100_TEST_FILE: &str = "test.bin";

/// Layout of one record.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Layout {
    Cifar10,
    Cifar100,
}

impl Layout {
    pub fn record_len(self) -> usize {
        match self {
            Layout::Cifar10 => CIFAR10_RECORD,
            Layout::Cifar100 => CIFAR100_RECORD,
        }
    }

    fn label_bytes(self) -> usize {
        self.record_len() - IMAGE_BYTES
    }

    pub fn num_classes(self) -> usize {
        match self {
            Layout::Cifar10 => 10,
            Layout::Cifar100 => 100,
        }
    }
}

pub fn encode_cifar10_record(label: u8, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), IMAGE_BYTES);
    let mut out = Vec::with_capacity(CIFAR10_RECORD);
    out.push(label);
    out.extend_from_slice(pixels);
    out
}

pub fn encode_cifar100_record(coarse: u8, fine: u8, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(pixels.len(), IMAGE_BYTES);
    let mut out = Vec::with_capacity(CIFAR100_RECORD);
    out.push(coarse);
    out.push(fine);
    out.extend_from_slice(pixels);
    out
}

/// Split a buffer of whole records into pixels and labels. CIFAR-100 keeps
/// the fine label.
pub fn parse_records(bytes: &[u8], layout: Layout, path: &Path) -> Result<(Vec<u8>, Vec<usize>)> {
    let rec = layout.record_len();
    if bytes.len() % rec != 0 {
        return Err(Error::CorruptDataset {
            path: path.to_path_buf(),
            reason: format!("{} bytes is not a multiple of the {rec}-byte record", bytes.len()),
        });
    }
    let n = bytes.len() / rec;
    let mut pixels = Vec::with_capacity(n * IMAGE_BYTES);
    let mut labels = Vec::with_capacity(n);
    for (i, r) in bytes.chunks_exact(rec).enumerate() {
        let label = r[layout.label_bytes() - 1] as usize;
        if label >= layout.num_classes() {
            return Err(Error::CorruptDataset {
                path: path.to_path_buf(),
                reason: format!("record {i} has label {label}"),
            });
        }
        labels.push(label);
        pixels.extend_from_slice(&r[layout.label_bytes()..]);
    }
    Ok((pixels, labels))
}

fn read_file(path: &Path, layout: Layout, records: usize) -> Result<(Vec<u8>, Vec<usize>)> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let bytes = fs::read(path)?;
    let expected = records * layout.record_len();
    if bytes.len() != expected {
        return Err(Error::CorruptDataset {
            path: path.to_path_buf(),
            reason: format!("expected {expected} bytes, found {}", bytes.len()),
        });
    }
    parse_records(&bytes, layout, path)
}

/// Accept either the directory holding the batch files or its parent with
/// the archive's usual folder name.
fn resolve(dir: &Path, archive_folder: &str, probe: &str) -> PathBuf {
    let nested = dir.join(archive_folder);
    if !dir.join(probe).exists() && nested.join(probe).exists() {
        nested
    } else {
        dir.to_path_buf()
    }
}

fn build(layout: Layout, split: Split, (pixels, labels): (Vec<u8>, Vec<usize>)) -> Result<Dataset> {
    let name = match layout {
        Layout::Cifar10 => DatasetName::Cifar10,
        Layout::Cifar100 => DatasetName::Cifar100,
    };
    Dataset::new(name, split, SIDE, SIDE, layout.num_classes(), pixels, labels)
}

/// Five 10000-record train files and one test file.
pub fn load_cifar10(dir: &Path) -> Result<(Dataset, Dataset)> {
    let dir = resolve(dir, "cifar-10-batches-bin", CIFAR10_TEST_FILE);
    let mut pixels = Vec::with_capacity(5 * RECORDS_PER_FILE * IMAGE_BYTES);
    let mut labels = Vec::with_capacity(5 * RECORDS_PER_FILE);
    for f in CIFAR10_TRAIN_FILES {
        let (p, l) = read_file(&dir.join(f), Layout::Cifar10, RECORDS_PER_FILE)?;
        pixels.extend(p);
        labels.extend(l);
    }
    let train = build(Layout::Cifar10, Split::Train, (pixels, labels))?;
    let test = read_file(&dir.join(CIFAR10_TEST_FILE), Layout::Cifar10, RECORDS_PER_FILE)?;
    Ok((train, build(Layout::Cifar10, Split::Test, test)?))
}

/// One 50000-record train file and one 10000-record test file.
pub fn load_cifar100(dir: &Path) -> Result<(Dataset, Dataset)> {
    let dir = resolve(dir, "cifar-100-binary", CIFAR100_TEST_FILE);
    let train = read_file(&dir.join(CIFAR100_TRAIN_FILE), Layout::Cifar100, 5 * RECORDS_PER_FILE)?;
    let test = read_file(&dir.join(CIFAR100_TEST_FILE), Layout::Cifar100, RECORDS_PER_FILE)?;
    Ok((
        build(Layout::Cifar100, Split::Train, train)?,
        build(Layout::Cifar100, Split::Test, test)?,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_records_parse() {
        let rec = encode_cifar10_record(6, &[255; IMAGE_BYTES]);
        let (pixels, labels) = parse_records(&rec, Layout::Cifar10, Path::new("mem")).unwrap();
        assert_eq!(labels, vec![6]);
        let ds = build(Layout::Cifar10, Split::Train, (pixels, labels)).unwrap();
        assert!(ds.image::<f32>(0).data().iter().all(|&v| v == 1.0));

        let rec = encode_cifar100_record(3, 42, &[0; IMAGE_BYTES]);
        let (_, labels) = parse_records(&rec, Layout::Cifar100, Path::new("mem")).unwrap();
        assert_eq!(labels, vec![42]);
    }

    #[test]
    fn partial_records_and_bad_labels_are_corrupt() {
        let rec = encode_cifar10_record(1, &[0; IMAGE_BYTES]);
        let err = parse_records(&rec[..rec.len() - 1], Layout::Cifar10, Path::new("mem"));
        assert!(matches!(err, Err(Error::CorruptDataset { .. })));
        let rec = encode_cifar10_record(10, &[0; IMAGE_BYTES]);
        let err = parse_records(&rec, Layout::Cifar10, Path::new("mem"));
        assert!(matches!(err, Err(Error::CorruptDataset { .. })));
    }

    #[test]
    fn missing_directory_reports_missing_file() {
        let err = load_cifar10(Path::new("/nonexistent/cifar")).unwrap_err();
        assert!(matches!(err, Error::MissingFile(_)));
        assert!(err.is_dataset_error());
    }
}
