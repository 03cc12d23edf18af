//! Generic raw image container for datasets without a dedicated loader.
//!
//! ```text
//! magic        7 bytes "RAWIMG1"
//! count        u32
//! height       u16
//! width        u16
//! num_classes  u16
//! count records of: label u16, 3*H*W channel-planar RGB bytes
//! ```
//!
//! All integers little-endian. A dataset directory holds `train.rawimg`
//! and `test.rawimg`.

use std::fs;
use std::path::Path;

use crate::data::{Dataset, DatasetName, Split};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 7] = b"RAWIMG1";
const HEADER: usize = 7 + 4 + 2 + 2 + 2;
pub const TRAIN_FILE: &str = "train.rawimg";
pub const TEST_FILE: &str = "test.rawimg";

pub fn encode_raw(ds: &Dataset) -> Result<Vec<u8>> {
    let too_big = |what: &str| Error::InvalidConfig(format!("{what} does not fit the raw format"));
    let count = u32::try_from(ds.len()).map_err(|_| too_big("count"))?;
    let h = u16::try_from(ds.height).map_err(|_| too_big("height"))?;
    let w = u16::try_from(ds.width).map_err(|_| too_big("width"))?;
    let k = u16::try_from(ds.num_classes).map_err(|_| too_big("num_classes"))?;
    let mut out = Vec::with_capacity(HEADER + ds.len() * (2 + ds.image_len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&count.to_le_bytes());
    out.extend_from_slice(&h.to_le_bytes());
    out.extend_from_slice(&w.to_le_bytes());
    out.extend_from_slice(&k.to_le_bytes());
    for (i, &label) in ds.labels().iter().enumerate() {
        out.extend_from_slice(&(label as u16).to_le_bytes());
        out.extend_from_slice(ds.image_bytes(i));
    }
    Ok(out)
}

pub fn decode_raw(bytes: &[u8], split: Split, path: &Path) -> Result<Dataset> {
    let corrupt = |reason: String| Error::CorruptDataset {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < HEADER || &bytes[..7] != MAGIC {
        return Err(corrupt("missing RAWIMG1 header".into()));
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]) as usize;
    let count = u32::from_le_bytes(bytes[7..11].try_into().unwrap()) as usize;
    let (h, w, k) = (u16_at(11), u16_at(13), u16_at(15));
    if h == 0 || w == 0 || k < 2 {
        return Err(corrupt(format!("bad header: {h}x{w}, {k} classes")));
    }
    let image = 3 * h * w;
    let expected = HEADER + count * (2 + image);
    if bytes.len() != expected {
        return Err(corrupt(format!("expected {expected} bytes, found {}", bytes.len())));
    }
    let mut pixels = Vec::with_capacity(count * image);
    let mut labels = Vec::with_capacity(count);
    for (i, rec) in bytes[HEADER..].chunks_exact(2 + image).enumerate() {
        let label = u16::from_le_bytes([rec[0], rec[1]]) as usize;
        if label >= k {
            return Err(corrupt(format!("record {i} has label {label} >= {k}")));
        }
        labels.push(label);
        pixels.extend_from_slice(&rec[2..]);
    }
    Dataset::new(DatasetName::Raw, split, h, w, k, pixels, labels)
}

pub fn write_raw(ds: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, encode_raw(ds)?)?;
    Ok(())
}

pub fn read_raw(path: &Path, split: Split) -> Result<Dataset> {
    if !path.is_file() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    decode_raw(&fs::read(path)?, split, path)
}

pub fn load_raw_dir(dir: &Path) -> Result<(Dataset, Dataset)> {
    let train = read_raw(&dir.join(TRAIN_FILE), Split::Train)?;
    let test = read_raw(&dir.join(TEST_FILE), Split::Test)?;
    if (train.height, train.width, train.num_classes) != (test.height, test.width, test.num_classes) {
        return Err(Error::CorruptDataset {
            path: dir.to_path_buf(),
            reason: "train and test files disagree on image size or class count".into(),
        });
    }
    Ok((train, test))
}
