//! Little-endian binary checkpoint.
//!
//! ```text
//! magic        8 bytes  "SEVARCKP"
//! version      u32      1
//! arch         u8       0 cnn3, 1 resnet18
//! variant      u8       see VariantKind::code
//! reduction    u32
//! num_classes  u32
//! input_size   u16      32 or 224
//! scalar_bytes u8       4 or 8
//! n_params     u32
//! n_buffers    u32
//! then n_params + n_buffers blobs:
//!   kind u8 (0 param, 1 buffer), name_len u16, name utf-8,
//!   ndim u8, dims u32 * ndim, data scalar_bytes * prod(dims)
//! ```

use std::fs;
use std::path::Path;

use crate::attention::VariantKind;
use crate::error::{Error, Result};
use crate::models::{Arch, InputSize, Model, ModelConfig};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SEVARCKP";
pub const VERSION: u32 = 1;

const KIND_PARAM: u8 = 0;
const KIND_BUFFER: u8 = 1;

fn bad(reason: impl Into<String>) -> Error {
    Error::Checkpoint(reason.into())
}

fn put_blob<T: Scalar>(out: &mut Vec<u8>, kind: u8, name: &str, t: &Tensor<T>) -> Result<()> {
    let name_len = u16::try_from(name.len()).map_err(|_| bad(format!("name too long: {name}")))?;
    let ndim = u8::try_from(t.ndim()).map_err(|_| bad(format!("{name} has too many dims")))?;
    out.push(kind);
    out.extend_from_slice(&name_len.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(ndim);
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| bad(format!("{name} dim too large")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(out);
    }
    Ok(())
}

pub fn encode<T: Scalar>(model: &Model<T>) -> Result<Vec<u8>> {
    let cfg = &model.config;
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(cfg.arch.code());
    out.push(cfg.variant.code());
    out.extend_from_slice(&(cfg.reduction as u32).to_le_bytes());
    out.extend_from_slice(&(cfg.num_classes as u32).to_le_bytes());
    out.extend_from_slice(&(cfg.input_size.pixels() as u16).to_le_bytes());
    out.push(T::BYTES as u8);
    out.extend_from_slice(&(model.store.params().len() as u32).to_le_bytes());
    out.extend_from_slice(&(model.store.buffers().len() as u32).to_le_bytes());
    for p in model.store.params() {
        put_blob(&mut out, KIND_PARAM, &p.name, &p.value)?;
    }
    for b in model.store.buffers() {
        put_blob(&mut out, KIND_BUFFER, &b.name, &b.value)?;
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| bad(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

/// Header fields only; useful to check compatibility before a full load.
pub fn read_config(bytes: &[u8]) -> Result<ModelConfig> {
    let mut r = Reader { bytes, pos: 0 };
    read_header(&mut r).map(|(cfg, _)| cfg)
}

fn read_header(r: &mut Reader<'_>) -> Result<(ModelConfig, u8)> {
    if r.take(8)? != MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let arch = r.u8()?;
    let arch = Arch::from_code(arch).ok_or_else(|| bad(format!("unknown arch code {arch}")))?;
    let variant = r.u8()?;
    let variant = VariantKind::from_code(variant).ok_or_else(|| bad(format!("unknown variant code {variant}")))?;
    let reduction = r.u32()? as usize;
    let num_classes = r.u32()? as usize;
    let input_size = InputSize::from_pixels(r.u16()? as usize)?;
    let scalar_bytes = r.u8()?;
    let cfg = ModelConfig {
        arch,
        variant,
        reduction,
        num_classes,
        input_size,
    };
    Ok((cfg, scalar_bytes))
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Model<T>> {
    let mut r = Reader { bytes, pos: 0 };
    let (cfg, scalar_bytes) = read_header(&mut r)?;
    if scalar_bytes as usize != T::BYTES {
        return Err(bad(format!(
            "checkpoint holds {scalar_bytes}-byte scalars, expected {}",
            T::BYTES
        )));
    }
    let mut model = Model::<T>::build(cfg, 0)?;
    let n_params = r.u32()? as usize;
    let n_buffers = r.u32()? as usize;
    if n_params != model.store.params().len() || n_buffers != model.store.buffers().len() {
        return Err(bad(format!(
            "expected {} params and {} buffers, found {n_params} and {n_buffers}",
            model.store.params().len(),
            model.store.buffers().len()
        )));
    }
    let mut seen_p = vec![false; n_params];
    let mut seen_b = vec![false; n_buffers];
    for _ in 0..n_params + n_buffers {
        let kind = r.u8()?;
        let name_len = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| bad("name is not utf-8"))?;
        let ndim = r.u8()? as usize;
        let shape = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let count: usize = shape.iter().product();
        let raw = r.take(count * T::BYTES)?;
        let data = raw.chunks_exact(T::BYTES).map(T::read_le).collect();
        let value = Tensor::from_vec(&shape, data)?;

        let slot = match kind {
            KIND_PARAM => {
                let i = model.store.params().iter().position(|p| p.name == name);
                i.map(|i| (&mut seen_p[i], &mut model.store.params_mut()[i].value))
            }
            KIND_BUFFER => {
                let i = model.store.buffers().iter().position(|b| b.name == name);
                i.map(|i| (&mut seen_b[i], &mut model.store.buffers_mut()[i].value))
            }
            other => return Err(bad(format!("unknown blob kind {other}"))),
        };
        let (seen, target) = slot.ok_or_else(|| bad(format!("unexpected tensor `{name}`")))?;
        if target.shape() != value.shape() {
            return Err(bad(format!(
                "`{name}` has shape {:?}, model expects {:?}",
                value.shape(),
                target.shape()
            )));
        }
        if std::mem::replace(seen, true) {
            return Err(bad(format!("duplicate tensor `{name}`")));
        }
        *target = value;
    }
    if r.pos != bytes.len() {
        return Err(bad(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok(model)
}

pub fn save<T: Scalar>(model: &Model<T>, path: &Path) -> Result<()> {
    fs::write(path, encode(model)?)?;
    Ok(())
}

pub fn load<T: Scalar>(path: &Path) -> Result<Model<T>> {
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Mode;
    use crate::rng::Rng;

    #[test]
    fn round_trip_preserves_weights_and_logits() {
        let mut m = Model::<f32>::build(ModelConfig::new(Arch::Cnn3, VariantKind::Bump), 17).unwrap();
        m.store.params_mut()[0].value.data_mut()[0] = 0.125;
        let bytes = encode(&m).unwrap();
        assert_eq!(&bytes[..8], MAGIC);
        let back = decode::<f32>(&bytes).unwrap();
        assert_eq!(back.config, m.config);
        for (a, b) in m.store.params().iter().zip(back.store.params()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.value.data(), b.value.data());
        }
        let x = Tensor::rand_uniform(&mut Rng::new(2), &[2, 3, 32, 32], 0.0, 1.0).unwrap();
        assert_eq!(
            m.forward(&x, Mode::Eval).unwrap().data(),
            back.forward(&x, Mode::Eval).unwrap().data()
        );
    }

    #[test]
    fn rejects_corruption() {
        let m = Model::<f32>::build(ModelConfig::new(Arch::Cnn3, VariantKind::Se), 1).unwrap();
        let bytes = encode(&m).unwrap();
        assert!(matches!(decode::<f32>(&bytes[..bytes.len() - 1]), Err(Error::Checkpoint(_))));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode::<f32>(&extra), Err(Error::Checkpoint(_))));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(decode::<f32>(&magic), Err(Error::Checkpoint(_))));
        assert!(matches!(decode::<f64>(&bytes), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn header_is_readable_alone() {
        let mut cfg = ModelConfig::new(Arch::ResNet18, VariantKind::SlowExcite);
        cfg.num_classes = 100;
        cfg.reduction = 8;
        let m = Model::<f32>::build(cfg, 1).unwrap();
        let bytes = encode(&m).unwrap();
        assert_eq!(read_config(&bytes).unwrap(), cfg);
    }
}
