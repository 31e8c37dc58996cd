//! Binary checkpoint: magic, format version, topology, then every parameter as a
//! little-endian `f64` in declaration order.

use std::path::Path;

use super::model::{HeadTopology, MultitaskHeadModel};
use crate::error::{Error, Result};
use crate::fsutil::write_atomic;
use crate::scalar::Scalar;

pub const MAGIC: [u8; 8] = *b"MMFHEAD\0";
pub const FORMAT_VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode<T: Scalar>(model: &MultitaskHeadModel<T>) -> Vec<u8> {
    let top = model.topology();
    let mut buf = Vec::with_capacity(64 + 8 * model.n_params());
    buf.extend_from_slice(&MAGIC);
    buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    put_u32(&mut buf, top.input_dim);
    put_u32(&mut buf, top.trunk.len());
    top.trunk.iter().for_each(|&w| put_u32(&mut buf, w));
    put_u32(&mut buf, top.head_hidden.unwrap_or(0));
    buf.extend_from_slice(&top.dropout.to_le_bytes());
    put_u32(&mut buf, top.outputs.len());
    top.outputs.iter().for_each(|&k| put_u32(&mut buf, k));
    buf.extend_from_slice(&(model.n_params() as u64).to_le_bytes());
    for p in model.params() {
        buf.extend_from_slice(&p.as_f64().to_le_bytes());
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Serialization("truncated checkpoint".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn list(&mut self) -> Result<Vec<usize>> {
        let n = self.u32()?;
        if n > 1 << 16 {
            return Err(Error::Serialization(format!("implausible layer count {n}")));
        }
        (0..n).map(|_| self.u32()).collect()
    }
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<MultitaskHeadModel<T>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::Serialization("not a head checkpoint".into()));
    }
    let version = r.u32()? as u32;
    if version != FORMAT_VERSION {
        return Err(Error::Serialization(format!("unsupported checkpoint version {version}")));
    }
    let input_dim = r.u32()?;
    let trunk = r.list()?;
    let hidden = r.u32()?;
    let dropout = r.f64()?;
    let outputs = r.list()?;
    let topology = HeadTopology { input_dim, trunk, head_hidden: (hidden > 0).then_some(hidden), dropout, outputs };
    let n = r.u64()? as usize;
    if n.checked_mul(8) != Some(bytes.len() - r.pos) {
        return Err(Error::Serialization("parameter block length mismatch".into()));
    }
    let params = (0..n).map(|_| r.f64().map(T::of)).collect::<Result<Vec<T>>>()?;
    MultitaskHeadModel::from_params(topology, params)
}

pub fn save<T: Scalar>(model: &MultitaskHeadModel<T>, path: &Path) -> Result<()> {
    write_atomic(path, &encode(model))
}

pub fn load<T: Scalar>(path: &Path) -> Result<MultitaskHeadModel<T>> {
    decode(&std::fs::read(path)?)
}

/// Writes the checkpoint and a JSON sidecar (`<path>.json`) holding `meta`.
pub fn save_with_sidecar<T: Scalar, M: serde::Serialize>(model: &MultitaskHeadModel<T>, path: &Path, meta: &M) -> Result<()> {
    let mut json = serde_json::to_string_pretty(meta)?;
    json.push('\n');
    save(model, path)?;
    write_atomic(&sidecar_path(path), json.as_bytes())
}

pub fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    s.into()
}
