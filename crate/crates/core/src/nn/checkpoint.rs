//! Parameter checkpoints.
//!
//! Layout (little-endian):
//!
//! ```text
//! "OQCK"  u32 version (= 1)  u64 manifest byte length
//! manifest: UTF-8 lines
//!     meta <TAB> key <TAB> value
//!     param <TAB> name <TAB> d0,d1,... <TAB> offset <TAB> count
//! payload: f32le values; a parameter occupies [offset, offset + count) in
//!          units of f32 from the start of the payload
//! ```

use std::fs;
use std::path::Path;

use super::param::HasParams;
use super::tensor::Scalar;
use crate::config::KeyValues;
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"OQCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: KeyValues,
    pub tensors: Vec<StoredTensor>,
}

impl Checkpoint {
    pub fn capture<T: Scalar, M: HasParams<T> + ?Sized>(meta: KeyValues, model: &mut M) -> Self {
        let mut tensors = Vec::new();
        model.visit_params("", &mut |name, p| {
            tensors.push(StoredTensor {
                name: name.to_string(),
                shape: p.shape.clone(),
                values: p.value.iter().map(|v| v.f64() as f32).collect(),
            })
        });
        Self { meta, tensors }
    }

    /// Copies stored values into `model`, matching by name and shape.
    pub fn restore<T: Scalar, M: HasParams<T> + ?Sized>(&self, model: &mut M) -> Result<()> {
        let mut idx = 0;
        let mut err = None;
        model.visit_params("", &mut |name, p| {
            if err.is_some() {
                return;
            }
            match self.tensors.get(idx) {
                Some(t) if t.name == name && t.shape == p.shape => {
                    for (dst, &src) in p.value.iter_mut().zip(&t.values) {
                        *dst = T::of(src as f64);
                    }
                }
                Some(t) => {
                    err = Some(Error::Shape(format!(
                        "checkpoint entry {} {:?} does not match parameter {name} {:?}",
                        t.name, t.shape, p.shape
                    )))
                }
                None => err = Some(Error::Shape(format!("checkpoint lacks parameter {name}"))),
            }
            idx += 1;
        });
        if let Some(e) = err {
            return Err(e);
        }
        if idx != self.tensors.len() {
            return Err(Error::Shape(format!(
                "checkpoint holds {} tensors, model has {idx}",
                self.tensors.len()
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut manifest = String::new();
        for key in self.meta.keys() {
            let value = self.meta.get_str(key).unwrap_or_default();
            manifest.push_str(&format!("meta\t{key}\t{value}\n"));
        }
        let mut offset = 0usize;
        for t in &self.tensors {
            let dims: Vec<String> = t.shape.iter().map(ToString::to_string).collect();
            manifest.push_str(&format!(
                "param\t{}\t{}\t{offset}\t{}\n",
                t.name,
                dims.join(","),
                t.values.len()
            ));
            offset += t.values.len();
        }
        let mut buf = Vec::with_capacity(16 + manifest.len() + 4 * offset);
        buf.extend_from_slice(CHECKPOINT_MAGIC);
        buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        buf.extend_from_slice(&(manifest.len() as u64).to_le_bytes());
        buf.extend_from_slice(manifest.as_bytes());
        for t in &self.tensors {
            for v in &t.values {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        buf
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptHeader(format!("checkpoint: {m}"));
        if bytes.len() < 16 || &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let mlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let manifest = bytes
            .get(16..16 + mlen)
            .ok_or_else(|| corrupt("manifest truncated"))?;
        let manifest = std::str::from_utf8(manifest).map_err(|_| corrupt("manifest not UTF-8"))?;
        let payload = &bytes[16 + mlen..];
        let mut meta = KeyValues::new();
        let mut tensors = Vec::new();
        for line in manifest.lines() {
            let fields: Vec<&str> = line.split('\t').collect();
            match fields.as_slice() {
                ["meta", key, value] => meta.set(key, value),
                ["param", name, dims, offset, count] => {
                    let shape = dims
                        .split(',')
                        .filter(|d| !d.is_empty())
                        .map(|d| d.parse::<usize>().map_err(|_| corrupt("bad dims")))
                        .collect::<Result<Vec<_>>>()?;
                    let offset: usize = offset.parse().map_err(|_| corrupt("bad offset"))?;
                    let count: usize = count.parse().map_err(|_| corrupt("bad count"))?;
                    if shape.iter().product::<usize>() != count {
                        return Err(corrupt("count does not match shape"));
                    }
                    let raw = payload.get(offset * 4..(offset + count) * 4).ok_or(
                        Error::TruncatedPayload {
                            expected: (offset + count) * 4,
                            found: payload.len(),
                        },
                    )?;
                    let values = raw
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                        .collect();
                    tensors.push(StoredTensor {
                        name: name.to_string(),
                        shape,
                        values,
                    });
                }
                _ => return Err(corrupt(&format!("bad manifest line {line:?}"))),
            }
        }
        Ok(Self { meta, tensors })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::param::Param;

    #[test]
    fn roundtrip_and_restore() {
        let mut ps = vec![Param::new(&[2, 3], 0.25f32), Param::buffer(&[1], -4.0f32)];
        ps[0].value[4] = 9.5;
        let mut meta = KeyValues::new();
        meta.set("width", 8);
        let ck = Checkpoint::capture(meta, &mut ps);
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);

        let mut fresh = vec![Param::new(&[2, 3], 0.0f32), Param::buffer(&[1], 0.0f32)];
        back.restore(&mut fresh).unwrap();
        assert_eq!(fresh[0].value, ps[0].value);
        assert_eq!(fresh[1].value, vec![-4.0]);

        let mut wrong = vec![Param::new(&[3, 2], 0.0f32)];
        assert!(back.restore(&mut wrong).is_err());
    }

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::from_bytes(b"OQCKxxxx").is_err());
        let mut bytes =
            Checkpoint::capture(KeyValues::new(), &mut vec![Param::new(&[4], 1.0f32)]).to_bytes();
        bytes.truncate(bytes.len() - 3);
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::TruncatedPayload { .. })
        ));
    }
}
