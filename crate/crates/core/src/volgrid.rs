//! Volumetric grids, zero-padding geometry and the `QVOL` on-disk format.
//!
//! Data are stored x-fastest: the linear index of voxel `(x, y, z)` is
//! `x + nx * (y + ny * z)`. The main field B0 points along +z.
//!
//! `QVOL v1` layout (all integers little-endian):
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `QVOL`                            |
//! | 4      | 4    | u32 version (= 1)                       |
//! | 8      | 12   | u32 nx, ny, nz                          |
//! | 20     | 12   | f32 dx, dy, dz (mm)                     |
//! | 32     | 1    | u8 unit (0 ppb, 1 field_normalized, 2 unitless) |
//! | 33     | 1    | u8 encoding (0 = f32le)                 |
//! | 34     | 2    | reserved, zero                          |
//! | 36     | 4·N  | f32le samples, x fastest                |

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{ensure, Error, Result};

pub const QVOL_MAGIC: &[u8; 4] = b"QVOL";
pub const QVOL_VERSION: u32 = 1;
pub const QVOL_HEADER_LEN: usize = 36;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Unit {
    Ppb,
    FieldNormalized,
    Unitless,
}

impl Unit {
    pub fn code(self) -> u8 {
        match self {
            Unit::Ppb => 0,
            Unit::FieldNormalized => 1,
            Unit::Unitless => 2,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Unit::Ppb),
            1 => Ok(Unit::FieldNormalized),
            2 => Ok(Unit::Unitless),
            other => Err(Error::CorruptHeader(format!("unknown unit code {other}"))),
        }
    }
}

/// Grid extent `(nx, ny, nz)`.
pub type Dims = [usize; 3];

/// A 3D scalar grid with voxel-size metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume {
    data: Vec<f64>,
    dims: Dims,
    voxel_size: [f64; 3],
    unit: Unit,
}

impl Volume {
    pub fn new(data: Vec<f64>, dims: Dims, voxel_size: [f64; 3], unit: Unit) -> Result<Self> {
        ensure!(
            dims.iter().all(|&d| d >= 1),
            InvalidArgument,
            "dims must be >= 1, got {dims:?}"
        );
        ensure!(
            voxel_size.iter().all(|&v| v > 0.0 && v.is_finite()),
            InvalidArgument,
            "voxel sizes must be positive, got {voxel_size:?}"
        );
        let n = dims[0] * dims[1] * dims[2];
        ensure!(
            data.len() == n,
            Shape,
            "data length {} does not match dims {dims:?} ({n})",
            data.len()
        );
        Ok(Self {
            data,
            dims,
            voxel_size,
            unit,
        })
    }

    pub fn zeros(dims: Dims, voxel_size: [f64; 3], unit: Unit) -> Result<Self> {
        Self::new(vec![0.0; dims.iter().product()], dims, voxel_size, unit)
    }

    /// Builds a volume by evaluating `f(x, y, z)` at every voxel.
    pub fn from_fn(
        dims: Dims,
        voxel_size: [f64; 3],
        unit: Unit,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(dims.iter().product());
        for z in 0..dims[2] {
            for y in 0..dims[1] {
                for x in 0..dims[0] {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(data, dims, voxel_size, unit)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn voxel_size(&self) -> [f64; 3] {
        self.voxel_size
    }

    pub fn unit(&self) -> Unit {
        self.unit
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.dims[0] * (y + self.dims[1] * z)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, z: usize) -> f64 {
        self.data[self.index(x, y, z)]
    }

    /// Same geometry, new samples and unit.
    pub fn with_data(&self, data: Vec<f64>, unit: Unit) -> Result<Self> {
        Self::new(data, self.dims, self.voxel_size, unit)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn same_grid(&self, other: &Volume) -> bool {
        self.dims == other.dims
    }

    /// Extracts the sub-box starting at `origin` with extent `size`.
    pub fn extract(&self, origin: [usize; 3], size: Dims) -> Result<Volume> {
        for a in 0..3 {
            ensure!(
                origin[a] + size[a] <= self.dims[a] && size[a] >= 1,
                Shape,
                "box at {origin:?} of size {size:?} exceeds volume {:?}",
                self.dims
            );
        }
        let mut data = Vec::with_capacity(size.iter().product());
        for z in 0..size[2] {
            for y in 0..size[1] {
                let start = self.index(origin[0], origin[1] + y, origin[2] + z);
                data.extend_from_slice(&self.data[start..start + size[0]]);
            }
        }
        Volume::new(data, size, self.voxel_size, self.unit)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Zero padding applied on the low and high face of each axis.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PadRecord {
    pub low: [usize; 3],
    pub high: [usize; 3],
}

impl PadRecord {
    pub fn is_empty(&self) -> bool {
        self.low == [0; 3] && self.high == [0; 3]
    }
}

/// Zero-pads every axis up to the next multiple of `m`, splitting the padding
/// evenly with the odd voxel on the high side.
pub fn pad_to_multiple(volume: &Volume, m: usize) -> Result<(Volume, PadRecord)> {
    ensure!(m >= 1, InvalidArgument, "padding multiple must be >= 1");
    let mut record = PadRecord::default();
    let mut out_dims = volume.dims;
    for a in 0..3 {
        let n = volume.dims[a];
        let target = n.div_ceil(m) * m;
        let total = target - n;
        record.low[a] = total / 2;
        record.high[a] = total - total / 2;
        out_dims[a] = target;
    }
    if record.is_empty() {
        return Ok((volume.clone(), record));
    }
    let [nx, ny, nz] = volume.dims;
    let mut data = vec![0.0; out_dims.iter().product()];
    for z in 0..nz {
        for y in 0..ny {
            let src = volume.index(0, y, z);
            let dst = record.low[0]
                + out_dims[0] * ((y + record.low[1]) + out_dims[1] * (z + record.low[2]));
            data[dst..dst + nx].copy_from_slice(&volume.data[src..src + nx]);
        }
    }
    let padded = Volume::new(data, out_dims, volume.voxel_size, volume.unit)?;
    Ok((padded, record))
}

/// Inverse of [`pad_to_multiple`].
pub fn crop_with_record(volume: &Volume, record: &PadRecord) -> Result<Volume> {
    let mut size = [0; 3];
    for a in 0..3 {
        let pad = record.low[a] + record.high[a];
        ensure!(
            pad < volume.dims[a],
            Shape,
            "pad record {record:?} exceeds volume dims {:?}",
            volume.dims
        );
        size[a] = volume.dims[a] - pad;
    }
    if record.is_empty() {
        return Ok(volume.clone());
    }
    volume.extract(record.low, size)
}

fn encode(volume: &Volume) -> Vec<u8> {
    let mut buf = Vec::with_capacity(QVOL_HEADER_LEN + 4 * volume.len());
    buf.extend_from_slice(QVOL_MAGIC);
    buf.extend_from_slice(&QVOL_VERSION.to_le_bytes());
    for d in volume.dims {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    for v in volume.voxel_size {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    buf.push(volume.unit.code());
    buf.push(0);
    buf.extend_from_slice(&[0, 0]);
    for &v in &volume.data {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    buf
}

fn decode(bytes: &[u8], path: &Path) -> Result<Volume> {
    if bytes.len() < 4 || &bytes[..4] != QVOL_MAGIC {
        return Err(Error::BadMagic(path.to_path_buf()));
    }
    if bytes.len() < QVOL_HEADER_LEN {
        return Err(Error::TruncatedPayload {
            expected: QVOL_HEADER_LEN,
            found: bytes.len(),
        });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let f32_at = |o: usize| f32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(4);
    if version != QVOL_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dims = [u32_at(8) as usize, u32_at(12) as usize, u32_at(16) as usize];
    let voxel_size = [f32_at(20) as f64, f32_at(24) as f64, f32_at(28) as f64];
    let unit = Unit::from_code(bytes[32])?;
    if bytes[33] != 0 {
        return Err(Error::CorruptHeader(format!(
            "unknown scalar encoding {}",
            bytes[33]
        )));
    }
    let n = dims
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::CorruptHeader(format!("dims {dims:?} overflow")))?;
    let expected = n * 4;
    let payload = &bytes[QVOL_HEADER_LEN..];
    if payload.len() != expected {
        return Err(Error::TruncatedPayload {
            expected,
            found: payload.len(),
        });
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Volume::new(data, dims, voxel_size, unit)
}

pub fn read_volume(path: impl AsRef<Path>) -> Result<Volume> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

/// Writes the volume as `QVOL v1`. Samples are rounded to f32.
pub fn write_volume(volume: &Volume, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&encode(volume))
        .map_err(|e| Error::io(path, e))
}
