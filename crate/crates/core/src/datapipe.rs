//! Training-pair generation: label patches (cropped from volumes or drawn as
//! random shapes), per-patch forward fields, the on-disk dataset layout, and
//! deterministic batch order.
//!
//! A dataset directory holds `manifest.tsv` and paired
//! `input_%06d.qvol` / `label_%06d.qvol` files. The manifest starts with
//! `#key=value` lines (format version, patch dims, voxel size, entry count,
//! parameter hash, and the generation parameters prefixed `param.`), then a
//! header row and one row per entry:
//!
//! ```text
//! index  source  ox  oy  oz  seed  input  label
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng as _;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::config::{join_list, parse_list, KeyValues};
use crate::dipole::{dipole_kernel, forward_field};
use crate::error::{ensure, Error, Result};
use crate::phantom::{random_shapes, ShapeConfig};
use crate::seed::{mix_seed, rng_from_seed};
use crate::volgrid::{read_volume, write_volume, Dims, Volume};

pub const MANIFEST_FILE: &str = "manifest.tsv";
pub const MANIFEST_VERSION: u32 = 1;

/// Cropping parameters: a cubic patch, per-axis sliding strides, and a
/// number of extra randomly placed patches per volume.
#[derive(Clone, Debug, PartialEq)]
pub struct CropPlan {
    pub patch: usize,
    pub stride: [usize; 3],
    pub random_extra: usize,
    pub seed: u64,
}

impl CropPlan {
    /// 32³ patches with stride 16.
    pub fn desk() -> Self {
        Self {
            patch: 32,
            stride: [16; 3],
            random_extra: 0,
            seed: 0,
        }
    }

    /// 48³ patches, stride 24×36×20.
    pub fn full_scale() -> Self {
        Self {
            patch: 48,
            stride: [24, 36, 20],
            random_extra: 0,
            seed: 0,
        }
    }

    pub fn validate(&self, dims: Dims) -> Result<()> {
        ensure!(self.patch >= 1, InvalidArgument, "patch size must be >= 1");
        ensure!(
            self.stride.iter().all(|&s| s >= 1),
            InvalidArgument,
            "strides must be >= 1, got {:?}",
            self.stride
        );
        ensure!(
            dims.iter().all(|&d| d >= self.patch),
            InvalidArgument,
            "patch {} does not fit volume {dims:?}",
            self.patch
        );
        Ok(())
    }
}

/// A cropped patch and where it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub origin: [usize; 3],
    pub volume: Volume,
}

/// Sliding-window count per axis: `floor((dim - p) / s) + 1`.
pub fn crop_counts(dims: Dims, patch: usize, stride: [usize; 3]) -> Result<[usize; 3]> {
    let plan = CropPlan {
        patch,
        stride,
        random_extra: 0,
        seed: 0,
    };
    plan.validate(dims)?;
    Ok(std::array::from_fn(|a| (dims[a] - patch) / stride[a] + 1))
}

/// Origins `{0, s, 2s, ...}` per axis with `origin + p <= dim`, ordered
/// lexicographically in `(x, y, z)`.
pub fn sliding_origins(dims: Dims, patch: usize, stride: [usize; 3]) -> Result<Vec<[usize; 3]>> {
    let n = crop_counts(dims, patch, stride)?;
    let mut out = Vec::with_capacity(n.iter().product());
    for i in 0..n[0] {
        for j in 0..n[1] {
            for k in 0..n[2] {
                out.push([i * stride[0], j * stride[1], k * stride[2]]);
            }
        }
    }
    Ok(out)
}

pub fn sliding_crops(volume: &Volume, plan: &CropPlan) -> Result<Vec<Patch>> {
    crop_all(
        volume,
        plan.patch,
        sliding_origins(volume.dims(), plan.patch, plan.stride)?,
    )
}

/// `n` origins drawn uniformly from `[0, dim - p]` per axis.
pub fn random_origins(dims: Dims, n: usize, patch: usize, seed: u64) -> Result<Vec<[usize; 3]>> {
    ensure!(
        patch >= 1 && dims.iter().all(|&d| d >= patch),
        InvalidArgument,
        "patch {patch} does not fit volume {dims:?}"
    );
    let mut rng = rng_from_seed(seed);
    Ok((0..n)
        .map(|_| std::array::from_fn(|a| rng.random_range(0..=dims[a] - patch)))
        .collect())
}

pub fn random_crops(volume: &Volume, n: usize, patch: usize, seed: u64) -> Result<Vec<Patch>> {
    crop_all(
        volume,
        patch,
        random_origins(volume.dims(), n, patch, seed)?,
    )
}

fn crop_all(volume: &Volume, patch: usize, origins: Vec<[usize; 3]>) -> Result<Vec<Patch>> {
    origins
        .into_iter()
        .map(|origin| {
            Ok(Patch {
                origin,
                volume: volume.extract(origin, [patch; 3])?,
            })
        })
        .collect()
}

/// Where label patches come from.
#[derive(Clone, Debug)]
pub enum LabelSource {
    /// `count` random-shape volumes; entry `i` uses the shape config with its
    /// seed replaced by `mix_seed(config.seed, i)`.
    Shapes { config: ShapeConfig, count: usize },
    /// Named susceptibility volumes cut into patches by the plan: all sliding
    /// crops, then `random_extra` random crops per volume.
    Volumes {
        volumes: Vec<(String, Volume)>,
        plan: CropPlan,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestEntry {
    pub index: usize,
    pub source: String,
    pub origin: [usize; 3],
    pub seed: u64,
    pub input: String,
    pub label: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DatasetManifest {
    pub patch: Dims,
    pub voxel_size: [f64; 3],
    /// SHA-256 (hex) of the canonical generation parameters.
    pub params_hash: String,
    pub params: KeyValues,
    pub entries: Vec<ManifestEntry>,
}

pub fn input_name(index: usize) -> String {
    format!("input_{index:06}.qvol")
}

pub fn label_name(index: usize) -> String {
    format!("label_{index:06}.qvol")
}

fn hex_digest(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Plans the entries of a dataset without producing any voxels.
fn plan_entries(source: &LabelSource) -> Result<(Dims, [f64; 3], KeyValues, Vec<ManifestEntry>)> {
    let entry = |index, source: &str, origin, seed| ManifestEntry {
        index,
        source: source.to_string(),
        origin,
        seed,
        input: input_name(index),
        label: label_name(index),
    };
    match source {
        LabelSource::Shapes { config, count } => {
            config.validate()?;
            let mut params = KeyValues::new();
            params.set("kind", "shapes");
            params.set("count", count);
            for key in config
                .to_key_values()
                .keys()
                .map(str::to_string)
                .collect::<Vec<_>>()
            {
                let kv = config.to_key_values();
                params.set(
                    &format!("shapes.{key}"),
                    kv.get_str(&key).unwrap_or_default(),
                );
            }
            let entries = (0..*count)
                .map(|i| entry(i, "shapes", [0; 3], mix_seed(config.seed, i as u64)))
                .collect();
            Ok((config.dims, config.voxel_size, params, entries))
        }
        LabelSource::Volumes { volumes, plan } => {
            ensure!(
                !volumes.is_empty(),
                InvalidArgument,
                "no label volumes given"
            );
            let voxel = volumes[0].1.voxel_size();
            let mut params = KeyValues::new();
            params.set("kind", "volumes");
            params.set("patch", plan.patch);
            params.set("stride", join_list(&plan.stride));
            params.set("random_extra", plan.random_extra);
            params.set("seed", plan.seed);
            let mut entries = Vec::new();
            for (v_idx, (name, vol)) in volumes.iter().enumerate() {
                ensure!(
                    vol.voxel_size() == voxel,
                    InvalidArgument,
                    "label volumes must share a voxel size"
                );
                ensure!(
                    !name.is_empty() && !name.contains(['\t', '\n']),
                    InvalidArgument,
                    "invalid source name {name:?}"
                );
                plan.validate(vol.dims())?;
                params.set(
                    &format!("source.{v_idx}"),
                    format!("{name}:{}", join_list(&vol.dims())),
                );
                for o in sliding_origins(vol.dims(), plan.patch, plan.stride)? {
                    entries.push(entry(entries.len(), name, o, plan.seed));
                }
                let seed = mix_seed(plan.seed, v_idx as u64);
                for o in random_origins(vol.dims(), plan.random_extra, plan.patch, seed)? {
                    entries.push(entry(entries.len(), name, o, seed));
                }
            }
            Ok(([plan.patch; 3], voxel, params, entries))
        }
    }
}

/// The label patch of one manifest entry.
fn entry_label(source: &LabelSource, e: &ManifestEntry, patch: Dims) -> Result<Volume> {
    match source {
        LabelSource::Shapes { config, .. } => random_shapes(&ShapeConfig {
            seed: e.seed,
            ..config.clone()
        }),
        LabelSource::Volumes { volumes, .. } => {
            let (_, vol) = volumes
                .iter()
                .find(|(n, _)| *n == e.source)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown source {}", e.source)))?;
            vol.extract(e.origin, patch)
        }
    }
}

/// Generates every pair, writes it under `out_dir` together with the
/// manifest, and returns the manifest. The input of each pair is the forward
/// field of its label computed at patch size.
pub fn build_dataset(source: &LabelSource, out_dir: impl AsRef<Path>) -> Result<DatasetManifest> {
    let out_dir = out_dir.as_ref();
    let (patch, voxel_size, params, entries) = plan_entries(source)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let kernel = dipole_kernel(patch, voxel_size)?;
    entries.par_iter().try_for_each(|e| -> Result<()> {
        let label = entry_label(source, e, patch)?;
        let input = forward_field(&label, &kernel)?;
        write_volume(&label, out_dir.join(&e.label))?;
        write_volume(&input, out_dir.join(&e.input))
    })?;
    let manifest = DatasetManifest {
        patch,
        voxel_size,
        params_hash: hex_digest(&params.to_text()),
        params,
        entries,
    };
    manifest.write(out_dir.join(MANIFEST_FILE))?;
    Ok(manifest)
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("#version={MANIFEST_VERSION}\n"));
        s.push_str(&format!("#patch={}\n", join_list(&self.patch)));
        s.push_str(&format!("#voxel_size={}\n", join_list(&self.voxel_size)));
        s.push_str(&format!("#count={}\n", self.entries.len()));
        s.push_str(&format!("#params_hash={}\n", self.params_hash));
        for key in self.params.keys() {
            let v = self.params.get_str(key).unwrap_or_default();
            s.push_str(&format!("#param.{key}={v}\n"));
        }
        s.push_str("index\tsource\tox\toy\toz\tseed\tinput\tlabel\n");
        for e in &self.entries {
            s.push_str(&format!(
                "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
                e.index, e.source, e.origin[0], e.origin[1], e.origin[2], e.seed, e.input, e.label
            ));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Config(format!("manifest: {m}"));
        let mut header = KeyValues::new();
        let mut params = KeyValues::new();
        let mut entries = Vec::new();
        let mut seen_columns = false;
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix('#') {
                let (k, v) = rest
                    .split_once('=')
                    .ok_or_else(|| bad(format!("bad header line {line:?}")))?;
                match k.strip_prefix("param.") {
                    Some(p) => params.set(p, v),
                    None => header.set(k, v),
                }
                continue;
            }
            if !seen_columns {
                ensure!(
                    line.starts_with("index\t"),
                    Config,
                    "manifest: missing column header"
                );
                seen_columns = true;
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            ensure!(
                f.len() == 8,
                Config,
                "manifest: expected 8 columns in {line:?}"
            );
            let num = |s: &str| {
                s.parse::<u64>()
                    .map_err(|_| bad(format!("bad number {s:?}")))
            };
            entries.push(ManifestEntry {
                index: num(f[0])? as usize,
                source: f[1].to_string(),
                origin: [
                    num(f[2])? as usize,
                    num(f[3])? as usize,
                    num(f[4])? as usize,
                ],
                seed: num(f[5])?,
                input: f[6].to_string(),
                label: f[7].to_string(),
            });
        }
        let version: u32 = header
            .get("version")?
            .ok_or_else(|| bad("missing version".into()))?;
        if version != MANIFEST_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let list3 = |key: &str| -> Result<Vec<String>> {
            let s = header
                .get_str(key)
                .ok_or_else(|| bad(format!("missing {key}")))?;
            let v: Vec<String> = parse_list(s).map_err(bad)?;
            ensure!(v.len() == 3, Config, "manifest: {key} needs three values");
            Ok(v)
        };
        let patch = list3("patch")?
            .iter()
            .map(|s| {
                s.parse::<usize>()
                    .map_err(|_| bad(format!("bad patch {s}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let voxel = list3("voxel_size")?
            .iter()
            .map(|s| {
                s.parse::<f64>()
                    .map_err(|_| bad(format!("bad voxel size {s}")))
            })
            .collect::<Result<Vec<_>>>()?;
        let count: usize = header
            .get("count")?
            .ok_or_else(|| bad("missing count".into()))?;
        ensure!(
            count == entries.len(),
            Config,
            "manifest declares {count} entries but lists {}",
            entries.len()
        );
        for (i, e) in entries.iter().enumerate() {
            ensure!(
                e.index == i,
                Config,
                "manifest entry {i} has index {}",
                e.index
            );
        }
        Ok(Self {
            patch: [patch[0], patch[1], patch[2]],
            voxel_size: [voxel[0], voxel[1], voxel[2]],
            params_hash: header
                .get_str("params_hash")
                .ok_or_else(|| bad("missing params_hash".into()))?
                .to_string(),
            params,
            entries,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    /// Rebuilds the random-shape source recorded in the manifest parameters.
    /// Volume-cropped datasets need their source volumes and return `None`.
    pub fn shape_source(&self) -> Result<Option<LabelSource>> {
        if self.params.get_str("kind") != Some("shapes") {
            return Ok(None);
        }
        let mut kv = KeyValues::new();
        for key in self.params.keys() {
            if let Some(k) = key.strip_prefix("shapes.") {
                kv.set(k, self.params.get_str(key).unwrap_or_default());
            }
        }
        let count = self
            .params
            .get("count")?
            .ok_or_else(|| Error::Config("manifest lacks param.count".into()))?;
        Ok(Some(LabelSource::Shapes {
            config: ShapeConfig::from_key_values(&kv, self.patch)?,
            count,
        }))
    }
}

/// Loaded training pairs, kept in 32-bit.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub dir: PathBuf,
    pub inputs: Vec<Vec<f32>>,
    pub labels: Vec<Vec<f32>>,
}

impl Dataset {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        let manifest = DatasetManifest::read(dir.join(MANIFEST_FILE))?;
        let load = |name: &str| -> Result<Vec<f32>> {
            let v = read_volume(dir.join(name))?;
            ensure!(
                v.dims() == manifest.patch,
                Shape,
                "{name} has dims {:?}, manifest says {:?}",
                v.dims(),
                manifest.patch
            );
            Ok(v.data().iter().map(|&x| x as f32).collect())
        };
        let (inputs, labels) = manifest
            .entries
            .par_iter()
            .map(|e| Ok((load(&e.input)?, load(&e.label)?)))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .unzip();
        Ok(Self {
            manifest,
            dir,
            inputs,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// A permutation of `0..n` cut into full batches; the remainder is dropped.
/// The permutation depends on `(seed, epoch)`.
pub fn shuffle_batches(
    n: usize,
    batch_size: usize,
    seed: u64,
    epoch: u64,
) -> Result<Vec<Vec<usize>>> {
    ensure!(batch_size >= 1, InvalidArgument, "batch size must be >= 1");
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_from_seed(mix_seed(seed, epoch)));
    Ok(order
        .chunks_exact(batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::volgrid::Unit;

    #[test]
    fn full_scale_crop_count() {
        let n = crop_counts([144, 196, 128], 48, [24, 36, 20]).unwrap();
        assert_eq!(n, [5, 5, 5]);
        assert_eq!(n.iter().product::<usize>() * 90, 11_250);
    }

    #[test]
    fn crop_edge_cases() {
        assert_eq!(
            sliding_origins([48; 3], 48, [24, 36, 20]).unwrap(),
            vec![[0; 3]]
        );
        assert_eq!(sliding_origins([96; 3], 48, [48; 3]).unwrap().len(), 8);
        assert!(sliding_origins([40, 64, 64], 48, [8; 3]).is_err());
        assert!(sliding_origins([64; 3], 48, [0, 1, 1]).is_err());
    }

    #[test]
    fn random_origins_valid_and_seeded() {
        let a = random_origins([50, 60, 70], 40, 32, 9).unwrap();
        assert_eq!(a, random_origins([50, 60, 70], 40, 32, 9).unwrap());
        assert!(random_origins([50, 60, 70], 0, 32, 9).unwrap().is_empty());
        for o in &a {
            assert!(o[0] <= 18 && o[1] <= 28 && o[2] <= 38);
        }
    }

    #[test]
    fn crops_extract_expected_voxels() {
        let v = Volume::from_fn([6, 5, 4], [1.0; 3], Unit::Ppb, |x, y, z| {
            (x + 10 * y + 100 * z) as f64
        })
        .unwrap();
        let p = sliding_crops(
            &v,
            &CropPlan {
                patch: 4,
                stride: [2, 1, 1],
                random_extra: 0,
                seed: 0,
            },
        )
        .unwrap();
        assert_eq!(p.len(), 2 * 2);
        assert_eq!(p[1].origin, [0, 1, 0]);
        assert_eq!(p[1].volume.get(0, 0, 0), 10.0);
        assert_eq!(p[3].origin, [2, 1, 0]);
        assert_eq!(p[3].volume.get(3, 3, 3), 5.0 + 40.0 + 300.0);
    }

    #[test]
    fn batches() {
        let b = shuffle_batches(10, 3, 1, 0).unwrap();
        assert_eq!(b.len(), 3);
        let mut all: Vec<usize> = b.concat();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), 9);
        assert_eq!(shuffle_batches(7, 7, 1, 0).unwrap().len(), 1);
        let e0 = shuffle_batches(50, 50, 3, 0).unwrap();
        let e1 = shuffle_batches(50, 50, 3, 1).unwrap();
        assert_ne!(e0, e1);
        assert_eq!(e0, shuffle_batches(50, 50, 3, 0).unwrap());
        assert!(shuffle_batches(5, 0, 0, 0).is_err());
    }
}
