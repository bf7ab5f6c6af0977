//! Training loop, full-volume and patch-wise inference.

use std::path::PathBuf;

use crate::config::KeyValues;
use crate::datapipe::{shuffle_batches, Dataset};
use crate::error::{ensure, Error, Result};
use crate::net::Network;
use crate::nn::{l2_loss, AdamState, HasParams, Mode, Scalar, Tensor5};
use crate::seed::{mix_seed, rng_from_seed};
use crate::volgrid::{crop_with_record, pad_to_multiple, Dims, Unit, Volume};

/// Constant learning rate over an inclusive 1-based epoch range.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrStage {
    pub first_epoch: usize,
    pub last_epoch: usize,
    pub lr: f64,
}

/// 1e-3, 1e-4, 1e-5 over the first half, the next 30 % and the last 20 % of
/// `epochs` (epochs 1-50, 51-80, 81-100 at 100 epochs).
pub fn step_schedule(epochs: usize) -> Vec<LrStage> {
    let a = (epochs * 5).div_ceil(10).max(1).min(epochs);
    let b = (epochs * 8).div_ceil(10).max(a).min(epochs);
    let mut out = vec![LrStage {
        first_epoch: 1,
        last_epoch: a,
        lr: 1e-3,
    }];
    if b > a {
        out.push(LrStage {
            first_epoch: a + 1,
            last_epoch: b,
            lr: 1e-4,
        });
    }
    if epochs > b {
        out.push(LrStage {
            first_epoch: b + 1,
            last_epoch: epochs,
            lr: 1e-5,
        });
    }
    out
}

/// Parses `first-last:lr` stages separated by commas, e.g.
/// `1-50:1e-3,51-80:1e-4`.
pub fn parse_schedule(s: &str) -> Result<Vec<LrStage>> {
    let bad = || Error::Config(format!("bad schedule {s:?}; expected first-last:lr,..."));
    s.split(',')
        .filter(|p| !p.trim().is_empty())
        .map(|p| {
            let (range, lr) = p.trim().split_once(':').ok_or_else(bad)?;
            let (a, b) = range.split_once('-').ok_or_else(bad)?;
            Ok(LrStage {
                first_epoch: a.trim().parse().map_err(|_| bad())?,
                last_epoch: b.trim().parse().map_err(|_| bad())?,
                lr: lr.trim().parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

pub fn format_schedule(stages: &[LrStage]) -> String {
    stages
        .iter()
        .map(|s| format!("{}-{}:{}", s.first_epoch, s.last_epoch, s.lr))
        .collect::<Vec<_>>()
        .join(",")
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: Vec<LrStage>,
    pub seed: u64,
    /// Write a checkpoint every this many epochs (0: only the final one).
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
}

impl TrainConfig {
    /// 100 epochs, batch 32, the step schedule.
    pub fn full_scale() -> Self {
        Self {
            epochs: 100,
            batch_size: 32,
            schedule: step_schedule(100),
            seed: 0,
            checkpoint_every: 0,
            checkpoint_dir: None,
        }
    }

    /// 20 epochs, batch 4, the step schedule scaled to 20 epochs.
    pub fn desk() -> Self {
        Self {
            epochs: 20,
            batch_size: 4,
            schedule: step_schedule(20),
            ..Self::full_scale()
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.epochs >= 1, Config, "epochs must be >= 1");
        ensure!(self.batch_size >= 1, Config, "batch size must be >= 1");
        let mut next = 1;
        for s in &self.schedule {
            ensure!(
                s.first_epoch == next && s.last_epoch >= s.first_epoch,
                Config,
                "schedule stage {s:?} leaves a gap or overlaps (expected start {next})"
            );
            ensure!(
                s.lr > 0.0 && s.lr.is_finite(),
                Config,
                "learning rate must be positive"
            );
            next = s.last_epoch + 1;
        }
        ensure!(
            next == self.epochs + 1,
            Config,
            "schedule covers epochs 1-{} but training runs {}",
            next - 1,
            self.epochs
        );
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.schedule
            .iter()
            .find(|s| (s.first_epoch..=s.last_epoch).contains(&epoch))
            .map_or(0.0, |s| s.lr)
    }

    pub fn to_key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.set("epochs", self.epochs);
        kv.set("batch", self.batch_size);
        kv.set("schedule", format_schedule(&self.schedule));
        kv.set("seed", self.seed);
        kv
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochStat {
    pub epoch: usize,
    /// Mean batch loss in network units (ppb / value_scale, squared).
    pub mean_loss: f64,
    pub lr: f64,
}

pub fn history_tsv(history: &[EpochStat]) -> String {
    let mut s = String::from("epoch\tmean_loss\tlr\n");
    for e in history {
        s.push_str(&format!("{}\t{}\t{}\n", e.epoch, e.mean_loss, e.lr));
    }
    s
}

/// Seed stream of the noise layer, relative to the training seed.
const NOISE_STREAM: u64 = 0x6e6f697365;
/// Seed stream of the batch order.
const SHUFFLE_STREAM: u64 = 0x73687566;

fn batch_tensor<T: Scalar>(items: &[&[f32]], dims: Dims, scale: f64) -> Result<Tensor5<T>> {
    let inv = 1.0 / scale;
    let data = items
        .iter()
        .flat_map(|v| v.iter().map(move |&x| T::of(x as f64 * inv)))
        .collect();
    Tensor5::from_vec([items.len(), 1, dims[2], dims[1], dims[0]], data)
}

/// Mini-batch Adam on the L2 loss with the configured schedule. Inputs and
/// labels are divided by the network's value scale. Calls `on_epoch` after
/// every epoch and writes checkpoints as configured. Aborts on a non-finite
/// loss.
pub fn train<T: Scalar>(
    net: &mut Network<T>,
    data: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStat, &mut Network<T>) -> Result<()>,
) -> Result<Vec<EpochStat>> {
    config.validate()?;
    ensure!(!data.is_empty(), InvalidArgument, "empty dataset");
    ensure!(
        data.len() >= config.batch_size,
        InvalidArgument,
        "dataset of {} pairs cannot fill a batch of {}",
        data.len(),
        config.batch_size
    );
    let dims = data.manifest.patch;
    let scale = net.config.value_scale;
    let mut adam = AdamState::new(config.lr_at(1));
    let mut noise_rng = rng_from_seed(mix_seed(config.seed, NOISE_STREAM));
    let shuffle_seed = mix_seed(config.seed, SHUFFLE_STREAM);
    let mut history = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        adam.lr = config.lr_at(epoch);
        let batches = shuffle_batches(data.len(), config.batch_size, shuffle_seed, epoch as u64)?;
        let mut total = 0.0;
        for (b, idx) in batches.iter().enumerate() {
            let inputs: Vec<&[f32]> = idx.iter().map(|&i| data.inputs[i].as_slice()).collect();
            let labels: Vec<&[f32]> = idx.iter().map(|&i| data.labels[i].as_slice()).collect();
            let x = batch_tensor::<T>(&inputs, dims, scale)?;
            let y = batch_tensor::<T>(&labels, dims, scale)?;
            let pred = net.forward(&x, Mode::Train, Some(&mut noise_rng))?;
            let (loss, grad) = l2_loss(&pred, &y)?;
            ensure!(
                loss.is_finite(),
                NonFinite,
                "non-finite loss at epoch {epoch}, batch {b} (entries {idx:?})"
            );
            net.zero_grad();
            net.backward(&grad)?;
            adam.step(net)?;
            total += loss;
        }
        let stat = EpochStat {
            epoch,
            mean_loss: total / batches.len() as f64,
            lr: adam.lr,
        };
        history.push(stat);
        if let Some(dir) = &config.checkpoint_dir {
            let due = config.checkpoint_every > 0 && epoch % config.checkpoint_every == 0;
            if due || epoch == config.epochs {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                net.save(dir.join(format!("epoch_{epoch:04}.oqck")))?;
            }
        }
        on_epoch(&stat, net)?;
    }
    Ok(history)
}

/// Volume (x fastest) as a `(1, 1, nz, ny, nx)` tensor divided by `scale`.
pub fn volume_to_tensor<T: Scalar>(v: &Volume, scale: f64) -> Tensor5<T> {
    let [nx, ny, nz] = v.dims();
    let data = v.data().iter().map(|&x| T::of(x / scale)).collect();
    Tensor5::from_vec([1, 1, nz, ny, nx], data).expect("volume length matches dims")
}

/// Eval-mode prediction on a whole volume: zero-pad to the network divisor,
/// run, crop back. Returns ppb.
pub fn infer_full<T: Scalar>(net: &mut Network<T>, field: &Volume) -> Result<Volume> {
    ensure!(
        field.all_finite(),
        NonFinite,
        "input field has non-finite values"
    );
    let (padded, record) = pad_to_multiple(field, net.config.divisor)?;
    let scale = net.config.value_scale;
    let y = net.forward(&volume_to_tensor(&padded, scale), Mode::Eval, None)?;
    let out = padded.with_data(
        y.data().iter().map(|v| v.f64() * scale).collect(),
        Unit::Ppb,
    )?;
    crop_with_record(&out, &record)
}

/// Patch origins along one axis: multiples of `stride`, plus a final
/// patch flush with the far edge when the stride does not land there.
fn axis_origins(n: usize, patch: usize, stride: usize) -> Vec<usize> {
    let mut o: Vec<usize> = (0..=n - patch).step_by(stride).collect();
    if *o.last().expect("n >= patch") != n - patch {
        o.push(n - patch);
    }
    o
}

/// Number of patches evaluated together.
const PATCH_BATCH: usize = 8;

/// Patch-then-assemble prediction: cubic patches on a grid with the given
/// stride (edge patches clamped to the boundary), each reconstructed on its
/// own, overlaps averaged with equal weights.
pub fn infer_patches<T: Scalar>(
    net: &mut Network<T>,
    field: &Volume,
    patch: usize,
    stride: usize,
) -> Result<Volume> {
    ensure!(
        field.all_finite(),
        NonFinite,
        "input field has non-finite values"
    );
    let m = net.config.divisor;
    ensure!(
        patch >= m && patch.is_multiple_of(m),
        InvalidArgument,
        "patch size {patch} must be a positive multiple of {m}"
    );
    ensure!(stride >= 1, InvalidArgument, "stride must be >= 1");
    let dims = field.dims();
    ensure!(
        dims.iter().all(|&d| d >= patch),
        InvalidArgument,
        "patch {patch} larger than volume {dims:?}"
    );
    let per_axis: Vec<Vec<usize>> = dims
        .iter()
        .map(|&n| axis_origins(n, patch, stride))
        .collect();
    let mut origins = Vec::new();
    for &x in &per_axis[0] {
        for &y in &per_axis[1] {
            for &z in &per_axis[2] {
                origins.push([x, y, z]);
            }
        }
    }
    let scale = net.config.value_scale;
    let mut sum = vec![0.0f64; field.len()];
    let mut count = vec![0u32; field.len()];
    let plen = patch * patch * patch;
    for chunk in origins.chunks(PATCH_BATCH) {
        let tensors: Vec<Tensor5<T>> = chunk
            .iter()
            .map(|&o| Ok(volume_to_tensor(&field.extract(o, [patch; 3])?, scale)))
            .collect::<Result<_>>()?;
        let y = net.forward(&Tensor5::stack(&tensors)?, Mode::Eval, None)?;
        for (k, o) in chunk.iter().enumerate() {
            let pred = &y.data()[k * plen..(k + 1) * plen];
            for z in 0..patch {
                for yy in 0..patch {
                    let src = &pred[(z * patch + yy) * patch..][..patch];
                    let row = field.index(o[0], o[1] + yy, o[2] + z);
                    for (x, &v) in src.iter().enumerate() {
                        sum[row + x] += v.f64() * scale;
                        count[row + x] += 1;
                    }
                }
            }
        }
    }
    debug_assert!(count.iter().all(|&c| c > 0));
    let data = sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect();
    field.with_data(data, Unit::Ppb)
}
