//! `octqsm` command-line front end.
//!
//! Every flag can also be given in a flat `key = value` file passed with
//! `--config`; the key is the flag's long name with dashes replaced by
//! underscores (`--patch-size` is `patch_size`). Flags win over the file.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use octqsm::config::{parse_list, KeyValues};
use octqsm::datapipe::{build_dataset, CropPlan, Dataset, LabelSource};
use octqsm::gradcheck::run_suite;
use octqsm::metrics::MetricReport;
use octqsm::net::{build_xqsm, Network, NetworkConfig};
use octqsm::phantom::{dims_from_list, labels_from_volume, SHEPP_LOGAN_PPB};
use octqsm::train::{
    history_tsv, infer_full, infer_patches, parse_schedule, step_schedule, TrainConfig,
};
use octqsm::{
    dipole_kernel, forward_field, random_shapes, read_volume, shepp_logan, tkd_invert,
    write_volume, Dims, ShapeConfig,
};

#[derive(Parser)]
#[command(name = "octqsm", version, about = "QSM dipole inversion toolkit")]
struct Cli {
    /// Worker threads; 1 gives the sequential, bit-reproducible mode.
    #[arg(long, global = true, env = "OCTQSM_THREADS")]
    threads: Option<usize>,
    /// Flat key=value file supplying defaults for any flag.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a susceptibility phantom (ppb) and, for shepp, its label map.
    Phantom(PhantomArgs),
    /// Forward dipole field of a susceptibility volume.
    Field(FieldArgs),
    /// Truncated k-space dipole inversion.
    Tkd(TkdArgs),
    /// Build a (field, susceptibility) training set with a manifest.
    Dataset(DatasetArgs),
    /// Train an xQSM network on a dataset directory.
    Train(TrainArgs),
    /// Reconstruct susceptibility from a field with a trained checkpoint.
    Infer(InferArgs),
    /// Compare a reconstruction with a reference.
    Eval(EvalArgs),
    /// Run the finite-difference gradient suite.
    Gradcheck(GradcheckArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum PhantomKind {
    Shepp,
    Shapes,
}

#[derive(Args)]
struct PhantomArgs {
    kind: PhantomKind,
    /// `n` or `nx,ny,nz` [shepp: 64, shapes: 32]
    #[arg(long)]
    dims: Option<String>,
    /// `d` or `dx,dy,dz` in mm (shapes only; shepp uses 1 mm)
    #[arg(long)]
    voxel_size: Option<String>,
    /// Six region values in ppb (shepp)
    #[arg(long)]
    values: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Label map path [default: <out>.labels.qvol]
    #[arg(long)]
    labels: Option<PathBuf>,
}

#[derive(Args)]
struct FieldArgs {
    #[arg(long)]
    chi: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TkdArgs {
    #[arg(long)]
    field: Option<PathBuf>,
    /// Kernel magnitude below which division is clamped [0.2]
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceKind {
    Shapes,
    Volumes,
}

#[derive(Args)]
struct DatasetArgs {
    /// Label source [shapes]
    #[arg(long, value_enum)]
    source: Option<SourceKind>,
    /// Number of random-shape pairs [300]
    #[arg(long)]
    count: Option<usize>,
    /// Patch dims of random-shape pairs [32]
    #[arg(long)]
    dims: Option<String>,
    #[arg(long)]
    voxel_size: Option<String>,
    /// Susceptibility volumes to crop (volumes source), comma separated
    #[arg(long)]
    chi: Option<String>,
    /// Crop size (volumes source) [32]
    #[arg(long)]
    patch_size: Option<usize>,
    /// `s` or `sx,sy,sz` (volumes source) [16]
    #[arg(long)]
    stride: Option<String>,
    /// Extra random crops per volume [0]
    #[arg(long)]
    random_extra: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory
    #[arg(long)]
    data: Option<PathBuf>,
    /// Final checkpoint path
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    /// Base channel width [8]
    #[arg(long)]
    width: Option<usize>,
    /// Noise layer probability [0.2]
    #[arg(long)]
    noise_p: Option<f64>,
    /// Noise layer SNRs [40,20,10,5]
    #[arg(long)]
    snr_list: Option<String>,
    /// `first-last:lr,...` [1e-3/1e-4/1e-5 over 50/30/20 % of the epochs]
    #[arg(long)]
    lr_schedule: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Loss history TSV [<checkpoint>.history.tsv]
    #[arg(long)]
    history: Option<PathBuf>,
    /// Directory for per-epoch checkpoints
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// Epochs between checkpoints in checkpoint_dir [0: final only]
    #[arg(long)]
    checkpoint_every: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum InferMode {
    Full,
    Patches,
}

#[derive(Args)]
struct InferArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    field: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// [full]
    #[arg(long, value_enum)]
    mode: Option<InferMode>,
    /// Cubic patch edge (patches mode) [32]
    #[arg(long)]
    patch_size: Option<usize>,
    /// Patch stride (patches mode) [half the patch size]
    #[arg(long)]
    stride: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    pred: Option<PathBuf>,
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    /// Label map; adds per-region statistics against the reference mean
    #[arg(long)]
    labels: Option<PathBuf>,
    /// TSV report path (also printed to stdout)
    #[arg(long)]
    out: Option<PathBuf>,
    /// One-line JSON record path
    #[arg(long)]
    record: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Sampled parameters in the end-to-end network check [50]
    #[arg(long)]
    samples: Option<usize>,
}

/// A missing or malformed argument: exit code 1.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn usage(msg: String) -> anyhow::Error {
    Usage(msg).into()
}

/// Flag values with fallback to the config file.
struct Settings {
    file: KeyValues,
}

impl Settings {
    fn load(path: Option<&Path>) -> Result<Self> {
        let file = match path {
            Some(p) => KeyValues::read(p).map_err(|e| usage(format!("config file: {e}")))?,
            None => KeyValues::new(),
        };
        Ok(Self { file })
    }

    fn opt<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        if flag.is_some() {
            return Ok(flag);
        }
        self.file
            .get(key)
            .map_err(|e| usage(format!("config key {key}: {e}")))
    }

    fn or<T: FromStr>(&self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.opt(flag, key)?.unwrap_or(default))
    }

    fn req<T: FromStr>(&self, flag: Option<T>, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.opt(flag, key)?
            .ok_or_else(|| usage(format!("missing --{}", key.replace('_', "-"))))
    }

    fn list<T: FromStr>(&self, flag: Option<String>, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        match self.opt::<String>(flag, key)? {
            Some(s) => parse_list(&s)
                .map(Some)
                .map_err(|e| usage(format!("--{}: {e}", key.replace('_', "-")))),
            None => Ok(None),
        }
    }

    fn dims(&self, flag: Option<String>, default: usize) -> Result<Dims> {
        match self.list::<usize>(flag, "dims")? {
            Some(v) => dims_from_list(&v).map_err(|e| usage(e.to_string())),
            None => Ok([default; 3]),
        }
    }

    fn triple(&self, flag: Option<String>, key: &str) -> Result<Option<[f64; 3]>> {
        Ok(match self.list::<f64>(flag, key)?.as_deref() {
            None => None,
            Some(&[a]) => Some([a; 3]),
            Some(&[a, b, c]) => Some([a, b, c]),
            Some(_) => {
                return Err(usage(format!(
                    "--{} needs one or three values",
                    key.replace('_', "-")
                )))
            }
        })
    }
}

fn labels_path(out: &Path) -> PathBuf {
    let stem = out
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("phantom");
    out.with_file_name(format!("{stem}.labels.qvol"))
}

fn cmd_phantom(s: &Settings, a: PhantomArgs) -> Result<()> {
    let out: PathBuf = s.req(a.out, "out")?;
    match a.kind {
        PhantomKind::Shepp => {
            let dims = s.dims(a.dims, 64)?;
            let values = match s.list::<f64>(a.values, "values")? {
                Some(v) => <[f64; 6]>::try_from(v.as_slice())
                    .map_err(|_| usage("--values needs six numbers".into()))?,
                None => SHEPP_LOGAN_PPB,
            };
            let p = shepp_logan(dims, values)?;
            write_volume(&p.chi, &out)?;
            let labels = s
                .opt(a.labels, "labels")?
                .unwrap_or_else(|| labels_path(&out));
            write_volume(&p.label_volume(), &labels)?;
            eprintln!("wrote {} and {}", out.display(), labels.display());
        }
        PhantomKind::Shapes => {
            let mut cfg = ShapeConfig::from_key_values(&s.file, [32; 3])?;
            if a.dims.is_some() {
                cfg.dims = s.dims(a.dims, 32)?;
            }
            if let Some(v) = s.triple(a.voxel_size, "voxel_size")? {
                cfg.voxel_size = v;
            }
            if let Some(seed) = a.seed {
                cfg.seed = seed;
            }
            write_volume(&random_shapes(&cfg)?, &out)?;
            eprintln!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn cmd_field(s: &Settings, a: FieldArgs) -> Result<()> {
    let (chi, out): (PathBuf, PathBuf) = (s.req(a.chi, "chi")?, s.req(a.out, "out")?);
    let chi = read_volume(chi)?;
    let kernel = dipole_kernel(chi.dims(), chi.voxel_size())?;
    write_volume(&forward_field(&chi, &kernel)?, out)?;
    Ok(())
}

fn cmd_tkd(s: &Settings, a: TkdArgs) -> Result<()> {
    let (field, out): (PathBuf, PathBuf) = (s.req(a.field, "field")?, s.req(a.out, "out")?);
    let threshold = s.or(a.threshold, "threshold", 0.2)?;
    let field = read_volume(field)?;
    let kernel = dipole_kernel(field.dims(), field.voxel_size())?;
    write_volume(&tkd_invert(&field, &kernel, threshold)?, out)?;
    Ok(())
}

fn cmd_dataset(s: &Settings, a: DatasetArgs) -> Result<()> {
    let out: PathBuf = s.req(a.out, "out")?;
    let source_name = match a.source {
        Some(SourceKind::Shapes) => "shapes".to_string(),
        Some(SourceKind::Volumes) => "volumes".to_string(),
        None => s.or(None, "source", "shapes".to_string())?,
    };
    let source = match source_name.as_str() {
        "shapes" => {
            let mut config = ShapeConfig::from_key_values(&s.file, [32; 3])?;
            if a.dims.is_some() {
                config.dims = s.dims(a.dims, 32)?;
            }
            if let Some(v) = s.triple(a.voxel_size, "voxel_size")? {
                config.voxel_size = v;
            }
            if let Some(seed) = a.seed {
                config.seed = seed;
            }
            LabelSource::Shapes {
                config,
                count: s.or(a.count, "count", 300)?,
            }
        }
        "volumes" => {
            let paths: Vec<String> = s
                .list(a.chi, "chi")?
                .ok_or_else(|| usage("volumes source needs --chi".into()))?;
            let volumes = paths
                .iter()
                .map(|p| {
                    let name = Path::new(p)
                        .file_stem()
                        .and_then(|n| n.to_str())
                        .unwrap_or(p)
                        .to_string();
                    Ok((
                        name,
                        read_volume(p).with_context(|| format!("reading {p}"))?,
                    ))
                })
                .collect::<Result<Vec<_>>>()?;
            let desk = CropPlan::desk();
            let stride = match s.list::<usize>(a.stride, "stride")?.as_deref() {
                None => desk.stride,
                Some(&[v]) => [v; 3],
                Some(&[x, y, z]) => [x, y, z],
                Some(_) => return Err(usage("--stride needs one or three values".into())),
            };
            let plan = CropPlan {
                patch: s.or(a.patch_size, "patch_size", desk.patch)?,
                stride,
                random_extra: s.or(a.random_extra, "random_extra", 0)?,
                seed: s.or(a.seed, "seed", 0)?,
            };
            LabelSource::Volumes { volumes, plan }
        }
        other => return Err(usage(format!("unknown source {other:?}"))),
    };
    let manifest = build_dataset(&source, &out)?;
    eprintln!("wrote {} pairs to {}", manifest.len(), out.display());
    Ok(())
}

fn cmd_train(s: &Settings, a: TrainArgs) -> Result<()> {
    let data_dir: PathBuf = s.req(a.data, "data")?;
    let checkpoint: PathBuf = s.req(a.checkpoint, "checkpoint")?;
    let mut net_cfg = NetworkConfig::from_key_values(&s.file)?;
    net_cfg.width = s.or(a.width, "width", NetworkConfig::desk().width)?;
    if let Some(p) = s.opt(a.noise_p, "noise_p")? {
        net_cfg.noise_probability = p;
    }
    if let Some(v) = s.list(a.snr_list, "snr_list")? {
        net_cfg.snr_list = v;
    }
    let desk = TrainConfig::desk();
    let epochs = s.or(a.epochs, "epochs", desk.epochs)?;
    let schedule = match s.opt::<String>(a.lr_schedule, "lr_schedule")? {
        Some(text) => parse_schedule(&text)?,
        None => step_schedule(epochs),
    };
    let seed = s.or(a.seed, "seed", 0)?;
    let cfg = TrainConfig {
        epochs,
        batch_size: s.or(a.batch, "batch", desk.batch_size)?,
        schedule,
        seed,
        checkpoint_every: s.or(a.checkpoint_every, "checkpoint_every", 0)?,
        checkpoint_dir: s.opt(a.checkpoint_dir, "checkpoint_dir")?,
    };
    let history_path = s.opt(a.history, "history")?.unwrap_or_else(|| {
        let stem = checkpoint
            .file_stem()
            .and_then(|n| n.to_str())
            .unwrap_or("train");
        checkpoint.with_file_name(format!("{stem}.history.tsv"))
    });
    let data = Dataset::load(&data_dir)?;
    let mut net = build_xqsm::<f32>(&net_cfg, seed)?;
    let history = octqsm::train::train(&mut net, &data, &cfg, |e, _| {
        eprintln!(
            "epoch {:>4}  loss {:.6e}  lr {:e}",
            e.epoch, e.mean_loss, e.lr
        );
        Ok(())
    })?;
    net.save(&checkpoint)?;
    std::fs::write(&history_path, history_tsv(&history))
        .with_context(|| format!("writing {}", history_path.display()))?;
    eprintln!(
        "wrote {} and {}",
        checkpoint.display(),
        history_path.display()
    );
    Ok(())
}

fn cmd_infer(s: &Settings, a: InferArgs) -> Result<()> {
    let checkpoint: PathBuf = s.req(a.checkpoint, "checkpoint")?;
    let field: PathBuf = s.req(a.field, "field")?;
    let out_path: PathBuf = s.req(a.out, "out")?;
    let mode = match a.mode {
        Some(m) => m,
        None => match s.or(None, "mode", "full".to_string())?.as_str() {
            "full" => InferMode::Full,
            "patches" => InferMode::Patches,
            other => return Err(usage(format!("unknown mode {other:?}"))),
        },
    };
    let mut net = Network::<f32>::load(checkpoint)?;
    let field = read_volume(field)?;
    let out = match mode {
        InferMode::Full => infer_full(&mut net, &field)?,
        InferMode::Patches => {
            let patch = s.or(a.patch_size, "patch_size", 32)?;
            let stride = s.or(a.stride, "stride", (patch / 2).max(1))?;
            infer_patches(&mut net, &field, patch, stride)?
        }
    };
    write_volume(&out, out_path)?;
    Ok(())
}

fn cmd_eval(s: &Settings, a: EvalArgs) -> Result<()> {
    let (pred, reference): (PathBuf, PathBuf) =
        (s.req(a.pred, "pred")?, s.req(a.reference, "ref")?);
    let (pred, reference) = (read_volume(pred)?, read_volume(reference)?);
    let report = match s.opt::<PathBuf>(a.labels, "labels")? {
        Some(path) => {
            let labels = labels_from_volume(&read_volume(path)?)?;
            let mut ids: Vec<u32> = labels.iter().copied().filter(|&l| l != 0).collect();
            ids.sort_unstable();
            ids.dedup();
            let regions = ids
                .iter()
                .map(|&id| {
                    let (mean, _) = octqsm::metrics::roi_stats(&reference, &labels, id)?;
                    Ok((id, Some(mean)))
                })
                .collect::<octqsm::Result<Vec<_>>>()?;
            MetricReport::evaluate(&pred, &reference, Some((&labels, &regions)))?
        }
        None => MetricReport::evaluate(&pred, &reference, None)?,
    };
    let tsv = report.to_tsv();
    print!("{tsv}");
    if let Some(p) = s.opt::<PathBuf>(a.out, "out")? {
        std::fs::write(&p, &tsv).with_context(|| format!("writing {}", p.display()))?;
    }
    if let Some(p) = s.opt::<PathBuf>(a.record, "record")? {
        std::fs::write(&p, report.to_record() + "\n")
            .with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(())
}

fn cmd_gradcheck(s: &Settings, a: GradcheckArgs) -> Result<()> {
    let checks = run_suite(s.or(a.seed, "seed", 0)?, s.or(a.samples, "samples", 50)?)?;
    println!("check\tchecked\tskipped\trel_error\ttolerance\tstatus");
    let mut failed = 0;
    for c in &checks {
        let status = if c.passed() { "pass" } else { "FAIL" };
        failed += usize::from(!c.passed());
        println!(
            "{}\t{}\t{}\t{:.3e}\t{:.0e}\t{status}",
            c.name, c.checked, c.skipped, c.rel_error, c.tolerance
        );
    }
    if failed > 0 {
        bail!("{failed} of {} gradient checks failed", checks.len());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let settings = Settings::load(cli.config.as_deref())?;
    let threads = settings.opt(cli.threads, "threads")?;
    if let Some(n) = threads {
        if n == 0 {
            return Err(usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.cmd {
        Cmd::Phantom(a) => cmd_phantom(&settings, a),
        Cmd::Field(a) => cmd_field(&settings, a),
        Cmd::Tkd(a) => cmd_tkd(&settings, a),
        Cmd::Dataset(a) => cmd_dataset(&settings, a),
        Cmd::Train(a) => cmd_train(&settings, a),
        Cmd::Infer(a) => cmd_infer(&settings, a),
        Cmd::Eval(a) => cmd_eval(&settings, a),
        Cmd::Gradcheck(a) => cmd_gradcheck(&settings, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<Usage>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
