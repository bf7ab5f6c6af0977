//! Acceptance suite: one pass/fail line per criterion.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use octqsm::datapipe::{build_dataset, crop_counts, sliding_origins, Dataset, LabelSource};
use octqsm::gradcheck::run_suite;
use octqsm::metrics::{best_scalar_baseline, linear_fit, nrmse, relative_anisotropy, ssim3d};
use octqsm::net::{build_xqsm, noise_layer, NetworkConfig, OctConv, OctFeature, OctShape};
use octqsm::nn::{conv3d, ConvGeometry, HasParams, Mode, Tensor5};
use octqsm::phantom::SHEPP_LOGAN_PPB;
use octqsm::seed::{rng_from_seed, splitmix64};
use octqsm::train::{infer_full, infer_patches, train, EpochStat, TrainConfig};
use octqsm::{dipole_kernel, forward_field, shepp_logan, ShapeConfig, Unit, Volume};

type Check = Result<String, String>;

fn check(cond: bool, msg: String) -> Check {
    if cond {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn within(elapsed: Duration, limit_s: f64, msg: String) -> Check {
    let s = elapsed.as_secs_f64();
    check(s < limit_s, format!("{msg}; {s:.2}s (limit {limit_s}s)"))
}

fn c1_kernel() -> Check {
    let n = 64;
    let t = Instant::now();
    let k = dipole_kernel([n; 3], [1.0; 3]).map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    if k.at(0, 0, 0) != 0.0 {
        return Err(format!("origin value {}", k.at(0, 0, 0)));
    }
    let mut worst: f64 = 0.0;
    for i in 1..n {
        worst = worst.max((k.at(0, 0, i) + 2.0 / 3.0).abs());
        worst = worst.max((k.at(i, 0, 0) - 1.0 / 3.0).abs());
        worst = worst.max((k.at(0, i, 0) - 1.0 / 3.0).abs());
    }
    let signed = |i: usize| {
        if i <= n / 2 {
            i as i64
        } else {
            i as i64 - n as i64
        }
    };
    let (mut cone, mut cone_worst) = (0, 0.0f64);
    for l in 0..n {
        for j in 0..n {
            for i in 0..n {
                let (x, y, z) = (signed(i), signed(j), signed(l));
                if z != 0 && x * x + y * y == 2 * z * z {
                    cone += 1;
                    cone_worst = cone_worst.max(k.at(i, j, l).abs());
                }
            }
        }
    }
    if worst > 1e-12 || cone_worst > 1e-12 || cone == 0 {
        return Err(format!(
            "axis error {worst:e}, cone max {cone_worst:e} over {cone} points"
        ));
    }
    within(
        elapsed,
        1.0,
        format!("axis error {worst:.1e}, {cone} cone points max |d| {cone_worst:.1e}"),
    )
}

fn c2_sphere() -> Check {
    let (n, r, chi) = (64usize, 12.0, 100.0);
    let t = Instant::now();
    let s = common::sphere(n, r, chi);
    let field = forward_field(&s, &dipole_kernel([n; 3], [1.0; 3]).unwrap()).unwrap();
    let c = (n / 2) as f64;
    let (mut got, mut want, mut inner) = (Vec::new(), Vec::new(), Vec::new());
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let d = ((x as f64 - c).powi(2) + (y as f64 - c).powi(2) + (z as f64 - c).powi(2))
                    .sqrt();
                if d >= 1.5 * r {
                    got.push(field.get(x, y, z));
                    want.push(common::periodic_sphere_exterior(n, r, chi, [x, y, z]));
                } else if d <= r - 2.0 {
                    inner.push(field.get(x, y, z).abs());
                }
            }
        }
    }
    let elapsed = t.elapsed();
    let ext = common::rel_l2(&got, &want);
    let interior = inner.iter().sum::<f64>() / inner.len() as f64 / (chi / 3.0);
    let msg = format!(
        "interior {:.2}% of chi/3, exterior rel error {:.2}%",
        100.0 * interior,
        100.0 * ext
    );
    if interior >= 0.02 || ext >= 0.05 {
        return Err(msg);
    }
    within(elapsed, 5.0, msg)
}

fn c3_brute_force() -> Check {
    let t = Instant::now();
    let mut worst: f64 = 0.0;
    for seed in 0..2u64 {
        let dims = [12; 3];
        let data = (0..1728u64)
            .map(|i| {
                (splitmix64(seed * 10_000 + i) >> 11) as f64 / (1u64 << 53) as f64 * 200.0 - 100.0
            })
            .collect();
        let chi = Volume::new(data, dims, [1.0; 3], Unit::Ppb).unwrap();
        let fast = forward_field(&chi, &dipole_kernel(dims, [1.0; 3]).unwrap()).unwrap();
        worst = worst.max(common::rel_l2(
            fast.data(),
            &common::brute_force_field(&chi),
        ));
    }
    let msg = format!("max rel error {worst:.1e} over 2 random 12^3 volumes");
    if worst >= 1e-3 {
        return Err(msg);
    }
    within(t.elapsed(), 30.0, msg)
}

fn c4_gradients() -> Check {
    let t = Instant::now();
    let checks = run_suite(0, 50).map_err(|e| e.to_string())?;
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| !c.passed())
        .map(|c| format!("{} {:.1e}", c.name, c.rel_error))
        .collect();
    let worst_layer = checks
        .iter()
        .filter(|c| !c.name.starts_with("network"))
        .map(|c| c.rel_error)
        .fold(0.0, f64::max);
    let worst_net = checks
        .iter()
        .filter(|c| c.name.starts_with("network"))
        .map(|c| c.rel_error)
        .fold(0.0, f64::max);
    if !failed.is_empty() {
        return Err(format!("failed: {}", failed.join(", ")));
    }
    within(
        t.elapsed(),
        300.0,
        format!(
            "{} checks, worst layer {worst_layer:.1e}, worst network {worst_net:.1e}",
            checks.len()
        ),
    )
}

fn oct_shape(in_ch: usize, out_ch: usize, a_in: f64, a_out: f64) -> OctShape {
    OctShape {
        in_ch,
        out_ch,
        alpha_in: a_in,
        alpha_out: a_out,
    }
}

fn sin_tensor(shape: [usize; 5], phase: f64) -> Tensor5<f64> {
    let n = shape.iter().product();
    Tensor5::from_vec(
        shape,
        (0..n).map(|i| (i as f64 * 0.37 + phase).sin()).collect(),
    )
    .unwrap()
}

fn c5_octconv() -> Check {
    // (a) alpha = 1 is a plain convolution
    let mut oc = OctConv::<f64>::new(oct_shape(3, 4, 1.0, 1.0)).unwrap();
    oc.init_normal(&mut rng_from_seed(1), 0.3);
    let x = sin_tensor([2, 3, 6, 6, 6], 0.0);
    let y = oc
        .forward(&OctFeature::high_only(x.clone()), Mode::Eval)
        .unwrap();
    let hh = oc.hh.as_ref().unwrap();
    let plain = conv3d(
        &x,
        &hh.weight.value,
        &hh.bias.value,
        ConvGeometry::same3(3, 4),
    )
    .unwrap();
    if y.high != plain || y.low.is_some() {
        return Err("alpha = 1 output differs from plain conv".into());
    }
    // (b) parameter count
    let four = OctConv::<f32>::new(oct_shape(16, 16, 0.5, 0.5))
        .unwrap()
        .main_kernel_weights();
    let single = ConvGeometry::same3(16, 16).weight_len();
    if four != single || four != 6912 {
        return Err(format!("kernel weights {four} vs plain {single}"));
    }
    // (c) zero cross paths decouple the branches
    let mut oc = OctConv::<f64>::new(oct_shape(8, 8, 0.5, 0.5)).unwrap();
    oc.init_normal(&mut rng_from_seed(2), 0.3);
    oc.visit_params("", &mut |name, p| {
        if name.starts_with("hl.") || name.starts_with("lh") {
            p.value.iter_mut().for_each(|v| *v = 0.0);
        }
    });
    let xh = sin_tensor([1, 4, 8, 8, 8], 0.0);
    let xl = sin_tensor([1, 4, 4, 4, 4], 1.0);
    let base = oc
        .forward(
            &OctFeature::new(xh.clone(), Some(xl.clone())).unwrap(),
            Mode::Eval,
        )
        .unwrap();
    let moved_low = oc
        .forward(
            &OctFeature::new(xh.clone(), Some(xl.map(|v| 3.0 * v - 1.0))).unwrap(),
            Mode::Eval,
        )
        .unwrap();
    let moved_high = oc
        .forward(
            &OctFeature::new(xh.map(|v| v * v), Some(xl.clone())).unwrap(),
            Mode::Eval,
        )
        .unwrap();
    let ll = oc.ll.as_ref().unwrap();
    let ll_only = conv3d(
        &xl,
        &ll.weight.value,
        &ll.bias.value,
        ConvGeometry::same3(4, 4),
    )
    .unwrap();
    let hh = oc.hh.as_ref().unwrap();
    let hh_only = conv3d(
        &xh,
        &hh.weight.value,
        &hh.bias.value,
        ConvGeometry::same3(4, 4),
    )
    .unwrap();
    let decoupled = moved_low.high == base.high
        && moved_high.low == base.low
        && base.high == hh_only
        && base.low.as_ref() == Some(&ll_only);
    check(
        decoupled,
        format!(
            "alpha=1 exact, {four} = {single} weights, cross-path decoupling exact: {decoupled}"
        ),
    )
}

fn c6_noise() -> Check {
    let mut rng = rng_from_seed(6);
    let x = sin_tensor([2, 1, 40, 40, 40], 0.5);
    let (y, _) = noise_layer(&x, &mut rng, 0.0, &[10.0]).unwrap();
    if y != x {
        return Err("P = 0 changed the input".into());
    }
    let zero = Tensor5::<f64>::zeros([1, 1, 8, 8, 8]);
    let (y, _) = noise_layer(&zero, &mut rng, 1.0, &[10.0]).unwrap();
    if y != zero {
        return Err("zero input is not a fixed point".into());
    }
    let (y, _) = noise_layer(&x, &mut rng, 1.0, &[10.0]).unwrap();
    let n = x.numel();
    let signal = x.data().iter().map(|v| v * v).sum::<f64>() / n as f64;
    let noise = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(a, b)| (b - a).powi(2))
        .sum::<f64>()
        / n as f64;
    let ratio = signal / noise;
    check(
        (9.0..=11.0).contains(&ratio),
        format!("identity and fixed point exact; SNR 10 gives {ratio:.3} over {n} elements"),
    )
}

fn c7_patches() -> Check {
    let dims = [144, 196, 128];
    let counts = crop_counts(dims, 48, [24, 36, 20]).map_err(|e| e.to_string())?;
    let per = sliding_origins(dims, 48, [24, 36, 20])
        .map_err(|e| e.to_string())?
        .len();
    let total = per * 90;
    check(
        per == 125 && total == 11_250,
        format!("{counts:?} = {per} per volume, {total} over 90 volumes"),
    )
}

fn c8_structure() -> Check {
    let cfg = NetworkConfig {
        width: 4,
        ..NetworkConfig::default()
    };
    let mut net = build_xqsm::<f64>(&cfg, 0).unwrap();
    let a = net.audit();
    let counts = [
        a.octconv,
        a.max_pool,
        a.transposed_conv,
        a.batch_norm,
        a.final_conv,
        a.noise,
    ];
    if counts != [10, 2, 2, 12, 1, 1] {
        return Err(format!("layer counts {a:?}"));
    }
    for s in [[8, 8, 8], [16, 24, 8], [24, 16, 32]] {
        let x = sin_tensor([1, 1, s[2], s[1], s[0]], 0.2);
        let y = net.forward(&x, Mode::Eval, None).unwrap();
        if y.shape() != x.shape() {
            return Err(format!("input {:?} gave {:?}", x.shape(), y.shape()));
        }
    }
    if net
        .forward(&sin_tensor([1, 1, 12, 8, 8], 0.0), Mode::Eval, None)
        .is_ok()
    {
        return Err("dims not divisible by 8 accepted".into());
    }
    net.zero_convolutions();
    let x = sin_tensor([2, 1, 16, 16, 16], 0.4);
    let y = net.forward(&x, Mode::Eval, None).unwrap();
    check(
        y == x,
        "10 octconv, 2 max-pool, 2 transposed, 12 BN, 1 final, 1 noise; zero net is identity"
            .into(),
    )
}

struct Trained {
    net: octqsm::net::Network<f32>,
    history: Vec<EpochStat>,
    truth: Volume,
    field: Volume,
    train_secs: f64,
}

fn train_desk(dir: &Path) -> octqsm::Result<Trained> {
    let mut shapes = ShapeConfig::new([32; 3]);
    shapes.seed = 1;
    build_dataset(
        &LabelSource::Shapes {
            config: shapes,
            count: 300,
        },
        dir,
    )?;
    let data = Dataset::load(dir)?;
    let mut net = build_xqsm::<f32>(&NetworkConfig::desk(), 0)?;
    let t = Instant::now();
    let history = train(&mut net, &data, &TrainConfig::desk(), |e, _| {
        eprintln!(
            "  [desk training] epoch {:>2} loss {:.1} lr {:e}",
            e.epoch, e.mean_loss, e.lr
        );
        Ok(())
    })?;
    let train_secs = t.elapsed().as_secs_f64();
    let truth = shepp_logan([64; 3], SHEPP_LOGAN_PPB)?.chi;
    let field = forward_field(&truth, &dipole_kernel([64; 3], [1.0; 3])?)?;
    Ok(Trained {
        net,
        history,
        truth,
        field,
        train_secs,
    })
}

fn c9_learning(t: &mut Trained) -> Check {
    let first = t.history[0].mean_loss;
    let last = t.history.last().unwrap().mean_loss;
    let pred = infer_full(&mut t.net, &t.field).map_err(|e| e.to_string())?;
    let err = nrmse(&pred, &t.truth).map_err(|e| e.to_string())?;
    let zero = nrmse(&t.truth.map(|_| 0.0), &t.truth).map_err(|e| e.to_string())?;
    let (a, scalar) = best_scalar_baseline(&t.field, &t.truth).map_err(|e| e.to_string())?;
    let msg = format!(
        "loss {first:.1} -> {last:.1} (ratio {:.3}); Shepp-Logan NRMSE {err:.2}% vs zero {zero:.2}% and scalar (a = {a:.3}) {scalar:.2}%; trained in {:.0}s",
        last / first,
        t.train_secs
    );
    check(
        last < 0.5 * first && err < zero && err < scalar && t.train_secs < 1800.0,
        msg,
    )
}

fn c10_assembly(t: &mut Trained) -> Check {
    let mut errs = Vec::new();
    for p in [16, 32, 48] {
        let v = infer_patches(&mut t.net, &t.field, p, p / 2).map_err(|e| e.to_string())?;
        errs.push(nrmse(&v, &t.truth).map_err(|e| e.to_string())?);
    }
    let whole = infer_patches(&mut t.net, &t.field, 64, 32).map_err(|e| e.to_string())?;
    let full = infer_full(&mut t.net, &t.field).map_err(|e| e.to_string())?;
    let identical = whole == full;
    let monotone = errs.windows(2).all(|w| w[1] <= w[0]);
    check(
        monotone && identical,
        format!(
            "NRMSE at patch 16/32/48 (stride = patch/2): {:.2}% / {:.2}% / {:.2}%; patch 64 == full: {identical}",
            errs[0], errs[1], errs[2]
        ),
    )
}

fn c11_metrics() -> Check {
    let x = Volume::from_fn([12, 10, 9], [1.0; 3], Unit::Ppb, |a, b, c| {
        ((a * 7 + b * 3 + c) % 11) as f64 - 4.0
    })
    .unwrap();
    let zero = x.map(|_| 0.0);
    let n0 = nrmse(&x, &x).unwrap();
    let s1 = ssim3d(&x, &x).unwrap();
    let nz = nrmse(&zero, &x).unwrap();
    let ra = relative_anisotropy(150.0, 50.0).unwrap();
    let xs = [0.0, 1.0, 2.5, 4.0, 7.0];
    let ys: Vec<f64> = xs.iter().map(|v| 3.0 * v - 2.0).collect();
    let fit = linear_fit(&xs, &ys).unwrap();
    check(
        n0 == 0.0
            && (s1 - 1.0).abs() < 1e-12
            && (nz - 100.0).abs() < 1e-12
            && ra == 0.5
            && fit.sse < 1e-20,
        format!(
            "nrmse(x,x) {n0}, ssim(x,x) {s1}, nrmse(0,x) {nz}, RA {ra}, fit sse {:.1e}",
            fit.sse
        ),
    )
}

fn cli(dir: &Path, args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_octqsm"))
        .current_dir(dir)
        .args(["--threads", "1"])
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!(
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        ));
    }
    Ok(())
}

fn collect_files(dir: &Path, base: &Path, out: &mut Vec<(PathBuf, Vec<u8>)>) {
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            collect_files(&p, base, out);
        } else {
            out.push((
                p.strip_prefix(base).unwrap().to_path_buf(),
                fs::read(&p).unwrap(),
            ));
        }
    }
}

fn pipeline(dir: &Path) -> Result<Vec<(PathBuf, Vec<u8>)>, String> {
    fs::create_dir_all(dir).map_err(|e| e.to_string())?;
    cli(
        dir,
        &["phantom", "shepp", "--dims", "48", "--out", "p.qvol"],
    )?;
    cli(dir, &["field", "--chi", "p.qvol", "--out", "f.qvol"])?;
    cli(
        dir,
        &[
            "dataset", "--count", "8", "--dims", "32", "--seed", "7", "--out", "ds",
        ],
    )?;
    cli(
        dir,
        &[
            "train",
            "--data",
            "ds",
            "--epochs",
            "2",
            "--batch",
            "4",
            "--width",
            "4",
            "--seed",
            "3",
            "--checkpoint",
            "net.oqck",
        ],
    )?;
    cli(
        dir,
        &[
            "infer",
            "--checkpoint",
            "net.oqck",
            "--field",
            "f.qvol",
            "--out",
            "pred.qvol",
        ],
    )?;
    cli(
        dir,
        &[
            "infer",
            "--checkpoint",
            "net.oqck",
            "--field",
            "f.qvol",
            "--mode",
            "patches",
            "--patch-size",
            "32",
            "--stride",
            "16",
            "--out",
            "pred_p.qvol",
        ],
    )?;
    cli(
        dir,
        &[
            "eval",
            "--pred",
            "pred.qvol",
            "--ref",
            "p.qvol",
            "--labels",
            "p.labels.qvol",
            "--out",
            "report.tsv",
            "--record",
            "report.json",
        ],
    )?;
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files);
    files.sort();
    Ok(files)
}

fn c12_reproducible(root: &Path) -> Check {
    let a = pipeline(&root.join("run_a"))?;
    let b = pipeline(&root.join("run_b"))?;
    let names: Vec<String> = a.iter().map(|(p, _)| p.display().to_string()).collect();
    for want in ["ds/manifest.tsv", "net.oqck", "report.tsv", "report.json"] {
        if !names.iter().any(|n| n == want) {
            return Err(format!("pipeline did not write {want}"));
        }
    }
    let differing: Vec<&String> = a
        .iter()
        .zip(&b)
        .zip(&names)
        .filter(|(((pa, da), (pb, db)), _)| pa != pb || da != db)
        .map(|(_, n)| n)
        .collect();
    check(
        a.len() == b.len() && differing.is_empty(),
        format!(
            "{} files compared, {} differ {:?}",
            a.len(),
            differing.len(),
            differing
        ),
    )
}

fn run(id: usize, name: &str, f: impl FnOnce() -> Check) -> bool {
    let t = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        Err(format!("panicked: {msg}"))
    });
    let secs = t.elapsed().as_secs_f64();
    let (tag, msg) = match &outcome {
        Ok(m) => ("PASS", m),
        Err(m) => ("FAIL", m),
    };
    println!("[{tag}] {id:>2} {name}: {msg} ({secs:.1}s)");
    outcome.is_ok()
}

fn main() {
    let tmp = tempfile::tempdir().unwrap();
    let mut ok = true;
    ok &= run(1, "dipole kernel", c1_kernel);
    ok &= run(2, "sphere oracle", c2_sphere);
    ok &= run(3, "forward model vs real-space PSF", c3_brute_force);
    ok &= run(4, "gradient suite", c4_gradients);
    ok &= run(5, "octave conv algebra", c5_octconv);
    ok &= run(6, "noise layer", c6_noise);
    ok &= run(7, "patch arithmetic", c7_patches);
    ok &= run(8, "structural audit", c8_structure);
    let mut trained = catch_unwind(|| train_desk(&tmp.path().join("desk")))
        .map_err(|_| "training panicked".to_string())
        .and_then(|r| r.map_err(|e| e.to_string()));
    ok &= run(9, "desk-scale learning", || {
        c9_learning(trained.as_mut().map_err(|e| e.clone())?)
    });
    ok &= run(10, "patch-then-assemble", || {
        c10_assembly(trained.as_mut().map_err(|e| e.clone())?)
    });
    ok &= run(11, "metric identities", c11_metrics);
    ok &= run(12, "CLI reproducibility", || c12_reproducible(tmp.path()));
    if !ok {
        println!("acceptance: some criteria failed");
        std::process::exit(1);
    }
    println!("acceptance: all 12 criteria passed");
}
