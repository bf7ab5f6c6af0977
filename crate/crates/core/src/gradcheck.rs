//! Central finite-difference checks of every differentiable layer and of the
//! whole network, in 64-bit.
//!
//! Each check compares analytic gradients `a` with numeric ones `n` through
//! `|a - n| / max(|a|, |n|)` over the checked coordinates (Euclidean norms).

use rand::seq::index::sample;
use rand::Rng as _;

use crate::error::Result;
use crate::net::{build_xqsm, NetworkConfig, OctConv, OctFeature, OctShape};
use crate::nn::{
    avg_pool3d, avg_pool3d_backward, concat_channels, conv3d, conv3d_backward, conv_transpose3d,
    conv_transpose3d_backward, l2_loss, max_pool3d, max_pool3d_backward, relu, relu_backward,
    split_channels, BatchNorm3d, ConvGeometry, HasParams, Mode, Tensor5,
};
use crate::seed::{mix_seed, rng_from_seed, Rng};

pub const STEP: f64 = 1e-5;
pub const LAYER_TOLERANCE: f64 = 1e-4;
pub const NETWORK_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheck {
    pub name: String,
    /// Number of coordinates compared.
    pub checked: usize,
    /// Coordinates skipped because the step straddled a ReLU or max-pool
    /// kink.
    pub skipped: usize,
    pub rel_error: f64,
    pub tolerance: f64,
}

impl GradCheck {
    pub fn passed(&self) -> bool {
        self.rel_error.is_finite() && self.rel_error < self.tolerance
    }
}

pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(numeric).map(|(a, n)| a - n).collect();
    let scale = norm(analytic).max(norm(numeric));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

/// Central differences of `f` at each index, where `f(i, d)` evaluates the
/// objective with coordinate `i` shifted by `d`.
pub fn numeric_gradient(
    indices: &[usize],
    mut f: impl FnMut(usize, f64) -> Result<f64>,
) -> Result<Vec<f64>> {
    indices
        .iter()
        .map(|&i| Ok((f(i, STEP)? - f(i, -STEP)?) / (2.0 * STEP)))
        .collect()
}

fn check(
    name: &str,
    analytic: &[f64],
    indices: &[usize],
    tolerance: f64,
    f: impl FnMut(usize, f64) -> Result<f64>,
) -> Result<GradCheck> {
    let numeric = numeric_gradient(indices, f)?;
    let picked: Vec<f64> = indices.iter().map(|&i| analytic[i]).collect();
    Ok(GradCheck {
        name: name.to_string(),
        checked: indices.len(),
        skipped: 0,
        rel_error: relative_error(&picked, &numeric),
        tolerance,
    })
}

/// Like [`check`] over the first `want` coordinates of `candidates` at which
/// `f` is smooth. A coordinate is rejected when central differences with
/// steps `h` and `h/4` disagree by more than 1e-5 relative, which happens
/// only when the step crosses a ReLU or max-pool kink.
fn check_smooth(
    name: &str,
    analytic: &[f64],
    candidates: &[usize],
    want: usize,
    mut f: impl FnMut(usize, f64) -> Result<f64>,
) -> Result<GradCheck> {
    let (mut picked, mut numeric, mut skipped) = (Vec::new(), Vec::new(), 0);
    for &i in candidates {
        if picked.len() == want {
            break;
        }
        let coarse = (f(i, STEP)? - f(i, -STEP)?) / (2.0 * STEP);
        let q = STEP / 4.0;
        let fine = (f(i, q)? - f(i, -q)?) / (2.0 * q);
        let scale = coarse.abs().max(fine.abs()).max(1e-8);
        if (coarse - fine).abs() > 1e-5 * scale {
            skipped += 1;
            continue;
        }
        picked.push(analytic[i]);
        numeric.push(coarse);
    }
    Ok(GradCheck {
        name: name.to_string(),
        checked: picked.len(),
        skipped,
        rel_error: relative_error(&picked, &numeric),
        tolerance: NETWORK_TOLERANCE,
    })
}

fn random_tensor(rng: &mut Rng, shape: [usize; 5]) -> Tensor5<f64> {
    let n = shape.iter().product();
    Tensor5::from_vec(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
        .expect("length matches shape")
}

/// Distinct values at least 0.01 apart and at least 0.005 away from zero, in
/// random order; keeps max-pool ties and the ReLU kink out of reach of the
/// finite-difference step.
fn separated_tensor(rng: &mut Rng, shape: [usize; 5]) -> Tensor5<f64> {
    let n: usize = shape.iter().product();
    let order = sample(rng, n, n).into_vec();
    let data = order
        .iter()
        .map(|&k| (k as f64 - n as f64 / 2.0) * 0.01 + 0.005)
        .collect();
    Tensor5::from_vec(shape, data).expect("length matches shape")
}

fn dot(a: &Tensor5<f64>, b: &Tensor5<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn shifted(x: &Tensor5<f64>, i: usize, d: f64) -> Tensor5<f64> {
    let mut y = x.clone();
    y.data_mut()[i] += d;
    y
}

fn shifted_vec(v: &[f64], i: usize, d: f64) -> Vec<f64> {
    let mut w = v.to_vec();
    w[i] += d;
    w
}

fn all(n: usize) -> Vec<usize> {
    (0..n).collect()
}

fn conv_checks(rng: &mut Rng, out: &mut Vec<GradCheck>) -> Result<()> {
    for (label, g) in [
        ("conv3d k3", ConvGeometry::same3(2, 3)),
        ("conv3d k1", ConvGeometry::pointwise(2, 3)),
    ] {
        let x = random_tensor(rng, [1, 2, 4, 4, 4]);
        let w: Vec<f64> = (0..g.weight_len())
            .map(|_| rng.random_range(-0.5..0.5))
            .collect();
        let b: Vec<f64> = (0..g.out_ch).map(|_| rng.random_range(-0.5..0.5)).collect();
        let y = conv3d(&x, &w, &b, g)?;
        let r = random_tensor(rng, y.shape());
        let (gx, gw, gb) = conv3d_backward(&x, &w, g, &r)?;
        let obj = |x: &Tensor5<f64>, w: &[f64], b: &[f64]| Ok(dot(&conv3d(x, w, b, g)?, &r));
        out.push(check(
            &format!("{label} input"),
            gx.data(),
            &all(x.numel()),
            LAYER_TOLERANCE,
            |i, d| obj(&shifted(&x, i, d), &w, &b),
        )?);
        out.push(check(
            &format!("{label} weight"),
            &gw,
            &all(w.len()),
            LAYER_TOLERANCE,
            |i, d| obj(&x, &shifted_vec(&w, i, d), &b),
        )?);
        out.push(check(
            &format!("{label} bias"),
            &gb,
            &all(b.len()),
            LAYER_TOLERANCE,
            |i, d| obj(&x, &w, &shifted_vec(&b, i, d)),
        )?);
    }

    let g = ConvGeometry {
        in_ch: 2,
        out_ch: 3,
        kernel: 2,
        stride: 2,
        padding: 0,
    };
    let x = random_tensor(rng, [1, 2, 2, 3, 2]);
    let w: Vec<f64> = (0..g.weight_len())
        .map(|_| rng.random_range(-0.5..0.5))
        .collect();
    let b: Vec<f64> = (0..g.out_ch).map(|_| rng.random_range(-0.5..0.5)).collect();
    let y = conv_transpose3d(&x, &w, &b, g)?;
    let r = random_tensor(rng, y.shape());
    let (gx, gw, gb) = conv_transpose3d_backward(&x, &w, g, &r)?;
    let obj = |x: &Tensor5<f64>, w: &[f64], b: &[f64]| Ok(dot(&conv_transpose3d(x, w, b, g)?, &r));
    out.push(check(
        "conv_transpose3d input",
        gx.data(),
        &all(x.numel()),
        LAYER_TOLERANCE,
        |i, d| obj(&shifted(&x, i, d), &w, &b),
    )?);
    out.push(check(
        "conv_transpose3d weight",
        &gw,
        &all(w.len()),
        LAYER_TOLERANCE,
        |i, d| obj(&x, &shifted_vec(&w, i, d), &b),
    )?);
    out.push(check(
        "conv_transpose3d bias",
        &gb,
        &all(b.len()),
        LAYER_TOLERANCE,
        |i, d| obj(&x, &w, &shifted_vec(&b, i, d)),
    )?);
    Ok(())
}

fn pool_and_pointwise_checks(rng: &mut Rng, out: &mut Vec<GradCheck>) -> Result<()> {
    let x = random_tensor(rng, [2, 2, 4, 2, 4]);
    let r = random_tensor(rng, [2, 2, 2, 1, 2]);
    let gx = avg_pool3d_backward(x.shape(), &r)?;
    out.push(check(
        "avg_pool3d input",
        gx.data(),
        &all(x.numel()),
        LAYER_TOLERANCE,
        |i, d| Ok(dot(&avg_pool3d(&shifted(&x, i, d))?, &r)),
    )?);

    let x = separated_tensor(rng, [2, 2, 4, 2, 4]);
    let (_, arg) = max_pool3d(&x)?;
    let gx = max_pool3d_backward(x.shape(), &arg, &r)?;
    out.push(check(
        "max_pool3d input",
        gx.data(),
        &all(x.numel()),
        LAYER_TOLERANCE,
        |i, d| Ok(dot(&max_pool3d(&shifted(&x, i, d))?.0, &r)),
    )?);

    let x = separated_tensor(rng, [1, 2, 3, 3, 3]);
    let r = random_tensor(rng, x.shape());
    let gx = relu_backward(&x, &r)?;
    out.push(check(
        "relu input",
        gx.data(),
        &all(x.numel()),
        1e-6,
        |i, d| Ok(dot(&relu(&shifted(&x, i, d)), &r)),
    )?);

    let x = random_tensor(rng, [2, 3, 2, 2, 2]);
    let y = random_tensor(rng, [2, 1, 2, 2, 2]);
    let r = random_tensor(rng, [2, 4, 2, 2, 2]);
    let (gx, _) = split_channels(&r, 3)?;
    out.push(check(
        "concat_channels input",
        gx.data(),
        &all(x.numel()),
        LAYER_TOLERANCE,
        |i, d| Ok(dot(&concat_channels(&shifted(&x, i, d), &y)?, &r)),
    )?);

    let label = random_tensor(rng, [2, 1, 3, 2, 2]);
    let pred = random_tensor(rng, label.shape());
    let (_, g) = l2_loss(&pred, &label)?;
    out.push(check(
        "l2_loss pred",
        g.data(),
        &all(pred.numel()),
        LAYER_TOLERANCE,
        |i, d| Ok(l2_loss(&shifted(&pred, i, d), &label)?.0),
    )?);
    Ok(())
}

fn batch_norm_checks(rng: &mut Rng, out: &mut Vec<GradCheck>) -> Result<()> {
    let x = random_tensor(rng, [2, 3, 2, 3, 2]);
    let r = random_tensor(rng, x.shape());
    let mut bn = BatchNorm3d::<f64>::new(3);
    for v in bn.gain.value.iter_mut().chain(bn.shift.value.iter_mut()) {
        *v = rng.random_range(0.5..1.5);
    }
    for (train, label) in [(true, "train"), (false, "eval")] {
        for v in &mut bn.running_mean.value {
            *v = rng.random_range(-0.3..0.3);
        }
        for v in &mut bn.running_var.value {
            *v = rng.random_range(0.5..2.0);
        }
        let frozen = bn.clone();
        let obj = |x: &Tensor5<f64>, gain: &[f64], shift: &[f64]| -> Result<f64> {
            let mut b = frozen.clone();
            b.gain.value = gain.to_vec();
            b.shift.value = shift.to_vec();
            Ok(dot(&b.forward_with(x, train, false)?, &r))
        };
        let mut b = frozen.clone();
        b.zero_grad();
        b.forward_with(&x, train, true)?;
        let gx = b.backward(&r)?;
        let (gain, shift) = (frozen.gain.value.clone(), frozen.shift.value.clone());
        out.push(check(
            &format!("batch_norm3d {label} input"),
            gx.data(),
            &all(x.numel()),
            LAYER_TOLERANCE,
            |i, d| obj(&shifted(&x, i, d), &gain, &shift),
        )?);
        out.push(check(
            &format!("batch_norm3d {label} gain"),
            &b.gain.grad,
            &all(3),
            LAYER_TOLERANCE,
            |i, d| obj(&x, &shifted_vec(&gain, i, d), &shift),
        )?);
        out.push(check(
            &format!("batch_norm3d {label} shift"),
            &b.shift.grad,
            &all(3),
            LAYER_TOLERANCE,
            |i, d| obj(&x, &gain, &shifted_vec(&shift, i, d)),
        )?);
    }
    Ok(())
}

/// Flattened trainable gradients in visit order.
fn flat_grads<M: HasParams<f64>>(m: &mut M) -> Vec<f64> {
    let mut g = Vec::new();
    m.visit_params("", &mut |_, p| {
        if p.trainable {
            g.extend_from_slice(&p.grad)
        }
    });
    g
}

/// Adds `d` to trainable coordinate `i` of the flattened parameter list.
fn shift_param<M: HasParams<f64>>(m: &mut M, i: usize, d: f64) {
    let mut offset = 0;
    m.visit_params("", &mut |_, p| {
        if p.trainable {
            if (offset..offset + p.len()).contains(&i) {
                p.value[i - offset] += d;
            }
            offset += p.len();
        }
    });
}

fn octconv_checks(rng: &mut Rng, out: &mut Vec<GradCheck>) -> Result<()> {
    let shape = OctShape {
        in_ch: 4,
        out_ch: 4,
        alpha_in: 0.5,
        alpha_out: 0.5,
    };
    let mut oc = OctConv::<f64>::new(shape)?;
    oc.init_normal(rng, 0.3);
    let x = OctFeature::new(
        random_tensor(rng, [1, 2, 4, 4, 4]),
        Some(random_tensor(rng, [1, 2, 2, 2, 2])),
    )?;
    let y = oc.forward(&x, Mode::Train)?;
    let r = OctFeature::new(
        random_tensor(rng, y.high.shape()),
        y.low.as_ref().map(|l| random_tensor(rng, l.shape())),
    )?;
    let obj_of = |y: &OctFeature<f64>| {
        dot(&y.high, &r.high) + dot(y.low.as_ref().unwrap(), r.low.as_ref().unwrap())
    };
    oc.zero_grad();
    let gx = oc.backward(&r)?;
    let nh = x.high.numel();
    let mut gin = gx.high.data().to_vec();
    gin.extend_from_slice(gx.low.as_ref().unwrap().data());
    let frozen = oc.clone();
    out.push(check(
        "octconv input",
        &gin,
        &all(gin.len()),
        LAYER_TOLERANCE,
        |i, d| {
            let mut xs = x.clone();
            if i < nh {
                xs.high.data_mut()[i] += d;
            } else {
                xs.low.as_mut().unwrap().data_mut()[i - nh] += d;
            }
            Ok(obj_of(&frozen.clone().forward(&xs, Mode::Eval)?))
        },
    )?);
    let gp = flat_grads(&mut oc);
    let idx = sample(rng, gp.len(), 60.min(gp.len())).into_vec();
    out.push(check(
        "octconv parameters",
        &gp,
        &idx,
        LAYER_TOLERANCE,
        |i, d| {
            let mut m = frozen.clone();
            shift_param(&mut m, i, d);
            Ok(obj_of(&m.forward(&x, Mode::Eval)?))
        },
    )?);
    Ok(())
}

/// Gradient of `l2_loss(network(x), label)` for a width-4 network on a batch
/// of two 8³ inputs, training-mode batch norm, noise layer off.
fn network_check(rng: &mut Rng, samples: usize, out: &mut Vec<GradCheck>) -> Result<()> {
    let config = NetworkConfig {
        width: 4,
        noise_probability: 0.0,
        ..NetworkConfig::default()
    };
    let mut net = build_xqsm::<f64>(&config, rng.random())?;
    net.init_normal(rng, 0.1);
    let x = random_tensor(rng, [2, 1, 8, 8, 8]);
    let label = random_tensor(rng, x.shape());
    let frozen = net.clone();
    let y = net.forward(&x, Mode::Train, None)?;
    let (_, g) = l2_loss(&y, &label)?;
    net.zero_grad();
    let gx = net.backward(&g)?;
    let gp = flat_grads(&mut net);
    let idx = sample(rng, gp.len(), gp.len()).into_vec();
    let loss = |net: &mut crate::net::Network<f64>, x: &Tensor5<f64>| -> Result<f64> {
        Ok(l2_loss(&net.forward(x, Mode::Train, None)?, &label)?.0)
    };
    out.push(check_smooth(
        "network parameters",
        &gp,
        &idx,
        samples,
        |i, d| {
            let mut m = frozen.clone();
            shift_param(&mut m, i, d);
            loss(&mut m, &x)
        },
    )?);
    let idx = sample(rng, x.numel(), x.numel()).into_vec();
    out.push(check_smooth(
        "network input",
        gx.data(),
        &idx,
        20,
        |i, d| loss(&mut frozen.clone(), &shifted(&x, i, d)),
    )?);
    Ok(())
}

/// Runs every check. `network_samples` parameters of the end-to-end network
/// are sampled.
pub fn run_suite(seed: u64, network_samples: usize) -> Result<Vec<GradCheck>> {
    let mut out = Vec::new();
    conv_checks(&mut rng_from_seed(mix_seed(seed, 1)), &mut out)?;
    pool_and_pointwise_checks(&mut rng_from_seed(mix_seed(seed, 2)), &mut out)?;
    batch_norm_checks(&mut rng_from_seed(mix_seed(seed, 3)), &mut out)?;
    octconv_checks(&mut rng_from_seed(mix_seed(seed, 4)), &mut out)?;
    network_check(
        &mut rng_from_seed(mix_seed(seed, 5)),
        network_samples,
        &mut out,
    )?;
    Ok(out)
}
