//! Image-quality metrics, ROI statistics, relative anisotropy and linear
//! regression.

use serde_json::{json, Map, Value};

use crate::error::{ensure, Result};
use crate::volgrid::Volume;

/// Reported PSNR when the two volumes are identical.
pub const PSNR_IDENTICAL_DB: f64 = 999.0;

pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_RADIUS: usize = 5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn check_pair(x: &Volume, reference: &Volume) -> Result<()> {
    ensure!(
        x.dims() == reference.dims(),
        Shape,
        "metric inputs differ in dims: {:?} vs {:?}",
        x.dims(),
        reference.dims()
    );
    Ok(())
}

fn range(v: &[f64]) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        })
}

/// `10 log10(peak² / MSE)` with `peak = max(ref) - min(ref)`.
/// Identical inputs give [`PSNR_IDENTICAL_DB`].
pub fn psnr(x: &Volume, reference: &Volume) -> Result<f64> {
    check_pair(x, reference)?;
    let (lo, hi) = range(reference.data());
    let peak = hi - lo;
    ensure!(
        peak > 0.0,
        InvalidArgument,
        "PSNR needs a non-constant reference"
    );
    let mse = x
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_IDENTICAL_DB);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// `100 ||x - ref|| / ||ref||`, in percent.
pub fn nrmse(x: &Volume, reference: &Volume) -> Result<f64> {
    check_pair(x, reference)?;
    let den = reference.data().iter().map(|v| v * v).sum::<f64>().sqrt();
    ensure!(
        den > 0.0,
        InvalidArgument,
        "NRMSE undefined for an all-zero reference"
    );
    let num = x
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    Ok(100.0 * num / den)
}

/// Normalized 1D Gaussian taps for offsets `-radius..=radius`.
fn gaussian_taps(sigma: f64, radius: usize) -> Vec<f64> {
    let r = radius as isize;
    let w: Vec<f64> = (-r..=r)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable filtering with zero extension; dividing by the filtered
/// all-ones volume renormalizes the window near the boundary.
fn blur(data: &[f64], dims: [usize; 3], taps: &[f64]) -> Vec<f64> {
    let r = taps.len() / 2;
    let strides = [1, dims[0], dims[0] * dims[1]];
    let mut cur = data.to_vec();
    for axis in 0..3 {
        let (n, st) = (dims[axis], strides[axis]);
        let mut next = vec![0.0; cur.len()];
        for (idx, out) in next.iter_mut().enumerate() {
            let pos = (idx / st) % n;
            let lo = pos.saturating_sub(r);
            let hi = (pos + r).min(n - 1);
            let mut acc = 0.0;
            for q in lo..=hi {
                acc += taps[q + r - pos] * cur[idx - pos * st + q * st];
            }
            *out = acc;
        }
        cur = next;
    }
    cur
}

/// Mean local SSIM with an 11³ Gaussian window (σ = 1.5), K1 = 0.01,
/// K2 = 0.03. The dynamic range `L` is the joint range of both inputs, which
/// equals the reference range whenever `x` stays inside it and keeps the
/// metric symmetric.
pub fn ssim3d(x: &Volume, reference: &Volume) -> Result<f64> {
    check_pair(x, reference)?;
    let (alo, ahi) = range(x.data());
    let (blo, bhi) = range(reference.data());
    let l = ahi.max(bhi) - alo.min(blo);
    ensure!(l > 0.0, InvalidArgument, "SSIM needs a non-constant input");
    let (c1, c2) = ((SSIM_K1 * l).powi(2), (SSIM_K2 * l).powi(2));
    let dims = x.dims();
    let taps = gaussian_taps(SSIM_SIGMA, SSIM_RADIUS);
    let (a, b) = (x.data(), reference.data());
    let norm = blur(&vec![1.0; a.len()], dims, &taps);
    let local = |v: Vec<f64>| -> Vec<f64> {
        blur(&v, dims, &taps)
            .iter()
            .zip(&norm)
            .map(|(s, w)| s / w)
            .collect()
    };
    let mu_a = local(a.to_vec());
    let mu_b = local(b.to_vec());
    let aa = local(a.iter().map(|v| v * v).collect());
    let bb = local(b.iter().map(|v| v * v).collect());
    let ab = local(a.iter().zip(b).map(|(p, q)| p * q).collect());
    let mut sum = 0.0;
    for i in 0..a.len() {
        let (ma, mb) = (mu_a[i], mu_b[i]);
        let va = aa[i] - ma * ma;
        let vb = bb[i] - mb * mb;
        let cov = ab[i] - ma * mb;
        sum +=
            ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
    }
    Ok(sum / a.len() as f64)
}

/// Mean and sample standard deviation (n - 1; 0 for one voxel) of `x` over
/// voxels labelled `region`.
pub fn roi_stats(x: &Volume, labels: &[u32], region: u32) -> Result<(f64, f64)> {
    ensure!(
        labels.len() == x.len(),
        Shape,
        "label map has {} voxels, volume has {}",
        labels.len(),
        x.len()
    );
    let vals: Vec<f64> = x
        .data()
        .iter()
        .zip(labels)
        .filter(|(_, &l)| l == region)
        .map(|(&v, _)| v)
        .collect();
    ensure!(
        !vals.is_empty(),
        InvalidArgument,
        "region {region} is empty"
    );
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    if vals.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

/// `(measured - reference) / reference · 100`.
pub fn percent_error(measured: f64, reference: f64) -> Result<f64> {
    ensure!(
        reference != 0.0,
        InvalidArgument,
        "percent error against a zero reference"
    );
    // + 0.0 turns a -0.0 result into 0.0
    Ok((measured - reference) / reference * 100.0 + 0.0)
}

/// `|a - b| / |a + b|`.
pub fn relative_anisotropy(a: f64, b: f64) -> Result<f64> {
    ensure!(
        a + b != 0.0,
        InvalidArgument,
        "relative anisotropy undefined for a + b = 0"
    );
    Ok((a - b).abs() / (a + b).abs())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Sum of squared residuals.
    pub sse: f64,
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub fn linear_fit(xs: &[f64], ys: &[f64]) -> Result<LinearFit> {
    ensure!(
        xs.len() == ys.len(),
        Shape,
        "linear fit needs equally many xs and ys"
    );
    let n = xs.len() as f64;
    ensure!(
        n >= 2.0,
        InvalidArgument,
        "linear fit needs at least two points"
    );
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    ensure!(
        sxx > 0.0,
        InvalidArgument,
        "linear fit needs two distinct xs"
    );
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - slope * x - intercept).powi(2))
        .sum();
    Ok(LinearFit {
        slope,
        intercept,
        sse,
    })
}

/// The least-squares scalar `a` minimizing `||a·input - truth||`, and the
/// NRMSE (%) of `a·input` against `truth`.
pub fn best_scalar_baseline(input: &Volume, truth: &Volume) -> Result<(f64, f64)> {
    check_pair(input, truth)?;
    let ii: f64 = input.data().iter().map(|v| v * v).sum();
    let it: f64 = input
        .data()
        .iter()
        .zip(truth.data())
        .map(|(a, b)| a * b)
        .sum();
    let a = if ii > 0.0 { it / ii } else { 0.0 };
    Ok((a, nrmse(&input.map(|v| a * v), truth)?))
}

#[derive(Clone, Debug, PartialEq)]
pub struct RoiReport {
    pub region: u32,
    pub mean: f64,
    pub std: f64,
    pub reference: Option<f64>,
}

impl RoiReport {
    pub fn percent_error(&self) -> Option<f64> {
        self.reference
            .and_then(|r| percent_error(self.mean, r).ok())
    }
}

/// A label map and the `(region, reference value)` pairs to report.
pub type RoiSpec<'a> = (&'a [u32], &'a [(u32, Option<f64>)]);

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub psnr: f64,
    pub ssim: f64,
    pub nrmse: f64,
    pub rois: Vec<RoiReport>,
    pub ra: Option<f64>,
    pub regression: Option<LinearFit>,
}

impl MetricReport {
    /// PSNR, SSIM and NRMSE of `x` against `reference`, plus ROI statistics
    /// of `x` for each `(region, reference value)`.
    pub fn evaluate(x: &Volume, reference: &Volume, labels: Option<RoiSpec<'_>>) -> Result<Self> {
        let mut rois = Vec::new();
        if let Some((map, regions)) = labels {
            for &(region, reference) in regions {
                let (mean, std) = roi_stats(x, map, region)?;
                rois.push(RoiReport {
                    region,
                    mean,
                    std,
                    reference,
                });
            }
        }
        Ok(Self {
            psnr: psnr(x, reference)?,
            ssim: ssim3d(x, reference)?,
            nrmse: nrmse(x, reference)?,
            rois,
            ra: None,
            regression: None,
        })
    }

    fn rows(&self) -> Vec<(String, f64)> {
        let mut r = vec![
            ("psnr_db".to_string(), self.psnr),
            ("ssim".to_string(), self.ssim),
            ("nrmse_pct".to_string(), self.nrmse),
        ];
        for roi in &self.rois {
            r.push((format!("roi{}_mean_ppb", roi.region), roi.mean));
            r.push((format!("roi{}_std_ppb", roi.region), roi.std));
            if let Some(ref_v) = roi.reference {
                r.push((format!("roi{}_ref_ppb", roi.region), ref_v));
            }
            if let Some(e) = roi.percent_error() {
                r.push((format!("roi{}_error_pct", roi.region), e));
            }
        }
        if let Some(ra) = self.ra {
            r.push(("ra".to_string(), ra));
        }
        if let Some(f) = self.regression {
            r.push(("fit_slope".to_string(), f.slope));
            r.push(("fit_intercept".to_string(), f.intercept));
            r.push(("fit_sse".to_string(), f.sse));
        }
        r
    }

    /// Two columns, `metric` and `value`, one row per quantity.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("metric\tvalue\n");
        for (k, v) in self.rows() {
            s.push_str(&format!("{k}\t{v}\n"));
        }
        s
    }

    /// One-line JSON object with the same keys as [`MetricReport::to_tsv`].
    pub fn to_record(&self) -> String {
        let map: Map<String, Value> = self
            .rows()
            .into_iter()
            .map(|(k, v)| (k, json!(v)))
            .collect();
        Value::Object(map).to_string()
    }
}
