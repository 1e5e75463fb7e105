use crate::error::{Error, Result};

/// Side of the square SSIM window.
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// Names of the three parameter maps followed by the pooled entry.
pub const PARAM_NAMES: [&str; 4] = ["v_ic", "v_iso", "od", "All"];

/// Peak signal-to-noise ratio over masked voxels; `+∞` when the maps agree exactly.
pub fn psnr(reference: &[f64], test: &[f64], mask: &[bool], data_range: f64) -> Result<f64> {
    if reference.len() != test.len() || reference.len() != mask.len() {
        return Err(Error::shape("PSNR inputs differ in length"));
    }
    if !(data_range > 0.0) {
        return Err(Error::invalid("data range must be > 0"));
    }
    let (mut sse, mut n) = (0.0, 0usize);
    for ((r, t), m) in reference.iter().zip(test).zip(mask) {
        if *m {
            sse += (r - t) * (r - t);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::invalid("empty mask"));
    }
    let mse = sse / n as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (data_range * data_range / mse).log10())
}

/// Root mean squared error over masked voxels.
pub fn rmse(reference: &[f64], test: &[f64], mask: &[bool]) -> Result<f64> {
    if reference.len() != test.len() || reference.len() != mask.len() {
        return Err(Error::shape("RMSE inputs differ in length"));
    }
    let (mut sse, mut n) = (0.0, 0usize);
    for ((r, t), m) in reference.iter().zip(test).zip(mask) {
        if *m {
            sse += (r - t) * (r - t);
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::invalid("empty mask"));
    }
    Ok((sse / n as f64).sqrt())
}

fn gaussian_kernel() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut k = [0.0; SSIM_WINDOW];
    for (i, v) in k.iter_mut().enumerate() {
        let x = i as f64 - half;
        *v = (-x * x / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = k.iter().sum();
    k.map(|v| v / s)
}

/// Valid-region separable Gaussian filtering: output is `(h-10) × (w-10)`.
fn filter_valid(img: &[f64], h: usize, w: usize, k: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let oh = h + 1 - SSIM_WINDOW;
    let ow = w + 1 - SSIM_WINDOW;
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        for c in 0..ow {
            rows[r * ow + c] = k.iter().enumerate().map(|(i, kv)| kv * img[r * w + c + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = k.iter().enumerate().map(|(i, kv)| kv * rows[(r + i) * ow + c]).sum();
        }
    }
    out
}

/// Sum and count of local SSIM values over masked window centers.
fn ssim_sum(
    reference: &[f64],
    test: &[f64],
    height: usize,
    width: usize,
    mask: &[bool],
    data_range: f64,
) -> Result<(f64, usize)> {
    let n = height * width;
    if reference.len() != n || test.len() != n || mask.len() != n {
        return Err(Error::shape("SSIM inputs must match the grid"));
    }
    if height < SSIM_WINDOW || width < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "map {height}x{width} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window"
        )));
    }
    if !(data_range > 0.0) {
        return Err(Error::invalid("data range must be > 0"));
    }
    let k = gaussian_kernel();
    let xx: Vec<f64> = reference.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = test.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = reference.iter().zip(test).map(|(a, b)| a * b).collect();
    let mx = filter_valid(reference, height, width, &k);
    let my = filter_valid(test, height, width, &k);
    let sxx = filter_valid(&xx, height, width, &k);
    let syy = filter_valid(&yy, height, width, &k);
    let sxy = filter_valid(&xy, height, width, &k);
    let c1 = (SSIM_K1 * data_range).powi(2);
    let c2 = (SSIM_K2 * data_range).powi(2);
    let half = SSIM_WINDOW / 2;
    let ow = width + 1 - SSIM_WINDOW;
    let (mut sum, mut count) = (0.0, 0usize);
    for (i, (((mx, my), sxx), (syy, sxy))) in mx.iter().zip(&my).zip(&sxx).zip(syy.iter().zip(&sxy)).enumerate() {
        let (r, c) = (i / ow + half, i % ow + half);
        if !mask[r * width + c] {
            continue;
        }
        let vx = sxx - mx * mx;
        let vy = syy - my * my;
        let cov = sxy - mx * my;
        sum += ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        count += 1;
    }
    Ok((sum, count))
}

/// Mean local SSIM (11×11 Gaussian window, σ = 1.5) over masked centers
/// whose window lies inside the map.
pub fn ssim(
    reference: &[f64],
    test: &[f64],
    height: usize,
    width: usize,
    mask: &[bool],
    data_range: f64,
) -> Result<f64> {
    let (sum, count) = ssim_sum(reference, test, height, width, mask, data_range)?;
    if count == 0 {
        return Err(Error::invalid("no masked SSIM window centers"));
    }
    Ok(sum / count as f64)
}

/// PSNR and SSIM for one predicted parameter set, per parameter and pooled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricSet {
    pub psnr: [f64; 4],
    pub ssim: [f64; 4],
}

/// Scores three predicted maps against reference maps with data range 1.
///
/// The pooled entry stacks the three maps: one MSE over all of them for
/// PSNR and one mean over all their local SSIM windows.
pub fn evaluate_maps(
    reference: &[Vec<f64>; 3],
    predicted: &[Vec<f64>; 3],
    height: usize,
    width: usize,
    mask: &[bool],
) -> Result<MetricSet> {
    let mut out = MetricSet {
        psnr: [0.0; 4],
        ssim: [0.0; 4],
    };
    let (mut ssum, mut scount) = (0.0, 0usize);
    for p in 0..3 {
        out.psnr[p] = psnr(&reference[p], &predicted[p], mask, 1.0)?;
        let (s, c) = ssim_sum(&reference[p], &predicted[p], height, width, mask, 1.0)?;
        if c == 0 {
            return Err(Error::invalid("no masked SSIM window centers"));
        }
        out.ssim[p] = s / c as f64;
        ssum += s;
        scount += c;
    }
    let stacked_ref = reference.concat();
    let stacked_pred = predicted.concat();
    let stacked_mask = [mask, mask, mask].concat();
    out.psnr[3] = psnr(&stacked_ref, &stacked_pred, &stacked_mask, 1.0)?;
    out.ssim[3] = ssum / scount as f64;
    Ok(out)
}

/// Pooled RMSE of three predicted maps.
pub fn pooled_rmse(reference: &[Vec<f64>; 3], predicted: &[Vec<f64>; 3], mask: &[bool]) -> Result<f64> {
    rmse(&reference.concat(), &predicted.concat(), &[mask, mask, mask].concat())
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Mean ± standard deviation of metric sets across seeds or phantoms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub psnr_mean: [f64; 4],
    pub psnr_sd: [f64; 4],
    pub ssim_mean: [f64; 4],
    pub ssim_sd: [f64; 4],
    pub count: usize,
}

impl MetricReport {
    pub fn from_sets(sets: &[MetricSet]) -> Result<Self> {
        if sets.is_empty() {
            return Err(Error::invalid("no metric sets to summarize"));
        }
        let mut r = MetricReport {
            psnr_mean: [0.0; 4],
            psnr_sd: [0.0; 4],
            ssim_mean: [0.0; 4],
            ssim_sd: [0.0; 4],
            count: sets.len(),
        };
        for p in 0..4 {
            let ps: Vec<f64> = sets.iter().map(|s| s.psnr[p]).collect();
            let ss: Vec<f64> = sets.iter().map(|s| s.ssim[p]).collect();
            (r.psnr_mean[p], r.psnr_sd[p]) = mean_sd(&ps);
            (r.ssim_mean[p], r.ssim_sd[p]) = mean_sd(&ss);
        }
        Ok(r)
    }
}
