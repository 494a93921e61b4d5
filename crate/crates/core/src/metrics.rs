//! Image fidelity metrics and the weighted training loss
//! `l1_weight * L1 + ssim_weight * (1 - SSIM) + freq_weight * MSFR`.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{param, shape, Result};
use crate::image::IntensityImage;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const DEFAULT_SCALES: usize = 3;

/// `10 log10(peak^2 / MSE)`; identical images give `+inf`.
pub fn psnr(a: &IntensityImage, b: &IntensityImage, peak: f64) -> Result<f64> {
    a.check_shape(b)?;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// Mean absolute error.
pub fn l1(a: &IntensityImage, b: &IntensityImage) -> Result<f64> {
    a.check_shape(b)?;
    Ok(a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.data().len() as f64)
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-(d * d) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= s);
    w
}

/// Separable Gaussian filter over every fully covered window ("valid" mode).
fn filter_valid(src: &[f64], width: usize, height: usize, w: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (width - SSIM_WINDOW + 1, height - SSIM_WINDOW + 1);
    let mut horiz = vec![0.0; ow * height];
    for y in 0..height {
        let row = &src[y * width..(y + 1) * width];
        for x in 0..ow {
            horiz[y * ow + x] = w.iter().zip(&row[x..x + SSIM_WINDOW]).map(|(a, b)| a * b).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = (0..SSIM_WINDOW).map(|j| w[j] * horiz[(y + j) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over all 11x11 windows, Gaussian weights with sigma 1.5,
/// `C1 = (0.01 peak)^2`, `C2 = (0.03 peak)^2`.
pub fn ssim(a: &IntensityImage, b: &IntensityImage, peak: f64) -> Result<f64> {
    a.check_shape(b)?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(param(format!(
            "SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    let win = gaussian_window();
    let (x, y) = (a.data(), b.data());
    let prod = |p: &[f64], q: &[f64]| p.iter().zip(q).map(|(u, v)| u * v).collect::<Vec<_>>();
    let mu_x = filter_valid(x, w, h, &win);
    let mu_y = filter_valid(y, w, h, &win);
    let xx = filter_valid(&prod(x, x), w, h, &win);
    let yy = filter_valid(&prod(y, y), w, h, &win);
    let xy = filter_valid(&prod(x, y), w, h, &win);
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let n = mu_x.len();
    let total: f64 = (0..n)
        .map(|i| {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let vx = xx[i] - mx * mx;
            let vy = yy[i] - my * my;
            let cov = xy[i] - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .sum();
    Ok(total / n as f64)
}

/// 2x average pooling.
pub fn downsample2(img: &IntensityImage) -> Result<IntensityImage> {
    if !img.width().is_multiple_of(2) || !img.height().is_multiple_of(2) {
        return Err(param("2x downsampling needs even dimensions"));
    }
    IntensityImage::from_fn(img.width() / 2, img.height() / 2, |x, y| {
        0.25 * (img.get(2 * x, 2 * y) + img.get(2 * x + 1, 2 * y) + img.get(2 * x, 2 * y + 1) + img.get(2 * x + 1, 2 * y + 1))
    })
}

/// Unnormalised 2-D DFT, row-major.
pub(crate) fn dft2(img: &IntensityImage, planner: &mut FftPlanner<f64>) -> Vec<Complex64> {
    let (w, h) = (img.width(), img.height());
    let mut buf: Vec<Complex64> = img.data().iter().map(|&v| Complex64::new(v, 0.0)).collect();
    let row_fft = planner.plan_fft_forward(w);
    for row in buf.chunks_exact_mut(w) {
        row_fft.process(row);
    }
    let col_fft = planner.plan_fft_forward(h);
    let mut col = vec![Complex64::new(0.0, 0.0); h];
    for x in 0..w {
        for y in 0..h {
            col[y] = buf[y * w + x];
        }
        col_fft.process(&mut col);
        for y in 0..h {
            buf[y * w + x] = col[y];
        }
    }
    buf
}

/// Multi-scale frequency loss: at each of `scales` dyadic levels, the mean
/// absolute difference over the real and imaginary parts of the 2-D DFTs;
/// averaged over levels.
pub fn msfr_loss(pred: &IntensityImage, gt: &IntensityImage, scales: usize) -> Result<f64> {
    pred.check_shape(gt)?;
    if scales == 0 {
        return Err(param("frequency loss needs at least one scale"));
    }
    let div = 1usize << (scales - 1);
    if !pred.width().is_multiple_of(div) || !pred.height().is_multiple_of(div) {
        return Err(shape(format!(
            "{}x{} is not divisible by {div} for {scales} scales",
            pred.width(),
            pred.height()
        )));
    }
    let mut planner = FftPlanner::new();
    let (mut p, mut g) = (pred.clone(), gt.clone());
    let mut total = 0.0;
    for level in 0..scales {
        if level > 0 {
            p = downsample2(&p)?;
            g = downsample2(&g)?;
        }
        let fp = dft2(&p, &mut planner);
        let fg = dft2(&g, &mut planner);
        let sum: f64 = fp
            .iter()
            .zip(&fg)
            .map(|(a, b)| (a.re - b.re).abs() + (a.im - b.im).abs())
            .sum();
        total += sum / (2 * fp.len()) as f64;
    }
    Ok(total / scales as f64)
}

/// Non-negative loss weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub l1: f64,
    pub ssim: f64,
    pub msfr: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            l1: 10.0,
            ssim: 1.0,
            msfr: 0.1,
        }
    }
}

impl LossWeights {
    pub fn new(l1: f64, ssim: f64, msfr: f64) -> Result<Self> {
        let w = Self { l1, ssim, msfr };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.l1, self.ssim, self.msfr];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(param("loss weights must be finite and non-negative"));
        }
        if all.iter().all(|&v| v == 0.0) {
            return Err(param("at least one loss weight must be positive"));
        }
        Ok(())
    }

    /// Parses `l1,ssim,msfr`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(',')
            .map(|p| p.trim().parse::<f64>().map_err(|_| param(format!("bad loss weight {p:?}"))))
            .collect::<Result<_>>()?;
        match parts.as_slice() {
            &[a, b, c] => Self::new(a, b, c),
            _ => Err(param("expected three comma-separated loss weights")),
        }
    }
}

fn nullable_f64<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else {
        s.serialize_none()
    }
}

/// Metrics and loss terms for one prediction, in a fixed key order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricReport {
    #[serde(serialize_with = "nullable_f64")]
    pub psnr: f64,
    pub ssim: f64,
    pub l1: f64,
    pub ssim_loss: f64,
    pub msfr: f64,
    pub total: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricOptions {
    pub peak: f64,
    pub scales: usize,
}

impl Default for MetricOptions {
    fn default() -> Self {
        Self {
            peak: 1.0,
            scales: DEFAULT_SCALES,
        }
    }
}

pub fn total_loss(pred: &IntensityImage, gt: &IntensityImage, weights: &LossWeights, opts: &MetricOptions) -> Result<MetricReport> {
    weights.validate()?;
    pred.check_shape(gt)?;
    let psnr = psnr(pred, gt, opts.peak)?;
    let ssim = ssim(pred, gt, opts.peak)?;
    let l1 = l1(pred, gt)?;
    let msfr = msfr_loss(pred, gt, opts.scales)?;
    let ssim_loss = 1.0 - ssim;
    Ok(MetricReport {
        psnr,
        ssim,
        l1,
        ssim_loss,
        msfr,
        total: weights.l1 * l1 + weights.ssim * ssim_loss + weights.msfr * msfr,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> IntensityImage {
        IntensityImage::from_fn(w, h, |x, y| 0.1 + 0.8 * ((x * 7 + y * 3) % 17) as f64 / 16.0).unwrap()
    }

    #[test]
    fn psnr_examples() {
        let a = ramp(16, 16);
        assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
        let base = IntensityImage::from_fn(8, 8, |x, y| (x + 10 * y) as f64).unwrap();
        let off = IntensityImage::from_fn(8, 8, |x, y| (x + 10 * y) as f64 + 16.0).unwrap();
        let v = psnr(&base, &off, 255.0).unwrap();
        assert!((v - 20.0 * (255.0f64 / 16.0).log10()).abs() < 1e-12);
        assert!((v - 24.05).abs() < 0.01);
        assert!(psnr(&a, &ramp(8, 16), 1.0).is_err());
    }

    #[test]
    fn ssim_examples() {
        let a = ramp(24, 20);
        assert_eq!(ssim(&a, &a, 1.0).unwrap(), 1.0);
        let inv = IntensityImage::new(24, 20, a.data().iter().map(|v| 1.0 - v).collect()).unwrap();
        assert!(ssim(&a, &inv, 1.0).unwrap() < 0.0);
        assert!(ssim(&ramp(10, 20), &ramp(10, 20), 1.0).is_err());
    }

    #[test]
    fn msfr_examples() {
        let a = ramp(16, 8);
        assert_eq!(msfr_loss(&a, &a, 3).unwrap(), 0.0);
        let shifted = IntensityImage::new(16, 8, a.data().iter().map(|v| v + 0.05).collect()).unwrap();
        assert!((msfr_loss(&shifted, &a, 3).unwrap() - 0.025).abs() < 1e-12);
        assert!(msfr_loss(&ramp(12, 6), &ramp(12, 6), 3).is_err());
    }

    #[test]
    fn total_loss_weights() {
        let a = ramp(16, 16);
        let r = total_loss(&a, &a, &LossWeights::default(), &MetricOptions::default()).unwrap();
        assert_eq!(r.total, 0.0);
        let json = serde_json::to_string(&r).unwrap();
        assert!(json.starts_with(r#"{"psnr":null,"ssim":1.0,"l1":0.0,"ssim_loss":0.0,"msfr":0.0,"total":0.0"#));
        assert_eq!(LossWeights::parse("10,1,0.1").unwrap(), LossWeights::default());
        assert!(LossWeights::parse("1,1,1").is_ok());
        assert!(LossWeights::parse("1,1,0.1").is_ok());
        assert!(LossWeights::parse("0,0,0").is_err());
        assert!(LossWeights::parse("1,-1,0").is_err());
    }
}
