//! Human-visual-system models.
//!
//! Two families live here: the two-Gaussian Näsänen autocorrelation used as the
//! DBS error metric, and isotropic Gaussian lowpass kernels for HMSE / HPSNR.

use std::f64::consts::PI;
use std::io::Write;

use crate::error::{Error, Result};
use crate::image::{BinaryImage, GrayImage};

/// Default viewing scale `S = R * D` (300 dpi at 9.5 in).
///
/// At this scale the combined dual-model kernel cannot lift tones 1..=3 off a blank
/// page, while the doubled scale can, which is the extreme-tone behavior the mask
/// design compensates for.
pub const DEFAULT_SCALE: f64 = 2850.0;

/// Default relative truncation threshold for autocorrelation kernels.
pub const DEFAULT_TRUNCATION: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NasanenParams {
    pub k1: f64,
    pub k2: f64,
    /// Degrees.
    pub sigma1: f64,
    /// Degrees.
    pub sigma2: f64,
    /// `S = R * D`, resolution in dpi times viewing distance in inches.
    pub scale: f64,
}

impl NasanenParams {
    pub fn model1(scale: f64) -> Self {
        Self {
            k1: 43.2,
            k2: 38.7,
            sigma1: 0.0219,
            sigma2: 0.0598,
            scale,
        }
    }

    pub fn model2(scale: f64) -> Self {
        Self {
            k1: 19.1,
            k2: 42.7,
            sigma1: 0.0330,
            sigma2: 0.0569,
            scale,
        }
    }

    /// Continuous autocorrelation `c(u, v)` with `u, v` in degrees.
    pub fn eval(&self, u: f64, v: f64) -> f64 {
        let d2 = u * u + v * v;
        self.k1 * (-d2 / (2.0 * self.sigma1 * self.sigma1)).exp()
            + self.k2 * (-d2 / (2.0 * self.sigma2 * self.sigma2)).exp()
    }

    fn validate(&self) -> Result<()> {
        let ok = [self.k1, self.k2, self.sigma1, self.sigma2, self.scale]
            .iter()
            .all(|v| v.is_finite() && *v > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!(
                "HVS parameters must be positive: {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KernelKind {
    Autocorrelation,
    Lowpass,
}

/// Square kernel of side `2 * radius + 1`, centered at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct HvsKernel {
    radius: usize,
    samples: Vec<f64>,
    kind: KernelKind,
    /// 1-D factor when the kernel is an outer product of itself.
    separable: Option<Vec<f64>>,
}

impl HvsKernel {
    pub fn radius(&self) -> usize {
        self.radius
    }

    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    /// Weight at offset `(dm, dn)`; zero outside the support.
    pub fn at(&self, dm: isize, dn: isize) -> f64 {
        let r = self.radius as isize;
        if dm.abs() > r || dn.abs() > r {
            return 0.0;
        }
        self.samples[((dm + r) as usize) * self.side() + (dn + r) as usize]
    }

    pub fn peak(&self) -> f64 {
        self.at(0, 0)
    }

    pub fn sum(&self) -> f64 {
        self.samples.iter().sum()
    }

    pub(crate) fn separable_factor(&self) -> Option<&[f64]> {
        self.separable.as_deref()
    }

    /// Weighted sum of two kernels on the union of their supports.
    pub fn combine(a: &HvsKernel, wa: f64, b: &HvsKernel, wb: f64) -> HvsKernel {
        let radius = a.radius.max(b.radius);
        let side = 2 * radius + 1;
        let r = radius as isize;
        let mut samples = Vec::with_capacity(side * side);
        for dm in -r..=r {
            for dn in -r..=r {
                samples.push(wa * a.at(dm, dn) + wb * b.at(dm, dn));
            }
        }
        HvsKernel {
            radius,
            samples,
            kind: a.kind,
            separable: None,
        }
    }

    /// One CSV row per kernel row, full precision.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        for row in self.samples.chunks(self.side()) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }
}

/// Discrete DBS autocorrelation kernel at scale `scale_multiplier * params.scale`.
pub fn nasanen_autocorr(
    params: &NasanenParams,
    scale_multiplier: u32,
    truncation: f64,
) -> Result<HvsKernel> {
    params.validate()?;
    if !(truncation > 0.0 && truncation < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "truncation must lie in (0, 1), got {truncation}"
        )));
    }
    if scale_multiplier == 0 {
        return Err(Error::InvalidArgument("scale multiplier must be >= 1".into()));
    }
    let s = params.scale * scale_multiplier as f64;
    let deg_per_px = 180.0 / (PI * s);
    let gain = deg_per_px * deg_per_px;
    let sample = |m: f64, n: f64| gain * params.eval(deg_per_px * m, deg_per_px * n);
    let peak = sample(0.0, 0.0);

    // The weights fall off monotonically with distance, so the smallest radius whose
    // outside samples are all below threshold is set by the nearest outside sample,
    // the on-axis one at distance radius + 1.
    let mut radius = 0usize;
    while sample((radius + 1) as f64, 0.0) >= truncation * peak {
        radius += 1;
    }
    let r = radius as isize;
    let mut samples = Vec::with_capacity((2 * radius + 1).pow(2));
    for m in -r..=r {
        for n in -r..=r {
            samples.push(sample(m as f64, n as f64));
        }
    }
    Ok(HvsKernel {
        radius,
        samples,
        kind: KernelKind::Autocorrelation,
        separable: None,
    })
}

/// Isotropic Gaussian lowpass with `sigma = size / 6`, normalized to unit sum.
pub fn gaussian_lowpass(size: usize) -> Result<HvsKernel> {
    if size < 3 || size % 2 == 0 {
        return Err(Error::InvalidArgument(format!(
            "lowpass kernel size must be odd and >= 3, got {size}"
        )));
    }
    let radius = size / 2;
    let sigma = size as f64 / 6.0;
    let r = radius as isize;
    let raw: Vec<f64> = (-r..=r)
        .map(|m| (-((m * m) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = raw.iter().sum();
    let factor: Vec<f64> = raw.iter().map(|v| v / total).collect();
    let mut samples = Vec::with_capacity(size * size);
    for a in &factor {
        for b in &factor {
            samples.push(a * b);
        }
    }
    Ok(HvsKernel {
        radius,
        samples,
        kind: KernelKind::Lowpass,
        separable: Some(factor),
    })
}

/// Pixels per visual degree, `N_v = 2 D tan(θ/2) * R * 0.393700787` with θ = 1°.
pub fn pixels_per_degree(viewing_distance_cm: f64, resolution_dpi: f64) -> f64 {
    let viewed_width = 2.0 * viewing_distance_cm * (0.5f64).to_radians().tan();
    viewed_width * resolution_dpi * 0.393700787
}

/// Largest odd kernel size not exceeding `round(N_v)`.
pub fn kernel_size_for(viewing_distance_cm: f64, resolution_dpi: f64) -> usize {
    let n = pixels_per_degree(viewing_distance_cm, resolution_dpi).round() as usize;
    if n == 0 {
        1
    } else if n % 2 == 1 {
        n
    } else {
        n - 1
    }
}

/// Half-sample symmetric reflection into `0..len` (`-1 -> 0`, `len -> len - 1`).
pub(crate) fn mirror(index: isize, len: usize) -> usize {
    let n = len as isize;
    let period = 2 * n;
    let mut i = index.rem_euclid(period);
    if i >= n {
        i = period - 1 - i;
    }
    i as usize
}

fn check_lowpass(kernel: &HvsKernel) -> Result<()> {
    if kernel.kind != KernelKind::Lowpass {
        return Err(Error::InvalidArgument(
            "HMSE needs a lowpass kernel".into(),
        ));
    }
    Ok(())
}

/// HVS-weighted MSE between two gray images under mirror boundary extension.
pub fn hmse_gray(x: &GrayImage, y: &GrayImage, kernel: &HvsKernel) -> Result<f64> {
    check_lowpass(kernel)?;
    let (w, h) = (x.width(), x.height());
    if (w, h) != (y.width(), y.height()) {
        return Err(Error::DimensionMismatch(format!(
            "HMSE operands are {}x{} and {}x{}",
            w,
            h,
            y.width(),
            y.height()
        )));
    }
    let diff: Vec<f64> = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(&a, &b)| a as f64 - b as f64)
        .collect();
    let filtered = match kernel.separable_factor() {
        Some(factor) => filter_separable(&diff, w, h, factor),
        None => filter_direct(&diff, w, h, kernel),
    };
    Ok(filtered.iter().map(|v| v * v).sum::<f64>() / (w * h) as f64)
}

/// HMSE between a continuous-tone original and its halftone.
pub fn hmse(x: &GrayImage, y: &BinaryImage, kernel: &HvsKernel) -> Result<f64> {
    hmse_gray(x, &y.to_gray(), kernel)
}

/// `10 log10(255² / HMSE)`; infinite when the error vanishes.
pub fn hpsnr_from_hmse(hmse: f64) -> f64 {
    if hmse <= 0.0 {
        f64::INFINITY
    } else {
        10.0 * (255.0f64 * 255.0 / hmse).log10()
    }
}

pub fn hpsnr(x: &GrayImage, y: &BinaryImage, kernel: &HvsKernel) -> Result<f64> {
    Ok(hpsnr_from_hmse(hmse(x, y, kernel)?))
}

fn filter_separable(src: &[f64], w: usize, h: usize, factor: &[f64]) -> Vec<f64> {
    let r = (factor.len() / 2) as isize;
    let mut tmp = vec![0.0; w * h];
    for row in 0..h {
        let line = &src[row * w..(row + 1) * w];
        for col in 0..w {
            let mut acc = 0.0;
            for (k, wt) in factor.iter().enumerate() {
                acc += wt * line[mirror(col as isize + k as isize - r, w)];
            }
            tmp[row * w + col] = acc;
        }
    }
    let mut out = vec![0.0; w * h];
    for row in 0..h {
        for (k, wt) in factor.iter().enumerate() {
            let src_row = mirror(row as isize + k as isize - r, h);
            let line = &tmp[src_row * w..(src_row + 1) * w];
            let dst = &mut out[row * w..(row + 1) * w];
            for (d, s) in dst.iter_mut().zip(line) {
                *d += wt * s;
            }
        }
    }
    out
}

fn filter_direct(src: &[f64], w: usize, h: usize, kernel: &HvsKernel) -> Vec<f64> {
    let r = kernel.radius() as isize;
    let mut out = vec![0.0; w * h];
    for row in 0..h {
        for col in 0..w {
            let mut acc = 0.0;
            for dm in -r..=r {
                let sr = mirror(row as isize + dm, h);
                for dn in -r..=r {
                    let sc = mirror(col as isize + dn, w);
                    acc += kernel.at(dm, dn) * src[sr * w + sc];
                }
            }
            out[row * w + col] = acc;
        }
    }
    out
}
