//! Averaged power spectra of halftones and the statistics built on them.
//!
//! Periodograms use a rectangular window, remove the segment mean and normalize by
//! the window area, so `sum(bins) == sum((x - mean)^2)`. Bins are stored row-major
//! with DC at `(0, 0)`.

use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::image::{BinaryImage, GrayImage};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    Bartlett,
    Welch,
    Randomized,
}

/// Averaged periodogram with estimator metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct Apsd {
    pub rows: usize,
    pub cols: usize,
    pub bins: Vec<f64>,
    pub segments: usize,
    pub estimator: Estimator,
    pub seed: Option<u64>,
}

impl Apsd {
    pub fn at(&self, k: usize, l: usize) -> f64 {
        self.bins[k * self.cols + l]
    }

    pub fn total(&self) -> f64 {
        self.bins.iter().sum()
    }

    /// Row-major CSV, one window row per line.
    pub fn write_csv(&self, mut out: impl Write) -> std::io::Result<()> {
        for row in self.bins.chunks(self.cols) {
            let line: Vec<String> = row.iter().map(|v| format!("{v:e}")).collect();
            writeln!(out, "{}", line.join(","))?;
        }
        Ok(())
    }

    /// 8-bit log-scaled rendering with DC moved to the center (visualization only).
    pub fn visualize(&self) -> GrayImage {
        let max = self.bins.iter().cloned().fold(0.0, f64::max);
        let denom = (1.0 + max).ln();
        GrayImage::from_fn(self.cols, self.rows, |r, c| {
            let k = (r + self.rows - self.rows / 2) % self.rows;
            let l = (c + self.cols - self.cols / 2) % self.cols;
            if denom <= 0.0 {
                0
            } else {
                (255.0 * (1.0 + self.at(k, l)).ln() / denom).round() as u8
            }
        })
    }
}

/// FFT plans for one window shape.
#[derive(Clone)]
pub struct Periodogram {
    rows: usize,
    cols: usize,
    row_fft: Arc<dyn Fft<f64>>,
    col_fft: Arc<dyn Fft<f64>>,
    pub remove_mean: bool,
}

impl Periodogram {
    pub fn new(rows: usize, cols: usize) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidArgument("empty periodogram window".into()));
        }
        let mut planner = FftPlanner::new();
        Ok(Self {
            rows,
            cols,
            row_fft: planner.plan_fft_forward(cols),
            col_fft: planner.plan_fft_forward(rows),
            remove_mean: true,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// `|DFT|^2 / (rows * cols)` of a row-major real window.
    pub fn compute(&self, window: &[f64]) -> Result<Vec<f64>> {
        let n = self.rows * self.cols;
        if window.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "window has {} samples, expected {n}",
                window.len()
            )));
        }
        let mean = if self.remove_mean {
            window.iter().sum::<f64>() / n as f64
        } else {
            0.0
        };
        let mut buf: Vec<Complex64> = window.iter().map(|&v| Complex64::new(v - mean, 0.0)).collect();
        self.row_fft.process(&mut buf);
        let mut cols_major = vec![Complex64::new(0.0, 0.0); n];
        for k in 0..self.rows {
            for l in 0..self.cols {
                cols_major[l * self.rows + k] = buf[k * self.cols + l];
            }
        }
        self.col_fft.process(&mut cols_major);
        let scale = 1.0 / n as f64;
        let mut bins = vec![0.0; n];
        for l in 0..self.cols {
            for k in 0..self.rows {
                bins[k * self.cols + l] = cols_major[l * self.rows + k].norm_sqr() * scale;
            }
        }
        Ok(bins)
    }

    /// Periodogram of the `rows × cols` ink window whose top-left corner is `origin`.
    pub fn of_segment(&self, h: &BinaryImage, origin: (usize, usize)) -> Result<Vec<f64>> {
        self.compute(&extract_ink(h, origin, self.rows, self.cols))
    }
}

/// Periodogram of one window (mean removed).
pub fn periodogram(segment: &[f64], rows: usize, cols: usize) -> Result<Vec<f64>> {
    if segment.is_empty() {
        return Err(Error::InvalidArgument("empty segment".into()));
    }
    Periodogram::new(rows, cols)?.compute(segment)
}

/// Ink coverage (1 for a black dot) of a window.
pub fn extract_ink(h: &BinaryImage, origin: (usize, usize), rows: usize, cols: usize) -> Vec<f64> {
    let (r0, c0) = origin;
    let mut out = Vec::with_capacity(rows * cols);
    for r in r0..r0 + rows {
        let line = &h.data()[r * h.width() + c0..r * h.width() + c0 + cols];
        out.extend(line.iter().map(|&v| if v == 0 { 1.0 } else { 0.0 }));
    }
    out
}

/// Mean of the periodograms at the given window origins, summed in origin order.
pub fn average_segments(
    h: &BinaryImage,
    plan: &Periodogram,
    origins: &[(usize, usize)],
) -> Result<Vec<f64>> {
    if origins.is_empty() {
        return Err(Error::InvalidArgument("at least one segment is required".into()));
    }
    for &(r, c) in origins {
        if r + plan.rows > h.height() || c + plan.cols > h.width() {
            return Err(Error::InvalidArgument(format!(
                "segment at ({r}, {c}) of size {}x{} exceeds the {}x{} image",
                plan.rows,
                plan.cols,
                h.height(),
                h.width()
            )));
        }
    }
    let periodograms: Vec<Vec<f64>> = origins
        .par_iter()
        .map(|&o| plan.of_segment(h, o))
        .collect::<Result<_>>()?;
    let mut acc = vec![0.0; plan.rows * plan.cols];
    for p in &periodograms {
        for (a, v) in acc.iter_mut().zip(p) {
            *a += v;
        }
    }
    let k = origins.len() as f64;
    acc.iter_mut().for_each(|v| *v /= k);
    Ok(acc)
}

/// Origins of `segments` windows stepped vertically by `step` from the top-left corner.
pub fn strip_origins(step: usize, segments: usize) -> Vec<(usize, usize)> {
    (0..segments).map(|r| (r * step, 0)).collect()
}

fn check_strip(h: &BinaryImage, rows: usize, cols: usize, step: usize, segments: usize) -> Result<()> {
    if segments == 0 || step == 0 {
        return Err(Error::InvalidArgument("segments and step must be positive".into()));
    }
    let needed = (segments - 1) * step + rows;
    if needed > h.height() || cols > h.width() {
        return Err(Error::InvalidArgument(format!(
            "{segments} segments of {rows}x{cols} at stride {step} need {needed}x{cols}, image is {}x{}",
            h.height(),
            h.width()
        )));
    }
    Ok(())
}

/// Bartlett's procedure: consecutive windows stepped down a fixed left edge.
pub fn bartlett_apsd(
    h: &BinaryImage,
    rows: usize,
    cols: usize,
    step: usize,
    segments: usize,
) -> Result<Apsd> {
    check_strip(h, rows, cols, step, segments)?;
    let plan = Periodogram::new(rows, cols)?;
    let bins = average_segments(h, &plan, &strip_origins(step, segments))?;
    Ok(Apsd {
        rows,
        cols,
        bins,
        segments,
        estimator: Estimator::Bartlett,
        seed: None,
    })
}

/// Welch's overlapped variant with stride `rows / 2`.
pub fn welch_apsd(h: &BinaryImage, rows: usize, cols: usize, segments: usize) -> Result<Apsd> {
    let step = (rows / 2).max(1);
    check_strip(h, rows, cols, step, segments)?;
    let plan = Periodogram::new(rows, cols)?;
    let bins = average_segments(h, &plan, &strip_origins(step, segments))?;
    Ok(Apsd {
        rows,
        cols,
        bins,
        segments,
        estimator: Estimator::Welch,
        seed: None,
    })
}

/// Window origins drawn uniformly (with replacement) from a seeded generator.
pub fn random_origins(
    height: usize,
    width: usize,
    rows: usize,
    cols: usize,
    segments: usize,
    seed: u64,
) -> Vec<(usize, usize)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..segments)
        .map(|_| {
            (
                rng.gen_range(0..=height - rows),
                rng.gen_range(0..=width - cols),
            )
        })
        .collect()
}

/// Randomized-window APSD: `segments` windows placed uniformly at random.
pub fn randomized_apsd(
    h: &BinaryImage,
    rows: usize,
    cols: usize,
    segments: usize,
    seed: u64,
) -> Result<Apsd> {
    if rows > h.height() || cols > h.width() || rows == 0 || cols == 0 {
        return Err(Error::InvalidArgument(format!(
            "window {rows}x{cols} does not fit the {}x{} image",
            h.height(),
            h.width()
        )));
    }
    if segments == 0 {
        return Err(Error::InvalidArgument("at least one segment is required".into()));
    }
    let plan = Periodogram::new(rows, cols)?;
    let origins = random_origins(h.height(), h.width(), rows, cols, segments, seed);
    let bins = average_segments(h, &plan, &origins)?;
    Ok(Apsd {
        rows,
        cols,
        bins,
        segments,
        estimator: Estimator::Randomized,
        seed: Some(seed),
    })
}

fn signed_freq(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

/// Radial distance of bin `(k, l)` from DC, in bins of the longer window side.
pub fn bin_radius(k: usize, l: usize, rows: usize, cols: usize) -> f64 {
    let s = rows.max(cols) as f64;
    let fy = signed_freq(k, rows) * s / rows as f64;
    let fx = signed_freq(l, cols) * s / cols as f64;
    (fy * fy + fx * fx).sqrt()
}

/// Assigns every non-DC bin to an annulus of `ring_width` bins; annuli with fewer
/// than eight bins are merged outward (the outermost into its inner neighbor).
fn ring_assignment(rows: usize, cols: usize, ring_width: f64) -> (Vec<Option<usize>>, usize) {
    let raw: Vec<Option<usize>> = (0..rows * cols)
        .map(|i| {
            let (k, l) = (i / cols, i % cols);
            if k == 0 && l == 0 {
                None
            } else {
                Some((bin_radius(k, l, rows, cols) / ring_width).round() as usize)
            }
        })
        .collect();
    let max_ring = raw.iter().flatten().copied().max().unwrap_or(0);
    let mut counts = vec![0usize; max_ring + 1];
    for r in raw.iter().flatten() {
        counts[*r] += 1;
    }
    // Map raw ring -> merged ring.
    let mut merged = vec![0usize; max_ring + 1];
    let mut next = 0usize;
    let mut pending = 0usize;
    for r in 0..=max_ring {
        merged[r] = next;
        pending += counts[r];
        if pending >= 8 {
            next += 1;
            pending = 0;
        }
    }
    let mut n_rings = next;
    if pending > 0 {
        if n_rings == 0 {
            n_rings = 1;
        } else {
            for m in merged.iter_mut() {
                if *m == next {
                    *m = next - 1;
                }
            }
        }
    }
    (raw.into_iter().map(|r| r.map(|r| merged[r])).collect(), n_rings)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Ring {
    /// Mean radius of member bins, in bins.
    pub radius: f64,
    pub bins: usize,
    /// Radially averaged power.
    pub mean: f64,
    /// Sample variance over squared mean.
    pub anisotropy: f64,
}

/// Radially averaged power and anisotropy per annulus (DC excluded).
pub fn rapsd_anisotropy(apsd: &Apsd, ring_width: f64) -> Result<Vec<Ring>> {
    if !(ring_width >= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "ring width must be at least one bin, got {ring_width}"
        )));
    }
    let (assign, n_rings) = ring_assignment(apsd.rows, apsd.cols, ring_width);
    let mut members: Vec<Vec<(f64, f64)>> = vec![Vec::new(); n_rings];
    for (i, ring) in assign.iter().enumerate() {
        if let Some(r) = ring {
            let (k, l) = (i / apsd.cols, i % apsd.cols);
            members[*r].push((bin_radius(k, l, apsd.rows, apsd.cols), apsd.bins[i]));
        }
    }
    Ok(members
        .into_iter()
        .map(|m| {
            let n = m.len() as f64;
            let mean = m.iter().map(|p| p.1).sum::<f64>() / n;
            let var = if m.len() > 1 {
                m.iter().map(|p| (p.1 - mean).powi(2)).sum::<f64>() / (n - 1.0)
            } else {
                0.0
            };
            Ring {
                radius: m.iter().map(|p| p.0).sum::<f64>() / n,
                bins: m.len(),
                mean,
                anisotropy: if mean > 0.0 { var / (mean * mean) } else { 0.0 },
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Impulse {
    pub row: usize,
    pub col: usize,
    /// Bin power over its ring median (infinite when the median is zero).
    pub ratio: f64,
}

/// Bins exceeding `threshold_factor` times the median of their radial ring.
///
/// DC and its eight neighbors are never flagged, and bins below `1e-9` of the
/// spectrum maximum are treated as empty.
pub fn detect_impulses(apsd: &Apsd, threshold_factor: f64) -> Vec<Impulse> {
    let (assign, n_rings) = ring_assignment(apsd.rows, apsd.cols, 1.0);
    let mut values: Vec<Vec<f64>> = vec![Vec::new(); n_rings];
    for (i, ring) in assign.iter().enumerate() {
        if let Some(r) = ring {
            values[*r].push(apsd.bins[i]);
        }
    }
    let medians: Vec<f64> = values
        .iter_mut()
        .map(|v| {
            v.sort_by(|a, b| a.total_cmp(b));
            let n = v.len();
            if n % 2 == 1 {
                v[n / 2]
            } else {
                0.5 * (v[n / 2 - 1] + v[n / 2])
            }
        })
        .collect();
    let max = apsd.bins.iter().cloned().fold(0.0, f64::max);
    let floor = 1e-9 * max;
    let mut found = Vec::new();
    for (i, ring) in assign.iter().enumerate() {
        let Some(r) = ring else { continue };
        let (k, l) = (i / apsd.cols, i % apsd.cols);
        let near_dc = signed_freq(k, apsd.rows).abs() <= 1.0 && signed_freq(l, apsd.cols).abs() <= 1.0;
        let v = apsd.bins[i];
        if near_dc || v <= floor {
            continue;
        }
        let median = medians[*r];
        if v > threshold_factor * median {
            found.push(Impulse {
                row: k,
                col: l,
                ratio: if median > 0.0 { v / median } else { f64::INFINITY },
            });
        }
    }
    found
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpectrumCostKind {
    /// `sum (a - b)^2`
    MagnitudeMse,
    /// `sum (a - b)^2 / b^2`
    DbsNormalized,
    /// `sum (a - b)^2 / (a^2 + b^2)`
    SymmetricNormalized,
}

/// Per-bin term; `None` when its denominator vanishes.
pub fn cost_term(test: f64, reference: f64, kind: SpectrumCostKind) -> Option<f64> {
    let d = test - reference;
    let num = d * d;
    let denom = match kind {
        SpectrumCostKind::MagnitudeMse => return Some(num),
        SpectrumCostKind::DbsNormalized => reference * reference,
        SpectrumCostKind::SymmetricNormalized => test * test + reference * reference,
    };
    (denom > 0.0).then(|| num / denom)
}

/// Spectral distance between a test APSD and a reference; DC excluded.
pub fn spectrum_cost(test: &Apsd, reference: &Apsd, kind: SpectrumCostKind) -> Result<f64> {
    if (test.rows, test.cols) != (reference.rows, reference.cols) {
        return Err(Error::DimensionMismatch(format!(
            "APSDs are {}x{} and {}x{}",
            test.rows, test.cols, reference.rows, reference.cols
        )));
    }
    Ok(test
        .bins
        .iter()
        .zip(&reference.bins)
        .skip(1)
        .filter_map(|(&a, &b)| cost_term(a, b, kind))
        .sum())
}
