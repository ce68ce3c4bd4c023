//! Class tilings: the processing-order maps that schedule dot diffusion.

use std::fs;
use std::path::{Path, PathBuf};

use crate::dbs::MaskStack;
use crate::error::{Error, Result};
use crate::image::{BinaryImage, GrayImage};
use crate::pnm;
use crate::spectrum::{self, Impulse};

/// Principal blue-noise wavelength in pixels for normalized tone `g_bar`.
pub fn ideal_wavelength(g_bar: f64) -> Result<f64> {
    if !(g_bar > 0.0 && g_bar < 1.0) {
        return Err(Error::SingularWavelength(g_bar));
    }
    Ok(if g_bar < 0.25 {
        1.0 / g_bar.sqrt()
    } else if g_bar < 0.75 {
        2.0
    } else {
        1.0 / (1.0 - g_bar).sqrt()
    })
}

/// An `rows × cols` permutation of processing orders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassMatrix {
    rows: usize,
    cols: usize,
    orders: Vec<u16>,
}

impl ClassMatrix {
    pub fn new(rows: usize, cols: usize, orders: Vec<u16>) -> Result<Self> {
        let n = rows * cols;
        if n == 0 || orders.len() != n || n > u16::MAX as usize + 1 {
            return Err(Error::InvalidArgument(format!(
                "class matrix {rows}x{cols} needs {n} orders, got {}",
                orders.len()
            )));
        }
        let mut seen = vec![false; n];
        for &o in &orders {
            let o = o as usize;
            if o >= n || seen[o] {
                return Err(Error::InvalidArgument(format!(
                    "class matrix orders must be a permutation of 0..{n}"
                )));
            }
            seen[o] = true;
        }
        Ok(Self { rows, cols, orders })
    }

    /// Recursive dispersed-dot (Bayer) index matrix of side `n` (a power of two).
    pub fn bayer(n: usize) -> Result<Self> {
        if n == 0 || !n.is_power_of_two() {
            return Err(Error::InvalidArgument(format!(
                "Bayer matrix side must be a power of two, got {n}"
            )));
        }
        let mut m = vec![0u16];
        let mut side = 1;
        while side < n {
            let next = side * 2;
            let mut grown = vec![0u16; next * next];
            for r in 0..side {
                for c in 0..side {
                    let v = 4 * m[r * side + c];
                    grown[r * next + c] = v;
                    grown[r * next + c + side] = v + 2;
                    grown[(r + side) * next + c] = v + 3;
                    grown[(r + side) * next + c + side] = v + 1;
                }
            }
            m = grown;
            side = next;
        }
        Self::new(n, n, m)
    }

    /// Knuth's 8×8 dot-diffusion class matrix.
    pub fn knuth() -> Self {
        const ORDERS: [u16; 64] = [
            34, 48, 40, 32, 29, 15, 23, 31, //
            42, 58, 56, 53, 21, 5, 7, 10, //
            50, 62, 61, 45, 13, 1, 2, 18, //
            38, 46, 54, 37, 25, 17, 9, 26, //
            28, 14, 22, 30, 35, 49, 41, 33, //
            20, 4, 6, 11, 43, 59, 57, 52, //
            12, 0, 3, 19, 51, 63, 60, 44, //
            24, 16, 8, 27, 39, 47, 55, 36, //
        ];
        Self::new(8, 8, ORDERS.to_vec()).expect("permutation")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn at(&self, row: usize, col: usize) -> u16 {
        self.orders[(row % self.rows) * self.cols + col % self.cols]
    }
}

/// Square map of processing orders, tiled periodically over larger images.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassTiling {
    size: usize,
    cm_rows: usize,
    cm_cols: usize,
    orders: Vec<u16>,
}

impl ClassTiling {
    pub fn new(size: usize, cm_rows: usize, cm_cols: usize, orders: Vec<u16>) -> Result<Self> {
        let classes = cm_rows * cm_cols;
        if orders.len() != size * size {
            return Err(Error::DimensionMismatch(format!(
                "class tiling of side {size} needs {} orders, got {}",
                size * size,
                orders.len()
            )));
        }
        if let Some(bad) = orders.iter().find(|&&o| o as usize >= classes) {
            return Err(Error::InvalidArgument(format!(
                "order {bad} outside 0..{classes}"
            )));
        }
        Ok(Self {
            size,
            cm_rows,
            cm_cols,
            orders,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn cm_rows(&self) -> usize {
        self.cm_rows
    }

    pub fn cm_cols(&self) -> usize {
        self.cm_cols
    }

    pub fn num_classes(&self) -> usize {
        self.cm_rows * self.cm_cols
    }

    pub fn orders(&self) -> &[u16] {
        &self.orders
    }

    /// Order at image position `(row, col)` under periodic extension.
    pub fn at(&self, row: usize, col: usize) -> u16 {
        self.orders[(row % self.size) * self.size + col % self.size]
    }

    pub fn counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.num_classes()];
        for &o in &self.orders {
            counts[o as usize] += 1;
        }
        counts
    }

    /// Ink indicator of `{c = order}` over a `width × height` periodic extension.
    pub fn indicator(&self, order: u16, width: usize, height: usize) -> BinaryImage {
        BinaryImage::from_ink(
            width,
            height,
            (0..height).flat_map(move |r| (0..width).map(move |c| self.at(r, c) == order)),
        )
    }

    /// Writes `path` as PGM P5 and `path.meta` holding `CM <rows> <cols>`.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if self.num_classes() > 256 {
            return Err(Error::InvalidArgument(
                "only tilings with at most 256 classes fit in a PGM".into(),
            ));
        }
        let img = GrayImage::new(
            self.size,
            self.size,
            self.orders.iter().map(|&o| o as u8).collect(),
        )?;
        pnm::save_pgm(&img, path)?;
        let meta = meta_path(path);
        fs::write(&meta, format!("CM {} {}\n", self.cm_rows, self.cm_cols))
            .map_err(|e| Error::io(&meta, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let img = pnm::load_pgm(path)?;
        if img.width() != img.height() {
            return Err(Error::DimensionMismatch(format!(
                "class tiling must be square, got {}x{}",
                img.width(),
                img.height()
            )));
        }
        let meta = meta_path(path);
        let text = fs::read_to_string(&meta).map_err(|e| Error::io(&meta, e))?;
        let fields: Vec<&str> = text.split_whitespace().collect();
        let (rows, cols) = match fields.as_slice() {
            ["CM", r, c] => (
                r.parse::<usize>().map_err(|_| bad_meta(&meta))?,
                c.parse::<usize>().map_err(|_| bad_meta(&meta))?,
            ),
            _ => return Err(bad_meta(&meta)),
        };
        Self::new(
            img.width(),
            rows,
            cols,
            img.data().iter().map(|&v| v as u16).collect(),
        )
    }
}

fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}

fn bad_meta(path: &Path) -> Error {
    Error::InvalidArgument(format!(
        "{}: expected a single line `CM <rows> <cols>`",
        path.display()
    ))
}

/// `c = floor(f * M * N / 256)`.
pub fn quantize_order(first_black: u8, classes: usize) -> u16 {
    ((first_black as usize * classes) / 256) as u16
}

pub fn quantize_prototype(prototype: &MaskStack, rows: usize, cols: usize) -> Result<ClassTiling> {
    let classes = rows * cols;
    if classes == 0 || classes > 256 {
        return Err(Error::InvalidArgument(format!(
            "class count {rows}x{cols} = {classes} must lie in 1..=256"
        )));
    }
    let orders = prototype
        .first_black()
        .iter()
        .map(|&f| quantize_order(f, classes))
        .collect();
    ClassTiling::new(prototype.size(), rows, cols, orders)
}

/// Periodic baseline: the class matrix repeated across a `size × size` tile.
pub fn tiled_cm_ct(cm: &ClassMatrix, size: usize) -> Result<ClassTiling> {
    if size == 0 || size % cm.rows() != 0 || size % cm.cols() != 0 {
        return Err(Error::InvalidArgument(format!(
            "tile side {size} is not a multiple of the {}x{} class matrix",
            cm.rows(),
            cm.cols()
        )));
    }
    let orders = (0..size)
        .flat_map(|r| (0..size).map(move |c| cm.at(r, c)))
        .collect();
    ClassTiling::new(size, cm.rows(), cm.cols(), orders)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidateOptions {
    pub window: usize,
    pub segments: usize,
    pub seed: u64,
    pub threshold_factor: f64,
}

impl Default for ValidateOptions {
    fn default() -> Self {
        Self {
            window: 128,
            segments: 50,
            seed: 0,
            threshold_factor: 20.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CtReport {
    pub counts: Vec<usize>,
    pub min_count: usize,
    pub max_count: usize,
    /// Impulses per order, only for orders that have any.
    pub impulses: Vec<(u16, Vec<Impulse>)>,
}

impl CtReport {
    pub fn offending_orders(&self) -> Vec<u16> {
        self.impulses.iter().map(|(o, _)| *o).collect()
    }
}

/// Per-order counts plus an impulse scan of each order's indicator spectrum.
///
/// Indicators are sampled from the periodic extension (at least twice the window)
/// with the randomized estimator.
pub fn validate_ct(ct: &ClassTiling, opts: &ValidateOptions) -> Result<CtReport> {
    let counts = ct.counts();
    let extent = (2 * opts.window).max(ct.size());
    let mut impulses = Vec::new();
    for order in 0..ct.num_classes() as u16 {
        if counts[order as usize] == 0 {
            continue;
        }
        let ind = ct.indicator(order, extent, extent);
        let apsd = spectrum::randomized_apsd(
            &ind,
            opts.window,
            opts.window,
            opts.segments,
            opts.seed.wrapping_add(order as u64),
        )?;
        let found = spectrum::detect_impulses(&apsd, opts.threshold_factor);
        if !found.is_empty() {
            impulses.push((order, found));
        }
    }
    Ok(CtReport {
        min_count: counts.iter().copied().min().unwrap_or(0),
        max_count: counts.iter().copied().max().unwrap_or(0),
        counts,
        impulses,
    })
}

/// Smallest toroidal distance between two sites of `{c = order}`.
pub fn min_same_order_distance(ct: &ClassTiling, order: u16) -> f64 {
    let n = ct.size();
    let sites: Vec<(usize, usize)> = (0..n * n)
        .filter(|&i| ct.orders[i] == order)
        .map(|i| (i / n, i % n))
        .collect();
    let mut best = f64::INFINITY;
    for (i, &(r, c)) in sites.iter().enumerate() {
        for &(r2, c2) in &sites[i + 1..] {
            let dy = r.abs_diff(r2).min(n - r.abs_diff(r2)) as f64;
            let dx = c.abs_diff(c2).min(n - c.abs_diff(c2)) as f64;
            best = best.min((dy * dy + dx * dx).sqrt());
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn wavelength_branches() {
        assert!((ideal_wavelength(1.0 / 255.0).unwrap() - 15.97).abs() < 0.01);
        assert_eq!(ideal_wavelength(0.5).unwrap(), 2.0);
        assert_eq!(ideal_wavelength(0.25).unwrap(), 2.0);
        assert_eq!(ideal_wavelength(0.7499).unwrap(), 2.0);
        assert!((ideal_wavelength(0.75).unwrap() - 2.0).abs() < 1e-12);
        assert!((ideal_wavelength(254.0 / 255.0).unwrap() - 15.97).abs() < 0.01);
        assert!(matches!(ideal_wavelength(0.0), Err(Error::SingularWavelength(_))));
        assert!(ideal_wavelength(1.0).is_err());
    }

    #[test]
    fn quantization_examples() {
        assert_eq!(quantize_order(0, 64), 0);
        assert_eq!(quantize_order(255, 64), 63);
        assert_eq!(quantize_order(4, 64), 1);
        let stack = MaskStack::new(64, vec![7; 64 * 64]).unwrap();
        assert!(quantize_prototype(&stack, 16, 17).is_err());
        let ct = quantize_prototype(&stack, 8, 8).unwrap();
        assert!(ct.orders().iter().all(|&o| o == 1));
    }

    #[test]
    fn bayer_is_permutation() {
        let b = ClassMatrix::bayer(8).unwrap();
        let mut seen: Vec<u16> = (0..8).flat_map(|r| (0..8).map(move |c| (r, c))).map(|(r, c)| b.at(r, c)).collect();
        seen.sort();
        assert_eq!(seen, (0..64).collect::<Vec<u16>>());
        assert_eq!(ClassMatrix::bayer(2).unwrap().orders, vec![0, 2, 3, 1]);
        assert!(ClassMatrix::new(2, 2, vec![0, 1, 1, 3]).is_err());
    }

    #[test]
    fn tiled_baseline() {
        let ct = tiled_cm_ct(&ClassMatrix::bayer(8).unwrap(), 256).unwrap();
        assert_eq!(ct.at(0, 0), ct.at(8, 0));
        assert_eq!(ct.at(0, 0), ct.at(0, 8));
        assert!(ct.counts().iter().all(|&c| c == 1024));
        // Indicator of {c = 0} repeats with period exactly 8 on both axes.
        let ind = ct.indicator(0, 256, 256);
        for r in 0..248 {
            for c in 0..248 {
                assert_eq!(ind.get(r, c), ind.get(r + 8, c));
                assert_eq!(ind.get(r, c), ind.get(r, c + 8));
            }
        }
        assert!(ind.data()[..8].iter().filter(|&&v| v == 0).count() <= 1);
        assert!(tiled_cm_ct(&ClassMatrix::bayer(8).unwrap(), 100).is_err());
        assert_eq!(min_same_order_distance(&ct, 0), 8.0);
    }

    #[test]
    fn tiled_indicator_impulses_on_lattice() {
        let ct = tiled_cm_ct(&ClassMatrix::bayer(8).unwrap(), 256).unwrap();
        let report = validate_ct(&ct, &ValidateOptions::default()).unwrap();
        assert_eq!(report.offending_orders().len(), 64);
        for (_, flags) in &report.impulses {
            for imp in flags {
                assert_eq!(imp.row % 16, 0);
                assert_eq!(imp.col % 16, 0);
            }
            assert_eq!(flags.len(), 63);
        }
    }

    #[test]
    fn ct_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ct = tiled_cm_ct(&ClassMatrix::bayer(4).unwrap(), 16).unwrap();
        let path = dir.path().join("ct.pgm");
        ct.save(&path).unwrap();
        let meta = fs::read_to_string(dir.path().join("ct.pgm.meta")).unwrap();
        assert_eq!(meta, "CM 4 4\n");
        assert_eq!(ClassTiling::load(&path).unwrap(), ct);
    }

    proptest! {
        #[test]
        fn quantization_monotone_and_in_range(a in any::<u8>(), b in any::<u8>(), classes in 1usize..=256) {
            let (lo, hi) = (a.min(b), a.max(b));
            prop_assert!(quantize_order(lo, classes) <= quantize_order(hi, classes));
            prop_assert!((quantize_order(hi, classes) as usize) < classes);
        }
    }
}
