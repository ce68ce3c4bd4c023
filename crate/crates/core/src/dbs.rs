//! Dual-metric direct binary search (DMDBS).
//!
//! The error metric is `E = w1 * E1 + w2 * E2`, each term the HVS-filtered squared
//! error under one Näsänen autocorrelation model. Because the metric is a quadratic
//! form in the error image, the sum collapses to a single combined kernel, which is
//! what the search state carries.
//!
//! Two drivers share the state: [`dmdbs_halftone`] runs the classic toggle + 3×3
//! swap search on an arbitrary image, and [`MaskBuilder`] designs the stacked mask
//! family level by level (count-preserving swaps only), recording for each site the
//! level at which it first turns black.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hvs::{self, HvsKernel, NasanenParams};
use crate::image::{constant_patch, BinaryImage, GrayImage};
use crate::pnm;

/// Moves must lower the cost by more than this to be accepted.
pub const MOVE_EPS: f64 = 1e-12;

const SPOT_CHECK_INTERVAL: usize = 1000;
const SPOT_CHECK_MAX_PIXELS: usize = 128 * 128;

#[derive(Debug, Clone, PartialEq)]
pub struct DbsConfig {
    pub model1: NasanenParams,
    pub model2: NasanenParams,
    /// Weights of the two metrics.
    pub weights: [f64; 2],
    pub truncation: f64,
    pub wraparound: bool,
    pub seed: u64,
    pub max_sweeps: usize,
    /// Scale multiplier used by [`dmdbs_halftone`].
    pub scale_multiplier: u32,
    /// Use the doubled scale for extreme tones (see [`is_extreme_tone`]).
    pub scale_switch: bool,
    /// Black-dot count per mask level; `None` selects [`default_counts`].
    pub target_counts: Option<Vec<usize>>,
}

impl Default for DbsConfig {
    fn default() -> Self {
        Self {
            model1: NasanenParams::model1(hvs::DEFAULT_SCALE),
            model2: NasanenParams::model2(hvs::DEFAULT_SCALE),
            weights: [1.0, 1.0],
            truncation: hvs::DEFAULT_TRUNCATION,
            wraparound: true,
            seed: 0,
            max_sweeps: 200,
            scale_multiplier: 1,
            scale_switch: true,
            target_counts: None,
        }
    }
}

impl DbsConfig {
    pub fn with_scale(mut self, scale: f64) -> Self {
        self.model1.scale = scale;
        self.model2.scale = scale;
        self
    }

    /// Combined dual-metric autocorrelation at the given scale multiplier.
    pub fn kernel(&self, scale_multiplier: u32) -> Result<HvsKernel> {
        let k1 = hvs::nasanen_autocorr(&self.model1, scale_multiplier, self.truncation)?;
        let k2 = hvs::nasanen_autocorr(&self.model2, scale_multiplier, self.truncation)?;
        Ok(HvsKernel::combine(&k1, self.weights[0], &k2, self.weights[1]))
    }

    fn multiplier_for(&self, level: u8) -> u32 {
        if self.scale_switch && is_extreme_tone(level) {
            2
        } else {
            1
        }
    }
}

/// Tones rendered with the doubled HVS scale: `0..=3` and `252..=255`.
pub fn is_extreme_tone(level: u8) -> bool {
    level <= 3 || level >= 252
}

/// `B_g = round(g * pixels / 255)`.
pub fn default_counts(pixels: usize) -> Vec<usize> {
    (0..=255u64)
        .map(|g| ((g * pixels as u64) as f64 / 255.0).round() as usize)
        .collect()
}

/// Autocorrelation laid out for a `width × height` search domain.
///
/// With wrap-around, axes shorter than the kernel are folded so every torus offset
/// appears once.
#[derive(Debug, Clone)]
pub struct DomainKernel {
    width: usize,
    height: usize,
    wrap: bool,
    lo_y: isize,
    lo_x: isize,
    len_y: usize,
    len_x: usize,
    vals: Vec<f64>,
}

impl DomainKernel {
    pub fn new(kernel: &HvsKernel, width: usize, height: usize, wrap: bool) -> Self {
        let r = kernel.radius() as isize;
        let axis = |n: usize| -> (isize, usize) {
            if wrap && (2 * r + 1) as usize > n {
                (-((n as isize - 1) / 2), n)
            } else {
                (-r, (2 * r + 1) as usize)
            }
        };
        let (lo_y, len_y) = axis(height);
        let (lo_x, len_x) = axis(width);
        let mut vals = vec![0.0; len_y * len_x];
        for dm in -r..=r {
            for dn in -r..=r {
                let iy = (dm - lo_y).rem_euclid(if wrap { height as isize } else { isize::MAX });
                let ix = (dn - lo_x).rem_euclid(if wrap { width as isize } else { isize::MAX });
                if (iy as usize) < len_y && (ix as usize) < len_x {
                    vals[iy as usize * len_x + ix as usize] += kernel.at(dm, dn);
                }
            }
        }
        Self {
            width,
            height,
            wrap,
            lo_y,
            lo_x,
            len_y,
            len_x,
            vals,
        }
    }

    pub fn peak(&self) -> f64 {
        self.between(0, 0)
    }

    /// Kernel value for the displacement from pixel `a` to pixel `b`.
    pub fn between(&self, a: usize, b: usize) -> f64 {
        let (ay, ax) = ((a / self.width) as isize, (a % self.width) as isize);
        let (by, bx) = ((b / self.width) as isize, (b % self.width) as isize);
        self.offset(by - ay, bx - ax)
    }

    fn offset(&self, dy: isize, dx: isize) -> f64 {
        let (dy, dx) = if self.wrap {
            (
                centered(dy, self.height),
                centered(dx, self.width),
            )
        } else {
            (dy, dx)
        };
        let iy = dy - self.lo_y;
        let ix = dx - self.lo_x;
        if iy < 0 || ix < 0 || iy as usize >= self.len_y || ix as usize >= self.len_x {
            return 0.0;
        }
        self.vals[iy as usize * self.len_x + ix as usize]
    }

    /// Adds `amount * c(q - p)` to `field[q]` for every `q` in the support around `p`.
    fn splat(&self, field: &mut [f64], p: usize, amount: f64) {
        let (w, h) = (self.width as isize, self.height as isize);
        let (py, px) = ((p / self.width) as isize, (p % self.width) as isize);
        for iy in 0..self.len_y {
            let mut qy = py + self.lo_y + iy as isize;
            if self.wrap {
                qy = qy.rem_euclid(h);
            } else if qy < 0 || qy >= h {
                continue;
            }
            let row = &self.vals[iy * self.len_x..(iy + 1) * self.len_x];
            let base = qy as usize * self.width;
            let x0 = px + self.lo_x;
            if !self.wrap || (x0 >= 0 && x0 + self.len_x as isize <= w) {
                // Contiguous span (clipped when not wrapping).
                let start = x0.max(0);
                let end = (x0 + self.len_x as isize).min(w);
                if start >= end {
                    continue;
                }
                let dst = &mut field[base + start as usize..base + end as usize];
                let src = &row[(start - x0) as usize..(end - x0) as usize];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += amount * s;
                }
            } else {
                for (ix, s) in row.iter().enumerate() {
                    let qx = (x0 + ix as isize).rem_euclid(w) as usize;
                    field[base + qx] += amount * s;
                }
            }
        }
    }

    /// Pixels within the support around `p` (each once), in row-major span order.
    fn neighborhood(&self, p: usize, out: &mut Vec<usize>) {
        out.clear();
        let (w, h) = (self.width as isize, self.height as isize);
        let (py, px) = ((p / self.width) as isize, (p % self.width) as isize);
        for iy in 0..self.len_y {
            let mut qy = py + self.lo_y + iy as isize;
            if self.wrap {
                qy = qy.rem_euclid(h);
            } else if qy < 0 || qy >= h {
                continue;
            }
            for ix in 0..self.len_x {
                let mut qx = px + self.lo_x + ix as isize;
                if self.wrap {
                    qx = qx.rem_euclid(w);
                } else if qx < 0 || qx >= w {
                    continue;
                }
                out.push(qy as usize * self.width + qx as usize);
            }
        }
    }
}

fn centered(d: isize, n: usize) -> isize {
    let n = n as isize;
    let half = (n - 1) / 2;
    (d + half).rem_euclid(n) - half
}

/// Incremental DBS state: ink map, target absorptance and the cross-correlation
/// `cep = c * e` between kernel and error `e = ink - target`.
#[derive(Debug, Clone)]
pub struct DbsState {
    kernel: DomainKernel,
    ink: Vec<bool>,
    target: Vec<f64>,
    cep: Vec<f64>,
}

impl DbsState {
    pub fn new(kernel: DomainKernel, ink: Vec<bool>, target: Vec<f64>) -> Self {
        let mut state = Self {
            kernel,
            cep: vec![0.0; ink.len()],
            ink,
            target,
        };
        state.recompute();
        state
    }

    pub fn recompute(&mut self) {
        let mut cep = vec![0.0; self.ink.len()];
        for p in 0..self.ink.len() {
            let e = self.error(p);
            if e != 0.0 {
                self.kernel.splat(&mut cep, p, e);
            }
        }
        self.cep = cep;
    }

    pub fn error(&self, p: usize) -> f64 {
        (self.ink[p] as u8 as f64) - self.target[p]
    }

    pub fn ink(&self) -> &[bool] {
        &self.ink
    }

    pub fn cost(&self) -> f64 {
        (0..self.ink.len()).map(|p| self.error(p) * self.cep[p]).sum()
    }

    fn change(&self, p: usize) -> f64 {
        if self.ink[p] {
            -1.0
        } else {
            1.0
        }
    }

    pub fn toggle_delta(&self, p: usize) -> f64 {
        let a = self.change(p);
        a * a * self.kernel.peak() + 2.0 * a * self.cep[p]
    }

    /// Cost change of exchanging the values at `p` and `q` (which must differ).
    pub fn swap_delta(&self, p: usize, q: usize) -> f64 {
        debug_assert_ne!(self.ink[p], self.ink[q]);
        let a0 = self.change(p);
        let a1 = -a0;
        2.0 * self.kernel.peak()
            + 2.0 * a0 * a1 * self.kernel.between(p, q)
            + 2.0 * a0 * self.cep[p]
            + 2.0 * a1 * self.cep[q]
    }

    pub fn toggle(&mut self, p: usize) {
        let a = self.change(p);
        self.ink[p] = !self.ink[p];
        self.kernel.splat(&mut self.cep, p, a);
    }

    pub fn swap(&mut self, p: usize, q: usize) {
        self.toggle(p);
        self.toggle(q);
    }

    fn set_target(&mut self, target: Vec<f64>) {
        self.target = target;
        self.recompute();
    }

    fn set_kernel(&mut self, kernel: DomainKernel) {
        self.kernel = kernel;
        self.recompute();
    }

    fn spot_check(&self, running_cost: f64) {
        let mut fresh = self.clone();
        fresh.recompute();
        let exact = fresh.cost();
        let scale = exact.abs().max(self.kernel.peak());
        assert!(
            (exact - running_cost).abs() <= 1e-6 * scale,
            "incremental DBS cost {running_cost} drifted from exact {exact}"
        );
    }
}

/// Outcome of a DBS search.
#[derive(Debug, Clone)]
pub struct DbsRun {
    pub image: BinaryImage,
    pub cost: f64,
    pub sweeps: usize,
    pub accepted: usize,
    /// Cost after initialization, then after every sweep that accepted a move.
    pub cost_history: Vec<f64>,
}

fn ink_target(x: &GrayImage) -> Vec<f64> {
    x.data().iter().map(|&v| 1.0 - v as f64 / 255.0).collect()
}

/// Seeded random initialization: each site is inked with probability equal to its
/// target absorptance.
pub fn random_init(target: &[f64], seed: u64) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    target.iter().map(|&t| rng.gen::<f64>() < t).collect()
}

/// Toggle + 3×3 swap search from `initial` until a full serpentine sweep accepts
/// nothing (or `max_sweeps` is reached).
pub fn dmdbs_refine(
    x: &GrayImage,
    initial: Vec<bool>,
    kernel: &HvsKernel,
    wraparound: bool,
    max_sweeps: usize,
) -> Result<DbsRun> {
    let (w, h) = (x.width(), x.height());
    if initial.len() != w * h {
        return Err(Error::DimensionMismatch(format!(
            "initial pattern has {} sites for a {w}x{h} image",
            initial.len()
        )));
    }
    let domain = DomainKernel::new(kernel, w, h, wraparound);
    let mut state = DbsState::new(domain, initial, ink_target(x));
    let mut cost = state.cost();
    let mut history = vec![cost];
    let mut accepted = 0usize;
    let mut sweeps = 0usize;
    let spot_checks = cfg!(debug_assertions) && w * h <= SPOT_CHECK_MAX_PIXELS;

    while sweeps < max_sweeps {
        sweeps += 1;
        let mut accepted_this_sweep = 0usize;
        for row in 0..h {
            for step in 0..w {
                let col = if row % 2 == 0 { step } else { w - 1 - step };
                let p = row * w + col;
                // Candidates in (delta, partner index) form; the toggle uses p itself.
                let mut best = (state.toggle_delta(p), p);
                for dy in -1isize..=1 {
                    for dx in -1isize..=1 {
                        if dy == 0 && dx == 0 {
                            continue;
                        }
                        let q = match neighbor(row, col, dy, dx, w, h, wraparound) {
                            Some(q) => q,
                            None => continue,
                        };
                        if state.ink[q] == state.ink[p] {
                            continue;
                        }
                        let d = state.swap_delta(p, q);
                        if d < best.0 || (d == best.0 && q < best.1) {
                            best = (d, q);
                        }
                    }
                }
                let (delta, q) = best;
                if delta < -MOVE_EPS {
                    if q == p {
                        state.toggle(p);
                    } else {
                        state.swap(p, q);
                    }
                    debug_assert!(cost + delta < cost, "DBS cost must strictly decrease");
                    cost += delta;
                    accepted += 1;
                    accepted_this_sweep += 1;
                    if spot_checks && accepted % SPOT_CHECK_INTERVAL == 0 {
                        state.spot_check(cost);
                    }
                }
            }
        }
        if accepted_this_sweep == 0 {
            break;
        }
        history.push(cost);
    }

    let image = BinaryImage::from_ink(w, h, state.ink.iter().copied());
    Ok(DbsRun {
        image,
        cost: state.cost(),
        sweeps,
        accepted,
        cost_history: history,
    })
}

fn neighbor(
    row: usize,
    col: usize,
    dy: isize,
    dx: isize,
    w: usize,
    h: usize,
    wrap: bool,
) -> Option<usize> {
    let (mut r, mut c) = (row as isize + dy, col as isize + dx);
    if wrap {
        r = r.rem_euclid(h as isize);
        c = c.rem_euclid(w as isize);
    } else if r < 0 || c < 0 || r >= h as isize || c >= w as isize {
        return None;
    }
    Some(r as usize * w + c as usize)
}

/// DMDBS halftone of `x` from a seeded random start, at `cfg.scale_multiplier`.
pub fn dmdbs_run(x: &GrayImage, cfg: &DbsConfig) -> Result<DbsRun> {
    let kernel = cfg.kernel(cfg.scale_multiplier)?;
    let initial = random_init(&ink_target(x), cfg.seed);
    dmdbs_refine(x, initial, &kernel, cfg.wraparound, cfg.max_sweeps)
}

pub fn dmdbs_halftone(x: &GrayImage, cfg: &DbsConfig) -> Result<BinaryImage> {
    Ok(dmdbs_run(x, cfg)?.image)
}

/// Full dual-metric cost of halftone `y` against `x` under `cfg`'s models.
pub fn dbs_cost(x: &GrayImage, y: &BinaryImage, cfg: &DbsConfig) -> Result<f64> {
    let kernel = cfg.kernel(cfg.scale_multiplier)?;
    let domain = DomainKernel::new(&kernel, x.width(), x.height(), cfg.wraparound);
    let ink = y.data().iter().map(|&v| v == 0).collect();
    Ok(DbsState::new(domain, ink, ink_target(x)).cost())
}

/// Blue-noise reference pattern for constant gray level `level`, always designed on
/// the torus. The doubled scale is used for extreme tones when `cfg.scale_switch`.
pub fn groundtruth_pattern(level: u8, size: usize, cfg: &DbsConfig) -> Result<BinaryImage> {
    let mut cfg = cfg.clone();
    cfg.wraparound = true;
    cfg.scale_multiplier = cfg.multiplier_for(level);
    dmdbs_halftone(&constant_patch(level, size, size), &cfg)
}

pub fn groundtruth_path(gt_dir: &Path, level: u8, size: usize, seed: u64) -> PathBuf {
    gt_dir
        .join(size.to_string())
        .join(seed.to_string())
        .join(format!("{level}.pbm"))
}

/// [`groundtruth_pattern`] memoized under `gt_dir/<size>/<seed>/<level>.pbm`.
pub fn groundtruth_cached(
    level: u8,
    size: usize,
    cfg: &DbsConfig,
    gt_dir: &Path,
) -> Result<BinaryImage> {
    let path = groundtruth_path(gt_dir, level, size, cfg.seed);
    if path.exists() {
        let img = pnm::load_pbm(&path)?;
        if img.width() == size && img.height() == size {
            return Ok(img);
        }
    }
    let img = groundtruth_pattern(level, size, cfg)?;
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    pnm::save_pbm(&img, &path)?;
    Ok(img)
}

/// Stacked mask family encoded by the level at which each site first turns black.
///
/// Mask `I_g` has an ink dot exactly where `first_black <= g`, so the stacking
/// constraint holds by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskStack {
    size: usize,
    first_black: Vec<u8>,
}

impl MaskStack {
    pub fn new(size: usize, first_black: Vec<u8>) -> Result<Self> {
        if first_black.len() != size * size {
            return Err(Error::DimensionMismatch(format!(
                "mask stack of side {size} needs {} entries, got {}",
                size * size,
                first_black.len()
            )));
        }
        Ok(Self { size, first_black })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn first_black(&self) -> &[u8] {
        &self.first_black
    }

    pub fn at(&self, row: usize, col: usize) -> u8 {
        self.first_black[(row % self.size) * self.size + col % self.size]
    }

    pub fn is_ink(&self, level: u8, row: usize, col: usize) -> bool {
        self.at(row, col) <= level
    }

    pub fn mask(&self, level: u8) -> BinaryImage {
        BinaryImage::from_ink(
            self.size,
            self.size,
            self.first_black.iter().map(|&f| f <= level),
        )
    }

    pub fn black_count(&self, level: u8) -> usize {
        self.first_black.iter().filter(|&&f| f <= level).count()
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage::new(self.size, self.size, self.first_black.clone()).expect("square stack")
    }

    pub fn from_gray(img: &GrayImage) -> Result<Self> {
        if img.width() != img.height() {
            return Err(Error::DimensionMismatch(format!(
                "prototype must be square, got {}x{}",
                img.width(),
                img.height()
            )));
        }
        Self::new(img.width(), img.data().to_vec())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        pnm::save_pgm(&self.to_gray(), path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_gray(&pnm::load_pgm(path)?)
    }
}

/// Level-by-level mask designer.
pub struct MaskBuilder {
    size: usize,
    counts: Vec<usize>,
    cfg: DbsConfig,
    kernels: [DomainKernel; 2],
    state: DbsState,
    first_black: Vec<u8>,
    level: u8,
    current_multiplier: u32,
    rng: ChaCha8Rng,
    scratch: Vec<usize>,
}

impl MaskBuilder {
    pub fn new(size: usize, cfg: &DbsConfig) -> Result<Self> {
        if size == 0 {
            return Err(Error::InvalidArgument("mask size must be positive".into()));
        }
        let n = size * size;
        let counts = cfg.target_counts.clone().unwrap_or_else(|| default_counts(n));
        validate_counts(&counts, n)?;
        let k1 = DomainKernel::new(&cfg.kernel(1)?, size, size, cfg.wraparound);
        let k2 = DomainKernel::new(&cfg.kernel(2)?, size, size, cfg.wraparound);
        let current_multiplier = cfg.multiplier_for(1);
        let start = if current_multiplier == 2 { k2.clone() } else { k1.clone() };
        let state = DbsState::new(start, vec![false; n], vec![0.0; n]);
        Ok(Self {
            size,
            counts,
            cfg: cfg.clone(),
            kernels: [k1, k2],
            state,
            first_black: vec![0; n],
            level: 0,
            current_multiplier,
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            scratch: Vec::new(),
        })
    }

    pub fn level(&self) -> u8 {
        self.level
    }

    /// Current mask `I_level`.
    pub fn mask(&self) -> BinaryImage {
        BinaryImage::from_ink(self.size, self.size, self.state.ink.iter().copied())
    }

    /// Designs the next level; returns the level just completed.
    pub fn next_level(&mut self) -> Result<u8> {
        if self.level == 255 {
            return Err(Error::InvalidArgument("all 255 levels already designed".into()));
        }
        let g = self.level + 1;
        let n = self.size * self.size;
        let multiplier = self.cfg.multiplier_for(g);
        if multiplier != self.current_multiplier {
            self.state
                .set_kernel(self.kernels[(multiplier - 1) as usize].clone());
            self.current_multiplier = multiplier;
        }
        self.state.set_target(vec![g as f64 / 255.0; n]);

        let fresh = self.counts[g as usize] - self.counts[g as usize - 1];
        let mut placed = Vec::with_capacity(fresh);
        for _ in 0..fresh {
            let p = self.largest_void();
            self.state.toggle(p);
            self.first_black[p] = g;
            placed.push(p);
        }
        self.refine_level(g, &mut placed);
        self.level = g;
        Ok(g)
    }

    /// White site with the lowest filtered dot density; near-ties are broken by the
    /// seeded RNG.
    fn largest_void(&mut self) -> usize {
        let cep = &self.state.cep;
        let ink = &self.state.ink;
        let mut min = f64::INFINITY;
        for (p, &v) in cep.iter().enumerate() {
            if !ink[p] && v < min {
                min = v;
            }
        }
        let tol = 1e-9 * self.state.kernel.peak();
        self.scratch.clear();
        for (p, &v) in cep.iter().enumerate() {
            if !ink[p] && v <= min + tol {
                self.scratch.push(p);
            }
        }
        self.scratch[self.rng.gen_range(0..self.scratch.len())]
    }

    /// Swap-only refinement of this level's new dots against all white sites.
    fn refine_level(&mut self, g: u8, placed: &mut [usize]) {
        let mut window = Vec::new();
        for _ in 0..self.cfg.max_sweeps {
            let mut moved = 0usize;
            for slot in 0..placed.len() {
                let p = placed[slot];
                if let Some(q) = self.best_relocation(p, &mut window) {
                    self.state.swap(p, q);
                    self.first_black[p] = 0;
                    self.first_black[q] = g;
                    placed[slot] = q;
                    moved += 1;
                }
            }
            if moved == 0 {
                break;
            }
        }
    }

    /// Best white destination for the dot at `p`, if moving it lowers the cost.
    fn best_relocation(&self, p: usize, window: &mut Vec<usize>) -> Option<usize> {
        let state = &self.state;
        // Moving the dot from p to q changes the cost by 2 c0 + 2 (cep[q] - c(q-p) - cep[p]).
        let mut best: Option<(f64, usize)> = None;
        let mut consider = |q: usize, value: f64| match best {
            Some((v, i)) if value > v || (value == v && q >= i) => {}
            _ => best = Some((value, q)),
        };
        state.kernel.neighborhood(p, window);
        for &q in window.iter() {
            if !state.ink[q] {
                consider(q, state.cep[q] - state.kernel.between(p, q));
            }
        }
        let mut far: Option<(f64, usize)> = None;
        for (q, &v) in state.cep.iter().enumerate() {
            if !state.ink[q] && far.map_or(true, |(fv, _)| v < fv) {
                far = Some((v, q));
            }
        }
        if let Some((_, q)) = far {
            consider(q, state.cep[q] - state.kernel.between(p, q));
        }
        let (value, q) = best?;
        let delta = 2.0 * state.kernel.peak() + 2.0 * (value - state.cep[p]);
        (delta < -MOVE_EPS).then_some(q)
    }

    pub fn finish(mut self) -> Result<MaskStack> {
        while self.level < 255 {
            self.next_level()?;
        }
        MaskStack::new(self.size, self.first_black)
    }
}

fn validate_counts(counts: &[usize], pixels: usize) -> Result<()> {
    if counts.len() != 256 {
        return Err(Error::InvalidArgument(format!(
            "target counts need 256 levels, got {}",
            counts.len()
        )));
    }
    if counts[0] != 0 || counts[255] != pixels {
        return Err(Error::InvalidArgument(format!(
            "target counts must run from 0 to {pixels}, got {}..{}",
            counts[0], counts[255]
        )));
    }
    for g in 1..256 {
        if counts[g] < counts[g - 1] {
            return Err(Error::InfeasibleCounts {
                level: g,
                prev: g - 1,
                count: counts[g],
            });
        }
    }
    Ok(())
}

/// Designs all 255 stacked masks on a `size × size` tile.
pub fn build_mask_stack(size: usize, cfg: &DbsConfig) -> Result<MaskStack> {
    if size < 64 {
        return Err(Error::InvalidArgument(format!(
            "mask stack size must be at least 64, got {size}"
        )));
    }
    MaskBuilder::new(size, cfg)?.finish()
}

/// Toroidal nearest-neighbor distances between the ink dots of `img`.
pub fn nearest_neighbor_distances(img: &BinaryImage) -> Vec<f64> {
    let (w, h) = (img.width(), img.height());
    let dots: Vec<(usize, usize)> = (0..h)
        .flat_map(|r| (0..w).map(move |c| (r, c)))
        .filter(|&(r, c)| img.is_ink(r, c))
        .collect();
    dots.iter()
        .enumerate()
        .map(|(i, &(r, c))| {
            dots.iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &(r2, c2))| {
                    let dy = r.abs_diff(r2).min(h - r.abs_diff(r2)) as f64;
                    let dx = c.abs_diff(c2).min(w - c.abs_diff(c2)) as f64;
                    (dy * dy + dx * dx).sqrt()
                })
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}
