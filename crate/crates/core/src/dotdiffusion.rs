//! Class-ordered error diffusion.
//!
//! Pixels are finalized one class at a time. A pixel's quantization error is
//! split among its 3×3 neighbors of strictly higher class that lie inside the
//! image, in proportion to the diffused-matrix weights. The engine evaluates
//! this as a gather: when class `k` runs, each of its pixels sums the shares
//! sent by already-finalized neighbors, so pixels of one class never touch
//! each other and may run on any number of threads.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::classtiling::{quantize_order, ClassMatrix, ClassTiling};
use crate::dbs::MaskStack;
use crate::error::{Error, Result};
use crate::image::{BinaryImage, GrayImage};

/// Tone rows stored in a table; tones above mirror onto `255 - g`.
pub const TABLE_TONES: usize = 128;
pub const TABLE_ORDERS: usize = 256;

/// Neighbor offsets in gather slot order.
const OFFSETS: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// 3×3 weights: `alpha` on the diagonals, `beta` on the orthogonals, zero center.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiffusedMatrix {
    pub alpha: f64,
    pub beta: f64,
}

impl DiffusedMatrix {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        if !(alpha >= 0.0 && beta >= 0.0 && alpha.is_finite() && beta.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "diffused matrix weights must be finite and nonnegative, got ({alpha}, {beta})"
            )));
        }
        Ok(Self { alpha, beta })
    }

    pub fn weight(&self, dy: isize, dx: isize) -> f64 {
        match (dy.abs(), dx.abs()) {
            (0, 0) => 0.0,
            (1, 1) => self.alpha,
            (0, 1) | (1, 0) => self.beta,
            _ => 0.0,
        }
    }
}

/// One table cell: diffusion weights and threshold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Entry {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Entry {
    pub fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        Self { alpha, beta, gamma }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.alpha.is_finite()
            && self.beta.is_finite()
            && self.alpha >= 0.0
            && self.beta >= 0.0
            && (0.0..=255.0).contains(&self.gamma);
        if ok {
            Ok(())
        } else {
            Err(Error::Table(format!(
                "entry ({}, {}, {}) needs alpha, beta >= 0 and gamma in [0, 255]",
                self.alpha, self.beta, self.gamma
            )))
        }
    }

    pub fn matrix(&self) -> DiffusedMatrix {
        DiffusedMatrix {
            alpha: self.alpha,
            beta: self.beta,
        }
    }
}

/// `(alpha, beta, gamma)` for every tone row `g < 128` and prototype value `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterTable {
    entries: Vec<Entry>,
}

impl ParameterTable {
    /// Every cell set to `entry`.
    pub fn uniform(entry: Entry) -> Result<Self> {
        entry.validate()?;
        Ok(Self {
            entries: vec![entry; TABLE_TONES * TABLE_ORDERS],
        })
    }

    /// Thresholding only: `alpha = beta = 0`, `gamma = f`.
    pub fn ordered_dither() -> Self {
        let entries = (0..TABLE_TONES * TABLE_ORDERS)
            .map(|i| Entry::new(0.0, 0.0, (i % TABLE_ORDERS) as f64))
            .collect();
        Self { entries }
    }

    pub fn from_fn(mut f: impl FnMut(u8, u8) -> Entry) -> Result<Self> {
        let mut entries = Vec::with_capacity(TABLE_TONES * TABLE_ORDERS);
        for g in 0..TABLE_TONES {
            for o in 0..TABLE_ORDERS {
                let e = f(g as u8, o as u8);
                e.validate()?;
                entries.push(e);
            }
        }
        Ok(Self { entries })
    }

    fn index(g: u8, f: u8) -> usize {
        debug_assert!((g as usize) < TABLE_TONES);
        g as usize * TABLE_ORDERS + f as usize
    }

    /// Stored cell for row `g < 128`.
    pub fn get(&self, g: u8, f: u8) -> Entry {
        self.entries[Self::index(g, f)]
    }

    pub fn set(&mut self, g: u8, f: u8, entry: Entry) -> Result<()> {
        if g as usize >= TABLE_TONES {
            return Err(Error::Table(format!("tone row {g} is outside 0..128")));
        }
        entry.validate()?;
        self.entries[Self::index(g, f)] = entry;
        Ok(())
    }

    /// Cell applied to an input pixel of tone `x`: row `x`, or row `255 - x` for
    /// `x >= 128`, with the threshold optionally reflected as `255 - gamma`.
    pub fn lookup(&self, x: u8, f: u8, mirror_gamma: bool) -> Entry {
        if (x as usize) < TABLE_TONES {
            self.get(x, f)
        } else {
            let mut e = self.get(255 - x, f);
            if mirror_gamma {
                e.gamma = 255.0 - e.gamma;
            }
            e
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("g,f,alpha,beta,gamma\n");
        for g in 0..TABLE_TONES {
            for f in 0..TABLE_ORDERS {
                let e = self.entries[g * TABLE_ORDERS + f];
                writeln!(out, "{g},{f},{},{},{}", e.alpha, e.beta, e.gamma).unwrap();
            }
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next().map(str::trim) {
            Some("g,f,alpha,beta,gamma") => {}
            other => {
                return Err(Error::Table(format!(
                    "expected header `g,f,alpha,beta,gamma`, found {other:?}"
                )))
            }
        }
        let mut slots: Vec<Option<Entry>> = vec![None; TABLE_TONES * TABLE_ORDERS];
        for (n, line) in lines.enumerate() {
            let bad = || Error::Table(format!("row {}: cannot parse `{line}`", n + 2));
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 5 {
                return Err(bad());
            }
            let g: usize = fields[0].parse().map_err(|_| bad())?;
            let f: usize = fields[1].parse().map_err(|_| bad())?;
            let vals: Vec<f64> = fields[2..]
                .iter()
                .map(|s| s.parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| bad())?;
            if g >= TABLE_TONES || f >= TABLE_ORDERS {
                return Err(Error::Table(format!("row {}: cell ({g}, {f}) out of range", n + 2)));
            }
            let entry = Entry::new(vals[0], vals[1], vals[2]);
            entry.validate()?;
            let slot = &mut slots[g * TABLE_ORDERS + f];
            if slot.is_some() {
                return Err(Error::Table(format!("duplicate cell ({g}, {f})")));
            }
            *slot = Some(entry);
        }
        let entries = slots
            .into_iter()
            .enumerate()
            .map(|(i, e)| {
                e.ok_or_else(|| {
                    Error::Table(format!(
                        "missing cell ({}, {})",
                        i / TABLE_ORDERS,
                        i % TABLE_ORDERS
                    ))
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self { entries })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_csv(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HalftoneOptions {
    pub threads: usize,
    pub mirror_gamma: bool,
}

impl Default for HalftoneOptions {
    fn default() -> Self {
        Self {
            threads: 1,
            mirror_gamma: false,
        }
    }
}

/// Pixel indices grouped by class, groups in ascending class order.
pub fn class_schedule(ct: &ClassTiling, width: usize, height: usize) -> Vec<Vec<usize>> {
    let mut groups = vec![Vec::new(); ct.num_classes()];
    for r in 0..height {
        for c in 0..width {
            groups[ct.at(r, c) as usize].push(r * width + c);
        }
    }
    groups
}

/// Reusable dot-diffusion state for one input image and class layout.
///
/// Parameters may be changed and the image re-rendered from any class onward;
/// everything finalized before that class is kept.
pub struct Renderer {
    width: usize,
    height: usize,
    input: Vec<u8>,
    prototype: Vec<u8>,
    class: Vec<u16>,
    groups: Vec<Vec<usize>>,
    params: Vec<Entry>,
    /// Share of the source's error sent to each neighbor slot.
    shares: Vec<[f64; 8]>,
    sums: Vec<f64>,
    error: Vec<f64>,
    incoming: Vec<f64>,
    output: Vec<u8>,
    pool: Option<rayon::ThreadPool>,
}

impl Renderer {
    fn build(
        x: &GrayImage,
        class: Vec<u16>,
        num_classes: usize,
        prototype: Vec<u8>,
        params: Vec<Entry>,
        threads: usize,
    ) -> Result<Self> {
        let (width, height) = (x.width(), x.height());
        let n = width * height;
        let mut groups = vec![Vec::new(); num_classes];
        for (p, &k) in class.iter().enumerate() {
            groups[k as usize].push(p);
        }
        let pool = if threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(threads)
                    .build()
                    .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        let mut r = Self {
            width,
            height,
            input: x.data().to_vec(),
            prototype,
            class,
            groups,
            params,
            shares: vec![[0.0; 8]; n],
            sums: vec![0.0; n],
            error: vec![0.0; n],
            incoming: vec![0.0; n],
            output: vec![255; n],
            pool,
        };
        for p in 0..n {
            r.refresh_shares(p);
        }
        Ok(r)
    }

    /// Proposed mode: class tiling plus per-pixel table lookup by tone and prototype.
    pub fn proposed(
        x: &GrayImage,
        ct: &ClassTiling,
        prototype: &MaskStack,
        table: &ParameterTable,
        opts: &HalftoneOptions,
    ) -> Result<Self> {
        if ct.size() != prototype.size() {
            return Err(Error::DimensionMismatch(format!(
                "class tiling side {} differs from prototype side {}",
                ct.size(),
                prototype.size()
            )));
        }
        let (w, h) = (x.width(), x.height());
        let mut class = Vec::with_capacity(w * h);
        let mut proto = Vec::with_capacity(w * h);
        let mut params = Vec::with_capacity(w * h);
        for r in 0..h {
            for c in 0..w {
                let f = prototype.at(r, c);
                class.push(ct.at(r, c));
                proto.push(f);
                params.push(table.lookup(x.get(r, c), f, opts.mirror_gamma));
            }
        }
        Self::build(x, class, ct.num_classes(), proto, params, opts.threads)
    }

    /// Classic mode: one class matrix tiled over the image, one matrix and threshold.
    pub fn fixed(
        x: &GrayImage,
        cm: &ClassMatrix,
        dm: DiffusedMatrix,
        gamma: f64,
        threads: usize,
    ) -> Result<Self> {
        let entry = Entry::new(dm.alpha, dm.beta, gamma);
        entry.validate()?;
        let (w, h) = (x.width(), x.height());
        let class = (0..h)
            .flat_map(|r| (0..w).map(move |c| cm.at(r, c)))
            .collect();
        Self::build(
            x,
            class,
            cm.rows() * cm.cols(),
            vec![0; w * h],
            vec![entry; w * h],
            threads,
        )
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn num_classes(&self) -> usize {
        self.groups.len()
    }

    pub fn groups(&self) -> &[Vec<usize>] {
        &self.groups
    }

    /// Normalizer of each pixel: total weight toward its higher-class in-image neighbors.
    pub fn sums(&self) -> &[f64] {
        &self.sums
    }

    /// Quantization error `v - y` of each pixel after the last render.
    pub fn errors(&self) -> &[f64] {
        &self.error
    }

    /// Accumulated diffused error `x'` of each pixel after the last render.
    pub fn incoming(&self) -> &[f64] {
        &self.incoming
    }

    /// Fraction of the source error `p` sends to each neighbor slot.
    pub fn shares(&self, p: usize) -> [f64; 8] {
        self.shares[p]
    }

    fn neighbor(&self, p: usize, slot: usize) -> Option<usize> {
        let (dy, dx) = OFFSETS[slot];
        let r = (p / self.width) as isize + dy;
        let c = (p % self.width) as isize + dx;
        if r < 0 || c < 0 || r >= self.height as isize || c >= self.width as isize {
            None
        } else {
            Some(r as usize * self.width + c as usize)
        }
    }

    fn refresh_shares(&mut self, p: usize) {
        let dm = self.params[p].matrix();
        let mut weights = [0.0; 8];
        for (slot, w) in weights.iter_mut().enumerate() {
            if let Some(q) = self.neighbor(p, slot) {
                if self.class[q] > self.class[p] {
                    let (dy, dx) = OFFSETS[slot];
                    *w = dm.weight(dy, dx);
                }
            }
        }
        let sum: f64 = weights.iter().sum();
        self.sums[p] = sum;
        self.shares[p] = if sum > 0.0 {
            weights.map(|w| w / sum)
        } else {
            [0.0; 8]
        };
    }

    /// Replaces the parameters of every pixel whose prototype value is `f` with
    /// `entry`, returning the first class that must be re-rendered.
    pub fn set_order_params(&mut self, f: u8, entry: Entry) -> Result<usize> {
        entry.validate()?;
        let mut first = self.groups.len();
        let targets: Vec<usize> = (0..self.params.len())
            .filter(|&p| self.prototype[p] == f)
            .collect();
        for p in targets {
            self.params[p] = entry;
            self.refresh_shares(p);
            first = first.min(self.class[p] as usize);
        }
        Ok(first)
    }

    /// Applies table cells by each pixel's tone and prototype value.
    pub fn set_table(&mut self, table: &ParameterTable, mirror_gamma: bool) {
        for p in 0..self.params.len() {
            self.params[p] = table.lookup(self.input[p], self.prototype[p], mirror_gamma);
        }
        for p in 0..self.params.len() {
            self.refresh_shares(p);
        }
    }

    fn process(&self, q: usize) -> (f64, f64, u8) {
        let kq = self.class[q];
        let mut acc = 0.0;
        for slot in 0..8 {
            if let Some(p) = self.neighbor(q, slot) {
                if self.class[p] < kq {
                    // `p` reaches `q` through the opposite slot.
                    acc += self.error[p] * self.shares[p][7 - slot];
                }
            }
        }
        let v = self.input[q] as f64 + acc;
        let y = if v >= self.params[q].gamma { 255u8 } else { 0u8 };
        let e = v - y as f64;
        debug_assert!(e.abs() <= 1024.0, "error rail exceeded: {e}");
        (acc, e, y)
    }

    fn run_class(&mut self, k: usize) {
        let group = std::mem::take(&mut self.groups[k]);
        let results: Vec<(f64, f64, u8)> = match &self.pool {
            Some(pool) => pool.install(|| group.par_iter().map(|&q| self.process(q)).collect()),
            None => group.iter().map(|&q| self.process(q)).collect(),
        };
        for (&q, (acc, e, y)) in group.iter().zip(results) {
            self.incoming[q] = acc;
            self.error[q] = e;
            self.output[q] = y;
        }
        self.groups[k] = group;
    }

    /// Re-renders classes `from_class..` keeping earlier classes as they are.
    pub fn render_from(&mut self, from_class: usize) {
        for k in from_class..self.groups.len() {
            self.run_class(k);
        }
    }

    pub fn render(&mut self) {
        self.render_from(0);
    }

    pub fn output(&self) -> BinaryImage {
        BinaryImage::new(self.width, self.height, self.output.clone()).expect("binary output")
    }
}

/// Proposed dot diffusion of `x`.
pub fn halftone(
    x: &GrayImage,
    ct: &ClassTiling,
    prototype: &MaskStack,
    table: &ParameterTable,
    threads: usize,
) -> Result<BinaryImage> {
    halftone_with(
        x,
        ct,
        prototype,
        table,
        &HalftoneOptions {
            threads,
            ..HalftoneOptions::default()
        },
    )
}

pub fn halftone_with(
    x: &GrayImage,
    ct: &ClassTiling,
    prototype: &MaskStack,
    table: &ParameterTable,
    opts: &HalftoneOptions,
) -> Result<BinaryImage> {
    let mut r = Renderer::proposed(x, ct, prototype, table, opts)?;
    r.render();
    Ok(r.output())
}

/// Classic dot diffusion with one class matrix, diffused matrix and threshold.
pub fn halftone_fixed(
    x: &GrayImage,
    cm: &ClassMatrix,
    dm: DiffusedMatrix,
    gamma: f64,
) -> Result<BinaryImage> {
    let mut r = Renderer::fixed(x, cm, dm, gamma, 1)?;
    r.render();
    Ok(r.output())
}

/// Per-pixel normalizer `sum_p`, row-major.
pub fn normalization_map(
    x: &GrayImage,
    ct: &ClassTiling,
    prototype: &MaskStack,
    table: &ParameterTable,
) -> Result<Vec<f64>> {
    Ok(Renderer::proposed(x, ct, prototype, table, &HalftoneOptions::default())?
        .sums
        .clone())
}

/// Class of every pixel with prototype value `f` under `classes` orders.
pub fn order_class(f: u8, classes: usize) -> usize {
    quantize_order(f, classes) as usize
}
