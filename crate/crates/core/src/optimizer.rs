//! Per-tone optimization of the dot-diffusion parameter table.
//!
//! Each tone row is improved by coordinate descent over prototype values `f`:
//! every outer iteration runs a bounded simplex search on each `(alpha, beta,
//! gamma)` cell alone and commits only the single best cell.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classtiling::ClassTiling;
use crate::dbs::{groundtruth_path, MaskStack};
use crate::dotdiffusion::{Entry, HalftoneOptions, ParameterTable, Renderer, TABLE_TONES};
use crate::error::{Error, Result};
use crate::hvs::{gaussian_lowpass, hmse, HvsKernel};
use crate::image::{constant_patch, BinaryImage, GrayImage};
use crate::pnm;
use crate::spectrum::{randomized_apsd, spectrum_cost, Apsd, SpectrumCostKind};

pub fn init_table() -> ParameterTable {
    ParameterTable::ordered_dither()
}

/// Every tone `0..=255` resolved through the row symmetry, indexed `[g][f]`.
pub fn expand_symmetric(table: &ParameterTable) -> Vec<[Entry; 256]> {
    (0..=255u8)
        .map(|g| std::array::from_fn(|f| table.lookup(g, f as u8, false)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimplexConfig {
    pub steps: [f64; 3],
    pub reflection: f64,
    pub expansion: f64,
    pub contraction: f64,
    pub shrink: f64,
    /// Stop once the vertex cost spread is at most `tolerance * |best|`.
    pub tolerance: f64,
    pub max_evals: usize,
}

impl Default for SimplexConfig {
    fn default() -> Self {
        Self {
            steps: [0.25, 0.25, 8.0],
            reflection: 1.0,
            expansion: 2.0,
            contraction: 0.5,
            shrink: 0.5,
            tolerance: 1e-3,
            max_evals: 200,
        }
    }
}

fn project(p: [f64; 3]) -> [f64; 3] {
    [p[0].max(0.0), p[1].max(0.0), p[2].clamp(0.0, 255.0)]
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchResult {
    pub point: [f64; 3],
    pub cost: f64,
    pub evals: usize,
}

/// Nelder–Mead over `(alpha, beta, gamma)`. Vertices move freely; costs are
/// taken at their projection onto `alpha, beta >= 0`, `gamma in [0, 255]` plus a
/// penalty outside the box, and the returned point is projected. Converged simplices are restarted around the best
/// vertex while that keeps improving.
pub fn downhill_search(
    mut cost: impl FnMut([f64; 3]) -> Result<f64>,
    start: [f64; 3],
    cfg: &SimplexConfig,
) -> Result<SearchResult> {
    let start = project(start);
    let mut evals = 0usize;
    let mut eval = |p: [f64; 3], evals: &mut usize| -> Result<f64> {
        *evals += 1;
        let q = project(p);
        let c = cost(q)?;
        if !c.is_finite() {
            return Err(Error::NonFiniteCost(c));
        }
        // Outside the box the cost grows with the distance (in step units) so
        // the simplex is pushed back instead of drifting on a plateau.
        let d2: f64 = (0..3).map(|i| ((p[i] - q[i]) / cfg.steps[i]).powi(2)).sum();
        Ok(c * (1.0 + d2) + d2)
    };

    let along = |c: [f64; 3], w: [f64; 3], t: f64| -> [f64; 3] { std::array::from_fn(|i| c[i] + t * (c[i] - w[i])) };
    let mut best = (start, eval(start, &mut evals)?);
    loop {
        let origin = best.0;
        let mut simplex: Vec<([f64; 3], f64)> = vec![best];
        for i in 0..3 {
            let mut p = origin;
            p[i] += cfg.steps[i];
            if project(p) == project(origin) {
                p[i] = origin[i] - cfg.steps[i];
            }
            simplex.push((p, eval(p, &mut evals)?));
        }
        loop {
            // Stable sort keeps earlier vertices (the start first) ahead on ties.
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let spread = simplex[3].1 - simplex[0].1;
            if spread <= cfg.tolerance * simplex[0].1.abs() || evals >= cfg.max_evals {
                break;
            }
            let mut c = [0.0; 3];
            for (p, _) in &simplex[..3] {
                for i in 0..3 {
                    c[i] += p[i] / 3.0;
                }
            }
            let worst = simplex[3];
            let r = along(c, worst.0, cfg.reflection);
            let fr = eval(r, &mut evals)?;
            if fr < simplex[0].1 {
                let e = along(c, worst.0, cfg.expansion);
                let fe = eval(e, &mut evals)?;
                simplex[3] = if fe < fr { (e, fe) } else { (r, fr) };
                continue;
            }
            if fr < simplex[2].1 {
                simplex[3] = (r, fr);
                continue;
            }
            let t = if fr < worst.1 {
                cfg.contraction * cfg.reflection
            } else {
                -cfg.contraction
            };
            let k = along(c, worst.0, t);
            let fk = eval(k, &mut evals)?;
            if fk < worst.1.min(fr) {
                simplex[3] = (k, fk);
                continue;
            }
            let b = simplex[0].0;
            for v in simplex.iter_mut().skip(1) {
                let p = std::array::from_fn(|i| b[i] + cfg.shrink * (v.0[i] - b[i]));
                *v = (p, eval(p, &mut evals)?);
            }
        }
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        let improved = simplex[0].1 < best.1;
        if improved {
            best = simplex[0];
        }
        if !improved || evals >= cfg.max_evals {
            break;
        }
    }
    Ok(SearchResult {
        point: project(best.0),
        cost: best.1,
        evals,
    })
}

/// Cost of a parameter table for one tone row.
pub trait StageObjective {
    /// Prototype values whose cells are searched for tone `g`.
    fn orders(&self, g: u8) -> Vec<u8>;
    /// Cost of `table` as is.
    fn baseline(&mut self, table: &ParameterTable, g: u8) -> Result<f64>;
    /// Cost of `table` with cell `(g, f)` replaced by `entry`. Called only after
    /// `baseline` for the same table.
    fn trial(&mut self, table: &ParameterTable, g: u8, f: u8, entry: Entry) -> Result<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Commit {
    pub stage: u8,
    pub g: u8,
    pub k: usize,
    pub f_star: u8,
    pub cost: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct OptimizationTrace {
    pub commits: Vec<Commit>,
    /// Cost of the input table per `(stage, g)`.
    pub initial: Vec<(u8, u8, f64)>,
    pub evaluations: usize,
}

impl OptimizationTrace {
    pub fn costs(&self, stage: u8, g: u8) -> Vec<f64> {
        self.commits
            .iter()
            .filter(|c| c.stage == stage && c.g == g)
            .map(|c| c.cost)
            .collect()
    }

    pub fn initial_cost(&self, stage: u8, g: u8) -> Option<f64> {
        self.initial
            .iter()
            .find(|&&(s, t, _)| s == stage && t == g)
            .map(|&(_, _, c)| c)
    }

    /// Cost after the run: the last commit, or the initial cost if nothing changed.
    pub fn final_cost(&self, stage: u8, g: u8) -> Option<f64> {
        self.costs(stage, g).last().copied().or(self.initial_cost(stage, g))
    }

    pub fn extend(&mut self, other: OptimizationTrace) {
        self.commits.extend(other.commits);
        self.initial.extend(other.initial);
        self.evaluations += other.evaluations;
    }

    pub fn write_jsonl(&self, mut out: impl Write) -> std::io::Result<()> {
        for c in &self.commits {
            serde_json::to_writer(&mut out, c)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_jsonl(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn parse_jsonl(text: &str) -> Result<Vec<Commit>> {
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                serde_json::from_str(l)
                    .map_err(|e| Error::InvalidArgument(format!("bad trace line `{l}`: {e}")))
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub simplex: SimplexConfig,
    pub outer_max_iters: usize,
}

/// Coordinate descent of `tones` against any objective.
pub fn optimize_with(
    objective: &mut impl StageObjective,
    table: &ParameterTable,
    stage: u8,
    tones: &[u8],
    schedule: &Schedule,
) -> Result<(ParameterTable, OptimizationTrace)> {
    let mut table = table.clone();
    let mut trace = OptimizationTrace::default();
    for &g in tones {
        if g as usize >= TABLE_TONES {
            return Err(Error::InvalidArgument(format!("tone {g} is outside 0..128")));
        }
        let mut e_opt = objective.baseline(&table, g)?;
        trace.evaluations += 1;
        trace.initial.push((stage, g, e_opt));
        for k in 1..=schedule.outer_max_iters {
            let mut best: Option<(u8, Entry, f64)> = None;
            for f in objective.orders(g) {
                let start = table.get(g, f);
                let res = downhill_search(
                    |p| objective.trial(&table, g, f, Entry::new(p[0], p[1], p[2])),
                    [start.alpha, start.beta, start.gamma],
                    &schedule.simplex,
                )?;
                trace.evaluations += res.evals;
                if best.map_or(true, |(_, _, c)| res.cost < c) {
                    let p = res.point;
                    best = Some((f, Entry::new(p[0], p[1], p[2]), res.cost));
                }
            }
            match best {
                Some((f_star, entry, cost)) if cost < e_opt => {
                    table.set(g, f_star, entry)?;
                    e_opt = cost;
                    trace.commits.push(Commit {
                        stage,
                        g,
                        k,
                        f_star,
                        cost,
                    });
                    objective.baseline(&table, g)?;
                    trace.evaluations += 1;
                }
                _ => break,
            }
        }
    }
    Ok((table, trace))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    pub tones: Vec<u8>,
    pub patch_size: usize,
    pub window: usize,
    pub apsd_k: usize,
    pub apsd_seed: u64,
    pub simplex: SimplexConfig,
    pub outer_max_iters: usize,
    /// Side of the lowpass kernel used by the perceived-error stage.
    pub hmse_kernel: usize,
    pub mirror_gamma: bool,
    pub threads: usize,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            tones: (0..TABLE_TONES as u8).collect(),
            patch_size: 512,
            window: 128,
            apsd_k: 50,
            apsd_seed: 0,
            simplex: SimplexConfig::default(),
            outer_max_iters: 1000,
            hmse_kernel: 15,
            mirror_gamma: false,
            threads: 1,
        }
    }
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.patch_size < self.window || self.window == 0 {
            return Err(Error::InvalidArgument(format!(
                "patch size {} must be at least the window size {}",
                self.patch_size, self.window
            )));
        }
        if !(self.simplex.tolerance > 0.0) {
            return Err(Error::InvalidArgument("simplex tolerance must be positive".into()));
        }
        if self.apsd_k == 0 {
            return Err(Error::InvalidArgument("apsd_k must be positive".into()));
        }
        Ok(())
    }

    fn schedule(&self) -> Schedule {
        Schedule {
            simplex: self.simplex,
            outer_max_iters: self.outer_max_iters,
        }
    }
}

/// Loads the cached ground-truth pattern for tone `g`.
pub fn load_groundtruth(gt_dir: &Path, g: u8, size: usize, seed: u64) -> Result<BinaryImage> {
    let path = groundtruth_path(gt_dir, g, size, seed);
    if !path.exists() {
        return Err(Error::MissingGroundTruth(g));
    }
    pnm::load_pbm(path)
}

struct ToneState {
    renderer: Renderer,
    patch: GrayImage,
    reference: Option<Apsd>,
    /// Cell whose renderer parameters differ from the table.
    changed: Option<u8>,
    dirty_from: usize,
    baseline: f64,
    memo: HashMap<(u8, [u64; 3]), f64>,
}

/// Renders constant patches with the proposed engine and scores them by the
/// spectral distance to the ground truth (stage 1) or the perceived error
/// (stage 2).
pub struct HalftoneObjective<'a> {
    ct: &'a ClassTiling,
    prototype: &'a MaskStack,
    cfg: OptimizerConfig,
    stage: u8,
    groundtruth: HashMap<u8, BinaryImage>,
    lowpass: HvsKernel,
    tones: HashMap<u8, ToneState>,
}

impl<'a> HalftoneObjective<'a> {
    pub fn new(
        ct: &'a ClassTiling,
        prototype: &'a MaskStack,
        cfg: &OptimizerConfig,
        stage: u8,
        groundtruth: HashMap<u8, BinaryImage>,
    ) -> Result<Self> {
        cfg.validate()?;
        if stage != 1 && stage != 2 {
            return Err(Error::InvalidArgument(format!("stage must be 1 or 2, got {stage}")));
        }
        Ok(Self {
            ct,
            prototype,
            cfg: cfg.clone(),
            stage,
            groundtruth,
            lowpass: gaussian_lowpass(cfg.hmse_kernel)?,
            tones: HashMap::new(),
        })
    }

    fn score(&self, st: &ToneState) -> Result<f64> {
        let out = st.renderer.output();
        match &st.reference {
            Some(reference) => {
                let w = self.cfg.window;
                let apsd = randomized_apsd(&out, w, w, self.cfg.apsd_k, self.cfg.apsd_seed)?;
                spectrum_cost(&apsd, reference, SpectrumCostKind::SymmetricNormalized)
            }
            None => hmse(&st.patch, &out, &self.lowpass),
        }
    }

    fn state(&mut self, table: &ParameterTable, g: u8) -> Result<&mut ToneState> {
        if !self.tones.contains_key(&g) {
            let n = self.cfg.patch_size;
            let patch = constant_patch(g, n, n);
            let reference = if self.stage == 1 {
                let gt = self.groundtruth.get(&g).ok_or(Error::MissingGroundTruth(g))?;
                if (gt.width(), gt.height()) != (n, n) {
                    return Err(Error::DimensionMismatch(format!(
                        "ground truth for tone {g} is {}x{}, patch is {n}x{n}",
                        gt.width(),
                        gt.height()
                    )));
                }
                let w = self.cfg.window;
                Some(randomized_apsd(gt, w, w, self.cfg.apsd_k, self.cfg.apsd_seed)?)
            } else {
                None
            };
            let opts = HalftoneOptions {
                threads: self.cfg.threads,
                mirror_gamma: self.cfg.mirror_gamma,
            };
            let renderer = Renderer::proposed(&patch, self.ct, self.prototype, table, &opts)?;
            let num_classes = renderer.num_classes();
            self.tones.insert(
                g,
                ToneState {
                    renderer,
                    patch,
                    reference,
                    changed: None,
                    dirty_from: num_classes,
                    baseline: f64::NAN,
                    memo: HashMap::new(),
                },
            );
        }
        Ok(self.tones.get_mut(&g).unwrap())
    }
}

impl StageObjective for HalftoneObjective<'_> {
    fn orders(&self, _g: u8) -> Vec<u8> {
        // Cells of prototype values absent from the patch cannot change the output.
        let mut present = [false; 256];
        let n = self.cfg.patch_size;
        let side = self.prototype.size();
        for r in 0..n.min(side) {
            for c in 0..n.min(side) {
                present[self.prototype.at(r, c) as usize] = true;
            }
        }
        (0..=255u8).filter(|&f| present[f as usize]).collect()
    }

    fn baseline(&mut self, table: &ParameterTable, g: u8) -> Result<f64> {
        let mirror = self.cfg.mirror_gamma;
        let st = self.state(table, g)?;
        st.renderer.set_table(table, mirror);
        st.renderer.render();
        st.changed = None;
        st.dirty_from = st.renderer.num_classes();
        st.memo.clear();
        let st = &self.tones[&g];
        let cost = self.score(st)?;
        let st = self.tones.get_mut(&g).unwrap();
        st.baseline = cost;
        Ok(cost)
    }

    fn trial(&mut self, table: &ParameterTable, g: u8, f: u8, entry: Entry) -> Result<f64> {
        if entry == table.get(g, f) {
            return Ok(self.tones[&g].baseline);
        }
        let key = (f, [entry.alpha.to_bits(), entry.beta.to_bits(), entry.gamma.to_bits()]);
        let st = self.tones.get_mut(&g).ok_or(Error::MissingGroundTruth(g))?;
        if let Some(&c) = st.memo.get(&key) {
            return Ok(c);
        }
        if let Some(prev) = st.changed.filter(|&p| p != f) {
            let from = st.renderer.set_order_params(prev, table.get(g, prev))?;
            st.dirty_from = st.dirty_from.min(from);
        }
        let from = st.renderer.set_order_params(f, entry)?;
        let from = st.dirty_from.min(from);
        st.renderer.render_from(from);
        st.dirty_from = st.renderer.num_classes();
        st.changed = Some(f);
        let st = &self.tones[&g];
        let cost = self.score(st)?;
        self.tones.get_mut(&g).unwrap().memo.insert(key, cost);
        Ok(cost)
    }
}

/// Cost of `table` for tone `g` under the given stage.
pub fn evaluate_candidate(
    table: &ParameterTable,
    g: u8,
    stage: u8,
    cfg: &OptimizerConfig,
    ct: &ClassTiling,
    prototype: &MaskStack,
    groundtruth: &HashMap<u8, BinaryImage>,
) -> Result<f64> {
    let gt = groundtruth
        .get(&g)
        .map(|p| HashMap::from([(g, p.clone())]))
        .unwrap_or_default();
    HalftoneObjective::new(ct, prototype, cfg, stage, gt)?.baseline(table, g)
}

/// One stage over `cfg.tones` from `table`.
pub fn optimize_stage(
    table: &ParameterTable,
    stage: u8,
    cfg: &OptimizerConfig,
    ct: &ClassTiling,
    prototype: &MaskStack,
    groundtruth: HashMap<u8, BinaryImage>,
) -> Result<(ParameterTable, OptimizationTrace)> {
    let mut objective = HalftoneObjective::new(ct, prototype, cfg, stage, groundtruth)?;
    optimize_with(&mut objective, table, stage, &cfg.tones, &cfg.schedule())
}
