//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion.
//!
//! Criteria listed in `KNOWN_RED` are reported as they are but do not fail the
//! target; any other failure does.

use std::collections::HashMap;
use std::sync::OnceLock;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dotdiff_core::classtiling::{ideal_wavelength, quantize_prototype, ClassMatrix, ClassTiling};
use dotdiff_core::dbs::{
    build_mask_stack, dbs_cost, default_counts, dmdbs_run, groundtruth_pattern,
    nearest_neighbor_distances, DbsConfig, MaskBuilder, MaskStack,
};
use dotdiff_core::dotdiffusion::{
    halftone, halftone_fixed, halftone_with, DiffusedMatrix, Entry, HalftoneOptions, ParameterTable,
};
use dotdiff_core::hvs::{gaussian_lowpass, hmse, kernel_size_for};
use dotdiff_core::image::{constant_patch, ramp, RampDirection};
use dotdiff_core::optimizer::{
    init_table, optimize_stage, optimize_with, OptimizerConfig, Schedule, SimplexConfig,
    StageObjective,
};
use dotdiff_core::spectrum::{
    bartlett_apsd, detect_impulses, randomized_apsd, rapsd_anisotropy, welch_apsd, Impulse,
};
use dotdiff_core::{BinaryImage, GrayImage, Result};

const KNOWN_RED: &[&str] = &["AC7", "AC9", "AC10"];

const STACK_SIZE: usize = 256;
const STACK_SEED: u64 = 1;

fn stack() -> &'static MaskStack {
    static STACK: OnceLock<MaskStack> = OnceLock::new();
    STACK.get_or_init(|| {
        let cfg = DbsConfig {
            seed: STACK_SEED,
            ..DbsConfig::default()
        };
        build_mask_stack(STACK_SIZE, &cfg).expect("mask stack")
    })
}

fn tiling() -> &'static ClassTiling {
    static CT: OnceLock<ClassTiling> = OnceLock::new();
    CT.get_or_init(|| quantize_prototype(stack(), 8, 8).expect("class tiling"))
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn ac1() -> Outcome {
    let low = ideal_wavelength(1.0 / 255.0).unwrap();
    let middle = [0.25, 0.3, 0.5, 0.6, 0.7499]
        .iter()
        .all(|&g| ideal_wavelength(g).unwrap() == 2.0);
    let below = ideal_wavelength(0.2499).unwrap() != 2.0 && ideal_wavelength(0.75).unwrap() == 2.0;
    outcome(
        (low - 15.97).abs() <= 0.01 && middle && below,
        format!("lambda(1/255)={low:.4}, middle branch exact={middle}, edges={below}"),
    )
}

fn ac2() -> Outcome {
    let got = [
        kernel_size_for(15.0, 75.0),
        kernel_size_for(30.0, 75.0),
        kernel_size_for(30.0, 150.0),
    ];
    outcome(got == [7, 15, 31], format!("sizes {got:?}"))
}

/// Scatter reference: each processed pixel writes its shares into per-neighbor
/// slots of the receivers; a receiver sums its slots in fixed slot order.
fn scatter(x: &GrayImage, ct: &ClassTiling, proto: &MaskStack, table: &ParameterTable, mirror: bool) -> Vec<u8> {
    const SLOTS: [(isize, isize); 8] = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)];
    let (w, h) = (x.width() as isize, x.height() as isize);
    let n = (w * h) as usize;
    let mut slots = vec![[0.0f64; 8]; n];
    let mut out = vec![0u8; n];
    let class = |r: isize, c: isize| ct.at(r as usize, c as usize);
    for k in 0..ct.num_classes() as u16 {
        for r in 0..h {
            for c in 0..w {
                if class(r, c) != k {
                    continue;
                }
                let p = (r * w + c) as usize;
                let e = table.lookup(x.get(r as usize, c as usize), proto.at(r as usize, c as usize), mirror);
                let mut acc = 0.0;
                for s in slots[p] {
                    acc += s;
                }
                let v = x.data()[p] as f64 + acc;
                let y = if v >= e.gamma { 255u8 } else { 0 };
                out[p] = y;
                let err = v - y as f64;
                let mut receivers = Vec::new();
                let mut sum = 0.0;
                for &(dy, dx) in &SLOTS {
                    let (qr, qc) = (r + dy, c + dx);
                    if qr < 0 || qc < 0 || qr >= h || qc >= w || class(qr, qc) <= k {
                        continue;
                    }
                    let wgt = if dy != 0 && dx != 0 { e.alpha } else { e.beta };
                    sum += wgt;
                    receivers.push(((qr * w + qc) as usize, dy, dx, wgt));
                }
                if sum > 0.0 {
                    for (q, dy, dx, wgt) in receivers {
                        let slot = SLOTS.iter().position(|&o| o == (-dy, -dx)).unwrap();
                        slots[q][slot] = err * (wgt / sum);
                    }
                }
            }
        }
    }
    out
}

fn ac3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut mismatches = 0;
    for _ in 0..200 {
        let proto = MaskStack::new(16, (0..256).map(|_| rng.gen_range(1..=255u8)).collect()).unwrap();
        let (rows, cols) = (rng.gen_range(1..=8), rng.gen_range(1..=8));
        let ct = quantize_prototype(&proto, rows, cols).unwrap();
        let table = ParameterTable::from_fn(|_, _| {
            Entry::new(rng.gen_range(0.0..3.0), rng.gen_range(0.0..3.0), rng.gen_range(0.0..=255.0))
        })
        .unwrap();
        let x = GrayImage::from_fn(16, 16, |_, _| rng.gen());
        let opts = HalftoneOptions {
            threads: rng.gen_range(1..=4),
            mirror_gamma: rng.gen(),
        };
        let y = halftone_with(&x, &ct, &proto, &table, &opts).unwrap();
        if y.data() != scatter(&x, &ct, &proto, &table, opts.mirror_gamma).as_slice() {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{mismatches}/200 instances differ"))
}

fn ac4() -> Outcome {
    let x = ramp(512, 512, RampDirection::Horizontal).unwrap();
    let table = ParameterTable::uniform(Entry::new(1.0, 2.0, 128.0)).unwrap();
    let outs: Vec<BinaryImage> = [1, 2, 8]
        .iter()
        .map(|&t| halftone(&x, tiling(), stack(), &table, t).unwrap())
        .collect();
    let same = outs.windows(2).all(|w| w[0].data() == w[1].data());
    outcome(same, format!("threads 1/2/8 identical={same}"))
}

fn ac5() -> Outcome {
    let table = init_table();
    let mut worst: f64 = 0.0;
    let mut detail = Vec::new();
    for g in [16u8, 32, 64, 128, 192, 240] {
        let y = halftone(&constant_patch(g, 256, 256), tiling(), stack(), &table, 1).unwrap();
        let dev = (y.mean() - g as f64).abs();
        worst = worst.max(dev);
        detail.push(format!("{g}:{:.3}", y.mean()));
    }
    outcome(worst <= 1.0, format!("max |mean-g|={worst:.4} ({})", detail.join(" ")))
}

fn nn_variance(img: &BinaryImage) -> f64 {
    let d = nearest_neighbor_distances(img);
    let m = d.iter().sum::<f64>() / d.len() as f64;
    d.iter().map(|v| (v - m).powi(2)).sum::<f64>() / d.len() as f64
}

fn ac6() -> Outcome {
    let s = stack();
    let mut stacked = true;
    for g in 1..=255u8 {
        let (prev, cur) = (s.mask(g - 1), s.mask(g));
        stacked &= prev.data().iter().zip(cur.data()).all(|(&a, &b)| a != 0 || b == 0);
    }
    let counts = default_counts(STACK_SIZE * STACK_SIZE);
    let schedule = (0..=255u8).all(|g| s.black_count(g) == counts[g as usize]);
    let dots1 = s.black_count(1);

    let cfg = DbsConfig {
        seed: STACK_SEED,
        scale_switch: false,
        ..DbsConfig::default()
    };
    let mut single = MaskBuilder::new(STACK_SIZE, &cfg).unwrap();
    let mut on = Vec::new();
    let mut off = Vec::new();
    for g in 1..=3u8 {
        single.next_level().unwrap();
        off.push(nn_variance(&single.mask()));
        on.push(nn_variance(&s.mask(g)));
    }
    let reduction = 1.0 - on.iter().sum::<f64>() / off.iter().sum::<f64>();
    let first = 1.0 - on[0] / off[0];
    outcome(
        stacked && schedule && dots1 == 257 && reduction >= 0.2,
        format!(
            "stacking={stacked} schedule={schedule} I_1 dots={dots1}; nn variance on {on:.3?} off {off:.3?}, \
             reduction over g=1..3 {:.1}% (I_1 {:.1}%)",
            100.0 * reduction,
            100.0 * first
        ),
    )
}

/// Flags on the horizontal-frequency lattice lines and on the vertical ones.
fn families(flags: &[Impulse]) -> (usize, usize) {
    let cols = flags.iter().filter(|i| i.col != 0 && i.col % 16 == 0).count();
    let rows = flags.iter().filter(|i| i.row != 0 && i.row % 16 == 0).count();
    (cols, rows)
}

fn ac7() -> Outcome {
    let knuth = ClassMatrix::knuth();
    let dm = DiffusedMatrix::new(1.0, 2.0).unwrap();
    // Vertical strip of K windows, one window wide.
    let strip = halftone_fixed(&constant_patch(16, 128, 128 * 50), &knuth, dm, 128.0).unwrap();
    let bart = detect_impulses(&bartlett_apsd(&strip, 128, 128, 128, 50).unwrap(), 20.0);
    let square = halftone_fixed(&constant_patch(16, 512, 512), &knuth, dm, 128.0).unwrap();
    let rand = detect_impulses(&randomized_apsd(&square, 128, 128, 50, 7).unwrap(), 20.0);
    let (bc, br) = families(&bart);
    let (rc, rr) = families(&rand);
    let on_lattice = rand.iter().all(|i| i.row % 16 == 0 && i.col % 16 == 0);
    let confined = !bart.is_empty() && (bc == 0 || br == 0);
    let both = rc > 0 && rr > 0 && on_lattice;
    outcome(
        confined && both,
        format!(
            "bartlett flags {} (col family {bc}, row family {br}); randomized flags {} \
             (col family {rc}, row family {rr}, on 1/8 lattice={on_lattice})",
            bart.len(),
            rand.len()
        ),
    )
}

fn ac8() -> Outcome {
    let g = 64u8;
    let x = constant_patch(g, 512, 512);
    let proposed = halftone(&x, tiling(), stack(), &init_table(), 1).unwrap();
    let apsd = randomized_apsd(&proposed, 128, 128, 50, 3).unwrap();
    let flags = detect_impulses(&apsd, 20.0);
    let half_principal = 0.5 * 128.0 / ideal_wavelength(g as f64 / 255.0).unwrap();
    let rings = rapsd_anisotropy(&apsd, 1.0).unwrap();
    let worst = rings
        .iter()
        .filter(|r| r.radius > half_principal)
        .map(|r| r.anisotropy)
        .fold(0.0, f64::max);

    let dm = DiffusedMatrix::new(1.0, 2.0).unwrap();
    let baseline = halftone_fixed(&x, &ClassMatrix::knuth(), dm, 128.0).unwrap();
    let base_flags = detect_impulses(&randomized_apsd(&baseline, 128, 128, 50, 3).unwrap(), 20.0);
    outcome(
        flags.is_empty() && worst < 0.5 && !base_flags.is_empty(),
        format!(
            "proposed flags {}, max anisotropy above radius {half_principal} = {worst:.3}; baseline flags {}",
            flags.len(),
            base_flags.len()
        ),
    )
}

fn ac9() -> Outcome {
    let (m, k, trials) = (128usize, 50usize, 200usize);
    let bins = m * m;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut stats = [(vec![0.0f64; bins], vec![0.0f64; bins]), (vec![0.0; bins], vec![0.0; bins])];
    for _ in 0..trials {
        let noise = BinaryImage::from_ink(m, m * k, (0..m * m * k).map(|_| rng.gen::<bool>()));
        let estimates = [
            bartlett_apsd(&noise, m, m, m, k).unwrap(),
            welch_apsd(&noise, m, m, 2 * k - 1).unwrap(),
        ];
        for (est, (sum, sq)) in estimates.iter().zip(stats.iter_mut()) {
            for (i, &v) in est.bins.iter().enumerate() {
                sum[i] += v;
                sq[i] += v * v;
            }
        }
    }
    let var = |(sum, sq): &(Vec<f64>, Vec<f64>), i: usize| {
        let mean = sum[i] / trials as f64;
        (sq[i] - trials as f64 * mean * mean) / (trials - 1) as f64
    };
    let ratio = (1..bins).map(|i| var(&stats[1], i) / var(&stats[0], i)).sum::<f64>() / (bins - 1) as f64;
    outcome(
        (0.4..=0.75).contains(&ratio),
        format!("mean per-bin variance ratio welch/bartlett = {ratio:.4} over {trials} trials"),
    )
}

/// Separable-in-cells quadratic with a smoothness coupling on gamma.
struct Surrogate {
    targets: Vec<(u8, [f64; 3])>,
    lambda: f64,
}

impl Surrogate {
    fn cost_of(&self, cell: impl Fn(u8) -> Entry) -> f64 {
        let mut total = 0.0;
        for (i, &(f, t)) in self.targets.iter().enumerate() {
            let e = cell(f);
            total += (e.alpha - t[0]).powi(2) + (e.beta - t[1]).powi(2) + (e.gamma - t[2]).powi(2);
            if let Some(&(next, _)) = self.targets.get(i + 1) {
                total += self.lambda * (e.gamma - cell(next).gamma).powi(2);
            }
        }
        total
    }

    /// Fixed point of exact per-cell minimization.
    fn fixed_point(&self) -> Vec<[f64; 3]> {
        let n = self.targets.len();
        let c: Vec<f64> = self.targets.iter().map(|t| t.1[2]).collect();
        let mut g = c.clone();
        for _ in 0..20_000 {
            for i in 0..n {
                let (mut num, mut den) = (c[i], 1.0);
                for j in [i.wrapping_sub(1), i + 1] {
                    if j < n {
                        num += self.lambda * g[j];
                        den += self.lambda;
                    }
                }
                g[i] = (num / den).clamp(0.0, 255.0);
            }
        }
        self.targets
            .iter()
            .zip(g)
            .map(|(t, gamma)| [t.1[0].max(0.0), t.1[1].max(0.0), gamma])
            .collect()
    }
}

impl StageObjective for Surrogate {
    fn orders(&self, _g: u8) -> Vec<u8> {
        self.targets.iter().map(|t| t.0).collect()
    }

    fn baseline(&mut self, table: &ParameterTable, g: u8) -> Result<f64> {
        Ok(self.cost_of(|f| table.get(g, f)))
    }

    fn trial(&mut self, table: &ParameterTable, g: u8, f: u8, entry: Entry) -> Result<f64> {
        Ok(self.cost_of(|h| if h == f { entry } else { table.get(g, h) }))
    }
}

fn ac10() -> Outcome {
    let mut q = Surrogate {
        targets: vec![
            (2, [0.7, -0.4, 30.0]),
            (9, [1.2, 1.9, 120.0]),
            (40, [-2.0, 0.6, 75.0]),
            (41, [0.3, 0.3, 250.0]),
            (180, [1.0, 1.0, 10.0]),
        ],
        lambda: 0.8,
    };
    let schedule = Schedule {
        simplex: SimplexConfig {
            // The spread test is relative and this surrogate has a large floor.
            tolerance: 1e-12,
            max_evals: 2000,
            ..SimplexConfig::default()
        },
        outer_max_iters: 500,
    };
    let (table, _) = optimize_with(&mut q, &init_table(), 1, &[7], &schedule).unwrap();
    let expected = q.fixed_point();
    let surrogate_err = q
        .targets
        .iter()
        .zip(&expected)
        .map(|(&(f, _), m)| {
            let e = table.get(7, f);
            [e.alpha - m[0], e.beta - m[1], e.gamma - m[2]]
                .iter()
                .fold(0.0f64, |a, d| a.max(d.abs()))
        })
        .fold(0.0, f64::max);

    let tones = [16u8, 64];
    let dbs = DbsConfig::default();
    let gt: HashMap<u8, BinaryImage> = tones
        .iter()
        .map(|&g| (g, groundtruth_pattern(g, 256, &dbs).unwrap()))
        .collect();
    let cfg = OptimizerConfig {
        tones: tones.to_vec(),
        patch_size: 256,
        apsd_k: 16,
        ..OptimizerConfig::default()
    };
    let (_, trace) = optimize_stage(&init_table(), 1, &cfg, tiling(), stack(), gt).unwrap();
    let mut decreasing = true;
    let mut ratio_ok = true;
    let mut detail = Vec::new();
    for g in tones {
        let init = trace.initial_cost(1, g).unwrap();
        let mut seq = vec![init];
        seq.extend(trace.costs(1, g));
        decreasing &= seq.windows(2).all(|w| w[1] < w[0]);
        let last = *seq.last().unwrap();
        ratio_ok &= last <= 0.7 * init;
        detail.push(format!(
            "g={g}: init {init:.1} final {last:.1} ratio {:.4} commits {}",
            last / init,
            seq.len() - 1
        ));
    }
    outcome(
        surrogate_err < 1e-2 && decreasing && ratio_ok,
        format!(
            "surrogate max error {surrogate_err:.2e}; real run evals {} decreasing={decreasing}; {}",
            trace.evaluations,
            detail.join("; ")
        ),
    )
}

fn mirror(i: isize, n: isize) -> isize {
    let mut i = i;
    loop {
        if i < 0 {
            i = -1 - i;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i;
        }
    }
}

fn naive_hmse(x: &GrayImage, y: &BinaryImage, size: usize) -> f64 {
    let kernel = gaussian_lowpass(size).unwrap();
    let r = (size / 2) as isize;
    let (w, h) = (x.width() as isize, x.height() as isize);
    let diff = |row: isize, col: isize| x.get(row as usize, col as usize) as f64 - y.get(row as usize, col as usize) as f64;
    let mut total = 0.0;
    for row in 0..h {
        for col in 0..w {
            let mut acc = 0.0;
            for dm in -r..=r {
                for dn in -r..=r {
                    acc += kernel.at(dm, dn) * diff(mirror(row + dm, h), mirror(col + dn, w));
                }
            }
            total += acc * acc;
        }
    }
    total / (w * h) as f64
}

fn ac11() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for size in [7usize, 15, 31] {
        let kernel = gaussian_lowpass(size).unwrap();
        for _ in 0..50 {
            let (w, h) = (rng.gen_range(8..48), rng.gen_range(8..48));
            let x = GrayImage::from_fn(w, h, |_, _| rng.gen());
            let y = BinaryImage::from_ink(w, h, (0..w * h).map(|_| rng.gen::<bool>()));
            let fast = hmse(&x, &y, &kernel).unwrap();
            let slow = naive_hmse(&x, &y, size);
            worst = worst.max((fast - slow).abs() / slow.abs().max(f64::MIN_POSITIVE));
        }
    }
    outcome(worst <= 1e-9, format!("max relative deviation {worst:.2e}"))
}

fn ac12() -> Outcome {
    let n = 32usize;
    let cfg = DbsConfig::default();
    let x = constant_patch(64, n, n);
    let run = dmdbs_run(&x, &cfg).unwrap();
    let kernel = cfg.kernel(cfg.scale_multiplier).unwrap();
    let r = kernel.radius() as isize;

    // Toroidal interaction matrix over all pixel pairs.
    let pixels = n * n;
    let mut c = vec![0.0f64; pixels * pixels];
    for p in 0..pixels {
        let (py, px) = ((p / n) as isize, (p % n) as isize);
        for dm in -r..=r {
            for dn in -r..=r {
                let qy = (py + dm).rem_euclid(n as isize) as usize;
                let qx = (px + dn).rem_euclid(n as isize) as usize;
                c[p * pixels + qy * n + qx] += kernel.at(dm, dn);
            }
        }
    }
    let ink: Vec<bool> = run.image.data().iter().map(|&v| v == 0).collect();
    let e: Vec<f64> = ink
        .iter()
        .map(|&d| d as u8 as f64 - (1.0 - 64.0 / 255.0))
        .collect();
    let ce: Vec<f64> = (0..pixels)
        .map(|p| (0..pixels).map(|q| c[p * pixels + q] * e[q]).sum())
        .collect();
    let energy: f64 = e.iter().zip(&ce).map(|(a, b)| a * b).sum();
    let reported = dbs_cost(&x, &run.image, &cfg).unwrap();
    let consistent = (energy - reported).abs() <= 1e-9 * energy.abs().max(1.0);

    let change = |p: usize| if ink[p] { -1.0 } else { 1.0 };
    let mut best = f64::INFINITY;
    for p in 0..pixels {
        let d = change(p);
        best = best.min(2.0 * d * ce[p] + c[p * pixels + p]);
    }
    for p in (0..pixels).filter(|&p| ink[p]) {
        for q in (0..pixels).filter(|&q| !ink[q]) {
            let delta = -2.0 * ce[p] + 2.0 * ce[q] + c[p * pixels + p] + c[q * pixels + q]
                - 2.0 * c[p * pixels + q];
            best = best.min(delta);
        }
    }
    outcome(
        consistent && best >= -1e-9,
        format!(
            "energy {energy:.6} (reported {reported:.6}), dots {}, best move delta {best:.3e}",
            ink.iter().filter(|&&d| d).count()
        ),
    )
}

fn main() {
    let criteria: [(&str, &str, fn() -> Outcome); 12] = [
        ("AC1", "wavelength model", ac1),
        ("AC2", "kernel ladder", ac2),
        ("AC3", "gather engine equals scatter simulator", ac3),
        ("AC4", "parallel determinism", ac4),
        ("AC5", "tone preservation", ac5),
        ("AC6", "stacking and extreme tones", ac6),
        ("AC7", "aligned vs randomized spectral bias", ac7),
        ("AC8", "class tiling homogeneity", ac8),
        ("AC9", "welch variance reduction", ac9),
        ("AC10", "optimizer contract", ac10),
        ("AC11", "metric oracle", ac11),
        ("AC12", "dbs local minimum", ac12),
    ];
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| a.starts_with("AC"))
        .collect();
    let mut unexpected = Vec::new();
    let mut passed = 0;
    let mut ran = 0;
    for (id, name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| f == id) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        ran += 1;
        let status = if o.pass { "PASS" } else { "FAIL" };
        println!(
            "{status} {id} {name} [{:.1}s]: {}",
            start.elapsed().as_secs_f64(),
            o.detail
        );
        if o.pass {
            passed += 1;
        } else if !KNOWN_RED.contains(&id) {
            unexpected.push(id);
        }
    }
    println!("acceptance: {passed}/{ran} criteria pass; known red: {}", KNOWN_RED.join(", "));
    if !unexpected.is_empty() {
        println!("unexpected failures: {}", unexpected.join(", "));
        std::process::exit(1);
    }
}
