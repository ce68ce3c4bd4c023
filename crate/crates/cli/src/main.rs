use std::collections::HashMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dotdiff_core::classtiling::{quantize_prototype, validate_ct, ClassMatrix, ClassTiling, ValidateOptions};
use dotdiff_core::dbs::{build_mask_stack, groundtruth_cached, DbsConfig, MaskStack};
use dotdiff_core::dotdiffusion::{halftone_with, DiffusedMatrix, HalftoneOptions, ParameterTable, Renderer};
use dotdiff_core::hvs::{gaussian_lowpass, hmse, hpsnr_from_hmse, DEFAULT_SCALE};
use dotdiff_core::image::{constant_patch, ramp, RampDirection};
use dotdiff_core::optimizer::{
    init_table, load_groundtruth, optimize_stage, OptimizationTrace, OptimizerConfig, SimplexConfig,
};
use dotdiff_core::spectrum::{bartlett_apsd, randomized_apsd, welch_apsd};
use dotdiff_core::{pnm, Error};

#[derive(Parser)]
#[command(name = "dotdiff", version, about = "Dot-diffusion halftoning toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Design the stacked mask family and write its prototype as PGM.
    BuildMasks {
        #[arg(long, default_value_t = 256)]
        size: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Viewing-scale constant of the visual models.
        #[arg(long, default_value_t = DEFAULT_SCALE)]
        scale: f64,
        /// Keep the base scale for extreme tones.
        #[arg(long)]
        no_scale_switch: bool,
    },
    /// Quantize a prototype into a class tiling.
    BuildCt {
        #[arg(long)]
        prototype: PathBuf,
        /// Class-matrix shape, e.g. 8x8.
        #[arg(long, default_value = "8x8")]
        cm: String,
        #[arg(long)]
        out: PathBuf,
        /// Print class counts and spectral impulse checks.
        #[arg(long)]
        verify: bool,
        #[arg(long, default_value_t = 0)]
        verify_seed: u64,
    },
    /// Halftone a PGM image.
    Halftone {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Proposed)]
        mode: Mode,
        #[arg(long)]
        ct: Option<PathBuf>,
        #[arg(long)]
        prototype: Option<PathBuf>,
        #[arg(long)]
        params: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        /// Threshold of the fixed-cm mode.
        #[arg(long, default_value_t = 128.0)]
        gamma: f64,
        /// Class matrix of the fixed-cm mode: `knuth` or `bayer<N>`.
        #[arg(long, default_value = "knuth")]
        class_matrix: String,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        #[arg(long, default_value_t = 2.0)]
        beta: f64,
        /// Reflect thresholds for tones at or above 128.
        #[arg(long)]
        mirror_gamma: bool,
    },
    /// Averaged power spectrum of a PBM halftone.
    Apsd {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum)]
        method: Method,
        #[arg(long, default_value_t = 128)]
        window: usize,
        #[arg(long, default_value_t = 50)]
        k: usize,
        /// Window placement seed (required for `random`).
        #[arg(long)]
        seed: Option<u64>,
        /// Vertical stride of `bartlett` (defaults to the window).
        #[arg(long)]
        step: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Log-scaled visualization with DC centered.
        #[arg(long)]
        png_like: Option<PathBuf>,
    },
    /// Optimize parameter-table rows.
    Optimize {
        #[arg(long, value_enum)]
        stage: Stage,
        /// Comma-separated tone rows, each below 128.
        #[arg(long, value_delimiter = ',', required = true)]
        tones: Vec<u8>,
        #[arg(long)]
        prototype: PathBuf,
        #[arg(long)]
        ct: PathBuf,
        #[arg(long)]
        gt_dir: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        /// Starting table; stage 2 requires the stage-1 result here.
        #[arg(long)]
        table: Option<PathBuf>,
        #[arg(long, default_value_t = 512)]
        patch_size: usize,
        #[arg(long, default_value_t = 50)]
        apsd_k: usize,
        #[arg(long, default_value_t = 0)]
        apsd_seed: u64,
        /// Seed of the ground-truth search.
        #[arg(long, default_value_t = 0)]
        dbs_seed: u64,
        /// Compute and cache missing ground-truth patterns.
        #[arg(long)]
        generate_gt: bool,
        #[arg(long, default_value_t = 200)]
        max_evals: usize,
        #[arg(long, default_value_t = 1000)]
        outer_max_iters: usize,
        #[arg(long, default_value_t = 1)]
        threads: usize,
    },
    /// Perceived error between a grayscale reference and a halftone.
    Metrics {
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        halftone: PathBuf,
        /// Lowpass size from the standard ladder (7, 15 or 31).
        #[arg(long)]
        kernel: Option<usize>,
        /// Any odd lowpass size.
        #[arg(long, conflicts_with = "kernel")]
        kernel_size: Option<usize>,
    },
    /// Write the initial (thresholding-only) parameter table.
    InitTable {
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a gray ramp.
    Ramp {
        #[arg(long)]
        width: usize,
        #[arg(long)]
        height: usize,
        #[arg(long, value_enum, default_value_t = Direction::Horizontal)]
        direction: Direction,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a constant gray patch.
    Patch {
        #[arg(long)]
        level: u8,
        #[arg(long)]
        width: usize,
        #[arg(long)]
        height: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Proposed,
    FixedCm,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Bartlett,
    Welch,
    Random,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Stage {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum Direction {
    Horizontal,
    Vertical,
}

enum CliError {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

fn parse_cm_shape(s: &str) -> CliResult<(usize, usize)> {
    let parsed = s
        .split_once(['x', 'X'])
        .and_then(|(r, c)| Some((r.parse().ok()?, c.parse().ok()?)));
    match parsed {
        Some((r, c)) if r > 0 && c > 0 && r * c <= 256 => Ok((r, c)),
        Some((r, c)) => usage(format!("class matrix {r}x{c} must have 1..=256 classes")),
        None => usage(format!("cannot parse class-matrix shape `{s}`, expected MxN")),
    }
}

fn parse_class_matrix(s: &str) -> CliResult<ClassMatrix> {
    if s == "knuth" {
        return Ok(ClassMatrix::knuth());
    }
    if let Some(n) = s.strip_prefix("bayer").and_then(|n| n.parse::<usize>().ok()) {
        if n.is_power_of_two() && n <= 16 {
            return Ok(ClassMatrix::bayer(n)?);
        }
    }
    usage(format!("unknown class matrix `{s}`, expected `knuth` or `bayer<N>`"))
}

fn write_file(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Runtime(Error::Io {
            path: path.to_path_buf(),
            source: e,
        }))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| {
        CliError::Runtime(Error::Io {
            path: path.to_path_buf(),
            source: e,
        })
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::BuildMasks {
            size,
            seed,
            out,
            scale,
            no_scale_switch,
        } => {
            if size < 64 {
                return usage(format!("--size must be at least 64, got {size}"));
            }
            if !(scale > 0.0) {
                return usage("--scale must be positive");
            }
            let cfg = DbsConfig {
                seed,
                scale_switch: !no_scale_switch,
                ..DbsConfig::default()
            }
            .with_scale(scale);
            build_mask_stack(size, &cfg)?.save(&out)?;
        }
        Command::BuildCt {
            prototype,
            cm,
            out,
            verify,
            verify_seed,
        } => {
            let (rows, cols) = parse_cm_shape(&cm)?;
            let stack = MaskStack::load(&prototype)?;
            let ct = quantize_prototype(&stack, rows, cols)?;
            ct.save(&out)?;
            if verify {
                let size = ct.size();
                let opts = ValidateOptions {
                    window: ValidateOptions::default().window.min(size),
                    seed: verify_seed,
                    ..ValidateOptions::default()
                };
                let report = validate_ct(&ct, &opts)?;
                println!(
                    "classes={} min_count={} max_count={}",
                    ct.num_classes(),
                    report.min_count,
                    report.max_count
                );
                let offending = report.offending_orders();
                println!("impulse_orders={}", offending.len());
                for o in offending {
                    println!("order {o} has spectral impulses");
                }
            }
        }
        Command::Halftone {
            input,
            out,
            mode,
            ct,
            prototype,
            params,
            threads,
            gamma,
            class_matrix,
            alpha,
            beta,
            mirror_gamma,
        } => {
            if threads == 0 {
                return usage("--threads must be at least 1");
            }
            match mode {
                Mode::Proposed => {
                    let (Some(ct), Some(prototype), Some(params)) = (ct, prototype, params) else {
                        return usage("proposed mode needs --ct, --prototype and --params");
                    };
                    let x = pnm::load_pgm(&input)?;
                    let tiling = ClassTiling::load(&ct)?;
                    let stack = MaskStack::load(&prototype)?;
                    let table = ParameterTable::load(&params)?;
                    let opts = HalftoneOptions {
                        threads,
                        mirror_gamma,
                    };
                    pnm::save_pbm(&halftone_with(&x, &tiling, &stack, &table, &opts)?, &out)?;
                }
                Mode::FixedCm => {
                    if !(0.0..=255.0).contains(&gamma) {
                        return usage("--gamma must lie in [0, 255]");
                    }
                    let cm = parse_class_matrix(&class_matrix)?;
                    let dm = DiffusedMatrix::new(alpha, beta).map_err(|e| CliError::Usage(e.to_string()))?;
                    let x = pnm::load_pgm(&input)?;
                    let mut r = Renderer::fixed(&x, &cm, dm, gamma, threads)?;
                    r.render();
                    pnm::save_pbm(&r.output(), &out)?;
                }
            }
        }
        Command::Apsd {
            input,
            method,
            window,
            k,
            seed,
            step,
            out,
            png_like,
        } => {
            if window == 0 || k == 0 {
                return usage("--window and --k must be positive");
            }
            if matches!(method, Method::Random) && seed.is_none() {
                return usage("--method random requires --seed");
            }
            let h = pnm::load_pbm(&input)?;
            let apsd = match method {
                Method::Bartlett => bartlett_apsd(&h, window, window, step.unwrap_or(window), k)?,
                Method::Welch => welch_apsd(&h, window, window, k)?,
                Method::Random => randomized_apsd(&h, window, window, k, seed.unwrap())?,
            };
            let mut w = write_file(&out)?;
            apsd.write_csv(&mut w).map_err(io_err(&out))?;
            if let Some(p) = png_like {
                pnm::save_pgm(&apsd.visualize(), &p)?;
            }
        }
        Command::Optimize {
            stage,
            tones,
            prototype,
            ct,
            gt_dir,
            out,
            trace,
            table,
            patch_size,
            apsd_k,
            apsd_seed,
            dbs_seed,
            generate_gt,
            max_evals,
            outer_max_iters,
            threads,
        } => {
            if stage == Stage::Two && table.is_none() {
                return usage("--stage 2 needs the stage-1 table via --table");
            }
            if let Some(g) = tones.iter().find(|&&g| g >= 128) {
                return usage(format!("tone {g} is outside 0..128"));
            }
            if patch_size < 128 {
                return usage("--patch-size must be at least the 128-pixel window");
            }
            let cfg = OptimizerConfig {
                tones: tones.clone(),
                patch_size,
                apsd_k,
                apsd_seed,
                simplex: SimplexConfig {
                    max_evals,
                    ..SimplexConfig::default()
                },
                outer_max_iters,
                threads: threads.max(1),
                ..OptimizerConfig::default()
            };
            let stack = MaskStack::load(&prototype)?;
            let tiling = ClassTiling::load(&ct)?;
            let mut current = match &table {
                Some(p) => ParameterTable::load(p)?,
                None => init_table(),
            };
            let mut full = OptimizationTrace::default();
            if stage != Stage::Two {
                let dbs = DbsConfig {
                    seed: dbs_seed,
                    ..DbsConfig::default()
                };
                let mut gt = HashMap::new();
                for &g in &tones {
                    let pattern = if generate_gt {
                        groundtruth_cached(g, patch_size, &dbs, &gt_dir)?
                    } else {
                        load_groundtruth(&gt_dir, g, patch_size, dbs_seed)?
                    };
                    gt.insert(g, pattern);
                }
                let (t, tr) = optimize_stage(&current, 1, &cfg, &tiling, &stack, gt)?;
                current = t;
                full.extend(tr);
            }
            if stage != Stage::One {
                let (t, tr) = optimize_stage(&current, 2, &cfg, &tiling, &stack, HashMap::new())?;
                current = t;
                full.extend(tr);
            }
            current.save(&out)?;
            full.save_jsonl(&trace)?;
            for &(s, g, init) in &full.initial {
                println!(
                    "stage={s} g={g} initial={init} final={} commits={}",
                    full.final_cost(s, g).unwrap_or(init),
                    full.costs(s, g).len()
                );
            }
        }
        Command::Metrics {
            reference,
            halftone,
            kernel,
            kernel_size,
        } => {
            let size = match (kernel, kernel_size) {
                (Some(k @ (7 | 15 | 31)), None) => k,
                (Some(k), None) => return usage(format!("--kernel must be 7, 15 or 31, got {k}")),
                (None, Some(k)) if k >= 3 && k % 2 == 1 => k,
                (None, Some(k)) => return usage(format!("--kernel-size must be odd and at least 3, got {k}")),
                (None, None) => 15,
                (Some(_), Some(_)) => unreachable!("clap rejects both"),
            };
            let x = pnm::load_pgm(&reference)?;
            let y = pnm::load_pbm(&halftone)?;
            let e = hmse(&x, &y, &gaussian_lowpass(size)?)?;
            println!("HMSE={e} HPSNR={} dB", hpsnr_from_hmse(e));
        }
        Command::InitTable { out } => init_table().save(&out)?,
        Command::Ramp {
            width,
            height,
            direction,
            out,
        } => {
            let dir = match direction {
                Direction::Horizontal => RampDirection::Horizontal,
                Direction::Vertical => RampDirection::Vertical,
            };
            let img = ramp(width, height, dir).map_err(|e| CliError::Usage(e.to_string()))?;
            pnm::save_pgm(&img, &out)?;
        }
        Command::Patch {
            level,
            width,
            height,
            out,
        } => {
            if width == 0 || height == 0 {
                return usage("patch dimensions must be positive");
            }
            pnm::save_pgm(&constant_patch(level, width, height), &out)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
