use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cssr_core::checkpoint::Checkpoint;
use cssr_core::config::ConfigFile;
use cssr_core::ddgan::Generator;
use cssr_core::degradation::{degrade, make_dataset, synthetic_hr, DegradationParams, MANIFEST_NAME};
use cssr_core::durcan::{DuRcan, DuRcanConfig};
use cssr_core::metrics::{channel_histograms, evaluate_dirs, format_histograms};
use cssr_core::rectify::{read_correspondences, rectify_shots, RansacOptions};
use cssr_core::trainer::{train_joint, Dataset, TrainConfig};
use cssr_core::{gradsuite, Error, ImageBuffer, Tape};

const EXIT_USAGE: u8 = 2;
const EXIT_IO: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

#[derive(Parser)]
#[command(name = "cssr", version, about = "Camera-screen image super-resolution")]
struct Cli {
    /// Seed for every random choice; CSSR_SEED overrides it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Jointly train the degradation GAN and the restoration network.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Continue from a full training checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Super-resolve an image, or every image of a directory.
    Sr {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthesize low-resolution images with a trained degradation generator.
    GenLr {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Apply the synthetic degradation to an image, or build a paired dataset
    /// from a directory of HR images.
    Degrade {
        /// HR image or directory; omit with --synthetic.
        #[arg(long = "in", required_unless_present = "synthetic")]
        input: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Degradation parameter file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Use at most this many images of the input directory.
        #[arg(long)]
        count: Option<usize>,
        /// Generate this many synthetic screen-like HR images as the source.
        #[arg(long, conflicts_with = "input")]
        synthetic: Option<usize>,
        /// Side of the synthetic HR images.
        #[arg(long, default_value_t = 96)]
        size: usize,
    },
    /// Align shots of a screen to a reference frame and average them.
    Rectify {
        #[arg(long, value_delimiter = ',', required = true)]
        shots: Vec<PathBuf>,
        #[arg(long, value_delimiter = ',', required = true)]
        corrs: Vec<PathBuf>,
        /// Reference image defining the output frame.
        #[arg(long = "ref")]
        reference: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        threshold: f64,
        #[arg(long, default_value_t = 500)]
        iterations: usize,
    },
    /// PSNR and SSIM (luma) of every image in --sr against --hr.
    Eval {
        #[arg(long)]
        sr: PathBuf,
        #[arg(long)]
        hr: PathBuf,
        /// Also write per-channel histograms of the SR images.
        #[arg(long)]
        histograms: Option<PathBuf>,
    },
    /// Parameter count of a restoration architecture.
    Params {
        #[arg(long)]
        arch: String,
        #[arg(long)]
        channels: Option<usize>,
        #[arg(long)]
        reduction: Option<usize>,
    },
    /// Finite-difference verification of every op, block, network and loss.
    Gradcheck,
}

fn io_err(path: &Path, e: impl ToString) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        msg: e.to_string(),
    }
}

fn resolve_seed(flag: Option<u64>) -> Result<Option<u64>, String> {
    match std::env::var("CSSR_SEED") {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| format!("CSSR_SEED='{v}' is not an unsigned integer")),
        Err(_) => Ok(flag),
    }
}

fn image_files(dir: &Path) -> Result<Vec<PathBuf>, Error> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "ppm" | "png"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Run `f` on a single image or on every image of a directory.
fn map_images(input: &Path, out: &Path, f: impl Fn(&ImageBuffer) -> Result<ImageBuffer, Error>) -> Result<(), Error> {
    if !input.is_dir() {
        return f(&ImageBuffer::read(input)?)?.write(out);
    }
    fs::create_dir_all(out).map_err(|e| io_err(out, e))?;
    for src in image_files(input)? {
        let name = src.file_name().expect("listed files have names");
        f(&ImageBuffer::read(&src)?)?.write(out.join(name))?;
        println!("{}", out.join(name).display());
    }
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    let seed = resolve_seed(cli.seed).map_err(Error::Config)?;
    match cli.command {
        Command::Train { config, out, resume } => {
            let file = ConfigFile::load(&config)?;
            let base = config.parent().unwrap_or(Path::new("."));
            let mut cfg = TrainConfig::from_config(&file, base)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let Some(data) = cfg.data.clone() else {
                return Err(Error::Config(format!("{}: 'data' is required", config.display())));
            };
            let manifest = if data.is_dir() { data.join(MANIFEST_NAME) } else { data };
            let dataset = Dataset::from_manifest(&manifest, cfg.scale)?;
            let rows = train_joint(&cfg, dataset, &out, resume.as_deref())?;
            if let Some(last) = rows.last() {
                println!("{}", last.row());
            }
            println!("{}", out.join("durcan.cssr").display());
        }
        Command::Sr { model, input, out } => {
            let ckpt = Checkpoint::load(&model)?;
            let net = DuRcan::<f32>::from_checkpoint(&ckpt, "durcan.")?;
            map_images(&input, &out, |img| net.super_resolve(img))?;
        }
        Command::GenLr { model, input, out } => {
            let ckpt = Checkpoint::load(&model)?;
            let g = Generator::<f32>::from_checkpoint(&ckpt, "gen.")?;
            map_images(&input, &out, |img| {
                let mut tape = Tape::new();
                tape.freeze_store(&g.store);
                let y = tape.constant(img.to_tensor::<f32>());
                let lr = g.forward(&mut tape, y)?;
                ImageBuffer::from_tensor(tape.value(lr), 0)
            })?;
        }
        Command::Degrade {
            input,
            out,
            config,
            count,
            synthetic,
            size,
        } => {
            let mut p = match config {
                Some(c) => DegradationParams::from_config(&ConfigFile::load(&c)?, DegradationParams::default())?,
                None => DegradationParams::default(),
            };
            if let Some(s) = seed {
                p.seed = s;
            }
            let source = match (input, synthetic) {
                (_, Some(n)) => {
                    let dir = out.join("source");
                    fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
                    for i in 0..n {
                        synthetic_hr(size, size, p.seed.wrapping_add(i as u64)).write(dir.join(format!("synth_{i:04}.ppm")))?;
                    }
                    dir
                }
                (Some(path), None) => path,
                (None, None) => unreachable!("clap requires --in or --synthetic"),
            };
            if source.is_dir() {
                let n = count.unwrap_or(image_files(&source)?.len());
                let pairs = make_dataset(&source, &out, &p, n)?;
                println!("{} pairs -> {}", pairs.len(), out.join(MANIFEST_NAME).display());
            } else {
                degrade(&ImageBuffer::read(&source)?, &p)?.write(&out)?;
            }
        }
        Command::Rectify {
            shots,
            corrs,
            reference,
            out,
            threshold,
            iterations,
        } => {
            if shots.len() != corrs.len() {
                return Err(Error::Config(format!(
                    "{} shots but {} correspondence files",
                    shots.len(),
                    corrs.len()
                )));
            }
            let imgs = shots.iter().map(ImageBuffer::read).collect::<Result<Vec<_>, _>>()?;
            let sets = corrs.iter().map(|c| read_correspondences(c)).collect::<Result<Vec<_>, _>>()?;
            let dims = ImageBuffer::read(&reference)?.dims();
            let opts = RansacOptions {
                threshold_px: threshold,
                iterations,
                seed: seed.unwrap_or(0),
            };
            rectify_shots(&imgs, &sets, dims, &opts)?.write(&out)?;
        }
        Command::Eval { sr, hr, histograms } => {
            let report = evaluate_dirs(&sr, &hr)?;
            print!("{report}");
            if let Some(path) = histograms {
                let imgs = image_files(&sr)?.iter().map(ImageBuffer::read).collect::<Result<Vec<_>, _>>()?;
                fs::write(&path, format_histograms(&channel_histograms(&imgs))).map_err(|e| io_err(&path, e))?;
            }
        }
        Command::Params { arch, channels, reduction } => {
            let mut cfg = DuRcanConfig::preset(&arch)?;
            if let Some(c) = channels {
                cfg = cfg.with_channels(c);
            }
            if let Some(r) = reduction {
                cfg = cfg.with_reduction(r);
            }
            let net = DuRcan::<f32>::seeded(cfg, seed.unwrap_or(0))?;
            for (name, n) in net.breakdown() {
                println!("{name}\t{n}");
            }
            println!("total\t{}", net.count_parameters());
        }
        Command::Gradcheck => {
            let results = gradsuite::run_all(seed.unwrap_or(0))?;
            let failed = results.iter().filter(|r| !r.passed()).count();
            for r in &results {
                println!("{}", r.line());
            }
            println!("{} checks, {failed} failed", results.len());
            if failed > 0 {
                return Ok(ExitCode::from(EXIT_NUMERIC));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } => EXIT_IO,
        Error::Numeric(_) | Error::Estimation(_) => EXIT_NUMERIC,
        Error::Shape(_) | Error::Config(_) | Error::Contract(_) | Error::Domain(_) => EXIT_USAGE,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
