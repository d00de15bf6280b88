//! Command-line interface of the `safseg` binary.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use image::GenericImageView;

use crate::data::dataset::{read_map, write_map16};
use crate::data::{make_grid, stitch_with, synth_generate, Aggregation, Dataset, TileGrid};
use crate::error::{Error, Result};
use crate::metrics::MetricsConfig;
use crate::report::loss_curves;
use crate::segnet::Model;
use crate::tensor::Tensor;
use crate::trainer::{evaluate, parse_losses_csv, patches_of, train, Predictor, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "safseg", version, about = "Tumour-area segmentation: synthetic data, tiling, training and evaluation")]
pub struct Cli {
    /// Worker threads for evaluation; 1 is the reproducible mode.
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset directory.
    Synth(SynthArgs),
    /// Cut an image into square patches and write the grid manifest.
    Tile(TileArgs),
    /// Reassemble patches into a full-size map.
    Stitch(StitchArgs),
    /// Train a network on one cross-validation split.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset and write the metrics report.
    Eval(EvalArgs),
    /// Render loss curves as SVG.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub size: usize,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Consecutive images grouped into one slide.
    #[arg(long, default_value_t = 1)]
    pub per_wsi: usize,
    /// Number of cross-validation folds.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
}

#[derive(Debug, Args)]
pub struct TileArgs {
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub size: usize,
    #[arg(long, default_value_t = 0)]
    pub overlap: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct StitchArgs {
    #[arg(long)]
    pub grid: PathBuf,
    #[arg(long)]
    pub patches: PathBuf,
    /// `.png` writes 16-bit grayscale; any other extension the raw tensor format.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "mean")]
    pub aggregation: Aggregation,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Validation fold; the remaining folds are trained on.
    #[arg(long)]
    pub fold: usize,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed of the config file.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Suppress per-epoch progress lines.
    #[arg(long)]
    pub quiet: bool,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, required_unless_present = "oracle", conflicts_with = "oracle")]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    /// Fold to evaluate; all images when omitted.
    #[arg(long)]
    pub fold: Option<usize>,
    #[arg(long)]
    pub report: PathBuf,
    /// Predict the ground truth instead of running a checkpoint.
    #[arg(long)]
    pub oracle: bool,
    /// Patch size; defaults to the network input (the whole raster with `--oracle`).
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub overlap: usize,
    #[arg(long, default_value_t = 4)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    #[arg(long, default_value_t = 0.65)]
    pub clip_threshold: f64,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub curves: PathBuf,
    /// Output directory for the SVG files.
    #[arg(long)]
    pub out_svg: PathBuf,
}

/// Exit code for an error: 3 for numerical failures, 2 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numerical(_) => EXIT_NUMERICAL,
        _ => EXIT_INPUT,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth(a) => synth(&a),
        Command::Tile(a) => tile(&a),
        Command::Stitch(a) => stitch_cmd(&a),
        Command::Train(a) => train_cmd(&a),
        Command::Eval(a) => eval_cmd(&a, cli.threads),
        Command::Report(a) => report(&a),
    }
}

fn with_path(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn synth(a: &SynthArgs) -> Result<()> {
    if a.k == 0 {
        return Err(Error::InvalidArgument("--k must be at least 1".into()));
    }
    let samples = synth_generate(a.n, a.size, a.seed)?;
    let ds = Dataset::from_synth(samples, a.per_wsi, a.k, a.seed);
    fs::create_dir_all(&a.out).map_err(with_path(&a.out))?;
    ds.save(&a.out)?;
    println!("wrote {} images to {}", ds.len(), a.out.display());
    Ok(())
}

pub fn patch_name(i: usize) -> String {
    format!("patch_{i:04}.png")
}

fn tile(a: &TileArgs) -> Result<()> {
    if !a.image.exists() {
        return Err(Error::Missing(vec![a.image.display().to_string()]));
    }
    let img = image::open(&a.image)?;
    let (w, h) = img.dimensions();
    let grid = make_grid((h as usize, w as usize), a.size, a.overlap)?;
    fs::create_dir_all(&a.out).map_err(with_path(&a.out))?;
    for (i, &(r, c)) in grid.positions.iter().enumerate() {
        img.crop_imm(c as u32, r as u32, a.size as u32, a.size as u32).save(a.out.join(patch_name(i)))?;
    }
    fs::write(a.out.join("grid.json"), grid.to_json()).map_err(with_path(&a.out))?;
    println!("wrote {} patches to {}", grid.len(), a.out.display());
    Ok(())
}

fn stitch_cmd(a: &StitchArgs) -> Result<()> {
    if !a.grid.exists() {
        return Err(Error::Missing(vec![a.grid.display().to_string()]));
    }
    let grid = TileGrid::from_json(&fs::read_to_string(&a.grid).map_err(with_path(&a.grid))?)?;
    let paths: Vec<PathBuf> = (0..grid.len()).map(|i| a.patches.join(patch_name(i))).collect();
    let missing: Vec<String> = paths.iter().filter(|p| !p.exists()).map(|p| p.display().to_string()).collect();
    if !missing.is_empty() {
        return Err(Error::Missing(missing));
    }
    let maps = paths.iter().map(|p| read_map(p)).collect::<Result<Vec<Tensor<f32>>>>()?;
    let full = stitch_with(&maps, &grid, a.aggregation)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(with_path(dir))?;
    }
    if a.out.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
        write_map16(&a.out, &full)?;
    } else {
        fs::write(&a.out, full.to_raw_bytes()).map_err(with_path(&a.out))?;
    }
    println!("stitched {} patches into {}", grid.len(), a.out.display());
    Ok(())
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let text = fs::read_to_string(&a.config).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::Missing(vec![a.config.display().to_string()]),
        _ => with_path(&a.config)(e),
    })?;
    let mut cfg = TrainConfig::parse(&text)?;
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let (ph, pw) = cfg.network.input_size;
    if ph != pw {
        return Err(Error::Config(format!("training patches must be square, got {ph}x{pw}")));
    }
    let ds = Dataset::load(&a.data)?;
    if a.fold >= ds.k.max(1) {
        return Err(Error::InvalidArgument(format!("fold {} out of range for {} folds", a.fold, ds.k)));
    }
    let (tr, va) = ds.split(a.fold);
    let train_set = patches_of(&ds, &tr, ph, cfg.tile_overlap)?;
    let val_set = patches_of(&ds, &va, ph, cfg.tile_overlap)?;
    fs::create_dir_all(&a.out).map_err(with_path(&a.out))?;
    fs::write(a.out.join("config.txt"), cfg.to_text()).map_err(with_path(&a.out))?;

    let mut model = Model::<f32>::build(&cfg.network, cfg.seed)?;
    let epochs = cfg.epochs;
    let quiet = a.quiet;
    let outcome = train(&mut model, &train_set, &val_set, &cfg, |e| {
        if !quiet {
            let val = e.val.map_or(String::new(), |v| format!(" val {:.4}", v.total));
            let dice = e.val_dice.map_or(String::new(), |d| format!(" dice {d:.4}"));
            eprintln!("epoch {}/{epochs} lr {:.1e} train {:.4}{val}{dice} ({:.1}s)", e.epoch, e.lr, e.train.total, e.seconds);
        }
    })?;
    fs::write(a.out.join("losses.csv"), outcome.log.to_csv()).map_err(with_path(&a.out))?;
    fs::write(a.out.join("best.sgck"), &outcome.best_checkpoint).map_err(with_path(&a.out))?;
    model.save_file(a.out.join("final.sgck"))?;
    match outcome.best_dice {
        Some(d) => println!("best epoch {} with validation dice {d:.6}", outcome.best_epoch),
        None => println!("trained {epochs} epochs without a validation split"),
    }
    Ok(())
}

fn eval_cmd(a: &EvalArgs, threads: usize) -> Result<()> {
    let model = match &a.checkpoint {
        Some(p) => Some(Model::<f32>::load_file(p)?),
        None => None,
    };
    let ds = Dataset::load(&a.data)?;
    let samples: Vec<_> = match a.fold {
        Some(f) => ds.samples.iter().filter(|s| s.fold == f).cloned().collect(),
        None => ds.samples.clone(),
    };
    if samples.is_empty() {
        return Err(Error::InvalidArgument("no images selected for evaluation".into()));
    }
    let patch = match (a.patch, &model) {
        (Some(p), _) => p,
        (None, Some(m)) => {
            let (h, w) = m.config().input_size;
            if h != w {
                return Err(Error::InvalidArgument(format!("non-square network input {h}x{w} needs --patch")));
            }
            h
        }
        (None, None) => samples.iter().map(|s| s.size().0.min(s.size().1)).min().unwrap_or(1),
    };
    let pred = match &model {
        Some(m) => Predictor::Model(m),
        None => Predictor::Oracle,
    };
    let mcfg = MetricsConfig { binarize_threshold: a.threshold, clip_threshold: a.clip_threshold };
    let ev = evaluate(&pred, &samples, patch, a.overlap, a.batch, &mcfg, threads)?;
    if let Some(dir) = a.report.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(with_path(dir))?;
    }
    fs::write(&a.report, ev.report.to_csv()).map_err(with_path(&a.report))?;
    let m = ev.report.aggregate_metrics();
    println!("dice {:.6} jaccard {:.6} s_wsi {:.6} over {} slides", m.dc, m.js, ev.s_wsi, ev.per_wsi_js.len());
    Ok(())
}

fn report(a: &ReportArgs) -> Result<()> {
    if !a.curves.exists() {
        return Err(Error::Missing(vec![a.curves.display().to_string()]));
    }
    let rows = parse_losses_csv(&fs::read_to_string(&a.curves).map_err(with_path(&a.curves))?)?;
    fs::create_dir_all(&a.out_svg).map_err(with_path(&a.out_svg))?;
    for (stem, svg) in loss_curves(&rows) {
        fs::write(a.out_svg.join(format!("{stem}.svg")), svg).map_err(with_path(&a.out_svg))?;
    }
    println!("wrote loss curves to {}", a.out_svg.display());
    Ok(())
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn main_with_args<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
