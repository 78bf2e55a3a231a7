//! Command-line interface: `gen-data`, `train`, `segment`, `eval`, `overlay`.
//!
//! A JSON [`RunConfig`] given with `--config-file` supplies settings; flags
//! typed on the command line override it.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::fusion::segment;
use crate::imaging::load_grayscale;
use crate::mask::{BinaryMask, ScoreMap};
use crate::metrics::{evaluate, format_table, write_reports, Ablation, EvalSample};
use crate::model::SegFinNet;
use crate::overlay::render_overlay;
use crate::synthdata::{generate_dataset, load_dataset, load_eval_set, write_dataset};
use crate::trainer::{load_checkpoint, load_checkpoint_expecting, train, Optimizer, TrainOutputs};

pub const MODEL_DIR_ENV: &str = "SEGFINNET_MODEL_DIR";
pub const DEFAULT_CHECKPOINT: &str = "segfinnet.ckpt";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "segfinnet", version, about = "Latent fingerprint segmentation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic latent dataset with masks and attention boxes.
    GenData(GenDataArgs),
    /// Train a model on a dataset directory.
    Train(TrainArgs),
    /// Segment one image; writes <name>_mask.png and <name>_heat.png.
    Segment(SegmentArgs),
    /// Evaluate a model on a dataset under the ablation configurations.
    Eval(EvalArgs),
    /// Render a mask boundary (and optionally a heatmap) over an image.
    Overlay(OverlayArgs),
}

#[derive(Debug, Args)]
pub struct CommonArgs {
    /// JSON run configuration; flags given explicitly take precedence.
    #[arg(long)]
    pub config_file: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct ModelLocation {
    /// Checkpoint path [default: <model-dir>/segfinnet.ckpt].
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Directory holding the default checkpoint.
    #[arg(long, env = MODEL_DIR_ENV, default_value = ".")]
    pub model_dir: PathBuf,
}

impl ModelLocation {
    fn path(&self) -> PathBuf {
        self.model.clone().unwrap_or_else(|| self.model_dir.join(DEFAULT_CHECKPOINT))
    }
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 300, value_parser = clap::value_parser!(u64).range(1..))]
    pub count: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Side length of the square images.
    #[arg(long, default_value_t = 256)]
    pub image_size: usize,
    /// Ridge period in pixels.
    #[arg(long, default_value_t = 9.0)]
    pub ridge_period: f64,
    #[arg(long, default_value_t = 1)]
    pub fingermarks: usize,
    /// Background clutter in [0, 1].
    #[arg(long, default_value_t = 0.5)]
    pub clutter: f64,
    /// Probability that a print carries an examiner marker.
    #[arg(long, default_value_t = 0.5)]
    pub marker_probability: f64,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory written by gen-data.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to write [default: <model-dir>/segfinnet.ckpt]. The best
    /// validation checkpoint goes to <out>.best and the loss log to
    /// <out>.log.jsonl.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, env = MODEL_DIR_ENV, default_value = ".")]
    pub model_dir: PathBuf,
    /// Total iterations.
    #[arg(long, default_value_t = 2000)]
    pub iters: usize,
    /// Iterations at the first learning rate (capped at --iters unless given).
    #[arg(long, default_value_t = 600)]
    pub phase1_iters: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 0.0001)]
    pub lr_late: f64,
    #[arg(long, default_value_t = 0.0001)]
    pub weight_decay: f64,
    /// Sampled anchors per image.
    #[arg(long, default_value_t = 32)]
    pub rois: usize,
    /// Images per step.
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    #[arg(long, default_value_t = 2.0)]
    pub alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    pub beta: f64,
    #[arg(long, default_value_t = 2.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0.8)]
    pub lambda: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "adam")]
    pub optimizer: OptimizerArg,
    /// Disable geometric augmentation.
    #[arg(long)]
    pub no_augment: bool,
    /// Samples held out from the end of the dataset for validation.
    #[arg(long, default_value_t = 10)]
    pub validation_count: usize,
    /// Validate every N iterations.
    #[arg(long, default_value_t = 500)]
    pub eval_every: usize,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum OptimizerArg {
    Sgd,
    Adam,
}

#[derive(Debug, Args)]
pub struct FusionArgs {
    /// Skip attention filtering.
    #[arg(long)]
    pub no_attention: bool,
    /// Use only the original rendering, without voting.
    #[arg(long)]
    pub no_voting: bool,
    /// Minimum votes for a foreground pixel.
    #[arg(long, default_value_t = 3)]
    pub votes: usize,
    #[arg(long, default_value_t = 0.7)]
    pub detection_threshold: f64,
    #[arg(long, default_value_t = 0.5)]
    pub pixel_threshold: f64,
    /// Minimum fraction of a box covered by attention regions.
    #[arg(long, default_value_t = 0.7)]
    pub attention_threshold: f64,
    #[arg(long, default_value_t = 0.5)]
    pub nms_iou: f64,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    /// Input latent image.
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    /// Also write <name>_overlay.png.
    #[arg(long)]
    pub overlay: bool,
    #[command(flatten)]
    pub location: ModelLocation,
    #[command(flatten)]
    pub fusion: FusionArgs,
    #[command(flatten)]
    pub common: CommonArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset directory with images/, masks/ and manifest.json.
    #[arg(long)]
    pub data: PathBuf,
    /// Evaluate one configuration only: none, am, vf, full (or no-am, no-vf).
    #[arg(long)]
    pub config: Option<String>,
    /// Writes eval_table.txt and eval_report.json here.
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub location: ModelLocation,
    #[command(flatten)]
    pub fusion: FusionArgs,
    /// JSON run configuration; flags given explicitly take precedence.
    #[arg(long)]
    pub config_file: Option<PathBuf>,
    /// Worker threads (0 = one per core).
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct OverlayArgs {
    #[arg(long)]
    pub image: PathBuf,
    /// Binary mask image (nonzero = foreground).
    #[arg(long)]
    pub mask: PathBuf,
    /// Optional heatmap image, blended under the boundary.
    #[arg(long)]
    pub heatmap: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn explicit(m: &ArgMatches, id: &str) -> bool {
    matches!(m.value_source(id), Some(ValueSource::CommandLine | ValueSource::EnvVariable))
}

fn base_config(file: Option<&Path>) -> Result<RunConfig> {
    match file {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn set_threads(workers: usize) -> Result<()> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build_global()
        .map_err(|e| Error::validation(format!("cannot start {workers} worker threads: {e}")))
}

macro_rules! override_fields {
    ($m:expr; $($id:literal => $dst:expr, $val:expr;)*) => {
        $(if explicit($m, $id) { $dst = $val; })*
    };
}

impl GenDataArgs {
    pub fn resolve(&self, m: &ArgMatches) -> Result<RunConfig> {
        let mut c = base_config(self.common.config_file.as_deref())?;
        override_fields! { m;
            "image_size" => c.synth.image_size, self.image_size;
            "ridge_period" => c.synth.ridge_period, self.ridge_period;
            "fingermarks" => c.synth.n_fingermarks, self.fingermarks;
            "clutter" => c.synth.clutter_level, self.clutter;
            "marker_probability" => c.synth.marker_probability, self.marker_probability;
        }
        c.synth.validate()?;
        Ok(c)
    }
}

impl TrainArgs {
    pub fn resolve(&self, m: &ArgMatches) -> Result<RunConfig> {
        let mut c = base_config(self.common.config_file.as_deref())?;
        let t = &mut c.train;
        override_fields! { m;
            "iters" => t.total_iters, self.iters;
            "phase1_iters" => t.phase1_iters, self.phase1_iters;
            "lr" => t.lr_phase1, self.lr;
            "lr_late" => t.lr_phase2, self.lr_late;
            "weight_decay" => t.weight_decay, self.weight_decay;
            "rois" => t.roi_samples_per_image, self.rois;
            "batch" => t.images_per_step, self.batch;
            "alpha" => t.loss.alpha, self.alpha;
            "beta" => t.loss.beta, self.beta;
            "gamma" => t.loss.gamma, self.gamma;
            "lambda" => t.loss.lambda, self.lambda;
            "seed" => t.seed, self.seed;
            "optimizer" => t.optimizer, match self.optimizer {
                OptimizerArg::Sgd => Optimizer::Sgd,
                OptimizerArg::Adam => Optimizer::Adam,
            };
            "no_augment" => t.augment, !self.no_augment;
            "validation_count" => t.validation_count, self.validation_count;
            "eval_every" => t.eval_every, self.eval_every;
        }
        if !explicit(m, "phase1_iters") {
            t.phase1_iters = t.phase1_iters.min(t.total_iters);
        }
        c.train.validate()?;
        Ok(c)
    }

    fn out_path(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| self.model_dir.join(DEFAULT_CHECKPOINT))
    }
}

impl FusionArgs {
    fn apply(&self, m: &ArgMatches, c: &mut RunConfig) -> Result<()> {
        let f = &mut c.fusion;
        override_fields! { m;
            "no_attention" => f.use_attention, !self.no_attention;
            "no_voting" => f.use_voting, !self.no_voting;
            "votes" => f.votes, self.votes;
            "detection_threshold" => f.detector.detection_threshold, self.detection_threshold;
            "pixel_threshold" => f.pixel_threshold, self.pixel_threshold;
            "attention_threshold" => f.attention_threshold, self.attention_threshold;
            "nms_iou" => f.detector.nms_iou, self.nms_iou;
        }
        c.fusion.validate()
    }
}

impl SegmentArgs {
    pub fn resolve(&self, m: &ArgMatches) -> Result<RunConfig> {
        let mut c = base_config(self.common.config_file.as_deref())?;
        self.fusion.apply(m, &mut c)?;
        Ok(c)
    }
}

impl EvalArgs {
    pub fn resolve(&self, m: &ArgMatches) -> Result<RunConfig> {
        let mut c = base_config(self.config_file.as_deref())?;
        self.fusion.apply(m, &mut c)?;
        Ok(c)
    }
}

fn load_model(path: &Path, config_file: Option<&Path>, cfg: &RunConfig) -> Result<SegFinNet> {
    if !path.is_file() {
        return Err(Error::Checkpoint(format!("checkpoint {} not found", path.display())));
    }
    let (model, _) = match config_file {
        Some(_) => load_checkpoint_expecting(path, &cfg.model)?,
        None => load_checkpoint(path)?,
    };
    Ok(model)
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".to_string())
}

fn cmd_gen_data(a: &GenDataArgs, m: &ArgMatches) -> Result<()> {
    set_threads(a.common.workers)?;
    let cfg = a.resolve(m)?;
    let samples = generate_dataset(&cfg.synth, a.count as usize, a.seed)?;
    let manifest = write_dataset(&samples, &a.out, Some(&cfg.synth))?;
    println!("wrote {} samples to {}", manifest.ids.len(), a.out.display());
    Ok(())
}

fn cmd_train(a: &TrainArgs, m: &ArgMatches) -> Result<()> {
    set_threads(a.common.workers)?;
    let cfg = a.resolve(m)?;
    cfg.model.validate()?;
    let data = load_dataset(&a.data)?;
    let outputs = TrainOutputs::beside(&a.out_path());
    let result = train(&data, &cfg.model, &cfg.train, Some(&outputs))?;
    match result.log.last() {
        Some(e) => println!(
            "iteration {}: L_C {:.6} L_B {:.6} L_M {:.6} L_all {:.6}",
            e.iteration + 1,
            e.l_class,
            e.l_box,
            e.l_mask,
            e.l_total
        ),
        None => println!("no iterations run; initialised model saved"),
    }
    if let Some((iou, at)) = result.best {
        println!("best validation IoU {iou:.4} at iteration {at}");
    }
    println!("checkpoint: {}", outputs.checkpoint.display());
    println!("log: {}", outputs.log.display());
    Ok(())
}

fn cmd_segment(a: &SegmentArgs, m: &ArgMatches) -> Result<()> {
    set_threads(a.common.workers)?;
    let cfg = a.resolve(m)?;
    let model = load_model(&a.location.path(), a.common.config_file.as_deref(), &cfg)?;
    let img = load_grayscale(&a.image)?;
    let result = segment(&img, &model, &cfg.fusion)?;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    let name = file_stem(&a.image);
    let mask_path = a.out_dir.join(format!("{name}_mask.png"));
    let heat_path = a.out_dir.join(format!("{name}_heat.png"));
    result.mask.save(&mask_path)?;
    result.heatmap.save(&heat_path)?;
    if a.overlay {
        let path = a.out_dir.join(format!("{name}_overlay.png"));
        let rgb = render_overlay(&img, &result.mask, Some(&result.heatmap))?;
        rgb.save(&path).map_err(|source| Error::Image { path: path.clone(), source })?;
    }
    println!(
        "{}: {} instance(s), {} foreground pixels -> {}, {}",
        a.image.display(),
        result.instances.len(),
        result.mask.count(),
        mask_path.display(),
        heat_path.display()
    );
    Ok(())
}

fn cmd_eval(a: &EvalArgs, m: &ArgMatches) -> Result<()> {
    set_threads(a.workers)?;
    let cfg = a.resolve(m)?;
    let ablations = match &a.config {
        Some(name) => vec![name.parse::<Ablation>()?],
        None => Ablation::ALL.to_vec(),
    };
    let model = load_model(&a.location.path(), a.config_file.as_deref(), &cfg)?;
    let set = load_eval_set(&a.data)?;
    if set.is_empty() {
        return Err(Error::Dataset(format!("{} contains no images", a.data.display())));
    }
    let samples: Vec<EvalSample> = set
        .iter()
        .map(|e| EvalSample {
            id: e.image.id(),
            image: &e.image,
            ground_truth: e.mask.as_ref(),
        })
        .collect();
    let reports = ablations
        .into_iter()
        .map(|ab| evaluate(&samples, &model, &cfg.fusion, ab))
        .collect::<Result<Vec<_>>>()?;
    if reports.iter().all(|r| r.per_image.is_empty()) {
        return Err(Error::Dataset(format!("{} has no usable ground-truth masks", a.data.display())));
    }
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::io(&a.out_dir, e))?;
    write_reports(
        &reports,
        &a.out_dir.join("eval_table.txt"),
        &a.out_dir.join("eval_report.json"),
    )?;
    print!("{}", format_table(&reports));
    Ok(())
}

fn cmd_overlay(a: &OverlayArgs) -> Result<()> {
    let img = load_grayscale(&a.image)?;
    let mask = BinaryMask::load(&a.mask)?;
    let heat = a.heatmap.as_deref().map(ScoreMap::load).transpose()?;
    let rgb = render_overlay(&img, &mask, heat.as_ref())?;
    rgb.save(&a.out).map_err(|source| Error::Image { path: a.out.clone(), source })?;
    println!("wrote {}", a.out.display());
    Ok(())
}

/// Maps a pipeline error to the process exit code.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_numeric() {
        EXIT_NUMERIC
    } else {
        EXIT_USAGE
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let (_, sub) = matches.subcommand().expect("subcommand is required");
    let outcome = match &cli.command {
        Command::GenData(a) => cmd_gen_data(a, sub),
        Command::Train(a) => cmd_train(a, sub),
        Command::Segment(a) => cmd_segment(a, sub),
        Command::Eval(a) => cmd_eval(a, sub),
        Command::Overlay(a) => cmd_overlay(a),
    };
    match outcome {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matches(args: &[&str]) -> (Cli, ArgMatches) {
        let m = Cli::command().try_get_matches_from(args).unwrap();
        (Cli::from_arg_matches(&m).unwrap(), m)
    }

    #[test]
    fn flag_defaults_equal_config_defaults() {
        let (cli, m) = matches(&["segfinnet", "train", "--data", "d"]);
        let Command::Train(a) = cli.command else { panic!() };
        let sub = m.subcommand().unwrap().1;
        // Resolve with every flag forced, then compare with the struct defaults.
        let mut c = RunConfig::default();
        let t = &mut c.train;
        assert_eq!(
            (a.iters, a.phase1_iters, a.lr, a.lr_late, a.weight_decay, a.rois, a.batch),
            (t.total_iters, t.phase1_iters, t.lr_phase1, t.lr_phase2, t.weight_decay, t.roi_samples_per_image, t.images_per_step)
        );
        assert_eq!((a.alpha, a.beta, a.gamma, a.lambda), (t.loss.alpha, t.loss.beta, t.loss.gamma, t.loss.lambda));
        assert_eq!((a.seed, a.validation_count, a.eval_every, !a.no_augment), (t.seed, t.validation_count, t.eval_every, t.augment));
        t.seed = 0;
        assert_eq!(a.resolve(sub).unwrap(), c);

        let (cli, m) = matches(&["segfinnet", "segment", "--image", "x.png"]);
        let Command::Segment(a) = cli.command else { panic!() };
        let f = RunConfig::default().fusion;
        let g = &a.fusion;
        assert_eq!(
            (g.votes, g.detection_threshold, g.pixel_threshold, g.attention_threshold, g.nms_iou),
            (f.votes, f.detector.detection_threshold, f.pixel_threshold, f.attention_threshold, f.detector.nms_iou)
        );
        assert_eq!(a.resolve(m.subcommand().unwrap().1).unwrap(), RunConfig::default());

        let (cli, m) = matches(&["segfinnet", "gen-data", "--out", "d"]);
        let Command::GenData(a) = cli.command else { panic!() };
        let s = RunConfig::default().synth;
        assert_eq!(
            (a.image_size, a.ridge_period, a.fingermarks, a.clutter, a.marker_probability),
            (s.image_size, s.ridge_period, s.n_fingermarks, s.clutter_level, s.marker_probability)
        );
        assert_eq!(a.resolve(m.subcommand().unwrap().1).unwrap(), RunConfig::default());
    }

    #[test]
    fn explicit_flags_override_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"train": {"seed": 5, "total_iters": 40, "phase1_iters": 10, "loss": {"lambda": 0.5}}}"#).unwrap();
        let ps = p.to_str().unwrap();
        let (cli, m) = matches(&["segfinnet", "train", "--data", "d", "--config-file", ps, "--seed", "7"]);
        let Command::Train(a) = cli.command else { panic!() };
        let c = a.resolve(m.subcommand().unwrap().1).unwrap();
        assert_eq!(c.train.seed, 7);
        assert_eq!(c.train.total_iters, 40);
        assert_eq!(c.train.phase1_iters, 10);
        assert_eq!(c.train.loss.lambda, 0.5);
        assert_eq!(c.train.loss.alpha, 2.0);
    }

    #[test]
    fn short_runs_cap_first_phase() {
        let (cli, m) = matches(&["segfinnet", "train", "--data", "d", "--iters", "0"]);
        let Command::Train(a) = cli.command else { panic!() };
        let c = a.resolve(m.subcommand().unwrap().1).unwrap();
        assert_eq!((c.train.total_iters, c.train.phase1_iters), (0, 0));
        let (cli, m) = matches(&["segfinnet", "train", "--data", "d", "--iters", "5", "--phase1-iters", "9"]);
        let Command::Train(a) = cli.command else { panic!() };
        assert!(a.resolve(m.subcommand().unwrap().1).is_err());
    }

    #[test]
    fn ablation_flags() {
        let (cli, m) = matches(&["segfinnet", "segment", "--image", "x", "--no-attention", "--no-voting"]);
        let Command::Segment(a) = cli.command else { panic!() };
        let c = a.resolve(m.subcommand().unwrap().1).unwrap();
        assert!(!c.fusion.use_attention && !c.fusion.use_voting);
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run(["segfinnet", "gen-data", "--count", "0", "--out", "x"]), EXIT_USAGE);
        assert_eq!(run(["segfinnet", "train"]), EXIT_USAGE);
        assert_eq!(exit_code(&Error::numeric("x", "nan")), EXIT_NUMERIC);
        assert_eq!(exit_code(&Error::Dataset("x".into())), EXIT_USAGE);
    }

    #[test]
    fn help_shows_defaults() {
        for sub in ["gen-data", "train", "segment", "eval"] {
            let mut cmd = Cli::command();
            let help = cmd.find_subcommand_mut(sub).unwrap().render_long_help().to_string();
            assert!(help.contains("[default:"), "{sub}: {help}");
        }
        let mut cmd = Cli::command();
        let help = cmd.find_subcommand_mut("train").unwrap().render_long_help().to_string();
        for needle in ["[default: 0.001]", "[default: 0.0001]", "[default: 2]", "[default: 0.8]", "[default: 32]"] {
            assert!(help.contains(needle), "{needle}");
        }
        let help = cmd.find_subcommand_mut("segment").unwrap().render_long_help().to_string();
        for needle in ["[default: 3]", "[default: 0.7]", "[default: 0.5]", MODEL_DIR_ENV] {
            assert!(help.contains(needle), "{needle}");
        }
    }
}
