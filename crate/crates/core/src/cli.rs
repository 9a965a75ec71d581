//! Command-line front end. Every run writes `manifest.json` into its output
//! directory before any long computation and rewrites it on completion.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::{GeneratorConfig, ModulationMode};
use crate::editing::{apply_edit, compute_pca, interpolation_suite, mix_sources, pairwise_midpoints, PcaBasis};
use crate::error::Error;
use crate::inversion::{invert, invert_degraded, DegradationOp, InversionConfig, InversionTrace};
use crate::perception::{fit_stats, frechet_distance, ppl_segments, FeatureExtractor};
use crate::png_io::{export_png, grid, load_png};
use crate::rng::SeededRng;
use crate::selftest;
use crate::synthesis::{Generator, Space, StyleSource};
use crate::tensor::{load_tensor, save_tensor, ImageTensor};
use crate::training::{pooled_channel_moments, sample_images, train, Discriminator, SyntheticDataset, TrainConfig};

#[derive(Debug, Parser)]
#[command(name = "overparam", version, about = "Overparameterized latent spaces for a style-modulated generator")]
#[command(args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Common {
    /// Output directory (created if missing).
    #[arg(long, default_value = "out")]
    pub out_dir: PathBuf,
    /// RNG seed; chosen from the clock and recorded in the manifest if absent.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads. All kernels are single-threaded; the value is recorded only.
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// JSON file whose keys (flag names) supply defaults; command-line flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CheckpointArg {
    /// Generator checkpoint directory.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InversionArgs {
    /// Latent space: w, wplus, W or Wplus.
    #[arg(long, default_value = "W")]
    pub space: Space,
    /// Optimization steps.
    #[arg(long, default_value_t = 1000)]
    pub steps: usize,
    /// Adam learning rate.
    #[arg(long, default_value_t = 0.05)]
    pub lr: f32,
    /// Truncation factor applied before each step while truncation is active.
    #[arg(long, default_value_t = 0.9)]
    pub psi: f32,
    /// Fraction of the steps after which truncation is switched off.
    #[arg(long, default_value_t = 0.5)]
    pub disable_at: f32,
    /// Keep truncation on for every step.
    #[arg(long)]
    pub keep_trunc: bool,
    /// Weight of an extra pixel MSE term.
    #[arg(long, default_value_t = 0.0)]
    pub pixel_weight: f32,
}

impl InversionArgs {
    fn config(&self) -> InversionConfig {
        let mut cfg = InversionConfig {
            space: self.space,
            steps: self.steps,
            psi: self.psi,
            trunc_disable_fraction: self.disable_at,
            keep_truncation_throughout: self.keep_trunc,
            pixel_weight: self.pixel_weight,
            ..InversionConfig::default()
        };
        cfg.adam.lr = self.lr;
        cfg
    }
}

/// A latent read from a tensor file or sampled from a seed.
#[derive(Debug, Clone, Args, Serialize)]
pub struct LatentArg {
    /// Latent tensor file (as written by `invert`); sampled when absent.
    #[arg(long)]
    pub latent: Option<PathBuf>,
    /// Space of the latent (file or sample).
    #[arg(long, default_value = "W")]
    pub space: Space,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a desk-scale generator on the synthetic dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        args: TrainArgs,
    },
    /// Sample images from a checkpoint.
    Generate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ckpt: CheckpointArg,
        #[command(flatten)]
        args: GenerateArgs,
    },
    /// Invert a target image into a latent space.
    Invert {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ckpt: CheckpointArg,
        /// Target PNG at the generator's resolution.
        #[arg(long)]
        target: Option<PathBuf>,
        #[command(flatten)]
        inv: InversionArgs,
    },
    /// Upsample a low-resolution image by inverting through a downsampler.
    Upsample {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ckpt: CheckpointArg,
        /// Low-resolution input PNG.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Downsampling factor between the generator output and the input.
        #[arg(long, default_value_t = 4)]
        factor: usize,
        #[command(flatten)]
        inv: InversionArgs,
    },
    /// Style mixing: layers below the crossover from content, the rest from style.
    Mix {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ckpt: CheckpointArg,
        #[command(flatten)]
        args: MixArgs,
    },
    /// Principal directions of the intermediate latent space.
    Pca {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ckpt: CheckpointArg,
        /// Number of mapped samples.
        #[arg(long, default_value_t = 10_000)]
        samples: usize,
    },
    /// Shift a latent along a principal direction.
    Edit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ckpt: CheckpointArg,
        #[command(flatten)]
        args: EditArgs,
    },
    /// Pairwise-midpoint interpolation study.
    Interp {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ckpt: CheckpointArg,
        #[command(flatten)]
        args: InterpArgs,
    },
    /// Feature distances of generated images against the synthetic dataset.
    Metrics {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        ckpt: CheckpointArg,
        #[command(flatten)]
        args: MetricsArgs,
    },
    /// Run the built-in invariant checks.
    Selftest {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct TrainArgs {
    /// Modulation mode: baseline or overparam.
    #[arg(long, default_value = "overparam")]
    pub mode: ModulationMode,
    /// Training steps.
    #[arg(long, default_value_t = 2000)]
    pub steps: usize,
    /// Images per step.
    #[arg(long, default_value_t = 8)]
    pub batch: usize,
    /// Adam learning rate for both networks.
    #[arg(long, default_value_t = 0.002)]
    pub lr: f32,
    /// Style-mixing probability.
    #[arg(long, default_value_t = 0.9)]
    pub mixing_prob: f32,
    /// R1 penalty weight.
    #[arg(long, default_value_t = 1.0)]
    pub r1_gamma: f32,
    /// Steps between R1 evaluations.
    #[arg(long, default_value_t = 16)]
    pub r1_interval: usize,
    /// Sample latent-matrix rows independently instead of correlated.
    #[arg(long)]
    pub uncorrelated: bool,
    /// Number of distinct synthetic images.
    #[arg(long, default_value_t = 4096)]
    pub dataset_size: usize,
    /// Steps between sample grids (0 disables).
    #[arg(long, default_value_t = 500)]
    pub sample_interval: usize,
    /// Steps between intermediate checkpoints (0 disables).
    #[arg(long, default_value_t = 500)]
    pub checkpoint_interval: usize,
    /// Steps between feature-distance evaluations (0 disables).
    #[arg(long, default_value_t = 0)]
    pub fid_interval: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct GenerateArgs {
    /// Number of images.
    #[arg(short = 'n', long = "count", default_value_t = 8)]
    pub count: usize,
    /// Latent space to sample in.
    #[arg(long, default_value = "W")]
    pub space: Space,
    /// Truncation toward the mean latent (1 disables).
    #[arg(long, default_value_t = 1.0)]
    pub psi: f32,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MixArgs {
    /// Content latent file; sampled when absent.
    #[arg(long)]
    pub content: Option<PathBuf>,
    /// Style latent file; sampled when absent.
    #[arg(long)]
    pub style: Option<PathBuf>,
    /// Space of both latents.
    #[arg(long, default_value = "W")]
    pub space: Space,
    /// Single crossover layer; every crossover 0..=L when absent.
    #[arg(long)]
    pub crossover: Option<usize>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EditArgs {
    /// PCA basis directory written by `pca`.
    #[arg(long)]
    pub basis: Option<PathBuf>,
    /// Principal component index (0 is the strongest).
    #[arg(long, default_value_t = 0)]
    pub component: usize,
    /// Comma-separated shift amounts.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-2,-1,0,1,2")]
    pub alpha: Vec<f32>,
    /// Interpret the shifts in units of the component's standard deviation.
    #[arg(long)]
    pub sigma_units: bool,
    #[command(flatten)]
    pub latent: LatentArg,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InterpArgs {
    /// Latent files; `--count` sampled latents when none are given.
    #[arg(long, num_args = 1..)]
    pub latents: Vec<PathBuf>,
    /// Number of sampled latents when no files are given.
    #[arg(long, default_value_t = 10)]
    pub count: usize,
    /// Space of the latents.
    #[arg(long, default_value = "W")]
    pub space: Space,
    /// Reference images drawn from the generator (`w` samples).
    #[arg(long, default_value_t = 256)]
    pub reference: usize,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct MetricsArgs {
    /// Generated and dataset images compared.
    #[arg(long, default_value_t = 256)]
    pub samples: usize,
    /// Path pairs for the perceptual path length.
    #[arg(long, default_value_t = 32)]
    pub ppl_pairs: usize,
    /// Space for path-length sampling.
    #[arg(long, default_value = "W")]
    pub space: Space,
    /// Two PNGs whose perceptual distance is reported as well.
    #[arg(long, num_args = 2)]
    pub compare: Vec<PathBuf>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub threads: usize,
    pub checkpoint_hash: Option<String>,
    pub outputs: Vec<PathBuf>,
    pub started_unix: u64,
    pub finished_unix: Option<u64>,
    pub status: String,
    pub version: String,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Parses `args` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match parse(&args) {
        Ok(c) => c,
        Err(Failure::Usage(msg)) => {
            eprintln!("{msg}");
            return 1;
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            return 2;
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            eprintln!("run with --help for usage");
            1
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn parse(args: &[OsString]) -> CliResult<Cli> {
    let clap_err = |e: clap::Error| {
        use clap::error::ErrorKind;
        if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
            let _ = e.print();
            std::process::exit(0);
        }
        Failure::Usage(e.render().to_string())
    };
    let matches = Cli::command().try_get_matches_from(args).map_err(clap_err)?;
    let config = matches.subcommand().and_then(|(_, m)| m.get_one::<PathBuf>("config").cloned());
    let Some(path) = config else {
        return Cli::from_arg_matches(&matches).map_err(clap_err);
    };
    let text = std::fs::read_to_string(&path).map_err(Error::from)?;
    let value: serde_json::Value = serde_json::from_str(&text).map_err(Error::from)?;
    let obj = value
        .as_object()
        .ok_or_else(|| Failure::Usage(format!("config {} must hold a JSON object", path.display())))?;
    let mut merged: Vec<OsString> = args[..2.min(args.len())].to_vec();
    for (key, v) in obj {
        let flag = format!("--{}", key.replace('_', "-"));
        match v {
            serde_json::Value::Bool(true) => merged.push(flag.into()),
            serde_json::Value::Bool(false) | serde_json::Value::Null => {}
            serde_json::Value::Array(items) => {
                merged.push(flag.into());
                merged.extend(items.iter().map(|i| json_scalar(i).into()));
            }
            other => {
                merged.push(flag.into());
                merged.push(json_scalar(other).into());
            }
        }
    }
    merged.extend_from_slice(&args[2.min(args.len())..]);
    let matches = Cli::command().try_get_matches_from(&merged).map_err(clap_err)?;
    Cli::from_arg_matches(&matches).map_err(clap_err)
}

fn json_scalar(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Output directory, resolved seed and manifest bookkeeping for one run.
struct Run {
    dir: PathBuf,
    rng: SeededRng,
    manifest: RunManifest,
}

impl Run {
    fn start(name: &str, common: &Common, config: serde_json::Value, g: Option<&Generator>) -> CliResult<Self> {
        if common.threads == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        let seed = common.seed.unwrap_or_else(|| {
            let s = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_nanos() as u64);
            eprintln!("no --seed given, using {s}");
            s
        });
        std::fs::create_dir_all(&common.out_dir).map_err(Error::from)?;
        let manifest = RunManifest {
            subcommand: name.into(),
            config,
            seed: Some(seed),
            threads: common.threads,
            checkpoint_hash: g.map(|g| format!("{:016x}", g.fingerprint())),
            outputs: Vec::new(),
            started_unix: now(),
            finished_unix: None,
            status: "running".into(),
            version: env!("CARGO_PKG_VERSION").into(),
        };
        let run = Self { dir: common.out_dir.clone(), rng: SeededRng::new(seed), manifest };
        run.write_manifest()?;
        Ok(run)
    }

    fn write_manifest(&self) -> CliResult<()> {
        let text = serde_json::to_string_pretty(&self.manifest).map_err(Error::from)?;
        std::fs::write(self.dir.join("manifest.json"), text).map_err(Error::from)?;
        Ok(())
    }

    fn path(&mut self, name: impl AsRef<Path>) -> PathBuf {
        let p = self.dir.join(name);
        self.manifest.outputs.push(p.clone());
        p
    }

    fn finish(mut self) -> CliResult<()> {
        self.manifest.finished_unix = Some(now());
        self.manifest.status = "ok".into();
        self.write_manifest()?;
        for p in &self.manifest.outputs {
            println!("{}", p.display());
        }
        Ok(())
    }
}

fn require<'a, T>(v: &'a Option<T>, flag: &str) -> CliResult<&'a T> {
    v.as_ref().ok_or_else(|| Failure::Usage(format!("missing required flag --{flag}")))
}

fn load_generator(ckpt: &CheckpointArg) -> CliResult<Generator> {
    Ok(Generator::load(require(&ckpt.checkpoint, "checkpoint")?)?)
}

fn to_json(v: &impl Serialize) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

fn latent_or_sample(g: &Generator, file: Option<&PathBuf>, space: Space, rng: &mut SeededRng) -> CliResult<StyleSource> {
    let src = match file {
        Some(path) => StyleSource::from_tensor(space, &load_tensor(path)?)?,
        None => StyleSource::sample(space, g, rng),
    };
    g.validate_source(&src)?;
    Ok(src)
}

fn write_trace(path: &Path, trace: &InversionTrace) -> CliResult<()> {
    let mut s = String::from("step,loss,truncated\n");
    for (i, (l, t)) in trace.losses.iter().zip(&trace.truncated).enumerate() {
        let _ = writeln!(s, "{i},{l},{}", u8::from(*t));
    }
    let _ = writeln!(s, "{},{},0", trace.losses.len(), trace.final_loss);
    std::fs::write(path, s).map_err(Error::from)?;
    Ok(())
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Train { common, args } => cmd_train(&common, &args),
        Command::Generate { common, ckpt, args } => cmd_generate(&common, &ckpt, &args),
        Command::Invert { common, ckpt, target, inv } => cmd_invert(&common, &ckpt, target.as_ref(), &inv),
        Command::Upsample { common, ckpt, input, factor, inv } => {
            cmd_upsample(&common, &ckpt, input.as_ref(), factor, &inv)
        }
        Command::Mix { common, ckpt, args } => cmd_mix(&common, &ckpt, &args),
        Command::Pca { common, ckpt, samples } => cmd_pca(&common, &ckpt, samples),
        Command::Edit { common, ckpt, args } => cmd_edit(&common, &ckpt, &args),
        Command::Interp { common, ckpt, args } => cmd_interp(&common, &ckpt, &args),
        Command::Metrics { common, ckpt, args } => cmd_metrics(&common, &ckpt, &args),
        Command::Selftest { common } => cmd_selftest(&common),
    }
}

fn cmd_train(common: &Common, args: &TrainArgs) -> CliResult<()> {
    let gcfg = GeneratorConfig::desk(args.mode);
    let mut tcfg = TrainConfig {
        steps: args.steps,
        batch: args.batch,
        style_mixing_prob: args.mixing_prob,
        correlated: !args.uncorrelated,
        r1_gamma: args.r1_gamma,
        r1_interval: args.r1_interval,
        sample_interval: args.sample_interval,
        checkpoint_interval: args.checkpoint_interval,
        fid_interval: args.fid_interval,
        dataset_size: args.dataset_size,
        ..TrainConfig::default()
    };
    tcfg.g_adam.lr = args.lr;
    tcfg.d_adam.lr = args.lr;
    tcfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let config = serde_json::json!({ "generator": gcfg, "training": tcfg, "args": to_json(args) });
    let mut run = Run::start("train", common, config, None)?;
    let mut init = run.rng.child(0);
    let mut g = Generator::new(gcfg, &mut init)?;
    let mut d = Discriminator::new(g.output_shape()[1], &mut init)?;
    let data = SyntheticDataset::new(run.rng.child(1).seed(), tcfg.dataset_size, g.output_shape()[1])?;
    let mut rng = run.rng.child(2);
    let report = train(&mut g, &mut d, &data, &tcfg, &mut rng, Some(&run.dir))?;
    run.manifest.outputs.extend(report.outputs.iter().cloned());
    if !report.fid_curve.is_empty() {
        let mut s = String::from("step,fid_proxy\n");
        for (step, f) in &report.fid_curve {
            let _ = writeln!(s, "{step},{f}");
        }
        std::fs::write(run.path("fid_curve.csv"), s).map_err(Error::from)?;
    }
    run.manifest.checkpoint_hash = Some(format!("{:016x}", g.fingerprint()));
    run.finish()
}

fn cmd_generate(common: &Common, ckpt: &CheckpointArg, args: &GenerateArgs) -> CliResult<()> {
    let g = load_generator(ckpt)?;
    let mut run = Run::start("generate", common, to_json(args), Some(&g))?;
    let mut images = Vec::with_capacity(args.count);
    for i in 0..args.count {
        let mut src = StyleSource::sample(args.space, &g, &mut run.rng);
        src.truncate_in_place(&g.mean_w, args.psi);
        g.validate_source(&src)?;
        let img = g.synthesize(&src)?;
        export_png(&img, run.path(format!("sample_{i:03}.png")))?;
        save_tensor(&src.to_tensor(), run.path(format!("latent_{i:03}.opt")))?;
        images.push(img);
    }
    if !images.is_empty() {
        let cols = (images.len() as f32).sqrt().ceil() as usize;
        export_png(&grid(&images, cols)?, run.path("grid.png"))?;
    }
    run.finish()
}

fn cmd_invert(common: &Common, ckpt: &CheckpointArg, target: Option<&PathBuf>, inv: &InversionArgs) -> CliResult<()> {
    let target = require(&target.cloned(), "target")?.clone();
    let g = load_generator(ckpt)?;
    let cfg = inv.config();
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let mut run = Run::start("invert", common, serde_json::json!({ "target": target, "inversion": cfg }), Some(&g))?;
    let y = load_png(&target)?;
    let trace = invert(&g, &y, &cfg, &FeatureExtractor::default(), &mut run.rng)?;
    write_trace(&run.path("trace.csv"), &trace)?;
    export_png(&trace.final_image, run.path("final.png"))?;
    save_tensor(&trace.final_source.to_tensor(), run.path("latent.opt"))?;
    println!("final perceptual loss {}", trace.final_loss);
    run.finish()
}

fn cmd_upsample(
    common: &Common,
    ckpt: &CheckpointArg,
    input: Option<&PathBuf>,
    factor: usize,
    inv: &InversionArgs,
) -> CliResult<()> {
    let input = require(&input.cloned(), "input")?.clone();
    let g = load_generator(ckpt)?;
    let mut cfg = inv.config();
    cfg.keep_truncation_throughout = true;
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    let deg = DegradationOp::Downsample { factor };
    let config = serde_json::json!({ "input": input, "factor": factor, "inversion": cfg });
    let mut run = Run::start("upsample", common, config, Some(&g))?;
    let low = load_png(&input)?;
    let trace = invert_degraded(&g, &low, deg, &cfg, &FeatureExtractor::default(), &mut run.rng)?;
    write_trace(&run.path("trace.csv"), &trace)?;
    export_png(&trace.final_image, run.path("upsampled.png"))?;
    export_png(&deg.upsample(&low), run.path("nearest.png"))?;
    save_tensor(&trace.final_source.to_tensor(), run.path("latent.opt"))?;
    run.finish()
}

fn cmd_mix(common: &Common, ckpt: &CheckpointArg, args: &MixArgs) -> CliResult<()> {
    let g = load_generator(ckpt)?;
    let l = g.num_layers();
    if args.crossover.is_some_and(|c| c > l) {
        return Err(Failure::Usage(format!("--crossover must be at most {l}")));
    }
    let mut run = Run::start("mix", common, to_json(args), Some(&g))?;
    let content = latent_or_sample(&g, args.content.as_ref(), args.space, &mut run.rng)?;
    let style = latent_or_sample(&g, args.style.as_ref(), args.space, &mut run.rng)?;
    let crossovers: Vec<usize> = match args.crossover {
        Some(c) => vec![c],
        None => (0..=l).collect(),
    };
    let mut row = Vec::new();
    for c in crossovers {
        let img = g.synthesize(&mix_sources(&g, &content, &style, c)?)?;
        export_png(&img, run.path(format!("mix_c{c}.png")))?;
        row.push(img);
    }
    let cols = row.len();
    export_png(&grid(&row, cols)?, run.path("mix_strip.png"))?;
    run.finish()
}

fn cmd_pca(common: &Common, ckpt: &CheckpointArg, samples: usize) -> CliResult<()> {
    let g = load_generator(ckpt)?;
    let mut run = Run::start("pca", common, serde_json::json!({ "samples": samples }), Some(&g))?;
    let basis = compute_pca(&g, &mut run.rng, samples)?;
    let dir = run.path("pca");
    basis.save(&dir)?;
    let mut s = String::from("component,variance\n");
    for (k, v) in basis.variances.iter().enumerate() {
        let _ = writeln!(s, "{k},{v}");
    }
    std::fs::write(run.path("variances.csv"), s).map_err(Error::from)?;
    println!("rank {} of {}", basis.rank, basis.dim());
    run.finish()
}

fn cmd_edit(common: &Common, ckpt: &CheckpointArg, args: &EditArgs) -> CliResult<()> {
    let basis_dir = require(&args.basis, "basis")?;
    let g = load_generator(ckpt)?;
    let basis = PcaBasis::load(basis_dir)?;
    if args.component >= basis.components.len() {
        return Err(Failure::Usage(format!("--component must be below {}", basis.components.len())));
    }
    let mut run = Run::start("edit", common, to_json(args), Some(&g))?;
    let src = latent_or_sample(&g, args.latent.latent.as_ref(), args.latent.space, &mut run.rng)?;
    let unit = if args.sigma_units { basis.variances[args.component].sqrt() } else { 1.0 };
    let mut row = Vec::new();
    for &a in &args.alpha {
        let edited = apply_edit(&src, &basis, args.component, a * unit)?;
        let img = g.synthesize(&edited)?;
        export_png(&img, run.path(format!("edit_k{}_a{a}.png", args.component)))?;
        row.push(img);
    }
    if !row.is_empty() {
        let cols = row.len();
        export_png(&grid(&row, cols)?, run.path("edit_strip.png"))?;
    }
    run.finish()
}

fn cmd_interp(common: &Common, ckpt: &CheckpointArg, args: &InterpArgs) -> CliResult<()> {
    let g = load_generator(ckpt)?;
    let mut run = Run::start("interp", common, to_json(args), Some(&g))?;
    let latents = if args.latents.is_empty() {
        (0..args.count).map(|_| StyleSource::sample(args.space, &g, &mut run.rng)).collect::<Vec<_>>()
    } else {
        args.latents
            .iter()
            .map(|p| latent_or_sample(&g, Some(p), args.space, &mut run.rng))
            .collect::<CliResult<Vec<_>>>()?
    };
    let reference = (0..args.reference)
        .map(|_| g.synthesize(&StyleSource::sample(Space::Vector, &g, &mut run.rng)))
        .collect::<crate::Result<Vec<_>>>()?;
    let fx = FeatureExtractor::default();
    let report = interpolation_suite(&g, &latents, &reference, &fx)?;
    let mids = pairwise_midpoints(&g, &latents)?;
    if !mids.is_empty() {
        let cols = (mids.len() as f32).sqrt().ceil() as usize;
        export_png(&grid(&mids, cols)?, run.path("midpoints.png"))?;
    }
    let fid = report.midpoint_fid.map_or(String::new(), |f| f.to_string());
    let csv = format!(
        "space,latents,pairs,midpoint_fid,mean_ppl\n{},{},{},{},{}\n",
        args.space, report.latents, report.pairs, fid, report.mean_ppl
    );
    std::fs::write(run.path("interp.csv"), csv).map_err(Error::from)?;
    run.finish()
}

fn cmd_metrics(common: &Common, ckpt: &CheckpointArg, args: &MetricsArgs) -> CliResult<()> {
    let g = load_generator(ckpt)?;
    let mut run = Run::start("metrics", common, to_json(args), Some(&g))?;
    let fx = FeatureExtractor::default();
    let res = g.output_shape()[1];
    let data = SyntheticDataset::new(0, args.samples.max(1), res)?;
    let real = data.batch(&(0..args.samples).collect::<Vec<_>>());
    let fake = sample_images(&g, args.samples, &mut run.rng)?;
    let mut rows: Vec<(String, f64)> = Vec::new();
    rows.push(("fid_proxy".into(), frechet_distance(&fit_stats(&fx, &fake)?, &fit_stats(&fx, &real)?)?));
    let mut ppl = 0.0f64;
    for _ in 0..args.ppl_pairs {
        let a = StyleSource::sample(args.space, &g, &mut run.rng);
        let b = StyleSource::sample(args.space, &g, &mut run.rng);
        ppl += ppl_segments(&g, &fx, &a, &b, 5)? as f64;
    }
    rows.push(("ppl_segments_mean".into(), ppl / args.ppl_pairs.max(1) as f64));
    for (c, ((gm, gs), (dm, ds))) in pooled_channel_moments(&fake).into_iter().zip(pooled_channel_moments(&real)).enumerate() {
        rows.push((format!("gen_mean_c{c}"), gm as f64));
        rows.push((format!("gen_std_c{c}"), gs as f64));
        rows.push((format!("data_mean_c{c}"), dm as f64));
        rows.push((format!("data_std_c{c}"), ds as f64));
    }
    if let [a, b] = args.compare.as_slice() {
        let (a, b): (ImageTensor, ImageTensor) = (load_png(a)?, load_png(b)?);
        rows.push(("perceptual_distance".into(), fx.perceptual_distance(&a, &b)? as f64));
    }
    let mut csv = String::from("metric,value\n");
    for (k, v) in &rows {
        let _ = writeln!(csv, "{k},{v}");
        println!("{k:>20} {v:.6}");
    }
    std::fs::write(run.path("metrics.csv"), csv).map_err(Error::from)?;
    run.finish()
}

fn cmd_selftest(common: &Common) -> CliResult<()> {
    let mut run = Run::start("selftest", common, serde_json::Value::Null, None)?;
    let results = selftest::run_all();
    let mut csv = String::from("check,passed,seconds,detail\n");
    println!("{:<24} {:<6} {:>8}  detail", "check", "result", "seconds");
    for r in &results {
        println!("{:<24} {:<6} {:>8.3}  {}", r.name, if r.passed { "PASS" } else { "FAIL" }, r.seconds, r.detail);
        let _ = writeln!(csv, "{},{},{:.3},\"{}\"", r.name, r.passed, r.seconds, r.detail.replace('"', "'"));
    }
    std::fs::write(run.path("selftest.csv"), csv).map_err(Error::from)?;
    let failed = results.iter().filter(|r| !r.passed).count();
    run.manifest.status = if failed == 0 { "ok".into() } else { format!("{failed} checks failed") };
    if failed > 0 {
        run.write_manifest()?;
        return Err(Failure::Runtime(Error::InvalidArgument(format!("{failed} self-test checks failed"))));
    }
    run.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_subcommand_has_help() {
        let cmd = Cli::command();
        cmd.clone().debug_assert();
        for sub in cmd.get_subcommands() {
            assert!(sub.get_about().is_some(), "{} lacks help", sub.get_name());
            for arg in sub.get_arguments() {
                assert!(arg.get_help().is_some(), "{} --{:?} lacks help", sub.get_name(), arg.get_long());
            }
        }
    }

    #[test]
    fn missing_checkpoint_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().to_str().unwrap();
        assert_eq!(run(["overparam", "generate", "--seed", "7", "--out-dir", out]), 1);
        assert_eq!(run(["overparam", "frobnicate"]), 1);
        assert_eq!(run(["overparam", "generate", "--bogus"]), 1);
    }

    #[test]
    fn config_file_supplies_flags() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("c.json");
        std::fs::write(&cfg, r#"{"seed": 3, "count": 2, "space": "w"}"#).unwrap();
        let args: Vec<OsString> =
            ["overparam", "generate", "--config", cfg.to_str().unwrap(), "--count", "5"].map(Into::into).to_vec();
        let Command::Generate { common, args, .. } = parse(&args).unwrap().command else { panic!() };
        assert_eq!(common.seed, Some(3));
        assert_eq!(args.count, 5);
        assert_eq!(args.space, Space::Vector);
    }
}
