use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use lfsynth::applications::{compare_fields, refocus};
use lfsynth::flownet::{forward, init_network, load_checkpoint, NetworkParams, NetworkSpec};
use lfsynth::io::{load_image, load_lightfield, save_image, save_lightfield};
use lfsynth::lightfield::{to_luminance, Angular, Image, LightField};
use lfsynth::losses::{lf_mean, lf_std, LossKind};
use lfsynth::postprocess::{aggregate_flow, DEFAULT_EPS, DEFAULT_RADIUS};
use lfsynth::scene::{generate_synthetic_lf, SceneSpec};
use lfsynth::training::{save_loss_csv, train, Example, TrainConfig, FINAL};
use lfsynth::warping::{synthesize, synthesize_with_flow};

/// Pseudo checkpoint path selecting freshly initialized parameters.
const ZERO_INIT: &str = "zero-init";
const NETWORK_FILE: &str = "network.json";

/// `AxB` pair, e.g. `8x8` or `64x48`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Pair(usize, usize);

impl FromStr for Pair {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (a, b) = s.split_once(['x', 'X']).ok_or_else(|| format!("expected AxB, got `{s}`"))?;
        let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("`{t}`: {e}"));
        let (a, b) = (parse(a)?, parse(b)?);
        if a == 0 || b == 0 {
            return Err(format!("extents in `{s}` must be positive"));
        }
        Ok(Pair(a, b))
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Loss {
    GlobalLocal,
    Global,
    Local,
    PixelL1,
}

impl From<Loss> for LossKind {
    fn from(l: Loss) -> Self {
        match l {
            Loss::GlobalLocal => LossKind::GlobalLocal,
            Loss::Global => LossKind::Global,
            Loss::Local => LossKind::Local,
            Loss::PixelL1 => LossKind::PixelL1,
        }
    }
}

#[derive(Parser)]
#[command(name = "lfsynth", version, about = "Light field synthesis from a single image")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a procedural layered scene to a light field file.
    GenScene(GenScene),
    /// Train the flow network on ground-truth light fields.
    Train(Train),
    /// Expand a single image into a light field.
    Synthesize(Synthesize),
    /// Synthesize with guided-filter flow aggregation before warping.
    Postprocess(Postprocess),
    /// PSNR / SSIM of a light field against ground truth, as JSON.
    Evaluate(Evaluate),
    /// Shift-and-add refocus.
    Refocus(Refocus),
    /// Export an epipolar plane image.
    Epi(Epi),
    /// Per-pixel mean and standard deviation images over all views.
    MeanVar(MeanVar),
}

#[derive(Args)]
struct GenScene {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "8x8")]
    angular: Pair,
    #[arg(long, default_value = "64x48")]
    size: Pair,
    #[arg(long, default_value_t = 0.8)]
    eta: f32,
    /// Number of foreground layers of a random scene; the default renders
    /// the two-plane scene.
    #[arg(long)]
    layers: Option<usize>,
    /// Scene description (JSON) to render instead of a generated one.
    #[arg(long, conflicts_with = "layers")]
    scene: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    bit_depth: u8,
    /// Also write the central view as a PNG.
    #[arg(long)]
    central: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Train {
    /// Ground-truth light field files; each one's central view is the input.
    #[arg(long, required = true, num_args = 1..)]
    gt: Vec<PathBuf>,
    /// Training configuration (JSON); flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    eta: Option<f32>,
    #[arg(long)]
    lambda_g: Option<f64>,
    #[arg(long)]
    lambda_e: Option<f64>,
    #[arg(long)]
    lambda_tv: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, value_enum)]
    loss: Option<Loss>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Log every this many iterations.
    #[arg(long, default_value_t = 50)]
    log_every: usize,
    /// Output directory for checkpoints, network.json, config.json and loss.csv.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Model {
    /// Checkpoint file, or `zero-init` for freshly initialized parameters.
    #[arg(long)]
    checkpoint: String,
    /// Network description; defaults to network.json beside the checkpoint,
    /// else the standard network for --angular.
    #[arg(long)]
    network: Option<PathBuf>,
    #[arg(long, default_value = "8x8")]
    angular: Pair,
    /// Seed of the zero-init parameters.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.8)]
    eta: f32,
}

#[derive(Args)]
struct Synthesize {
    #[command(flatten)]
    model: Model,
    /// Central RGB view.
    #[arg(long)]
    image: PathBuf,
    #[arg(long, default_value_t = 16)]
    bit_depth: u8,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Postprocess {
    #[command(flatten)]
    model: Model,
    #[arg(long)]
    image: PathBuf,
    #[arg(long, default_value_t = DEFAULT_RADIUS)]
    radius: usize,
    #[arg(long, default_value_t = DEFAULT_EPS)]
    eps: f32,
    #[arg(long, default_value_t = 16)]
    bit_depth: u8,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Evaluate {
    /// Predicted light field; alternatively give --checkpoint.
    #[arg(long, conflicts_with = "checkpoint")]
    pred: Option<PathBuf>,
    /// Synthesize from the ground truth's central view with this checkpoint.
    #[arg(long)]
    checkpoint: Option<String>,
    #[arg(long, requires = "checkpoint")]
    network: Option<PathBuf>,
    #[arg(long)]
    gt: PathBuf,
    #[arg(long, default_value_t = 0.8)]
    eta: f32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Report path; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Refocus {
    #[arg(long)]
    lf: PathBuf,
    #[arg(long, allow_negative_numbers = true)]
    alpha: f32,
    #[arg(long, default_value_t = 8)]
    bit_depth: u8,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct Epi {
    #[arg(long)]
    lf: PathBuf,
    /// Image row (horizontal EPI).
    #[arg(long, required_unless_present = "x")]
    y: Option<usize>,
    /// Angular row of the horizontal EPI; defaults to the central one.
    #[arg(long)]
    v: Option<usize>,
    /// Image column (vertical EPI).
    #[arg(long, conflicts_with = "y")]
    x: Option<usize>,
    /// Angular column of the vertical EPI; defaults to the central one.
    #[arg(long)]
    u: Option<usize>,
    #[arg(long, default_value_t = 8)]
    bit_depth: u8,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MeanVar {
    #[arg(long)]
    lf: PathBuf,
    #[arg(long)]
    mean: PathBuf,
    #[arg(long)]
    std: PathBuf,
    #[arg(long, default_value_t = 16)]
    bit_depth: u8,
}

fn load_lf(path: &Path) -> Result<LightField> {
    load_lightfield(path).with_context(|| format!("loading light field {}", path.display()))
}

fn load_img(path: &Path) -> Result<Image> {
    load_image(path).with_context(|| format!("loading image {}", path.display()))
}

fn gen_scene(a: GenScene) -> Result<()> {
    let scene = match (&a.scene, a.layers) {
        (Some(p), _) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing scene {}", p.display()))?,
        (None, Some(n)) => SceneSpec::random(a.seed, n),
        (None, None) => SceneSpec::two_plane(a.seed),
    };
    let angular = Angular::new(a.angular.0, a.angular.1);
    let Pair(w, h) = a.size;
    let lf = generate_synthetic_lf(&scene, angular, h, w, angular.default_center(), a.eta)?;
    save_lightfield(&lf, &a.out, a.bit_depth)?;
    if let Some(c) = &a.central {
        save_image(&lf.central_view(), c, a.bit_depth)?;
    }
    info!("wrote {}x{} views of {w}x{h} to {}", angular.u, angular.v, a.out.display());
    Ok(())
}

fn train_cmd(a: Train) -> Result<()> {
    let fields = a.gt.iter().map(|p| load_lf(p)).collect::<Result<Vec<_>>>()?;
    let first = &fields[0];
    let mut cfg = match &a.config {
        Some(p) => serde_json::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing config {}", p.display()))?,
        None => TrainConfig::default(),
    };
    cfg.angular = (first.angular().u, first.angular().v);
    cfg.spatial = (first.height(), first.width());
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = a.$f { cfg.$f = v.into(); })* };
    }
    set!(iterations, seed, eta, lambda_g, lambda_e, lambda_tv, lr, loss, batch_size, checkpoint_every);
    let data: Vec<Example> = fields.into_iter().map(Example::from_field).collect();
    fs::create_dir_all(&a.out)?;
    fs::write(a.out.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;
    fs::write(a.out.join(NETWORK_FILE), serde_json::to_string_pretty(&cfg.network_spec())?)?;
    let every = a.log_every.max(1);
    let outcome = train(&cfg, &data, Some(&a.out), |r| {
        if r.iteration % every == 0 || r.iteration + 1 == cfg.iterations {
            info!(
                "iter {} total {:.6} global {:.6} local {:.6} tv {:.6}",
                r.iteration, r.total, r.global, r.local, r.tv
            );
        }
    })?;
    save_loss_csv(&outcome.log, &a.out.join("loss.csv"))?;
    info!("checkpoint written to {}", a.out.join(FINAL).display());
    Ok(())
}

fn resolve_spec(checkpoint: &str, network: Option<&Path>, angular: Pair) -> Result<NetworkSpec> {
    let beside = (checkpoint != ZERO_INIT)
        .then(|| Path::new(checkpoint).parent().map(|d| d.join(NETWORK_FILE)))
        .flatten()
        .filter(|p| p.exists());
    match network.map(Path::to_path_buf).or(beside) {
        Some(p) => Ok(serde_json::from_str(&fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing network {}", p.display()))?),
        None => Ok(NetworkSpec::new(Angular::new(angular.0, angular.1))),
    }
}

fn load_model(checkpoint: &str, network: Option<&Path>, angular: Pair, seed: u64) -> Result<NetworkParams<f32>> {
    let spec = resolve_spec(checkpoint, network, angular)?;
    if checkpoint == ZERO_INIT {
        return Ok(init_network(&spec, seed)?);
    }
    load_checkpoint(&spec, Path::new(checkpoint)).with_context(|| format!("loading checkpoint {checkpoint}"))
}

fn synthesize_cmd(a: Synthesize) -> Result<()> {
    let m = &a.model;
    let params = load_model(&m.checkpoint, m.network.as_deref(), m.angular, m.seed)?;
    let image = load_img(&a.image)?;
    let center = params.spec().angular.default_center();
    let syn = synthesize(&image, &params, center, m.eta)?;
    save_lightfield(&syn.rgb, &a.out, a.bit_depth)?;
    Ok(())
}

fn postprocess_cmd(a: Postprocess) -> Result<()> {
    let m = &a.model;
    let params = load_model(&m.checkpoint, m.network.as_deref(), m.angular, m.seed)?;
    let image = load_img(&a.image)?;
    let y = to_luminance(&image)?;
    let flow = aggregate_flow(&forward(&params, &y)?, &y, a.radius, a.eps)?;
    let syn = synthesize_with_flow(&image, &flow, params.spec().angular.default_center(), m.eta)?;
    save_lightfield(&syn.rgb, &a.out, a.bit_depth)?;
    Ok(())
}

fn evaluate_cmd(a: Evaluate) -> Result<()> {
    let gt = load_lf(&a.gt)?;
    let pred = match (&a.pred, &a.checkpoint) {
        (Some(p), _) => load_lf(p)?,
        (None, Some(c)) => {
            let angular = Pair(gt.angular().u, gt.angular().v);
            let params = load_model(c, a.network.as_deref(), angular, a.seed)?;
            synthesize(&gt.central_view(), &params, gt.center(), a.eta)?.rgb
        }
        (None, None) => bail!("evaluate needs --pred or --checkpoint"),
    };
    let report = serde_json::to_string_pretty(&compare_fields(&pred, &gt)?)?;
    match &a.out {
        Some(p) => fs::write(p, report)?,
        None => println!("{report}"),
    }
    Ok(())
}

fn refocus_cmd(a: Refocus) -> Result<()> {
    let lf = load_lf(&a.lf)?;
    save_image(&refocus(&lf, a.alpha)?.clamped(), &a.out, a.bit_depth)?;
    Ok(())
}

fn epi_cmd(a: Epi) -> Result<()> {
    let lf = load_lf(&a.lf)?;
    let c = lf.center();
    let img = match (a.y, a.x) {
        (Some(y), _) => lf.extract_epi(y, a.v.unwrap_or(c.v))?,
        (None, Some(x)) => lf.extract_epi_vertical(x, a.u.unwrap_or(c.u))?,
        (None, None) => bail!("epi needs --y or --x"),
    };
    save_image(&img, &a.out, a.bit_depth)?;
    Ok(())
}

fn mean_var_cmd(a: MeanVar) -> Result<()> {
    let lf = load_lf(&a.lf)?;
    save_image(&lf_mean(&lf)?, &a.mean, a.bit_depth)?;
    save_image(&lf_std(&lf)?.clamped(), &a.std, a.bit_depth)?;
    Ok(())
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let result = match Cli::parse().command {
        Command::GenScene(a) => gen_scene(a),
        Command::Train(a) => train_cmd(a),
        Command::Synthesize(a) => synthesize_cmd(a),
        Command::Postprocess(a) => postprocess_cmd(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Refocus(a) => refocus_cmd(a),
        Command::Epi(a) => epi_cmd(a),
        Command::MeanVar(a) => mean_var_cmd(a),
    };
    if let Err(e) = result {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
