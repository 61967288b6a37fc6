mod config;
mod imageio;

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use holocodec::bitstream::HoloBitstream;
use holocodec::codec::{load_checkpoint, prepare_sample, save_checkpoint, synthetic_corpus, HoloCodec, Sample};
use holocodec::evaluation::{bd_psnr, bd_rate, quality, rd_sweep, read_rows_csv, write_rows_csv, RDCurve, MEAN_ROW};
use holocodec::optics::{amplitude_from_intensity, crop_center, reconstruct_amplitude, AmplitudeMap, ComplexField, OpticsConfig};
use holocodec::retrieval::{gerchberg_saxton_traced, sgd_phase_retrieval_traced, PhaseInit, RetrievalSettings};
use holocodec::transport::{read_frame, CodebookRegistry, Endpoint};
use holocodec::Error;
use ndarray::Array2;
use num_complex::Complex;
use serde_json::json;

use config::RunConfig;

type T = f32;

#[derive(Parser)]
#[command(name = "holocodec", version, about = "Phase-only hologram compression toolkit")]
struct Cli {
    /// TOML run configuration; flags override its values [default: none]
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice [default: config seed, else 0]
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Refuse randomized commands that have no explicit seed.
    #[arg(long, global = true, default_value_t = false)]
    strict: bool,
    /// Worker thread cap [default: all cores]
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Propagate a zero-phase image field over a distance.
    Propagate(PropagateArgs),
    /// Gerchberg-Saxton phase retrieval.
    Gs(RetrievalArgs),
    /// Gradient-descent phase retrieval.
    Sgd(SgdArgs),
    /// Stage-1 codec training.
    Train(TrainArgs),
    /// Stage-2 codebook adapter training.
    Adapt(AdaptArgs),
    /// Write adapted codebooks to a registry directory.
    ExportBooks(ExportArgs),
    /// Encode an image into a .ravq stream.
    Compress(CompressArgs),
    /// Decode a .ravq stream into a phase map.
    Decompress(DecompressArgs),
    /// Send framed streams over TCP or into a file.
    Send(SendArgs),
    /// Receive framed streams from TCP or a file.
    Recv(RecvArgs),
    /// Score a .ravq stream against its source image.
    Evaluate(EvaluateArgs),
    /// Rate-distortion sweep over codebook sizes.
    RdCurve(RdArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// Codec checkpoint [default: config paths.checkpoint = holocodec.ravk]
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Codebook registry directory [default: config paths.books = books]
    #[arg(long)]
    books: Option<PathBuf>,
}

#[derive(Args)]
struct PropagateArgs {
    /// Intensity image (PNG).
    #[arg(long)]
    input: PathBuf,
    /// Meters, negative for backward [default: config optics.distance = 0.01]
    #[arg(long, allow_hyphen_values = true)]
    distance: Option<f64>,
    /// Output amplitude (16-bit PNG, scaled by its maximum).
    #[arg(long)]
    out: PathBuf,
    /// Optional output phase (16-bit PNG) [default: none]
    #[arg(long)]
    phase_out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Init {
    Random,
    Zeros,
}

#[derive(Args)]
struct RetrievalArgs {
    /// Target intensity image (PNG).
    #[arg(long)]
    target: PathBuf,
    /// Iteration count [default: config retrieval.iterations = 500]
    #[arg(long)]
    iterations: Option<usize>,
    /// Starting phase
    #[arg(long, value_enum, default_value_t = Init::Random)]
    init: Init,
    /// Output phase map (16-bit PNG).
    #[arg(long)]
    out: PathBuf,
    /// Optional raw f32 phase output [default: none]
    #[arg(long)]
    raw: Option<PathBuf>,
    /// Optional reconstructed amplitude (16-bit PNG) [default: none]
    #[arg(long)]
    recon: Option<PathBuf>,
}

#[derive(Args)]
struct SgdArgs {
    #[command(flatten)]
    common: RetrievalArgs,
    /// Per-pixel step [default: config retrieval.step_size = 0.1]
    #[arg(long)]
    step: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    /// PNG directory [default: config data.dir, else synthetic images]
    #[arg(long)]
    data: Option<PathBuf>,
    /// Stage-1 epochs [default: config schedule.stage1_epochs = 50]
    #[arg(long)]
    epochs: Option<usize>,
    /// Adam learning rate [default: config schedule.learning_rate = 0.003]
    #[arg(long)]
    lr: Option<f64>,
    /// Output checkpoint [default: config paths.checkpoint = holocodec.ravk]
    #[arg(long)]
    checkpoint: Option<PathBuf>,
}

#[derive(Args)]
struct AdaptArgs {
    /// Input checkpoint [default: config paths.checkpoint = holocodec.ravk]
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Output checkpoint [default: overwrite the input]
    #[arg(long)]
    out: Option<PathBuf>,
    /// PNG directory [default: config data.dir, else synthetic images]
    #[arg(long)]
    data: Option<PathBuf>,
    /// Stage-2 epochs [default: config schedule.stage2_epochs = 20]
    #[arg(long)]
    epochs: Option<usize>,
    /// Adam learning rate [default: config schedule.adapter_learning_rate = 0.001]
    #[arg(long)]
    lr: Option<f64>,
    /// Comma-separated target sizes [default: config schedule.adapter_sizes, else powers of two in range]
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<usize>,
}

#[derive(Args)]
struct ExportArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Comma-separated sizes [default: config schedule.adapter_sizes, else powers of two in range]
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<usize>,
}

#[derive(Args)]
struct CompressArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Source image (PNG).
    #[arg(long)]
    input: PathBuf,
    /// Codebook size for both levels [default: the trained bottom size]
    #[arg(long)]
    size: Option<usize>,
    /// Fixed-length indices instead of Huffman codes.
    #[arg(long, default_value_t = false)]
    fixed: bool,
    /// Output stream (.ravq).
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DecompressArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Input stream (.ravq).
    #[arg(long)]
    input: PathBuf,
    /// Output phase map (16-bit PNG).
    #[arg(long)]
    out: PathBuf,
    /// Optional raw f32 phase output [default: none]
    #[arg(long)]
    raw: Option<PathBuf>,
    /// Optional reconstructed amplitude (16-bit PNG) [default: none]
    #[arg(long)]
    recon: Option<PathBuf>,
}

#[derive(Args)]
struct SendArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Source images (PNG), sent in order.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Codebook size for both levels [default: the trained bottom size]
    #[arg(long)]
    size: Option<usize>,
    /// Fixed-length indices instead of Huffman codes.
    #[arg(long, default_value_t = false)]
    fixed: bool,
    /// TCP address to connect to [default: none]
    #[arg(long, conflicts_with = "out", required_unless_present = "out")]
    to: Option<String>,
    /// Write the framed byte stream to a file instead [default: none]
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RecvArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// TCP address to accept one connection on [default: none]
    #[arg(long, conflicts_with = "input", required_unless_present = "input")]
    listen: Option<String>,
    /// Read a framed byte stream from a file instead [default: none]
    #[arg(long)]
    input: Option<PathBuf>,
    /// Directory for decoded phase maps (frame_NNNN.png).
    #[arg(long)]
    out_dir: PathBuf,
    /// Also write raw f32 phase files next to the PNGs.
    #[arg(long, default_value_t = false)]
    raw: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Stream to score (.ravq).
    #[arg(long)]
    input: PathBuf,
    /// Source image the stream was made from (PNG).
    #[arg(long)]
    reference: PathBuf,
}

#[derive(Args)]
struct RdArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// PNG directory [default: config data.dir, else held-out synthetic images]
    #[arg(long)]
    data: Option<PathBuf>,
    /// Synthetic image count when no directory is given.
    #[arg(long, default_value_t = 8)]
    count: usize,
    /// Comma-separated sizes [default: every size in the registry]
    #[arg(long, value_delimiter = ',')]
    sizes: Vec<usize>,
    /// Fixed-length indices instead of Huffman codes.
    #[arg(long, default_value_t = false)]
    fixed: bool,
    /// Output CSV.
    #[arg(long)]
    out: PathBuf,
    /// Anchor CSV of an earlier sweep; prints BD-rate and BD-PSNR against it [default: none]
    #[arg(long)]
    anchor: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Config(String),
    Run(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::InvalidConfig(m) => Failure::Config(m),
            e => Failure::Run(e),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Run(Error::Io(e))
    }
}

type CliResult<V> = std::result::Result<V, Failure>;

fn report(kind: &str, message: &str, code: u8) -> ExitCode {
    eprintln!("{}", json!({ "error": kind, "message": message, "exit": code }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            let msg = e.kind().to_string();
            return report("usage", &msg, 2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => report("usage", &m, 2),
        Err(Failure::Config(m)) => report("config", &m, 3),
        Err(Failure::Run(e)) => report(e.kind(), &e.to_string(), 1),
    }
}

struct Ctx {
    cfg: RunConfig,
    seed: Option<u64>,
    strict: bool,
}

impl Ctx {
    /// Seed of a randomized command.
    fn seed(&self) -> CliResult<u64> {
        match self.seed {
            Some(s) => Ok(s),
            None if self.strict => Err(Failure::Config(
                "randomized command needs --seed or a config seed in --strict mode".into(),
            )),
            None => Ok(0),
        }
    }

    fn frame(&self) -> (usize, usize) {
        (self.cfg.data.height, self.cfg.data.width)
    }

    fn checkpoint(&self, flag: &Option<PathBuf>) -> PathBuf {
        flag.clone().unwrap_or_else(|| self.cfg.paths.checkpoint.clone())
    }

    fn books(&self, flag: &Option<PathBuf>) -> PathBuf {
        flag.clone().unwrap_or_else(|| self.cfg.paths.books.clone())
    }

    fn load_model(&self, path: &Path) -> CliResult<HoloCodec<T>> {
        let bytes = std::fs::read(path).map_err(|e| Error::Format(format!("{}: {e}", path.display())))?;
        Ok(load_checkpoint(&bytes)?)
    }

    fn load_pair(&self, m: &ModelArgs) -> CliResult<(HoloCodec<T>, CodebookRegistry<T>)> {
        let model = self.load_model(&self.checkpoint(&m.checkpoint))?;
        let dir = self.books(&m.books);
        let reg = CodebookRegistry::load(&dir).map_err(|e| Error::Format(format!("{}: {e}", dir.display())))?;
        Ok((model, reg))
    }

    /// Training or evaluation images with names. `role` 1 = training, 2 =
    /// held-out (selects the synthetic seed).
    fn images(&self, dir: Option<&Path>, count: usize, role: u64) -> CliResult<Vec<(String, Array2<f64>)>> {
        let frame = self.frame();
        if let Some(dir) = dir.or(self.cfg.data.dir.as_deref()) {
            let mut out = Vec::new();
            for p in imageio::list_pngs(dir)? {
                let img = imageio::read_intensity(&p, self.cfg.channel)?;
                let name = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                out.push((name, imageio::crop_to(img, frame, &p)?));
            }
            return Ok(out);
        }
        let seed = self.seed()?.wrapping_mul(2).wrapping_add(role);
        Ok(synthetic(frame, count, seed)?
            .into_iter()
            .enumerate()
            .map(|(i, img)| (format!("synthetic_{seed}_{i:04}"), img))
            .collect())
    }

    fn samples(&self, optics: &OpticsConfig, imgs: &[(String, Array2<f64>)]) -> CliResult<Vec<(String, Sample<T>)>> {
        imgs.iter()
            .map(|(n, img)| Ok((n.clone(), prepare_sample(img.view(), optics, self.cfg.data.gamma)?)))
            .collect()
    }

    fn sample_from_png(&self, model: &HoloCodec<T>, path: &Path) -> CliResult<Sample<T>> {
        let img = imageio::read_intensity(path, model.channel)?;
        let frame = match model.optics.roi {
            r if r == img.dim() => r,
            _ => self.frame(),
        };
        let img = imageio::crop_to(img, frame, path)?;
        Ok(prepare_sample(img.view(), &model.optics, self.cfg.data.gamma)?)
    }
}

/// Synthetic images quantized to 16 bits, read from or written to the
/// `HOLOCODEC_CACHE` directory when it is set.
fn synthetic(frame: (usize, usize), n: usize, seed: u64) -> holocodec::Result<Vec<Array2<f64>>> {
    let quantize = |img: Array2<f64>| img.mapv(|v| (v.clamp(0.0, 1.0) * 65535.0).round() / 65535.0);
    let Some(root) = std::env::var_os("HOLOCODEC_CACHE") else {
        return Ok(synthetic_corpus(n, frame.0, frame.1, seed).into_iter().map(quantize).collect());
    };
    let dir = PathBuf::from(root).join(format!("synthetic_{}x{}_{seed}", frame.0, frame.1));
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let path = dir.join(format!("{i:04}.png"));
        let img = if path.is_file() {
            imageio::read_intensity(&path, 0)?
        } else {
            let img = quantize(holocodec::codec::synthetic_image(
                frame.0,
                frame.1,
                seed.wrapping_mul(1_000_003).wrapping_add(i as u64),
            ));
            imageio::write_gray16(&path, &img, 0.0, 1.0)?;
            img
        };
        out.push(img);
    }
    Ok(out)
}

fn print(v: serde_json::Value) {
    println!("{v}");
}

fn write_checkpoint(path: &Path, model: &HoloCodec<T>) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::write(path, save_checkpoint(model)?)?;
    Ok(())
}

fn phase64(p: &holocodec::optics::PhaseMap<T>) -> Array2<f64> {
    p.0.mapv(|v| v as f64)
}

fn run(cli: Cli) -> CliResult<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Run(Error::InvalidConfig(e.to_string())))?;
    }
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(Failure::Config)?,
        None => RunConfig::default(),
    };
    let ctx = Ctx {
        seed: cli.seed.or(cfg.seed),
        cfg,
        strict: cli.strict,
    };
    match cli.cmd {
        Cmd::Propagate(a) => propagate(&ctx, a),
        Cmd::Gs(a) => retrieve(&ctx, a, None),
        Cmd::Sgd(a) => {
            let step = a.step.unwrap_or(ctx.cfg.retrieval.step_size);
            retrieve(&ctx, a.common, Some(step))
        }
        Cmd::Train(a) => train(&ctx, a),
        Cmd::Adapt(a) => adapt(&ctx, a),
        Cmd::ExportBooks(a) => export_books(&ctx, a),
        Cmd::Compress(a) => compress(&ctx, a),
        Cmd::Decompress(a) => decompress(&ctx, a),
        Cmd::Send(a) => send(&ctx, a),
        Cmd::Recv(a) => recv(&ctx, a),
        Cmd::Evaluate(a) => evaluate(&ctx, a),
        Cmd::RdCurve(a) => rd_curve(&ctx, a),
    }
}

fn propagate(ctx: &Ctx, a: PropagateArgs) -> CliResult<()> {
    let img = imageio::read_intensity(&a.input, ctx.cfg.channel)?;
    let frame = img.dim();
    let mut optics = ctx.cfg.optics(frame);
    optics.roi = frame;
    if let Some(d) = a.distance {
        optics = optics.with_distance(d);
    }
    optics.validate()?;
    let amp = amplitude_from_intensity(img.view(), ctx.cfg.data.gamma)?;
    let field = ComplexField::new(amp.0.mapv(|v| Complex::new(v, 0.0)), optics.clone())?;
    let out = holocodec::optics::propagate(&field, optics.distance)?;
    imageio::write_amplitude(&a.out, &out.amplitude().0)?;
    if let Some(p) = &a.phase_out {
        imageio::write_phase(p, &out.phase().0)?;
    }
    print(json!({
        "frame": [frame.0, frame.1],
        "distance": optics.distance,
        "energy_in": field.energy(),
        "energy_out": out.energy(),
    }));
    Ok(())
}

fn retrieve(ctx: &Ctx, a: RetrievalArgs, step: Option<f64>) -> CliResult<()> {
    let img = imageio::read_intensity(&a.target, ctx.cfg.channel)?;
    let frame = img.dim();
    let optics = ctx.cfg.optics(frame);
    optics.validate()?;
    let roi = optics.roi_in(frame)?;
    let amp = amplitude_from_intensity(img.view(), ctx.cfg.data.gamma)?;
    let target = AmplitudeMap(crop_center(amp.0.view(), roi)?.mapv(|v| v as T));
    let seed = match a.init {
        Init::Random => ctx.seed()?,
        Init::Zeros => 0,
    };
    let settings = RetrievalSettings {
        iterations: a.iterations.unwrap_or(ctx.cfg.retrieval.iterations),
        step_size: step.unwrap_or(ctx.cfg.retrieval.step_size),
        init: match a.init {
            Init::Random => PhaseInit::Random,
            Init::Zeros => PhaseInit::Zeros,
        },
        seed,
    };
    let started = Instant::now();
    let run = match step {
        None => gerchberg_saxton_traced(&target, &optics, &settings, frame)?,
        Some(_) => sgd_phase_retrieval_traced(&target, &optics, &settings, frame)?,
    };
    let recon = reconstruct_amplitude(&run.phase, &optics)?;
    let t64 = target.0.mapv(|v| v as f64);
    let r64 = recon.0.mapv(|v| v as f64);
    let q = quality(r64.view(), t64.view())?;
    let phase = phase64(&run.phase);
    imageio::write_phase(&a.out, &phase)?;
    if let Some(p) = &a.raw {
        imageio::write_raw_phase(p, &phase)?;
    }
    if let Some(p) = &a.recon {
        imageio::write_amplitude(p, &r64)?;
    }
    print(json!({
        "method": if step.is_some() { "sgd" } else { "gs" },
        "iterations": settings.iterations,
        "error_first": run.errors.first(),
        "error_last": run.errors.last(),
        "psnr": q.psnr,
        "ssim": q.ssim,
        "seconds": started.elapsed().as_secs_f64(),
    }));
    Ok(())
}

fn train(ctx: &Ctx, a: TrainArgs) -> CliResult<()> {
    let seed = ctx.seed()?;
    let frame = ctx.frame();
    let profile = ctx.cfg.profile().map_err(Failure::Config)?;
    profile.check_frame(frame).map_err(|e| Failure::Config(e.to_string()))?;
    let optics = ctx.cfg.optics(frame);
    let imgs = ctx.images(a.data.as_deref(), ctx.cfg.data.synthetic_count, 1)?;
    let data: Vec<Sample<T>> = ctx.samples(&optics, &imgs)?.into_iter().map(|(_, s)| s).collect();
    let mut schedule = ctx.cfg.schedule();
    schedule.seed = seed;
    if let Some(e) = a.epochs {
        schedule.stage1_epochs = e;
    }
    if let Some(lr) = a.lr {
        schedule.learning_rate = lr;
    }
    let mut model = HoloCodec::<T>::new(profile, optics, ctx.cfg.weights(), ctx.cfg.channel, seed)?;
    let started = Instant::now();
    let log = model.train_stage1(&data, &schedule)?;
    let path = ctx.checkpoint(&a.checkpoint);
    write_checkpoint(&path, &model)?;
    print(json!({
        "checkpoint": path,
        "images": data.len(),
        "epochs": schedule.stage1_epochs,
        "loss_first": log.epoch_loss.first(),
        "loss_last": log.epoch_loss.last(),
        "utilization_last": log.utilization.last().map(|u| [u.0, u.1]),
        "seconds": started.elapsed().as_secs_f64(),
    }));
    Ok(())
}

fn default_sizes(ctx: &Ctx, model: &HoloCodec<T>, flag: &[usize]) -> Vec<usize> {
    if !flag.is_empty() {
        return flag.to_vec();
    }
    if !ctx.cfg.schedule.adapter_sizes.is_empty() {
        return ctx.cfg.schedule.adapter_sizes.clone();
    }
    let p = model.profile();
    let (kb, kt) = (p.k_bottom, p.k_top);
    match &model.adapters {
        Some((b, t)) => {
            let top = t.shape.power_of_two_sizes();
            b.shape.power_of_two_sizes().into_iter().filter(|k| top.contains(k)).collect()
        }
        None if kb == kt => vec![kb],
        None => Vec::new(),
    }
}

fn adapt(ctx: &Ctx, a: AdaptArgs) -> CliResult<()> {
    let seed = ctx.seed()?;
    let input = ctx.checkpoint(&a.checkpoint);
    let mut model = ctx.load_model(&input)?;
    let hidden = ctx.cfg.schedule.adapter_hidden;
    if model.adapters.is_none() {
        model.init_adapters(hidden, seed)?;
    }
    let sizes = default_sizes(ctx, &model, &a.sizes);
    if sizes.is_empty() {
        return Err(Failure::Config("no adapter sizes given".into()));
    }
    let imgs = ctx.images(a.data.as_deref(), ctx.cfg.data.synthetic_count, 1)?;
    let data: Vec<Sample<T>> = ctx.samples(&model.optics, &imgs)?.into_iter().map(|(_, s)| s).collect();
    let mut schedule = ctx.cfg.schedule();
    schedule.seed = seed;
    schedule.learning_rate = a.lr.unwrap_or(ctx.cfg.schedule.adapter_learning_rate);
    if let Some(e) = a.epochs {
        schedule.stage2_epochs = e;
    }
    let pairs: Vec<(usize, usize)> = sizes.iter().map(|&k| (k, k)).collect();
    let started = Instant::now();
    let before = model.adapter_objective(&data, &pairs)?;
    model.train_adapters(&data, (&sizes, &sizes), hidden, &schedule)?;
    let after = model.adapter_objective(&data, &pairs)?;
    let out = a.out.unwrap_or(input);
    write_checkpoint(&out, &model)?;
    print(json!({
        "checkpoint": out,
        "sizes": sizes,
        "epochs": schedule.stage2_epochs,
        "objective_before": before,
        "objective_after": after,
        "seconds": started.elapsed().as_secs_f64(),
    }));
    Ok(())
}

fn export_books(ctx: &Ctx, a: ExportArgs) -> CliResult<()> {
    let model = ctx.load_model(&ctx.checkpoint(&a.model.checkpoint))?;
    let sizes = default_sizes(ctx, &model, &a.sizes);
    if sizes.is_empty() {
        return Err(Failure::Config("no codebook sizes given".into()));
    }
    let reg = CodebookRegistry::from_model(&model, &sizes)?;
    let files = reg.export(&ctx.books(&a.model.books))?;
    print(json!({ "sizes": sizes, "files": files }));
    Ok(())
}

fn native_size(model: &HoloCodec<T>, flag: Option<usize>) -> usize {
    flag.unwrap_or(model.profile().k_bottom)
}

fn compress(ctx: &Ctx, a: CompressArgs) -> CliResult<()> {
    let (model, reg) = ctx.load_pair(&a.model)?;
    let sample = ctx.sample_from_png(&model, &a.input)?;
    let k = native_size(&model, a.size);
    let stream = Endpoint::new(&model, &reg).encode(&sample, k, !a.fixed)?;
    let bytes = stream.serialize();
    std::fs::write(&a.out, &bytes)?;
    print(json!({
        "out": a.out,
        "K": k,
        "bytes": bytes.len(),
        "bpp": stream.bpp()?,
        "bpp_fixed": stream.fixed_bpp()?,
    }));
    Ok(())
}

fn read_stream(path: &Path) -> CliResult<HoloBitstream> {
    Ok(HoloBitstream::parse(&std::fs::read(path)?)?)
}

fn decompress(ctx: &Ctx, a: DecompressArgs) -> CliResult<()> {
    let (model, reg) = ctx.load_pair(&a.model)?;
    let stream = read_stream(&a.input)?;
    let phase = Endpoint::new(&model, &reg).decode(&stream)?;
    let p64 = phase64(&phase);
    imageio::write_phase(&a.out, &p64)?;
    if let Some(p) = &a.raw {
        imageio::write_raw_phase(p, &p64)?;
    }
    if let Some(p) = &a.recon {
        imageio::write_amplitude(p, &model.reconstruct(&phase)?.0.mapv(|v| v as f64))?;
    }
    print(json!({
        "out": a.out,
        "frame": [stream.header.frame.0, stream.header.frame.1],
        "K": stream.header.k_bottom(),
    }));
    Ok(())
}

fn send(ctx: &Ctx, a: SendArgs) -> CliResult<()> {
    let (model, reg) = ctx.load_pair(&a.model)?;
    let ep = Endpoint::new(&model, &reg);
    let k = native_size(&model, a.size);
    let mut conn: Box<dyn Write> = match (&a.to, &a.out) {
        (Some(addr), _) => Box::new(BufWriter::new(TcpStream::connect(addr)?)),
        (None, Some(p)) => Box::new(BufWriter::new(File::create(p)?)),
        (None, None) => return Err(Failure::Usage("send needs --to or --out".into())),
    };
    let mut total = 0;
    for p in &a.inputs {
        let sample = ctx.sample_from_png(&model, p)?;
        total += ep.send(&sample, k, !a.fixed, &mut conn)?;
    }
    conn.flush()?;
    print(json!({ "frames": a.inputs.len(), "K": k, "bytes": total }));
    Ok(())
}

fn recv(ctx: &Ctx, a: RecvArgs) -> CliResult<()> {
    let (model, reg) = ctx.load_pair(&a.model)?;
    let ep = Endpoint::new(&model, &reg);
    let mut conn: Box<dyn Read> = match (&a.listen, &a.input) {
        (Some(addr), _) => {
            let listener = TcpListener::bind(addr)?;
            eprintln!("{}", json!({ "listening": listener.local_addr()?.to_string() }));
            Box::new(BufReader::new(listener.accept()?.0))
        }
        (None, Some(p)) => Box::new(BufReader::new(File::open(p)?)),
        (None, None) => return Err(Failure::Usage("recv needs --listen or --input".into())),
    };
    std::fs::create_dir_all(&a.out_dir)?;
    let (mut received, mut rejected, mut bytes) = (0usize, 0usize, 0usize);
    let mut index = 0usize;
    loop {
        let payload = match read_frame(&mut conn) {
            Ok(Some(p)) => p,
            Ok(None) => break,
            Err(e) => {
                print(json!({ "received": received, "rejected": rejected, "bytes": bytes }));
                return Err(e.into());
            }
        };
        bytes += payload.len() + 4;
        let decoded = HoloBitstream::parse(&payload).and_then(|s| ep.decode(&s));
        match decoded {
            Ok(phase) => {
                let p64 = phase64(&phase);
                let png = a.out_dir.join(format!("frame_{index:04}.png"));
                imageio::write_phase(&png, &p64)?;
                if a.raw {
                    imageio::write_raw_phase(&png.with_extension("f32"), &p64)?;
                }
                received += 1;
            }
            Err(e) => {
                eprintln!("{}", json!({ "frame": index, "error": e.kind(), "message": e.to_string() }));
                rejected += 1;
            }
        }
        index += 1;
    }
    print(json!({ "received": received, "rejected": rejected, "bytes": bytes }));
    Ok(())
}

fn evaluate(ctx: &Ctx, a: EvaluateArgs) -> CliResult<()> {
    let (model, reg) = ctx.load_pair(&a.model)?;
    let stream = read_stream(&a.input)?;
    let phase = Endpoint::new(&model, &reg).decode(&stream)?;
    let sample = ctx.sample_from_png(&model, &a.reference)?;
    let recon = model.reconstruct(&phase)?.0.mapv(|v| v as f64);
    let target = sample.target_map().0.mapv(|v| v as f64);
    let q = quality(recon.view(), target.view())?;
    print(json!({
        "K": stream.header.k_bottom(),
        "bpp": stream.bpp()?,
        "bpp_fixed": stream.fixed_bpp()?,
        "psnr": q.psnr,
        "ssim": q.ssim,
        "msssim": q.msssim,
    }));
    Ok(())
}

fn rd_curve(ctx: &Ctx, a: RdArgs) -> CliResult<()> {
    let (model, reg) = ctx.load_pair(&a.model)?;
    let sizes = if a.sizes.is_empty() { reg.sizes(model.channel) } else { a.sizes.clone() };
    if sizes.is_empty() {
        return Err(Failure::Config("registry holds no codebook pairs for this channel".into()));
    }
    let imgs = ctx.images(a.data.as_deref(), a.count, 2)?;
    let corpus = ctx.samples(&model.optics, &imgs)?;
    let sweep = rd_sweep(&model, &reg, &corpus, &sizes, !a.fixed)?;
    write_rows_csv(&sweep.rows, BufWriter::new(File::create(&a.out)?))?;
    let mut summary = json!({
        "out": a.out,
        "images": corpus.len(),
        "points": sweep.curve.points().iter().map(|p| [p.0, p.1]).collect::<Vec<_>>(),
    });
    if let Some(anchor) = &a.anchor {
        let rows = read_rows_csv(File::open(anchor)?)?;
        let curve = RDCurve::new(
            rows.iter()
                .filter(|r| r.image == MEAN_ROW)
                .map(|r| (r.bpp_entropy, r.psnr))
                .collect(),
        )?;
        summary["bd_rate_percent"] = json!(bd_rate(&curve, &sweep.curve)?);
        summary["bd_psnr_db"] = json!(bd_psnr(&curve, &sweep.curve)?);
    }
    print(summary);
    Ok(())
}
