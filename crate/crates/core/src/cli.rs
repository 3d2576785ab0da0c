//! The `jpgnet` command line.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::data::{corrupt, load_dataset, load_image, save_image, toy_dataset, write_manifest, Bucket, Mask};
use crate::error::{Error, Result};
use crate::eval::{difference_map, eval_samples, evaluate, Method, Pipeline};
use crate::filter::{compute_uncertainty_map, KernelField, Reducer};
use crate::nn::{PfuNet, ToyGenerator, UNet, UafNet};
use crate::tensor::{NormMode, Tensor};
use crate::train::{
    load_checkpoint, save_checkpoint, train_generator, train_stage1, train_stage2, Checkpoint, NetKind, Progress, StageReport,
    TrainConfig,
};

fn defaults() -> TrainConfig {
    TrainConfig::default()
}

#[derive(Parser, Debug)]
#[command(name = "jpgnet", version, about = "Joint predictive filtering and generative image inpainting")]
pub struct Cli {
    /// JSON file of flat keys mirroring the flags; explicit flags win
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a procedural toy dataset and its manifest
    MakeData(MakeDataArgs),
    /// Train one branch: pfu (filtering), gen (toy generator) or uaf (fusion)
    Train(TrainArgs),
    /// Inpaint one image with trained checkpoints
    Infer(InferArgs),
    /// Score every method per mask-ratio bucket
    Eval(EvalArgs),
    /// Render uncertainty maps for one or more reducers
    VizUncertainty(VizArgs),
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct MakeDataArgs {
    /// Number of images
    #[arg(long, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    pub n: u64,
    /// Side length in pixels
    #[arg(long, default_value_t = 64, value_parser = clap::value_parser!(u64).range(1..))]
    pub size: u64,
    /// Output directory
    #[arg(long, default_value = "data")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Image file format
    #[arg(long, default_value = "png", value_parser = ["png", "ppm"])]
    pub format: String,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Pfu,
    Gen,
    Uaf,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_value_t = Stage::Pfu)]
    pub stage: Stage,
    /// Dataset directory or manifest file
    #[arg(long, default_value = "data")]
    pub data: PathBuf,
    /// Checkpoint directory; stage uaf reads pfu.ckpt and gen.ckpt from here
    #[arg(long, default_value = "ckpt")]
    pub out: PathBuf,
    #[arg(long, default_value_t = defaults().learning_rate)]
    pub learning_rate: f64,
    /// Weight of the SSIM term in the loss
    #[arg(long, default_value_t = defaults().lambda_ssim)]
    pub lambda_ssim: f64,
    #[arg(long, default_value_t = defaults().batch_size)]
    pub batch_size: usize,
    #[arg(long, default_value_t = defaults().stage1_iters)]
    pub stage1_iters: usize,
    #[arg(long, default_value_t = defaults().stage2_iters)]
    pub stage2_iters: usize,
    #[arg(long, default_value_t = defaults().gen_iters)]
    pub gen_iters: usize,
    #[arg(long, default_value_t = defaults().seed)]
    pub seed: u64,
    /// Save an intermediate checkpoint every N iterations (0 = never)
    #[arg(long, default_value_t = defaults().checkpoint_every)]
    pub checkpoint_every: usize,
    #[arg(long, default_value_t = defaults().image_size)]
    pub image_size: usize,
    /// Channel width of the first UNet block
    #[arg(long, default_value_t = defaults().base_width)]
    pub base_width: usize,
    /// Filter kernel size K (odd)
    #[arg(long, default_value_t = defaults().kernel_size)]
    pub kernel_size: usize,
    /// Normalization statistics: over the batch or per image
    #[arg(long, default_value = "batch", value_parser = ["batch", "instance"])]
    pub norm: String,
}

impl TrainArgs {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            lambda_ssim: self.lambda_ssim,
            batch_size: self.batch_size,
            stage1_iters: self.stage1_iters,
            stage2_iters: self.stage2_iters,
            gen_iters: self.gen_iters,
            seed: self.seed,
            checkpoint_every: self.checkpoint_every,
            image_size: self.image_size,
            base_width: self.base_width,
            kernel_size: self.kernel_size,
            norm: if self.norm == "instance" { NormMode::Instance } else { NormMode::Batch },
        }
    }
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct InferArgs {
    /// Input image (PNG, PPM or PGM)
    #[arg(long, default_value = "input.png")]
    pub img: PathBuf,
    /// Hole mask image; pixels above 0.5 are missing
    #[arg(long, default_value = "mask.png")]
    pub mask: PathBuf,
    /// Directory holding pfu.ckpt, gen.ckpt and uaf.ckpt
    #[arg(long, default_value = "ckpt")]
    pub ckpt_dir: PathBuf,
    /// Output image path
    #[arg(long, default_value = "output.png")]
    pub out: PathBuf,
    /// Also write the filtered and generated images, the uncertainty map and a kernel mosaic
    #[arg(long, default_value_t = false)]
    pub emit_intermediates: bool,
    /// Pixels for the kernel mosaic as `y,x;y,x`, or `center`
    #[arg(long, default_value = "center")]
    pub pixels: String,
    /// Kernel reducer for the uncertainty map
    #[arg(long, default_value = "avg", value_parser = ["avg", "max", "l1", "l2"])]
    pub reducer: String,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct EvalArgs {
    /// Dataset directory or manifest file
    #[arg(long, default_value = "data")]
    pub data: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub masks_per_image: usize,
    /// Comma-separated mask-ratio buckets
    #[arg(long, default_value = "B20,B40,B60", value_delimiter = ',', value_parser = ["B20", "B40", "B60"])]
    pub buckets: Vec<String>,
    /// Directory holding pfu.ckpt, gen.ckpt and uaf.ckpt
    #[arg(long, default_value = "ckpt")]
    pub ckpt_dir: PathBuf,
    /// CSV report path
    #[arg(long, default_value = "eval.csv")]
    pub report: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Kernel reducer for the uncertainty map
    #[arg(long, default_value = "avg", value_parser = ["avg", "max", "l1", "l2"])]
    pub reducer: String,
    /// Write difference maps of the first sample per bucket here
    #[arg(long)]
    pub diff_dir: Option<PathBuf>,
}

#[derive(Args, Debug, Clone, Serialize, Deserialize)]
pub struct VizArgs {
    #[arg(long, default_value = "input.png")]
    pub img: PathBuf,
    #[arg(long, default_value = "mask.png")]
    pub mask: PathBuf,
    /// Filtering-network checkpoint
    #[arg(long, default_value = "ckpt/pfu.ckpt")]
    pub ckpt: PathBuf,
    /// Comma-separated reducers
    #[arg(long, default_value = "avg", value_delimiter = ',', value_parser = ["avg", "max", "l1", "l2"])]
    pub reducer: Vec<String>,
    /// Output directory
    #[arg(long, default_value = "viz")]
    pub out: PathBuf,
}

/// Process exit status for an error: 3 I/O and file formats, 4 shape or configuration,
/// 5 numeric failure.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. }
        | Error::Format(_)
        | Error::Truncated(_)
        | Error::BadMagic(_)
        | Error::VersionMismatch { .. }
        | Error::MissingCheckpoint(_) => 3,
        Error::NonFinite { .. } | Error::MaskExhausted { .. } => 5,
        _ => 4,
    }
}

/// Parses `args` (including the program name), runs the command and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    let _ = e.print();
                    e.exit_code()
                }
                _ => {
                    let text = e.render().to_string();
                    eprintln!("jpgnet: {}", text.lines().find(|l| !l.trim().is_empty()).unwrap_or("usage error"));
                    2
                }
            };
        }
    };
    match parse_merged(&matches).and_then(|cli| execute(&cli)) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("jpgnet: error: {e}");
            exit_code(&e)
        }
    }
}

fn arg_ids() -> Vec<String> {
    let mut ids = Vec::new();
    for sub in Cli::command().get_subcommands() {
        ids.extend(sub.get_arguments().map(|a| a.get_id().to_string()));
    }
    ids
}

/// Overrides every field of `args` that was not given on the command line with the
/// matching key of `json`.
fn merge<T: Serialize + DeserializeOwned>(args: T, m: &ArgMatches, json: &Map<String, Value>) -> Result<T> {
    let mut v = serde_json::to_value(&args).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let obj = v.as_object_mut().expect("argument structs serialize to objects");
    let known = arg_ids();
    for (key, val) in json {
        let key = key.replace('-', "_");
        if obj.contains_key(&key) {
            if m.value_source(&key) != Some(ValueSource::CommandLine) {
                obj.insert(key, val.clone());
            }
        } else if !known.contains(&key) {
            return Err(Error::InvalidArgument(format!("unknown config key `{key}`")));
        }
    }
    serde_json::from_value(v).map_err(|e| Error::InvalidArgument(format!("config: {e}")))
}

fn parse_merged(matches: &ArgMatches) -> Result<Cli> {
    let mut cli = Cli::from_arg_matches(matches).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let Some(path) = &cli.config else { return Ok(cli) };
    let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
    let json: Value =
        serde_json::from_str(&text).map_err(|e| Error::InvalidArgument(format!("config {}: {e}", path.display())))?;
    let Value::Object(json) = json else {
        return Err(Error::InvalidArgument(format!("config {} must be a JSON object", path.display())));
    };
    let (_, sub) = matches.subcommand().expect("subcommand is required");
    cli.command = match cli.command {
        Command::MakeData(a) => Command::MakeData(merge(a, sub, &json)?),
        Command::Train(a) => Command::Train(merge(a, sub, &json)?),
        Command::Infer(a) => Command::Infer(merge(a, sub, &json)?),
        Command::Eval(a) => Command::Eval(merge(a, sub, &json)?),
        Command::VizUncertainty(a) => Command::VizUncertainty(merge(a, sub, &json)?),
    };
    Ok(cli)
}

pub fn execute(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::MakeData(a) => cmd_make_data(a),
        Command::Train(a) => cmd_train(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Eval(a) => cmd_eval(a),
        Command::VizUncertainty(a) => cmd_viz_uncertainty(a),
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(format!("creating {}", path.display()), e))
}

pub fn cmd_make_data(a: &MakeDataArgs) -> Result<()> {
    if a.n == 0 || a.size == 0 {
        return Err(Error::InvalidArgument("n and size must be positive".into()));
    }
    create_dir(&a.out)?;
    let images = toy_dataset(a.n as usize, a.size as usize, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    let mut names = Vec::with_capacity(images.len());
    for (i, img) in images.iter().enumerate() {
        let name = format!("img_{i:05}.{}", a.format);
        save_image(a.out.join(&name), img)?;
        names.push(name);
    }
    write_manifest(a.out.join("manifest.txt"), &names)?;
    println!("wrote {} images to {}", names.len(), a.out.display());
    Ok(())
}

pub fn checkpoint_path(dir: &Path, kind: NetKind) -> PathBuf {
    dir.join(format!("{}.ckpt", kind.file_stem()))
}

/// Loads a network of `kind`, returning it with its kernel size.
fn load_net(path: &Path, kind: NetKind) -> Result<(UNet, usize)> {
    if !path.exists() {
        return Err(Error::MissingCheckpoint(path.to_path_buf()));
    }
    let ck = load_checkpoint(path)?;
    if ck.meta.kind != kind {
        return Err(Error::Format(format!(
            "{} holds a {} network, expected {}",
            path.display(),
            ck.meta.kind.file_stem(),
            kind.file_stem()
        )));
    }
    Ok((ck.to_unet()?, ck.meta.kernel_size))
}

/// Loads a frozen filtering network.
pub fn load_pfu(path: &Path) -> Result<PfuNet> {
    let (net, k) = load_net(path, NetKind::Pfu)?;
    let mut pfu = PfuNet::from_unet(net, k)?;
    pfu.freeze();
    Ok(pfu)
}

/// Loads a frozen toy generator.
pub fn load_gen(path: &Path) -> Result<ToyGenerator> {
    let (net, _) = load_net(path, NetKind::Gen)?;
    let mut gen = ToyGenerator::from_unet(net)?;
    gen.freeze();
    Ok(gen)
}

/// Loads a fusion network.
pub fn load_uaf(path: &Path) -> Result<UafNet> {
    let (net, k) = load_net(path, NetKind::Uaf)?;
    UafNet::from_unet(net, k)
}

pub fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = a.train_config();
    cfg.validate()?;
    let data = load_dataset(&a.data)?;
    let [_, c, _, _] = data[0].nchw()?;
    for (i, img) in data.iter().enumerate() {
        if img.dims() != [1, c, cfg.image_size, cfg.image_size] {
            return Err(Error::shape(
                "train",
                format!("image {i} is {:?}, expected 1×{c}×{s}×{s}", img.dims(), s = cfg.image_size),
            ));
        }
    }
    create_dir(&a.out)?;
    let kind = match a.stage {
        Stage::Pfu => NetKind::Pfu,
        Stage::Gen => NetKind::Gen,
        Stage::Uaf => NetKind::Uaf,
    };
    let k = cfg.kernel_size;
    let mut init = ChaCha8Rng::seed_from_u64(cfg.seed);
    init.set_stream(a.stage as u64);
    let out = a.out.clone();
    let every = cfg.checkpoint_every;
    let snapshot_cfg = cfg.clone();
    let mut progress = move |p: &Progress<'_>| -> Result<()> {
        if every > 0 && p.iter.is_multiple_of(every) {
            let path = out.join(format!("{}_iter{:06}.ckpt", kind.file_stem(), p.iter));
            save_checkpoint(path, &Checkpoint::from_net(kind, p.net, k, Some(&snapshot_cfg), p.rng))?;
        }
        if p.iter.is_multiple_of(100) {
            eprintln!("{} iteration {}: loss {:.5}", kind.file_stem(), p.iter, p.loss);
        }
        Ok(())
    };
    let (net, report): (UNet, StageReport) = match a.stage {
        Stage::Pfu => {
            let mut pfu = PfuNet::new(cfg.pfu_config(c), k, &mut init)?;
            let r = train_stage1(&mut pfu, &data, &cfg, &mut progress)?;
            (pfu.net, r)
        }
        Stage::Gen => {
            let mut gen = ToyGenerator::new(cfg.gen_config(c), &mut init)?;
            let r = train_generator(&mut gen, &data, &cfg, &mut progress)?;
            (gen.net, r)
        }
        Stage::Uaf => {
            let pfu = load_pfu(&checkpoint_path(&a.out, NetKind::Pfu))?;
            let gen = load_gen(&checkpoint_path(&a.out, NetKind::Gen))?;
            if pfu.kernel_size() != k {
                return Err(Error::shape("train", format!("pfu.ckpt has K = {}, config asks for {k}", pfu.kernel_size())));
            }
            let mut uaf = UafNet::new(cfg.uaf_config(c), k, &mut init)?;
            let r = train_stage2(&mut uaf, &pfu, &gen, &data, &cfg, &mut progress)?;
            (uaf.net, r)
        }
    };
    let mut ck = Checkpoint::from_net(kind, &net, k, Some(&cfg), &init);
    ck.rng = report.rng;
    let path = checkpoint_path(&a.out, kind);
    save_checkpoint(&path, &ck)?;
    report.write_csv(a.out.join(format!("{}_loss.csv", kind.file_stem())))?;
    let window = (report.losses.len() / 2).clamp(1, 20);
    match (report.initial_loss(window), report.final_loss(window)) {
        (Some(first), Some(last)) => println!("{}: loss {first:.5} -> {last:.5}, saved {}", kind.file_stem(), path.display()),
        _ => println!("{}: no iterations run, saved {}", kind.file_stem(), path.display()),
    }
    if report.skipped > 0 {
        println!("{} non-finite steps skipped", report.skipped);
    }
    Ok(())
}

fn load_masked(img: &Path, mask: &Path) -> Result<(Tensor, Mask)> {
    let img = load_image(img)?;
    let mask = Mask::from_tensor(&load_image(mask)?)?;
    let [_, _, h, w] = img.nchw()?;
    if (mask.height(), mask.width()) != (h, w) {
        return Err(Error::shape("mask", format!("{}×{} mask for a {h}×{w} image", mask.height(), mask.width())));
    }
    Ok((img, mask))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("output");
    let ext = path.extension().and_then(|s| s.to_str()).unwrap_or("png");
    path.with_file_name(format!("{stem}_{suffix}.{ext}"))
}

fn parse_pixels(spec: &str, h: usize, w: usize) -> Result<Vec<(usize, usize)>> {
    if spec.trim() == "center" {
        return Ok(vec![(h / 2, w / 2)]);
    }
    spec.split(';')
        .filter(|s| !s.trim().is_empty())
        .map(|p| {
            let (y, x) = p
                .split_once(',')
                .ok_or_else(|| Error::InvalidArgument(format!("pixel `{p}` is not `y,x`")))?;
            let parse = |s: &str| {
                s.trim().parse::<usize>().map_err(|_| Error::InvalidArgument(format!("pixel `{p}` is not `y,x`")))
            };
            let (y, x) = (parse(y)?, parse(x)?);
            if y >= h || x >= w {
                return Err(Error::InvalidArgument(format!("pixel ({y}, {x}) outside {h}×{w}")));
            }
            Ok((y, x))
        })
        .collect()
}

/// Grayscale tiles of the K×K kernels at `pixels`: one row per pixel, one column per
/// channel, each kernel min-max stretched.
pub fn kernel_mosaic(field: &KernelField, pixels: &[(usize, usize)]) -> Result<Tensor> {
    const CELL: usize = 8;
    const GAP: usize = 2;
    let (k, c) = (field.kernel_size(), field.color_channels());
    let tile = k * CELL;
    let (h, w) = (pixels.len() * (tile + GAP) + GAP, c * (tile + GAP) + GAP);
    let mut out = Tensor::full(&[1, 1, h, w], 1.0);
    for (row, &(y, x)) in pixels.iter().enumerate() {
        for ch in 0..c {
            let weights = field.kernel_at(0, ch, y, x)?;
            let lo = weights.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let (oy, ox) = (GAP + row * (tile + GAP), GAP + ch * (tile + GAP));
            for (i, &v) in weights.iter().enumerate() {
                let shade = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
                let (ty, tx) = (oy + (i / k) * CELL, ox + (i % k) * CELL);
                for yy in ty..ty + CELL {
                    out.data_mut()[yy * w + tx..yy * w + tx + CELL].fill(shade);
                }
            }
        }
    }
    Ok(out)
}

pub fn cmd_infer(a: &InferArgs) -> Result<()> {
    let (img, mask) = load_masked(&a.img, &a.mask)?;
    let pfu = load_pfu(&checkpoint_path(&a.ckpt_dir, NetKind::Pfu))?;
    let gen = load_gen(&checkpoint_path(&a.ckpt_dir, NetKind::Gen))?;
    let uaf = load_uaf(&checkpoint_path(&a.ckpt_dir, NetKind::Uaf))?;
    let size = pfu.net.config().input_size;
    let [_, c, h, w] = img.nchw()?;
    if (h, w) != (size, size) || c != pfu.color_channels() {
        return Err(Error::shape(
            "infer",
            format!("image is {c}×{h}×{w}, checkpoints expect {}×{size}×{size}", pfu.color_channels()),
        ));
    }
    let reducer: Reducer = a.reducer.parse()?;
    let pixels = parse_pixels(&a.pixels, h, w)?;
    let sample = corrupt(&img, &mask)?;
    let pipeline = Pipeline { pfu: &pfu, uaf: &uaf, gen: &gen, reducer };
    let out = pipeline.run(&sample.input, &mask.to_tensor())?;
    save_image(&a.out, &out.fused)?;
    println!("wrote {}", a.out.display());
    if a.emit_intermediates {
        let field = KernelField::new(out.kernels.clone(), pfu.kernel_size())?;
        let extra = [
            (with_suffix(&a.out, "filtered"), out.filtered.clone()),
            (with_suffix(&a.out, "generated"), out.generated.clone()),
            (with_suffix(&a.out, "uncertainty"), out.uncertainty.clone()),
            (with_suffix(&a.out, "kernels"), kernel_mosaic(&field, &pixels)?),
        ];
        for (path, t) in &extra {
            save_image(path, t)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs) -> Result<()> {
    let data = load_dataset(&a.data)?;
    let buckets = a.buckets.iter().map(|b| b.parse()).collect::<Result<Vec<Bucket>>>()?;
    if a.masks_per_image == 0 {
        return Err(Error::InvalidArgument("masks_per_image must be positive".into()));
    }
    let pfu = load_pfu(&checkpoint_path(&a.ckpt_dir, NetKind::Pfu))?;
    let gen = load_gen(&checkpoint_path(&a.ckpt_dir, NetKind::Gen))?;
    let uaf = load_uaf(&checkpoint_path(&a.ckpt_dir, NetKind::Uaf))?;
    let pipeline = Pipeline { pfu: &pfu, uaf: &uaf, gen: &gen, reducer: a.reducer.parse()? };
    let samples = eval_samples(&data, a.masks_per_image, &buckets, a.seed)?;
    let report = evaluate(&pipeline, &samples, &buckets)?;
    report.write_csv(&a.report)?;
    print!("{}", report.to_table());
    println!("wrote {}", a.report.display());
    if let Some(dir) = &a.diff_dir {
        create_dir(dir)?;
        for &b in &buckets {
            let Some(s) = samples.iter().find(|s| s.bucket == b) else { continue };
            let out = pipeline.run(&s.sample.input, &s.sample.mask.to_tensor())?;
            for (m, pred) in [(Method::Filtering, &out.filtered), (Method::SmartFusion, &out.fused)] {
                let (_, stretched) = difference_map(&pred.map(|v| v.clamp(0.0, 1.0)), &s.sample.truth)?;
                save_image(dir.join(format!("diff_{b}_{m}.png")), &stretched)?;
            }
        }
        println!("wrote difference maps to {}", dir.display());
    }
    Ok(())
}

pub fn cmd_viz_uncertainty(a: &VizArgs) -> Result<()> {
    let (img, mask) = load_masked(&a.img, &a.mask)?;
    let pfu = load_pfu(&a.ckpt)?;
    let reducers = a.reducer.iter().map(|r| r.parse()).collect::<Result<Vec<Reducer>>>()?;
    let sample = corrupt(&img, &mask)?;
    let pf = pfu.run(&sample.input, Reducer::Avg)?;
    create_dir(&a.out)?;
    for r in reducers {
        let u = compute_uncertainty_map(pf.kernels.tensor(), r)?;
        let path = a.out.join(format!("uncertainty_{}.png", r.name()));
        save_image(&path, &u)?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pixel_lists() {
        assert_eq!(parse_pixels("center", 8, 6).unwrap(), vec![(4, 3)]);
        assert_eq!(parse_pixels("1,2; 3,4", 8, 8).unwrap(), vec![(1, 2), (3, 4)]);
        assert!(parse_pixels("9,0", 8, 8).is_err());
        assert!(parse_pixels("x", 8, 8).is_err());
    }

    #[test]
    fn exit_codes_by_category() {
        assert_eq!(exit_code(&Error::MissingCheckpoint("a".into())), 3);
        assert_eq!(exit_code(&Error::BadMagic(*b"XXXX")), 3);
        assert_eq!(exit_code(&Error::shape("x", "y")), 4);
        assert_eq!(exit_code(&Error::NonFinite { op: "x" }), 5);
    }

    #[test]
    fn mosaic_size() {
        let field = KernelField::identity(4, 4, 3, 3).unwrap();
        let m = kernel_mosaic(&field, &[(0, 0), (2, 2)]).unwrap();
        assert_eq!(m.dims(), &[1, 1, 2 * 26 + 2, 3 * 26 + 2]);
    }
}
