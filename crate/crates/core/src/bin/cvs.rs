use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

use cvs_core::container::MeasurementSet;
use cvs_core::learn::DictMethod;
use cvs_core::pipeline::{
    bench_csv, decode_csv, decode_measurements, dict_compare, dict_compare_csv, encode_sequence,
    plot_script, run_bench, write_text, BenchConfig, DecodeMode, DecodeParams, EncodeParams,
    Scenario,
};
use cvs_core::synthetic::{moving_scene, static_scene};
use cvs_core::video::{load_sequence, save_sequence, VideoFormat, VideoSequence};
use cvs_core::{CvsError, Result};

#[derive(Parser)]
#[command(
    name = "cvs",
    version,
    about = "Compressive video sensing encoder and decoder"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Measure a video into a .cvsm container.
    Encode(EncodeArgs),
    /// Reconstruct a video from a .cvsm container.
    Decode(DecodeArgs),
    /// Rate-distortion sweep over measurement ratios.
    Bench(BenchArgs),
    /// Compare K-SVD, MOD and MDU on one key frame.
    DictCompare(DictCompareArgs),
    /// Write a synthetic test sequence.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Raw8,
    Y4m,
}

impl From<FormatArg> for VideoFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Raw8 => VideoFormat::Raw8,
            FormatArg::Y4m => VideoFormat::Y4mLuma,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SceneArg {
    Moving,
    Static,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScenarioArg {
    Equal,
    FixedKey,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Full,
    Init,
    Intra,
}

#[derive(Args)]
struct InputArgs {
    /// Input video (raw8 or y4m).
    #[arg(long = "in")]
    input: Option<PathBuf>,
    /// Input format; guessed from the extension when absent.
    #[arg(long)]
    format: Option<FormatArg>,
    #[arg(long)]
    rows: Option<usize>,
    #[arg(long)]
    cols: Option<usize>,
    #[arg(long)]
    max_frames: Option<usize>,
    /// Use a generated scene instead of --in.
    #[arg(long, conflicts_with = "input")]
    synthetic: Option<SceneArg>,
    #[arg(long, default_value_t = 64)]
    synth_size: usize,
    #[arg(long, default_value_t = 20)]
    synth_frames: usize,
    #[arg(long, default_value_t = 7)]
    synth_seed: u64,
}

impl InputArgs {
    fn load(&self) -> Result<VideoSequence> {
        match (&self.input, self.synthetic) {
            (Some(path), _) => {
                let format = self
                    .format
                    .map(VideoFormat::from)
                    .unwrap_or_else(|| VideoFormat::from_path(path));
                load_sequence(path, format, self.rows, self.cols, self.max_frames)
            }
            (None, Some(scene)) => Ok(synth(
                scene,
                self.synth_size,
                self.synth_frames,
                self.synth_seed,
            )),
            (None, None) => Err(CvsError::Config("give --in or --synthetic".into())),
        }
    }
}

fn synth(scene: SceneArg, size: usize, frames: usize, seed: u64) -> VideoSequence {
    match scene {
        SceneArg::Moving => moving_scene(size, size, frames, seed),
        SceneArg::Static => static_scene(size, size, frames, seed),
    }
}

#[derive(Args)]
struct EncodeArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Output container.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 32)]
    block: usize,
    #[arg(long, default_value_t = 0.5)]
    mrk: f64,
    #[arg(long, default_value_t = 0.3)]
    mrnk: f64,
    #[arg(long, default_value_t = 5)]
    gop: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Standard deviation of additive Gaussian measurement noise.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
}

#[derive(Args)]
struct SolverArgs {
    #[arg(long, value_parser = parse_method)]
    dict: Option<DictMethod>,
    /// Key-frame sparsity weight.
    #[arg(long)]
    lambda: Option<f64>,
    /// Non-key temporal sparsity weight.
    #[arg(long)]
    tau: Option<f64>,
    /// Non-key spatial sparsity weight.
    #[arg(long)]
    nonkey_lambda: Option<f64>,
    #[arg(long)]
    omega: Option<f64>,
    /// Outer iteration cap for both decoders.
    #[arg(long)]
    kmax: Option<usize>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long, value_enum, default_value_t = ModeArg::Full)]
    mode: ModeArg,
    /// JSON file with a complete set of decoder parameters.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn parse_method(s: &str) -> std::result::Result<DictMethod, String> {
    s.parse().map_err(|e: CvsError| e.to_string())
}

impl SolverArgs {
    fn params(&self) -> Result<DecodeParams> {
        let mut p = match &self.config {
            Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
            None => DecodeParams::default(),
        };
        if let Some(m) = self.dict {
            p = p.with_method(m);
        }
        if let Some(v) = self.lambda {
            p.key.lambda = v;
        }
        if let Some(v) = self.tau {
            p.nonkey.tau = v;
        }
        if let Some(v) = self.nonkey_lambda {
            p.nonkey.lambda = v;
        }
        if let Some(v) = self.omega {
            p.key.omega = v;
        }
        if let Some(v) = self.kmax {
            p.key.max_iters = v;
            p.nonkey.max_iters = v;
        }
        if let Some(v) = self.mu {
            p.key.mu = v;
            p.nonkey.mu = v;
        }
        p.mode = match self.mode {
            ModeArg::Full => DecodeMode::Full,
            ModeArg::Init => DecodeMode::InitializerOnly,
            ModeArg::Intra => DecodeMode::Intra,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Args)]
struct DecodeArgs {
    /// Input container.
    #[arg(long = "in")]
    input: PathBuf,
    /// Original video, for per-frame PSNR/SSIM.
    #[arg(long = "ref")]
    reference: Option<PathBuf>,
    /// Output video (raw8 or y4m by extension).
    #[arg(long)]
    out: PathBuf,
    /// Per-frame report; defaults to the output path with a .csv extension.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct BenchArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.3,0.5")]
    mr_list: Vec<f64>,
    #[arg(long, value_enum, default_value_t = ScenarioArg::Both)]
    scenario: ScenarioArg,
    /// Key-frame ratio of the fixed-key scenario.
    #[arg(long, default_value_t = 0.5)]
    fixed_key_mr: f64,
    #[arg(long, default_value_t = 5)]
    trials: usize,
    #[arg(long, default_value_t = 32)]
    block: usize,
    #[arg(long, default_value_t = 5)]
    gop: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value = "bench_out")]
    out_dir: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct DictCompareArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, default_value_t = 20)]
    frame_index: usize,
    #[arg(long, default_value_t = 0.3)]
    mrk: f64,
    #[arg(long, default_value_t = 20)]
    iterations: usize,
    #[arg(long, default_value_t = 32)]
    block: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "dict_compare.csv")]
    out: PathBuf,
    #[command(flatten)]
    solver: SolverArgs,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value_t = SceneArg::Moving)]
    kind: SceneArg,
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 20)]
    frames: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 30.0)]
    fps: f64,
}

fn encode(a: &EncodeArgs) -> Result<()> {
    let seq = a.input.load()?;
    let params = EncodeParams {
        block_side: a.block,
        mr_key: a.mrk,
        mr_nonkey: a.mrnk,
        gop_size: a.gop,
        seed: a.seed,
        noise_sigma: a.noise,
    };
    let set = encode_sequence(&seq, &params)?;
    set.save(&a.out)?;
    info!(
        "encoded {} frames of {}x{} into {}",
        seq.frame_count(),
        seq.rows(),
        seq.cols(),
        a.out.display()
    );
    Ok(())
}

fn decode(a: &DecodeArgs) -> Result<()> {
    let set = MeasurementSet::load(&a.input)?;
    let params = a.solver.params()?;
    let reference = match &a.reference {
        Some(path) => Some(load_sequence(
            path,
            VideoFormat::from_path(path),
            Some(set.header.rows),
            Some(set.header.cols),
            Some(set.header.frame_count),
        )?),
        None => None,
    };
    let out = decode_measurements(&set, &params, reference.as_ref())?;
    save_sequence(&out.sequence, &a.out, VideoFormat::from_path(&a.out), 30.0)?;
    let csv = a.csv.clone().unwrap_or_else(|| a.out.with_extension("csv"));
    write_text(&csv, &decode_csv(&out))?;
    if let Some((p, s)) = out.mean_quality(None) {
        println!("mean PSNR {p:.3} dB, mean SSIM {s:.4}");
    }
    Ok(())
}

fn bench(a: &BenchArgs) -> Result<()> {
    let seq = a.input.load()?;
    let scenarios = match a.scenario {
        ScenarioArg::Equal => vec![Scenario::Equal],
        ScenarioArg::FixedKey => vec![Scenario::FixedKey],
        ScenarioArg::Both => vec![Scenario::Equal, Scenario::FixedKey],
    };
    let cfg = BenchConfig {
        mr_list: a.mr_list.clone(),
        scenarios,
        fixed_key_mr: a.fixed_key_mr,
        trials: a.trials,
        encode: EncodeParams {
            block_side: a.block,
            gop_size: a.gop,
            seed: a.seed,
            noise_sigma: a.noise,
            ..EncodeParams::default()
        },
        decode: a.solver.params()?,
    };
    let rows = run_bench(&seq, &cfg)?;
    std::fs::create_dir_all(&a.out_dir)?;
    write_text(&a.out_dir.join("bench.csv"), &bench_csv(&rows))?;
    write_text(&a.out_dir.join("plot_bench.py"), &plot_script("bench.csv"))?;
    write_text(
        &a.out_dir.join("bench_config.json"),
        &serde_json::to_string_pretty(&cfg)?,
    )?;
    for r in &rows {
        println!(
            "{:<9} mr_k={:.2} mr_nk={:.2}  PSNR {:.3} dB  SSIM {:.4}",
            r.scenario.name(),
            r.mr_key,
            r.mr_nonkey,
            r.psnr,
            r.ssim
        );
    }
    Ok(())
}

fn compare(a: &DictCompareArgs) -> Result<()> {
    let seq = a.input.load()?;
    let frame = seq.frames().get(a.frame_index).ok_or_else(|| {
        CvsError::Config(format!(
            "frame {} requested, sequence has {}",
            a.frame_index,
            seq.frame_count()
        ))
    })?;
    let key = a.solver.params()?.key;
    let rows = dict_compare(
        frame,
        a.mrk,
        a.block,
        a.seed,
        &key,
        a.iterations,
        &[DictMethod::Ksvd, DictMethod::Mod, DictMethod::Mdu],
    )?;
    write_text(&a.out, &dict_compare_csv(&rows))?;
    for m in [DictMethod::Ksvd, DictMethod::Mod, DictMethod::Mdu] {
        if let Some(last) = rows.iter().rfind(|r| r.method == m) {
            println!(
                "{:<4} PSNR {:.3} dB after {} iterations, {:.2} ms per update",
                m.name(),
                last.psnr,
                last.iteration,
                last.mean_update_ms
            );
        }
    }
    Ok(())
}

fn write_synth(a: &SynthArgs) -> Result<()> {
    let seq = synth(a.kind, a.size, a.frames, a.seed);
    save_sequence(&seq, &a.out, VideoFormat::from_path(&a.out), a.fps)
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var("CVS_THREADS") else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().map_err(|_| {
        CvsError::Config(format!(
            "CVS_THREADS must be a positive integer, got {raw:?}"
        ))
    })?;
    if n == 0 {
        return Err(CvsError::Config("CVS_THREADS must be at least 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CvsError::Config(format!("thread pool: {e}")))
}

fn run(cli: &Cli) -> Result<()> {
    init_threads()?;
    match &cli.command {
        Command::Encode(a) => encode(a),
        Command::Decode(a) => decode(a),
        Command::Bench(a) => bench(a),
        Command::DictCompare(a) => compare(a),
        Command::Synth(a) => write_synth(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
