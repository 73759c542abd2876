use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use gabor_cine::analysis::{frequency_decompose, render_at, weight_rank, DEFAULT_XI_THRESHOLD};
use gabor_cine::forward::{CineImage, PatternKind};
use gabor_cine::gradcheck::{adjoint_check, gradcheck, random_instance, GradcheckOptions, InstanceSpec};
use gabor_cine::io;
use gabor_cine::metrics::{MetricReport, DEFAULT_BANDS};
use gabor_cine::optim::{fit_observed, render_all, FitConfig, FitReport};
use gabor_cine::phantom::{make_coils, make_mask, noise_std_for_snr, simulate, MaskKind, MaskSpec, PhantomSpec};
use gabor_cine::primitive::Modulation;
use gabor_cine::raster::ComplexGrid;
use gabor_cine::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_NUMERICAL: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "gabor-cine", version, about = "Dynamic MRI reconstruction with Gabor primitives")]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize a phantom dataset container.
    Phantom(PhantomArgs),
    /// Fit a model to a dataset.
    Fit(FitArgs),
    /// Render a fitted model to images.
    Render(RenderArgs),
    /// Compare a reconstruction with a reference.
    Metrics(MetricsArgs),
    /// Finite-difference check of the analytic gradients.
    Gradcheck(GradcheckArgs),
    /// Dot tests of the forward operator and its adjoint.
    Adjointcheck(AdjointArgs),
}

#[derive(Args)]
struct PhantomArgs {
    /// Phantom description (JSON); defaults to the beating-ring preset.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 8)]
    frames: usize,
    #[arg(long, default_value_t = 4)]
    coils: usize,
    #[arg(long, value_enum, default_value_t = MaskArg::VariableDensity)]
    mask: MaskArg,
    #[arg(long, default_value_t = 4.0)]
    accel: f64,
    #[arg(long, default_value_t = 4)]
    acs: usize,
    /// Spokes per frame for radial point sets.
    #[arg(long)]
    spokes: Option<usize>,
    /// Noise standard deviation per real component.
    #[arg(long, conflicts_with = "snr")]
    noise: Option<f64>,
    /// Target measurement SNR in dB.
    #[arg(long)]
    snr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MaskArg {
    UniformRandom,
    VariableDensity,
    RadialPoints,
}

impl From<MaskArg> for MaskKind {
    fn from(m: MaskArg) -> Self {
        match m {
            MaskArg::UniformRandom => MaskKind::UniformRandom,
            MaskArg::VariableDensity => MaskKind::VariableDensity,
            MaskArg::RadialPoints => MaskKind::RadialPoints,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Gabor,
    Gaussian,
}

impl From<ModeArg> for Modulation {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Gabor => Modulation::Gabor,
            ModeArg::Gaussian => Modulation::Gaussian,
        }
    }
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    /// Full configuration (JSON); explicit flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long = "n")]
    n_init: Option<usize>,
    #[arg(long)]
    n_max: Option<usize>,
    #[arg(long)]
    rank_geom: Option<usize>,
    #[arg(long)]
    rank_contrast: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    lambda_s: Option<f64>,
    #[arg(long)]
    lambda_t: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
    /// Suppress progress lines.
    #[arg(long)]
    quiet: bool,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum BandArg {
    Low,
    High,
    All,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    model: PathBuf,
    /// Frame index or `all`.
    #[arg(long, default_value = "all")]
    frame: String,
    /// Output grid relative to the training grid.
    #[arg(long, default_value_t = 1.0)]
    scale: f64,
    #[arg(long, value_enum, default_value_t = BandArg::All)]
    band: BandArg,
    /// Carrier split as a fraction of Nyquist.
    #[arg(long, default_value_t = DEFAULT_XI_THRESHOLD)]
    xi_threshold: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct MetricsArgs {
    /// Fit output directory, render stack, or model file.
    #[arg(long)]
    recon: PathBuf,
    /// `from-dataset` or a render stack file.
    #[arg(long, default_value = "from-dataset")]
    r#ref: String,
    /// Dataset container, required with `--ref from-dataset`.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Band cutoffs as fractions of Nyquist, `c1,c2`.
    #[arg(long)]
    bands: Option<String>,
    /// Output path; `.csv` and `.json` files are written next to it.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 10)]
    n: usize,
    /// `HxWxT`.
    #[arg(long, default_value = "8x8x3")]
    dims: String,
    #[arg(long, default_value_t = 2)]
    coils: usize,
    #[arg(long, value_enum, default_value_t = ModeArg::Gabor)]
    mode: ModeArg,
    /// Corrupt one analytic derivative (negative control).
    #[arg(long)]
    mutate: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum PatternArg {
    Cartesian,
    Points,
    All,
}

#[derive(Args)]
struct AdjointArgs {
    #[arg(long, default_value = "16x16x3")]
    dims: String,
    #[arg(long, value_enum, default_value_t = PatternArg::All)]
    pattern: PatternArg,
    #[arg(long, default_value_t = 2)]
    coils: usize,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Numerical(String),
    Io(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NonFiniteLoss { .. } => Failure::Numerical(e.to_string()),
            Error::Io(_) | Error::Json(_) | Error::Image(_) | Error::Format(_) | Error::UnsupportedVersion { .. } => {
                Failure::Io(e.to_string())
            }
            _ => Failure::Usage(e.to_string()),
        }
    }
}

type CmdResult = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: thread pool: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let result = match cli.command {
        Command::Phantom(a) => cmd_phantom(a),
        Command::Fit(a) => cmd_fit(a),
        Command::Render(a) => cmd_render(a),
        Command::Metrics(a) => cmd_metrics(a),
        Command::Gradcheck(a) => cmd_gradcheck(a),
        Command::Adjointcheck(a) => cmd_adjointcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(Failure::Numerical(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_NUMERICAL)
        }
        Err(Failure::Io(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(EXIT_IO)
        }
    }
}

fn parse_dims(text: &str) -> std::result::Result<(usize, usize, usize), Failure> {
    let parts: Vec<usize> = text
        .split('x')
        .map(|p| p.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Failure::Usage(format!("dims '{text}' must look like HxWxT")))?;
    match parts.as_slice() {
        [h, w, t] if *h > 0 && *w > 0 && *t > 0 => Ok((*h, *w, *t)),
        _ => Err(Failure::Usage(format!("dims '{text}' must look like HxWxT"))),
    }
}

fn cmd_phantom(a: PhantomArgs) -> CmdResult {
    let spec = match &a.spec {
        Some(path) => io::read_json::<PhantomSpec>(path)?,
        None => PhantomSpec::beating_ring(a.height, a.width, a.frames),
    };
    let seed = a.seed.unwrap_or(spec.seed);
    let (h, w) = (spec.height, spec.width);
    let coils = make_coils(a.coils, h, w, seed)?;
    let mask = MaskSpec {
        kind: a.mask.into(),
        accel: a.accel,
        acs_lines: a.acs,
        spokes: a.spokes,
        seed: seed.wrapping_add(1),
    };
    let pattern = make_mask(&mask, spec.frames, h, w)?;
    let noise_std = match (a.noise, a.snr) {
        (Some(std), _) => std,
        (None, Some(snr)) => {
            let clean = simulate(&spec, &coils, &pattern, 0.0, 0)?;
            noise_std_for_snr(&clean.samples, snr)
        }
        (None, None) => 0.0,
    };
    let dataset = simulate(&spec, &coils, &pattern, noise_std, seed.wrapping_add(2))?;
    io::write_dataset(&a.out, &dataset)?;
    io::write_json(&a.out.join("phantom.json"), &spec)?;
    io::write_json(&a.out.join("mask.json"), &mask)?;
    let total: usize = (0..spec.frames).map(|t| dataset.pattern.samples_in_frame(t)).sum();
    println!(
        "wrote {} ({}x{}x{}, {} coils, {} samples/coil, noise std {:.3e})",
        a.out.display(),
        h,
        w,
        spec.frames,
        a.coils,
        total,
        noise_std
    );
    Ok(())
}

fn fit_config(a: &FitArgs) -> std::result::Result<FitConfig, Failure> {
    let mut cfg = match &a.config {
        Some(path) => io::read_json::<FitConfig>(path)?,
        None => FitConfig::default(),
    };
    if let Some(m) = a.mode {
        cfg.mode = m.into();
    }
    if let Some(v) = a.n_init {
        cfg.n_init = v;
    }
    if let Some(v) = a.n_max {
        cfg.n_max = v;
    }
    if let Some(v) = a.rank_geom {
        cfg.rank_geom = v;
    }
    if let Some(v) = a.rank_contrast {
        cfg.rank_contrast = v;
    }
    if let Some(v) = a.iters {
        cfg.iters = v;
    }
    if let Some(v) = a.lambda_s {
        cfg.lambda_s = v;
    }
    if let Some(v) = a.lambda_t {
        cfg.lambda_t = v;
    }
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn frame_grids(x: &CineImage, prefix: &str) -> Vec<(String, ComplexGrid)> {
    (0..x.frames).map(|t| (format!("{prefix}_{t:03}"), x.frame_grid(t))).collect()
}

fn max_magnitude(data: &[gabor_cine::Complex64]) -> f64 {
    data.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn cmd_fit(a: FitArgs) -> CmdResult {
    let cfg = fit_config(&a)?;
    let dataset = io::read_dataset(&a.data)?;
    let quiet = a.quiet;
    let every = (cfg.iters / 20).max(1);
    let (set, report) = fit_observed(&dataset, &cfg, |info| {
        if !quiet && (info.iteration % every == 0) {
            eprintln!(
                "iter {:>6}  data {:.6e}  sparsity {:.3e}  tv {:.3e}  n {}",
                info.iteration, info.data, info.sparsity, info.tv, info.count
            );
        }
    })?;
    let recon = render_all(&set)?;
    let scale = match &dataset.reference {
        Some(r) => max_magnitude(&r.data),
        None => max_magnitude(&recon.data),
    };
    std::fs::create_dir_all(&a.out).map_err(Error::from)?;
    io::write_model(&a.out.join("model.gcm"), &set, Some(scale))?;
    write_report(&a.out.join("report.json"), &report)?;
    let renders = a.out.join("renders");
    std::fs::create_dir_all(&renders).map_err(Error::from)?;
    io::write_cine(&renders.join("render.cine"), &recon)?;
    io::write_magnitude_pngs(&renders, "frames", &frame_grids(&recon, "frame"), scale)?;
    println!("final data loss {:.6e}", report.final_loss[0]);
    println!("primitives {}", report.final_count);
    if let Some(m) = &report.metrics {
        println!("psnr {:.3} dB  ssim {:.4}", m.psnr_db.mean, m.ssim.mean);
    }
    println!("wall time {:.1} s", report.wall_time_s);
    Ok(())
}

fn write_report(path: &Path, report: &FitReport) -> std::result::Result<(), Failure> {
    #[derive(Serialize)]
    struct Versioned<'a> {
        version: [u32; 2],
        #[serde(flatten)]
        report: &'a FitReport,
    }
    io::write_json(
        path,
        &Versioned {
            version: [io::FORMAT_MAJOR, io::FORMAT_MINOR],
            report,
        },
    )?;
    Ok(())
}

fn cmd_render(a: RenderArgs) -> CmdResult {
    let model = io::read_model(&a.model)?;
    let set = &model.set;
    let frames: Vec<usize> = if a.frame == "all" {
        (0..set.frames()).collect()
    } else {
        let t: usize = a
            .frame
            .parse()
            .map_err(|_| Failure::Usage(format!("--frame must be an index or 'all', got '{}'", a.frame)))?;
        if t >= set.frames() {
            return Err(Failure::Usage(format!("frame {t} out of range (model has {})", set.frames())));
        }
        vec![t]
    };
    if !(a.scale > 0.0) {
        return Err(Failure::Usage("--scale must be positive".into()));
    }
    let height = (set.grid.height as f64 * a.scale).round() as usize;
    let width = (set.grid.width as f64 * a.scale).round() as usize;
    let native = height == set.grid.height && width == set.grid.width;
    if a.band != BandArg::All && !native {
        return Err(Failure::Usage("--band low/high is only available at --scale 1".into()));
    }
    let mut grids = Vec::with_capacity(frames.len());
    for &t in &frames {
        let grid = match a.band {
            BandArg::All => render_at(set, t, height, width)?,
            BandArg::Low => frequency_decompose(set, t, a.xi_threshold)?.low,
            BandArg::High => frequency_decompose(set, t, a.xi_threshold)?.high,
        };
        grids.push(grid);
    }
    let mut stack = CineImage::zeros(height, width, grids.len());
    for (i, g) in grids.iter().enumerate() {
        stack.frame_mut(i).copy_from_slice(&g.data);
    }
    let scale = model.display_scale.unwrap_or_else(|| max_magnitude(&stack.data));
    std::fs::create_dir_all(&a.out).map_err(Error::from)?;
    io::write_cine(&a.out.join("render.cine"), &stack)?;
    let named: Vec<(String, ComplexGrid)> = frames.iter().copied().zip(grids).map(|(t, g)| (format!("frame_{t:03}"), g)).collect();
    io::write_magnitude_pngs(&a.out, "frames", &named, scale)?;
    println!("wrote {} frame(s) at {height}x{width} to {}", frames.len(), a.out.display());
    Ok(())
}

fn parse_bands(text: &Option<String>) -> std::result::Result<(f64, f64), Failure> {
    let Some(text) = text else {
        return Ok(DEFAULT_BANDS);
    };
    let parts: Vec<f64> = text
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Failure::Usage(format!("--bands '{text}' must look like c1,c2")))?;
    match parts.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err(Failure::Usage(format!("--bands '{text}' must look like c1,c2"))),
    }
}

fn cmd_metrics(a: MetricsArgs) -> CmdResult {
    let cutoffs = parse_bands(&a.bands)?;
    let mut rank = None;
    let recon = if a.recon.is_dir() {
        io::read_cine(&a.recon.join("renders").join("render.cine"))?
    } else {
        match io::read_model(&a.recon) {
            Ok(model) => {
                rank = Some(weight_rank(&model.set)?);
                render_all(&model.set)?
            }
            Err(Error::Format(_)) => io::read_cine(&a.recon)?,
            Err(e) => return Err(e.into()),
        }
    };
    let reference = if a.r#ref == "from-dataset" {
        let data = a
            .data
            .as_ref()
            .ok_or_else(|| Failure::Usage("--ref from-dataset needs --data".into()))?;
        io::read_dataset(data)?
            .reference
            .ok_or_else(|| Failure::Usage("dataset has no reference image".into()))?
    } else {
        io::read_cine(Path::new(&a.r#ref))?
    };
    let mut report = MetricReport::compute(&recon, &reference, cutoffs)?;
    report.weight_rank = rank;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(Error::from)?;
    }
    std::fs::write(a.out.with_extension("csv"), report.to_csv()).map_err(Error::from)?;
    io::write_json(&a.out.with_extension("json"), &report)?;
    println!(
        "psnr {:.3} dB  ssim {:.4}  bands {:.2}/{:.2}/{:.2} dB",
        report.psnr_db.mean, report.ssim.mean, report.band_psnr.low, report.band_psnr.mid, report.band_psnr.high
    );
    Ok(())
}

fn emit<T: Serialize>(out: &Option<PathBuf>, value: &T) -> CmdResult {
    match out {
        Some(path) => io::write_json(path, value)?,
        None => println!("{}", serde_json::to_string_pretty(value).map_err(Error::from)?),
    }
    Ok(())
}

fn cmd_gradcheck(a: GradcheckArgs) -> CmdResult {
    let (height, width, frames) = parse_dims(&a.dims)?;
    if frames < 2 {
        return Err(Failure::Usage("gradcheck needs at least 2 frames".into()));
    }
    let spec = InstanceSpec {
        seed: a.seed,
        primitives: a.n,
        height,
        width,
        frames,
        coils: a.coils,
        rank_geom: 2.min(frames - 1),
        rank_contrast: 2,
        mode: a.mode.into(),
    };
    let (set, dataset) = random_instance(&spec)?;
    let mut reports = Vec::new();
    for base in [GradcheckOptions::data_only(), GradcheckOptions::regularized(1e-5, 1e-2)] {
        let opts = GradcheckOptions { mutate: a.mutate, ..base };
        let r = gradcheck(&set, &dataset, &opts)?;
        println!(
            "lambda_s={:e} lambda_t={:e}: max relative error {:.3e} (tolerance {:e}) {}",
            r.lambda_s,
            r.lambda_t,
            r.max_rel_error,
            r.tolerance,
            if r.passed { "PASS" } else { "FAIL" }
        );
        for (group, err) in &r.per_group {
            println!("  {group:<13} {err:.3e}");
        }
        reports.push(r);
    }
    emit(&a.out, &reports)?;
    if reports.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(Failure::Numerical("gradient check failed".into()))
    }
}

fn cmd_adjointcheck(a: AdjointArgs) -> CmdResult {
    let (height, width, frames) = parse_dims(&a.dims)?;
    let kinds = match a.pattern {
        PatternArg::Cartesian => vec![PatternKind::CartesianMask],
        PatternArg::Points => vec![PatternKind::PointSet],
        PatternArg::All => vec![PatternKind::CartesianMask, PatternKind::PointSet],
    };
    let mut reports = Vec::new();
    for kind in kinds {
        let r = adjoint_check(kind, height, width, frames, a.coils, a.trials, a.seed)?;
        println!(
            "{:?}: {} trials, max relative discrepancy {:.3e} (tolerance {:e}) {}",
            r.kind,
            r.trials,
            r.max_rel_discrepancy,
            r.tolerance,
            if r.passed { "PASS" } else { "FAIL" }
        );
        reports.push(r);
    }
    emit(&a.out, &reports)?;
    if reports.iter().all(|r| r.passed) {
        Ok(())
    } else {
        Err(Failure::Numerical("adjoint check failed".into()))
    }
}
