use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use depthac::corruption::{apply, schedule_perturb, CorruptionKind, SchedulerConfig, Severity};
use depthac::datagen::{generate_dataset, list_images, Dataset};
use depthac::evalsuite::{load_pairs, ordinal_accuracy, robustness_sweep};
use depthac::gradcheck::run_gradcheck;
use depthac::io::{load_image, load_pfm, save_image};
use depthac::model::load_checkpoint;
use depthac::report::{steps_summary, sweep_grid};
use depthac::sdr::{patchify, row_map_image, sdr_row_map, DistanceMetric};
use depthac::trainer::{train, TrainConfig};
use depthac::Rng;

/// Corruption synthesis, perturbation-consistency training and robustness
/// evaluation for relative depth.
#[derive(Debug, Parser)]
#[command(name = "depthac", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Apply one corruption at a fixed severity to every image of a directory
    Corrupt(CorruptArgs),
    /// Apply the randomized training-time perturbation schedule to every image of a directory
    ScheduleCorrupt(ScheduleArgs),
    /// Generate synthetic scenes with ground-truth disparity
    Datagen(DatagenArgs),
    /// Pretrain (optional) and fine-tune a model
    Train(TrainArgs),
    /// Evaluate a checkpoint on clean and corrupted data
    Eval(EvalArgs),
    /// Export the spatial distance relation row of one patch as a heatmap
    SdrMap(SdrMapArgs),
    /// Finite-difference checks of all analytic gradients
    Gradcheck(GradcheckArgs),
    /// Render metric grids, loss summaries and heatmaps from logs
    Report(ReportArgs),
}

#[derive(Debug, Args)]
struct CorruptArgs {
    /// Corruption tag (dark, fog, snow, motion_blur, zoom_blur, contrast, gaussian_noise)
    #[arg(long)]
    kind: CorruptionKind,
    /// Severity level 1..5
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u8).range(1..=5))]
    severity: u8,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory of PGM/PPM images
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "out")]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct ScheduleArgs {
    #[arg(long, default_value_t = 0.1)]
    p_blur: f64,
    #[arg(long, default_value_t = 0.2)]
    p_weather: f64,
    /// Apply the low-light transform before the sampled perturbation
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    apply_dark: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long = "out")]
    output: PathBuf,
    /// JSON-lines manifest of the applied corruptions
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DatagenArgs {
    #[arg(long, default_value_t = 100)]
    count: usize,
    /// Image side in pixels (multiple of 8)
    #[arg(long, default_value_t = 64)]
    size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    /// `key = value` training configuration (defaults for unset keys)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset directory (manifest.jsonl or plain images)
    #[arg(long)]
    data: PathBuf,
    /// Output checkpoint
    #[arg(long)]
    out: PathBuf,
    /// JSON-lines step log
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    /// Model checkpoint
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset directory with manifest.jsonl
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated corruption tags to sweep
    #[arg(long, value_delimiter = ',', default_value = "dark,fog,snow,motion_blur,zoom_blur,contrast,gaussian_noise")]
    kinds: Vec<CorruptionKind>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5", value_parser = clap::value_parser!(u8).range(1..=5))]
    severities: Vec<u8>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON-lines report path
    #[arg(long)]
    report: PathBuf,
    /// Ordinal pairs file (JSON lines of image, ax, ay, bx, by, closer)
    #[arg(long)]
    pairs: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SdrMapArgs {
    /// Single-channel PFM disparity map
    #[arg(long)]
    disparity: PathBuf,
    /// Patch side in pixels
    #[arg(long, default_value_t = 14)]
    patch: usize,
    /// Query patch as ROW,COL on the patch grid
    #[arg(long, default_value = "0,0")]
    query: String,
    /// euclidean or manhattan
    #[arg(long, default_value = "euclidean")]
    metric: DistanceMetric,
    /// Pixels per patch in the output (default: the patch size)
    #[arg(long)]
    scale: Option<usize>,
    /// Output PGM heatmap
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Corrupt the analytic gradient of this flat parameter index
    #[arg(long, hide = true)]
    inject_fault: Option<usize>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Training step log
    #[arg(long)]
    steps: Option<PathBuf>,
    /// Robustness sweep report
    #[arg(long)]
    sweep: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    out: PathBuf,
    /// Disparity map for heatmap export
    #[arg(long)]
    disparity: Option<PathBuf>,
    /// Heatmap query ROW,COL (repeatable)
    #[arg(long)]
    query: Vec<String>,
    #[arg(long, default_value_t = 14)]
    patch: usize,
    #[arg(long, default_value = "euclidean")]
    metric: DistanceMetric,
}

fn parse_query(q: &str) -> anyhow::Result<(usize, usize)> {
    let (r, c) = q.split_once(',').with_context(|| format!("query {q:?} is not ROW,COL"))?;
    Ok((r.trim().parse()?, c.trim().parse()?))
}

fn create(path: &Path) -> anyhow::Result<BufWriter<fs::File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn corrupt(a: CorruptArgs) -> anyhow::Result<()> {
    let sev = Severity::new(a.severity)?;
    let root = Rng::new(a.seed);
    let images = list_images(&a.input)?;
    if images.is_empty() {
        bail!("no PGM/PPM images in {}", a.input.display());
    }
    fs::create_dir_all(&a.output)?;
    for p in &images {
        let name = file_name(p);
        let out = apply(a.kind, &load_image(p)?, sev, &mut root.fork(&name));
        save_image(&out, a.output.join(&name))?;
    }
    println!("{} images corrupted with {}:{}", images.len(), a.kind, a.severity);
    Ok(())
}

#[derive(Serialize)]
struct ScheduleLine {
    file: String,
    kinds: Vec<CorruptionKind>,
    severities: Vec<u8>,
    seed: u64,
}

fn schedule_corrupt(a: ScheduleArgs) -> anyhow::Result<()> {
    let cfg = SchedulerConfig::new(a.p_blur, a.p_weather, a.apply_dark)?;
    let root = Rng::new(a.seed);
    let images = list_images(&a.input)?;
    if images.is_empty() {
        bail!("no PGM/PPM images in {}", a.input.display());
    }
    fs::create_dir_all(&a.output)?;
    let mut log = a.log.as_deref().map(create).transpose()?;
    for p in &images {
        let name = file_name(p);
        let (out, applied) = schedule_perturb(&load_image(p)?, &cfg, &mut root.fork(&name));
        save_image(&out, a.output.join(&name))?;
        if let Some(w) = log.as_mut() {
            let line = ScheduleLine {
                file: name,
                kinds: applied.iter().map(|c| c.kind).collect(),
                severities: applied.iter().map(|c| c.severity.level()).collect(),
                seed: a.seed,
            };
            writeln!(w, "{}", serde_json::to_string(&line)?)?;
        }
    }
    if let Some(mut w) = log {
        w.flush()?;
    }
    println!("{} images perturbed", images.len());
    Ok(())
}

fn datagen(a: DatagenArgs) -> anyhow::Result<()> {
    let entries = generate_dataset(a.count, a.size, a.seed, &a.out)?;
    println!("{} scenes written to {}", entries.len(), a.out.display());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> anyhow::Result<()> {
    let cfg = match &a.config {
        Some(p) => TrainConfig::load(p)?,
        None => TrainConfig::default(),
    };
    let mut log = a.log.as_deref().map(create).transpose()?;
    let reports = train(&cfg, &a.data, &a.out, log.as_mut().map(|w| w as &mut dyn Write))?;
    if let Some(mut w) = log {
        w.flush()?;
    }
    match reports.last() {
        Some(r) => println!("{} steps, final l_total={:.6}; checkpoint {}", reports.len(), r.l_total, a.out.display()),
        None => println!("no fine-tuning steps; checkpoint {}", a.out.display()),
    }
    Ok(())
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let model = load_checkpoint(&a.ckpt)?;
    let data = Dataset::open(&a.data)?;
    let severities = a.severities.iter().map(|s| Severity::new(*s)).collect::<Result<Vec<_>, _>>()?;
    let mut w = create(&a.report)?;
    let (report, rows) = robustness_sweep(&model, &data, &a.kinds, &severities, a.seed, Some(&mut w))?;
    w.flush()?;
    for r in &rows {
        println!("{:<15} {} absrel={:.6} delta1={:.6}", r.kind, r.severity, r.absrel, r.delta1);
    }
    println!("pixels evaluated per condition: {}", report.n_pixels);
    if let Some(p) = &a.pairs {
        let pairs = load_pairs(p)?;
        let mut correct = 0.0;
        for lp in &pairs {
            let sample = data
                .samples
                .iter()
                .find(|s| s.name == lp.image)
                .with_context(|| format!("pairs file names unknown image {:?}", lp.image))?;
            correct += ordinal_accuracy(&model.predict(&sample.image)?, &[lp.pair])?;
        }
        if pairs.is_empty() {
            bail!("pairs file {} is empty", p.display());
        }
        println!("ordinal_accuracy={:.6} ({} pairs)", correct / pairs.len() as f64, pairs.len());
    }
    Ok(())
}

fn export_heatmap(
    disparity: &Path,
    patch: usize,
    query: (usize, usize),
    metric: DistanceMetric,
    scale: usize,
    out: &Path,
) -> anyhow::Result<()> {
    let d = load_pfm(disparity)?;
    let (ch, cw) = (d.height() / patch * patch, d.width() / patch * patch);
    if ch == 0 || cw == 0 {
        bail!("patch size {patch} exceeds the {}x{} map", d.height(), d.width());
    }
    let grid = patchify(&d.center_crop(ch, cw)?, patch)?;
    let row = sdr_row_map(&grid, query, metric)?;
    save_image(&row_map_image(&row, grid.hp(), grid.wp(), scale)?, out)?;
    Ok(())
}

fn sdr_map(a: SdrMapArgs) -> anyhow::Result<()> {
    let query = parse_query(&a.query)?;
    export_heatmap(&a.disparity, a.patch, query, a.metric, a.scale.unwrap_or(a.patch), &a.out)?;
    println!("heatmap written to {}", a.out.display());
    Ok(())
}

fn gradcheck(a: GradcheckArgs) -> anyhow::Result<bool> {
    let r = run_gradcheck(a.seed, a.inject_fault)?;
    print!("{r}");
    if !r.passed() {
        for (label, s) in [("loss", &r.loss), ("sdr", &r.sdr), ("model", &r.model)] {
            if !s.passed() {
                eprintln!("gradient check failed ({label}): {}", s.worst);
            }
        }
    }
    Ok(r.passed())
}

fn report(a: ReportArgs) -> anyhow::Result<()> {
    fs::create_dir_all(&a.out)?;
    if let Some(p) = &a.sweep {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let grid = sweep_grid(&text).with_context(|| format!("in {}", p.display()))?;
        fs::write(a.out.join("grid.txt"), &grid)?;
        print!("{grid}");
    }
    if let Some(p) = &a.steps {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let summary = steps_summary(&text).with_context(|| format!("in {}", p.display()))?;
        fs::write(a.out.join("steps.txt"), &summary)?;
        print!("{summary}");
    }
    if !a.query.is_empty() {
        let Some(d) = &a.disparity else { bail!("--query needs --disparity") };
        for q in &a.query {
            let (r, c) = parse_query(q)?;
            let out = a.out.join(format!("sdr_{r}_{c}.pgm"));
            export_heatmap(d, a.patch, (r, c), a.metric, a.patch, &out)?;
            println!("heatmap written to {}", out.display());
        }
    }
    Ok(())
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var("ACDK_THREADS") else { return Ok(()) };
    let n: usize =
        v.parse().ok().filter(|n| *n > 0).ok_or(format!("ACDK_THREADS must be a positive integer, got {v:?}"))?;
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(1);
    }
    let result = match cli.command {
        Command::Corrupt(a) => corrupt(a).map(|_| true),
        Command::ScheduleCorrupt(a) => schedule_corrupt(a).map(|_| true),
        Command::Datagen(a) => datagen(a).map(|_| true),
        Command::Train(a) => train_cmd(a).map(|_| true),
        Command::Eval(a) => eval(a).map(|_| true),
        Command::SdrMap(a) => sdr_map(a).map(|_| true),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Report(a) => report(a).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
