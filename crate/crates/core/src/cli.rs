//! The `evdb` command-line front end.
//!
//! Every subcommand is deterministic for a fixed `--seed`. Reports go to
//! stdout as JSON (and to `--report` when given); artifacts are written via
//! a temporary file that is renamed into place.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use crate::edi::{edi_deblur, granularity_study, DEFAULT_THRESHOLD};
use crate::error::{param, Error, Result};
use crate::events::{parse_events, EventFormat, EventStream};
use crate::image::IntensityImage;
use crate::kernels::{load_weights, run_point_branch, BranchConfig, FeatureMap, ModelConfig, WeightBundle};
use crate::metrics::{total_loss, LossWeights, MetricOptions, DEFAULT_SCALES};
use crate::representations::{
    bicubic_upscale, build_point_cloud, build_voxel, normalize_points, NormalizedPointCloud, ScaleCoordinates,
};
use crate::sampling::{density_crop, DEFAULT_DENSITY_CELL};

pub const THREADS_ENV: &str = "EVDB_THREADS";

#[derive(Debug, Parser)]
#[command(name = "evdb", version, about = "Event-based motion deblurring toolkit")]
pub struct Cli {
    /// TOML file supplying flags: top-level keys apply to every subcommand
    /// that accepts them, a `[subcommand]` table to that subcommand only.
    /// Flags on the command line win.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Convert an event file into a voxel grid and/or a point cloud.
    Convert(ConvertArgs),
    /// Recover a sharp frame from a blurry frame and its events.
    Edi(EdiArgs),
    /// Run the point branch and write mapped, diffused and fused features.
    Diffuse(DiffuseArgs),
    /// Choose a density-guided crop window.
    Crop(CropArgs),
    /// Compare two images.
    Metrics(MetricsArgs),
}

#[derive(Debug, Args)]
pub struct SensorArg {
    /// Sensor size for event files without a header.
    #[arg(long, num_args = 2, value_names = ["W", "H"])]
    pub sensor: Option<Vec<u16>>,
}

impl SensorArg {
    fn dims(&self) -> Option<(u16, u16)> {
        self.sensor.as_ref().map(|v| (v[0], v[1]))
    }
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct ConvertArgs {
    /// Event file (text or binary).
    pub input: PathBuf,
    #[command(flatten)]
    pub sensor: SensorArg,
    /// Write the voxel grid here.
    #[arg(long, value_name = "PATH")]
    pub voxel: Option<PathBuf>,
    /// Bicubically resample the voxel grid to H x W.
    #[arg(long, num_args = 2, value_names = ["H", "W"])]
    pub upscale: Option<Vec<usize>>,
    /// Write the point cloud here.
    #[arg(long, value_name = "PATH")]
    pub points: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    pub bins: usize,
    #[arg(long, default_value_t = 1024)]
    pub per_bin: usize,
    /// Spatial ratio applied to point coordinates.
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Store sensor-space points instead of normalised ones.
    #[arg(long)]
    pub raw: bool,
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct EdiArgs {
    /// Blurry frame (PGM or IMGF1).
    pub image: PathBuf,
    /// Events inside the exposure.
    pub events: PathBuf,
    #[command(flatten)]
    pub sensor: SensorArg,
    /// Output frame; `.pgm` writes 8-bit PGM, anything else IMGF1.
    #[arg(long, short, value_name = "PATH")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4096)]
    pub steps: u64,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    pub c: f64,
    /// Reference sharp frame for metrics and the granularity study.
    #[arg(long, value_name = "PATH")]
    pub ground_truth: Option<PathBuf>,
    /// Step counts for a granularity study, ascending.
    #[arg(long, value_delimiter = ',', value_name = "A,B,...")]
    pub study: Option<Vec<u64>>,
    /// Integer ratio between image and sensor resolution.
    #[arg(long)]
    pub gamma: Option<u16>,
    #[arg(long, default_value_t = 1.0)]
    pub peak: f64,
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct DiffuseArgs {
    /// Normalised point-cloud file.
    pub points: PathBuf,
    /// Weight file.
    #[arg(long, value_name = "PATH", conflicts_with = "random_weights")]
    pub weights: Option<PathBuf>,
    /// Use seeded random weights instead of a file.
    #[arg(long, value_name = "SEED")]
    pub random_weights: Option<u64>,
    #[arg(long, default_value_t = 32)]
    pub channels: usize,
    #[arg(long, default_value_t = 32)]
    pub hidden: usize,
    #[arg(long, default_value_t = 20)]
    pub depth: usize,
    #[arg(long, num_args = 2, value_names = ["H", "W"], default_values_t = [160, 320])]
    pub target: Vec<usize>,
    #[arg(long, default_value_t = 1024)]
    pub group_count: usize,
    #[arg(long, default_value_t = 24)]
    pub neighbors: usize,
    #[arg(long, default_value_t = 5.0)]
    pub alpha_max: f64,
    /// Image-branch features; seeded random features when absent.
    #[arg(long, value_name = "PATH")]
    pub fusion_features: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct CropArgs {
    /// Event file.
    pub events: PathBuf,
    #[command(flatten)]
    pub sensor: SensorArg,
    #[arg(long, default_value_t = 512)]
    pub side: usize,
    #[arg(long, default_value_t = 0.8)]
    pub threshold: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Density cell size in sensor pixels.
    #[arg(long, default_value_t = DEFAULT_DENSITY_CELL)]
    pub cell: usize,
    /// Frame size when it differs from the sensor.
    #[arg(long, num_args = 2, value_names = ["H", "W"])]
    pub frame: Option<Vec<usize>>,
    /// Image to cut the window from.
    #[arg(long, value_name = "PATH", requires = "out")]
    pub apply: Option<PathBuf>,
    /// Destination of the cropped patch.
    #[arg(long, short, value_name = "PATH")]
    pub out: Option<PathBuf>,
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(args_override_self = true)]
pub struct MetricsArgs {
    /// Predicted image.
    pub pred: PathBuf,
    /// Reference image.
    pub gt: PathBuf,
    /// Loss weights `l1,ssim,msfr`.
    #[arg(long, default_value = "10,1,0.1")]
    pub weights: String,
    #[arg(long, default_value_t = 1.0)]
    pub peak: f64,
    #[arg(long, default_value_t = DEFAULT_SCALES)]
    pub scales: usize,
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
}

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Numeric(_) | Error::Shape(_) | Error::Weights(_) | Error::Unsorted => 1,
        Error::Parse { .. }
        | Error::Bounds { .. }
        | Error::Polarity { .. }
        | Error::Window { .. }
        | Error::Param(_)
        | Error::Format(_)
        | Error::Io(_) => 2,
    }
}

/// Entry point; returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let argv = match apply_config(argv) {
        Ok(a) => a,
        Err(e) => return report_error(&e),
    };
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    if let Err(e) = configure_threads() {
        return report_error(&e);
    }
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => report_error(&e),
    }
}

fn report_error(e: &Error) -> i32 {
    eprintln!("evdb: error: {e}");
    exit_code(e)
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| param(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    // A pool may already exist when `run` is called twice in one process.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

/// Removes `--config PATH` from `argv` and splices the file's flags in right
/// after the subcommand name, so later command-line flags override them.
fn apply_config(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut rest = Vec::with_capacity(argv.len());
    let mut config = None;
    let mut it = argv.into_iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            config = Some(PathBuf::from(it.next().ok_or_else(|| param("--config needs a path"))?));
        } else if let Some(p) = s.strip_prefix("--config=") {
            config = Some(PathBuf::from(p));
        } else {
            rest.push(a);
        }
    }
    let Some(path) = config else {
        return Ok(rest);
    };
    let text = fs::read_to_string(&path)?;
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| Error::Format(format!("{}: {}", path.display(), e.message())))?;

    let root = Cli::command();
    let Some(pos) = rest
        .iter()
        .skip(1)
        .position(|a| root.find_subcommand(a.to_string_lossy().as_ref()).is_some())
        .map(|p| p + 1)
    else {
        return Ok(rest);
    };
    let name = rest[pos].to_string_lossy().into_owned();
    let sub = root.find_subcommand(&name).expect("found above");

    let mut injected = Vec::new();
    for (key, value) in &table {
        if value.is_table() {
            continue;
        }
        if find_long(sub, key).is_some() {
            push_flag(&mut injected, sub, key, value)?;
        }
    }
    if let Some(section) = table.get(&name) {
        let section = section
            .as_table()
            .ok_or_else(|| Error::Format(format!("[{name}] must be a table")))?;
        for (key, value) in section {
            if find_long(sub, key).is_none() {
                return Err(param(format!("config key {key:?} is not a flag of `{name}`")));
            }
            push_flag(&mut injected, sub, key, value)?;
        }
    }
    let tail = rest.split_off(pos + 1);
    rest.extend(injected);
    rest.extend(tail);
    Ok(rest)
}

fn find_long<'a>(cmd: &'a clap::Command, key: &str) -> Option<&'a clap::Arg> {
    let long = key.replace('_', "-");
    cmd.get_arguments().find(|a| a.get_long() == Some(long.as_str()))
}

fn push_flag(out: &mut Vec<OsString>, cmd: &clap::Command, key: &str, value: &toml::Value) -> Result<()> {
    let arg = find_long(cmd, key).expect("checked by caller");
    let flag = format!("--{}", arg.get_long().expect("long flag"));
    let scalar = |v: &toml::Value| -> Result<String> {
        match v {
            toml::Value::String(s) => Ok(s.clone()),
            toml::Value::Integer(i) => Ok(i.to_string()),
            toml::Value::Float(f) => Ok(f.to_string()),
            other => Err(param(format!("unsupported config value for {key:?}: {other}"))),
        }
    };
    match value {
        toml::Value::Boolean(true) => out.push(flag.into()),
        toml::Value::Boolean(false) => {}
        toml::Value::Array(items) => {
            let parts = items.iter().map(scalar).collect::<Result<Vec<_>>>()?;
            out.push(flag.into());
            if arg.get_value_delimiter().is_some() {
                out.push(parts.join(",").into());
            } else {
                out.extend(parts.into_iter().map(OsString::from));
            }
        }
        v => {
            out.push(flag.into());
            out.push(scalar(v)?.into());
        }
    }
    Ok(())
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Convert(a) => cmd_convert(&a),
        Command::Edi(a) => cmd_edi(&a),
        Command::Diffuse(a) => cmd_diffuse(&a),
        Command::Crop(a) => cmd_crop(&a),
        Command::Metrics(a) => cmd_metrics(&a),
    }
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))
}

/// Writes `bytes` to `path` through a sibling temporary file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn load_stream(path: &Path, sensor: &SensorArg) -> Result<EventStream> {
    let bytes = read(path)?;
    let stream = parse_events(&bytes, EventFormat::detect(&bytes), sensor.dims())?;
    Ok(stream.sorted())
}

fn load_image(path: &Path) -> Result<IntensityImage> {
    IntensityImage::decode(&read(path)?)
}

fn encode_image(img: &IntensityImage, path: &Path) -> Result<Vec<u8>> {
    let is_pgm = path
        .extension()
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
    if is_pgm {
        Ok(img.to_pgm())
    } else {
        img.to_imgf()
    }
}

fn emit<T: Serialize>(report: &T, path: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(report).expect("reports serialise");
    text.push('\n');
    if let Some(p) = path {
        write_atomic(p, text.as_bytes())?;
    }
    print!("{text}");
    Ok(())
}

fn cmd_convert(a: &ConvertArgs) -> Result<()> {
    if a.voxel.is_none() && a.points.is_none() {
        return Err(param("nothing to do: pass --voxel and/or --points"));
    }
    if a.upscale.is_some() && a.voxel.is_none() {
        return Err(param("--upscale needs --voxel"));
    }
    let stream = load_stream(&a.input, &a.sensor)?;
    let mut report = serde_json::Map::new();
    report.insert("events".into(), json!(stream.len()));
    report.insert("sensor".into(), json!([stream.width(), stream.height()]));
    report.insert("window".into(), json!([stream.t0(), stream.tn()]));

    if let Some(path) = &a.voxel {
        let mut grid = build_voxel(&stream, a.bins)?;
        if let Some(hw) = &a.upscale {
            grid = bicubic_upscale(&grid, hw[0], hw[1])?;
        }
        write_atomic(path, &grid.to_bytes()?)?;
        report.insert(
            "voxel".into(),
            json!({"bins": grid.bins(), "height": grid.height(), "width": grid.width(), "total": grid.total()}),
        );
    }
    if let Some(path) = &a.points {
        let cloud = build_point_cloud(&stream, a.bins, a.per_bin, a.seed)?.scale_coordinates(a.gamma)?;
        let bytes = if a.raw {
            crate::representations::encode_points(cloud.bins, cloud.per_bin, &cloud.points)?
        } else {
            let w = stream.width() as f64 * a.gamma;
            let h = stream.height() as f64 * a.gamma;
            normalize_points(&cloud, w, h, &cloud.bin_edges)?.to_bytes()?
        };
        write_atomic(path, &bytes)?;
        report.insert(
            "points".into(),
            json!({"bins": cloud.bins, "per_bin": cloud.per_bin, "normalized": !a.raw}),
        );
    }
    emit(&report, a.report.as_deref())
}

fn cmd_edi(a: &EdiArgs) -> Result<()> {
    let blurry = load_image(&a.image)?;
    let mut stream = load_stream(&a.events, &a.sensor)?;
    if let Some(g) = a.gamma {
        stream = stream.upsample_nearest(g)?;
    }
    let sharp = edi_deblur(&blurry, &stream, a.c, a.steps)?;
    write_atomic(&a.out, &encode_image(&sharp, &a.out)?)?;

    let gt = a.ground_truth.as_deref().map(load_image).transpose()?;
    let metrics = match &gt {
        Some(gt) => {
            let opts = MetricOptions {
                peak: a.peak,
                scales: DEFAULT_SCALES,
            };
            Some(total_loss(&sharp, gt, &LossWeights::default(), &opts)?)
        }
        None => None,
    };
    let study = match (&a.study, &gt) {
        (Some(steps), Some(gt)) => {
            let r = granularity_study(gt, &stream, a.c, steps)?;
            Some(json!({"rows": r.rows, "slope": r.loglog_slope()}))
        }
        (Some(_), None) => return Err(param("--study needs --ground-truth")),
        _ => None,
    };
    emit(
        &json!({"steps": a.steps, "c": a.c, "events": stream.len(), "metrics": metrics, "study": study}),
        a.report.as_deref(),
    )
}

fn cmd_diffuse(a: &DiffuseArgs) -> Result<()> {
    let cloud = NormalizedPointCloud::from_bytes(&read(&a.points)?)?;
    let weights = match (&a.weights, a.random_weights) {
        (Some(p), _) => load_weights(&read(p)?)?,
        (None, Some(seed)) => {
            let cfg = ModelConfig {
                channels: a.channels,
                hidden: a.hidden,
                depth: a.depth,
            };
            WeightBundle::random(cfg, seed)
        }
        (None, None) => return Err(param("pass --weights or --random-weights")),
    };
    let (rows, cols) = (a.target[0], a.target[1]);
    let hidden = weights.config().hidden;
    let fusion = match &a.fusion_features {
        Some(p) => FeatureMap::from_bytes(&read(p)?)?,
        None => FeatureMap::random(rows, cols, hidden, a.seed)?,
    };
    let cfg = BranchConfig {
        groups: a.group_count,
        neighbors: a.neighbors,
        rows,
        cols,
        alpha_max: a.alpha_max,
        seed: a.seed,
    };
    let out = run_point_branch(&cloud, &weights, &fusion, &cfg)?;
    fs::create_dir_all(&a.out_dir)?;
    write_atomic(&a.out_dir.join("mapped.fmap"), &out.mapped.to_bytes()?)?;
    write_atomic(&a.out_dir.join("diffused.fmap"), &out.diffused.to_bytes()?)?;
    write_atomic(&a.out_dir.join("fused.fmap"), &out.fused.to_bytes()?)?;
    let summary = json!({
        "bins": cloud.bins,
        "groups": cfg.groups,
        "neighbors": cfg.neighbors,
        "target": [rows, cols],
        "channels": hidden,
        "range": out.range,
        "radius": out.radius,
        "occupied_pixels": out.mapped.occupied_pixels(),
        "mass_mapped": out.mapped.mass(),
        "mass_diffused": out.diffused.mass(),
        "mass_fused": out.fused.mass(),
    });
    emit(&summary, Some(&a.out_dir.join("summary.json")))
}

fn cmd_crop(a: &CropArgs) -> Result<()> {
    let stream = load_stream(&a.events, &a.sensor)?;
    let (rows, cols) = match &a.frame {
        Some(f) => (f[0], f[1]),
        None => (stream.height() as usize, stream.width() as usize),
    };
    let sel = density_crop(&stream, rows, cols, a.side, a.threshold, a.cell, a.seed)?;
    if let (Some(src), Some(dst)) = (&a.apply, &a.out) {
        let img = load_image(src)?;
        if (img.height(), img.width()) != (rows, cols) {
            return Err(Error::Shape(format!(
                "image is {}x{}, frame is {rows}x{cols}",
                img.height(),
                img.width()
            )));
        }
        let w = sel.window;
        let patch = img.crop(w.x0, w.y0, w.side, w.side)?;
        write_atomic(dst, &encode_image(&patch, dst)?)?;
    }
    emit(
        &json!({
            "window": sel.window,
            "center": [sel.center.0, sel.center.1],
            "cell": [sel.cell.0, sel.cell.1],
            "cell_density": sel.cell_density,
            "centered": sel.centered,
        }),
        a.report.as_deref(),
    )
}

fn cmd_metrics(a: &MetricsArgs) -> Result<()> {
    let weights = LossWeights::parse(&a.weights)?;
    let pred = load_image(&a.pred)?;
    let gt = load_image(&a.gt)?;
    let opts = MetricOptions {
        peak: a.peak,
        scales: a.scales,
    };
    emit(&total_loss(&pred, &gt, &weights, &opts)?, a.report.as_deref())
}
