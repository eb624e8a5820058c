use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use lavagrasp_core::config::{self, ConfigError, PipelineConfig};
use lavagrasp_core::featurefit::{self, FitError};
use lavagrasp_core::gripper::{FeatureShape, GripperError};
use lavagrasp_core::montecarlo;
use lavagrasp_core::pipeline::{self, DirectoryProvider, NearCloudProvider, PipelineError};
use lavagrasp_core::pointcloud::{ply, PointCloud, PointCloudError};
use lavagrasp_core::report::{self, ReportError};
use lavagrasp_core::scenegen::{self, SceneError};
use lavagrasp_core::{Point3, Vector3};

const EXIT_NO_CANDIDATES: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_INPUT: u8 = 4;
const EXIT_INTERNAL: u8 = 5;

#[derive(Parser)]
#[command(name = "lavagrasp", version, about = "Grasp-site selection for a boom-mounted microspine gripper")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the full far-scan / near-scan / scoring pipeline and write a JSON report.
    Run {
        /// Far (stowed boom) scan.
        #[arg(long)]
        far: PathBuf,
        /// Directory holding near_<rank>.ply rescans; without it the far scan is cropped.
        #[arg(long)]
        near_dir: Option<PathBuf>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Leave the wall-clock timestamp out of the report.
        #[arg(long)]
        fixed_clock: bool,
    },
    /// Render a synthetic scan of a scene file.
    Scan {
        #[arg(long)]
        scene: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write ASCII instead of binary PLY.
        #[arg(long)]
        ascii: bool,
    },
    /// Extract spheres from a cloud and print them as JSON.
    Fit {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Simulate pull tests on one feature and write the samples as CSV.
    Pulltest {
        #[arg(long)]
        config: PathBuf,
        /// `sphere:r=<m>` or `cylinder:r=<m>` (axis along x), centered at the origin.
        #[arg(long)]
        feature: String,
        #[arg(long)]
        n: usize,
        /// Pull direction `x,y,z`, normalized before use.
        #[arg(long, default_value = "0,0,1")]
        pull: String,
        /// CSV destination; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

type Outcome = Result<u8, Failure>;

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::new(EXIT_CONFIG, e.to_string())
    }
}

impl From<PointCloudError> for Failure {
    fn from(e: PointCloudError) -> Self {
        let code = match e {
            PointCloudError::PlyHeader { .. } | PointCloudError::PlyData { .. } | PointCloudError::NonFinite { .. } => EXIT_INPUT,
            PointCloudError::Io(_) => EXIT_INPUT,
            _ => EXIT_INTERNAL,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<FitError> for Failure {
    fn from(e: FitError) -> Self {
        match e {
            FitError::PointCloud(e) => e.into(),
            FitError::Domain(m) => Failure::new(EXIT_CONFIG, m),
            FitError::NoFeatureFound(m) => Failure::new(EXIT_INTERNAL, m),
        }
    }
}

impl From<GripperError> for Failure {
    fn from(e: GripperError) -> Self {
        let code = match e {
            GripperError::Domain(_) => EXIT_CONFIG,
            GripperError::NotGraspable(_) => EXIT_NO_CANDIDATES,
        };
        Failure::new(code, e.to_string())
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(e) => e.into(),
            PipelineError::Input(e) => e.into(),
            PipelineError::Fit(e) => e.into(),
            PipelineError::Gripper(e) => e.into(),
            PipelineError::Internal(m) => Failure::new(EXIT_INTERNAL, m),
        }
    }
}

impl From<ReportError> for Failure {
    fn from(e: ReportError) -> Self {
        Failure::new(EXIT_INTERNAL, e.to_string())
    }
}

impl From<SceneError> for Failure {
    fn from(e: SceneError) -> Self {
        let code = match e {
            SceneError::Invalid(_) => EXIT_CONFIG,
            SceneError::Parse(_) | SceneError::Io(_) => EXIT_INPUT,
            SceneError::EmptyScan => EXIT_INTERNAL,
        };
        Failure::new(code, e.to_string())
    }
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<PipelineConfig, Failure> {
    let mut cfg = match path {
        Some(p) => config::load_config(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run(
    far: &Path,
    near_dir: Option<&Path>,
    config: &Path,
    out: &Path,
    seed: Option<u64>,
    fixed_clock: bool,
) -> Outcome {
    let cfg = load_config(Some(config), seed)?;
    let far_cloud = ply::load_ply(far)?;
    let provider: Box<dyn NearCloudProvider> = match near_dir {
        Some(dir) => Box::new(DirectoryProvider {
            dir: dir.to_path_buf(),
            default_origin: cfg.boom.base_position,
        }),
        None => Box::new(pipeline::CropOnly),
    };
    let stamp = if fixed_clock {
        None
    } else {
        SystemTime::now().duration_since(UNIX_EPOCH).ok().map(|d| d.as_secs())
    };
    let run = pipeline::run_pipeline(&far_cloud, provider.as_ref(), &cfg, stamp)?;
    report::write_report(&run, out)?;
    eprint!("{}", report::render_summary(&run));
    Ok(if run.summary.committed > 0 { 0 } else { EXIT_NO_CANDIDATES })
}

fn scan(scene: &Path, out: &Path, ascii: bool) -> Outcome {
    let spec = scenegen::load_scene(scene)?;
    let comments = [pipeline::sensor_origin_comment(&spec.sensor_origin)];
    let cloud = match scenegen::generate_scan(&spec) {
        Ok(scan) => scan.cloud,
        Err(SceneError::EmptyScan) => {
            eprintln!("warning: no returns inside the sensor range");
            PointCloud::empty("world")
        }
        Err(e) => return Err(e.into()),
    };
    ply::save_ply_with_comments(&cloud, out, !ascii, &comments)?;
    eprintln!("{} points written to {}", cloud.len(), out.display());
    Ok(0)
}

fn fit(input: &Path, config: Option<&Path>, seed: Option<u64>) -> Outcome {
    let cfg = load_config(config, seed)?;
    let cloud = ply::load_ply(input)?;
    let msac = featurefit::MsacConfig {
        seed: cfg.seed,
        ..cfg.msac.clone()
    };
    let fits = featurefit::find_spherical_regions(&cloud, &msac, cfg.max_features)?;
    let text = serde_json::to_string_pretty(&fits).map_err(|e| Failure::new(EXIT_INTERNAL, e.to_string()))?;
    println!("{text}");
    Ok(if fits.is_empty() { EXIT_NO_CANDIDATES } else { 0 })
}

fn parse_feature(spec: &str) -> Result<FeatureShape, Failure> {
    let bad = || Failure::new(EXIT_INPUT, format!("feature must be sphere:r=<m> or cylinder:r=<m>, got {spec:?}"));
    let (kind, params) = spec.split_once(':').ok_or_else(bad)?;
    let radius: f64 = params
        .strip_prefix("r=")
        .and_then(|r| r.parse().ok())
        .ok_or_else(bad)?;
    match kind {
        "sphere" => Ok(FeatureShape::Sphere {
            center: Point3::origin(),
            radius,
        }),
        "cylinder" => Ok(FeatureShape::Cylinder {
            axis_point: Point3::origin(),
            axis_dir: Vector3::x(),
            radius,
        }),
        _ => Err(bad()),
    }
}

fn parse_direction(text: &str) -> Result<Vector3<f64>, Failure> {
    let bad = || Failure::new(EXIT_INPUT, format!("pull must be x,y,z, got {text:?}"));
    let v: Vec<f64> = text
        .split(',')
        .map(|c| c.trim().parse())
        .collect::<Result<_, _>>()
        .map_err(|_| bad())?;
    if v.len() != 3 {
        return Err(bad());
    }
    let d = Vector3::new(v[0], v[1], v[2]);
    if !(d.norm() > 0.0) || !d.iter().all(|c| c.is_finite()) {
        return Err(bad());
    }
    Ok(d.normalize())
}

fn pulltest(config: &Path, feature: &str, n: usize, pull: &str, out: Option<&Path>, seed: Option<u64>) -> Outcome {
    let cfg = load_config(Some(config), seed)?;
    let shape = parse_feature(feature)?;
    let pull = parse_direction(pull)?;
    if n == 0 {
        return Err(Failure::new(EXIT_CONFIG, "--n must be at least 1"));
    }
    let samples = montecarlo::simulate(&cfg.gripper, &shape, &pull, 0..n as u64, cfg.seed)?;
    match out {
        Some(path) => {
            let file = std::fs::File::create(path).map_err(|e| Failure::new(EXIT_INTERNAL, e.to_string()))?;
            report::write_pulltest_csv(&samples, std::io::BufWriter::new(file))?;
        }
        None => report::write_pulltest_csv(&samples, std::io::stdout().lock())?,
    }
    let dist = montecarlo::summarize(&samples, cfg.seed, montecarlo::scenario_digest(&cfg.gripper, &shape, &pull));
    eprintln!(
        "n = {}: mean {:.2} N, sd {:.2} N, p05 {:.2} N, failure probability {:.3}",
        dist.n_samples,
        dist.mean,
        dist.std_dev(),
        dist.quantiles.q05,
        dist.failure_probability
    );
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run {
            far,
            near_dir,
            config,
            out,
            seed,
            fixed_clock,
        } => run(far, near_dir.as_deref(), config, out, *seed, *fixed_clock),
        Command::Scan { scene, out, ascii } => scan(scene, out, *ascii),
        Command::Fit { input, config, seed } => fit(input, config.as_deref(), *seed),
        Command::Pulltest {
            config,
            feature,
            n,
            pull,
            out,
            seed,
        } => pulltest(config, feature, *n, pull, out.as_deref(), *seed),
    };
    let _ = std::io::stdout().flush();
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
