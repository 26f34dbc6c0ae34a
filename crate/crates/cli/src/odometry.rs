//! Frame-chained ego-motion estimation over a correspondence dataset.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use vor_core::egomotion::{
    bundle_adjust, chain_deltas, continuous_linear_solve, decompose_essential,
    eight_point_discrete, read_correspondence_csv, reprojection_error, scale_from_ground_plane,
    triangulate_up_to_scale, write_pose_file, BaMode, BaProblem, Correspondence, DepthFlag,
    EgomotionError, EightPointConfig, PlaneFitConfig,
};
use vor_core::geometry::exp_rotation;
use vor_core::robust::{
    masor_pose, minimal_pose_solver, pose_reprojection_residual, ransac, reliability_filter,
    MasorConfig, MasorCriterion, RansacConfig, ReliabilityConfig, TrackQuality,
};
use vor_core::{Flow2, Mat3, NormalizedPoint, Pose, Vec3};

use crate::config::{parse_kv, parse_num, FileConfig};
use crate::util::{csv_safe, median};

const AFTER_HELP: &str = "\
Reads corr_NNNN.csv files (columns id,x1,y1,x2,y2,depth, normalized camera
units) from --dataset in name order, estimates the frame-to-frame motion
for each, and chains the results.

Per frame pair: reliability filter -> outlier scheme -> eight-point
essential-matrix solve -> triangulation -> bundle adjustment -> scale
recovery. A frame whose estimation fails contributes an identity motion,
flagged in the diagnostics; the exit code is 2 when that happened at least
once, so silent drift is impossible. A frame without parallax reports its
rotation with an unscaled (zero) translation and is not a fallback.

Trajectory output: one line per frame, 12 reals, the row-major [R | T] of
the camera-to-world transform (KITTI convention; first line is identity).

Diagnostics CSV columns (frame,tracks,reliable,inliers,rounds,mean_residual,gamma,fallback,note):
  frame          frame-pair index
  tracks         correspondences read
  reliable       survivors of the reliability filter
  inliers        survivors of the outlier scheme
  rounds         RANSAC hypotheses drawn or MASOR trim rounds
  mean_residual  mean reprojection error of the refined motion, normalized units
  gamma          recovered translation scale (1 = unit gauge kept)
  fallback       1 when the frame fell back to the identity motion
  note           failure or degeneracy details; MASOR trim trace

Keys of the [odometry] config section (flags mirror them): outlier_scheme
(none | ransac | masor_sigma | masor_mu9x), ba_mode (none | motion |
structure | full), scale_source (none | depth | ground_plane),
camera_height, min_score, min_flow_px, max_depth, inlier_threshold,
ransac_iterations, masor_error_floor, min_features, seed, focal_px.
The dataset manifest's focal_px overrides the config; the flag overrides
both.";

/// Estimate a camera trajectory from a directory of correspondence files.
#[derive(Args)]
#[command(after_help = AFTER_HELP)]
pub struct OdometryArgs {
    /// Dataset directory holding corr_NNNN.csv files
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output trajectory file
    #[arg(long)]
    pub out: PathBuf,
    /// Diagnostics CSV (default: <out dir>/diagnostics.csv)
    #[arg(long)]
    pub diagnostics: Option<PathBuf>,
    /// Pipeline config file; its [odometry] section overrides the defaults
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Outlier scheme: none | ransac | masor_sigma | masor_mu9x
    #[arg(long)]
    pub outlier_scheme: Option<String>,
    /// Bundle adjustment: none | motion | structure | full
    #[arg(long)]
    pub ba_mode: Option<String>,
    /// Scale recovery: none | depth | ground_plane
    #[arg(long)]
    pub scale_source: Option<String>,
    /// Camera height over the road, meters (ground_plane scale source)
    #[arg(long)]
    pub camera_height: Option<f64>,
    /// Reliability gate: minimum corner score
    #[arg(long)]
    pub min_score: Option<f64>,
    /// Reliability gate: minimum flow magnitude, pixels
    #[arg(long)]
    pub min_flow_px: Option<f64>,
    /// Reliability gate: maximum measured depth
    #[arg(long)]
    pub max_depth: Option<f64>,
    /// Inlier gate on reprojection residuals, normalized units
    #[arg(long)]
    pub inlier_threshold: Option<f64>,
    /// RANSAC hypothesis cap
    #[arg(long)]
    pub ransac_iterations: Option<usize>,
    /// MASOR: residuals at or below this are never trimmed
    #[arg(long)]
    pub masor_error_floor: Option<f64>,
    /// Smallest feature set the estimators accept
    #[arg(long)]
    pub min_features: Option<usize>,
    /// RNG seed for the robust estimators
    #[arg(long)]
    pub seed: Option<u64>,
    /// Focal length in pixels, for pixel-unit gates (manifest overrides)
    #[arg(long)]
    pub focal_px: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutlierScheme {
    None,
    Ransac,
    MasorSigma,
    MasorMu9x,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BaChoice {
    None,
    Motion,
    Structure,
    Full,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleSource {
    None,
    Depth,
    GroundPlane,
}

/// Resolved odometry settings; defaults suit the simulated datasets.
#[derive(Debug, Clone)]
pub struct OdometryParams {
    pub outlier_scheme: OutlierScheme,
    pub ba_mode: BaChoice,
    pub scale_source: ScaleSource,
    pub camera_height: f64,
    pub min_score: f64,
    pub min_flow_px: f64,
    pub max_depth: f64,
    pub inlier_threshold: f64,
    pub ransac_iterations: usize,
    pub masor_error_floor: f64,
    pub min_features: usize,
    pub seed: u64,
    pub focal_px: f64,
}

impl Default for OdometryParams {
    fn default() -> Self {
        OdometryParams {
            outlier_scheme: OutlierScheme::Ransac,
            ba_mode: BaChoice::Motion,
            scale_source: ScaleSource::Depth,
            camera_height: 1.5,
            min_score: 0.0,
            min_flow_px: 0.0,
            max_depth: f64::INFINITY,
            inlier_threshold: 2e-3,
            ransac_iterations: 500,
            masor_error_floor: 2e-3,
            min_features: 8,
            seed: 0,
            focal_px: 500.0,
        }
    }
}

fn parse_scheme(value: &str) -> Result<OutlierScheme> {
    match value {
        "none" => Ok(OutlierScheme::None),
        "ransac" => Ok(OutlierScheme::Ransac),
        "masor_sigma" => Ok(OutlierScheme::MasorSigma),
        "masor_mu9x" => Ok(OutlierScheme::MasorMu9x),
        other => bail!("unknown outlier_scheme {other:?}"),
    }
}

fn parse_ba(value: &str) -> Result<BaChoice> {
    match value {
        "none" => Ok(BaChoice::None),
        "motion" => Ok(BaChoice::Motion),
        "structure" => Ok(BaChoice::Structure),
        "full" => Ok(BaChoice::Full),
        other => bail!("unknown ba_mode {other:?}"),
    }
}

fn parse_scale(value: &str) -> Result<ScaleSource> {
    match value {
        "none" => Ok(ScaleSource::None),
        "depth" => Ok(ScaleSource::Depth),
        "ground_plane" => Ok(ScaleSource::GroundPlane),
        other => bail!("unknown scale_source {other:?}"),
    }
}

impl OdometryParams {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "outlier_scheme" => self.outlier_scheme = parse_scheme(value)?,
            "ba_mode" => self.ba_mode = parse_ba(value)?,
            "scale_source" => self.scale_source = parse_scale(value)?,
            "camera_height" => self.camera_height = parse_num(key, value)?,
            "min_score" => self.min_score = parse_num(key, value)?,
            "min_flow_px" => self.min_flow_px = parse_num(key, value)?,
            "max_depth" => self.max_depth = parse_num(key, value)?,
            "inlier_threshold" => self.inlier_threshold = parse_num(key, value)?,
            "ransac_iterations" => self.ransac_iterations = parse_num(key, value)?,
            "masor_error_floor" => self.masor_error_floor = parse_num(key, value)?,
            "min_features" => self.min_features = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "focal_px" => self.focal_px = parse_num(key, value)?,
            other => bail!("unknown [odometry] key {other:?}"),
        }
        Ok(())
    }

    pub fn resolve(args: &OdometryArgs, manifest_focal: Option<f64>) -> Result<Self> {
        let mut p = OdometryParams::default();
        let file = FileConfig::load(args.config.as_deref())?;
        parse_kv(file.section("odometry"), |k, v| p.set(k, v))?;
        if let Some(f) = manifest_focal {
            p.focal_px = f;
        }
        if let Some(v) = &args.outlier_scheme {
            p.outlier_scheme = parse_scheme(v)?;
        }
        if let Some(v) = &args.ba_mode {
            p.ba_mode = parse_ba(v)?;
        }
        if let Some(v) = &args.scale_source {
            p.scale_source = parse_scale(v)?;
        }
        if let Some(v) = args.camera_height {
            p.camera_height = v;
        }
        if let Some(v) = args.min_score {
            p.min_score = v;
        }
        if let Some(v) = args.min_flow_px {
            p.min_flow_px = v;
        }
        if let Some(v) = args.max_depth {
            p.max_depth = v;
        }
        if let Some(v) = args.inlier_threshold {
            p.inlier_threshold = v;
        }
        if let Some(v) = args.ransac_iterations {
            p.ransac_iterations = v;
        }
        if let Some(v) = args.masor_error_floor {
            p.masor_error_floor = v;
        }
        if let Some(v) = args.min_features {
            p.min_features = v;
        }
        if let Some(v) = args.seed {
            p.seed = v;
        }
        if let Some(v) = args.focal_px {
            p.focal_px = v;
        }
        Ok(p)
    }
}

/// One diagnostics row; `note` collects degeneracies and trim traces.
struct FrameDiag {
    frame: usize,
    tracks: usize,
    reliable: usize,
    inliers: usize,
    rounds: usize,
    mean_residual: f64,
    gamma: f64,
    fallback: bool,
    notes: Vec<String>,
}

impl FrameDiag {
    fn new(frame: usize, tracks: usize) -> Self {
        FrameDiag {
            frame,
            tracks,
            reliable: 0,
            inliers: 0,
            rounds: 0,
            mean_residual: 0.0,
            gamma: 1.0,
            fallback: false,
            notes: Vec::new(),
        }
    }

    fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{:.6e},{:.6e},{},{}",
            self.frame,
            self.tracks,
            self.reliable,
            self.inliers,
            self.rounds,
            self.mean_residual,
            self.gamma,
            self.fallback as u8,
            csv_safe(&self.notes.join("; ")),
        )
    }
}

const DIAG_HEADER: &str =
    "frame,tracks,reliable,inliers,rounds,mean_residual,gamma,fallback,note";

/// Sorted corr_NNNN.csv paths of a dataset directory.
fn correspondence_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("reading dataset {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .map(|n| n.starts_with("corr_") && n.ends_with(".csv"))
                .unwrap_or(false)
        })
        .collect();
    files.sort();
    if files.is_empty() {
        bail!("no corr_*.csv files in {}", dir.display());
    }
    Ok(files)
}

/// `focal_px` from the dataset manifest, when present.
fn manifest_focal(dir: &Path) -> Option<f64> {
    let text = fs::read_to_string(dir.join("manifest.txt")).ok()?;
    for line in text.lines() {
        let line = line.split('#').next().unwrap_or("").trim();
        if let Some((key, value)) = line.split_once('=') {
            if key.trim() == "focal_px" {
                return value.trim().parse().ok();
            }
        }
    }
    None
}

/// Estimates one frame-to-frame motion; errors bubble to the identity
/// fallback in the caller.
fn estimate_frame(
    corrs: &[Correspondence],
    p: &OdometryParams,
    k: u64,
    diag: &mut FrameDiag,
) -> Result<Pose> {
    // Reliability gates. Correspondence files carry no corner scores, so
    // the score gate sees a neutral 1.0 unless real scores ever flow here.
    let quality: Vec<TrackQuality> = corrs
        .iter()
        .map(|c| TrackQuality {
            id: c.id,
            score: 1.0,
            flow_px: (c.x_next.x - c.x_t.x).hypot(c.x_next.y - c.x_t.y) * p.focal_px,
            depth: c.depth_t,
        })
        .collect();
    let rcfg = ReliabilityConfig {
        min_score: p.min_score,
        min_flow_px: p.min_flow_px,
        max_depth: p.max_depth,
    };
    let keep = reliability_filter(&quality, &rcfg);
    let reliable: Vec<Correspondence> = corrs
        .iter()
        .zip(&keep)
        .filter(|(_, &k)| k)
        .map(|(c, _)| c.clone())
        .collect();
    diag.reliable = reliable.len();
    if reliable.len() < p.min_features {
        bail!("only {} reliable features, need {}", reliable.len(), p.min_features);
    }

    // Outlier rejection.
    let inliers: Vec<Correspondence> = match p.outlier_scheme {
        OutlierScheme::None => reliable,
        OutlierScheme::Ransac => {
            let cfg = RansacConfig {
                min_sample_size: 8,
                max_iterations: p.ransac_iterations,
                inlier_threshold: p.inlier_threshold,
                confidence: 0.999,
                seed: p.seed.wrapping_add(k),
            };
            let out = ransac(&reliable, minimal_pose_solver, pose_reprojection_residual, &cfg)?;
            diag.rounds = out.iterations;
            reliable
                .iter()
                .zip(&out.mask)
                .filter(|(_, &m)| m)
                .map(|(c, _)| c.clone())
                .collect()
        }
        OutlierScheme::MasorSigma | OutlierScheme::MasorMu9x => {
            let criterion = if p.outlier_scheme == OutlierScheme::MasorSigma {
                MasorCriterion::Sigma1p5
            } else {
                MasorCriterion::Mu9x
            };
            let cfg = MasorConfig {
                min_features: p.min_features,
                error_floor: p.masor_error_floor,
                ..MasorConfig::new(criterion)
            };
            let out = masor_pose(&reliable, &cfg)?;
            diag.rounds = out.trace.len();
            let mut trace = String::from("masor trace (mu|sigma|size):");
            for step in &out.trace {
                write!(trace, " {:.3e}|{:.3e}|{}", step.mu, step.sigma, step.size).unwrap();
            }
            diag.notes.push(trace);
            reliable
                .iter()
                .zip(&out.mask)
                .filter(|(_, &m)| m)
                .map(|(c, _)| c.clone())
                .collect()
        }
    };
    diag.inliers = inliers.len();

    // Epipolar solve; a parallax-free frame keeps its rotation.
    let ep = EightPointConfig::default();
    let delta = match eight_point_discrete(&inliers, &ep) {
        Ok(e) => decompose_essential(&e, &inliers)?,
        Err(EgomotionError::InsufficientParallax { median }) => {
            return rotation_only_estimate(&inliers, &ep, median, diag);
        }
        Err(e) => return Err(e.into()),
    };

    // Unit-gauge structure; only positive-depth features can be refined.
    let tri = triangulate_up_to_scale(&delta, &inliers)?;
    let mut ba_corrs = Vec::new();
    let mut ba_depths = Vec::new();
    for ((c, &z), flag) in inliers.iter().zip(&tri.depths).zip(&tri.flags) {
        if *flag == DepthFlag::Valid {
            ba_corrs.push(c.clone());
            ba_depths.push(z);
        }
    }
    let dropped = inliers.len() - ba_corrs.len();
    if dropped > 0 {
        diag.notes.push(format!("{dropped} features triangulated behind a camera"));
    }
    if ba_corrs.len() < p.min_features {
        bail!("only {} triangulable features, need {}", ba_corrs.len(), p.min_features);
    }

    // Refinement.
    let (delta, depths) = match p.ba_mode {
        BaChoice::None => (delta, ba_depths),
        choice => {
            let mode = match choice {
                BaChoice::Motion => BaMode::MotionOnly,
                BaChoice::Structure => BaMode::StructureOnly,
                BaChoice::Full => BaMode::Full,
                BaChoice::None => unreachable!(),
            };
            let problem = BaProblem::new(ba_corrs.clone(), delta, ba_depths, mode)?;
            let result = bundle_adjust(&problem)?;
            (result.pose, result.depths)
        }
    };
    let mut residual_sum = 0.0;
    for (c, &z) in ba_corrs.iter().zip(&depths) {
        residual_sum += reprojection_error(&delta, c, z)?;
    }
    diag.mean_residual = residual_sum / ba_corrs.len() as f64;

    // Scale recovery: gamma multiplies the unit-gauge translation and
    // depths into measured units.
    let gamma = match p.scale_source {
        ScaleSource::None => 1.0,
        ScaleSource::Depth => {
            let mut ratios: Vec<f64> = ba_corrs
                .iter()
                .zip(&depths)
                .filter_map(|(c, &z)| c.depth_t.map(|d| d / z))
                .collect();
            if ratios.is_empty() {
                diag.notes.push("no measured depths; unit scale kept".into());
                1.0
            } else {
                median(&mut ratios)
            }
        }
        ScaleSource::GroundPlane => {
            let points: Vec<Vec3> =
                ba_corrs.iter().zip(&depths).map(|(c, &z)| c.x_t.backproject(z)).collect();
            let cfg = PlaneFitConfig { seed: p.seed.wrapping_add(k), ..PlaneFitConfig::default() };
            scale_from_ground_plane(&points, p.camera_height, &cfg)?.gamma
        }
    };
    diag.gamma = gamma;
    Ok(delta.scaled_translation(gamma))
}

/// Rotation-only estimate for a frame whose flow has no parallax: the
/// translation direction is unobservable, but the rotation that explains
/// the flow field is still well determined.
fn rotation_only_estimate(
    inliers: &[Correspondence],
    ep: &EightPointConfig,
    median: f64,
    diag: &mut FrameDiag,
) -> Result<Pose> {
    let flows: Vec<(NormalizedPoint, Flow2)> = inliers
        .iter()
        .map(|c| (c.x_t, Flow2::new(c.x_next.x - c.x_t.x, c.x_next.y - c.x_t.y)))
        .collect();
    let motion = continuous_linear_solve(&flows, ep)?;
    let delta = Pose::new(exp_rotation(&motion.omega), Vec3::zeros())?;
    diag.notes.push(format!(
        "InsufficientParallax (median rotation-compensated flow {median:.3e}); translation unobservable; rotation-only estimate"
    ));
    diag.gamma = 0.0;
    // Depth cancels under pure rotation, so score by the depth-free
    // rotational reprojection.
    let mut sum = 0.0;
    for c in inliers {
        let moved = delta.rotation() * c.x_t.homogeneous();
        let (rx, ry) = (moved.x / moved.z, moved.y / moved.z);
        sum += (c.x_next.x - rx).hypot(c.x_next.y - ry);
    }
    diag.mean_residual = sum / inliers.len() as f64;
    Ok(delta)
}

pub fn run(args: OdometryArgs) -> Result<i32> {
    let files = correspondence_files(&args.dataset)?;
    let params = OdometryParams::resolve(&args, manifest_focal(&args.dataset))?;

    let mut deltas = Vec::with_capacity(files.len());
    let mut diags = Vec::with_capacity(files.len());
    for (k, path) in files.iter().enumerate() {
        let corrs = read_correspondence_csv(path)
            .with_context(|| format!("reading {}", path.display()));
        let (corrs, read_error) = match corrs {
            Ok(c) => (c, None),
            Err(e) => (Vec::new(), Some(e)),
        };
        let mut diag = FrameDiag::new(k, corrs.len());
        let estimate = match read_error {
            Some(e) => Err(e),
            None => estimate_frame(&corrs, &params, k as u64, &mut diag),
        };
        let delta = match estimate {
            Ok(pose) => pose,
            Err(err) => {
                diag.fallback = true;
                diag.notes.push(format!("fallback to identity: {err:#}"));
                Pose::new(Mat3::identity(), Vec3::zeros()).expect("identity is a valid pose")
            }
        };
        deltas.push(delta);
        diags.push(diag);
    }

    let poses = chain_deltas(&deltas);
    write_pose_file(&args.out, &poses)?;

    let diag_path = args.diagnostics.clone().unwrap_or_else(|| {
        args.out.parent().unwrap_or(Path::new(".")).join("diagnostics.csv")
    });
    let mut table = String::from(DIAG_HEADER);
    table.push('\n');
    for d in &diags {
        table.push_str(&d.csv_row());
        table.push('\n');
    }
    fs::write(&diag_path, table)
        .with_context(|| format!("writing {}", diag_path.display()))?;

    let fallbacks = diags.iter().filter(|d| d.fallback).count();
    println!(
        "estimated {} frame motions ({} identity fallbacks); wrote {} and {}",
        deltas.len(),
        fallbacks,
        args.out.display(),
        diag_path.display(),
    );
    Ok(if fallbacks > 0 { 2 } else { 0 })
}
