//! Synthetic dataset generation: correspondences, ground truth, images.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use anyhow::{Context, Result};
use clap::Args;
use vor_core::egomotion::{write_correspondence_csv, write_pose_file};
use vor_core::flow::write_pgm;
use vor_core::sim::{
    render_correspondences, render_image, NoiseSpec, SimSpec, SinusoidTexture, TexturedPlane,
};
use vor_core::Pose;

use crate::config::FileConfig;

pub const IMAGE_WIDTH: usize = 640;
pub const IMAGE_HEIGHT: usize = 480;

/// Decorrelates the road texture from the scene point scatter.
const TEXTURE_SEED_MIX: u64 = 0xA076_1D64_78BD_642F;

const AFTER_HELP: &str = "\
Files written to --out:
  manifest.txt       resolved scene spec and camera model, `key = value`
  groundtruth.txt    camera-to-world pose per frame: 12 reals, row-major
                     [R | T] (KITTI convention)
  corr_NNNN.csv      correspondences between frames NNNN and NNNN+1;
                     columns id,x1,y1,x2,y2,depth in normalized camera
                     units, depth measured in frame NNNN (empty = unknown)
  frame_NNNN.pgm     16-bit road-texture render of frame NNNN (presets
                     with a ground plane only; disable with --no-images)

Scene keys ([sim] config section and the flags mirroring it):
  preset             forward | overtake | lead_vehicle | two_body | circular
  seed               scene RNG seed
  frames             trajectory length (forward and circular presets)
  n_points           static point count (forward and circular presets)
  theta              per-frame heading change in rad (circular preset)
  sigma_px           Gaussian pixel noise on second-frame observations
  outlier_fraction   fraction of features replaced by box outliers
  outlier_box_px     half-width of the outlier displacement box, px
  noise_seed         corruption RNG seed (defaults to seed)

Identical specs produce bit-identical datasets.";

/// Generate a synthetic driving dataset with exact ground truth.
#[derive(Args)]
#[command(after_help = AFTER_HELP)]
pub struct SimulateArgs {
    /// Output dataset directory (created if missing)
    #[arg(long)]
    pub out: PathBuf,
    /// Pipeline config file; its [sim] section overrides the defaults
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Scene preset (overrides config)
    #[arg(long)]
    pub preset: Option<String>,
    /// Scene RNG seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Trajectory length in frames
    #[arg(long)]
    pub frames: Option<usize>,
    /// Static point count
    #[arg(long)]
    pub n_points: Option<usize>,
    /// Per-frame heading change in radians (circular preset)
    #[arg(long)]
    pub theta: Option<f64>,
    /// Gaussian pixel noise sigma on second-frame observations
    #[arg(long)]
    pub sigma_px: Option<f64>,
    /// Fraction of features replaced by planted outliers
    #[arg(long)]
    pub outlier_fraction: Option<f64>,
    /// Half-width of the planted-outlier displacement box in pixels
    #[arg(long)]
    pub outlier_box_px: Option<f64>,
    /// Corruption RNG seed (defaults to the scene seed)
    #[arg(long)]
    pub noise_seed: Option<u64>,
    /// Skip PGM image rendering
    #[arg(long)]
    pub no_images: bool,
}

/// Layers the spec sources as key-value text: dataset default, then the
/// config file's [sim] section, then flags. Later lines override earlier
/// ones, so flags mirror config keys exactly and one parser sees it all.
fn resolve_spec(args: &SimulateArgs) -> Result<SimSpec> {
    // The library default of 12 frames suits desk tests; a dataset default
    // of 20 gives evaluation some trajectory to chew on.
    let mut text = String::from("frames = 20\n");
    let file = FileConfig::load(args.config.as_deref())?;
    text.push_str(file.section("sim"));
    let mut add = |key: &str, value: String| writeln!(text, "{key} = {value}").unwrap();
    if let Some(v) = &args.preset {
        add("preset", v.clone());
    }
    if let Some(v) = args.seed {
        add("seed", v.to_string());
    }
    if let Some(v) = args.frames {
        add("frames", v.to_string());
    }
    if let Some(v) = args.n_points {
        add("n_points", v.to_string());
    }
    if let Some(v) = args.theta {
        add("theta", v.to_string());
    }
    if let Some(v) = args.sigma_px {
        add("sigma_px", v.to_string());
    }
    if let Some(v) = args.outlier_fraction {
        add("outlier_fraction", v.to_string());
    }
    if let Some(v) = args.outlier_box_px {
        add("outlier_box_px", v.to_string());
    }
    if let Some(v) = args.noise_seed {
        add("noise_seed", v.to_string());
    }
    SimSpec::parse(&text).context("resolving scene spec")
}

fn manifest_text(spec: &SimSpec, frames: usize, images: bool) -> String {
    let mut out = String::from("# dataset manifest: resolved scene spec and camera model\n");
    let mut kv = |key: &str, value: String| writeln!(out, "{key} = {value}").unwrap();
    kv("preset", spec.preset.clone());
    kv("seed", spec.seed.to_string());
    kv("frames", frames.to_string());
    kv("n_points", spec.n_points.to_string());
    kv("theta", spec.theta.to_string());
    kv("sigma_px", spec.sigma_px.to_string());
    kv("outlier_fraction", spec.outlier_fraction.to_string());
    kv("outlier_box_px", spec.outlier_box_px.to_string());
    kv("noise_seed", spec.noise().seed.to_string());
    kv("focal_px", "500".to_string());
    kv("principal_x", "320".to_string());
    kv("principal_y", "240".to_string());
    kv("images", (images as u8).to_string());
    if images {
        kv("image_width", IMAGE_WIDTH.to_string());
        kv("image_height", IMAGE_HEIGHT.to_string());
    }
    out
}

pub fn run(args: SimulateArgs) -> Result<()> {
    let spec = resolve_spec(&args)?;
    let preset = spec.build()?;
    fs::create_dir_all(&args.out)
        .with_context(|| format!("creating {}", args.out.display()))?;
    let frames = preset.trajectory.len();

    // Pose files store camera-to-world transforms.
    let gt: Vec<Pose> = (0..frames).map(|k| preset.trajectory.pose(k).inverse()).collect();
    write_pose_file(&args.out.join("groundtruth.txt"), &gt)?;

    let base = spec.noise();
    let mut features = 0usize;
    let mut planted = 0usize;
    for k in 0..frames - 1 {
        // Fresh corruption stream per frame pair, still a pure function of
        // the spec.
        let noise = NoiseSpec { seed: base.seed.wrapping_add(k as u64), ..base };
        let tracks = render_correspondences(
            &preset.scene,
            &preset.trajectory,
            k,
            &preset.intrinsics,
            &noise,
        )?;
        features += tracks.features.len();
        planted += tracks.planted_outliers;
        let corrs = tracks.correspondences();
        write_correspondence_csv(&args.out.join(format!("corr_{k:04}.csv")), &corrs)?;
    }

    let images = !args.no_images && preset.scene.ground.is_some();
    if images {
        let ground = preset.scene.ground.clone().expect("checked above");
        let texture =
            SinusoidTexture::random(spec.seed ^ TEXTURE_SEED_MIX, 10, 0.5, 5.0);
        let plane = TexturedPlane::new(ground);
        for k in 0..frames {
            let img = render_image(
                &texture,
                &plane,
                preset.trajectory.pose(k),
                &preset.intrinsics,
                IMAGE_WIDTH,
                IMAGE_HEIGHT,
            );
            write_pgm(&args.out.join(format!("frame_{k:04}.pgm")), &img, true)?;
        }
    }

    fs::write(args.out.join("manifest.txt"), manifest_text(&spec, frames, images))?;

    println!(
        "wrote {} preset dataset to {}: {frames} frames, {} correspondence files, {features} features ({planted} planted outliers), images: {}",
        spec.preset,
        args.out.display(),
        frames - 1,
        if images { "yes" } else { "no" },
    );
    Ok(())
}
