//! Multi-motion segmentation and moving-object verdicts for one frame pair.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use vor_core::egomotion::{read_correspondence_csv, triangulate_up_to_scale, DepthFlag};
use vor_core::robust::{
    combined_verdict, positive_depth_check, positive_height_check, pose_reprojection_residual,
    segment_motions_sequential, write_segment_csv, write_verdict_csv, RansacConfig,
    SegmentationConfig, VerdictRecord, DEFAULT_HEIGHT_MARGIN,
};
use vor_core::{Plane, Vec3};

use crate::config::{parse_kv, parse_num, FileConfig};
use crate::util::median;

const AFTER_HELP: &str = "\
Reads one correspondence CSV (columns id,x1,y1,x2,y2,depth, normalized
camera units) and peels off rigid motions by sequential consensus: the
dominant motion first, then the next among the unexplained features, until
support falls below --min-support of what remains.

Segments CSV columns (feature_id,segment_id):
  feature_id   id from the input file
  segment_id   0 = dominant motion (the camera), 1, 2, ... further rigid
               bodies, -1 = residue no motion claimed

Verdicts CSV columns (feature_id,verdict,residual), written with
--verdicts: each feature is tested against the dominant motion with the
positive-depth check (a static point never triangulates behind a camera)
and the positive-height check (a static point never triangulates below
the road); verdict is static | moving | undecided | not_applicable, the
union of the two tests (either one can convict). residual is the
epipolar reprojection distance to the dominant motion. The height check
needs metric translation: measured depths set the scale when present,
else it stays at the unit gauge and --camera-height must be given in
those units.

Keys of the [segment] config section (flags mirror them):
inlier_threshold, min_support, ransac_iterations, seed, camera_height,
height_margin.";

/// Split one frame pair's features into independently moving bodies.
#[derive(Args)]
#[command(after_help = AFTER_HELP)]
pub struct SegmentArgs {
    /// Input correspondence CSV
    #[arg(long)]
    pub input: PathBuf,
    /// Output segments CSV
    #[arg(long)]
    pub out: PathBuf,
    /// Also write per-feature moving-object verdicts to this CSV
    #[arg(long)]
    pub verdicts: Option<PathBuf>,
    /// Pipeline config file; its [segment] section overrides the defaults
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Inlier gate on reprojection residuals, normalized units
    #[arg(long)]
    pub inlier_threshold: Option<f64>,
    /// Smallest consensus fraction of the remaining features
    #[arg(long)]
    pub min_support: Option<f64>,
    /// RANSAC hypothesis cap per extraction round
    #[arg(long)]
    pub ransac_iterations: Option<usize>,
    /// RNG seed
    #[arg(long)]
    pub seed: Option<u64>,
    /// Camera height over the road for the height check
    #[arg(long)]
    pub camera_height: Option<f64>,
    /// Tolerated depth below the road plane before a point counts as moving
    #[arg(long)]
    pub height_margin: Option<f64>,
}

struct SegmentParams {
    inlier_threshold: f64,
    min_support: f64,
    ransac_iterations: usize,
    seed: u64,
    camera_height: f64,
    height_margin: f64,
}

impl Default for SegmentParams {
    fn default() -> Self {
        SegmentParams {
            inlier_threshold: 2e-3,
            min_support: 0.3,
            ransac_iterations: 500,
            seed: 0,
            camera_height: 1.5,
            height_margin: DEFAULT_HEIGHT_MARGIN,
        }
    }
}

impl SegmentParams {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "inlier_threshold" => self.inlier_threshold = parse_num(key, value)?,
            "min_support" => self.min_support = parse_num(key, value)?,
            "ransac_iterations" => self.ransac_iterations = parse_num(key, value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "camera_height" => self.camera_height = parse_num(key, value)?,
            "height_margin" => self.height_margin = parse_num(key, value)?,
            other => bail!("unknown [segment] key {other:?}"),
        }
        Ok(())
    }

    fn resolve(args: &SegmentArgs) -> Result<Self> {
        let mut p = SegmentParams::default();
        let file = FileConfig::load(args.config.as_deref())?;
        parse_kv(file.section("segment"), |k, v| p.set(k, v))?;
        if let Some(v) = args.inlier_threshold {
            p.inlier_threshold = v;
        }
        if let Some(v) = args.min_support {
            p.min_support = v;
        }
        if let Some(v) = args.ransac_iterations {
            p.ransac_iterations = v;
        }
        if let Some(v) = args.seed {
            p.seed = v;
        }
        if let Some(v) = args.camera_height {
            p.camera_height = v;
        }
        if let Some(v) = args.height_margin {
            p.height_margin = v;
        }
        Ok(p)
    }
}

pub fn run(args: SegmentArgs) -> Result<()> {
    let p = SegmentParams::resolve(&args)?;
    let corrs = read_correspondence_csv(&args.input)
        .with_context(|| format!("reading {}", args.input.display()))?;
    let cfg = SegmentationConfig {
        ransac: RansacConfig {
            max_iterations: p.ransac_iterations,
            inlier_threshold: p.inlier_threshold,
            seed: p.seed,
            ..RansacConfig::default()
        },
        min_support: p.min_support,
    };
    let seg = segment_motions_sequential(&corrs, &cfg)?;
    write_segment_csv(&args.out, &corrs, &seg)?;

    let sizes: Vec<String> = seg
        .segments
        .iter()
        .map(|s| s.mask.iter().filter(|&&m| m).count().to_string())
        .collect();
    println!(
        "{} features -> {} motions (sizes: {}), {} residue; wrote {}",
        corrs.len(),
        seg.segments.len(),
        if sizes.is_empty() { "-".to_string() } else { sizes.join(", ") },
        seg.residue.len(),
        args.out.display(),
    );

    let Some(verdict_path) = &args.verdicts else { return Ok(()) };
    let Some(dominant) = seg.segments.first() else {
        bail!("no motion found; cannot derive verdicts");
    };

    // The height check compares triangulated geometry against a metric
    // road plane, so lift the dominant motion's unit-gauge translation to
    // measured units where depths allow it.
    let dom_corrs: Vec<_> = corrs
        .iter()
        .zip(&dominant.mask)
        .filter(|(_, &m)| m)
        .map(|(c, _)| c.clone())
        .collect();
    let tri = triangulate_up_to_scale(&dominant.pose, &dom_corrs)?;
    let mut ratios: Vec<f64> = dom_corrs
        .iter()
        .zip(&tri.depths)
        .zip(&tri.flags)
        .filter(|(_, &flag)| flag == DepthFlag::Valid)
        .filter_map(|((c, &z), _)| c.depth_t.map(|d| d / z))
        .collect();
    let gamma = if ratios.is_empty() {
        println!("no measured depths; verdict height check uses the unit translation gauge");
        1.0
    } else {
        median(&mut ratios)
    };
    let metric = dominant.pose.scaled_translation(gamma);
    let road = Plane::new(Vec3::new(0.0, 1.0, 0.0), p.camera_height)?;

    let rows: Vec<VerdictRecord> = corrs
        .iter()
        .map(|c| {
            let depth = positive_depth_check(&metric, c);
            let height = positive_height_check(&metric, c, &road, p.height_margin);
            VerdictRecord {
                id: c.id,
                verdict: combined_verdict(depth, height),
                residual: pose_reprojection_residual(&metric, c),
            }
        })
        .collect();
    write_verdict_csv(verdict_path, &rows)?;
    let moving = rows
        .iter()
        .filter(|r| matches!(r.verdict, vor_core::robust::Verdict::Moving))
        .count();
    println!("verdicts: {moving} of {} features moving; wrote {}", rows.len(), verdict_path.display());
    Ok(())
}
