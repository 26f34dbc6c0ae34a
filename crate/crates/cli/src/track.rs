//! Feature selection and pyramidal Lucas-Kanade tracking between two images.

use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::Args;
use vor_core::flow::{
    build_pyramid, forward_backward_check, read_pgm, select_features, write_tracks_csv, LkConfig,
    LkSolver, TrackRecord,
};

use crate::config::{parse_kv, parse_num, FileConfig};

const AFTER_HELP: &str = "\
Output CSV columns (feature_id,x1,y1,x2,y2,score,converged):
  feature_id   selection order, best corner first
  x1,y1        feature position in the first image, pixels
  x2,y2        tracked position in the second image, pixels
  score        structure-tensor corner score at (x1,y1)
  converged    1 when both the forward and backward tracks converged and
               the round trip returned within --fb-threshold pixels

Keys of the [track] config section: window, levels, epsilon,
max_iterations, coarse_iterations, final_iterations, fb_threshold, solver
(fa | ic), max_features, spacing, margin. Flags override config values.";

/// Track corner features from one PGM image to another.
#[derive(Args)]
#[command(after_help = AFTER_HELP)]
pub struct TrackArgs {
    /// First (earlier) image, 8- or 16-bit binary PGM
    #[arg(long)]
    pub first: PathBuf,
    /// Second (later) image
    #[arg(long)]
    pub second: PathBuf,
    /// Output tracks CSV
    #[arg(long)]
    pub out: PathBuf,
    /// Pipeline config file; its [track] section overrides the defaults
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Maximum number of features to select
    #[arg(long)]
    pub max_features: Option<usize>,
    /// Patch side length in pixels (odd)
    #[arg(long)]
    pub window: Option<usize>,
    /// Pyramid depth
    #[arg(long)]
    pub levels: Option<usize>,
    /// Minimum spacing between selected features, pixels
    #[arg(long)]
    pub spacing: Option<usize>,
    /// Image border left unsampled, pixels
    #[arg(long)]
    pub margin: Option<usize>,
    /// Lucas-Kanade solver: fa (forward additive) | ic (inverse compositional)
    #[arg(long)]
    pub solver: Option<String>,
    /// Forward-backward acceptance radius, pixels
    #[arg(long)]
    pub fb_threshold: Option<f64>,
    /// Iteration stop on parameter increment norm, pixels
    #[arg(long)]
    pub epsilon: Option<f64>,
    /// Iteration cap for single-level solves
    #[arg(long)]
    pub max_iterations: Option<usize>,
    /// Iterations at the finest pyramid level
    #[arg(long)]
    pub final_iterations: Option<usize>,
    /// Iterations per coarse pyramid level
    #[arg(long)]
    pub coarse_iterations: Option<usize>,
}

/// Tracker settings: the Lucas-Kanade config plus feature selection.
pub struct TrackParams {
    pub lk: LkConfig,
    pub max_features: usize,
    pub spacing: usize,
    pub margin: usize,
}

impl Default for TrackParams {
    fn default() -> Self {
        TrackParams { lk: LkConfig::default(), max_features: 500, spacing: 12, margin: 20 }
    }
}

fn parse_solver(value: &str) -> Result<LkSolver> {
    match value {
        "fa" => Ok(LkSolver::ForwardAdditive),
        "ic" => Ok(LkSolver::InverseCompositional),
        other => bail!("unknown solver {other:?}; expected fa or ic"),
    }
}

impl TrackParams {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "window" => self.lk.window = parse_num(key, value)?,
            "levels" => self.lk.levels = parse_num(key, value)?,
            "epsilon" => self.lk.epsilon = parse_num(key, value)?,
            "max_iterations" => self.lk.max_iterations = parse_num(key, value)?,
            "coarse_iterations" => self.lk.coarse_iterations = parse_num(key, value)?,
            "final_iterations" => self.lk.final_iterations = parse_num(key, value)?,
            "fb_threshold" => self.lk.fb_threshold = parse_num(key, value)?,
            "solver" => self.lk.solver = parse_solver(value)?,
            "max_features" => self.max_features = parse_num(key, value)?,
            "spacing" => self.spacing = parse_num(key, value)?,
            "margin" => self.margin = parse_num(key, value)?,
            other => bail!("unknown [track] key {other:?}"),
        }
        Ok(())
    }

    pub fn resolve(args: &TrackArgs) -> Result<Self> {
        let mut p = TrackParams::default();
        let file = FileConfig::load(args.config.as_deref())?;
        parse_kv(file.section("track"), |k, v| p.set(k, v))?;
        if let Some(v) = args.max_features {
            p.max_features = v;
        }
        if let Some(v) = args.window {
            p.lk.window = v;
        }
        if let Some(v) = args.levels {
            p.lk.levels = v;
        }
        if let Some(v) = args.spacing {
            p.spacing = v;
        }
        if let Some(v) = args.margin {
            p.margin = v;
        }
        if let Some(v) = &args.solver {
            p.lk.solver = parse_solver(v)?;
        }
        if let Some(v) = args.fb_threshold {
            p.lk.fb_threshold = v;
        }
        if let Some(v) = args.epsilon {
            p.lk.epsilon = v;
        }
        if let Some(v) = args.max_iterations {
            p.lk.max_iterations = v;
        }
        if let Some(v) = args.final_iterations {
            p.lk.final_iterations = v;
        }
        if let Some(v) = args.coarse_iterations {
            p.lk.coarse_iterations = v;
        }
        Ok(p)
    }
}

pub fn run(args: TrackArgs) -> Result<()> {
    let p = TrackParams::resolve(&args)?;
    let first = read_pgm(&args.first)
        .with_context(|| format!("reading {}", args.first.display()))?;
    let second = read_pgm(&args.second)
        .with_context(|| format!("reading {}", args.second.display()))?;
    let p1 = build_pyramid(&first, p.lk.levels)?;
    let p2 = build_pyramid(&second, p.lk.levels)?;

    let selected = select_features(&first, p.lk.window, p.margin, p.spacing, p.max_features);
    if selected.is_empty() {
        bail!("no trackable features found (image too small or texture too flat)");
    }

    let mut records = Vec::with_capacity(selected.len());
    let mut converged = 0usize;
    for (id, (center, score)) in selected.iter().enumerate() {
        let report = forward_backward_check(&p1, &p2, *center, &p.lk)?;
        converged += report.accepted as usize;
        records.push(TrackRecord {
            id: id as u64,
            x1: center.x,
            y1: center.y,
            x2: center.x + report.forward.displacement.u,
            y2: center.y + report.forward.displacement.v,
            score: *score,
            converged: report.accepted,
        });
    }
    write_tracks_csv(&args.out, &records)?;
    println!(
        "tracked {} features ({converged} converged) from {} to {}; wrote {}",
        records.len(),
        args.first.display(),
        args.second.display(),
        args.out.display(),
    );
    Ok(())
}
