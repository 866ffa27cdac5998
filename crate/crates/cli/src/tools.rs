//! `ctvio evaluate`, `ctvio fit` and `ctvio inspect`.

use std::path::{Path, PathBuf};

use ctvio::io::{self, Dataset};
use ctvio::metrics::{self, AlignMode};
use ctvio::trajectory::{fit_spline, FitOptions, KnotGrid};

use crate::error::{config_value, load_config, CliError, CliResult};
use crate::simulate::SIM_INFO_FILE;

#[derive(Debug, clap::Args)]
pub struct EvaluateArgs {
    /// Estimated poses (groundtruth grammar).
    #[arg(long)]
    pub est: PathBuf,
    #[arg(long)]
    pub gt: PathBuf,
    /// none | se3 | sim3
    #[arg(long, default_value = "se3")]
    pub align: String,
    /// Mean scene depth (m) for relative errors; read from sim_info.txt
    /// beside the ground truth when omitted.
    #[arg(long)]
    pub scene_depth: Option<f64>,
    /// Body-to-camera pose applied to every ground-truth pose (one record,
    /// time ignored).
    #[arg(long)]
    pub hand_eye: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

fn scene_depth(args: &EvaluateArgs) -> CliResult<f64> {
    if let Some(d) = args.scene_depth {
        return Ok(d);
    }
    let info = args
        .gt
        .parent()
        .unwrap_or(Path::new("."))
        .join(SIM_INFO_FILE);
    if info.exists() {
        if let Some(d) = config_value(load_config(&info)?.get_f64("mean_scene_depth"))? {
            return Ok(d);
        }
    }
    Err(CliError::config(
        "no --scene-depth given and no mean_scene_depth beside the ground truth",
    ))
}

pub fn evaluate(args: &EvaluateArgs) -> CliResult<()> {
    let mode: AlignMode = args.align.parse().map_err(CliError::Config)?;
    let depth = scene_depth(args)?;
    let est = io::read_poses(&args.est)?;
    let mut gt = io::read_poses(&args.gt)?;
    if let Some(p) = &args.hand_eye {
        let x = io::read_poses(p)?;
        let [x] = x.as_slice() else {
            return Err(CliError::config(format!("{}: expected one pose", p.display())));
        };
        gt = metrics::apply_hand_eye(&gt, &x.pose);
    }
    let (alignment, summary) = metrics::evaluate(&est, &gt, mode, depth)?;
    metrics::write_report(&args.out, &summary, &alignment, mode)?;
    let (p, pr, o) = (&summary.position, &summary.position_relative, &summary.orientation);
    println!(
        "{} samples ({} unmatched), alignment {mode}, scale {:.6}",
        summary.times.len(),
        summary.unmatched,
        alignment.scale
    );
    println!("            mean         std          max");
    println!("pos [m]     {:<12.6} {:<12.6} {:<12.6}", p.mean, p.std, p.max);
    println!("pos [%]     {:<12.4} {:<12.4} {:<12.4}", pr.mean, pr.std, pr.max);
    println!("orient [°]  {:<12.4} {:<12.4} {:<12.4}", o.mean, o.std, o.max);
    Ok(())
}

#[derive(Debug, clap::Args)]
pub struct FitArgs {
    /// Timestamped poses (groundtruth grammar).
    #[arg(long)]
    pub poses: PathBuf,
    /// Control-pose spacing (s).
    #[arg(long, default_value_t = 0.1)]
    pub dt: f64,
    /// Sampling rate of trajectory.txt (Hz).
    #[arg(long, default_value_t = 200.0)]
    pub output_rate: f64,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn fit(args: &FitArgs) -> CliResult<()> {
    if !(args.dt > 0.0 && args.output_rate > 0.0) {
        return Err(CliError::config("dt and output rate must be positive"));
    }
    let poses = io::read_poses(&args.poses)?;
    let (Some(first), Some(last)) = (poses.first(), poses.last()) else {
        return Err(CliError::config("no poses to fit"));
    };
    // knots on multiples of dt
    let grid = KnotGrid::covering((first.t / args.dt).floor() * args.dt, last.t, args.dt);
    let fit = fit_spline(&poses, &grid, &FitOptions::default())?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.out.display())))?;
    io::write_poses(
        &args.out.join("control_poses.txt"),
        &io::control_pose_records(&fit.trajectory),
    )?;
    io::write_poses(&args.out.join("trajectory.txt"), &fit.trajectory.sample(args.output_rate))?;
    println!(
        "fitted {} control poses to {} poses in {} iterations, rms {:.3e} ({} outside the domain)",
        fit.trajectory.control_poses().len(),
        poses.len(),
        fit.iterations,
        fit.rms,
        fit.skipped
    );
    Ok(())
}

#[derive(Debug, clap::Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub dataset: PathBuf,
}

fn span(first: Option<f64>, last: Option<f64>) -> String {
    match (first, last) {
        (Some(a), Some(b)) => format!("[{a:.6}, {b:.6}] s"),
        _ => "empty".into(),
    }
}

pub fn inspect(args: &InspectArgs) -> CliResult<()> {
    let d = Dataset::load(&args.dataset)?;
    let k = &d.calibration.intrinsics;
    println!("dataset      {}", args.dataset.display());
    println!(
        "camera       fx {} fy {} cx {} cy {}, {}x{}{}",
        k.fx,
        k.fy,
        k.cx,
        k.cy,
        k.width,
        k.height,
        if d.calibration.distortion.is_zero() { "" } else { ", distorted" }
    );
    let ev_span = span(d.events.first().map(|e| e.t), d.events.last().map(|e| e.t));
    println!("events       {} over {ev_span}", d.events.len());
    let positive = d.events.iter().filter(|e| e.polarity > 0).count();
    println!("polarity     {positive} positive, {} negative", d.events.len() - positive);
    println!(
        "imu          {} over {}",
        d.imu.len(),
        span(d.imu.first().map(|m| m.t), d.imu.last().map(|m| m.t))
    );
    match d.map.kind() {
        Some(kind) => println!("map          {} {kind:?} primitives", d.map.len()),
        None => println!("map          empty"),
    }
    match &d.associations {
        Some(a) => println!("associations {} ({} events unassociated)", a.len(), d.events.len().saturating_sub(a.len())),
        None => println!("associations none (derived from the initial trajectory)"),
    }
    match &d.groundtruth {
        Some(g) => println!(
            "groundtruth  {} poses over {}",
            g.len(),
            span(g.first().map(|p| p.t), g.last().map(|p| p.t))
        ),
        None => println!("groundtruth  none"),
    }
    let info = args.dataset.join(SIM_INFO_FILE);
    if info.exists() {
        for (key, value) in load_config(&info)?.iter() {
            println!("{key:<12} {value}");
        }
    }
    Ok(())
}
