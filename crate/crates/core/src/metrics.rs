//! Trajectory alignment and absolute error statistics.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Matrix3, SVD};
use thiserror::Error;

use crate::geometry::{rotation_angle_between, Mat3, Pose, Vec3};
use crate::io::{fmt12, IoError};
use crate::trajectory::TimedPose;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("alignment needs at least 3 non-collinear positions: {0}")]
    DegenerateGeometry(String),
    #[error("no estimate sample matches a ground-truth timestamp")]
    EmptyOverlap,
    #[error("mean scene depth must be positive, got {0}")]
    InvalidDepth(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AlignMode {
    None,
    Se3,
    Sim3,
}

impl std::str::FromStr for AlignMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(AlignMode::None),
            "se3" => Ok(AlignMode::Se3),
            "sim3" => Ok(AlignMode::Sim3),
            _ => Err(format!("unknown alignment '{s}' (none, se3, sim3)")),
        }
    }
}

impl std::fmt::Display for AlignMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            AlignMode::None => "none",
            AlignMode::Se3 => "se3",
            AlignMode::Sim3 => "sim3",
        })
    }
}

/// `x ↦ scale · rotation · x + translation`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    pub rotation: Mat3,
    pub translation: Vec3,
    pub scale: f64,
}

impl Similarity {
    pub fn identity() -> Self {
        Self {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
            scale: 1.0,
        }
    }

    pub fn apply_point(&self, x: &Vec3) -> Vec3 {
        self.rotation * x * self.scale + self.translation
    }

    /// Maps a camera-to-world pose into the target frame.
    pub fn apply_pose(&self, p: &Pose) -> Pose {
        Pose::new(self.rotation * p.rotation, self.apply_point(&p.translation))
    }
}

/// Least-squares similarity taking `src` onto `dst` (Umeyama). With
/// `with_scale == false` the scale is fixed to 1.
pub fn umeyama(src: &[Vec3], dst: &[Vec3], with_scale: bool) -> Result<Similarity, MetricsError> {
    assert_eq!(src.len(), dst.len());
    let n = src.len();
    if n < 3 {
        return Err(MetricsError::DegenerateGeometry(format!("{n} matched positions")));
    }
    let inv_n = 1.0 / n as f64;
    let mu_s = src.iter().sum::<Vec3>() * inv_n;
    let mu_d = dst.iter().sum::<Vec3>() * inv_n;
    let mut cov = Matrix3::zeros();
    let mut var_s = 0.0;
    for (s, d) in src.iter().zip(dst) {
        let a = s - mu_s;
        cov += (d - mu_d) * a.transpose();
        var_s += a.norm_squared();
    }
    cov *= inv_n;
    var_s *= inv_n;

    // collinear or coincident sources leave a free rotation about the line
    let scatter: Matrix3<f64> = src.iter().map(|s| (s - mu_s) * (s - mu_s).transpose()).sum();
    let spread = SVD::new(scatter, false, false).singular_values;
    if var_s <= 0.0 || spread[1] <= 1e-12 * spread[0] {
        return Err(MetricsError::DegenerateGeometry("positions are collinear or coincident".into()));
    }

    let svd = SVD::new(cov, true, true);
    let (u, v_t) = (svd.u.expect("u"), svd.v_t.expect("v_t"));
    let mut sign = Mat3::identity();
    if (u.determinant() * v_t.determinant()) < 0.0 {
        sign[(2, 2)] = -1.0;
    }
    let rotation = u * sign * v_t;
    let scale = if with_scale {
        let d = svd.singular_values;
        (d[0] + d[1] + sign[(2, 2)] * d[2]) / var_s
    } else {
        1.0
    };
    let translation = mu_d - rotation * mu_s * scale;
    Ok(Similarity {
        rotation,
        translation,
        scale,
    })
}

/// Pairs each estimate sample with the ground-truth sample nearest in time,
/// if within half the ground-truth period. Returns `(est, gt)` index pairs
/// and the number of unmatched estimate samples.
pub fn match_timestamps(est: &[TimedPose], gt: &[TimedPose]) -> (Vec<(usize, usize)>, usize) {
    if gt.is_empty() {
        return (Vec::new(), est.len());
    }
    let half_period = if gt.len() > 1 {
        let mut gaps: Vec<f64> = gt.windows(2).map(|w| w[1].t - w[0].t).collect();
        gaps.sort_by(f64::total_cmp);
        0.5 * gaps[gaps.len() / 2]
    } else {
        f64::INFINITY
    };
    let mut pairs = Vec::new();
    let mut unmatched = 0;
    for (i, e) in est.iter().enumerate() {
        let k = gt.partition_point(|g| g.t < e.t);
        let nearest = [k.checked_sub(1), (k < gt.len()).then_some(k)]
            .into_iter()
            .flatten()
            .min_by(|a, b| (gt[*a].t - e.t).abs().total_cmp(&(gt[*b].t - e.t).abs()));
        match nearest {
            Some(j) if (gt[j].t - e.t).abs() <= half_period * (1.0 + 1e-9) => pairs.push((i, j)),
            _ => unmatched += 1,
        }
    }
    (pairs, unmatched)
}

/// Aligns matched estimate positions onto ground truth.
pub fn align(est: &[TimedPose], gt: &[TimedPose], mode: AlignMode) -> Result<Similarity, MetricsError> {
    let (pairs, _) = match_timestamps(est, gt);
    if pairs.is_empty() {
        return Err(MetricsError::EmptyOverlap);
    }
    match mode {
        AlignMode::None => Ok(Similarity::identity()),
        AlignMode::Se3 | AlignMode::Sim3 => {
            let src: Vec<Vec3> = pairs.iter().map(|(i, _)| est[*i].pose.translation).collect();
            let dst: Vec<Vec3> = pairs.iter().map(|(_, j)| gt[*j].pose.translation).collect();
            umeyama(&src, &dst, mode == AlignMode::Sim3)
        }
    }
}

/// Right-multiplies every ground-truth pose by a body-to-camera transform.
pub fn apply_hand_eye(gt: &[TimedPose], body_to_camera: &Pose) -> Vec<TimedPose> {
    gt.iter()
        .map(|p| TimedPose::new(p.t, p.pose.compose(body_to_camera)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Stats {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub max: f64,
}

impl Stats {
    pub fn of(xs: &[f64]) -> Self {
        if xs.is_empty() {
            return Self { mean: 0.0, std: 0.0, max: 0.0 };
        }
        let n = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / n;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
            max: xs.iter().copied().fold(0.0, f64::max),
        }
    }

    fn scaled(&self, k: f64) -> Self {
        Self {
            mean: self.mean * k,
            std: self.std * k,
            max: self.max * k,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSummary {
    /// Position error in m.
    pub position: Stats,
    /// Position error in % of the mean scene depth.
    pub position_relative: Stats,
    /// Geodesic orientation error in degrees.
    pub orientation: Stats,
    pub mean_scene_depth: f64,
    pub times: Vec<f64>,
    pub position_errors: Vec<f64>,
    pub orientation_errors: Vec<f64>,
    /// Estimate samples without a ground-truth match.
    pub unmatched: usize,
}

/// Errors of an (already aligned) estimate against ground truth.
pub fn errors(est: &[TimedPose], gt: &[TimedPose], mean_scene_depth: f64) -> Result<ErrorSummary, MetricsError> {
    if !(mean_scene_depth > 0.0 && mean_scene_depth.is_finite()) {
        return Err(MetricsError::InvalidDepth(mean_scene_depth));
    }
    let (pairs, unmatched) = match_timestamps(est, gt);
    if pairs.is_empty() {
        return Err(MetricsError::EmptyOverlap);
    }
    let mut times = Vec::with_capacity(pairs.len());
    let mut pos = Vec::with_capacity(pairs.len());
    let mut rot = Vec::with_capacity(pairs.len());
    for (i, j) in pairs {
        let (e, g) = (&est[i].pose, &gt[j].pose);
        times.push(gt[j].t);
        pos.push((e.translation - g.translation).norm());
        rot.push(rotation_angle_between(&g.rotation, &e.rotation).to_degrees());
    }
    let position = Stats::of(&pos);
    Ok(ErrorSummary {
        position,
        position_relative: position.scaled(100.0 / mean_scene_depth),
        orientation: Stats::of(&rot),
        mean_scene_depth,
        times,
        position_errors: pos,
        orientation_errors: rot,
        unmatched,
    })
}

/// Aligns `est` with `mode`, then computes its errors.
pub fn evaluate(
    est: &[TimedPose],
    gt: &[TimedPose],
    mode: AlignMode,
    mean_scene_depth: f64,
) -> Result<(Similarity, ErrorSummary), MetricsError> {
    let s = align(est, gt, mode)?;
    let aligned: Vec<TimedPose> = est
        .iter()
        .map(|p| TimedPose::new(p.t, s.apply_pose(&p.pose)))
        .collect();
    Ok((s, errors(&aligned, gt, mean_scene_depth)?))
}

pub fn format_errors_csv(summary: &ErrorSummary) -> String {
    let mut s = String::from("t,position_m,position_pct,orientation_deg\n");
    let k = 100.0 / summary.mean_scene_depth;
    for ((t, p), r) in summary
        .times
        .iter()
        .zip(&summary.position_errors)
        .zip(&summary.orientation_errors)
    {
        let _ = writeln!(s, "{},{},{},{}", fmt12(*t), fmt12(*p), fmt12(p * k), fmt12(*r));
    }
    s
}

pub fn format_summary(summary: &ErrorSummary, alignment: &Similarity, mode: AlignMode) -> String {
    let mut s = String::new();
    let mut row = |name: &str, st: &Stats| {
        let _ = writeln!(s, "{name}_mean = {}", fmt12(st.mean));
        let _ = writeln!(s, "{name}_std = {}", fmt12(st.std));
        let _ = writeln!(s, "{name}_max = {}", fmt12(st.max));
    };
    row("position_m", &summary.position);
    row("position_pct", &summary.position_relative);
    row("orientation_deg", &summary.orientation);
    let _ = writeln!(s, "mean_scene_depth = {}", fmt12(summary.mean_scene_depth));
    let _ = writeln!(s, "samples = {}", summary.times.len());
    let _ = writeln!(s, "unmatched = {}", summary.unmatched);
    let _ = writeln!(s, "alignment = {mode}");
    let _ = writeln!(s, "alignment_scale = {}", fmt12(alignment.scale));
    let r = &alignment.rotation;
    let _ = writeln!(
        s,
        "alignment_rotation = {}",
        r.iter().map(|v| fmt12(*v)).collect::<Vec<_>>().join(" ")
    );
    let t = &alignment.translation;
    let _ = writeln!(s, "alignment_translation = {} {} {}", fmt12(t.x), fmt12(t.y), fmt12(t.z));
    s
}

pub fn write_report(
    dir: &Path,
    summary: &ErrorSummary,
    alignment: &Similarity,
    mode: AlignMode,
) -> Result<(), IoError> {
    std::fs::create_dir_all(dir).map_err(|e| IoError::Io {
        path: dir.to_path_buf(),
        source: e,
    })?;
    for (name, text) in [
        ("errors.csv", format_errors_csv(summary)),
        ("summary.txt", format_summary(summary, alignment, mode)),
    ] {
        let path = dir.join(name);
        std::fs::write(&path, text).map_err(|e| IoError::Io { path, source: e })?;
    }
    Ok(())
}
