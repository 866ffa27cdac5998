//! Record-level readers and writers.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion};

use super::{fmt12, read_text, write_text, IoError};
use crate::estimator::Association;
use crate::geometry::{Pose, Vec3};
use crate::sensors::{CameraIntrinsics, Event, ImuSample, MapPoint, MapSegment, PrimitiveKind, SceneMap, Vec2};
use crate::trajectory::{SplineTrajectory, TimedPose};

/// Deviation of a quaternion norm from 1 beyond which it is rejected.
pub const QUATERNION_TOLERANCE: f64 = 1e-3;

/// One non-comment line split into tokens with their 1-based columns.
pub(crate) struct Record<'a> {
    pub line: usize,
    tokens: Vec<(usize, &'a str)>,
    end_column: usize,
}

impl<'a> Record<'a> {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    fn error(&self, column: usize, message: impl Into<String>) -> IoError {
        IoError::Parse {
            line: self.line,
            column,
            message: message.into(),
        }
    }

    pub fn expect_fields(&self, allowed: &[usize]) -> Result<(), IoError> {
        if allowed.contains(&self.len()) {
            return Ok(());
        }
        let column = if self.len() > *allowed.iter().max().unwrap_or(&0) {
            self.tokens[*allowed.iter().max().unwrap_or(&0)].0
        } else {
            self.end_column
        };
        let wanted: Vec<String> = allowed.iter().map(|n| n.to_string()).collect();
        Err(self.error(
            column,
            format!("expected {} fields, found {}", wanted.join(" or "), self.len()),
        ))
    }

    pub fn f64(&self, i: usize) -> Result<f64, IoError> {
        let (col, tok) = self.tokens[i];
        match tok.parse::<f64>() {
            Ok(v) if v.is_finite() => Ok(v),
            _ => Err(self.error(col, format!("invalid number '{tok}'"))),
        }
    }

    pub fn u64(&self, i: usize) -> Result<u64, IoError> {
        let (col, tok) = self.tokens[i];
        tok.parse::<u64>()
            .map_err(|_| self.error(col, format!("invalid integer '{tok}'")))
    }

    pub fn vec3(&self, i: usize) -> Result<Vec3, IoError> {
        Ok(Vec3::new(self.f64(i)?, self.f64(i + 1)?, self.f64(i + 2)?))
    }
}

/// Iterates the records of a text, skipping blanks and `#` comments.
pub(crate) fn records(text: &str) -> impl Iterator<Item = Record<'_>> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let content = raw.split('#').next().unwrap_or("");
        let mut tokens = Vec::new();
        let bytes = content.as_bytes();
        let mut k = 0;
        while k < bytes.len() {
            while k < bytes.len() && bytes[k].is_ascii_whitespace() {
                k += 1;
            }
            let start = k;
            while k < bytes.len() && !bytes[k].is_ascii_whitespace() {
                k += 1;
            }
            if k > start {
                tokens.push((start + 1, &content[start..k]));
            }
        }
        if tokens.is_empty() {
            None
        } else {
            Some(Record {
                line: i + 1,
                tokens,
                end_column: content.trim_end().len() + 1,
            })
        }
    })
}

fn check_monotone(prev: &mut f64, t: f64, line: usize) -> Result<(), IoError> {
    if t < *prev {
        return Err(IoError::NonMonotoneTimestamp { line });
    }
    *prev = t;
    Ok(())
}

// ---------------------------------------------------------------- events

pub fn parse_events(text: &str) -> Result<Vec<Event>, IoError> {
    let mut out = Vec::with_capacity(text.len() / 24);
    let mut prev = f64::NEG_INFINITY;
    for r in records(text) {
        r.expect_fields(&[4])?;
        let t = r.f64(0)?;
        check_monotone(&mut prev, t, r.line)?;
        let polarity = match r.tokens[3].1 {
            "0" | "-1" => -1,
            "1" => 1,
            tok => return Err(r.error(r.tokens[3].0, format!("polarity must be 0 or 1, got '{tok}'"))),
        };
        out.push(Event::new(t, r.f64(1)?, r.f64(2)?, polarity));
    }
    Ok(out)
}

pub fn format_events(events: &[Event]) -> String {
    let mut s = String::with_capacity(events.len() * 32);
    for e in events {
        let p = if e.polarity > 0 { 1 } else { 0 };
        let _ = writeln!(s, "{} {} {} {p}", fmt12(e.t), fmt12(e.x), fmt12(e.y));
    }
    s
}

pub fn read_events(path: &Path) -> Result<Vec<Event>, IoError> {
    parse_events(&read_text(path)?).map_err(|e| e.in_file(path))
}

pub fn write_events(path: &Path, events: &[Event]) -> Result<(), IoError> {
    write_text(path, &format_events(events))
}

// ---------------------------------------------------------------- imu

pub fn parse_imu(text: &str) -> Result<Vec<ImuSample>, IoError> {
    let mut out = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    for r in records(text) {
        r.expect_fields(&[7])?;
        let t = r.f64(0)?;
        check_monotone(&mut prev, t, r.line)?;
        let accel = r.vec3(1)?;
        let omega = r.vec3(4)?;
        out.push(ImuSample::new(t, omega, accel));
    }
    Ok(out)
}

pub fn format_imu(samples: &[ImuSample]) -> String {
    let mut s = String::new();
    for m in samples {
        let _ = writeln!(
            s,
            "{} {} {} {} {} {} {}",
            fmt12(m.t),
            fmt12(m.accel.x),
            fmt12(m.accel.y),
            fmt12(m.accel.z),
            fmt12(m.omega.x),
            fmt12(m.omega.y),
            fmt12(m.omega.z)
        );
    }
    s
}

pub fn read_imu(path: &Path) -> Result<Vec<ImuSample>, IoError> {
    parse_imu(&read_text(path)?).map_err(|e| e.in_file(path))
}

pub fn write_imu(path: &Path, samples: &[ImuSample]) -> Result<(), IoError> {
    write_text(path, &format_imu(samples))
}

// ---------------------------------------------------------------- poses

pub fn parse_poses(text: &str) -> Result<Vec<TimedPose>, IoError> {
    let mut out = Vec::new();
    let mut prev = f64::NEG_INFINITY;
    for r in records(text) {
        r.expect_fields(&[8])?;
        let t = r.f64(0)?;
        check_monotone(&mut prev, t, r.line)?;
        let p = r.vec3(1)?;
        let q = Quaternion::new(r.f64(7)?, r.f64(4)?, r.f64(5)?, r.f64(6)?);
        let norm = q.norm();
        if (norm - 1.0).abs() > QUATERNION_TOLERANCE {
            return Err(IoError::NonUnitQuaternion { line: r.line, norm });
        }
        let q = UnitQuaternion::from_quaternion(q);
        out.push(TimedPose::new(t, Pose::from_quaternion(p, &q)));
    }
    Ok(out)
}

pub fn format_poses(poses: &[TimedPose]) -> String {
    let mut s = String::new();
    for tp in poses {
        let q = tp.pose.quaternion();
        let c = q.coords; // (x, y, z, w)
        let p = tp.pose.translation;
        let _ = writeln!(
            s,
            "{} {} {} {} {} {} {} {}",
            fmt12(tp.t),
            fmt12(p.x),
            fmt12(p.y),
            fmt12(p.z),
            fmt12(c[0]),
            fmt12(c[1]),
            fmt12(c[2]),
            fmt12(c[3])
        );
    }
    s
}

pub fn read_poses(path: &Path) -> Result<Vec<TimedPose>, IoError> {
    parse_poses(&read_text(path)?).map_err(|e| e.in_file(path))
}

pub fn write_poses(path: &Path, poses: &[TimedPose]) -> Result<(), IoError> {
    write_text(path, &format_poses(poses))
}

/// Control poses at their knot times.
pub fn control_pose_records(traj: &SplineTrajectory) -> Vec<TimedPose> {
    traj.control_poses()
        .iter()
        .enumerate()
        .map(|(i, p)| TimedPose::new(traj.knot_time(i), *p))
        .collect()
}

/// Rebuilds a spline from control poses at uniformly spaced knot times.
pub fn trajectory_from_control_poses(poses: &[TimedPose]) -> Result<SplineTrajectory, IoError> {
    if poses.len() < 4 {
        return Err(IoError::Invalid(format!(
            "a spline needs at least 4 control poses, found {}",
            poses.len()
        )));
    }
    let t0 = poses[0].t;
    let dt = (poses[poses.len() - 1].t - t0) / (poses.len() - 1) as f64;
    for (i, p) in poses.iter().enumerate() {
        let expected = t0 + i as f64 * dt;
        if (p.t - expected).abs() > 1e-6 * dt.max(1e-9) + 1e-9 {
            return Err(IoError::Invalid(format!(
                "control pose {i} at t = {} is off the uniform grid (expected {expected})",
                p.t
            )));
        }
    }
    SplineTrajectory::new(t0, dt, poses.iter().map(|p| p.pose).collect())
        .map_err(|e| IoError::Invalid(e.to_string()))
}

// ---------------------------------------------------------------- calibration

/// Radial-tangential distortion `k1 k2 p1 p2 k3`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Distortion {
    pub k1: f64,
    pub k2: f64,
    pub p1: f64,
    pub p2: f64,
    pub k3: f64,
}

impl Distortion {
    pub fn is_zero(&self) -> bool {
        *self == Self::default()
    }

    /// Distorts normalized image coordinates.
    pub fn distort(&self, x: Vec2) -> Vec2 {
        let r2 = x.norm_squared();
        let radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3));
        let xy = x.x * x.y;
        Vec2::new(
            x.x * radial + 2.0 * self.p1 * xy + self.p2 * (r2 + 2.0 * x.x * x.x),
            x.y * radial + self.p1 * (r2 + 2.0 * x.y * x.y) + 2.0 * self.p2 * xy,
        )
    }

    /// Inverts [`Distortion::distort`] by fixed-point iteration.
    pub fn undistort(&self, xd: Vec2) -> Vec2 {
        let mut x = xd;
        for _ in 0..50 {
            let r2 = x.norm_squared();
            let radial = 1.0 + r2 * (self.k1 + r2 * (self.k2 + r2 * self.k3));
            let xy = x.x * x.y;
            let tangential = Vec2::new(
                2.0 * self.p1 * xy + self.p2 * (r2 + 2.0 * x.x * x.x),
                self.p1 * (r2 + 2.0 * x.y * x.y) + 2.0 * self.p2 * xy,
            );
            let next = (xd - tangential) / radial;
            let done = (next - x).amax() < 1e-15;
            x = next;
            if done {
                break;
            }
        }
        x
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub intrinsics: CameraIntrinsics,
    pub distortion: Distortion,
}

impl Calibration {
    pub fn undistort_pixel(&self, px: Vec2) -> Vec2 {
        let k = &self.intrinsics;
        let xd = Vec2::new((px.x - k.cx) / k.fx, (px.y - k.cy) / k.fy);
        let x = self.distortion.undistort(xd);
        Vec2::new(k.fx * x.x + k.cx, k.fy * x.y + k.cy)
    }

    pub fn undistort_events(&self, events: &mut [Event]) {
        if self.distortion.is_zero() {
            return;
        }
        for e in events {
            let p = self.undistort_pixel(e.pixel());
            e.x = p.x;
            e.y = p.y;
        }
    }
}

impl From<CameraIntrinsics> for Calibration {
    fn from(intrinsics: CameraIntrinsics) -> Self {
        Self {
            intrinsics,
            distortion: Distortion::default(),
        }
    }
}

pub fn parse_calibration(text: &str) -> Result<Calibration, IoError> {
    let mut it = records(text);
    let r = it
        .next()
        .ok_or_else(|| IoError::Invalid("calibration file is empty".into()))?;
    if let Some(extra) = it.next() {
        return Err(IoError::Parse {
            line: extra.line,
            column: 1,
            message: "calibration has a single record".into(),
        });
    }
    r.expect_fields(&[9, 11])?;
    let (width, height) = if r.len() == 11 {
        (r.u64(9)? as u32, r.u64(10)? as u32)
    } else {
        let d = CameraIntrinsics::default();
        (d.width, d.height)
    };
    let intrinsics = CameraIntrinsics {
        fx: r.f64(0)?,
        fy: r.f64(1)?,
        cx: r.f64(2)?,
        cy: r.f64(3)?,
        width,
        height,
    };
    if !intrinsics.is_valid() {
        return Err(IoError::Invalid("focal lengths must be positive".into()));
    }
    Ok(Calibration {
        intrinsics,
        distortion: Distortion {
            k1: r.f64(4)?,
            k2: r.f64(5)?,
            p1: r.f64(6)?,
            p2: r.f64(7)?,
            k3: r.f64(8)?,
        },
    })
}

pub fn format_calibration(c: &Calibration) -> String {
    let k = &c.intrinsics;
    let d = &c.distortion;
    format!(
        "{} {} {} {} {} {} {} {} {} {} {}\n",
        fmt12(k.fx),
        fmt12(k.fy),
        fmt12(k.cx),
        fmt12(k.cy),
        fmt12(d.k1),
        fmt12(d.k2),
        fmt12(d.p1),
        fmt12(d.p2),
        fmt12(d.k3),
        k.width,
        k.height
    )
}

pub fn read_calibration(path: &Path) -> Result<Calibration, IoError> {
    parse_calibration(&read_text(path)?).map_err(|e| e.in_file(path))
}

pub fn write_calibration(path: &Path, c: &Calibration) -> Result<(), IoError> {
    write_text(path, &format_calibration(c))
}

// ---------------------------------------------------------------- maps

pub fn parse_map_points(text: &str) -> Result<Vec<MapPoint>, IoError> {
    records(text)
        .map(|r| {
            r.expect_fields(&[4])?;
            Ok(MapPoint {
                id: r.u64(0)?,
                position: r.vec3(1)?,
            })
        })
        .collect()
}

pub fn parse_map_lines(text: &str) -> Result<Vec<MapSegment>, IoError> {
    records(text)
        .map(|r| {
            r.expect_fields(&[7])?;
            Ok(MapSegment {
                id: r.u64(0)?,
                start: r.vec3(1)?,
                end: r.vec3(4)?,
            })
        })
        .collect()
}

fn fmt_vec3(v: &Vec3) -> String {
    format!("{} {} {}", fmt12(v.x), fmt12(v.y), fmt12(v.z))
}

pub fn format_map_points(points: &[MapPoint]) -> String {
    points
        .iter()
        .map(|p| format!("{} {}\n", p.id, fmt_vec3(&p.position)))
        .collect()
}

pub fn format_map_lines(segments: &[MapSegment]) -> String {
    segments
        .iter()
        .map(|s| format!("{} {} {}\n", s.id, fmt_vec3(&s.start), fmt_vec3(&s.end)))
        .collect()
}

pub fn read_map_points(path: &Path) -> Result<SceneMap, IoError> {
    Ok(SceneMap::from_points(
        parse_map_points(&read_text(path)?).map_err(|e| e.in_file(path))?,
    ))
}

pub fn read_map_lines(path: &Path) -> Result<SceneMap, IoError> {
    Ok(SceneMap::from_segments(
        parse_map_lines(&read_text(path)?).map_err(|e| e.in_file(path))?,
    ))
}

// ---------------------------------------------------------------- associations

pub fn parse_associations(text: &str, kind: PrimitiveKind) -> Result<Vec<Association>, IoError> {
    records(text)
        .map(|r| {
            r.expect_fields(&[2])?;
            Ok(Association {
                event_index: r.u64(0)? as usize,
                primitive_id: r.u64(1)?,
                kind,
            })
        })
        .collect()
}

pub fn format_associations(assoc: &[Association]) -> String {
    let mut s = String::with_capacity(assoc.len() * 12);
    for a in assoc {
        let _ = writeln!(s, "{} {}", a.event_index, a.primitive_id);
    }
    s
}

pub fn read_associations(path: &Path, kind: PrimitiveKind) -> Result<Vec<Association>, IoError> {
    parse_associations(&read_text(path)?, kind).map_err(|e| e.in_file(path))
}

pub fn write_associations(path: &Path, assoc: &[Association]) -> Result<(), IoError> {
    write_text(path, &format_associations(assoc))
}
