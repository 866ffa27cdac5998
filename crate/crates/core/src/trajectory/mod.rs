//! Cumulative cubic B-spline trajectories on SE(3).
//!
//! Control poses `T_{w,0} … T_{w,n}` sit at uniformly spaced knot times
//! `t_i = t0 + i·dt`. On the segment `[t_i, t_{i+1})` the trajectory is
//!
//! ```text
//! T(u) = T_{w,i-1} · exp(B̃₁(u)·Ω_i) · exp(B̃₂(u)·Ω_{i+1}) · exp(B̃₃(u)·Ω_{i+2})
//! ```
//!
//! with `u = (t - t_i)/dt`, `Ω_i = log(T_{w,i-1}⁻¹ T_{w,i})` and `B̃` the
//! cumulative basis returned by [`cumulative_basis`]. Entry 0 of the basis is
//! always 1 and multiplies the anchor pose; entries 1..3 multiply the three
//! incremental twists.

mod fit;

pub use fit::{fit_spline, FitOptions, FitResult};

use thiserror::Error;

use crate::geometry::{exp_se3, log_se3, Mat3, Mat4, Pose, Twist, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrajectoryError {
    #[error("spline parameter u = {0} outside [0, 1)")]
    DomainError(f64),
    #[error("knot spacing must be positive and finite, got {0}")]
    InvalidKnotSpacing(f64),
    #[error("a cubic spline needs at least 4 control poses, got {0}")]
    TooFewControlPoses(usize),
    #[error("time {t} outside the spline domain [{start}, {end})")]
    OutOfDomain { t: f64, start: f64, end: f64 },
    #[error("incremental twist index {index} outside 1..={n}")]
    IndexError { index: usize, n: usize },
    #[error("insufficient data for spline fit: {0}")]
    InsufficientData(String),
}

/// Blending matrix of the cumulative cubic basis.
const BLEND: [[f64; 4]; 4] = [
    [6.0, 0.0, 0.0, 0.0],
    [5.0, 3.0, -3.0, 1.0],
    [1.0, 3.0, 3.0, -2.0],
    [0.0, 0.0, 0.0, 1.0],
];

/// Cumulative basis `B̃(u)` and its first and second time derivatives.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BasisVector {
    pub b: [f64; 4],
    pub db: [f64; 4],
    pub ddb: [f64; 4],
}

fn blend(m: [f64; 4], scale: f64) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (row, o) in BLEND.iter().zip(out.iter_mut()) {
        *o = (row[0] * m[0] + row[1] * m[1] + row[2] * m[2] + row[3] * m[3]) * scale / 6.0;
    }
    out
}

/// Evaluates the cumulative cubic basis at `u ∈ [0, 1)` for knot spacing `dt`.
pub fn cumulative_basis(u: f64, dt: f64) -> Result<BasisVector, TrajectoryError> {
    if !(0.0..1.0).contains(&u) {
        return Err(TrajectoryError::DomainError(u));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(TrajectoryError::InvalidKnotSpacing(dt));
    }
    Ok(basis_unchecked(u, dt))
}

#[inline]
pub(crate) fn basis_unchecked(u: f64, dt: f64) -> BasisVector {
    let u2 = u * u;
    BasisVector {
        b: blend([1.0, u, u2, u2 * u], 1.0),
        db: blend([0.0, 1.0, 2.0 * u, 3.0 * u2], 1.0 / dt),
        ddb: blend([0.0, 0.0, 2.0, 6.0 * u], 1.0 / (dt * dt)),
    }
}

/// Pose and its first two temporal derivatives as 4x4 matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseWithDerivatives {
    pub pose: Pose,
    pub first: Mat4,
    pub second: Mat4,
}

impl PoseWithDerivatives {
    /// Upper-left 3x3 block of the first derivative.
    pub fn rotation_rate(&self) -> Mat3 {
        self.first.fixed_view::<3, 3>(0, 0).into_owned()
    }

    /// Upper-right 3x1 block of the second derivative (world-frame acceleration).
    pub fn acceleration(&self) -> Vec3 {
        self.second.fixed_view::<3, 1>(0, 3).into_owned()
    }

    /// Upper-right 3x1 block of the first derivative (world-frame velocity).
    pub fn velocity(&self) -> Vec3 {
        self.first.fixed_view::<3, 1>(0, 3).into_owned()
    }
}

/// The four quantities a spline segment depends on: the anchor control pose
/// `T_{w,i-1}` and the increments `Ω_i, Ω_{i+1}, Ω_{i+2}`.
#[derive(Debug, Clone, Copy)]
pub struct SegmentControls {
    pub anchor: Pose,
    pub increments: [Twist; 3],
}

impl SegmentControls {
    pub fn pose(&self, basis: &BasisVector) -> Pose {
        let mut pose = self.anchor;
        for (j, omega) in self.increments.iter().enumerate() {
            pose = pose.compose(&exp_se3(&omega.scaled(basis.b[j + 1])));
        }
        pose
    }

    /// Pose with first and second derivatives by the product rule over
    /// `A_j = exp(B̃_{j+1} Ω_{i+j})`.
    pub fn pose_with_derivatives(&self, basis: &BasisVector) -> PoseWithDerivatives {
        let mut a = [Mat4::identity(); 3];
        let mut da = [Mat4::zeros(); 3];
        let mut dda = [Mat4::zeros(); 3];
        for j in 0..3 {
            let omega = &self.increments[j];
            let oh = omega.hat();
            a[j] = exp_se3(&omega.scaled(basis.b[j + 1])).to_matrix();
            da[j] = a[j] * oh * basis.db[j + 1];
            dda[j] = da[j] * oh * basis.db[j + 1] + a[j] * oh * basis.ddb[j + 1];
        }
        let anchor = self.anchor.to_matrix();
        let first = anchor * (da[0] * a[1] * a[2] + a[0] * da[1] * a[2] + a[0] * a[1] * da[2]);
        let second = anchor
            * (dda[0] * a[1] * a[2]
                + a[0] * dda[1] * a[2]
                + a[0] * a[1] * dda[2]
                + (da[0] * da[1] * a[2] + da[0] * a[1] * da[2] + a[0] * da[1] * da[2]) * 2.0);
        debug_assert!(first.row(3).amax() == 0.0 && second.row(3).amax() == 0.0);
        let pose = Pose::from_matrix(&(anchor * a[0] * a[1] * a[2]));
        PoseWithDerivatives {
            pose,
            first,
            second,
        }
    }
}

/// A pose with a timestamp in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimedPose {
    pub t: f64,
    pub pose: Pose,
}

impl TimedPose {
    pub fn new(t: f64, pose: Pose) -> Self {
        Self { t, pose }
    }
}

/// Uniform knot grid: first knot time and index of the last control pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KnotGrid {
    pub t0: f64,
    pub dt: f64,
    pub n: usize,
}

impl KnotGrid {
    /// Smallest grid whose evaluation domain `[t0 + dt, t0 + (n-1)·dt)`
    /// starts at `t_start` and contains every time below `t_end`.
    pub fn covering(t_start: f64, t_end: f64, dt: f64) -> Self {
        let span = ((t_end - t_start) / dt).max(0.0);
        let segments = (span.ceil() as usize).max(1);
        Self {
            t0: t_start - dt,
            dt,
            n: segments + 2,
        }
    }

    pub fn knot_time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }
}

/// Cumulative cubic B-spline trajectory with uniform knots.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineTrajectory {
    t0: f64,
    dt: f64,
    control_poses: Vec<Pose>,
    // increments[i] = Ω_i for i >= 1; increments[0] is unused
    increments: Vec<Twist>,
}

impl SplineTrajectory {
    pub fn new(t0: f64, dt: f64, control_poses: Vec<Pose>) -> Result<Self, TrajectoryError> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(TrajectoryError::InvalidKnotSpacing(dt));
        }
        if control_poses.len() < 4 {
            return Err(TrajectoryError::TooFewControlPoses(control_poses.len()));
        }
        let mut increments = Vec::with_capacity(control_poses.len());
        increments.push(Twist::zero());
        for w in control_poses.windows(2) {
            increments.push(log_se3(&w[0].inverse().compose(&w[1])));
        }
        Ok(Self {
            t0,
            dt,
            control_poses,
            increments,
        })
    }

    pub fn from_grid(grid: &KnotGrid, control_poses: Vec<Pose>) -> Result<Self, TrajectoryError> {
        Self::new(grid.t0, grid.dt, control_poses)
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Index of the last control pose.
    pub fn n(&self) -> usize {
        self.control_poses.len() - 1
    }

    pub fn grid(&self) -> KnotGrid {
        KnotGrid {
            t0: self.t0,
            dt: self.dt,
            n: self.n(),
        }
    }

    pub fn control_poses(&self) -> &[Pose] {
        &self.control_poses
    }

    pub fn knot_time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    /// Half-open evaluation domain `[t_1, t_{n-1})`.
    pub fn domain(&self) -> (f64, f64) {
        (self.knot_time(1), self.knot_time(self.n() - 1))
    }

    pub fn contains(&self, t: f64) -> bool {
        self.segment_of(t).is_ok()
    }

    /// Same knot grid, new control poses.
    pub fn with_control_poses(&self, control_poses: Vec<Pose>) -> Result<Self, TrajectoryError> {
        Self::new(self.t0, self.dt, control_poses)
    }

    /// Segment index `i` and normalized time `u` with `t_i <= t < t_{i+1}`.
    pub fn segment_of(&self, t: f64) -> Result<(usize, f64), TrajectoryError> {
        let (start, end) = self.domain();
        if !(t >= start && t < end) {
            return Err(TrajectoryError::OutOfDomain { t, start, end });
        }
        // membership follows `domain()`; rounding in the division may put t
        // a hair past either edge of the outermost segments
        let s = (t - self.t0) / self.dt;
        let i = s.floor().clamp(1.0, (self.n() - 2) as f64);
        Ok((i as usize, (s - i).clamp(0.0, 1.0)))
    }

    /// `Ω_i = log(T_{w,i-1}⁻¹ T_{w,i})` for `1 <= i <= n`.
    pub fn incremental_twist(&self, i: usize) -> Result<Twist, TrajectoryError> {
        if i == 0 || i > self.n() {
            return Err(TrajectoryError::IndexError { index: i, n: self.n() });
        }
        Ok(self.increments[i])
    }

    /// Controls of segment `i`; requires `1 <= i <= n-2`.
    pub fn controls(&self, i: usize) -> SegmentControls {
        SegmentControls {
            anchor: self.control_poses[i - 1],
            increments: [
                self.increments[i],
                self.increments[i + 1],
                self.increments[i + 2],
            ],
        }
    }

    pub fn pose_at(&self, t: f64) -> Result<Pose, TrajectoryError> {
        let (i, u) = self.segment_of(t)?;
        Ok(self.controls(i).pose(&basis_unchecked(u, self.dt)))
    }

    pub fn derivatives_at(&self, t: f64) -> Result<PoseWithDerivatives, TrajectoryError> {
        let (i, u) = self.segment_of(t)?;
        Ok(self
            .controls(i)
            .pose_with_derivatives(&basis_unchecked(u, self.dt)))
    }

    /// Poses sampled at `rate` Hz over the domain, starting at its left edge.
    pub fn sample(&self, rate: f64) -> Vec<TimedPose> {
        let (start, end) = self.domain();
        let mut out = Vec::new();
        let mut k = 0usize;
        loop {
            let t = start + k as f64 / rate;
            if t >= end {
                break;
            }
            if let Ok(p) = self.pose_at(t) {
                out.push(TimedPose::new(t, p));
            }
            k += 1;
        }
        out
    }
}

/// Central finite-difference perturbations of every control pose,
/// `T_k · exp(±h·e_d)` for the six twist directions, together with the two
/// incremental twists each perturbation changes.
#[derive(Debug, Clone)]
pub(crate) struct PerturbationTable {
    // entries[k][d][s]: s = 0 for +h, 1 for -h
    entries: Vec<[[PerturbedControl; 2]; 6]>,
}

#[derive(Debug, Clone, Copy)]
struct PerturbedControl {
    pose: Pose,
    // Ω_k and Ω_{k+1} recomputed with the perturbed pose
    inc_in: Twist,
    inc_out: Twist,
}

impl PerturbationTable {
    pub fn new(traj: &SplineTrajectory, step: f64) -> Self {
        let cps = traj.control_poses();
        let n = traj.n();
        let entries = (0..=n)
            .map(|k| {
                std::array::from_fn(|d| {
                    std::array::from_fn(|s| {
                        let mut v = nalgebra::Vector6::zeros();
                        v[d] = if s == 0 { step } else { -step };
                        let pose = cps[k].retract(&Twist::from_vector(&v));
                        let inc_in = if k >= 1 {
                            log_se3(&cps[k - 1].inverse().compose(&pose))
                        } else {
                            Twist::zero()
                        };
                        let inc_out = if k < n {
                            log_se3(&pose.inverse().compose(&cps[k + 1]))
                        } else {
                            Twist::zero()
                        };
                        PerturbedControl {
                            pose,
                            inc_in,
                            inc_out,
                        }
                    })
                })
            })
            .collect();
        Self { entries }
    }

    /// Controls of segment `i` with control pose `i - 1 + m` perturbed along
    /// direction `d` with sign index `s`.
    pub fn controls(
        &self,
        base: &SegmentControls,
        i: usize,
        m: usize,
        d: usize,
        s: usize,
    ) -> SegmentControls {
        let e = &self.entries[i - 1 + m][d][s];
        let mut c = *base;
        if m == 0 {
            c.anchor = e.pose;
        } else {
            c.increments[m - 1] = e.inc_in;
        }
        if m <= 2 {
            c.increments[m] = e.inc_out;
        }
        c
    }

    /// Pose of segment `i` at `basis` with control `i - 1 + m` perturbed,
    /// reusing the unchanged factors cached in `cache`.
    pub fn pose(
        &self,
        cache: &SegmentCache,
        basis: &BasisVector,
        i: usize,
        m: usize,
        d: usize,
        s: usize,
    ) -> Pose {
        let e = &self.entries[i - 1 + m][d][s];
        let factor = |inc: &Twist, j: usize| exp_se3(&inc.scaled(basis.b[j + 1]));
        match m {
            0 => e
                .pose
                .compose(&factor(&e.inc_out, 0))
                .compose(&cache.suffix12),
            1 => cache
                .anchor
                .compose(&factor(&e.inc_in, 0))
                .compose(&factor(&e.inc_out, 1))
                .compose(&cache.factors[2]),
            2 => cache
                .prefix01
                .compose(&factor(&e.inc_in, 1))
                .compose(&factor(&e.inc_out, 2)),
            _ => cache.prefix012.compose(&factor(&e.inc_in, 2)),
        }
    }
}

/// Partial products of one segment evaluation, reused across perturbations.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SegmentCache {
    pub anchor: Pose,
    pub factors: [Pose; 3],
    pub prefix01: Pose,
    pub prefix012: Pose,
    pub suffix12: Pose,
    pub pose: Pose,
}

impl SegmentCache {
    pub fn new(controls: &SegmentControls, basis: &BasisVector) -> Self {
        let factors: [Pose; 3] =
            std::array::from_fn(|j| exp_se3(&controls.increments[j].scaled(basis.b[j + 1])));
        let prefix01 = controls.anchor.compose(&factors[0]);
        let prefix012 = prefix01.compose(&factors[1]);
        Self {
            anchor: controls.anchor,
            factors,
            prefix01,
            prefix012,
            suffix12: factors[1].compose(&factors[2]),
            pose: prefix012.compose(&factors[2]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{rotation_angle_between, vee};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_twist(rng: &mut ChaCha8Rng, ta: f64, rb: f64) -> Twist {
        let mut v = || Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        Twist::new(v() * ta, v() * rb)
    }

    fn random_trajectory(seed: u64, n_poses: usize, dt: f64) -> SplineTrajectory {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut pose = exp_se3(&random_twist(&mut rng, 1.0, 1.0));
        let mut poses = vec![pose];
        for _ in 1..n_poses {
            pose = pose.compose(&exp_se3(&random_twist(&mut rng, 0.3, 0.3)));
            poses.push(pose);
        }
        SplineTrajectory::new(0.0, dt, poses).unwrap()
    }

    /// The cumulative product evaluated straight from the control poses, with no cached
    /// increments and matrix exponentials summed as power series.
    fn reference_pose(traj: &SplineTrajectory, t: f64) -> Mat4 {
        fn expm(m: Mat4) -> Mat4 {
            let mut sum = Mat4::identity();
            let mut term = Mat4::identity();
            for k in 1..40 {
                term = term * m / k as f64;
                sum += term;
            }
            sum
        }
        let s = (t - traj.t0()) / traj.dt();
        let i = s.floor() as usize;
        let u = s - i as f64;
        let b = [
            1.0,
            (5.0 + 3.0 * u - 3.0 * u * u + u * u * u) / 6.0,
            (1.0 + 3.0 * u + 3.0 * u * u - 2.0 * u * u * u) / 6.0,
            u * u * u / 6.0,
        ];
        let cps = traj.control_poses();
        let mut m = cps[i - 1].to_matrix();
        for j in 1..=3 {
            let omega = log_se3(&cps[i + j - 2].inverse().compose(&cps[i + j - 1]));
            m *= expm(omega.hat() * b[j]);
        }
        m
    }

    #[test]
    fn basis_examples() {
        let b = cumulative_basis(0.0, 1.0).unwrap();
        let close = |a: [f64; 4], e: [f64; 4]| a.iter().zip(e).all(|(x, y)| (x - y).abs() < 1e-15);
        assert!(close(b.b, [1.0, 5.0 / 6.0, 1.0 / 6.0, 0.0]));
        assert!(close(b.db, [0.0, 0.5, 0.5, 0.0]));
        let b = cumulative_basis(1.0 - 1e-12, 1.0).unwrap();
        assert!(b.b.iter().zip([1.0, 1.0, 5.0 / 6.0, 1.0 / 6.0]).all(|(x, y)| (x - y).abs() < 1e-10));
        assert!(matches!(cumulative_basis(1.0, 1.0), Err(TrajectoryError::DomainError(_))));
        assert!(matches!(cumulative_basis(-0.1, 1.0), Err(TrajectoryError::DomainError(_))));
        assert!(cumulative_basis(0.5, 0.0).is_err());
    }

    #[test]
    fn basis_derivatives_scale_with_dt() {
        let a = cumulative_basis(0.3, 1.0).unwrap();
        let b = cumulative_basis(0.3, 0.5).unwrap();
        for k in 0..4 {
            assert!((b.db[k] - 2.0 * a.db[k]).abs() < 1e-15);
            assert!((b.ddb[k] - 4.0 * a.ddb[k]).abs() < 1e-14);
        }
        assert_eq!(a.b[0], 1.0);
        assert_eq!(a.db[0], 0.0);
        assert_eq!(a.ddb[0], 0.0);
    }

    #[test]
    fn segment_examples() {
        let traj = SplineTrajectory::new(0.0, 0.1, vec![Pose::identity(); 6]).unwrap();
        assert_eq!(traj.segment_of(0.1).unwrap(), (1, 0.0));
        let (i, u) = traj.segment_of(0.15).unwrap();
        assert_eq!(i, 1);
        assert!((u - 0.5).abs() < 1e-12);
        assert!(matches!(traj.segment_of(0.4), Err(TrajectoryError::OutOfDomain { .. })));
        assert!(traj.segment_of(0.0999).is_err());
        assert!(traj.segment_of(f64::NAN).is_err());
    }

    #[test]
    fn segment_of_agrees_with_domain_at_rounded_edges() {
        // domain end is 0.30000000000000004 but (0.3 + 0.1) / 0.1 floors to 4
        let traj = SplineTrajectory::new(-0.1, 0.1, vec![Pose::identity(); 6]).unwrap();
        let (start, end) = traj.domain();
        assert!(0.3 < end);
        let (i, u) = traj.segment_of(0.3).unwrap();
        assert_eq!(i, 3);
        assert!((0.0..=1.0).contains(&u));
        assert!(traj.pose_at(0.3).is_ok());
        assert!(traj.segment_of(start).is_ok());
        assert!(traj.segment_of(end).is_err());
    }

    #[test]
    fn too_few_poses() {
        assert!(matches!(
            SplineTrajectory::new(0.0, 0.1, vec![Pose::identity(); 3]),
            Err(TrajectoryError::TooFewControlPoses(3))
        ));
    }

    #[test]
    fn incremental_twist_examples() {
        let poses = vec![
            Pose::identity(),
            Pose::from_translation(Vec3::new(1.0, 0.0, 0.0)),
            Pose::from_translation(Vec3::new(1.0, 0.0, 0.0)),
            Pose::identity(),
        ];
        let traj = SplineTrajectory::new(0.0, 1.0, poses).unwrap();
        let om = traj.incremental_twist(1).unwrap();
        assert_eq!(om.alpha, Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(om.beta, Vec3::zeros());
        assert_eq!(traj.incremental_twist(2).unwrap(), Twist::zero());
        assert!(traj.incremental_twist(0).is_err());
        assert!(traj.incremental_twist(4).is_err());

        let xi = Twist::new(Vec3::new(0.1, -0.2, 0.05), Vec3::new(0.2, 0.1, -0.3));
        let poses: Vec<_> = (0..8).map(|i| exp_se3(&xi.scaled(i as f64))).collect();
        let traj = SplineTrajectory::new(0.0, 1.0, poses).unwrap();
        for i in 1..=7 {
            let om = traj.incremental_twist(i).unwrap();
            assert!((om.to_vector() - xi.to_vector()).norm() < 1e-12);
        }
    }

    #[test]
    fn identity_control_poses() {
        let traj = SplineTrajectory::new(0.0, 0.1, vec![Pose::identity(); 7]).unwrap();
        for k in 0..40 {
            let t = 0.1 + k as f64 * 0.01;
            assert_eq!(traj.pose_at(t).unwrap(), Pose::identity());
            let d = traj.derivatives_at(t).unwrap();
            assert_eq!(d.first, Mat4::zeros());
            assert_eq!(d.second, Mat4::zeros());
        }
    }

    #[test]
    fn constant_twist_interpolates_knots() {
        let xi = Twist::new(Vec3::new(0.3, 0.0, -0.1), Vec3::new(0.0, 0.4, 0.2));
        let poses: Vec<_> = (0..9).map(|i| exp_se3(&xi.scaled(i as f64))).collect();
        let traj = SplineTrajectory::new(0.0, 0.5, poses.clone()).unwrap();
        for (i, pose) in poses.iter().enumerate().take(7).skip(1) {
            let p = traj.pose_at(traj.knot_time(i)).unwrap();
            assert!((p.to_matrix() - pose.to_matrix()).amax() < 1e-12, "knot {i}");
        }
        // between knots the spline follows the one-parameter subgroup exactly
        let p = traj.pose_at(1.3).unwrap();
        let expected = exp_se3(&xi.scaled(1.3 / 0.5));
        assert!((p.to_matrix() - expected.to_matrix()).amax() < 1e-12);
    }

    #[test]
    fn matches_reference_evaluation() {
        for seed in 0..20 {
            let traj = random_trajectory(seed, 10, 0.2);
            let (start, end) = traj.domain();
            for k in 0..25 {
                let t = start + (end - start) * (k as f64 + 0.37) / 25.0;
                let p = traj.pose_at(t).unwrap().to_matrix();
                assert!((p - reference_pose(&traj, t)).amax() < 1e-10);
            }
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        for seed in 0..10 {
            let traj = random_trajectory(100 + seed, 8, 0.25);
            let (start, end) = traj.domain();
            for k in 0..10 {
                let t = start + (end - start) * (k as f64 + 0.5) / 10.0;
                let d = traj.derivatives_at(t).unwrap();
                let h = 1e-5;
                let p = |t: f64| traj.pose_at(t).unwrap().to_matrix();
                let fd1 = (p(t + h) - p(t - h)) / (2.0 * h);
                assert!((d.first - fd1).norm() / fd1.norm() < 1e-5);
                let h = 1e-4;
                let fd2 = (p(t + h) - p(t) * 2.0 + p(t - h)) / (h * h);
                assert!((d.second - fd2).norm() / fd2.norm() < 1e-4);
                assert!((d.pose.to_matrix() - traj.pose_at(t).unwrap().to_matrix()).amax() < 1e-12);
                let rtr = d.pose.rotation.transpose() * d.rotation_rate();
                assert!(vee(&rtr).is_ok());
            }
        }
    }

    #[test]
    fn locality() {
        let traj = random_trajectory(7, 10, 0.1);
        let k = 5;
        let mut poses = traj.control_poses().to_vec();
        poses[k] = poses[k].retract(&Twist::new(Vec3::new(0.1, 0.0, 0.0), Vec3::new(0.0, 0.1, 0.0)));
        let moved = traj.with_control_poses(poses).unwrap();
        let (start, end) = traj.domain();
        let mut t = start;
        while t < end {
            let same = traj.pose_at(t).unwrap() == moved.pose_at(t).unwrap();
            let inside = t >= traj.knot_time(k - 2) && t < traj.knot_time(k + 2);
            if !inside {
                assert!(same, "t = {t}");
            }
            t += 0.003;
        }
    }

    #[test]
    fn knot_grid_covers_span() {
        let g = KnotGrid::covering(0.0, 9.999, 0.1);
        assert_eq!(g.n, 102);
        let traj = SplineTrajectory::from_grid(&g, vec![Pose::identity(); g.n + 1]).unwrap();
        assert!(traj.contains(0.0) && traj.contains(9.999));
        let g = KnotGrid::covering(0.0, 10.0, 0.1);
        assert_eq!(g.n, 102);
    }

    proptest! {
        #[test]
        fn rotation_stays_orthonormal(seed in 0u64..1000, frac in 0.0..1.0f64) {
            let traj = random_trajectory(seed, 6, 0.1);
            let (start, end) = traj.domain();
            let p = traj.pose_at(start + frac * (end - start) * 0.999).unwrap();
            let (orth, det) = p.orthonormality_error();
            prop_assert!(orth < 1e-9 && (det - 1.0).abs() < 1e-9);
        }

        #[test]
        fn c2_continuity_at_knots(seed in 0u64..1000) {
            let traj = random_trajectory(seed, 7, 0.2);
            for i in 2..traj.n() - 1 {
                let t = traj.knot_time(i);
                let a = traj.derivatives_at(t - 1e-6).unwrap();
                let b = traj.derivatives_at(t + 1e-6).unwrap();
                prop_assert!(rotation_angle_between(&a.pose.rotation, &b.pose.rotation) < 1e-4);
                prop_assert!((a.pose.to_matrix() - b.pose.to_matrix()).norm() < 1e-4);
                prop_assert!((a.first - b.first).norm() * traj.dt() < 1e-4);
                prop_assert!((a.second - b.second).norm() * traj.dt() * traj.dt() < 1e-4);
            }
        }
    }
}
