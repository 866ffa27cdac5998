//! Batch estimation of the spline control poses and the model parameters θ.
//!
//! The objective is
//!
//! ```text
//! F = 1/(N σ_e²) Σ_k |e_k - ê_k|² + 1/(M σ_ω²) Σ_j |ω_j - ω̂_j|² + 1/(M σ_a²) Σ_j |a_j - â_j|²
//! ```
//!
//! with the prefactors folded into per-residual weights, so the squared norm
//! of the weighted residual vector is exactly `F`. Decision vectors are local
//! increments: control poses move as `T ← T·exp(δ)` and θ additively.

mod association;
mod observability;
mod residuals;
mod solver;

pub use association::{derive_associations, AssociationOutcome};
pub use observability::{analyze_observability, ObservabilityReport};
pub use residuals::{evaluate, jacobian, Costs, Evaluation, JacobianBlock, SparseJacobian};
pub use solver::{solve, LmConfig, Solution, SolveReport, Termination};

use std::collections::HashMap;

use nalgebra::DVector;
use thiserror::Error;

use crate::geometry::{Pose, Twist, Vec3};
use crate::sensors::{
    CameraIntrinsics, Event, GravityModel, ImuSample, ModelParams, PrimitiveKind, SceneMap,
    SensorError, Vec2,
};
use crate::trajectory::{SplineTrajectory, TrajectoryError};

/// Finite-difference step on local twist and θ coordinates.
pub const FD_STEP: f64 = 1e-6;

/// Residual magnitude (px) substituted when a primitive falls behind the
/// camera, so the solver can back off instead of failing.
pub const RESIDUAL_CAP: f64 = 1e4;

/// Number of θ components: gyro bias, accel bias, scale, roll, pitch.
pub const THETA_DIM: usize = 9;

pub const THETA_NAMES: [&str; THETA_DIM] = [
    "gyro_bias_x",
    "gyro_bias_y",
    "gyro_bias_z",
    "accel_bias_x",
    "accel_bias_y",
    "accel_bias_z",
    "scale",
    "roll",
    "pitch",
];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("problem has no residuals")]
    EmptyProblem,
    #[error(
        "no measurement lies inside the trajectory domain ({events} events, {imu} imu samples dropped)"
    )]
    DomainMismatch { events: usize, imu: usize },
    #[error("invalid association: {0}")]
    InvalidAssociation(String),
    #[error("numerical failure: {0}")]
    NumericalFailure(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error(transparent)]
    Sensor(#[from] SensorError),
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

/// Measurement standard deviations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    /// Pixels.
    pub sigma_e: f64,
    /// rad/s.
    pub sigma_omega: f64,
    /// m/s².
    pub sigma_a: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            sigma_e: 0.1,
            sigma_omega: 0.03,
            sigma_a: 0.1,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<(), EstimatorError> {
        let ok = [self.sigma_e, self.sigma_omega, self.sigma_a]
            .iter()
            .all(|s| *s > 0.0 && s.is_finite());
        if ok {
            Ok(())
        } else {
            Err(EstimatorError::InvalidInput(format!(
                "noise standard deviations must be positive: {self:?}"
            )))
        }
    }
}

/// Parameters held constant during the solve.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FreezeFlags {
    pub gyro_bias: bool,
    pub accel_bias: bool,
    pub scale: bool,
    pub orientation: bool,
    /// Hold control pose 0 fixed. Off by default: the map already fixes the
    /// world frame.
    pub first_pose: bool,
}

impl FreezeFlags {
    /// Every θ component frozen; only control poses move.
    pub fn trajectory_only() -> Self {
        Self {
            gyro_bias: true,
            accel_bias: true,
            scale: true,
            orientation: true,
            first_pose: false,
        }
    }

    pub fn theta_mask(&self) -> [bool; THETA_DIM] {
        let mut m = [false; THETA_DIM];
        m[0..3].fill(self.gyro_bias);
        m[3..6].fill(self.accel_bias);
        m[6] = self.scale;
        m[7..9].fill(self.orientation);
        m
    }
}

/// Links an event to the map primitive that generated it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Association {
    pub event_index: usize,
    pub primitive_id: u64,
    pub kind: PrimitiveKind,
}

/// Measurements excluded while building a problem.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DroppedMeasurements {
    pub events_out_of_domain: usize,
    pub imu_out_of_domain: usize,
    pub unassociated_events: usize,
}

#[derive(Debug, Clone, Copy)]
pub(crate) enum Primitive {
    Point(Vec3),
    /// Endpoints in canonical order.
    Line(Vec3, Vec3),
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct VisualObs {
    pub segment: usize,
    pub u: f64,
    pub pixel: Vec2,
    pub primitive: Primitive,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct InertialObs {
    pub segment: usize,
    pub u: f64,
    pub omega: Vec3,
    pub accel: Vec3,
}

/// Mapping from decision-vector entries to control poses and θ.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Layout {
    /// First column of each control pose's 6-block, `None` when frozen.
    pub pose_cols: Vec<Option<usize>>,
    pub theta_cols: [Option<usize>; THETA_DIM],
    pub dim: usize,
}

impl Layout {
    fn new(n_poses: usize, first_pose_frozen: bool, theta_frozen: [bool; THETA_DIM]) -> Self {
        let mut next = 0;
        let pose_cols = (0..n_poses)
            .map(|k| {
                if k == 0 && first_pose_frozen {
                    None
                } else {
                    next += 6;
                    Some(next - 6)
                }
            })
            .collect();
        let theta_cols = std::array::from_fn(|j| {
            if theta_frozen[j] {
                None
            } else {
                next += 1;
                Some(next - 1)
            }
        });
        Self {
            pose_cols,
            theta_cols,
            dim: next,
        }
    }

    pub fn free_theta(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.theta_cols
            .iter()
            .enumerate()
            .filter_map(|(j, c)| c.map(|c| (j, c)))
    }
}

/// Everything [`build_problem`] needs.
#[derive(Debug, Clone)]
pub struct ProblemInputs<'a> {
    pub events: &'a [Event],
    pub associations: &'a [Association],
    pub imu: &'a [ImuSample],
    pub map: &'a SceneMap,
    pub intrinsics: CameraIntrinsics,
    pub trajectory: SplineTrajectory,
    pub params: ModelParams,
    pub noise: NoiseConfig,
    pub freeze: FreezeFlags,
    pub gravity: GravityModel,
}

/// A weighted least-squares problem at a current estimate.
#[derive(Debug, Clone)]
pub struct Problem {
    trajectory: SplineTrajectory,
    params: ModelParams,
    intrinsics: CameraIntrinsics,
    gravity: GravityModel,
    noise: NoiseConfig,
    freeze: FreezeFlags,
    requested_freeze: FreezeFlags,
    kind: Option<PrimitiveKind>,
    pub(crate) visual: Vec<VisualObs>,
    pub(crate) inertial: Vec<InertialObs>,
    dropped: DroppedMeasurements,
    layout: Layout,
}

pub fn build_problem(inputs: ProblemInputs<'_>) -> Result<Problem, EstimatorError> {
    inputs.noise.validate()?;
    inputs.params.validate()?;
    if !inputs.intrinsics.is_valid() {
        return Err(EstimatorError::InvalidInput(format!(
            "invalid intrinsics {:?}",
            inputs.intrinsics
        )));
    }
    let traj = &inputs.trajectory;
    let mut dropped = DroppedMeasurements::default();

    let kind = if inputs.associations.is_empty() {
        inputs.map.kind()
    } else {
        Some(
            inputs
                .map
                .validate()
                .map_err(|e| EstimatorError::InvalidAssociation(e.to_string()))?,
        )
    };
    let points: HashMap<u64, Vec3> = inputs.map.points.iter().map(|p| (p.id, p.position)).collect();
    let segments: HashMap<u64, (Vec3, Vec3)> = inputs
        .map
        .segments
        .iter()
        .map(|s| (s.id, s.canonical_endpoints()))
        .collect();

    let mut seen = vec![false; inputs.events.len()];
    let mut visual = Vec::with_capacity(inputs.associations.len());
    for a in inputs.associations {
        let event = inputs.events.get(a.event_index).ok_or_else(|| {
            EstimatorError::InvalidAssociation(format!(
                "event index {} out of range ({} events)",
                a.event_index,
                inputs.events.len()
            ))
        })?;
        if std::mem::replace(&mut seen[a.event_index], true) {
            return Err(EstimatorError::InvalidAssociation(format!(
                "event {} associated more than once",
                a.event_index
            )));
        }
        if Some(a.kind) != kind {
            return Err(EstimatorError::InvalidAssociation(format!(
                "event {} refers to a {:?} but the map holds {:?}",
                a.event_index, a.kind, kind
            )));
        }
        let primitive = match a.kind {
            PrimitiveKind::Point => points.get(&a.primitive_id).map(|x| Primitive::Point(*x)),
            PrimitiveKind::Line => segments
                .get(&a.primitive_id)
                .map(|(s, e)| Primitive::Line(*s, *e)),
        }
        .ok_or_else(|| {
            EstimatorError::InvalidAssociation(format!(
                "event {} refers to unknown primitive {}",
                a.event_index, a.primitive_id
            ))
        })?;
        match traj.segment_of(event.t) {
            Ok((segment, u)) => visual.push(VisualObs {
                segment,
                u,
                pixel: event.pixel(),
                primitive,
            }),
            Err(_) => dropped.events_out_of_domain += 1,
        }
    }
    dropped.unassociated_events = inputs.events.len() - inputs.associations.len();

    let mut inertial = Vec::with_capacity(inputs.imu.len());
    for s in inputs.imu {
        match traj.segment_of(s.t) {
            Ok((segment, u)) => inertial.push(InertialObs {
                segment,
                u,
                omega: s.omega,
                accel: s.accel,
            }),
            Err(_) => dropped.imu_out_of_domain += 1,
        }
    }

    if visual.is_empty() && inertial.is_empty() {
        return Err(if dropped.events_out_of_domain + dropped.imu_out_of_domain > 0 {
            EstimatorError::DomainMismatch {
                events: dropped.events_out_of_domain,
                imu: dropped.imu_out_of_domain,
            }
        } else {
            EstimatorError::EmptyProblem
        });
    }

    // parameters that no residual depends on are frozen
    let mut freeze = inputs.freeze;
    if inertial.is_empty() {
        freeze.gyro_bias = true;
        freeze.accel_bias = true;
    }
    if visual.is_empty() {
        freeze.scale = true;
        freeze.orientation = true;
    }
    let layout = Layout::new(traj.n() + 1, freeze.first_pose, freeze.theta_mask());

    Ok(Problem {
        trajectory: inputs.trajectory,
        params: inputs.params,
        intrinsics: inputs.intrinsics,
        gravity: inputs.gravity,
        noise: inputs.noise,
        freeze,
        requested_freeze: inputs.freeze,
        kind,
        visual,
        inertial,
        dropped,
        layout,
    })
}

impl Problem {
    pub fn trajectory(&self) -> &SplineTrajectory {
        &self.trajectory
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn intrinsics(&self) -> &CameraIntrinsics {
        &self.intrinsics
    }

    pub fn gravity(&self) -> &GravityModel {
        &self.gravity
    }

    pub fn noise(&self) -> &NoiseConfig {
        &self.noise
    }

    /// Effective freeze flags, including parameters frozen because no
    /// residual depends on them.
    pub fn freeze(&self) -> FreezeFlags {
        self.freeze
    }

    pub fn requested_freeze(&self) -> FreezeFlags {
        self.requested_freeze
    }

    pub fn primitive_kind(&self) -> Option<PrimitiveKind> {
        self.kind
    }

    pub fn dropped(&self) -> DroppedMeasurements {
        self.dropped
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn dim(&self) -> usize {
        self.layout.dim
    }

    /// N: number of event residual blocks.
    pub fn n_events(&self) -> usize {
        self.visual.len()
    }

    /// M: number of IMU samples.
    pub fn n_imu(&self) -> usize {
        self.inertial.len()
    }

    pub fn rows_per_event(&self) -> usize {
        match self.kind {
            Some(PrimitiveKind::Line) => 1,
            _ => 2,
        }
    }

    pub fn n_residuals(&self) -> usize {
        self.n_events() * self.rows_per_event() + 6 * self.n_imu()
    }

    /// Weights `(1/√(Nσ_e²), 1/√(Mσ_ω²), 1/√(Mσ_a²))`; zero for absent terms.
    pub fn weights(&self) -> [f64; 3] {
        let w = |count: usize, sigma: f64| {
            if count == 0 {
                0.0
            } else {
                1.0 / (count as f64 * sigma * sigma).sqrt()
            }
        };
        [
            w(self.n_events(), self.noise.sigma_e),
            w(self.n_imu(), self.noise.sigma_omega),
            w(self.n_imu(), self.noise.sigma_a),
        ]
    }

    /// Replaces the current estimate. The knot grid must not change.
    pub fn set_state(&mut self, trajectory: SplineTrajectory, params: ModelParams) -> Result<(), EstimatorError> {
        if trajectory.grid() != self.trajectory.grid() {
            return Err(EstimatorError::InvalidInput(
                "replacement trajectory has a different knot grid".into(),
            ));
        }
        self.trajectory = trajectory;
        self.params = params;
        Ok(())
    }

    /// The estimate moved by the local increment `delta`.
    pub fn apply(&self, delta: &DVector<f64>) -> Result<(SplineTrajectory, ModelParams), EstimatorError> {
        self.apply_to(&self.trajectory, &self.params, delta)
    }

    pub(crate) fn apply_to(
        &self,
        traj: &SplineTrajectory,
        params: &ModelParams,
        delta: &DVector<f64>,
    ) -> Result<(SplineTrajectory, ModelParams), EstimatorError> {
        if delta.len() != self.layout.dim {
            return Err(EstimatorError::InvalidInput(format!(
                "decision vector has {} entries, expected {}",
                delta.len(),
                self.layout.dim
            )));
        }
        let poses: Vec<Pose> = traj
            .control_poses()
            .iter()
            .zip(&self.layout.pose_cols)
            .map(|(p, col)| match col {
                Some(c) => p.retract(&Twist::from_vector(&delta.fixed_rows::<6>(*c).into_owned())),
                None => *p,
            })
            .collect();
        let mut theta = theta_vector(params);
        for (j, c) in self.layout.free_theta() {
            theta[j] += delta[c];
        }
        Ok((traj.with_control_poses(poses)?, params_from_theta(&theta)))
    }
}

pub(crate) fn theta_vector(p: &ModelParams) -> [f64; THETA_DIM] {
    [
        p.gyro_bias.x,
        p.gyro_bias.y,
        p.gyro_bias.z,
        p.accel_bias.x,
        p.accel_bias.y,
        p.accel_bias.z,
        p.scale,
        p.orientation[0],
        p.orientation[1],
    ]
}

pub(crate) fn params_from_theta(t: &[f64; THETA_DIM]) -> ModelParams {
    ModelParams {
        gyro_bias: Vec3::new(t[0], t[1], t[2]),
        accel_bias: Vec3::new(t[3], t[4], t[5]),
        scale: t[6],
        orientation: [t[7], t[8]],
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use crate::geometry::exp_se3;
    use crate::sensors::{corrected_projection, predict_imu, MapPoint, MapSegment};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// A small wavy trajectory looking down at a map near the origin.
    pub fn small_trajectory(n_poses: usize, dt: f64, seed: u64) -> SplineTrajectory {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = Pose::new(
            crate::geometry::Mat3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0)),
            Vec3::new(0.0, 0.0, 1.0),
        );
        let phase: f64 = rng.random_range(0.0..6.0);
        let poses = (0..n_poses)
            .map(|i| {
                let t = i as f64 * dt + phase;
                base.compose(&exp_se3(&Twist::new(
                    Vec3::new(0.1 * t.sin(), 0.08 * (1.3 * t).cos(), 0.05 * (0.7 * t).sin()),
                    Vec3::new(0.1 * (0.9 * t).cos(), 0.1 * (1.1 * t).sin(), 0.2 * t.sin()),
                )))
            })
            .collect();
        SplineTrajectory::new(0.0, dt, poses).unwrap()
    }

    pub struct Synthetic {
        pub events: Vec<Event>,
        pub associations: Vec<Association>,
        pub imu: Vec<ImuSample>,
        pub map: SceneMap,
        pub trajectory: SplineTrajectory,
        pub params: ModelParams,
    }

    /// Noise-free measurements of a random point or line map.
    pub fn synthetic(
        n_poses: usize,
        n_events: usize,
        n_imu: usize,
        lines: bool,
        params: ModelParams,
        seed: u64,
    ) -> Synthetic {
        let trajectory = small_trajectory(n_poses, 0.1, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
        let mut pt = || {
            Vec3::new(
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.1..0.1),
            )
        };
        let map = if lines {
            SceneMap::from_segments(
                (0..4)
                    .map(|id| MapSegment {
                        id,
                        start: pt(),
                        end: pt(),
                    })
                    .collect(),
            )
        } else {
            SceneMap::from_points((0..10).map(|id| MapPoint { id, position: pt() }).collect())
        };
        let (start, end) = trajectory.domain();
        let k = CameraIntrinsics::default();
        let g = GravityModel::default();
        let mut events = Vec::new();
        let mut associations = Vec::new();
        for i in 0..n_events {
            let t = start + (end - start) * (i as f64 + 0.5) / n_events as f64;
            let pose = trajectory.pose_at(t).unwrap();
            let proj = corrected_projection(&pose, &k, &params);
            let (px, id) = if lines {
                let s = &map.segments[i % map.segments.len()];
                let f: f64 = rng.random_range(0.0..1.0);
                let p = proj.project(&s.start).unwrap();
                let q = proj.project(&s.end).unwrap();
                (p + (q - p) * f, s.id)
            } else {
                let p = &map.points[i % map.points.len()];
                (proj.project(&p.position).unwrap(), p.id)
            };
            events.push(Event::new(t, px.x, px.y, 1));
            associations.push(Association {
                event_index: i,
                primitive_id: id,
                kind: if lines { PrimitiveKind::Line } else { PrimitiveKind::Point },
            });
        }
        let imu = (0..n_imu)
            .map(|j| {
                let t = start + (end - start) * (j as f64 + 0.25) / n_imu as f64;
                let p = predict_imu(&trajectory.derivatives_at(t).unwrap(), &params, &g).unwrap();
                ImuSample::new(t, p.omega, p.accel)
            })
            .collect();
        Synthetic {
            events,
            associations,
            imu,
            map,
            trajectory,
            params,
        }
    }

    pub fn problem_from(s: &Synthetic, traj: SplineTrajectory, params: ModelParams, freeze: FreezeFlags) -> Problem {
        build_problem(ProblemInputs {
            events: &s.events,
            associations: &s.associations,
            imu: &s.imu,
            map: &s.map,
            intrinsics: CameraIntrinsics::default(),
            trajectory: traj,
            params,
            noise: NoiseConfig::default(),
            freeze,
            gravity: GravityModel::default(),
        })
        .unwrap()
    }
}
