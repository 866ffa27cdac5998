//! Synthetic datasets with ground truth: a spline trajectory, a point or line
//! map, events generated geometrically from projections, and IMU samples
//! predicted from the spline.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::estimator::Association;
use crate::geometry::{exp_se3, Mat3, Pose, Twist, Vec3};
use crate::sensors::{
    corrected_projection, predict_imu, CameraIntrinsics, Event, GravityModel, ImuSample, MapPoint,
    MapSegment, ModelParams, PrimitiveKind, SceneMap, Vec2,
};
use crate::trajectory::{KnotGrid, SplineTrajectory, TimedPose, TrajectoryError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("bad simulation spec: {0}")]
    BadSpec(String),
    #[error("no map primitive is visible along the trajectory")]
    NoVisiblePrimitives,
    #[error(transparent)]
    Trajectory(#[from] TrajectoryError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionKind {
    /// Smooth translation and rotation, several frequencies per axis.
    Sinusoidal,
    /// Translation only; the orientation stays at the base orientation.
    TranslationOnly,
    /// `T_i = T_base · exp(i·dt·ξ)`.
    ConstantTwist,
    Static,
}

impl std::str::FromStr for MotionKind {
    type Err = SimError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sinusoidal" => Ok(Self::Sinusoidal),
            "translation_only" => Ok(Self::TranslationOnly),
            "constant_twist" => Ok(Self::ConstantTwist),
            "static" => Ok(Self::Static),
            other => Err(SimError::BadSpec(format!("unknown motion '{other}'"))),
        }
    }
}

impl std::fmt::Display for MotionKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Sinusoidal => "sinusoidal",
            Self::TranslationOnly => "translation_only",
            Self::ConstantTwist => "constant_twist",
            Self::Static => "static",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySpec {
    pub motion: MotionKind,
    /// Seconds of data; the spline domain is `[0, duration)`.
    pub duration: f64,
    pub dt: f64,
    /// Camera height above the map plane (m).
    pub height: f64,
    /// Translation amplitude (m).
    pub translation_amplitude: f64,
    /// Rotation amplitude (rad).
    pub rotation_amplitude: f64,
    /// Base frequency (Hz).
    pub frequency: f64,
    /// Body-frame twist per second, for [`MotionKind::ConstantTwist`].
    pub twist: Twist,
}

impl Default for TrajectorySpec {
    fn default() -> Self {
        Self {
            motion: MotionKind::Sinusoidal,
            duration: 10.0,
            dt: 0.1,
            height: 1.0,
            translation_amplitude: 0.1,
            rotation_amplitude: 10f64.to_radians(),
            frequency: 0.5,
            twist: Twist::new(Vec3::new(0.05, 0.0, 0.0), Vec3::new(0.0, 0.0, 0.2)),
        }
    }
}

impl TrajectorySpec {
    /// Camera looking straight down at the map from `height`.
    pub fn base_pose(&self) -> Pose {
        Pose::new(
            Mat3::from_diagonal(&Vec3::new(1.0, -1.0, -1.0)),
            Vec3::new(0.0, 0.0, self.height),
        )
    }

    fn twist_at(&self, t: f64) -> Twist {
        let w = 2.0 * std::f64::consts::PI * self.frequency;
        let (a, r) = (self.translation_amplitude, self.rotation_amplitude);
        let alpha = Vec3::new(
            a * (w * t).sin(),
            a * (1.3 * w * t + 1.0).sin(),
            0.5 * a * (0.7 * w * t + 2.0).sin(),
        );
        let beta = Vec3::new(
            r * (0.9 * w * t + 0.5).sin(),
            r * (1.1 * w * t + 1.5).sin(),
            r * (0.8 * w * t + 2.5).sin(),
        );
        match self.motion {
            MotionKind::Sinusoidal => Twist::new(alpha, beta),
            MotionKind::TranslationOnly => Twist::new(alpha, Vec3::zeros()),
            MotionKind::ConstantTwist => self.twist.scaled(t),
            MotionKind::Static => Twist::zero(),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [self.duration, self.dt, self.height]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite());
        if !positive {
            return Err(SimError::BadSpec(
                "duration, dt and height must be positive".into(),
            ));
        }
        if self.frequency < 0.0 || !self.frequency.is_finite() {
            return Err(SimError::BadSpec("frequency must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MapSpec {
    /// Points uniform in a box centred on the origin.
    Points { count: usize, half_extent: Vec3 },
    /// A square of four segments in the plane z = 0.
    Square { side: f64 },
}

impl MapSpec {
    pub fn kind(&self) -> PrimitiveKind {
        match self {
            MapSpec::Points { .. } => PrimitiveKind::Point,
            MapSpec::Square { .. } => PrimitiveKind::Line,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub trajectory: TrajectorySpec,
    pub map: MapSpec,
    pub intrinsics: CameraIntrinsics,
    /// Events per second per primitive.
    pub event_rate: f64,
    pub imu_rate: f64,
    /// Ground-truth pose output rate.
    pub groundtruth_rate: f64,
    pub sigma_e: f64,
    pub sigma_omega: f64,
    pub sigma_a: f64,
    /// True θ: biases, map scale and orientation.
    pub params: ModelParams,
    pub seed: u64,
}

impl Default for SimConfig {
    /// 10 s of sinusoidal motion over 100 points at ~1 m depth, ~5·10⁵
    /// events, 1 kHz IMU.
    fn default() -> Self {
        Self {
            trajectory: TrajectorySpec::default(),
            map: MapSpec::Points {
                count: 100,
                half_extent: Vec3::new(0.25, 0.2, 0.1),
            },
            intrinsics: CameraIntrinsics::default(),
            event_rate: 500.0,
            imu_rate: 1000.0,
            groundtruth_rate: 200.0,
            sigma_e: 0.1,
            sigma_omega: 0.03,
            sigma_a: 0.1,
            params: ModelParams::default(),
            seed: 1,
        }
    }
}

impl SimConfig {
    /// The line-map counterpart of the default: a 10 cm square seen from
    /// ~0.35 m.
    pub fn default_lines() -> Self {
        Self {
            trajectory: TrajectorySpec {
                height: 0.35,
                translation_amplitude: 0.03,
                rotation_amplitude: 8f64.to_radians(),
                ..Default::default()
            },
            map: MapSpec::Square { side: 0.1 },
            event_rate: 12_500.0,
            ..Default::default()
        }
    }

    pub fn noiseless(mut self) -> Self {
        self.sigma_e = 0.0;
        self.sigma_omega = 0.0;
        self.sigma_a = 0.0;
        self
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.trajectory.validate()?;
        let rates = [self.event_rate, self.imu_rate, self.groundtruth_rate];
        if !rates.iter().all(|r| *r > 0.0 && r.is_finite()) {
            return Err(SimError::BadSpec("rates must be positive".into()));
        }
        let sigmas = [self.sigma_e, self.sigma_omega, self.sigma_a];
        if !sigmas.iter().all(|s| *s >= 0.0 && s.is_finite()) {
            return Err(SimError::BadSpec("noise levels must be non-negative".into()));
        }
        if !self.params.is_valid() {
            return Err(SimError::BadSpec(format!("invalid true parameters {:?}", self.params)));
        }
        if !self.intrinsics.is_valid() {
            return Err(SimError::BadSpec("invalid intrinsics".into()));
        }
        match &self.map {
            MapSpec::Points { count, half_extent } => {
                if *count == 0 || half_extent.iter().any(|h| *h < 0.0) {
                    return Err(SimError::BadSpec("point map needs count > 0 and a valid box".into()));
                }
            }
            MapSpec::Square { side } => {
                if !(*side > 0.0) {
                    return Err(SimError::BadSpec("square side must be positive".into()));
                }
            }
        }
        Ok(())
    }
}

/// A complete synthetic dataset.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub trajectory: SplineTrajectory,
    pub map: SceneMap,
    pub intrinsics: CameraIntrinsics,
    pub params: ModelParams,
    pub events: Vec<Event>,
    pub associations: Vec<Association>,
    pub imu: Vec<ImuSample>,
    pub groundtruth: Vec<TimedPose>,
    pub mean_scene_depth: f64,
}

// independent random streams, so changing one generator's draws leaves the
// others untouched
const STREAM_MAP: u64 = 1;
const STREAM_EVENTS: u64 = 2;
const STREAM_IMU: u64 = 3;

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Control poses `T_i = T_base · exp(ξ(t_i))` on a grid covering
/// `[0, duration)`.
pub fn gen_trajectory(spec: &TrajectorySpec) -> Result<SplineTrajectory, SimError> {
    spec.validate()?;
    let grid = KnotGrid::covering(0.0, spec.duration, spec.dt);
    let base = spec.base_pose();
    let poses = (0..=grid.n)
        .map(|i| base.compose(&exp_se3(&spec.twist_at(grid.knot_time(i)))))
        .collect();
    Ok(SplineTrajectory::from_grid(&grid, poses)?)
}

pub fn gen_map(spec: &MapSpec, seed: u64) -> SceneMap {
    let mut rng = rng_for(seed, STREAM_MAP);
    match spec {
        MapSpec::Points { count, half_extent } => {
            let mut coord = |h: f64| if h > 0.0 { rng.random_range(-h..=h) } else { 0.0 };
            SceneMap::from_points(
                (0..*count as u64)
                    .map(|id| MapPoint {
                        id,
                        position: Vec3::new(
                            coord(half_extent.x),
                            coord(half_extent.y),
                            coord(half_extent.z),
                        ),
                    })
                    .collect(),
            )
        }
        MapSpec::Square { side } => {
            let h = 0.5 * side;
            let c = [
                Vec3::new(-h, -h, 0.0),
                Vec3::new(h, -h, 0.0),
                Vec3::new(h, h, 0.0),
                Vec3::new(-h, h, 0.0),
            ];
            SceneMap::from_segments(
                (0..4)
                    .map(|k| MapSegment {
                        id: k as u64,
                        start: c[k],
                        end: c[(k + 1) % 4],
                    })
                    .collect(),
            )
        }
    }
}

/// Events drawn uniformly in time per primitive, placed at the corrected
/// projection (a uniform point along the projected segment for lines) plus
/// Gaussian pixel noise. Samples outside the image or behind the camera are
/// discarded. The output is sorted by time and associations are exact.
pub fn gen_events(
    traj: &SplineTrajectory,
    map: &SceneMap,
    intrinsics: &CameraIntrinsics,
    params: &ModelParams,
    rate: f64,
    sigma_e: f64,
    seed: u64,
) -> Result<(Vec<Event>, Vec<Association>), SimError> {
    let kind = map
        .validate()
        .map_err(|e| SimError::BadSpec(e.to_string()))?;
    let mut rng = rng_for(seed, STREAM_EVENTS);
    let noise = Normal::new(0.0, sigma_e).map_err(|e| SimError::BadSpec(e.to_string()))?;
    let (start, end) = traj.domain();
    let per_primitive = (rate * (end - start)).round() as usize;

    let ids: Vec<u64> = match kind {
        PrimitiveKind::Point => map.points.iter().map(|p| p.id).collect(),
        PrimitiveKind::Line => map.segments.iter().map(|s| s.id).collect(),
    };
    let mut samples: Vec<(f64, Vec2, u64, i8)> = Vec::new();
    for (k, id) in ids.iter().enumerate() {
        for _ in 0..per_primitive {
            let t = rng.random_range(start..end);
            let polarity: i8 = if rng.random::<bool>() { 1 } else { -1 };
            let along: f64 = rng.random();
            let n1 = noise.sample(&mut rng);
            let n2 = noise.sample(&mut rng);
            let pose = traj.pose_at(t)?;
            let proj = corrected_projection(&pose, intrinsics, params);
            let px = match kind {
                PrimitiveKind::Point => match proj.project(&map.points[k].position) {
                    Ok(p) => p + Vec2::new(n1, n2),
                    Err(_) => continue,
                },
                PrimitiveKind::Line => {
                    let s = &map.segments[k];
                    let (Ok(p), Ok(q)) = (proj.project(&s.start), proj.project(&s.end)) else {
                        continue;
                    };
                    let d = q - p;
                    let len = d.norm();
                    if len < 1e-9 {
                        continue;
                    }
                    let normal = Vec2::new(-d.y, d.x) / len;
                    p + d * along + normal * n1
                }
            };
            if intrinsics.contains(&px) {
                samples.push((t, px, *id, polarity));
            }
        }
    }
    if samples.is_empty() {
        return Err(SimError::NoVisiblePrimitives);
    }
    samples.sort_by(|a, b| a.0.total_cmp(&b.0));
    let events = samples
        .iter()
        .map(|(t, px, _, p)| Event::new(*t, px.x, px.y, *p))
        .collect();
    let associations = samples
        .iter()
        .enumerate()
        .map(|(i, s)| Association {
            event_index: i,
            primitive_id: s.2,
            kind,
        })
        .collect();
    Ok((events, associations))
}

/// IMU samples at `rate` over the trajectory domain, with biases from
/// `params` and white noise.
pub fn gen_imu(
    traj: &SplineTrajectory,
    params: &ModelParams,
    gravity: &GravityModel,
    rate: f64,
    sigma_omega: f64,
    sigma_a: f64,
    seed: u64,
) -> Result<Vec<ImuSample>, SimError> {
    let mut rng = rng_for(seed, STREAM_IMU);
    let nw = Normal::new(0.0, sigma_omega).map_err(|e| SimError::BadSpec(e.to_string()))?;
    let na = Normal::new(0.0, sigma_a).map_err(|e| SimError::BadSpec(e.to_string()))?;
    let (start, end) = traj.domain();
    let mut out = Vec::new();
    let mut k = 0usize;
    loop {
        let t = start + k as f64 / rate;
        if t >= end {
            break;
        }
        k += 1;
        let p = predict_imu(&traj.derivatives_at(t)?, params, gravity)
            .map_err(|e| SimError::BadSpec(e.to_string()))?;
        let mut noise = |d: &Normal<f64>| Vec3::new(d.sample(&mut rng), d.sample(&mut rng), d.sample(&mut rng));
        let omega = p.omega + noise(&nw);
        let accel = p.accel + noise(&na);
        out.push(ImuSample::new(t, omega, accel));
    }
    Ok(out)
}

/// Mean camera-frame depth of the map primitives (segment midpoints for
/// lines) over poses sampled at 20 Hz, counting only primitives in front of
/// the camera.
pub fn mean_scene_depth(traj: &SplineTrajectory, map: &SceneMap, params: &ModelParams) -> f64 {
    let m2w = params.map_to_world();
    let anchors: Vec<Vec3> = map
        .points
        .iter()
        .map(|p| p.position)
        .chain(map.segments.iter().map(|s| 0.5 * (s.start + s.end)))
        .map(|x| m2w * x)
        .collect();
    let mut sum = 0.0;
    let mut count = 0usize;
    for s in traj.sample(20.0) {
        let rt = s.pose.rotation.transpose();
        for x in &anchors {
            let z = (rt * (x - s.pose.translation)).z;
            if z > 0.0 {
                sum += z;
                count += 1;
            }
        }
    }
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

pub fn simulate(config: &SimConfig) -> Result<SimOutput, SimError> {
    config.validate()?;
    let trajectory = gen_trajectory(&config.trajectory)?;
    let map = gen_map(&config.map, config.seed);
    let (events, associations) = gen_events(
        &trajectory,
        &map,
        &config.intrinsics,
        &config.params,
        config.event_rate,
        config.sigma_e,
        config.seed,
    )?;
    let imu = gen_imu(
        &trajectory,
        &config.params,
        &GravityModel::default(),
        config.imu_rate,
        config.sigma_omega,
        config.sigma_a,
        config.seed,
    )?;
    let groundtruth = trajectory.sample(config.groundtruth_rate);
    let mean_scene_depth = mean_scene_depth(&trajectory, &map, &config.params);
    Ok(SimOutput {
        trajectory,
        map,
        intrinsics: config.intrinsics,
        params: config.params,
        events,
        associations,
        imu,
        groundtruth,
        mean_scene_depth,
    })
}

/// Expresses `pose` in the world frame a tracker would use if it assumed the
/// map parameters `assumed` instead of `truth`.
///
/// With `G = S(assumed) · S(truth)⁻¹ = (σ, R_G)`, the pose `(R_G R, σ R_G t)`
/// sees every map point at `σ` times its true camera-frame position, so all
/// projections are unchanged.
pub fn reframe_pose(pose: &Pose, truth: &ModelParams, assumed: &ModelParams) -> Pose {
    let sigma = assumed.scale / truth.scale;
    let rg = assumed.map_rotation() * truth.map_rotation().transpose();
    Pose::new(rg * pose.rotation, rg * pose.translation * sigma)
}

pub fn reframe_trajectory(
    traj: &SplineTrajectory,
    truth: &ModelParams,
    assumed: &ModelParams,
) -> SplineTrajectory {
    let poses = traj
        .control_poses()
        .iter()
        .map(|p| reframe_pose(p, truth, assumed))
        .collect();
    traj.with_control_poses(poses)
        .expect("same number of control poses")
}

/// Moves every control pose by `T·exp(α, β)` with `|α| = translation` and
/// `|β| = rotation` in uniformly random directions.
pub fn perturb_trajectory(
    traj: &SplineTrajectory,
    translation: f64,
    rotation: f64,
    seed: u64,
) -> SplineTrajectory {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut unit = || loop {
        let v = Vec3::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    };
    let poses = traj
        .control_poses()
        .iter()
        .map(|p| p.retract(&Twist::new(unit() * translation, unit() * rotation)))
        .collect();
    traj.with_control_poses(poses)
        .expect("same number of control poses")
}
