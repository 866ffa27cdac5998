//! Measurement models: IMU prediction from the spline, perspective projection
//! of map primitives under the map similarity correction, and the two visual
//! residuals.

use nalgebra::Vector2;
use thiserror::Error;

use crate::geometry::{rot_x, rot_y, vee, GeometryError, Mat3, Pose, Vec3};
use crate::trajectory::PoseWithDerivatives;

pub type Vec2 = Vector2<f64>;

/// Camera-frame depth at or below which a point counts as behind the camera.
pub const DEPTH_EPSILON: f64 = 1e-6;

/// Projected segments shorter than this (pixels) are degenerate.
pub const MIN_SEGMENT_LENGTH: f64 = 1e-9;

pub const STANDARD_GRAVITY: f64 = 9.81;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SensorError {
    #[error("point behind camera (depth {depth:.3e} m)")]
    BehindCamera { depth: f64 },
    #[error("projected segment endpoints coincide")]
    DegenerateSegment,
    #[error("invalid map: {0}")]
    InvalidMap(String),
    #[error("invalid model parameters: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
}

/// A brightness-change event at an undistorted pixel location.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub t: f64,
    pub x: f64,
    pub y: f64,
    /// +1 or -1. Carried through but unused by the residuals.
    pub polarity: i8,
}

impl Event {
    pub fn new(t: f64, x: f64, y: f64, polarity: i8) -> Self {
        Self { t, x, y, polarity }
    }

    pub fn pixel(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

/// Gyroscope (rad/s) and accelerometer specific force (m/s²) at time `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuSample {
    pub t: f64,
    pub omega: Vec3,
    pub accel: Vec3,
}

impl ImuSample {
    pub const MAX_ACCEL: f64 = 160.0;
    pub const MAX_OMEGA: f64 = 35.0;

    pub fn new(t: f64, omega: Vec3, accel: Vec3) -> Self {
        Self { t, omega, accel }
    }

    pub fn is_plausible(&self) -> bool {
        self.accel.norm() < Self::MAX_ACCEL && self.omega.norm() < Self::MAX_OMEGA
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapPoint {
    pub id: u64,
    pub position: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MapSegment {
    pub id: u64,
    pub start: Vec3,
    pub end: Vec3,
}

impl MapSegment {
    /// Endpoints in lexicographic order, so that residuals do not depend on
    /// which endpoint was listed first.
    pub fn canonical_endpoints(&self) -> (Vec3, Vec3) {
        let key = |v: &Vec3| [v.x, v.y, v.z];
        if key(&self.end)
            .partial_cmp(&key(&self.start))
            .is_some_and(|o| o.is_lt())
        {
            (self.end, self.start)
        } else {
            (self.start, self.end)
        }
    }

    pub fn swapped(&self) -> Self {
        Self {
            id: self.id,
            start: self.end,
            end: self.start,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PrimitiveKind {
    Point,
    Line,
}

/// A map of 3D points or of 3D line segments, in map coordinates.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneMap {
    pub points: Vec<MapPoint>,
    pub segments: Vec<MapSegment>,
}

impl SceneMap {
    pub fn from_points(points: Vec<MapPoint>) -> Self {
        Self {
            points,
            segments: Vec::new(),
        }
    }

    pub fn from_segments(segments: Vec<MapSegment>) -> Self {
        Self {
            points: Vec::new(),
            segments,
        }
    }

    pub fn kind(&self) -> Option<PrimitiveKind> {
        match (self.points.is_empty(), self.segments.is_empty()) {
            (false, true) => Some(PrimitiveKind::Point),
            (true, false) => Some(PrimitiveKind::Line),
            _ => None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len() + self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn validate(&self) -> Result<PrimitiveKind, SensorError> {
        let kind = self.kind().ok_or_else(|| {
            SensorError::InvalidMap("exactly one of points or segments must be non-empty".into())
        })?;
        let mut ids: Vec<u64> = match kind {
            PrimitiveKind::Point => self.points.iter().map(|p| p.id).collect(),
            PrimitiveKind::Line => self.segments.iter().map(|s| s.id).collect(),
        };
        ids.sort_unstable();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(SensorError::InvalidMap(format!("duplicate id {}", w[0])));
        }
        if let Some(s) = self.segments.iter().find(|s| s.start == s.end) {
            return Err(SensorError::InvalidMap(format!(
                "segment {} has coincident endpoints",
                s.id
            )));
        }
        Ok(kind)
    }
}

/// Pinhole intrinsics of an undistorted camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Default for CameraIntrinsics {
    /// A 240x180 sensor with a ~62° horizontal field of view.
    fn default() -> Self {
        Self {
            fx: 200.0,
            fy: 200.0,
            cx: 120.0,
            cy: 90.0,
            width: 240,
            height: 180,
        }
    }
}

impl CameraIntrinsics {
    pub fn matrix(&self) -> Mat3 {
        Mat3::new(self.fx, 0.0, self.cx, 0.0, self.fy, self.cy, 0.0, 0.0, 1.0)
    }

    pub fn contains(&self, px: &Vec2) -> bool {
        px.x >= 0.0 && px.y >= 0.0 && px.x < self.width as f64 && px.y < self.height as f64
    }

    pub fn is_valid(&self) -> bool {
        self.fx > 0.0 && self.fy > 0.0 && self.fx.is_finite() && self.fy.is_finite()
    }
}

/// Estimated model parameters: IMU biases, map scale, and map roll/pitch
/// relative to gravity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub gyro_bias: Vec3,
    pub accel_bias: Vec3,
    pub scale: f64,
    /// Roll `alpha` and pitch `beta` (rad).
    pub orientation: [f64; 2],
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            gyro_bias: Vec3::zeros(),
            accel_bias: Vec3::zeros(),
            scale: 1.0,
            orientation: [0.0, 0.0],
        }
    }
}

impl ModelParams {
    /// `R(o) = R_x(alpha) · R_y(beta)`.
    pub fn map_rotation(&self) -> Mat3 {
        rot_x(self.orientation[0]) * rot_y(self.orientation[1])
    }

    /// Linear part of the map-to-world similarity, `s · R(o)`.
    pub fn map_to_world(&self) -> Mat3 {
        self.map_rotation() * self.scale
    }

    pub fn is_valid(&self) -> bool {
        let half_pi = std::f64::consts::FRAC_PI_2;
        self.scale > 0.0
            && self.scale.is_finite()
            && self.orientation.iter().all(|a| a.abs() < half_pi)
            && self.gyro_bias.iter().chain(self.accel_bias.iter()).all(|v| v.is_finite())
    }

    pub fn validate(&self) -> Result<(), SensorError> {
        if self.is_valid() {
            Ok(())
        } else {
            Err(SensorError::InvalidParams(format!("{self:?}")))
        }
    }
}

/// Gravity in the z-up world frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GravityModel {
    pub g_w: Vec3,
}

impl Default for GravityModel {
    fn default() -> Self {
        Self {
            g_w: Vec3::new(0.0, 0.0, STANDARD_GRAVITY),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImuPrediction {
    pub omega: Vec3,
    pub accel: Vec3,
}

/// Body-frame angular velocity `vee(RᵀṘ) + b_ω` and specific force
/// `Rᵀ(s̈ + g) + b_a` predicted from a spline point.
pub fn predict_imu(
    d: &PoseWithDerivatives,
    params: &ModelParams,
    gravity: &GravityModel,
) -> Result<ImuPrediction, SensorError> {
    let rt = d.pose.rotation.transpose();
    let omega = vee(&(rt * d.rotation_rate()))? + params.gyro_bias;
    let accel = rt * (d.acceleration() + gravity.g_w) + params.accel_bias;
    Ok(ImuPrediction { omega, accel })
}

/// Perspective projection of a camera-frame point.
#[inline]
fn project_camera_point(k: &CameraIntrinsics, pc: &Vec3) -> Result<Vec2, SensorError> {
    if !(pc.z > DEPTH_EPSILON) {
        return Err(SensorError::BehindCamera { depth: pc.z });
    }
    Ok(Vec2::new(k.fx * pc.x / pc.z + k.cx, k.fy * pc.y / pc.z + k.cy))
}

/// Plain pinhole projection of a world point seen from camera pose `t_ws`
/// (camera-to-world).
pub fn pinhole_project(k: &CameraIntrinsics, t_ws: &Pose, x_w: &Vec3) -> Result<Vec2, SensorError> {
    let pc = t_ws.rotation.transpose() * (x_w - t_ws.translation);
    project_camera_point(k, &pc)
}

/// Projection of map-frame points: `K [I|0] T_ws⁻¹ S(s, R(o)) X`.
#[derive(Debug, Clone, Copy)]
pub struct Projection {
    pub pose: Pose,
    pub intrinsics: CameraIntrinsics,
    pub map_to_world: Mat3,
}

pub fn corrected_projection(t_ws: &Pose, k: &CameraIntrinsics, params: &ModelParams) -> Projection {
    Projection {
        pose: *t_ws,
        intrinsics: *k,
        map_to_world: params.map_to_world(),
    }
}

impl Projection {
    pub fn project(&self, x_map: &Vec3) -> Result<Vec2, SensorError> {
        pinhole_project(&self.intrinsics, &self.pose, &(self.map_to_world * x_map))
    }

    /// Camera-frame depth of a map point.
    pub fn depth(&self, x_map: &Vec3) -> f64 {
        let pc = self.pose.rotation.transpose() * (self.map_to_world * x_map - self.pose.translation);
        pc.z
    }
}

/// Reprojection error `e_k - ê_k` in pixels.
pub fn point_residual(event: &Event, x_map: &Vec3, projection: &Projection) -> Result<Vec2, SensorError> {
    Ok(event.pixel() - projection.project(x_map)?)
}

/// Distance from `e` to the 2D segment `p`–`q`, measured to the nearest
/// endpoint when the perpendicular foot falls outside the segment.
pub fn segment_distance(e: &Vec2, p: &Vec2, q: &Vec2) -> f64 {
    let d = q - p;
    let len2 = d.norm_squared();
    if len2 == 0.0 {
        return (e - p).norm();
    }
    let tau = ((e - p).dot(&d) / len2).clamp(0.0, 1.0);
    (e - (p + d * tau)).norm()
}

/// [`segment_distance`] signed by the side of the directed line `p → q` the
/// point lies on (positive to the left).
pub fn signed_segment_distance(e: &Vec2, p: &Vec2, q: &Vec2) -> Result<f64, SensorError> {
    let d = q - p;
    if d.norm() < MIN_SEGMENT_LENGTH {
        return Err(SensorError::DegenerateSegment);
    }
    let rel = e - p;
    let cross = d.x * rel.y - d.y * rel.x;
    let dist = segment_distance(e, p, q);
    Ok(if cross < 0.0 { -dist } else { dist })
}

/// Point-to-segment residual of an event against a projected map segment.
///
/// The magnitude is the clamped Euclidean distance to the projected segment;
/// the sign tells the side of the line, which keeps the residual
/// differentiable where the event crosses the segment. The segment direction
/// comes from [`MapSegment::canonical_endpoints`], so swapping the endpoints
/// leaves the result unchanged.
pub fn line_residual(event: &Event, segment: &MapSegment, projection: &Projection) -> Result<f64, SensorError> {
    let (a, b) = segment.canonical_endpoints();
    let p = projection.project(&a)?;
    let q = projection.project(&b)?;
    signed_segment_distance(&event.pixel(), &p, &q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{exp_se3, exp_so3, Mat4, Twist};
    use crate::trajectory::SplineTrajectory;
    use proptest::prelude::*;

    fn static_point(pose: Pose) -> PoseWithDerivatives {
        PoseWithDerivatives {
            pose,
            first: Mat4::zeros(),
            second: Mat4::zeros(),
        }
    }

    fn unit_k() -> CameraIntrinsics {
        CameraIntrinsics {
            fx: 1.0,
            fy: 1.0,
            cx: 0.0,
            cy: 0.0,
            width: 100,
            height: 100,
        }
    }

    #[test]
    fn imu_static() {
        let g = GravityModel::default();
        let p = predict_imu(&static_point(Pose::identity()), &ModelParams::default(), &g).unwrap();
        assert_eq!(p.omega, Vec3::zeros());
        assert_eq!(p.accel, Vec3::new(0.0, 0.0, 9.81));

        let params = ModelParams {
            gyro_bias: Vec3::new(0.01, 0.0, 0.0),
            ..Default::default()
        };
        let p = predict_imu(&static_point(Pose::identity()), &params, &g).unwrap();
        assert_eq!(p.omega, Vec3::new(0.01, 0.0, 0.0));
    }

    #[test]
    fn imu_gravity_consistency() {
        let r = exp_so3(&Vec3::new(0.3, -0.4, 1.2));
        let params = ModelParams {
            accel_bias: Vec3::new(0.1, 0.2, -0.3),
            ..Default::default()
        };
        let p = predict_imu(&static_point(Pose::from_rotation(r)), &params, &GravityModel::default()).unwrap();
        let expected = r.transpose() * Vec3::new(0.0, 0.0, 9.81) + params.accel_bias;
        assert!((p.accel - expected).amax() < 1e-15);
    }

    #[test]
    fn imu_bias_additivity() {
        let xi = Twist::new(Vec3::new(0.2, 0.1, -0.1), Vec3::new(0.1, 0.3, -0.2));
        let poses = (0..6).map(|i| exp_se3(&xi.scaled(i as f64))).collect();
        let traj = SplineTrajectory::new(0.0, 0.1, poses).unwrap();
        let d = traj.derivatives_at(0.234).unwrap();
        let g = GravityModel::default();
        let zero = predict_imu(&d, &ModelParams::default(), &g).unwrap();
        let params = ModelParams {
            gyro_bias: Vec3::new(0.01, -0.02, 0.03),
            accel_bias: Vec3::new(-0.1, 0.2, 0.05),
            ..Default::default()
        };
        let biased = predict_imu(&d, &params, &g).unwrap();
        assert_eq!(biased.omega, zero.omega + params.gyro_bias);
        assert_eq!(biased.accel, zero.accel + params.accel_bias);
        // constant twist: body rate is beta / dt
        assert!((zero.omega - xi.beta / 0.1).amax() < 1e-9);
    }

    #[test]
    fn projection_examples() {
        let p = corrected_projection(&Pose::identity(), &unit_k(), &ModelParams::default());
        assert_eq!(p.project(&Vec3::new(0.0, 0.0, 1.0)).unwrap(), Vec2::zeros());

        let k = CameraIntrinsics {
            fx: 100.0,
            fy: 100.0,
            cx: 120.0,
            cy: 90.0,
            width: 240,
            height: 180,
        };
        let p = corrected_projection(&Pose::identity(), &k, &ModelParams::default());
        assert_eq!(p.project(&Vec3::new(1.0, 1.0, 2.0)).unwrap(), Vec2::new(170.0, 140.0));

        let scaled = ModelParams {
            scale: 2.0,
            ..Default::default()
        };
        let p2 = corrected_projection(&Pose::identity(), &k, &scaled);
        assert_eq!(p2.project(&Vec3::new(1.0, 1.0, 2.0)).unwrap(), Vec2::new(170.0, 140.0));
        // away from the camera centre the scale does matter
        let cam = Pose::from_translation(Vec3::new(0.0, 0.0, -1.0));
        let a = corrected_projection(&cam, &k, &ModelParams::default())
            .project(&Vec3::new(1.0, 1.0, 2.0))
            .unwrap();
        let b = corrected_projection(&cam, &k, &scaled)
            .project(&Vec3::new(1.0, 1.0, 2.0))
            .unwrap();
        assert!((a - b).norm() > 1.0);

        let behind = p.project(&Vec3::new(0.0, 0.0, -1.0));
        assert!(matches!(behind, Err(SensorError::BehindCamera { .. })));
    }

    #[test]
    fn point_residual_examples() {
        let p = corrected_projection(&Pose::identity(), &unit_k(), &ModelParams::default());
        let x = Vec3::new(0.5, -0.25, 1.0);
        let at = Event::new(0.0, 0.5, -0.25, 1);
        assert_eq!(point_residual(&at, &x, &p).unwrap(), Vec2::zeros());
        let off = Event::new(0.0, 0.8, -0.65, 1);
        let r = point_residual(&off, &x, &p).unwrap();
        assert!((r - Vec2::new(0.3, -0.4)).norm() < 1e-15);
    }

    #[test]
    fn line_residual_examples() {
        let p = corrected_projection(&Pose::identity(), &unit_k(), &ModelParams::default());
        let seg = MapSegment {
            id: 0,
            start: Vec3::new(0.0, 0.0, 1.0),
            end: Vec3::new(10.0, 0.0, 1.0),
        };
        let r = |x, y| line_residual(&Event::new(0.0, x, y, 1), &seg, &p).unwrap();
        assert_eq!(r(4.0, 0.0), 0.0);
        assert_eq!(r(5.0, 2.0), 2.0);
        assert_eq!(r(13.0, 4.0), 5.0);
        assert_eq!(r(5.0, -2.0), -2.0);
        let ev = Event::new(0.0, 3.3, 1.7, 1);
        assert_eq!(
            line_residual(&ev, &seg, &p).unwrap(),
            line_residual(&ev, &seg.swapped(), &p).unwrap()
        );

        let point_like = MapSegment {
            id: 1,
            start: Vec3::new(0.0, 0.0, 1.0),
            end: Vec3::new(0.0, 0.0, 2.0),
        };
        assert!(matches!(
            line_residual(&ev, &point_like, &p),
            Err(SensorError::DegenerateSegment)
        ));
    }

    #[test]
    fn map_validation() {
        assert!(SceneMap::default().validate().is_err());
        let pts = SceneMap::from_points(vec![
            MapPoint { id: 1, position: Vec3::zeros() },
            MapPoint { id: 1, position: Vec3::x() },
        ]);
        assert!(pts.validate().is_err());
        let seg = SceneMap::from_segments(vec![MapSegment {
            id: 0,
            start: Vec3::x(),
            end: Vec3::x(),
        }]);
        assert!(seg.validate().is_err());
    }

    proptest! {
        #[test]
        fn identity_correction_is_plain_pinhole(
            x in -2.0..2.0f64, y in -2.0..2.0f64, z in 0.5..3.0f64,
            a in -1.0..1.0f64, b in -1.0..1.0f64, c in -1.0..1.0f64,
        ) {
            let pose = exp_se3(&Twist::new(Vec3::new(a, b, c) * 0.1, Vec3::new(c, a, b) * 0.2));
            let k = CameraIntrinsics::default();
            let xw = Vec3::new(x, y, z);
            let corrected = corrected_projection(&pose, &k, &ModelParams::default()).project(&xw);
            let plain = pinhole_project(&k, &pose, &xw);
            match (corrected, plain) {
                (Ok(u), Ok(v)) => prop_assert_eq!(u, v),
                (Err(_), Err(_)) => {}
                _ => prop_assert!(false),
            }
        }

        #[test]
        fn segment_swap_invariance(
            px in -50.0..50.0f64, py in -50.0..50.0f64, qx in -50.0..50.0f64, qy in -50.0..50.0f64,
            ex in -80.0..80.0f64, ey in -80.0..80.0f64,
        ) {
            let p = Vec2::new(px, py);
            let q = Vec2::new(qx, qy);
            let e = Vec2::new(ex, ey);
            prop_assert!((segment_distance(&e, &p, &q) - segment_distance(&e, &q, &p)).abs() < 1e-9);
        }
    }
}
