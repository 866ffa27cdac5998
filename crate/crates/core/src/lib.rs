//! Continuous-time visual-inertial trajectory estimation for event cameras.
//!
//! The trajectory is a cumulative cubic B-spline on SE(3). Per-event
//! reprojection (point maps) or point-to-segment (line maps) residuals are
//! fused with gyroscope and accelerometer residuals into one weighted
//! least-squares objective over the control poses, the IMU biases, the map
//! scale and the map's roll/pitch relative to gravity.
//!
//! Modules, bottom-up:
//!
//! - [`geometry`]: SO(3)/SE(3) exp/log, [`Pose`], [`Twist`]
//! - [`trajectory`]: spline evaluation, temporal derivatives, fitting
//! - [`sensors`]: IMU prediction, projection, visual residuals
//! - [`estimator`]: problem assembly, objective, Jacobian, Levenberg-Marquardt
//! - [`simulator`]: synthetic datasets with ground truth
//! - [`io`]: text formats on disk
//! - [`metrics`]: trajectory alignment and error statistics

pub mod estimator;
pub mod geometry;
pub mod io;
mod linalg;
pub mod metrics;
pub mod sensors;
pub mod simulator;
pub mod trajectory;

pub use geometry::{Pose, Twist};
pub use sensors::{CameraIntrinsics, Event, ImuSample, ModelParams, SceneMap};
pub use trajectory::{SplineTrajectory, TimedPose};
