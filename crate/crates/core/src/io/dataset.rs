//! A dataset directory.

use std::path::Path;

use super::formats::*;
use super::IoError;
use crate::estimator::Association;
use crate::sensors::{Event, ImuSample, PrimitiveKind, SceneMap};
use crate::trajectory::TimedPose;

pub const EVENTS_FILE: &str = "events.txt";
pub const IMU_FILE: &str = "imu.txt";
pub const GROUNDTRUTH_FILE: &str = "groundtruth.txt";
pub const CALIB_FILE: &str = "calib.txt";
pub const MAP_POINTS_FILE: &str = "map_points.txt";
pub const MAP_LINES_FILE: &str = "map_lines.txt";
pub const ASSOC_FILE: &str = "assoc.txt";

#[derive(Debug, Clone)]
pub struct Dataset {
    /// Undistorted event pixels.
    pub events: Vec<Event>,
    /// Empty when the directory has no IMU file.
    pub imu: Vec<ImuSample>,
    pub groundtruth: Option<Vec<TimedPose>>,
    pub calibration: Calibration,
    pub map: SceneMap,
    pub associations: Option<Vec<Association>>,
}

impl Dataset {
    /// Loads `dir`. Events, calibration and exactly one map file are
    /// required; the rest is optional. Events are undistorted on load.
    pub fn load(dir: &Path) -> Result<Self, IoError> {
        let calibration = read_calibration(&dir.join(CALIB_FILE))?;
        let mut events = read_events(&dir.join(EVENTS_FILE))?;
        calibration.undistort_events(&mut events);

        let points = dir.join(MAP_POINTS_FILE);
        let lines = dir.join(MAP_LINES_FILE);
        let map = match (points.exists(), lines.exists()) {
            (true, false) => read_map_points(&points)?,
            (false, true) => read_map_lines(&lines)?,
            (true, true) => {
                return Err(IoError::Invalid(format!(
                    "{}: both {MAP_POINTS_FILE} and {MAP_LINES_FILE} present",
                    dir.display()
                )))
            }
            (false, false) => {
                return Err(IoError::Invalid(format!(
                    "{}: no {MAP_POINTS_FILE} or {MAP_LINES_FILE}",
                    dir.display()
                )))
            }
        };
        let kind = map
            .validate()
            .map_err(|e| IoError::Invalid(format!("{}: {e}", dir.display())))?;

        let imu_path = dir.join(IMU_FILE);
        let imu = if imu_path.exists() { read_imu(&imu_path)? } else { Vec::new() };
        let gt_path = dir.join(GROUNDTRUTH_FILE);
        let groundtruth = gt_path.exists().then(|| read_poses(&gt_path)).transpose()?;
        let assoc_path = dir.join(ASSOC_FILE);
        let associations = assoc_path
            .exists()
            .then(|| read_associations(&assoc_path, kind))
            .transpose()?;

        Ok(Self {
            events,
            imu,
            groundtruth,
            calibration,
            map,
            associations,
        })
    }

    /// Writes every present component into `dir`, creating it if needed.
    pub fn save(&self, dir: &Path) -> Result<(), IoError> {
        std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
        write_calibration(&dir.join(CALIB_FILE), &self.calibration)?;
        write_events(&dir.join(EVENTS_FILE), &self.events)?;
        write_imu(&dir.join(IMU_FILE), &self.imu)?;
        match self.map.kind() {
            Some(PrimitiveKind::Line) => super::write_text(
                &dir.join(MAP_LINES_FILE),
                &format_map_lines(&self.map.segments),
            )?,
            _ => super::write_text(
                &dir.join(MAP_POINTS_FILE),
                &format_map_points(&self.map.points),
            )?,
        }
        if let Some(gt) = &self.groundtruth {
            write_poses(&dir.join(GROUNDTRUTH_FILE), gt)?;
        }
        if let Some(a) = &self.associations {
            write_associations(&dir.join(ASSOC_FILE), a)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Pose, Vec3};
    use crate::sensors::{CameraIntrinsics, MapSegment};

    fn sample() -> Dataset {
        Dataset {
            events: vec![Event::new(0.1, 10.5, 20.25, 1), Event::new(0.2, 30.0, 40.0, -1)],
            imu: vec![ImuSample::new(0.1, Vec3::new(0.1, 0.2, 0.3), Vec3::new(0.0, 0.0, 9.81))],
            groundtruth: Some(vec![TimedPose::new(0.1, Pose::from_translation(Vec3::new(0.0, 0.0, 1.0)))]),
            calibration: CameraIntrinsics::default().into(),
            map: SceneMap::from_segments(vec![MapSegment {
                id: 4,
                start: Vec3::zeros(),
                end: Vec3::new(0.1, 0.0, 0.0),
            }]),
            associations: Some(vec![Association {
                event_index: 1,
                primitive_id: 4,
                kind: PrimitiveKind::Line,
            }]),
        }
    }

    #[test]
    fn save_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let d = sample();
        d.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back.events, d.events);
        assert_eq!(back.imu, d.imu);
        assert_eq!(back.map, d.map);
        assert_eq!(back.associations, d.associations);
        assert_eq!(back.calibration, d.calibration);
        assert_eq!(back.groundtruth.unwrap()[0].pose, d.groundtruth.unwrap()[0].pose);
    }

    #[test]
    fn missing_and_conflicting_maps() {
        let dir = tempfile::tempdir().unwrap();
        sample().save(dir.path()).unwrap();
        std::fs::write(dir.path().join(MAP_POINTS_FILE), "0 0 0 1\n").unwrap();
        assert!(Dataset::load(dir.path()).is_err());
        std::fs::remove_file(dir.path().join(MAP_POINTS_FILE)).unwrap();
        std::fs::remove_file(dir.path().join(MAP_LINES_FILE)).unwrap();
        assert!(Dataset::load(dir.path()).is_err());
    }

    #[test]
    fn distorted_events_are_undistorted_on_load() {
        let dir = tempfile::tempdir().unwrap();
        let mut d = sample();
        d.calibration.distortion.k1 = -0.2;
        d.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        let expected = d.calibration.undistort_pixel(d.events[0].pixel());
        assert!((back.events[0].pixel() - expected).norm() < 1e-9);
        assert!((back.events[0].pixel() - d.events[0].pixel()).norm() > 1e-3);
    }
}
