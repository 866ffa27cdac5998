//! Plain-text dataset formats.
//!
//! One whitespace-separated record per line; blank lines and `#` comments
//! are ignored. Numbers are written with 12 significant digits. Quaternions
//! are scalar-last (`qx qy qz qw`).
//!
//! | file | record |
//! |------|--------|
//! | `events.txt` | `t x y p`, `p ∈ {0, 1}` |
//! | `imu.txt` | `t ax ay az wx wy wz` |
//! | `groundtruth.txt`, `trajectory.txt`, `control_poses.txt` | `t px py pz qx qy qz qw` |
//! | `calib.txt` | `fx fy cx cy k1 k2 p1 p2 k3 [width height]` |
//! | `map_points.txt` | `id X Y Z` |
//! | `map_lines.txt` | `id Xs Ys Zs Xe Ye Ze` |
//! | `assoc.txt` | `event_index primitive_id` |

mod config;
mod dataset;
mod formats;

pub use config::{
    format_key_values, params_from_key_values, params_to_key_values, parse_key_values,
    read_params, write_key_values, write_params, KeyValues,
};
pub use dataset::{
    Dataset, ASSOC_FILE, CALIB_FILE, EVENTS_FILE, GROUNDTRUTH_FILE, IMU_FILE, MAP_LINES_FILE,
    MAP_POINTS_FILE,
};
pub use formats::*;

use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}: timestamp decreases")]
    NonMonotoneTimestamp { line: usize },
    #[error("line {line}: quaternion norm {norm} is not 1")]
    NonUnitQuaternion { line: usize, norm: f64 },
    #[error("{0}")]
    Invalid(String),
}

impl IoError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    /// Prefixes parse errors with the file they came from.
    pub fn in_file(self, path: &Path) -> Self {
        match self {
            IoError::Io { .. } => self,
            other => IoError::Invalid(format!("{}: {other}", path.display())),
        }
    }
}

/// Formats like C's `%.12g`.
pub fn fmt12(x: f64) -> String {
    fmt_g(x, 12)
}

fn fmt_g(x: f64, precision: usize) -> String {
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    if !x.is_finite() {
        return if x.is_nan() {
            "nan".into()
        } else if x > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        };
    }
    let sci = format!("{:.*e}", precision - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    if exp < -4 || exp >= precision as i32 {
        let m = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (precision as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

pub(crate) fn read_text(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))
}

pub(crate) fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    std::fs::write(path, text).map_err(|e| IoError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twelve_significant_digits() {
        assert_eq!(fmt12(0.0), "0");
        assert_eq!(fmt12(1.0), "1");
        assert_eq!(fmt12(-2.5), "-2.5");
        assert_eq!(fmt12(0.003811), "0.003811");
        assert_eq!(fmt12(1.0 / 3.0), "0.333333333333");
        assert_eq!(fmt12(123456.789), "123456.789");
        assert_eq!(fmt12(1e-7), "1e-07");
        assert_eq!(fmt12(1.5e20), "1.5e+20");
        assert_eq!(fmt12(9.81), "9.81");
        assert_eq!(fmt12(0.0001), "0.0001");
        assert_eq!(fmt12(999999999999.9), "1e+12");
        assert_eq!(fmt12(std::f64::consts::PI), "3.14159265359");
    }

    #[test]
    fn fmt_round_trip_precision() {
        for &x in &[1.0 / 7.0, -12345.678901234, 6.02214076e23, 1.602e-19, 96.0] {
            let y: f64 = fmt12(x).parse().unwrap();
            assert!(((y - x) / x).abs() < 1e-11, "{x} {y}");
        }
    }
}
