//! `key = value` files: run configuration, parameter files, run summaries.

use std::fmt::Write as _;
use std::path::Path;

use super::{fmt12, read_text, write_text, IoError};
use crate::geometry::Vec3;
use crate::sensors::ModelParams;

/// Ordered `key = value` pairs with the line each came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: Vec<(String, String, usize)>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.push((key.into(), value.into(), 0));
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entries.iter().map(|(k, v, _)| (k.as_str(), v.as_str()))
    }

    /// The last value given for `key`.
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|(k, _, _)| k == key)
            .map(|(_, v, _)| v.as_str())
    }

    fn line_of(&self, key: &str) -> usize {
        self.entries
            .iter()
            .rev()
            .find(|(k, _, _)| k == key)
            .map_or(0, |e| e.2)
    }

    fn invalid(&self, key: &str, what: &str) -> IoError {
        IoError::Parse {
            line: self.line_of(key),
            column: 1,
            message: format!("'{key}' must be {what}"),
        }
    }

    pub fn get_f64(&self, key: &str) -> Result<Option<f64>, IoError> {
        self.get(key)
            .map(|v| {
                v.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| self.invalid(key, "a number"))
            })
            .transpose()
    }

    pub fn get_floats(&self, key: &str, n: usize) -> Result<Option<Vec<f64>>, IoError> {
        self.get(key)
            .map(|v| {
                let xs: Option<Vec<f64>> = v
                    .split(|c: char| c.is_ascii_whitespace() || c == ',')
                    .filter(|s| !s.is_empty())
                    .map(|s| s.parse::<f64>().ok().filter(|x| x.is_finite()))
                    .collect();
                xs.filter(|xs| xs.len() == n)
                    .ok_or_else(|| self.invalid(key, &format!("{n} numbers")))
            })
            .transpose()
    }

    pub fn get_u64(&self, key: &str) -> Result<Option<u64>, IoError> {
        self.get(key)
            .map(|v| v.parse::<u64>().map_err(|_| self.invalid(key, "a non-negative integer")))
            .transpose()
    }

    pub fn get_bool(&self, key: &str) -> Result<Option<bool>, IoError> {
        self.get(key)
            .map(|v| match v {
                "true" | "1" | "yes" => Ok(true),
                "false" | "0" | "no" => Ok(false),
                _ => Err(self.invalid(key, "true or false")),
            })
            .transpose()
    }

    /// Fails on the first key not in `known`.
    pub fn reject_unknown(&self, known: &[&str]) -> Result<(), IoError> {
        for (k, _, line) in &self.entries {
            if !known.contains(&k.as_str()) {
                return Err(IoError::Parse {
                    line: *line,
                    column: 1,
                    message: format!("unknown key '{k}'"),
                });
            }
        }
        Ok(())
    }
}

pub fn parse_key_values(text: &str) -> Result<KeyValues, IoError> {
    let mut out = KeyValues::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((k, v)) = line.split_once('=') else {
            return Err(IoError::Parse {
                line: i + 1,
                column: 1,
                message: "expected 'key = value'".into(),
            });
        };
        let k = k.trim();
        if k.is_empty() || k.contains(char::is_whitespace) {
            return Err(IoError::Parse {
                line: i + 1,
                column: 1,
                message: format!("invalid key '{k}'"),
            });
        }
        out.entries.push((k.to_string(), v.trim().to_string(), i + 1));
    }
    Ok(out)
}

pub fn format_key_values(kv: &KeyValues) -> String {
    let mut s = String::new();
    for (k, v) in kv.iter() {
        let _ = writeln!(s, "{k} = {v}");
    }
    s
}

pub fn write_key_values(path: &Path, kv: &KeyValues) -> Result<(), IoError> {
    write_text(path, &format_key_values(kv))
}

fn fmt_vec3(v: &Vec3) -> String {
    format!("{} {} {}", fmt12(v.x), fmt12(v.y), fmt12(v.z))
}

const PARAM_KEYS: [&str; 5] = ["gyro_bias", "accel_bias", "scale", "roll", "pitch"];

pub fn params_to_key_values(p: &ModelParams) -> KeyValues {
    let mut kv = KeyValues::new();
    kv.push("gyro_bias", fmt_vec3(&p.gyro_bias));
    kv.push("accel_bias", fmt_vec3(&p.accel_bias));
    kv.push("scale", fmt12(p.scale));
    kv.push("roll", fmt12(p.orientation[0]));
    kv.push("pitch", fmt12(p.orientation[1]));
    kv
}

/// Reads model parameters; missing keys keep their defaults. Angles in rad.
pub fn params_from_key_values(kv: &KeyValues) -> Result<ModelParams, IoError> {
    kv.reject_unknown(&PARAM_KEYS)?;
    let mut p = ModelParams::default();
    if let Some(v) = kv.get_floats("gyro_bias", 3)? {
        p.gyro_bias = Vec3::from_column_slice(&v);
    }
    if let Some(v) = kv.get_floats("accel_bias", 3)? {
        p.accel_bias = Vec3::from_column_slice(&v);
    }
    if let Some(s) = kv.get_f64("scale")? {
        p.scale = s;
    }
    if let Some(a) = kv.get_f64("roll")? {
        p.orientation[0] = a;
    }
    if let Some(b) = kv.get_f64("pitch")? {
        p.orientation[1] = b;
    }
    p.validate().map_err(|e| IoError::Invalid(e.to_string()))?;
    Ok(p)
}

pub fn read_params(path: &Path) -> Result<ModelParams, IoError> {
    parse_key_values(&read_text(path)?)
        .and_then(|kv| params_from_key_values(&kv))
        .map_err(|e| e.in_file(path))
}

pub fn write_params(path: &Path, p: &ModelParams) -> Result<(), IoError> {
    let text = format!(
        "# angles in rad\n{}",
        format_key_values(&params_to_key_values(p))
    );
    write_text(path, &text)
}
