//! `ctvio simulate`

use std::path::Path;

use ctvio::geometry::{Twist, Vec3};
use ctvio::io::{self, fmt12, Calibration, Dataset, KeyValues};
use ctvio::simulator::{simulate, MapSpec, SimConfig};

use crate::error::{config_value, CliError, CliResult};

pub const KEYS: &[&str] = &[
    "preset",
    "motion",
    "duration",
    "dt",
    "height",
    "translation_amplitude",
    "rotation_amplitude_deg",
    "frequency",
    "twist",
    "map",
    "point_count",
    "half_extent",
    "square_side",
    "event_rate",
    "imu_rate",
    "groundtruth_rate",
    "sigma_e",
    "sigma_omega",
    "sigma_a",
    "gyro_bias",
    "accel_bias",
    "scale",
    "roll_deg",
    "pitch_deg",
    "seed",
    "fx",
    "fy",
    "cx",
    "cy",
    "image_width",
    "image_height",
];

pub const CONTROL_POSES_TRUE_FILE: &str = "control_poses_true.txt";
pub const PARAMS_TRUE_FILE: &str = "params_true.txt";
pub const SIM_INFO_FILE: &str = "sim_info.txt";

fn vec3(v: Vec<f64>) -> Vec3 {
    Vec3::new(v[0], v[1], v[2])
}

/// Builds a simulator configuration from `key = value` settings over the
/// chosen preset.
pub fn sim_config(kv: &KeyValues) -> CliResult<SimConfig> {
    config_value(kv.reject_unknown(KEYS))?;
    let mut c = match kv.get("preset").unwrap_or("points") {
        "points" => SimConfig::default(),
        "lines" => SimConfig::default_lines(),
        other => return Err(CliError::config(format!("unknown preset '{other}' (points, lines)"))),
    };
    let f = |k: &str| config_value(kv.get_f64(k));
    let t = &mut c.trajectory;
    if let Some(m) = kv.get("motion") {
        t.motion = m.parse().map_err(|e: ctvio::simulator::SimError| CliError::config(e.to_string()))?;
    }
    if let Some(v) = f("duration")? {
        t.duration = v;
    }
    if let Some(v) = f("dt")? {
        t.dt = v;
    }
    if let Some(v) = f("height")? {
        t.height = v;
    }
    if let Some(v) = f("translation_amplitude")? {
        t.translation_amplitude = v;
    }
    if let Some(v) = f("rotation_amplitude_deg")? {
        t.rotation_amplitude = v.to_radians();
    }
    if let Some(v) = f("frequency")? {
        t.frequency = v;
    }
    if let Some(v) = config_value(kv.get_floats("twist", 6))? {
        t.twist = Twist::new(Vec3::new(v[0], v[1], v[2]), Vec3::new(v[3], v[4], v[5]));
    }

    let map_kind = kv.get("map").map(str::to_string);
    match map_kind.as_deref() {
        None => {}
        Some("points") if !matches!(c.map, MapSpec::Points { .. }) => {
            c.map = MapSpec::Points {
                count: 100,
                half_extent: Vec3::new(0.25, 0.2, 0.1),
            }
        }
        Some("square") if !matches!(c.map, MapSpec::Square { .. }) => c.map = MapSpec::Square { side: 0.1 },
        Some("points" | "square") => {}
        Some(other) => return Err(CliError::config(format!("unknown map '{other}' (points, square)"))),
    }
    match &mut c.map {
        MapSpec::Points { count, half_extent } => {
            if let Some(n) = config_value(kv.get_u64("point_count"))? {
                *count = n as usize;
            }
            if let Some(h) = config_value(kv.get_floats("half_extent", 3))? {
                *half_extent = vec3(h);
            }
        }
        MapSpec::Square { side } => {
            if let Some(s) = f("square_side")? {
                *side = s;
            }
        }
    }

    for (key, slot) in [
        ("event_rate", &mut c.event_rate),
        ("imu_rate", &mut c.imu_rate),
        ("groundtruth_rate", &mut c.groundtruth_rate),
        ("sigma_e", &mut c.sigma_e),
        ("sigma_omega", &mut c.sigma_omega),
        ("sigma_a", &mut c.sigma_a),
        ("scale", &mut c.params.scale),
        ("fx", &mut c.intrinsics.fx),
        ("fy", &mut c.intrinsics.fy),
        ("cx", &mut c.intrinsics.cx),
        ("cy", &mut c.intrinsics.cy),
    ] {
        if let Some(v) = config_value(kv.get_f64(key))? {
            *slot = v;
        }
    }
    if let Some(v) = config_value(kv.get_floats("gyro_bias", 3))? {
        c.params.gyro_bias = vec3(v);
    }
    if let Some(v) = config_value(kv.get_floats("accel_bias", 3))? {
        c.params.accel_bias = vec3(v);
    }
    if let Some(v) = f("roll_deg")? {
        c.params.orientation[0] = v.to_radians();
    }
    if let Some(v) = f("pitch_deg")? {
        c.params.orientation[1] = v.to_radians();
    }
    if let Some(v) = config_value(kv.get_u64("seed"))? {
        c.seed = v;
    }
    if let Some(v) = config_value(kv.get_u64("image_width"))? {
        c.intrinsics.width = v as u32;
    }
    if let Some(v) = config_value(kv.get_u64("image_height"))? {
        c.intrinsics.height = v as u32;
    }
    c.validate()?;
    Ok(c)
}

fn fmt_vec(v: &[f64]) -> String {
    v.iter().map(|x| fmt12(*x)).collect::<Vec<_>>().join(" ")
}

/// Every setting of `c`, in the same keys [`sim_config`] accepts.
pub fn resolved(c: &SimConfig) -> KeyValues {
    let mut kv = KeyValues::new();
    let t = &c.trajectory;
    kv.push("motion", t.motion.to_string());
    kv.push("duration", fmt12(t.duration));
    kv.push("dt", fmt12(t.dt));
    kv.push("height", fmt12(t.height));
    kv.push("translation_amplitude", fmt12(t.translation_amplitude));
    kv.push("rotation_amplitude_deg", fmt12(t.rotation_amplitude.to_degrees()));
    kv.push("frequency", fmt12(t.frequency));
    kv.push("twist", fmt_vec(t.twist.to_vector().as_slice()));
    match &c.map {
        MapSpec::Points { count, half_extent } => {
            kv.push("map", "points");
            kv.push("point_count", count.to_string());
            kv.push("half_extent", fmt_vec(half_extent.as_slice()));
        }
        MapSpec::Square { side } => {
            kv.push("map", "square");
            kv.push("square_side", fmt12(*side));
        }
    }
    kv.push("event_rate", fmt12(c.event_rate));
    kv.push("imu_rate", fmt12(c.imu_rate));
    kv.push("groundtruth_rate", fmt12(c.groundtruth_rate));
    kv.push("sigma_e", fmt12(c.sigma_e));
    kv.push("sigma_omega", fmt12(c.sigma_omega));
    kv.push("sigma_a", fmt12(c.sigma_a));
    kv.push("gyro_bias", fmt_vec(c.params.gyro_bias.as_slice()));
    kv.push("accel_bias", fmt_vec(c.params.accel_bias.as_slice()));
    kv.push("scale", fmt12(c.params.scale));
    kv.push("roll_deg", fmt12(c.params.orientation[0].to_degrees()));
    kv.push("pitch_deg", fmt12(c.params.orientation[1].to_degrees()));
    kv.push("seed", c.seed.to_string());
    let k = &c.intrinsics;
    kv.push("fx", fmt12(k.fx));
    kv.push("fy", fmt12(k.fy));
    kv.push("cx", fmt12(k.cx));
    kv.push("cy", fmt12(k.cy));
    kv.push("image_width", k.width.to_string());
    kv.push("image_height", k.height.to_string());
    kv
}

pub fn run(config: &SimConfig, out: &Path) -> CliResult<()> {
    println!("simulating {} s, seed {}", config.trajectory.duration, config.seed);
    let sim = simulate(config)?;
    let dataset = Dataset {
        events: sim.events,
        imu: sim.imu,
        groundtruth: Some(sim.groundtruth),
        calibration: Calibration::from(sim.intrinsics),
        map: sim.map,
        associations: Some(sim.associations),
    };
    dataset.save(out)?;
    io::write_poses(
        &out.join(CONTROL_POSES_TRUE_FILE),
        &io::control_pose_records(&sim.trajectory),
    )?;
    io::write_params(&out.join(PARAMS_TRUE_FILE), &sim.params)?;

    let mut info = KeyValues::new();
    info.push("mean_scene_depth", fmt12(sim.mean_scene_depth));
    info.push("events", dataset.events.len().to_string());
    info.push("imu_samples", dataset.imu.len().to_string());
    info.push("primitives", dataset.map.len().to_string());
    info.push("knot_spacing", fmt12(sim.trajectory.dt()));
    io::write_key_values(&out.join(SIM_INFO_FILE), &info)?;
    io::write_key_values(&out.join("resolved_config.txt"), &resolved(config))?;

    println!(
        "wrote {}: {} events, {} imu samples, {} primitives, mean scene depth {:.3} m",
        out.display(),
        dataset.events.len(),
        dataset.imu.len(),
        dataset.map.len(),
        sim.mean_scene_depth
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ctvio::io::parse_key_values;

    #[test]
    fn resolved_config_parses_back() {
        for preset in ["points", "lines"] {
            let kv = parse_key_values(&format!("preset = {preset}\nroll_deg = 3\nseed = 9\n")).unwrap();
            let c = sim_config(&kv).unwrap();
            assert_eq!(c.seed, 9);
            let again = sim_config(&resolved(&c)).unwrap();
            assert_eq!(again.map, c.map);
            assert_eq!(again.seed, c.seed);
            assert!((again.params.orientation[0] - c.params.orientation[0]).abs() < 1e-12);
            assert!((again.trajectory.rotation_amplitude - c.trajectory.rotation_amplitude).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_bad_settings() {
        for text in ["bogus = 1", "preset = cubes", "sigma_e = -1", "scale = 0", "map = cubes", "twist = 1 2"] {
            let kv = parse_key_values(text).unwrap();
            assert!(matches!(sim_config(&kv), Err(CliError::Config(_))), "{text}");
        }
    }
}
