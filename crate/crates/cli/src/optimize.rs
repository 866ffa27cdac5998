//! `ctvio optimize`

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use ctvio::estimator::{
    analyze_observability, build_problem, derive_associations, solve, FreezeFlags, LmConfig,
    NoiseConfig, ObservabilityReport, ProblemInputs, Solution, THETA_NAMES,
};
use ctvio::geometry::Vec3;
use ctvio::io::{self, fmt12, Dataset, KeyValues};
use ctvio::sensors::{GravityModel, ModelParams};
use ctvio::simulator::perturb_trajectory;
use ctvio::trajectory::{fit_spline, FitOptions, KnotGrid, SplineTrajectory, TimedPose};

use crate::error::{config_value, load_config, CliError, CliResult};
use crate::simulate::{CONTROL_POSES_TRUE_FILE, PARAMS_TRUE_FILE};

pub const KEYS: &[&str] = &[
    "init",
    "dt",
    "sigma_e",
    "sigma_omega",
    "sigma_a",
    "freeze",
    "no_imu",
    "init_scale",
    "max_iter",
    "tolerance",
    "seed",
    "output_rate",
    "association_radius",
];

#[derive(Debug, Clone, PartialEq)]
pub enum InitSpec {
    GroundTruth,
    /// Timestamped tracker poses; `None` means `tracker.txt` in the dataset.
    Tracker(Option<PathBuf>),
    /// Ground truth moved by `|α| = translation` (m), `|β| = rotation`
    /// (rad) per control pose.
    Perturbed { translation: f64, rotation: f64 },
}

fn parse_angle(s: &str) -> Option<f64> {
    let s = s.trim();
    if let Some(d) = s.strip_suffix("deg") {
        d.trim().parse::<f64>().ok().map(f64::to_radians)
    } else {
        s.strip_suffix("rad").unwrap_or(s).trim().parse().ok()
    }
}

impl FromStr for InitSpec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (head, arg) = match s.split_once(':') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        match (head, arg) {
            ("groundtruth", None) => Ok(InitSpec::GroundTruth),
            ("tracker", None) => Ok(InitSpec::Tracker(None)),
            ("tracker", Some(p)) if !p.is_empty() => Ok(InitSpec::Tracker(Some(PathBuf::from(p)))),
            ("perturbed", Some(a)) => {
                let parts: Vec<&str> = a.split(',').collect();
                let values = match parts.as_slice() {
                    [t, r] => t.trim().parse::<f64>().ok().zip(parse_angle(r)),
                    _ => None,
                };
                match values {
                    Some((translation, rotation)) if translation >= 0.0 && rotation >= 0.0 => {
                        Ok(InitSpec::Perturbed { translation, rotation })
                    }
                    _ => Err(format!("expected perturbed:<m>,<angle>[deg], got '{s}'")),
                }
            }
            _ => Err(format!(
                "unknown init '{s}' (groundtruth, tracker[:<file>], perturbed:<m>,<angle>[deg])"
            )),
        }
    }
}

impl std::fmt::Display for InitSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InitSpec::GroundTruth => f.write_str("groundtruth"),
            InitSpec::Tracker(None) => f.write_str("tracker"),
            InitSpec::Tracker(Some(p)) => write!(f, "tracker:{}", p.display()),
            InitSpec::Perturbed { translation, rotation } => write!(
                f,
                "perturbed:{},{}deg",
                fmt12(*translation),
                fmt12(rotation.to_degrees())
            ),
        }
    }
}

pub fn parse_freeze(s: &str) -> Result<FreezeFlags, String> {
    let mut f = FreezeFlags::default();
    for item in s.split(',').map(str::trim).filter(|x| !x.is_empty()) {
        match item {
            "none" => {}
            "scale" => f.scale = true,
            "orientation" => f.orientation = true,
            "biases" => {
                f.gyro_bias = true;
                f.accel_bias = true;
            }
            "gyro_bias" => f.gyro_bias = true,
            "accel_bias" => f.accel_bias = true,
            "first_pose" => f.first_pose = true,
            other => {
                return Err(format!(
                    "unknown freeze item '{other}' (scale, orientation, biases, gyro_bias, accel_bias, first_pose)"
                ))
            }
        }
    }
    Ok(f)
}

fn format_freeze(f: &FreezeFlags) -> String {
    let mut items = Vec::new();
    for (on, name) in [
        (f.gyro_bias, "gyro_bias"),
        (f.accel_bias, "accel_bias"),
        (f.scale, "scale"),
        (f.orientation, "orientation"),
        (f.first_pose, "first_pose"),
    ] {
        if on {
            items.push(name);
        }
    }
    if items.is_empty() {
        "none".into()
    } else {
        items.join(",")
    }
}

#[derive(Debug, clap::Args)]
pub struct OptimizeArgs {
    /// Dataset directory.
    #[arg(long)]
    pub dataset: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// `key = value` settings; flags take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// groundtruth | tracker[:<file>] | perturbed:<m>,<angle>[deg]
    #[arg(long)]
    pub init: Option<String>,
    /// Comma-separated: scale, orientation, biases, gyro_bias, accel_bias, first_pose.
    #[arg(long)]
    pub freeze: Option<String>,
    /// Ignore the IMU (visual-only estimation).
    #[arg(long)]
    pub no_imu: bool,
    /// Control-pose spacing (s).
    #[arg(long)]
    pub dt: Option<f64>,
    #[arg(long)]
    pub sigma_e: Option<f64>,
    #[arg(long)]
    pub sigma_omega: Option<f64>,
    #[arg(long)]
    pub sigma_a: Option<f64>,
    /// Initial map scale.
    #[arg(long)]
    pub init_scale: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    /// Relative cost decrease below which the solve stops.
    #[arg(long)]
    pub tolerance: Option<f64>,
    /// Seed for the perturbed initialization.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sampling rate of trajectory.txt (Hz).
    #[arg(long)]
    pub output_rate: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub init: InitSpec,
    pub dt: f64,
    pub noise: NoiseConfig,
    pub freeze: FreezeFlags,
    pub no_imu: bool,
    pub init_scale: Option<f64>,
    pub max_iter: usize,
    pub tolerance: f64,
    pub seed: u64,
    pub output_rate: f64,
    /// Pixel radius for deriving associations when the dataset has none.
    pub association_radius: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let lm = LmConfig::default();
        Self {
            init: InitSpec::GroundTruth,
            dt: 0.1,
            noise: NoiseConfig::default(),
            freeze: FreezeFlags::default(),
            no_imu: false,
            init_scale: None,
            max_iter: lm.max_iterations,
            tolerance: lm.relative_tolerance,
            seed: 0,
            output_rate: 200.0,
            association_radius: 0.5,
        }
    }
}

impl RunConfig {
    pub fn from_key_values(kv: &KeyValues) -> CliResult<Self> {
        config_value(kv.reject_unknown(KEYS))?;
        let mut c = Self::default();
        if let Some(s) = kv.get("init") {
            c.init = s.parse().map_err(CliError::Config)?;
        }
        if let Some(s) = kv.get("freeze") {
            c.freeze = parse_freeze(s).map_err(CliError::Config)?;
        }
        if let Some(b) = config_value(kv.get_bool("no_imu"))? {
            c.no_imu = b;
        }
        for (key, slot) in [
            ("dt", &mut c.dt),
            ("sigma_e", &mut c.noise.sigma_e),
            ("sigma_omega", &mut c.noise.sigma_omega),
            ("sigma_a", &mut c.noise.sigma_a),
            ("tolerance", &mut c.tolerance),
            ("output_rate", &mut c.output_rate),
            ("association_radius", &mut c.association_radius),
        ] {
            if let Some(v) = config_value(kv.get_f64(key))? {
                *slot = v;
            }
        }
        c.init_scale = config_value(kv.get_f64("init_scale"))?;
        if let Some(v) = config_value(kv.get_u64("max_iter"))? {
            c.max_iter = v as usize;
        }
        if let Some(v) = config_value(kv.get_u64("seed"))? {
            c.seed = v;
        }
        Ok(c)
    }

    /// Defaults, then the config file, then flags.
    pub fn resolve(args: &OptimizeArgs) -> CliResult<Self> {
        let mut c = match &args.config {
            Some(p) => Self::from_key_values(&load_config(p)?)?,
            None => Self::default(),
        };
        if let Some(s) = &args.init {
            c.init = s.parse().map_err(CliError::Config)?;
        }
        if let Some(s) = &args.freeze {
            c.freeze = parse_freeze(s).map_err(CliError::Config)?;
        }
        c.no_imu |= args.no_imu;
        if let Some(v) = args.dt {
            c.dt = v;
        }
        if let Some(v) = args.sigma_e {
            c.noise.sigma_e = v;
        }
        if let Some(v) = args.sigma_omega {
            c.noise.sigma_omega = v;
        }
        if let Some(v) = args.sigma_a {
            c.noise.sigma_a = v;
        }
        if args.init_scale.is_some() {
            c.init_scale = args.init_scale;
        }
        if let Some(v) = args.max_iter {
            c.max_iter = v;
        }
        if let Some(v) = args.tolerance {
            c.tolerance = v;
        }
        if let Some(v) = args.seed {
            c.seed = v;
        }
        if let Some(v) = args.output_rate {
            c.output_rate = v;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> CliResult<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.dt) || !positive(self.output_rate) || !positive(self.tolerance) {
            return Err(CliError::config("dt, output_rate and tolerance must be positive"));
        }
        if !positive(self.association_radius) {
            return Err(CliError::config("association_radius must be positive"));
        }
        if self.init_scale.is_some_and(|s| !positive(s)) {
            return Err(CliError::config("init_scale must be positive"));
        }
        self.noise.validate()?;
        Ok(())
    }

    pub fn key_values(&self) -> KeyValues {
        let mut kv = KeyValues::new();
        kv.push("init", self.init.to_string());
        kv.push("dt", fmt12(self.dt));
        kv.push("sigma_e", fmt12(self.noise.sigma_e));
        kv.push("sigma_omega", fmt12(self.noise.sigma_omega));
        kv.push("sigma_a", fmt12(self.noise.sigma_a));
        kv.push("freeze", format_freeze(&self.freeze));
        kv.push("no_imu", self.no_imu.to_string());
        if let Some(s) = self.init_scale {
            kv.push("init_scale", fmt12(s));
        }
        kv.push("max_iter", self.max_iter.to_string());
        kv.push("tolerance", fmt12(self.tolerance));
        kv.push("seed", self.seed.to_string());
        kv.push("output_rate", fmt12(self.output_rate));
        kv.push("association_radius", fmt12(self.association_radius));
        kv
    }
}

/// Fits a spline with spacing `dt` to `samples`, on a grid covering the
/// overlap of the samples and `[t_start, t_end]`. Knots sit on multiples of
/// `dt`.
fn fit_to(samples: &[TimedPose], t_start: f64, t_end: f64, dt: f64) -> CliResult<SplineTrajectory> {
    let (first, last) = match (samples.first(), samples.last()) {
        (Some(a), Some(b)) => (a.t.max(t_start), b.t.min(t_end)),
        _ => return Err(CliError::config("no poses to initialize from")),
    };
    if !(last > first) {
        return Err(CliError::config("initialization poses do not overlap the measurements"));
    }
    let aligned = (first / dt).floor() * dt;
    let fit = fit_spline(samples, &KnotGrid::covering(aligned, last, dt), &FitOptions::default())?;
    println!(
        "fitted {} control poses to {} poses (rms {:.2e})",
        fit.trajectory.control_poses().len(),
        samples.len(),
        fit.rms
    );
    Ok(fit.trajectory)
}

fn groundtruth_trajectory(dir: &Path, data: &Dataset, range: (f64, f64), dt: f64) -> CliResult<SplineTrajectory> {
    let exact = dir.join(CONTROL_POSES_TRUE_FILE);
    if exact.exists() {
        let traj = io::trajectory_from_control_poses(&io::read_poses(&exact)?)?;
        if (traj.dt() - dt).abs() < 1e-9 {
            return Ok(traj);
        }
    }
    let gt = data
        .groundtruth
        .as_ref()
        .ok_or_else(|| CliError::config("dataset has no groundtruth.txt"))?;
    fit_to(gt, range.0, range.1, dt)
}

fn true_params(dir: &Path) -> CliResult<Option<ModelParams>> {
    let p = dir.join(PARAMS_TRUE_FILE);
    Ok(if p.exists() { Some(io::read_params(&p)?) } else { None })
}

/// Initial trajectory and parameters.
pub fn initialize(
    dir: &Path,
    data: &Dataset,
    cfg: &RunConfig,
) -> CliResult<(SplineTrajectory, ModelParams)> {
    let range = match (data.events.first(), data.events.last()) {
        (Some(a), Some(b)) => (a.t, b.t),
        _ => return Err(CliError::config("dataset has no events")),
    };
    let (traj, mut params) = match &cfg.init {
        InitSpec::GroundTruth => (
            groundtruth_trajectory(dir, data, range, cfg.dt)?,
            true_params(dir)?.unwrap_or_default(),
        ),
        InitSpec::Perturbed { translation, rotation } => {
            let base = groundtruth_trajectory(dir, data, range, cfg.dt)?;
            let mut p = true_params(dir)?.unwrap_or_default();
            p.gyro_bias = Vec3::zeros();
            p.accel_bias = Vec3::zeros();
            (perturb_trajectory(&base, *translation, *rotation, cfg.seed), p)
        }
        InitSpec::Tracker(path) => {
            let path = path.clone().unwrap_or_else(|| dir.join("tracker.txt"));
            let poses = io::read_poses(&path)?;
            (fit_to(&poses, range.0, range.1, cfg.dt)?, ModelParams::default())
        }
    };
    if let Some(s) = cfg.init_scale {
        params.scale = s;
    }
    Ok((traj, params))
}

pub fn run(args: &OptimizeArgs) -> CliResult<()> {
    let cfg = RunConfig::resolve(args)?;
    std::fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Io(format!("{}: {e}", args.out.display())))?;
    io::write_key_values(&args.out.join("resolved_config.txt"), &cfg.key_values())?;

    let data = Dataset::load(&args.dataset)?;
    println!(
        "loaded {} events, {} imu samples, {} primitives",
        data.events.len(),
        data.imu.len(),
        data.map.len()
    );
    let (init, params) = initialize(&args.dataset, &data, &cfg)?;

    let derived;
    let associations = match &data.associations {
        Some(a) => a.as_slice(),
        None => {
            let out = derive_associations(
                &data.events,
                &data.map,
                &data.calibration.intrinsics,
                &init,
                &params,
                cfg.association_radius,
            );
            println!(
                "derived {} associations ({} events unassociated, {} outside the trajectory)",
                out.associations.len(),
                out.unassociated,
                out.out_of_domain
            );
            derived = out.associations;
            derived.as_slice()
        }
    };
    let imu: &[_] = if cfg.no_imu { &[] } else { &data.imu };
    let mut problem = build_problem(ProblemInputs {
        events: &data.events,
        associations,
        imu,
        map: &data.map,
        intrinsics: data.calibration.intrinsics,
        trajectory: init,
        params,
        noise: cfg.noise,
        freeze: cfg.freeze,
        gravity: GravityModel::default(),
    })?;
    let dropped = problem.dropped();
    println!(
        "problem: {} events, {} imu samples, {} unknowns ({} events and {} imu samples outside the trajectory)",
        problem.n_events(),
        problem.n_imu(),
        problem.dim(),
        dropped.events_out_of_domain,
        dropped.imu_out_of_domain
    );

    let lm = LmConfig {
        max_iterations: cfg.max_iter,
        relative_tolerance: cfg.tolerance,
        ..Default::default()
    };
    let start = Instant::now();
    let solution = solve(&problem, &lm)?;
    let elapsed = start.elapsed().as_secs_f64();
    let r = &solution.report;
    println!(
        "{} after {} iterations in {:.1} s: F {:.6e} -> {:.6e}",
        r.termination, r.iterations, elapsed, r.initial.total, r.final_costs.total
    );

    problem.set_state(solution.trajectory.clone(), solution.params)?;
    let obs = analyze_observability(&problem)?;
    for w in &obs.warnings {
        println!("warning: {w}");
    }

    write_outputs(&args.out, &cfg, &solution, &obs, &problem, elapsed)?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn write_outputs(
    out: &Path,
    cfg: &RunConfig,
    sol: &Solution,
    obs: &ObservabilityReport,
    problem: &ctvio::estimator::Problem,
    elapsed: f64,
) -> CliResult<()> {
    io::write_poses(&out.join("trajectory.txt"), &sol.trajectory.sample(cfg.output_rate))?;
    io::write_poses(&out.join("control_poses.txt"), &io::control_pose_records(&sol.trajectory))?;
    io::write_params(&out.join("params.txt"), &sol.params)?;

    let r = &sol.report;
    let mut kv = KeyValues::new();
    kv.push("termination", r.termination.to_string());
    kv.push("iterations", r.iterations.to_string());
    kv.push("rejected_steps", r.rejected_steps.to_string());
    kv.push("initial_cost", fmt12(r.initial.total));
    kv.push("final_cost", fmt12(r.final_costs.total));
    kv.push("final_cost_events", fmt12(r.final_costs.events));
    kv.push("final_cost_gyro", fmt12(r.final_costs.gyro));
    kv.push("final_cost_accel", fmt12(r.final_costs.accel));
    kv.push("capped_residuals", r.final_costs.capped.to_string());
    kv.push("rms_event_px", fmt12(r.rms[0]));
    kv.push("rms_gyro", fmt12(r.rms[1]));
    kv.push("rms_accel", fmt12(r.rms[2]));
    kv.push("final_lambda", fmt12(r.final_lambda));
    kv.push("gradient_norm", fmt12(r.gradient_norm));
    kv.push(
        "cost_trace",
        r.trace.iter().map(|f| fmt12(*f)).collect::<Vec<_>>().join(" "),
    );
    kv.push("solve_seconds", format!("{elapsed:.3}"));
    kv.push("events_used", problem.n_events().to_string());
    kv.push("imu_used", problem.n_imu().to_string());
    let d = problem.dropped();
    kv.push("events_out_of_domain", d.events_out_of_domain.to_string());
    kv.push("imu_out_of_domain", d.imu_out_of_domain.to_string());
    kv.push("unassociated_events", d.unassociated_events.to_string());
    kv.push("frozen", format_freeze(&problem.freeze()));
    kv.push("unknowns", obs.dim.to_string());
    kv.push("conditioning", fmt12(obs.conditioning));
    kv.push("null_dimension", obs.null_dimension.to_string());
    kv.push("rank_deficient", obs.rank_deficient().to_string());
    kv.push(
        "unobservable",
        if obs.unobservable.is_empty() {
            "none".to_string()
        } else {
            obs.unobservable.join(",")
        },
    );
    kv.push("poses_in_null_space", obs.poses_in_null_space.to_string());
    for (name, std) in THETA_NAMES.iter().zip(obs.theta_std.iter()) {
        if let Some(s) = std {
            kv.push(format!("std_{name}"), fmt12(*s));
        }
    }
    for (i, w) in obs.warnings.iter().enumerate() {
        kv.push(format!("warning_{}", i + 1), w.clone());
    }
    io::write_key_values(&out.join("report.txt"), &kv)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_specs() {
        assert_eq!("groundtruth".parse::<InitSpec>().unwrap(), InitSpec::GroundTruth);
        assert_eq!(
            "tracker:poses.txt".parse::<InitSpec>().unwrap(),
            InitSpec::Tracker(Some("poses.txt".into()))
        );
        match "perturbed:0.05,2deg".parse::<InitSpec>().unwrap() {
            InitSpec::Perturbed { translation, rotation } => {
                assert_eq!(translation, 0.05);
                assert!((rotation - 2f64.to_radians()).abs() < 1e-15);
            }
            other => panic!("{other:?}"),
        }
        let p: InitSpec = "perturbed:0.1,0.02".parse().unwrap();
        assert_eq!(p.to_string().parse::<InitSpec>().unwrap().to_string(), p.to_string());
        for bad in ["perturbed:0.1", "perturbed:a,b", "tracker:", "random", "perturbed:-1,2deg"] {
            assert!(bad.parse::<InitSpec>().is_err(), "{bad}");
        }
    }

    #[test]
    fn freeze_lists() {
        let f = parse_freeze("scale, biases").unwrap();
        assert!(f.scale && f.gyro_bias && f.accel_bias && !f.orientation);
        assert_eq!(parse_freeze(&format_freeze(&f)).unwrap(), f);
        assert_eq!(parse_freeze("none").unwrap(), FreezeFlags::default());
        assert!(parse_freeze("gravity").is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut c = RunConfig::default();
        c.init = "perturbed:0.05,2deg".parse().unwrap();
        c.freeze = parse_freeze("scale,first_pose").unwrap();
        c.init_scale = Some(0.5);
        c.no_imu = true;
        let back = RunConfig::from_key_values(&c.key_values()).unwrap();
        assert_eq!(back.key_values(), c.key_values());
        assert!(RunConfig::from_key_values(&io::parse_key_values("dt_typo = 1").unwrap()).is_err());
    }
}
