//! Levenberg-Marquardt on the normal equations.

use nalgebra::DVector;

use super::residuals::{costs_at, linearize, Costs, Linearizer};
use super::{EstimatorError, Problem};
use crate::linalg::solve_damped;
use crate::geometry::Pose;
use crate::sensors::ModelParams;
use crate::trajectory::SplineTrajectory;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LmConfig {
    pub max_iterations: usize,
    /// Stop once an accepted step changes F by less than this fraction.
    pub relative_tolerance: f64,
    /// Stop once `|Jᵀr|∞` falls below this.
    pub gradient_tolerance: f64,
    pub initial_lambda: f64,
    pub lambda_increase: f64,
    pub lambda_decrease: f64,
    /// Damping beyond which the solve gives up.
    pub max_lambda: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            relative_tolerance: 1e-3,
            gradient_tolerance: 1e-8,
            initial_lambda: 1e-4,
            lambda_increase: 10.0,
            lambda_decrease: 0.5,
            max_lambda: 1e16,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Termination {
    /// An accepted step changed F by less than the relative tolerance.
    RelativeDecrease,
    GradientNorm,
    MaxIterations,
    /// No damping produced a decrease; the estimate is at a (numerical)
    /// minimum.
    NoImprovement,
    /// F is exactly zero.
    ZeroObjective,
}

impl std::fmt::Display for Termination {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Termination::RelativeDecrease => "relative_decrease",
            Termination::GradientNorm => "gradient_norm",
            Termination::MaxIterations => "max_iterations",
            Termination::NoImprovement => "no_improvement",
            Termination::ZeroObjective => "zero_objective",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub initial: Costs,
    pub final_costs: Costs,
    /// Linearizations performed.
    pub iterations: usize,
    /// F at the start and after every accepted step.
    pub trace: Vec<f64>,
    pub rejected_steps: usize,
    pub termination: Termination,
    pub final_lambda: f64,
    pub gradient_norm: f64,
    /// RMS of the raw residuals: event (px), gyro (rad/s), accel (m/s²).
    pub rms: [f64; 3],
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub trajectory: SplineTrajectory,
    pub params: ModelParams,
    pub report: SolveReport,
}

fn rms(problem: &Problem, c: &Costs) -> [f64; 3] {
    let n = problem.noise();
    // F_events = Σ|r|²/(N σ²), so the per-event RMS is σ·√F_events
    [
        n.sigma_e * c.events.sqrt(),
        n.sigma_omega * c.gyro.sqrt(),
        n.sigma_a * c.accel.sqrt(),
    ]
}

/// Smallest scale correction worth taking outside the LM step.
const SCALE_STEP_MIN_FACTOR: f64 = 1.5;

fn scaled(traj: &SplineTrajectory, params: &ModelParams, k: f64) -> Option<(SplineTrajectory, ModelParams)> {
    let poses = traj
        .control_poses()
        .iter()
        .map(|p| Pose::new(p.rotation, p.translation * k))
        .collect();
    let params = ModelParams {
        scale: params.scale * k,
        ..*params
    };
    Some((traj.with_control_poses(poses).ok()?, params))
}

/// Step along the direction that scales the map and every control-pose
/// translation by a common factor k. Event and gyro residuals do not change
/// along it, and the accelerometer residuals are affine in k: `k·A - B`,
/// with A the spline's kinematic acceleration and B the measured specific
/// force less gravity and bias. LM alone gets stuck along this valley when
/// the initial scale is off by orders of magnitude.
///
/// The least-squares k is biased towards zero when the control poses are
/// noisy (spurious accelerations inflate |A|), so k is taken from the
/// reverse regression `<B,B> / <A,B>` instead. The three inner products come
/// from the accelerometer cost at k = 1/2, 1, 2. The step is kept only if it
/// lowers F.
fn scale_step(
    problem: &Problem,
    traj: &SplineTrajectory,
    params: &ModelParams,
    current: &Costs,
) -> Option<(SplineTrajectory, ModelParams, Costs)> {
    let freeze = problem.freeze();
    if freeze.scale || freeze.first_pose || problem.n_imu() == 0 || current.accel == 0.0 {
        return None;
    }
    let accel_at = |k: f64| {
        let (t, p) = scaled(traj, params, k)?;
        Some(costs_at(problem, &t, &p).accel)
    };
    let (f1, f2, f3) = (accel_at(0.5)?, current.accel, accel_at(2.0)?);
    // c(k) = <A,A> k² - 2<A,B> k + <B,B> through k = 1/2, 1, 2
    let aa = (0.5 * (f3 - f2) - (f2 - f1)) / 0.75;
    let ab = -0.5 * (f3 - f2 - 3.0 * aa);
    let bb = f2 - aa + 2.0 * ab;
    if !(aa > 0.0 && ab > 0.0 && bb > 0.0) {
        return None;
    }
    let k = (bb / ab).clamp(1e-3, 1e3);
    // moderate scale errors are LM's job
    if (1.0 / SCALE_STEP_MIN_FACTOR..=SCALE_STEP_MIN_FACTOR).contains(&k) {
        return None;
    }
    let (t, p) = scaled(traj, params, k)?;
    if !p.is_valid() {
        return None;
    }
    let c = costs_at(problem, &t, &p);
    (c.total.is_finite() && c.total < current.total).then_some((t, p, c))
}

/// Minimizes F over the free control poses and θ, starting from the
/// problem's current estimate.
pub fn solve(problem: &Problem, config: &LmConfig) -> Result<Solution, EstimatorError> {
    let mut traj = problem.trajectory().clone();
    let mut params = *problem.params();
    let initial = costs_at(problem, &traj, &params);
    if !initial.total.is_finite() {
        return Err(EstimatorError::NumericalFailure(format!(
            "objective is not finite at the initial estimate: {initial:?}"
        )));
    }
    let mut current = initial;
    let mut trace = vec![current.total];
    let mut lambda = config.initial_lambda;
    let mut rejected = 0;
    let mut iterations = 0;
    let mut gradient_norm = f64::NAN;

    // the scale step is tried up front and again whenever LM would stop
    let rescale = |traj: &mut SplineTrajectory, params: &mut ModelParams, current: &mut Costs, trace: &mut Vec<f64>| {
        match scale_step(problem, traj, params, current) {
            Some((t, p, c)) if (current.total - c.total) / current.total >= config.relative_tolerance => {
                *traj = t;
                *params = p;
                *current = c;
                trace.push(c.total);
                true
            }
            _ => false,
        }
    };
    if current.total > 0.0 {
        rescale(&mut traj, &mut params, &mut current, &mut trace);
    }
    macro_rules! stop {
        ($why:expr) => {{
            if rescale(&mut traj, &mut params, &mut current, &mut trace) {
                lambda = config.initial_lambda;
                continue;
            }
            break $why;
        }};
    }

    let termination = loop {
        if current.total == 0.0 {
            break Termination::ZeroObjective;
        }
        if iterations >= config.max_iterations {
            break Termination::MaxIterations;
        }
        iterations += 1;
        let lin = linearize(&Linearizer::new(problem, &traj, &params));
        gradient_norm = lin.g.amax();
        if gradient_norm < config.gradient_tolerance {
            stop!(Termination::GradientNorm);
        }
        let rhs: DVector<f64> = -&lin.g;

        let outcome = loop {
            if lambda > config.max_lambda {
                break None;
            }
            let Some(step) = solve_damped(&lin.h, &rhs, lambda) else {
                lambda *= config.lambda_increase;
                continue;
            };
            let (cand_traj, cand_params) = problem.apply_to(&traj, &params, &step)?;
            if !cand_params.is_valid() {
                rejected += 1;
                lambda *= config.lambda_increase;
                continue;
            }
            let cand = costs_at(problem, &cand_traj, &cand_params);
            if cand.total.is_finite() && cand.total <= current.total {
                break Some((cand_traj, cand_params, cand));
            }
            rejected += 1;
            lambda *= config.lambda_increase;
        };

        let Some((t, p, c)) = outcome else {
            if solve_damped(&lin.h, &rhs, config.max_lambda).is_none() {
                return Err(EstimatorError::NumericalFailure(format!(
                    "normal equations not positive definite at damping {:.1e}",
                    config.max_lambda
                )));
            }
            stop!(Termination::NoImprovement);
        };
        let decrease = current.total - c.total;
        let relative = decrease / current.total;
        traj = t;
        params = p;
        current = c;
        trace.push(current.total);
        lambda = (lambda * config.lambda_decrease).max(1e-15);
        if relative < config.relative_tolerance {
            stop!(Termination::RelativeDecrease);
        }
    };

    Ok(Solution {
        trajectory: traj,
        params,
        report: SolveReport {
            initial,
            final_costs: current,
            iterations,
            trace,
            rejected_steps: rejected,
            termination,
            final_lambda: lambda,
            gradient_norm,
            rms: rms(problem, &current),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::super::test_support::*;
    use super::super::*;
    use super::*;
    use crate::geometry::{exp_se3, Twist, Vec3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn perturb(traj: &SplineTrajectory, seed: u64, trans: f64, rot: f64) -> SplineTrajectory {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut unit = || {
            let v = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            v.normalize()
        };
        let poses = traj
            .control_poses()
            .iter()
            .map(|p| p.compose(&exp_se3(&Twist::new(unit() * trans, unit() * rot))))
            .collect();
        traj.with_control_poses(poses).unwrap()
    }

    fn non_increasing(trace: &[f64]) -> bool {
        trace.windows(2).all(|w| w[1] <= w[0])
    }

    #[test]
    fn ground_truth_is_stationary() {
        let s = synthetic(8, 300, 80, false, ModelParams::default(), 21);
        let p = problem_from(&s, s.trajectory.clone(), s.params, FreezeFlags::default());
        let sol = solve(&p, &LmConfig::default()).unwrap();
        assert!(sol.report.iterations <= 1, "{:?}", sol.report);
        assert!(sol.report.final_costs.total < 1e-12);
        assert!((sol.report.final_costs.total - sol.report.initial.total).abs() < 1e-12);
    }

    #[test]
    fn recovers_perturbed_trajectory() {
        for lines in [false, true] {
            let truth = ModelParams {
                gyro_bias: Vec3::new(0.01, -0.02, 0.005),
                accel_bias: Vec3::new(0.05, 0.02, -0.03),
                ..Default::default()
            };
            let s = synthetic(10, 2000, 300, lines, truth, 22);
            let init = perturb(&s.trajectory, 5, 0.01, 0.5f64.to_radians());
            let p = problem_from(&s, init, ModelParams::default(), FreezeFlags::default());
            let config = LmConfig {
                relative_tolerance: 1e-10,
                ..Default::default()
            };
            let sol = solve(&p, &config).unwrap();
            assert!(non_increasing(&sol.report.trace));
            assert!(sol.report.final_costs.total < 1e-10, "{lines} {:?}", sol.report);
            for (a, b) in sol.trajectory.control_poses().iter().zip(s.trajectory.control_poses()) {
                assert!((a.translation - b.translation).norm() < 1e-4, "{lines}");
            }
            assert!((sol.params.gyro_bias - truth.gyro_bias).norm() < 1e-4);
        }
    }

    #[test]
    fn recovers_from_far_off_scale() {
        use crate::simulator::{perturb_trajectory, reframe_trajectory, simulate, SimConfig};
        let mut config = SimConfig::default().noiseless();
        config.trajectory.duration = 3.0;
        config.event_rate = 50.0;
        let out = simulate(&config).unwrap();
        for s0 in [0.01, 100.0] {
            let assumed = ModelParams {
                scale: s0,
                ..Default::default()
            };
            let init = reframe_trajectory(&out.trajectory, &out.params, &assumed);
            let init = perturb_trajectory(&init, 0.01 * s0, 0.01, 7);
            let p = build_problem(ProblemInputs {
                events: &out.events,
                associations: &out.associations,
                imu: &out.imu,
                map: &out.map,
                intrinsics: out.intrinsics,
                trajectory: init,
                params: assumed,
                noise: NoiseConfig::default(),
                freeze: FreezeFlags::default(),
                gravity: GravityModel::default(),
            })
            .unwrap();
            let sol = solve(&p, &LmConfig::default()).unwrap();
            assert!(non_increasing(&sol.report.trace));
            assert!((sol.params.scale - 1.0).abs() < 1e-3, "{s0}: {:?}", sol.params);
        }
    }

    #[test]
    fn frozen_scale_is_left_alone() {
        let s = synthetic(8, 500, 200, false, ModelParams::default(), 25);
        let params = ModelParams {
            scale: 3.0,
            ..Default::default()
        };
        let freeze = FreezeFlags {
            scale: true,
            ..Default::default()
        };
        let p = problem_from(&s, s.trajectory.clone(), params, freeze);
        let sol = solve(&p, &LmConfig::default()).unwrap();
        assert_eq!(sol.params.scale, 3.0);
    }

    #[test]
    fn default_tolerance_stops_early() {
        let s = synthetic(8, 500, 100, false, ModelParams::default(), 23);
        let init = perturb(&s.trajectory, 6, 0.01, 0.01);
        let p = problem_from(&s, init, ModelParams::default(), FreezeFlags::trajectory_only());
        let sol = solve(&p, &LmConfig::default()).unwrap();
        let t = &sol.report.trace;
        assert!(non_increasing(t));
        if sol.report.termination == Termination::RelativeDecrease {
            let n = t.len();
            assert!((t[n - 2] - t[n - 1]) / t[n - 2] < 1e-3);
            // every earlier accepted step decreased F by at least the tolerance
            assert!(t.windows(2).take(n - 2).all(|w| (w[0] - w[1]) / w[0] >= 1e-3));
        }
    }
}
