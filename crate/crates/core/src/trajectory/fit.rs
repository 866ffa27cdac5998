//! Fitting a spline through timestamped poses, used to initialize the
//! estimator from tracker output.

use nalgebra::{DMatrix, DVector};

use super::{
    basis_unchecked, KnotGrid, PerturbationTable, SegmentCache, SplineTrajectory, TimedPose,
    TrajectoryError,
};
use crate::geometry::{log_se3, Pose, Twist};
use crate::linalg::{accumulate_block, solve_damped, symmetrize_upper};

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Finite-difference step on control-pose twists.
    pub step: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            step: 1e-6,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub trajectory: SplineTrajectory,
    /// Root mean square of `|log(T(t_s)⁻¹ T_s)|` over the samples used.
    pub rms: f64,
    pub iterations: usize,
    /// Samples outside the spline domain.
    pub skipped: usize,
}

struct Sample {
    segment: usize,
    u: f64,
    target: Pose,
}

fn residual(pose: &Pose, target: &Pose) -> [f64; 6] {
    let v = log_se3(&pose.inverse().compose(target)).to_vector();
    [v[0], v[1], v[2], v[3], v[4], v[5]]
}

fn cost(traj: &SplineTrajectory, samples: &[Sample]) -> f64 {
    samples
        .iter()
        .map(|s| {
            let p = traj.controls(s.segment).pose(&basis_unchecked(s.u, traj.dt()));
            residual(&p, &s.target).iter().map(|r| r * r).sum::<f64>()
        })
        .sum()
}

/// Least-squares fit of the control poses on `grid` to `samples`, minimizing
/// `Σ |log(T(t_s)⁻¹ T_s)|²` by damped Gauss-Newton on right-multiplied
/// control-pose twists. Control poses start at the sample nearest their knot.
pub fn fit_spline(
    samples: &[TimedPose],
    grid: &KnotGrid,
    options: &FitOptions,
) -> Result<FitResult, TrajectoryError> {
    if grid.n < 3 {
        return Err(TrajectoryError::TooFewControlPoses(grid.n + 1));
    }
    let mut sorted: Vec<TimedPose> = samples.to_vec();
    sorted.sort_by(|a, b| a.t.total_cmp(&b.t));
    if sorted.is_empty() {
        return Err(TrajectoryError::InsufficientData("no samples".into()));
    }

    let initial: Vec<Pose> = (0..=grid.n)
        .map(|k| nearest(&sorted, grid.knot_time(k)).pose)
        .collect();
    let mut traj = SplineTrajectory::from_grid(grid, initial)?;

    let mut used = Vec::with_capacity(sorted.len());
    let mut skipped = 0;
    for s in &sorted {
        match traj.segment_of(s.t) {
            Ok((segment, u)) => used.push(Sample {
                segment,
                u,
                target: s.pose,
            }),
            Err(_) => skipped += 1,
        }
    }

    let mut support = vec![0usize; grid.n + 1];
    for s in &used {
        for c in &mut support[s.segment - 1..=s.segment + 2] {
            *c += 1;
        }
    }
    if let Some(k) = support.iter().position(|&c| c == 0) {
        return Err(TrajectoryError::InsufficientData(format!(
            "control pose {k} (t = {:.6}) influences no sample",
            grid.knot_time(k)
        )));
    }

    let dim = 6 * (grid.n + 1);
    let mut current = cost(&traj, &used);
    let mut lambda = 1e-6;
    let mut iterations = 0;
    while iterations < options.max_iterations && current > 1e-30 {
        iterations += 1;
        let table = PerturbationTable::new(&traj, options.step);
        let mut h = DMatrix::zeros(dim, dim);
        let mut g = DVector::zeros(dim);
        let mut cols = [0usize; 24];
        let mut jac = [0.0f64; 6 * 24];
        for s in &used {
            let basis = basis_unchecked(s.u, traj.dt());
            let controls = traj.controls(s.segment);
            let cache = SegmentCache::new(&controls, &basis);
            let r0 = residual(&cache.pose, &s.target);
            for m in 0..4 {
                for d in 0..6 {
                    let plus = table.pose(&cache, &basis, s.segment, m, d, 0);
                    let minus = table.pose(&cache, &basis, s.segment, m, d, 1);
                    let rp = residual(&plus, &s.target);
                    let rm = residual(&minus, &s.target);
                    let col = 6 * m + d;
                    cols[col] = 6 * (s.segment - 1 + m) + d;
                    for r in 0..6 {
                        jac[r * 24 + col] = (rp[r] - rm[r]) / (2.0 * options.step);
                    }
                }
            }
            accumulate_block(&mut h, &mut g, &cols, &jac, &r0, 1.0);
        }
        symmetrize_upper(&mut h);
        let rhs = -&g;

        let mut accepted = false;
        while lambda < 1e12 {
            let Some(step) = solve_damped(&h, &rhs, lambda) else {
                lambda *= 10.0;
                continue;
            };
            let poses: Vec<Pose> = traj
                .control_poses()
                .iter()
                .enumerate()
                .map(|(k, p)| p.retract(&Twist::from_vector(&step.fixed_rows::<6>(6 * k).into_owned())))
                .collect();
            let candidate = traj.with_control_poses(poses)?;
            let c = cost(&candidate, &used);
            if c <= current {
                let decrease = current - c;
                traj = candidate;
                current = c;
                lambda = (lambda * 0.1).max(1e-12);
                accepted = true;
                if step.amax() < 1e-13 || decrease <= 1e-14 * c {
                    return Ok(finish(traj, current, used.len(), iterations, skipped));
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            break;
        }
    }
    Ok(finish(traj, current, used.len(), iterations, skipped))
}

fn finish(
    trajectory: SplineTrajectory,
    cost: f64,
    used: usize,
    iterations: usize,
    skipped: usize,
) -> FitResult {
    FitResult {
        trajectory,
        rms: (cost / used.max(1) as f64).sqrt(),
        iterations,
        skipped,
    }
}

fn nearest(sorted: &[TimedPose], t: f64) -> &TimedPose {
    let idx = sorted.partition_point(|s| s.t < t);
    if idx == 0 {
        &sorted[0]
    } else if idx == sorted.len() {
        &sorted[idx - 1]
    } else if (sorted[idx].t - t).abs() < (t - sorted[idx - 1].t).abs() {
        &sorted[idx]
    } else {
        &sorted[idx - 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{exp_se3, Vec3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn wavy(n_poses: usize, dt: f64) -> SplineTrajectory {
        let poses = (0..n_poses)
            .map(|i| {
                let t = i as f64 * dt;
                exp_se3(&Twist::new(
                    Vec3::new(0.3 * t.sin(), 0.2 * (1.3 * t).cos(), 0.1 * t),
                    Vec3::new(0.2 * (0.7 * t).sin(), 0.3 * t.cos(), 0.1 * t),
                ))
            })
            .collect();
        SplineTrajectory::new(0.0, dt, poses).unwrap()
    }

    fn log_distance(a: &Pose, b: &Pose) -> f64 {
        log_se3(&a.inverse().compose(b)).norm()
    }

    #[test]
    fn recovers_generating_spline() {
        let truth = wavy(12, 0.1);
        let samples = truth.sample(100.0);
        let fit = fit_spline(&samples, &truth.grid(), &FitOptions::default()).unwrap();
        for (a, b) in fit.trajectory.control_poses().iter().zip(truth.control_poses()) {
            assert!(log_distance(a, b) < 1e-6);
        }
        assert!(fit.rms < 1e-9);
    }

    #[test]
    fn constant_samples() {
        let pose = exp_se3(&Twist::new(Vec3::new(1.0, 2.0, 3.0), Vec3::new(0.1, -0.2, 0.3)));
        let samples: Vec<_> = (0..100).map(|k| TimedPose::new(k as f64 * 0.01, pose)).collect();
        let grid = KnotGrid::covering(0.0, 0.99, 0.1);
        let fit = fit_spline(&samples, &grid, &FitOptions::default()).unwrap();
        for p in fit.trajectory.control_poses() {
            assert!(log_distance(p, &pose) < 1e-12);
        }
    }

    #[test]
    fn noisy_sparse_samples() {
        // two noisy samples per segment of a slowly varying trajectory
        let truth = wavy(14, 0.2);
        let sigma = 0.01;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (start, end) = truth.domain();
        let mut samples = Vec::new();
        let mut t = start + 0.03;
        while t < end {
            let mut v = nalgebra::Vector6::zeros();
            for x in v.iter_mut() {
                *x = sigma * rng.sample::<f64, _>(StandardNormal);
            }
            let p = truth.pose_at(t).unwrap().retract(&Twist::from_vector(&v));
            samples.push(TimedPose::new(t, p));
            t += 0.1 + rng.random_range(-0.01..0.01);
        }
        let fit = fit_spline(&samples, &truth.grid(), &FitOptions::default()).unwrap();
        let noise_rms = sigma * 6f64.sqrt();
        assert!(fit.rms < noise_rms, "rms {} vs noise {}", fit.rms, noise_rms);
    }

    #[test]
    fn gap_is_reported() {
        let truth = wavy(12, 0.1);
        let samples: Vec<_> = truth
            .sample(100.0)
            .into_iter()
            .filter(|s| s.t < 0.3 || s.t > 0.8)
            .collect();
        assert!(matches!(
            fit_spline(&samples, &truth.grid(), &FitOptions::default()),
            Err(TrajectoryError::InsufficientData(_))
        ));
    }
}
