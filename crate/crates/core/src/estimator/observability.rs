//! Rank and uncertainty analysis of the linearized problem.

use nalgebra::{DMatrix, SymmetricEigen};

use super::residuals::{linearize, Linearizer};
use super::{EstimatorError, Problem, THETA_DIM, THETA_NAMES};

/// Scaled eigenvalues below this fraction of the largest count as null.
pub const NULL_THRESHOLD: f64 = 1e-14;

/// Roll/pitch standard deviation (rad) above which a warning is raised.
pub const ORIENTATION_STD_LIMIT: f64 = 1.0 * std::f64::consts::PI / 180.0;

/// Relative scale standard deviation above which a warning is raised.
pub const SCALE_STD_LIMIT: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct ObservabilityReport {
    pub dim: usize,
    /// Smallest over largest eigenvalue of the Jacobi-scaled Gauss-Newton
    /// matrix.
    pub conditioning: f64,
    pub null_dimension: usize,
    /// θ components taking part in a null direction.
    pub unobservable: Vec<&'static str>,
    /// Whether control poses take part in a null direction.
    pub poses_in_null_space: bool,
    /// Marginal standard deviations of the free θ components from the
    /// measurement information; infinite when unobservable, `None` when
    /// frozen.
    pub theta_std: [Option<f64>; THETA_DIM],
    pub warnings: Vec<String>,
}

impl ObservabilityReport {
    pub fn rank_deficient(&self) -> bool {
        self.null_dimension > 0
    }
}

/// Analyzes the information matrix `Σ Jᵀ J / σ²` of the problem at its
/// current estimate.
pub fn analyze_observability(problem: &Problem) -> Result<ObservabilityReport, EstimatorError> {
    let lin = linearize(&Linearizer::new(problem, problem.trajectory(), problem.params()).information_scaling());
    let info = lin.h;
    let n = info.nrows();
    if n == 0 {
        return Err(EstimatorError::EmptyProblem);
    }
    let d: Vec<f64> = (0..n)
        .map(|i| {
            let v = info[(i, i)];
            if v > 0.0 {
                1.0 / v.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    let scaled = DMatrix::from_fn(n, n, |i, j| info[(i, j)] * d[i] * d[j]);
    let eig = SymmetricEigen::new(scaled);
    let max = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let is_null: Vec<bool> = eig.eigenvalues.iter().map(|l| *l < NULL_THRESHOLD * max).collect();
    // a zero column is null by itself
    let zero_cols: Vec<usize> = (0..n).filter(|i| d[*i] == 0.0).collect();
    let null_dimension = is_null.iter().filter(|b| **b).count().max(zero_cols.len());
    let conditioning = eig.eigenvalues.min().max(0.0) / max;

    let layout = problem.layout();
    let first_theta = layout.theta_cols.iter().flatten().min().copied().unwrap_or(n);
    let participates = |col: usize| {
        d[col] == 0.0
            || (0..n).any(|k| is_null[k] && eig.eigenvectors[(col, k)].abs() > 0.05)
    };

    let mut unobservable = Vec::new();
    let mut theta_std = [None; THETA_DIM];
    for (j, col) in layout.free_theta() {
        if participates(col) {
            unobservable.push(THETA_NAMES[j]);
            theta_std[j] = Some(f64::INFINITY);
            continue;
        }
        let var: f64 = (0..n)
            .filter(|k| !is_null[*k])
            .map(|k| {
                let v = eig.eigenvectors[(col, k)] * d[col];
                v * v / eig.eigenvalues[k]
            })
            .sum();
        theta_std[j] = Some(var.sqrt());
    }
    let poses_in_null_space = (0..first_theta).any(participates);

    let mut warnings = Vec::new();
    if null_dimension > 0 {
        let what = if unobservable.is_empty() {
            "control poses".to_string()
        } else {
            unobservable.join(", ")
        };
        warnings.push(format!(
            "Gauss-Newton matrix is rank deficient: {null_dimension} null direction(s) involving {what}"
        ));
    }
    for j in [7, 8] {
        if let Some(s) = theta_std[j] {
            if s > ORIENTATION_STD_LIMIT {
                warnings.push(format!(
                    "map {} poorly constrained (std {:.3} deg); gravity alignment needs rotational excitation",
                    THETA_NAMES[j],
                    s.to_degrees()
                ));
            }
        }
    }
    if let Some(s) = theta_std[6] {
        if s > SCALE_STD_LIMIT * problem.params().scale {
            warnings.push(format!(
                "map scale poorly constrained (std {:.3e}); scale needs inertial measurements",
                s
            ));
        }
    }

    Ok(ObservabilityReport {
        dim: n,
        conditioning,
        null_dimension,
        unobservable,
        poses_in_null_space,
        theta_std,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::super::test_support::*;
    use super::super::*;
    use super::*;
    use crate::sensors::ModelParams;

    #[test]
    fn visual_only_scale_is_unobservable() {
        let mut s = synthetic(7, 300, 0, false, ModelParams::default(), 31);
        s.imu.clear();
        let free = problem_from(&s, s.trajectory.clone(), s.params, FreezeFlags::default());
        let r = analyze_observability(&free).unwrap();
        assert!(r.rank_deficient(), "{r:?}");
        assert!(r.unobservable.contains(&"scale"));

        let frozen = problem_from(
            &s,
            s.trajectory.clone(),
            s.params,
            FreezeFlags {
                scale: true,
                orientation: true,
                ..Default::default()
            },
        );
        let r = analyze_observability(&frozen).unwrap();
        assert!(!r.rank_deficient(), "{r:?}");
    }

    #[test]
    fn inertial_terms_make_theta_observable() {
        let s = synthetic(10, 2000, 400, false, ModelParams::default(), 32);
        let p = problem_from(&s, s.trajectory.clone(), s.params, FreezeFlags::default());
        let r = analyze_observability(&p).unwrap();
        assert!(!r.rank_deficient(), "{r:?}");
        assert!(r.theta_std.iter().all(|s| s.is_some_and(f64::is_finite)));
    }
}
