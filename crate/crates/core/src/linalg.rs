//! Dense normal-equation helpers shared by the spline fitter and the solver.

use nalgebra::{DMatrix, DVector};

/// Solves `(H + λ·(diag(H) + floor)) x = rhs` by Cholesky; `None` when the
/// damped system is not positive definite.
pub(crate) fn solve_damped(h: &DMatrix<f64>, rhs: &DVector<f64>, lambda: f64) -> Option<DVector<f64>> {
    let n = h.nrows();
    let mean_diag = (0..n).map(|i| h[(i, i)].abs()).sum::<f64>() / n.max(1) as f64;
    let floor = 1e-9 * mean_diag.max(f64::MIN_POSITIVE);
    let mut a = h.clone();
    for i in 0..n {
        a[(i, i)] += lambda * (h[(i, i)] + floor);
    }
    let chol = a.cholesky()?;
    let x = chol.solve(rhs);
    x.iter().all(|v| v.is_finite()).then_some(x)
}

/// Adds `jᵀj` and `jᵀr` of one residual block into the dense accumulators.
/// `cols` maps block columns to global columns.
pub(crate) fn accumulate_block(
    h: &mut DMatrix<f64>,
    g: &mut DVector<f64>,
    cols: &[usize],
    jac: &[f64],
    res: &[f64],
    weight: f64,
) {
    let nc = cols.len();
    for (r, &rv) in res.iter().enumerate() {
        let row = &jac[r * nc..(r + 1) * nc];
        for (a, &ca) in cols.iter().enumerate() {
            let ja = row[a];
            if ja == 0.0 {
                continue;
            }
            g[ca] += weight * ja * rv;
            for (b, &cb) in cols.iter().enumerate().skip(a) {
                let v = weight * ja * row[b];
                h[(ca, cb)] += v;
            }
        }
    }
}

/// Copies the upper triangle produced by [`accumulate_block`] to the lower.
pub(crate) fn symmetrize_upper(h: &mut DMatrix<f64>) {
    let n = h.nrows();
    for i in 0..n {
        for j in 0..i {
            h[(i, j)] = h[(j, i)];
        }
    }
}
