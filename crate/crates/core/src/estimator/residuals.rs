//! Residual blocks, the objective, and its finite-difference Jacobian.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use super::{
    theta_vector, EstimatorError, InertialObs, Primitive, Problem, VisualObs, FD_STEP, RESIDUAL_CAP,
    THETA_DIM,
};
use crate::geometry::{Mat3, Pose};
use crate::linalg::{accumulate_block, symmetrize_upper};
use crate::sensors::{pinhole_project, predict_imu, signed_segment_distance, ModelParams};
use crate::trajectory::{basis_unchecked, PerturbationTable, SegmentCache, SplineTrajectory};

/// Upper bound on the number of work chunks. Chunk boundaries depend only on
/// the problem size, so sums are reduced in the same order on any thread
/// count.
const MAX_CHUNKS: usize = 16;
const MIN_CHUNK_LEN: usize = 512;

/// Objective value split by measurement class.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Costs {
    pub total: f64,
    pub events: f64,
    pub gyro: f64,
    pub accel: f64,
    /// Residual blocks replaced by [`RESIDUAL_CAP`] (primitive behind the
    /// camera) or otherwise degenerate.
    pub capped: usize,
}

impl Costs {
    fn add(&mut self, other: &Costs) {
        self.events += other.events;
        self.gyro += other.gyro;
        self.accel += other.accel;
        self.capped += other.capped;
    }

    fn finish(mut self) -> Self {
        self.total = self.events + self.gyro + self.accel;
        self
    }
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub costs: Costs,
    /// Weighted residuals: events first, then per IMU sample 3 gyro and 3
    /// accel rows.
    pub residuals: DVector<f64>,
}

/// Dense block of Jacobian rows touching a few columns.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianBlock {
    pub row: usize,
    pub rows: usize,
    /// Global column indices, ascending.
    pub cols: Vec<usize>,
    /// `rows × cols.len()`, row-major.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseJacobian {
    pub nrows: usize,
    pub ncols: usize,
    pub blocks: Vec<JacobianBlock>,
}

impl SparseJacobian {
    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for b in &self.blocks {
            let nc = b.cols.len();
            for r in 0..b.rows {
                for (k, &c) in b.cols.iter().enumerate() {
                    m[(b.row + r, c)] += b.values[r * nc + k];
                }
            }
        }
        m
    }

    pub fn nnz(&self) -> usize {
        self.blocks.iter().map(|b| b.values.len()).sum()
    }
}

/// Immutable snapshot shared by all residual evaluations of one state.
pub(crate) struct Snapshot<'a> {
    pub problem: &'a Problem,
    pub traj: &'a SplineTrajectory,
    pub params: &'a ModelParams,
    pub map_to_world: Mat3,
    pub weights: [f64; 3],
}

impl<'a> Snapshot<'a> {
    pub fn new(problem: &'a Problem, traj: &'a SplineTrajectory, params: &'a ModelParams) -> Self {
        Self {
            problem,
            traj,
            params,
            map_to_world: params.map_to_world(),
            weights: problem.weights(),
        }
    }
}

/// Raw (unweighted) visual residual; returns false when capped.
fn visual_raw(snap: &Snapshot, obs: &VisualObs, pose: &Pose, m2w: &Mat3, out: &mut [f64]) -> bool {
    let k = snap.problem.intrinsics();
    match obs.primitive {
        Primitive::Point(x) => match pinhole_project(k, pose, &(m2w * x)) {
            Ok(p) => {
                out[0] = obs.pixel.x - p.x;
                out[1] = obs.pixel.y - p.y;
                true
            }
            Err(_) => {
                out[0] = RESIDUAL_CAP;
                out[1] = RESIDUAL_CAP;
                false
            }
        },
        Primitive::Line(a, b) => {
            let pa = pinhole_project(k, pose, &(m2w * a));
            let pb = pinhole_project(k, pose, &(m2w * b));
            match (pa, pb) {
                (Ok(p), Ok(q)) => match signed_segment_distance(&obs.pixel, &p, &q) {
                    Ok(d) => {
                        out[0] = d;
                        true
                    }
                    Err(_) => {
                        // segment seen end-on: distance to its image point
                        out[0] = (obs.pixel - p).norm();
                        false
                    }
                },
                _ => {
                    out[0] = RESIDUAL_CAP;
                    false
                }
            }
        }
    }
}

/// Raw inertial residual `[ω - ω̂, a - â]`; returns false when capped.
fn inertial_raw(
    snap: &Snapshot,
    obs: &InertialObs,
    d: &crate::trajectory::PoseWithDerivatives,
    params: &ModelParams,
    out: &mut [f64; 6],
) -> bool {
    match predict_imu(d, params, snap.problem.gravity()) {
        Ok(p) => {
            let rw = obs.omega - p.omega;
            let ra = obs.accel - p.accel;
            out[..3].copy_from_slice(rw.as_slice());
            out[3..].copy_from_slice(ra.as_slice());
            true
        }
        Err(_) => {
            out.fill(RESIDUAL_CAP);
            false
        }
    }
}

fn visual_pose(snap: &Snapshot, obs: &VisualObs) -> Pose {
    snap.traj
        .controls(obs.segment)
        .pose(&basis_unchecked(obs.u, snap.traj.dt()))
}

fn chunk_ranges(len: usize) -> Vec<std::ops::Range<usize>> {
    if len == 0 {
        return Vec::new();
    }
    let chunks = len.div_ceil(MIN_CHUNK_LEN).clamp(1, MAX_CHUNKS);
    let size = len.div_ceil(chunks);
    (0..chunks)
        .map(|c| c * size..((c + 1) * size).min(len))
        .filter(|r| !r.is_empty())
        .collect()
}

/// Objective at an explicit state, without materializing residuals.
pub(crate) fn costs_at(problem: &Problem, traj: &SplineTrajectory, params: &ModelParams) -> Costs {
    let snap = Snapshot::new(problem, traj, params);
    let [we, ww, wa] = snap.weights;
    let visual: Vec<Costs> = chunk_ranges(problem.visual.len())
        .into_par_iter()
        .map(|range| {
            let mut c = Costs::default();
            let mut r = [0.0; 2];
            for obs in &problem.visual[range] {
                let pose = visual_pose(&snap, obs);
                if !visual_raw(&snap, obs, &pose, &snap.map_to_world, &mut r) {
                    c.capped += 1;
                }
                c.events += we * we * (r[0] * r[0] + r[1] * r[1]);
            }
            c
        })
        .collect();
    let inertial: Vec<Costs> = chunk_ranges(problem.inertial.len())
        .into_par_iter()
        .map(|range| {
            let mut c = Costs::default();
            let mut r = [0.0; 6];
            for obs in &problem.inertial[range] {
                let d = traj
                    .controls(obs.segment)
                    .pose_with_derivatives(&basis_unchecked(obs.u, traj.dt()));
                if !inertial_raw(&snap, obs, &d, params, &mut r) {
                    c.capped += 1;
                }
                c.gyro += ww * ww * (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]);
                c.accel += wa * wa * (r[3] * r[3] + r[4] * r[4] + r[5] * r[5]);
            }
            c
        })
        .collect();
    let mut total = Costs::default();
    for c in visual.iter().chain(&inertial) {
        total.add(c);
    }
    total.finish()
}

/// Objective and weighted residual vector at the local increment `delta`
/// from the problem's current estimate.
pub fn evaluate(problem: &Problem, delta: &DVector<f64>) -> Result<Evaluation, EstimatorError> {
    let (traj, params) = problem.apply(delta)?;
    let snap = Snapshot::new(problem, &traj, &params);
    let [we, ww, wa] = snap.weights;
    let rpe = problem.rows_per_event();
    let mut residuals = DVector::zeros(problem.n_residuals());
    let mut costs = Costs::default();
    let mut r = [0.0; 2];
    for (k, obs) in problem.visual.iter().enumerate() {
        let pose = visual_pose(&snap, obs);
        if !visual_raw(&snap, obs, &pose, &snap.map_to_world, &mut r) {
            costs.capped += 1;
        }
        for (j, v) in r.iter().take(rpe).enumerate() {
            residuals[k * rpe + j] = we * v;
            costs.events += we * we * v * v;
        }
    }
    let base = problem.n_events() * rpe;
    let mut ri = [0.0; 6];
    for (k, obs) in problem.inertial.iter().enumerate() {
        let d = traj
            .controls(obs.segment)
            .pose_with_derivatives(&basis_unchecked(obs.u, traj.dt()));
        if !inertial_raw(&snap, obs, &d, &params, &mut ri) {
            costs.capped += 1;
        }
        for j in 0..6 {
            let w = if j < 3 { ww } else { wa };
            let v = w * ri[j];
            residuals[base + 6 * k + j] = v;
            if j < 3 {
                costs.gyro += v * v;
            } else {
                costs.accel += v * v;
            }
        }
    }
    Ok(Evaluation {
        costs: costs.finish(),
        residuals,
    })
}

/// Scratch block reused across residuals of one chunk.
struct Block {
    rows: usize,
    cols: Vec<usize>,
    jac: Vec<f64>,
    res: [f64; 6],
    ok: bool,
}

impl Block {
    fn new() -> Self {
        Self {
            rows: 0,
            cols: Vec::with_capacity(30),
            jac: Vec::with_capacity(6 * 30),
            res: [0.0; 6],
            ok: true,
        }
    }

    fn reset(&mut self, rows: usize) {
        self.rows = rows;
        self.cols.clear();
        self.jac.clear();
        self.ok = true;
    }

    /// Appends a column from per-row values.
    fn push_col(&mut self, col: usize, values: &[f64]) {
        self.cols.push(col);
        self.jac.extend_from_slice(&values[..self.rows]);
    }

    /// Column-major scratch to the row-major layout used by the accumulator.
    fn to_row_major(&self, out: &mut Vec<f64>) {
        let nc = self.cols.len();
        out.clear();
        out.resize(self.rows * nc, 0.0);
        for c in 0..nc {
            for r in 0..self.rows {
                out[r * nc + c] = self.jac[c * self.rows + r];
            }
        }
    }
}

/// Everything needed to differentiate residuals at one state.
pub(crate) struct Linearizer<'a> {
    snap: Snapshot<'a>,
    table: PerturbationTable,
    /// `s·R(o)` with each free θ entry among scale, roll, pitch moved by ±h.
    theta_maps: Vec<(usize, usize, Mat3, Mat3)>,
    /// Row multipliers per class, on top of the objective weights.
    row_scale: [f64; 3],
}

impl<'a> Linearizer<'a> {
    pub fn new(problem: &'a Problem, traj: &'a SplineTrajectory, params: &'a ModelParams) -> Self {
        let snap = Snapshot::new(problem, traj, params);
        let theta = theta_vector(params);
        let theta_maps = (6..THETA_DIM)
            .filter_map(|j| {
                let col = problem.layout().theta_cols[j]?;
                let mut plus = theta;
                let mut minus = theta;
                plus[j] += FD_STEP;
                minus[j] -= FD_STEP;
                Some((
                    j,
                    col,
                    super::params_from_theta(&plus).map_to_world(),
                    super::params_from_theta(&minus).map_to_world(),
                ))
            })
            .collect();
        Self {
            snap,
            table: PerturbationTable::new(traj, FD_STEP),
            theta_maps,
            row_scale: [1.0; 3],
        }
    }

    /// Scales rows so that `JᵀJ` becomes the Fisher information of the raw
    /// measurements instead of the Hessian of `F`.
    pub fn information_scaling(mut self) -> Self {
        let p = self.snap.problem;
        self.row_scale = [
            (p.n_events() as f64).sqrt(),
            (p.n_imu() as f64).sqrt(),
            (p.n_imu() as f64).sqrt(),
        ];
        self
    }

    fn visual_block(&self, obs: &VisualObs, block: &mut Block) {
        let snap = &self.snap;
        let rows = snap.problem.rows_per_event();
        let w = snap.weights[0] * self.row_scale[0];
        let inv2h = 1.0 / (2.0 * FD_STEP);
        block.reset(rows);
        let basis = basis_unchecked(obs.u, snap.traj.dt());
        let controls = snap.traj.controls(obs.segment);
        let cache = SegmentCache::new(&controls, &basis);
        let mut r = [0.0; 2];
        block.ok = visual_raw(snap, obs, &cache.pose, &snap.map_to_world, &mut r);
        block.res[0] = w * r[0];
        block.res[1] = w * r[1];

        let mut rp = [0.0; 2];
        let mut rm = [0.0; 2];
        let mut col = [0.0; 2];
        for m in 0..4 {
            let Some(c0) = snap.problem.layout().pose_cols[obs.segment - 1 + m] else {
                continue;
            };
            for d in 0..6 {
                let plus = self.table.pose(&cache, &basis, obs.segment, m, d, 0);
                let minus = self.table.pose(&cache, &basis, obs.segment, m, d, 1);
                visual_raw(snap, obs, &plus, &snap.map_to_world, &mut rp);
                visual_raw(snap, obs, &minus, &snap.map_to_world, &mut rm);
                for i in 0..rows {
                    col[i] = w * (rp[i] - rm[i]) * inv2h;
                }
                block.push_col(c0 + d, &col);
            }
        }
        for (_, c, plus, minus) in &self.theta_maps {
            visual_raw(snap, obs, &cache.pose, plus, &mut rp);
            visual_raw(snap, obs, &cache.pose, minus, &mut rm);
            for i in 0..rows {
                col[i] = w * (rp[i] - rm[i]) * inv2h;
            }
            block.push_col(*c, &col);
        }
    }

    fn inertial_block(&self, obs: &InertialObs, block: &mut Block) {
        let snap = &self.snap;
        let ww = snap.weights[1] * self.row_scale[1];
        let wa = snap.weights[2] * self.row_scale[2];
        let w = [ww, ww, ww, wa, wa, wa];
        let inv2h = 1.0 / (2.0 * FD_STEP);
        block.reset(6);
        let basis = basis_unchecked(obs.u, snap.traj.dt());
        let controls = snap.traj.controls(obs.segment);
        let mut r = [0.0; 6];
        block.ok = inertial_raw(snap, obs, &controls.pose_with_derivatives(&basis), snap.params, &mut r);
        for i in 0..6 {
            block.res[i] = w[i] * r[i];
        }

        let mut rp = [0.0; 6];
        let mut rm = [0.0; 6];
        let mut col = [0.0; 6];
        for m in 0..4 {
            let Some(c0) = snap.problem.layout().pose_cols[obs.segment - 1 + m] else {
                continue;
            };
            for d in 0..6 {
                let plus = self.table.controls(&controls, obs.segment, m, d, 0);
                let minus = self.table.controls(&controls, obs.segment, m, d, 1);
                inertial_raw(snap, obs, &plus.pose_with_derivatives(&basis), snap.params, &mut rp);
                inertial_raw(snap, obs, &minus.pose_with_derivatives(&basis), snap.params, &mut rm);
                for i in 0..6 {
                    col[i] = w[i] * (rp[i] - rm[i]) * inv2h;
                }
                block.push_col(c0 + d, &col);
            }
        }
        // biases enter additively: d(measured - predicted)/db = -I
        for j in 0..6 {
            if let Some(c) = snap.problem.layout().theta_cols[j] {
                col.fill(0.0);
                col[j] = -w[j];
                block.push_col(c, &col);
            }
        }
    }
}

/// Gauss-Newton normal equations `H = JᵀJ`, `g = Jᵀr` and the objective.
pub(crate) struct Linearization {
    pub h: DMatrix<f64>,
    pub g: DVector<f64>,
    pub costs: Costs,
}

enum Work {
    Visual(std::ops::Range<usize>),
    Inertial(std::ops::Range<usize>),
}

pub(crate) fn linearize(lin: &Linearizer) -> Linearization {
    let problem = lin.snap.problem;
    let dim = problem.dim();
    let work: Vec<Work> = chunk_ranges(problem.visual.len())
        .into_iter()
        .map(Work::Visual)
        .chain(chunk_ranges(problem.inertial.len()).into_iter().map(Work::Inertial))
        .collect();
    let [sv, sw, sa] = lin.row_scale;
    let partials: Vec<Linearization> = work
        .into_par_iter()
        .map(|w| {
            let mut h = DMatrix::zeros(dim, dim);
            let mut g = DVector::zeros(dim);
            let mut costs = Costs::default();
            let mut block = Block::new();
            let mut row_major = Vec::new();
            match w {
                Work::Visual(range) => {
                    for obs in &problem.visual[range] {
                        lin.visual_block(obs, &mut block);
                        block.to_row_major(&mut row_major);
                        let res = &block.res[..block.rows];
                        accumulate_block(&mut h, &mut g, &block.cols, &row_major, res, 1.0);
                        costs.events += res.iter().map(|r| r * r).sum::<f64>() / (sv * sv);
                        costs.capped += usize::from(!block.ok);
                    }
                }
                Work::Inertial(range) => {
                    for obs in &problem.inertial[range] {
                        lin.inertial_block(obs, &mut block);
                        block.to_row_major(&mut row_major);
                        accumulate_block(&mut h, &mut g, &block.cols, &row_major, &block.res, 1.0);
                        let r = &block.res;
                        costs.gyro += (r[0] * r[0] + r[1] * r[1] + r[2] * r[2]) / (sw * sw);
                        costs.accel += (r[3] * r[3] + r[4] * r[4] + r[5] * r[5]) / (sa * sa);
                        costs.capped += usize::from(!block.ok);
                    }
                }
            }
            Linearization { h, g, costs }
        })
        .collect();
    let mut h = DMatrix::zeros(dim, dim);
    let mut g = DVector::zeros(dim);
    let mut costs = Costs::default();
    for p in &partials {
        h += &p.h;
        g += &p.g;
        costs.add(&p.costs);
    }
    symmetrize_upper(&mut h);
    Linearization {
        h,
        g,
        costs: costs.finish(),
    }
}

/// Block-sparse Jacobian of the weighted residuals with respect to the
/// decision vector, at the local increment `delta`.
///
/// Each event block touches the four control poses of its segment plus scale
/// and orientation; each IMU block touches its four control poses plus the
/// biases. Columns of frozen parameters are absent.
pub fn jacobian(problem: &Problem, delta: &DVector<f64>) -> Result<SparseJacobian, EstimatorError> {
    let (traj, params) = problem.apply(delta)?;
    let lin = Linearizer::new(problem, &traj, &params);
    let rpe = problem.rows_per_event();
    let mut blocks = Vec::with_capacity(problem.n_events() + problem.n_imu());
    let mut block = Block::new();
    let mut values = Vec::new();
    for (k, obs) in problem.visual.iter().enumerate() {
        lin.visual_block(obs, &mut block);
        block.to_row_major(&mut values);
        blocks.push(JacobianBlock {
            row: k * rpe,
            rows: rpe,
            cols: block.cols.clone(),
            values: values.clone(),
        });
    }
    let base = problem.n_events() * rpe;
    for (k, obs) in problem.inertial.iter().enumerate() {
        lin.inertial_block(obs, &mut block);
        block.to_row_major(&mut values);
        blocks.push(JacobianBlock {
            row: base + 6 * k,
            rows: 6,
            cols: block.cols.clone(),
            values: values.clone(),
        });
    }
    Ok(SparseJacobian {
        nrows: problem.n_residuals(),
        ncols: problem.dim(),
        blocks,
    })
}

#[cfg(test)]
mod tests {
    use super::super::test_support::*;
    use super::super::*;
    use super::*;
    use crate::geometry::exp_se3;
    use crate::geometry::Twist;
    use crate::sensors::PrimitiveKind;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn perturbed(s: &Synthetic, seed: u64, amount: f64) -> SplineTrajectory {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let poses = s
            .trajectory
            .control_poses()
            .iter()
            .map(|p| {
                let mut v = nalgebra::Vector6::zeros();
                for x in v.iter_mut() {
                    *x = amount * rng.random_range(-1.0..1.0);
                }
                p.compose(&exp_se3(&Twist::from_vector(&v)))
            })
            .collect();
        s.trajectory.with_control_poses(poses).unwrap()
    }

    #[test]
    fn noiseless_ground_truth_is_zero() {
        for lines in [false, true] {
            let s = synthetic(8, 200, 50, lines, ModelParams::default(), 4);
            let p = problem_from(&s, s.trajectory.clone(), s.params, FreezeFlags::default());
            let e = evaluate(&p, &DVector::zeros(p.dim())).unwrap();
            assert!(e.costs.total < 1e-12, "{:?}", e.costs);
        }
    }

    #[test]
    fn evaluate_is_deterministic_and_decomposes() {
        let s = synthetic(8, 100, 40, false, ModelParams::default(), 5);
        let p = problem_from(&s, perturbed(&s, 1, 0.01), s.params, FreezeFlags::default());
        let z = DVector::zeros(p.dim());
        let a = evaluate(&p, &z).unwrap();
        let b = evaluate(&p, &z).unwrap();
        assert_eq!(a.residuals, b.residuals);
        assert_eq!(a.costs, b.costs);
        let c = a.costs;
        assert!((c.total - (c.events + c.gyro + c.accel)).abs() <= 1e-15 * c.total);
        assert!((a.residuals.norm_squared() - c.total).abs() < 1e-12 * c.total);
        let fast = costs_at(&p, p.trajectory(), p.params());
        assert!((fast.total - c.total).abs() < 1e-12 * c.total);
    }

    #[test]
    fn doubling_sigma_e_quarters_event_cost() {
        let s = synthetic(8, 100, 40, true, ModelParams::default(), 6);
        let traj = perturbed(&s, 2, 0.01);
        let mk = |sigma_e: f64| {
            build_problem(ProblemInputs {
                events: &s.events,
                associations: &s.associations,
                imu: &s.imu,
                map: &s.map,
                intrinsics: crate::sensors::CameraIntrinsics::default(),
                trajectory: traj.clone(),
                params: s.params,
                noise: NoiseConfig {
                    sigma_e,
                    ..Default::default()
                },
                freeze: FreezeFlags::default(),
                gravity: crate::sensors::GravityModel::default(),
            })
            .unwrap()
        };
        let a = evaluate(&mk(0.1), &DVector::zeros(mk(0.1).dim())).unwrap().costs;
        let b = evaluate(&mk(0.2), &DVector::zeros(mk(0.2).dim())).unwrap().costs;
        assert!((b.events * 4.0 - a.events).abs() < 1e-12 * a.events);
        assert_eq!(a.gyro, b.gyro);
    }

    #[test]
    fn behind_camera_is_capped() {
        let s = synthetic(6, 30, 0, false, ModelParams::default(), 7);
        // flip every control pose upside down so the map is behind the camera
        let flip = crate::geometry::Pose::from_rotation(crate::geometry::rot_x(std::f64::consts::PI));
        let poses = s.trajectory.control_poses().iter().map(|p| p.compose(&flip)).collect();
        let traj = s.trajectory.with_control_poses(poses).unwrap();
        let p = problem_from(&s, traj, s.params, FreezeFlags::default());
        let e = evaluate(&p, &DVector::zeros(p.dim())).unwrap();
        assert_eq!(e.costs.capped, 30);
        assert!(e.costs.total.is_finite());
    }

    #[test]
    fn jacobian_locality() {
        let s = synthetic(8, 120, 40, false, ModelParams::default(), 8);
        let p = problem_from(&s, perturbed(&s, 3, 0.01), s.params, FreezeFlags::default());
        let j = jacobian(&p, &DVector::zeros(p.dim())).unwrap();
        let first_theta = 6 * p.trajectory().control_poses().len();
        for (b, obs) in j.blocks.iter().zip(&p.visual) {
            let poses: Vec<usize> = b.cols.iter().filter(|c| **c < first_theta).map(|c| c / 6).collect();
            assert_eq!(poses.len(), 24);
            assert!(poses.iter().all(|k| (obs.segment - 1..=obs.segment + 2).contains(k)));
        }
        // perturbing control pose 0 leaves the last segment untouched
        let last = p.trajectory().n() - 2;
        let mut delta = DVector::zeros(p.dim());
        delta.fixed_rows_mut::<6>(0).copy_from(&nalgebra::Vector6::from_element(0.01));
        let a = evaluate(&p, &DVector::zeros(p.dim())).unwrap();
        let b = evaluate(&p, &delta).unwrap();
        for (k, obs) in p.visual.iter().enumerate() {
            if obs.segment == last {
                assert_eq!(a.residuals[2 * k], b.residuals[2 * k]);
                assert_eq!(a.residuals[2 * k + 1], b.residuals[2 * k + 1]);
            }
        }
    }

    #[test]
    fn frozen_columns_absent() {
        let s = synthetic(6, 30, 20, false, ModelParams::default(), 9);
        let p = problem_from(&s, s.trajectory.clone(), s.params, FreezeFlags::trajectory_only());
        let j = jacobian(&p, &DVector::zeros(p.dim())).unwrap();
        assert_eq!(j.ncols, 6 * 6);
        assert!(j.blocks.iter().all(|b| b.cols.iter().all(|c| *c < 36)));
    }

    #[test]
    fn normal_equations_match_sparse_jacobian() {
        let s = synthetic(7, 80, 30, true, ModelParams::default(), 10);
        let p = problem_from(&s, perturbed(&s, 4, 0.01), s.params, FreezeFlags::default());
        let z = DVector::zeros(p.dim());
        let jd = jacobian(&p, &z).unwrap().to_dense();
        let r = evaluate(&p, &z).unwrap().residuals;
        let lin = linearize(&Linearizer::new(&p, p.trajectory(), p.params()));
        let h = jd.transpose() * &jd;
        let g = jd.transpose() * &r;
        let scale = h.amax();
        assert!((lin.h - h).amax() < 1e-12 * scale);
        assert!((lin.g - g).amax() < 1e-12 * scale.sqrt() * r.amax().max(1e-3));
    }

    #[test]
    fn association_kind_line() {
        let s = synthetic(6, 10, 0, true, ModelParams::default(), 11);
        assert!(s.associations.iter().all(|a| a.kind == PrimitiveKind::Line));
        let p = problem_from(&s, s.trajectory.clone(), s.params, FreezeFlags::default());
        assert_eq!(p.rows_per_event(), 1);
        assert_eq!(p.n_residuals(), 10);
    }
}
