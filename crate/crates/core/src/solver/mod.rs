//! Levenberg-Marquardt bundle adjustment over the reduced camera system.

mod normal;
mod pcg;

pub use normal::{back_substitute, build_normal_system, schur_reduce, Coupling, Layout, NormalSystem, Pattern, ReducedSystem};
pub use pcg::{pcg_solve, PcgSolution};

use nalgebra::{DMatrix, Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::model::{self, Block, Camera, SharedCalibration, SlotVector, SHARED_DIMS};

const LAMBDA_FLOOR: f64 = 1e-6;
const LAMBDA_CAP: f64 = 1e6;
const MAX_COVARIANCE_CAMERAS: usize = 2000;

/// Soft constraint `‖X - target‖²_information` on one point.
#[derive(Debug, Clone, PartialEq)]
pub struct TiePointPrior {
    pub point: usize,
    pub target: Vector3<f64>,
    pub information: Matrix3<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjustOptions {
    pub lambda: f64,
    /// Stop once best/current σ₀ falls below this ratio.
    pub convergence_ratio: f64,
    /// Non-improving iterations tolerated before stopping.
    pub grace_iterations: usize,
    pub max_lm_iterations: usize,
    pub cg_tolerance: f64,
    /// Defaults to `10 · nodes`, at most 1000.
    pub cg_max_iterations: Option<usize>,
    pub covariance_lambda: f64,
}

impl Default for AdjustOptions {
    fn default() -> Self {
        AdjustOptions {
            lambda: 1e-4,
            convergence_ratio: 1.01,
            grace_iterations: 1,
            max_lm_iterations: 100,
            cg_tolerance: 1e-6,
            cg_max_iterations: None,
            covariance_lambda: 1e-6,
        }
    }
}

impl AdjustOptions {
    fn cg_cap(&self, nodes: usize) -> usize {
        self.cg_max_iterations.unwrap_or_else(|| (10 * nodes).clamp(1, 1000))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdjustReport {
    pub iterations: usize,
    pub sigma0: f64,
    pub initial_sigma0: f64,
    pub converged: bool,
    pub cg_iterations_total: usize,
    /// σ₀ after each LM iteration.
    pub history: Vec<f64>,
    pub deleted_observations: usize,
    pub deleted_points: usize,
}

/// Outcome of the convergence test shared by the LM loop and the consensus
/// outer loop: best/current ratio below a threshold, with grace iterations.
#[derive(Debug, Clone)]
pub struct ConvergenceMonitor {
    ratio: f64,
    grace: usize,
    best: f64,
    stalls: usize,
    initial: f64,
    above: usize,
}

impl ConvergenceMonitor {
    pub fn new(initial: f64, ratio: f64, grace: usize) -> Self {
        ConvergenceMonitor {
            ratio,
            grace,
            best: initial,
            stalls: 0,
            initial,
            above: 0,
        }
    }

    /// Records a new value; true once converged.
    /// Non-finite values are left to `diverging`.
    pub fn update(&mut self, current: f64) -> bool {
        if !current.is_finite() {
            return false;
        }
        if !self.best.is_finite() || self.best / current >= self.ratio {
            self.stalls = 0;
        } else {
            self.stalls += 1;
        }
        if self.best.is_nan() || current < self.best {
            self.best = current;
        }
        self.stalls > self.grace
    }

    /// True after the value stays above 10× the initial one three times running.
    pub fn diverging(&mut self, current: f64) -> bool {
        if !current.is_finite() || current > 10.0 * self.initial {
            self.above += 1;
        } else {
            self.above = 0;
        }
        self.above >= 3
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn initial(&self) -> f64 {
        self.initial
    }
}

/// Σ vᵀWv plus prior terms; infinite if any projection is undefined.
pub fn total_cost(block: &Block, priors: &[TiePointPrior]) -> f64 {
    let mut cost = model::weighted_cost(block).unwrap_or(f64::INFINITY);
    for p in priors {
        if block.points.get(p.point).is_some_and(|pt| pt.is_active()) {
            let d = block.points[p.point].coords - p.target;
            cost += (d.transpose() * p.information * d)[(0, 0)];
        }
    }
    cost
}

fn active_prior_count(block: &Block, priors: &[TiePointPrior]) -> usize {
    priors
        .iter()
        .filter(|p| block.points.get(p.point).is_some_and(|pt| pt.is_active()) && p.information.trace() > 0.0)
        .count()
}

/// Observations plus prior equations minus parameters, at least 1.
pub fn redundancy(block: &Block, layout: &Layout, priors: &[TiePointPrior]) -> i64 {
    let adj = block.adjacency();
    let prior_points: std::collections::HashSet<usize> = priors.iter().map(|p| p.point).collect();
    let points = (0..block.points.len())
        .filter(|&j| block.points[j].is_active() && (!adj.by_point[j].is_empty() || prior_points.contains(&j)))
        .count();
    let params = layout.free_count() + 3 * points - layout.gauge_point.is_some() as usize;
    let eqs = 2 * block.used_observation_count() + 3 * active_prior_count(block, priors);
    (eqs as i64 - params as i64).max(1)
}

struct Snapshot {
    cameras: Vec<Camera>,
    points: Vec<Vector3<f64>>,
    shared: Option<SharedCalibration>,
}

impl Snapshot {
    fn take(block: &Block) -> Self {
        Snapshot {
            cameras: block.cameras.clone(),
            points: block.points.iter().map(|p| p.coords).collect(),
            shared: block.shared_calibration,
        }
    }

    fn restore(self, block: &mut Block) {
        block.cameras = self.cameras;
        for (p, c) in block.points.iter_mut().zip(self.points) {
            p.coords = c;
        }
        block.shared_calibration = self.shared;
    }
}

fn apply_update(block: &mut Block, layout: &Layout, cameras: &[SlotVector], points: &[Vector3<f64>]) {
    for (i, cam) in block.cameras.iter_mut().enumerate() {
        let d = &cameras[i];
        if d.iter().any(|&v| v != 0.0) {
            cam.apply_increment(d.as_slice());
        }
    }
    if layout.shared {
        if let Some(cal) = &mut block.shared_calibration {
            let d = &cameras[layout.n_cameras];
            let mut a = cal.to_array();
            for (v, dv) in a.iter_mut().zip(d.iter().take(SHARED_DIMS)) {
                *v += dv;
            }
            *cal = SharedCalibration::from_array(a);
        }
    }
    for (p, d) in block.points.iter_mut().zip(points) {
        if p.is_active() {
            p.coords += d;
        }
    }
}

/// Marks observations whose projection is undefined as deleted.
pub(crate) fn drop_unprojectable(block: &mut Block) -> usize {
    let bad: Vec<usize> = (0..block.observations.len())
        .filter(|&k| block.is_used(k) && block.project_observation(k).is_err())
        .collect();
    for &k in &bad {
        block.observations[k].status = model::ObservationStatus::Deleted;
    }
    bad.len()
}

/// Adjusts `block` in place. Without priors the gauge is fixed by camera 0's
/// pose and one coordinate of the point farthest from it.
pub fn adjust(block: &mut Block, priors: &[TiePointPrior], options: &AdjustOptions) -> Result<AdjustReport> {
    block.validate()?;
    let mut report = AdjustReport {
        deleted_observations: drop_unprojectable(block),
        ..Default::default()
    };
    let fix_gauge = priors.is_empty();
    let mut layout = Layout::for_block(block, fix_gauge)?;
    let mut red = redundancy(block, &layout, priors) as f64;
    let mut cost = total_cost(block, priors);
    let sigma = |cost: f64, red: f64| (cost / red).sqrt();
    report.initial_sigma0 = sigma(cost, red);
    let mut monitor = ConvergenceMonitor::new(report.initial_sigma0, options.convergence_ratio, options.grace_iterations);

    let mut lambda = options.lambda;
    let mut accepts = 0;
    let mut pattern: Option<Pattern> = None;
    let mut lin = normal::linearize(block);
    let tiny = 1e-24 * (block.observations.len().max(1) as f64);

    while report.iterations < options.max_lm_iterations {
        if cost <= tiny {
            report.converged = true;
            break;
        }
        report.iterations += 1;
        let mut accepted = false;
        while lambda <= LAMBDA_CAP {
            let system = normal::assemble(block, &layout, priors, lambda, &lin);
            let pat = pattern.get_or_insert_with(|| Pattern::of(&system));
            let reduced = match schur_reduce(&system, pat) {
                Ok(r) => r,
                Err(Error::SingularPointBlock(j)) => {
                    let adj = block.adjacency();
                    report.deleted_observations += adj.by_point[j].len();
                    block.delete_point(j, &adj);
                    report.deleted_points += 1;
                    layout = Layout::for_block(block, fix_gauge)?;
                    red = redundancy(block, &layout, priors) as f64;
                    pattern = None;
                    lin = normal::linearize(block);
                    cost = total_cost(block, priors);
                    continue;
                }
                Err(e) => return Err(e),
            };
            let solution = match pcg_solve(&reduced, options.cg_tolerance, options.cg_cap(layout.n_nodes())) {
                Ok(s) => s,
                Err(Error::CgStagnated { iterations, .. }) => {
                    report.cg_iterations_total += iterations;
                    lambda *= 10.0;
                    accepts = 0;
                    continue;
                }
                Err(e) => return Err(e),
            };
            report.cg_iterations_total += solution.iterations;
            let dpoints = back_substitute(&system, &reduced, &solution.x);
            let snapshot = Snapshot::take(block);
            apply_update(block, &layout, &solution.x, &dpoints);
            let trial = total_cost(block, priors);
            if trial < cost {
                cost = trial;
                accepted = true;
                accepts += 1;
                if accepts >= 2 {
                    lambda = (lambda / 10.0).max(LAMBDA_FLOOR);
                    accepts = 0;
                }
                lin = normal::linearize(block);
                break;
            }
            snapshot.restore(block);
            lambda *= 10.0;
            accepts = 0;
        }
        if !accepted {
            // no descent direction left at any admissible damping
            report.converged = true;
            break;
        }
        let s = sigma(cost, red);
        report.history.push(s);
        if monitor.diverging(s) {
            return Err(Error::DivergenceDetected {
                sigma0: s,
                initial: report.initial_sigma0,
            });
        }
        if monitor.update(s) {
            report.converged = true;
            break;
        }
    }
    report.sigma0 = sigma(cost, red);
    Ok(report)
}

/// Dense covariance of the camera-side parameters in slot layout, from the
/// reduced camera system damped by `covariance_lambda`.
pub fn camera_covariance(block: &Block, options: &AdjustOptions) -> Result<DMatrix<f64>> {
    if block.cameras.len() > MAX_COVARIANCE_CAMERAS {
        return Err(Error::InvalidBlock(format!(
            "covariance limited to {MAX_COVARIANCE_CAMERAS} cameras, block has {}",
            block.cameras.len()
        )));
    }
    let layout = Layout::for_block(block, true)?;
    let system = build_normal_system(block, &layout, &[], options.covariance_lambda);
    let reduced = schur_reduce(&system, &Pattern::of(&system))?;
    let (s, _) = reduced.dense();
    s.try_inverse()
        .ok_or_else(|| Error::InvalidBlock("reduced camera system is singular".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blockio::random_block;
    use crate::model::{CameraModel, Point3D, SLOT};
    use nalgebra::DVector;

    /// Dense design matrix and weight in the slot layout of `NormalSystem::dense`.
    fn dense_design(block: &Block, layout: &Layout) -> (DMatrix<f64>, DMatrix<f64>, DVector<f64>) {
        let nn = layout.n_nodes();
        let used: Vec<usize> = (0..block.observations.len()).filter(|&k| block.is_used(k)).collect();
        let cols = nn * SLOT + 3 * block.points.len();
        let mut a = DMatrix::zeros(2 * used.len(), cols);
        let mut w = DMatrix::zeros(2 * used.len(), 2 * used.len());
        let mut v = DVector::zeros(2 * used.len());
        for (row, &k) in used.iter().enumerate() {
            let obs = &block.observations[k];
            let l = model::residual_and_jacobians(
                &block.cameras[obs.camera],
                block.shared_calibration.as_ref(),
                &block.points[obs.point].coords,
                obs,
            )
            .unwrap();
            let r = 2 * row;
            for c in 0..SLOT {
                if layout.free[obs.camera][c] {
                    a.view_mut((r, obs.camera * SLOT + c), (2, 1)).copy_from(&l.d_camera.column(c));
                }
            }
            if let Some(d) = l.d_shared {
                let s = layout.n_cameras;
                for c in 0..SHARED_DIMS {
                    a.view_mut((r, s * SLOT + c), (2, 1)).copy_from(&d.column(c));
                }
            }
            for c in 0..3 {
                if layout.gauge_point != Some((obs.point, c)) {
                    a.view_mut((r, nn * SLOT + 3 * obs.point + c), (2, 1)).copy_from(&l.d_point.column(c));
                }
            }
            w.view_mut((r, r), (2, 2)).copy_from(&obs.weight);
            v.rows_mut(r, 2).copy_from(&l.residual);
        }
        (a, w, v)
    }

    fn pad_identity(n: &mut DMatrix<f64>, layout: &Layout, block: &Block, system: &NormalSystem) {
        for a in 0..layout.n_nodes() {
            for c in 0..SLOT {
                if !layout.free[a][c] {
                    n[(a * SLOT + c, a * SLOT + c)] = 1.0;
                }
            }
        }
        for j in 0..block.points.len() {
            let o = layout.n_nodes() * SLOT + 3 * j;
            for c in 0..3 {
                if !system.point_in_system[j] || layout.gauge_point == Some((j, c)) {
                    n[(o + c, o + c)] = 1.0;
                }
            }
        }
    }

    #[test]
    fn assembly_matches_dense_product() {
        for model in [CameraModel::PoseOnly, CameraModel::PerCameraFocalRadial, CameraModel::SharedCalibration] {
            let block = random_block(5, 2, 4, model);
            let layout = Layout::for_block(&block, true).unwrap();
            let system = build_normal_system(&block, &layout, &[], 0.0);
            let (a, w, v) = dense_design(&block, &layout);
            let mut n = a.transpose() * &w * &a;
            pad_identity(&mut n, &layout, &block, &system);
            let rhs = -(a.transpose() * &w * v);
            let tol = 1e-10 * (1.0 + rhs.amax());
            let (dn, dr) = system.dense();
            assert!((dn - n).amax() < tol, "{model:?}");
            assert!((dr - rhs).amax() < tol);
        }
    }

    #[test]
    fn prior_only_point_block() {
        let mut block = random_block(1, 2, 4, CameraModel::PoseOnly);
        block.observations.clear();
        let info = Matrix3::new(4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0);
        let prior = TiePointPrior {
            point: 1,
            target: block.points[1].coords + Vector3::new(0.1, -0.2, 0.3),
            information: info,
        };
        let layout = Layout::for_block(&block, false).unwrap();
        let lambda = 1e-4;
        let system = build_normal_system(&block, &layout, std::slice::from_ref(&prior), lambda);
        let mut damped = info;
        for c in 0..3 {
            damped[(c, c)] *= 1.0 + lambda;
        }
        assert_eq!(system.point_diag[1], damped);
        assert_eq!(system.point_rhs[1], info * (prior.target - block.points[1].coords));
    }

    #[test]
    fn zero_prior_is_additive_identity() {
        let block = random_block(2, 3, 6, CameraModel::PerCameraFocalRadial);
        let layout = Layout::for_block(&block, false).unwrap();
        let plain = build_normal_system(&block, &layout, &[], 0.0);
        let prior = TiePointPrior {
            point: 0,
            target: Vector3::new(1.0, 2.0, 3.0),
            information: Matrix3::zeros(),
        };
        let with = build_normal_system(&block, &layout, &[prior], 0.0);
        assert_eq!(plain.dense(), with.dense());
    }

    #[test]
    fn scalar_prior_equals_hand_differentiated_penalty() {
        // ρ/2‖x - (z - u)‖² differentiated: gradient ρ(x - z + u), Hessian ρI;
        // the normal equations are in the unhalved cost, hence 2× on both.
        let block = random_block(3, 3, 5, CameraModel::PoseOnly);
        let layout = Layout::for_block(&block, false).unwrap();
        let rho = 200.0;
        let z = Vector3::new(0.3, 0.1, -0.2);
        let u = Vector3::new(0.01, -0.02, 0.005);
        let j = 2;
        let base = build_normal_system(&block, &layout, &[], 0.0);
        let prior = TiePointPrior {
            point: j,
            target: z - u,
            information: Matrix3::identity() * (rho / 2.0),
        };
        let sys = build_normal_system(&block, &layout, &[prior], 0.0);
        let x = block.points[j].coords;
        let hess = Matrix3::identity() * rho;
        let grad = (x - z + u) * rho;
        assert!((sys.point_diag[j] - base.point_diag[j] - hess * 0.5).amax() < 1e-12 * rho);
        assert!((sys.point_rhs[j] - base.point_rhs[j] + grad * 0.5).amax() < 1e-12 * rho);
    }

    #[test]
    fn pattern_follows_shared_points() {
        let mut block = random_block(4, 4, 6, CameraModel::PoseOnly);
        // cameras 0 and 3 share nothing
        block.observations.retain(|o| !(o.camera == 3 && o.point < 3) && !(o.camera == 0 && o.point >= 3));
        let layout = Layout::for_block(&block, false).unwrap();
        let system = build_normal_system(&block, &layout, &[], 0.0);
        let pattern = Pattern::of(&system);
        let adj = block.adjacency();
        for a in 0..4 {
            for b in a + 1..4 {
                let share = adj.by_camera[a]
                    .iter()
                    .any(|&k| adj.by_camera[b].iter().any(|&m| block.observations[m].point == block.observations[k].point));
                assert_eq!(pattern.index(a, b).is_some(), share, "{a} {b}");
            }
        }
        assert!(pattern.index(0, 3).is_none());
    }

    fn solve_dense(block: &Block, lambda: f64) -> (DVector<f64>, Vec<SlotVector>, Vec<Vector3<f64>>) {
        let layout = Layout::for_block(block, true).unwrap();
        let system = build_normal_system(block, &layout, &[], lambda);
        let reduced = schur_reduce(&system, &Pattern::of(&system)).unwrap();
        let sol = pcg_solve(&reduced, 1e-14, 10_000).unwrap();
        let dp = back_substitute(&system, &reduced, &sol.x);
        let (n, r) = system.dense();
        let full = n.lu().solve(&r).unwrap();
        (full, sol.x, dp)
    }

    #[test]
    fn schur_and_back_substitution_match_joint_solve() {
        for (seed, model) in [(7, CameraModel::PoseOnly), (8, CameraModel::PerCameraFocalRadial), (9, CameraModel::SharedCalibration)] {
            let block = random_block(seed, 2, 4, model);
            let (full, cams, pts) = solve_dense(&block, 1e-3);
            let nn = cams.len();
            let mut mine = DVector::zeros(full.len());
            for (a, c) in cams.iter().enumerate() {
                mine.rows_mut(a * SLOT, SLOT).copy_from(c);
            }
            for (j, p) in pts.iter().enumerate() {
                mine.rows_mut(nn * SLOT + 3 * j, 3).copy_from(p);
            }
            assert!((&mine - &full).norm() < 1e-8 * full.norm(), "{model:?}");
        }
    }

    #[test]
    fn schur_without_coupling_is_camera_block() {
        let mut block = random_block(1, 1, 2, CameraModel::PoseOnly);
        block.observations.clear();
        let layout = Layout::for_block(&block, false).unwrap();
        let system = build_normal_system(&block, &layout, &[], 0.0);
        let reduced = schur_reduce(&system, &Pattern::of(&system)).unwrap();
        assert_eq!(reduced.diag, system.node_diag);
        assert_eq!(reduced.rhs, system.node_rhs);
    }

    #[test]
    fn single_camera_single_point_hand_schur() {
        use nalgebra::SMatrix;
        // hand-set blocks: N_CC = 2I, N_XX = 4I, coupling rows e0,e1,e2 → identity
        let mut coupling = SMatrix::<f64, SLOT, 3>::zeros();
        coupling[(0, 0)] = 1.0;
        coupling[(1, 1)] = 1.0;
        coupling[(2, 2)] = 1.0;
        let layout = Layout {
            n_cameras: 1,
            shared: false,
            free: vec![[true, true, true, true, true, true, false, false]],
            gauge_point: None,
        };
        let mut diag = model::SlotMatrix::identity() * 2.0;
        diag[(6, 6)] = 1.0;
        diag[(7, 7)] = 1.0;
        let system = NormalSystem {
            layout,
            node_diag: vec![diag],
            node_rhs: vec![SlotVector::from_element(1.0)],
            node_offdiag: Default::default(),
            point_diag: vec![Matrix3::identity() * 4.0],
            point_rhs: vec![Vector3::new(4.0, 8.0, 12.0)],
            point_in_system: vec![true],
            coupling_start: vec![0, 1],
            couplings: vec![(0, coupling)],
        };
        let reduced = schur_reduce(&system, &Pattern::of(&system)).unwrap();
        let s = &reduced.diag[0];
        for c in 0..3 {
            assert_eq!(s[(c, c)], 2.0 - 0.25);
        }
        for c in 3..6 {
            assert_eq!(s[(c, c)], 2.0);
        }
        assert_eq!(reduced.rhs[0][0], 1.0 - 1.0);
        assert_eq!(reduced.rhs[0][1], 1.0 - 2.0);
        assert_eq!(reduced.rhs[0][2], 1.0 - 3.0);
        assert_eq!(reduced.rhs[0][3], 1.0);
    }

    fn diag_system(blocks: Vec<model::SlotMatrix>, rhs: Vec<SlotVector>) -> ReducedSystem {
        let n = blocks.len();
        ReducedSystem {
            pattern: Pattern {
                row_start: vec![0; n + 1],
                cols: Vec::new(),
            },
            diag: blocks,
            offdiag: Vec::new(),
            rhs,
            point_inverse: Vec::new(),
        }
    }

    #[test]
    fn pcg_identity_and_zero_rhs() {
        let rhs = vec![SlotVector::from_fn(|i, _| i as f64 + 1.0); 3];
        let s = diag_system(vec![model::SlotMatrix::identity(); 3], rhs.clone());
        let sol = pcg_solve(&s, 1e-6, 10).unwrap();
        assert_eq!(sol.iterations, 1);
        assert_eq!(sol.x, rhs);
        let s = diag_system(vec![model::SlotMatrix::identity(); 3], vec![SlotVector::zeros(); 3]);
        let sol = pcg_solve(&s, 1e-6, 10).unwrap();
        assert_eq!(sol.iterations, 0);
        assert!(sol.x.iter().all(|v| v.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn pcg_random_spd_matches_dense() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let n = 5 * SLOT;
        let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        let spd = &a * a.transpose() + DMatrix::identity(n, n) * n as f64 * 0.1;
        let b = DVector::from_fn(n, |_, _| rng.random_range(-1.0..1.0));
        let mut row_start = Vec::new();
        let mut cols = Vec::new();
        let mut off = Vec::new();
        for i in 0..5 {
            row_start.push(cols.len());
            for j in i + 1..5 {
                cols.push(j);
                off.push(spd.fixed_view::<SLOT, SLOT>(i * SLOT, j * SLOT).into_owned());
            }
        }
        row_start.push(cols.len());
        let s = ReducedSystem {
            pattern: Pattern { row_start, cols },
            diag: (0..5).map(|i| spd.fixed_view::<SLOT, SLOT>(i * SLOT, i * SLOT).into_owned()).collect(),
            offdiag: off,
            rhs: (0..5).map(|i| b.fixed_rows::<SLOT>(i * SLOT).into_owned()).collect(),
            point_inverse: Vec::new(),
        };
        let sol = pcg_solve(&s, 1e-12, 1000).unwrap();
        let dense = spd.cholesky().unwrap().solve(&b);
        let mine = DVector::from_iterator(n, sol.x.iter().flat_map(|v| v.iter().copied()));
        assert!((mine - &dense).norm() < 1e-6 * dense.norm());
    }

    #[test]
    fn huge_prior_pulls_point_onto_target() {
        let mut block = random_block(3, 2, 3, CameraModel::PoseOnly);
        let target = block.points[0].coords + Vector3::new(0.05, -0.03, 0.02);
        let prior = TiePointPrior {
            point: 0,
            target,
            information: Matrix3::identity() * 1e12,
        };
        block.observations.retain(|o| o.point != 0);
        let layout = Layout::for_block(&block, false).unwrap();
        let system = build_normal_system(&block, &layout, std::slice::from_ref(&prior), 0.0);
        let reduced = schur_reduce(&system, &Pattern::of(&system)).unwrap();
        let zero = vec![SlotVector::zeros(); layout.n_nodes()];
        let dp = back_substitute(&system, &reduced, &zero);
        assert!((dp[0] - (target - block.points[0].coords)).amax() < 1e-9);
    }

    #[test]
    fn ground_truth_is_a_fixed_point() {
        let mut block = random_block(11, 6, 30, CameraModel::PoseOnly);
        for k in 0..block.observations.len() {
            let p = block.project_observation(k).unwrap();
            block.observations[k].coords = p;
        }
        let report = adjust(&mut block, &[], &AdjustOptions::default()).unwrap();
        assert!(report.iterations <= 2);
        assert!(report.sigma0 < 1e-8);
        assert!(report.converged);
    }

    #[test]
    fn single_camera_keeps_pose() {
        let mut block = random_block(12, 1, 8, CameraModel::PoseOnly);
        let before = block.cameras[0].clone();
        for p in &mut block.points {
            p.coords += Vector3::new(0.01, 0.02, -0.01);
        }
        let report = adjust(&mut block, &[], &AdjustOptions::default()).unwrap();
        assert!(report.converged);
        assert_eq!(block.cameras[0], before);
    }

    #[test]
    fn accepted_steps_never_raise_cost() {
        for model in [CameraModel::PoseOnly, CameraModel::PerCameraFocalRadial, CameraModel::SharedCalibration] {
            let mut block = random_block(21, 6, 40, model);
            let report = adjust(&mut block, &[], &AdjustOptions::default()).unwrap();
            for w in report.history.windows(2) {
                assert!(w[1] <= w[0]);
            }
            assert!(report.sigma0 <= report.initial_sigma0);
            assert!(report.converged, "{model:?}");
        }
    }

    #[test]
    fn camera_permutation_does_not_change_sigma0() {
        let block = random_block(31, 5, 30, CameraModel::PoseOnly);
        let mut a = block.clone();
        let ra = adjust(&mut a, &[], &AdjustOptions::default()).unwrap();
        // keep camera 0 in place so the gauge is the same
        let perm = [0usize, 3, 1, 4, 2];
        let mut b = block.clone();
        b.cameras = perm.iter().map(|&i| block.cameras[i].clone()).collect();
        let inv: Vec<usize> = (0..5).map(|i| perm.iter().position(|&p| p == i).unwrap()).collect();
        for o in &mut b.observations {
            o.camera = inv[o.camera];
        }
        let rb = adjust(&mut b, &[], &AdjustOptions::default()).unwrap();
        assert!((ra.sigma0 - rb.sigma0).abs() < 1e-9);
    }

    #[test]
    fn gauss_newton_error_is_second_order() {
        let truth = {
            let mut b = random_block(41, 4, 20, CameraModel::PoseOnly);
            for k in 0..b.observations.len() {
                b.observations[k].coords = b.project_observation(k).unwrap();
            }
            b
        };
        let layout = Layout::for_block(&truth, true).unwrap();
        let (gauge_j, _) = layout.gauge_point.unwrap();
        let step_error = |eps: f64| {
            let mut b = truth.clone();
            for (i, c) in b.cameras.iter_mut().enumerate().skip(1) {
                c.translation += Vector3::new(eps, -eps * 0.5, eps * 0.3 * i as f64);
            }
            for (j, p) in b.points.iter_mut().enumerate() {
                if j != gauge_j {
                    p.coords += Vector3::new(-eps * 0.2, eps, 0.4 * eps * (j % 3) as f64);
                }
            }
            let system = build_normal_system(&b, &layout, &[], 0.0);
            let reduced = schur_reduce(&system, &Pattern::of(&system)).unwrap();
            let sol = pcg_solve(&reduced, 1e-15, 10_000).unwrap();
            let dp = back_substitute(&system, &reduced, &sol.x);
            apply_update(&mut b, &layout, &sol.x, &dp);
            b.points
                .iter()
                .zip(&truth.points)
                .map(|(p, q)| (p.coords - q.coords).norm())
                .fold(0.0, f64::max)
        };
        let e1 = step_error(1e-3);
        let e2 = step_error(5e-4);
        let ratio = e1 / e2;
        assert!(ratio > 3.0 && ratio < 5.5, "ratio {ratio}");
    }

    #[test]
    fn undefined_projection_observations_are_dropped() {
        let mut block = random_block(51, 3, 10, CameraModel::PoseOnly);
        block.points.push(Point3D::new(block.cameras[1].center()));
        let j = block.points.len() - 1;
        block.observations.push(model::Observation::new(1, j, nalgebra::Vector2::zeros()));
        block.observations.push(model::Observation::new(2, j, nalgebra::Vector2::zeros()));
        let report = adjust(&mut block, &[], &AdjustOptions::default()).unwrap();
        assert!(report.deleted_observations >= 1);
    }
}
