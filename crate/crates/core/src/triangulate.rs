//! Fixed-camera intersection of single points with their information matrix.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use crate::error::{Error, Result};
use crate::model::{residual_and_jacobians, Camera, Observation, SharedCalibration};
use crate::solver::ConvergenceMonitor;

/// One measurement of the point from a camera held fixed.
#[derive(Debug, Clone, Copy)]
pub struct Ray<'a> {
    pub camera: &'a Camera,
    pub coords: Vector2<f64>,
    pub weight: Matrix2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntersectionOptions {
    pub lambda: f64,
    pub convergence_ratio: f64,
    pub grace_iterations: usize,
    pub max_iterations: usize,
    /// Smallest accepted eigenvalue ratio of the information matrix.
    pub min_condition: f64,
}

impl Default for IntersectionOptions {
    fn default() -> Self {
        IntersectionOptions {
            lambda: 1e-4,
            convergence_ratio: 1.01,
            grace_iterations: 1,
            max_iterations: 10,
            min_condition: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntersectionResult {
    pub coords: Vector3<f64>,
    /// Undamped `JᵀWJ` over all rays at `coords`.
    pub information_total: Matrix3<f64>,
    /// Contribution of each ray, in input order.
    pub contributions: Vec<Matrix3<f64>>,
    pub converged: bool,
    pub iterations: usize,
    /// `Σ vᵀWv` at `coords`.
    pub cost: f64,
}

struct Eval {
    cost: f64,
    hessian: Matrix3<f64>,
    gradient: Vector3<f64>,
    contributions: Vec<Matrix3<f64>>,
}

fn evaluate(x: &Vector3<f64>, rays: &[Ray], shared: Option<&SharedCalibration>) -> Option<Eval> {
    let mut e = Eval {
        cost: 0.0,
        hessian: Matrix3::zeros(),
        gradient: Vector3::zeros(),
        contributions: Vec::with_capacity(rays.len()),
    };
    for ray in rays {
        let obs = Observation::new(0, 0, ray.coords);
        let lin = residual_and_jacobians(ray.camera, shared, x, &obs).ok()?;
        let jw = lin.d_point.transpose() * ray.weight;
        let info = jw * lin.d_point;
        e.cost += (lin.residual.transpose() * ray.weight * lin.residual)[(0, 0)];
        e.hessian += info;
        e.gradient += jw * lin.residual;
        e.contributions.push(info);
    }
    e.cost.is_finite().then_some(e)
}

fn cost_at(x: &Vector3<f64>, rays: &[Ray], shared: Option<&SharedCalibration>) -> f64 {
    let mut cost = 0.0;
    for ray in rays {
        match crate::model::project(ray.camera, shared, x) {
            Ok(p) => {
                let v = p - ray.coords;
                cost += (v.transpose() * ray.weight * v)[(0, 0)];
            }
            Err(_) => return f64::INFINITY,
        }
    }
    cost
}

/// Levenberg-Marquardt over the three point coordinates with all cameras fixed.
pub fn intersect_point(
    point: usize,
    start: Vector3<f64>,
    rays: &[Ray],
    shared: Option<&SharedCalibration>,
    options: &IntersectionOptions,
) -> Result<IntersectionResult> {
    let diverged = |reason| Error::IntersectionDiverged { point, reason };
    if rays.len() < 2 {
        return Err(diverged("fewer than two observations"));
    }
    let mut x = start;
    let mut eval = evaluate(&x, rays, shared).ok_or_else(|| diverged("projection undefined at the start"))?;
    let initial = eval.cost;
    let mut monitor = ConvergenceMonitor::new(initial.sqrt(), options.convergence_ratio, options.grace_iterations);
    let mut lambda = options.lambda;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < options.max_iterations {
        iterations += 1;
        let mut accepted = false;
        while lambda <= 1e6 {
            let mut h = eval.hessian;
            for c in 0..3 {
                h[(c, c)] *= 1.0 + lambda;
            }
            let Some(step) = h.cholesky().map(|c| c.solve(&(-eval.gradient))) else {
                lambda *= 10.0;
                continue;
            };
            let trial = x + step;
            let cost = cost_at(&trial, rays, shared);
            if cost < eval.cost {
                x = trial;
                eval = evaluate(&x, rays, shared).ok_or_else(|| diverged("projection undefined"))?;
                lambda = (lambda / 10.0).max(1e-6);
                accepted = true;
                break;
            }
            lambda *= 10.0;
        }
        if !accepted || monitor.update(eval.cost.sqrt()) {
            converged = true;
            break;
        }
    }
    if !x.iter().all(|v| v.is_finite()) {
        return Err(diverged("non-finite coordinates"));
    }
    if !converged && eval.cost >= initial && initial > 0.0 {
        return Err(diverged("cost not reduced"));
    }
    let info = eval.hessian;
    let eig = info.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if !(hi > 0.0) || lo < options.min_condition * hi {
        return Err(diverged("ill-conditioned information"));
    }
    Ok(IntersectionResult {
        coords: x,
        information_total: info,
        contributions: eval.contributions,
        converged,
        iterations,
        cost: eval.cost,
    })
}

/// Information and per-ray contributions at `x` without moving the point.
pub fn information_at(
    point: usize,
    x: Vector3<f64>,
    rays: &[Ray],
    shared: Option<&SharedCalibration>,
) -> Result<IntersectionResult> {
    let eval = evaluate(&x, rays, shared).ok_or(Error::IntersectionDiverged {
        point,
        reason: "projection undefined",
    })?;
    Ok(IntersectionResult {
        coords: x,
        information_total: eval.hessian,
        contributions: eval.contributions,
        converged: false,
        iterations: 0,
        cost: eval.cost,
    })
}

/// Information from the rays whose camera lies outside sub-block `l`.
/// `ray_sub_block[i]` is the sub-block of the camera behind ray `i`.
pub fn reduced_information(result: &IntersectionResult, ray_sub_block: &[usize], l: usize) -> Matrix3<f64> {
    result
        .contributions
        .iter()
        .zip(ray_sub_block)
        .filter(|(_, &s)| s != l)
        .fold(Matrix3::zeros(), |acc, (c, _)| acc + c)
}
