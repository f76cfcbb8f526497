//! Outlier handling with MAD-scaled normalized residuals.
//!
//! The serial variant down-weights and then deletes single observations.
//! The parallel variant works inside point intersection and removes whole
//! points.

use nalgebra::{Matrix2, Vector3};

use crate::error::Result;
use crate::model::{whiten, Block, ObservationStatus, SharedCalibration};
use crate::solver::{adjust, AdjustOptions};
use crate::triangulate::{intersect_point, IntersectionOptions, IntersectionResult, Ray};

#[derive(Debug, Clone, PartialEq)]
pub struct RobustConfig {
    pub t_v_serial: f64,
    pub t_v_parallel: f64,
    pub downweight_factor: f64,
    pub mad_scale: f64,
    /// Estimate σ̂ per camera instead of once for the block.
    pub per_camera: bool,
    pub max_rounds: usize,
    /// Cameras with fewer observations use the block-wide σ̂.
    pub min_group: usize,
}

impl Default for RobustConfig {
    fn default() -> Self {
        RobustConfig {
            t_v_serial: 3.0,
            t_v_parallel: 4.0,
            downweight_factor: 1e-4,
            mad_scale: 1.4826,
            per_camera: true,
            max_rounds: 10,
            min_group: 10,
        }
    }
}

const SIGMA_FLOOR: f64 = 1e-12;

fn median(values: &mut [f64]) -> f64 {
    let n = values.len();
    if n == 0 {
        return 0.0;
    }
    values.sort_unstable_by(f64::total_cmp);
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// `scale · median(|r - median(r)|)`, floored at 1e-12.
pub fn mad_sigma(values: &[f64], scale: f64) -> f64 {
    let mut v = values.to_vec();
    let m = median(&mut v);
    let mut dev: Vec<f64> = values.iter().map(|r| (r - m).abs()).collect();
    (scale * median(&mut dev)).max(SIGMA_FLOOR)
}

/// Weight an observation had before any robust down-weighting.
pub fn original_weight(block: &Block, k: usize, config: &RobustConfig) -> Matrix2<f64> {
    let o = &block.observations[k];
    if o.status == ObservationStatus::DownWeighted {
        o.weight / config.downweight_factor
    } else {
        o.weight
    }
}

/// σ̂ per camera from the whitened residual components of its observations.
pub fn camera_sigmas(block: &Block, config: &RobustConfig) -> Vec<f64> {
    let m = block.cameras.len();
    let mut groups: Vec<Vec<f64>> = vec![Vec::new(); m];
    let mut all = Vec::new();
    for k in 0..block.observations.len() {
        if !block.is_used(k) {
            continue;
        }
        let Ok(p) = block.project_observation(k) else { continue };
        let o = &block.observations[k];
        let w = whiten(&original_weight(block, k, config), &(p - o.coords));
        groups[o.camera].extend([w.x, w.y]);
        all.extend([w.x, w.y]);
    }
    let global = mad_sigma(&all, config.mad_scale);
    groups
        .iter()
        .map(|g| {
            if config.per_camera && g.len() >= 2 * config.min_group {
                mad_sigma(g, config.mad_scale)
            } else {
                global
            }
        })
        .collect()
}

/// `sqrt(vᵀWv / 2) / σ̂` per observation, with the original weight; NaN for
/// observations not in use or without a projection.
pub fn normalized_residuals(block: &Block, sigmas: &[f64], config: &RobustConfig) -> Vec<f64> {
    (0..block.observations.len())
        .map(|k| {
            if !block.is_used(k) {
                return f64::NAN;
            }
            let o = &block.observations[k];
            match block.project_observation(k) {
                Ok(p) => {
                    let v = p - o.coords;
                    let q = (v.transpose() * original_weight(block, k, config) * v)[(0, 0)];
                    (q / 2.0).sqrt() / sigmas[o.camera]
                }
                Err(_) => f64::INFINITY,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DeletionReport {
    pub rounds: usize,
    pub deleted_observations: usize,
    pub deleted_points: usize,
    /// Observation indices removed, in deletion order.
    pub deleted: Vec<usize>,
}

/// Flags, per point, the worst observation above the threshold.
fn flag_worst_per_point(block: &Block, vbar: &[f64], threshold: f64) -> Vec<usize> {
    let adj = block.adjacency();
    let mut flags = Vec::new();
    for obs in &adj.by_point {
        let worst = obs
            .iter()
            .filter(|&&k| block.observations[k].status == ObservationStatus::Active)
            .filter(|&&k| vbar[k] > threshold)
            .max_by(|&&a, &&b| vbar[a].total_cmp(&vbar[b]));
        if let Some(&k) = worst {
            flags.push(k);
        }
    }
    flags.sort_unstable();
    flags
}

/// Down-weights the worst observation of each point, re-adjusts, then deletes
/// the flagged observations and points left with fewer than two. Repeats
/// until nothing is flagged.
pub fn serial_robust_pass(block: &mut Block, config: &RobustConfig, options: &AdjustOptions) -> Result<DeletionReport> {
    let mut report = DeletionReport::default();
    for _ in 0..config.max_rounds {
        let sigmas = camera_sigmas(block, config);
        let vbar = normalized_residuals(block, &sigmas, config);
        let flags = flag_worst_per_point(block, &vbar, config.t_v_serial);
        if flags.is_empty() {
            break;
        }
        report.rounds += 1;
        for &k in &flags {
            let o = &mut block.observations[k];
            o.weight *= config.downweight_factor;
            o.status = ObservationStatus::DownWeighted;
        }
        adjust(block, &[], options)?;
        for &k in &flags {
            if block.observations[k].status == ObservationStatus::DownWeighted {
                block.observations[k].status = ObservationStatus::Deleted;
                block.observations[k].weight /= config.downweight_factor;
                report.deleted_observations += 1;
                report.deleted.push(k);
            }
        }
        let adj = block.adjacency();
        for (j, obs) in adj.by_point.iter().enumerate() {
            if block.points[j].is_active() && obs.len() < 2 {
                for &k in obs {
                    report.deleted_observations += 1;
                    report.deleted.push(k);
                }
                block.delete_point(j, &adj);
                report.deleted_points += 1;
            }
        }
    }
    if report.rounds > 0 {
        adjust(block, &[], options)?;
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct RobustIntersection {
    pub result: IntersectionResult,
    /// Rays down-weighted during the second intersection.
    pub flagged: Vec<usize>,
    /// Some ray still exceeds the threshold after re-intersection.
    pub contaminated: bool,
}

fn ray_vbar(x: &Vector3<f64>, rays: &[Ray], weights: &[Matrix2<f64>], sigmas: &[f64], shared: Option<&SharedCalibration>) -> Vec<f64> {
    rays.iter()
        .zip(weights)
        .zip(sigmas)
        .map(|((r, w), s)| match crate::model::project(r.camera, shared, x) {
            Ok(p) => {
                let v = p - r.coords;
                ((v.transpose() * w * v)[(0, 0)] / 2.0).sqrt() / s
            }
            Err(_) => f64::INFINITY,
        })
        .collect()
}

/// Intersection with robust weighting: rays beyond `t_v_parallel·σ̂` are
/// down-weighted and the point re-intersected. If any ray still exceeds the
/// threshold the point counts as contaminated.
pub fn robust_intersect(
    point: usize,
    start: Vector3<f64>,
    rays: &[Ray],
    ray_sigmas: &[f64],
    shared: Option<&SharedCalibration>,
    config: &RobustConfig,
    options: &IntersectionOptions,
) -> Result<RobustIntersection> {
    let first = intersect_point(point, start, rays, shared, options)?;
    let weights: Vec<Matrix2<f64>> = rays.iter().map(|r| r.weight).collect();
    let vbar = ray_vbar(&first.coords, rays, &weights, ray_sigmas, shared);
    let flagged: Vec<usize> = (0..rays.len()).filter(|&i| vbar[i] > config.t_v_parallel).collect();
    if flagged.is_empty() {
        return Ok(RobustIntersection {
            result: first,
            flagged,
            contaminated: false,
        });
    }
    let mut damped: Vec<Ray> = rays.to_vec();
    for &i in &flagged {
        damped[i].weight *= config.downweight_factor;
    }
    let second = intersect_point(point, first.coords, &damped, shared, options);
    let (coords, contaminated) = match &second {
        Ok(s) => {
            let after = ray_vbar(&s.coords, rays, &weights, ray_sigmas, shared);
            (s.coords, after.iter().any(|&v| v > config.t_v_parallel))
        }
        Err(_) => (first.coords, true),
    };
    // flags that cleared were spurious: re-evaluate at the clean position
    let result = if contaminated {
        first
    } else {
        intersect_point(point, coords, rays, shared, options)?
    };
    Ok(RobustIntersection {
        result,
        flagged,
        contaminated,
    })
}
