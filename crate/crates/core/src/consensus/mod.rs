//! Parallel adjustment by consensus: the block is split into camera
//! sub-blocks that are adjusted concurrently and kept consistent through the
//! tie points they share.
//!
//! Plain mode is ADMM with a scalar penalty ρ, averaging and dual updates.
//! Extended mode alternates sub-block resection, with tie points treated as
//! weighted control points, and fixed-camera intersection of every point.

mod trace;

pub use trace::{ConvergenceTrace, SubBlockStat, TraceRow, TRACE_HEADER};

use nalgebra::{Matrix3, Vector3};

use crate::error::{Error, Result};
use crate::model::{self, Block, ObservationStatus, SharedCalibration, SHARED_DIMS};
use crate::par::{self, Stopwatch};
use crate::partition::Partition;
use crate::robust::{camera_sigmas, normalized_residuals, robust_intersect, serial_robust_pass, RobustConfig};
use crate::solver::{adjust, AdjustOptions, AdjustReport, ConvergenceMonitor, TiePointPrior};
use crate::triangulate::{information_at, intersect_point, reduced_information, IntersectionOptions, IntersectionResult, Ray};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConsensusMode {
    Plain,
    Extended,
    /// Extended, weighting tie points with the information of all cameras.
    ExtendedAllCameras,
    /// Extended targets with a scalar ρ·I weight.
    ExtendedScalar,
    /// Plain averaging and duals with information-based weights.
    PlainRefined,
}

impl ConsensusMode {
    pub const ALL: [ConsensusMode; 5] = [
        ConsensusMode::Plain,
        ConsensusMode::Extended,
        ConsensusMode::ExtendedAllCameras,
        ConsensusMode::ExtendedScalar,
        ConsensusMode::PlainRefined,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            ConsensusMode::Plain => "plain",
            ConsensusMode::Extended => "extended",
            ConsensusMode::ExtendedAllCameras => "extended_all_cameras",
            ConsensusMode::ExtendedScalar => "extended_scalar",
            ConsensusMode::PlainRefined => "plain_refined",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.tag() == tag)
    }

    /// Tie points are re-estimated by intersection rather than averaging.
    pub fn intersects(self) -> bool {
        matches!(
            self,
            ConsensusMode::Extended | ConsensusMode::ExtendedAllCameras | ConsensusMode::ExtendedScalar
        )
    }

    pub fn uses_rho(self) -> bool {
        matches!(self, ConsensusMode::Plain | ConsensusMode::ExtendedScalar)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusConfig {
    pub mode: ConsensusMode,
    pub threads: usize,
    pub rho: f64,
    pub rho_growth: f64,
    pub outer_convergence_ratio: f64,
    pub grace_iterations: usize,
    pub max_outer_iterations: usize,
    pub far_coordinate_limit: f64,
    pub robust: Option<RobustConfig>,
    pub adjust: AdjustOptions,
    pub intersection: IntersectionOptions,
}

impl Default for ConsensusConfig {
    fn default() -> Self {
        ConsensusConfig {
            mode: ConsensusMode::Extended,
            threads: 1,
            rho: 1000.0,
            rho_growth: 1.01,
            outer_convergence_ratio: 1.01,
            grace_iterations: 1,
            max_outer_iterations: 100,
            far_coordinate_limit: 1e10,
            robust: None,
            adjust: AdjustOptions::default(),
            intersection: IntersectionOptions::default(),
        }
    }
}

impl ConsensusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.threads == 0 {
            return Err(Error::InvalidBlock("threads must be at least 1".into()));
        }
        if self.mode.uses_rho() && !(self.rho > 0.0) {
            return Err(Error::InvalidBlock(format!("rho must be positive, got {}", self.rho)));
        }
        if let Some(r) = &self.robust {
            if !(r.t_v_serial > 0.0 && r.t_v_parallel > 0.0) {
                return Err(Error::InvalidBlock("robust thresholds must be positive".into()));
            }
        }
        Ok(())
    }
}

/// One sub-block: its cameras, every point they observe, and those
/// observations, re-indexed into a standalone block.
#[derive(Debug, Clone, PartialEq)]
pub struct SubBlock {
    /// Global camera indices, ascending; local camera `i` is `cameras[i]`.
    pub cameras: Vec<usize>,
    /// Global point indices, ascending.
    pub points: Vec<usize>,
    /// Global observation indices in local order.
    pub observations: Vec<usize>,
    pub block: Block,
}

impl SubBlock {
    pub fn local_point(&self, global: usize) -> Option<usize> {
        self.points.binary_search(&global).ok()
    }
}

/// A point observed from two or more sub-blocks. Vectors are aligned with
/// `sub_blocks`.
#[derive(Debug, Clone, PartialEq)]
pub struct TiePointRecord {
    pub point: usize,
    pub sub_blocks: Vec<usize>,
    pub consensus: Vector3<f64>,
    pub information: Vec<Matrix3<f64>>,
    pub dual: Vec<Vector3<f64>>,
    pub local: Vec<Vector3<f64>>,
}

pub fn split(block: &Block, partition: &Partition) -> Result<(Vec<SubBlock>, Vec<TiePointRecord>)> {
    if partition.assignment.len() != block.cameras.len() {
        return Err(Error::InvalidBlock(format!(
            "partition covers {} cameras, block has {}",
            partition.assignment.len(),
            block.cameras.len()
        )));
    }
    if let Some(&l) = partition.assignment.iter().find(|&&l| l >= partition.parts) {
        return Err(Error::IndexOutOfRange {
            what: "sub-block",
            index: l,
            count: partition.parts,
        });
    }
    let mut observing: Vec<Vec<usize>> = vec![Vec::new(); block.points.len()];
    let mut subs = Vec::with_capacity(partition.parts);
    for l in 0..partition.parts {
        let cameras = partition.members(l);
        let observations: Vec<usize> = (0..block.observations.len())
            .filter(|&k| block.is_used(k) && partition.assignment[block.observations[k].camera] == l)
            .collect();
        let mut points: Vec<usize> = observations.iter().map(|&k| block.observations[k].point).collect();
        points.sort_unstable();
        points.dedup();
        for &j in &points {
            observing[j].push(l);
        }
        let local_obs = observations
            .iter()
            .map(|&k| {
                let mut o = block.observations[k].clone();
                o.camera = cameras.binary_search(&o.camera).expect("camera in sub-block");
                o.point = points.binary_search(&o.point).expect("point in sub-block");
                o
            })
            .collect();
        let local = Block {
            cameras: cameras.iter().map(|&i| block.cameras[i].clone()).collect(),
            points: points.iter().map(|&j| block.points[j].clone()).collect(),
            observations: local_obs,
            shared_calibration: block.shared_calibration,
        };
        subs.push(SubBlock {
            cameras,
            points,
            observations,
            block: local,
        });
    }
    let tps = observing
        .into_iter()
        .enumerate()
        .filter(|(_, s)| s.len() >= 2)
        .map(|(j, sub_blocks)| {
            let n = sub_blocks.len();
            TiePointRecord {
                point: j,
                sub_blocks,
                consensus: block.points[j].coords,
                information: vec![Matrix3::zeros(); n],
                dual: vec![Vector3::zeros(); n],
                local: vec![block.points[j].coords; n],
            }
        })
        .collect();
    Ok((subs, tps))
}

/// Prior placed on a tie point inside the sub-block at position `slot` of
/// its record.
pub fn tie_point_prior(mode: ConsensusMode, record: &TiePointRecord, slot: usize, local_point: usize, rho: f64) -> TiePointPrior {
    let scalar = || Matrix3::identity() * rho;
    let (target, information) = match mode {
        ConsensusMode::Extended | ConsensusMode::ExtendedAllCameras => (record.consensus, record.information[slot]),
        ConsensusMode::ExtendedScalar => (record.consensus, scalar()),
        ConsensusMode::Plain => (record.consensus - record.dual[slot], scalar()),
        ConsensusMode::PlainRefined => (record.consensus - record.dual[slot], record.information[slot]),
    };
    TiePointPrior {
        point: local_point,
        target,
        information,
    }
}

/// Consensus update `z = mean(x + u)` followed by the dual step `u += x - z`.
pub fn average_tie_point(record: &mut TiePointRecord) {
    let n = record.sub_blocks.len() as f64;
    let z = record.local.iter().zip(&record.dual).fold(Vector3::zeros(), |acc, (x, u)| acc + x + u) / n;
    for (u, x) in record.dual.iter_mut().zip(&record.local) {
        *u += x - z;
    }
    record.consensus = z;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Converged,
    MaxIterations,
    Diverged,
}

impl RunStatus {
    pub fn tag(self) -> &'static str {
        match self {
            RunStatus::Converged => "converged",
            RunStatus::MaxIterations => "max_iterations",
            RunStatus::Diverged => "diverged",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsensusOutcome {
    pub status: RunStatus,
    pub trace: ConvergenceTrace,
    pub initial_sigma0: f64,
    pub sigma0: f64,
    pub iterations: usize,
    pub sub_blocks: usize,
    pub tie_points: usize,
    pub deleted_observations: usize,
    pub deleted_points: usize,
    /// Penalty at the end of a run that uses one.
    pub final_rho: Option<f64>,
}

fn counts(block: &Block) -> (usize, usize) {
    (block.used_observation_count(), block.active_point_count())
}

fn far(x: &Vector3<f64>, limit: f64) -> bool {
    x.iter().any(|v| !(v.abs() <= limit))
}

/// Serial adjustment reported in the same form as a consensus run; the
/// trace holds one row per LM iteration.
pub fn run_serial(block: &mut Block, config: &ConsensusConfig) -> Result<ConsensusOutcome> {
    config.validate()?;
    par::with_threads(config.threads, || serial_inner(block, config))
}

fn serial_inner(block: &mut Block, config: &ConsensusConfig) -> Result<ConsensusOutcome> {
    let (obs0, pts0) = counts(block);
    let initial = model::sigma0(block).unwrap_or(f64::NAN);
    let watch = Stopwatch::start();
    let report = match adjust(block, &[], &config.adjust) {
        Ok(r) => r,
        Err(Error::DivergenceDetected { sigma0, .. }) => {
            return Ok(diverged_outcome(initial, sigma0, ConvergenceTrace::default(), 1, 0, None));
        }
        Err(e) => return Err(e),
    };
    let mut trace = ConvergenceTrace::default();
    let per = watch.ms() / report.history.len().max(1) as f64;
    for (i, &s) in report.history.iter().enumerate() {
        trace.rows.push(TraceRow {
            iteration: i + 1,
            sigma0: s,
            phase_a_ms: per,
            ..Default::default()
        });
    }
    if let Some(first) = trace.rows.first_mut() {
        first.deleted_observations = report.deleted_observations;
        first.deleted_points = report.deleted_points;
    }
    let mut sigma0 = report.sigma0;
    if let Some(robust) = &config.robust {
        let (o, p) = counts(block);
        let watch = Stopwatch::start();
        match serial_robust_pass(block, robust, &config.adjust) {
            Ok(r) if r.rounds > 0 => {
                sigma0 = model::sigma0(block)?;
                let (o2, p2) = counts(block);
                trace.rows.push(TraceRow {
                    iteration: trace.rows.len() + 1,
                    sigma0,
                    deleted_observations: o - o2,
                    deleted_points: p - p2,
                    phase_a_ms: watch.ms(),
                    ..Default::default()
                });
            }
            Ok(_) => {}
            Err(Error::DivergenceDetected { sigma0, .. }) => {
                return Ok(diverged_outcome(initial, sigma0, trace, 1, 0, None));
            }
            Err(e) => return Err(e),
        }
    }
    let (obs1, pts1) = counts(block);
    Ok(ConsensusOutcome {
        status: if report.converged { RunStatus::Converged } else { RunStatus::MaxIterations },
        iterations: trace.len(),
        trace,
        initial_sigma0: report.initial_sigma0,
        sigma0,
        sub_blocks: 1,
        tie_points: 0,
        deleted_observations: obs0 - obs1,
        deleted_points: pts0 - pts1,
        final_rho: None,
    })
}

fn diverged_outcome(
    initial: f64,
    sigma0: f64,
    trace: ConvergenceTrace,
    sub_blocks: usize,
    tie_points: usize,
    final_rho: Option<f64>,
) -> ConsensusOutcome {
    let deleted_observations = trace.deleted_observations();
    let deleted_points = trace.deleted_points();
    ConsensusOutcome {
        status: RunStatus::Diverged,
        iterations: trace.len(),
        trace,
        initial_sigma0: initial,
        sigma0,
        sub_blocks,
        tie_points,
        deleted_observations,
        deleted_points,
        final_rho,
    }
}

/// Runs the configured consensus scheme over `partition`. A single
/// sub-block runs the serial adjuster unchanged.
pub fn run(block: &mut Block, partition: &Partition, config: &ConsensusConfig) -> Result<ConsensusOutcome> {
    config.validate()?;
    block.validate()?;
    if partition.parts <= 1 {
        return run_serial(block, config);
    }
    par::with_threads(config.threads, || {
        let mut session = Session::new(block, partition, config)?;
        session.run()
    })
}

enum PointUpdate {
    Skip,
    Keep(IntersectionResult, Vec<usize>),
    Delete,
}

struct Session<'a> {
    block: &'a mut Block,
    partition: &'a Partition,
    config: &'a ConsensusConfig,
    subs: Vec<SubBlock>,
    tps: Vec<TiePointRecord>,
    tp_of_point: Vec<Option<usize>>,
    rho: f64,
    robust_active: bool,
}

impl<'a> Session<'a> {
    fn new(block: &'a mut Block, partition: &'a Partition, config: &'a ConsensusConfig) -> Result<Self> {
        let (subs, tps) = split(block, partition)?;
        let mut tp_of_point = vec![None; block.points.len()];
        for (t, r) in tps.iter().enumerate() {
            tp_of_point[r.point] = Some(t);
        }
        Ok(Session {
            block,
            partition,
            config,
            subs,
            tps,
            tp_of_point,
            rho: if config.mode.uses_rho() { config.rho } else { f64::NAN },
            robust_active: false,
        })
    }

    fn mode(&self) -> ConsensusMode {
        self.config.mode
    }

    fn run(&mut self) -> Result<ConsensusOutcome> {
        let config = self.config;
        let initial = model::sigma0(self.block).unwrap_or(f64::NAN);
        let (obs_start, pts_start) = counts(self.block);
        let (mut obs_mark, mut pts_mark) = (obs_start, pts_start);
        let mut trace = ConvergenceTrace::default();

        // weights at the initial parameters; coordinates stay as given
        if self.mode() != ConsensusMode::Plain {
            self.refresh_information_at_consensus();
        }

        let mut monitor = ConvergenceMonitor::new(initial, config.outer_convergence_ratio, config.grace_iterations);
        let mut divergence = ConvergenceMonitor::new(initial, config.outer_convergence_ratio, config.grace_iterations);
        let mut status = RunStatus::MaxIterations;
        let mut robust_rounds = 0;
        for iteration in 1..=config.max_outer_iterations {
            self.push_down();
            let watch = Stopwatch::start();
            let reports = match self.resection_phase() {
                Ok(r) => r,
                Err(Error::DivergenceDetected { sigma0, .. }) => {
                    trace.rows.push(TraceRow {
                        iteration,
                        sigma0,
                        ..Default::default()
                    });
                    status = RunStatus::Diverged;
                    break;
                }
                Err(e) => return Err(e),
            };
            let phase_a_ms = watch.ms();
            self.pull_up();

            let watch = Stopwatch::start();
            if self.mode().intersects() {
                self.intersection_phase()?;
            } else {
                self.averaging_phase();
            }
            let phase_b_ms = watch.ms();

            let sigma0 = match model::sigma0(self.block) {
                Ok(s) => s,
                Err(Error::NonPositiveRedundancy(_)) => f64::NAN,
                Err(e) => return Err(e),
            };
            let (obs_now, pts_now) = counts(self.block);
            let row = TraceRow {
                iteration,
                sigma0,
                deleted_observations: obs_mark - obs_now,
                deleted_points: pts_mark - pts_now,
                phase_a_ms,
                phase_b_ms,
                sub_blocks: reports
                    .iter()
                    .map(|r| SubBlockStat {
                        sigma0: r.sigma0,
                        lm_iterations: r.iterations,
                    })
                    .collect(),
            };
            let deleted_now = row.deleted_observations + row.deleted_points;
            trace.rows.push(row);
            (obs_mark, pts_mark) = (obs_now, pts_now);
            if self.mode().uses_rho() && !self.mode().intersects() {
                self.rho *= config.rho_growth;
            }

            if divergence.diverging(sigma0) {
                status = RunStatus::Diverged;
                break;
            }
            if self.robust_active {
                robust_rounds += 1;
            }
            if monitor.update(sigma0) {
                match &config.robust {
                    Some(_) if !self.robust_active => {
                        self.robust_active = true;
                        monitor = ConvergenceMonitor::new(sigma0, config.outer_convergence_ratio, config.grace_iterations);
                    }
                    Some(r) if deleted_now > 0 && robust_rounds < r.max_rounds => {}
                    _ => {
                        status = RunStatus::Converged;
                        break;
                    }
                }
            }
        }
        let (obs_end, pts_end) = counts(self.block);
        Ok(ConsensusOutcome {
            status,
            iterations: trace.len(),
            sigma0: trace.final_sigma0().unwrap_or(initial),
            trace,
            initial_sigma0: initial,
            sub_blocks: self.subs.len(),
            tie_points: self.tps.len(),
            deleted_observations: obs_start - obs_end,
            deleted_points: pts_start - pts_end,
            final_rho: self.mode().uses_rho().then_some(self.rho),
        })
    }

    /// Copies global state into the sub-blocks. In plain modes tie points
    /// keep their local estimate as the starting value.
    fn push_down(&mut self) {
        let plain = !self.mode().intersects();
        let block = &*self.block;
        let tp_of_point = &self.tp_of_point;
        for sub in &mut self.subs {
            for (i, &k) in sub.observations.iter().enumerate() {
                let (g, o) = (&block.observations[k], &mut sub.block.observations[i]);
                o.status = g.status;
                o.weight = g.weight;
            }
            for (i, &j) in sub.points.iter().enumerate() {
                let p = &mut sub.block.points[i];
                p.status = block.points[j].status;
                if !(plain && tp_of_point[j].is_some()) {
                    p.coords = block.points[j].coords;
                }
            }
            for (i, &c) in sub.cameras.iter().enumerate() {
                sub.block.cameras[i] = block.cameras[c].clone();
            }
            sub.block.shared_calibration = block.shared_calibration;
        }
    }

    fn resection_phase(&mut self) -> Result<Vec<AdjustReport>> {
        let mode = self.mode();
        let priors: Vec<Vec<TiePointPrior>> = self
            .subs
            .iter()
            .enumerate()
            .map(|(l, sub)| {
                self.tps
                    .iter()
                    .filter(|r| self.block.points[r.point].is_active())
                    .filter_map(|r| {
                        let slot = r.sub_blocks.iter().position(|&s| s == l)?;
                        let local = sub.local_point(r.point)?;
                        Some(tie_point_prior(mode, r, slot, local, self.rho))
                    })
                    .collect()
            })
            .collect();
        let options = &self.config.adjust;
        let results = par::map_mut(&mut self.subs, |l, sub| adjust(&mut sub.block, &priors[l], options));
        results.into_iter().collect()
    }

    /// Copies sub-block results back: cameras, local points, deletions and
    /// the averaged shared calibration.
    fn pull_up(&mut self) {
        let adj = self.block.adjacency();
        let mut shared_sum = [0.0; SHARED_DIMS];
        let mut shared_n = 0;
        for (l, sub) in self.subs.iter().enumerate() {
            for (i, &c) in sub.cameras.iter().enumerate() {
                self.block.cameras[c] = sub.block.cameras[i].clone();
            }
            if let Some(s) = &sub.block.shared_calibration {
                for (acc, v) in shared_sum.iter_mut().zip(s.to_array()) {
                    *acc += v;
                }
                shared_n += 1;
            }
            for (i, &k) in sub.observations.iter().enumerate() {
                if sub.block.observations[i].status == ObservationStatus::Deleted && self.block.observations[k].status.is_used() {
                    self.block.observations[k].status = ObservationStatus::Deleted;
                }
            }
            for (i, &j) in sub.points.iter().enumerate() {
                let p = &sub.block.points[i];
                if !p.is_active() {
                    if self.block.points[j].is_active() {
                        self.block.delete_point(j, &adj);
                    }
                    continue;
                }
                match self.tp_of_point[j] {
                    Some(t) => {
                        let r = &mut self.tps[t];
                        if let Some(slot) = r.sub_blocks.iter().position(|&s| s == l) {
                            r.local[slot] = p.coords;
                        }
                    }
                    None => self.block.points[j].coords = p.coords,
                }
            }
        }
        if shared_n > 0 {
            let mean = shared_sum.map(|v| v / shared_n as f64);
            self.block.shared_calibration = Some(SharedCalibration::from_array(mean));
        }
    }

    fn rays_of<'b>(block: &'b Block, obs: &[usize]) -> Vec<Ray<'b>> {
        obs.iter()
            .map(|&k| {
                let o = &block.observations[k];
                Ray {
                    camera: &block.cameras[o.camera],
                    coords: o.coords,
                    weight: o.weight,
                }
            })
            .collect()
    }

    /// Intersects every active point with all cameras fixed and refreshes the
    /// tie-point consensus and weights.
    fn intersection_phase(&mut self) -> Result<()> {
        let block = &*self.block;
        let adj = block.adjacency();
        let robust = self.config.robust.as_ref().filter(|_| self.robust_active);
        let sigmas = robust.map(|r| camera_sigmas(block, r));
        let shared = block.shared_calibration.as_ref();
        let (tps, tp_of_point, assignment) = (&self.tps, &self.tp_of_point, &self.partition.assignment);
        let (options, limit) = (&self.config.intersection, self.config.far_coordinate_limit);
        let updates = par::map_range(block.points.len(), |j| {
            if !block.points[j].is_active() {
                return PointUpdate::Skip;
            }
            let obs = &adj.by_point[j];
            let rays = Self::rays_of(block, obs);
            let start = match tp_of_point[j] {
                Some(t) => tps[t].consensus,
                None => block.points[j].coords,
            };
            let result = match (robust, &sigmas) {
                (Some(r), Some(s)) => {
                    let ray_sigmas: Vec<f64> = obs.iter().map(|&k| s[block.observations[k].camera]).collect();
                    match robust_intersect(j, start, &rays, &ray_sigmas, shared, r, options) {
                        Ok(ri) if !ri.contaminated => Ok(ri.result),
                        Ok(_) => return PointUpdate::Delete,
                        Err(e) => Err(e),
                    }
                }
                _ => intersect_point(j, start, &rays, shared, options),
            };
            match result {
                Ok(res) if !far(&res.coords, limit) => {
                    let ray_sb = obs.iter().map(|&k| assignment[block.observations[k].camera]).collect();
                    PointUpdate::Keep(res, ray_sb)
                }
                _ => PointUpdate::Delete,
            }
        });
        let mode = self.mode();
        for (j, update) in updates.into_iter().enumerate() {
            match update {
                PointUpdate::Skip => {}
                PointUpdate::Delete => self.block.delete_point(j, &adj),
                PointUpdate::Keep(res, ray_sb) => {
                    self.block.points[j].coords = res.coords;
                    if let Some(t) = self.tp_of_point[j] {
                        let r = &mut self.tps[t];
                        r.consensus = res.coords;
                        for (slot, &l) in r.sub_blocks.iter().enumerate() {
                            r.information[slot] = match mode {
                                ConsensusMode::ExtendedAllCameras => res.information_total,
                                ConsensusMode::ExtendedScalar => Matrix3::zeros(),
                                _ => reduced_information(&res, &ray_sb, l),
                            };
                            r.local[slot] = res.coords;
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Averages tie points over their sub-blocks, updates duals and filters
    /// far or, once robust rounds have started, contaminated points.
    fn averaging_phase(&mut self) {
        for r in &mut self.tps {
            if !self.block.points[r.point].is_active() {
                continue;
            }
            average_tie_point(r);
            self.block.points[r.point].coords = r.consensus;
        }
        let adj = self.block.adjacency();
        let limit = self.config.far_coordinate_limit;
        for j in 0..self.block.points.len() {
            if self.block.points[j].is_active() && far(&self.block.points[j].coords, limit) {
                self.block.delete_point(j, &adj);
            }
        }
        if let Some(robust) = self.config.robust.as_ref().filter(|_| self.robust_active) {
            let sigmas = camera_sigmas(self.block, robust);
            let vbar = normalized_residuals(self.block, &sigmas, robust);
            let adj = self.block.adjacency();
            for (j, obs) in adj.by_point.iter().enumerate() {
                if obs.iter().any(|&k| vbar[k] > robust.t_v_parallel) {
                    self.block.delete_point(j, &adj);
                }
            }
        }
        self.block.prune_weak_points();
        if self.mode() == ConsensusMode::PlainRefined {
            self.refresh_information_at_consensus();
        }
    }

    /// Per-sub-block reduced information evaluated at the current consensus
    /// without moving the points. Points where it is undefined are deleted.
    fn refresh_information_at_consensus(&mut self) {
        let block = &*self.block;
        let adj = block.adjacency();
        let shared = block.shared_calibration.as_ref();
        let assignment = &self.partition.assignment;
        let tps = &self.tps;
        let mode = self.mode();
        let infos = par::map_range(tps.len(), |t| {
            let r = &tps[t];
            if !block.points[r.point].is_active() {
                return None;
            }
            let obs = &adj.by_point[r.point];
            let rays = Self::rays_of(block, obs);
            let res = information_at(r.point, r.consensus, &rays, shared).ok()?;
            let ray_sb: Vec<usize> = obs.iter().map(|&k| assignment[block.observations[k].camera]).collect();
            let info = r
                .sub_blocks
                .iter()
                .map(|&l| match mode {
                    ConsensusMode::ExtendedAllCameras => res.information_total,
                    _ => reduced_information(&res, &ray_sb, l),
                })
                .collect::<Vec<_>>();
            Some(info)
        });
        for (t, info) in infos.into_iter().enumerate() {
            let j = self.tps[t].point;
            match info {
                Some(i) => self.tps[t].information = i,
                None if self.block.points[j].is_active() => self.block.delete_point(j, &adj),
                None => {}
            }
        }
    }
}

#[cfg(test)]
mod tests;
