//! Browser demo: partition a small synthetic block, compare how serial, plain
//! and extended consensus converge, and watch gross errors get removed.
//!
//! Each operation is a plain function returning a serializable struct; the
//! `wasm_bindgen` exports hand the same data to the page as JSON.

use consba::blockio::{generate, GeneratedBlock, GeneratorSpec, OutlierSpec};
use consba::consensus::{run, run_serial, ConsensusConfig, ConsensusMode, ConsensusOutcome};
use consba::model::Block;
use consba::partition::{build_visibility_graph, partition, Partition};
use consba::robust::RobustConfig;
use serde::Serialize;
use wasm_bindgen::prelude::*;

/// Smallest sub-block the demo will cut.
const MIN_CAMERAS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scene {
    pub strips: usize,
    pub cameras_per_strip: usize,
    pub points_per_camera: usize,
    pub seed: u64,
}

impl Scene {
    fn spec(&self, outliers: Option<OutlierSpec>) -> GeneratorSpec {
        GeneratorSpec {
            strips: self.strips,
            cameras_per_strip: self.cameras_per_strip,
            points_per_camera: self.points_per_camera,
            seed: self.seed,
            outliers,
            ..Default::default()
        }
    }

    fn generate(&self, outliers: Option<OutlierSpec>) -> Result<GeneratedBlock, String> {
        generate(&self.spec(outliers)).map_err(|e| e.to_string())
    }
}

fn split(block: &Block, sub_blocks: usize) -> Partition {
    partition(&build_visibility_graph(block), sub_blocks, MIN_CAMERAS, 1)
}

#[derive(Debug, Clone, Serialize)]
pub struct PartitionView {
    /// Camera centers in ground coordinates.
    pub cameras: Vec<[f64; 2]>,
    pub assignment: Vec<usize>,
    pub sizes: Vec<usize>,
    pub balance: f64,
    pub cut_weight: u64,
    /// Ground position of every point and whether sub-blocks share it.
    pub points: Vec<[f64; 2]>,
    pub tie: Vec<bool>,
}

pub fn partition_view(scene: Scene, sub_blocks: usize) -> Result<PartitionView, String> {
    let block = scene.generate(None)?.ground_truth;
    let graph = build_visibility_graph(&block);
    let part = partition(&graph, sub_blocks, MIN_CAMERAS, 1);
    let mut owners = vec![usize::MAX; block.points.len()];
    let mut tie = vec![false; block.points.len()];
    for o in &block.observations {
        let l = part.assignment[o.camera];
        match owners[o.point] {
            usize::MAX => owners[o.point] = l,
            m if m != l => tie[o.point] = true,
            _ => {}
        }
    }
    Ok(PartitionView {
        cameras: block.cameras.iter().map(|c| [c.center().x, c.center().y]).collect(),
        sizes: part.sizes(),
        balance: part.balance,
        cut_weight: part.cut_weight(&graph),
        assignment: part.assignment,
        points: block.points.iter().map(|p| [p.coords.x, p.coords.y]).collect(),
        tie,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Series {
    pub label: String,
    pub status: String,
    /// σ₀ at the start followed by one value per iteration.
    pub sigma0: Vec<f64>,
}

impl Series {
    fn from_outcome(label: &str, o: &ConsensusOutcome) -> Series {
        let mut sigma0 = vec![o.initial_sigma0];
        sigma0.extend(o.trace.sigma0());
        Series {
            label: label.to_string(),
            status: o.status.tag().to_string(),
            sigma0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Convergence {
    pub sub_blocks: usize,
    pub series: Vec<Series>,
}

/// Serial, plain and extended runs on one block. With `fixed_iterations` the
/// stopping rule is off and every consensus run goes `max_iterations` rounds.
pub fn convergence(scene: Scene, sub_blocks: usize, rho: f64, max_iterations: usize, fixed_iterations: bool) -> Result<Convergence, String> {
    let block = scene.generate(None)?.perturbed;
    let part = split(&block, sub_blocks);
    let mut series = Vec::new();

    let mut b = block.clone();
    let serial = run_serial(&mut b, &ConsensusConfig::default()).map_err(|e| e.to_string())?;
    series.push(Series::from_outcome("serial", &serial));

    for mode in [ConsensusMode::Plain, ConsensusMode::Extended] {
        let config = ConsensusConfig {
            mode,
            rho,
            max_outer_iterations: max_iterations.max(1),
            outer_convergence_ratio: if fixed_iterations { 0.0 } else { 1.01 },
            ..Default::default()
        };
        let mut b = block.clone();
        let out = run(&mut b, &part, &config).map_err(|e| e.to_string())?;
        series.push(Series::from_outcome(mode.tag(), &out));
    }
    Ok(Convergence {
        sub_blocks: part.parts,
        series,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PointFate {
    Clean,
    /// Every gross error on the point is gone.
    Caught,
    /// A gross error survived.
    Missed,
    /// Clean observations were deleted.
    FalseAlarm,
}

#[derive(Debug, Clone, Serialize)]
pub struct RobustView {
    pub sub_blocks: usize,
    pub injected: usize,
    pub removed: usize,
    pub clean_lost: usize,
    pub clean_total: usize,
    pub sigma0_before: f64,
    pub sigma0_after: f64,
    pub points: Vec<[f64; 2]>,
    pub fate: Vec<PointFate>,
}

/// Injects gross errors, adjusts with outlier deletion and classifies every
/// point by what happened to its observations. One sub-block runs serially.
pub fn robust_demo(scene: Scene, sub_blocks: usize, outlier_fraction: f64) -> Result<RobustView, String> {
    let generated = scene.generate(Some(OutlierSpec {
        fraction: outlier_fraction,
        min_px: 20.0,
        max_px: 100.0,
    }))?;
    let mut block = generated.perturbed.clone();
    let part = split(&block, sub_blocks);
    let config = ConsensusConfig {
        robust: Some(RobustConfig::default()),
        ..Default::default()
    };
    let out = run(&mut block, &part, &config).map_err(|e| e.to_string())?;

    let mut is_outlier = vec![false; block.observations.len()];
    for &k in &generated.outliers {
        is_outlier[k] = true;
    }
    let mut fate = vec![PointFate::Clean; block.points.len()];
    let (mut removed, mut clean_lost) = (0, 0);
    for (k, o) in block.observations.iter().enumerate() {
        let gone = !block.is_used(k);
        let f = &mut fate[o.point];
        match (is_outlier[k], gone) {
            (true, true) => {
                removed += 1;
                if *f == PointFate::Clean || *f == PointFate::FalseAlarm {
                    *f = PointFate::Caught;
                }
            }
            (true, false) => *f = PointFate::Missed,
            (false, true) => {
                clean_lost += 1;
                if *f == PointFate::Clean {
                    *f = PointFate::FalseAlarm;
                }
            }
            (false, false) => {}
        }
    }
    Ok(RobustView {
        sub_blocks: part.parts,
        injected: generated.outliers.len(),
        removed,
        clean_lost,
        clean_total: block.observations.len() - generated.outliers.len(),
        sigma0_before: out.initial_sigma0,
        sigma0_after: out.sigma0,
        points: generated.ground_truth.points.iter().map(|p| [p.coords.x, p.coords.y]).collect(),
        fate,
    })
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

fn scene(strips: usize, cameras_per_strip: usize, seed: u32) -> Scene {
    Scene {
        strips,
        cameras_per_strip,
        points_per_camera: 40,
        seed: seed as u64,
    }
}

#[wasm_bindgen(js_name = partitionView)]
pub fn partition_view_js(strips: usize, cameras_per_strip: usize, seed: u32, sub_blocks: usize) -> Result<String, JsValue> {
    to_js(partition_view(scene(strips, cameras_per_strip, seed), sub_blocks))
}

#[wasm_bindgen(js_name = convergence)]
pub fn convergence_js(
    strips: usize,
    cameras_per_strip: usize,
    seed: u32,
    sub_blocks: usize,
    rho: f64,
    max_iterations: usize,
    fixed_iterations: bool,
) -> Result<String, JsValue> {
    to_js(convergence(scene(strips, cameras_per_strip, seed), sub_blocks, rho, max_iterations, fixed_iterations))
}

#[wasm_bindgen(js_name = robustDemo)]
pub fn robust_demo_js(strips: usize, cameras_per_strip: usize, seed: u32, sub_blocks: usize, outlier_fraction: f64) -> Result<String, JsValue> {
    to_js(robust_demo(scene(strips, cameras_per_strip, seed), sub_blocks, outlier_fraction))
}
