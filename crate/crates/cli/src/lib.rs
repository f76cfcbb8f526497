//! The `consba` command line: generate synthetic blocks, adjust them serially
//! or by consensus, partition them and compare convergence traces.

pub mod compare;
pub mod manifest;

use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use consba::blockio::{self, write_atomic, GeneratorSpec, OutlierSpec};
use consba::consensus::{self, ConsensusConfig, ConsensusMode, ConsensusOutcome, ConvergenceTrace, RunStatus};
use consba::model::CameraModel;
use consba::partition::{build_visibility_graph, partition, Partition};
use consba::robust::RobustConfig;

pub use manifest::RunManifest;

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_DIVERGED: u8 = 3;

#[derive(Debug, Parser)]
#[command(name = "consba", version, about = "Parallel bundle adjustment by consensus")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic aerial block: ground truth, perturbed start and outlier labels.
    Generate(GenerateArgs),
    /// Adjust a block serially or by consensus over camera sub-blocks.
    Adjust(AdjustArgs),
    /// Split the cameras of a block into sub-blocks.
    Partition(PartitionArgs),
    /// Merge convergence traces into one report.
    Compare(CompareArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum ModelArg {
    PoseOnly,
    PerCameraFocalRadial,
    SharedCalibration,
}

impl From<ModelArg> for CameraModel {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::PoseOnly => CameraModel::PoseOnly,
            ModelArg::PerCameraFocalRadial => CameraModel::PerCameraFocalRadial,
            ModelArg::SharedCalibration => CameraModel::SharedCalibration,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum ModeArg {
    Serial,
    Plain,
    Extended,
    ExtendedAllCameras,
    ExtendedScalar,
    PlainRefined,
}

impl ModeArg {
    fn consensus(self) -> Option<ConsensusMode> {
        match self {
            ModeArg::Serial => None,
            ModeArg::Plain => Some(ConsensusMode::Plain),
            ModeArg::Extended => Some(ConsensusMode::Extended),
            ModeArg::ExtendedAllCameras => Some(ConsensusMode::ExtendedAllCameras),
            ModeArg::ExtendedScalar => Some(ConsensusMode::ExtendedScalar),
            ModeArg::PlainRefined => Some(ConsensusMode::PlainRefined),
        }
    }

    fn tag(self) -> &'static str {
        self.consensus().map_or("serial", ConsensusMode::tag)
    }
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, default_value_t = 5)]
    pub strips: usize,
    #[arg(long, default_value_t = 40)]
    pub cams_per_strip: usize,
    #[arg(long, default_value_t = 100)]
    pub points_per_camera: usize,
    #[arg(long, default_value_t = 0.6)]
    pub endlap: f64,
    #[arg(long, default_value_t = 0.2)]
    pub sidelap: f64,
    #[arg(long, default_value_t = 1.0)]
    pub noise_px: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub perturb_angle: f64,
    #[arg(long, default_value_t = 0.1)]
    pub perturb_translation: f64,
    #[arg(long, default_value_t = 4.0)]
    pub flight_height: f64,
    #[arg(long, default_value_t = 0.1)]
    pub relief: f64,
    #[arg(long, default_value_t = 6)]
    pub min_views: usize,
    #[arg(long, value_enum, default_value_t = ModelArg::PoseOnly)]
    pub model: ModelArg,
    /// Fraction of observations replaced by gross errors; 0 disables them.
    #[arg(long, default_value_t = 0.0)]
    pub outlier_fraction: f64,
    #[arg(long, default_value_t = 20.0)]
    pub outlier_min_px: f64,
    #[arg(long, default_value_t = 100.0)]
    pub outlier_max_px: f64,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Output directory, created if missing.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct AdjustArgs {
    /// Native or bundle-adjustment-in-the-large block file.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Extended)]
    pub mode: ModeArg,
    /// Worker threads; defaults to the number of physical cores.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Requested sub-blocks; defaults to the thread count.
    #[arg(long)]
    pub sub_blocks: Option<usize>,
    #[arg(long, default_value_t = 50)]
    pub min_cameras: usize,
    #[arg(long, default_value_t = 1)]
    pub partition_seed: u64,
    /// Use this `camera sub_block` file instead of partitioning.
    #[arg(long)]
    pub assignment: Option<PathBuf>,
    #[arg(long, default_value_t = 1000.0)]
    pub rho: f64,
    #[arg(long, default_value_t = 1.01)]
    pub rho_growth: f64,
    #[arg(long, default_value_t = 100)]
    pub max_outer: usize,
    #[arg(long, default_value_t = 1.01)]
    pub convergence_ratio: f64,
    /// Delete gross errors once the adjustment has converged.
    #[arg(long)]
    pub robust: bool,
    #[arg(long, default_value_t = 3.0)]
    pub t_v_serial: f64,
    #[arg(long, default_value_t = 4.0)]
    pub t_v_parallel: f64,
    /// Adjusted block, native format.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Convergence trace CSV.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Defaults to `<input>.manifest`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PartitionArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub sub_blocks: usize,
    #[arg(long, default_value_t = 50)]
    pub min_cameras: usize,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    /// Assignment file, one `camera sub_block` pair per line.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long, num_args = 1.., required = true)]
    pub inputs: Vec<PathBuf>,
    /// Column names; default to the file stems.
    #[arg(long, num_args = 1..)]
    pub labels: Vec<String>,
    /// Markdown report; printed to stdout when omitted.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Merged per-iteration σ₀ table.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(consba::Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<consba::Error> for CliError {
    fn from(e: consba::Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Core(consba::Error::DivergenceDetected { .. }) => EXIT_DIVERGED,
            _ => EXIT_USAGE,
        }
    }
}

type CliResult<T> = Result<T, CliError>;

/// Runs one command and returns the process exit code.
pub fn run(cli: Cli) -> CliResult<u8> {
    match cli.command {
        Command::Generate(a) => cmd_generate(&a),
        Command::Adjust(a) => cmd_adjust(&a),
        Command::Partition(a) => cmd_partition(&a),
        Command::Compare(a) => cmd_compare(&a),
    }
}

pub fn physical_threads() -> usize {
    num_cpus::get_physical().max(1)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    Ok(write_atomic(path, text.as_bytes())?)
}

fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn cmd_generate(a: &GenerateArgs) -> CliResult<u8> {
    let spec = GeneratorSpec {
        strips: a.strips,
        cameras_per_strip: a.cams_per_strip,
        endlap: a.endlap,
        sidelap: a.sidelap,
        points_per_camera: a.points_per_camera,
        noise_px: a.noise_px,
        perturb_angle_rad: a.perturb_angle,
        perturb_translation: a.perturb_translation,
        flight_height: a.flight_height,
        relief: a.relief,
        min_views: a.min_views,
        model: a.model.into(),
        outliers: (a.outlier_fraction > 0.0).then_some(OutlierSpec {
            fraction: a.outlier_fraction,
            min_px: a.outlier_min_px,
            max_px: a.outlier_max_px,
        }),
        seed: a.seed,
    };
    let started = Instant::now();
    let generated = blockio::generate(&spec)?;
    create_dir(&a.out)?;
    let truth = a.out.join("ground_truth.rpba");
    let perturbed = a.out.join("perturbed.rpba");
    let labels = a.out.join("outliers.txt");
    blockio::write_native(&generated.ground_truth, &truth)?;
    blockio::write_native(&generated.perturbed, &perturbed)?;
    let mut text = String::new();
    for k in &generated.outliers {
        text.push_str(&format!("{k}\n"));
    }
    write_text(&labels, &text)?;

    let b = &generated.perturbed;
    let mut m = RunManifest::new("generate");
    m.set("strips", spec.strips);
    m.set("cams_per_strip", spec.cameras_per_strip);
    m.set("points_per_camera", spec.points_per_camera);
    m.set("endlap", spec.endlap);
    m.set("sidelap", spec.sidelap);
    m.set("noise_px", spec.noise_px);
    m.set("perturb_angle_rad", spec.perturb_angle_rad);
    m.set("perturb_translation", spec.perturb_translation);
    m.set("flight_height", spec.flight_height);
    m.set("relief", spec.relief);
    m.set("min_views", spec.min_views);
    m.set("model", spec.model.tag());
    m.set("outlier_fraction", a.outlier_fraction);
    m.set("outlier_min_px", a.outlier_min_px);
    m.set("outlier_max_px", a.outlier_max_px);
    m.set("seed", spec.seed);
    m.set("ground_truth", truth.display());
    m.set("perturbed", perturbed.display());
    m.set("outlier_labels", labels.display());
    m.set("cameras", b.cameras.len());
    m.set("points", b.points.len());
    m.set("observations", b.observations.len());
    m.set("outliers", generated.outliers.len());
    m.set("mean_reprojection_error_px", blockio::mean_reprojection_error(b));
    m.set("wall_ms", format!("{:.3}", started.elapsed().as_secs_f64() * 1e3));
    m.write(&a.out.join("manifest.txt"))?;
    println!(
        "{} cameras, {} points, {} observations, {} outliers -> {}",
        b.cameras.len(),
        b.points.len(),
        b.observations.len(),
        generated.outliers.len(),
        a.out.display()
    );
    Ok(EXIT_OK)
}

fn consensus_config(a: &AdjustArgs, mode: ConsensusMode, threads: usize) -> ConsensusConfig {
    let mut c = ConsensusConfig {
        mode,
        threads,
        rho: a.rho,
        rho_growth: a.rho_growth,
        outer_convergence_ratio: a.convergence_ratio,
        max_outer_iterations: a.max_outer,
        robust: a.robust.then(|| RobustConfig {
            t_v_serial: a.t_v_serial,
            t_v_parallel: a.t_v_parallel,
            ..Default::default()
        }),
        ..Default::default()
    };
    c.adjust.convergence_ratio = a.convergence_ratio;
    c
}

fn echo_config(m: &mut RunManifest, c: &ConsensusConfig) {
    m.set("rho", c.rho);
    m.set("rho_growth", c.rho_growth);
    m.set("outer_convergence_ratio", c.outer_convergence_ratio);
    m.set("outer_grace_iterations", c.grace_iterations);
    m.set("max_outer_iterations", c.max_outer_iterations);
    m.set("far_coordinate_limit", c.far_coordinate_limit);
    let a = &c.adjust;
    m.set("lm_lambda", a.lambda);
    m.set("lm_convergence_ratio", a.convergence_ratio);
    m.set("lm_grace_iterations", a.grace_iterations);
    m.set("lm_max_iterations", a.max_lm_iterations);
    m.set("cg_tolerance", a.cg_tolerance);
    m.set("cg_max_iterations", a.cg_max_iterations.map_or("auto".to_string(), |n| n.to_string()));
    m.set("covariance_lambda", a.covariance_lambda);
    let i = &c.intersection;
    m.set("intersection_lambda", i.lambda);
    m.set("intersection_convergence_ratio", i.convergence_ratio);
    m.set("intersection_grace_iterations", i.grace_iterations);
    m.set("intersection_max_iterations", i.max_iterations);
    m.set("intersection_min_condition", i.min_condition);
    m.set("robust", c.robust.is_some());
    if let Some(r) = &c.robust {
        m.set("t_v_serial", r.t_v_serial);
        m.set("t_v_parallel", r.t_v_parallel);
        m.set("downweight_factor", r.downweight_factor);
        m.set("mad_scale", r.mad_scale);
        m.set("per_camera_sigma", r.per_camera);
        m.set("robust_max_rounds", r.max_rounds);
        m.set("robust_min_group", r.min_group);
    }
}

fn record_outcome(m: &mut RunManifest, o: &ConsensusOutcome) {
    m.set("status", o.status.tag());
    m.set("iterations", o.iterations);
    m.set("sigma0_before", o.initial_sigma0);
    m.set("sigma0_after", o.sigma0);
    m.set("sub_blocks", o.sub_blocks);
    m.set("tie_points", o.tie_points);
    m.set("deleted_observations", o.deleted_observations);
    m.set("deleted_points", o.deleted_points);
    m.set("final_rho", o.final_rho.map_or("none".to_string(), |r| r.to_string()));
    let phase_a: f64 = o.trace.rows.iter().map(|r| r.phase_a_ms).sum();
    let phase_b: f64 = o.trace.rows.iter().map(|r| r.phase_b_ms).sum();
    m.set("phase_a_ms", format!("{phase_a:.3}"));
    m.set("phase_b_ms", format!("{phase_b:.3}"));
}

pub fn cmd_adjust(a: &AdjustArgs) -> CliResult<u8> {
    let threads = a.threads.unwrap_or_else(physical_threads);
    if threads == 0 {
        return Err(CliError::Usage("--threads must be at least 1".into()));
    }
    let requested = a.sub_blocks.unwrap_or(threads);
    if requested == 0 {
        return Err(CliError::Usage("--sub-blocks must be at least 1".into()));
    }
    let mut block = blockio::read_block(&a.input)?;
    block.validate()?;

    let mut m = RunManifest::new("adjust");
    m.set("input", a.input.display());
    m.set("mode", a.mode.tag());
    m.set("threads", threads);
    let started = Instant::now();
    let outcome = match a.mode.consensus() {
        None => {
            let config = consensus_config(a, ConsensusMode::Extended, threads);
            echo_config(&mut m, &config);
            consensus::run_serial(&mut block, &config)?
        }
        Some(mode) => {
            let config = consensus_config(a, mode, threads);
            let graph = build_visibility_graph(&block);
            let part = match &a.assignment {
                Some(path) => Partition::from_assignment(&graph, blockio::read_assignment(path, block.cameras.len())?),
                None => partition(&graph, requested, a.min_cameras, a.partition_seed),
            };
            m.set("sub_blocks_requested", requested);
            m.set("min_cameras", a.min_cameras);
            m.set("partition_seed", a.partition_seed);
            m.set("assignment", a.assignment.as_ref().map_or("none".to_string(), |p| p.display().to_string()));
            m.set("partition_balance", part.balance);
            echo_config(&mut m, &config);
            consensus::run(&mut block, &part, &config)?
        }
    };
    record_outcome(&mut m, &outcome);
    m.set("wall_ms", format!("{:.3}", started.elapsed().as_secs_f64() * 1e3));

    if let Some(path) = &a.trace {
        write_text(path, &outcome.trace.to_csv())?;
    }
    if let Some(path) = &a.output {
        blockio::write_native(&block, path)?;
    }
    m.set("trace", a.trace.as_ref().map_or("none".to_string(), |p| p.display().to_string()));
    m.set("output", a.output.as_ref().map_or("none".to_string(), |p| p.display().to_string()));
    let manifest = a.manifest.clone().unwrap_or_else(|| {
        let mut p = a.input.clone().into_os_string();
        p.push(".manifest");
        p.into()
    });
    m.write(&manifest)?;

    println!(
        "{}: {} after {} iterations, sigma0 {:.6} -> {:.6}, {} sub-blocks, deleted {} observations and {} points",
        a.mode.tag(),
        outcome.status.tag(),
        outcome.iterations,
        outcome.initial_sigma0,
        outcome.sigma0,
        outcome.sub_blocks,
        outcome.deleted_observations,
        outcome.deleted_points,
    );
    Ok(match outcome.status {
        RunStatus::Diverged => EXIT_DIVERGED,
        _ => EXIT_OK,
    })
}

pub fn cmd_partition(a: &PartitionArgs) -> CliResult<u8> {
    if a.sub_blocks == 0 {
        return Err(CliError::Usage("--sub-blocks must be at least 1".into()));
    }
    let block = blockio::read_block(&a.input)?;
    block.validate()?;
    let graph = build_visibility_graph(&block);
    let part = partition(&graph, a.sub_blocks, a.min_cameras, a.seed);
    blockio::write_assignment(&part.assignment, &a.out)?;
    let mut m = RunManifest::new("partition");
    m.set("input", a.input.display());
    m.set("sub_blocks_requested", a.sub_blocks);
    m.set("min_cameras", a.min_cameras);
    m.set("seed", a.seed);
    m.set("output", a.out.display());
    m.set("sub_blocks", part.parts);
    m.set("sizes", format!("{:?}", part.sizes()));
    m.set("balance", part.balance);
    m.set("cut_weight", part.cut_weight(&graph));
    let mut path = a.out.clone().into_os_string();
    path.push(".manifest");
    m.write(Path::new(&path))?;
    println!(
        "{} sub-blocks, sizes {:?}, balance {:.3}, cut weight {}",
        part.parts,
        part.sizes(),
        part.balance,
        part.cut_weight(&graph)
    );
    Ok(EXIT_OK)
}

pub fn cmd_compare(a: &CompareArgs) -> CliResult<u8> {
    if !a.labels.is_empty() && a.labels.len() != a.inputs.len() {
        return Err(CliError::Usage(format!(
            "{} labels for {} inputs",
            a.labels.len(),
            a.inputs.len()
        )));
    }
    let mut traces = Vec::new();
    for path in &a.inputs {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        let trace = ConvergenceTrace::from_csv(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
        traces.push(trace);
    }
    let labels = if a.labels.is_empty() {
        a.inputs
            .iter()
            .map(|p| p.file_stem().map_or("trace".to_string(), |s| s.to_string_lossy().into_owned()))
            .collect()
    } else {
        a.labels.clone()
    };
    let c = compare::compare(labels, traces);
    let report = c.report();
    match &a.report {
        Some(path) => write_text(path, &report)?,
        None => print!("{report}"),
    }
    if let Some(path) = &a.csv {
        write_text(path, &c.to_csv())?;
    }
    Ok(EXIT_OK)
}
