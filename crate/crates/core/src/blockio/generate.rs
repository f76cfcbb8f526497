//! Synthetic aerial blocks: a regular grid of nadir cameras over gently
//! undulating terrain, with points only where enough images overlap.

use nalgebra::{Matrix2, Rotation3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::model::{project, Block, Camera, CameraModel, Intrinsics, Observation, Point3D, SharedCalibration};

/// Focal length and image size in pixels.
pub const FOCAL_PX: f64 = 1000.0;
pub const IMAGE_PX: f64 = 1000.0;

#[derive(Debug, Clone, PartialEq)]
pub struct OutlierSpec {
    /// Fraction of observations replaced by gross errors.
    pub fraction: f64,
    pub min_px: f64,
    pub max_px: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub strips: usize,
    pub cameras_per_strip: usize,
    pub endlap: f64,
    pub sidelap: f64,
    pub points_per_camera: usize,
    pub noise_px: f64,
    pub perturb_angle_rad: f64,
    pub perturb_translation: f64,
    /// Flight height above the mean terrain, scene units.
    pub flight_height: f64,
    /// Terrain heights are uniform in ±relief·flight_height.
    pub relief: f64,
    /// Points need at least this many images, or the most the grid allows.
    pub min_views: usize,
    pub model: CameraModel,
    pub outliers: Option<OutlierSpec>,
    pub seed: u64,
}

impl Default for GeneratorSpec {
    fn default() -> Self {
        GeneratorSpec {
            strips: 5,
            cameras_per_strip: 40,
            endlap: 0.6,
            sidelap: 0.2,
            points_per_camera: 100,
            noise_px: 1.0,
            perturb_angle_rad: 1e-4,
            perturb_translation: 0.1,
            flight_height: 4.0,
            relief: 0.1,
            min_views: 6,
            model: CameraModel::PoseOnly,
            outliers: None,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GeneratedBlock {
    pub ground_truth: Block,
    pub perturbed: Block,
    /// Sorted indices of observations carrying injected gross errors.
    pub outliers: Vec<usize>,
}

impl GeneratorSpec {
    fn validate(&self) -> Result<()> {
        let frac = |v: f64| v > 0.0 && v < 1.0;
        if self.strips == 0 || self.cameras_per_strip == 0 || self.points_per_camera == 0 {
            return Err(Error::SpecInfeasible("counts must be at least 1".into()));
        }
        if !frac(self.endlap) || !frac(self.sidelap) {
            return Err(Error::SpecInfeasible("overlaps must lie in (0, 1)".into()));
        }
        if !(self.flight_height > 0.0) || !(self.noise_px >= 0.0) || !(self.relief >= 0.0 && self.relief < 0.5) {
            return Err(Error::SpecInfeasible("flight height, noise or relief out of range".into()));
        }
        if let Some(o) = &self.outliers {
            if !(0.0..=1.0).contains(&o.fraction) || !(o.min_px >= 0.0 && o.max_px >= o.min_px) {
                return Err(Error::SpecInfeasible("outlier fraction or magnitude out of range".into()));
            }
        }
        Ok(())
    }

    /// Images a ground point can fall into at most, given the grid.
    pub fn required_views(&self) -> usize {
        let along = ((1.0 / (1.0 - self.endlap)).floor() as usize + 1).min(self.cameras_per_strip);
        let across = ((1.0 / (1.0 - self.sidelap)).floor() as usize + 1).min(self.strips);
        (along * across).min(self.min_views)
    }
}

fn intrinsics_for(model: CameraModel) -> (Intrinsics, SharedCalibration) {
    let cal = SharedCalibration::pinhole(FOCAL_PX);
    let intr = match model {
        CameraModel::PoseOnly => Intrinsics::PoseOnly,
        CameraModel::PerCameraFocalRadial => Intrinsics::FocalRadial {
            focal: FOCAL_PX,
            k1: 0.0,
            k2: 0.0,
        },
        CameraModel::SharedCalibration => Intrinsics::Shared,
    };
    (intr, cal)
}

pub fn generate(spec: &GeneratorSpec) -> Result<GeneratedBlock> {
    spec.validate()?;
    let required = spec.required_views();
    if required < 2 {
        return Err(Error::SpecInfeasible("no image overlap, so no shared points".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let h = spec.flight_height;
    let footprint = h * IMAGE_PX / FOCAL_PX;
    let base = (1.0 - spec.endlap) * footprint;
    let spacing = (1.0 - spec.sidelap) * footprint;
    let (intrinsics, cal) = intrinsics_for(spec.model);

    let mut cameras = Vec::with_capacity(spec.strips * spec.cameras_per_strip);
    for s in 0..spec.strips {
        for c in 0..spec.cameras_per_strip {
            let center = Vector3::new(c as f64 * base, s as f64 * spacing, h);
            cameras.push(Camera::from_center(Rotation3::identity(), center, intrinsics));
        }
    }
    let shared = Some(cal);
    let half = IMAGE_PX / 2.0;
    let visible = |cam: &Camera, x: &Vector3<f64>| {
        project(cam, shared.as_ref(), x)
            .ok()
            .filter(|p| p.x.abs() <= half && p.y.abs() <= half)
    };

    let target = spec.points_per_camera * cameras.len();
    let relief = spec.relief * h;
    let margin = footprint * 0.5 * (1.0 + 2.0 * spec.relief);
    let x_range = (-margin, (spec.cameras_per_strip - 1) as f64 * base + margin);
    let y_range = (-margin, (spec.strips - 1) as f64 * spacing + margin);
    let reach = (margin / base).ceil() as i64 + 1;
    let reach_s = (margin / spacing).ceil() as i64 + 1;
    let noise = Normal::new(0.0, spec.noise_px.max(0.0)).expect("finite noise");

    let mut points = Vec::with_capacity(target);
    let mut observations = Vec::new();
    let mut seen = Vec::new();
    let max_attempts = 2000 * target + 10_000;
    let mut attempts = 0;
    while points.len() < target && attempts < max_attempts {
        attempts += 1;
        let x = Vector3::new(
            rng.random_range(x_range.0..x_range.1),
            rng.random_range(y_range.0..y_range.1),
            if relief > 0.0 { rng.random_range(-relief..relief) } else { 0.0 },
        );
        let ci = (x.x / base).round() as i64;
        let si = (x.y / spacing).round() as i64;
        seen.clear();
        for s in (si - reach_s).max(0)..=(si + reach_s).min(spec.strips as i64 - 1) {
            for c in (ci - reach).max(0)..=(ci + reach).min(spec.cameras_per_strip as i64 - 1) {
                let idx = s as usize * spec.cameras_per_strip + c as usize;
                if let Some(p) = visible(&cameras[idx], &x) {
                    seen.push((idx, p));
                }
            }
        }
        if seen.len() < required {
            continue;
        }
        let j = points.len();
        points.push(Point3D::new(x));
        for &(idx, p) in &seen {
            let noisy = p + Vector2::new(noise.sample(&mut rng), noise.sample(&mut rng));
            observations.push(Observation::new(idx, j, noisy));
        }
    }
    if points.is_empty() {
        return Err(Error::SpecInfeasible(format!("no ground point is seen by {required} images")));
    }

    let mut outliers = Vec::new();
    if let Some(o) = &spec.outliers {
        let n = (o.fraction * observations.len() as f64).round() as usize;
        outliers = rand::seq::index::sample(&mut rng, observations.len(), n).into_vec();
        outliers.sort_unstable();
        for &k in &outliers {
            let mag = if o.max_px > o.min_px { rng.random_range(o.min_px..o.max_px) } else { o.min_px };
            let dir = rng.random_range(0.0..std::f64::consts::TAU);
            observations[k].coords += Vector2::new(dir.cos(), dir.sin()) * mag;
        }
    }

    let ground_truth = Block {
        cameras,
        points,
        observations,
        shared_calibration: shared,
    };
    let mut perturbed = ground_truth.clone();
    let angle = Normal::new(0.0, spec.perturb_angle_rad.max(0.0)).expect("finite angle");
    let shift = Normal::new(0.0, spec.perturb_translation.max(0.0)).expect("finite shift");
    for cam in &mut perturbed.cameras {
        let w = Vector3::new(angle.sample(&mut rng), angle.sample(&mut rng), angle.sample(&mut rng));
        let d = Vector3::new(shift.sample(&mut rng), shift.sample(&mut rng), shift.sample(&mut rng));
        let center = cam.center() + d;
        let rotation = Rotation3::from_scaled_axis(w) * cam.rotation;
        *cam = Camera::from_center(rotation, center, cam.intrinsics);
    }
    Ok(GeneratedBlock {
        ground_truth,
        perturbed,
        outliers,
    })
}

/// Mean pixel distance between projections and measurements.
pub fn mean_reprojection_error(block: &Block) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for k in 0..block.observations.len() {
        if !block.is_used(k) {
            continue;
        }
        if let Ok(p) = block.project_observation(k) {
            sum += (p - block.observations[k].coords).norm();
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

/// Small fully connected block for numerical checks: every camera sees every
/// point, parameters are slightly off the values that generated the
/// measurements, and weights are random SPD matrices.
pub fn random_block(seed: u64, cameras: usize, points: usize, model: CameraModel) -> Block {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = |lo: f64, hi: f64| rng.random_range(lo..hi);
    let (intrinsics, shared) = match model {
        CameraModel::PoseOnly => (Intrinsics::PoseOnly, SharedCalibration::pinhole(500.0)),
        CameraModel::PerCameraFocalRadial => (
            Intrinsics::FocalRadial {
                focal: 500.0,
                k1: -0.05,
                k2: 0.01,
            },
            SharedCalibration::pinhole(500.0),
        ),
        CameraModel::SharedCalibration => (
            Intrinsics::Shared,
            SharedCalibration {
                fx: 500.0,
                fy: 505.0,
                skew: 0.2,
                px: 3.0,
                py: -2.0,
                k2: -0.03,
                k4: 0.005,
            },
        ),
    };
    let cams: Vec<Camera> = (0..cameras)
        .map(|_| {
            let w = Vector3::new(u(-0.1, 0.1), u(-0.1, 0.1), u(-0.3, 0.3));
            let c = Vector3::new(u(-1.0, 1.0), u(-1.0, 1.0), u(4.0, 5.0));
            Camera::from_center(Rotation3::from_scaled_axis(w), c, intrinsics)
        })
        .collect();
    let pts: Vec<Point3D> = (0..points)
        .map(|_| Point3D::new(Vector3::new(u(-1.0, 1.0), u(-1.0, 1.0), u(-0.3, 0.3))))
        .collect();
    let mut observations = Vec::with_capacity(cameras * points);
    for (i, cam) in cams.iter().enumerate() {
        for (j, p) in pts.iter().enumerate() {
            let x = project(cam, Some(&shared), &p.coords).expect("points lie below the cameras");
            let mut obs = Observation::new(i, j, x + Vector2::new(u(-0.5, 0.5), u(-0.5, 0.5)));
            let a = Matrix2::new(u(-0.5, 0.5), u(-0.5, 0.5), u(-0.5, 0.5), u(-0.5, 0.5));
            obs.weight = a * a.transpose() + Matrix2::identity() * 0.5;
            observations.push(obs);
        }
    }
    let mut block = Block {
        cameras: cams,
        points: pts,
        observations,
        shared_calibration: Some(shared),
    };
    for cam in &mut block.cameras {
        let d = [u(-1e-3, 1e-3), u(-1e-3, 1e-3), u(-1e-3, 1e-3), u(-0.01, 0.01), u(-0.01, 0.01), u(-0.01, 0.01), u(-1.0, 1.0), u(-1e-3, 1e-3)];
        cam.apply_increment(&d);
    }
    for p in &mut block.points {
        p.coords += Vector3::new(u(-0.01, 0.01), u(-0.01, 0.01), u(-0.01, 0.01));
    }
    if model == CameraModel::SharedCalibration {
        if let Some(cal) = &mut block.shared_calibration {
            cal.fx += 1.0;
            cal.px -= 0.5;
            cal.k2 += 0.002;
        }
    }
    block
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::sigma0;
    use crate::solver::{adjust, AdjustOptions};

    fn small() -> GeneratorSpec {
        GeneratorSpec {
            strips: 3,
            cameras_per_strip: 8,
            points_per_camera: 40,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a.ground_truth, b.ground_truth);
        assert_eq!(a.perturbed, b.perturbed);
        let c = generate(&GeneratorSpec { seed: 2, ..small() }).unwrap();
        assert_ne!(a.ground_truth, c.ground_truth);
    }

    #[test]
    fn every_point_has_enough_views() {
        let g = generate(&small()).unwrap();
        let adj = g.ground_truth.adjacency();
        assert_eq!(g.ground_truth.points.len(), 24 * 40);
        assert!(adj.by_point.iter().all(|o| o.len() >= 6));
        g.ground_truth.validate().unwrap();
    }

    #[test]
    fn noise_free_block_is_already_adjusted() {
        let mut spec = small();
        spec.noise_px = 0.0;
        spec.perturb_angle_rad = 0.0;
        spec.perturb_translation = 0.0;
        let mut g = generate(&spec).unwrap();
        let report = adjust(&mut g.perturbed, &[], &AdjustOptions::default()).unwrap();
        assert!(report.sigma0 < 1e-8);
        assert!(sigma0(&g.perturbed).unwrap() < 1e-8);
    }

    #[test]
    fn initial_error_is_tens_of_pixels() {
        let g = generate(&small()).unwrap();
        let e = mean_reprojection_error(&g.perturbed);
        assert!(e > 15.0 && e < 60.0, "{e}");
    }

    #[test]
    fn outlier_labels_match_request() {
        let spec = GeneratorSpec {
            outliers: Some(OutlierSpec {
                fraction: 0.02,
                min_px: 20.0,
                max_px: 200.0,
            }),
            ..small()
        };
        let g = generate(&spec).unwrap();
        let n = g.ground_truth.observations.len();
        assert_eq!(g.outliers.len(), (0.02 * n as f64).round() as usize);
        assert!(g.outliers.windows(2).all(|w| w[0] < w[1]));
        let clean = generate(&small()).unwrap();
        for (k, (a, b)) in g.ground_truth.observations.iter().zip(&clean.ground_truth.observations).enumerate() {
            let d = (a.coords - b.coords).norm();
            if g.outliers.binary_search(&k).is_ok() {
                assert!((20.0..=200.0).contains(&d));
            } else {
                assert_eq!(d, 0.0);
            }
        }
    }

    #[test]
    fn single_camera_is_infeasible() {
        let spec = GeneratorSpec {
            strips: 1,
            cameras_per_strip: 1,
            ..Default::default()
        };
        assert!(matches!(generate(&spec), Err(Error::SpecInfeasible(_))));
        let spec = GeneratorSpec { strips: 0, ..Default::default() };
        assert!(matches!(generate(&spec), Err(Error::SpecInfeasible(_))));
    }

    #[test]
    #[ignore = "full-size block, several minutes and gigabytes"]
    fn full_size_counts() {
        let spec = GeneratorSpec {
            strips: 50,
            cameras_per_strip: 400,
            ..Default::default()
        };
        let g = generate(&spec).unwrap();
        assert_eq!(g.ground_truth.cameras.len(), 20_000);
        let obs = g.ground_truth.observations.len() as f64;
        assert!((obs / 1.2e7 - 1.0).abs() < 0.1, "{obs}");
    }
}
