//! Block data model, camera projection and analytic Jacobians.
//!
//! All camera models share the same extrinsic convention: a world point `X`
//! maps to camera coordinates `P = R·X + t` and the camera looks down its
//! negative z axis, so the depth of a point is `-P.z`. Normalized image
//! coordinates are `n = (P.x, P.y) / depth`. Radial distortion is applied to
//! `n` before the focal scaling.
//!
//! Rotations are stored as full matrices. During optimization a camera carries
//! a 3-vector increment `ω` composed on the left, `R ← exp(ω)·R`, so every
//! Jacobian with respect to rotation is evaluated at `ω = 0`.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Rotation3, SMatrix, SVector, Vector2, Vector3};

use crate::error::{Error, Result};

/// Width of a camera-side parameter slot. Every camera block and the shared
/// calibration fit in 8 parameters; unused trailing entries stay zero.
pub const SLOT: usize = 8;
pub type SlotVector = SVector<f64, SLOT>;
pub type SlotMatrix = SMatrix<f64, SLOT, SLOT>;
pub type SlotJacobian = SMatrix<f64, 2, SLOT>;

/// Number of parameters of the shared calibration.
pub const SHARED_DIMS: usize = 7;

/// Gauge freedom of a free network: rotation, translation and scale.
pub const DATUM_DEFECT: usize = 7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CameraModel {
    /// Six pose parameters; calibration fixed at block level.
    PoseOnly,
    /// Pose plus focal length and first radial coefficient per camera.
    PerCameraFocalRadial,
    /// Pose per camera plus one 7-parameter calibration shared by the block.
    SharedCalibration,
}

impl CameraModel {
    pub fn tag(self) -> &'static str {
        match self {
            CameraModel::PoseOnly => "pose_only",
            CameraModel::PerCameraFocalRadial => "per_camera_focal_radial",
            CameraModel::SharedCalibration => "shared_calibration",
        }
    }

    pub fn from_tag(tag: &str) -> Option<Self> {
        match tag {
            "pose_only" => Some(CameraModel::PoseOnly),
            "per_camera_focal_radial" => Some(CameraModel::PerCameraFocalRadial),
            "shared_calibration" => Some(CameraModel::SharedCalibration),
            _ => None,
        }
    }

    /// Parameters optimized per camera.
    pub fn camera_dims(self) -> usize {
        match self {
            CameraModel::PerCameraFocalRadial => 8,
            _ => 6,
        }
    }
}

/// Model-dependent intrinsic parameters of one camera.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Intrinsics {
    PoseOnly,
    /// `k2` is carried from the input but never optimized.
    FocalRadial { focal: f64, k1: f64, k2: f64 },
    Shared,
}

/// Block-level calibration: `(fx, fy, skew, px, py, k2, k4)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharedCalibration {
    pub fx: f64,
    pub fy: f64,
    pub skew: f64,
    pub px: f64,
    pub py: f64,
    pub k2: f64,
    pub k4: f64,
}

impl SharedCalibration {
    /// Unit focal length, principal point at the origin, no distortion.
    pub const UNIT: SharedCalibration = SharedCalibration {
        fx: 1.0,
        fy: 1.0,
        skew: 0.0,
        px: 0.0,
        py: 0.0,
        k2: 0.0,
        k4: 0.0,
    };

    pub fn pinhole(focal: f64) -> Self {
        SharedCalibration {
            fx: focal,
            fy: focal,
            ..Self::UNIT
        }
    }

    pub fn to_array(&self) -> [f64; SHARED_DIMS] {
        [self.fx, self.fy, self.skew, self.px, self.py, self.k2, self.k4]
    }

    pub fn from_array(a: [f64; SHARED_DIMS]) -> Self {
        SharedCalibration {
            fx: a[0],
            fy: a[1],
            skew: a[2],
            px: a[3],
            py: a[4],
            k2: a[5],
            k4: a[6],
        }
    }

    pub fn is_valid(&self) -> bool {
        self.fx > 0.0 && self.fy > 0.0 && self.to_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub rotation: Rotation3<f64>,
    pub translation: Vector3<f64>,
    pub intrinsics: Intrinsics,
}

impl Camera {
    pub fn new(rotation: Rotation3<f64>, translation: Vector3<f64>, intrinsics: Intrinsics) -> Self {
        Camera {
            rotation,
            translation,
            intrinsics,
        }
    }

    /// Camera with the given rotation whose projection center sits at `center`.
    pub fn from_center(rotation: Rotation3<f64>, center: Vector3<f64>, intrinsics: Intrinsics) -> Self {
        let translation = -(rotation * center);
        Camera::new(rotation, translation, intrinsics)
    }

    pub fn model(&self) -> CameraModel {
        match self.intrinsics {
            Intrinsics::PoseOnly => CameraModel::PoseOnly,
            Intrinsics::FocalRadial { .. } => CameraModel::PerCameraFocalRadial,
            Intrinsics::Shared => CameraModel::SharedCalibration,
        }
    }

    pub fn center(&self) -> Vector3<f64> {
        -(self.rotation.inverse() * self.translation)
    }

    /// Optimized intrinsics: `[focal, k1]` or empty.
    pub fn intrinsics_vec(&self) -> Vec<f64> {
        match self.intrinsics {
            Intrinsics::FocalRadial { focal, k1, .. } => vec![focal, k1],
            _ => Vec::new(),
        }
    }

    /// Applies an increment laid out as `[ω, δt, δf, δk1]` and re-orthonormalizes.
    pub fn apply_increment(&mut self, delta: &[f64]) {
        let omega = Vector3::new(delta[0], delta[1], delta[2]);
        let composed = Rotation3::from_scaled_axis(omega) * self.rotation;
        self.rotation = orthonormalize(composed.matrix());
        self.translation += Vector3::new(delta[3], delta[4], delta[5]);
        if let Intrinsics::FocalRadial { focal, k1, .. } = &mut self.intrinsics {
            *focal += delta[6];
            *k1 += delta[7];
        }
    }
}

/// Nearest rotation matrix in the Frobenius sense.
pub fn orthonormalize(m: &Matrix3<f64>) -> Rotation3<f64> {
    let svd = m.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested V^T");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u = u;
        u.column_mut(2).neg_mut();
        r = u * v_t;
    }
    Rotation3::from_matrix_unchecked(r)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ObservationStatus {
    Active,
    DownWeighted,
    Deleted,
}

impl ObservationStatus {
    /// Active or down-weighted observations take part in the adjustment.
    pub fn is_used(self) -> bool {
        !matches!(self, ObservationStatus::Deleted)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub camera: usize,
    pub point: usize,
    /// Measured image coordinates in pixels.
    pub coords: Vector2<f64>,
    /// Inverse covariance of the measurement, pixels⁻².
    pub weight: Matrix2<f64>,
    pub status: ObservationStatus,
}

impl Observation {
    pub fn new(camera: usize, point: usize, coords: Vector2<f64>) -> Self {
        Observation {
            camera,
            point,
            coords,
            weight: Matrix2::identity(),
            status: ObservationStatus::Active,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PointStatus {
    Active,
    Deleted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Point3D {
    pub coords: Vector3<f64>,
    pub status: PointStatus,
}

impl Point3D {
    pub fn new(coords: Vector3<f64>) -> Self {
        Point3D {
            coords,
            status: PointStatus::Active,
        }
    }

    pub fn is_active(&self) -> bool {
        self.status == PointStatus::Active
    }
}

/// Observation indices grouped by camera and by point.
#[derive(Debug, Clone, Default)]
pub struct Adjacency {
    pub by_camera: Vec<Vec<usize>>,
    pub by_point: Vec<Vec<usize>>,
}

/// The unit of adjustment.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Block {
    pub cameras: Vec<Camera>,
    pub points: Vec<Point3D>,
    pub observations: Vec<Observation>,
    pub shared_calibration: Option<SharedCalibration>,
}

impl Block {
    /// Camera model common to all cameras; empty blocks report pose-only.
    pub fn model(&self) -> Result<CameraModel> {
        let mut models = self.cameras.iter().map(Camera::model);
        let first = models.next().unwrap_or(CameraModel::PoseOnly);
        if models.any(|m| m != first) {
            return Err(Error::InvalidBlock("cameras mix different models".into()));
        }
        Ok(first)
    }

    /// Calibration used for projection. Pose-only blocks hold it fixed.
    pub fn calibration(&self) -> SharedCalibration {
        self.shared_calibration.unwrap_or(SharedCalibration::UNIT)
    }

    pub fn validate(&self) -> Result<()> {
        let model = self.model()?;
        if let Some(cal) = &self.shared_calibration {
            if !cal.is_valid() {
                return Err(Error::InvalidBlock("shared calibration needs fx, fy > 0".into()));
            }
        }
        if model == CameraModel::SharedCalibration && self.shared_calibration.is_none() {
            return Err(Error::InvalidBlock("shared_calibration cameras without a calibration".into()));
        }
        let mut seen = std::collections::HashSet::with_capacity(self.observations.len());
        for obs in &self.observations {
            if obs.camera >= self.cameras.len() {
                return Err(Error::IndexOutOfRange {
                    what: "camera",
                    index: obs.camera,
                    count: self.cameras.len(),
                });
            }
            if obs.point >= self.points.len() {
                return Err(Error::IndexOutOfRange {
                    what: "point",
                    index: obs.point,
                    count: self.points.len(),
                });
            }
            if !seen.insert((obs.camera, obs.point)) {
                return Err(Error::InvalidBlock(format!(
                    "duplicate observation of point {} in camera {}",
                    obs.point, obs.camera
                )));
            }
        }
        Ok(())
    }

    /// Observation indices that take part in the adjustment, grouped.
    pub fn adjacency(&self) -> Adjacency {
        let mut adj = Adjacency {
            by_camera: vec![Vec::new(); self.cameras.len()],
            by_point: vec![Vec::new(); self.points.len()],
        };
        for (k, obs) in self.observations.iter().enumerate() {
            if self.is_used(k) {
                adj.by_camera[obs.camera].push(k);
                adj.by_point[obs.point].push(k);
            }
        }
        adj
    }

    /// True when observation `k` and its point are both live.
    pub fn is_used(&self, k: usize) -> bool {
        let obs = &self.observations[k];
        obs.status.is_used() && self.points[obs.point].is_active()
    }

    pub fn used_observation_count(&self) -> usize {
        (0..self.observations.len()).filter(|&k| self.is_used(k)).count()
    }

    pub fn active_point_count(&self) -> usize {
        self.points.iter().filter(|p| p.is_active()).count()
    }

    /// Parameters of a free network minus the datum defect.
    pub fn free_parameter_count(&self) -> Result<i64> {
        let model = self.model()?;
        let mut n = (self.cameras.len() * model.camera_dims() + 3 * self.active_point_count()) as i64;
        if model == CameraModel::SharedCalibration {
            n += SHARED_DIMS as i64;
        }
        Ok(n - DATUM_DEFECT as i64)
    }

    pub fn redundancy(&self) -> Result<i64> {
        Ok(2 * self.used_observation_count() as i64 - self.free_parameter_count()?)
    }

    /// Marks an observation deleted; its point goes too once fewer than two remain.
    pub fn delete_observation(&mut self, k: usize, adj: &Adjacency) -> bool {
        self.observations[k].status = ObservationStatus::Deleted;
        let j = self.observations[k].point;
        let remaining = adj.by_point[j]
            .iter()
            .filter(|&&o| self.observations[o].status.is_used())
            .count();
        if remaining < 2 && self.points[j].is_active() {
            self.delete_point(j, adj);
            return true;
        }
        false
    }

    /// Deletes a point together with all of its observations.
    pub fn delete_point(&mut self, j: usize, adj: &Adjacency) {
        self.points[j].status = PointStatus::Deleted;
        for &k in &adj.by_point[j] {
            self.observations[k].status = ObservationStatus::Deleted;
        }
    }

    /// Deletes every active point with fewer than two used observations.
    /// Returns the number of points removed.
    pub fn prune_weak_points(&mut self) -> usize {
        let adj = self.adjacency();
        let mut removed = 0;
        for j in 0..self.points.len() {
            if self.points[j].is_active() && adj.by_point[j].len() < 2 {
                self.delete_point(j, &adj);
                removed += 1;
            }
        }
        removed
    }

    pub fn project_observation(&self, k: usize) -> Result<Vector2<f64>> {
        let obs = &self.observations[k];
        project(
            &self.cameras[obs.camera],
            self.shared_calibration.as_ref(),
            &self.points[obs.point].coords,
        )
    }
}

/// Camera coordinates and depth of a world point.
fn to_camera(camera: &Camera, point: &Vector3<f64>) -> Result<(Vector3<f64>, f64)> {
    let pc = camera.rotation * point + camera.translation;
    let depth = -pc.z;
    if !(depth > 0.0) {
        return Err(Error::DepthNonPositive { depth });
    }
    Ok((pc, depth))
}

/// Projects a world point into pixels under the camera's model.
pub fn project(camera: &Camera, shared: Option<&SharedCalibration>, point: &Vector3<f64>) -> Result<Vector2<f64>> {
    let (pc, depth) = to_camera(camera, point)?;
    let n = Vector2::new(pc.x / depth, pc.y / depth);
    let r2 = n.norm_squared();
    Ok(match camera.intrinsics {
        Intrinsics::FocalRadial { focal, k1, k2 } => n * (focal * (1.0 + k1 * r2 + k2 * r2 * r2)),
        Intrinsics::PoseOnly | Intrinsics::Shared => {
            let cal = shared.copied().unwrap_or(SharedCalibration::UNIT);
            let nd = n * (1.0 + cal.k2 * r2 + cal.k4 * r2 * r2);
            Vector2::new(cal.fx * nd.x + cal.skew * nd.y + cal.px, cal.fy * nd.y + cal.py)
        }
    })
}

/// Residual and Jacobians of one observation at the current parameters.
#[derive(Debug, Clone)]
pub struct Linearization {
    /// `project(..) - measured`, pixels.
    pub residual: Vector2<f64>,
    /// Columns `[ω, t, f, k1]`; only the first `camera_dims` are meaningful.
    pub d_camera: SlotJacobian,
    pub camera_dims: usize,
    pub d_point: Matrix2x3<f64>,
    /// Columns `(fx, fy, skew, px, py, k2, k4)` for shared-calibration cameras.
    pub d_shared: Option<SMatrix<f64, 2, SHARED_DIMS>>,
}

pub fn residual_and_jacobians(
    camera: &Camera,
    shared: Option<&SharedCalibration>,
    point: &Vector3<f64>,
    obs: &Observation,
) -> Result<Linearization> {
    let (pc, depth) = to_camera(camera, point)?;
    let n = Vector2::new(pc.x / depth, pc.y / depth);
    let r2 = n.norm_squared();

    // dn/dP with depth = -P.z
    let inv_d = 1.0 / depth;
    let dn_dp = Matrix2x3::new(inv_d, 0.0, n.x * inv_d, 0.0, inv_d, n.y * inv_d);

    // d(scaled n)/dn for s(r²)·n
    let radial = |a: f64, b: f64| {
        let s = 1.0 + a * r2 + b * r2 * r2;
        let ds = a + 2.0 * b * r2;
        (s, Matrix2::identity() * s + n * n.transpose() * (2.0 * ds))
    };

    let (pixel, dpix_dn, d_intr, d_shared) = match camera.intrinsics {
        Intrinsics::FocalRadial { focal, k1, k2 } => {
            let (s, ds_dn) = radial(k1, k2);
            let pixel = n * (focal * s);
            let mut d_intr = SMatrix::<f64, 2, 2>::zeros();
            d_intr.set_column(0, &(n * s));
            d_intr.set_column(1, &(n * (focal * r2)));
            (pixel, ds_dn * focal, Some(d_intr), None)
        }
        Intrinsics::PoseOnly | Intrinsics::Shared => {
            let cal = shared.copied().unwrap_or(SharedCalibration::UNIT);
            let (s, ds_dn) = radial(cal.k2, cal.k4);
            let nd = n * s;
            let k = Matrix2::new(cal.fx, cal.skew, 0.0, cal.fy);
            let pixel = k * nd + Vector2::new(cal.px, cal.py);
            let d_shared = if camera.intrinsics == Intrinsics::Shared {
                let kn = k * n;
                let mut d = SMatrix::<f64, 2, SHARED_DIMS>::zeros();
                d[(0, 0)] = nd.x;
                d[(1, 1)] = nd.y;
                d[(0, 2)] = nd.y;
                d[(0, 3)] = 1.0;
                d[(1, 4)] = 1.0;
                d.set_column(5, &(kn * r2));
                d.set_column(6, &(kn * (r2 * r2)));
                Some(d)
            } else {
                None
            };
            (pixel, k * ds_dn, None, d_shared)
        }
    };

    let dpix_dp = dpix_dn * dn_dp;
    let rx = camera.rotation * point;
    let d_rot = -dpix_dp * skew(&rx);

    let mut d_camera = SlotJacobian::zeros();
    d_camera.fixed_view_mut::<2, 3>(0, 0).copy_from(&d_rot);
    d_camera.fixed_view_mut::<2, 3>(0, 3).copy_from(&dpix_dp);
    let camera_dims = if let Some(d) = d_intr {
        d_camera.fixed_view_mut::<2, 2>(0, 6).copy_from(&d);
        8
    } else {
        6
    };

    Ok(Linearization {
        residual: pixel - obs.coords,
        d_camera,
        camera_dims,
        d_point: dpix_dp * camera.rotation.matrix(),
        d_shared,
    })
}

pub(crate) fn skew(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// `vᵀ W v` of one observation; errors when the projection is undefined.
pub fn weighted_residual(block: &Block, k: usize) -> Result<f64> {
    let obs = &block.observations[k];
    let v = block.project_observation(k)? - obs.coords;
    Ok((v.transpose() * obs.weight * v)[(0, 0)])
}

/// Σ vᵀ W v over used observations.
pub fn weighted_cost(block: &Block) -> Result<f64> {
    let mut cost = 0.0;
    for k in 0..block.observations.len() {
        if block.is_used(k) {
            cost += weighted_residual(block, k)?;
        }
    }
    Ok(cost)
}

/// `sqrt(cost / redundancy)`.
pub fn sigma0_from_cost(cost: f64, redundancy: i64) -> Result<f64> {
    if redundancy <= 0 {
        return Err(Error::NonPositiveRedundancy(redundancy));
    }
    Ok((cost / redundancy as f64).sqrt())
}

/// Average error of the weighted image measurements, in pixels.
pub fn sigma0(block: &Block) -> Result<f64> {
    let redundancy = block.redundancy()?;
    if redundancy <= 0 {
        return Err(Error::NonPositiveRedundancy(redundancy));
    }
    sigma0_from_cost(weighted_cost(block)?, redundancy)
}

/// Residual mapped to unit covariance: `|L·v|² = vᵀ W v` with `W = Lᵀ L`.
pub fn whiten(weight: &Matrix2<f64>, residual: &Vector2<f64>) -> Vector2<f64> {
    match weight.cholesky() {
        Some(ch) => ch.l().transpose() * residual,
        None => Vector2::zeros(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pose_camera() -> Camera {
        Camera::new(Rotation3::identity(), Vector3::zeros(), Intrinsics::PoseOnly)
    }

    #[test]
    fn point_at_center_has_no_projection() {
        let err = project(&pose_camera(), None, &Vector3::zeros()).unwrap_err();
        assert!(matches!(err, Error::DepthNonPositive { .. }));
        let behind = project(&pose_camera(), None, &Vector3::new(0.0, 0.0, 3.0));
        assert!(behind.is_err());
    }

    #[test]
    fn optical_axis_maps_to_principal_point() {
        let p = project(&pose_camera(), None, &Vector3::new(0.0, 0.0, -5.0)).unwrap();
        assert_eq!(p, Vector2::zeros());
    }

    /// Step-by-step scalar rewrite of the three projection formulas.
    fn scalar_projection(camera: &Camera, cal: &SharedCalibration, x: &Vector3<f64>) -> (f64, f64) {
        let r = camera.rotation.matrix();
        let mut p = [0.0; 3];
        for i in 0..3 {
            p[i] = r[(i, 0)] * x[0] + r[(i, 1)] * x[1] + r[(i, 2)] * x[2] + camera.translation[i];
        }
        let u = -p[0] / p[2];
        let v = -p[1] / p[2];
        let rr = u * u + v * v;
        match camera.intrinsics {
            Intrinsics::FocalRadial { focal, k1, k2 } => {
                let d = 1.0 + k1 * rr + k2 * rr * rr;
                (focal * d * u, focal * d * v)
            }
            _ => {
                let d = 1.0 + cal.k2 * rr + cal.k4 * rr * rr;
                let (ud, vd) = (u * d, v * d);
                (cal.fx * ud + cal.skew * vd + cal.px, cal.fy * vd + cal.py)
            }
        }
    }

    fn random_setup(rng: &mut ChaCha8Rng, intrinsics: Intrinsics) -> (Camera, Vector3<f64>) {
        let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let rotation = Rotation3::from_scaled_axis(axis);
        let center = Vector3::new(rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
        let camera = Camera::from_center(rotation, center, intrinsics);
        let local = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), -rng.random_range(3.0..8.0));
        let world = rotation.inverse() * (local - camera.translation);
        (camera, world)
    }

    #[test]
    fn projection_matches_scalar_rewrite() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cal = SharedCalibration {
            fx: 800.0,
            fy: 790.0,
            skew: 0.5,
            px: 12.0,
            py: -7.0,
            k2: -0.05,
            k4: 0.01,
        };
        for intr in [
            Intrinsics::PoseOnly,
            Intrinsics::Shared,
            Intrinsics::FocalRadial {
                focal: 500.0,
                k1: -0.1,
                k2: 0.02,
            },
        ] {
            for _ in 0..50 {
                let (camera, x) = random_setup(&mut rng, intr);
                let p = project(&camera, Some(&cal), &x).unwrap();
                let (u, v) = scalar_projection(&camera, &cal, &x);
                assert!((p.x - u).abs() < 1e-12 * u.abs().max(1.0));
                assert!((p.y - v).abs() < 1e-12 * v.abs().max(1.0));
            }
        }
    }

    #[test]
    fn zero_noise_observation_has_zero_residual() {
        let cam = pose_camera();
        let x = Vector3::new(0.3, -0.2, -4.0);
        let obs = Observation::new(0, 0, project(&cam, None, &x).unwrap());
        let lin = residual_and_jacobians(&cam, None, &x, &obs).unwrap();
        assert_eq!(lin.residual, Vector2::zeros());
    }

    #[test]
    fn lateral_point_shift_scales_with_focal_over_depth() {
        let cal = SharedCalibration::pinhole(1000.0);
        let cam = pose_camera();
        let depth = 20.0;
        let delta = 1e-4;
        let x = Vector3::new(0.0, 0.0, -depth);
        let obs = Observation::new(0, 0, project(&cam, Some(&cal), &x).unwrap());
        let moved = x + Vector3::new(delta, 0.0, 0.0);
        let r = project(&cam, Some(&cal), &moved).unwrap() - obs.coords;
        let expected = cal.fx * delta / depth;
        assert!((r.x - expected).abs() < 1e-9);
        assert!(r.y.abs() < 1e-12);
    }

    #[test]
    fn sigma0_hand_arithmetic() {
        assert_eq!(sigma0_from_cost(0.0, 5).unwrap(), 0.0);
        // residual norms 3 and 4 under unit weights, redundancy 5
        let s = sigma0_from_cost(3.0f64.powi(2) + 4.0f64.powi(2), 5).unwrap();
        assert!((s - 5.0f64.sqrt()).abs() < 1e-15);
        assert!(matches!(sigma0_from_cost(1.0, 0), Err(Error::NonPositiveRedundancy(0))));
    }

    #[test]
    fn rotation_increments_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let r1 = Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
            let r2 = Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5));
            let base = Rotation3::from_scaled_axis(Vector3::new(0.1, 2.9, -0.4));
            let mut cam = Camera::new(base, Vector3::zeros(), Intrinsics::PoseOnly);
            cam.apply_increment(&[r1.x, r1.y, r1.z, 0.0, 0.0, 0.0]);
            cam.apply_increment(&[r2.x, r2.y, r2.z, 0.0, 0.0, 0.0]);
            let composed = Rotation3::from_scaled_axis(r2) * Rotation3::from_scaled_axis(r1) * base;
            assert!((cam.rotation.matrix() - composed.matrix()).amax() < 1e-9);
            assert!((cam.rotation.matrix().determinant() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn increments_near_half_turn_stay_orthonormal() {
        let mut cam = Camera::new(
            Rotation3::from_scaled_axis(Vector3::new(0.0, 0.0, std::f64::consts::PI - 1e-6)),
            Vector3::zeros(),
            Intrinsics::PoseOnly,
        );
        for _ in 0..1000 {
            cam.apply_increment(&[1e-3, -2e-3, 1e-3, 0.0, 0.0, 0.0]);
        }
        let m = cam.rotation.matrix();
        assert!((m.transpose() * m - Matrix3::identity()).amax() < 1e-12);
    }

    proptest! {
        #[test]
        fn pose_only_projection_is_scale_invariant(
            s in 0.01f64..100.0,
            ax in -1.0f64..1.0, ay in -1.0f64..1.0, az in -1.0f64..1.0,
            px in -1.0f64..1.0, py in -1.0f64..1.0, depth in 2.0f64..10.0,
            tx in -1.0f64..1.0, ty in -1.0f64..1.0, tz in -1.0f64..1.0,
        ) {
            let rot = Rotation3::from_scaled_axis(Vector3::new(ax, ay, az));
            let t = Vector3::new(tx, ty, tz);
            let cam = Camera::new(rot, t, Intrinsics::PoseOnly);
            let x = rot.inverse() * (Vector3::new(px, py, -depth) - t);
            let scaled = Camera::new(rot, t * s, Intrinsics::PoseOnly);
            let a = project(&cam, None, &x).unwrap();
            let b = project(&scaled, None, &(x * s)).unwrap();
            prop_assert!((a - b).amax() < 1e-9);
        }
    }
}
