use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, Matrix3, SMatrix, Vector3};

use crate::error::{Error, Result};
use crate::model::{residual_and_jacobians, Block, CameraModel, Linearization, SlotMatrix, SlotVector, SLOT};
use crate::par;

use super::TiePointPrior;

pub type Coupling = SMatrix<f64, SLOT, 3>;

/// Placement of camera-side parameters. Node `i < n_cameras` is camera `i`;
/// with a shared calibration, node `n_cameras` holds it.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub n_cameras: usize,
    pub shared: bool,
    /// Which slot entries of each node are optimized.
    pub free: Vec<[bool; SLOT]>,
    /// Point and coordinate held fixed to remove the scale freedom.
    pub gauge_point: Option<(usize, usize)>,
}

impl Layout {
    pub fn for_block(block: &Block, fix_gauge: bool) -> Result<Layout> {
        let model = block.model()?;
        let dims = model.camera_dims();
        let shared = model == CameraModel::SharedCalibration;
        let adj = block.adjacency();
        let mut free = Vec::with_capacity(block.cameras.len() + shared as usize);
        for obs in &adj.by_camera {
            let mut mask = [false; SLOT];
            if !obs.is_empty() {
                mask[..dims].iter_mut().for_each(|m| *m = true);
            }
            free.push(mask);
        }
        if shared {
            let mut mask = [false; SLOT];
            mask[..crate::model::SHARED_DIMS].iter_mut().for_each(|m| *m = true);
            free.push(mask);
        }

        let mut gauge_point = None;
        if fix_gauge && !block.cameras.is_empty() {
            free[0][..6].iter_mut().for_each(|m| *m = false);
            let c0 = block.cameras[0].center();
            let mut best = 0.0;
            for (j, p) in block.points.iter().enumerate() {
                if !p.is_active() || adj.by_point[j].is_empty() {
                    continue;
                }
                let d = p.coords - c0;
                if d.norm() > best {
                    best = d.norm();
                    gauge_point = Some((j, d.iamax()));
                }
            }
        }
        Ok(Layout {
            n_cameras: block.cameras.len(),
            shared,
            free,
            gauge_point,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.free.len()
    }

    pub fn free_count(&self) -> usize {
        self.free.iter().map(|m| m.iter().filter(|&&f| f).count()).sum()
    }

    fn mask(&self, node: usize, j: &mut SMatrix<f64, 2, SLOT>) {
        for (c, &f) in self.free[node].iter().enumerate() {
            if !f {
                j.column_mut(c).fill(0.0);
            }
        }
    }
}

/// Weighted normal equations split into camera-side nodes and points.
#[derive(Debug, Clone)]
pub struct NormalSystem {
    pub layout: Layout,
    pub node_diag: Vec<SlotMatrix>,
    pub node_rhs: Vec<SlotVector>,
    /// Direct node-node blocks `(a, b)` with `a < b`; only camera/shared pairs.
    pub node_offdiag: BTreeMap<(usize, usize), SlotMatrix>,
    pub point_diag: Vec<Matrix3<f64>>,
    pub point_rhs: Vec<Vector3<f64>>,
    /// Points that carry parameters in this system.
    pub point_in_system: Vec<bool>,
    /// Point-to-node couplings, grouped by point in CSR layout.
    pub coupling_start: Vec<usize>,
    pub couplings: Vec<(usize, Coupling)>,
}

impl NormalSystem {
    pub fn couplings_of(&self, j: usize) -> &[(usize, Coupling)] {
        &self.couplings[self.coupling_start[j]..self.coupling_start[j + 1]]
    }

    /// Dense copy laid out as `[node slots..., point coordinates...]`.
    /// Entries of points outside the system stay zero.
    pub fn dense(&self) -> (DMatrix<f64>, DVector<f64>) {
        let nn = self.layout.n_nodes();
        let np = self.point_diag.len();
        let n = nn * SLOT + 3 * np;
        let mut m = DMatrix::zeros(n, n);
        let mut r = DVector::zeros(n);
        for a in 0..nn {
            m.view_mut((a * SLOT, a * SLOT), (SLOT, SLOT)).copy_from(&self.node_diag[a]);
            r.rows_mut(a * SLOT, SLOT).copy_from(&self.node_rhs[a]);
        }
        for (&(a, b), blk) in &self.node_offdiag {
            m.view_mut((a * SLOT, b * SLOT), (SLOT, SLOT)).copy_from(blk);
            m.view_mut((b * SLOT, a * SLOT), (SLOT, SLOT)).copy_from(&blk.transpose());
        }
        for j in 0..np {
            let o = nn * SLOT + 3 * j;
            m.view_mut((o, o), (3, 3)).copy_from(&self.point_diag[j]);
            r.rows_mut(o, 3).copy_from(&self.point_rhs[j]);
            for (a, w) in self.couplings_of(j) {
                m.view_mut((a * SLOT, o), (SLOT, 3)).copy_from(w);
                m.view_mut((o, a * SLOT), (3, SLOT)).copy_from(&w.transpose());
            }
        }
        (m, r)
    }
}

/// Linearizes every used observation, in parallel when available.
pub(crate) fn linearize(block: &Block) -> Vec<Option<Linearization>> {
    let shared = block.shared_calibration.as_ref();
    par::map_range(block.observations.len(), |k| {
        if !block.is_used(k) {
            return None;
        }
        let obs = &block.observations[k];
        residual_and_jacobians(
            &block.cameras[obs.camera],
            shared,
            &block.points[obs.point].coords,
            obs,
        )
        .ok()
    })
}

/// Accumulates `JᵀWJ` and `-JᵀWv` observation by observation, adds the
/// priors and applies `N + λ·diag(N)`.
pub fn build_normal_system(block: &Block, layout: &Layout, priors: &[TiePointPrior], lambda: f64) -> NormalSystem {
    let lin = linearize(block);
    assemble(block, layout, priors, lambda, &lin)
}

pub(crate) fn assemble(
    block: &Block,
    layout: &Layout,
    priors: &[TiePointPrior],
    lambda: f64,
    lin: &[Option<Linearization>],
) -> NormalSystem {
    let nn = layout.n_nodes();
    let np = block.points.len();
    let shared_node = layout.shared.then_some(layout.n_cameras);
    let mut node_diag = vec![SlotMatrix::zeros(); nn];
    let mut node_rhs = vec![SlotVector::zeros(); nn];
    let mut node_offdiag = BTreeMap::new();
    let mut point_diag = vec![Matrix3::zeros(); np];
    let mut point_rhs = vec![Vector3::zeros(); np];
    let mut point_in_system = vec![false; np];
    let mut coupling_start = Vec::with_capacity(np + 1);
    let mut couplings = Vec::new();

    let adj = block.adjacency();
    let point_mask = |j: usize, jp: &mut nalgebra::Matrix2x3<f64>| {
        if let Some((gj, c)) = layout.gauge_point {
            if gj == j {
                jp.column_mut(c).fill(0.0);
            }
        }
    };

    for j in 0..np {
        coupling_start.push(couplings.len());
        if !block.points[j].is_active() {
            continue;
        }
        let mut shared_coupling = Coupling::zeros();
        let mut any = false;
        for &k in &adj.by_point[j] {
            let Some(l) = &lin[k] else { continue };
            any = true;
            let w = &block.observations[k].weight;
            let i = block.observations[k].camera;
            let mut jc = l.d_camera;
            layout.mask(i, &mut jc);
            let mut jp = l.d_point;
            point_mask(j, &mut jp);
            let wr = w * l.residual;
            let jc_w = jc.transpose() * w;
            node_diag[i] += jc_w * jc;
            node_rhs[i] -= jc.transpose() * wr;
            point_diag[j] += jp.transpose() * w * jp;
            point_rhs[j] -= jp.transpose() * wr;
            couplings.push((i, jc_w * jp));
            if let (Some(s), Some(d)) = (shared_node, &l.d_shared) {
                let mut js = SMatrix::<f64, 2, SLOT>::zeros();
                js.fixed_view_mut::<2, 7>(0, 0).copy_from(d);
                layout.mask(s, &mut js);
                let js_w = js.transpose() * w;
                node_diag[s] += js_w * js;
                node_rhs[s] -= js.transpose() * wr;
                shared_coupling += js_w * jp;
                let cross = jc_w * js;
                *node_offdiag.entry((i, s)).or_insert_with(SlotMatrix::zeros) += cross;
            }
        }
        if any {
            point_in_system[j] = true;
            if let Some(s) = shared_node {
                couplings.push((s, shared_coupling));
            }
        }
    }
    coupling_start.push(couplings.len());

    for prior in priors {
        let j = prior.point;
        if j >= np || !block.points[j].is_active() {
            continue;
        }
        point_in_system[j] = true;
        point_diag[j] += prior.information;
        point_rhs[j] += prior.information * (prior.target - block.points[j].coords);
    }

    for a in 0..nn {
        for c in 0..SLOT {
            if layout.free[a][c] {
                node_diag[a][(c, c)] *= 1.0 + lambda;
            } else {
                // identity pad keeps fixed entries at a zero update
                node_diag[a][(c, c)] = 1.0;
            }
        }
    }
    for j in 0..np {
        if !point_in_system[j] {
            continue;
        }
        for c in 0..3 {
            point_diag[j][(c, c)] *= 1.0 + lambda;
        }
        if let Some((gj, c)) = layout.gauge_point {
            if gj == j {
                point_diag[j][(c, c)] = 1.0;
                point_rhs[j][c] = 0.0;
            }
        }
    }

    NormalSystem {
        layout: layout.clone(),
        node_diag,
        node_rhs,
        node_offdiag,
        point_diag,
        point_rhs,
        point_in_system,
        coupling_start,
        couplings,
    }
}

/// Upper-triangular block pattern of the reduced camera system.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pattern {
    pub row_start: Vec<usize>,
    pub cols: Vec<usize>,
}

impl Pattern {
    pub fn of(system: &NormalSystem) -> Pattern {
        let nn = system.layout.n_nodes();
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); nn];
        for j in 0..system.point_diag.len() {
            let cs = system.couplings_of(j);
            for (x, (a, _)) in cs.iter().enumerate() {
                for (b, _) in &cs[x + 1..] {
                    let (lo, hi) = if a < b { (*a, *b) } else { (*b, *a) };
                    rows[lo].push(hi);
                }
            }
        }
        for &(a, b) in system.node_offdiag.keys() {
            rows[a].push(b);
        }
        let mut row_start = Vec::with_capacity(nn + 1);
        let mut cols = Vec::new();
        for mut r in rows {
            r.sort_unstable();
            r.dedup();
            row_start.push(cols.len());
            cols.extend(r);
        }
        row_start.push(cols.len());
        Pattern { row_start, cols }
    }

    pub fn index(&self, a: usize, b: usize) -> Option<usize> {
        let row = &self.cols[self.row_start[a]..self.row_start[a + 1]];
        row.binary_search(&b).ok().map(|p| self.row_start[a] + p)
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }
}

/// Schur complement `S = N_CC - N_CX N_XX⁻¹ N_XC` with its right-hand side.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    pub pattern: Pattern,
    pub diag: Vec<SlotMatrix>,
    pub offdiag: Vec<SlotMatrix>,
    pub rhs: Vec<SlotVector>,
    /// Inverted point blocks, kept for back-substitution.
    pub point_inverse: Vec<Matrix3<f64>>,
}

impl ReducedSystem {
    pub fn n_nodes(&self) -> usize {
        self.diag.len()
    }

    pub fn mul(&self, x: &[SlotVector], y: &mut [SlotVector]) {
        for a in 0..self.diag.len() {
            y[a] = self.diag[a] * x[a];
        }
        for a in 0..self.diag.len() {
            for p in self.pattern.row_start[a]..self.pattern.row_start[a + 1] {
                let b = self.pattern.cols[p];
                let o = &self.offdiag[p];
                y[a] += o * x[b];
                y[b] += o.transpose() * x[a];
            }
        }
    }

    pub fn dense(&self) -> (DMatrix<f64>, DVector<f64>) {
        let nn = self.diag.len();
        let mut m = DMatrix::zeros(nn * SLOT, nn * SLOT);
        let mut r = DVector::zeros(nn * SLOT);
        for a in 0..nn {
            m.view_mut((a * SLOT, a * SLOT), (SLOT, SLOT)).copy_from(&self.diag[a]);
            r.rows_mut(a * SLOT, SLOT).copy_from(&self.rhs[a]);
            for p in self.pattern.row_start[a]..self.pattern.row_start[a + 1] {
                let b = self.pattern.cols[p];
                m.view_mut((a * SLOT, b * SLOT), (SLOT, SLOT)).copy_from(&self.offdiag[p]);
                m.view_mut((b * SLOT, a * SLOT), (SLOT, SLOT)).copy_from(&self.offdiag[p].transpose());
            }
        }
        (m, r)
    }
}

fn invert_spd(m: &Matrix3<f64>) -> Option<Matrix3<f64>> {
    let inv = m.cholesky()?.inverse();
    inv.iter().all(|v| v.is_finite()).then_some(inv)
}

pub fn schur_reduce(system: &NormalSystem, pattern: &Pattern) -> Result<ReducedSystem> {
    let nn = system.layout.n_nodes();
    let mut diag = system.node_diag.clone();
    let mut rhs = system.node_rhs.clone();
    let mut offdiag = vec![SlotMatrix::zeros(); pattern.nnz()];
    for (&(a, b), blk) in &system.node_offdiag {
        let p = pattern.index(a, b).expect("pattern covers direct blocks");
        offdiag[p] += blk;
    }
    let mut point_inverse = vec![Matrix3::zeros(); system.point_diag.len()];
    let mut scaled: Vec<(usize, Coupling)> = Vec::new();
    for j in 0..system.point_diag.len() {
        if !system.point_in_system[j] {
            continue;
        }
        let inv = invert_spd(&system.point_diag[j]).ok_or(Error::SingularPointBlock(j))?;
        point_inverse[j] = inv;
        let cs = system.couplings_of(j);
        scaled.clear();
        scaled.extend(cs.iter().map(|(a, w)| (*a, w * inv)));
        for (x, (a, y)) in scaled.iter().enumerate() {
            rhs[*a] -= y * system.point_rhs[j];
            diag[*a] -= y * cs[x].1.transpose();
            for (b, w) in &cs[x + 1..] {
                let prod = y * w.transpose();
                if a < b {
                    offdiag[pattern.index(*a, *b).expect("pattern")] -= prod;
                } else {
                    offdiag[pattern.index(*b, *a).expect("pattern")] -= prod.transpose();
                }
            }
        }
    }
    debug_assert_eq!(diag.len(), nn);
    Ok(ReducedSystem {
        pattern: pattern.clone(),
        diag,
        offdiag,
        rhs,
        point_inverse,
    })
}

/// `ΔX_j = N_XX,j⁻¹ (rhs_j - Σ N_XC,ja Δc_a)` for every point in the system.
pub fn back_substitute(system: &NormalSystem, reduced: &ReducedSystem, camera_update: &[SlotVector]) -> Vec<Vector3<f64>> {
    (0..system.point_diag.len())
        .map(|j| {
            if !system.point_in_system[j] {
                return Vector3::zeros();
            }
            let mut r = system.point_rhs[j];
            for (a, w) in system.couplings_of(j) {
                r -= w.transpose() * camera_update[*a];
            }
            reduced.point_inverse[j] * r
        })
        .collect()
}
