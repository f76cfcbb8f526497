use nalgebra::Cholesky;

use crate::error::{Error, Result};
use crate::model::{SlotMatrix, SlotVector};

use super::normal::ReducedSystem;

#[derive(Debug, Clone)]
pub struct PcgSolution {
    pub x: Vec<SlotVector>,
    pub iterations: usize,
    pub relative_residual: f64,
}

fn dot(a: &[SlotVector], b: &[SlotVector]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.dot(y)).sum()
}

struct BlockJacobi(Vec<Option<Cholesky<f64, nalgebra::Const<8>>>>);

impl BlockJacobi {
    fn new(diag: &[SlotMatrix]) -> Self {
        BlockJacobi(diag.iter().map(|d| d.cholesky()).collect())
    }

    fn apply(&self, r: &[SlotVector], z: &mut [SlotVector]) {
        for (a, c) in self.0.iter().enumerate() {
            z[a] = match c {
                Some(c) => c.solve(&r[a]),
                None => r[a],
            };
        }
    }
}

/// Block-Jacobi preconditioned conjugate gradients on `S x = rhs`, started
/// from zero. Stops once `sqrt(rᵀM⁻¹r)` falls below `tolerance` relative to
/// its initial value.
pub fn pcg_solve(s: &ReducedSystem, tolerance: f64, max_iterations: usize) -> Result<PcgSolution> {
    let n = s.n_nodes();
    let precond = BlockJacobi::new(&s.diag);
    let mut x = vec![SlotVector::zeros(); n];
    let mut r = s.rhs.clone();
    let mut z = vec![SlotVector::zeros(); n];
    precond.apply(&r, &mut z);
    let mut rz = dot(&r, &z);
    if rz <= 0.0 || !rz.is_finite() {
        return Ok(PcgSolution {
            x,
            iterations: 0,
            relative_residual: 0.0,
        });
    }
    let rz0 = rz;
    let mut p = z.clone();
    let mut q = vec![SlotVector::zeros(); n];
    let mut best = (f64::INFINITY, x.clone());
    for it in 1..=max_iterations {
        s.mul(&p, &mut q);
        let pq = dot(&p, &q);
        if !(pq > 0.0) {
            break;
        }
        let alpha = rz / pq;
        for a in 0..n {
            x[a] += p[a] * alpha;
            r[a] -= q[a] * alpha;
        }
        precond.apply(&r, &mut z);
        let rz_new = dot(&r, &z);
        let rel = (rz_new.max(0.0) / rz0).sqrt();
        if rel < best.0 {
            best.0 = rel;
            best.1.clone_from(&x);
        }
        if rel < tolerance {
            return Ok(PcgSolution {
                x,
                iterations: it,
                relative_residual: rel,
            });
        }
        let beta = rz_new / rz;
        rz = rz_new;
        for a in 0..n {
            p[a] = z[a] + p[a] * beta;
        }
    }
    Err(Error::CgStagnated {
        iterations: max_iterations,
        relative_residual: best.0,
    })
}
