use nalgebra::{DMatrix, DVector};

use crate::conv::Dictionary;
use crate::error::{Error, Result};
use crate::tensor::{dot, norm2};

/// Supports up to this size use a Cholesky factorization; larger ones CG.
const CHOLESKY_LIMIT: usize = 200;
const CG_TOL: f64 = 1e-10;
/// Relative pivot size below which a Gram matrix is treated as singular.
const PIVOT_TOL: f64 = 1e-10;

pub(crate) fn gram(atoms: &[Vec<f64>]) -> DMatrix<f64> {
    let s = atoms.len();
    let mut g = DMatrix::zeros(s, s);
    for i in 0..s {
        for j in 0..=i {
            let v = dot(&atoms[i], &atoms[j]);
            g[(i, j)] = v;
            g[(j, i)] = v;
        }
    }
    g
}

/// Solves `G c = rhs` for a Gram matrix `G`. `support` labels the columns
/// for error reporting.
pub(crate) fn solve_normal(g: &DMatrix<f64>, rhs: &[f64], support: &[usize]) -> Result<Vec<f64>> {
    let s = rhs.len();
    if s == 0 {
        return Ok(Vec::new());
    }
    let scale = (0..s).map(|i| g[(i, i)]).fold(0.0, f64::max);
    let deficient = || Error::RankDeficient {
        support: support.to_vec(),
    };
    if !(scale > 0.0) {
        return Err(deficient());
    }
    if s <= CHOLESKY_LIMIT {
        let chol = g.clone().cholesky().ok_or_else(deficient)?;
        let l = chol.l_dirty();
        let min_pivot = (0..s).map(|i| l[(i, i)] * l[(i, i)]).fold(f64::INFINITY, f64::min);
        if min_pivot < PIVOT_TOL * scale {
            return Err(deficient());
        }
        let x = chol.solve(&DVector::from_column_slice(rhs));
        return Ok(x.iter().copied().collect());
    }
    conjugate_gradient(g, rhs).ok_or_else(deficient)
}

fn conjugate_gradient(g: &DMatrix<f64>, rhs: &[f64]) -> Option<Vec<f64>> {
    let b = DVector::from_column_slice(rhs);
    let b_norm = b.norm();
    if b_norm == 0.0 {
        return Some(vec![0.0; rhs.len()]);
    }
    let mut x = DVector::zeros(rhs.len());
    let mut r = b.clone();
    let mut p = r.clone();
    let mut rs = r.dot(&r);
    for _ in 0..10 * rhs.len() {
        let gp = g * &p;
        let curvature = p.dot(&gp);
        if curvature <= 0.0 {
            return None;
        }
        let alpha = rs / curvature;
        x.axpy(alpha, &p, 1.0);
        r.axpy(-alpha, &gp, 1.0);
        let rs_next = r.dot(&r);
        if rs_next.sqrt() <= CG_TOL * b_norm {
            return Some(x.iter().copied().collect());
        }
        p = &r + (rs_next / rs) * &p;
        rs = rs_next;
    }
    None
}

/// Least-squares coefficients of `y` on the given atoms (normal equations).
pub fn least_squares(atoms: &[Vec<f64>], y: &[f64], support: &[usize]) -> Result<Vec<f64>> {
    let g = gram(atoms);
    let rhs: Vec<f64> = atoms.iter().map(|a| dot(a, y)).collect();
    solve_normal(&g, &rhs, support)
}

/// Estimate of `||D||^2` (largest eigenvalue of `D^T D`) from 50 power
/// iterations started at a fixed pseudo-random vector.
pub fn lipschitz_estimate<D: Dictionary + ?Sized>(dict: &D) -> f64 {
    let m = dict.n_atoms();
    let mut state: u64 = 0x9e37_79b9_7f4a_7c15;
    let mut v: Vec<f64> = (0..m)
        .map(|_| {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            0.5 + (state >> 11) as f64 / (1u64 << 53) as f64
        })
        .collect();
    let mut estimate = 0.0;
    for _ in 0..50 {
        let norm = norm2(&v);
        if norm == 0.0 {
            return 0.0;
        }
        v.iter_mut().for_each(|x| *x /= norm);
        let dv = dict.apply_vec(&v);
        estimate = dot(&dv, &dv);
        v = dict.adjoint_vec(&dv);
    }
    estimate
}
