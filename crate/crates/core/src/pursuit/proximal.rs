use super::check_signal;
use super::linalg::lipschitz_estimate;
use super::PursuitConfig;
use crate::conv::Dictionary;
use crate::error::{Error, Result};
use crate::tensor::{norm2, SparseVec};

/// Keeps the `k` largest-magnitude entries; ties at the threshold go to the
/// lowest index.
pub fn hard_threshold(v: &[f64], k: usize) -> Vec<f64> {
    let mut out = vec![0.0; v.len()];
    if k == 0 {
        return out;
    }
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[b].abs().total_cmp(&v[a].abs()).then(a.cmp(&b)));
    for &i in order.iter().take(k) {
        out[i] = v[i];
    }
    out
}

pub fn soft_threshold(v: &[f64], tau: f64) -> Vec<f64> {
    v.iter()
        .map(|&x| x.signum() * (x.abs() - tau).max(0.0))
        .collect()
}

/// `0.5 ||y - D g||^2 + lambda ||g||_1`.
pub fn lasso_objective<D: Dictionary + ?Sized>(y: &[f64], dict: &D, gamma: &[f64], lambda: f64) -> f64 {
    let dg = dict.apply_vec(gamma);
    objective_from(y, &dg, gamma, lambda)
}

fn objective_from(y: &[f64], dg: &[f64], gamma: &[f64], lambda: f64) -> f64 {
    let fit: f64 = y.iter().zip(dg).map(|(a, b)| (a - b) * (a - b)).sum();
    0.5 * fit + lambda * gamma.iter().map(|v| v.abs()).sum::<f64>()
}

fn step_size<D: Dictionary + ?Sized>(dict: &D, config: &PursuitConfig) -> Result<f64> {
    if let Some(step) = config.step_size {
        return Ok(step);
    }
    let lip = lipschitz_estimate(dict);
    if !(lip > 0.0) {
        return Err(Error::Parameter("dictionary has zero operator norm".into()));
    }
    Ok(1.0 / lip)
}

/// FISTA for `min 0.5 ||y - D g||^2 + lambda ||g||_1` with adaptive restart.
/// Returns the last proximal (non-extrapolated) iterate.
pub fn fista_lasso<D: Dictionary + ?Sized>(
    y: &[f64],
    dict: &D,
    lambda: f64,
    config: &PursuitConfig,
) -> Result<SparseVec> {
    check_signal(y, dict)?;
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::Parameter(format!("lambda_l1 must be positive, got {lambda}")));
    }
    let geometry = dict.coeff_geometry();
    let m = dict.n_atoms();
    let aty = dict.adjoint_vec(y);
    if aty.iter().all(|v| v.abs() <= lambda) {
        return Ok(SparseVec::zeros(geometry));
    }
    let step = step_size(dict, config)?;

    let mut x = vec![0.0; m];
    let mut f_x = 0.5 * y.iter().map(|v| v * v).sum::<f64>();
    let mut z = x.clone();
    let mut t = 1.0_f64;
    // gradient at z is D^T (D z - y)
    let gradient_step = |point: &[f64]| -> Vec<f64> {
        let r: Vec<f64> = dict.apply_vec(point).iter().zip(y).map(|(a, b)| a - b).collect();
        let g = dict.adjoint_vec(&r);
        let moved: Vec<f64> = point.iter().zip(&g).map(|(p, gi)| p - step * gi).collect();
        soft_threshold(&moved, step * lambda)
    };

    for _ in 0..config.max_iters {
        let mut next = gradient_step(&z);
        let mut f_next = lasso_objective(y, dict, &next, lambda);
        if f_next > f_x {
            // restart from the last accepted iterate with a plain step
            t = 1.0;
            next = gradient_step(&x);
            f_next = lasso_objective(y, dict, &next, lambda);
            if f_next > f_x {
                break;
            }
        }
        if !f_next.is_finite() {
            return Err(Error::NonFinite("FISTA objective".into()));
        }
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_next;
        z = next
            .iter()
            .zip(&x)
            .map(|(a, b)| a + momentum * (a - b))
            .collect();
        let change = (f_x - f_next).abs();
        x = next;
        t = t_next;
        let converged = change <= config.tol * f_x.max(f64::MIN_POSITIVE);
        f_x = f_next;
        if converged {
            break;
        }
    }
    SparseVec::from_slice(geometry, &x)
}

/// Iterative hard thresholding keeping `k` nonzeros. Returns the iterate
/// with the smallest residual seen.
pub fn iht<D: Dictionary + ?Sized>(y: &[f64], dict: &D, k: usize, config: &PursuitConfig) -> Result<SparseVec> {
    check_signal(y, dict)?;
    let geometry = dict.coeff_geometry();
    if k == 0 || norm2(y) == 0.0 {
        return Ok(SparseVec::zeros(geometry));
    }
    let step = step_size(dict, config)?;
    let m = dict.n_atoms();
    let mut gamma = vec![0.0; m];
    let mut residual = y.to_vec();
    let mut best = (norm2(y), gamma.clone());
    for _ in 0..config.max_iters {
        let g = dict.adjoint_vec(&residual);
        let moved: Vec<f64> = gamma.iter().zip(&g).map(|(a, b)| a + step * b).collect();
        let next = hard_threshold(&moved, k);
        let delta = norm2(&next.iter().zip(&gamma).map(|(a, b)| a - b).collect::<Vec<_>>());
        gamma = next;
        residual = y.iter().zip(dict.apply_vec(&gamma)).map(|(a, b)| a - b).collect();
        let r_norm = norm2(&residual);
        if !r_norm.is_finite() {
            return Err(Error::NonFinite("IHT residual".into()));
        }
        if r_norm < best.0 {
            best = (r_norm, gamma.clone());
        }
        if delta <= config.tol * norm2(&gamma).max(f64::MIN_POSITIVE) {
            break;
        }
    }
    SparseVec::from_slice(geometry, &best.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conv::DenseDict;

    fn identity(n: usize) -> DenseDict {
        let cols: Vec<Vec<f64>> = (0..n)
            .map(|j| (0..n).map(|i| if i == j { 1.0 } else { 0.0 }).collect())
            .collect();
        DenseDict::from_columns(n, &cols).unwrap()
    }

    #[test]
    fn threshold_definitions() {
        assert_eq!(hard_threshold(&[3.0, -2.0, 1.0], 2), vec![3.0, -2.0, 0.0]);
        assert_eq!(hard_threshold(&[3.0, -2.0, 1.0], 0), vec![0.0; 3]);
        assert_eq!(hard_threshold(&[1.0, -1.0, 1.0], 2), vec![1.0, -1.0, 0.0]);
        assert_eq!(soft_threshold(&[3.0, -2.0, 0.5], 0.0), vec![3.0, -2.0, 0.5]);
        assert_eq!(soft_threshold(&[3.0, -2.0, 0.5], 1.0), vec![2.0, -1.0, 0.0]);
    }

    #[test]
    fn fista_null_solution() {
        let d = identity(4);
        let y = [0.5, -0.2, 0.1, 0.0];
        assert!(fista_lasso(&y, &d, 0.5, &PursuitConfig::fista(0.5)).unwrap().is_zero());
        assert!(fista_lasso(&[0.0; 4], &d, 0.1, &PursuitConfig::fista(0.1)).unwrap().is_zero());
        assert!(fista_lasso(&y, &d, 0.0, &PursuitConfig::fista(0.1)).is_err());
    }

    #[test]
    fn fista_identity_is_soft_threshold() {
        let d = identity(4);
        let y = [2.0, -0.3, 0.1, -1.5];
        let g = fista_lasso(&y, &d, 0.5, &PursuitConfig::fista(0.5)).unwrap();
        let want = soft_threshold(&y, 0.5);
        for (a, b) in g.to_vec().iter().zip(&want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn iht_orthonormal_one_step() {
        let d = identity(8);
        let mut y = vec![0.0; 8];
        y[2] = 1.5;
        y[6] = -0.7;
        let g = iht(&y, &d, 2, &PursuitConfig::iht(2).with_max_iters(1)).unwrap();
        assert_eq!(g.support(), vec![2, 6]);
        assert_eq!(g.get(2), 1.5);
        assert_eq!(g.get(6), -0.7);
        assert!(iht(&y, &d, 0, &PursuitConfig::iht(0)).unwrap().is_zero());
    }
}
