use nalgebra::DMatrix;

use super::check_signal;
use super::linalg::{least_squares, solve_normal};
use super::PursuitConfig;
use crate::conv::Dictionary;
use crate::error::{Error, Result};
use crate::tensor::{dot, norm2, SparseVec, StripeCounter, ZERO_TOL};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OmpStop {
    /// Reached the requested number of atoms.
    Cardinality,
    /// Residual norm fell to the tolerance.
    Residual,
    /// The next selection would exceed the stripe cap.
    Cap,
    /// No remaining atom correlates with the residual.
    Exhausted,
}

#[derive(Clone, Debug)]
pub struct OmpTrace {
    pub coeffs: SparseVec,
    /// Selected atoms in selection order (warm-start atoms first).
    pub support: Vec<usize>,
    /// Least-squares coefficients aligned with `support`.
    pub values: Vec<f64>,
    /// Residual norm before the first selection and after every refit.
    pub residual_norms: Vec<f64>,
    pub stop: OmpStop,
}

/// Orthogonal matching pursuit.
pub fn omp<D: Dictionary + ?Sized>(y: &[f64], dict: &D, config: &PursuitConfig) -> Result<SparseVec> {
    omp_detailed(y, dict, config, &[]).map(|t| t.coeffs)
}

/// OMP starting from the support `warm` (refit before the first selection).
pub fn omp_detailed<D: Dictionary + ?Sized>(
    y: &[f64],
    dict: &D,
    config: &PursuitConfig,
    warm: &[usize],
) -> Result<OmpTrace> {
    check_signal(y, dict)?;
    if !(config.tol > 0.0) {
        return Err(Error::Parameter(format!("tol must be positive, got {}", config.tol)));
    }
    let n_atoms = dict.n_atoms();
    let geometry = dict.coeff_geometry();
    let norms = dict.atom_norms();
    let limit = config.k.unwrap_or(usize::MAX).min(n_atoms).min(dict.signal_len());

    let mut state = OmpState {
        counter: StripeCounter::new(dict.stripe_window(), geometry.channels()),
        selected: vec![false; n_atoms],
        support: Vec::new(),
        atoms: Vec::new(),
        gram: DMatrix::zeros(0, 0),
        rhs: Vec::new(),
    };
    for &j in warm {
        state.push(dict, y, j)?;
    }
    let (mut values, mut residual) = if state.support.is_empty() {
        (Vec::new(), y.to_vec())
    } else {
        state.refit(y)?
    };
    let mut residual_norms = vec![norm2(&residual)];
    let y_norm = norm2(y);

    let stop = loop {
        if state.support.len() >= limit {
            break OmpStop::Cardinality;
        }
        if *residual_norms.last().expect("non-empty") <= config.tol {
            break OmpStop::Residual;
        }
        let corr = dict.adjoint_vec(&residual);
        let mut ranked: Vec<(usize, f64)> = corr
            .iter()
            .enumerate()
            .filter(|&(j, _)| !state.selected[j] && norms[j] > ZERO_TOL)
            .map(|(j, c)| (j, c.abs() / norms[j]))
            .filter(|&(_, s)| s > ZERO_TOL * y_norm.max(ZERO_TOL))
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        let choice = match config.l0inf_cap {
            None => ranked.first().map(|&(j, _)| Ok(j)),
            Some(cap) if config.skip_capped => ranked
                .iter()
                .find(|&&(j, _)| state.counter.max_after_adding(j) <= cap)
                .map(|&(j, _)| Ok(j)),
            Some(cap) => ranked.first().map(|&(j, _)| {
                if state.counter.max_after_adding(j) <= cap {
                    Ok(j)
                } else {
                    Err(())
                }
            }),
        };
        let j = match choice {
            None => break OmpStop::Exhausted,
            Some(Err(())) => break OmpStop::Cap,
            Some(Ok(j)) => j,
        };
        state.push(dict, y, j)?;
        (values, residual) = state.refit(y)?;
        residual_norms.push(norm2(&residual));
    };

    let support = state.support;
    let coeffs = SparseVec::from_entries(geometry, support.iter().copied().zip(values.iter().copied()))?;
    Ok(OmpTrace {
        coeffs,
        support,
        values,
        residual_norms,
        stop,
    })
}

struct OmpState {
    counter: StripeCounter,
    selected: Vec<bool>,
    support: Vec<usize>,
    atoms: Vec<Vec<f64>>,
    gram: DMatrix<f64>,
    rhs: Vec<f64>,
}

impl OmpState {
    fn push<D: Dictionary + ?Sized>(&mut self, dict: &D, y: &[f64], j: usize) -> Result<()> {
        let n_atoms = self.selected.len();
        if j >= n_atoms {
            return Err(Error::Index { index: j, len: n_atoms });
        }
        if self.selected[j] {
            return Err(Error::Parameter(format!("atom {j} selected twice")));
        }
        self.selected[j] = true;
        self.counter.add(j);
        let atom = dict.atom(j);
        let s = self.atoms.len();
        let mut grown = DMatrix::zeros(s + 1, s + 1);
        grown.view_mut((0, 0), (s, s)).copy_from(&self.gram);
        for (i, a) in self.atoms.iter().enumerate() {
            let v = dot(a, &atom);
            grown[(i, s)] = v;
            grown[(s, i)] = v;
        }
        grown[(s, s)] = dot(&atom, &atom);
        self.gram = grown;
        self.rhs.push(dot(&atom, y));
        self.atoms.push(atom);
        self.support.push(j);
        Ok(())
    }

    /// Least-squares coefficients on the current support and the residual.
    fn refit(&self, y: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let values = solve_normal(&self.gram, &self.rhs, &self.support)?;
        let mut r = y.to_vec();
        for (a, &c) in self.atoms.iter().zip(&values) {
            for (ri, ai) in r.iter_mut().zip(a) {
                *ri -= c * ai;
            }
        }
        Ok((values, r))
    }
}

/// Indices of the `k` largest scores, ties broken by lowest index.
fn top_k(scores: impl Iterator<Item = (usize, f64)>, k: usize) -> Vec<usize> {
    let mut ranked: Vec<(usize, f64)> = scores.collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut out: Vec<usize> = ranked.into_iter().take(k).map(|(j, _)| j).collect();
    out.sort_unstable();
    out
}

fn fit<D: Dictionary + ?Sized>(dict: &D, y: &[f64], support: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
    let atoms: Vec<Vec<f64>> = support.iter().map(|&j| dict.atom(j)).collect();
    let values = least_squares(&atoms, y, support)?;
    let mut r = y.to_vec();
    for (a, &c) in atoms.iter().zip(&values) {
        for (ri, ai) in r.iter_mut().zip(a) {
            *ri -= c * ai;
        }
    }
    Ok((values, r))
}

/// Subspace pursuit with target cardinality `k`.
pub fn subspace_pursuit<D: Dictionary + ?Sized>(
    y: &[f64],
    dict: &D,
    k: usize,
    config: &PursuitConfig,
) -> Result<SparseVec> {
    check_signal(y, dict)?;
    let n_atoms = dict.n_atoms();
    if k == 0 || k > n_atoms {
        return Err(Error::Parameter(format!("k must be in 1..={n_atoms}, got {k}")));
    }
    let geometry = dict.coeff_geometry();
    if norm2(y) <= config.tol {
        return Ok(SparseVec::zeros(geometry));
    }
    let norms = dict.atom_norms();
    let scores = |corr: &[f64], exclude: &[usize]| {
        corr.iter()
            .enumerate()
            .filter(|&(j, _)| norms[j] > ZERO_TOL && !exclude.contains(&j))
            .map(|(j, c)| (j, c.abs() / norms[j]))
            .collect::<Vec<_>>()
    };

    let mut support = top_k(scores(&dict.adjoint_vec(y), &[]).into_iter(), k);
    let (mut values, mut residual) = fit(dict, y, &support)?;
    let mut r_norm = norm2(&residual);

    for _ in 0..config.max_iters {
        if r_norm <= config.tol {
            break;
        }
        let extra = top_k(scores(&dict.adjoint_vec(&residual), &support).into_iter(), k);
        let mut merged: Vec<usize> = support.iter().chain(&extra).copied().collect();
        merged.sort_unstable();
        let (wide, _) = fit(dict, y, &merged)?;
        let pruned = top_k(
            merged
                .iter()
                .zip(&wide)
                .map(|(&j, &b)| (j, b.abs() * norms[j])),
            k,
        );
        let (next_values, next_residual) = fit(dict, y, &pruned)?;
        let next_norm = norm2(&next_residual);
        if next_norm >= r_norm {
            break;
        }
        support = pruned;
        values = next_values;
        residual = next_residual;
        r_norm = next_norm;
    }
    SparseVec::from_entries(geometry, support.into_iter().zip(values))
}
