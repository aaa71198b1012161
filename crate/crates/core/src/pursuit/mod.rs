//! Single-dictionary sparse coders.
//!
//! All coders take the signal as a flat slice matching
//! `Dictionary::signal_len` and return coefficients in the dictionary's
//! coefficient geometry. Greedy selection compares correlations divided by
//! the atom norm, so dictionaries need not have unit-norm atoms.

mod greedy;
mod linalg;
mod proximal;

pub use greedy::{omp, omp_detailed, subspace_pursuit, OmpStop, OmpTrace};
pub use linalg::{least_squares, lipschitz_estimate};
pub use proximal::{fista_lasso, hard_threshold, iht, lasso_objective, soft_threshold};

use crate::conv::Dictionary;
use crate::error::{Error, Result};
use crate::tensor::SparseVec;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Omp,
    SubspacePursuit,
    Fista,
    Iht,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PursuitConfig {
    pub method: Method,
    /// Target cardinality: OMP iterations, SP sparsity, IHT nonzeros.
    pub k: Option<usize>,
    /// Per-stripe cap on the number of selected atoms (OMP only).
    pub l0inf_cap: Option<usize>,
    /// With a cap, skip atoms that would violate it instead of stopping.
    pub skip_capped: bool,
    /// Weight of the l1 penalty in `0.5 ||y - D g||^2 + lambda ||g||_1`.
    pub lambda_l1: Option<f64>,
    pub max_iters: usize,
    pub tol: f64,
    /// Gradient step for FISTA/IHT; defaults to `1 / L` with `L` estimated
    /// by power iteration.
    pub step_size: Option<f64>,
}

impl PursuitConfig {
    fn base(method: Method) -> Self {
        Self {
            method,
            k: None,
            l0inf_cap: None,
            skip_capped: false,
            lambda_l1: None,
            max_iters: 1000,
            tol: 1e-10,
            step_size: None,
        }
    }

    pub fn omp(k: usize) -> Self {
        Self {
            k: Some(k),
            ..Self::base(Method::Omp)
        }
    }

    /// OMP bounded only by a stripe cap (and the residual tolerance).
    pub fn omp_capped(cap: usize) -> Self {
        Self {
            l0inf_cap: Some(cap),
            ..Self::base(Method::Omp)
        }
    }

    pub fn subspace(k: usize) -> Self {
        Self {
            k: Some(k),
            max_iters: 100,
            ..Self::base(Method::SubspacePursuit)
        }
    }

    pub fn fista(lambda_l1: f64) -> Self {
        Self {
            lambda_l1: Some(lambda_l1),
            max_iters: 500,
            tol: 1e-9,
            ..Self::base(Method::Fista)
        }
    }

    pub fn iht(k: usize) -> Self {
        Self {
            k: Some(k),
            max_iters: 500,
            tol: 1e-9,
            ..Self::base(Method::Iht)
        }
    }

    pub fn with_cap(mut self, cap: usize) -> Self {
        self.l0inf_cap = Some(cap);
        self
    }

    pub fn with_skip_capped(mut self, skip: bool) -> Self {
        self.skip_capped = skip;
        self
    }

    pub fn with_max_iters(mut self, max_iters: usize) -> Self {
        self.max_iters = max_iters;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_step(mut self, step: f64) -> Self {
        self.step_size = Some(step);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::Parameter(format!("tol must be positive, got {}", self.tol)));
        }
        if let Some(step) = self.step_size {
            if !(step > 0.0) || !step.is_finite() {
                return Err(Error::Parameter(format!("step size must be positive, got {step}")));
            }
        }
        if self.k == Some(0) && self.method != Method::Iht {
            return Err(Error::Parameter("k must be at least 1".into()));
        }
        let need_k = |name: &str| {
            self.k
                .map(|_| ())
                .ok_or_else(|| Error::Parameter(format!("{name} needs a target cardinality k")))
        };
        match self.method {
            Method::Omp => {
                if self.k.is_none() && self.l0inf_cap.is_none() {
                    return Err(Error::Parameter("OMP needs k or a stripe cap".into()));
                }
            }
            Method::SubspacePursuit => need_k("subspace pursuit")?,
            Method::Iht => need_k("IHT")?,
            Method::Fista => match self.lambda_l1 {
                Some(l) if l > 0.0 && l.is_finite() => {}
                Some(l) => return Err(Error::Parameter(format!("lambda_l1 must be positive, got {l}"))),
                None => return Err(Error::Parameter("FISTA needs lambda_l1".into())),
            },
        }
        Ok(())
    }
}

/// Runs the coder selected by `config.method`.
pub fn pursue<D: Dictionary + ?Sized>(y: &[f64], dict: &D, config: &PursuitConfig) -> Result<SparseVec> {
    config.validate()?;
    match config.method {
        Method::Omp => omp(y, dict, config),
        Method::SubspacePursuit => subspace_pursuit(y, dict, config.k.unwrap_or(1), config),
        Method::Fista => fista_lasso(y, dict, config.lambda_l1.unwrap_or(1.0), config),
        Method::Iht => iht(y, dict, config.k.unwrap_or(0), config),
    }
}

pub(crate) fn check_signal<D: Dictionary + ?Sized>(y: &[f64], dict: &D) -> Result<()> {
    if y.len() != dict.signal_len() {
        return Err(Error::Dimension(format!(
            "signal has length {}, dictionary expects {}",
            y.len(),
            dict.signal_len()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("signal".into()));
    }
    Ok(())
}
