//! Stability-bound evaluators and empirical certifiers.
//!
//! Units: `projection`, `propagated_projection`, `greedy` and `layered`
//! bounds are squared global l2 errors; the `lasso` bound is an unsquared
//! patch-wise `l2,inf` error.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::conv::{nonzero_row_count, Dictionary};
use crate::error::{Error, Result};
use crate::model::MlcscModel;
use crate::pursuit::least_squares;
use crate::tensor::{l2_inf_patch, norm2, DenseVec, SparseVec, StripeCounter, ZERO_TOL};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundKind {
    /// Error of the exact projection, per layer, from effective coherences.
    Projection,
    /// Projection error propagated from the deepest layer through each `D_j`.
    PropagatedProjection,
    /// Patch-wise error of l1 pursuit followed by back-propagation.
    Lasso,
    /// Error of OMP pursuit followed by back-propagation.
    Greedy,
    /// Cumulative error of the layer-by-layer baseline.
    Layered,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerBound {
    pub layer: usize,
    /// Bound value; `None` unless every hypothesis holds.
    pub value: Option<f64>,
    /// Looser closed form (`2^(L-i)` inflation), where the bound has one.
    pub relaxed: Option<f64>,
    pub hypothesis: bool,
    /// Coherence entering this layer's term.
    pub mu: f64,
    pub lambda: usize,
    /// Stripe-to-patch ratio entering this layer's factor.
    pub c: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub kind: BoundKind,
    /// `E0` (global noise energy) or `eps0` (patch-wise noise) as appropriate.
    pub noise: f64,
    pub layers: Vec<LayerBound>,
    pub hypotheses_hold: bool,
    /// Signed distance to the cardinality hypothesis (greedy bound).
    pub margin: Option<f64>,
    /// l1 weight in the unhalved objective `||y - D g||^2 + w ||g||_1` (lasso bound).
    pub penalty: Option<f64>,
    /// Deepest-layer error the other layers are derived from (lasso bound).
    pub deepest_error: Option<f64>,
}

impl BoundReport {
    pub fn value(&self, layer: usize) -> Option<f64> {
        self.layers.get(layer - 1).and_then(|l| l.value)
    }
}

/// `lambda < (1 + 1/mu) / 2`, i.e. `(2 lambda - 1) mu < 1`.
fn below_half_spark(lambda: usize, mu: f64) -> bool {
    (2.0 * lambda as f64 - 1.0) * mu < 1.0
}

fn check_lengths(mu: &[f64], lambdas: &[usize]) -> Result<()> {
    if mu.len() != lambdas.len() || mu.is_empty() {
        return Err(Error::Parameter(format!(
            "{} coherences for {} sparsity levels",
            mu.len(),
            lambdas.len()
        )));
    }
    if let Some(m) = mu.iter().find(|m| !(0.0..=1.0 + 1e-12).contains(*m)) {
        return Err(Error::Parameter(format!("coherence {m} outside [0, 1]")));
    }
    Ok(())
}

fn finish(kind: BoundKind, noise: f64, mut layers: Vec<LayerBound>, extra_hypothesis: bool) -> BoundReport {
    let hold = extra_hypothesis && layers.iter().all(|l| l.hypothesis);
    if !hold {
        for l in &mut layers {
            l.value = None;
            l.relaxed = None;
        }
    }
    BoundReport {
        kind,
        noise,
        layers,
        hypotheses_hold: hold,
        margin: None,
        penalty: None,
        deepest_error: None,
    }
}

/// `4 E0^2 / (1 - (2 lambda_i - 1) mu(D^(i)))` per layer, with
/// `effective_mu[i]` the coherence of `D_1 .. D_{i+1}`.
pub fn projection_bound(effective_mu: &[f64], lambdas: &[usize], e0: f64) -> Result<BoundReport> {
    check_lengths(effective_mu, lambdas)?;
    let layers = effective_mu
        .iter()
        .zip(lambdas)
        .enumerate()
        .map(|(i, (&mu, &lambda))| LayerBound {
            layer: i + 1,
            value: Some(4.0 * e0 * e0 / (1.0 - (2.0 * lambda as f64 - 1.0) * mu)),
            relaxed: None,
            hypothesis: below_half_spark(lambda, mu),
            mu,
            lambda,
            c: None,
        })
        .collect();
    Ok(finish(BoundKind::Projection, e0, layers, true))
}

/// Deepest projection error `E_L^2 = 4 E0^2 / (1 - (2 lambda_L - 1) mu(D^(L)))`
/// inflated by `prod_{j>i} (1 + (2 lambda_j - 1) mu(D_j))`; the relaxed form
/// is `E_L^2 2^(L-i)`.
pub fn propagated_projection_bound(
    layer_mu: &[f64],
    deepest_effective_mu: f64,
    lambdas: &[usize],
    e0: f64,
) -> Result<BoundReport> {
    check_lengths(layer_mu, lambdas)?;
    let depth = lambdas.len();
    let lambda_l = lambdas[depth - 1];
    let e_l = 4.0 * e0 * e0 / (1.0 - (2.0 * lambda_l as f64 - 1.0) * deepest_effective_mu);
    let layers = (1..=depth)
        .map(|i| {
            let factor: f64 = (i + 1..=depth)
                .map(|j| 1.0 + (2.0 * lambdas[j - 1] as f64 - 1.0) * layer_mu[j - 1])
                .product();
            LayerBound {
                layer: i,
                value: Some(e_l * factor),
                relaxed: Some(e_l * 2f64.powi((depth - i) as i32)),
                hypothesis: below_half_spark(lambdas[i - 1], layer_mu[i - 1]),
                mu: layer_mu[i - 1],
                lambda: lambdas[i - 1],
                c: None,
            }
        })
        .collect();
    Ok(finish(
        BoundKind::PropagatedProjection,
        e0,
        layers,
        below_half_spark(lambda_l, deepest_effective_mu),
    ))
}

/// Patch-wise error of l1 pursuit: `eps_L = 7.5 eps0 sqrt(nnz_patch_L)` at the
/// deepest layer, times `sqrt(3 c_j / 2)` for each layer above. `c[j - 2]`
/// is the factor for layer `j >= 2`. Also reports the l1 weight `4 eps0`.
pub fn lasso_bound(
    layer_mu: &[f64],
    deepest_effective_mu: f64,
    lambdas: &[usize],
    c: &[usize],
    eps0: f64,
    nnz_patch_deepest: usize,
) -> Result<BoundReport> {
    check_lengths(layer_mu, lambdas)?;
    let depth = lambdas.len();
    if c.len() + 1 != depth {
        return Err(Error::Parameter(format!("{} ratio factors for {depth} layers", c.len())));
    }
    let eps_l = 7.5 * eps0 * (nnz_patch_deepest as f64).sqrt();
    let layers = (1..=depth)
        .map(|i| {
            let factor: f64 = (i + 1..=depth).map(|j| (1.5 * c[j - 2] as f64).sqrt()).product();
            LayerBound {
                layer: i,
                value: Some(eps_l * factor),
                relaxed: None,
                hypothesis: below_half_spark(lambdas[i - 1], layer_mu[i - 1]),
                mu: layer_mu[i - 1],
                lambda: lambdas[i - 1],
                c: if i >= 2 { Some(c[i - 2]) } else { None },
            }
        })
        .collect();
    let lambda_l = lambdas[depth - 1] as f64;
    let third = lambda_l * 3.0 <= 1.0 + 1.0 / deepest_effective_mu;
    let mut report = finish(BoundKind::Lasso, eps0, layers, third);
    report.penalty = Some(4.0 * eps0);
    report.deepest_error = report.hypotheses_hold.then_some(eps_l);
    Ok(report)
}

/// Signed margin of the greedy cardinality hypothesis:
/// `(1 + 1/mu)/2 - (eps0/|g_min|)/mu - lambda_L`; positive when it holds.
pub fn greedy_margin(deepest_effective_mu: f64, lambda_l: usize, eps0: f64, gamma_min: f64) -> f64 {
    let ratio = eps0 / gamma_min.abs();
    if deepest_effective_mu == 0.0 {
        return if ratio < 0.5 { f64::INFINITY } else { f64::NEG_INFINITY };
    }
    let mu = deepest_effective_mu;
    0.5 * (1.0 + 1.0 / mu) - ratio / mu - lambda_l as f64
}

/// OMP pursuit error: `E0^2 / (1 - mu(D^(L)) (lambda_L - 1)) (3/2)^(L-i)`.
pub fn greedy_bound(
    layer_mu: &[f64],
    deepest_effective_mu: f64,
    lambdas: &[usize],
    e0: f64,
    eps0: f64,
    gamma_min: f64,
) -> Result<BoundReport> {
    check_lengths(layer_mu, lambdas)?;
    let depth = lambdas.len();
    let lambda_l = lambdas[depth - 1];
    let base = e0 * e0 / (1.0 - deepest_effective_mu * (lambda_l as f64 - 1.0));
    let layers = (1..=depth)
        .map(|i| LayerBound {
            layer: i,
            value: Some(base * 1.5f64.powi((depth - i) as i32)),
            relaxed: None,
            hypothesis: below_half_spark(lambdas[i - 1], layer_mu[i - 1]),
            mu: layer_mu[i - 1],
            lambda: lambdas[i - 1],
            c: None,
        })
        .collect();
    let margin = greedy_margin(deepest_effective_mu, lambda_l, eps0, gamma_min);
    let mut report = finish(BoundKind::Greedy, e0, layers, margin > 0.0);
    report.margin = Some(margin);
    Ok(report)
}

/// Layer-by-layer baseline:
/// `4 E0^2 4^(i-1) prod_{j<=i} 1 / (1 - (2 lambda_j - 1) mu(D_j))`.
pub fn layered_bound(layer_mu: &[f64], lambdas: &[usize], e0: f64) -> Result<BoundReport> {
    check_lengths(layer_mu, lambdas)?;
    let mut product = 1.0;
    let layers = layer_mu
        .iter()
        .zip(lambdas)
        .enumerate()
        .map(|(i, (&mu, &lambda))| {
            product /= 1.0 - (2.0 * lambda as f64 - 1.0) * mu;
            LayerBound {
                layer: i + 1,
                value: Some(4.0 * e0 * e0 * 4f64.powi(i as i32) * product),
                relaxed: None,
                hypothesis: below_half_spark(lambda, mu),
                mu,
                lambda,
                c: None,
            }
        })
        .collect();
    Ok(finish(BoundKind::Layered, e0, layers, true))
}

/// Coherences of a model's layers and effective dictionaries.
#[derive(Clone, Debug, PartialEq)]
pub struct Coherences {
    /// `mu(D_i)` for each layer on its own input geometry.
    pub layers: Vec<f64>,
    /// `mu(D_1 .. D_i)` (normalized, since effective atoms need not be unit norm).
    pub effective: Vec<f64>,
}

impl Coherences {
    pub fn of(model: &MlcscModel) -> Result<Self> {
        let layers = (1..=model.depth())
            .map(|i| model.layer(i).mutual_coherence(model.input_geometry(i)))
            .collect::<Result<Vec<_>>>()?;
        let effective = (1..=model.depth()).map(|i| model.effective(i).mutual_coherence()).collect();
        Ok(Self { layers, effective })
    }

    pub fn deepest_effective(&self) -> f64 {
        *self.effective.last().expect("non-empty model")
    }
}

/// Stripe-to-patch ratios `ceil((2 n_{j-1} - 1) / n_j)` for `j = 2..L`, from
/// the layers' filter sizes.
pub fn stripe_patch_ratios(model: &MlcscModel) -> Vec<usize> {
    (2..=model.depth())
        .map(|j| (2 * model.layer(j - 1).n() - 1).div_ceil(model.layer(j).n()))
        .collect()
}

fn gram_of(atoms: &[Vec<f64>]) -> DMatrix<f64> {
    let s = atoms.len();
    DMatrix::from_fn(s, s, |i, j| crate::tensor::dot(&atoms[i], &atoms[j]))
}

fn eigen_extremes(g: DMatrix<f64>) -> (f64, f64) {
    if g.nrows() == 0 {
        return (1.0, 1.0);
    }
    let eig = SymmetricEigen::new(g);
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (min, max)
}

/// `max(lambda_max - 1, 1 - lambda_min)` of the Gram matrix on `support`.
pub fn support_isometry_constant<D: Dictionary + ?Sized>(dict: &D, support: &[usize]) -> f64 {
    let atoms: Vec<Vec<f64>> = support.iter().map(|&j| dict.atom(j)).collect();
    let (min, max) = eigen_extremes(gram_of(&atoms));
    (max - 1.0).max(1.0 - min)
}

/// Random support of up to `target` atoms with stripe `l0,inf <= cap`.
pub fn random_capped_support<D: Dictionary + ?Sized, R: Rng + ?Sized>(
    dict: &D,
    cap: usize,
    target: usize,
    rng: &mut R,
) -> Vec<usize> {
    let geometry = dict.coeff_geometry();
    let mut order: Vec<usize> = (0..geometry.len()).collect();
    order.shuffle(rng);
    let mut counter = StripeCounter::new(dict.stripe_window(), geometry.channels());
    let mut support = Vec::new();
    for j in order {
        if support.len() >= target {
            break;
        }
        if counter.max_after_adding(j) <= cap {
            counter.add(j);
            support.push(j);
        }
    }
    support.sort_unstable();
    support
}

#[derive(Clone, Debug, PartialEq)]
pub struct RipEstimate {
    /// Largest `| ||D g||^2 - 1 |` over sampled unit `g` (a lower bound on `delta_k`).
    pub empirical: f64,
    /// Coherence bound `(k - 1) mu(D)`.
    pub coherence_bound: f64,
}

/// Monte-Carlo lower estimate of the stripe restricted-isometry constant.
pub fn estimate_stripe_rip<D: Dictionary + ?Sized, R: Rng + ?Sized>(
    dict: &D,
    mu: f64,
    k: usize,
    trials: usize,
    rng: &mut R,
) -> RipEstimate {
    let mut empirical: f64 = 0.0;
    let n_atoms = dict.n_atoms();
    for _ in 0..trials {
        let support = random_capped_support(dict, k, n_atoms, rng);
        let mut values: Vec<f64> = support.iter().map(|_| rng.sample(StandardNormal)).collect();
        let norm = norm2(&values);
        if norm == 0.0 {
            continue;
        }
        values.iter_mut().for_each(|v| *v /= norm);
        let entries: Vec<(usize, f64)> = support.into_iter().zip(values).collect();
        let dg = dict.apply_entries(&entries);
        empirical = empirical.max((crate::tensor::dot(&dg, &dg) - 1.0).abs());
    }
    RipEstimate {
        empirical,
        coherence_bound: k.saturating_sub(1) as f64 * mu,
    }
}

/// Exact stripe restricted-isometry constant by enumerating every support
/// with stripe `l0,inf <= k`. Only for tiny dictionaries.
pub fn exact_stripe_rip<D: Dictionary + ?Sized>(dict: &D, k: usize) -> Result<f64> {
    let geometry = dict.coeff_geometry();
    let n_atoms = geometry.len();
    if n_atoms > 24 {
        return Err(Error::Parameter(format!("exhaustive search over {n_atoms} atoms refused")));
    }
    let atoms: Vec<Vec<f64>> = (0..n_atoms).map(|j| dict.atom(j)).collect();
    let window = dict.stripe_window();
    let mut delta: f64 = 0.0;
    for mask in 1u32..(1u32 << n_atoms) {
        let support: Vec<usize> = (0..n_atoms).filter(|j| mask & (1 << j) != 0).collect();
        let gamma = SparseVec::from_entries(geometry, support.iter().map(|&j| (j, 1.0)))?;
        if window.l0_inf(&gamma) > k {
            continue;
        }
        let chosen: Vec<Vec<f64>> = support.iter().map(|&j| atoms[j].clone()).collect();
        let (min, max) = eigen_extremes(gram_of(&chosen));
        delta = delta.max(max - 1.0).max(1.0 - min);
    }
    Ok(delta)
}

#[derive(Clone, Debug, PartialEq)]
pub struct IsometryCheck {
    pub trials: usize,
    pub violations: usize,
    /// Largest observed `lhs / rhs`.
    pub worst_ratio: f64,
}

/// Checks `||D g||_{2,inf,patch}^2 <= (1 + delta_T) ||g||_{2,inf,stripe}^2`
/// on random stripe-sparse `g`, with `delta_T = lambda_max(G_T) - 1` computed
/// exactly on each sampled support `T`.
pub fn check_local_isometry<D: Dictionary + ?Sized, R: Rng + ?Sized>(
    dict: &D,
    patch_n: usize,
    k: usize,
    trials: usize,
    rng: &mut R,
) -> Result<IsometryCheck> {
    let geometry = dict.coeff_geometry();
    let window = dict.stripe_window();
    let mut violations = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let target = rng.random_range(1..=geometry.len());
        let support = random_capped_support(dict, k, target, rng);
        let entries: Vec<(usize, f64)> = support.iter().map(|&j| (j, rng.sample(StandardNormal))).collect();
        let gamma = SparseVec::from_entries(geometry, entries.iter().copied())?;
        let x = DenseVec::new(dict.signal_geometry(), dict.apply_entries(&entries))?;
        let lhs = l2_inf_patch(&x, patch_n).powi(2);
        let rhs_norm = window.l2_inf(&gamma).powi(2);
        let atoms: Vec<Vec<f64>> = support.iter().map(|&j| dict.atom(j)).collect();
        let (_, max) = eigen_extremes(gram_of(&atoms));
        let rhs = max * rhs_norm;
        if rhs > 0.0 {
            worst = worst.max(lhs / rhs);
        }
        if lhs > rhs * (1.0 + 1e-10) + ZERO_TOL {
            violations += 1;
        }
    }
    Ok(IsometryCheck {
        trials,
        violations,
        worst_ratio: worst,
    })
}

/// True when no coordinate of `D g` cancels: the product's nonzero count
/// equals the number of rows touched by the selected atoms.
pub fn check_nvs<D: Dictionary + ?Sized>(dict: &D, gamma: &SparseVec) -> bool {
    let entries: Vec<(usize, f64)> = gamma.iter().collect();
    let product = dict.apply_entries(&entries);
    let nnz = product.iter().filter(|v| v.abs() > ZERO_TOL).count();
    nnz == nonzero_row_count(dict, &gamma.support())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SupportMetrics {
    /// `|supp(truth) & supp(est)| / max(|supp(truth)|, |supp(est)|)`.
    pub intersection: f64,
    /// `||est - truth|| / ||truth||`.
    pub relative_error: f64,
}

pub fn support_metrics(truth: &SparseVec, est: &SparseVec) -> SupportMetrics {
    let t = truth.support();
    let e = est.support();
    let common = t.iter().filter(|j| e.binary_search(j).is_ok()).count();
    let denom = t.len().max(e.len());
    let intersection = if denom == 0 { 1.0 } else { common as f64 / denom as f64 };
    let diff: f64 = truth
        .to_vec()
        .iter()
        .zip(est.to_vec())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let truth_norm = truth.norm();
    let relative_error = if truth_norm == 0.0 {
        if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        diff / truth_norm
    };
    SupportMetrics {
        intersection,
        relative_error,
    }
}

/// True when `supp(est)` is contained in `supp(truth)`.
pub fn support_contained(truth: &SparseVec, est: &SparseVec) -> bool {
    est.iter().all(|(j, _)| truth.get(j) != 0.0)
}

/// Least-squares oracle residual of `y` on a fixed support (used to
/// calibrate approximation floors).
pub fn support_residual<D: Dictionary + ?Sized>(dict: &D, y: &[f64], support: &[usize]) -> Result<f64> {
    let atoms: Vec<Vec<f64>> = support.iter().map(|&j| dict.atom(j)).collect();
    let c = least_squares(&atoms, y, support)?;
    let mut r = y.to_vec();
    for (a, v) in atoms.iter().zip(c) {
        for (ri, ai) in r.iter_mut().zip(a) {
            *ri -= v * ai;
        }
    }
    Ok(norm2(&r))
}
