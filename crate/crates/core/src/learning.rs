//! Online multi-layer dictionary learning.
//!
//! Each minibatch is coded with FISTA against the full effective dictionary;
//! the layers are then updated from the deepest to the first by momentum
//! gradient steps on the squared reconstruction error. Layers below the
//! first are hard-thresholded to their sparsity policy after every step, and
//! every layer is renormalized to unit-norm filters.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::conv::{ConvLayer, Dictionary, KernelEntry};
use crate::error::{Error, Result};
use crate::model::MlcscModel;
use crate::pursuit::{fista_lasso, PursuitConfig};
use crate::tensor::{SparseVec, ZERO_TOL};

/// Kernel sparsification rule applied after each gradient step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ZetaPolicy {
    /// Keep the `ceil(q * total)` largest-magnitude coefficients of the layer.
    KeepFraction(f64),
    /// Keep the `k` largest-magnitude coefficients of every filter.
    KeepPerFilter(usize),
    /// Zero coefficients with magnitude below the threshold.
    Magnitude(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LambdaPolicy {
    Fixed(f64),
    /// Bisect the l1 weight once, on the first minibatch, toward this mean
    /// number of nonzeros per code.
    TargetNnz(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct LearnConfig {
    /// l1 weight in `||y - D g||^2 + lambda ||g||_1`.
    pub lambda: LambdaPolicy,
    /// Policies for layers `2..=L` (index 0 is layer 2).
    pub zetas: Vec<ZetaPolicy>,
    /// Step size; zero freezes the dictionaries.
    pub eta: f64,
    pub momentum: f64,
    /// Gradient steps per layer per minibatch.
    pub inner_iters: usize,
    /// Frobenius penalty weight.
    pub iota: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub fista_iters: usize,
    pub fista_tol: f64,
}

impl Default for LearnConfig {
    fn default() -> Self {
        Self {
            lambda: LambdaPolicy::TargetNnz(15.0),
            zetas: Vec::new(),
            eta: 1.0,
            momentum: 0.9,
            inner_iters: 1,
            iota: 0.001,
            epochs: 20,
            batch_size: 100,
            seed: 0,
            fista_iters: 200,
            fista_tol: 1e-6,
        }
    }
}

impl LearnConfig {
    pub fn validate(&self, depth: usize) -> Result<()> {
        if !(self.eta >= 0.0) || !self.eta.is_finite() {
            return Err(Error::Parameter(format!("eta must be non-negative, got {}", self.eta)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Parameter(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.inner_iters == 0 || self.batch_size == 0 {
            return Err(Error::Parameter("inner_iters and batch_size must be at least 1".into()));
        }
        if self.iota < 0.0 {
            return Err(Error::Parameter(format!("iota must be non-negative, got {}", self.iota)));
        }
        if self.zetas.len() + 1 != depth {
            return Err(Error::Parameter(format!(
                "{} sparsity policies for a {depth}-layer model",
                self.zetas.len()
            )));
        }
        for z in &self.zetas {
            match *z {
                ZetaPolicy::KeepFraction(q) if !(q > 0.0 && q <= 1.0) => {
                    return Err(Error::Parameter(format!("keep fraction must be in (0, 1], got {q}")))
                }
                ZetaPolicy::KeepPerFilter(0) => {
                    return Err(Error::Parameter("must keep at least one coefficient per filter".into()))
                }
                ZetaPolicy::Magnitude(t) if !(t >= 0.0) => {
                    return Err(Error::Parameter(format!("magnitude threshold must be non-negative, got {t}")))
                }
                _ => {}
            }
        }
        match self.lambda {
            LambdaPolicy::Fixed(l) if !(l > 0.0) => Err(Error::Parameter(format!("lambda must be positive, got {l}"))),
            LambdaPolicy::TargetNnz(t) if !(t > 0.0) => {
                Err(Error::Parameter(format!("target nnz must be positive, got {t}")))
            }
            _ => Ok(()),
        }
    }

    /// Weights of the objective terms for this configuration. Fraction and
    /// per-filter policies fix the kernel nonzero count, so their l0 weight
    /// is zero; magnitude policies use the threshold.
    pub fn weights(&self, lambda: f64) -> ObjectiveWeights {
        let mut l0 = vec![0.0];
        l0.extend(self.zetas.iter().map(|z| match *z {
            ZetaPolicy::Magnitude(t) => t,
            _ => 0.0,
        }));
        ObjectiveWeights {
            iota: self.iota,
            l0,
            lambda,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ObjectiveWeights {
    pub iota: f64,
    /// Per-layer weight of the kernel nonzero count.
    pub l0: Vec<f64>,
    pub lambda: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean per-sample objective (reconstruction, penalties, l1 term).
    pub mean_loss: f64,
    /// Mean per-sample squared reconstruction error.
    pub mean_fit: f64,
    pub mean_residual_norm: f64,
    pub mean_code_nnz: f64,
    /// Fraction of zero kernel coefficients per layer, after the epoch.
    pub kernel_sparsity: Vec<f64>,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainTrace {
    pub lambda: f64,
    pub epochs: Vec<EpochRecord>,
}

/// `sum_k ||y_k - D^(L) g_k||^2 + iota sum ||D_i||_F^2 + sum w_i ||D_i||_0 + lambda sum ||g_k||_1`.
pub fn objective_eval(batch: &[Vec<f64>], model: &MlcscModel, codes: &[SparseVec], weights: &ObjectiveWeights) -> Result<f64> {
    if batch.len() != codes.len() {
        return Err(Error::Dimension(format!("{} signals, {} codes", batch.len(), codes.len())));
    }
    let fit: f64 = batch
        .iter()
        .zip(codes)
        .map(|(y, g)| squared_residual(model, y, g))
        .sum::<Result<f64>>()?;
    let frob: f64 = model
        .layers()
        .iter()
        .map(|l| l.kernels().iter().flatten().map(|e| e.value * e.value).sum::<f64>())
        .sum();
    let l0: f64 = model
        .layers()
        .iter()
        .zip(&weights.l0)
        .map(|(l, w)| w * l.nnz() as f64)
        .sum();
    let l1: f64 = codes.iter().map(|g| g.iter().map(|(_, v)| v.abs()).sum::<f64>()).sum();
    Ok(fit + weights.iota * frob + l0 + weights.lambda * l1)
}

fn squared_residual(model: &MlcscModel, y: &[f64], code: &SparseVec) -> Result<f64> {
    let entries: Vec<(usize, f64)> = code.iter().collect();
    let xhat = model.effective(model.depth()).apply_entries(&entries);
    if xhat.len() != y.len() {
        return Err(Error::Dimension(format!("signal length {} vs model {}", y.len(), xhat.len())));
    }
    Ok(y.iter().zip(&xhat).map(|(a, b)| (a - b) * (a - b)).sum())
}

/// Gradient of `sum_k ||y_k - D^(L) g_k||^2 + iota ||D_i||_F^2` with respect to
/// every kernel coefficient of layer `i` (1-based), laid out as
/// `[filter][offset][channel]`.
pub fn dict_gradient(batch: &[Vec<f64>], model: &MlcscModel, codes: &[SparseVec], i: usize, iota: f64) -> Result<Vec<f64>> {
    if i == 0 || i > model.depth() {
        return Err(Error::Index {
            index: i,
            len: model.depth(),
        });
    }
    if batch.len() != codes.len() {
        return Err(Error::Dimension(format!("{} signals, {} codes", batch.len(), codes.len())));
    }
    let layer = model.layer(i);
    let (m_in, m_out, n, stride) = (layer.m_in(), layer.m_out(), layer.n(), layer.stride());
    let input = model.input_geometry(i);
    let big_n = input.spatial_len();
    let size = m_out * n * m_in;
    let effective = model.effective(model.depth());

    let per_sample: Vec<Vec<f64>> = batch
        .par_iter()
        .zip(codes)
        .map(|(y, code)| {
            let levels = effective.forward_levels(&code.to_vec());
            // u = (D_1 .. D_{i-1})^T (x_hat - y)
            let mut u: Vec<f64> = levels[0].iter().zip(y).map(|(a, b)| a - b).collect();
            for j in 1..i {
                u = model.bound_layer(j).adjoint_vec(&u);
            }
            let b = &levels[i];
            let mut g = vec![0.0; size];
            for (idx, &bv) in b.iter().enumerate() {
                if bv == 0.0 {
                    continue;
                }
                let (p, f) = (idx / m_out, idx % m_out);
                let base = p * stride;
                for off in 0..n {
                    let row = ((base + off) % big_n) * m_in;
                    let dst = f * n * m_in + off * m_in;
                    for c in 0..m_in {
                        g[dst + c] += 2.0 * u[row + c] * bv;
                    }
                }
            }
            g
        })
        .collect();

    let mut grad = layer.to_dense();
    grad.iter_mut().for_each(|v| *v *= 2.0 * iota);
    for g in &per_sample {
        for (a, b) in grad.iter_mut().zip(g) {
            *a += b;
        }
    }
    Ok(grad)
}

/// Sorts coordinates by decreasing magnitude, ties to the lowest index.
fn magnitude_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].abs().total_cmp(&values[a].abs()).then(a.cmp(&b)));
    order
}

/// Applies a sparsity policy to dense kernels (`[filter][offset][channel]`).
/// Filters left empty keep their largest coefficient; under a fraction
/// policy the smallest kept coefficient of a multi-entry filter makes room.
pub fn threshold_kernels(dense: &[f64], filter_size: usize, policy: ZetaPolicy) -> Vec<f64> {
    let m_out = dense.len() / filter_size;
    let mut keep = vec![false; dense.len()];
    match policy {
        ZetaPolicy::KeepFraction(q) => {
            let count = ((q * dense.len() as f64).ceil() as usize).clamp(m_out, dense.len());
            for &i in magnitude_order(dense).iter().take(count) {
                keep[i] = true;
            }
        }
        ZetaPolicy::KeepPerFilter(k) => {
            for f in 0..m_out {
                let block = &dense[f * filter_size..(f + 1) * filter_size];
                for &i in magnitude_order(block).iter().take(k) {
                    keep[f * filter_size + i] = true;
                }
            }
        }
        ZetaPolicy::Magnitude(t) => {
            for (k, v) in keep.iter_mut().zip(dense) {
                *k = v.abs() >= t && *v != 0.0;
            }
        }
    }
    for f in 0..m_out {
        let range = f * filter_size..(f + 1) * filter_size;
        if keep[range.clone()].iter().any(|&k| k) {
            continue;
        }
        let block = &dense[range.clone()];
        let best = range.start + magnitude_order(block)[0];
        if let ZetaPolicy::KeepFraction(_) = policy {
            // evict the globally smallest kept entry from a filter that can spare it
            let counts: Vec<usize> = (0..m_out)
                .map(|g| keep[g * filter_size..(g + 1) * filter_size].iter().filter(|&&k| k).count())
                .collect();
            if let Some(&victim) = magnitude_order(dense)
                .iter()
                .rev()
                .find(|&&i| keep[i] && counts[i / filter_size] > 1)
            {
                keep[victim] = false;
            }
        }
        keep[best] = true;
    }
    dense
        .iter()
        .zip(&keep)
        .map(|(&v, &k)| if k { v } else { 0.0 })
        .collect()
}

fn layer_from_dense(template: &ConvLayer, dense: &[f64]) -> Result<ConvLayer> {
    ConvLayer::from_dense(template.m_in(), template.m_out(), template.n(), template.stride(), dense)
}

/// Sparsifies a layer with `policy` and renormalizes its filters.
pub fn hard_threshold_dict(layer: &ConvLayer, policy: ZetaPolicy) -> Result<ConvLayer> {
    let dense = threshold_kernels(&layer.to_dense(), layer.n() * layer.m_in(), policy);
    layer_from_dense(layer, &dense)?.normalize()
}

/// Standard normal kernels, sparsified by `policy` (if any) and normalized.
pub fn init_layer<R: Rng + ?Sized>(
    m_in: usize,
    m_out: usize,
    n: usize,
    stride: usize,
    policy: Option<ZetaPolicy>,
    rng: &mut R,
) -> Result<ConvLayer> {
    let dense: Vec<f64> = (0..m_out * n * m_in).map(|_| rng.sample(StandardNormal)).collect();
    let layer = ConvLayer::from_dense(m_in, m_out, n, stride, &dense)?;
    match policy {
        Some(p) => hard_threshold_dict(&layer, p),
        None => layer.normalize(),
    }
}

/// Adds Gaussian noise of relative size `level` to each filter's existing
/// coefficients, then renormalizes. Level 0 returns the layer untouched.
pub fn perturb_layer<R: Rng + ?Sized>(layer: &ConvLayer, level: f64, rng: &mut R) -> Result<ConvLayer> {
    if level == 0.0 {
        return Ok(layer.clone());
    }
    let kernels = layer
        .kernels()
        .iter()
        .map(|kernel| {
            let noise: Vec<f64> = kernel.iter().map(|_| rng.sample(StandardNormal)).collect();
            let noise_norm = noise.iter().map(|v| v * v).sum::<f64>().sqrt().max(ZERO_TOL);
            let norm = kernel.iter().map(|e| e.value * e.value).sum::<f64>().sqrt();
            kernel
                .iter()
                .zip(noise)
                .map(|(e, z)| KernelEntry {
                    value: e.value + level * norm * z / noise_norm,
                    ..*e
                })
                .collect()
        })
        .collect();
    ConvLayer::new(layer.m_in(), layer.m_out(), layer.n(), layer.stride(), kernels)?.normalize()
}

/// Codes every signal with FISTA on `0.5 ||y - D g||^2 + (lambda/2) ||g||_1`
/// (the same minimizer as the unhalved objective with weight `lambda`).
pub fn code_batch(batch: &[Vec<f64>], model: &MlcscModel, lambda: f64, iters: usize, tol: f64) -> Result<Vec<SparseVec>> {
    let dict = model.effective(model.depth());
    let step = 1.0 / crate::pursuit::lipschitz_estimate(&dict).max(ZERO_TOL);
    let config = PursuitConfig::fista(lambda / 2.0)
        .with_max_iters(iters)
        .with_tol(tol)
        .with_step(step);
    batch
        .par_iter()
        .map(|y| fista_lasso(y, &dict, lambda / 2.0, &config))
        .collect()
}

fn mean_nnz(codes: &[SparseVec]) -> f64 {
    codes.iter().map(|c| c.nnz() as f64).sum::<f64>() / codes.len().max(1) as f64
}

/// Bisects the l1 weight (log scale) so that codes of `batch` average
/// `target` nonzeros.
pub fn tune_lambda(batch: &[Vec<f64>], model: &MlcscModel, target: f64, iters: usize, tol: f64) -> Result<f64> {
    let dict = model.effective(model.depth());
    let top = batch
        .iter()
        .map(|y| dict.adjoint_vec(y).iter().fold(0.0f64, |m, v| m.max(v.abs())))
        .fold(0.0f64, f64::max);
    if top == 0.0 {
        return Err(Error::Parameter("cannot tune lambda on an all-zero batch".into()));
    }
    // weight 2 * top zeroes every code under the unhalved objective
    let (mut lo, mut hi) = ((2.0 * top * 1e-4).ln(), (2.0 * top).ln());
    for _ in 0..14 {
        let mid = 0.5 * (lo + hi);
        let nnz = mean_nnz(&code_batch(batch, model, mid.exp(), iters, tol)?);
        if nnz > target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}

/// Mean squared reconstruction error and code size of `data` under `model`.
pub fn evaluate(data: &[Vec<f64>], model: &MlcscModel, lambda: f64, config: &LearnConfig) -> Result<(f64, f64)> {
    let codes = code_batch(data, model, lambda, config.fista_iters, config.fista_tol)?;
    let fit: f64 = data
        .iter()
        .zip(&codes)
        .map(|(y, g)| squared_residual(model, y, g))
        .sum::<Result<f64>>()?;
    Ok((fit / data.len().max(1) as f64, mean_nnz(&codes)))
}

fn update_layer(
    model: &MlcscModel,
    i: usize,
    velocity: &mut [f64],
    grad: &[f64],
    config: &LearnConfig,
) -> Result<ConvLayer> {
    let layer = model.layer(i);
    for (v, g) in velocity.iter_mut().zip(grad) {
        *v = config.momentum * *v + g;
    }
    let dense: Vec<f64> = layer
        .to_dense()
        .iter()
        .zip(velocity.iter())
        .map(|(d, v)| d - config.eta * v)
        .collect();
    let stepped = if i == 1 {
        dense
    } else {
        threshold_kernels(&dense, layer.n() * layer.m_in(), config.zetas[i - 2])
    };
    layer_from_dense(layer, &stepped)?.normalize()
}

/// Trains `init` on `data`; returns the final model and per-epoch trace.
pub fn train(data: &[Vec<f64>], init: &MlcscModel, config: &LearnConfig) -> Result<(MlcscModel, TrainTrace)> {
    let depth = init.depth();
    config.validate(depth)?;
    if data.is_empty() {
        return Err(Error::Parameter("training set is empty".into()));
    }
    let signal_len = init.geometry().len();
    if let Some(y) = data.iter().find(|y| y.len() != signal_len) {
        return Err(Error::Dimension(format!("signal of length {} for model length {signal_len}", y.len())));
    }
    let mut model = init.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let batch_of = |idx: &[usize]| idx.iter().map(|&k| data[k].clone()).collect::<Vec<_>>();

    let lambda = match config.lambda {
        LambdaPolicy::Fixed(l) => l,
        LambdaPolicy::TargetNnz(t) => {
            order.shuffle(&mut rng);
            let first = batch_of(&order[..config.batch_size.min(data.len())]);
            tune_lambda(&first, &model, t, config.fista_iters, config.fista_tol)?
        }
    };
    let weights = config.weights(lambda);
    let mut trace = TrainTrace {
        lambda,
        epochs: Vec::with_capacity(config.epochs),
    };

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut velocities: Vec<Vec<f64>> = model.layers().iter().map(|l| vec![0.0; l.to_dense().len()]).collect();
        let (mut loss, mut fit, mut resid, mut nnz) = (0.0, 0.0, 0.0, 0.0);
        for chunk in order.chunks(config.batch_size) {
            let batch = batch_of(chunk);
            let codes = code_batch(&batch, &model, lambda, config.fista_iters, config.fista_tol)?;
            let batch_loss = objective_eval(&batch, &model, &codes, &weights)?;
            let residuals: Vec<f64> = batch
                .iter()
                .zip(&codes)
                .map(|(y, g)| squared_residual(&model, y, g))
                .collect::<Result<_>>()?;
            if !batch_loss.is_finite() {
                return Err(Error::NonFinite(format!(
                    "training loss at epoch {epoch} after {} completed epochs (last trace: {:?})",
                    trace.epochs.len(),
                    trace.epochs.last()
                )));
            }
            loss += batch_loss;
            fit += residuals.iter().sum::<f64>();
            resid += residuals.iter().map(|r| r.sqrt()).sum::<f64>();
            nnz += codes.iter().map(|c| c.nnz() as f64).sum::<f64>();

            if config.eta == 0.0 {
                continue;
            }
            let scale = 1.0 / batch.len() as f64;
            for i in (1..=depth).rev() {
                for _ in 0..config.inner_iters {
                    let mut grad = dict_gradient(&batch, &model, &codes, i, config.iota * batch.len() as f64)?;
                    grad.iter_mut().for_each(|g| *g *= scale);
                    let updated = update_layer(&model, i, &mut velocities[i - 1], &grad, config)?;
                    let mut layers = model.layers().to_vec();
                    layers[i - 1] = updated;
                    model = model.with_layers(layers)?;
                }
            }
        }
        let count = data.len() as f64;
        trace.epochs.push(EpochRecord {
            epoch,
            mean_loss: loss / count,
            mean_fit: fit / count,
            mean_residual_norm: resid / count,
            mean_code_nnz: nnz / count,
            kernel_sparsity: model.layers().iter().map(ConvLayer::sparsity).collect(),
        });
    }
    Ok((model, trace))
}
