//! The layered model: membership, sampling, pursuit, projection and the
//! layer-by-layer baseline.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::conv::{compose, ConvLayer, Dictionary, EffectiveDict};
use crate::error::{Error, Result};
use crate::pursuit::{omp_detailed, pursue, OmpStop, PursuitConfig};
use crate::tensor::{norm2, DenseVec, SignalGeometry, SparseVec, StripeCounter, StripeWindow};

/// Relative tolerance for `gamma_{i-1} = D_i gamma_i` in membership tests.
pub const CHAIN_TOL: f64 = 1e-8;

/// Draws rejected in a row before sampling reports the model infeasible.
pub const MAX_REJECTIONS: usize = 1000;

#[derive(Clone, Debug, PartialEq)]
pub struct MlcscModel {
    layers: Vec<ConvLayer>,
    geometry: SignalGeometry,
    lambdas: Vec<usize>,
    // rep_geometries[i] is the geometry of gamma_{i+1}
    rep_geometries: Vec<SignalGeometry>,
}

/// Representations `gamma_1 .. gamma_L` (index 0 holds `gamma_1`).
#[derive(Clone, Debug, PartialEq)]
pub struct LayerStack {
    pub reps: Vec<SparseVec>,
}

impl LayerStack {
    pub fn depth(&self) -> usize {
        self.reps.len()
    }

    /// `gamma_i` for 1-based `i`.
    pub fn layer(&self, i: usize) -> &SparseVec {
        &self.reps[i - 1]
    }

    pub fn deepest(&self) -> &SparseVec {
        self.reps.last().expect("stacks are non-empty")
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MembershipReport {
    pub member: bool,
    /// Stripe `l0,inf` of each representation.
    pub l0_inf: Vec<usize>,
    pub cap_ok: Vec<bool>,
    /// `chain_ok[i]` checks `gamma_i = D_{i+1} gamma_{i+1}` (1-based levels).
    pub chain_ok: Vec<bool>,
    /// First 1-based layer that fails a cap or chain check.
    pub first_violation: Option<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerCheck {
    pub layer: usize,
    pub max_filter_nnz: usize,
    pub c: usize,
    pub bound: f64,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct Projection {
    pub x: DenseVec,
    pub stack: LayerStack,
    /// Largest cap whose output was accepted (0 when only the zero signal fits).
    pub accepted_k: usize,
    /// `||y - x*||` after each accepted cap, starting with `||y||` for `x* = 0`.
    pub residual_norms: Vec<f64>,
    /// Layer whose cap stopped the loop, if any.
    pub stopped_by: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ProjectOptions {
    /// Reuse the previous support when raising the cap.
    pub warm_start: bool,
}

impl Default for ProjectOptions {
    fn default() -> Self {
        Self { warm_start: true }
    }
}

impl MlcscModel {
    pub fn new(layers: Vec<ConvLayer>, geometry: SignalGeometry, lambdas: Vec<usize>) -> Result<Self> {
        if lambdas.len() != layers.len() {
            return Err(Error::Parameter(format!(
                "{} sparsity levels for {} layers",
                lambdas.len(),
                layers.len()
            )));
        }
        if let Some(i) = lambdas.iter().position(|&l| l == 0) {
            return Err(Error::Parameter(format!("sparsity level of layer {} must be at least 1", i + 1)));
        }
        let rep_geometries = {
            let effective = compose(&layers, geometry)?;
            (1..=layers.len()).map(|j| effective.geometry_at(j)).collect()
        };
        Ok(Self {
            layers,
            geometry,
            lambdas,
            rep_geometries,
        })
    }

    pub fn layers(&self) -> &[ConvLayer] {
        &self.layers
    }

    pub fn layer(&self, i: usize) -> &ConvLayer {
        &self.layers[i - 1]
    }

    pub fn geometry(&self) -> SignalGeometry {
        self.geometry
    }

    pub fn lambdas(&self) -> &[usize] {
        &self.lambdas
    }

    pub fn with_lambdas(&self, lambdas: Vec<usize>) -> Result<Self> {
        Self::new(self.layers.clone(), self.geometry, lambdas)
    }

    pub fn with_layers(&self, layers: Vec<ConvLayer>) -> Result<Self> {
        Self::new(layers, self.geometry, self.lambdas.clone())
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Geometry of `gamma_i` (1-based); level 0 is the signal.
    pub fn rep_geometry(&self, i: usize) -> SignalGeometry {
        if i == 0 {
            self.geometry
        } else {
            self.rep_geometries[i - 1]
        }
    }

    /// Geometry of the input side of layer `i` (1-based).
    pub fn input_geometry(&self, i: usize) -> SignalGeometry {
        self.rep_geometry(i - 1)
    }

    /// `D^(i) = D_1 .. D_i`.
    pub fn effective(&self, i: usize) -> EffectiveDict<'_> {
        compose(&self.layers[..i], self.geometry).expect("validated at construction")
    }

    /// Layer `i` alone, acting on `gamma_{i-1}`.
    pub fn bound_layer(&self, i: usize) -> EffectiveDict<'_> {
        compose(&self.layers[i - 1..i], self.input_geometry(i)).expect("validated at construction")
    }

    /// Stripe windows of `gamma_i`.
    pub fn stripe_window(&self, i: usize) -> StripeWindow {
        self.layers[i - 1].stripe_window(self.rep_geometry(i).spatial_len())
    }

    pub fn l0_inf(&self, i: usize, gamma: &SparseVec) -> usize {
        self.stripe_window(i).l0_inf(gamma)
    }

    pub fn zero_stack(&self) -> LayerStack {
        LayerStack {
            reps: (1..=self.depth()).map(|i| SparseVec::zeros(self.rep_geometry(i))).collect(),
        }
    }

    /// Applies layer `i` to `gamma_i`, giving `gamma_{i-1}` (or `x` for `i = 1`).
    pub fn apply_layer(&self, i: usize, gamma: &[f64]) -> Vec<f64> {
        let out_geometry = self.input_geometry(i);
        let mut out = vec![0.0; out_geometry.len()];
        self.layers[i - 1].apply_into(out_geometry, gamma, &mut out);
        out
    }

    /// Back-propagates the deepest representation through every layer.
    pub fn propagate(&self, deepest: &SparseVec) -> Result<(DenseVec, LayerStack)> {
        let depth = self.depth();
        if deepest.geometry() != self.rep_geometry(depth) {
            return Err(Error::Dimension(format!(
                "deepest representation has geometry {:?}, model expects {:?}",
                deepest.geometry(),
                self.rep_geometry(depth)
            )));
        }
        let mut reps = vec![deepest.clone()];
        let mut current = deepest.to_vec();
        for i in (1..=depth).rev() {
            current = self.apply_layer(i, &current);
            if i > 1 {
                reps.push(SparseVec::from_slice(self.rep_geometry(i - 1), &current)?);
            }
        }
        reps.reverse();
        Ok((DenseVec::new(self.geometry, current)?, LayerStack { reps }))
    }

    /// Cap and chain checks for model membership.
    pub fn membership(&self, stack: &LayerStack) -> Result<MembershipReport> {
        let depth = self.depth();
        if stack.depth() != depth {
            return Err(Error::Dimension(format!("stack has {} layers, model {depth}", stack.depth())));
        }
        for (i, g) in stack.reps.iter().enumerate() {
            if g.geometry() != self.rep_geometry(i + 1) {
                return Err(Error::Dimension(format!("representation {} has the wrong geometry", i + 1)));
            }
        }
        let l0_inf: Vec<usize> = (1..=depth).map(|i| self.l0_inf(i, stack.layer(i))).collect();
        let cap_ok: Vec<bool> = l0_inf.iter().zip(&self.lambdas).map(|(v, l)| v <= l).collect();
        let mut chain_ok = Vec::with_capacity(depth.saturating_sub(1));
        for i in 2..=depth {
            let predicted = self.apply_layer(i, &stack.layer(i).to_vec());
            let actual = stack.layer(i - 1).to_vec();
            let diff: f64 = predicted
                .iter()
                .zip(&actual)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let scale = norm2(&predicted).max(norm2(&actual));
            chain_ok.push(diff <= CHAIN_TOL * scale);
        }
        let first_violation = (1..=depth).find(|&i| !cap_ok[i - 1] || (i < depth && !chain_ok[i - 1]));
        Ok(MembershipReport {
            member: first_violation.is_none(),
            l0_inf,
            cap_ok,
            chain_ok,
            first_violation,
        })
    }

    /// Dictionary sparsity check: the densest filter of every layer `i > 1` has at
    /// most `lambda_{i-1} / (lambda_i c_i)` nonzeros, where `c_i` counts the
    /// layer-`i` patches that fit in a layer-`(i-1)` stripe.
    pub fn dict_sparsity_check(&self, lambdas: &[usize]) -> Result<Vec<LayerCheck>> {
        if lambdas.len() != self.depth() {
            return Err(Error::Parameter(format!(
                "{} sparsity levels for {} layers",
                lambdas.len(),
                self.depth()
            )));
        }
        Ok((2..=self.depth())
            .map(|i| {
                let c = self.patches_per_stripe(i);
                let bound = lambdas[i - 2] as f64 / (lambdas[i - 1] as f64 * c as f64);
                let max_filter_nnz = self.layers[i - 1].max_filter_nnz();
                LayerCheck {
                    layer: i,
                    max_filter_nnz,
                    c,
                    bound,
                    pass: max_filter_nnz as f64 <= bound,
                }
            })
            .collect())
    }

    /// Patches of width `n_i` needed to cover the widest stripe of `gamma_{i-1}`.
    /// For stride-1 layers this is `ceil((2 n_{i-1} - 1) / n_i)`.
    pub fn patches_per_stripe(&self, i: usize) -> usize {
        let window = self.stripe_window(i - 1);
        let width = (0..window.window_count())
            .map(|t| window.members(t).len())
            .max()
            .unwrap_or(0);
        width.div_ceil(self.layers[i - 1].n())
    }

    /// Draws a member of the model: a random support with `nnz` atoms
    /// obeying the deepest cap, standard normal values, propagated down.
    pub fn sample<R: Rng + ?Sized>(&self, nnz: usize, rng: &mut R) -> Result<(DenseVec, LayerStack)> {
        let depth = self.depth();
        let geometry = self.rep_geometry(depth);
        let n_atoms = geometry.len();
        if nnz > n_atoms {
            return Err(Error::Infeasible(format!("{nnz} atoms requested from {n_atoms}")));
        }
        let window = self.stripe_window(depth);
        let cap = self.lambdas[depth - 1];
        let mut order: Vec<usize> = (0..n_atoms).collect();
        for _ in 0..MAX_REJECTIONS {
            order.shuffle(rng);
            let mut counter = StripeCounter::new(window, geometry.channels());
            let mut support = Vec::with_capacity(nnz);
            for &j in &order {
                if support.len() == nnz {
                    break;
                }
                if counter.max_after_adding(j) <= cap {
                    counter.add(j);
                    support.push(j);
                }
            }
            if support.len() < nnz {
                continue;
            }
            let entries: Vec<(usize, f64)> = support.iter().map(|&j| (j, rng.sample(StandardNormal))).collect();
            let deepest = SparseVec::from_entries(geometry, entries)?;
            let (x, stack) = self.propagate(&deepest)?;
            if self.membership(&stack)?.member {
                return Ok((x, stack));
            }
        }
        Err(Error::Infeasible(format!(
            "{MAX_REJECTIONS} consecutive draws of {nnz} atoms violated the sparsity levels"
        )))
    }

    /// Codes `y` against `D^(L)` with `coder`, then back-propagates.
    pub fn pursuit(&self, y: &[f64], coder: &PursuitConfig) -> Result<LayerStack> {
        let deepest = pursue(y, &self.effective(self.depth()), coder)?;
        Ok(self.propagate(&deepest)?.1)
    }

    /// Greedy projection onto the model: raise the deepest cap one step at a
    /// time, coding with capped OMP, until an intermediate cap breaks.
    pub fn project(&self, y: &[f64], options: ProjectOptions) -> Result<Projection> {
        let depth = self.depth();
        let dict = self.effective(depth);
        if y.len() != dict.signal_len() {
            return Err(Error::Dimension(format!(
                "signal has length {}, model expects {}",
                y.len(),
                dict.signal_len()
            )));
        }
        let mut best = Projection {
            x: DenseVec::zeros(self.geometry),
            stack: self.zero_stack(),
            accepted_k: 0,
            residual_norms: vec![norm2(y)],
            stopped_by: None,
        };
        let mut support: Vec<usize> = Vec::new();
        for k in 1..=self.lambdas[depth - 1] {
            let warm = if options.warm_start { support.as_slice() } else { &[] };
            let trace = match omp_detailed(y, &dict, &PursuitConfig::omp_capped(k), warm) {
                Ok(trace) => trace,
                Err(Error::RankDeficient { .. }) => break,
                Err(e) => return Err(e),
            };
            if trace.support.len() == support.len() && warm.len() == support.len() {
                break;
            }
            let (x, stack) = self.propagate(&trace.coeffs)?;
            if let Some(i) = (1..depth).find(|&i| self.l0_inf(i, stack.layer(i)) > self.lambdas[i - 1]) {
                best.stopped_by = Some(i);
                break;
            }
            let r = norm2(&y.iter().zip(x.values()).map(|(a, b)| a - b).collect::<Vec<_>>());
            best.x = x;
            best.stack = stack;
            best.accepted_k = k;
            best.residual_norms.push(r);
            support = trace.support;
            if matches!(trace.stop, OmpStop::Residual | OmpStop::Exhausted | OmpStop::Cardinality) {
                break;
            }
        }
        Ok(best)
    }

    /// Layer-by-layer baseline: code `y` with `D_1` at cardinality `k[0]`,
    /// then the estimate with `D_2` at `k[1]`, and so on.
    pub fn layered_pursuit(&self, y: &[f64], per_layer_k: &[usize], coder: &PursuitConfig) -> Result<Vec<SparseVec>> {
        if per_layer_k.len() != self.depth() {
            return Err(Error::Parameter(format!(
                "{} cardinalities for {} layers",
                per_layer_k.len(),
                self.depth()
            )));
        }
        let mut out = Vec::with_capacity(self.depth());
        let mut current = y.to_vec();
        for i in 1..=self.depth() {
            let geometry = self.rep_geometry(i);
            let estimate = if norm2(&current) == 0.0 {
                SparseVec::zeros(geometry)
            } else {
                let config = PursuitConfig {
                    k: Some(per_layer_k[i - 1]),
                    ..coder.clone()
                };
                pursue(&current, &self.bound_layer(i), &config)?
            };
            current = estimate.to_vec();
            out.push(estimate);
        }
        Ok(out)
    }
}
