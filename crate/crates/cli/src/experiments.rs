//! Experiment drivers. Each returns CSV tables; trials run in parallel with
//! one generator per trial derived from the root seed, so results do not
//! depend on the thread count.

use mlcsc::analysis::{
    greedy_bound, lasso_bound, layered_bound, projection_bound, propagated_projection_bound, stripe_patch_ratios,
    support_contained, support_metrics, BoundReport, Coherences, SupportMetrics,
};
use mlcsc::learning::{code_batch, train, LearnConfig, TrainTrace};
use mlcsc::model::ProjectOptions;
use mlcsc::pursuit::{lipschitz_estimate, pursue, PursuitConfig};
use mlcsc::tensor::{l2_inf_patch, norm2, DenseVec};
use mlcsc::{Dictionary, LayerStack, MlcscModel, SparseVec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{CliError, Result};
use crate::formats::{cell, opt_cell, Csv, SignalMatrix};

/// Generator for one unit of work: the root seed selects the key, `stream`
/// the independent sequence.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn residual(y: &[f64], x: &[f64]) -> f64 {
    norm2(&y.iter().zip(x).map(|(a, b)| a - b).collect::<Vec<_>>())
}

// ---------------------------------------------------------------- sample

pub struct Sampled {
    pub signals: SignalMatrix,
    pub stacks: Vec<LayerStack>,
    pub members: usize,
}

pub fn sample_signals(model: &MlcscModel, count: usize, nnz: usize, seed: u64) -> Result<Sampled> {
    let draws = (0..count)
        .into_par_iter()
        .map(|s| model.sample(nnz, &mut stream_rng(seed, s as u64)))
        .collect::<mlcsc::Result<Vec<_>>>()?;
    let mut members = 0;
    for (_, stack) in &draws {
        members += usize::from(model.membership(stack)?.member);
    }
    let (rows, stacks) = draws.into_iter().map(|(x, s)| (x.into_values(), s)).unzip();
    Ok(Sampled {
        signals: SignalMatrix::new(model.geometry().len(), rows)?,
        stacks,
        members,
    })
}

// ---------------------------------------------------------------- recover

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RecoverMethod {
    /// OMP on the deepest effective dictionary, then back-propagation.
    ProjectionOmp,
    /// Subspace pursuit on the deepest effective dictionary, then back-propagation.
    ProjectionSp,
    /// Subspace pursuit layer by layer.
    LayeredSp,
}

impl RecoverMethod {
    pub const ALL: [RecoverMethod; 3] = [Self::ProjectionOmp, Self::ProjectionSp, Self::LayeredSp];

    pub fn name(self) -> &'static str {
        match self {
            Self::ProjectionOmp => "projection-omp",
            Self::ProjectionSp => "projection-sp",
            Self::LayeredSp => "layered-sp",
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == text)
            .ok_or_else(|| CliError::Argument(format!("unknown method `{text}`")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RecoverParams {
    pub ks: Vec<usize>,
    pub sigma: f64,
    pub trials: usize,
    pub seed: u64,
    pub methods: Vec<RecoverMethod>,
}

/// Per-trial check of the greedy stability guarantee for projection-OMP,
/// evaluated with the trial's actual representation norms and noise.
#[derive(Clone, Debug, PartialEq)]
pub struct Certification {
    pub e0: f64,
    pub eps0: f64,
    pub gamma_min: f64,
    pub margin: f64,
    pub hypothesis: bool,
    pub contained: bool,
    pub within_bound: bool,
    /// Bound per layer (squared l2), when the hypotheses hold.
    pub bounds: Vec<Option<f64>>,
    /// Squared l2 error per layer.
    pub errors: Vec<f64>,
}

impl Certification {
    pub fn certified(&self) -> bool {
        self.hypothesis && self.contained && self.within_bound
    }

    pub fn violated(&self) -> bool {
        self.hypothesis && !(self.contained && self.within_bound)
    }
}

#[derive(Clone, Debug)]
pub struct TrialOutcome {
    pub k: usize,
    pub trial: usize,
    /// `metrics[method][layer - 1]`, methods in `RecoverParams::methods` order.
    pub metrics: Vec<Vec<SupportMetrics>>,
    /// Per method: the coder failed and the estimate was taken as zero.
    pub failures: Vec<bool>,
    pub certification: Option<Certification>,
}

pub struct RecoverReport {
    pub summary: Csv,
    pub trials: Csv,
    pub outcomes: Vec<TrialOutcome>,
}

/// Estimated stack, or `None` when the coder hits a singular least-squares
/// system (possible for subspace pursuit on dependent atoms).
fn estimate(model: &MlcscModel, y: &[f64], truth: &LayerStack, method: RecoverMethod) -> Result<Option<Vec<SparseVec>>> {
    let k = truth.deepest().nnz();
    if k == 0 {
        return Ok(Some(model.zero_stack().reps));
    }
    let result = match method {
        RecoverMethod::ProjectionOmp => model.pursuit(y, &PursuitConfig::omp(k)).map(|s| s.reps),
        RecoverMethod::ProjectionSp => model.pursuit(y, &PursuitConfig::subspace(k)).map(|s| s.reps),
        RecoverMethod::LayeredSp => {
            let ks: Vec<usize> = truth.reps.iter().map(|g| g.nnz().max(1)).collect();
            model.layered_pursuit(y, &ks, &PursuitConfig::subspace(1))
        }
    };
    match result {
        Ok(est) => Ok(Some(est)),
        Err(mlcsc::Error::RankDeficient { .. }) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn squared_diff(a: &SparseVec, b: &SparseVec) -> f64 {
    a.to_vec().iter().zip(b.to_vec()).map(|(u, v)| (u - v) * (u - v)).sum()
}

fn certify(
    model: &MlcscModel,
    mu: &Coherences,
    truth: &LayerStack,
    est: &[SparseVec],
    noise: &DenseVec,
) -> Result<Certification> {
    let depth = model.depth();
    let lambdas: Vec<usize> = (1..=depth).map(|i| model.l0_inf(i, truth.layer(i))).collect();
    let e0 = noise.norm();
    let patch = model.effective(depth).effective_support().min(model.geometry().spatial_len());
    let eps0 = l2_inf_patch(noise, patch);
    let gamma_min = truth.deepest().iter().map(|(_, v)| v.abs()).fold(f64::INFINITY, f64::min);
    let report = greedy_bound(&mu.layers, mu.deepest_effective(), &lambdas, e0, eps0, gamma_min)?;
    let errors: Vec<f64> = (1..=depth).map(|i| squared_diff(truth.layer(i), &est[i - 1])).collect();
    let bounds: Vec<Option<f64>> = (1..=depth).map(|i| report.value(i)).collect();
    let contained = (1..=depth).all(|i| support_contained(truth.layer(i), &est[i - 1]));
    let within_bound = errors
        .iter()
        .zip(&bounds)
        .all(|(e, b)| b.is_some_and(|b| *e <= b * (1.0 + 1e-9)));
    Ok(Certification {
        e0,
        eps0,
        gamma_min,
        margin: report.margin.unwrap_or(f64::NEG_INFINITY),
        hypothesis: report.hypotheses_hold,
        contained,
        within_bound,
        bounds,
        errors,
    })
}

fn recover_trial(
    model: &MlcscModel,
    mu: &Coherences,
    params: &RecoverParams,
    k: usize,
    trial: usize,
) -> Result<TrialOutcome> {
    let mut rng = stream_rng(params.seed, ((k as u64) << 32) | trial as u64);
    let (x, truth) = model.sample(k, &mut rng)?;
    let noise: Vec<f64> = (0..x.values().len())
        .map(|_| params.sigma * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let y: Vec<f64> = x.values().iter().zip(&noise).map(|(a, b)| a + b).collect();
    let mut metrics = Vec::with_capacity(params.methods.len());
    let mut failures = Vec::with_capacity(params.methods.len());
    let mut certification = None;
    for &method in &params.methods {
        let found = estimate(model, &y, &truth, method)?;
        failures.push(found.is_none());
        let est = found.unwrap_or_else(|| model.zero_stack().reps);
        metrics.push(truth.reps.iter().zip(&est).map(|(t, e)| support_metrics(t, e)).collect());
        if method == RecoverMethod::ProjectionOmp && k > 0 {
            let noise = DenseVec::new(model.geometry(), noise.clone())?;
            certification = Some(certify(model, mu, &truth, &est, &noise)?);
        }
    }
    Ok(TrialOutcome {
        k,
        trial,
        metrics,
        failures,
        certification,
    })
}

/// Planted recovery sweep: for each `k`, draw members with `k` deepest atoms,
/// add white noise of level `sigma`, and compare the estimates layer by layer.
pub fn recover(model: &MlcscModel, params: &RecoverParams) -> Result<RecoverReport> {
    let mu = Coherences::of(model)?;
    let depth = model.depth();
    let jobs: Vec<(usize, usize)> = params
        .ks
        .iter()
        .flat_map(|&k| (0..params.trials).map(move |t| (k, t)))
        .collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(k, t)| recover_trial(model, &mu, params, k, t))
        .collect::<Result<Vec<_>>>()?;

    let mut summary = Csv::new(&[
        "k",
        "layer",
        "method",
        "trials",
        "mean_rel_error",
        "mean_intersection",
        "solver_failures",
        "hypothesis_trials",
        "certified_trials",
        "violations",
    ]);
    for &k in &params.ks {
        let group: Vec<&TrialOutcome> = outcomes.iter().filter(|o| o.k == k).collect();
        let n = group.len();
        for layer in 1..=depth {
            for (m, &method) in params.methods.iter().enumerate() {
                let mean = |f: fn(&SupportMetrics) -> f64| {
                    if n == 0 {
                        String::new()
                    } else {
                        cell(group.iter().map(|o| f(&o.metrics[m][layer - 1])).sum::<f64>() / n as f64)
                    }
                };
                let certs: Vec<&Certification> = group.iter().filter_map(|o| o.certification.as_ref()).collect();
                let (hyp, cert, viol) = if method == RecoverMethod::ProjectionOmp && n > 0 {
                    let count = |f: fn(&Certification) -> bool| cell(certs.iter().filter(|c| f(c)).count());
                    (count(|c| c.hypothesis), count(Certification::certified), count(Certification::violated))
                } else {
                    Default::default()
                };
                summary.push(vec![
                    cell(k),
                    cell(layer),
                    method.name().into(),
                    cell(n),
                    mean(|s| s.relative_error),
                    mean(|s| s.intersection),
                    cell(group.iter().filter(|o| o.failures[m]).count()),
                    hyp,
                    cert,
                    viol,
                ]);
            }
        }
    }
    if params.ks.is_empty() || params.trials == 0 {
        summary.rows.clear();
    }

    let mut header = vec![
        "k".to_string(),
        "trial".into(),
        "e0".into(),
        "eps0".into(),
        "gamma_min".into(),
        "margin".into(),
        "hypothesis".into(),
        "contained".into(),
        "within_bound".into(),
        "certified".into(),
    ];
    for i in 1..=depth {
        header.push(format!("sq_error_layer{i}"));
        header.push(format!("bound_layer{i}"));
    }
    let mut trials = Csv {
        header,
        rows: Vec::new(),
    };
    for o in &outcomes {
        if let Some(c) = &o.certification {
            let mut row = vec![
                cell(o.k),
                cell(o.trial),
                cell(c.e0),
                cell(c.eps0),
                cell(c.gamma_min),
                cell(c.margin),
                cell(c.hypothesis),
                cell(c.contained),
                cell(c.within_bound),
                cell(c.certified()),
            ];
            for (e, b) in c.errors.iter().zip(&c.bounds) {
                row.push(cell(e));
                row.push(opt_cell(*b));
            }
            trials.push(row);
        }
    }
    Ok(RecoverReport {
        summary,
        trials,
        outcomes,
    })
}

/// Mean support intersection of `method` at `layer` over trials with the given `k`.
pub fn mean_intersection(report: &RecoverReport, methods: &[RecoverMethod], method: RecoverMethod, k: usize, layer: usize) -> f64 {
    let m = methods.iter().position(|&x| x == method).expect("method was run");
    let group: Vec<f64> = report
        .outcomes
        .iter()
        .filter(|o| o.k == k)
        .map(|o| o.metrics[m][layer - 1].intersection)
        .collect();
    group.iter().sum::<f64>() / group.len().max(1) as f64
}

// ---------------------------------------------------------------- mterm

pub struct MtermReport {
    pub table: Csv,
    pub errors: Vec<f64>,
    pub non_increasing: bool,
}

/// Relative squared reconstruction error `||y - D g||^2 / ||y||^2` of IHT
/// codes with `k` nonzeros on the deepest effective dictionary.
pub fn mterm(model: &MlcscModel, signals: &[Vec<f64>], ks: &[usize], iters: usize) -> Result<MtermReport> {
    let dict = model.effective(model.depth());
    let step = 1.0 / lipschitz_estimate(&dict).max(1e-12);
    let mut table = Csv::new(&["k", "samples", "mean_rel_error", "mean_nnz"]);
    let mut errors = Vec::with_capacity(ks.len());
    for &k in ks {
        let config = PursuitConfig::iht(k).with_max_iters(iters).with_step(step);
        let per_sample = signals
            .par_iter()
            .filter(|y| norm2(y) > 0.0)
            .map(|y| {
                let code = pursue(y, &dict, &config)?;
                let x = dict.apply_vec(&code.to_vec());
                let r = residual(y, &x);
                Ok((r * r / y.iter().map(|v| v * v).sum::<f64>(), code.nnz()))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = per_sample.len().max(1) as f64;
        let err = per_sample.iter().map(|p| p.0).sum::<f64>() / n;
        let nnz = per_sample.iter().map(|p| p.1 as f64).sum::<f64>() / n;
        errors.push(err);
        table.push(vec![cell(k), cell(per_sample.len()), cell(err), cell(nnz)]);
    }
    let non_increasing = errors.windows(2).all(|w| w[1] <= w[0]);
    Ok(MtermReport {
        table,
        errors,
        non_increasing,
    })
}

// ---------------------------------------------------------------- bounds

#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    /// Global noise energy `||v||_2`.
    pub e0: f64,
    /// Patch-wise noise level.
    pub eps0: f64,
    /// Sparsity levels; the model's when `None`.
    pub lambdas: Option<Vec<usize>>,
    /// Deepest patch-wise nonzero count for the lasso bound; `lambda_L` when `None`.
    pub nnz_patch: Option<usize>,
    /// Smallest deepest coefficient magnitude for the greedy margin.
    pub gamma_min: f64,
}

fn kind_name(report: &BoundReport) -> &'static str {
    use mlcsc::analysis::BoundKind::*;
    match report.kind {
        Projection => "projection",
        PropagatedProjection => "propagated_projection",
        Lasso => "lasso",
        Greedy => "greedy",
        Layered => "layered",
    }
}

pub fn bound_reports(model: &MlcscModel, mu: &Coherences, s: &Scenario) -> Result<Vec<BoundReport>> {
    let lambdas = s.lambdas.clone().unwrap_or_else(|| model.lambdas().to_vec());
    if lambdas.len() != model.depth() {
        return Err(CliError::Argument(format!(
            "{} sparsity levels for a {}-layer model",
            lambdas.len(),
            model.depth()
        )));
    }
    let deepest = mu.deepest_effective();
    let nnz_patch = s.nnz_patch.unwrap_or(lambdas[lambdas.len() - 1]);
    Ok(vec![
        projection_bound(&mu.effective, &lambdas, s.e0)?,
        propagated_projection_bound(&mu.layers, deepest, &lambdas, s.e0)?,
        lasso_bound(&mu.layers, deepest, &lambdas, &stripe_patch_ratios(model), s.eps0, nnz_patch)?,
        greedy_bound(&mu.layers, deepest, &lambdas, s.e0, s.eps0, s.gamma_min)?,
        layered_bound(&mu.layers, &lambdas, s.e0)?,
    ])
}

/// Every bound at every layer for each scenario. `value` is in the bound's
/// native units (`units` column); `root_value` is the square root of
/// squared-l2 bounds.
pub fn bounds_table(model: &MlcscModel, scenarios: &[Scenario]) -> Result<Csv> {
    let mu = Coherences::of(model)?;
    let mut table = Csv::new(&[
        "scenario",
        "bound",
        "layer",
        "units",
        "hypothesis",
        "value",
        "root_value",
        "relaxed",
        "mu",
        "lambda",
        "c",
        "margin",
        "penalty",
    ]);
    for (idx, s) in scenarios.iter().enumerate() {
        for report in bound_reports(model, &mu, s)? {
            let squared = report.kind != mlcsc::analysis::BoundKind::Lasso;
            for l in &report.layers {
                table.push(vec![
                    cell(idx),
                    kind_name(&report).into(),
                    cell(l.layer),
                    if squared { "squared_l2" } else { "patch_l2_inf" }.into(),
                    cell(report.hypotheses_hold && l.hypothesis),
                    opt_cell(l.value),
                    opt_cell(l.value.filter(|_| squared).map(f64::sqrt)),
                    opt_cell(l.relaxed),
                    cell(l.mu),
                    cell(l.lambda),
                    opt_cell(l.c),
                    opt_cell(report.margin),
                    opt_cell(report.penalty),
                ]);
            }
        }
    }
    Ok(table)
}

// ---------------------------------------------------------------- coherence

pub fn coherence_table(model: &MlcscModel) -> Result<Csv> {
    let mu = Coherences::of(model)?;
    let checks = model.dict_sparsity_check(model.lambdas())?;
    let mut table = Csv::new(&[
        "layer",
        "m_in",
        "m_out",
        "n",
        "stride",
        "layer_mu",
        "effective_mu",
        "effective_support",
        "kernel_sparsity",
        "max_filter_nnz",
        "lambda",
        "patches_per_stripe",
        "sparsity_check",
    ]);
    for i in 1..=model.depth() {
        let layer = model.layer(i);
        let check = checks.iter().find(|c| c.layer == i);
        table.push(vec![
            cell(i),
            cell(layer.m_in()),
            cell(layer.m_out()),
            cell(layer.n()),
            cell(layer.stride()),
            cell(mu.layers[i - 1]),
            cell(mu.effective[i - 1]),
            cell(model.effective(i).effective_support()),
            cell(layer.sparsity()),
            cell(layer.max_filter_nnz()),
            cell(model.lambdas()[i - 1]),
            if i >= 2 { cell(model.patches_per_stripe(i)) } else { String::new() },
            opt_cell(check.map(|c| c.pass)),
        ]);
    }
    Ok(table)
}

// ---------------------------------------------------------------- project / pursue

pub struct Coded {
    pub signals: SignalMatrix,
    pub stacks: Vec<LayerStack>,
    pub summary: Csv,
}

fn check_lengths(model: &MlcscModel, signals: &[Vec<f64>]) -> Result<()> {
    let len = model.geometry().len();
    match signals.iter().position(|y| y.len() != len) {
        Some(s) => Err(CliError::Argument(format!(
            "sample {s} has length {}, model expects {len}",
            signals[s].len()
        ))),
        None => Ok(()),
    }
}

/// Greedy projection of every signal onto the model.
pub fn project_signals(model: &MlcscModel, signals: &[Vec<f64>], warm_start: bool) -> Result<Coded> {
    check_lengths(model, signals)?;
    let results = signals
        .par_iter()
        .map(|y| model.project(y, ProjectOptions { warm_start }))
        .collect::<mlcsc::Result<Vec<_>>>()?;
    let mut summary = Csv::new(&["sample", "accepted_k", "residual_norm", "stopped_by", "member"]);
    let mut rows = Vec::with_capacity(results.len());
    let mut stacks = Vec::with_capacity(results.len());
    for (s, p) in results.into_iter().enumerate() {
        summary.push(vec![
            cell(s),
            cell(p.accepted_k),
            cell(p.residual_norms.last().copied().unwrap_or(0.0)),
            opt_cell(p.stopped_by),
            cell(model.membership(&p.stack)?.member),
        ]);
        rows.push(p.x.into_values());
        stacks.push(p.stack);
    }
    Ok(Coded {
        signals: SignalMatrix::new(model.geometry().len(), rows)?,
        stacks,
        summary,
    })
}

/// Codes every signal against the deepest effective dictionary and
/// back-propagates.
pub fn pursue_signals(model: &MlcscModel, signals: &[Vec<f64>], coder: &PursuitConfig) -> Result<Coded> {
    check_lengths(model, signals)?;
    let stacks = signals
        .par_iter()
        .map(|y| model.pursuit(y, coder))
        .collect::<mlcsc::Result<Vec<_>>>()?;
    let mut summary = Csv::new(&["sample", "deepest_nnz", "residual_norm", "member"]);
    let mut rows = Vec::with_capacity(stacks.len());
    for (s, (y, stack)) in signals.iter().zip(&stacks).enumerate() {
        let x = model.effective(model.depth()).apply_vec(&stack.deepest().to_vec());
        summary.push(vec![
            cell(s),
            cell(stack.deepest().nnz()),
            cell(residual(y, &x)),
            cell(model.membership(stack)?.member),
        ]);
        rows.push(x);
    }
    Ok(Coded {
        signals: SignalMatrix::new(model.geometry().len(), rows)?,
        stacks,
        summary,
    })
}

// ---------------------------------------------------------------- train

pub fn trace_table(trace: &TrainTrace, depth: usize) -> Csv {
    let mut header = vec![
        "epoch".to_string(),
        "lambda".into(),
        "mean_loss".into(),
        "mean_fit".into(),
        "mean_residual_norm".into(),
        "mean_code_nnz".into(),
    ];
    header.extend((1..=depth).map(|i| format!("kernel_sparsity_layer{i}")));
    let mut table = Csv {
        header,
        rows: Vec::new(),
    };
    for e in &trace.epochs {
        let mut row = vec![
            cell(e.epoch),
            cell(trace.lambda),
            cell(e.mean_loss),
            cell(e.mean_fit),
            cell(e.mean_residual_norm),
            cell(e.mean_code_nnz),
        ];
        row.extend(e.kernel_sparsity.iter().map(|s| cell(s)));
        table.push(row);
    }
    table
}

pub fn run_train(data: &[Vec<f64>], init: &MlcscModel, config: &LearnConfig) -> Result<(MlcscModel, TrainTrace, Csv)> {
    check_lengths(init, data)?;
    if config.epochs == 0 {
        let trace = TrainTrace {
            lambda: f64::NAN,
            epochs: Vec::new(),
        };
        let table = trace_table(&trace, init.depth());
        return Ok((init.clone(), trace, table));
    }
    let (model, trace) = train(data, init, config)?;
    let table = trace_table(&trace, model.depth());
    Ok((model, trace, table))
}

/// Mean `||y - D g||` over `data` with FISTA codes at weight `lambda`.
pub fn mean_residual_norm(data: &[Vec<f64>], model: &MlcscModel, lambda: f64, config: &LearnConfig) -> Result<f64> {
    let codes = code_batch(data, model, lambda, config.fista_iters, config.fista_tol)?;
    let dict = model.effective(model.depth());
    let total: f64 = data
        .iter()
        .zip(&codes)
        .map(|(y, g)| residual(y, &dict.apply_vec(&g.to_vec())))
        .sum();
    Ok(total / data.len().max(1) as f64)
}
