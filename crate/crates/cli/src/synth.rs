//! Model builders for the synthetic experiments and for training runs.

use std::f64::consts::PI;

use mlcsc::learning::{init_layer, ZetaPolicy};
use mlcsc::{ConvLayer, KernelEntry, MlcscModel, SignalGeometry};
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{CliError, Result};

/// Sparsity levels implied by a deepest cap: `lambda_{i-1} = lambda_i * c_i *
/// max_filter_nnz(D_i)`, where `c_i` counts the patches in a stripe.
pub fn lambdas_from_deepest(layers: Vec<ConvLayer>, geometry: SignalGeometry, deepest: usize) -> Result<MlcscModel> {
    let depth = layers.len();
    let model = MlcscModel::new(layers, geometry, vec![1; depth])?;
    let mut lambdas = vec![deepest; depth];
    for i in (2..=depth).rev() {
        let width = model.patches_per_stripe(i) * model.layer(i).max_filter_nnz();
        lambdas[i - 2] = lambdas[i - 1].saturating_mul(width);
    }
    Ok(model.with_lambdas(lambdas)?)
}

/// A fully connected layer: `cols` atoms over `rows` inputs, each with
/// `nnz` standard-normal entries at random rows, normalized.
fn sparse_dense_layer<R: Rng + ?Sized>(rows: usize, cols: usize, nnz: usize, rng: &mut R) -> Result<ConvLayer> {
    let kernels = (0..cols)
        .map(|_| {
            let mut picked = sample(rng, rows, nnz).into_vec();
            picked.sort_unstable();
            picked
                .into_iter()
                .map(|channel| KernelEntry {
                    offset: 0,
                    channel,
                    value: rng.sample(StandardNormal),
                })
                .collect()
        })
        .collect();
    Ok(ConvLayer::new(rows, cols, 1, 1, kernels)?.normalize()?)
}

/// Non-convolutional model: the first layer spans the whole signal (patch
/// size and stride equal to `signal_len`), later layers act on one position.
/// The first dictionary is dense Gaussian; deeper ones keep
/// `round((1 - sparsity) * rows)` entries per atom.
pub fn nonconvolutional<R: Rng + ?Sized>(
    signal_len: usize,
    atoms: &[usize],
    sparsity: f64,
    deepest_cap: usize,
    rng: &mut R,
) -> Result<MlcscModel> {
    if atoms.is_empty() || !(0.0..1.0).contains(&sparsity) {
        return Err(CliError::Argument("need at least one layer and sparsity in [0, 1)".into()));
    }
    let first: Vec<f64> = (0..atoms[0] * signal_len).map(|_| rng.sample(StandardNormal)).collect();
    let mut layers = vec![ConvLayer::from_dense(1, atoms[0], signal_len, signal_len, &first)?.normalize()?];
    for w in atoms.windows(2) {
        let nnz = (((1.0 - sparsity) * w[0] as f64).round() as usize).clamp(1, w[0]);
        layers.push(sparse_dense_layer(w[0], w[1], nnz, rng)?);
    }
    lambdas_from_deepest(layers, SignalGeometry::new(signal_len, 1)?, deepest_cap)
}

/// Identity columns followed by `extras` atoms built from rows
/// `first_row..` of a 16x16 Hadamard matrix, placed on disjoint 16-row blocks
/// within the first `span` rows. Every pair of atoms has correlation 0 or 1/4.
fn identity_plus_hadamard(rows: usize, extras: usize, span: usize, first_row: usize) -> Result<ConvLayer> {
    const BLOCK: usize = 16;
    let blocks = span.min(rows) / BLOCK;
    if blocks == 0 || first_row + extras.div_ceil(blocks) > BLOCK {
        return Err(CliError::Argument(format!("cannot place {extras} block atoms in {span} rows")));
    }
    let mut kernels: Vec<Vec<KernelEntry>> = (0..rows)
        .map(|channel| {
            vec![KernelEntry {
                offset: 0,
                channel,
                value: 1.0,
            }]
        })
        .collect();
    for e in 0..extras {
        let (block, h) = (e % blocks, first_row + e / blocks);
        kernels.push(
            (0..BLOCK)
                .map(|t| KernelEntry {
                    offset: 0,
                    channel: block * BLOCK + t,
                    value: if (h & t).count_ones() % 2 == 0 { 0.25 } else { -0.25 },
                })
                .collect(),
        );
    }
    Ok(ConvLayer::new(rows, rows + extras, 1, 1, kernels)?)
}

/// Low-coherence non-convolutional control: `D_1 = [I | DCT columns]`
/// (coherence at most sqrt(2/N)); deeper layers are identities plus
/// Hadamard block atoms (coherence 1/4) whose blocks chain down to identity
/// columns of `D_1`, each layer using its own Hadamard rows so that composed
/// block atoms stay mutually orthogonal.
pub fn control(signal_len: usize, atoms: &[usize], deepest_cap: usize) -> Result<MlcscModel> {
    if atoms.is_empty() || atoms[0] < signal_len {
        return Err(CliError::Argument("the first layer needs at least signal_len atoms".into()));
    }
    let n = signal_len as f64;
    let mut dense = Vec::with_capacity(atoms[0] * signal_len);
    for t in 0..signal_len {
        dense.extend((0..signal_len).map(|s| if s == t { 1.0 } else { 0.0 }));
    }
    for freq in 1..=atoms[0] - signal_len {
        dense.extend((0..signal_len).map(|s| (2.0 / n).sqrt() * (PI * (s as f64 + 0.5) * freq as f64 / n).cos()));
    }
    let mut layers = vec![ConvLayer::from_dense(1, atoms[0], signal_len, signal_len, &dense)?.normalize()?];
    let mut first_row = 1;
    for w in atoms.windows(2) {
        let extras = w[1].checked_sub(w[0]).ok_or_else(|| CliError::Argument("atom counts must not shrink".into()))?;
        layers.push(identity_plus_hadamard(w[0], extras, signal_len, first_row)?);
        first_row += extras.div_ceil(signal_len / 16);
    }
    lambdas_from_deepest(layers, SignalGeometry::new(signal_len, 1)?, deepest_cap)
}

/// One convolutional layer of an architecture: filters, patch size, stride.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSpec {
    pub filters: usize,
    pub n: usize,
    pub stride: usize,
}

/// Parses `filters:n:stride` items separated by commas, e.g. `8:7:2,32:5:1`.
pub fn parse_arch(text: &str) -> Result<Vec<LayerSpec>> {
    text.split(',')
        .map(|item| {
            let parts: Vec<usize> = item
                .trim()
                .split(':')
                .map(|p| p.parse::<usize>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| CliError::Argument(format!("bad layer spec `{item}`")))?;
            match parts[..] {
                [filters, n, stride] => Ok(LayerSpec { filters, n, stride }),
                [filters, n] => Ok(LayerSpec { filters, n, stride: 1 }),
                _ => Err(CliError::Argument(format!("layer spec `{item}` needs filters:n[:stride]"))),
            }
        })
        .collect()
}

/// Random initial model for training: a dense first layer, deeper layers
/// thresholded by their policy; all filters unit norm. Sparsity levels are
/// left at 1 (training does not use them).
pub fn init_model<R: Rng + ?Sized>(
    geometry: SignalGeometry,
    arch: &[LayerSpec],
    policies: &[ZetaPolicy],
    rng: &mut R,
) -> Result<MlcscModel> {
    if arch.is_empty() || policies.len() + 1 != arch.len() {
        return Err(CliError::Argument(format!(
            "{} sparsity policies for {} layers",
            policies.len(),
            arch.len()
        )));
    }
    let mut m_in = geometry.channels();
    let mut layers = Vec::with_capacity(arch.len());
    for (i, spec) in arch.iter().enumerate() {
        let policy = i.checked_sub(1).map(|j| policies[j]);
        layers.push(init_layer(m_in, spec.filters, spec.n, spec.stride, policy, rng)?);
        m_in = spec.filters;
    }
    Ok(MlcscModel::new(layers, geometry, vec![1; arch.len()])?)
}

/// Two-layer convolutional model on a single-channel signal: a dense first
/// layer (`filters.0` filters, n=6) and a sparse second layer (`filters.1`
/// filters, n=5, 4 entries per filter).
pub fn planted<R: Rng + ?Sized>(
    signal_len: usize,
    filters: (usize, usize),
    deepest_cap: usize,
    rng: &mut R,
) -> Result<MlcscModel> {
    let d1 = init_layer(1, filters.0, 6, 1, None, rng)?;
    let d2 = init_layer(filters.0, filters.1, 5, 1, Some(ZetaPolicy::KeepPerFilter(4)), rng)?;
    lambdas_from_deepest(vec![d1, d2], SignalGeometry::new(signal_len, 1)?, deepest_cap)
}
