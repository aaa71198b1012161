//! Sparse convolutional dictionary layers and their compositions.
//!
//! A [`ConvLayer`] maps a representation with geometry
//! `(signal_len / stride) x m_out` onto a signal with geometry
//! `signal_len x m_in`: the coefficient at `(p, f)` places filter `f` at
//! spatial position `p * stride`, wrapping circularly.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::tensor::{norm2, DenseVec, SignalGeometry, SparseVec, StripeWindow, ZERO_TOL};

/// Unit-norm tolerance used by coherence and pursuit preconditions.
pub const NORM_TOL: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelEntry {
    pub offset: usize,
    pub channel: usize,
    pub value: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer {
    m_in: usize,
    m_out: usize,
    n: usize,
    stride: usize,
    kernels: Vec<Vec<KernelEntry>>,
}

impl ConvLayer {
    /// Kernel entries are sorted by `(offset, channel)`; exact zeros are dropped.
    pub fn new(
        m_in: usize,
        m_out: usize,
        n: usize,
        stride: usize,
        kernels: Vec<Vec<KernelEntry>>,
    ) -> Result<Self> {
        if m_in == 0 || m_out == 0 || n == 0 || stride == 0 {
            return Err(Error::Parameter(format!(
                "layer sizes must be positive (m_in={m_in}, m_out={m_out}, n={n}, stride={stride})"
            )));
        }
        if kernels.len() != m_out {
            return Err(Error::Dimension(format!(
                "expected {m_out} kernels, got {}",
                kernels.len()
            )));
        }
        let mut sorted = Vec::with_capacity(m_out);
        for (f, mut kernel) in kernels.into_iter().enumerate() {
            kernel.retain(|e| e.value != 0.0);
            kernel.sort_by_key(|e| (e.offset, e.channel));
            for w in kernel.windows(2) {
                if (w[0].offset, w[0].channel) == (w[1].offset, w[1].channel) {
                    return Err(Error::Parameter(format!(
                        "duplicate kernel coordinate ({}, {}) in filter {f}",
                        w[0].offset, w[0].channel
                    )));
                }
            }
            if let Some(e) = kernel.iter().find(|e| e.offset >= n || e.channel >= m_in) {
                return Err(Error::Parameter(format!(
                    "kernel coordinate ({}, {}) of filter {f} outside {n}x{m_in}",
                    e.offset, e.channel
                )));
            }
            if kernel.iter().any(|e| !e.value.is_finite()) {
                return Err(Error::NonFinite(format!("kernel value in filter {f}")));
            }
            sorted.push(kernel);
        }
        Ok(Self {
            m_in,
            m_out,
            n,
            stride,
            kernels: sorted,
        })
    }

    /// Builds from dense kernels laid out as `[filter][offset][channel]`.
    pub fn from_dense(m_in: usize, m_out: usize, n: usize, stride: usize, dense: &[f64]) -> Result<Self> {
        if dense.len() != m_out * n * m_in {
            return Err(Error::Dimension(format!(
                "dense kernels need {} values, got {}",
                m_out * n * m_in,
                dense.len()
            )));
        }
        let kernels = dense
            .chunks(n * m_in)
            .map(|k| {
                k.iter()
                    .enumerate()
                    .filter(|(_, &v)| v != 0.0)
                    .map(|(i, &v)| KernelEntry {
                        offset: i / m_in,
                        channel: i % m_in,
                        value: v,
                    })
                    .collect()
            })
            .collect();
        Self::new(m_in, m_out, n, stride, kernels)
    }

    /// Dense kernels in `[filter][offset][channel]` layout.
    pub fn to_dense(&self) -> Vec<f64> {
        let size = self.n * self.m_in;
        let mut out = vec![0.0; self.m_out * size];
        for (f, kernel) in self.kernels.iter().enumerate() {
            for e in kernel {
                out[f * size + e.offset * self.m_in + e.channel] = e.value;
            }
        }
        out
    }

    pub fn m_in(&self) -> usize {
        self.m_in
    }

    pub fn m_out(&self) -> usize {
        self.m_out
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn kernels(&self) -> &[Vec<KernelEntry>] {
        &self.kernels
    }

    pub fn kernel(&self, filter: usize) -> &[KernelEntry] {
        &self.kernels[filter]
    }

    pub fn nnz(&self) -> usize {
        self.kernels.iter().map(Vec::len).sum()
    }

    /// Nonzero count of the densest filter.
    pub fn max_filter_nnz(&self) -> usize {
        self.kernels.iter().map(Vec::len).max().unwrap_or(0)
    }

    /// Fraction of zero kernel coefficients.
    pub fn sparsity(&self) -> f64 {
        1.0 - self.nnz() as f64 / (self.n * self.m_in * self.m_out) as f64
    }

    pub fn filter_norm(&self, filter: usize) -> f64 {
        self.kernels[filter]
            .iter()
            .map(|e| e.value * e.value)
            .sum::<f64>()
            .sqrt()
    }

    pub fn max_norm_deviation(&self) -> f64 {
        (0..self.m_out)
            .map(|f| (self.filter_norm(f) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_normalized(&self) -> bool {
        self.max_norm_deviation() <= NORM_TOL
    }

    /// Scales every filter to unit norm.
    pub fn normalize(&self) -> Result<Self> {
        let mut out = self.clone();
        for f in 0..self.m_out {
            let norm = self.filter_norm(f);
            if norm <= ZERO_TOL {
                return Err(Error::Parameter(format!("filter {f} is zero and cannot be normalized")));
            }
            for e in &mut out.kernels[f] {
                e.value /= norm;
            }
        }
        Ok(out)
    }

    /// Representation geometry when applied to signals of `signal` geometry.
    pub fn rep_geometry(&self, signal: SignalGeometry) -> Result<SignalGeometry> {
        if signal.channels() != self.m_in {
            return Err(Error::Dimension(format!(
                "layer expects {} input channels, signal has {}",
                self.m_in,
                signal.channels()
            )));
        }
        let len = signal.spatial_len();
        if len % self.stride != 0 {
            return Err(Error::Dimension(format!(
                "stride {} does not divide signal length {len}",
                self.stride
            )));
        }
        if self.n > len {
            return Err(Error::Dimension(format!(
                "filter size {} exceeds signal length {len}",
                self.n
            )));
        }
        SignalGeometry::new(len / self.stride, self.m_out)
    }

    /// Stripe windows of this layer's representation.
    pub fn stripe_window(&self, rep_len: usize) -> StripeWindow {
        StripeWindow::new(rep_len, self.n, self.stride).expect("layer sizes are positive")
    }

    /// `out = D * gamma`; `out` is overwritten.
    pub fn apply_into(&self, signal: SignalGeometry, gamma: &[f64], out: &mut [f64]) {
        let len = signal.spatial_len();
        let m_in = self.m_in;
        out.fill(0.0);
        for (idx, &g) in gamma.iter().enumerate() {
            if g == 0.0 {
                continue;
            }
            let (p, f) = (idx / self.m_out, idx % self.m_out);
            let base = p * self.stride;
            for e in &self.kernels[f] {
                let pos = (base + e.offset) % len;
                out[pos * m_in + e.channel] += g * e.value;
            }
        }
    }

    /// Accumulates `D * gamma` for sparse coefficients into `out`.
    pub fn apply_sparse_add(&self, signal: SignalGeometry, gamma: &[(usize, f64)], out: &mut [f64]) {
        let len = signal.spatial_len();
        for &(idx, g) in gamma {
            let (p, f) = (idx / self.m_out, idx % self.m_out);
            let base = p * self.stride;
            for e in &self.kernels[f] {
                let pos = (base + e.offset) % len;
                out[pos * self.m_in + e.channel] += g * e.value;
            }
        }
    }

    /// `out = D^T * x`; `out` is overwritten.
    pub fn adjoint_into(&self, signal: SignalGeometry, x: &[f64], out: &mut [f64]) {
        let len = signal.spatial_len();
        let positions = len / self.stride;
        for p in 0..positions {
            let base = p * self.stride;
            for (f, kernel) in self.kernels.iter().enumerate() {
                let mut acc = 0.0;
                for e in kernel {
                    let pos = (base + e.offset) % len;
                    acc += e.value * x[pos * self.m_in + e.channel];
                }
                out[p * self.m_out + f] = acc;
            }
        }
    }

    pub fn apply(&self, gamma: &DenseVec, out_geometry: SignalGeometry) -> Result<DenseVec> {
        let rep = self.rep_geometry(out_geometry)?;
        if gamma.geometry() != rep {
            return Err(Error::Dimension(format!(
                "representation geometry {:?} does not match layer output {:?}",
                gamma.geometry(),
                rep
            )));
        }
        let mut out = DenseVec::zeros(out_geometry);
        self.apply_into(out_geometry, gamma.values(), out.values_mut());
        Ok(out)
    }

    pub fn apply_sparse(&self, gamma: &SparseVec, out_geometry: SignalGeometry) -> Result<DenseVec> {
        let rep = self.rep_geometry(out_geometry)?;
        if gamma.geometry() != rep {
            return Err(Error::Dimension(format!(
                "representation geometry {:?} does not match layer output {:?}",
                gamma.geometry(),
                rep
            )));
        }
        let mut out = DenseVec::zeros(out_geometry);
        let entries: Vec<(usize, f64)> = gamma.iter().collect();
        self.apply_sparse_add(out_geometry, &entries, out.values_mut());
        Ok(out)
    }

    pub fn adjoint(&self, x: &DenseVec) -> Result<DenseVec> {
        let rep = self.rep_geometry(x.geometry())?;
        let mut out = DenseVec::zeros(rep);
        self.adjoint_into(x.geometry(), x.values(), out.values_mut());
        Ok(out)
    }

    /// Binds the layer to a signal geometry so it can act as a [`Dictionary`].
    pub fn bind(&self, signal: SignalGeometry) -> Result<EffectiveDict<'_>> {
        compose(std::slice::from_ref(self), signal)
    }

    /// Mutual coherence of the layer as a dictionary on `signal`. Refuses
    /// layers whose filters are not unit norm.
    pub fn mutual_coherence(&self, signal: SignalGeometry) -> Result<f64> {
        let deviation = self.max_norm_deviation();
        if deviation > NORM_TOL {
            return Err(Error::NotNormalized { deviation });
        }
        Ok(self.bind(signal)?.mutual_coherence())
    }
}

/// A linear synthesis operator with named coefficient and signal geometries.
pub trait Dictionary: Sync {
    fn signal_geometry(&self) -> SignalGeometry;

    fn coeff_geometry(&self) -> SignalGeometry;

    /// `out = D * coeffs`, overwriting `out`.
    fn apply_into(&self, coeffs: &[f64], out: &mut [f64]);

    /// `out = D^T * x`, overwriting `out`.
    fn adjoint_into(&self, x: &[f64], out: &mut [f64]);

    /// Stripe windows used to measure `l0,inf` of coefficient vectors.
    fn stripe_window(&self) -> StripeWindow;

    fn n_atoms(&self) -> usize {
        self.coeff_geometry().len()
    }

    fn signal_len(&self) -> usize {
        self.signal_geometry().len()
    }

    fn apply_vec(&self, coeffs: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.signal_len()];
        self.apply_into(coeffs, &mut out);
        out
    }

    fn adjoint_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n_atoms()];
        self.adjoint_into(x, &mut out);
        out
    }

    /// `D * c` for a coefficient list.
    fn apply_entries(&self, entries: &[(usize, f64)]) -> Vec<f64> {
        let mut coeffs = vec![0.0; self.n_atoms()];
        for &(i, v) in entries {
            coeffs[i] += v;
        }
        self.apply_vec(&coeffs)
    }

    fn atom(&self, index: usize) -> Vec<f64> {
        self.apply_entries(&[(index, 1.0)])
    }

    fn atom_norms(&self) -> Vec<f64> {
        (0..self.n_atoms()).map(|j| norm2(&self.atom(j))).collect()
    }
}

/// Dense column-major matrix dictionary (non-convolutional; the whole
/// coefficient vector is a single stripe).
#[derive(Clone, Debug, PartialEq)]
pub struct DenseDict {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseDict {
    pub fn from_columns(rows: usize, columns: &[Vec<f64>]) -> Result<Self> {
        if rows == 0 || columns.is_empty() {
            return Err(Error::Parameter("dense dictionary needs rows and columns".into()));
        }
        let mut data = Vec::with_capacity(rows * columns.len());
        for (j, c) in columns.iter().enumerate() {
            if c.len() != rows {
                return Err(Error::Dimension(format!("column {j} has {} rows, expected {rows}", c.len())));
            }
            data.extend_from_slice(c);
        }
        Ok(Self {
            rows,
            cols: columns.len(),
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.data[j * self.rows..(j + 1) * self.rows]
    }

    pub fn normalize(&self) -> Result<Self> {
        let mut out = self.clone();
        for j in 0..self.cols {
            let norm = norm2(self.column(j));
            if norm <= ZERO_TOL {
                return Err(Error::Parameter(format!("column {j} is zero")));
            }
            for v in &mut out.data[j * self.rows..(j + 1) * self.rows] {
                *v /= norm;
            }
        }
        Ok(out)
    }

    /// Normalized mutual coherence.
    pub fn mutual_coherence(&self) -> f64 {
        let norms: Vec<f64> = (0..self.cols).map(|j| norm2(self.column(j))).collect();
        let mut best: f64 = 0.0;
        for i in 0..self.cols {
            for j in i + 1..self.cols {
                let g = crate::tensor::dot(self.column(i), self.column(j));
                best = best.max(g.abs() / (norms[i] * norms[j]));
            }
        }
        best
    }
}

impl Dictionary for DenseDict {
    fn signal_geometry(&self) -> SignalGeometry {
        SignalGeometry::new(1, self.rows).expect("rows > 0")
    }

    fn coeff_geometry(&self) -> SignalGeometry {
        SignalGeometry::new(1, self.cols).expect("cols > 0")
    }

    fn apply_into(&self, coeffs: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        for (j, &c) in coeffs.iter().enumerate() {
            if c == 0.0 {
                continue;
            }
            for (o, &d) in out.iter_mut().zip(self.column(j)) {
                *o += c * d;
            }
        }
    }

    fn adjoint_into(&self, x: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = crate::tensor::dot(self.column(j), x);
        }
    }

    fn stripe_window(&self) -> StripeWindow {
        StripeWindow::global(1)
    }

    fn atom(&self, index: usize) -> Vec<f64> {
        self.column(index).to_vec()
    }
}

/// Receptive field of a layer stack: `r_1 = n_1`,
/// `r_j = r_{j-1} + (n_j - 1) * (s_1 * .. * s_{j-1})`. For stride-1 stacks this
/// is `sum(n_j) - (L - 1)`.
pub fn effective_support(layers: &[ConvLayer]) -> usize {
    let mut support = 0;
    let mut scale = 1;
    for (j, layer) in layers.iter().enumerate() {
        if j == 0 {
            support = layer.n();
        } else {
            support += (layer.n() - 1) * scale;
        }
        scale *= layer.stride();
    }
    support
}

/// The composed operator `D_1 D_2 .. D_i`, applied layer by layer.
#[derive(Clone, Debug)]
pub struct EffectiveDict<'a> {
    layers: &'a [ConvLayer],
    // geometries[0] is the signal; geometries[j] the representation of layer j
    geometries: Vec<SignalGeometry>,
    support: usize,
}

/// Composes `layers` acting on signals of geometry `signal`.
pub fn compose(layers: &[ConvLayer], signal: SignalGeometry) -> Result<EffectiveDict<'_>> {
    if layers.is_empty() {
        return Err(Error::Parameter("cannot compose an empty layer list".into()));
    }
    let mut geometries = vec![signal];
    for (j, layer) in layers.iter().enumerate() {
        let current = *geometries.last().expect("non-empty");
        if j > 0 && layers[j - 1].m_out() != layer.m_in() {
            return Err(Error::Dimension(format!(
                "layer {} outputs {} channels but layer {} expects {}",
                j - 1,
                layers[j - 1].m_out(),
                j,
                layer.m_in()
            )));
        }
        geometries.push(layer.rep_geometry(current)?);
    }
    Ok(EffectiveDict {
        layers,
        geometries,
        support: effective_support(layers),
    })
}

impl<'a> EffectiveDict<'a> {
    pub fn layers(&self) -> &'a [ConvLayer] {
        self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Geometry at level `j` (0 is the signal).
    pub fn geometry_at(&self, level: usize) -> SignalGeometry {
        self.geometries[level]
    }

    pub fn effective_support(&self) -> usize {
        self.support
    }

    /// Product of strides: shifting a coefficient by one position shifts its
    /// atom by this many signal samples.
    pub fn effective_stride(&self) -> usize {
        self.layers.iter().map(ConvLayer::stride).product()
    }

    /// Apply only layers `from..depth` mapping level `depth` down to level `from`.
    pub fn apply_partial(&self, from: usize, coeffs: &[f64]) -> Vec<f64> {
        let mut current = coeffs.to_vec();
        for j in (from..self.layers.len()).rev() {
            let mut next = vec![0.0; self.geometries[j].len()];
            self.layers[j].apply_into(self.geometries[j], &current, &mut next);
            current = next;
        }
        current
    }

    /// Every level's vector for the given deepest coefficients:
    /// `levels[j] = D_{j+1} .. D_L coeffs`, `levels[depth] = coeffs`.
    pub fn forward_levels(&self, coeffs: &[f64]) -> Vec<Vec<f64>> {
        let depth = self.layers.len();
        let mut levels = vec![Vec::new(); depth + 1];
        levels[depth] = coeffs.to_vec();
        for j in (0..depth).rev() {
            let mut next = vec![0.0; self.geometries[j].len()];
            self.layers[j].apply_into(self.geometries[j], &levels[j + 1], &mut next);
            levels[j] = next;
        }
        levels
    }

    /// Atoms at coefficient position 0, one per filter.
    pub fn base_atoms(&self) -> Vec<Vec<f64>> {
        let m = self.coeff_geometry().channels();
        (0..m).map(|f| self.atom(f)).collect()
    }

    /// Dense materialization (columns), for diagnostics on small problems.
    pub fn materialize(&self) -> Result<DenseDict> {
        let size = self.signal_len() * self.n_atoms();
        if size > 1024 * 1024 * 4 {
            return Err(Error::Parameter(format!("refusing to materialize {size} entries")));
        }
        let cols: Vec<Vec<f64>> = (0..self.n_atoms()).map(|j| self.atom(j)).collect();
        DenseDict::from_columns(self.signal_len(), &cols)
    }

    /// Normalized mutual coherence, computed from the atoms at position 0
    /// and their circular shifts.
    pub fn mutual_coherence(&self) -> f64 {
        let signal = self.geometries[0];
        let channels = signal.channels();
        let len = signal.spatial_len();
        let shift = self.effective_stride();
        let positions = self.coeff_geometry().spatial_len();
        let atoms = self.base_atoms();
        let norms: Vec<f64> = atoms.iter().map(|a| norm2(a)).collect();
        let supports: Vec<Vec<(usize, usize, f64)>> = atoms
            .iter()
            .map(|a| {
                a.iter()
                    .enumerate()
                    .filter(|(_, v)| v.abs() > 0.0)
                    .map(|(i, &v)| (i / channels, i % channels, v))
                    .collect()
            })
            .collect();
        let m = atoms.len();
        let mut best: f64 = 0.0;
        for f in 0..m {
            if norms[f] <= ZERO_TOL {
                continue;
            }
            for g in f..m {
                if norms[g] <= ZERO_TOL {
                    continue;
                }
                for q in 0..positions {
                    if f == g && q == 0 {
                        continue;
                    }
                    let offset = q * shift;
                    let mut acc = 0.0;
                    for &(p, c, v) in &supports[g] {
                        let pos = (p + offset) % len;
                        acc += v * atoms[f][pos * channels + c];
                    }
                    best = best.max(acc.abs() / (norms[f] * norms[g]));
                }
            }
        }
        best.min(1.0)
    }
}

impl Dictionary for EffectiveDict<'_> {
    fn signal_geometry(&self) -> SignalGeometry {
        self.geometries[0]
    }

    fn coeff_geometry(&self) -> SignalGeometry {
        *self.geometries.last().expect("non-empty")
    }

    fn apply_into(&self, coeffs: &[f64], out: &mut [f64]) {
        if self.layers.len() == 1 {
            self.layers[0].apply_into(self.geometries[0], coeffs, out);
            return;
        }
        let v = self.apply_partial(0, coeffs);
        out.copy_from_slice(&v);
    }

    fn adjoint_into(&self, x: &[f64], out: &mut [f64]) {
        let mut current = x.to_vec();
        let depth = self.layers.len();
        for j in 0..depth {
            if j + 1 == depth {
                self.layers[j].adjoint_into(self.geometries[j], &current, out);
            } else {
                let mut next = vec![0.0; self.geometries[j + 1].len()];
                self.layers[j].adjoint_into(self.geometries[j], &current, &mut next);
                current = next;
            }
        }
    }

    fn stripe_window(&self) -> StripeWindow {
        let last = self.layers.last().expect("non-empty");
        last.stripe_window(self.coeff_geometry().spatial_len())
    }

    fn apply_entries(&self, entries: &[(usize, f64)]) -> Vec<f64> {
        let depth = self.layers.len();
        let mut out = vec![0.0; self.geometries[depth - 1].len()];
        self.layers[depth - 1].apply_sparse_add(self.geometries[depth - 1], entries, &mut out);
        if depth == 1 {
            return out;
        }
        let mut current = out;
        for j in (0..depth - 1).rev() {
            let mut next = vec![0.0; self.geometries[j].len()];
            self.layers[j].apply_into(self.geometries[j], &current, &mut next);
            current = next;
        }
        current
    }

    fn atom_norms(&self) -> Vec<f64> {
        // circular shift invariance: every position shares the base atom norms
        let per_filter: Vec<f64> = self.base_atoms().iter().map(|a| norm2(a)).collect();
        let positions = self.coeff_geometry().spatial_len();
        (0..positions).flat_map(|_| per_filter.iter().copied()).collect()
    }
}

/// Number of signal coordinates touched by at least one atom of `support`.
pub fn nonzero_row_count<D: Dictionary + ?Sized>(dict: &D, support: &[usize]) -> usize {
    let mut rows = BTreeSet::new();
    for &j in support {
        for (i, v) in dict.atom(j).into_iter().enumerate() {
            if v.abs() > ZERO_TOL {
                rows.insert(i);
            }
        }
    }
    rows.len()
}
