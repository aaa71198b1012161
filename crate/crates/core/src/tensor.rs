//! Dense and sparse containers over a 1-D circular spatial axis with channels,
//! plus the stripe/patch window operators and the local `l0,inf` / `l2,inf`
//! norms built on them.
//!
//! Flat indexing is channel-major within a spatial position:
//! `index = position * channels + channel`.
//!
//! Window conventions (stride 1, filter size `n`):
//! - the patch at position `i` covers spatial positions `i, i+1, .., i+n-1`;
//! - the stripe at position `i` covers `i-(n-1), .., i+(n-1)` (width `2n-1`),
//!   which is exactly the set of atom positions whose support meets patch `i`.
//!
//! Windows wrap circularly. A window wider than the axis covers every position
//! once.

use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Entries with magnitude at or below this are treated as structural zeros.
pub const ZERO_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Boundary {
    Circular,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct SignalGeometry {
    spatial_len: usize,
    channels: usize,
    boundary: Boundary,
}

impl SignalGeometry {
    pub fn new(spatial_len: usize, channels: usize) -> Result<Self> {
        if spatial_len == 0 || channels == 0 {
            return Err(Error::Parameter(format!(
                "geometry needs positive sizes, got spatial_len={spatial_len} channels={channels}"
            )));
        }
        Ok(Self {
            spatial_len,
            channels,
            boundary: Boundary::Circular,
        })
    }

    pub fn spatial_len(&self) -> usize {
        self.spatial_len
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    /// Total number of scalar entries.
    pub fn len(&self) -> usize {
        self.spatial_len * self.channels
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn index(&self, position: usize, channel: usize) -> usize {
        position * self.channels + channel
    }

    #[inline]
    pub fn split(&self, index: usize) -> (usize, usize) {
        (index / self.channels, index % self.channels)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseVec {
    geometry: SignalGeometry,
    values: Vec<f64>,
}

impl DenseVec {
    pub fn new(geometry: SignalGeometry, values: Vec<f64>) -> Result<Self> {
        if values.len() != geometry.len() {
            return Err(Error::Dimension(format!(
                "dense vector has {} values, geometry needs {}",
                values.len(),
                geometry.len()
            )));
        }
        Ok(Self { geometry, values })
    }

    pub fn zeros(geometry: SignalGeometry) -> Self {
        Self {
            geometry,
            values: vec![0.0; geometry.len()],
        }
    }

    pub fn geometry(&self) -> SignalGeometry {
        self.geometry
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn norm(&self) -> f64 {
        norm2(&self.values)
    }
}

/// Sparse vector keyed by flat index. Never stores an entry with
/// `|value| <= ZERO_TOL`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseVec {
    geometry: SignalGeometry,
    entries: BTreeMap<usize, f64>,
}

impl SparseVec {
    pub fn zeros(geometry: SignalGeometry) -> Self {
        Self {
            geometry,
            entries: BTreeMap::new(),
        }
    }

    /// Builds from `(index, value)` pairs; repeated indices are summed.
    pub fn from_entries<I>(geometry: SignalGeometry, entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, f64)>,
    {
        let mut out = Self::zeros(geometry);
        for (index, value) in entries {
            if index >= geometry.len() {
                return Err(Error::Index {
                    index,
                    len: geometry.len(),
                });
            }
            *out.entries.entry(index).or_insert(0.0) += value;
        }
        out.entries.retain(|_, v| v.abs() > ZERO_TOL);
        Ok(out)
    }

    pub fn from_slice(geometry: SignalGeometry, values: &[f64]) -> Result<Self> {
        if values.len() != geometry.len() {
            return Err(Error::Dimension(format!(
                "slice has {} values, geometry needs {}",
                values.len(),
                geometry.len()
            )));
        }
        let entries = values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.abs() > ZERO_TOL)
            .map(|(i, &v)| (i, v))
            .collect();
        Ok(Self { geometry, entries })
    }

    pub fn from_dense(x: &DenseVec) -> Self {
        Self::from_slice(x.geometry, &x.values).expect("geometry matches by construction")
    }

    pub fn geometry(&self) -> SignalGeometry {
        self.geometry
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_zero(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, index: usize) -> f64 {
        self.entries.get(&index).copied().unwrap_or(0.0)
    }

    /// Sets an entry, dropping it when the value is numerically zero.
    pub fn set(&mut self, index: usize, value: f64) -> Result<()> {
        if index >= self.geometry.len() {
            return Err(Error::Index {
                index,
                len: self.geometry.len(),
            });
        }
        if value.abs() > ZERO_TOL {
            self.entries.insert(index, value);
        } else {
            self.entries.remove(&index);
        }
        Ok(())
    }

    /// Entries in increasing index order.
    pub fn iter(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.entries.iter().map(|(&i, &v)| (i, v))
    }

    pub fn support(&self) -> Vec<usize> {
        self.entries.keys().copied().collect()
    }

    pub fn to_dense(&self) -> DenseVec {
        DenseVec {
            geometry: self.geometry,
            values: self.to_vec(),
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut values = vec![0.0; self.geometry.len()];
        for (&i, &v) in &self.entries {
            values[i] = v;
        }
        values
    }

    pub fn norm(&self) -> f64 {
        self.entries.values().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Number of nonzeros at each spatial position.
    pub fn position_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.geometry.spatial_len];
        for &i in self.entries.keys() {
            counts[i / self.geometry.channels] += 1;
        }
        counts
    }

    /// Squared energy at each spatial position.
    pub fn position_energy(&self) -> Vec<f64> {
        let mut energy = vec![0.0; self.geometry.spatial_len];
        for (&i, &v) in &self.entries {
            energy[i / self.geometry.channels] += v * v;
        }
        energy
    }
}

pub fn norm2(values: &[f64]) -> f64 {
    values.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Stripe windows of a representation attached to a convolutional layer with
/// filter size `n` and stride `stride`.
///
/// Windows are indexed by signal-side spatial position `t` (the patch the
/// stripe explains); the stripe holds every representation position `p` with
/// `p * stride` in `[t - n + 1, t + n - 1]`, circularly. For stride 1 this is
/// the `2n - 1` window centred at `t`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StripeWindow {
    rep_len: usize,
    n: usize,
    stride: usize,
}

impl StripeWindow {
    pub fn new(rep_len: usize, n: usize, stride: usize) -> Result<Self> {
        if rep_len == 0 || n == 0 || stride == 0 {
            return Err(Error::Parameter(format!(
                "stripe window needs positive sizes, got rep_len={rep_len} n={n} stride={stride}"
            )));
        }
        Ok(Self { rep_len, n, stride })
    }

    /// Window covering the whole representation (a plain `l0` measure).
    pub fn global(rep_len: usize) -> Self {
        Self {
            rep_len,
            n: rep_len,
            stride: 1,
        }
    }

    pub fn rep_len(&self) -> usize {
        self.rep_len
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn signal_len(&self) -> usize {
        self.rep_len * self.stride
    }

    /// Number of distinct windows (one per signal position, or one when a
    /// single window already covers everything).
    pub fn window_count(&self) -> usize {
        if self.covers_all() {
            1
        } else {
            self.signal_len()
        }
    }

    fn covers_all(&self) -> bool {
        2 * self.n - 1 >= self.signal_len()
    }

    fn members_unclamped(&self, t: usize) -> Vec<usize> {
        let big_n = self.signal_len();
        let span = (2 * self.n - 1).min(big_n);
        let start = (t + big_n * self.n - (self.n - 1)) % big_n;
        let mut out = Vec::new();
        for k in 0..span {
            let u = (start + k) % big_n;
            if u % self.stride == 0 {
                out.push(u / self.stride);
            }
        }
        out
    }

    /// Representation positions in window `t`, in window order.
    pub fn members(&self, t: usize) -> Vec<usize> {
        if self.covers_all() {
            return (0..self.rep_len).collect();
        }
        self.members_unclamped(t)
    }

    /// Windows (as returned by `members`) containing representation position `p`.
    pub fn windows_containing(&self, p: usize) -> Vec<usize> {
        if self.covers_all() {
            return vec![0];
        }
        let big_n = self.signal_len();
        let centre = p * self.stride;
        let span = (2 * self.n - 1).min(big_n);
        let start = (centre + big_n * self.n - (self.n - 1)) % big_n;
        (0..span).map(|k| (start + k) % big_n).collect()
    }

    /// Maximal number of nonzeros in any stripe.
    pub fn l0_inf(&self, gamma: &SparseVec) -> usize {
        let counts = gamma.position_counts();
        (0..self.window_count())
            .map(|t| self.members(t).iter().map(|&p| counts[p]).sum())
            .max()
            .unwrap_or(0)
    }

    /// Maximal stripe energy (not squared).
    pub fn l2_inf(&self, gamma: &SparseVec) -> f64 {
        let energy = gamma.position_energy();
        (0..self.window_count())
            .map(|t| self.members(t).iter().map(|&p| energy[p]).sum::<f64>())
            .fold(0.0, f64::max)
            .sqrt()
    }
}

/// Incrementally tracks stripe counts so that supports can be grown under an
/// `l0,inf` cap.
#[derive(Clone, Debug)]
pub struct StripeCounter {
    window: StripeWindow,
    channels: usize,
    counts: Vec<usize>,
}

impl StripeCounter {
    pub fn new(window: StripeWindow, channels: usize) -> Self {
        Self {
            window,
            channels,
            counts: vec![0; window.window_count()],
        }
    }

    pub fn max(&self) -> usize {
        self.counts.iter().copied().max().unwrap_or(0)
    }

    /// Largest stripe count after adding flat index `index`.
    pub fn max_after_adding(&self, index: usize) -> usize {
        let p = index / self.channels;
        let touched = self
            .window
            .windows_containing(p)
            .into_iter()
            .map(|t| self.counts[t] + 1)
            .max()
            .unwrap_or(0);
        touched.max(self.max())
    }

    pub fn add(&mut self, index: usize) {
        let p = index / self.channels;
        for t in self.window.windows_containing(p) {
            self.counts[t] += 1;
        }
    }
}

fn check_position(position: usize, geometry: SignalGeometry) -> Result<()> {
    if position >= geometry.spatial_len() {
        return Err(Error::Index {
            index: position,
            len: geometry.spatial_len(),
        });
    }
    Ok(())
}

/// Stripe of width `2n - 1` centred at `i`, re-indexed so that local position
/// 0 is spatial position `i - (n - 1)`.
pub fn extract_stripe(gamma: &SparseVec, i: usize, n: usize) -> Result<SparseVec> {
    let geometry = gamma.geometry();
    check_position(i, geometry)?;
    if n == 0 {
        return Err(Error::Parameter("filter size must be positive".into()));
    }
    let len = geometry.spatial_len();
    let width = (2 * n - 1).min(len);
    let start = (i + len * n - (n - 1)) % len;
    let local = SignalGeometry::new(width, geometry.channels())?;
    let entries = gamma.iter().filter_map(|(idx, v)| {
        let (p, c) = geometry.split(idx);
        let offset = (p + len - start) % len;
        (offset < width).then(|| (local.index(offset, c), v))
    });
    SparseVec::from_entries(local, entries)
}

/// Patch of width `n` starting at `i` (all channels).
pub fn extract_patch(x: &DenseVec, i: usize, n: usize) -> Result<DenseVec> {
    let geometry = x.geometry();
    check_position(i, geometry)?;
    if n == 0 {
        return Err(Error::Parameter("filter size must be positive".into()));
    }
    let len = geometry.spatial_len();
    let width = n.min(len);
    let local = SignalGeometry::new(width, geometry.channels())?;
    let mut values = Vec::with_capacity(local.len());
    for k in 0..width {
        let p = (i + k) % len;
        values.extend_from_slice(&x.values()[geometry.index(p, 0)..geometry.index(p + 1, 0)]);
    }
    DenseVec::new(local, values)
}

fn patch_max<T: Copy + Default + PartialOrd + std::ops::Add<Output = T>>(
    per_position: &[T],
    n: usize,
) -> T {
    let len = per_position.len();
    let width = n.min(len);
    let windows = if width == len { 1 } else { len };
    let mut best = T::default();
    for i in 0..windows {
        let mut acc = T::default();
        for k in 0..width {
            acc = acc + per_position[(i + k) % len];
        }
        if acc > best {
            best = acc;
        }
    }
    best
}

/// Maximal nonzero count over stripes (stride 1).
pub fn l0_inf_stripe(gamma: &SparseVec, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    StripeWindow::new(gamma.geometry().spatial_len(), n, 1)
        .map(|w| w.l0_inf(gamma))
        .unwrap_or(0)
}

/// Maximal nonzero count over patches of width `n`.
pub fn l0_inf_patch(gamma: &SparseVec, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    patch_max(&gamma.position_counts(), n)
}

/// Maximal stripe `l2` norm (stride 1).
pub fn l2_inf_stripe(gamma: &SparseVec, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    StripeWindow::new(gamma.geometry().spatial_len(), n, 1)
        .map(|w| w.l2_inf(gamma))
        .unwrap_or(0.0)
}

/// Maximal patch `l2` norm over a dense signal.
pub fn l2_inf_patch(x: &DenseVec, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let geometry = x.geometry();
    let energy: Vec<f64> = x
        .values()
        .chunks(geometry.channels())
        .map(|c| c.iter().map(|v| v * v).sum())
        .collect();
    patch_max(&energy, n).sqrt()
}

/// Maximal patch `l2` norm of a sparse vector.
pub fn l2_inf_patch_sparse(gamma: &SparseVec, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    patch_max(&gamma.position_energy(), n).sqrt()
}
