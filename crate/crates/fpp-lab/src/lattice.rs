//! Lattice geometry, edge-weight distributions, and reproducible weight
//! fields.
//!
//! A [`LatticeWindow`] is the finite box `{-L..L}^d` with one nearest-neighbor
//! edge per adjacent site pair. Weights live in a flat array addressed by
//! `site_index * d + axis` (site-major, axis-minor): the slot for `(s, a)`
//! holds the weight of the edge from `s` to `s + e_a` and is valid whenever
//! that neighbor is still inside the window. The *value* in each slot is a
//! pure function of `(seed, stream, replication, absolute edge coordinates)`,
//! so enlarging the window extends the same realization and thread count
//! never matters.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{counter_of_words, zigzag, Stream, StreamKey};

/// Maximum supported dimension; keeps coordinate buffers on the stack.
pub const MAX_DIMENSION: usize = 8;

/// Memory budget for one weight field, in bytes.
pub const DEFAULT_FIELD_BUDGET_BYTES: usize = 2 << 30;

#[derive(Debug, Error)]
pub enum LatticeError {
    #[error("dimension {0} outside supported range 2..={MAX_DIMENSION}")]
    BadDimension(usize),
    #[error("half-width {0} must be >= 1")]
    BadHalfWidth(i64),
    #[error("window needs {needed} bytes of weights, budget is {budget}")]
    WindowTooLarge { needed: usize, budget: usize },
    #[error("site {0:?} is outside the window")]
    OutOfWindow(Vec<i64>),
    #[error("site {0:?} touches the window boundary; not all 2d adjacent edges exist")]
    BoundarySite(Vec<i64>),
    #[error("weight array has length {got}, window expects {expected}")]
    WeightLengthMismatch { got: usize, expected: usize },
    #[error("weights must be finite and nonnegative (slot {slot} holds {value})")]
    BadWeight { slot: usize, value: f64 },
}

#[derive(Debug, Error)]
pub enum SpecError {
    #[error("pareto tail exponent must be positive, got {0}")]
    BadParetoExponent(f64),
    #[error("exponential rate must be positive, got {0}")]
    BadExponentialRate(f64),
    #[error("deterministic weight must be positive and finite, got {0}")]
    BadConstant(f64),
    #[error("bernoulli-shift needs 0 <= a < b and p in [0,1], got p={p}, a={a}, b={b}")]
    BadBernoulliShift { p: f64, a: f64, b: f64 },
    #[error("atom at zero F(0)={f0} violates F(0) < p_c({d}) = {pc}")]
    AtomAtZeroTooHeavy { f0: f64, pc: f64, d: usize },
}

/// Critical probability threshold used to validate `F(0) < p_c(d)`.
///
/// d=2 is the exact 1/2, d=3 the standard numerical value; for d >= 4 the
/// rigorous lower bound 1/(2d-1) is used, which keeps the validation safe.
pub fn critical_probability(d: usize) -> f64 {
    match d {
        2 => 0.5,
        3 => 0.2488,
        _ => 1.0 / (2.0 * d as f64 - 1.0),
    }
}

/// Edge-weight distribution. All mass on `[0, inf)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DistributionSpec {
    /// Point mass at `value`.
    Deterministic { value: f64 },
    /// Exponential with the given rate.
    Exponential { rate: f64 },
    /// Pareto normalized to scale 1: `P(w > t) = min(1, t^-beta)`.
    Pareto { beta: f64 },
    /// Mass `p` at `a`, mass `1-p` at `b`, with `0 <= a < b`.
    BernoulliShift { p: f64, a: f64, b: f64 },
}

impl DistributionSpec {
    pub fn deterministic(value: f64) -> Self {
        DistributionSpec::Deterministic { value }
    }

    pub fn exponential(rate: f64) -> Self {
        DistributionSpec::Exponential { rate }
    }

    pub fn pareto(beta: f64) -> Self {
        DistributionSpec::Pareto { beta }
    }

    pub fn bernoulli_shift(p: f64, a: f64, b: f64) -> Self {
        DistributionSpec::BernoulliShift { p, a, b }
    }

    /// Mass at zero, `F(0) = P(w = 0)`.
    pub fn atom_at_zero(&self) -> f64 {
        match *self {
            DistributionSpec::Deterministic { value } => {
                if value == 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            DistributionSpec::Exponential { .. } | DistributionSpec::Pareto { .. } => 0.0,
            DistributionSpec::BernoulliShift { p, a, .. } => {
                if a == 0.0 {
                    p
                } else {
                    0.0
                }
            }
        }
    }

    /// Validates parameter ranges and the percolation assumption for `d`.
    pub fn validate(&self, d: usize) -> Result<(), SpecError> {
        match *self {
            DistributionSpec::Deterministic { value } => {
                if !(value > 0.0) || !value.is_finite() {
                    return Err(SpecError::BadConstant(value));
                }
            }
            DistributionSpec::Exponential { rate } => {
                if !(rate > 0.0) || !rate.is_finite() {
                    return Err(SpecError::BadExponentialRate(rate));
                }
            }
            DistributionSpec::Pareto { beta } => {
                if !(beta > 0.0) || !beta.is_finite() {
                    return Err(SpecError::BadParetoExponent(beta));
                }
            }
            DistributionSpec::BernoulliShift { p, a, b } => {
                if !(0.0..=1.0).contains(&p) || !(a >= 0.0) || !(a < b) || !b.is_finite() {
                    return Err(SpecError::BadBernoulliShift { p, a, b });
                }
            }
        }
        let f0 = self.atom_at_zero();
        let pc = critical_probability(d);
        if f0 >= pc {
            return Err(SpecError::AtomAtZeroTooHeavy { f0, pc, d });
        }
        Ok(())
    }

    /// `P(w > t)` for a single edge weight.
    pub fn survival(&self, t: f64) -> f64 {
        match *self {
            DistributionSpec::Deterministic { value } => {
                if t < value {
                    1.0
                } else {
                    0.0
                }
            }
            DistributionSpec::Exponential { rate } => (-rate * t).exp(),
            DistributionSpec::Pareto { beta } => {
                if t <= 1.0 {
                    1.0
                } else {
                    t.powf(-beta)
                }
            }
            DistributionSpec::BernoulliShift { p, a, b } => {
                if t < a {
                    1.0
                } else if t < b {
                    1.0 - p
                } else {
                    0.0
                }
            }
        }
    }

    /// Essential infimum of the weight, where it is known exactly.
    pub fn essential_infimum(&self) -> Option<f64> {
        match *self {
            DistributionSpec::Deterministic { value } => Some(value),
            DistributionSpec::BernoulliShift { a, .. } => Some(a),
            DistributionSpec::Pareto { .. } => Some(1.0),
            DistributionSpec::Exponential { .. } => None,
        }
    }

    /// Stable identifier embedded in model files and curve sidecars.
    pub fn fingerprint(&self, d: usize) -> String {
        match *self {
            DistributionSpec::Deterministic { value } => format!("d{d}:deterministic({value})"),
            DistributionSpec::Exponential { rate } => format!("d{d}:exponential({rate})"),
            DistributionSpec::Pareto { beta } => format!("d{d}:pareto({beta})"),
            DistributionSpec::BernoulliShift { p, a, b } => {
                format!("d{d}:bernoulli-shift({p},{a},{b})")
            }
        }
    }
}

/// Inverse-CDF sample: returns `F^{-1}(u)` for `u` in `[0, 1)`.
pub fn sample_weight(spec: &DistributionSpec, u: f64) -> f64 {
    debug_assert!((0.0..1.0).contains(&u));
    match *spec {
        DistributionSpec::Deterministic { value } => value,
        DistributionSpec::Exponential { rate } => -(-u).ln_1p() / rate,
        DistributionSpec::Pareto { beta } => (1.0 - u).powf(-1.0 / beta),
        DistributionSpec::BernoulliShift { p, a, b } => {
            if u < p {
                a
            } else {
                b
            }
        }
    }
}

/// The finite box `{-L..L}^d` and its nearest-neighbor edges.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatticeWindow {
    dimension: usize,
    half_width: i64,
    strides: Vec<usize>,
}

impl LatticeWindow {
    pub fn new(dimension: usize, half_width: i64) -> Result<Self, LatticeError> {
        if !(2..=MAX_DIMENSION).contains(&dimension) {
            return Err(LatticeError::BadDimension(dimension));
        }
        if half_width < 1 {
            return Err(LatticeError::BadHalfWidth(half_width));
        }
        let side = 2 * half_width as usize + 1;
        let mut strides = Vec::with_capacity(dimension);
        let mut acc = 1usize;
        for _ in 0..dimension {
            strides.push(acc);
            acc = acc.checked_mul(side).ok_or(LatticeError::WindowTooLarge {
                needed: usize::MAX,
                budget: DEFAULT_FIELD_BUDGET_BYTES,
            })?;
        }
        Ok(LatticeWindow { dimension, half_width, strides })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn half_width(&self) -> i64 {
        self.half_width
    }

    pub fn side(&self) -> usize {
        2 * self.half_width as usize + 1
    }

    pub fn num_sites(&self) -> usize {
        self.side().pow(self.dimension as u32)
    }

    /// Number of nearest-neighbor edges inside the window:
    /// `d * side^(d-1) * (side - 1)`.
    pub fn num_edges(&self) -> usize {
        self.dimension * self.side().pow(self.dimension as u32 - 1) * (self.side() - 1)
    }

    /// Number of weight slots (`num_sites * d`); slots whose forward neighbor
    /// would leave the window are never read.
    pub fn num_slots(&self) -> usize {
        self.num_sites() * self.dimension
    }

    pub fn strides(&self) -> &[usize] {
        &self.strides
    }

    pub fn origin_index(&self) -> usize {
        let mut idx = 0;
        for a in 0..self.dimension {
            idx += self.half_width as usize * self.strides[a];
        }
        idx
    }

    pub fn contains(&self, coords: &[i64]) -> bool {
        coords.len() == self.dimension && coords.iter().all(|c| c.abs() <= self.half_width)
    }

    pub fn site_index(&self, coords: &[i64]) -> Result<usize, LatticeError> {
        if !self.contains(coords) {
            return Err(LatticeError::OutOfWindow(coords.to_vec()));
        }
        let mut idx = 0;
        for a in 0..self.dimension {
            idx += (coords[a] + self.half_width) as usize * self.strides[a];
        }
        Ok(idx)
    }

    pub fn site_coords(&self, index: usize) -> Vec<i64> {
        let side = self.side();
        let mut out = Vec::with_capacity(self.dimension);
        for a in 0..self.dimension {
            out.push((index / self.strides[a] % side) as i64 - self.half_width);
        }
        out
    }

    /// Digit of `index` along `axis`, in `0..side`.
    #[inline(always)]
    pub fn digit(&self, index: usize, axis: usize) -> usize {
        index / self.strides[axis] % self.side()
    }

    #[inline(always)]
    pub fn is_boundary(&self, index: usize) -> bool {
        let top = self.side() - 1;
        (0..self.dimension).any(|a| {
            let dg = self.digit(index, a);
            dg == 0 || dg == top
        })
    }

    pub fn is_interior(&self, index: usize) -> bool {
        !self.is_boundary(index)
    }

    /// Window-independent identifier of the edge `(site, site + e_axis)`,
    /// used as the RNG counter for the edge's weight.
    pub fn edge_counter(&self, site: usize, axis: usize) -> u64 {
        let mut words = [0u64; MAX_DIMENSION + 1];
        for a in 0..self.dimension {
            let c = self.digit(site, a) as i64 - self.half_width;
            words[a] = zigzag(c);
        }
        words[self.dimension] = axis as u64;
        counter_of_words(&words[..=self.dimension])
    }
}

/// Identifier for one lattice edge that survives window resizing; two sites
/// share an adjacent edge exactly when some `EdgeId` does.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeId {
    pub lower_endpoint: Vec<i64>,
    pub axis: usize,
}

/// The `2d` edges adjacent to the site at `coords`.
pub fn adjacent_edge_ids(coords: &[i64]) -> Vec<EdgeId> {
    let d = coords.len();
    let mut out = Vec::with_capacity(2 * d);
    for axis in 0..d {
        out.push(EdgeId { lower_endpoint: coords.to_vec(), axis });
        let mut lower = coords.to_vec();
        lower[axis] -= 1;
        out.push(EdgeId { lower_endpoint: lower, axis });
    }
    out
}

/// One sampled realization of edge weights on a window.
#[derive(Clone, Debug)]
pub struct WeightField {
    window: LatticeWindow,
    weights: Vec<f64>,
    seed: u64,
    replication: u64,
    stream: Stream,
}

/// Sampling identity of one replication: `(seed, stream, replication)`.
#[derive(Clone, Copy, Debug)]
pub struct FieldSeed {
    pub seed: u64,
    pub stream: Stream,
    pub replication: u64,
}

impl WeightField {
    /// Samples one i.i.d. weight per edge, deterministically in the seed
    /// identity and the edge's absolute coordinates.
    pub fn sample(
        spec: &DistributionSpec,
        window: LatticeWindow,
        id: FieldSeed,
    ) -> Result<Self, LatticeError> {
        Self::sample_with_budget(spec, window, id, DEFAULT_FIELD_BUDGET_BYTES)
    }

    pub fn sample_with_budget(
        spec: &DistributionSpec,
        window: LatticeWindow,
        id: FieldSeed,
        budget_bytes: usize,
    ) -> Result<Self, LatticeError> {
        let slots = window.num_slots();
        let needed = slots.saturating_mul(std::mem::size_of::<f64>());
        if needed > budget_bytes {
            return Err(LatticeError::WindowTooLarge { needed, budget: budget_bytes });
        }
        let key = StreamKey::new(id.seed, id.stream, id.replication);
        let d = window.dimension();
        let mut weights = vec![0.0f64; slots];
        // every slot's value depends only on its own identifiers, so chunked
        // parallel fill and sequential fill agree bit-for-bit
        let fill = |(start, chunk): (usize, &mut [f64])| {
            for (off, w) in chunk.iter_mut().enumerate() {
                let slot = start + off;
                let counter = window.edge_counter(slot / d, slot % d);
                *w = sample_weight(spec, key.uniform(counter));
            }
        };
        if slots >= 1 << 16 {
            let chunk = 1 << 14;
            weights
                .par_chunks_mut(chunk)
                .enumerate()
                .map(|(i, c)| (i * chunk, c))
                .for_each(fill);
        } else {
            fill((0, &mut weights[..]));
        }
        Ok(WeightField { window, weights, seed: id.seed, replication: id.replication, stream: id.stream })
    }

    /// Wraps an explicit weight array (site-major, axis-minor slot order).
    pub fn from_weights(window: LatticeWindow, weights: Vec<f64>) -> Result<Self, LatticeError> {
        if weights.len() != window.num_slots() {
            return Err(LatticeError::WeightLengthMismatch {
                got: weights.len(),
                expected: window.num_slots(),
            });
        }
        for (slot, &w) in weights.iter().enumerate() {
            if !w.is_finite() || w < 0.0 {
                return Err(LatticeError::BadWeight { slot, value: w });
            }
        }
        Ok(WeightField { window, weights, seed: 0, replication: 0, stream: Stream::Diagnostics })
    }

    pub fn window(&self) -> &LatticeWindow {
        &self.window
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn replication(&self) -> u64 {
        self.replication
    }

    pub fn stream(&self) -> Stream {
        self.stream
    }

    /// Weight of the edge from `site` toward `+axis`. The caller must ensure
    /// the edge exists (forward digit below `side - 1`).
    #[inline(always)]
    pub fn weight(&self, site: usize, axis: usize) -> f64 {
        self.weights[site * self.window.dimension + axis]
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Copy with some slots overwritten; used to build handcrafted fields.
    pub fn with_overrides(&self, overrides: &[(usize, usize, f64)]) -> Result<Self, LatticeError> {
        let mut weights = self.weights.clone();
        for &(site, axis, w) in overrides {
            weights[site * self.window.dimension + axis] = w;
        }
        Self::from_weights(self.window.clone(), weights)
    }

    /// Minimum over the `2d` weights adjacent to the site at `coords`.
    pub fn adjacent_min(&self, coords: &[i64]) -> Result<f64, LatticeError> {
        let idx = self.window.site_index(coords)?;
        if !self.window.is_interior(idx) {
            return Err(LatticeError::BoundarySite(coords.to_vec()));
        }
        let d = self.window.dimension();
        let mut min = f64::INFINITY;
        for axis in 0..d {
            let fwd = self.weight(idx, axis);
            let bwd = self.weight(idx - self.window.strides[axis], axis);
            min = min.min(fwd).min(bwd);
        }
        Ok(min)
    }
}
