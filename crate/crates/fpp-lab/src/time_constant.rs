//! Calibration and evaluation of the time constant.
//!
//! `calibrate` freezes a finite-scale estimate of the linear growth rate
//! per direction: `mu_hat(e) = mean_r T_r(0, n e) / n` over independent
//! replications, on a grid of primitive directions in the fundamental domain
//! of the signed-permutation symmetry group. `mu_hat` extends the grid to all
//! of Z^d exactly homogeneously and symmetrically: a query is canonicalized
//! (absolute values, sorted descending), normalized onto the l1 simplex, and
//! interpolated piecewise-linearly. Because estimates at scale n are biased
//! upward, the model also records the relative drift against scale 2n; the
//! experiment layer refuses an epsilon smaller than four times that drift.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodesics::{grow_to_targets, GeodesicsError};
use crate::lattice::{DistributionSpec, FieldSeed, LatticeError, LatticeWindow, SpecError, WeightField, MAX_DIMENSION};
use crate::numerics::gcd_u64;
use crate::rng::Stream;

pub const MODEL_FILE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error(transparent)]
    Geodesics(#[from] GeodesicsError),
    #[error("grid resolution {resolution} too small for d={d}; need resolution >= d so every simplex corner is calibrated")]
    ResolutionTooSmall { resolution: i64, d: usize },
    #[error("calibration scale n={0} below the minimum of 8")]
    ScaleTooSmall(i64),
    #[error("replication count {0} below the minimum of 16")]
    TooFewReplications(u64),
    #[error("growth escaped the window at half-width {last_half_width} after {retries} retries (direction scale {scale})")]
    EscapePersists { last_half_width: i64, retries: u32, scale: i64 },
    #[error("calibrated mu_hat({direction:?}) = {value} is not positive")]
    NonPositiveMu { direction: Vec<i64>, value: f64 },
    #[error("mu_hat({direction:?}) = {value} below the known weight infimum bound {bound}")]
    BelowInfimumBound { direction: Vec<i64>, value: f64, bound: f64 },
    #[error("model file version {got}, expected {expected}")]
    VersionMismatch { got: u32, expected: u32 },
    #[error("model file io: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file parse: {0}")]
    Json(#[from] serde_json::Error),
}

/// Window sizing policy for growth that must reach fixed targets.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
pub struct WindowPolicy {
    /// Starting half-width; `None` lets the caller's context choose.
    pub initial_half_width: Option<i64>,
    pub growth_factor: f64,
    pub max_retries: u32,
}

impl Default for WindowPolicy {
    fn default() -> Self {
        WindowPolicy { initial_half_width: None, growth_factor: 1.5, max_retries: 2 }
    }
}

impl WindowPolicy {
    pub fn widths_from(&self, initial: i64) -> Vec<i64> {
        let mut l = self.initial_half_width.unwrap_or(initial).max(1);
        let mut out = vec![l];
        for _ in 0..self.max_retries {
            l = ((l as f64) * self.growth_factor).ceil() as i64;
            out.push(l);
        }
        out
    }
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct CalibrationParams {
    pub resolution: i64,
    pub scale_n: i64,
    pub replications: u64,
    pub seed: u64,
    #[serde(default)]
    pub window: WindowPolicy,
}

/// One calibrated grid direction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DirectionEstimate {
    pub direction: Vec<i64>,
    pub mu: f64,
    pub standard_error: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    version: u32,
    dimension: usize,
    spec_fingerprint: String,
    spec: DistributionSpec,
    resolution: i64,
    scale_n: i64,
    replications: u64,
    seed: u64,
    directions: Vec<DirectionEstimate>,
    relative_drift: f64,
}

/// Frozen direction model: immutable, shareable, exactly homogeneous and
/// symmetric by construction.
#[derive(Clone, Debug)]
pub struct DirectionModel {
    dimension: usize,
    spec: DistributionSpec,
    fingerprint: String,
    resolution: i64,
    scale_n: i64,
    replications: u64,
    seed: u64,
    directions: Vec<DirectionEstimate>,
    relative_drift: f64,
    /// d=2: knots (u1, nu) sorted by u1 covering [1/2, 1].
    knots_2d: Vec<(f64, f64)>,
    /// d>=3: nu at the simplex corners (1,0,..), (1,1,0,..), ..., (1,..,1).
    corner_nu: Vec<f64>,
    /// Minimum per-unit-l1 rate over all calibrated directions.
    nu_min: f64,
}

/// Primitive directions in the fundamental domain: `e_1 >= ... >= e_d >= 0`,
/// not all zero, `gcd = 1`, `|e|_1 <= resolution`. Sorted by (l1, lex).
pub fn fundamental_directions(d: usize, resolution: i64) -> Vec<Vec<i64>> {
    fn rec(out: &mut Vec<Vec<i64>>, cur: &mut Vec<i64>, d: usize, budget: i64, max_next: i64) {
        if cur.len() == d {
            let g = cur.iter().fold(0u64, |acc, &v| gcd_u64(acc, v.unsigned_abs()));
            if g == 1 {
                out.push(cur.clone());
            }
            return;
        }
        for v in (0..=max_next.min(budget)).rev() {
            cur.push(v);
            rec(out, cur, d, budget - v, v);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(&mut out, &mut Vec::new(), d, resolution, resolution);
    out.sort_by_key(|e| (e.iter().sum::<i64>(), e.clone()));
    out
}

fn canonicalize(coords: &[i64], buf: &mut [i64; MAX_DIMENSION]) -> usize {
    let d = coords.len();
    for (i, &c) in coords.iter().enumerate() {
        buf[i] = c.abs();
    }
    buf[..d].sort_unstable_by(|a, b| b.cmp(a));
    d
}

impl DirectionModel {
    fn build(
        dimension: usize,
        spec: DistributionSpec,
        resolution: i64,
        scale_n: i64,
        replications: u64,
        seed: u64,
        directions: Vec<DirectionEstimate>,
        relative_drift: f64,
    ) -> Result<Self, CalibrationError> {
        for est in &directions {
            if !(est.mu > 0.0) {
                return Err(CalibrationError::NonPositiveMu {
                    direction: est.direction.clone(),
                    value: est.mu,
                });
            }
        }
        let nu_of = |e: &DirectionEstimate| {
            let l1: i64 = e.direction.iter().map(|v| v.abs()).sum();
            e.mu / l1 as f64
        };
        let nu_min = directions.iter().map(nu_of).fold(f64::INFINITY, f64::min);

        let mut knots_2d = Vec::new();
        let mut corner_nu = Vec::new();
        if dimension == 2 {
            for est in &directions {
                let l1 = (est.direction[0] + est.direction[1]) as f64;
                knots_2d.push((est.direction[0] as f64 / l1, nu_of(est)));
            }
            knots_2d.sort_by(|a, b| a.0.total_cmp(&b.0));
            let covers = knots_2d.first().map(|k| k.0 == 0.5).unwrap_or(false)
                && knots_2d.last().map(|k| k.0 == 1.0).unwrap_or(false);
            if !covers {
                return Err(CalibrationError::ResolutionTooSmall { resolution, d: dimension });
            }
        } else {
            for k in 1..=dimension {
                let corner: Vec<i64> =
                    (0..dimension).map(|i| if i < k { 1 } else { 0 }).collect();
                let est = directions
                    .iter()
                    .find(|e| e.direction == corner)
                    .ok_or(CalibrationError::ResolutionTooSmall { resolution, d: dimension })?;
                corner_nu.push(est.mu / k as f64);
            }
        }
        let fingerprint = spec.fingerprint(dimension);
        Ok(DirectionModel {
            dimension,
            spec,
            fingerprint,
            resolution,
            scale_n,
            replications,
            seed,
            directions,
            relative_drift,
            knots_2d,
            corner_nu,
            nu_min,
        })
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn spec(&self) -> &DistributionSpec {
        &self.spec
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn scale_n(&self) -> i64 {
        self.scale_n
    }

    pub fn replications(&self) -> u64 {
        self.replications
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn resolution(&self) -> i64 {
        self.resolution
    }

    pub fn directions(&self) -> &[DirectionEstimate] {
        &self.directions
    }

    pub fn relative_drift(&self) -> f64 {
        self.relative_drift
    }

    /// Smallest calibrated growth rate per unit of l1 distance; `mu_hat(z) >=
    /// nu_min * |z|_1` for every z.
    pub fn nu_min(&self) -> f64 {
        self.nu_min
    }

    /// The extension of the calibrated grid to all of Z^d.
    pub fn mu_hat(&self, coords: &[i64]) -> f64 {
        debug_assert_eq!(coords.len(), self.dimension);
        let mut buf = [0i64; MAX_DIMENSION];
        let d = canonicalize(coords, &mut buf);
        let s: i64 = buf[..d].iter().sum();
        if s == 0 {
            return 0.0;
        }
        let s = s as f64;
        let nu = if self.dimension == 2 {
            let u1 = buf[0] as f64 / s;
            let knots = &self.knots_2d;
            // binary search for the segment containing u1 in [1/2, 1]
            let pos = knots.partition_point(|k| k.0 < u1);
            if pos == 0 {
                knots[0].1
            } else if pos == knots.len() {
                knots[knots.len() - 1].1
            } else {
                let (ua, va) = knots[pos - 1];
                let (ub, vb) = knots[pos];
                if ub == ua {
                    va
                } else {
                    va + (vb - va) * ((u1 - ua) / (ub - ua))
                }
            }
        } else {
            // barycentric weights on the corner simplex: the sorted simplex
            // {u_1 >= ... >= u_d >= 0, sum = 1} has corners c_k with k leading
            // coordinates 1/k, and u = sum_k lambda_k c_k with
            // lambda_k = k (u_k - u_{k+1})
            let mut nu = 0.0;
            for k in 1..=d {
                let uk = buf[k - 1] as f64 / s;
                let next = if k < d { buf[k] as f64 / s } else { 0.0 };
                let lambda = k as f64 * (uk - next);
                nu += lambda * self.corner_nu[k - 1];
            }
            nu
        };
        s * nu
    }

    /// All sites with `mu_hat(z) <= t`, enumerated inside the l1 ball of
    /// radius `t / nu_min`.
    pub fn mu_ball_sites(&self, t: f64) -> Vec<Vec<i64>> {
        assert!(t >= 0.0);
        let radius = (t / self.nu_min).floor() as i64;
        let mut out = Vec::new();
        let mut cur = vec![0i64; self.dimension];
        self.enumerate_l1(&mut cur, 0, radius, t, &mut out);
        out
    }

    fn enumerate_l1(&self, cur: &mut Vec<i64>, axis: usize, budget: i64, t: f64, out: &mut Vec<Vec<i64>>) {
        if axis == self.dimension {
            if self.mu_hat(cur) <= t {
                out.push(cur.clone());
            }
            return;
        }
        for v in -budget..=budget {
            cur[axis] = v;
            self.enumerate_l1(cur, axis + 1, budget - v.abs(), t, out);
        }
        cur[axis] = 0;
    }

    pub fn save(&self, path: &Path) -> Result<(), CalibrationError> {
        let file = ModelFile {
            version: MODEL_FILE_VERSION,
            dimension: self.dimension,
            spec_fingerprint: self.fingerprint.clone(),
            spec: self.spec.clone(),
            resolution: self.resolution,
            scale_n: self.scale_n,
            replications: self.replications,
            seed: self.seed,
            directions: self.directions.clone(),
            relative_drift: self.relative_drift,
        };
        let mut f = std::fs::File::create(path)?;
        let body = serde_json::to_string_pretty(&file)?;
        f.write_all(body.as_bytes())?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CalibrationError> {
        let body = std::fs::read_to_string(path)?;
        let file: ModelFile = serde_json::from_str(&body)?;
        if file.version != MODEL_FILE_VERSION {
            return Err(CalibrationError::VersionMismatch {
                got: file.version,
                expected: MODEL_FILE_VERSION,
            });
        }
        DirectionModel::build(
            file.dimension,
            file.spec,
            file.resolution,
            file.scale_n,
            file.replications,
            file.seed,
            file.directions,
            file.relative_drift,
        )
    }
}

/// Default starting half-width for growth that must settle targets at l1
/// radius up to `scale * resolution`.
fn auto_half_width(scale: i64, resolution: i64) -> i64 {
    (1.6 * (scale * resolution) as f64).ceil() as i64 + 2
}

/// Passage times to `n e` for every grid direction, one replication.
/// Escaped windows are regrown larger; the weights extend the same
/// realization, so retries converge to the unconstrained values.
fn measure_replication(
    spec: &DistributionSpec,
    d: usize,
    directions: &[Vec<i64>],
    scale: i64,
    seed: u64,
    stream: Stream,
    replication: u64,
    policy: &WindowPolicy,
) -> Result<Vec<f64>, CalibrationError> {
    let targets: Vec<Vec<i64>> =
        directions.iter().map(|e| e.iter().map(|&v| v * scale).collect()).collect();
    let widths = policy.widths_from(auto_half_width(scale, directions.iter().map(|e| e.iter().sum::<i64>()).max().unwrap_or(1)));
    let mut last = 0i64;
    for &l in &widths {
        last = l;
        let window = LatticeWindow::new(d, l)?;
        let field = WeightField::sample(spec, window, FieldSeed { seed, stream, replication })?;
        let pt = grow_to_targets(&field, &targets)?;
        if !pt.escaped() {
            let mut out = Vec::with_capacity(targets.len());
            for t in &targets {
                out.push(pt.passage_time(t)?.exact().expect("target settled"));
            }
            return Ok(out);
        }
    }
    Err(CalibrationError::EscapePersists {
        last_half_width: last,
        retries: policy.max_retries,
        scale,
    })
}

fn estimate_at_scale(
    spec: &DistributionSpec,
    d: usize,
    directions: &[Vec<i64>],
    scale: i64,
    replications: u64,
    seed: u64,
    stream: Stream,
    policy: &WindowPolicy,
) -> Result<Vec<DirectionEstimate>, CalibrationError> {
    let per_rep: Vec<Result<Vec<f64>, CalibrationError>> = (0..replications)
        .into_par_iter()
        .map(|r| measure_replication(spec, d, directions, scale, seed, stream, r, policy))
        .collect();
    let mut rows = Vec::with_capacity(replications as usize);
    for r in per_rep {
        rows.push(r?);
    }
    let nf = scale as f64;
    let rf = replications as f64;
    let mut out = Vec::with_capacity(directions.len());
    for (j, e) in directions.iter().enumerate() {
        let values: Vec<f64> = rows.iter().map(|row| row[j] / nf).collect();
        let mean = values.iter().sum::<f64>() / rf;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (rf - 1.0).max(1.0);
        out.push(DirectionEstimate {
            direction: e.clone(),
            mu: mean,
            standard_error: (var / rf).sqrt(),
        });
    }
    Ok(out)
}

/// Calibrates a frozen [`DirectionModel`] for `(spec, d)`.
///
/// Runs `replications` independent growths at scale `n`, then repeats at
/// scale `2n` to record the relative drift of the finite-scale estimate
/// (noise-adjusted: only the part of the gap beyond three combined standard
/// errors counts).
pub fn calibrate(
    spec: &DistributionSpec,
    d: usize,
    params: &CalibrationParams,
) -> Result<DirectionModel, CalibrationError> {
    spec.validate(d)?;
    if params.resolution < d as i64 || params.resolution < 2 {
        return Err(CalibrationError::ResolutionTooSmall { resolution: params.resolution, d });
    }
    if params.scale_n < 8 {
        return Err(CalibrationError::ScaleTooSmall(params.scale_n));
    }
    if params.replications < 16 {
        return Err(CalibrationError::TooFewReplications(params.replications));
    }
    let directions = fundamental_directions(d, params.resolution);
    let base = estimate_at_scale(
        spec,
        d,
        &directions,
        params.scale_n,
        params.replications,
        params.seed,
        Stream::Calibration,
        &params.window,
    )?;
    let probe = estimate_at_scale(
        spec,
        d,
        &directions,
        2 * params.scale_n,
        params.replications,
        params.seed,
        Stream::CalibrationDriftProbe,
        &params.window,
    )?;
    let mut drift = 0.0f64;
    for (b, p) in base.iter().zip(&probe) {
        let gap = (b.mu - p.mu).abs();
        let noise = 3.0 * (b.standard_error + p.standard_error);
        if p.mu > 0.0 {
            drift = drift.max((gap - noise).max(0.0) / p.mu);
        }
    }
    // known-infimum sanity: mu_hat(e) >= essinf * |e|_1
    if let Some(essinf) = spec.essential_infimum() {
        for est in &base {
            let l1: i64 = est.direction.iter().sum();
            let bound = essinf * l1 as f64;
            if est.mu < bound * (1.0 - 1e-9) {
                return Err(CalibrationError::BelowInfimumBound {
                    direction: est.direction.clone(),
                    value: est.mu,
                    bound,
                });
            }
        }
    }
    DirectionModel::build(
        d,
        spec.clone(),
        params.resolution,
        params.scale_n,
        params.replications,
        params.seed,
        base,
        drift,
    )
}
