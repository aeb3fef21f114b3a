//! Passage times from the origin by ball growth.
//!
//! Single-source shortest paths over a weight field, settled in nondecreasing
//! key order with ties broken by site index, until the frontier minimum
//! exceeds the horizon. Settled sites carry exact passage times; every other
//! site carries the certificate `T(0,z) > horizon`. If a boundary site
//! settles within the horizon the realization is flagged as escaped: paths
//! through the outside of the window could then matter, and exactness against
//! the infinite lattice is no longer guaranteed.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use thiserror::Error;

use crate::lattice::{LatticeError, LatticeWindow, WeightField};

#[derive(Debug, Error)]
pub enum GeodesicsError {
    #[error(transparent)]
    Lattice(#[from] LatticeError),
    #[error("horizon must be nonnegative, got {0}")]
    NegativeHorizon(f64),
    #[error("target site {0:?} is outside the window")]
    TargetOutsideWindow(Vec<i64>),
}

/// Exact passage time of a settled site, or a certified lower bound for an
/// unsettled one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PassageTime {
    Exact(f64),
    LowerBound(f64),
}

impl PassageTime {
    pub fn is_exact(&self) -> bool {
        matches!(self, PassageTime::Exact(_))
    }

    pub fn exact(&self) -> Option<f64> {
        match *self {
            PassageTime::Exact(t) => Some(t),
            PassageTime::LowerBound(_) => None,
        }
    }
}

/// Passage times from the origin, exact up to the settled horizon.
#[derive(Clone, Debug)]
pub struct PassageTimes {
    window: LatticeWindow,
    /// Exact `T(0, z)` for settled sites, `f64::INFINITY` otherwise.
    times: Vec<f64>,
    horizon: f64,
    escaped: bool,
    settled_count: usize,
}

impl PassageTimes {
    pub fn window(&self) -> &LatticeWindow {
        &self.window
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn escaped(&self) -> bool {
        self.escaped
    }

    pub fn settled_count(&self) -> usize {
        self.settled_count
    }

    #[inline(always)]
    pub fn is_settled(&self, site: usize) -> bool {
        self.times[site].is_finite()
    }

    /// Exact time for a settled site index; callers must check first.
    #[inline(always)]
    pub fn settled_time(&self, site: usize) -> f64 {
        self.times[site]
    }

    pub fn passage_time_by_index(&self, site: usize) -> PassageTime {
        let t = self.times[site];
        if t.is_finite() {
            PassageTime::Exact(t)
        } else {
            PassageTime::LowerBound(self.horizon)
        }
    }

    pub fn passage_time(&self, coords: &[i64]) -> Result<PassageTime, GeodesicsError> {
        let idx = self.window.site_index(coords)?;
        Ok(self.passage_time_by_index(idx))
    }

    pub fn settled_sites(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.times.iter().enumerate().filter_map(|(i, &t)| t.is_finite().then_some((i, t)))
    }
}

#[derive(Clone, Copy, Debug)]
struct FrontierEntry {
    key: f64,
    site: u32,
}

impl PartialEq for FrontierEntry {
    fn eq(&self, other: &Self) -> bool {
        self.key == other.key && self.site == other.site
    }
}

impl Eq for FrontierEntry {}

impl Ord for FrontierEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // reversed: BinaryHeap is a max-heap, we want smallest key first,
        // ties by smallest site index
        other
            .key
            .total_cmp(&self.key)
            .then_with(|| other.site.cmp(&self.site))
    }
}

impl PartialOrd for FrontierEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Grows the ball of settled sites until the frontier minimum exceeds
/// `horizon`. Boundary contact within the horizon only sets the escape flag;
/// growth continues, so the settled set is always `{z : T_window(0,z) <= h}`.
pub fn grow_ball(field: &WeightField, horizon: f64) -> Result<PassageTimes, GeodesicsError> {
    if !(horizon >= 0.0) {
        return Err(GeodesicsError::NegativeHorizon(horizon));
    }
    grow(field, horizon, None)
}

/// Grows until every target index is settled (draining key ties at the final
/// horizon), or until the frontier empties. The resulting horizon is the
/// largest settled key, so the lower-bound certificate stays valid.
pub fn grow_to_targets(
    field: &WeightField,
    targets: &[Vec<i64>],
) -> Result<PassageTimes, GeodesicsError> {
    let window = field.window();
    let mut idx = Vec::with_capacity(targets.len());
    for t in targets {
        idx.push(
            window
                .site_index(t)
                .map_err(|_| GeodesicsError::TargetOutsideWindow(t.clone()))?,
        );
    }
    grow(field, f64::INFINITY, Some(idx))
}

fn grow(
    field: &WeightField,
    horizon: f64,
    targets: Option<Vec<usize>>,
) -> Result<PassageTimes, GeodesicsError> {
    let window = field.window().clone();
    let d = window.dimension();
    let side = window.side();
    let strides: Vec<usize> = window.strides().to_vec();
    let n = window.num_sites();

    let mut times = vec![f64::INFINITY; n];
    let mut tentative = vec![f64::INFINITY; n];
    let mut heap: BinaryHeap<FrontierEntry> = BinaryHeap::new();
    let origin = window.origin_index();
    tentative[origin] = 0.0;
    heap.push(FrontierEntry { key: 0.0, site: origin as u32 });

    let mut pending: Vec<bool> = match &targets {
        Some(list) => {
            let mut v = vec![false; n];
            for &i in list {
                v[i] = true;
            }
            v
        }
        None => Vec::new(),
    };
    let mut remaining = pending.iter().filter(|&&p| p).count();
    // when chasing targets, drain ties at the last settled key before stopping
    let mut stop_after_key = f64::NAN;

    let mut escaped = false;
    let mut settled_count = 0usize;
    let mut last_settled = 0.0f64;

    while let Some(FrontierEntry { key, site }) = heap.pop() {
        let site = site as usize;
        if times[site].is_finite() {
            continue; // lazily deleted duplicate
        }
        if targets.is_none() && key > horizon {
            break;
        }
        if !stop_after_key.is_nan() && key > stop_after_key {
            break;
        }
        times[site] = key;
        settled_count += 1;
        last_settled = key;
        if window.is_boundary(site) {
            escaped = true;
        }
        if remaining > 0 && pending[site] {
            pending[site] = false;
            remaining -= 1;
            if remaining == 0 {
                stop_after_key = key;
            }
        }
        for axis in 0..d {
            let dg = window.digit(site, axis);
            if dg + 1 < side {
                let nb = site + strides[axis];
                if !times[nb].is_finite() {
                    let cand = key + field.weight(site, axis);
                    if cand < tentative[nb] {
                        tentative[nb] = cand;
                        heap.push(FrontierEntry { key: cand, site: nb as u32 });
                    }
                }
            }
            if dg > 0 {
                let nb = site - strides[axis];
                if !times[nb].is_finite() {
                    let cand = key + field.weight(nb, axis);
                    if cand < tentative[nb] {
                        tentative[nb] = cand;
                        heap.push(FrontierEntry { key: cand, site: nb as u32 });
                    }
                }
            }
        }
    }

    let horizon = if targets.is_some() { last_settled } else { horizon };
    Ok(PassageTimes { window, times, horizon, escaped, settled_count })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{DistributionSpec, FieldSeed, LatticeWindow, WeightField};
    use crate::rng::Stream;

    fn sample(spec: &DistributionSpec, d: usize, l: i64, seed: u64) -> WeightField {
        let w = LatticeWindow::new(d, l).unwrap();
        WeightField::sample(spec, w, FieldSeed { seed, stream: Stream::Diagnostics, replication: 0 })
            .unwrap()
    }

    /// Full relaxation to a fixed point; independent of the heap-based path.
    fn bellman_ford(field: &WeightField) -> Vec<f64> {
        let w = field.window();
        let d = w.dimension();
        let side = w.side();
        let mut dist = vec![f64::INFINITY; w.num_sites()];
        dist[w.origin_index()] = 0.0;
        loop {
            let mut changed = false;
            for site in 0..w.num_sites() {
                if !dist[site].is_finite() {
                    continue;
                }
                for axis in 0..d {
                    if w.digit(site, axis) + 1 < side {
                        let nb = site + w.strides()[axis];
                        let c = dist[site] + field.weight(site, axis);
                        if c < dist[nb] {
                            dist[nb] = c;
                            changed = true;
                        }
                        let back = dist[nb] + field.weight(site, axis);
                        if back < dist[site] {
                            dist[site] = back;
                            changed = true;
                        }
                    }
                }
            }
            if !changed {
                return dist;
            }
        }
    }

    #[test]
    fn unit_weights_give_l1_metric() {
        let f = sample(&DistributionSpec::deterministic(1.0), 2, 5, 0);
        let pt = grow_ball(&f, 3.0).unwrap();
        let w = pt.window();
        for site in 0..w.num_sites() {
            let c = w.site_coords(site);
            let l1: i64 = c.iter().map(|v| v.abs()).sum();
            if l1 <= 3 {
                assert_eq!(pt.settled_time(site), l1 as f64);
            } else {
                assert!(!pt.is_settled(site));
            }
        }
        assert_eq!(pt.settled_count(), 25); // |{z : |z|_1 <= 3}| in d=2
        assert!(!pt.escaped());
    }

    #[test]
    fn zero_horizon_settles_origin_only() {
        let f = sample(&DistributionSpec::exponential(1.0), 2, 3, 4);
        let pt = grow_ball(&f, 0.0).unwrap();
        assert_eq!(pt.settled_count(), 1);
        assert_eq!(pt.passage_time(&[0, 0]).unwrap(), PassageTime::Exact(0.0));
        assert_eq!(pt.passage_time(&[1, 0]).unwrap(), PassageTime::LowerBound(0.0));
    }

    #[test]
    fn scaled_deterministic_passage_times() {
        let f = sample(&DistributionSpec::deterministic(2.0), 2, 4, 0);
        let pt = grow_ball(&f, f64::INFINITY).unwrap();
        assert_eq!(pt.passage_time(&[3, 0]).unwrap(), PassageTime::Exact(6.0));
        assert_eq!(pt.passage_time(&[-1, 2]).unwrap(), PassageTime::Exact(6.0));
    }

    #[test]
    fn matches_brute_force_relaxation_exactly() {
        for (seed, spec) in [
            (1, DistributionSpec::exponential(1.0)),
            (2, DistributionSpec::pareto(1.5)),
            (3, DistributionSpec::pareto(0.5)),
            (4, DistributionSpec::bernoulli_shift(0.3, 0.5, 2.0)),
        ] {
            let f = sample(&spec, 2, 3, seed);
            let pt = grow_ball(&f, f64::INFINITY).unwrap();
            let oracle = bellman_ford(&f);
            for site in 0..f.window().num_sites() {
                assert_eq!(pt.settled_time(site), oracle[site], "seed {seed}, site {site}");
            }
        }
    }

    #[test]
    fn settle_order_is_monotone_and_balls_nest() {
        let f = sample(&DistributionSpec::exponential(1.0), 2, 6, 11);
        let big = grow_ball(&f, 3.0).unwrap();
        let small = grow_ball(&f, 1.5).unwrap();
        for site in 0..f.window().num_sites() {
            if small.is_settled(site) {
                assert!(big.is_settled(site));
                assert_eq!(small.settled_time(site), big.settled_time(site));
                assert!(small.settled_time(site) <= 1.5);
            } else if big.is_settled(site) && big.settled_time(site) <= 1.5 {
                panic!("site {site} within 1.5 missing from the smaller ball");
            }
        }
    }

    #[test]
    fn triangle_slack_nonnegative_over_settled_edges() {
        let f = sample(&DistributionSpec::pareto(1.5), 2, 5, 21);
        let pt = grow_ball(&f, 6.0).unwrap();
        let w = pt.window();
        for (site, t) in pt.settled_sites() {
            for axis in 0..2 {
                if w.digit(site, axis) + 1 < w.side() {
                    let nb = site + w.strides()[axis];
                    if pt.is_settled(nb) {
                        assert!(t <= pt.settled_time(nb) + f.weight(site, axis) + 1e-12);
                        assert!(pt.settled_time(nb) <= t + f.weight(site, axis) + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn deterministic_times_symmetric_under_signed_permutations() {
        let f = sample(&DistributionSpec::deterministic(1.5), 3, 3, 0);
        let pt = grow_ball(&f, f64::INFINITY).unwrap();
        let t = |c: &[i64]| pt.passage_time(c).unwrap().exact().unwrap();
        let base = t(&[2, 1, 0]);
        for perm in [[1i64, 2, 0], [0, 1, 2], [2, 0, 1], [-2, 1, 0], [1, 0, -2]] {
            assert_eq!(t(&perm), base);
        }
    }

    #[test]
    fn escape_flag_set_when_ball_reaches_boundary() {
        let f = sample(&DistributionSpec::deterministic(1.0), 2, 2, 0);
        assert!(!grow_ball(&f, 1.9).unwrap().escaped());
        assert!(grow_ball(&f, 2.0).unwrap().escaped());
    }

    #[test]
    fn targets_growth_certifies_horizon() {
        let f = sample(&DistributionSpec::exponential(1.0), 2, 8, 5);
        let pt = grow_to_targets(&f, &[vec![3, 2], vec![-1, 4]]).unwrap();
        let h = pt.horizon();
        assert!(pt.passage_time(&[3, 2]).unwrap().is_exact());
        assert!(pt.passage_time(&[-1, 4]).unwrap().is_exact());
        // every site at or below the horizon must be settled
        let full = grow_ball(&f, f64::INFINITY).unwrap();
        for site in 0..f.window().num_sites() {
            if full.settled_time(site) <= h {
                assert!(pt.is_settled(site));
                assert_eq!(pt.settled_time(site), full.settled_time(site));
            }
        }
        assert!(grow_to_targets(&f, &[vec![99, 0]]).is_err());
    }
}
