//! Small numerical utilities shared across modules: binomial confidence
//! intervals, least-squares line fits, and double-exponential quadrature.

use thiserror::Error;

/// z for a two-sided 95% normal interval.
pub const Z_95: f64 = 1.959963984540054;

#[derive(Debug, Error)]
pub enum QuadratureError {
    #[error("quadrature did not converge: last two refinements differ by {defect:e} (target {target:e})")]
    NonConvergence { defect: f64, target: f64 },
}

/// Wilson score interval for a binomial proportion.
///
/// Returns `(lo, hi)` at confidence level implied by `z`. For `n = 0` the
/// interval is the vacuous `[0, 1]`.
pub fn wilson_interval(successes: u64, trials: u64, z: f64) -> (f64, f64) {
    if trials == 0 {
        return (0.0, 1.0);
    }
    let n = trials as f64;
    let p = successes as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Ordinary least-squares line fit `y ~ slope * x + intercept`.
#[derive(Clone, Copy, Debug)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

pub fn fit_line(points: &[(f64, f64)]) -> Option<LineFit> {
    let n = points.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / nf;
    let my = points.iter().map(|p| p.1).sum::<f64>() / nf;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return None;
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - my) * (p.1 - my)).sum();
    let ss_res: f64 = points
        .iter()
        .map(|p| {
            let e = p.1 - (slope * p.0 + intercept);
            e * e
        })
        .sum();
    let r_squared = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Some(LineFit { slope, intercept, r_squared, points: n })
}

/// Trapezoid rule on an already sorted grid.
pub fn trapezoid(ts: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(ts.len(), ys.len());
    let mut acc = 0.0;
    for i in 1..ts.len() {
        acc += (ts[i] - ts[i - 1]) * (ys[i] + ys[i - 1]) * 0.5;
    }
    acc
}

/// Double-exponential (tanh-sinh) quadrature of `f` over `(0, 1)`.
///
/// Tolerates integrable endpoint singularities. The integrand receives both
/// `x` and `1 - x` computed without cancellation so either endpoint can be
/// resolved to full precision.
pub fn tanh_sinh_unit<F>(f: F, rel_tol: f64) -> Result<f64, QuadratureError>
where
    F: Fn(f64, f64) -> f64,
{
    const U_MAX: f64 = 3.8;
    let eval = |u: f64| -> f64 {
        let s = std::f64::consts::FRAC_PI_2 * u.sinh();
        // x = (1 + tanh s)/2 = sigmoid(2s), evaluated stably on both sides
        let x = if s >= 0.0 { 1.0 / (1.0 + (-2.0 * s).exp()) } else { (2.0 * s).exp() / (1.0 + (2.0 * s).exp()) };
        let xc = if s >= 0.0 { (-2.0 * s).exp() / (1.0 + (-2.0 * s).exp()) } else { 1.0 / (1.0 + (2.0 * s).exp()) };
        let dxdu = std::f64::consts::FRAC_PI_2 * u.cosh() / (2.0 * s.cosh() * s.cosh());
        if dxdu == 0.0 || !dxdu.is_finite() {
            return 0.0;
        }
        let v = f(x, xc) * dxdu;
        if v.is_finite() {
            v
        } else {
            0.0
        }
    };
    let mut prev = f64::NAN;
    let mut defect = f64::INFINITY;
    for level in 0..=12u32 {
        let h = 1.0 / (1u64 << level) as f64;
        let steps = (U_MAX / h).ceil() as i64;
        let mut sum = 0.0;
        for j in -steps..=steps {
            sum += eval(j as f64 * h);
        }
        let estimate = sum * h;
        if level >= 4 {
            defect = (estimate - prev).abs();
            if defect <= rel_tol * estimate.abs().max(f64::MIN_POSITIVE) {
                return Ok(estimate);
            }
        }
        prev = estimate;
    }
    Err(QuadratureError::NonConvergence { defect, target: rel_tol * prev.abs() })
}

pub fn gcd_u64(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        let t = a % b;
        a = b;
        b = t;
    }
    a
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wilson_basics() {
        let (lo, hi) = wilson_interval(0, 100, Z_95);
        assert_eq!(lo, 0.0);
        assert!(hi > 0.0 && hi < 0.06);
        let (lo, hi) = wilson_interval(100, 100, Z_95);
        assert!(lo > 0.94);
        assert_eq!(hi, 1.0);
        let (lo, hi) = wilson_interval(50, 100, Z_95);
        assert!(lo < 0.5 && 0.5 < hi);
        // interval endpoints are monotone in the success count
        let mut prev = wilson_interval(0, 50, Z_95);
        for k in 1..=50 {
            let cur = wilson_interval(k, 50, Z_95);
            assert!(cur.0 >= prev.0 && cur.1 >= prev.1);
            prev = cur;
        }
    }

    #[test]
    fn line_fit_recovers_exact_line() {
        let pts: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 3.0 * i as f64 - 2.0)).collect();
        let fit = fit_line(&pts).unwrap();
        assert!((fit.slope - 3.0).abs() < 1e-12);
        assert!((fit.intercept + 2.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
    }

    #[test]
    fn trapezoid_linear_exact() {
        let ts = [0.0, 1.0, 3.0];
        let ys = [0.0, 2.0, 6.0];
        assert!((trapezoid(&ts, &ys) - 9.0).abs() < 1e-12);
    }

    #[test]
    fn tanh_sinh_known_integrals() {
        // smooth: int_0^1 x^2 = 1/3
        let v = tanh_sinh_unit(|x, _| x * x, 1e-12).unwrap();
        assert!((v - 1.0 / 3.0).abs() < 1e-10);
        // endpoint singularity: int_0^1 x^{-1/2} = 2
        let v = tanh_sinh_unit(|x, _| 1.0 / x.sqrt(), 1e-12).unwrap();
        assert!((v - 2.0).abs() < 1e-9);
        // singularity at the right endpoint, resolved via the complement argument
        let v = tanh_sinh_unit(|_, xc| 1.0 / xc.sqrt(), 1e-12).unwrap();
        assert!((v - 2.0).abs() < 1e-9);
        // log singularity: int_0^1 ln(1/x) = 1
        let v = tanh_sinh_unit(|x, _| -(x.ln()), 1e-12).unwrap();
        assert!((v - 1.0).abs() < 1e-9);
    }

    #[test]
    fn gcd_values() {
        assert_eq!(gcd_u64(12, 18), 6);
        assert_eq!(gcd_u64(7, 0), 7);
        assert_eq!(gcd_u64(0, 7), 7);
        assert_eq!(gcd_u64(1, 999), 1);
    }
}
