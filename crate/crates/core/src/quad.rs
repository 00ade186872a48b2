//! One-dimensional quadrature: adaptive Simpson with a subdivision cap and
//! divergence detection, plus a trapezoid rule for sampled grids.

use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error)]
pub enum QuadError {
    #[error("integrand returned a non-finite value at {at}")]
    NonFinite { at: f64 },
    #[error("quadrature did not converge (depth cap {depth} reached, last error {err:.3e})")]
    NoConvergence { depth: usize, err: f64 },
    #[error("empty or inverted interval [{a}, {b}]")]
    BadInterval { a: f64, b: f64 },
}

const MAX_DEPTH: usize = 64;

/// Adaptive Simpson integral of `f` over `[a, b]` to absolute tolerance
/// `tol` (scaled by interval fraction during recursion).
pub fn adaptive_simpson<S: Real>(
    f: &dyn Fn(S) -> S,
    a: S,
    b: S,
    tol: S,
) -> Result<S, QuadError> {
    if !(b > a) {
        return Err(QuadError::BadInterval {
            a: a.as_f64(),
            b: b.as_f64(),
        });
    }
    let fa = eval(f, a)?;
    let fb = eval(f, b)?;
    let m = half(a + b);
    let fm = eval(f, m)?;
    let whole = simpson(a, b, fa, fm, fb);
    recurse(f, a, b, fa, fm, fb, whole, tol, MAX_DEPTH)
}

fn eval<S: Real>(f: &dyn Fn(S) -> S, x: S) -> Result<S, QuadError> {
    let v = f(x);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(QuadError::NonFinite { at: x.as_f64() })
    }
}

fn half<S: Real>(x: S) -> S {
    x * S::of(0.5)
}

fn simpson<S: Real>(a: S, b: S, fa: S, fm: S, fb: S) -> S {
    (b - a) / S::of(6.0) * (fa + S::of(4.0) * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn recurse<S: Real>(
    f: &dyn Fn(S) -> S,
    a: S,
    b: S,
    fa: S,
    fm: S,
    fb: S,
    whole: S,
    tol: S,
    depth: usize,
) -> Result<S, QuadError> {
    let m = half(a + b);
    let lm = half(a + m);
    let rm = half(m + b);
    let flm = eval(f, lm)?;
    let frm = eval(f, rm)?;
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let err = (left + right - whole).abs();
    if err <= S::of(15.0) * tol || (b - a).abs() < S::of(1e-14) {
        // Richardson correction for the final estimate.
        return Ok(left + right + (left + right - whole) / S::of(15.0));
    }
    if depth == 0 {
        return Err(QuadError::NoConvergence {
            depth: MAX_DEPTH,
            err: err.as_f64(),
        });
    }
    let ht = half(tol);
    let l = recurse(f, a, m, fa, flm, fm, left, ht, depth - 1)?;
    let r = recurse(f, m, b, fm, frm, fb, right, ht, depth - 1)?;
    Ok(l + r)
}

/// Trapezoid rule over uniformly spaced samples covering `[a, b]`.
pub fn trapezoid_uniform<S: Real>(values: &[S], a: S, b: S) -> S {
    let n = values.len();
    if n < 2 {
        return S::zero();
    }
    let h = (b - a) / S::of((n - 1) as f64);
    let mut sum = half(values[0] + values[n - 1]);
    for &v in &values[1..n - 1] {
        sum += v;
    }
    sum * h
}

/// Crude trapezoid error gauge: compares the full-resolution rule with the
/// half-resolution one; the difference bounds the error to leading order.
pub fn trapezoid_error_estimate<S: Real>(values: &[S], a: S, b: S) -> S {
    let n = values.len();
    if n < 5 {
        return S::zero();
    }
    let full = trapezoid_uniform(values, a, b);
    let coarse: Vec<S> = values.iter().copied().step_by(2).collect();
    // Only valid when the coarse grid still spans [a, b].
    let b_eff = if (n - 1) % 2 == 0 {
        b
    } else {
        a + (b - a) * S::of(((n - 2) as f64) / ((n - 1) as f64))
    };
    let half_res = trapezoid_uniform(&coarse, a, b_eff);
    (full - half_res).abs() / S::of(3.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simpson_integrates_polynomials_exactly() {
        let f = |x: f64| 3.0 * x * x;
        let v = adaptive_simpson(&f, 0.0, 2.0, 1e-12).unwrap();
        assert!((v - 8.0).abs() < 1e-10);
    }

    #[test]
    fn simpson_handles_mild_singularity_scaled_out() {
        // sqrt has unbounded derivative at 0 but is integrable.
        let f = |x: f64| x.sqrt();
        let v = adaptive_simpson(&f, 0.0, 1.0, 1e-10).unwrap();
        assert!((v - 2.0 / 3.0).abs() < 1e-8);
    }

    #[test]
    fn simpson_rejects_divergent_integrand() {
        let f = |x: f64| 1.0 / x;
        assert!(adaptive_simpson(&f, 0.0, 1.0, 1e-8).is_err());
    }

    #[test]
    fn trapezoid_on_linear_is_exact() {
        let vals: Vec<f64> = (0..101).map(|i| i as f64 / 100.0).collect();
        let v = trapezoid_uniform(&vals, 0.0, 1.0);
        assert!((v - 0.5).abs() < 1e-12);
    }
}
