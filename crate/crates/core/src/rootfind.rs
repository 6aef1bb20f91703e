//! Bracketed bisection with geometric bracket expansion.

use crate::error::{Error, Result};

/// Settings for [`expand_and_bisect`] and [`bisect`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BisectionOptions {
    pub expand_factor: f64,
    pub max_expansions: usize,
    /// Stop once `|g(x)| <= residual_tol`.
    pub residual_tol: f64,
    pub max_iter: usize,
}

impl Default for BisectionOptions {
    fn default() -> Self {
        Self {
            expand_factor: 2.0,
            max_expansions: 60,
            residual_tol: 1e-12,
            max_iter: 400,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Root {
    pub x: f64,
    pub residual: f64,
    pub iterations: usize,
}

/// Bisection on `[a, b]`, which must bracket a sign change of `g`.
///
/// Terminates when the residual drops below the tolerance or the interval
/// cannot be split any further in floating point; the point with the smaller
/// residual among the final bracket ends is returned.
pub fn bisect<G>(mut g: G, a: f64, b: f64, opts: &BisectionOptions) -> Result<Root>
where
    G: FnMut(f64) -> Result<f64>,
{
    let (mut lo, mut hi) = (a, b);
    let (mut g_lo, mut g_hi) = (g(lo)?, g(hi)?);
    if !g_lo.is_finite() || !g_hi.is_finite() {
        return Err(Error::NonFinite("bisection endpoint"));
    }
    if g_lo == 0.0 {
        return Ok(Root { x: lo, residual: 0.0, iterations: 0 });
    }
    if g_hi == 0.0 {
        return Ok(Root { x: hi, residual: 0.0, iterations: 0 });
    }
    if g_lo.signum() == g_hi.signum() {
        return Err(Error::BracketNotFound("bisection interval"));
    }
    for it in 1..=opts.max_iter {
        let mid = 0.5 * (lo + hi);
        if mid <= lo.min(hi) || mid >= lo.max(hi) {
            break;
        }
        let g_mid = g(mid)?;
        if !g_mid.is_finite() {
            return Err(Error::NonFinite("bisection midpoint"));
        }
        if g_mid.abs() <= opts.residual_tol {
            return Ok(Root { x: mid, residual: g_mid, iterations: it });
        }
        if g_mid.signum() == g_lo.signum() {
            lo = mid;
            g_lo = g_mid;
        } else {
            hi = mid;
            g_hi = g_mid;
        }
    }
    let best = if g_lo.abs() <= g_hi.abs() { (lo, g_lo) } else { (hi, g_hi) };
    Ok(Root {
        x: best.0,
        residual: best.1,
        iterations: opts.max_iter,
    })
}

/// Finds a root of `g` starting from `anchor` and walking in the direction of
/// `step` (which may be negative), doubling the offset until the sign of `g`
/// differs from `g(anchor)`, then bisecting on the last bracket.
pub fn expand_and_bisect<G>(
    mut g: G,
    anchor: f64,
    step: f64,
    opts: &BisectionOptions,
    what: &'static str,
) -> Result<Root>
where
    G: FnMut(f64) -> Result<f64>,
{
    let g0 = g(anchor)?;
    if !g0.is_finite() {
        return Err(Error::NonFinite(what));
    }
    if g0.abs() <= opts.residual_tol {
        return Ok(Root { x: anchor, residual: g0, iterations: 0 });
    }
    let mut prev = anchor;
    let mut offset = step;
    for _ in 0..=opts.max_expansions {
        let x = anchor + offset;
        let gx = g(x)?;
        if gx.is_finite() && gx.signum() != g0.signum() {
            return bisect(&mut g, prev, x, opts);
        }
        prev = x;
        offset *= opts.expand_factor;
    }
    Err(Error::BracketNotFound(what))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_sqrt_two() {
        let r = bisect(|x| Ok(x * x - 2.0), 0.0, 2.0, &BisectionOptions::default()).unwrap();
        assert!((r.x - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn expands_towards_negative_root() {
        let r = expand_and_bisect(|x| Ok(x + 1000.5), 0.0, -1.0, &BisectionOptions::default(), "test")
            .unwrap();
        assert!((r.x + 1000.5).abs() < 1e-9);
    }

    #[test]
    fn reports_missing_bracket() {
        let err = expand_and_bisect(|x| Ok(1.0 + x * x), 0.0, 1.0, &BisectionOptions::default(), "never")
            .unwrap_err();
        assert_eq!(err, Error::BracketNotFound("never"));
        assert!(bisect(|x| Ok(x * x + 1.0), -1.0, 1.0, &BisectionOptions::default()).is_err());
    }

    #[test]
    fn residual_tolerance_respected_on_smooth_maps() {
        let opts = BisectionOptions::default();
        for c in [0.1, 1.0, 7.5, 123.0] {
            let r = expand_and_bisect(|x| Ok(x.powi(3) - c), 0.0, 1.0, &opts, "cube").unwrap();
            assert!(r.residual.abs() <= 1e-12 || (r.x.powi(3) - c).abs() < 1e-10 * c);
        }
    }
}
