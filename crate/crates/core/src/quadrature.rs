//! Adaptive Simpson integration.

use crate::error::{Error, Result};

/// Maximum recursion depth of [`adaptive_simpson`].
pub const MAX_DEPTH: u32 = 60;

/// Bisections always performed before a panel may be accepted, so a
/// feature narrower than the whole interval is not skipped.
pub const MIN_DEPTH: u32 = 4;

/// Integrates `f` over `[a, b]` to absolute tolerance `tol` with recursive
/// Simpson bisection and Richardson correction.
///
/// Fails with [`Error::QuadratureDiverged`] if some panel still misses its
/// share of the tolerance after `max_depth` bisections.
pub fn adaptive_simpson<F>(f: F, a: f64, b: f64, tol: f64, max_depth: u32) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if !(tol > 0.0) {
        return Err(Error::invalid("tol", "tolerance must be positive"));
    }
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a);
    let fb = f(b);
    let m = 0.5 * (a + b);
    let fm = f(m);
    let whole = simpson(a, b, fa, fm, fb);
    let mut diverged = false;
    let value = recurse(&f, a, b, fa, fm, fb, whole, tol, 0, max_depth, &mut diverged);
    if diverged {
        Err(Error::QuadratureDiverged { max_depth })
    } else {
        Ok(value)
    }
}

#[inline]
fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn recurse<F>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    level: u32,
    max_depth: u32,
    diverged: &mut bool,
) -> f64
where
    F: Fn(f64) -> f64,
{
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(a, m, fa, flm, fm);
    let right = simpson(m, b, fm, frm, fb);
    let delta = left + right - whole;
    // Panels narrower than the float grid cannot be refined further; their
    // Simpson estimate is as good as it gets.
    let unresolvable = m <= a || m >= b || lm <= a || rm >= b;
    if (level >= MIN_DEPTH.min(max_depth) && delta.abs() <= 15.0 * tol) || unresolvable {
        return left + right + delta / 15.0;
    }
    if level >= max_depth {
        *diverged = true;
        return left + right + delta / 15.0;
    }
    recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, level + 1, max_depth, diverged)
        + recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, level + 1, max_depth, diverged)
}
