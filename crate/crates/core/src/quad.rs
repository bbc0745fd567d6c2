//! Adaptive Simpson quadrature.

use crate::error::{Error, Result};

const MAX_DEPTH: u32 = 50;

struct Panel {
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

/// Integrates `f` over `[a, b]` to absolute tolerance `tol`.
///
/// Fails if a panel still misses its share of the tolerance at the maximum
/// recursion depth or the integrand returns a non-finite value.
pub fn adaptive_simpson<F>(f: F, a: f64, b: f64, tol: f64) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if a == b {
        return Ok(0.0);
    }
    let eval = |x: f64| -> Result<f64> {
        let v = f(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Integration(format!("integrand is {v} at x = {x}")))
        }
    };
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (eval(a)?, eval(m)?, eval(b)?);
    let root = Panel {
        a,
        b,
        fa,
        fm,
        fb,
        whole: simpson(a, b, fa, fm, fb),
    };
    // Explicit stack so deep refinement near a kink cannot overflow.
    let mut stack = vec![(root, tol, 0u32)];
    let mut total = 0.0;
    while let Some((p, eps, depth)) = stack.pop() {
        let m = 0.5 * (p.a + p.b);
        let (lm, rm) = (0.5 * (p.a + m), 0.5 * (m + p.b));
        let (flm, frm) = (eval(lm)?, eval(rm)?);
        let left = simpson(p.a, m, p.fa, flm, p.fm);
        let right = simpson(m, p.b, p.fm, frm, p.fb);
        let delta = left + right - p.whole;
        if delta.abs() <= 15.0 * eps {
            total += left + right + delta / 15.0;
        } else if depth >= MAX_DEPTH {
            return Err(Error::Integration(format!(
                "no convergence on [{}, {}] at depth {depth}: |delta| = {:e}, tolerance {:e}",
                p.a,
                p.b,
                delta.abs(),
                eps
            )));
        } else {
            stack.push((
                Panel {
                    a: m,
                    b: p.b,
                    fa: p.fm,
                    fm: frm,
                    fb: p.fb,
                    whole: right,
                },
                eps / 2.0,
                depth + 1,
            ));
            stack.push((
                Panel {
                    a: p.a,
                    b: m,
                    fa: p.fa,
                    fm: flm,
                    fb: p.fm,
                    whole: left,
                },
                eps / 2.0,
                depth + 1,
            ));
        }
    }
    Ok(total)
}
