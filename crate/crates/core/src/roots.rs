//! Scalar bracketed root finding (Brent's method).

use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, PartialEq)]
pub enum RootError {
    #[error("endpoints do not bracket a sign change")]
    NoBracket,
    #[error("root not located within {0} iterations")]
    MaxIterations(usize),
}

/// Brent's method on `[a, b]` with known endpoint values.
///
/// Returns `(root, f(root))` once the bracket is below `xtol` (plus machine
/// slack proportional to the abscissa).
pub fn brent<R: Real, F: FnMut(R) -> R>(
    mut f: F,
    mut a: R,
    mut b: R,
    mut fa: R,
    mut fb: R,
    xtol: R,
    max_iter: usize,
) -> Result<(R, R), RootError> {
    if fa == R::zero() {
        return Ok((a, fa));
    }
    if fb == R::zero() {
        return Ok((b, fb));
    }
    if (fa > R::zero()) == (fb > R::zero()) {
        return Err(RootError::NoBracket);
    }
    let two = R::of(2.0);
    let half = R::of(0.5);
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;
    for _ in 0..max_iter {
        if (fb > R::zero()) == (fc > R::zero()) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = two * R::epsilon() * b.abs() + half * xtol;
        let xm = half * (c - b);
        if xm.abs() <= tol1 || fb == R::zero() {
            return Ok((b, fb));
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            // inverse quadratic interpolation / secant
            let s = fb / fa;
            let (mut p, mut q) = if a == c {
                (two * xm * s, R::one() - s)
            } else {
                let q0 = fa / fc;
                let r = fb / fc;
                (
                    s * (two * xm * q0 * (q0 - r) - (b - a) * (r - R::one())),
                    (q0 - R::one()) * (r - R::one()) * (s - R::one()),
                )
            };
            if p > R::zero() {
                q = -q;
            }
            p = p.abs();
            let min1 = R::of(3.0) * xm * q - (tol1 * q).abs();
            let min2 = (e * q).abs();
            if two * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol1 {
            d
        } else if xm > R::zero() {
            tol1
        } else {
            -tol1
        };
        fb = f(b);
    }
    Err(RootError::MaxIterations(max_iter))
}
