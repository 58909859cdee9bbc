//! Panel-based adaptive quadrature (7-15 Gauss-Kronrod).
//!
//! Integrands here are smooth inside panels but kinked at known breakpoints
//! (switching-manifold crossings and heteroclinic corners), so callers list
//! the breakpoints and each panel is refined independently.

use thiserror::Error;

use crate::scalar::{pairwise_sum, Real};

// 7-15 Gauss-Kronrod nodes/weights on [-1, 1] (QUADPACK dqk15).
const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_5,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_48,
    0.000000000000000000000000000000000,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_224,
    0.063_092_092_629_978_56,
    0.104_790_010_322_250_19,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_42,
    0.204_432_940_075_298_89,
    0.209_482_141_084_727_82,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_64,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

#[derive(Debug, Error, PartialEq)]
pub enum QuadError {
    #[error("requested tolerance {tol} not reached within {panels} panels (error estimate {err})")]
    Budget { tol: f64, err: f64, panels: usize },
    #[error("non-finite integrand value encountered")]
    NonFinite,
    #[error("integration bounds are not finite")]
    BadBounds,
}

#[derive(Debug, Clone, Copy)]
pub struct QuadResult<R> {
    pub value: R,
    pub error_estimate: R,
    /// Number of panels in the final subdivision.
    pub panels: usize,
}

#[derive(Debug, Clone, Copy)]
struct Segment<R> {
    a: R,
    b: R,
    value: R,
    error: R,
}

fn gk15<R: Real, F: Fn(R) -> R>(f: &F, a: R, b: R) -> Result<(R, R), QuadError> {
    let half = R::of(0.5);
    let center = half * (a + b);
    let half_len = half * (b - a);
    let mut kronrod = R::zero();
    let mut gauss = R::zero();
    for (i, (&x, &wk)) in XGK.iter().zip(WGK.iter()).enumerate() {
        let xr = R::of(x) * half_len;
        let (fl, fr) = (f(center - xr), f(center + xr));
        if !fl.is_finite() || !fr.is_finite() {
            return Err(QuadError::NonFinite);
        }
        let pair = if i == 7 { fl } else { fl + fr };
        kronrod += R::of(wk) * pair;
        if i % 2 == 1 {
            gauss += R::of(WG[i / 2]) * pair;
        }
    }
    let value = kronrod * half_len;
    let err = ((kronrod - gauss) * half_len).abs();
    Ok((value, err))
}

/// Integrate `f` over `[a, b]` with panel boundaries at every breakpoint in
/// `(a, b)`, refining the worst panel until the summed error estimate meets
/// `tol` or the panel budget is exhausted.
pub fn integrate_with_breakpoints<R: Real, F: Fn(R) -> R>(
    f: F,
    a: R,
    b: R,
    breakpoints: &[R],
    tol: R,
    max_panels: usize,
) -> Result<QuadResult<R>, QuadError> {
    if !a.is_finite() || !b.is_finite() {
        return Err(QuadError::BadBounds);
    }
    if a == b {
        return Ok(QuadResult {
            value: R::zero(),
            error_estimate: R::zero(),
            panels: 0,
        });
    }
    let (lo, hi, sign) = if a < b {
        (a, b, R::one())
    } else {
        (b, a, -R::one())
    };

    let mut edges: Vec<R> = Vec::with_capacity(breakpoints.len() + 2);
    edges.push(lo);
    let mut pts: Vec<R> = breakpoints
        .iter()
        .copied()
        .filter(|&p| p > lo && p < hi)
        .collect();
    pts.sort_by(|p, q| p.partial_cmp(q).unwrap());
    let min_gap = (hi - lo) * R::of(1e-14);
    for p in pts {
        if p - *edges.last().unwrap() > min_gap {
            edges.push(p);
        }
    }
    edges.push(hi);

    let mut segments: Vec<Segment<R>> = Vec::with_capacity(edges.len().max(16));
    for w in edges.windows(2) {
        let (value, error) = gk15(&f, w[0], w[1])?;
        segments.push(Segment {
            a: w[0],
            b: w[1],
            value,
            error,
        });
    }

    loop {
        let total_err = pairwise_sum(&segments.iter().map(|s| s.error).collect::<Vec<_>>());
        if total_err <= tol {
            break;
        }
        if segments.len() >= max_panels {
            return Err(QuadError::Budget {
                tol: tol.to_f64().unwrap_or(f64::NAN),
                err: total_err.to_f64().unwrap_or(f64::NAN),
                panels: segments.len(),
            });
        }
        // split the panel with the largest error estimate
        let worst = segments
            .iter()
            .enumerate()
            .max_by(|(_, s), (_, t)| s.error.partial_cmp(&t.error).unwrap())
            .map(|(i, _)| i)
            .unwrap();
        let seg = segments[worst];
        let mid = R::of(0.5) * (seg.a + seg.b);
        if mid <= seg.a || mid >= seg.b {
            // interval exhausted at working precision; accept its estimate
            break;
        }
        let (v1, e1) = gk15(&f, seg.a, mid)?;
        let (v2, e2) = gk15(&f, mid, seg.b)?;
        segments[worst] = Segment {
            a: seg.a,
            b: mid,
            value: v1,
            error: e1,
        };
        segments.insert(
            worst + 1,
            Segment {
                a: mid,
                b: seg.b,
                value: v2,
                error: e2,
            },
        );
    }

    // segments stay sorted by construction; pairwise sum for determinism
    let values: Vec<R> = segments.iter().map(|s| s.value).collect();
    let errors: Vec<R> = segments.iter().map(|s| s.error).collect();
    Ok(QuadResult {
        value: sign * pairwise_sum(&values),
        error_estimate: pairwise_sum(&errors),
        panels: segments.len(),
    })
}

/// Convenience wrapper without interior breakpoints.
pub fn integrate<R: Real, F: Fn(R) -> R>(
    f: F,
    a: R,
    b: R,
    tol: R,
    max_panels: usize,
) -> Result<QuadResult<R>, QuadError> {
    integrate_with_breakpoints(f, a, b, &[], tol, max_panels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let r = integrate(|x: f64| x * x * x - 2.0 * x + 1.0, -1.0, 3.0, 1e-12, 64).unwrap();
        // antiderivative x^4/4 - x^2 + x evaluated on [-1, 3]
        assert!((r.value - 16.0).abs() < 1e-12);
    }

    #[test]
    fn oscillatory_integral() {
        let r = integrate(|x: f64| (10.0 * x).cos(), 0.0, 2.0, 1e-12, 512).unwrap();
        assert!((r.value - (20.0f64).sin() / 10.0).abs() < 1e-12);
    }

    #[test]
    fn kinked_integrand_with_breakpoint() {
        let f = |x: f64| x.abs().exp();
        let exact = 2.0 * (1.0f64.exp() - 1.0);
        let r = integrate_with_breakpoints(f, -1.0, 1.0, &[0.0], 1e-13, 128).unwrap();
        assert!((r.value - exact).abs() < 1e-13);
    }

    #[test]
    fn reversed_bounds_flip_sign() {
        let a = integrate(|x: f64| x.sin(), 0.0, 2.0, 1e-12, 64).unwrap();
        let b = integrate(|x: f64| x.sin(), 2.0, 0.0, 1e-12, 64).unwrap();
        assert!((a.value + b.value).abs() < 1e-14);
    }

    #[test]
    fn budget_exhaustion_reports_error() {
        // step discontinuity with no breakpoint hint and a tiny panel budget
        let f = |x: f64| if x > 0.337 { 1.0 } else { 0.0 };
        let err = integrate(f, 0.0, 1.0, 1e-14, 4).unwrap_err();
        assert!(matches!(err, QuadError::Budget { .. }));
    }

    #[test]
    fn empty_interval_is_zero() {
        let r = integrate(|x: f64| x, 2.0, 2.0, 1e-12, 8).unwrap();
        assert_eq!(r.value, 0.0);
        assert_eq!(r.panels, 0);
    }

    #[test]
    fn halving_panels_converges() {
        // refinement self-consistency on a smooth integrand
        let f = |x: f64| (x * x).sin();
        let coarse = integrate_with_breakpoints(f, 0.0, 3.0, &[1.5], 1e-8, 256).unwrap();
        let fine = integrate_with_breakpoints(f, 0.0, 3.0, &[0.75, 1.5, 2.25], 1e-12, 512)
            .unwrap();
        assert!((coarse.value - fine.value).abs() < 1e-7);
    }
}
