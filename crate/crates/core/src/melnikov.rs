//! Melnikov function `M(zeta, theta, v, s)`: the first-order-in-eps signed
//! distance between the perturbed stable and unstable manifolds on the
//! section `x = 0`, evaluated by breakpoint-aware quadrature with
//! exponential-tail truncation, plus location of its simple zeros.
//!
//! The integrand `{X,h}` is evaluated along the unperturbed flows only, so
//! its kinks (heteroclinic corner, switching-manifold crossings of the
//! periodic factor) are known analytically and become quadrature panel
//! boundaries.

use thiserror::Error;

use crate::model::{poisson_bracket_xh, Connection, ExtendedState, Flows, ReferenceCoords};
use crate::parallel::map_indexed;
use crate::quad::{integrate_with_breakpoints, QuadError};
use crate::roots::brent;
use crate::scalar::Real;

/// Quadrature controls shared by all Melnikov-type integrals.
#[derive(Debug, Clone, Copy)]
pub struct QuadSettings<R> {
    pub quad_tol: R,
    /// Truncation window override; `None` sizes it from the tail bound.
    pub t_cut: Option<R>,
    pub max_panels: usize,
}

impl<R: Real> Default for QuadSettings<R> {
    fn default() -> Self {
        Self {
            quad_tol: R::of(1e-10),
            t_cut: None,
            max_panels: 20_000,
        }
    }
}

impl<R: Real> QuadSettings<R> {
    pub fn with_tol(quad_tol: R) -> Self {
        Self {
            quad_tol,
            ..Default::default()
        }
    }
}

#[derive(Debug, Error)]
pub enum MelnikovError {
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error("profile grid is empty or not strictly increasing")]
    BadGrid,
    #[error("no sign change in the sampled profile")]
    NoSignChange,
    #[error("zero refinement did not converge")]
    Refine,
}

/// Truncation window so that the exponential tail bound
/// `(K / lambda) e^{-lambda T}` stays below the quadrature tolerance;
/// floored at 30, capped at 200.
pub fn truncation_window<R: Real, M: Flows<R>>(model: &M, quad_tol: R) -> R {
    let lambda = model
        .decay_rate(crate::model::Branch::Plus)
        .min(model.decay_rate(crate::model::Branch::Minus));
    let k = model.perturbation_dx_bound().max(R::of(1e-6));
    let t = (k / (lambda * quad_tol)).ln() / lambda;
    t.max(R::of(30.0)).min(R::of(200.0))
}

/// Times in `[lo, hi]` where the periodic `(u,v)` factor crosses `u = 0`,
/// given the phase offset `r0` (the flow argument is `r0 + t`).
pub(crate) fn u_crossing_times<R: Real>(alpha: R, alpha_plus: R, r0: R, lo: R, hi: R) -> Vec<R> {
    let mut out = Vec::new();
    for shift in [R::zero(), alpha_plus] {
        // r0 + t = shift (mod alpha)
        let base = (shift - r0).rem_wrap(alpha) + lo - (lo).rem_wrap(alpha);
        let mut t = base - alpha - alpha;
        while t <= hi {
            if t >= lo {
                out.push(t);
            }
            t += alpha;
        }
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out
}

/// Melnikov integral for one `zeta`:
/// `int {X,h}(phi_U(theta*alpha + zeta + t; 0, v), sigma(t), s + zeta + t) dt`
/// truncated at the exponential-tail window.
pub fn melnikov<R: Real, M: Flows<R>>(
    model: &M,
    conn: Connection,
    zeta: R,
    coords: &ReferenceCoords<R>,
    quad: &QuadSettings<R>,
) -> Result<R, MelnikovError> {
    let alpha = model.alpha(coords.v)?;
    let alpha_plus = model.alpha_plus(coords.v)?;
    let t_cut = quad.t_cut.unwrap_or_else(|| truncation_window(model, quad.quad_tol));
    let period = model.forcing_period();
    let r0 = coords.theta * alpha + zeta;
    let s0 = coords.s + zeta;

    let mut breakpoints = u_crossing_times(alpha, alpha_plus, r0, -t_cut, t_cut);
    breakpoints.push(R::zero()); // heteroclinic corner

    let integrand = |t: R| {
        let (u, v) = model.phi_u(r0 + t, coords.v).expect("v validated");
        let (x, y) = model.sigma(conn, t);
        let z = ExtendedState::new(u, v, x, y, (s0 + t).rem_wrap(period));
        poisson_bracket_xh(model, &z)
    };

    let result = integrate_with_breakpoints(
        integrand,
        -t_cut,
        t_cut,
        &breakpoints,
        quad.quad_tol,
        quad.max_panels,
    )?;
    Ok(result.value)
}

/// Sampled Melnikov function over a `zeta` grid with quadrature metadata.
#[derive(Debug, Clone)]
pub struct MelnikovProfile<R> {
    pub coords: ReferenceCoords<R>,
    pub connection: Connection,
    pub zetas: Vec<R>,
    pub values: Vec<R>,
    pub t_cut: R,
    pub quad_tol: R,
    /// Number of analytic kinks inserted per evaluation.
    pub breakpoint_count: usize,
}

/// Evaluate the profile over `n_points` equally spaced `zeta` values in
/// `[zeta_range.0, zeta_range.1)`; evaluations run on the worker pool.
pub fn melnikov_profile<R: Real, M: Flows<R>>(
    model: &M,
    conn: Connection,
    coords: &ReferenceCoords<R>,
    zeta_range: (R, R),
    n_points: usize,
    quad: &QuadSettings<R>,
    workers: usize,
) -> Result<MelnikovProfile<R>, MelnikovError> {
    if n_points == 0 || zeta_range.1.partial_cmp(&zeta_range.0) != Some(std::cmp::Ordering::Greater) {
        return Err(MelnikovError::BadGrid);
    }
    let span = zeta_range.1 - zeta_range.0;
    let zetas: Vec<R> = (0..n_points)
        .map(|i| zeta_range.0 + span * R::of(i as f64 / n_points as f64))
        .collect();
    let t_cut = quad.t_cut.unwrap_or_else(|| truncation_window(model, quad.quad_tol));
    let quad = QuadSettings {
        t_cut: Some(t_cut),
        ..*quad
    };

    let results = map_indexed(n_points, workers, |i| {
        melnikov(model, conn, zetas[i], coords, &quad)
    });
    let mut values = Vec::with_capacity(n_points);
    for r in results {
        values.push(r?);
    }

    let alpha = model.alpha(coords.v)?;
    let breakpoint_count = (R::of(4.0) * t_cut / alpha)
        .to_f64()
        .map(|x| x.ceil() as usize)
        .unwrap_or(0)
        + 1;
    Ok(MelnikovProfile {
        coords: *coords,
        connection: conn,
        zetas,
        values,
        t_cut,
        quad_tol: quad.quad_tol,
        breakpoint_count,
    })
}

/// A refined simple zero of the Melnikov function.
#[derive(Debug, Clone, Copy)]
pub struct ZeroRecord<R> {
    pub zeta_bar: R,
    /// `dM/dzeta` at the zero by central difference.
    pub slope: R,
    /// Ordinal among the zeros with `zeta > 0` (1-based); `None` for
    /// non-positive locations.
    pub index: Option<usize>,
    pub bracket: (R, R),
}

/// Zeros located in a profile; brackets whose slope fails the simple-zero
/// certificate are counted but not returned.
#[derive(Debug, Clone)]
pub struct ZeroFindResult<R> {
    pub zeros: Vec<ZeroRecord<R>>,
    pub non_simple: usize,
}

/// Fraction of `max |M|` under which a zero slope fails the simple-zero
/// certificate.
pub const SLOPE_MIN_FRACTION: f64 = 1e-6;

/// Bracket every sign change of the sampled profile and refine each with a
/// safeguarded bracketing root-finder to `|M| <= refine_tol * max|M|`.
pub fn find_zeros<R: Real, M: Flows<R>>(
    model: &M,
    profile: &MelnikovProfile<R>,
    refine_tol: R,
) -> Result<ZeroFindResult<R>, MelnikovError> {
    let n = profile.zetas.len();
    if n < 2 {
        return Err(MelnikovError::BadGrid);
    }
    let mut max_abs = R::zero();
    for &v in &profile.values {
        max_abs = max_abs.max(v.abs());
    }
    if max_abs == R::zero() {
        // identically zero profile (no perturbation): no isolated zeros
        return Ok(ZeroFindResult {
            zeros: Vec::new(),
            non_simple: 0,
        });
    }

    let quad = QuadSettings {
        quad_tol: profile.quad_tol,
        t_cut: Some(profile.t_cut),
        max_panels: 20_000,
    };
    let eval =
        |zeta: R| melnikov(model, profile.connection, zeta, &profile.coords, &quad).unwrap_or(R::nan());

    let slope_min = R::of(SLOPE_MIN_FRACTION) * max_abs;
    let f_tol = refine_tol * max_abs;
    let mut zeros = Vec::new();
    let mut non_simple = 0usize;

    for i in 1..n {
        let (za, zb) = (profile.zetas[i - 1], profile.zetas[i]);
        let (fa, fb) = (profile.values[i - 1], profile.values[i]);
        let crossing = fa == R::zero() || (fa > R::zero()) != (fb > R::zero());
        if !crossing {
            continue;
        }
        if fa == R::zero() && fb == R::zero() {
            continue;
        }
        let xtol = (zb - za) * R::of(1e-12);
        let (zeta_bar, f_at) =
            brent(eval, za, zb, fa, fb, xtol, 128).map_err(|_| MelnikovError::Refine)?;
        if f_at.abs() > f_tol && f_at.is_finite() {
            // brent converged in abscissa; re-check function magnitude
            if f_at.abs() > f_tol.max(R::of(1e3) * profile.quad_tol) {
                return Err(MelnikovError::Refine);
            }
        }
        let delta = (zb - za) * R::of(1e-3);
        let slope = (eval(zeta_bar + delta) - eval(zeta_bar - delta)) / (delta + delta);
        if slope.abs() <= slope_min || !slope.is_finite() {
            non_simple += 1;
            continue;
        }
        zeros.push(ZeroRecord {
            zeta_bar,
            slope,
            index: None,
            bracket: (za, zb),
        });
    }

    if zeros.is_empty() && non_simple == 0 {
        return Err(MelnikovError::NoSignChange);
    }

    zeros.sort_by(|a, b| a.zeta_bar.partial_cmp(&b.zeta_bar).unwrap());
    let mut ordinal = 0usize;
    for z in zeros.iter_mut() {
        if z.zeta_bar > R::zero() {
            ordinal += 1;
            z.index = Some(ordinal);
        }
    }
    Ok(ZeroFindResult { zeros, non_simple })
}

/// Closed-form Melnikov function for the uncoupled forced case
/// (`k = 0`, `delta = 1`): `-2 cos(omega (s + zeta)) / (1 + omega^2)`.
/// Derived from `int e^{-|t|} cos(omega(s + zeta + t)) dt`; this is the
/// primary quadrature oracle.
pub fn melnikov_uncoupled_closed_form<R: Real>(omega: R, s: R, zeta: R) -> R {
    let two = R::of(2.0);
    -two * (omega * (s + zeta)).cos() / (R::one() + omega * omega)
}
