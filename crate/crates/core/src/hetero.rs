//! Location of the perturbed stable/unstable manifold ordinates on the
//! section `x = 0` by bisection shooting, the measured manifold distance,
//! heteroclinic connections, and the first-order energy-transfer formulas of
//! the scattering map together with their directly measured counterparts.

use thiserror::Error;

use crate::integrator::{
    AveragedTrajectory, Integrator, Section, StepControl, StopSet, Termination,
};
use crate::melnikov::{
    self, truncation_window, u_crossing_times, MelnikovError, QuadSettings, ZeroRecord,
};
use crate::model::{
    poisson_bracket_uh, Connection, ExtendedState, Flows, Model, ReferenceCoords,
};
use crate::parallel::map_indexed;
use crate::quad::integrate_with_breakpoints;
use crate::roots::brent;
use crate::scalar::Real;

/// Shooting and root-finding controls for the manifold machinery.
#[derive(Debug, Clone, Copy)]
pub struct HeteroSettings<R> {
    pub step: StepControl<R>,
    pub quad: QuadSettings<R>,
    /// Final width of the bisection bracket on the ordinate.
    pub bisect_tol: R,
    /// Acceptable `|y_u - y_s|` at a located heteroclinic point.
    pub distance_tol: R,
    /// Interior test points per bisection round, evaluated concurrently.
    pub candidates: usize,
    /// Initial-bracket doublings before giving up.
    pub bracket_expansions: usize,
    /// Classification time budget per shot.
    pub shoot_max_time: R,
    pub workers: usize,
}

impl<R: Real> Default for HeteroSettings<R> {
    fn default() -> Self {
        let step = StepControl {
            record: false,
            ..StepControl::default()
        };
        Self {
            step,
            quad: QuadSettings::default(),
            bisect_tol: R::of(1e-12),
            distance_tol: R::of(1e-10),
            candidates: 8,
            bracket_expansions: 4,
            shoot_max_time: R::of(200.0),
            workers: 4,
        }
    }
}

#[derive(Debug, Error)]
pub enum HeteroError {
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error(transparent)]
    Melnikov(#[from] MelnikovError),
    #[error("initial ordinate bracket invalid after {0} expansions (endpoints classify alike)")]
    BracketInvalid(usize),
    #[error("bisection stalled: classification inconclusive across the bracket")]
    BisectionStalled,
    #[error("manifold distance has no sign change near the Melnikov zero at this eps")]
    NoDistanceSignChange,
    #[error("located connection residual |y_u - y_s| = {residual} exceeds distance_tol")]
    ResidualTooLarge { residual: f64 },
    #[error("trajectory left the integration domain: {0}")]
    Shooting(String),
}

/// Outcome of a single shot from the section `x = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    /// `|x|` grew past the escape threshold.
    Escape,
    /// The trajectory re-crossed `x = 0`.
    ReturnToSection,
    /// Time budget exhausted (start is numerically on the manifold).
    Inconclusive,
}

#[derive(Debug, Clone, Copy)]
pub struct ShootResult<R> {
    pub classification: Classification,
    pub elapsed: R,
    pub terminal: ExtendedState<R>,
}

/// Classify a trajectory started on `x = 0`: forward shots probe the stable
/// side, backward shots the unstable side.
pub fn classify<R: Real, M: Model<R>>(
    model: &M,
    z0: &ExtendedState<R>,
    forward: bool,
    ctrl: &StepControl<R>,
    max_time: R,
) -> ShootResult<R> {
    let mut integ = Integrator::new(model, *ctrl);
    let span = if forward { max_time } else { -max_time };
    let traj = integ.integrate(z0, span, StopSet::section(Section::XZero));
    match traj.termination {
        Termination::EventReached(ev) => ShootResult {
            classification: Classification::ReturnToSection,
            elapsed: ev.time.abs(),
            terminal: ev.state,
        },
        Termination::Escape { time, state } => ShootResult {
            classification: Classification::Escape,
            elapsed: time.abs(),
            terminal: state,
        },
        _ => ShootResult {
            classification: Classification::Inconclusive,
            elapsed: traj.final_time().abs(),
            terminal: traj.final_state(),
        },
    }
}

/// Which invariant manifold ordinate is being located.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ManifoldSide {
    /// Forward-asymptotic: bisect forward shots.
    Stable,
    /// Backward-asymptotic: bisect backward shots.
    Unstable,
}

/// A located manifold ordinate on `x = 0`.
#[derive(Debug, Clone, Copy)]
pub struct Ordinate<R> {
    pub y: R,
    /// Final bracket in `y`, ordered.
    pub bracket: (R, R),
    pub rounds: usize,
    pub classifications: usize,
}

fn section_start<R: Real, M: Flows<R>>(
    model: &M,
    zeta: R,
    coords: &ReferenceCoords<R>,
    y: R,
) -> Result<ExtendedState<R>, HeteroError> {
    let alpha = model.alpha(coords.v)?;
    let (u, v) = model.phi_u(coords.theta * alpha + zeta, coords.v)?;
    let s = (coords.s + zeta).rem_wrap(model.forcing_period());
    Ok(ExtendedState::new(u, v, R::zero(), y, s))
}

/// Default half-width of the initial ordinate bracket: the manifold
/// splitting is first order in eps.
fn default_bracket_halfwidth<R: Real, M: Model<R>>(model: &M, settings: &HeteroSettings<R>) -> R {
    let c = R::of(10.0) * model.perturbation_dx_bound();
    (c * model.eps()).max(R::of(1e3) * settings.bisect_tol)
}

/// Locate the `y` ordinate where the requested manifold meets the line
/// `(phi_U(theta alpha + zeta; 0, v), x = 0, y, s + zeta)` by bisection on
/// shot classifications, several interior candidates per round in parallel.
pub fn locate_manifold_ordinate<R: Real, M: Flows<R>>(
    model: &M,
    conn: Connection,
    zeta: R,
    coords: &ReferenceCoords<R>,
    side: ManifoldSide,
    settings: &HeteroSettings<R>,
) -> Result<Ordinate<R>, HeteroError> {
    locate_ordinate_warm(model, conn, zeta, coords, side, settings, None)
}

fn locate_ordinate_warm<R: Real, M: Flows<R>>(
    model: &M,
    conn: Connection,
    zeta: R,
    coords: &ReferenceCoords<R>,
    side: ManifoldSide,
    settings: &HeteroSettings<R>,
    warm: Option<(R, R)>, // (center, half-width) in the magnitude coordinate
) -> Result<Ordinate<R>, HeteroError> {
    let two = R::of(2.0);
    // magnitude coordinate eta: y = sign * eta; returning below, escaping
    // above the separatrix for either connection
    let sign = match conn {
        Connection::Up => R::one(),
        Connection::Down => -R::one(),
    };
    let eta_h = (two * model.heteroclinic_energy()).sqrt();
    let forward = side == ManifoldSide::Stable;

    let mut classifications = 0usize;
    let shoot = |eta: R, count: &mut usize| -> Result<Classification, HeteroError> {
        *count += 1;
        let z0 = section_start(model, zeta, coords, sign * eta)?;
        Ok(classify(model, &z0, forward, &settings.step, settings.shoot_max_time).classification)
    };

    let (center, mut w) = warm.unwrap_or((eta_h, default_bracket_halfwidth(model, settings)));
    let mut lo = center - w;
    let mut hi = center + w;
    let mut expansions = 0;
    loop {
        let c_lo = shoot(lo, &mut classifications)?;
        let c_hi = shoot(hi, &mut classifications)?;
        if c_lo == Classification::ReturnToSection && c_hi == Classification::Escape {
            break;
        }
        expansions += 1;
        if expansions > settings.bracket_expansions {
            return Err(HeteroError::BracketInvalid(settings.bracket_expansions));
        }
        w *= two;
        lo = center - w;
        hi = center + w;
    }

    let m = settings.candidates.max(1);
    let mut rounds = 0usize;
    while hi - lo > settings.bisect_tol {
        rounds += 1;
        if rounds > 300 {
            return Err(HeteroError::BisectionStalled);
        }
        let width = hi - lo;
        let etas: Vec<R> = (1..=m)
            .map(|i| lo + width * R::of(i as f64 / (m + 1) as f64))
            .collect();
        let classes = map_indexed(m, settings.workers, |i| {
            let z0 = section_start(model, zeta, coords, sign * etas[i]);
            z0.map(|z| {
                classify(model, &z, forward, &settings.step, settings.shoot_max_time)
                    .classification
            })
        });
        classifications += m;
        let mut new_lo = lo;
        let mut new_hi = hi;
        for (eta, class) in etas.iter().zip(classes) {
            match class? {
                Classification::ReturnToSection => new_lo = new_lo.max(*eta),
                Classification::Escape => new_hi = new_hi.min(*eta),
                Classification::Inconclusive => {}
            }
        }
        if new_lo == lo && new_hi == hi {
            // every candidate sits on the manifold within the shot budget
            break;
        }
        lo = new_lo;
        hi = new_hi;
    }

    let eta = R::of(0.5) * (lo + hi);
    let (b_lo, b_hi) = (sign * lo, sign * hi);
    Ok(Ordinate {
        y: sign * eta,
        bracket: (b_lo.min(b_hi), b_lo.max(b_hi)),
        rounds,
        classifications,
    })
}

/// Manifold distance sample at one `zeta`.
#[derive(Debug, Clone, Copy)]
pub struct DistanceSample<R> {
    pub zeta: R,
    pub y_stable: R,
    pub y_unstable: R,
    /// `X(0, y_u) - X(0, y_s) = (y_u^2 - y_s^2)/2`
    pub delta: R,
    pub classifications: usize,
}

/// Measure the real distance between the unstable and stable manifolds on
/// the section `x = 0` with the unperturbed energy `X`.
pub fn real_distance<R: Real, M: Flows<R>>(
    model: &M,
    conn: Connection,
    zeta: R,
    coords: &ReferenceCoords<R>,
    settings: &HeteroSettings<R>,
) -> Result<DistanceSample<R>, HeteroError> {
    distance_warm(model, conn, zeta, coords, settings, None, None)
}

fn distance_warm<R: Real, M: Flows<R>>(
    model: &M,
    conn: Connection,
    zeta: R,
    coords: &ReferenceCoords<R>,
    settings: &HeteroSettings<R>,
    warm_s: Option<(R, R)>,
    warm_u: Option<(R, R)>,
) -> Result<DistanceSample<R>, HeteroError> {
    let stable = locate_ordinate_warm(
        model,
        conn,
        zeta,
        coords,
        ManifoldSide::Stable,
        settings,
        warm_s,
    )?;
    let unstable = locate_ordinate_warm(
        model,
        conn,
        zeta,
        coords,
        ManifoldSide::Unstable,
        settings,
        warm_u,
    )?;
    let half = R::of(0.5);
    Ok(DistanceSample {
        zeta,
        y_stable: stable.y,
        y_unstable: unstable.y,
        delta: half * (unstable.y * unstable.y - stable.y * stable.y),
        classifications: stable.classifications + unstable.classifications,
    })
}

/// Convergence diagnostics accumulated while locating a connection.
#[derive(Debug, Clone, Copy)]
pub struct ConnectionDiagnostics<R> {
    pub distance_evaluations: usize,
    pub classifications: usize,
    /// `|y_u - y_s|` at the accepted `zeta*`.
    pub ordinate_residual: R,
}

/// A located transversal heteroclinic connection and its first-order
/// scattering data.
#[derive(Debug, Clone)]
pub struct HeteroclinicConnection<R> {
    pub coords: ReferenceCoords<R>,
    pub connection: Connection,
    /// Ordinal of the seeding Melnikov zero among positive zeros.
    pub zero_index: Option<usize>,
    pub zeta_bar: R,
    pub zeta_star: R,
    pub y_stable: R,
    pub y_unstable: R,
    /// Intersection point on the section `x = 0`.
    pub z_star_section: ExtendedState<R>,
    /// The section point pulled back by `zeta*` along the perturbed flow.
    pub z_star: ExtendedState<R>,
    /// First-order coefficient of the energy jump `U(z+) - U(z-)`.
    pub delta_u_first_order: R,
    /// First-order coefficient of the asymptotic average-energy difference.
    pub avg_diff_first_order: R,
    /// Manifold distance at `zeta*` (residual, should be ~0).
    pub measured_delta: R,
    pub diagnostics: ConnectionDiagnostics<R>,
}

/// Root-find the measured distance near a certified simple Melnikov zero and
/// assemble the connection record.
pub fn find_heteroclinic<R: Real, M: Flows<R>>(
    model: &M,
    conn: Connection,
    zero: &ZeroRecord<R>,
    coords: &ReferenceCoords<R>,
    settings: &HeteroSettings<R>,
) -> Result<HeteroclinicConnection<R>, HeteroError> {
    let eps = model.eps();
    let zbar = zero.zeta_bar;
    let two = R::of(2.0);

    let mut evals = 0usize;
    let mut classifications = 0usize;
    let mut last: Option<DistanceSample<R>> = None;
    let eval = |zeta: R,
                    last: &mut Option<DistanceSample<R>>,
                    evals: &mut usize,
                    classifications: &mut usize|
     -> Result<DistanceSample<R>, HeteroError> {
        *evals += 1;
        let (warm_s, warm_u) = match last {
            Some(prev) => {
                let drift = (zeta - prev.zeta).abs() * eps * two + R::of(64.0) * settings.bisect_tol;
                let w = (prev.y_unstable - prev.y_stable).abs() * two + drift;
                (
                    Some((prev.y_stable.abs(), w)),
                    Some((prev.y_unstable.abs(), w)),
                )
            }
            None => (None, None),
        };
        let sample = match distance_warm(model, conn, zeta, coords, settings, warm_s, warm_u) {
            Ok(s) => s,
            // warm bracket missed: retry cold
            Err(HeteroError::BracketInvalid(_)) if last.is_some() => {
                distance_warm(model, conn, zeta, coords, settings, None, None)?
            }
            Err(e) => return Err(e),
        };
        *classifications += sample.classifications;
        *last = Some(sample);
        Ok(sample)
    };

    // bracket the distance zero in an eps-neighbourhood of the Melnikov zero
    let noise_floor = R::of(8.0) * settings.bisect_tol;
    let mut w = (R::of(5.0) * eps).max(R::of(1e-4));
    let mut degenerate = false;
    let (mut lo, mut hi, mut f_lo, mut f_hi);
    let mut expansions = 0usize;
    loop {
        lo = zbar - w;
        hi = zbar + w;
        f_lo = eval(lo, &mut last, &mut evals, &mut classifications)?.delta;
        f_hi = eval(hi, &mut last, &mut evals, &mut classifications)?.delta;
        if f_lo.abs().max(f_hi.abs()) <= noise_floor {
            // the whole neighbourhood is a root within the measurement
            // resolution (eps = 0 limit): take the seed itself
            degenerate = true;
            break;
        }
        if f_lo == R::zero() || f_hi == R::zero() || (f_lo > R::zero()) != (f_hi > R::zero()) {
            break;
        }
        expansions += 1;
        if expansions > settings.bracket_expansions {
            return Err(HeteroError::NoDistanceSignChange);
        }
        w *= two;
    }

    let zeta_star = if degenerate {
        zbar
    } else {
        let mut err: Option<HeteroError> = None;
        let f = |zeta: R| match eval(zeta, &mut last, &mut evals, &mut classifications) {
            Ok(s) => s.delta,
            Err(e) => {
                err = Some(e);
                R::nan()
            }
        };
        let xtol = R::of(1e-13) * (R::one() + zbar.abs());
        let (zeta_star, _) = brent(f, lo, hi, f_lo, f_hi, xtol, 200)
            .map_err(|e| HeteroError::Shooting(format!("distance root refinement failed: {e}")))?;
        if let Some(e) = err {
            return Err(e);
        }
        zeta_star
    };

    let final_sample = eval(zeta_star, &mut last, &mut evals, &mut classifications)?;
    let residual = (final_sample.y_unstable - final_sample.y_stable).abs();
    if residual > settings.distance_tol {
        return Err(HeteroError::ResidualTooLarge {
            residual: residual.to_f64().unwrap_or(f64::NAN),
        });
    }

    let y_star = R::of(0.5) * (final_sample.y_stable + final_sample.y_unstable);
    let z_star_section = section_start(model, zeta_star, coords, y_star)?;
    // pull the section point back by zeta* along the perturbed flow
    let z_star = if zeta_star == R::zero() {
        z_star_section
    } else {
        let mut integ = Integrator::new(model, settings.step);
        let traj = integ.integrate(&z_star_section, -zeta_star, StopSet::none());
        match traj.termination {
            Termination::TimeReached => traj.final_state(),
            other => {
                return Err(HeteroError::Shooting(format!(
                    "pull-back by zeta* terminated early: {other:?}"
                )))
            }
        }
    };

    let delta_u = delta_u_first_order(model, conn, zbar, coords, &settings.quad)?;
    let avg = average_diff_first_order(
        model,
        conn,
        zbar,
        coords,
        R::of(400.0),
        &settings.quad,
    )?;

    Ok(HeteroclinicConnection {
        coords: *coords,
        connection: conn,
        zero_index: zero.index,
        zeta_bar: zbar,
        zeta_star,
        y_stable: final_sample.y_stable,
        y_unstable: final_sample.y_unstable,
        z_star_section,
        z_star,
        delta_u_first_order: delta_u,
        avg_diff_first_order: avg.limit,
        measured_delta: final_sample.delta,
        diagnostics: ConnectionDiagnostics {
            distance_evaluations: evals,
            classifications,
            ordinate_residual: residual,
        },
    })
}

fn uh_bracket<R: Real, M: Flows<R>>(
    model: &M,
    coords: &ReferenceCoords<R>,
    t: R,
    xy: (R, R),
    alpha: R,
) -> R {
    let (u, v) = model
        .phi_u(coords.theta * alpha + t, coords.v)
        .expect("coords validated");
    let s = (coords.s + t).rem_wrap(model.forcing_period());
    let z = ExtendedState::new(u, v, xy.0, xy.1, s);
    poisson_bracket_uh(model, &z)
}

/// First-order coefficient of the scattering-map energy jump: the two
/// semi-infinite integrals of `{U,h}` along the heteroclinic minus its
/// saddle asymptote. The integrand decays exponentially on both sides.
pub fn delta_u_first_order<R: Real, M: Flows<R>>(
    model: &M,
    conn: Connection,
    zeta_bar: R,
    coords: &ReferenceCoords<R>,
    quad: &QuadSettings<R>,
) -> Result<R, MelnikovError> {
    let alpha = model.alpha(coords.v)?;
    let alpha_plus = model.alpha_plus(coords.v)?;
    let t_cut = quad
        .t_cut
        .unwrap_or_else(|| truncation_window(model, quad.quad_tol))
        + zeta_bar.abs();
    let q = model.saddle_abscissa();

    let mut total = R::zero();
    for (a, b, saddle) in [
        (-t_cut, R::zero(), conn.backward_saddle()),
        (R::zero(), t_cut, conn.forward_saddle()),
    ] {
        let saddle_xy = (saddle.sign::<R>() * q, R::zero());
        let integrand = |t: R| {
            let sigma_xy = model.sigma(conn, t - zeta_bar);
            uh_bracket(model, coords, t, sigma_xy, alpha)
                - uh_bracket(model, coords, t, saddle_xy, alpha)
        };
        let mut breaks = u_crossing_times(alpha, alpha_plus, coords.theta * alpha, a, b);
        if zeta_bar > a && zeta_bar < b {
            breaks.push(zeta_bar);
        }
        let r = integrate_with_breakpoints(integrand, a, b, &breaks, quad.quad_tol, quad.max_panels)?;
        total += r.value;
    }
    Ok(total)
}

/// First-order average-energy difference between the asymptotic orbits.
#[derive(Debug, Clone)]
pub struct AverageDiffFirstOrder<R> {
    /// The `T -> inf` limit: the absolutely convergent heteroclinic part
    /// (the saddle asymptote is quasi-periodic with zero mean, so its
    /// Cesaro contribution vanishes off resonance).
    pub limit: R,
    /// `(T, A(T))` samples of the truncated double average.
    pub a_grid: Vec<(R, R)>,
    pub tail_mean: R,
    pub tail_spread: R,
}

/// Evaluate the double average
/// `A(T) = (1/T) int_0^T int_{-t}^{t} {U,h}(...) dr dt`
/// on an increasing grid up to `t_max` (via the equivalent triangular-window
/// weighting) together with its limit.
pub fn average_diff_first_order<R: Real, M: Flows<R>>(
    model: &M,
    conn: Connection,
    zeta_bar: R,
    coords: &ReferenceCoords<R>,
    t_max: R,
    quad: &QuadSettings<R>,
) -> Result<AverageDiffFirstOrder<R>, MelnikovError> {
    let alpha = model.alpha(coords.v)?;
    let alpha_plus = model.alpha_plus(coords.v)?;
    let limit = delta_u_first_order(model, conn, zeta_bar, coords, quad)?;

    let g = |r: R| {
        let sigma_xy = model.sigma(conn, r - zeta_bar);
        uh_bracket(model, coords, r, sigma_xy, alpha)
    };

    // A(T) = int_{-T}^{T} (1 - |r|/T) g(r) dr, accumulated incrementally:
    // s1 = int g, s2 = int |r| g over the symmetric window.
    let dt = R::of(0.25);
    let n = (t_max / dt)
        .to_f64()
        .map(|x| x.ceil() as usize)
        .unwrap_or(1)
        .max(1);
    let mut s1 = R::zero();
    let mut s2 = R::zero();
    let mut a_grid = Vec::with_capacity(n);
    let inc_tol = quad.quad_tol;
    for j in 1..=n {
        let hi = t_max * R::of(j as f64 / n as f64);
        let lo = t_max * R::of((j - 1) as f64 / n as f64);
        for (aa, bb) in [(lo, hi), (-hi, -lo)] {
            let mut breaks = u_crossing_times(alpha, alpha_plus, coords.theta * alpha, aa, bb);
            if zeta_bar > aa && zeta_bar < bb {
                breaks.push(zeta_bar);
            }
            let r1 = integrate_with_breakpoints(g, aa, bb, &breaks, inc_tol, quad.max_panels)?;
            let r2 = integrate_with_breakpoints(
                |r: R| r.abs() * g(r),
                aa,
                bb,
                &breaks,
                inc_tol,
                quad.max_panels,
            )?;
            s1 += r1.value;
            s2 += r2.value;
        }
        a_grid.push((hi, s1 - s2 / hi));
    }

    let keep = (n / 5).max(1);
    let tail = &a_grid[n - keep..];
    let mut sum = R::zero();
    let mut lo_v = R::infinity();
    let mut hi_v = R::neg_infinity();
    for &(_, a) in tail {
        sum += a;
        lo_v = lo_v.min(a);
        hi_v = hi_v.max(a);
    }
    Ok(AverageDiffFirstOrder {
        limit,
        a_grid,
        tail_mean: sum / R::of(keep as f64),
        tail_spread: hi_v - lo_v,
    })
}

/// Measured asymptotic average-energy difference along a located connection.
#[derive(Debug, Clone)]
pub struct MeasuredAverageDiff<R> {
    /// Difference of the forward and backward running averages at the
    /// matched horizon actually reached on both sides.
    pub diff_at_horizon: R,
    /// Difference of the trailing-window means.
    pub diff_tail: R,
    /// Matched horizon (min of the two sides, capped by escape).
    pub horizon: R,
    pub forward_escape: Option<R>,
    pub backward_escape: Option<R>,
    pub forward: AveragedTrajectory<R>,
    pub backward: AveragedTrajectory<R>,
}

fn average_at<R: Real>(avg: &AveragedTrajectory<R>, t_abs: R) -> R {
    // interpolate the integral w = avg * t linearly between samples
    let samples = &avg.samples;
    let mut prev = samples[0];
    for &(t, a) in samples.iter().skip(1) {
        if t.abs() >= t_abs {
            let (t0, a0) = prev;
            let w0 = a0 * t0;
            let w1 = a * t;
            let frac = if t == t0 { R::one() } else { (t_abs - t0.abs()) / (t.abs() - t0.abs()) };
            let w = w0 + (w1 - w0) * frac;
            let tt = t0 + (t - t0) * frac;
            return if tt == R::zero() { a0 } else { w / tt };
        }
        prev = (t, a);
    }
    samples.last().map(|&(_, a)| a).unwrap_or(R::zero())
}

/// Run the running-average integrals forward and backward from `z*` until
/// escape or the horizon and compare their limiting values.
pub fn measured_average_diff<R: Real, M: Model<R>>(
    model: &M,
    z_star: &ExtendedState<R>,
    horizon: R,
    ctrl: &StepControl<R>,
    window_fraction: R,
) -> MeasuredAverageDiff<R> {
    let mut record_ctrl = *ctrl;
    record_ctrl.record = true;
    let mut integ = Integrator::new(model, record_ctrl);
    let forward = integ.averaged(z_star, horizon, StopSet::none());
    let backward = integ.averaged(z_star, -horizon, StopSet::none());

    let escape_time = |traj: &crate::integrator::Trajectory<R>| match traj.termination {
        Termination::Escape { time, .. } => Some(time.abs()),
        _ => None,
    };
    let forward_escape = escape_time(&forward.trajectory);
    let backward_escape = escape_time(&backward.trajectory);

    let t_f = forward.trajectory.final_time().abs();
    let t_b = backward.trajectory.final_time().abs();
    let matched = t_f.min(t_b);

    let diff_at_horizon = average_at(&forward, matched) - average_at(&backward, matched);
    let (f_mean, _) = forward.tail_window(window_fraction);
    let (b_mean, _) = backward.tail_window(window_fraction);

    MeasuredAverageDiff {
        diff_at_horizon,
        diff_tail: f_mean - b_mean,
        horizon: matched,
        forward_escape,
        backward_escape,
        forward,
        backward,
    }
}

/// Per-cell outcome of a `(theta, v)` scan.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScanStatus {
    Ok,
    NoZero,
    ProfileFailed,
    AvgFailed,
    ConnectionFailed,
}

impl ScanStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            ScanStatus::Ok => "ok",
            ScanStatus::NoZero => "no-zero",
            ScanStatus::ProfileFailed => "profile-failed",
            ScanStatus::AvgFailed => "avg-failed",
            ScanStatus::ConnectionFailed => "connection-failed",
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ScanCell<R> {
    pub theta: R,
    pub v: R,
    pub zero_index: usize,
    pub zeta_bar: Option<R>,
    pub zeta_star: Option<R>,
    pub avg_diff_first_order: Option<R>,
    pub status: ScanStatus,
    pub relabel: bool,
}

#[derive(Debug, Clone)]
pub struct ScanResult<R> {
    pub thetas: Vec<R>,
    pub vs: Vec<R>,
    /// Row-major over `thetas` with `vs` contiguous.
    pub cells: Vec<ScanCell<R>>,
}

#[derive(Debug, Clone, Copy)]
pub struct ScanParams<R> {
    pub zero_index: usize,
    /// Points per profile.
    pub profile_points: usize,
    /// Zeta span per cell; `None` sizes it from the forcing period, the
    /// orbit period and the requested ordinal.
    pub zeta_span: Option<R>,
    /// Horizon of the averaged first-order formula.
    pub avg_t_max: R,
    /// Also bisect the true connection per cell (slow).
    pub compute_zeta_star: bool,
    /// Jump in `zeta_bar` between neighbouring cells marking a zero
    /// relabelling; `None` defaults to 0.35 forcing periods.
    pub relabel_threshold: Option<R>,
}

impl<R: Real> Default for ScanParams<R> {
    fn default() -> Self {
        Self {
            zero_index: 1,
            profile_points: 240,
            zeta_span: None,
            avg_t_max: R::of(200.0),
            compute_zeta_star: false,
            relabel_threshold: None,
        }
    }
}

/// Scan the reference manifold: for each `(theta, v)` locate the requested
/// positive Melnikov zero and evaluate the first-order average-energy
/// difference there. Zeros are tracked across neighbouring cells and jumps
/// beyond the relabel threshold are flagged.
pub fn scan<R: Real, M: Flows<R>>(
    model: &M,
    conn: Connection,
    thetas: &[R],
    vs: &[R],
    s_fixed: R,
    params: &ScanParams<R>,
    settings: &HeteroSettings<R>,
) -> ScanResult<R> {
    let n_theta = thetas.len();
    let n_v = vs.len();
    let n = n_theta * n_v;
    let forcing = model.forcing_period();

    let cells: Vec<ScanCell<R>> = map_indexed(n, settings.workers, |idx| {
        let it = idx / n_v;
        let iv = idx % n_v;
        let theta = thetas[it];
        let v = vs[iv];
        let mut cell = ScanCell {
            theta,
            v,
            zero_index: params.zero_index,
            zeta_bar: None,
            zeta_star: None,
            avg_diff_first_order: None,
            status: ScanStatus::Ok,
            relabel: false,
        };
        let coords = match ReferenceCoords::new(model, theta, v, s_fixed) {
            Ok(c) => c,
            Err(_) => {
                cell.status = ScanStatus::ProfileFailed;
                return cell;
            }
        };
        let span = params.zeta_span.unwrap_or_else(|| {
            let alpha = model.alpha(v).unwrap_or(forcing);
            (forcing.max(alpha)) * R::of((params.zero_index + 2) as f64)
        });
        let profile = match melnikov::melnikov_profile(
            model,
            conn,
            &coords,
            (R::zero(), span),
            params.profile_points,
            &settings.quad,
            1, // cell-level parallelism only
        ) {
            Ok(p) => p,
            Err(_) => {
                cell.status = ScanStatus::ProfileFailed;
                return cell;
            }
        };
        let zeros = match melnikov::find_zeros(model, &profile, R::of(1e-9)) {
            Ok(z) => z,
            Err(_) => {
                cell.status = ScanStatus::NoZero;
                return cell;
            }
        };
        let Some(zero) = zeros
            .zeros
            .iter()
            .find(|z| z.index == Some(params.zero_index))
            .copied()
        else {
            cell.status = ScanStatus::NoZero;
            return cell;
        };
        cell.zeta_bar = Some(zero.zeta_bar);

        match average_diff_first_order(
            model,
            conn,
            zero.zeta_bar,
            &coords,
            params.avg_t_max,
            &settings.quad,
        ) {
            Ok(a) => cell.avg_diff_first_order = Some(a.limit),
            Err(_) => {
                cell.status = ScanStatus::AvgFailed;
                return cell;
            }
        }

        if params.compute_zeta_star {
            match find_heteroclinic(model, conn, &zero, &coords, settings) {
                Ok(c) => cell.zeta_star = Some(c.zeta_star),
                Err(_) => {
                    cell.status = ScanStatus::ConnectionFailed;
                }
            }
        }
        cell
    });

    // sequential relabel pass: compare with theta- and v-neighbours
    let threshold = params
        .relabel_threshold
        .unwrap_or_else(|| R::of(0.35) * forcing);
    let mut cells = cells;
    for it in 0..n_theta {
        for iv in 0..n_v {
            let idx = it * n_v + iv;
            let here = match cells[idx].zeta_bar {
                Some(z) => z,
                None => continue,
            };
            let mut relabel = false;
            if it > 0 {
                if let Some(left) = cells[(it - 1) * n_v + iv].zeta_bar {
                    relabel |= (here - left).abs() > threshold;
                }
            }
            if iv > 0 {
                if let Some(down) = cells[it * n_v + iv - 1].zeta_bar {
                    relabel |= (here - down).abs() > threshold;
                }
            }
            cells[idx].relabel = relabel;
        }
    }

    ScanResult {
        thetas: thetas.to_vec(),
        vs: vs.to_vec(),
        cells,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{RockingBlock, RockingBlockParams};

    type M = RockingBlock<f64>;

    fn model(eps: f64) -> M {
        RockingBlock::new(RockingBlockParams {
            eps,
            ..Default::default()
        })
    }

    fn coords(m: &M, theta: f64, v: f64, s: f64) -> ReferenceCoords<f64> {
        ReferenceCoords::new(m, theta, v, s).unwrap()
    }

    fn settings() -> HeteroSettings<f64> {
        HeteroSettings::default()
    }

    #[test]
    fn classify_above_and_below_separatrix() {
        let m = model(0.0);
        let st = settings();
        let z_above = ExtendedState::new(0.0, 0.48, 0.0, 1.01, 0.0);
        let z_below = ExtendedState::new(0.0, 0.48, 0.0, 0.99, 0.0);
        let above = classify(&m, &z_above, true, &st.step, 100.0);
        let below = classify(&m, &z_below, true, &st.step, 100.0);
        assert_eq!(above.classification, Classification::Escape);
        assert_eq!(below.classification, Classification::ReturnToSection);
        // backward shots mirror this on the unstable side
        let above_b = classify(&m, &z_above, false, &st.step, 100.0);
        let below_b = classify(&m, &z_below, false, &st.step, 100.0);
        assert_eq!(above_b.classification, Classification::Escape);
        assert_eq!(below_b.classification, Classification::ReturnToSection);
    }

    #[test]
    fn classify_on_separatrix_is_inconclusive() {
        let m = model(0.0);
        let st = settings();
        // below the horizon where roundoff kicks the orbit off the manifold
        let z = ExtendedState::new(0.0, 0.48, 0.0, 1.0, 0.0);
        let r = classify(&m, &z, true, &st.step, 25.0);
        assert_eq!(r.classification, Classification::Inconclusive);
    }

    #[test]
    fn unperturbed_ordinates_coincide_at_separatrix() {
        let m = model(0.0);
        let c = coords(&m, 0.0, 0.48, 0.0);
        let st = settings();
        for side in [ManifoldSide::Stable, ManifoldSide::Unstable] {
            let o = locate_manifold_ordinate(&m, Connection::Up, 0.3, &c, side, &st).unwrap();
            assert!((o.y - 1.0).abs() <= 2.0 * st.bisect_tol, "y = {}", o.y);
        }
    }

    #[test]
    fn down_connection_ordinate_is_negative() {
        let m = model(0.0);
        let c = coords(&m, 0.0, 0.48, 0.0);
        let st = settings();
        let o =
            locate_manifold_ordinate(&m, Connection::Down, 0.0, &c, ManifoldSide::Stable, &st)
                .unwrap();
        assert!((o.y + 1.0).abs() <= 2.0 * st.bisect_tol, "y = {}", o.y);
    }

    #[test]
    fn perturbed_ordinates_stay_eps_close() {
        let m = model(0.01);
        let c = coords(&m, 0.0, 0.48, 0.0);
        let st = settings();
        let s = locate_manifold_ordinate(&m, Connection::Up, 0.5, &c, ManifoldSide::Stable, &st)
            .unwrap();
        let u = locate_manifold_ordinate(&m, Connection::Up, 0.5, &c, ManifoldSide::Unstable, &st)
            .unwrap();
        assert!((s.y - 1.0).abs() < 0.05, "y_s = {}", s.y);
        assert!((u.y - 1.0).abs() < 0.05, "y_u = {}", u.y);
        assert!((s.y - u.y).abs() > 10.0 * st.bisect_tol); // generic zeta: split manifolds
    }

    #[test]
    fn bisection_bracket_width_contract() {
        let m = model(0.01);
        let c = coords(&m, 0.0, 0.48, 0.0);
        let mut st = settings();
        st.bisect_tol = 1e-8;
        let o1 = locate_manifold_ordinate(&m, Connection::Up, 0.4, &c, ManifoldSide::Stable, &st)
            .unwrap();
        assert!(o1.bracket.1 - o1.bracket.0 <= 1e-8);
        st.bisect_tol = 5e-9;
        let o2 = locate_manifold_ordinate(&m, Connection::Up, 0.4, &c, ManifoldSide::Stable, &st)
            .unwrap();
        assert!(o2.bracket.1 - o2.bracket.0 <= 5e-9);
        assert!((o1.y - o2.y).abs() < 1e-8);
    }

    #[test]
    fn unperturbed_distance_vanishes() {
        let m = model(0.0);
        let c = coords(&m, 0.0, 0.48, 0.0);
        let st = settings();
        let d = real_distance(&m, Connection::Up, 0.7, &c, &st).unwrap();
        assert!(d.delta.abs() < 1e-11, "delta = {}", d.delta);
    }

    #[test]
    fn distance_tracks_melnikov_sign() {
        // sign(Delta) flips across a simple Melnikov zero
        let m = model(0.01);
        let c = coords(&m, 0.0, 0.48, 0.0);
        let st = settings();
        let quad = QuadSettings::default();
        let prof = melnikov::melnikov_profile(
            &m,
            Connection::Up,
            &c,
            (0.0, 2.2),
            60,
            &quad,
            4,
        )
        .unwrap();
        let zeros = melnikov::find_zeros(&m, &prof, 1e-9).unwrap();
        let z = zeros.zeros.iter().find(|z| z.index == Some(1)).unwrap();
        let left = real_distance(&m, Connection::Up, z.zeta_bar - 0.15, &c, &st).unwrap();
        let right = real_distance(&m, Connection::Up, z.zeta_bar + 0.15, &c, &st).unwrap();
        assert!(left.delta * right.delta < 0.0, "no sign flip across zero");
        // and Delta/eps approximates M nearby
        let m_left = melnikov::melnikov(&m, Connection::Up, z.zeta_bar - 0.15, &c, &quad).unwrap();
        assert!(
            (left.delta / 0.01 - m_left).abs() < 0.05 * m_left.abs().max(0.05),
            "Delta/eps = {} vs M = {}",
            left.delta / 0.01,
            m_left
        );
    }

    #[test]
    fn heteroclinic_connection_at_first_zero() {
        let m = model(0.01);
        let c = coords(&m, 0.0, 0.48, 0.0);
        let st = settings();
        let prof = melnikov::melnikov_profile(
            &m,
            Connection::Up,
            &c,
            (0.0, 2.2),
            60,
            &st.quad,
            4,
        )
        .unwrap();
        let zeros = melnikov::find_zeros(&m, &prof, 1e-9).unwrap();
        let zero = zeros.zeros.iter().find(|z| z.index == Some(1)).unwrap();
        let conn = find_heteroclinic(&m, Connection::Up, zero, &c, &st).unwrap();
        assert!((conn.zeta_star - conn.zeta_bar).abs() < 0.05, "zeta* = O(eps) from zeta_bar");
        assert!(conn.diagnostics.ordinate_residual <= st.distance_tol);
        assert!(conn.z_star_section.x.abs() < 1e-12);
        // classify flips across y* +/- 2 distance_tol
        let up = ExtendedState::new(
            conn.z_star_section.u,
            conn.z_star_section.v,
            0.0,
            conn.y_stable + 2.0 * st.distance_tol,
            conn.z_star_section.s,
        );
        let dn = ExtendedState::new(
            conn.z_star_section.u,
            conn.z_star_section.v,
            0.0,
            conn.y_stable - 2.0 * st.distance_tol,
            conn.z_star_section.s,
        );
        assert_eq!(
            classify(&m, &up, true, &st.step, 200.0).classification,
            Classification::Escape
        );
        assert_eq!(
            classify(&m, &dn, true, &st.step, 200.0).classification,
            Classification::ReturnToSection
        );
    }

    #[test]
    fn unperturbed_limit_of_connection() {
        // eps -> 0: zeta* -> zeta_bar and z0* -> (phi_U, 0, 1, s + zeta_bar)
        let m = model(0.0);
        let c = coords(&m, 0.0, 0.48, 0.0);
        let st = settings();
        let zero = ZeroRecord {
            zeta_bar: 0.9,
            slope: 1.0,
            index: Some(1),
            bracket: (0.8, 1.0),
        };
        let conn = find_heteroclinic(&m, Connection::Up, &zero, &c, &st).unwrap();
        assert!((conn.zeta_star - 0.9).abs() < 1e-6);
        assert!((conn.y_stable - 1.0).abs() < 1e-9);
        let alpha = m.alpha(0.48).unwrap();
        let (u_exp, v_exp) = m.phi_u(0.9, 0.48).unwrap();
        let _ = alpha;
        assert!((conn.z_star_section.u - u_exp).abs() < 1e-8);
        assert!((conn.z_star_section.v - v_exp).abs() < 1e-8);
    }

    #[test]
    fn delta_u_vanishes_without_coupling() {
        let m = RockingBlock::new(RockingBlockParams {
            delta: 1.0,
            k: 0.0,
            eps: 0.01,
            ..Default::default()
        });
        let c = coords(&m, 0.2, 0.48, 0.4);
        let v = delta_u_first_order(&m, Connection::Up, 0.7, &c, &QuadSettings::default()).unwrap();
        assert_eq!(v, 0.0, "uncoupled integrand is identically zero");
        let m0 = RockingBlock::new(RockingBlockParams {
            delta: 0.0,
            k: 0.0,
            ..Default::default()
        });
        let v0 =
            delta_u_first_order(&m0, Connection::Up, 0.7, &c, &QuadSettings::default()).unwrap();
        assert_eq!(v0, 0.0);
    }

    #[test]
    fn delta_u_truncation_converges() {
        let m = model(0.01);
        let c = coords(&m, 0.0, 0.48, 0.0);
        let q1 = QuadSettings {
            t_cut: Some(30.0),
            ..QuadSettings::default()
        };
        let q2 = QuadSettings {
            t_cut: Some(60.0),
            ..QuadSettings::default()
        };
        let a = delta_u_first_order(&m, Connection::Up, 0.9, &c, &q1).unwrap();
        let b = delta_u_first_order(&m, Connection::Up, 0.9, &c, &q2).unwrap();
        let k = m.params.delta + 2.0 * m.params.k;
        assert!((a - b).abs() <= 2.0 * k * (-30.0f64).exp());
    }

    #[test]
    fn average_first_order_vanishes_without_coupling() {
        let m = RockingBlock::new(RockingBlockParams {
            delta: 1.0,
            k: 0.0,
            eps: 0.01,
            // avoid the near-resonant default pairing for the diagnostic
            omega: 3.0,
            ..Default::default()
        });
        let c = coords(&m, 0.0, 0.3, 0.0);
        let avg =
            average_diff_first_order(&m, Connection::Up, 0.8, &c, 200.0, &QuadSettings::default())
                .unwrap();
        assert_eq!(avg.limit, 0.0);
        // the truncated double average decays toward the limit
        assert!(avg.tail_mean.abs() < 0.05, "tail mean {}", avg.tail_mean);
    }

    #[test]
    fn average_grid_converges_to_limit_when_coupled() {
        let m = model(0.01);
        let c = coords(&m, 0.0, 0.3, 0.0);
        let avg =
            average_diff_first_order(&m, Connection::Up, 0.8, &c, 400.0, &QuadSettings::default())
                .unwrap();
        // A(T) approaches the split limit like 1/T off resonance
        let last = avg.a_grid.last().unwrap().1;
        assert!(
            (last - avg.limit).abs() < 0.08,
            "A(T_max) = {last} vs limit {}",
            avg.limit
        );
        assert!(avg.tail_spread.is_finite());
    }

    #[test]
    fn measured_average_diff_zero_unperturbed() {
        let m = model(0.0);
        let st = settings();
        let z = ExtendedState::new(0.0, 0.48, 0.0, 1.0, 0.0);
        // on the separatrix U is conserved: forward/backward averages agree
        let meas = measured_average_diff(&m, &z, 20.0, &st.step, 0.2);
        assert!(meas.diff_at_horizon.abs() < 1e-10);
        assert!(meas.diff_tail.abs() < 1e-10);
    }

    #[test]
    fn scan_empty_grid_is_empty() {
        let m = model(0.01);
        let st = settings();
        let r = scan(
            &m,
            Connection::Up,
            &[],
            &[],
            0.0,
            &ScanParams::default(),
            &st,
        );
        assert!(r.cells.is_empty());
    }

    #[test]
    fn scan_uncoupled_zeros_follow_forcing_phase() {
        let m = RockingBlock::new(RockingBlockParams {
            delta: 1.0,
            k: 0.0,
            eps: 0.01,
            ..Default::default()
        });
        let mut st = settings();
        st.workers = 2;
        let params = ScanParams {
            zero_index: 1,
            profile_points: 120,
            avg_t_max: 60.0,
            ..Default::default()
        };
        let thetas = [0.0, 0.25, 0.5];
        let vs = [0.3, 0.48];
        let r = scan(&m, Connection::Up, &thetas, &vs, 0.0, &params, &st);
        assert_eq!(r.cells.len(), 6);
        let omega = m.params.omega;
        for cell in &r.cells {
            assert_eq!(cell.status, ScanStatus::Ok, "{cell:?}");
            let z = cell.zeta_bar.unwrap();
            // first positive zero of cos(omega zeta): pi/(2 omega)
            assert!((z - std::f64::consts::FRAC_PI_2 / omega).abs() < 1e-6);
            // uncoupled: first-order average difference vanishes
            assert!(cell.avg_diff_first_order.unwrap().abs() < 1e-12);
            assert!(!cell.relabel);
        }
    }

    #[test]
    fn scan_deterministic_across_workers() {
        let m = model(0.01);
        let params = ScanParams {
            zero_index: 1,
            profile_points: 60,
            avg_t_max: 30.0,
            ..Default::default()
        };
        let thetas = [0.0, 0.5];
        let vs = [0.3, 0.48];
        let mut st1 = settings();
        st1.workers = 1;
        let mut st8 = settings();
        st8.workers = 8;
        let r1 = scan(&m, Connection::Up, &thetas, &vs, 0.0, &params, &st1);
        let r8 = scan(&m, Connection::Up, &thetas, &vs, 0.0, &params, &st8);
        for (a, b) in r1.cells.iter().zip(r8.cells.iter()) {
            assert_eq!(a.zeta_bar, b.zeta_bar);
            assert_eq!(a.avg_diff_first_order, b.avg_diff_first_order);
            assert_eq!(a.status, b.status);
        }
    }
}
