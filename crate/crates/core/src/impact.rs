//! The Poincare impact map associated with the section `u = 0`, its
//! half-maps between the section halves `Sigma^+` (v > 0) and `Sigma^-`
//! (v < 0), and impact sequences.
//!
//! Domain membership is decided operationally: a half-map is defined when the
//! trajectory reaches the opposite half-section before touching `x = 0`;
//! whichever manifold is hit first settles it.

use thiserror::Error;

use crate::integrator::{
    EventRecord, Integrator, Manifold, Section, StepControl, StopSet, Termination, Trajectory,
};
use crate::model::{ExtendedState, Model};
use crate::scalar::Real;

/// Minimum `|v|` accepted on the section; near the fold the crossing times
/// collapse and event separation degrades.
pub const V_MIN_DEFAULT: f64 = 1e-3;

/// A point `(v, x, y, s)` of the section `u = 0` (the `u` coordinate is
/// suppressed). Membership of `Sigma^+` or `Sigma^-` is decided by `sign(v)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SectionPoint<R> {
    pub v: R,
    pub x: R,
    pub y: R,
    pub s: R,
}

impl<R: Real> SectionPoint<R> {
    pub fn new(v: R, x: R, y: R, s: R) -> Self {
        Self { v, x, y, s }
    }

    pub fn to_state(self) -> ExtendedState<R> {
        ExtendedState::new(R::zero(), self.v, self.x, self.y, self.s)
    }

    pub fn from_state(z: &ExtendedState<R>) -> Self {
        Self {
            v: z.v,
            x: z.x,
            y: z.y,
            s: z.s,
        }
    }
}

#[derive(Debug, Error)]
pub enum ImpactError<R: Real> {
    #[error("section point has |v| = {v} below v_min = {v_min}")]
    NearFold { v: R, v_min: R },
    #[error("trajectory reached x = 0 before the opposite half-section (out of domain)")]
    OutOfDomain {
        event: EventRecord<R>,
        traversal: Trajectory<R>,
    },
    #[error("trajectory escaped before reaching the section")]
    Escape { traversal: Trajectory<R> },
    #[error("no section crossing within the time budget")]
    MaxTime { traversal: Trajectory<R> },
    #[error("integration failed: {reason:?}")]
    StepFailure {
        reason: crate::integrator::FailReason,
        traversal: Trajectory<R>,
    },
}

/// Half-map (and inverse) evaluation: arrival point plus the traversal.
#[derive(Debug, Clone)]
pub struct HalfMapResult<R> {
    pub point: SectionPoint<R>,
    /// Signed flight time between the two section crossings.
    pub flight_time: R,
    pub traversal: Trajectory<R>,
}

/// Why an impact sequence stopped extending.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TruncationReason {
    /// `x = 0` was reached first: the next half-map is out of domain.
    XManifoldReached,
    /// The requested number of impacts was produced.
    MaxCount,
    Escape,
    NearFold,
    Failure,
}

/// Ordered impacts of a trajectory with `u = 0`, truncated per side.
#[derive(Debug, Clone)]
pub struct ImpactSequence<R> {
    /// `(index, point, absolute time)` sorted by index; index 0 is the seed.
    pub entries: Vec<(i64, SectionPoint<R>, R)>,
    pub forward_reason: TruncationReason,
    pub backward_reason: TruncationReason,
}

/// Impact machinery over one model; wraps an event-aware integrator.
pub struct ImpactMap<'m, R: Real, M: Model<R>> {
    model: &'m M,
    pub ctrl: StepControl<R>,
    pub v_min: R,
    /// Time budget per half-map traversal.
    pub max_time: R,
}

impl<'m, R: Real, M: Model<R>> ImpactMap<'m, R, M> {
    pub fn new(model: &'m M, ctrl: StepControl<R>) -> Self {
        Self {
            model,
            ctrl,
            v_min: R::of(V_MIN_DEFAULT),
            max_time: R::of(200.0),
        }
    }

    fn check_point(&self, w: &SectionPoint<R>) -> Result<(), ImpactError<R>> {
        if w.v.abs() < self.v_min {
            return Err(ImpactError::NearFold {
                v: w.v,
                v_min: self.v_min,
            });
        }
        Ok(())
    }

    fn traverse(
        &self,
        w: &SectionPoint<R>,
        target: Section,
        forward: bool,
    ) -> Result<HalfMapResult<R>, ImpactError<R>> {
        self.check_point(w)?;
        let z0 = w.to_state();
        let stop = StopSet::section(target).with_x_zero();
        let mut integ = Integrator::new(self.model, self.ctrl);
        let span = if forward {
            self.max_time
        } else {
            -self.max_time
        };
        let traversal = integ.integrate(&z0, span, stop);
        match traversal.termination {
            Termination::EventReached(ev) if ev.manifold == Manifold::U => Ok(HalfMapResult {
                point: SectionPoint::from_state(&ev.state),
                flight_time: ev.time,
                traversal,
            }),
            Termination::EventReached(ev) => Err(ImpactError::OutOfDomain {
                event: ev,
                traversal,
            }),
            Termination::Escape { .. } => Err(ImpactError::Escape { traversal }),
            Termination::TimeReached => Err(ImpactError::MaxTime { traversal }),
            Termination::StepFailure { reason, .. } => {
                Err(ImpactError::StepFailure { reason, traversal })
            }
        }
    }

    /// `P^+` from `Sigma^+` to `Sigma^-` or `P^-` the other way, decided by
    /// `sign(v)`. Errors when `x = 0` is crossed before arrival.
    pub fn half_map(&self, w: &SectionPoint<R>) -> Result<HalfMapResult<R>, ImpactError<R>> {
        let target = if w.v > R::zero() {
            Section::SigmaMinus
        } else {
            Section::SigmaPlus
        };
        self.traverse(w, target, true)
    }

    /// Backward half-map: the unique preimage under `P^+`/`P^-`.
    pub fn half_map_inverse(
        &self,
        w: &SectionPoint<R>,
    ) -> Result<HalfMapResult<R>, ImpactError<R>> {
        let target = if w.v > R::zero() {
            Section::SigmaMinus
        } else {
            Section::SigmaPlus
        };
        self.traverse(w, target, false)
    }

    /// Full impact map: composition of the two half-maps ordered by the sign
    /// of `v`. For the unperturbed system this is
    /// `(v, x, y, s) -> (v, phi_X(alpha(v); x, y), s + alpha(v))`.
    pub fn impact_map(&self, w: &SectionPoint<R>) -> Result<HalfMapResult<R>, ImpactError<R>> {
        let first = self.half_map(w)?;
        let second = self.half_map(&first.point)?;
        Ok(HalfMapResult {
            point: second.point,
            flight_time: first.flight_time + second.flight_time,
            traversal: second.traversal,
        })
    }

    /// Inverse impact map by backward integration.
    pub fn impact_map_inverse(
        &self,
        w: &SectionPoint<R>,
    ) -> Result<HalfMapResult<R>, ImpactError<R>> {
        let first = self.half_map_inverse(w)?;
        let second = self.half_map_inverse(&first.point)?;
        Ok(HalfMapResult {
            point: second.point,
            flight_time: first.flight_time + second.flight_time,
            traversal: second.traversal,
        })
    }

    /// Enumerate impacts with `u = 0` forward and backward from `w` until
    /// the count is reached or the trajectory leaves the half-map domain.
    pub fn impact_sequence(
        &self,
        w: &SectionPoint<R>,
        n_forward: usize,
        n_backward: usize,
    ) -> Result<ImpactSequence<R>, ImpactError<R>> {
        self.check_point(w)?;
        let classify = |err: &ImpactError<R>| match err {
            ImpactError::OutOfDomain { .. } => TruncationReason::XManifoldReached,
            ImpactError::Escape { .. } => TruncationReason::Escape,
            ImpactError::NearFold { .. } => TruncationReason::NearFold,
            _ => TruncationReason::Failure,
        };

        let mut entries = vec![(0i64, *w, R::zero())];

        let mut forward_reason = TruncationReason::MaxCount;
        let mut cur = *w;
        let mut t_abs = R::zero();
        for i in 1..=n_forward {
            match self.half_map(&cur) {
                Ok(res) => {
                    t_abs += res.flight_time;
                    cur = res.point;
                    entries.push((i as i64, cur, t_abs));
                }
                Err(e) => {
                    forward_reason = classify(&e);
                    break;
                }
            }
        }

        let mut backward_reason = TruncationReason::MaxCount;
        let mut cur = *w;
        let mut t_abs = R::zero();
        for i in 1..=n_backward {
            match self.half_map_inverse(&cur) {
                Ok(res) => {
                    t_abs += res.flight_time; // flight_time < 0 backward
                    cur = res.point;
                    entries.push((-(i as i64), cur, t_abs));
                }
                Err(e) => {
                    backward_reason = classify(&e);
                    break;
                }
            }
        }

        entries.sort_by_key(|(i, _, _)| *i);
        Ok(ImpactSequence {
            entries,
            forward_reason,
            backward_reason,
        })
    }
}
