//! Adaptive embedded Runge-Kutta integration of the coupled field with exact
//! event location at the switching manifolds `u = 0` and `x = 0`.
//!
//! Each accepted step integrates a single branch field (the region index is
//! frozen; branch fields extend smoothly across the manifolds). When the step
//! crosses a manifold, the crossing time is bracketed and refined on the
//! frozen branch, the state is accepted up to the crossing, and integration
//! restarts on the far side with the same state: the concatenated flow is
//! continuous, only its derivative jumps.

use crate::model::{Branch, ExtendedState, Model, Region};
use crate::roots::brent;
use crate::scalar::Real;

/// Embedded pair selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RkMethod {
    /// Fehlberg 7(8), 13 stages; the default.
    Fehlberg78,
    /// Dormand-Prince 5(4), 7 stages.
    Dopri5,
}

/// Step-size and event-location control.
#[derive(Debug, Clone, Copy)]
pub struct StepControl<R> {
    pub rel_tol: R,
    pub abs_tol: R,
    pub max_step: R,
    pub min_step: R,
    pub method: RkMethod,
    /// Event residual bound relative to state scale.
    pub event_tol: R,
    /// Crossings with normal velocity below this are rejected as tangential.
    pub graze_tol: R,
    /// `|u|` or `|x|` beyond this terminates with `Termination::Escape`.
    pub escape_threshold: R,
    pub max_steps: usize,
    /// Keep all accepted samples (otherwise only endpoints and events).
    pub record: bool,
}

impl<R: Real> Default for StepControl<R> {
    fn default() -> Self {
        Self {
            rel_tol: R::of(1e-12),
            abs_tol: R::of(1e-12),
            max_step: R::of(0.1),
            min_step: R::of(1e-14),
            method: RkMethod::Fehlberg78,
            event_tol: R::of(1e-13),
            graze_tol: R::of(1e-10),
            escape_threshold: R::of(2.0),
            max_steps: 2_000_000,
            record: true,
        }
    }
}

/// Switching manifold identifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Manifold {
    /// `u = 0`
    U,
    /// `x = 0`
    X,
}

/// A located transversal crossing.
#[derive(Debug, Clone, Copy)]
pub struct EventRecord<R> {
    /// Time relative to the start of the integration.
    pub time: R,
    pub state: ExtendedState<R>,
    pub manifold: Manifold,
    /// Sign of the crossing velocity (side the coordinate moves into).
    pub direction: Branch,
    pub tangential: bool,
}

/// Section specification for [`Integrator::integrate_to_section`] and stop
/// sets: `SigmaPlus`/`SigmaMinus` are the halves `{u = 0, v >< 0}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Section {
    SigmaPlus,
    SigmaMinus,
    XZero,
}

/// Which crossings terminate the integration.
#[derive(Debug, Clone, Copy, Default)]
pub struct StopSet {
    pub sigma_plus: bool,
    pub sigma_minus: bool,
    pub x_zero: bool,
}

impl StopSet {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn section(section: Section) -> Self {
        let mut s = Self::default();
        match section {
            Section::SigmaPlus => s.sigma_plus = true,
            Section::SigmaMinus => s.sigma_minus = true,
            Section::XZero => s.x_zero = true,
        }
        s
    }

    pub fn sigma_both() -> Self {
        Self {
            sigma_plus: true,
            sigma_minus: true,
            x_zero: false,
        }
    }

    pub fn with_x_zero(mut self) -> Self {
        self.x_zero = true;
        self
    }

    fn matches<R: Real>(&self, ev: &EventRecord<R>) -> bool {
        match ev.manifold {
            Manifold::U => {
                (self.sigma_plus && ev.state.v > R::zero())
                    || (self.sigma_minus && ev.state.v < R::zero())
            }
            Manifold::X => self.x_zero,
        }
    }
}

/// Why a step could not be completed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailReason {
    /// Normal velocity at a crossing below `graze_tol`.
    TangentialCrossing(Manifold),
    NonFiniteState,
    StepUnderflow,
    MaxStepsExceeded,
}

/// How an integration ended.
#[derive(Debug, Clone, Copy)]
pub enum Termination<R> {
    TimeReached,
    EventReached(EventRecord<R>),
    Escape { time: R, state: ExtendedState<R> },
    StepFailure { time: R, reason: FailReason },
}

impl<R> Termination<R> {
    pub fn is_time_reached(&self) -> bool {
        matches!(self, Termination::TimeReached)
    }
}

/// Integration output: ordered samples, located events, termination reason.
#[derive(Debug, Clone)]
pub struct Trajectory<R> {
    /// `(time, state)` pairs, strictly monotone in time per direction.
    pub samples: Vec<(R, ExtendedState<R>)>,
    pub events: Vec<EventRecord<R>>,
    pub termination: Termination<R>,
    /// Running integral of `U` along the trajectory when averaging is on.
    pub u_integral: Option<Vec<(R, R)>>,
}

impl<R: Real> Trajectory<R> {
    pub fn final_time(&self) -> R {
        self.samples.last().map(|(t, _)| *t).unwrap_or(R::zero())
    }

    pub fn final_state(&self) -> ExtendedState<R> {
        self.samples
            .last()
            .map(|(_, z)| *z)
            .expect("trajectory holds at least the initial sample")
    }
}

/// Running average of `U` along a trajectory, `avg(t) = (1/t) int_0^t U`.
#[derive(Debug, Clone)]
pub struct AveragedTrajectory<R> {
    /// `(t, running average)` samples; the `t = 0` entry holds `U(z0)`.
    pub samples: Vec<(R, R)>,
    pub trajectory: Trajectory<R>,
}

impl<R: Real> AveragedTrajectory<R> {
    /// Mean of the running average over the trailing `window` fraction
    /// (by sample count) together with its spread in that window.
    pub fn tail_window(&self, window_fraction: R) -> (R, R) {
        let n = self.samples.len();
        let keep = ((R::of(n as f64) * window_fraction)
            .to_f64()
            .unwrap_or(1.0)
            .ceil() as usize)
            .clamp(1, n);
        let tail = &self.samples[n - keep..];
        let mut lo = R::infinity();
        let mut hi = R::neg_infinity();
        let mut sum = R::zero();
        for &(_, a) in tail {
            lo = lo.min(a);
            hi = hi.max(a);
            sum += a;
        }
        (sum / R::of(keep as f64), hi - lo)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Stats {
    pub fn_evals: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub events: u64,
}

const MAX_STAGES: usize = 13;
const DETECT_SAMPLES: usize = 8;

struct Tableau<R> {
    stages: usize,
    order_exp: R,
    a: [[R; MAX_STAGES]; MAX_STAGES],
    b: [R; MAX_STAGES],
    b_err: [R; MAX_STAGES],
    c: [R; MAX_STAGES],
}

fn fehlberg78<R: Real>() -> Tableau<R> {
    let mut a = [[0.0_f64; MAX_STAGES]; MAX_STAGES];
    a[1][0] = 2.0 / 27.0;
    a[2][0] = 1.0 / 36.0;
    a[2][1] = 1.0 / 12.0;
    a[3][0] = 1.0 / 24.0;
    a[3][2] = 1.0 / 8.0;
    a[4][0] = 5.0 / 12.0;
    a[4][2] = -25.0 / 16.0;
    a[4][3] = 25.0 / 16.0;
    a[5][0] = 1.0 / 20.0;
    a[5][3] = 1.0 / 4.0;
    a[5][4] = 1.0 / 5.0;
    a[6][0] = -25.0 / 108.0;
    a[6][3] = 125.0 / 108.0;
    a[6][4] = -65.0 / 27.0;
    a[6][5] = 125.0 / 54.0;
    a[7][0] = 31.0 / 300.0;
    a[7][4] = 61.0 / 225.0;
    a[7][5] = -2.0 / 9.0;
    a[7][6] = 13.0 / 900.0;
    a[8][0] = 2.0;
    a[8][3] = -53.0 / 6.0;
    a[8][4] = 704.0 / 45.0;
    a[8][5] = -107.0 / 9.0;
    a[8][6] = 67.0 / 90.0;
    a[8][7] = 3.0;
    a[9][0] = -91.0 / 108.0;
    a[9][3] = 23.0 / 108.0;
    a[9][4] = -976.0 / 135.0;
    a[9][5] = 311.0 / 54.0;
    a[9][6] = -19.0 / 60.0;
    a[9][7] = 17.0 / 6.0;
    a[9][8] = -1.0 / 12.0;
    a[10][0] = 2383.0 / 4100.0;
    a[10][3] = -341.0 / 164.0;
    a[10][4] = 4496.0 / 1025.0;
    a[10][5] = -301.0 / 82.0;
    a[10][6] = 2133.0 / 4100.0;
    a[10][7] = 45.0 / 82.0;
    a[10][8] = 45.0 / 164.0;
    a[10][9] = 18.0 / 41.0;
    a[11][0] = 3.0 / 205.0;
    a[11][5] = -6.0 / 41.0;
    a[11][6] = -3.0 / 205.0;
    a[11][7] = -3.0 / 41.0;
    a[11][8] = 3.0 / 41.0;
    a[11][9] = 6.0 / 41.0;
    a[12][0] = -1777.0 / 4100.0;
    a[12][3] = -341.0 / 164.0;
    a[12][4] = 4496.0 / 1025.0;
    a[12][5] = -289.0 / 82.0;
    a[12][6] = 2193.0 / 4100.0;
    a[12][7] = 51.0 / 82.0;
    a[12][8] = 33.0 / 164.0;
    a[12][9] = 12.0 / 41.0;
    a[12][11] = 1.0;

    // 8th-order weights (propagated solution)
    let mut b = [0.0_f64; MAX_STAGES];
    b[5] = 34.0 / 105.0;
    b[6] = 9.0 / 35.0;
    b[7] = 9.0 / 35.0;
    b[8] = 9.0 / 280.0;
    b[9] = 9.0 / 280.0;
    b[11] = 41.0 / 840.0;
    b[12] = 41.0 / 840.0;

    // y8 - y7 = (41/840) h (k12 + k13 - k1 - k11)
    let mut b_err = [0.0_f64; MAX_STAGES];
    b_err[0] = -41.0 / 840.0;
    b_err[10] = -41.0 / 840.0;
    b_err[11] = 41.0 / 840.0;
    b_err[12] = 41.0 / 840.0;

    let c = [
        0.0,
        2.0 / 27.0,
        1.0 / 9.0,
        1.0 / 6.0,
        5.0 / 12.0,
        0.5,
        5.0 / 6.0,
        1.0 / 6.0,
        2.0 / 3.0,
        1.0 / 3.0,
        1.0,
        0.0,
        1.0,
    ];

    convert(13, 1.0 / 8.0, &a, &b, &b_err, &c)
}

fn dopri5<R: Real>() -> Tableau<R> {
    let mut a = [[0.0_f64; MAX_STAGES]; MAX_STAGES];
    a[1][0] = 1.0 / 5.0;
    a[2][0] = 3.0 / 40.0;
    a[2][1] = 9.0 / 40.0;
    a[3][0] = 44.0 / 45.0;
    a[3][1] = -56.0 / 15.0;
    a[3][2] = 32.0 / 9.0;
    a[4][0] = 19372.0 / 6561.0;
    a[4][1] = -25360.0 / 2187.0;
    a[4][2] = 64448.0 / 6561.0;
    a[4][3] = -212.0 / 729.0;
    a[5][0] = 9017.0 / 3168.0;
    a[5][1] = -355.0 / 33.0;
    a[5][2] = 46732.0 / 5247.0;
    a[5][3] = 49.0 / 176.0;
    a[5][4] = -5103.0 / 18656.0;
    a[6][0] = 35.0 / 384.0;
    a[6][2] = 500.0 / 1113.0;
    a[6][3] = 125.0 / 192.0;
    a[6][4] = -2187.0 / 6784.0;
    a[6][5] = 11.0 / 84.0;

    let mut b = [0.0_f64; MAX_STAGES];
    b[0] = 35.0 / 384.0;
    b[2] = 500.0 / 1113.0;
    b[3] = 125.0 / 192.0;
    b[4] = -2187.0 / 6784.0;
    b[5] = 11.0 / 84.0;

    let b4 = [
        5179.0 / 57600.0,
        0.0,
        7571.0 / 16695.0,
        393.0 / 640.0,
        -92097.0 / 339200.0,
        187.0 / 2100.0,
        1.0 / 40.0,
    ];
    let mut b_err = [0.0_f64; MAX_STAGES];
    for i in 0..7 {
        b_err[i] = b[i] - b4[i];
    }

    let mut c = [0.0_f64; MAX_STAGES];
    c[1] = 1.0 / 5.0;
    c[2] = 3.0 / 10.0;
    c[3] = 4.0 / 5.0;
    c[4] = 8.0 / 9.0;
    c[5] = 1.0;
    c[6] = 1.0;

    convert(7, 1.0 / 5.0, &a, &b, &b_err, &c)
}

fn convert<R: Real>(
    stages: usize,
    order_exp: f64,
    a: &[[f64; MAX_STAGES]; MAX_STAGES],
    b: &[f64; MAX_STAGES],
    b_err: &[f64; MAX_STAGES],
    c: &[f64; MAX_STAGES],
) -> Tableau<R> {
    let mut out = Tableau {
        stages,
        order_exp: R::of(order_exp),
        a: [[R::zero(); MAX_STAGES]; MAX_STAGES],
        b: [R::zero(); MAX_STAGES],
        b_err: [R::zero(); MAX_STAGES],
        c: [R::zero(); MAX_STAGES],
    };
    for i in 0..MAX_STAGES {
        out.b[i] = R::of(b[i]);
        out.b_err[i] = R::of(b_err[i]);
        out.c[i] = R::of(c[i]);
        for (dst, src) in out.a[i].iter_mut().zip(a[i].iter()) {
            *dst = R::of(*src);
        }
    }
    out
}

type Vec5<R> = [R; 5];

/// Whether the fifth state slot accumulates `int U dt`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Augment {
    None,
    AverageU,
}

/// Event-aware integrator over one model. Holds mutable step state; create
/// one instance per task when running concurrently.
pub struct Integrator<'m, R: Real, M: Model<R>> {
    model: &'m M,
    pub ctrl: StepControl<R>,
    tableau: Tableau<R>,
    pub stats: Stats,
}

impl<'m, R: Real, M: Model<R>> Integrator<'m, R, M> {
    pub fn new(model: &'m M, ctrl: StepControl<R>) -> Self {
        let tableau = match ctrl.method {
            RkMethod::Fehlberg78 => fehlberg78(),
            RkMethod::Dopri5 => dopri5(),
        };
        Self {
            model,
            ctrl,
            tableau,
            stats: Stats::default(),
        }
    }

    fn rhs(&mut self, s0: R, t: R, y: &Vec5<R>, region: Region, aug: Augment) -> Vec5<R> {
        self.stats.fn_evals += 1;
        let period = self.model.forcing_period();
        let z = ExtendedState::new(y[0], y[1], y[2], y[3], (s0 + t).rem_wrap(period));
        let f = crate::model::vector_field_unchecked(self.model, &z, region);
        let dw = match aug {
            Augment::None => R::zero(),
            Augment::AverageU => {
                R::of(0.5) * y[1] * y[1] + self.model.potential_u(Branch::of(y[0]), y[0])
            }
        };
        [f[0], f[1], f[2], f[3], dw]
    }

    /// One raw RK step of size `h` with frozen region; returns the high-order
    /// solution and (for the controller) the scaled error estimate.
    fn rk_step(
        &mut self,
        s0: R,
        t: R,
        y: &Vec5<R>,
        h: R,
        region: Region,
        aug: Augment,
    ) -> (Vec5<R>, R) {
        let stages = self.tableau.stages;
        let mut k = [[R::zero(); 5]; MAX_STAGES];
        k[0] = self.rhs(s0, t, y, region, aug);
        for i in 1..stages {
            let mut yi = *y;
            for (n, slot) in yi.iter_mut().enumerate() {
                let mut acc = R::zero();
                for (j, kj) in k.iter().enumerate().take(i) {
                    acc += self.tableau.a[i][j] * kj[n];
                }
                *slot += h * acc;
            }
            k[i] = self.rhs(s0, t + self.tableau.c[i] * h, &yi, region, aug);
        }
        let mut y_new = *y;
        let mut err = R::zero();
        for n in 0..5 {
            let mut acc = R::zero();
            let mut eacc = R::zero();
            for (i, ki) in k.iter().enumerate().take(stages) {
                acc += self.tableau.b[i] * ki[n];
                eacc += self.tableau.b_err[i] * ki[n];
            }
            y_new[n] = y[n] + h * acc;
            let scale = self.ctrl.abs_tol + self.ctrl.rel_tol * y[n].abs().max(y_new[n].abs());
            err = err.max((h * eacc).abs() / scale);
        }
        (y_new, err)
    }

    /// Raw fixed step without error control (event refinement probes).
    fn rk_step_raw(&mut self, s0: R, t: R, y: &Vec5<R>, h: R, region: Region, aug: Augment) -> Vec5<R> {
        self.rk_step(s0, t, y, h, region, aug).0
    }

    /// Integrate for (signed) `t_span`, stopping at the first crossing that
    /// matches `stop`, at escape, or at the final time.
    pub fn integrate(
        &mut self,
        z0: &ExtendedState<R>,
        t_span: R,
        stop: StopSet,
    ) -> Trajectory<R> {
        self.run(z0, t_span, stop, Augment::None)
    }

    /// First transversal crossing of `section` in the given time direction.
    ///
    /// `Err` carries the full trajectory for diagnosis (no crossing within
    /// `max_time`, escape, or step failure).
    pub fn integrate_to_section(
        &mut self,
        z0: &ExtendedState<R>,
        section: Section,
        forward: bool,
        max_time: R,
    ) -> Result<EventRecord<R>, Trajectory<R>> {
        let span = if forward { max_time } else { -max_time };
        let traj = self.run(z0, span, StopSet::section(section), Augment::None);
        match traj.termination {
            Termination::EventReached(ev) => Ok(ev),
            _ => Err(traj),
        }
    }

    /// Integrate while accumulating the running average `(1/t) int_0^t U`.
    pub fn averaged(
        &mut self,
        z0: &ExtendedState<R>,
        t_span: R,
        stop: StopSet,
    ) -> AveragedTrajectory<R> {
        let trajectory = self.run(z0, t_span, stop, Augment::AverageU);
        let e0 = crate::model::eval_energy(self.model, z0);
        let samples = trajectory
            .u_integral
            .as_ref()
            .expect("averaging augmentation was requested")
            .iter()
            .map(|&(t, w)| {
                if t == R::zero() {
                    (t, e0.u_energy)
                } else {
                    (t, w / t)
                }
            })
            .collect();
        AveragedTrajectory {
            samples,
            trajectory,
        }
    }

    fn run(
        &mut self,
        z0: &ExtendedState<R>,
        t_span: R,
        stop: StopSet,
        aug: Augment,
    ) -> Trajectory<R> {
        let period = self.model.forcing_period();
        let s0 = z0.s.rem_wrap(period);
        let zero = R::zero();

        let mut samples = Vec::new();
        let mut events = Vec::new();
        let mut u_integral = if aug == Augment::AverageU {
            Some(Vec::new())
        } else {
            None
        };

        let z0n = ExtendedState::new(z0.u, z0.v, z0.x, z0.y, s0);
        samples.push((zero, z0n));
        if let Some(w) = u_integral.as_mut() {
            w.push((zero, zero));
        }

        let finish = |samples: Vec<(R, ExtendedState<R>)>,
                      events: Vec<EventRecord<R>>,
                      u_integral,
                      termination| Trajectory {
            samples,
            events,
            termination,
            u_integral,
        };

        if !z0n.is_finite() {
            return finish(
                samples,
                events,
                u_integral,
                Termination::StepFailure {
                    time: zero,
                    reason: FailReason::NonFiniteState,
                },
            );
        }
        if t_span == zero {
            return finish(samples, events, u_integral, Termination::TimeReached);
        }

        // fold-fold start: both coordinate and velocity vanish
        if (z0n.u == zero && z0n.v.abs() < self.ctrl.graze_tol)
            || (z0n.x == zero && z0n.y.abs() < self.ctrl.graze_tol)
        {
            let manifold = if z0n.u == zero { Manifold::U } else { Manifold::X };
            return finish(
                samples,
                events,
                u_integral,
                Termination::StepFailure {
                    time: zero,
                    reason: FailReason::TangentialCrossing(manifold),
                },
            );
        }

        let dir = if t_span > zero { R::one() } else { -R::one() };
        // on-manifold coordinates resolve to the side entered in the
        // integration direction
        let mut region = {
            let u = if z0n.u == zero {
                Branch::of(z0n.v * dir)
            } else {
                Branch::of(z0n.u)
            };
            let x = if z0n.x == zero {
                Branch::of(z0n.y * dir)
            } else {
                Branch::of(z0n.x)
            };
            Region { u, x }
        };
        let mut t = zero;
        let mut y: Vec5<R> = [z0n.u, z0n.v, z0n.x, z0n.y, zero];
        let mut h = dir * self.ctrl.max_step.min(R::of(1e-3));
        // cap the step after an on-manifold start so the return crossing of a
        // small oscillation is not stepped over
        let mut step_cap = if z0n.u == zero {
            z0n.v.abs()
        } else if z0n.x == zero {
            z0n.y.abs()
        } else {
            R::infinity()
        };

        let mut steps = 0usize;
        loop {
            steps += 1;
            if steps > self.ctrl.max_steps {
                return finish(
                    samples,
                    events,
                    u_integral,
                    Termination::StepFailure {
                        time: t,
                        reason: FailReason::MaxStepsExceeded,
                    },
                );
            }

            let remaining = t_span - t;
            if remaining.abs() <= self.ctrl.min_step {
                return finish(samples, events, u_integral, Termination::TimeReached);
            }
            h = dir * h.abs().min(remaining.abs()).min(step_cap).max(self.ctrl.min_step);

            let f0 = self.rhs(s0, t, &y, region, aug);
            let (y_new, err) = self.rk_step(s0, t, &y, h, region, aug);

            if err > R::one() {
                self.stats.rejected += 1;
                let shrink = (R::of(0.9) * err.powf(-self.tableau.order_exp)).max(R::of(0.2));
                let h_new = h * shrink;
                if h_new.abs() <= self.ctrl.min_step {
                    return finish(
                        samples,
                        events,
                        u_integral,
                        Termination::StepFailure {
                            time: t,
                            reason: FailReason::StepUnderflow,
                        },
                    );
                }
                h = h_new;
                continue;
            }
            self.stats.accepted += 1;
            step_cap = R::infinity();

            // crossing detection against the frozen-region sides
            let dead = self.dead_band(&y);
            let suspect = self.detect_crossing(&y, &f0, &y_new, h, region, dead);

            if suspect != (false, false) {
                match self.locate_event(s0, t, &y, &y_new, h, region, suspect, dead, aug) {
                    Ok(None) => {
                        // interpolation false alarm: take the full step
                    }
                    Ok(Some((tau_star, y_star, manifold))) => {
                        if tau_star.abs() <= self.ctrl.min_step {
                            return finish(
                                samples,
                                events,
                                u_integral,
                                Termination::StepFailure {
                                    time: t,
                                    reason: FailReason::StepUnderflow,
                                },
                            );
                        }
                        let t_ev = t + tau_star;
                        let z_ev = ExtendedState::new(
                            y_star[0],
                            y_star[1],
                            y_star[2],
                            y_star[3],
                            (s0 + t_ev).rem_wrap(period),
                        );
                        let normal_vel = match manifold {
                            Manifold::U => z_ev.v,
                            Manifold::X => z_ev.y,
                        };
                        let tangential = normal_vel.abs() < self.ctrl.graze_tol;
                        let record = EventRecord {
                            time: t_ev,
                            state: z_ev,
                            manifold,
                            direction: Branch::of(normal_vel * dir),
                            tangential,
                        };
                        self.stats.events += 1;
                        events.push(record);
                        samples.push((t_ev, z_ev));
                        if let Some(w) = u_integral.as_mut() {
                            w.push((t_ev, y_star[4]));
                        }
                        if tangential {
                            return finish(
                                samples,
                                events,
                                u_integral,
                                Termination::StepFailure {
                                    time: t_ev,
                                    reason: FailReason::TangentialCrossing(manifold),
                                },
                            );
                        }
                        if stop.matches(&record) {
                            return finish(
                                samples,
                                events,
                                u_integral,
                                Termination::EventReached(record),
                            );
                        }
                        // restart on the far side: same state, flipped branch
                        t = t_ev;
                        y = y_star;
                        region = match manifold {
                            Manifold::U => Region {
                                u: Branch::of(normal_vel * dir),
                                x: region.x,
                            },
                            Manifold::X => Region {
                                u: region.u,
                                x: Branch::of(normal_vel * dir),
                            },
                        };
                        // do not step across the return crossing of a
                        // shallow oscillation
                        step_cap = normal_vel.abs().max(self.ctrl.min_step * R::of(16.0));
                        let grow = (R::of(0.9) * err.powf(-self.tableau.order_exp))
                            .max(R::of(0.2))
                            .min(R::of(5.0));
                        h = (h * grow)
                            .abs()
                            .min(self.ctrl.max_step)
                            .max(self.ctrl.min_step)
                            * dir;
                        continue;
                    }
                    Err(reason) => {
                        return finish(
                            samples,
                            events,
                            u_integral,
                            Termination::StepFailure { time: t, reason },
                        );
                    }
                }
            }

            // plain accepted step
            t += h;
            y = y_new;
            let z = ExtendedState::new(y[0], y[1], y[2], y[3], (s0 + t).rem_wrap(period));
            if !z.is_finite() {
                samples.push((t, z));
                return finish(
                    samples,
                    events,
                    u_integral,
                    Termination::StepFailure {
                        time: t,
                        reason: FailReason::NonFiniteState,
                    },
                );
            }
            if self.ctrl.record {
                samples.push((t, z));
                if let Some(w) = u_integral.as_mut() {
                    w.push((t, y[4]));
                }
            }
            if z.u.abs() >= self.ctrl.escape_threshold || z.x.abs() >= self.ctrl.escape_threshold {
                if !self.ctrl.record {
                    samples.push((t, z));
                    if let Some(w) = u_integral.as_mut() {
                        w.push((t, y[4]));
                    }
                }
                return finish(
                    samples,
                    events,
                    u_integral,
                    Termination::Escape { time: t, state: z },
                );
            }
            if (t_span - t).abs() <= self.ctrl.min_step {
                if !self.ctrl.record {
                    samples.push((t, z));
                    if let Some(w) = u_integral.as_mut() {
                        w.push((t, y[4]));
                    }
                }
                return finish(samples, events, u_integral, Termination::TimeReached);
            }
            let grow = (R::of(0.9) * err.powf(-self.tableau.order_exp))
                .max(R::of(0.2))
                .min(R::of(5.0));
            h = (h * grow)
                .abs()
                .min(self.ctrl.max_step)
                .max(self.ctrl.min_step)
                * dir;
        }
    }

    fn dead_band(&self, y: &Vec5<R>) -> R {
        let scale = R::one() + y[0].abs().max(y[1].abs()).max(y[2].abs()).max(y[3].abs());
        self.ctrl.event_tol * scale * R::of(4.0)
    }

    /// Quick suspicion test for crossings inside an accepted step, per
    /// manifold: endpoint signs relative to the frozen region side are the
    /// primary detector, interpolated interior samples catch a dip across
    /// the manifold and back within one step.
    fn detect_crossing(
        &self,
        y0: &Vec5<R>,
        f0: &Vec5<R>,
        y1: &Vec5<R>,
        h: R,
        region: Region,
        dead_band: R,
    ) -> (bool, bool) {
        // quadratic model matching value+slope at 0 and value at 1
        let interp = |idx: usize, theta: R| {
            let slope = h * f0[idx];
            y0[idx] + slope * theta + (y1[idx] - y0[idx] - slope) * theta * theta
        };
        let mut out = [false, false];
        for (slot, (idx, side)) in [(0usize, region.u), (2usize, region.x)].iter().enumerate() {
            let sgn = side.sign::<R>();
            if y1[*idx] * sgn < -dead_band {
                out[slot] = true;
                continue;
            }
            for i in 1..DETECT_SAMPLES {
                let theta = R::of(i as f64 / DETECT_SAMPLES as f64);
                if interp(*idx, theta) * sgn < -dead_band {
                    out[slot] = true;
                    break;
                }
            }
        }
        (out[0], out[1])
    }

    /// Confirm and refine the earliest true crossing inside a step.
    ///
    /// True states on a uniform sample grid bracket the first sign change
    /// per suspected manifold; Brent's method refines the crossing time on
    /// the frozen branch, then Newton micro-steps in time push the residual
    /// below the event tolerance. Returns `Ok(None)` when the suspicion was
    /// an interpolation artifact.
    #[allow(clippy::too_many_arguments)]
    fn locate_event(
        &mut self,
        s0: R,
        t: R,
        y0: &Vec5<R>,
        y1: &Vec5<R>,
        h: R,
        region: Region,
        suspect: (bool, bool),
        dead_band: R,
        aug: Augment,
    ) -> Result<Option<(R, Vec5<R>, Manifold)>, FailReason> {
        let mut grid: [Option<Vec5<R>>; DETECT_SAMPLES + 1] = [None; DETECT_SAMPLES + 1];
        grid[0] = Some(*y0);
        grid[DETECT_SAMPLES] = Some(*y1);
        let tau_of = |j: usize| h * R::of(j as f64 / DETECT_SAMPLES as f64);

        let mut candidates: Vec<(Manifold, usize, Branch)> = Vec::with_capacity(2);
        if suspect.0 {
            candidates.push((Manifold::U, 0, region.u));
        }
        if suspect.1 {
            candidates.push((Manifold::X, 2, region.x));
        }

        // walk the grid once; first sub-interval with a confirmed sign
        // change wins (refining both when they share it)
        let mut best: Option<(R, Vec5<R>, Manifold)> = None;
        'walk: for j in 1..=DETECT_SAMPLES {
            if grid[j].is_none() {
                let ys = self.rk_step_raw(s0, t, y0, tau_of(j), region, aug);
                grid[j] = Some(ys);
            }
            let here = grid[j].unwrap();
            let prev = grid[j - 1].unwrap();
            for &(manifold, idx, side) in &candidates {
                let sgn = side.sign::<R>();
                let g_prev = prev[idx] * sgn;
                let g_here = here[idx] * sgn;
                if g_here < -dead_band && g_prev >= -dead_band {
                    let refined = self.refine_crossing(
                        s0,
                        t,
                        y0,
                        region,
                        idx,
                        sgn,
                        tau_of(j - 1),
                        tau_of(j),
                        g_prev.max(R::epsilon()),
                        g_here,
                        aug,
                    )?;
                    let earlier = match &best {
                        None => true,
                        Some((tb, _, _)) => refined.0.abs() < tb.abs(),
                    };
                    if earlier {
                        best = Some((refined.0, refined.1, manifold));
                    }
                }
            }
            if best.is_some() {
                break 'walk;
            }
        }
        Ok(best)
    }

    /// Brent refinement plus Newton polish of one bracketed crossing.
    #[allow(clippy::too_many_arguments)]
    fn refine_crossing(
        &mut self,
        s0: R,
        t: R,
        y0: &Vec5<R>,
        region: Region,
        idx: usize,
        sgn: R,
        tau_lo: R,
        tau_hi: R,
        g_lo: R,
        g_hi: R,
        aug: Augment,
    ) -> Result<(R, Vec5<R>), FailReason> {
        let eval = |me: &mut Self, tau: R| -> R {
            if tau == R::zero() {
                y0[idx] * sgn
            } else {
                me.rk_step_raw(s0, t, y0, tau, region, aug)[idx] * sgn
            }
        };
        let xtol = (tau_hi - tau_lo).abs() * R::of(1e-13) + R::of(4.0) * R::epsilon();
        let (tau_star, _) = brent(
            |tau| eval(self, tau),
            tau_lo,
            tau_hi,
            g_lo,
            g_hi,
            xtol,
            256,
        )
        .map_err(|_| FailReason::StepUnderflow)?;

        let mut tau = tau_star;
        let mut ys = if tau == R::zero() {
            *y0
        } else {
            self.rk_step_raw(s0, t, y0, tau, region, aug)
        };
        let scale = R::one() + ys[0].abs().max(ys[1].abs()).max(ys[2].abs()).max(ys[3].abs());
        let target = self.ctrl.event_tol * scale;
        for _ in 0..4 {
            if ys[idx].abs() <= target {
                break;
            }
            let f = self.rhs(s0, t + tau, &ys, region, aug);
            if f[idx].abs() < self.ctrl.graze_tol {
                break; // tangential; the caller flags it via crossing velocity
            }
            let delta = -ys[idx] / f[idx];
            ys = self.rk_step_raw(s0, t + tau, &ys, delta, region, aug);
            tau += delta;
        }
        Ok((tau, ys))
    }
}
