//! Piecewise-smooth Hamiltonian models of the form
//! `H(u,v,x,y,s) = U(u,v) + X(x,y) + eps*h(u,v,x,y,s)` where both planar
//! Hamiltonians `U = v^2/2 + V(u)` and `X = y^2/2 + Y(x)` switch branch on the
//! manifolds `u = 0` and `x = 0`, and `h` is a time-periodic coupling.
//!
//! The built-in `RockingBlock` instance models two slender rocking blocks
//! linked by a spring under periodic forcing; its unperturbed flow, half-turn
//! times and heteroclinic connections are available in closed form.

use thiserror::Error;

use crate::scalar::Real;

/// Side of a switching manifold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Plus,
    Minus,
}

impl Branch {
    pub fn sign<R: Real>(self) -> R {
        match self {
            Branch::Plus => R::one(),
            Branch::Minus => -R::one(),
        }
    }

    /// Branch containing a coordinate value, `Plus` on the manifold itself.
    pub fn of<R: Real>(q: R) -> Branch {
        if q < R::zero() {
            Branch::Minus
        } else {
            Branch::Plus
        }
    }

    pub fn flipped(self) -> Branch {
        match self {
            Branch::Plus => Branch::Minus,
            Branch::Minus => Branch::Plus,
        }
    }
}

/// Region index of the four-fold partition of the extended phase space.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Region {
    pub u: Branch,
    pub x: Branch,
}

/// Placement of one coordinate relative to its switching manifold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    Interior(Branch),
    OnManifold,
}

/// Which heteroclinic connection of the `(x,y)` system is being followed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connection {
    Up,
    Down,
}

impl Connection {
    /// Saddle approached as `t -> +inf` along this connection (`Plus` = `Q^+`).
    pub fn forward_saddle(self) -> Branch {
        match self {
            Connection::Up => Branch::Plus,
            Connection::Down => Branch::Minus,
        }
    }

    /// Saddle approached as `t -> -inf`.
    pub fn backward_saddle(self) -> Branch {
        self.forward_saddle().flipped()
    }
}

/// A point `(u, v, x, y, s)` of the extended phase space; `s` is the forcing
/// phase, kept in `[0, T)` by [`ExtendedState::normalized`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExtendedState<R> {
    pub u: R,
    pub v: R,
    pub x: R,
    pub y: R,
    pub s: R,
}

impl<R: Real> ExtendedState<R> {
    pub fn new(u: R, v: R, x: R, y: R, s: R) -> Self {
        Self { u, v, x, y, s }
    }

    /// Reduce the phase modulo the forcing period.
    pub fn normalized(mut self, period: R) -> Self {
        self.s = self.s.rem_wrap(period);
        self
    }

    /// Placement of the `u` coordinate, treating `|u| <= tol` as on-manifold.
    pub fn u_placement(&self, tol: R) -> Placement {
        if self.u.abs() <= tol {
            Placement::OnManifold
        } else {
            Placement::Interior(Branch::of(self.u))
        }
    }

    pub fn x_placement(&self, tol: R) -> Placement {
        if self.x.abs() <= tol {
            Placement::OnManifold
        } else {
            Placement::Interior(Branch::of(self.x))
        }
    }

    /// Region by coordinate signs; on-manifold coordinates resolve to the
    /// side the motion is entering (sign of the conjugate velocity).
    pub fn region_by_motion(&self) -> Region {
        let u = if self.u == R::zero() {
            Branch::of(self.v)
        } else {
            Branch::of(self.u)
        };
        let x = if self.x == R::zero() {
            Branch::of(self.y)
        } else {
            Branch::of(self.x)
        };
        Region { u, x }
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite()
            && self.v.is_finite()
            && self.x.is_finite()
            && self.y.is_finite()
            && self.s.is_finite()
    }
}

/// Energies of a state split by subsystem.
#[derive(Debug, Clone, Copy)]
pub struct EnergyParts<R> {
    /// `U(u, v)`
    pub u_energy: R,
    /// `X(x, y)`
    pub x_energy: R,
    /// `U + X + eps * h`
    pub total: R,
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("orbit through v = {v} is unbounded or beyond v_max = {v_max}")]
    UnboundedOrbit { v: f64, v_max: f64 },
    #[error("velocity {v} is not strictly positive")]
    NonPositiveVelocity { v: f64 },
    #[error("state lies outside the periodic-orbit region (energy {c})")]
    NotOnPeriodicOrbit { c: f64 },
    #[error("requested region {requested:?} is inconsistent with the state sign {actual:?}")]
    RegionMismatch { requested: Branch, actual: Branch },
    #[error("config line {line}: {reason}")]
    Config { line: usize, reason: String },
    #[error("unknown model '{0}'")]
    UnknownModel(String),
}

/// Piecewise-smooth coupled Hamiltonian system.
///
/// Branch potentials must satisfy `V^+(0) = V^-(0) = 0` and
/// `Y^+(0) = Y^-(0) = 0`, the `(x,y)` subsystem must have saddles
/// `Q^{+/-} = (+/-q, 0)` on a common energy level, and `h` must be
/// `T`-periodic in `s`.
pub trait Model<R: Real>: Send + Sync {
    /// Forcing period `T`.
    fn forcing_period(&self) -> R;
    /// Perturbation size `eps`.
    fn eps(&self) -> R;

    /// `V^{side}(u)`
    fn potential_u(&self, side: Branch, u: R) -> R;
    /// `d/du V^{side}(u)`
    fn potential_u_deriv(&self, side: Branch, u: R) -> R;
    /// `Y^{side}(x)`
    fn potential_x(&self, side: Branch, x: R) -> R;
    /// `d/dx Y^{side}(x)`
    fn potential_x_deriv(&self, side: Branch, x: R) -> R;

    /// `h(u,v,x,y,s)`
    fn perturbation(&self, z: &ExtendedState<R>) -> R;
    fn perturbation_du(&self, z: &ExtendedState<R>) -> R;
    fn perturbation_dv(&self, z: &ExtendedState<R>) -> R;
    fn perturbation_dx(&self, z: &ExtendedState<R>) -> R;
    fn perturbation_dy(&self, z: &ExtendedState<R>) -> R;

    /// Abscissa `q > 0` of the saddles `Q^{+/-} = (+/-q, 0)`.
    fn saddle_abscissa(&self) -> R;
    /// Common saddle energy level `X(Q^{+/-})`.
    fn heteroclinic_energy(&self) -> R;
    /// Linearized contraction/expansion rate at `Q^{side}`.
    fn decay_rate(&self, side: Branch) -> R;
    /// Largest admissible `|v|` for bounded `(u,v)` orbits.
    fn v_max(&self) -> R;

    /// Upper bound on `|dh/dx|` over the region of interest, used to size
    /// quadrature truncation windows. The default samples a coarse grid.
    fn perturbation_dx_bound(&self) -> R {
        let q = self.saddle_abscissa();
        let t = self.forcing_period();
        let n = 12;
        let mut best = R::zero();
        for i in 0..=n {
            for j in 0..=n {
                for k in 0..n {
                    let f = |idx: i32| R::of(idx as f64) / R::of(n as f64);
                    let z = ExtendedState::new(
                        q * (f(i) + f(i) - R::one()),
                        R::zero(),
                        q * (f(j) + f(j) - R::one()),
                        R::zero(),
                        t * f(k),
                    );
                    best = best.max(self.perturbation_dx(&z).abs());
                }
            }
        }
        best + best.max(R::one())
    }
}

/// Closed-form unperturbed objects, available for the built-in model.
///
/// General models can implement these numerically; every Melnikov and
/// scattering-map routine in this crate dispatches through this trait.
pub trait Flows<R: Real>: Model<R> {
    /// Heteroclinic parameterization `sigma(xi)` with `sigma(0)` on `x = 0`.
    fn sigma(&self, conn: Connection, xi: R) -> (R, R);
    /// Time for the flow from `(0, v)`, `v > 0`, to reach `{u = 0, v < 0}`.
    fn alpha_plus(&self, v: R) -> Result<R, ModelError>;
    /// Full period of the `(u,v)` orbit at energy `U(0, v)`.
    fn alpha(&self, v: R) -> Result<R, ModelError>;
    /// Periodic flow `phi_U(tau; 0, v0)`; `tau` is reduced modulo the period.
    fn phi_u(&self, tau: R, v0: R) -> Result<(R, R), ModelError>;
    /// Invert `phi_u`: given an interior periodic-orbit point, return
    /// `(v0, tau0)` with `phi_u(tau0, v0) = (u, v)`.
    fn orbit_phase(&self, u: R, v: R) -> Result<(R, R), ModelError>;
}

/// Evaluate `(U, X, H_eps)` at a state. Branches are selected by coordinate
/// sign; both branches agree on the manifolds since `V(0) = Y(0) = 0`.
pub fn eval_energy<R: Real, M: Model<R> + ?Sized>(
    model: &M,
    z: &ExtendedState<R>,
) -> EnergyParts<R> {
    let half = R::of(0.5);
    let u_energy = half * z.v * z.v + model.potential_u(Branch::of(z.u), z.u);
    let x_energy = half * z.y * z.y + model.potential_x(Branch::of(z.x), z.x);
    EnergyParts {
        u_energy,
        x_energy,
        total: u_energy + x_energy + model.eps() * model.perturbation(z),
    }
}

/// Right-hand side `(du, dv, dx, dy, ds)` of the coupled field in a region.
///
/// The region must be consistent with the state: an interior state whose
/// coordinate sign contradicts the requested side is rejected. On-manifold
/// coordinates accept either side (the branch fields extend smoothly).
pub fn vector_field<R: Real, M: Model<R> + ?Sized>(
    model: &M,
    z: &ExtendedState<R>,
    region: Region,
) -> Result<[R; 5], ModelError> {
    for (coord, side) in [(z.u, region.u), (z.x, region.x)] {
        if coord != R::zero() && Branch::of(coord) != side {
            return Err(ModelError::RegionMismatch {
                requested: side,
                actual: Branch::of(coord),
            });
        }
    }
    Ok(vector_field_unchecked(model, z, region))
}

/// As [`vector_field`] but without the consistency check; used by the
/// integrator, whose stepper may legitimately poke stages across a manifold
/// while locating the crossing with the frozen branch field.
pub fn vector_field_unchecked<R: Real, M: Model<R> + ?Sized>(
    model: &M,
    z: &ExtendedState<R>,
    region: Region,
) -> [R; 5] {
    let eps = model.eps();
    [
        z.v + eps * model.perturbation_dv(z),
        -model.potential_u_deriv(region.u, z.u) - eps * model.perturbation_du(z),
        z.y + eps * model.perturbation_dy(z),
        -model.potential_x_deriv(region.x, z.x) - eps * model.perturbation_dx(z),
        R::one(),
    ]
}

/// Poisson bracket `{X, h} = dX/dx dh/dy - dX/dy dh/dx` with the branch of
/// `Y` chosen by the sign of `x`.
pub fn poisson_bracket_xh<R: Real, M: Model<R> + ?Sized>(model: &M, z: &ExtendedState<R>) -> R {
    model.potential_x_deriv(Branch::of(z.x), z.x) * model.perturbation_dy(z)
        - z.y * model.perturbation_dx(z)
}

/// Poisson bracket `{U, h} = dU/du dh/dv - dU/dv dh/du`.
pub fn poisson_bracket_uh<R: Real, M: Model<R> + ?Sized>(model: &M, z: &ExtendedState<R>) -> R {
    model.potential_u_deriv(Branch::of(z.u), z.u) * model.perturbation_dv(z)
        - z.v * model.perturbation_du(z)
}

/// Point `(theta, v, s)` of the reference manifold labelling the invariant
/// cylinders: `theta` is the orbit phase fraction, `v` the section velocity,
/// `s` the forcing phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceCoords<R> {
    pub theta: R,
    pub v: R,
    pub s: R,
}

impl<R: Real> ReferenceCoords<R> {
    /// Wraps `theta` into `[0,1)` and `s` into `[0,T)`; rejects `v` outside
    /// the periodic-orbit band `0 < U(0,v) < d_bar`.
    pub fn new<M: Model<R>>(
        model: &M,
        theta: R,
        v: R,
        s: R,
    ) -> Result<ReferenceCoords<R>, ModelError> {
        let c = R::of(0.5) * v * v;
        if v <= R::zero() || v > model.v_max() {
            return Err(ModelError::UnboundedOrbit {
                v: v.to_f64().unwrap_or(f64::NAN),
                v_max: model.v_max().to_f64().unwrap_or(f64::NAN),
            });
        }
        if c >= model.heteroclinic_energy() {
            return Err(ModelError::NotOnPeriodicOrbit {
                c: c.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(ReferenceCoords {
            theta: theta.rem_wrap(R::one()),
            v,
            s: s.rem_wrap(model.forcing_period()),
        })
    }
}

/// Parameters of the two linked slender rocking blocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RockingBlockParams<R> {
    /// Forcing amplitude coefficient (delta = delta_t * eps).
    pub delta: R,
    /// Coupling stiffness coefficient (k = k_t * eps).
    pub k: R,
    /// Forcing frequency; the period is `2 pi / omega`.
    pub omega: R,
    /// Perturbation size.
    pub eps: R,
    /// Reject `(u,v)` orbits with `|v| >= v_max` (period diverges at 1).
    pub v_max: R,
}

impl<R: Real> Default for RockingBlockParams<R> {
    fn default() -> Self {
        Self {
            delta: R::one(),
            k: R::one(),
            omega: R::of(3.0),
            eps: R::of(0.01),
            v_max: R::of(0.999),
        }
    }
}

/// Two identical slender rocking blocks linked by a spring, under periodic
/// forcing `delta*cos(omega s)`:
///
/// `V^{+/-}(u) = -u^2/2 +/- u`, `Y^{+/-}(x) = -x^2/2 +/- x`,
/// `h(u,x,s) = delta*(u+x)*cos(omega s) + k*(u^2/2 + x^2/2 - u x)`.
///
/// Saddles sit at `(+/-1, 0)` on energy level `1/2`; the upper heteroclinic
/// is `sigma_up(xi) = (1 - e^{-xi}, e^{-xi})` for `xi >= 0` and
/// `(e^{xi} - 1, e^{xi})` for `xi < 0`.
#[derive(Debug, Clone, Copy)]
pub struct RockingBlock<R> {
    pub params: RockingBlockParams<R>,
}

impl<R: Real> RockingBlock<R> {
    pub fn new(params: RockingBlockParams<R>) -> Self {
        Self { params }
    }

    /// Parse a plain-text `key = value` config (keys: delta, k, omega, eps,
    /// v_max; `#` starts a comment).
    pub fn from_config_str(text: &str) -> Result<Self, ModelError> {
        let mut params = RockingBlockParams::<R>::default();
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ModelError::Config {
                line: idx + 1,
                reason: "expected 'key = value'".into(),
            })?;
            let value: f64 = value.trim().parse().map_err(|e| ModelError::Config {
                line: idx + 1,
                reason: format!("bad number: {e}"),
            })?;
            match key.trim() {
                "delta" => params.delta = R::of(value),
                "k" => params.k = R::of(value),
                "omega" => params.omega = R::of(value),
                "eps" => params.eps = R::of(value),
                "v_max" => params.v_max = R::of(value),
                other => {
                    return Err(ModelError::Config {
                        line: idx + 1,
                        reason: format!("unknown key '{other}'"),
                    })
                }
            }
        }
        validate_params(&params, 1)?;
        Ok(Self::new(params))
    }

    /// Resolve a model by name; only "rocking-block" is built in.
    pub fn by_name(name: &str, params: RockingBlockParams<R>) -> Result<Self, ModelError> {
        if name == "rocking-block" {
            validate_params(&params, 1)?;
            Ok(Self::new(params))
        } else {
            Err(ModelError::UnknownModel(name.to_string()))
        }
    }

    fn check_bounded(&self, v: R) -> Result<(), ModelError> {
        if v.abs() > self.params.v_max || !v.is_finite() {
            return Err(ModelError::UnboundedOrbit {
                v: v.to_f64().unwrap_or(f64::NAN),
                v_max: self.params.v_max.to_f64().unwrap_or(f64::NAN),
            });
        }
        Ok(())
    }
}

fn validate_params<R: Real>(p: &RockingBlockParams<R>, line: usize) -> Result<(), ModelError> {
    let bad = |reason: &str| ModelError::Config {
        line,
        reason: reason.into(),
    };
    if p.omega <= R::zero() {
        return Err(bad("omega must be positive"));
    }
    if p.delta < R::zero() || p.k < R::zero() || p.eps < R::zero() {
        return Err(bad("delta, k and eps must be non-negative"));
    }
    if p.v_max <= R::zero() || p.v_max >= R::one() {
        return Err(bad("v_max must lie in (0, 1)"));
    }
    Ok(())
}

impl<R: Real> Model<R> for RockingBlock<R> {
    fn forcing_period(&self) -> R {
        R::of(2.0) * R::PI() / self.params.omega
    }

    fn eps(&self) -> R {
        self.params.eps
    }

    fn potential_u(&self, side: Branch, u: R) -> R {
        -R::of(0.5) * u * u + side.sign::<R>() * u
    }

    fn potential_u_deriv(&self, side: Branch, u: R) -> R {
        side.sign::<R>() - u
    }

    fn potential_x(&self, side: Branch, x: R) -> R {
        -R::of(0.5) * x * x + side.sign::<R>() * x
    }

    fn potential_x_deriv(&self, side: Branch, x: R) -> R {
        side.sign::<R>() - x
    }

    fn perturbation(&self, z: &ExtendedState<R>) -> R {
        let p = &self.params;
        let half = R::of(0.5);
        p.delta * (z.u + z.x) * (p.omega * z.s).cos()
            + p.k * (half * z.u * z.u + half * z.x * z.x - z.u * z.x)
    }

    fn perturbation_du(&self, z: &ExtendedState<R>) -> R {
        self.params.delta * (self.params.omega * z.s).cos() + self.params.k * (z.u - z.x)
    }

    fn perturbation_dv(&self, _z: &ExtendedState<R>) -> R {
        R::zero()
    }

    fn perturbation_dx(&self, z: &ExtendedState<R>) -> R {
        self.params.delta * (self.params.omega * z.s).cos() + self.params.k * (z.x - z.u)
    }

    fn perturbation_dy(&self, _z: &ExtendedState<R>) -> R {
        R::zero()
    }

    fn saddle_abscissa(&self) -> R {
        R::one()
    }

    fn heteroclinic_energy(&self) -> R {
        R::of(0.5)
    }

    fn decay_rate(&self, _side: Branch) -> R {
        R::one()
    }

    fn v_max(&self) -> R {
        self.params.v_max
    }

    fn perturbation_dx_bound(&self) -> R {
        // |delta cos + k (x-u)| <= delta + 2k for |u|,|x| <= 1
        self.params.delta + R::of(2.0) * self.params.k
    }
}

impl<R: Real> Flows<R> for RockingBlock<R> {
    fn sigma(&self, conn: Connection, xi: R) -> (R, R) {
        let (x, y) = if xi >= R::zero() {
            let e = (-xi).exp();
            (R::one() - e, e)
        } else {
            let e = xi.exp();
            (e - R::one(), e)
        };
        match conn {
            Connection::Up => (x, y),
            Connection::Down => (-x, -y),
        }
    }

    fn alpha_plus(&self, v: R) -> Result<R, ModelError> {
        if v <= R::zero() {
            return Err(ModelError::NonPositiveVelocity {
                v: v.to_f64().unwrap_or(f64::NAN),
            });
        }
        self.check_bounded(v)?;
        Ok(((R::one() + v) / (R::one() - v)).ln())
    }

    fn alpha(&self, v: R) -> Result<R, ModelError> {
        // symmetric potential: alpha^-(-v) = alpha^+(v)
        Ok(R::of(2.0) * self.alpha_plus(v.abs())?)
    }

    fn phi_u(&self, tau: R, v0: R) -> Result<(R, R), ModelError> {
        if v0 < R::zero() {
            let (u, v) = self.phi_u(tau, -v0)?;
            return Ok((-u, -v));
        }
        let a_plus = self.alpha_plus(v0)?;
        let period = a_plus + a_plus;
        let tau = tau.rem_wrap(period);
        let half = R::of(0.5);
        let branch = |t: R| {
            let ep = t.exp();
            let em = (-t).exp();
            let a = half * (v0 - R::one());
            let b = half * (v0 + R::one());
            (a * ep - b * em + R::one(), a * ep + b * em)
        };
        if tau <= a_plus {
            Ok(branch(tau))
        } else {
            let (u, v) = branch(tau - a_plus);
            Ok((-u, -v))
        }
    }

    fn orbit_phase(&self, u: R, v: R) -> Result<(R, R), ModelError> {
        let c = R::of(0.5) * v * v + self.potential_u(Branch::of(u), u);
        if c <= R::zero() || c >= self.heteroclinic_energy() {
            return Err(ModelError::NotOnPeriodicOrbit {
                c: c.to_f64().unwrap_or(f64::NAN),
            });
        }
        let v0 = (c + c).sqrt();
        self.check_bounded(v0)?;
        let a_plus = self.alpha_plus(v0)?;
        // Invert the first-branch exponential form; the mirrored half starts
        // after alpha_plus.
        let tau = if u > R::zero() || (u == R::zero() && v > R::zero()) {
            ((u - R::one() + v) / (v0 - R::one())).ln()
        } else {
            a_plus + ((-u - R::one() - v) / (v0 - R::one())).ln()
        };
        Ok((v0, tau))
    }
}

/// Check conditions C.1-C.4 style consistency of a model (potential zeroes at
/// the origin, invisible fold-fold slopes, saddle energy and criticality).
pub fn validate_conditions<R: Real, M: Model<R>>(model: &M) -> Result<(), String> {
    let tol = R::of(1e-12);
    let zero = R::zero();
    for side in [Branch::Plus, Branch::Minus] {
        if model.potential_u(side, zero).abs() > tol || model.potential_x(side, zero).abs() > tol {
            return Err("branch potentials must vanish at the origin".into());
        }
    }
    if model.potential_u_deriv(Branch::Plus, zero) <= zero
        || model.potential_u_deriv(Branch::Minus, zero) >= zero
    {
        return Err("origin is not an invisible fold-fold".into());
    }
    let q = model.saddle_abscissa();
    let d_bar = model.heteroclinic_energy();
    for (side, x) in [(Branch::Plus, q), (Branch::Minus, -q)] {
        if (model.potential_x(side, x) - d_bar).abs() > tol {
            return Err("saddles do not sit on the heteroclinic energy level".into());
        }
        if model.potential_x_deriv(side, x).abs() > tol {
            return Err("saddle abscissa is not a critical point".into());
        }
    }
    Ok(())
}
