//! Numerical machinery for periodically forced coupled piecewise-smooth
//! Hamiltonian systems: event-aware integration across the switching
//! manifolds `u = 0` and `x = 0`, the Poincare impact map, Melnikov-function
//! distances between invariant manifolds, bisection location of heteroclinic
//! connections and the first-order energy-transfer formulas of the
//! scattering map. Two spring-coupled slender rocking blocks under periodic
//! forcing ship as the built-in reference model.
//!
//! Core math is generic over the scalar type through [`scalar::Real`]
//! (`f32`/`f64`); the aliases below fix `f64`, the working precision of the
//! command-line tools and the test suites.

pub mod hetero;
pub mod impact;
pub mod integrator;
pub mod melnikov;
pub mod model;
pub mod parallel;
pub mod quad;
pub mod report;
pub mod roots;
pub mod scalar;

pub use scalar::Real;

pub type State64 = model::ExtendedState<f64>;
pub type RockingBlock64 = model::RockingBlock<f64>;
pub type RockingBlockParams64 = model::RockingBlockParams<f64>;
pub type ReferenceCoords64 = model::ReferenceCoords<f64>;
pub type StepControl64 = integrator::StepControl<f64>;
pub type Trajectory64 = integrator::Trajectory<f64>;
pub type SectionPoint64 = impact::SectionPoint<f64>;
pub type ImpactSequence64 = impact::ImpactSequence<f64>;
pub type QuadSettings64 = melnikov::QuadSettings<f64>;
pub type MelnikovProfile64 = melnikov::MelnikovProfile<f64>;
pub type ZeroRecord64 = melnikov::ZeroRecord<f64>;
pub type HeteroSettings64 = hetero::HeteroSettings<f64>;
pub type HeteroclinicConnection64 = hetero::HeteroclinicConnection<f64>;
pub type ScanResult64 = hetero::ScanResult<f64>;
