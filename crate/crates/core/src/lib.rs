//! Second-order neural oscillators and the tooling to study their
//! generalization on a hysteretic structural benchmark.
//!
//! * [`mlp`]: dense networks with exact vector-Jacobian products, L¹
//!   parameter norms and Lipschitz constants.
//! * [`oscillator`]: Heun (RK2) rollout of `x'' = Γ(x, x', u)`,
//!   `y = Π(x, u(0), t)` and its exact discrete adjoint.
//! * [`structsim`]: 5-DOF Bouc-Wen shear building integrated with RK4.
//! * [`excitation`]: nonstationary Gaussian ground motion from an evolutionary
//!   spectrum.
//! * [`training`]: regularized loss, Adam, clipping, schedules, training loop.
//! * [`bounds`]: generalization-bound calculators.
//! * [`metrics`]: relative errors, power-law fits, empirical distributions.
//! * [`dataset`]: the binary dataset container.
//!
//! The network, integrator and optimizer code is generic over [`Scalar`]
//! (`f32`/`f64`); the aliases below fix the `f64` instantiation used by the
//! experiments.

pub mod bounds;
pub mod dataset;
pub mod error;
pub mod excitation;
pub mod linalg;
pub mod metrics;
pub mod mlp;
pub mod oscillator;
pub mod rng;
pub mod scalar;
pub mod structsim;
pub mod training;
pub mod trajectory;

#[cfg(feature = "oracles")]
pub mod oracles;

pub use error::{Error, Result};
pub use mlp::{Activation, DenseLayer, MlpCache, MlpParams, ParamGrads};
pub use oscillator::{BoundReport, Dims, GammaInputs, OscillatorModel, RolloutRecord};
pub use scalar::Scalar;
pub use trajectory::Trajectory;

pub type Mlp = MlpParams<f64>;
pub type Mlp32 = MlpParams<f32>;
pub type Oscillator = OscillatorModel<f64>;
pub type Oscillator32 = OscillatorModel<f32>;
pub type Series = Trajectory<f64>;
pub type Series32 = Trajectory<f32>;
pub type Grads = ParamGrads<f64>;
