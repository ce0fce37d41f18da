//! Statevector simulation of quantum Gaussian process regression.
//!
//! Every stage of the quantum predictor (amplitude encoding, Hamiltonian
//! evolution, phase estimation with eigenvalue-conditioned rotation, the
//! sign-preserving interference circuits, and coherent-state kernel
//! construction with block-encoding) runs on explicit state vectors and is
//! checked against an exact classical GPR engine.
//!
//! The numerical core is generic over [`Real`] (`f32` or `f64`); the
//! `*64` aliases below fix the scalar to `f64`, which is what the pipeline
//! and CLI use.

pub mod block_encoding;
pub mod classical;
pub mod coherent;
pub mod encoding;
pub mod error;
pub mod hamiltonian;
pub mod interference;
pub mod io;
pub mod pipeline;
pub mod qpe;
pub mod scalar;
pub mod statevector;

pub use classical::{Dataset, Hyperparams, KernelSystem, Prediction};
pub use error::{Error, Result};
pub use scalar::Real;
pub use statevector::{Control, DensityOperator, Layout, Projector, Sampling, StateVector, UnitaryOp};

pub type Dataset64 = Dataset<f64>;
pub type KernelSystem64 = KernelSystem<f64>;
pub type Prediction64 = Prediction<f64>;
pub type StateVector64 = StateVector<f64>;
pub type UnitaryOp64 = UnitaryOp<f64>;
pub type DensityOperator64 = DensityOperator<f64>;
