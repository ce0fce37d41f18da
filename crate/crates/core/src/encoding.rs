//! Amplitude encoding of classical vectors by Fourier transform, data-driven
//! conditioned rotation and post-selection of the flag qubit.
//!
//! The data oracle is a classical read that places `v_j / ‖v‖_max` into the
//! rotation amplitude; no fixed-point data register is simulated.

use nalgebra::DVector;
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::scalar::{real, Real};
use crate::statevector::{gates, wilson_interval, Layout, Sampling, StateVector};

pub const INDEX: &str = "index";
pub const FLAG: &str = "flag";

/// Unit state proportional to a data vector, with the post-selection
/// statistics used for norm estimation.
#[derive(Clone, Debug)]
pub struct EncodedVector<T: Real> {
    state: StateVector<T>,
    pre_measurement: StateVector<T>,
    success_probability: T,
    max_abs: T,
    len: usize,
}

impl<T: Real> EncodedVector<T> {
    /// Post-selected state on the `index` register (padded dimension).
    pub fn state(&self) -> &StateVector<T> {
        &self.state
    }

    /// State before the flag measurement: `index ⊗ flag`.
    pub fn pre_measurement(&self) -> &StateVector<T> {
        &self.pre_measurement
    }

    pub fn success_probability(&self) -> T {
        self.success_probability
    }

    pub fn max_abs(&self) -> T {
        self.max_abs
    }

    /// Original (unpadded) length.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Power-of-two dimension the vector was padded to.
    pub fn padded_len(&self) -> usize {
        self.state.dim()
    }

    /// `M · p · ‖v‖²_max` with exact probabilities.
    pub fn norm_sq_estimate(&self) -> T {
        T::from_usize_lossy(self.padded_len()) * self.success_probability * self.max_abs * self.max_abs
    }

    /// Real amplitudes of the first `len` basis states.
    pub fn amplitudes(&self) -> DVector<T> {
        DVector::from_iterator(self.len, self.state.amplitudes()[..self.len].iter().map(|a| a.re))
    }
}

/// Index-register width for `len` entries (at least one qubit).
pub fn index_width(len: usize) -> usize {
    len.next_power_of_two().max(2).trailing_zeros() as usize
}

/// Prepares `Σ_j v_j |j⟩ / ‖v‖`, zero-padding to a power of two.
pub fn encode<T: Real>(v: &DVector<T>) -> Result<EncodedVector<T>> {
    let max_abs = v.iter().fold(T::zero(), |m, &x| m.max(x.magnitude()));
    if v.is_empty() || max_abs <= T::zero() {
        return Err(Error::invalid("cannot amplitude-encode a zero vector"));
    }
    if !v.iter().all(|x| x.is_finite()) {
        return Err(Error::invalid("vector has non-finite entries"));
    }
    let width = index_width(v.len());
    let padded = 1usize << width;
    let layout = Layout::new(&[(INDEX, width), (FLAG, 1)])?;

    let mut state = StateVector::zero(layout).qft(INDEX)?;
    let rotations: Vec<[Complex<T>; 4]> = (0..padded)
        .map(|j| {
            let a = if j < v.len() { v[j] / max_abs } else { T::zero() };
            let g = gates::amplitude_rotation(a);
            [g[(0, 0)], g[(0, 1)], g[(1, 0)], g[(1, 1)]]
        })
        .collect();
    let selector: Vec<usize> = state.layout().qubits(INDEX)?.collect();
    let target = state.layout().qubits(FLAG)?.start;
    state.apply_multiplexed_mut(&selector, target, &rotations, &[])?;

    let (post, p) = state.postselect(FLAG, 1)?;
    Ok(EncodedVector {
        state: post,
        pre_measurement: state,
        success_probability: p,
        max_abs,
        len: v.len(),
    })
}

/// `‖v‖² = M · p · ‖v‖²_max`, with `p` exact or estimated from flag samples.
pub fn estimate_norm_sq<T: Real>(e: &EncodedVector<T>, sampling: Sampling) -> Result<T> {
    match sampling {
        Sampling::Ideal => Ok(e.norm_sq_estimate()),
        Sampling::Shots { shots, seed } => Ok(sampled_norm_sq(e, shots, seed, 1.0)?.0),
    }
}

/// Shot estimate of `‖v‖²` with its Wilson interval at `z` standard
/// deviations: `(estimate, low, high)`.
pub fn sampled_norm_sq<T: Real>(e: &EncodedVector<T>, shots: u64, seed: u64, z: f64) -> Result<(T, T, T)> {
    let counts = e.pre_measurement.sample_shots(FLAG, shots, seed)?;
    let hits = counts.get(&1).copied().unwrap_or(0);
    let (lo, hi) = wilson_interval(hits, shots, z);
    let scale = T::from_usize_lossy(e.padded_len()) * e.max_abs * e.max_abs;
    let p = hits as f64 / shots as f64;
    Ok((scale * T::lit(p), scale * T::lit(lo), scale * T::lit(hi)))
}

/// Unit state on a single register holding `v / ‖v‖` directly, used where a
/// circuit needs the encoded vector under a different register name.
pub fn unit_state<T: Real>(v: &DVector<T>, register: &str, width: usize) -> Result<StateVector<T>> {
    let n = v.norm();
    if n <= T::zero() {
        return Err(Error::invalid("cannot build a unit state from a zero vector"));
    }
    let mut amps = vec![real(T::zero()); 1 << width];
    if v.len() > amps.len() {
        return Err(Error::invalid("vector longer than register dimension"));
    }
    for (a, &x) in amps.iter_mut().zip(v.iter()) {
        *a = real(x / n);
    }
    StateVector::from_amplitudes(Layout::new(&[(register, width)])?, amps)
}
