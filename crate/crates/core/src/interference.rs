//! Interference circuits that read out the signed sums
//! `Σ c α_j β_j / (λ_j + σ²)` (mean) and `Σ c′ α_j² / (λ_j + σ²)` (variance)
//! from the inversion operator `U`, with recovery of the predictive mean and
//! variance.
//!
//! Circuit: `|0⟩₁|0⟩₂ (|0⟩₃|k⟩ + |1⟩₃|y⟩)|0⟩_flag / √2`, controlled-`U` on
//! `r3 = 0`, controlled-X on the flag for `r3 = 1`, H on `r1`, X then H on
//! `r2`, controlled-SWAP of `r2, r3` on `r1`, then `r1` is measured against
//! `|−⟩⟨−|`. With normalized states the raw `|−⟩` probability is
//! `¼(1 + ⟨A|B⟩)`, where `A = U|k,0⟩` and `B = |y⟩|1⟩`; the reported
//! `probability` is twice that, so that `signed_sum = 2·probability − 1`.

use nalgebra::DVector;
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::qpe::{InversionUnitary, FLAG, SYSTEM};
use crate::scalar::{real, Real};
pub use crate::statevector::wilson_interval;
use crate::statevector::{gates, Control, Layout, Projector, Sampling, StateVector, UnitaryOp, MAX_QUBITS};

pub const R1: &str = "r1";
pub const R2: &str = "r2";
pub const R3: &str = "r3";

/// Half-width multiplier of the Wilson interval reported in shot mode.
pub const WILSON_Z: f64 = 4.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Mean,
    Variance,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InterferenceOutcome<T: Real> {
    /// Raw probability of `|−⟩` on `r1` (`¼(1 + s)` in ideal mode).
    pub measured_probability: T,
    /// `½(1 + signed_sum)`.
    pub probability: T,
    pub signed_sum: T,
    pub constant_used: T,
    pub mode: Mode,
    /// Wilson interval on `signed_sum` at [`WILSON_Z`], shot mode only.
    pub interval: Option<(T, T)>,
}

impl<T: Real> InterferenceOutcome<T> {
    fn from_measured(p: T, constant_used: T, mode: Mode, interval: Option<(T, T)>) -> Result<Self> {
        let clamp = |v: T| v.max(-T::one()).min(T::one());
        let mut signed_sum = T::lit(4.0) * p - T::one();
        let interval = match interval {
            // A sampled frequency may overshoot the ¼(1 + s) ≤ ½ range; the
            // estimate is projected back onto the physical interval.
            Some((lo, hi)) => {
                signed_sum = clamp(signed_sum);
                Some((clamp(lo), clamp(hi)))
            }
            None if signed_sum.magnitude() > T::one() + T::structural_tolerance() => {
                return Err(Error::NumericalFailure(format!(
                    "decoded signed sum {signed_sum} outside [-1, 1]"
                )));
            }
            None => None,
        };
        Ok(InterferenceOutcome {
            measured_probability: p,
            probability: (T::one() + signed_sum) / T::lit(2.0),
            signed_sum,
            constant_used,
            mode,
            interval,
        })
    }
}

fn system_amplitudes<T: Real>(s: &StateVector<T>, width: usize, what: &str) -> Result<Vec<Complex<T>>> {
    if s.layout().registers().len() != 1 {
        return Err(Error::invalid(format!("{what} must live on a single register")));
    }
    if s.num_qubits() != width {
        return Err(Error::invalid(format!(
            "{what} has {} qubits, the inversion operator expects {width}",
            s.num_qubits()
        )));
    }
    if !s.is_normalized(T::structural_tolerance()) {
        return Err(Error::invalid(format!("{what} is not a unit vector")));
    }
    Ok(s.amplitudes().to_vec())
}

fn circuit_layout<T: Real>(u: &InversionUnitary<T>) -> Result<Layout> {
    let mut regs = vec![(R1, 1), (R2, 1), (R3, 1)];
    regs.extend(u.registers());
    let layout = Layout::new(&regs)?;
    if layout.num_qubits() > MAX_QUBITS {
        return Err(Error::invalid("interference circuit exceeds the qubit cap"));
    }
    Ok(layout)
}

/// `|y⟩_system |0⟩_eigen |1⟩_flag` on `U`'s registers.
fn marker_state<T: Real>(u: &InversionUnitary<T>, y: &[Complex<T>]) -> Result<StateVector<T>> {
    let layout = Layout::new(&u.registers())?;
    let tail = 1usize << (u.eigen_width() + 1);
    let mut amps = vec![real(T::zero()); layout.dim()];
    for (s, &a) in y.iter().enumerate() {
        amps[s * tail + 1] = a;
    }
    StateVector::from_amplitudes(layout, amps)
}

/// `⟨U(k ⊗ 0) | y ⊗ 0 ⊗ 1⟩`, the overlap the circuit reads out.
pub fn branch_overlap<T: Real>(
    u: &InversionUnitary<T>,
    k_state: &StateVector<T>,
    y_state: &StateVector<T>,
) -> Result<Complex<T>> {
    let (a, b) = interfered_states(u, k_state, y_state)?;
    a.inner(&b)
}

fn run_circuit<T: Real>(
    u: &InversionUnitary<T>,
    k: &[Complex<T>],
    y: &[Complex<T>],
    mode: Mode,
    sampling: Sampling,
) -> Result<InterferenceOutcome<T>> {
    let layout = circuit_layout(u)?;
    let tail = 1usize << (u.eigen_width() + 1);
    let sys_dim = 1usize << u.system_width();
    let h = T::lit(std::f64::consts::FRAC_1_SQRT_2);
    let mut amps = vec![real(T::zero()); layout.dim()];
    // r1 = r2 = 0; r3 selects k or y; eigen and flag zero.
    for s in 0..sys_dim {
        amps[s * tail] = k[s] * real(h);
        amps[(sys_dim + s) * tail] = y[s] * real(h);
    }
    let mut state = StateVector::from_amplitudes(layout, amps)?;

    let q = |name: &str| state.layout().qubits(name).map(|r| r.start);
    let (q1, q2, q3, flag) = (q(R1)?, q(R2)?, q(R3)?, q(FLAG)?);

    u.apply_mut(&mut state, &[Control::zero(R3)])?;
    state.apply_matrix_mut(&gates::pauli_x(), &[flag], &[(q3, true)])?;
    state.apply_matrix_mut(&gates::hadamard(), &[q1], &[])?;
    state.apply_matrix_mut(&gates::pauli_x(), &[q2], &[])?;
    state.apply_matrix_mut(&gates::hadamard(), &[q2], &[])?;
    state.apply_matrix_mut(&gates::swap(), &[q2, q3], &[(q1, true)])?;

    let c = u.rotation_constant();
    match sampling {
        Sampling::Ideal => {
            let p = state.measure_probability(R1, &Projector::minus())?;
            InterferenceOutcome::from_measured(p, c, mode, None)
        }
        Sampling::Shots { shots, seed } => {
            // H maps |−⟩ to |1⟩, so the projector becomes a basis readout.
            state.apply_matrix_mut(&gates::hadamard(), &[q1], &[])?;
            let counts = state.sample_shots(R1, shots, seed)?;
            let hits = counts.get(&1).copied().unwrap_or(0);
            let (lo, hi) = wilson_interval(hits, shots, WILSON_Z);
            let decode = |p: f64| T::lit(4.0 * p - 1.0);
            let p = T::lit(hits as f64 / shots as f64);
            InterferenceOutcome::from_measured(p, c, mode, Some((decode(lo), decode(hi))))
        }
    }
}

fn check_overlap<T: Real>(overlap: Complex<T>) -> Result<()> {
    if overlap.im.magnitude() > T::structural_tolerance() {
        return Err(Error::NumericalFailure(format!(
            "interference overlap has imaginary part {}",
            overlap.im
        )));
    }
    Ok(())
}

/// Signed readout of `Σ_j c α_j β_j / (λ_j + σ²)`.
pub fn mean_circuit<T: Real>(
    u: &InversionUnitary<T>,
    k_state: &StateVector<T>,
    y_state: &StateVector<T>,
    sampling: Sampling,
) -> Result<InterferenceOutcome<T>> {
    let w = u.system_width();
    let k = system_amplitudes(k_state, w, "k state")?;
    let y = system_amplitudes(y_state, w, "y state")?;
    check_overlap(branch_overlap(u, k_state, y_state)?)?;
    run_circuit(u, &k, &y, Mode::Mean, sampling)
}

/// Readout of `Σ_j c′ α_j² / (λ_j + σ²)`: the mean circuit with `y := k`.
pub fn variance_circuit<T: Real>(
    u: &InversionUnitary<T>,
    k_state: &StateVector<T>,
    sampling: Sampling,
) -> Result<InterferenceOutcome<T>> {
    let w = u.system_width();
    let k = system_amplitudes(k_state, w, "k state")?;
    check_overlap(branch_overlap(u, k_state, k_state)?)?;
    run_circuit(u, &k, &k, Mode::Variance, sampling)
}

/// `f̄_* = s / c · ‖k_*‖ · ‖y‖`.
pub fn recover_mean<T: Real>(o: &InterferenceOutcome<T>, norm_k: T, norm_y: T) -> Result<T> {
    if o.mode != Mode::Mean {
        return Err(Error::invalid("recover_mean needs a mean-mode outcome"));
    }
    if o.constant_used == T::zero() {
        return Err(Error::invalid("rotation constant is zero"));
    }
    Ok(o.signed_sum / o.constant_used * norm_k * norm_y)
}

/// `V = 1 − s / c′ · ‖k_*‖²`.
pub fn recover_variance<T: Real>(o: &InterferenceOutcome<T>, norm_k: T) -> Result<T> {
    if o.mode != Mode::Variance {
        return Err(Error::invalid("recover_variance needs a variance-mode outcome"));
    }
    if o.constant_used == T::zero() {
        return Err(Error::invalid("rotation constant is zero"));
    }
    Ok(T::one() - o.signed_sum / o.constant_used * norm_k * norm_k)
}

/// Swap-test probability `½(1 + |⟨a|b⟩|²)` from a simulated swap test
/// between two states with identical layouts.
pub fn swap_test<T: Real>(a: &StateVector<T>, b: &StateVector<T>) -> Result<T> {
    if a.layout() != b.layout() {
        return Err(Error::invalid("swap test needs identical layouts"));
    }
    let n = a.num_qubits();
    if 2 * n + 1 > MAX_QUBITS {
        return Err(Error::invalid("swap test exceeds the qubit cap"));
    }
    let anc = StateVector::<T>::zero(Layout::new(&[("ancilla", 1)])?);
    let rename = |s: &StateVector<T>, name: &str| {
        StateVector::from_amplitudes(Layout::new(&[(name, n)])?, s.amplitudes().to_vec())
    };
    let mut state = anc.tensor(&rename(a, "left")?)?.tensor(&rename(b, "right")?)?;
    state.apply_matrix_mut(&gates::hadamard(), &[0], &[])?;
    for i in 0..n {
        state.apply_matrix_mut(&gates::swap(), &[1 + i, 1 + n + i], &[(0, true)])?;
    }
    state.apply_matrix_mut(&gates::hadamard(), &[0], &[])?;
    state.measure_probability("ancilla", &Projector::Basis(0))
}

/// `|⟨A|B⟩|` recovered from a swap-test probability; the sign is lost.
pub fn magnitude_from_swap<T: Real>(p_swap: T) -> T {
    (T::lit(2.0) * p_swap - T::one()).max(T::zero()).sqrt()
}

/// The two states the mean circuit interferes: `U|k,0⟩` and `|y,0,1⟩`.
pub fn interfered_states<T: Real>(
    u: &InversionUnitary<T>,
    k_state: &StateVector<T>,
    y_state: &StateVector<T>,
) -> Result<(StateVector<T>, StateVector<T>)> {
    let w = u.system_width();
    let k = system_amplitudes(k_state, w, "k state")?;
    let y = system_amplitudes(y_state, w, "y state")?;
    // Built with the flag set, then flipped back to |0⟩.
    let mut a = marker_state(u, &k)?;
    a.apply_mut(&UnitaryOp::new(gates::pauli_x(), &[FLAG])?)?;
    u.apply_mut(&mut a, &[])?;
    Ok((a, marker_state(u, &y)?))
}

/// Unit state on the `system` register for the inversion operator.
pub fn system_state<T: Real>(v: &DVector<T>, u: &InversionUnitary<T>) -> Result<StateVector<T>> {
    crate::encoding::unit_state(v, SYSTEM, u.system_width())
}
