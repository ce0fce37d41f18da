//! Phase estimation on `e^{-iKt}`, eigenvalue-conditioned rotation by
//! `c / (λ + σ²)` and uncomputation, packaged as one operator `U` with
//! `U |k_*⟩|0⟩ = Σ_j α_j |u_j⟩ (√(1 − a_j²)|0⟩ + a_j|1⟩)`, `a_j = c/(λ_j + σ²)`.
//!
//! Register names: the system register is [`SYSTEM`], the eigenvalue
//! register is [`EIGEN`] and the rotated ancilla is [`FLAG`].

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::error::{Error, Result};
use crate::hamiltonian::EvolutionOracle;
pub use crate::hamiltonian::SYSTEM;
use crate::scalar::{real, Real};
use crate::statevector::{gates, CMatrix, Control, Layout, StateVector, UnitaryOp};

pub const EIGEN: &str = "eigen";
pub const FLAG: &str = "flag";

pub const MAX_QPE_BITS: usize = 12;

/// Fraction of the smallest admissible denominator used for automatic `c`.
pub const AUTO_C_FACTOR: f64 = 0.99;

/// Branches with population below this are not checked for a valid rotation.
pub const POPULATED_THRESHOLD: f64 = 1e-24;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QpeConfig<T: Real> {
    pub n_bits: usize,
    pub evolution_time: T,
    pub rotation_constant: T,
}

impl<T: Real> QpeConfig<T> {
    pub fn new(n_bits: usize, evolution_time: T, rotation_constant: T) -> Result<Self> {
        if !(1..=MAX_QPE_BITS).contains(&n_bits) {
            return Err(Error::invalid(format!(
                "qpe bits must lie in [1, {MAX_QPE_BITS}], got {n_bits}"
            )));
        }
        if !(evolution_time > T::zero()) {
            return Err(Error::invalid("evolution time must be positive"));
        }
        if !(rotation_constant > T::zero()) {
            return Err(Error::invalid("rotation constant must be positive"));
        }
        Ok(QpeConfig {
            n_bits,
            evolution_time,
            rotation_constant,
        })
    }

    /// `λ̃ = m / 2^n · 2π / t`.
    pub fn decode(&self, register_value: usize) -> T {
        decode_eigenvalue(register_value, self.n_bits, self.evolution_time)
    }
}

pub fn decode_eigenvalue<T: Real>(register_value: usize, n_bits: usize, time: T) -> T {
    T::from_usize_lossy(register_value) / T::from_usize_lossy(1 << n_bits) * T::two_pi() / time
}

/// `c = 0.99 · (λ_floor + σ²)`.
pub fn auto_rotation_constant<T: Real>(lambda_floor: T, noise: T) -> Result<T> {
    let c = T::lit(AUTO_C_FACTOR) * (lambda_floor + noise);
    if !(c > T::zero()) {
        return Err(Error::invalid(format!(
            "no positive rotation constant for λ_floor = {lambda_floor}, σ² = {noise}"
        )));
    }
    Ok(c)
}

fn rotation_amplitude<T: Real>(c: T, lambda: T, noise: T) -> Option<T> {
    let denom = lambda + noise;
    if denom <= T::zero() {
        return None;
    }
    let a = c / denom;
    (a.magnitude() <= T::one() + T::negligible()).then(|| a.min(T::one()).max(-T::one()))
}

/// Readout distribution of textbook phase estimation for eigenphase `phase`
/// (in turns) on `n_bits` bits.
pub fn qpe_distribution<T: Real>(phase: T, n_bits: usize) -> Vec<T> {
    let n = 1usize << n_bits;
    let nt = T::from_usize_lossy(n);
    (0..n)
        .map(|m| {
            let delta = T::from_usize_lossy(m) / nt - phase;
            let amp = (0..n).fold(Complex::new(T::zero(), T::zero()), |acc, x| {
                acc + T::cis(T::two_pi() * T::from_usize_lossy(x) * delta)
            }) / real(nt);
            amp.norm_sqr()
        })
        .collect()
}

fn check_oracle<T: Real>(oracle: &EvolutionOracle<T>, cfg: &QpeConfig<T>) -> Result<()> {
    oracle.check_wraparound()?;
    if oracle.powers() < cfg.n_bits {
        return Err(Error::invalid(format!(
            "oracle caches {} powers, phase estimation needs {}",
            oracle.powers(),
            cfg.n_bits
        )));
    }
    let dt = (oracle.base_time() - cfg.evolution_time).magnitude();
    if dt > T::structural_tolerance() * cfg.evolution_time {
        return Err(Error::invalid("oracle time does not match configured evolution time"));
    }
    Ok(())
}

/// Hadamards, controlled powers of `e^{-iKt}` and a Fourier transform on
/// the eigenvalue register, so eigenphase `λt/2π` is written as `m / 2^n`.
fn qpe_mut<T: Real>(
    state: &mut StateVector<T>,
    oracle: &EvolutionOracle<T>,
    n_bits: usize,
    controls: &[Control],
    inverse: bool,
) -> Result<()> {
    let h = gates::hadamard::<T>();
    let eig = state.layout().qubits(EIGEN)?;
    if eig.len() != n_bits {
        return Err(Error::invalid("eigenvalue register width differs from qpe bits"));
    }
    let resolved = state.resolve_controls(controls)?;
    let hadamards = |s: &mut StateVector<T>| -> Result<()> {
        for q in eig.clone() {
            s.apply_matrix_mut(&h, &[q], &resolved)?;
        }
        Ok(())
    };
    let powers = |s: &mut StateVector<T>, adjoint: bool| -> Result<()> {
        for b in 0..n_bits {
            let u = oracle.unitary(n_bits - 1 - b)?;
            let u = if adjoint { u.adjoint() } else { u.clone() };
            let mut ctl = controls.to_vec();
            ctl.push(Control::bit(EIGEN, b, true));
            s.apply_controlled_mut(&u, &ctl)?;
        }
        Ok(())
    };
    if inverse {
        state.qft_mut(EIGEN, true, controls)?;
        powers(state, true)?;
        hadamards(state)?;
    } else {
        hadamards(state)?;
        powers(state, false)?;
        state.qft_mut(EIGEN, false, controls)?;
    }
    Ok(())
}

/// Phase estimation on a state holding the `system` register. An `eigen`
/// register in `|0⟩` is appended if absent.
pub fn phase_estimate<T: Real>(
    oracle: &EvolutionOracle<T>,
    input: &StateVector<T>,
    cfg: &QpeConfig<T>,
) -> Result<StateVector<T>> {
    check_oracle(oracle, cfg)?;
    if input.layout().width(SYSTEM)? != oracle.system_width() {
        return Err(Error::invalid("system register width does not match the oracle"));
    }
    let mut state = if input.layout().contains(EIGEN) {
        input.clone()
    } else {
        input.tensor(&StateVector::zero(Layout::new(&[(EIGEN, cfg.n_bits)])?))?
    };
    qpe_mut(&mut state, oracle, cfg.n_bits, &[], false)?;
    Ok(state)
}

/// State after the eigenvalue-conditioned rotation (before or after
/// uncomputation, depending on how it was produced).
#[derive(Clone, Debug)]
pub struct ConditionedState<T: Real> {
    pub state: StateVector<T>,
}

impl<T: Real> ConditionedState<T> {
    /// `(amp(flag=0), amp(flag=1))` for one eigenvalue-register value and one
    /// system basis state.
    pub fn flag_amplitudes(&self, system: usize, eigen: usize) -> Result<(Complex<T>, Complex<T>)> {
        let layout = self.state.layout();
        let mut values = Vec::new();
        for r in layout.registers() {
            values.push(match r.name.as_str() {
                SYSTEM => system,
                EIGEN => eigen,
                _ => 0,
            });
        }
        let flag_pos = layout
            .registers()
            .iter()
            .position(|r| r.name == FLAG)
            .ok_or_else(|| Error::invalid("state has no flag register"))?;
        let a0 = self.state.amplitude(&values)?;
        values[flag_pos] = 1;
        let a1 = self.state.amplitude(&values)?;
        Ok((a0, a1))
    }
}

fn rotation_gates<T: Real>(
    cfg: &QpeConfig<T>,
    noise: T,
    populated: &dyn Fn(usize) -> bool,
) -> Result<Vec<[Complex<T>; 4]>> {
    (0..1usize << cfg.n_bits)
        .map(|m| {
            let lambda = cfg.decode(m);
            let a = match rotation_amplitude(cfg.rotation_constant, lambda, noise) {
                Some(a) => a,
                None if populated(m) => {
                    return Err(Error::invalid(format!(
                        "c / (λ̃ + σ²) = {} / ({lambda} + {noise}) exceeds 1 on a populated branch",
                        cfg.rotation_constant
                    )))
                }
                None => T::one(),
            };
            let g = gates::amplitude_rotation(a);
            Ok([g[(0, 0)], g[(0, 1)], g[(1, 0)], g[(1, 1)]])
        })
        .collect()
}

fn apply_rotation_mut<T: Real>(
    state: &mut StateVector<T>,
    gates: &[[Complex<T>; 4]],
    controls: &[Control],
) -> Result<()> {
    let selector: Vec<usize> = state.layout().qubits(EIGEN)?.collect();
    let target = state.layout().qubits(FLAG)?.start;
    let resolved = state.resolve_controls(controls)?;
    state.apply_multiplexed_mut(&selector, target, gates, &resolved)
}

/// Rotates a fresh `flag` qubit by `c / (λ̃ + σ²)` with `λ̃` decoded from the
/// eigenvalue register.
pub fn conditioned_rotation<T: Real>(s: &StateVector<T>, cfg: &QpeConfig<T>, noise: T) -> Result<ConditionedState<T>> {
    let probs = s.register_probabilities(EIGEN)?;
    let threshold = T::lit(POPULATED_THRESHOLD);
    let gates = rotation_gates(cfg, noise, &|m| probs[m] > threshold)?;
    let mut state = if s.layout().contains(FLAG) {
        s.clone()
    } else {
        s.tensor(&StateVector::zero(Layout::new(&[(FLAG, 1)])?))?
    };
    apply_rotation_mut(&mut state, &gates, &[])?;
    Ok(ConditionedState { state })
}

#[derive(Clone, Debug)]
enum Route<T: Real> {
    /// Rotation applied directly in the eigenbasis with exact eigenvalues.
    Exact { matrix: UnitaryOp<T> },
    Qpe {
        oracle: EvolutionOracle<T>,
        cfg: QpeConfig<T>,
        gates: Vec<[Complex<T>; 4]>,
    },
}

/// The operator `U` of the inversion stage.
#[derive(Clone, Debug)]
pub struct InversionUnitary<T: Real> {
    route: Route<T>,
    rotation_constant: T,
    noise: T,
    system_width: usize,
}

impl<T: Real> InversionUnitary<T> {
    pub fn rotation_constant(&self) -> T {
        self.rotation_constant
    }

    pub fn noise(&self) -> T {
        self.noise
    }

    pub fn system_width(&self) -> usize {
        self.system_width
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.route, Route::Exact { .. })
    }

    /// Width of the internal eigenvalue register (0 in exact mode).
    pub fn eigen_width(&self) -> usize {
        match &self.route {
            Route::Exact { .. } => 0,
            Route::Qpe { cfg, .. } => cfg.n_bits,
        }
    }

    /// Registers `U` acts on, in order: system, optional eigen, flag.
    pub fn registers(&self) -> Vec<(&'static str, usize)> {
        let mut regs = vec![(SYSTEM, self.system_width)];
        if self.eigen_width() > 0 {
            regs.push((EIGEN, self.eigen_width()));
        }
        regs.push((FLAG, 1));
        regs
    }

    /// Applies `U` in place on a state containing the registers from
    /// [`Self::registers`], gated by `controls`.
    pub(crate) fn apply_mut(&self, state: &mut StateVector<T>, controls: &[Control]) -> Result<()> {
        match &self.route {
            Route::Exact { matrix } => state.apply_controlled_mut(matrix, controls),
            Route::Qpe { oracle, cfg, gates } => {
                qpe_mut(state, oracle, cfg.n_bits, controls, false)?;
                apply_rotation_mut(state, gates, controls)?;
                qpe_mut(state, oracle, cfg.n_bits, controls, true)
            }
        }
    }

    pub fn apply(&self, state: &StateVector<T>) -> Result<StateVector<T>> {
        let mut out = state.clone();
        self.apply_mut(&mut out, &[])?;
        Ok(out)
    }

    /// `U |v⟩_system |0⟩_eigen |0⟩_flag`.
    pub fn apply_to_vector(&self, v: &DVector<T>) -> Result<StateVector<T>> {
        let regs = self.registers();
        let mut state = crate::encoding::unit_state(v, SYSTEM, self.system_width)?;
        for &(name, width) in &regs[1..] {
            state = state.tensor(&StateVector::zero(Layout::new(&[(name, width)])?))?;
        }
        self.apply(&state)
    }

    /// Dense matrix of `U` over every register it touches.
    pub fn to_unitary_op(&self) -> Result<UnitaryOp<T>> {
        let regs = self.registers();
        let layout = Layout::new(&regs)?;
        if layout.num_qubits() > 12 {
            return Err(Error::invalid("dense form limited to 12 qubits"));
        }
        let dim = layout.dim();
        let mut m = CMatrix::zeros(dim, dim);
        for col in 0..dim {
            let mut amps = vec![real(T::zero()); dim];
            amps[col] = real(T::one());
            let mut s = StateVector::from_amplitudes(layout.clone(), amps)?;
            self.apply_mut(&mut s, &[])?;
            m.set_column(col, &DVector::from_column_slice(s.amplitudes()));
        }
        let names: Vec<&str> = regs.iter().map(|r| r.0).collect();
        UnitaryOp::new(m, &names)
    }

    /// Block `⟨0|_eigen U |0⟩_eigen` on `system ⊗ flag`.
    pub fn compressed_block(&self) -> Result<CMatrix<T>> {
        let full = self.to_unitary_op()?;
        let e = self.eigen_width();
        let sys = 1usize << self.system_width;
        let mut block = CMatrix::zeros(2 * sys, 2 * sys);
        let idx = |s: usize, f: usize| (s << (e + 1)) | f;
        for s_out in 0..sys {
            for f_out in 0..2 {
                for s_in in 0..sys {
                    for f_in in 0..2 {
                        block[(2 * s_out + f_out, 2 * s_in + f_in)] =
                            full.matrix()[(idx(s_out, f_out), idx(s_in, f_in))];
                    }
                }
            }
        }
        Ok(block)
    }
}

/// `U` via phase estimation on `oracle`.
pub fn build_u<T: Real>(oracle: &EvolutionOracle<T>, cfg: &QpeConfig<T>, noise: T) -> Result<InversionUnitary<T>> {
    check_oracle(oracle, cfg)?;
    // Any register value a system eigenvector can populate must admit a
    // valid rotation.
    let threshold = T::lit(POPULATED_THRESHOLD);
    let dists: Vec<Vec<T>> = oracle
        .eigenvalues()
        .iter()
        .map(|&l| qpe_distribution(l * cfg.evolution_time / T::two_pi(), cfg.n_bits))
        .collect();
    let gates = rotation_gates(cfg, noise, &|m| dists.iter().any(|d| d[m] > threshold))?;
    Ok(InversionUnitary {
        route: Route::Qpe {
            oracle: oracle.clone(),
            cfg: *cfg,
            gates,
        },
        rotation_constant: cfg.rotation_constant,
        noise,
        system_width: oracle.system_width(),
    })
}

/// `U` built directly in the eigenbasis with exact eigenvalues:
/// `Σ_j |u_j⟩⟨u_j| ⊗ R(c / (λ_j + σ²))`.
pub fn build_exact_u<T: Real>(
    eigenvalues: &DVector<T>,
    eigenvectors: &DMatrix<T>,
    rotation_constant: T,
    noise: T,
) -> Result<InversionUnitary<T>> {
    let n = eigenvalues.len();
    if !n.is_power_of_two() || eigenvectors.nrows() != n || eigenvectors.ncols() != n {
        return Err(Error::invalid("eigenbasis must be square with power-of-two dimension"));
    }
    if let Some(&l) = eigenvalues.iter().find(|&&l| l < -T::structural_tolerance()) {
        return Err(Error::invalid(format!("negative eigenvalue {l} rejected")));
    }
    let mut m = CMatrix::zeros(2 * n, 2 * n);
    for j in 0..n {
        let a = rotation_amplitude(rotation_constant, eigenvalues[j], noise).ok_or_else(|| {
            Error::invalid(format!(
                "c / (λ + σ²) = {rotation_constant} / ({} + {noise}) exceeds 1",
                eigenvalues[j]
            ))
        })?;
        let r = gates::amplitude_rotation(a);
        let u = eigenvectors.column(j).map(real);
        let proj = &u * u.transpose();
        m += proj.kronecker(&r);
    }
    let matrix = UnitaryOp::new(m, &[SYSTEM, FLAG])?;
    Ok(InversionUnitary {
        route: Route::Exact { matrix },
        rotation_constant,
        noise,
        system_width: n.trailing_zeros() as usize,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hamiltonian::pad_hamiltonian;
    use crate::statevector::spectral_norm;
    use approx::assert_relative_eq;
    use std::f64::consts::PI;

    /// Symmetric matrix with prescribed spectrum in a rotated basis.
    fn with_spectrum(values: &[f64], angle: f64) -> DMatrix<f64> {
        let n = values.len();
        let mut q = DMatrix::<f64>::identity(n, n);
        for i in 0..n - 1 {
            let mut g = DMatrix::<f64>::identity(n, n);
            let a = angle * (i + 1) as f64;
            g[(i, i)] = a.cos();
            g[(i, i + 1)] = -a.sin();
            g[(i + 1, i)] = a.sin();
            g[(i + 1, i + 1)] = a.cos();
            q *= g;
        }
        &q * DMatrix::from_diagonal(&DVector::from_column_slice(values)) * q.transpose()
    }

    fn system_state(v: &DVector<f64>) -> StateVector<f64> {
        crate::encoding::unit_state(v, SYSTEM, v.len().trailing_zeros() as usize).unwrap()
    }

    #[test]
    fn dyadic_eigenvector_reads_exact_register() {
        // λ t / 2π = 0.25 with two bits → register |01⟩.
        let k = with_spectrum(&[1.0, 0.5], 0.4);
        let t = 2.0 * PI * 0.25;
        let oracle = EvolutionOracle::new(k.clone(), t, 2).unwrap();
        let cfg = QpeConfig::new(2, t, 0.1).unwrap();
        let u0 = oracle.eigenvectors().column(0).into_owned();
        let out = phase_estimate(&oracle, &system_state(&u0), &cfg).unwrap();
        let p = out.register_probabilities(EIGEN).unwrap();
        assert_relative_eq!(p[1], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn degenerate_spectrum_gives_single_branch() {
        let k = DMatrix::<f64>::identity(4, 4);
        let t = EvolutionOracle::<f64>::default_time(1.0);
        let oracle = EvolutionOracle::new(k, t, 3).unwrap();
        let cfg = QpeConfig::new(3, t, 0.1).unwrap();
        let v = DVector::from_column_slice(&[0.1, -0.7, 0.3, 0.2]);
        let out = phase_estimate(&oracle, &system_state(&v), &cfg).unwrap();
        let p = out.register_probabilities(EIGEN).unwrap();
        let expected = qpe_distribution(1.0 * t / (2.0 * PI), 3);
        for (a, b) in p.iter().zip(&expected) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn random_readout_matches_classical_spectrum() {
        // Spectrum chosen so that λ t/2π is a 4-bit dyadic.
        let phases = [11.0, 6.0, 3.0, 1.0];
        let t = 1.3;
        let values: Vec<f64> = phases.iter().map(|p| p / 16.0 * 2.0 * PI / t).collect();
        let k = with_spectrum(&values, 0.7);
        let oracle = EvolutionOracle::new(k, t, 4).unwrap();
        let cfg = QpeConfig::new(4, t, 0.01).unwrap();
        for j in 0..4 {
            let u = oracle.eigenvectors().column(j).into_owned();
            let out = phase_estimate(&oracle, &system_state(&u), &cfg).unwrap();
            let p = out.register_probabilities(EIGEN).unwrap();
            let m = p
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert!((cfg.decode(m) - oracle.eigenvalues()[j]).abs() <= 2.0 * PI / t / 16.0);
            assert_relative_eq!(p[m], 1.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn wraparound_rejected() {
        let k = DMatrix::<f64>::identity(2, 2) * 2.0;
        let oracle = EvolutionOracle::new(k, PI, 3).unwrap();
        let cfg = QpeConfig::new(3, PI, 0.1).unwrap();
        let s = system_state(&DVector::from_column_slice(&[1.0, 0.0]));
        assert!(matches!(
            phase_estimate(&oracle, &s, &cfg),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn rotation_amplitudes() {
        // Single branch decoding to λ̃ = 1, σ² = 0, c = 0.5.
        let n = 2;
        let t = 2.0 * PI / 4.0; // register value 1 decodes to 1
        let cfg = QpeConfig::new(n, t, 0.5).unwrap();
        assert_relative_eq!(cfg.decode(1), 1.0, epsilon = 1e-14);
        let s = StateVector::basis(Layout::new(&[(SYSTEM, 1), (EIGEN, n)]).unwrap(), &[0, 1]).unwrap();
        let out = conditioned_rotation(&s, &cfg, 0.0).unwrap();
        let (a0, a1) = out.flag_amplitudes(0, 1).unwrap();
        assert_relative_eq!(a1.re, 0.5, epsilon = 1e-14);
        assert_relative_eq!(a0.re, 0.75f64.sqrt(), epsilon = 1e-14);

        // c too large for the populated branch
        let big = QpeConfig::new(n, t, 1.5).unwrap();
        assert!(matches!(
            conditioned_rotation(&s, &big, 0.0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn saturation_and_two_branch_amplitudes() {
        let n = 3;
        let t = 2.0 * PI / 8.0; // register value m decodes to m
        let noise = 0.25;
        let lmin = 2.0;
        let c = lmin + noise;
        let cfg = QpeConfig::new(n, t, c).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        let layout = Layout::new(&[(SYSTEM, 1), (EIGEN, n)]).unwrap();
        let mut amps = vec![0.0; 16];
        amps[layout.index_of(&[0, 2]).unwrap()] = h;
        amps[layout.index_of(&[1, 5]).unwrap()] = h;
        let s = StateVector::from_real(layout, &amps).unwrap();
        let out = conditioned_rotation(&s, &cfg, noise).unwrap();
        let (_, a1) = out.flag_amplitudes(0, 2).unwrap();
        assert_relative_eq!(a1.re, h, epsilon = 1e-12);
        let (_, a1) = out.flag_amplitudes(1, 5).unwrap();
        assert_relative_eq!(a1.re, h * c / (5.0 + noise), epsilon = 1e-12);
    }

    fn dyadic_setup(bits: usize) -> (EvolutionOracle<f64>, QpeConfig<f64>, f64) {
        let phases = [7.0, 5.0, 2.0, 1.0];
        let t = 0.9;
        let values: Vec<f64> = phases.iter().map(|p| p / 8.0 * 2.0 * PI / t).collect();
        let k = with_spectrum(&values, 0.3);
        let noise = 0.1;
        let lmin = values[3];
        let c = auto_rotation_constant(lmin, noise).unwrap();
        let oracle = EvolutionOracle::new(k, t, bits).unwrap();
        (oracle, QpeConfig::new(bits, t, c).unwrap(), noise)
    }

    #[test]
    fn inversion_unitary_exact_qpe_regime() {
        let (oracle, cfg, noise) = dyadic_setup(3);
        let u = build_u(&oracle, &cfg, noise).unwrap();
        let dense = u.to_unitary_op().unwrap();
        assert!(dense.unitarity_error() < 1e-10);

        let exact = build_exact_u(
            oracle.eigenvalues(),
            oracle.eigenvectors(),
            cfg.rotation_constant,
            noise,
        )
        .unwrap();
        let block = u.compressed_block().unwrap();
        let direct = exact.to_unitary_op().unwrap();
        assert!(spectral_norm(&(block - direct.matrix())) < 1e-10);

        for j in 0..4 {
            let uj = oracle.eigenvectors().column(j).into_owned();
            let out = u.apply_to_vector(&uj).unwrap();
            let p_eig = out.register_probabilities(EIGEN).unwrap();
            assert!(1.0 - p_eig[0] <= 1e-10);
            let a = cfg.rotation_constant / (oracle.eigenvalues()[j] + noise);
            let s = ConditionedState { state: out };
            let mut overlap1 = 0.0;
            for sys in 0..4 {
                let (_, a1) = s.flag_amplitudes(sys, 0).unwrap();
                overlap1 += uj[sys] * a1.re;
            }
            assert_relative_eq!(overlap1, a, epsilon = 1e-10);
        }
    }

    #[test]
    fn exact_route_is_unitary_and_rejects_large_c() {
        let k = pad_hamiltonian(&with_spectrum(&[1.7, 0.9, 0.2], 0.5));
        let (vals, vecs) = crate::classical::sorted_symmetric_eigen(&k);
        let u = build_exact_u(&vals, &vecs, 0.2, 0.1).unwrap();
        assert!(u.to_unitary_op().unwrap().unitarity_error() < 1e-10);
        assert!(build_exact_u(&vals, &vecs, 0.5, 0.1).is_err());
    }

    fn kernel_instance() -> (DMatrix<f64>, DVector<f64>) {
        let x: [f64; 4] = [-1.1, -0.2, 0.35, 1.4];
        let k = DMatrix::from_fn(4, 4, |i, j| (-(x[i] - x[j]) * (x[i] - x[j]) / 2.0).exp());
        (k, DVector::from_column_slice(&[0.4, -0.3, 0.8, 0.2]))
    }

    #[test]
    fn non_dyadic_branch_is_readout_weighted_rotation() {
        // After uncomputation the eigen=0, flag=1 amplitude along u_j is the
        // rotation amplitude averaged over the readout distribution of λ_j.
        let (k, _) = kernel_instance();
        let noise = 0.1;
        let c = 0.99 * noise;
        let (vals, vecs) = crate::classical::sorted_symmetric_eigen(&k);
        let t = EvolutionOracle::<f64>::default_time(vals[0]);
        for bits in [3, 5] {
            let oracle = EvolutionOracle::new(k.clone(), t, bits).unwrap();
            let cfg = QpeConfig::new(bits, t, c).unwrap();
            let u = build_u(&oracle, &cfg, noise).unwrap();
            for j in 0..4 {
                let uj = vecs.column(j).into_owned();
                let out = u.apply_to_vector(&uj).unwrap();
                let branch = out.branch(FLAG, 1).unwrap().branch(EIGEN, 0).unwrap();
                let along: f64 = (0..4).map(|s| uj[s] * branch.amplitudes()[s].re).sum();
                let dist = qpe_distribution(vals[j] * t / (2.0 * PI), bits);
                let expected: f64 = dist
                    .iter()
                    .enumerate()
                    .map(|(m, p)| p * (c / (cfg.decode(m) + noise)).min(1.0))
                    .sum();
                assert!((along - expected).abs() < 1e-10, "bits {bits}, j {j}");
            }
        }
    }

    #[test]
    fn branch_overlap_improves_with_bits() {
        let (k, v) = kernel_instance();
        let noise = 0.1;
        let (vals, vecs) = crate::classical::sorted_symmetric_eigen(&k);
        let c = 0.99 * noise;
        let ideal = build_exact_u(&vals, &vecs, c, noise)
            .unwrap()
            .apply_to_vector(&v)
            .unwrap();
        let ideal1 = ideal.branch(FLAG, 1).unwrap();
        let t = EvolutionOracle::<f64>::default_time(vals[0]);
        let mut last = 0.0;
        for bits in [4, 6, 8] {
            let oracle = EvolutionOracle::new(k.clone(), t, bits).unwrap();
            let cfg = QpeConfig::new(bits, t, c).unwrap();
            let out = build_u(&oracle, &cfg, noise).unwrap().apply_to_vector(&v).unwrap();
            let branch = out.branch(FLAG, 1).unwrap().branch(EIGEN, 0).unwrap();
            let overlap = ideal1.inner(&branch).unwrap().norm_sqr() / (ideal1.norm_sqr() * branch.norm_sqr());
            assert!(overlap + 1e-12 >= last, "bits {bits}: {overlap} < {last}");
            last = overlap;
        }
        assert!(last > 0.999);
    }
}
