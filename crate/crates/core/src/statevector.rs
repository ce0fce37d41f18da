//! Dense statevector engine over named registers.
//!
//! Ordering convention: registers are laid out most-significant-first in the
//! order they were declared, and inside a register qubit 0 is the most
//! significant bit. Global qubit `q` of an `n`-qubit state therefore lives at
//! bit position `n - 1 - q` of the amplitude index.

use std::collections::BTreeMap;
use std::ops::Range;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::{Error, Result};
use crate::scalar::{modulus, real, Real};

/// Hard cap on the simulated register size.
pub const MAX_QUBITS: usize = 22;

pub type CMatrix<T> = DMatrix<Complex<T>>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Register {
    pub name: String,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    registers: Vec<Register>,
}

impl Layout {
    pub fn new(registers: &[(&str, usize)]) -> Result<Self> {
        Self::from_registers(
            registers
                .iter()
                .map(|&(name, width)| Register {
                    name: name.to_owned(),
                    width,
                })
                .collect(),
        )
    }

    pub fn from_registers(registers: Vec<Register>) -> Result<Self> {
        for (i, r) in registers.iter().enumerate() {
            if r.width == 0 {
                return Err(Error::invalid(format!("register `{}` has zero width", r.name)));
            }
            if registers[..i].iter().any(|o| o.name == r.name) {
                return Err(Error::invalid(format!("duplicate register `{}`", r.name)));
            }
        }
        let total: usize = registers.iter().map(|r| r.width).sum();
        if total > MAX_QUBITS {
            return Err(Error::invalid(format!(
                "{total} qubits requested, simulator is capped at {MAX_QUBITS}"
            )));
        }
        Ok(Layout { registers })
    }

    pub fn registers(&self) -> &[Register] {
        &self.registers
    }

    pub fn num_qubits(&self) -> usize {
        self.registers.iter().map(|r| r.width).sum()
    }

    pub fn dim(&self) -> usize {
        1 << self.num_qubits()
    }

    /// Global qubit indices covered by a register.
    pub fn qubits(&self, name: &str) -> Result<Range<usize>> {
        let mut start = 0;
        for r in &self.registers {
            if r.name == name {
                return Ok(start..start + r.width);
            }
            start += r.width;
        }
        Err(Error::invalid(format!("no register named `{name}`")))
    }

    pub fn width(&self, name: &str) -> Result<usize> {
        Ok(self.qubits(name)?.len())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.registers.iter().any(|r| r.name == name)
    }

    pub fn concat(&self, other: &Layout) -> Result<Layout> {
        let mut regs = self.registers.clone();
        regs.extend(other.registers.iter().cloned());
        Layout::from_registers(regs)
    }

    pub fn without(&self, name: &str) -> Result<Layout> {
        self.qubits(name)?;
        Layout::from_registers(self.registers.iter().filter(|r| r.name != name).cloned().collect())
    }

    /// Value held by register `name` in basis index `index`.
    pub fn value_of(&self, index: usize, name: &str) -> Result<usize> {
        let q = self.qubits(name)?;
        Ok(extract_bits(index, self.num_qubits(), &q))
    }

    /// Basis index of the product state with the given per-register values.
    pub fn index_of(&self, values: &[usize]) -> Result<usize> {
        if values.len() != self.registers.len() {
            return Err(Error::invalid(format!(
                "{} register values for {} registers",
                values.len(),
                self.registers.len()
            )));
        }
        let mut index = 0usize;
        for (r, &v) in self.registers.iter().zip(values) {
            if v >> r.width != 0 {
                return Err(Error::invalid(format!(
                    "value {v} does not fit register `{}` of width {}",
                    r.name, r.width
                )));
            }
            index = (index << r.width) | v;
        }
        Ok(index)
    }
}

#[inline]
fn extract_bits(index: usize, n: usize, qubits: &Range<usize>) -> usize {
    let shift = n - qubits.end;
    (index >> shift) & ((1usize << qubits.len()) - 1)
}

/// A control condition on one qubit of a register.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Control {
    pub register: String,
    pub bit: usize,
    pub state: bool,
}

impl Control {
    /// Fires when qubit 0 of `register` is `|1⟩`.
    pub fn one(register: &str) -> Self {
        Control {
            register: register.to_owned(),
            bit: 0,
            state: true,
        }
    }

    /// Fires when qubit 0 of `register` is `|0⟩`.
    pub fn zero(register: &str) -> Self {
        Control {
            register: register.to_owned(),
            bit: 0,
            state: false,
        }
    }

    pub fn bit(register: &str, bit: usize, state: bool) -> Self {
        Control {
            register: register.to_owned(),
            bit,
            state,
        }
    }
}

/// Unitary acting on the concatenation of the named target registers.
#[derive(Clone, Debug, PartialEq)]
pub struct UnitaryOp<T: Real> {
    matrix: CMatrix<T>,
    targets: Vec<String>,
}

impl<T: Real> UnitaryOp<T> {
    /// Checks `U†U = I` in spectral norm at the scalar's structural tolerance.
    pub fn new(matrix: CMatrix<T>, targets: &[&str]) -> Result<Self> {
        let op = Self::from_parts(matrix, targets)?;
        let err = op.unitarity_error();
        if err > T::structural_tolerance() {
            return Err(Error::invalid(format!("matrix is not unitary (‖U†U − I‖ = {err:e})")));
        }
        Ok(op)
    }

    fn from_parts(matrix: CMatrix<T>, targets: &[&str]) -> Result<Self> {
        if !matrix.is_square() || !matrix.nrows().is_power_of_two() {
            return Err(Error::invalid(format!(
                "unitary must be 2^k × 2^k, got {} × {}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        if targets.is_empty() {
            return Err(Error::invalid("unitary needs at least one target register"));
        }
        Ok(UnitaryOp {
            matrix,
            targets: targets.iter().map(|s| (*s).to_owned()).collect(),
        })
    }

    /// Skips the unitarity check; for operators that are unitary by construction
    /// but too large to verify cheaply.
    pub(crate) fn trusted(matrix: CMatrix<T>, targets: &[&str]) -> Result<Self> {
        Self::from_parts(matrix, targets)
    }

    pub fn matrix(&self) -> &CMatrix<T> {
        &self.matrix
    }

    pub fn targets(&self) -> &[String] {
        &self.targets
    }

    pub fn num_qubits(&self) -> usize {
        self.matrix.nrows().trailing_zeros() as usize
    }

    /// Same matrix, acting on different registers.
    pub fn on(&self, targets: &[&str]) -> Result<Self> {
        Self::from_parts(self.matrix.clone(), targets)
    }

    pub fn adjoint(&self) -> Self {
        UnitaryOp {
            matrix: self.matrix.adjoint(),
            targets: self.targets.clone(),
        }
    }

    /// `self · other` (apply `other` first).
    pub fn compose(&self, other: &UnitaryOp<T>) -> Result<Self> {
        if self.targets != other.targets || self.matrix.nrows() != other.matrix.nrows() {
            return Err(Error::invalid("composed unitaries must share targets"));
        }
        Ok(UnitaryOp {
            matrix: &self.matrix * &other.matrix,
            targets: self.targets.clone(),
        })
    }

    /// Spectral norm of `U†U − I`.
    pub fn unitarity_error(&self) -> T {
        let n = self.matrix.nrows();
        spectral_norm(&(self.matrix.adjoint() * &self.matrix - CMatrix::<T>::identity(n, n)))
    }
}

/// Largest singular value.
pub fn spectral_norm<T: Real>(m: &CMatrix<T>) -> T {
    if m.is_empty() {
        return T::zero();
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .fold(T::zero(), |a, &b| a.max(b))
}

/// Standard gate matrices.
/// Unitary reflection `H` with `H|0⟩ = |φ⟩`, applied in `O(d)` without
/// forming the matrix: `H = e^{iθ}(I − 2ww†/‖w‖²)`, `w = |0⟩ − e^{−iθ}|φ⟩`,
/// `θ = arg φ₀`.
#[derive(Clone, Debug, PartialEq)]
pub struct Reflection<T: Real> {
    w: Vec<Complex<T>>,
    scale: T,
    phase: Complex<T>,
}

impl<T: Real> Reflection<T> {
    /// `phi` must be a unit vector.
    pub fn preparing(phi: &[Complex<T>]) -> Result<Self> {
        let norm: T = phi.iter().map(|a| a.norm_sqr()).fold(T::zero(), |a, b| a + b);
        if phi.is_empty() || (norm - T::one()).magnitude() > T::structural_tolerance() {
            return Err(Error::invalid("reflection target must be a unit vector"));
        }
        let r0 = modulus(phi[0]);
        let phase = if r0 > T::zero() {
            phi[0] / real(r0)
        } else {
            real(T::one())
        };
        let mut w: Vec<Complex<T>> = phi.iter().map(|&a| -(a * phase.conj())).collect();
        w[0] += real(T::one());
        let wn: T = w.iter().map(|a| a.norm_sqr()).fold(T::zero(), |a, b| a + b);
        let scale = if wn > T::negligible() * T::negligible() {
            T::lit(2.0) / wn
        } else {
            T::zero()
        };
        Ok(Reflection { w, scale, phase })
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    fn reflect(&self, buf: &mut [Complex<T>]) {
        if self.scale == T::zero() {
            return;
        }
        let dot = self
            .w
            .iter()
            .zip(buf.iter())
            .fold(real(T::zero()), |acc, (w, b)| acc + w.conj() * b)
            * real(self.scale);
        for (b, w) in buf.iter_mut().zip(&self.w) {
            *b -= w * dot;
        }
    }

    pub fn apply(&self, buf: &mut [Complex<T>]) {
        self.reflect(buf);
        for b in buf.iter_mut() {
            *b *= self.phase;
        }
    }

    pub fn apply_adjoint(&self, buf: &mut [Complex<T>]) {
        for b in buf.iter_mut() {
            *b *= self.phase.conj();
        }
        self.reflect(buf);
    }

    /// Dense matrix, for tests and small systems.
    pub fn to_matrix(&self) -> CMatrix<T> {
        let d = self.dim();
        let mut m = CMatrix::zeros(d, d);
        for c in 0..d {
            let mut col = vec![real(T::zero()); d];
            col[c] = real(T::one());
            self.apply(&mut col);
            for (r, v) in col.into_iter().enumerate() {
                m[(r, c)] = v;
            }
        }
        m
    }
}

pub mod gates {
    use super::*;

    fn c<T: Real>(re: f64, im: f64) -> Complex<T> {
        Complex::new(T::lit(re), T::lit(im))
    }

    pub fn identity<T: Real>(qubits: usize) -> CMatrix<T> {
        let n = 1 << qubits;
        CMatrix::identity(n, n)
    }

    pub fn pauli_x<T: Real>() -> CMatrix<T> {
        DMatrix::from_row_slice(2, 2, &[c(0., 0.), c(1., 0.), c(1., 0.), c(0., 0.)])
    }

    pub fn pauli_z<T: Real>() -> CMatrix<T> {
        DMatrix::from_row_slice(2, 2, &[c(1., 0.), c(0., 0.), c(0., 0.), c(-1., 0.)])
    }

    pub fn hadamard<T: Real>() -> CMatrix<T> {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        DMatrix::from_row_slice(2, 2, &[c(h, 0.), c(h, 0.), c(h, 0.), c(-h, 0.)])
    }

    pub fn swap<T: Real>() -> CMatrix<T> {
        let mut m = CMatrix::zeros(4, 4);
        for (r, col) in [(0, 0), (1, 2), (2, 1), (3, 3)] {
            m[(r, col)] = Complex::new(T::one(), T::zero());
        }
        m
    }

    /// Real rotation `|0⟩ ↦ √(1−a²)|0⟩ + a|1⟩`, `|1⟩ ↦ −a|0⟩ + √(1−a²)|1⟩`.
    pub fn amplitude_rotation<T: Real>(a: T) -> CMatrix<T> {
        let s = a;
        let co = (T::one() - a * a).max(T::zero()).sqrt();
        DMatrix::from_row_slice(2, 2, &[real(co), real(-s), real(s), real(co)])
    }

    /// Dense matrix of the Fourier transform `|j⟩ ↦ N^{-1/2} Σ_k e^{2πijk/N}|k⟩`.
    pub fn qft_matrix<T: Real>(qubits: usize) -> CMatrix<T> {
        let n = 1usize << qubits;
        let norm = T::one() / T::from_usize_lossy(n).sqrt();
        CMatrix::from_fn(n, n, |k, j| {
            let phase = T::two_pi() * T::from_usize_lossy((j * k) % n) / T::from_usize_lossy(n);
            T::cis(phase) * norm
        })
    }
}

/// Dense amplitude vector over a [`Layout`].
///
/// States built by projection carry a `subnormalized` flag and are exempt from
/// the unit-norm invariant.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector<T: Real> {
    amplitudes: Vec<Complex<T>>,
    layout: Layout,
    subnormalized: bool,
}

impl<T: Real> StateVector<T> {
    /// All registers in `|0⟩`.
    pub fn zero(layout: Layout) -> Self {
        let mut amplitudes = vec![Complex::new(T::zero(), T::zero()); layout.dim()];
        amplitudes[0] = Complex::new(T::one(), T::zero());
        StateVector {
            amplitudes,
            layout,
            subnormalized: false,
        }
    }

    pub fn basis(layout: Layout, values: &[usize]) -> Result<Self> {
        let idx = layout.index_of(values)?;
        let mut s = Self::zero(layout);
        s.amplitudes[0] = Complex::new(T::zero(), T::zero());
        s.amplitudes[idx] = Complex::new(T::one(), T::zero());
        Ok(s)
    }

    pub fn from_amplitudes(layout: Layout, amplitudes: Vec<Complex<T>>) -> Result<Self> {
        let s = Self::from_amplitudes_unnormalized(layout, amplitudes)?;
        let dev = (s.norm_sqr() - T::one()).magnitude();
        if dev > T::structural_tolerance() {
            return Err(Error::invalid(format!(
                "amplitudes are not normalized (|‖ψ‖² − 1| = {dev:e})"
            )));
        }
        Ok(StateVector {
            subnormalized: false,
            ..s
        })
    }

    pub fn from_real(layout: Layout, amplitudes: &[T]) -> Result<Self> {
        Self::from_amplitudes(layout, amplitudes.iter().map(|&a| real(a)).collect())
    }

    /// Flagged state whose norm is not required to be one.
    pub fn from_amplitudes_unnormalized(layout: Layout, amplitudes: Vec<Complex<T>>) -> Result<Self> {
        if amplitudes.len() != layout.dim() {
            return Err(Error::invalid(format!(
                "{} amplitudes for a {}-dimensional layout",
                amplitudes.len(),
                layout.dim()
            )));
        }
        Ok(StateVector {
            amplitudes,
            layout,
            subnormalized: true,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn amplitudes(&self) -> &[Complex<T>] {
        &self.amplitudes
    }

    pub fn num_qubits(&self) -> usize {
        self.layout.num_qubits()
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn is_subnormalized(&self) -> bool {
        self.subnormalized
    }

    pub fn norm_sqr(&self) -> T {
        self.amplitudes.iter().fold(T::zero(), |acc, a| acc + a.norm_sqr())
    }

    pub fn is_normalized(&self, tol: T) -> bool {
        (self.norm_sqr() - T::one()).magnitude() <= tol
    }

    /// Rescaled to unit norm; clears the subnormalized flag.
    pub fn normalized(&self) -> Result<Self> {
        let n = self.norm_sqr().sqrt();
        if n <= T::negligible() {
            return Err(Error::InvalidState("cannot normalize a zero state".into()));
        }
        let inv = T::one() / n;
        Ok(StateVector {
            amplitudes: self.amplitudes.iter().map(|a| a * inv).collect(),
            layout: self.layout.clone(),
            subnormalized: false,
        })
    }

    /// Amplitude of the product basis state with the given register values.
    pub fn amplitude(&self, values: &[usize]) -> Result<Complex<T>> {
        Ok(self.amplitudes[self.layout.index_of(values)?])
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &StateVector<T>) -> Result<Complex<T>> {
        if self.dim() != other.dim() {
            return Err(Error::invalid(format!(
                "inner product of states with dimensions {} and {}",
                self.dim(),
                other.dim()
            )));
        }
        Ok(self
            .amplitudes
            .iter()
            .zip(&other.amplitudes)
            .fold(Complex::new(T::zero(), T::zero()), |acc, (a, b)| acc + a.conj() * b))
    }

    pub fn fidelity(&self, other: &StateVector<T>) -> Result<T> {
        Ok(self.inner(other)?.norm_sqr())
    }

    /// `self ⊗ other` with `other`'s registers appended.
    pub fn tensor(&self, other: &StateVector<T>) -> Result<Self> {
        let layout = self.layout.concat(&other.layout)?;
        let mut amplitudes = Vec::with_capacity(layout.dim());
        for a in &self.amplitudes {
            for b in &other.amplitudes {
                amplitudes.push(a * b);
            }
        }
        Ok(StateVector {
            amplitudes,
            layout,
            subnormalized: self.subnormalized || other.subnormalized,
        })
    }

    fn resolve_targets(&self, targets: &[String]) -> Result<Vec<usize>> {
        let mut qubits = Vec::new();
        for t in targets {
            qubits.extend(self.layout.qubits(t)?);
        }
        Ok(qubits)
    }

    pub(crate) fn resolve_controls(&self, controls: &[Control]) -> Result<Vec<(usize, bool)>> {
        controls
            .iter()
            .map(|c| {
                let q = self.layout.qubits(&c.register)?;
                if c.bit >= q.len() {
                    return Err(Error::invalid(format!(
                        "control bit {} out of range for register `{}`",
                        c.bit, c.register
                    )));
                }
                Ok((q.start + c.bit, c.state))
            })
            .collect()
    }

    pub fn apply(&self, u: &UnitaryOp<T>) -> Result<Self> {
        self.apply_controlled(u, &[])
    }

    pub fn apply_controlled(&self, u: &UnitaryOp<T>, controls: &[Control]) -> Result<Self> {
        let mut out = self.clone();
        out.apply_controlled_mut(u, controls)?;
        Ok(out)
    }

    pub(crate) fn apply_mut(&mut self, u: &UnitaryOp<T>) -> Result<()> {
        self.apply_controlled_mut(u, &[])
    }

    pub(crate) fn apply_controlled_mut(&mut self, u: &UnitaryOp<T>, controls: &[Control]) -> Result<()> {
        let targets = self.resolve_targets(u.targets())?;
        if targets.len() != u.num_qubits() {
            return Err(Error::invalid(format!(
                "unitary acts on {} qubits but targets {:?} span {}",
                u.num_qubits(),
                u.targets(),
                targets.len()
            )));
        }
        let controls = self.resolve_controls(controls)?;
        self.apply_matrix_mut(u.matrix(), &targets, &controls)
    }

    /// Applies `matrix` to the listed global qubits (first listed = most
    /// significant local bit) wherever every control matches.
    pub(crate) fn apply_matrix_mut(
        &mut self,
        matrix: &CMatrix<T>,
        targets: &[usize],
        controls: &[(usize, bool)],
    ) -> Result<()> {
        if matrix.nrows() != 1 << targets.len() {
            return Err(Error::invalid("matrix size does not match target count"));
        }
        let mut out = DVector::<Complex<T>>::zeros(matrix.nrows());
        self.apply_map_mut(targets, controls, |buf| {
            matrix.mul_to(&DVector::from_column_slice(buf), &mut out);
            buf.copy_from_slice(out.as_slice());
        })
    }

    /// Runs `map` on every local subvector over `targets` (ordered as in
    /// [`Self::apply_matrix_mut`]) wherever the controls match. `map` must be
    /// linear and norm-preserving on that subspace.
    pub(crate) fn apply_map_mut(
        &mut self,
        targets: &[usize],
        controls: &[(usize, bool)],
        mut map: impl FnMut(&mut [Complex<T>]),
    ) -> Result<()> {
        let n = self.num_qubits();
        let k = targets.len();
        let mut seen = 0usize;
        for &q in targets.iter().chain(controls.iter().map(|(q, _)| q)) {
            if q >= n || seen & (1 << q) != 0 {
                return Err(Error::invalid(format!(
                    "qubit {q} repeated or out of range for {n}-qubit state"
                )));
            }
            seen |= 1 << q;
        }
        let bit = |q: usize| 1usize << (n - 1 - q);
        let target_mask: usize = targets.iter().map(|&q| bit(q)).sum();
        let (control_mask, control_value) = controls
            .iter()
            .fold((0, 0), |(m, v), &(q, s)| (m | bit(q), if s { v | bit(q) } else { v }));
        let offsets: Vec<usize> = (0..1usize << k)
            .map(|l| {
                (0..k)
                    .filter(|t| (l >> (k - 1 - t)) & 1 == 1)
                    .map(|t| bit(targets[t]))
                    .sum()
            })
            .collect();
        let mut buf = vec![Complex::new(T::zero(), T::zero()); 1 << k];
        for base in 0..self.amplitudes.len() {
            if base & target_mask != 0 || base & control_mask != control_value {
                continue;
            }
            for (l, off) in offsets.iter().enumerate() {
                buf[l] = self.amplitudes[base | off];
            }
            map(&mut buf);
            for (l, off) in offsets.iter().enumerate() {
                self.amplitudes[base | off] = buf[l];
            }
        }
        Ok(())
    }

    /// Applies the 2×2 gate `gates[v]` to qubit `target` where the selector
    /// qubits read value `v` (a uniformly controlled single-qubit gate).
    pub(crate) fn apply_multiplexed_mut(
        &mut self,
        selector: &[usize],
        target: usize,
        gates: &[[Complex<T>; 4]],
        controls: &[(usize, bool)],
    ) -> Result<()> {
        let n = self.num_qubits();
        if gates.len() != 1 << selector.len() {
            return Err(Error::invalid("one gate per selector value required"));
        }
        let bit = |q: usize| 1usize << (n - 1 - q);
        let tbit = bit(target);
        let (control_mask, control_value) = controls
            .iter()
            .fold((0, 0), |(m, v), &(q, s)| (m | bit(q), if s { v | bit(q) } else { v }));
        for base in 0..self.amplitudes.len() {
            if base & tbit != 0 || base & control_mask != control_value {
                continue;
            }
            let sel = selector
                .iter()
                .fold(0usize, |acc, &q| (acc << 1) | usize::from(base & bit(q) != 0));
            let g = &gates[sel];
            let a0 = self.amplitudes[base];
            let a1 = self.amplitudes[base | tbit];
            self.amplitudes[base] = g[0] * a0 + g[1] * a1;
            self.amplitudes[base | tbit] = g[2] * a0 + g[3] * a1;
        }
        Ok(())
    }

    /// Multiplies amplitudes by `e^{iθ}` wherever all `qubits` are `|1⟩`
    /// and the controls match.
    pub(crate) fn apply_phase_mut(&mut self, qubits: &[usize], theta: T, controls: &[(usize, bool)]) {
        let n = self.num_qubits();
        let bit = |q: usize| 1usize << (n - 1 - q);
        let mask: usize = qubits.iter().map(|&q| bit(q)).sum();
        let (control_mask, control_value) = controls
            .iter()
            .fold((0, 0), |(m, v), &(q, s)| (m | bit(q), if s { v | bit(q) } else { v }));
        let phase = T::cis(theta);
        for (i, a) in self.amplitudes.iter_mut().enumerate() {
            if i & mask == mask && i & control_mask == control_value {
                *a *= phase;
            }
        }
    }

    /// Applies a single-qubit gate to every qubit of a register.
    pub fn apply_each(&self, gate: &CMatrix<T>, register: &str) -> Result<Self> {
        let mut out = self.clone();
        for q in self.layout.qubits(register)? {
            out.apply_matrix_mut(gate, &[q], &[])?;
        }
        Ok(out)
    }

    pub fn qft(&self, register: &str) -> Result<Self> {
        let mut out = self.clone();
        out.qft_mut(register, false, &[])?;
        Ok(out)
    }

    pub fn inverse_qft(&self, register: &str) -> Result<Self> {
        let mut out = self.clone();
        out.qft_mut(register, true, &[])?;
        Ok(out)
    }

    /// Gate-level Fourier transform: Hadamards and controlled phases followed
    /// by a bit-reversal; the inverse runs the adjoint sequence.
    pub(crate) fn qft_mut(&mut self, register: &str, inverse: bool, controls: &[Control]) -> Result<()> {
        let q = self.layout.qubits(register)?;
        let controls = self.resolve_controls(controls)?;
        let m = q.len();
        let h = gates::hadamard::<T>();
        let sw = gates::swap::<T>();
        let forward: Vec<QftStep> = {
            let mut steps = Vec::new();
            for a in 0..m {
                steps.push(QftStep::H(q.start + a));
                for b in (a + 1)..m {
                    steps.push(QftStep::Phase(q.start + b, q.start + a, b - a + 1));
                }
            }
            for a in 0..m / 2 {
                steps.push(QftStep::Swap(q.start + a, q.start + m - 1 - a));
            }
            steps
        };
        let sign = if inverse { -T::one() } else { T::one() };
        let run = |s: &mut Self, step: &QftStep| -> Result<()> {
            match *step {
                QftStep::H(a) => s.apply_matrix_mut(&h, &[a], &controls),
                QftStep::Swap(a, b) => s.apply_matrix_mut(&sw, &[a, b], &controls),
                QftStep::Phase(a, b, k) => {
                    let theta = sign * T::two_pi() / T::from_usize_lossy(1 << k);
                    s.apply_phase_mut(&[a, b], theta, &controls);
                    Ok(())
                }
            }
        };
        if inverse {
            for step in forward.iter().rev() {
                run(self, step)?;
            }
        } else {
            for step in &forward {
                run(self, step)?;
            }
        }
        Ok(())
    }

    /// Born probabilities of each value of one register.
    pub fn register_probabilities(&self, register: &str) -> Result<Vec<T>> {
        let q = self.layout.qubits(register)?;
        let n = self.num_qubits();
        let mut probs = vec![T::zero(); 1 << q.len()];
        for (i, a) in self.amplitudes.iter().enumerate() {
            probs[extract_bits(i, n, &q)] += a.norm_sqr();
        }
        Ok(probs)
    }

    /// `⟨ψ| (P ⊗ I) |ψ⟩` for a projector on one register.
    pub fn measure_probability(&self, register: &str, projector: &Projector<T>) -> Result<T> {
        let width = self.layout.width(register)?;
        match projector {
            Projector::Basis(v) => {
                if *v >> width != 0 {
                    return Err(Error::invalid(format!("outcome {v} outside register `{register}`")));
                }
                Ok(self.register_probabilities(register)?[*v])
            }
            Projector::Operator(p) => {
                if p.nrows() != 1 << width || !p.is_square() {
                    return Err(Error::invalid(format!(
                        "projector dimension {} does not match register `{register}`",
                        p.nrows()
                    )));
                }
                let idem = spectral_norm(&(p * p - p));
                let herm = spectral_norm(&(p.adjoint() - p));
                if idem > T::structural_tolerance() || herm > T::structural_tolerance() {
                    return Err(Error::invalid("operator is not an orthogonal projector"));
                }
                let op = UnitaryOp::trusted(p.clone(), &[register])?;
                let image = self.apply_unchecked(&op)?;
                Ok(self.inner(&image)?.re)
            }
        }
    }

    fn apply_unchecked(&self, op: &UnitaryOp<T>) -> Result<Self> {
        let mut out = self.clone();
        let targets = out.resolve_targets(op.targets())?;
        out.apply_matrix_mut(op.matrix(), &targets, &[])?;
        out.subnormalized = true;
        Ok(out)
    }

    /// Multinomial sample of register outcomes, deterministic per seed.
    pub fn sample_shots(&self, register: &str, shots: u64, seed: u64) -> Result<BTreeMap<usize, u64>> {
        if shots == 0 {
            return Err(Error::invalid("shots must be at least 1"));
        }
        let probs: Vec<f64> = self
            .register_probabilities(register)?
            .into_iter()
            .map(|p| p.as_f64().max(0.0))
            .collect();
        let total: f64 = probs.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidState("cannot sample a zero state".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut counts = BTreeMap::new();
        let mut remaining = shots;
        let mut mass = 1.0f64;
        for (outcome, p) in probs.iter().map(|p| p / total).enumerate() {
            if remaining == 0 {
                break;
            }
            let draw = if outcome + 1 == probs.len() || p >= mass {
                remaining
            } else if p <= 0.0 {
                0
            } else {
                Binomial::new(remaining, (p / mass).clamp(0.0, 1.0))
                    .map_err(|e| Error::NumericalFailure(e.to_string()))?
                    .sample(&mut rng)
            };
            if draw > 0 {
                counts.insert(outcome, draw);
            }
            remaining -= draw;
            mass -= p;
        }
        Ok(counts)
    }

    /// Zeroes every amplitude where `register ≠ value`; the result is flagged
    /// as subnormalized.
    pub fn project(&self, register: &str, value: usize) -> Result<Self> {
        let q = self.layout.qubits(register)?;
        if value >> q.len() != 0 {
            return Err(Error::invalid(format!("outcome {value} outside `{register}`")));
        }
        let n = self.num_qubits();
        let amplitudes = self
            .amplitudes
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                if extract_bits(i, n, &q) == value {
                    a
                } else {
                    Complex::new(T::zero(), T::zero())
                }
            })
            .collect();
        Ok(StateVector {
            amplitudes,
            layout: self.layout.clone(),
            subnormalized: true,
        })
    }

    /// Subnormalized branch with `register = value`, that register removed.
    pub fn branch(&self, register: &str, value: usize) -> Result<Self> {
        let q = self.layout.qubits(register)?;
        if value >> q.len() != 0 {
            return Err(Error::invalid(format!("outcome {value} outside `{register}`")));
        }
        let layout = self.layout.without(register)?;
        let n = self.num_qubits();
        let amplitudes = self
            .amplitudes
            .iter()
            .enumerate()
            .filter(|(i, _)| extract_bits(*i, n, &q) == value)
            .map(|(_, &a)| a)
            .collect();
        Ok(StateVector {
            amplitudes,
            layout,
            subnormalized: true,
        })
    }

    /// Measures `register`, keeps outcome `value`, removes the register and
    /// renormalizes. Returns the state and the outcome probability.
    pub fn postselect(&self, register: &str, value: usize) -> Result<(Self, T)> {
        let b = self.branch(register, value)?;
        let p = b.norm_sqr() / self.norm_sqr();
        if p <= T::negligible() * T::negligible() {
            return Err(Error::InvalidState(format!(
                "post-selection on `{register}` = {value} has zero probability"
            )));
        }
        Ok((b.normalized()?, p))
    }

    /// Reduced density operator on the kept registers (in layout order).
    pub fn partial_trace(&self, keep: &[&str]) -> Result<DensityOperator<T>> {
        if self.subnormalized && !self.is_normalized(T::structural_tolerance()) {
            return Err(Error::InvalidState("partial trace requires a normalized state".into()));
        }
        if self.layout.registers().len() < 2 {
            return Err(Error::invalid("partial trace needs at least two registers"));
        }
        self.reduced_matrix(keep).and_then(DensityOperator::new)
    }

    /// Unchecked `Tr_{other}|ψ⟩⟨ψ|`; also valid for subnormalized states.
    pub(crate) fn reduced_matrix(&self, keep: &[&str]) -> Result<CMatrix<T>> {
        let n = self.num_qubits();
        let mut kept: Vec<Range<usize>> = Vec::new();
        for k in keep {
            kept.push(self.layout.qubits(k)?);
        }
        kept.sort_by_key(|r| r.start);
        if kept.windows(2).any(|w| w[0].start == w[1].start) {
            return Err(Error::invalid("registers to keep must be distinct"));
        }
        let mut keep_mask = 0usize;
        for r in &kept {
            for q in r.clone() {
                keep_mask |= 1 << (n - 1 - q);
            }
        }
        let keep_bits = keep_mask.count_ones() as usize;
        let trace_bits = n - keep_bits;
        let gather = |i: usize, mask: usize| -> usize {
            let mut out = 0usize;
            for pos in (0..n).rev() {
                if mask & (1 << pos) != 0 {
                    out = (out << 1) | ((i >> pos) & 1);
                }
            }
            out
        };
        let trace_mask = ((1usize << n) - 1) & !keep_mask;
        let mut psi = CMatrix::<T>::zeros(1 << keep_bits, 1 << trace_bits);
        for (i, &a) in self.amplitudes.iter().enumerate() {
            psi[(gather(i, keep_mask), gather(i, trace_mask))] = a;
        }
        Ok(&psi * psi.adjoint())
    }
}

enum QftStep {
    H(usize),
    /// Controlled phase `2π / 2^k` between two qubits.
    Phase(usize, usize, usize),
    Swap(usize, usize),
}

/// How probabilities are read out of a circuit.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Sampling {
    /// Exact Born probabilities.
    #[default]
    Ideal,
    /// Frequencies from `shots` multinomial draws seeded by `seed`.
    Shots { shots: u64, seed: u64 },
}

impl Sampling {
    /// Same shot budget under a seed derived for a separate stage.
    pub fn for_stage(self, stage: u64) -> Self {
        match self {
            Sampling::Ideal => Sampling::Ideal,
            Sampling::Shots { shots, seed } => Sampling::Shots {
                shots,
                seed: seed
                    .wrapping_mul(0x9E37_79B9_7F4A_7C15)
                    .wrapping_add(stage.wrapping_mul(0xBF58_476D_1CE4_E5B9)),
            },
        }
    }
}

/// Wilson score interval for `hits` successes in `shots` trials.
pub fn wilson_interval(hits: u64, shots: u64, z: f64) -> (f64, f64) {
    let n = shots as f64;
    let p = hits as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let center = (p + z2 / (2.0 * n)) / denom;
    let half = z / denom * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt();
    ((center - half).max(0.0), (center + half).min(1.0))
}

/// Measurement projector on one register.
#[derive(Clone, Debug)]
pub enum Projector<T: Real> {
    Basis(usize),
    Operator(CMatrix<T>),
}

impl<T: Real> Projector<T> {
    /// `|−⟩⟨−| = ½(|0⟩ − |1⟩)(⟨0| − ⟨1|)`.
    pub fn minus() -> Self {
        let h = T::lit(0.5);
        Projector::Operator(DMatrix::from_row_slice(2, 2, &[real(h), real(-h), real(-h), real(h)]))
    }
}

/// Hermitian, positive semidefinite, unit-trace matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityOperator<T: Real> {
    matrix: CMatrix<T>,
}

impl<T: Real> DensityOperator<T> {
    pub fn new(matrix: CMatrix<T>) -> Result<Self> {
        if !matrix.is_square() || matrix.is_empty() {
            return Err(Error::invalid("density operator must be square"));
        }
        let tol = T::structural_tolerance();
        let herm = (matrix.adjoint() - &matrix)
            .iter()
            .fold(T::zero(), |m, z| m.max(modulus(*z)));
        if herm > tol {
            return Err(Error::invalid(format!("matrix is not Hermitian ({herm:e})")));
        }
        let tr = matrix.trace();
        if (tr.re - T::one()).magnitude() > tol || tr.im.magnitude() > tol {
            return Err(Error::invalid(format!("trace is {tr}, expected 1")));
        }
        let rho = DensityOperator { matrix };
        let min = rho.min_eigenvalue();
        if min < -tol {
            return Err(Error::invalid(format!(
                "matrix is not positive semidefinite (λ_min = {min:e})"
            )));
        }
        Ok(rho)
    }

    pub fn from_pure(state: &StateVector<T>) -> Result<Self> {
        let v = DVector::from_column_slice(state.amplitudes());
        Self::new(&v * v.adjoint())
    }

    pub fn matrix(&self) -> &CMatrix<T> {
        &self.matrix
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn eigenvalues(&self) -> DVector<T> {
        let h = (&self.matrix + self.matrix.adjoint()) * real(T::lit(0.5));
        nalgebra::SymmetricEigen::new(h).eigenvalues
    }

    pub fn min_eigenvalue(&self) -> T {
        self.eigenvalues()
            .iter()
            .fold(T::max_value().unwrap_or_else(|| T::lit(f64::MAX)), |m, &v| m.min(v))
    }

    /// `tr(ρ²)`.
    pub fn purity(&self) -> T {
        (&self.matrix * &self.matrix).trace().re
    }

    pub fn real_part(&self) -> DMatrix<T> {
        self.matrix.map(|z| z.re)
    }

    pub fn max_imaginary(&self) -> T {
        self.matrix.iter().fold(T::zero(), |m, z| m.max(z.im.magnitude()))
    }
}
