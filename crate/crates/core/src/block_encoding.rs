//! Block-encoding of the augmented kernel density operator and extraction of
//! the kernel vector.
//!
//! The test point is appended to the training inputs, giving `M' = M + 1`
//! points and `ρ′ = Tr_fock |Ψ′⟩⟨Ψ′|` with `ρ′[p][q] = e^{−|x_p−x_q|²/2} / M'`.
//! `G` is a reflection with `G|0⟩|0⟩ = |Ψ′⟩` and
//! `U′ = (G† ⊗ I)(I ⊗ SWAP_{index,system})(G ⊗ I)` has `ρ′` as its top-left
//! block.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::classical::{gram_matrix, Dataset};
use crate::coherent::{prepare_points, superposition, KernelConfig, PreparedPoints, FOCK};
use crate::encoding::INDEX;
use crate::error::{Error, Result};
use crate::hamiltonian::SYSTEM;
use crate::scalar::{real, Real};
use crate::statevector::{spectral_norm, CMatrix, Layout, Reflection, StateVector, UnitaryOp};

/// Extraction fails below this success probability.
pub const MIN_SUCCESS_PROBABILITY: f64 = 1e-12;

/// Training data with the test point appended as `x_{M+1}` and `y_{M+1} = 0`.
#[derive(Clone, Debug)]
pub struct AugmentedSystem<T: Real> {
    pub dataset: Dataset<T>,
    /// Number of original training points.
    pub original_len: usize,
    /// `K′ = K_aug / (M + 1)`.
    pub gram_prime: DMatrix<T>,
}

impl<T: Real> AugmentedSystem<T> {
    pub fn len(&self) -> usize {
        self.original_len + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of the appended test point.
    pub fn test_index(&self) -> usize {
        self.original_len
    }
}

pub fn augment<T: Real>(d: &Dataset<T>) -> Result<AugmentedSystem<T>> {
    let mut inputs = d.inputs().to_vec();
    inputs.push(d.test_point().clone());
    let mut targets: Vec<T> = d.targets().iter().copied().collect();
    targets.push(T::zero());
    let dataset = Dataset::new(inputs, targets, d.test_point().iter().copied().collect())?;
    let m = dataset.len();
    let gram_prime = gram_matrix(dataset.inputs()) / T::from_usize_lossy(m);
    Ok(AugmentedSystem {
        dataset,
        original_len: d.len(),
        gram_prime,
    })
}

/// `G` with `G|0⟩_index|0⟩_fock = |Ψ′⟩`.
#[derive(Clone, Debug)]
pub struct Purification<T: Real> {
    reflection: Reflection<T>,
    target: StateVector<T>,
    points: PreparedPoints<T>,
}

impl<T: Real> Purification<T> {
    /// `|Ψ′⟩` on `index ⊗ fock`.
    pub fn target(&self) -> &StateVector<T> {
        &self.target
    }

    pub fn points(&self) -> &PreparedPoints<T> {
        &self.points
    }

    pub fn layout(&self) -> &Layout {
        self.target.layout()
    }

    pub fn len(&self) -> usize {
        self.points.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.points.is_empty()
    }

    pub fn index_width(&self) -> usize {
        self.layout().width(INDEX).expect("purification has an index register")
    }

    pub fn fock_width(&self) -> usize {
        self.layout().width(FOCK).expect("purification has a fock register")
    }

    /// Dense `G`, for small systems.
    pub fn to_unitary_op(&self) -> Result<UnitaryOp<T>> {
        if self.layout().num_qubits() > 12 {
            return Err(Error::invalid("dense form limited to 12 qubits"));
        }
        UnitaryOp::new(self.reflection.to_matrix(), &[INDEX, FOCK])
    }

    fn apply_mut(&self, state: &mut StateVector<T>, adjoint: bool) -> Result<()> {
        let mut targets: Vec<usize> = state.layout().qubits(INDEX)?.collect();
        targets.extend(state.layout().qubits(FOCK)?);
        if adjoint {
            state.apply_map_mut(&targets, &[], |b| self.reflection.apply_adjoint(b))
        } else {
            state.apply_map_mut(&targets, &[], |b| self.reflection.apply(b))
        }
    }
}

/// Purification of an arbitrary point set (already prepared).
pub fn purify_points<T: Real>(points: PreparedPoints<T>) -> Result<Purification<T>> {
    let target = superposition(&points.points, points.truncation)?;
    let reflection = Reflection::preparing(target.amplitudes())?;
    Ok(Purification {
        reflection,
        target,
        points,
    })
}

pub fn purify<T: Real>(a: &AugmentedSystem<T>, cfg: &KernelConfig<T>) -> Result<Purification<T>> {
    purify_points(prepare_points(a.dataset.inputs(), cfg)?)
}

#[derive(Clone, Debug)]
pub struct BlockEncoding<T: Real> {
    purification: Purification<T>,
    /// `γ`.
    pub normalization: T,
    /// Ancilla qubits `k` (index and fock registers).
    pub ancilla_count: usize,
    /// `ε′ = 2√2 · N · δ`.
    pub error: T,
    /// Dimension of the encoded block (`2^{index width}`).
    pub encoded_dim: usize,
}

impl<T: Real> BlockEncoding<T> {
    pub fn purification(&self) -> &Purification<T> {
        &self.purification
    }

    /// `index ⊗ fock ⊗ system`.
    pub fn layout(&self) -> Result<Layout> {
        let w = self.purification.index_width();
        Layout::new(&[(INDEX, w), (FOCK, self.purification.fock_width()), (SYSTEM, w)])
    }

    pub fn apply_mut(&self, state: &mut StateVector<T>) -> Result<()> {
        self.purification.apply_mut(state, false)?;
        let index: Vec<usize> = state.layout().qubits(INDEX)?.collect();
        let system: Vec<usize> = state.layout().qubits(SYSTEM)?.collect();
        let swap = crate::statevector::gates::swap();
        for (&a, &b) in index.iter().zip(&system) {
            state.apply_matrix_mut(&swap, &[a, b], &[])?;
        }
        self.purification.apply_mut(state, true)
    }

    /// `U′ |0⟩_index |0⟩_fock |input⟩_system`.
    pub fn apply_to_system(&self, input: &[Complex<T>]) -> Result<StateVector<T>> {
        let layout = self.layout()?;
        if input.len() != self.encoded_dim {
            return Err(Error::invalid("system input has the wrong dimension"));
        }
        let mut amps = vec![real(T::zero()); layout.dim()];
        amps[..self.encoded_dim].copy_from_slice(input);
        let mut state = StateVector::from_amplitudes(layout, amps)?;
        self.apply_mut(&mut state)?;
        Ok(state)
    }

    /// `(⟨0| ⊗ I) U′ (|0⟩ ⊗ I)` assembled column by column.
    pub fn block(&self) -> Result<CMatrix<T>> {
        let d = self.encoded_dim;
        let mut block = CMatrix::zeros(d, d);
        for q in 0..d {
            let mut e = vec![real(T::zero()); d];
            e[q] = real(T::one());
            let out = self.apply_to_system(&e)?;
            for p in 0..d {
                block[(p, q)] = out.amplitudes()[p];
            }
        }
        Ok(block)
    }

    /// Dense `U′`, for small systems.
    pub fn to_unitary_op(&self) -> Result<UnitaryOp<T>> {
        let layout = self.layout()?;
        if layout.num_qubits() > 12 {
            return Err(Error::invalid("dense form limited to 12 qubits"));
        }
        let dim = layout.dim();
        let mut m = CMatrix::zeros(dim, dim);
        for col in 0..dim {
            let mut amps = vec![real(T::zero()); dim];
            amps[col] = real(T::one());
            let mut s = StateVector::from_amplitudes(layout.clone(), amps)?;
            self.apply_mut(&mut s)?;
            m.set_column(col, &DVector::from_column_slice(s.amplitudes()));
        }
        UnitaryOp::new(m, &[INDEX, FOCK, SYSTEM])
    }

    /// `‖A − γ · block‖₂`.
    pub fn block_error(&self, a: &DMatrix<T>) -> Result<T> {
        let d = self.encoded_dim;
        if a.nrows() > d || a.ncols() > d {
            return Err(Error::invalid("matrix larger than the encoded block"));
        }
        let mut padded = CMatrix::zeros(d, d);
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                padded[(i, j)] = real(a[(i, j)]);
            }
        }
        Ok(spectral_norm(&(padded - self.block()? * real(self.normalization))))
    }
}

pub fn encode_density<T: Real>(g: Purification<T>) -> Result<BlockEncoding<T>> {
    let wi = g.index_width();
    // U′ needs a system register as wide as the index register.
    Layout::new(&[(INDEX, wi), (FOCK, g.fock_width()), (SYSTEM, wi)])?;
    let n = T::from_usize_lossy(g.points.dim());
    let error = T::lit(2.0 * std::f64::consts::SQRT_2) * n * g.points.delta;
    Ok(BlockEncoding {
        ancilla_count: wi + g.fock_width(),
        normalization: T::one(),
        error,
        encoded_dim: 1 << wi,
        purification: g,
    })
}

/// Normalized `ρ′|q⟩` on the system register with its success probability.
#[derive(Clone, Debug)]
pub struct Extraction<T: Real> {
    pub state: StateVector<T>,
    pub success_probability: T,
    pub index: usize,
    points: usize,
}

impl<T: Real> Extraction<T> {
    /// Column `q` of `M'·ρ′` rebuilt from the state and `p`:
    /// `‖ρ′|q⟩‖ = √p`.
    pub fn kernel_column(&self) -> DVector<T> {
        let scale = self.success_probability.sqrt() * T::from_usize_lossy(self.points);
        DVector::from_iterator(
            self.points,
            self.state.amplitudes()[..self.points].iter().map(|a| a.re * scale),
        )
    }

    /// Kernel entries against the training points (the appended point is
    /// dropped), i.e. `k_*` when `q` is the test index.
    pub fn kernel_vector(&self) -> DVector<T> {
        self.kernel_column().rows(0, self.points - 1).into_owned()
    }

    /// The extracted state with the appended-point component removed and
    /// renormalized: proportional to `k_*`.
    pub fn training_component(&self) -> Result<DVector<T>> {
        let v: DVector<T> = DVector::from_iterator(
            self.points - 1,
            self.state.amplitudes()[..self.points - 1].iter().map(|a| a.re),
        );
        let n = v.norm();
        if n <= T::zero() {
            return Err(Error::DegenerateExtraction { probability: 0.0 });
        }
        Ok(v / n)
    }
}

/// Applies `U′` to `|0⟩|0⟩|q⟩` and post-selects the ancillas on `|0⟩`.
pub fn extract_kernel_vector<T: Real>(be: &BlockEncoding<T>, index: usize) -> Result<Extraction<T>> {
    let points = be.purification.len();
    if index >= be.encoded_dim {
        return Err(Error::invalid(format!("index {index} outside 0..{}", be.encoded_dim)));
    }
    let mut e = vec![real(T::zero()); be.encoded_dim];
    e[index] = real(T::one());
    let out = be.apply_to_system(&e)?;
    let branch = out.branch(INDEX, 0)?.branch(FOCK, 0)?;
    let p = branch.norm_sqr();
    if p < T::lit(MIN_SUCCESS_PROBABILITY) {
        return Err(Error::DegenerateExtraction {
            probability: p.as_f64(),
        });
    }
    Ok(Extraction {
        state: branch.normalized()?,
        success_probability: p,
        index,
        points,
    })
}

/// Success probability of the extraction with a maximally mixed input over
/// the `M'` data indices: `tr(ρ′²) / M'`.
pub fn mixed_success_probability<T: Real>(be: &BlockEncoding<T>) -> Result<T> {
    let m = be.purification.len();
    let mut total = T::zero();
    for q in 0..m {
        total += extract_kernel_vector(be, q)?.success_probability;
    }
    Ok(total / T::from_usize_lossy(m))
}

/// Whole pipeline: augment, purify, encode, extract the test column, and
/// return `k_*` in the units of the original data.
pub fn coherent_kernel_vector<T: Real>(d: &Dataset<T>, cfg: &KernelConfig<T>) -> Result<(DVector<T>, T)> {
    let a = augment(d)?;
    let be = encode_density(purify(&a, cfg)?)?;
    let ex = extract_kernel_vector(&be, a.test_index())?;
    let prepared = be.purification.points();
    let k = ex.kernel_vector().map(|v| prepared.unscale_kernel(v.max(T::zero())));
    Ok((k, ex.success_probability))
}
