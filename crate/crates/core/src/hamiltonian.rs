//! Time evolution under the kernel matrix and the cyclic-shift LCU check.
//!
//! `e^{-iKt}` is computed exactly from the eigendecomposition of `K`. The
//! decomposition of `K` into cyclic shifts is kept as a verification
//! artifact: it exists only for circulant matrices and is reported as
//! not representable otherwise.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::classical::sorted_symmetric_eigen;
use crate::error::{Error, Result};
use crate::scalar::{real, Real};
use crate::statevector::{CMatrix, UnitaryOp};

pub const SYSTEM: &str = "system";

/// Fraction of `2π` headroom kept above `t · λ_max`.
pub const WRAPAROUND_MARGIN: f64 = 0.1;

/// Residual below which a circulant fit counts as exact.
pub const LCU_TOLERANCE: f64 = 1e-10;

fn check_symmetric<T: Real>(k: &DMatrix<T>) -> Result<()> {
    if !k.is_square() || k.is_empty() {
        return Err(Error::invalid("hamiltonian must be square and non-empty"));
    }
    let asym = (k - k.transpose()).amax();
    if asym > T::structural_tolerance() {
        return Err(Error::invalid(format!(
            "hamiltonian is not Hermitian (max asymmetry {asym:e})"
        )));
    }
    Ok(())
}

fn phase_matrix<T: Real>(values: &DVector<T>, vectors: &DMatrix<T>, t: T) -> CMatrix<T> {
    let n = values.len();
    let v = vectors.map(real);
    let d = CMatrix::from_diagonal(&DVector::from_iterator(n, values.iter().map(|&l| T::cis(-l * t))));
    &v * d * v.transpose()
}

/// `e^{-iKt}` on the `system` register.
pub fn evolve<T: Real>(k: &DMatrix<T>, t: T) -> Result<UnitaryOp<T>> {
    check_symmetric(k)?;
    if !k.nrows().is_power_of_two() {
        return Err(Error::invalid(format!(
            "hamiltonian dimension {} is not a power of two; pad it first",
            k.nrows()
        )));
    }
    let (values, vectors) = sorted_symmetric_eigen(k);
    UnitaryOp::new(phase_matrix(&values, &vectors, t), &[SYSTEM])
}

/// Embeds `K` in the next power-of-two dimension, filling the extra
/// diagonal with 1 (the SE kernel diagonal) so the spectrum range is kept.
pub fn pad_hamiltonian<T: Real>(k: &DMatrix<T>) -> DMatrix<T> {
    let n = k.nrows();
    let padded = n.next_power_of_two().max(2);
    let mut out = DMatrix::identity(padded, padded);
    out.view_mut((0, 0), (n, n)).copy_from(k);
    out
}

/// Cached controlled-evolution unitaries `e^{-iK t 2^k}` for phase estimation.
#[derive(Clone, Debug)]
pub struct EvolutionOracle<T: Real> {
    hamiltonian: DMatrix<T>,
    eigenvalues: DVector<T>,
    eigenvectors: DMatrix<T>,
    base_time: T,
    unitaries: Vec<UnitaryOp<T>>,
}

impl<T: Real> EvolutionOracle<T> {
    /// Builds `e^{-iK t 2^k}` for `k = 0 .. powers`.
    pub fn new(hamiltonian: DMatrix<T>, base_time: T, powers: usize) -> Result<Self> {
        check_symmetric(&hamiltonian)?;
        if !hamiltonian.nrows().is_power_of_two() {
            return Err(Error::invalid("hamiltonian dimension must be a power of two"));
        }
        let (eigenvalues, eigenvectors) = sorted_symmetric_eigen(&hamiltonian);
        let unitaries = (0..powers)
            .map(|k| {
                let t = base_time * T::from_usize_lossy(1 << k);
                UnitaryOp::new(phase_matrix(&eigenvalues, &eigenvectors, t), &[SYSTEM])
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EvolutionOracle {
            hamiltonian,
            eigenvalues,
            eigenvectors,
            base_time,
            unitaries,
        })
    }

    /// Largest time with `t · λ_max · (1 + margin) = 2π`.
    pub fn default_time(max_eigenvalue: T) -> T {
        T::two_pi() / (max_eigenvalue * T::lit(1.0 + WRAPAROUND_MARGIN))
    }

    pub fn hamiltonian(&self) -> &DMatrix<T> {
        &self.hamiltonian
    }

    pub fn eigenvalues(&self) -> &DVector<T> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &DMatrix<T> {
        &self.eigenvectors
    }

    pub fn base_time(&self) -> T {
        self.base_time
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.nrows()
    }

    pub fn system_width(&self) -> usize {
        self.dim().trailing_zeros() as usize
    }

    pub fn powers(&self) -> usize {
        self.unitaries.len()
    }

    /// `e^{-iK t 2^k}`.
    pub fn unitary(&self, k: usize) -> Result<&UnitaryOp<T>> {
        self.unitaries
            .get(k)
            .ok_or_else(|| Error::invalid(format!("power 2^{k} not cached")))
    }

    /// Time grid `t · 2^k` covered by the cache.
    pub fn time_grid(&self) -> Vec<T> {
        (0..self.powers())
            .map(|k| self.base_time * T::from_usize_lossy(1 << k))
            .collect()
    }

    /// Errors when some eigenphase `λ t / 2π` leaves `[0, 1)`.
    pub fn check_wraparound(&self) -> Result<()> {
        let lmax = self.eigenvalues[0];
        let lmin = self.eigenvalues[self.eigenvalues.len() - 1];
        if lmin < -T::structural_tolerance() {
            return Err(Error::invalid(format!(
                "negative eigenvalue {lmin} cannot be read out by phase estimation"
            )));
        }
        if self.base_time <= T::zero() || self.base_time * lmax >= T::two_pi() {
            return Err(Error::invalid(format!(
                "evolution time {} wraps the phase of λ_max = {lmax}",
                self.base_time
            )));
        }
        Ok(())
    }
}

/// `V_j = Σ_l |(l − j + 1) mod m⟩⟨l|` as a real permutation matrix.
pub fn shift_matrix<T: Real>(j: usize, m: usize) -> Result<DMatrix<T>> {
    if m == 0 || j >= m {
        return Err(Error::invalid(format!(
            "shift index {j} out of range for dimension {m}"
        )));
    }
    let mut v = DMatrix::zeros(m, m);
    for l in 0..m {
        v[((l + m + 1 - j) % m, l)] = T::one();
    }
    Ok(v)
}

pub fn shift_operator<T: Real>(j: usize, m: usize) -> Result<UnitaryOp<T>> {
    UnitaryOp::new(shift_matrix::<T>(j, m)?.map(real), &[SYSTEM])
}

#[derive(Clone, Debug, PartialEq)]
pub struct LcuDecomposition<T: Real> {
    /// `k_j` for `j = 0 .. M`.
    pub coefficients: Vec<T>,
    /// Shift amount `(1 − j) mod M` of `V_j`, i.e. `V_j |l⟩ = |l + s_j⟩`.
    pub shifts: Vec<usize>,
}

impl<T: Real> LcuDecomposition<T> {
    pub fn reconstruct(&self) -> DMatrix<T> {
        let m = self.coefficients.len();
        let mut out = DMatrix::zeros(m, m);
        for (j, &c) in self.coefficients.iter().enumerate() {
            out += shift_matrix::<T>(j, m).expect("index in range") * c;
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum LcuOutcome<T: Real> {
    Exact(LcuDecomposition<T>),
    /// Best circulant fit and its Frobenius residual.
    NotRepresentable {
        best_fit: LcuDecomposition<T>,
        residual: T,
    },
}

impl<T: Real> LcuOutcome<T> {
    pub fn decomposition(&self) -> &LcuDecomposition<T> {
        match self {
            LcuOutcome::Exact(d) => d,
            LcuOutcome::NotRepresentable { best_fit, .. } => best_fit,
        }
    }

    pub fn residual(&self) -> T {
        match self {
            LcuOutcome::Exact(_) => T::zero(),
            LcuOutcome::NotRepresentable { residual, .. } => *residual,
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, LcuOutcome::Exact(_))
    }
}

/// Fits `K ≈ Σ_j k_j V_j` by averaging `K` along wrapped diagonals; this is
/// the least-squares circulant projection.
pub fn lcu_decompose<T: Real>(k: &DMatrix<T>) -> Result<LcuOutcome<T>> {
    if !k.is_square() || k.is_empty() {
        return Err(Error::invalid("LCU decomposition needs a square matrix"));
    }
    let m = k.nrows();
    let inv_m = T::one() / T::from_usize_lossy(m);
    let diagonal_mean = |s: usize| (0..m).fold(T::zero(), |acc, l| acc + k[((l + s) % m, l)]) * inv_m;
    let shifts: Vec<usize> = (0..m).map(|j| (m + 1 - j) % m).collect();
    let coefficients = shifts.iter().map(|&s| diagonal_mean(s)).collect();
    let fit = LcuDecomposition { coefficients, shifts };
    let residual = (fit.reconstruct() - k).norm();
    if residual <= T::lit(LCU_TOLERANCE) {
        Ok(LcuOutcome::Exact(fit))
    } else {
        Ok(LcuOutcome::NotRepresentable {
            best_fit: fit,
            residual,
        })
    }
}

/// `Σ_{n<terms} (−iKt)^n / n!`; only sensible for small `‖K t‖`.
pub fn taylor_evolution<T: Real>(k: &DMatrix<T>, t: T, terms: usize) -> CMatrix<T> {
    let n = k.nrows();
    let gen: CMatrix<T> = k.map(|x| Complex::new(T::zero(), -x * t));
    let mut term = CMatrix::<T>::identity(n, n);
    let mut sum = term.clone();
    for i in 1..terms {
        term = &term * &gen * real(T::one() / T::from_usize_lossy(i));
        sum += &term;
    }
    sum
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::statevector::spectral_norm;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_symmetric(n: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::<f64>::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
        (&a + a.transpose()) * 0.5
    }

    #[test]
    fn zero_time_is_identity_and_identity_gives_phase() {
        let k = random_symmetric(4, 1);
        let u = evolve(&k, 0.0).unwrap();
        assert!(spectral_norm(&(u.matrix() - CMatrix::identity(4, 4))) < 1e-12);

        let id = DMatrix::<f64>::identity(4, 4);
        let u = evolve(&id, std::f64::consts::PI).unwrap();
        assert!(spectral_norm(&(u.matrix() + CMatrix::identity(4, 4))) < 1e-12);
    }

    #[test]
    fn matches_taylor_series() {
        for seed in 0..5 {
            let k = random_symmetric(4, seed);
            for &t in &[0.1, 0.5, 1.0] {
                let exact = evolve(&k, t).unwrap();
                let series = taylor_evolution(&k, t, 30);
                assert!(spectral_norm(&(exact.matrix() - series)) < 1e-10);
            }
        }
    }

    #[test]
    fn non_hermitian_rejected() {
        let mut k = DMatrix::<f64>::identity(2, 2);
        k[(0, 1)] = 0.5;
        assert!(matches!(evolve(&k, 1.0), Err(Error::InvalidArgument(_))));
    }

    #[test]
    fn group_property_and_commutation() {
        let k = random_symmetric(4, 9);
        let a = evolve(&k, 0.3).unwrap();
        let b = evolve(&k, 0.45).unwrap();
        let ab = evolve(&k, 0.75).unwrap();
        assert!(spectral_norm(&(a.matrix() * b.matrix() - ab.matrix())) < 1e-10);
        let kc = k.map(real);
        assert!(spectral_norm(&(a.matrix() * &kc - &kc * a.matrix())) < 1e-10);
    }

    #[test]
    fn shift_operators() {
        let v1 = shift_matrix::<f64>(1, 4).unwrap();
        assert_eq!(v1, DMatrix::identity(4, 4));
        // j = 2: |l⟩ → |l − 1⟩
        let v2 = shift_matrix::<f64>(2, 4).unwrap();
        for l in 0..4 {
            assert_eq!(v2[((l + 3) % 4, l)], 1.0);
        }
        for j in 0..8 {
            let v = shift_matrix::<f64>(j, 8).unwrap();
            for r in 0..8 {
                assert_eq!(v.row(r).sum(), 1.0);
                assert!(v.row(r).iter().all(|&x| x == 0.0 || x == 1.0));
            }
            assert!(shift_operator::<f64>(j, 8).unwrap().unitarity_error() < 1e-12);
        }
        assert!(shift_matrix::<f64>(4, 4).is_err());
    }

    #[test]
    fn lcu_on_identity_and_circulant() {
        let id = DMatrix::<f64>::identity(4, 4);
        let out = lcu_decompose(&id).unwrap();
        let d = out.decomposition();
        assert!(out.is_exact());
        assert_eq!(d.coefficients, vec![0.0, 1.0, 0.0, 0.0]);

        let (a, b) = (0.3, 0.7);
        let row = [1.0, a, b, a];
        let circ = DMatrix::from_fn(4, 4, |r, c| row[(c + 4 - r) % 4]);
        let out = lcu_decompose(&circ).unwrap();
        assert!(out.is_exact());
        assert!((out.decomposition().reconstruct() - &circ).norm() < 1e-12);
        let direct = evolve(&circ, 0.7).unwrap();
        let rebuilt = evolve(&out.decomposition().reconstruct(), 0.7).unwrap();
        assert!(spectral_norm(&(direct.matrix() - rebuilt.matrix())) < 1e-10);
    }

    #[test]
    fn generic_gram_is_not_circulant() {
        use crate::classical::gram_matrix;
        let pts: Vec<DVector<f64>> = [0.0, 0.3, 1.1, 2.6]
            .iter()
            .map(|&x| DVector::from_element(1, x))
            .collect();
        let out = lcu_decompose(&gram_matrix(&pts)).unwrap();
        assert!(!out.is_exact());
        assert!(out.residual() > 1e-3);
    }

    #[test]
    fn oracle_caches_powers() {
        let k = random_symmetric(4, 3) + DMatrix::identity(4, 4) * 2.0;
        let t = 0.2;
        let oracle = EvolutionOracle::new(k.clone(), t, 4).unwrap();
        assert_eq!(oracle.time_grid(), vec![0.2, 0.4, 0.8, 1.6]);
        let direct = evolve(&k, 1.6).unwrap();
        assert!(spectral_norm(&(oracle.unitary(3).unwrap().matrix() - direct.matrix())) < 1e-10);
        assert!(oracle.unitary(4).is_err());
    }
}
