//! Exact Gaussian process regression with the squared-exponential kernel.
//!
//! This is the reference every simulated quantum result is checked against.
//! Two predictor routes are provided: the Cholesky route and the spectral
//! route, which sums over the eigenpairs of the Gram matrix the same way the
//! interference circuits do.

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Eigenvalues at or below this are dropped by the noiseless spectral route.
pub const PSEUDO_INVERSE_CUTOFF: f64 = 1e-12;

/// Training inputs and targets together with a single test point.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T: Real> {
    inputs: Vec<DVector<T>>,
    targets: DVector<T>,
    test_point: DVector<T>,
}

impl<T: Real> Dataset<T> {
    pub fn new(inputs: Vec<DVector<T>>, targets: Vec<T>, test_point: Vec<T>) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::invalid("dataset needs at least one training point"));
        }
        let dim = inputs[0].len();
        if dim == 0 {
            return Err(Error::invalid("input dimension must be at least 1"));
        }
        if let Some(p) = inputs.iter().position(|x| x.len() != dim) {
            return Err(Error::invalid(format!(
                "training point {p} has dimension {}, expected {dim}",
                inputs[p].len()
            )));
        }
        if targets.len() != inputs.len() {
            return Err(Error::invalid(format!(
                "{} targets for {} training points",
                targets.len(),
                inputs.len()
            )));
        }
        if test_point.len() != dim {
            return Err(Error::invalid(format!(
                "test point has dimension {}, expected {dim}",
                test_point.len()
            )));
        }
        let finite = |v: &T| v.is_finite();
        if !targets.iter().all(finite) || !test_point.iter().all(finite) || !inputs.iter().all(|x| x.iter().all(finite))
        {
            return Err(Error::invalid("dataset contains non-finite values"));
        }
        Ok(Dataset {
            inputs,
            targets: DVector::from_vec(targets),
            test_point: DVector::from_vec(test_point),
        })
    }

    /// Convenience constructor from row slices.
    pub fn from_rows(inputs: &[Vec<T>], targets: &[T], test_point: &[T]) -> Result<Self> {
        Self::new(
            inputs.iter().map(|x| DVector::from_column_slice(x)).collect(),
            targets.to_vec(),
            test_point.to_vec(),
        )
    }

    /// Number of training points `M`.
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// Input dimension `N`.
    pub fn dim(&self) -> usize {
        self.test_point.len()
    }

    pub fn inputs(&self) -> &[DVector<T>] {
        &self.inputs
    }

    pub fn targets(&self) -> &DVector<T> {
        &self.targets
    }

    pub fn test_point(&self) -> &DVector<T> {
        &self.test_point
    }

    /// Same dataset with every target multiplied by `s`.
    pub fn with_scaled_targets(&self, s: T) -> Self {
        Dataset {
            targets: &self.targets * s,
            ..self.clone()
        }
    }

    pub fn with_targets(&self, targets: Vec<T>) -> Result<Self> {
        Dataset::new(self.inputs.clone(), targets, self.test_point.as_slice().to_vec())
    }

    pub fn with_test_point(&self, test_point: Vec<T>) -> Result<Self> {
        Dataset::new(self.inputs.clone(), self.targets.as_slice().to_vec(), test_point)
    }

    /// Largest absolute coordinate over training inputs and the test point.
    pub fn max_abs_coordinate(&self) -> T {
        self.inputs
            .iter()
            .chain(std::iter::once(&self.test_point))
            .flat_map(|x| x.iter())
            .fold(T::zero(), |m, &v| m.max(v.magnitude()))
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hyperparams<T: Real> {
    pub noise_variance: T,
}

impl<T: Real> Hyperparams<T> {
    pub fn new(noise_variance: T) -> Result<Self> {
        if !(noise_variance >= T::zero()) || !noise_variance.is_finite() {
            return Err(Error::invalid(format!(
                "noise variance must be finite and non-negative, got {noise_variance}"
            )));
        }
        Ok(Hyperparams { noise_variance })
    }
}

/// Gram matrix and its eigendecomposition, eigenvalues sorted descending.
#[derive(Clone, Debug)]
pub struct KernelSystem<T: Real> {
    gram: DMatrix<T>,
    eigenvalues: DVector<T>,
    eigenvectors: DMatrix<T>,
    condition_number: T,
}

impl<T: Real> KernelSystem<T> {
    /// Decomposes an arbitrary real symmetric matrix.
    pub fn from_gram(gram: DMatrix<T>) -> Result<Self> {
        if !gram.is_square() || gram.nrows() == 0 {
            return Err(Error::invalid("gram matrix must be square and non-empty"));
        }
        let asym = (&gram - gram.transpose()).amax();
        if asym > T::structural_tolerance() {
            return Err(Error::invalid(format!(
                "gram matrix is not symmetric (max asymmetry {asym:e})"
            )));
        }
        let (eigenvalues, eigenvectors) = sorted_symmetric_eigen(&gram);
        let n = eigenvalues.len();
        let lmax = eigenvalues[0];
        let lmin = eigenvalues[n - 1];
        let condition_number = if lmin > T::zero() {
            lmax / lmin
        } else {
            T::max_value().unwrap_or_else(|| T::lit(f64::MAX))
        };
        Ok(KernelSystem {
            gram,
            eigenvalues,
            eigenvectors,
            condition_number,
        })
    }

    pub fn gram(&self) -> &DMatrix<T> {
        &self.gram
    }

    pub fn eigenvalues(&self) -> &DVector<T> {
        &self.eigenvalues
    }

    /// Orthonormal eigenvectors as columns, matching [`Self::eigenvalues`].
    pub fn eigenvectors(&self) -> &DMatrix<T> {
        &self.eigenvectors
    }

    pub fn condition_number(&self) -> T {
        self.condition_number
    }

    pub fn dim(&self) -> usize {
        self.gram.nrows()
    }

    pub fn max_eigenvalue(&self) -> T {
        self.eigenvalues[0]
    }

    pub fn min_eigenvalue(&self) -> T {
        self.eigenvalues[self.eigenvalues.len() - 1]
    }

    /// `Σ λ_j u_j u_jᵀ`.
    pub fn reconstruct(&self) -> DMatrix<T> {
        let d = DMatrix::from_diagonal(&self.eigenvalues);
        &self.eigenvectors * d * self.eigenvectors.transpose()
    }

    /// Coefficients of `v` in the eigenbasis.
    pub fn coefficients(&self, v: &DVector<T>) -> DVector<T> {
        self.eigenvectors.transpose() * v
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted in descending order.
pub fn sorted_symmetric_eigen<T: Real>(m: &DMatrix<T>) -> (DVector<T>, DMatrix<T>) {
    let eig = SymmetricEigen::new(m.clone());
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction<T: Real> {
    pub mean: T,
    pub variance: T,
}

/// `exp(-|a - b|² / 2)`.
pub fn se_kernel<T: Real>(a: &DVector<T>, b: &DVector<T>) -> Result<T> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!(
            "kernel arguments have dimensions {} and {}",
            a.len(),
            b.len()
        )));
    }
    let sq = a
        .iter()
        .zip(b.iter())
        .fold(T::zero(), |acc, (&x, &y)| acc + (x - y) * (x - y));
    Ok((-sq / T::lit(2.0)).exp())
}

pub fn gram_matrix<T: Real>(points: &[DVector<T>]) -> DMatrix<T> {
    let m = points.len();
    let mut gram = DMatrix::identity(m, m);
    for p in 0..m {
        for q in (p + 1)..m {
            let k = se_kernel(&points[p], &points[q]).expect("points share a dimension");
            gram[(p, q)] = k;
            gram[(q, p)] = k;
        }
    }
    gram
}

pub fn kernel_matrix<T: Real>(d: &Dataset<T>) -> Result<KernelSystem<T>> {
    KernelSystem::from_gram(gram_matrix(d.inputs()))
}

/// `k_*`, the kernel between the test point and each training input.
pub fn kernel_vector<T: Real>(d: &Dataset<T>) -> DVector<T> {
    DVector::from_iterator(
        d.len(),
        d.inputs()
            .iter()
            .map(|x| se_kernel(d.test_point(), x).expect("validated dimensions")),
    )
}

pub fn predict_cholesky<T: Real>(d: &Dataset<T>, h: &Hyperparams<T>) -> Result<Prediction<T>> {
    let m = d.len();
    let system = gram_matrix(d.inputs()) + DMatrix::identity(m, m) * h.noise_variance;
    let chol = Cholesky::new(system).ok_or_else(|| {
        Error::NumericalFailure(format!(
            "K + σ²I is not positive definite (σ² = {}); use σ² > 0 or the spectral route",
            h.noise_variance
        ))
    })?;
    let k_star = kernel_vector(d);
    let alpha = chol.solve(d.targets());
    let mean = k_star.dot(&alpha);
    let v = chol
        .l()
        .solve_lower_triangular(&k_star)
        .ok_or_else(|| Error::NumericalFailure("triangular solve failed".into()))?;
    Ok(Prediction {
        mean,
        variance: T::one() - v.dot(&v),
    })
}

/// Spectral sums `Σ α_j β_j / (λ_j + σ²)` and `Σ α_j² / (λ_j + σ²)` over
/// unit-normalized `k_*` and `y`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SpectralSums<T: Real> {
    pub mean_sum: T,
    pub variance_sum: T,
    pub norm_k: T,
    pub norm_y: T,
}

pub fn spectral_sums<T: Real>(
    ks: &KernelSystem<T>,
    k_star: &DVector<T>,
    targets: &DVector<T>,
    noise_variance: T,
) -> Result<SpectralSums<T>> {
    let norm_k = k_star.norm();
    let norm_y = targets.norm();
    let unit = |v: &DVector<T>, n: T| {
        if n > T::zero() {
            v / n
        } else {
            v.clone()
        }
    };
    let alpha = ks.coefficients(&unit(k_star, norm_k));
    let beta = ks.coefficients(&unit(targets, norm_y));
    let cutoff = T::lit(PSEUDO_INVERSE_CUTOFF);
    let mut mean_sum = T::zero();
    let mut variance_sum = T::zero();
    for j in 0..ks.dim() {
        let lambda = ks.eigenvalues()[j];
        let denom = lambda + noise_variance;
        if noise_variance > T::zero() {
            if denom <= T::zero() {
                return Err(Error::InvalidState(format!("λ_{j} + σ² = {denom} is not positive")));
            }
        } else if lambda <= cutoff {
            continue;
        }
        mean_sum += alpha[j] * beta[j] / denom;
        variance_sum += alpha[j] * alpha[j] / denom;
    }
    Ok(SpectralSums {
        mean_sum,
        variance_sum,
        norm_k,
        norm_y,
    })
}

pub fn predict_spectral<T: Real>(ks: &KernelSystem<T>, d: &Dataset<T>, h: &Hyperparams<T>) -> Result<Prediction<T>> {
    if ks.dim() != d.len() {
        return Err(Error::invalid(format!(
            "kernel system has dimension {}, dataset has {} points",
            ks.dim(),
            d.len()
        )));
    }
    let s = spectral_sums(ks, &kernel_vector(d), d.targets(), h.noise_variance)?;
    Ok(Prediction {
        mean: s.mean_sum * s.norm_k * s.norm_y,
        variance: T::one() - s.variance_sum * s.norm_k * s.norm_k,
    })
}
