//! Truncated coherent states, displacement-operator preparation, the
//! training superposition `Σ_p |p⟩|φ_{x_p}⟩ / √M` and the partial trace that
//! turns it into the squared-exponential kernel density operator.
//!
//! A coordinate `x` is encoded as the coherent state with real amplitude
//! `r = x`, so `⟨φ_x|φ_x'⟩ = e^{−(x−x')²/2}`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;

use crate::classical::Dataset;
use crate::encoding::{index_width, INDEX};
use crate::error::{Error, Result};
use crate::scalar::{real, Real};
use crate::statevector::{DensityOperator, Layout, Reflection, StateVector};

pub const FOCK: &str = "fock";

/// Extra Fock levels kept when exponentiating the displacement generator.
pub const CUTOFF_MARGIN: usize = 4;

/// Largest admissible `r²` before the amplitudes underflow.
pub const MAX_R_SQUARED: f64 = 700.0;

const MAX_TRUNCATION: usize = 4096;

fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// `ln(r^{2T}/T!)`, `-∞` when `r = 0`.
fn ln_bound(r: f64, t: usize) -> f64 {
    if r == 0.0 {
        f64::NEG_INFINITY
    } else {
        2.0 * t as f64 * r.abs().ln() - ln_factorial(t)
    }
}

/// `r^{2T} / T!`, the bound on the squared norm of the discarded tail.
pub fn tail_bound(r: f64, t: usize) -> f64 {
    ln_bound(r, t).exp()
}

/// `Σ_{k≥T} e^{−r²} r^{2k} / k!` summed directly (no cancellation).
pub fn exact_tail(r: f64, t: usize) -> f64 {
    if r == 0.0 {
        return if t == 0 { 1.0 } else { 0.0 };
    }
    let r2 = r * r;
    let mut ln_term = -r2 + ln_bound(r, t);
    let mut sum = 0.0;
    let mut k = t;
    loop {
        let term = ln_term.exp();
        sum += term;
        k += 1;
        ln_term += r2.ln() - (k as f64).ln();
        if k as f64 > r2 && (term < sum * 1e-18 || term == 0.0) {
            break;
        }
    }
    sum
}

/// Smallest `T ≥ 1` with `r^{2T}/T! ≤ δ²`.
pub fn truncation_level(r: f64, delta: f64) -> Result<usize> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::invalid(format!(
            "truncation budget must lie in (0, 1), got {delta}"
        )));
    }
    check_amplitude(r)?;
    let target = 2.0 * delta.ln();
    (1..=MAX_TRUNCATION)
        .find(|&t| ln_bound(r, t) <= target)
        .ok_or_else(|| Error::invalid(format!("no truncation below {MAX_TRUNCATION} for r = {r}")))
}

fn check_amplitude(r: f64) -> Result<()> {
    if !r.is_finite() || r * r > MAX_R_SQUARED {
        return Err(Error::invalid(format!(
            "coherent amplitude {r} exceeds the overflow guard"
        )));
    }
    Ok(())
}

/// Qubits needed for `T` Fock levels (at least one).
pub fn fock_width(truncation: usize) -> usize {
    truncation.next_power_of_two().max(2).trailing_zeros() as usize
}

#[derive(Clone, Debug, PartialEq)]
pub struct TruncatedCoherentState<T: Real> {
    pub r: T,
    /// Renormalized amplitudes of `|0⟩ .. |T−1⟩`.
    pub fock_amplitudes: DVector<T>,
    pub truncation: usize,
    /// Squared norm discarded before renormalization.
    pub discarded: T,
    /// `r^{2T}/T!`.
    pub error_budget: T,
}

impl<T: Real> TruncatedCoherentState<T> {
    fn from_raw(r: T, raw: DVector<T>) -> Result<Self> {
        let kept = raw.norm_squared();
        if kept <= T::zero() {
            return Err(Error::NumericalFailure("coherent amplitudes underflowed".into()));
        }
        let truncation = raw.len();
        Ok(TruncatedCoherentState {
            r,
            fock_amplitudes: raw / kept.sqrt(),
            truncation,
            discarded: (T::one() - kept).max(T::zero()),
            error_budget: T::lit(tail_bound(r.as_f64(), truncation)),
        })
    }

    pub fn overlap(&self, other: &Self) -> T {
        let n = self.truncation.min(other.truncation);
        self.fock_amplitudes.rows(0, n).dot(&other.fock_amplitudes.rows(0, n))
    }

    /// Amplitudes zero-padded to `2^width` entries.
    pub fn padded(&self, width: usize) -> Result<Vec<T>> {
        let d = 1usize << width;
        if self.truncation > d {
            return Err(Error::invalid("Fock register too narrow for truncation"));
        }
        let mut out = vec![T::zero(); d];
        out[..self.truncation].copy_from_slice(self.fock_amplitudes.as_slice());
        Ok(out)
    }
}

/// Analytic `e^{−r²/2} r^k/√k!`, `k < T`, renormalized.
pub fn coherent_state<T: Real>(r: T, truncation: usize) -> Result<TruncatedCoherentState<T>> {
    if truncation == 0 {
        return Err(Error::invalid("truncation must be at least 1"));
    }
    let rf = r.as_f64();
    check_amplitude(rf)?;
    let raw = DVector::from_iterator(
        truncation,
        (0..truncation).map(|k| {
            let ln_mag = -rf * rf / 2.0 + if k > 0 { 0.5 * ln_bound(rf, k) } else { 0.0 };
            let sign = if rf < 0.0 && k % 2 == 1 { -1.0 } else { 1.0 };
            T::lit(sign * ln_mag.exp())
        }),
    );
    TruncatedCoherentState::from_raw(r, raw)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LadderOperators<T: Real> {
    pub dimension: usize,
    pub annihilation: DMatrix<T>,
    pub creation: DMatrix<T>,
}

impl<T: Real> LadderOperators<T> {
    pub fn new(dimension: usize) -> Self {
        let annihilation = DMatrix::from_fn(dimension, dimension, |i, j| {
            if j == i + 1 {
                T::from_usize_lossy(j).sqrt()
            } else {
                T::zero()
            }
        });
        let creation = annihilation.transpose();
        LadderOperators {
            dimension,
            annihilation,
            creation,
        }
    }

    /// `r(a† − a)`.
    pub fn displacement_generator(&self, r: T) -> DMatrix<T> {
        (&self.creation - &self.annihilation) * r
    }

    /// `a a† − a† a`.
    pub fn commutator(&self) -> DMatrix<T> {
        &self.annihilation * &self.creation - &self.creation * &self.annihilation
    }
}

/// `e^{r(a† − a)}|0⟩` at cutoff `T + 4`, truncated to `T` levels and
/// renormalized.
pub fn displacement_prepare<T: Real>(r: T, truncation: usize) -> Result<TruncatedCoherentState<T>> {
    if truncation == 0 {
        return Err(Error::invalid("truncation must be at least 1"));
    }
    check_amplitude(r.as_f64())?;
    let ladder = LadderOperators::<T>::new(truncation + CUTOFF_MARGIN);
    let d = ladder.displacement_generator(r).exp();
    let raw = d.column(0).rows(0, truncation).into_owned();
    TruncatedCoherentState::from_raw(r, raw)
}

/// Kernel-side preprocessing of the inputs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelConfig<T: Real> {
    /// Per-coordinate truncation budget `δ`.
    pub delta: T,
    /// Translate each coordinate to its midrange (distances unchanged).
    pub center: bool,
    /// Rescale so that `max |x| ≤` this value (distances change).
    pub rescale_to: Option<T>,
}

impl<T: Real> KernelConfig<T> {
    pub fn new(delta: T) -> Self {
        KernelConfig {
            delta,
            center: true,
            rescale_to: None,
        }
    }
}

/// Points ready for coherent encoding, with a shared truncation level.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedPoints<T: Real> {
    pub points: Vec<DVector<T>>,
    pub offset: DVector<T>,
    /// Factor applied to coordinates after centering (1 without rescaling).
    pub scale: T,
    pub truncation: usize,
    pub delta: T,
}

impl<T: Real> PreparedPoints<T> {
    pub fn dim(&self) -> usize {
        self.offset.len()
    }

    /// Fock qubits per coordinate.
    pub fn coordinate_width(&self) -> usize {
        fock_width(self.truncation)
    }

    /// Kernel value of the original data from one of the encoded data:
    /// `k = k_s^{1/s²}`.
    pub fn unscale_kernel(&self, value: T) -> T {
        if self.scale == T::one() {
            value
        } else {
            value.powf(T::one() / (self.scale * self.scale))
        }
    }
}

pub fn prepare_points<T: Real>(points: &[DVector<T>], cfg: &KernelConfig<T>) -> Result<PreparedPoints<T>> {
    let first = points.first().ok_or_else(|| Error::invalid("no points to encode"))?;
    let n = first.len();
    if points.iter().any(|p| p.len() != n) {
        return Err(Error::invalid("points have inconsistent dimension"));
    }
    let mut offset = DVector::zeros(n);
    if cfg.center {
        for i in 0..n {
            let lo = points.iter().map(|p| p[i]).fold(first[i], |a, b| a.min(b));
            let hi = points.iter().map(|p| p[i]).fold(first[i], |a, b| a.max(b));
            offset[i] = (lo + hi) / T::lit(2.0);
        }
    }
    let shifted: Vec<DVector<T>> = points.iter().map(|p| p - &offset).collect();
    let max_abs = shifted
        .iter()
        .flat_map(|p| p.iter())
        .fold(T::zero(), |m, &x| m.max(x.magnitude()));
    let scale = match cfg.rescale_to {
        Some(limit) if limit <= T::zero() => {
            return Err(Error::invalid("rescale target must be positive"));
        }
        Some(limit) if max_abs > limit => limit / max_abs,
        _ => T::one(),
    };
    let points: Vec<DVector<T>> = shifted.into_iter().map(|p| p * scale).collect();
    let delta = cfg.delta.as_f64();
    let truncation = points
        .iter()
        .flat_map(|p| p.iter())
        .map(|x| truncation_level(x.as_f64(), delta))
        .try_fold(1usize, |m, t| t.map(|t| m.max(t)))?;
    Ok(PreparedPoints {
        points,
        offset,
        scale,
        truncation,
        delta: cfg.delta,
    })
}

/// `⊗_i |φ̃_{x_i}⟩` on one `fock` register of `N · ⌈log₂T⌉` qubits.
pub fn encode_point<T: Real>(x: &DVector<T>, truncation: usize) -> Result<StateVector<T>> {
    let amps = point_amplitudes(x, truncation)?;
    let width = x.len() * fock_width(truncation);
    StateVector::from_amplitudes(Layout::new(&[(FOCK, width)])?, amps)
}

fn point_amplitudes<T: Real>(x: &DVector<T>, truncation: usize) -> Result<Vec<Complex<T>>> {
    if x.is_empty() {
        return Err(Error::invalid("cannot encode a zero-dimensional point"));
    }
    let w = fock_width(truncation);
    let mut amps = vec![real(T::one())];
    for &xi in x.iter() {
        let coord = coherent_state(xi, truncation)?.padded(w)?;
        amps = amps
            .iter()
            .flat_map(|&a| coord.iter().map(move |&c| a * real(c)))
            .collect();
    }
    Ok(amps)
}

/// Uniform superposition over the first `m` values of an index register.
fn uniform_index<T: Real>(m: usize) -> Result<StateVector<T>> {
    let w = index_width(m);
    let layout = Layout::new(&[(INDEX, w)])?;
    if m == 1 << w {
        // Fourier transform of |0⟩.
        StateVector::zero(layout).qft(INDEX)
    } else {
        let a = real(T::one() / T::from_usize_lossy(m).sqrt());
        let amps = (0..1usize << w)
            .map(|p| if p < m { a } else { real(T::zero()) })
            .collect();
        StateVector::from_amplitudes(layout, amps)
    }
}

/// `(1/√M) Σ_p |p⟩_index |φ_{x_p}⟩_fock`: uniform index state, then a
/// preparation of `|φ_{x_p}⟩` controlled on each index value.
pub fn superposition<T: Real>(points: &[DVector<T>], truncation: usize) -> Result<StateVector<T>> {
    let m = points.len();
    if m == 0 {
        return Err(Error::invalid("no points to superpose"));
    }
    let n = points[0].len();
    let fock = Layout::new(&[(FOCK, n * fock_width(truncation))])?;
    let mut state = uniform_index::<T>(m)?.tensor(&StateVector::zero(fock))?;
    let index: Vec<usize> = state.layout().qubits(INDEX)?.collect();
    let targets: Vec<usize> = state.layout().qubits(FOCK)?.collect();
    for (p, x) in points.iter().enumerate() {
        if x.len() != n {
            return Err(Error::invalid("points have inconsistent dimension"));
        }
        let prep = Reflection::preparing(&point_amplitudes(x, truncation)?)?;
        let controls: Vec<(usize, bool)> = index
            .iter()
            .enumerate()
            .map(|(b, &q)| (q, (p >> (index.len() - 1 - b)) & 1 == 1))
            .collect();
        state.apply_map_mut(&targets, &controls, |buf| prep.apply(buf))?;
    }
    Ok(state)
}

pub fn training_superposition<T: Real>(d: &Dataset<T>, truncation: usize) -> Result<StateVector<T>> {
    superposition(d.inputs(), truncation)
}

/// `Tr_fock |Ψ⟩⟨Ψ|` on the index register.
pub fn kernel_density<T: Real>(psi: &StateVector<T>) -> Result<DensityOperator<T>> {
    psi.partial_trace(&[INDEX])
}

/// `M · Re ρ` restricted to the first `m` indices.
pub fn kernel_estimate<T: Real>(rho: &DensityOperator<T>, m: usize) -> Result<DMatrix<T>> {
    if m > rho.dim() {
        return Err(Error::invalid("more points than index values"));
    }
    let full = rho.real_part();
    Ok(full.view((0, 0), (m, m)).into_owned() * T::from_usize_lossy(m))
}

/// Coherent-state estimate of the Gram matrix of `points`, in the units of
/// the original data.
pub fn coherent_gram<T: Real>(points: &[DVector<T>], cfg: &KernelConfig<T>) -> Result<DMatrix<T>> {
    let prepared = prepare_points(points, cfg)?;
    let psi = superposition(&prepared.points, prepared.truncation)?;
    let k = kernel_estimate(&kernel_density(&psi)?, points.len())?;
    Ok(k.map(|v| prepared.unscale_kernel(v)))
}
