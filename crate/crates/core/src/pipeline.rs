//! End-to-end quantum-simulated prediction and the comparison report.
//!
//! Stages, in order: `kernel` (classical Gram matrix or coherent-state
//! estimate), `encoding` (amplitude encoding of `k_*` and `y` with norm
//! estimation), `inversion` (the operator `U`), `interference` (mean and
//! variance circuits) and `recovery`. Errors carry the stage they came from.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::block_encoding::coherent_kernel_vector;
use crate::classical::{
    gram_matrix, kernel_vector, predict_cholesky, sorted_symmetric_eigen, Dataset, Hyperparams, Prediction,
};
use crate::coherent::{coherent_gram, KernelConfig};
use crate::encoding::{encode, sampled_norm_sq, EncodedVector};
use crate::error::{Error, Result, StageExt};
use crate::hamiltonian::{pad_hamiltonian, EvolutionOracle, SYSTEM};
use crate::interference::{
    mean_circuit, recover_mean, recover_variance, variance_circuit, InterferenceOutcome, WILSON_Z,
};
use crate::qpe::{auto_rotation_constant, build_exact_u, build_u, InversionUnitary, QpeConfig, MAX_QPE_BITS};
use crate::scalar::Real;
use crate::statevector::{Layout, Sampling, StateVector};

pub const STAGE_KERNEL: &str = "kernel";
pub const STAGE_ENCODING: &str = "encoding";
pub const STAGE_INVERSION: &str = "inversion";
pub const STAGE_INTERFERENCE: &str = "interference";
pub const STAGE_RECOVERY: &str = "recovery";
pub const STAGE_CLASSICAL: &str = "classical";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EigenvalueMode {
    Exact,
    Qpe,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelSource {
    Classical,
    Coherent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub noise_variance: f64,
    pub qpe_bits: usize,
    /// `None` picks the largest valid constant automatically.
    pub rotation_constant: Option<f64>,
    pub truncation_delta: f64,
    pub eigenvalue_mode: EigenvalueMode,
    pub kernel_source: KernelSource,
    /// `None` means exact probabilities.
    pub shots: Option<u64>,
    pub seed: u64,
    /// Overrides the default `2π / (1.1 λ_max)` phase-estimation time.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evolution_time: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            noise_variance: 0.1,
            qpe_bits: 8,
            rotation_constant: None,
            truncation_delta: 1e-6,
            eigenvalue_mode: EigenvalueMode::Exact,
            kernel_source: KernelSource::Classical,
            shots: None,
            seed: 0,
            evolution_time: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return Err(Error::invalid("noise variance must be finite and nonnegative"));
        }
        if !(1..=MAX_QPE_BITS).contains(&self.qpe_bits) {
            return Err(Error::invalid(format!("qpe bits must lie in [1, {MAX_QPE_BITS}]")));
        }
        if let Some(c) = self.rotation_constant {
            if !(c > 0.0 && c.is_finite()) {
                return Err(Error::invalid("rotation constant must be positive"));
            }
        }
        if !(self.truncation_delta > 0.0 && self.truncation_delta < 1.0) {
            return Err(Error::invalid("truncation delta must lie in (0, 1)"));
        }
        if self.shots == Some(0) {
            return Err(Error::invalid("shots must be at least 1"));
        }
        if let Some(t) = self.evolution_time {
            if !(t > 0.0 && t.is_finite()) {
                return Err(Error::invalid("evolution time must be positive"));
            }
        }
        Ok(())
    }

    pub fn sampling(&self) -> Sampling {
        match self.shots {
            None => Sampling::Ideal,
            Some(shots) => Sampling::Shots { shots, seed: self.seed },
        }
    }
}

/// Prediction with the quantities the report needs.
#[derive(Clone, Debug, PartialEq)]
pub struct QuantumRun<T: Real> {
    pub prediction: Prediction<T>,
    /// Shot-mode intervals at [`WILSON_Z`] standard deviations.
    pub mean_interval: Option<(T, T)>,
    pub variance_interval: Option<(T, T)>,
    pub rotation_constant: T,
    pub evolution_time: Option<T>,
    pub success_probabilities: BTreeMap<String, f64>,
}

struct Norm<T: Real> {
    value: T,
    interval: Option<(T, T)>,
}

fn norm_of<T: Real>(e: &EncodedVector<T>, sampling: Sampling) -> Result<Norm<T>> {
    match sampling {
        Sampling::Ideal => Ok(Norm {
            value: e.norm_sq_estimate().sqrt(),
            interval: None,
        }),
        Sampling::Shots { shots, seed } => {
            let (est, lo, hi) = sampled_norm_sq(e, shots, seed, WILSON_Z)?;
            Ok(Norm {
                value: est.sqrt(),
                interval: Some((lo.sqrt(), hi.sqrt())),
            })
        }
    }
}

fn on_system<T: Real>(e: &EncodedVector<T>, width: usize) -> Result<StateVector<T>> {
    if e.state().num_qubits() != width {
        return Err(Error::invalid("encoded vector width differs from the kernel system"));
    }
    StateVector::from_amplitudes(Layout::new(&[(SYSTEM, width)])?, e.state().amplitudes().to_vec())
}

/// Bounds of `s / c · a · b` over the box `s ∈ S, a ∈ A, b ∈ B` (all of
/// `a, b` nonnegative).
fn product_interval<T: Real>(s: (T, T), a: (T, T), b: (T, T), c: T) -> (T, T) {
    let corners = [s.0 * a.0 * b.0, s.0 * a.1 * b.1, s.1 * a.0 * b.0, s.1 * a.1 * b.1];
    let lo = corners.iter().fold(corners[0], |m, &v| m.min(v));
    let hi = corners.iter().fold(corners[0], |m, &v| m.max(v));
    (lo / c, hi / c)
}

fn point_or_interval<T: Real>(n: &Norm<T>) -> (T, T) {
    n.interval.unwrap_or((n.value, n.value))
}

fn kernel_stage<T: Real>(
    d: &Dataset<T>,
    cfg: &RunConfig,
    probs: &mut BTreeMap<String, f64>,
) -> Result<(DMatrix<T>, DVector<T>)> {
    match cfg.kernel_source {
        KernelSource::Classical => Ok((gram_matrix(d.inputs()), kernel_vector(d))),
        KernelSource::Coherent => {
            let kc = KernelConfig::new(T::lit(cfg.truncation_delta));
            // M·ρ: the 1/M of the density operator is undone here, so the
            // spectrum below is that of K.
            let gram = coherent_gram(d.inputs(), &kc)?;
            let gram = (&gram + gram.transpose()) * T::lit(0.5);
            let (kv, p) = coherent_kernel_vector(d, &kc)?;
            probs.insert("kernel_extraction".into(), p.as_f64());
            Ok((gram, kv))
        }
    }
}

fn inversion_stage<T: Real>(k: &DMatrix<T>, cfg: &RunConfig) -> Result<(InversionUnitary<T>, Option<T>)> {
    let noise = T::lit(cfg.noise_variance);
    let padded = pad_hamiltonian(k);
    let (vals, vecs) = sorted_symmetric_eigen(&padded);
    let lambda_max = vals[0];
    let lambda_min = vals[vals.len() - 1];
    match cfg.eigenvalue_mode {
        EigenvalueMode::Exact => {
            let c = match cfg.rotation_constant {
                Some(c) => T::lit(c),
                None => auto_rotation_constant(lambda_min.max(T::zero()), noise)?,
            };
            Ok((build_exact_u(&vals, &vecs, c, noise)?, None))
        }
        EigenvalueMode::Qpe => {
            let t = match cfg.evolution_time {
                Some(t) => T::lit(t),
                None => EvolutionOracle::default_time(lambda_max),
            };
            // Register value 0 (λ̃ = 0) can always be populated by leakage.
            let c = match cfg.rotation_constant {
                Some(c) => T::lit(c),
                None => auto_rotation_constant(T::zero(), noise)?,
            };
            let qcfg = QpeConfig::new(cfg.qpe_bits, t, c)?;
            let oracle = EvolutionOracle::new(padded, t, cfg.qpe_bits)?;
            Ok((build_u(&oracle, &qcfg, noise)?, Some(t)))
        }
    }
}

/// Runs every stage and returns the prediction with diagnostics.
pub fn run_quantum<T: Real>(d: &Dataset<T>, cfg: &RunConfig) -> Result<QuantumRun<T>> {
    cfg.validate()?;
    let sampling = cfg.sampling();
    let mut probs = BTreeMap::new();

    let (k, kstar) = kernel_stage(d, cfg, &mut probs).stage(STAGE_KERNEL)?;
    let (u, evolution_time) = inversion_stage(&k, cfg).stage(STAGE_INVERSION)?;
    let c = u.rotation_constant();

    let zero = |v: &DVector<T>| v.iter().all(|&x| x == T::zero());
    if zero(&kstar) {
        // Test point decorrelated from every training point: the prior.
        return Ok(QuantumRun {
            prediction: Prediction {
                mean: T::zero(),
                variance: T::one(),
            },
            mean_interval: None,
            variance_interval: None,
            rotation_constant: c,
            evolution_time,
            success_probabilities: probs,
        });
    }

    let width = u.system_width();
    let (k_enc, k_norm, k_state) = (|| {
        let e = encode(&kstar)?;
        let n = norm_of(&e, sampling.for_stage(1))?;
        let s = on_system(&e, width)?;
        Ok::<_, Error>((e, n, s))
    })()
    .stage(STAGE_ENCODING)?;
    probs.insert("encode_k".into(), k_enc.success_probability().as_f64());

    let var = variance_circuit(&u, &k_state, sampling.for_stage(4)).stage(STAGE_INTERFERENCE)?;
    probs.insert("variance_readout".into(), var.measured_probability.as_f64());

    let mean_part = if zero(d.targets()) {
        None
    } else {
        let (y_enc, y_norm, y_state) = (|| {
            let e = encode(d.targets())?;
            let n = norm_of(&e, sampling.for_stage(2))?;
            let s = on_system(&e, width)?;
            Ok::<_, Error>((e, n, s))
        })()
        .stage(STAGE_ENCODING)?;
        probs.insert("encode_y".into(), y_enc.success_probability().as_f64());
        let o = mean_circuit(&u, &k_state, &y_state, sampling.for_stage(3)).stage(STAGE_INTERFERENCE)?;
        probs.insert("mean_readout".into(), o.measured_probability.as_f64());
        Some((o, y_norm))
    };

    let recovered = (|| {
        let variance = recover_variance(&var, k_norm.value)?;
        let variance_interval = var.interval.map(|s| {
            let ki = point_or_interval(&k_norm);
            let (lo, hi) = product_interval(s, ki, ki, c);
            (T::one() - hi, T::one() - lo)
        });
        let (mean, mean_interval) = match &mean_part {
            None => (T::zero(), None),
            Some((o, y_norm)) => (
                recover_mean(o, k_norm.value, y_norm.value)?,
                interval_of(o, &k_norm, y_norm, c),
            ),
        };
        Ok::<_, Error>((Prediction { mean, variance }, mean_interval, variance_interval))
    })()
    .stage(STAGE_RECOVERY)?;

    Ok(QuantumRun {
        prediction: recovered.0,
        mean_interval: recovered.1,
        variance_interval: recovered.2,
        rotation_constant: c,
        evolution_time,
        success_probabilities: probs,
    })
}

fn interval_of<T: Real>(o: &InterferenceOutcome<T>, k: &Norm<T>, y: &Norm<T>, c: T) -> Option<(T, T)> {
    o.interval
        .map(|s| product_interval(s, point_or_interval(k), point_or_interval(y), c))
}

pub fn qgpr_predict<T: Real>(d: &Dataset<T>, cfg: &RunConfig) -> Result<Prediction<T>> {
    Ok(run_quantum(d, cfg)?.prediction)
}

pub fn classical_predict<T: Real>(d: &Dataset<T>, cfg: &RunConfig) -> Result<Prediction<T>> {
    (|| predict_cholesky(d, &Hyperparams::new(T::lit(cfg.noise_variance))?))().stage(STAGE_CLASSICAL)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    pub classical_mean: f64,
    pub classical_variance: f64,
    pub quantum_mean: f64,
    pub quantum_variance: f64,
    pub abs_error_mean: f64,
    pub abs_error_variance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantum_mean_interval: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quantum_variance_interval: Option<[f64; 2]>,
    pub rotation_constant: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub evolution_time: Option<f64>,
    pub success_probabilities: BTreeMap<String, f64>,
    pub config: RunConfig,
    /// Wall-clock seconds per side; only present when requested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timings: Option<BTreeMap<String, f64>>,
}

impl ComparisonReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("report: {e}")))
    }
}

/// Classical oracle and quantum pipeline on the same dataset.
pub fn compare(d: &Dataset<f64>, cfg: &RunConfig, timings: bool) -> Result<ComparisonReport> {
    let start = Instant::now();
    let classical = classical_predict(d, cfg)?;
    let classical_seconds = start.elapsed().as_secs_f64();
    let start = Instant::now();
    let run = run_quantum(d, cfg)?;
    let quantum_seconds = start.elapsed().as_secs_f64();
    let pair = |p: (f64, f64)| [p.0, p.1];
    Ok(ComparisonReport {
        dataset: None,
        classical_mean: classical.mean,
        classical_variance: classical.variance,
        quantum_mean: run.prediction.mean,
        quantum_variance: run.prediction.variance,
        abs_error_mean: (run.prediction.mean - classical.mean).abs(),
        abs_error_variance: (run.prediction.variance - classical.variance).abs(),
        quantum_mean_interval: run.mean_interval.map(pair),
        quantum_variance_interval: run.variance_interval.map(pair),
        rotation_constant: run.rotation_constant,
        evolution_time: run.evolution_time,
        success_probabilities: run.success_probabilities,
        config: cfg.clone(),
        timings: timings.then(|| {
            BTreeMap::from([
                ("classical_seconds".to_owned(), classical_seconds),
                ("quantum_seconds".to_owned(), quantum_seconds),
            ])
        }),
    })
}
