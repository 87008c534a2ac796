//! Hamming-kernel fitness and its quantization-aware variant.
//!
//! For each LIF layer the binarized activity rows of the minibatch give an
//! S×S matrix with entries `N - β·H(b_i, b_j)`. The fitness is
//! `ln |det Σ_l M_l|`; a numerically singular sum marks the candidate invalid.

use std::cmp::Ordering;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::arch::NetworkArch;
use crate::batch::Batch;
use crate::error::{Error, Result};
use crate::quant::QuantSpec;
use crate::spike::{forward, init_weights, ActivityRecord, LayerActivity, LifParams, SpikeMatrix, WeightSeed};

/// Incumbent score before any candidate is accepted.
pub const INITIAL_BEST: f64 = -1000.0;

/// Pivot magnitude, relative to the largest entry, below which the kernel is singular.
pub const SINGULAR_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FitnessScore {
    /// Singular kernel; ranks below every finite score.
    Singular,
    Value(f64),
}

impl FitnessScore {
    pub fn value(self) -> Option<f64> {
        match self {
            FitnessScore::Value(v) => Some(v),
            FitnessScore::Singular => None,
        }
    }

    pub fn is_valid(self) -> bool {
        matches!(self, FitnessScore::Value(_))
    }

    /// Strict improvement over an incumbent score.
    pub fn beats(self, incumbent: f64) -> bool {
        self.value().is_some_and(|v| v > incumbent)
    }
}

impl PartialOrd for FitnessScore {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        match (self, other) {
            (FitnessScore::Singular, FitnessScore::Singular) => Some(Ordering::Equal),
            (FitnessScore::Singular, FitnessScore::Value(_)) => Some(Ordering::Less),
            (FitnessScore::Value(_), FitnessScore::Singular) => Some(Ordering::Greater),
            (FitnessScore::Value(a), FitnessScore::Value(b)) => a.partial_cmp(b),
        }
    }
}

impl Serialize for FitnessScore {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.value().serialize(s)
    }
}

impl<'de> Deserialize<'de> for FitnessScore {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.map_or(FitnessScore::Singular, FitnessScore::Value))
    }
}

/// How the per-layer distance weight β is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BetaRule {
    Named(BetaName),
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BetaName {
    /// β = S / N for a layer with N neurons and S samples.
    SamplesPerNeuron,
}

impl Default for BetaRule {
    fn default() -> Self {
        BetaRule::Named(BetaName::SamplesPerNeuron)
    }
}

impl BetaRule {
    pub fn resolve(&self, samples: usize, neurons: usize) -> f64 {
        match *self {
            BetaRule::Named(BetaName::SamplesPerNeuron) => samples as f64 / neurons as f64,
            BetaRule::Fixed(b) => b,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            BetaRule::Fixed(b) if !(b.is_finite() && b > 0.0) => Err(Error::config("fitness.beta", "must be positive")),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct HammingMatrix {
    pub size: usize,
    pub neurons: usize,
    pub beta: f64,
    /// Row-major S×S.
    pub values: Vec<f64>,
}

impl HammingMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.size + j]
    }
}

/// `m[i][j] = N - β·H(row_i, row_j)`.
pub fn hamming_matrix(spikes: &SpikeMatrix, beta: f64) -> HammingMatrix {
    let (s, n) = (spikes.rows(), spikes.cols());
    let mut values = vec![0.0; s * s];
    for i in 0..s {
        values[i * s + i] = n as f64;
        for j in i + 1..s {
            let v = n as f64 - beta * spikes.hamming(i, j) as f64;
            values[i * s + j] = v;
            values[j * s + i] = v;
        }
    }
    HammingMatrix {
        size: s,
        neurons: n,
        beta,
        values,
    }
}

/// One matrix per recorded LIF layer, with β from `rule`.
pub fn layer_matrices(record: &ActivityRecord, rule: &BetaRule) -> Vec<HammingMatrix> {
    record
        .layers
        .iter()
        .map(|l: &LayerActivity| hamming_matrix(&l.spikes, rule.resolve(l.spikes.rows(), l.spikes.cols())))
        .collect()
}

/// `ln |det A|` for row-major `n×n` input by LU with partial pivoting, or
/// `None` when a pivot falls below the singularity tolerance.
pub fn log_abs_det(matrix: &[f64], n: usize) -> Option<f64> {
    assert_eq!(matrix.len(), n * n, "matrix must be n×n");
    let mut a = matrix.to_vec();
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if n == 0 {
        return Some(0.0);
    }
    if scale == 0.0 || !scale.is_finite() {
        return None;
    }
    let tol = SINGULAR_TOLERANCE * scale;
    let mut log_det = 0.0;
    for k in 0..n {
        let (pivot_row, pivot) =
            (k..n)
                .map(|r| (r, a[r * n + k].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        if pivot <= tol {
            return None;
        }
        if pivot_row != k {
            for c in 0..n {
                a.swap(k * n + c, pivot_row * n + c);
            }
        }
        let diag = a[k * n + k];
        log_det += diag.abs().ln();
        for r in k + 1..n {
            let factor = a[r * n + k] / diag;
            if factor == 0.0 {
                continue;
            }
            for c in k + 1..n {
                a[r * n + c] -= factor * a[k * n + c];
            }
        }
    }
    Some(log_det)
}

/// `ln |det Σ_l m_l|`, or [`FitnessScore::Singular`].
pub fn fitness_score(matrices: &[HammingMatrix]) -> Result<FitnessScore> {
    let first = matrices.first().ok_or(Error::NoLifLayers)?;
    let s = first.size;
    if matrices.iter().any(|m| m.size != s) {
        return Err(Error::InvalidArgument("hamming matrices differ in size".into()));
    }
    let mut kernel = vec![0.0; s * s];
    for m in matrices {
        for (k, v) in kernel.iter_mut().zip(&m.values) {
            *k += v;
        }
    }
    Ok(log_abs_det(&kernel, s).map_or(FitnessScore::Singular, FitnessScore::Value))
}

pub fn score_activity(record: &ActivityRecord, rule: &BetaRule) -> Result<FitnessScore> {
    fitness_score(&layer_matrices(record, rule))
}

/// Seeded init, quantize, simulate: the activity a QaFE score is computed from.
pub fn quantized_activity(
    arch: &NetworkArch,
    spec: &QuantSpec,
    batch: &Batch,
    lif: &LifParams,
    seed: impl Into<WeightSeed>,
) -> Result<ActivityRecord> {
    let weights = init_weights(arch, seed).quantized(spec)?;
    forward(arch, &weights, batch, lif)
}

/// Quantization-aware fitness of one candidate.
pub fn qafe_score(
    arch: &NetworkArch,
    spec: &QuantSpec,
    batch: &Batch,
    lif: &LifParams,
    seed: impl Into<WeightSeed>,
    rule: &BetaRule,
) -> Result<FitnessScore> {
    score_activity(&quantized_activity(arch, spec, batch, lif, seed)?, rule)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows(bits: &[&str]) -> SpikeMatrix {
        let rows: Vec<Vec<bool>> = bits.iter().map(|r| r.chars().map(|c| c == '1').collect()).collect();
        SpikeMatrix::from_rows(&rows).unwrap()
    }

    #[test]
    fn hamming_examples() {
        let same = hamming_matrix(&rows(&["10110", "10110"]), 1.0);
        assert_eq!(same.values, vec![5.0; 4]);

        let m = hamming_matrix(&rows(&["10110", "00111"]), 1.0);
        assert_eq!(m.values, vec![5.0, 3.0, 3.0, 5.0]);

        let m2 = hamming_matrix(&rows(&["10110", "00111"]), 2.0);
        assert_eq!(m2.get(0, 1), 1.0);
        assert_eq!(m2.get(1, 1), 5.0);
    }

    #[test]
    fn two_by_two_log_det() {
        let m = hamming_matrix(&rows(&["10110", "00111"]), 1.0);
        let FitnessScore::Value(f) = fitness_score(&[m]).unwrap() else {
            panic!("expected finite score");
        };
        assert!((f - 16f64.ln()).abs() < 1e-12);
        assert!((f - 2.7726).abs() < 1e-4);
    }

    #[test]
    fn identical_rows_are_singular() {
        let m = hamming_matrix(&rows(&["0110", "0110", "0110"]), 1.0);
        assert_eq!(fitness_score(&[m]).unwrap(), FitnessScore::Singular);
        let zeros = hamming_matrix(&SpikeMatrix::zeros(4, 9), 0.5);
        assert_eq!(fitness_score(&[zeros]).unwrap(), FitnessScore::Singular);
    }

    #[test]
    fn empty_list_errors() {
        let err = fitness_score(&[]).unwrap_err();
        assert_eq!(err.to_string(), "no LIF layers recorded");
    }

    #[test]
    fn negative_determinant_uses_abs() {
        // det = -3
        let a = [1.0, 2.0, 2.0, 1.0];
        assert!((log_abs_det(&a, 2).unwrap() - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn sentinel_ordering() {
        assert!(FitnessScore::Singular < FitnessScore::Value(-1e300));
        assert!(FitnessScore::Value(1.0) > FitnessScore::Value(0.5));
        assert!(!FitnessScore::Singular.beats(INITIAL_BEST));
        assert!(!FitnessScore::Value(-1000.0).beats(INITIAL_BEST));
        assert!(FitnessScore::Value(-999.0).beats(INITIAL_BEST));
        assert_eq!(serde_json::to_string(&FitnessScore::Singular).unwrap(), "null");
    }

    #[test]
    fn beta_rule_text() {
        let named: BetaRule = serde_json::from_str("\"samples_per_neuron\"").unwrap();
        assert_eq!(named, BetaRule::default());
        assert_eq!(named.resolve(16, 64), 0.25);
        let fixed: BetaRule = serde_json::from_str("0.5").unwrap();
        assert_eq!(fixed.resolve(16, 64), 0.5);
        assert!(BetaRule::Fixed(-1.0).validate().is_err());
    }
}
