//! Core state and norm types shared by every other module: model parameters,
//! tail-occupancy vectors, weight sequences, weighted norms, and the
//! fluctuation-sample container.
//!
//! A tail vector `v` stores `v(1) >= v(2) >= ... >= v(kmax)` with the implicit
//! boundary `v(0) = 1` and `v(k) = 0` for `k > kmax`. Entry `k` is the
//! fraction of queues holding at least `k` customers. All types are immutable
//! after construction and safe to share across threads.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Absolute tolerance for lattice-membership checks, applied after
/// multiplying by the queue count.
pub const LATTICE_TOL: f64 = 1e-12;

/// Arrival/service rates and the choice count.
///
/// `rho = alpha / beta` is stored, not recomputed, so that serialization
/// round-trips bit-exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawModelParams")]
pub struct ModelParams {
    alpha: f64,
    beta: f64,
    #[serde(rename = "bigL")]
    big_l: u32,
    rho: f64,
}

#[derive(Deserialize)]
struct RawModelParams {
    alpha: f64,
    beta: f64,
    #[serde(rename = "bigL")]
    big_l: u32,
    #[serde(default)]
    rho: Option<f64>,
}

impl TryFrom<RawModelParams> for ModelParams {
    type Error = Error;

    fn try_from(raw: RawModelParams) -> Result<Self> {
        let p = ModelParams::new(raw.alpha, raw.beta, raw.big_l)?;
        if let Some(rho) = raw.rho {
            if rho != p.rho {
                return Err(Error::InvalidParameter {
                    name: "rho",
                    reason: format!("stored rho {rho} != alpha/beta {}", p.rho),
                });
            }
        }
        Ok(p)
    }
}

impl ModelParams {
    /// Validates `alpha > 0`, `beta > 0`, `bigL >= 1` and derives the load.
    pub fn new(alpha: f64, beta: f64, big_l: u32) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidParameter {
                name: "alpha",
                reason: format!("must be a positive finite rate, got {alpha}"),
            });
        }
        Self::with_alpha_checked(alpha, beta, big_l)
    }

    /// Pure-death variant with `alpha = 0`: no arrivals, service only.
    ///
    /// Used as a drain diagnostic; every formula degrades continuously.
    pub fn drain_only(beta: f64, big_l: u32) -> Result<Self> {
        Self::with_alpha_checked(0.0, beta, big_l)
    }

    fn with_alpha_checked(alpha: f64, beta: f64, big_l: u32) -> Result<Self> {
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(Error::InvalidParameter {
                name: "beta",
                reason: format!("must be a positive finite rate, got {beta}"),
            });
        }
        if big_l < 1 {
            return Err(Error::InvalidParameter {
                name: "bigL",
                reason: "choice count must be >= 1".into(),
            });
        }
        Ok(Self {
            alpha,
            beta,
            big_l,
            rho: alpha / beta,
        })
    }

    #[inline]
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    #[inline]
    pub fn beta(&self) -> f64 {
        self.beta
    }

    /// Choice count `L`.
    #[inline]
    pub fn big_l(&self) -> u32 {
        self.big_l
    }

    /// Load `rho = alpha / beta`.
    #[inline]
    pub fn rho(&self) -> f64 {
        self.rho
    }

    /// Errors unless `rho < 1` (the stability condition).
    pub fn require_stable(&self) -> Result<()> {
        if self.rho < 1.0 {
            Ok(())
        } else {
            Err(Error::InvalidParameter {
                name: "rho",
                reason: format!("rho = alpha/beta = {} must be < 1", self.rho),
            })
        }
    }
}

/// A truncated element of the tail-state space: entries `v(1) ..= v(kmax)`,
/// nonincreasing, in `[0, 1]`; `v(0) = 1` and `v(k) = 0` beyond `kmax`
/// by convention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTailVector")]
pub struct TailVector {
    values: Vec<f64>,
    kmax: usize,
}

#[derive(Deserialize)]
struct RawTailVector {
    values: Vec<f64>,
    kmax: usize,
}

impl TryFrom<RawTailVector> for TailVector {
    type Error = Error;

    fn try_from(raw: RawTailVector) -> Result<Self> {
        if raw.kmax != raw.values.len() {
            return Err(Error::InvalidTail {
                index: 0,
                reason: format!(
                    "kmax {} disagrees with values length {}",
                    raw.kmax,
                    raw.values.len()
                ),
            });
        }
        validate_tail(&raw.values, None)
    }
}

/// Validates a raw sequence as a tail vector. With `n_queues` given, also
/// checks that every entry lies on the `1/N` lattice (membership in the
/// finite-`N` state space), to absolute tolerance [`LATTICE_TOL`] after
/// multiplying by `N`.
pub fn validate_tail(values: &[f64], n_queues: Option<u64>) -> Result<TailVector> {
    let mut prev = 1.0;
    for (i, &v) in values.iter().enumerate() {
        let k = i + 1;
        if !v.is_finite() || !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidTail {
                index: k,
                reason: format!("entry {v} outside [0, 1]"),
            });
        }
        if v > prev {
            return Err(Error::InvalidTail {
                index: k,
                reason: format!("increasing at k={}->{}: {prev} < {v}", k - 1, k),
            });
        }
        if let Some(n) = n_queues {
            let scaled = v * n as f64;
            if (scaled - scaled.round()).abs() > LATTICE_TOL {
                return Err(Error::InvalidTail {
                    index: k,
                    reason: format!("{v} is not a multiple of 1/{n} within tolerance {LATTICE_TOL}"),
                });
            }
        }
        prev = v;
    }
    Ok(TailVector {
        kmax: values.len(),
        values: values.to_vec(),
    })
}

impl TailVector {
    /// Validated constructor; see [`validate_tail`].
    pub fn new(values: Vec<f64>, n_queues: Option<u64>) -> Result<Self> {
        validate_tail(&values, n_queues)
    }

    /// The all-zero vector (empty network).
    pub fn zero(kmax: usize) -> Self {
        Self {
            values: vec![0.0; kmax],
            kmax,
        }
    }

    #[inline]
    pub fn kmax(&self) -> usize {
        self.kmax
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `v(k)` with the boundary convention `v(0) = 1`, `v(k) = 0` for
    /// `k > kmax`. `k` is 1-based.
    #[inline]
    pub fn at(&self, k: usize) -> f64 {
        if k == 0 {
            1.0
        } else if k <= self.kmax {
            self.values[k - 1]
        } else {
            0.0
        }
    }

    /// Max-norm distance, comparing up to the longer truncation.
    pub fn sup_distance(&self, other: &TailVector) -> f64 {
        let kmax = self.kmax.max(other.kmax);
        (1..=kmax)
            .map(|k| (self.at(k) - other.at(k)).abs())
            .fold(0.0, f64::max)
    }
}

/// How a weight sequence was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WeightKind {
    /// `w(k) = theta^k`.
    Geometric { theta: f64 },
    /// Potential coefficients of the stationary birth-death generator.
    Potential,
    /// Caller-supplied positive entries.
    Explicit,
}

/// A positive weight sequence `w(1..=kmax)` defining the weighted
/// `l2`/`l1` norms, optionally with comparability constants `(c, d)`
/// satisfying `c*w(k+1) <= w(k) <= d*w(k+1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawWeightSequence")]
pub struct WeightSequence {
    kind: WeightKind,
    values: Vec<f64>,
    comp_constants: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "is_false")]
    underflow_clamped: bool,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Deserialize)]
struct RawWeightSequence {
    kind: WeightKind,
    values: Vec<f64>,
    #[serde(default)]
    comp_constants: Option<(f64, f64)>,
    #[serde(default)]
    underflow_clamped: bool,
}

impl TryFrom<RawWeightSequence> for WeightSequence {
    type Error = Error;

    fn try_from(raw: RawWeightSequence) -> Result<Self> {
        let w = WeightSequence::checked(raw.kind, raw.values, raw.comp_constants)?;
        Ok(WeightSequence {
            underflow_clamped: raw.underflow_clamped,
            ..w
        })
    }
}

impl WeightSequence {
    fn checked(
        kind: WeightKind,
        values: Vec<f64>,
        comp_constants: Option<(f64, f64)>,
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidParameter {
                name: "values",
                reason: "weight sequence must be nonempty".into(),
            });
        }
        for (i, &w) in values.iter().enumerate() {
            if !(w > 0.0) || !w.is_finite() {
                return Err(Error::InvalidParameter {
                    name: "values",
                    reason: format!("w({}) = {w} is not positive finite", i + 1),
                });
            }
        }
        if let Some((c, d)) = comp_constants {
            if !(c > 0.0 && d > 0.0) {
                return Err(Error::InvalidParameter {
                    name: "comp_constants",
                    reason: format!("(c, d) = ({c}, {d}) must be positive"),
                });
            }
            for k in 0..values.len() - 1 {
                let (wk, wk1) = (values[k], values[k + 1]);
                if c * wk1 > wk * (1.0 + 1e-12) || wk > d * wk1 * (1.0 + 1e-12) {
                    return Err(Error::InvalidParameter {
                        name: "comp_constants",
                        reason: format!(
                            "c*w({}) <= w({}) <= d*w({}) violated",
                            k + 2,
                            k + 1,
                            k + 2
                        ),
                    });
                }
            }
        }
        Ok(Self {
            kind,
            values,
            comp_constants,
            underflow_clamped: false,
        })
    }

    /// Explicit positive weights, no comparability constants.
    pub fn explicit(values: Vec<f64>) -> Result<Self> {
        Self::checked(WeightKind::Explicit, values, None)
    }

    /// Potential-coefficient weights; used by the spectral module.
    pub(crate) fn potential(values: Vec<f64>, underflow_clamped: bool) -> Result<Self> {
        let w = Self::checked(WeightKind::Potential, values, None)?;
        Ok(Self {
            underflow_clamped,
            ..w
        })
    }

    #[inline]
    pub fn kind(&self) -> &WeightKind {
        &self.kind
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.values.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `w(k)`, 1-based.
    #[inline]
    pub fn at(&self, k: usize) -> f64 {
        self.values[k - 1]
    }

    #[inline]
    pub fn comp_constants(&self) -> Option<(f64, f64)> {
        self.comp_constants
    }

    /// True when underflowed entries were clamped during construction.
    #[inline]
    pub fn underflow_clamped(&self) -> bool {
        self.underflow_clamped
    }
}

/// `w(k) = theta^k` for `k = 1..=kmax`, with comparability constants
/// `c = d = 1/theta`. Requires `0 < theta <= 1`.
pub fn make_geometric_weights(theta: f64, kmax: usize) -> Result<WeightSequence> {
    if !(theta > 0.0 && theta <= 1.0) {
        return Err(Error::InvalidParameter {
            name: "theta",
            reason: format!("must satisfy 0 < theta <= 1, got {theta}"),
        });
    }
    if kmax == 0 {
        return Err(Error::InvalidParameter {
            name: "kmax",
            reason: "must be >= 1".into(),
        });
    }
    let mut values = Vec::with_capacity(kmax);
    let mut w = 1.0;
    for _ in 0..kmax {
        w *= theta;
        values.push(w);
    }
    WeightSequence::checked(
        WeightKind::Geometric { theta },
        values,
        Some((1.0 / theta, 1.0 / theta)),
    )
}

/// `sqrt(sum_k x(k)^2 / w(k))`. Requires `len(x) <= len(w)`.
pub fn weighted_l2_norm(x: &[f64], w: &WeightSequence) -> Result<f64> {
    if x.len() > w.len() {
        return Err(Error::LengthMismatch {
            expected: w.len(),
            actual: x.len(),
        });
    }
    let sum: f64 = x
        .iter()
        .zip(w.values())
        .map(|(&xi, &wi)| xi * xi / wi)
        .sum();
    Ok(sum.sqrt())
}

/// `sum_k |x(k)| / w(k)`. Requires `len(x) <= len(w)`.
pub fn weighted_l1_norm(x: &[f64], w: &WeightSequence) -> Result<f64> {
    if x.len() > w.len() {
        return Err(Error::LengthMismatch {
            expected: w.len(),
            actual: x.len(),
        });
    }
    Ok(x.iter().zip(w.values()).map(|(&xi, &wi)| xi.abs() / wi).sum())
}

/// One realization of the rescaled fluctuation process at fixed times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluctuationSample {
    pub times: Vec<f64>,
    /// Per-time fluctuation vectors `z(1..=kmax)`.
    pub z: Vec<Vec<f64>>,
    pub n_queues: u64,
    pub seed: u64,
    /// Weight sequence used when measuring the sample in weighted norms.
    pub weights: WeightSequence,
}

impl FluctuationSample {
    /// Weighted l2 norm of the sample at time index `i`.
    pub fn norm_at(&self, i: usize) -> Result<f64> {
        weighted_l2_norm(&self.z[i], &self.weights)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn params_validation() {
        let p = ModelParams::new(0.5, 1.0, 2).unwrap();
        assert_eq!(p.rho(), 0.5);
        assert!(ModelParams::new(0.0, 1.0, 2).is_err());
        assert!(ModelParams::new(-1.0, 1.0, 2).is_err());
        assert!(ModelParams::new(1.0, 0.0, 2).is_err());
        assert!(ModelParams::new(1.0, 1.0, 0).is_err());
        assert!(ModelParams::new(f64::NAN, 1.0, 1).is_err());
        let d = ModelParams::drain_only(2.0, 2).unwrap();
        assert_eq!(d.alpha(), 0.0);
        assert_eq!(d.rho(), 0.0);
    }

    #[test]
    fn params_json_round_trip_and_rho_check() {
        let p = ModelParams::new(0.5, 1.0, 2).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert!(s.contains("\"bigL\":2"));
        let q: ModelParams = serde_json::from_str(&s).unwrap();
        assert_eq!(p, q);
        // Inconsistent stored rho is rejected.
        let bad = r#"{"alpha":0.5,"beta":1.0,"bigL":2,"rho":0.7}"#;
        assert!(serde_json::from_str::<ModelParams>(bad).is_err());
        // Omitted rho is derived.
        let ok = r#"{"alpha":0.5,"beta":1.0,"bigL":2}"#;
        assert_eq!(serde_json::from_str::<ModelParams>(ok).unwrap(), p);
    }

    #[test]
    fn geometric_weights_examples() {
        // theta = 1: constant sequence.
        let w = make_geometric_weights(1.0, 3).unwrap();
        assert_eq!(w.values(), &[1.0, 1.0, 1.0]);
        // theta = 0.5: powers of 1/2.
        let w = make_geometric_weights(0.5, 3).unwrap();
        assert_eq!(w.values(), &[0.5, 0.25, 0.125]);
        // theta = 0.9 with comparability constants 1/0.9.
        let w = make_geometric_weights(0.9, 2).unwrap();
        assert!((w.at(1) - 0.9).abs() < 1e-15);
        assert!((w.at(2) - 0.81).abs() < 1e-15);
        let (c, d) = w.comp_constants().unwrap();
        assert_eq!(c, 1.0 / 0.9);
        assert_eq!(d, 1.0 / 0.9);
        // Domain errors.
        assert!(make_geometric_weights(0.0, 3).is_err());
        assert!(make_geometric_weights(1.5, 3).is_err());
        assert!(make_geometric_weights(-0.5, 3).is_err());
    }

    #[test]
    fn l2_norm_examples() {
        let w = make_geometric_weights(0.5, 3).unwrap();
        assert_eq!(weighted_l2_norm(&[0.0, 0.0, 0.0], &w).unwrap(), 0.0);
        let n = weighted_l2_norm(&[1.0, 0.0, 0.0], &w).unwrap();
        assert!((n - 1.4142135623730951).abs() < 1e-15);
        let n = weighted_l2_norm(&[0.5, 0.25], &w).unwrap();
        assert!((n - 0.8660254037844386).abs() < 1e-15);
        assert!(weighted_l2_norm(&[1.0; 4], &w).is_err());
    }

    #[test]
    fn l1_norm_examples() {
        let w = make_geometric_weights(0.5, 2).unwrap();
        assert_eq!(weighted_l1_norm(&[0.0, 0.0], &w).unwrap(), 0.0);
        assert_eq!(weighted_l1_norm(&[1.0, 0.0], &w).unwrap(), 2.0);
        assert_eq!(weighted_l1_norm(&[0.5, 0.25], &w).unwrap(), 2.0);
    }

    #[test]
    fn validate_tail_examples() {
        // (1, 0.5, 0.25) is a valid lattice element for N = 4.
        let v = validate_tail(&[1.0, 0.5, 0.25], Some(4)).unwrap();
        assert_eq!(v.kmax(), 3);
        assert_eq!(v.at(0), 1.0);
        assert_eq!(v.at(4), 0.0);
        // Increasing sequence is rejected with the offending index.
        match validate_tail(&[0.3, 0.5], None) {
            Err(Error::InvalidTail { index, .. }) => assert_eq!(index, 2),
            other => panic!("expected monotonicity error, got {other:?}"),
        }
        // Off-lattice entry rejected at k = 2 for N = 10.
        match validate_tail(&[0.5, 0.33], Some(10)) {
            Err(Error::InvalidTail { index, .. }) => assert_eq!(index, 2),
            other => panic!("expected lattice error, got {other:?}"),
        }
        // 0.3 is fine for N = 10.
        assert!(validate_tail(&[0.5, 0.3], Some(10)).is_ok());
        // Out-of-range entries.
        assert!(validate_tail(&[1.2], None).is_err());
        assert!(validate_tail(&[-0.1], None).is_err());
        assert!(validate_tail(&[f64::NAN], None).is_err());
    }

    #[test]
    fn tail_json_rejects_invalid() {
        let v = validate_tail(&[0.5, 0.25], None).unwrap();
        let s = serde_json::to_string(&v).unwrap();
        let back: TailVector = serde_json::from_str(&s).unwrap();
        assert_eq!(v, back);
        assert!(serde_json::from_str::<TailVector>(r#"{"values":[0.3,0.5],"kmax":2}"#).is_err());
        assert!(serde_json::from_str::<TailVector>(r#"{"values":[0.5],"kmax":3}"#).is_err());
    }

    #[test]
    fn weight_json_round_trip() {
        let w = make_geometric_weights(0.5, 4).unwrap();
        let s = serde_json::to_string(&w).unwrap();
        let back: WeightSequence = serde_json::from_str(&s).unwrap();
        assert_eq!(w, back);
        // Nonpositive weights rejected on parse.
        let bad = r#"{"kind":{"type":"explicit"},"values":[1.0,0.0],"comp_constants":null}"#;
        assert!(serde_json::from_str::<WeightSequence>(bad).is_err());
    }

    #[test]
    fn norm_identity_l2_squared_is_l1_of_square() {
        // ||x||_{L2(w)}^2 == ||x^2||_{l1(w)}
        let w = make_geometric_weights(0.7, 6).unwrap();
        let x = [0.9, -0.4, 0.2, 0.05, -0.01, 0.003];
        let l2 = weighted_l2_norm(&x, &w).unwrap();
        let xsq: Vec<f64> = x.iter().map(|v| v * v).collect();
        let l1 = weighted_l1_norm(&xsq, &w).unwrap();
        assert!((l2 * l2 - l1).abs() <= 1e-12 * l1.max(1.0));
    }

    #[test]
    fn fluctuation_sample_norms() {
        let w = make_geometric_weights(0.5, 2).unwrap();
        let s = FluctuationSample {
            times: vec![0.0, 1.0],
            z: vec![vec![0.0, 0.0], vec![1.0, 0.0]],
            n_queues: 100,
            seed: 7,
            weights: w,
        };
        assert_eq!(s.norm_at(0).unwrap(), 0.0);
        assert!((s.norm_at(1).unwrap() - 2.0_f64.sqrt()).abs() < 1e-15);
        let js = serde_json::to_string(&s).unwrap();
        let back: FluctuationSample = serde_json::from_str(&js).unwrap();
        assert_eq!(s, back);
    }
}
