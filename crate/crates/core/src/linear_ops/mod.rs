//! Truncated linearized operators of the tail dynamics, the associated
//! birth-death structure, self-adjoint symmetrization, the orthogonal
//! polynomial recurrence, spectral-gap estimation, and the linear
//! semigroup.
//!
//! The linearization at a state `v` acts tridiagonally:
//!
//! ```text
//! (K(v) x)(k) = alpha L v(k-1)^(L-1) x(k-1)
//!             - (alpha L v(k)^(L-1) + beta) x(k) + beta x(k+1)
//! ```
//!
//! At the fixed point the subdiagonal entries become the birth rates
//! `lambda_k = beta L rho^(L^k)` of a killed birth-death chain with
//! constant death rate `beta`; its potential coefficients symmetrize the
//! operator and carry the whole spectral theory.

pub mod scaled;
pub mod tridiag;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meanfield::{fixed_point_entry, pow_u128};
use crate::model::{ModelParams, TailVector, WeightSequence};
pub use scaled::ScaledF64;

/// A tridiagonal truncation with Dirichlet boundary (`x(kmax+1) = 0`).
/// `sub[k-1]` sits at `(k+1, k)`, `diag[k-1]` at `(k, k)`, `sup[k-1]` at
/// `(k, k+1)`, all 1-based.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruncatedOperator {
    sub: Vec<f64>,
    diag: Vec<f64>,
    sup: Vec<f64>,
    kmax: usize,
    basis_weights: Option<WeightSequence>,
}

impl TruncatedOperator {
    pub fn new(sub: Vec<f64>, diag: Vec<f64>, sup: Vec<f64>) -> Result<Self> {
        let kmax = diag.len();
        if kmax == 0 || sub.len() != kmax - 1 || sup.len() != kmax - 1 {
            return Err(Error::InvalidParameter {
                name: "diag",
                reason: format!(
                    "band lengths inconsistent: sub {}, diag {}, sup {}",
                    sub.len(),
                    kmax,
                    sup.len()
                ),
            });
        }
        Ok(Self {
            sub,
            diag,
            sup,
            kmax,
            basis_weights: None,
        })
    }

    pub fn with_basis_weights(mut self, w: WeightSequence) -> Self {
        self.basis_weights = Some(w);
        self
    }

    #[inline]
    pub fn kmax(&self) -> usize {
        self.kmax
    }

    #[inline]
    pub fn sub(&self) -> &[f64] {
        &self.sub
    }

    #[inline]
    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    #[inline]
    pub fn sup(&self) -> &[f64] {
        &self.sup
    }

    pub fn basis_weights(&self) -> Option<&WeightSequence> {
        self.basis_weights.as_ref()
    }

    /// Matrix-vector product.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.kmax;
        assert_eq!(x.len(), n, "operand length");
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut acc = self.diag[i] * x[i];
            if i > 0 {
                acc += self.sub[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                acc += self.sup[i] * x[i + 1];
            }
            y[i] = acc;
        }
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.kmax;
        let mut m = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
            if i + 1 < n {
                m[(i + 1, i)] = self.sub[i];
                m[(i, i + 1)] = self.sup[i];
            }
        }
        m
    }

    /// Crude operator-norm bound: maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        let n = self.kmax;
        (0..n)
            .map(|i| {
                self.diag[i].abs()
                    + if i > 0 { self.sub[i - 1].abs() } else { 0.0 }
                    + if i + 1 < n { self.sup[i].abs() } else { 0.0 }
            })
            .fold(0.0, f64::max)
    }
}

/// A symmetric tridiagonal matrix (diagonal plus one symmetric
/// off-diagonal band).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricTridiagonal {
    pub diag: Vec<f64>,
    pub off: Vec<f64>,
}

impl SymmetricTridiagonal {
    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.diag.len();
        let mut m = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = self.diag[i];
            if i + 1 < n {
                m[(i + 1, i)] = self.off[i];
                m[(i, i + 1)] = self.off[i];
            }
        }
        m
    }

    /// View as an operator (sub = sup = off).
    pub fn to_operator(&self) -> TruncatedOperator {
        TruncatedOperator::new(self.off.clone(), self.diag.clone(), self.off.clone())
            .expect("band lengths consistent by construction")
    }

    /// Max absolute asymmetry of the dense form; exactly zero by
    /// construction.
    pub fn max_asymmetry(&self) -> f64 {
        let m = self.to_dense();
        let mt = m.transpose();
        (m - mt).abs().max()
    }
}

/// Birth rates `lambda_k` and death rates `mu_k` of the sub-Markovian
/// chain underlying the stationary linearization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BirthDeathRates {
    pub lambda: Vec<f64>,
    pub mu: Vec<f64>,
    pub kmax: usize,
}

/// Numerical spectral-gap estimate across a sequence of truncations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralEstimate {
    /// Least spectral point at the largest truncation.
    pub gamma_hat: f64,
    /// Full sorted spectrum of the symmetrized truncation (largest kmax).
    pub eigenvalues: Vec<f64>,
    pub kmax_sequence: Vec<usize>,
    /// Gap between the last two truncations; convergence indicator.
    pub richardson_gap: f64,
    /// False when the Richardson gap exceeds `1e-6 * beta`.
    pub converged: bool,
    /// Limit of the zero sequence: `beta` for `L >= 2`,
    /// `beta (1 - sqrt(rho))^2` for `L = 1`.
    pub sigma_proxy: f64,
}

/// `lambda_k = beta L rho^(L^k)` without under/overflow surprises:
/// the power is evaluated by binary exponentiation and flushes to zero
/// once it leaves the f64 range.
pub fn birth_rate(p: &ModelParams, k: usize) -> f64 {
    match (p.big_l() as u128).checked_pow(k as u32) {
        Some(e) => p.beta() * p.big_l() as f64 * pow_u128(p.rho(), e),
        None => 0.0,
    }
}

fn birth_rate_scaled(p: &ModelParams, k: usize) -> Option<ScaledF64> {
    let e = (p.big_l() as u128).checked_pow(k as u32)?;
    Some(ScaledF64::new(p.beta() * p.big_l() as f64).mul(&ScaledF64::pow(p.rho(), e)))
}

/// Birth/death rate table of the stationary linearization. Requires
/// `rho < 1`.
pub fn birth_death_rates(p: &ModelParams, kmax: usize) -> Result<BirthDeathRates> {
    p.require_stable()?;
    let lambda: Vec<f64> = (1..=kmax).map(|k| birth_rate(p, k)).collect();
    if p.big_l() >= 2 {
        for i in 0..lambda.len().saturating_sub(1) {
            debug_assert!(
                lambda[i] > lambda[i + 1] || lambda[i] == 0.0,
                "birth rates must decrease strictly until underflow"
            );
        }
    }
    Ok(BirthDeathRates {
        mu: vec![p.beta(); kmax],
        lambda,
        kmax,
    })
}

/// The linearization `K(v)` truncated at `v.kmax()` with Dirichlet
/// boundary.
pub fn build_operator_k(v: &TailVector, p: &ModelParams) -> TruncatedOperator {
    build_operator_k_raw(v.values(), p)
}

/// Same linearization on a raw state slice (no tail validation); used
/// along scheduled trajectories.
pub fn build_operator_k_raw(values: &[f64], p: &ModelParams) -> TruncatedOperator {
    let kmax = values.len();
    let al = p.alpha() * p.big_l() as f64;
    let coef = |k: usize| al * values[k - 1].powi(p.big_l() as i32 - 1);
    let sub: Vec<f64> = (1..kmax).map(coef).collect();
    let diag: Vec<f64> = (1..=kmax).map(|k| -(coef(k) + p.beta())).collect();
    let sup = vec![p.beta(); kmax - 1];
    TruncatedOperator::new(sub, diag, sup).expect("consistent band lengths")
}

/// The stationary linearization: subdiagonal `lambda_k`, diagonal
/// `-(lambda_k + beta)`, superdiagonal `beta`. Requires `rho < 1`.
pub fn build_stationary_k(p: &ModelParams, kmax: usize) -> Result<TruncatedOperator> {
    p.require_stable()?;
    let rates = birth_death_rates(p, kmax)?;
    let sub: Vec<f64> = rates.lambda[..kmax - 1].to_vec();
    let diag: Vec<f64> = rates.lambda.iter().map(|l| -(l + p.beta())).collect();
    let sup = vec![p.beta(); kmax - 1];
    TruncatedOperator::new(sub, diag, sup)
}

/// Potential coefficients `pi(k)`: `pi(1) = 1`,
/// `pi(k+1) = (lambda_k / mu) pi(k)`. Entries below `1e-300` are clamped
/// (flagged on the returned sequence) to keep the weights usable as norm
/// denominators. The recurrence is cross-checked against the closed form
/// `pi(k) = L^(k-1) rho^((L^k - L)/(L - 1))` in log space.
pub fn potential_coefficients(p: &ModelParams, kmax: usize) -> Result<WeightSequence> {
    p.require_stable()?;
    const CLAMP: f64 = 1e-300;
    let mut values = Vec::with_capacity(kmax);
    let mut clamped = false;
    let mut pi = 1.0;
    for k in 1..=kmax {
        let stored = if pi < CLAMP {
            clamped = true;
            CLAMP
        } else {
            pi
        };
        values.push(stored);
        if !clamped {
            // Closed-form cross-check in log2 space.
            let e = (p.big_l() as u128).checked_pow(k as u32);
            if let Some(e) = e {
                let exponent = if p.big_l() == 1 {
                    (k - 1) as f64
                } else {
                    (e - p.big_l() as u128) as f64 / (p.big_l() as f64 - 1.0)
                };
                let log2_closed =
                    (k as f64 - 1.0) * (p.big_l() as f64).log2() + exponent * p.rho().log2();
                let log2_rec = pi.log2();
                if (log2_rec - log2_closed).abs() > 1e-8 * (1.0 + log2_closed.abs()) {
                    return Err(Error::DualPathDisagreement {
                        what: "potential coefficients (recurrence vs closed form)",
                        diff: (log2_rec - log2_closed).abs(),
                        tol: 1e-8,
                    });
                }
            }
        }
        pi *= birth_rate(p, k) / p.beta();
    }
    WeightSequence::potential(values, clamped)
}

/// Diagonal-similarity symmetrization of the stationary operator:
/// `S(k, k) = diag(k)`, `S(k, k+1) = sqrt(sup(k) sub(k))`. Symmetry is
/// exact by construction; the similarity transform is `diag(pi^(1/2))`.
pub fn symmetrize(op: &TruncatedOperator, pi: &WeightSequence) -> Result<SymmetricTridiagonal> {
    if pi.len() != op.kmax() {
        return Err(Error::LengthMismatch {
            expected: op.kmax(),
            actual: pi.len(),
        });
    }
    let mut off = Vec::with_capacity(op.kmax() - 1);
    for k in 0..op.kmax() - 1 {
        let prod = op.sup[k] * op.sub[k];
        if prod < 0.0 {
            return Err(Error::InvalidParameter {
                name: "op",
                reason: format!("sub({k}) * sup({k}) negative; not symmetrizable"),
            });
        }
        off.push(prod.sqrt());
    }
    Ok(SymmetricTridiagonal {
        diag: op.diag.clone(),
        off,
    })
}

/// Symmetrized blocks of a tridiagonal operator. Couplings with exactly
/// one vanishing side split the matrix into diagonal blocks (no diagonal
/// similarity can repair a one-way coupling); `log2d` holds the cumulative
/// log2 of the similarity scaling, reset at each block start.
pub(crate) struct SymmetrizedBlocks {
    /// Half-open index ranges `[start, end)`.
    pub blocks: Vec<(usize, usize)>,
    pub log2d: Vec<f64>,
    pub s: SymmetricTridiagonal,
}

pub(crate) fn symmetrize_blocks(op: &TruncatedOperator) -> Result<SymmetrizedBlocks> {
    let n = op.kmax();
    let mut log2d = vec![0.0; n];
    let mut off = vec![0.0; n.saturating_sub(1)];
    let mut blocks = Vec::new();
    let mut start = 0;
    for k in 0..n.saturating_sub(1) {
        let (lo, hi) = (op.sub[k], op.sup[k]);
        if lo < 0.0 || hi < 0.0 {
            return Err(Error::InvalidParameter {
                name: "op",
                reason: format!("negative band entry at offset {k}; not symmetrizable"),
            });
        }
        if lo > 0.0 && hi > 0.0 {
            off[k] = (lo * hi).sqrt();
            log2d[k + 1] = log2d[k] + 0.5 * (lo.log2() - hi.log2());
        } else if lo == 0.0 && hi == 0.0 {
            // Fully decoupled; keep in the same block with zero coupling.
            off[k] = 0.0;
            log2d[k + 1] = log2d[k];
        } else {
            // One-way coupling: block boundary.
            off[k] = 0.0;
            blocks.push((start, k + 1));
            start = k + 1;
            log2d[k + 1] = 0.0;
        }
    }
    blocks.push((start, n));
    Ok(SymmetrizedBlocks {
        blocks,
        log2d,
        s: SymmetricTridiagonal {
            diag: op.diag.clone(),
            off,
        },
    })
}

/// Orthogonal-polynomial values `Q_1(x) ..= Q_n(x)` of the birth-death
/// recurrence, in scaled form (the magnitudes overflow f64 quickly for
/// `L >= 2`). `Q_1 = 1`;
/// `Q_{m+1} = ((lambda_m + beta - x) Q_m - beta Q_{m-1}) / lambda_m`.
pub fn kmg_polynomials(p: &ModelParams, n: usize, x: f64) -> Result<Vec<ScaledF64>> {
    if n < 1 {
        return Err(Error::InvalidParameter {
            name: "n",
            reason: "need n >= 1".into(),
        });
    }
    if !(p.rho() > 0.0) {
        return Err(Error::InvalidParameter {
            name: "rho",
            reason: "polynomial recurrence needs positive birth rates".into(),
        });
    }
    let beta = ScaledF64::new(p.beta());
    let mut q_prev = ScaledF64::ZERO;
    let mut q = ScaledF64::new(1.0);
    let mut out = Vec::with_capacity(n);
    out.push(q);
    for m in 1..n {
        let lam = birth_rate_scaled(p, m).ok_or_else(|| Error::InvalidParameter {
            name: "n",
            reason: format!("birth-rate exponent overflows at level {m}"),
        })?;
        let coef = lam.add(&ScaledF64::new(p.beta() - x));
        let next = coef.mul(&q).sub(&beta.mul(&q_prev)).div(&lam);
        out.push(next);
        q_prev = q;
        q = next;
    }
    Ok(out)
}

/// The `n - 1` zeros of `Q_n`, found by interlacing-guided bisection.
/// They coincide with the eigenvalues of the leading `(n-1) x (n-1)`
/// block of the negated symmetrized operator.
///
/// The zeros cluster at pace `sqrt(lambda_k)`; once the true gaps fall
/// below one ulp (deep levels for `L >= 2`, where the rates decay doubly
/// exponentially) the bracket signs degenerate and this returns an error
/// rather than fabricating separations f64 cannot represent.
pub fn kmg_zeros(p: &ModelParams, n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Ok(Vec::new());
    }
    let sign_at = |m: usize, x: f64| -> Result<i32> {
        Ok(kmg_polynomials(p, m, x)?.last().unwrap().signum())
    };
    // Upper spectral bound (Gershgorin on the negated symmetrized matrix).
    let mut hi = 0.0_f64;
    let mut prev_lam = 0.0;
    for k in 1..=n {
        let lam = birth_rate(p, k);
        hi = hi.max(lam + p.beta() + (p.beta() * lam).sqrt() + (p.beta() * prev_lam).sqrt());
        prev_lam = lam;
    }
    hi += 1.0;

    // Q_2 is linear with zero at lambda_1 + beta.
    let mut zeros = vec![birth_rate(p, 1) + p.beta()];
    for m in 3..=n {
        let mut brackets = Vec::with_capacity(zeros.len() + 1);
        brackets.push(0.0);
        brackets.extend_from_slice(&zeros);
        brackets.push(hi);
        let mut next = Vec::with_capacity(zeros.len() + 1);
        for w in brackets.windows(2) {
            let (mut lo, mut up) = (w[0], w[1]);
            let slo = sign_at(m, lo)?;
            if slo * sign_at(m, up)? != -1 {
                return Err(Error::InvalidParameter {
                    name: "n",
                    reason: format!(
                        "zeros of Q_{m} numerically degenerate (cluster gap below one ulp)"
                    ),
                });
            }
            for _ in 0..100 {
                let mid = 0.5 * (lo + up);
                if sign_at(m, mid)? == slo {
                    lo = mid;
                } else {
                    up = mid;
                }
                if up - lo <= 1e-15 * hi {
                    break;
                }
            }
            next.push(0.5 * (lo + up));
        }
        zeros = next;
    }
    Ok(zeros)
}

/// Smallest eigenvalue of the negated symmetrized birth-death operator
/// built from an explicit rate table.
pub fn birth_death_gap(rates: &BirthDeathRates, kmax: usize) -> f64 {
    let kmax = kmax.min(rates.kmax);
    let diag: Vec<f64> = (0..kmax)
        .map(|i| rates.lambda[i] + rates.mu[i])
        .collect();
    let off: Vec<f64> = (0..kmax - 1)
        .map(|i| (rates.mu[i + 1] * rates.lambda[i]).sqrt())
        .collect();
    tridiag::eigenvalues(&diag, &off)[0]
}

/// Estimates the least spectral point of the negated stationary operator
/// by eigensolves over increasing truncations.
pub fn spectral_gap(p: &ModelParams, kmax_list: &[usize]) -> Result<SpectralEstimate> {
    p.require_stable()?;
    if kmax_list.is_empty() || kmax_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidParameter {
            name: "kmax_list",
            reason: "need a strictly increasing, nonempty truncation list".into(),
        });
    }
    let mut gammas = Vec::with_capacity(kmax_list.len());
    let mut spectrum = Vec::new();
    for &kmax in kmax_list {
        let rates = birth_death_rates(p, kmax)?;
        let diag: Vec<f64> = (0..kmax).map(|i| rates.lambda[i] + rates.mu[i]).collect();
        let off: Vec<f64> = (0..kmax - 1)
            .map(|i| (rates.mu[i + 1] * rates.lambda[i]).sqrt())
            .collect();
        let eigs = tridiag::eigenvalues(&diag, &off);
        gammas.push(eigs[0]);
        if kmax == *kmax_list.last().unwrap() {
            spectrum = eigs;
        }
    }
    let gamma_hat = *gammas.last().unwrap();
    let richardson_gap = if gammas.len() >= 2 {
        (gammas[gammas.len() - 1] - gammas[gammas.len() - 2]).abs()
    } else {
        f64::INFINITY
    };
    let sigma_proxy = if p.big_l() >= 2 {
        p.beta()
    } else {
        p.beta() * (1.0 - p.rho().sqrt()).powi(2)
    };
    Ok(SpectralEstimate {
        gamma_hat,
        eigenvalues: spectrum,
        kmax_sequence: kmax_list.to_vec(),
        richardson_gap,
        converged: richardson_gap <= 1e-6 * p.beta(),
        sigma_proxy,
    })
}

/// `e^(op t) z0` via dense scaling-and-squaring (reference path).
pub fn semigroup_apply_expm(op: &TruncatedOperator, t: f64, z0: &[f64]) -> Vec<f64> {
    assert_eq!(z0.len(), op.kmax(), "operand length");
    let e = (op.to_dense() * t).exp();
    (e * DVector::from_column_slice(z0)).data.into()
}

/// `e^(op t) z0` via eigendecomposition of the symmetrized form,
/// conjugated back (fast path). Errors when the operator has one-way
/// couplings, which a diagonal similarity cannot symmetrize.
pub fn semigroup_apply_eigen(op: &TruncatedOperator, t: f64, z0: &[f64]) -> Result<Vec<f64>> {
    assert_eq!(z0.len(), op.kmax(), "operand length");
    let blocks = symmetrize_blocks(op)?;
    if blocks.blocks.len() != 1 {
        return Err(Error::InvalidParameter {
            name: "op",
            reason: "one-way coupling: eigen path undefined, use the expm path".into(),
        });
    }
    let (vals, q) = tridiag::eigen_decomposition(&blocks.s.diag, &blocks.s.off);
    let n = op.kmax();
    // w = Q^T D^{-1} z0
    let mut w = vec![0.0; n];
    for j in 0..n {
        let zj = z0[j] * f64::exp2(-blocks.log2d[j]);
        for m in 0..n {
            w[m] += q[(j, m)] * zj;
        }
    }
    for (m, wm) in w.iter_mut().enumerate() {
        *wm *= (vals[m] * t).exp();
    }
    // out = D Q w
    let mut out = vec![0.0; n];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for m in 0..n {
            acc += q[(i, m)] * w[m];
        }
        *o = acc * f64::exp2(blocks.log2d[i]);
    }
    Ok(out)
}

/// Grading threshold below which the eigen path carries full precision;
/// beyond it the diagonal similarity amplifies roundoff and only the
/// expm path is meaningful.
const EIGEN_PATH_LOG2_GRADING: f64 = 20.0;

/// `e^(op t) z0`. Computes the scaling-and-squaring reference path and,
/// whenever the similarity grading permits, cross-checks the eigen fast
/// path against it to `1e-9`.
pub fn semigroup_apply(op: &TruncatedOperator, t: f64, z0: &[f64]) -> Result<Vec<f64>> {
    if !(t >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "t",
            reason: format!("need t >= 0, got {t}"),
        });
    }
    let reference = semigroup_apply_expm(op, t, z0);
    if let Ok(blocks) = symmetrize_blocks(op) {
        let well_graded = blocks
            .log2d
            .iter()
            .all(|d| d.abs() <= EIGEN_PATH_LOG2_GRADING);
        if blocks.blocks.len() == 1 && well_graded {
            let fast = semigroup_apply_eigen(op, t, z0)?;
            let scale = 1.0 + reference.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
            let diff = reference
                .iter()
                .zip(&fast)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if diff > 1e-9 * scale {
                return Err(Error::DualPathDisagreement {
                    what: "semigroup (expm vs eigen)",
                    diff,
                    tol: 1e-9 * scale,
                });
            }
        }
    }
    Ok(reference)
}

/// Operator norm of the truncation acting on the `w`-weighted l2 space
/// (largest singular value after the isometry onto plain l2).
pub fn operator_norm_weighted(op: &TruncatedOperator, w: &WeightSequence) -> Result<f64> {
    if w.len() != op.kmax() {
        return Err(Error::LengthMismatch {
            expected: op.kmax(),
            actual: w.len(),
        });
    }
    let n = op.kmax();
    let mut m = op.to_dense();
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] *= (w.at(j + 1) / w.at(i + 1)).sqrt();
        }
    }
    let sv = m.singular_values();
    Ok(sv.iter().fold(0.0_f64, |acc, s| acc.max(*s)))
}

/// Comparison birth rates used as a stability diagnostic:
/// `max(lambda_k + alpha (1 + (2^L - L - 2) u~(k)), beta theta)`.
/// Their gap reproduces `beta (1 - sqrt(theta))^2` for `rho <= theta < 1`.
pub fn auxiliary_comparison_rates(
    p: &ModelParams,
    theta: f64,
    kmax: usize,
) -> Result<BirthDeathRates> {
    p.require_stable()?;
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidParameter {
            name: "theta",
            reason: format!("need 0 < theta < 1, got {theta}"),
        });
    }
    let big_l = p.big_l();
    let corr = (2.0_f64.powi(big_l as i32) - big_l as f64 - 2.0).max(0.0);
    let lambda: Vec<f64> = (1..=kmax)
        .map(|k| {
            let base = birth_rate(p, k) + p.alpha() * (1.0 + corr * fixed_point_entry(p, k));
            base.max(p.beta() * theta)
        })
        .collect();
    Ok(BirthDeathRates {
        mu: vec![p.beta(); kmax],
        lambda,
        kmax,
    })
}
