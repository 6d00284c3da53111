//! The fluctuation limit layer: per-coordinate noise variances, sampling
//! of the limiting diffusion (Euler-Maruyama and exact transitions), the
//! stationary covariance via a Lyapunov solve cross-checked by quadrature,
//! and equilibrium Gaussian sampling.
//!
//! The Lyapunov equation `K S + S K^T + diag(v) = 0` is solved in the
//! symmetrized coordinates of the operator: with `D` the diagonal
//! similarity making `S = D^-1 K D` symmetric, the transformed noise
//! `D^-1 diag(v) D^-1` stays well scaled even when the similarity weights
//! span hundreds of orders of magnitude, and the eigenbasis of `S` turns
//! the solve into a Hadamard quotient. The plain-coordinate residual is
//! computed afterwards as an unconditional correctness check.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linear_ops::{
    build_operator_k_raw, build_stationary_k, symmetrize_blocks, tridiag, TruncatedOperator,
};
use crate::meanfield::{drift_raw, fixed_point_entry, pow_u128, MeanFieldTrajectory};
use crate::model::ModelParams;
use crate::rng::replica_rng;

/// Floor below which covariance eigenvalues are clipped to zero during
/// factorization; anything lower is treated as indefinite input.
pub const PSD_FLOOR: f64 = -1e-10;

/// Per-coordinate Brownian variance rates, optionally time-dependent
/// through a deterministic trajectory (`v_t(k) = F+(u_t)(k) + F-(u_t)(k)`).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSpec {
    vtilde: Vec<f64>,
    time_dependent: Option<MeanFieldTrajectory>,
}

impl NoiseSpec {
    /// Stationary noise `v(k) = 2 beta u~(k) (1 - rho^(L^k))`. Requires
    /// `rho < 1`.
    pub fn stationary(p: &ModelParams, kmax: usize) -> Result<Self> {
        Ok(Self {
            vtilde: noise_variances_raw(p, kmax)?,
            time_dependent: None,
        })
    }

    /// Time-dependent noise following a deterministic trajectory.
    pub fn scheduled(traj: MeanFieldTrajectory) -> Self {
        let d = drift_raw(traj.states()[0].values(), traj.params());
        let vtilde = d
            .f_plus
            .iter()
            .zip(&d.f_minus)
            .map(|(a, b)| a + b)
            .collect();
        Self {
            vtilde,
            time_dependent: Some(traj),
        }
    }

    /// Variance rates at time zero (stationary: at all times).
    pub fn vtilde(&self) -> &[f64] {
        &self.vtilde
    }

    pub fn is_scheduled(&self) -> bool {
        self.time_dependent.is_some()
    }

    pub fn schedule(&self) -> Option<&MeanFieldTrajectory> {
        self.time_dependent.as_ref()
    }

    /// Variance rates at time `t`.
    pub fn vtilde_at(&self, t: f64) -> Result<Vec<f64>> {
        match &self.time_dependent {
            None => Ok(self.vtilde.clone()),
            Some(traj) => {
                let u = traj.state_at_time(t)?;
                let d = drift_raw(&u, traj.params());
                Ok(d.f_plus.iter().zip(&d.f_minus).map(|(a, b)| a + b).collect())
            }
        }
    }
}

fn noise_variances_raw(p: &ModelParams, kmax: usize) -> Result<Vec<f64>> {
    p.require_stable()?;
    (1..=kmax)
        .map(|k| {
            let u_k = fixed_point_entry(p, k);
            let rho_lk = match (p.big_l() as u128).checked_pow(k as u32) {
                Some(e) => pow_u128(p.rho(), e),
                None => 0.0,
            };
            Ok(2.0 * p.beta() * u_k * (1.0 - rho_lk))
        })
        .collect()
}

/// Stationary per-coordinate variance rates. Requires `rho < 1`.
pub fn noise_variances(p: &ModelParams, kmax: usize) -> Result<NoiseSpec> {
    NoiseSpec::stationary(p, kmax)
}

/// How a covariance matrix was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CovMethod {
    Lyapunov,
    Quadrature,
}

/// Dense symmetric PSD covariance with its construction metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceMatrix {
    /// Row-major `kmax x kmax` entries.
    pub sigma: Vec<f64>,
    pub kmax: usize,
    pub method: CovMethod,
    /// `||K S + S K^T + diag(v)||_inf` in plain coordinates.
    pub residual: f64,
}

impl CovarianceMatrix {
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.kmax, self.kmax, &self.sigma)
    }

    /// 1-based entry accessor.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.sigma[(i - 1) * self.kmax + (j - 1)]
    }

    fn from_dense(m: &DMatrix<f64>, method: CovMethod, residual: f64) -> Self {
        let kmax = m.nrows();
        let mut sigma = Vec::with_capacity(kmax * kmax);
        for i in 0..kmax {
            for j in 0..kmax {
                sigma.push(m[(i, j)]);
            }
        }
        Self {
            sigma,
            kmax,
            method,
            residual,
        }
    }
}

fn lyapunov_residual(op: &TruncatedOperator, sigma: &DMatrix<f64>, vtilde: &[f64]) -> f64 {
    let k = op.to_dense();
    let mut r = &k * sigma + sigma * k.transpose();
    for (i, &v) in vtilde.iter().enumerate() {
        r[(i, i)] += v;
    }
    r.abs().max()
}

/// Solves `op S + S op^T + diag(vtilde) = 0` for a strictly stable
/// tridiagonal `op` with nonnegative couplings. One-way couplings
/// (exactly one of sub/sup zero, e.g. from underflowed rates) split the
/// matrix into blocks solved independently with zero cross-covariance;
/// the reported plain-coordinate residual certifies the assembly.
/// Residual above `1e-8` is an error.
pub fn lyapunov_covariance(op: &TruncatedOperator, vtilde: &[f64]) -> Result<CovarianceMatrix> {
    let n = op.kmax();
    assert_eq!(vtilde.len(), n, "noise length");
    if vtilde.iter().any(|v| *v < 0.0) {
        return Err(Error::InvalidParameter {
            name: "vtilde",
            reason: "variance rates must be nonnegative".into(),
        });
    }
    let blocks = symmetrize_blocks(op)?;
    let mut sigma = DMatrix::<f64>::zeros(n, n);
    for &(s, e) in &blocks.blocks {
        let m = e - s;
        let diag = &blocks.s.diag[s..e];
        let off: &[f64] = if m > 1 { &blocks.s.off[s..e - 1] } else { &[] };
        let (vals, q) = tridiag::eigen_decomposition(diag, off);
        if vals.iter().any(|l| *l >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "op",
                reason: format!(
                    "operator not strictly stable: eigenvalue {} >= 0",
                    vals.last().unwrap()
                ),
            });
        }
        // Transformed noise: v_k / d_k^2, computed in log space.
        let mut vt = vec![0.0; m];
        for i in 0..m {
            let v = vtilde[s + i];
            if v > 0.0 {
                let lv = v.log2() - 2.0 * blocks.log2d[s + i];
                let scaled = lv.exp2();
                if !scaled.is_finite() {
                    return Err(Error::InvalidParameter {
                        name: "vtilde",
                        reason: format!(
                            "noise at k={} not representable in symmetrized coordinates",
                            s + i + 1
                        ),
                    });
                }
                vt[i] = scaled;
            }
        }
        // M = Q^T diag(vt) Q, then the Hadamard quotient by -(l_a + l_b).
        let mut w = DMatrix::<f64>::zeros(m, m);
        for a in 0..m {
            for b in a..m {
                let mut acc = 0.0;
                for j in 0..m {
                    acc += q[(j, a)] * vt[j] * q[(j, b)];
                }
                let val = acc / (-(vals[a] + vals[b]));
                w[(a, b)] = val;
                w[(b, a)] = val;
            }
        }
        let st = &q * w * q.transpose();
        // Back to plain coordinates: S_ij = st_ij * 2^(log2d_i + log2d_j).
        for i in 0..m {
            for j in 0..m {
                let scale = (blocks.log2d[s + i] + blocks.log2d[s + j]).exp2();
                sigma[(s + i, s + j)] = st[(i, j)] * scale;
            }
        }
    }
    let residual = lyapunov_residual(op, &sigma, vtilde);
    if !(residual <= 1e-8) {
        return Err(Error::LyapunovResidual {
            residual,
            tol: 1e-8,
        });
    }
    Ok(CovarianceMatrix::from_dense(
        &sigma,
        CovMethod::Lyapunov,
        residual,
    ))
}

/// `int_0^t e^(op s) diag(vtilde) e^(op^T s) ds` by composite Simpson
/// with step `h` (rounded so the node count is even).
pub fn covariance_integral(
    op: &TruncatedOperator,
    vtilde: &[f64],
    t: f64,
    h: f64,
) -> DMatrix<f64> {
    let n = op.kmax();
    let mut m = (t / h).ceil() as usize;
    if m % 2 == 1 {
        m += 1;
    }
    m = m.max(2);
    let h = t / m as f64;
    let e = (op.to_dense() * h).exp();
    let v = DVector::from_column_slice(vtilde);
    let mut p = DMatrix::<f64>::identity(n, n);
    let mut acc = DMatrix::<f64>::zeros(n, n);
    for j in 0..=m {
        let weight = if j == 0 || j == m {
            1.0
        } else if j % 2 == 1 {
            4.0
        } else {
            2.0
        };
        // G = P diag(v) P^T
        let mut pv = p.clone();
        for c in 0..n {
            let scale = v[c];
            for r in 0..n {
                pv[(r, c)] *= scale;
            }
        }
        acc += (pv * p.transpose()) * weight;
        if j < m {
            p = &p * &e;
        }
    }
    acc * (h / 3.0)
}

/// The stationary-covariance integral by adaptive quadrature: the horizon
/// grows until the integrand is negligible, the step halves until two
/// successive Simpson passes agree.
pub fn quadrature_covariance(
    op: &TruncatedOperator,
    vtilde: &[f64],
    tol: f64,
) -> Result<CovarianceMatrix> {
    let n = op.kmax();
    assert_eq!(vtilde.len(), n, "noise length");
    let vmax = vtilde.iter().fold(0.0_f64, |m, v| m.max(*v));
    // Find a horizon where the integrand has decayed away.
    let e1 = op.to_dense().exp();
    let mut p = DMatrix::<f64>::identity(n, n);
    let mut t_max = 0.0;
    for _ in 0..400 {
        t_max += 1.0;
        p = &p * &e1;
        let g_norm = (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        let mut acc = 0.0;
                        for c in 0..n {
                            acc += p[(i, c)] * vtilde[c] * p[(j, c)];
                        }
                        acc.abs()
                    })
                    .fold(0.0, f64::max)
            })
            .fold(0.0, f64::max);
        if g_norm <= 1e-13 * (1.0 + vmax) {
            break;
        }
    }
    if t_max >= 400.0 {
        return Err(Error::InvalidParameter {
            name: "op",
            reason: "integrand did not decay within the horizon cap".into(),
        });
    }
    let mut h = 0.25;
    let mut prev = covariance_integral(op, vtilde, t_max, h);
    for _ in 0..6 {
        h *= 0.5;
        let fine = covariance_integral(op, vtilde, t_max, h);
        let diff = (&fine - &prev).abs().max();
        prev = fine;
        if diff <= tol * 0.25 {
            break;
        }
    }
    let residual = lyapunov_residual(op, &prev, vtilde);
    Ok(CovarianceMatrix::from_dense(
        &prev,
        CovMethod::Quadrature,
        residual,
    ))
}

/// Stationary covariance of the fluctuation diffusion: Lyapunov solve
/// (primary), cross-checked entrywise against the quadrature of the
/// covariance integral. Requires `rho < 1`.
pub fn stationary_covariance(p: &ModelParams, kmax: usize) -> Result<CovarianceMatrix> {
    let op = build_stationary_k(p, kmax)?;
    let noise = noise_variances_raw(p, kmax)?;
    let lyap = lyapunov_covariance(&op, &noise)?;
    let quad = quadrature_covariance(&op, &noise, 1e-7)?;
    let diff = lyap
        .sigma
        .iter()
        .zip(&quad.sigma)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    if diff > 1e-6 {
        return Err(Error::DualPathDisagreement {
            what: "stationary covariance (lyapunov vs quadrature)",
            diff,
            tol: 1e-6,
        });
    }
    Ok(lyap)
}

/// Symmetric factor `A` with `A A^T = S`, via eigendecomposition with the
/// PSD repair floor: eigenvalues in `[PSD_FLOOR, 0)` are clipped to zero,
/// anything below is an error.
fn psd_factor(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = sigma.nrows();
    let sym = (sigma + sigma.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let mut clipped = 0;
    let mut a = eig.eigenvectors.clone();
    for c in 0..n {
        let l = eig.eigenvalues[c];
        if l < PSD_FLOOR {
            return Err(Error::NotPositiveSemidefinite {
                eigenvalue: l,
                floor: PSD_FLOOR,
            });
        }
        let s = if l > 0.0 {
            l.sqrt()
        } else {
            if l < 0.0 {
                clipped += 1;
            }
            0.0
        };
        for r in 0..n {
            a[(r, c)] *= s;
        }
    }
    if clipped > 0 {
        log::debug!("psd repair clipped {clipped} eigenvalues in [{PSD_FLOOR}, 0)");
    }
    Ok(a)
}

/// `n` centered Gaussian vectors with the given covariance.
pub fn sample_invariant(cov: &CovarianceMatrix, n: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let a = psd_factor(&cov.matrix())?;
    let dim = cov.kmax;
    let mut rng = replica_rng(seed, 0);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let xi: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let z = &a * DVector::from_column_slice(&xi);
        out.push(z.data.into());
    }
    Ok(out)
}

/// A sampled diffusion path on a uniform grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OuPath {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
}

impl OuPath {
    pub fn final_state(&self) -> &[f64] {
        self.states.last().unwrap()
    }
}

/// Euler-Maruyama sampling of the fluctuation diffusion
/// `dZ = K_t Z dt + diag(v_t)^(1/2) dB`. With a drift schedule the
/// operator is the linearization along the scheduled trajectory,
/// otherwise the stationary one (requires `rho < 1`). Deterministic for
/// a given `(seed, stream)` pair; replicas should pass their index as
/// `stream`.
#[allow(clippy::too_many_arguments)]
pub fn simulate_ou(
    z0: &[f64],
    p: &ModelParams,
    t_end: f64,
    dt: f64,
    seed: u64,
    stream: u64,
    noise: &NoiseSpec,
    drift_schedule: Option<&MeanFieldTrajectory>,
) -> Result<OuPath> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidParameter {
            name: "dt",
            reason: format!("need dt > 0, got {dt}"),
        });
    }
    let kmax = z0.len();
    let stationary_op = match drift_schedule {
        Some(sched) => {
            if sched.t_end() + 1e-9 < t_end {
                return Err(Error::ScheduleGap {
                    covered: sched.t_end(),
                    t_end,
                });
            }
            None
        }
        None => Some(build_stationary_k(p, kmax)?),
    };
    if let Some(traj) = noise.schedule() {
        if traj.t_end() + 1e-9 < t_end {
            return Err(Error::ScheduleGap {
                covered: traj.t_end(),
                t_end,
            });
        }
    }
    if let Some(op) = &stationary_op {
        if dt * op.norm_inf() > 0.5 {
            log::warn!(
                "dt {} too coarse for operator norm {} (dt * ||K|| > 0.5)",
                dt,
                op.norm_inf()
            );
        }
    }

    let mut rng = replica_rng(seed, stream);
    let n_steps = (t_end / dt).ceil() as usize;
    let mut z = z0.to_vec();
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity(n_steps + 1);
    times.push(0.0);
    states.push(z.clone());
    let sqrt_dt = dt.sqrt();
    for i in 0..n_steps {
        let t = i as f64 * dt;
        let h = if t + dt > t_end { t_end - t } else { dt };
        if h <= 0.0 {
            break;
        }
        let drift = match (&stationary_op, drift_schedule) {
            (Some(op), _) => op.apply(&z),
            (None, Some(sched)) => {
                let u_t = sched.state_at_time(t)?;
                build_operator_k_raw(&u_t, p).apply(&z)
            }
            (None, None) => unreachable!(),
        };
        let v_t = noise.vtilde_at(t)?;
        let sqrt_h = if h == dt { sqrt_dt } else { h.sqrt() };
        for k in 0..kmax {
            let xi: f64 = StandardNormal.sample(&mut rng);
            z[k] += drift[k] * h + sqrt_h * v_t[k].sqrt() * xi;
        }
        times.push((t + h).min(t_end));
        states.push(z.clone());
    }
    Ok(OuPath { times, states })
}

/// Exact-transition sampling for the stationary operator: the step map is
/// `Z -> e^(K dt) Z + xi` with `xi` Gaussian of covariance
/// `S - e^(K dt) S e^(K^T dt)`. Serves as a convergence oracle for the
/// Euler-Maruyama scheme.
pub fn simulate_ou_exact(
    z0: &[f64],
    p: &ModelParams,
    t_end: f64,
    dt: f64,
    seed: u64,
    stream: u64,
) -> Result<OuPath> {
    let kmax = z0.len();
    let op = build_stationary_k(p, kmax)?;
    let noise = noise_variances_raw(p, kmax)?;
    let sigma = lyapunov_covariance(&op, &noise)?.matrix();
    let e = (op.to_dense() * dt).exp();
    let step_cov = &sigma - &e * &sigma * e.transpose();
    let factor = psd_factor(&step_cov)?;
    let mut rng = replica_rng(seed, stream);
    let n_steps = (t_end / dt).round() as usize;
    let mut z = DVector::from_column_slice(z0);
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states: Vec<Vec<f64>> = Vec::with_capacity(n_steps + 1);
    times.push(0.0);
    states.push(z.iter().copied().collect());
    for i in 0..n_steps {
        let xi: Vec<f64> = (0..kmax).map(|_| StandardNormal.sample(&mut rng)).collect();
        z = &e * z + &factor * DVector::from_column_slice(&xi);
        times.push((i + 1) as f64 * dt);
        states.push(z.iter().copied().collect());
    }
    Ok(OuPath { times, states })
}

/// Ratio test for whether the driving noise defines a proper Hilbertian
/// Brownian motion in the `theta`-geometric norm: the profile must be
/// summable against `theta^-k`, i.e. `u~(k+1)/(theta u~(k)) -> rho^(L^k)/theta`
/// must settle below one. True for any `theta > 0` when `L >= 2`; for
/// `L = 1` exactly when `theta > rho`.
pub fn brownian_is_hilbertian(p: &ModelParams, theta: f64) -> bool {
    assert!(theta > 0.0 && theta <= 1.0);
    // Limiting ratio of u~(k) theta^-k.
    let mut k = 1;
    loop {
        let u_k = fixed_point_entry(p, k);
        let u_k1 = fixed_point_entry(p, k + 1);
        if u_k1 == 0.0 {
            return true; // profile vanishes below f64 range: summable
        }
        let ratio = u_k1 / (u_k * theta);
        if p.big_l() >= 2 {
            if ratio < 1.0 {
                return true;
            }
        } else {
            return ratio < 1.0; // constant ratio rho/theta for L = 1
        }
        k += 1;
        if k > 200 {
            return false;
        }
    }
}
