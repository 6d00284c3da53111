//! Deterministic limit layer: the drift maps of the tail dynamics, their
//! finite-N counterparts with the combinatorial corrections `A^N` and `B`,
//! the fixed point, fixed-step RK4 integration of the limit ODE, and
//! empirical exponential-decay fitting.
//!
//! For a tail state `v` (with `v(0) = 1`, `v(k) = 0` beyond the truncation)
//! the coordinate drift is
//!
//! ```text
//! F+(v)(k) = alpha (v(k-1)^L - v(k)^L)      arrivals into level k
//! F-(v)(k) = beta  (v(k)   - v(k+1))        services out of level k
//! F = F+ - F-
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{weighted_l2_norm, ModelParams, TailVector, WeightSequence};

/// Admissible band for RK4 stage values; leaving it signals that the step
/// size is too large or the truncation too small.
pub const STAGE_EPS: f64 = 1e-9;

/// Arrival, service, and net drift evaluated at one state.
#[derive(Debug, Clone, PartialEq)]
pub struct DriftTriple {
    pub f_plus: Vec<f64>,
    pub f_minus: Vec<f64>,
    pub f: Vec<f64>,
}

/// Finite-N drift together with the sampling correction
/// `g(k) = alpha (A^N(v(k-1)) - A^N(v(k)))`, so that `f = F(v) + g` termwise.
#[derive(Debug, Clone, PartialEq)]
pub struct FiniteDrift {
    pub f_plus: Vec<f64>,
    pub f_minus: Vec<f64>,
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

/// A solution of the truncated limit ODE on a uniform grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanFieldTrajectory {
    times: Vec<f64>,
    states: Vec<TailVector>,
    params: ModelParams,
    step: f64,
}

/// Least-squares exponential decay fit of `log ||u_t - target||` over a
/// window. `degenerate` is set when the distance reached zero inside the
/// window (exact convergence), in which case the other fields are zeroed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub gamma_hat: f64,
    pub c_hat: f64,
    pub window: (f64, f64),
    pub residual: f64,
    pub degenerate: bool,
}

#[inline]
fn pow_l(x: f64, big_l: u32) -> f64 {
    x.powi(big_l as i32)
}

/// Net drift on a raw state slice, boundary conventions applied. Entries
/// need not form a valid tail vector (used for finite differencing).
pub fn drift_raw(values: &[f64], p: &ModelParams) -> DriftTriple {
    let kmax = values.len();
    let at = |k: usize| -> f64 {
        if k == 0 {
            1.0
        } else if k <= kmax {
            values[k - 1]
        } else {
            0.0
        }
    };
    let mut f_plus = Vec::with_capacity(kmax);
    let mut f_minus = Vec::with_capacity(kmax);
    let mut f = Vec::with_capacity(kmax);
    for k in 1..=kmax {
        let fp = p.alpha() * (pow_l(at(k - 1), p.big_l()) - pow_l(at(k), p.big_l()));
        let fm = p.beta() * (at(k) - at(k + 1));
        f_plus.push(fp);
        f_minus.push(fm);
        f.push(fp - fm);
    }
    DriftTriple { f_plus, f_minus, f }
}

/// Drift at a validated tail state.
pub fn drift(v: &TailVector, p: &ModelParams) -> DriftTriple {
    drift_raw(v.values(), p)
}

/// Sampling-without-replacement correction
/// `A^N(a) = (Na)_L / (N)_L - a^L`, evaluated by the stable product form.
///
/// Requires `n_queues >= L`. Vanishes identically for `L = 1`.
pub fn correction_a(a: f64, n_queues: u64, p: &ModelParams) -> f64 {
    let big_l = p.big_l() as u64;
    assert!(n_queues >= big_l, "need n_queues >= L");
    let n = n_queues as f64;
    let mut prod = 1.0;
    for i in 0..big_l {
        let i = i as f64;
        prod *= (n * a - i) / (n - i);
    }
    prod - pow_l(a, p.big_l())
}

fn binomial(n: u32, k: u32) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut out: u128 = 1;
    for i in 0..k as u128 {
        out = out * (n as u128 - i) / (i + 1);
    }
    out
}

/// Exact binomial linearization remainder
/// `B(a, h) = (a+h)^L - a^L - L a^(L-1) h = sum_{i=2..L} C(L,i) a^(L-i) h^i`.
///
/// Zero for `L = 1`; equals `h^2` for `L = 2`.
pub fn remainder_b(a: f64, h: f64, p: &ModelParams) -> f64 {
    let big_l = p.big_l();
    let mut sum = 0.0;
    for i in 2..=big_l {
        sum += binomial(big_l, i) as f64 * pow_l(a, big_l - i) * h.powi(i as i32);
    }
    sum
}

fn falling_factorial(x: f64, big_l: u32) -> f64 {
    let mut prod = 1.0;
    for i in 0..big_l {
        prod *= x - i as f64;
    }
    prod
}

/// Finite-N drift `(F^N_+, F_-, F^N)` for a state on the `1/N` lattice,
/// plus the correction `g = F^N - F`.
pub fn finite_n_drift(v: &TailVector, p: &ModelParams, n_queues: u64) -> FiniteDrift {
    let big_l = p.big_l();
    assert!(n_queues >= big_l as u64, "need n_queues >= L");
    let n = n_queues as f64;
    let den = falling_factorial(n, big_l);
    let kmax = v.kmax();
    let mut f_plus = Vec::with_capacity(kmax);
    let mut f_minus = Vec::with_capacity(kmax);
    let mut f = Vec::with_capacity(kmax);
    let mut g = Vec::with_capacity(kmax);
    for k in 1..=kmax {
        let fp = p.alpha()
            * ((falling_factorial(n * v.at(k - 1), big_l)
                - falling_factorial(n * v.at(k), big_l))
                / den);
        let fm = p.beta() * (v.at(k) - v.at(k + 1));
        f_plus.push(fp);
        f_minus.push(fm);
        f.push(fp - fm);
        g.push(p.alpha() * (correction_a(v.at(k - 1), n_queues, p) - correction_a(v.at(k), n_queues, p)));
    }
    FiniteDrift {
        f_plus,
        f_minus,
        f,
        g,
    }
}

/// `sum_{j=0}^{k-1} L^j`, the exponent of the fixed point at level `k`.
/// `None` when it overflows `u128` (the corresponding power underflows to
/// zero for any load below one).
pub fn fixed_point_exponent(big_l: u32, k: usize) -> Option<u128> {
    let mut e: u128 = 0;
    for _ in 0..k {
        e = e.checked_mul(big_l as u128)?.checked_add(1)?;
    }
    Some(e)
}

/// `base^e` by binary exponentiation; pure multiplications, no
/// transcendental calls, so the result is bit-reproducible.
pub(crate) fn pow_u128(base: f64, mut e: u128) -> f64 {
    let mut acc = 1.0;
    let mut sq = base;
    loop {
        if e & 1 == 1 {
            acc *= sq;
        }
        e >>= 1;
        if e == 0 || acc == 0.0 {
            return acc;
        }
        sq *= sq;
    }
}

/// Entry `k` of the fixed point: `rho^((L^k - 1)/(L - 1))`.
pub fn fixed_point_entry(p: &ModelParams, k: usize) -> f64 {
    match fixed_point_exponent(p.big_l(), k) {
        Some(e) => pow_u128(p.rho(), e),
        // Exponent beyond u128: the power underflows for any rho < 1.
        None => 0.0,
    }
}

/// The globally stable point of the limit dynamics, truncated at `kmax`.
/// Requires `rho < 1`.
pub fn fixed_point(p: &ModelParams, kmax: usize) -> Result<TailVector> {
    p.require_stable()?;
    let values: Vec<f64> = (1..=kmax).map(|k| fixed_point_entry(p, k)).collect();
    TailVector::new(values, None)
}

/// Classical fixed-step RK4 on the truncated system. Emitted states are
/// clamped into `[0, 1]`, monotone-repaired at roundoff scale, and
/// validated. Stages leaving `[-STAGE_EPS, 1 + STAGE_EPS]` reject the run.
pub fn integrate_ode(
    u0: &TailVector,
    p: &ModelParams,
    t_end: f64,
    dt: f64,
) -> Result<MeanFieldTrajectory> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidParameter {
            name: "dt",
            reason: format!("step must be positive finite, got {dt}"),
        });
    }
    if !(t_end >= 0.0) || !t_end.is_finite() {
        return Err(Error::InvalidParameter {
            name: "t_end",
            reason: format!("horizon must be nonnegative finite, got {t_end}"),
        });
    }
    let kmax = u0.kmax();
    let check_stage = |s: &[f64], t: f64| -> Result<()> {
        for (i, &x) in s.iter().enumerate() {
            if !x.is_finite() || x < -STAGE_EPS || x > 1.0 + STAGE_EPS {
                return Err(Error::StepRejected {
                    t,
                    k: i + 1,
                    value: x,
                });
            }
        }
        Ok(())
    };

    let n_steps = (t_end / dt).ceil() as usize;
    let mut times = Vec::with_capacity(n_steps + 1);
    let mut states = Vec::with_capacity(n_steps + 1);
    let mut s: Vec<f64> = u0.values().to_vec();
    times.push(0.0);
    states.push(u0.clone());

    for i in 0..n_steps {
        let t = i as f64 * dt;
        let h = if t + dt > t_end { t_end - t } else { dt };
        if h <= 0.0 {
            break;
        }
        let k1 = drift_raw(&s, p).f;
        let s2: Vec<f64> = s.iter().zip(&k1).map(|(x, d)| x + 0.5 * h * d).collect();
        check_stage(&s2, t)?;
        let k2 = drift_raw(&s2, p).f;
        let s3: Vec<f64> = s.iter().zip(&k2).map(|(x, d)| x + 0.5 * h * d).collect();
        check_stage(&s3, t)?;
        let k3 = drift_raw(&s3, p).f;
        let s4: Vec<f64> = s.iter().zip(&k3).map(|(x, d)| x + h * d).collect();
        check_stage(&s4, t)?;
        let k4 = drift_raw(&s4, p).f;
        for j in 0..kmax {
            s[j] += h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        check_stage(&s, t + h)?;
        // Clamp into [0,1], then repair roundoff-scale monotonicity loss.
        for x in s.iter_mut() {
            *x = x.clamp(0.0, 1.0);
        }
        for j in 1..kmax {
            if s[j] > s[j - 1] {
                if s[j] - s[j - 1] > STAGE_EPS {
                    return Err(Error::StepRejected {
                        t: t + h,
                        k: j + 1,
                        value: s[j],
                    });
                }
                s[j] = s[j - 1];
            }
        }
        let t_next = if i + 1 == n_steps { t_end } else { (i + 1) as f64 * dt };
        times.push(t_next);
        states.push(TailVector::new(s.clone(), None)?);
    }

    Ok(MeanFieldTrajectory {
        times,
        states,
        params: *p,
        step: dt,
    })
}

impl MeanFieldTrajectory {
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn states(&self) -> &[TailVector] {
        &self.states
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn kmax(&self) -> usize {
        self.states[0].kmax()
    }

    pub fn t_end(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Linearly interpolated state at time `t`. Errors when `t` lies more
    /// than one step outside the grid.
    pub fn state_at_time(&self, t: f64) -> Result<Vec<f64>> {
        let tol = self.step;
        let n = self.times.len();
        if t < self.times[0] - tol || t > self.times[n - 1] + tol {
            return Err(Error::TimeGridMismatch { t, max_gap: tol });
        }
        if t <= self.times[0] {
            return Ok(self.states[0].values().to_vec());
        }
        if t >= self.times[n - 1] {
            return Ok(self.states[n - 1].values().to_vec());
        }
        let j = match self
            .times
            .binary_search_by(|x| x.partial_cmp(&t).unwrap())
        {
            Ok(j) => return Ok(self.states[j].values().to_vec()),
            Err(j) => j,
        };
        let (t0, t1) = (self.times[j - 1], self.times[j]);
        let w = (t - t0) / (t1 - t0);
        Ok(self.states[j - 1]
            .values()
            .iter()
            .zip(self.states[j].values())
            .map(|(a, b)| a + w * (b - a))
            .collect())
    }
}

/// Fits `log ||u_t - target||_{L2(w)} ~ log c - gamma t` by unweighted
/// least squares over the window. A zero distance anywhere in the window
/// yields a degenerate fit (flagged, not an error).
pub fn fit_decay_rate(
    traj: &MeanFieldTrajectory,
    target: &TailVector,
    w: &WeightSequence,
    window: (f64, f64),
) -> Result<DecayFit> {
    let (t0, t1) = window;
    if !(t0 < t1) {
        return Err(Error::InvalidWindow {
            t0,
            t1,
            reason: "empty window".into(),
        });
    }
    if t0 < traj.times[0] - 1e-12 || t1 > traj.t_end() + 1e-12 {
        return Err(Error::InvalidWindow {
            t0,
            t1,
            reason: format!("trajectory covers [{}, {}]", traj.times[0], traj.t_end()),
        });
    }
    let mut ts = Vec::new();
    let mut ys = Vec::new();
    for (i, &t) in traj.times.iter().enumerate() {
        if t < t0 || t > t1 {
            continue;
        }
        let kmax = traj.states[i].kmax();
        let diff: Vec<f64> = (1..=kmax)
            .map(|k| traj.states[i].at(k) - target.at(k))
            .collect();
        let norm = weighted_l2_norm(&diff, w)?;
        if norm < 1e-154 {
            return Ok(DecayFit {
                gamma_hat: 0.0,
                c_hat: 0.0,
                window,
                residual: 0.0,
                degenerate: true,
            });
        }
        ts.push(t);
        ys.push(norm.ln());
    }
    if ts.len() < 2 {
        return Err(Error::InvalidWindow {
            t0,
            t1,
            reason: format!("only {} grid points inside window", ts.len()),
        });
    }
    let (slope, intercept, residual) = line_fit(&ts, &ys);
    Ok(DecayFit {
        gamma_hat: -slope,
        c_hat: intercept.exp(),
        window,
        residual,
        degenerate: false,
    })
}

/// Least-squares line fit returning `(slope, intercept, max |residual|)`.
pub(crate) fn line_fit(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let xbar = xs.iter().sum::<f64>() / n;
    let ybar = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - xbar) * (x - xbar)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (x - xbar) * (y - ybar))
        .sum();
    let slope = sxy / sxx;
    let intercept = ybar - slope * xbar;
    let residual = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - (intercept + slope * x)).abs())
        .fold(0.0, f64::max);
    (slope, intercept, residual)
}
