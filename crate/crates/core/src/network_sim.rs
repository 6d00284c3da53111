//! Exact event-driven simulation of the N-queue system.
//!
//! The default engine works on the aggregated tail state: coordinate `k`
//! jumps `+1/N` at rate `N F^N_+(r)(k)` and `-1/N` at rate `N F_-(r)(k)`,
//! with a single exponential clock at the total rate and categorical jump
//! selection (direct method). The per-queue engine simulates individual
//! queue lengths — arrivals sample `L` distinct queues uniformly and join
//! a shortest sampled queue, ties resolved uniformly among the sampled
//! minima — and reports the induced tail trajectory; the two engines are
//! distributionally identical and the aggregate rates are checked against
//! exhaustive choice enumeration in the tests.
//!
//! Cost per event is `O(kmax)` in the aggregate engine, independent of N.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meanfield::MeanFieldTrajectory;
use crate::model::{validate_tail, FluctuationSample, ModelParams, TailVector, WeightSequence};
use crate::rng::{exp_variate, replica_rng};
use rand::Rng;

/// How the `L` queues of an arrival are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// `L` distinct queues, uniformly (the model's convention).
    WithoutReplacement,
    /// `L` independent uniform draws; reproduces the mean-field rates
    /// exactly and isolates the finite-N sampling correction.
    WithReplacement,
}

/// Full description of one simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawSimConfig")]
pub struct SimConfig {
    pub params: ModelParams,
    pub n_queues: u64,
    pub kmax: usize,
    pub t_end: f64,
    pub seed: u64,
    /// RNG stream id; replica runs use their replica index.
    pub stream: u64,
    pub record_times: Vec<f64>,
    pub init: TailVector,
    pub sampling: Sampling,
}

#[derive(Deserialize)]
struct RawSimConfig {
    params: ModelParams,
    n_queues: u64,
    kmax: usize,
    t_end: f64,
    seed: u64,
    #[serde(default)]
    stream: u64,
    record_times: Vec<f64>,
    init: TailVector,
    #[serde(default = "default_sampling")]
    sampling: Sampling,
}

fn default_sampling() -> Sampling {
    Sampling::WithoutReplacement
}

impl TryFrom<RawSimConfig> for SimConfig {
    type Error = Error;

    fn try_from(raw: RawSimConfig) -> Result<Self> {
        let mut cfg = SimConfig::new(
            raw.params,
            raw.n_queues,
            raw.kmax,
            raw.t_end,
            raw.seed,
            raw.record_times,
            raw.init,
        )?;
        cfg.stream = raw.stream;
        cfg.sampling = raw.sampling;
        Ok(cfg)
    }
}

impl SimConfig {
    pub fn new(
        params: ModelParams,
        n_queues: u64,
        kmax: usize,
        t_end: f64,
        seed: u64,
        record_times: Vec<f64>,
        init: TailVector,
    ) -> Result<Self> {
        if n_queues < params.big_l() as u64 {
            return Err(Error::InvalidParameter {
                name: "n_queues",
                reason: format!("need n_queues >= L = {}", params.big_l()),
            });
        }
        if kmax == 0 {
            return Err(Error::InvalidParameter {
                name: "kmax",
                reason: "need kmax >= 1".into(),
            });
        }
        if !(t_end >= 0.0) || !t_end.is_finite() {
            return Err(Error::InvalidParameter {
                name: "t_end",
                reason: format!("need finite t_end >= 0, got {t_end}"),
            });
        }
        if init.kmax() != kmax {
            return Err(Error::InvalidParameter {
                name: "init",
                reason: format!("init has kmax {} but config says {kmax}", init.kmax()),
            });
        }
        // Re-validate the initial state on the 1/N lattice.
        let init = validate_tail(init.values(), Some(n_queues))?;
        for w in record_times.windows(2) {
            if w[0] > w[1] {
                return Err(Error::InvalidParameter {
                    name: "record_times",
                    reason: "must be nondecreasing".into(),
                });
            }
        }
        if let (Some(&first), Some(&last)) = (record_times.first(), record_times.last()) {
            if first < 0.0 || last > t_end + 1e-12 {
                return Err(Error::InvalidParameter {
                    name: "record_times",
                    reason: format!("must lie inside [0, {t_end}]"),
                });
            }
        }
        Ok(Self {
            params,
            n_queues,
            kmax,
            t_end,
            seed,
            stream: 0,
            record_times,
            init,
            sampling: Sampling::WithoutReplacement,
        })
    }

    pub fn with_stream(mut self, stream: u64) -> Self {
        self.stream = stream;
        self
    }

    pub fn with_sampling(mut self, sampling: Sampling) -> Self {
        self.sampling = sampling;
        self
    }
}

/// Tail states sampled at the configured record times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimTrajectory {
    pub times: Vec<f64>,
    pub states: Vec<TailVector>,
    pub event_count: u64,
    pub seed: u64,
    pub n_queues: u64,
}

/// Stationary-regime snapshots retained after burn-in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumBatch {
    pub snapshots: Vec<TailVector>,
    pub burn_in: f64,
    pub spacing: f64,
    pub seed: u64,
}

/// Compact run summary for JSON export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimSummary {
    pub n_queues: u64,
    pub seed: u64,
    pub event_count: u64,
    /// Mean tail over the recorded snapshots, per coordinate.
    pub time_avg_tail: Vec<f64>,
    /// Naive standard error of that mean, per coordinate.
    pub stderr: Vec<f64>,
}

impl SimTrajectory {
    pub fn summary(&self) -> SimSummary {
        let kmax = self.states.first().map_or(0, TailVector::kmax);
        let n = self.states.len().max(1) as f64;
        let mut avg = vec![0.0; kmax];
        for s in &self.states {
            for k in 0..kmax {
                avg[k] += s.values()[k];
            }
        }
        for a in avg.iter_mut() {
            *a /= n;
        }
        let mut stderr = vec![0.0; kmax];
        if self.states.len() >= 2 {
            for k in 0..kmax {
                let var = self
                    .states
                    .iter()
                    .map(|s| (s.values()[k] - avg[k]).powi(2))
                    .sum::<f64>()
                    / (n - 1.0);
                stderr[k] = (var / n).sqrt();
            }
        }
        SimSummary {
            n_queues: self.n_queues,
            seed: self.seed,
            event_count: self.event_count,
            time_avg_tail: avg,
            stderr,
        }
    }
}

fn falling_factorial_u128(m: u64, big_l: u32) -> u128 {
    let mut out: u128 = 1;
    for i in 0..big_l as u64 {
        if m < i + 1 {
            return 0;
        }
        out *= (m - i) as u128;
    }
    out
}

/// Per-level jump rates from an aggregate state: `births[k-1]` is the rate
/// of `+1/N` jumps at coordinate `k` for `k = 1..=kmax`, `births[kmax]` is
/// the overflow rate (arrival joining a queue already at the truncation),
/// and `deaths[k-1]` the rate of `-1/N` jumps.
pub fn jump_rates(
    counts: &[u64],
    p: &ModelParams,
    n_queues: u64,
    sampling: Sampling,
) -> (Vec<f64>, Vec<f64>) {
    let kmax = counts.len();
    let n = n_queues;
    let arrival_total = n as f64 * p.alpha();
    let nk = |k: usize| -> u64 {
        if k == 0 {
            n
        } else {
            counts[k - 1]
        }
    };
    let tail_prob = |k: usize| -> f64 {
        match sampling {
            Sampling::WithoutReplacement => {
                let num = falling_factorial_u128(nk(k), p.big_l());
                let den = falling_factorial_u128(n, p.big_l());
                num as f64 / den as f64
            }
            Sampling::WithReplacement => (nk(k) as f64 / n as f64).powi(p.big_l() as i32),
        }
    };
    let mut births = Vec::with_capacity(kmax + 1);
    let mut prev = tail_prob(0);
    for k in 1..=kmax {
        let cur = tail_prob(k);
        births.push(arrival_total * (prev - cur));
        prev = cur;
    }
    births.push(arrival_total * prev); // overflow channel
    let deaths: Vec<f64> = (1..=kmax)
        .map(|k| {
            let upper = if k < kmax { counts[k] } else { 0 };
            p.beta() * (counts[k - 1] - upper) as f64
        })
        .collect();
    debug_assert!(
        births.iter().chain(deaths.iter()).all(|r| *r >= 0.0),
        "negative rate in table"
    );
    (births, deaths)
}

fn counts_from_tail(v: &TailVector, n: u64) -> Vec<u64> {
    v.values()
        .iter()
        .map(|x| (x * n as f64).round() as u64)
        .collect()
}

fn tail_from_counts(counts: &[u64], n: u64) -> Result<TailVector> {
    let values: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
    validate_tail(&values, Some(n))
}

/// Shared record-time bookkeeping.
struct Recorder<'a> {
    record_times: &'a [f64],
    next: usize,
    times: Vec<f64>,
    states: Vec<TailVector>,
}

impl<'a> Recorder<'a> {
    fn new(record_times: &'a [f64]) -> Self {
        Self {
            record_times,
            next: 0,
            times: Vec::with_capacity(record_times.len()),
            states: Vec::with_capacity(record_times.len()),
        }
    }

    /// Record every pending time strictly before `t` with the current state.
    fn flush_before(&mut self, t: f64, counts: &[u64], n: u64) -> Result<()> {
        while self.next < self.record_times.len() && self.record_times[self.next] < t {
            self.times.push(self.record_times[self.next]);
            self.states.push(tail_from_counts(counts, n)?);
            self.next += 1;
        }
        Ok(())
    }

    fn flush_all(&mut self, counts: &[u64], n: u64) -> Result<()> {
        self.flush_before(f64::INFINITY, counts, n)
    }
}

/// Exact Gillespie simulation of the aggregated tail process.
///
/// Deterministic for a given `(seed, stream)`. Errors with
/// [`Error::BufferOverflow`] if an arrival would push a queue beyond
/// `kmax` (truncation too small for the load).
pub fn simulate(cfg: &SimConfig) -> Result<SimTrajectory> {
    let mut rng = replica_rng(cfg.seed, cfg.stream);
    let n = cfg.n_queues;
    let mut counts = counts_from_tail(&cfg.init, n);
    let mut recorder = Recorder::new(&cfg.record_times);
    let mut t = 0.0;
    let mut event_count = 0_u64;

    loop {
        let (births, deaths) = jump_rates(&counts, &cfg.params, n, cfg.sampling);
        let total: f64 = births.iter().sum::<f64>() + deaths.iter().sum::<f64>();
        if total <= 0.0 {
            // Absorbed (e.g. drained empty network with alpha = 0).
            recorder.flush_all(&counts, n)?;
            break;
        }
        let t_next = t + exp_variate(&mut rng, total);
        if t_next > cfg.t_end {
            recorder.flush_all(&counts, n)?;
            break;
        }
        recorder.flush_before(t_next, &counts, n)?;
        t = t_next;

        // Categorical selection over births (incl. overflow), then deaths.
        let mut u = rng.random::<f64>() * total;
        let mut applied = false;
        for (k, &b) in births.iter().enumerate() {
            if u < b {
                if k == cfg.kmax {
                    return Err(Error::BufferOverflow { t, kmax: cfg.kmax });
                }
                counts[k] += 1;
                applied = true;
                break;
            }
            u -= b;
        }
        if !applied {
            for (k, &d) in deaths.iter().enumerate() {
                if u < d {
                    counts[k] -= 1;
                    applied = true;
                    break;
                }
                u -= d;
            }
        }
        if !applied {
            // Roundoff pushed u past the last positive rate; take the
            // largest-rate death channel.
            let k = deaths
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(k, _)| k)
                .unwrap();
            counts[k] -= 1;
        }
        event_count += 1;
        debug_assert!(
            counts.windows(2).all(|w| w[0] >= w[1]) && counts[0] <= n,
            "state left the lattice"
        );
    }

    Ok(SimTrajectory {
        times: recorder.times,
        states: recorder.states,
        event_count,
        seed: cfg.seed,
        n_queues: n,
    })
}

/// Expands a lattice tail vector into explicit queue lengths,
/// longest-first: queue `i` gets length `#{k : counts[k] > i}`.
fn lengths_from_tail(init: &TailVector, n: u64) -> Vec<u32> {
    let counts = counts_from_tail(init, n);
    let mut lengths = vec![0_u32; n as usize];
    for &c in counts.iter().rev() {
        for li in lengths.iter_mut().take(c as usize) {
            *li += 1;
        }
    }
    lengths
}

/// Agent-level simulation: individual queues, arrivals sampling `L`
/// queues, services per nonempty queue. Returns the induced tail
/// trajectory; law equals [`simulate`].
pub fn simulate_per_queue(cfg: &SimConfig) -> Result<SimTrajectory> {
    let mut rng = replica_rng(cfg.seed, cfg.stream);
    let n = cfg.n_queues;
    let n_us = n as usize;
    let big_l = cfg.params.big_l() as usize;
    let mut lengths = lengths_from_tail(&cfg.init, n);
    let mut tail_counts = counts_from_tail(&cfg.init, n);
    // Nonempty-queue index list with positions, for O(1) service picks.
    let mut nonempty: Vec<u32> = (0..n_us as u32).filter(|&i| lengths[i as usize] > 0).collect();
    let mut pos = vec![usize::MAX; n_us];
    for (i, &q) in nonempty.iter().enumerate() {
        pos[q as usize] = i;
    }

    let mut recorder = Recorder::new(&cfg.record_times);
    let mut t = 0.0;
    let mut event_count = 0_u64;
    let arrival_rate = n as f64 * cfg.params.alpha();
    let mut sample_buf: Vec<u32> = Vec::with_capacity(big_l);

    loop {
        let total = arrival_rate + cfg.params.beta() * nonempty.len() as f64;
        if total <= 0.0 {
            recorder.flush_all(&tail_counts, n)?;
            break;
        }
        let t_next = t + exp_variate(&mut rng, total);
        if t_next > cfg.t_end {
            recorder.flush_all(&tail_counts, n)?;
            break;
        }
        recorder.flush_before(t_next, &tail_counts, n)?;
        t = t_next;
        event_count += 1;

        if rng.random::<f64>() * total < arrival_rate {
            // Arrival: sample L queues, join a shortest sampled one.
            sample_buf.clear();
            match cfg.sampling {
                Sampling::WithoutReplacement => {
                    if big_l == n_us {
                        sample_buf.extend(0..n_us as u32);
                    } else {
                        while sample_buf.len() < big_l {
                            let c = rng.random_range(0..n_us as u32);
                            if !sample_buf.contains(&c) {
                                sample_buf.push(c);
                            }
                        }
                    }
                }
                Sampling::WithReplacement => {
                    for _ in 0..big_l {
                        sample_buf.push(rng.random_range(0..n_us as u32));
                    }
                }
            }
            let min_len = sample_buf
                .iter()
                .map(|&q| lengths[q as usize])
                .min()
                .unwrap();
            let ties: Vec<u32> = sample_buf
                .iter()
                .copied()
                .filter(|&q| lengths[q as usize] == min_len)
                .collect();
            let chosen = ties[rng.random_range(0..ties.len())] as usize;
            if lengths[chosen] as usize + 1 > cfg.kmax {
                return Err(Error::BufferOverflow { t, kmax: cfg.kmax });
            }
            let old = lengths[chosen];
            lengths[chosen] += 1;
            tail_counts[old as usize] += 1;
            if old == 0 {
                pos[chosen] = nonempty.len();
                nonempty.push(chosen as u32);
            }
        } else {
            // Service at a uniformly chosen nonempty queue.
            let idx = rng.random_range(0..nonempty.len());
            let q = nonempty[idx] as usize;
            let old = lengths[q];
            lengths[q] -= 1;
            tail_counts[old as usize - 1] -= 1;
            if old == 1 {
                let last = *nonempty.last().unwrap();
                nonempty.swap_remove(idx);
                pos[q] = usize::MAX;
                if idx < nonempty.len() {
                    pos[last as usize] = idx;
                }
            }
        }
    }

    Ok(SimTrajectory {
        times: recorder.times,
        states: recorder.states,
        event_count,
        seed: cfg.seed,
        n_queues: n,
    })
}

/// Default burn-in heuristic: `20 / ((1 - rho) beta)`.
pub fn default_burn_in(p: &ModelParams) -> f64 {
    20.0 / ((1.0 - p.rho()) * p.beta())
}

/// Runs the aggregate engine, discards `[0, burn_in]`, and retains
/// `n_samples` snapshots spaced `spacing` apart. Requires `rho < 1`.
pub fn sample_equilibrium(
    cfg: &SimConfig,
    burn_in: f64,
    n_samples: usize,
    spacing: f64,
) -> Result<EquilibriumBatch> {
    cfg.params.require_stable()?;
    if !(spacing > 0.0) {
        return Err(Error::InvalidParameter {
            name: "spacing",
            reason: format!("need spacing > 0, got {spacing}"),
        });
    }
    if burn_in < 10.0 / cfg.params.beta() {
        log::warn!(
            "burn_in {} below heuristic mixing floor {}",
            burn_in,
            10.0 / cfg.params.beta()
        );
    }
    if n_samples == 0 {
        return Ok(EquilibriumBatch {
            snapshots: Vec::new(),
            burn_in,
            spacing,
            seed: cfg.seed,
        });
    }
    let record_times: Vec<f64> = (0..n_samples)
        .map(|i| burn_in + i as f64 * spacing)
        .collect();
    let t_end = record_times.last().unwrap() + spacing;
    let mut run = cfg.clone();
    run.t_end = t_end;
    run.record_times = record_times;
    let traj = simulate(&run)?;
    Ok(EquilibriumBatch {
        snapshots: traj.states,
        burn_in,
        spacing,
        seed: cfg.seed,
    })
}

/// The rescaled fluctuation process `z = sqrt(N) (R - u)` along a
/// simulated trajectory, measured against a deterministic trajectory
/// (linearly interpolated when the grids differ by at most one step).
pub fn fluctuations(
    traj: &SimTrajectory,
    u: &MeanFieldTrajectory,
    weights: WeightSequence,
) -> Result<FluctuationSample> {
    let sqrt_n = (traj.n_queues as f64).sqrt();
    let mut z = Vec::with_capacity(traj.times.len());
    for (i, &t) in traj.times.iter().enumerate() {
        let u_t = u.state_at_time(t)?;
        let state = &traj.states[i];
        let kmax = state.kmax();
        let row: Vec<f64> = (1..=kmax)
            .map(|k| {
                let u_k = if k <= u_t.len() { u_t[k - 1] } else { 0.0 };
                sqrt_n * (state.at(k) - u_k)
            })
            .collect();
        if row.iter().any(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "traj",
                reason: "non-finite fluctuation entry".into(),
            });
        }
        z.push(row);
    }
    Ok(FluctuationSample {
        times: traj.times.clone(),
        z,
        n_queues: traj.n_queues,
        seed: traj.seed,
        weights,
    })
}

/// Nearest-lattice rounding of a profile with the half-open rule
/// `-1/(2N) < v(k) - i/N <= 1/(2N)`: `i = ceil(N v(k) - 1/2)`.
/// Rounding a nonincreasing sequence with one consistent rule preserves
/// monotonicity; entries at or below `1/(2N)` become zero.
pub fn rounded_initial(utilde: &TailVector, n_queues: u64) -> TailVector {
    let n = n_queues as f64;
    let values: Vec<f64> = utilde
        .values()
        .iter()
        .map(|&v| {
            let i = (n * v - 0.5).ceil().clamp(0.0, n);
            i / n
        })
        .collect();
    validate_tail(&values, Some(n_queues)).expect("rounding preserves validity")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::meanfield::{fixed_point, integrate_ode};
    use crate::model::make_geometric_weights;
    use crate::stats;

    fn params(alpha: f64, beta: f64, big_l: u32) -> ModelParams {
        ModelParams::new(alpha, beta, big_l).unwrap()
    }

    fn grid(t0: f64, t1: f64, dt: f64) -> Vec<f64> {
        let n = ((t1 - t0) / dt).round() as usize;
        (0..=n).map(|i| t0 + i as f64 * dt).collect()
    }

    #[test]
    fn pure_death_drains() {
        let p = ModelParams::drain_only(1.0, 1).unwrap();
        let init = validate_tail(&[1.0, 0.8, 0.5, 0.2], Some(10)).unwrap();
        let cfg = SimConfig::new(p, 10, 4, 200.0, 99, vec![200.0], init).unwrap();
        let traj = simulate(&cfg).unwrap();
        let last = traj.states.last().unwrap();
        for k in 1..=4 {
            assert_eq!(last.at(k), 0.0, "coordinate {k} not drained");
        }
        assert!(traj.event_count > 0);
    }

    #[test]
    fn deterministic_given_seed() {
        let p = params(0.5, 1.0, 2);
        let init = rounded_initial(&fixed_point(&p, 8).unwrap(), 50);
        let cfg = SimConfig::new(p, 50, 8, 20.0, 1234, grid(0.0, 20.0, 1.0), init).unwrap();
        let a = simulate(&cfg).unwrap();
        let b = simulate(&cfg).unwrap();
        assert_eq!(a, b);
        let c = simulate(&cfg.clone().with_stream(1)).unwrap();
        assert_ne!(a.states, c.states);
        // Per-queue engine is deterministic too.
        let d = simulate_per_queue(&cfg).unwrap();
        let e = simulate_per_queue(&cfg).unwrap();
        assert_eq!(d, e);
    }

    #[test]
    fn states_stay_on_lattice() {
        let p = params(0.7, 1.0, 2);
        let init = TailVector::zero(10);
        let cfg = SimConfig::new(p, 25, 10, 30.0, 7, grid(0.0, 30.0, 0.5), init).unwrap();
        for engine in [simulate, simulate_per_queue] {
            let traj = engine(&cfg).unwrap();
            assert_eq!(traj.times.len(), cfg.record_times.len());
            for s in &traj.states {
                validate_tail(s.values(), Some(25)).unwrap();
            }
        }
    }

    #[test]
    fn total_rate_identity() {
        // Total jump rate is N sum_k (F^N_+ + F_-) and at most N (alpha + beta).
        let p = params(0.5, 1.0, 2);
        let n = 20;
        let v = validate_tail(&[0.8, 0.45, 0.2, 0.05], Some(n)).unwrap();
        let counts = counts_from_tail(&v, n);
        let (births, deaths) = jump_rates(&counts, &p, n, Sampling::WithoutReplacement);
        let fine = crate::meanfield::finite_n_drift(&v, &p, n);
        let expect: f64 = n as f64
            * (fine.f_plus.iter().sum::<f64>() + fine.f_minus.iter().sum::<f64>());
        // births[..kmax] matches N F^N_+ termwise.
        for (k, b) in births[..4].iter().enumerate() {
            assert!(
                (b - n as f64 * fine.f_plus[k]).abs() <= 1e-10,
                "birth rate mismatch at {k}"
            );
        }
        for (k, d) in deaths.iter().enumerate() {
            assert!((d - n as f64 * fine.f_minus[k]).abs() <= 1e-10, "death {k}");
        }
        let total: f64 = births[..4].iter().sum::<f64>() + deaths.iter().sum::<f64>();
        assert!((total - expect).abs() <= 1e-9);
        let cap = n as f64 * (p.alpha() + p.beta());
        assert!(births.iter().sum::<f64>() + deaths.iter().sum::<f64>() <= cap + 1e-9);
    }

    #[test]
    fn with_replacement_matches_mean_field_rates() {
        let p = params(0.5, 1.0, 3);
        let n = 12;
        let v = validate_tail(&[0.75, 0.5, 0.25], Some(n)).unwrap();
        let counts = counts_from_tail(&v, n);
        let (births, _) = jump_rates(&counts, &p, n, Sampling::WithReplacement);
        let coarse = crate::meanfield::drift(&v, &p);
        for k in 0..3 {
            assert!(
                (births[k] - n as f64 * coarse.f_plus[k]).abs() <= 1e-10,
                "level {}",
                k + 1
            );
        }
    }

    #[test]
    fn aggregate_rates_match_choice_enumeration() {
        // For every L-subset of queues, the arrival joins a shortest
        // sampled queue; counting subsets whose sampled minimum is k-1
        // must reproduce the aggregate birth rates exactly (integers).
        fn subsets(n: usize, l: usize) -> Vec<Vec<usize>> {
            let mut out = Vec::new();
            let mut idx: Vec<usize> = (0..l).collect();
            loop {
                out.push(idx.clone());
                let mut i = l;
                loop {
                    if i == 0 {
                        return out;
                    }
                    i -= 1;
                    if idx[i] != i + n - l {
                        break;
                    }
                }
                idx[i] += 1;
                for j in i + 1..l {
                    idx[j] = idx[j - 1] + 1;
                }
            }
        }
        for (n, big_l) in [(4_u64, 2_u32), (6, 2), (6, 3), (8, 3), (8, 2), (5, 1)] {
            let p = params(0.5, 1.0, big_l);
            // A representative ragged state.
            let lengths: Vec<u32> = (0..n).map(|i| ((i * 7 + 3) % 5) as u32).collect();
            let kmax = 6_usize;
            let mut counts = vec![0_u64; kmax];
            for &len in &lengths {
                for k in 1..=len.min(kmax as u32) {
                    counts[k as usize - 1] += 1;
                }
            }
            let (births, _) = jump_rates(&counts, &p, n, Sampling::WithoutReplacement);
            let all = subsets(n as usize, big_l as usize);
            for k in 1..=kmax {
                let hits = all
                    .iter()
                    .filter(|s| {
                        s.iter().map(|&i| lengths[i]).min().unwrap() == (k - 1) as u32
                    })
                    .count();
                let expect = n as f64 * p.alpha() * hits as f64 / all.len() as f64;
                assert!(
                    (births[k - 1] - expect).abs() <= 1e-12 * (1.0 + expect),
                    "N={n} L={big_l} k={k}: {} vs {expect}",
                    births[k - 1]
                );
            }
        }
    }

    #[test]
    fn single_mm1_queue_geometric_equilibrium() {
        // N=1, L=1 is an M/M/1 queue: equilibrium P(length >= k) = rho^k.
        // Chi-squared test at 5% on the length distribution over k <= 5.
        let p = params(0.5, 1.0, 1);
        let cfg = SimConfig::new(
            p,
            1,
            60,
            40_000.0,
            2024,
            grid(100.0, 40_000.0, 20.0),
            TailVector::zero(60),
        )
        .unwrap();
        let traj = simulate(&cfg).unwrap();
        // Queue length = number of nonzero tail coordinates.
        let mut obs = [0_u64; 6]; // 0..=4, >=5
        for s in &traj.states {
            let len = s.values().iter().filter(|&&x| x > 0.0).count();
            obs[len.min(5)] += 1;
        }
        let total: u64 = obs.iter().sum();
        let rho = 0.5_f64;
        let mut chi2 = 0.0;
        for (k, &o) in obs.iter().enumerate() {
            let p_k = if k < 5 {
                (1.0 - rho) * rho.powi(k as i32)
            } else {
                rho.powi(5)
            };
            let e = total as f64 * p_k;
            chi2 += (o as f64 - e).powi(2) / e;
        }
        // df = 5, 5% critical value.
        assert!(chi2 <= 11.0705, "chi2 = {chi2}, observed {obs:?}");
    }

    #[test]
    fn single_queue_engines_identical_in_law() {
        // N=1, L=1: both engines describe the same M/M/1 queue.
        let p = params(0.5, 1.0, 1);
        let mut mean_a = 0.0;
        let mut mean_b = 0.0;
        let reps = 4000;
        for r in 0..reps {
            let cfg = SimConfig::new(
                p,
                1,
                30,
                5.0,
                777,
                vec![5.0],
                TailVector::zero(30),
            )
            .unwrap()
            .with_stream(r);
            let a = simulate(&cfg).unwrap();
            let b = simulate_per_queue(&SimConfig {
                stream: r + reps,
                ..cfg.clone()
            })
            .unwrap();
            mean_a += a.states[0].values().iter().sum::<f64>();
            mean_b += b.states[0].values().iter().sum::<f64>();
        }
        mean_a /= reps as f64;
        mean_b /= reps as f64;
        assert!(
            (mean_a - mean_b).abs() < 0.1,
            "mean lengths diverge: {mean_a} vs {mean_b}"
        );
    }

    #[test]
    fn engines_distributionally_equal_small_network() {
        // N=3, L=2: distribution of R(1) at t=1 from many replicas,
        // two-sample chi-squared at 1% (4 categories => df 3).
        let p = params(0.5, 1.0, 2);
        let reps = 100_000_u64;
        let mut counts_a = [0_u64; 4];
        let mut counts_b = [0_u64; 4];
        for r in 0..reps {
            let cfg = SimConfig::new(p, 3, 12, 1.0, 31337, vec![1.0], TailVector::zero(12))
                .unwrap()
                .with_stream(r);
            let a = simulate(&cfg).unwrap();
            let cat_a = (a.states[0].at(1) * 3.0).round() as usize;
            counts_a[cat_a] += 1;
            let b = simulate_per_queue(&SimConfig {
                stream: r + reps,
                ..cfg
            })
            .unwrap();
            let cat_b = (b.states[0].at(1) * 3.0).round() as usize;
            counts_b[cat_b] += 1;
        }
        let mut chi2 = 0.0;
        for k in 0..4 {
            let (a, b) = (counts_a[k] as f64, counts_b[k] as f64);
            if a + b > 0.0 {
                chi2 += (a - b).powi(2) / (a + b);
            }
        }
        // df = 3, 1% critical value.
        assert!(chi2 <= 11.345, "chi2 = {chi2}: {counts_a:?} vs {counts_b:?}");
    }

    #[test]
    fn equilibrium_mean_matches_fixed_point() {
        // rho=0.5, L=2, N=1000: mean R(2) within 4 standard errors of 0.125.
        let p = params(0.5, 1.0, 2);
        let n = 1000;
        let init = rounded_initial(&fixed_point(&p, 10).unwrap(), n);
        let cfg = SimConfig::new(p, n, 10, 1.0, 4242, vec![], init).unwrap();
        let batch = sample_equilibrium(&cfg, default_burn_in(&p), 200, 1.0).unwrap();
        assert_eq!(batch.snapshots.len(), 200);
        let r2: Vec<f64> = batch.snapshots.iter().map(|s| s.at(2)).collect();
        let se = stats::batch_std_error(&r2, 20);
        let gap = (stats::mean(&r2) - 0.125).abs();
        assert!(gap <= 4.0 * se.max(1e-4), "gap {gap}, se {se}");
    }

    #[test]
    fn equilibrium_geometric_profile_for_independent_queues() {
        // L=1, N=1000: mean tail matches rho^k (i.i.d. M/M/1 queues).
        let p = params(0.5, 1.0, 1);
        let n = 1000;
        let cfg = SimConfig::new(p, n, 40, 1.0, 555, vec![], TailVector::zero(40)).unwrap();
        let batch = sample_equilibrium(&cfg, default_burn_in(&p), 300, 1.0).unwrap();
        for k in 1..=4 {
            let vals: Vec<f64> = batch.snapshots.iter().map(|s| s.at(k)).collect();
            let target = 0.5_f64.powi(k as i32);
            let se = stats::batch_std_error(&vals, 20).max(1e-4);
            assert!(
                (stats::mean(&vals) - target).abs() <= 4.0 * se,
                "k={k}: {} vs {target} (se {se})",
                stats::mean(&vals)
            );
        }
    }

    #[test]
    fn large_network_time_average_matches_fixed_point() {
        // N=10^4, L=2, rho=0.5 from the rounded profile: time-averaged
        // R(1) over t in [20, 100] within 3 standard errors of 0.5.
        let p = params(0.5, 1.0, 2);
        let n = 10_000;
        let init = rounded_initial(&fixed_point(&p, 12).unwrap(), n);
        let cfg = SimConfig::new(p, n, 12, 100.0, 90210, grid(20.0, 100.0, 1.0), init).unwrap();
        let traj = simulate(&cfg).unwrap();
        let r1: Vec<f64> = traj.states.iter().map(|s| s.at(1)).collect();
        let se = stats::batch_std_error(&r1, 10);
        let gap = (stats::mean(&r1) - 0.5).abs();
        assert!(gap <= 3.0 * se.max(1e-4), "gap {gap}, se {se}");
    }

    #[test]
    fn equilibrium_empty_batch() {
        let p = params(0.5, 1.0, 2);
        let init = TailVector::zero(6);
        let cfg = SimConfig::new(p, 10, 6, 1.0, 1, vec![], init).unwrap();
        let batch = sample_equilibrium(&cfg, 50.0, 0, 1.0).unwrap();
        assert!(batch.snapshots.is_empty());
    }

    #[test]
    fn equilibrium_tail_lower_bound() {
        // E[R^N(k)] >= rho^(Nk)/N wherever measurable (N <= 4, k <= 2).
        let p = params(0.5, 1.0, 2);
        for n in [2_u64, 4] {
            let cfg =
                SimConfig::new(p, n, 20, 1.0, 808, vec![], TailVector::zero(20)).unwrap();
            let batch = sample_equilibrium(&cfg, 40.0, 400, 2.0).unwrap();
            for k in 1..=2 {
                let mean =
                    stats::mean(&batch.snapshots.iter().map(|s| s.at(k)).collect::<Vec<_>>());
                let bound = 0.5_f64.powi((n * k as u64) as i32) / n as f64;
                assert!(mean >= bound, "N={n} k={k}: {mean} < {bound}");
            }
        }
    }

    #[test]
    fn rounded_initial_examples() {
        let p = params(0.5, 1.0, 2);
        let u = fixed_point(&p, 3).unwrap();
        // N=4: 0.125 rounds to 0 under the half-open rule.
        let r = rounded_initial(&u, 4);
        assert_eq!(r.values(), &[0.5, 0.0, 0.0]);
        // Sup-distance bound 1/(2N).
        for n in [10_u64, 100, 1000] {
            let r = rounded_initial(&u, n);
            assert!(r.sup_distance(&u) <= 0.5 / n as f64 + 1e-15);
        }
        // Tie rule: v - i/N = -1/(2N) excluded, so 0.125 at N=4 -> 0,
        // while anything strictly above 0.125 rounds up to 0.25.
        let v = validate_tail(&[0.1250000001], None).unwrap();
        assert_eq!(rounded_initial(&v, 4).values(), &[0.25]);
    }

    #[test]
    fn rounded_initial_norm_stays_bounded() {
        // sqrt(N) ||rounded - u~||_{L2(g_rho)} stays bounded as N grows.
        let p = params(0.5, 1.0, 2);
        let u = fixed_point(&p, 30).unwrap();
        let w = make_geometric_weights(0.5, 30).unwrap();
        let mut norms = Vec::new();
        let mut n = 1000_u64;
        while n <= 128_000 {
            let r = rounded_initial(&u, n);
            let diff: Vec<f64> = (1..=30).map(|k| r.at(k) - u.at(k)).collect();
            let norm =
                (n as f64).sqrt() * crate::model::weighted_l2_norm(&diff, &w).unwrap();
            norms.push(norm);
            n *= 2;
        }
        let max = norms.iter().cloned().fold(0.0, f64::max);
        assert!(max <= 1.0, "norms grew: {norms:?}");
    }

    #[test]
    fn fluctuations_examples() {
        let p = params(0.5, 1.0, 2);
        let u0 = rounded_initial(&fixed_point(&p, 8).unwrap(), 100);
        let u = integrate_ode(&u0, &p, 5.0, 0.01).unwrap();
        // Synthetic trajectory equal to the deterministic path: z == 0.
        let times: Vec<f64> = vec![0.0, 1.0, 2.5];
        let states: Vec<TailVector> = times
            .iter()
            .map(|&t| {
                let vals = u.state_at_time(t).unwrap();
                // Snap to the N-lattice of N=100 for a valid sim state.
                let snapped: Vec<f64> =
                    vals.iter().map(|x| (x * 100.0).round() / 100.0).collect();
                validate_tail(&snapped, Some(100)).unwrap()
            })
            .collect();
        let traj = SimTrajectory {
            times: times.clone(),
            states,
            event_count: 0,
            seed: 0,
            n_queues: 100,
        };
        let w = make_geometric_weights(0.5, 8).unwrap();
        let fl = fluctuations(&traj, &u, w).unwrap();
        // Initial state matches exactly: z_0 = 0.
        assert!(fl.z[0].iter().all(|x| x.abs() < 1e-9));
        // Later times: bounded by the lattice snap, sqrt(N) * 1/(2N).
        for row in &fl.z {
            for x in row {
                assert!(x.abs() <= 10.0 * 0.5 / 10.0 + 1e-9);
            }
        }
        // Grid mismatch beyond tolerance errors out.
        let short = integrate_ode(&u0, &p, 1.0, 0.01).unwrap();
        assert!(fluctuations(&traj, &short, make_geometric_weights(0.5, 8).unwrap()).is_err());
    }

    #[test]
    fn config_validation() {
        let p = params(0.5, 1.0, 2);
        let init = TailVector::zero(4);
        assert!(SimConfig::new(p, 1, 4, 1.0, 0, vec![], init.clone()).is_err());
        assert!(SimConfig::new(p, 10, 4, -1.0, 0, vec![], init.clone()).is_err());
        assert!(SimConfig::new(p, 10, 4, 1.0, 0, vec![2.0], init.clone()).is_err());
        assert!(SimConfig::new(p, 10, 4, 1.0, 0, vec![0.5, 0.2], init.clone()).is_err());
        assert!(SimConfig::new(p, 10, 3, 1.0, 0, vec![], init.clone()).is_err());
        // Off-lattice init rejected.
        let off = validate_tail(&[0.333], None).unwrap();
        assert!(SimConfig::new(p, 10, 1, 1.0, 0, vec![], off).is_err());
        // Round trip through JSON preserves the config.
        let cfg = SimConfig::new(p, 10, 4, 1.0, 3, vec![0.5], init).unwrap();
        let s = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<SimConfig>(&s).unwrap(), cfg);
    }

    #[test]
    fn buffer_overflow_detected() {
        // Tiny kmax under heavy load must trip the overflow signal.
        let p = params(0.9, 1.0, 1);
        let cfg = SimConfig::new(p, 50, 1, 200.0, 5, vec![], TailVector::zero(1)).unwrap();
        match simulate(&cfg) {
            Err(Error::BufferOverflow { kmax, .. }) => assert_eq!(kmax, 1),
            other => panic!("expected overflow, got {other:?}"),
        }
    }
}
