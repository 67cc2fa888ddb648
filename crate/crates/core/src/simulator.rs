//! Slot-level Monte Carlo simulation of N interacting users running a
//! [`ProtocolSpec`], with empirical AoI, delivery-rate and temporal-variance
//! estimators used to validate the mean-field analysis.
//!
//! Per slot, every user in the transmission state transmits; a transmission
//! succeeds iff nobody else transmitted in the same slot; each user's AoI
//! resets to 1 on its own success and increments otherwise; each user then
//! draws its next state from `M0` or `M1` according to its sensing bit
//! `α_n = 1` iff at least one *other* user transmitted this slot (a solo
//! success is acknowledged, so the successful user itself sees `α = 0`).
//!
//! Reproducibility: all randomness in run `r` comes from a ChaCha8 generator
//! seeded with the base seed and switched to stream `r`, and users draw
//! exactly one uniform each per slot in fixed order (user 1 … N). Identical
//! configs therefore produce bit-identical results, serially or in parallel.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::{build_age_threshold_aloha, validate_spec, AgeThresholdParams, ProtocolSpec};

/// Number of batches of the batch-means variance estimator.
const VARIANCE_BATCHES: usize = 100;
/// Minimum series length the estimator accepts.
const VARIANCE_MIN_LEN: usize = 1000;

/// Monte Carlo configuration.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SimConfig {
    /// Number of users N.
    pub num_users: u32,
    /// Slots per run.
    pub horizon: u32,
    /// Independent runs.
    pub num_runs: u32,
    /// Base seed; run `r` uses stream `r` of a ChaCha8 generator seeded
    /// with this value.
    pub seed: u64,
}

impl SimConfig {
    /// Defaults: 100,000 slots, 100 runs.
    pub fn new(num_users: u32, seed: u64) -> Self {
        Self {
            num_users,
            horizon: 100_000,
            num_runs: 100,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_users < 1 {
            return Err(Error::InvalidParameter("num_users must be at least 1".into()));
        }
        if self.horizon < 1 {
            return Err(Error::InvalidParameter("horizon must be at least 1".into()));
        }
        if self.num_runs < 1 {
            return Err(Error::InvalidParameter("num_runs must be at least 1".into()));
        }
        Ok(())
    }
}

/// Statistics of one simulation run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunStats {
    pub run: u32,
    /// AoI averaged over all users and all slots of the run.
    pub mean_aoi: f64,
    /// Total successful deliveries in the run.
    pub deliveries: u64,
    /// `deliveries / (N * horizon)`.
    pub empirical_rate: f64,
    /// Batch-means temporal-variance estimate, averaged over users.
    /// `None` when the horizon is too short for the estimator (< 1000).
    pub empirical_variance: Option<f64>,
    /// Per-user delivery rates (diagnostic for symmetry checks).
    pub user_rates: Vec<f64>,
}

/// Aggregate simulation result.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimResult {
    pub config: SimConfig,
    pub per_run: Vec<RunStats>,
    /// Across-run mean of the per-run mean AoI.
    pub mean_aoi: f64,
    /// 2.5th and 97.5th percentiles of the per-run mean AoI.
    pub aoi_p95_interval: (f64, f64),
    /// Across-run mean of the per-run empirical rate.
    pub mean_rate: f64,
    /// Measured duration of the run loop, in seconds. Not part of the
    /// deterministic payload.
    pub wall_time_secs: f64,
}

/// Transition table in sampling form: per (α, state), the cumulative
/// probabilities and target states of the nonzero row entries.
struct SamplingTable {
    rows: [Vec<(Vec<f64>, Vec<u32>)>; 2],
}

impl SamplingTable {
    fn compile(spec: &ProtocolSpec) -> Self {
        let build = |m: &Vec<Vec<f64>>| {
            m.iter()
                .map(|row| {
                    let mut cums = Vec::new();
                    let mut states = Vec::new();
                    let mut acc = 0.0;
                    for (j, &x) in row.iter().enumerate() {
                        if x > 0.0 {
                            acc += x;
                            cums.push(acc);
                            states.push(j as u32);
                        }
                    }
                    (cums, states)
                })
                .collect()
        };
        Self {
            rows: [build(&spec.m0), build(&spec.m1)],
        }
    }

    #[inline]
    fn sample(&self, alpha: usize, state: u32, u: f64) -> u32 {
        let (cums, states) = &self.rows[alpha][state as usize];
        let idx = cums.partition_point(|&c| c <= u).min(states.len() - 1);
        states[idx]
    }
}

/// Sample variance of batch means, scaled by the batch length:
/// `v̂² = L · (1/(B−1)) Σ (mean_b − overall)²`.
fn batch_means_variance(batch_sums: &[u64], batch_len: usize) -> f64 {
    let b = batch_sums.len();
    let l = batch_len as f64;
    let means: Vec<f64> = batch_sums.iter().map(|&s| s as f64 / l).collect();
    let overall = means.iter().sum::<f64>() / b as f64;
    let ss: f64 = means.iter().map(|&m| (m - overall) * (m - overall)).sum();
    l * ss / (b as f64 - 1.0)
}

/// Batch-means estimator of the delivery process's temporal variance `v²`
/// from a binary delivery series: the series is split into 100
/// non-overlapping batches of length `len/100` (a short tail is dropped)
/// and `v̂² = L · sample-variance(batch means)`.
pub fn estimate_temporal_variance(series: &[u8]) -> Result<f64> {
    if series.len() < VARIANCE_MIN_LEN {
        return Err(Error::Estimator(format!(
            "series length {} is below the estimator minimum {}",
            series.len(),
            VARIANCE_MIN_LEN
        )));
    }
    let l = series.len() / VARIANCE_BATCHES;
    let sums: Vec<u64> = (0..VARIANCE_BATCHES)
        .map(|b| {
            series[b * l..(b + 1) * l]
                .iter()
                .map(|&x| u64::from(x))
                .sum()
        })
        .collect();
    Ok(batch_means_variance(&sums, l))
}

/// Mean AoI implied by a delivery matrix (`deliveries[user][slot]`,
/// entries 0/1): applies the recursion `AoI_t = 1` on delivery else
/// `AoI_{t−1} + 1` with `AoI_0 = 1`, averaged over all users and slots.
pub fn empirical_aoi(deliveries: &[Vec<u8>]) -> Result<f64> {
    if deliveries.is_empty() || deliveries[0].is_empty() {
        return Err(Error::InvalidParameter("empty delivery matrix".into()));
    }
    let horizon = deliveries[0].len();
    let mut total: u64 = 0;
    for row in deliveries {
        if row.len() != horizon {
            return Err(Error::InvalidParameter(
                "delivery matrix rows have unequal lengths".into(),
            ));
        }
        let mut aoi: u64 = 1;
        for &d in row {
            aoi = if d != 0 { 1 } else { aoi + 1 };
            total += aoi;
        }
    }
    Ok(total as f64 / (deliveries.len() * horizon) as f64)
}

/// R-7 linear-interpolation percentile (`q` in [0, 1]) of unsorted data.
pub(crate) fn percentile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn run_once(spec: &ProtocolSpec, table: &SamplingTable, config: &SimConfig, run: u32) -> RunStats {
    let n = config.num_users as usize;
    let horizon = config.horizon as u64;
    let tx = spec.tx_index() as u32;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(u64::from(run));

    let batch_len = (config.horizon as usize) / VARIANCE_BATCHES;
    let track_variance = config.horizon as usize >= VARIANCE_MIN_LEN;
    let batched_slots = (batch_len * VARIANCE_BATCHES) as u64;

    let mut state = vec![tx; n];
    let mut aoi = vec![1u32; n];
    let mut aoi_total: u64 = 0;
    let mut user_deliveries = vec![0u64; n];
    let mut batch_sums = if track_variance {
        vec![vec![0u64; VARIANCE_BATCHES]; n]
    } else {
        Vec::new()
    };

    for t in 0..horizon {
        let mut tx_count = 0u32;
        let mut last_tx = usize::MAX;
        for (i, &s) in state.iter().enumerate() {
            if s == tx {
                tx_count += 1;
                last_tx = i;
            }
        }
        let winner = if tx_count == 1 { last_tx } else { usize::MAX };

        for i in 0..n {
            if i == winner {
                aoi[i] = 1;
                user_deliveries[i] += 1;
                if track_variance && t < batched_slots {
                    batch_sums[i][t as usize / batch_len] += 1;
                }
            } else {
                aoi[i] += 1;
            }
            aoi_total += u64::from(aoi[i]);
        }

        for i in 0..n {
            // α_i = 1 iff some *other* user transmitted this slot.
            let alpha = usize::from(tx_count >= 2 || (tx_count == 1 && winner != i));
            let u: f64 = rng.random();
            state[i] = table.sample(alpha, state[i], u);
        }
    }

    let slots = (n as u64) * horizon;
    let deliveries: u64 = user_deliveries.iter().sum();
    let empirical_variance = track_variance.then(|| {
        batch_sums
            .iter()
            .map(|sums| batch_means_variance(sums, batch_len))
            .sum::<f64>()
            / n as f64
    });

    RunStats {
        run,
        mean_aoi: aoi_total as f64 / slots as f64,
        deliveries,
        empirical_rate: deliveries as f64 / slots as f64,
        empirical_variance,
        user_rates: user_deliveries
            .iter()
            .map(|&d| d as f64 / horizon as f64)
            .collect(),
    }
}

/// Simulates `config.num_runs` independent runs of the protocol.
pub fn simulate(spec: &ProtocolSpec, config: &SimConfig) -> Result<SimResult> {
    validate_spec(spec).into_result()?;
    config.validate()?;
    let table = SamplingTable::compile(spec);

    let start = Instant::now();
    let per_run: Vec<RunStats> = (0..config.num_runs)
        .into_par_iter()
        .map(|r| run_once(spec, &table, config, r))
        .collect();
    let wall_time_secs = start.elapsed().as_secs_f64();

    let means: Vec<f64> = per_run.iter().map(|r| r.mean_aoi).collect();
    let mean_aoi = means.iter().sum::<f64>() / means.len() as f64;
    let mean_rate =
        per_run.iter().map(|r| r.empirical_rate).sum::<f64>() / per_run.len() as f64;
    let aoi_p95_interval = (percentile(&means, 0.025), percentile(&means, 0.975));

    Ok(SimResult {
        config: *config,
        per_run,
        mean_aoi,
        aoi_p95_interval,
        mean_rate,
        wall_time_secs,
    })
}

/// One cell of a policy-comparison table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonCell {
    pub label: String,
    pub num_users: u32,
    pub threshold: u32,
    pub tx_prob: f64,
    pub mean_aoi: Option<f64>,
    pub p2_5: Option<f64>,
    pub p97_5: Option<f64>,
    pub error: Option<String>,
}

/// Simulates every labeled parameter set at every user count, sharing the
/// base seed across cells (common random numbers make the comparison
/// paired). Failing cells carry their error and the table completes.
pub fn compare_policies(
    entries: &[(String, AgeThresholdParams)],
    user_counts: &[u32],
    config: &SimConfig,
) -> Result<Vec<ComparisonCell>> {
    if entries.is_empty() || user_counts.is_empty() {
        return Err(Error::InvalidParameter(
            "comparison needs at least one parameter set and one user count".into(),
        ));
    }
    let mut table = Vec::with_capacity(entries.len() * user_counts.len());
    for &n in user_counts {
        for (label, params) in entries {
            let mut cell = ComparisonCell {
                label: label.clone(),
                num_users: n,
                threshold: params.threshold,
                tx_prob: params.tx_prob,
                mean_aoi: None,
                p2_5: None,
                p97_5: None,
                error: None,
            };
            let cfg = SimConfig {
                num_users: n,
                ..*config
            };
            match build_age_threshold_aloha(params).and_then(|spec| simulate(&spec, &cfg)) {
                Ok(res) => {
                    cell.mean_aoi = Some(res.mean_aoi);
                    cell.p2_5 = Some(res.aoi_p95_interval.0);
                    cell.p97_5 = Some(res.aoi_p95_interval.1);
                }
                Err(e) => cell.error = Some(e.to_string()),
            }
            table.push(cell);
        }
    }
    Ok(table)
}
