//! Mean-field steady-state analysis and the second-order AoI approximation.
//!
//! For `N` statistically identical users running a [`ProtocolSpec`], the
//! mean-field model replaces the other users' interference with its average:
//! if `mu` is one user's stationary state distribution, the probability that
//! nobody else transmits in a slot is `gamma0 = (1 - mu[tx])^(N-1)`, and the
//! user's chain evolves by the mixture `P = gamma0*M0 + gamma1*M1`. The
//! self-consistent `mu` is found by fixed-point iteration:
//!
//! 1. start from `mu = [1, 0, ..., 0]`,
//! 2. compute `gamma0` from the current iterate,
//! 3. solve the stationary distribution of `P` (inner solve),
//! 4. repeat until the iterate stops moving *and* the self-consistent
//!    residual `‖gamma0(mu)·mu·M0 + gamma1(mu)·mu·M1 − mu‖₁` is below the
//!    threshold. The second check matters: the first inner solution whose
//!    update is small can still carry a residual above the threshold once
//!    `gamma0` is recomputed from it.
//!
//! The inner solve is a restarted Cesàro-averaged power iteration. Plain
//! power iteration stalls on two chain families this crate must handle:
//! periodic chains (deterministic pause cycles at p = 1) and near-periodic
//! chains (long pause chains with aggressive transmission probabilities),
//! whose slow eigenvalues sit near the unit circle with nonzero phase.
//! Averaging the iterates over a window longer than any possible period
//! cancels rotating modes, and restarting from the average keeps the
//! geometric convergence of the aperiodic part. The per-step check
//! `‖xP − x‖₁ ≤ tol` certifies the returned vector directly.
//!
//! From the converged solution, the delivery rate is `m = mu[tx]·gamma0`,
//! the temporal variance `v²` of the delivery process is the autocovariance
//! series `v² = m − m² + 2·Σ_k (q_k − m)·m` with
//! `q_k = gamma0·[e_tx·M0·P^(k−2)]_tx`, and the expected AoI is approximated
//! to second order by `½(v²/m² + 1/m) + ½`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result, DEGENERATE_RATE_MIN};
use crate::protocol::{validate_spec, ProtocolSpec, ROW_SUM_TOL};

/// Hard cap on matrix-vector products per inner stationary solve.
const INNER_MATVEC_CAP: u64 = 2_000_000;

/// Tunable settings of the analysis pipeline.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AnalysisSettings {
    /// Number of users N (at least 1).
    pub num_users: u32,
    /// Convergence threshold of the outer fixed-point iteration (L1).
    pub fp_threshold: f64,
    /// Cap on outer fixed-point iterations.
    pub fp_max_iters: u64,
    /// Relaxation weight in [0, 1) applied to the state update
    /// (`0` = plain iteration).
    pub damping: f64,
    /// Truncation index K of the covariance series.
    pub cov_k_max: u32,
    /// Early-stop tolerance on covariance terms.
    pub cov_term_tol: f64,
    /// L1 tolerance of the inner stationary-distribution solve.
    pub stat_dist_tol: f64,
}

impl AnalysisSettings {
    /// Default settings for `num_users` users.
    pub fn new(num_users: u32) -> Self {
        Self {
            num_users,
            fp_threshold: 1e-6,
            fp_max_iters: 10_000,
            damping: 0.0,
            cov_k_max: 1000,
            cov_term_tol: 1e-12,
            stat_dist_tol: 1e-12,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_users < 1 {
            return Err(Error::InvalidParameter("num_users must be at least 1".into()));
        }
        for (name, v) in [
            ("fp_threshold", self.fp_threshold),
            ("cov_term_tol", self.cov_term_tol),
            ("stat_dist_tol", self.stat_dist_tol),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must be a positive finite number, got {v}"
                )));
            }
        }
        if !(0.0..1.0).contains(&self.damping) {
            return Err(Error::InvalidParameter(format!(
                "damping must lie in [0, 1), got {}",
                self.damping
            )));
        }
        if self.fp_max_iters < 1 {
            return Err(Error::InvalidParameter("fp_max_iters must be at least 1".into()));
        }
        if self.cov_k_max < 2 {
            return Err(Error::InvalidParameter(
                "cov_k_max must be at least 2 (the series starts at k = 2)".into(),
            ));
        }
        Ok(())
    }
}

/// Converged mean-field solution plus diagnostics.
///
/// [`solve_fixed_point`] populates the distribution fields and leaves the
/// variance/AoI fields `None`; [`analyze`] fills everything.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MeanFieldSolution {
    /// Stationary state distribution of one user.
    pub mu: Vec<f64>,
    /// Probability that no other user transmits: `(1 - mu[tx])^(N-1)`,
    /// recomputed from the returned `mu`.
    pub gamma0: f64,
    /// `1 - gamma0`.
    pub gamma1: f64,
    /// Long-run delivery rate `m = mu[tx] * gamma0`.
    pub mean_rate: f64,
    /// Temporal variance `v²` of the delivery process (clamped at 0).
    pub temporal_variance: Option<f64>,
    /// `v²` before clamping (diagnostic; tiny negatives can occur in
    /// near-deterministic regimes).
    pub v2_raw: Option<f64>,
    /// Number of series terms actually summed.
    pub cov_terms_used: Option<u32>,
    /// Whether the series terminated by the early-stop rule rather than
    /// by hitting `cov_k_max`.
    pub cov_early_stopped: Option<bool>,
    /// Second-order expected-AoI approximation.
    pub aoi_approx: Option<f64>,
    /// Outer fixed-point iterations performed.
    pub iterations: u64,
    /// Final self-consistent L1 residual.
    pub residual: f64,
    pub converged: bool,
}

/// Outcome of the covariance-series evaluation.
#[derive(Debug, Clone, Copy)]
pub struct TemporalVariance {
    /// `v²`, clamped at zero.
    pub v2: f64,
    /// The unclamped sum.
    pub raw: f64,
    /// Series terms summed (index of the last k evaluated).
    pub terms_used: u32,
    /// True if the early-stop rule fired before `cov_k_max`.
    pub early_stopped: bool,
}

/// Two-matrix chain compiled to a shared CSR pattern so the mixture
/// `gamma0*M0 + (1-gamma0)*M1` can be re-materialized in O(nnz) when
/// `gamma0` changes. The protocol matrices here are extremely sparse
/// (about two entries per row for the age-threshold family), which makes
/// the power iteration's matrix-vector product the cheap step it must be.
pub(crate) struct MixedChain {
    n: usize,
    row_ptr: Vec<u32>,
    col_idx: Vec<u32>,
    vals0: Vec<f64>,
    vals1: Vec<f64>,
    mixed: Vec<f64>,
}

impl MixedChain {
    pub fn compile(spec: &ProtocolSpec) -> Self {
        let n = spec.num_states;
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut vals0 = Vec::new();
        let mut vals1 = Vec::new();
        row_ptr.push(0);
        for i in 0..n {
            for j in 0..n {
                let a = spec.m0[i][j];
                let b = spec.m1[i][j];
                if a != 0.0 || b != 0.0 {
                    col_idx.push(j as u32);
                    vals0.push(a);
                    vals1.push(b);
                }
            }
            row_ptr.push(col_idx.len() as u32);
        }
        let mixed = vals0.clone();
        Self { n, row_ptr, col_idx, vals0, vals1, mixed }
    }

    /// Compiles a single stochastic matrix (both branches identical).
    pub fn from_matrix(p: &[Vec<f64>]) -> Self {
        let n = p.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for row in p {
            for (j, &x) in row.iter().enumerate() {
                if x != 0.0 {
                    col_idx.push(j as u32);
                    vals.push(x);
                }
            }
            row_ptr.push(col_idx.len() as u32);
        }
        Self {
            n,
            row_ptr,
            col_idx,
            vals0: vals.clone(),
            vals1: vals.clone(),
            mixed: vals,
        }
    }

    pub fn set_gamma(&mut self, gamma0: f64) {
        let g1 = 1.0 - gamma0;
        for ((m, &a), &b) in self.mixed.iter_mut().zip(&self.vals0).zip(&self.vals1) {
            *m = gamma0 * a + g1 * b;
        }
    }

    pub fn order(&self) -> usize {
        self.n
    }

    /// `y = x * P` (row vector times matrix).
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        y.fill(0.0);
        for i in 0..self.n {
            let xi = x[i];
            if xi == 0.0 {
                continue;
            }
            let lo = self.row_ptr[i] as usize;
            let hi = self.row_ptr[i + 1] as usize;
            for k in lo..hi {
                y[self.col_idx[k] as usize] += xi * self.mixed[k];
            }
        }
    }
}

fn l1_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn normalize(x: &mut [f64]) {
    let s: f64 = x.iter().sum();
    if s > 0.0 {
        for v in x.iter_mut() {
            *v /= s;
        }
    }
}

/// Restarted Cesàro-averaged power iteration on a compiled chain.
///
/// Returns a vector whose L1 stationarity residual is at most `tol`,
/// together with the number of matrix-vector products spent. The window
/// width `max(64, 2S)` exceeds twice any possible period of an S-state
/// chain, so window averages contract rotating (periodic and near-periodic)
/// modes; aperiodic chains usually exit through the per-step check long
/// before a window completes.
fn stationary_on(chain: &MixedChain, start: &[f64], tol: f64) -> Result<(Vec<f64>, u64)> {
    let s = chain.order();
    let window = 64.max(2 * s) as u64;
    let mut x = start.to_vec();
    normalize(&mut x);
    let mut y = vec![0.0; s];
    let mut acc = vec![0.0; s];
    let mut matvecs: u64 = 0;
    let mut last = f64::INFINITY;

    while matvecs < INNER_MATVEC_CAP {
        acc.fill(0.0);
        for _ in 0..window {
            chain.apply(&x, &mut y);
            matvecs += 1;
            last = l1_diff(&y, &x);
            if last <= tol {
                // ‖xP − x‖₁ = last ≤ tol certifies x itself.
                normalize(&mut x);
                return Ok((x, matvecs));
            }
            for (a, &v) in acc.iter_mut().zip(&y) {
                *a += v;
            }
            std::mem::swap(&mut x, &mut y);
        }
        let mut avg = acc.clone();
        for a in avg.iter_mut() {
            *a /= window as f64;
        }
        normalize(&mut avg);
        chain.apply(&avg, &mut y);
        matvecs += 1;
        last = l1_diff(&y, &avg);
        if last <= tol {
            return Ok((avg, matvecs));
        }
        x.copy_from_slice(&y);
        normalize(&mut x);
    }

    Err(Error::NonConvergence {
        stage: "stationary-distribution",
        iterations: matvecs,
        residual: last,
        threshold: tol,
        history: Vec::new(),
    })
}

/// Stationary distribution of an explicit row-stochastic matrix, reached
/// from `start`. For reducible chains this returns the stationary
/// distribution of the recurrent class(es) reachable from `start` (the
/// Cesàro limit of the power iteration), which also covers periodic chains.
pub fn stationary_distribution(p: &[Vec<f64>], start: &[f64], tol: f64) -> Result<Vec<f64>> {
    let n = p.len();
    if n == 0 {
        return Err(Error::InvalidParameter("empty matrix".into()));
    }
    for (i, row) in p.iter().enumerate() {
        if row.len() != n {
            return Err(Error::InvalidParameter(format!(
                "matrix is not square: row {} has {} entries, expected {n}",
                i + 1,
                row.len()
            )));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > ROW_SUM_TOL || row.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
            return Err(Error::InvalidParameter(format!(
                "matrix row {} is not a probability distribution",
                i + 1
            )));
        }
    }
    if start.len() != n {
        return Err(Error::InvalidParameter("start vector has wrong length".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter("tolerance must be positive".into()));
    }
    let chain = MixedChain::from_matrix(p);
    stationary_on(&chain, start, tol).map(|(v, _)| v)
}

fn gamma0_of(mu_tx: f64, num_users: u32) -> f64 {
    (1.0 - mu_tx).max(0.0).powi(num_users as i32 - 1)
}

/// Self-consistent L1 residual `‖gamma0(mu)·mu·M0 + gamma1(mu)·mu·M1 − mu‖₁`
/// with `gamma0` recomputed from `mu`.
pub fn fixed_point_residual(spec: &ProtocolSpec, mu: &[f64], num_users: u32) -> f64 {
    let mut chain = MixedChain::compile(spec);
    chain.set_gamma(gamma0_of(mu[spec.tx_index()], num_users));
    let mut y = vec![0.0; spec.num_states];
    chain.apply(mu, &mut y);
    l1_diff(&y, mu)
}

/// Runs the mean-field fixed-point iteration to convergence.
///
/// The returned solution has `mu`, `gamma0`, `gamma1`, `mean_rate` and the
/// convergence diagnostics populated; the variance and AoI fields are filled
/// by [`temporal_variance`] / [`analyze`]. Convergence requires both a small
/// update step and a small self-consistent residual re-evaluated from the
/// candidate, so the residual invariant holds for every returned solution.
pub fn solve_fixed_point(
    spec: &ProtocolSpec,
    settings: &AnalysisSettings,
) -> Result<MeanFieldSolution> {
    validate_spec(spec).into_result()?;
    settings.validate()?;

    let s = spec.num_states;
    let tx = spec.tx_index();
    let mut chain = MixedChain::compile(spec);

    let mut mu_bar = vec![0.0; s];
    mu_bar[0] = 1.0;
    let mut y = vec![0.0; s];
    let mut history = Vec::new();

    for iter in 1..=settings.fp_max_iters {
        chain.set_gamma(gamma0_of(mu_bar[tx], settings.num_users));
        let (mu_prime, _) = stationary_on(&chain, &mu_bar, settings.stat_dist_tol)?;

        let diff = l1_diff(&mu_bar, &mu_prime);
        let gamma0 = gamma0_of(mu_prime[tx], settings.num_users);
        chain.set_gamma(gamma0);
        chain.apply(&mu_prime, &mut y);
        let residual = l1_diff(&y, &mu_prime);
        history.push(residual);

        if diff < settings.fp_threshold && residual <= settings.fp_threshold {
            let mean_rate = mu_prime[tx] * gamma0;
            return Ok(MeanFieldSolution {
                mu: mu_prime,
                gamma0,
                gamma1: 1.0 - gamma0,
                mean_rate,
                temporal_variance: None,
                v2_raw: None,
                cov_terms_used: None,
                cov_early_stopped: None,
                aoi_approx: None,
                iterations: iter,
                residual,
                converged: true,
            });
        }

        if settings.damping > 0.0 {
            let d = settings.damping;
            for (b, &p) in mu_bar.iter_mut().zip(&mu_prime) {
                *b = d * *b + (1.0 - d) * p;
            }
        } else {
            mu_bar = mu_prime;
        }
    }

    let residual = history.last().copied().unwrap_or(f64::INFINITY);
    Err(Error::NonConvergence {
        stage: "fixed-point",
        iterations: settings.fp_max_iters,
        residual,
        threshold: settings.fp_threshold,
        history,
    })
}

/// Long-run delivery rate `m = mu[tx] * gamma0`.
pub fn delivery_rate(mu: &[f64], tx_state: usize, gamma0: f64) -> f64 {
    mu[tx_state - 1] * gamma0
}

/// Evaluates the delivery-process temporal variance
/// `v² = m − m² + 2·Σ_{k=2}^{K} (q_k − m)·m`, where
/// `q_k = gamma0·[e_tx·M0·P^{k−2}]_tx` is the probability of delivering at
/// slot k conditioned on a delivery at slot 1 (the first step uses `M0`
/// because a delivery implies the user saw a clean slot). The sum stops at
/// `cov_k_max`, or earlier once three consecutive terms fall below
/// `cov_term_tol` in magnitude.
pub fn temporal_variance(
    spec: &ProtocolSpec,
    mu: &[f64],
    gamma0: f64,
    settings: &AnalysisSettings,
) -> Result<TemporalVariance> {
    let tx = spec.tx_index();
    let m = mu[tx] * gamma0;
    if m < DEGENERATE_RATE_MIN {
        return Err(Error::DegenerateRate { rate: m });
    }

    let mut chain = MixedChain::compile(spec);
    chain.set_gamma(gamma0);

    let mut r = spec.m0[tx].clone();
    let mut next = vec![0.0; spec.num_states];
    let mut total = 0.0;
    let mut streak = 0u32;
    let mut early_stopped = false;
    let mut terms_used = settings.cov_k_max;

    for k in 2..=settings.cov_k_max {
        if k > 2 {
            chain.apply(&r, &mut next);
            std::mem::swap(&mut r, &mut next);
        }
        let q_k = gamma0 * r[tx];
        let term = (q_k - m) * m;
        total += term;
        if term.abs() < settings.cov_term_tol {
            streak += 1;
            if streak == 3 {
                early_stopped = true;
                terms_used = k;
                break;
            }
        } else {
            streak = 0;
        }
    }

    let raw = m - m * m + 2.0 * total;
    Ok(TemporalVariance {
        v2: raw.max(0.0),
        raw,
        terms_used,
        early_stopped,
    })
}

/// Second-order approximation of the expected AoI: `½(v²/m² + 1/m) + ½`.
pub fn aoi_second_order(m: f64, v2: f64) -> Result<f64> {
    if !(m > 0.0) {
        return Err(Error::DegenerateRate { rate: m });
    }
    Ok(0.5 * (v2 / (m * m) + 1.0 / m) + 0.5)
}

/// Full pipeline: fixed point, delivery rate, temporal variance, AoI.
pub fn analyze(spec: &ProtocolSpec, settings: &AnalysisSettings) -> Result<MeanFieldSolution> {
    let mut sol = solve_fixed_point(spec, settings)?;
    let tv = temporal_variance(spec, &sol.mu, sol.gamma0, settings)?;
    sol.temporal_variance = Some(tv.v2);
    sol.v2_raw = Some(tv.raw);
    sol.cov_terms_used = Some(tv.terms_used);
    sol.cov_early_stopped = Some(tv.early_stopped);
    sol.aoi_approx = Some(aoi_second_order(sol.mean_rate, tv.v2)?);
    Ok(sol)
}
