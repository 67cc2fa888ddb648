//! Grid-search optimization of age-threshold ALOHA parameters, reference
//! parameter rules, and the ε-sweep around the optimal transmission scale.
//!
//! The optimizer evaluates the full analysis pipeline on a two-dimensional
//! grid over the age threshold `H` and the transmission probability `p`, and
//! returns the point with the lowest approximated AoI. Evaluation order is
//! irrelevant to the result: grid points are independent, aggregation is a
//! deterministic argmin with explicit tie-breaking (lowest AoI, then smallest
//! `H`, then smallest `p`), and failed points are reported rather than
//! silently dropped.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::meanfield::{analyze, AnalysisSettings, MeanFieldSolution};
use crate::protocol::{build_age_threshold_aloha, AgeThresholdParams, ProtocolSpec};

/// Search grid over `(H, p)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridSpec {
    /// Inclusive range of age thresholds.
    pub h_range: (u32, u32),
    /// Inclusive range of transmission probabilities.
    pub p_range: (f64, f64),
    /// Grid resolution for `p`.
    pub p_step: f64,
}

impl GridSpec {
    /// Default grid for `num_users` users: `H` from 1 to `3N`, `p` over
    /// `[p_step, 1]` at resolution 0.001.
    pub fn default_for(num_users: u32) -> Self {
        Self {
            h_range: (1, 3 * num_users.max(1)),
            p_range: (0.001, 1.0),
            p_step: 0.001,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.h_range.0 < 1 || self.h_range.1 < self.h_range.0 {
            return Err(Error::InvalidParameter(format!(
                "h_range must be a nonempty range of thresholds >= 1, got {:?}",
                self.h_range
            )));
        }
        if !(self.p_step > 0.0 && self.p_step < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "p_step must lie in (0, 1), got {}",
                self.p_step
            )));
        }
        let (lo, hi) = self.p_range;
        if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "p_range must be a nonempty subrange of (0, 1], got {:?}",
                self.p_range
            )));
        }
        Ok(())
    }

    /// The `p` values of the grid: `p_min + k*p_step` up to and including
    /// `p_max` (with half-ulp slack so that e.g. 1.0 is reached even when
    /// the step count times the step size lands an ulp past it).
    fn p_values(&self) -> Vec<f64> {
        step_values(self.p_range.0, self.p_range.1, self.p_step)
            .map(|p| p.min(1.0))
            .collect()
    }
}

/// Inclusive arithmetic progression `lo, lo+step, …` up to `hi`, tolerant of
/// floating-point representation of the endpoints.
fn step_values(lo: f64, hi: f64, step: f64) -> impl Iterator<Item = f64> {
    let ratio = (hi - lo) / step;
    let rounded = ratio.round();
    let steps = if (ratio - rounded).abs() < 1e-6 {
        rounded
    } else {
        ratio.floor()
    } as u64;
    (0..=steps).map(move |k| lo + k as f64 * step)
}

/// One evaluated grid point.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub threshold: u32,
    pub tx_prob: f64,
    pub mean_rate: f64,
    pub temporal_variance: f64,
    pub aoi_approx: f64,
    pub converged: bool,
}

/// A grid point whose analysis failed.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkippedPoint {
    pub threshold: u32,
    pub tx_prob: f64,
    pub reason: String,
}

/// Outcome of a grid search.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best_params: AgeThresholdParams,
    pub best_solution: MeanFieldSolution,
    /// Every successfully evaluated grid point, in grid order
    /// (`H` major, `p` minor).
    pub surface: Vec<SurfacePoint>,
    /// Every failed grid point, with the failure reason.
    pub skipped: Vec<SkippedPoint>,
}

/// `(aoi, H, p)` lexicographic "is strictly better" comparison used for the
/// argmin: lower AoI wins, ties go to the smaller threshold, then the
/// smaller transmission probability.
fn better(a: (f64, u32, f64), b: (f64, u32, f64)) -> bool {
    if a.0 != b.0 {
        return a.0 < b.0;
    }
    if a.1 != b.1 {
        return a.1 < b.1;
    }
    a.2 < b.2
}

/// Optional observer called after each grid point completes, with
/// `(completed, total)` counts. Used for progress reporting; must be cheap
/// and thread-safe.
pub type ProgressFn<'a> = &'a (dyn Fn(usize, usize) + Sync);

/// Grid search over any protocol family parameterized by an integer
/// threshold and a real probability. `build` maps a grid coordinate to the
/// protocol it denotes; the shipped family is age-threshold ALOHA
/// ([`optimize_age_threshold`]).
pub fn optimize_grid<F>(
    grid: &GridSpec,
    settings: &AnalysisSettings,
    build: F,
    progress: Option<ProgressFn>,
) -> Result<GridSearchResult>
where
    F: Fn(u32, f64) -> Result<ProtocolSpec> + Sync,
{
    grid.validate()?;
    settings.validate()?;

    let p_values = grid.p_values();
    let mut points = Vec::with_capacity(
        (grid.h_range.1 - grid.h_range.0 + 1) as usize * p_values.len(),
    );
    for h in grid.h_range.0..=grid.h_range.1 {
        for &p in &p_values {
            points.push((h, p));
        }
    }
    let total = points.len();
    let done = std::sync::atomic::AtomicUsize::new(0);

    // Parallel evaluation; `collect` keeps grid order, so the result is
    // identical to a serial scan.
    let evaluated: Vec<std::result::Result<SurfacePoint, SkippedPoint>> = points
        .par_iter()
        .map(|&(h, p)| {
            let out = match build(h, p).and_then(|spec| analyze(&spec, settings)) {
                Ok(sol) => Ok(SurfacePoint {
                    threshold: h,
                    tx_prob: p,
                    mean_rate: sol.mean_rate,
                    temporal_variance: sol.temporal_variance.unwrap_or(f64::NAN),
                    aoi_approx: sol.aoi_approx.unwrap_or(f64::NAN),
                    converged: sol.converged,
                }),
                Err(e) => Err(SkippedPoint {
                    threshold: h,
                    tx_prob: p,
                    reason: e.to_string(),
                }),
            };
            if let Some(cb) = progress {
                let k = done.fetch_add(1, std::sync::atomic::Ordering::Relaxed) + 1;
                cb(k, total);
            }
            out
        })
        .collect();

    let mut surface = Vec::new();
    let mut skipped = Vec::new();
    for item in evaluated {
        match item {
            Ok(sp) => surface.push(sp),
            Err(sk) => skipped.push(sk),
        }
    }

    let mut best: Option<(f64, u32, f64)> = None;
    for sp in &surface {
        if !sp.converged || sp.aoi_approx.is_nan() {
            continue;
        }
        let cand = (sp.aoi_approx, sp.threshold, sp.tx_prob);
        if best.map_or(true, |b| better(cand, b)) {
            best = Some(cand);
        }
    }

    let Some((_, h, p)) = best else {
        return Err(Error::EmptyResult(format!(
            "all {} grid points failed analysis",
            skipped.len()
        )));
    };

    let best_solution = analyze(&build(h, p)?, settings)?;
    Ok(GridSearchResult {
        best_params: AgeThresholdParams {
            threshold: h,
            tx_prob: p,
        },
        best_solution,
        surface,
        skipped,
    })
}

/// Grid search over the age-threshold ALOHA family for `num_users` users.
pub fn optimize_age_threshold(
    num_users: u32,
    grid: &GridSpec,
    settings: &AnalysisSettings,
) -> Result<GridSearchResult> {
    optimize_age_threshold_with_progress(num_users, grid, settings, None)
}

/// [`optimize_age_threshold`] with a progress observer.
pub fn optimize_age_threshold_with_progress(
    num_users: u32,
    grid: &GridSpec,
    settings: &AnalysisSettings,
    progress: Option<ProgressFn>,
) -> Result<GridSearchResult> {
    if num_users < 2 {
        return Err(Error::InvalidParameter(
            "optimization requires at least 2 users (no contention at N = 1)".into(),
        ));
    }
    let mut settings = *settings;
    settings.num_users = num_users;
    optimize_grid(
        grid,
        &settings,
        |h, p| {
            build_age_threshold_aloha(&AgeThresholdParams {
                threshold: h,
                tx_prob: p,
            })
        },
        progress,
    )
}

/// Published closed-form parameter rules used as baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReferenceKind {
    /// `H = round(2.2N)`, `p = 4.69/N`.
    Lbop,
    /// `H = round(2.17N)`, `p = 4.43/N`.
    Spgp,
}

/// Reference age-threshold parameters for `num_users` users.
pub fn reference_params(kind: ReferenceKind, num_users: u32) -> Result<AgeThresholdParams> {
    let (h_factor, eps) = match kind {
        ReferenceKind::Lbop => (2.2, 4.69),
        ReferenceKind::Spgp => (2.17, 4.43),
    };
    let n = f64::from(num_users);
    let p = eps / n;
    if p > 1.0 {
        return Err(Error::InvalidParameter(format!(
            "{kind:?} rule gives p = {p} > 1 for {num_users} users; needs at least 5 users"
        )));
    }
    let params = AgeThresholdParams {
        threshold: (h_factor * n).round() as u32,
        tx_prob: p,
    };
    params.validate()?;
    Ok(params)
}

/// One point of an ε-sweep. Failed points keep their coordinates and carry
/// the failure reason, so a sweep renders as a curve with gaps rather than
/// aborting.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpsilonPoint {
    pub epsilon: f64,
    pub tx_prob: f64,
    pub mean_rate: Option<f64>,
    pub temporal_variance: Option<f64>,
    pub aoi_approx: Option<f64>,
    pub error: Option<String>,
}

/// Sweeps the normalized transmission scale ε, evaluating the analysis at
/// `p = ε/N` with the threshold held fixed. Every ε in the range must map
/// into `p ∈ (0, 1]`.
pub fn sweep_epsilon(
    num_users: u32,
    threshold: u32,
    eps_range: (f64, f64),
    eps_step: f64,
    settings: &AnalysisSettings,
) -> Result<Vec<EpsilonPoint>> {
    if num_users < 1 {
        return Err(Error::InvalidParameter("num_users must be at least 1".into()));
    }
    if !(eps_step > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "eps_step must be positive, got {eps_step}"
        )));
    }
    let n = f64::from(num_users);
    let (lo, hi) = eps_range;
    if !(lo > 0.0 && lo <= hi) {
        return Err(Error::InvalidParameter(format!(
            "eps_range must be a nonempty positive range, got {eps_range:?}"
        )));
    }
    if hi / n > 1.0 + 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "eps_range maps to p = {} > 1 at {num_users} users",
            hi / n
        )));
    }
    let mut settings = *settings;
    settings.num_users = num_users;

    let eps_values: Vec<f64> = step_values(lo, hi, eps_step).collect();
    let points = eps_values
        .par_iter()
        .map(|&eps| {
            let p = (eps / n).min(1.0);
            let outcome = build_age_threshold_aloha(&AgeThresholdParams {
                threshold,
                tx_prob: p,
            })
            .and_then(|spec| analyze(&spec, &settings));
            match outcome {
                Ok(sol) => EpsilonPoint {
                    epsilon: eps,
                    tx_prob: p,
                    mean_rate: Some(sol.mean_rate),
                    temporal_variance: sol.temporal_variance,
                    aoi_approx: sol.aoi_approx,
                    error: None,
                },
                Err(e) => EpsilonPoint {
                    epsilon: eps,
                    tx_prob: p,
                    mean_rate: None,
                    temporal_variance: None,
                    aoi_approx: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();
    Ok(points)
}
