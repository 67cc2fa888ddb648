//! Implementations of the six subcommands.

use std::time::Instant;

use aoi_core::{
    analyze as analyze_spec, build_age_threshold_aloha, build_pure_aloha,
    optimize_age_threshold_with_progress, read_spec, reference_params, simulate as run_simulation,
    sweep_epsilon, AgeThresholdParams, AnalysisSettings, ComparisonCell, Error, GridSpec,
    ProtocolSpec, ReferenceKind, Result, SimConfig,
};
use serde::Deserialize;
use serde_json::json;

use crate::output::{fmt_f64, fmt_opt, fmt_prob, svg_line_chart, OutDir};
use crate::{AnalyzeArgs, BenchArgs, CommonArgs, CompareArgs, Family, OptimizeArgs, SimulateArgs, SourceArgs, SweepEpsArgs};

/// Optional overrides applied on top of the default analysis settings.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SettingsFile {
    fp_threshold: Option<f64>,
    fp_max_iters: Option<u64>,
    damping: Option<f64>,
    cov_k_max: Option<u32>,
    cov_term_tol: Option<f64>,
    stat_dist_tol: Option<f64>,
}

fn load_settings(common: &CommonArgs, num_users: u32) -> Result<AnalysisSettings> {
    let mut settings = AnalysisSettings::new(num_users);
    if let Some(path) = &common.settings {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let file: SettingsFile = serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if let Some(v) = file.fp_threshold {
            settings.fp_threshold = v;
        }
        if let Some(v) = file.fp_max_iters {
            settings.fp_max_iters = v;
        }
        if let Some(v) = file.damping {
            settings.damping = v;
        }
        if let Some(v) = file.cov_k_max {
            settings.cov_k_max = v;
        }
        if let Some(v) = file.cov_term_tol {
            settings.cov_term_tol = v;
        }
        if let Some(v) = file.stat_dist_tol {
            settings.stat_dist_tol = v;
        }
    }
    settings.validate()?;
    Ok(settings)
}

fn settings_json(s: &AnalysisSettings) -> serde_json::Value {
    serde_json::to_value(s).expect("settings serialize")
}

fn init_threads(common: &CommonArgs) {
    if let Some(t) = common.threads {
        // Ignore the error if a global pool already exists; thread count
        // never changes results, only timing.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(t).build_global();
    }
}

fn resolve_source(src: &SourceArgs) -> Result<(ProtocolSpec, serde_json::Value)> {
    if let Some(path) = &src.spec {
        if src.threshold.is_some() || src.tx_prob.is_some() {
            return Err(Error::InvalidParameter(
                "--H/--p apply to built-in families, not --spec files".into(),
            ));
        }
        let spec = read_spec(path)?;
        return Ok((spec, json!({ "spec": path.display().to_string() })));
    }
    match src.family {
        Some(Family::AgeThreshold) => {
            let threshold = src.threshold.ok_or_else(|| {
                Error::InvalidParameter("--family age-threshold requires --H".into())
            })?;
            let tx_prob = src.tx_prob.ok_or_else(|| {
                Error::InvalidParameter("--family age-threshold requires --p".into())
            })?;
            let spec = build_age_threshold_aloha(&AgeThresholdParams { threshold, tx_prob })?;
            Ok((
                spec,
                json!({ "family": "age-threshold", "H": threshold, "p": tx_prob }),
            ))
        }
        Some(Family::PureAloha) => {
            if src.threshold.is_some() {
                return Err(Error::InvalidParameter(
                    "--H does not apply to the pure-aloha family".into(),
                ));
            }
            let tx_prob = src.tx_prob.ok_or_else(|| {
                Error::InvalidParameter("--family pure-aloha requires --p".into())
            })?;
            let spec = build_pure_aloha(tx_prob)?;
            Ok((spec, json!({ "family": "pure-aloha", "p": tx_prob })))
        }
        None => Err(Error::InvalidParameter(
            "provide a protocol via --spec FILE or --family {age-threshold|pure-aloha}".into(),
        )),
    }
}

fn quote_csv(s: &str) -> String {
    if s.is_empty() {
        String::new()
    } else {
        format!("\"{}\"", s.replace('"', "\"\""))
    }
}

pub fn analyze(args: AnalyzeArgs) -> Result<()> {
    init_threads(&args.common);
    let (spec, source) = resolve_source(&args.source)?;
    let mut settings = load_settings(&args.common, args.num_users)?;
    if let Some(d) = args.damping {
        settings.damping = d;
        settings.validate()?;
    }

    let mut damping_retry = false;
    let solution = match analyze_spec(&spec, &settings) {
        Ok(sol) => sol,
        Err(Error::NonConvergence { stage, .. })
            if stage == "fixed-point" && settings.damping == 0.0 && args.damping.is_none() =>
        {
            eprintln!("fixed point did not converge undamped; retrying with damping 0.5");
            damping_retry = true;
            let mut damped = settings;
            damped.damping = 0.5;
            analyze_spec(&spec, &damped)?
        }
        Err(e) => return Err(e),
    };

    println!(
        "converged in {} iterations (residual {:.3e})",
        solution.iterations, solution.residual
    );
    println!("mean delivery rate  m   = {}", solution.mean_rate);
    println!(
        "temporal variance   v^2 = {}",
        solution.temporal_variance.unwrap_or(f64::NAN)
    );
    println!(
        "aoi (second order)      = {}",
        solution.aoi_approx.unwrap_or(f64::NAN)
    );

    let mut out = OutDir::create(&args.common.out_dir)?;
    out.write_json(
        "analysis.json",
        "aoi-analysis/v1",
        &json!({
            "num_users": args.num_users,
            "settings": settings_json(&settings),
            "damping_retry": damping_retry,
            "solution": solution,
        }),
    )?;
    let dir = out.path().display().to_string();
    out.finish(
        "analyze",
        None,
        json!({
            "source": source,
            "num_users": args.num_users,
            "settings": settings_json(&settings),
            "damping": args.damping,
            "damping_retry": damping_retry,
        }),
    )?;
    println!("wrote analysis.json + manifest.json under {dir}");
    Ok(())
}

pub fn optimize(args: OptimizeArgs) -> Result<()> {
    init_threads(&args.common);
    let settings = load_settings(&args.common, args.num_users)?;
    let grid = GridSpec {
        h_range: (args.h_min, args.h_max.unwrap_or(3 * args.num_users)),
        p_range: (args.p_min.unwrap_or(args.p_step), args.p_max),
        p_step: args.p_step,
    };
    grid.validate()?;

    let t0 = Instant::now();
    let result = optimize_age_threshold_with_progress(
        args.num_users,
        &grid,
        &settings,
        Some(&|done, total| {
            let tick = (total / 20).max(1);
            if done % tick == 0 || done == total {
                eprintln!("progress: {done}/{total} grid points");
            }
        }),
    )?;
    let elapsed = t0.elapsed().as_secs_f64();

    let best = &result.best_params;
    let best_aoi = result.best_solution.aoi_approx.unwrap_or(f64::NAN);
    println!(
        "best: H={} p={} -> aoi={best_aoi} (m={}, v^2={})",
        best.threshold,
        fmt_prob(best.tx_prob),
        result.best_solution.mean_rate,
        result.best_solution.temporal_variance.unwrap_or(f64::NAN),
    );
    println!(
        "evaluated {} points ({} skipped) in {elapsed:.1}s",
        result.surface.len() + result.skipped.len(),
        result.skipped.len()
    );

    let mut out = OutDir::create(&args.common.out_dir)?;
    let rows: Vec<String> = result
        .surface
        .iter()
        .map(|sp| {
            format!(
                "{},{},{},{},{},{}",
                sp.threshold,
                fmt_prob(sp.tx_prob),
                fmt_f64(sp.mean_rate),
                fmt_f64(sp.temporal_variance),
                fmt_f64(sp.aoi_approx),
                sp.converged
            )
        })
        .collect();
    out.write_csv(
        "surface.csv",
        "surface/v1",
        "H,p,m,v2,aoi_approx,converged",
        &rows,
    )?;
    out.write_json(
        "best.json",
        "aoi-optimize/v1",
        &json!({
            "num_users": args.num_users,
            "grid": grid,
            "settings": settings_json(&settings),
            "best_params": result.best_params,
            "best_solution": result.best_solution,
            "skipped": result.skipped,
        }),
    )?;
    out.finish(
        "optimize",
        None,
        json!({
            "num_users": args.num_users,
            "grid": grid,
            "settings": settings_json(&settings),
        }),
    )?;
    Ok(())
}

pub fn simulate(args: SimulateArgs) -> Result<()> {
    init_threads(&args.common);
    let (spec, source) = resolve_source(&args.source)?;
    let config = SimConfig {
        num_users: args.num_users,
        horizon: args.horizon,
        num_runs: args.runs,
        seed: args.seed,
    };
    let result = run_simulation(&spec, &config)?;

    println!(
        "mean AoI = {} (95% interval [{}, {}])",
        result.mean_aoi, result.aoi_p95_interval.0, result.aoi_p95_interval.1
    );
    println!("mean delivery rate = {}", result.mean_rate);
    println!(
        "{} runs x {} slots in {:.2}s",
        config.num_runs, config.horizon, result.wall_time_secs
    );

    let mut out = OutDir::create(&args.common.out_dir)?;
    let rows: Vec<String> = result
        .per_run
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{}",
                r.run,
                fmt_f64(r.mean_aoi),
                fmt_f64(r.empirical_rate),
                fmt_opt(r.empirical_variance)
            )
        })
        .collect();
    out.write_csv(
        "runs.csv",
        "runs/v1",
        "run,mean_aoi,empirical_rate,empirical_variance",
        &rows,
    )?;
    out.write_json("result.json", "aoi-simulate/v1", &result)?;
    out.finish(
        "simulate",
        Some(args.seed),
        json!({
            "source": source,
            "config": config,
        }),
    )?;
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum PolicyLabel {
    Soma,
    Lbop,
    Spgp,
}

impl PolicyLabel {
    fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "SOMA" => Ok(Self::Soma),
            "LBOP" => Ok(Self::Lbop),
            "SPGP" => Ok(Self::Spgp),
            other => Err(Error::InvalidParameter(format!(
                "unknown policy label '{other}' (expected SOMA, LBOP or SPGP)"
            ))),
        }
    }

    fn name(self) -> &'static str {
        match self {
            Self::Soma => "SOMA",
            Self::Lbop => "LBOP",
            Self::Spgp => "SPGP",
        }
    }
}

pub fn compare(args: CompareArgs) -> Result<()> {
    init_threads(&args.common);
    let labels: Vec<PolicyLabel> = args
        .labels
        .iter()
        .map(|s| PolicyLabel::parse(s))
        .collect::<Result<_>>()?;
    let (runs, horizon) = if args.paper_scale {
        (args.runs.unwrap_or(100), args.horizon.unwrap_or(100_000))
    } else {
        (args.runs.unwrap_or(20), args.horizon.unwrap_or(20_000))
    };

    let mut cells: Vec<ComparisonCell> = Vec::new();
    let mut soma_params_used: Vec<serde_json::Value> = Vec::new();

    for &n in &args.n_list {
        let config = SimConfig {
            num_users: n,
            horizon,
            num_runs: runs,
            seed: args.seed,
        };
        for &label in &labels {
            let params: Result<AgeThresholdParams> = match label {
                PolicyLabel::Lbop => reference_params(ReferenceKind::Lbop, n),
                PolicyLabel::Spgp => reference_params(ReferenceKind::Spgp, n),
                PolicyLabel::Soma => match (args.soma_h, args.soma_p) {
                    (Some(h), Some(p)) => {
                        let params = AgeThresholdParams {
                            threshold: h,
                            tx_prob: p,
                        };
                        params.validate().map(|()| params)
                    }
                    _ => {
                        let settings = load_settings(&args.common, n)?;
                        let grid = GridSpec {
                            h_range: (1, 3 * n),
                            p_range: (args.p_step, 1.0),
                            p_step: args.p_step,
                        };
                        eprintln!(
                            "optimizing SOMA parameters for N={n} (grid {}x{} points)...",
                            grid.h_range.1,
                            ((grid.p_range.1 - grid.p_range.0) / grid.p_step).round() as u64 + 1
                        );
                        optimize_age_threshold_with_progress(
                            n,
                            &grid,
                            &settings,
                            Some(&|done, total| {
                                let tick = (total / 10).max(1);
                                if done % tick == 0 || done == total {
                                    eprintln!("  SOMA N={n}: {done}/{total}");
                                }
                            }),
                        )
                        .map(|r| r.best_params)
                    }
                },
            };
            match params {
                Ok(p) => {
                    if label == PolicyLabel::Soma {
                        soma_params_used
                            .push(json!({ "N": n, "H": p.threshold, "p": p.tx_prob }));
                    }
                    let entry = vec![(label.name().to_string(), p)];
                    let mut row = aoi_core::compare_policies(&entry, &[n], &config)?;
                    cells.append(&mut row);
                }
                Err(e) => cells.push(ComparisonCell {
                    label: label.name().to_string(),
                    num_users: n,
                    threshold: 0,
                    tx_prob: 0.0,
                    mean_aoi: None,
                    p2_5: None,
                    p97_5: None,
                    error: Some(e.to_string()),
                }),
            }
        }
    }

    println!("label,N,mean_aoi,p2.5,p97.5");
    for c in &cells {
        println!(
            "{},{},{},{},{}",
            c.label,
            c.num_users,
            fmt_opt(c.mean_aoi),
            fmt_opt(c.p2_5),
            fmt_opt(c.p97_5)
        );
    }

    let mut out = OutDir::create(&args.common.out_dir)?;
    let rows: Vec<String> = cells
        .iter()
        .map(|c| {
            format!(
                "{},{},{},{},{}",
                c.label,
                c.num_users,
                fmt_opt(c.mean_aoi),
                fmt_opt(c.p2_5),
                fmt_opt(c.p97_5)
            )
        })
        .collect();
    out.write_csv(
        "comparison.csv",
        "comparison/v1",
        "label,N,mean_aoi,p2.5,p97.5",
        &rows,
    )?;
    out.write_json("comparison.json", "aoi-comparison/v1", &cells)?;

    if args.svg {
        let series: Vec<(String, Vec<(f64, f64)>)> = labels
            .iter()
            .map(|&l| {
                let pts = cells
                    .iter()
                    .filter(|c| c.label == l.name())
                    .filter_map(|c| c.mean_aoi.map(|a| (f64::from(c.num_users), a)))
                    .collect();
                (l.name().to_string(), pts)
            })
            .collect();
        out.write_svg(
            "comparison.svg",
            &svg_line_chart("Simulated mean AoI by network size", "N", "mean AoI", &series),
        )?;
    }

    out.finish(
        "compare",
        Some(args.seed),
        json!({
            "n_list": args.n_list,
            "labels": labels.iter().map(|l| l.name()).collect::<Vec<_>>(),
            "runs": runs,
            "horizon": horizon,
            "paper_scale": args.paper_scale,
            "p_step": args.p_step,
            "soma_params": soma_params_used,
        }),
    )?;
    Ok(())
}

pub fn sweep_eps(args: SweepEpsArgs) -> Result<()> {
    init_threads(&args.common);
    let settings = load_settings(&args.common, args.num_users)?;
    let threshold = args
        .threshold
        .unwrap_or_else(|| (2.2 * f64::from(args.num_users)).round() as u32);

    let parts: Vec<&str> = args.eps.split(':').collect();
    let [lo, hi, step] = parts.as_slice() else {
        return Err(Error::InvalidParameter(format!(
            "--eps expects lo:hi:step, got '{}'",
            args.eps
        )));
    };
    let parse = |s: &str| -> Result<f64> {
        s.parse().map_err(|_| {
            Error::InvalidParameter(format!("invalid number '{s}' in --eps range"))
        })
    };
    let (lo, hi, step) = (parse(lo)?, parse(hi)?, parse(step)?);

    let points = sweep_epsilon(args.num_users, threshold, (lo, hi), step, &settings)?;

    let argmin = points
        .iter()
        .filter_map(|pt| pt.aoi_approx.map(|a| (pt.epsilon, a)))
        .min_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    match argmin {
        Some((eps, aoi)) => println!(
            "{} points; argmin eps = {eps} (p = {}) with aoi = {aoi}",
            points.len(),
            fmt_prob(eps / f64::from(args.num_users))
        ),
        None => println!("{} points; no point converged", points.len()),
    }

    let mut out = OutDir::create(&args.common.out_dir)?;
    let rows: Vec<String> = points
        .iter()
        .map(|pt| {
            format!(
                "{},{},{},{},{},{}",
                fmt_prob(pt.epsilon),
                fmt_prob(pt.tx_prob),
                fmt_opt(pt.mean_rate),
                fmt_opt(pt.temporal_variance),
                fmt_opt(pt.aoi_approx),
                quote_csv(pt.error.as_deref().unwrap_or(""))
            )
        })
        .collect();
    out.write_csv(
        "sweep.csv",
        "sweep/v1",
        "epsilon,p,m,v2,aoi_approx,error",
        &rows,
    )?;
    out.write_json("sweep.json", "aoi-sweep/v1", &points)?;

    if args.svg {
        let series = vec![(
            format!("H={threshold}, N={}", args.num_users),
            points
                .iter()
                .filter_map(|pt| pt.aoi_approx.map(|a| (pt.epsilon, a)))
                .collect(),
        )];
        out.write_svg(
            "sweep.svg",
            &svg_line_chart("Approximated AoI by epsilon", "epsilon", "aoi", &series),
        )?;
    }

    out.finish(
        "sweep-eps",
        None,
        json!({
            "num_users": args.num_users,
            "threshold": threshold,
            "eps": {"lo": lo, "hi": hi, "step": step},
            "settings": settings_json(&settings),
        }),
    )?;
    Ok(())
}

pub fn bench(args: BenchArgs) -> Result<()> {
    init_threads(&args.common);
    let (slice_runs, slice_horizon) = if args.paper_scale {
        (100u32, 100_000u32)
    } else {
        (2u32, 20_000u32)
    };
    let scale_factor =
        (100.0 * 100_000.0) / (f64::from(slice_runs) * f64::from(slice_horizon));

    struct Row {
        n: u32,
        analysis_secs: f64,
        simulation_secs: f64,
        ratio: f64,
    }
    let mut table = Vec::new();

    for &n in &args.n_list {
        let params = reference_params(ReferenceKind::Lbop, n)?;
        let spec = build_age_threshold_aloha(&params)?;
        let settings = load_settings(&args.common, n)?;

        // Median of three analysis timings.
        let mut times = Vec::with_capacity(3);
        for _ in 0..3 {
            let t = Instant::now();
            analyze_spec(&spec, &settings)?;
            times.push(t.elapsed().as_secs_f64());
        }
        times.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let analysis_secs = times[1];

        let config = SimConfig {
            num_users: n,
            horizon: slice_horizon,
            num_runs: slice_runs,
            seed: args.seed,
        };
        let t = Instant::now();
        run_simulation(&spec, &config)?;
        let simulation_secs = t.elapsed().as_secs_f64() * scale_factor;

        table.push(Row {
            n,
            analysis_secs,
            simulation_secs,
            ratio: simulation_secs / analysis_secs,
        });
    }

    println!("N,analysis_secs,simulation_secs,sim_scale_factor,ratio");
    for r in &table {
        println!(
            "{},{:.6},{:.3},{},{:.0}",
            r.n, r.analysis_secs, r.simulation_secs, scale_factor, r.ratio
        );
    }

    let mut out = OutDir::create(&args.common.out_dir)?;
    let rows: Vec<String> = table
        .iter()
        .map(|r| {
            format!(
                "{},{},{},{},{}",
                r.n,
                fmt_f64(r.analysis_secs),
                fmt_f64(r.simulation_secs),
                fmt_f64(scale_factor),
                fmt_f64(r.ratio)
            )
        })
        .collect();
    out.write_csv(
        "bench.csv",
        "bench/v1",
        "N,analysis_secs,simulation_secs,sim_scale_factor,ratio",
        &rows,
    )?;
    out.write_json(
        "bench.json",
        "aoi-bench/v1",
        &table
            .iter()
            .map(|r| {
                json!({
                    "N": r.n,
                    "analysis_secs": r.analysis_secs,
                    "simulation_secs": r.simulation_secs,
                    "sim_scale_factor": scale_factor,
                    "ratio": r.ratio,
                })
            })
            .collect::<Vec<_>>(),
    )?;
    out.finish(
        "bench",
        Some(args.seed),
        json!({
            "n_list": args.n_list,
            "paper_scale": args.paper_scale,
            "slice_runs": slice_runs,
            "slice_horizon": slice_horizon,
            "sim_scale_factor": scale_factor,
        }),
    )?;
    Ok(())
}
