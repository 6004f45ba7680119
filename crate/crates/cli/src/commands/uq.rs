use std::fs::File;
use std::io::{BufReader, Write};

use anyhow::{bail, Context, Result};
use jointcast::dynamics::Trajectory;
use jointcast::eval::{ensemble_mean_regression, regress_series, write_regressions_csv, RegressionReport, RegressorSeries};
use jointcast::inference::{read_ensembles_csv, ForecastResult, History};
use jointcast::uq::{compute_uq_series, UqSeries};

use crate::commands::evaluate::reference;
use crate::commands::forecast::{read_runs, RunSpec};
use crate::config::{ConfigError, RunConfig};
use crate::layout::{create, Layout, Summary};
use crate::workers::parallel_map;

/// Refuse sources without a joint ensemble; conditional joint models need an explicit opt-in.
pub fn check_source(source: &str, allow_conditional: bool) -> Result<(), ConfigError> {
    match source {
        "model:baseline-cond" => Err(ConfigError::Invalid(
            "the baseline conditional model produces no joint ensemble; uncertainty metrics need a joint model".into(),
        )),
        "model:cond-joint" if !allow_conditional => Err(ConfigError::Invalid(
            "uncertainty metrics default to the unconditional joint model; set uq.allow_conditional = true to analyse a conditional joint run".into(),
        )),
        _ => Ok(()),
    }
}

/// Per-step MAE averaged over components.
pub fn step_mae(forecast: &Trajectory, truth: &Trajectory) -> Vec<f64> {
    let d = forecast.dim() as f64;
    (0..forecast.len())
        .map(|t| forecast.state(t).iter().zip(truth.state(t)).map(|(a, b)| (a - b).abs()).sum::<f64>() / d)
        .collect()
}

/// Rebuild a forecast run from its files.
pub fn load_result(layout: &Layout, traj: &Trajectory, run: usize, spec: RunSpec, history_rows: usize) -> Result<ForecastResult> {
    let forecast = Trajectory::load(layout.run_forecast(run))?;
    let path = layout.run_ensembles(run);
    let file = File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    let ensembles = read_ensembles_csv(BufReader::new(file), traj.dim())?;
    if ensembles.len() != forecast.len() {
        bail!(jointcast::Error::Format(format!("run {run}: {} ensembles for {} forecast steps", ensembles.len(), forecast.len())));
    }
    Ok(ForecastResult {
        match_distances: ensembles.iter().map(|e| e.distances[0]).collect(),
        forecast,
        ensembles,
        mode: jointcast::inference::ForecastMode::Sieve,
        resample: false,
        cloud_draws: 0,
        initial_history: History::from_trajectory(traj, spec.start, history_rows)?,
    })
}

/// Largest `|r[t] − (r[t−1] + s[t])|` with `r[−1] = 0`. A running sum
/// evaluated in order gives exactly zero.
pub fn recon_defect(uq: &UqSeries) -> f64 {
    let mut prev = 0.0;
    let mut worst = 0.0f64;
    for (r, s) in uq.wd_recon.iter().zip(&uq.wd_signed) {
        worst = worst.max((r - (prev + s)).abs());
        prev = *r;
    }
    worst
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

pub fn run(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let fsum = Summary::read(&layout.summary("forecast")).context("reading the forecast summary")?;
    check_source(fsum.get("source").unwrap_or(""), cfg.allow_conditional)?;
    if fsum.get("ensembles_saved") != Some("true") {
        bail!(ConfigError::Invalid("the forecast run saved no ensembles (forecast.save_ensembles = false)".into()));
    }
    let history_rows: usize = fsum.get("history_rows").and_then(|v| v.parse().ok()).unwrap_or(1);
    let traj = Trajectory::load(layout.trajectory())?;
    let runs = read_runs(layout)?;
    let uq_cfg = cfg.uq_config();
    let per_run = parallel_map(runs.len(), cfg.threads(), |i| -> Result<(UqSeries, Vec<f64>)> {
        let res = load_result(layout, &traj, i, runs[i], history_rows)?;
        let uq = compute_uq_series(&res, &uq_cfg).with_context(|| format!("uncertainty metrics of run {i}"))?;
        let truth = reference(&traj, runs[i], res.forecast.len())?;
        Ok((uq, step_mae(&res.forecast, &truth)))
    })?;

    let dir = layout.prepare("uq")?;
    let mut reports: Vec<(String, RegressionReport)> = Vec::new();
    let mut failures = 0;
    let (mut defect, mut ac_lo, mut ac_hi, mut flagged) = (0.0f64, f64::INFINITY, f64::NEG_INFINITY, 0);
    for (i, (uq, mae)) in per_run.iter().enumerate() {
        uq.write_csv(create(&dir.join(format!("run{i:05}.csv")))?, traj.dim() <= 16)?;
        defect = defect.max(recon_defect(uq));
        for v in uq.ac.as_slice() {
            ac_lo = ac_lo.min(*v);
            ac_hi = ac_hi.max(*v);
        }
        flagged += uq.ac_flagged_steps;
        for scheme in cfg.cv_schemes() {
            match regress_series(&RegressorSeries::from(uq), mae, scheme) {
                Ok(r) => reports.push((format!("run{i:05}"), r)),
                Err(e) => {
                    failures += 1;
                    eprintln!("uq: run {i} {scheme} regression skipped: {e}");
                }
            }
        }
    }
    if cfg.realizations > 1 {
        let series: Vec<(RegressorSeries, Vec<f64>)> = per_run.iter().map(|(u, m)| (RegressorSeries::from(u), m.clone())).collect();
        for scheme in cfg.cv_schemes() {
            for (g, r) in ensemble_mean_regression(&series, cfg.realizations, scheme)?.into_iter().enumerate() {
                reports.push((format!("ic{g:05}_mean"), r));
            }
        }
    }
    write_regressions_csv(create(&dir.join("regressions.csv"))?, &reports)?;
    write_mean_curves(&dir.join("mean.csv"), &per_run)?;

    let mut s = Summary::new();
    s.put("runs", runs.len())
        .put("regressions", reports.len())
        .put("regression_failures", failures)
        .put("wd_recon_defect_max", defect)
        .put("ac_min", ac_lo)
        .put("ac_max", ac_hi)
        .put("ac_flagged_steps", flagged)
        .put("seed", cfg.seed());
    for scheme in cfg.cv_schemes() {
        let of = |f: &dyn Fn(&RegressionReport) -> f64| {
            median(reports.iter().filter(|(n, r)| r.scheme == scheme && n.starts_with("run")).map(|(_, r)| f(r)).collect())
        };
        s.put(format!("median_rho_sigma_{scheme}"), of(&|r| r.rho_single[0]))
            .put(format!("median_rho_ac_{scheme}"), of(&|r| r.rho_single[1]))
            .put(format!("median_rho_wd_{scheme}"), of(&|r| r.rho_single[2]))
            .put(format!("median_rho_multiple_{scheme}"), of(&|r| r.rho_multiple));
    }
    s.write(&layout.summary("uq"))?;
    eprintln!("uq: {} runs, {} regressions, outputs in {}", runs.len(), reports.len(), dir.display());
    Ok(())
}

/// Step-wise means over runs of the scalar metrics and the MAE.
fn write_mean_curves(path: &std::path::Path, per_run: &[(UqSeries, Vec<f64>)]) -> Result<()> {
    let mut out = create(path)?;
    writeln!(out, "step,t,sigma_mean,ac_mean,wd,wd_signed,wd_recon,mae")?;
    let Some((first, _)) = per_run.first() else {
        return Ok(out.flush()?);
    };
    let n = per_run.len() as f64;
    let sig: Vec<Vec<f64>> = per_run.iter().map(|(u, _)| u.sigma_mean()).collect();
    let ac: Vec<Vec<f64>> = per_run.iter().map(|(u, _)| u.ac_mean()).collect();
    for t in 0..first.len() {
        let mean = |f: &dyn Fn(usize) -> f64| (0..per_run.len()).map(f).sum::<f64>() / n;
        writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            t + 1,
            first.times[t],
            mean(&|r| sig[r][t]),
            mean(&|r| ac[r][t]),
            mean(&|r| per_run[r].0.wd[t]),
            mean(&|r| per_run[r].0.wd_signed[t]),
            mean(&|r| per_run[r].0.wd_recon[t]),
            mean(&|r| per_run[r].1[t]),
        )?;
    }
    Ok(out.flush()?)
}
