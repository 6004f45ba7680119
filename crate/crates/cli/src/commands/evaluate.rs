use anyhow::{bail, Result};
use jointcast::dynamics::Trajectory;
use jointcast::eval::{climatological_mae, histogram_compare, mae_curve, HistSource, MaeReport};
use jointcast::rng::{stream, Stage};
use jointcast::transport::exact_w2_1d;

use crate::commands::forecast::{read_runs, RunSpec};
use crate::config::{ConfigError, RunConfig};
use crate::layout::{create, Layout, Summary};

/// The true continuation of a run over `horizon` steps.
pub fn reference(traj: &Trajectory, spec: RunSpec, horizon: usize) -> jointcast::Result<Trajectory> {
    traj.slice(spec.start + 1, spec.start + 1 + horizon)
}

/// Forecasts and matching references of every run.
pub fn load_pairs(layout: &Layout, traj: &Trajectory, runs: &[RunSpec]) -> Result<(Vec<Trajectory>, Vec<Trajectory>)> {
    let mut forecasts = Vec::with_capacity(runs.len());
    let mut references = Vec::with_capacity(runs.len());
    for (i, spec) in runs.iter().enumerate() {
        let f = Trajectory::load(layout.run_forecast(i))?;
        if f.dim() != traj.dim() {
            bail!(ConfigError::Invalid(format!("run {i} has dimension {}, trajectory {}", f.dim(), traj.dim())));
        }
        references.push(reference(traj, *spec, f.len())?);
        forecasts.push(f);
    }
    Ok((forecasts, references))
}

/// Component `c` of every state of every trajectory.
fn pooled(trajs: &[&Trajectory], c: usize) -> Vec<f64> {
    trajs.iter().flat_map(|t| t.states().iter().skip(c).step_by(t.dim()).copied()).collect()
}

fn std_dev(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// `n` empirical quantiles of `v` at levels `(i + ½)/n`.
pub fn quantiles(v: &[f64], n: usize) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = sorted.len();
    (0..n).map(|i| sorted[(((2 * i + 1) * m) / (2 * n)).min(m - 1)]).collect()
}

/// Per-component `W₂` between pooled forecast values and reference values,
/// with the reference standard deviation. The reference is resampled to
/// the forecast sample size through its quantile function.
pub fn distribution_gap(forecasts: &[&Trajectory], reference: &Trajectory) -> jointcast::Result<Vec<(f64, f64)>> {
    (0..reference.dim())
        .map(|c| {
            let r = pooled(&[reference], c);
            let f = pooled(forecasts, c);
            Ok((exact_w2_1d(&f, &quantiles(&r, f.len()))?, std_dev(&r)))
        })
        .collect()
}

pub fn run(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let traj = Trajectory::load(layout.trajectory())?;
    let runs = read_runs(layout)?;
    if runs.is_empty() {
        bail!(ConfigError::Invalid("no forecast runs to evaluate".into()));
    }
    let (forecasts, references) = load_pairs(layout, &traj, &runs)?;
    let dir = layout.prepare("evaluate")?;
    let mut s = Summary::new();
    s.put("runs", runs.len()).put("seed", cfg.seed());

    let test = traj.slice(cfg.train_end.min(traj.len() - 1), traj.len())?;
    let train = traj.slice(0, cfg.train_end.clamp(1, traj.len()))?;
    let mut rng = stream(cfg.seed(), Stage::Climatology, 0);
    let clim = climatological_mae(&test, cfg.climatology_pairs, &mut rng)?;
    let clim_mean = clim.iter().sum::<f64>() / clim.len() as f64;
    s.put("clim_mae", clim_mean);

    let horizon = forecasts[0].len();
    let max_abs = forecasts.iter().flat_map(|f| f.states()).fold(0.0f64, |m, v| m.max(v.abs()));
    s.put("horizon", horizon).put("max_abs_forecast", max_abs);
    if horizon > 0 {
        let mae: MaeReport = mae_curve(&forecasts, &references)?;
        mae.write_csv(create(&dir.join("mae.csv"))?)?;
        for &lead in &cfg.lead_steps {
            if (1..=horizon).contains(&lead) {
                s.put(format!("mae_step{lead}"), mae.mean_curve[lead - 1]);
                s.put(format!("mae_step{lead}_over_clim"), mae.mean_curve[lead - 1] / clim_mean);
            }
        }

        let all: Vec<&Trajectory> = forecasts.iter().collect();
        let sources = [
            HistSource { label: "reference".into(), trajectories: vec![&test] },
            HistSource { label: "train".into(), trajectories: vec![&train] },
            HistSource { label: "forecast".into(), trajectories: all.clone() },
        ];
        let hist = histogram_compare(&sources, cfg.bins, cfg.tail_fraction, cfg.hist_mode())?;
        hist.write_csv(create(&dir.join("hist.csv"))?)?;
        hist.write_tails_csv(create(&dir.join("tails.csv"))?)?;

        let gaps = distribution_gap(&all, &test)?;
        let mut worst = 0.0f64;
        for (c, (w2, sd)) in gaps.iter().enumerate() {
            if traj.dim() <= 16 {
                s.put(format!("w2_c{c}"), w2).put(format!("ref_std_c{c}"), sd);
            }
            worst = worst.max(w2 / sd);
        }
        s.put("w2_over_std_max", worst);
    }
    for (c, v) in clim.iter().enumerate().filter(|_| traj.dim() <= 16) {
        s.put(format!("clim_mae_c{c}"), v);
    }
    s.write(&layout.summary("evaluate"))?;
    eprintln!("evaluate: {} runs, climatological MAE {clim_mean:.4}, reports in {}", runs.len(), dir.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantiles_of_a_ramp() {
        let v: Vec<f64> = (0..100).rev().map(f64::from).collect();
        assert_eq!(quantiles(&v, 4), vec![12.0, 37.0, 62.0, 87.0]);
        assert_eq!(quantiles(&v, 100), (0..100).map(f64::from).collect::<Vec<_>>());
    }

    #[test]
    fn gap_vanishes_for_the_reference_itself() {
        let r = Trajectory::new((0..300).map(|i| ((i * 37) % 101) as f64).collect(), 3, 0.1, 0.0, "t").unwrap();
        for (w2, sd) in distribution_gap(&[&r], &r).unwrap() {
            assert_eq!(w2, 0.0);
            assert!(sd > 0.0);
        }
    }
}
