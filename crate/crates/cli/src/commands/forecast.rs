use std::io::Write;

use anyhow::{bail, Context, Result};
use jointcast::dynamics::{integrate_ks_strided, Trajectory};
use jointcast::genmodel::VaeModel;
use jointcast::inference::{forecast_latent, forecast_sieve, forecast_sieve_lockstep, CloudSource, ForecastMode, ForecastResult, History, OracleSampler};
use jointcast::rng::{stream, Stage};
use rand::Rng;

use crate::commands::simulate::{ks_grid, lorenz_params};
use crate::config::{ConfigError, RunConfig, System};
use crate::layout::{create, Layout, Summary};
use crate::workers::parallel_map;

/// Where the joint samples come from.
pub enum Source {
    Model(VaeModel),
    Oracle(OracleSampler),
}

impl Source {
    pub fn label(&self) -> String {
        match self {
            Source::Model(m) => format!("model:{}", m.config.kind),
            Source::Oracle(_) => "oracle".into(),
        }
    }

    fn dim_mismatch(&self, d: usize) -> bool {
        match self {
            Source::Model(m) => CloudSource::dim(m) != d,
            Source::Oracle(o) => CloudSource::dim(o) != d,
        }
    }
}

/// Oracle sampler stepping the true dynamics over one stored interval.
pub fn oracle(cfg: &RunConfig) -> jointcast::Result<OracleSampler> {
    let (tail, head) = (cfg.oracle_tail_sigma, cfg.oracle_head_sigma);
    Ok(match cfg.system {
        System::Lorenz63 => OracleSampler::lorenz63(lorenz_params(cfg), cfg.dt, tail, head),
        System::Ks => {
            let grid = ks_grid(cfg)?;
            let (dt_int, sub) = (cfg.dt / cfg.substeps as f64, cfg.substeps);
            OracleSampler::new(grid.n_points, tail, head, move |u: &[f64]| match integrate_ks_strided(u, &grid, dt_int, 1, sub) {
                Ok(t) => t.state(1).to_vec(),
                // a blown-up member can never win the sieve
                Err(_) => vec![f64::MAX; u.len()],
            })
        }
    })
}

/// One forecast run: which initial condition, which realization.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSpec {
    pub ic: usize,
    pub realization: usize,
    /// Trajectory index of the newest history state.
    pub start: usize,
}

/// Initial conditions from the test span, one per equal slot so the
/// forecast segments never overlap.
pub fn select_ics(cfg: &RunConfig, traj_len: usize) -> Result<Vec<usize>, ConfigError> {
    let h = cfg.history_rows();
    let need = h + cfg.horizon;
    let span = traj_len.saturating_sub(cfg.train_end);
    let slot = span / cfg.n_ics;
    if slot < need {
        return Err(ConfigError::Invalid(format!(
            "test span of {span} states cannot hold {} non-overlapping segments of {need} states",
            cfg.n_ics
        )));
    }
    let mut rng = stream(cfg.seed(), Stage::IcSelection, 0);
    Ok((0..cfg.n_ics)
        .map(|i| {
            let lo = cfg.train_end + i * slot + h - 1;
            let hi = cfg.train_end + (i + 1) * slot - 1 - cfg.horizon;
            rng.random_range(lo..=hi)
        })
        .collect())
}

pub fn plan_runs(cfg: &RunConfig, traj_len: usize) -> Result<Vec<RunSpec>, ConfigError> {
    let starts = select_ics(cfg, traj_len)?;
    Ok(starts
        .iter()
        .enumerate()
        .flat_map(|(ic, &start)| (0..cfg.realizations).map(move |realization| RunSpec { ic, realization, start }))
        .collect())
}

pub fn forecast_run(cfg: &RunConfig, source: &Source, traj: &Trajectory, spec: RunSpec, index: usize) -> jointcast::Result<ForecastResult> {
    let history = History::from_trajectory(traj, spec.start, cfg.history_rows())?;
    let mut rng = stream(cfg.seed(), Stage::Forecast, index as u64);
    let sieve = cfg.sieve_config();
    match source {
        Source::Oracle(o) => forecast_sieve(o, &history, cfg.horizon, &sieve, &mut rng),
        Source::Model(m) => match cfg.mode {
            ForecastMode::Sieve => forecast_sieve(m, &history, cfg.horizon, &sieve, &mut rng),
            ForecastMode::Latent => forecast_latent(m, &history, cfg.horizon, &cfg.latent_config(), None, &mut rng),
            ForecastMode::SieveLatent => forecast_latent(m, &history, cfg.horizon, &cfg.latent_config(), Some(&sieve), &mut rng),
        },
    }
}

/// All runs sieved in lockstep against shared clouds drawn from one stream.
pub fn forecast_shared(cfg: &RunConfig, source: &Source, traj: &Trajectory, runs: &[RunSpec]) -> Result<Vec<ForecastResult>> {
    let Source::Model(model) = source else {
        bail!(ConfigError::Invalid("forecast.shared_cloud needs a model source".into()));
    };
    let histories = runs
        .iter()
        .map(|r| History::from_trajectory(traj, r.start, cfg.history_rows()))
        .collect::<jointcast::Result<Vec<_>>>()?;
    let mut rng = stream(cfg.seed(), Stage::Cloud, 0);
    Ok(forecast_sieve_lockstep(model, &histories, cfg.horizon, &cfg.sieve_config(), &mut rng)?)
}

pub fn load_source(cfg: &RunConfig, layout: &Layout) -> Result<Source> {
    if cfg.oracle {
        return Ok(Source::Oracle(oracle(cfg)?));
    }
    let model = VaeModel::load(layout.model()).with_context(|| format!("loading {}", layout.model().display()))?;
    if model.config.kind != cfg.kind || model.config.d != cfg.dim() {
        bail!(ConfigError::Invalid(format!(
            "checkpoint holds a {} model of dimension {}, config expects {} of dimension {}",
            model.config.kind,
            model.config.d,
            cfg.kind,
            cfg.dim()
        )));
    }
    Ok(Source::Model(model))
}

pub fn run(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let traj = Trajectory::load(layout.trajectory())?;
    let runs = plan_runs(cfg, traj.len())?;
    let source = load_source(cfg, layout)?;
    if source.dim_mismatch(traj.dim()) {
        bail!(ConfigError::Invalid(format!("trajectory dimension {} does not match the sampler", traj.dim())));
    }
    let dir = layout.prepare("forecast")?;
    let mut index = create(&layout.runs_index())?;
    writeln!(index, "run,ic,realization,start_index,t_start")?;
    let threads = cfg.threads();
    let (mut draws, mut match_sum, mut max_abs, mut resample) = (0usize, 0.0, 0.0f64, false);
    // compute a batch in parallel, then write it in run order from this thread
    let batch_len = if cfg.shared_cloud { runs.len().max(1) } else { threads.max(1) * 4 };
    for (batch_no, batch) in runs.chunks(batch_len).enumerate() {
        let offset = batch_no * batch_len;
        let results = if cfg.shared_cloud {
            forecast_shared(cfg, &source, &traj, batch)?
        } else {
            parallel_map(batch.len(), threads, |i| forecast_run(cfg, &source, &traj, batch[i], offset + i))?
        };
        for (i, (spec, res)) in batch.iter().zip(results).enumerate() {
            let run = offset + i;
            writeln!(index, "{run},{},{},{},{}", spec.ic, spec.realization, spec.start, traj.time(spec.start))?;
            res.forecast.save(layout.run_forecast(run))?;
            if cfg.save_ensembles {
                let mut out = create(&layout.run_ensembles(run))?;
                res.write_ensembles_csv(&mut out)?;
                out.flush()?;
            }
            // shared clouds are counted once
            if !cfg.shared_cloud || run == 0 {
                draws += res.cloud_draws;
            }
            resample |= res.resample;
            match_sum += res.match_distances.iter().sum::<f64>();
            max_abs = res.forecast.states().iter().fold(max_abs, |m, v| m.max(v.abs()));
        }
        eprintln!("forecast: {} of {} runs done", (offset + batch.len()), runs.len());
    }
    index.flush()?;
    let steps = (runs.len() * cfg.horizon).max(1);
    let mut s = Summary::new();
    s.put("source", source.label())
        .put("mode", cfg.mode)
        .put("runs", runs.len())
        .put("ics", cfg.n_ics)
        .put("realizations", cfg.realizations)
        .put("horizon", cfg.horizon)
        .put("history_rows", cfg.history_rows())
        .put("n_samples", cfg.n_samples)
        .put("k", cfg.k)
        .put("resample", resample)
        .put("shared_cloud", cfg.shared_cloud)
        .put("cloud_draws", draws)
        .put("ensembles_saved", cfg.save_ensembles)
        .put("mean_match_distance", match_sum / steps as f64)
        .put("max_abs", max_abs)
        .put("seed", cfg.seed());
    s.write(&layout.summary("forecast"))?;
    eprintln!("forecast: {} runs of {} steps in {}", runs.len(), cfg.horizon, dir.display());
    Ok(())
}

/// Rows of `runs.csv`.
pub fn read_runs(layout: &Layout) -> Result<Vec<RunSpec>> {
    let text = std::fs::read_to_string(layout.runs_index()).with_context(|| format!("reading {}", layout.runs_index().display()))?;
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            bail!(jointcast::Error::Format(format!("runs index line {}: `{line}`", n + 1)));
        }
        let num = |s: &str| s.parse::<usize>().map_err(|_| jointcast::Error::Format(format!("runs index line {}: `{line}`", n + 1)));
        if num(f[0])? != out.len() {
            bail!(jointcast::Error::Format(format!("runs index line {} out of order", n + 1)));
        }
        out.push(RunSpec { ic: num(f[1])?, realization: num(f[2])?, start: num(f[3])? });
    }
    Ok(out)
}
