use anyhow::{Context, Result};
use jointcast::dynamics::{discard_transient, integrate_ks_strided, integrate_lorenz63, ks_initial_condition, KsGrid, Lorenz63Params, Trajectory};

use crate::config::{RunConfig, System};
use crate::layout::{create, Layout, Summary};

pub fn lorenz_params(cfg: &RunConfig) -> Lorenz63Params {
    Lorenz63Params { sigma: cfg.lorenz_sigma, rho: cfg.lorenz_rho, beta: cfg.lorenz_beta }
}

pub fn ks_grid(cfg: &RunConfig) -> jointcast::Result<KsGrid> {
    KsGrid::new(cfg.ks_x_min, cfg.ks_x_max, cfg.ks_n_points)
}

/// `steps + 1` stored states after the transient is dropped.
pub fn simulate(cfg: &RunConfig) -> jointcast::Result<Trajectory> {
    let skip = (cfg.transient / cfg.dt - 1e-9).ceil().max(0.0) as usize;
    let total = cfg.steps + skip;
    let raw = match cfg.system {
        System::Lorenz63 => {
            let ic = [cfg.lorenz_ic[0], cfg.lorenz_ic[1], cfg.lorenz_ic[2]];
            integrate_lorenz63(&ic, &lorenz_params(cfg), cfg.dt, total)?
        }
        System::Ks => {
            let grid = ks_grid(cfg)?;
            let dt_int = cfg.dt / cfg.substeps as f64;
            integrate_ks_strided(&ks_initial_condition(&grid), &grid, dt_int, total, cfg.substeps)?
        }
    };
    if skip == 0 {
        return Ok(raw);
    }
    discard_transient(&raw, skip as f64 * raw.dt)
}

pub fn run(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let traj = simulate(cfg).context("simulation failed")?;
    let dir = layout.prepare("simulate")?;
    traj.save(layout.trajectory())?;
    if cfg.write_csv {
        traj.write_csv(create(&dir.join("trajectory.csv"))?)?;
    }
    let max_abs = traj.states().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let mut s = Summary::new();
    s.put("system", cfg.system.tag())
        .put("states", traj.len())
        .put("dim", traj.dim())
        .put("dt", traj.dt)
        .put("t0", traj.t0)
        .put("max_abs", max_abs)
        .put("seed", cfg.seed());
    s.write(&layout.summary("simulate"))?;
    eprintln!("simulate: {} states of dimension {} written to {}", traj.len(), traj.dim(), layout.trajectory().display());
    Ok(())
}
