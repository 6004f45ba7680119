use anyhow::{bail, Result};
use jointcast::dynamics::Trajectory;
use jointcast::rng::{stream, Stage};
use jointcast::windows::{build_windows, WindowSet};

use crate::config::RunConfig;
use crate::layout::{Layout, Summary};

/// Windows drawn from states `0..train_end` only.
pub fn make_windows(cfg: &RunConfig, traj: &Trajectory) -> Result<WindowSet> {
    if cfg.train_end >= traj.len() {
        bail!(crate::ConfigError::Invalid(format!(
            "data.train_end = {} leaves no test states in a trajectory of {} states",
            cfg.train_end,
            traj.len()
        )));
    }
    let range = (traj.time(0), traj.time(cfg.train_end));
    let mut rng = stream(cfg.seed(), Stage::Windows, 0);
    Ok(build_windows(traj, cfg.kind.window_len(), cfg.windows, range, cfg.sampling, &mut rng)?)
}

pub fn run(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let traj = Trajectory::load(layout.trajectory())?;
    if traj.dim() != cfg.dim() {
        bail!(crate::ConfigError::Invalid(format!("trajectory has dimension {}, config expects {}", traj.dim(), cfg.dim())));
    }
    let ws = make_windows(cfg, &traj)?;
    let last_state = ws.starts.iter().map(|s| s + ws.window_len() - 1).max().unwrap_or(0);
    layout.prepare("dataset")?;
    ws.save(layout.windows())?;
    let mut s = Summary::new();
    s.put("windows", ws.len())
        .put("window_len", ws.window_len())
        .put("dim", ws.dim())
        .put("train_end", cfg.train_end)
        .put("t_train_end", traj.time(cfg.train_end))
        .put("last_train_state", last_state)
        .put("test_states", traj.len() - cfg.train_end)
        .put("seed", cfg.seed());
    s.write(&layout.summary("dataset"))?;
    eprintln!("make-dataset: {} windows of {} states from states [0, {})", ws.len(), ws.window_len(), cfg.train_end);
    Ok(())
}
