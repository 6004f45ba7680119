use std::fs;

use anyhow::{bail, Result};

use crate::config::RunConfig;
use crate::layout::{Layout, Summary};

const STAGES: [&str; 6] = ["simulate", "dataset", "train", "forecast", "evaluate", "uq"];

/// Plot-ready files gathered into `report/`: (source stage, file, column description).
const PLOT_FILES: [(&str, &str, &str); 6] = [
    ("train", "loss.csv", "epoch, mean training loss (ELBO) over the epoch"),
    ("evaluate", "mae.csv", "step, lead_time, mae_mean (over components), mae_{c} per component"),
    ("evaluate", "hist.csv", "channel (component, or 0 in aggregate mode), bin, lo, hi, then one relative-frequency column per source (reference, train, forecast)"),
    ("evaluate", "tails.csv", "channel, lower_lo, lower_hi, upper_lo, upper_hi: tail windows of the reference range"),
    ("uq", "mean.csv", "step, t, then sigma_mean, ac_mean, wd, wd_signed, wd_recon, mae averaged over runs"),
    ("uq", "regressions.csv", "series, scheme, rho per single regressor, rho_multiple, multiple-regression coefficients"),
];

pub fn run(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let mut merged = Summary::new();
    let mut found = 0;
    for stage in STAGES {
        let path = layout.summary(stage);
        if !path.exists() {
            continue;
        }
        found += 1;
        for (k, v) in Summary::read(&path)?.iter() {
            merged.put(format!("{stage}.{k}"), v);
        }
    }
    if found == 0 {
        bail!(crate::ConfigError::Invalid(format!("no stage outputs under {}", layout.root().display())));
    }
    let dir = layout.prepare("report")?;
    merged.write(&dir.join("summary.txt"))?;
    let mut columns = String::from("# plot-ready files and their columns\n");
    for (stage, file, desc) in PLOT_FILES {
        let src = layout.stage(stage).join(file);
        if src.exists() {
            fs::copy(&src, dir.join(file))?;
            columns.push_str(&format!("{file}: {desc}\n"));
        }
    }
    fs::write(dir.join("columns.txt"), columns)?;
    fs::write(dir.join("config.txt"), cfg.to_text())?;
    eprintln!("report: {found} stage summaries merged into {}", dir.display());
    Ok(())
}
