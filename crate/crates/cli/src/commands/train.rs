use std::io::Write;
use std::time::Instant;

use anyhow::{bail, Result};
use jointcast::genmodel::{continue_training, train_observed, TrainReport, VaeModel};
use jointcast::windows::{Normalizer, WindowSet};

use crate::config::RunConfig;
use crate::layout::{create, Layout, Summary};

/// Train on `ws`, reporting each epoch to `progress`.
pub fn fit(cfg: &RunConfig, ws: &WindowSet, mut progress: impl FnMut(usize, f64)) -> jointcast::Result<(VaeModel, TrainReport)> {
    let mc = cfg.model_config();
    let tc = cfg.train_config();
    if cfg.normalize {
        train_observed(ws, mc, &tc, &mut progress)
    } else {
        let model = VaeModel::new(mc, Normalizer::identity(ws.dim()), tc.seed)?;
        continue_training(model, ws, &tc, &mut progress)
    }
}

pub fn run(cfg: &RunConfig, layout: &Layout) -> Result<()> {
    let ws = WindowSet::load(layout.windows())?;
    if ws.window_len() != cfg.kind.window_len() || ws.dim() != cfg.dim() {
        bail!(crate::ConfigError::Invalid(format!(
            "dataset holds {}-state windows of dimension {}, model.kind = {} needs {} states of dimension {}",
            ws.window_len(),
            ws.dim(),
            cfg.kind,
            cfg.kind.window_len(),
            cfg.dim()
        )));
    }
    let started = Instant::now();
    let (model, report) = fit(cfg, &ws, |epoch, loss| {
        eprintln!("train: epoch {:>4} loss {loss:.6} ({:.1}s)", epoch + 1, started.elapsed().as_secs_f64());
    })?;
    let dir = layout.prepare("train")?;
    model.save(layout.model())?;
    let mut out = create(&dir.join("loss.csv"))?;
    writeln!(out, "epoch,loss")?;
    for (i, l) in report.epoch_losses.iter().enumerate() {
        writeln!(out, "{},{l}", i + 1)?;
    }
    out.flush()?;
    let params: usize = model.params.tensors().iter().map(|t| t.len()).sum();
    let mut s = Summary::new();
    s.put("kind", cfg.kind)
        .put("epochs", report.epoch_losses.len())
        .put("steps", report.steps)
        .put("final_loss", model.meta.final_loss)
        .put("parameters", params)
        .put("windows", ws.len())
        .put("seed", cfg.seed());
    s.write(&layout.summary("train"))?;
    eprintln!("train: {} epochs, final loss {}", report.epoch_losses.len(), model.meta.final_loss);
    Ok(())
}
