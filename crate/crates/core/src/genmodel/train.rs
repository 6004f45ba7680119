//! ELBO objective, its reverse-mode gradient and the minibatch Adam loop.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{Adam, ModelConfig, TrainConfig, VaeModel, VaeParams, LOGVAR_MAX, LOGVAR_MIN};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::{stream, Stage};
use crate::windows::{Normalizer, WindowSet};

/// Batch-averaged loss terms; `total = recon + kl_weight · kl`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossParts {
    pub total: f64,
    pub recon: f64,
    pub kl: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    /// Mean minibatch loss of each epoch, weighted by batch size.
    pub epoch_losses: Vec<f64>,
    pub steps: u64,
}

/// Loss and parameter gradients for one batch with fixed reparameterization noise.
///
/// `x` holds normalized output blocks, `cond` the matching conditioning
/// blocks and `noise` the standard-normal draws `ξ` (one row per example).
/// Reconstruction error is summed over components and averaged over the
/// batch; the KL term is averaged over the batch.
pub fn elbo_loss(model: &VaeModel, x: &Matrix, cond: Option<&Matrix>, noise: &Matrix) -> Result<(LossParts, VaeParams)> {
    let b = x.rows();
    let l = model.latent_dim();
    if b == 0 {
        return Err(Error::invalid("elbo_loss needs a non-empty batch"));
    }
    if noise.rows() != b || noise.cols() != l {
        return Err(Error::ShapeMismatch(format!("noise is {}×{}, expected {b}×{l}", noise.rows(), noise.cols())));
    }
    let w = model.config.kl_weight;
    let params = &model.params;
    let bf = b as f64;

    let enc_in = model.assemble(x, cond, model.config.out_dim(), "output block")?;
    let (h, enc_tape) = params.encoder.forward_taped(enc_in);

    let mut z = Matrix::zeros(b, l);
    let mut kl = 0.0;
    for i in 0..b {
        let hr = h.row(i);
        for j in 0..l {
            let (mu, lv) = (hr[j], hr[l + j].clamp(LOGVAR_MIN, LOGVAR_MAX));
            z.set(i, j, mu + (0.5 * lv).exp() * noise.get(i, j));
            kl += 0.5 * (mu * mu + lv.exp() - 1.0 - lv);
        }
    }
    kl /= bf;

    let dec_in = model.assemble(&z, cond, l, "latent")?;
    let (xhat, dec_tape) = params.decoder.forward_taped(dec_in);
    let mut recon = 0.0;
    let mut dxhat = Matrix::zeros(b, x.cols());
    for ((g, xh), xv) in dxhat.as_mut_slice().iter_mut().zip(xhat.as_slice()).zip(x.as_slice()) {
        let r = xh - xv;
        recon += r * r;
        *g = 2.0 * r / bf;
    }
    recon /= bf;
    let total = recon + w * kl;
    if !total.is_finite() {
        return Err(Error::non_finite(format!("ELBO loss (recon {recon}, kl {kl})")));
    }

    let mut grads = params.zeros_like();
    let dz_full = params.decoder.backward(dec_tape, dxhat, &mut grads.decoder);
    let mut dh = Matrix::zeros(b, 2 * l);
    for i in 0..b {
        let hr = h.row(i);
        for j in 0..l {
            let (mu, raw_lv) = (hr[j], hr[l + j]);
            let lv = raw_lv.clamp(LOGVAR_MIN, LOGVAR_MAX);
            let sigma = (0.5 * lv).exp();
            let dz = dz_full.get(i, j);
            dh.set(i, j, dz + w * mu / bf);
            let dlv = if (LOGVAR_MIN..=LOGVAR_MAX).contains(&raw_lv) {
                0.5 * dz * noise.get(i, j) * sigma + w * (lv.exp() - 1.0) / (2.0 * bf)
            } else {
                0.0
            };
            dh.set(i, l + j, dlv);
        }
    }
    params.encoder.backward(enc_tape, dh, &mut grads.encoder);
    Ok((LossParts { total, recon, kl }, grads))
}

/// Normalized `(output, conditioning)` matrices for the selected windows.
pub fn prepare_batch(model: &VaeModel, windows: &WindowSet, indices: &[usize]) -> Result<(Matrix, Option<Matrix>)> {
    check_windows(&model.config, windows)?;
    let (od, cd) = (model.config.out_dim(), model.config.cond_dim());
    let mut x = Matrix::zeros(indices.len(), od);
    let mut c = Matrix::zeros(indices.len(), cd);
    let mut buf = vec![0.0; windows.window_len() * windows.dim()];
    for (r, &i) in indices.iter().enumerate() {
        buf.copy_from_slice(windows.window(i));
        model.normalizer.apply_in_place(&mut buf);
        let (out, cond) = model.config.split_window(&buf);
        x.row_mut(r).copy_from_slice(out);
        c.row_mut(r).copy_from_slice(cond);
    }
    Ok((x, (cd > 0).then_some(c)))
}

fn check_windows(config: &ModelConfig, windows: &WindowSet) -> Result<()> {
    if windows.dim() != config.d {
        return Err(Error::DimensionMismatch { expected: config.d, got: windows.dim() });
    }
    let want = config.kind.window_len();
    if windows.window_len() != want {
        return Err(Error::ShapeMismatch(format!(
            "{} model trains on {want}-state windows, got {}-state windows",
            config.kind,
            windows.window_len()
        )));
    }
    Ok(())
}

/// Fit a normalizer to `windows`, initialize from `tc.seed` and train.
pub fn train(windows: &WindowSet, mc: ModelConfig, tc: &TrainConfig) -> Result<(VaeModel, TrainReport)> {
    train_observed(windows, mc, tc, |_, _| {})
}

/// [`train`] with a callback receiving `(epoch, mean loss)` after every epoch.
pub fn train_observed(
    windows: &WindowSet,
    mc: ModelConfig,
    tc: &TrainConfig,
    on_epoch: impl FnMut(usize, f64),
) -> Result<(VaeModel, TrainReport)> {
    mc.validate()?;
    check_windows(&mc, windows)?;
    let normalizer = Normalizer::fit(windows)?;
    let model = VaeModel::new(mc, normalizer, tc.seed)?;
    continue_training(model, windows, tc, on_epoch)
}

/// Run `tc.epochs` epochs of minibatch Adam starting from `model`.
pub fn continue_training(
    mut model: VaeModel,
    windows: &WindowSet,
    tc: &TrainConfig,
    mut on_epoch: impl FnMut(usize, f64),
) -> Result<(VaeModel, TrainReport)> {
    tc.validate()?;
    check_windows(&model.config, windows)?;
    if windows.is_empty() {
        return Err(Error::invalid("training needs at least one window"));
    }
    let m = windows.len();
    let all: Vec<usize> = (0..m).collect();
    let (xs, cs) = prepare_batch(&model, windows, &all)?;
    let shapes: Vec<usize> = model.params.tensors().iter().map(|t| t.len()).collect();
    let mut opt = Adam::new(tc.lr, &shapes);
    let mut rng = stream(tc.seed, Stage::Training, 0);
    let l = model.latent_dim();
    let mut order = all;
    let mut report = TrainReport::default();

    for epoch in 0..tc.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (step, idx) in order.chunks(tc.batch_size).enumerate() {
            let x = gather(&xs, idx);
            let c = cs.as_ref().map(|c| gather(c, idx));
            let noise = Matrix::from_fn(idx.len(), l, |_, _| rng.sample(StandardNormal));
            let (parts, grads) = elbo_loss(&model, &x, c.as_ref(), &noise).map_err(|e| match e {
                Error::NonFinite(msg) => Error::NonFinite(format!("epoch {epoch}, step {step}: {msg}")),
                other => other,
            })?;
            opt.step(model.params.tensors_mut(), grads.tensors());
            epoch_loss += parts.total * idx.len() as f64;
            report.steps += 1;
        }
        if !model.params.all_finite() {
            return Err(Error::non_finite(format!("parameters after epoch {epoch}")));
        }
        opt.decay(tc.lr_decay_gamma);
        let mean = epoch_loss / m as f64;
        report.epoch_losses.push(mean);
        on_epoch(epoch, mean);
    }
    model.meta.seed = tc.seed;
    model.meta.epochs += tc.epochs as u64;
    if let Some(&last) = report.epoch_losses.last() {
        model.meta.final_loss = last;
    }
    Ok((model, report))
}

fn gather(src: &Matrix, idx: &[usize]) -> Matrix {
    let mut out = Matrix::zeros(idx.len(), src.cols());
    for (r, &i) in idx.iter().enumerate() {
        out.row_mut(r).copy_from_slice(src.row(i));
    }
    out
}
