//! Ground-truth-free uncertainty metrics computed from per-step top-k ensembles.
//!
//! Every ensemble member is a joint sample `[tail rows…, head]`. At step `t`
//! the heads estimate `x_t` and the tails estimate `x_{t−Δt}`, which is also
//! what the previous step's heads estimated. The metrics are:
//!
//! * `sigma_ens`: weighted per-component variance of the heads.
//! * `ac`: per-component Pearson correlation between heads and the row before them.
//! * `wd`: entropic W2 between the previous heads and the current tails.
//! * `wd_signed`: `wd` negated when the mean head variance shrinks at the next step.
//! * `wd_recon`: running sum of `wd_signed`.

use std::io::Write;

use crate::error::{Error, Result};
use crate::inference::ForecastResult;
use crate::linalg::Matrix;
use crate::transport::{sinkhorn_w2, SinkhornConfig};

/// Top-k joint samples selected at one forecast step, closest match first.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    members: Vec<f64>,
    n_out: usize,
    d: usize,
    /// Tail mismatch of each member (normalized units), ascending.
    pub distances: Vec<f64>,
    pub weights: Vec<f64>,
    /// Cloud index of each member.
    pub indices: Vec<usize>,
}

impl Ensemble {
    /// Uniformly weighted ensemble; `members` is `[k × n_out × d]` flattened.
    pub fn new(members: Vec<f64>, n_out: usize, d: usize, distances: Vec<f64>, indices: Vec<usize>) -> Result<Self> {
        let k = distances.len();
        if n_out == 0 || d == 0 || members.len() != k * n_out * d || indices.len() != k {
            return Err(Error::ShapeMismatch(format!(
                "ensemble of {k} members needs {} values and {k} indices, got {} and {}",
                k * n_out * d,
                members.len(),
                indices.len()
            )));
        }
        if distances.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid("ensemble distances must be sorted ascending"));
        }
        Ok(Self { members, n_out, d, distances, weights: vec![1.0; k], indices })
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.len() {
            return Err(Error::SizeMismatch { left: weights.len(), right: self.len() });
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || weights.iter().all(|w| *w == 0.0) {
            return Err(Error::invalid("ensemble weights must be finite, non-negative and not all zero"));
        }
        self.weights = weights;
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.distances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.distances.is_empty()
    }

    pub fn rows_per_member(&self) -> usize {
        self.n_out
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn members(&self) -> &[f64] {
        &self.members
    }

    pub fn member(&self, i: usize) -> &[f64] {
        let w = self.n_out * self.d;
        &self.members[i * w..(i + 1) * w]
    }

    pub fn member_mut(&mut self, i: usize) -> &mut [f64] {
        let w = self.n_out * self.d;
        &mut self.members[i * w..(i + 1) * w]
    }

    pub fn head(&self, i: usize) -> &[f64] {
        let m = self.member(i);
        &m[m.len() - self.d..]
    }

    /// All rows except the head.
    pub fn tail(&self, i: usize) -> &[f64] {
        let m = self.member(i);
        &m[..m.len() - self.d]
    }

    /// The row directly before the head (`x_{t−Δt}`), if present.
    pub fn previous_row(&self, i: usize) -> Option<&[f64]> {
        (self.n_out >= 2).then(|| {
            let m = self.member(i);
            &m[m.len() - 2 * self.d..m.len() - self.d]
        })
    }

    fn block_matrix(&self, block: Block) -> Matrix {
        let k = self.len();
        match block {
            Block::Head => Matrix::from_fn(k, self.d, |i, c| self.head(i)[c]),
            Block::Tail => {
                let w = self.tail(0).len();
                Matrix::from_fn(k, w, |i, c| self.tail(i)[c])
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    Head,
    /// The row before the head.
    Tail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    #[default]
    Uniform,
    /// `w_i = 1/(δ + ‖ε_i‖)` with `δ = 1e−8`.
    InverseDistance,
}

impl Weighting {
    pub fn weights(self, distances: &[f64]) -> Vec<f64> {
        match self {
            Weighting::Uniform => vec![1.0; distances.len()],
            Weighting::InverseDistance => distances.iter().map(|e| 1.0 / (1e-8 + e)).collect(),
        }
    }
}

/// Weighted per-component population variance of one block.
pub fn ensemble_variance(ens: &Ensemble, at: Block) -> Result<Vec<f64>> {
    let k = ens.len();
    if k < 2 {
        return Err(Error::DegenerateEnsemble(k));
    }
    let d = ens.dim();
    let rows: Vec<&[f64]> = match at {
        Block::Head => (0..k).map(|i| ens.head(i)).collect(),
        Block::Tail => (0..k)
            .map(|i| ens.previous_row(i).ok_or_else(|| Error::invalid("ensemble has no tail row")))
            .collect::<Result<_>>()?,
    };
    let wsum: f64 = ens.weights.iter().sum();
    let mut mean = vec![0.0; d];
    for (row, w) in rows.iter().zip(&ens.weights) {
        for (m, x) in mean.iter_mut().zip(*row) {
            *m += w * x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= wsum);
    let mut var = vec![0.0; d];
    for (row, w) in rows.iter().zip(&ens.weights) {
        for c in 0..d {
            let r = row[c] - mean[c];
            var[c] += w * r * r;
        }
    }
    var.iter_mut().for_each(|v| *v /= wsum);
    Ok(var)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Autocorrelation {
    pub values: Vec<f64>,
    /// Components where head or tail variance vanished; their value is 0.
    pub zero_variance: Vec<bool>,
}

/// Unweighted per-component Pearson correlation between heads and the row before them.
pub fn ensemble_autocorrelation(ens: &Ensemble) -> Result<Autocorrelation> {
    let k = ens.len();
    if k < 2 {
        return Err(Error::DegenerateEnsemble(k));
    }
    if ens.rows_per_member() < 2 {
        return Err(Error::invalid("autocorrelation needs joint samples with a tail row"));
    }
    let d = ens.dim();
    let kf = k as f64;
    let mut values = vec![0.0; d];
    let mut zero_variance = vec![false; d];
    for c in 0..d {
        let head = |i: usize| ens.head(i)[c];
        let prev = |i: usize| ens.previous_row(i).expect("checked above")[c];
        let mh = (0..k).map(head).sum::<f64>() / kf;
        let mp = (0..k).map(prev).sum::<f64>() / kf;
        let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
        for i in 0..k {
            let (a, b) = (head(i) - mh, prev(i) - mp);
            sxy += a * b;
            sxx += a * a;
            syy += b * b;
        }
        if sxx == 0.0 || syy == 0.0 {
            zero_variance[c] = true;
        } else {
            values[c] = (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0);
        }
    }
    Ok(Autocorrelation { values, zero_variance })
}

/// Entropic W2 between the previous step's heads and the current step's tails.
pub fn wasserstein_drift(prev: &Ensemble, curr: &Ensemble, cfg: &SinkhornConfig) -> Result<f64> {
    drift_from_heads(&prev.block_matrix(Block::Head), curr, cfg)
}

fn drift_from_heads(prev_heads: &Matrix, curr: &Ensemble, cfg: &SinkhornConfig) -> Result<f64> {
    if curr.rows_per_member() != 2 {
        return Err(Error::invalid("Wasserstein drift needs two-row joint samples"));
    }
    Ok(sinkhorn_w2(prev_heads, &curr.block_matrix(Block::Tail), cfg)?.distance)
}

/// `−wd` when the mean component variance decreases from `sig_curr` to `sig_next`, else `+wd`.
///
/// At the final step there is no next variance; pass `None` for the `+` branch.
pub fn signed_drift(wd: f64, sig_next: Option<&[f64]>, sig_curr: &[f64]) -> f64 {
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    match sig_next {
        Some(next) if mean(next) < mean(sig_curr) => -wd,
        _ => wd,
    }
}

/// Prefix sums of the signed drift.
pub fn wd_reconstruction(wd_signed: &[f64]) -> Vec<f64> {
    wd_signed
        .iter()
        .scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UqConfig {
    pub sinkhorn: SinkhornConfig,
    pub weighting: Weighting,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UqSeries {
    pub times: Vec<f64>,
    /// `[T × d]` head variance.
    pub sigma_ens: Matrix,
    /// `[T × d]` head/previous-row correlation.
    pub ac: Matrix,
    /// Steps where at least one AC component had zero variance.
    pub ac_flagged_steps: usize,
    pub wd: Vec<f64>,
    pub wd_signed: Vec<f64>,
    pub wd_recon: Vec<f64>,
}

impl UqSeries {
    pub fn len(&self) -> usize {
        self.wd.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wd.is_empty()
    }

    pub fn sigma_mean(&self) -> Vec<f64> {
        row_means(&self.sigma_ens)
    }

    pub fn ac_mean(&self) -> Vec<f64> {
        row_means(&self.ac)
    }

    /// CSV with `t,sigma_mean,ac_mean,wd,wd_signed,wd_recon`, optionally followed
    /// by `sigma_<c>` and `ac_<c>` columns.
    pub fn write_csv<W: Write>(&self, mut out: W, per_component: bool) -> Result<()> {
        let d = self.sigma_ens.cols();
        write!(out, "t,sigma_mean,ac_mean,wd,wd_signed,wd_recon")?;
        if per_component {
            (0..d).try_for_each(|c| write!(out, ",sigma_{c}"))?;
            (0..d).try_for_each(|c| write!(out, ",ac_{c}"))?;
        }
        writeln!(out)?;
        let (sm, am) = (self.sigma_mean(), self.ac_mean());
        for t in 0..self.len() {
            write!(out, "{},{},{},{},{},{}", self.times[t], sm[t], am[t], self.wd[t], self.wd_signed[t], self.wd_recon[t])?;
            if per_component {
                self.sigma_ens.row(t).iter().try_for_each(|v| write!(out, ",{v}"))?;
                self.ac.row(t).iter().try_for_each(|v| write!(out, ",{v}"))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }
}

fn row_means(m: &Matrix) -> Vec<f64> {
    (0..m.rows()).map(|i| m.row(i).iter().sum::<f64>() / m.cols() as f64).collect()
}

/// All five series for a forecast run.
///
/// The drift at the first step compares the first tails against the last
/// observed history state, treated as a point mass.
pub fn compute_uq_series(result: &ForecastResult, cfg: &UqConfig) -> Result<UqSeries> {
    let horizon = result.ensembles.len();
    let d = result.forecast.dim();
    let mut sigma_ens = Matrix::zeros(horizon, d);
    let mut ac = Matrix::zeros(horizon, d);
    let mut ac_flagged_steps = 0;
    let mut wd = Vec::with_capacity(horizon);
    let mut weighted = Vec::with_capacity(horizon);
    for ens in &result.ensembles {
        let w = cfg.weighting.weights(&ens.distances);
        weighted.push(ens.clone().with_weights(w)?);
    }
    let history_last = result.initial_history.last();
    let mut prev_heads = Matrix::from_vec(1, d, history_last.to_vec())?;
    for (t, ens) in weighted.iter().enumerate() {
        sigma_ens.row_mut(t).copy_from_slice(&ensemble_variance(ens, Block::Head)?);
        let a = ensemble_autocorrelation(ens)?;
        if a.zero_variance.iter().any(|&z| z) {
            ac_flagged_steps += 1;
        }
        ac.row_mut(t).copy_from_slice(&a.values);
        wd.push(drift_from_heads(&prev_heads, ens, &cfg.sinkhorn)?);
        prev_heads = ens.block_matrix(Block::Head);
    }
    let wd_signed: Vec<f64> = (0..horizon)
        .map(|t| signed_drift(wd[t], (t + 1 < horizon).then(|| sigma_ens.row(t + 1)), sigma_ens.row(t)))
        .collect();
    let wd_recon = wd_reconstruction(&wd_signed);
    let times = (0..horizon).map(|t| result.forecast.time(t)).collect();
    Ok(UqSeries { times, sigma_ens, ac, ac_flagged_steps, wd, wd_signed, wd_recon })
}
