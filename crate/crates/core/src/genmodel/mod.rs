//! Joint-window sampler realized as a small variational autoencoder.
//!
//! Three configurations share one MLP encoder/decoder pair:
//!
//! | kind            | conditioning rows | output rows | window length |
//! |-----------------|-------------------|-------------|---------------|
//! | `UncondJoint`   | 0                 | 2           | 2             |
//! | `CondJoint`     | 2                 | 2           | 3             |
//! | `BaselineCond`  | 2                 | 1           | 3             |
//!
//! Output rows are ordered oldest first, so the last row is the head
//! `x_t` and earlier rows are the tail. Conditioning rows, when present, are
//! concatenated onto both encoder and decoder inputs. All network-facing
//! functions work in normalized coordinates; [`VaeModel::sample_joint`] maps
//! samples back to physical units.

mod adam;
mod checkpoint;
mod mlp;
mod train;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::inference::{CloudOrigin, PointCloud};
use crate::linalg::Matrix;
use crate::rng::{stream, Stage};
use crate::windows::Normalizer;

pub use adam::Adam;
pub use mlp::{Dense, Mlp, Tape};
pub use train::{continue_training, elbo_loss, prepare_batch, train, train_observed, LossParts, TrainReport};

/// Range `logvar` is clamped to before exponentiation.
pub const LOGVAR_MIN: f64 = -30.0;
pub const LOGVAR_MAX: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    /// Unconditional joint `p(x_t, x_{t−Δt})` (0 → 2).
    UncondJoint,
    /// Conditional joint `p(x_t, x_{t−Δt} | x_{t−Δt}, x_{t−2Δt})` (2 → 2).
    CondJoint,
    /// Conventional next-step model `p(x_t | x_{t−Δt}, x_{t−2Δt})` (2 → 1).
    BaselineCond,
}

impl ModelKind {
    pub fn cond_rows(self) -> usize {
        match self {
            ModelKind::UncondJoint => 0,
            ModelKind::CondJoint | ModelKind::BaselineCond => 2,
        }
    }

    pub fn out_rows(self) -> usize {
        match self {
            ModelKind::UncondJoint | ModelKind::CondJoint => 2,
            ModelKind::BaselineCond => 1,
        }
    }

    /// Consecutive states needed for one training example.
    pub fn window_len(self) -> usize {
        match self {
            ModelKind::UncondJoint => 2,
            ModelKind::CondJoint | ModelKind::BaselineCond => 3,
        }
    }

    pub fn is_conditional(self) -> bool {
        self.cond_rows() > 0
    }

    /// Joint kinds emit a tail alongside the head.
    pub fn is_joint(self) -> bool {
        self.out_rows() >= 2
    }

    fn code(self) -> u8 {
        match self {
            ModelKind::UncondJoint => 0,
            ModelKind::CondJoint => 1,
            ModelKind::BaselineCond => 2,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(ModelKind::UncondJoint),
            1 => Ok(ModelKind::CondJoint),
            2 => Ok(ModelKind::BaselineCond),
            other => Err(Error::Format(format!("unknown model kind code {other}"))),
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::UncondJoint => "uncond-joint",
            ModelKind::CondJoint => "cond-joint",
            ModelKind::BaselineCond => "baseline-cond",
        })
    }
}

impl FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uncond-joint" | "uncond" | "0to2" => Ok(ModelKind::UncondJoint),
            "cond-joint" | "cond" | "2to2" => Ok(ModelKind::CondJoint),
            "baseline-cond" | "baseline" | "2to1" => Ok(ModelKind::BaselineCond),
            other => Err(Error::invalid(format!("unknown model kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub kind: ModelKind,
    /// Joint window length; 2 for every configuration here.
    pub n: usize,
    pub d: usize,
    pub latent_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub kl_weight: f64,
}

impl ModelConfig {
    pub fn new(kind: ModelKind, d: usize) -> Self {
        Self { kind, n: 2, d, latent_dim: 4, hidden_dims: vec![256, 256], kl_weight: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n != 2 {
            return Err(Error::invalid(format!("only n = 2 joint windows are supported, got {}", self.n)));
        }
        if self.d == 0 || self.latent_dim == 0 {
            return Err(Error::invalid("state and latent dimensions must be positive"));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::invalid("hidden layer widths must be positive"));
        }
        if !(self.kl_weight >= 0.0) || !self.kl_weight.is_finite() {
            return Err(Error::invalid(format!("kl_weight must be finite and non-negative, got {}", self.kl_weight)));
        }
        Ok(())
    }

    pub fn out_dim(&self) -> usize {
        self.kind.out_rows() * self.d
    }

    pub fn cond_dim(&self) -> usize {
        self.kind.cond_rows() * self.d
    }

    pub fn encoder_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.out_dim() + self.cond_dim()];
        dims.extend(&self.hidden_dims);
        dims.push(2 * self.latent_dim);
        dims
    }

    pub fn decoder_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.latent_dim + self.cond_dim()];
        dims.extend(&self.hidden_dims);
        dims.push(self.out_dim());
        dims
    }

    /// Split a flattened training window into `(output block, conditioning block)`.
    pub fn split_window<'a>(&self, window: &'a [f64]) -> (&'a [f64], &'a [f64]) {
        let d = self.d;
        match self.kind {
            ModelKind::UncondJoint => (window, &window[..0]),
            ModelKind::CondJoint => (&window[d..3 * d], &window[..2 * d]),
            ModelKind::BaselineCond => (&window[2 * d..3 * d], &window[..2 * d]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay_gamma: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// 500 epochs, batch 500, Adam at 1e-4 decayed by 0.999 per epoch.
    fn default() -> Self {
        Self { epochs: 500, batch_size: 500, lr: 1e-4, lr_decay_gamma: 0.999, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid("batch size and learning rate must be positive"));
        }
        if !(self.lr_decay_gamma > 0.0 && self.lr_decay_gamma <= 1.0) {
            return Err(Error::invalid(format!("lr decay gamma must lie in (0, 1], got {}", self.lr_decay_gamma)));
        }
        Ok(())
    }
}

/// Encoder and decoder parameters; also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct VaeParams {
    pub encoder: Mlp,
    pub decoder: Mlp,
}

impl VaeParams {
    pub fn zeros_like(&self) -> Self {
        Self { encoder: self.encoder.zeros_like(), decoder: self.decoder.zeros_like() }
    }

    /// All tensors in declaration order: encoder layers, then decoder layers.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut t = self.encoder.tensors();
        t.extend(self.decoder.tensors());
        t
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut t = self.encoder.tensors_mut();
        t.extend(self.decoder.tensors_mut());
        t
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Training provenance stored with a checkpoint.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TrainingMeta {
    pub seed: u64,
    pub epochs: u64,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    pub config: ModelConfig,
    pub params: VaeParams,
    pub normalizer: Normalizer,
    pub rng_seed: u64,
    pub meta: TrainingMeta,
}

impl VaeModel {
    /// Freshly initialized model; weights come from the `ModelInit` stream of `seed`.
    pub fn new(config: ModelConfig, normalizer: Normalizer, seed: u64) -> Result<Self> {
        config.validate()?;
        if normalizer.dim() != config.d {
            return Err(Error::DimensionMismatch { expected: config.d, got: normalizer.dim() });
        }
        let mut rng = stream(seed, Stage::ModelInit, 0);
        let encoder = Mlp::new(&config.encoder_dims(), &mut rng);
        let decoder = Mlp::new(&config.decoder_dims(), &mut rng);
        Ok(Self {
            config,
            params: VaeParams { encoder, decoder },
            normalizer,
            rng_seed: seed,
            meta: TrainingMeta { seed, ..TrainingMeta::default() },
        })
    }

    /// Every weight and bias zero.
    pub fn zeroed(config: ModelConfig, normalizer: Normalizer) -> Result<Self> {
        config.validate()?;
        let encoder = Mlp::zeros(&config.encoder_dims());
        let decoder = Mlp::zeros(&config.decoder_dims());
        Ok(Self { config, params: VaeParams { encoder, decoder }, normalizer, rng_seed: 0, meta: TrainingMeta::default() })
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    fn check_cond_len(&self, cond: &[f64]) -> Result<()> {
        let want = self.config.cond_dim();
        match (want, cond.len()) {
            (0, 0) => Ok(()),
            (0, _) => Err(Error::CondUnexpected),
            (_, 0) => Err(Error::CondMissing),
            (w, g) if w != g => Err(Error::ShapeMismatch(format!("conditioning block has {g} entries, expected {w}"))),
            _ => Ok(()),
        }
    }

    /// Batched encoder: rows of `x` (and `cond`) to `(mu, logvar)`.
    pub fn encode_batch(&self, x: &Matrix, cond: Option<&Matrix>) -> Result<(Matrix, Matrix)> {
        let input = self.assemble(x, cond, self.config.out_dim(), "output block")?;
        let h = self.params.encoder.forward(&input);
        let l = self.latent_dim();
        let mu = h.columns(0, l);
        let mut logvar = h.columns(l, 2 * l);
        logvar.as_mut_slice().iter_mut().for_each(|v| *v = v.clamp(LOGVAR_MIN, LOGVAR_MAX));
        Ok((mu, logvar))
    }

    /// Batched decoder: latent rows (and conditioning rows) to output blocks.
    pub fn decode_batch(&self, z: &Matrix, cond: Option<&Matrix>) -> Result<Matrix> {
        let input = self.assemble(z, cond, self.latent_dim(), "latent")?;
        Ok(self.params.decoder.forward(&input))
    }

    fn assemble(&self, x: &Matrix, cond: Option<&Matrix>, width: usize, what: &str) -> Result<Matrix> {
        if x.cols() != width {
            return Err(Error::ShapeMismatch(format!("{what} has {} columns, expected {width}", x.cols())));
        }
        match (self.config.cond_dim(), cond) {
            (0, None) => Ok(x.clone()),
            (0, Some(c)) if c.cols() == 0 => Ok(x.clone()),
            (0, Some(_)) => Err(Error::CondUnexpected),
            (_, None) => Err(Error::CondMissing),
            (w, Some(c)) => {
                if c.cols() != w || c.rows() != x.rows() {
                    return Err(Error::ShapeMismatch(format!(
                        "conditioning block is {}×{}, expected {}×{w}",
                        c.rows(),
                        c.cols(),
                        x.rows()
                    )));
                }
                Ok(Matrix::hstack(x, c))
            }
        }
    }

    /// Encode one output block (normalized units).
    pub fn encode(&self, x: &[f64], cond: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        self.check_cond_len(cond)?;
        let xm = Matrix::from_vec(1, x.len(), x.to_vec())?;
        let cm = Matrix::from_vec(1, cond.len(), cond.to_vec())?;
        let (mu, lv) = self.encode_batch(&xm, Some(&cm))?;
        Ok((mu.into_vec(), lv.into_vec()))
    }

    /// Decode one latent vector (normalized units).
    pub fn decode(&self, z: &[f64], cond: &[f64]) -> Result<Vec<f64>> {
        self.check_cond_len(cond)?;
        let zm = Matrix::from_vec(1, z.len(), z.to_vec())?;
        let cm = Matrix::from_vec(1, cond.len(), cond.to_vec())?;
        Ok(self.decode_batch(&zm, Some(&cm))?.into_vec())
    }

    /// `n` joint samples: `z ~ N(0, I)`, decoded and mapped to physical units.
    ///
    /// `cond` holds the conditioning states in physical units, oldest first.
    pub fn sample_joint<R: Rng + ?Sized>(&self, n: usize, cond: Option<&[f64]>, rng: &mut R) -> Result<PointCloud> {
        let cd = self.config.cond_dim();
        let cond = match (cd, cond) {
            (0, Some(c)) if !c.is_empty() => return Err(Error::CondUnexpected),
            (0, _) => None,
            (_, None) => return Err(Error::CondMissing),
            (_, Some(c)) if c.is_empty() => return Err(Error::CondMissing),
            (w, Some(c)) if c.len() != w => {
                return Err(Error::ShapeMismatch(format!("conditioning block has {} entries, expected {w}", c.len())))
            }
            (_, Some(c)) => Some(self.normalizer.apply(c)),
        };
        let l = self.latent_dim();
        let z = Matrix::from_fn(n, l, |_, _| rng.sample(StandardNormal));
        let cond_m = cond.map(|c| Matrix::from_fn(n, cd, |_, j| c[j]));
        let mut out = if n == 0 {
            Matrix::zeros(0, self.config.out_dim())
        } else {
            self.decode_batch(&z, cond_m.as_ref())?
        };
        if !out.all_finite() {
            return Err(Error::non_finite("decoded samples"));
        }
        self.normalizer.invert_in_place(out.as_mut_slice());
        let scale = self.normalizer.std.iter().map(|s| 1.0 / s).collect();
        PointCloud::new(out.into_vec(), self.config.kind.out_rows(), self.config.d, CloudOrigin::Model)?
            .with_metric_scale(scale)?
            .with_latents(l, z.into_vec())
    }
}

/// `z = mu + exp(logvar/2) ⊙ ξ`, with `ξ` standard normal and `logvar` clamped.
pub fn reparameterize<R: Rng + ?Sized>(mu: &[f64], logvar: &[f64], rng: &mut R) -> Vec<f64> {
    assert_eq!(mu.len(), logvar.len());
    mu.iter()
        .zip(logvar)
        .map(|(m, lv)| {
            let xi: f64 = rng.sample(StandardNormal);
            m + (0.5 * lv.clamp(LOGVAR_MIN, LOGVAR_MAX)).exp() * xi
        })
        .collect()
}
