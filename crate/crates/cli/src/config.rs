//! Run configuration: flat `section.key = value` text, layered as
//! built-in defaults, then a preset, then a config file, then `--set`
//! overrides and the global flags.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use jointcast::eval::{CvScheme, HistMode};
use jointcast::genmodel::{ModelConfig, ModelKind, TrainConfig};
use jointcast::inference::{ForecastMode, LatentControlConfig, LatentInit, SearchStrategy, SieveConfig};
use jointcast::transport::SinkhornConfig;
use jointcast::uq::{UqConfig, Weighting};
use jointcast::windows::Sampling;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: expected `section.key = value`, got `{text}`")]
    Syntax { line: usize, text: String },
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`: {reason}")]
    BadValue { key: String, value: String, reason: String },
    #[error("unknown preset `{0}` (available: {1})")]
    UnknownPreset(String, String),
    #[error("{0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum System {
    Lorenz63,
    Ks,
}

impl FromStr for System {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "lorenz63" | "lorenz" => Ok(System::Lorenz63),
            "ks" => Ok(System::Ks),
            other => Err(format!("unknown system `{other}` (lorenz63 | ks)")),
        }
    }
}

impl System {
    pub fn tag(self) -> &'static str {
        match self {
            System::Lorenz63 => "lorenz63",
            System::Ks => "ks",
        }
    }
}

/// Every setting of one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub output_dir: PathBuf,
    /// Worker threads; 0 means one per available core.
    pub threads: usize,

    pub system: System,
    pub lorenz_sigma: f64,
    pub lorenz_rho: f64,
    pub lorenz_beta: f64,
    pub lorenz_ic: Vec<f64>,
    pub ks_x_min: f64,
    pub ks_x_max: f64,
    pub ks_n_points: usize,

    pub steps: usize,
    pub dt: f64,
    /// Integrator steps per stored state (KS only).
    pub substeps: usize,
    /// Time discarded from the start of the simulation.
    pub transient: f64,
    pub write_csv: bool,

    /// Index of the first state outside the training span.
    pub train_end: usize,
    pub windows: usize,
    pub sampling: Sampling,
    pub normalize: bool,

    pub kind: ModelKind,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub kl_weight: f64,

    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_decay_gamma: f64,

    pub mode: ForecastMode,
    pub n_samples: usize,
    pub k: usize,
    pub horizon: usize,
    pub resample: bool,
    /// Advance all runs in lockstep against one cloud per draw.
    pub shared_cloud: bool,
    pub n_ics: usize,
    pub realizations: usize,
    pub search: SearchStrategy,
    pub save_ensembles: bool,
    pub oracle: bool,
    pub oracle_tail_sigma: f64,
    pub oracle_head_sigma: f64,
    pub latent_max_iters: usize,
    pub latent_step_size: f64,
    pub latent_tol: f64,

    pub uq_epsilon: f64,
    pub uq_max_iters: usize,
    pub uq_tol: f64,
    pub weighting: Weighting,
    pub allow_conditional: bool,

    pub bins: usize,
    pub tail_fraction: f64,
    pub hist_mode: Option<HistMode>,
    pub climatology_pairs: usize,
    pub lead_steps: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            output_dir: PathBuf::from("out"),
            threads: 0,
            system: System::Lorenz63,
            lorenz_sigma: 10.0,
            lorenz_rho: 28.0,
            lorenz_beta: 8.0 / 3.0,
            lorenz_ic: vec![1.0, 1.0, 1.0],
            ks_x_min: -25.0,
            ks_x_max: 25.0,
            ks_n_points: 199,
            steps: 100_000,
            dt: 0.025,
            substeps: 1,
            transient: 25.0,
            write_csv: false,
            train_end: 25_000,
            windows: 999_999,
            sampling: Sampling::UniformRandom,
            normalize: true,
            kind: ModelKind::UncondJoint,
            latent_dim: 4,
            hidden: vec![256, 256],
            kl_weight: 1.0,
            epochs: 500,
            batch_size: 500,
            lr: 1e-4,
            lr_decay_gamma: 0.999,
            mode: ForecastMode::Sieve,
            n_samples: 50_000,
            k: 64,
            horizon: 400,
            resample: false,
            shared_cloud: false,
            n_ics: 500,
            realizations: 1,
            search: SearchStrategy::KdTree,
            save_ensembles: true,
            oracle: false,
            oracle_tail_sigma: 0.01,
            oracle_head_sigma: 1e-3,
            latent_max_iters: 200,
            latent_step_size: 0.1,
            latent_tol: 1e-6,
            uq_epsilon: 0.01,
            uq_max_iters: 500,
            uq_tol: 1e-6,
            weighting: Weighting::Uniform,
            allow_conditional: false,
            bins: 60,
            tail_fraction: 0.05,
            hist_mode: None,
            climatology_pairs: 20_000,
            lead_steps: vec![1, 10, 40],
        }
    }
}

const LORENZ_DESK: &str = "
system.name = lorenz63
simulate.steps = 200000
simulate.dt = 0.025
simulate.transient = 25
data.train_end = 50000
data.windows = 100000
model.kind = uncond-joint
model.latent_dim = 4
model.hidden = 128,128
model.kl_weight = 0.1
train.epochs = 50
train.batch_size = 500
train.lr = 3e-4
train.lr_decay_gamma = 0.999
forecast.n_samples = 10000
forecast.k = 64
forecast.horizon = 400
# a cloud reused for 400 steps traps runs in short cycles; redraw it each
# step and share the draw across runs
forecast.resample = true
forecast.shared_cloud = true
forecast.n_ics = 100
forecast.save_ensembles = true
";

const LORENZ_FULL: &str = "
system.name = lorenz63
simulate.steps = 100000
simulate.dt = 0.025
simulate.transient = 25
data.train_end = 25000
data.windows = 999999
model.hidden = 256,256
train.epochs = 500
train.batch_size = 500
train.lr = 1e-4
train.lr_decay_gamma = 0.999
forecast.n_samples = 50000
forecast.horizon = 400
forecast.n_ics = 500
";

// 64 nodes instead of the 199 of ks-full, sized for a workstation
const KS_DESK: &str = "
system.name = ks
ks.n_points = 64
simulate.steps = 30000
simulate.dt = 0.1
simulate.substeps = 5
simulate.transient = 100
data.train_end = 7500
data.windows = 50000
model.kind = uncond-joint
model.hidden = 128,128
model.latent_dim = 8
train.epochs = 30
train.batch_size = 250
train.lr = 1e-3
train.lr_decay_gamma = 0.95
forecast.n_samples = 10000
forecast.horizon = 100
forecast.n_ics = 50
eval.lead_steps = 1,10,50
";

const KS_FULL: &str = "
system.name = ks
ks.n_points = 199
simulate.steps = 100000
simulate.dt = 0.1
simulate.substeps = 500
simulate.transient = 100
data.train_end = 25000
data.windows = 999999
model.hidden = 256,256
train.epochs = 500
train.batch_size = 500
train.lr = 1e-4
train.lr_decay_gamma = 0.999
forecast.n_samples = 50000
forecast.horizon = 100
forecast.n_ics = 500
eval.lead_steps = 1,10,50
";

pub const PRESETS: [(&str, &str); 4] =
    [("lorenz-desk", LORENZ_DESK), ("lorenz-full", LORENZ_FULL), ("ks-desk", KS_DESK), ("ks-full", KS_FULL)];

fn bad(key: &str, value: &str, reason: impl ToString) -> ConfigError {
    ConfigError::BadValue { key: key.into(), value: value.into(), reason: reason.to_string() }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: ToString,
{
    value.parse().map_err(|e: T::Err| bad(key, value, e))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>>
where
    T::Err: ToString,
{
    value.split(',').map(|v| parse(key, v.trim())).collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

/// Split config text into `(key, value)` pairs; `#` starts a comment.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| ConfigError::Syntax { line: i + 1, text: raw.into() })?;
        let (k, v) = (k.trim(), v.trim());
        if !k.contains('.') || v.is_empty() {
            return Err(ConfigError::Syntax { line: i + 1, text: raw.into() });
        }
        out.push((k.to_string(), v.to_string()));
    }
    Ok(out)
}

impl RunConfig {
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (k, v) in parse_pairs(text)? {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    pub fn apply_preset(&mut self, name: &str) -> Result<()> {
        let (_, text) = PRESETS.iter().find(|(n, _)| *n == name).ok_or_else(|| {
            ConfigError::UnknownPreset(name.into(), PRESETS.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(", "))
        })?;
        self.apply_text(text)
    }

    /// Apply one `--set key=value` override.
    pub fn apply_override(&mut self, pair: &str) -> Result<()> {
        let (k, v) = pair.split_once('=').ok_or_else(|| ConfigError::Syntax { line: 0, text: pair.into() })?;
        self.set(k.trim(), v.trim())
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "run.seed" => self.seed = Some(parse(key, v)?),
            "run.output_dir" => self.output_dir = PathBuf::from(v),
            "run.threads" => self.threads = parse(key, v)?,
            "system.name" => self.system = parse(key, v)?,
            "lorenz.sigma" => self.lorenz_sigma = parse(key, v)?,
            "lorenz.rho" => self.lorenz_rho = parse(key, v)?,
            "lorenz.beta" => self.lorenz_beta = parse(key, v)?,
            "lorenz.ic" => self.lorenz_ic = parse_list(key, v)?,
            "ks.x_min" => self.ks_x_min = parse(key, v)?,
            "ks.x_max" => self.ks_x_max = parse(key, v)?,
            "ks.n_points" => self.ks_n_points = parse(key, v)?,
            "simulate.steps" => self.steps = parse(key, v)?,
            "simulate.dt" => self.dt = parse(key, v)?,
            "simulate.substeps" => self.substeps = parse(key, v)?,
            "simulate.transient" => self.transient = parse(key, v)?,
            "simulate.write_csv" => self.write_csv = parse(key, v)?,
            "data.train_end" => self.train_end = parse(key, v)?,
            "data.windows" => self.windows = parse(key, v)?,
            "data.sampling" => {
                self.sampling = match v {
                    "uniform" => Sampling::UniformRandom,
                    "contiguous" => Sampling::AllContiguous,
                    _ => return Err(bad(key, v, "expected uniform | contiguous")),
                }
            }
            "data.normalize" => self.normalize = parse(key, v)?,
            "model.kind" => self.kind = parse(key, v)?,
            "model.latent_dim" => self.latent_dim = parse(key, v)?,
            "model.hidden" => self.hidden = parse_list(key, v)?,
            "model.kl_weight" => self.kl_weight = parse(key, v)?,
            "train.epochs" => self.epochs = parse(key, v)?,
            "train.batch_size" => self.batch_size = parse(key, v)?,
            "train.lr" => self.lr = parse(key, v)?,
            "train.lr_decay_gamma" => self.lr_decay_gamma = parse(key, v)?,
            "forecast.mode" => self.mode = parse(key, v)?,
            "forecast.n_samples" => self.n_samples = parse(key, v)?,
            "forecast.k" => self.k = parse(key, v)?,
            "forecast.horizon" => self.horizon = parse(key, v)?,
            "forecast.resample" => self.resample = parse(key, v)?,
            "forecast.shared_cloud" => self.shared_cloud = parse(key, v)?,
            "forecast.n_ics" => self.n_ics = parse(key, v)?,
            "forecast.realizations" => self.realizations = parse(key, v)?,
            "forecast.search" => {
                self.search = match v {
                    "scan" => SearchStrategy::Scan,
                    "kdtree" => SearchStrategy::KdTree,
                    _ => return Err(bad(key, v, "expected scan | kdtree")),
                }
            }
            "forecast.save_ensembles" => self.save_ensembles = parse(key, v)?,
            "forecast.oracle" => self.oracle = parse(key, v)?,
            "forecast.oracle_tail_sigma" => self.oracle_tail_sigma = parse(key, v)?,
            "forecast.oracle_head_sigma" => self.oracle_head_sigma = parse(key, v)?,
            "latent.max_iters" => self.latent_max_iters = parse(key, v)?,
            "latent.step_size" => self.latent_step_size = parse(key, v)?,
            "latent.tol" => self.latent_tol = parse(key, v)?,
            "uq.epsilon" => self.uq_epsilon = parse(key, v)?,
            "uq.max_iters" => self.uq_max_iters = parse(key, v)?,
            "uq.tol" => self.uq_tol = parse(key, v)?,
            "uq.weighting" => {
                self.weighting = match v {
                    "uniform" => Weighting::Uniform,
                    "inverse_distance" => Weighting::InverseDistance,
                    _ => return Err(bad(key, v, "expected uniform | inverse_distance")),
                }
            }
            "uq.allow_conditional" => self.allow_conditional = parse(key, v)?,
            "eval.bins" => self.bins = parse(key, v)?,
            "eval.tail_fraction" => self.tail_fraction = parse(key, v)?,
            "eval.hist_mode" => {
                self.hist_mode = match v {
                    "auto" => None,
                    "per_component" => Some(HistMode::PerComponent),
                    "aggregate" => Some(HistMode::Aggregate),
                    _ => return Err(bad(key, v, "expected auto | per_component | aggregate")),
                }
            }
            "eval.climatology_pairs" => self.climatology_pairs = parse(key, v)?,
            "eval.lead_steps" => self.lead_steps = parse_list(key, v)?,
            _ => return Err(ConfigError::UnknownKey(key.into())),
        }
        Ok(())
    }

    /// Canonical text form; parsing it back reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        if let Some(seed) = self.seed {
            put("run.seed", seed.to_string());
        }
        put("run.output_dir", self.output_dir.display().to_string());
        put("run.threads", self.threads.to_string());
        put("system.name", self.system.tag().into());
        put("lorenz.sigma", self.lorenz_sigma.to_string());
        put("lorenz.rho", self.lorenz_rho.to_string());
        put("lorenz.beta", self.lorenz_beta.to_string());
        put("lorenz.ic", join(&self.lorenz_ic));
        put("ks.x_min", self.ks_x_min.to_string());
        put("ks.x_max", self.ks_x_max.to_string());
        put("ks.n_points", self.ks_n_points.to_string());
        put("simulate.steps", self.steps.to_string());
        put("simulate.dt", self.dt.to_string());
        put("simulate.substeps", self.substeps.to_string());
        put("simulate.transient", self.transient.to_string());
        put("simulate.write_csv", self.write_csv.to_string());
        put("data.train_end", self.train_end.to_string());
        put("data.windows", self.windows.to_string());
        let sampling = match self.sampling {
            Sampling::UniformRandom => "uniform",
            Sampling::AllContiguous => "contiguous",
        };
        put("data.sampling", sampling.into());
        put("data.normalize", self.normalize.to_string());
        put("model.kind", self.kind.to_string());
        put("model.latent_dim", self.latent_dim.to_string());
        put("model.hidden", join(&self.hidden));
        put("model.kl_weight", self.kl_weight.to_string());
        put("train.epochs", self.epochs.to_string());
        put("train.batch_size", self.batch_size.to_string());
        put("train.lr", self.lr.to_string());
        put("train.lr_decay_gamma", self.lr_decay_gamma.to_string());
        put("forecast.mode", self.mode.to_string());
        put("forecast.n_samples", self.n_samples.to_string());
        put("forecast.k", self.k.to_string());
        put("forecast.horizon", self.horizon.to_string());
        put("forecast.resample", self.resample.to_string());
        put("forecast.shared_cloud", self.shared_cloud.to_string());
        put("forecast.n_ics", self.n_ics.to_string());
        put("forecast.realizations", self.realizations.to_string());
        let search = match self.search {
            SearchStrategy::Scan => "scan",
            SearchStrategy::KdTree => "kdtree",
        };
        put("forecast.search", search.into());
        put("forecast.save_ensembles", self.save_ensembles.to_string());
        put("forecast.oracle", self.oracle.to_string());
        put("forecast.oracle_tail_sigma", self.oracle_tail_sigma.to_string());
        put("forecast.oracle_head_sigma", self.oracle_head_sigma.to_string());
        put("latent.max_iters", self.latent_max_iters.to_string());
        put("latent.step_size", self.latent_step_size.to_string());
        put("latent.tol", self.latent_tol.to_string());
        put("uq.epsilon", self.uq_epsilon.to_string());
        put("uq.max_iters", self.uq_max_iters.to_string());
        put("uq.tol", self.uq_tol.to_string());
        let weighting = match self.weighting {
            Weighting::Uniform => "uniform",
            Weighting::InverseDistance => "inverse_distance",
        };
        put("uq.weighting", weighting.into());
        put("uq.allow_conditional", self.allow_conditional.to_string());
        put("eval.bins", self.bins.to_string());
        put("eval.tail_fraction", self.tail_fraction.to_string());
        let hist = match self.hist_mode {
            None => "auto",
            Some(HistMode::PerComponent) => "per_component",
            Some(HistMode::Aggregate) => "aggregate",
        };
        put("eval.hist_mode", hist.into());
        put("eval.climatology_pairs", self.climatology_pairs.to_string());
        put("eval.lead_steps", join(&self.lead_steps));
        s
    }

    pub fn seed(&self) -> u64 {
        self.seed.expect("validated")
    }

    pub fn dim(&self) -> usize {
        match self.system {
            System::Lorenz63 => 3,
            System::Ks => self.ks_n_points,
        }
    }

    /// States of history a forecast starts from.
    pub fn history_rows(&self) -> usize {
        if self.oracle {
            1
        } else {
            self.kind.cond_rows().max(1)
        }
    }

    pub fn threads(&self) -> usize {
        if self.threads == 0 {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        } else {
            self.threads
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            kind: self.kind,
            n: 2,
            d: self.dim(),
            latent_dim: self.latent_dim,
            hidden_dims: self.hidden.clone(),
            kl_weight: self.kl_weight,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            lr_decay_gamma: self.lr_decay_gamma,
            seed: self.seed(),
        }
    }

    pub fn sieve_config(&self) -> SieveConfig {
        SieveConfig { n_samples: self.n_samples, k: self.k, resample: self.resample, search: self.search }
    }

    pub fn latent_config(&self) -> LatentControlConfig {
        let init = if self.mode == ForecastMode::SieveLatent { LatentInit::BestSieved } else { LatentInit::EncodeHistory };
        LatentControlConfig {
            max_iters: self.latent_max_iters,
            step_size: self.latent_step_size,
            tol: self.latent_tol,
            init,
        }
    }

    pub fn uq_config(&self) -> UqConfig {
        UqConfig {
            sinkhorn: SinkhornConfig {
                max_iters: self.uq_max_iters,
                convergence_tol: self.uq_tol,
                ..SinkhornConfig::relative(self.uq_epsilon)
            },
            weighting: self.weighting,
        }
    }

    pub fn hist_mode(&self) -> HistMode {
        self.hist_mode.unwrap_or(match self.system {
            System::Lorenz63 => HistMode::PerComponent,
            System::Ks => HistMode::Aggregate,
        })
    }

    pub fn cv_schemes(&self) -> [CvScheme; 2] {
        [CvScheme::SplitHalf, CvScheme::InSample]
    }

    /// Cross-section checks shared by every subcommand.
    pub fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(ConfigError::Invalid(msg));
        if self.seed.is_none() {
            return invalid("run.seed is mandatory (set it in the config or pass --seed)".into());
        }
        if self.steps == 0 {
            return invalid("simulate.steps must be at least 1".into());
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return invalid(format!("simulate.dt must be positive, got {}", self.dt));
        }
        if self.substeps == 0 {
            return invalid("simulate.substeps must be at least 1".into());
        }
        if self.system == System::Lorenz63 && self.substeps != 1 {
            return invalid("simulate.substeps applies to ks only; Lorenz-63 integrates at simulate.dt".into());
        }
        if !(self.transient >= 0.0) {
            return invalid("simulate.transient must be non-negative".into());
        }
        if self.system == System::Lorenz63 && self.lorenz_ic.len() != 3 {
            return invalid(format!("lorenz.ic needs 3 values, got {}", self.lorenz_ic.len()));
        }
        if self.system == System::Ks && self.ks_n_points < 5 {
            return invalid("ks.n_points must be at least 5".into());
        }
        if self.windows == 0 {
            return invalid("data.windows must be at least 1".into());
        }
        if self.train_end < self.kind.window_len() {
            return invalid(format!("data.train_end = {} leaves no room for a training window", self.train_end));
        }
        self.model_config().validate().map_err(|e| ConfigError::Invalid(format!("model: {e}")))?;
        self.train_config().validate().map_err(|e| ConfigError::Invalid(format!("train: {e}")))?;
        if self.k == 0 || self.n_samples == 0 || self.k > self.n_samples {
            return invalid(format!("need 1 ≤ forecast.k ≤ forecast.n_samples, got k = {} N = {}", self.k, self.n_samples));
        }
        if self.n_ics == 0 || self.realizations == 0 {
            return invalid("forecast.n_ics and forecast.realizations must be at least 1".into());
        }
        if self.mode != ForecastMode::Sieve && self.kind.is_conditional() {
            return invalid(format!("latent control needs an unconditional model, model.kind = {}", self.kind));
        }
        if self.oracle && self.mode != ForecastMode::Sieve {
            return invalid("oracle clouds support forecast.mode = sieve only".into());
        }
        if self.shared_cloud && (self.oracle || self.kind.is_conditional() || self.mode != ForecastMode::Sieve) {
            return invalid("forecast.shared_cloud needs sieving with an unconditional model; oracle and conditional clouds depend on each run's history".into());
        }
        self.latent_config().validate().map_err(|e| ConfigError::Invalid(format!("latent: {e}")))?;
        self.uq_config().sinkhorn.validate().map_err(|e| ConfigError::Invalid(format!("uq: {e}")))?;
        if self.bins < 2 {
            return invalid("eval.bins must be at least 2".into());
        }
        if !(self.tail_fraction > 0.0 && self.tail_fraction < 0.5) {
            return invalid("eval.tail_fraction must lie in (0, 0.5)".into());
        }
        if self.climatology_pairs == 0 {
            return invalid("eval.climatology_pairs must be at least 1".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut cfg = RunConfig::default();
        cfg.apply_preset("ks-desk").unwrap();
        cfg.seed = Some(17);
        cfg.hist_mode = Some(HistMode::Aggregate);
        let mut back = RunConfig::default();
        back.apply_text(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn comments_and_blank_lines() {
        let pairs = parse_pairs("# header\n\nrun.seed = 3 # trailing\n  model.hidden=8, 8\n").unwrap();
        assert_eq!(pairs, vec![("run.seed".into(), "3".into()), ("model.hidden".into(), "8, 8".into())]);
        let mut cfg = RunConfig::default();
        for (k, v) in pairs {
            cfg.set(&k, &v).unwrap();
        }
        assert_eq!(cfg.hidden, vec![8, 8]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(parse_pairs("seed 3"), Err(ConfigError::Syntax { line: 1, .. })));
        assert!(matches!(parse_pairs("seed = 3"), Err(ConfigError::Syntax { .. })));
        let mut cfg = RunConfig::default();
        assert!(matches!(cfg.set("run.colour", "red"), Err(ConfigError::UnknownKey(_))));
        assert!(matches!(cfg.set("train.lr", "fast"), Err(ConfigError::BadValue { .. })));
        assert!(matches!(cfg.apply_preset("nope"), Err(ConfigError::UnknownPreset(..))));
    }

    #[test]
    fn every_preset_validates() {
        for (name, _) in PRESETS {
            let mut cfg = RunConfig::default();
            cfg.apply_preset(name).unwrap();
            cfg.seed = Some(0);
            cfg.validate().unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }

    #[test]
    fn seed_is_mandatory() {
        assert!(RunConfig::default().validate().is_err());
    }

    #[test]
    fn cross_section_checks() {
        let mut cfg = RunConfig { seed: Some(1), ..RunConfig::default() };
        cfg.validate().unwrap();
        cfg.k = cfg.n_samples + 1;
        assert!(cfg.validate().is_err());
        let mut cfg = RunConfig { seed: Some(1), kind: ModelKind::CondJoint, mode: ForecastMode::Latent, ..RunConfig::default() };
        assert!(cfg.validate().is_err());
        cfg.mode = ForecastMode::Sieve;
        cfg.validate().unwrap();
        cfg.substeps = 4;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn full_scale_values() {
        let mut cfg = RunConfig::default();
        cfg.apply_preset("lorenz-full").unwrap();
        assert_eq!((cfg.steps, cfg.dt, cfg.n_ics, cfg.horizon, cfg.n_samples), (100_000, 0.025, 500, 400, 50_000));
        assert_eq!((cfg.epochs, cfg.batch_size, cfg.lr, cfg.lr_decay_gamma), (500, 500, 1e-4, 0.999));
        cfg.apply_preset("ks-full").unwrap();
        assert_eq!((cfg.dim(), cfg.dt, cfg.horizon), (199, 0.1, 100));
    }
}
