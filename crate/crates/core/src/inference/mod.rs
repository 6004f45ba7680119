//! Forecasting by marginalization: sieve joint samples whose tails match the
//! observed history and emit their heads, optionally refined in latent space.

mod latent;
mod search;

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::dynamics::{lorenz63_step, Lorenz63Params, Trajectory};
use crate::error::{Error, Result};
use crate::genmodel::VaeModel;
use crate::rng::StreamRng;
use crate::uq::Ensemble;

pub use latent::{forecast_latent, latent_control_step, latent_loss_and_grad, LatentControlConfig, LatentInit};
pub use search::{match_best, top_k_match, KdTree, SearchStrategy};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudOrigin {
    Model,
    Oracle,
}

/// `N` joint samples `[N × n_out × d]`, each ordered oldest row first.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    samples: Vec<f64>,
    len: usize,
    n_out: usize,
    d: usize,
    pub origin: CloudOrigin,
    /// Per-component factor applied to differences before taking distances.
    metric_scale: Vec<f64>,
    latent_dim: usize,
    latents: Option<Vec<f64>>,
}

impl PointCloud {
    pub fn new(samples: Vec<f64>, n_out: usize, d: usize, origin: CloudOrigin) -> Result<Self> {
        if n_out == 0 || d == 0 || samples.len() % (n_out * d) != 0 {
            return Err(Error::ShapeMismatch(format!("{} values do not form samples of {n_out}×{d}", samples.len())));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("point cloud samples"));
        }
        let len = samples.len() / (n_out * d);
        Ok(Self { samples, len, n_out, d, origin, metric_scale: vec![1.0; d], latent_dim: 0, latents: None })
    }

    pub fn with_metric_scale(mut self, scale: Vec<f64>) -> Result<Self> {
        if scale.len() != self.d {
            return Err(Error::DimensionMismatch { expected: self.d, got: scale.len() });
        }
        self.metric_scale = scale;
        Ok(self)
    }

    /// Attach the latent vector that produced each sample.
    pub fn with_latents(mut self, latent_dim: usize, latents: Vec<f64>) -> Result<Self> {
        if latents.len() != latent_dim * self.len {
            return Err(Error::ShapeMismatch(format!("{} latent values for {} samples of dimension {latent_dim}", latents.len(), self.len)));
        }
        self.latent_dim = latent_dim;
        self.latents = Some(latents);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn rows_per_sample(&self) -> usize {
        self.n_out
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn metric_scale(&self) -> &[f64] {
        &self.metric_scale
    }

    pub fn sample(&self, j: usize) -> &[f64] {
        let w = self.n_out * self.d;
        &self.samples[j * w..(j + 1) * w]
    }

    /// Rows matched against history (all but the head).
    pub fn tail(&self, j: usize) -> &[f64] {
        let s = self.sample(j);
        &s[..s.len() - self.d]
    }

    pub fn head(&self, j: usize) -> &[f64] {
        let s = self.sample(j);
        &s[s.len() - self.d..]
    }

    pub fn latent(&self, j: usize) -> Option<&[f64]> {
        self.latents.as_ref().map(|l| &l[j * self.latent_dim..(j + 1) * self.latent_dim])
    }

    /// Copy of the cloud with samples reordered as `order[new] = old`.
    pub fn permuted(&self, order: &[usize]) -> Self {
        let samples = order.iter().flat_map(|&j| self.sample(j).to_vec()).collect();
        let latents = self.latents.as_ref().map(|_| order.iter().flat_map(|&j| self.latent(j).unwrap().to_vec()).collect());
        Self { samples, latents, ..self.clone() }
    }
}

/// Most recent observed states, oldest first.
#[derive(Debug, Clone, PartialEq)]
pub struct History {
    states: Vec<f64>,
    d: usize,
    pub dt: f64,
    /// Time of the newest state.
    pub t_last: f64,
}

impl History {
    pub fn new(states: Vec<f64>, d: usize, dt: f64, t_last: f64) -> Result<Self> {
        if d == 0 || states.is_empty() || states.len() % d != 0 {
            return Err(Error::ShapeMismatch(format!("{} history values for dimension {d}", states.len())));
        }
        if states.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("history states"));
        }
        Ok(Self { states, d, dt, t_last })
    }

    /// The `rows` states of `traj` ending at index `end`.
    pub fn from_trajectory(traj: &Trajectory, end: usize, rows: usize) -> Result<Self> {
        if rows == 0 || end >= traj.len() || end + 1 < rows {
            return Err(Error::RangeTooShort { available: end.min(traj.len()) + 1, needed: rows });
        }
        let d = traj.dim();
        let states = traj.states()[(end + 1 - rows) * d..(end + 1) * d].to_vec();
        Self::new(states, d, traj.dt, traj.time(end))
    }

    pub fn rows(&self) -> usize {
        self.states.len() / self.d
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn last(&self) -> &[f64] {
        &self.states[self.states.len() - self.d..]
    }

    /// The newest `r` rows, oldest first.
    pub fn last_rows(&self, r: usize) -> Result<&[f64]> {
        if r > self.rows() {
            return Err(Error::RangeTooShort { available: self.rows(), needed: r });
        }
        Ok(&self.states[self.states.len() - r * self.d..])
    }

    /// Drop the oldest state and append `state`.
    pub fn push(&mut self, state: &[f64]) {
        self.states.drain(..self.d);
        self.states.extend_from_slice(state);
        self.t_last += self.dt;
    }
}

/// Anything that can produce a joint point cloud for the current history.
pub trait CloudSource {
    fn rows_out(&self) -> usize;
    fn dim(&self) -> usize;
    /// History rows the source reads when drawing.
    fn history_rows(&self) -> usize;
    /// True when draws depend on the history, forcing a fresh cloud every step.
    fn history_dependent(&self) -> bool;
    fn draw(&self, n: usize, history: &History, rng: &mut StreamRng) -> Result<PointCloud>;
}

impl CloudSource for VaeModel {
    fn rows_out(&self) -> usize {
        self.config.kind.out_rows()
    }

    fn dim(&self) -> usize {
        self.config.d
    }

    fn history_rows(&self) -> usize {
        self.config.kind.cond_rows().max(1)
    }

    fn history_dependent(&self) -> bool {
        self.config.kind.is_conditional()
    }

    fn draw(&self, n: usize, history: &History, rng: &mut StreamRng) -> Result<PointCloud> {
        let cond_rows = self.config.kind.cond_rows();
        let cond = (cond_rows > 0).then(|| history.last_rows(cond_rows)).transpose()?;
        self.sample_joint(n, cond, rng)
    }
}

impl CloudSource for PointCloud {
    fn rows_out(&self) -> usize {
        self.n_out
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn history_rows(&self) -> usize {
        (self.n_out - 1).max(1)
    }

    fn history_dependent(&self) -> bool {
        false
    }

    /// A fixed cloud ignores `n` and returns itself.
    fn draw(&self, _n: usize, _history: &History, _rng: &mut StreamRng) -> Result<PointCloud> {
        Ok(self.clone())
    }
}

/// Samples true two-state segments near the observed state.
///
/// Tails are the last history state plus `N(0, tail_sigma²)` noise; heads are
/// the exact one-step image of each tail plus `N(0, head_sigma²)` noise.
pub struct OracleSampler {
    d: usize,
    pub tail_sigma: f64,
    pub head_sigma: f64,
    step: Box<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>,
}

impl OracleSampler {
    pub fn new(d: usize, tail_sigma: f64, head_sigma: f64, step: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Self { d, tail_sigma, head_sigma, step: Box::new(step) }
    }

    pub fn lorenz63(params: Lorenz63Params, dt: f64, tail_sigma: f64, head_sigma: f64) -> Self {
        Self::new(3, tail_sigma, head_sigma, move |s| lorenz63_step(s, &params, dt))
    }
}

impl CloudSource for OracleSampler {
    fn rows_out(&self) -> usize {
        2
    }

    fn dim(&self) -> usize {
        self.d
    }

    fn history_rows(&self) -> usize {
        1
    }

    fn history_dependent(&self) -> bool {
        true
    }

    fn draw(&self, n: usize, history: &History, rng: &mut StreamRng) -> Result<PointCloud> {
        let h = history.last();
        let mut samples = Vec::with_capacity(n * 2 * self.d);
        for _ in 0..n {
            let tail: Vec<f64> = h.iter().map(|v| v + self.tail_sigma * rng.sample::<f64, _>(StandardNormal)).collect();
            let head = (self.step)(&tail);
            samples.extend_from_slice(&tail);
            samples.extend(head.iter().map(|v| v + self.head_sigma * rng.sample::<f64, _>(StandardNormal)));
        }
        PointCloud::new(samples, 2, self.d, CloudOrigin::Oracle)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ForecastMode {
    Sieve,
    Latent,
    SieveLatent,
}

impl fmt::Display for ForecastMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ForecastMode::Sieve => "sieve",
            ForecastMode::Latent => "latent",
            ForecastMode::SieveLatent => "sieve+latent",
        })
    }
}

impl FromStr for ForecastMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sieve" => Ok(ForecastMode::Sieve),
            "latent" => Ok(ForecastMode::Latent),
            "sieve+latent" | "sieve-latent" => Ok(ForecastMode::SieveLatent),
            other => Err(Error::invalid(format!("unknown forecast mode '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SieveConfig {
    /// Cloud size `N`.
    pub n_samples: usize,
    /// Ensemble size retained per step.
    pub k: usize,
    /// Redraw the cloud every step. History-dependent sources always redraw.
    pub resample: bool,
    pub search: SearchStrategy,
}

impl SieveConfig {
    pub fn new(n_samples: usize, k: usize) -> Self {
        Self { n_samples, k, resample: false, search: SearchStrategy::Scan }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForecastResult {
    pub forecast: Trajectory,
    pub ensembles: Vec<Ensemble>,
    /// Tail mismatch of the emitted sample at each step (normalized units).
    pub match_distances: Vec<f64>,
    pub mode: ForecastMode,
    pub resample: bool,
    /// Number of point clouds drawn over the run.
    pub cloud_draws: usize,
    pub initial_history: History,
}

impl ForecastResult {
    pub fn horizon(&self) -> usize {
        self.forecast.len()
    }

    /// One line per ensemble member: `step,rank,index,distance,weight,v0,v1,…`
    /// with the member's rows flattened oldest first.
    pub fn write_ensembles_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let (n_out, d) = self.ensembles.first().map_or((0, 0), |e| (e.rows_per_member(), e.dim()));
        write!(out, "step,rank,index,distance,weight")?;
        for r in 0..n_out {
            for c in 0..d {
                write!(out, ",r{r}_x{c}")?;
            }
        }
        writeln!(out)?;
        for (t, ens) in self.ensembles.iter().enumerate() {
            for i in 0..ens.len() {
                write!(out, "{t},{i},{},{},{}", ens.indices[i], ens.distances[i], ens.weights[i])?;
                for v in ens.member(i) {
                    write!(out, ",{v}")?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }
}

/// Parse ensembles written by [`ForecastResult::write_ensembles_csv`].
pub fn read_ensembles_csv<R: BufRead>(input: R, d: usize) -> Result<Vec<Ensemble>> {
    let mut lines = input.lines();
    let header = lines.next().transpose()?.ok_or_else(|| Error::Format("empty ensemble file".into()))?;
    let value_cols = header.split(',').count().saturating_sub(5);
    if d == 0 || value_cols % d != 0 {
        return Err(Error::Format(format!("ensemble header has {value_cols} value columns, not a multiple of {d}")));
    }
    let n_out = value_cols / d;
    let mut out = Vec::new();
    let mut cur: Option<(usize, Vec<f64>, Vec<f64>, Vec<f64>, Vec<usize>)> = None;
    let flush = |c: (usize, Vec<f64>, Vec<f64>, Vec<f64>, Vec<usize>), out: &mut Vec<Ensemble>| -> Result<()> {
        let (_, members, dist, weights, idx) = c;
        out.push(Ensemble::new(members, n_out, d, dist, idx)?.with_weights(weights)?);
        Ok(())
    };
    for (ln, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 5 + value_cols {
            return Err(Error::Format(format!("ensemble line {}: expected {} fields", ln + 2, 5 + value_cols)));
        }
        let bad = |what: &str| Error::Format(format!("ensemble line {}: bad {what}", ln + 2));
        let step: usize = fields[0].parse().map_err(|_| bad("step"))?;
        let index: usize = fields[2].parse().map_err(|_| bad("index"))?;
        let dist: f64 = fields[3].parse().map_err(|_| bad("distance"))?;
        let weight: f64 = fields[4].parse().map_err(|_| bad("weight"))?;
        let values = fields[5..].iter().map(|f| f.parse::<f64>().map_err(|_| bad("value"))).collect::<Result<Vec<_>>>()?;
        if cur.as_ref().is_some_and(|c| c.0 != step) {
            flush(cur.take().expect("checked"), &mut out)?;
        }
        if cur.is_none() {
            if step != out.len() {
                return Err(Error::Format(format!("ensemble steps out of order at line {}", ln + 2)));
            }
            cur = Some((step, Vec::new(), Vec::new(), Vec::new(), Vec::new()));
        }
        let c = cur.as_mut().expect("set above");
        c.1.extend(values);
        c.2.push(dist);
        c.3.push(weight);
        c.4.push(index);
    }
    if let Some(c) = cur {
        flush(c, &mut out)?;
    }
    Ok(out)
}

fn check_history(history: &History, d: usize, rows: usize) -> Result<()> {
    if history.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, got: history.dim() });
    }
    if history.rows() < rows {
        return Err(Error::RangeTooShort { available: history.rows(), needed: rows });
    }
    Ok(())
}

fn check_sieve(cfg: &SieveConfig) -> Result<()> {
    if cfg.k == 0 || cfg.n_samples == 0 {
        return Err(Error::invalid("sieving needs N ≥ 1 and k ≥ 1"));
    }
    Ok(())
}

pub(crate) fn forecast_trajectory(heads: Vec<f64>, d: usize, history: &History, tag: &str) -> Result<Trajectory> {
    let t0 = history.t_last + history.dt;
    if heads.is_empty() {
        Ok(Trajectory::empty(d, history.dt, t0, tag))
    } else {
        Trajectory::new(heads, d, history.dt, t0, tag)
    }
}

/// Autoregressive sieving (Algorithm "forecast through marginalization").
///
/// Each step draws a cloud (or reuses the first one), keeps the `k` samples
/// whose tails lie closest to the newest history states, emits the head of
/// the closest one and appends it to the history.
pub fn forecast_sieve<S: CloudSource + ?Sized>(
    source: &S,
    history: &History,
    horizon: usize,
    cfg: &SieveConfig,
    rng: &mut StreamRng,
) -> Result<ForecastResult> {
    check_sieve(cfg)?;
    check_history(history, source.dim(), source.history_rows())?;
    let resample = cfg.resample || source.history_dependent();
    let mut hist = history.clone();
    let mut shared: Option<(PointCloud, Option<KdTree>)> = None;
    let mut draws = 0;
    let mut heads = Vec::with_capacity(horizon * source.dim());
    let mut ensembles = Vec::with_capacity(horizon);
    let mut distances = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        if resample || shared.is_none() {
            let cloud = source.draw(cfg.n_samples, &hist, rng)?;
            let tree = matches!(cfg.search, SearchStrategy::KdTree).then(|| KdTree::build(&cloud));
            shared = Some((cloud, tree));
            draws += 1;
        }
        let (cloud, tree) = shared.as_ref().expect("drawn above");
        let ens = search::top_k_with(cloud, tree.as_ref(), &hist, cfg.k)?;
        distances.push(ens.distances[0]);
        heads.extend_from_slice(ens.head(0));
        hist.push(ens.head(0));
        ensembles.push(ens);
    }
    Ok(ForecastResult {
        forecast: forecast_trajectory(heads, source.dim(), history, "forecast")?,
        ensembles,
        match_distances: distances,
        mode: ForecastMode::Sieve,
        resample,
        cloud_draws: draws,
        initial_history: history.clone(),
    })
}

/// Sieving against one pre-drawn cloud shared across callers (no redraws).
pub fn forecast_sieve_shared(
    cloud: &PointCloud,
    tree: Option<&KdTree>,
    history: &History,
    horizon: usize,
    k: usize,
) -> Result<ForecastResult> {
    check_history(history, cloud.dim(), (cloud.rows_per_sample() - 1).max(1))?;
    let mut hist = history.clone();
    let mut heads = Vec::with_capacity(horizon * cloud.dim());
    let mut ensembles = Vec::with_capacity(horizon);
    let mut distances = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let ens = search::top_k_with(cloud, tree, &hist, k)?;
        distances.push(ens.distances[0]);
        heads.extend_from_slice(ens.head(0));
        hist.push(ens.head(0));
        ensembles.push(ens);
    }
    Ok(ForecastResult {
        forecast: forecast_trajectory(heads, cloud.dim(), history, "forecast")?,
        ensembles,
        match_distances: distances,
        mode: ForecastMode::Sieve,
        resample: false,
        cloud_draws: 0,
        initial_history: history.clone(),
    })
}

/// Sieving of several histories in lockstep against common clouds.
///
/// Every step draws one cloud (or reuses the first when `cfg.resample` is
/// off) and matches each history against it, so redrawing costs one draw
/// per step rather than one per history. Run `i` equals what
/// [`forecast_sieve`] would give with the same sequence of clouds.
/// History-dependent sources are rejected since one cloud cannot serve
/// different histories.
pub fn forecast_sieve_lockstep<S: CloudSource + ?Sized>(
    source: &S,
    histories: &[History],
    horizon: usize,
    cfg: &SieveConfig,
    rng: &mut StreamRng,
) -> Result<Vec<ForecastResult>> {
    check_sieve(cfg)?;
    if source.history_dependent() {
        return Err(Error::invalid("a history-dependent source cannot share clouds between histories"));
    }
    let Some(first) = histories.first() else {
        return Ok(Vec::new());
    };
    for h in histories {
        check_history(h, source.dim(), source.history_rows())?;
    }
    let d = source.dim();
    let mut hists: Vec<History> = histories.to_vec();
    let mut heads: Vec<Vec<f64>> = vec![Vec::with_capacity(horizon * d); histories.len()];
    let mut ensembles: Vec<Vec<Ensemble>> = (0..histories.len()).map(|_| Vec::with_capacity(horizon)).collect();
    let mut distances: Vec<Vec<f64>> = vec![Vec::with_capacity(horizon); histories.len()];
    let mut shared: Option<(PointCloud, Option<KdTree>)> = None;
    let mut draws = 0;
    for _ in 0..horizon {
        if cfg.resample || shared.is_none() {
            let cloud = source.draw(cfg.n_samples, first, rng)?;
            let tree = matches!(cfg.search, SearchStrategy::KdTree).then(|| KdTree::build(&cloud));
            shared = Some((cloud, tree));
            draws += 1;
        }
        let (cloud, tree) = shared.as_ref().expect("drawn above");
        for (i, hist) in hists.iter_mut().enumerate() {
            let ens = search::top_k_with(cloud, tree.as_ref(), hist, cfg.k)?;
            distances[i].push(ens.distances[0]);
            heads[i].extend_from_slice(ens.head(0));
            hist.push(ens.head(0));
            ensembles[i].push(ens);
        }
    }
    heads
        .into_iter()
        .zip(ensembles)
        .zip(distances)
        .zip(histories)
        .map(|(((heads, ensembles), match_distances), history)| {
            Ok(ForecastResult {
                forecast: forecast_trajectory(heads, d, history, "forecast")?,
                ensembles,
                match_distances,
                mode: ForecastMode::Sieve,
                resample: cfg.resample,
                cloud_draws: draws,
                initial_history: history.clone(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::integrate_lorenz63;
    use crate::rng::{stream, Stage};

    #[test]
    fn history_push_shifts_window() {
        let mut h = History::new(vec![1.0, 2.0, 3.0, 4.0], 2, 0.5, 1.0).unwrap();
        h.push(&[5.0, 6.0]);
        assert_eq!(h.states(), &[3.0, 4.0, 5.0, 6.0]);
        assert_eq!(h.t_last, 1.5);
        assert_eq!(h.last_rows(1).unwrap(), &[5.0, 6.0]);
        assert!(h.last_rows(3).is_err());
    }

    #[test]
    fn exact_cloud_reproduces_truth() {
        let traj = integrate_lorenz63(&[1.0, 1.0, 20.0], &Lorenz63Params::default(), 0.025, 300).unwrap();
        // every consecutive pair of the trajectory is a cloud member
        let samples: Vec<f64> = (0..300).flat_map(|i| traj.states()[i * 3..(i + 2) * 3].to_vec()).collect();
        let cloud = PointCloud::new(samples, 2, 3, CloudOrigin::Oracle).unwrap();
        let hist = History::from_trajectory(&traj, 100, 1).unwrap();
        let mut rng = stream(0, Stage::Test, 0);
        let res = forecast_sieve(&cloud, &hist, 150, &SieveConfig::new(1, 3), &mut rng).unwrap();
        assert_eq!(res.forecast.len(), 150);
        for t in 0..150 {
            assert_eq!(res.forecast.state(t), traj.state(101 + t));
            assert_eq!(res.match_distances[t], 0.0);
            assert_eq!(res.ensembles[t].head(0), res.forecast.state(t));
        }
        assert_eq!(res.cloud_draws, 1);
        assert!((res.forecast.time(0) - traj.time(101)).abs() < 1e-12);
    }

    #[test]
    fn reuse_and_resample_draw_counts() {
        let oracle = OracleSampler::lorenz63(Lorenz63Params::default(), 0.025, 1e-3, 1e-3);
        let hist = History::new(vec![1.0, 2.0, 20.0], 3, 0.025, 0.0).unwrap();
        let mut rng = stream(0, Stage::Test, 0);
        let res = forecast_sieve(&oracle, &hist, 7, &SieveConfig::new(50, 4), &mut rng).unwrap();
        assert_eq!(res.cloud_draws, 7);
        assert!(res.resample);

        let cloud = oracle.draw(200, &hist, &mut rng).unwrap();
        let res = forecast_sieve(&cloud, &hist, 7, &SieveConfig::new(200, 4), &mut rng).unwrap();
        assert_eq!(res.cloud_draws, 1);
        assert!(!res.resample);
    }

    #[test]
    fn horizon_zero_is_empty() {
        let cloud = PointCloud::new(vec![0.0, 1.0], 2, 1, CloudOrigin::Oracle).unwrap();
        let hist = History::new(vec![0.0], 1, 0.1, 2.0).unwrap();
        let res = forecast_sieve(&cloud, &hist, 0, &SieveConfig::new(1, 1), &mut stream(0, Stage::Test, 0)).unwrap();
        assert!(res.forecast.is_empty());
        assert!(res.ensembles.is_empty());
    }

    #[test]
    fn ensembles_csv_round_trip() {
        let oracle = OracleSampler::lorenz63(Lorenz63Params::default(), 0.025, 1e-2, 1e-3);
        let hist = History::new(vec![1.0, 2.0, 20.0], 3, 0.025, 0.0).unwrap();
        let res = forecast_sieve(&oracle, &hist, 5, &SieveConfig::new(40, 6), &mut stream(1, Stage::Test, 0)).unwrap();
        let mut buf = Vec::new();
        res.write_ensembles_csv(&mut buf).unwrap();
        let back = read_ensembles_csv(buf.as_slice(), 3).unwrap();
        assert_eq!(back, res.ensembles);
    }

    #[test]
    fn permuted_cloud_forecast_is_identical() {
        let oracle = OracleSampler::lorenz63(Lorenz63Params::default(), 0.025, 0.5, 1e-3);
        let hist = History::new(vec![-3.0, -4.0, 18.0], 3, 0.025, 0.0).unwrap();
        let cloud = oracle.draw(500, &hist, &mut stream(2, Stage::Test, 0)).unwrap();
        let order: Vec<usize> = (0..500).rev().collect();
        let perm = cloud.permuted(&order);
        let mut rng = stream(0, Stage::Test, 0);
        let a = forecast_sieve(&cloud, &hist, 20, &SieveConfig::new(500, 5), &mut rng).unwrap();
        let b = forecast_sieve(&perm, &hist, 20, &SieveConfig::new(500, 5), &mut rng).unwrap();
        assert_eq!(a.forecast, b.forecast);
        assert_eq!(a.match_distances, b.match_distances);
    }

    fn tiny_model() -> VaeModel {
        use crate::genmodel::{ModelConfig, ModelKind};
        let cfg = ModelConfig { kind: ModelKind::UncondJoint, n: 2, d: 3, latent_dim: 2, hidden_dims: vec![6], kl_weight: 1.0 };
        VaeModel::new(cfg, crate::windows::Normalizer::identity(3), 4).unwrap()
    }

    #[test]
    fn lockstep_matches_single_runs_on_a_fixed_cloud() {
        let oracle = OracleSampler::lorenz63(Lorenz63Params::default(), 0.025, 3.0, 1e-3);
        let cloud = oracle.draw(400, &History::new(vec![1.0, 2.0, 20.0], 3, 0.025, 0.0).unwrap(), &mut stream(3, Stage::Test, 0)).unwrap();
        let hists: Vec<History> = [[1.0, 2.0, 20.0], [0.5, 1.0, 21.0], [2.0, 2.0, 19.0]]
            .iter()
            .map(|s| History::new(s.to_vec(), 3, 0.025, 0.0).unwrap())
            .collect();
        let cfg = SieveConfig::new(400, 5);
        let all = forecast_sieve_lockstep(&cloud, &hists, 12, &cfg, &mut stream(0, Stage::Test, 0)).unwrap();
        for (h, res) in hists.iter().zip(&all) {
            let single = forecast_sieve(&cloud, h, 12, &cfg, &mut stream(0, Stage::Test, 0)).unwrap();
            assert_eq!(*res, single);
        }
    }

    #[test]
    fn lockstep_redraws_once_per_step() {
        let model = tiny_model();
        let hist = History::new(vec![0.1, 0.2, 0.3], 3, 0.1, 0.0).unwrap();
        let cfg = SieveConfig { resample: true, ..SieveConfig::new(60, 4) };
        let one = forecast_sieve_lockstep(&model, &[hist.clone()], 6, &cfg, &mut stream(1, Stage::Test, 0)).unwrap();
        let single = forecast_sieve(&model, &hist, 6, &cfg, &mut stream(1, Stage::Test, 0)).unwrap();
        assert_eq!(one[0], single);
        let two = forecast_sieve_lockstep(&model, &[hist.clone(), hist], 6, &cfg, &mut stream(1, Stage::Test, 0)).unwrap();
        assert_eq!(two[0], two[1]);
        assert_eq!(two[0].cloud_draws, 6);
        assert!(forecast_sieve_lockstep(&model, &[], 6, &cfg, &mut stream(1, Stage::Test, 0)).unwrap().is_empty());
    }

    #[test]
    fn lockstep_rejects_history_dependent_sources() {
        let oracle = OracleSampler::lorenz63(Lorenz63Params::default(), 0.025, 1e-3, 1e-3);
        let hist = History::new(vec![1.0, 2.0, 20.0], 3, 0.025, 0.0).unwrap();
        assert!(forecast_sieve_lockstep(&oracle, &[hist], 3, &SieveConfig::new(10, 2), &mut stream(0, Stage::Test, 0)).is_err());
    }
}
