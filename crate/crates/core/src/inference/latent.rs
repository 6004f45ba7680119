//! Latent optimal control: steer a decoded sample's tail onto the observed
//! history by gradient descent in latent space, then emit its head.

use super::{check_history, check_sieve, forecast_trajectory, search, ForecastMode, ForecastResult, History, KdTree, SearchStrategy, SieveConfig};
use crate::error::{Error, Result};
use crate::genmodel::VaeModel;
use crate::inference::CloudSource;
use crate::linalg::Matrix;
use crate::rng::StreamRng;
use crate::uq::Ensemble;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LatentInit {
    /// Encode the newest state repeated in every row (the unknown head padded with it).
    EncodeHistory,
    /// Start from the latent of the closest sieved sample.
    BestSieved,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LatentControlConfig {
    pub max_iters: usize,
    pub step_size: f64,
    /// Stop once the tail mismatch (normalized units) drops below this.
    pub tol: f64,
    pub init: LatentInit,
}

impl Default for LatentControlConfig {
    fn default() -> Self {
        Self { max_iters: 200, step_size: 0.1, tol: 1e-6, init: LatentInit::EncodeHistory }
    }
}

impl LatentControlConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size > 0.0) || !(self.tol > 0.0) {
            return Err(Error::invalid("latent control needs positive step size and tolerance"));
        }
        Ok(())
    }
}

fn require_unconditional(model: &VaeModel) -> Result<()> {
    if model.config.kind.is_conditional() || !model.config.kind.is_joint() {
        return Err(Error::invalid(format!("latent control needs an unconditional joint model, got {}", model.config.kind)));
    }
    Ok(())
}

/// `L(z) = ‖decode(z)_tail − target‖` and `∇L`, with `target` in normalized units.
pub fn latent_loss_and_grad(model: &VaeModel, z: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    require_unconditional(model)?;
    let l = model.latent_dim();
    if z.len() != l {
        return Err(Error::DimensionMismatch { expected: l, got: z.len() });
    }
    let out_dim = model.config.out_dim();
    let tail_len = out_dim - model.config.d;
    if target.len() != tail_len {
        return Err(Error::DimensionMismatch { expected: tail_len, got: target.len() });
    }
    let (out, tape) = model.params.decoder.forward_taped(Matrix::from_vec(1, l, z.to_vec())?);
    let r: Vec<f64> = out.as_slice()[..tail_len].iter().zip(target).map(|(a, b)| a - b).collect();
    let loss = r.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !loss.is_finite() {
        return Err(Error::non_finite("latent tail loss"));
    }
    if loss == 0.0 {
        return Ok((0.0, vec![0.0; l]));
    }
    let mut g = vec![0.0; out_dim];
    for (gi, ri) in g.iter_mut().zip(&r) {
        *gi = ri / loss;
    }
    let grad = model.params.decoder.backward_input(tape, Matrix::from_vec(1, out_dim, g)?);
    Ok((loss, grad.into_vec()))
}

/// Gradient descent on `L(z)` from `z_init` with step halving on any increase.
///
/// `target_tail` is in physical units. Only strictly improving steps are
/// accepted, so the returned iterate is the best one visited.
pub fn latent_control_step(model: &VaeModel, z_init: &[f64], target_tail: &[f64], cfg: &LatentControlConfig) -> Result<(Vec<f64>, f64)> {
    cfg.validate()?;
    let target = model.normalizer.apply(target_tail);
    descend(model, z_init, &target, cfg)
}

fn descend(model: &VaeModel, z_init: &[f64], target: &[f64], cfg: &LatentControlConfig) -> Result<(Vec<f64>, f64)> {
    let (mut loss, mut grad) = latent_loss_and_grad(model, z_init, target)?;
    let mut z = z_init.to_vec();
    let mut step = cfg.step_size;
    let min_step = cfg.step_size * 1e-12;
    for _ in 0..cfg.max_iters {
        if loss < cfg.tol || step < min_step {
            break;
        }
        let cand: Vec<f64> = z.iter().zip(&grad).map(|(a, g)| a - step * g).collect();
        let (cl, cg) = latent_loss_and_grad(model, &cand, target)?;
        if cl < loss {
            z = cand;
            loss = cl;
            grad = cg;
        } else {
            step *= 0.5;
        }
    }
    Ok((z, loss))
}

/// Autoregressive forecast driven by latent optimal control.
///
/// Without `sieve` each step starts from the encoded history and the ensemble
/// is the single optimized sample. With `sieve` each step first sieves a cloud,
/// starts from the best member's latent and replaces that member only when
/// the optimized tail mismatch does not exceed its sieve distance.
pub fn forecast_latent(
    model: &VaeModel,
    history: &History,
    horizon: usize,
    cfg: &LatentControlConfig,
    sieve: Option<&SieveConfig>,
    rng: &mut StreamRng,
) -> Result<ForecastResult> {
    require_unconditional(model)?;
    cfg.validate()?;
    let d = model.config.d;
    check_history(history, d, 1)?;
    match (cfg.init, sieve) {
        (LatentInit::BestSieved, None) => return Err(Error::invalid("best-sieved initialization needs a sieve configuration")),
        (LatentInit::EncodeHistory, Some(_)) => {
            return Err(Error::invalid("a sieve configuration implies best-sieved initialization"))
        }
        (_, Some(s)) => check_sieve(s)?,
        _ => {}
    }
    let resample = sieve.is_some_and(|s| s.resample);
    let mut hist = history.clone();
    let mut shared: Option<(super::PointCloud, Option<KdTree>)> = None;
    let mut draws = 0;
    let mut heads = Vec::with_capacity(horizon * d);
    let mut ensembles = Vec::with_capacity(horizon);
    let mut distances = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let target = model.normalizer.apply(hist.last());
        let ens = match sieve {
            None => {
                let padded: Vec<f64> = target.iter().chain(&target).copied().collect();
                let (mu, _) = model.encode(&padded, &[])?;
                let (z, loss) = descend(model, &mu, &target, cfg)?;
                let mut sample = model.decode(&z, &[])?;
                model.normalizer.invert_in_place(&mut sample);
                Ensemble::new(sample, 2, d, vec![loss], vec![0])?
            }
            Some(s) => {
                if resample || shared.is_none() {
                    let cloud = model.draw(s.n_samples, &hist, rng)?;
                    let tree = matches!(s.search, SearchStrategy::KdTree).then(|| KdTree::build(&cloud));
                    shared = Some((cloud, tree));
                    draws += 1;
                }
                let (cloud, tree) = shared.as_ref().expect("drawn above");
                let mut ens = search::top_k_with(cloud, tree.as_ref(), &hist, s.k)?;
                let z0 = cloud.latent(ens.indices[0]).ok_or_else(|| Error::invalid("cloud carries no latent vectors"))?;
                let (z, loss) = descend(model, z0, &target, cfg)?;
                if z != z0 && loss <= ens.distances[0] {
                    let mut sample = model.decode(&z, &[])?;
                    model.normalizer.invert_in_place(&mut sample);
                    ens.member_mut(0).copy_from_slice(&sample);
                    ens.distances[0] = loss;
                }
                ens
            }
        };
        distances.push(ens.distances[0]);
        heads.extend_from_slice(ens.head(0));
        hist.push(ens.head(0));
        ensembles.push(ens);
    }
    Ok(ForecastResult {
        forecast: forecast_trajectory(heads, d, history, "forecast")?,
        ensembles,
        match_distances: distances,
        mode: if sieve.is_some() { ForecastMode::SieveLatent } else { ForecastMode::Latent },
        resample,
        cloud_draws: draws,
        initial_history: history.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genmodel::{ModelConfig, ModelKind};
    use crate::inference::forecast_sieve;
    use crate::linalg::{cholesky, cholesky_solve, matmul_tn};
    use crate::rng::{stream, Stage};
    use crate::windows::Normalizer;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn model(hidden: Vec<usize>, latent: usize, seed: u64) -> VaeModel {
        let cfg = ModelConfig { kind: ModelKind::UncondJoint, n: 2, d: 3, latent_dim: latent, hidden_dims: hidden, kl_weight: 1.0 };
        VaeModel::new(cfg, Normalizer::identity(3), seed).unwrap()
    }

    #[test]
    fn already_optimal_is_unchanged() {
        let m = model(vec![6], 2, 1);
        let z = vec![0.3, -0.2];
        let mut tail = m.decode(&z, &[]).unwrap();
        tail.truncate(3);
        let cfg = LatentControlConfig { tol: 1e-3, ..LatentControlConfig::default() };
        let (zs, loss) = latent_control_step(&m, &z, &tail, &cfg).unwrap();
        assert_eq!(zs, z);
        assert!(loss < 1e-12);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for seed in 0..10 {
            let m = model(vec![8, 8], 3, seed);
            let mut rng = stream(seed, Stage::Test, 3);
            let z: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
            let target: Vec<f64> = (0..3).map(|_| rng.sample(StandardNormal)).collect();
            let (_, g) = latent_loss_and_grad(&m, &z, &target).unwrap();
            for i in 0..3 {
                let h = 1e-5;
                let mut zp = z.clone();
                zp[i] += h;
                let mut zm = z.clone();
                zm[i] -= h;
                let fd = (latent_loss_and_grad(&m, &zp, &target).unwrap().0 - latent_loss_and_grad(&m, &zm, &target).unwrap().0) / (2.0 * h);
                assert!((fd - g[i]).abs() <= 1e-4 * fd.abs().max(g[i].abs()).max(1e-3), "seed {seed}: {fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn linear_decoder_reaches_least_squares() {
        let m = model(vec![], 2, 5);
        let w = &m.params.decoder.layers[0];
        // tail block of the decoder: z ↦ z·W[:, 0..3] + b[0..3]
        let a = Matrix::from_fn(3, 2, |i, j| w.weight.get(j, i));
        let target = [0.7, -1.2, 0.4];
        let rhs: Vec<f64> = (0..3).map(|i| target[i] - w.bias[i]).collect();
        let ata = matmul_tn(&a, &a);
        let atb = matmul_tn(&a, &Matrix::from_vec(3, 1, rhs).unwrap());
        let z_ls = cholesky_solve(&cholesky(&ata).unwrap(), atb.as_slice());
        let cfg = LatentControlConfig { max_iters: 20_000, tol: 1e-14, ..LatentControlConfig::default() };
        let (z, _) = latent_control_step(&m, &[0.0, 0.0], &target, &cfg).unwrap();
        for j in 0..2 {
            assert!((z[j] - z_ls[j]).abs() < 1e-6, "{z:?} vs {z_ls:?}");
        }
    }

    #[test]
    fn infinite_tolerance_reduces_to_sieving() {
        let m = model(vec![8], 2, 7);
        let hist = History::new(vec![0.1, 0.2, -0.3], 3, 0.1, 0.0).unwrap();
        let sieve = SieveConfig::new(300, 5);
        let cfg = LatentControlConfig { tol: f64::INFINITY, init: LatentInit::BestSieved, ..LatentControlConfig::default() };
        let a = forecast_latent(&m, &hist, 12, &cfg, Some(&sieve), &mut stream(3, Stage::Forecast, 0)).unwrap();
        let b = forecast_sieve(&m, &hist, 12, &sieve, &mut stream(3, Stage::Forecast, 0)).unwrap();
        assert_eq!(a.forecast, b.forecast);
        assert_eq!(a.ensembles, b.ensembles);
        assert_eq!(a.mode, ForecastMode::SieveLatent);
    }

    #[test]
    fn refinement_never_worsens_the_match() {
        let m = model(vec![8], 2, 8);
        let hist = History::new(vec![0.5, -0.5, 0.2], 3, 0.1, 0.0).unwrap();
        let sieve = SieveConfig::new(200, 4);
        let cfg = LatentControlConfig { init: LatentInit::BestSieved, ..LatentControlConfig::default() };
        let refined = forecast_latent(&m, &hist, 15, &cfg, Some(&sieve), &mut stream(4, Stage::Forecast, 0)).unwrap();
        // replay the same clouds without optimization, step by step from the refined path
        let cloud = m.draw(200, &hist, &mut stream(4, Stage::Forecast, 0)).unwrap();
        let mut h = hist.clone();
        for t in 0..15 {
            let sieved = crate::inference::top_k_match(&cloud, &h, 1).unwrap();
            assert!(refined.match_distances[t] <= sieved.distances[0], "step {t}");
            h.push(refined.forecast.state(t));
        }
    }

    #[test]
    fn encode_history_mode_and_empty_horizon() {
        let m = model(vec![8], 2, 9);
        let hist = History::new(vec![0.5, -0.5, 0.2], 3, 0.1, 0.0).unwrap();
        let cfg = LatentControlConfig::default();
        let res = forecast_latent(&m, &hist, 5, &cfg, None, &mut stream(0, Stage::Forecast, 0)).unwrap();
        assert_eq!(res.forecast.len(), 5);
        assert_eq!(res.ensembles[0].len(), 1);
        assert_eq!(res.cloud_draws, 0);
        let empty = forecast_latent(&m, &hist, 0, &cfg, None, &mut stream(0, Stage::Forecast, 0)).unwrap();
        assert!(empty.forecast.is_empty());
    }

    #[test]
    fn conditional_models_are_rejected() {
        let cfg = ModelConfig { kind: ModelKind::CondJoint, n: 2, d: 3, latent_dim: 2, hidden_dims: vec![], kl_weight: 1.0 };
        let m = VaeModel::new(cfg, Normalizer::identity(3), 0).unwrap();
        assert!(latent_loss_and_grad(&m, &[0.0, 0.0], &[0.0; 3]).is_err());
    }
}
