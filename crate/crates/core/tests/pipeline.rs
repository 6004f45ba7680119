//! Library stages chained end to end on a small Lorenz-63 run.

use jointcast::dynamics::{discard_transient, integrate_lorenz63, Lorenz63Params, Trajectory};
use jointcast::eval::{mae_curve, regress_series, CvScheme, RegressorSeries};
use jointcast::genmodel::{train, ModelConfig, ModelKind, TrainConfig, VaeModel};
use jointcast::inference::{forecast_sieve, forecast_sieve_lockstep, ForecastResult, History, OracleSampler, SieveConfig};
use jointcast::rng::{stream, Stage};
use jointcast::transport::SinkhornConfig;
use jointcast::uq::{compute_uq_series, UqConfig, UqSeries, Weighting};
use jointcast::windows::{build_windows, Sampling};

const DT: f64 = 0.01;
const TRAIN_END: usize = 1500;
const HORIZON: usize = 25;

fn trajectory() -> Trajectory {
    let raw = integrate_lorenz63(&[1.0, 1.0, 1.0], &Lorenz63Params::default(), DT, 3000).unwrap();
    let traj = discard_transient(&raw, 5.0).unwrap();
    assert!(traj.len() > TRAIN_END + 500);
    traj
}

fn trained(traj: &Trajectory, seed: u64) -> VaeModel {
    let t_end = traj.time(TRAIN_END);
    let ws = build_windows(traj, 2, 1500, (traj.t0, t_end), Sampling::UniformRandom, &mut stream(seed, Stage::Windows, 0)).unwrap();
    let mc = ModelConfig { hidden_dims: vec![16, 16], kl_weight: 0.1, ..ModelConfig::new(ModelKind::UncondJoint, 3) };
    let tc = TrainConfig { epochs: 4, batch_size: 100, lr: 1e-3, lr_decay_gamma: 1.0, seed };
    train(&ws, mc, &tc).unwrap().0
}

fn starts() -> Vec<usize> {
    vec![TRAIN_END + 40, TRAIN_END + 140, TRAIN_END + 240]
}

fn sieve(model: &VaeModel, traj: &Trajectory, seed: u64) -> Vec<ForecastResult> {
    let cfg = SieveConfig { resample: true, ..SieveConfig::new(300, 8) };
    starts()
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            let h = History::from_trajectory(traj, s, 1).unwrap();
            forecast_sieve(model, &h, HORIZON, &cfg, &mut stream(seed, Stage::Forecast, i as u64)).unwrap()
        })
        .collect()
}

fn uq(result: &ForecastResult) -> UqSeries {
    let cfg = UqConfig { sinkhorn: SinkhornConfig::default(), weighting: Weighting::Uniform };
    compute_uq_series(result, &cfg).unwrap()
}

fn truth(traj: &Trajectory, start: usize) -> Trajectory {
    traj.slice(start + 1, start + 1 + HORIZON).unwrap()
}

#[test]
fn stages_chain_with_consistent_shapes() {
    let traj = trajectory();
    let model = trained(&traj, 3);
    let results = sieve(&model, &traj, 3);
    let refs: Vec<Trajectory> = starts().iter().map(|&s| truth(&traj, s)).collect();
    for (r, truth) in results.iter().zip(&refs) {
        assert_eq!(r.horizon(), HORIZON);
        assert_eq!(r.cloud_draws, HORIZON);
        assert_eq!(r.ensembles.len(), HORIZON);
        assert!(r.ensembles.iter().all(|e| e.len() == 8 && e.dim() == 3));
        // forecast times continue the history on the reference grid
        for i in 0..HORIZON {
            assert!((r.forecast.time(i) - truth.time(i)).abs() < 1e-9);
        }
        let series = uq(r);
        assert_eq!(series.len(), HORIZON);
        let mut sum = 0.0;
        for (s, rec) in series.wd_signed.iter().zip(&series.wd_recon) {
            sum += s;
            assert_eq!(*rec, sum);
        }
    }
    let forecasts: Vec<Trajectory> = results.iter().map(|r| r.forecast.clone()).collect();
    let mae = mae_curve(&forecasts, &refs).unwrap();
    assert_eq!(mae.mean_curve.len(), HORIZON);
    assert!(mae.mean_curve.iter().all(|v| v.is_finite() && *v >= 0.0));

    let reg = RegressorSeries::from(&uq(&results[0]));
    let err: Vec<f64> = (0..HORIZON)
        .map(|t| results[0].forecast.state(t).iter().zip(refs[0].state(t)).map(|(a, b)| (a - b).abs()).sum::<f64>() / 3.0)
        .collect();
    let report = regress_series(&reg, &err, CvScheme::InSample).unwrap();
    assert!(report.rho_multiple.is_finite() && report.rho_multiple.abs() <= 1.0 + 1e-12);
    // adding regressors never lowers the in-sample fit
    assert!(report.rho_single.iter().all(|r| !r.is_finite() || *r <= report.rho_multiple + 1e-9), "{report:?}");
}

#[test]
fn reruns_are_bitwise_identical() {
    let traj = trajectory();
    let a = trained(&traj, 11);
    let b = trained(&traj, 11);
    let (mut ba, mut bb) = (Vec::new(), Vec::new());
    a.write_binary(&mut ba).unwrap();
    b.write_binary(&mut bb).unwrap();
    assert_eq!(ba, bb);
    assert_eq!(sieve(&a, &traj, 11), sieve(&b, &traj, 11));

    let c = trained(&traj, 12);
    let mut bc = Vec::new();
    c.write_binary(&mut bc).unwrap();
    assert_ne!(ba, bc);
}

#[test]
fn reloaded_checkpoint_forecasts_identically() {
    let traj = trajectory();
    let model = trained(&traj, 5);
    let mut bytes = Vec::new();
    model.write_binary(&mut bytes).unwrap();
    let back = VaeModel::read_binary(bytes.as_slice()).unwrap();
    assert_eq!(sieve(&model, &traj, 5), sieve(&back, &traj, 5));
}

#[test]
fn lockstep_runs_share_every_cloud() {
    let traj = trajectory();
    let model = trained(&traj, 7);
    let histories: Vec<History> = starts().iter().map(|&s| History::from_trajectory(&traj, s, 1).unwrap()).collect();
    let cfg = SieveConfig { resample: true, ..SieveConfig::new(300, 8) };
    let shared = forecast_sieve_lockstep(&model, &histories, HORIZON, &cfg, &mut stream(7, Stage::Cloud, 0)).unwrap();
    assert_eq!(shared.len(), histories.len());
    // one run against the same stream sees the same clouds as the first lockstep run
    let single = forecast_sieve(&model, &histories[0], HORIZON, &cfg, &mut stream(7, Stage::Cloud, 0)).unwrap();
    assert_eq!(shared[0].forecast, single.forecast);
    assert!(shared.iter().all(|r| r.cloud_draws == HORIZON && r.horizon() == HORIZON));
}

#[test]
fn noiseless_oracle_reproduces_the_trajectory() {
    let traj = trajectory();
    let oracle = OracleSampler::lorenz63(Lorenz63Params::default(), DT, 0.0, 0.0);
    let start = TRAIN_END + 10;
    let h = History::from_trajectory(&traj, start, 1).unwrap();
    let r = forecast_sieve(&oracle, &h, HORIZON, &SieveConfig::new(20, 4), &mut stream(1, Stage::Forecast, 0)).unwrap();
    let truth = truth(&traj, start);
    for t in 0..HORIZON {
        for (a, b) in r.forecast.state(t).iter().zip(truth.state(t)) {
            assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0), "step {t}: {a} vs {b}");
        }
    }
    assert!(r.match_distances.iter().all(|d| *d == 0.0));
}
