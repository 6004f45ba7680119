//! Forecast verification: error curves, distribution comparison and the
//! regressions that relate uncertainty metrics to realized error.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::linalg::{cholesky, cholesky_solve, Matrix};
use crate::uq::UqSeries;

/// Mean absolute error per lead time, averaged over initial conditions.
#[derive(Debug, Clone, PartialEq)]
pub struct MaeReport {
    /// `[H × d]`.
    pub per_component: Matrix,
    /// Row means of `per_component`.
    pub mean_curve: Vec<f64>,
    pub n_ics: usize,
    pub dt: f64,
}

impl MaeReport {
    /// CSV with `step,lead_time,mae_mean,mae_0,…`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "step,lead_time,mae_mean")?;
        (0..self.per_component.cols()).try_for_each(|c| write!(out, ",mae_{c}"))?;
        writeln!(out)?;
        for t in 0..self.mean_curve.len() {
            write!(out, "{},{},{}", t + 1, (t + 1) as f64 * self.dt, self.mean_curve[t])?;
            self.per_component.row(t).iter().try_for_each(|v| write!(out, ",{v}"))?;
            writeln!(out)?;
        }
        Ok(())
    }
}

/// `MAE(t, c) = mean_i |forecast_i(t, c) − reference_i(t, c)|`.
pub fn mae_curve(forecasts: &[Trajectory], references: &[Trajectory]) -> Result<MaeReport> {
    if forecasts.len() != references.len() {
        return Err(Error::LengthMismatch(format!("{} forecasts vs {} references", forecasts.len(), references.len())));
    }
    let first = forecasts.first().ok_or_else(|| Error::invalid("MAE needs at least one forecast"))?;
    let (h, d) = (first.len(), first.dim());
    for (i, (f, r)) in forecasts.iter().zip(references).enumerate() {
        if f.len() != h || r.len() != h || f.dim() != d || r.dim() != d {
            return Err(Error::LengthMismatch(format!(
                "pair {i}: forecast {}×{}, reference {}×{}, expected {h}×{d}",
                f.len(),
                f.dim(),
                r.len(),
                r.dim()
            )));
        }
    }
    let mut per_component = Matrix::zeros(h, d);
    for (f, r) in forecasts.iter().zip(references) {
        for (acc, (a, b)) in per_component.as_mut_slice().iter_mut().zip(f.states().iter().zip(r.states())) {
            *acc += (a - b).abs();
        }
    }
    let n = forecasts.len() as f64;
    per_component.as_mut_slice().iter_mut().for_each(|v| *v /= n);
    let mean_curve = (0..h).map(|t| per_component.row(t).iter().sum::<f64>() / d as f64).collect();
    Ok(MaeReport { per_component, mean_curve, n_ics: forecasts.len(), dt: first.dt })
}

/// Per-component mean of `|x_i − x_j|` over `pairs` random pairs of distinct states.
pub fn climatological_mae<R: Rng + ?Sized>(states: &Trajectory, pairs: usize, rng: &mut R) -> Result<Vec<f64>> {
    let n = states.len();
    if n < 2 || pairs == 0 {
        return Err(Error::invalid("climatological MAE needs at least two states and one pair"));
    }
    let mut acc = vec![0.0; states.dim()];
    for _ in 0..pairs {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        for (a, (x, y)) in acc.iter_mut().zip(states.state(i).iter().zip(states.state(j))) {
            *a += (x - y).abs();
        }
    }
    Ok(acc.into_iter().map(|a| a / pairs as f64).collect())
}

/// One labeled set of trajectories pooled into a single histogram.
#[derive(Debug, Clone)]
pub struct HistSource<'a> {
    pub label: String,
    pub trajectories: Vec<&'a Trajectory>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HistMode {
    PerComponent,
    /// All components pooled into one sample set.
    Aggregate,
}

/// Outer windows of the reference range: `[min, min + f·range]` and `[max − f·range, max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailWindow {
    pub lower: (f64, f64),
    pub upper: (f64, f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HistReport {
    pub mode: HistMode,
    /// One edge vector (`bins + 1` entries) per histogram channel.
    pub bin_edges: Vec<Vec<f64>>,
    pub labels: Vec<String>,
    /// `densities[source][channel][bin]`, relative frequencies.
    pub densities: Vec<Vec<Vec<f64>>>,
    pub tail_windows: Vec<TailWindow>,
}

impl HistReport {
    /// Long-format CSV: `channel,bin,lo,hi,<label>…`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        write!(out, "channel,bin,lo,hi")?;
        self.labels.iter().try_for_each(|l| write!(out, ",{l}"))?;
        writeln!(out)?;
        for (ch, edges) in self.bin_edges.iter().enumerate() {
            for b in 0..edges.len() - 1 {
                write!(out, "{ch},{b},{},{}", edges[b], edges[b + 1])?;
                for src in &self.densities {
                    write!(out, ",{}", src[ch][b])?;
                }
                writeln!(out)?;
            }
        }
        Ok(())
    }

    /// CSV of tail windows: `channel,lower_lo,lower_hi,upper_lo,upper_hi`.
    pub fn write_tails_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "channel,lower_lo,lower_hi,upper_lo,upper_hi")?;
        for (ch, w) in self.tail_windows.iter().enumerate() {
            writeln!(out, "{ch},{},{},{},{}", w.lower.0, w.lower.1, w.upper.0, w.upper.1)?;
        }
        Ok(())
    }
}

fn channel_values(src: &HistSource<'_>, mode: HistMode, d: usize) -> Vec<Vec<f64>> {
    match mode {
        HistMode::Aggregate => vec![src.trajectories.iter().flat_map(|t| t.states().iter().copied()).collect()],
        HistMode::PerComponent => (0..d).map(|c| src.trajectories.iter().flat_map(|t| t.component(c)).collect()).collect(),
    }
}

/// Shared-bin relative-frequency histograms for every source.
///
/// Tail windows are taken from the source labeled `reference`, or from the
/// first source when no such label exists.
pub fn histogram_compare(sources: &[HistSource<'_>], bins: usize, tail_fraction: f64, mode: HistMode) -> Result<HistReport> {
    if bins < 2 {
        return Err(Error::invalid("histograms need at least two bins"));
    }
    if !(0.0..=0.5).contains(&tail_fraction) {
        return Err(Error::invalid(format!("tail fraction must lie in [0, 0.5], got {tail_fraction}")));
    }
    let first = sources.first().ok_or_else(|| Error::invalid("no histogram sources"))?;
    let d = first.trajectories.first().map_or(0, |t| t.dim());
    let mut values = Vec::with_capacity(sources.len());
    for s in sources {
        if s.trajectories.iter().any(|t| t.dim() != d) {
            return Err(Error::DimensionMismatch { expected: d, got: s.trajectories.iter().map(|t| t.dim()).find(|&x| x != d).unwrap_or(0) });
        }
        let v = channel_values(s, mode, d);
        if v.is_empty() || v.iter().any(|c| c.is_empty()) {
            return Err(Error::EmptySource(s.label.clone()));
        }
        if v.iter().flatten().any(|x| !x.is_finite()) {
            return Err(Error::non_finite(format!("histogram source '{}'", s.label)));
        }
        values.push(v);
    }
    let channels = values[0].len();
    let mut bin_edges = Vec::with_capacity(channels);
    for ch in 0..channels {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in &values {
            for &x in &v[ch] {
                lo = lo.min(x);
                hi = hi.max(x);
            }
        }
        if hi == lo {
            lo -= 0.5;
            hi += 0.5;
        }
        let w = (hi - lo) / bins as f64;
        let mut edges: Vec<f64> = (0..=bins).map(|b| lo + b as f64 * w).collect();
        edges[bins] = hi;
        bin_edges.push(edges);
    }
    let densities = values
        .iter()
        .map(|v| {
            (0..channels)
                .map(|ch| {
                    let edges = &bin_edges[ch];
                    let (lo, hi) = (edges[0], edges[bins]);
                    let mut counts = vec![0.0; bins];
                    for &x in &v[ch] {
                        let b = (((x - lo) / (hi - lo)) * bins as f64).floor() as isize;
                        counts[b.clamp(0, bins as isize - 1) as usize] += 1.0;
                    }
                    let n = v[ch].len() as f64;
                    counts.iter().map(|c| c / n).collect()
                })
                .collect()
        })
        .collect();
    let ref_idx = sources.iter().position(|s| s.label == "reference").unwrap_or(0);
    let tail_windows = values[ref_idx]
        .iter()
        .map(|v| {
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let span = tail_fraction * (hi - lo);
            TailWindow { lower: (lo, lo + span), upper: (hi - span, hi) }
        })
        .collect();
    Ok(HistReport { mode, bin_edges, labels: sources.iter().map(|s| s.label.clone()).collect(), densities, tail_windows })
}

/// Product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(format!("{} vs {} samples", x.len(), y.len())));
    }
    if x.len() < 2 {
        return Err(Error::invalid("correlation needs at least two samples"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance(if sxx == 0.0 { "first series" } else { "second series" }.into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    /// Intercept first, then one slope per regressor column.
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub fitted: Vec<f64>,
    /// True when the ridge fallback was needed.
    pub ridge: bool,
}

impl OlsFit {
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.coefficients[0] + row.iter().zip(&self.coefficients[1..]).map(|(x, b)| x * b).sum::<f64>()
    }
}

/// Ridge added to the normal equations when they are numerically singular.
pub const RIDGE_FALLBACK: f64 = 1e-10;

/// Least squares with an intercept via the normal equations.
pub fn ols_fit(y: &[f64], x: &Matrix) -> Result<OlsFit> {
    let (t, p) = (x.rows(), x.cols());
    if y.len() != t {
        return Err(Error::LengthMismatch(format!("{} responses for {t} design rows", y.len())));
    }
    if t <= p + 1 {
        return Err(Error::invalid(format!("OLS with {p} regressors needs more than {} observations, got {t}", p + 1)));
    }
    if !x.all_finite() || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::non_finite("regression data"));
    }
    let q = p + 1;
    let mut xtx = Matrix::zeros(q, q);
    let mut xty = vec![0.0; q];
    let aug = |r: usize, j: usize| if j == 0 { 1.0 } else { x.get(r, j - 1) };
    for r in 0..t {
        for i in 0..q {
            let xi = aug(r, i);
            xty[i] += xi * y[r];
            for j in 0..=i {
                let v = xtx.get(i, j) + xi * aug(r, j);
                xtx.set(i, j, v);
            }
        }
    }
    for i in 0..q {
        for j in 0..i {
            xtx.set(j, i, xtx.get(i, j));
        }
    }
    let (l, ridge) = match cholesky(&xtx) {
        Ok(l) => (l, false),
        Err(Error::RankDeficient) => {
            let mut reg = xtx.clone();
            for i in 0..q {
                reg.set(i, i, reg.get(i, i) + RIDGE_FALLBACK);
            }
            (cholesky(&reg)?, true)
        }
        Err(e) => return Err(e),
    };
    let coefficients = cholesky_solve(&l, &xty);
    let fitted: Vec<f64> = (0..t).map(|r| (0..q).map(|j| aug(r, j) * coefficients[j]).sum()).collect();
    let rss: f64 = fitted.iter().zip(y).map(|(f, v)| (v - f) * (v - f)).sum();
    let s2 = rss / (t - q) as f64;
    let std_errors = (0..q)
        .map(|i| {
            let mut e = vec![0.0; q];
            e[i] = 1.0;
            (s2 * cholesky_solve(&l, &e)[i]).max(0.0).sqrt()
        })
        .collect();
    Ok(OlsFit { coefficients, std_errors, fitted, ridge })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CvScheme {
    InSample,
    /// Fit on even time indices, correlate on odd ones.
    SplitHalf,
}

impl fmt::Display for CvScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CvScheme::InSample => "in_sample",
            CvScheme::SplitHalf => "split_half",
        })
    }
}

impl FromStr for CvScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "in_sample" | "in-sample" => Ok(CvScheme::InSample),
            "split_half" | "split-half" => Ok(CvScheme::SplitHalf),
            other => Err(Error::invalid(format!("unknown cross-validation scheme '{other}'"))),
        }
    }
}

/// Scalar per-step regressors: mean head variance, mean autocorrelation, drift reconstruction.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressorSeries {
    pub sigma: Vec<f64>,
    pub ac: Vec<f64>,
    pub wd_recon: Vec<f64>,
}

impl From<&UqSeries> for RegressorSeries {
    fn from(uq: &UqSeries) -> Self {
        Self { sigma: uq.sigma_mean(), ac: uq.ac_mean(), wd_recon: uq.wd_recon.clone() }
    }
}

impl RegressorSeries {
    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    fn column(&self, i: usize) -> &[f64] {
        match i {
            0 => &self.sigma,
            1 => &self.ac,
            _ => &self.wd_recon,
        }
    }
}

pub const REGRESSOR_NAMES: [&str; 3] = ["sigma_ens", "ac", "wd_recon"];

#[derive(Debug, Clone, PartialEq)]
pub struct RegressionReport {
    /// Correlation between fitted and actual MAE for each single-regressor fit.
    pub rho_single: [f64; 3],
    pub rho_multiple: f64,
    /// Multiple-regression intercept and slopes.
    pub coefficients: [f64; 4],
    pub std_errors: [f64; 4],
    pub scheme: CvScheme,
}

/// Four regressions of MAE on the uncertainty metrics (each alone, then all three).
pub fn uq_error_regression(uq: &UqSeries, mae: &[f64], scheme: CvScheme) -> Result<RegressionReport> {
    regress_series(&RegressorSeries::from(uq), mae, scheme)
}

pub fn regress_series(reg: &RegressorSeries, mae: &[f64], scheme: CvScheme) -> Result<RegressionReport> {
    let t = reg.len();
    if reg.ac.len() != t || reg.wd_recon.len() != t || mae.len() != t {
        return Err(Error::LengthMismatch(format!(
            "regressors {}/{}/{} and MAE {} differ in length",
            t,
            reg.ac.len(),
            reg.wd_recon.len(),
            mae.len()
        )));
    }
    let (fit_idx, eval_idx): (Vec<usize>, Vec<usize>) = match scheme {
        CvScheme::InSample => ((0..t).collect(), (0..t).collect()),
        CvScheme::SplitHalf => ((0..t).step_by(2).collect(), (1..t).step_by(2).collect()),
    };
    let y_fit: Vec<f64> = fit_idx.iter().map(|&i| mae[i]).collect();
    let y_eval: Vec<f64> = eval_idx.iter().map(|&i| mae[i]).collect();
    let run = |cols: &[usize]| -> Result<(OlsFit, f64)> {
        let x = Matrix::from_fn(fit_idx.len(), cols.len(), |r, c| reg.column(cols[c])[fit_idx[r]]);
        let fit = ols_fit(&y_fit, &x)?;
        let pred: Vec<f64> = eval_idx
            .iter()
            .map(|&i| fit.predict(&cols.iter().map(|&c| reg.column(c)[i]).collect::<Vec<_>>()))
            .collect();
        let rho = pearson(&pred, &y_eval)?;
        Ok((fit, rho))
    };
    let mut rho_single = [0.0; 3];
    for (i, r) in rho_single.iter_mut().enumerate() {
        *r = run(&[i])?.1;
    }
    let (fit, rho_multiple) = run(&[0, 1, 2])?;
    let mut coefficients = [0.0; 4];
    let mut std_errors = [0.0; 4];
    coefficients.copy_from_slice(&fit.coefficients);
    std_errors.copy_from_slice(&fit.std_errors);
    Ok(RegressionReport { rho_single, rho_multiple, coefficients, std_errors, scheme })
}

/// Average MAE and regressors over consecutive groups of realizations, then regress each group.
pub fn ensemble_mean_regression(
    runs: &[(RegressorSeries, Vec<f64>)],
    group_size: usize,
    scheme: CvScheme,
) -> Result<Vec<RegressionReport>> {
    if group_size == 0 || runs.len() % group_size != 0 {
        return Err(Error::GroupSizeMismatch { runs: runs.len(), group_size });
    }
    runs.chunks(group_size)
        .map(|group| {
            let t = group[0].1.len();
            if group.iter().any(|(r, m)| r.len() != t || m.len() != t) {
                return Err(Error::LengthMismatch("realizations in a group differ in length".into()));
            }
            let g = group.len() as f64;
            let mean = |f: &dyn Fn(&(RegressorSeries, Vec<f64>)) -> &[f64]| -> Vec<f64> {
                (0..t).map(|i| group.iter().map(|run| f(run)[i]).sum::<f64>() / g).collect()
            };
            let reg = RegressorSeries {
                sigma: mean(&|r| &r.0.sigma),
                ac: mean(&|r| &r.0.ac),
                wd_recon: mean(&|r| &r.0.wd_recon),
            };
            regress_series(&reg, &mean(&|r| &r.1), scheme)
        })
        .collect()
}

/// CSV with one row per report: `series,scheme,rho_sigma,rho_ac,rho_wd,rho_multiple,b0,b_sigma,b_ac,b_wd`.
pub fn write_regressions_csv<W: Write>(mut out: W, reports: &[(String, RegressionReport)]) -> Result<()> {
    writeln!(out, "series,scheme,rho_sigma,rho_ac,rho_wd,rho_multiple,b0,b_sigma,b_ac,b_wd")?;
    for (name, r) in reports {
        write!(out, "{name},{},{},{},{},{}", r.scheme, r.rho_single[0], r.rho_single[1], r.rho_single[2], r.rho_multiple)?;
        r.coefficients.iter().try_for_each(|b| write!(out, ",{b}"))?;
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stage};
    use proptest::prelude::*;
    use rand_distr::StandardNormal;

    fn traj(v: Vec<f64>, d: usize) -> Trajectory {
        Trajectory::new(v, d, 0.1, 0.0, "test").unwrap()
    }

    #[test]
    fn mae_examples() {
        let a = traj(vec![1.0, 2.0, 3.0, 4.0], 2);
        let rep = mae_curve(&[a.clone()], &[a.clone()]).unwrap();
        assert!(rep.per_component.as_slice().iter().all(|&v| v == 0.0));
        let rep = mae_curve(&[traj(vec![1.0], 1)], &[traj(vec![3.0], 1)]).unwrap();
        assert_eq!(rep.mean_curve, vec![2.0]);
        assert!(matches!(mae_curve(&[a.clone()], &[]), Err(Error::LengthMismatch(_))));
        assert!(matches!(mae_curve(&[a], &[traj(vec![1.0; 6], 2)]), Err(Error::LengthMismatch(_))));
    }

    #[test]
    fn mae_matches_triple_loop() {
        let mut rng = stream(1, Stage::Test, 0);
        let mut gen = |n| traj((0..n).map(|_| rng.sample(StandardNormal)).collect(), 3);
        let f: Vec<Trajectory> = (0..7).map(|_| gen(30)).collect();
        let r: Vec<Trajectory> = (0..7).map(|_| gen(30)).collect();
        let rep = mae_curve(&f, &r).unwrap();
        for t in 0..10 {
            for c in 0..3 {
                let mut s = 0.0;
                for i in 0..7 {
                    s += (f[i].state(t)[c] - r[i].state(t)[c]).abs();
                }
                assert!((rep.per_component.get(t, c) - s / 7.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn histogram_identical_and_uniform() {
        let mut rng = stream(2, Stage::Test, 0);
        let u = traj((0..20_000).map(|_| rng.random::<f64>()).collect(), 1);
        let srcs = [
            HistSource { label: "reference".into(), trajectories: vec![&u] },
            HistSource { label: "forecast".into(), trajectories: vec![&u] },
        ];
        let rep = histogram_compare(&srcs, 10, 0.05, HistMode::PerComponent).unwrap();
        assert_eq!(rep.densities[0], rep.densities[1]);
        let p = 0.1;
        let sd = (p * (1.0 - p) / 20_000.0f64).sqrt();
        for &f in &rep.densities[0][0] {
            assert!((f - p).abs() < 5.0 * sd, "{f}");
        }
        assert!((rep.densities[0][0].iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn aggregate_mode_flattens_components() {
        let a = traj(vec![0.0, 1.0, 2.0, 3.0], 2);
        let rep = histogram_compare(&[HistSource { label: "x".into(), trajectories: vec![&a] }], 4, 0.25, HistMode::Aggregate).unwrap();
        assert_eq!(rep.bin_edges.len(), 1);
        assert_eq!(rep.densities[0][0], vec![0.25; 4]);
        assert_eq!(rep.tail_windows[0].lower, (0.0, 0.75));
        let err = histogram_compare(&[HistSource { label: "none".into(), trajectories: vec![] }], 4, 0.05, HistMode::Aggregate);
        assert!(matches!(err, Err(Error::EmptySource(_))));
    }

    #[test]
    fn pearson_examples() {
        let x = [1.0, 2.0, 4.0, 7.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v + 1.0).collect();
        assert!((pearson(&x, &y).unwrap() - 1.0).abs() < 1e-15);
        let y: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&x, &y).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(pearson(&x, &[1.0; 4]), Err(Error::ZeroVariance(_))));
    }

    #[test]
    fn pearson_matches_direct_formula() {
        let mut rng = stream(3, Stage::Test, 0);
        let x: Vec<f64> = (0..50).map(|_| rng.sample(StandardNormal)).collect();
        let y: Vec<f64> = x.iter().map(|v| v + rng.sample::<f64, _>(StandardNormal)).collect();
        let n = 50.0;
        let (sx, sy): (f64, f64) = (x.iter().sum(), y.iter().sum());
        let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let sxx: f64 = x.iter().map(|a| a * a).sum();
        let syy: f64 = y.iter().map(|a| a * a).sum();
        let oracle = (n * sxy - sx * sy) / ((n * sxx - sx * sx) * (n * syy - sy * sy)).sqrt();
        assert!((pearson(&x, &y).unwrap() - oracle).abs() < 1e-12);
    }

    #[test]
    fn ols_exact_and_simple_regression() {
        let x = Matrix::from_fn(20, 2, |i, j| ((i * (j + 2)) % 7) as f64 + 0.1 * i as f64);
        let y: Vec<f64> = (0..20).map(|i| 1.5 - 2.0 * x.get(i, 0) + 0.25 * x.get(i, 1)).collect();
        let fit = ols_fit(&y, &x).unwrap();
        for (f, v) in fit.fitted.iter().zip(&y) {
            assert!((f - v).abs() < 1e-10);
        }
        assert!((pearson(&fit.fitted, &y).unwrap() - 1.0).abs() < 1e-12);

        let mut rng = stream(4, Stage::Test, 0);
        let xs: Vec<f64> = (0..40).map(|_| rng.sample(StandardNormal)).collect();
        let ys: Vec<f64> = xs.iter().map(|v| 0.3 * v + rng.sample::<f64, _>(StandardNormal)).collect();
        let fit = ols_fit(&ys, &Matrix::from_vec(40, 1, xs.clone()).unwrap()).unwrap();
        let mx = xs.iter().sum::<f64>() / 40.0;
        let my = ys.iter().sum::<f64>() / 40.0;
        let slope = xs.iter().zip(&ys).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / xs.iter().map(|a| (a - mx).powi(2)).sum::<f64>();
        assert!((fit.coefficients[1] - slope).abs() < 1e-12);
        assert!((fit.coefficients[0] - (my - slope * mx)).abs() < 1e-12);
    }

    #[test]
    fn ols_ridge_fallback_on_collinear_columns() {
        let x = Matrix::from_fn(10, 2, |i, _| i as f64);
        let y: Vec<f64> = (0..10).map(|i| 2.0 * i as f64).collect();
        let fit = ols_fit(&y, &x).unwrap();
        assert!(fit.ridge);
        assert!((fit.coefficients[1] + fit.coefficients[2] - 2.0).abs() < 1e-6);
    }

    fn synthetic(t: usize, seed: u64) -> (RegressorSeries, Vec<f64>) {
        let mut rng = stream(seed, Stage::Test, 0);
        let sigma: Vec<f64> = (0..t).map(|i| 0.01 * i as f64 + rng.random::<f64>()).collect();
        let ac: Vec<f64> = (0..t).map(|_| rng.random_range(-1.0..1.0)).collect();
        let wd: Vec<f64> = (0..t).map(|i| (i as f64 * 0.1).sin() + rng.random::<f64>()).collect();
        let mae = (0..t).map(|i| 0.3 * sigma[i] + 0.5 * wd[i] + 0.05 * rng.sample::<f64, _>(StandardNormal)).collect();
        (RegressorSeries { sigma, ac, wd_recon: wd }, mae)
    }

    #[test]
    fn mae_equal_to_regressor_gives_unit_correlation() {
        let (reg, _) = synthetic(60, 5);
        let rep = regress_series(&reg, &reg.wd_recon.clone(), CvScheme::SplitHalf).unwrap();
        assert!((rep.rho_single[2] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn group_mean_regression() {
        let runs: Vec<_> = (0..6).map(|s| synthetic(40, s)).collect();
        let single = ensemble_mean_regression(&runs, 1, CvScheme::InSample).unwrap();
        for (rep, run) in single.iter().zip(&runs) {
            assert_eq!(*rep, regress_series(&run.0, &run.1, CvScheme::InSample).unwrap());
        }
        let same = vec![runs[0].clone(); 3];
        let avg = ensemble_mean_regression(&same, 3, CvScheme::InSample).unwrap();
        let direct = regress_series(&runs[0].0, &runs[0].1, CvScheme::InSample).unwrap();
        for i in 0..3 {
            assert!((avg[0].rho_single[i] - direct.rho_single[i]).abs() < 1e-12);
        }
        assert!(matches!(ensemble_mean_regression(&runs, 4, CvScheme::InSample), Err(Error::GroupSizeMismatch { runs: 6, group_size: 4 })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn nested_in_sample_correlation(seed in any::<u64>(), t in 8usize..80) {
            let (reg, mae) = synthetic(t, seed);
            let rep = regress_series(&reg, &mae, CvScheme::InSample).unwrap();
            let best = rep.rho_single.iter().map(|r| r.abs()).fold(0.0, f64::max);
            prop_assert!(rep.rho_multiple >= best - 1e-12);
        }

        #[test]
        fn mae_invariant_to_pair_order(seed in any::<u64>(), n in 2usize..6) {
            let mut rng = stream(seed, Stage::Test, 0);
            let mut gen = || traj((0..12).map(|_| rng.sample(StandardNormal)).collect(), 2);
            let f: Vec<Trajectory> = (0..n).map(|_| gen()).collect();
            let r: Vec<Trajectory> = (0..n).map(|_| gen()).collect();
            let a = mae_curve(&f, &r).unwrap();
            let fr: Vec<Trajectory> = f.iter().rev().cloned().collect();
            let rr: Vec<Trajectory> = r.iter().rev().cloned().collect();
            let b = mae_curve(&fr, &rr).unwrap();
            for (x, y) in a.per_component.as_slice().iter().zip(b.per_component.as_slice()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }
    }
}
