//! Entropic 2-Wasserstein distance between uniform empirical measures.
//!
//! The solver keeps dual potentials in the log domain and iterates on
//! bounded scalings of the stabilized kernel `exp((f + g − C)/ε)`, absorbing
//! them into the potentials before they can overflow; it never forms the raw
//! kernel `exp(−C/ε)`. Rows that still underflow fall back to exact
//! log-sum-exp updates. The regularization is annealed from `max(C)` down to
//! the target `ε`, warm-starting each stage.

use crate::error::{Error, Result};
use crate::linalg::Matrix;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Epsilon {
    /// `ε = factor · median(C)`.
    RelativeToMedian(f64),
    /// Fixed `ε` in squared-distance units.
    Absolute(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SinkhornConfig {
    pub epsilon: Epsilon,
    pub max_iters: usize,
    /// L1 violation of the row marginal at which iteration stops.
    pub convergence_tol: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self { epsilon: Epsilon::RelativeToMedian(0.01), max_iters: 500, convergence_tol: 1e-6 }
    }
}

impl SinkhornConfig {
    pub fn relative(factor: f64) -> Self {
        Self { epsilon: Epsilon::RelativeToMedian(factor), ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let e = match self.epsilon {
            Epsilon::RelativeToMedian(v) | Epsilon::Absolute(v) => v,
        };
        if !(e > 0.0) || !e.is_finite() {
            return Err(Error::invalid(format!("Sinkhorn epsilon must be positive, got {e}")));
        }
        if self.max_iters == 0 || !(self.convergence_tol > 0.0) {
            return Err(Error::invalid("Sinkhorn needs max_iters ≥ 1 and a positive tolerance"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct W2Estimate {
    /// `√⟨P, C⟩` for the final transport plan.
    pub distance: f64,
    /// False when `max_iters` ran out before the marginal tolerance was met.
    pub converged: bool,
    /// Iterations spent at the target `ε` (annealing stages excluded).
    pub iterations: usize,
    pub marginal_error: f64,
    /// Resolved regularization in squared-distance units.
    pub epsilon: f64,
}

/// Entropic W2 between the rows of `a` and the rows of `b` (uniform weights).
pub fn sinkhorn_w2(a: &Matrix, b: &Matrix, cfg: &SinkhornConfig) -> Result<W2Estimate> {
    cfg.validate()?;
    let (m, p) = (a.rows(), b.rows());
    if m == 0 || p == 0 {
        return Err(Error::invalid("Sinkhorn needs two non-empty point sets"));
    }
    if a.cols() != b.cols() {
        return Err(Error::DimensionMismatch { expected: a.cols(), got: b.cols() });
    }
    if !a.all_finite() || !b.all_finite() {
        return Err(Error::non_finite("Sinkhorn input points"));
    }
    let cost = Matrix::from_fn(m, p, |i, j| a.row(i).iter().zip(b.row(j)).map(|(x, y)| (x - y) * (x - y)).sum());

    let exact = |distance: f64| W2Estimate { distance, converged: true, iterations: 0, marginal_error: 0.0, epsilon: 0.0 };
    // A point mass on either side admits exactly one coupling.
    if m == 1 {
        return Ok(exact((cost.row(0).iter().sum::<f64>() / p as f64).sqrt()));
    }
    if p == 1 {
        return Ok(exact(((0..m).map(|i| cost.get(i, 0)).sum::<f64>() / m as f64).sqrt()));
    }
    let c_max = cost.as_slice().iter().copied().fold(0.0, f64::max);
    if c_max == 0.0 {
        return Ok(exact(0.0));
    }
    let eps = match cfg.epsilon {
        Epsilon::Absolute(e) => e,
        Epsilon::RelativeToMedian(factor) => {
            let med = median(cost.as_slice());
            factor * if med > 0.0 { med } else { c_max }
        }
    };

    let mut solver = Solver::new(&cost, m, p);
    let mut stage_eps = c_max.max(eps);
    while stage_eps > eps {
        solver.run(stage_eps, ANNEAL_ITERS, 0.0, 1.0);
        stage_eps = (stage_eps * 0.5).max(eps);
    }
    let (iterations, err) = solver.run(eps, cfg.max_iters, cfg.convergence_tol, OVER_RELAXATION);
    // a final log-domain half-step makes the column marginal exact for the reported plan
    solver.log_update_g(eps);
    let mut total = 0.0;
    for i in 0..m {
        for (j, &c) in cost.row(i).iter().enumerate() {
            total += ((solver.f[i] + solver.g[j] - c) / eps).exp() * c;
        }
    }
    if !total.is_finite() {
        return Err(Error::non_finite("Sinkhorn transport cost"));
    }
    Ok(W2Estimate {
        distance: total.max(0.0).sqrt(),
        converged: err < cfg.convergence_tol,
        iterations,
        marginal_error: err,
        epsilon: eps,
    })
}

/// Over-relaxation factor for the iterations at the target `ε`.
const OVER_RELAXATION: f64 = 1.5;
const ANNEAL_ITERS: usize = 10;
const CHECK_EVERY: usize = 10;
/// Scalings are absorbed into the potentials once `|ln u|` or `|ln v|` exceeds this.
const ABSORB_AT: f64 = 30.0;

/// Dual potentials `f, g` plus the scalings `u, v` of the stabilized kernel
/// `K̃_ij = exp((f_i + g_j − C_ij)/ε)`; the plan is `u_i K̃_ij v_j`.
struct Solver<'c> {
    cost: &'c Matrix,
    f: Vec<f64>,
    g: Vec<f64>,
    a: f64,
    b: f64,
    kernel: Matrix,
}

impl<'c> Solver<'c> {
    fn new(cost: &'c Matrix, m: usize, p: usize) -> Self {
        Self { cost, f: vec![0.0; m], g: vec![0.0; p], a: 1.0 / m as f64, b: 1.0 / p as f64, kernel: Matrix::zeros(m, p) }
    }

    fn rebuild(&mut self, eps: f64) {
        let (f, g) = (&self.f, &self.g);
        for i in 0..f.len() {
            let row = self.cost.row(i);
            for (j, k) in self.kernel.row_mut(i).iter_mut().enumerate() {
                *k = ((f[i] + g[j] - row[j]) / eps).exp();
            }
        }
    }

    fn absorb(&mut self, eps: f64, u: &mut [f64], v: &mut [f64]) {
        for (fi, ui) in self.f.iter_mut().zip(u.iter_mut()) {
            *fi += eps * ui.ln();
            *ui = 1.0;
        }
        for (gj, vj) in self.g.iter_mut().zip(v.iter_mut()) {
            *gj += eps * vj.ln();
            *vj = 1.0;
        }
    }

    /// Exact log-domain updates of `f` then `g`; the fallback when the kernel underflows.
    fn log_update_f(&mut self, eps: f64) {
        let mut buf = vec![0.0; self.g.len()];
        for i in 0..self.f.len() {
            for ((x, c), gj) in buf.iter_mut().zip(self.cost.row(i)).zip(&self.g) {
                *x = (gj - c) / eps;
            }
            self.f[i] = eps * (self.a.ln() - log_sum_exp(&buf));
        }
    }

    fn log_update_g(&mut self, eps: f64) {
        let mut buf = vec![0.0; self.f.len()];
        for j in 0..self.g.len() {
            for (i, x) in buf.iter_mut().enumerate() {
                *x = (self.f[i] - self.cost.get(i, j)) / eps;
            }
            self.g[j] = eps * (self.b.ln() - log_sum_exp(&buf));
        }
    }

    /// Up to `max_iters` scaling iterations at `eps`; returns `(iterations, marginal error)`.
    /// A zero `tol` disables the convergence test.
    fn run(&mut self, eps: f64, max_iters: usize, tol: f64, omega: f64) -> (usize, f64) {
        let (m, p) = (self.f.len(), self.g.len());
        let mut u = vec![1.0; m];
        let mut v = vec![1.0; p];
        let mut kv = vec![0.0; m];
        let mut ktu = vec![0.0; p];
        self.rebuild(eps);
        let mut err = f64::INFINITY;
        let mut it = 0;
        while it < max_iters {
            it += 1;
            mat_vec(&self.kernel, &v, &mut kv);
            let mut ok = scale(&mut u, &kv, self.a, omega);
            mat_t_vec(&self.kernel, &u, &mut ktu);
            ok &= scale(&mut v, &ktu, self.b, omega);
            if !ok {
                // kernel rows or columns underflowed: fall back to exact log-domain updates
                u.iter_mut().for_each(|x| *x = 1.0);
                v.iter_mut().for_each(|x| *x = 1.0);
                self.log_update_f(eps);
                self.log_update_g(eps);
                self.rebuild(eps);
                continue;
            }
            if tol > 0.0 && (it % CHECK_EVERY == 0 || it == max_iters) {
                mat_vec(&self.kernel, &v, &mut kv);
                mat_t_vec(&self.kernel, &u, &mut ktu);
                err = u.iter().zip(&kv).map(|(x, k)| (x * k - self.a).abs()).sum::<f64>()
                    + v.iter().zip(&ktu).map(|(x, k)| (x * k - self.b).abs()).sum::<f64>();
                if err < tol {
                    break;
                }
            }
            let big = u.iter().chain(&v).any(|x| x.ln().abs() > ABSORB_AT);
            if big {
                self.absorb(eps, &mut u, &mut v);
                self.rebuild(eps);
            }
        }
        self.absorb(eps, &mut u, &mut v);
        (it, err)
    }
}

/// `s ← s^{1−ω} (w / k)^ω`; false if any entry is not a positive finite number.
fn scale(s: &mut [f64], k: &[f64], w: f64, omega: f64) -> bool {
    let mut ok = true;
    for (x, kx) in s.iter_mut().zip(k) {
        let t = w / kx;
        *x = if omega == 1.0 { t } else { x.powf(1.0 - omega) * t.powf(omega) };
        ok &= x.is_finite() && *x > 0.0;
    }
    ok
}

fn mat_vec(k: &Matrix, v: &[f64], out: &mut [f64]) {
    for (i, o) in out.iter_mut().enumerate() {
        *o = k.row(i).iter().zip(v).map(|(a, b)| a * b).sum();
    }
}

fn mat_t_vec(k: &Matrix, u: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    for (i, ui) in u.iter().enumerate() {
        for (o, kij) in out.iter_mut().zip(k.row(i)) {
            *o += kij * ui;
        }
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    let n = v.len();
    let mid = n / 2;
    let (_, hi, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let hi = *hi;
    if n % 2 == 1 {
        hi
    } else {
        let lo = v[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    }
}

/// Exact W2 between two equal-size 1D samples via order statistics.
pub fn exact_w2_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::SizeMismatch { left: a.len(), right: b.len() });
    }
    if a.is_empty() {
        return Err(Error::invalid("exact_w2_1d needs non-empty samples"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::non_finite("exact_w2_1d input"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let ms = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    Ok(ms.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Stage};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn column(v: &[f64]) -> Matrix {
        Matrix::from_vec(v.len(), 1, v.to_vec()).unwrap()
    }

    #[test]
    fn point_masses_are_exact() {
        let a = Matrix::from_vec(1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let b = Matrix::from_vec(1, 3, vec![4.0, 6.0, 3.0]).unwrap();
        assert_eq!(sinkhorn_w2(&a, &a, &SinkhornConfig::default()).unwrap().distance, 0.0);
        assert_eq!(sinkhorn_w2(&a, &b, &SinkhornConfig::default()).unwrap().distance, 5.0);
        let cfg = SinkhornConfig { epsilon: Epsilon::Absolute(1e3), ..SinkhornConfig::default() };
        assert_eq!(sinkhorn_w2(&a, &b, &cfg).unwrap().distance, 5.0);
    }

    #[test]
    fn single_point_against_cloud_is_root_mean_square() {
        let a = column(&[0.0]);
        let b = column(&[1.0, -3.0]);
        let w = sinkhorn_w2(&a, &b, &SinkhornConfig::default()).unwrap().distance;
        assert!((w - 5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn identical_clouds_with_repeated_points() {
        let a = column(&[2.0, 2.0, 2.0]);
        assert_eq!(sinkhorn_w2(&a, &a, &SinkhornConfig::default()).unwrap().distance, 0.0);
    }

    #[test]
    fn exact_1d_examples() {
        assert_eq!(exact_w2_1d(&[3.0, 1.0, 2.0], &[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(exact_w2_1d(&[0.0, 1.0], &[1.0, 2.0]).unwrap(), 1.0);
        assert!(matches!(exact_w2_1d(&[0.0], &[1.0, 2.0]), Err(Error::SizeMismatch { left: 1, right: 2 })));
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
    }

    #[test]
    fn self_bias_shrinks_with_epsilon() {
        let mut rng = stream(1, Stage::Test, 0);
        let a = Matrix::from_fn(40, 2, |_, _| rng.sample(StandardNormal));
        let mut last = f64::INFINITY;
        for factor in [1.0, 0.3, 0.1, 0.03, 0.01] {
            let cfg = SinkhornConfig { max_iters: 5000, convergence_tol: 1e-9, ..SinkhornConfig::relative(factor) };
            let w = sinkhorn_w2(&a, &a, &cfg).unwrap().distance;
            assert!(w <= last + 1e-12, "bias not decreasing at factor {factor}: {w} > {last}");
            last = w;
        }
        assert!(last < 0.1);
    }

    #[test]
    fn tiny_epsilon_stays_finite() {
        let mut rng = stream(2, Stage::Test, 0);
        let a = Matrix::from_fn(30, 3, |_, _| rng.sample::<f64, _>(StandardNormal) * 50.0);
        let b = Matrix::from_fn(20, 3, |_, _| rng.sample::<f64, _>(StandardNormal) * 50.0 + 10.0);
        let c_max = (0..30)
            .flat_map(|i| (0..20).map(move |j| (i, j)))
            .map(|(i, j)| a.row(i).iter().zip(b.row(j)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
            .fold(0.0, f64::max);
        let cfg = SinkhornConfig { epsilon: Epsilon::Absolute(1e-6 * c_max), ..SinkhornConfig::default() };
        let est = sinkhorn_w2(&a, &b, &cfg).unwrap();
        assert!(est.distance.is_finite());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn symmetric(seed in any::<u64>(), m in 2usize..12, p in 2usize..12) {
            let mut rng = stream(seed, Stage::Test, 0);
            let a = Matrix::from_fn(m, 2, |_, _| rng.sample(StandardNormal));
            let b = Matrix::from_fn(p, 2, |_, _| rng.sample::<f64, _>(StandardNormal) + 1.0);
            let cfg = SinkhornConfig::default();
            let ab = sinkhorn_w2(&a, &b, &cfg).unwrap();
            let ba = sinkhorn_w2(&b, &a, &cfg).unwrap();
            // a plan off by δ in L1 marginals moves the transport cost by at most δ·max(C)
            let c_max = (0..m)
                .flat_map(|i| (0..p).map(move |j| (i, j)))
                .map(|(i, j)| a.row(i).iter().zip(b.row(j)).map(|(x, y)| (x - y).powi(2)).sum::<f64>())
                .fold(0.0, f64::max);
            let slack = (ab.marginal_error + ba.marginal_error) * c_max + 1e-12;
            prop_assert!((ab.distance.powi(2) - ba.distance.powi(2)).abs() <= slack);
        }

        #[test]
        fn translation_covariant_1d(a in prop::collection::vec(-10.0f64..10.0, 1..20), shift in -5.0f64..5.0, seed in any::<u64>()) {
            let mut rng = stream(seed, Stage::Test, 0);
            let b: Vec<f64> = a.iter().map(|_| rng.random_range(-10.0..10.0)).collect();
            let base = exact_w2_1d(&a, &b).unwrap();
            let a2: Vec<f64> = a.iter().map(|v| v + shift).collect();
            let b2: Vec<f64> = b.iter().map(|v| v + shift).collect();
            prop_assert!((exact_w2_1d(&a2, &b2).unwrap() - base).abs() < 1e-9);
        }
    }
}
