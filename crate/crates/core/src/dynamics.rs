//! Ground-truth generators: Lorenz-63 under classic RK4 and the
//! Kuramoto–Sivashinsky equation on a periodic finite-difference grid under
//! two-step Adams–Bashforth.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::format::{ByteReader, ByteWriter};

/// Any state entry larger than this is treated as a blow-up.
pub const BLOWUP_THRESHOLD: f64 = 1e8;

const TRAJECTORY_MAGIC: &[u8; 4] = b"JCTR";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Lorenz63Params {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
}

impl Default for Lorenz63Params {
    fn default() -> Self {
        Self { sigma: 10.0, rho: 28.0, beta: 8.0 / 3.0 }
    }
}

impl Lorenz63Params {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma.is_finite() && self.rho.is_finite() && self.beta.is_finite()) {
            return Err(Error::invalid("Lorenz-63 parameters must be finite"));
        }
        if self.beta <= 0.0 {
            return Err(Error::invalid("Lorenz-63 beta must be positive"));
        }
        Ok(())
    }

    /// The two non-trivial equilibria `(±√(β(ρ−1)), ±√(β(ρ−1)), ρ−1)`.
    pub fn wing_fixed_points(&self) -> [[f64; 3]; 2] {
        let r = (self.beta * (self.rho - 1.0)).sqrt();
        [[r, r, self.rho - 1.0], [-r, -r, self.rho - 1.0]]
    }
}

/// Periodic grid for the KS equation.
///
/// Nodes sit at `x_min + j·dx` for `j = 0..n_points`; the node at `x_max` is
/// identified with `x_min` and dropped, and indices wrap modulo `n_points`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KsGrid {
    pub x_min: f64,
    pub x_max: f64,
    pub dx: f64,
    pub n_points: usize,
}

impl KsGrid {
    /// `n_points` nodes on `[x_min, x_max)` with spacing `(x_max − x_min)/(n_points + 1)`.
    ///
    /// For 199 nodes on `[−25, 25]` this gives the 0.25 spacing of the
    /// reference setup.
    pub fn new(x_min: f64, x_max: f64, n_points: usize) -> Result<Self> {
        if n_points < 5 {
            return Err(Error::invalid(format!("KS grid needs at least 5 nodes, got {n_points}")));
        }
        if !(x_max > x_min) || !x_min.is_finite() || !x_max.is_finite() {
            return Err(Error::invalid("KS grid bounds must be finite with x_max > x_min"));
        }
        Ok(Self { x_min, x_max, dx: (x_max - x_min) / (n_points as f64 + 1.0), n_points })
    }

    /// 199-node grid on `[−25, 25]` with `dx = 0.25`.
    pub fn reference() -> Self {
        Self::new(-25.0, 25.0, 199).expect("reference grid is valid")
    }

    pub fn node(&self, j: usize) -> f64 {
        self.x_min + j as f64 * self.dx
    }

    /// Length of the periodic cell, `n_points · dx`.
    pub fn period(&self) -> f64 {
        self.n_points as f64 * self.dx
    }
}

/// Time-ordered states with a fixed step, one state per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    states: Vec<f64>,
    len: usize,
    dim: usize,
    pub dt: f64,
    pub t0: f64,
    pub system_tag: String,
}

impl Trajectory {
    pub fn new(states: Vec<f64>, dim: usize, dt: f64, t0: f64, system_tag: impl Into<String>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("trajectory dimension must be positive"));
        }
        if states.is_empty() {
            return Err(Error::EmptyResult("trajectory needs at least one state".into()));
        }
        Self::build(states, dim, dt, t0, system_tag.into())
    }

    /// Zero-length trajectory; used for horizon-0 forecasts.
    pub fn empty(dim: usize, dt: f64, t0: f64, system_tag: impl Into<String>) -> Self {
        Self { states: Vec::new(), len: 0, dim, dt, t0, system_tag: system_tag.into() }
    }

    fn build(states: Vec<f64>, dim: usize, dt: f64, t0: f64, system_tag: String) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() || !t0.is_finite() {
            return Err(Error::invalid(format!("trajectory needs finite dt > 0 (dt = {dt}, t0 = {t0})")));
        }
        if states.len() % dim != 0 {
            return Err(Error::DimensionMismatch { expected: dim * (states.len() / dim + 1), got: states.len() });
        }
        if let Some(i) = states.iter().position(|v| !v.is_finite()) {
            return Err(Error::non_finite(format!("trajectory state row {}", i / dim)));
        }
        let len = states.len() / dim;
        Ok(Self { states, len, dim, dt, t0, system_tag })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn state(&self, i: usize) -> &[f64] {
        &self.states[i * self.dim..(i + 1) * self.dim]
    }

    pub fn states(&self) -> &[f64] {
        &self.states
    }

    pub fn time(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    /// Elapsed time between the first and last state.
    pub fn span(&self) -> f64 {
        self.len.saturating_sub(1) as f64 * self.dt
    }

    /// Rows `[start, end)` as a new trajectory re-anchored at `time(start)`.
    pub fn slice(&self, start: usize, end: usize) -> Result<Trajectory> {
        if start >= end || end > self.len {
            return Err(Error::EmptyResult(format!("slice [{start}, {end}) of trajectory with {} states", self.len)));
        }
        Ok(Trajectory {
            states: self.states[start * self.dim..end * self.dim].to_vec(),
            len: end - start,
            dim: self.dim,
            dt: self.dt,
            t0: self.time(start),
            system_tag: self.system_tag.clone(),
        })
    }

    /// One component across all states.
    pub fn component(&self, c: usize) -> Vec<f64> {
        (0..self.len).map(|i| self.states[i * self.dim + c]).collect()
    }

    pub fn write_binary<W: Write>(&self, out: W) -> Result<()> {
        let mut w = ByteWriter::new(out);
        w.header(TRAJECTORY_MAGIC)?;
        w.str(&self.system_tag)?;
        w.u64(self.len as u64)?;
        w.u32(self.dim as u32)?;
        w.f64(self.dt)?;
        w.f64(self.t0)?;
        w.f64s(&self.states)?;
        w.finish()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(input: R) -> Result<Self> {
        let mut r = ByteReader::new(input);
        r.header(TRAJECTORY_MAGIC)?;
        let tag = r.str()?;
        let len = r.u64()? as usize;
        let dim = r.u32()? as usize;
        let dt = r.f64()?;
        let t0 = r.f64()?;
        let states = r.f64s(len * dim)?;
        r.expect_eof()?;
        if dim == 0 {
            return Err(Error::Format("trajectory dimension is zero".into()));
        }
        if len == 0 {
            return Ok(Self::empty(dim, dt, t0, tag));
        }
        Self::build(states, dim, dt, t0, tag)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_binary(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_binary(BufReader::new(File::open(path)?))
    }

    /// CSV with header `t,x0,...,x{d-1}`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = BufWriter::new(out);
        let header: Vec<String> = std::iter::once("t".to_string()).chain((0..self.dim).map(|c| format!("x{c}"))).collect();
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len {
            write!(w, "{}", self.time(i))?;
            for v in self.state(i) {
                write!(w, ",{v}")?;
            }
            writeln!(w)?;
        }
        w.flush()?;
        Ok(())
    }
}

pub fn lorenz63_rhs(state: &[f64; 3], params: &Lorenz63Params) -> [f64; 3] {
    let [x, y, z] = *state;
    [params.sigma * (y - x), x * (params.rho - z) - y, x * y - params.beta * z]
}

fn check_state(state: &[f64], step: usize, system: &str) -> Result<()> {
    if state.iter().any(|v| !v.is_finite() || v.abs() > BLOWUP_THRESHOLD) {
        return Err(Error::non_finite(format!("{system} integration blew up at step {step}")));
    }
    Ok(())
}

fn check_step(dt: f64, steps: usize) -> Result<()> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid(format!("time step must be positive, got {dt}")));
    }
    if steps == 0 {
        return Err(Error::invalid("at least one step is required"));
    }
    Ok(())
}

/// One classic four-stage Runge–Kutta step of `du/dt = f(u)`.
pub fn rk4_step(u: &[f64], dt: f64, f: impl Fn(&[f64], &mut [f64])) -> Vec<f64> {
    let n = u.len();
    let mut k1 = vec![0.0; n];
    let mut k2 = vec![0.0; n];
    let mut k3 = vec![0.0; n];
    let mut k4 = vec![0.0; n];
    let mut tmp = vec![0.0; n];
    f(u, &mut k1);
    for i in 0..n {
        tmp[i] = u[i] + 0.5 * dt * k1[i];
    }
    f(&tmp, &mut k2);
    for i in 0..n {
        tmp[i] = u[i] + 0.5 * dt * k2[i];
    }
    f(&tmp, &mut k3);
    for i in 0..n {
        tmp[i] = u[i] + dt * k3[i];
    }
    f(&tmp, &mut k4);
    (0..n).map(|i| u[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])).collect()
}

/// Single RK4 step of Lorenz-63; the true one-step flow map used by oracles.
pub fn lorenz63_step(state: &[f64], params: &Lorenz63Params, dt: f64) -> Vec<f64> {
    rk4_step(state, dt, |u, out| {
        out.copy_from_slice(&lorenz63_rhs(&[u[0], u[1], u[2]], params));
    })
}

/// Integrate Lorenz-63 with fixed-step RK4; returns `steps + 1` states.
pub fn integrate_lorenz63(ic: &[f64; 3], params: &Lorenz63Params, dt: f64, steps: usize) -> Result<Trajectory> {
    params.validate()?;
    check_step(dt, steps)?;
    check_state(ic, 0, "Lorenz-63")?;
    let mut states = Vec::with_capacity((steps + 1) * 3);
    states.extend_from_slice(ic);
    let mut u = ic.to_vec();
    for step in 1..=steps {
        u = lorenz63_step(&u, params, dt);
        check_state(&u, step, "Lorenz-63")?;
        states.extend_from_slice(&u);
    }
    Trajectory::new(states, 3, dt, 0.0, "lorenz63")
}

/// `−(u u_x + u_xx + u_xxxx)` with second-order central stencils and
/// periodic wraparound, written into `out`.
pub fn ks_rhs_into(u: &[f64], grid: &KsGrid, out: &mut [f64]) -> Result<()> {
    let n = grid.n_points;
    if u.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: u.len() });
    }
    if out.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: out.len() });
    }
    let h = grid.dx;
    let (c1, c2, c4) = (1.0 / (2.0 * h), 1.0 / (h * h), 1.0 / (h * h * h * h));
    for i in 0..n {
        let im2 = u[(i + n - 2) % n];
        let im1 = u[(i + n - 1) % n];
        let ui = u[i];
        let ip1 = u[(i + 1) % n];
        let ip2 = u[(i + 2) % n];
        let ux = (ip1 - im1) * c1;
        // Differences against the centre node keep constant fields exactly stationary.
        let (dp1, dm1, dp2, dm2) = (ip1 - ui, im1 - ui, ip2 - ui, im2 - ui);
        let uxx = (dp1 + dm1) * c2;
        let uxxxx = (dp2 + dm2 - 4.0 * (dp1 + dm1)) * c4;
        out[i] = -(ui * ux + uxx + uxxxx);
    }
    Ok(())
}

pub fn ks_rhs(u: &[f64], grid: &KsGrid) -> Result<Vec<f64>> {
    let mut out = vec![0.0; grid.n_points];
    ks_rhs_into(u, grid, &mut out)?;
    Ok(out)
}

/// `u(x, 0) = sin(x) exp(−(x − 10)²/2)` at the grid nodes.
pub fn ks_initial_condition(grid: &KsGrid) -> Vec<f64> {
    (0..grid.n_points)
        .map(|j| {
            let x = grid.node(j);
            x.sin() * (-(x - 10.0) * (x - 10.0) / 2.0).exp()
        })
        .collect()
}

/// Two-step Adams–Bashforth on the semi-discrete KS system.
///
/// The first step is a single RK4 step. Returns `steps + 1` states.
pub fn integrate_ks(ic: &[f64], grid: &KsGrid, dt: f64, steps: usize) -> Result<Trajectory> {
    integrate_ks_strided(ic, grid, dt, steps, 1)
}

/// As [`integrate_ks`] but records only every `stride`-th state, so the
/// stored trajectory has spacing `stride · dt` while the integrator keeps
/// the small step it needs for stability.
pub fn integrate_ks_strided(ic: &[f64], grid: &KsGrid, dt: f64, steps: usize, stride: usize) -> Result<Trajectory> {
    check_step(dt, steps)?;
    if stride == 0 {
        return Err(Error::invalid("stride must be positive"));
    }
    let n = grid.n_points;
    if ic.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: ic.len() });
    }
    check_state(ic, 0, "KS")?;
    let rhs = |u: &[f64], out: &mut [f64]| {
        ks_rhs_into(u, grid, out).expect("grid-sized buffers");
    };
    let mut states = Vec::with_capacity((steps + 1) * n);
    states.extend_from_slice(ic);

    let mut f_prev = vec![0.0; n];
    rhs(ic, &mut f_prev);
    let mut u = rk4_step(ic, dt, rhs);
    check_state(&u, 1, "KS")?;
    let mut f_curr = vec![0.0; n];
    let total = steps * stride;
    let mut micro = 1;
    loop {
        if micro % stride == 0 {
            states.extend_from_slice(&u);
        }
        if micro == total {
            break;
        }
        rhs(&u, &mut f_curr);
        for i in 0..n {
            u[i] += dt * (1.5 * f_curr[i] - 0.5 * f_prev[i]);
        }
        std::mem::swap(&mut f_prev, &mut f_curr);
        micro += 1;
        check_state(&u, micro, "KS")?;
    }
    Trajectory::new(states, n, dt * stride as f64, 0.0, "ks")
}

/// Drop every state earlier than `t_cut` time units after the start.
pub fn discard_transient(traj: &Trajectory, t_cut: f64) -> Result<Trajectory> {
    if !(t_cut >= 0.0) || !t_cut.is_finite() {
        return Err(Error::invalid(format!("t_cut must be finite and non-negative, got {t_cut}")));
    }
    let first = (t_cut / traj.dt - 1e-9).ceil().max(0.0) as usize;
    if first >= traj.len() {
        return Err(Error::EmptyResult(format!("t_cut = {t_cut} removes every state")));
    }
    traj.slice(first, traj.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lorenz_rhs_hand_values() {
        let p = Lorenz63Params::default();
        assert_eq!(lorenz63_rhs(&[0.0, 0.0, 0.0], &p), [0.0, 0.0, 0.0]);
        let r = lorenz63_rhs(&[1.0, 2.0, 3.0], &p);
        // (10·(2−1), 1·(28−3)−2, 1·2 − 8/3·3)
        assert_eq!(r[0], 10.0);
        assert_eq!(r[1], 23.0);
        assert!((r[2] - (-6.0)).abs() < 1e-15);
    }

    #[test]
    fn lorenz_wing_fixed_points_are_roots() {
        let p = Lorenz63Params::default();
        let c = p.wing_fixed_points();
        assert!((c[0][0] - 72f64.sqrt()).abs() < 1e-14);
        for fp in c {
            for v in lorenz63_rhs(&fp, &p) {
                assert!(v.abs() < 1e-12, "{v}");
            }
        }
    }

    #[test]
    fn origin_is_stationary() {
        let traj = integrate_lorenz63(&[0.0; 3], &Lorenz63Params::default(), 0.01, 50).unwrap();
        assert_eq!(traj.len(), 51);
        assert!(traj.states().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn lorenz_rejects_bad_step_and_blowup() {
        let p = Lorenz63Params::default();
        assert!(integrate_lorenz63(&[1.0; 3], &p, 0.0, 10).is_err());
        assert!(integrate_lorenz63(&[1.0; 3], &p, 0.01, 0).is_err());
        assert!(matches!(integrate_lorenz63(&[1.0, 1.0, 1.0], &p, 1.0, 100), Err(Error::NonFinite(_))));
    }

    #[test]
    fn ks_grid_reference_spacing() {
        let g = KsGrid::reference();
        assert_eq!(g.n_points, 199);
        assert_eq!(g.dx, 0.25);
        assert_eq!(g.node(198), 24.5);
        assert!(KsGrid::new(-25.0, 25.0, 4).is_err());
    }

    #[test]
    fn ks_constant_field_is_stationary() {
        let g = KsGrid::new(-25.0, 25.0, 16).unwrap();
        let r = ks_rhs(&vec![1.7; 16], &g).unwrap();
        assert!(r.iter().all(|&v| v == 0.0));
        assert!(matches!(ks_rhs(&[0.0; 3], &g), Err(Error::DimensionMismatch { .. })));
        let traj = integrate_ks(&vec![-0.4; 16], &g, 0.01, 20).unwrap();
        assert!(traj.states().iter().all(|&v| v == -0.4));
    }

    #[test]
    fn ks_initial_condition_values() {
        let g = KsGrid::reference();
        let u = ks_initial_condition(&g);
        assert_eq!(u.len(), 199);
        // x = 10 is node 140
        assert_eq!(g.node(140), 10.0);
        assert!((u[140] - 10f64.sin()).abs() < 1e-15);
        assert!((u[140] - (-0.5440)).abs() < 1e-4);
        // x = 4 and x = 16: nodes 116 and 164
        for j in [116usize, 164] {
            let x = g.node(j);
            assert!(u[j].abs() <= (-18f64).exp() * x.sin().abs() * (1.0 + 1e-12));
            assert!(u[j].abs() < 1.6e-8);
        }
    }

    #[test]
    fn discard_transient_index_arithmetic() {
        let traj = integrate_lorenz63(&[1.0, 1.0, 1.0], &Lorenz63Params::default(), 0.01, 100).unwrap();
        assert_eq!(discard_transient(&traj, 0.0).unwrap(), traj);
        let one = discard_transient(&traj, 0.01).unwrap();
        assert_eq!(one.len(), traj.len() - 1);
        let mid = discard_transient(&traj, 0.37).unwrap();
        assert_eq!(mid.state(0), traj.state(37));
        assert!((mid.t0 - 0.37).abs() < 1e-12);
        assert!(matches!(discard_transient(&traj, 1.5), Err(Error::EmptyResult(_))));
    }

    #[test]
    fn trajectory_binary_and_csv() {
        let traj = integrate_lorenz63(&[1.0, 2.0, 3.0], &Lorenz63Params::default(), 0.02, 5).unwrap();
        let mut buf = Vec::new();
        traj.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"JCTR");
        assert_eq!(Trajectory::read_binary(&buf[..]).unwrap(), traj);
        assert!(Trajectory::read_binary(&buf[..buf.len() - 1]).is_err());
        let mut csv = Vec::new();
        traj.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("t,x0,x1,x2\n0,1,2,3\n"));
        assert_eq!(text.lines().count(), 7);
    }

    #[test]
    fn strided_ks_matches_unstrided_samples() {
        let g = KsGrid::new(-25.0, 25.0, 32).unwrap();
        let ic = ks_initial_condition(&g);
        let full = integrate_ks(&ic, &g, 0.01, 40).unwrap();
        let strided = integrate_ks_strided(&ic, &g, 0.01, 10, 4).unwrap();
        assert_eq!(strided.len(), 11);
        assert!((strided.dt - 0.04).abs() < 1e-15);
        for i in 0..=10 {
            assert_eq!(strided.state(i), full.state(4 * i));
        }
    }
}
