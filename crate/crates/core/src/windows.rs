//! Lagged joint windows and the normalizer shared by training and inference.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;

use crate::dynamics::Trajectory;
use crate::error::{Error, Result};
use crate::format::{ByteReader, ByteWriter};

const WINDOWS_MAGIC: &[u8; 4] = b"JCWS";

/// Standard-deviation floor for degenerate components.
pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sampling {
    /// Window starts drawn uniformly with replacement.
    UniformRandom,
    /// Every contiguous window in order, truncated to the requested count.
    AllContiguous,
}

/// `M` windows of `n` consecutive states each, oldest row first.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSet {
    data: Vec<f64>,
    count: usize,
    n: usize,
    dim: usize,
    pub dt: f64,
    /// Times of the first and one-past-last admissible state of the source range.
    pub source_span: (f64, f64),
    pub system_tag: String,
    /// Source row index of each window's oldest state. Not persisted; empty
    /// for window sets read from disk.
    pub starts: Vec<usize>,
}

impl WindowSet {
    pub fn from_parts(data: Vec<f64>, n: usize, dim: usize, dt: f64, source_span: (f64, f64)) -> Result<Self> {
        if n < 2 {
            return Err(Error::invalid(format!("window length must be at least 2, got {n}")));
        }
        if dim == 0 || data.len() % (n * dim) != 0 {
            return Err(Error::ShapeMismatch(format!("{} values do not tile windows of {n}×{dim}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::non_finite("window set"));
        }
        Ok(Self {
            count: data.len() / (n * dim),
            data,
            n,
            dim,
            dt,
            source_span,
            system_tag: String::new(),
            starts: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn window_len(&self) -> usize {
        self.n
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Flattened window `i` (oldest block first).
    pub fn window(&self, i: usize) -> &[f64] {
        let w = self.n * self.dim;
        &self.data[i * w..(i + 1) * w]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn write_binary<W: Write>(&self, out: W) -> Result<()> {
        let mut w = ByteWriter::new(out);
        w.header(WINDOWS_MAGIC)?;
        w.str(&self.system_tag)?;
        w.u64(self.count as u64)?;
        w.u32(self.n as u32)?;
        w.u32(self.dim as u32)?;
        w.f64(self.dt)?;
        w.f64(self.source_span.0)?;
        w.f64(self.source_span.1)?;
        w.f64s(&self.data)?;
        w.finish()?;
        Ok(())
    }

    pub fn read_binary<R: Read>(input: R) -> Result<Self> {
        let mut r = ByteReader::new(input);
        r.header(WINDOWS_MAGIC)?;
        let tag = r.str()?;
        let count = r.u64()? as usize;
        let n = r.u32()? as usize;
        let dim = r.u32()? as usize;
        let dt = r.f64()?;
        let span = (r.f64()?, r.f64()?);
        let data = r.f64s(count * n * dim)?;
        r.expect_eof()?;
        let mut ws = Self::from_parts(data, n, dim, dt, span)?;
        ws.system_tag = tag;
        Ok(ws)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_binary(BufWriter::new(File::create(path)?))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_binary(BufReader::new(File::open(path)?))
    }
}

/// Row indices `[lo, hi]` of states whose times fall in `[t_a, t_b)`.
fn index_range(traj: &Trajectory, t_a: f64, t_b: f64) -> Option<(usize, usize)> {
    let lo = ((t_a - traj.t0) / traj.dt - 1e-9).ceil().max(0.0) as usize;
    let end = ((t_b - traj.t0) / traj.dt - 1e-9).ceil().max(0.0) as usize;
    let end = end.min(traj.len());
    if lo >= end {
        return None;
    }
    Some((lo, end - 1))
}

/// Build `n`-state windows from the part of `traj` with times in `[t_a, t_b)`.
///
/// No window touches a state at or after `t_b`.
pub fn build_windows<R: Rng + ?Sized>(
    traj: &Trajectory,
    n: usize,
    count: usize,
    range: (f64, f64),
    sampling: Sampling,
    rng: &mut R,
) -> Result<WindowSet> {
    if n < 2 {
        return Err(Error::invalid(format!("window length must be at least 2, got {n}")));
    }
    let (t_a, t_b) = range;
    if !(t_b > t_a) {
        return Err(Error::invalid(format!("empty time range [{t_a}, {t_b})")));
    }
    let (lo, hi) = index_range(traj, t_a, t_b).ok_or(Error::RangeTooShort { available: 0, needed: n })?;
    let states = hi - lo + 1;
    if states < n {
        return Err(Error::RangeTooShort { available: states, needed: n });
    }
    let available = states - n + 1;
    let starts: Vec<usize> = match sampling {
        Sampling::AllContiguous => {
            if count > available {
                return Err(Error::invalid(format!(
                    "{count} contiguous windows requested but only {available} exist"
                )));
            }
            (lo..lo + count).collect()
        }
        Sampling::UniformRandom => (0..count).map(|_| lo + rng.random_range(0..available)).collect(),
    };
    let d = traj.dim();
    let mut data = Vec::with_capacity(starts.len() * n * d);
    for &s in &starts {
        for r in 0..n {
            data.extend_from_slice(traj.state(s + r));
        }
    }
    let mut ws = WindowSet::from_parts(data, n, d, traj.dt, (traj.time(lo), traj.time(hi) + traj.dt))?;
    ws.system_tag = traj.system_tag.clone();
    ws.starts = starts;
    Ok(ws)
}

/// Concatenate window rows into one vector, oldest block first.
pub fn flatten_window<S: AsRef<[f64]>>(rows: &[S]) -> Vec<f64> {
    rows.iter().flat_map(|r| r.as_ref().iter().copied()).collect()
}

/// Inverse of [`flatten_window`].
pub fn unflatten_window(flat: &[f64], n: usize, dim: usize) -> Result<Vec<Vec<f64>>> {
    if flat.len() != n * dim {
        return Err(Error::DimensionMismatch { expected: n * dim, got: flat.len() });
    }
    Ok(flat.chunks_exact(dim).map(<[f64]>::to_vec).collect())
}

/// Per-component affine standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Normalizer {
    /// No-op normalizer (mean 0, std 1).
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    /// Mean and population std per component over every state in every window.
    pub fn fit(ws: &WindowSet) -> Result<Self> {
        if ws.len() < 2 {
            return Err(Error::invalid("normalizer needs at least two windows"));
        }
        let d = ws.dim();
        let rows = ws.data().chunks_exact(d);
        let count = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for row in rows.clone() {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= count);
        let mut var = vec![0.0; d];
        for row in rows {
            for c in 0..d {
                let e = row[c] - mean[c];
                var[c] += e * e;
            }
        }
        let std = var.iter().map(|v| (v / count).sqrt().max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Normalize a flat block of whole states in place.
    pub fn apply_in_place(&self, block: &mut [f64]) {
        let d = self.dim();
        debug_assert_eq!(block.len() % d, 0);
        for (i, v) in block.iter_mut().enumerate() {
            let c = i % d;
            *v = (*v - self.mean[c]) / self.std[c];
        }
    }

    pub fn invert_in_place(&self, block: &mut [f64]) {
        let d = self.dim();
        debug_assert_eq!(block.len() % d, 0);
        for (i, v) in block.iter_mut().enumerate() {
            let c = i % d;
            *v = *v * self.std[c] + self.mean[c];
        }
    }

    pub fn apply(&self, block: &[f64]) -> Vec<f64> {
        let mut out = block.to_vec();
        self.apply_in_place(&mut out);
        out
    }

    pub fn invert(&self, block: &[f64]) -> Vec<f64> {
        let mut out = block.to_vec();
        self.invert_in_place(&mut out);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{integrate_lorenz63, Lorenz63Params};
    use crate::rng::{stream, Stage};
    use proptest::prelude::*;
    use rand_distr::StandardNormal;

    fn lorenz(steps: usize) -> Trajectory {
        integrate_lorenz63(&[1.0, 1.0, 20.0], &Lorenz63Params::default(), 0.025, steps).unwrap()
    }

    #[test]
    fn contiguous_count_is_t_minus_n_plus_one() {
        let traj = lorenz(2);
        let mut rng = stream(0, Stage::Test, 0);
        let ws = build_windows(&traj, 2, 2, (0.0, 1.0), Sampling::AllContiguous, &mut rng).unwrap();
        assert_eq!(ws.len(), 2);
        assert_eq!(ws.window(0), flatten_window(&[traj.state(0), traj.state(1)]).as_slice());
        assert_eq!(ws.window(1), flatten_window(&[traj.state(1), traj.state(2)]).as_slice());
        assert!(build_windows(&traj, 2, 3, (0.0, 1.0), Sampling::AllContiguous, &mut rng).is_err());
    }

    #[test]
    fn random_windows_are_adjacent_source_rows() {
        let traj = lorenz(500);
        let mut rng = stream(1, Stage::Test, 0);
        let ws = build_windows(&traj, 3, 200, (1.0, 10.0), Sampling::UniformRandom, &mut rng).unwrap();
        assert_eq!(ws.len(), 200);
        for (i, &s) in ws.starts.iter().enumerate() {
            let rows = unflatten_window(ws.window(i), 3, 3).unwrap();
            for (r, row) in rows.iter().enumerate() {
                assert_eq!(row.as_slice(), traj.state(s + r));
            }
            assert!(traj.time(s) >= 1.0 - 1e-12);
            assert!(traj.time(s + 2) < 10.0);
        }
    }

    #[test]
    fn range_boundary_is_exclusive() {
        let traj = lorenz(100);
        let mut rng = stream(2, Stage::Test, 0);
        // States at t = 0.0, 0.025, ..., 0.475 are admissible; 0.5 is not.
        let ws = build_windows(&traj, 2, 19, (0.0, 0.5), Sampling::AllContiguous, &mut rng).unwrap();
        assert_eq!(ws.len(), 19);
        assert!(build_windows(&traj, 2, 20, (0.0, 0.5), Sampling::AllContiguous, &mut rng).is_err());
        let err = build_windows(&traj, 5, 1, (0.0, 0.09), Sampling::UniformRandom, &mut rng).unwrap_err();
        assert!(matches!(err, Error::RangeTooShort { available: 4, needed: 5 }));
    }

    #[test]
    fn flatten_layout() {
        let w = flatten_window(&[vec![1.0, 2.0, 3.0], vec![4.0, 5.0, 6.0]]);
        assert_eq!(w, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(flatten_window(&[vec![7.0, 8.0]]), vec![7.0, 8.0]);
    }

    #[test]
    fn constant_data_normalizes_to_zero() {
        let ws = WindowSet::from_parts(vec![3.0; 40], 2, 2, 0.1, (0.0, 1.0)).unwrap();
        let norm = Normalizer::fit(&ws).unwrap();
        assert_eq!(norm.std, vec![STD_FLOOR; 2]);
        assert_eq!(norm.apply(&[3.0, 3.0]), vec![0.0, 0.0]);
    }

    #[test]
    fn standard_normal_fit() {
        let mut rng = stream(3, Stage::Test, 0);
        let data: Vec<f64> = (0..10_000 * 2 * 2).map(|_| rng.sample(StandardNormal)).collect();
        let ws = WindowSet::from_parts(data, 2, 2, 0.1, (0.0, 1.0)).unwrap();
        let norm = Normalizer::fit(&ws).unwrap();
        for c in 0..2 {
            assert!(norm.mean[c].abs() < 0.05);
            assert!((norm.std[c] - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn window_file_round_trip() {
        let traj = lorenz(50);
        let mut rng = stream(4, Stage::Test, 0);
        let ws = build_windows(&traj, 2, 10, (0.0, 1.0), Sampling::UniformRandom, &mut rng).unwrap();
        let mut buf = Vec::new();
        ws.write_binary(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"JCWS");
        let back = WindowSet::read_binary(&buf[..]).unwrap();
        assert_eq!(back.data(), ws.data());
        assert_eq!(back.window_len(), 2);
        assert_eq!(back.source_span, ws.source_span);
        assert_eq!(back.system_tag, "lorenz63");
    }

    proptest! {
        #[test]
        fn flatten_unflatten_round_trip(n in 1usize..5, d in 1usize..5, seed in any::<u64>()) {
            let mut rng = stream(seed, Stage::Test, 0);
            let rows: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect()).collect();
            let flat = flatten_window(&rows);
            prop_assert_eq!(unflatten_window(&flat, n, d).unwrap(), rows);
        }

        #[test]
        fn normalizer_inverts(values in proptest::collection::vec(-1e3f64..1e3, 12), scale in 0.01f64..100.0) {
            let data: Vec<f64> = values.iter().map(|v| v * scale).collect();
            let ws = WindowSet::from_parts(data.clone(), 2, 3, 0.1, (0.0, 1.0)).unwrap();
            let norm = Normalizer::fit(&ws).unwrap();
            let back = norm.invert(&norm.apply(&data));
            for (a, b) in back.iter().zip(&data) {
                prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }
}
