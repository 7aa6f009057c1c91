// SPDX-License-Identifier: Apache-2.0
//! Periodic uniform grids, sampled functions and their discrete Fourier transforms.
//!
//! Conventions: frequencies are in cycles, `k/P`. The forward transform is
//! `F(k) = h^d Σ_x f(x) e^{-2πi k·x/P}` and the inverse is
//! `f(x) = P^{-d} Σ_k F(k) e^{2πi k·x/P}`, so quadrature norms satisfy
//! `h^d Σ|f|² = P^{-d} Σ|F|²`. Samples are stored in FFT order along each axis:
//! index `i` stands for the signed index `i` when `i < N/2` and `i - N` otherwise.

use std::cell::RefCell;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{param, structural, Result};

pub type C64 = Complex64;

/// Number of FFT lines gathered per batch on strided axes.
const LINE_BATCH: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dims: usize,
    points_per_axis: usize,
    period: f64,
}

impl Grid {
    pub fn new(dims: usize, points_per_axis: usize, period: f64) -> Result<Self> {
        if dims == 0 {
            return Err(param("grid needs at least one dimension"));
        }
        if points_per_axis < 2 || !points_per_axis.is_power_of_two() {
            return Err(param(format!(
                "points per axis must be a power of two >= 2, got {points_per_axis}"
            )));
        }
        if !(period.is_finite() && period > 0.0) {
            return Err(param(format!("period must be positive, got {period}")));
        }
        points_per_axis
            .checked_pow(dims as u32)
            .ok_or_else(|| param("grid size overflows"))?;
        Ok(Grid {
            dims,
            points_per_axis,
            period,
        })
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn points_per_axis(&self) -> usize {
        self.points_per_axis
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn spacing(&self) -> f64 {
        self.period / self.points_per_axis as f64
    }

    /// Total number of samples, `N^dims`.
    pub fn len(&self) -> usize {
        self.points_per_axis.pow(self.dims as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Largest representable frequency magnitude per axis, `N/(2P)`.
    pub fn nyquist(&self) -> f64 {
        self.points_per_axis as f64 / (2.0 * self.period)
    }

    pub fn freq_spacing(&self) -> f64 {
        1.0 / self.period
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dims as i32)
    }

    /// Quadrature weight of one frequency cell, `P^{-dims}`.
    pub fn freq_cell_volume(&self) -> f64 {
        self.period.powi(-(self.dims as i32))
    }

    pub fn signed_index(&self, i: usize) -> i64 {
        let n = self.points_per_axis;
        if i < n / 2 {
            i as i64
        } else {
            i as i64 - n as i64
        }
    }

    /// Storage index of a signed index, wrapping periodically.
    pub fn wrap_index(&self, k: i64) -> usize {
        k.rem_euclid(self.points_per_axis as i64) as usize
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.signed_index(i) as f64 * self.spacing()
    }

    pub fn freq(&self, i: usize) -> f64 {
        self.signed_index(i) as f64 / self.period
    }

    /// Axis indices of a flat index, slowest axis first.
    pub fn unflatten(&self, mut flat: usize, out: &mut [usize]) {
        let n = self.points_per_axis;
        for slot in out.iter_mut().rev() {
            *slot = flat % n;
            flat /= n;
        }
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter()
            .fold(0, |acc, &i| acc * self.points_per_axis + i)
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        let mut idx = vec![0; self.dims];
        self.unflatten(flat, &mut idx);
        idx.iter().map(|&i| self.coord(i)).collect()
    }

    pub fn frequency(&self, flat: usize) -> Vec<f64> {
        let mut idx = vec![0; self.dims];
        self.unflatten(flat, &mut idx);
        idx.iter().map(|&i| self.freq(i)).collect()
    }

    /// Same period, `factor` times more points per axis.
    pub fn refined(&self, factor: usize) -> Result<Grid> {
        Grid::new(self.dims, self.points_per_axis * factor, self.period)
    }

    pub fn with_dims(&self, dims: usize) -> Result<Grid> {
        Grid::new(dims, self.points_per_axis, self.period)
    }

    /// The grid whose spatial lattice is this grid's frequency lattice.
    pub fn dual(&self) -> Grid {
        Grid {
            dims: self.dims,
            points_per_axis: self.points_per_axis,
            period: self.points_per_axis as f64 / self.period,
        }
    }

    pub(crate) fn ensure_same(&self, other: &Grid) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(structural(format!("grid mismatch: {self:?} vs {other:?}")))
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Spatial,
    Spectral,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Inverse,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    grid: Grid,
    samples: Vec<C64>,
    domain: Domain,
}

impl GridFunction {
    pub fn new(grid: Grid, samples: Vec<C64>, domain: Domain) -> Result<Self> {
        if samples.len() != grid.len() {
            return Err(structural(format!(
                "{} samples for a grid of {} points",
                samples.len(),
                grid.len()
            )));
        }
        Ok(GridFunction {
            grid,
            samples,
            domain,
        })
    }

    pub fn zeros(grid: &Grid, domain: Domain) -> Self {
        GridFunction {
            samples: vec![C64::new(0.0, 0.0); grid.len()],
            grid: grid.clone(),
            domain,
        }
    }

    pub fn constant(grid: &Grid, value: C64) -> Self {
        GridFunction {
            samples: vec![value; grid.len()],
            grid: grid.clone(),
            domain: Domain::Spatial,
        }
    }

    /// Samples `f` at the spatial grid points.
    pub fn from_spatial_fn(grid: &Grid, f: impl FnMut(&[f64]) -> C64) -> Self {
        Self::sample(grid, Domain::Spatial, f)
    }

    /// Samples `f` at the frequency lattice points.
    pub fn from_spectral_fn(grid: &Grid, f: impl FnMut(&[f64]) -> C64) -> Self {
        Self::sample(grid, Domain::Spectral, f)
    }

    fn sample(grid: &Grid, domain: Domain, mut f: impl FnMut(&[f64]) -> C64) -> Self {
        let mut idx = vec![0usize; grid.dims];
        let mut x = vec![0.0; grid.dims];
        let samples = (0..grid.len())
            .map(|flat| {
                grid.unflatten(flat, &mut idx);
                for (xa, &ia) in x.iter_mut().zip(&idx) {
                    *xa = match domain {
                        Domain::Spatial => grid.coord(ia),
                        Domain::Spectral => grid.freq(ia),
                    };
                }
                f(&x)
            })
            .collect();
        GridFunction {
            grid: grid.clone(),
            samples,
            domain,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn samples(&self) -> &[C64] {
        &self.samples
    }

    pub fn samples_mut(&mut self) -> &mut [C64] {
        &mut self.samples
    }

    pub fn into_samples(self) -> Vec<C64> {
        self.samples
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn scale(&self, c: C64) -> GridFunction {
        self.map(|z| z * c)
    }

    pub fn map(&self, f: impl Fn(C64) -> C64) -> GridFunction {
        GridFunction {
            grid: self.grid.clone(),
            samples: self.samples.iter().map(|&z| f(z)).collect(),
            domain: self.domain,
        }
    }

    /// `self + c·other`, same grid and domain.
    pub fn add_scaled(&self, other: &GridFunction, c: C64) -> Result<GridFunction> {
        self.ensure_compatible(other)?;
        Ok(GridFunction {
            grid: self.grid.clone(),
            samples: self
                .samples
                .iter()
                .zip(&other.samples)
                .map(|(&a, &b)| a + c * b)
                .collect(),
            domain: self.domain,
        })
    }

    pub fn sub(&self, other: &GridFunction) -> Result<GridFunction> {
        self.add_scaled(other, C64::new(-1.0, 0.0))
    }

    pub(crate) fn ensure_compatible(&self, other: &GridFunction) -> Result<()> {
        self.grid.ensure_same(&other.grid)?;
        if self.domain != other.domain {
            return Err(structural("domain tags differ"));
        }
        Ok(())
    }

    /// Largest sample modulus.
    pub fn max_abs(&self) -> f64 {
        self.samples.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Quadrature integral of the samples (spatial domain).
    pub fn integral(&self) -> C64 {
        self.samples.iter().sum::<C64>() * self.grid.cell_volume()
    }

    /// Spectral samples of this function, transforming if needed.
    pub fn to_spectral(&self) -> GridFunction {
        match self.domain {
            Domain::Spectral => self.clone(),
            Domain::Spatial => fft_scaled(self, Direction::Forward),
        }
    }

    pub fn to_spatial(&self) -> GridFunction {
        match self.domain {
            Domain::Spatial => self.clone(),
            Domain::Spectral => fft_scaled(self, Direction::Inverse),
        }
    }

    /// Moves spectral content onto a finer grid of the same period by zero padding.
    /// The input must have no content at the Nyquist index of any axis.
    pub fn spectral_pad(&self, target: &Grid) -> Result<GridFunction> {
        let spec = self.to_spectral();
        let src = &self.grid;
        if target.dims != src.dims
            || target.period != src.period
            || target.points_per_axis < src.points_per_axis
        {
            return Err(structural("padding target must share dims and period"));
        }
        let mut out = GridFunction::zeros(target, Domain::Spectral);
        let mut idx = vec![0usize; src.dims];
        let mut tidx = vec![0usize; src.dims];
        for (flat, &z) in spec.samples.iter().enumerate() {
            if z == C64::new(0.0, 0.0) {
                continue;
            }
            src.unflatten(flat, &mut idx);
            for (t, &i) in tidx.iter_mut().zip(&idx) {
                *t = target.wrap_index(src.signed_index(i));
            }
            out.samples[target.flatten(&tidx)] = z;
        }
        Ok(out)
    }

    /// Keeps the spectral content of this function that is representable on a coarser
    /// grid of the same period; spatially this subsamples band-limited data.
    pub fn spectral_truncate(&self, target: &Grid) -> Result<GridFunction> {
        let spec = self.to_spectral();
        let src = &self.grid;
        if target.dims != src.dims
            || target.period != src.period
            || target.points_per_axis > src.points_per_axis
        {
            return Err(structural("truncation target must share dims and period"));
        }
        let half = (target.points_per_axis / 2) as i64;
        let mut out = GridFunction::zeros(target, Domain::Spectral);
        let mut idx = vec![0usize; src.dims];
        let mut tidx = vec![0usize; src.dims];
        'outer: for (flat, &z) in spec.samples.iter().enumerate() {
            src.unflatten(flat, &mut idx);
            for (t, &i) in tidx.iter_mut().zip(&idx) {
                let k = src.signed_index(i);
                if k < -half || k >= half {
                    continue 'outer;
                }
                *t = target.wrap_index(k);
            }
            out.samples[target.flatten(&tidx)] = z;
        }
        Ok(out)
    }
}

/// Discrete Fourier transform with the continuum scaling described in the module docs.
pub fn transform(f: &GridFunction, direction: Direction) -> Result<GridFunction> {
    let expected = match direction {
        Direction::Forward => Domain::Spatial,
        Direction::Inverse => Domain::Spectral,
    };
    if f.domain != expected {
        return Err(structural(format!(
            "{direction:?} transform applied to {:?} samples",
            f.domain
        )));
    }
    Ok(fft_scaled(f, direction))
}

fn fft_scaled(f: &GridFunction, direction: Direction) -> GridFunction {
    let grid = &f.grid;
    let mut data = f.samples.clone();
    fft_nd(&mut data, grid.points_per_axis, grid.dims, direction);
    let scale = match direction {
        Direction::Forward => grid.cell_volume(),
        Direction::Inverse => grid.freq_cell_volume(),
    };
    for z in &mut data {
        *z *= scale;
    }
    GridFunction {
        grid: grid.clone(),
        samples: data,
        domain: match direction {
            Direction::Forward => Domain::Spectral,
            Direction::Inverse => Domain::Spatial,
        },
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, direction: Direction) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        match direction {
            Direction::Forward => p.plan_fft_forward(n),
            Direction::Inverse => p.plan_fft_inverse(n),
        }
    })
}

/// Unnormalized in-place transform over every axis of a row-major cube.
pub(crate) fn fft_nd(data: &mut [C64], n: usize, dims: usize, direction: Direction) {
    let fft = plan(n, direction);
    let mut scratch = vec![C64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    for axis in 0..dims {
        let stride = n.pow((dims - 1 - axis) as u32);
        if stride == 1 {
            fft.process_with_scratch(data, &mut scratch);
            continue;
        }
        let block = n * stride;
        let mut buf = vec![C64::new(0.0, 0.0); LINE_BATCH.min(stride) * n];
        for base in (0..data.len()).step_by(block) {
            let mut r0 = 0;
            while r0 < stride {
                let lines = LINE_BATCH.min(stride - r0);
                for t in 0..n {
                    let row = base + t * stride + r0;
                    for r in 0..lines {
                        buf[r * n + t] = data[row + r];
                    }
                }
                fft.process_with_scratch(&mut buf[..lines * n], &mut scratch);
                for t in 0..n {
                    let row = base + t * stride + r0;
                    for r in 0..lines {
                        data[row + r] = buf[r * n + t];
                    }
                }
                r0 += lines;
            }
        }
    }
}

/// Exponent `p` of an L^p quantity; `f64::INFINITY` stands for the sup norm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    Lebesgue,
    Weak,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormSpec {
    #[serde(with = "exponent")]
    pub p: f64,
    pub kind: NormKind,
}

impl NormSpec {
    pub fn lebesgue(p: f64) -> Self {
        NormSpec {
            p,
            kind: NormKind::Lebesgue,
        }
    }

    pub fn weak(p: f64) -> Self {
        NormSpec {
            p,
            kind: NormKind::Weak,
        }
    }
}

/// Quadrature L^p (or weak L^p) norm of spatial samples.
pub fn lp_norm(f: &GridFunction, spec: NormSpec) -> Result<f64> {
    if f.domain != Domain::Spatial {
        return Err(structural("lp_norm needs spatial samples"));
    }
    if spec.p.is_nan() || spec.p <= 0.0 {
        return Err(param(format!("exponent must be positive, got {}", spec.p)));
    }
    Ok(lp_norm_of(
        f.samples.iter().map(|z| z.norm()),
        f.grid.cell_volume(),
        spec,
    ))
}

/// L^p norm of magnitudes sampled on cells of volume `cell`.
pub(crate) fn lp_norm_of(mags: impl Iterator<Item = f64>, cell: f64, spec: NormSpec) -> f64 {
    let p = spec.p;
    match spec.kind {
        NormKind::Lebesgue if p.is_infinite() => mags.fold(0.0, f64::max),
        NormKind::Lebesgue => {
            let mags: Vec<f64> = mags.collect();
            let top = mags.iter().copied().fold(0.0, f64::max);
            if top == 0.0 {
                return 0.0;
            }
            // Normalizing by the maximum keeps large p from overflowing.
            let s: f64 = mags.iter().map(|&a| (a / top).powf(p)).sum();
            top * (cell * s).powf(1.0 / p)
        }
        NormKind::Weak => {
            let mut mags: Vec<f64> = mags.filter(|&a| a > 0.0).collect();
            mags.sort_by(|a, b| b.total_cmp(a));
            if p.is_infinite() {
                return mags.first().copied().unwrap_or(0.0);
            }
            mags.iter()
                .enumerate()
                .map(|(i, &a)| a * ((i + 1) as f64 * cell).powf(1.0 / p))
                .fold(0.0, f64::max)
        }
    }
}

/// Spectral quadrature L² norm, `(P^{-d} Σ|F|²)^{1/2}`.
pub fn spectral_l2_norm(f: &GridFunction) -> Result<f64> {
    if f.domain != Domain::Spectral {
        return Err(structural("spectral_l2_norm needs spectral samples"));
    }
    let s: f64 = f.samples.iter().map(|z| z.norm_sqr()).sum();
    Ok((s * f.grid.freq_cell_volume()).sqrt())
}

pub fn pointwise_product(f: &GridFunction, g: &GridFunction) -> Result<GridFunction> {
    f.grid.ensure_same(&g.grid)?;
    if f.domain != Domain::Spatial || g.domain != Domain::Spatial {
        return Err(structural("pointwise_product needs spatial samples"));
    }
    Ok(GridFunction {
        grid: f.grid.clone(),
        samples: f
            .samples
            .iter()
            .zip(&g.samples)
            .map(|(&a, &b)| a * b)
            .collect(),
        domain: Domain::Spatial,
    })
}

/// Serde helper for exponents that may be infinite: accepts numbers or `"inf"`.
pub mod exponent {
    use serde::{de, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(p: &f64, s: S) -> Result<S::Ok, S::Error> {
        if p.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*p)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(p) => Ok(p),
            Raw::Text(t) if matches!(t.as_str(), "inf" | "infinity" | "∞") => Ok(f64::INFINITY),
            Raw::Text(t) => Err(de::Error::custom(format!("not an exponent: {t}"))),
        }
    }
}

/// Smallest power of two that is at least `n`.
pub fn next_pow2(n: usize) -> usize {
    n.max(1).next_power_of_two()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    fn random_fn(grid: &Grid, seed: u64) -> GridFunction {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = (0..grid.len())
            .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
            .collect();
        GridFunction::new(grid.clone(), s, Domain::Spatial).unwrap()
    }

    fn rel_err(a: &[C64], b: &[C64]) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum();
        let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
        (num / den).sqrt()
    }

    /// Direct O(N^2d) evaluation of the forward transform.
    fn naive_forward(f: &GridFunction) -> Vec<C64> {
        let g = f.grid();
        (0..g.len())
            .map(|k| {
                let xi = g.frequency(k);
                let sum: C64 = (0..g.len())
                    .map(|x| {
                        let pt = g.point(x);
                        let phase: f64 = pt.iter().zip(&xi).map(|(a, b)| a * b).sum();
                        f.samples()[x] * C64::from_polar(1.0, -2.0 * std::f64::consts::PI * phase)
                    })
                    .sum();
                sum * g.cell_volume()
            })
            .collect()
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid::new(1, 12, 1.0).is_err());
        assert!(Grid::new(0, 8, 1.0).is_err());
        assert!(Grid::new(2, 8, -1.0).is_err());
    }

    #[test]
    fn fft_matches_direct_sum() {
        for dims in 1..=3 {
            let g = Grid::new(dims, 8, 3.0).unwrap();
            let f = random_fn(&g, dims as u64);
            let fast = transform(&f, Direction::Forward).unwrap();
            assert!(rel_err(fast.samples(), &naive_forward(&f)) < 1e-12);
        }
    }

    #[test]
    fn round_trip() {
        let g = Grid::new(2, 32, 5.0).unwrap();
        let f = random_fn(&g, 7);
        let back = transform(&transform(&f, Direction::Forward).unwrap(), Direction::Inverse).unwrap();
        assert!(rel_err(back.samples(), f.samples()) < 1e-12);
    }

    #[test]
    fn delta_is_spectrally_constant() {
        let g = Grid::new(2, 16, 2.0).unwrap();
        let mut f = GridFunction::zeros(&g, Domain::Spatial);
        f.samples_mut()[0] = c(1.0 / g.cell_volume());
        let spec = transform(&f, Direction::Forward).unwrap();
        for z in spec.samples() {
            assert!((z - c(1.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn single_mode_has_magnitude_period_power() {
        let period = 2.5;
        let g = Grid::new(2, 8, period).unwrap();
        let k0 = [3i64, -2];
        let f = GridFunction::from_spatial_fn(&g, |x| {
            let ph = (k0[0] as f64 * x[0] + k0[1] as f64 * x[1]) / period;
            C64::from_polar(1.0, 2.0 * std::f64::consts::PI * ph)
        });
        let spec = transform(&f, Direction::Forward).unwrap();
        let target = g.flatten(&[g.wrap_index(k0[0]), g.wrap_index(k0[1])]);
        for (i, z) in spec.samples().iter().enumerate() {
            let want = if i == target { period * period } else { 0.0 };
            assert!((z.norm() - want).abs() < 1e-12, "index {i}: {z}");
        }
    }

    #[test]
    fn wrong_direction_is_structural_error() {
        let g = Grid::new(1, 8, 1.0).unwrap();
        let f = GridFunction::zeros(&g, Domain::Spatial);
        assert!(matches!(
            transform(&f, Direction::Inverse),
            Err(Error::Structural(_))
        ));
        assert!(GridFunction::new(g, vec![c(0.0); 3], Domain::Spatial).is_err());
    }

    #[test]
    fn norms_of_simple_functions() {
        let g = Grid::new(2, 16, 1.0).unwrap();
        let one = GridFunction::constant(&g, c(1.0));
        for p in [0.5, 1.0, 2.0, 7.0, f64::INFINITY] {
            assert!((lp_norm(&one, NormSpec::lebesgue(p)).unwrap() - 1.0).abs() < 1e-12);
        }
        let half = GridFunction::from_spatial_fn(&g, |x| c(if x[0] < 0.0 { 1.0 } else { 0.0 }));
        let v = lp_norm(&half, NormSpec::lebesgue(2.0)).unwrap();
        assert!((v - 0.5f64.sqrt()).abs() < 1e-12);
        assert!(lp_norm(&half, NormSpec::lebesgue(0.0)).is_err());
        assert!(lp_norm(&half, NormSpec::lebesgue(-1.0)).is_err());
    }

    #[test]
    fn weak_norm_of_step_profile() {
        // Magnitudes 1 on 1/4 of the cells and 2 on another 1/4, P = 1.
        let g = Grid::new(1, 8, 1.0).unwrap();
        let vals = [2.0, 2.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        let f = GridFunction::new(g, vals.iter().map(|&v| c(v)).collect(), Domain::Spatial).unwrap();
        let w = lp_norm(&f, NormSpec::weak(1.0)).unwrap();
        // max(2 * 1/4, 1 * 1/2) = 1/2
        assert!((w - 0.5).abs() < 1e-15);
        let w2 = lp_norm(&f, NormSpec::weak(2.0)).unwrap();
        // max(2 * (1/4)^{1/2}, 1 * (1/2)^{1/2}) = 1
        assert!((w2 - 1.0).abs() < 1e-15);
        assert!(w <= lp_norm(&f, NormSpec::lebesgue(1.0)).unwrap() + 1e-15);
    }

    #[test]
    fn parseval_on_band_limited_input() {
        let g = Grid::new(2, 32, 4.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let spec = GridFunction::from_spectral_fn(&g, |xi| {
            if xi.iter().all(|v| v.abs() < 2.0) {
                C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0))
            } else {
                c(0.0)
            }
        });
        let f = transform(&spec, Direction::Inverse).unwrap();
        let a = lp_norm(&f, NormSpec::lebesgue(2.0)).unwrap();
        let b = spectral_l2_norm(&spec).unwrap();
        assert!(((a - b) / b).abs() < 1e-10);
    }

    #[test]
    fn product_of_modes_is_sum_mode() {
        // Direct convolution of the two one-mode spectra at N = 8 puts all mass at k1 + k2;
        // the refined grid gives the headroom needed to hold 3 + 2 = 5 > N/2.
        let coarse = Grid::new(1, 8, 1.0).unwrap();
        let fine = coarse.refined(2).unwrap();
        let mode = |k: f64| {
            move |x: &[f64]| C64::from_polar(1.0, 2.0 * std::f64::consts::PI * k * x[0])
        };
        let f = GridFunction::from_spatial_fn(&coarse, mode(3.0)).spectral_pad(&fine).unwrap();
        let g = GridFunction::from_spatial_fn(&coarse, mode(2.0)).spectral_pad(&fine).unwrap();
        let prod = pointwise_product(&f.to_spatial(), &g.to_spatial()).unwrap();
        let spec = transform(&prod, Direction::Forward).unwrap();
        for (i, z) in spec.samples().iter().enumerate() {
            let want = if fine.signed_index(i) == 5 { 1.0 } else { 0.0 };
            assert!((z.norm() - want).abs() < 1e-12);
        }
    }

    #[test]
    fn product_identities() {
        let g = Grid::new(1, 16, 1.0).unwrap();
        let f = random_fn(&g, 11);
        let one = GridFunction::constant(&g, c(1.0));
        let zero = GridFunction::zeros(&g, Domain::Spatial);
        assert_eq!(pointwise_product(&f, &one).unwrap(), f);
        assert_eq!(pointwise_product(&f, &zero).unwrap().max_abs(), 0.0);
        let other = Grid::new(1, 16, 2.0).unwrap();
        assert!(pointwise_product(&f, &GridFunction::constant(&other, c(1.0))).is_err());
    }

    #[test]
    fn exponent_serde_accepts_inf() {
        let spec: NormSpec = serde_json::from_str(r#"{"p":"inf","kind":"weak"}"#).unwrap();
        assert!(spec.p.is_infinite());
        let back = serde_json::to_string(&spec).unwrap();
        assert!(back.contains("\"inf\""));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn parseval_random(seed in 0u64..1000, logn in 2u32..6, period in 0.5f64..8.0) {
            let g = Grid::new(1, 1 << logn, period).unwrap();
            let f = random_fn(&g, seed);
            let a = lp_norm(&f, NormSpec::lebesgue(2.0)).unwrap();
            let b = spectral_l2_norm(&transform(&f, Direction::Forward).unwrap()).unwrap();
            prop_assert!(((a - b) / b).abs() < 1e-10);
        }

        #[test]
        fn linearity(seed in 0u64..1000, a in -3.0f64..3.0, b in -3.0f64..3.0) {
            let g = Grid::new(2, 8, 1.5).unwrap();
            let f = random_fn(&g, seed);
            let h = random_fn(&g, seed + 1);
            let combo = f.scale(c(a)).add_scaled(&h, c(b)).unwrap();
            let lhs = transform(&combo, Direction::Forward).unwrap();
            let rhs = transform(&f, Direction::Forward).unwrap().scale(c(a))
                .add_scaled(&transform(&h, Direction::Forward).unwrap(), c(b)).unwrap();
            let scale = rhs.max_abs().max(1.0);
            for (x, y) in lhs.samples().iter().zip(rhs.samples()) {
                prop_assert!((x - y).norm() < 1e-12 * scale);
            }
        }

        #[test]
        fn homogeneity(seed in 0u64..1000, cst in -5.0f64..5.0, p in 0.3f64..9.0, weak in any::<bool>()) {
            let g = Grid::new(1, 32, 2.0).unwrap();
            let f = random_fn(&g, seed);
            let spec = if weak { NormSpec::weak(p) } else { NormSpec::lebesgue(p) };
            let lhs = lp_norm(&f.scale(c(cst)), spec).unwrap();
            let rhs = cst.abs() * lp_norm(&f, spec).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.max(1e-300));
        }

        #[test]
        fn nesting_on_unit_period(seed in 0u64..1000, p1 in 0.3f64..6.0, dp in 0.0f64..6.0) {
            let g = Grid::new(1, 64, 1.0).unwrap();
            let f = random_fn(&g, seed);
            let a = lp_norm(&f, NormSpec::lebesgue(p1)).unwrap();
            let b = lp_norm(&f, NormSpec::lebesgue(p1 + dp)).unwrap();
            prop_assert!(a <= b * (1.0 + 1e-12));
        }
    }
}
