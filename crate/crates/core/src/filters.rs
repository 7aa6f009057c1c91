// SPDX-License-Identifier: Apache-2.0
//! Smooth cutoffs, dyadic Littlewood-Paley banks, frequency windows and the
//! decomposition of a bump into compactly supported pieces.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::grid::{Domain, Grid, GridFunction, C64};

/// C^∞ step: 0 for t ≤ 0, 1 for t ≥ 1, strictly increasing in between.
pub fn smooth_step(t: f64) -> f64 {
    if t <= 0.0 {
        return 0.0;
    }
    if t >= 1.0 {
        return 1.0;
    }
    let a = (-1.0 / t).exp();
    let b = (-1.0 / (1.0 - t)).exp();
    a / (a + b)
}

/// Radial cutoff equal to 1 for `r ≤ inner` and 0 for `r ≥ outer`.
pub fn cutoff(r: f64, inner: f64, outer: f64) -> f64 {
    if r <= inner {
        1.0
    } else if r >= outer {
        0.0
    } else {
        smooth_step((outer - r) / (outer - inner))
    }
}

/// The base low-pass profile: 1 on `[0, 1]`, 0 from 2 on.
pub fn phi0(r: f64) -> f64 {
    cutoff(r, 1.0, 2.0)
}

/// Smooth bump around `center`, 1 on the inner ball and 0 outside the outer ball.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub center: Vec<f64>,
    pub inner_radius: f64,
    pub outer_radius: f64,
}

impl Bump {
    pub fn new(center: Vec<f64>, inner_radius: f64, outer_radius: f64) -> Result<Self> {
        if !(inner_radius > 0.0 && inner_radius < outer_radius && outer_radius.is_finite()) {
            return Err(param(format!(
                "bump radii must satisfy 0 < inner < outer, got {inner_radius}, {outer_radius}"
            )));
        }
        if center.is_empty() {
            return Err(param("bump center needs at least one coordinate"));
        }
        Ok(Bump {
            center,
            inner_radius,
            outer_radius,
        })
    }

    pub fn dims(&self) -> usize {
        self.center.len()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let r2: f64 = x
            .iter()
            .zip(&self.center)
            .map(|(a, c)| (a - c) * (a - c))
            .sum();
        cutoff(r2.sqrt(), self.inner_radius, self.outer_radius)
    }

    /// Axis-aligned box containing the support.
    pub fn support_box(&self) -> Vec<(f64, f64)> {
        self.center
            .iter()
            .map(|&c| (c - self.outer_radius, c + self.outer_radius))
            .collect()
    }
}

/// Radial window: zero below `lo`, one on `[plateau_lo, plateau_hi]`, zero above `hi`.
/// `lo = plateau_lo = 0` gives a ball window.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadialWindow {
    pub lo: f64,
    pub plateau_lo: f64,
    pub plateau_hi: f64,
    pub hi: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WindowKind {
    /// Supported in `1/2 ≤ r ≤ 2`.
    Annulus,
    /// Supported in `1/100 ≤ r ≤ 100`.
    Tilde,
}

impl RadialWindow {
    pub fn new(lo: f64, plateau_lo: f64, plateau_hi: f64, hi: f64) -> Result<Self> {
        let ordered = 0.0 <= lo && lo <= plateau_lo && plateau_lo < plateau_hi && plateau_hi < hi;
        if !ordered || (lo == plateau_lo && lo > 0.0) {
            return Err(param(format!(
                "window radii out of order: {lo}, {plateau_lo}, {plateau_hi}, {hi}"
            )));
        }
        Ok(RadialWindow {
            lo,
            plateau_lo,
            plateau_hi,
            hi,
        })
    }

    pub fn ball(inner: f64, outer: f64) -> Result<Self> {
        Self::new(0.0, 0.0, inner, outer)
    }

    pub fn of_kind(kind: WindowKind) -> Self {
        match kind {
            WindowKind::Annulus => RadialWindow {
                lo: 0.5,
                plateau_lo: 0.625,
                plateau_hi: 1.6,
                hi: 2.0,
            },
            WindowKind::Tilde => RadialWindow {
                lo: 0.01,
                plateau_lo: 0.02,
                plateau_hi: 50.0,
                hi: 100.0,
            },
        }
    }

    pub fn eval(&self, r: f64) -> f64 {
        if r >= self.hi {
            return 0.0;
        }
        if r > self.plateau_hi {
            return smooth_step((self.hi - r) / (self.hi - self.plateau_hi));
        }
        if r >= self.plateau_lo {
            return 1.0;
        }
        if r <= self.lo {
            return 0.0;
        }
        smooth_step((r - self.lo) / (self.plateau_lo - self.lo))
    }

    /// Checks that a lattice of the given spacing, reaching up to `reach`, samples
    /// every transition band it meets at least twice per band width.
    pub fn check_resolution(&self, spacing: f64, reach: f64) -> Result<()> {
        let bands = [(self.lo, self.plateau_lo), (self.plateau_hi, self.hi)];
        for (a, b) in bands {
            if b <= a || a > reach {
                continue;
            }
            if spacing > (b - a) / 2.0 {
                return Err(Error::Resolution(format!(
                    "window transition [{a}, {b}] with lattice spacing {spacing}"
                )));
            }
        }
        Ok(())
    }
}

/// Window Θ or Θ̃ sampled radially on the frequency lattice of `grid`.
pub fn window_theta(grid: &Grid, kind: WindowKind) -> Result<GridFunction> {
    let w = RadialWindow::of_kind(kind);
    w.check_resolution(grid.freq_spacing(), grid.nyquist())?;
    Ok(GridFunction::from_spectral_fn(grid, |xi| {
        C64::new(w.eval(norm(xi)), 0.0)
    }))
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Parameters needed to rebuild a bank; this is the serialized form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankConfig {
    pub grid: Grid,
    pub j_min: i32,
    pub j_max: i32,
    pub separation: i32,
    /// Name of the radial profile; only `"exp_ratio_step"` exists.
    #[serde(default = "default_profile")]
    pub profile: String,
}

fn default_profile() -> String {
    "exp_ratio_step".into()
}

/// Dyadic family ψ_j, φ_j on the frequency lattice of an n-dimensional grid.
#[derive(Clone, Debug)]
pub struct FilterBank {
    grid: Grid,
    j_min: i32,
    j_max: i32,
    separation: i32,
    psi_hat: BTreeMap<i32, GridFunction>,
    phi_hat: BTreeMap<i32, GridFunction>,
}

pub fn build_dyadic_bank(grid: &Grid, j_min: i32, j_max: i32, separation: i32) -> Result<FilterBank> {
    FilterBank::new(grid, j_min, j_max, separation)
}

impl FilterBank {
    pub fn new(grid: &Grid, j_min: i32, j_max: i32, separation: i32) -> Result<Self> {
        if separation < 1 {
            return Err(param("separation must be at least 1"));
        }
        if j_max - j_min < 3 {
            return Err(param(format!("need j_max - j_min >= 3, got [{j_min}, {j_max}]")));
        }
        let lowest = 2f64.powi(j_min);
        if lowest < grid.freq_spacing() {
            return Err(Error::Resolution(format!(
                "scale 2^{j_min} below frequency spacing {}",
                grid.freq_spacing()
            )));
        }
        if 2f64.powi(j_max) > grid.nyquist() {
            return Err(Error::Resolution(format!(
                "scale 2^{j_max} above Nyquist {}",
                grid.nyquist()
            )));
        }
        let mut bank = FilterBank {
            grid: grid.clone(),
            j_min,
            j_max,
            separation,
            psi_hat: BTreeMap::new(),
            phi_hat: BTreeMap::new(),
        };
        let radii: Vec<f64> = (0..grid.len()).map(|i| norm(&grid.frequency(i))).collect();
        for j in j_min..=j_max {
            let psi: Vec<C64> = radii.iter().map(|&r| C64::new(bank.psi_radial(j, r), 0.0)).collect();
            let phi: Vec<C64> = radii.iter().map(|&r| C64::new(bank.phi_radial(j, r), 0.0)).collect();
            bank.psi_hat
                .insert(j, GridFunction::new(grid.clone(), psi, Domain::Spectral)?);
            bank.phi_hat
                .insert(j, GridFunction::new(grid.clone(), phi, Domain::Spectral)?);
        }
        Ok(bank)
    }

    pub fn from_config(cfg: &BankConfig) -> Result<Self> {
        if cfg.profile != "exp_ratio_step" {
            return Err(param(format!("unknown profile {}", cfg.profile)));
        }
        Self::new(&cfg.grid, cfg.j_min, cfg.j_max, cfg.separation)
    }

    pub fn config(&self) -> BankConfig {
        BankConfig {
            grid: self.grid.clone(),
            j_min: self.j_min,
            j_max: self.j_max,
            separation: self.separation,
            profile: default_profile(),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn j_min(&self) -> i32 {
        self.j_min
    }

    pub fn j_max(&self) -> i32 {
        self.j_max
    }

    pub fn separation(&self) -> i32 {
        self.separation
    }

    pub fn scales(&self) -> impl Iterator<Item = i32> {
        self.j_min..=self.j_max
    }

    pub fn psi_hat(&self, j: i32) -> Option<&GridFunction> {
        self.psi_hat.get(&j)
    }

    pub fn phi_hat(&self, j: i32) -> Option<&GridFunction> {
        self.phi_hat.get(&j)
    }

    /// Whether a radius lies in the band where the ψ_j sum exactly to one.
    pub fn covers(&self, r: f64) -> bool {
        r >= 2f64.powi(self.j_min) && r <= 2f64.powi(self.j_max)
    }

    fn psi_raw(j: i32, r: f64) -> f64 {
        phi0(r / 2f64.powi(j)) - phi0(r / 2f64.powi(j - 1))
    }

    fn band_sum(&self, r: f64) -> f64 {
        (self.j_min..=self.j_max).map(|j| Self::psi_raw(j, r)).sum()
    }

    /// ψ̂_j at radius `r`, renormalized in band so the bank sums to one exactly.
    pub fn psi_radial(&self, j: i32, r: f64) -> f64 {
        let raw = Self::psi_raw(j, r);
        if raw != 0.0 && self.covers(r) {
            raw / self.band_sum(r)
        } else {
            raw
        }
    }

    /// φ̂_j = Σ_{k ≤ j - separation - 1} ψ̂_k at radius `r`.
    pub fn phi_radial(&self, j: i32, r: f64) -> f64 {
        let top = j - self.separation - 1;
        if r < 2f64.powi(self.j_min) {
            return phi0(r / 2f64.powi(top));
        }
        (self.j_min..=top.min(self.j_max))
            .map(|k| self.psi_radial(k, r))
            .sum()
    }

    /// Spatial kernel ψ_j on the bank grid.
    pub fn psi_kernel(&self, j: i32) -> Option<GridFunction> {
        self.psi_hat.get(&j).map(|f| f.to_spatial())
    }

    pub fn phi_kernel(&self, j: i32) -> Option<GridFunction> {
        self.phi_hat.get(&j).map(|f| f.to_spatial())
    }
}

/// Axis-aligned cube given by center and side length.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    pub center: Vec<f64>,
    pub side: f64,
}

#[derive(Clone, Debug)]
pub struct BumpPiece {
    pub mu: u32,
    pub weight: f64,
    pub piece: GridFunction,
}

/// Splits `v` into pieces supported in the dilates `2^μ I` of `cube`, with weights
/// `2^{-c_exp μ}`. Mean-zero input yields mean-zero pieces.
///
/// The pieces sum to `v` except on points farther than `2^{mu_max-2}` sides from the
/// center; there the residual must stay below `2^{-c_exp (mu_max-2)} sup|v|`, otherwise
/// `v` does not decay fast enough and a tail-bound error is returned.
pub fn compact_bump_decomposition(
    v: &GridFunction,
    cube: &Cube,
    mu_max: u32,
    c_exp: f64,
) -> Result<Vec<BumpPiece>> {
    let grid = v.grid();
    if v.domain() != Domain::Spatial {
        return Err(crate::error::structural("decomposition needs spatial samples"));
    }
    if mu_max < 1 || c_exp <= 0.0 || cube.side <= 0.0 || cube.center.len() != grid.dims() {
        return Err(param("need mu_max >= 1, c_exp > 0 and a cube matching the grid"));
    }
    if 2f64.powi(mu_max as i32) * cube.side > grid.period() {
        return Err(param(format!(
            "2^{mu_max} I does not fit in period {}",
            grid.period()
        )));
    }
    let period = grid.period();
    // Periodic sup-distance of every grid point from the center, in units of the side.
    let offsets: Vec<Vec<f64>> = (0..grid.len())
        .map(|i| {
            grid.point(i)
                .iter()
                .zip(&cube.center)
                .map(|(x, c)| {
                    let d = (x - c).rem_euclid(period);
                    d.min(period - d) / cube.side
                })
                .collect()
        })
        .collect();
    let eta = |mu: u32| -> Vec<f64> {
        let scale = 2f64.powi(mu as i32 - 2);
        offsets
            .iter()
            .map(|o| o.iter().map(|&t| phi0(t / scale)).product())
            .collect()
    };
    let samples = v.samples();
    let cell = grid.cell_volume();
    let mut raw: Vec<Vec<C64>> = Vec::with_capacity(mu_max as usize + 1);
    let mut prev = vec![0.0; grid.len()];
    for mu in 0..=mu_max {
        let cur = eta(mu);
        raw.push(
            samples
                .iter()
                .zip(cur.iter().zip(&prev))
                .map(|(&s, (&a, &b))| s * (a - b))
                .collect(),
        );
        prev = cur;
    }

    let total: C64 = samples.iter().sum::<C64>() * cell;
    let mass: f64 = samples.iter().map(|z| z.norm()).sum::<f64>() * cell;
    if total.norm() <= 1e-12 * mass {
        // Move each partial mean onto a fixed unit-mass bump inside I.
        let b: Vec<f64> = offsets
            .iter()
            .map(|o| o.iter().map(|&t| phi0(t * 4.0)).product())
            .collect();
        let bmass: f64 = b.iter().sum::<f64>() * cell;
        if bmass <= 0.0 {
            return Err(Error::Resolution("cube smaller than the grid spacing".into()));
        }
        let mut partial = C64::new(0.0, 0.0);
        for piece in raw.iter_mut() {
            let before = partial;
            partial += piece.iter().sum::<C64>() * cell;
            let shift = (partial - before) / bmass;
            for (z, &bv) in piece.iter_mut().zip(&b) {
                *z -= shift * bv;
            }
        }
    }

    let recon: Vec<C64> = (0..grid.len())
        .map(|i| raw.iter().map(|p| p[i]).sum())
        .collect();
    let tail = samples
        .iter()
        .zip(&recon)
        .map(|(a, b)| (a - b).norm())
        .fold(0.0, f64::max);
    let bound = 2f64.powf(-c_exp * (mu_max as f64 - 2.0)) * v.max_abs() * (1.0 + 1e-12)
        + 1e-13 * v.max_abs();
    if tail > bound {
        return Err(Error::TailBound { tail, bound });
    }

    raw.into_iter()
        .enumerate()
        .map(|(mu, p)| {
            let weight = 2f64.powf(-c_exp * mu as f64);
            let piece = GridFunction::new(
                grid.clone(),
                p.into_iter().map(|z| z / weight).collect(),
                Domain::Spatial,
            )?;
            Ok(BumpPiece {
                mu: mu as u32,
                weight,
                piece,
            })
        })
        .collect()
}
