// SPDX-License-Identifier: Apache-2.0
//! Sharpness families: the tensor-bump multiplier over compositions of `N`
//! with its test functions, the logarithmically corrected Bessel kernel, and
//! the shifted, rotated and multi-parameter symbols built from it.

use std::f64::consts::{LN_10, PI};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::{gamma, ln_gamma};

use crate::error::{param, structural, Error, Result};
use crate::filters::{cutoff, phi0, Bump};
use crate::grid::{next_pow2, Grid, GridFunction, C64};
use crate::multiplier::{Factor, MultiplierRep, ProductShape, SeparableSum, SeparableTerm, SupportDecl};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

// ---------------------------------------------------------------------------
// Tensor-bump family

/// Plateau and support radii of a one-dimensional bump in the scaled variable.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BumpProfile {
    pub inner: f64,
    pub outer: f64,
}

impl BumpProfile {
    pub fn eval(&self, z: f64) -> f64 {
        cutoff(z.abs(), self.inner, self.outer)
    }
}

/// Symbol bump: 1 on `[−1/20, 1/20]`, zero outside `[−1/10, 1/10]`.
pub const PHI: BumpProfile = BumpProfile {
    inner: 0.05,
    outer: 0.1,
};

/// Test-function bump: zero outside `[−1/100, 1/100]`.
pub const VARPHI: BumpProfile = BumpProfile {
    inner: 0.005,
    outer: 0.01,
};

/// Lattice points per unit of `N` the test-function grids must provide.
pub const MIN_PERIOD_PER_N: f64 = 400.0;

/// `E_k^N`: for `k = 0` all `j ∈ ℕ^l` with `Σ j = N`; for `k ≥ 1` the first `k`
/// entries are `N/l` and the remaining `l − k` sum to `(l − k)N/l`.
pub fn index_set(n: usize, k: usize, l: usize) -> Result<Vec<Vec<usize>>> {
    let (fixed, rest) = split_total(n, k, l)?;
    let mut out = Vec::new();
    let mut cur = vec![fixed; k];
    compositions(rest, l - k, &mut cur, &mut out);
    Ok(out)
}

/// `#E_k^N`, counted as compositions: `C(total − 1, parts − 1)`.
pub fn index_set_count(n: usize, k: usize, l: usize) -> Result<u128> {
    let (_, rest) = split_total(n, k, l)?;
    Ok(binomial(rest as u128 - 1, (l - k - 1) as u128))
}

fn split_total(n: usize, k: usize, l: usize) -> Result<(usize, usize)> {
    if l < 2 || k > l - 2 {
        return Err(param(format!("need l ≥ 2 and 0 ≤ k ≤ l − 2, got l = {l}, k = {k}")));
    }
    if n == 0 {
        return Err(param("N must be positive"));
    }
    if k == 0 {
        return Ok((0, n));
    }
    if !n.is_multiple_of(l) {
        return Err(param(format!("k ≥ 1 needs l | N, got N = {n}, l = {l}")));
    }
    Ok((n / l, (l - k) * n / l))
}

fn compositions(total: usize, parts: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if parts == 1 {
        if total >= 1 {
            cur.push(total);
            out.push(cur.clone());
            cur.pop();
        }
        return;
    }
    for first in 1..=total.saturating_sub(parts - 1) {
        cur.push(first);
        compositions(total - first, parts - 1, cur, out);
        cur.pop();
    }
}

fn binomial(n: u128, k: u128) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) / (i + 1))
}

/// The multiplier `Σ_{j∈E} ∏ φ(Nξ_i − j_i)` with test functions `f̂_i`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorBumpFamily {
    #[serde(rename = "N")]
    pub n_scale: usize,
    pub k: usize,
    pub l: usize,
    pub index_set: Vec<Vec<usize>>,
    pub phi: BumpProfile,
    pub varphi: BumpProfile,
}

/// Closed-form exponents in `N` for the tensor-bump family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorBumpPrediction {
    pub k: usize,
    pub l: usize,
    pub p_inv: Vec<f64>,
    /// Exponent of `‖T_m(f⃗)‖_p`: `1/p − k − 1`.
    pub output_exponent: f64,
    /// Exponent of `‖f_i‖_{p_i}`: `1/p_i − 1` for `i ≤ k`, else 0.
    pub testfn_exponents: Vec<f64>,
}

impl TensorBumpPrediction {
    /// Upper exponent of the symbol norm, `s − (k+1)/u`.
    pub fn symbol_exponent(&self, s: f64, u: f64) -> f64 {
        s - (self.k as f64 + 1.0) / u
    }

    /// Smallest `s` compatible with boundedness as `N → ∞`.
    pub fn threshold(&self, u: f64) -> f64 {
        let p_inv: f64 = self.p_inv.iter().sum();
        let fixed: f64 = self.p_inv[..self.k].iter().sum();
        p_inv - fixed + (self.k as f64 + 1.0) / u - 1.0
    }
}

impl TensorBumpFamily {
    pub fn new(n: usize, k: usize, l: usize) -> Result<Self> {
        let index_set = index_set(n, k, l)?;
        if index_set.is_empty() {
            return Err(param(format!("E_{k}^{n} is empty for l = {l}")));
        }
        let fam = TensorBumpFamily {
            n_scale: n,
            k,
            l,
            index_set,
            phi: PHI,
            varphi: VARPHI,
        };
        let (r_in, r_out) = fam.support_radii();
        if r_in < 0.5 || r_out > 1.3 {
            return Err(param(format!(
                "N = {n} puts the symbol support in [{r_in:.3}, {r_out:.3}], outside [0.5, 1.3]"
            )));
        }
        Ok(fam)
    }

    fn scaled(&self, j: usize) -> f64 {
        j as f64 / self.n_scale as f64
    }

    /// Annulus containing the support of the symbol.
    pub fn support_radii(&self) -> (f64, f64) {
        let rad = self.phi.outer / self.n_scale as f64;
        let mut r_in = f64::INFINITY;
        let mut r_out: f64 = 0.0;
        for j in &self.index_set {
            let near: f64 = j.iter().map(|&ji| (self.scaled(ji) - rad).max(0.0).powi(2)).sum();
            let far: f64 = j.iter().map(|&ji| (self.scaled(ji) + rad).powi(2)).sum();
            r_in = r_in.min(near.sqrt());
            r_out = r_out.max(far.sqrt());
        }
        (r_in, r_out)
    }

    pub fn support(&self) -> SupportDecl {
        let rad = self.phi.outer / self.n_scale as f64;
        let bbox = (0..self.l)
            .map(|i| {
                let lo = self.index_set.iter().map(|j| j[i]).min().unwrap_or(1);
                let hi = self.index_set.iter().map(|j| j[i]).max().unwrap_or(1);
                (self.scaled(lo) - rad, self.scaled(hi) + rad)
            })
            .collect();
        SupportDecl {
            radii: vec![self.support_radii()],
            bbox: Some(bbox),
            feature_scale: Some(rad),
        }
    }

    /// Separable symbol with one term per `j ∈ E_k^N`; factor `j − 1` is `φ(N· − j)`.
    pub fn multiplier(&self) -> Result<MultiplierRep> {
        let n = self.n_scale as f64;
        let factors = (1..=self.n_scale)
            .map(|j| {
                Bump::new(vec![j as f64 / n], self.phi.inner / n, self.phi.outer / n).map(Factor::Bump)
            })
            .collect::<Result<Vec<_>>>()?;
        let terms = self
            .index_set
            .iter()
            .map(|j| SeparableTerm {
                coeff: C64::new(1.0, 0.0),
                factors: j.iter().map(|&ji| ji - 1).collect(),
            })
            .collect();
        MultiplierRep::separable(ProductShape::new(self.l, 1, 1)?, SeparableSum { factors, terms })?
            .with_support(self.support())
    }

    /// A one-dimensional grid with period `1024·N` whose band holds every test function.
    pub fn default_grid(&self) -> Result<Grid> {
        let period = 1024.0 * self.n_scale as f64;
        let points = next_pow2((2.1 * period).ceil() as usize);
        Grid::new(1, points, period)
    }

    fn check_grid(&self, grid: &Grid) -> Result<()> {
        let n = self.n_scale as f64;
        if grid.dims() != 1 {
            return Err(structural("tensor-bump test functions live on a one-dimensional grid"));
        }
        if grid.period() < 32.0 * n {
            return Err(Error::Resolution(format!(
                "spatial spread: period {} is below 32·N = {}",
                grid.period(),
                32.0 * n
            )));
        }
        if grid.period() < MIN_PERIOD_PER_N * n {
            return Err(Error::Resolution(format!(
                "bumps of width 1/(50N): period {} is below {}·N",
                grid.period(),
                MIN_PERIOD_PER_N
            )));
        }
        if grid.nyquist() <= 1.0 + 2.0 * self.varphi.outer / n {
            return Err(Error::Resolution(format!("frequencies up to 1: nyquist {}", grid.nyquist())));
        }
        Ok(())
    }

    /// `f̂_i = Σ_{j=1}^N ϕ(Nξ − j)` for `i > k`, `ϕ(Nξ − N/l)` otherwise; returned in space.
    pub fn test_functions(&self, grid: &Grid) -> Result<Vec<GridFunction>> {
        self.check_grid(grid)?;
        let n = self.n_scale as f64;
        let centre = (self.n_scale / self.l) as f64;
        Ok((0..self.l)
            .map(|i| {
                GridFunction::from_spectral_fn(grid, |xi| {
                    let y = n * xi[0];
                    let v = if i < self.k {
                        self.varphi.eval(y - centre)
                    } else {
                        let j = y.round();
                        if j >= 1.0 && j <= n {
                            self.varphi.eval(y - j)
                        } else {
                            0.0
                        }
                    };
                    C64::new(v, 0.0)
                })
                .to_spatial()
            })
            .collect())
    }

    /// `#E·N^{−l}·ϕ∨(x/N)^l·e^{2πix}`, the exact output on the test functions.
    pub fn closed_form(&self, grid: &Grid) -> Result<GridFunction> {
        self.check_grid(grid)?;
        let n = self.n_scale as f64;
        let scale = self.index_set.len() as f64 / n.powi(self.l as i32);
        let l = self.l as i32;
        Ok(GridFunction::from_spatial_fn(grid, |x| {
            let v = inverse_transform_even(&self.varphi, x[0] / n);
            C64::from_polar(scale * v.powi(l), 2.0 * PI * x[0])
        }))
    }

    pub fn prediction(&self, p_inv: &[f64]) -> Result<TensorBumpPrediction> {
        if p_inv.len() != self.l {
            return Err(structural(format!("need {} exponents, got {}", self.l, p_inv.len())));
        }
        if p_inv.iter().any(|&q| !(q > 0.0 && q < 1.0)) {
            return Err(param("each 1/p_i must lie in (0, 1)"));
        }
        let total: f64 = p_inv.iter().sum();
        Ok(TensorBumpPrediction {
            k: self.k,
            l: self.l,
            p_inv: p_inv.to_vec(),
            output_exponent: total - self.k as f64 - 1.0,
            testfn_exponents: (0..self.l).map(|i| if i < self.k { p_inv[i] - 1.0 } else { 0.0 }).collect(),
        })
    }
}

/// `∫ b(η) e^{2πiyη} dη` for an even bump, by the trapezoid rule on `[0, outer]`.
fn inverse_transform_even(b: &BumpProfile, y: f64) -> f64 {
    const STEPS: usize = 512;
    let h = b.outer / STEPS as f64;
    let rot = C64::from_polar(1.0, 2.0 * PI * y * h);
    let mut z = C64::new(1.0, 0.0);
    let mut acc = 0.5 * b.eval(0.0);
    for i in 1..STEPS {
        z *= rot;
        acc += b.eval(i as f64 * h) * z.re;
    }
    2.0 * h * acc
}

// ---------------------------------------------------------------------------
// Quadrature helpers

/// Gauss–Legendre nodes and weights on `[−1, 1]`.
fn gauss_legendre(n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|i| {
            let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
            let mut dp = 1.0;
            for _ in 0..100 {
                let (mut p0, mut p1) = (1.0, x);
                for k in 2..=n {
                    let kf = k as f64;
                    let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                    p0 = p1;
                    p1 = p2;
                }
                dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                let dx = p1 / dp;
                x -= dx;
                if dx.abs() < 1e-15 {
                    break;
                }
            }
            (x, 2.0 / ((1.0 - x * x) * dp * dp))
        })
        .collect()
}

/// Nodes and weights of composite Gauss–Legendre on `[a, b]` with panels at most `width` wide.
fn panels(a: f64, b: f64, width: f64, rule: &[(f64, f64)]) -> Vec<(f64, f64)> {
    if b <= a {
        return Vec::new();
    }
    let count = ((b - a) / width).ceil().max(1.0) as usize;
    let h = (b - a) / count as f64;
    let mut out = Vec::with_capacity(count * rule.len());
    for p in 0..count {
        let mid = a + (p as f64 + 0.5) * h;
        for &(x, w) in rule {
            out.push((mid + 0.5 * h * x, 0.5 * h * w));
        }
    }
    out
}

/// Running `ln Σ exp(·)`.
#[derive(Clone, Copy, Debug)]
struct LogSum {
    max: f64,
    acc: f64,
}

impl LogSum {
    fn new() -> Self {
        LogSum {
            max: f64::NEG_INFINITY,
            acc: 0.0,
        }
    }

    fn add(&mut self, term: f64) {
        if term == f64::NEG_INFINITY || term.is_nan() {
            return;
        }
        if term > self.max {
            self.acc = self.acc * (self.max - term).exp() + 1.0;
            self.max = term;
        } else {
            self.acc += (term - self.max).exp();
        }
    }

    fn ln(&self) -> f64 {
        self.max + self.acc.ln()
    }
}

fn ln_sphere_area(dim: usize) -> f64 {
    let d = dim as f64;
    2f64.ln() + 0.5 * d * PI.ln() - ln_gamma(0.5 * d)
}

// ---------------------------------------------------------------------------
// Bessel kernel

/// `ℋ(r) = (1 + 4π²r²)^{−t/2} (1 + ln(1 + 4π²r²))^{−γ/2}`.
pub fn bessel_kernel(t: f64, gamma: f64, r: f64) -> f64 {
    ln_kernel(t, gamma, r.abs().ln()).exp()
}

/// `ln(1 + 4π²e^{2ℓ})` without overflow for huge `ℓ`.
fn ln_one_plus_4pi2_r2(ell: f64) -> f64 {
    let x = 2.0 * (ell + (2.0 * PI).ln());
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `ln ℋ(e^ℓ)`.
fn ln_kernel(t: f64, gamma: f64, ell: f64) -> f64 {
    let lg = ln_one_plus_4pi2_r2(ell);
    -0.5 * t * lg - 0.5 * gamma * lg.ln_1p()
}

/// `ln ∫_0^∞ λ^{a−1} e^{−λ − ρ²/(4λ)} dλ = ln(2(ρ/2)^a K_a(ρ))` for `a > −1`.
fn ln_q(a: f64, ln_rho: f64) -> f64 {
    if ln_rho < (1e-8f64).ln() {
        ln_q_small(a, ln_rho - 2f64.ln())
    } else {
        ln_q_quadrature(a, ln_rho)
    }
}

fn ln_q_quadrature(a: f64, ln_rho: f64) -> f64 {
    thread_local! {
        static RULE: Vec<(f64, f64)> = gauss_legendre(16);
    }
    let half = ln_rho - 2f64.ln();
    let lo = 2.0 * half - 8.0;
    let hi = 4.5f64.max(half + 4.0).max(a.max(1.0).ln() + 3.5);
    let c = (2.0 * half).exp();
    RULE.with(|rule| {
        let mut acc = LogSum::new();
        for (v, w) in panels(lo, hi, 1.0, rule) {
            acc.add(w.ln() + a * v - v.exp() - c * (-v).exp());
        }
        acc.ln()
    })
}

/// `(Γ(1 + a) − 1)/a`, finite through `a = 0`.
fn gamma_quotient(a: f64) -> f64 {
    if a.abs() < 1e-5 {
        -EULER_GAMMA + (0.5 * EULER_GAMMA * EULER_GAMMA + PI * PI / 12.0) * a
    } else {
        (gamma(1.0 + a) - 1.0) / a
    }
}

/// Small-argument branch, `Q = Γ(a) + z^{2a}Γ(−a)` with `z = ρ/2`, `lz = ln z`.
/// The neglected terms are relatively `O(z^{2 min(1, 1 + a)})`.
fn ln_q_small(a: f64, lz: f64) -> f64 {
    let x = 2.0 * a * lz;
    if a.abs() < 0.5 && x.abs() < 50.0 {
        // Γ(a) + e^x Γ(−a) with the poles at a = 0 cancelled analytically.
        let pole = if a == 0.0 { -2.0 * lz } else { -x.exp_m1() / a };
        return (gamma_quotient(a) + x.exp() * gamma_quotient(-a) + pole).ln();
    }
    if a >= 1.0 {
        return ln_gamma(a);
    }
    if a > 0.0 {
        return ln_gamma(a) + (x.exp() * gamma(-a) / gamma(a)).ln_1p();
    }
    x + ln_gamma(-a) + ((-x).exp() * gamma(a) / gamma(-a)).ln_1p()
}

/// `ln G_α(ρ)`, the Fourier transform of `(1 + 4π²|x|²)^{−α/2}` on `ℝ^dim`.
fn ln_bessel_potential(alpha: f64, dim: usize, ln_rho: f64) -> f64 {
    let d = dim as f64;
    -0.5 * d * (4.0 * PI).ln() - ln_gamma(0.5 * alpha) + ln_q(0.5 * (alpha - d), ln_rho)
}

/// `ln ℋ̂(ρ)` on `ℝ^dim`. The log factor is subordinated,
/// `(1 + ln A)^{−γ/2} = Γ(γ/2)^{−1} ∫ σ^{γ/2−1} e^{−σ} A^{−σ} dσ`,
/// which turns `ℋ̂` into a mixture of Bessel potentials `G_{t+2σ}`.
/// Requires `t > dim − 2`.
pub fn ln_bessel_transform(t: f64, gamma: f64, dim: usize, ln_rho: f64) -> f64 {
    thread_local! {
        static RULE: Vec<(f64, f64)> = gauss_legendre(8);
    }
    let lz = (ln_rho - 2f64.ln()).abs();
    let s_lo = (1e-6 / (2.0 * lz + 1.0)).ln();
    let g2 = 0.5 * gamma;
    let norm = ln_gamma(g2);
    let integrand = |s: f64| {
        let sigma = s.exp();
        g2 * s - sigma + ln_bessel_potential(t + 2.0 * sigma, dim, ln_rho) - norm
    };
    RULE.with(|rule| {
        let mut acc = LogSum::new();
        for (s, w) in panels(s_lo, 4.0, 1.0, rule) {
            acc.add(w.ln() + integrand(s));
        }
        // Below s_lo the integrand is e^{(γ/2)s} times a constant to relative 1e-6.
        acc.add(integrand(s_lo) - g2.ln());
        acc.ln()
    })
}

fn check_bessel(t: f64, gamma: f64) -> Result<()> {
    if !(t > 0.0 && gamma > 0.0 && t.is_finite() && gamma.is_finite()) {
        return Err(param(format!("Bessel parameters need t, γ > 0, got t = {t}, γ = {gamma}")));
    }
    Ok(())
}

/// Which `L^u` norm the dichotomy examines.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormSide {
    /// `‖ℋ‖_{L^u}`, truncated to `|x| ≤ R`.
    Kernel,
    /// `‖ℋ̂‖_{L^u}`, truncated to `|ξ| ≥ 1/R`.
    Transform,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Convergence {
    Convergent,
    Divergent,
    Inconclusive,
}

/// Truncated integrals `∫ |·|^u` and the ratio-test verdict.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DichotomyReport {
    pub side: NormSide,
    pub log10_radii: Vec<f64>,
    /// Natural logs of the truncated integrals, one per radius.
    pub ln_truncations: Vec<f64>,
    pub ratios: Vec<f64>,
    pub verdict: Convergence,
}

/// Successive truncations must grow by more than this factor to count as divergent.
pub const RATIO_THRESHOLD: f64 = 1.02;

/// `log10 R = 2^k` for `k = 1..=12`.
pub fn default_log10_radii() -> Vec<f64> {
    (1..=12).map(|k| 2f64.powi(k)).collect()
}

/// Decides whether `ℋ` (or `ℋ̂`) lies in `L^u(ℝ^dim)` from truncations at
/// radii `R = 10^{log10_radii}`. The last three ratios decide: all above the
/// threshold is divergent, all below convergent, anything else inconclusive.
pub fn bessel_norm_dichotomy(
    t: f64,
    gamma: f64,
    dim: usize,
    u: f64,
    side: NormSide,
    log10_radii: &[f64],
) -> Result<DichotomyReport> {
    check_bessel(t, gamma)?;
    if dim == 0 {
        return Err(param("dimension must be positive"));
    }
    if !(u > 1.0 && u.is_finite()) {
        return Err(param(format!("u must lie in (1, ∞), got {u}")));
    }
    if log10_radii.len() < 4
        || log10_radii[0] <= 0.0
        || log10_radii.windows(2).any(|w| w[1] <= w[0])
        || log10_radii[log10_radii.len() - 1] - log10_radii[0] < 4.0
    {
        return Err(param("need at least 4 increasing radii above 1 spanning 4 decades"));
    }
    let ln_truncations = match side {
        NormSide::Kernel => kernel_truncations(t, gamma, dim, u, log10_radii),
        NormSide::Transform => {
            if t <= dim as f64 - 2.0 {
                return Err(param(format!("transform side needs t > dim − 2, got t = {t}")));
            }
            transform_truncations(t, gamma, dim, u, log10_radii)
        }
    };
    let ratios: Vec<f64> = ln_truncations.windows(2).map(|w| (w[1] - w[0]).exp()).collect();
    let tail = &ratios[ratios.len() - 3..];
    let verdict = if tail.iter().all(|&r| r > RATIO_THRESHOLD) {
        Convergence::Divergent
    } else if tail.iter().all(|&r| r < RATIO_THRESHOLD) {
        Convergence::Convergent
    } else {
        Convergence::Inconclusive
    };
    Ok(DichotomyReport {
        side,
        log10_radii: log10_radii.to_vec(),
        ln_truncations,
        ratios,
        verdict,
    })
}

fn kernel_truncations(t: f64, gamma: f64, dim: usize, u: f64, log10_radii: &[f64]) -> Vec<f64> {
    let rule = gauss_legendre(8);
    let d = dim as f64;
    let omega = ln_sphere_area(dim);
    let ell_term = |ell: f64| d * ell + u * ln_kernel(t, gamma, ell);
    let mut acc = LogSum::new();
    for (r, w) in panels(0.0, 1.0, 0.25, &rule) {
        acc.add(w.ln() + (d - 1.0) * r.ln() + u * ln_kernel(t, gamma, r.ln()));
    }
    let ells: Vec<f64> = log10_radii.iter().map(|x| x * LN_10).collect();
    for (ell, w) in panels(0.0, ells[0], 1.0, &rule) {
        acc.add(w.ln() + ell_term(ell));
    }
    let mut out = vec![acc.ln() + omega];
    for pair in ells.windows(2) {
        // ℓ = e^w keeps panels short on a doubly logarithmic scale.
        for (w, wt) in panels(pair[0].ln(), pair[1].ln(), 0.25, &rule) {
            let ell = w.exp();
            acc.add(wt.ln() + w + ell_term(ell));
        }
        out.push(acc.ln() + omega);
    }
    out
}

fn transform_truncations(t: f64, gamma: f64, dim: usize, u: f64, log10_radii: &[f64]) -> Vec<f64> {
    // ℋ̂ decays like e^{−ρ}; beyond ρ = 40 the integrand is below e^{−40u}.
    const RHO_MAX: f64 = 40.0;
    let rule = gauss_legendre(8);
    let d = dim as f64;
    let omega = ln_sphere_area(dim);
    let log_term = |ln_rho: f64| d * ln_rho + u * ln_bessel_transform(t, gamma, dim, ln_rho);
    let ells: Vec<f64> = log10_radii.iter().map(|x| x * LN_10).collect();
    let mut acc = LogSum::new();
    for (ln_rho, w) in panels(-ells[0], RHO_MAX.ln(), 1.0, &rule) {
        acc.add(w.ln() + log_term(ln_rho));
    }
    let mut out = vec![acc.ln() + omega];
    for pair in ells.windows(2) {
        for (w, wt) in panels(pair[0].ln(), pair[1].ln(), 0.25, &rule) {
            let ell = w.exp();
            acc.add(wt.ln() + w + log_term(-ell));
        }
        out.push(acc.ln() + omega);
    }
    out
}

// ---------------------------------------------------------------------------
// Bessel symbols

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BesselMode {
    Shifted,
    Rotated,
    Multiparam,
}

/// Parameters of a Bessel-kernel symbol family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BesselFamily {
    pub t: f64,
    pub gamma: f64,
    /// Dimension of the kernel: `l·n` when shifted, `n` when rotated.
    pub dim: usize,
    pub l: usize,
    pub n: usize,
    /// Scale `M` of the window `Γ̂(·/M)` applied to the kernel.
    pub truncation: Option<f64>,
    pub mode: BesselMode,
    /// Linear part of the change of variables of the rotated mode, row-major `l × l`.
    pub rotation: Option<Vec<Vec<f64>>>,
}

impl BesselFamily {
    pub fn new(t: f64, gamma: f64, l: usize, n: usize, truncation: Option<f64>, mode: BesselMode) -> Result<Self> {
        check_bessel(t, gamma)?;
        if l < 2 || n == 0 {
            return Err(param("need l ≥ 2 and n ≥ 1"));
        }
        if let Some(m) = truncation {
            if !(m > 0.0 && m.is_finite()) {
                return Err(param(format!("truncation must be positive, got {m}")));
            }
        }
        if mode != BesselMode::Rotated && truncation.is_none() {
            return Err(param("shifted symbols need a finite truncation M"));
        }
        let (dim, rotation) = match mode {
            BesselMode::Rotated => (n, Some(rotation_matrix(l))),
            _ => (l * n, None),
        };
        Ok(BesselFamily {
            t,
            gamma,
            dim,
            l,
            n,
            truncation,
            mode,
            rotation,
        })
    }

    /// `ν = (l^{−1/2}, 0, …, 0) ∈ ℝ^n`.
    pub fn nu(&self) -> Vec<f64> {
        let mut v = vec![0.0; self.n];
        v[0] = (self.l as f64).powf(-0.5);
        v
    }

    /// `ℛ(ξ⃗) = (mean − ν, mean − ξ_2, …, mean − ξ_l)` with `mean = Σξ_i / l`.
    pub fn rotate(&self, xi: &[f64]) -> Vec<f64> {
        let (l, n) = (self.l, self.n);
        let nu = self.nu();
        let mut out = vec![0.0; l * n];
        for a in 0..n {
            let mean = (0..l).map(|i| xi[i * n + a]).sum::<f64>() / l as f64;
            out[a] = mean - nu[a];
            for i in 1..l {
                out[i * n + a] = mean - xi[i * n + a];
            }
        }
        out
    }
}

fn rotation_matrix(l: usize) -> Vec<Vec<f64>> {
    let c = 1.0 / l as f64;
    (0..l)
        .map(|r| (0..l).map(|j| if r > 0 && j == r { c - 1.0 } else { c }).collect())
        .collect()
}

/// Radial samples `ρ_i = i·step` with Catmull–Rom interpolation, even in `ρ`.
#[derive(Clone, Debug)]
struct RadialTable {
    step: f64,
    values: Vec<f64>,
}

impl RadialTable {
    fn eval(&self, rho: f64) -> f64 {
        let x = rho.abs() / self.step;
        let i = x.floor() as usize;
        if i + 2 >= self.values.len() {
            return 0.0;
        }
        let f = x - i as f64;
        let at = |k: isize| self.values[k.unsigned_abs()];
        let (p0, p1, p2, p3) = (at(i as isize - 1), at(i as isize), at(i as isize + 1), at(i as isize + 2));
        p1 + 0.5 * f * (p2 - p0 + f * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3 + f * (3.0 * (p1 - p2) + p3 - p0)))
    }
}

/// Tabulates the Fourier transform of the radial `ℋ(r)·Γ̂(r/M)` on `ℝ^dim` for
/// `ρ ≤ rho_max`. The projection-slice identity reduces it to a cosine
/// transform of the projection onto one axis.
fn truncated_transform_table(t: f64, gamma: f64, dim: usize, m: f64, rho_max: f64) -> RadialTable {
    const RHO_POINTS: usize = 512;
    let h = |r: f64| bessel_kernel(t, gamma, r) * phi0(r / m);
    let reach = 2.0 * m;
    let nx = (reach / 0.02).ceil() as usize;
    let dx = reach / nx as f64;
    let omega = if dim >= 2 { ln_sphere_area(dim - 1).exp() } else { 1.0 };
    let projection: Vec<f64> = (0..=nx)
        .map(|j| {
            let x = j as f64 * dx;
            if dim == 1 {
                return h(x);
            }
            let smax = (reach * reach - x * x).max(0.0).sqrt();
            let ns = (smax / dx).ceil() as usize;
            let mut acc = 0.0;
            for k in 0..=ns {
                let s = k as f64 * dx;
                let w = if k == 0 { 0.5 } else { 1.0 };
                acc += w * h((x * x + s * s).sqrt()) * s.powi(dim as i32 - 2);
            }
            omega * acc * dx
        })
        .collect();
    let step = rho_max / (RHO_POINTS - 3) as f64;
    let values = (0..RHO_POINTS)
        .map(|i| {
            let rho = i as f64 * step;
            let rot = C64::from_polar(1.0, 2.0 * PI * rho * dx);
            let mut z = C64::new(1.0, 0.0);
            let mut acc = 0.5 * projection[0];
            for &p in &projection[1..] {
                z *= rot;
                acc += p * z.re;
            }
            2.0 * acc * dx
        })
        .collect();
    RadialTable { step, values }
}

/// `ℋ̂` without truncation, tabulated on a logarithmic grid in `ρ`.
#[derive(Clone, Debug)]
struct LogRadialTable {
    t: f64,
    gamma: f64,
    dim: usize,
    ln_lo: f64,
    step: f64,
    ln_values: Vec<f64>,
}

impl LogRadialTable {
    fn new(t: f64, gamma: f64, dim: usize, rho_max: f64) -> Self {
        const POINTS: usize = 256;
        let ln_lo = rho_max.ln() - 14.0;
        let step = 14.0 / (POINTS - 1) as f64;
        let ln_values = (0..POINTS)
            .map(|i| ln_bessel_transform(t, gamma, dim, ln_lo + i as f64 * step))
            .collect();
        LogRadialTable {
            t,
            gamma,
            dim,
            ln_lo,
            step,
            ln_values,
        }
    }

    fn eval(&self, rho: f64) -> f64 {
        let rho = rho.max(1e-300);
        let x = (rho.ln() - self.ln_lo) / self.step;
        if x < 0.0 || x >= (self.ln_values.len() - 1) as f64 {
            return ln_bessel_transform(self.t, self.gamma, self.dim, rho.ln()).exp();
        }
        let i = x.floor() as usize;
        let f = x - i as f64;
        ((1.0 - f) * self.ln_values[i] + f * self.ln_values[i + 1]).exp()
    }
}

fn window_radii(l: usize) -> (f64, f64) {
    let l = l as f64;
    (1.0 / (100.0 * l), 1.0 / (10.0 * l))
}

fn small_window_radii(l: usize) -> (f64, f64) {
    let l = l as f64;
    (1.0 / (400.0 * l), 1.0 / (200.0 * l))
}

fn euclid(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn ball_distance(xi: &[f64], centre: &[f64]) -> f64 {
    xi.iter().zip(centre).map(|(a, c)| (a - c) * (a - c)).sum::<f64>().sqrt()
}

/// `∏_i θ̃̂(ξ_i − ν)` as a one-parameter symbol.
fn window_symbol(fam: &BesselFamily) -> Result<MultiplierRep> {
    let (l, n) = (fam.l, fam.n);
    let nu = fam.nu();
    let (inner, outer) = window_radii(l);
    let support = shifted_support(fam, f64::INFINITY);
    MultiplierRep::rule(ProductShape::new(l, 1, n)?, move |xi| {
        let mut v = 1.0;
        for i in 0..l {
            v *= cutoff(ball_distance(&xi[i * n..(i + 1) * n], &nu), inner, outer);
            if v == 0.0 {
                return ZERO;
            }
        }
        C64::new(v, 0.0)
    })
    .with_support(support)
}

fn shifted_support(fam: &BesselFamily, m: f64) -> SupportDecl {
    let (inner, outer) = window_radii(fam.l);
    let nu = fam.nu();
    let bbox = (0..fam.l)
        .flat_map(|_| nu.iter().map(|&c| (c - outer, c + outer)))
        .collect();
    SupportDecl {
        radii: vec![(0.8, 1.2)],
        bbox: Some(bbox),
        feature_scale: Some((0.25 / m).min((outer - inner) / 4.0)),
    }
}

fn check_symbol_grid(grid: &Grid, n: usize, transition: f64) -> Result<()> {
    if grid.dims() != n {
        return Err(structural(format!("argument grid must have {n} dims")));
    }
    if grid.freq_spacing() > transition / 4.0 {
        return Err(Error::Resolution(format!(
            "windows with transition {transition:.3e}: lattice spacing {:.3e}",
            grid.freq_spacing()
        )));
    }
    if grid.nyquist() < 1.2 {
        return Err(Error::Resolution(format!("support near |ξ| = 1: nyquist {}", grid.nyquist())));
    }
    Ok(())
}

/// The shifted symbol `ℋ̂^{(ln,M)}(ξ⃗ − ν⃗)·∏θ̃̂(ξ_i − ν)` or the rotated
/// `ℋ̂^{(n)}(η_1)θ̂(η_1)∏_{i≥2}θ̂(η_i)` with `η = ℛ(ξ⃗)`. Multi-parameter
/// families return their first-parameter factor, which is the shifted symbol.
/// With a grid the symbol is sampled densely on its product lattice.
pub fn bessel_multiplier(fam: &BesselFamily, grid: Option<&Grid>) -> Result<MultiplierRep> {
    let (l, n) = (fam.l, fam.n);
    let shape = ProductShape::new(l, 1, n)?;
    let nu = fam.nu();
    let rep = match fam.mode {
        BesselMode::Shifted | BesselMode::Multiparam => {
            let m = fam.truncation.ok_or_else(|| param("shifted symbols need a finite truncation M"))?;
            let (inner, outer) = window_radii(l);
            if let Some(g) = grid {
                check_symbol_grid(g, n, outer - inner)?;
            }
            let reach = 1.5 * outer * (l as f64).sqrt();
            let table = Arc::new(truncated_transform_table(fam.t, fam.gamma, fam.dim, m, reach));
            let support = shifted_support(fam, m);
            MultiplierRep::rule(shape, move |xi| {
                let mut window = 1.0;
                let mut r2 = 0.0;
                for i in 0..l {
                    let d = ball_distance(&xi[i * n..(i + 1) * n], &nu);
                    window *= cutoff(d, inner, outer);
                    if window == 0.0 {
                        return ZERO;
                    }
                    r2 += d * d;
                }
                C64::new(window * table.eval(r2.sqrt()), 0.0)
            })
            .with_support(support)?
        }
        BesselMode::Rotated => {
            let (inner, outer) = small_window_radii(l);
            if let Some(g) = grid {
                check_symbol_grid(g, n, outer - inner)?;
            }
            let profile: Arc<dyn Fn(f64) -> f64 + Send + Sync> = match fam.truncation {
                Some(m) => {
                    let table = truncated_transform_table(fam.t, fam.gamma, fam.dim, m, 1.5 * outer);
                    Arc::new(move |r| table.eval(r))
                }
                None => {
                    let table = LogRadialTable::new(fam.t, fam.gamma, fam.dim, 1.5 * outer);
                    Arc::new(move |r| table.eval(r))
                }
            };
            let fam2 = fam.clone();
            let spread = 1.0 / 200.0;
            let bbox = (0..l).flat_map(|_| nu.iter().map(|&c| (c - spread, c + spread))).collect();
            let feature = match fam.truncation {
                Some(m) => (0.25 / m).min((outer - inner) / 4.0),
                None => (outer - inner) / 4.0,
            };
            MultiplierRep::rule(shape, move |xi| {
                let eta = fam2.rotate(xi);
                let mut v = 1.0;
                for i in 0..l {
                    v *= cutoff(euclid(&eta[i * n..(i + 1) * n]), inner, outer);
                    if v == 0.0 {
                        return ZERO;
                    }
                }
                let r1 = euclid(&eta[..n]);
                C64::new(v * profile(r1), 0.0)
            })
            .with_support(SupportDecl {
                radii: vec![(0.8, 1.2)],
                bbox: Some(bbox),
                feature_scale: Some(feature),
            })?
        }
    };
    match grid {
        Some(g) => rep.to_dense(g),
        None => Ok(rep),
    }
}

/// `∏_k m_k(ξ_{1k}, …, ξ_{lk})` from one-parameter symbols of equal arity.
pub fn multiparam_tensorize(factors: Vec<MultiplierRep>) -> Result<MultiplierRep> {
    let first = factors.first().ok_or_else(|| param("need at least one factor"))?.shape();
    if let Some(bad) = factors.iter().find(|f| f.shape().arity != first.arity) {
        return Err(structural(format!(
            "arity mismatch: {} against {}",
            bad.shape().arity,
            first.arity
        )));
    }
    MultiplierRep::tensor(factors)
}

/// The `d`-parameter family: the shifted symbol in the first parameter and
/// `∏_i θ̃̂(ξ_{ik} − ν)` in the others.
pub fn multiparam_bessel_symbol(fam: &BesselFamily, d: usize) -> Result<MultiplierRep> {
    if fam.mode != BesselMode::Multiparam {
        return Err(param("family mode must be multiparam"));
    }
    if d == 0 {
        return Err(param("need at least one parameter"));
    }
    let mut factors = vec![bessel_multiplier(fam, None)?];
    for _ in 1..d {
        factors.push(window_symbol(fam)?);
    }
    multiparam_tensorize(factors)
}

/// `‖ℋ·Γ̂(·/M)‖_{L^1(ℝ^dim)}`.
pub fn bessel_l1_mass(t: f64, gamma: f64, dim: usize, m: f64) -> Result<f64> {
    check_bessel(t, gamma)?;
    let rule = gauss_legendre(16);
    let d = dim as f64;
    let mass: f64 = panels(0.0, 2.0 * m, 0.25, &rule)
        .into_iter()
        .map(|(r, w)| w * bessel_kernel(t, gamma, r) * phi0(r / m) * r.powf(d - 1.0))
        .sum();
    Ok(ln_sphere_area(dim).exp() * mass)
}

/// Lower bound for the shifted operator from the modulated test functions
/// `ε^{1/p_i}θ(εy)e^{2πiνy}`:
/// `(∫ |∫ ℋ^{(2,M)}(y) θ(x − εy_1) θ(x − εy_2) dy|^p dx)^{1/p}`, with
/// `θ = |b∨|²/|b∨(0)|²` so that `θ ≥ 0` and `θ̂` is supported in `|ξ| ≤ 1/(200l)`.
/// Only `l = 2`, `n = 1`.
pub fn shifted_lower_bound(fam: &BesselFamily, p: f64, eps: f64) -> Result<f64> {
    if fam.mode == BesselMode::Rotated || fam.l != 2 || fam.n != 1 {
        return Err(param("lower bound implemented for the shifted family with l = 2, n = 1"));
    }
    if !(p > 0.0 && eps > 0.0) {
        return Err(param("need p > 0 and ε > 0"));
    }
    let m = fam.truncation.ok_or_else(|| param("shifted symbols need a finite truncation M"))?;
    let l = fam.l as f64;
    let b = BumpProfile {
        inner: 1.0 / (800.0 * l),
        outer: 1.0 / (400.0 * l),
    };
    let b0 = inverse_transform_even(&b, 0.0);
    let reach = 40.0 / b.outer;
    let dtab = 0.02 / b.outer;
    let theta: Vec<f64> = (0..=(reach / dtab) as usize + 1)
        .map(|i| (inverse_transform_even(&b, i as f64 * dtab) / b0).powi(2))
        .collect();
    let theta_at = |x: f64| {
        let y = x.abs() / dtab;
        let i = y.floor() as usize;
        if i + 1 >= theta.len() {
            return 0.0;
        }
        let f = y - i as f64;
        (1.0 - f) * theta[i] + f * theta[i + 1]
    };
    // Radial shells of ℋ^{(2,M)} lumped at their midpoints.
    let rule = gauss_legendre(16);
    let shell = 0.25;
    let shells: Vec<(f64, f64)> = (0..(2.0 * m / shell).ceil() as usize)
        .map(|c| {
            let (a, bnd) = (c as f64 * shell, (c as f64 + 1.0) * shell);
            let w: f64 = panels(a, bnd, shell, &rule)
                .into_iter()
                .map(|(r, w)| w * r * bessel_kernel(fam.t, fam.gamma, r) * phi0(r / m))
                .sum();
            (0.5 * (a + bnd), w)
        })
        .collect();
    const ANGLES: usize = 64;
    let angles: Vec<(f64, f64)> = (0..ANGLES)
        .map(|a| (2.0 * PI * a as f64 / ANGLES as f64).sin_cos())
        .collect();
    let dx = 0.1 / b.outer;
    let nx = (reach / dx) as i64;
    let mut acc = 0.0;
    for ix in -nx..=nx {
        let x = ix as f64 * dx;
        let mut inner = 0.0;
        for &(rc, w) in &shells {
            let mut ring = 0.0;
            for &(s, c) in &angles {
                ring += theta_at(x - eps * rc * c) * theta_at(x - eps * rc * s);
            }
            inner += w * ring;
        }
        inner *= 2.0 * PI / ANGLES as f64;
        acc += inner.abs().powf(p);
    }
    Ok((acc * dx).powf(1.0 / p))
}
