// SPDX-License-Identifier: Apache-2.0
//! The core invariant suite behind `selftest`. Every check compares the library
//! against a direct computation on a small grid.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::experiment::Check;
use crate::filters::{Bump, FilterBank};
use crate::grid::{lp_norm, next_pow2, pointwise_product, spectral_l2_norm, Grid, GridFunction, NormSpec, C64};
use crate::maximal::{maximal, RectangleFamily};
use crate::multiplier::{apply_multilinear, Factor, MultiplierRep, ProductShape, SeparableSum, SeparableTerm};

pub const PARSEVAL_TOL: f64 = 1e-10;
pub const ROUND_TRIP_TOL: f64 = 1e-12;
pub const PARTITION_TOL: f64 = 1e-12;
pub const DENSE_SEPARABLE_TOL: f64 = 1e-9;
pub const PRODUCT_TOL: f64 = 1e-10;
pub const MAXIMAL_TOL: f64 = 1e-12;

fn random_field(grid: &Grid, seed: u64) -> GridFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GridFunction::from_spatial_fn(grid, |_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
}

fn rel_l2(a: &GridFunction, b: &GridFunction) -> Result<f64> {
    Ok(lp_norm(&a.sub(b)?, NormSpec::lebesgue(2.0))? / lp_norm(b, NormSpec::lebesgue(2.0))?)
}

/// Spatial and spectral L² norms agree.
pub fn parseval() -> Result<Check> {
    let g = Grid::new(2, 32, 8.0)?;
    let mut worst: f64 = 0.0;
    for seed in 0..5 {
        let f = random_field(&g, seed);
        let a = lp_norm(&f, NormSpec::lebesgue(2.0))?;
        let b = spectral_l2_norm(&f.to_spectral())?;
        worst = worst.max((a - b).abs() / a);
    }
    Ok(Check::at_most("parseval", worst, PARSEVAL_TOL, "relative gap of the two L2 norms"))
}

pub fn round_trip() -> Result<Check> {
    let mut worst: f64 = 0.0;
    for (dims, n) in [(1, 256), (2, 32), (3, 8)] {
        let g = Grid::new(dims, n, 4.0)?;
        let f = random_field(&g, dims as u64);
        let back = f.to_spectral().to_spatial();
        worst = worst.max(back.sub(&f)?.max_abs() / f.max_abs());
    }
    Ok(Check::at_most("transform_round_trip", worst, ROUND_TRIP_TOL, "max error relative to max |f|"))
}

/// The band filters sum to one inside the covered band.
pub fn partition_of_unity() -> Result<Check> {
    let g = Grid::new(1, 128, 8.0)?;
    let bank = FilterBank::new(&g, -2, 3, 2)?;
    let (lo, hi) = (2f64.powi(bank.j_min()), 2f64.powi(bank.j_max() - 1));
    let mut worst: f64 = 0.0;
    for i in 0..g.len() {
        let r = g.freq(i).abs();
        if r >= lo && r <= hi {
            let s: f64 = bank.scales().map(|j| bank.psi_hat(j).expect("scale in bank").samples()[i].re).sum();
            worst = worst.max((s - 1.0).abs());
        }
    }
    Ok(Check::at_most("partition_of_unity", worst, PARTITION_TOL, "max |sum psi - 1| on the band"))
}

/// A separable bump sum applied directly and after expansion to dense values.
pub fn dense_vs_separable() -> Result<Check> {
    let g = Grid::new(1, 64, 16.0)?;
    let factors = [(0.25, 0.2), (-0.5, 0.3), (1.0, 0.5)]
        .iter()
        .map(|&(c, r)| Bump::new(vec![c], r / 2.0, r).map(Factor::Bump))
        .collect::<Result<Vec<_>>>()?;
    let terms = vec![
        SeparableTerm { coeff: C64::new(1.0, 0.0), factors: vec![0, 1] },
        SeparableTerm { coeff: C64::new(-0.5, 2.0), factors: vec![2, 0] },
        SeparableTerm { coeff: C64::new(0.0, 1.0), factors: vec![1, 2] },
    ];
    let sep = MultiplierRep::separable(ProductShape::new(2, 1, 1)?, SeparableSum { factors, terms })?;
    let dense = sep.to_dense(&g)?;
    let mut worst: f64 = 0.0;
    for seed in 0..3 {
        let fs = [random_field(&g, 10 + seed), random_field(&g, 20 + seed)];
        for dealias in [false, true] {
            let a = apply_multilinear(&sep, &fs, dealias)?;
            let b = apply_multilinear(&dense, &fs, dealias)?;
            worst = worst.max(rel_l2(&a, &b)?);
        }
    }
    Ok(Check::at_most("dense_vs_separable", worst, DENSE_SEPARABLE_TOL, "relative L2 gap of the outputs"))
}

/// `m ≡ 1` gives the pointwise product of the inputs on the refined grid.
pub fn product_identity() -> Result<Check> {
    let g = Grid::new(1, 32, 8.0)?;
    let mut worst: f64 = 0.0;
    for l in [2usize, 3] {
        let fs: Vec<GridFunction> = (0..l as u64).map(|i| random_field(&g, 40 + i)).collect();
        let one = MultiplierRep::constant(ProductShape::new(l, 1, 1)?, C64::new(1.0, 0.0));
        let out = apply_multilinear(&one, &fs, true)?;
        let fine = g.refined(next_pow2(l))?;
        let mut want = fs[0].spectral_pad(&fine)?.to_spatial();
        for f in &fs[1..] {
            want = pointwise_product(&want, &f.spectral_pad(&fine)?.to_spatial())?;
        }
        worst = worst.max(rel_l2(&out, &want)?);
    }
    Ok(Check::at_most("constant_symbol_product", worst, PRODUCT_TOL, "relative L2 gap to f*g"))
}

/// The cube maximal function against every periodic cube, enumerated directly.
pub fn maximal_brute_force() -> Result<Check> {
    let n = 32usize;
    let g = Grid::new(2, n, 32.0)?;
    let f = random_field(&g, 7);
    let r = 1.5;
    let vals: Vec<f64> = f.samples().iter().map(|z| z.norm().powf(r)).collect();
    let mut best = vec![0.0f64; n * n];
    for w in 1..=n {
        for a in 0..n {
            for b in 0..n {
                let mut sum = 0.0;
                for i in 0..w {
                    for j in 0..w {
                        sum += vals[((a + i) % n) * n + (b + j) % n];
                    }
                }
                let mean = sum / (w * w) as f64;
                for i in 0..w {
                    for j in 0..w {
                        let slot = &mut best[((a + i) % n) * n + (b + j) % n];
                        *slot = slot.max(mean);
                    }
                }
            }
        }
    }
    let fast = maximal(&f, &RectangleFamily::cubes(&g), r)?;
    let worst = fast
        .samples()
        .iter()
        .zip(&best)
        .map(|(z, &b)| (z.re - b.powf(1.0 / r)).abs() / b.powf(1.0 / r))
        .fold(0.0, f64::max);
    Ok(Check::at_most("maximal_brute_force", worst, MAXIMAL_TOL, "relative gap on a 32x32 grid"))
}

pub fn run_all() -> Result<Vec<Check>> {
    Ok(vec![
        parseval()?,
        round_trip()?,
        partition_of_unity()?,
        dense_vs_separable()?,
        product_identity()?,
        maximal_brute_force()?,
    ])
}
