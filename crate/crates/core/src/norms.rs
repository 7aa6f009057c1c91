// SPDX-License-Identifier: Apache-2.0
//! Product-type Sobolev norms, the dilation-sup symbol norm and empirical lower bounds
//! for multilinear operator norms.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{param, structural, Error, Result};
use crate::filters::{RadialWindow, WindowKind};
use crate::grid::{
    fft_nd, lp_norm, lp_norm_of, next_pow2, Direction, Domain, Grid, GridFunction, NormSpec, C64,
};
use crate::multiplier::{apply_multilinear, Factor, MultiplierRep, ProductShape, SupportDecl, SymbolForm};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SobolevSpec {
    pub s: Vec<f64>,
    pub u: f64,
}

impl SobolevSpec {
    pub fn new(s: Vec<f64>, u: f64) -> Result<Self> {
        if !(u > 1.0 && u.is_finite()) {
            return Err(param(format!("u must lie in (1, ∞), got {u}")));
        }
        if s.is_empty() || s.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(param(format!("smoothness must be nonnegative, got {s:?}")));
        }
        Ok(SobolevSpec { s, u })
    }

    pub fn conjugate(&self) -> f64 {
        self.u / (self.u - 1.0)
    }
}

/// Spatial function whose samples are the spectral samples of `f`, on the dual grid.
/// Lets a sampled symbol be treated as a function of its frequency variables.
pub fn as_function_of_frequency(f: &GridFunction) -> Result<GridFunction> {
    if f.domain() != Domain::Spectral {
        return Err(structural("expected spectral samples"));
    }
    GridFunction::new(f.grid().dual(), f.samples().to_vec(), Domain::Spatial)
}

/// `‖∏_g (I - Δ_g)^{s_g/2} F‖_{L^u}`, where `Δ_g` acts on the axes of parameter group `g`.
pub fn product_sobolev_norm(f: &GridFunction, shape: ProductShape, spec: &SobolevSpec) -> Result<f64> {
    Ok(product_sobolev_norms(f, shape, std::slice::from_ref(spec))?[0])
}

/// Several specs at once; the forward transform is shared and one inverse is
/// computed per distinct smoothness vector.
pub fn product_sobolev_norms(f: &GridFunction, shape: ProductShape, specs: &[SobolevSpec]) -> Result<Vec<f64>> {
    let grid = f.grid();
    if f.domain() != Domain::Spatial {
        return Err(structural("Sobolev norms take spatial samples"));
    }
    if grid.dims() != shape.total_dims() {
        return Err(structural(format!(
            "function has {} dims, shape groups need {}",
            grid.dims(),
            shape.total_dims()
        )));
    }
    for s in specs {
        if s.s.len() != shape.params {
            return Err(structural("one smoothness index per parameter group"));
        }
    }
    let mut data = f.samples().to_vec();
    fft_nd(&mut data, grid.points_per_axis(), grid.dims(), Direction::Forward);
    sobolev_from_spectrum(&data, grid, shape, specs)
}

/// Norms from the unnormalized forward DFT `spectrum` of samples on `grid`.
fn sobolev_from_spectrum(
    spectrum: &[C64],
    grid: &Grid,
    shape: ProductShape,
    specs: &[SobolevSpec],
) -> Result<Vec<f64>> {
    let n = grid.points_per_axis();
    let dims = grid.dims();
    let groups: Vec<Vec<usize>> = (0..shape.params).map(|g| shape.group_axes(g)).collect();
    let mut group_of = vec![0usize; dims];
    for (g, axes) in groups.iter().enumerate() {
        for &a in axes {
            group_of[a] = g;
        }
    }
    // 4π²x² along one axis, per storage index
    let axis_sq: Vec<f64> = (0..n).map(|i| 4.0 * PI * PI * grid.freq(i).powi(2)).collect();
    let mut out = vec![0.0; specs.len()];
    let mut by_s: BTreeMap<Vec<u64>, Vec<usize>> = BTreeMap::new();
    for (i, s) in specs.iter().enumerate() {
        by_s.entry(s.s.iter().map(|v| v.to_bits()).collect()).or_default().push(i);
    }
    let inv_scale = 1.0 / grid.len() as f64;
    let mut work = vec![C64::new(0.0, 0.0); spectrum.len()];
    let mut idx = vec![0usize; dims];
    let mut sums = vec![0.0; shape.params];
    for members in by_s.values() {
        let s = &specs[members[0]].s;
        if s.iter().all(|&v| v == 0.0) {
            work.copy_from_slice(spectrum);
        } else {
            for (flat, (w, &z)) in work.iter_mut().zip(spectrum).enumerate() {
                grid.unflatten(flat, &mut idx);
                sums.iter_mut().for_each(|v| *v = 1.0);
                for (a, &i) in idx.iter().enumerate() {
                    sums[group_of[a]] += axis_sq[i];
                }
                let weight: f64 = sums.iter().zip(s).map(|(b, &sg)| b.powf(sg / 2.0)).product();
                *w = z * weight;
            }
        }
        fft_nd(&mut work, n, dims, Direction::Inverse);
        for &i in members {
            let spec = NormSpec::lebesgue(specs[i].u);
            out[i] = lp_norm_of(work.iter().map(|z| z.norm() * inv_scale), grid.cell_volume(), spec);
        }
    }
    Ok(out)
}

/// Dilation range scanned by the symbol norm.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KRange {
    /// Every dilation for which the declared support meets the window annulus.
    Auto,
    /// Inclusive interval per parameter.
    Explicit(Vec<(i32, i32)>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ANormOptions {
    /// Grid points per smallest feature of the dilated symbol.
    pub samples_per_feature: f64,
    /// Period of the sampling grid over the width of the sampled box.
    pub pad_factor: f64,
    pub max_points: usize,
    pub window: RadialWindow,
}

impl Default for ANormOptions {
    fn default() -> Self {
        ANormOptions {
            samples_per_feature: 1.0,
            pad_factor: 2.0,
            max_points: 1 << 24,
            window: RadialWindow::of_kind(WindowKind::Annulus),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DilationScan {
    pub k: Vec<i32>,
    /// One value per requested spec; exact zeros when the supports miss the window.
    pub values: Vec<f64>,
    /// Points per axis of the sampling grid, 0 when nothing was sampled.
    pub points_per_axis: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ANormReport {
    pub values: Vec<f64>,
    pub argmax: Vec<Vec<i32>>,
    pub scans: Vec<DilationScan>,
}

pub fn a_norm(m: &MultiplierRep, spec: &SobolevSpec, k_range: &KRange) -> Result<f64> {
    Ok(a_norm_report(m, std::slice::from_ref(spec), k_range, &ANormOptions::default())?.values[0])
}

/// `sup_k ‖m(2^{k_1}·, …, 2^{k_d}·) ∏_g Θ(ξ^g)‖_{L^u_{s⃗}}` over the scanned range.
pub fn a_norm_report(
    m: &MultiplierRep,
    specs: &[SobolevSpec],
    k_range: &KRange,
    opts: &ANormOptions,
) -> Result<ANormReport> {
    let shape = m.shape();
    if specs.is_empty() {
        return Err(param("need at least one spec"));
    }
    for s in specs {
        if s.s.len() != shape.params {
            return Err(structural("one smoothness index per parameter"));
        }
    }
    if let SymbolForm::Tensor(parts) = m.form() {
        return tensor_report(parts, specs, k_range, opts);
    }
    let support = effective_support(m);
    let ranges = match k_range {
        KRange::Explicit(r) if r.len() == shape.params => r.clone(),
        KRange::Explicit(_) => return Err(structural("one k interval per parameter")),
        KRange::Auto => {
            let decl = support.as_ref().ok_or(Error::SupportDeclaration)?;
            decl.radii
                .iter()
                .map(|&(r_in, r_out)| auto_range(r_in, r_out, &opts.window))
                .collect::<Result<_>>()?
        }
    };
    let mut scans = Vec::new();
    let mut k = ranges.iter().map(|r| r.0).collect::<Vec<_>>();
    if ranges.iter().any(|r| r.0 > r.1) {
        return Err(param("empty k interval"));
    }
    loop {
        scans.push(scan_dilation(m, support.as_ref(), &k, specs, opts)?);
        let mut g = shape.params;
        loop {
            if g == 0 {
                return Ok(summarize(scans, specs.len()));
            }
            g -= 1;
            k[g] += 1;
            if k[g] <= ranges[g].1 {
                break;
            }
            k[g] = ranges[g].0;
        }
    }
}

fn summarize(scans: Vec<DilationScan>, nspecs: usize) -> ANormReport {
    let mut values = vec![0.0; nspecs];
    let mut argmax = vec![scans[0].k.clone(); nspecs];
    for s in &scans {
        for i in 0..nspecs {
            if s.values[i] > values[i] {
                values[i] = s.values[i];
                argmax[i] = s.k.clone();
            }
        }
    }
    ANormReport { values, argmax, scans }
}

fn tensor_report(
    parts: &[MultiplierRep],
    specs: &[SobolevSpec],
    k_range: &KRange,
    opts: &ANormOptions,
) -> Result<ANormReport> {
    let mut values = vec![1.0; specs.len()];
    let mut argmax = vec![Vec::new(); specs.len()];
    let mut scans = Vec::new();
    for (g, part) in parts.iter().enumerate() {
        let sub: Vec<SobolevSpec> = specs
            .iter()
            .map(|s| SobolevSpec { s: vec![s.s[g]], u: s.u })
            .collect();
        let range = match k_range {
            KRange::Auto => KRange::Auto,
            KRange::Explicit(r) => KRange::Explicit(vec![*r.get(g).ok_or_else(|| structural("one k interval per parameter"))?]),
        };
        let rep = a_norm_report(part, &sub, &range, opts)?;
        for i in 0..specs.len() {
            values[i] *= rep.values[i];
            argmax[i].extend(rep.argmax[i].iter().copied());
        }
        for mut s in rep.scans {
            // Record factor scans with the other parameters left at 0.
            let mut k = vec![0; parts.len()];
            k[g] = s.k[0];
            s.k = k;
            scans.push(s);
        }
    }
    Ok(ANormReport { values, argmax, scans })
}

/// Dilations `k` with `m(2^k ·)` meeting the window: `2^{-k} r_out > lo`, `2^{-k} r_in < hi`.
fn auto_range(r_in: f64, r_out: f64, window: &RadialWindow) -> Result<(i32, i32)> {
    if !(r_in > 0.0 && r_out > r_in) {
        return Err(param("auto range needs a support annulus away from the origin"));
    }
    let hi = (r_out / window.lo).log2().ceil() as i32 - 1;
    let lo = (r_in / window.hi).log2().floor() as i32 + 1;
    Ok((lo, hi))
}

/// Declared support, or one derived from bump factors or dense nonzeros.
pub fn effective_support(m: &MultiplierRep) -> Option<SupportDecl> {
    if let Some(d) = m.support() {
        return Some(d.clone());
    }
    let shape = m.shape();
    let nd = shape.arg_dims();
    let bbox: Vec<(f64, f64)> = match m.form() {
        SymbolForm::Separable(s) => {
            let mut bbox = vec![(f64::INFINITY, f64::NEG_INFINITY); shape.total_dims()];
            for t in &s.terms {
                for (i, &fi) in t.factors.iter().enumerate() {
                    let b = s.factors[fi].support_box()?;
                    for (a, &(lo, hi)) in b.iter().enumerate() {
                        let slot = &mut bbox[i * nd + a];
                        slot.0 = slot.0.min(lo);
                        slot.1 = slot.1.max(hi);
                    }
                }
            }
            bbox
        }
        SymbolForm::Dense(d) => {
            let prod = d.arg_grid.with_dims(shape.total_dims()).ok()?;
            let mut bbox = vec![(f64::INFINITY, f64::NEG_INFINITY); shape.total_dims()];
            for (i, z) in d.values.iter().enumerate() {
                if z.norm() == 0.0 {
                    continue;
                }
                for (slot, x) in bbox.iter_mut().zip(prod.frequency(i)) {
                    slot.0 = slot.0.min(x);
                    slot.1 = slot.1.max(x);
                }
            }
            let h = d.arg_grid.freq_spacing();
            bbox.iter().map(|&(a, b)| (a - h, b + h)).collect()
        }
        _ => return None,
    };
    if bbox.iter().any(|(a, b)| a > b) {
        return None;
    }
    let radii = (0..shape.params)
        .map(|g| box_radii(&shape.group_axes(g).iter().map(|&a| bbox[a]).collect::<Vec<_>>()))
        .collect();
    let feature_scale = match m.form() {
        SymbolForm::Separable(s) => s
            .factors
            .iter()
            .filter_map(|f| match f {
                Factor::Bump(b) => Some(b.outer_radius),
                _ => None,
            })
            .reduce(f64::min),
        SymbolForm::Dense(d) => Some(d.arg_grid.freq_spacing()),
        _ => None,
    };
    Some(SupportDecl {
        radii,
        bbox: Some(bbox),
        feature_scale,
    })
}

/// Smallest and largest distance from the origin over a box.
pub fn box_radii(b: &[(f64, f64)]) -> (f64, f64) {
    let near: f64 = b
        .iter()
        .map(|&(lo, hi)| if lo <= 0.0 && hi >= 0.0 { 0.0 } else { lo.abs().min(hi.abs()) })
        .map(|v| v * v)
        .sum();
    let far: f64 = b.iter().map(|&(lo, hi)| lo.abs().max(hi.abs()).powi(2)).sum();
    (near.sqrt(), far.sqrt())
}

/// Plans a grid around the windowed dilated symbol, samples it and measures it.
fn scan_dilation(
    m: &MultiplierRep,
    support: Option<&SupportDecl>,
    k: &[i32],
    specs: &[SobolevSpec],
    opts: &ANormOptions,
) -> Result<DilationScan> {
    let shape = m.shape();
    let dims = shape.total_dims();
    let zero = || DilationScan {
        k: k.to_vec(),
        values: vec![0.0; specs.len()],
        points_per_axis: 0,
    };
    let w = &opts.window;
    let scales: Vec<f64> = k.iter().map(|&kg| 2f64.powi(kg)).collect();
    let mut group_of = vec![0usize; dims];
    for g in 0..shape.params {
        for a in shape.group_axes(g) {
            group_of[a] = g;
        }
    }
    if let Some(decl) = support {
        for (g, &(r_in, r_out)) in decl.radii.iter().enumerate() {
            if r_out / scales[g] <= w.lo || r_in / scales[g] >= w.hi {
                return Ok(zero());
            }
        }
    }
    // Box of the sampled region per axis.
    let mut bbox: Vec<(f64, f64)> = vec![(-w.hi, w.hi); dims];
    if let Some(b) = support.and_then(|d| d.bbox.as_ref()) {
        for (a, slot) in bbox.iter_mut().enumerate() {
            let s = scales[group_of[a]];
            slot.0 = slot.0.max(b[a].0 / s);
            slot.1 = slot.1.min(b[a].1 / s);
            if slot.0 >= slot.1 {
                return Ok(zero());
            }
        }
    }
    let width = bbox.iter().map(|(a, b)| b - a).fold(0.0, f64::max);
    let period = opts.pad_factor * width;
    let window_step = (w.plateau_lo - w.lo).min(w.hi - w.plateau_hi) / 4.0;
    let feature = support.and_then(|d| d.feature_scale).unwrap_or(width / 64.0);
    let step = scales
        .iter()
        .map(|s| feature / s / opts.samples_per_feature)
        .fold(window_step, f64::min);
    let n = next_pow2((period / step).ceil() as usize).max(2);
    let total = (n as u128).pow(dims as u32);
    if total > opts.max_points as u128 {
        return Err(Error::Budget {
            what: format!("symbol sampling grid at k = {k:?}"),
            needed: total,
            limit: opts.max_points as u128,
        });
    }
    let grid = Grid::new(dims, n, period)?;
    let center: Vec<f64> = bbox.iter().map(|(a, b)| 0.5 * (a + b)).collect();
    let h = grid.spacing();
    let coord = |a: usize, i: usize| center[a] + grid.signed_index(i) as f64 * h;
    let mut samples = sample_dilated(m, &grid, &center, &scales, &group_of)?;
    // window per group
    let mut idx = vec![0usize; dims];
    let mut rsq = vec![0.0; shape.params];
    for (flat, z) in samples.iter_mut().enumerate() {
        if *z == C64::new(0.0, 0.0) {
            continue;
        }
        grid.unflatten(flat, &mut idx);
        rsq.iter_mut().for_each(|v| *v = 0.0);
        for (a, &i) in idx.iter().enumerate() {
            rsq[group_of[a]] += coord(a, i).powi(2);
        }
        let wv: f64 = rsq.iter().map(|r| w.eval(r.sqrt())).product();
        *z *= wv;
    }
    if samples.iter().all(|z| z.norm() == 0.0) {
        return Ok(DilationScan {
            points_per_axis: n,
            ..zero()
        });
    }
    fft_nd(&mut samples, n, dims, Direction::Forward);
    let values = sobolev_from_spectrum(&samples, &grid, shape, specs)?;
    Ok(DilationScan {
        k: k.to_vec(),
        values,
        points_per_axis: n,
    })
}

/// Samples `m(2^{k_g} ξ^g)` at `center + lattice` on `grid`.
fn sample_dilated(
    m: &MultiplierRep,
    grid: &Grid,
    center: &[f64],
    scales: &[f64],
    group_of: &[usize],
) -> Result<Vec<C64>> {
    let shape = m.shape();
    let dims = grid.dims();
    let h = grid.spacing();
    let n = grid.points_per_axis();
    let zero = C64::new(0.0, 0.0);
    if let (SymbolForm::Separable(sum), 1) = (m.form(), shape.arg_dims()) {
        // One variable per argument: accumulate outer products over trimmed ranges.
        let s = scales[0];
        let half = (n / 2) as i64;
        let mut cache: BTreeMap<(usize, usize), (i64, Vec<C64>)> = BTreeMap::new();
        let mut out = vec![zero; grid.len()];
        for t in &sum.terms {
            let mut axes: Vec<(i64, Vec<C64>)> = Vec::with_capacity(dims);
            for (i, &fi) in t.factors.iter().enumerate() {
                let entry = match cache.get(&(fi, i)) {
                    Some(e) => e.clone(),
                    None => {
                        let f = &sum.factors[fi];
                        let (lo, hi) = match f.support_box() {
                            Some(b) => (
                                (((b[0].0 / s - center[i]) / h).floor() as i64).max(-half),
                                (((b[0].1 / s - center[i]) / h).ceil() as i64).min(half - 1),
                            ),
                            None => (-half, half - 1),
                        };
                        let vals = (lo..=hi)
                            .map(|j| f.eval(&[(center[i] + j as f64 * h) * s]))
                            .collect::<Result<Vec<_>>>()?;
                        cache.insert((fi, i), (lo, vals.clone()));
                        (lo, vals)
                    }
                };
                axes.push(entry);
            }
            if axes.iter().any(|(_, v)| v.is_empty()) {
                continue;
            }
            let mut counter = vec![0usize; dims];
            let mut flat_idx = vec![0usize; dims];
            'outer: loop {
                let mut v = t.coeff;
                for a in 0..dims {
                    v *= axes[a].1[counter[a]];
                    flat_idx[a] = grid.wrap_index(axes[a].0 + counter[a] as i64);
                }
                if v != zero {
                    out[grid.flatten(&flat_idx)] += v;
                }
                let mut a = dims;
                loop {
                    if a == 0 {
                        break 'outer;
                    }
                    a -= 1;
                    counter[a] += 1;
                    if counter[a] < axes[a].1.len() {
                        break;
                    }
                    counter[a] = 0;
                }
            }
        }
        return Ok(out);
    }
    let mut idx = vec![0usize; dims];
    let mut xi = vec![0.0; dims];
    (0..grid.len())
        .map(|flat| {
            grid.unflatten(flat, &mut idx);
            for a in 0..dims {
                xi[a] = (center[a] + grid.signed_index(idx[a]) as f64 * h) * scales[group_of[a]];
            }
            m.eval(&xi)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Witness {
    /// Index into the supplied families.
    Family(usize),
    /// Random trial number.
    Random(usize),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OperatorNormEstimate {
    pub value: f64,
    pub witness: Option<Witness>,
    pub trials: usize,
    pub seed: u64,
    /// Tuples skipped because an argument had zero norm.
    pub skipped: usize,
}

/// Random band-limited Gaussian inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomTrials {
    pub grid: Grid,
    pub trials: usize,
    pub seed: u64,
    /// Largest frequency magnitude per axis.
    pub band: f64,
}

/// Gaussian field with independent complex normal spectrum on `|ξ_a| ≤ band`.
/// Trial `t` draws from stream `t` of the seeded generator.
pub fn gaussian_field(grid: &Grid, band: f64, seed: u64, stream: u64) -> GridFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    GridFunction::from_spectral_fn(grid, |xi| {
        let re: f64 = StandardNormal.sample(&mut rng);
        let im: f64 = StandardNormal.sample(&mut rng);
        if xi.iter().all(|x| x.abs() <= band) {
            C64::new(re, im)
        } else {
            C64::new(0.0, 0.0)
        }
    })
    .to_spatial()
}

/// `max ‖T_m(f⃗)‖_p / ∏‖f_i‖_{p_i}` over the given families and random trials,
/// with `1/p = Σ 1/p_i`.
pub fn operator_norm_lower_bound(
    m: &MultiplierRep,
    p: &[f64],
    families: &[Vec<GridFunction>],
    random: Option<&RandomTrials>,
    dealias: bool,
) -> Result<OperatorNormEstimate> {
    let l = m.shape().arity;
    if p.len() != l || p.iter().any(|&v| !(v > 0.0)) {
        return Err(param("need one positive exponent per argument"));
    }
    let p_out = 1.0 / p.iter().map(|v| 1.0 / v).sum::<f64>();
    let mut best = 0.0;
    let mut witness = None;
    let mut skipped = 0;
    let mut ratio = |fs: &[GridFunction]| -> Result<Option<f64>> {
        let mut denom = 1.0;
        for (f, &pi) in fs.iter().zip(p) {
            denom *= lp_norm(&f.to_spatial(), NormSpec::lebesgue(pi))?;
        }
        if denom == 0.0 {
            skipped += 1;
            return Ok(None);
        }
        let out = apply_multilinear(m, fs, dealias)?;
        Ok(Some(lp_norm(&out, NormSpec::lebesgue(p_out))? / denom))
    };
    for (i, fam) in families.iter().enumerate() {
        if fam.len() != l {
            return Err(structural("each family tuple needs l functions"));
        }
        if let Some(r) = ratio(fam)? {
            if r > best || witness.is_none() {
                best = r;
                witness = Some(Witness::Family(i));
            }
        }
    }
    let (trials, seed) = random.map_or((0, 0), |r| (r.trials, r.seed));
    if let Some(r) = random {
        for t in 0..r.trials {
            let fs: Vec<GridFunction> = (0..l)
                .map(|i| gaussian_field(&r.grid, r.band, r.seed, (t * l + i) as u64))
                .collect();
            if let Some(v) = ratio(&fs)? {
                if v > best || witness.is_none() {
                    best = v;
                    witness = Some(Witness::Random(t));
                }
            }
        }
    }
    Ok(OperatorNormEstimate {
        value: best,
        witness,
        trials,
        seed,
        skipped,
    })
}
