// SPDX-License-Identifier: Apache-2.0
//! Symbol representations and the linear / multilinear multiplier operators, with the
//! low/high frequency decomposition of bilinear bi-parameter operators, dyadic
//! localization of symbols and the spatial shell split of localized kernels.
//!
//! Symbol variables are laid out argument-major: argument `i` owns components
//! `i·nd .. (i+1)·nd`, and inside an argument parameter `g` owns `g·n .. (g+1)·n`.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{param, structural, Error, Result};
use crate::filters::{norm, phi0, Bump, FilterBank, RadialWindow, WindowKind};
use crate::grid::{next_pow2, Direction, Domain, Grid, GridFunction, C64};

/// Largest dense symbol, in entries.
pub const DENSE_BUDGET: usize = 1 << 24;
/// Largest number of nonzero input tuples a direct lattice sum may visit.
pub const LATTICE_SUM_BUDGET: u128 = 1 << 28;
/// Direct-convolution work above which the separable path switches to FFTs.
const SPARSE_WORK_LIMIT: u128 = 1 << 31;

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProductShape {
    pub arity: usize,
    pub params: usize,
    pub base_dim: usize,
}

impl ProductShape {
    pub fn new(arity: usize, params: usize, base_dim: usize) -> Result<Self> {
        if arity == 0 || params == 0 || base_dim == 0 {
            return Err(param("arity, params and base_dim must be positive"));
        }
        Ok(ProductShape {
            arity,
            params,
            base_dim,
        })
    }

    /// Spatial dimension of one input function, `n·d`.
    pub fn arg_dims(&self) -> usize {
        self.params * self.base_dim
    }

    pub fn total_dims(&self) -> usize {
        self.arity * self.arg_dims()
    }

    pub fn axis(&self, arg: usize, group: usize, comp: usize) -> usize {
        arg * self.arg_dims() + group * self.base_dim + comp
    }

    /// Symbol components belonging to parameter `group`, ordered by argument.
    pub fn group_axes(&self, group: usize) -> Vec<usize> {
        (0..self.arity)
            .flat_map(|i| (0..self.base_dim).map(move |a| (i, a)))
            .map(|(i, a)| self.axis(i, group, a))
            .collect()
    }
}

/// One spectral factor of a separable term, living on a single argument's variables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Factor {
    /// Values on a frequency lattice; evaluation elsewhere is an error.
    Sampled(GridFunction),
    Bump(Bump),
    Const(C64),
}

impl Factor {
    pub fn eval(&self, xi: &[f64]) -> Result<C64> {
        match self {
            Factor::Const(c) => Ok(*c),
            Factor::Bump(b) => Ok(C64::new(b.eval(xi), 0.0)),
            Factor::Sampled(f) => lattice_lookup(f.grid(), f.samples(), xi),
        }
    }

    pub fn support_box(&self) -> Option<Vec<(f64, f64)>> {
        match self {
            Factor::Bump(b) => Some(b.support_box()),
            _ => None,
        }
    }

    /// Spectral samples on `grid`; a sampled factor is zero-extended off its lattice.
    pub fn sample_on(&self, grid: &Grid) -> Result<GridFunction> {
        match self {
            Factor::Sampled(f) if f.grid() == grid => Ok(f.clone()),
            Factor::Sampled(f) => f.spectral_pad(grid),
            _ => {
                let mut err = None;
                let out = GridFunction::from_spectral_fn(grid, |xi| {
                    self.eval(xi).unwrap_or_else(|e| {
                        err = Some(e);
                        ZERO
                    })
                });
                err.map_or(Ok(out), Err)
            }
        }
    }
}

fn lattice_lookup(grid: &Grid, samples: &[C64], xi: &[f64]) -> Result<C64> {
    let n = grid.points_per_axis() as i64;
    let mut flat = 0usize;
    let mut outside = false;
    for &x in xi {
        let k = x * grid.period();
        let kr = k.round();
        if (k - kr).abs() > 1e-9 * kr.abs().max(1.0) {
            return Err(structural(format!(
                "frequency {x} is not on the lattice of spacing {}",
                grid.freq_spacing()
            )));
        }
        let k = kr as i64;
        if k < -n / 2 || k >= n / 2 {
            outside = true;
        }
        flat = flat * grid.points_per_axis() + grid.wrap_index(k);
    }
    Ok(if outside { ZERO } else { samples[flat] })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparableTerm {
    pub coeff: C64,
    /// Index into the factor table, one per argument.
    pub factors: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparableSum {
    pub factors: Vec<Factor>,
    pub terms: Vec<SeparableTerm>,
}

/// Symbol values on the product lattice of an argument grid.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseSymbol {
    /// Grid of one argument (`n·d` dims); the symbol lives on its `l`-fold product.
    pub arg_grid: Grid,
    pub values: Vec<C64>,
}

pub type SymbolFn = Arc<dyn Fn(&[f64]) -> C64 + Send + Sync>;

#[derive(Clone)]
pub enum SymbolForm {
    Dense(DenseSymbol),
    Separable(SeparableSum),
    Rule(SymbolFn),
    /// Product of one-parameter symbols, factor `g` acting on parameter group `g`.
    Tensor(Vec<MultiplierRep>),
}

impl fmt::Debug for SymbolForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SymbolForm::Dense(d) => write!(f, "Dense({:?}, {} values)", d.arg_grid, d.values.len()),
            SymbolForm::Separable(s) => {
                write!(f, "Separable({} factors, {} terms)", s.factors.len(), s.terms.len())
            }
            SymbolForm::Rule(_) => write!(f, "Rule"),
            SymbolForm::Tensor(t) => f.debug_list().entries(t).finish(),
        }
    }
}

/// Where a symbol may be nonzero, used to bound dilation scans and sampling grids.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportDecl {
    /// Per parameter group, radii `(r_in, r_out)` of an annulus containing the support.
    pub radii: Vec<(f64, f64)>,
    /// Optional bounding box per symbol component.
    #[serde(default)]
    pub bbox: Option<Vec<(f64, f64)>>,
    /// Smallest length scale of the symbol's features, if known.
    #[serde(default)]
    pub feature_scale: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct MultiplierRep {
    shape: ProductShape,
    form: SymbolForm,
    support: Option<SupportDecl>,
}

impl MultiplierRep {
    pub fn dense(shape: ProductShape, arg_grid: Grid, values: Vec<C64>) -> Result<Self> {
        if arg_grid.dims() != shape.arg_dims() {
            return Err(structural("argument grid dims must equal n·d"));
        }
        let want = arg_grid
            .len()
            .checked_pow(shape.arity as u32)
            .filter(|&v| v <= DENSE_BUDGET)
            .ok_or_else(|| Error::Budget {
                what: "dense symbol".into(),
                needed: (arg_grid.len() as u128).saturating_pow(shape.arity as u32),
                limit: DENSE_BUDGET as u128,
            })?;
        if values.len() != want {
            return Err(structural(format!("dense symbol needs {want} values, got {}", values.len())));
        }
        Ok(MultiplierRep {
            shape,
            form: SymbolForm::Dense(DenseSymbol { arg_grid, values }),
            support: None,
        })
    }

    pub fn separable(shape: ProductShape, sum: SeparableSum) -> Result<Self> {
        for t in &sum.terms {
            if t.factors.len() != shape.arity {
                return Err(structural("each term needs one factor per argument"));
            }
            if let Some(&bad) = t.factors.iter().find(|&&i| i >= sum.factors.len()) {
                return Err(structural(format!("factor index {bad} out of range")));
            }
        }
        for f in &sum.factors {
            let dims = match f {
                Factor::Sampled(g) => Some(g.grid().dims()),
                Factor::Bump(b) => Some(b.dims()),
                Factor::Const(_) => None,
            };
            if dims.is_some_and(|d| d != shape.arg_dims()) {
                return Err(structural("factor dimension must equal n·d"));
            }
        }
        Ok(MultiplierRep {
            shape,
            form: SymbolForm::Separable(sum),
            support: None,
        })
    }

    pub fn rule(shape: ProductShape, f: impl Fn(&[f64]) -> C64 + Send + Sync + 'static) -> Self {
        MultiplierRep {
            shape,
            form: SymbolForm::Rule(Arc::new(f)),
            support: None,
        }
    }

    pub fn constant(shape: ProductShape, c: C64) -> Self {
        MultiplierRep {
            shape,
            form: SymbolForm::Separable(SeparableSum {
                factors: vec![Factor::Const(c)],
                terms: vec![SeparableTerm {
                    coeff: C64::new(1.0, 0.0),
                    factors: vec![0; shape.arity],
                }],
            }),
            support: None,
        }
    }

    /// Product symbol `∏_g m_g(ξ^g)`; each factor is one-parameter with equal arity and base dim.
    pub fn tensor(factors: Vec<MultiplierRep>) -> Result<Self> {
        let first = factors.first().ok_or_else(|| param("need at least one factor"))?.shape;
        if factors
            .iter()
            .any(|f| f.shape.params != 1 || f.shape.arity != first.arity || f.shape.base_dim != first.base_dim)
        {
            return Err(structural("tensor factors need params = 1 and matching arity and base_dim"));
        }
        let shape = ProductShape::new(first.arity, factors.len(), first.base_dim)?;
        let support = factors
            .iter()
            .map(|f| f.support.clone())
            .collect::<Option<Vec<_>>>()
            .map(|decls| SupportDecl {
                radii: decls.iter().map(|d| d.radii[0]).collect(),
                bbox: decls
                    .iter()
                    .map(|d| d.bbox.clone())
                    .collect::<Option<Vec<_>>>()
                    .map(|boxes| {
                        let mut out = vec![(0.0, 0.0); shape.total_dims()];
                        for (g, b) in boxes.iter().enumerate() {
                            for i in 0..shape.arity {
                                for a in 0..shape.base_dim {
                                    out[shape.axis(i, g, a)] = b[i * shape.base_dim + a];
                                }
                            }
                        }
                        out
                    }),
                feature_scale: decls
                    .iter()
                    .filter_map(|d| d.feature_scale)
                    .reduce(f64::min),
            });
        Ok(MultiplierRep {
            shape,
            form: SymbolForm::Tensor(factors),
            support,
        })
    }

    pub fn with_support(mut self, decl: SupportDecl) -> Result<Self> {
        if decl.radii.len() != self.shape.params {
            return Err(structural("support radii needed for every parameter group"));
        }
        if decl.bbox.as_ref().is_some_and(|b| b.len() != self.shape.total_dims()) {
            return Err(structural("bounding box needs one interval per symbol component"));
        }
        self.support = Some(decl);
        Ok(self)
    }

    pub fn shape(&self) -> ProductShape {
        self.shape
    }

    pub fn form(&self) -> &SymbolForm {
        &self.form
    }

    pub fn support(&self) -> Option<&SupportDecl> {
        self.support.as_ref()
    }

    pub fn eval(&self, xi: &[f64]) -> Result<C64> {
        if xi.len() != self.shape.total_dims() {
            return Err(structural(format!(
                "symbol takes {} components, got {}",
                self.shape.total_dims(),
                xi.len()
            )));
        }
        match &self.form {
            SymbolForm::Rule(f) => Ok(f(xi)),
            SymbolForm::Dense(d) => {
                let prod = d.arg_grid.with_dims(self.shape.total_dims())?;
                lattice_lookup(&prod, &d.values, xi)
            }
            SymbolForm::Separable(s) => {
                let nd = self.shape.arg_dims();
                let mut cache: Vec<Option<C64>> = vec![None; s.factors.len() * self.shape.arity];
                let mut total = ZERO;
                for t in &s.terms {
                    let mut v = t.coeff;
                    for (i, &fi) in t.factors.iter().enumerate() {
                        let slot = &mut cache[fi * self.shape.arity + i];
                        let fv = match slot {
                            Some(z) => *z,
                            None => *slot.insert(s.factors[fi].eval(&xi[i * nd..(i + 1) * nd])?),
                        };
                        v *= fv;
                        if v == ZERO {
                            break;
                        }
                    }
                    total += v;
                }
                Ok(total)
            }
            SymbolForm::Tensor(parts) => {
                let mut v = C64::new(1.0, 0.0);
                for (g, part) in parts.iter().enumerate() {
                    let sub: Vec<f64> = self.shape.group_axes(g).iter().map(|&a| xi[a]).collect();
                    v *= part.eval(&sub)?;
                    if v == ZERO {
                        break;
                    }
                }
                Ok(v)
            }
        }
    }

    /// Samples the symbol on the product lattice of `arg_grid`.
    pub fn to_dense(&self, arg_grid: &Grid) -> Result<MultiplierRep> {
        let prod = arg_grid.with_dims(self.shape.total_dims())?;
        if prod.len() > DENSE_BUDGET {
            return Err(Error::Budget {
                what: "dense symbol".into(),
                needed: prod.len() as u128,
                limit: DENSE_BUDGET as u128,
            });
        }
        let values = (0..prod.len())
            .map(|i| self.eval(&prod.frequency(i)))
            .collect::<Result<Vec<_>>>()?;
        let mut out = MultiplierRep::dense(self.shape, arg_grid.clone(), values)?;
        out.support = self.support.clone();
        Ok(out)
    }
}

/// `inverse(symbol · f̂)`, on the grid shared by both.
pub fn apply_linear(symbol: &GridFunction, f: &GridFunction) -> Result<GridFunction> {
    symbol.grid().ensure_same(f.grid())?;
    if symbol.domain() != Domain::Spectral {
        return Err(structural("symbol must be given by spectral samples"));
    }
    let spec = f.to_spectral();
    let prod: Vec<C64> = spec
        .samples()
        .iter()
        .zip(symbol.samples())
        .map(|(a, b)| a * b)
        .collect();
    Ok(GridFunction::new(f.grid().clone(), prod, Domain::Spectral)?.to_spatial())
}

/// Applies `T_m` to `fs`. With `dealias` the output lives on a grid refined by
/// `next_pow2(l)` (same period) so that no output frequency wraps; otherwise output
/// frequencies are reduced modulo the input lattice. Grid-point values of the exact
/// operator on trigonometric-polynomial inputs are reproduced in both cases as long as
/// nothing wraps.
pub fn apply_multilinear(m: &MultiplierRep, fs: &[GridFunction], dealias: bool) -> Result<GridFunction> {
    let shape = m.shape;
    if fs.len() != shape.arity {
        return Err(structural(format!("symbol has arity {}, got {} inputs", shape.arity, fs.len())));
    }
    let base = fs[0].grid().clone();
    for f in fs {
        base.ensure_same(f.grid())?;
    }
    if base.dims() != shape.arg_dims() {
        return Err(structural(format!(
            "inputs have {} dims, symbol expects n·d = {}",
            base.dims(),
            shape.arg_dims()
        )));
    }
    let out_grid = if dealias {
        base.refined(next_pow2(shape.arity))?
    } else {
        base.clone()
    };
    match &m.form {
        SymbolForm::Separable(s) => apply_separable(shape, s, fs, &out_grid),
        SymbolForm::Dense(d) => {
            if d.arg_grid != base {
                return Err(structural("dense symbol lattice differs from the input grid"));
            }
            lattice_sum(shape, fs, &out_grid, |flat, _| d.values[flat])
        }
        _ => {
            let mut err = None;
            let out = lattice_sum(shape, fs, &out_grid, |_, xi| {
                m.eval(xi).unwrap_or_else(|e| {
                    err.get_or_insert(e);
                    ZERO
                })
            })?;
            err.map_or(Ok(out), Err)
        }
    }
}

/// Direct sum over all tuples of nonzero input modes. `symbol` receives the flat
/// index of the tuple on the product lattice and the stacked frequencies.
fn lattice_sum(
    shape: ProductShape,
    fs: &[GridFunction],
    out_grid: &Grid,
    mut symbol: impl FnMut(usize, &[f64]) -> C64,
) -> Result<GridFunction> {
    let base = fs[0].grid();
    let nd = shape.arg_dims();
    let l = shape.arity;
    let spectra: Vec<GridFunction> = fs.iter().map(|f| f.to_spectral()).collect();
    let nonzero: Vec<Vec<usize>> = spectra
        .iter()
        .map(|s| (0..base.len()).filter(|&k| s.samples()[k] != ZERO).collect())
        .collect();
    let work = nonzero.iter().map(|v| v.len() as u128).product::<u128>();
    if work > LATTICE_SUM_BUDGET {
        return Err(Error::Budget {
            what: "direct lattice sum".into(),
            needed: work,
            limit: LATTICE_SUM_BUDGET,
        });
    }
    let mut out = vec![ZERO; out_grid.len()];
    if nonzero.iter().any(|v| v.is_empty()) {
        return Ok(GridFunction::zeros(out_grid, Domain::Spatial));
    }
    // Per mode: frequencies and signed indices along every axis.
    let mut idx = vec![0usize; nd];
    let info: Vec<Vec<(Vec<f64>, Vec<i64>)>> = nonzero
        .iter()
        .map(|list| {
            list.iter()
                .map(|&k| {
                    base.unflatten(k, &mut idx);
                    (
                        idx.iter().map(|&i| base.freq(i)).collect(),
                        idx.iter().map(|&i| base.signed_index(i)).collect(),
                    )
                })
                .collect()
        })
        .collect();
    let weight = base.freq_cell_volume().powi(l as i32 - 1);
    let mut counter = vec![0usize; l];
    let mut xi = vec![0.0; shape.total_dims()];
    let mut out_idx = vec![0usize; nd];
    let glen = base.len();
    loop {
        let mut flat = 0usize;
        let mut prod = C64::new(weight, 0.0);
        for i in 0..l {
            let k = nonzero[i][counter[i]];
            flat = flat * glen + k;
            prod *= spectra[i].samples()[k];
            xi[i * nd..(i + 1) * nd].copy_from_slice(&info[i][counter[i]].0);
        }
        let mval = symbol(flat, &xi);
        if mval != ZERO {
            for (a, slot) in out_idx.iter_mut().enumerate() {
                let s: i64 = (0..l).map(|i| info[i][counter[i]].1[a]).sum();
                *slot = out_grid.wrap_index(s);
            }
            out[out_grid.flatten(&out_idx)] += mval * prod;
        }
        // odometer, last argument fastest
        let mut i = l;
        loop {
            if i == 0 {
                return Ok(GridFunction::new(out_grid.clone(), out, Domain::Spectral)?.to_spatial());
            }
            i -= 1;
            counter[i] += 1;
            if counter[i] < nonzero[i].len() {
                break;
            }
            counter[i] = 0;
        }
    }
}

fn apply_separable(
    shape: ProductShape,
    sum: &SeparableSum,
    fs: &[GridFunction],
    out_grid: &Grid,
) -> Result<GridFunction> {
    if shape.arg_dims() == 1 {
        if let Some(out) = separable_sparse(shape, sum, fs, out_grid)? {
            return Ok(out);
        }
    }
    separable_fft(sum, fs, out_grid)
}

/// Σ_terms coeff · ∏_i apply_linear(factor_i, f_i) on the output grid.
fn separable_fft(
    sum: &SeparableSum,
    fs: &[GridFunction],
    out_grid: &Grid,
) -> Result<GridFunction> {
    let padded: Vec<GridFunction> = fs
        .iter()
        .map(|f| f.spectral_pad(out_grid))
        .collect::<Result<_>>()?;
    let mut cache: BTreeMap<(usize, usize), GridFunction> = BTreeMap::new();
    let mut out = GridFunction::zeros(out_grid, Domain::Spatial);
    for t in &sum.terms {
        let mut prod = GridFunction::constant(out_grid, t.coeff);
        for (i, &fi) in t.factors.iter().enumerate() {
            let part = match cache.get(&(fi, i)) {
                Some(p) => p.clone(),
                None => {
                    let symbol = sum.factors[fi].sample_on(out_grid)?;
                    let p = apply_linear(&symbol, &padded[i])?;
                    cache.insert((fi, i), p.clone());
                    p
                }
            };
            prod = crate::grid::pointwise_product(&prod, &part)?;
        }
        out = out.add_scaled(&prod, C64::new(1.0, 0.0))?;
    }
    Ok(out)
}

/// One-dimensional arguments: convolve the trimmed spectra of each term directly and
/// transform once. Returns `None` when the direct work would exceed the FFT route.
fn separable_sparse(
    shape: ProductShape,
    sum: &SeparableSum,
    fs: &[GridFunction],
    out_grid: &Grid,
) -> Result<Option<GridFunction>> {
    let base = fs[0].grid();
    let n = base.points_per_axis() as i64;
    let period = base.period();
    let spectra: Vec<GridFunction> = fs.iter().map(|f| f.to_spectral()).collect();
    let at = |s: &GridFunction, k: i64| s.samples()[base.wrap_index(k)];
    // Nonzero extent of every input spectrum in signed indices.
    let extent: Vec<Option<(i64, i64)>> = spectra
        .iter()
        .map(|s| {
            let ks: Vec<i64> = (-n / 2..n / 2).filter(|&k| at(s, k) != ZERO).collect();
            ks.first().map(|&a| (a, *ks.last().unwrap()))
        })
        .collect();
    if extent.iter().any(|e| e.is_none()) {
        return Ok(Some(GridFunction::zeros(out_grid, Domain::Spatial)));
    }
    let range = |fi: usize, i: usize| -> (i64, i64) {
        let (lo, hi) = extent[i].unwrap();
        match sum.factors[fi].support_box() {
            Some(b) => (lo.max((b[0].0 * period).ceil() as i64), hi.min((b[0].1 * period).floor() as i64)),
            None => (lo, hi),
        }
    };
    let mut work: u128 = 0;
    for t in &sum.terms {
        let mut acc: u128 = 1;
        for (i, &fi) in t.factors.iter().enumerate() {
            let (lo, hi) = range(fi, i);
            let len = (hi - lo + 1).max(0) as u128;
            work += acc * len;
            acc += len;
        }
    }
    if work > SPARSE_WORK_LIMIT {
        return Ok(None);
    }
    let mut cache: BTreeMap<(usize, usize), (i64, Vec<C64>)> = BTreeMap::new();
    let mut out = vec![ZERO; out_grid.len()];
    let mut scratch = Vec::new();
    for t in &sum.terms {
        let mut acc_off = 0i64;
        let mut acc = vec![t.coeff];
        for (i, &fi) in t.factors.iter().enumerate() {
            if !cache.contains_key(&(fi, i)) {
                let (lo, hi) = range(fi, i);
                let mut vals: Vec<C64> = Vec::new();
                let mut first = None;
                for k in lo..=hi {
                    let v = at(&spectra[i], k);
                    let z = if v == ZERO {
                        ZERO
                    } else {
                        v * sum.factors[fi].eval(&[k as f64 / period])?
                    };
                    if first.is_none() && z == ZERO {
                        continue;
                    }
                    first.get_or_insert(k);
                    vals.push(z);
                }
                while vals.last() == Some(&ZERO) {
                    vals.pop();
                }
                cache.insert((fi, i), (first.unwrap_or(0), vals));
            }
            let (off, vals) = &cache[&(fi, i)];
            if vals.is_empty() {
                acc.clear();
                break;
            }
            scratch.clear();
            scratch.resize(acc.len() + vals.len() - 1, ZERO);
            for (a, &x) in acc.iter().enumerate() {
                if x == ZERO {
                    continue;
                }
                for (b, &y) in vals.iter().enumerate() {
                    scratch[a + b] += x * y;
                }
            }
            std::mem::swap(&mut acc, &mut scratch);
            acc_off += off;
        }
        for (a, &z) in acc.iter().enumerate() {
            out[out_grid.wrap_index(acc_off + a as i64)] += z;
        }
    }
    let weight = base.freq_cell_volume().powi(shape.arity as i32 - 1);
    for z in &mut out {
        *z *= weight;
    }
    Ok(Some(
        GridFunction::new(out_grid.clone(), out, Domain::Spectral)?.to_spatial(),
    ))
}

/// Subsamples spatial data on a refined grid back to a coarser grid of the same period.
pub fn restrict_to(f: &GridFunction, coarse: &Grid) -> Result<GridFunction> {
    let fine = f.grid();
    let f = f.to_spatial();
    if fine.dims() != coarse.dims()
        || fine.period() != coarse.period()
        || !fine.points_per_axis().is_multiple_of(coarse.points_per_axis())
    {
        return Err(structural("restriction needs a coarser grid of the same period"));
    }
    let ratio = fine.points_per_axis() / coarse.points_per_axis();
    let mut idx = vec![0usize; coarse.dims()];
    let samples = (0..coarse.len())
        .map(|i| {
            coarse.unflatten(i, &mut idx);
            for v in idx.iter_mut() {
                *v = fine.wrap_index(coarse.signed_index(*v) * ratio as i64);
            }
            f.samples()[fine.flatten(&idx)]
        })
        .collect();
    GridFunction::new(coarse.clone(), samples, Domain::Spatial)
}

/// Frequency-interaction regime of one parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interaction {
    /// First argument at much lower frequency than the second.
    LowHigh,
    /// Comparable frequencies.
    Diagonal,
    /// First argument at much higher frequency than the second.
    HighLow,
}

impl Interaction {
    pub const ALL: [Interaction; 3] = [Interaction::LowHigh, Interaction::Diagonal, Interaction::HighLow];

    pub fn label(self) -> &'static str {
        match self {
            Interaction::LowHigh => "12",
            Interaction::Diagonal => "22",
            Interaction::HighLow => "21",
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParaproductPiece {
    pub first: Interaction,
    pub second: Interaction,
    pub output: GridFunction,
}

/// Cutoff of one parameter for a given regime, at radii `(|ξ|, |η|)` and output `|ξ+η|`.
fn regime_cutoff(bank: &FilterBank, kind: Interaction, rx: f64, ry: f64, rsum: Option<f64>) -> f64 {
    let sep = bank.separation();
    let aux_high = |k: i32, r: f64| -> f64 {
        // ψ̃_k: 1 on [2^{k-2}, 2^{k+2}], supported in [2^{k-3}, 2^{k+3}]
        let w = RadialWindow {
            lo: 2f64.powi(k - 3),
            plateau_lo: 2f64.powi(k - 2),
            plateau_hi: 2f64.powi(k + 2),
            hi: 2f64.powi(k + 3),
        };
        w.eval(r)
    };
    let tilde = RadialWindow::of_kind(WindowKind::Tilde);
    let mut total = 0.0;
    match kind {
        Interaction::LowHigh | Interaction::HighLow => {
            let (low, high) = if kind == Interaction::LowHigh { (rx, ry) } else { (ry, rx) };
            for k in bank.scales() {
                let mut v = bank.phi_radial(k, low) * bank.psi_radial(k, high);
                if v == 0.0 {
                    continue;
                }
                if let Some(rs) = rsum {
                    v *= aux_high(k, rs) * tilde.eval(f64::hypot(rx, ry) / 2f64.powi(k));
                }
                total += v;
            }
        }
        Interaction::Diagonal => {
            for j in bank.scales() {
                for k in (j - sep).max(bank.j_min())..=(j + sep).min(bank.j_max()) {
                    let mut v = bank.psi_radial(j, rx) * bank.psi_radial(k, ry);
                    if v == 0.0 {
                        continue;
                    }
                    if let Some(rs) = rsum {
                        let top = j.max(k);
                        v *= phi0(rs / 2f64.powi(j.min(k) + sep + 2))
                            * tilde.eval(f64::hypot(rx, ry) / 2f64.powi(top));
                    }
                    total += v;
                }
            }
        }
    }
    total
}

/// The nine regime pieces of a bilinear bi-parameter operator with one-dimensional
/// parameters. Outputs are dealiased (grid refined by 2); they sum to
/// `apply_multilinear(m, [f, g], true)`.
pub fn paraproduct_pieces(
    m: &MultiplierRep,
    f: &GridFunction,
    g: &GridFunction,
    bank: &FilterBank,
) -> Result<Vec<ParaproductPiece>> {
    paraproduct_impl(m, f, g, bank, false)
}

/// As [`paraproduct_pieces`], with the auxiliary output-frequency windows ψ̃ (or a
/// low-pass window on the diagonal) and the Θ̃ window inserted into every term.
/// Mathematically each inserted window is 1 on the support of its term.
pub fn paraproduct_pieces_auxiliary(
    m: &MultiplierRep,
    f: &GridFunction,
    g: &GridFunction,
    bank: &FilterBank,
) -> Result<Vec<ParaproductPiece>> {
    paraproduct_impl(m, f, g, bank, true)
}

fn paraproduct_impl(
    m: &MultiplierRep,
    f: &GridFunction,
    g: &GridFunction,
    bank: &FilterBank,
    auxiliary: bool,
) -> Result<Vec<ParaproductPiece>> {
    let shape = m.shape;
    if shape.arity != 2 || shape.params != 2 || shape.base_dim != 1 {
        return Err(structural("paraproduct pieces need l = 2, d = 2, n = 1"));
    }
    if matches!(m.form, SymbolForm::Separable(_)) {
        return Err(structural("paraproduct pieces take dense or rule symbols"));
    }
    let grid = f.grid().clone();
    grid.ensure_same(g.grid())?;
    let bgrid = bank.grid();
    if bgrid.dims() != 1 || bgrid.points_per_axis() != grid.points_per_axis() || bgrid.period() != grid.period() {
        return Err(structural("bank grid must be the one-parameter slice of the input grid"));
    }
    let (fs, gs) = (f.to_spectral(), g.to_spectral());
    let mut uncovered = Vec::new();
    for s in [&fs, &gs] {
        // roundoff left by a transform round trip is not content
        let floor = 1e-12 * s.max_abs();
        for (k, z) in s.samples().iter().enumerate() {
            if z.norm() <= floor {
                continue;
            }
            let xi = grid.frequency(k);
            if !xi.iter().all(|&x| bank.covers(x.abs())) && uncovered.len() < 32 {
                uncovered.push(xi);
            }
        }
    }
    if !uncovered.is_empty() {
        return Err(Error::Coverage { modes: uncovered });
    }
    let n = grid.points_per_axis();
    // Cutoff tables over (ξ index, η index) of one parameter axis.
    let table = |kind: Interaction| -> Vec<f64> {
        let mut t = vec![0.0; n * n];
        for a in 0..n {
            for b in 0..n {
                let (x, y) = (grid.freq(a), grid.freq(b));
                let rsum = auxiliary.then_some((x + y).abs());
                t[a * n + b] = regime_cutoff(bank, kind, x.abs(), y.abs(), rsum);
            }
        }
        t
    };
    let tables: Vec<Vec<f64>> = Interaction::ALL.iter().map(|&k| table(k)).collect();
    let dense = match &m.form {
        SymbolForm::Dense(d) if d.arg_grid != grid => {
            return Err(structural("dense symbol lattice differs from the input grid"))
        }
        SymbolForm::Dense(d) => Some(&d.values),
        _ => None,
    };
    let out_grid = grid.refined(2)?;
    let inputs = [f.clone(), g.clone()];
    let mut pieces = Vec::with_capacity(9);
    for (ai, &a) in Interaction::ALL.iter().enumerate() {
        for (bi, &b) in Interaction::ALL.iter().enumerate() {
            let mut err = None;
            let output = lattice_sum(shape, &inputs, &out_grid, |flat, xi| {
                // flat = (ξ1, ξ2, η1, η2) on the product lattice
                let glen = n * n;
                let (fk, gk) = (flat / glen, flat % glen);
                let (x1, x2) = (fk / n, fk % n);
                let (y1, y2) = (gk / n, gk % n);
                let c = tables[ai][x1 * n + y1] * tables[bi][x2 * n + y2];
                if c == 0.0 {
                    return ZERO;
                }
                let mv = match dense {
                    Some(v) => v[flat],
                    None => m.eval(xi).unwrap_or_else(|e| {
                        err.get_or_insert(e);
                        ZERO
                    }),
                };
                mv * c
            })?;
            if let Some(e) = err {
                return Err(e);
            }
            pieces.push(ParaproductPiece {
                first: a,
                second: b,
                output,
            });
        }
    }
    Ok(pieces)
}

/// A symbol rescaled by `2^{k_g}` in each parameter group and cut off by a window,
/// together with its spatial kernel.
#[derive(Clone, Debug)]
pub struct LocalizedSymbol {
    pub shape: ProductShape,
    pub dilation: Vec<i32>,
    pub window: WindowKind,
    /// Spectral samples on the product grid (`l·n·d` dims).
    pub windowed: GridFunction,
    pub kernel: GridFunction,
}

impl LocalizedSymbol {
    pub fn windowed_rep(&self) -> Result<MultiplierRep> {
        let arg = self.windowed.grid().with_dims(self.shape.arg_dims())?;
        MultiplierRep::dense(self.shape, arg, self.windowed.samples().to_vec())
    }
}

/// `m(2^{k_1}ξ^1, …, 2^{k_d}ξ^d) · ∏_g W(|ξ^g|)` sampled on `grid` (the product grid).
pub fn localize_symbol(
    m: &MultiplierRep,
    dilation: &[i32],
    window: WindowKind,
    grid: &Grid,
) -> Result<LocalizedSymbol> {
    let shape = m.shape;
    if dilation.len() != shape.params {
        return Err(structural("one dilation index per parameter"));
    }
    if let Some(k) = dilation.iter().find(|k| k.abs() > 60) {
        return Err(param(format!("dilation index {k} out of range")));
    }
    if grid.dims() != shape.total_dims() {
        return Err(structural("localization grid must have l·n·d dims"));
    }
    if grid.len() > DENSE_BUDGET {
        return Err(Error::Budget {
            what: "localized symbol".into(),
            needed: grid.len() as u128,
            limit: DENSE_BUDGET as u128,
        });
    }
    let w = RadialWindow::of_kind(window);
    w.check_resolution(grid.freq_spacing(), grid.nyquist())?;
    let groups: Vec<Vec<usize>> = (0..shape.params).map(|g| shape.group_axes(g)).collect();
    let scales: Vec<f64> = dilation.iter().map(|&k| 2f64.powi(k)).collect();
    let mut scaled = vec![0.0; shape.total_dims()];
    let mut values = Vec::with_capacity(grid.len());
    for i in 0..grid.len() {
        let xi = grid.frequency(i);
        let mut wv = 1.0;
        for axes in &groups {
            let r = norm(&axes.iter().map(|&a| xi[a]).collect::<Vec<_>>());
            wv *= w.eval(r);
        }
        if wv == 0.0 {
            values.push(ZERO);
            continue;
        }
        for (g, axes) in groups.iter().enumerate() {
            for &a in axes {
                scaled[a] = xi[a] * scales[g];
            }
        }
        values.push(m.eval(&scaled)? * wv);
    }
    let windowed = GridFunction::new(grid.clone(), values, Domain::Spectral)?;
    let kernel = crate::grid::transform(&windowed, Direction::Inverse)?;
    Ok(LocalizedSymbol {
        shape,
        dilation: dilation.to_vec(),
        window,
        windowed,
        kernel,
    })
}

/// Kernel pieces keyed by the per-parameter shell index `M⃗`.
#[derive(Clone, Debug)]
pub struct ShellDecomposition {
    pub shape: ProductShape,
    pub m_max: u32,
    pub shells: BTreeMap<Vec<u32>, GridFunction>,
}

/// Shell index of a radius: 0 on the unit ball, `M` on `2^{M-1} < r ≤ 2^M`, capped at `m_max`.
pub fn shell_index(r: f64, m_max: u32) -> u32 {
    let mut m = 0;
    let mut edge = 1.0;
    while r > edge && m < m_max {
        m += 1;
        edge *= 2.0;
    }
    m
}

/// Splits the kernel by sharp indicators of `D_M` per parameter group. The last shell
/// `M = m_max` also holds everything farther out.
pub fn shell_decompose(loc: &LocalizedSymbol, m_max: u32) -> Result<ShellDecomposition> {
    if m_max < 1 {
        return Err(param("m_max must be at least 1"));
    }
    let kernel = &loc.kernel;
    if kernel.domain() != Domain::Spatial {
        return Err(structural("kernel must be spatial"));
    }
    let grid = kernel.grid();
    let shape = loc.shape;
    let groups: Vec<Vec<usize>> = (0..shape.params).map(|g| shape.group_axes(g)).collect();
    let mut shells: BTreeMap<Vec<u32>, Vec<C64>> = BTreeMap::new();
    for i in 0..grid.len() {
        let x = grid.point(i);
        let key: Vec<u32> = groups
            .iter()
            .map(|axes| shell_index(norm(&axes.iter().map(|&a| x[a]).collect::<Vec<_>>()), m_max))
            .collect();
        shells.entry(key).or_insert_with(|| vec![ZERO; grid.len()])[i] = kernel.samples()[i];
    }
    let shells = shells
        .into_iter()
        .map(|(k, v)| Ok((k, GridFunction::new(grid.clone(), v, Domain::Spatial)?)))
        .collect::<Result<_>>()?;
    Ok(ShellDecomposition {
        shape,
        m_max,
        shells,
    })
}

impl ShellDecomposition {
    /// Dense symbol whose kernel is the given shell piece.
    pub fn piece_symbol(&self, key: &[u32]) -> Result<MultiplierRep> {
        let piece = self
            .shells
            .get(key)
            .ok_or_else(|| param(format!("no shell {key:?}")))?;
        let spec = crate::grid::transform(piece, Direction::Forward)?;
        let arg = piece.grid().with_dims(self.shape.arg_dims())?;
        MultiplierRep::dense(self.shape, arg, spec.into_samples())
    }

    pub fn total(&self) -> Option<GridFunction> {
        let mut it = self.shells.values();
        let first = it.next()?.clone();
        Some(it.fold(first, |acc, p| acc.add_scaled(p, C64::new(1.0, 0.0)).unwrap()))
    }
}

/// JSON envelope for stored symbols. Dense values go to a sibling binary file of
/// little-endian `f64` pairs (re, im) in product-lattice order.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "format", rename_all = "snake_case")]
pub enum SymbolFile {
    Dense {
        shape: ProductShape,
        arg_grid: Grid,
        data_file: String,
        #[serde(default)]
        support: Option<SupportDecl>,
    },
    SeparableSum {
        shape: ProductShape,
        sum: SeparableSum,
        #[serde(default)]
        support: Option<SupportDecl>,
    },
}

/// Writes `m` to `path` (JSON), plus `<path>.bin` for dense symbols.
pub fn save_symbol(m: &MultiplierRep, path: &Path) -> Result<()> {
    let file = match &m.form {
        SymbolForm::Dense(d) => {
            let bin = path.with_extension("bin");
            let mut bytes = Vec::with_capacity(d.values.len() * 16);
            for z in &d.values {
                bytes.extend_from_slice(&z.re.to_le_bytes());
                bytes.extend_from_slice(&z.im.to_le_bytes());
            }
            crate::harness::write_atomic(&bin, &bytes)?;
            SymbolFile::Dense {
                shape: m.shape,
                arg_grid: d.arg_grid.clone(),
                data_file: bin
                    .file_name()
                    .map(|s| s.to_string_lossy().into_owned())
                    .unwrap_or_default(),
                support: m.support.clone(),
            }
        }
        SymbolForm::Separable(s) => SymbolFile::SeparableSum {
            shape: m.shape,
            sum: s.clone(),
            support: m.support.clone(),
        },
        _ => return Err(structural("only dense and separable symbols can be stored")),
    };
    crate::harness::write_atomic(path, serde_json::to_string_pretty(&file)?.as_bytes())
}

pub fn load_symbol(path: &Path) -> Result<MultiplierRep> {
    let text = fs::read_to_string(path)?;
    let file: SymbolFile = serde_json::from_str(&text)?;
    let (rep, support) = match file {
        SymbolFile::Dense {
            shape,
            arg_grid,
            data_file,
            support,
        } => {
            let bin = path.parent().unwrap_or(Path::new(".")).join(data_file);
            let bytes = fs::read(bin)?;
            if bytes.len() % 16 != 0 {
                return Err(structural("dense data length is not a multiple of 16 bytes"));
            }
            let values = bytes
                .chunks_exact(16)
                .map(|c| {
                    let re = f64::from_le_bytes(c[..8].try_into().unwrap());
                    let im = f64::from_le_bytes(c[8..].try_into().unwrap());
                    C64::new(re, im)
                })
                .collect();
            (MultiplierRep::dense(shape, arg_grid, values)?, support)
        }
        SymbolFile::SeparableSum { shape, sum, support } => (MultiplierRep::separable(shape, sum)?, support),
    };
    match support {
        Some(s) => rep.with_support(s),
        None => Ok(rep),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{lp_norm, pointwise_product, transform, NormSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(v: f64) -> C64 {
        C64::new(v, 0.0)
    }

    fn rel_l2(a: &GridFunction, b: &GridFunction) -> f64 {
        let num: f64 = a.samples().iter().zip(b.samples()).map(|(x, y)| (x - y).norm_sqr()).sum();
        let den: f64 = b.samples().iter().map(|y| y.norm_sqr()).sum();
        (num / den.max(1e-300)).sqrt()
    }

    /// Random spectrum supported where every axis frequency passes `keep`.
    fn random_band(grid: &Grid, seed: u64, keep: impl Fn(f64) -> bool) -> GridFunction {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        GridFunction::from_spectral_fn(grid, |xi| {
            let z = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            if xi.iter().all(|&x| keep(x)) {
                z
            } else {
                ZERO
            }
        })
        .to_spatial()
    }

    fn shape(l: usize, d: usize, n: usize) -> ProductShape {
        ProductShape::new(l, d, n).unwrap()
    }

    #[test]
    fn linear_identity_and_shift() {
        let g = Grid::new(1, 32, 4.0).unwrap();
        let f = random_band(&g, 1, |x| x.abs() < 3.0);
        let one = GridFunction::from_spectral_fn(&g, |_| c(1.0));
        assert!(rel_l2(&apply_linear(&one, &f).unwrap(), &f) < 1e-14);
        let shift = 3.0 * g.spacing();
        let sym = GridFunction::from_spectral_fn(&g, |xi| {
            C64::from_polar(1.0, -2.0 * std::f64::consts::PI * xi[0] * shift)
        });
        let moved = apply_linear(&sym, &f).unwrap();
        for i in 0..g.len() {
            let src = g.wrap_index(g.signed_index(i) - 3);
            assert!((moved.samples()[i] - f.samples()[src]).norm() < 1e-12);
        }
    }

    #[test]
    fn linear_matches_direct_convolution() {
        let g = Grid::new(1, 32, 8.0).unwrap();
        let bank = FilterBank::new(&g, -2, 1, 1).unwrap();
        let psi = bank.psi_hat(0).unwrap();
        let kernel = psi.to_spatial();
        let f = random_band(&g, 2, |_| true);
        let fast = apply_linear(psi, &f).unwrap();
        let h = g.cell_volume();
        for i in 0..g.len() {
            let direct: C64 = (0..g.len())
                .map(|j| {
                    let d = g.wrap_index(g.signed_index(i) - g.signed_index(j));
                    kernel.samples()[d] * f.samples()[j] * h
                })
                .sum();
            assert!((direct - fast.samples()[i]).norm() < 1e-10);
        }
    }

    #[test]
    fn constant_symbol_is_pointwise_product() {
        let g = Grid::new(1, 16, 2.0).unwrap();
        // signed indices |k| <= 2 on each input
        let f = random_band(&g, 3, |x| x.abs() < 1.5);
        let h = random_band(&g, 4, |x| x.abs() < 1.5);
        let one = MultiplierRep::constant(shape(2, 1, 1), c(1.0));
        let rule_one = MultiplierRep::rule(shape(2, 1, 1), |_| c(1.0));
        let want = pointwise_product(&f, &h).unwrap();
        for m in [&one, &rule_one] {
            let out = apply_multilinear(m, &[f.clone(), h.clone()], true).unwrap();
            assert!(rel_l2(&restrict_to(&out, &g).unwrap(), &want) < 1e-10);
            // no spurious content beyond the sum of the input bands
            let spec = out.to_spectral();
            for (i, z) in spec.samples().iter().enumerate() {
                if out.grid().signed_index(i).abs() > 4 {
                    assert!(z.norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn arity_one_is_apply_linear() {
        let g = Grid::new(2, 8, 3.0).unwrap();
        let f = random_band(&g, 5, |_| true);
        let m = MultiplierRep::rule(shape(1, 2, 1), |xi| c(1.0 / (1.0 + xi[0] * xi[0] + 2.0 * xi[1].abs())));
        let sym = GridFunction::from_spectral_fn(&g, |xi| m.eval(xi).unwrap());
        let lin = apply_linear(&sym, &f).unwrap();
        let multi = apply_multilinear(&m, &[f.clone()], false).unwrap();
        assert!(rel_l2(&multi, &lin) < 1e-13);
    }

    fn random_separable(seed: u64, grid: &Grid, terms: usize, l: usize) -> SeparableSum {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut factors = Vec::new();
        for _ in 0..terms * l {
            let vals: Vec<C64> = (0..grid.len())
                .map(|_| C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
                .collect();
            factors.push(Factor::Sampled(GridFunction::new(grid.clone(), vals, Domain::Spectral).unwrap()));
        }
        factors.push(Factor::Bump(Bump::new(vec![0.5; grid.dims()], 0.3, 0.9).unwrap()));
        let terms = (0..terms)
            .map(|t| SeparableTerm {
                coeff: C64::new(rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)),
                factors: (0..l).map(|i| if i == 0 && t == 0 { factors.len() - 1 } else { t * l + i }).collect(),
            })
            .collect();
        SeparableSum { factors, terms }
    }

    #[test]
    fn separable_equals_dense() {
        for (l, d, dealias) in [(2, 1, true), (2, 1, false), (3, 1, true), (2, 2, true)] {
            let g = Grid::new(d, 8, 2.0).unwrap();
            let sh = shape(l, d, 1);
            let sep = MultiplierRep::separable(sh, random_separable(9, &g, 3, l)).unwrap();
            let dense = sep.to_dense(&g).unwrap();
            let fs: Vec<GridFunction> = (0..l).map(|i| random_band(&g, 20 + i as u64, |_| true)).collect();
            let a = apply_multilinear(&sep, &fs, dealias).unwrap();
            let b = apply_multilinear(&dense, &fs, dealias).unwrap();
            assert!(rel_l2(&a, &b) < 1e-9, "l={l} d={d}: {}", rel_l2(&a, &b));
        }
    }

    #[test]
    fn sparse_and_fft_paths_agree() {
        let g = Grid::new(1, 64, 8.0).unwrap();
        let sh = shape(2, 1, 1);
        let sum = SeparableSum {
            factors: vec![
                Factor::Bump(Bump::new(vec![0.5], 0.2, 0.4).unwrap()),
                Factor::Bump(Bump::new(vec![1.0], 0.1, 0.5).unwrap()),
                Factor::Const(c(0.5)),
            ],
            terms: vec![
                SeparableTerm { coeff: c(1.0), factors: vec![0, 1] },
                SeparableTerm { coeff: C64::new(0.0, 2.0), factors: vec![2, 0] },
            ],
        };
        let fs = [random_band(&g, 1, |_| true), random_band(&g, 2, |_| true)];
        let out_grid = g.refined(2).unwrap();
        let sparse = separable_sparse(sh, &sum, &fs, &out_grid).unwrap().unwrap();
        let fft = separable_fft(&sum, &fs, &out_grid).unwrap();
        assert!(rel_l2(&sparse, &fft) < 1e-12);
    }

    #[test]
    fn dense_size_budget() {
        let g = Grid::new(2, 128, 1.0).unwrap();
        let m = MultiplierRep::rule(shape(2, 2, 1), |_| c(1.0));
        assert!(matches!(m.to_dense(&g), Err(Error::Budget { .. })));
    }

    #[test]
    fn dense_lookup_rejects_off_lattice_points() {
        let g = Grid::new(1, 8, 2.0).unwrap();
        let m = MultiplierRep::rule(shape(2, 1, 1), |xi| c(xi[0] + 2.0 * xi[1]))
            .to_dense(&g)
            .unwrap();
        assert_eq!(m.eval(&[0.5, -1.0]).unwrap(), c(-1.5));
        assert!(m.eval(&[0.3, 0.0]).is_err());
        assert_eq!(m.eval(&[3.0, 0.0]).unwrap(), ZERO);
    }

    #[test]
    fn tensor_symbol_factorizes_on_tensor_inputs() {
        // d = 2, l = 2: inputs f_i(x, y) = a_i(x) b_i(y)
        let g1 = Grid::new(1, 8, 2.0).unwrap();
        let g2 = Grid::new(2, 8, 2.0).unwrap();
        let m1 = MultiplierRep::rule(shape(2, 1, 1), |xi| C64::new(1.0 / (1.0 + xi[0].powi(2) + xi[1].abs()), xi[0]));
        let m2 = MultiplierRep::rule(shape(2, 1, 1), |xi| c((xi[0] - xi[1]).cos()));
        let m = MultiplierRep::tensor(vec![m1.clone(), m2.clone()]).unwrap();
        let a = [random_band(&g1, 1, |_| true), random_band(&g1, 2, |_| true)];
        let b = [random_band(&g1, 3, |_| true), random_band(&g1, 4, |_| true)];
        let outer = |u: &GridFunction, v: &GridFunction| {
            GridFunction::from_spatial_fn(&g2, |x| {
                let i = g1.wrap_index((x[0] / g1.spacing()).round() as i64);
                let j = g1.wrap_index((x[1] / g1.spacing()).round() as i64);
                u.samples()[i] * v.samples()[j]
            })
        };
        let fs = [outer(&a[0], &b[0]), outer(&a[1], &b[1])];
        let full = apply_multilinear(&m, &fs, true).unwrap();
        let p1 = apply_multilinear(&m1, &a, true).unwrap();
        let p2 = apply_multilinear(&m2, &b, true).unwrap();
        let fine = g1.refined(2).unwrap();
        let want = GridFunction::from_spatial_fn(full.grid(), |x| {
            let i = fine.wrap_index((x[0] / fine.spacing()).round() as i64);
            let j = fine.wrap_index((x[1] / fine.spacing()).round() as i64);
            p1.samples()[i] * p2.samples()[j]
        });
        assert!(rel_l2(&full, &want) < 1e-10);
    }

    fn paraproduct_setup(seed: u64) -> (Grid, FilterBank, GridFunction, GridFunction) {
        // N = 16, P = 8: frequency spacing 1/8, Nyquist 1; band [2^-3, 2^0].
        let g = Grid::new(2, 16, 8.0).unwrap();
        let bank = FilterBank::new(&g.with_dims(1).unwrap(), -3, 0, 2).unwrap();
        let keep = |x: f64| bank.covers(x.abs());
        let f = random_band(&g, seed, keep);
        let h = random_band(&g, seed + 100, keep);
        (g, bank, f, h)
    }

    fn bilinear_symbol() -> MultiplierRep {
        MultiplierRep::rule(shape(2, 2, 1), |xi| {
            let r2: f64 = xi.iter().map(|v| v * v).sum();
            C64::new((1.0 + r2).recip(), 0.3 * (xi[0] - xi[3]).sin())
        })
    }

    #[test]
    fn paraproduct_pieces_sum_to_operator() {
        let m = bilinear_symbol();
        for seed in 0..3 {
            let (_, bank, f, h) = paraproduct_setup(seed);
            let pieces = paraproduct_pieces(&m, &f, &h, &bank).unwrap();
            assert_eq!(pieces.len(), 9);
            let mut sum = GridFunction::zeros(pieces[0].output.grid(), Domain::Spatial);
            for p in &pieces {
                sum = sum.add_scaled(&p.output, c(1.0)).unwrap();
            }
            let full = apply_multilinear(&m, &[f, h], true).unwrap();
            assert!(rel_l2(&sum, &full) < 1e-9);
        }
    }

    #[test]
    fn paraproduct_auxiliary_windows_change_nothing() {
        let m = bilinear_symbol();
        let (_, bank, f, h) = paraproduct_setup(7);
        let plain = paraproduct_pieces(&m, &f, &h, &bank).unwrap();
        let aux = paraproduct_pieces_auxiliary(&m, &f, &h, &bank).unwrap();
        for (a, b) in plain.iter().zip(&aux) {
            let scale = a.output.max_abs().max(1e-300);
            assert!(a.output.sub(&b.output).unwrap().max_abs() <= 1e-12 * scale.max(1.0));
        }
    }

    #[test]
    fn separated_annuli_land_in_low_high_pieces() {
        let (g, bank, _, _) = paraproduct_setup(0);
        // f at |ξ1| = 1/8 (scale -3), g at |η1| = 1 (scale 0); both at 1/2 in parameter 2.
        let mode = |k1: f64, k2: f64| {
            GridFunction::from_spatial_fn(&g, move |x| {
                C64::from_polar(1.0, 2.0 * std::f64::consts::PI * (k1 * x[0] + k2 * x[1]))
            })
        };
        let f = mode(0.125, 0.5);
        let h = mode(-1.0, 0.5);
        let m = MultiplierRep::constant(shape(2, 2, 1), c(1.0));
        let dense = m.to_dense(&g).unwrap();
        let pieces = paraproduct_pieces(&dense, &f, &h, &bank).unwrap();
        for p in &pieces {
            let mag = p.output.max_abs();
            if p.first != Interaction::LowHigh {
                assert!(mag <= 1e-10, "{:?}/{:?} = {mag}", p.first, p.second);
            }
        }
    }

    #[test]
    fn paraproduct_coverage_error() {
        let (g, bank, f, _) = paraproduct_setup(0);
        let low = GridFunction::constant(&g, c(1.0));
        let m = bilinear_symbol();
        match paraproduct_pieces(&m, &f, &low, &bank) {
            Err(Error::Coverage { modes }) => assert_eq!(modes, vec![vec![0.0, 0.0]]),
            other => panic!("expected coverage error, got {other:?}"),
        }
    }

    fn annulus_bump_symbol() -> MultiplierRep {
        // l = 2, d = 1, n = 1; bump at (0.7, 0.7) inside the unit annulus plateau
        let sh = shape(2, 1, 1);
        let b = Bump::new(vec![0.7], 0.05, 0.1).unwrap();
        MultiplierRep::separable(
            sh,
            SeparableSum {
                factors: vec![Factor::Bump(b)],
                terms: vec![SeparableTerm { coeff: c(1.0), factors: vec![0, 0] }],
            },
        )
        .unwrap()
    }

    #[test]
    fn localization_identity_and_disjoint_dilation() {
        let g = Grid::new(2, 64, 32.0).unwrap();
        let m = annulus_bump_symbol();
        let loc = localize_symbol(&m, &[0], WindowKind::Annulus, &g).unwrap();
        for i in 0..g.len() {
            let want = m.eval(&g.frequency(i)).unwrap();
            assert!((loc.windowed.samples()[i] - want).norm() < 1e-12);
        }
        let far = localize_symbol(&m, &[3], WindowKind::Annulus, &g).unwrap();
        assert_eq!(far.windowed.max_abs(), 0.0);
        assert!(localize_symbol(&m, &[99], WindowKind::Annulus, &g).is_err());
        // Parseval form of the Hausdorff-Young bound at u = 2
        let a = lp_norm(&loc.kernel, NormSpec::lebesgue(2.0)).unwrap();
        let b = crate::grid::spectral_l2_norm(&loc.windowed).unwrap();
        assert!(((a - b) / b).abs() < 1e-10);
    }

    #[test]
    fn shells_partition_the_kernel() {
        let g = Grid::new(2, 32, 16.0).unwrap();
        let m = annulus_bump_symbol();
        let loc = localize_symbol(&m, &[0], WindowKind::Annulus, &g).unwrap();
        let shells = shell_decompose(&loc, 3).unwrap();
        let total = shells.total().unwrap();
        assert_eq!(total.samples(), loc.kernel.samples());
        // operator pieces add up
        let f = random_band(&g.with_dims(1).unwrap(), 1, |x| x.abs() < 0.9);
        let h = random_band(&g.with_dims(1).unwrap(), 2, |x| x.abs() < 0.9);
        let whole = apply_multilinear(&loc.windowed_rep().unwrap(), &[f.clone(), h.clone()], true).unwrap();
        let mut sum = GridFunction::zeros(whole.grid(), Domain::Spatial);
        for key in shells.shells.keys() {
            let part = apply_multilinear(&shells.piece_symbol(key).unwrap(), &[f.clone(), h.clone()], true).unwrap();
            sum = sum.add_scaled(&part, c(1.0)).unwrap();
        }
        assert!(rel_l2(&sum, &whole) < 1e-9);
    }

    #[test]
    fn compact_kernel_has_single_shell() {
        let g = Grid::new(2, 16, 8.0).unwrap();
        let mut kernel = GridFunction::zeros(&g, Domain::Spatial);
        for i in 0..g.len() {
            if norm(&g.point(i)) <= 1.0 {
                kernel.samples_mut()[i] = c(1.0);
            }
        }
        let loc = LocalizedSymbol {
            shape: shape(2, 1, 1),
            dilation: vec![0],
            window: WindowKind::Annulus,
            windowed: transform(&kernel, Direction::Forward).unwrap(),
            kernel,
        };
        let shells = shell_decompose(&loc, 4).unwrap();
        for (key, piece) in &shells.shells {
            if key != &vec![0] {
                assert_eq!(piece.max_abs(), 0.0);
            }
        }
        assert_eq!(shell_index(1.0, 5), 0);
        assert_eq!(shell_index(2.0, 5), 1);
        assert_eq!(shell_index(2.0001, 5), 2);
        assert_eq!(shell_index(1e9, 5), 5);
    }

    #[test]
    fn symbol_files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid::new(1, 8, 2.0).unwrap();
        let sep = MultiplierRep::separable(shape(2, 1, 1), random_separable(3, &g, 2, 2)).unwrap();
        let p = dir.path().join("sep.json");
        save_symbol(&sep, &p).unwrap();
        let back = load_symbol(&p).unwrap();
        let dense = sep.to_dense(&g).unwrap();
        let q = dir.path().join("dense.json");
        save_symbol(&dense, &q).unwrap();
        let dback = load_symbol(&q).unwrap();
        for i in 0..64 {
            let xi = g.with_dims(2).unwrap().frequency(i);
            assert_eq!(back.eval(&xi).unwrap(), sep.eval(&xi).unwrap());
            assert_eq!(dback.eval(&xi).unwrap(), dense.eval(&xi).unwrap());
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn multilinear_in_each_argument(seed in 0u64..500, a in -2.0f64..2.0, slot in 0usize..2) {
            let g = Grid::new(1, 8, 2.0).unwrap();
            let m = MultiplierRep::rule(shape(2, 1, 1), |xi| C64::new(xi[0] - xi[1], 1.0 + xi[0] * xi[1]));
            let f = random_band(&g, seed, |_| true);
            let h = random_band(&g, seed + 1, |_| true);
            let k = random_band(&g, seed + 2, |_| true);
            let build = |x: GridFunction| {
                let mut v = vec![f.clone(), h.clone()];
                v[slot] = x;
                apply_multilinear(&m, &v, true).unwrap()
            };
            let base = [f.clone(), h.clone()][slot].clone();
            let lhs = build(base.scale(c(a)).add_scaled(&k, c(1.0)).unwrap());
            let rhs = build(base).scale(c(a)).add_scaled(&build(k), c(1.0)).unwrap();
            prop_assert!(lhs.sub(&rhs).unwrap().max_abs() <= 1e-10 * rhs.max_abs().max(1.0));
        }

        #[test]
        fn dealiased_constant_symbol_reproduces_products(seed in 0u64..500) {
            let g = Grid::new(2, 8, 1.0).unwrap();
            let f = random_band(&g, seed, |_| true);
            let h = random_band(&g, seed + 7, |_| true);
            let one = MultiplierRep::constant(shape(2, 2, 1), c(1.0));
            let out = apply_multilinear(&one, &[f.clone(), h.clone()], true).unwrap();
            let want = pointwise_product(&f, &h).unwrap();
            prop_assert!(rel_l2(&restrict_to(&out, &g).unwrap(), &want) < 1e-10);
        }
    }
}
