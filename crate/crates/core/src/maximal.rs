// SPDX-License-Identifier: Apache-2.0
//! Maximal operators over grid-aligned windows and the hybrid square/maximal functions.

use std::collections::VecDeque;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{param, structural, Error, Result};
use crate::filters::FilterBank;
use crate::grid::{fft_nd, lp_norm, Direction, Domain, Grid, GridFunction, NormSpec, C64};
use crate::harness::{Comparison, ScalingReport};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    /// Cubes with equal side on every axis.
    Cubes,
    /// Products of a cube in the first half of the axes and a cube in the second half.
    Rectangles,
}

/// Finite family of periodic grid-aligned windows.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RectangleFamily {
    pub kind: FamilyKind,
    /// Allowed side lengths in grid points, one inclusive interval per group.
    pub sides: Vec<(usize, usize)>,
}

impl RectangleFamily {
    pub fn cubes(grid: &Grid) -> Self {
        RectangleFamily {
            kind: FamilyKind::Cubes,
            sides: vec![(1, grid.points_per_axis())],
        }
    }

    pub fn rectangles(grid: &Grid) -> Self {
        let n = grid.points_per_axis();
        RectangleFamily {
            kind: FamilyKind::Rectangles,
            sides: vec![(1, n), (1, n)],
        }
    }

    fn validate(&self, grid: &Grid) -> Result<()> {
        let groups = match self.kind {
            FamilyKind::Cubes => 1,
            FamilyKind::Rectangles => 2,
        };
        if self.sides.len() != groups {
            return Err(structural(format!("{:?} family needs {groups} side ranges", self.kind)));
        }
        if self.kind == FamilyKind::Rectangles && !grid.dims().is_multiple_of(2) {
            return Err(structural("rectangles need an even number of axes"));
        }
        for &(lo, hi) in &self.sides {
            if lo != 1 {
                return Err(structural("family must contain the single cell"));
            }
            if hi < lo || hi > grid.points_per_axis() {
                return Err(param(format!("side range {lo}..={hi} does not fit the grid")));
            }
        }
        Ok(())
    }
}

/// Applies `op` to every line of `data` along `axis`.
fn along_axis(data: &mut [f64], n: usize, dims: usize, axis: usize, mut op: impl FnMut(&mut [f64])) {
    let stride = n.pow((dims - 1 - axis) as u32);
    let block = stride * n;
    let mut line = vec![0.0; n];
    for base in (0..data.len()).step_by(block) {
        for off in 0..stride {
            let start = base + off;
            for (i, v) in line.iter_mut().enumerate() {
                *v = data[start + i * stride];
            }
            op(&mut line);
            for (i, v) in line.iter().enumerate() {
                data[start + i * stride] = *v;
            }
        }
    }
}

/// Cyclic sums of `w` consecutive entries starting at each index.
fn window_sums(line: &mut [f64], w: usize) {
    let n = line.len();
    let mut prefix = vec![0.0; 2 * n + 1];
    for i in 0..2 * n {
        prefix[i + 1] = prefix[i] + line[i % n];
    }
    for (i, v) in line.iter_mut().enumerate() {
        *v = prefix[i + w] - prefix[i];
    }
}

/// Cyclic max over the `w` windows ending at each index: `max_{t ∈ [i−w+1, i]} line[t]`.
fn trailing_max(line: &mut [f64], w: usize) {
    let n = line.len();
    let src = line.to_vec();
    let mut dq: VecDeque<usize> = VecDeque::new();
    // walk t from -(w-1) to n-1 over the cyclic sequence
    let start = n - (w - 1);
    for step in 0..n + w - 1 {
        let t = start + step;
        let v = src[t % n];
        while dq.back().is_some_and(|&b| src[b % n] <= v) {
            dq.pop_back();
        }
        dq.push_back(t);
        while dq.front().is_some_and(|&f| f + w <= t) {
            dq.pop_front();
        }
        if step >= w - 1 {
            line[(t - start) - (w - 1)] = src[dq.front().copied().expect("window nonempty") % n];
        }
    }
}

/// `(max over windows W ∋ x of mean_W |f|^r)^{1/r}` over the family's periodic windows.
pub fn maximal(f: &GridFunction, family: &RectangleFamily, r: f64) -> Result<GridFunction> {
    if f.domain() != Domain::Spatial {
        return Err(structural("maximal operators act on spatial samples"));
    }
    if !(r > 0.0 && r.is_finite()) {
        return Err(param(format!("power must be positive, got {r}")));
    }
    let grid = f.grid();
    family.validate(grid)?;
    let dims = grid.dims();
    let n = grid.points_per_axis();
    let powered: Vec<f64> = f.samples().iter().map(|z| z.norm().powf(r)).collect();
    let mut best = vec![0.0f64; powered.len()];
    let mut consider = |widths: &[usize]| {
        let mut a = powered.clone();
        for (axis, &w) in widths.iter().enumerate() {
            along_axis(&mut a, n, dims, axis, |line| window_sums(line, w));
        }
        let vol: f64 = widths.iter().map(|&w| w as f64).product();
        a.iter_mut().for_each(|v| *v /= vol);
        for (axis, &w) in widths.iter().enumerate() {
            along_axis(&mut a, n, dims, axis, |line| trailing_max(line, w));
        }
        for (b, v) in best.iter_mut().zip(&a) {
            *b = b.max(*v);
        }
    };
    match family.kind {
        FamilyKind::Cubes => {
            let (lo, hi) = family.sides[0];
            for w in lo..=hi {
                consider(&vec![w; dims]);
            }
        }
        FamilyKind::Rectangles => {
            let half = dims / 2;
            for w1 in family.sides[0].0..=family.sides[0].1 {
                for w2 in family.sides[1].0..=family.sides[1].1 {
                    let widths: Vec<usize> = (0..dims).map(|a| if a < half { w1 } else { w2 }).collect();
                    consider(&widths);
                }
            }
        }
    }
    let samples = best.into_iter().map(|v| C64::new(v.powf(1.0 / r), 0.0)).collect();
    GridFunction::new(grid.clone(), samples, Domain::Spatial)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum HybridKind {
    /// Square function in both parameters.
    SS,
    /// Maximal in the first parameter, square in the second.
    MS,
    /// Square in the first parameter, maximal in the second.
    SM,
    MM,
}

impl HybridKind {
    pub const ALL: [HybridKind; 4] = [HybridKind::SS, HybridKind::MS, HybridKind::SM, HybridKind::MM];

    /// Whether each parameter uses the band filter (square) or the low-pass filter (maximal).
    fn squares(self) -> [bool; 2] {
        match self {
            HybridKind::SS => [true, true],
            HybridKind::MS => [false, true],
            HybridKind::SM => [true, false],
            HybridKind::MM => [false, false],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridSpec {
    pub kind: HybridKind,
    pub shift: [u32; 2],
    pub u: f64,
    /// Radius of the local `L^u(|y| ≤ radius)` domain; `6√n` when absent.
    #[serde(default)]
    pub radius: Option<f64>,
}

impl HybridSpec {
    pub fn new(kind: HybridKind, shift: [u32; 2], u: f64) -> Result<Self> {
        if !(u >= 1.0 && u.is_finite()) {
            return Err(param(format!("u must be at least 1, got {u}")));
        }
        Ok(HybridSpec { kind, shift, u, radius: None })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HybridOutput {
    pub value: GridFunction,
    /// `‖F − Σ_{j,k} (ψ_j⊗ψ_k) * F‖₂ / ‖F‖₂` over the bank's scale range.
    pub out_of_band: f64,
}

/// One filtered function `(a_j ⊗ b_k) * F` in spatial samples.
fn filtered(spectrum: &[C64], grid: &Grid, first: &GridFunction, second: &GridFunction) -> Vec<C64> {
    let half = first.samples().len();
    let mut out: Vec<C64> = spectrum
        .iter()
        .enumerate()
        .map(|(flat, z)| z * first.samples()[flat / half] * second.samples()[flat % half])
        .collect();
    fft_nd(&mut out, grid.points_per_axis(), grid.dims(), Direction::Inverse);
    let scale = 1.0 / grid.len() as f64;
    out.iter_mut().for_each(|z| *z *= scale);
    out
}

/// Cell geometry of one parameter group at side `s`: per-point cell id and the
/// corner of each cell in signed grid units.
struct Cells {
    of_point: Vec<usize>,
    corners: Vec<Vec<i64>>,
}

fn cells(group: &Grid, side: f64) -> Result<Cells> {
    let h = group.spacing();
    let per = side / h;
    if per < 1.0 || per.fract() != 0.0 {
        return Err(Error::Resolution(format!("cells of side {side} on spacing {h}")));
    }
    let per = per as i64;
    let n = group.dims();
    let mut ids = std::collections::BTreeMap::new();
    let mut of_point = Vec::with_capacity(group.len());
    let mut corners = Vec::new();
    let mut idx = vec![0usize; n];
    for flat in 0..group.len() {
        group.unflatten(flat, &mut idx);
        let key: Vec<i64> = idx.iter().map(|&i| group.signed_index(i).div_euclid(per)).collect();
        let id = *ids.entry(key.clone()).or_insert_with(|| {
            corners.push(key.iter().map(|c| c * per).collect());
            corners.len() - 1
        });
        of_point.push(id);
    }
    Ok(Cells { of_point, corners })
}

/// Local `L^u` norms of `values` over `{(m + y)/2^{j−M}: |y| ≤ radius}` for every cell pair,
/// indexed `[c1 * cells2 + c2]`.
fn local_norms(
    values: &[C64],
    grid: &Grid,
    group: &Grid,
    sides: [f64; 2],
    cells: [&Cells; 2],
    u: f64,
    radius: f64,
) -> Vec<f64> {
    let n = group.dims();
    let h = grid.spacing();
    let powered: Vec<f64> = values.iter().map(|z| z.norm().powf(u)).collect();
    // integer offsets with |y| ≤ radius, y = offset·h/side per group
    let reach: Vec<i64> = sides.iter().map(|s| (radius * s / h).floor() as i64).collect();
    let mut offsets: Vec<Vec<i64>> = Vec::new();
    let mut cur = vec![0i64; 2 * n];
    let bound = radius * radius;
    fn rec(a: usize, cur: &mut Vec<i64>, n: usize, reach: &[i64], h: f64, sides: [f64; 2], bound: f64, out: &mut Vec<Vec<i64>>) {
        if a == cur.len() {
            let r2: f64 = cur
                .iter()
                .enumerate()
                .map(|(i, &o)| (o as f64 * h / sides[i / n]).powi(2))
                .sum();
            if r2 <= bound {
                out.push(cur.clone());
            }
            return;
        }
        let g = a / n;
        for o in -reach[g]..=reach[g] {
            cur[a] = o;
            rec(a + 1, cur, n, reach, h, sides, bound, out);
        }
    }
    rec(0, &mut cur, n, &reach, h, sides, bound, &mut offsets);
    let jac = h.powi(2 * n as i32) / (sides[0].powi(n as i32) * sides[1].powi(n as i32));
    let mut out = Vec::with_capacity(cells[0].corners.len() * cells[1].corners.len());
    let mut idx = vec![0usize; 2 * n];
    for c1 in &cells[0].corners {
        for c2 in &cells[1].corners {
            let mut acc = 0.0;
            for o in &offsets {
                for a in 0..2 * n {
                    let corner = if a < n { c1[a] } else { c2[a - n] };
                    idx[a] = grid.wrap_index(corner + o[a]);
                }
                acc += powered[grid.flatten(&idx)];
            }
            out.push((acc * jac).powf(1.0 / u));
        }
    }
    out
}

/// Hybrid square/maximal function of `F` on `n + n` axes with filters from `bank`
/// (built on the `n`-axis grid of one parameter).
pub fn hybrid(f: &GridFunction, spec: &HybridSpec, bank: &FilterBank) -> Result<HybridOutput> {
    let grid = f.grid();
    let group = bank.grid();
    if f.domain() != Domain::Spatial {
        return Err(structural("hybrid operators act on spatial samples"));
    }
    if grid.dims() != 2 * group.dims()
        || grid.points_per_axis() != group.points_per_axis()
        || grid.period() != group.period()
    {
        return Err(structural("input grid must be the square of the bank grid"));
    }
    let n = group.dims();
    let radius = spec.radius.unwrap_or(6.0 * (n as f64).sqrt());
    let mut spectrum = f.samples().to_vec();
    fft_nd(&mut spectrum, grid.points_per_axis(), grid.dims(), Direction::Forward);

    let scales: Vec<i32> = bank.scales().collect();
    let squares = spec.kind.squares();
    let pick = |sq: bool, j: i32| -> &GridFunction {
        if sq {
            bank.psi_hat(j).expect("scale in range")
        } else {
            bank.phi_hat(j).expect("scale in range")
        }
    };
    let side = |j: i32, m: u32| 2f64.powi(m as i32 - j);
    let group_cells: Vec<Vec<Cells>> = (0..2)
        .map(|g| scales.iter().map(|&j| cells(group, side(j, spec.shift[g]))).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    let half = group.len();
    // inner[j] accumulates the second-parameter combination for fixed j
    let mut total = vec![0.0f64; grid.len()];
    for (ji, &j) in scales.iter().enumerate() {
        let mut inner = vec![0.0f64; grid.len()];
        for (ki, &k) in scales.iter().enumerate() {
            let g = filtered(&spectrum, grid, pick(squares[0], j), pick(squares[1], k));
            let c = [&group_cells[0][ji], &group_cells[1][ki]];
            let norms = local_norms(&g, grid, group, [side(j, spec.shift[0]), side(k, spec.shift[1])], c, spec.u, radius);
            let cells2 = c[1].corners.len();
            for (flat, slot) in inner.iter_mut().enumerate() {
                let v = norms[c[0].of_point[flat / half] * cells2 + c[1].of_point[flat % half]];
                if squares[1] {
                    *slot += v * v;
                } else {
                    *slot = slot.max(v);
                }
            }
        }
        for (t, v) in total.iter_mut().zip(&inner) {
            let v = if squares[1] { v.sqrt() } else { *v };
            if squares[0] {
                *t += v * v;
            } else {
                *t = t.max(v);
            }
        }
    }
    let samples = total
        .into_iter()
        .map(|v| C64::new(if squares[0] { v.sqrt() } else { v }, 0.0))
        .collect();
    let value = GridFunction::new(grid.clone(), samples, Domain::Spatial)?;
    Ok(HybridOutput {
        value,
        out_of_band: out_of_band(&spectrum, bank),
    })
}

fn out_of_band(spectrum: &[C64], bank: &FilterBank) -> f64 {
    let group = bank.grid();
    let half = group.len();
    let mut cover = vec![0.0f64; half];
    for j in bank.scales() {
        for (c, z) in cover.iter_mut().zip(bank.psi_hat(j).expect("scale in range").samples()) {
            *c += z.re;
        }
    }
    let mut all = 0.0;
    let mut miss = 0.0;
    for (flat, z) in spectrum.iter().enumerate() {
        let e = z.norm_sqr();
        all += e;
        miss += e * (1.0 - cover[flat / half] * cover[flat % half]).powi(2);
    }
    if all == 0.0 {
        0.0
    } else {
        (miss / all).sqrt()
    }
}

/// Growth of `max_F ‖H_{M⃗} F‖_p / ‖F‖_p` in `M₁ + M₂`, fitted on a log₂ scale and
/// compared with the slope `n(1/p₀ − 1/u)`.
pub fn hybrid_growth_scan(
    samples: &[GridFunction],
    base: &HybridSpec,
    bank: &FilterBank,
    p: f64,
    p0: f64,
    shifts: &[[u32; 2]],
) -> Result<ScalingReport> {
    if !(p0 >= 1.0 && p0 < base.u.min(p)) && base.u > 1.0 {
        return Err(param(format!("need 1 ≤ p₀ < min(u, p), got p₀ = {p0}")));
    }
    if shifts.len() < 3 {
        return Err(Error::Fit(format!("{} shift values", shifts.len())));
    }
    if samples.is_empty() {
        return Err(param("need at least one sample"));
    }
    let start = Instant::now();
    let n = bank.grid().dims() as f64;
    let mut points = Vec::with_capacity(shifts.len());
    for &shift in shifts {
        let spec = HybridSpec { shift, ..base.clone() };
        let mut best = 0.0f64;
        for f in samples {
            let out = hybrid(f, &spec, bank)?;
            let ratio = lp_norm(&out.value, NormSpec::lebesgue(p))? / lp_norm(f, NormSpec::lebesgue(p))?;
            best = best.max(ratio);
        }
        points.push(((shift[0] + shift[1]) as f64, best.log2()));
    }
    let predicted = if base.u == 1.0 { 0.0 } else { n * (1.0 / p0 - 1.0 / base.u) };
    ScalingReport::from_points(
        format!("hybrid {:?} u={} p={}", base.kind, base.u, p),
        &points,
        false,
        Some(predicted),
        "hybrid operator shift growth 2^{(M1+M2) n (1/p0 - 1/u)}",
        0.15,
        Comparison::AtMost,
        start.elapsed().as_secs_f64(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filters::build_dyadic_bank;
    use crate::norms::gaussian_field;
    use proptest::prelude::*;

    fn brute_cubes(f: &[f64], n: usize, r: f64) -> Vec<f64> {
        // 1-D, every periodic window of every length
        (0..n)
            .map(|x| {
                let mut best = 0.0f64;
                for w in 1..=n {
                    for s in 0..n {
                        let inside = (x + n - s) % n < w;
                        if inside {
                            let mean = (0..w).map(|t| f[(s + t) % n].powf(r)).sum::<f64>() / w as f64;
                            best = best.max(mean);
                        }
                    }
                }
                best.powf(1.0 / r)
            })
            .collect()
    }

    #[test]
    fn indicator_matches_window_enumeration() {
        let g = Grid::new(1, 32, 32.0).unwrap();
        // dyadic interval [8, 16) in grid units
        let f = GridFunction::from_spatial_fn(&g, |x| {
            let i = (x[0] + 16.0).rem_euclid(32.0);
            C64::new(if (8.0..16.0).contains(&i) { 1.0 } else { 0.0 }, 0.0)
        });
        let out = maximal(&f, &RectangleFamily::cubes(&g), 1.0).unwrap();
        let vals: Vec<f64> = f.samples().iter().map(|z| z.re).collect();
        let want = brute_cubes(&vals, 32, 1.0);
        for (a, b) in out.samples().iter().zip(&want) {
            assert_eq!(a.re, *b);
        }
    }

    #[test]
    fn trailing_max_is_cyclic() {
        let mut v = vec![5.0, 1.0, 2.0, 0.0, 3.0];
        trailing_max(&mut v, 2);
        assert_eq!(v, vec![5.0, 5.0, 2.0, 2.0, 3.0]);
        let mut v = vec![1.0, 2.0, 3.0];
        trailing_max(&mut v, 3);
        assert_eq!(v, vec![3.0, 3.0, 3.0]);
    }

    #[test]
    fn constants_are_fixed() {
        let g = Grid::new(2, 8, 1.0).unwrap();
        let f = GridFunction::constant(&g, C64::new(0.0, -2.5));
        for fam in [RectangleFamily::cubes(&g), RectangleFamily::rectangles(&g)] {
            for r in [0.5, 1.0, 2.0] {
                let out = maximal(&f, &fam, r).unwrap();
                assert!(out.samples().iter().all(|z| (z.re - 2.5).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn family_must_hold_single_cell() {
        let g = Grid::new(1, 8, 1.0).unwrap();
        let fam = RectangleFamily { kind: FamilyKind::Cubes, sides: vec![(2, 8)] };
        let f = GridFunction::zeros(&g, Domain::Spatial);
        assert!(matches!(maximal(&f, &fam, 1.0), Err(Error::Structural(_))));
    }

    fn random_field(g: &Grid, seed: u64) -> GridFunction {
        gaussian_field(g, g.nyquist(), seed, 0)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn dominates_and_scales(seed in 0u64..1000, c in -3.0f64..3.0, r in 0.5f64..3.0) {
            let g = Grid::new(2, 8, 2.0).unwrap();
            let f = random_field(&g, seed);
            let fam = RectangleFamily::rectangles(&g);
            let m = maximal(&f, &fam, r).unwrap();
            for (a, b) in m.samples().iter().zip(f.samples()) {
                prop_assert!(a.re >= b.norm() * (1.0 - 1e-12));
            }
            let scaled = maximal(&f.scale(C64::new(c, 0.0)), &fam, r).unwrap();
            for (a, b) in scaled.samples().iter().zip(m.samples()) {
                prop_assert!((a.re - c.abs() * b.re).abs() <= 1e-10 * (1.0 + b.re));
            }
        }

        #[test]
        fn cubes_below_rectangles(seed in 0u64..1000) {
            let g = Grid::new(2, 8, 2.0).unwrap();
            let f = random_field(&g, seed);
            let a = maximal(&f, &RectangleFamily::cubes(&g), 1.0).unwrap();
            let b = maximal(&f, &RectangleFamily::rectangles(&g), 1.0).unwrap();
            for (x, y) in a.samples().iter().zip(b.samples()) {
                prop_assert!(x.re <= y.re * (1.0 + 1e-12));
            }
        }

        #[test]
        fn power_identity(seed in 0u64..1000, r in 0.5f64..3.0) {
            let g = Grid::new(1, 16, 2.0).unwrap();
            let f = random_field(&g, seed);
            let fam = RectangleFamily::cubes(&g);
            let a = maximal(&f, &fam, r).unwrap();
            let pw = f.map(|z| C64::new(z.norm().powf(r), 0.0));
            let b = maximal(&pw, &fam, 1.0).unwrap();
            for (x, y) in a.samples().iter().zip(b.samples()) {
                prop_assert!((x.re - y.re.powf(1.0 / r)).abs() <= 1e-12 * (1.0 + x.re));
            }
        }

        #[test]
        fn monotone(seed in 0u64..1000) {
            let g = Grid::new(1, 16, 2.0).unwrap();
            let f = random_field(&g, seed);
            let bigger = f.map(|z| z * 1.5 + C64::new(z.norm() * 0.1, 0.0) * (z / z.norm().max(1e-300)));
            let fam = RectangleFamily::cubes(&g);
            let a = maximal(&f, &fam, 1.0).unwrap();
            let b = maximal(&bigger, &fam, 1.0).unwrap();
            for (x, y) in a.samples().iter().zip(b.samples()) {
                prop_assert!(x.re <= y.re * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn fefferman_stein_ratio_is_stable() {
        let g = Grid::new(1, 64, 8.0).unwrap();
        let fam = RectangleFamily::cubes(&g);
        let ratio = |seed: u64| {
            let fs: Vec<GridFunction> = (0..4).map(|i| gaussian_field(&g, 2.0, seed, i)).collect();
            let l2 = |v: &[GridFunction]| {
                let s: Vec<C64> = (0..g.len())
                    .map(|x| C64::new(v.iter().map(|f| f.samples()[x].norm_sqr()).sum::<f64>().sqrt(), 0.0))
                    .collect();
                lp_norm(&GridFunction::new(g.clone(), s, Domain::Spatial).unwrap(), NormSpec::lebesgue(3.0)).unwrap()
            };
            let ms: Vec<GridFunction> = fs.iter().map(|f| maximal(f, &fam, 1.5).unwrap()).collect();
            l2(&ms) / l2(&fs)
        };
        let rs: Vec<f64> = (0..20).map(ratio).collect();
        let max = rs.iter().cloned().fold(0.0, f64::max);
        let min = rs.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(min >= 1.0);
        assert!(max / min < 2.0, "{rs:?}");
    }

    fn hybrid_setup(n: usize, period: f64) -> (Grid, FilterBank) {
        let group = Grid::new(1, n, period).unwrap();
        let j_max = group.nyquist().log2().floor() as i32;
        let j_min = -(period.log2().round() as i32);
        let bank = build_dyadic_bank(&group, j_min, j_max, 1).unwrap();
        (group.with_dims(2).unwrap(), bank)
    }

    /// Direct reading of the definition: loops over scales, cells, and every grid point
    /// with its periodic images.
    fn brute_hybrid(f: &GridFunction, spec: &HybridSpec, bank: &FilterBank) -> Vec<f64> {
        let grid = f.grid();
        let n = grid.points_per_axis();
        let h = grid.spacing();
        let p = grid.period();
        let spec_f = f.to_spectral();
        let sq = spec.kind.squares();
        let filt = |sq: bool, j: i32| if sq { bank.psi_hat(j).unwrap().clone() } else { bank.phi_hat(j).unwrap().clone() };
        let radius = 6.0;
        let scales: Vec<i32> = bank.scales().collect();
        let coords: Vec<f64> = (0..n).map(|i| grid.coord(i)).collect();
        let mut powered = std::collections::BTreeMap::new();
        for &j in &scales {
            for &k in &scales {
                let a = filt(sq[0], j);
                let b = filt(sq[1], k);
                let gs: Vec<C64> = spec_f
                    .samples()
                    .iter()
                    .enumerate()
                    .map(|(i, z)| z * a.samples()[i / n] * b.samples()[i % n])
                    .collect();
                let g = GridFunction::new(grid.clone(), gs, Domain::Spectral).unwrap().to_spatial();
                let pw: Vec<f64> = g.samples().iter().map(|z| z.norm().powf(spec.u)).collect();
                powered.insert((j, k), pw);
            }
        }
        let mut out = vec![0.0; grid.len()];
        for x in 0..grid.len() {
            let (x1, x2) = (coords[x / n], coords[x % n]);
            let mut outer_acc = 0.0f64;
            for &j in &scales {
                let mut inner_acc = 0.0f64;
                for &k in &scales {
                    let pw = &powered[&(j, k)];
                    let s1 = 2f64.powi(spec.shift[0] as i32 - j);
                    let s2 = 2f64.powi(spec.shift[1] as i32 - k);
                    let m1 = (x1 / s1).floor();
                    let m2 = (x2 / s2).floor();
                    let mut acc = 0.0;
                    let reps1 = ((radius + 1.0) * s1 / p).ceil() as i64 + 2;
                    let reps2 = ((radius + 1.0) * s2 / p).ceil() as i64 + 2;
                    for z in 0..grid.len() {
                        for a1 in -reps1..=reps1 {
                            for a2 in -reps2..=reps2 {
                                let z1 = coords[z / n] + a1 as f64 * p;
                                let z2 = coords[z % n] + a2 as f64 * p;
                                let y1 = z1 / s1 - m1;
                                let y2 = z2 / s2 - m2;
                                if y1 * y1 + y2 * y2 <= radius * radius {
                                    acc += pw[z] * h * h / (s1 * s2);
                                }
                            }
                        }
                    }
                    let v = acc.powf(1.0 / spec.u);
                    if sq[1] {
                        inner_acc += v * v;
                    } else {
                        inner_acc = inner_acc.max(v);
                    }
                }
                let v = if sq[1] { inner_acc.sqrt() } else { inner_acc };
                if sq[0] {
                    outer_acc += v * v;
                } else {
                    outer_acc = outer_acc.max(v);
                }
            }
            out[x] = if sq[0] { outer_acc.sqrt() } else { outer_acc };
        }
        out
    }

    #[test]
    fn hybrid_matches_definition_brute_force() {
        let (grid, bank) = hybrid_setup(16, 8.0);
        let f = gaussian_field(&grid, 0.9, 3, 0);
        for kind in HybridKind::ALL {
            let spec = HybridSpec::new(kind, [1, 0], 1.5).unwrap();
            let fast = hybrid(&f, &spec, &bank).unwrap();
            let slow = brute_hybrid(&f, &spec, &bank);
            for (a, b) in fast.value.samples().iter().zip(&slow) {
                assert!((a.re - b).abs() <= 1e-9 * b.abs().max(1e-300), "{kind:?}: {} vs {b}", a.re);
            }
        }
    }

    #[test]
    fn hybrid_of_zero_is_zero() {
        let (grid, bank) = hybrid_setup(16, 8.0);
        let f = GridFunction::zeros(&grid, Domain::Spatial);
        for kind in HybridKind::ALL {
            let out = hybrid(&f, &HybridSpec::new(kind, [2, 1], 2.0).unwrap(), &bank).unwrap();
            assert!(out.value.samples().iter().all(|z| z.re == 0.0));
        }
    }

    #[test]
    fn square_function_uniform_in_shift() {
        let (grid, bank) = hybrid_setup(32, 16.0);
        let f = gaussian_field(&grid, 0.9, 11, 0);
        let norm = |m: u32| {
            let out = hybrid(&f, &HybridSpec::new(HybridKind::SS, [m, m], 1.0).unwrap(), &bank).unwrap();
            lp_norm(&out.value, NormSpec::lebesgue(2.0)).unwrap() / lp_norm(&f, NormSpec::lebesgue(2.0)).unwrap()
        };
        let rs: Vec<f64> = (0..4).map(norm).collect();
        let max = rs.iter().cloned().fold(0.0, f64::max);
        let min = rs.iter().cloned().fold(f64::INFINITY, f64::min);
        assert!(max / min < 3.0, "{rs:?}");
    }

    #[test]
    fn growth_scan_reports_slopes() {
        let (grid, bank) = hybrid_setup(16, 8.0);
        let fs: Vec<GridFunction> = (0..2).map(|s| gaussian_field(&grid, 0.9, s, 0)).collect();
        let shifts = [[0, 0], [1, 0], [1, 1], [2, 1]];
        let base = HybridSpec::new(HybridKind::SS, [0, 0], 2.0).unwrap();
        let rep = hybrid_growth_scan(&fs, &base, &bank, 2.0, 1.0, &shifts).unwrap();
        assert_eq!(rep.predicted_slope, Some(0.5));
        assert!(rep.fitted_slope <= 0.65, "{}", rep.fitted_slope);
        assert!(hybrid_growth_scan(&fs, &base, &bank, 2.0, 1.0, &shifts[..2]).is_err());
    }
}
