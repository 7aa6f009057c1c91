// SPDX-License-Identifier: Apache-2.0
//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::time::Instant;

use hmlab::counterexamples::{bessel_norm_dichotomy, default_log10_radii, Convergence, NormSide, TensorBumpFamily};
use hmlab::experiment::{hybrid_grid, paraproduct_gap, paraproduct_test_symbol, random_in_band, tensor_point, TensorPoint};
use hmlab::filters::FilterBank;
use hmlab::grid::{lp_norm, next_pow2, Domain, Grid, GridFunction, NormSpec, C64};
use hmlab::maximal::{hybrid, hybrid_growth_scan, HybridKind, HybridSpec};
use hmlab::multiplier::{apply_multilinear, paraproduct_pieces};
use hmlab::norms::gaussian_field;
use hmlab::region::{consistency_scan, hull_identity_check, sb_membership, Subset};
use hmlab::selfcheck;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LADDER: [usize; 4] = [16, 32, 64, 128];
const PERIOD_PER_N: f64 = 1024.0;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

/// Ordinary least squares slope of `ln y` against `ln x`.
fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

fn rel_l2(a: &GridFunction, b: &GridFunction) -> f64 {
    let diff = lp_norm(&a.sub(b).unwrap(), NormSpec::lebesgue(2.0)).unwrap();
    diff / lp_norm(b, NormSpec::lebesgue(2.0)).unwrap()
}

/// `∫ φ(ξ) e^{2πiξy} dξ` for an even real profile, by composite Simpson on its support.
fn inverse_transform(profile: impl Fn(f64) -> f64, outer: f64, y: f64) -> f64 {
    let panels = 400;
    let h = outer / panels as f64;
    let f = |xi: f64| profile(xi) * (2.0 * PI * xi * y).cos();
    let mut acc = f(0.0) + f(outer);
    for i in 1..panels {
        acc += f(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    2.0 * acc * h / 3.0
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let n = 64;
    let fam = TensorBumpFamily::new(n, 0, 2).unwrap();
    let period = PERIOD_PER_N * n as f64;
    let grid = Grid::new(1, next_pow2((2.1 * period).ceil() as usize), period).unwrap();
    let fs = fam.test_functions(&grid).unwrap();
    let out = apply_multilinear(&fam.multiplier().unwrap(), &fs, false).unwrap();
    let out = out.to_spatial();
    let secs = start.elapsed().as_secs_f64();

    // #E_0^N for l = 2: j_1 ∈ 1..N−1.
    let count = (n - 1) as f64;
    let varphi = fam.varphi;
    let mut cache = BTreeMap::new();
    let closed = GridFunction::from_spatial_fn(&grid, |x| {
        let y = x[0] / n as f64;
        let v = *cache
            .entry(y.to_bits())
            .or_insert_with(|| inverse_transform(|z| varphi.eval(z), varphi.outer, y));
        C64::from_polar(count / (n * n) as f64 * v * v, 2.0 * PI * x[0])
    });
    let err = rel_l2(&out, &closed);
    outcome(
        err <= 0.01 && secs < 10.0,
        format!("relative L2 error {err:.2e} (limit 1e-2), engine {secs:.1} s"),
    )
}

fn ladder_points(ladder: &[usize], k: usize, p: &[f64], pairs: &[(f64, f64)]) -> Vec<TensorPoint> {
    ladder.iter().map(|&n| tensor_point(n, k, p, pairs, PERIOD_PER_N).unwrap()).collect()
}

fn ns(points: &[TensorPoint]) -> Vec<f64> {
    points.iter().map(|pt| pt.n as f64).collect()
}

/// Symbol-norm pairs `(s, u)` shared by criteria 4 and 5 on the `l = 2` ladder.
const PAIRS: [(f64, f64); 6] = [(1.0, 2.0), (1.5, 2.0), (1.0, 1.5), (1.5, 1.5), (0.2, 2.0), (0.8, 2.0)];

struct Families {
    l2: Vec<TensorPoint>,
    l2_secs: f64,
    l3k0: Vec<TensorPoint>,
    l3k0_secs: f64,
    l3k1: Vec<TensorPoint>,
    l3k1_secs: f64,
}

fn families() -> Families {
    let t = Instant::now();
    let l2 = ladder_points(&LADDER, 0, &[2.0, 2.0], &PAIRS);
    let l2_secs = t.elapsed().as_secs_f64();
    let t = Instant::now();
    let l3k0 = ladder_points(&LADDER, 0, &[3.0; 3], &[]);
    let l3k0_secs = t.elapsed().as_secs_f64();
    // k = 1 needs 3 | N.
    let t = Instant::now();
    let l3k1 = ladder_points(&[15, 30, 60, 120], 1, &[3.0; 3], &[]);
    let l3k1_secs = t.elapsed().as_secs_f64();
    Families { l2, l2_secs, l3k0, l3k0_secs, l3k1, l3k1_secs }
}

fn criterion_2(f: &Families) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (label, pts, k, p, secs) in [
        ("(2,0,(2,2))", &f.l2, 0, &[2.0, 2.0][..], f.l2_secs),
        ("(3,0,(3,3,3))", &f.l3k0, 0, &[3.0; 3][..], f.l3k0_secs),
        ("(3,1,(3,3,3))", &f.l3k1, 1, &[3.0; 3][..], f.l3k1_secs),
    ] {
        let p_inv: f64 = p.iter().map(|v| 1.0 / v).sum();
        let target = p_inv - k as f64 - 1.0;
        let slope = loglog_slope(&ns(pts), &pts.iter().map(|pt| pt.output_norm).collect::<Vec<_>>());
        let pass = (slope - target).abs() <= 0.15 && secs < 60.0;
        ok &= pass;
        parts.push(format!("{label} slope {slope:.3} vs {target:.3}, {secs:.1} s"));
    }
    outcome(ok, parts.join("; "))
}

fn criterion_3(f: &Families) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (label, pts, k, p) in [("l=2,k=0", &f.l2, 0, 2.0), ("l=3,k=0", &f.l3k0, 0, 3.0), ("l=3,k=1", &f.l3k1, 1, 3.0)] {
        let l = pts[0].testfn_norms.len();
        for i in 0..l {
            let target = if i < k { 1.0 / p - 1.0 } else { 0.0 };
            let ys: Vec<f64> = pts.iter().map(|pt| pt.testfn_norms[i]).collect();
            let slope = loglog_slope(&ns(pts), &ys);
            let pass = (slope - target).abs() <= 0.1;
            ok &= pass;
            parts.push(format!("{label} f{} {slope:.3} vs {target:.3}", i + 1));
        }
    }
    outcome(ok, parts.join("; "))
}

fn criterion_4(f: &Families) -> Outcome {
    let mut ok = true;
    let mut parts = Vec::new();
    for (which, &(s, u)) in PAIRS.iter().enumerate().take(4) {
        let ys: Vec<f64> = f.l2.iter().map(|pt| pt.a_norms[which]).collect();
        let slope = loglog_slope(&ns(&f.l2), &ys);
        let bound = s - 1.0 / u + 0.2;
        ok &= slope <= bound;
        parts.push(format!("s={s},u={u} slope {slope:.3} <= {bound:.3}"));
    }
    outcome(ok, parts.join("; "))
}

fn ratios(points: &[TensorPoint], which: usize) -> Vec<f64> {
    points
        .iter()
        .map(|pt| pt.output_norm / (pt.a_norms[which] * pt.testfn_norms.iter().product::<f64>()))
        .collect()
}

fn criterion_5(f: &Families) -> Outcome {
    // l = 2, k = 0, p = (2, 2), u = 2: the threshold 1/p + 1/u − 1 is 1/2.
    let fam = TensorBumpFamily::new(16, 0, 2).unwrap();
    let threshold = fam.prediction(&[0.5, 0.5]).unwrap().threshold(2.0);
    let below = PAIRS.iter().position(|&(s, u)| u == 2.0 && (s - (threshold - 0.3)).abs() < 1e-12);
    let above = PAIRS.iter().position(|&(s, u)| u == 2.0 && (s - (threshold + 0.3)).abs() < 1e-12);
    let (Some(below), Some(above)) = (below, above) else {
        return outcome(false, format!("threshold {threshold} has no ±0.3 pairs on the ladder"));
    };
    let rb = ratios(&f.l2, below);
    let ra = ratios(&f.l2, above);
    let increasing = rb.windows(2).all(|w| w[1] > w[0]);
    let non_increasing = ra[1..].windows(2).all(|w| w[1] <= w[0]);
    let fmt = |v: &[f64]| v.iter().map(|r| format!("{r:.3e}")).collect::<Vec<_>>().join(" ");
    outcome(
        increasing && non_increasing,
        format!("threshold {threshold}; below [{}]; above [{}]", fmt(&rb), fmt(&ra)),
    )
}

/// Convergence of the kernel (`c = dim/u`) or transform (`c = dim/u'`) in `L^u`.
fn expected(t: f64, gamma: f64, dim: usize, u: f64, side: NormSide) -> Convergence {
    let c = match side {
        NormSide::Kernel => dim as f64 / u,
        NormSide::Transform => dim as f64 * (1.0 - 1.0 / u),
    };
    let on_line = (t - c).abs() < 1e-12;
    if t > c + 1e-12 || (on_line && gamma > 2.0 / u + 1e-12) {
        Convergence::Convergent
    } else {
        Convergence::Divergent
    }
}

fn criterion_6() -> Outcome {
    let radii = default_log10_radii();
    let mut wrong = Vec::new();
    let mut cases = 0;
    let mut slowest: f64 = 0.0;
    for (dim, u) in [(1, 2.0), (2, 3.0)] {
        for side in [NormSide::Kernel, NormSide::Transform] {
            let start = Instant::now();
            let c = match side {
                NormSide::Kernel => dim as f64 / u,
                NormSide::Transform => dim as f64 * (1.0 - 1.0 / u),
            };
            for t in [c - 0.25, c, c + 0.5] {
                for gamma in [1.0 / u, 2.0 / u, 3.0 / u] {
                    cases += 1;
                    let got = bessel_norm_dichotomy(t, gamma, dim, u, side, &radii).unwrap().verdict;
                    let want = expected(t, gamma, dim, u, side);
                    if got != want {
                        wrong.push(format!("dim={dim} u={u} {side:?} t={t:.3} γ={gamma:.3}: {got:?}"));
                    }
                }
            }
            slowest = slowest.max(start.elapsed().as_secs_f64());
        }
    }
    outcome(
        wrong.is_empty() && slowest < 5.0,
        format!(
            "{cases} cases on four 3x3 grids, {} misclassified {wrong:?}, slowest grid {slowest:.2} s",
            wrong.len()
        ),
    )
}

fn squares(kind: HybridKind) -> [bool; 2] {
    match kind {
        HybridKind::SS => [true, true],
        HybridKind::MS => [false, true],
        HybridKind::SM => [true, false],
        HybridKind::MM => [false, false],
    }
}

/// Direct reading of the hybrid definition: loops over scales, cells, and every
/// grid point with its periodic images.
fn brute_hybrid(f: &GridFunction, spec: &HybridSpec, bank: &FilterBank) -> Vec<f64> {
    let grid = f.grid();
    let n = grid.points_per_axis();
    let h = grid.spacing();
    let p = grid.period();
    let spec_f = f.to_spectral();
    let sq = squares(spec.kind);
    let filt = |sq: bool, j: i32| if sq { bank.psi_hat(j).unwrap().clone() } else { bank.phi_hat(j).unwrap().clone() };
    let radius = 6.0;
    let scales: Vec<i32> = bank.scales().collect();
    let coords: Vec<f64> = (0..n).map(|i| grid.coord(i)).collect();
    let mut powered = BTreeMap::new();
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
                            let y1 = (coords[z / n] + a1 as f64 * p) / s1 - m1;
                            let y2 = (coords[z % n] + a2 as f64 * p) / s2 - m2;
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

fn criterion_7() -> Outcome {
    let (grid, bank) = hybrid_grid(16, 8.0).unwrap();
    let f = gaussian_field(&grid, 0.9, 3, 0);
    let mut worst: f64 = 0.0;
    for kind in HybridKind::ALL {
        let spec = HybridSpec::new(kind, [1, 0], 1.5).unwrap();
        let fast = hybrid(&f, &spec, &bank).unwrap();
        let slow = brute_hybrid(&f, &spec, &bank);
        for (a, b) in fast.value.samples().iter().zip(&slow) {
            worst = worst.max((a.re - b).abs() / b.abs().max(1e-300));
        }
    }
    let oracle_ok = worst <= 1e-9;

    let (grid2, bank2) = hybrid_grid(32, 16.0).unwrap();
    let g = gaussian_field(&grid2, 0.9, 11, 0);
    let g_norm = lp_norm(&g, NormSpec::lebesgue(2.0)).unwrap();
    let mut rs = Vec::new();
    for m1 in 0..=3 {
        for m2 in 0..=3 {
            let out = hybrid(&g, &HybridSpec::new(HybridKind::SS, [m1, m2], 1.0).unwrap(), &bank2).unwrap();
            rs.push(lp_norm(&out.value, NormSpec::lebesgue(2.0)).unwrap() / g_norm);
        }
    }
    let spread = rs.iter().cloned().fold(0.0, f64::max) / rs.iter().cloned().fold(f64::INFINITY, f64::min);
    let uniform_ok = spread <= 3.0;

    let samples: Vec<GridFunction> = (0..2).map(|s| gaussian_field(&grid, 0.9, 5, s)).collect();
    let base = HybridSpec::new(HybridKind::SS, [0, 0], 2.0).unwrap();
    let shifts = [[0, 0], [1, 0], [1, 1], [2, 1], [2, 2], [3, 2], [3, 3]];
    let (dim, p0, u) = (1.0, 1.0, 2.0);
    let rep = hybrid_growth_scan(&samples, &base, &bank, 2.0, p0, &shifts).unwrap();
    let bound = dim * (1.0 / p0 - 1.0 / u) + 0.15;
    let growth_ok = rep.fitted_slope <= bound;
    outcome(
        oracle_ok && uniform_ok && growth_ok,
        format!(
            "brute-force gap {worst:.1e} (limit 1e-9); SS(1) spread {spread:.2} over 16 shifts (limit 3); \
             growth slope {:.3} <= {bound:.2}",
            rep.fitted_slope
        ),
    )
}

fn criterion_8() -> Outcome {
    let n = 16;
    let period = 8.0;
    let grid = Grid::new(2, n, period).unwrap();
    let j_max = grid.nyquist().log2().floor() as i32;
    let bank = FilterBank::new(&grid.with_dims(1).unwrap(), -(period.log2().round() as i32), j_max, 2).unwrap();
    let m = paraproduct_test_symbol().unwrap();
    let f = random_in_band(&grid, &bank, 1);
    let pieces = paraproduct_pieces(&m, &f, &f, &bank).unwrap().len();
    let worst = (0..20u64)
        .map(|seed| paraproduct_gap(&grid, &bank, &m, seed + 100).unwrap())
        .fold(0.0, f64::max);
    outcome(
        pieces == 9 && worst <= 1e-9,
        format!("{pieces} pieces, worst relative gap {worst:.2e} over 20 pairs (limit 1e-9)"),
    )
}

fn criterion_9() -> Outcome {
    let start = Instant::now();
    let l = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut disagreements = 0;
    let draws = 100_000;
    for _ in 0..draws {
        let x: Vec<f64> = (0..l).map(|_| rng.gen_range(0.0..1.0)).collect();
        let u = rng.gen_range(1.05..3.0);
        let s = rng.gen_range(0.0..3.0);
        for b in Subset::all(l) {
            let m = sb_membership(&x, b, s, u);
            if (m.in_rb && m.in_qs) != m.in_sb {
                disagreements += 1;
            }
        }
    }
    let mut hull_failures = 0;
    let mut hull_samples = 0;
    let cases: [(&[usize], f64, f64); 4] = [(&[], 1.75, 2.0), (&[1], 2.1, 1.5), (&[2], 1.6, 2.0), (&[1, 3], 2.5, 1.25)];
    for (i, (b, s, u)) in cases.iter().enumerate() {
        let rep = hull_identity_check(Subset::from_indices(b), *s, *u, l, 10_000, 7 + i as u64).unwrap();
        hull_failures += rep.failures.len();
        hull_samples += rep.hull_samples.min(rep.containment_samples);
    }
    let scan = consistency_scan(l, 1, 3.0, 4.0, 50_000, 99).unwrap();
    let secs = start.elapsed().as_secs_f64();
    outcome(
        disagreements == 0 && hull_failures == 0 && scan.failures.is_empty() && secs < 10.0,
        format!(
            "identity: {disagreements} disagreements in {draws} points x 8 sets; hull: {hull_failures} failures, \
             >= {hull_samples} samples over {} cases; consistency: {} failures ({} on boundary) in {}; {secs:.1} s",
            cases.len(),
            scan.failures.len(),
            scan.boundary,
            scan.samples
        ),
    )
}

fn criterion_10() -> Outcome {
    let start = Instant::now();
    let checks = selfcheck::run_all().unwrap();
    let secs = start.elapsed().as_secs_f64();
    let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
    let summary: Vec<String> = checks.iter().map(|c| format!("{} {:.1e}", c.name, c.value)).collect();
    outcome(
        failed.is_empty() && secs < 300.0,
        format!("{} failed {failed:?}; {}; {secs:.1} s", failed.len(), summary.join(", ")),
    )
}

fn main() {
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut record = |id: u32, name: &'static str, o: Outcome| {
        println!("{} criterion {id} {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
        results.push((id, name, o));
    };
    record(1, "closed_form_oracle", criterion_1());
    let fams = families();
    record(2, "output_norm_scaling", criterion_2(&fams));
    record(3, "test_function_norms", criterion_3(&fams));
    record(4, "symbol_norm_scaling", criterion_4(&fams));
    record(5, "sharpness_divergence", criterion_5(&fams));
    record(6, "bessel_dichotomy", criterion_6());
    record(7, "hybrid_operators", criterion_7());
    record(8, "paraproduct_completeness", criterion_8());
    record(9, "region_geometry", criterion_9());
    record(10, "core_invariants", criterion_10());
    let failed = results.iter().filter(|r| !r.2.passed).count();
    println!("acceptance: {} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
