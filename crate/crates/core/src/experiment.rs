// SPDX-License-Identifier: Apache-2.0
//! Configured experiments: parsing, budget estimates, execution and report files.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::counterexamples::{
    bessel_multiplier, bessel_norm_dichotomy, default_log10_radii, BesselFamily, BesselMode, Convergence, NormSide,
    TensorBumpFamily,
};
use crate::error::{Error, Result};
use crate::filters::{build_dyadic_bank, FilterBank, WindowKind};
use crate::grid::{lp_norm, next_pow2, Domain, Grid, GridFunction, NormSpec, C64};
use crate::harness::{write_atomic, Comparison, ScalingReport, Verdict};
use crate::maximal::{hybrid_growth_scan, HybridKind, HybridSpec};
use crate::multiplier::{
    apply_multilinear, localize_symbol, paraproduct_pieces, shell_decompose, MultiplierRep, ProductShape,
};
use crate::norms::{a_norm_report, gaussian_field, operator_norm_lower_bound, ANormOptions, KRange, RandomTrials, SobolevSpec};
use crate::region::{consistency_scan, hull_identity_check, Subset};

pub const SCHEMA_VERSION: u32 = 1;

/// Default cap on the projected runtime of one experiment.
pub const DEFAULT_BUDGET_SECS: f64 = 900.0;

/// Environment variable holding the worker count for ladder points.
pub const THREADS_ENV: &str = "HMLAB_THREADS";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    TensorScaling,
    BesselDichotomy,
    HybridGrowth,
    ParaproductConsistency,
    RegionScan,
    ShellDecay,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::TensorScaling => "tensor_scaling",
            ExperimentKind::BesselDichotomy => "bessel_dichotomy",
            ExperimentKind::HybridGrowth => "hybrid_growth",
            ExperimentKind::ParaproductConsistency => "paraproduct_consistency",
            ExperimentKind::RegionScan => "region_scan",
            ExperimentKind::ShellDecay => "shell_decay",
        }
    }
}

/// Periodic grid settings; unset fields take per-kind defaults.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSettings {
    pub points_per_axis: Option<usize>,
    pub period: Option<f64>,
    /// Tensor-bump runs: period as a multiple of `N`.
    pub period_per_n: Option<f64>,
}

/// The file format read by `run`. Kind-specific parameters stay raw until
/// [`ExperimentConfig::params`] parses them against the kind.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub kind: ExperimentKind,
    #[serde(default = "empty_object")]
    pub params: serde_json::Value,
    #[serde(default)]
    pub grid: GridSettings,
    pub seed: u64,
    /// Directory receiving `<kind>.csv` and `<kind>.json`; nothing is written when unset.
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub budget_secs: Option<f64>,
}

fn empty_object() -> serde_json::Value {
    serde_json::Value::Object(Default::default())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SymbolNormParams {
    pub s: Vec<f64>,
    pub u: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorScalingParams {
    pub l: usize,
    pub k: usize,
    /// Exponents `p_i`, one per argument.
    pub p: Vec<f64>,
    #[serde(default = "default_ladder")]
    pub ladder: Vec<usize>,
    /// Every `(s, u)` pair gets a symbol-norm slope and a sharpness ratio.
    #[serde(default)]
    pub symbol_norm: Option<SymbolNormParams>,
}

fn default_ladder() -> Vec<usize> {
    vec![16, 32, 64, 128]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BesselDichotomyParams {
    pub dim: usize,
    pub u: f64,
    pub side: NormSide,
    pub t: Vec<f64>,
    pub gamma: Vec<f64>,
    #[serde(default)]
    pub log10_radii: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HybridGrowthParams {
    pub kind: HybridKind,
    pub u: f64,
    pub p: f64,
    pub p0: f64,
    pub shifts: Vec<[u32; 2]>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default = "default_band")]
    pub band: f64,
}

fn default_samples() -> usize {
    2
}

fn default_band() -> f64 {
    0.9
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParaproductParams {
    #[serde(default = "default_pairs")]
    pub pairs: usize,
    #[serde(default = "default_para_tol")]
    pub tolerance: f64,
}

fn default_pairs() -> usize {
    20
}

fn default_para_tol() -> f64 {
    1e-9
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HullCase {
    /// One-based members of `B`.
    pub b: Vec<usize>,
    pub s: f64,
    pub u: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionScanParams {
    pub l: usize,
    #[serde(default = "one")]
    pub d: usize,
    #[serde(default = "default_u_max")]
    pub u_max: f64,
    #[serde(default = "default_s_max")]
    pub s_max: f64,
    pub samples: usize,
    #[serde(default)]
    pub hull: Vec<HullCase>,
}

fn one() -> usize {
    1
}

fn default_u_max() -> f64 {
    3.0
}

fn default_s_max() -> f64 {
    4.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ShellDecayParams {
    pub t: f64,
    pub gamma: f64,
    pub truncation: f64,
    pub m_max: u32,
    /// Smallest shell index entering the fit.
    #[serde(default = "default_fit_min")]
    pub m_fit_min: u32,
    #[serde(default = "default_samples")]
    pub trials: usize,
}

/// Shells below the scale of the frequency windows grow with M before decaying.
fn default_fit_min() -> u32 {
    4
}

/// Parsed kind-specific parameters.
#[derive(Clone, Debug, PartialEq)]
pub enum Params {
    TensorScaling(TensorScalingParams),
    BesselDichotomy(BesselDichotomyParams),
    HybridGrowth(HybridGrowthParams),
    ParaproductConsistency(ParaproductParams),
    RegionScan(RegionScanParams),
    ShellDecay(ShellDecayParams),
}

fn parse_section<T: DeserializeOwned>(section: &str, v: &serde_json::Value) -> Result<T> {
    serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("{section}: {e}")))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version: expected {SCHEMA_VERSION}, got {}",
                self.schema_version
            )));
        }
        if let Some(b) = self.budget_secs {
            if !(b > 0.0) {
                return Err(Error::Config("budget_secs: must be positive".into()));
            }
        }
        self.params().map(|_| ())
    }

    pub fn params(&self) -> Result<Params> {
        let v = &self.params;
        Ok(match self.kind {
            ExperimentKind::TensorScaling => Params::TensorScaling(parse_section("params", v)?),
            ExperimentKind::BesselDichotomy => Params::BesselDichotomy(parse_section("params", v)?),
            ExperimentKind::HybridGrowth => Params::HybridGrowth(parse_section("params", v)?),
            ExperimentKind::ParaproductConsistency => Params::ParaproductConsistency(parse_section("params", v)?),
            ExperimentKind::RegionScan => Params::RegionScan(parse_section("params", v)?),
            ExperimentKind::ShellDecay => Params::ShellDecay(parse_section("params", v)?),
        })
    }

    pub fn budget(&self) -> f64 {
        self.budget_secs.unwrap_or(DEFAULT_BUDGET_SECS)
    }
}

/// A pass/fail measurement that is not a slope.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub passed: bool,
    pub note: String,
}

impl Check {
    pub(crate) fn at_most(name: impl Into<String>, value: f64, threshold: f64, note: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            value,
            threshold,
            passed: value <= threshold,
            note: note.into(),
        }
    }

    pub(crate) fn holds(name: impl Into<String>, ok: bool, note: impl Into<String>) -> Self {
        Check {
            name: name.into(),
            value: if ok { 1.0 } else { 0.0 },
            threshold: 1.0,
            passed: ok,
            note: note.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub schema_version: u32,
    pub kind: ExperimentKind,
    pub seed: u64,
    pub estimated_secs: f64,
    pub scaling: Vec<ScalingReport>,
    pub checks: Vec<Check>,
    pub verdict: Verdict,
    pub runtime_secs: f64,
    /// Raw measurements in CSV form; the column order is fixed per kind.
    #[serde(skip)]
    pub csv: Vec<u8>,
}

impl ExperimentReport {
    fn assemble(cfg: &ExperimentConfig, estimated_secs: f64, scaling: Vec<ScalingReport>, checks: Vec<Check>, csv: Vec<u8>, start: Instant) -> Self {
        let failed = scaling.iter().any(|r| r.verdict == Verdict::Fail) || checks.iter().any(|c| !c.passed);
        let open = scaling.iter().any(|r| r.verdict == Verdict::Inconclusive);
        let verdict = if failed {
            Verdict::Fail
        } else if open || (scaling.is_empty() && checks.is_empty()) {
            Verdict::Inconclusive
        } else {
            Verdict::Pass
        };
        ExperimentReport {
            schema_version: SCHEMA_VERSION,
            kind: cfg.kind,
            seed: cfg.seed,
            estimated_secs,
            scaling,
            checks,
            verdict,
            runtime_secs: start.elapsed().as_secs_f64(),
            csv,
        }
    }
}

// ---------------------------------------------------------------------------
// Budget estimates. Rates are rough single-core figures; they only need to
// catch configurations that are far out of reach.

const SECS_PER_FLOP: f64 = 2e-9;

fn fft_cost(points: usize) -> f64 {
    let n = points as f64;
    5.0 * n * n.log2().max(1.0)
}

/// Projected single-core runtime in seconds.
pub fn estimate_secs(cfg: &ExperimentConfig) -> Result<f64> {
    let flops = match cfg.params()? {
        Params::TensorScaling(p) => {
            let period_per_n = cfg.grid.period_per_n.unwrap_or(1024.0);
            let mut total = 0.0;
            for &n in &p.ladder {
                let pts = next_pow2((2.1 * period_per_n * n as f64).ceil() as usize) as f64;
                let terms = crate::counterexamples::index_set_count(n, p.k, p.l).unwrap_or(0) as f64;
                total += (p.l as f64 + 2.0) * fft_cost(pts as usize) + 40.0 * pts + terms * 2e3 * p.l as f64;
                if let Some(sym) = &p.symbol_norm {
                    // Annulus scans sample the l-dimensional support box at 32 points per feature.
                    let side = (32.0 * n as f64).min(1e6);
                    let grid = side.powi(p.l as i32);
                    total += 3.0 * (fft_cost(grid as usize) + 60.0 * grid) * sym.s.len().max(1) as f64;
                }
            }
            total
        }
        Params::BesselDichotomy(p) => (p.t.len() * p.gamma.len()) as f64 * 5e7,
        Params::HybridGrowth(p) => {
            let n = cfg.grid.points_per_axis.unwrap_or(16);
            let pts = (n * n) as f64;
            let scales = (n as f64).log2() + 4.0;
            (p.shifts.len() * p.samples) as f64 * scales * scales * (fft_cost(n * n) + 50.0 * pts)
        }
        Params::ParaproductConsistency(p) => {
            let n = cfg.grid.points_per_axis.unwrap_or(16);
            let pairs = (n * n) as f64;
            p.pairs as f64 * 10.0 * pairs * pairs * 20.0
        }
        Params::RegionScan(p) => {
            let subsets = (1u64 << p.l.min(20)) as f64;
            p.samples as f64 * subsets * p.d as f64 * 40.0
                + p.hull.len() as f64 * p.samples as f64 * subsets * 400.0
        }
        Params::ShellDecay(p) => {
            let (n, _) = shell_grid_size(cfg, &p);
            let pts = (n * n) as f64;
            pts * 2e3 + (p.m_max as f64 + 1.0) * (fft_cost(n * n) + p.trials as f64 * pts * 30.0)
        }
    };
    Ok(flops * SECS_PER_FLOP)
}

/// Runs one configured experiment. Refuses up front, before writing anything,
/// when the projected runtime exceeds the budget.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let estimate = estimate_secs(cfg)?;
    if estimate > cfg.budget() {
        return Err(Error::Budget {
            what: format!("{} (projected runtime in ms)", cfg.kind.name()),
            needed: (estimate * 1e3).ceil() as u128,
            limit: (cfg.budget() * 1e3).floor() as u128,
        });
    }
    let start = Instant::now();
    let (scaling, checks, csv) = match cfg.params()? {
        Params::TensorScaling(p) => tensor_scaling(cfg, &p)?,
        Params::BesselDichotomy(p) => bessel_dichotomy(&p)?,
        Params::HybridGrowth(p) => hybrid_growth(cfg, &p)?,
        Params::ParaproductConsistency(p) => paraproduct_consistency(cfg, &p)?,
        Params::RegionScan(p) => region_scan(cfg, &p)?,
        Params::ShellDecay(p) => shell_decay(cfg, &p)?,
    };
    let report = ExperimentReport::assemble(cfg, estimate, scaling, checks, csv, start);
    if let Some(dir) = &cfg.output {
        write_report(dir, &report)?;
    }
    Ok(report)
}

/// Writes `<kind>.csv` and `<kind>.json` into `dir`, each atomically.
pub fn write_report(dir: &Path, report: &ExperimentReport) -> Result<()> {
    let name = report.kind.name();
    write_atomic(&dir.join(format!("{name}.csv")), &report.csv)?;
    let json = serde_json::to_vec_pretty(report)?;
    write_atomic(&dir.join(format!("{name}.json")), &json)
}

type Outcome = (Vec<ScalingReport>, Vec<Check>, Vec<u8>);

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.to_string()))
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn worker_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse().ok())
        .filter(|&n: &usize| n >= 1)
        .unwrap_or(1)
}

/// Maps `f` over `items` on up to `HMLAB_THREADS` scoped threads, keeping the order.
fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let workers = worker_count().min(items.len().max(1));
    if workers <= 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(workers);
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| {
                let f = &f;
                scope.spawn(move || part.iter().map(f).collect::<Result<Vec<R>>>())
            })
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().map_err(|_| Error::Io("worker thread panicked".into()))??);
        }
        Ok(out)
    })
}

// ---------------------------------------------------------------------------
// tensor_scaling

const OUTPUT_TOL: f64 = 0.15;
const TESTFN_TOL: f64 = 0.1;
const SYMBOL_TOL: f64 = 0.2;

/// Measurements of the tensor-bump family at one `N`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorPoint {
    pub n: usize,
    pub terms: usize,
    pub output_norm: f64,
    pub testfn_norms: Vec<f64>,
    /// One value per `(s, u)` pair, in `s`-major order.
    pub a_norms: Vec<f64>,
}

fn symbol_pairs(p: &TensorScalingParams) -> Vec<(f64, f64)> {
    p.symbol_norm
        .as_ref()
        .map(|sym| sym.s.iter().flat_map(|&s| sym.u.iter().map(move |&u| (s, u))).collect())
        .unwrap_or_default()
}

/// `‖T_m(f⃗)‖_p`, `‖f_i‖_{p_i}` and the symbol norms at one ladder point.
pub fn tensor_point(n: usize, k: usize, p: &[f64], pairs: &[(f64, f64)], period_per_n: f64) -> Result<TensorPoint> {
    let l = p.len();
    let fam = TensorBumpFamily::new(n, k, l)?;
    let m = fam.multiplier()?;
    let period = period_per_n * n as f64;
    let grid = Grid::new(1, next_pow2((2.1 * period).ceil() as usize), period)?;
    let fs = fam.test_functions(&grid)?;
    let out = apply_multilinear(&m, &fs, false)?;
    let p_out = 1.0 / p.iter().map(|v| 1.0 / v).sum::<f64>();
    let output_norm = lp_norm(&out, NormSpec::lebesgue(p_out))?;
    let testfn_norms = fs
        .iter()
        .zip(p)
        .map(|(f, &pi)| lp_norm(f, NormSpec::lebesgue(pi)))
        .collect::<Result<Vec<_>>>()?;
    let a_norms = if pairs.is_empty() {
        Vec::new()
    } else {
        let specs = pairs
            .iter()
            .map(|&(s, u)| SobolevSpec::new(vec![s], u))
            .collect::<Result<Vec<_>>>()?;
        a_norm_report(&m, &specs, &KRange::Auto, &ANormOptions::default())?.values
    };
    Ok(TensorPoint {
        n,
        terms: fam.index_set.len(),
        output_norm,
        testfn_norms,
        a_norms,
    })
}

/// `‖T_m(f⃗)‖_p / (a_norm · ∏‖f_i‖_{p_i})` along the ladder for pair `which`.
pub fn sharpness_ratios(points: &[TensorPoint], which: usize) -> Vec<f64> {
    points
        .iter()
        .map(|pt| pt.output_norm / (pt.a_norms[which] * pt.testfn_norms.iter().product::<f64>()))
        .collect()
}

fn tensor_scaling(cfg: &ExperimentConfig, p: &TensorScalingParams) -> Result<Outcome> {
    if p.p.len() != p.l {
        return Err(Error::Config(format!("params.p: need {} exponents, got {}", p.l, p.p.len())));
    }
    if p.ladder.len() < 3 || p.ladder.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Config("params.ladder: need at least 3 increasing values".into()));
    }
    let p_inv: Vec<f64> = p.p.iter().map(|v| 1.0 / v).collect();
    let prediction = TensorBumpFamily::new(p.ladder[0], p.k, p.l)?.prediction(&p_inv)?;
    let pairs = symbol_pairs(p);
    let period_per_n = cfg.grid.period_per_n.unwrap_or(1024.0);
    let mut timings = Vec::new();
    let points = par_map(&p.ladder, |&n| {
        let t = Instant::now();
        tensor_point(n, p.k, &p.p, &pairs, period_per_n).map(|pt| (pt, t.elapsed().as_secs_f64()))
    })?
    .into_iter()
    .map(|(pt, secs)| {
        timings.push(secs);
        pt
    })
    .collect::<Vec<_>>();
    let elapsed: f64 = timings.iter().sum();
    let xs: Vec<f64> = points.iter().map(|pt| pt.n as f64).collect();
    let series = |f: &dyn Fn(&TensorPoint) -> f64| xs.iter().copied().zip(points.iter().map(f)).collect::<Vec<_>>();
    let mut scaling = vec![ScalingReport::from_points(
        "output_norm",
        &series(&|pt| pt.output_norm),
        true,
        Some(prediction.output_exponent),
        "tensor-bump output norm ~ N^{1/p - k - 1}",
        OUTPUT_TOL,
        Comparison::Within,
        elapsed,
    )?];
    for i in 0..p.l {
        scaling.push(ScalingReport::from_points(
            format!("testfn_norm_{}", i + 1),
            &series(&|pt| pt.testfn_norms[i]),
            true,
            Some(prediction.testfn_exponents[i]),
            "test function norms ~ N^{1/p_i - 1} (i <= k), N^0 otherwise",
            TESTFN_TOL,
            Comparison::Within,
            elapsed,
        )?);
    }
    let mut checks = Vec::new();
    for (w, &(s, u)) in pairs.iter().enumerate() {
        scaling.push(ScalingReport::from_points(
            format!("a_norm s={s} u={u}"),
            &series(&|pt| pt.a_norms[w]),
            true,
            Some(prediction.symbol_exponent(s, u)),
            "symbol norm <~ N^{s - (k+1)/u} (#E_k^N ~ N^{l-k-1})",
            SYMBOL_TOL,
            Comparison::AtMost,
            elapsed,
        )?);
        let ratios = sharpness_ratios(&points, w);
        let threshold = prediction.threshold(u);
        let (ok, note) = if s < threshold {
            (ratios.windows(2).all(|r| r[1] > r[0]), "below threshold: ratio increases along the ladder")
        } else {
            (ratios[1..].windows(2).all(|r| r[1] <= r[0]), "above threshold: ratio non-increasing after the first point")
        };
        checks.push(Check::holds(format!("sharpness s={s} u={u} threshold={threshold}"), ok, note));
    }
    let mut header: Vec<String> = vec!["N".into(), "terms".into(), "output_norm".into()];
    header.extend((1..=p.l).map(|i| format!("f{i}_norm")));
    for &(s, u) in &pairs {
        header.push(format!("a_norm_s{s}_u{u}"));
    }
    for &(s, u) in &pairs {
        header.push(format!("ratio_s{s}_u{u}"));
    }
    let ratio_cols: Vec<Vec<f64>> = (0..pairs.len()).map(|w| sharpness_ratios(&points, w)).collect();
    let rows: Vec<Vec<String>> = points
        .iter()
        .enumerate()
        .map(|(r, pt)| {
            let mut row = vec![pt.n.to_string(), pt.terms.to_string(), num(pt.output_norm)];
            row.extend(pt.testfn_norms.iter().map(|&v| num(v)));
            row.extend(pt.a_norms.iter().map(|&v| num(v)));
            row.extend(ratio_cols.iter().map(|c| num(c[r])));
            row
        })
        .collect();
    Ok((scaling, checks, csv_bytes(&header, &rows)?))
}

// ---------------------------------------------------------------------------
// bessel_dichotomy

/// The predicted branch: convergent iff `t > c`, or `t = c` and `γ > 2/u`,
/// where `c = dim/u` for the kernel and `dim/u′` for the transform.
pub fn predicted_convergence(t: f64, gamma: f64, dim: usize, u: f64, side: NormSide) -> Convergence {
    let c = match side {
        NormSide::Kernel => dim as f64 / u,
        NormSide::Transform => dim as f64 * (1.0 - 1.0 / u),
    };
    let tol = 1e-12;
    if t > c + tol || ((t - c).abs() <= tol && gamma > 2.0 / u + tol) {
        Convergence::Convergent
    } else {
        Convergence::Divergent
    }
}

fn bessel_dichotomy(p: &BesselDichotomyParams) -> Result<Outcome> {
    let radii = p.log10_radii.clone().unwrap_or_else(default_log10_radii);
    let mut rows = Vec::new();
    let mut wrong = 0usize;
    let mut open = 0usize;
    for &t in &p.t {
        for &g in &p.gamma {
            let rep = bessel_norm_dichotomy(t, g, p.dim, p.u, p.side, &radii)?;
            let want = predicted_convergence(t, g, p.dim, p.u, p.side);
            if rep.verdict == Convergence::Inconclusive {
                open += 1;
            } else if rep.verdict != want {
                wrong += 1;
            }
            rows.push(vec![
                num(t),
                num(g),
                format!("{:?}", want).to_lowercase(),
                format!("{:?}", rep.verdict).to_lowercase(),
                num(*rep.ratios.last().expect("at least 4 radii")),
            ]);
        }
    }
    let header: Vec<String> = ["t", "gamma", "predicted", "verdict", "last_ratio"].iter().map(|s| s.to_string()).collect();
    let checks = vec![
        Check::at_most("misclassifications", wrong as f64, 0.0, "verdicts that contradict the predicted branch"),
        Check::at_most("inconclusive", open as f64, 0.0, "ratio tests straddling the threshold"),
    ];
    Ok((Vec::new(), checks, csv_bytes(&header, &rows)?))
}

// ---------------------------------------------------------------------------
// hybrid_growth

/// Product grid of two one-dimensional groups and its dyadic bank.
pub fn hybrid_grid(points: usize, period: f64) -> Result<(Grid, FilterBank)> {
    let group = Grid::new(1, points, period)?;
    let j_max = group.nyquist().log2().floor() as i32;
    let j_min = -(period.log2().round() as i32);
    let bank = build_dyadic_bank(&group, j_min, j_max, 1)?;
    Ok((group.with_dims(2)?, bank))
}

fn hybrid_growth(cfg: &ExperimentConfig, p: &HybridGrowthParams) -> Result<Outcome> {
    let (grid, bank) = hybrid_grid(cfg.grid.points_per_axis.unwrap_or(16), cfg.grid.period.unwrap_or(8.0))?;
    let samples: Vec<GridFunction> = (0..p.samples).map(|i| gaussian_field(&grid, p.band, cfg.seed, i as u64)).collect();
    let base = HybridSpec::new(p.kind, [0, 0], p.u)?;
    let rep = hybrid_growth_scan(&samples, &base, &bank, p.p, p.p0, &p.shifts)?;
    let header: Vec<String> = ["m1", "m2", "log2_ratio"].iter().map(|s| s.to_string()).collect();
    let rows = p
        .shifts
        .iter()
        .zip(&rep.y)
        .map(|(s, &y)| vec![s[0].to_string(), s[1].to_string(), num(y)])
        .collect::<Vec<_>>();
    Ok((vec![rep], Vec::new(), csv_bytes(&header, &rows)?))
}

// ---------------------------------------------------------------------------
// paraproduct_consistency

/// Smooth bilinear bi-parameter test symbol.
pub fn paraproduct_test_symbol() -> Result<MultiplierRep> {
    Ok(MultiplierRep::rule(ProductShape::new(2, 2, 1)?, |xi| {
        let r2: f64 = xi.iter().map(|v| v * v).sum();
        C64::new((1.0 + r2).recip(), 0.3 * (xi[0] - xi[3]).sin())
    }))
}

/// Random two-dimensional input with spectrum inside the bank's band per axis.
pub fn random_in_band(grid: &Grid, bank: &FilterBank, seed: u64) -> GridFunction {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    GridFunction::from_spectral_fn(grid, |xi| {
        let z = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
        if xi.iter().all(|&x| bank.covers(x.abs())) {
            z
        } else {
            C64::new(0.0, 0.0)
        }
    })
    .to_spatial()
}

fn rel_l2(a: &GridFunction, b: &GridFunction) -> Result<f64> {
    Ok(lp_norm(&a.sub(b)?, NormSpec::lebesgue(2.0))? / lp_norm(b, NormSpec::lebesgue(2.0))?)
}

/// Largest relative gap between the sum of the nine pieces and the full operator.
pub fn paraproduct_gap(grid: &Grid, bank: &FilterBank, m: &MultiplierRep, seed: u64) -> Result<f64> {
    let f = random_in_band(grid, bank, seed.wrapping_mul(2));
    let g = random_in_band(grid, bank, seed.wrapping_mul(2) + 1);
    let pieces = paraproduct_pieces(m, &f, &g, bank)?;
    let mut sum = GridFunction::zeros(pieces[0].output.grid(), Domain::Spatial);
    for piece in &pieces {
        sum = sum.add_scaled(&piece.output, C64::new(1.0, 0.0))?;
    }
    let full = apply_multilinear(m, &[f, g], true)?;
    rel_l2(&sum, &full)
}

fn paraproduct_consistency(cfg: &ExperimentConfig, p: &ParaproductParams) -> Result<Outcome> {
    let n = cfg.grid.points_per_axis.unwrap_or(16);
    let period = cfg.grid.period.unwrap_or(8.0);
    let grid = Grid::new(2, n, period)?;
    let j_max = grid.nyquist().log2().floor() as i32;
    let bank = FilterBank::new(&grid.with_dims(1)?, -(period.log2().round() as i32), j_max, 2)?;
    let m = paraproduct_test_symbol()?;
    let seeds: Vec<u64> = (0..p.pairs as u64).map(|i| cfg.seed.wrapping_add(i)).collect();
    let gaps = par_map(&seeds, |&s| paraproduct_gap(&grid, &bank, &m, s))?;
    let worst = gaps.iter().cloned().fold(0.0, f64::max);
    let header: Vec<String> = ["pair", "relative_gap"].iter().map(|s| s.to_string()).collect();
    let rows = gaps.iter().enumerate().map(|(i, &g)| vec![i.to_string(), num(g)]).collect::<Vec<_>>();
    let checks = vec![Check::at_most("max_relative_gap", worst, p.tolerance, "nine pieces against the full operator")];
    Ok((Vec::new(), checks, csv_bytes(&header, &rows)?))
}

// ---------------------------------------------------------------------------
// region_scan

fn region_scan(cfg: &ExperimentConfig, p: &RegionScanParams) -> Result<Outcome> {
    let scan = consistency_scan(p.l, p.d, p.u_max, p.s_max, p.samples, cfg.seed)?;
    let mut rows = vec![vec![
        "consistency".to_string(),
        String::new(),
        String::new(),
        String::new(),
        scan.samples.to_string(),
        scan.failures.len().to_string(),
    ]];
    let mut checks = vec![Check::at_most(
        "consistency_failures",
        scan.failures.len() as f64,
        0.0,
        format!(
            "sufficient but not necessary off-boundary; {} boundary points skipped; \
             2-based branch binding at {} points with u < 2",
            scan.boundary, scan.two_branch_binding
        ),
    )];
    for (i, case) in p.hull.iter().enumerate() {
        if case.b.iter().any(|&b| b == 0 || b > p.l) {
            return Err(Error::Config(format!("params.hull[{i}].b: indices must lie in 1..={}", p.l)));
        }
        let b = Subset::from_indices(&case.b);
        let rep = hull_identity_check(b, case.s, case.u, p.l, p.samples, cfg.seed.wrapping_add(i as u64 + 1))?;
        rows.push(vec![
            "hull".to_string(),
            b.to_string(),
            num(case.s),
            num(case.u),
            (rep.containment_samples + rep.hull_samples).to_string(),
            rep.failures.len().to_string(),
        ]);
        checks.push(Check::at_most(
            format!("hull B={b} s={} u={}", case.s, case.u),
            rep.failures.len() as f64,
            0.0,
            format!(
                "{} direct, {} by pairs, {} barycentric",
                rep.direct, rep.via_pair, rep.via_barycentric
            ),
        ));
    }
    let header: Vec<String> = ["check", "b", "s", "u", "samples", "failures"].iter().map(|s| s.to_string()).collect();
    Ok((Vec::new(), checks, csv_bytes(&header, &rows)?))
}

// ---------------------------------------------------------------------------
// shell_decay

fn shell_grid_size(cfg: &ExperimentConfig, p: &ShellDecayParams) -> (usize, f64) {
    let period = cfg.grid.period.unwrap_or(2f64.powi(p.m_max as i32 + 1));
    let points = cfg.grid.points_per_axis.unwrap_or_else(|| next_pow2((2.5 * period).ceil() as usize));
    (points, period)
}

fn shell_decay(cfg: &ExperimentConfig, p: &ShellDecayParams) -> Result<Outcome> {
    if p.m_fit_min + 2 > p.m_max {
        return Err(Error::Config("params.m_fit_min: need at least 3 shells in the fit".into()));
    }
    let (points, period) = shell_grid_size(cfg, p);
    let fam = BesselFamily::new(p.t, p.gamma, 2, 1, Some(p.truncation), BesselMode::Shifted)?;
    let m = bessel_multiplier(&fam, None)?;
    let grid = Grid::new(2, points, period)?;
    let loc = localize_symbol(&m, &[0], WindowKind::Annulus, &grid)?;
    let shells = shell_decompose(&loc, p.m_max)?;
    let trials = RandomTrials {
        grid: grid.with_dims(1)?,
        trials: p.trials,
        seed: cfg.seed,
        band: 1.2,
    };
    let keys: Vec<Vec<u32>> = shells.shells.keys().cloned().collect();
    let measured = par_map(&keys, |key| {
        let mass = lp_norm(&shells.shells[key], NormSpec::lebesgue(1.0))?;
        let sym = shells.piece_symbol(key)?;
        let est = operator_norm_lower_bound(&sym, &[2.0, 2.0], &[], Some(&trials), false)?;
        Ok((key[0], mass, est.value))
    })?;
    let fit: Vec<(f64, f64)> = measured
        .iter()
        .filter(|(k, _, v)| *k >= p.m_fit_min && *k < p.m_max && *v > 0.0)
        .map(|&(k, _, v)| (k as f64, v.log2()))
        .collect();
    let scaling = vec![ScalingReport::from_points(
        "shell operator norm (log2) vs M",
        &fit,
        false,
        Some(0.0),
        "shell pieces decay geometrically in M (qualitative)",
        0.0,
        Comparison::AtMost,
        0.0,
    )?];
    let decreasing = fit.windows(2).all(|w| w[1].1 < w[0].1);
    let checks = vec![Check::holds("monotone_decrease", decreasing, "operator-norm estimates over the fitted shells")];
    let header: Vec<String> = ["M", "kernel_l1", "operator_norm_estimate"].iter().map(|s| s.to_string()).collect();
    let rows = measured.iter().map(|&(k, a, b)| vec![k.to_string(), num(a), num(b)]).collect::<Vec<_>>();
    Ok((scaling, checks, csv_bytes(&header, &rows)?))
}

// ---------------------------------------------------------------------------
// Invariant suite

/// Runs the core invariants on small grids with independent oracles.
pub fn selftest() -> Result<Vec<Check>> {
    crate::selfcheck::run_all()
}
