// SPDX-License-Identifier: Apache-2.0
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Writes through a temporary sibling file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Least-squares line through `(x, y)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Standard error of the slope from the residuals.
    pub stderr: f64,
}

pub fn fit_line(points: &[(f64, f64)]) -> Result<LineFit> {
    if points.len() < 3 {
        return Err(Error::Fit(format!("got {} points", points.len())));
    }
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(Error::Fit("non-finite coordinate".into()));
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Fit("x values are all equal".into()));
    }
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = points
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let stderr = (rss / (n - 2.0) / sxx).sqrt();
    Ok(LineFit { slope, intercept, stderr })
}

/// Slope of `ln y` against `ln x`; x must be strictly increasing and both positive.
pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<LineFit> {
    if points.windows(2).any(|w| w[1].0 <= w[0].0) {
        return Err(Error::Fit("x must be strictly increasing".into()));
    }
    if points.iter().any(|&(x, y)| !(x > 0.0 && y > 0.0)) {
        return Err(Error::Fit("nonpositive coordinate".into()));
    }
    fit_line(&points.iter().map(|&(x, y)| (x.ln(), y.ln())).collect::<Vec<_>>())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Pass,
    Fail,
    Inconclusive,
}

/// How a fitted slope is compared with its prediction.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    /// `|fitted − predicted| ≤ tolerance`.
    Within,
    /// `fitted ≤ predicted + tolerance`.
    AtMost,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScalingReport {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub fitted_slope: f64,
    pub stderr: f64,
    pub predicted_slope: Option<f64>,
    pub predicted_ref: String,
    pub tolerance: f64,
    pub comparison: Comparison,
    /// x value left out of the fit as pre-asymptotic, if any.
    pub dropped: Option<f64>,
    pub verdict: Verdict,
    pub runtime_secs: f64,
}

impl ScalingReport {
    /// Fits `points` (log-log when `loglog`) and compares the slope with `predicted`.
    /// The smallest x is dropped when its residual exceeds three times every other one.
    #[allow(clippy::too_many_arguments)]
    pub fn from_points(
        label: impl Into<String>,
        points: &[(f64, f64)],
        loglog: bool,
        predicted: Option<f64>,
        predicted_ref: impl Into<String>,
        tolerance: f64,
        comparison: Comparison,
        runtime_secs: f64,
    ) -> Result<Self> {
        let fit = |pts: &[(f64, f64)]| if loglog { fit_loglog_slope(pts) } else { fit_line(pts) };
        let mut f = fit(points)?;
        let mut dropped = None;
        if points.len() >= 4 {
            let tx = |v: f64| if loglog { v.ln() } else { v };
            let res: Vec<f64> = points
                .iter()
                .map(|&(x, y)| (tx(y) - f.intercept - f.slope * tx(x)).abs())
                .collect();
            let (first, rest) = res.split_first().expect("nonempty");
            if rest.iter().all(|&r| *first > 3.0 * r) {
                f = fit(&points[1..])?;
                dropped = Some(points[0].0);
            }
        }
        let verdict = match predicted {
            None => Verdict::Inconclusive,
            Some(p) => {
                let ok = match comparison {
                    Comparison::Within => (f.slope - p).abs() <= tolerance,
                    Comparison::AtMost => f.slope <= p + tolerance,
                };
                if ok {
                    Verdict::Pass
                } else {
                    Verdict::Fail
                }
            }
        };
        Ok(ScalingReport {
            label: label.into(),
            x: points.iter().map(|p| p.0).collect(),
            y: points.iter().map(|p| p.1).collect(),
            fitted_slope: f.slope,
            stderr: f.stderr,
            predicted_slope: predicted,
            predicted_ref: predicted_ref.into(),
            tolerance,
            comparison,
            dropped,
            verdict,
            runtime_secs,
        })
    }
}
