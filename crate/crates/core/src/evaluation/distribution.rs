use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Result, TtsError};

/// Uniform grid of `bins` cells of width `step` starting at `start`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DurationGrid {
    pub start: f64,
    pub step: f64,
    pub bins: usize,
}

impl DurationGrid {
    pub fn new(start: f64, step: f64, bins: usize) -> Result<Self> {
        if step.is_nan() || step <= 0.0 || bins == 0 || !start.is_finite() {
            return Err(TtsError::InvalidInput(format!("bad grid: start {start}, step {step}, {bins} bins")));
        }
        Ok(Self { start, step, bins })
    }

    /// One-frame cells over `[0, 2 s]`, the shared support for JS.
    pub fn frames(hop: usize, sample_rate: u32) -> Result<Self> {
        let step = hop as f64 / sample_rate as f64;
        Self::new(0.0, step, (2.0 / step).ceil() as usize)
    }

    /// Cell centres.
    pub fn support(&self) -> Vec<f64> {
        (0..self.bins).map(|i| self.start + (i as f64 + 0.5) * self.step).collect()
    }

    /// Cell index of `x`; values outside the grid fall in the edge cells.
    pub fn index(&self, x: f64) -> usize {
        let i = ((x - self.start) / self.step).floor();
        if i < 0.0 {
            0
        } else {
            (i as usize).min(self.bins - 1)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Estimator {
    Histogram,
    /// Gaussian kernel; Silverman's rule when the bandwidth is `None`.
    Kde { bandwidth: Option<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DurationDistribution {
    pub support: Vec<f64>,
    /// Probability mass per grid cell; sums to 1.
    pub density: Vec<f64>,
    pub estimator: Estimator,
    /// Bin width for histograms, kernel bandwidth for KDE.
    pub width: f64,
}

fn silverman(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    1.06 * var.sqrt() * n.powf(-0.2)
}

pub fn duration_distribution(samples: &[f64], grid: &DurationGrid, est: Estimator) -> Result<DurationDistribution> {
    if samples.is_empty() {
        return Err(TtsError::InvalidInput("no duration samples".into()));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(TtsError::NonFinite("duration samples".into()));
    }
    let support = grid.support();
    let (mut density, width) = match est {
        Estimator::Histogram => {
            let mut h = vec![0.0; grid.bins];
            for &x in samples {
                h[grid.index(x)] += 1.0;
            }
            (h, grid.step)
        }
        Estimator::Kde { bandwidth } => {
            if samples.len() < 2 {
                return Err(TtsError::InvalidInput("kde needs at least 2 samples".into()));
            }
            let bw = match bandwidth {
                Some(b) => b,
                None => silverman(samples),
            };
            // degenerate samples fall back to a one-cell kernel
            let bw = if bw > 0.0 { bw } else { grid.step };
            let d = support
                .iter()
                .map(|&g| samples.iter().map(|&x| (-0.5 * ((g - x) / bw).powi(2)).exp()).sum())
                .collect();
            (d, bw)
        }
    };
    let total: f64 = density.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(TtsError::InvalidInput("samples carry no mass on the grid".into()));
    }
    density.iter_mut().for_each(|v| *v /= total);
    Ok(DurationDistribution {
        support,
        density,
        estimator: est,
        width,
    })
}

/// One distribution per grouping key (for example per speaker).
pub fn grouped_distributions(
    samples: &[(u32, f64)],
    grid: &DurationGrid,
    est: Estimator,
) -> Result<BTreeMap<u32, DurationDistribution>> {
    let mut groups: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for &(k, x) in samples {
        groups.entry(k).or_default().push(x);
    }
    groups
        .into_iter()
        .map(|(k, v)| Ok((k, duration_distribution(&v, grid, est)?)))
        .collect()
}

fn kl2(p: &[f64], m: &[f64]) -> f64 {
    p.iter()
        .zip(m)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| a * (a / b).log2())
        .sum()
}

/// Jensen-Shannon divergence in bits.
pub fn js_divergence(p: &DurationDistribution, q: &DurationDistribution) -> Result<f64> {
    if p.support != q.support {
        return Err(TtsError::InvalidInput("distributions are on different grids".into()));
    }
    js_divergence_masses(&p.density, &q.density)
}

pub fn js_divergence_masses(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(TtsError::InvalidInput(format!("{} vs {} bins", p.len(), q.len())));
    }
    let m: Vec<f64> = p.iter().zip(q).map(|(a, b)| 0.5 * (a + b)).collect();
    // evaluated in a fixed order so that swapping p and q is exact
    let (a, b) = (kl2(p, &m), kl2(q, &m));
    let js = 0.5 * a.min(b) + 0.5 * a.max(b);
    Ok(js.clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JsReport {
    pub mean: f64,
    pub var: f64,
}

/// Per-sample JS between paired duration sets (histograms on `grid`),
/// summarized by mean and population variance.
pub fn js_report(a: &[Vec<f64>], b: &[Vec<f64>], grid: &DurationGrid) -> Result<JsReport> {
    if a.len() != b.len() {
        return Err(TtsError::InvalidInput(format!("{} samples paired with {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(TtsError::InvalidInput("no samples".into()));
    }
    let js = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            js_divergence(
                &duration_distribution(x, grid, Estimator::Histogram)?,
                &duration_distribution(y, grid, Estimator::Histogram)?,
            )
        })
        .collect::<Result<Vec<f64>>>()?;
    let n = js.len() as f64;
    let mean = js.iter().sum::<f64>() / n;
    let var = js.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(JsReport { mean, var })
}

/// Two whitespace-separated columns, `grid density`, one row per cell.
pub fn format_distribution(d: &DurationDistribution) -> String {
    let mut s = String::new();
    for (g, p) in d.support.iter().zip(&d.density) {
        let _ = writeln!(s, "{g:.6}\t{p:.9e}");
    }
    s
}

pub fn write_distribution(path: impl AsRef<Path>, d: &DurationDistribution) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| TtsError::io(dir, e))?;
    }
    std::fs::write(path, format_distribution(d)).map_err(|e| TtsError::io(path, e))
}

/// Reads an export back as `(grid, density)` columns.
pub fn read_distribution(path: impl AsRef<Path>) -> Result<(Vec<f64>, Vec<f64>)> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| TtsError::io(path, e))?;
    let mut g = Vec::new();
    let mut d = Vec::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let cols: Vec<f64> = line
            .split_whitespace()
            .map(str::parse)
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| TtsError::InvalidInput(format!("{}:{}: not numeric", path.display(), n + 1)))?;
        if cols.len() != 2 {
            return Err(TtsError::InvalidInput(format!(
                "{}:{}: expected 2 columns, found {}",
                path.display(),
                n + 1,
                cols.len()
            )));
        }
        g.push(cols[0]);
        d.push(cols[1]);
    }
    if g.is_empty() {
        return Err(TtsError::InvalidInput(format!("{} is empty", path.display())));
    }
    Ok((g, d))
}
