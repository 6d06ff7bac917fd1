//! Long-run validation statistics: site-pooled kernel density estimates,
//! site-averaged auto- and neighbor cross-correlation functions, and the
//! scalar distances used to score a closure against the reference run.
//! All trajectory statistics are computed on the test half of the time range.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::l96::Trajectory;

/// Internal histogram resolution for the binned KDE accumulation.
const KDE_HIST_BINS: usize = 4096;

/// A sampled curve on a shared grid (density over value, correlation over
/// lag time).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsConfig {
    /// Correlation window in model time units.
    pub max_lag_time: f64,
    /// Grid resolution of the density curves.
    pub pdf_points: usize,
    /// Pass threshold on the Hellinger distance between X pdfs.
    pub hellinger_max: f64,
    /// Pass threshold on the relative L2 error of acf/ccf of X.
    pub rel_l2_max: f64,
}

impl Default for StatsConfig {
    fn default() -> Self {
        Self {
            max_lag_time: 10.0,
            pdf_points: 512,
            hellinger_max: 0.1,
            rel_l2_max: 0.2,
        }
    }
}

/// Rule-of-thumb bandwidth: `0.9 · min(σ, IQR/1.34) · n^{-1/5}`.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64> {
    let n = samples.len();
    let mean = samples.iter().sum::<f64>() / n as f64;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let sd = var.sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let iqr = sorted[(3 * n) / 4] - sorted[n / 4];
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    if !(spread > 0.0) {
        return Err(Error::Numeric(
            "cannot estimate a density of constant samples".into(),
        ));
    }
    Ok(0.9 * spread * (n as f64).powf(-0.2))
}

/// Gaussian KDE evaluated on `points` uniform grid nodes spanning
/// `[min − 3h, max + 3h]`.
pub fn empirical_pdf(samples: &[f64], points: usize) -> Result<Curve> {
    let h = check_kde_inputs(samples)?;
    let min = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let grid = uniform_grid(min - 3.0 * h, max + 3.0 * h, points);
    let values = kde_on_grid(samples, h, &grid);
    Ok(Curve { grid, values })
}

/// Gaussian KDE on a caller-supplied grid (shared-grid comparisons).
pub fn empirical_pdf_on_grid(samples: &[f64], grid: &[f64]) -> Result<Curve> {
    let h = check_kde_inputs(samples)?;
    Ok(Curve {
        grid: grid.to_vec(),
        values: kde_on_grid(samples, h, grid),
    })
}

fn check_kde_inputs(samples: &[f64]) -> Result<f64> {
    if samples.len() < 1000 {
        return Err(Error::InsufficientData(format!(
            "{} samples; the density estimate needs at least 1000",
            samples.len()
        )));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::CorruptState("non-finite sample".into()));
    }
    silverman_bandwidth(samples)
}

pub fn uniform_grid(lo: f64, hi: f64, points: usize) -> Vec<f64> {
    let step = (hi - lo) / (points - 1) as f64;
    (0..points).map(|i| lo + step * i as f64).collect()
}

/// Binned accumulation: samples collapse onto a fine histogram first, then
/// the Gaussian kernel is applied per histogram cell. The cell width is far
/// below any Silverman bandwidth of the data, so the approximation error is
/// orders below the Monte Carlo noise.
fn kde_on_grid(samples: &[f64], h: f64, grid: &[f64]) -> Vec<f64> {
    let min = samples.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let width = (max - min).max(f64::MIN_POSITIVE);
    let mut hist = vec![0usize; KDE_HIST_BINS];
    for &s in samples {
        let k = (((s - min) / width) * KDE_HIST_BINS as f64) as usize;
        hist[k.min(KDE_HIST_BINS - 1)] += 1;
    }
    let cell = width / KDE_HIST_BINS as f64;
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    grid.iter()
        .map(|&g| {
            let mut acc = 0.0;
            for (b, &count) in hist.iter().enumerate() {
                if count == 0 {
                    continue;
                }
                let center = min + (b as f64 + 0.5) * cell;
                let z = (g - center) / h;
                if z.abs() < 8.0 {
                    acc += count as f64 * (-0.5 * z * z).exp();
                }
            }
            acc * norm
        })
        .collect()
}

/// Biased autocorrelation estimator
/// `acf(k) = Σ (x_t − x̄)(x_{t+k} − x̄) / Σ (x_t − x̄)²`.
pub fn acf(series: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    let t = series.len();
    if t <= max_lag {
        return Err(Error::InsufficientData(format!(
            "series of length {t} cannot support lag {max_lag}"
        )));
    }
    let mean = series.iter().sum::<f64>() / t as f64;
    let denom: f64 = series.iter().map(|v| (v - mean).powi(2)).sum();
    if denom <= 0.0 {
        return Err(Error::Numeric(
            "autocorrelation of a constant series".into(),
        ));
    }
    let mut out = Vec::with_capacity(max_lag + 1);
    for k in 0..=max_lag {
        let mut num = 0.0;
        for i in 0..t - k {
            num += (series[i] - mean) * (series[i + k] - mean);
        }
        out.push(num / denom);
    }
    Ok(out)
}

/// Normalized cross-correlation of two equal-length series over lags
/// `0..=max_lag` (`b` shifted forward).
pub fn ccf(a: &[f64], b: &[f64], max_lag: usize) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::Config(format!(
            "series lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    let t = a.len();
    if t <= max_lag {
        return Err(Error::InsufficientData(format!(
            "series of length {t} cannot support lag {max_lag}"
        )));
    }
    let mean_a = a.iter().sum::<f64>() / t as f64;
    let mean_b = b.iter().sum::<f64>() / t as f64;
    let var_a: f64 = a.iter().map(|v| (v - mean_a).powi(2)).sum();
    let var_b: f64 = b.iter().map(|v| (v - mean_b).powi(2)).sum();
    if var_a <= 0.0 || var_b <= 0.0 {
        return Err(Error::Numeric(
            "cross-correlation with a constant series".into(),
        ));
    }
    let denom = (var_a * var_b).sqrt();
    let mut out = Vec::with_capacity(max_lag + 1);
    for k in 0..=max_lag {
        let mut num = 0.0;
        for i in 0..t - k {
            num += (a[i] - mean_a) * (b[i + k] - mean_b);
        }
        out.push(num / denom);
    }
    Ok(out)
}

/// Strict local maxima that rise at least `prominence_frac · max(values)`
/// above the valley separating them from taller peaks.
pub fn count_modes(values: &[f64], prominence_frac: f64) -> usize {
    let n = values.len();
    if n < 3 {
        return usize::from(n > 0);
    }
    let global_max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let prom = prominence_frac * global_max;
    let mut candidates: Vec<usize> = Vec::new();
    for i in 1..n - 1 {
        if values[i] > values[i - 1] && values[i] >= values[i + 1] {
            candidates.push(i);
        }
    }
    candidates.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap());
    let mut accepted: Vec<usize> = Vec::new();
    'next: for &c in &candidates {
        for &a in &accepted {
            let (lo, hi) = (c.min(a), c.max(a));
            let valley = values[lo..=hi].iter().cloned().fold(f64::INFINITY, f64::min);
            if values[c] - valley < prom {
                continue 'next;
            }
        }
        accepted.push(c);
    }
    accepted.len()
}

/// Trapezoid integral of a curve.
pub fn trapezoid(grid: &[f64], values: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 1..grid.len() {
        acc += 0.5 * (values[i] + values[i - 1]) * (grid[i] - grid[i - 1]);
    }
    acc
}

/// Hellinger distance `√(½ ∫ (√p − √q)²)` between densities on one grid.
/// Exactly zero for identical curves even when the discrete integral of the
/// densities falls slightly short of one.
pub fn hellinger(p: &Curve, q: &Curve) -> Result<f64> {
    if p.grid != q.grid {
        return Err(Error::GridMismatch(
            "pdf curves live on different grids".into(),
        ));
    }
    let sq_diff: Vec<f64> = p
        .values
        .iter()
        .zip(&q.values)
        .map(|(a, b)| {
            let d = a.max(0.0).sqrt() - b.max(0.0).sqrt();
            d * d
        })
        .collect();
    Ok((0.5 * trapezoid(&p.grid, &sq_diff)).max(0.0).sqrt().min(1.0))
}

/// `‖a − reference‖₂ / ‖reference‖₂`.
pub fn relative_l2(a: &[f64], reference: &[f64]) -> Result<f64> {
    if a.len() != reference.len() {
        return Err(Error::GridMismatch(format!(
            "curve lengths differ: {} vs {}",
            a.len(),
            reference.len()
        )));
    }
    let num: f64 = a
        .iter()
        .zip(reference)
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    let den: f64 = reference.iter().map(|y| y * y).sum();
    if den <= 0.0 {
        return Err(Error::Numeric("reference curve is all zero".into()));
    }
    Ok((num / den).sqrt())
}

/// Validation curves of one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub pdf_x: Curve,
    pub pdf_r: Curve,
    pub acf_x: Curve,
    pub acf_r: Curve,
    pub ccf_x: Curve,
    pub ccf_r: Curve,
    /// Per-head training misclassification, when a network was evaluated.
    pub misclassification: Option<Vec<f64>>,
}

/// Pool the test-half entries of a site matrix into one sample vector.
fn pooled_test_samples(m: &crate::linalg::Mat, start_row: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity((m.rows() - start_row) * m.cols());
    for i in start_row..m.rows() {
        out.extend_from_slice(m.row(i));
    }
    out
}

fn site_averaged_acf(
    m: &crate::linalg::Mat,
    start_row: usize,
    max_lag: usize,
) -> Result<Vec<f64>> {
    let n = m.cols();
    let mut acc = vec![0.0; max_lag + 1];
    let mut series = vec![0.0; m.rows() - start_row];
    for site in 0..n {
        for (k, i) in (start_row..m.rows()).enumerate() {
            series[k] = m.row(i)[site];
        }
        for (a, v) in acc.iter_mut().zip(acf(&series, max_lag)?) {
            *a += v;
        }
    }
    for a in &mut acc {
        *a /= n as f64;
    }
    Ok(acc)
}

fn site_averaged_neighbor_ccf(
    m: &crate::linalg::Mat,
    start_row: usize,
    max_lag: usize,
) -> Result<Vec<f64>> {
    let n = m.cols();
    let rows = m.rows() - start_row;
    let mut acc = vec![0.0; max_lag + 1];
    let mut a = vec![0.0; rows];
    let mut b = vec![0.0; rows];
    for site in 0..n {
        let neighbor = (site + 1) % n;
        for (k, i) in (start_row..m.rows()).enumerate() {
            a[k] = m.row(i)[site];
            b[k] = m.row(i)[neighbor];
        }
        for (s, v) in acc.iter_mut().zip(ccf(&a, &b, max_lag)?) {
            *s += v;
        }
    }
    for s in &mut acc {
        *s /= n as f64;
    }
    Ok(acc)
}

/// Compute matched reports for a reference and a surrogate trajectory.
///
/// Densities share one grid per variable (built from the pooled range of
/// both runs), correlations share the lag grid, and both reports use their
/// own test half `t ∈ [t_mid, t_end]`.
pub fn paired_reports(
    reference: &Trajectory,
    surrogate: &Trajectory,
    cfg: &StatsConfig,
) -> Result<(StatsReport, StatsReport)> {
    let dt = reference.dt();
    if (surrogate.dt() - dt).abs() > 1e-12 {
        return Err(Error::GridMismatch(format!(
            "time steps differ: {} vs {}",
            dt,
            surrogate.dt()
        )));
    }
    let max_lag = (cfg.max_lag_time / dt).round() as usize;

    let ref_start = reference.test_half_start();
    let sur_start = surrogate.test_half_start();

    let ref_x = pooled_test_samples(&reference.x, ref_start);
    let sur_x = pooled_test_samples(&surrogate.x, sur_start);
    let ref_r = pooled_test_samples(&reference.r, ref_start);
    let sur_r = pooled_test_samples(&surrogate.r, sur_start);

    let grid_x = shared_grid(&ref_x, &sur_x, cfg.pdf_points)?;
    let grid_r = shared_grid(&ref_r, &sur_r, cfg.pdf_points)?;

    let report = |traj: &Trajectory,
                  start: usize,
                  x_pool: &[f64],
                  r_pool: &[f64]|
     -> Result<StatsReport> {
        let lag_grid: Vec<f64> = (0..=max_lag).map(|k| k as f64 * dt).collect();
        Ok(StatsReport {
            pdf_x: empirical_pdf_on_grid(x_pool, &grid_x)?,
            pdf_r: empirical_pdf_on_grid(r_pool, &grid_r)?,
            acf_x: Curve {
                grid: lag_grid.clone(),
                values: site_averaged_acf(&traj.x, start, max_lag)?,
            },
            acf_r: Curve {
                grid: lag_grid.clone(),
                values: site_averaged_acf(&traj.r, start, max_lag)?,
            },
            ccf_x: Curve {
                grid: lag_grid.clone(),
                values: site_averaged_neighbor_ccf(&traj.x, start, max_lag)?,
            },
            ccf_r: Curve {
                grid: lag_grid,
                values: site_averaged_neighbor_ccf(&traj.r, start, max_lag)?,
            },
            misclassification: None,
        })
    };

    Ok((
        report(reference, ref_start, &ref_x, &ref_r)?,
        report(surrogate, sur_start, &sur_x, &sur_r)?,
    ))
}

fn shared_grid(a: &[f64], b: &[f64], points: usize) -> Result<Vec<f64>> {
    let h = silverman_bandwidth(a)?.max(silverman_bandwidth(b)?);
    let lo = a
        .iter()
        .chain(b)
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let hi = a
        .iter()
        .chain(b)
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(uniform_grid(lo - 3.0 * h, hi + 3.0 * h, points))
}

/// Scalar distances between two reports, gated on the X statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSummary {
    pub hellinger_pdf_x: f64,
    pub hellinger_pdf_r: f64,
    pub rel_l2_acf_x: f64,
    pub rel_l2_acf_r: f64,
    pub rel_l2_ccf_x: f64,
    pub rel_l2_ccf_r: f64,
    pub hellinger_max: f64,
    pub rel_l2_max: f64,
    pub pass: bool,
}

pub fn compare(
    reference: &StatsReport,
    surrogate: &StatsReport,
    cfg: &StatsConfig,
) -> Result<ComparisonSummary> {
    for (p, q, what) in [
        (&reference.acf_x, &surrogate.acf_x, "acf"),
        (&reference.ccf_x, &surrogate.ccf_x, "ccf"),
    ] {
        if p.grid != q.grid {
            return Err(Error::GridMismatch(format!("{what} lag grids differ")));
        }
    }
    let hellinger_pdf_x = hellinger(&reference.pdf_x, &surrogate.pdf_x)?;
    let hellinger_pdf_r = hellinger(&reference.pdf_r, &surrogate.pdf_r)?;
    let rel_l2_acf_x = relative_l2(&surrogate.acf_x.values, &reference.acf_x.values)?;
    let rel_l2_acf_r = relative_l2(&surrogate.acf_r.values, &reference.acf_r.values)?;
    let rel_l2_ccf_x = relative_l2(&surrogate.ccf_x.values, &reference.ccf_x.values)?;
    let rel_l2_ccf_r = relative_l2(&surrogate.ccf_r.values, &reference.ccf_r.values)?;
    let pass = hellinger_pdf_x <= cfg.hellinger_max
        && rel_l2_acf_x <= cfg.rel_l2_max
        && rel_l2_ccf_x <= cfg.rel_l2_max;
    Ok(ComparisonSummary {
        hellinger_pdf_x,
        hellinger_pdf_r,
        rel_l2_acf_x,
        rel_l2_acf_r,
        rel_l2_ccf_x,
        rel_l2_ccf_r,
        hellinger_max: cfg.hellinger_max,
        rel_l2_max: cfg.rel_l2_max,
        pass,
    })
}
