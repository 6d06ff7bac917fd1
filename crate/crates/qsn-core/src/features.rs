//! Lagged feature construction and standardization.
//!
//! A feature row for time index `j` concatenates the macro state at the
//! configured `x_lags` (and optionally the subgrid tendency at `r_lags`),
//! and is paired with the next-step tendency `r_{j+1}` as the target.
//! `FullVector` emits one row per time index using all sites; `Local` emits
//! one row per `(time, site)` pair using only that site's values, so a single
//! surrogate can be applied independently at every site.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::l96::Trajectory;
use crate::linalg::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Locality {
    #[default]
    FullVector,
    Local,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSpec {
    /// Time lags (in macro steps) applied to `X`, ascending, no duplicates.
    pub x_lags: Vec<usize>,
    /// Time lags applied to `r`; may be empty for X-only conditioning.
    #[serde(default)]
    pub r_lags: Vec<usize>,
    #[serde(default)]
    pub locality: Locality,
}

impl FeatureSpec {
    pub fn x_only(x_lags: Vec<usize>, locality: Locality) -> Self {
        Self {
            x_lags,
            r_lags: Vec::new(),
            locality,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.x_lags.is_empty() && self.r_lags.is_empty() {
            return Err(Error::Config("feature spec has no lags at all".into()));
        }
        for (name, lags) in [("x_lags", &self.x_lags), ("r_lags", &self.r_lags)] {
            if !lags.windows(2).all(|w| w[0] < w[1]) {
                return Err(Error::Config(format!(
                    "{name} must be strictly ascending, got {lags:?}"
                )));
            }
        }
        Ok(())
    }

    /// Warm-up length: feature rows exist only for `j >= max_lag`.
    pub fn max_lag(&self) -> usize {
        self.x_lags
            .iter()
            .chain(self.r_lags.iter())
            .copied()
            .max()
            .unwrap_or(0)
    }

    pub fn lags_per_site(&self) -> usize {
        self.x_lags.len() + self.r_lags.len()
    }

    pub fn feature_dim(&self, n_sites: usize) -> usize {
        match self.locality {
            Locality::FullVector => n_sites * self.lags_per_site(),
            Locality::Local => self.lags_per_site(),
        }
    }

    /// Number of softmax heads the surrogate needs for this spec.
    pub fn n_heads(&self, n_sites: usize) -> usize {
        match self.locality {
            Locality::FullVector => n_sites,
            Locality::Local => 1,
        }
    }
}

/// Feature rows, aligned raw targets, and the bookkeeping to map rows back
/// to trajectory indices.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    /// `[rows × dim]`, unstandardized until a scaler is applied.
    pub features: Mat,
    /// `[rows × n_heads]` raw next-step tendencies.
    pub targets: Mat,
    pub spec: FeatureSpec,
    /// First trajectory index with a complete lag window.
    pub j_max: usize,
    /// Sites represented per time index (N for local, 1 for full-vector rows).
    rows_per_time: usize,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.features.rows()
    }

    /// Restrict a local feature matrix to the rows of one site, e.g. to
    /// train a surrogate at a single location and apply it everywhere.
    pub fn select_local_site(&self, site: usize) -> FeatureMatrix {
        assert_eq!(self.spec.locality, Locality::Local, "local matrices only");
        assert!(site < self.rows_per_time);
        let idx: Vec<usize> = (0..self.rows())
            .filter(|row| row % self.rows_per_time == site)
            .collect();
        FeatureMatrix {
            features: self.features.gather_rows(&idx),
            targets: self.targets.gather_rows(&idx),
            spec: self.spec.clone(),
            j_max: self.j_max,
            rows_per_time: 1,
        }
    }

    pub fn n_heads(&self) -> usize {
        self.targets.cols()
    }

    /// Trajectory time index `j` whose lag window produced the given row.
    pub fn time_index(&self, row: usize) -> usize {
        self.j_max + row / self.rows_per_time
    }

    /// Site a local row belongs to (always 0 for full-vector rows).
    pub fn site_index(&self, row: usize) -> usize {
        row % self.rows_per_time
    }
}

/// Assemble one full-vector feature row ending at index `j` of the records.
pub fn fill_row_full(x: &Mat, r: &Mat, spec: &FeatureSpec, j: usize, out: &mut [f64]) {
    let n = x.cols();
    let mut k = 0;
    for &lag in &spec.x_lags {
        out[k..k + n].copy_from_slice(x.row(j - lag));
        k += n;
    }
    for &lag in &spec.r_lags {
        out[k..k + n].copy_from_slice(r.row(j - lag));
        k += n;
    }
}

/// Assemble one local feature row for `site` ending at index `j`.
pub fn fill_row_local(x: &Mat, r: &Mat, spec: &FeatureSpec, j: usize, site: usize, out: &mut [f64]) {
    let mut k = 0;
    for &lag in &spec.x_lags {
        out[k] = x.row(j - lag)[site];
        k += 1;
    }
    for &lag in &spec.r_lags {
        out[k] = r.row(j - lag)[site];
        k += 1;
    }
}

/// Build the (unstandardized) feature matrix for a trajectory.
pub fn build_features(traj: &Trajectory, spec: &FeatureSpec) -> Result<FeatureMatrix> {
    spec.validate()?;
    let t_last = traj.len().saturating_sub(1);
    let j_max = spec.max_lag();
    if t_last < j_max + 1 {
        return Err(Error::InsufficientData(format!(
            "trajectory has {} states; lag spec needs at least {} (max lag {} plus a target)",
            traj.len(),
            j_max + 2,
            j_max
        )));
    }
    let n = traj.n_sites();
    let n_times = t_last - j_max;
    let dim = spec.feature_dim(n);

    match spec.locality {
        Locality::FullVector => {
            let mut features = Mat::zeros(n_times, dim);
            let mut targets = Mat::zeros(n_times, n);
            for (row, j) in (j_max..t_last).enumerate() {
                fill_row_full(&traj.x, &traj.r, spec, j, features.row_mut(row));
                targets.row_mut(row).copy_from_slice(traj.r.row(j + 1));
            }
            Ok(FeatureMatrix {
                features,
                targets,
                spec: spec.clone(),
                j_max,
                rows_per_time: 1,
            })
        }
        Locality::Local => {
            let mut features = Mat::zeros(n_times * n, dim);
            let mut targets = Mat::zeros(n_times * n, 1);
            for (ti, j) in (j_max..t_last).enumerate() {
                for site in 0..n {
                    let row = ti * n + site;
                    fill_row_local(&traj.x, &traj.r, spec, j, site, features.row_mut(row));
                    targets.row_mut(row)[0] = traj.r.row(j + 1)[site];
                }
            }
            Ok(FeatureMatrix {
                features,
                targets,
                spec: spec.clone(),
                j_max,
                rows_per_time: n,
            })
        }
    }
}

/// Column-wise standardization fitted on training features.
///
/// Uses the population convention (denominator `n`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StandardScaler {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl StandardScaler {
    pub fn fit(features: &Mat) -> Result<Self> {
        let (rows, cols) = (features.rows(), features.cols());
        if rows < 2 {
            return Err(Error::InsufficientData(
                "scaler needs at least 2 rows".into(),
            ));
        }
        let inv_n = 1.0 / rows as f64;
        let mut mean = vec![0.0; cols];
        for i in 0..rows {
            for (m, v) in mean.iter_mut().zip(features.row(i)) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m *= inv_n;
        }
        let mut var = vec![0.0; cols];
        for i in 0..rows {
            for ((s, v), m) in var.iter_mut().zip(features.row(i)).zip(&mean) {
                let d = v - m;
                *s += d * d;
            }
        }
        let mut std = vec![0.0; cols];
        for (c, (s, m)) in var.iter().zip(&mean).enumerate() {
            let sd = (s * inv_n).sqrt();
            if sd <= 1e-12 * (1.0 + m.abs()) {
                return Err(Error::DegenerateFeature { column: c });
            }
            std[c] = sd;
        }
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply_row(&self, row: &mut [f64]) {
        for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }

    /// Standardize a whole matrix in place.
    pub fn apply(&self, features: &mut Mat) {
        assert_eq!(features.cols(), self.dim());
        for i in 0..features.rows() {
            self.apply_row(features.row_mut(i));
        }
    }
}
