//! Per-site binning of the subgrid tendency.
//!
//! Each output site gets `M` bins over its training targets — equal-count
//! quantile bins by default, or equal-width intervals over the observed
//! range. Bins follow the half-open convention `[e_m, e_{m+1})`, with values
//! below the first or above the last edge clamped into the outermost bins,
//! so `bin_index` is total on finite reals. Every bin keeps its member rows
//! (indices into the training set) and their raw values: the resampler draws
//! actual training data from them.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BinStrategy {
    /// Equal-count bins: edges at empirical quantiles. Never empty.
    #[default]
    Quantile,
    /// Equal-width intervals spanning the observed range. Lower
    /// misclassification floor on peaked marginals, but sparse tail bins.
    EqualWidth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteBins {
    /// `M + 1` ascending edge values (outermost edges behave as ±∞).
    pub edges: Vec<f64>,
    /// Training-row indices per bin.
    pub members: Vec<Vec<usize>>,
    /// Target values per bin, aligned with `members`.
    pub values: Vec<Vec<f64>>,
    /// Mean target value per bin (deterministic surrogate mode).
    pub means: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinningScheme {
    pub sites: Vec<SiteBins>,
    pub n_bins: usize,
}

impl BinningScheme {
    pub fn n_sites(&self) -> usize {
        self.sites.len()
    }

    /// Bin containing `value` at the given site.
    pub fn bin_index(&self, site: usize, value: f64) -> usize {
        bin_index_in(&self.sites[site].edges, value)
    }

    pub fn bin_count(&self, site: usize, bin: usize) -> usize {
        self.sites[site].members[bin].len()
    }
}

/// Half-open lookup over an ascending edge list, clamping into the outermost
/// bins: the index of the last interior edge `<= value`.
fn bin_index_in(edges: &[f64], value: f64) -> usize {
    let m = edges.len() - 1;
    edges[1..m].partition_point(|e| *e <= value).min(m - 1)
}

/// Fit `m` equal-count bins per target column.
pub fn fit_bins(targets: &Mat, m: usize) -> Result<BinningScheme> {
    fit_bins_with(targets, m, BinStrategy::Quantile)
}

/// Fit `m` bins per target column under the given edge strategy.
pub fn fit_bins_with(targets: &Mat, m: usize, strategy: BinStrategy) -> Result<BinningScheme> {
    if m < 2 {
        return Err(Error::Config(format!("bin count must be >= 2, got {m}")));
    }
    let rows = targets.rows();
    if rows < m {
        return Err(Error::InsufficientData(format!(
            "{rows} targets cannot fill {m} bins"
        )));
    }
    let mut sites = Vec::with_capacity(targets.cols());
    for site in 0..targets.cols() {
        let mut sorted: Vec<f64> = (0..rows).map(|i| targets.row(i)[site]).collect();
        if sorted.iter().any(|v| !v.is_finite()) {
            return Err(Error::CorruptState(format!(
                "non-finite target at site {site}"
            )));
        }
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut distinct = 1;
        for w in sorted.windows(2) {
            if w[1] > w[0] {
                distinct += 1;
            }
        }
        if distinct < m {
            return Err(Error::InsufficientData(format!(
                "site {site} has only {distinct} distinct target values for {m} bins"
            )));
        }

        let mut edges = Vec::with_capacity(m + 1);
        match strategy {
            BinStrategy::Quantile => {
                for k in 0..=m {
                    edges.push(sorted[(k * rows / m).min(rows - 1)]);
                }
            }
            BinStrategy::EqualWidth => {
                let (lo, hi) = (sorted[0], sorted[rows - 1]);
                let width = (hi - lo) / m as f64;
                for k in 0..=m {
                    edges.push(lo + width * k as f64);
                }
            }
        }

        let mut site_bins = SiteBins {
            edges,
            members: vec![Vec::new(); m],
            values: vec![Vec::new(); m],
            means: vec![0.0; m],
        };
        for row in 0..rows {
            let v = targets.row(row)[site];
            let b = bin_index_in(&site_bins.edges, v);
            site_bins.members[b].push(row);
            site_bins.values[b].push(v);
        }
        for b in 0..m {
            let n_b = site_bins.members[b].len();
            if n_b == 0 {
                return Err(Error::InsufficientData(format!(
                    "site {site} bin {b} is empty; targets too heavily tied for {m} quantile bins"
                )));
            }
            site_bins.means[b] = site_bins.values[b].iter().sum::<f64>() / n_b as f64;
        }
        sites.push(site_bins);
    }
    Ok(BinningScheme { sites, n_bins: m })
}
