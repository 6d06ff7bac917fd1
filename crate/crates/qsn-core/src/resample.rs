//! Conditional resampling of training data through predicted bin pmfs.
//!
//! Stochastic mode draws a bin from the head's pmf, then a uniform member of
//! that bin, so every emitted value is a datum the full model actually
//! produced. The two stages collapse to a single weighted draw over all
//! training points with weights `w_i = ρ_{m(i)} / |B_{m(i)}|`; the explicit
//! single-stage sampler below exists to verify that identity. Deterministic
//! mode takes the argmax bin's training mean instead.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binning::BinningScheme;
use crate::error::{Error, Result};
use crate::net::{argmax, forward, QsNetwork};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SamplerMode {
    #[default]
    Stochastic,
    Deterministic,
}

/// Categorical draw of a bin index in accordance with `pmf`.
pub fn sample_bin<R: Rng>(pmf: &[f64], rng: &mut R) -> Result<usize> {
    let total: f64 = pmf.iter().sum();
    if (total - 1.0).abs() > 1e-9 || pmf.iter().any(|p| !(*p >= 0.0)) {
        return Err(Error::Numeric(format!(
            "pmf is not normalized (sum {total})"
        )));
    }
    let u: f64 = rng.gen_range(0.0..1.0);
    let mut cum = 0.0;
    for (m, &p) in pmf.iter().enumerate() {
        cum += p;
        if u < cum {
            return Ok(m);
        }
    }
    Ok(pmf.len() - 1)
}

/// Uniform draw over the training values recorded in one bin.
pub fn sample_from_bin<R: Rng>(
    scheme: &BinningScheme,
    site: usize,
    bin: usize,
    rng: &mut R,
) -> Result<f64> {
    let values = &scheme.sites[site].values[bin];
    if values.is_empty() {
        return Err(Error::InsufficientData(format!(
            "site {site} bin {bin} has no members to resample"
        )));
    }
    Ok(values[rng.gen_range(0..values.len())])
}

/// Single-stage weighted draw over all training points of a site, with
/// weights `w_i = Σ_m |B_m|⁻¹ ρ_m 1(r_i ∈ B_m)`. Equivalent in distribution
/// to `sample_bin` followed by `sample_from_bin`.
pub fn sample_weighted_single_stage<R: Rng>(
    scheme: &BinningScheme,
    site: usize,
    pmf: &[f64],
    rng: &mut R,
) -> Result<f64> {
    let total: f64 = pmf.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Numeric(format!(
            "pmf is not normalized (sum {total})"
        )));
    }
    let bins = &scheme.sites[site];
    let u: f64 = rng.gen_range(0.0..1.0);
    let mut cum = 0.0;
    let mut last = f64::NAN;
    for (m, values) in bins.values.iter().enumerate() {
        let w = pmf[m] / values.len() as f64;
        for &v in values {
            cum += w;
            last = v;
            if u < cum {
                return Ok(v);
            }
        }
    }
    Ok(last)
}

/// Mean training value of the argmax bin (deterministic surrogate).
pub fn deterministic_value(scheme: &BinningScheme, site: usize, pmf: &[f64]) -> f64 {
    scheme.sites[site].means[argmax(pmf)]
}

/// Draw the next subgrid tendency for every head of the network.
///
/// `input` must already be standardized with the training scaler. In
/// stochastic mode each head consumes its own RNG stream from `rngs`.
pub fn sample_r(
    net: &QsNetwork,
    scheme: &BinningScheme,
    input: &[f64],
    mode: SamplerMode,
    rngs: &mut [ChaCha8Rng],
) -> Result<Vec<f64>> {
    let (n_heads, n_bins) = (net.arch.n_heads, net.arch.n_bins);
    if scheme.n_sites() != n_heads || scheme.n_bins != n_bins {
        return Err(Error::ArtifactMismatch(format!(
            "scheme has {} sites × {} bins, network expects {} × {}",
            scheme.n_sites(),
            scheme.n_bins,
            n_heads,
            n_bins
        )));
    }
    if mode == SamplerMode::Stochastic && rngs.len() != n_heads {
        return Err(Error::Config(format!(
            "{} RNG streams for {} heads",
            rngs.len(),
            n_heads
        )));
    }
    let (_, pmf) = forward(net, input)?;
    let mut out = vec![0.0; n_heads];
    for h in 0..n_heads {
        let head_pmf = &pmf[h * n_bins..(h + 1) * n_bins];
        out[h] = match mode {
            SamplerMode::Deterministic => deterministic_value(scheme, h, head_pmf),
            SamplerMode::Stochastic => {
                let rng = &mut rngs[h];
                let bin = sample_bin(head_pmf, rng)?;
                sample_from_bin(scheme, h, bin, rng)?
            }
        };
    }
    Ok(out)
}
