//! Two-layer Lorenz 96 model on a periodic ring.
//!
//! Each of the `N` macroscopic variables `X_n` is damped, forced and advected
//! around the ring, and receives a subgrid tendency `r_n` aggregated from `L`
//! fast variables `Y_{l,n}`:
//!
//! ```text
//!   dX_n/dt = X_{n-1}(X_{n+1} - X_{n-2}) - X_n ∓ F + r_n
//!   r_n     = (h_x/L) Σ_l Y_{l,n}
//!   dY_{l,n}/dt = (1/ε)[Y_{l+1,n}(Y_{l-1,n} - Y_{l+2,n}) - Y_{l,n} + h_y X_n]
//! ```
//!
//! Boundary conditions are periodic in both layers, with the fast variables
//! forming one long ring: `Y_{l+L,n} = Y_{l,n+1}`. Time stepping is the
//! two-step Adams-Bashforth scheme, bootstrapped with a forward Euler step.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Mat;

/// Sign convention for the constant forcing term in the macro equation.
///
/// `MinusF` applies the forcing as `... - X_n - F + r_n`; `PlusF` flips it to
/// the classical convention `... - X_n + F + r_n`. Both yield bounded chaos,
/// but they are not mirror images: at `h_x = -2` only `PlusF` produces the
/// bimodal X distribution, so the convention is part of the experiment
/// configuration rather than a fixed constant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ForcingConvention {
    #[default]
    MinusF,
    PlusF,
}

/// Physical and numerical parameters of the two-layer system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L96Params {
    /// Number of macroscopic sites `N`.
    pub n_sites: usize,
    /// Fast variables per site `L`.
    pub micro_per_site: usize,
    /// Forcing magnitude `F`.
    pub forcing: f64,
    /// Micro → macro coupling `h_x`.
    pub coupling_hx: f64,
    /// Macro → micro coupling `h_y`.
    pub coupling_hy: f64,
    /// Timescale parameter `ε`.
    pub epsilon: f64,
    /// Macro time step.
    pub dt: f64,
    #[serde(default)]
    pub forcing_convention: ForcingConvention,
}

impl L96Params {
    /// Unimodal setting: `{N, L, F, h_x, h_y, ε} = {18, 20, 10, -1, 1, 0.5}`.
    pub fn unimodal() -> Self {
        Self {
            n_sites: 18,
            micro_per_site: 20,
            forcing: 10.0,
            coupling_hx: -1.0,
            coupling_hy: 1.0,
            epsilon: 0.5,
            dt: 0.01,
            forcing_convention: ForcingConvention::MinusF,
        }
    }

    /// Bimodal setting: as [`L96Params::unimodal`] but with `h_x = -2`.
    pub fn bimodal() -> Self {
        Self {
            coupling_hx: -2.0,
            ..Self::unimodal()
        }
    }

    /// Total number of fast variables `K = N·L`.
    pub fn micro_total(&self) -> usize {
        self.n_sites * self.micro_per_site
    }

    /// Signed forcing term as it appears in the macro right-hand side.
    fn forcing_term(&self) -> f64 {
        match self.forcing_convention {
            ForcingConvention::MinusF => -self.forcing,
            ForcingConvention::PlusF => self.forcing,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_sites < 4 {
            return Err(Error::Config(format!(
                "n_sites must be >= 4 for the advection stencil, got {}",
                self.n_sites
            )));
        }
        if self.micro_per_site < 4 {
            return Err(Error::Config(format!(
                "micro_per_site must be >= 4 for the micro stencil, got {}",
                self.micro_per_site
            )));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::Config("epsilon must be > 0".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config("dt must be > 0".into()));
        }
        Ok(())
    }
}

/// Complete state of the coupled system.
///
/// `y` is stored site-major: index `n * L + l`. Under this layout the
/// double-periodic boundary condition `Y_{l+L,n} = Y_{l,n+1}` makes the fast
/// layer a single ring of `N·L` values, so micro stencils wrap modulo `N·L`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FullState {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl FullState {
    pub fn zeros(params: &L96Params) -> Self {
        Self {
            x: vec![0.0; params.n_sites],
            y: vec![0.0; params.micro_total()],
        }
    }

    /// `X_n` i.i.d. standard normal, `Y = 0`.
    pub fn random_init<R: Rng>(params: &L96Params, rng: &mut R) -> Self {
        Self {
            x: (0..params.n_sites).map(|_| standard_normal(rng)).collect(),
            y: vec![0.0; params.micro_total()],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().all(|v| v.is_finite()) && self.y.iter().all(|v| v.is_finite())
    }
}

// Box-Muller draw; keeps the normal distribution out of the dependency tree.
fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Tendencies of both layers at one instant.
#[derive(Debug, Clone)]
pub struct FullTendency {
    pub dx: Vec<f64>,
    pub dy: Vec<f64>,
}

/// Subgrid tendency `r_n = (h_x/L) Σ_l Y_{l,n}`.
pub fn coupling_r(y: &[f64], params: &L96Params) -> Result<Vec<f64>> {
    let (n, l) = (params.n_sites, params.micro_per_site);
    if y.len() != n * l {
        return Err(Error::Config(format!(
            "micro vector has length {}, expected {}",
            y.len(),
            n * l
        )));
    }
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::CorruptState("non-finite micro variable".into()));
    }
    let scale = params.coupling_hx / l as f64;
    Ok((0..n)
        .map(|site| scale * y[site * l..(site + 1) * l].iter().sum::<f64>())
        .collect())
}

/// Macro tendency `dX/dt` given the subgrid term `r`.
pub fn rhs_macro(x: &[f64], r: &[f64], params: &L96Params) -> Result<Vec<f64>> {
    let n = params.n_sites;
    if x.len() != n || r.len() != n {
        return Err(Error::Config(format!(
            "state length mismatch: x = {}, r = {}, expected {}",
            x.len(),
            r.len(),
            n
        )));
    }
    let f = params.forcing_term();
    let mut dx = vec![0.0; n];
    for i in 0..n {
        let im1 = x[(i + n - 1) % n];
        let ip1 = x[(i + 1) % n];
        let im2 = x[(i + n - 2) % n];
        dx[i] = im1 * (ip1 - im2) - x[i] + f + r[i];
    }
    Ok(dx)
}

/// Micro tendency `dY/dt`; the fast ring wraps modulo `N·L`.
pub fn rhs_micro(x: &[f64], y: &[f64], params: &L96Params) -> Result<Vec<f64>> {
    let (n, l) = (params.n_sites, params.micro_per_site);
    let k = n * l;
    if x.len() != n || y.len() != k {
        return Err(Error::Config(format!(
            "state length mismatch: x = {}, y = {}, expected {} and {}",
            x.len(),
            y.len(),
            n,
            k
        )));
    }
    let inv_eps = 1.0 / params.epsilon;
    let hy = params.coupling_hy;
    let mut dy = vec![0.0; k];
    for g in 0..k {
        let gp1 = y[(g + 1) % k];
        let gm1 = y[(g + k - 1) % k];
        let gp2 = y[(g + 2) % k];
        dy[g] = inv_eps * (gp1 * (gm1 - gp2) - y[g] + hy * x[g / l]);
    }
    Ok(dy)
}

fn full_tendency(state: &FullState, params: &L96Params) -> Result<FullTendency> {
    let r = coupling_r(&state.y, params)?;
    Ok(FullTendency {
        dx: rhs_macro(&state.x, &r, params)?,
        dy: rhs_micro(&state.x, &state.y, params)?,
    })
}

/// One AB2 update on a flat state slice:
/// `out = curr + dt·(3/2 f_curr − 1/2 f_prev)`, falling back to forward
/// Euler when no previous tendency exists yet.
pub fn ab2_update(curr: &[f64], f_curr: &[f64], f_prev: Option<&[f64]>, dt: f64, out: &mut [f64]) {
    match f_prev {
        Some(prev) => {
            for i in 0..curr.len() {
                out[i] = curr[i] + dt * (1.5 * f_curr[i] - 0.5 * prev[i]);
            }
        }
        None => {
            for i in 0..curr.len() {
                out[i] = curr[i] + dt * f_curr[i];
            }
        }
    }
}

/// Advance the full system by one macro step. Returns the new state and the
/// tendency evaluated at `curr`, to be fed back in as `prev` next step.
pub fn ab2_step(
    curr: &FullState,
    prev: Option<&FullTendency>,
    params: &L96Params,
) -> Result<(FullState, FullTendency)> {
    let f_curr = full_tendency(curr, params)?;
    let mut next = FullState {
        x: vec![0.0; curr.x.len()],
        y: vec![0.0; curr.y.len()],
    };
    ab2_update(
        &curr.x,
        &f_curr.dx,
        prev.map(|p| p.dx.as_slice()),
        params.dt,
        &mut next.x,
    );
    ab2_update(
        &curr.y,
        &f_curr.dy,
        prev.map(|p| p.dy.as_slice()),
        params.dt,
        &mut next.y,
    );
    Ok((next, f_curr))
}

/// Time-indexed record of the macroscopic state and the subgrid tendency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `[T+1 × N]` macro states.
    pub x: Mat,
    /// `[T+1 × N]` subgrid tendencies.
    pub r: Mat,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_sites(&self) -> usize {
        self.x.cols()
    }

    pub fn dt(&self) -> f64 {
        if self.times.len() > 1 {
            self.times[1] - self.times[0]
        } else {
            0.0
        }
    }

    /// Rows with `t >= times[mid]`, i.e. the half held out of training.
    pub fn test_half_start(&self) -> usize {
        self.len() / 2
    }

    /// Copy of the first `rows` records (training-half extraction).
    pub fn head(&self, rows: usize) -> Trajectory {
        assert!(rows <= self.len());
        let n = self.n_sites();
        let mut x = Mat::zeros(rows, n);
        let mut r = Mat::zeros(rows, n);
        for j in 0..rows {
            x.row_mut(j).copy_from_slice(self.x.row(j));
            r.row_mut(j).copy_from_slice(self.r.row(j));
        }
        Trajectory {
            times: self.times[..rows].to_vec(),
            x,
            r,
        }
    }
}

/// Integrate the full two-layer system and record `(X, r)` at every macro
/// step after the burn-in window. The recorded clock restarts at zero.
pub fn generate_trajectory(
    params: &L96Params,
    t_end: f64,
    burn_in: f64,
    init: FullState,
    max_abs: f64,
) -> Result<Trajectory> {
    params.validate()?;
    if !(t_end > 0.0) {
        return Err(Error::Config("t_end must be > 0".into()));
    }
    let n_burn = (burn_in / params.dt).round() as usize;
    let n_rec = (t_end / params.dt).round() as usize;

    let mut state = init;
    let mut prev: Option<FullTendency> = None;
    for step in 0..n_burn {
        let (next, f) = ab2_step(&state, prev.as_ref(), params)?;
        check_bounded(&next, step, -(n_burn as isize) + step as isize, params, max_abs)?;
        state = next;
        prev = Some(f);
    }

    let n = params.n_sites;
    let mut x = Mat::zeros(n_rec + 1, n);
    let mut r = Mat::zeros(n_rec + 1, n);
    let mut times = Vec::with_capacity(n_rec + 1);

    x.row_mut(0).copy_from_slice(&state.x);
    r.row_mut(0).copy_from_slice(&coupling_r(&state.y, params)?);
    times.push(0.0);

    for step in 0..n_rec {
        let (next, f) = ab2_step(&state, prev.as_ref(), params)?;
        check_bounded(&next, step, step as isize, params, max_abs)?;
        state = next;
        prev = Some(f);
        x.row_mut(step + 1).copy_from_slice(&state.x);
        r.row_mut(step + 1)
            .copy_from_slice(&coupling_r(&state.y, params)?);
        times.push((step + 1) as f64 * params.dt);
    }

    Ok(Trajectory { times, x, r })
}

fn check_bounded(
    state: &FullState,
    step: usize,
    t_step: isize,
    params: &L96Params,
    max_abs: f64,
) -> Result<()> {
    let bad = !state.is_finite() || state.x.iter().any(|v| v.abs() > max_abs);
    if bad {
        return Err(Error::BlowUp {
            step,
            time: t_step as f64 * params.dt,
            detail: format!("|X| exceeded {max_abs} or became non-finite"),
        });
    }
    Ok(())
}

/// Integrate the macro equation alone with a prescribed constant subgrid
/// term (the reduced model with its closure switched off).
pub fn integrate_macro_only(
    x0: &[f64],
    r_const: &[f64],
    params: &L96Params,
    n_steps: usize,
) -> Result<Mat> {
    let n = params.n_sites;
    let mut out = Mat::zeros(n_steps + 1, n);
    out.row_mut(0).copy_from_slice(x0);
    let mut x = x0.to_vec();
    let mut prev: Option<Vec<f64>> = None;
    for step in 0..n_steps {
        let f_curr = rhs_macro(&x, r_const, params)?;
        let mut next = vec![0.0; n];
        ab2_update(&x, &f_curr, prev.as_deref(), params.dt, &mut next);
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::BlowUp {
                step,
                time: step as f64 * params.dt,
                detail: "macro-only integration became non-finite".into(),
            });
        }
        out.row_mut(step + 1).copy_from_slice(&next);
        x = next;
        prev = Some(f_curr);
    }
    Ok(out)
}
