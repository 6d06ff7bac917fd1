//! Browser bindings for the L96 closure pipeline.
//!
//! Three interactive operations, all pure compute behind `wasm-bindgen`
//! (the page owns every canvas and DOM node):
//!
//! * [`FullModelSim`] — step the coupled two-layer system live and stream
//!   the macro ring, the subgrid tendency and a running density estimate.
//! * [`ClosureLab`] — generate a short reference run, train a small
//!   quantized softmax network in increments, then simulate the closed
//!   reduced model and return overlay curves (pdf / acf) for both runs.
//! * [`ClosureLab::pmf_at`] — inspect the conditional bin pmf the network
//!   predicts at any reference time index.
//!
//! Curve-returning methods pack `grid` and one value row per curve into a
//! single `Float64Array`, row-major; the JS side splits it.

use wasm_bindgen::prelude::*;

use qsn_core::binning::{fit_bins, BinningScheme};
use qsn_core::experiment::label_rows;
use qsn_core::features::{build_features, FeatureSpec, Locality, StandardScaler};
use qsn_core::l96::{
    ab2_step, coupling_r, generate_trajectory, ForcingConvention, FullState, FullTendency,
    L96Params, Trajectory,
};
use qsn_core::linalg::Mat;
use qsn_core::net::{
    backward, forward, forward_batch, loss_from_pmf, misclassification, rmsprop_update,
    QsNetwork, QsnArchitecture, RmsPropState, TrainConfig,
};
use qsn_core::reduced::{simulate_reduced, FeatureAnchor, QsnClosure, ReducedRunConfig};
use qsn_core::resample::SamplerMode;
use qsn_core::rng::SeedTree;
use qsn_core::stats::{acf, empirical_pdf_on_grid, silverman_bandwidth, uniform_grid};

fn err_js(e: impl std::fmt::Display) -> JsValue {
    JsValue::from_str(&e.to_string())
}

fn demo_params(bimodal: bool) -> L96Params {
    let mut p = if bimodal {
        L96Params::bimodal()
    } else {
        L96Params::unimodal()
    };
    p.forcing_convention = ForcingConvention::PlusF;
    p
}

/// Live two-layer integration with a rolling sample window for the density.
#[wasm_bindgen]
pub struct FullModelSim {
    params: L96Params,
    state: FullState,
    prev: Option<FullTendency>,
    t: f64,
    window: std::collections::VecDeque<f64>,
    window_cap: usize,
}

#[wasm_bindgen]
impl FullModelSim {
    /// `h_x` and `epsilon` are free; everything else follows the benchmark
    /// settings. `plus_f` selects the forcing convention.
    #[wasm_bindgen(constructor)]
    pub fn new(coupling_hx: f64, epsilon: f64, plus_f: bool, seed: u64) -> Result<FullModelSim, JsValue> {
        let mut params = demo_params(false);
        params.coupling_hx = coupling_hx;
        params.epsilon = epsilon;
        if !plus_f {
            params.forcing_convention = ForcingConvention::MinusF;
        }
        params.validate().map_err(err_js)?;
        let mut rng = SeedTree::new(seed).stream("data");
        let state = FullState::random_init(&params, &mut rng);
        Ok(FullModelSim {
            params,
            state,
            prev: None,
            t: 0.0,
            window: std::collections::VecDeque::new(),
            window_cap: 40_000,
        })
    }

    /// Advance `n` macro steps; returns the new model time.
    pub fn step(&mut self, n: usize) -> Result<f64, JsValue> {
        for _ in 0..n {
            let (next, f) = ab2_step(&self.state, self.prev.as_ref(), &self.params).map_err(err_js)?;
            if !next.is_finite() {
                return Err(err_js("simulation blew up"));
            }
            self.state = next;
            self.prev = Some(f);
            self.t += self.params.dt;
            for &v in &self.state.x {
                if self.window.len() == self.window_cap {
                    self.window.pop_front();
                }
                self.window.push_back(v);
            }
        }
        Ok(self.t)
    }

    pub fn n_sites(&self) -> usize {
        self.params.n_sites
    }

    pub fn x(&self) -> Vec<f64> {
        self.state.x.clone()
    }

    pub fn r(&self) -> Vec<f64> {
        coupling_r(&self.state.y, &self.params).unwrap_or_default()
    }

    /// `[grid | density]` of the pooled X window, or empty until the window
    /// holds enough samples.
    pub fn pdf(&self, points: usize) -> Vec<f64> {
        if self.window.len() < 1000 {
            return Vec::new();
        }
        let samples: Vec<f64> = self.window.iter().copied().collect();
        let Ok(h) = silverman_bandwidth(&samples) else {
            return Vec::new();
        };
        let lo = samples.iter().cloned().fold(f64::INFINITY, f64::min) - 3.0 * h;
        let hi = samples.iter().cloned().fold(f64::NEG_INFINITY, f64::max) + 3.0 * h;
        let grid = uniform_grid(lo, hi, points);
        match empirical_pdf_on_grid(&samples, &grid) {
            Ok(curve) => {
                let mut out = curve.grid;
                out.extend(curve.values);
                out
            }
            Err(_) => Vec::new(),
        }
    }
}

/// Demo-scale closure experiment: reference run, incremental training,
/// reduced simulation, overlay statistics.
#[wasm_bindgen]
pub struct ClosureLab {
    params: L96Params,
    spec: FeatureSpec,
    n_bins: usize,
    seed: u64,
    reference: Option<Trajectory>,
    features: Option<Mat>,
    labels: Vec<usize>,
    scaler: Option<StandardScaler>,
    scheme: Option<BinningScheme>,
    net: Option<QsNetwork>,
    opt: Option<RmsPropState>,
    train_cfg: TrainConfig,
    train_rng: rand_chacha::ChaCha8Rng,
    iterations_done: usize,
    reduced: Option<Trajectory>,
}

#[wasm_bindgen]
impl ClosureLab {
    #[wasm_bindgen(constructor)]
    pub fn new(bimodal: bool, seed: u64) -> ClosureLab {
        let train_rng = SeedTree::new(seed).stream("train");
        ClosureLab {
            params: demo_params(bimodal),
            spec: FeatureSpec::x_only(vec![0, 9], Locality::FullVector),
            n_bins: 10,
            seed,
            reference: None,
            features: None,
            labels: Vec::new(),
            scaler: None,
            scheme: None,
            net: None,
            opt: None,
            train_cfg: TrainConfig::default(),
            train_rng,
            iterations_done: 0,
            reduced: None,
        }
    }

    /// Integrate the full model for `t_end` time units and fit the
    /// preprocessing on the first half.
    pub fn generate(&mut self, t_end: f64) -> Result<usize, JsValue> {
        let mut rng = SeedTree::new(self.seed).stream("data");
        let init = FullState::random_init(&self.params, &mut rng);
        let reference =
            generate_trajectory(&self.params, t_end, 5.0, init, 1e6).map_err(err_js)?;
        let training_half = reference.head(reference.len() / 2 + 1);
        let mut fm = build_features(&training_half, &self.spec).map_err(err_js)?;
        let scaler = StandardScaler::fit(&fm.features).map_err(err_js)?;
        scaler.apply(&mut fm.features);
        let scheme = fit_bins(&fm.targets, self.n_bins).map_err(err_js)?;
        self.labels = label_rows(&scheme, &fm.targets);

        let arch = QsnArchitecture {
            input_dim: self.spec.feature_dim(self.params.n_sites),
            hidden: vec![64, 64],
            leaky_slope: 0.01,
            n_heads: self.spec.n_heads(self.params.n_sites),
            n_bins: self.n_bins,
        };
        let net = QsNetwork::init(arch, self.seed ^ 0x9e3779b97f4a7c15).map_err(err_js)?;
        self.opt = Some(RmsPropState::zeros(&net));
        self.net = Some(net);
        self.features = Some(fm.features);
        self.scaler = Some(scaler);
        self.scheme = Some(scheme);
        self.reference = Some(reference);
        self.iterations_done = 0;
        self.reduced = None;
        Ok(self.reference.as_ref().unwrap().len())
    }

    /// Run `n` minibatch iterations; returns the last minibatch loss.
    pub fn train_steps(&mut self, n: usize) -> Result<f64, JsValue> {
        use rand::Rng;
        let features = self.features.as_ref().ok_or_else(|| err_js("generate first"))?;
        let net = self.net.as_mut().ok_or_else(|| err_js("generate first"))?;
        let opt = self.opt.as_mut().unwrap();
        let rows = features.rows();
        let heads = net.arch.n_heads;
        let mut last = f64::NAN;
        let batch_size = self.train_cfg.batch_size;
        let mut batch_labels = vec![0usize; batch_size * heads];
        for _ in 0..n {
            let idx: Vec<usize> = (0..batch_size)
                .map(|_| self.train_rng.gen_range(0..rows))
                .collect();
            let batch = features.gather_rows(&idx);
            for (k, &i) in idx.iter().enumerate() {
                batch_labels[k * heads..(k + 1) * heads]
                    .copy_from_slice(&self.labels[i * heads..(i + 1) * heads]);
            }
            let pass = forward_batch(net, &batch).map_err(err_js)?;
            last = loss_from_pmf(&pass.pmf, &batch_labels, heads, net.arch.n_bins);
            if !last.is_finite() {
                return Err(err_js("training diverged"));
            }
            let grads = backward(net, &batch, &pass, &batch_labels);
            rmsprop_update(net, &grads, opt, &self.train_cfg);
            self.iterations_done += 1;
        }
        Ok(last)
    }

    pub fn iterations_done(&self) -> usize {
        self.iterations_done
    }

    /// Mean per-head argmax misclassification on the training set.
    pub fn misclassification(&self) -> Result<f64, JsValue> {
        let net = self.net.as_ref().ok_or_else(|| err_js("train first"))?;
        let features = self.features.as_ref().unwrap();
        let rates = misclassification(net, features, &self.labels).map_err(err_js)?;
        Ok(rates.iter().sum::<f64>() / rates.len() as f64)
    }

    /// Simulate the closed reduced model over the reference time range.
    pub fn simulate(&mut self, stochastic: bool) -> Result<usize, JsValue> {
        let reference = self.reference.as_ref().ok_or_else(|| err_js("generate first"))?;
        let net = self.net.as_ref().ok_or_else(|| err_js("train first"))?;
        let mode = if stochastic {
            SamplerMode::Stochastic
        } else {
            SamplerMode::Deterministic
        };
        let seeds = SeedTree::new(self.seed ^ 0x5bf0_3635);
        let mut closure = QsnClosure::new(
            net,
            self.scheme.as_ref().unwrap(),
            self.scaler.as_ref().unwrap(),
            &self.spec,
            mode,
            FeatureAnchor::UpdatedState,
            self.params.n_sites,
            &seeds,
        )
        .map_err(err_js)?;
        let cfg = ReducedRunConfig {
            t_end: *reference.times.last().unwrap(),
            mode,
            anchor: FeatureAnchor::UpdatedState,
            max_abs: 1e6,
        };
        let reduced = simulate_reduced(
            &self.params,
            &cfg,
            &self.spec,
            &mut closure,
            reference,
            self.spec.max_lag(),
        )
        .map_err(err_js)?;
        let rows = reduced.len();
        self.reduced = Some(reduced);
        Ok(rows)
    }

    /// `[grid | reference density | reduced density]` of X on the test half.
    pub fn pdf_overlay(&self, points: usize) -> Result<Vec<f64>, JsValue> {
        let reference = self.reference.as_ref().ok_or_else(|| err_js("generate first"))?;
        let reduced = self.reduced.as_ref().ok_or_else(|| err_js("simulate first"))?;
        let pool = |t: &Trajectory| -> Vec<f64> {
            let start = t.test_half_start();
            (start..t.len()).flat_map(|j| t.x.row(j).to_vec()).collect()
        };
        let (ref_pool, red_pool) = (pool(reference), pool(reduced));
        let h = silverman_bandwidth(&ref_pool)
            .map_err(err_js)?
            .max(silverman_bandwidth(&red_pool).map_err(err_js)?);
        let lo = ref_pool.iter().chain(&red_pool).cloned().fold(f64::INFINITY, f64::min);
        let hi = ref_pool
            .iter()
            .chain(&red_pool)
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        let grid = uniform_grid(lo - 3.0 * h, hi + 3.0 * h, points);
        let p = empirical_pdf_on_grid(&ref_pool, &grid).map_err(err_js)?;
        let q = empirical_pdf_on_grid(&red_pool, &grid).map_err(err_js)?;
        let mut out = p.grid;
        out.extend(p.values);
        out.extend(q.values);
        Ok(out)
    }

    /// `[lag time | reference acf | reduced acf]` of X, site-averaged, on
    /// the test half.
    pub fn acf_overlay(&self, max_lag_time: f64) -> Result<Vec<f64>, JsValue> {
        let reference = self.reference.as_ref().ok_or_else(|| err_js("generate first"))?;
        let reduced = self.reduced.as_ref().ok_or_else(|| err_js("simulate first"))?;
        let dt = reference.dt();
        let max_lag = (max_lag_time / dt).round() as usize;
        let averaged = |t: &Trajectory| -> Result<Vec<f64>, JsValue> {
            let start = t.test_half_start();
            let n = t.n_sites();
            let mut acc = vec![0.0; max_lag + 1];
            let mut series = vec![0.0; t.len() - start];
            for site in 0..n {
                for (k, j) in (start..t.len()).enumerate() {
                    series[k] = t.x.row(j)[site];
                }
                for (a, v) in acc.iter_mut().zip(acf(&series, max_lag).map_err(err_js)?) {
                    *a += v;
                }
            }
            Ok(acc.into_iter().map(|v| v / n as f64).collect())
        };
        let mut out: Vec<f64> = (0..=max_lag).map(|k| k as f64 * dt).collect();
        out.extend(averaged(reference)?);
        out.extend(averaged(reduced)?);
        Ok(out)
    }

    /// Predicted conditional pmf for `site` given the feature vector at
    /// reference index `j`, concatenated with the one-hot truth:
    /// `[pmf_0..pmf_{M-1} | true_bin]`.
    pub fn pmf_at(&self, j: usize, site: usize) -> Result<Vec<f64>, JsValue> {
        let reference = self.reference.as_ref().ok_or_else(|| err_js("generate first"))?;
        let net = self.net.as_ref().ok_or_else(|| err_js("train first"))?;
        let scaler = self.scaler.as_ref().unwrap();
        let scheme = self.scheme.as_ref().unwrap();
        let j_max = self.spec.max_lag();
        if j < j_max || j + 1 >= reference.len() {
            return Err(err_js(format!(
                "index must lie in [{j_max}, {})",
                reference.len() - 1
            )));
        }
        let mut row = vec![0.0; self.spec.feature_dim(self.params.n_sites)];
        qsn_core::features::fill_row_full(&reference.x, &reference.r, &self.spec, j, &mut row);
        scaler.apply_row(&mut row);
        let (_, pmf) = forward(net, &row).map_err(err_js)?;
        let m = self.n_bins;
        let mut out = pmf[site * m..(site + 1) * m].to_vec();
        let truth = scheme.bin_index(site, reference.r.row(j + 1)[site]);
        out.push(truth as f64);
        Ok(out)
    }

    pub fn n_sites(&self) -> usize {
        self.params.n_sites
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }
}
