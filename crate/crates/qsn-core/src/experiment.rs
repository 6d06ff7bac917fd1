//! Experiment orchestration: one configuration drives the four pipeline
//! stages (generate → train → simulate → validate), each available as an
//! in-memory function and as a directory-writing command backend. Named
//! recipes pin the configurations of the benchmark experiments.
//!
//! All randomness descends from the single `seed` through named streams:
//! `data` (initial condition), `init` (weights), `train` (minibatches) and
//! `simulate`/`sample` (per-member, per-head resampling draws).

use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::artifacts::{
    self, feature_pipeline_hash, load_json, save_json, NetworkArtifact, RunManifest,
    TrajectoryMeta,
};
use crate::binning::{fit_bins_with, BinStrategy, BinningScheme};
use crate::error::{Error, Result};
use crate::features::{build_features, FeatureSpec, Locality, StandardScaler};
use crate::l96::{generate_trajectory, FullState, L96Params, Trajectory};
use crate::net::{misclassification, train, QsNetwork, QsnArchitecture, TrainConfig};
use crate::reduced::{
    simulate_reduced, FeatureAnchor, QsnClosure, ReducedRunConfig,
};
use crate::resample::SamplerMode;
use crate::rng::SeedTree;
use crate::stats::{compare, paired_reports, ComparisonSummary, StatsConfig, StatsReport};

/// Reference-data stage settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    pub t_end: f64,
    pub burn_in: f64,
    /// Abort threshold on `max |X|` during generation.
    pub max_abs: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            t_end: 1000.0,
            burn_in: 10.0,
            max_abs: 1e6,
        }
    }
}

/// Network shape; input width and head count follow from the feature spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub hidden: Vec<usize>,
    pub leaky_slope: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256, 256],
            leaky_slope: 0.01,
        }
    }
}

/// Reduced-run stage settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateConfig {
    pub t_end: f64,
    pub mode: SamplerMode,
    #[serde(default)]
    pub anchor: FeatureAnchor,
    pub max_abs: f64,
    /// Independent members simulated with per-member seed streams.
    pub ensemble: usize,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            t_end: 1000.0,
            mode: SamplerMode::Stochastic,
            anchor: FeatureAnchor::UpdatedState,
            max_abs: 1e6,
            ensemble: 1,
        }
    }
}

impl SimulateConfig {
    pub fn run_config(&self) -> ReducedRunConfig {
        ReducedRunConfig {
            t_end: self.t_end,
            mode: self.mode,
            anchor: self.anchor,
            max_abs: self.max_abs,
        }
    }
}

/// Complete configuration of one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub seed: u64,
    pub model: L96Params,
    pub data: DataConfig,
    pub features: FeatureSpec,
    pub n_bins: usize,
    #[serde(default)]
    pub bin_strategy: BinStrategy,
    /// For local surrogates: train on this single site's rows only
    /// (applied at every site regardless). `None` pools all sites.
    #[serde(default)]
    pub local_training_site: Option<usize>,
    pub architecture: ArchConfig,
    pub training: TrainConfig,
    pub simulate: SimulateConfig,
    pub validation: StatsConfig,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.features.validate()?;
        self.training.validate()?;
        if self.n_bins < 2 {
            return Err(Error::Config("n_bins must be >= 2".into()));
        }
        if self.simulate.ensemble == 0 {
            return Err(Error::Config("ensemble must be >= 1".into()));
        }
        Ok(())
    }

    pub fn seed_tree(&self) -> SeedTree {
        SeedTree::new(self.seed)
    }
}

/// The five benchmark experiments.
pub const RECIPE_NAMES: [&str; 5] = [
    "unimodal-lag2",
    "bimodal-lag10",
    "bimodal-lag75",
    "local-stochastic",
    "local-deterministic",
];

/// Look up a named recipe.
///
/// All recipes use the classical `+F` forcing convention, which is the one
/// that reproduces the unimodal/bimodal density structure the settings are
/// named after.
pub fn recipe(name: &str) -> Result<ExperimentConfig> {
    let mut unimodal = L96Params::unimodal();
    unimodal.forcing_convention = crate::l96::ForcingConvention::PlusF;
    let mut bimodal = L96Params::bimodal();
    bimodal.forcing_convention = crate::l96::ForcingConvention::PlusF;

    let base = ExperimentConfig {
        name: name.to_string(),
        seed: 2020,
        model: unimodal.clone(),
        data: DataConfig::default(),
        features: FeatureSpec::x_only(vec![0, 9], Locality::FullVector),
        n_bins: 10,
        bin_strategy: BinStrategy::Quantile,
        local_training_site: None,
        architecture: ArchConfig::default(),
        training: TrainConfig::default(),
        simulate: SimulateConfig::default(),
        validation: StatsConfig::default(),
    };

    let cfg = match name {
        "unimodal-lag2" => base,
        "bimodal-lag10" => ExperimentConfig {
            model: bimodal,
            features: FeatureSpec::x_only((0..10).collect(), Locality::FullVector),
            ..base
        },
        "bimodal-lag75" => ExperimentConfig {
            model: bimodal,
            features: FeatureSpec::x_only((0..75).collect(), Locality::FullVector),
            ..base
        },
        "local-stochastic" => ExperimentConfig {
            features: FeatureSpec::x_only((0..75).collect(), Locality::Local),
            local_training_site: Some(0),
            ..base
        },
        "local-deterministic" => ExperimentConfig {
            features: FeatureSpec::x_only((0..75).collect(), Locality::Local),
            local_training_site: Some(0),
            simulate: SimulateConfig {
                mode: SamplerMode::Deterministic,
                ..SimulateConfig::default()
            },
            ..base
        },
        other => {
            return Err(Error::Config(format!(
                "unknown recipe {other:?}; available: {}",
                RECIPE_NAMES.join(", ")
            )))
        }
    };
    Ok(cfg)
}

pub struct GenerateOutput {
    pub trajectory: Trajectory,
    pub meta: TrajectoryMeta,
}

/// Stage 1: integrate the full two-layer system.
pub fn run_generate(cfg: &ExperimentConfig) -> Result<GenerateOutput> {
    cfg.validate()?;
    let mut rng = cfg.seed_tree().stream("data");
    let init = FullState::random_init(&cfg.model, &mut rng);
    let trajectory = generate_trajectory(
        &cfg.model,
        cfg.data.t_end,
        cfg.data.burn_in,
        init,
        cfg.data.max_abs,
    )?;
    Ok(GenerateOutput {
        trajectory,
        meta: TrajectoryMeta {
            params: cfg.model.clone(),
            seed: cfg.seed,
            burn_in: cfg.data.burn_in,
            t_end: cfg.data.t_end,
            tool_version: artifacts::TOOL_VERSION.to_string(),
        },
    })
}

pub struct TrainOutput {
    pub network: QsNetwork,
    pub scaler: StandardScaler,
    pub scheme: BinningScheme,
    pub loss_history: Vec<f64>,
    /// Per-head argmax misclassification on the training features.
    pub misclassification: Vec<f64>,
    pub feature_hash: String,
}

/// Stage 2: fit preprocessing on the first half of the trajectory and train
/// the network on it.
pub fn run_train(cfg: &ExperimentConfig, reference: &Trajectory) -> Result<TrainOutput> {
    cfg.validate()?;
    let train_rows = reference.len() / 2 + 1;
    let training_half = reference.head(train_rows);
    let mut fm = build_features(&training_half, &cfg.features)?;
    if let Some(site) = cfg.local_training_site {
        if cfg.features.locality != Locality::Local {
            return Err(Error::Config(
                "local_training_site only applies to local feature specs".into(),
            ));
        }
        if site >= reference.n_sites() {
            return Err(Error::Config(format!(
                "local_training_site {site} out of range for {} sites",
                reference.n_sites()
            )));
        }
        fm = fm.select_local_site(site);
    }
    let scaler = StandardScaler::fit(&fm.features)?;
    scaler.apply(&mut fm.features);
    let scheme = fit_bins_with(&fm.targets, cfg.n_bins, cfg.bin_strategy)?;
    let labels = label_rows(&scheme, &fm.targets);

    let n_sites = reference.n_sites();
    let arch = QsnArchitecture {
        input_dim: cfg.features.feature_dim(n_sites),
        hidden: cfg.architecture.hidden.clone(),
        leaky_slope: cfg.architecture.leaky_slope,
        n_heads: cfg.features.n_heads(n_sites),
        n_bins: cfg.n_bins,
    };
    let tree = cfg.seed_tree();
    let init_seed: u64 = tree.stream("init").gen();
    let mut network = QsNetwork::init(arch, init_seed)?;
    let mut train_rng = tree.stream("train");
    let loss_history = train(&mut network, &fm.features, &labels, &cfg.training, &mut train_rng)?;
    // training misclassification; local runs pool ~1M rows, so evaluation is
    // strided down to at most 100k of them
    let eval_cap = 100_000;
    let rows = fm.features.rows();
    let rates = if rows <= eval_cap {
        misclassification(&network, &fm.features, &labels)?
    } else {
        let stride = rows.div_ceil(eval_cap);
        let idx: Vec<usize> = (0..rows).step_by(stride).collect();
        let heads = network.arch.n_heads;
        let sub = fm.features.gather_rows(&idx);
        let sub_labels: Vec<usize> = idx
            .iter()
            .flat_map(|&i| labels[i * heads..(i + 1) * heads].iter().copied())
            .collect();
        misclassification(&network, &sub, &sub_labels)?
    };
    let feature_hash = feature_pipeline_hash(&cfg.features, &scaler, &scheme);
    Ok(TrainOutput {
        network,
        scaler,
        scheme,
        loss_history,
        misclassification: rates,
        feature_hash,
    })
}

/// True-bin labels for every `(row, head)` of a target matrix.
pub fn label_rows(scheme: &BinningScheme, targets: &crate::linalg::Mat) -> Vec<usize> {
    let heads = targets.cols();
    let mut labels = vec![0usize; targets.rows() * heads];
    for i in 0..targets.rows() {
        for h in 0..heads {
            labels[i * heads + h] = scheme.bin_index(h, targets.row(i)[h]);
        }
    }
    labels
}

/// Stage 3: one reduced-model member. `member` selects the seed stream.
pub fn run_simulate(
    cfg: &ExperimentConfig,
    trained: &TrainOutput,
    reference: &Trajectory,
    member: u64,
) -> Result<Trajectory> {
    cfg.validate()?;
    let expected = feature_pipeline_hash(&cfg.features, &trained.scaler, &trained.scheme);
    if expected != trained.feature_hash {
        return Err(Error::ArtifactMismatch(format!(
            "network was trained against feature pipeline {}, configuration yields {expected}",
            trained.feature_hash
        )));
    }
    if (reference.dt() - cfg.model.dt).abs() > 1e-12 {
        return Err(Error::Config(format!(
            "reference dt {} differs from configured dt {}",
            reference.dt(),
            cfg.model.dt
        )));
    }
    let tree = cfg.seed_tree();
    let member_seed: u64 = tree.stream_indexed("simulate", member).gen();
    let member_tree = SeedTree::new(member_seed);
    let mut closure = QsnClosure::new(
        &trained.network,
        &trained.scheme,
        &trained.scaler,
        &cfg.features,
        cfg.simulate.mode,
        cfg.simulate.anchor,
        reference.n_sites(),
        &member_tree,
    )?;
    let warm_at = cfg.features.max_lag();
    simulate_reduced(
        &cfg.model,
        &cfg.simulate.run_config(),
        &cfg.features,
        &mut closure,
        reference,
        warm_at,
    )
}

pub struct ValidateOutput {
    pub reference: StatsReport,
    pub reduced: StatsReport,
    pub summary: ComparisonSummary,
}

/// Stage 4: long-run statistics of both runs on their test halves.
pub fn run_validate(
    cfg: &ExperimentConfig,
    reference: &Trajectory,
    reduced: &Trajectory,
) -> Result<ValidateOutput> {
    let (ref_report, red_report) = paired_reports(reference, reduced, &cfg.validation)?;
    let summary = compare(&ref_report, &red_report, &cfg.validation)?;
    Ok(ValidateOutput {
        reference: ref_report,
        reduced: red_report,
        summary,
    })
}

// ---------------------------------------------------------------------------
// Directory-backed stage commands (the CLI calls straight into these).
// ---------------------------------------------------------------------------

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const TRAJECTORY_META_FILE: &str = "trajectory.meta.json";
pub const NETWORK_FILE: &str = "network.json";
pub const SCALER_FILE: &str = "scaler.json";
pub const BINS_FILE: &str = "bins.json";
pub const LOSS_HISTORY_FILE: &str = "loss_history.csv";
pub const TRAIN_SUMMARY_FILE: &str = "train_summary.json";
pub const STATS_REFERENCE_FILE: &str = "stats_reference.json";
pub const STATS_REDUCED_FILE: &str = "stats_reduced.json";
pub const VALIDATION_SUMMARY_FILE: &str = "validation_summary.json";

pub fn reduced_file_name(member: usize) -> String {
    format!("reduced_{member:03}.csv")
}

fn manifest_name(stage: &str) -> String {
    format!("manifest_{stage}.json")
}

fn write_manifest(
    dir: &Path,
    stage: &str,
    cfg: &ExperimentConfig,
    files: &[String],
) -> Result<()> {
    let mut manifest = RunManifest::new(stage, cfg, cfg.seed);
    for f in files {
        manifest.record(dir, f)?;
    }
    save_json(&dir.join(manifest_name(stage)), &manifest)
}

/// `generate --out dir`: trajectory CSV + sidecar + manifest.
pub fn generate_to_dir(cfg: &ExperimentConfig, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let out = run_generate(cfg)?;
    let path = dir.join(TRAJECTORY_FILE);
    artifacts::write_trajectory_csv(&path, &out.trajectory)?;
    save_json(&dir.join(TRAJECTORY_META_FILE), &out.meta)?;
    write_manifest(
        dir,
        "generate",
        cfg,
        &[TRAJECTORY_FILE.into(), TRAJECTORY_META_FILE.into()],
    )?;
    Ok(path)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub misclassification: Vec<f64>,
    pub mean_misclassification: f64,
    pub final_loss: f64,
    pub feature_hash: String,
}

/// `train --trajectory file --out dir`: network/scaler/bins JSON, loss
/// history CSV, summary + manifest.
pub fn train_to_dir(cfg: &ExperimentConfig, trajectory: &Path, dir: &Path) -> Result<TrainSummary> {
    std::fs::create_dir_all(dir)?;
    let reference = artifacts::read_trajectory_csv(trajectory)?;
    let out = run_train(cfg, &reference)?;
    save_json(
        &dir.join(NETWORK_FILE),
        &NetworkArtifact {
            network: out.network.clone(),
            train_config: cfg.training.clone(),
            feature_spec: cfg.features.clone(),
            feature_hash: out.feature_hash.clone(),
            tool_version: artifacts::TOOL_VERSION.to_string(),
        },
    )?;
    save_json(&dir.join(SCALER_FILE), &out.scaler)?;
    save_json(&dir.join(BINS_FILE), &out.scheme)?;
    artifacts::write_loss_history_csv(&dir.join(LOSS_HISTORY_FILE), &out.loss_history)?;
    let summary = TrainSummary {
        mean_misclassification: out.misclassification.iter().sum::<f64>()
            / out.misclassification.len() as f64,
        misclassification: out.misclassification.clone(),
        final_loss: *out.loss_history.last().unwrap(),
        feature_hash: out.feature_hash.clone(),
    };
    save_json(&dir.join(TRAIN_SUMMARY_FILE), &summary)?;
    write_manifest(
        dir,
        "train",
        cfg,
        &[
            NETWORK_FILE.into(),
            SCALER_FILE.into(),
            BINS_FILE.into(),
            LOSS_HISTORY_FILE.into(),
            TRAIN_SUMMARY_FILE.into(),
        ],
    )?;
    Ok(summary)
}

/// Load the training artifacts back from a directory, re-checking the
/// feature-pipeline hash against the configuration.
pub fn load_trained(cfg: &ExperimentConfig, dir: &Path) -> Result<TrainOutput> {
    let artifact: NetworkArtifact = load_json(&dir.join(NETWORK_FILE))?;
    let scaler: StandardScaler = load_json(&dir.join(SCALER_FILE))?;
    let scheme: BinningScheme = load_json(&dir.join(BINS_FILE))?;
    let expected = feature_pipeline_hash(&cfg.features, &scaler, &scheme);
    if artifact.feature_hash != expected {
        return Err(Error::ArtifactMismatch(format!(
            "network.json carries feature hash {}, artifacts in {} yield {expected}",
            artifact.feature_hash,
            dir.display()
        )));
    }
    Ok(TrainOutput {
        network: artifact.network,
        scaler,
        scheme,
        loss_history: Vec::new(),
        misclassification: Vec::new(),
        feature_hash: expected,
    })
}

/// `simulate --trajectory file --out dir`: one reduced CSV per ensemble
/// member, simulated on worker threads with independent seed streams.
pub fn simulate_to_dir(
    cfg: &ExperimentConfig,
    trained: &TrainOutput,
    reference: &Trajectory,
    dir: &Path,
) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let members: Vec<usize> = (0..cfg.simulate.ensemble).collect();
    let mut results: Vec<Option<Result<Trajectory>>> = Vec::new();
    results.resize_with(members.len(), || None);
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for &m in &members {
            handles.push((
                m,
                scope.spawn(move || run_simulate(cfg, trained, reference, m as u64)),
            ));
        }
        for (m, h) in handles {
            results[m] = Some(h.join().expect("simulation thread panicked"));
        }
    });
    let mut paths = Vec::new();
    let mut files = Vec::new();
    for (m, r) in results.into_iter().enumerate() {
        let traj = r.unwrap()?;
        let name = reduced_file_name(m);
        let path = dir.join(&name);
        artifacts::write_trajectory_csv(&path, &traj)?;
        files.push(name);
        paths.push(path);
    }
    write_manifest(dir, "simulate", cfg, &files)?;
    Ok(paths)
}

/// `validate --reference a --reduced b --out dir`: reports, per-figure
/// curve CSVs, summary + manifest. Returns the comparison summary.
pub fn validate_to_dir(
    cfg: &ExperimentConfig,
    reference: &Trajectory,
    reduced: &Trajectory,
    dir: &Path,
) -> Result<ComparisonSummary> {
    std::fs::create_dir_all(dir)?;
    let out = run_validate(cfg, reference, reduced)?;
    save_json(&dir.join(STATS_REFERENCE_FILE), &out.reference)?;
    save_json(&dir.join(STATS_REDUCED_FILE), &out.reduced)?;
    save_json(&dir.join(VALIDATION_SUMMARY_FILE), &out.summary)?;
    let curves_dir = dir.join("curves");
    std::fs::create_dir_all(&curves_dir)?;
    let mut files = vec![
        STATS_REFERENCE_FILE.to_string(),
        STATS_REDUCED_FILE.to_string(),
        VALIDATION_SUMMARY_FILE.to_string(),
    ];
    for (name, r, s) in [
        ("pdf_x", &out.reference.pdf_x, &out.reduced.pdf_x),
        ("pdf_r", &out.reference.pdf_r, &out.reduced.pdf_r),
        ("acf_x", &out.reference.acf_x, &out.reduced.acf_x),
        ("acf_r", &out.reference.acf_r, &out.reduced.acf_r),
        ("ccf_x", &out.reference.ccf_x, &out.reduced.ccf_x),
        ("ccf_r", &out.reference.ccf_r, &out.reduced.ccf_r),
    ] {
        let file = format!("curves/{name}.csv");
        write_curve_pair(&dir.join(&file), r, s)?;
        files.push(file);
    }
    write_manifest(dir, "validate", cfg, &files)?;
    Ok(out.summary)
}

fn write_curve_pair(
    path: &Path,
    reference: &crate::stats::Curve,
    surrogate: &crate::stats::Curve,
) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "grid,reference,surrogate")?;
    for i in 0..reference.grid.len() {
        writeln!(
            w,
            "{:.16e},{:.16e},{:.16e}",
            reference.grid[i], reference.values[i], surrogate.values[i]
        )?;
    }
    w.flush()?;
    Ok(())
}
