//! File formats: trajectory CSV with JSON sidecar, JSON artifacts for the
//! scaler / bins / network, loss-history CSV, and run manifests.
//!
//! Re-running a stage with the same configuration must reproduce every file
//! byte for byte, so nothing here records wall-clock time, and all maps are
//! ordered.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::binning::BinningScheme;
use crate::error::{Error, Result};
use crate::features::{FeatureSpec, StandardScaler};
use crate::l96::{L96Params, Trajectory};
use crate::linalg::Mat;
use crate::net::{QsNetwork, TrainConfig};
use crate::rng::fnv1a;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// Write a trajectory as `t,X_0..X_{N-1},r_0..r_{N-1}` rows at full double
/// precision (17 significant digits).
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory) -> Result<()> {
    let n = traj.n_sites();
    let mut w = BufWriter::new(File::create(path)?);
    let mut header = String::from("t");
    for i in 0..n {
        header.push_str(&format!(",X_{i}"));
    }
    for i in 0..n {
        header.push_str(&format!(",r_{i}"));
    }
    writeln!(w, "{header}")?;
    for j in 0..traj.len() {
        write!(w, "{:.16e}", traj.times[j])?;
        for v in traj.x.row(j) {
            write!(w, ",{v:.16e}")?;
        }
        for v in traj.r.row(j) {
            write!(w, ",{v:.16e}")?;
        }
        writeln!(w)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trajectory_csv(path: &Path) -> Result<Trajectory> {
    let mut lines = BufReader::new(File::open(path)?).lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format(format!("{}: empty file", path.display())))??;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.first() != Some(&"t") || !(cols.len() - 1).is_multiple_of(2) {
        return Err(Error::Format(format!(
            "{}: unexpected header {header:?}",
            path.display()
        )));
    }
    let n = (cols.len() - 1) / 2;
    for (i, c) in cols[1..=n].iter().enumerate() {
        if *c != format!("X_{i}") {
            return Err(Error::Format(format!(
                "{}: column {} is {c:?}, expected X_{i}",
                path.display(),
                i + 1
            )));
        }
    }
    let mut times = Vec::new();
    let mut x_rows: Vec<Vec<f64>> = Vec::new();
    let mut r_rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in lines.enumerate() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let parse = |s: Option<&str>| -> Result<f64> {
            s.ok_or_else(|| {
                Error::Format(format!("{}:{}: short row", path.display(), lineno + 2))
            })?
            .parse::<f64>()
            .map_err(|e| Error::Format(format!("{}:{}: {e}", path.display(), lineno + 2)))
        };
        times.push(parse(fields.next())?);
        let mut xr = Vec::with_capacity(n);
        for _ in 0..n {
            xr.push(parse(fields.next())?);
        }
        let mut rr = Vec::with_capacity(n);
        for _ in 0..n {
            rr.push(parse(fields.next())?);
        }
        x_rows.push(xr);
        r_rows.push(rr);
    }
    Ok(Trajectory {
        times,
        x: Mat::from_rows(&x_rows),
        r: Mat::from_rows(&r_rows),
    })
}

/// Sidecar describing how a trajectory file was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub params: L96Params,
    pub seed: u64,
    pub burn_in: f64,
    pub t_end: f64,
    pub tool_version: String,
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let reader = BufReader::new(File::open(path)?);
    Ok(serde_json::from_reader(reader)?)
}

/// Trained-network artifact with enough provenance to re-run or refuse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkArtifact {
    pub network: QsNetwork,
    pub train_config: TrainConfig,
    pub feature_spec: FeatureSpec,
    /// Hash binding the network to the preprocessing that produced its
    /// training features.
    pub feature_hash: String,
    pub tool_version: String,
}

/// Content hash binding a feature spec, scaler and bin edges together.
/// Any downstream artifact carrying a different value was built against a
/// different preprocessing pipeline.
pub fn feature_pipeline_hash(
    spec: &FeatureSpec,
    scaler: &StandardScaler,
    scheme: &BinningScheme,
) -> String {
    #[derive(Serialize)]
    struct HashInput<'a> {
        spec: &'a FeatureSpec,
        mean: &'a [f64],
        std: &'a [f64],
        edges: Vec<&'a [f64]>,
        n_bins: usize,
    }
    let input = HashInput {
        spec,
        mean: &scaler.mean,
        std: &scaler.std,
        edges: scheme.sites.iter().map(|s| s.edges.as_slice()).collect(),
        n_bins: scheme.n_bins,
    };
    let bytes = serde_json::to_vec(&input).expect("hash input serializes");
    format!("{:016x}", fnv1a(&bytes))
}

pub fn write_loss_history_csv(path: &Path, history: &[f64]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "iteration,loss")?;
    for (i, loss) in history.iter().enumerate() {
        writeln!(w, "{i},{loss:.16e}")?;
    }
    w.flush()?;
    Ok(())
}

/// FNV-1a hash of a file's bytes, hex encoded.
pub fn file_hash(path: &Path) -> Result<String> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    Ok(format!("{:016x}", fnv1a(&bytes)))
}

/// Stage record written next to every output: what ran, from which
/// configuration, and the content hashes of everything it produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub config: serde_json::Value,
    pub seed: u64,
    pub artifacts: BTreeMap<String, String>,
    pub tool_version: String,
}

impl RunManifest {
    pub fn new<C: Serialize>(stage: &str, config: &C, seed: u64) -> Self {
        Self {
            stage: stage.to_string(),
            config: serde_json::to_value(config).expect("config serializes"),
            seed,
            artifacts: BTreeMap::new(),
            tool_version: TOOL_VERSION.to_string(),
        }
    }

    pub fn record(&mut self, dir: &Path, file_name: &str) -> Result<()> {
        self.artifacts
            .insert(file_name.to_string(), file_hash(&dir.join(file_name))?);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::Locality;

    fn tmp_dir(tag: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("qsn-artifacts-{tag}-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn toy_trajectory() -> Trajectory {
        let mut x = Mat::zeros(5, 3);
        let mut r = Mat::zeros(5, 3);
        for j in 0..5 {
            for site in 0..3 {
                x.row_mut(j)[site] = (j as f64 * 0.611 + site as f64).sin() * 7.3;
                r.row_mut(j)[site] = (j as f64 * 0.377 - site as f64).cos() / 3.0;
            }
        }
        Trajectory {
            times: (0..5).map(|j| j as f64 * 0.01).collect(),
            x,
            r,
        }
    }

    #[test]
    fn trajectory_csv_round_trips_exactly() {
        let dir = tmp_dir("roundtrip");
        let path = dir.join("traj.csv");
        let traj = toy_trajectory();
        write_trajectory_csv(&path, &traj).unwrap();
        let back = read_trajectory_csv(&path).unwrap();
        assert_eq!(traj, back);

        let header = std::fs::read_to_string(&path)
            .unwrap()
            .lines()
            .next()
            .unwrap()
            .to_string();
        assert_eq!(header, "t,X_0,X_1,X_2,r_0,r_1,r_2");
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn trajectory_csv_rejects_bad_header() {
        let dir = tmp_dir("badheader");
        let path = dir.join("bad.csv");
        std::fs::write(&path, "time,X_0,r_0\n0.0,1.0,2.0\n").unwrap();
        assert!(matches!(
            read_trajectory_csv(&path),
            Err(Error::Format(_))
        ));
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn rewriting_identical_inputs_is_byte_identical() {
        let dir = tmp_dir("bytes");
        let (p1, p2) = (dir.join("a.csv"), dir.join("b.csv"));
        let traj = toy_trajectory();
        write_trajectory_csv(&p1, &traj).unwrap();
        write_trajectory_csv(&p2, &traj).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
        assert_eq!(file_hash(&p1).unwrap(), file_hash(&p2).unwrap());
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn feature_hash_tracks_all_inputs() {
        let spec = FeatureSpec::x_only(vec![0, 9], Locality::FullVector);
        let scaler = StandardScaler {
            mean: vec![0.0, 1.0],
            std: vec![1.0, 2.0],
        };
        let targets = Mat::from_rows(
            &(0..40).map(|i| vec![i as f64]).collect::<Vec<_>>(),
        );
        let scheme = crate::binning::fit_bins(&targets, 4).unwrap();
        let h0 = feature_pipeline_hash(&spec, &scaler, &scheme);
        assert_eq!(h0, feature_pipeline_hash(&spec, &scaler, &scheme));

        let spec2 = FeatureSpec::x_only(vec![0, 10], Locality::FullVector);
        assert_ne!(h0, feature_pipeline_hash(&spec2, &scaler, &scheme));
        let scaler2 = StandardScaler {
            mean: vec![0.0, 1.5],
            std: vec![1.0, 2.0],
        };
        assert_ne!(h0, feature_pipeline_hash(&spec, &scaler2, &scheme));
    }

    #[test]
    fn json_floats_round_trip_bit_exactly() {
        // values whose shortest decimal form is misparsed by 1 ULP unless
        // serde_json's float_roundtrip feature is active
        let dir = tmp_dir("ulp");
        let hard = vec![
            f64::from_bits(0xc00c_fdcb_5a44_044a),
            f64::from_bits(0xbf87_295b_653d_3c80),
            -3.623_923_020_554_262_7,
            0.1 + 0.2,
        ];
        let path = dir.join("floats.json");
        save_json(&path, &hard).unwrap();
        let back: Vec<f64> = load_json(&path).unwrap();
        for (a, b) in hard.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits(), "{a:?} vs {b:?}");
        }
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn json_artifacts_round_trip() {
        let dir = tmp_dir("json");
        let scaler = StandardScaler {
            mean: vec![0.5],
            std: vec![2.0],
        };
        let path = dir.join("scaler.json");
        save_json(&path, &scaler).unwrap();
        let back: StandardScaler = load_json(&path).unwrap();
        assert_eq!(scaler, back);
        std::fs::remove_dir_all(dir).ok();
    }
}
