//! Property tests for the structural invariants of the pipeline.

use proptest::prelude::*;

use qsn_core::binning::fit_bins;
use qsn_core::features::StandardScaler;
use qsn_core::l96::{ab2_update, coupling_r, L96Params, Trajectory};
use qsn_core::linalg::Mat;
use qsn_core::net::softmax_heads;

fn finite_vec(len: usize, scale: f64) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-scale..scale, len)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Every training target lands in exactly one bin, member lists
    /// partition the row set, and the index round-trips through the values.
    #[test]
    fn quantile_bins_partition_and_round_trip(
        mut values in prop::collection::vec(-100.0f64..100.0, 40..200),
        m in 2usize..8,
    ) {
        // spread duplicates apart so quantile edges stay distinct
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for i in 1..values.len() {
            if values[i] - values[i - 1] < 1e-9 {
                values[i] = values[i - 1] + 1e-6 * (i as f64);
            }
        }
        let targets = Mat::from_rows(&values.iter().map(|&v| vec![v]).collect::<Vec<_>>());
        let scheme = fit_bins(&targets, m).unwrap();
        let site = &scheme.sites[0];
        let mut seen = vec![false; values.len()];
        for (b, members) in site.members.iter().enumerate() {
            prop_assert!(!members.is_empty());
            for (&row, &val) in members.iter().zip(&site.values[b]) {
                prop_assert_eq!(scheme.bin_index(0, val), b);
                prop_assert!(!seen[row]);
                seen[row] = true;
            }
        }
        prop_assert!(seen.iter().all(|&s| s));
        // totality incl. clamping far outside the observed range
        for probe in [-1e9, 1e9, values[0], *values.last().unwrap()] {
            prop_assert!(scheme.bin_index(0, probe) < m);
        }
    }

    /// The subgrid coupling is linear in the fast variables.
    #[test]
    fn coupling_is_linear(
        y1 in finite_vec(4 * 6, 10.0),
        y2 in finite_vec(4 * 6, 10.0),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let params = L96Params {
            n_sites: 6,
            micro_per_site: 4,
            ..L96Params::unimodal()
        };
        let combo: Vec<f64> = y1.iter().zip(&y2).map(|(u, v)| a * u + b * v).collect();
        let lhs = coupling_r(&combo, &params).unwrap();
        let r1 = coupling_r(&y1, &params).unwrap();
        let r2 = coupling_r(&y2, &params).unwrap();
        for i in 0..6 {
            prop_assert!((lhs[i] - (a * r1[i] + b * r2[i])).abs() < 1e-10);
        }
    }

    /// Per-head softmax sums to one and ignores a per-head logit offset.
    #[test]
    fn softmax_normalized_and_shift_invariant(
        logits in finite_vec(12, 30.0),
        shift in -50.0f64..50.0,
    ) {
        let (heads, bins) = (3, 4);
        let mut pmf = vec![0.0; 12];
        softmax_heads(&logits, heads, bins, &mut pmf);
        for h in 0..heads {
            let s: f64 = pmf[h * bins..(h + 1) * bins].iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-12);
        }
        let shifted: Vec<f64> = logits.iter().map(|v| v + shift).collect();
        let mut pmf2 = vec![0.0; 12];
        softmax_heads(&shifted, heads, bins, &mut pmf2);
        for (p, q) in pmf.iter().zip(&pmf2) {
            prop_assert!((p - q).abs() < 1e-12);
        }
    }

    /// Zero tendency leaves the AB2 update at the current state.
    #[test]
    fn ab2_zero_tendency_identity(state in finite_vec(10, 100.0), dt in 1e-4f64..0.1) {
        let zeros = vec![0.0; 10];
        let mut out = vec![0.0; 10];
        ab2_update(&state, &zeros, Some(&zeros), dt, &mut out);
        prop_assert_eq!(&out, &state);
        ab2_update(&state, &zeros, None, dt, &mut out);
        prop_assert_eq!(&out, &state);
    }

    /// Fitting after standardizing yields zero mean and unit deviation.
    #[test]
    fn scaler_normalizes_whatever_it_fit(
        rows in 4usize..40,
        seed in 0u64..1000,
    ) {
        let cols = 3;
        let data: Vec<Vec<f64>> = (0..rows)
            .map(|i| {
                (0..cols)
                    .map(|c| ((i as f64 + 1.3) * (c as f64 + 0.7) + seed as f64 * 0.01).sin()
                        * (c as f64 + 1.0)
                        + i as f64 * 0.1)
                    .collect()
            })
            .collect();
        let mut m = Mat::from_rows(&data);
        let scaler = StandardScaler::fit(&m).unwrap();
        scaler.apply(&mut m);
        let refit = StandardScaler::fit(&m).unwrap();
        for c in 0..cols {
            prop_assert!(refit.mean[c].abs() < 1e-9);
            prop_assert!((refit.std[c] - 1.0).abs() < 1e-9);
        }
    }

    /// Trajectory CSV persistence is lossless for arbitrary finite data.
    #[test]
    fn trajectory_csv_round_trip(
        rows in 1usize..20,
        n in 1usize..6,
        seed in 0u64..10_000,
    ) {
        let mut x = Mat::zeros(rows, n);
        let mut r = Mat::zeros(rows, n);
        for j in 0..rows {
            for s in 0..n {
                let u = (j * n + s) as f64 + seed as f64;
                x.row_mut(j)[s] = (u * 0.7311).sin() * 10f64.powi((seed % 17) as i32 - 8);
                r.row_mut(j)[s] = (u * 0.3979).cos() * 3.0;
            }
        }
        let traj = Trajectory {
            times: (0..rows).map(|j| j as f64 * 0.01).collect(),
            x,
            r,
        };
        let dir = std::env::temp_dir().join(format!(
            "qsn-prop-{}-{seed}-{rows}-{n}",
            std::process::id()
        ));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("t.csv");
        qsn_core::artifacts::write_trajectory_csv(&path, &traj).unwrap();
        let back = qsn_core::artifacts::read_trajectory_csv(&path).unwrap();
        std::fs::remove_dir_all(&dir).ok();
        prop_assert_eq!(traj, back);
    }
}
