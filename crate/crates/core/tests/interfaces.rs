//! Wire formats shared with the Python estimator.

use lumen_core::analysis::{
    aggregate_metrics, compute_rdm, read_features_csv, read_metrics_csv, write_metrics_csv, MetricRecord,
};
use lumen_core::dataset::{plan_dataset, read_manifest, DatasetSpec};
use lumen_core::gmm::{decode_output, encode_output, g_hat, gmm_pdf, grid_mse, relative_g_error};
use lumen_core::{DiscretePdf, GmmParams, HgPhase, ThetaGrid};
use std::fs;

#[test]
fn estimator_json_parses_and_reserializes() {
    let text = r#"{"K": 3, "pi": [0.2, 0.3, 0.5], "m": [0.1, 0.9, 2.0], "sigma": [0.05, 0.3, 1.0]}"#;
    let p = GmmParams::from_json(text).unwrap();
    assert_eq!(p.k(), 3);
    assert_eq!(p.means(), [0.1, 0.9, 2.0]);
    assert_eq!(GmmParams::from_json(&p.to_json()).unwrap(), p);
    assert!(GmmParams::from_json(r#"{"K": 2, "pi": [1.0], "m": [0.1], "sigma": [0.2]}"#).is_err());
    assert!(GmmParams::from_json(r#"{"K": 1, "pi": [1.0], "m": [0.1], "sigma": [0.2], "x": 1}"#).is_err());
}

#[test]
fn decoded_network_output_scores_against_hg_target() {
    let target = DiscretePdf::from_phase(&HgPhase::new(0.8).unwrap(), ThetaGrid::default()).unwrap();
    // Network outputs for a single narrow forward component.
    let raw = [1.0, 0.08, 0.12];
    let params = decode_output(&raw, 1).unwrap();
    let pdf = gmm_pdf(&params, ThetaGrid::default()).unwrap();
    let mse = grid_mse(&pdf, &target).unwrap();
    assert!(mse.is_finite() && mse > 0.0);
    let est = g_hat(&params).unwrap();
    assert!(est > 0.5 && est < 1.0, "{est}");
    assert!(relative_g_error(0.8, est).unwrap() >= 0.0);
    let back = decode_output(&encode_output(&params).unwrap(), 1).unwrap();
    assert!((back.sigmas()[0] - params.sigmas()[0]).abs() < 1e-12);
}

#[test]
fn metrics_csv_round_trip_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let row = |d: &str, id: usize, tissue: &str, g: f64, mse: f64| MetricRecord {
        dataset: d.into(),
        image_id: format!("test/{tissue}_{g}_{id}"),
        tissue: tissue.into(),
        g,
        mse,
        g_hat: g,
        rel_error: 1.0,
    };
    let a: Vec<_> = (0..6).map(|i| row("", i, "Muscle", 0.6, 0.010 + 0.001 * i as f64)).collect();
    let b: Vec<_> = (0..6).map(|i| row("", i, "Muscle", 0.6, 0.020 + 0.001 * i as f64)).collect();
    let (pa, pb) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    write_metrics_csv(&pa, &a).unwrap();
    write_metrics_csv(&pb, &b).unwrap();
    let header = fs::read_to_string(&pa).unwrap();
    assert!(header.starts_with("dataset,image_id,tissue,g,mse,g_hat,rel_error\n"));

    let mut all = read_metrics_csv(&pa, "DS2").unwrap();
    all.extend(read_metrics_csv(&pb, "DS1").unwrap());
    let summary = aggregate_metrics(&all, "DS2").unwrap();
    let ds1 = summary.overall.iter().find(|s| s.dataset == "DS1").unwrap();
    let expected = (0.0125 - 0.0225) / 0.0225 * 100.0;
    assert!((ds1.gain_percent.unwrap() - expected).abs() < 1e-9);
    assert_eq!(summary.comparisons.len(), 1);
    // Complete separation of 6 vs 6: two-sided exact p = 2/C(12,6).
    assert!((summary.comparisons[0].p_value - 2.0 / 924.0).abs() < 1e-12);
    assert!(summary.to_csv().lines().count() == 1 + summary.groups.len() + summary.overall.len());
    assert!(summary.comparisons_csv().starts_with("dataset,reference,g,p_value\nDS1,DS2,0.60,"));
}

#[test]
fn features_csv_feeds_rdm() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("features.csv");
    fs::write(&path, "image_id,f0,f1\na,0,0\nb,3,4\nc,0,1\n").unwrap();
    let feats = read_features_csv(&path).unwrap();
    assert_eq!(feats[1].0, "b");
    let rdm = compute_rdm(&feats.into_iter().map(|(_, f)| f).collect::<Vec<_>>()).unwrap();
    assert_eq!(rdm.get(0, 1), 5.0);
    assert_eq!(rdm.get(2, 0), 1.0);
    fs::write(&path, "image_id,f0\na,zero\n").unwrap();
    assert!(read_features_csv(&path).is_err());
}

#[test]
fn manifest_lines_are_self_describing() {
    let dir = tempfile::tempdir().unwrap();
    let spec = DatasetSpec::named("DS5").unwrap();
    let plan = plan_dataset(&spec, 0).unwrap();
    let path = dir.path().join("manifest.jsonl");
    let text: String = plan[..3].iter().map(|r| serde_json::to_string(r).unwrap() + "\n").collect();
    fs::write(&path, &text).unwrap();
    let first: serde_json::Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    for key in ["path", "tissue", "mu_a", "mu_s", "g", "seed", "split", "dataset", "n_photons", "delta_r_mm", "n_r"] {
        assert!(first.get(key).is_some(), "missing {key}");
    }
    assert_eq!(first["split"], "train");
    assert_eq!(read_manifest(&path).unwrap(), plan[..3]);
}
