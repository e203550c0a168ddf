//! In-process round trips through the CLI layer: simulate -> fit -> report,
//! predict output consistency, and the backtest artifact contract.

mod common;

use nalgebra::DVector;

use regime_vi::cli::{self, PosteriorFile};
use regime_vi::config::parse_config_str;

fn read(path: &std::path::Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn simulate_fit_report_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse_config_str(r#"{"restarts": 2, "max_sweeps": 80, "seed": 7}"#).unwrap();

    cli::run_simulate(&cfg, dir.path(), 160, 3).unwrap();
    let dataset_csv = dir.path().join("dataset.csv");
    let csv = read(&dataset_csv);
    assert_eq!(csv.lines().count(), 161);
    assert!(csv.starts_with("x_1,x_2,x_3,x_4,y,true_cluster\n"));
    let truth: serde_json::Value = serde_json::from_str(&read(&dir.path().join("truth.json"))).unwrap();
    assert_eq!(truth["true_mu"].as_array().unwrap().len(), 3);
    assert_eq!(truth["true_assignments"].as_array().unwrap().len(), 160);

    let data = cli::load_dataset_csv(&dataset_csv).unwrap();
    assert_eq!(data.len(), 160);
    assert_eq!(data.dim(), 4);
    assert!(data.x.column(3).iter().all(|&v| v == 1.0));

    cli::run_fit(&cfg, &dataset_csv, dir.path()).unwrap();
    let pf: PosteriorFile =
        serde_json::from_str(&read(&dir.path().join("posterior.json"))).unwrap();
    assert_eq!(pf.k, 3);
    assert_eq!(pf.n, 4);
    let count_sum: f64 = pf.phi_column_sums.iter().sum();
    assert!((count_sum - 160.0).abs() < 1e-6);

    let trace = read(&dir.path().join("elbo_trace.csv"));
    let elbos: Vec<f64> = trace
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(!elbos.is_empty());
    for pair in elbos.windows(2) {
        assert!(pair[1] >= pair[0] - 1e-8 * (1.0 + pair[1].abs()));
    }
    assert_eq!(*elbos.last().unwrap(), pf.final_elbo);

    let report_txt = read(&dir.path().join("report.txt"));
    assert!(report_txt.contains("Cluster 1"));
    assert!(report_txt.contains("x_4"));
    assert_eq!(
        cli::run_report(&dir.path().join("posterior.json")).unwrap(),
        report_txt
    );
}

#[test]
fn predict_output_is_consistent_with_stored_posterior() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse_config_str(r#"{"restarts": 2, "max_sweeps": 60, "seed": 1}"#).unwrap();
    cli::run_simulate(&cfg, dir.path(), 120, 9).unwrap();
    cli::run_fit(&cfg, &dir.path().join("dataset.csv"), dir.path()).unwrap();

    let posterior_path = dir.path().join("posterior.json");
    let x = [0.4, -0.2, 0.1, 1.0];
    let out = cli::run_predict(&cfg, &posterior_path, &x).unwrap();
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    let field = |name: &str| -> Vec<f64> {
        v[name]
            .as_array()
            .unwrap()
            .iter()
            .map(|x| x.as_f64().unwrap())
            .collect()
    };
    let weights = field("weights");
    let means = field("means");
    let variances = field("variances");
    assert_eq!(weights.len(), 3);
    assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    assert!(variances.iter().all(|&v| v >= 1.0)); // sigma^2 floor with sigma = 1

    // recompute the component and mixture means from the stored posterior
    let pf: PosteriorFile = serde_json::from_str(&read(&posterior_path)).unwrap();
    let xv = DVector::from_column_slice(&x);
    for k in 0..3 {
        let bx = DVector::from_column_slice(&pf.beta_hat[k]).dot(&xv);
        assert!((means[k] - bx).abs() < 1e-12);
    }
    let mean = v["mean"].as_f64().unwrap();
    let expected: f64 = weights.iter().zip(&means).map(|(w, m)| w * m).sum();
    assert!((mean - expected).abs() < 1e-10);

    let variance = v["variance"].as_f64().unwrap();
    let second: f64 = weights
        .iter()
        .zip(&means)
        .zip(&variances)
        .map(|((w, m), s2)| w * (s2 + m * m))
        .sum();
    assert!((variance - (second - mean * mean)).abs() < 1e-10);

    let interval = field("interval");
    assert!(interval[0] < mean && mean < interval[1]);
}

#[test]
fn predict_single_cluster_is_linear_in_beta() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = parse_config_str(r#"{"K": 1, "restarts": 1, "max_sweeps": 40}"#).unwrap();
    cli::run_simulate(&cfg, dir.path(), 80, 4).unwrap();
    cli::run_fit(&cfg, &dir.path().join("dataset.csv"), dir.path()).unwrap();

    let posterior_path = dir.path().join("posterior.json");
    let pf: PosteriorFile = serde_json::from_str(&read(&posterior_path)).unwrap();
    let x = [1.5, -0.7, 0.2, 1.0];
    let out = cli::run_predict(&cfg, &posterior_path, &x).unwrap();
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["weights"].as_array().unwrap().len(), 1);
    assert!((v["weights"][0].as_f64().unwrap() - 1.0).abs() < 1e-14);
    let bx = DVector::from_column_slice(&pf.beta_hat[0])
        .dot(&DVector::from_column_slice(&x));
    assert!((v["mean"].as_f64().unwrap() - bx).abs() < 1e-12);
}

#[test]
fn backtest_writes_artifacts_and_reruns_identically() {
    let dir = tempfile::tempdir().unwrap();
    let spx = dir.path().join("spx.csv");
    let agg = dir.path().join("agg.csv");
    let jpy = dir.path().join("jpy.csv");
    common::write_price_csv(&spx, 100, 620);
    common::write_price_csv(&agg, 200, 620);
    common::write_price_csv(&jpy, 300, 620);

    let cfg = parse_config_str(
        r#"{"window": 60, "refit_every": 10, "restarts": 2, "max_sweeps": 40}"#,
    )
    .unwrap();
    let out_a = dir.path().join("a");
    let result = cli::run_backtest(&cfg, &spx, &agg, &jpy, &out_a).unwrap();
    assert!(!result.dates.is_empty());
    assert_eq!(result.predicted.len(), result.actual.len());
    assert_eq!(result.predicted.len(), result.dates.len());

    let metrics: serde_json::Value =
        serde_json::from_str(&read(&out_a.join("metrics.json"))).unwrap();
    for key in ["pearson_r", "r_squared", "p_value", "failed_dates"] {
        assert!(metrics.get(key).is_some(), "missing {key}");
    }
    let preds = read(&out_a.join("predictions.csv"));
    assert!(preds.starts_with("date,pred_mean,actual,q1,q2,q3\n"));
    assert_eq!(preds.lines().count(), result.dates.len() + 1);
    let tercile: Vec<Vec<f64>> =
        serde_json::from_str(&read(&out_a.join("tercile.json"))).unwrap();
    for row in &tercile {
        assert!((row.iter().sum::<f64>() - 100.0).abs() < 0.01);
    }
    assert!(out_a.join("scatter.csv").exists());

    // byte-identical rerun
    let out_b = dir.path().join("b");
    cli::run_backtest(&cfg, &spx, &agg, &jpy, &out_b).unwrap();
    for name in ["predictions.csv", "metrics.json", "tercile.json", "scatter.csv"] {
        assert_eq!(
            std::fs::read(out_a.join(name)).unwrap(),
            std::fs::read(out_b.join(name)).unwrap(),
            "{name} differs between reruns"
        );
    }
}
