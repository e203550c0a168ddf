//! Implementation of the CLI subcommands: simulate, fit, predict, backtest,
//! and report. The binary in `bin/main.rs` is a thin argument-parsing
//! wrapper around these functions, which keeps them testable in-process.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::backtest::{rolling_backtest, BacktestResult};
use crate::cavi::fit;
use crate::config::Config;
use crate::error::{Error, Result};
use crate::features::{build_features, load_series_csv};
use crate::generate::{sample_dataset, SyntheticDataset};
use crate::model::{Dataset, VariationalPosterior};
use crate::predict::{predict, Prediction};

/// Machine-output float formatting: 17 significant digits.
pub fn fmt_machine(v: f64) -> String {
    format!("{v:.16e}")
}

/// Human-report float formatting: 4 decimals with trailing zeros trimmed
/// (so e.g. 0.5440 renders as 0.544 and 1.0000 as 1).
pub fn fmt_human(v: f64) -> String {
    let s = format!("{v:.4}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn read_file(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// On-disk posterior artifact: per-cluster variational parameters plus a
/// responsibility summary (expected cluster counts) instead of the full
/// T x K matrix.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PosteriorFile {
    pub k: usize,
    pub n: usize,
    pub mu_hat: Vec<Vec<f64>>,
    pub r_hat: Vec<Vec<Vec<f64>>>,
    pub beta_hat: Vec<Vec<f64>>,
    pub q_hat: Vec<Vec<Vec<f64>>>,
    pub phi_column_sums: Vec<f64>,
    pub final_elbo: f64,
    pub converged: bool,
    pub sweeps: usize,
    pub restart_index: usize,
    pub seed: u64,
}

impl PosteriorFile {
    pub fn from_report(report: &crate::model::FitReport) -> Self {
        let post = &report.posterior;
        let k = post.k();
        let n = post.mu_hat[0].len();
        let to_vec = |v: &DVector<f64>| v.iter().cloned().collect::<Vec<f64>>();
        let to_mat = |m: &DMatrix<f64>| {
            (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
                .collect::<Vec<Vec<f64>>>()
        };
        PosteriorFile {
            k,
            n,
            mu_hat: post.mu_hat.iter().map(to_vec).collect(),
            r_hat: post.r_hat.iter().map(to_mat).collect(),
            beta_hat: post.beta_hat.iter().map(to_vec).collect(),
            q_hat: post.q_hat.iter().map(to_mat).collect(),
            phi_column_sums: (0..k)
                .map(|col| post.phi.column(col).iter().sum())
                .collect(),
            final_elbo: *report.elbo_trace.last().unwrap_or(&f64::NEG_INFINITY),
            converged: report.converged,
            sweeps: report.sweeps,
            restart_index: report.restart_index,
            seed: report.seed,
        }
    }

    /// Rebuilds a posterior usable by the predictor (phi is not needed for
    /// prediction and is set to a single uniform row).
    pub fn to_posterior(&self) -> VariationalPosterior {
        VariationalPosterior {
            phi: DMatrix::from_element(1, self.k, 1.0 / self.k as f64),
            mu_hat: self
                .mu_hat
                .iter()
                .map(|v| DVector::from_column_slice(v))
                .collect(),
            r_hat: self
                .r_hat
                .iter()
                .map(|m| DMatrix::from_fn(self.n, self.n, |i, j| m[i][j]))
                .collect(),
            beta_hat: self
                .beta_hat
                .iter()
                .map(|v| DVector::from_column_slice(v))
                .collect(),
            q_hat: self
                .q_hat
                .iter()
                .map(|m| DMatrix::from_fn(self.n, self.n, |i, j| m[i][j]))
                .collect(),
        }
    }
}

fn ensure_out_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.display().to_string(),
        source,
    })
}

/// `simulate`: samples a synthetic dataset and writes a dataset CSV
/// (x_1..x_n, y, true_cluster) plus a JSON ground-truth sidecar.
pub fn run_simulate(config: &Config, out: &Path, t: usize, seed: u64) -> Result<()> {
    let h = config.hyperparameters()?;
    let synth = sample_dataset(&h, t, seed)?;
    ensure_out_dir(out)?;

    let mut csv = String::new();
    let header: Vec<String> = (1..=h.n)
        .map(|i| format!("x_{i}"))
        .chain(["y".to_string(), "true_cluster".to_string()])
        .collect();
    writeln!(csv, "{}", header.join(",")).unwrap();
    for row in 0..t {
        let mut fields: Vec<String> = (0..h.n)
            .map(|j| fmt_machine(synth.dataset.x[(row, j)]))
            .collect();
        fields.push(fmt_machine(synth.dataset.y[row]));
        fields.push(synth.true_assignments[row].to_string());
        writeln!(csv, "{}", fields.join(",")).unwrap();
    }
    write_file(&out.join("dataset.csv"), &csv)?;

    let truth = serde_json::to_string_pretty(&TruthSidecar::from(&synth)).unwrap();
    write_file(&out.join("truth.json"), &truth)?;
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct TruthSidecar {
    true_mu: Vec<Vec<f64>>,
    true_beta: Vec<Vec<f64>>,
    true_assignments: Vec<usize>,
    seed: u64,
}

impl From<&SyntheticDataset> for TruthSidecar {
    fn from(s: &SyntheticDataset) -> Self {
        TruthSidecar {
            true_mu: s.true_mu.iter().map(|v| v.iter().cloned().collect()).collect(),
            true_beta: s
                .true_beta
                .iter()
                .map(|v| v.iter().cloned().collect())
                .collect(),
            true_assignments: s.true_assignments.clone(),
            seed: s.seed,
        }
    }
}

/// Reads a dataset CSV produced by `simulate` (or hand-written with the same
/// header). A trailing `true_cluster` column is ignored.
pub fn load_dataset_csv(path: &Path) -> Result<Dataset> {
    let text = read_file(path)?;
    let path_str = path.display().to_string();
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| Error::CsvParse {
        path: path_str.clone(),
        line: 1,
        reason: "empty file".to_string(),
    })?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let x_cols: Vec<usize> = cols
        .iter()
        .enumerate()
        .filter(|(_, c)| c.starts_with("x_"))
        .map(|(i, _)| i)
        .collect();
    let y_col = cols.iter().position(|&c| c == "y").ok_or_else(|| Error::CsvParse {
        path: path_str.clone(),
        line: 1,
        reason: "missing y column".to_string(),
    })?;
    if x_cols.is_empty() {
        return Err(Error::CsvParse {
            path: path_str,
            line: 1,
            reason: "no x_* columns".to_string(),
        });
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        let parse = |col: usize| -> Result<f64> {
            fields
                .get(col)
                .ok_or(())
                .and_then(|f| f.parse::<f64>().map_err(|_| ()))
                .map_err(|_| Error::CsvParse {
                    path: path_str.clone(),
                    line: idx + 1,
                    reason: format!("bad value in column {col}"),
                })
        };
        let mut row = Vec::with_capacity(x_cols.len());
        for &c in &x_cols {
            row.push(parse(c)?);
        }
        xs.push(row);
        ys.push(parse(y_col)?);
    }
    let t = xs.len();
    let n = x_cols.len();
    Dataset::new(
        DMatrix::from_fn(t, n, |i, j| xs[i][j]),
        DVector::from_vec(ys),
    )
}

/// Renders the cluster-centers and regression tables of a fitted posterior.
pub fn render_report(post: &PosteriorFile) -> String {
    let mut out = String::new();
    let col_headers: Vec<String> = (1..=post.k).map(|k| format!("Cluster {k}")).collect();

    writeln!(out, "Explanatory variable cluster centers (mu_hat)").unwrap();
    writeln!(out, "{:<12}{}", "Variable", col_headers.join("\t")).unwrap();
    for i in 0..post.n {
        let cells: Vec<String> = (0..post.k).map(|k| fmt_human(post.mu_hat[k][i])).collect();
        writeln!(out, "{:<12}{}", format!("x_{}", i + 1), cells.join("\t")).unwrap();
    }
    writeln!(out).unwrap();
    writeln!(out, "Regression parameter estimates (beta_hat)").unwrap();
    writeln!(out, "{:<12}{}", "Variable", col_headers.join("\t")).unwrap();
    for i in 0..post.n {
        let cells: Vec<String> = (0..post.k).map(|k| fmt_human(post.beta_hat[k][i])).collect();
        writeln!(out, "{:<12}{}", format!("x_{}", i + 1), cells.join("\t")).unwrap();
    }
    writeln!(out).unwrap();
    writeln!(
        out,
        "Expected cluster counts: {}",
        post.phi_column_sums
            .iter()
            .map(|&c| fmt_human(c))
            .collect::<Vec<_>>()
            .join(", ")
    )
    .unwrap();
    writeln!(out, "Final ELBO: {}", fmt_human(post.final_elbo)).unwrap();
    writeln!(
        out,
        "Converged: {} after {} sweeps (restart {})",
        post.converged, post.sweeps, post.restart_index
    )
    .unwrap();
    out
}

/// `fit`: fits the posterior and writes posterior.json, elbo_trace.csv, and
/// a human-readable report.txt.
pub fn run_fit(config: &Config, data_csv: &Path, out: &Path) -> Result<()> {
    let h = config.hyperparameters()?;
    let data = load_dataset_csv(data_csv)?;
    let report = fit(&data, &h, &config.fit_options())?;
    ensure_out_dir(out)?;

    let pf = PosteriorFile::from_report(&report);
    write_file(
        &out.join("posterior.json"),
        &serde_json::to_string_pretty(&pf).unwrap(),
    )?;

    let mut trace = String::from("sweep,elbo\n");
    for (i, e) in report.elbo_trace.iter().enumerate() {
        writeln!(trace, "{},{}", i + 1, fmt_machine(*e)).unwrap();
    }
    write_file(&out.join("elbo_trace.csv"), &trace)?;
    write_file(&out.join("report.txt"), &render_report(&pf))?;
    Ok(())
}

/// `predict`: loads a posterior artifact and emits the forecast JSON for one
/// input vector.
pub fn run_predict(config: &Config, posterior_path: &Path, x_values: &[f64]) -> Result<String> {
    let h = config.hyperparameters()?;
    let pf: PosteriorFile =
        serde_json::from_str(&read_file(posterior_path)?).map_err(|e| Error::Config {
            pointer: "/".to_string(),
            reason: format!("bad posterior file: {e}"),
        })?;
    let post = pf.to_posterior();
    let x = DVector::from_column_slice(x_values);
    let prediction: Prediction = predict(&x, &post, &h, 0.05)?;
    Ok(serde_json::to_string_pretty(&serde_json::json!({
        "weights": prediction.mixture.weights,
        "means": prediction.mixture.means,
        "variances": prediction.mixture.variances,
        "mean": prediction.mean,
        "variance": prediction.variance,
        "interval": [prediction.interval.0, prediction.interval.1],
    }))
    .unwrap())
}

/// `backtest`: builds features from the three price series, runs the rolling
/// loop, and writes predictions.csv, metrics.json, tercile.json, and
/// scatter.csv.
pub fn run_backtest(
    config: &Config,
    spx: &Path,
    agg: &Path,
    jpy: &Path,
    out: &Path,
) -> Result<BacktestResult> {
    let h = config.hyperparameters()?;
    let spx = load_series_csv(spx)?;
    let agg = load_series_csv(agg)?;
    let jpy = load_series_csv(jpy)?;
    let fm = build_features(&spx, &agg, &jpy, config.window, config.returns)?;
    let result = rolling_backtest(&fm, &h, &config.fit_options(), &config.backtest_options())?;
    ensure_out_dir(out)?;
    write_backtest_artifacts(&result, out)?;
    Ok(result)
}

/// Writes the four backtest artifacts to `out`.
pub fn write_backtest_artifacts(result: &BacktestResult, out: &Path) -> Result<()> {
    let k = result.cluster_probs.first().map_or(0, |p| p.len());
    let mut preds = String::from("date,pred_mean,actual");
    for i in 1..=k {
        write!(preds, ",q{i}").unwrap();
    }
    preds.push('\n');
    for i in 0..result.dates.len() {
        write!(
            preds,
            "{},{},{}",
            result.dates[i],
            fmt_machine(result.predicted[i]),
            fmt_machine(result.actual[i])
        )
        .unwrap();
        for q in &result.cluster_probs[i] {
            write!(preds, ",{}", fmt_machine(*q)).unwrap();
        }
        preds.push('\n');
    }
    write_file(&out.join("predictions.csv"), &preds)?;

    write_file(
        &out.join("metrics.json"),
        &serde_json::to_string_pretty(&serde_json::json!({
            "pearson_r": result.metrics.pearson_r,
            "r_squared": result.metrics.r_squared,
            "p_value": result.metrics.p_value,
            "failed_dates": result.failed_dates,
        }))
        .unwrap(),
    )?;

    write_file(
        &out.join("tercile.json"),
        &serde_json::to_string_pretty(&result.tercile).unwrap(),
    )?;

    let mut scatter = String::from("pred,actual\n");
    for i in 0..result.predicted.len() {
        writeln!(
            scatter,
            "{},{}",
            fmt_machine(result.predicted[i]),
            fmt_machine(result.actual[i])
        )
        .unwrap();
    }
    write_file(&out.join("scatter.csv"), &scatter)?;
    Ok(())
}

/// `report`: renders the human-readable tables for a stored posterior.
pub fn run_report(posterior_path: &Path) -> Result<String> {
    let pf: PosteriorFile =
        serde_json::from_str(&read_file(posterior_path)?).map_err(|e| Error::Config {
            pointer: "/".to_string(),
            reason: format!("bad posterior file: {e}"),
        })?;
    Ok(render_report(&pf))
}

/// Exit-code mapping: 0 success, 2 config error, 3 data error, 4 numerical
/// failure.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config { .. } | Error::NotASimplex { .. } => 2,
        Error::Numerical(_) | Error::AllRestartsFailed(_) | Error::NotSpd { .. } => 4,
        _ => 3,
    }
}
