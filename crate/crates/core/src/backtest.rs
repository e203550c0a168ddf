//! Rolling-window fit/predict loop over a feature matrix, plus the scatter
//! metrics (Pearson r, R^2, p-value) and the tercile confusion table.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::cavi::{fit, FitOptions};
use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::model::{Dataset, Hyperparameters};
use crate::parallel;
use crate::predict::{mixture_mean, predictive_cluster_probs, predictive_mixture};

/// Pearson correlation metrics between predicted and actual series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PearsonMetrics {
    pub pearson_r: f64,
    pub r_squared: f64,
    pub p_value: f64,
}

/// Result of a rolling backtest: aligned predicted/actual series, per-date
/// cluster probabilities, correlation metrics, and the tercile table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BacktestResult {
    pub dates: Vec<NaiveDate>,
    pub predicted: Vec<f64>,
    pub actual: Vec<f64>,
    pub cluster_probs: Vec<Vec<f64>>,
    pub metrics: PearsonMetrics,
    /// 3x3 row-conditional percentages; rows sum to 100.
    pub tercile: [[f64; 3]; 3],
    pub failed_dates: usize,
}

/// Pearson r, r^2, and the two-sided p-value from the t statistic
/// r sqrt((m-2)/(1-r^2)) with m-2 degrees of freedom (Student-t tail via the
/// regularized incomplete beta function).
pub fn pearson_metrics(pred: &[f64], actual: &[f64]) -> Result<PearsonMetrics> {
    let m = pred.len();
    if m != actual.len() {
        return Err(Error::DimensionMismatch {
            context: "pearson_metrics".to_string(),
            expected: m,
            actual: actual.len(),
        });
    }
    if m < 3 {
        return Err(Error::InvalidValue {
            field: "pearson_metrics".to_string(),
            reason: format!("need at least 3 observations, got {m}"),
        });
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let mp = mean(pred);
    let ma = mean(actual);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..m {
        let dx = pred[i] - mp;
        let dy = actual[i] - ma;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::InvalidValue {
            field: "pearson_metrics".to_string(),
            reason: "constant input vector".to_string(),
        });
    }
    let r = (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0);
    let p_value = pearson_p_value(r, m);
    Ok(PearsonMetrics {
        pearson_r: r,
        r_squared: r * r,
        p_value,
    })
}

/// Two-sided p-value for a Pearson r with sample size m.
pub fn pearson_p_value(r: f64, m: usize) -> f64 {
    let df = (m - 2) as f64;
    if r.abs() >= 1.0 {
        return 0.0;
    }
    let t2 = r * r * df / (1.0 - r * r);
    // P(|T| > t) = I_{df/(df+t^2)}(df/2, 1/2)
    statrs::function::beta::beta_reg(df / 2.0, 0.5, df / (df + t2))
}

/// Equal-count tercile bucketing with ties broken by original index; extra
/// observations from the remainder go to the middle bucket. `buckets[i]` is
/// the bucket (0 = low, 1 = mid, 2 = high) of observation i.
fn tercile_buckets(values: &[f64]) -> Vec<usize> {
    let m = values.len();
    let q = m / 3;
    let (low, mid) = match m % 3 {
        0 => (q, q),
        1 => (q, q + 1),
        _ => (q, q + 2),
    };
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(a.cmp(&b)));
    let mut buckets = vec![0usize; m];
    for (rank, &idx) in order.iter().enumerate() {
        buckets[idx] = if rank < low {
            0
        } else if rank < low + mid {
            1
        } else {
            2
        };
    }
    buckets
}

/// Row-conditional tercile table: entry (i, j) is the percentage of
/// observations in predicted-bucket i that fall in actual-bucket j.
pub fn tercile_table(pred: &[f64], actual: &[f64]) -> Result<[[f64; 3]; 3]> {
    let m = pred.len();
    if m != actual.len() || m < 9 {
        return Err(Error::InvalidValue {
            field: "tercile_table".to_string(),
            reason: format!("need two equal-length series of at least 9, got {m}"),
        });
    }
    let pb = tercile_buckets(pred);
    let ab = tercile_buckets(actual);
    let mut counts = [[0usize; 3]; 3];
    for i in 0..m {
        counts[pb[i]][ab[i]] += 1;
    }
    let mut table = [[0.0; 3]; 3];
    for i in 0..3 {
        let row_total: usize = counts[i].iter().sum();
        for j in 0..3 {
            table[i][j] = 100.0 * counts[i][j] as f64 / row_total as f64;
        }
    }
    Ok(table)
}

/// Options for the rolling loop.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BacktestOptions {
    /// Training window length (rows strictly before each test date).
    pub window: usize,
    /// Refit the posterior every this many test dates; intermediate dates
    /// reuse the latest fit.
    pub refit_every: usize,
}

/// Rolling fit/predict loop: for each test row t >= window, fit (or reuse,
/// per `refit_every`) on the `window` rows strictly before t, then record the
/// predictive mean and cluster probabilities for row t. A failed fit skips
/// its block of dates and is counted. Blocks run in parallel; outputs are
/// assembled in date order.
pub fn rolling_backtest(
    fm: &FeatureMatrix,
    h: &Hyperparameters,
    fit_opts: &FitOptions,
    opts: &BacktestOptions,
) -> Result<BacktestResult> {
    let rows = fm.rows();
    let window = opts.window;
    if rows < window + 1 {
        return Err(Error::InvalidValue {
            field: "backtest".to_string(),
            reason: format!("need at least window + 1 = {} rows, got {rows}", window + 1),
        });
    }
    let refit = opts.refit_every.max(1);
    let test_count = rows - window;
    let blocks = test_count.div_ceil(refit);

    type BlockOut = Vec<(usize, Option<(f64, Vec<f64>)>)>;
    let block_results: Vec<BlockOut> = parallel::run_indexed(blocks, |b| {
        let block_start = window + b * refit;
        let block_end = (block_start + refit).min(rows);
        let train = Dataset {
            x: fm.x.rows(block_start - window, window).into_owned(),
            y: fm.y.rows(block_start - window, window).into_owned(),
        };
        let fitted = fit(&train, h, fit_opts);
        (block_start..block_end)
            .map(|t| {
                let x = fm.x.row(t).transpose();
                let out = fitted.as_ref().ok().and_then(|report| {
                    let probs = predictive_cluster_probs(&x, &report.posterior, h).ok()?;
                    let mix = predictive_mixture(&x, &report.posterior, h).ok()?;
                    Some((mixture_mean(&mix), probs))
                });
                (t, out)
            })
            .collect()
    });

    let mut dates = Vec::new();
    let mut predicted = Vec::new();
    let mut actual = Vec::new();
    let mut cluster_probs = Vec::new();
    let mut failed = 0usize;
    for block in block_results {
        for (t, out) in block {
            match out {
                Some((mean, probs)) => {
                    dates.push(fm.dates[t]);
                    predicted.push(mean);
                    actual.push(fm.y[t]);
                    cluster_probs.push(probs);
                }
                None => failed += 1,
            }
        }
    }
    let metrics = pearson_metrics(&predicted, &actual)?;
    let tercile = tercile_table(&predicted, &actual)?;
    Ok(BacktestResult {
        dates,
        predicted,
        actual,
        cluster_probs,
        metrics,
        tercile,
        failed_dates: failed,
    })
}
