//! Convergence and correctness measurement: relative MSE against oracles,
//! cost monotonicity checks, and Monte-Carlo aggregation.

use nalgebra::DMatrix;

use crate::error::{DansfError, Result};

/// Relative mean squared error `‖X − X*‖_F² / ‖X*‖_F²`.
pub fn relative_mse(x: &DMatrix<f64>, x_star: &DMatrix<f64>) -> Result<f64> {
    if x.shape() != x_star.shape() {
        return Err(DansfError::DimensionMismatch(format!(
            "estimate is {:?}, oracle is {:?}",
            x.shape(),
            x_star.shape()
        )));
    }
    let denom = x_star.norm_squared();
    if denom == 0.0 {
        return Err(DansfError::UndefinedMetric(
            "relative MSE against a zero oracle".into(),
        ));
    }
    Ok((x - x_star).norm_squared() / denom)
}

/// Per-iteration, per-node values of one run (costs or MSEs), rectangular:
/// every iteration carries all `K` nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceCurve {
    values: Vec<Vec<f64>>,
    num_nodes: usize,
}

impl ConvergenceCurve {
    pub fn new(values: Vec<Vec<f64>>) -> Result<Self> {
        let num_nodes = values.first().map(|r| r.len()).unwrap_or(0);
        if values.iter().any(|r| r.len() != num_nodes) || num_nodes == 0 && !values.is_empty() {
            return Err(DansfError::DimensionMismatch(
                "curve must be rectangular with at least one node".into(),
            ));
        }
        Ok(Self { values, num_nodes })
    }

    pub fn num_iterations(&self) -> usize {
        self.values.len()
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn value(&self, iteration: usize, node: usize) -> f64 {
        self.values[iteration][node - 1]
    }

    /// Max over nodes, one value per iteration.
    pub fn max_per_iteration(&self) -> Vec<f64> {
        self.values
            .iter()
            .map(|row| row.iter().copied().fold(f64::NEG_INFINITY, f64::max))
            .collect()
    }
}

/// A monotonicity violation: node `k`'s value increased from iteration `i`
/// to `i + 1` by more than the relative tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MonotonicityViolation {
    pub node: usize,
    pub iteration: usize,
}

/// Return every `(k, i)` with `v_k^{i+1} > v_kⁱ + rel_tol·(1 + |v_kⁱ|)`.
pub fn check_monotone(curve: &ConvergenceCurve, rel_tol: f64) -> Vec<MonotonicityViolation> {
    let mut out = Vec::new();
    for i in 0..curve.num_iterations().saturating_sub(1) {
        for k in 1..=curve.num_nodes() {
            let a = curve.value(i, k);
            let b = curve.value(i + 1, k);
            if b > a + rel_tol * (1.0 + a.abs()) {
                out.push(MonotonicityViolation { node: k, iteration: i });
            }
        }
    }
    out
}

/// First iteration index where `max_k` of the curve drops to `threshold` or
/// below; `None` when never reached.
pub fn iterations_to_threshold(curve: &ConvergenceCurve, threshold: f64) -> Option<usize> {
    curve
        .max_per_iteration()
        .iter()
        .position(|&v| v <= threshold)
}

/// Pointwise median and quartiles of per-run scalar series, plus the per-run
/// iterations-to-threshold counts when a threshold is given.
#[derive(Debug, Clone, PartialEq)]
pub struct McSummary {
    pub median: Vec<f64>,
    pub q1: Vec<f64>,
    pub q3: Vec<f64>,
    pub iterations_to_threshold: Vec<Option<usize>>,
}

fn quantile(sorted: &[f64], p: f64) -> f64 {
    // linear interpolation between order statistics
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo + 1 >= n {
        sorted[n - 1]
    } else {
        sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
    }
}

/// Aggregate per-run scalar series pointwise. Runs that stopped early are
/// padded with their final value so the statistics stay defined at every
/// iteration.
pub fn mc_aggregate(curves: &[Vec<f64>], threshold: Option<f64>) -> Result<McSummary> {
    if curves.is_empty() || curves.iter().any(|c| c.is_empty()) {
        return Err(DansfError::UndefinedMetric(
            "Monte-Carlo aggregation needs at least one non-empty run".into(),
        ));
    }
    let len = curves.iter().map(|c| c.len()).max().unwrap();
    let mut median = Vec::with_capacity(len);
    let mut q1 = Vec::with_capacity(len);
    let mut q3 = Vec::with_capacity(len);
    for i in 0..len {
        let mut column: Vec<f64> = curves
            .iter()
            .map(|c| *c.get(i).unwrap_or_else(|| c.last().unwrap()))
            .collect();
        column.sort_by(|a, b| a.partial_cmp(b).expect("finite metric values"));
        q1.push(quantile(&column, 0.25));
        median.push(quantile(&column, 0.5));
        q3.push(quantile(&column, 0.75));
    }
    let iterations_to_threshold = match threshold {
        Some(t) => curves
            .iter()
            .map(|c| c.iter().position(|&v| v <= t))
            .collect(),
        None => vec![None; curves.len()],
    };
    Ok(McSummary {
        median,
        q1,
        q3,
        iterations_to_threshold,
    })
}
