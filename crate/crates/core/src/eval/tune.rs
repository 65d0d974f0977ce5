use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 0.05, 0.10, ..., 0.95.
pub fn default_grid() -> Vec<f64> {
    (1..=19).map(|i| i as f64 * 5.0 / 100.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TuneResult {
    pub best_alpha: f64,
    pub best_score: f64,
    pub higher_is_better: bool,
    /// `(alpha, score)` in ascending alpha order.
    pub curve: Vec<(f64, f64)>,
}

/// Evaluates `objective` at every grid point and keeps the best. Ties go to
/// the smaller alpha.
pub fn tune_alpha<F>(grid: &[f64], higher_is_better: bool, mut objective: F) -> Result<TuneResult>
where
    F: FnMut(f64) -> Result<f64>,
{
    if grid.is_empty() {
        return Err(Error::InvalidConfig("alpha grid is empty".into()));
    }
    let mut alphas = grid.to_vec();
    if alphas.iter().any(|a| !(0.0..=1.0).contains(a)) {
        return Err(Error::InvalidConfig("alpha grid values must lie in [0, 1]".into()));
    }
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();

    let mut curve = Vec::with_capacity(alphas.len());
    let mut best: Option<(f64, f64)> = None;
    for a in alphas {
        let score = objective(a)?;
        if !score.is_finite() {
            return Err(Error::InvalidConfig(format!("objective at alpha {a} is not finite")));
        }
        curve.push((a, score));
        let better = match best {
            None => true,
            Some((_, s)) if higher_is_better => score > s,
            Some((_, s)) => score < s,
        };
        if better {
            best = Some((a, score));
        }
    }
    let (best_alpha, best_score) = best.expect("grid is non-empty");
    Ok(TuneResult {
        best_alpha,
        best_score,
        higher_is_better,
        curve,
    })
}
