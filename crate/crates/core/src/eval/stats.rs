use super::EvalError;
use crate::model::PipelineTrace;

/// Mean and sample standard deviation (n - 1 denominator). A single value
/// has zero deviation.
pub fn mean_std(values: &[f64]) -> Result<(f64, f64), EvalError> {
    if values.is_empty() {
        return Err(EvalError::Input("no values to aggregate".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() == 1 {
        return Ok((mean, 0.0));
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok((mean, var.sqrt()))
}

/// Averages per-prompt scores within each run, then reports the mean and
/// sample standard deviation of those run means.
///
/// ```
/// let (mean, std) = grape::eval::aggregate(&[vec![0.8], vec![0.9]]).unwrap();
/// assert!((mean - 0.85).abs() < 1e-12);
/// assert!((std - 0.070710678118654).abs() < 1e-12);
/// ```
pub fn aggregate(runs: &[Vec<f64>]) -> Result<(f64, f64), EvalError> {
    if runs.is_empty() {
        return Err(EvalError::Input("no runs to aggregate".into()));
    }
    let means = runs
        .iter()
        .map(|r| mean_std(r).map(|(m, _)| m))
        .collect::<Result<Vec<_>, _>>()?;
    mean_std(&means)
}

/// Mean planned length (not executed length) across traces.
pub fn avg_edit_steps(traces: &[PipelineTrace]) -> Result<f64, EvalError> {
    if traces.is_empty() {
        return Err(EvalError::Input("no traces".into()));
    }
    let total: usize = traces.iter().map(|t| t.plan.len()).sum();
    Ok(total as f64 / traces.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_and_constant_runs() {
        assert_eq!(aggregate(&[vec![0.3, 0.5]]).unwrap(), (0.4, 0.0));
        let (_, std) = aggregate(&[vec![0.5, 0.5], vec![0.5], vec![0.5, 0.5, 0.5]]).unwrap();
        assert_eq!(std, 0.0);
    }

    #[test]
    fn empty_inputs() {
        assert!(aggregate(&[]).is_err());
        assert!(aggregate(&[vec![]]).is_err());
        assert!(avg_edit_steps(&[]).is_err());
    }
}
