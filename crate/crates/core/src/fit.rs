//! Small regression helpers for convergence studies.

use crate::error::{Error, Result};

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(points: &[(f64, f64)]) -> Result<f64> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0 && x.is_finite() && y.is_finite())
        .map(|(x, y)| (x.ln(), y.ln()))
        .collect();
    if usable.len() < 2 {
        return Err(Error::DegenerateRegression {
            usable: usable.len(),
        });
    }
    let n = usable.len() as f64;
    let mx = usable.iter().map(|p| p.0).sum::<f64>() / n;
    let my = usable.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = usable.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = usable.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateRegression {
            usable: usable.len(),
        });
    }
    Ok(sxy / sxx)
}

/// Running maximum taken from the right: `out[i] = max(y[i..])`.
///
/// Oscillating decay curves are fitted through this upper envelope.
pub fn suffix_max(y: &[f64]) -> Vec<f64> {
    let mut out = y.to_vec();
    for i in (0..out.len().saturating_sub(1)).rev() {
        out[i] = out[i].max(out[i + 1]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_law() {
        let pts: Vec<_> = [0.1, 0.05, 0.025].iter().map(|&h: &f64| (h, 3.0 * h.powi(2))).collect();
        assert!((loglog_slope(&pts).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn too_few_points() {
        assert!(matches!(
            loglog_slope(&[(1.0, 1.0), (2.0, 0.0)]),
            Err(Error::DegenerateRegression { usable: 1 })
        ));
    }

    #[test]
    fn envelope() {
        assert_eq!(suffix_max(&[1.0, 3.0, 2.0, 0.5]), vec![3.0, 3.0, 2.0, 0.5]);
        assert!(suffix_max(&[]).is_empty());
    }
}
