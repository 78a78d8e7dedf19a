//! Log-log regression of errors against grid spacing.

use serde::{Deserialize, Serialize};

/// Least-squares fit of `log e = slope · log h + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Outcome of [`fit_order`]: the fit when at least three usable pairs
/// survive, plus the pairs that were dropped and why.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub fit: Option<LineFit>,
    pub dropped: Vec<(f64, f64)>,
    pub notes: Vec<String>,
}

impl FitReport {
    pub fn slope(&self) -> Option<f64> {
        self.fit.map(|f| f.slope)
    }
}

/// Minimum number of (h, error) pairs for an order fit.
pub const MIN_FIT_POINTS: usize = 3;

pub fn fit_order(pairs: &[(f64, f64)]) -> FitReport {
    let mut dropped = Vec::new();
    let mut notes = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &(h, e) in pairs {
        if e > 0.0 && e.is_finite() && h > 0.0 {
            xs.push(h.ln());
            ys.push(e.ln());
        } else {
            notes.push(format!("dropped pair (h = {h:e}, error = {e:e}): not positive"));
            dropped.push((h, e));
        }
    }
    if xs.len() < MIN_FIT_POINTS {
        notes.push(format!(
            "{} usable pairs, need {MIN_FIT_POINTS}: no fit",
            xs.len()
        ));
        return FitReport {
            fit: None,
            dropped,
            notes,
        };
    }
    FitReport {
        fit: Some(least_squares(&xs, &ys)),
        dropped,
        notes,
    }
}

fn least_squares(xs: &[f64], ys: &[f64]) -> LineFit {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    LineFit {
        slope,
        intercept,
        r_squared,
        points: xs.len(),
    }
}

/// Order of a residual that may vanish identically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum OrderCheck {
    /// Every residual was below the exactness threshold.
    Exact,
    Fitted(FitReport),
}

impl OrderCheck {
    /// Residual threshold below which a level counts as exact.
    pub const EXACT_THRESHOLD: f64 = 1e-14;

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Self {
        if pairs.iter().all(|&(_, e)| e.abs() < Self::EXACT_THRESHOLD) {
            OrderCheck::Exact
        } else {
            OrderCheck::Fitted(fit_order(pairs))
        }
    }

    pub fn slope(&self) -> Option<f64> {
        match self {
            OrderCheck::Exact => None,
            OrderCheck::Fitted(r) => r.slope(),
        }
    }

    pub fn is_exact(&self) -> bool {
        matches!(self, OrderCheck::Exact)
    }

    /// True when exact or fitted with slope at least `min_order`.
    pub fn at_least(&self, min_order: f64) -> bool {
        match self {
            OrderCheck::Exact => true,
            OrderCheck::Fitted(r) => r.slope().is_some_and(|s| s >= min_order),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_power_laws() {
        let hs = [0.1, 0.05, 0.025, 0.0125];
        let sq: Vec<_> = hs.iter().map(|&h| (h, 3.0 * h * h)).collect();
        let f = fit_order(&sq).fit.unwrap();
        assert!((f.slope - 2.0).abs() < 1e-10);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        let q: Vec<_> = hs.iter().map(|&h| (h, 0.5 * h.powi(4))).collect();
        assert!((fit_order(&q).slope().unwrap() - 4.0).abs() < 1e-10);
    }

    #[test]
    fn zero_errors_are_dropped_with_note() {
        let pairs = [(0.2, 0.04), (0.1, 0.0), (0.05, 0.0025), (0.025, 0.000625)];
        let r = fit_order(&pairs);
        assert_eq!(r.dropped, vec![(0.1, 0.0)]);
        assert!(!r.notes.is_empty());
        assert!((r.slope().unwrap() - 2.0).abs() < 1e-10);
        let r = fit_order(&pairs[..3]);
        assert!(r.fit.is_none());
    }

    #[test]
    fn vanishing_residuals_are_exact() {
        let c = OrderCheck::from_pairs(&[(0.1, 0.0), (0.05, 1e-16), (0.025, 0.0)]);
        assert!(c.is_exact());
        assert!(c.at_least(10.0));
    }
}
