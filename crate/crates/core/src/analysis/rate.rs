//! Power-law fits of final error against horizon, and oscillation counts.

use std::fmt;

use crate::error::invalid;
use crate::Result;

/// Fraction of the smallest horizons discarded before fitting.
pub const BURN_IN_FRACTION: f64 = 0.25;
/// Minimum number of horizons left in the fitting window.
pub const MIN_WINDOW: usize = 4;
/// Minimum ratio between the largest and smallest horizon in the window.
pub const MIN_SPAN: f64 = 8.0;

#[derive(Debug, Clone, PartialEq)]
pub struct RateFit {
    /// `(T, error)` pairs used in the fit, sorted by `T`.
    pub window: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    /// Points dropped as burn-in.
    pub burn_in: Vec<(f64, f64)>,
    /// Points dropped because the error was not positive and finite.
    pub rejected: Vec<(f64, f64)>,
}

impl RateFit {
    pub fn csv_header() -> &'static str {
        "slope,intercept,r2,points,t_min,t_max,rejected"
    }

    pub fn csv_row(&self) -> String {
        let t_min = self.window.first().map_or(f64::NAN, |p| p.0);
        let t_max = self.window.last().map_or(f64::NAN, |p| p.0);
        format!(
            "{:?},{:?},{:?},{},{},{},{}",
            self.slope,
            self.intercept,
            self.r2,
            self.window.len(),
            t_min,
            t_max,
            self.rejected.len()
        )
    }
}

impl fmt::Display for RateFit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t_min = self.window.first().map_or(f64::NAN, |p| p.0);
        let t_max = self.window.last().map_or(f64::NAN, |p| p.0);
        write!(
            f,
            "slope {:.4} (r² {:.4}) over T in [{t_min}, {t_max}], {} points",
            self.slope,
            self.r2,
            self.window.len()
        )?;
        if !self.rejected.is_empty() {
            write!(f, ", {} non-positive errors excluded", self.rejected.len())?;
        }
        Ok(())
    }
}

/// Least-squares line through `(ln T, ln error)` for every point given.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<(f64, f64, f64)> {
    if points.len() < 2 {
        return Err(invalid("need at least two points"));
    }
    if points.iter().any(|&(t, e)| !(t > 0.0) || !(e > 0.0) || !t.is_finite() || !e.is_finite()) {
        return Err(invalid("horizons and errors must be positive and finite"));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(invalid("horizons must not all be equal"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok((slope, intercept, r2))
}

/// Fits `error ∝ T^slope` after discarding the smallest quarter of horizons.
///
/// Points with non-positive or non-finite error are excluded and reported.
/// The remaining window must hold at least four distinct horizons spanning a
/// factor of eight.
pub fn fit_rate(runs: &[(f64, f64)]) -> Result<RateFit> {
    let mut sorted = runs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let (kept, rejected): (Vec<_>, Vec<_>) = sorted.into_iter().partition(|&(_, e)| e > 0.0 && e.is_finite());
    if kept.iter().any(|&(t, _)| !(t > 0.0) || !t.is_finite()) {
        return Err(invalid("horizons must be positive and finite"));
    }
    let drop = (BURN_IN_FRACTION * kept.len() as f64).floor() as usize;
    let burn_in = kept[..drop].to_vec();
    let window = kept[drop..].to_vec();
    let mut distinct: Vec<f64> = window.iter().map(|p| p.0).collect();
    distinct.dedup();
    if distinct.len() < MIN_WINDOW {
        return Err(invalid(format!(
            "fit window has {} distinct horizons, need {MIN_WINDOW}",
            distinct.len()
        )));
    }
    let span = distinct[distinct.len() - 1] / distinct[0];
    if span < MIN_SPAN {
        return Err(invalid(format!("fit window spans a factor {span}, need {MIN_SPAN}")));
    }
    let (slope, intercept, r2) = fit_power_law(&window)?;
    Ok(RateFit {
        window,
        slope,
        intercept,
        r2,
        burn_in,
        rejected,
    })
}

/// Mean number of sign changes of the first difference per cycle-epoch over
/// the last `cycles` cycle-epochs.
///
/// `series` holds the loss before the first round followed by the loss after
/// every round, so the window of `cycles · K̄` differences starts at the last
/// value of the preceding cycle. Zero differences are skipped.
pub fn sign_changes_per_cycle(series: &[f64], k_bar: usize, cycles: usize) -> Result<f64> {
    if k_bar == 0 || cycles == 0 {
        return Err(invalid("cycle length and cycle count must be positive"));
    }
    let span = cycles * k_bar;
    if series.len() < span + 1 {
        return Err(invalid(format!(
            "series of {} values is shorter than {} cycle-epochs",
            series.len(),
            cycles
        )));
    }
    let window = &series[series.len() - span - 1..];
    let mut changes = 0usize;
    let mut last_sign = 0.0f64;
    for pair in window.windows(2) {
        let diff = pair[1] - pair[0];
        if diff == 0.0 {
            continue;
        }
        let sign = diff.signum();
        if last_sign != 0.0 && sign != last_sign {
            changes += 1;
        }
        last_sign = sign;
    }
    Ok(changes as f64 / cycles as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn horizons() -> Vec<f64> {
        vec![100.0, 200.0, 400.0, 800.0, 1600.0]
    }

    #[test]
    fn exact_inverse_square() {
        let runs: Vec<_> = horizons().into_iter().map(|t| (t, 7.0 / (t * t))).collect();
        let fit = fit_rate(&runs).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-9);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
        assert_eq!(fit.burn_in.len(), 1);
        assert_eq!(fit.window.len(), 4);
    }

    #[test]
    fn exact_inverse() {
        let runs: Vec<_> = horizons().into_iter().map(|t| (t, 3.0 / t)).collect();
        assert!((fit_rate(&runs).unwrap().slope + 1.0).abs() < 1e-9);
    }

    #[test]
    fn non_positive_errors_are_flagged() {
        let mut runs: Vec<_> = horizons().into_iter().map(|t| (t, 1.0 / t)).collect();
        runs.push((3200.0, 1.0 / 3200.0));
        runs.push((6400.0, 0.0));
        let fit = fit_rate(&runs).unwrap();
        assert_eq!(fit.rejected, vec![(6400.0, 0.0)]);
        assert!(fit.to_string().contains("excluded"));
    }

    #[test]
    fn narrow_windows_rejected() {
        let runs: Vec<_> = [100.0, 120.0, 140.0, 160.0, 180.0].iter().map(|&t| (t, 1.0 / t)).collect();
        assert!(fit_rate(&runs).is_err());
        let few: Vec<_> = [100.0, 1000.0, 10000.0].iter().map(|&t| (t, 1.0 / t)).collect();
        assert!(fit_rate(&few).is_err());
    }

    #[test]
    fn alternating_series_changes_every_round() {
        let series: Vec<f64> = (0..=12).map(|t| if t % 2 == 0 { 1.0 } else { 2.0 }).collect();
        // 12 alternating differences give 11 changes over 4 cycles
        assert_eq!(sign_changes_per_cycle(&series, 3, 4).unwrap(), 11.0 / 4.0);
        let monotone: Vec<f64> = (0..20).map(|t| -(t as f64)).collect();
        assert_eq!(sign_changes_per_cycle(&monotone, 4, 2).unwrap(), 0.0);
        assert!(sign_changes_per_cycle(&monotone, 4, 5).is_err());
    }

    proptest! {
        #[test]
        fn planted_exponent_recovered(p in -3.0f64..0.0, c in 0.01f64..100.0, t0 in 1.0f64..500.0) {
            let runs: Vec<_> = (0..6).map(|j| {
                let t = t0 * 2f64.powi(j);
                (t, c * t.powf(p))
            }).collect();
            let fit = fit_rate(&runs).unwrap();
            prop_assert!((fit.slope - p).abs() < 1e-6);
        }
    }
}
