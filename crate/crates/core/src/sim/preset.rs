use serde::{Deserialize, Serialize};

use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Session-level generator settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimPreset {
    pub name: String,
    pub participants: usize,
    /// Accepted realized floors per hour, inclusive.
    pub floors_per_hour: (f64, f64),
    pub median_floor_duration: f64,
    pub sit_fraction: f64,
    pub max_concurrent_floors: usize,
    /// Target time-weighted number of active floors.
    pub target_concurrency: f64,
    /// Events per minute.
    pub coord_rate: f64,
    pub aside_rate: f64,
    pub migration_rate: f64,
    pub turn_median: f64,
    pub gap_mean: f64,
    pub gap_sd: f64,
    pub speech_level_mean: f64,
    pub speech_level_sd: f64,
    pub aside_drop: f64,
    pub self_continuation: f64,
}

impl SimPreset {
    fn base(name: &str, floors_per_hour: (f64, f64), median: f64) -> Self {
        Self {
            name: name.to_string(),
            participants: 9,
            floors_per_hour,
            median_floor_duration: median,
            sit_fraction: 27.0 / 153.0,
            max_concurrent_floors: 4,
            target_concurrency: 1.79,
            coord_rate: 0.7,
            aside_rate: 0.3,
            migration_rate: 0.2,
            turn_median: 2.0,
            gap_mean: 0.2,
            gap_sd: 0.15,
            speech_level_mean: -20.0,
            speech_level_sd: 3.0,
            aside_drop: 12.0,
            self_continuation: 0.3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name: &'static str, reason: &str| {
            Err(Error::InvalidParams {
                name,
                reason: reason.to_string(),
            })
        };
        if self.participants < 2 {
            return bad("participants", "must be at least 2");
        }
        if self.max_concurrent_floors < 1 {
            return bad("max_concurrent_floors", "must be at least 1");
        }
        let (lo, hi) = self.floors_per_hour;
        if !(lo > 0.0 && hi >= lo) {
            return bad("floors_per_hour", "must be a positive range");
        }
        if !(0.0..=1.0).contains(&self.sit_fraction) {
            return bad("sit_fraction", "must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.self_continuation) {
            return bad("self_continuation", "must lie in [0, 1)");
        }
        for (name, v) in [
            ("median_floor_duration", self.median_floor_duration),
            ("turn_median", self.turn_median),
            ("target_concurrency", self.target_concurrency),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return bad(name, "must be positive");
            }
        }
        for (name, v) in [
            ("coord_rate", self.coord_rate),
            ("aside_rate", self.aside_rate),
            ("migration_rate", self.migration_rate),
            ("gap_sd", self.gap_sd),
            ("speech_level_sd", self.speech_level_sd),
            ("aside_drop", self.aside_drop),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(name, "must be non-negative");
            }
        }
        Ok(())
    }

    /// Schism births per hour aimed at the middle of the accepted range;
    /// the initial floor accounts for one.
    pub fn birth_rate_per_hour(&self) -> f64 {
        let (lo, hi) = self.floors_per_hour;
        ((lo + hi) / 2.0 - 1.0).max(0.0)
    }

    /// Median and shape of the log-normal floor lifetime.
    ///
    /// Each schism adds one floor for its lifetime, so mean concurrency over
    /// an hour T is 1 + B * E[min(L, T - b)] / T for births b uniform in the
    /// hour, where E[min(L, T - b)] = (1/T) * integral of (T - x) S(x) over
    /// [0, T] and S is the lifetime survival function. The initial floor
    /// lasts the whole session and sits above the median of all floors, so
    /// the lifetime median is the quantile (B + 1) / 2B of generated floors.
    /// Sigma is found by bisection.
    pub fn lifetime_params(&self) -> (f64, f64) {
        let births = self.birth_rate_per_hour();
        let target = self.target_concurrency - 1.0;
        if births <= 0.0 || target <= 0.0 {
            return (self.median_floor_duration, 0.1);
        }
        let std = Normal::new(0.0, 1.0).expect("unit normal");
        let z = std.inverse_cdf((births + 1.0) / (2.0 * births));
        let median_for = |sigma: f64| self.median_floor_duration * (-sigma * z).exp();
        let concurrency = |sigma: f64| births * truncated_mean(median_for(sigma), sigma, HOUR) / HOUR;
        let (mut lo, mut hi) = (0.05, 3.0);
        if concurrency(lo) >= target {
            return (median_for(lo), lo);
        }
        if concurrency(hi) <= target {
            return (median_for(hi), hi);
        }
        for _ in 0..60 {
            let mid = 0.5 * (lo + hi);
            if concurrency(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let sigma = 0.5 * (lo + hi);
        (median_for(sigma), sigma)
    }
}

const HOUR: f64 = 3600.0;

/// Mean lifetime of a log-normal floor born uniformly in [0, T] and cut at T.
pub(crate) fn truncated_mean(median: f64, sigma: f64, t: f64) -> f64 {
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let survival = |x: f64| if x <= 0.0 { 1.0 } else { 1.0 - std.cdf((x / median).ln() / sigma) };
    // composite Simpson over [0, T]
    let n = 2000;
    let h = t / n as f64;
    let f = |x: f64| (t - x) * survival(x);
    let mut acc = f(0.0) + f(t);
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(k as f64 * h);
    }
    acc * h / 3.0 / t
}

pub fn preset(name: &str) -> Result<SimPreset> {
    match name {
        "pilot" => Ok(SimPreset::base("pilot", (10.0, 19.0), 91.0)),
        "youth" => Ok(SimPreset::base("youth", (52.0, 70.0), 44.0)),
        other => Err(Error::UnknownPreset(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn published_values() {
        assert_eq!(preset("pilot").unwrap().median_floor_duration, 91.0);
        assert_eq!(preset("youth").unwrap().median_floor_duration, 44.0);
        assert_eq!(preset("youth").unwrap().floors_per_hour, (52.0, 70.0));
        assert_eq!(preset("pilot").unwrap().floors_per_hour, (10.0, 19.0));
        assert!((preset("pilot").unwrap().sit_fraction - 0.176).abs() < 5e-4);
        assert!(matches!(preset("x"), Err(Error::UnknownPreset(_))));
    }

    #[test]
    fn lifetime_shape_hits_concurrency() {
        for name in ["pilot", "youth"] {
            let p = preset(name).unwrap();
            let (med, s) = p.lifetime_params();
            assert!(med < p.median_floor_duration);
            let conc = 1.0 + p.birth_rate_per_hour() * truncated_mean(med, s, HOUR) / HOUR;
            assert!((conc - p.target_concurrency).abs() < 1e-6, "{name}");
        }
    }

    #[test]
    fn truncated_mean_limits() {
        // a short-lived floor is barely cut: mean close to median * exp(s^2/2)
        let m = truncated_mean(10.0, 0.2, 3600.0);
        let full = 10.0 * (0.02f64).exp();
        assert!((m - full).abs() / full < 0.01);
        // a floor that always outlives the hour averages T/2
        assert!((truncated_mean(1e9, 0.1, 3600.0) - 1800.0).abs() < 1.0);
    }
}
