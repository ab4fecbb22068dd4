//! Kolmogorov–Smirnov goodness of fit and the empirical fallback rule.

use std::fmt;

use thiserror::Error;

use super::{DistKind, DistributionRef};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FitError {
    #[error("KS statistic needs a nonempty sample")]
    EmptySample,
    #[error("fitting needs at least {min} observations, got {got}")]
    SampleTooSmall { got: usize, min: usize },
    #[error("sample contains a non-finite value")]
    NonFinite,
}

pub const MIN_FIT_SAMPLE: usize = 5;

/// `D = sup_x |F_n(x) - F(x)|`.
///
/// Both one-sided gaps are taken at every order statistic. The lower gap uses
/// the left limit `F(x-)`, evaluated one ulp below `x`, so CDFs with atoms are
/// handled exactly.
pub fn ks_statistic<F>(sample: &[f64], cdf: F) -> Result<f64, FitError>
where
    F: Fn(f64) -> f64,
{
    if sample.is_empty() {
        return Err(FitError::EmptySample);
    }
    if sample.iter().any(|x| !x.is_finite()) {
        return Err(FitError::NonFinite);
    }
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let upper = (i + 1) as f64 / n - cdf(x);
        let lower = cdf(x.next_down()) - i as f64 / n;
        d = d.max(upper).max(lower);
    }
    Ok(d.clamp(0.0, 1.0))
}

/// Asymptotic critical value `c(alpha) / sqrt(n)` with
/// `c(alpha) = sqrt(-ln(alpha / 2) / 2)`; `c(0.05) = 1.358`.
pub fn ks_critical_value(alpha: f64, n: usize) -> f64 {
    let c = (-(alpha / 2.0).ln() / 2.0).sqrt();
    c / (n as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParametricFamily {
    /// Mean matched to the sample mean.
    Exponential,
    /// Support fixed at the sample range, mode chosen so the mean matches.
    Triangular,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitVerdict {
    Parametric,
    Empirical,
}

impl fmt::Display for FitVerdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FitVerdict::Parametric => "parametric",
            FitVerdict::Empirical => "empirical",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOutcome {
    pub distribution: DistributionRef,
    pub verdict: FitVerdict,
    pub d: f64,
    pub critical: f64,
}

/// One audit line: `phase,urgency,decision,D,critical`.
#[derive(Debug, Clone, PartialEq)]
pub struct FitAuditEntry {
    pub phase: String,
    pub urgency: String,
    pub verdict: FitVerdict,
    pub d: f64,
    pub critical: f64,
}

impl fmt::Display for FitAuditEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{},{},{},{:.6},{:.6}",
            self.phase, self.urgency, self.verdict, self.d, self.critical
        )
    }
}

fn fit_candidate(sample: &[f64], family: ParametricFamily) -> Option<DistributionRef> {
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    match family {
        ParametricFamily::Exponential => DistributionRef::exponential(mean).ok(),
        ParametricFamily::Triangular => {
            let low = sample.iter().copied().fold(f64::INFINITY, f64::min);
            let high = sample.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mode = (3.0 * mean - low - high).clamp(low, high);
            DistributionRef::triangular(low, mode, high, true).ok()
        }
    }
}

/// Fits `family` by moments and keeps it unless KS rejects at level `alpha`,
/// in which case the sample itself becomes an empirical distribution.
pub fn fit_or_empirical(sample: &[f64], family: ParametricFamily, alpha: f64) -> Result<FitOutcome, FitError> {
    if sample.len() < MIN_FIT_SAMPLE {
        return Err(FitError::SampleTooSmall {
            got: sample.len(),
            min: MIN_FIT_SAMPLE,
        });
    }
    if sample.iter().any(|x| !x.is_finite()) {
        return Err(FitError::NonFinite);
    }
    let critical = ks_critical_value(alpha, sample.len());
    let empirical = || DistributionRef::empirical(sample.to_vec()).expect("validated sample");
    let Some(candidate) = fit_candidate(sample, family) else {
        // Degenerate moments (e.g. zero mean): nothing to test.
        return Ok(FitOutcome {
            distribution: empirical(),
            verdict: FitVerdict::Empirical,
            d: 1.0,
            critical,
        });
    };
    let d = ks_statistic(sample, |x| candidate.cdf(x))?;
    if d > critical {
        Ok(FitOutcome {
            distribution: empirical(),
            verdict: FitVerdict::Empirical,
            d,
            critical,
        })
    } else {
        Ok(FitOutcome {
            distribution: candidate,
            verdict: FitVerdict::Parametric,
            d,
            critical,
        })
    }
}

impl FitOutcome {
    pub fn is_empirical(&self) -> bool {
        matches!(self.distribution.kind(), DistKind::Empirical(_))
    }
}
