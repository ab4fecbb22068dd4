use thiserror::Error;

use super::RngStream;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DistError {
    #[error("empirical sample is empty")]
    EmptySample,
    #[error("empirical sample contains a non-finite value")]
    NonFiniteSample,
    #[error("exponential mean must be positive and finite, got {0}")]
    BadMean(f64),
    #[error("triangular parameters must satisfy low <= mode <= high (got {low}, {mode}, {high})")]
    BadTriangular { low: f64, mode: f64, high: f64 },
    #[error("constant value must not be NaN or -inf")]
    BadConstant,
}

/// Shape of a duration distribution, in minutes.
#[derive(Debug, Clone, PartialEq)]
pub enum DistKind {
    /// Observed values, sorted ascending; sampling resamples them uniformly.
    Empirical(Vec<f64>),
    Exponential {
        mean: f64,
    },
    Triangular {
        low: f64,
        mode: f64,
        high: f64,
    },
    /// `f64::INFINITY` is accepted as a "never" sentinel for interarrival times.
    Constant(f64),
}

/// A validated distribution plus its truncation flag.
#[derive(Debug, Clone, PartialEq)]
pub struct DistributionRef {
    kind: DistKind,
    truncate_at_zero: bool,
}

impl DistributionRef {
    pub fn new(kind: DistKind, truncate_at_zero: bool) -> Result<Self, DistError> {
        let kind = match kind {
            DistKind::Empirical(mut v) => {
                if v.is_empty() {
                    return Err(DistError::EmptySample);
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(DistError::NonFiniteSample);
                }
                v.sort_by(f64::total_cmp);
                DistKind::Empirical(v)
            }
            DistKind::Exponential { mean } => {
                if !(mean > 0.0 && mean.is_finite()) {
                    return Err(DistError::BadMean(mean));
                }
                DistKind::Exponential { mean }
            }
            DistKind::Triangular { low, mode, high } => {
                let finite = low.is_finite() && mode.is_finite() && high.is_finite();
                if !finite || !(low <= mode && mode <= high) {
                    return Err(DistError::BadTriangular { low, mode, high });
                }
                DistKind::Triangular { low, mode, high }
            }
            DistKind::Constant(c) => {
                if c.is_nan() || c == f64::NEG_INFINITY {
                    return Err(DistError::BadConstant);
                }
                DistKind::Constant(c)
            }
        };
        Ok(DistributionRef { kind, truncate_at_zero })
    }

    pub fn empirical(values: Vec<f64>) -> Result<Self, DistError> {
        Self::new(DistKind::Empirical(values), true)
    }

    pub fn exponential(mean: f64) -> Result<Self, DistError> {
        Self::new(DistKind::Exponential { mean }, true)
    }

    pub fn triangular(low: f64, mode: f64, high: f64, truncate_at_zero: bool) -> Result<Self, DistError> {
        Self::new(DistKind::Triangular { low, mode, high }, truncate_at_zero)
    }

    pub fn constant(value: f64) -> Result<Self, DistError> {
        Self::new(DistKind::Constant(value), true)
    }

    /// Constant `+inf`: the owner of this distribution never fires.
    pub fn never() -> Self {
        DistributionRef {
            kind: DistKind::Constant(f64::INFINITY),
            truncate_at_zero: true,
        }
    }

    pub fn kind(&self) -> &DistKind {
        &self.kind
    }

    pub fn truncate_at_zero(&self) -> bool {
        self.truncate_at_zero
    }

    pub fn is_never(&self) -> bool {
        matches!(self.kind, DistKind::Constant(c) if c == f64::INFINITY)
    }

    /// Draws one value. Exactly one uniform is consumed per call for the
    /// random kinds, none for `Constant`.
    pub fn sample(&self, stream: &mut RngStream) -> f64 {
        let raw = match &self.kind {
            DistKind::Constant(c) => *c,
            DistKind::Empirical(v) => v[stream.index(v.len())],
            DistKind::Exponential { mean } => -mean * (1.0 - stream.uniform()).ln(),
            DistKind::Triangular { low, mode, high } => triangular_inverse(*low, *mode, *high, stream.uniform()),
        };
        if self.truncate_at_zero && raw < 0.0 {
            0.0
        } else {
            raw
        }
    }

    /// Mean of the untruncated distribution.
    pub fn mean(&self) -> f64 {
        match &self.kind {
            DistKind::Constant(c) => *c,
            DistKind::Empirical(v) => v.iter().sum::<f64>() / v.len() as f64,
            DistKind::Exponential { mean } => *mean,
            DistKind::Triangular { low, mode, high } => (low + mode + high) / 3.0,
        }
    }

    /// CDF of the untruncated distribution (right-continuous).
    pub fn cdf(&self, x: f64) -> f64 {
        match &self.kind {
            DistKind::Constant(c) => {
                if x >= *c {
                    1.0
                } else {
                    0.0
                }
            }
            DistKind::Empirical(v) => {
                let k = v.partition_point(|&s| s <= x);
                k as f64 / v.len() as f64
            }
            DistKind::Exponential { mean } => {
                if x <= 0.0 {
                    0.0
                } else {
                    1.0 - (-x / mean).exp()
                }
            }
            DistKind::Triangular { low, mode, high } => triangular_cdf(*low, *mode, *high, x),
        }
    }
}

fn triangular_inverse(low: f64, mode: f64, high: f64, u: f64) -> f64 {
    let width = high - low;
    if width <= 0.0 {
        return mode;
    }
    let split = (mode - low) / width;
    if u < split {
        low + (u * width * (mode - low)).sqrt()
    } else {
        high - ((1.0 - u) * width * (high - mode)).sqrt()
    }
}

fn triangular_cdf(low: f64, mode: f64, high: f64, x: f64) -> f64 {
    if x < low {
        return 0.0;
    }
    if x >= high {
        return 1.0;
    }
    let width = high - low;
    if x <= mode {
        if mode == low {
            0.0
        } else {
            (x - low).powi(2) / (width * (mode - low))
        }
    } else {
        1.0 - (high - x).powi(2) / (width * (high - mode))
    }
}

/// Travel-time noise for an imprecisely located scene: a draw from
/// `Triangular(t - delta, t, t + delta)` clamped at zero.
pub fn sample_triangular_travel(t: f64, delta: f64, stream: &mut RngStream) -> f64 {
    debug_assert!(t >= 0.0 && delta >= 0.0);
    if delta == 0.0 {
        return t;
    }
    triangular_inverse(t - delta, t, t + delta, stream.uniform()).max(0.0)
}
