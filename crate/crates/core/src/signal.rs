//! Temporal calibration: estimate the delay between the pose stream and the
//! frame stream.
//!
//! The calibration maneuver moves the probe up and down over a plane phantom,
//! producing two sine-like curves: the vertical coordinate of the pose sensor
//! and the image row of the water/tank edge line. Both are demeaned,
//! normalised into `[-1, 1]` and cross-correlated; the first correlation peak
//! gives the delay. Delay resolution is bounded below by one sample of the
//! slower stream, so both signals are resampled to the lower rate first and
//! the result is reported in whole samples of that rate.

use crate::error::{Error, Result};
use crate::imaging::{detect_line, Frame, LineDetectionConfig};

/// Uniformly sampled real signal.
#[derive(Clone, Debug)]
pub struct SampledSignal {
    pub values: Vec<f64>,
    /// Sample rate in Hz.
    pub rate: f64,
    /// Time of the first sample in seconds.
    pub start_time: f64,
}

impl SampledSignal {
    pub fn new(values: Vec<f64>, rate: f64, start_time: f64) -> Result<Self> {
        if !(rate > 0.0) || !rate.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "signal rate must be positive and finite, got {rate}"
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "signal sample {i} is not finite"
            )));
        }
        Ok(SampledSignal {
            values,
            rate,
            start_time,
        })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Result of the temporal calibration.
#[derive(Clone, Copy, Debug)]
pub struct DelayEstimate {
    /// Delay in seconds: positive means the second signal lags the first.
    pub delay: f64,
    /// The same delay in whole samples at the common (lower) rate.
    pub lag_samples: i32,
    /// Correlation value at the reported peak, in `[-1, 1]`.
    pub peak_correlation: f64,
}

/// Subtract the mean, then scale so the extremal sample is exactly ±1.
pub fn demean_normalize(s: &SampledSignal) -> Result<SampledSignal> {
    if s.len() < 2 {
        return Err(Error::DegenerateSignal(format!(
            "need at least 2 samples, got {}",
            s.len()
        )));
    }
    let mean = s.values.iter().sum::<f64>() / s.len() as f64;
    let centered: Vec<f64> = s.values.iter().map(|v| v - mean).collect();
    let peak = centered.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak == 0.0 {
        return Err(Error::DegenerateSignal(
            "constant signal cannot be normalised".into(),
        ));
    }
    SampledSignal::new(
        centered.iter().map(|v| v / peak).collect(),
        s.rate,
        s.start_time,
    )
}

/// Resample to a new rate with linear interpolation (span preserved,
/// endpoints clamped).
pub fn resample_linear(s: &SampledSignal, rate: f64) -> Result<SampledSignal> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "resample rate must be positive and finite, got {rate}"
        )));
    }
    if s.len() < 2 {
        return Err(Error::DegenerateSignal(
            "need at least 2 samples to resample".into(),
        ));
    }
    let duration = (s.len() - 1) as f64 / s.rate;
    let n = (duration * rate).floor() as usize + 1;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 / rate * s.rate; // position in input samples
        let lo = (t.floor() as usize).min(s.len() - 1);
        let hi = (lo + 1).min(s.len() - 1);
        let w = t - lo as f64;
        out.push(s.values[lo] * (1.0 - w) + s.values[hi] * w);
    }
    SampledSignal::new(out, rate, s.start_time)
}

/// Normalised cross-correlation per integer lag in `[-max_lag, +max_lag]`.
///
/// A peak at lag `k` means `b` is `a` delayed by `k` samples
/// (`b[n] ≈ a[n-k]`). Each lag is normalised over the overlapping window
/// only, so the value stays in `[-1, 1]` and an exact shifted copy scores
/// exactly 1 at its true lag regardless of how large the lag is.
pub fn cross_correlate(
    a: &SampledSignal,
    b: &SampledSignal,
    max_lag: usize,
) -> Result<Vec<(i32, f64)>> {
    if (a.rate - b.rate).abs() > 1e-9 * a.rate.max(b.rate) {
        return Err(Error::InvalidParameter(format!(
            "cross-correlation needs equal rates ({} vs {} Hz); resample first",
            a.rate, b.rate
        )));
    }
    let n = a.len().min(b.len());
    if n < 2 * max_lag.max(1) {
        return Err(Error::DegenerateSignal(format!(
            "signals too short for max_lag {max_lag}: {n} samples overlap, need {}",
            2 * max_lag.max(1)
        )));
    }
    let mut out = Vec::with_capacity(2 * max_lag + 1);
    for lag in -(max_lag as i64)..=max_lag as i64 {
        // Overlap window for pairs (a[m], b[m + lag]).
        let m_start = (-lag).max(0) as usize;
        let m_end = (a.len() as i64).min(b.len() as i64 - lag) as usize;
        let mut num = 0.0;
        let mut aa = 0.0;
        let mut bb = 0.0;
        for m in m_start..m_end {
            let x = a.values[m];
            let y = b.values[(m as i64 + lag) as usize];
            num += x * y;
            aa += x * x;
            bb += y * y;
        }
        let denom = (aa * bb).sqrt();
        let r = if denom > 0.0 { num / denom } else { 0.0 };
        out.push((lag as i32, r.clamp(-1.0, 1.0)));
    }
    Ok(out)
}

/// Which lag signs the peak search may report.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DelaySearch {
    /// Scan outward from lag 0, positive lag first at each magnitude.
    #[default]
    Both,
    NonNegative,
    NonPositive,
}

/// Knobs for [`estimate_delay`].
#[derive(Clone, Copy, Debug)]
pub struct DelayConfig {
    /// Maximum lag magnitude searched, in samples at the common rate.
    /// `None` picks a quarter of the common length.
    pub max_lag: Option<usize>,
    /// Minimum correlation a local maximum must reach to count as the peak.
    pub prominence: f64,
    /// Physically expected sign of the delay.
    pub direction: DelaySearch,
}

impl Default for DelayConfig {
    fn default() -> Self {
        DelayConfig {
            max_lag: None,
            prominence: 0.5,
            direction: DelaySearch::Both,
        }
    }
}

/// Estimate the delay of `b` relative to `a`.
///
/// Both signals are resampled to the lower of the two rates, demeaned and
/// normalised, then cross-correlated. The reported peak is the *first* local
/// maximum above the prominence threshold scanning outward from lag 0 — not
/// the global maximum — because for the periodic calibration maneuver the
/// true delay is the smallest-magnitude strong peak.
pub fn estimate_delay(
    a: &SampledSignal,
    b: &SampledSignal,
    cfg: &DelayConfig,
) -> Result<DelayEstimate> {
    if (a.start_time - b.start_time).abs() > 0.5 / a.rate.min(b.rate) {
        return Err(Error::InvalidParameter(format!(
            "signals must share a start time (got {} s and {} s)",
            a.start_time, b.start_time
        )));
    }
    let rate = a.rate.min(b.rate);
    let ra = demean_normalize(&resample_linear(a, rate)?)?;
    let rb = demean_normalize(&resample_linear(b, rate)?)?;
    let n = ra.len().min(rb.len());
    let max_lag = cfg.max_lag.unwrap_or(n / 4).max(1).min(n / 2 - 1);
    let corr = cross_correlate(&ra, &rb, max_lag)?;
    let at = |lag: i32| corr[(lag + max_lag as i32) as usize].1;

    let mut best_seen = 0.0f64;
    for k in 0..=max_lag as i32 {
        let mut candidates: Vec<i32> = Vec::with_capacity(2);
        match cfg.direction {
            DelaySearch::Both => {
                candidates.push(k);
                if k > 0 {
                    candidates.push(-k);
                }
            }
            DelaySearch::NonNegative => candidates.push(k),
            DelaySearch::NonPositive => candidates.push(-k),
        }
        for lag in candidates {
            let r = at(lag);
            best_seen = best_seen.max(r.abs());
            if r < cfg.prominence {
                continue;
            }
            let left = if lag > -(max_lag as i32) { at(lag - 1) } else { f64::NEG_INFINITY };
            let right = if lag < max_lag as i32 { at(lag + 1) } else { f64::NEG_INFINITY };
            if r >= left && r >= right {
                return Ok(DelayEstimate {
                    delay: lag as f64 / rate,
                    lag_samples: lag,
                    peak_correlation: r,
                });
            }
        }
    }
    Err(Error::NoPeak {
        prominence: cfg.prominence,
        max_lag,
        best: best_seen,
    })
}

/// Per-frame vertical coordinate (pixels) of the detected edge line's
/// midpoint. Frames with no detectable line become gaps and are filled by
/// linear interpolation; more than 50% gaps is an error.
pub fn extract_edge_depth(
    frames: &[Frame],
    rate: f64,
    cfg: &LineDetectionConfig,
) -> Result<SampledSignal> {
    let mut depths: Vec<Option<f64>> = Vec::with_capacity(frames.len());
    for frame in frames {
        let line = detect_line(frame, cfg)?;
        depths.push(line.map(|l| (l.endpoints[0][1] + l.endpoints[1][1]) / 2.0));
    }
    let detected = depths.iter().filter(|d| d.is_some()).count();
    if detected * 2 <= frames.len() {
        return Err(Error::EdgeExtraction {
            detected,
            total: frames.len(),
        });
    }
    SampledSignal::new(interpolate_gaps(&depths), rate, 0.0)
}

/// Fill `None` entries by linear interpolation between neighbours; leading
/// and trailing gaps take the nearest detected value.
fn interpolate_gaps(values: &[Option<f64>]) -> Vec<f64> {
    let mut out = vec![0.0; values.len()];
    let known: Vec<usize> = values
        .iter()
        .enumerate()
        .filter_map(|(i, v)| v.map(|_| i))
        .collect();
    debug_assert!(!known.is_empty());
    for i in 0..values.len() {
        out[i] = match values[i] {
            Some(v) => v,
            None => {
                let hi = known.partition_point(|&k| k < i);
                if hi == 0 {
                    values[known[0]].unwrap()
                } else if hi == known.len() {
                    values[known[hi - 1]].unwrap()
                } else {
                    let (k0, k1) = (known[hi - 1], known[hi]);
                    let (v0, v1) = (values[k0].unwrap(), values[k1].unwrap());
                    let w = (i - k0) as f64 / (k1 - k0) as f64;
                    v0 * (1.0 - w) + v1 * w
                }
            }
        };
    }
    out
}
