//! Post-processing of raw MVF trajectories.
//!
//! Windows never cross a voicing boundary: each voiced run is smoothed on
//! its own and unvoiced frames pass through as 0. Windows are truncated at
//! run edges. For an even number of available values the median is the
//! middle order statistic closest to the frame's own value (the lower one on
//! a tie or for gap frames), so the output is always an input value.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::signal_io::MvfContour;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmoothMode {
    None,
    Median,
    MovingAverage,
}

impl FromStr for SmoothMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(SmoothMode::None),
            "median" => Ok(SmoothMode::Median),
            "ma" | "moving_average" | "moving-average" => Ok(SmoothMode::MovingAverage),
            other => Err(Error::Validation(format!(
                "unknown smoothing mode '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SmootherConfig {
    pub mode: SmoothMode,
    /// Median window length in frames.
    pub median_order: usize,
    /// Moving-average reach on each side, seconds.
    pub ma_halfwidth: f64,
    pub frame_shift: f64,
}

impl Default for SmootherConfig {
    fn default() -> Self {
        Self {
            mode: SmoothMode::Median,
            median_order: 5,
            ma_halfwidth: 0.030,
            frame_shift: 0.010,
        }
    }
}

impl SmootherConfig {
    pub fn validate(&self) -> Result<()> {
        if self.median_order == 0 || self.median_order.is_multiple_of(2) {
            return Err(Error::Validation(format!(
                "median order must be odd and >= 1, got {}",
                self.median_order
            )));
        }
        if !(self.ma_halfwidth.is_finite() && self.ma_halfwidth >= 0.0) {
            return Err(Error::Validation(format!(
                "moving-average half-width must be >= 0, got {}",
                self.ma_halfwidth
            )));
        }
        if !(self.frame_shift.is_finite() && self.frame_shift > 0.0) {
            return Err(Error::Validation(format!(
                "frame shift must be positive, got {}",
                self.frame_shift
            )));
        }
        Ok(())
    }

    /// Frames reached on each side of the center.
    fn reach(&self) -> usize {
        match self.mode {
            SmoothMode::None => 0,
            SmoothMode::Median => self.median_order / 2,
            SmoothMode::MovingAverage => {
                (self.ma_halfwidth / self.frame_shift + 1e-9).floor() as usize
            }
        }
    }
}

fn window_median(values: &mut [f64], own: Option<f64>) -> f64 {
    values.sort_by(f64::total_cmp);
    let lower = values[(values.len() - 1) / 2];
    let upper = values[values.len() / 2];
    match own {
        Some(v) if (upper - v).abs() < (lower - v).abs() => upper,
        _ => lower,
    }
}

/// Closest non-gap value to `i` inside the run, left side first on ties.
fn nearest_value(values: &[f64], gaps: &[bool], i: usize, start: usize, end: usize) -> f64 {
    for d in 1..end - start {
        if i >= start + d && !gaps[i - d] {
            return values[i - d];
        }
        if i + d < end && !gaps[i + d] {
            return values[i + d];
        }
    }
    0.0
}

/// Smooths a contour; unvoiced (zero) frames are kept as they are.
pub fn smooth(contour: &MvfContour, cfg: &SmootherConfig) -> Result<MvfContour> {
    smooth_with_gaps(contour, &vec![false; contour.len()], cfg)
}

/// Like [`smooth`], but frames flagged in `gaps` are voiced frames without
/// an estimate. They keep their run intact, contribute nothing, and receive
/// the statistic of their available neighbors (0 when there are none).
pub fn smooth_with_gaps(
    contour: &MvfContour,
    gaps: &[bool],
    cfg: &SmootherConfig,
) -> Result<MvfContour> {
    cfg.validate()?;
    if gaps.len() != contour.len() {
        return Err(Error::Precondition(format!(
            "gap mask has {} frames, contour {}",
            gaps.len(),
            contour.len()
        )));
    }
    let values = &contour.values;
    let in_run: Vec<bool> = values
        .iter()
        .zip(gaps)
        .map(|(&v, &g)| v > 0.0 || g)
        .collect();
    let reach = cfg.reach();
    let mut out = values.clone();
    let mut window = Vec::with_capacity(2 * reach + 1);

    let mut start = 0;
    while start < values.len() {
        if !in_run[start] {
            start += 1;
            continue;
        }
        let mut end = start;
        while end < values.len() && in_run[end] {
            end += 1;
        }
        for i in start..end {
            if cfg.mode == SmoothMode::None {
                if gaps[i] {
                    out[i] = nearest_value(values, gaps, i, start, end);
                }
                continue;
            }
            let lo = i.saturating_sub(reach).max(start);
            let hi = (i + reach).min(end - 1);
            window.clear();
            window.extend((lo..=hi).filter(|&j| !gaps[j]).map(|j| values[j]));
            out[i] = if window.is_empty() {
                0.0
            } else {
                match cfg.mode {
                    SmoothMode::MovingAverage => window.iter().sum::<f64>() / window.len() as f64,
                    _ => window_median(&mut window, (!gaps[i]).then_some(values[i])),
                }
            };
        }
        start = end;
    }
    MvfContour::new(contour.start_time, contour.frame_shift, out)
}
