//! Five-level overtake signal driven by the nearest ranged vehicle.

use std::fmt;
use std::str::FromStr;

use serde::Deserialize;

use crate::{Error, Result};

/// Signal level. The five distance bands are ordered from nearest to
/// farthest; `NoTarget` sits outside that order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SignalLevel {
    Danger,
    Caution,
    Neutral,
    NearSafe,
    Safe,
    NoTarget,
}

impl SignalLevel {
    const BANDS: [SignalLevel; 5] = [
        SignalLevel::Danger,
        SignalLevel::Caution,
        SignalLevel::Neutral,
        SignalLevel::NearSafe,
        SignalLevel::Safe,
    ];

    /// Band index (Danger = 0 .. Safe = 4), `None` for `NoTarget`.
    pub fn band(self) -> Option<usize> {
        Self::BANDS.iter().position(|&l| l == self)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SignalLevel::Danger => "Danger",
            SignalLevel::Caution => "Caution",
            SignalLevel::Neutral => "Neutral",
            SignalLevel::NearSafe => "NearSafe",
            SignalLevel::Safe => "Safe",
            SignalLevel::NoTarget => "NoTarget",
        }
    }
}

impl fmt::Display for SignalLevel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SignalLevel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::BANDS
            .iter()
            .chain(&[SignalLevel::NoTarget])
            .copied()
            .find(|l| l.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown signal level {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalThresholds {
    /// Band boundaries in cm, strictly ascending. A depth equal to a
    /// boundary belongs to the farther band.
    pub breakpoints: [f64; 4],
    /// cm.
    pub hysteresis: f64,
}

impl Default for SignalThresholds {
    fn default() -> Self {
        Self {
            breakpoints: [115.0, 231.0, 346.0, 462.0],
            hysteresis: 5.0,
        }
    }
}

impl SignalThresholds {
    pub fn validate(&self) -> Result<()> {
        let b = &self.breakpoints;
        if !b.iter().all(|v| v.is_finite() && *v > 0.0) || !b.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::Config(format!(
                "breakpoints must be positive and strictly ascending, got {b:?}"
            )));
        }
        let min_gap = b.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
        if !(self.hysteresis >= 0.0 && self.hysteresis < min_gap) {
            return Err(Error::Config(format!(
                "hysteresis must be in [0, {min_gap}), got {}",
                self.hysteresis
            )));
        }
        Ok(())
    }
}

pub fn classify(depth: Option<f64>, t: &SignalThresholds) -> SignalLevel {
    match depth {
        None => SignalLevel::NoTarget,
        Some(d) => SignalLevel::BANDS[t.breakpoints.iter().filter(|&&b| d >= b).count()],
    }
}

/// One update of the signal.
///
/// A change to an adjacent band is held back while the depth is less than
/// `hysteresis` from the boundary between the two bands. Larger jumps and
/// transitions to or from `NoTarget` take effect immediately.
pub fn step(prev: SignalLevel, depth: Option<f64>, t: &SignalThresholds) -> SignalLevel {
    let raw = classify(depth, t);
    let (Some(p), Some(r), Some(d)) = (prev.band(), raw.band(), depth) else {
        return raw;
    };
    if p.abs_diff(r) == 1 && (d - t.breakpoints[p.min(r)]).abs() < t.hysteresis {
        prev
    } else {
        raw
    }
}

/// Signal export line: `frame_idx level depth_cm`, with `-` for no depth.
pub fn format_signal(frame_idx: u64, level: SignalLevel, depth: Option<f64>) -> String {
    match depth {
        Some(d) => format!("{frame_idx} {level} {d:.3}"),
        None => format!("{frame_idx} {level} -"),
    }
}
