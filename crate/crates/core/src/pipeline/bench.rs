use std::fmt::Write as _;

use super::{FrameResult, FrameSource, Pipeline, STAGES};
use crate::{Error, Result};

/// Summary of one timing series, milliseconds.
#[derive(Debug, Clone, PartialEq)]
pub struct StageStats {
    pub name: &'static str,
    pub mean: f64,
    pub median: f64,
    pub p95: f64,
}

impl StageStats {
    fn from_samples(name: &'static str, samples: &[f64]) -> Self {
        let mut s = samples.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let median = if n % 2 == 1 {
            s[n / 2]
        } else {
            (s[n / 2 - 1] + s[n / 2]) / 2.0
        };
        // Nearest-rank percentile.
        let rank = ((0.95 * n as f64).ceil() as usize).clamp(1, n);
        Self {
            name,
            mean: s.iter().sum::<f64>() / n as f64,
            median,
            p95: s[rank - 1],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyReport {
    pub frames: usize,
    /// One entry per stage, in processing order.
    pub stages: Vec<StageStats>,
    pub total: StageStats,
}

impl LatencyReport {
    pub fn stage(&self, name: &str) -> Option<&StageStats> {
        self.stages.iter().find(|s| s.name == name)
    }

    /// Mean of rectify, match, range and signal combined.
    pub fn non_detect_mean(&self) -> f64 {
        self.stages.iter().filter(|s| s.name != "detect").map(|s| s.mean).sum()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:<8} {:>10} {:>10} {:>10}\n",
            "stage", "mean_ms", "median_ms", "p95_ms"
        );
        for st in self.stages.iter().chain([&self.total]) {
            writeln!(
                s,
                "{:<8} {:>10.4} {:>10.4} {:>10.4}",
                st.name, st.mean, st.median, st.p95
            )
            .unwrap();
        }
        writeln!(s, "frames   {}", self.frames).unwrap();
        s
    }
}

/// Times `n` frames through the pipeline without pacing. All frames are
/// pulled from the source before timing starts, so capture cost is not
/// counted. Any frame error aborts the benchmark.
pub fn bench_latency(
    pipeline: &mut Pipeline,
    source: &mut dyn FrameSource,
    n: usize,
) -> Result<(LatencyReport, Vec<FrameResult>)> {
    if n < 10 {
        return Err(Error::InvalidInput(format!(
            "benchmark needs at least 10 frames, got {n}"
        )));
    }
    let mut frames = Vec::with_capacity(n);
    while frames.len() < n {
        match source.next_frame() {
            Some(Ok(f)) => frames.push(f),
            Some(Err(e)) => return Err(e.error),
            None => {
                return Err(Error::SourceExhausted {
                    wanted: n,
                    got: frames.len(),
                })
            }
        }
    }
    let results = frames.iter().map(|f| pipeline.process(f)).collect::<Result<Vec<_>>>()?;

    let stages = STAGES
        .iter()
        .enumerate()
        .map(|(i, name)| {
            let samples: Vec<f64> = results.iter().map(|r| r.latency.stages[i]).collect();
            StageStats::from_samples(name, &samples)
        })
        .collect();
    let totals: Vec<f64> = results.iter().map(|r| r.latency.total).collect();
    Ok((
        LatencyReport {
            frames: n,
            stages,
            total: StageStats::from_samples("total", &totals),
        },
        results,
    ))
}
