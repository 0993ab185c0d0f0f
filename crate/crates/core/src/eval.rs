//! Boundary accuracy against a reference segmentation, and the
//! prepend/append robustness augmentation.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::align::SegmentManifest;
use crate::error::{Error, Result};
use crate::io::PosteriorMatrix;

/// Number of histogram bins for signed deviations.
pub const HISTOGRAM_BINS: usize = 60;

/// Deviations within this distance of the threshold count as within it.
const THRESHOLD_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundaryStats {
    pub mean_dev: f64,
    pub std_dev: f64,
    pub within_ratio: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    /// Mean absolute deviation over starts and ends pooled (seconds).
    pub mean_dev: f64,
    /// Population standard deviation of the pooled absolute deviations.
    pub std_dev: f64,
    /// Fraction of pooled deviations at most `threshold`.
    pub within_ratio: f64,
    pub threshold: f64,
    pub n_boundaries: usize,
    pub start: BoundaryStats,
    pub end: BoundaryStats,
    pub unmatched_predicted: Vec<String>,
    pub unmatched_reference: Vec<String>,
    #[serde(skip)]
    pub signed_start: Vec<f64>,
    #[serde(skip)]
    pub signed_end: Vec<f64>,
}

fn stats(devs: &[f64], threshold: f64) -> BoundaryStats {
    let n = devs.len();
    if n == 0 {
        return BoundaryStats {
            mean_dev: 0.0,
            std_dev: 0.0,
            within_ratio: 0.0,
            count: 0,
        };
    }
    let mean = devs.iter().sum::<f64>() / n as f64;
    let var = devs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / n as f64;
    let within = devs
        .iter()
        .filter(|&&d| d <= threshold + THRESHOLD_SLACK)
        .count();
    BoundaryStats {
        mean_dev: mean,
        std_dev: var.sqrt(),
        within_ratio: within as f64 / n as f64,
        count: n,
    }
}

fn index_segments<'a>(
    manifests: &'a [SegmentManifest],
    what: &str,
) -> Result<HashMap<&'a str, (f64, f64)>> {
    let mut map = HashMap::new();
    for seg in manifests.iter().flat_map(|m| &m.segments) {
        if map
            .insert(seg.utterance_id.as_str(), (seg.start, seg.end))
            .is_some()
        {
            return Err(Error::Evaluation(format!(
                "duplicate utterance id {:?} in {what}",
                seg.utterance_id
            )));
        }
    }
    Ok(map)
}

/// Evaluates one predicted manifest against one reference.
pub fn evaluate(
    predicted: &SegmentManifest,
    reference: &SegmentManifest,
    threshold: f64,
) -> Result<EvalReport> {
    evaluate_corpus(
        std::slice::from_ref(predicted),
        std::slice::from_ref(reference),
        threshold,
    )
}

/// Pools every matched utterance of several manifests. Matching is by
/// utterance id only.
pub fn evaluate_corpus(
    predicted: &[SegmentManifest],
    reference: &[SegmentManifest],
    threshold: f64,
) -> Result<EvalReport> {
    if !(threshold.is_finite() && threshold >= 0.0) {
        return Err(Error::Evaluation(format!("invalid threshold {threshold}")));
    }
    let refs = index_segments(reference, "reference")?;
    let preds = index_segments(predicted, "prediction")?;

    let mut signed_start = Vec::new();
    let mut signed_end = Vec::new();
    let mut unmatched_predicted = Vec::new();
    for seg in predicted.iter().flat_map(|m| &m.segments) {
        match refs.get(seg.utterance_id.as_str()) {
            Some(&(rs, re)) => {
                signed_start.push(seg.start - rs);
                signed_end.push(seg.end - re);
            }
            None => unmatched_predicted.push(seg.utterance_id.clone()),
        }
    }
    let unmatched_reference: Vec<String> = reference
        .iter()
        .flat_map(|m| &m.segments)
        .filter(|s| !preds.contains_key(s.utterance_id.as_str()))
        .map(|s| s.utterance_id.clone())
        .collect();
    if signed_start.is_empty() {
        return Err(Error::Evaluation("no matched segments".into()));
    }

    let abs_start: Vec<f64> = signed_start.iter().map(|d| d.abs()).collect();
    let abs_end: Vec<f64> = signed_end.iter().map(|d| d.abs()).collect();
    let pooled: Vec<f64> = abs_start.iter().chain(&abs_end).copied().collect();
    let all = stats(&pooled, threshold);

    Ok(EvalReport {
        mean_dev: all.mean_dev,
        std_dev: all.std_dev,
        within_ratio: all.within_ratio,
        threshold,
        n_boundaries: pooled.len(),
        start: stats(&abs_start, threshold),
        end: stats(&abs_end, threshold),
        unmatched_predicted,
        unmatched_reference,
        signed_start,
        signed_end,
    })
}

impl EvalReport {
    /// `Mean 0.34s Std 0.52 <0.5s 90.1%`
    pub fn summary_line(&self) -> String {
        format!(
            "Mean {:.2}s Std {:.2} <{}s {:.1}%",
            self.mean_dev,
            self.std_dev,
            self.threshold,
            100.0 * self.within_ratio
        )
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn histogram(&self) -> Histogram {
        Histogram::new(&self.signed_start, &self.signed_end, self.threshold)
    }
}

/// Signed-deviation histogram over a symmetric range.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub count_start: Vec<usize>,
    pub count_end: Vec<usize>,
}

impl Histogram {
    /// Bins span `[-R, R]` where `R` is the largest absolute deviation (or
    /// `fallback_range` when every deviation is zero). The last bin is closed.
    pub fn new(start: &[f64], end: &[f64], fallback_range: f64) -> Self {
        let mut range = start
            .iter()
            .chain(end)
            .fold(0.0f64, |acc, d| acc.max(d.abs()));
        if range == 0.0 {
            range = if fallback_range > 0.0 {
                fallback_range
            } else {
                1.0
            };
        }
        let width = 2.0 * range / HISTOGRAM_BINS as f64;
        let edges: Vec<f64> = (0..=HISTOGRAM_BINS)
            .map(|i| -range + i as f64 * width)
            .collect();
        let bin = |d: f64| (((d + range) / width).floor() as usize).min(HISTOGRAM_BINS - 1);
        let count = |devs: &[f64]| {
            let mut counts = vec![0usize; HISTOGRAM_BINS];
            for &d in devs {
                counts[bin(d)] += 1;
            }
            counts
        };
        Histogram {
            edges,
            count_start: count(start),
            count_end: count(end),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("bin_left,bin_right,count_start,count_end\n");
        for i in 0..self.count_start.len() {
            let _ = writeln!(
                out,
                "{:.6},{:.6},{},{}",
                self.edges[i],
                self.edges[i + 1],
                self.count_start[i],
                self.count_end[i]
            );
        }
        out
    }
}

/// Prepends the last `prepend_sec` seconds of the recording and appends its
/// first `append_sec` seconds, shifting the reference by the realized prepend.
pub fn augment(
    posteriors: &PosteriorMatrix,
    prepend_sec: f64,
    append_sec: f64,
    reference: &SegmentManifest,
) -> Result<(PosteriorMatrix, SegmentManifest)> {
    let duration = posteriors.duration();
    for (name, v) in [("prepend", prepend_sec), ("append", append_sec)] {
        if !(v.is_finite() && v >= 0.0) || v > duration + 1e-9 {
            return Err(Error::Augment(format!(
                "{name} of {v}s is outside [0, {duration}]s"
            )));
        }
    }
    let frames = posteriors.frames();
    let dt = posteriors.seconds_per_frame();
    let to_frames = |sec: f64| ((sec / dt + 1e-9).floor() as usize).min(frames);
    let pre = to_frames(prepend_sec);
    let post = to_frames(append_sec);

    let tokens = posteriors.num_tokens();
    let data = posteriors.data();
    let mut out = Vec::with_capacity((pre + frames + post) * tokens);
    out.extend_from_slice(&data[(frames - pre) * tokens..]);
    out.extend_from_slice(data);
    out.extend_from_slice(&data[..post * tokens]);
    let matrix = PosteriorMatrix::new(
        pre + frames + post,
        tokens,
        out,
        posteriors.index_duration(),
        posteriors.blank_index(),
    )?;

    let shift = pre as f64 * dt;
    let mut shifted = reference.clone();
    for seg in &mut shifted.segments {
        seg.start += shift;
        seg.end += shift;
    }
    Ok((matrix, shifted))
}

/// Draws prepend and append durations uniformly from `[lo, hi]` seconds.
pub fn sample_augmentation(seed: u64, lo: f64, hi: f64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(lo..=hi);
    let m = rng.gen_range(lo..=hi);
    (n, m)
}
