//! Metric harness against directly computed values.

mod common;

use ctcseg::eval::{evaluate, evaluate_corpus, Histogram, HISTOGRAM_BINS};
use ctcseg::{Segment, SegmentManifest};
use proptest::prelude::*;

fn manifest(rec: &str, spans: &[(f64, f64)]) -> SegmentManifest {
    SegmentManifest {
        recording_id: rec.into(),
        segments: spans
            .iter()
            .enumerate()
            .map(|(i, &(start, end))| Segment {
                utterance_id: format!("{rec}-{i}"),
                start,
                end,
                score_log: 0.0,
                text: String::new(),
                filtered: false,
                degenerate: false,
            })
            .collect(),
    }
}

/// Straightforward two-pass statistics over the pooled absolute deviations.
fn oracle(pred: &[(f64, f64)], reference: &[(f64, f64)], thr: f64) -> (f64, f64, f64) {
    let mut devs = Vec::new();
    for (p, r) in pred.iter().zip(reference) {
        devs.push((p.0 - r.0).abs());
        devs.push((p.1 - r.1).abs());
    }
    let n = devs.len() as f64;
    let mean = devs.iter().sum::<f64>() / n;
    let std = (devs.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n).sqrt();
    let within = devs.iter().filter(|&&d| d <= thr + 1e-9).count() as f64 / n;
    (mean, std, within)
}

#[test]
fn single_segment_example() {
    let r = evaluate(
        &manifest("r", &[(0.0, 1.0)]),
        &manifest("r", &[(0.2, 1.0)]),
        0.5,
    )
    .unwrap();
    assert!((r.mean_dev - 0.1).abs() < 1e-9);
    assert!((r.std_dev - 0.1).abs() < 1e-9);
    assert_eq!(r.within_ratio, 1.0);
    assert_eq!(r.n_boundaries, 2);
}

#[test]
fn identical_manifests_score_perfectly() {
    let m = manifest("r", &[(0.0, 1.0), (1.5, 2.5), (3.0, 7.25)]);
    let r = evaluate(&m, &m, 0.5).unwrap();
    assert_eq!((r.mean_dev, r.std_dev, r.within_ratio), (0.0, 0.0, 1.0));
    assert_eq!(r.summary_line(), "Mean 0.00s Std 0.00 <0.5s 100.0%");
}

#[test]
fn shifted_starts_example() {
    let reference: Vec<(f64, f64)> = (0..10)
        .map(|i| (2.0 * i as f64, 2.0 * i as f64 + 1.5))
        .collect();
    let pred: Vec<(f64, f64)> = reference.iter().map(|&(s, e)| (s + 0.6, e)).collect();
    let r = evaluate(&manifest("r", &pred), &manifest("r", &reference), 0.5).unwrap();
    assert!((r.mean_dev - 0.3).abs() < 1e-9);
    assert!((r.std_dev - 0.3).abs() < 1e-9);
    assert!((r.within_ratio - 0.5).abs() < 1e-9);
    assert!((r.start.mean_dev - 0.6).abs() < 1e-9);
    assert_eq!(r.end.mean_dev, 0.0);
}

#[test]
fn corpus_pools_across_recordings() {
    let a_ref = manifest("a", &[(0.0, 1.0)]);
    let b_ref = manifest("b", &[(0.0, 2.0), (3.0, 4.0)]);
    let a = manifest("a", &[(0.1, 1.0)]);
    let b = manifest("b", &[(0.0, 2.3), (3.0, 4.0)]);
    let r = evaluate_corpus(&[a, b], &[a_ref, b_ref], 0.2).unwrap();
    assert_eq!(r.n_boundaries, 6);
    assert!((r.mean_dev - 0.4 / 6.0).abs() < 1e-9);
    assert!((r.within_ratio - 5.0 / 6.0).abs() < 1e-9);
}

#[test]
fn unmatched_segments_are_reported_not_scored() {
    let reference = manifest("r", &[(0.0, 1.0), (2.0, 3.0)]);
    let mut pred = manifest("r", &[(0.0, 1.0)]);
    pred.segments[0].utterance_id = "r-1".into();
    pred.segments[0].start = 2.0;
    pred.segments[0].end = 3.0;
    let r = evaluate(&pred, &reference, 0.5).unwrap();
    assert_eq!(r.n_boundaries, 2);
    assert_eq!(r.unmatched_reference, vec!["r-0".to_string()]);
}

fn recount(devs: &[f64], edges: &[f64]) -> Vec<usize> {
    let mut counts = vec![0; edges.len() - 1];
    for &d in devs {
        let last = edges.len() - 2;
        let i = (0..=last)
            .find(|&i| d >= edges[i] && (d < edges[i + 1] || (i == last && d <= edges[i + 1])))
            .unwrap_or(if d < edges[0] { 0 } else { last });
        counts[i] += 1;
    }
    counts
}

fn spans() -> impl Strategy<Value = Vec<((f64, f64), (f64, f64))>> {
    prop::collection::vec(
        ((0.0f64..100.0, 0.1f64..10.0), (-2.0f64..2.0, -2.0f64..2.0)),
        1..30,
    )
    .prop_map(|v| {
        v.into_iter()
            .map(|((s, len), (ds, de))| ((s, s + len), (s + ds, s + len + de)))
            .collect()
    })
}

proptest! {
    #![proptest_config(common::proptest_config(128))]

    #[test]
    fn matches_oracle_and_is_symmetric(pairs in spans(), thr in 0.0f64..1.5) {
        let reference: Vec<(f64, f64)> = pairs.iter().map(|p| p.0).collect();
        let pred: Vec<(f64, f64)> = pairs.iter().map(|p| p.1).collect();
        let (m, s, w) = oracle(&pred, &reference, thr);
        let r = evaluate(&manifest("x", &pred), &manifest("x", &reference), thr).unwrap();
        prop_assert!((r.mean_dev - m).abs() < 1e-9);
        prop_assert!((r.std_dev - s).abs() < 1e-9);
        prop_assert!((r.within_ratio - w).abs() < 1e-9);
        let swapped = evaluate(&manifest("x", &reference), &manifest("x", &pred), thr).unwrap();
        prop_assert!((swapped.mean_dev - r.mean_dev).abs() < 1e-12);
        prop_assert!((swapped.std_dev - r.std_dev).abs() < 1e-12);
        prop_assert_eq!(swapped.within_ratio, r.within_ratio);
        let own = evaluate(&manifest("x", &pred), &manifest("x", &pred), thr).unwrap();
        prop_assert_eq!(own.mean_dev, 0.0);
        prop_assert_eq!(own.within_ratio, 1.0);
    }

    #[test]
    fn histogram_matches_recount(pairs in spans()) {
        let reference: Vec<(f64, f64)> = pairs.iter().map(|p| p.0).collect();
        let pred: Vec<(f64, f64)> = pairs.iter().map(|p| p.1).collect();
        let r = evaluate(&manifest("x", &pred), &manifest("x", &reference), 0.5).unwrap();
        let h = r.histogram();
        prop_assert_eq!(h.edges.len(), HISTOGRAM_BINS + 1);
        let starts: Vec<f64> = pred.iter().zip(&reference).map(|(p, q)| p.0 - q.0).collect();
        let ends: Vec<f64> = pred.iter().zip(&reference).map(|(p, q)| p.1 - q.1).collect();
        prop_assert_eq!(&h.count_start, &recount(&starts, &h.edges));
        prop_assert_eq!(&h.count_end, &recount(&ends, &h.edges));
        prop_assert_eq!(h.count_start.iter().sum::<usize>(), pairs.len());

        let csv = h.to_csv();
        let mut lines = csv.lines();
        prop_assert_eq!(lines.next(), Some("bin_left,bin_right,count_start,count_end"));
        let mut total = 0;
        for (i, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            prop_assert_eq!(f[2].parse::<usize>().unwrap(), h.count_start[i]);
            prop_assert_eq!(f[3].parse::<usize>().unwrap(), h.count_end[i]);
            total += 1;
        }
        prop_assert_eq!(total, HISTOGRAM_BINS);
    }
}

#[test]
fn zero_deviation_histogram_uses_fallback_range() {
    let h = Histogram::new(&[0.0, 0.0], &[0.0], 0.5);
    assert!((h.edges[0] + 0.5).abs() < 1e-12);
    assert!((h.edges[HISTOGRAM_BINS] - 0.5).abs() < 1e-12);
    assert_eq!(h.count_start[HISTOGRAM_BINS / 2], 2);
    assert_eq!(h.count_end[HISTOGRAM_BINS / 2], 1);
}
