//! Trellis fill and batch alignment, single-threaded against the full pool.
//! Build with `--no-default-features` to measure the sequential fallback.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ctcseg::align::{align_encoded, compute_trellis};
use ctcseg::par;
use ctcseg::synth::{generate, SynthSpec, SynthUtterance, Synthesized};
use ctcseg::text::{encode, EncodedText};
use ctcseg::{compute_trellis_windowed, AlignConfig, NormalizationRules};

fn spec(seed: u64, utterances: usize) -> SynthSpec {
    let words = [
        "alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel",
    ];
    let mut tokens = vec!["<blank>".to_string(), "<space>".to_string()];
    tokens.extend(('a'..='z').map(|c| c.to_string()));
    SynthSpec {
        recording_id: format!("bench{seed}"),
        tokens,
        blank_index: 0,
        utterances: (0..utterances)
            .map(|i| SynthUtterance {
                id: format!("u{i}"),
                text: (0..6)
                    .map(|k| words[(i * 3 + k + seed as usize) % words.len()])
                    .collect::<Vec<_>>()
                    .join(" "),
                present: true,
                start: None,
            })
            .collect(),
        frames_per_char: 6,
        blank_gap_frames: 40,
        prologue: 5.0,
        epilogue: 5.0,
        peak_prob: 0.95,
        noise: 0.001,
        noise_seed: seed,
        index_duration: 0.01,
    }
}

fn prepared(seed: u64, utterances: usize) -> (Synthesized, EncodedText) {
    let s = generate(&spec(seed, utterances)).unwrap();
    let rules = NormalizationRules::from_token_table(&s.tokens);
    let text = encode(&s.transcripts, &s.tokens, &rules).unwrap();
    (s, text)
}

fn thread_counts() -> Vec<usize> {
    let all = par::current_threads();
    if all > 1 {
        vec![1, all]
    } else {
        vec![1]
    }
}

fn trellis_fill(c: &mut Criterion) {
    // One frame per character keeps T close to M, so rows are wide enough
    // (over 8192 characters) to be split across workers.
    let mut dense = spec(1, 200);
    dense.frames_per_char = 1;
    dense.blank_gap_frames = 1;
    let s = generate(&dense).unwrap();
    let rules = NormalizationRules::from_token_table(&s.tokens);
    let text = encode(&s.transcripts, &s.tokens, &rules).unwrap();
    let mut group = c.benchmark_group("trellis_full");
    group.sample_size(10);
    for threads in thread_counts() {
        group.bench_with_input(BenchmarkId::from_parameter(threads), &threads, |b, &n| {
            b.iter(|| {
                par::with_threads(n, || {
                    compute_trellis(&s.posteriors, &text)
                        .unwrap()
                        .filled_cells()
                })
            })
        });
    }
    group.finish();

    let (s, text) = prepared(2, 60);
    let config = AlignConfig::default();
    let mut group = c.benchmark_group("trellis_windowed");
    group.sample_size(10);
    for threads in thread_counts() {
        group.bench_with_input(BenchmarkId::from_parameter(threads), &threads, |b, &n| {
            b.iter(|| {
                par::with_threads(n, || {
                    compute_trellis_windowed(&s.posteriors, &text, &config)
                        .unwrap()
                        .filled_cells()
                })
            })
        });
    }
    group.finish();
}

fn batch_alignment(c: &mut Criterion) {
    let batch: Vec<_> = (0..16).map(|seed| prepared(seed, 20)).collect();
    let config = AlignConfig::default();
    let mut group = c.benchmark_group("batch_align");
    group.sample_size(10);
    for threads in thread_counts() {
        group.bench_with_input(BenchmarkId::from_parameter(threads), &threads, |b, &n| {
            b.iter(|| {
                par::with_threads(n, || {
                    par::map_slice(&batch, |(s, text)| {
                        align_encoded(&s.posteriors, text, &config, "bench")
                            .unwrap()
                            .manifest
                    })
                })
            })
        });
    }
    group.finish();
}

criterion_group!(benches, trellis_fill, batch_alignment);
criterion_main!(benches);
