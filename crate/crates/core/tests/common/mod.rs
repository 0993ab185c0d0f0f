#![allow(dead_code)]

use ctcseg::io::PosteriorMatrix;
use ctcseg::synth::{SynthSpec, SynthUtterance};
use ctcseg::text::EncodedText;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random row-normalized posteriors.
pub fn random_posteriors(rng: &mut ChaCha8Rng, frames: usize, tokens: usize) -> PosteriorMatrix {
    let rows: Vec<Vec<f64>> = (0..frames)
        .map(|_| {
            let raw: Vec<f64> = (0..tokens).map(|_| rng.gen_range(0.01..1.0)).collect();
            let total: f64 = raw.iter().sum();
            raw.iter().map(|p| p / total).collect()
        })
        .collect();
    PosteriorMatrix::from_probabilities(&rows, 0.01, 0).unwrap()
}

/// Random text over tokens `1..tokens` as a single utterance.
pub fn random_text(rng: &mut ChaCha8Rng, len: usize, tokens: usize) -> EncodedText {
    let idx = (0..len).map(|_| rng.gen_range(1..tokens)).collect();
    EncodedText::from_utterances(vec![("u".into(), String::new(), idx)], 1)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const LETTERS: &str = "abcdefghijklmnopqrstuvwxyz";

pub fn letter_tokens() -> Vec<String> {
    let mut t = vec!["<blank>".to_string(), "<space>".to_string()];
    t.extend(LETTERS.chars().map(|c| c.to_string()));
    t
}

/// Pseudo-random word salad of exactly `len` characters.
pub fn sentence(rng: &mut ChaCha8Rng, len: usize) -> String {
    let letters: Vec<char> = LETTERS.chars().collect();
    let mut s = String::new();
    while s.len() < len {
        let room = len - s.len();
        if !s.is_empty() && room >= 2 {
            s.push(' ');
        }
        let word = rng.gen_range(2..8).min(len - s.len());
        for _ in 0..word {
            s.push(letters[rng.gen_range(0..letters.len())]);
        }
    }
    s
}

/// Multi-utterance synthetic recording.
pub fn recording(seed: u64, utterances: usize, prologue: f64, epilogue: f64) -> SynthSpec {
    let mut r = rng(seed);
    SynthSpec {
        recording_id: format!("rec{seed}"),
        tokens: letter_tokens(),
        blank_index: 0,
        utterances: (0..utterances)
            .map(|i| SynthUtterance {
                id: format!("utt{i:02}"),
                text: sentence(&mut r, 20 + (i * 7) % 25),
                present: true,
                start: None,
            })
            .collect(),
        frames_per_char: 6,
        blank_gap_frames: 40,
        prologue,
        epilogue,
        peak_prob: 0.9,
        noise: 0.002,
        noise_seed: seed,
        index_duration: 0.01,
    }
}

/// Fixed case count and seed, no regression files.
pub fn proptest_config(cases: u32) -> proptest::test_runner::Config {
    proptest::test_runner::Config {
        cases,
        failure_persistence: None,
        rng_seed: proptest::test_runner::RngSeed::Fixed(0x5eed),
        ..Default::default()
    }
}
