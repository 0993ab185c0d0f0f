//! Trellis and backtracking checked against exhaustive enumeration.

mod common;

use common::{random_posteriors, random_text, rng};
use ctcseg::align::{backtrack, compute_trellis, compute_trellis_with, AlignConfig};
use ctcseg::synth::brute_force_best_path;
use ctcseg::{compute_trellis_windowed, extract_segments};
use proptest::prelude::*;
use rand::Rng;

#[test]
fn dp_matches_enumeration_on_200_seeds() {
    let mut unique = 0;
    for seed in 0..200u64 {
        let mut r = rng(seed);
        let frames = r.gen_range(1..=12);
        let tokens = r.gen_range(2..=3);
        let chars = r.gen_range(1..=4);
        let p = random_posteriors(&mut r, frames, tokens);
        let text = random_text(&mut r, chars, tokens);
        let oracle = brute_force_best_path(&p, &text.indices, false).unwrap();
        match (compute_trellis(&p, &text), oracle) {
            (Err(_), None) => assert!(chars > frames),
            (Ok(tr), Some(best)) => {
                let a = backtrack(&tr, &p, &text).unwrap();
                assert!(
                    (a.path_log_prob - best.log_prob).abs() < 1e-9,
                    "seed {seed}: dp {} oracle {}",
                    a.path_log_prob,
                    best.log_prob
                );
                if best.optimal_count == 1 {
                    unique += 1;
                    assert_eq!(a.chars, best.chars, "seed {seed}");
                    assert_eq!(a.end_frame, best.end_frame, "seed {seed}");
                }
            }
            (dp, oracle) => panic!("seed {seed}: dp {dp:?} vs oracle {oracle:?}"),
        }
    }
    assert!(unique > 150);
}

#[test]
fn char_stay_variant_matches_enumeration() {
    for seed in 0..100u64 {
        let mut r = rng(1000 + seed);
        let frames = r.gen_range(2..=10);
        let tokens = 3;
        let chars = r.gen_range(1..=frames.min(4));
        let p = random_posteriors(&mut r, frames, tokens);
        let text = random_text(&mut r, chars, tokens);
        let best = brute_force_best_path(&p, &text.indices, true)
            .unwrap()
            .unwrap();
        let tr = compute_trellis_with(&p, &text, true).unwrap();
        let a = backtrack(&tr, &p, &text).unwrap();
        assert!(
            (a.path_log_prob - best.log_prob).abs() < 1e-9,
            "seed {seed}"
        );
    }
}

#[test]
fn enumeration_campaign_t10_m3() {
    for seed in 0..200u64 {
        let mut r = rng(5000 + seed);
        let p = random_posteriors(&mut r, 10, 3);
        let text = random_text(&mut r, 3, 3);
        let best = brute_force_best_path(&p, &text.indices, false)
            .unwrap()
            .unwrap();
        let tr = compute_trellis(&p, &text).unwrap();
        let k_end = (1..=10)
            .map(|t| tr.value(t, 3))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((k_end - best.log_prob).abs() < 1e-9, "seed {seed}");
    }
}

#[test]
fn wide_windows_are_cell_identical() {
    for seed in 0..100u64 {
        let mut r = rng(9000 + seed);
        let frames = r.gen_range(8..=60);
        let chars = r.gen_range(1..=frames.min(12));
        let p = random_posteriors(&mut r, frames, 4);
        let text = random_text(&mut r, chars, 4);
        let window = (2 * frames).max(16) + r.gen_range(0..5);
        let cfg = AlignConfig {
            window,
            ..AlignConfig::default()
        };
        let full = compute_trellis(&p, &text).unwrap();
        let win = compute_trellis_windowed(&p, &text, &cfg).unwrap();
        assert_eq!(full.filled_cells(), win.filled_cells());
        for t in 0..=frames {
            for j in 0..=chars {
                assert_eq!(full.get(t, j), win.get(t, j), "seed {seed} cell ({t},{j})");
            }
        }
    }
}

proptest! {
    #![proptest_config(common::proptest_config(128))]

    #[test]
    fn alignment_invariants(seed in any::<u64>(), frames in 1usize..40, chars in 1usize..10, tokens in 2usize..6, chunk in 1usize..8) {
        prop_assume!(chars <= frames);
        let mut r = rng(seed);
        let p = random_posteriors(&mut r, frames, tokens);
        let text = random_text(&mut r, chars, tokens);
        let tr = compute_trellis(&p, &text).unwrap();

        // Boundary rows and columns, non-positivity, recursion.
        for t in 0..=frames {
            prop_assert_eq!(tr.get(t, 0), Some(0.0));
        }
        for j in 1..=chars {
            prop_assert_eq!(tr.get(0, j), Some(f64::NEG_INFINITY));
        }
        for t in 1..=frames {
            for j in 1..=chars {
                let v = tr.value(t, j);
                prop_assert!(v <= 0.0);
                let stay = tr.value(t - 1, j) + p.log_blank(t - 1);
                let step = tr.value(t - 1, j - 1) + p.log_prob(t - 1, text.indices[j - 1]);
                prop_assert_eq!(v, stay.max(step));
            }
        }

        let a = backtrack(&tr, &p, &text).unwrap();
        prop_assert!(a.is_monotone());
        prop_assert_eq!(a.chars[a.end_frame - 1], chars);

        // rho is the blank log-prob where the path stays, the character's where it steps.
        let mut prev = 0;
        for (i, (&c, rho)) in a.chars.iter().zip(&a.rho).enumerate() {
            if c == 0 {
                prop_assert!(rho.is_none());
            } else if c == prev {
                prop_assert_eq!(*rho, Some(p.log_blank(i)));
            } else {
                prop_assert_eq!(*rho, Some(p.log_prob(i, text.indices[c - 1])));
            }
            prev = c;
        }

        let first = a.first_frame().unwrap();
        let sum: f64 = a.rho[first - 1..a.end_frame].iter().map(|r| r.unwrap()).sum();
        prop_assert!((sum - a.path_log_prob).abs() < 1e-6);

        let cfg = AlignConfig { chunk_len: chunk, ..AlignConfig::default() };
        let m = extract_segments(&a, &text, &p, &cfg, "r").unwrap();
        let seg = &m.segments[0];
        let dt = p.seconds_per_frame();
        let s_frame = (seg.start / dt).round() as usize;
        let e_frame = (seg.end / dt).round() as usize;
        prop_assert!(seg.start >= 0.0 && seg.start < seg.end && seg.end <= p.duration() + 1e-9);
        let rho: Vec<f64> = a.rho[s_frame..e_frame].iter().map(|r| r.unwrap()).collect();
        let min_rho = rho.iter().copied().fold(f64::INFINITY, f64::min);
        let max_chunk = rho
            .chunks(chunk)
            .map(|c| c.iter().sum::<f64>() / c.len() as f64)
            .fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(seg.score_log >= min_rho - 1e-12);
        prop_assert!(seg.score_log <= max_chunk + 1e-12);
        prop_assert!(seg.score_log <= 0.0);
    }
}

#[test]
fn wide_rows_match_rolling_recurrence() {
    // Rows this wide are filled in parallel chunks.
    let mut r = rng(31);
    let (frames, chars, tokens) = (8300, 8200, 3);
    let p = random_posteriors(&mut r, frames, tokens);
    let text = random_text(&mut r, chars, tokens);
    let tr = compute_trellis(&p, &text).unwrap();
    let mut prev = vec![f64::NEG_INFINITY; chars + 1];
    prev[0] = 0.0;
    for t in 1..=frames {
        let mut cur = vec![f64::NEG_INFINITY; chars + 1];
        cur[0] = 0.0;
        for j in 1..=chars.min(t) {
            let stay = prev[j] + p.log_blank(t - 1);
            let step = prev[j - 1] + p.log_prob(t - 1, text.indices[j - 1]);
            cur[j] = stay.max(step);
        }
        if t % 1000 == 0 || t == frames {
            for j in (0..=chars).step_by(97) {
                assert_eq!(tr.get(t, j), Some(cur[j]), "cell ({t},{j})");
            }
        }
        prev = cur;
    }
}
