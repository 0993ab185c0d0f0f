//! Synthetic posteriors with planted alignments, and an exhaustive
//! best-path oracle for small instances.
//!
//! Generated posteriors are CTC-peaky: a character occupies
//! `frames_per_char` frames, its probability peaks on the first of them and
//! blank dominates the rest. The space separating an utterance from the next
//! one in the transcript is planted on the frame right after the utterance's
//! last character. Planted segments run from the leading edge of the first
//! character frame to the trailing edge of the last character frame.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::align::{Segment, SegmentManifest};
use crate::error::{Error, Result};
use crate::io::{log_prob_f32, PosteriorMatrix, TokenTable, TranscriptSet, Utterance};
use crate::par;

/// Enumeration limits for [`brute_force_best_path`].
pub const MAX_ORACLE_FRAMES: usize = 14;
pub const MAX_ORACLE_CHARS: usize = 5;

fn default_true() -> bool {
    true
}

fn default_recording() -> String {
    "synth".to_string()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthUtterance {
    pub id: String,
    /// Already-normalized text; every character must be a token.
    pub text: String,
    /// `false` keeps the utterance in the transcript but leaves it out of the audio.
    #[serde(default = "default_true")]
    pub present: bool,
    /// Explicit start in seconds; otherwise placed `blank_gap_frames` after
    /// the previous utterance.
    #[serde(default)]
    pub start: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    #[serde(default = "default_recording")]
    pub recording_id: String,
    pub tokens: Vec<String>,
    #[serde(default)]
    pub blank_index: usize,
    pub utterances: Vec<SynthUtterance>,
    pub frames_per_char: usize,
    #[serde(default)]
    pub blank_gap_frames: usize,
    /// Blank audio before the first utterance, seconds.
    #[serde(default)]
    pub prologue: f64,
    /// Blank audio after the last utterance, seconds.
    #[serde(default)]
    pub epilogue: f64,
    pub peak_prob: f64,
    /// Upper bound of the uniform jitter added to every probability before
    /// renormalizing; 0 disables noise.
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub noise_seed: u64,
    pub index_duration: f32,
}

impl SynthSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Output of [`generate`].
#[derive(Debug, Clone)]
pub struct Synthesized {
    pub posteriors: PosteriorMatrix,
    /// Planted segments of the utterances present in the audio.
    pub truth: SegmentManifest,
    pub tokens: TokenTable,
    /// Every utterance of the spec, present or not.
    pub transcripts: TranscriptSet,
}

fn seconds_to_frames(sec: f64, dt: f64, what: &str) -> Result<usize> {
    if !(sec.is_finite() && sec >= 0.0) {
        return Err(Error::Synth(format!(
            "{what} must be a non-negative time, got {sec}"
        )));
    }
    Ok((sec / dt).round() as usize)
}

pub fn generate(spec: &SynthSpec) -> Result<Synthesized> {
    let table = TokenTable::new(spec.tokens.clone(), spec.blank_index)?;
    let n_tokens = table.len();
    let blank = table.blank_index();
    let chars = table.char_map();
    if spec.frames_per_char == 0 {
        return Err(Error::Synth("frames_per_char must be at least 1".into()));
    }
    if !(spec.index_duration.is_finite() && spec.index_duration > 0.0) {
        return Err(Error::Synth("index_duration must be positive".into()));
    }
    let floor = 1.0 / n_tokens as f64;
    if !(spec.peak_prob >= floor - 1e-12 && spec.peak_prob <= 1.0) {
        return Err(Error::Synth(format!(
            "peak_prob {} outside [1/C, 1] = [{floor}, 1]",
            spec.peak_prob
        )));
    }
    if !(spec.noise.is_finite() && spec.noise >= 0.0) {
        return Err(Error::Synth(format!("invalid noise {}", spec.noise)));
    }
    if spec.utterances.is_empty() {
        return Err(Error::Synth("no utterances".into()));
    }
    let mut ids = HashSet::new();
    for u in &spec.utterances {
        if !ids.insert(u.id.as_str()) {
            return Err(Error::Synth(format!("duplicate utterance id {:?}", u.id)));
        }
        if u.text.is_empty() {
            return Err(Error::Synth(format!("utterance {:?} has no text", u.id)));
        }
        if let Some(c) = u.text.chars().find(|c| !chars.contains_key(c)) {
            return Err(Error::Synth(format!(
                "utterance {:?}: character {c:?} is not a token",
                u.id
            )));
        }
    }
    let space = chars.get(&' ').copied();
    if spec.utterances.len() > 1 && space.is_none() {
        return Err(Error::Synth(
            "a space token is required between utterances".into(),
        ));
    }

    let dt = spec.index_duration as f64;
    let fpc = spec.frames_per_char;
    // Peak token per frame.
    let mut labels: Vec<usize> = Vec::new();
    let mut truth = Vec::new();
    let mut prev_end: Option<usize> = None;
    for (i, utt) in spec.utterances.iter().enumerate() {
        if !utt.present {
            continue;
        }
        let start = match utt.start {
            Some(sec) => {
                let s = seconds_to_frames(sec, dt, "start")?;
                if prev_end.is_some_and(|e| s < e) {
                    return Err(Error::Synth(format!(
                        "utterance {:?} overlaps the previous planted segment",
                        utt.id
                    )));
                }
                s
            }
            None => match prev_end {
                Some(e) => e + spec.blank_gap_frames,
                None => seconds_to_frames(spec.prologue, dt, "prologue")?,
            },
        };
        let n = utt.text.chars().count();
        let mut end = start + n * fpc;
        labels.resize(end, blank);
        for (k, c) in utt.text.chars().enumerate() {
            labels[start + k * fpc] = chars[&c];
        }
        let last_spike = start + (n - 1) * fpc;
        if i + 1 < spec.utterances.len() {
            let sep = last_spike + 1;
            end = end.max(sep + 1);
            labels.resize(end, blank);
            labels[sep] = space.expect("checked above");
        }
        truth.push(Segment {
            utterance_id: utt.id.clone(),
            start: start as f64 * dt,
            end: (last_spike + 1) as f64 * dt,
            score_log: 0.0,
            text: utt.text.clone(),
            filtered: false,
            degenerate: false,
        });
        prev_end = Some(end);
    }
    let Some(content_end) = prev_end else {
        return Err(Error::Synth("no utterance is present in the audio".into()));
    };
    let frames = content_end + seconds_to_frames(spec.epilogue, dt, "epilogue")?;
    labels.resize(frames, blank);

    let rest = if n_tokens > 1 {
        (1.0 - spec.peak_prob) / (n_tokens - 1) as f64
    } else {
        0.0
    };
    let rows: Vec<Vec<f32>> = par::map_range(frames, |t| {
        let mut probs = vec![rest; n_tokens];
        probs[labels[t]] = spec.peak_prob;
        if spec.noise > 0.0 {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.noise_seed);
            rng.set_stream(t as u64);
            for p in probs.iter_mut() {
                *p += rng.gen_range(0.0..spec.noise);
            }
        }
        let total: f64 = probs.iter().sum();
        probs.iter().map(|&p| log_prob_f32(p / total)).collect()
    });
    let data = rows.into_iter().flatten().collect();
    let posteriors = PosteriorMatrix::new(frames, n_tokens, data, spec.index_duration, blank)?;

    let transcripts = TranscriptSet::new(
        spec.recording_id.clone(),
        spec.utterances
            .iter()
            .map(|u| Utterance {
                id: u.id.clone(),
                text: u.text.clone(),
            })
            .collect(),
    )?;
    Ok(Synthesized {
        posteriors,
        truth: SegmentManifest {
            recording_id: spec.recording_id.clone(),
            segments: truth,
        },
        tokens: table,
        transcripts,
    })
}

/// Best path found by exhaustive enumeration.
#[derive(Debug, Clone, PartialEq)]
pub struct BruteForcePath {
    pub log_prob: f64,
    /// 1-based character per frame, 0 before the text starts, `M` after the end.
    pub chars: Vec<usize>,
    /// 1-based frame where the path ends.
    pub end_frame: usize,
    /// Number of (path, end frame) pairs reaching the optimum.
    pub optimal_count: usize,
}

/// Enumerates every path of the blank-stay / single-advance transition system
/// with a free start, returning the most probable one. `None` when no path
/// fits (more characters than frames).
pub fn brute_force_best_path(
    posteriors: &PosteriorMatrix,
    text: &[usize],
    stay_includes_char: bool,
) -> Result<Option<BruteForcePath>> {
    let frames = posteriors.frames();
    let m = text.len();
    if frames > MAX_ORACLE_FRAMES || m > MAX_ORACLE_CHARS {
        return Err(Error::Synth(format!(
            "instance {frames}x{m} too large for enumeration (limit {MAX_ORACLE_FRAMES}x{MAX_ORACLE_CHARS})"
        )));
    }
    if m == 0 {
        return Err(Error::Synth("empty text".into()));
    }

    struct Search<'a> {
        post: &'a PosteriorMatrix,
        text: &'a [usize],
        with_char: bool,
        path: Vec<usize>,
        best: Option<(f64, Vec<usize>, usize)>,
        ties: usize,
    }

    impl Search<'_> {
        fn offer(&mut self, cost: f64, t_end: usize) {
            if cost == f64::NEG_INFINITY {
                return;
            }
            match &self.best {
                Some((b, _, _)) if cost < *b => {}
                Some((b, _, _)) if cost == *b => self.ties += 1,
                _ => {
                    self.best = Some((cost, self.path.clone(), t_end));
                    self.ties = 1;
                }
            }
        }

        fn visit(&mut self, t: usize, j: usize, cost: f64) {
            let frames = self.post.frames();
            let m = self.text.len();
            if t > frames || m - j > frames + 1 - t {
                return;
            }
            let row = t - 1;
            // Stay.
            let stay = if j == 0 {
                0.0
            } else {
                let blank = self.post.log_blank(row);
                if self.with_char {
                    blank.max(self.post.log_prob(row, self.text[j - 1]))
                } else {
                    blank
                }
            };
            self.path.push(j);
            let c = cost + stay;
            if j == m {
                self.offer(c, t);
            }
            self.visit(t + 1, j, c);
            self.path.pop();
            // Advance.
            if j < m {
                self.path.push(j + 1);
                let c = cost + self.post.log_prob(row, self.text[j]);
                if j + 1 == m {
                    self.offer(c, t);
                }
                self.visit(t + 1, j + 1, c);
                self.path.pop();
            }
        }
    }

    let mut search = Search {
        post: posteriors,
        text,
        with_char: stay_includes_char,
        path: Vec::with_capacity(frames),
        best: None,
        ties: 0,
    };
    search.visit(1, 0, 0.0);
    Ok(search.best.map(|(log_prob, mut chars, end_frame)| {
        chars.resize(frames, m);
        BruteForcePath {
            log_prob,
            chars,
            end_frame,
            optimal_count: search.ties,
        }
    }))
}
