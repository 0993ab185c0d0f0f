//! Trellis construction, backtracking and segment extraction.
//!
//! The trellis holds `k[t][j]`, the best log joint probability of having
//! consumed the first `j` characters after `t` frames:
//!
//! ```text
//! k[t][0] = 0                       (text may start anywhere)
//! k[0][j] = log(0)                  for j > 0
//! k[t][j] = max(k[t-1][j]   + log p(blank | t),
//!               k[t-1][j-1] + log p(c_j   | t))
//! ```
//!
//! Frames and characters are 1-based in the recursion; frame `t` reads
//! posterior row `t - 1`. In windowed mode only frames within `W/2` of the
//! proportional position `round(j·T/M)` are filled for character `j`; all other
//! cells read as `log(0)`.

use crate::error::{Error, Result};
use crate::io::{PosteriorMatrix, LOG_ZERO};
use crate::io::{TokenTable, TranscriptSet};
use crate::par;
use crate::text::{encode, EncodedText, NormalizationRules};

/// Rows narrower than this are filled on the calling thread.
const PAR_MIN_ROW: usize = 8192;
const PAR_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct AlignConfig {
    /// Band width `W` in frames; 0 fills the whole trellis.
    pub window: usize,
    /// Chunk length `L` in frames for confidence scoring.
    pub chunk_len: usize,
    /// Segments scoring below this (log domain) are flagged as filtered.
    pub min_score_log: f64,
    /// Double the window and retry on infeasible windows or window escapes.
    pub auto_widen: bool,
    pub max_widen_doublings: u32,
    /// Let the stay transition use `max(p(blank), p(c_j))` instead of `p(blank)`.
    pub blank_stay_includes_char: bool,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            window: 8000,
            chunk_len: 30,
            min_score_log: -1.5,
            auto_widen: false,
            max_widen_doublings: 4,
            blank_stay_includes_char: false,
        }
    }
}

/// Smallest accepted non-zero window.
pub const MIN_WINDOW: usize = 16;

impl AlignConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window != 0 && self.window < MIN_WINDOW {
            return Err(Error::Config(format!(
                "window must be 0 or at least {MIN_WINDOW} frames, got {}",
                self.window
            )));
        }
        if self.chunk_len == 0 {
            return Err(Error::Config("chunk length must be at least 1".into()));
        }
        if self.min_score_log.is_nan() {
            return Err(Error::Config("minimum score is NaN".into()));
        }
        Ok(())
    }
}

/// Band around the proportional text position.
#[derive(Debug, Clone, PartialEq)]
pub struct Window {
    width: usize,
    frames: usize,
    chars: usize,
}

impl Window {
    fn new(width: usize, frames: usize, chars: usize) -> Self {
        Window {
            width,
            frames,
            chars,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `round(j·T/M)` for 1-based character `j`.
    pub fn center(&self, j: usize) -> usize {
        (2 * j * self.frames + self.chars) / (2 * self.chars)
    }

    /// Frames `[lo, hi]` filled for character `j`.
    pub fn region(&self, j: usize) -> (usize, usize) {
        let c = self.center(j);
        let half = self.width / 2;
        (c.saturating_sub(half).max(1), (c + half).min(self.frames))
    }

    fn clipped_lo(&self, j: usize) -> bool {
        self.center(j) > self.width / 2 + 1
    }

    fn clipped_hi(&self, j: usize) -> bool {
        self.center(j) + self.width / 2 < self.frames
    }
}

/// Log-domain trellis, stored row by row; each row holds a contiguous range
/// of characters.
#[derive(Debug, Clone)]
pub struct Trellis {
    frames: usize,
    chars: usize,
    /// Per frame `t` (index `t - 1`): filled characters `lo..=hi`, empty if `lo > hi`.
    row_lo: Vec<usize>,
    row_hi: Vec<usize>,
    row_offset: Vec<usize>,
    values: Vec<f64>,
    window: Option<Window>,
    stay_includes_char: bool,
}

impl Trellis {
    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn chars(&self) -> usize {
        self.chars
    }

    pub fn window(&self) -> Option<&Window> {
        self.window.as_ref()
    }

    pub fn stay_includes_char(&self) -> bool {
        self.stay_includes_char
    }

    /// `k[t][j]`, or `None` if the cell lies outside the computed region.
    pub fn get(&self, t: usize, j: usize) -> Option<f64> {
        if j == 0 {
            return Some(0.0);
        }
        if t == 0 {
            return (j <= self.chars).then_some(f64::NEG_INFINITY);
        }
        if t > self.frames || j > self.chars {
            return None;
        }
        let (lo, hi) = (self.row_lo[t - 1], self.row_hi[t - 1]);
        (lo <= j && j <= hi).then(|| self.values[self.row_offset[t - 1] + j - lo])
    }

    /// `k[t][j]` with unfilled cells read as `log(0)`.
    pub fn value(&self, t: usize, j: usize) -> f64 {
        self.get(t, j).unwrap_or(f64::NEG_INFINITY)
    }

    pub fn is_filled(&self, t: usize, j: usize) -> bool {
        self.get(t, j).is_some()
    }

    /// Number of cells computed by the recursion (`t ≥ 1`, `j ≥ 1`).
    pub fn filled_cells(&self) -> usize {
        self.values.len()
    }

    /// Frames `[lo, hi]` filled for character `j ≥ 1`.
    pub fn computed_region(&self, j: usize) -> Option<(usize, usize)> {
        if j == 0 || j > self.chars {
            return None;
        }
        match &self.window {
            Some(w) => Some(w.region(j)),
            None => Some((1, self.frames)),
        }
    }
}

fn check_inputs(posteriors: &PosteriorMatrix, text: &EncodedText) -> Result<()> {
    let chars = text.len();
    if chars == 0 {
        return Err(Error::AllDropped);
    }
    if chars > posteriors.frames() {
        return Err(Error::InfeasibleLength {
            chars,
            frames: posteriors.frames(),
        });
    }
    if let Some(&bad) = text
        .indices
        .iter()
        .find(|&&i| i >= posteriors.num_tokens() || i == posteriors.blank_index())
    {
        return Err(Error::InvalidMatrix(format!(
            "text token {bad} is blank or outside the {} posterior columns",
            posteriors.num_tokens()
        )));
    }
    Ok(())
}

#[inline]
fn stay_log_prob(posteriors: &PosteriorMatrix, row: usize, token: usize, with_char: bool) -> f64 {
    let blank = posteriors.log_blank(row);
    if with_char {
        blank.max(posteriors.log_prob(row, token))
    } else {
        blank
    }
}

fn fill(
    posteriors: &PosteriorMatrix,
    text: &EncodedText,
    row_lo: Vec<usize>,
    row_hi: Vec<usize>,
    window: Option<Window>,
    stay_includes_char: bool,
) -> Trellis {
    let frames = posteriors.frames();
    let chars = text.len();
    let mut row_offset = Vec::with_capacity(frames);
    let mut total = 0usize;
    for (&lo, &hi) in row_lo.iter().zip(&row_hi) {
        row_offset.push(total);
        total += (hi + 1).saturating_sub(lo);
    }
    let mut values = vec![f64::NEG_INFINITY; total];
    let tokens = &text.indices;

    for t in 1..=frames {
        let row = t - 1;
        let lo = row_lo[row];
        let width = (row_hi[row] + 1).saturating_sub(lo);
        if width == 0 {
            continue;
        }
        let (head, tail) = values.split_at_mut(row_offset[row]);
        let cur = &mut tail[..width];
        let (prev_lo, prev_hi, prev): (usize, usize, &[f64]) = if t == 1 {
            (1, 0, &[])
        } else {
            (
                row_lo[row - 1],
                row_hi[row - 1],
                &head[row_offset[row - 1]..],
            )
        };
        let prev_at = |j: usize| -> f64 {
            if j == 0 {
                0.0
            } else if prev_lo <= j && j <= prev_hi {
                prev[j - prev_lo]
            } else {
                f64::NEG_INFINITY
            }
        };
        let blank = posteriors.log_blank(row);
        let fill_chunk = |offset: usize, chunk: &mut [f64]| {
            for (k, cell) in chunk.iter_mut().enumerate() {
                let j = lo + offset + k;
                let emit = posteriors.log_prob(row, tokens[j - 1]);
                let stay_lp = if stay_includes_char {
                    blank.max(emit)
                } else {
                    blank
                };
                let stay = prev_at(j) + stay_lp;
                let step = prev_at(j - 1) + emit;
                // Stay wins ties.
                *cell = if stay >= step { stay } else { step };
            }
        };
        if width >= PAR_MIN_ROW {
            par::for_each_chunk_mut(cur, PAR_CHUNK, fill_chunk);
        } else {
            fill_chunk(0, cur);
        }
    }

    Trellis {
        frames,
        chars,
        row_lo,
        row_hi,
        row_offset,
        values,
        window,
        stay_includes_char,
    }
}

/// Fills the complete `(T+1)×(M+1)` trellis.
pub fn compute_trellis(posteriors: &PosteriorMatrix, text: &EncodedText) -> Result<Trellis> {
    compute_trellis_with(posteriors, text, false)
}

/// [`compute_trellis`] with an explicit stay-transition rule.
pub fn compute_trellis_with(
    posteriors: &PosteriorMatrix,
    text: &EncodedText,
    stay_includes_char: bool,
) -> Result<Trellis> {
    check_inputs(posteriors, text)?;
    let frames = posteriors.frames();
    let chars = text.len();
    Ok(fill(
        posteriors,
        text,
        vec![1; frames],
        vec![chars; frames],
        None,
        stay_includes_char,
    ))
}

/// Fills only the band of `config.window` frames around each character's
/// proportional position. A window of 0 falls back to [`compute_trellis`].
pub fn compute_trellis_windowed(
    posteriors: &PosteriorMatrix,
    text: &EncodedText,
    config: &AlignConfig,
) -> Result<Trellis> {
    config.validate()?;
    banded(
        posteriors,
        text,
        config.window,
        config.blank_stay_includes_char,
    )
}

fn banded(
    posteriors: &PosteriorMatrix,
    text: &EncodedText,
    width: usize,
    stay_includes_char: bool,
) -> Result<Trellis> {
    if width == 0 {
        return compute_trellis_with(posteriors, text, stay_includes_char);
    }
    check_inputs(posteriors, text)?;
    let frames = posteriors.frames();
    let chars = text.len();
    // Consecutive bands must overlap: W/2 >= T/M.
    if (width / 2) * chars < frames {
        return Err(Error::InfeasibleWindow {
            window: width,
            frames,
            chars,
            required: 2 * frames.div_ceil(chars),
        });
    }
    let window = Window::new(width, frames, chars);
    let mut row_lo = Vec::with_capacity(frames);
    let mut row_hi = Vec::with_capacity(frames);
    // Band edges are non-decreasing in j, so each row is a contiguous range.
    let (mut first, mut last) = (1usize, 0usize);
    for t in 1..=frames {
        while first <= chars && window.region(first).1 < t {
            first += 1;
        }
        while last < chars && window.region(last + 1).0 <= t {
            last += 1;
        }
        row_lo.push(first);
        row_hi.push(last);
    }
    Ok(fill(
        posteriors,
        text,
        row_lo,
        row_hi,
        Some(window),
        stay_includes_char,
    ))
}

/// Frame-to-character alignment recovered from a trellis.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameAlignment {
    /// `chars[i]` is the 1-based character aligned at frame `i + 1`; 0 before
    /// the text starts.
    pub chars: Vec<usize>,
    /// Log probability of the transition taken at frame `i + 1`; `None` for
    /// frames before the first character.
    pub rho: Vec<Option<f64>>,
    /// 1-based frame maximizing `k[t][M]` (smallest on ties).
    pub end_frame: usize,
    /// `k[end_frame][M]`.
    pub path_log_prob: f64,
}

impl FrameAlignment {
    /// 1-based frame at which the first character is emitted.
    pub fn first_frame(&self) -> Option<usize> {
        self.chars.iter().position(|&a| a > 0).map(|i| i + 1)
    }

    /// Checks that the path never goes backwards and advances at most one
    /// character per frame.
    pub fn is_monotone(&self) -> bool {
        let mut prev = 0usize;
        self.chars.iter().all(|&a| {
            let ok = a >= prev && a - prev <= 1;
            prev = a;
            ok
        })
    }
}

/// Recovers the best path, starting from the most probable end frame of the
/// last character and walking back to frame 1.
pub fn backtrack(
    trellis: &Trellis,
    posteriors: &PosteriorMatrix,
    text: &EncodedText,
) -> Result<FrameAlignment> {
    let frames = trellis.frames();
    let chars = trellis.chars();
    if frames != posteriors.frames() || chars != text.len() {
        return Err(Error::InvalidMatrix(
            "trellis does not match posteriors and text".into(),
        ));
    }
    let escape = |j: usize| match trellis.window() {
        Some(_) => Error::WindowEscape { char_index: j },
        None => Error::NoPath,
    };

    let mut end: Option<(usize, f64)> = None;
    for t in 1..=frames {
        if let Some(v) = trellis.get(t, chars) {
            if v > f64::NEG_INFINITY && end.is_none_or(|(_, best)| v > best) {
                end = Some((t, v));
            }
        }
    }
    let (end_frame, path_log_prob) = end.ok_or_else(|| escape(chars))?;

    let mut a = vec![0usize; frames];
    let mut rho = vec![None; frames];
    for t in end_frame + 1..=frames {
        a[t - 1] = chars;
        rho[t - 1] = Some(posteriors.log_blank(t - 1));
    }

    let on_edge = |t: usize, j: usize| match trellis.window() {
        Some(w) => {
            let (lo, hi) = w.region(j);
            (t == lo && w.clipped_lo(j)) || (t == hi && w.clipped_hi(j))
        }
        None => false,
    };

    let with_char = trellis.stay_includes_char();
    let mut j = chars;
    let mut t = end_frame;
    while t >= 1 && j >= 1 {
        if on_edge(t, j) {
            return Err(escape(j));
        }
        a[t - 1] = j;
        let row = t - 1;
        let emit = posteriors.log_prob(row, text.indices[j - 1]);
        let stay_lp = stay_log_prob(posteriors, row, text.indices[j - 1], with_char);
        let stay = trellis.value(t - 1, j) + stay_lp;
        let step = trellis.value(t - 1, j - 1) + emit;
        if stay > step {
            rho[row] = Some(stay_lp);
        } else {
            rho[row] = Some(emit);
            j -= 1;
        }
        t -= 1;
    }
    if j != 0 {
        return Err(escape(j));
    }

    let alignment = FrameAlignment {
        chars: a,
        rho,
        end_frame,
        path_log_prob,
    };
    assert!(alignment.is_monotone(), "backtracked path is not monotone");
    Ok(alignment)
}

/// One aligned utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub utterance_id: String,
    /// Seconds.
    pub start: f64,
    /// Seconds.
    pub end: f64,
    /// Confidence: minimum over chunks of the mean log transition probability.
    pub score_log: f64,
    /// Normalized utterance text.
    pub text: String,
    /// Score below the configured minimum.
    pub filtered: bool,
    /// No aligned frames; score is `log(0)`.
    pub degenerate: bool,
}

impl Segment {
    /// Neither filtered nor degenerate.
    pub fn is_usable(&self) -> bool {
        !self.filtered && !self.degenerate
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentManifest {
    pub recording_id: String,
    pub segments: Vec<Segment>,
}

impl SegmentManifest {
    pub fn filtered_count(&self) -> usize {
        self.segments.iter().filter(|s| !s.is_usable()).count()
    }
}

/// Minimum over consecutive `chunk_len` pieces of the mean of `values`; the
/// last piece may be shorter and is averaged over its own length.
pub fn chunked_min_mean(values: &[f64], chunk_len: usize) -> f64 {
    values
        .chunks(chunk_len.max(1))
        .map(|c| c.iter().sum::<f64>() / c.len() as f64)
        .fold(f64::INFINITY, f64::min)
}

/// Converts an alignment into per-utterance segments with confidence scores.
pub fn extract_segments(
    alignment: &FrameAlignment,
    text: &EncodedText,
    posteriors: &PosteriorMatrix,
    config: &AlignConfig,
    recording_id: &str,
) -> Result<SegmentManifest> {
    config.validate()?;
    let frames = alignment.chars.len();
    if frames != posteriors.frames() {
        return Err(Error::InvalidMatrix(
            "alignment length does not match posteriors".into(),
        ));
    }
    let chars = text.len();
    let dt = posteriors.seconds_per_frame();
    let a = &alignment.chars;
    let mut segments = Vec::with_capacity(text.spans.len());

    for span in &text.spans {
        let first_char = span.range.start + 1;
        let last_char = span.range.end;
        // Frames after the end frame are unclaimed audio, not part of the
        // final utterance.
        let limit = if last_char == chars {
            alignment.end_frame
        } else {
            frames
        };
        let start_idx = a.partition_point(|&x| x < first_char);
        let end_count = a.partition_point(|&x| x <= last_char).min(limit);
        let valid = start_idx < frames
            && a[start_idx] == first_char
            && end_count > start_idx
            && a[end_count - 1] == last_char;

        let segment = if valid {
            let rho: Vec<f64> = alignment.rho[start_idx..end_count]
                .iter()
                .map(|r| r.unwrap_or(f64::NEG_INFINITY))
                .collect();
            let score_log = chunked_min_mean(&rho, config.chunk_len);
            Segment {
                utterance_id: span.utterance_id.clone(),
                start: start_idx as f64 * dt,
                end: end_count as f64 * dt,
                score_log,
                text: span.text.clone(),
                filtered: score_log < config.min_score_log,
                degenerate: false,
            }
        } else {
            log::warn!("utterance {} has no aligned frames", span.utterance_id);
            let at = start_idx.min(frames) as f64 * dt;
            Segment {
                utterance_id: span.utterance_id.clone(),
                start: at,
                end: at,
                score_log: LOG_ZERO as f64,
                text: span.text.clone(),
                filtered: true,
                degenerate: true,
            }
        };
        segments.push(segment);
    }
    segments.sort_by(|x, y| x.start.total_cmp(&y.start));
    Ok(SegmentManifest {
        recording_id: recording_id.to_string(),
        segments,
    })
}

/// Everything produced by [`align_encoded`].
#[derive(Debug, Clone)]
pub struct AlignOutcome {
    pub manifest: SegmentManifest,
    pub alignment: FrameAlignment,
    /// Window finally used (0 = full trellis).
    pub window: usize,
    pub filled_cells: usize,
}

/// Trellis, backtracking and segment extraction on an encoded text, widening
/// the window on failure when `config.auto_widen` is set.
pub fn align_encoded(
    posteriors: &PosteriorMatrix,
    text: &EncodedText,
    config: &AlignConfig,
    recording_id: &str,
) -> Result<AlignOutcome> {
    config.validate()?;
    let mut width = config.window;
    let mut doublings = 0;
    let (alignment, filled_cells) = loop {
        let attempt =
            banded(posteriors, text, width, config.blank_stay_includes_char).and_then(|trellis| {
                let alignment = backtrack(&trellis, posteriors, text)?;
                Ok((alignment, trellis.filled_cells()))
            });
        match attempt {
            Err(err @ (Error::InfeasibleWindow { .. } | Error::WindowEscape { .. }))
                if config.auto_widen && doublings < config.max_widen_doublings =>
            {
                doublings += 1;
                width *= 2;
                log::info!("{recording_id}: {err}; retrying with window {width}");
            }
            other => break other?,
        }
    };
    let manifest = extract_segments(&alignment, text, posteriors, config, recording_id)?;
    Ok(AlignOutcome {
        manifest,
        alignment,
        window: width,
        filled_cells,
    })
}

/// Normalize, encode, align and segment one recording.
pub fn align(
    posteriors: &PosteriorMatrix,
    transcripts: &TranscriptSet,
    table: &TokenTable,
    rules: &NormalizationRules,
    config: &AlignConfig,
) -> Result<SegmentManifest> {
    if table.len() != posteriors.num_tokens() {
        return Err(Error::TokenTable(format!(
            "{} tokens in table but {} posterior columns",
            table.len(),
            posteriors.num_tokens()
        )));
    }
    if table.blank_index() != posteriors.blank_index() {
        return Err(Error::TokenTable(format!(
            "blank index {} in table but {} in posteriors",
            table.blank_index(),
            posteriors.blank_index()
        )));
    }
    let text = encode(transcripts, table, rules)?;
    for skipped in &text.skipped {
        log::info!(
            "{}: skipped {} ({})",
            transcripts.recording_id,
            skipped.utterance_id,
            skipped.reason
        );
    }
    Ok(align_encoded(posteriors, &text, config, &transcripts.recording_id)?.manifest)
}
