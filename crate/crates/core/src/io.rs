//! Posterior matrices, token tables, transcripts and segment manifests.
//!
//! Posterior file layout (little-endian):
//!
//! | offset | type | field |
//! |--------|------|-------|
//! | 0 | `[u8; 4]` | magic `CTCP` |
//! | 4 | `u32` | version (1) |
//! | 8 | `u32` | frames `T` |
//! | 12 | `u32` | tokens `C` |
//! | 16 | `u32` | blank index |
//! | 20 | `f32` | index duration (seconds per frame) |
//! | 24 | `f32 × T·C` | log posteriors, frame-major |
//!
//! `log(0)` is stored as [`LOG_ZERO`]; anything at or below
//! [`LOG_ZERO_THRESHOLD`] is read as `log(0)`.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::align::{Segment, SegmentManifest};
use crate::error::{Error, Result};
use crate::par;

pub const MAGIC: [u8; 4] = *b"CTCP";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 24;

/// On-disk representation of `log(0)`.
pub const LOG_ZERO: f32 = -1e30;
/// Values at or below this are treated as `log(0)`.
pub const LOG_ZERO_THRESHOLD: f32 = -1e29;
/// Allowed deviation of a row's log-sum-exp from 0 before a warning is raised.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-3;

/// Log probabilities above this are rejected outright.
const MAX_LOG_PROB: f32 = 1e-3;

#[inline]
pub fn is_log_zero(v: f32) -> bool {
    v <= LOG_ZERO_THRESHOLD
}

/// Widens a stored log probability, mapping the sentinel to `-inf`.
#[inline]
pub fn widen(v: f32) -> f64 {
    if is_log_zero(v) {
        f64::NEG_INFINITY
    } else {
        v as f64
    }
}

/// Natural log of a probability in the on-disk convention.
pub fn log_prob_f32(p: f64) -> f32 {
    if p <= 0.0 {
        LOG_ZERO
    } else {
        p.ln() as f32
    }
}

/// Frame-wise CTC log posteriors.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix {
    frames: usize,
    tokens: usize,
    blank_index: usize,
    index_duration: f32,
    data: Vec<f32>,
}

/// A row whose probabilities do not sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationWarning {
    /// Number of rows outside tolerance.
    pub rows: usize,
    /// 0-based row with the largest deviation.
    pub worst_row: usize,
    /// Log-sum-exp of that row.
    pub worst_logsumexp: f64,
}

impl std::fmt::Display for NormalizationWarning {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} row(s) not normalized; worst row {} has log-sum-exp {:.6}",
            self.rows, self.worst_row, self.worst_logsumexp
        )
    }
}

impl PosteriorMatrix {
    pub fn new(
        frames: usize,
        tokens: usize,
        data: Vec<f32>,
        index_duration: f32,
        blank_index: usize,
    ) -> Result<Self> {
        if frames == 0 {
            return Err(Error::InvalidMatrix(
                "at least one frame is required".into(),
            ));
        }
        if tokens < 2 {
            return Err(Error::InvalidMatrix(format!(
                "at least two tokens are required, got {tokens}"
            )));
        }
        if blank_index >= tokens {
            return Err(Error::InvalidMatrix(format!(
                "blank index {blank_index} out of range for {tokens} tokens"
            )));
        }
        if !(index_duration.is_finite() && index_duration > 0.0) {
            return Err(Error::InvalidMatrix(format!(
                "index duration must be positive, got {index_duration}"
            )));
        }
        if data.len() != frames * tokens {
            return Err(Error::InvalidMatrix(format!(
                "expected {} values for {frames}x{tokens}, got {}",
                frames * tokens,
                data.len()
            )));
        }
        if let Some((i, &value)) = data
            .iter()
            .enumerate()
            .find(|(_, &v)| v.is_nan() || v.is_infinite() || v > MAX_LOG_PROB)
        {
            return Err(Error::InvalidValue {
                frame: i / tokens,
                token: i % tokens,
                value,
            });
        }
        Ok(PosteriorMatrix {
            frames,
            tokens,
            blank_index,
            index_duration,
            data,
        })
    }

    /// Builds a matrix from probability rows (not log). Zeros become [`LOG_ZERO`].
    pub fn from_probabilities(
        rows: &[Vec<f64>],
        index_duration: f32,
        blank_index: usize,
    ) -> Result<Self> {
        let tokens = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != tokens) {
            return Err(Error::InvalidMatrix("ragged probability rows".into()));
        }
        let data = rows
            .iter()
            .flat_map(|r| r.iter().map(|&p| log_prob_f32(p)))
            .collect();
        Self::new(rows.len(), tokens, data, index_duration, blank_index)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn num_tokens(&self) -> usize {
        self.tokens
    }

    pub fn blank_index(&self) -> usize {
        self.blank_index
    }

    /// Seconds per frame as stored on disk.
    pub fn index_duration(&self) -> f32 {
        self.index_duration
    }

    pub fn seconds_per_frame(&self) -> f64 {
        self.index_duration as f64
    }

    /// Total duration in seconds.
    pub fn duration(&self) -> f64 {
        self.frames as f64 * self.seconds_per_frame()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Raw stored values of 0-based row `row`.
    pub fn row(&self, row: usize) -> &[f32] {
        &self.data[row * self.tokens..(row + 1) * self.tokens]
    }

    /// Log probability of `token` at 0-based `row`, with `log(0)` as `-inf`.
    #[inline]
    pub fn log_prob(&self, row: usize, token: usize) -> f64 {
        widen(self.data[row * self.tokens + token])
    }

    #[inline]
    pub fn log_blank(&self, row: usize) -> f64 {
        self.log_prob(row, self.blank_index)
    }

    /// Log-sum-exp of every row.
    pub fn row_logsumexp(&self) -> Vec<f64> {
        par::map_range(self.frames, |t| {
            logsumexp(self.row(t).iter().map(|&v| widen(v)))
        })
    }

    /// Returns a warning when any row's log-sum-exp deviates from 0 by more
    /// than [`NORMALIZATION_TOLERANCE`].
    pub fn check_normalization(&self) -> Option<NormalizationWarning> {
        let sums = self.row_logsumexp();
        let mut rows = 0;
        let mut worst: Option<(usize, f64)> = None;
        for (t, &s) in sums.iter().enumerate() {
            let dev = if s.is_finite() {
                s.abs()
            } else {
                f64::INFINITY
            };
            if dev > NORMALIZATION_TOLERANCE {
                rows += 1;
                if worst.is_none_or(|(_, w)| dev > w) {
                    worst = Some((t, dev));
                }
            }
        }
        worst.map(|(worst_row, _)| NormalizationWarning {
            rows,
            worst_row,
            worst_logsumexp: sums[worst_row],
        })
    }

    /// Copies frames `range` (0-based rows) into a new matrix.
    pub fn slice_frames(&self, range: std::ops::Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.frames {
            return Err(Error::InvalidMatrix(format!(
                "frame range {range:?} invalid for {} frames",
                self.frames
            )));
        }
        let data = self.data[range.start * self.tokens..range.end * self.tokens].to_vec();
        Self::new(
            range.len(),
            self.tokens,
            data,
            self.index_duration,
            self.blank_index,
        )
    }

    /// Serializes to the binary posterior format.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.frames as u32).to_le_bytes());
        out.extend_from_slice(&(self.tokens as u32).to_le_bytes());
        out.extend_from_slice(&(self.blank_index as u32).to_le_bytes());
        out.extend_from_slice(&self.index_duration.to_le_bytes());
        for v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    /// Parses the binary posterior format.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::MalformedHeader(format!(
                "file has {} bytes, header needs {HEADER_LEN}",
                bytes.len()
            )));
        }
        if bytes[0..4] != MAGIC {
            return Err(Error::MalformedHeader(format!(
                "bad magic {:?}",
                String::from_utf8_lossy(&bytes[0..4])
            )));
        }
        let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let version = u32_at(4);
        if version != VERSION {
            return Err(Error::MalformedHeader(format!(
                "unsupported version {version}"
            )));
        }
        let frames = u32_at(8) as usize;
        let tokens = u32_at(12) as usize;
        let blank_index = u32_at(16) as usize;
        let index_duration = f32::from_le_bytes(bytes[20..24].try_into().unwrap());
        if frames == 0 {
            return Err(Error::MalformedHeader("zero frames".into()));
        }
        if tokens < 2 {
            return Err(Error::MalformedHeader(format!(
                "token count {tokens} is below 2"
            )));
        }
        if blank_index >= tokens {
            return Err(Error::MalformedHeader(format!(
                "blank index {blank_index} >= token count {tokens}"
            )));
        }
        if !(index_duration.is_finite() && index_duration > 0.0) {
            return Err(Error::MalformedHeader(format!(
                "index duration {index_duration} is not positive"
            )));
        }
        let expected = (frames as u64)
            .checked_mul(tokens as u64)
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| n.checked_add(HEADER_LEN as u64))
            .filter(|&n| n <= usize::MAX as u64)
            .ok_or_else(|| Error::MalformedHeader("payload size overflows".into()))?
            as usize;
        match bytes.len().cmp(&expected) {
            std::cmp::Ordering::Less => {
                return Err(Error::Truncated {
                    expected,
                    actual: bytes.len(),
                })
            }
            std::cmp::Ordering::Greater => {
                return Err(Error::TrailingData {
                    expected,
                    actual: bytes.len(),
                })
            }
            std::cmp::Ordering::Equal => {}
        }
        let data = bytes[HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(frames, tokens, data, index_duration, blank_index)
    }
}

pub(crate) fn logsumexp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Result of [`read_posteriors`].
#[derive(Debug, Clone)]
pub struct LoadedPosteriors {
    pub matrix: PosteriorMatrix,
    pub warning: Option<NormalizationWarning>,
}

pub fn read_posteriors(path: impl AsRef<Path>) -> Result<LoadedPosteriors> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let matrix = PosteriorMatrix::from_bytes(&bytes)?;
    let warning = matrix.check_normalization();
    if let Some(w) = &warning {
        log::warn!("{}: {w}", path.display());
    }
    Ok(LoadedPosteriors { matrix, warning })
}

pub fn write_posteriors(matrix: &PosteriorMatrix, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, matrix.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Model output vocabulary; line number is the token index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenTable {
    tokens: Vec<String>,
    blank_index: usize,
}

/// Spellings accepted for the word separator token.
const SPACE_ALIASES: [&str; 3] = [" ", "<space>", "▁"];

impl TokenTable {
    pub fn new(tokens: Vec<String>, blank_index: usize) -> Result<Self> {
        if tokens.len() < 2 {
            return Err(Error::TokenTable(format!(
                "need at least two tokens, got {}",
                tokens.len()
            )));
        }
        if blank_index >= tokens.len() {
            return Err(Error::TokenTable(format!(
                "blank index {blank_index} out of range for {} tokens",
                tokens.len()
            )));
        }
        let mut seen = HashSet::new();
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() {
                return Err(Error::TokenTable(format!("token {i} is empty")));
            }
            if !seen.insert(tok.as_str()) {
                return Err(Error::TokenTable(format!("duplicate token {tok:?} at {i}")));
            }
        }
        Ok(TokenTable {
            tokens,
            blank_index,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn blank_index(&self) -> usize {
        self.blank_index
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// The character a token emits, if it is a single-character token.
    pub fn token_char(&self, index: usize) -> Option<char> {
        if index == self.blank_index {
            return None;
        }
        let tok = self.tokens.get(index)?;
        if SPACE_ALIASES.contains(&tok.as_str()) {
            return Some(' ');
        }
        let mut chars = tok.chars();
        match (chars.next(), chars.next()) {
            (Some(c), None) => Some(c),
            _ => None,
        }
    }

    /// Character → token index map over all non-blank single-character tokens.
    /// The first token wins when spellings collide.
    pub fn char_map(&self) -> std::collections::HashMap<char, usize> {
        let mut map = std::collections::HashMap::new();
        for i in 0..self.tokens.len() {
            if let Some(c) = self.token_char(i) {
                map.entry(c).or_insert(i);
            }
        }
        map
    }

    pub fn parse(content: &str, blank_index: usize) -> Result<Self> {
        let content = content.strip_suffix('\n').unwrap_or(content);
        let tokens = content
            .split('\n')
            .map(|l| l.strip_suffix('\r').unwrap_or(l).to_string())
            .collect();
        Self::new(tokens, blank_index)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for tok in &self.tokens {
            out.push_str(tok);
            out.push('\n');
        }
        out
    }
}

pub fn read_token_table(path: impl AsRef<Path>, blank_index: usize) -> Result<TokenTable> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    TokenTable::parse(&content, blank_index)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub text: String,
}

/// Ordered utterances of one recording.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptSet {
    pub recording_id: String,
    pub utterances: Vec<Utterance>,
}

impl TranscriptSet {
    pub fn new(recording_id: impl Into<String>, utterances: Vec<Utterance>) -> Result<Self> {
        if utterances.is_empty() {
            return Err(Error::Transcript("empty transcript".into()));
        }
        let mut seen = HashSet::new();
        for u in &utterances {
            if u.id.is_empty() || u.id.chars().any(char::is_whitespace) {
                return Err(Error::Transcript(format!(
                    "invalid utterance id {:?}",
                    u.id
                )));
            }
            if !seen.insert(u.id.as_str()) {
                return Err(Error::Transcript(format!(
                    "duplicate utterance id {:?}",
                    u.id
                )));
            }
        }
        Ok(TranscriptSet {
            recording_id: recording_id.into(),
            utterances,
        })
    }

    /// Parses `<utterance_id>\t<text>` lines; blank lines are skipped.
    pub fn parse(content: &str, recording_id: &str) -> Result<Self> {
        let mut utterances = Vec::new();
        for (n, line) in content.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let (id, text) = line.split_once('\t').ok_or_else(|| {
                Error::Transcript(format!("line {}: expected <id>\\t<text>", n + 1))
            })?;
            utterances.push(Utterance {
                id: id.to_string(),
                text: text.to_string(),
            });
        }
        Self::new(recording_id, utterances)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for u in &self.utterances {
            let _ = writeln!(out, "{}\t{}", u.id, u.text);
        }
        out
    }
}

pub fn read_transcripts(path: impl AsRef<Path>, recording_id: &str) -> Result<TranscriptSet> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    TranscriptSet::parse(&content, recording_id)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentFormat {
    Kaldi,
    Json,
}

/// Centisecond rounding used by every text output.
pub fn round_centis(seconds: f64) -> f64 {
    (seconds * 100.0).round() / 100.0
}

/// Kaldi `segments` lines. Filtered and degenerate segments are left out.
pub fn format_kaldi(manifest: &SegmentManifest) -> String {
    let mut out = String::new();
    for seg in manifest.segments.iter().filter(|s| s.is_usable()) {
        let _ = writeln!(
            out,
            "{} {} {:.2} {:.2}",
            seg.utterance_id,
            manifest.recording_id,
            round_centis(seg.start),
            round_centis(seg.end)
        );
    }
    out
}

#[derive(Serialize, Deserialize)]
struct JsonManifest {
    recording_id: String,
    segments: Vec<JsonSegment>,
}

#[derive(Serialize, Deserialize)]
struct JsonSegment {
    utterance_id: String,
    start: f64,
    end: f64,
    #[serde(default)]
    score_log: f64,
    #[serde(default)]
    text: String,
    #[serde(default)]
    filtered: bool,
    #[serde(default)]
    degenerate: bool,
}

pub fn format_json(manifest: &SegmentManifest) -> Result<String> {
    let doc = JsonManifest {
        recording_id: manifest.recording_id.clone(),
        segments: manifest
            .segments
            .iter()
            .map(|s| JsonSegment {
                utterance_id: s.utterance_id.clone(),
                start: round_centis(s.start),
                end: round_centis(s.end),
                score_log: s.score_log,
                text: s.text.clone(),
                filtered: s.filtered,
                degenerate: s.degenerate,
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    Ok(text)
}

pub fn write_segments(
    manifest: &SegmentManifest,
    format: SegmentFormat,
    path: impl AsRef<Path>,
) -> Result<()> {
    let path = path.as_ref();
    let text = match format {
        SegmentFormat::Kaldi => format_kaldi(manifest),
        SegmentFormat::Json => format_json(manifest)?,
    };
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Parses kaldi `segments` lines, one manifest per recording in order of
/// first appearance.
pub fn parse_kaldi(content: &str) -> Result<Vec<SegmentManifest>> {
    let mut manifests: Vec<SegmentManifest> = Vec::new();
    for (n, line) in content.lines().enumerate() {
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.is_empty() {
            continue;
        }
        if fields.len() != 4 {
            return Err(Error::Manifest(format!(
                "line {}: expected 4 fields, found {}",
                n + 1,
                fields.len()
            )));
        }
        let time = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::Manifest(format!("line {}: bad time {s:?}", n + 1)))
        };
        let seg = Segment {
            utterance_id: fields[0].to_string(),
            start: time(fields[2])?,
            end: time(fields[3])?,
            score_log: 0.0,
            text: String::new(),
            filtered: false,
            degenerate: false,
        };
        let rec = fields[1];
        match manifests.iter_mut().find(|m| m.recording_id == rec) {
            Some(m) => m.segments.push(seg),
            None => manifests.push(SegmentManifest {
                recording_id: rec.to_string(),
                segments: vec![seg],
            }),
        }
    }
    Ok(manifests)
}

/// Parses a JSON manifest: one object or an array of them.
pub fn parse_json(content: &str) -> Result<Vec<SegmentManifest>> {
    let value: serde_json::Value = serde_json::from_str(content)?;
    let docs: Vec<JsonManifest> = if value.is_array() {
        serde_json::from_value(value)?
    } else {
        vec![serde_json::from_value(value)?]
    };
    Ok(docs
        .into_iter()
        .map(|d| SegmentManifest {
            recording_id: d.recording_id,
            segments: d
                .segments
                .into_iter()
                .map(|s| Segment {
                    utterance_id: s.utterance_id,
                    start: s.start,
                    end: s.end,
                    score_log: s.score_log,
                    text: s.text,
                    filtered: s.filtered,
                    degenerate: s.degenerate,
                })
                .collect(),
        })
        .collect())
}

/// Reads kaldi or JSON segments, detected from the first non-blank character.
pub fn read_segments(path: impl AsRef<Path>) -> Result<Vec<SegmentManifest>> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match content.trim_start().chars().next() {
        Some('{') | Some('[') => parse_json(&content),
        _ => parse_kaldi(&content),
    }
}
