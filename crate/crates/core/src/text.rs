//! Transcript cleaning and encoding into token indices.
//!
//! Normalization runs four steps in a fixed order: replacement table
//! (longest match first, left to right, outputs are not re-scanned),
//! optional lowercasing, whitespace collapsing, then charset filtering.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::ops::Range;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::{TokenTable, TranscriptSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropPolicy {
    /// Any residual out-of-charset character drops the whole utterance.
    DropUtterance,
    /// Residual out-of-charset characters are deleted.
    StripChars,
}

impl std::str::FromStr for DropPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "drop_utterance" => Ok(DropPolicy::DropUtterance),
            "strip_chars" => Ok(DropPolicy::StripChars),
            other => Err(Error::Rules(format!("unknown drop_policy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct NormalizationRules {
    allowed: BTreeSet<char>,
    /// Keyed by first character; each list is sorted longest key first.
    replacements: HashMap<char, Vec<(String, String)>>,
    lowercase: bool,
    drop_policy: DropPolicy,
}

impl NormalizationRules {
    pub fn new(
        allowed: impl IntoIterator<Item = char>,
        replacements: Vec<(String, String)>,
        lowercase: bool,
        drop_policy: DropPolicy,
    ) -> Result<Self> {
        let allowed: BTreeSet<char> = allowed.into_iter().collect();
        if allowed.is_empty() {
            return Err(Error::Rules("empty charset".into()));
        }
        let can_emit = |c: char| {
            allowed.contains(&c) && (!lowercase || c.to_lowercase().eq(std::iter::once(c)))
        };
        let mut table: HashMap<char, Vec<(String, String)>> = HashMap::new();
        for (source, target) in replacements {
            let Some(first) = source.chars().next() else {
                return Err(Error::Rules("empty replacement key".into()));
            };
            // A key made only of emittable characters could match normalized
            // output again, so a second pass would not be a no-op.
            if source.chars().all(can_emit) {
                return Err(Error::Rules(format!(
                    "replacement key {source:?} consists only of characters that survive normalization"
                )));
            }
            let check = if lowercase {
                target.to_lowercase()
            } else {
                target.clone()
            };
            if let Some(bad) = check.chars().find(|c| !allowed.contains(c)) {
                return Err(Error::Rules(format!(
                    "replacement target {target:?} contains {bad:?}, which is outside the charset"
                )));
            }
            let bucket = table.entry(first).or_default();
            if bucket.iter().any(|(k, _)| *k == source) {
                return Err(Error::Rules(format!(
                    "duplicate replacement key {source:?}"
                )));
            }
            bucket.push((source, target));
        }
        for bucket in table.values_mut() {
            bucket.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        }
        Ok(NormalizationRules {
            allowed,
            replacements: table,
            lowercase,
            drop_policy,
        })
    }

    /// Charset of every single-character token, lowercasing on, stripping
    /// unknown characters, no replacements.
    pub fn from_token_table(table: &TokenTable) -> Self {
        let allowed: Vec<char> = table.char_map().into_keys().collect();
        Self::new(allowed, Vec::new(), true, DropPolicy::StripChars)
            .expect("token table yields a non-empty charset")
    }

    pub fn allowed(&self) -> &BTreeSet<char> {
        &self.allowed
    }

    pub fn lowercase(&self) -> bool {
        self.lowercase
    }

    pub fn drop_policy(&self) -> DropPolicy {
        self.drop_policy
    }

    pub fn replacement_count(&self) -> usize {
        self.replacements.values().map(Vec::len).sum()
    }

    /// Parses the sectioned rules format (`[charset]`, `[replace]`, `[options]`).
    pub fn parse(content: &str) -> Result<Self> {
        #[derive(PartialEq)]
        enum Section {
            None,
            Charset,
            Replace,
            Options,
        }
        let mut section = Section::None;
        let mut charset = String::new();
        let mut replacements = Vec::new();
        let mut lowercase = false;
        let mut drop_policy = DropPolicy::DropUtterance;

        for (n, raw) in content.split('\n').enumerate() {
            let line = raw.strip_suffix('\r').unwrap_or(raw);
            match line.trim() {
                "[charset]" => {
                    section = Section::Charset;
                    continue;
                }
                "[replace]" => {
                    section = Section::Replace;
                    continue;
                }
                "[options]" => {
                    section = Section::Options;
                    continue;
                }
                _ => {}
            }
            if line.is_empty() {
                continue;
            }
            match section {
                Section::Charset => charset.push_str(line),
                Section::Replace => {
                    let (src, dst) = line.split_once('\t').ok_or_else(|| {
                        Error::Rules(format!("line {}: expected source\\ttarget", n + 1))
                    })?;
                    replacements.push((src.to_string(), dst.to_string()));
                }
                Section::Options => {
                    let line = line.trim();
                    if line.starts_with('#') {
                        continue;
                    }
                    let (key, value) = line.split_once('=').ok_or_else(|| {
                        Error::Rules(format!("line {}: expected key=value", n + 1))
                    })?;
                    match (key.trim(), value.trim()) {
                        ("lowercase", "true") => lowercase = true,
                        ("lowercase", "false") => lowercase = false,
                        ("drop_policy", v) => drop_policy = v.parse()?,
                        (k, v) => {
                            return Err(Error::Rules(format!(
                                "line {}: unknown option {k}={v}",
                                n + 1
                            )))
                        }
                    }
                }
                Section::None => {
                    if !line.trim().is_empty() && !line.trim_start().starts_with('#') {
                        return Err(Error::Rules(format!(
                            "line {}: content outside of a section",
                            n + 1
                        )));
                    }
                }
            }
        }
        Self::new(charset.chars(), replacements, lowercase, drop_policy)
    }

    fn replace(&self, text: &str) -> String {
        if self.replacements.is_empty() {
            return text.to_string();
        }
        let mut out = String::with_capacity(text.len());
        let mut rest = text;
        while let Some(c) = rest.chars().next() {
            let hit = self
                .replacements
                .get(&c)
                .and_then(|bucket| bucket.iter().find(|(k, _)| rest.starts_with(k.as_str())));
            match hit {
                Some((key, target)) => {
                    out.push_str(target);
                    rest = &rest[key.len()..];
                }
                None => {
                    out.push(c);
                    rest = &rest[c.len_utf8()..];
                }
            }
        }
        out
    }
}

/// Outcome of [`normalize`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Normalized {
    Text(String),
    /// Dropped under [`DropPolicy::DropUtterance`] because of `ch`.
    Dropped {
        ch: char,
    },
}

fn collapse_whitespace(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

pub fn normalize(text: &str, rules: &NormalizationRules) -> Normalized {
    let replaced = rules.replace(text);
    let cased = if rules.lowercase {
        replaced.to_lowercase()
    } else {
        replaced
    };
    let collapsed = collapse_whitespace(&cased);
    let mut out = String::with_capacity(collapsed.len());
    for c in collapsed.chars() {
        if rules.allowed.contains(&c) {
            out.push(c);
        } else if rules.drop_policy == DropPolicy::DropUtterance {
            return Normalized::Dropped { ch: c };
        }
    }
    if rules.drop_policy == DropPolicy::StripChars {
        out = collapse_whitespace(&out);
    }
    Normalized::Text(out)
}

/// One surviving utterance inside [`EncodedText`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UtteranceSpan {
    pub utterance_id: String,
    /// Normalized text.
    pub text: String,
    /// Half-open 0-based range into [`EncodedText::indices`].
    pub range: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SkippedUtterance {
    pub utterance_id: String,
    pub reason: String,
}

/// Transcript as token indices. Consecutive utterances are joined by exactly
/// one space token that belongs to neither span.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedText {
    pub indices: Vec<usize>,
    pub spans: Vec<UtteranceSpan>,
    pub skipped: Vec<SkippedUtterance>,
}

impl EncodedText {
    /// Builds an encoded text from already-tokenized utterances.
    pub fn from_utterances(
        utterances: Vec<(String, String, Vec<usize>)>,
        separator: usize,
    ) -> Self {
        let mut indices = Vec::new();
        let mut spans = Vec::new();
        for (id, text, toks) in utterances {
            if !spans.is_empty() {
                indices.push(separator);
            }
            let begin = indices.len();
            indices.extend(toks);
            spans.push(UtteranceSpan {
                utterance_id: id,
                text,
                range: begin..indices.len(),
            });
        }
        EncodedText {
            indices,
            spans,
            skipped: Vec::new(),
        }
    }

    /// Text length `M`.
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    /// Maps indices back to characters.
    pub fn decode(&self, table: &TokenTable) -> String {
        self.indices
            .iter()
            .map(|&i| table.token_char(i).unwrap_or('\u{fffd}'))
            .collect()
    }
}

pub fn encode(
    transcripts: &TranscriptSet,
    table: &TokenTable,
    rules: &NormalizationRules,
) -> Result<EncodedText> {
    let chars = table.char_map();
    let mut survivors = Vec::new();
    let mut skipped = Vec::new();
    for utt in &transcripts.utterances {
        let text = match normalize(&utt.text, rules) {
            Normalized::Dropped { ch } => {
                log::debug!("dropping {}: character {ch:?} outside charset", utt.id);
                skipped.push(SkippedUtterance {
                    utterance_id: utt.id.clone(),
                    reason: format!("character {ch:?} outside charset"),
                });
                continue;
            }
            Normalized::Text(t) if t.is_empty() => {
                skipped.push(SkippedUtterance {
                    utterance_id: utt.id.clone(),
                    reason: "empty after normalization".into(),
                });
                continue;
            }
            Normalized::Text(t) => t,
        };
        let toks = text
            .chars()
            .map(|c| {
                chars.get(&c).copied().ok_or_else(|| Error::MissingToken {
                    utterance_id: utt.id.clone(),
                    ch: c,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        survivors.push((utt.id.clone(), text, toks));
    }
    if survivors.is_empty() {
        return Err(Error::AllDropped);
    }
    let separator = match chars.get(&' ') {
        Some(&s) => s,
        None if survivors.len() == 1 => 0,
        None => {
            return Err(Error::MissingToken {
                utterance_id: survivors[1].0.clone(),
                ch: ' ',
            })
        }
    };
    let mut encoded = EncodedText::from_utterances(survivors, separator);
    encoded.skipped = skipped;
    Ok(encoded)
}

pub fn read_rules(path: impl AsRef<Path>) -> Result<NormalizationRules> {
    let path = path.as_ref();
    let content = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    NormalizationRules::parse(&content)
}
