//! CTC segmentation: utterance-level alignment of long transcripts to audio.
//!
//! The input is a matrix of frame-wise CTC log posteriors produced upstream by
//! an acoustic model. Transcripts are normalized into the model's character
//! set, a maximum-joint-probability trellis is filled (optionally inside a band
//! around the proportional text position), the best path is backtracked, and
//! every utterance receives start/end times plus a confidence score.
//!
//! ```no_run
//! use ctcseg::{align, AlignConfig, NormalizationRules};
//! use ctcseg::io::{read_posteriors, read_token_table, read_transcripts};
//!
//! let loaded = read_posteriors("rec.ctcp").unwrap();
//! let tokens = read_token_table("tokens.txt", loaded.matrix.blank_index()).unwrap();
//! let transcripts = read_transcripts("rec.txt", "rec1").unwrap();
//! let rules = NormalizationRules::from_token_table(&tokens);
//! let manifest = align(&loaded.matrix, &transcripts, &tokens, &rules, &AlignConfig::default()).unwrap();
//! for seg in &manifest.segments {
//!     println!("{} {:.2} {:.2} {:.3}", seg.utterance_id, seg.start, seg.end, seg.score_log);
//! }
//! ```

pub mod align;
pub mod error;
pub mod eval;
pub mod io;
pub mod par;
pub mod synth;
pub mod text;

pub use align::{
    align, align_encoded, backtrack, compute_trellis, compute_trellis_windowed, extract_segments,
    AlignConfig, FrameAlignment, Segment, SegmentManifest, Trellis,
};
pub use error::{Error, Result};
pub use eval::{augment, evaluate, evaluate_corpus, EvalReport};
pub use io::{PosteriorMatrix, TokenTable, TranscriptSet, Utterance};
pub use synth::{brute_force_best_path, generate, SynthSpec};
pub use text::{encode, normalize, EncodedText, NormalizationRules, Normalized};
