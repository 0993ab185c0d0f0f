use std::fmt::Write as _;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use ctcseg::eval::{augment as augment_matrix, evaluate_corpus, sample_augmentation};
use ctcseg::io::{
    format_json, read_posteriors, read_segments, read_token_table, read_transcripts, round_centis,
    write_posteriors, write_segments, SegmentFormat,
};
use ctcseg::synth::{generate, SynthSpec};
use ctcseg::text::{normalize as normalize_text, read_rules, NormalizationRules, Normalized};
use ctcseg::{align as align_recording, par, AlignConfig, Error, SegmentManifest};

use crate::{
    report, AlignArgs, AugmentArgs, EvalArgs, Failure, NormalizeArgs, OutputFormat, SynthArgs,
};

type CmdResult = Result<u8, Failure>;

fn io_err(path: &Path, source: std::io::Error) -> Failure {
    Failure::Core(Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_file(path: &Path, content: &str) -> Result<(), Failure> {
    fs::write(path, content).map_err(|e| io_err(path, e))
}

fn ensure_dir(path: &Path) -> Result<(), Failure> {
    fs::create_dir_all(path).map_err(|e| io_err(path, e))
}

struct Recording {
    id: String,
    posteriors: PathBuf,
    transcript: PathBuf,
}

fn list_recordings(dir: &Path) -> Result<Vec<Recording>, Failure> {
    let entries = fs::read_dir(dir).map_err(|e| io_err(dir, e))?;
    let mut recordings = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| io_err(dir, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("ctcp") {
            continue;
        }
        let Some(id) = path.file_stem().and_then(|s| s.to_str()) else {
            continue;
        };
        recordings.push(Recording {
            id: id.to_string(),
            transcript: dir.join(format!("{id}.txt")),
            posteriors: path.clone(),
        });
    }
    recordings.sort_by(|a, b| a.id.cmp(&b.id));
    if recordings.is_empty() {
        return Err(Failure::Usage(format!(
            "no .ctcp files in {}",
            dir.display()
        )));
    }
    Ok(recordings)
}

fn align_one(
    rec: &Recording,
    tokens: &Path,
    rules: Option<&NormalizationRules>,
    config: &AlignConfig,
) -> Result<SegmentManifest, Error> {
    let loaded = read_posteriors(&rec.posteriors)?;
    let matrix = loaded.matrix;
    let table = read_token_table(tokens, matrix.blank_index())?;
    let transcripts = read_transcripts(&rec.transcript, &rec.id)?;
    let derived;
    let rules = match rules {
        Some(r) => r,
        None => {
            derived = NormalizationRules::from_token_table(&table);
            &derived
        }
    };
    align_recording(&matrix, &transcripts, &table, rules, config)
}

fn score_table(manifests: &[&SegmentManifest]) -> String {
    let mut out = String::from("recording\tutterance\tstart\tend\tscore\tstatus\n");
    for m in manifests {
        for s in &m.segments {
            let status = if s.degenerate {
                "degenerate"
            } else if s.filtered {
                "filtered"
            } else {
                "ok"
            };
            let _ = writeln!(
                out,
                "{}\t{}\t{:.2}\t{:.2}\t{:.4}\t{status}",
                m.recording_id,
                s.utterance_id,
                round_centis(s.start),
                round_centis(s.end),
                s.score_log
            );
        }
    }
    out
}

pub fn align(args: &AlignArgs) -> CmdResult {
    let config = AlignConfig {
        window: args.window,
        chunk_len: args.chunk_len,
        min_score_log: args.min_score,
        auto_widen: args.auto_widen,
        max_widen_doublings: args.max_widen_doublings,
        blank_stay_includes_char: args.blank_stay_includes_char,
    };
    config.validate()?;
    let rules = args.rules.as_deref().map(read_rules).transpose()?;

    let (recordings, tokens) = match &args.dir {
        Some(dir) => (
            list_recordings(dir)?,
            args.tokens
                .clone()
                .unwrap_or_else(|| dir.join("tokens.txt")),
        ),
        None => {
            let missing = |name: &str| Failure::Usage(format!("missing --{name}"));
            let rec = Recording {
                id: args
                    .recording_id
                    .clone()
                    .ok_or_else(|| missing("recording-id"))?,
                posteriors: args
                    .posteriors
                    .clone()
                    .ok_or_else(|| missing("posteriors"))?,
                transcript: args
                    .transcript
                    .clone()
                    .ok_or_else(|| missing("transcript"))?,
            };
            (
                vec![rec],
                args.tokens.clone().ok_or_else(|| missing("tokens"))?,
            )
        }
    };
    ensure_dir(&args.out)?;

    let jobs = args.jobs;
    let results = par::with_threads(jobs, || {
        par::map_slice(&recordings, |rec| {
            let manifest = align_one(rec, &tokens, rules.as_ref(), &config)?;
            write_outputs(&manifest, &args.out, args.format)?;
            Ok::<_, Error>(manifest)
        })
    });

    let mut failed = false;
    let mut manifests = Vec::new();
    for (rec, result) in recordings.iter().zip(results) {
        match result {
            Ok(m) => manifests.push(m),
            Err(e) => {
                failed = true;
                log::debug!("recording {} failed", rec.id);
                report(&Failure::Core(e));
            }
        }
    }
    let refs: Vec<&SegmentManifest> = manifests.iter().collect();
    print!("{}", score_table(&refs));
    let filtered: usize = manifests.iter().map(|m| m.filtered_count()).sum();
    if failed {
        Ok(1)
    } else if filtered > 0 {
        log::info!("{filtered} segment(s) below the score threshold");
        Ok(2)
    } else {
        Ok(0)
    }
}

fn write_outputs(
    manifest: &SegmentManifest,
    out: &Path,
    format: OutputFormat,
) -> Result<(), Error> {
    let id = &manifest.recording_id;
    if matches!(format, OutputFormat::Kaldi | OutputFormat::Both) {
        write_segments(
            manifest,
            SegmentFormat::Kaldi,
            out.join(format!("{id}.segments")),
        )?;
    }
    if matches!(format, OutputFormat::Json | OutputFormat::Both) {
        write_segments(
            manifest,
            SegmentFormat::Json,
            out.join(format!("{id}.json")),
        )?;
    }
    Ok(())
}

fn read_all_segments(paths: &[PathBuf]) -> Result<Vec<SegmentManifest>, Failure> {
    let mut all = Vec::new();
    for p in paths {
        all.extend(read_segments(p)?);
    }
    Ok(all)
}

pub fn eval(args: &EvalArgs) -> CmdResult {
    let pred = read_all_segments(&args.pred)?;
    let reference = read_all_segments(&args.reference)?;
    let report = evaluate_corpus(&pred, &reference, args.threshold)?;
    for id in &report.unmatched_reference {
        log::warn!("no prediction for reference utterance {id}");
    }
    for id in &report.unmatched_predicted {
        log::warn!("predicted utterance {id} has no reference");
    }
    if let Some(path) = &args.report {
        write_file(path, &report.to_json()?)?;
    }
    if let Some(path) = &args.histogram {
        write_file(path, &report.histogram().to_csv())?;
    }
    println!("{}", report.summary_line());
    Ok(0)
}

pub fn synth(args: &SynthArgs) -> CmdResult {
    let text = fs::read_to_string(&args.spec).map_err(|e| io_err(&args.spec, e))?;
    let spec = SynthSpec::from_json(&text)?;
    let out = generate(&spec)?;
    ensure_dir(&args.out)?;
    let rec = &spec.recording_id;
    write_posteriors(&out.posteriors, args.out.join(format!("{rec}.ctcp")))?;
    write_file(&args.out.join("tokens.txt"), &out.tokens.to_text())?;
    write_file(
        &args.out.join(format!("{rec}.txt")),
        &out.transcripts.to_text(),
    )?;
    write_file(
        &args.out.join(format!("{rec}.truth.json")),
        &format_json(&out.truth)?,
    )?;
    println!(
        "{rec}: {} frames, {} planted segments",
        out.posteriors.frames(),
        out.truth.segments.len()
    );
    Ok(0)
}

pub fn augment(args: &AugmentArgs) -> CmdResult {
    let matrix = read_posteriors(&args.posteriors)?.matrix;
    let (sampled_n, sampled_m) = if args.n.is_none() || args.m.is_none() {
        if !(args.min_sec >= 0.0 && args.min_sec <= args.max_sec) {
            return Err(Failure::Usage(format!(
                "invalid sampling range [{}, {}]",
                args.min_sec, args.max_sec
            )));
        }
        sample_augmentation(args.seed, args.min_sec, args.max_sec)
    } else {
        (0.0, 0.0)
    };
    let n = args.n.unwrap_or(sampled_n);
    let m = args.m.unwrap_or(sampled_m);
    let reference = match &args.reference {
        Some(p) => {
            let mut all = read_segments(p)?;
            if all.len() != 1 {
                return Err(Failure::Usage(format!(
                    "{} holds {} recordings; expected one",
                    p.display(),
                    all.len()
                )));
            }
            all.remove(0)
        }
        None => SegmentManifest {
            recording_id: String::new(),
            segments: Vec::new(),
        },
    };
    let (augmented, shifted) = augment_matrix(&matrix, n, m, &reference)?;
    write_posteriors(&augmented, &args.out)?;
    if let Some(path) = &args.out_reference {
        write_file(path, &format_json(&shifted)?)?;
    }
    println!(
        "prepended {:.2}s appended {:.2}s: {} -> {} frames",
        n,
        m,
        matrix.frames(),
        augmented.frames()
    );
    Ok(0)
}

pub fn normalize(args: &NormalizeArgs) -> CmdResult {
    let rules = match (&args.rules, &args.tokens) {
        (Some(r), _) => read_rules(r)?,
        (None, Some(t)) => NormalizationRules::from_token_table(&read_token_table(t, 0)?),
        (None, None) => {
            return Err(Failure::Usage(
                "one of --rules or --tokens is required".into(),
            ))
        }
    };
    let input = match &args.input {
        Some(p) => fs::read_to_string(p).map_err(|e| io_err(p, e))?,
        None => {
            let mut s = String::new();
            std::io::stdin()
                .read_to_string(&mut s)
                .map_err(|e| io_err(Path::new("<stdin>"), e))?;
            s
        }
    };
    let mut out = String::new();
    for (n, line) in input.lines().enumerate() {
        let (id, text) = match line.split_once('\t') {
            Some((id, text)) => (Some(id), text),
            None => (None, line),
        };
        match normalize_text(text, &rules) {
            Normalized::Text(t) => {
                if let Some(id) = id {
                    let _ = write!(out, "{id}\t");
                }
                out.push_str(&t);
                out.push('\n');
            }
            Normalized::Dropped { ch } => {
                log::warn!("line {}: dropped because of {ch:?}", n + 1);
            }
        }
    }
    print!("{out}");
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ctcseg::io::TokenTable;
    use ctcseg::Segment;

    #[test]
    fn score_table_is_tab_separated_and_rounded() {
        let m = SegmentManifest {
            recording_id: "r".into(),
            segments: vec![Segment {
                utterance_id: "u".into(),
                start: 1.234,
                end: 2.0,
                score_log: -0.12345,
                text: "x".into(),
                filtered: false,
                degenerate: false,
            }],
        };
        let table = score_table(&[&m]);
        assert_eq!(table.lines().nth(1), Some("r\tu\t1.23\t2.00\t-0.1235\tok"));
    }

    #[test]
    fn token_table_without_space_is_fine_for_normalize() {
        let t = TokenTable::new(vec!["_".into(), "a".into()], 0).unwrap();
        let r = NormalizationRules::from_token_table(&t);
        assert_eq!(normalize_text("A", &r), Normalized::Text("a".into()));
    }
}
