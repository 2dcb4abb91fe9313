//! Corpus, label-set and vocabulary files.
//!
//! Corpus files hold one JSON object per line:
//! `{"id": str, "utterances": [{"tokens": [str], "label": str, "speaker": str?}]}`.
//! Label files hold one label per line (line order is index order);
//! vocabulary files hold one token per line starting at id 2.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::{Dialogue, LabelSet, Vocabulary};
use crate::error::{HkdError, Result};

/// Parses a corpus stream; blank lines are skipped.
pub fn read_dialogues(reader: impl Read) -> Result<Vec<Dialogue>> {
    let mut dialogues = Vec::new();
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let d: Dialogue = serde_json::from_str(&line).map_err(|e| HkdError::Corpus {
            line: i + 1,
            msg: e.to_string(),
        })?;
        if d.utterances.is_empty() {
            return Err(HkdError::Corpus {
                line: i + 1,
                msg: "dialogue has no utterances".into(),
            });
        }
        if let Some(t) = d.utterances.iter().position(|u| u.tokens.is_empty()) {
            return Err(HkdError::Corpus {
                line: i + 1,
                msg: format!("utterance {t} has no tokens"),
            });
        }
        dialogues.push(d);
    }
    if dialogues.is_empty() {
        return Err(HkdError::Input("no dialogues".into()));
    }
    Ok(dialogues)
}

pub fn write_dialogues(mut writer: impl Write, dialogues: &[Dialogue]) -> Result<()> {
    for d in dialogues {
        serde_json::to_writer(&mut writer, d)?;
        writer.write_all(b"\n")?;
    }
    Ok(())
}

/// Loads a corpus. Labels come from `labels` when given (an unlisted label is
/// an error), otherwise in first-seen order.
pub fn load_corpus(path: &Path, labels: Option<&LabelSet>) -> Result<(Vec<Dialogue>, LabelSet)> {
    let dialogues = read_dialogues(fs::File::open(path)?)?;
    let set = match labels {
        Some(set) => {
            for u in dialogues.iter().flat_map(|d| &d.utterances) {
                set.index(&u.label)?;
            }
            set.clone()
        }
        None => LabelSet::from_dialogues(&dialogues),
    };
    Ok((dialogues, set))
}

pub fn save_corpus(path: &Path, dialogues: &[Dialogue]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    write_dialogues(&mut w, dialogues)?;
    w.flush()?;
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    Ok(fs::read_to_string(path)?
        .lines()
        .map(str::trim_end)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

fn write_lines<'a>(path: &Path, lines: impl IntoIterator<Item = &'a String>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for l in lines {
        writeln!(w, "{l}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_labels(path: &Path) -> Result<LabelSet> {
    LabelSet::new(read_lines(path)?)
}

pub fn save_labels(path: &Path, labels: &LabelSet) -> Result<()> {
    write_lines(path, labels.labels())
}

pub fn load_vocab(path: &Path) -> Result<Vocabulary> {
    Vocabulary::new(read_lines(path)?)
}

pub fn save_vocab(path: &Path, vocab: &Vocabulary) -> Result<()> {
    write_lines(path, vocab.tokens())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_record() {
        let text = r#"{"id":"d1","utterances":[{"tokens":["hello"],"label":"opening"}]}"#;
        let ds = read_dialogues(text.as_bytes()).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds[0].utterances.len(), 1);
        assert_eq!(LabelSet::from_dialogues(&ds).labels(), ["opening"]);
    }

    #[test]
    fn empty_input_has_no_dialogues() {
        let err = read_dialogues("".as_bytes()).unwrap_err();
        assert!(err.to_string().contains("no dialogues"));
    }

    #[test]
    fn malformed_line_is_reported() {
        let text = "{\"id\":\"a\",\"utterances\":[{\"tokens\":[\"x\"],\"label\":\"l\"}]}\n{oops\n";
        match read_dialogues(text.as_bytes()) {
            Err(HkdError::Corpus { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let text = r#"{"id":"d1","utterances":[{"tokens":["a","b"],"label":"x","speaker":"agent"},{"tokens":["c"],"label":"y"}]}"#;
        let ds = read_dialogues(text.as_bytes()).unwrap();
        let p = dir.path().join("c.jsonl");
        save_corpus(&p, &ds).unwrap();
        let (back, labels) = load_corpus(&p, None).unwrap();
        assert_eq!(back, ds);

        let lp = dir.path().join("labels.txt");
        save_labels(&lp, &labels).unwrap();
        assert_eq!(load_labels(&lp).unwrap(), labels);

        let vocab = Vocabulary::build(&ds);
        let vp = dir.path().join("vocab.txt");
        save_vocab(&vp, &vocab).unwrap();
        let v2 = load_vocab(&vp).unwrap();
        assert_eq!(v2, vocab);
        assert_eq!(v2.id("a"), vocab.id("a"));
    }

    #[test]
    fn supplied_label_set_rejects_unknown() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.jsonl");
        fs::write(&p, r#"{"id":"d1","utterances":[{"tokens":["a"],"label":"x"}]}"#).unwrap();
        let set = LabelSet::new(vec!["y".into()]).unwrap();
        assert!(matches!(load_corpus(&p, Some(&set)), Err(HkdError::UnknownLabel(_))));
    }
}
