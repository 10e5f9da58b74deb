//! Dataset ingestion, cleaning, stratified splitting, batching and
//! summary statistics for three-class sentiment TSV files.

mod batch;
mod split;
mod stats;
pub mod synthetic;

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use batch::{make_batches, EncodedBatch};
pub use split::{build_vocab, stratified_split, DatasetSplit, SplitRole};
pub use stats::{class_stats, ClassStats};

pub const NUM_CLASSES: usize = 3;

/// Class indices are fixed: 0 negative, 1 positive, 2 neutral.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Negative = 0,
    Positive = 1,
    Neutral = 2,
}

impl Label {
    pub const ALL: [Label; NUM_CLASSES] = [Label::Negative, Label::Positive, Label::Neutral];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Negative => "negative",
            Self::Positive => "positive",
            Self::Neutral => "neutral",
        }
    }
}

impl std::str::FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("unknown label `{s}` (expected negative|positive|neutral)"))
    }
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Language {
    RomanUrdu = 0,
    English = 1,
    Mixed = 2,
}

impl Language {
    pub const ALL: [Language; 3] = [Language::RomanUrdu, Language::English, Language::Mixed];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::RomanUrdu => "roman-urdu",
            Self::English => "english",
            Self::Mixed => "mixed",
        }
    }
}

impl std::str::FromStr for Language {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("unknown language `{s}` (expected roman-urdu|english|mixed)"))
    }
}

impl std::fmt::Display for Language {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Example {
    pub text: String,
    pub label: Label,
    pub language: Option<Language>,
}

impl Example {
    pub fn new(text: impl Into<String>, label: Label) -> Self {
        Self {
            text: text.into(),
            label,
            language: None,
        }
    }

    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.text.split_whitespace()
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

/// Parses `label<TAB>text[<TAB>language]` records. Blank lines are skipped;
/// a trailing carriage return is tolerated.
pub fn read_dataset(reader: impl BufRead, path: &Path) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let lineno = n + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let (label, text, language) = match fields.as_slice() {
            [l, t] => (l, t, None),
            [l, t, lang] => (l, t, Some(lang)),
            _ => {
                return Err(parse_err(
                    path,
                    lineno,
                    format!("expected 2 or 3 tab-separated fields, found {}", fields.len()),
                ))
            }
        };
        let label = label.trim().parse::<Label>().map_err(|m| parse_err(path, lineno, m))?;
        let language = language
            .map(|l| l.trim().parse::<Language>())
            .transpose()
            .map_err(|m| parse_err(path, lineno, m))?;
        out.push(Example {
            text: text.to_string(),
            label,
            language,
        });
    }
    if out.is_empty() {
        return Err(Error::Empty(format!("dataset {}", path.display())));
    }
    Ok(out)
}

pub fn load_dataset(path: &Path) -> Result<Vec<Example>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(file), path)
}

/// Writes records in the same TSV layout `load_dataset` reads. Tabs and
/// newlines inside text are replaced by spaces.
pub fn write_dataset(path: &Path, examples: &[Example]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for ex in examples {
        let text: String = ex
            .text
            .chars()
            .map(|c| if matches!(c, '\t' | '\n' | '\r') { ' ' } else { c })
            .collect();
        let r = match ex.language {
            Some(l) => writeln!(w, "{}\t{}\t{}", ex.label, text, l),
            None => writeln!(w, "{}\t{}", ex.label, text),
        };
        r.map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PreprocessReport {
    pub input: usize,
    pub kept: usize,
    pub dropped_single_token: usize,
    pub dropped_empty: usize,
}

/// Lowercases, collapses whitespace and drops texts with fewer than two
/// tokens. Order is preserved.
pub fn preprocess(examples: Vec<Example>) -> (Vec<Example>, PreprocessReport) {
    let mut report = PreprocessReport {
        input: examples.len(),
        ..Default::default()
    };
    let kept: Vec<Example> = examples
        .into_iter()
        .filter_map(|mut ex| {
            let lower = ex.text.to_lowercase();
            let tokens: Vec<&str> = lower.split_whitespace().collect();
            match tokens.len() {
                0 => {
                    report.dropped_empty += 1;
                    None
                }
                1 => {
                    report.dropped_single_token += 1;
                    None
                }
                _ => {
                    ex.text = tokens.join(" ");
                    Some(ex)
                }
            }
        })
        .collect();
    report.kept = kept.len();
    (kept, report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn parse(s: &str) -> Result<Vec<Example>> {
        read_dataset(s.as_bytes(), Path::new("fixture.tsv"))
    }

    #[test]
    fn three_line_fixture() {
        let ex = parse("positive\tbohat acha\nnegative\tbad day\troman-urdu\nneutral\tkal milte hain\tmixed\n")
            .unwrap();
        assert_eq!(ex.len(), 3);
        assert_eq!(ex[1].label, Label::Negative);
        assert_eq!(ex[1].language, Some(Language::RomanUrdu));
        assert_eq!(ex[0].language, None);
    }

    #[test]
    fn unknown_label_reports_line() {
        match parse("positive\ta b\nhappy\tc d\n").unwrap_err() {
            Error::Parse { line, msg, .. } => {
                assert_eq!(line, 2);
                assert!(msg.contains("happy"));
            }
            e => panic!("{e:?}"),
        }
    }

    #[test]
    fn malformed_rows_and_empty_files() {
        assert!(matches!(parse("positive\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse("positive\ta\tklingon\n"), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse(""), Err(Error::Empty(_))));
        assert!(matches!(parse("\n\n"), Err(Error::Empty(_))));
        assert_eq!(parse("neutral\ta b\r\n").unwrap()[0].text, "a b");
    }

    #[test]
    fn preprocess_examples() {
        let (out, rep) = preprocess(vec![
            Example::new("GOOD Day", Label::Positive),
            Example::new("zabardast", Label::Positive),
            Example::new("already clean text", Label::Neutral),
            Example::new("   ", Label::Neutral),
        ]);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].text, "good day");
        assert_eq!(out[1].text, "already clean text");
        assert_eq!(rep.dropped_single_token, 1);
        assert_eq!(rep.dropped_empty, 1);
        assert_eq!(rep.kept, 2);
    }

    #[test]
    fn write_then_read_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.tsv");
        let mut a = Example::new("x y", Label::Neutral);
        a.language = Some(Language::English);
        let exs = vec![a, Example::new("tab\there", Label::Negative)];
        write_dataset(&p, &exs).unwrap();
        let back = load_dataset(&p).unwrap();
        assert_eq!(back[0], exs[0]);
        assert_eq!(back[1].text, "tab here");
    }

    proptest! {
        #[test]
        fn preprocess_is_idempotent(texts in proptest::collection::vec("[A-Za-z ]{0,20}", 0..20)) {
            let exs: Vec<Example> = texts.iter().map(|t| Example::new(t.clone(), Label::Neutral)).collect();
            let (once, _) = preprocess(exs);
            let (twice, rep) = preprocess(once.clone());
            prop_assert_eq!(&once, &twice);
            prop_assert_eq!(rep.kept, once.len());
        }
    }
}
