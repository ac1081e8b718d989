//! Corpus files, vocabularies, corpus statistics and the synthetic table generator.

use crate::table::{normalize_token, Location, MetricTarget, TableInstance, Violation};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("record {index}: {message}")]
    Schema { index: usize, message: String },
    #[error("word vectors line {line}: {message}")]
    WordVectors { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, DatasetError>;

/// Lowercase and split on whitespace. Punctuation stays inside tokens.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace().map(|t| t.to_lowercase()).collect()
}

// ---------------------------------------------------------------------------
// Corpus file format
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
struct MetricRecord {
    location: String,
    level: Option<usize>,
    tokens: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TableRecord {
    id: String,
    caption: String,
    row_headers: Vec<Vec<String>>,
    column_headers: Vec<Vec<String>>,
    #[serde(default)]
    cells: Vec<Vec<String>>,
    metric: MetricRecord,
}

impl TableRecord {
    fn into_table(self, index: usize) -> Result<TableInstance> {
        let location = Location::parse(&self.metric.location).ok_or_else(|| DatasetError::Schema {
            index,
            message: format!("unknown location {:?} (expected rh, ch or none)", self.metric.location),
        })?;
        Ok(TableInstance {
            id: self.id,
            caption: tokenize(&self.caption),
            row_headers: self.row_headers,
            column_headers: self.column_headers,
            cells: self.cells,
            target: MetricTarget {
                location,
                level: self.metric.level,
                tokens: self.metric.tokens,
            },
        })
    }

    fn from_table(t: &TableInstance) -> Self {
        TableRecord {
            id: t.id.clone(),
            caption: t.caption.join(" "),
            row_headers: t.row_headers.clone(),
            column_headers: t.column_headers.clone(),
            cells: t.cells.clone(),
            metric: MetricRecord {
                location: t.target.location.as_str().to_string(),
                level: t.target.level,
                tokens: t.target.tokens.clone(),
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn file_name(self) -> &'static str {
        match self {
            Split::Train => "train.json",
            Split::Val => "val.json",
            Split::Test => "test.json",
        }
    }
}

/// A record that parsed but broke a table invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct QuarantinedRecord {
    pub index: usize,
    pub id: String,
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct LoadedCorpus {
    pub tables: Vec<TableInstance>,
    pub quarantined: Vec<QuarantinedRecord>,
}

pub fn parse_corpus(text: &str) -> Result<LoadedCorpus> {
    let values: Vec<serde_json::Value> = serde_json::from_str(text).map_err(|e| DatasetError::Parse {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let mut out = LoadedCorpus::default();
    for (index, value) in values.into_iter().enumerate() {
        let record: TableRecord = serde_json::from_value(value).map_err(|e| DatasetError::Schema {
            index,
            message: e.to_string(),
        })?;
        let table = record.into_table(index)?;
        let violations = table.validate();
        if violations.is_empty() {
            out.tables.push(table);
        } else {
            out.quarantined.push(QuarantinedRecord {
                index,
                id: table.id,
                violations: violations.iter().map(Violation::to_string).collect(),
            });
        }
    }
    Ok(out)
}

/// Loads a corpus file. Invalid records are returned in `quarantined`, never dropped silently.
pub fn load_corpus(path: &Path) -> Result<LoadedCorpus> {
    let text = fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_corpus(&text)
}

/// Loads `<dir>/{train,val,test}.json`.
pub fn load_split(dir: &Path, split: Split) -> Result<LoadedCorpus> {
    load_corpus(&dir.join(split.file_name()))
}

pub fn corpus_to_json(tables: &[TableInstance]) -> String {
    let records: Vec<TableRecord> = tables.iter().map(TableRecord::from_table).collect();
    serde_json::to_string_pretty(&records).expect("table records serialize")
}

pub fn save_corpus(path: &Path, tables: &[TableInstance]) -> Result<()> {
    fs::write(path, corpus_to_json(tables)).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Path of the sidecar report for records that failed validation.
pub fn quarantine_path(corpus: &Path) -> PathBuf {
    let mut name = corpus.file_name().unwrap_or_default().to_os_string();
    name.push(".quarantine.json");
    corpus.with_file_name(name)
}

pub fn write_quarantine(corpus: &Path, records: &[QuarantinedRecord]) -> Result<PathBuf> {
    let path = quarantine_path(corpus);
    let body = serde_json::to_string_pretty(records).expect("quarantine serializes");
    fs::write(&path, body).map_err(|source| DatasetError::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

// ---------------------------------------------------------------------------
// Vocabularies
// ---------------------------------------------------------------------------

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "VocabRepr", into = "VocabRepr")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    is_metric_vocab: bool,
}

#[derive(Serialize, Deserialize)]
struct VocabRepr {
    is_metric_vocab: bool,
    tokens: Vec<String>,
}

impl From<VocabRepr> for Vocabulary {
    fn from(r: VocabRepr) -> Self {
        let mut v = Vocabulary::new(r.is_metric_vocab);
        for t in r.tokens.into_iter().skip(2) {
            v.insert(&t);
        }
        v
    }
}

impl From<Vocabulary> for VocabRepr {
    fn from(v: Vocabulary) -> Self {
        VocabRepr {
            is_metric_vocab: v.is_metric_vocab,
            tokens: v.tokens,
        }
    }
}

impl Vocabulary {
    pub fn new(is_metric_vocab: bool) -> Self {
        let mut v = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
            is_metric_vocab,
        };
        v.insert(PAD_TOKEN);
        v.insert(UNK_TOKEN);
        v
    }

    /// Adds a token if absent and returns its id.
    pub fn insert(&mut self, token: &str) -> usize {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or [`UNK`].
    pub fn id(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= 2
    }

    pub fn is_metric_vocab(&self) -> bool {
        self.is_metric_vocab
    }

    /// Whether `id` is PAD or UNK.
    pub fn is_reserved(id: usize) -> bool {
        id == PAD || id == UNK
    }
}

/// Caption tokens followed by the tokens of every header name, row levels first.
pub fn table_tokens(t: &TableInstance) -> impl Iterator<Item = String> + '_ {
    let headers = t
        .row_headers
        .iter()
        .chain(t.column_headers.iter())
        .flat_map(|level| level.iter())
        .flat_map(|name| tokenize(name));
    t.caption.iter().cloned().chain(headers)
}

/// Builds the caption/header vocabulary and the metric-type vocabulary.
///
/// Tokens are inserted in sorted order, so ids do not depend on table order.
pub fn build_vocabularies(tables: &[TableInstance]) -> (Vocabulary, Vocabulary) {
    let mut words = BTreeSet::new();
    let mut metrics = BTreeSet::new();
    for t in tables {
        words.extend(table_tokens(t));
        metrics.extend(t.target.tokens.iter().map(|m| normalize_token(m)));
    }
    let mut general = Vocabulary::new(false);
    for w in &words {
        general.insert(w);
    }
    let mut metric = Vocabulary::new(true);
    for m in &metrics {
        metric.insert(m);
    }
    (general, metric)
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub table_count: usize,
    pub avg_rows: f64,
    pub avg_columns: f64,
    pub max_row_header_level: usize,
    pub max_column_header_level: usize,
    /// Distinct caption and header tokens (PAD/UNK excluded).
    pub header_vocab_size: usize,
    /// Distinct gold metric strings as written.
    pub all_metric_type_count: usize,
    /// Distinct gold metric strings after lowercasing and trimming.
    pub unique_metric_type_count: usize,
}

impl CorpusStats {
    /// Averages rounded to whole numbers, as they are usually displayed.
    pub fn rounded_averages(&self) -> (u64, u64) {
        (self.avg_rows.round() as u64, self.avg_columns.round() as u64)
    }
}

pub fn corpus_stats(tables: &[TableInstance]) -> CorpusStats {
    let n = tables.len();
    let mean = |f: &dyn Fn(&TableInstance) -> usize| {
        if n == 0 {
            0.0
        } else {
            tables.iter().map(f).sum::<usize>() as f64 / n as f64
        }
    };
    let (general, metric) = build_vocabularies(tables);
    let raw_metrics: BTreeSet<&str> = tables
        .iter()
        .flat_map(|t| t.target.tokens.iter().map(String::as_str))
        .collect();
    CorpusStats {
        table_count: n,
        avg_rows: mean(&|t| t.n_rows()),
        avg_columns: mean(&|t| t.n_cols()),
        max_row_header_level: tables.iter().map(|t| t.row_levels()).max().unwrap_or(0),
        max_column_header_level: tables.iter().map(|t| t.column_levels()).max().unwrap_or(0),
        header_vocab_size: general.len() - 2,
        all_metric_type_count: raw_metrics.len(),
        unique_metric_type_count: metric.len() - 2,
    }
}

// ---------------------------------------------------------------------------
// Word vectors
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Default)]
pub struct WordVectors {
    pub dim: usize,
    pub vectors: HashMap<String, Vec<f64>>,
}

/// Reads `token v1 v2 ... vD` lines. Every line must have the same width.
pub fn read_word_vectors(path: &Path) -> Result<WordVectors> {
    let file = fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = WordVectors::default();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| DatasetError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else { continue };
        let values = parts
            .map(str::parse::<f64>)
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| DatasetError::WordVectors {
                line: i + 1,
                message: e.to_string(),
            })?;
        if values.is_empty() {
            return Err(DatasetError::WordVectors {
                line: i + 1,
                message: "no vector components".into(),
            });
        }
        if out.dim == 0 {
            out.dim = values.len();
        } else if values.len() != out.dim {
            return Err(DatasetError::WordVectors {
                line: i + 1,
                message: format!("expected {} components, found {}", out.dim, values.len()),
            });
        }
        out.vectors.insert(token.to_lowercase(), values);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Synthetic corpora
// ---------------------------------------------------------------------------

/// Shape of a generated corpus.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    /// Relative weights of column-header, row-header and out-of-header targets.
    pub proportions: [f64; 3],
    pub metric_lexicon: Vec<String>,
    /// Metric tokens for out-of-header tables; falls back to `metric_lexicon`.
    pub caption_lexicon: Option<Vec<String>>,
    pub rows: (usize, usize),
    pub cols: (usize, usize),
    pub row_levels: (usize, usize),
    pub column_levels: (usize, usize),
    pub id_prefix: String,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            proportions: [0.6, 0.2, 0.2],
            metric_lexicon: ["accuracy", "bleu", "f1", "prec", "rec", "rouge-l", "meteor", "em"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            caption_lexicon: None,
            rows: (2, 5),
            cols: (2, 5),
            row_levels: (1, 2),
            column_levels: (1, 3),
            id_prefix: "synth".into(),
        }
    }
}

const MODELS: &[&str] = &[
    "bilstm", "cnn", "transformer", "crf", "baseline", "ours", "bert base", "seq2seq",
    "model a", "model b", "lstm crf", "gcn",
];
const DATASETS: &[&str] = &[
    "squad", "conll", "wmt14", "snli", "ontonotes", "ptb", "task 1", "task 2", "dev", "test",
];
const SETTINGS: &[&str] = &[
    "en-de", "de-en", "zero-shot", "few-shot", "full", "small", "large", "in-domain",
];
const GROUPS: &[&str] = &["models", "method", "system", "setting", "approach"];
const CAPTION_SUBJECTS: &[&str] = &[
    "results", "comparison", "performance", "evaluation", "experimental results",
];
const CAPTION_OBJECTS: &[&str] = &[
    "on the test set", "on the benchmark", "of different models", "across settings",
    "with ablated components", "for all systems",
];

fn pick<'a, R: Rng>(rng: &mut R, items: &'a [&'a str]) -> &'a str {
    items[rng.random_range(0..items.len())]
}

fn sample_range<R: Rng>(rng: &mut R, (lo, hi): (usize, usize)) -> usize {
    if hi <= lo {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// Fills one non-metric header level with grouped labels.
fn filler_level<R: Rng>(rng: &mut R, len: usize, depth: usize) -> Vec<String> {
    let lexicon = match depth % 3 {
        0 => MODELS,
        1 => DATASETS,
        _ => SETTINGS,
    };
    match rng.random_range(0..3) {
        0 => vec![pick(rng, GROUPS).to_string(); len],
        1 => {
            let span = rng.random_range(1..=len.max(1));
            let labels: Vec<&str> = (0..len.div_ceil(span)).map(|_| pick(rng, lexicon)).collect();
            (0..len).map(|i| labels[i / span].to_string()).collect()
        }
        _ => (0..len).map(|_| pick(rng, lexicon).to_string()).collect(),
    }
}

fn metric_level<R: Rng>(rng: &mut R, len: usize, lexicon: &[String]) -> Vec<String> {
    let distinct = rng.random_range(1..=len.min(3).min(lexicon.len()).max(1));
    let mut chosen = lexicon.to_vec();
    chosen.shuffle(rng);
    chosen.truncate(distinct);
    (0..len).map(|i| chosen[i % distinct].clone()).collect()
}

fn in_header_caption<R: Rng>(rng: &mut R) -> Vec<String> {
    let text = format!(
        "{} {} {}",
        pick(rng, CAPTION_SUBJECTS),
        pick(rng, CAPTION_OBJECTS),
        pick(rng, DATASETS)
    );
    tokenize(&text)
}

fn out_of_header_caption<R: Rng>(rng: &mut R, metric: &str) -> Vec<String> {
    let dataset = pick(rng, DATASETS);
    let text = match rng.random_range(0..3) {
        0 => format!("{} {} in terms of {}", pick(rng, CAPTION_SUBJECTS), pick(rng, CAPTION_OBJECTS), metric),
        1 => format!("{} scores {} {}", metric, pick(rng, CAPTION_OBJECTS), dataset),
        _ => format!("{} on {} ( {} )", pick(rng, CAPTION_SUBJECTS), dataset, metric),
    };
    tokenize(&text)
}

/// Deterministic corpus for tests and smoke runs.
pub fn generate_synthetic(seed: u64, size: usize, spec: &SynthSpec) -> Vec<TableInstance> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total: f64 = spec.proportions.iter().sum();
    let mut counts = [0usize; 3];
    for (c, p) in counts.iter_mut().zip(spec.proportions) {
        *c = ((p / total) * size as f64).floor() as usize;
    }
    let mut rest = size - counts.iter().sum::<usize>();
    for c in counts.iter_mut() {
        if rest == 0 {
            break;
        }
        *c += 1;
        rest -= 1;
    }
    let mut kinds: Vec<Location> = std::iter::repeat_n(Location::ColumnHeader, counts[0])
        .chain(std::iter::repeat_n(Location::RowHeader, counts[1]))
        .chain(std::iter::repeat_n(Location::OutOfHeader, counts[2]))
        .collect();
    kinds.shuffle(&mut rng);

    let caption_lexicon = spec.caption_lexicon.as_ref().unwrap_or(&spec.metric_lexicon);
    kinds
        .into_iter()
        .enumerate()
        .map(|(i, kind)| {
            let n_r = sample_range(&mut rng, spec.rows);
            let n_c = sample_range(&mut rng, spec.cols);
            let mut u = sample_range(&mut rng, spec.row_levels);
            let mut v = sample_range(&mut rng, spec.column_levels);
            match kind {
                Location::RowHeader => u = u.max(1),
                Location::ColumnHeader => v = v.max(1),
                Location::OutOfHeader => {}
            }
            if u + v == 0 {
                v = 1;
            }
            let mut row_headers: Vec<Vec<String>> =
                (0..u).map(|k| filler_level(&mut rng, n_r, k)).collect();
            let mut column_headers: Vec<Vec<String>> =
                (0..v).map(|l| filler_level(&mut rng, n_c, l + 1)).collect();
            let cells = (0..n_r)
                .map(|_| (0..n_c).map(|_| format!("{:.1}", rng.random_range(0.0..100.0))).collect())
                .collect();
            let (caption, target) = match kind {
                Location::RowHeader | Location::ColumnHeader => {
                    let (levels, len) = if kind == Location::RowHeader {
                        (&mut row_headers, n_r)
                    } else {
                        (&mut column_headers, n_c)
                    };
                    let level = rng.random_range(1..=levels.len());
                    levels[level - 1] = metric_level(&mut rng, len, &spec.metric_lexicon);
                    let tokens = levels[level - 1].clone();
                    (
                        in_header_caption(&mut rng),
                        MetricTarget {
                            location: kind,
                            level: Some(level),
                            tokens,
                        },
                    )
                }
                Location::OutOfHeader => {
                    let metric = caption_lexicon[rng.random_range(0..caption_lexicon.len())].clone();
                    (
                        out_of_header_caption(&mut rng, &metric),
                        MetricTarget {
                            location: kind,
                            level: None,
                            tokens: vec![metric; n_c],
                        },
                    )
                }
            };
            TableInstance {
                id: format!("{}-{}-{:04}", spec.id_prefix, seed, i),
                caption,
                row_headers,
                column_headers,
                cells,
                target,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::table::fixtures::model_comparison;

    #[test]
    fn tokenize_keeps_punctuation() {
        assert_eq!(tokenize("Pearson's r  F-1"), vec!["pearson's", "r", "f-1"]);
    }

    #[test]
    fn empty_array_loads_nothing() {
        let c = parse_corpus("[]").unwrap();
        assert!(c.tables.is_empty() && c.quarantined.is_empty());
    }

    #[test]
    fn malformed_json_reports_position() {
        let err = parse_corpus("[\n{\"id\": }").unwrap_err();
        assert!(matches!(err, DatasetError::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn unknown_location_is_schema_error() {
        let mut t = corpus_to_json(&[model_comparison()]);
        t = t.replace("\"ch\"", "\"diag\"");
        let err = parse_corpus(&t).unwrap_err();
        assert!(matches!(err, DatasetError::Schema { index: 0, .. }), "{err}");
    }

    #[test]
    fn invalid_records_are_quarantined() {
        let mut bad = model_comparison();
        bad.id = "bad".into();
        bad.row_headers[1].pop();
        let c = parse_corpus(&corpus_to_json(&[model_comparison(), bad])).unwrap();
        assert_eq!(c.tables.len(), 1);
        assert_eq!(c.quarantined.len(), 1);
        assert_eq!(c.quarantined[0].index, 1);
        assert_eq!(c.quarantined[0].id, "bad");
    }

    #[test]
    fn caption_vocab_dedupes() {
        let mut t = model_comparison();
        t.caption = tokenize("a b a");
        t.row_headers.clear();
        t.column_headers = vec![vec!["a".into(); 4], vec!["prec".into(), "rec".into(), "prec".into(), "rec".into()]];
        let (general, metric) = build_vocabularies(&[t]);
        assert_eq!(general.tokens(), &["<pad>", "<unk>", "a", "b", "prec", "rec"]);
        assert_eq!(metric.tokens(), &["<pad>", "<unk>", "prec", "rec"]);
        assert!(metric.is_metric_vocab());
        for id in 0..general.len() {
            assert_eq!(general.id(general.token(id)), id);
        }
        assert_eq!(general.id("zzz"), UNK);
    }

    #[test]
    fn stats_of_one_table() {
        let t = model_comparison();
        let s = corpus_stats(std::slice::from_ref(&t));
        assert_eq!(s.table_count, 1);
        assert_eq!(s.max_row_header_level, 2);
        assert_eq!(s.max_column_header_level, 2);
        assert_eq!((s.avg_rows, s.avg_columns), (4.0, 4.0));
        assert_eq!(s.unique_metric_type_count, 2);
        assert!(s.unique_metric_type_count <= s.all_metric_type_count);
    }

    #[test]
    fn synthetic_class_split_and_determinism() {
        let spec = SynthSpec {
            metric_lexicon: vec!["accuracy".into(), "bleu".into(), "f1".into()],
            ..SynthSpec::default()
        };
        let a = generate_synthetic(7, 50, &spec);
        let b = generate_synthetic(7, 50, &spec);
        assert_eq!(corpus_to_json(&a), corpus_to_json(&b));
        let count = |loc| a.iter().filter(|t| t.target.location == loc).count();
        assert_eq!(count(Location::ColumnHeader), 30);
        assert_eq!(count(Location::RowHeader), 10);
        assert_eq!(count(Location::OutOfHeader), 10);
        for t in &a {
            assert!(t.is_valid(), "{}: {:?}", t.id, t.validate());
            for tok in &t.target.tokens {
                assert!(spec.metric_lexicon.contains(tok));
            }
            if t.target.location == Location::OutOfHeader {
                assert!(t.gold_token_in_caption());
            }
        }
    }

    #[test]
    fn word_vectors_parse_and_reject_ragged() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vec.txt");
        fs::write(&p, "prec 0.5 -1\nRec 1 2\n").unwrap();
        let wv = read_word_vectors(&p).unwrap();
        assert_eq!(wv.dim, 2);
        assert_eq!(wv.vectors["rec"], vec![1.0, 2.0]);
        fs::write(&p, "a 1 2\nb 1\n").unwrap();
        assert!(matches!(
            read_word_vectors(&p),
            Err(DatasetError::WordVectors { line: 2, .. })
        ));
    }

    #[test]
    fn quarantine_sidecar_sits_next_to_corpus() {
        assert_eq!(
            quarantine_path(Path::new("/data/train.json")),
            PathBuf::from("/data/train.json.quarantine.json")
        );
    }
}
