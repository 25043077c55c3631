//! Caption-corpus scanning for word / gendered-pronoun co-occurrence.
//!
//! Each caption is tokenized once and matched against every word of
//! interest in the same pass. Input is processed in batches; within a batch
//! captions are split across worker threads with private counters that are
//! summed at the end, so results do not depend on the worker count or on
//! line order.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use flate2::read::MultiGzDecoder;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const GZIP_MAGIC: [u8; 2] = [0x1f, 0x8b];
const BATCH_LINES: usize = 1 << 14;
const WORKER_CHUNK: usize = 512;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PronounLexicon {
    pub male: BTreeSet<String>,
    pub female: BTreeSet<String>,
}

impl Default for PronounLexicon {
    fn default() -> Self {
        let set = |w: &[&str]| w.iter().map(|s| s.to_string()).collect();
        PronounLexicon {
            male: set(&["he", "him", "his", "himself"]),
            female: set(&["she", "her", "hers", "herself"]),
        }
    }
}

impl PronounLexicon {
    /// Lowercases entries and checks both sets are non-empty and disjoint.
    pub fn new<I, J>(male: I, female: J) -> Result<Self>
    where
        I: IntoIterator,
        I::Item: AsRef<str>,
        J: IntoIterator,
        J::Item: AsRef<str>,
    {
        let male = lower_set(male);
        let female = lower_set(female);
        if male.is_empty() || female.is_empty() {
            return Err(Error::Domain(
                "pronoun lexicon needs male and female entries".into(),
            ));
        }
        if male.iter().chain(&female).any(|t| t.is_empty()) {
            return Err(Error::Domain("pronoun lexicon has an empty entry".into()));
        }
        if let Some(both) = male.intersection(&female).next() {
            return Err(Error::Domain(format!(
                "pronoun {both:?} is in both gender sets"
            )));
        }
        Ok(PronounLexicon { male, female })
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let raw: PronounLexicon =
            serde_json::from_str(json).map_err(|e| Error::Format(format!("lexicon: {e}")))?;
        PronounLexicon::new(raw.male, raw.female)
    }
}

fn lower_set<I>(words: I) -> BTreeSet<String>
where
    I: IntoIterator,
    I::Item: AsRef<str>,
{
    words
        .into_iter()
        .map(|w| w.as_ref().trim().to_lowercase())
        .collect()
}

/// Lowercasing word tokenizer. Tokens are runs of letters, digits and
/// apostrophes; with `split_clitics` apostrophes also separate tokens, so
/// "she's" yields "she" and "s".
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tokenizer {
    pub split_clitics: bool,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Tokenizer {
            split_clitics: true,
        }
    }
}

fn is_apostrophe(c: char) -> bool {
    matches!(c, '\'' | '\u{2019}' | '\u{02bc}')
}

impl Tokenizer {
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let keep = |c: char| c.is_alphanumeric() || (!self.split_clitics && is_apostrophe(c));
        text.split(|c: char| !keep(c))
            .map(|t| t.trim_matches(is_apostrophe))
            .filter(|t| !t.is_empty())
            .map(str::to_lowercase)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GenderAssignment {
    Male,
    Female,
    Mixed,
    None,
}

pub fn assign_gender(caption: &str, lexicon: &PronounLexicon) -> GenderAssignment {
    assign_gender_tokens(&Tokenizer::default().tokenize(caption), lexicon)
}

pub fn assign_gender_tokens<S: AsRef<str>>(
    tokens: &[S],
    lexicon: &PronounLexicon,
) -> GenderAssignment {
    let (mut male, mut female) = (0usize, 0usize);
    for t in tokens {
        let t = t.as_ref();
        if lexicon.male.contains(t) {
            male += 1;
        } else if lexicon.female.contains(t) {
            female += 1;
        }
    }
    match male.cmp(&female) {
        std::cmp::Ordering::Greater => GenderAssignment::Male,
        std::cmp::Ordering::Less => GenderAssignment::Female,
        std::cmp::Ordering::Equal if male > 0 => GenderAssignment::Mixed,
        std::cmp::Ordering::Equal => GenderAssignment::None,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordCounts {
    pub male_count: u64,
    pub female_count: u64,
    pub mixed_count: u64,
    pub total_matched: u64,
}

impl WordCounts {
    fn add(&mut self, other: &WordCounts) {
        self.male_count += other.male_count;
        self.female_count += other.female_count;
        self.mixed_count += other.mixed_count;
        self.total_matched += other.total_matched;
    }

    fn record(&mut self, g: GenderAssignment) {
        match g {
            GenderAssignment::Male => self.male_count += 1,
            GenderAssignment::Female => self.female_count += 1,
            GenderAssignment::Mixed => self.mixed_count += 1,
            GenderAssignment::None => return,
        }
        self.total_matched += 1;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub per_word: BTreeMap<String, WordCounts>,
    pub captions_scanned: u64,
    pub skipped_lines: u64,
}

/// Matches token sequences for many words in one left-to-right pass.
#[derive(Debug, Clone)]
struct WordMatcher {
    patterns: Vec<Vec<String>>,
    by_first: HashMap<String, Vec<usize>>,
}

impl WordMatcher {
    fn new(patterns: Vec<Vec<String>>) -> Self {
        let mut by_first: HashMap<String, Vec<usize>> = HashMap::new();
        for (i, p) in patterns.iter().enumerate() {
            by_first.entry(p[0].clone()).or_default().push(i);
        }
        WordMatcher { patterns, by_first }
    }

    /// Marks `hit[i]` for every pattern present in `tokens`.
    fn find(&self, tokens: &[String], hit: &mut [bool]) {
        for (pos, tok) in tokens.iter().enumerate() {
            let Some(cands) = self.by_first.get(tok) else {
                continue;
            };
            for &i in cands {
                let p = &self.patterns[i];
                if !hit[i] && tokens.len() - pos >= p.len() && tokens[pos..pos + p.len()] == p[..] {
                    hit[i] = true;
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorpusFormat {
    Lines,
    Csv,
}

/// One unit of corpus input: a decoded caption, or a line that could not be
/// decoded and is only counted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CorpusRecord {
    Caption(String),
    Skipped,
}

#[derive(Debug, Clone)]
pub struct Scanner {
    words: Vec<String>,
    matcher: WordMatcher,
    lexicon: PronounLexicon,
    tokenizer: Tokenizer,
    workers: Option<usize>,
}

impl Scanner {
    /// Words are lowercased and deduplicated, keeping first-seen order.
    pub fn new<S: AsRef<str>>(words: &[S], lexicon: PronounLexicon) -> Result<Self> {
        Scanner::with_tokenizer(words, lexicon, Tokenizer::default())
    }

    pub fn with_tokenizer<S: AsRef<str>>(
        words: &[S],
        lexicon: PronounLexicon,
        tokenizer: Tokenizer,
    ) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::Domain("no words to scan for".into()));
        }
        let mut seen = BTreeSet::new();
        let mut kept = Vec::new();
        let mut patterns = Vec::new();
        for w in words {
            let w = w.as_ref().trim().to_lowercase();
            if !seen.insert(w.clone()) {
                continue;
            }
            let toks = tokenizer.tokenize(&w);
            if toks.is_empty() {
                return Err(Error::Domain(format!("word {w:?} has no tokens")));
            }
            kept.push(w);
            patterns.push(toks);
        }
        Ok(Scanner {
            words: kept,
            matcher: WordMatcher::new(patterns),
            lexicon,
            tokenizer,
            workers: None,
        })
    }

    /// Number of worker threads; `None` uses the ambient rayon pool.
    pub fn workers(mut self, workers: Option<usize>) -> Self {
        self.workers = workers;
        self
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    fn count_caption(&self, caption: &str, counts: &mut [WordCounts], hit: &mut [bool]) {
        let tokens = self.tokenizer.tokenize(caption);
        let gender = assign_gender_tokens(&tokens, &self.lexicon);
        if gender == GenderAssignment::None {
            return;
        }
        hit.iter_mut().for_each(|h| *h = false);
        self.matcher.find(&tokens, hit);
        for (c, &h) in counts.iter_mut().zip(hit.iter()) {
            if h {
                c.record(gender);
            }
        }
    }

    fn count_batch(&self, batch: &[String]) -> Vec<WordCounts> {
        let n = self.words.len();
        batch
            .par_chunks(WORKER_CHUNK)
            .map(|chunk| {
                let mut counts = vec![WordCounts::default(); n];
                let mut hit = vec![false; n];
                for caption in chunk {
                    self.count_caption(caption, &mut counts, &mut hit);
                }
                counts
            })
            .reduce(
                || vec![WordCounts::default(); n],
                |mut a, b| {
                    a.iter_mut().zip(&b).for_each(|(x, y)| x.add(y));
                    a
                },
            )
    }

    /// Scans a stream of records. The first `Err` aborts the scan.
    pub fn scan<I>(&self, records: I) -> Result<CorpusStats>
    where
        I: IntoIterator<Item = Result<CorpusRecord>>,
    {
        let pool = match self.workers {
            Some(n) => Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(n.max(1))
                    .build()
                    .map_err(|e| Error::State(format!("thread pool: {e}")))?,
            ),
            None => None,
        };
        let count = |batch: &[String]| match &pool {
            Some(p) => p.install(|| self.count_batch(batch)),
            None => self.count_batch(batch),
        };

        let mut totals = vec![WordCounts::default(); self.words.len()];
        let mut scanned = 0u64;
        let mut skipped = 0u64;
        let mut batch = Vec::with_capacity(BATCH_LINES);
        for rec in records {
            scanned += 1;
            match rec? {
                CorpusRecord::Caption(c) => batch.push(c),
                CorpusRecord::Skipped => skipped += 1,
            }
            if batch.len() == BATCH_LINES {
                let part = count(&batch);
                totals.iter_mut().zip(&part).for_each(|(t, p)| t.add(p));
                batch.clear();
            }
        }
        let part = count(&batch);
        totals.iter_mut().zip(&part).for_each(|(t, p)| t.add(p));
        Ok(CorpusStats {
            per_word: self.words.iter().cloned().zip(totals).collect(),
            captions_scanned: scanned,
            skipped_lines: skipped,
        })
    }

    pub fn scan_captions<S: AsRef<str>>(&self, captions: &[S]) -> Result<CorpusStats> {
        self.scan(
            captions
                .iter()
                .map(|c| Ok(CorpusRecord::Caption(c.as_ref().to_string()))),
        )
    }
}

/// Scans an in-memory caption list with default settings.
pub fn scan<S: AsRef<str>, W: AsRef<str>>(
    corpus: &[S],
    words: &[W],
    lexicon: &PronounLexicon,
) -> Result<CorpusStats> {
    Scanner::new(words, lexicon.clone())?.scan_captions(corpus)
}

/// Wraps a reader, transparently gunzipping when it starts with the gzip
/// magic bytes.
pub fn maybe_gunzip<R: Read + Send + 'static>(reader: R) -> Result<Box<dyn BufRead + Send>> {
    let mut buf = BufReader::new(reader);
    let head = buf
        .fill_buf()
        .map_err(|e| Error::Format(format!("reading corpus: {e}")))?;
    if head.starts_with(&GZIP_MAGIC) {
        Ok(Box::new(BufReader::new(MultiGzDecoder::new(buf))))
    } else {
        Ok(Box::new(buf))
    }
}

fn container_error(e: std::io::Error) -> Error {
    Error::Format(format!("corpus stream is malformed: {e}"))
}

/// Newline-delimited captions. Lines that are not UTF-8 become
/// [`CorpusRecord::Skipped`]; a trailing `\r` is dropped.
pub fn line_records<R: BufRead>(mut reader: R) -> impl Iterator<Item = Result<CorpusRecord>> {
    let mut buf = Vec::new();
    let mut done = false;
    std::iter::from_fn(move || {
        if done {
            return None;
        }
        buf.clear();
        match reader.read_until(b'\n', &mut buf) {
            Ok(0) => None,
            Ok(_) => {
                if buf.last() == Some(&b'\n') {
                    buf.pop();
                }
                if buf.last() == Some(&b'\r') {
                    buf.pop();
                }
                Some(Ok(match std::str::from_utf8(&buf) {
                    Ok(s) => CorpusRecord::Caption(s.to_string()),
                    Err(_) => CorpusRecord::Skipped,
                }))
            }
            Err(e) => {
                done = true;
                Some(Err(container_error(e)))
            }
        }
    })
}

/// Captions from one named column of a headed CSV stream. Rows missing the
/// column or holding invalid UTF-8 there are skipped.
pub fn csv_records<R: Read>(
    reader: R,
    column: &str,
) -> Result<impl Iterator<Item = Result<CorpusRecord>>> {
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let headers = rdr.byte_headers().map_err(csv_error)?.clone();
    let col = headers
        .iter()
        .position(|h| h == column.as_bytes())
        .ok_or_else(|| Error::Format(format!("CSV has no column {column:?}")))?;
    let mut rows = rdr.into_byte_records();
    let mut done = false;
    Ok(std::iter::from_fn(move || {
        if done {
            return None;
        }
        match rows.next()? {
            Ok(row) => Some(Ok(match row.get(col).map(std::str::from_utf8) {
                Some(Ok(s)) => CorpusRecord::Caption(s.to_string()),
                _ => CorpusRecord::Skipped,
            })),
            Err(e) if matches!(e.kind(), csv::ErrorKind::Io(_)) => {
                done = true;
                Some(Err(csv_error(e)))
            }
            Err(_) => Some(Ok(CorpusRecord::Skipped)),
        }
    }))
}

fn csv_error(e: csv::Error) -> Error {
    Error::Format(format!("corpus CSV: {e}"))
}

/// Opens a corpus file in the given format, with gzip auto-detection.
pub fn open_corpus(
    path: &Path,
    format: CorpusFormat,
    caption_column: &str,
) -> Result<Box<dyn Iterator<Item = Result<CorpusRecord>> + Send>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = maybe_gunzip(file)?;
    Ok(match format {
        CorpusFormat::Lines => Box::new(line_records(reader)),
        CorpusFormat::Csv => Box::new(csv_records(reader, caption_column)?),
    })
}

/// One row of the gender-proportion table. Percentages are over male plus
/// female captions only and rounded to one decimal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProportionRow {
    pub word: String,
    pub male_pct: Option<f64>,
    pub female_pct: Option<f64>,
    pub male_count: u64,
    pub female_count: u64,
    pub mixed_count: u64,
    pub total_matched: u64,
}

pub fn proportions(stats: &CorpusStats) -> Vec<ProportionRow> {
    stats
        .per_word
        .iter()
        .map(|(word, c)| {
            let denom = c.male_count + c.female_count;
            let pct = |n: u64| (denom > 0).then(|| round1(100.0 * n as f64 / denom as f64));
            ProportionRow {
                word: word.clone(),
                male_pct: pct(c.male_count),
                female_pct: pct(c.female_count),
                male_count: c.male_count,
                female_count: c.female_count,
                mixed_count: c.mixed_count,
                total_matched: c.total_matched,
            }
        })
        .collect()
}

fn round1(x: f64) -> f64 {
    (x * 10.0).round() / 10.0
}
