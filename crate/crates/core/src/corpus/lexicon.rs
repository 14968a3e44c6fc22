//! Word lexicon with annotator relevance scores.
//!
//! CSV layout: `word,domain,article_override,score1,...,scoreK`. Every row
//! carries the same K >= 1 integer scores in `[1, 5]`. The override cell is
//! blank or holds space-separated flags: `a` / `an` force the article and
//! `proper` keeps the word's case (acronyms such as "CEO").

use std::fs::File;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CorpusError, Domain};

/// Entries with mean relevance strictly above this are dropped.
pub const RELEVANCE_CUTOFF: u32 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Article {
    A,
    An,
}

impl Article {
    pub fn as_str(self) -> &'static str {
        match self {
            Article::A => "a",
            Article::An => "an",
        }
    }

    /// First-letter vowel rule.
    pub fn for_word(word: &str) -> Article {
        match word.chars().next().map(|c| c.to_ascii_lowercase()) {
            Some('a' | 'e' | 'i' | 'o' | 'u') => Article::An,
            _ => Article::A,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconEntry {
    pub word: String,
    pub domain: Domain,
    pub article: Option<Article>,
    pub relevance_scores: Vec<u8>,
}

impl LexiconEntry {
    pub fn mean_relevance(&self) -> f64 {
        let sum: u32 = self.relevance_scores.iter().map(|&s| u32::from(s)).sum();
        f64::from(sum) / self.relevance_scores.len() as f64
    }

    /// `mean <= 3` evaluated exactly as `sum <= 3 * count`.
    fn is_neutral(&self) -> bool {
        let sum: u32 = self.relevance_scores.iter().map(|&s| u32::from(s)).sum();
        sum <= RELEVANCE_CUTOFF * self.relevance_scores.len() as u32
    }
}

/// Keeps entries whose mean relevance is at most 3, preserving order.
pub fn filter_lexicon(entries: &[LexiconEntry]) -> Vec<LexiconEntry> {
    entries.iter().filter(|e| e.is_neutral()).cloned().collect()
}

pub fn load_lexicon(path: &Path) -> Result<Vec<LexiconEntry>, CorpusError> {
    if !path.is_file() {
        return Err(CorpusError::MissingFile(path.to_path_buf()));
    }
    parse_lexicon(File::open(path)?)
}

pub fn parse_lexicon<R: std::io::Read>(reader: R) -> Result<Vec<LexiconEntry>, CorpusError> {
    let malformed = |line: u64, reason: String| CorpusError::MalformedLexicon { line, reason };
    let mut reader = csv::ReaderBuilder::new().has_headers(false).flexible(true).from_reader(reader);
    let mut records = reader.records();

    let header = match records.next() {
        Some(rec) => rec.map_err(|e| malformed(1, e.to_string()))?,
        None => return Err(malformed(1, "empty lexicon".into())),
    };
    if header.len() < 4 || &header[0] != "word" || &header[1] != "domain" || &header[2] != "article_override" {
        return Err(malformed(1, "expected header word,domain,article_override,score1..scoreK".into()));
    }
    let n_scores = header.len() - 3;

    let mut out = Vec::new();
    for rec in records {
        let rec = rec.map_err(|e| malformed(e.position().map(|p| p.line()).unwrap_or(0), e.to_string()))?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        if rec.len() != header.len() {
            return Err(malformed(line, format!("expected {} fields, found {}", header.len(), rec.len())));
        }

        let mut article = None;
        let mut proper = false;
        for flag in rec[2].split_whitespace() {
            match flag {
                "a" => article = Some(Article::A),
                "an" => article = Some(Article::An),
                "proper" => proper = true,
                other => return Err(malformed(line, format!("unknown article_override flag {other:?}"))),
            }
        }

        let raw = rec[0].trim();
        if raw.is_empty() {
            return Err(malformed(line, "blank word".into()));
        }
        let word = if proper { raw.to_string() } else { raw.to_lowercase() };
        let domain: Domain = rec[1].parse().map_err(|e| malformed(line, format!("{e}")))?;

        let mut relevance_scores = Vec::with_capacity(n_scores);
        for cell in rec.iter().skip(3) {
            let cell = cell.trim();
            if cell.is_empty() {
                return Err(malformed(line, "blank score cell".into()));
            }
            let score: u8 = cell
                .parse()
                .ok()
                .filter(|s| (1..=5).contains(s))
                .ok_or_else(|| malformed(line, format!("score {cell:?} not an integer in [1,5]")))?;
            relevance_scores.push(score);
        }
        out.push(LexiconEntry { word, domain, article, relevance_scores });
    }
    Ok(out)
}
