//! Corpus ingestion from `TERM<TAB>SENTENCE<TAB>SCORE` rows.
//!
//! GenericsKB Best ships five columns (SOURCE, TERM, QUANTIFIER, GENERIC
//! SENTENCE, SCORE); keep TERM, GENERIC SENTENCE and SCORE in that order to
//! obtain this format, e.g. `cut -f2,4,5`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::text::{extract_concepts, normalize_term, tokenize};
use super::{ConceptId, KbError, KnowledgeIndex, KnowledgeSentence, SentenceId};
use crate::providers::fnv1a64;

/// Warnings retained in the report; the skip count is always exact.
const MAX_KEPT_WARNINGS: usize = 100;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestConfig {
    /// Stop after this many data rows; `None` reads the whole file.
    pub max_rows: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct IngestReport {
    pub rows_read: usize,
    pub accepted: usize,
    pub duplicates: usize,
    pub skipped: usize,
    pub header_detected: bool,
    pub warnings: Vec<String>,
}

impl IngestReport {
    fn warn(&mut self, location: impl std::fmt::Display, message: impl Into<String>) {
        self.skipped += 1;
        let message = format!("{location}: {}", message.into());
        log::warn!("{message}");
        if self.warnings.len() < MAX_KEPT_WARNINGS {
            self.warnings.push(message);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawRow {
    pub term: String,
    pub sentence: String,
    pub score: f64,
}

pub fn ingest_corpus(
    path: &Path,
    config: &IngestConfig,
) -> Result<(KnowledgeIndex, IngestReport), KbError> {
    let file = File::open(path)?;
    ingest_reader(BufReader::with_capacity(1 << 20, file), config)
}

pub fn ingest_reader<R: BufRead>(
    mut reader: R,
    config: &IngestConfig,
) -> Result<(KnowledgeIndex, IngestReport), KbError> {
    let mut report = IngestReport::default();
    let mut rows = Vec::new();
    let mut line = String::new();
    let mut lineno = 0usize;
    loop {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            break;
        }
        lineno += 1;
        let trimmed = line.trim_end_matches(['\n', '\r']);
        if trimmed.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if lineno == 1 && fields.len() == 3 && fields[2].trim().parse::<f64>().is_err() {
            report.header_detected = true;
            continue;
        }
        if config.max_rows.is_some_and(|max| report.rows_read >= max) {
            break;
        }
        report.rows_read += 1;
        match parse_row(&fields) {
            Ok(row) => rows.push(row),
            Err(msg) => report.warn(format_args!("line {lineno}"), msg),
        }
    }
    let (index, built) = index_rows_with_report(rows, report)?;
    Ok((index, built))
}

fn parse_row(fields: &[&str]) -> Result<RawRow, String> {
    let [term, sentence, score] = fields else {
        return Err(format!("expected 3 tab-separated fields, found {}", fields.len()));
    };
    let score: f64 = score
        .trim()
        .parse()
        .map_err(|_| format!("score {score:?} is not a number"))?;
    if !(0.0..=1.0).contains(&score) {
        return Err(format!("score {score} outside [0, 1]"));
    }
    if normalize_term(term).is_empty() {
        return Err("term has no word characters".into());
    }
    if tokenize(sentence).is_empty() {
        return Err("sentence has no tokens".into());
    }
    Ok(RawRow {
        term: (*term).to_owned(),
        sentence: sentence.trim().to_owned(),
        score,
    })
}

/// Builds an index from already-parsed rows, with the same dedup and
/// validation as file ingestion.
pub fn index_rows<I>(rows: I) -> Result<(KnowledgeIndex, IngestReport), KbError>
where
    I: IntoIterator<Item = RawRow>,
{
    let rows: Vec<RawRow> = rows.into_iter().collect();
    let report = IngestReport {
        rows_read: rows.len(),
        ..Default::default()
    };
    index_rows_with_report(rows, report)
}

fn index_rows_with_report(
    rows: Vec<RawRow>,
    mut report: IngestReport,
) -> Result<(KnowledgeIndex, IngestReport), KbError> {
    // dedup on (normalized term, sentence); first occurrence keeps its position
    let mut kept: Vec<(String, RawRow)> = Vec::with_capacity(rows.len());
    let mut by_hash: HashMap<u64, Vec<usize>> = HashMap::with_capacity(rows.len());
    for (i, row) in rows.into_iter().enumerate() {
        let term = normalize_term(&row.term);
        if term.is_empty() {
            report.warn(format_args!("row {}", i + 1), "term has no word characters");
            continue;
        }
        if row.sentence.is_empty() || tokenize(&row.sentence).is_empty() {
            report.warn(format_args!("row {}", i + 1), "sentence has no tokens");
            continue;
        }
        let mut key = Vec::with_capacity(term.len() + row.sentence.len() + 1);
        key.extend_from_slice(term.as_bytes());
        key.push(b'\t');
        key.extend_from_slice(row.sentence.as_bytes());
        let slot = by_hash.entry(fnv1a64(&key)).or_default();
        if let Some(&existing) = slot
            .iter()
            .find(|&&j| kept[j].0 == term && kept[j].1.sentence == row.sentence)
        {
            report.duplicates += 1;
            if row.score > kept[existing].1.score {
                kept[existing].1.score = row.score;
            }
            continue;
        }
        slot.push(kept.len());
        kept.push((term, row));
    }
    drop(by_hash);
    if kept.is_empty() {
        return Err(KbError::EmptyCorpus {
            skipped: report.skipped,
        });
    }
    report.accepted = kept.len();

    let mut surfaces: Vec<String> = Vec::new();
    let mut surface_ids: HashMap<String, ConceptId> = HashMap::new();
    let mut intern = |s: String, surfaces: &mut Vec<String>| -> ConceptId {
        if let Some(&id) = surface_ids.get(&s) {
            return id;
        }
        let id = ConceptId(surfaces.len() as u32);
        surfaces.push(s.clone());
        surface_ids.insert(s, id);
        id
    };
    let mut sentences = Vec::with_capacity(kept.len());
    for (i, (term, row)) in kept.into_iter().enumerate() {
        let mut concepts = vec![intern(term.clone(), &mut surfaces)];
        for surface in extract_concepts(&row.sentence) {
            let id = intern(surface, &mut surfaces);
            if !concepts.contains(&id) {
                concepts.push(id);
            }
        }
        let token_count = tokenize(&row.sentence).len();
        sentences.push(KnowledgeSentence {
            id: SentenceId(i as u32),
            text: row.sentence,
            source_term: term,
            score: row.score,
            concepts,
            token_count,
        });
    }
    Ok((KnowledgeIndex::from_parts(sentences, surfaces), report))
}
