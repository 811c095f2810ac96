//! Line-delimited text snapshot of a built index.
//!
//! ```text
//! KBWALK-IDX v1
//! counts<TAB>sentences<TAB>concepts<TAB>groups
//! S<TAB>id<TAB>score<TAB>token_count<TAB>term<TAB>concept,ids<TAB>text
//! C<TAB>id<TAB>group<TAB>surface
//! G<TAB>id<TAB>member,ids
//! ```
//!
//! Free-text fields escape `\`, tab, CR and LF with backslash sequences.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{ConceptId, GroupId, KbError, KnowledgeIndex, KnowledgeSentence, SentenceId};

pub const INDEX_MAGIC: &str = "KBWALK-IDX v1";

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> Result<String, String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(ch) = chars.next() {
        if ch != '\\' {
            out.push(ch);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            other => return Err(format!("bad escape \\{}", other.map(String::from).unwrap_or_default())),
        }
    }
    Ok(out)
}

fn join_ids(ids: impl Iterator<Item = u32>) -> String {
    ids.map(|i| i.to_string()).collect::<Vec<_>>().join(",")
}

fn parse_ids(s: &str) -> Result<Vec<u32>, String> {
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|x| x.parse::<u32>().map_err(|e| format!("bad id {x:?}: {e}")))
        .collect()
}

impl KnowledgeIndex {
    pub fn write_snapshot<W: Write>(&self, mut w: W) -> Result<(), KbError> {
        writeln!(w, "{INDEX_MAGIC}")?;
        writeln!(
            w,
            "counts\t{}\t{}\t{}",
            self.sentences.len(),
            self.concepts.len(),
            self.groups.len()
        )?;
        for s in &self.sentences {
            writeln!(
                w,
                "S\t{}\t{}\t{}\t{}\t{}\t{}",
                s.id.0,
                s.score,
                s.token_count,
                escape(&s.source_term),
                join_ids(s.concepts.iter().map(|c| c.0)),
                escape(&s.text)
            )?;
        }
        for c in &self.concepts {
            writeln!(w, "C\t{}\t{}\t{}", c.id.0, c.group_id.0, escape(&c.surface))?;
        }
        for g in &self.groups {
            writeln!(w, "G\t{}\t{}", g.id.0, join_ids(g.member_concepts.iter().map(|c| c.0)))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), KbError> {
        self.write_snapshot(BufWriter::with_capacity(1 << 20, File::create(path)?))
    }

    pub fn load(path: &Path) -> Result<Self, KbError> {
        Self::read_snapshot(BufReader::with_capacity(1 << 20, File::open(path)?))
    }

    pub fn read_snapshot<R: BufRead>(reader: R) -> Result<Self, KbError> {
        let mut lines = reader.lines().enumerate();
        let mut next = |what: &str| -> Result<(usize, String), KbError> {
            match lines.next() {
                Some((i, line)) => Ok((i + 1, line?)),
                None => Err(KbError::Snapshot {
                    line: 0,
                    message: format!("unexpected end of snapshot, expected {what}"),
                }),
            }
        };
        let bad = |line: usize, message: String| KbError::Snapshot { line, message };

        let (_, header) = next("header")?;
        if header != INDEX_MAGIC {
            return Err(bad(1, format!("expected {INDEX_MAGIC:?}, got {header:?}")));
        }
        let (ln, counts) = next("counts")?;
        let counts: Vec<usize> = counts
            .strip_prefix("counts\t")
            .map(|rest| rest.split('\t').filter_map(|x| x.parse().ok()).collect())
            .unwrap_or_default();
        let [n_sentences, n_concepts, n_groups] = counts[..] else {
            return Err(bad(ln, "malformed counts line".into()));
        };

        let mut sentences = Vec::with_capacity(n_sentences);
        for i in 0..n_sentences {
            let (ln, line) = next("sentence")?;
            let f: Vec<&str> = line.splitn(7, '\t').collect();
            if f.len() != 7 || f[0] != "S" {
                return Err(bad(ln, "expected sentence record".into()));
            }
            let parse = || -> Result<KnowledgeSentence, String> {
                let id: u32 = f[1].parse().map_err(|e| format!("{e}"))?;
                if id as usize != i {
                    return Err(format!("sentence id {id} out of order"));
                }
                let concepts: Vec<ConceptId> = parse_ids(f[5])?.into_iter().map(ConceptId).collect();
                if concepts.is_empty() || concepts.iter().any(|c| c.index() >= n_concepts) {
                    return Err("concept list empty or out of range".into());
                }
                Ok(KnowledgeSentence {
                    id: SentenceId(id),
                    score: f[2].parse().map_err(|e| format!("{e}"))?,
                    token_count: f[3].parse().map_err(|e| format!("{e}"))?,
                    source_term: unescape(f[4])?,
                    concepts,
                    text: unescape(f[6])?,
                })
            };
            sentences.push(parse().map_err(|m| bad(ln, m))?);
        }

        let mut surfaces = Vec::with_capacity(n_concepts);
        let mut concept_groups = Vec::with_capacity(n_concepts);
        for i in 0..n_concepts {
            let (ln, line) = next("concept")?;
            let f: Vec<&str> = line.splitn(4, '\t').collect();
            if f.len() != 4 || f[0] != "C" || f[1].parse::<usize>().ok() != Some(i) {
                return Err(bad(ln, "expected concept record in id order".into()));
            }
            let group: u32 = f[2].parse().map_err(|e| bad(ln, format!("{e}")))?;
            concept_groups.push(GroupId(group));
            surfaces.push(unescape(f[3]).map_err(|m| bad(ln, m))?);
        }

        let mut partition = Vec::with_capacity(n_groups);
        let mut seen = vec![false; n_concepts];
        for g in 0..n_groups {
            let (ln, line) = next("group")?;
            let f: Vec<&str> = line.splitn(3, '\t').collect();
            if f.len() != 3 || f[0] != "G" || f[1].parse::<usize>().ok() != Some(g) {
                return Err(bad(ln, "expected group record in id order".into()));
            }
            let members: Vec<ConceptId> =
                parse_ids(f[2]).map_err(|m| bad(ln, m))?.into_iter().map(ConceptId).collect();
            for c in &members {
                if c.index() >= n_concepts || seen[c.index()] || concept_groups[c.index()].index() != g {
                    return Err(bad(ln, format!("group {g} breaks the partition at concept {c}")));
                }
                seen[c.index()] = true;
            }
            partition.push(members);
        }
        if let Some(c) = seen.iter().position(|s| !s) {
            return Err(bad(0, format!("concept n{c} belongs to no group")));
        }

        let mut index = KnowledgeIndex::from_parts(sentences, surfaces);
        index.set_groups(partition);
        Ok(index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kb::tests::tiny_index;
    use crate::kb::{build_node_groups, index_rows, RawRow};
    use crate::providers::StubEmbedder;

    #[test]
    fn round_trip_preserves_index() {
        let idx = tiny_index(&[("tree", "Trees produce oxygen."), ("ice cream", "Ice cream\tmelts\\fast.")]);
        let idx = build_node_groups(idx, &StubEmbedder::default(), 0.6).unwrap();
        let mut buf = Vec::new();
        idx.write_snapshot(&mut buf).unwrap();
        assert!(buf.starts_with(b"KBWALK-IDX v1\n"));
        let back = KnowledgeIndex::read_snapshot(&buf[..]).unwrap();
        assert_eq!(back, idx);
        let mut again = Vec::new();
        back.write_snapshot(&mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn escapes_round_trip() {
        for s in ["plain", "tab\there", "nl\nand\\slash", "\\t literal"] {
            assert_eq!(unescape(&escape(s)).unwrap(), s);
        }
        assert!(unescape("bad\\x").is_err());
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        assert!(KnowledgeIndex::read_snapshot(&b"KBWALK-IDX v2\n"[..]).is_err());
        let (idx, _) = index_rows([RawRow {
            term: "a1".into(),
            sentence: "alpha".into(),
            score: 0.5,
        }])
        .unwrap();
        let mut buf = Vec::new();
        idx.write_snapshot(&mut buf).unwrap();
        let cut = &buf[..buf.len() - 5];
        assert!(KnowledgeIndex::read_snapshot(cut).is_err());
    }
}
