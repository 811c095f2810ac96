//! Precomputed vectors keyed by the SHA-256 of their text.
//!
//! ```text
//! KBWALK-VEC v1 <dim>
//! <sha256 hex><TAB><f>,<f>,...
//! ```

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use sha2::{Digest, Sha256};

use super::{require_non_empty, EmbeddingProvider, Provenance, ProviderError, ProviderVector};

pub const VECTOR_STORE_MAGIC: &str = "KBWALK-VEC v1";

/// Lowercase hex SHA-256 of `text`, the store's lookup key.
pub fn text_key(text: &str) -> String {
    Sha256::digest(text.as_bytes())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[derive(Debug, Clone)]
pub struct FileVectorStore {
    id: String,
    dim: usize,
    vectors: HashMap<String, ProviderVector>,
}

impl FileVectorStore {
    /// Builds an in-memory store from `(text, raw vector)` pairs.
    pub fn from_texts<I, S>(dim: usize, entries: I) -> Result<Self, ProviderError>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: AsRef<str>,
    {
        let mut vectors = HashMap::new();
        for (text, raw) in entries {
            if raw.len() != dim {
                return Err(ProviderError::InvalidInput(format!(
                    "vector for {:?} has dimension {}, expected {dim}",
                    text.as_ref(),
                    raw.len()
                )));
            }
            let v = ProviderVector::normalized(raw, Provenance::File)?;
            vectors.insert(text_key(text.as_ref()), v);
        }
        Ok(Self {
            id: format!("file-{dim}"),
            dim,
            vectors,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let display = path.display().to_string();
        let bad = |line: usize, message: String| ProviderError::Format {
            path: display.clone(),
            line,
            message,
        };
        let reader = BufReader::new(File::open(path)?);
        let mut lines = reader.lines();
        let header = lines
            .next()
            .ok_or_else(|| bad(1, "missing header".into()))??;
        let dim: usize = header
            .strip_prefix(VECTOR_STORE_MAGIC)
            .map(str::trim)
            .and_then(|d| d.parse().ok())
            .filter(|&d| d > 0)
            .ok_or_else(|| bad(1, format!("expected `{VECTOR_STORE_MAGIC} <dim>`, got {header:?}")))?;

        let mut vectors = HashMap::new();
        for (i, line) in lines.enumerate() {
            let lineno = i + 2;
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (key, body) = line
                .split_once('\t')
                .ok_or_else(|| bad(lineno, "missing tab separator".into()))?;
            if key.len() != 64 || !key.bytes().all(|b| b.is_ascii_hexdigit()) {
                return Err(bad(lineno, format!("bad key {key:?}")));
            }
            let raw = body
                .split(',')
                .map(|f| f.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| bad(lineno, e.to_string()))?;
            if raw.len() != dim {
                return Err(bad(lineno, format!("dimension {} != {dim}", raw.len())));
            }
            let v = ProviderVector::normalized(raw, Provenance::File)
                .map_err(|e| bad(lineno, e.to_string()))?;
            vectors.insert(key.to_ascii_lowercase(), v);
        }
        Ok(Self {
            id: format!("file:{display}"),
            dim,
            vectors,
        })
    }

    /// Writes the store with keys in sorted order.
    pub fn save(&self, path: &Path) -> Result<(), ProviderError> {
        let mut w = BufWriter::new(File::create(path)?);
        writeln!(w, "{VECTOR_STORE_MAGIC} {}", self.dim)?;
        let mut keys: Vec<&String> = self.vectors.keys().collect();
        keys.sort();
        for key in keys {
            let body: Vec<String> = self.vectors[key].values().iter().map(f64::to_string).collect();
            writeln!(w, "{key}\t{}", body.join(","))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn into_shared(self) -> Arc<dyn EmbeddingProvider> {
        Arc::new(self)
    }
}

impl EmbeddingProvider for FileVectorStore {
    fn id(&self) -> &str {
        &self.id
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<ProviderVector>, ProviderError> {
        require_non_empty(texts)?;
        texts
            .iter()
            .map(|t| {
                let key = text_key(t);
                self.vectors
                    .get(&key)
                    .cloned()
                    .ok_or_else(|| ProviderError::MissingKey {
                        text: (*t).to_owned(),
                        key,
                    })
            })
            .collect()
    }
}
