//! Persistence for ingested documents.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use thiserror::Error;

use crate::document::{parse_structured_document, DocumentError, StructuredDocument};

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("document `{0}` not found")]
    NotFound(String),
    #[error("document `{0}` already exists (use --force to replace it)")]
    Exists(String),
    #[error("stored document `{doc_id}` is invalid: {source}")]
    Corrupt {
        doc_id: String,
        #[source]
        source: DocumentError,
    },
    #[error("store I/O error: {0}")]
    Io(#[from] std::io::Error),
}

/// Read access to ingested documents.
pub trait DocumentSource: Send + Sync {
    fn get(&self, doc_id: &str) -> Result<Arc<StructuredDocument>, StoreError>;
}

#[derive(Default)]
pub struct MemoryStore {
    docs: RwLock<BTreeMap<String, Arc<StructuredDocument>>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&self, doc: StructuredDocument) {
        self.docs
            .write()
            .expect("store lock poisoned")
            .insert(doc.doc_id.clone(), Arc::new(doc));
    }

    pub fn with(self, doc: StructuredDocument) -> Self {
        self.insert(doc);
        self
    }
}

impl DocumentSource for MemoryStore {
    fn get(&self, doc_id: &str) -> Result<Arc<StructuredDocument>, StoreError> {
        self.docs
            .read()
            .expect("store lock poisoned")
            .get(doc_id)
            .cloned()
            .ok_or_else(|| StoreError::NotFound(doc_id.to_string()))
    }
}

/// A directory holding one canonical JSON file per document.
#[derive(Debug, Clone)]
pub struct DocumentStore {
    root: PathBuf,
}

impl DocumentStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// File name for a doc id: safe characters kept, everything else
    /// percent-encoded so distinct ids never collide.
    fn path_for(&self, doc_id: &str) -> PathBuf {
        let mut name = String::with_capacity(doc_id.len() + 5);
        for b in doc_id.bytes() {
            if b.is_ascii_alphanumeric() || b == b'-' || b == b'_' {
                name.push(b as char);
            } else {
                name.push_str(&format!("%{b:02X}"));
            }
        }
        name.push_str(".json");
        self.root.join(name)
    }

    pub fn contains(&self, doc_id: &str) -> bool {
        self.path_for(doc_id).exists()
    }

    /// Writes the document in canonical form. Refuses to replace an existing
    /// document unless `force` is set.
    pub fn save(&self, doc: &StructuredDocument, force: bool) -> Result<PathBuf, StoreError> {
        let path = self.path_for(&doc.doc_id);
        if path.exists() && !force {
            return Err(StoreError::Exists(doc.doc_id.clone()));
        }
        let mut body =
            serde_json::to_string_pretty(&doc.to_input()).expect("documents always serialize");
        body.push('\n');
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, body)?;
        std::fs::rename(&tmp, &path)?;
        Ok(path)
    }
}

impl DocumentSource for DocumentStore {
    fn get(&self, doc_id: &str) -> Result<Arc<StructuredDocument>, StoreError> {
        let path = self.path_for(doc_id);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                return Err(StoreError::NotFound(doc_id.to_string()))
            }
            Err(e) => return Err(e.into()),
        };
        let doc = parse_structured_document(&text).map_err(|source| StoreError::Corrupt {
            doc_id: doc_id.to_string(),
            source,
        })?;
        Ok(Arc::new(doc))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::document::{ElementInput, ElementKind};

    fn doc(id: &str) -> StructuredDocument {
        StructuredDocument::new(
            id,
            vec![
                ElementInput::new("a", ElementKind::Table, "x").with_label("EPS"),
                ElementInput::new("b", ElementKind::Paragraph, "y").with_parent("a"),
            ],
        )
        .unwrap()
    }

    #[test]
    fn round_trip_and_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let store = DocumentStore::open(dir.path()).unwrap();
        store.save(&doc("10-K/2023 filing"), false).unwrap();
        assert_eq!(
            *store.get("10-K/2023 filing").unwrap(),
            doc("10-K/2023 filing")
        );
        assert!(matches!(
            store.save(&doc("10-K/2023 filing"), false),
            Err(StoreError::Exists(_))
        ));
        store.save(&doc("10-K/2023 filing"), true).unwrap();
        assert!(matches!(store.get("missing"), Err(StoreError::NotFound(_))));
    }

    #[test]
    fn canonical_bytes_are_stable() {
        let dir = tempfile::tempdir().unwrap();
        let store = DocumentStore::open(dir.path()).unwrap();
        let p = store.save(&doc("d"), false).unwrap();
        let first = std::fs::read(&p).unwrap();
        let reloaded = store.get("d").unwrap();
        store.save(&reloaded, true).unwrap();
        assert_eq!(first, std::fs::read(&p).unwrap());
    }

    #[test]
    fn file_names_do_not_collide() {
        let store = DocumentStore {
            root: PathBuf::from("/s"),
        };
        assert_ne!(store.path_for("a/b"), store.path_for("a_b"));
        assert_ne!(store.path_for("a.b"), store.path_for("a%2Eb"));
    }
}
