use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved per-utterance key holding the optional transcript.
pub const TRANSCRIPT_KEY: &str = "transcript";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct UtteranceEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
    /// View name to feature file path, relative to the manifest directory.
    #[serde(flatten)]
    pub paths: BTreeMap<String, String>,
}

/// Index of feature files per utterance and view.
///
/// JSON layout:
/// `{"views": [...], "utterances": {"<id>": {"<view>": "<path>", "transcript": "..."}}}`
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub views: Vec<String>,
    pub utterances: BTreeMap<String, UtteranceEntry>,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub root: PathBuf,
}

impl Manifest {
    /// Parses and validates a manifest without touching the referenced files.
    pub fn from_json(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut m: Manifest =
            serde_json::from_str(text).map_err(|e| Error::Manifest(format!("parse: {e}")))?;
        m.root = root.into();
        m.validate_structure()?;
        Ok(m)
    }

    /// Loads a manifest and checks that every referenced file exists.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let m = Self::from_json(&text, root)?;
        m.validate_paths()?;
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    fn validate_structure(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for v in &self.views {
            if v.is_empty() || v == TRANSCRIPT_KEY {
                return Err(Error::Manifest(format!("invalid view name {v:?}")));
            }
            if !seen.insert(v.as_str()) {
                return Err(Error::Manifest(format!("duplicate view name {v:?}")));
            }
        }
        for (id, entry) in &self.utterances {
            for view in entry.paths.keys() {
                if !seen.contains(view.as_str()) {
                    return Err(Error::Manifest(format!(
                        "utterance {id:?} references undeclared view {view:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn validate_paths(&self) -> Result<()> {
        for (id, entry) in &self.utterances {
            for (view, rel) in &entry.paths {
                let p = self.root.join(rel);
                if !p.is_file() {
                    return Err(Error::Manifest(format!(
                        "utterance {id:?} view {view:?}: missing file {}",
                        p.display()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn has_view(&self, view: &str) -> bool {
        self.views.iter().any(|v| v == view)
    }

    /// Sorted ids of the utterances that provide `view`, with resolved paths.
    pub fn files_for_view(&self, view: &str) -> Result<Vec<(String, PathBuf)>> {
        if !self.has_view(view) {
            return Err(Error::Manifest(format!("view {view:?} not in manifest")));
        }
        Ok(self
            .utterances
            .iter()
            .filter_map(|(id, e)| e.paths.get(view).map(|rel| (id.clone(), self.root.join(rel))))
            .collect())
    }

    pub fn transcript(&self, utt_id: &str) -> Option<&str> {
        self.utterances.get(utt_id)?.transcript.as_deref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_views_paths_and_transcripts() {
        let json = r#"{"views": ["ssl", "mel"],
            "utterances": {"u2": {"ssl": "a.psrf", "mel": "b.psrf", "transcript": "hello"},
                           "u1": {"mel": "c.psrf"}}}"#;
        let m = Manifest::from_json(json, "/data").unwrap();
        assert_eq!(m.views, ["ssl", "mel"]);
        assert_eq!(m.transcript("u2"), Some("hello"));
        assert_eq!(m.transcript("u1"), None);
        let mel = m.files_for_view("mel").unwrap();
        assert_eq!(mel[0], ("u1".to_string(), PathBuf::from("/data/c.psrf")));
        assert_eq!(mel.len(), 2);
        assert_eq!(m.files_for_view("ssl").unwrap().len(), 1);
        assert!(m.files_for_view("bert").is_err());
    }

    #[test]
    fn rejects_duplicate_and_undeclared_views() {
        let dup = r#"{"views": ["a", "a"], "utterances": {}}"#;
        assert!(matches!(Manifest::from_json(dup, "."), Err(Error::Manifest(_))));
        let undeclared = r#"{"views": ["a"], "utterances": {"u": {"b": "x"}}}"#;
        assert!(Manifest::from_json(undeclared, ".").is_err());
        let reserved = r#"{"views": ["transcript"], "utterances": {}}"#;
        assert!(Manifest::from_json(reserved, ".").is_err());
    }

    #[test]
    fn load_requires_existing_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        fs::write(&path, r#"{"views": ["a"], "utterances": {"u": {"a": "missing.psrf"}}}"#).unwrap();
        assert!(matches!(Manifest::load(&path), Err(Error::Manifest(_))));
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut m = Manifest {
            views: vec!["a".into()],
            ..Default::default()
        };
        fs::write(dir.path().join("x.psrf"), b"").unwrap();
        m.utterances.insert(
            "u".into(),
            UtteranceEntry {
                transcript: Some("t".into()),
                paths: [("a".to_string(), "x.psrf".to_string())].into(),
            },
        );
        let path = dir.path().join("m.json");
        m.save(&path).unwrap();
        let back = Manifest::load(&path).unwrap();
        assert_eq!(back.utterances, m.utterances);
        assert_eq!(back.root, dir.path());
    }
}
