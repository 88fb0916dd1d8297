//! Levenshtein-based linguistic distances over word lists.
//!
//! Edit units are Unicode scalar values. `ldn` normalizes by the longer word;
//! `ldnd` divides the mean same-concept LDN by the mean cross-concept LDN,
//! which discounts chance similarity between unrelated words.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

/// Minimum number of single-character insertions, deletions and
/// substitutions turning `a` into `b`.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Levenshtein distance divided by the longer length, in `[0, 1]`.
pub fn ldn(a: &str, b: &str) -> Result<f64> {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return Err(Error::Invalid("LDN undefined for two empty strings".into()));
    }
    Ok(levenshtein(a, b) as f64 / longest as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WordList {
    pub language_id: String,
    pub entries: BTreeMap<String, String>,
}

impl WordList {
    pub fn new(language_id: impl Into<String>, entries: BTreeMap<String, String>) -> Result<Self> {
        let language_id = language_id.into();
        for (concept, word) in &entries {
            if word.trim().is_empty() {
                return Err(Error::Invalid(format!(
                    "{language_id}: empty word for concept {concept}"
                )));
            }
        }
        Ok(Self {
            language_id,
            entries,
        })
    }

    /// Parses `concept_id<TAB>word` lines; blank lines and `#` comments are
    /// skipped.
    pub fn parse_tsv(language_id: impl Into<String>, text: &str) -> Result<Self> {
        let language_id = language_id.into();
        let mut entries = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (concept, word) = line.split_once('\t').ok_or_else(|| {
                Error::Invalid(format!("{language_id}:{}: expected concept<TAB>word", lineno + 1))
            })?;
            let concept = concept.trim().to_string();
            let word = word.trim().to_string();
            if entries.insert(concept.clone(), word).is_some() {
                return Err(Error::Invalid(format!(
                    "{language_id}:{}: duplicate concept {concept}",
                    lineno + 1
                )));
            }
        }
        Self::new(language_id, entries)
    }

    /// Reads a TSV word list; the language id is the file stem.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::parse_tsv(id, &text)
    }

    pub fn fold_case(&self) -> Self {
        Self {
            language_id: self.language_id.clone(),
            entries: self
                .entries
                .iter()
                .map(|(k, v)| (k.clone(), v.to_lowercase()))
                .collect(),
        }
    }

    /// Concept ids present in both lists, sorted.
    pub fn shared_concepts<'a>(&'a self, other: &'a WordList) -> Vec<&'a str> {
        self.entries
            .keys()
            .filter(|k| other.entries.contains_key(*k))
            .map(String::as_str)
            .collect()
    }
}

/// Per-concept LDN for every concept shared by both lists.
pub fn ldn_by_concept(a: &WordList, b: &WordList) -> Result<Vec<(String, f64)>> {
    a.shared_concepts(b)
        .into_iter()
        .map(|c| Ok((c.to_string(), ldn(&a.entries[c], &b.entries[c])?)))
        .collect()
}

/// Mean same-concept LDN over mean cross-concept LDN.
pub fn ldnd(a: &WordList, b: &WordList) -> Result<f64> {
    let shared = a.shared_concepts(b);
    if shared.len() < 2 {
        return Err(Error::Invalid(format!(
            "LDND needs at least 2 shared concepts between {} and {}, found {}",
            a.language_id,
            b.language_id,
            shared.len()
        )));
    }
    let same: f64 = shared
        .iter()
        .map(|c| ldn(&a.entries[*c], &b.entries[*c]))
        .sum::<Result<f64>>()?
        / shared.len() as f64;
    let mut cross = 0.0;
    let mut pairs = 0usize;
    for (i, ci) in shared.iter().enumerate() {
        for (j, cj) in shared.iter().enumerate() {
            if i != j {
                cross += ldn(&a.entries[*ci], &b.entries[*cj])?;
                pairs += 1;
            }
        }
    }
    let cross = cross / pairs as f64;
    if cross == 0.0 {
        return Err(Error::Invalid(
            "LDND normalizer is zero: all cross-concept words are identical".into(),
        ));
    }
    Ok(same / cross)
}
