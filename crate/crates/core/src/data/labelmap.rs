use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};

const DEFAULT_NAMES: [&str; 10] = [
    "background",
    "Tooth",
    "Bone",
    "Pulp",
    "Root Canal Filling",
    "Denture Crown",
    "Dental Fillings",
    "Implant",
    "Orthodontic Devices",
    "Apical Periodontitis",
];

/// Class-name to index table; indices are contiguous from 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    names: Vec<String>,
    index: HashMap<String, u8>,
}

impl Default for LabelMap {
    fn default() -> Self {
        Self::from_names(DEFAULT_NAMES.iter().map(|s| s.to_string()).collect()).expect("default label map")
    }
}

impl LabelMap {
    pub fn from_names(names: Vec<String>) -> Result<Self> {
        if names.is_empty() || names.len() > 256 {
            return Err(Error::Config(format!(
                "label map needs 1..=256 classes, got {}",
                names.len()
            )));
        }
        let mut index = HashMap::new();
        for (i, n) in names.iter().enumerate() {
            if n.trim().is_empty() {
                return Err(Error::Config(format!("label {i} has an empty name")));
            }
            if index.insert(n.clone(), i as u8).is_some() {
                return Err(Error::Config(format!("duplicate label name {n:?}")));
            }
        }
        Ok(Self { names, index })
    }

    /// Parses `name=index` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (name, idx) = line
                .rsplit_once('=')
                .ok_or_else(|| Error::Config(format!("label map line {}: expected name=index", ln + 1)))?;
            let idx: usize = idx
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("label map line {}: bad index {idx:?}", ln + 1)))?;
            pairs.push((idx, name.trim().to_string()));
        }
        pairs.sort();
        for (i, (idx, _)) in pairs.iter().enumerate() {
            if *idx != i {
                return Err(Error::Config(format!(
                    "label indices must be contiguous from 0; index {i} missing or repeated"
                )));
            }
        }
        Self::from_names(pairs.into_iter().map(|(_, n)| n).collect())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_text(&self) -> String {
        self.names
            .iter()
            .enumerate()
            .map(|(i, n)| format!("{n}={i}\n"))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> Option<u8> {
        self.index.get(name).copied()
    }

    pub fn name(&self, idx: usize) -> Option<&str> {
        self.names.get(idx).map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_order() {
        let m = LabelMap::default();
        assert_eq!(m.len(), 10);
        assert_eq!(m.get("background"), Some(0));
        assert_eq!(m.get("Pulp"), Some(3));
        assert_eq!(m.get("Apical Periodontitis"), Some(9));
    }

    #[test]
    fn text_roundtrip() {
        let m = LabelMap::default();
        assert_eq!(LabelMap::parse(&m.to_text()).unwrap(), m);
    }

    #[test]
    fn rejects_gaps_and_duplicates() {
        assert!(LabelMap::parse("bg=0\nA=2\n").is_err());
        assert!(LabelMap::parse("bg=0\nbg=1\n").is_err());
        assert!(LabelMap::parse("bg=0\nx=0\n").is_err());
        let m = LabelMap::parse("# comment\nbg=0\nfoo bar=1 # trailing\n").unwrap();
        assert_eq!(m.get("foo bar"), Some(1));
    }
}
