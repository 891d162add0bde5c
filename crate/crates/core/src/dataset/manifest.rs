use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use globset::{Glob, GlobMatcher};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Binary origin label. Class indices: human = 0, machine = 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Human,
    Machine,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Human, Label::Machine];

    /// The positive class for metrics: real (human-made) music.
    pub const POSITIVE: Label = Label::Human;

    pub fn index(self) -> usize {
        match self {
            Label::Human => 0,
            Label::Machine => 1,
        }
    }

    pub fn from_index(index: usize) -> Label {
        if index == 0 {
            Label::Human
        } else {
            Label::Machine
        }
    }

    pub fn other(self) -> Label {
        match self {
            Label::Human => Label::Machine,
            Label::Machine => Label::Human,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Label::Human => "human",
            Label::Machine => "machine",
        })
    }
}

/// Maps files whose root-relative path matches `pattern` (glob syntax, `/`
/// separators) to a label and optional subset tag.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRule {
    pub pattern: String,
    pub label: Label,
    #[serde(default)]
    pub subset_tag: Option<String>,
}

impl LabelRule {
    pub fn new(pattern: impl Into<String>, label: Label) -> Self {
        Self {
            pattern: pattern.into(),
            label,
            subset_tag: None,
        }
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.subset_tag = Some(tag.into());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub id: String,
    pub path: String,
    pub label: Label,
    pub subset_tag: String,
    pub lyrics_path: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DatasetManifest {
    pub rows: Vec<ManifestRow>,
}

const AUDIO_EXTENSIONS: &[&str] = &["wav"];

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn label_counts(&self) -> [usize; 2] {
        let mut counts = [0; 2];
        for row in &self.rows {
            counts[row.label.index()] += 1;
        }
        counts
    }

    pub fn get(&self, id: &str) -> Option<&ManifestRow> {
        self.rows.iter().find(|r| r.id == id)
    }

    /// Rows whose subset tag is one of `tags`.
    pub fn filter_subsets(&self, tags: &[&str]) -> DatasetManifest {
        DatasetManifest {
            rows: self
                .rows
                .iter()
                .filter(|r| tags.contains(&r.subset_tag.as_str()))
                .cloned()
                .collect(),
        }
    }

    /// Rows restricted to `ids`, in manifest order.
    pub fn select(&self, ids: &[String]) -> DatasetManifest {
        let keep: HashSet<&str> = ids.iter().map(String::as_str).collect();
        DatasetManifest {
            rows: self
                .rows
                .iter()
                .filter(|r| keep.contains(r.id.as_str()))
                .cloned()
                .collect(),
        }
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        crate::io::write_jsonl(path, &self.rows)
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let manifest = DatasetManifest {
            rows: crate::io::read_jsonl(path)?,
        };
        manifest.check_unique_ids()?;
        Ok(manifest)
    }

    fn check_unique_ids(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for row in &self.rows {
            if !seen.insert(row.id.as_str()) {
                return Err(Error::Config(format!("duplicate manifest id `{}`", row.id)));
            }
        }
        Ok(())
    }
}

/// Walks `root` and labels every audio file that matches exactly one rule.
///
/// Ids are root-relative paths without the extension. A sibling
/// `<stem>.txt` is recorded as the lyrics file.
pub fn build_manifest(root: &Path, rules: &[LabelRule]) -> Result<DatasetManifest> {
    if !root.is_dir() {
        return Err(Error::Config(format!("dataset root {} is not a directory", root.display())));
    }
    let matchers: Vec<GlobMatcher> = rules
        .iter()
        .map(|r| {
            Glob::new(&r.pattern)
                .map(|g| g.compile_matcher())
                .map_err(|e| Error::Config(format!("bad pattern `{}`: {e}", r.pattern)))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| {
            let path = e.path().map(Path::to_path_buf).unwrap_or_else(|| root.to_path_buf());
            Error::io(path, std::io::Error::other(e.to_string()))
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let path = entry.path();
        let is_audio = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| AUDIO_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()));
        if !is_audio {
            continue;
        }
        let rel = relative_slash_path(root, path);
        let hits: Vec<usize> = matchers
            .iter()
            .enumerate()
            .filter(|(_, m)| m.is_match(&rel))
            .map(|(i, _)| i)
            .collect();
        let rule = match hits.as_slice() {
            [] => continue,
            [only] => &rules[*only],
            many => {
                return Err(Error::AmbiguousLabel {
                    path: rel,
                    rules: many.iter().map(|&i| rules[i].pattern.clone()).collect(),
                })
            }
        };
        let id = rel
            .rsplit_once('.')
            .map(|(stem, _)| stem.to_string())
            .unwrap_or_else(|| rel.clone());
        let lyrics = path.with_extension("txt");
        rows.push(ManifestRow {
            id,
            path: path.display().to_string(),
            label: rule.label,
            subset_tag: rule.subset_tag.clone().unwrap_or_default(),
            lyrics_path: lyrics.is_file().then(|| lyrics.display().to_string()),
        });
    }
    if rows.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let manifest = DatasetManifest { rows };
    manifest.check_unique_ids()?;
    Ok(manifest)
}

fn relative_slash_path(root: &Path, path: &Path) -> String {
    let rel: PathBuf = path.strip_prefix(root).unwrap_or(path).to_path_buf();
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy().into_owned())
        .collect::<Vec<_>>()
        .join("/")
}
