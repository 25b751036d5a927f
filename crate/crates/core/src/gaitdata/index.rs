use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{normalize, read_sequence, SequenceMeta, SilhouetteSequence};
use crate::error::{Error, Result};

pub const INDEX_FORMAT: &str = "gaitkit-index/1";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexEntry {
    pub meta: SequenceMeta,
    /// Path relative to the dataset root, `/`-separated.
    pub path: String,
    pub frames: usize,
}

impl IndexEntry {
    pub fn new(meta: SequenceMeta, frames: usize) -> Self {
        let path = meta
            .rel_path()
            .iter()
            .map(|c| c.to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        Self { meta, path, frames }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Test,
}

impl std::str::FromStr for SplitName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(SplitName::Train),
            "test" => Ok(SplitName::Test),
            other => Err(Error::Input(format!("unknown split {other:?}, expected train or test"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetIndex {
    pub format: String,
    pub entries: Vec<IndexEntry>,
    pub split: Split,
}

impl DatasetIndex {
    pub fn new(entries: Vec<IndexEntry>, split: Split) -> Result<Self> {
        let index = Self {
            format: INDEX_FORMAT.to_string(),
            entries,
            split,
        };
        index.validate()?;
        Ok(index)
    }

    /// Checks the subject-independent split and that each entry's path is
    /// the one its metadata implies.
    pub fn validate(&self) -> Result<()> {
        if self.format != INDEX_FORMAT {
            return Err(Error::Input(format!("index format {:?}, expected {INDEX_FORMAT:?}", self.format)));
        }
        let train: BTreeSet<&str> = self.split.train.iter().map(String::as_str).collect();
        let test: BTreeSet<&str> = self.split.test.iter().map(String::as_str).collect();
        if let Some(s) = train.intersection(&test).next() {
            return Err(Error::Input(format!("subject {s} appears in both train and test splits")));
        }
        let mut seen = BTreeSet::new();
        for e in &self.entries {
            let s = e.meta.subject_id.as_str();
            if !train.contains(s) && !test.contains(s) {
                return Err(Error::Input(format!("subject {s} is in neither split")));
            }
            let expected = IndexEntry::new(e.meta.clone(), e.frames).path;
            if e.path != expected {
                return Err(Error::Input(format!(
                    "entry path {} does not match its metadata {} (expected {expected})",
                    e.path, e.meta
                )));
            }
            if !seen.insert(&e.meta) {
                return Err(Error::Input(format!("duplicate entry {}", e.meta)));
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let index: Self = serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        index.validate()?;
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self).map_err(|e| Error::json("index", e))?;
        text.push('\n');
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn subjects(&self, split: SplitName) -> &[String] {
        match split {
            SplitName::Train => &self.split.train,
            SplitName::Test => &self.split.test,
        }
    }

    /// Indices of the entries belonging to `split`, in index order.
    pub fn entries_in(&self, split: SplitName) -> Vec<usize> {
        let subjects: BTreeSet<&str> = self.subjects(split).iter().map(String::as_str).collect();
        (0..self.entries.len())
            .filter(|&i| subjects.contains(self.entries[i].meta.subject_id.as_str()))
            .collect()
    }
}

/// A dataset tree on disk.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub root: PathBuf,
    pub index: DatasetIndex,
}

impl Dataset {
    pub fn open(root: &Path) -> Result<Self> {
        if !root.is_dir() {
            return Err(Error::Input(format!("dataset root {} is not a directory", root.display())));
        }
        let index = DatasetIndex::load(&root.join("index.json"))?;
        Ok(Self {
            root: root.to_path_buf(),
            index,
        })
    }

    pub fn path_of(&self, entry: usize) -> PathBuf {
        let mut p = self.root.clone();
        for part in self.index.entries[entry].path.split('/') {
            p.push(part);
        }
        p
    }

    /// Raw frames as stored.
    pub fn load_raw(&self, entry: usize) -> Result<SilhouetteSequence> {
        let e = &self.index.entries[entry];
        let seq = read_sequence(&self.path_of(entry), e.meta.clone())?;
        if seq.len() != e.frames {
            return Err(Error::Input(format!(
                "{} holds {} frames but the index lists {}",
                e.path,
                seq.len(),
                e.frames
            )));
        }
        Ok(seq)
    }

    /// Frames normalised to 64×44.
    pub fn load(&self, entry: usize) -> Result<SilhouetteSequence> {
        normalize(&self.load_raw(entry)?)
    }
}
