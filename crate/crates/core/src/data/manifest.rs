use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl std::str::FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

/// One icon. `split` is `None` until the manifest has been split.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IconRecord {
    pub id: String,
    pub path: String,
    pub collection: String,
    #[serde(default)]
    pub split: Option<Split>,
    #[serde(default)]
    pub keyword: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProvenanceLine {
    provenance: String,
}

/// Ordered icon records. Relative paths resolve against `root`, the
/// directory of the manifest file.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<IconRecord>,
    pub provenance: Option<String>,
    pub root: PathBuf,
}

impl Manifest {
    pub fn new(records: Vec<IconRecord>, root: impl Into<PathBuf>) -> Result<Self> {
        let m = Self {
            records,
            provenance: None,
            root: root.into(),
        };
        m.check_unique_ids()?;
        Ok(m)
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, record: &IconRecord) -> PathBuf {
        let p = Path::new(&record.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn get(&self, id: &str) -> Option<&IconRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &IconRecord> {
        self.records.iter().filter(move |r| r.split == Some(split))
    }

    /// Collection labels in order of first appearance.
    pub fn collections(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.records
            .iter()
            .filter(|r| seen.insert(r.collection.as_str()))
            .map(|r| r.collection.as_str())
            .collect()
    }

    fn check_unique_ids(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
        }
        Ok(())
    }

    /// Every record's image must exist on disk.
    pub fn check_files(&self) -> Result<()> {
        for r in &self.records {
            let path = self.resolve(r);
            if !path.is_file() {
                return Err(Error::MissingImage {
                    id: r.id.clone(),
                    path,
                });
            }
        }
        Ok(())
    }

    /// Parses line-delimited JSON. A leading `{"provenance": …}` line is
    /// accepted; blank lines are skipped.
    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut records = Vec::new();
        let mut provenance = None;
        let mut seen = HashSet::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if records.is_empty() && provenance.is_none() {
                if let Ok(p) = serde_json::from_str::<ProvenanceLine>(line) {
                    provenance = Some(p.provenance);
                    continue;
                }
            }
            let record: IconRecord = serde_json::from_str(line).map_err(|e| Error::ManifestLine {
                line: line_no,
                detail: e.to_string(),
            })?;
            if !seen.insert(record.id.clone()) {
                return Err(Error::ManifestLine {
                    line: line_no,
                    detail: format!("duplicate id {:?}", record.id),
                });
            }
            records.push(record);
        }
        Ok(Self {
            records,
            provenance,
            root: root.into(),
        })
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        if let Some(p) = &self.provenance {
            out.push_str(&serde_json::to_string(&ProvenanceLine { provenance: p.clone() }).unwrap());
            out.push('\n');
        }
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).unwrap());
            out.push('\n');
        }
        out
    }
}

/// Reads a manifest and verifies that every referenced image exists.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<Manifest> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let manifest = Manifest::parse(&text, root)?;
    manifest.check_files()?;
    Ok(manifest)
}

pub fn save_manifest(manifest: &Manifest, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, manifest.to_jsonl()).map_err(|e| Error::io(path, e))
}
