//! Library function database.
//!
//! PTL programs call opaque library routines through `extern("Name", ...)`.
//! The database tells the analysis what each routine means for performance:
//! which implicit parameters it introduces, which arguments it writes with a
//! labeled value (taint sources), which dependency atoms a call contributes,
//! and an optional analytical cost hint that is surfaced in reports.
//!
//! A default MPI-like database ships with the crate (also installed at
//! `data/libdb.json`): `MPI_Comm_size` writes the implicit parameter `p` into
//! its second argument, `MPI_Comm_rank` is performance-constant, point-to-point
//! and collective routines contribute `{p} ∪ labels(count)` atoms, and the
//! collectives carry a `log(p)` cost hint.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::label::LabelSet;

pub const SCHEMA_VERSION: u32 = 1;

/// One atom of a dependency template.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DepAtom {
    /// A fixed implicit parameter, e.g. the process count.
    Param(String),
    /// The label set of the k-th call argument at runtime.
    ArgLabels(usize),
}

/// A labeled write into a call argument (the argument must be a variable).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceWrite {
    pub arg: usize,
    pub label: String,
}

/// Database entry for one library routine.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LibEntry {
    pub name: String,
    pub arity: usize,
    /// Implicit performance parameters this routine introduces.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub implicit_params: Vec<String>,
    /// Arguments written with a labeled parameter value (taint sources).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub source_writes: Vec<SourceWrite>,
    /// Dependency atoms a call contributes to the enclosing function.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub dep_template: Vec<DepAtom>,
    /// Analytical cost hint (e.g. "log(p)"), surfaced in reports only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loop_semantics: Option<String>,
}

impl LibEntry {
    /// Whether calls to this routine matter for performance analysis: they
    /// either introduce labeled values or contribute dependency atoms.
    pub fn is_relevant(&self) -> bool {
        !self.source_writes.is_empty() || !self.dep_template.is_empty()
    }
}

/// The loaded database, keyed by routine name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct LibraryDB {
    entries: BTreeMap<String, LibEntry>,
}

#[derive(Debug, thiserror::Error)]
pub enum DbError {
    #[error("failed to read library DB {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed library DB JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported library DB schema_version {0} (expected {SCHEMA_VERSION})")]
    SchemaVersion(u32),
    #[error("duplicate library DB entry `{0}`")]
    DuplicateEntry(String),
    #[error("entry `{entry}`: argument index {index} out of range for arity {arity}")]
    ArgIndexOutOfRange {
        entry: String,
        index: usize,
        arity: usize,
    },
    #[error("entry `{entry}` references param label `{label}` that no entry declares in implicit_params")]
    UnknownParamLabel { entry: String, label: String },
}

#[derive(Debug, Serialize, Deserialize)]
struct DbFile {
    schema_version: u32,
    entries: Vec<LibEntry>,
}

impl LibraryDB {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Build a DB from entries, checking the structural invariants:
    /// unique names, argument indices within arity, and every referenced
    /// param label declared by some entry's `implicit_params`.
    pub fn from_entries(entries: Vec<LibEntry>) -> Result<Self, DbError> {
        let mut map = BTreeMap::new();
        let mut declared: BTreeSet<String> = BTreeSet::new();
        for e in &entries {
            declared.extend(e.implicit_params.iter().cloned());
        }
        for e in entries {
            for sw in &e.source_writes {
                if sw.arg >= e.arity {
                    return Err(DbError::ArgIndexOutOfRange {
                        entry: e.name.clone(),
                        index: sw.arg,
                        arity: e.arity,
                    });
                }
                if !declared.contains(&sw.label) {
                    return Err(DbError::UnknownParamLabel {
                        entry: e.name.clone(),
                        label: sw.label.clone(),
                    });
                }
            }
            for atom in &e.dep_template {
                match atom {
                    DepAtom::Param(p) => {
                        if !declared.contains(p) {
                            return Err(DbError::UnknownParamLabel {
                                entry: e.name.clone(),
                                label: p.clone(),
                            });
                        }
                    }
                    DepAtom::ArgLabels(k) => {
                        if *k >= e.arity {
                            return Err(DbError::ArgIndexOutOfRange {
                                entry: e.name.clone(),
                                index: *k,
                                arity: e.arity,
                            });
                        }
                    }
                }
            }
            if map.insert(e.name.clone(), e.clone()).is_some() {
                return Err(DbError::DuplicateEntry(e.name));
            }
        }
        Ok(LibraryDB { entries: map })
    }

    pub fn from_json(json: &str) -> Result<Self, DbError> {
        let file: DbFile = serde_json::from_str(json)?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(DbError::SchemaVersion(file.schema_version));
        }
        Self::from_entries(file.entries)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, DbError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| DbError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// The MPI-like database shipped with the crate.
    pub fn mpi_default() -> Self {
        Self::from_json(DEFAULT_DB_JSON).expect("embedded default DB must be valid")
    }

    pub fn to_json(&self) -> String {
        let file = DbFile {
            schema_version: SCHEMA_VERSION,
            entries: self.entries.values().cloned().collect(),
        };
        let mut s = serde_json::to_string_pretty(&file).expect("DB serializes");
        s.push('\n');
        s
    }

    pub fn get(&self, name: &str) -> Option<&LibEntry> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    /// Union of implicit parameters declared across all entries.
    pub fn implicit_params(&self) -> LabelSet {
        self.entries
            .values()
            .flat_map(|e| e.implicit_params.iter().map(|s| s.as_str()))
            .collect()
    }
}

/// Embedded copy of `data/libdb.json`; `mpi_default()` parses this, so the
/// shipped file and the built-in default cannot drift apart.
pub const DEFAULT_DB_JSON: &str = include_str!("../data/libdb.json");
