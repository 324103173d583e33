//! Versioned data tables that drive the parser and normalizer: the command
//! arity table, the environment table and the synonym table.
//!
//! Each table is a UTF-8 text file with one tab-separated entry per line.
//! Blank lines and lines starting with `#` are ignored. The shipped defaults
//! live in `data/` and are compiled in; [`Grammar::from_dir`] loads
//! replacements from disk.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::LazyLock;

use thiserror::Error;

pub const ARITY_FILE: &str = "arity.tsv";
pub const ENV_FILE: &str = "environments.tsv";
pub const SYNONYM_FILE: &str = "synonyms.tsv";

const DEFAULT_ARITY: &str = include_str!("../data/arity.tsv");
const DEFAULT_ENVS: &str = include_str!("../data/environments.tsv");
const DEFAULT_SYNONYMS: &str = include_str!("../data/synonyms.tsv");

static DEFAULT_GRAMMAR: LazyLock<Grammar> =
    LazyLock::new(|| Grammar::from_sources(DEFAULT_ARITY, DEFAULT_ENVS, DEFAULT_SYNONYMS).expect("shipped tables are valid"));

#[derive(Debug, Error)]
pub enum TableError {
    #[error("{file}:{line}: {message}")]
    Malformed {
        file: String,
        line: usize,
        message: String,
    },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arity {
    pub required: usize,
    /// Accepts one leading `[...]` optional argument.
    pub optional: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnvKind {
    /// Rows are visual lines (`gather`, `align`, `cases`, ...).
    Multiline,
    /// Rows are part of a single visual line (`pmatrix`, ...).
    Matrix,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnvSpec {
    pub kind: EnvKind,
    /// Takes one braced argument right after `\begin{name}`.
    pub takes_arg: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rewrite {
    Rename(String),
    Drop,
}

#[derive(Debug, Clone)]
pub struct Grammar {
    arity: BTreeMap<String, Arity>,
    envs: BTreeMap<String, EnvSpec>,
    /// Keyed by the full lexeme including the backslash.
    synonyms: HashMap<String, Rewrite>,
}

impl Default for Grammar {
    fn default() -> Self {
        DEFAULT_GRAMMAR.clone()
    }
}

impl Grammar {
    /// Shared instance built from the shipped tables.
    pub fn shipped() -> &'static Grammar {
        &DEFAULT_GRAMMAR
    }

    pub fn from_sources(arity: &str, envs: &str, synonyms: &str) -> Result<Self, TableError> {
        Ok(Grammar {
            arity: parse_arity(arity)?,
            envs: parse_envs(envs)?,
            synonyms: parse_synonyms(synonyms)?,
        })
    }

    /// Loads tables from `dir`, falling back to the shipped table for any
    /// file that is not present.
    pub fn from_dir(dir: &Path) -> Result<Self, TableError> {
        let read = |name: &str, fallback: &'static str| -> Result<String, TableError> {
            let path = dir.join(name);
            if path.exists() {
                std::fs::read_to_string(&path).map_err(|source| TableError::Io {
                    path: path.display().to_string(),
                    source,
                })
            } else {
                Ok(fallback.to_string())
            }
        };
        Grammar::from_sources(
            &read(ARITY_FILE, DEFAULT_ARITY)?,
            &read(ENV_FILE, DEFAULT_ENVS)?,
            &read(SYNONYM_FILE, DEFAULT_SYNONYMS)?,
        )
    }

    pub fn arity(&self, name: &str) -> Option<Arity> {
        self.arity.get(name).copied()
    }

    pub fn env(&self, name: &str) -> Option<EnvSpec> {
        self.envs.get(name).copied()
    }

    pub fn env_kind(&self, name: &str) -> EnvKind {
        self.env(name).map_or(EnvKind::Other, |e| e.kind)
    }

    /// Rewrite for a lexeme such as `\dfrac` or `\,`.
    pub fn rewrite(&self, lexeme: &str) -> Option<&Rewrite> {
        self.synonyms.get(lexeme)
    }

    pub fn commands(&self) -> impl Iterator<Item = (&str, Arity)> {
        self.arity.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn environments(&self) -> impl Iterator<Item = (&str, EnvSpec)> {
        self.envs.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

fn entries(src: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    src.lines().enumerate().filter_map(|(i, line)| {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() || line.starts_with('#') {
            None
        } else {
            Some((i + 1, line.split('\t').collect()))
        }
    })
}

fn malformed(file: &str, line: usize, message: impl Into<String>) -> TableError {
    TableError::Malformed {
        file: file.to_string(),
        line,
        message: message.into(),
    }
}

fn is_command_name(name: &str) -> bool {
    !name.is_empty() && name.bytes().all(|b| b.is_ascii_alphabetic())
}

fn parse_arity(src: &str) -> Result<BTreeMap<String, Arity>, TableError> {
    let mut out = BTreeMap::new();
    for (line, cols) in entries(src) {
        let [name, n, rest @ ..] = cols.as_slice() else {
            return Err(malformed(ARITY_FILE, line, "expected name<TAB>arity"));
        };
        if !is_command_name(name) {
            return Err(malformed(ARITY_FILE, line, format!("bad command name {name:?}")));
        }
        let required = n
            .parse::<usize>()
            .map_err(|_| malformed(ARITY_FILE, line, format!("bad arity {n:?}")))?;
        let optional = match rest {
            [] => false,
            ["opt"] => true,
            _ => return Err(malformed(ARITY_FILE, line, "unexpected trailing columns")),
        };
        if out.insert(name.to_string(), Arity { required, optional }).is_some() {
            return Err(malformed(ARITY_FILE, line, format!("duplicate entry {name}")));
        }
    }
    Ok(out)
}

fn parse_envs(src: &str) -> Result<BTreeMap<String, EnvSpec>, TableError> {
    let mut out = BTreeMap::new();
    for (line, cols) in entries(src) {
        let [name, kind, rest @ ..] = cols.as_slice() else {
            return Err(malformed(ENV_FILE, line, "expected name<TAB>kind"));
        };
        if name.is_empty() || !name.bytes().all(|b| b.is_ascii_alphabetic() || b == b'*') {
            return Err(malformed(ENV_FILE, line, format!("bad environment name {name:?}")));
        }
        let kind = match *kind {
            "multiline" => EnvKind::Multiline,
            "matrix" => EnvKind::Matrix,
            "other" => EnvKind::Other,
            k => return Err(malformed(ENV_FILE, line, format!("unknown kind {k:?}"))),
        };
        let takes_arg = match rest {
            [] => false,
            ["arg"] => true,
            _ => return Err(malformed(ENV_FILE, line, "unexpected trailing columns")),
        };
        if out.insert(name.to_string(), EnvSpec { kind, takes_arg }).is_some() {
            return Err(malformed(ENV_FILE, line, format!("duplicate entry {name}")));
        }
    }
    Ok(out)
}

fn parse_synonyms(src: &str) -> Result<HashMap<String, Rewrite>, TableError> {
    let mut out = HashMap::new();
    for (line, cols) in entries(src) {
        let [from, to] = cols.as_slice() else {
            return Err(malformed(SYNONYM_FILE, line, "expected from<TAB>to"));
        };
        if !from.starts_with('\\') || from.len() < 2 {
            return Err(malformed(SYNONYM_FILE, line, format!("bad source {from:?}")));
        }
        let rewrite = if to.is_empty() {
            Rewrite::Drop
        } else if to.starts_with('\\') && to.len() >= 2 {
            Rewrite::Rename(to.to_string())
        } else {
            return Err(malformed(SYNONYM_FILE, line, format!("bad target {to:?}")));
        };
        if out.insert(from.to_string(), rewrite).is_some() {
            return Err(malformed(SYNONYM_FILE, line, format!("duplicate entry {from}")));
        }
    }
    Ok(out)
}
