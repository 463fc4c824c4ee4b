//! `key = value` text files with `#` comments, used for snapshot manifests,
//! tensor manifests and run configuration.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Default)]
pub struct KeyValueFile {
    path: PathBuf,
    entries: Vec<(String, String, usize)>,
}

impl KeyValueFile {
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(path, &text)
    }

    pub fn parse(path: impl AsRef<Path>, text: &str) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut entries = Vec::new();
        for (no, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return Err(Error::parse(&path, no + 1, "expected `key = value`"));
            };
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::parse(&path, no + 1, "empty key"));
            }
            entries.push((key.to_string(), v.trim().to_string(), no + 1));
        }
        Ok(KeyValueFile { path, entries })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Last value given for `key`.
    pub fn get_raw(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .rev()
            .find(|(k, _, _)| k == key)
            .map(|(_, v, _)| v.as_str())
    }

    /// Every value given for `key`, in file order, with its line number.
    pub fn get_all<'a>(&'a self, key: &'a str) -> impl Iterator<Item = (&'a str, usize)> + 'a {
        self.entries
            .iter()
            .filter(move |(k, _, _)| k == key)
            .map(|(_, v, l)| (v.as_str(), *l))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(k, _, _)| k.as_str())
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        let Some((_, v, line)) = self.entries.iter().rev().find(|(k, _, _)| k == key) else {
            return Ok(None);
        };
        v.parse::<T>()
            .map(Some)
            .map_err(|e| Error::parse(&self.path, *line, format!("bad value for `{key}`: {e}")))
    }

    pub fn require<T: FromStr>(&self, key: &str) -> Result<T>
    where
        T::Err: Display,
    {
        self.get(key)?
            .ok_or_else(|| Error::parse(&self.path, 0, format!("missing key `{key}`")))
    }
}

/// Accumulates `key = value` lines for writing.
#[derive(Debug, Default, Clone)]
pub struct KeyValueWriter {
    text: String,
}

impl KeyValueWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn comment(&mut self, c: &str) -> &mut Self {
        self.text.push_str("# ");
        self.text.push_str(c);
        self.text.push('\n');
        self
    }

    pub fn entry(&mut self, key: &str, value: impl Display) -> &mut Self {
        self.text.push_str(&format!("{key} = {value}\n"));
        self
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, &self.text).map_err(|e| Error::io(path, e))
    }
}
