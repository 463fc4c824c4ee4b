//! Setting resolution: command-line flag, then config file, then default.
//! Every resolved value is recorded for the run's config echo.

use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use romforge::kv::{KeyValueFile, KeyValueWriter};
use romforge::snapshot::fmt_f64;

use crate::CliError;

pub const ECHO_FILE: &str = "resolved_config.txt";

/// Formats a value for the echo; floats keep every bit.
pub trait EchoValue {
    fn echo(&self) -> String;
}

impl EchoValue for f64 {
    fn echo(&self) -> String {
        fmt_f64(*self)
    }
}

macro_rules! echo_display {
    ($($t:ty),*) => {$(
        impl EchoValue for $t {
            fn echo(&self) -> String {
                self.to_string()
            }
        }
    )*};
}

echo_display!(usize, u64, String);

impl EchoValue for std::path::PathBuf {
    fn echo(&self) -> String {
        self.display().to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Source {
    Flag,
    File(usize),
    Default,
}

/// Settings files are searched in order; earlier files win.
pub struct Settings {
    files: Vec<KeyValueFile>,
    resolved: Vec<(String, String, Source)>,
}

impl Settings {
    pub fn new(config: Option<&Path>) -> Result<Self, CliError> {
        let files = config.map(KeyValueFile::read).transpose()?.into_iter().collect();
        Ok(Settings {
            files,
            resolved: Vec::new(),
        })
    }

    /// Adds a file that takes precedence over those already loaded.
    pub fn push_front(&mut self, path: &Path) -> Result<(), CliError> {
        self.files.insert(0, KeyValueFile::read(path)?);
        Ok(())
    }

    fn lookup<T: FromStr>(&self, key: &str) -> Result<Option<(T, usize)>, CliError>
    where
        T::Err: Display,
    {
        for (i, f) in self.files.iter().enumerate() {
            if let Some(v) = f.get(key)? {
                return Ok(Some((v, i)));
            }
        }
        Ok(None)
    }

    fn source_name(&self, s: Source) -> String {
        match s {
            Source::Flag => "flag".into(),
            Source::File(i) => format!("file {}", self.files[i].path().display()),
            Source::Default => "default".into(),
        }
    }

    fn record<T: EchoValue>(&mut self, key: &str, v: &T, source: Source) {
        self.resolved.push((key.to_string(), v.echo(), source));
    }

    /// Resolves `key`, falling back to `default` when neither the flag nor
    /// the config file sets it.
    pub fn value<T: FromStr + EchoValue>(&mut self, key: &str, flag: Option<T>, default: T) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        let v = self.optional(key, flag)?;
        Ok(match v {
            Some(v) => v,
            None => {
                self.record(key, &default, Source::Default);
                default
            }
        })
    }

    /// Resolves a setting that has no default.
    pub fn required<T: FromStr + EchoValue>(&mut self, key: &str, flag: Option<T>) -> Result<T, CliError>
    where
        T::Err: Display,
    {
        self.optional(key, flag)?
            .ok_or_else(|| CliError::validation(format!("missing setting `{key}` (give --{} or set it in the config file)", key.replace('_', "-"))))
    }

    pub fn optional<T: FromStr + EchoValue>(&mut self, key: &str, flag: Option<T>) -> Result<Option<T>, CliError>
    where
        T::Err: Display,
    {
        if let Some(v) = flag {
            self.record(key, &v, Source::Flag);
            return Ok(Some(v));
        }
        if let Some((v, i)) = self.lookup::<T>(key)? {
            self.record(key, &v, Source::File(i));
            return Ok(Some(v));
        }
        Ok(None)
    }

    pub fn note(&mut self, key: &str, value: impl EchoValue) {
        self.record(key, &value, Source::Default);
    }

    pub fn echo(&self, command: &str) -> KeyValueWriter {
        let mut w = KeyValueWriter::new();
        w.comment("resolved settings; each entry is preceded by its source");
        w.entry("command", command);
        for (k, v, s) in &self.resolved {
            w.comment(&self.source_name(*s));
            w.entry(k, v);
        }
        w
    }

    pub fn write_echo(&self, command: &str, dir: &Path) -> Result<(), CliError> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        self.echo(command).write(dir.join(ECHO_FILE))?;
        Ok(())
    }
}
