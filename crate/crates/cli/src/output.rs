//! Output directory, emit flags, manifests and the error-to-exit-code map.

use std::collections::BTreeSet;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rsrgx_core::flow::FlowError;
use rsrgx_core::ladder::LadderError;
use thiserror::Error;

use crate::config::{ConfigError, Ini};

pub const EXIT_INVARIANT: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;
pub const EXIT_CONFIG: u8 = 4;
/// I/O and other failures outside the documented classes.
pub const EXIT_OTHER: u8 = 1;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(#[from] ConfigError),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Invariant(_) => EXIT_INVARIANT,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Io(_) => EXIT_OTHER,
        }
    }
}

impl From<LadderError> for CliError {
    fn from(e: LadderError) -> Self {
        match e {
            LadderError::Config(m) => CliError::Config(ConfigError::Invalid(m)),
            LadderError::Io(e) => CliError::Io(e),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<FlowError> for CliError {
    fn from(e: FlowError) -> Self {
        match e {
            FlowError::Parameter(m) => CliError::Config(ConfigError::Invalid(m)),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Format {
    Csv,
    Jsonl,
    Svg,
}

impl Format {
    fn name(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Jsonl => "jsonl",
            Format::Svg => "svg",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Emit(BTreeSet<Format>);

impl Emit {
    pub fn parse(s: &str) -> Result<Emit, ConfigError> {
        let mut set = BTreeSet::new();
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            set.insert(match part.to_ascii_lowercase().as_str() {
                "csv" => Format::Csv,
                "jsonl" => Format::Jsonl,
                "svg" => Format::Svg,
                other => return Err(ConfigError::Invalid(format!("unknown emit format '{other}'"))),
            });
        }
        Ok(Emit(set))
    }

    pub fn has(&self, f: Format) -> bool {
        self.0.contains(&f)
    }

    pub fn render(&self) -> String {
        self.0.iter().map(|f| f.name()).collect::<Vec<_>>().join(", ")
    }
}

impl Default for Emit {
    fn default() -> Self {
        Emit([Format::Csv, Format::Jsonl].into_iter().collect())
    }
}

/// Files of one run. Every write is recorded for the manifest.
pub struct Output {
    dir: PathBuf,
    pub emit: Emit,
    written: BTreeSet<String>,
}

impl Output {
    pub fn create(dir: &Path, emit: Emit) -> Result<Output, CliError> {
        fs::create_dir_all(dir)?;
        Ok(Output { dir: dir.to_path_buf(), emit, written: BTreeSet::new() })
    }

    /// Writes `name` when its format is enabled.
    pub fn write(&mut self, format: Format, name: &str, contents: &str) -> Result<(), CliError> {
        if self.emit.has(format) {
            self.write_always(name, contents)?;
        }
        Ok(())
    }

    /// Writes `name` regardless of the emit flags.
    pub fn write_always(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        fs::write(self.dir.join(name), contents)?;
        self.written.insert(name.to_string());
        Ok(())
    }

    /// The resolved config plus a `[manifest]` section. Feeding it back via
    /// `--config` re-executes the run.
    pub fn manifest(&mut self, command: &str, resolved: &Ini) -> Result<(), CliError> {
        let mut ini = resolved.clone();
        ini.set("manifest", "command", command);
        ini.set("manifest", "version", env!("CARGO_PKG_VERSION"));
        let files: Vec<&str> = self.written.iter().map(String::as_str).collect();
        ini.set("manifest", "files", files.join(", "));
        self.write_always("manifest.ini", &ini.render())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn emit_flags_parse_and_render() {
        let e = Emit::parse("svg, csv").unwrap();
        assert!(e.has(Format::Csv) && e.has(Format::Svg) && !e.has(Format::Jsonl));
        assert_eq!(e.render(), "csv, svg");
        assert!(Emit::parse("png").is_err());
    }

    #[test]
    fn exit_codes_follow_error_class() {
        assert_eq!(CliError::Invariant("x".into()).exit_code(), 2);
        assert_eq!(CliError::Numerical("x".into()).exit_code(), 3);
        assert_eq!(CliError::from(LadderError::Config("x".into())).exit_code(), 4);
    }
}
