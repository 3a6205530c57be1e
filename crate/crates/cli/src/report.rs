//! Report documents and atomic artifact writing.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use tiebout::equilibrium::EquilibriumReport;

use crate::config::Mode;
use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Severity {
    Info,
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Diagnostic {
    pub code: String,
    pub severity: Severity,
    pub message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub details: Option<Value>,
}

impl Diagnostic {
    pub fn new(code: &str, severity: Severity, message: impl Into<String>) -> Self {
        Self { code: code.into(), severity, message: message.into(), details: None }
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = Some(details);
        self
    }

    pub fn from_error(e: &CliError) -> Self {
        Self { code: e.code().into(), severity: Severity::Error, message: e.to_string(), details: e.details() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub command: String,
    pub status: Status,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mode: Option<Mode>,
    pub equilibria: Vec<EquilibriumReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub analysis: Option<Value>,
    pub diagnostics: Vec<Diagnostic>,
}

impl Report {
    pub fn new(command: &str) -> Self {
        Self {
            command: command.into(),
            status: Status::Ok,
            mode: None,
            equilibria: Vec::new(),
            analysis: None,
            diagnostics: Vec::new(),
        }
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }
}

/// Writes artifacts into one directory; every file appears whole or not at
/// all.
#[derive(Debug, Clone)]
pub struct Output {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Output {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into(), written: Vec::new() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn written(&self) -> &[PathBuf] {
        &self.written
    }

    pub fn write(&mut self, name: &str, contents: &str) -> Result<(), CliError> {
        let io = |source| CliError::Io { path: self.dir.join(name), source };
        std::fs::create_dir_all(&self.dir).map_err(io)?;
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir).map_err(io)?;
        tmp.write_all(contents.as_bytes()).map_err(io)?;
        tmp.as_file().sync_all().map_err(io)?;
        let target = self.dir.join(name);
        tmp.persist(&target).map_err(|e| io(e.error))?;
        self.written.push(target);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn writes_replace_whole_files() {
        let dir = tempfile::tempdir().unwrap();
        let mut out = Output::new(dir.path().join("nested"));
        out.write("a.txt", "first").unwrap();
        out.write("a.txt", "second").unwrap();
        assert_eq!(std::fs::read_to_string(dir.path().join("nested/a.txt")).unwrap(), "second");
        let leftovers = std::fs::read_dir(dir.path().join("nested")).unwrap().count();
        assert_eq!(leftovers, 1);
    }

    #[test]
    fn error_diagnostics_carry_codes() {
        let e = CliError::Core(tiebout::Error::NoConvergence { iterations: 5, best_residual: 0.1 });
        let d = Diagnostic::from_error(&e);
        assert_eq!(d.code, "no-convergence");
        assert_eq!(d.details.unwrap()["iterations"], 5);
        assert_eq!(e.exit_code(), crate::error::EXIT_NO_CONVERGENCE);
    }
}
