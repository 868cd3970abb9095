use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::CliError;

/// Output directory of one command run.
pub struct OutDir(PathBuf);

impl OutDir {
    pub fn create(path: PathBuf) -> Result<Self, CliError> {
        fs::create_dir_all(&path).map_err(|e| CliError::io(&path, e))?;
        Ok(Self(path))
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.0.join(name)
    }

    pub fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<(), CliError> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| CliError::Input(format!("serializing {name}: {e}")))?;
        text.push('\n');
        self.text(name, &text)
    }

    pub fn text(&self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.path(name);
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))
    }

    pub fn csv<T: Serialize>(&self, name: &str, rows: &[T]) -> Result<(), CliError> {
        let path = self.path(name);
        write_csv(&path, rows)
    }
}

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<(), CliError> {
    let mut wtr = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    for r in rows {
        wtr.serialize(r).map_err(|e| CliError::io(path, e))?;
    }
    wtr.flush().map_err(|e| CliError::io(path, e))
}
