use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use tempfile::NamedTempFile;

use crate::error::CliError;

/// Output directory. Each file is written to a temporary sibling and renamed into place,
/// so readers never see a partial file.
pub struct OutDir {
    dir: PathBuf,
    protected: Option<PathBuf>,
    pub written: Vec<PathBuf>,
}

impl OutDir {
    /// `protected` (the input file) is never overwritten.
    pub fn create(dir: &Path, protected: Option<&Path>) -> Result<Self, CliError> {
        fs::create_dir_all(dir).map_err(|e| CliError::internal(format!("creating {}: {e}", dir.display())))?;
        Ok(OutDir {
            dir: dir.to_path_buf(),
            protected: protected.and_then(|p| fs::canonicalize(p).ok()),
            written: Vec::new(),
        })
    }

    pub fn write<F>(&mut self, name: &str, fill: F) -> Result<PathBuf, CliError>
    where
        F: FnOnce(&mut dyn Write) -> Result<(), CliError>,
    {
        let path = self.dir.join(name);
        if let (Some(input), Ok(target)) = (&self.protected, fs::canonicalize(&path)) {
            if *input == target {
                return Err(CliError::input(format!("output {} would overwrite the input file", path.display())));
            }
        }
        let tmp = NamedTempFile::new_in(&self.dir)?;
        {
            let mut w = BufWriter::new(tmp.as_file());
            fill(&mut w)?;
            w.flush()?;
        }
        tmp.as_file().sync_all()?;
        tmp.persist(&path).map_err(|e| CliError::internal(format!("writing {}: {}", path.display(), e.error)))?;
        self.written.push(path.clone());
        Ok(path)
    }

    pub fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<PathBuf, CliError> {
        self.write(name, |w| {
            serde_json::to_writer_pretty(&mut *w, value)?;
            writeln!(w)?;
            Ok(())
        })
    }

    pub fn text(&mut self, name: &str, text: &str) -> Result<PathBuf, CliError> {
        self.write(name, |w| Ok(w.write_all(text.as_bytes())?))
    }
}
