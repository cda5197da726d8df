//! CSV helpers shared by every file format: `#` lines are comments, and
//! writers can emit a provenance comment line before the header.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
}

impl IoError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        IoError::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn csv(path: &Path, source: csv::Error) -> Self {
        IoError::Csv { path: path.to_path_buf(), source }
    }

    pub(crate) fn format(path: &Path, detail: impl Into<String>) -> Self {
        IoError::Format { path: path.to_path_buf(), detail: detail.into() }
    }
}

pub fn csv_reader(path: &Path) -> Result<csv::Reader<File>, IoError> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| IoError::csv(path, e))
}

/// Opens `path` for CSV output, writing `# {comment}` first when given.
pub fn csv_writer(path: &Path, comment: Option<&str>) -> Result<csv::Writer<BufWriter<File>>, IoError> {
    let file = File::create(path).map_err(|e| IoError::io(path, e))?;
    let mut out = BufWriter::new(file);
    if let Some(c) = comment {
        writeln!(out, "# {c}").map_err(|e| IoError::io(path, e))?;
    }
    Ok(csv::Writer::from_writer(out))
}

pub fn finish<W: Write>(path: &Path, mut w: csv::Writer<W>) -> Result<(), IoError> {
    w.flush().map_err(|e| IoError::io(path, e))
}
