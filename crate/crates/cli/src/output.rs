//! Result files: a `#`-prefixed JSON metadata line followed by CSV, written
//! through a temporary file and renamed into place.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use time::format_description::well_known::Rfc3339;
use time::OffsetDateTime;

use crate::CliError;

/// Fails early if the output file could not be created later.
pub fn check_output_path(path: &Path) -> Result<(), CliError> {
    let parent = parent_dir(path);
    if !parent.is_dir() {
        return Err(CliError::Usage(format!("output directory {} does not exist", parent.display())));
    }
    if path.is_dir() {
        return Err(CliError::Usage(format!("output path {} is a directory", path.display())));
    }
    Ok(())
}

fn parent_dir(path: &Path) -> PathBuf {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

/// Writes `content` to `path` atomically, or to stdout when no path is given.
pub fn emit(path: Option<&Path>, content: &str) -> Result<(), CliError> {
    match path {
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout
                .write_all(content.as_bytes())
                .and_then(|_| stdout.flush())
                .map_err(|e| CliError::Io(format!("writing to stdout: {e}")))
        }
        Some(path) => {
            let io_err = |e: std::io::Error| CliError::Io(format!("writing {}: {e}", path.display()));
            let mut tmp = tempfile::NamedTempFile::new_in(parent_dir(path)).map_err(io_err)?;
            tmp.write_all(content.as_bytes()).map_err(io_err)?;
            tmp.as_file().sync_all().map_err(io_err)?;
            tmp.persist(path).map_err(|e| io_err(e.error))?;
            Ok(())
        }
    }
}

/// UTC time of the run; `SOURCE_DATE_EPOCH` pins it for reproducible files.
pub fn timestamp() -> String {
    let now = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| OffsetDateTime::from_unix_timestamp(secs).ok())
        .unwrap_or_else(OffsetDateTime::now_utc);
    now.replace_nanosecond(0).unwrap_or(now).format(&Rfc3339).unwrap_or_default()
}

/// One-line JSON header for CSV output.
pub fn header_line<T: Serialize>(meta: &T) -> String {
    format!("# {}\n", serde_json::to_string(meta).expect("metadata serializes"))
}

pub fn to_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

/// Quotes a shell word when needed, so recorded commands can be pasted back.
pub fn shell_word(word: &str) -> String {
    let plain = !word.is_empty()
        && word.chars().all(|c| c.is_ascii_alphanumeric() || "-_./:=,+@%".contains(c));
    if plain {
        word.to_string()
    } else {
        format!("'{}'", word.replace('\'', r"'\''"))
    }
}
