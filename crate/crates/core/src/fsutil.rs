//! Atomic replacement of files and directories.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

fn parent_of(path: &Path) -> &Path {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    }
}

/// Writes `bytes` to a temporary sibling of `path`, then renames it into place.
pub fn write_file_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = parent_of(path);
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(tmp.path(), e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

/// Populates a fresh temporary directory with `fill`, then swaps it in for
/// `path`. An existing directory at `path` is moved aside first and removed
/// once the new one is in place.
pub fn replace_dir_atomic<F>(path: &Path, fill: F) -> Result<()>
where
    F: FnOnce(&Path) -> Result<()>,
{
    let dir = parent_of(path);
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let staging = tempfile::Builder::new()
        .prefix(".staging-")
        .tempdir_in(dir)
        .map_err(|e| Error::io(dir, e))?;
    fill(staging.path())?;
    let staged = staging.keep();

    let backup = if path.exists() {
        let backup = tempfile::Builder::new()
            .prefix(".replaced-")
            .tempdir_in(dir)
            .map_err(|e| Error::io(dir, e))?
            .keep();
        // rename(2) onto an existing directory requires it to be empty
        fs::remove_dir(&backup).map_err(|e| Error::io(&backup, e))?;
        fs::rename(path, &backup).map_err(|e| Error::io(path, e))?;
        Some(backup)
    } else {
        None
    };
    if let Err(e) = fs::rename(&staged, path) {
        if let Some(b) = &backup {
            let _ = fs::rename(b, path);
        }
        let _ = fs::remove_dir_all(&staged);
        return Err(Error::io(path, e));
    }
    if let Some(b) = backup {
        fs::remove_dir_all(&b).map_err(|e| Error::io(&b, e))?;
    }
    Ok(())
}
