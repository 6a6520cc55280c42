use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// A scratch directory that replaces `dest` on commit and disappears
/// otherwise.
pub(crate) struct Stage {
    pub dir: PathBuf,
    dest: PathBuf,
    committed: bool,
}

impl Stage {
    pub fn new(dest: impl AsRef<Path>) -> Result<Self> {
        let dest = dest.as_ref().to_path_buf();
        let name = dest.file_name().and_then(|n| n.to_str()).unwrap_or("out");
        let parent = dest.parent().unwrap_or(Path::new("."));
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        let dir = parent.join(format!(".{name}.partial"));
        if dir.exists() {
            fs::remove_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        }
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(Self { dir, dest, committed: false })
    }

    pub fn path(&self, rel: impl AsRef<Path>) -> PathBuf {
        self.dir.join(rel)
    }

    pub fn write(&self, rel: impl AsRef<Path>, bytes: impl AsRef<[u8]>) -> Result<()> {
        let p = self.path(rel);
        if let Some(d) = p.parent() {
            fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))
    }

    pub fn commit(mut self) -> Result<PathBuf> {
        if self.dest.exists() {
            fs::remove_dir_all(&self.dest).map_err(|e| Error::io(&self.dest, e))?;
        }
        fs::rename(&self.dir, &self.dest).map_err(|e| Error::io(&self.dest, e))?;
        self.committed = true;
        Ok(self.dest.clone())
    }
}

impl Drop for Stage {
    fn drop(&mut self) {
        if !self.committed {
            let _ = fs::remove_dir_all(&self.dir);
        }
    }
}
