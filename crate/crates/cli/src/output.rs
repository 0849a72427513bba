use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use lgcp_cv::{Error, Result};

/// Output directory whose files are replaced atomically: each file is written
/// to a hidden temporary sibling, synced, then renamed over the target.
pub struct OutputDir {
    root: PathBuf,
}

impl OutputDir {
    pub fn create(root: &Path) -> Result<Self> {
        fs::create_dir_all(root).map_err(|e| Error::Io {
            path: root.to_path_buf(),
            source: e,
        })?;
        Ok(Self { root: root.to_path_buf() })
    }

    pub fn path(&self, relative: &str) -> PathBuf {
        self.root.join(relative)
    }

    pub fn write(&self, relative: &str, contents: &str) -> Result<PathBuf> {
        let target = self.path(relative);
        let dir = target.parent().unwrap_or(&self.root).to_path_buf();
        let io = |path: &Path, e: std::io::Error| Error::Io {
            path: path.to_path_buf(),
            source: e,
        };
        fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
        let name = target.file_name().and_then(|n| n.to_str()).unwrap_or("out");
        let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
        let result = (|| {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(contents.as_bytes())?;
            f.sync_all()?;
            fs::rename(&tmp, &target)
        })();
        if let Err(e) = result {
            let _ = fs::remove_file(&tmp);
            return Err(io(&target, e));
        }
        log::info!("wrote {}", target.display());
        Ok(target)
    }
}

/// File-name-safe version of a model id.
pub fn file_stem(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' })
        .collect()
}
