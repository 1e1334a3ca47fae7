use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

/// Content-addressed response store: one `<fingerprint>.txt` file per
/// response. Writes go through a temporary file and an atomic rename, so
/// readers never observe a partial entry.
#[derive(Debug, Clone, Default)]
pub struct ResponseCache {
    dir: Option<PathBuf>,
}

impl ResponseCache {
    pub fn disabled() -> Self {
        ResponseCache { dir: None }
    }

    pub fn open(dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(ResponseCache { dir: Some(dir) })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    pub fn is_enabled(&self) -> bool {
        self.dir.is_some()
    }

    fn entry(&self, fingerprint: &str) -> Option<PathBuf> {
        self.dir
            .as_ref()
            .map(|d| d.join(format!("{fingerprint}.txt")))
    }

    pub fn get(&self, fingerprint: &str) -> io::Result<Option<String>> {
        let Some(path) = self.entry(fingerprint) else {
            return Ok(None);
        };
        match fs::read_to_string(path) {
            Ok(text) => Ok(Some(text)),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Ok(None),
            Err(e) => Err(e),
        }
    }

    pub fn put(&self, fingerprint: &str, text: &str) -> io::Result<()> {
        let (Some(dir), Some(path)) = (self.dir.as_ref(), self.entry(fingerprint)) else {
            return Ok(());
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(text.as_bytes())?;
        tmp.as_file().sync_all()?;
        tmp.persist(path).map_err(|e| e.error)?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        let Some(dir) = &self.dir else { return 0 };
        fs::read_dir(dir)
            .map(|it| {
                it.filter_map(Result::ok)
                    .filter(|e| e.path().extension().is_some_and(|x| x == "txt"))
                    .count()
            })
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
