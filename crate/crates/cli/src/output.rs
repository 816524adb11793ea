use std::io::Write;
use std::path::{Path, PathBuf};

use serde_json::Value;

/// Output directory plus a file stem shared by every artefact of one run.
pub struct Sink {
    dir: PathBuf,
    stem: String,
}

impl Sink {
    pub fn new(dir: PathBuf, stem: String) -> std::io::Result<Self> {
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir, stem })
    }

    pub fn path(&self, suffix: &str) -> PathBuf {
        self.dir.join(format!("{}{suffix}", self.stem))
    }

    pub fn csv(&self, text: &str) -> std::io::Result<PathBuf> {
        let path = self.path(".csv");
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }

    pub fn summary(&self, value: &Value) -> std::io::Result<PathBuf> {
        let path = self.path(".summary.json");
        let mut text = serde_json::to_string_pretty(value).expect("summary serialises");
        text.push('\n');
        write_atomic(&path, text.as_bytes())?;
        Ok(path)
    }
}

/// Writes to a temporary file in the target directory, then renames it.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

/// JSON has no NaN or infinity; those become `null`.
pub fn num(v: f64) -> Value {
    serde_json::Number::from_f64(v).map_or(Value::Null, Value::Number)
}

pub fn nums(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|&x| num(x)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn atomic_write_replaces_content() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.txt");
        write_atomic(&p, b"one").unwrap();
        write_atomic(&p, b"two").unwrap();
        assert_eq!(std::fs::read(&p).unwrap(), b"two");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn non_finite_numbers_become_null() {
        assert_eq!(num(f64::NAN), Value::Null);
        assert_eq!(num(f64::INFINITY), Value::Null);
        assert_eq!(num(1.5), serde_json::json!(1.5));
    }
}
