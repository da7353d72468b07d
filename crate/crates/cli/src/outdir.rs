//! Exclusive ownership of an output directory and hash-checked reruns.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use metsc_core::error::{Error, Result};
use metsc_core::eval::config_hash;
use serde_json::{json, Value};

const LOCK: &str = ".metsc.lock";
const RUN: &str = "run.json";

/// Holds `<dir>/.metsc.lock` for the lifetime of a command. `run.json`
/// records the command and the hash of its configuration; a rerun with a
/// different configuration is refused unless forced.
pub struct OutDir {
    pub path: PathBuf,
    lock: PathBuf,
    command: String,
    config: Value,
}

impl OutDir {
    pub fn claim(path: &Path, command: &str, config: Value, force: bool) -> Result<Self> {
        fs::create_dir_all(path).map_err(|e| Error::io(path, e))?;
        let lock = path.join(LOCK);
        let mut f = OpenOptions::new().write(true).create_new(true).open(&lock).map_err(|e| {
            if e.kind() == std::io::ErrorKind::AlreadyExists {
                Error::Data(format!("{} is in use by another command (remove {} if it is stale)", path.display(), lock.display()))
            } else {
                Error::io(&lock, e)
            }
        })?;
        let _ = writeln!(f, "{}", std::process::id());
        let dir = Self {
            path: path.to_path_buf(),
            lock,
            command: command.to_string(),
            config,
        };
        dir.check(force)?;
        Ok(dir)
    }

    fn check(&self, force: bool) -> Result<()> {
        let run = self.path.join(RUN);
        if force || !run.exists() {
            return Ok(());
        }
        let text = fs::read_to_string(&run).map_err(|e| Error::io(&run, e))?;
        let old: Value = serde_json::from_str(&text)?;
        let found = config_hash(&self.config);
        let expected = old.get("config_hash").and_then(Value::as_str).unwrap_or_default().to_string();
        let old_cmd = old.get("command").and_then(Value::as_str).unwrap_or_default();
        if old_cmd != self.command || expected != found {
            return Err(Error::HashMismatch {
                what: format!("{} holds {old_cmd} output with another configuration; pass --force to overwrite", self.path.display()),
                expected,
                found,
            });
        }
        Ok(())
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    /// Records the configuration once outputs are complete.
    pub fn finish(self, outputs: &[&str]) -> Result<()> {
        let run = self.path.join(RUN);
        let body = json!({
            "command": self.command,
            "config_hash": config_hash(&self.config),
            "config": self.config,
            "outputs": outputs,
        });
        fs::write(&run, serde_json::to_string_pretty(&body)?).map_err(|e| Error::io(&run, e))
    }
}

impl Drop for OutDir {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.lock);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn second_claim_is_refused_while_held() {
        let d = tempfile::tempdir().unwrap();
        let a = OutDir::claim(d.path(), "x", json!({}), false).unwrap();
        assert!(OutDir::claim(d.path(), "x", json!({}), false).is_err());
        drop(a);
        OutDir::claim(d.path(), "x", json!({}), false).unwrap();
    }

    #[test]
    fn rerun_with_other_config_needs_force() {
        let d = tempfile::tempdir().unwrap();
        OutDir::claim(d.path(), "x", json!({"a": 1}), false).unwrap().finish(&[]).unwrap();
        OutDir::claim(d.path(), "x", json!({"a": 1}), false).unwrap().finish(&[]).unwrap();
        assert!(matches!(OutDir::claim(d.path(), "x", json!({"a": 2}), false), Err(Error::HashMismatch { .. })));
        OutDir::claim(d.path(), "x", json!({"a": 2}), true).unwrap().finish(&[]).unwrap();
    }
}
