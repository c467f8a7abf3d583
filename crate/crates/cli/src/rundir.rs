//! Output layout, run directories and the error type with its exit codes.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde_json::Value;
use sha1::{Digest, Sha1};

use crate::config::ExperimentConfig;

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_MISSING: u8 = 3;
pub const EXIT_SHAPE: u8 = 4;
pub const EXIT_DIVERGENCE: u8 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }

    pub fn shape(message: impl Into<String>) -> Self {
        CliError {
            code: EXIT_SHAPE,
            message: message.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<symflow::Error> for CliError {
    fn from(e: symflow::Error) -> Self {
        let code = match e {
            symflow::Error::Shape(_) => EXIT_SHAPE,
            symflow::Error::Divergence { .. } | symflow::Error::NonFinite(_) => EXIT_DIVERGENCE,
            _ => EXIT_INPUT,
        };
        let mut message = e.to_string();
        let mut source = std::error::Error::source(&e);
        while let Some(s) = source {
            let text = s.to_string();
            if !message.contains(&text) {
                message.push_str(&format!(": {text}"));
            }
            source = s.source();
        }
        CliError { code, message }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::input(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Git blob hash of `content`: SHA-1 over `blob <len>\0<content>`.
pub fn git_blob_hash(content: &[u8]) -> String {
    let mut h = Sha1::new();
    h.update(format!("blob {}\0", content.len()).as_bytes());
    h.update(content);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Where each stage lives under the output root.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub const AUTOENCODER: &'static str = "train-ae";
    pub const CLASSIFIER: &'static str = "train-classifier";
    pub const GENERATORS: &'static str = "find-generators";

    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn stage(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn autoencoder_dir(&self) -> PathBuf {
        self.stage(Self::AUTOENCODER).join("autoencoder")
    }

    pub fn classifier_path(&self) -> PathBuf {
        self.stage(Self::CLASSIFIER).join("classifier.json")
    }

    pub fn generators_dir(&self, stage: &str) -> PathBuf {
        self.stage(stage).join("generators")
    }
}

/// Fails with the missing-dependency exit code unless `path` exists.
pub fn require(path: &Path, producer: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError {
            code: EXIT_MISSING,
            message: format!(
                "missing upstream checkpoint {} (run `symflow {producer}` first)",
                path.display()
            ),
        })
    }
}

/// One stage's output directory: config copy, input hashes and summary.
pub struct RunDir {
    path: PathBuf,
    root: PathBuf,
    inputs: BTreeMap<String, Value>,
}

impl RunDir {
    pub fn create(layout: &Layout, stage: &str, config: &ExperimentConfig) -> CliResult<Self> {
        let path = layout.stage(stage);
        std::fs::create_dir_all(&path)
            .map_err(|e| CliError::input(format!("cannot create {}: {e}", path.display())))?;
        let run = RunDir {
            path,
            root: layout.root().to_path_buf(),
            inputs: BTreeMap::new(),
        };
        run.write("config.json", config.to_json())?;
        Ok(run)
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.path.join(name)
    }

    pub fn write(&self, name: &str, content: impl AsRef<[u8]>) -> CliResult<()> {
        let p = self.file(name);
        std::fs::write(&p, content).map_err(|e| CliError::input(format!("cannot write {}: {e}", p.display())))
    }

    /// Records the git-style hash of an input checkpoint file.
    pub fn input(&mut self, path: &Path) -> CliResult<()> {
        let bytes = std::fs::read(path).map_err(|e| CliError::input(format!("cannot read {}: {e}", path.display())))?;
        let key = path.strip_prefix(&self.root).unwrap_or(path).display().to_string();
        self.inputs.insert(key, Value::from(git_blob_hash(&bytes)));
        Ok(())
    }

    /// Records every file of a checkpoint directory.
    pub fn input_dir(&mut self, dir: &Path) -> CliResult<()> {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<_>>()?;
        files.sort();
        for f in files.iter().filter(|f| f.is_file()) {
            self.input(f)?;
        }
        Ok(())
    }

    pub fn finish(mut self, summary: Value) -> CliResult<Value> {
        let inputs = Value::Object(std::mem::take(&mut self.inputs).into_iter().collect());
        self.write_json("inputs.json", &inputs)?;
        self.write_json("summary.json", &summary)?;
        Ok(summary)
    }

    fn write_json(&self, name: &str, value: &Value) -> CliResult<()> {
        let mut text = serde_json::to_string_pretty(value).expect("json value serializes");
        text.push('\n');
        self.write(name, text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blob_hash_matches_git() {
        // `printf 'hello\n' | git hash-object --stdin`
        assert_eq!(git_blob_hash(b"hello\n"), "ce013625030ba8dba906f756967f9e9ca394464a");
        assert_eq!(git_blob_hash(b""), "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
    }

    #[test]
    fn error_codes() {
        assert_eq!(CliError::from(symflow::Error::Shape("x".into())).code, EXIT_SHAPE);
        assert_eq!(
            CliError::from(symflow::Error::Divergence { epoch: 1, what: "nan".into() }).code,
            EXIT_DIVERGENCE
        );
        assert_eq!(CliError::from(symflow::Error::Config("x".into())).code, EXIT_INPUT);
        let missing = require(Path::new("/nonexistent/checkpoint"), "train-ae").unwrap_err();
        assert_eq!(missing.code, EXIT_MISSING);
    }
}
