//! Output directory layout and `key=value` summary files.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

/// Where every stage reads and writes under the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn stage(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn trajectory(&self) -> PathBuf {
        self.stage("simulate").join("trajectory.jctr")
    }

    pub fn windows(&self) -> PathBuf {
        self.stage("dataset").join("windows.jcws")
    }

    pub fn model(&self) -> PathBuf {
        self.stage("train").join("model.jcvm")
    }

    pub fn runs_index(&self) -> PathBuf {
        self.stage("forecast").join("runs.csv")
    }

    pub fn run_forecast(&self, run: usize) -> PathBuf {
        self.stage("forecast").join(format!("run{run:05}.jctr"))
    }

    pub fn run_ensembles(&self, run: usize) -> PathBuf {
        self.stage("forecast").join(format!("run{run:05}_ensembles.csv"))
    }

    pub fn summary(&self, stage: &str) -> PathBuf {
        self.stage(stage).join("summary.txt")
    }

    /// Create (or reuse) a stage directory.
    pub fn prepare(&self, stage: &str) -> io::Result<PathBuf> {
        let dir = self.stage(stage);
        fs::create_dir_all(&dir)?;
        Ok(dir)
    }
}

/// Ordered `key=value` record written next to each stage's outputs.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary(BTreeMap<String, String>);

impl Summary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn put(&mut self, key: impl Into<String>, value: impl ToString) -> &mut Self {
        self.0.insert(key.into(), value.to_string());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &String)> {
        self.0.iter()
    }

    pub fn write(&self, path: &Path) -> io::Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        for (k, v) in &self.0 {
            writeln!(out, "{k}={v}")?;
        }
        out.flush()
    }

    pub fn read(path: &Path) -> io::Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut s = Self::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line.split_once('=').ok_or_else(|| {
                io::Error::new(io::ErrorKind::InvalidData, format!("{}: malformed line `{line}`", path.display()))
            })?;
            s.put(k, v);
        }
        Ok(s)
    }
}

/// Buffered file writer.
pub fn create(path: &Path) -> io::Result<BufWriter<fs::File>> {
    Ok(BufWriter::new(fs::File::create(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_round_trip_is_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.txt");
        let mut s = Summary::new();
        s.put("zeta", 1.5).put("alpha", "x=y");
        s.write(&path).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "alpha=x=y\nzeta=1.5\n");
        assert_eq!(Summary::read(&path).unwrap(), s);
    }
}
