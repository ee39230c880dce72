//! Output files. Every CSV starts with a `#` line carrying the config hash
//! and seed; every JSON file carries them as top-level fields.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{Map, Value};

use crate::error::CliError;

pub struct Stamp {
    pub config_hash: String,
    pub seed: u64,
}

pub struct OutputDir {
    dir: PathBuf,
    stamp: Stamp,
}

impl OutputDir {
    pub fn create(dir: &Path, stamp: Stamp) -> Result<Self, CliError> {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::data(format!("cannot create output directory {}: {e}", dir.display())))?;
        Ok(Self { dir: dir.to_path_buf(), stamp })
    }

    fn open(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.dir.join(name);
        let file = File::create(&path).map_err(|e| CliError::data(format!("cannot write {}: {e}", path.display())))?;
        Ok(BufWriter::new(file))
    }

    /// Writes the stamp line, then lets `body` write the CSV content.
    pub fn csv<F>(&mut self, name: &str, body: F) -> Result<(), CliError>
    where
        F: FnOnce(&mut BufWriter<File>) -> Result<(), CliError>,
    {
        let mut w = self.open(name)?;
        writeln!(
            w,
            "# multitreat {} config_hash={} seed={}",
            env!("CARGO_PKG_VERSION"),
            self.stamp.config_hash,
            self.stamp.seed
        )?;
        body(&mut w)?;
        w.flush()?;
        Ok(())
    }

    /// Pretty JSON object: the stamp fields followed by `payload`'s fields.
    pub fn json<T: Serialize>(&mut self, name: &str, payload: &T) -> Result<(), CliError> {
        let mut obj = Map::new();
        obj.insert("config_hash".into(), Value::from(self.stamp.config_hash.clone()));
        obj.insert("seed".into(), Value::from(self.stamp.seed));
        match serde_json::to_value(payload)? {
            Value::Object(fields) => obj.extend(fields),
            other => {
                obj.insert("data".into(), other);
            }
        }
        let mut w = self.open(name)?;
        serde_json::to_writer_pretty(&mut w, &Value::Object(obj))?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }
}

/// Shortest representation that reads back to the same value.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(String::new, num)
}
