use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;
use serde_json::{json, Value};

/// Provenance written at the top of every emitted file.
#[derive(Debug, Clone)]
pub struct Header {
    pub command: String,
    pub config_hash: String,
}

impl Header {
    fn value(&self) -> Value {
        json!({
            "command": self.command,
            "config_sha256": self.config_hash,
            "turnpike": turnpike::VERSION,
            "turnpike_cli": env!("CARGO_PKG_VERSION"),
        })
    }
}

pub struct Output {
    pub dir: PathBuf,
    pub header: Header,
}

impl Output {
    pub fn new(dir: &Path, header: Header) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Output {
            dir: dir.to_path_buf(),
            header,
        })
    }

    pub fn sub(&self, name: &str) -> Result<Self> {
        Output::new(&self.dir.join(name), self.header.clone())
    }

    /// CSV preceded by `# key value` header lines.
    pub fn csv(&self, name: &str, body: &str) -> Result<PathBuf> {
        let h = &self.header;
        let text = format!(
            "# command {}\n# config_sha256 {}\n# turnpike {}\n# turnpike_cli {}\n{body}",
            h.command,
            h.config_hash,
            turnpike::VERSION,
            env!("CARGO_PKG_VERSION"),
        );
        self.write(name, &text)
    }

    /// JSON document `{"header": …, "data": …}`.
    pub fn json<T: Serialize>(&self, name: &str, data: &T) -> Result<PathBuf> {
        let doc = json!({ "header": self.header.value(), "data": data });
        self.write(name, &(serde_json::to_string_pretty(&doc)? + "\n"))
    }

    fn write(&self, name: &str, text: &str) -> Result<PathBuf> {
        let path = self.dir.join(name);
        fs::write(&path, text).with_context(|| format!("writing {}", path.display()))?;
        Ok(path)
    }
}

/// Payload of a JSON file written by [`Output::json`].
pub fn read_json_data(path: &Path) -> Result<Value> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut doc: Value = serde_json::from_str(&text)?;
    Ok(doc
        .get_mut("data")
        .map(Value::take)
        .with_context(|| format!("{} has no data block", path.display()))?)
}
