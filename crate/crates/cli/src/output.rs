use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use tempfile::NamedTempFile;

use crate::error::{CliError, CliResult};

/// Provenance block embedded in every artifact.
pub fn meta<T: Serialize>(command: &str, seed: u64, config: &T) -> Value {
    json!({
        "tool": env!("CARGO_BIN_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "seed": seed,
        "config": serde_json::to_value(config).expect("config serializes"),
    })
}

/// CSV body prefixed with a `# {meta}` comment line.
pub fn csv_with_meta(meta: &Value, body: &str) -> String {
    format!("# {meta}\n{body}")
}

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Where a command's artifacts go.
pub struct Sink {
    out: Option<PathBuf>,
}

impl Sink {
    pub fn new(out: Option<PathBuf>) -> Self {
        Self { out }
    }

    pub fn primary(&self, text: &str) -> CliResult<()> {
        match &self.out {
            Some(path) => atomic_write(path, text),
            None => {
                let mut stdout = std::io::stdout().lock();
                stdout
                    .write_all(text.as_bytes())
                    .and_then(|_| stdout.flush())
                    .map_err(|source| CliError::Io {
                        path: PathBuf::from("<stdout>"),
                        source,
                    })
            }
        }
    }

    /// Writes `<stem>.<kind>.<ext>` next to the primary output. Skipped when
    /// the primary goes to stdout.
    pub fn secondary(&self, kind: &str, ext: &str, text: &str) -> CliResult<()> {
        let Some(out) = &self.out else {
            return Ok(());
        };
        let stem = out
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "out".into());
        atomic_write(&out.with_file_name(format!("{stem}.{kind}.{ext}")), text)
    }
}

fn atomic_write(path: &Path, text: &str) -> CliResult<()> {
    let io_err = |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(text.as_bytes()).map_err(io_err)?;
    tmp.as_file().sync_all().map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}
