use std::io::Write;
use std::path::Path;

use agavqa_core::seed::sha256_hex;
use serde::Serialize;

use crate::Format;

pub type Error = Box<dyn std::error::Error + Send + Sync>;
pub type Result<T> = std::result::Result<T, Error>;

/// Reproducibility stamp carried by every report.
#[derive(Debug, Clone, Serialize)]
pub struct Stamp {
    pub tool: &'static str,
    pub version: &'static str,
    pub seed: u64,
    /// sha256 of the primary input file.
    pub manifest_digest: String,
}

impl Stamp {
    pub fn new(seed: u64, input: &[u8]) -> Self {
        Self {
            tool: "agavqa",
            version: env!("CARGO_PKG_VERSION"),
            seed,
            manifest_digest: sha256_hex(input),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Stamped<'a, T> {
    pub meta: &'a Stamp,
    #[serde(flatten)]
    pub report: &'a T,
}

pub fn read_input(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| format!("cannot read `{}`: {e}", path.display()).into())
}

/// Writes through a temporary file in the destination directory and renames
/// it into place, so a failed run never leaves a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    std::fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path)
        .map_err(|e| format!("cannot write `{}`: {}", path.display(), e.error))?;
    Ok(())
}

pub fn write_or_print(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => write_atomic(path, bytes),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes)?;
            stdout.flush()?;
            Ok(())
        }
    }
}

/// Renders `report` as pretty JSON (with the stamp) or as the given table.
pub fn render<T: Serialize>(stamp: &Stamp, report: &T, format: Format, table: impl FnOnce() -> String) -> Result<Vec<u8>> {
    match format {
        Format::Json => {
            let mut bytes = serde_json::to_vec_pretty(&Stamped { meta: stamp, report })?;
            bytes.push(b'\n');
            Ok(bytes)
        }
        Format::Table => {
            let mut text = format!(
                "{} {}  seed={}  manifest={}\n",
                stamp.tool, stamp.version, stamp.seed, stamp.manifest_digest
            );
            text.push_str(&table());
            if !text.ends_with('\n') {
                text.push('\n');
            }
            Ok(text.into_bytes())
        }
    }
}
