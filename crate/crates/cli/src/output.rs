//! Output files: a `#` comment header followed by CSV or text.

use std::path::{Path, PathBuf};

use crate::error::{CliError, Result};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Provenance lines written at the top of every output file.
#[derive(Debug, Clone)]
pub struct Header {
    pub hash: String,
    pub seed: Option<u64>,
    pub canonical: String,
    /// Extra `# key value` lines (diagnostics, provenance notes).
    pub notes: Vec<String>,
}

impl Header {
    pub fn render(&self) -> String {
        let mut s = format!("# suscept {VERSION}\n# config_sha256 {}\n", self.hash);
        match self.seed {
            Some(seed) => s.push_str(&format!("# seed {seed}\n")),
            None => s.push_str("# seed none\n"),
        }
        s.push_str(&format!("# config {}\n", self.canonical));
        for note in &self.notes {
            s.push_str(&format!("# {note}\n"));
        }
        s
    }

    pub fn with_notes(&self, notes: impl IntoIterator<Item = String>) -> Self {
        let mut h = self.clone();
        h.notes.extend(notes);
        h
    }
}

/// Writes `header` then whatever `body` produces to `path`.
pub fn write_with_header(
    path: &Path,
    header: &Header,
    body: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>,
) -> Result<PathBuf> {
    let mut buf = header.render().into_bytes();
    let werr = |source| CliError::Write { path: path.into(), source };
    body(&mut buf).map_err(werr)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(werr)?;
    }
    std::fs::write(path, buf).map_err(werr)?;
    log::info!("wrote {}", path.display());
    Ok(path.to_path_buf())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_lines() {
        let h = Header { hash: "ab".into(), seed: Some(3), canonical: "{}".into(), notes: vec!["x 1".into()] };
        assert_eq!(h.render(), format!("# suscept {VERSION}\n# config_sha256 ab\n# seed 3\n# config {{}}\n# x 1\n"));
    }
}
