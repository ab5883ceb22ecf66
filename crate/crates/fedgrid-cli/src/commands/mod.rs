//! Subcommand implementations.

pub mod eval;
pub mod gradcheck;
pub mod simulate;
pub mod train;

use std::path::Path;

use anyhow::{Context, Result};

/// Write a CSV file with a header and preformatted rows.
pub(crate) fn write_csv(path: &Path, header: &str, rows: impl IntoIterator<Item = String>) -> Result<()> {
    use std::io::Write;
    let mut f = std::fs::File::create(path)
        .with_context(|| format!("cannot create {}", path.display()))?;
    writeln!(f, "{header}")?;
    for row in rows {
        writeln!(f, "{row}")?;
    }
    Ok(())
}

pub(crate) fn ensure_output_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("cannot create output directory {}", dir.display()))
}
