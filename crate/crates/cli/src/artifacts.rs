//! Output staging: everything is rendered in memory and written only after
//! the command has succeeded, so a failed run leaves the output directory untouched.

use std::path::Path;

use formbound::field::{ScalarField, VectorField};
use formbound::mesh::Mesh;

use crate::error::{CliError, CliResult};

#[derive(Default)]
pub struct Artifacts {
    files: Vec<(String, Vec<u8>)>,
    pub summary: String,
}

impl Artifacts {
    pub fn line(&mut self, s: impl AsRef<str>) {
        self.summary.push_str(s.as_ref());
        self.summary.push('\n');
    }

    pub fn add(&mut self, name: &str, bytes: Vec<u8>) {
        self.files.push((name.to_string(), bytes));
    }

    pub fn scalar(&mut self, name: &str, field: &ScalarField<f64>, mesh: &Mesh<f64>, column: &str) -> CliResult<()> {
        let mut buf = Vec::new();
        formbound::io::write_scalar_field(&mut buf, field, mesh, column)?;
        self.add(name, buf);
        Ok(())
    }

    pub fn vector(&mut self, name: &str, field: &VectorField<f64>, mesh: &Mesh<f64>, column: &str) -> CliResult<()> {
        let mut buf = Vec::new();
        formbound::io::write_vector_field(&mut buf, field, mesh, column)?;
        self.add(name, buf);
        Ok(())
    }

    pub fn table(&mut self, name: &str, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
        let mut buf = Vec::new();
        formbound::io::write_table(&mut buf, header, rows)?;
        self.add(name, buf);
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.files.iter().map(|(n, _)| n.as_str())
    }

    /// Writes all files plus `summary.txt` into `dir`.
    pub fn commit(&self, dir: &Path) -> CliResult<()> {
        std::fs::create_dir_all(dir).map_err(|e| CliError::Input(format!("{}: {e}", dir.display())))?;
        for (name, bytes) in &self.files {
            std::fs::write(dir.join(name), bytes)?;
        }
        std::fs::write(dir.join("summary.txt"), &self.summary)?;
        Ok(())
    }
}

/// Shortest round-tripping decimal.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}
