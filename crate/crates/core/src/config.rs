//! Key=value run configuration with bracketed sections.
//!
//! ```text
//! [problem]
//! n = 3
//! p = 2
//! seed = 7
//!
//! [mesh]
//! kind = radial        # radial | box
//! inner = 0.05
//! outer = 1
//! cells = 2048
//!
//! [operator]
//! kind = p_laplacian   # p_laplacian | step | oscillating | tabulated
//!
//! [weight]
//! kind = hardy         # zero | hardy | oscillating | bump | table
//! t = 0.75
//! ```
//!
//! Relative paths are resolved against the directory of the configuration file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use ini::Ini;

use crate::field::{CellField, VectorField};
use crate::io::read_cell_table_file;
use crate::mesh::{Mesh, MeshSpec};
use crate::operators::{Coefficient, OperatorSpec};
use crate::params::ProblemParams;
use crate::weights::{bump_weight, hardy_weight, oscillating_weight, Weight};
use crate::{lit, Error, Real, Result};

#[derive(Clone, Debug, Default)]
pub struct ConfigFile {
    sections: BTreeMap<String, BTreeMap<String, String>>,
    base: PathBuf,
}

impl ConfigFile {
    pub fn parse(text: &str, base: impl Into<PathBuf>) -> Result<Self> {
        let ini = Ini::load_from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut sections: BTreeMap<String, BTreeMap<String, String>> = BTreeMap::new();
        for (name, props) in ini.iter() {
            let entry = sections.entry(name.unwrap_or("").to_string()).or_default();
            for (k, v) in props.iter() {
                entry.insert(k.to_string(), strip_comment(v).to_string());
            }
        }
        Ok(Self { sections, base: base.into() })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::parse(&text, base)
    }

    pub fn is_empty(&self) -> bool {
        self.sections.values().all(|s| s.is_empty())
    }

    pub fn has_section(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    pub fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section).and_then(|s| s.get(key)).map(String::as_str)
    }

    /// Command-line style override `section.key = value`.
    pub fn set(&mut self, section: &str, key: &str, value: impl Into<String>) {
        self.sections.entry(section.into()).or_default().insert(key.into(), value.into());
    }

    pub fn get<V: FromStr>(&self, section: &str, key: &str) -> Result<Option<V>> {
        match self.raw(section, key) {
            None => Ok(None),
            Some(s) => s
                .parse()
                .map(Some)
                .map_err(|_| Error::Config(format!("[{section}] {key}: cannot parse `{s}`"))),
        }
    }

    pub fn require<V: FromStr>(&self, section: &str, key: &str) -> Result<V> {
        self.get(section, key)?
            .ok_or_else(|| Error::Config(format!("[{section}] missing required key `{key}`")))
    }

    pub fn get_or<V: FromStr>(&self, section: &str, key: &str, default: V) -> Result<V> {
        Ok(self.get(section, key)?.unwrap_or(default))
    }

    /// Comma-separated list.
    pub fn list<V: FromStr>(&self, section: &str, key: &str) -> Result<Option<Vec<V>>> {
        match self.raw(section, key) {
            None => Ok(None),
            Some(s) => s
                .split(',')
                .map(|x| x.trim().parse())
                .collect::<std::result::Result<Vec<V>, _>>()
                .map(Some)
                .map_err(|_| Error::Config(format!("[{section}] {key}: cannot parse list `{s}`"))),
        }
    }

    /// Resolves a path key and checks that the file exists.
    pub fn path(&self, section: &str, key: &str) -> Result<Option<PathBuf>> {
        match self.raw(section, key) {
            None => Ok(None),
            Some(s) => {
                let p = self.base.join(s);
                if !p.is_file() {
                    return Err(Error::Config(format!("[{section}] {key}: file not found: {}", p.display())));
                }
                Ok(Some(p))
            }
        }
    }

    pub fn problem<T: Real>(&self) -> Result<ProblemParams<T>> {
        let n: usize = self.require("problem", "n")?;
        let p: f64 = self.require("problem", "p")?;
        ProblemParams::new(n, lit(p))
    }

    pub fn seed(&self) -> Result<Option<u64>> {
        self.get("problem", "seed")
    }

    /// `[mesh]`, or the keys of the file named by `[mesh] file`.
    pub fn mesh_spec<T: Real>(&self, n: usize) -> Result<MeshSpec<T>> {
        if let Some(path) = self.path("mesh", "file")? {
            let inner = ConfigFile::load(&path)?;
            let section = if inner.has_section("mesh") { "mesh" } else { "" };
            return inner.mesh_section(section, n);
        }
        self.mesh_section("mesh", n)
    }

    fn mesh_section<T: Real>(&self, section: &str, n: usize) -> Result<MeshSpec<T>> {
        let kind: String = self.get_or(section, "kind", "radial".to_string())?;
        match kind.as_str() {
            "radial" => {
                let inner: f64 = self.require(section, "inner")?;
                let outer: f64 = self.require(section, "outer")?;
                let cells: usize = self.require(section, "cells")?;
                Ok(match self.get::<f64>(section, "grading")? {
                    Some(g) => MeshSpec::graded(n, lit(inner), lit(outer), cells, lit(g)),
                    None => MeshSpec::radial(n, lit(inner), lit(outer), cells),
                })
            }
            "box" => {
                let lower: Vec<f64> = self.list(section, "lower")?.unwrap_or_else(|| vec![0.0; n]);
                let upper: Vec<f64> = self.list(section, "upper")?.unwrap_or_else(|| vec![1.0; n]);
                let cells: Vec<usize> = self
                    .list(section, "cells")?
                    .ok_or_else(|| Error::Config(format!("[{section}] missing required key `cells`")))?;
                let cells = if cells.len() == 1 { vec![cells[0]; n] } else { cells };
                if lower.len() != n || upper.len() != n || cells.len() != n {
                    return Err(Error::Config(format!("[mesh] box needs {n} entries for lower, upper and cells")));
                }
                Ok(MeshSpec::Tensor {
                    lower: lower.into_iter().map(lit).collect(),
                    upper: upper.into_iter().map(lit).collect(),
                    cells,
                })
            }
            other => Err(Error::Config(format!("[mesh] unknown kind `{other}`"))),
        }
    }

    pub fn operator<T: Real>(&self, p: T, mesh: &Mesh<T>) -> Result<OperatorSpec<T>> {
        let kind: String = self.get_or("operator", "kind", "p_laplacian".to_string())?;
        match kind.as_str() {
            "p_laplacian" => Ok(OperatorSpec::p_laplacian(p)),
            "step" => OperatorSpec::scalar_weighted(
                p,
                Coefficient::Step {
                    axis: self.get_or("operator", "axis", 0)?,
                    at: lit(self.require::<f64>("operator", "at")?),
                    below: lit(self.require::<f64>("operator", "below")?),
                    above: lit(self.require::<f64>("operator", "above")?),
                },
            ),
            "oscillating" => OperatorSpec::scalar_weighted(
                p,
                Coefficient::Oscillating {
                    base: lit(self.get_or::<f64>("operator", "base", 1.0)?),
                    amplitude: lit(self.require::<f64>("operator", "amplitude")?),
                    frequency: lit(self.require::<f64>("operator", "frequency")?),
                },
            ),
            "tabulated" => {
                let path = self
                    .path("operator", "file")?
                    .ok_or_else(|| Error::Config("[operator] tabulated needs `file`".into()))?;
                let values = read_cell_table_file(&path, mesh.num_cells(), 1)?;
                OperatorSpec::tabulated(p, Arc::new(mesh.clone()), values)
            }
            other => Err(Error::Config(format!("[operator] unknown kind `{other}`"))),
        }
    }

    pub fn weight<T: Real>(&self, params: &ProblemParams<T>, mesh: &Mesh<T>) -> Result<Weight<T>> {
        let kind: String = self.get_or("weight", "kind", "zero".to_string())?;
        let scale: f64 = self.get_or("weight", "scale", 1.0)?;
        let w = match kind.as_str() {
            "zero" => Weight::zero(mesh),
            "hardy" => hardy_weight(params, lit(self.require::<f64>("weight", "t")?), mesh)?,
            "oscillating" => oscillating_weight(
                mesh,
                lit(self.require::<f64>("weight", "amplitude")?),
                lit(self.require::<f64>("weight", "frequency")?),
            )?,
            "bump" => {
                let center: Vec<f64> = self.list("weight", "center")?.unwrap_or_else(|| vec![0.0; mesh.coord_dim()]);
                let center: Vec<T> = center.into_iter().map(lit).collect();
                bump_weight(
                    mesh,
                    &center,
                    lit(self.require::<f64>("weight", "radius")?),
                    lit(self.require::<f64>("weight", "amplitude")?),
                )?
            }
            "table" => {
                let density = match self.path("weight", "density")? {
                    Some(p) => Some(CellField::new(mesh, read_cell_table_file(&p, mesh.num_cells(), 1)?)?),
                    None => None,
                };
                let gamma = match self.path("weight", "gamma")? {
                    Some(p) => {
                        let g = mesh.grad_dim();
                        Some(VectorField::new(mesh, read_cell_table_file(&p, mesh.num_cells(), g)?)?)
                    }
                    None => None,
                };
                Weight::new(density, gamma).map_err(|_| Error::Config("[weight] table needs `density` and/or `gamma`".into()))?
            }
            other => return Err(Error::Config(format!("[weight] unknown kind `{other}`"))),
        };
        Ok(if scale == 1.0 { w } else { w.scaled(lit(scale)) })
    }
}

fn strip_comment(v: &str) -> &str {
    match v.find(" #") {
        Some(i) => v[..i].trim(),
        None => v.trim(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const HARDY: &str = "[problem]\nn = 3\np = 2\nseed = 7\n\n[mesh]\nkind = radial # shells\ninner = 0.05\nouter = 1\ncells = 64\n\n[weight]\nkind = hardy\nt = 0.75\n";

    #[test]
    fn parses_sections() {
        let c = ConfigFile::parse(HARDY, ".").unwrap();
        let p = c.problem::<f64>().unwrap();
        assert_eq!((p.n, p.p), (3, 2.0));
        assert_eq!(c.seed().unwrap(), Some(7));
        let m = Mesh::build(&c.mesh_spec::<f64>(3).unwrap()).unwrap();
        assert_eq!(m.num_cells(), 64);
        let w = c.weight(&p, &m).unwrap();
        assert!(w.density.is_some());
        assert!(c.operator(2.0, &m).unwrap().is_spatially_constant());
    }

    #[test]
    fn overrides_and_errors() {
        let mut c = ConfigFile::parse(HARDY, ".").unwrap();
        c.set("mesh", "cells", "32");
        assert_eq!(c.require::<usize>("mesh", "cells").unwrap(), 32);
        c.set("mesh", "cells", "many");
        assert!(matches!(c.mesh_spec::<f64>(3), Err(Error::Config(_))));
        c.set("weight", "kind", "table");
        c.set("weight", "density", "no/such/file.csv");
        let m = Mesh::build(&MeshSpec::<f64>::radial(3, 0.05, 1.0, 8)).unwrap();
        let err = c.weight(&c.problem::<f64>().unwrap(), &m).unwrap_err().to_string();
        assert!(err.contains("no/such/file.csv"), "{err}");
        assert!(ConfigFile::parse("", ".").unwrap().is_empty());
    }

    #[test]
    fn box_mesh() {
        let c = ConfigFile::parse("[mesh]\nkind = box\ncells = 4\nupper = 2, 2\n", ".").unwrap();
        match c.mesh_spec::<f64>(2).unwrap() {
            MeshSpec::Tensor { upper, cells, .. } => {
                assert_eq!(upper, vec![2.0, 2.0]);
                assert_eq!(cells, vec![4, 4]);
            }
            _ => panic!("expected a box"),
        }
    }
}
