//! CSV serialisation of fields and tabulated inputs.
//!
//! Nodal fields: `index, x_1..x_d, value`. Cell fields: `index, centroid_1..d,
//! value(s)`. Tabulated inputs: `cell, value...`.

use std::io::{Read, Write};
use std::path::Path;

use crate::field::{CellField, ScalarField, VectorField};
use crate::mesh::Mesh;
use crate::{lit, to_f64, Error, Real, Result};

fn coord_headers(prefix: &str, d: usize) -> Vec<String> {
    (1..=d).map(|k| format!("{prefix}{k}")).collect()
}

fn write_rows<W: Write>(out: W, header: Vec<String>, rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(&header)?;
    for row in rows {
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

/// Shortest round-tripping decimal for the scalar.
fn fmt<T: Real>(x: T) -> String {
    format!("{:?}", to_f64(x))
}

pub fn write_scalar_field<T: Real, W: Write>(out: W, field: &ScalarField<T>, mesh: &Mesh<T>, name: &str) -> Result<()> {
    field.check_mesh(mesh)?;
    let mut header = vec!["index".to_string()];
    header.extend(coord_headers("x", mesh.coord_dim()));
    header.push(name.to_string());
    let rows = (0..mesh.num_nodes()).map(|i| {
        let mut r = vec![i.to_string()];
        r.extend(mesh.node(i).iter().map(|x| fmt(*x)));
        r.push(fmt(field.values()[i]));
        r
    });
    write_rows(out, header, rows)
}

pub fn write_cell_values<T: Real, W: Write>(out: W, values: &[T], mesh: &Mesh<T>, name: &str) -> Result<()> {
    if values.len() != mesh.num_cells() {
        return Err(Error::LengthMismatch {
            expected: mesh.num_cells(),
            got: values.len(),
        });
    }
    let mut header = vec!["index".to_string()];
    header.extend(coord_headers("c", mesh.coord_dim()));
    header.push(name.to_string());
    let rows = (0..mesh.num_cells()).map(|c| {
        let mut r = vec![c.to_string()];
        r.extend(mesh.centroid(c).iter().map(|x| fmt(*x)));
        r.push(fmt(values[c]));
        r
    });
    write_rows(out, header, rows)
}

pub fn write_cell_field<T: Real, W: Write>(out: W, field: &CellField<T>, mesh: &Mesh<T>, name: &str) -> Result<()> {
    write_cell_values(out, &field.values, mesh, name)
}

pub fn write_vector_field<T: Real, W: Write>(out: W, field: &VectorField<T>, mesh: &Mesh<T>, name: &str) -> Result<()> {
    let d = field.dim();
    let mut header = vec!["index".to_string()];
    header.extend(coord_headers("c", mesh.coord_dim()));
    header.extend(coord_headers(&format!("{name}_"), d));
    let rows = (0..mesh.num_cells()).map(|c| {
        let mut r = vec![c.to_string()];
        r.extend(mesh.centroid(c).iter().map(|x| fmt(*x)));
        r.extend(field.get(c).iter().map(|x| fmt(*x)));
        r
    });
    write_rows(out, header, rows)
}

/// A generic table with a header row.
pub fn write_table<W: Write>(out: W, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    write_rows(out, header.iter().map(|s| s.to_string()).collect(), rows.iter().cloned())
}

/// Reads `cell, v_1..v_k` rows (header required) into a `num_cells × k` table.
pub fn read_cell_table<T: Real, R: Read>(input: R, num_cells: usize, width: usize) -> Result<Vec<T>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let mut out = vec![T::nan(); num_cells * width];
    let mut seen = vec![false; num_cells];
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != width + 1 {
            return Err(Error::Config(format!("row {}: expected {} columns, got {}", line + 2, width + 1, rec.len())));
        }
        let cell: usize = rec[0]
            .parse()
            .map_err(|_| Error::Config(format!("row {}: bad cell index `{}`", line + 2, &rec[0])))?;
        if cell >= num_cells {
            return Err(Error::Config(format!("row {}: cell {cell} out of range (mesh has {num_cells})", line + 2)));
        }
        for k in 0..width {
            let v: f64 = rec[k + 1]
                .parse()
                .map_err(|_| Error::Config(format!("row {}: bad value `{}`", line + 2, &rec[k + 1])))?;
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("row {}", line + 2)));
            }
            out[cell * width + k] = lit(v);
        }
        seen[cell] = true;
    }
    if let Some(c) = seen.iter().position(|s| !s) {
        return Err(Error::Config(format!("table has no row for cell {c}")));
    }
    Ok(out)
}

pub fn read_cell_table_file<T: Real>(path: &Path, num_cells: usize, width: usize) -> Result<Vec<T>> {
    let f = std::fs::File::open(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
    read_cell_table(f, num_cells, width)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::MeshSpec;

    #[test]
    fn scalar_roundtrip_columns() {
        let m = Mesh::build(&MeshSpec::<f64>::unit_box(2, 2)).unwrap();
        let u = ScalarField::from_fn(&m, |x| x[0] + 10.0 * x[1]).unwrap();
        let mut buf = Vec::new();
        write_scalar_field(&mut buf, &u, &m, "u").unwrap();
        let s = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = s.lines().collect();
        assert_eq!(lines[0], "index,x1,x2,u");
        assert_eq!(lines.len(), 1 + m.num_nodes());
    }

    #[test]
    fn cell_table_roundtrip() {
        let m = Mesh::build(&MeshSpec::<f64>::radial(3, 0.1, 1.0, 5)).unwrap();
        let vals: Vec<f64> = (0..5).map(|c| 0.1 * c as f64 + 1.0 / 3.0).collect();
        let mut buf = Vec::new();
        write_cell_values(&mut buf, &vals, &m, "w").unwrap();
        // keep only index and value columns
        let s = String::from_utf8(buf).unwrap();
        let table: String = s
            .lines()
            .map(|l| {
                let f: Vec<&str> = l.split(',').collect();
                format!("{},{}\n", f[0], f[2])
            })
            .collect();
        let back: Vec<f64> = read_cell_table(table.as_bytes(), 5, 1).unwrap();
        assert_eq!(back, vals);
    }

    #[test]
    fn cell_table_errors() {
        assert!(read_cell_table::<f64, _>("cell,w\n0,1\n".as_bytes(), 2, 1).is_err());
        assert!(read_cell_table::<f64, _>("cell,w\n0,1\n5,1\n".as_bytes(), 2, 1).is_err());
        assert!(read_cell_table::<f64, _>("cell,w\n0,x\n1,1\n".as_bytes(), 2, 1).is_err());
        assert!(read_cell_table::<f64, _>("cell,w\n0,inf\n1,1\n".as_bytes(), 2, 1).is_err());
    }
}
