//! Nodal scalar fields, per-cell scalar fields and per-cell vector fields.

use std::sync::OnceLock;

use crate::mesh::Mesh;
use crate::{lit, Error, Real, Result};

/// One value per mesh node, with a lazily computed cellwise gradient.
#[derive(Debug)]
pub struct ScalarField<T> {
    mesh_id: u64,
    values: Vec<T>,
    gradient: OnceLock<VectorField<T>>,
}

impl<T: Clone> Clone for ScalarField<T> {
    fn clone(&self) -> Self {
        Self {
            mesh_id: self.mesh_id,
            values: self.values.clone(),
            gradient: OnceLock::new(),
        }
    }
}

impl<T: Real> ScalarField<T> {
    pub fn new(mesh: &Mesh<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != mesh.num_nodes() {
            return Err(Error::LengthMismatch {
                expected: mesh.num_nodes(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("node {i}")));
        }
        Ok(Self {
            mesh_id: mesh.id(),
            values,
            gradient: OnceLock::new(),
        })
    }

    pub fn constant(mesh: &Mesh<T>, value: T) -> Self {
        Self::new(mesh, vec![value; mesh.num_nodes()]).expect("finite constant")
    }

    /// Samples `f` at every node (radial nodes are passed as `[r]`).
    pub fn from_fn(mesh: &Mesh<T>, f: impl Fn(&[T]) -> T) -> Result<Self> {
        let values = (0..mesh.num_nodes()).map(|i| f(mesh.node(i))).collect();
        Self::new(mesh, values)
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn mesh_id(&self) -> u64 {
        self.mesh_id
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Applies `f` to every value; clears the gradient cache.
    pub fn map(&self, mesh: &Mesh<T>, f: impl Fn(T) -> T) -> Result<Self> {
        Self::new(mesh, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn scale_in_place(&mut self, s: T) {
        self.values.iter_mut().for_each(|v| *v = *v * s);
        self.gradient = OnceLock::new();
    }

    pub fn min(&self) -> T {
        self.values.iter().copied().fold(T::infinity(), T::min)
    }

    pub fn max(&self) -> T {
        self.values.iter().copied().fold(T::neg_infinity(), T::max)
    }

    pub fn check_mesh(&self, mesh: &Mesh<T>) -> Result<()> {
        if self.mesh_id != mesh.id() || self.values.len() != mesh.num_nodes() {
            return Err(Error::LengthMismatch {
                expected: mesh.num_nodes(),
                got: self.values.len(),
            });
        }
        Ok(())
    }

    /// Cellwise gradient (cached).
    pub fn gradient(&self, mesh: &Mesh<T>) -> Result<&VectorField<T>> {
        self.check_mesh(mesh)?;
        if self.gradient.get().is_none() {
            let g = gradient(self, mesh)?;
            let _ = self.gradient.set(g);
        }
        Ok(self.gradient.get().expect("gradient cache initialised"))
    }

    /// Value at each cell centroid (mean over the cell's elements' midpoints).
    pub fn cell_values(&self, mesh: &Mesh<T>) -> Vec<T> {
        (0..mesh.num_cells())
            .map(|c| {
                let els = mesh.cell_elements(c);
                let s: T = els.iter().map(|e| e.midpoint_value(&self.values)).sum();
                s / lit(els.len() as f64)
            })
            .collect()
    }
}

/// One value per cell.
#[derive(Clone, Debug, PartialEq)]
pub struct CellField<T> {
    pub values: Vec<T>,
}

impl<T: Real> CellField<T> {
    pub fn new(mesh: &Mesh<T>, values: Vec<T>) -> Result<Self> {
        if values.len() != mesh.num_cells() {
            return Err(Error::LengthMismatch {
                expected: mesh.num_cells(),
                got: values.len(),
            });
        }
        if let Some(c) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("cell {c}")));
        }
        Ok(Self { values })
    }

    /// Samples `f` at every cell centroid.
    pub fn from_fn(mesh: &Mesh<T>, f: impl Fn(&[T]) -> T) -> Result<Self> {
        Self::new(mesh, (0..mesh.num_cells()).map(|c| f(mesh.centroid(c))).collect())
    }

    pub fn zeros(mesh: &Mesh<T>) -> Self {
        Self {
            values: vec![T::zero(); mesh.num_cells()],
        }
    }
}

/// One vector per cell. Radial meshes store the radial component only.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField<T> {
    dim: usize,
    values: Vec<T>,
}

impl<T: Real> VectorField<T> {
    pub fn new(mesh: &Mesh<T>, values: Vec<T>) -> Result<Self> {
        let dim = mesh.grad_dim();
        if values.len() != dim * mesh.num_cells() {
            return Err(Error::LengthMismatch {
                expected: dim * mesh.num_cells(),
                got: values.len(),
            });
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("vector component {i}")));
        }
        Ok(Self { dim, values })
    }

    pub fn zeros(mesh: &Mesh<T>) -> Self {
        Self {
            dim: mesh.grad_dim(),
            values: vec![T::zero(); mesh.grad_dim() * mesh.num_cells()],
        }
    }

    /// Samples `f` at cell centroids; `f` returns `grad_dim` components.
    pub fn from_fn(mesh: &Mesh<T>, f: impl Fn(&[T]) -> Vec<T>) -> Result<Self> {
        let mut values = Vec::with_capacity(mesh.grad_dim() * mesh.num_cells());
        for c in 0..mesh.num_cells() {
            let v = f(mesh.centroid(c));
            if v.len() != mesh.grad_dim() {
                return Err(Error::LengthMismatch {
                    expected: mesh.grad_dim(),
                    got: v.len(),
                });
            }
            values.extend(v);
        }
        Self::new(mesh, values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_cells(&self) -> usize {
        self.values.len() / self.dim.max(1)
    }

    pub fn get(&self, c: usize) -> &[T] {
        &self.values[c * self.dim..(c + 1) * self.dim]
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn norms(&self) -> Vec<T> {
        self.values
            .chunks(self.dim)
            .map(|v| v.iter().map(|x| *x * *x).sum::<T>().sqrt())
            .collect()
    }

    pub fn scaled(&self, s: T) -> Self {
        Self {
            dim: self.dim,
            values: self.values.iter().map(|v| *v * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if other.values.len() != self.values.len() {
            return Err(Error::LengthMismatch {
                expected: self.values.len(),
                got: other.values.len(),
            });
        }
        Ok(Self {
            dim: self.dim,
            values: self.values.iter().zip(&other.values).map(|(a, b)| *a + *b).collect(),
        })
    }

    pub fn restrict(&self, cell_map: &[usize]) -> Self {
        let mut values = Vec::with_capacity(cell_map.len() * self.dim);
        for &c in cell_map {
            values.extend_from_slice(self.get(c));
        }
        Self { dim: self.dim, values }
    }
}

/// Per-element gradients, `elements × grad_dim`.
pub fn element_gradients<T: Real>(mesh: &Mesh<T>, u: &[T]) -> Vec<T> {
    let gdim = mesh.grad_dim();
    let mut out = vec![T::zero(); mesh.elements().len() * gdim];
    for (e, chunk) in mesh.elements().iter().zip(out.chunks_mut(gdim)) {
        e.gradient_into(u, gdim, chunk);
    }
    out
}

/// Cellwise gradient: difference quotient on radial cells, volume average of
/// the Kuhn-simplex gradients (the affine least-squares fit) on tensor boxes.
pub fn gradient<T: Real>(field: &ScalarField<T>, mesh: &Mesh<T>) -> Result<VectorField<T>> {
    field.check_mesh(mesh)?;
    let gdim = mesh.grad_dim();
    let mut values = vec![T::zero(); gdim * mesh.num_cells()];
    let mut g = vec![T::zero(); gdim];
    for c in 0..mesh.num_cells() {
        let els = mesh.cell_elements(c);
        let vol: T = els.iter().map(|e| e.volume).sum();
        if !(vol > T::zero()) {
            return Err(Error::Mesh(format!("degenerate cell {c}")));
        }
        for e in els {
            e.gradient_into(field.values(), gdim, &mut g);
            for k in 0..gdim {
                values[c * gdim + k] = values[c * gdim + k] + g[k] * e.volume / vol;
            }
        }
    }
    VectorField::new(mesh, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::MeshSpec;
    use approx::assert_abs_diff_eq;

    #[test]
    fn constant_has_zero_gradient() {
        let m = Mesh::build(&MeshSpec::<f64>::unit_box(2, 5)).unwrap();
        let u = ScalarField::constant(&m, 3.0);
        assert!(u.gradient(&m).unwrap().values().iter().all(|g| g.abs() < 1e-14));
    }

    #[test]
    fn affine_exact_on_tensor() {
        for dim in [2, 3] {
            let m = Mesh::build(&MeshSpec::Tensor {
                lower: vec![-1.0; dim],
                upper: vec![2.0; dim],
                cells: vec![5; dim],
            })
            .unwrap();
            let slope: Vec<f64> = (0..dim).map(|k| 0.5 + k as f64).collect();
            let u = ScalarField::from_fn(&m, |x| {
                1.0 + x.iter().zip(&slope).map(|(a, b)| a * b).sum::<f64>()
            })
            .unwrap();
            let g = u.gradient(&m).unwrap();
            for c in 0..m.num_cells() {
                for k in 0..dim {
                    assert_abs_diff_eq!(g.get(c)[k], slope[k], epsilon = 1e-12);
                }
            }
            let x1 = ScalarField::from_fn(&m, |x| x[0]).unwrap();
            for e in element_gradients(&m, x1.values()).chunks(dim) {
                assert_abs_diff_eq!(e[0], 1.0, epsilon = 1e-13);
                assert!(e[1..].iter().all(|v| v.abs() < 1e-13));
            }
        }
    }

    #[test]
    fn radial_square_gradient() {
        // oracle: d/dr r^2 = 2r at the cell midpoint
        let m = Mesh::build(&MeshSpec::<f64>::graded(3, 0.1, 1.0, 64, 1.03)).unwrap();
        let u = ScalarField::from_fn(&m, |x| x[0] * x[0]).unwrap();
        let g = u.gradient(&m).unwrap();
        for c in 0..m.num_cells() {
            assert_abs_diff_eq!(g.get(c)[0], 2.0 * m.centroid(c)[0], epsilon = 1e-12);
        }
    }

    #[test]
    fn cache_matches_recompute() {
        let m = Mesh::build(&MeshSpec::<f64>::unit_box(2, 7)).unwrap();
        let u = ScalarField::from_fn(&m, |x| (3.0 * x[0]).sin() * x[1]).unwrap();
        let cached = u.gradient(&m).unwrap().clone();
        let fresh = gradient(&u, &m).unwrap();
        for (a, b) in cached.values().iter().zip(fresh.values()) {
            assert!((a - b).abs() <= 1e-14);
        }
    }

    #[test]
    fn rejects_nonfinite() {
        let m = Mesh::build(&MeshSpec::<f64>::radial(3, 1.0, 2.0, 4)).unwrap();
        assert!(ScalarField::new(&m, vec![1.0, f64::NAN, 1.0, 1.0, 1.0]).is_err());
        assert!(ScalarField::new(&m, vec![1.0; 4]).is_err());
    }
}
