//! Sparse symmetric systems over the free nodes of a mesh.

use crate::mesh::Mesh;
use crate::{lit, Error, Real, Result};

/// Maps mesh nodes to unknowns; fixed nodes map to `None`.
#[derive(Clone, Debug)]
pub struct DofMap {
    pub index: Vec<Option<usize>>,
    pub nodes: Vec<usize>,
}

impl DofMap {
    pub fn new(fixed: &[bool]) -> Self {
        let mut index = vec![None; fixed.len()];
        let mut nodes = Vec::new();
        for (i, &f) in fixed.iter().enumerate() {
            if !f {
                index[i] = Some(nodes.len());
                nodes.push(i);
            }
        }
        Self { index, nodes }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// CSR matrix with a fixed sparsity pattern derived from mesh elements.
#[derive(Clone, Debug)]
pub struct SparseMatrix<T> {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    vals: Vec<T>,
    /// For each element, the CSR slot of each (local i, local j) pair.
    slots: Vec<Vec<Option<usize>>>,
    tridiagonal: bool,
}

impl<T: Real> SparseMatrix<T> {
    pub fn for_mesh(mesh: &Mesh<T>, dofs: &DofMap) -> Self {
        let n = dofs.len();
        let mut rows: Vec<Vec<usize>> = vec![Vec::new(); n];
        for i in 0..n {
            rows[i].push(i);
        }
        for e in mesh.elements() {
            for &a in &e.nodes {
                if let Some(ia) = dofs.index[a] {
                    for &b in &e.nodes {
                        if let Some(ib) = dofs.index[b] {
                            rows[ia].push(ib);
                        }
                    }
                }
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        row_ptr.push(0);
        for row in &mut rows {
            row.sort_unstable();
            row.dedup();
            col_idx.extend_from_slice(row);
            row_ptr.push(col_idx.len());
        }
        let find = |i: usize, j: usize| -> usize {
            let r = &col_idx[row_ptr[i]..row_ptr[i + 1]];
            row_ptr[i] + r.binary_search(&j).expect("pattern contains pair")
        };
        let slots = mesh
            .elements()
            .iter()
            .map(|e| {
                let mut s = Vec::with_capacity(e.nodes.len() * e.nodes.len());
                for &a in &e.nodes {
                    for &b in &e.nodes {
                        s.push(match (dofs.index[a], dofs.index[b]) {
                            (Some(ia), Some(ib)) => Some(find(ia, ib)),
                            _ => None,
                        });
                    }
                }
                s
            })
            .collect();
        let tridiagonal = mesh.is_radial()
            && (0..n).all(|i| col_idx[row_ptr[i]..row_ptr[i + 1]].iter().all(|&j| j + 1 >= i && j <= i + 1));
        let nnz = col_idx.len();
        Self {
            n,
            row_ptr,
            col_idx,
            vals: vec![T::zero(); nnz],
            slots,
            tridiagonal,
        }
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn clear(&mut self) {
        self.vals.iter_mut().for_each(|v| *v = T::zero());
    }

    /// Adds `local[i * k + j]` for element `e` (with `k` local nodes).
    pub fn add_element(&mut self, e: usize, local: &[T]) {
        for (slot, v) in self.slots[e].iter().zip(local) {
            if let Some(s) = slot {
                self.vals[*s] = self.vals[*s] + *v;
            }
        }
    }

    pub fn add_diagonal(&mut self, i: usize, v: T) {
        let r = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        let s = self.row_ptr[i] + r.binary_search(&i).expect("diagonal in pattern");
        self.vals[s] = self.vals[s] + v;
    }

    pub fn diagonal(&self) -> Vec<T> {
        (0..self.n)
            .map(|i| {
                let r = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
                r.binary_search(&i)
                    .map(|k| self.vals[self.row_ptr[i] + k])
                    .unwrap_or(T::zero())
            })
            .collect()
    }

    pub fn mul(&self, x: &[T], y: &mut [T]) {
        for i in 0..self.n {
            let mut acc = T::zero();
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc = acc + self.vals[k] * x[self.col_idx[k]];
            }
            y[i] = acc;
        }
    }

    /// Solves `A x = b` for symmetric positive definite `A`.
    pub fn solve(&self, b: &[T]) -> Result<Vec<T>> {
        if self.n == 0 {
            return Ok(Vec::new());
        }
        if self.tridiagonal {
            self.solve_tridiagonal(b)
        } else {
            self.solve_pcg(b)
        }
    }

    fn entry(&self, i: usize, j: usize) -> T {
        let r = &self.col_idx[self.row_ptr[i]..self.row_ptr[i + 1]];
        r.binary_search(&j)
            .map(|k| self.vals[self.row_ptr[i] + k])
            .unwrap_or(T::zero())
    }

    fn solve_tridiagonal(&self, b: &[T]) -> Result<Vec<T>> {
        let n = self.n;
        let mut c_prime = vec![T::zero(); n];
        let mut d_prime = vec![T::zero(); n];
        let mut denom = self.entry(0, 0);
        if denom == T::zero() || !denom.is_finite() {
            return Err(Error::NonFinite("singular tridiagonal pivot".into()));
        }
        c_prime[0] = if n > 1 { self.entry(0, 1) / denom } else { T::zero() };
        d_prime[0] = b[0] / denom;
        for i in 1..n {
            let a = self.entry(i, i - 1);
            denom = self.entry(i, i) - a * c_prime[i - 1];
            if denom == T::zero() || !denom.is_finite() {
                return Err(Error::NonFinite("singular tridiagonal pivot".into()));
            }
            c_prime[i] = if i + 1 < n { self.entry(i, i + 1) / denom } else { T::zero() };
            d_prime[i] = (b[i] - a * d_prime[i - 1]) / denom;
        }
        let mut x = d_prime;
        for i in (0..n - 1).rev() {
            x[i] = x[i] - c_prime[i] * x[i + 1];
        }
        Ok(x)
    }

    fn solve_pcg(&self, b: &[T]) -> Result<Vec<T>> {
        let n = self.n;
        let diag = self.diagonal();
        if diag.iter().any(|d| !(*d > T::zero())) {
            return Err(Error::NonFinite("non-positive diagonal in PCG".into()));
        }
        let bnorm = dot(b, b).sqrt();
        let mut x = vec![T::zero(); n];
        if bnorm == T::zero() {
            return Ok(x);
        }
        let mut r = b.to_vec();
        let mut z: Vec<T> = r.iter().zip(&diag).map(|(r, d)| *r / *d).collect();
        let mut p = z.clone();
        let mut ap = vec![T::zero(); n];
        let mut rz = dot(&r, &z);
        let tol = lit::<T>(1e-13).max(T::epsilon() * lit(10.0)) * bnorm;
        let max_iter = 20 * n + 100;
        for _ in 0..max_iter {
            self.mul(&p, &mut ap);
            let pap = dot(&p, &ap);
            if !(pap > T::zero()) {
                return Err(Error::NonFinite("matrix not positive definite".into()));
            }
            let alpha = rz / pap;
            for i in 0..n {
                x[i] = x[i] + alpha * p[i];
                r[i] = r[i] - alpha * ap[i];
            }
            if dot(&r, &r).sqrt() <= tol {
                return Ok(x);
            }
            for i in 0..n {
                z[i] = r[i] / diag[i];
            }
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for i in 0..n {
                p[i] = z[i] + beta * p[i];
            }
        }
        let res = crate::to_f64(dot(&r, &r).sqrt() / bnorm);
        if res < 1e-8 {
            Ok(x)
        } else {
            Err(Error::NoConvergence {
                iterations: max_iter,
                residual: res,
            })
        }
    }
}

pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::MeshSpec;

    fn stiffness(mesh: &Mesh<f64>) -> (SparseMatrix<f64>, DofMap) {
        let dofs = DofMap::new(mesh.boundary_mask());
        let mut a = SparseMatrix::for_mesh(mesh, &dofs);
        let g = mesh.grad_dim();
        for (ei, e) in mesh.elements().iter().enumerate() {
            let k = e.nodes.len();
            let mut local = vec![0.0; k * k];
            for i in 0..k {
                for j in 0..k {
                    let d: f64 = (0..g).map(|c| e.grad[i * g + c] * e.grad[j * g + c]).sum();
                    local[i * k + j] = e.volume * d;
                }
            }
            a.add_element(ei, &local);
        }
        (a, dofs)
    }

    #[test]
    fn tridiagonal_and_pcg_agree_with_residual() {
        for mesh in [
            Mesh::build(&MeshSpec::<f64>::radial(3, 0.5, 1.5, 40)).unwrap(),
            Mesh::build(&MeshSpec::unit_box(2, 12)).unwrap(),
        ] {
            let (a, dofs) = stiffness(&mesh);
            let b: Vec<f64> = (0..dofs.len()).map(|i| ((i * 7) % 5) as f64 - 2.0).collect();
            let x = a.solve(&b).unwrap();
            let mut ax = vec![0.0; b.len()];
            a.mul(&x, &mut ax);
            let err = ax.iter().zip(&b).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            assert!(err < 1e-9, "{err}");
        }
    }
}
