//! The discrete weighted `p`-Dirichlet form shared by the solvers, the
//! form-bound estimator and the residual certificates.
//!
//! With `g_e = ∇u` on element `e` and cell weight `w_e`:
//!
//! - energy `Σ_e |e| w_e |g_e|^p`,
//! - flux pairing with hat `φ_i`: `Σ_e |e| w_e |g_e|^{p-2} g_e·∇φ_i`.

use rayon::prelude::*;

use crate::linalg::{DofMap, SparseMatrix};
use crate::mesh::Mesh;
use crate::{lit, Real};

/// Per-element constant gradients of `u`.
pub fn element_grads<T: Real>(mesh: &Mesh<T>, u: &[T]) -> Vec<T> {
    let g = mesh.grad_dim();
    let mut out = vec![T::zero(); mesh.elements().len() * g];
    out.par_chunks_mut(g)
        .zip(mesh.elements().par_iter())
        .for_each(|(chunk, e)| e.gradient_into(u, g, chunk));
    out
}

fn sq<T: Real>(v: &[T]) -> T {
    v.iter().map(|x| *x * *x).sum()
}

/// `Σ_e |e| w_e |∇u|^p`.
pub fn dirichlet_energy<T: Real>(mesh: &Mesh<T>, weights: &[T], p: T, u: &[T]) -> T {
    let g = mesh.grad_dim();
    let grads = element_grads(mesh, u);
    mesh.elements()
        .iter()
        .zip(grads.chunks(g))
        .map(|(e, ge)| e.volume * weights[e.cell] * sq(ge).sqrt().powf(p))
        .sum()
}

/// Flux pairings `a_i = Σ_e |e| w_e |g|^{p-2} g·∇φ_i` for every node, and the
/// magnitudes `Σ_e |e| w_e |g|^{p-1} |∇φ_i|` used to scale residuals.
pub fn fluxes<T: Real>(mesh: &Mesh<T>, weights: &[T], p: T, u: &[T]) -> (Vec<T>, Vec<T>) {
    let g = mesh.grad_dim();
    let grads = element_grads(mesh, u);
    let local: Vec<(T, T)> = mesh
        .elements()
        .par_iter()
        .zip(grads.par_chunks(g))
        .flat_map_iter(|(e, ge)| {
            let norm = sq(ge).sqrt();
            let coef = if norm > T::zero() {
                e.volume * weights[e.cell] * norm.powf(p - lit(2.0))
            } else {
                T::zero()
            };
            (0..e.nodes.len()).map(move |j| {
                let gphi = &e.grad[j * g..(j + 1) * g];
                let d: T = ge.iter().zip(gphi).map(|(a, b)| *a * *b).sum();
                (coef * d, coef * norm * sq(gphi).sqrt())
            })
        })
        .collect();
    let mut flux = vec![T::zero(); mesh.num_nodes()];
    let mut mag = vec![T::zero(); mesh.num_nodes()];
    let mut k = 0;
    for e in mesh.elements() {
        for &i in &e.nodes {
            flux[i] = flux[i] + local[k].0;
            mag[i] = mag[i] + local[k].1;
            k += 1;
        }
    }
    (flux, mag)
}

/// Assembles the (regularised) derivative of the flux map over free nodes:
/// `|e| w (|g|²+δ²)^{(p-2)/2} [∇φ_i·∇φ_j + (p-2)(g·∇φ_i)(g·∇φ_j)/(|g|²+δ²)]`.
pub fn assemble_jacobian<T: Real>(a: &mut SparseMatrix<T>, mesh: &Mesh<T>, weights: &[T], p: T, u: &[T], delta: T) {
    a.clear();
    let g = mesh.grad_dim();
    let grads = element_grads(mesh, u);
    let two = lit::<T>(2.0);
    let locals: Vec<Vec<T>> = mesh
        .elements()
        .par_iter()
        .zip(grads.par_chunks(g))
        .map(|(e, ge)| {
            let k = e.nodes.len();
            let s2 = sq(ge) + delta * delta;
            let mut local = vec![T::zero(); k * k];
            if !(s2 > T::zero()) {
                return local;
            }
            let coef = e.volume * weights[e.cell] * s2.powf((p - two) / two);
            let proj: Vec<T> = (0..k)
                .map(|j| (0..g).map(|c| ge[c] * e.grad[j * g + c]).sum())
                .collect();
            for i in 0..k {
                for j in 0..k {
                    let d: T = (0..g).map(|c| e.grad[i * g + c] * e.grad[j * g + c]).sum();
                    local[i * k + j] = coef * (d + (p - two) * proj[i] * proj[j] / s2);
                }
            }
            local
        })
        .collect();
    for (ei, local) in locals.iter().enumerate() {
        a.add_element(ei, local);
    }
}

/// Plain stiffness matrix `Σ_e |e| w_e ∇φ_i·∇φ_j` over free nodes.
pub fn stiffness<T: Real>(mesh: &Mesh<T>, dofs: &DofMap, weights: &[T]) -> SparseMatrix<T> {
    let mut a = SparseMatrix::for_mesh(mesh, dofs);
    let zero = vec![T::zero(); mesh.num_nodes()];
    assemble_jacobian(&mut a, mesh, weights, lit(2.0), &zero, T::one());
    a
}
