//! Spatial mollification with the polynomial bump `φ(y) = (1 - |y/ε|²)³`.
//!
//! Cell data are convolved with the kernel and renormalised by the discrete
//! kernel mass seen from each target cell, so constants are reproduced exactly.
//! Tensor meshes sample the kernel at cell centroids; radial meshes integrate
//! the `n`-dimensional kernel over whole shells (the convolution of a radial
//! function is radial again, and a radial vector field `g(r) x/|x|` keeps its
//! form with radial component `∫ φ_ε(x - y) g(|y|) cos∠(x, y) dy`).

use crate::mesh::{Mesh, Region};
use crate::quadrature::gauss_legendre;
use crate::{lit, Error, Real, Result};

/// Kernel exponent `k` in `(1 - |y/ε|²)^k`.
pub const BUMP_POWER: i32 = 3;

/// Unnormalised bump value at squared distance `d2`.
pub fn bump<T: Real>(d2: T, eps: T) -> T {
    let s = T::one() - d2 / (eps * eps);
    if s > T::zero() {
        s.powi(BUMP_POWER)
    } else {
        T::zero()
    }
}

/// Checks `eps` against the gap between `target` and the mesh boundary.
pub fn check_radius<T: Real>(mesh: &Mesh<T>, eps: T, target: &Region<T>) -> Result<()> {
    if !(eps > T::zero()) {
        return Err(Error::pre(format!("mollifier radius must be positive, got {eps}")));
    }
    let gap = mesh.region().gap(target);
    if !(eps < gap) {
        return Err(Error::OutsideDomain(format!(
            "eps {eps} too large: target subdomain is only {gap} from the boundary"
        )));
    }
    Ok(())
}

/// Convolution weights `(target cell, [(source cell, scalar weight, radial weight)])`.
struct Stencil<T> {
    rows: Vec<Vec<(usize, T, T)>>,
}

impl<T: Real> Stencil<T> {
    fn build(mesh: &Mesh<T>, eps: T) -> Self {
        match mesh.radial_nodes() {
            Some(nodes) => radial_stencil(mesh.dim(), nodes, eps),
            None => tensor_stencil(mesh, eps),
        }
    }

    fn apply_scalar(&self, values: &[T]) -> Vec<T> {
        self.rows
            .iter()
            .map(|row| {
                let z: T = row.iter().map(|r| r.1).sum();
                row.iter().map(|&(d, w, _)| w * values[d]).sum::<T>() / z
            })
            .collect()
    }

    fn apply_radial(&self, values: &[T]) -> Vec<T> {
        self.rows
            .iter()
            .map(|row| {
                let z: T = row.iter().map(|r| r.1).sum();
                row.iter().map(|&(d, _, w)| w * values[d]).sum::<T>() / z
            })
            .collect()
    }
}

fn tensor_stencil<T: Real>(mesh: &Mesh<T>, eps: T) -> Stencil<T> {
    let counts = mesh.tensor_counts().expect("tensor mesh");
    let spacing = mesh.widths();
    let dim = counts.len();
    let reach: Vec<isize> = spacing
        .iter()
        .map(|h| (eps / *h).floor().to_isize().unwrap_or(0))
        .collect();
    let mut offsets: Vec<(Vec<isize>, T)> = Vec::new();
    let mut cur = reach.iter().map(|r| -r).collect::<Vec<_>>();
    loop {
        let d2: T = cur
            .iter()
            .zip(&spacing)
            .map(|(k, h)| {
                let x = lit::<T>(*k as f64) * *h;
                x * x
            })
            .sum();
        let w = bump(d2, eps);
        if w > T::zero() {
            offsets.push((cur.clone(), w));
        }
        let mut axis = 0;
        loop {
            if axis == dim {
                break;
            }
            cur[axis] += 1;
            if cur[axis] > reach[axis] {
                cur[axis] = -reach[axis];
                axis += 1;
            } else {
                break;
            }
        }
        if axis == dim {
            break;
        }
    }
    let rows = (0..mesh.num_cells())
        .map(|c| {
            let mut multi = Vec::with_capacity(dim);
            let mut rem = c;
            for &n in counts {
                multi.push((rem % n) as isize);
                rem /= n;
            }
            offsets
                .iter()
                .filter_map(|(off, w)| {
                    let mut idx = 0usize;
                    let mut stride = 1usize;
                    for k in 0..dim {
                        let m = multi[k] + off[k];
                        if m < 0 || m >= counts[k] as isize {
                            return None;
                        }
                        idx += m as usize * stride;
                        stride *= counts[k];
                    }
                    Some((idx, *w * mesh.volume(idx), T::zero()))
                })
                .collect()
        })
        .collect();
    Stencil { rows }
}

/// `∫_{a<|y|<b} φ_ε(x - y) dy` and its `cos∠(x,y)`-weighted variant for `|x| = rho`.
fn shell_kernel<T: Real>(n: usize, rho: T, a: T, b: T, eps: T, gr: &(Vec<f64>, Vec<f64>), gt: &(Vec<f64>, Vec<f64>)) -> (T, T) {
    let (lo, hi) = (a.max(rho - eps).max(T::zero()), b.min(rho + eps));
    if !(hi > lo) {
        return (T::zero(), T::zero());
    }
    let two = lit::<T>(2.0);
    let area_lower = crate::quadrature::sphere_area::<T>(n - 1);
    let (mut s, mut v) = (T::zero(), T::zero());
    let half = (hi - lo) / two;
    let mid = (hi + lo) / two;
    for (x, w) in gr.0.iter().zip(&gr.1) {
        let r = mid + half * lit(*x);
        // angle where |x - y| = eps
        let c0 = ((rho * rho + r * r - eps * eps) / (two * rho * r)).max(-T::one()).min(T::one());
        let theta0 = c0.acos();
        if !(theta0 > T::zero()) {
            continue;
        }
        let (mut is, mut iv) = (T::zero(), T::zero());
        let th = theta0 / two;
        for (y, wt) in gt.0.iter().zip(&gt.1) {
            let t = th + th * lit(*y);
            let d2 = rho * rho + r * r - two * rho * r * t.cos();
            let f = bump(d2, eps) * t.sin().powi(n as i32 - 2) * lit(*wt) * th;
            is = is + f;
            iv = iv + f * t.cos();
        }
        let jac = lit::<T>(*w) * half * r.powi(n as i32 - 1) * area_lower;
        s = s + is * jac;
        v = v + iv * jac;
    }
    (s, v)
}

fn radial_stencil<T: Real>(n: usize, nodes: &[T], eps: T) -> Stencil<T> {
    let gr = gauss_legendre(6);
    let gt = gauss_legendre(12);
    let ncell = nodes.len() - 1;
    let two = lit::<T>(2.0);
    let rows = (0..ncell)
        .map(|c| {
            let rho = (nodes[c] + nodes[c + 1]) / two;
            let first = nodes.partition_point(|r| *r <= rho - eps).saturating_sub(1);
            let mut row = Vec::new();
            for d in first..ncell {
                if nodes[d] >= rho + eps {
                    break;
                }
                // subdivide each shell so that the kernel support boundary is resolved
                let pieces = 4;
                let (mut s, mut v) = (T::zero(), T::zero());
                for k in 0..pieces {
                    let a = nodes[d] + (nodes[d + 1] - nodes[d]) * lit(k as f64 / pieces as f64);
                    let b = nodes[d] + (nodes[d + 1] - nodes[d]) * lit((k + 1) as f64 / pieces as f64);
                    let (ps, pv) = shell_kernel(n, rho, a, b, eps, &gr, &gt);
                    s = s + ps;
                    v = v + pv;
                }
                if s > T::zero() {
                    row.push((d, s, v));
                }
            }
            if row.is_empty() {
                // kernel narrower than the quadrature can see: identity
                row.push((c, T::one(), T::one()));
            }
            row
        })
        .collect();
    Stencil { rows }
}

/// Mollified per-cell scalar data.
pub fn mollify_cells<T: Real>(mesh: &Mesh<T>, values: &[T], eps: T, target: &Region<T>) -> Result<Vec<T>> {
    if values.len() != mesh.num_cells() {
        return Err(Error::LengthMismatch {
            expected: mesh.num_cells(),
            got: values.len(),
        });
    }
    check_radius(mesh, eps, target)?;
    Ok(Stencil::build(mesh, eps).apply_scalar(values))
}

/// Mollified per-cell vector data (`grad_dim` components per cell).
pub fn mollify_vectors<T: Real>(mesh: &Mesh<T>, values: &[T], eps: T, target: &Region<T>) -> Result<Vec<T>> {
    let g = mesh.grad_dim();
    if values.len() != g * mesh.num_cells() {
        return Err(Error::LengthMismatch {
            expected: g * mesh.num_cells(),
            got: values.len(),
        });
    }
    check_radius(mesh, eps, target)?;
    let stencil = Stencil::build(mesh, eps);
    if mesh.is_radial() {
        return Ok(stencil.apply_radial(values));
    }
    let mut out = vec![T::zero(); values.len()];
    for k in 0..g {
        let comp: Vec<T> = (0..mesh.num_cells()).map(|c| values[c * g + k]).collect();
        for (c, v) in stencil.apply_scalar(&comp).into_iter().enumerate() {
            out[c * g + k] = v;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::MeshSpec;
    use approx::assert_relative_eq;

    fn full<T: Real>(m: &Mesh<T>, shrink: f64) -> Region<T> {
        match m.region() {
            Region::Annulus { inner, outer } => Region::Annulus {
                inner: inner + lit(shrink),
                outer: outer - lit(shrink),
            },
            Region::Box { lower, upper } => Region::Box {
                lower: lower.iter().map(|l| *l + lit(shrink)).collect(),
                upper: upper.iter().map(|u| *u - lit(shrink)).collect(),
            },
        }
    }

    #[test]
    fn constants_are_preserved() {
        let t = Mesh::build(&MeshSpec::<f64>::unit_box(2, 32)).unwrap();
        let out = mollify_cells(&t, &vec![2.5; t.num_cells()], 0.1, &full(&t, 0.2)).unwrap();
        assert!(out.iter().all(|v| (v - 2.5).abs() < 1e-13));
        let r = Mesh::build(&MeshSpec::<f64>::radial(3, 0.5, 1.5, 200)).unwrap();
        let out = mollify_cells(&r, &vec![2.5; r.num_cells()], 0.1, &full(&r, 0.2)).unwrap();
        assert!(out.iter().all(|v| (v - 2.5).abs() < 1e-13));
    }

    #[test]
    fn radius_too_large() {
        let t = Mesh::build(&MeshSpec::<f64>::unit_box(2, 16)).unwrap();
        assert!(mollify_cells(&t, &vec![1.0; 256], 0.25, &full(&t, 0.2)).is_err());
        assert!(mollify_cells(&t, &vec![1.0; 256], 0.0, &full(&t, 0.2)).is_err());
    }

    #[test]
    fn tensor_mass_preserved_for_interior_support() {
        let t = Mesh::build(&MeshSpec::<f64>::unit_box(2, 40)).unwrap();
        let f: Vec<f64> = (0..t.num_cells())
            .map(|c| {
                let x = t.centroid(c);
                let d = ((x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2)).sqrt();
                if d < 0.2 { 1.0 + x[0] } else { 0.0 }
            })
            .collect();
        let out = mollify_cells(&t, &f, 0.08, &full(&t, 0.1)).unwrap();
        let m0: f64 = f.iter().zip(t.volumes()).map(|(a, b)| a * b).sum();
        let m1: f64 = out.iter().zip(t.volumes()).map(|(a, b)| a * b).sum();
        assert_relative_eq!(m0, m1, max_relative = 1e-10);
    }

    #[test]
    fn radial_kernel_mass_matches_closed_form() {
        // ∫ (1 - |y|²/ε²)³ dy over R³ = 4π ε³ · 16/315
        let n = 3;
        let eps = 0.2;
        let gr = gauss_legendre(6);
        let gt = gauss_legendre(12);
        let mut s = 0.0;
        let pieces = 400;
        for k in 0..pieces {
            let a = 0.6 + 0.5 * k as f64 / pieces as f64;
            let b = 0.6 + 0.5 * (k + 1) as f64 / pieces as f64;
            s += shell_kernel(n, 0.85, a, b, eps, &gr, &gt).0;
        }
        let exact = 4.0 * std::f64::consts::PI * eps.powi(3) * 16.0 / 315.0;
        assert_relative_eq!(s, exact, max_relative = 1e-6);
    }
}
