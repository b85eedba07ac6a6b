//! Midpoint quadrature over meshes and partial-ball volumes.

use crate::mesh::Mesh;
use crate::{lit, Error, Real, Result};

/// Surface area `ω_{n-1}` of the unit sphere in `R^n`.
pub fn sphere_area<T: Real>(n: usize) -> T {
    match n {
        0 => T::zero(),
        1 => lit(2.0),
        2 => lit::<T>(2.0) * T::PI(),
        _ => lit::<T>(2.0) * T::PI() * sphere_area::<T>(n - 2) / lit((n - 2) as f64),
    }
}

/// Volume of the unit ball in `R^n`.
pub fn ball_volume<T: Real>(n: usize) -> T {
    sphere_area::<T>(n) / lit(n as f64)
}

/// `∫ density dx` with one value per cell.
pub fn integrate<T: Real>(density: &[T], mesh: &Mesh<T>) -> Result<T> {
    if density.len() != mesh.num_cells() {
        return Err(Error::LengthMismatch {
            expected: mesh.num_cells(),
            got: density.len(),
        });
    }
    Ok(density.iter().zip(mesh.volumes()).map(|(f, v)| *f * *v).sum())
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pm = if m == 1 { z } else { p1 };
            let pm1 = if m == 1 { 1.0 } else { p0 };
            dp = m as f64 * (z * pm - pm1) / (z * z - 1.0);
            let dz = pm / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[m - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[m - 1 - i] = w[i];
    }
    (x, w)
}

/// `∫_0^θ sin^k(t) dt`.
pub fn sin_power_integral<T: Real>(k: usize, theta: T) -> T {
    match k {
        0 => theta,
        1 => T::one() - theta.cos(),
        _ => {
            let kf = lit::<T>(k as f64);
            -theta.sin().powi(k as i32 - 1) * theta.cos() / kf
                + (kf - T::one()) / kf * sin_power_integral(k - 2, theta)
        }
    }
}

/// Fraction of the sphere `|y| = r` in `R^n` lying inside `B(x0, s)` with `|x0| = rho`.
pub fn cap_fraction<T: Real>(n: usize, r: T, rho: T, s: T) -> T {
    if rho == T::zero() {
        return if r <= s { T::one() } else { T::zero() };
    }
    if r + rho <= s {
        return T::one();
    }
    if r >= rho + s || r <= rho - s || r == T::zero() {
        return T::zero();
    }
    let cos0 = ((r * r + rho * rho - s * s) / (lit::<T>(2.0) * r * rho)).max(-T::one()).min(T::one());
    let theta0 = cos0.acos();
    sin_power_integral(n - 2, theta0) / sin_power_integral(n - 2, T::PI())
}

/// A ball `B(center, radius)`. On radial meshes the center is a radius.
#[derive(Clone, Debug, PartialEq)]
pub struct Ball<T> {
    pub center: Vec<T>,
    pub radius: T,
}

impl<T: Real> Ball<T> {
    pub fn new(center: Vec<T>, radius: T) -> Self {
        Self { center, radius }
    }

    pub fn scaled(&self, factor: T) -> Self {
        Self {
            center: self.center.clone(),
            radius: self.radius * factor,
        }
    }
}

/// Per-cell volume of `cell ∩ ball`, as `(cell, volume)` pairs with positive volume.
///
/// Radial meshes use the exact shell overlap for balls at the origin and
/// spherical-cap fractions (4-point Gauss per piece) otherwise; tensor meshes
/// count cells by centroid.
pub fn ball_cell_volumes<T: Real>(mesh: &Mesh<T>, ball: &Ball<T>) -> Vec<(usize, T)> {
    let n = mesh.dim();
    let s = ball.radius;
    let mut out = Vec::new();
    if let Some(nodes) = mesh.radial_nodes() {
        let area = sphere_area::<T>(n);
        let nd = lit::<T>(n as f64);
        let rho = ball.center[0];
        let (lo, hi) = if rho == T::zero() {
            (T::zero(), s)
        } else {
            ((rho - s).max(T::zero()), rho + s)
        };
        let (gx, gw) = gauss_legendre(4);
        for c in 0..mesh.num_cells() {
            let (a, b) = (nodes[c].max(lo), nodes[c + 1].min(hi));
            if !(b > a) {
                continue;
            }
            let vol = if rho == T::zero() {
                area * (b.powi(n as i32) - a.powi(n as i32)) / nd
            } else {
                let mut pieces = vec![a, b];
                let kink = s - rho;
                if kink > a && kink < b {
                    pieces.insert(1, kink);
                }
                let mut acc = T::zero();
                for w in pieces.windows(2) {
                    let (pa, pb) = (w[0], w[1]);
                    let half = (pb - pa) / lit(2.0);
                    let mid = (pa + pb) / lit(2.0);
                    for (x, wt) in gx.iter().zip(&gw) {
                        let r = mid + half * lit(*x);
                        acc = acc + lit::<T>(*wt) * half * cap_fraction(n, r, rho, s) * r.powi(n as i32 - 1);
                    }
                }
                area * acc
            };
            if vol > T::zero() {
                out.push((c, vol));
            }
        }
    } else {
        for c in 0..mesh.num_cells() {
            if mesh.distance(mesh.centroid(c), &ball.center) <= s {
                out.push((c, mesh.volume(c)));
            }
        }
    }
    out
}

/// Mean of a per-cell quantity over a ball; `None` when the ball meets no cell.
pub fn ball_mean<T: Real>(mesh: &Mesh<T>, ball: &Ball<T>, values: &[T]) -> Option<T> {
    let parts = ball_cell_volumes(mesh, ball);
    let vol: T = parts.iter().map(|(_, v)| *v).sum();
    if !(vol > T::zero()) {
        return None;
    }
    Some(parts.iter().map(|(c, v)| values[*c] * *v).sum::<T>() / vol)
}

/// `∫_B values dx` for a per-cell quantity.
pub fn ball_integral<T: Real>(mesh: &Mesh<T>, ball: &Ball<T>, values: &[T]) -> T {
    ball_cell_volumes(mesh, ball)
        .iter()
        .map(|(c, v)| values[*c] * *v)
        .sum()
}
