//! Polynomial-ramp cutoff functions `h` with `h ≡ 1` on `B(center, r)` and
//! `h ≡ 0` outside `B(center, R)`.

use crate::field::ScalarField;
use crate::mesh::Mesh;
use crate::{lit, Error, Real, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct CutoffFamily<T> {
    /// Ball center; a radius on radial meshes (distance is then `|r - center|`).
    pub center: Vec<T>,
    pub inner: T,
    pub outer: T,
    /// Odd ramp degree: 1 is linear, 3 the cubic smoothstep, 5 the quintic one, ...
    pub degree: usize,
}

impl<T: Real> CutoffFamily<T> {
    pub fn new(center: Vec<T>, inner: T, outer: T, degree: usize) -> Self {
        Self { center, inner, outer, degree }
    }

    pub fn linear(center: Vec<T>, inner: T, outer: T) -> Self {
        Self::new(center, inner, outer, 1)
    }

    /// Bound on `|∇h|` guaranteed by the ramp: `(degree + 1)/(R - r)`.
    pub fn gradient_bound(&self) -> T {
        lit::<T>((self.degree + 1) as f64) / (self.outer - self.inner)
    }

    /// Ramp value as a function of the distance to the center.
    pub fn profile(&self, distance: T) -> T {
        let s = ((self.outer - distance) / (self.outer - self.inner))
            .max(T::zero())
            .min(T::one());
        smoothstep((self.degree - 1) / 2, s)
    }

    fn validate(&self) -> Result<()> {
        if !(self.outer > self.inner) || self.inner < T::zero() {
            return Err(Error::pre(format!(
                "cutoff radii must satisfy 0 <= r < R, got r = {}, R = {}",
                self.inner, self.outer
            )));
        }
        if self.degree == 0 || self.degree % 2 == 0 {
            return Err(Error::pre(format!(
                "ramp degree must be odd and >= 1, got {}",
                self.degree
            )));
        }
        Ok(())
    }
}

/// Smoothstep polynomial of order `k` (degree `2k+1`) on `[0, 1]`.
fn smoothstep<T: Real>(k: usize, s: T) -> T {
    let mut acc = T::zero();
    for j in 0..=k {
        let c = binomial(k + j, j) * binomial(2 * k + 1, k - j);
        let term = lit::<T>(c) * (-s).powi(j as i32);
        acc = acc + term;
    }
    acc * s.powi(k as i32 + 1)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub fn make_cutoff<T: Real>(family: &CutoffFamily<T>, mesh: &Mesh<T>) -> Result<ScalarField<T>> {
    family.validate()?;
    if family.center.len() != mesh.coord_dim() {
        return Err(Error::LengthMismatch {
            expected: mesh.coord_dim(),
            got: family.center.len(),
        });
    }
    if !mesh.region().contains_ball(&family.center, family.outer) {
        return Err(Error::OutsideDomain(format!(
            "cutoff ball of radius {} at {:?} exits the mesh",
            family.outer, family.center
        )));
    }
    ScalarField::from_fn(mesh, |x| family.profile(mesh.distance(x, &family.center)))
}

/// Largest cellwise `|∇h|`.
pub fn max_gradient<T: Real>(h: &ScalarField<T>, mesh: &Mesh<T>) -> Result<T> {
    Ok(h.gradient(mesh)?.norms().into_iter().fold(T::zero(), T::max))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::MeshSpec;
    use approx::assert_relative_eq;

    #[test]
    fn degenerate_ramp_rejected() {
        let m = Mesh::build(&MeshSpec::<f64>::radial(3, 0.0, 1.0, 16)).unwrap();
        assert!(make_cutoff(&CutoffFamily::linear(vec![0.0], 0.5, 0.5), &m).is_err());
        assert!(make_cutoff(&CutoffFamily::new(vec![0.0], 0.2, 0.5, 2), &m).is_err());
    }

    #[test]
    fn linear_ramp_midpoint() {
        let m = Mesh::build(&MeshSpec::<f64>::radial(3, 0.0, 1.0, 16)).unwrap();
        let h = make_cutoff(&CutoffFamily::linear(vec![0.0], 0.5, 1.0), &m).unwrap();
        assert_relative_eq!(h.values()[12], 0.5, epsilon = 1e-14);
        assert_eq!(h.values()[0], 1.0);
        assert_eq!(h.values()[16], 0.0);
    }

    #[test]
    fn exits_domain() {
        let m = Mesh::build(&MeshSpec::<f64>::radial(3, 0.1, 1.0, 16)).unwrap();
        assert!(make_cutoff(&CutoffFamily::linear(vec![0.5], 0.1, 0.6), &m).is_err());
        assert!(make_cutoff(&CutoffFamily::linear(vec![0.5], 0.1, 0.4), &m).is_ok());
        let t = Mesh::build(&MeshSpec::<f64>::unit_box(2, 8)).unwrap();
        assert!(make_cutoff(&CutoffFamily::linear(vec![0.5, 0.5], 0.1, 0.6), &t).is_err());
    }

    #[test]
    fn energy_of_linear_ramp() {
        // oracle: |∇h| = 2 on [0.5, 1]; 4π ∫ 4 s^2 ds
        let m = Mesh::build(&MeshSpec::<f64>::radial(3, 0.0, 1.0, 512)).unwrap();
        let h = make_cutoff(&CutoffFamily::linear(vec![0.0], 0.5, 1.0), &m).unwrap();
        let g = h.gradient(&m).unwrap().norms();
        let e: f64 = g.iter().zip(m.volumes()).map(|(g, v)| g * g * v).sum();
        let exact = 4.0 * std::f64::consts::PI * 4.0 * (1.0 - 0.125) / 3.0;
        assert_relative_eq!(e, exact, max_relative = 0.01);
    }

    #[test]
    fn ramps_respect_bounds() {
        let t = Mesh::build(&MeshSpec::<f64>::unit_box(2, 64)).unwrap();
        for degree in [1, 3, 5, 7] {
            let fam = CutoffFamily::new(vec![0.5, 0.5], 0.1, 0.4, degree);
            let h = make_cutoff(&fam, &t).unwrap();
            assert!(h.values().iter().all(|v| (0.0..=1.0).contains(v)));
            for i in 0..t.num_nodes() {
                let d = t.distance(t.node(i), &[0.5, 0.5]);
                if d <= 0.1 {
                    assert_eq!(h.values()[i], 1.0);
                }
                if d >= 0.4 {
                    assert_eq!(h.values()[i], 0.0);
                }
            }
            let g = max_gradient(&h, &t).unwrap();
            assert!(g <= fam.gradient_bound() * 1.05, "degree {degree}: {g}");
        }
    }
}
