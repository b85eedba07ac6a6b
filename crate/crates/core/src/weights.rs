//! Potentials `σ = f + div Γ`, their pairing with test functions and mollification.

use crate::field::{CellField, ScalarField, VectorField};
use crate::mesh::{Mesh, Region};
use crate::mollify::{mollify_cells, mollify_vectors};
use crate::params::ProblemParams;
use crate::quadrature::gauss_legendre;
use crate::{lit, Error, Real, Result};

/// Named analytic potentials.
#[derive(Clone, Debug, PartialEq)]
pub enum ClosedForm<T> {
    /// `t·c₀|x|^{-p}`.
    Hardy { t: T, c0: T, p: T },
    /// `div(a·sin(k·x₁) e₁)` (radial: `div(a·sin(k r) x/|x|)`).
    Oscillating { amplitude: T, frequency: T },
}

/// `σ = f + div Γ`; at least one part is present.
#[derive(Clone, Debug)]
pub struct Weight<T> {
    pub density: Option<CellField<T>>,
    pub divergence: Option<VectorField<T>>,
    pub closed_form: Option<ClosedForm<T>>,
    /// Multiplies the closed form when it is used for exact quadrature.
    closed_scale: T,
}

impl<T: Real> Weight<T> {
    pub fn new(density: Option<CellField<T>>, divergence: Option<VectorField<T>>) -> Result<Self> {
        if density.is_none() && divergence.is_none() {
            return Err(Error::pre("a weight needs a density or a divergence part"));
        }
        Ok(Self {
            density,
            divergence,
            closed_form: None,
            closed_scale: T::one(),
        })
    }

    pub fn zero(mesh: &Mesh<T>) -> Self {
        Self::from_density(CellField::zeros(mesh))
    }

    pub fn from_density(density: CellField<T>) -> Self {
        Self::new(Some(density), None).expect("density present")
    }

    pub fn from_divergence(gamma: VectorField<T>) -> Self {
        Self::new(None, Some(gamma)).expect("divergence present")
    }

    /// `s·σ`.
    pub fn scaled(&self, s: T) -> Self {
        Self {
            density: self.density.as_ref().map(|d| CellField {
                values: d.values.iter().map(|v| *v * s).collect(),
            }),
            divergence: self.divergence.as_ref().map(|g| g.scaled(s)),
            closed_form: self.closed_form.clone(),
            closed_scale: self.closed_scale * s,
        }
    }

    /// `σ₁ + σ₂` (the closed-form tag is dropped).
    pub fn add(&self, other: &Self) -> Result<Self> {
        let density = match (&self.density, &other.density) {
            (Some(a), Some(b)) => {
                if a.values.len() != b.values.len() {
                    return Err(Error::LengthMismatch {
                        expected: a.values.len(),
                        got: b.values.len(),
                    });
                }
                Some(CellField {
                    values: a.values.iter().zip(&b.values).map(|(x, y)| *x + *y).collect(),
                })
            }
            (a, b) => a.clone().or(b.clone()),
        };
        let divergence = match (&self.divergence, &other.divergence) {
            (Some(a), Some(b)) => Some(a.add(b)?),
            (a, b) => a.clone().or(b.clone()),
        };
        Self::new(density, divergence)
    }

    pub fn is_zero(&self) -> bool {
        self.density.as_ref().map_or(true, |d| d.values.iter().all(|v| *v == T::zero()))
            && self
                .divergence
                .as_ref()
                .map_or(true, |g| g.values().iter().all(|v| *v == T::zero()))
    }

    fn check(&self, mesh: &Mesh<T>) -> Result<()> {
        if let Some(d) = &self.density {
            if d.values.len() != mesh.num_cells() {
                return Err(Error::LengthMismatch {
                    expected: mesh.num_cells(),
                    got: d.values.len(),
                });
            }
        }
        if let Some(g) = &self.divergence {
            if g.values().len() != mesh.num_cells() * mesh.grad_dim() {
                return Err(Error::LengthMismatch {
                    expected: mesh.num_cells() * mesh.grad_dim(),
                    got: g.values().len(),
                });
            }
        }
        Ok(())
    }

    /// The weight restricted to a submesh's cells.
    pub fn restrict(&self, cell_map: &[usize]) -> Self {
        Self {
            density: self.density.as_ref().map(|d| CellField {
                values: cell_map.iter().map(|&c| d.values[c]).collect(),
            }),
            divergence: self.divergence.as_ref().map(|g| g.restrict(cell_map)),
            closed_form: self.closed_form.clone(),
            closed_scale: self.closed_scale,
        }
    }
}

/// `∫ f φ dx - ∫ Γ·∇φ dx` by element midpoint quadrature.
pub fn pair<T: Real>(sigma: &Weight<T>, phi: &ScalarField<T>, mesh: &Mesh<T>) -> Result<T> {
    phi.check_mesh(mesh)?;
    sigma.check(mesh)?;
    if sigma.divergence.is_some() {
        if let Some(i) = (0..mesh.num_nodes()).find(|&i| mesh.is_boundary(i) && phi.values()[i] != T::zero()) {
            return Err(Error::pre(format!(
                "test function is nonzero at boundary node {i} while the weight has a divergence part"
            )));
        }
    }
    Ok(pair_values(sigma, phi.values(), mesh))
}

fn pair_values<T: Real>(sigma: &Weight<T>, phi: &[T], mesh: &Mesh<T>) -> T {
    let s = hat_pairings(sigma, mesh);
    s.iter().zip(phi).map(|(a, b)| *a * *b).sum()
}

/// `s_i = ⟨σ, φ_i⟩` for every nodal hat function `φ_i` (boundary hats included;
/// their divergence contribution omits the boundary term).
pub fn hat_pairings<T: Real>(sigma: &Weight<T>, mesh: &Mesh<T>) -> Vec<T> {
    let mut s = vec![T::zero(); mesh.num_nodes()];
    let g = mesh.grad_dim();
    let exact = match (&sigma.closed_form, mesh.radial_nodes(), &sigma.density) {
        (Some(ClosedForm::Hardy { t, c0, p }), Some(nodes), Some(_)) if nodes[0] > T::zero() => {
            Some((*t * *c0 * sigma.closed_scale, *p))
        }
        _ => None,
    };
    if let (Some((coef, p)), Some(nodes)) = (exact, mesh.radial_nodes()) {
        // exact-in-r Gauss quadrature of the closed form against the hats
        let (gx, gw) = gauss_legendre(4);
        let n = mesh.dim() as i32;
        let area = crate::quadrature::sphere_area::<T>(mesh.dim());
        for c in 0..mesh.num_cells() {
            let (a, b) = (nodes[c], nodes[c + 1]);
            let half = (b - a) / lit(2.0);
            let mid = (a + b) / lit(2.0);
            for (x, w) in gx.iter().zip(&gw) {
                let r = mid + half * lit(*x);
                let lam = (r - a) / (b - a);
                let f = coef * r.powf(-p) * r.powi(n - 1) * area * half * lit(*w);
                s[c] = s[c] + f * (T::one() - lam);
                s[c + 1] = s[c + 1] + f * lam;
            }
        }
    } else if let Some(d) = &sigma.density {
        for e in mesh.elements() {
            let share = d.values[e.cell] * e.volume * e.hat_weight();
            for &i in &e.nodes {
                s[i] = s[i] + share;
            }
        }
    }
    if let Some(gamma) = &sigma.divergence {
        for e in mesh.elements() {
            let gc = gamma.get(e.cell);
            for (j, &i) in e.nodes.iter().enumerate() {
                let dot: T = (0..g).map(|k| gc[k] * e.grad[j * g + k]).sum();
                s[i] = s[i] - e.volume * dot;
            }
        }
    }
    s
}

/// `σ_ε = φ_ε ∗ σ`, mollifying the density and `Γ` with the same kernel.
pub fn mollify_weight<T: Real>(sigma: &Weight<T>, eps: T, mesh: &Mesh<T>, target: &Region<T>) -> Result<Weight<T>> {
    sigma.check(mesh)?;
    let density = match &sigma.density {
        Some(d) => Some(CellField::new(mesh, mollify_cells(mesh, &d.values, eps, target)?)?),
        None => None,
    };
    let divergence = match &sigma.divergence {
        Some(g) => Some(VectorField::new(mesh, mollify_vectors(mesh, g.values(), eps, target)?)?),
        None => None,
    };
    Weight::new(density, divergence)
}

/// `t·c₀|x|^{-p}` sampled at cell centroids.
pub fn hardy_weight<T: Real>(params: &ProblemParams<T>, t: T, mesh: &Mesh<T>) -> Result<Weight<T>> {
    let c0 = params.c0.ok_or_else(|| {
        Error::pre(format!("Hardy weight needs p < n (p = {}, n = {})", params.p, params.n))
    })?;
    if !(t > T::zero() && t <= T::one()) {
        return Err(Error::pre(format!("multiplier t must lie in (0, 1], got {t}")));
    }
    if mesh.dim() != params.n {
        return Err(Error::pre(format!("mesh dimension {} differs from n = {}", mesh.dim(), params.n)));
    }
    if (0..mesh.num_cells()).any(|c| !(mesh.centroid_radius(c) > T::zero())) || mesh.radial_nodes().map_or(false, |r| r[0] == T::zero()) {
        return Err(Error::pre("Hardy weight needs a mesh that excludes the origin"));
    }
    let density = CellField::from_fn(mesh, |x| t * c0 * crate::mesh::norm(x).powf(-params.p))?;
    let mut w = Weight::from_density(density);
    w.closed_form = Some(ClosedForm::Hardy { t, c0, p: params.p });
    Ok(w)
}

/// Built-in oscillating potential `σ = div(a·sin(k·x₁) e₁)` (radially: along `x/|x|`).
pub fn oscillating_weight<T: Real>(mesh: &Mesh<T>, amplitude: T, frequency: T) -> Result<Weight<T>> {
    let g = mesh.grad_dim();
    let gamma = VectorField::from_fn(mesh, |x| {
        let mut v = vec![T::zero(); g];
        v[0] = amplitude * (frequency * x[0]).sin();
        v
    })?;
    let mut w = Weight::from_divergence(gamma);
    w.closed_form = Some(ClosedForm::Oscillating { amplitude, frequency });
    Ok(w)
}

/// Smooth compactly supported density `a(1 - |x - c|²/ρ²)³₊`.
pub fn bump_weight<T: Real>(mesh: &Mesh<T>, center: &[T], radius: T, amplitude: T) -> Result<Weight<T>> {
    if !(radius > T::zero()) {
        return Err(Error::pre(format!("bump radius must be positive, got {radius}")));
    }
    if center.len() != mesh.coord_dim() {
        return Err(Error::LengthMismatch {
            expected: mesh.coord_dim(),
            got: center.len(),
        });
    }
    if mesh.is_radial() && center[0] != T::zero() {
        return Err(Error::pre("radial meshes only carry bumps centred at the origin"));
    }
    let density = CellField::from_fn(mesh, |x| {
        let d = mesh.distance(x, center);
        amplitude * crate::mollify::bump(d * d, radius)
    })?;
    Ok(Weight::from_density(density))
}

/// Nonnegative measure: a cell density plus point masses.
#[derive(Clone, Debug)]
pub struct MeasureField<T> {
    pub density: CellField<T>,
    pub atoms: Vec<(Vec<T>, T)>,
}

impl<T: Real> MeasureField<T> {
    pub fn new(density: CellField<T>, atoms: Vec<(Vec<T>, T)>) -> Result<Self> {
        if let Some(i) = density.values.iter().position(|v| !(*v >= T::zero())) {
            return Err(Error::NonPositive {
                index: i,
                value: crate::to_f64(density.values[i]),
            });
        }
        if let Some(i) = atoms.iter().position(|a| !(a.1 >= T::zero())) {
            return Err(Error::NonPositive {
                index: i,
                value: crate::to_f64(atoms[i].1),
            });
        }
        Ok(Self { density, atoms })
    }

    pub fn zero(mesh: &Mesh<T>) -> Self {
        Self {
            density: CellField::zeros(mesh),
            atoms: Vec::new(),
        }
    }

    pub fn total_mass(&self, mesh: &Mesh<T>) -> T {
        self.density
            .values
            .iter()
            .zip(mesh.volumes())
            .map(|(a, b)| *a * *b)
            .sum::<T>()
            + self.atoms.iter().map(|a| a.1).sum::<T>()
    }

    pub fn scaled(&self, s: T) -> Self {
        Self {
            density: CellField {
                values: self.density.values.iter().map(|v| *v * s).collect(),
            },
            atoms: self.atoms.iter().map(|(x, m)| (x.clone(), *m * s)).collect(),
        }
    }
}
