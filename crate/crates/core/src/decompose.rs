//! The logarithmic substitution `v = log u`, weak-residual certificates for the
//! Schrödinger and Riccati forms, Riesz/Green potentials, and the construction
//! of `Γ` with `σ = div Γ`.

use rayon::prelude::*;

use crate::analysis::{capacity, capacity_condition, standard_family, CapacityConditionReport, CompactSet};
use crate::cutoff::{make_cutoff, CutoffFamily};
use crate::field::{element_gradients, gradient, CellField, ScalarField, VectorField};
use crate::mesh::{Element, Mesh, Region};
use crate::operators::OperatorSpec;
use crate::params::ProblemParams;
use crate::pipeline::{run_pipeline, ExhaustionSchedule, PipelineConfig};
use crate::quadrature::{ball_cell_volumes, gauss_legendre, sphere_area, Ball};
use crate::solver::system::fluxes;
use crate::weights::{hat_pairings, MeasureField, Weight};
use crate::{lit, to_f64, Error, Real, Result};

/// Which equation a certificate tests.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Equation {
    Schro,
    Riccati,
    Poisson,
    DivergenceMatch,
}

#[derive(Clone, Debug)]
pub struct ResidualCertificate<T> {
    pub equation: Equation,
    pub basis: String,
    /// `max_φ |r(φ)| / ‖∇φ‖_p`.
    pub max_residual: T,
    /// Largest normalised residual over the hats and over the bumps separately.
    pub hat_residual: T,
    pub bump_residual: T,
    pub tolerance: T,
    pub tested: usize,
    pub mesh_id: u64,
}

impl<T: Real> ResidualCertificate<T> {
    pub fn passed(&self) -> bool {
        self.max_residual <= self.tolerance
    }

    #[cfg(test)]
    pub(crate) fn for_test(mesh: &Mesh<T>, residual: T, tolerance: T) -> Self {
        Self {
            equation: Equation::Riccati,
            basis: "test".into(),
            max_residual: residual,
            hat_residual: residual,
            bump_residual: residual,
            tolerance,
            tested: 0,
            mesh_id: mesh.id(),
        }
    }
}

/// Test functions: every interior nodal hat plus cutoff bumps.
#[derive(Clone, Debug)]
pub struct TestBasis<T> {
    pub bumps: Vec<CutoffFamily<T>>,
}

impl<T: Real> TestBasis<T> {
    /// Cubic bumps about the middle of the domain at three scales.
    pub fn standard(mesh: &Mesh<T>) -> Self {
        let (center, half) = match mesh.region() {
            Region::Annulus { inner, outer } => (vec![(inner + outer) / lit(2.0)], (outer - inner) / lit(2.0)),
            Region::Box { lower, upper } => (
                lower.iter().zip(&upper).map(|(a, b)| (*a + *b) / lit(2.0)).collect(),
                lower.iter().zip(&upper).map(|(a, b)| (*b - *a) / lit(2.0)).fold(T::infinity(), T::min),
            ),
        };
        let bumps = [0.3, 0.6, 0.9]
            .iter()
            .map(|f| {
                let outer = half * lit(*f);
                CutoffFamily::new(center.clone(), outer / lit(2.0), outer, 3)
            })
            .collect();
        Self { bumps }
    }

    pub fn describe(&self) -> String {
        format!("interior hats + {} cubic bumps", self.bumps.len())
    }
}

/// `∫_e φ_j dx` for each node of `e`, exact for the element geometry.
pub fn element_hat_masses<T: Real>(mesh: &Mesh<T>, e: &Element<T>) -> Vec<T> {
    match mesh.radial_nodes() {
        Some(nodes) => {
            let (a, b) = (nodes[e.cell], nodes[e.cell + 1]);
            let (gx, gw) = gauss_legendre(6);
            let area = sphere_area::<T>(mesh.dim());
            let half = (b - a) / lit(2.0);
            let mid = (a + b) / lit(2.0);
            let mut m = [T::zero(); 2];
            for (x, w) in gx.iter().zip(&gw) {
                let r = mid + half * lit(*x);
                let f = area * r.powi(mesh.dim() as i32 - 1) * half * lit(*w);
                let lam = (r - a) / (b - a);
                m[0] = m[0] + f * (T::one() - lam);
                m[1] = m[1] + f * lam;
            }
            // element nodes are stored inner-first
            if e.nodes[0] == e.cell {
                m.to_vec()
            } else {
                vec![m[1], m[0]]
            }
        }
        None => vec![e.volume * e.hat_weight(); e.nodes.len()],
    }
}

/// `Σ_e ∫_e F_e φ_i` for a per-element constant `F`.
fn lumped<T: Real>(mesh: &Mesh<T>, per_element: &[T]) -> Vec<T> {
    let mut out = vec![T::zero(); mesh.num_nodes()];
    for (k, e) in mesh.elements().iter().enumerate() {
        for (j, m) in element_hat_masses(mesh, e).into_iter().enumerate() {
            out[e.nodes[j]] = out[e.nodes[j]] + per_element[k] * m;
        }
    }
    out
}

/// `‖∇φ_i‖_p` for every node.
fn hat_gradient_norms<T: Real>(mesh: &Mesh<T>, p: T) -> Vec<T> {
    let g = mesh.grad_dim();
    let mut acc = vec![T::zero(); mesh.num_nodes()];
    for e in mesh.elements() {
        for (j, &i) in e.nodes.iter().enumerate() {
            let n2: T = e.grad[j * g..(j + 1) * g].iter().map(|v| *v * *v).sum();
            acc[i] = acc[i] + e.volume * n2.sqrt().powf(p);
        }
    }
    acc.into_iter().map(|v| v.powf(p.recip())).collect()
}

/// Turns nodal hat residuals into a certificate over `basis`.
pub fn certify<T: Real>(
    equation: Equation,
    residual: &[T],
    mesh: &Mesh<T>,
    p: T,
    basis: &TestBasis<T>,
    tolerance: T,
) -> Result<ResidualCertificate<T>> {
    let norms = hat_gradient_norms(mesh, p);
    let mut hat = T::zero();
    let mut tested = 0;
    for i in 0..mesh.num_nodes() {
        if mesh.is_boundary(i) || !(norms[i] > T::zero()) {
            continue;
        }
        hat = hat.max(residual[i].abs() / norms[i]);
        tested += 1;
    }
    let ones = vec![T::one(); mesh.num_cells()];
    let mut bump = T::zero();
    for fam in &basis.bumps {
        let phi = make_cutoff(fam, mesh)?;
        let r: T = (0..mesh.num_nodes())
            .filter(|&i| !mesh.is_boundary(i))
            .map(|i| phi.values()[i] * residual[i])
            .sum();
        let energy = crate::solver::system::dirichlet_energy(mesh, &ones, p, phi.values());
        if energy > T::zero() {
            bump = bump.max(r.abs() / energy.powf(p.recip()));
            tested += 1;
        }
    }
    if residual.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{equation:?} residual")));
    }
    Ok(ResidualCertificate {
        equation,
        basis: basis.describe(),
        max_residual: hat.max(bump),
        hat_residual: hat,
        bump_residual: bump,
        tolerance,
        tested,
        mesh_id: mesh.id(),
    })
}

/// `v = log u`, with the largest cellwise gap `|∇v - ∇u/u|` of the discrete
/// chain rule.
pub fn log_transform<T: Real>(u: &ScalarField<T>, mesh: &Mesh<T>) -> Result<(ScalarField<T>, T)> {
    u.check_mesh(mesh)?;
    if let Some((i, v)) = u.values().iter().enumerate().find(|(_, v)| !(**v > T::zero())) {
        return Err(Error::NonPositive {
            index: i,
            value: to_f64(*v),
        });
    }
    let v = u.map(mesh, |x| x.ln())?;
    let g = mesh.grad_dim();
    let gu = element_gradients(mesh, u.values());
    let gv = element_gradients(mesh, v.values());
    let mut err = T::zero();
    for (k, e) in mesh.elements().iter().enumerate() {
        let um = e.midpoint_value(u.values());
        for c in 0..g {
            err = err.max((gv[k * g + c] - gu[k * g + c] / um).abs());
        }
    }
    Ok((v, err))
}

/// Hat residuals `∫A(x,∇u)·∇φ_i - ⟨σ, |u|^{p-2}u φ_i⟩`.
pub fn schro_hat_residuals<T: Real>(u: &ScalarField<T>, sigma: &Weight<T>, op: &OperatorSpec<T>, mesh: &Mesh<T>) -> Result<Vec<T>> {
    u.check_mesh(mesh)?;
    let w = op.cell_weights(mesh)?;
    let (flux, _) = fluxes(mesh, &w, op.p, u.values());
    let s = hat_pairings(sigma, mesh);
    Ok(flux
        .iter()
        .zip(&s)
        .zip(u.values())
        .map(|((f, s), v)| {
            let pw = if *v == T::zero() { T::zero() } else { v.abs().powf(op.p - lit(2.0)) * *v };
            *f - *s * pw
        })
        .collect())
}

pub fn schro_residual<T: Real>(
    u: &ScalarField<T>,
    sigma: &Weight<T>,
    op: &OperatorSpec<T>,
    mesh: &Mesh<T>,
    basis: &TestBasis<T>,
    tolerance: T,
) -> Result<ResidualCertificate<T>> {
    let r = schro_hat_residuals(u, sigma, op, mesh)?;
    certify(Equation::Schro, &r, mesh, op.p, basis, tolerance)
}

/// `A(x,∇v)·∇v` per element.
fn element_energy_density<T: Real>(v: &[T], op: &OperatorSpec<T>, mesh: &Mesh<T>) -> Result<Vec<T>> {
    let w = op.cell_weights(mesh)?;
    let g = mesh.grad_dim();
    let gv = element_gradients(mesh, v);
    Ok(mesh
        .elements()
        .iter()
        .enumerate()
        .map(|(k, e)| {
            let n2: T = gv[k * g..(k + 1) * g].iter().map(|x| *x * *x).sum();
            w[e.cell] * n2.sqrt().powf(op.p)
        })
        .collect())
}

/// Hat residuals `∫A(x,∇v)·∇φ_i - (p-1)∫A(x,∇v)·∇v φ_i - ⟨σ, φ_i⟩`.
pub fn ric_hat_residuals<T: Real>(v: &ScalarField<T>, sigma: &Weight<T>, op: &OperatorSpec<T>, mesh: &Mesh<T>) -> Result<Vec<T>> {
    v.check_mesh(mesh)?;
    let w = op.cell_weights(mesh)?;
    let (flux, _) = fluxes(mesh, &w, op.p, v.values());
    let quad = lumped(mesh, &element_energy_density(v.values(), op, mesh)?);
    let s = hat_pairings(sigma, mesh);
    Ok((0..mesh.num_nodes())
        .map(|i| flux[i] - (op.p - T::one()) * quad[i] - s[i])
        .collect())
}

pub fn ric_residual<T: Real>(
    v: &ScalarField<T>,
    sigma: &Weight<T>,
    op: &OperatorSpec<T>,
    mesh: &Mesh<T>,
    basis: &TestBasis<T>,
    tolerance: T,
) -> Result<ResidualCertificate<T>> {
    let r = ric_hat_residuals(v, sigma, op, mesh)?;
    certify(Equation::Riccati, &r, mesh, op.p, basis, tolerance)
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Kernel<T> {
    /// `|x - y|^{α-n}`
    Riesz(T),
    /// `log|x - y|`
    Log,
}

impl<T: Real> Kernel<T> {
    fn at(&self, d: T, n: usize) -> T {
        match self {
            Kernel::Riesz(a) => d.powf(*a - lit(n as f64)),
            Kernel::Log => d.ln(),
        }
    }
}

/// `∫_{S^{n-1}} K(|r e - ρ θ|) dθ`.
fn sphere_integral<T: Real>(kernel: Kernel<T>, n: usize, r: T, rho: T) -> T {
    let area = sphere_area::<T>(n);
    let big = r.max(rho);
    match kernel {
        Kernel::Riesz(a) if a == lit(2.0) && n >= 3 => return area * big.powi(2 - n as i32),
        Kernel::Log if n == 2 => return area * big.ln(),
        _ => {}
    }
    if r == T::zero() || rho == T::zero() {
        return area * kernel.at(big, n);
    }
    // |S^{n-2}| ∫_0^π K(√(r²+ρ²-2rρ cos t)) sin^{n-2} t dt, dyadically graded towards t = 0
    let ring = if n == 2 { lit(2.0) } else { sphere_area::<T>(n - 1) };
    let gap = (r - rho).abs() / big;
    let levels = if gap > T::zero() {
        ((T::PI() / gap).log2() + lit(3.0)).ceil().to_usize().unwrap_or(40).clamp(2, 48)
    } else {
        48
    };
    let (gx, gw) = gauss_legendre(8);
    let mut acc = T::zero();
    let mut hi = T::PI();
    for level in 0..levels {
        let lo = if level + 1 == levels { T::zero() } else { hi / lit(2.0) };
        let half = (hi - lo) / lit(2.0);
        let mid = (hi + lo) / lit(2.0);
        for (x, w) in gx.iter().zip(&gw) {
            let t = mid + half * lit(*x);
            let d2 = r * r + rho * rho - lit::<T>(2.0) * r * rho * t.cos();
            let d = d2.max(T::zero()).sqrt();
            let weight = if n == 2 { T::one() } else { t.sin().powi(n as i32 - 2) };
            acc = acc + half * lit(*w) * kernel.at(d, n) * weight;
        }
        hi = lo;
    }
    let ring = if n == 2 { ring / lit(2.0) * lit(2.0) } else { ring };
    ring * acc
}

fn check_points<T: Real>(mu: &MeasureField<T>, points: &[Vec<T>]) -> Result<()> {
    for x in points {
        for (k, (y, m)) in mu.atoms.iter().enumerate() {
            if *m > T::zero() && x.iter().zip(y).all(|(a, b)| *a == *b) {
                return Err(Error::pre(format!("evaluation point {x:?} sits on atom {k}")));
            }
        }
    }
    Ok(())
}

fn potential<T: Real>(mu: &MeasureField<T>, mesh: &Mesh<T>, kernel: Kernel<T>, points: &[Vec<T>]) -> Result<Vec<T>> {
    check_points(mu, points)?;
    if mu.density.values.len() != mesh.num_cells() {
        return Err(Error::LengthMismatch {
            expected: mesh.num_cells(),
            got: mu.density.values.len(),
        });
    }
    let n = mesh.dim();
    let area = sphere_area::<T>(n);
    let (gx, gw) = gauss_legendre(6);
    let radial = mesh.radial_nodes();
    let spacing = mesh.widths();
    let out = points
        .par_iter()
        .map(|x| {
            let mut acc = T::zero();
            match radial {
                Some(nodes) => {
                    let r = x[0];
                    for c in 0..mesh.num_cells() {
                        let dens = mu.density.values[c];
                        if dens == T::zero() {
                            continue;
                        }
                        let (a, b) = (nodes[c], nodes[c + 1]);
                        let mut cuts = vec![a];
                        if r > a && r < b {
                            cuts.push(r);
                        }
                        cuts.push(b);
                        let near = (r - a).abs().min((r - b).abs()) < (b - a) * lit(2.0) || cuts.len() == 3;
                        let pieces = if near { 8 } else { 1 };
                        for wdw in cuts.windows(2) {
                            let step = (wdw[1] - wdw[0]) / lit(pieces as f64);
                            for k in 0..pieces {
                                let lo = wdw[0] + step * lit(k as f64);
                                let half = step / lit(2.0);
                                for (t, w) in gx.iter().zip(&gw) {
                                    let rho = lo + half + half * lit(*t);
                                    acc = acc
                                        + dens * half * lit(*w) * rho.powi(n as i32 - 1) * sphere_integral(kernel, n, r, rho);
                                }
                            }
                        }
                    }
                    for (y, m) in &mu.atoms {
                        // radial atoms are spread uniformly over the sphere |y| = ρ
                        acc = acc + *m * sphere_integral(kernel, n, r, y[0]) / area;
                    }
                }
                None => {
                    let diam: T = spacing.iter().map(|s| *s * *s).sum::<T>().sqrt();
                    for c in 0..mesh.num_cells() {
                        let dens = mu.density.values[c];
                        if dens == T::zero() {
                            continue;
                        }
                        let y = mesh.centroid(c);
                        let d = mesh.distance(x, y);
                        if d > diam * lit(2.0) {
                            acc = acc + dens * mesh.volume(c) * kernel.at(d, n);
                            continue;
                        }
                        // midpoint rule on an 8^d sub-grid of the cell
                        let m = 8usize;
                        let sub = m.pow(n as u32);
                        let vol = mesh.volume(c) / lit(sub as f64);
                        for s in 0..sub {
                            let mut rem = s;
                            let mut z = vec![T::zero(); n];
                            for k in 0..n {
                                let i = rem % m;
                                rem /= m;
                                z[k] = y[k] + spacing[k] * (lit::<T>((i as f64 + 0.5) / m as f64) - lit(0.5));
                            }
                            let dz = mesh.distance(x, &z);
                            if dz > T::zero() {
                                acc = acc + dens * vol * kernel.at(dz, n);
                            }
                        }
                    }
                    for (y, m) in &mu.atoms {
                        acc = acc + *m * kernel.at(mesh.distance(x, y), n);
                    }
                }
            }
            acc
        })
        .collect();
    Ok(out)
}

/// `I_α μ(x) = ∫ |x - y|^{α-n} dμ(y)` at the given points (radii on radial
/// meshes, where atoms stand for uniform masses on spheres).
pub fn riesz_potential<T: Real>(mu: &MeasureField<T>, mesh: &Mesh<T>, alpha: T, points: &[Vec<T>]) -> Result<Vec<T>> {
    let n = lit::<T>(mesh.dim() as f64);
    if !(alpha > T::zero() && alpha < n) {
        return Err(Error::pre(format!("Riesz order must lie in (0, n), got {alpha}")));
    }
    potential(mu, mesh, Kernel::Riesz(alpha), points)
}

/// Newtonian potential at the mesh nodes: `c_n I₂μ` with
/// `c_n = 1/((n-2)|S^{n-1}|)` for `n ≥ 3` (so `-Δw = μ`), and
/// `(1/2π)∫log|x-y| dμ` for `n = 2` (so `Δw = μ`).
pub fn green_solve<T: Real>(mu: &MeasureField<T>, params: &ProblemParams<T>, mesh: &Mesh<T>) -> Result<ScalarField<T>> {
    let n = params.n;
    if n < 2 {
        return Err(Error::pre(format!("Green kernel needs n >= 2, got {n}")));
    }
    if n != mesh.dim() {
        return Err(Error::pre(format!("dimension {n} does not match mesh dimension {}", mesh.dim())));
    }
    let points: Vec<Vec<T>> = (0..mesh.num_nodes()).map(|i| mesh.node(i).to_vec()).collect();
    let values = if n == 2 {
        potential(mu, mesh, Kernel::Log, &points)?
            .into_iter()
            .map(|v| v / (lit::<T>(2.0) * T::PI()))
            .collect()
    } else {
        let cn = T::one() / (lit::<T>(n as f64 - 2.0) * sphere_area::<T>(n));
        potential(mu, mesh, Kernel::Riesz(lit(2.0)), &points)?
            .into_iter()
            .map(|v| v * cn)
            .collect()
    };
    ScalarField::new(mesh, values)
}

#[derive(Clone, Debug)]
pub struct DecomposeConfig<T> {
    pub pipeline: PipelineConfig<T>,
    /// Exhaustion levels; the last one is the working domain.
    pub levels: usize,
    pub mollify: bool,
    /// Number of nested truncations `μ_N` of `μ`.
    pub truncations: usize,
    pub tolerance: T,
    /// Members of the concentric compact family for the capacity condition.
    pub family: usize,
}

impl<T: Real> Default for DecomposeConfig<T> {
    fn default() -> Self {
        Self {
            pipeline: PipelineConfig::default(),
            levels: 1,
            mollify: false,
            truncations: 3,
            tolerance: lit(1e-3),
            family: 4,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DecompositionResult<T> {
    /// Working mesh (the last exhaustion level).
    pub mesh: Mesh<T>,
    pub v: ScalarField<T>,
    /// `A(x,∇v)·∇v dx`.
    pub mu: MeasureField<T>,
    pub w: ScalarField<T>,
    pub gamma: VectorField<T>,
    /// `K = 2C₀/(p-1)^{2-p}`.
    pub k_factor: T,
    pub capacity: CapacityConditionReport<T>,
    pub capacity_ratio: T,
    pub certificate: ResidualCertificate<T>,
    /// `max |w_N - w_{N-1}|` over the working nodes for the last two truncations.
    pub stabilization_gap: T,
    pub gate_lambda: T,
}

/// `A(x,∇v)` per cell.
fn cell_flux<T: Real>(v: &ScalarField<T>, op: &OperatorSpec<T>, mesh: &Mesh<T>) -> Result<VectorField<T>> {
    let gv = gradient(v, mesh)?;
    let w = op.cell_weights(mesh)?;
    let d = gv.dim();
    let mut out = Vec::with_capacity(gv.values().len());
    for c in 0..mesh.num_cells() {
        let g = gv.get(c);
        let n: T = g.iter().map(|x| *x * *x).sum::<T>().sqrt();
        let f = if n > T::zero() { w[c] * n.powf(op.p - lit(2.0)) } else { T::zero() };
        out.extend(g.iter().take(d).map(|x| f * *x));
    }
    VectorField::new(mesh, out)
}

/// `Γ = -K A(x,∇v) + ∇w` cellwise.
pub fn assemble_gamma<T: Real>(
    v: &ScalarField<T>,
    w: &ScalarField<T>,
    k_factor: T,
    op: &OperatorSpec<T>,
    mesh: &Mesh<T>,
) -> Result<VectorField<T>> {
    let a = cell_flux(v, op, mesh)?;
    let gw = gradient(w, mesh)?;
    a.scaled(-k_factor).add(&gw)
}

/// Hat residuals of `div Γ = σ`: `⟨σ, φ_i⟩ + ∫Γ·∇φ_i`.
pub fn divergence_hat_residuals<T: Real>(gamma: &VectorField<T>, sigma: &Weight<T>, mesh: &Mesh<T>) -> Vec<T> {
    let mut r = hat_pairings(sigma, mesh);
    let g = mesh.grad_dim();
    for e in mesh.elements() {
        let gc = gamma.get(e.cell);
        for (j, &i) in e.nodes.iter().enumerate() {
            let d: T = (0..g).map(|k| gc[k] * e.grad[j * g + k]).sum();
            r[i] = r[i] + e.volume * d;
        }
    }
    r
}

/// Builds `Γ` with `div Γ = σ` from the Riccati solution of the rescaled
/// potential `σ/K`, `K = 2C₀/(p-1)^{2-p}`.
pub fn decompose_sigma<T: Real>(
    sigma: &Weight<T>,
    c0: T,
    op: &OperatorSpec<T>,
    mesh: &Mesh<T>,
    cfg: &DecomposeConfig<T>,
) -> Result<DecompositionResult<T>> {
    let params = ProblemParams::new(mesh.dim(), op.p)?;
    if !params.subcritical() {
        return Err(Error::pre(format!(
            "decomposition needs p < n (p = {}, n = {}); for p >= n only σ = 0 qualifies",
            params.p, params.n
        )));
    }
    if !(c0 > T::zero()) {
        return Err(Error::pre(format!("form-bound constant must be positive, got {c0}")));
    }
    let two = lit::<T>(2.0);
    let k_factor = two * c0 / (op.p - T::one()).powf(two - op.p);
    let scaled = sigma.scaled(k_factor.recip());
    let mut schedule = match mesh.region() {
        Region::Annulus { .. } => ExhaustionSchedule::annuli(mesh, cfg.levels)?,
        Region::Box { .. } => ExhaustionSchedule::boxes(mesh, cfg.levels)?,
    };
    schedule.mollify = cfg.mollify;
    let trace = run_pipeline(op, &scaled, mesh, &schedule, &cfg.pipeline)?;
    let last = trace.last();
    let wm = &last.mesh;
    let v = trace.v.clone();
    // μ = A(x,∇v)·∇v, cellwise
    let dens = element_energy_density(v.values(), &last.op, wm)?;
    let mut cell_mu = vec![T::zero(); wm.num_cells()];
    for (k, e) in wm.elements().iter().enumerate() {
        cell_mu[e.cell] = cell_mu[e.cell] + dens[k] * e.volume;
    }
    for (c, m) in cell_mu.iter_mut().enumerate() {
        *m = *m / wm.volume(c);
    }
    let mu = MeasureField::new(CellField::new(wm, cell_mu.clone())?, Vec::new())?;
    // -Δw = K(p-1)μ; the two-dimensional kernel carries the opposite sign
    let factor = k_factor * (op.p - T::one()) * if params.n == 2 { -T::one() } else { T::one() };
    let (center, reach) = match wm.region() {
        Region::Annulus { outer, .. } => (vec![T::zero()], outer),
        Region::Box { lower, upper } => {
            let c: Vec<T> = lower.iter().zip(&upper).map(|(a, b)| (*a + *b) / two).collect();
            let r = lower.iter().zip(&upper).map(|(a, b)| (*b - *a) / two).map(|h| h * h).sum::<T>().sqrt();
            (c, r)
        }
    };
    let norm_ball = schedule.ball.clone();
    let norm_vol: T = ball_cell_volumes(wm, &norm_ball).iter().map(|(_, v)| *v).sum();
    let levels = cfg.truncations.max(1);
    let mut prev: Option<ScalarField<T>> = None;
    let mut gap = T::zero();
    let mut w = ScalarField::constant(wm, T::zero());
    for k in 1..=levels {
        let radius = reach * lit(k as f64 / levels as f64) * lit(1.0 + 1e-9);
        let truncated: Vec<T> = (0..wm.num_cells())
            .map(|c| {
                let inside = wm.distance(wm.centroid(c), &center) <= radius
                    || (wm.is_radial() && wm.centroid(c)[0] <= radius);
                if inside {
                    cell_mu[c]
                } else {
                    T::zero()
                }
            })
            .collect();
        let mu_n = MeasureField::new(CellField::new(wm, truncated)?, Vec::new())?;
        let g = green_solve(&mu_n, &params, wm)?;
        let mut wn = g.map(wm, |x| x * factor)?;
        // normalise ∫_B w_N = 1 on the pipeline's normalisation ball
        let cells = wn.cell_values(wm);
        let integral = crate::quadrature::ball_integral(wm, &norm_ball, &cells);
        let shift = (T::one() - integral) / norm_vol;
        wn = wn.map(wm, |x| x + shift)?;
        if let Some(p) = &prev {
            gap = p.values().iter().zip(wn.values()).map(|(a, b)| (*a - *b).abs()).fold(T::zero(), T::max);
        }
        prev = Some(wn.clone());
        w = wn;
    }
    let gamma = assemble_gamma(&v, &w, k_factor, &last.op, wm)?;
    let original = last.sigma.scaled(k_factor);
    let r = divergence_hat_residuals(&gamma, &original, wm);
    let basis = TestBasis::standard(wm);
    let certificate = certify(Equation::DivergenceMatch, &r, wm, op.p, &basis, cfg.tolerance)?;
    let family = standard_family(wm, cfg.family);
    let cap = capacity_condition(&gamma, &family, wm, &params)?;
    Ok(DecompositionResult {
        mesh: wm.clone(),
        v,
        mu,
        w,
        gamma,
        k_factor,
        capacity_ratio: cap.worst,
        capacity: cap,
        certificate,
        stabilization_gap: gap,
        gate_lambda: trace.gate_lambda,
    })
}

#[derive(Clone, Debug)]
pub struct SupercriticalReport<T> {
    pub radii: Vec<T>,
    pub capacities: Vec<T>,
    /// Least-squares slope of `log cap` against `log log R`.
    pub decay_exponent: T,
}

/// `cap_p(B(0,1), B(0,R))` on radial meshes of growing `R` (regime `p ≥ n`).
pub fn supercritical_degeneracy_check<T: Real>(params: &ProblemParams<T>, radii: &[T], cells: usize) -> Result<SupercriticalReport<T>> {
    if params.subcritical() {
        return Err(Error::pre(format!("degeneracy check needs p >= n (p = {}, n = {})", params.p, params.n)));
    }
    if radii.len() < 2 || radii.iter().any(|r| !(*r > T::one())) {
        return Err(Error::pre("need at least two outer radii above 1"));
    }
    let capacities: Vec<T> = radii
        .par_iter()
        .map(|r| {
            // a few shells inside the unit ball, then geometric shells out to R
            let mut nodes: Vec<T> = (0..4).map(|k| lit(k as f64 / 4.0)).collect();
            let ratio = r.ln() / lit(cells as f64);
            nodes.extend((0..=cells).map(|k| (ratio * lit(k as f64)).exp()));
            *nodes.last_mut().expect("non-empty") = *r;
            let mesh = Mesh::radial_from_nodes(params.n, nodes)?;
            Ok(capacity(&CompactSet::Ball(Ball::new(vec![T::zero()], T::one())), &mesh, params)?.value)
        })
        .collect::<Result<_>>()?;
    let xs: Vec<T> = radii.iter().map(|r| r.ln().ln()).collect();
    let ys: Vec<T> = capacities.iter().map(|c| c.ln()).collect();
    let k = lit::<T>(xs.len() as f64);
    let mx = xs.iter().copied().sum::<T>() / k;
    let my = ys.iter().copied().sum::<T>() / k;
    let sxy: T = xs.iter().zip(&ys).map(|(x, y)| (*x - mx) * (*y - my)).sum();
    let sxx: T = xs.iter().map(|x| (*x - mx) * (*x - mx)).sum();
    Ok(SupercriticalReport {
        radii: radii.to_vec(),
        capacities,
        decay_exponent: sxy / sxx,
    })
}
