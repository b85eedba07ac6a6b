//! Damped Newton solves of `-div A(x,∇u) = σ|u|^{p-2}u` (trace given) and of
//! `-div A(x,∇u) = f` (Dirichlet data), with σ-continuation and a Picard
//! fallback direction.

pub mod system;

use log::debug;

use crate::analysis::{estimate_form_bound, FormBoundOptions, Sign};
use crate::field::ScalarField;
use crate::linalg::{dot, DofMap, SparseMatrix};
use crate::mesh::Mesh;
use crate::operators::OperatorSpec;
use crate::params::{normalization_exponent, ProblemParams};
use crate::quadrature::{ball_integral, Ball};
use crate::weights::{hat_pairings, Weight};
use crate::{lit, to_f64, Error, Real, Result};

use system::{assemble_jacobian, fluxes};

/// Trace prescribed on boundary nodes.
#[derive(Clone, Debug, PartialEq)]
pub enum BoundaryData<T> {
    Constant(T),
    /// One value per mesh node; only boundary entries are used.
    Nodal(Vec<T>),
}

impl<T: Real> BoundaryData<T> {
    fn value(&self, i: usize) -> T {
        match self {
            BoundaryData::Constant(c) => *c,
            BoundaryData::Nodal(v) => v[i],
        }
    }
}

/// How the coercivity hypothesis `λ < 1` is established before a solve.
#[derive(Clone, Debug, PartialEq)]
pub enum CoercivityGate<T> {
    /// Measure `λ` with the form-bound estimator on the solve mesh.
    Estimate { restarts: usize, seed: u64 },
    /// A value certified elsewhere.
    Certified(T),
    /// Explicitly skip the check.
    Waived,
}

#[derive(Clone, Debug)]
pub struct SolveConfig<T> {
    /// Newton iterations allowed per continuation step.
    pub max_iterations: usize,
    /// Bound on the scaled nodal residual.
    pub tolerance: T,
    /// σ is scaled by `τ = k/steps`, `k = 1..=steps`.
    pub continuation_steps: usize,
    /// Armijo sufficient-decrease constant.
    pub armijo: T,
    /// Smallest step length tried by the line search.
    pub min_step: T,
    /// Jacobian regularisation `δ` at the first and last continuation step.
    pub delta_initial: T,
    pub delta_final: T,
    pub boundary: BoundaryData<T>,
    /// Rescale so that `∫_B u^{qp} = 1`.
    pub normalization_ball: Option<Ball<T>>,
    pub harnack_balls: Vec<Ball<T>>,
    pub coercivity: CoercivityGate<T>,
}

impl<T: Real> Default for SolveConfig<T> {
    fn default() -> Self {
        Self {
            max_iterations: 60,
            tolerance: lit(1e-9),
            continuation_steps: 4,
            armijo: lit(1e-4),
            min_step: lit(1e-10),
            delta_initial: lit(1e-2),
            delta_final: lit(1e-8),
            boundary: BoundaryData::Constant(T::one()),
            normalization_ball: None,
            harnack_balls: Vec::new(),
            coercivity: CoercivityGate::Estimate { restarts: 4, seed: 0 },
        }
    }
}

impl<T: Real> SolveConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > T::zero()) {
            return Err(Error::Config(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if self.continuation_steps == 0 {
            return Err(Error::Config("continuation steps must be >= 1".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Config("iteration budget must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct SolveResult<T> {
    pub u: ScalarField<T>,
    pub iterations: usize,
    pub residual: T,
    pub min_value: T,
    pub harnack: Vec<T>,
    /// Factor applied by the normalisation (1 when none was requested).
    pub normalization: T,
    /// Coercivity constant used by the gate, if one was measured or supplied.
    pub lambda: Option<T>,
    /// Discrete energy at each accepted continuation step.
    pub energies: Vec<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Kind {
    /// `σ|u|^{p-2}u` on the right.
    Potential,
    /// Fixed right-hand side.
    Source,
}

/// The nonlinear system over the free nodes.
struct Problem<'a, T: Real> {
    mesh: &'a Mesh<T>,
    weights: Vec<T>,
    p: T,
    s: Vec<T>,
    kind: Kind,
    dofs: DofMap,
}

impl<'a, T: Real> Problem<'a, T> {
    fn new(mesh: &'a Mesh<T>, op: &OperatorSpec<T>, sigma: &Weight<T>, kind: Kind) -> Result<Self> {
        Ok(Self {
            mesh,
            weights: op.cell_weights(mesh)?,
            p: op.p,
            s: hat_pairings(sigma, mesh),
            kind,
            dofs: DofMap::new(mesh.boundary_mask()),
        })
    }

    fn homogeneous(mesh: &'a Mesh<T>, weights: Vec<T>, p: T, fixed: &[bool]) -> Self {
        Self {
            mesh,
            weights,
            p,
            s: vec![T::zero(); mesh.num_nodes()],
            kind: Kind::Source,
            dofs: DofMap::new(fixed),
        }
    }

    fn power(&self, v: T) -> T {
        if v == T::zero() {
            T::zero()
        } else {
            v.abs().powf(self.p - lit(2.0)) * v
        }
    }

    /// Free-node residual and the scaled max-norm.
    fn residual(&self, u: &[T], tau: T) -> (Vec<T>, T) {
        let (flux, mag) = fluxes(self.mesh, &self.weights, self.p, u);
        let mut f = Vec::with_capacity(self.dofs.len());
        let mut scale = Vec::with_capacity(self.dofs.len());
        for &i in &self.dofs.nodes {
            let (rhs, rmag) = match self.kind {
                Kind::Potential => {
                    let v = tau * self.s[i] * self.power(u[i]);
                    (v, v.abs())
                }
                Kind::Source => (tau * self.s[i], (tau * self.s[i]).abs()),
            };
            f.push(flux[i] - rhs);
            scale.push(mag[i] + rmag);
        }
        let smax = scale.iter().copied().fold(T::zero(), T::max);
        let res = if smax > T::zero() {
            let floor = smax * lit(1e-8);
            f.iter()
                .zip(&scale)
                .map(|(r, s)| r.abs() / s.max(floor))
                .fold(T::zero(), T::max)
        } else {
            f.iter().map(|r| r.abs()).fold(T::zero(), T::max)
        };
        (f, res)
    }

    fn energy(&self, u: &[T], tau: T) -> T {
        let grad = system::dirichlet_energy(self.mesh, &self.weights, self.p, u) / self.p;
        let pot: T = self
            .dofs
            .nodes
            .iter()
            .map(|&i| match self.kind {
                Kind::Potential => self.s[i] * u[i].abs().powf(self.p) / self.p,
                Kind::Source => self.s[i] * u[i],
            })
            .sum();
        grad - tau * pot
    }

    fn direction(&self, mat: &mut SparseMatrix<T>, u: &[T], f: &[T], tau: T, delta: T, full: bool) -> Option<Vec<T>> {
        assemble_jacobian(mat, self.mesh, &self.weights, self.p, u, delta);
        if full && self.kind == Kind::Potential {
            let two = lit::<T>(2.0);
            for (k, &i) in self.dofs.nodes.iter().enumerate() {
                let d = (self.p - T::one()) * (u[i] * u[i] + delta * delta).powf((self.p - two) / two);
                mat.add_diagonal(k, -tau * self.s[i] * d);
            }
        }
        let d = mat.solve(f).ok()?;
        let d: Vec<T> = d.into_iter().map(|x| -x).collect();
        if d.iter().all(|x| x.is_finite()) && dot(f, &d) < T::zero() {
            Some(d)
        } else {
            None
        }
    }

    /// Damped Newton at fixed `τ`; returns iterations used and final residual.
    fn newton(&self, u: &mut [T], tau: T, delta: T, cfg: &SolveConfig<T>) -> Result<(usize, T)> {
        let mut mat = SparseMatrix::for_mesh(self.mesh, &self.dofs);
        let (mut f, mut res) = self.residual(u, tau);
        let mut it = 0;
        while res > cfg.tolerance {
            if it >= cfg.max_iterations {
                return Err(Error::NoConvergence {
                    iterations: it,
                    residual: to_f64(res),
                });
            }
            it += 1;
            let d = self
                .direction(&mut mat, u, &f, tau, delta, true)
                .or_else(|| self.direction(&mut mat, u, &f, tau, delta.max(lit(1e-12)), false))
                .ok_or_else(|| Error::NoConvergence {
                    iterations: it,
                    residual: to_f64(res),
                })?;
            let slope = dot(&f, &d);
            let e0 = self.energy(u, tau);
            let fnorm = dot(&f, &f).sqrt();
            let mut alpha = T::one();
            let mut trial = u.to_vec();
            let accepted = loop {
                for (k, &i) in self.dofs.nodes.iter().enumerate() {
                    trial[i] = u[i] + alpha * d[k];
                }
                let e1 = self.energy(&trial, tau);
                if e1.is_finite() && e1 <= e0 + cfg.armijo * alpha * slope {
                    break true;
                }
                // near the solution energy differences drown in roundoff; fall back
                // to sufficient decrease of the residual norm
                let (ft, _) = self.residual(&trial, tau);
                let ftn = dot(&ft, &ft).sqrt();
                if alpha == T::one() && ftn < fnorm * lit(0.5) {
                    break true;
                }
                let roundoff = (e1 - e0).abs() <= lit::<T>(1e-12) * e0.abs().max(T::min_positive_value());
                if roundoff && ftn <= fnorm * (T::one() - cfg.armijo * alpha) {
                    break true;
                }
                alpha = alpha * lit(0.5);
                if alpha < cfg.min_step {
                    break false;
                }
            };
            if !accepted {
                return Err(Error::NoConvergence {
                    iterations: it,
                    residual: to_f64(res),
                });
            }
            u.copy_from_slice(&trial);
            let r = self.residual(u, tau);
            f = r.0;
            res = r.1;
            debug!("newton tau={} it={} alpha={} res={:e}", to_f64(tau), it, to_f64(alpha), to_f64(res));
        }
        Ok((it, res))
    }
}

fn initial_guess<T: Real>(mesh: &Mesh<T>, op: &OperatorSpec<T>, boundary: &BoundaryData<T>) -> Result<Vec<T>> {
    let u: Vec<T> = (0..mesh.num_nodes()).map(|i| boundary.value(i)).collect();
    if let BoundaryData::Nodal(values) = boundary {
        if values.len() != mesh.num_nodes() {
            return Err(Error::LengthMismatch {
                expected: mesh.num_nodes(),
                got: values.len(),
            });
        }
        return harmonic_lift(mesh, &op.cell_weights(mesh)?, mesh.boundary_mask(), u);
    }
    Ok(u)
}

/// Weighted harmonic extension of the fixed entries of `u`.
fn harmonic_lift<T: Real>(mesh: &Mesh<T>, w: &[T], fixed: &[bool], mut u: Vec<T>) -> Result<Vec<T>> {
    let dofs = DofMap::new(fixed);
    if dofs.is_empty() {
        return Ok(u);
    }
    let a = system::stiffness(mesh, &dofs, w);
    let mut lifted = u.clone();
    for &i in &dofs.nodes {
        lifted[i] = T::zero();
    }
    let (flux, _) = fluxes(mesh, w, lit(2.0), &lifted);
    let rhs: Vec<T> = dofs.nodes.iter().map(|&i| -flux[i]).collect();
    let x = a.solve(&rhs)?;
    for (k, &i) in dofs.nodes.iter().enumerate() {
        u[i] = x[k];
    }
    Ok(u)
}

/// Minimises `Σ |e| w |∇u|^p` with the entries of `u` at `fixed` nodes held;
/// returns the minimiser, Newton iterations and final residual.
pub(crate) fn dirichlet_minimizer<T: Real>(
    mesh: &Mesh<T>,
    weights: Vec<T>,
    p: T,
    fixed: &[bool],
    u: Vec<T>,
    cfg: &SolveConfig<T>,
) -> Result<(Vec<T>, usize, T)> {
    let u0 = harmonic_lift(mesh, &weights, fixed, u)?;
    let problem = Problem::homogeneous(mesh, weights, p, fixed);
    let (u, it, res, _) = run(&problem, u0, cfg)?;
    Ok((u, it, res))
}

fn run<T: Real>(problem: &Problem<T>, mut u: Vec<T>, cfg: &SolveConfig<T>) -> Result<(Vec<T>, usize, T, Vec<T>)> {
    let steps = cfg.continuation_steps;
    let mut total = 0;
    let mut res = T::zero();
    let mut energies = Vec::with_capacity(steps);
    let ratio = cfg.delta_final / cfg.delta_initial;
    for k in 1..=steps {
        let frac = lit::<T>(k as f64 / steps as f64);
        let delta = cfg.delta_initial * ratio.powf(frac);
        let (it, r) = problem.newton(&mut u, frac, delta, cfg)?;
        total += it;
        res = r;
        let e = problem.energy(&u, frac);
        if !e.is_finite() {
            return Err(Error::NonFinite(format!("energy at continuation step {k}")));
        }
        energies.push(e);
    }
    Ok((u, total, res, energies))
}

/// Solves `-div A(x,∇u) = σ|u|^{p-2}u` with the configured trace (default 1).
pub fn solve_local<T: Real>(op: &OperatorSpec<T>, sigma: &Weight<T>, mesh: &Mesh<T>, cfg: &SolveConfig<T>) -> Result<SolveResult<T>> {
    cfg.validate()?;
    let lambda = match &cfg.coercivity {
        CoercivityGate::Estimate { restarts, seed } => {
            let opts = FormBoundOptions {
                restarts: *restarts,
                seed: *seed,
                ..FormBoundOptions::default()
            };
            Some(estimate_form_bound(sigma, op, mesh, Sign::Upper, &opts)?.value)
        }
        CoercivityGate::Certified(l) => Some(*l),
        CoercivityGate::Waived => None,
    };
    if let Some(l) = lambda {
        if !(l < T::one()) {
            return Err(Error::Coercivity {
                measured: to_f64(l),
                threshold: 1.0,
            });
        }
    }
    let problem = Problem::new(mesh, op, sigma, Kind::Potential)?;
    let u0 = initial_guess(mesh, op, &cfg.boundary)?;
    let (u, iterations, residual, energies) = run(&problem, u0, cfg)?;
    finish(mesh, op.p, u, iterations, residual, energies, lambda, cfg)
}

/// Solves `-div A(x,∇u) = f` (`f` given as a weight) with the configured trace.
pub fn solve_dirichlet<T: Real>(op: &OperatorSpec<T>, rhs: &Weight<T>, mesh: &Mesh<T>, cfg: &SolveConfig<T>) -> Result<SolveResult<T>> {
    cfg.validate()?;
    let problem = Problem::new(mesh, op, rhs, Kind::Source)?;
    let u0 = initial_guess(mesh, op, &cfg.boundary)?;
    let (u, iterations, residual, energies) = run(&problem, u0, cfg)?;
    finish(mesh, op.p, u, iterations, residual, energies, None, cfg)
}

#[allow(clippy::too_many_arguments)]
fn finish<T: Real>(
    mesh: &Mesh<T>,
    p: T,
    u: Vec<T>,
    iterations: usize,
    residual: T,
    energies: Vec<T>,
    lambda: Option<T>,
    cfg: &SolveConfig<T>,
) -> Result<SolveResult<T>> {
    let mut field = ScalarField::new(mesh, u)?;
    let umax = field.values().iter().map(|v| v.abs()).fold(T::zero(), T::max);
    let min_value = field.min();
    let slack = cfg.tolerance * umax.max(T::one());
    if min_value < -slack {
        return Err(Error::Negativity {
            min: to_f64(min_value),
            slack: to_f64(slack),
        });
    }
    let normalization = match &cfg.normalization_ball {
        Some(ball) => normalize(&mut field, mesh, p, ball)?,
        None => T::one(),
    };
    let harnack = harnack_ratios(&field, mesh, &cfg.harnack_balls)?;
    Ok(SolveResult {
        min_value: field.min(),
        u: field,
        iterations,
        residual,
        harnack,
        normalization,
        lambda,
        energies,
    })
}

/// `∫_B u^{qp}` with cell-mean values.
pub fn normalization_integral<T: Real>(u: &ScalarField<T>, mesh: &Mesh<T>, p: T, ball: &Ball<T>) -> T {
    let qp = normalization_exponent(p) * p;
    let cells: Vec<T> = u.cell_values(mesh).into_iter().map(|v| v.max(T::zero()).powf(qp)).collect();
    ball_integral(mesh, ball, &cells)
}

/// Rescales `u` so that `∫_B u^{qp} = 1`; returns the factor applied.
pub fn normalize<T: Real>(u: &mut ScalarField<T>, mesh: &Mesh<T>, p: T, ball: &Ball<T>) -> Result<T> {
    let qp = normalization_exponent(p) * p;
    let i = normalization_integral(u, mesh, p, ball);
    if !(i > T::zero()) || !i.is_finite() {
        return Err(Error::pre("normalisation ball carries no mass of u"));
    }
    let c = i.powf(-T::one() / qp);
    u.scale_in_place(c);
    Ok(c)
}

/// `max/min` of `u` over the nodes of each ball (radial balls cover the radius
/// range `[ρ - s, ρ + s]`).
pub fn harnack_ratios<T: Real>(u: &ScalarField<T>, mesh: &Mesh<T>, balls: &[Ball<T>]) -> Result<Vec<T>> {
    u.check_mesh(mesh)?;
    balls
        .iter()
        .map(|b| {
            let mut lo = T::infinity();
            let mut hi = T::neg_infinity();
            let tol = lit::<T>(1e-12) * (T::one() + b.radius);
            for i in 0..mesh.num_nodes() {
                let inside = if mesh.is_radial() {
                    let r = mesh.node(i)[0];
                    let rho = b.center[0];
                    r >= (rho - b.radius).max(T::zero()) - tol && r <= rho + b.radius + tol
                } else {
                    mesh.distance(mesh.node(i), &b.center) <= b.radius + tol
                };
                if inside {
                    let v = u.values()[i];
                    if !(v > T::zero()) {
                        return Err(Error::NonPositive {
                            index: i,
                            value: to_f64(v),
                        });
                    }
                    lo = lo.min(v);
                    hi = hi.max(v);
                }
            }
            if lo == T::infinity() {
                return Err(Error::OutsideDomain(format!("ball at {:?} contains no nodes", b.center)));
            }
            Ok(hi / lo)
        })
        .collect()
}

/// Exponent `γ` of the radial solution `|x|^γ` of the Hardy problem, with the
/// second root of the scalar equation (discarded) when it exists.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadialExponent<T> {
    pub gamma: T,
    pub discarded: Option<T>,
}

/// Root of `(-γ)^{p-1}(γ(p-1) + n - p) = t·c₀` on the branch `[(p-n)/p, 0)`.
pub fn radial_exponent<T: Real>(params: &ProblemParams<T>, t: T) -> Result<RadialExponent<T>> {
    let c0 = params
        .c0
        .ok_or_else(|| Error::pre(format!("radial exponent needs p < n (p = {}, n = {})", params.p, params.n)))?;
    if !(t > T::zero() && t <= T::one()) {
        return Err(Error::pre(format!("multiplier t must lie in (0, 1], got {t}")));
    }
    let p = params.p;
    let n = params.dim();
    let end = (n - p) / p;
    if t == T::one() {
        return Ok(RadialExponent {
            gamma: (p - n) / p,
            discarded: None,
        });
    }
    // h(a) = a^{p-1}((n-p) - (p-1)a) - t c0 with a = -γ: increasing on (0, end], decreasing after
    let h = |a: T| a.powf(p - T::one()) * ((n - p) - (p - T::one()) * a) - t * c0;
    let bisect = |mut lo: T, mut hi: T, increasing: bool| -> T {
        for _ in 0..200 {
            let mid = (lo + hi) / lit(2.0);
            if (h(mid) < T::zero()) == increasing {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < lit(1e-15) {
                break;
            }
        }
        (lo + hi) / lit(2.0)
    };
    let a = bisect(T::zero(), end, true);
    let top = (n - p) / (p - T::one());
    let discarded = (h(end) > T::zero()).then(|| -bisect(end, top, false));
    Ok(RadialExponent { gamma: -a, discarded })
}
