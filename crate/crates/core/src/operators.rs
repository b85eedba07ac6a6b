//! The structure map `A(x, ξ) = w(x)|ξ|^{p-2}ξ` and sampled checks of its
//! ellipticity, boundedness, homogeneity, monotonicity and convexity.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mesh::{Mesh, Region, SubMesh};
use crate::mollify::mollify_cells;
use crate::{lit, to_f64, Error, Real, Result};

/// Spatial coefficient `w(x)`.
#[derive(Clone, Debug)]
pub enum Coefficient<T> {
    Constant(T),
    /// `below` where `x[axis] < at`, `above` otherwise (radial meshes: `axis = 0` is `r`).
    Step { axis: usize, at: T, below: T, above: T },
    /// `base + amplitude·sin(frequency·x[0])`.
    Oscillating { base: T, amplitude: T, frequency: T },
    /// One value per cell of `mesh`.
    Tabulated { mesh: Arc<Mesh<T>>, values: Vec<T> },
}

impl<T: Real> Coefficient<T> {
    pub fn at(&self, x: &[T]) -> T {
        match self {
            Coefficient::Constant(w) => *w,
            Coefficient::Step { axis, at, below, above } => {
                if x[(*axis).min(x.len() - 1)] < *at {
                    *below
                } else {
                    *above
                }
            }
            Coefficient::Oscillating { base, amplitude, frequency } => {
                *base + *amplitude * (*frequency * x[0]).sin()
            }
            Coefficient::Tabulated { mesh, values } => {
                let c = mesh.locate(x).unwrap_or_else(|| nearest_cell(mesh, x));
                values[c]
            }
        }
    }

    fn bounds(&self) -> (T, T) {
        match self {
            Coefficient::Constant(w) => (*w, *w),
            Coefficient::Step { below, above, .. } => (below.min(*above), below.max(*above)),
            Coefficient::Oscillating { base, amplitude, .. } => {
                (*base - amplitude.abs(), *base + amplitude.abs())
            }
            Coefficient::Tabulated { values, .. } => (
                values.iter().copied().fold(T::infinity(), T::min),
                values.iter().copied().fold(T::neg_infinity(), T::max),
            ),
        }
    }

    fn is_constant(&self) -> bool {
        matches!(self, Coefficient::Constant(_))
    }
}

fn nearest_cell<T: Real>(mesh: &Mesh<T>, x: &[T]) -> usize {
    (0..mesh.num_cells())
        .min_by(|a, b| {
            let da = mesh.distance(mesh.centroid(*a), x);
            let db = mesh.distance(mesh.centroid(*b), x);
            da.partial_cmp(&db).unwrap_or(std::cmp::Ordering::Equal)
        })
        .unwrap_or(0)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OperatorKind {
    PLaplacian,
    ScalarWeighted,
    UserTabulated,
}

/// `A(x, ξ) = w(x)|ξ|^{p-2}ξ` with its structure constants.
#[derive(Clone, Debug)]
pub struct OperatorSpec<T> {
    pub kind: OperatorKind,
    pub p: T,
    pub coefficient: Coefficient<T>,
    /// Ellipticity constant `m`.
    pub m: T,
    /// Boundedness constant `M`.
    pub big_m: T,
    /// Monotonicity constant, when known or estimated.
    pub c: Option<T>,
    /// Continuity modulus as `(δ, ω(δ))`, nondecreasing.
    pub omega: Vec<(T, T)>,
    /// Set once [`validate_structure`] has passed.
    pub validated: bool,
}

impl<T: Real> OperatorSpec<T> {
    pub fn p_laplacian(p: T) -> Self {
        Self {
            kind: OperatorKind::PLaplacian,
            p,
            coefficient: Coefficient::Constant(T::one()),
            m: T::one(),
            big_m: T::one(),
            c: Some(p_laplacian_monotonicity(p)),
            omega: vec![(T::zero(), T::zero())],
            validated: true,
        }
    }

    /// Scalar-weighted operator; `m`, `M` are the coefficient's bounds.
    pub fn scalar_weighted(p: T, coefficient: Coefficient<T>) -> Result<Self> {
        let (m, big_m) = coefficient.bounds();
        if !(m > T::zero()) || !big_m.is_finite() {
            return Err(Error::pre(format!("weight must satisfy 0 < m <= M, got [{m}, {big_m}]")));
        }
        let omega = analytic_modulus(&coefficient);
        let kind = if matches!(coefficient, Coefficient::Tabulated { .. }) {
            OperatorKind::UserTabulated
        } else {
            OperatorKind::ScalarWeighted
        };
        Ok(Self {
            kind,
            p,
            c: Some(m * p_laplacian_monotonicity(p)),
            omega,
            validated: kind != OperatorKind::UserTabulated,
            coefficient,
            m,
            big_m,
        })
    }

    /// Per-cell table on `mesh`; flagged unvalidated until [`validate_structure`] passes.
    pub fn tabulated(p: T, mesh: Arc<Mesh<T>>, values: Vec<T>) -> Result<Self> {
        if values.len() != mesh.num_cells() {
            return Err(Error::LengthMismatch {
                expected: mesh.num_cells(),
                got: values.len(),
            });
        }
        Self::scalar_weighted(p, Coefficient::Tabulated { mesh, values })
    }

    pub fn weight(&self, x: &[T]) -> T {
        self.coefficient.at(x)
    }

    /// Coefficient at every cell of `mesh`.
    pub fn cell_weights(&self, mesh: &Mesh<T>) -> Result<Vec<T>> {
        match &self.coefficient {
            Coefficient::Tabulated { mesh: own, values } => {
                if own.id() == mesh.id() {
                    Ok(values.clone())
                } else {
                    Ok((0..mesh.num_cells()).map(|c| self.weight(mesh.centroid(c))).collect())
                }
            }
            _ => Ok((0..mesh.num_cells()).map(|c| self.weight(mesh.centroid(c))).collect()),
        }
    }

    /// Same operator restricted to a submesh (tabulated coefficients are re-indexed).
    pub fn restrict(&self, sub: &SubMesh<T>) -> Self {
        let mut out = self.clone();
        if let Coefficient::Tabulated { values, .. } = &self.coefficient {
            out.coefficient = Coefficient::Tabulated {
                mesh: Arc::new(sub.mesh.clone()),
                values: sub.restrict_cells(values),
            };
        }
        out
    }

    pub fn is_spatially_constant(&self) -> bool {
        self.coefficient.is_constant()
    }

    /// `ω(δ)` from the recorded table (smallest tabulated entry with argument ≥ δ).
    pub fn modulus(&self, delta: T) -> T {
        for (d, w) in &self.omega {
            if *d >= delta {
                return *w;
            }
        }
        self.omega.last().map(|x| x.1).unwrap_or(T::zero())
    }

    /// `A(x, ξ) · ξ`.
    pub fn energy_density(&self, x: &[T], xi: &[T]) -> T {
        self.weight(x) * norm(xi).powf(self.p)
    }
}

/// Sharp monotonicity constant of the unweighted `p`-Laplacian map in the
/// branch-appropriate form; attained by antipodal pairs for `p >= 2`.
pub fn p_laplacian_monotonicity<T: Real>(p: T) -> T {
    let two = lit::<T>(2.0);
    if p >= two {
        two.powf(two - p)
    } else {
        p - T::one()
    }
}

fn norm<T: Real>(x: &[T]) -> T {
    x.iter().map(|v| *v * *v).sum::<T>().sqrt()
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(x, y)| *x * *y).sum()
}

/// `A(x, ξ)`.
pub fn eval_a<T: Real>(op: &OperatorSpec<T>, x: &[T], xi: &[T]) -> Result<Vec<T>> {
    if xi.iter().any(|v| !v.is_finite()) || x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("eval_A input".into()));
    }
    let r = norm(xi);
    if r == T::zero() {
        return Ok(vec![T::zero(); xi.len()]);
    }
    let s = op.weight(x) * r.powf(op.p - lit(2.0));
    Ok(xi.iter().map(|v| *v * s).collect())
}

pub use eval_a as eval_A;

fn analytic_modulus<T: Real>(coef: &Coefficient<T>) -> Vec<(T, T)> {
    let deltas: Vec<T> = (0..=24).map(|k| lit::<T>(2.0).powi(-k)).rev().collect();
    match coef {
        Coefficient::Constant(_) => vec![(T::zero(), T::zero())],
        Coefficient::Step { below, above, .. } => {
            let j = (*above - *below).abs();
            deltas.into_iter().map(|d| (d, j)).collect()
        }
        Coefficient::Oscillating { amplitude, frequency, .. } => deltas
            .into_iter()
            .map(|d| {
                let arg = (frequency.abs() * d / lit(2.0)).min(T::FRAC_PI_2());
                (d, lit::<T>(2.0) * amplitude.abs() * arg.sin())
            })
            .collect(),
        Coefficient::Tabulated { mesh, values } => empirical_modulus(mesh, values, 0),
    }
}

/// Sampled continuity modulus of per-cell data: cumulative maximum of
/// `|w_c - w_d|` over sampled cell pairs, sorted by centroid distance.
pub fn empirical_modulus<T: Real>(mesh: &Mesh<T>, values: &[T], seed: u64) -> Vec<(T, T)> {
    let n = mesh.num_cells();
    let mut pairs: Vec<(T, T)> = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // all neighbouring pairs within a few cells plus random long-range pairs
    let reach = 3.min(n.saturating_sub(1));
    for c in 0..n {
        for k in 1..=reach {
            if c + k < n {
                pairs.push((mesh.distance(mesh.centroid(c), mesh.centroid(c + k)), (values[c] - values[c + k]).abs()));
            }
        }
    }
    for _ in 0..(4 * n).min(20_000) {
        let a = rng.gen_range(0..n);
        let b = rng.gen_range(0..n);
        pairs.push((mesh.distance(mesh.centroid(a), mesh.centroid(b)), (values[a] - values[b]).abs()));
    }
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(std::cmp::Ordering::Equal));
    let mut out: Vec<(T, T)> = vec![(T::zero(), T::zero())];
    let mut best = T::zero();
    for (d, w) in pairs {
        best = best.max(w);
        if out.last().map(|l| l.0 == d).unwrap_or(false) {
            out.last_mut().expect("nonempty").1 = best;
        } else {
            out.push((d, best));
        }
    }
    out
}

/// A violated structure condition together with the sample that violates it.
#[derive(Clone, Debug, PartialEq)]
pub struct Violation {
    pub condition: String,
    pub witness: String,
}

#[derive(Clone, Debug)]
pub struct StructureReport<T> {
    pub samples: usize,
    /// `min (A·ξ - m|ξ|^p)/|ξ|^p`.
    pub ellipticity_margin: T,
    /// `min (M|ξ|^{p-1} - |A|)/|ξ|^{p-1}`.
    pub boundedness_margin: T,
    /// Largest relative homogeneity defect.
    pub homogeneity_error: T,
    /// Measured infimum of the monotonicity quotient in the branch for `p`.
    pub monotonicity_constant: T,
    /// `min` of the normalised midpoint-convexity gap of `ξ ↦ A·ξ`.
    pub convexity_margin: T,
    pub violations: Vec<Violation>,
}

impl<T: Real> StructureReport<T> {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Random `(x, ξ, η, t)` checks of the structure conditions.
///
/// Samples include antipodal pairs `η = -ξ` and collinear pairs, where the
/// monotonicity quotient is smallest for the power-type maps.
pub fn validate_structure<T: Real>(op: &OperatorSpec<T>, dim: usize, samples: usize, seed: u64) -> Result<StructureReport<T>> {
    if samples < 100 {
        return Err(Error::pre(format!("need at least 100 samples, got {samples}")));
    }
    if dim == 0 {
        return Err(Error::pre("vector dimension must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = op.p;
    let two = lit::<T>(2.0);
    let tol = lit::<T>(1e-12);
    let mut rep = StructureReport {
        samples,
        ellipticity_margin: T::infinity(),
        boundedness_margin: T::infinity(),
        homogeneity_error: T::zero(),
        monotonicity_constant: T::infinity(),
        convexity_margin: T::infinity(),
        violations: Vec::new(),
    };
    let fail = |rep: &mut StructureReport<T>, cond: &str, w: String| {
        if !rep.violations.iter().any(|v| v.condition == cond) {
            rep.violations.push(Violation { condition: cond.to_string(), witness: w });
        }
    };
    let xdim = match &op.coefficient {
        Coefficient::Tabulated { mesh, .. } => mesh.coord_dim(),
        _ => dim,
    };
    for s in 0..samples {
        let x: Vec<T> = match &op.coefficient {
            Coefficient::Tabulated { mesh, .. } => mesh.centroid(rng.gen_range(0..mesh.num_cells())).to_vec(),
            _ => (0..xdim).map(|_| lit(rng.gen_range(-1.0..1.0))).collect(),
        };
        let scale = lit::<T>(10f64.powf(rng.gen_range(-2.0..2.0)));
        let xi: Vec<T> = (0..dim).map(|_| lit::<T>(rng.gen_range(-1.0..1.0)) * scale).collect();
        let eta: Vec<T> = match s % 4 {
            0 => xi.iter().map(|v| -*v).collect(),
            1 => {
                let t = lit::<T>(rng.gen_range(-3.0..3.0));
                xi.iter().map(|v| *v * t).collect()
            }
            _ => {
                let sc = lit::<T>(10f64.powf(rng.gen_range(-2.0..2.0)));
                (0..dim).map(|_| lit::<T>(rng.gen_range(-1.0..1.0)) * sc).collect()
            }
        };
        let nx = norm(&xi);
        if nx == T::zero() {
            continue;
        }
        let a = eval_a(op, &x, &xi)?;
        let axi = dot(&a, &xi);
        let e = (axi - op.m * nx.powf(p)) / nx.powf(p);
        rep.ellipticity_margin = rep.ellipticity_margin.min(e);
        if e < -tol {
            fail(&mut rep, "ellipticity", format!("x = {x:?}, xi = {xi:?}, A.xi = {axi}"));
        }
        let b = (op.big_m * nx.powf(p - T::one()) - norm(&a)) / nx.powf(p - T::one());
        rep.boundedness_margin = rep.boundedness_margin.min(b);
        if b < -tol {
            fail(&mut rep, "boundedness", format!("x = {x:?}, xi = {xi:?}, |A| = {}", norm(&a)));
        }
        for t in [lit::<T>(-2.0), -T::one(), lit(0.5), lit(3.0), lit(rng.gen_range(-4.0..4.0))] {
            if t == T::zero() {
                continue;
            }
            let txi: Vec<T> = xi.iter().map(|v| *v * t).collect();
            let at = eval_a(op, &x, &txi)?;
            let f = t.abs().powf(p - two) * t;
            let err = at
                .iter()
                .zip(&a)
                .map(|(u, v)| (*u - *v * f).abs())
                .fold(T::zero(), T::max)
                / (t.abs().powf(p - T::one()) * norm(&a));
            rep.homogeneity_error = rep.homogeneity_error.max(err);
            if err > tol * lit(10.0) {
                fail(&mut rep, "homogeneity", format!("x = {x:?}, xi = {xi:?}, t = {t}"));
            }
        }
        let diff: Vec<T> = xi.iter().zip(&eta).map(|(u, v)| *u - *v).collect();
        let nd = norm(&diff);
        if nd > T::zero() {
            let ae = eval_a(op, &x, &eta)?;
            let lhs: T = a.iter().zip(&ae).zip(&diff).map(|((u, v), d)| (*u - *v) * *d).sum();
            let denom = if p >= two {
                nd.powf(p)
            } else {
                nd * nd / (nx.powf(two - p) + norm(&eta).powf(two - p))
            };
            let ratio = lhs / denom;
            rep.monotonicity_constant = rep.monotonicity_constant.min(ratio);
            if let Some(c) = op.c {
                if ratio < c * (T::one() - lit(1e-9)) {
                    fail(&mut rep, "monotonicity", format!("x = {x:?}, xi = {xi:?}, eta = {eta:?}, ratio = {ratio}"));
                }
            }
            if !(ratio > T::zero()) {
                fail(&mut rep, "monotonicity", format!("x = {x:?}, xi = {xi:?}, eta = {eta:?}, ratio = {ratio}"));
            }
            let mid: Vec<T> = xi.iter().zip(&eta).map(|(u, v)| (*u + *v) / two).collect();
            let fx = op.energy_density(&x, &xi);
            let fe = op.energy_density(&x, &eta);
            let avg = (fx + fe) / two;
            let gap = (avg - op.energy_density(&x, &mid)) / avg;
            rep.convexity_margin = rep.convexity_margin.min(gap);
            if gap < -tol {
                fail(&mut rep, "convexity", format!("x = {x:?}, xi = {xi:?}, eta = {eta:?}"));
            }
        }
    }
    Ok(rep)
}

impl<T: Real> OperatorSpec<T> {
    /// Marks the operator validated if `report` passed; records the measured
    /// monotonicity constant when none was known.
    pub fn with_report(mut self, report: &StructureReport<T>) -> Self {
        if report.passed() {
            self.validated = true;
            if self.c.is_none() {
                self.c = Some(report.monotonicity_constant);
            }
        }
        self
    }
}

/// `max L(Γ₁+Γ₂)/(L(Γ₁)+L(Γ₂))` over random smooth cell fields, where
/// `L(Γ) = (∫ A(·,Γ)·Γ)^{1/p}`.
pub fn minkowski_check<T: Real>(op: &OperatorSpec<T>, mesh: &Mesh<T>, trials: usize, seed: u64) -> Result<T> {
    if trials < 10 {
        return Err(Error::pre(format!("need at least 10 trials, got {trials}")));
    }
    let w = op.cell_weights(mesh)?;
    let g = mesh.grad_dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = T::zero();
    for _ in 0..trials {
        let f1 = random_smooth_field(mesh, &mut rng);
        let f2 = random_smooth_field(mesh, &mut rng);
        if let Some(r) = minkowski_ratio(op.p, mesh, &w, g, &f1, &f2) {
            worst = worst.max(r);
        }
    }
    Ok(worst)
}

/// `L(Γ₁+Γ₂)/(L(Γ₁)+L(Γ₂))`, `None` when both energies vanish.
pub fn minkowski_ratio<T: Real>(p: T, mesh: &Mesh<T>, w: &[T], g: usize, f1: &[T], f2: &[T]) -> Option<T> {
    let energy = |f: &[T]| -> T {
        (0..mesh.num_cells())
            .map(|c| mesh.volume(c) * w[c] * norm(&f[c * g..(c + 1) * g]).powf(p))
            .sum::<T>()
            .powf(T::one() / p)
    };
    let sum: Vec<T> = f1.iter().zip(f2).map(|(a, b)| *a + *b).collect();
    let (l1, l2) = (energy(f1), energy(f2));
    if l1 + l2 == T::zero() {
        return None;
    }
    Some(energy(&sum) / (l1 + l2))
}

fn random_smooth_field<T: Real>(mesh: &Mesh<T>, rng: &mut ChaCha8Rng) -> Vec<T> {
    let g = mesh.grad_dim();
    let d = mesh.coord_dim();
    let modes = 3;
    let mut coeffs = Vec::new();
    for _ in 0..g * modes {
        let k: Vec<f64> = (0..d).map(|_| rng.gen_range(-6.0..6.0)).collect();
        coeffs.push((k, rng.gen_range(-1.0..1.0), rng.gen_range(0.0..6.3)));
    }
    let mut out = Vec::with_capacity(g * mesh.num_cells());
    for c in 0..mesh.num_cells() {
        let x = mesh.centroid(c);
        for comp in 0..g {
            let mut v = 0.0;
            for (k, a, ph) in &coeffs[comp * modes..(comp + 1) * modes] {
                let arg: f64 = k.iter().zip(x).map(|(k, x)| k * to_f64(*x)).sum();
                v += a * (arg + ph).cos();
            }
            out.push(lit(v));
        }
    }
    out
}

/// `A_ε(x, ξ) = ∫ φ_ε(y) A(x+y, ξ) dy` on `mesh`: the coefficient is mollified
/// cellwise; spatially constant operators are returned unchanged.
pub fn mollify_operator<T: Real>(op: &OperatorSpec<T>, eps: T, mesh: &Mesh<T>, target: &Region<T>) -> Result<OperatorSpec<T>> {
    crate::mollify::check_radius(mesh, eps, target)?;
    if op.is_spatially_constant() {
        return Ok(op.clone());
    }
    let w = op.cell_weights(mesh)?;
    let we = mollify_cells(mesh, &w, eps, target)?;
    let mesh = Arc::new(mesh.clone());
    let omega = empirical_modulus(&mesh, &we, 0);
    Ok(OperatorSpec {
        kind: op.kind,
        p: op.p,
        coefficient: Coefficient::Tabulated { mesh, values: we },
        m: op.m,
        big_m: op.big_m,
        c: op.c,
        omega,
        validated: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::MeshSpec;
    use approx::assert_relative_eq;

    #[test]
    fn eval_examples() {
        let op = OperatorSpec::p_laplacian(3.0);
        assert_eq!(eval_a(&op, &[0.0, 0.0], &[0.0, 0.0]).unwrap(), vec![0.0, 0.0]);
        assert_eq!(eval_a(&op, &[0.0, 0.0], &[2.0, 0.0]).unwrap(), vec![4.0, 0.0]);
        let w = OperatorSpec::scalar_weighted(2.0, Coefficient::Constant(2.0)).unwrap();
        assert_eq!(eval_a(&w, &[0.3, 0.1], &[1.0, 1.0]).unwrap(), vec![2.0, 2.0]);
        assert!(eval_a(&op, &[0.0, 0.0], &[f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn identity_operator_passes() {
        let op = OperatorSpec::p_laplacian(2.0_f64);
        let r = validate_structure(&op, 3, 400, 7).unwrap();
        assert!(r.passed(), "{:?}", r.violations);
        assert!(r.ellipticity_margin.abs() < 1e-12);
        assert!(r.boundedness_margin.abs() < 1e-12);
    }

    #[test]
    fn weighted_bounds() {
        let op = OperatorSpec::scalar_weighted(
            2.5,
            Coefficient::Oscillating { base: 1.5, amplitude: 0.5, frequency: 7.0 },
        )
        .unwrap();
        assert_eq!((op.m, op.big_m), (1.0, 2.0));
        let r = validate_structure(&op, 2, 500, 1).unwrap();
        assert!(r.passed(), "{:?}", r.violations);
        assert!(r.ellipticity_margin >= 0.0);
    }

    #[test]
    fn monotonicity_p3_matches_dense_sweep() {
        // oracle: ξ = (s, 0), η = (1, 0), dense sweep of s
        let op = OperatorSpec::p_laplacian(3.0);
        let r = validate_structure(&op, 2, 2000, 3).unwrap();
        let sweep = (0..200_001)
            .map(|k| -50.0 + 1e-3 * k as f64 / 2.0)
            .filter(|s| (s - 1.0).abs() > 1e-6)
            .map(|s: f64| (s * s.abs() - 1.0) * (s - 1.0) / (s - 1.0).abs().powi(3))
            .fold(f64::INFINITY, f64::min);
        assert!(r.monotonicity_constant > 0.0);
        assert_relative_eq!(r.monotonicity_constant, sweep, max_relative = 1e-6);
        assert_relative_eq!(sweep, 0.5, max_relative = 1e-6);
    }

    #[test]
    fn too_few_samples() {
        assert!(validate_structure(&OperatorSpec::p_laplacian(2.0), 2, 50, 0).is_err());
    }

    #[test]
    fn violation_names_condition() {
        let mut op = OperatorSpec::p_laplacian(2.0_f64);
        op.m = 1.5;
        let r = validate_structure(&op, 2, 100, 0).unwrap();
        assert!(r.violations.iter().any(|v| v.condition == "ellipticity"));
    }

    #[test]
    fn minkowski_trivial_and_random() {
        let m = Mesh::build(&MeshSpec::<f64>::unit_box(2, 12)).unwrap();
        let op = OperatorSpec::p_laplacian(3.0);
        let w = vec![1.0; m.num_cells()];
        let f: Vec<f64> = (0..2 * m.num_cells()).map(|i| (i as f64 * 0.37).sin()).collect();
        let z = vec![0.0; f.len()];
        assert_relative_eq!(minkowski_ratio(3.0, &m, &w, 2, &f, &z).unwrap(), 1.0, epsilon = 1e-15);
        assert_relative_eq!(minkowski_ratio(3.0, &m, &w, 2, &f, &f).unwrap(), 1.0, epsilon = 1e-14);
        assert!(minkowski_ratio(3.0, &m, &w, 2, &z, &z).is_none());
        assert!(minkowski_check(&op, &m, 100, 11).unwrap() <= 1.0 + 1e-9);
    }

    #[test]
    fn mollify_constant_operator_unchanged() {
        let m = Mesh::build(&MeshSpec::<f64>::unit_box(2, 16)).unwrap();
        let op = OperatorSpec::scalar_weighted(2.0, Coefficient::Constant(3.0)).unwrap();
        let target = Region::Box { lower: vec![0.3, 0.3], upper: vec![0.7, 0.7] };
        let out = mollify_operator(&op, 0.1, &m, &target).unwrap();
        assert!(out.is_spatially_constant());
        assert!(mollify_operator(&op, 0.35, &m, &target).is_err());
    }

    #[test]
    fn mollified_step_is_sliding_average() {
        // oracle: direct 1D convolution across the jump on a uniform grid
        let m = Mesh::build(&MeshSpec::Tensor { lower: vec![0.0, 0.0], upper: vec![1.0, 1.0], cells: vec![200, 4] }).unwrap();
        let op = OperatorSpec::scalar_weighted(2.0, Coefficient::Step { axis: 0, at: 0.5, below: 1.0, above: 2.0 }).unwrap();
        let target = Region::Box { lower: vec![0.2, 0.0], upper: vec![0.8, 1.0] };
        // the second axis is not shrunk: use a radius below one cell height there
        let eps = 0.03;
        let err = mollify_operator(&op, eps, &m, &target);
        assert!(err.is_err());
        let target = Region::Box { lower: vec![0.2, 0.2], upper: vec![0.8, 0.8] };
        let out = mollify_operator(&op, eps, &m, &target).unwrap();
        let h = 1.0 / 200.0;
        for c in (0..200).filter(|c| (40..160).contains(c)) {
            let xc = (c as f64 + 0.5) * h;
            let (mut num, mut den) = (0.0, 0.0);
            for d in 0..200 {
                let xd = (d as f64 + 0.5) * h;
                let s = 1.0 - ((xc - xd) / eps).powi(2);
                if s > 0.0 {
                    let k = s.powi(3);
                    num += k * if xd < 0.5 { 1.0 } else { 2.0 };
                    den += k;
                }
            }
            let got = out.weight(&[xc, 0.5]);
            assert_relative_eq!(got, num / den, epsilon = 1e-12);
        }
        assert!(!out.validated);
    }

    #[test]
    fn mollified_modulus_bounds_defect() {
        let m = Mesh::build(&MeshSpec::<f64>::unit_box(2, 64)).unwrap();
        let op = OperatorSpec::scalar_weighted(2.0, Coefficient::Oscillating { base: 2.0, amplitude: 0.5, frequency: 9.0 }).unwrap();
        let target = Region::Box { lower: vec![0.25, 0.25], upper: vec![0.75, 0.75] };
        for eps in [0.2, 0.1, 0.05] {
            let out = mollify_operator(&op, eps, &m, &target).unwrap();
            let mut worst: f64 = 0.0;
            for c in 0..m.num_cells() {
                let x = m.centroid(c);
                if x.iter().all(|v| (0.25..=0.75).contains(v)) {
                    worst = worst.max((out.weight(x) - op.weight(x)).abs());
                }
            }
            assert!(worst <= op.modulus(eps) + 1e-12, "eps {eps}: {worst} > {}", op.modulus(eps));
        }
    }
}
