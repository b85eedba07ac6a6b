//! The exhaustion construction: nested subdomains, a mollification schedule,
//! normalised local solves and the energy / doubling / BMO / Harnack-chain /
//! convergence-in-measure diagnostics that accompany it, plus the
//! higher-integrability ladder.

use log::info;

use crate::analysis::{bmo_seminorm, doubling_and_wrh, estimate_form_bound, BallLattice, DoublingReport, FormBoundOptions, Sign};
use crate::cutoff::{make_cutoff, CutoffFamily};
use crate::decompose::{log_transform, ric_residual, schro_residual, ResidualCertificate, TestBasis};
use crate::field::{gradient, ScalarField, VectorField};
use crate::mesh::{Mesh, Region};
use crate::operators::{mollify_operator, OperatorSpec};
use crate::params::ProblemParams;
use crate::quadrature::{ball_cell_volumes, ball_integral, Ball};
use crate::solver::{solve_local, BoundaryData, CoercivityGate, SolveConfig, SolveResult};
use crate::weights::{mollify_weight, Weight};
use crate::{lit, to_f64, Error, Real, Result};

/// Nested subdomains `Ω₁ ⊂⊂ Ω₂ ⊂⊂ …` of a working mesh with their
/// mollification radii and the normalisation ball.
#[derive(Clone, Debug)]
pub struct ExhaustionSchedule<T> {
    pub regions: Vec<Region<T>>,
    pub eps: Vec<T>,
    pub ball: Ball<T>,
    /// When false the data are used unmollified (already smooth on the mesh).
    pub mollify: bool,
}

fn region_gap<T: Real>(outer: &Region<T>, inner: &Region<T>) -> T {
    outer.gap(inner)
}

impl<T: Real> ExhaustionSchedule<T> {
    /// `eps_j = min(2^{-j}, ½ dist(Ω_j, ∂Ω_{j+1}))`, the last level measured
    /// against the mesh region.
    pub fn new(regions: Vec<Region<T>>, domain: &Region<T>, ball: Ball<T>) -> Result<Self> {
        let mut eps = Vec::with_capacity(regions.len());
        for (j, r) in regions.iter().enumerate() {
            let next = regions.get(j + 1).unwrap_or(domain);
            let d = region_gap(next, r);
            let e = lit::<T>(0.5f64.powi(j as i32 + 1)).min(d / lit(2.0));
            // keep the radii nonincreasing when neighbouring gaps tie up to rounding
            eps.push(eps.last().map_or(e, |prev: &T| e.min(*prev)));
        }
        let s = Self {
            regions,
            eps,
            ball,
            mollify: true,
        };
        s.validate(domain)?;
        Ok(s)
    }

    /// Annuli `[a(1 + 2^{-j}), R(1 - 2^{-j}/10)]` inside the mesh shells `[a, R]`
    /// (balls when `a = 0`); normalisation ball `B(R/2, R/20)`.
    pub fn annuli(mesh: &Mesh<T>, levels: usize) -> Result<Self> {
        let Region::Annulus { inner, outer } = mesh.region() else {
            return Err(Error::pre("annular exhaustion needs a radial mesh"));
        };
        let regions = (1..=levels)
            .map(|j| {
                let d = lit::<T>(0.5f64.powi(j as i32) / 10.0) * outer;
                Region::Annulus {
                    inner: inner * (T::one() + lit(0.5f64.powi(j as i32))),
                    outer: outer - d,
                }
            })
            .collect();
        let ball = Ball::new(vec![outer / lit(2.0)], outer / lit(20.0));
        Self::new(regions, &mesh.region(), ball)
    }

    /// Concentric boxes shrunk by `2^{-j}/10` of the smallest extent.
    pub fn boxes(mesh: &Mesh<T>, levels: usize) -> Result<Self> {
        let Region::Box { lower, upper } = mesh.region() else {
            return Err(Error::pre("box exhaustion needs a tensor mesh"));
        };
        let len = lower.iter().zip(&upper).map(|(a, b)| *b - *a).fold(T::infinity(), T::min);
        let regions = (1..=levels)
            .map(|j| {
                let d = lit::<T>(0.5f64.powi(j as i32) / 10.0) * len;
                Region::Box {
                    lower: lower.iter().map(|a| *a + d).collect(),
                    upper: upper.iter().map(|b| *b - d).collect(),
                }
            })
            .collect();
        let center: Vec<T> = lower.iter().zip(&upper).map(|(a, b)| (*a + *b) / lit(2.0)).collect();
        let ball = Ball::new(center, len / lit(20.0));
        Self::new(regions, &mesh.region(), ball)
    }

    /// Strict nesting, positive nonincreasing radii, `8B ⊂ Ω₁`.
    pub fn validate(&self, domain: &Region<T>) -> Result<()> {
        if self.regions.is_empty() {
            return Err(Error::pre("exhaustion needs at least one level"));
        }
        for j in 0..self.regions.len() {
            let next = self.regions.get(j + 1).unwrap_or(domain);
            if !(region_gap(next, &self.regions[j]) > T::zero()) {
                return Err(Error::pre(format!("level {} is not compactly contained in the next", j + 1)));
            }
        }
        if self.eps.len() != self.regions.len() {
            return Err(Error::LengthMismatch {
                expected: self.regions.len(),
                got: self.eps.len(),
            });
        }
        if self.eps.iter().any(|e| !(*e > T::zero())) || self.eps.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::pre("mollification radii must be positive and nonincreasing"));
        }
        if !self.regions[0].contains_ball(&self.ball.center, self.ball.radius * lit(8.0)) {
            return Err(Error::OutsideDomain("8B is not inside the first exhaustion level".into()));
        }
        Ok(())
    }

    /// Standard cutoffs around the normalisation ball: `(2s, 4s)` and `(3s, 6s)`.
    pub fn cutoffs(&self) -> Vec<CutoffFamily<T>> {
        let s = self.ball.radius;
        vec![
            CutoffFamily::new(self.ball.center.clone(), s * lit(2.0), s * lit(4.0), 3),
            CutoffFamily::new(self.ball.center.clone(), s * lit(3.0), s * lit(6.0), 3),
        ]
    }
}

/// One row of the energy report.
#[derive(Clone, Debug, PartialEq)]
pub struct EnergyRow<T> {
    pub cutoff: usize,
    /// `∫|∇u|^p h^p`
    pub grad_u: T,
    /// `∫u^p |∇h|^p`
    pub u_grad_h: T,
    /// `∫(|∇u|/u)^p h^p`
    pub log_grad: T,
    /// `∫|∇h|^p`
    pub grad_h: T,
    /// `∫|∇(u^{p-1})|^p h^p`
    pub grad_power: T,
    /// `∫u^{p(p-1)} |∇h|^p`
    pub power_grad_h: T,
    pub r1: T,
    pub r2: T,
    pub r3: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnergyReport<T> {
    pub rows: Vec<EnergyRow<T>>,
}

fn ratio<T: Real>(a: T, b: T) -> T {
    if a == T::zero() {
        T::zero()
    } else if b > T::zero() {
        a / b
    } else {
        T::infinity()
    }
}

/// The six Caccioppoli integrals and their three ratios for each cutoff.
pub fn caccioppoli_checks<T: Real>(
    u: &ScalarField<T>,
    mesh: &Mesh<T>,
    cutoffs: &[CutoffFamily<T>],
    params: &ProblemParams<T>,
) -> Result<EnergyReport<T>> {
    u.check_mesh(mesh)?;
    let p = params.p;
    let g = mesh.grad_dim();
    let ug = crate::field::element_gradients(mesh, u.values());
    let mut rows = Vec::with_capacity(cutoffs.len());
    for (k, fam) in cutoffs.iter().enumerate() {
        let h = make_cutoff(fam, mesh)?;
        let hg = crate::field::element_gradients(mesh, h.values());
        let mut acc = [T::zero(); 6];
        for (ei, e) in mesh.elements().iter().enumerate() {
            let hm = e.midpoint_value(h.values());
            let gh: T = hg[ei * g..(ei + 1) * g].iter().map(|v| *v * *v).sum::<T>().sqrt();
            if hm == T::zero() && gh == T::zero() {
                continue;
            }
            let um = e.midpoint_value(u.values());
            if !(um > T::zero()) {
                return Err(Error::NonPositive {
                    index: e.cell,
                    value: to_f64(um),
                });
            }
            let gu: T = ug[ei * g..(ei + 1) * g].iter().map(|v| *v * *v).sum::<T>().sqrt();
            let vol = e.volume;
            let hp = hm.powf(p);
            let ghp = gh.powf(p);
            acc[0] = acc[0] + vol * gu.powf(p) * hp;
            acc[1] = acc[1] + vol * um.powf(p) * ghp;
            acc[2] = acc[2] + vol * (gu / um).powf(p) * hp;
            acc[3] = acc[3] + vol * ghp;
            acc[4] = acc[4] + vol * ((p - T::one()) * um.powf(p - lit(2.0)) * gu).powf(p) * hp;
            acc[5] = acc[5] + vol * um.powf(p * (p - T::one())) * ghp;
        }
        rows.push(EnergyRow {
            cutoff: k,
            grad_u: acc[0],
            u_grad_h: acc[1],
            log_grad: acc[2],
            grad_h: acc[3],
            grad_power: acc[4],
            power_grad_h: acc[5],
            r1: ratio(acc[0], acc[1]),
            r2: ratio(acc[2], acc[3]),
            r3: ratio(acc[4], acc[5]),
        });
    }
    Ok(EnergyReport { rows })
}

/// `(j, k, δ, fraction)`: volume fraction where `|∇u_j - ∇u_k| > δ`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasureRow<T> {
    pub j: usize,
    pub k: usize,
    pub delta: T,
    pub fraction: T,
}

/// Pairwise convergence-in-measure table for gradient fields on one mesh.
pub fn convergence_in_measure<T: Real>(grads: &[VectorField<T>], mesh: &Mesh<T>, deltas: &[T]) -> Result<Vec<MeasureRow<T>>> {
    if grads.len() < 2 {
        return Err(Error::pre("need at least two fields"));
    }
    for g in grads {
        if g.num_cells() != mesh.num_cells() || g.dim() != mesh.grad_dim() {
            return Err(Error::LengthMismatch {
                expected: mesh.num_cells(),
                got: g.num_cells(),
            });
        }
    }
    let total = mesh.total_volume();
    let mut rows = Vec::new();
    for j in 0..grads.len() {
        for k in j + 1..grads.len() {
            let diff: Vec<T> = (0..mesh.num_cells())
                .map(|c| {
                    grads[j]
                        .get(c)
                        .iter()
                        .zip(grads[k].get(c))
                        .map(|(a, b)| (*a - *b) * (*a - *b))
                        .sum::<T>()
                        .sqrt()
                })
                .collect();
            for &delta in deltas {
                let vol: T = diff
                    .iter()
                    .zip(mesh.volumes())
                    .filter(|(d, _)| **d > delta)
                    .map(|(_, v)| *v)
                    .sum();
                rows.push(MeasureRow { j, k, delta, fraction: vol / total });
            }
        }
    }
    Ok(rows)
}

/// `λ(s) = (s - p + 1)(p/s)^p`, defined for `s > p`.
pub fn lambda_s<T: Real>(s: T, p: T) -> Result<T> {
    if !(s > p) {
        return Err(Error::pre(format!("lambda(s) needs s > p, got s = {s}, p = {p}")));
    }
    Ok((s - p + T::one()) * (p / s).powf(p))
}

/// `s_j = ((n-p)/n)^j q` for `j = 0..=N`, `N` the largest index with `s_N > p`.
pub fn s_ladder<T: Real>(q: T, params: &ProblemParams<T>) -> Result<Vec<T>> {
    if !params.subcritical() {
        return Err(Error::pre("the integrability ladder needs p < n"));
    }
    let f = (params.dim() - params.p) / params.dim();
    let mut out = vec![q];
    loop {
        let next = *out.last().unwrap() * f;
        if next > params.p && out.len() < 10_000 {
            out.push(next);
        } else {
            break;
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct HigherIntegrabilityReport<T> {
    /// `s_0 = q > s_1 > … > s_N > p`.
    pub ladder: Vec<T>,
    /// `N`.
    pub steps: usize,
    pub lambda_s1: Option<T>,
    /// Cutoff radii `(1 + ℓ/N) r`.
    pub radii: Vec<T>,
    /// Gradient bound `C N / r` of the nested cutoffs.
    pub gradient_bound: T,
    /// `(⨍_{B_ℓ} u^{s_ℓ})^{1/s_ℓ}` per rung.
    pub averages: Vec<T>,
    /// Consecutive quotients of the averages.
    pub trail: Vec<T>,
    /// `∫_{B(x,r)} u^q`.
    pub integral: T,
}

/// Runs the `s`-ladder on `u` around `ball`, gated by `λ < λ(s₁)`.
pub fn higher_integrability<T: Real>(
    u: &ScalarField<T>,
    mesh: &Mesh<T>,
    q: T,
    ball: &Ball<T>,
    lambda: T,
    params: &ProblemParams<T>,
) -> Result<HigherIntegrabilityReport<T>> {
    u.check_mesh(mesh)?;
    let ladder = s_ladder(q, params)?;
    let steps = ladder.len() - 1;
    let lambda_s1 = if steps >= 1 { Some(lambda_s(ladder[1], params.p)?) } else { None };
    if let Some(l1) = lambda_s1 {
        if !(lambda < l1) {
            return Err(Error::Gate {
                measured: to_f64(lambda),
                threshold: to_f64(l1),
            });
        }
    }
    let nn = lit::<T>(steps.max(1) as f64);
    let radii: Vec<T> = (0..=steps)
        .map(|l| ball.radius * (T::one() + lit::<T>(l as f64) / nn))
        .collect();
    if !mesh.region().contains_ball(&ball.center, *radii.last().unwrap()) {
        return Err(Error::OutsideDomain("largest ladder ball leaves the mesh".into()));
    }
    let cells = u.cell_values(mesh);
    let mut averages = Vec::with_capacity(ladder.len());
    for (s, r) in ladder.iter().zip(&radii) {
        let b = Ball::new(ball.center.clone(), *r);
        let vol: T = ball_cell_volumes(mesh, &b).iter().map(|(_, v)| *v).sum();
        let pw: Vec<T> = cells.iter().map(|v| v.max(T::zero()).powf(*s)).collect();
        averages.push((ball_integral(mesh, &b, &pw) / vol).powf(s.recip()));
    }
    let trail = averages.windows(2).map(|w| w[0] / w[1]).collect();
    let pq: Vec<T> = cells.iter().map(|v| v.max(T::zero()).powf(q)).collect();
    Ok(HigherIntegrabilityReport {
        ladder,
        steps,
        lambda_s1,
        gradient_bound: lit::<T>(4.0) * nn / ball.radius,
        radii,
        averages,
        trail,
        integral: ball_integral(mesh, ball, &pq),
    })
}

#[derive(Clone, Debug)]
pub struct PipelineConfig<T> {
    pub solve: SolveConfig<T>,
    /// Restarts and seed of the form-bound gate.
    pub gate_restarts: usize,
    pub seed: u64,
    /// Skip the measurement and use these `(λ, Λ)`.
    pub certified: Option<(T, T)>,
    pub deltas: Vec<T>,
    pub lattice_scales: usize,
    pub lattice_centers: usize,
    /// Cutoffs for the energy report; defaults to the schedule's.
    pub cutoffs: Option<Vec<CutoffFamily<T>>>,
    pub certificate_tolerance: T,
}

impl<T: Real> Default for PipelineConfig<T> {
    fn default() -> Self {
        Self {
            solve: SolveConfig::default(),
            gate_restarts: 4,
            seed: 0,
            certified: None,
            deltas: vec![lit(1e-1), lit(1e-2), lit(1e-3)],
            lattice_scales: 3,
            lattice_centers: 4,
            cutoffs: None,
            certificate_tolerance: lit(1e-3),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LevelTrace<T> {
    pub index: usize,
    pub region: Region<T>,
    pub eps: T,
    pub mesh: Mesh<T>,
    /// Level cell → working-mesh cell.
    pub cell_map: Vec<usize>,
    pub op: OperatorSpec<T>,
    pub sigma: Weight<T>,
    pub result: SolveResult<T>,
    pub energy: EnergyReport<T>,
    /// Doubling / WRH statistics of `u^{qp}`.
    pub doubling: DoublingReport<T>,
    pub bmo_log: T,
    /// `max ⨍_{2B'} v^p / ⨍_B v^p` over lattice balls `B'`, `v = u^q`.
    pub harnack_chain: T,
}

#[derive(Clone, Debug)]
pub struct PipelineTrace<T> {
    pub gate_lambda: T,
    pub gate_big_lambda: T,
    pub levels: Vec<LevelTrace<T>>,
    pub convergence: Vec<MeasureRow<T>>,
    /// The first level's mesh, on which the convergence table is measured.
    pub common: Mesh<T>,
    pub u: ScalarField<T>,
    pub v: ScalarField<T>,
    pub schro: ResidualCertificate<T>,
    pub ric: ResidualCertificate<T>,
}

impl<T: Real> PipelineTrace<T> {
    pub fn last(&self) -> &LevelTrace<T> {
        self.levels.last().expect("pipeline has levels")
    }
}

/// Measures `(λ, Λ)` of `σ` on `mesh`.
pub fn gate_constants<T: Real>(op: &OperatorSpec<T>, sigma: &Weight<T>, mesh: &Mesh<T>, cfg: &PipelineConfig<T>) -> Result<(T, T)> {
    if let Some(c) = cfg.certified {
        return Ok(c);
    }
    let opts = FormBoundOptions {
        restarts: cfg.gate_restarts,
        seed: cfg.seed,
        ..FormBoundOptions::default()
    };
    let up = estimate_form_bound(sigma, op, mesh, Sign::Upper, &opts)?.value;
    let low = estimate_form_bound(sigma, op, mesh, Sign::Lower, &opts)?.value;
    Ok((up, low.max(T::zero())))
}

fn harnack_chain<T: Real>(mesh: &Mesh<T>, cells: &[T], ball: &Ball<T>, lattice: &BallLattice<T>) -> T {
    let region = mesh.region();
    let base: T = {
        let vol: T = ball_cell_volumes(mesh, ball).iter().map(|(_, v)| *v).sum();
        ball_integral(mesh, ball, cells) / vol
    };
    lattice
        .balls
        .iter()
        .filter(|b| region.contains_ball(&b.center, b.radius * lit(4.0)))
        .filter_map(|b| {
            let big = b.scaled(lit(2.0));
            let vol: T = ball_cell_volumes(mesh, &big).iter().map(|(_, v)| *v).sum();
            (vol > T::zero()).then(|| ball_integral(mesh, &big, cells) / vol / base)
        })
        .fold(T::zero(), T::max)
}

/// Runs the exhaustion construction on the working `mesh`.
pub fn run_pipeline<T: Real>(
    op: &OperatorSpec<T>,
    sigma: &Weight<T>,
    mesh: &Mesh<T>,
    schedule: &ExhaustionSchedule<T>,
    cfg: &PipelineConfig<T>,
) -> Result<PipelineTrace<T>> {
    schedule.validate(&mesh.region())?;
    let params = ProblemParams::new(mesh.dim(), op.p)?;
    let (lambda, big_lambda) = gate_constants(op, sigma, mesh, cfg)?;
    info!("gate: lambda = {:.6}, Lambda = {:.6}, p# = {:.6}", to_f64(lambda), to_f64(big_lambda), to_f64(params.p_sharp));
    if !(lambda < params.p_sharp) {
        return Err(Error::Gate {
            measured: to_f64(lambda),
            threshold: to_f64(params.p_sharp),
        });
    }
    if !big_lambda.is_finite() {
        return Err(Error::Gate {
            measured: f64::INFINITY,
            threshold: f64::INFINITY,
        });
    }
    let lattice_mesh = mesh.submesh(&schedule.regions[0])?;
    let lattice = BallLattice::dyadic(&lattice_mesh.mesh, cfg.lattice_scales, cfg.lattice_centers);
    let cutoffs = cfg.cutoffs.clone().unwrap_or_else(|| schedule.cutoffs());
    let qp = params.qp();
    let mut levels = Vec::with_capacity(schedule.regions.len());
    for (j, region) in schedule.regions.iter().enumerate() {
        let eps = schedule.eps[j];
        let sub = mesh.submesh(region)?;
        let (op_j, sigma_j) = if schedule.mollify {
            (
                mollify_operator(op, eps, mesh, region)?.restrict(&sub),
                mollify_weight(sigma, eps, mesh, region)?.restrict(&sub.cell_map),
            )
        } else {
            (op.restrict(&sub), sigma.restrict(&sub.cell_map))
        };
        // nodal traces are given on the working mesh
        let boundary = match &cfg.solve.boundary {
            BoundaryData::Nodal(v) if v.len() == mesh.num_nodes() => {
                BoundaryData::Nodal(sub.node_map.iter().map(|&i| v[i]).collect())
            }
            b => b.clone(),
        };
        let solve_cfg = SolveConfig {
            boundary,
            normalization_ball: Some(schedule.ball.clone()),
            harnack_balls: vec![schedule.ball.scaled(lit(2.0))],
            coercivity: CoercivityGate::Certified(lambda),
            ..cfg.solve.clone()
        };
        let result = solve_local(&op_j, &sigma_j, &sub.mesh, &solve_cfg)?;
        let energy = caccioppoli_checks(&result.u, &sub.mesh, &cutoffs, &params)?;
        let w = result.u.map(&sub.mesh, |v| v.max(T::zero()).powf(qp))?;
        let doubling = doubling_and_wrh(&w, &sub.mesh, params.dim() / (params.dim() - params.p).max(T::one()), &lattice)?;
        let (logu, _) = log_transform(&result.u, &sub.mesh)?;
        let bmo_log = bmo_seminorm(&logu, &sub.mesh, params.p, &lattice)?;
        let harnack = harnack_chain(&sub.mesh, &w.cell_values(&sub.mesh), &schedule.ball, &lattice);
        info!(
            "level {}: residual {:.3e}, doubling {:.4}, bmo {:.4}, chain {:.4}",
            j + 1,
            to_f64(result.residual),
            to_f64(doubling.worst_doubling),
            to_f64(bmo_log),
            to_f64(harnack)
        );
        levels.push(LevelTrace {
            index: j + 1,
            region: region.clone(),
            eps,
            cell_map: sub.cell_map.clone(),
            mesh: sub.mesh,
            op: op_j,
            sigma: sigma_j,
            result,
            energy,
            doubling,
            bmo_log,
            harnack_chain: harnack,
        });
    }
    // common submesh: the first level, as cells of the working mesh
    let common = lattice_mesh;
    let grads: Vec<VectorField<T>> = levels
        .iter()
        .map(|lv| {
            let g = gradient(&lv.result.u, &lv.mesh)?;
            let mut local = vec![usize::MAX; mesh.num_cells()];
            for (k, &c) in lv.cell_map.iter().enumerate() {
                local[c] = k;
            }
            let d = g.dim();
            let mut vals = Vec::with_capacity(common.mesh.num_cells() * d);
            for &c in &common.cell_map {
                let k = local[c];
                if k == usize::MAX {
                    return Err(Error::Mesh("level does not cover the first level".into()));
                }
                vals.extend_from_slice(g.get(k));
            }
            VectorField::new(&common.mesh, vals)
        })
        .collect::<Result<_>>()?;
    let convergence = if grads.len() >= 2 {
        convergence_in_measure(&grads, &common.mesh, &cfg.deltas)?
    } else {
        Vec::new()
    };
    let last = levels.last().unwrap();
    let basis = TestBasis::standard(&last.mesh);
    let schro = schro_residual(&last.result.u, &last.sigma, &last.op, &last.mesh, &basis, cfg.certificate_tolerance)?;
    let (v, _) = log_transform(&last.result.u, &last.mesh)?;
    let ric = ric_residual(&v, &last.sigma, &last.op, &last.mesh, &basis, cfg.certificate_tolerance * lit(2.0))?;
    Ok(PipelineTrace {
        gate_lambda: lambda,
        gate_big_lambda: big_lambda,
        u: last.result.u.clone(),
        v,
        levels,
        convergence,
        common: common.mesh,
        schro,
        ric,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::CellField;
    use crate::mesh::MeshSpec;
    use crate::weights::hardy_weight;
    use approx::assert_relative_eq;

    #[test]
    fn lambda_s_examples() {
        assert_eq!(lambda_s(4.0, 2.0).unwrap(), 0.75);
        assert_eq!(lambda_s(6.0, 3.0).unwrap(), 0.5);
        assert_relative_eq!(lambda_s(2.0 + 1e-9, 2.0).unwrap(), 1.0, epsilon = 1e-8);
        assert!(lambda_s(2.0, 2.0).is_err());
        let vals: Vec<f64> = (1..=100).map(|k| lambda_s(2.0 + k as f64 * 0.1, 2.0).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn ladder_example() {
        let params = ProblemParams::new(4, 2.0).unwrap();
        assert_eq!(s_ladder(8.0, &params).unwrap(), vec![8.0, 4.0]);
        assert!(s_ladder(8.0, &ProblemParams::new(2, 2.0).unwrap()).is_err());
    }

    #[test]
    fn schedule_invariants() {
        let m = Mesh::build(&MeshSpec::<f64>::radial(3, 0.0, 1.0, 256)).unwrap();
        let s = ExhaustionSchedule::annuli(&m, 5).unwrap();
        assert_eq!(s.regions.len(), 5);
        assert!(s.eps.windows(2).all(|w| w[1] <= w[0]));
        for w in s.regions.windows(2) {
            assert!(w[1].gap(&w[0]) > 0.0);
        }
        let mut bad = s.clone();
        bad.ball.radius = 0.2;
        assert!(bad.validate(&m.region()).is_err());
    }

    #[test]
    fn constant_solution_energy_zero() {
        let m = Mesh::build(&MeshSpec::<f64>::radial(3, 0.1, 1.0, 128)).unwrap();
        let params = ProblemParams::new(3, 2.0).unwrap();
        let u = ScalarField::constant(&m, 2.0);
        let fams = vec![CutoffFamily::new(vec![0.5], 0.1, 0.2, 3)];
        let r = caccioppoli_checks(&u, &m, &fams, &params).unwrap();
        assert_eq!((r.rows[0].r1, r.rows[0].r2, r.rows[0].r3), (0.0, 0.0, 0.0));
        assert!(r.rows[0].u_grad_h > 0.0);
    }

    #[test]
    fn caccioppoli_integrals_match_quadrature() {
        let m = Mesh::build(&MeshSpec::<f64>::radial(3, 0.05, 1.0, 4096)).unwrap();
        let params = ProblemParams::new(3, 2.0).unwrap();
        let u = ScalarField::from_fn(&m, |x| x[0].powf(-0.25)).unwrap();
        let fam = CutoffFamily::linear(vec![0.45], 0.15, 0.3);
        let r = caccioppoli_checks(&u, &m, &[fam], &params).unwrap();
        // 1D quadrature: h(r) = clamp((0.3 - |r - 0.45|)/0.15), |h'| = 1/0.15 on the ramps
        let k = 200_000;
        let (lo, hi) = (0.15, 0.75);
        let dr = (hi - lo) / k as f64;
        let mut acc = [0.0; 6];
        for i in 0..k {
            let x = lo + (i as f64 + 0.5) * dr;
            let d = (x - 0.45f64).abs();
            let h = ((0.3 - d) / 0.15).clamp(0.0, 1.0);
            let gh = if d > 0.15 && d < 0.3 { 1.0 / 0.15 } else { 0.0 };
            let w = 4.0 * std::f64::consts::PI * x * x * dr;
            let uu = x.powf(-0.25);
            let gu = 0.25 * x.powf(-1.25);
            acc[0] += w * gu * gu * h * h;
            acc[1] += w * uu * uu * gh * gh;
            acc[2] += w * (gu / uu).powi(2) * h * h;
            acc[3] += w * gh * gh;
            acc[4] += w * gu * gu * h * h;
            acc[5] += w * uu * uu * gh * gh;
        }
        let row = &r.rows[0];
        let got = [row.grad_u, row.u_grad_h, row.log_grad, row.grad_h, row.grad_power, row.power_grad_h];
        for (a, b) in got.iter().zip(&acc) {
            assert_relative_eq!(*a, *b, max_relative = 0.01);
        }
    }

    #[test]
    fn interpolation_inequality_below_two() {
        // ∫|∇u|^p u^{p(p-2)} ≤ ∫|∇u|^p + ∫(|∇u|/u)^p for p < 2
        let m = Mesh::build(&MeshSpec::<f64>::radial(3, 0.1, 1.0, 512)).unwrap();
        let p = 1.5;
        let u = ScalarField::from_fn(&m, |x| 0.2 + 3.0 * x[0] * x[0]).unwrap();
        let g = gradient(&u, &m).unwrap();
        let cells = u.cell_values(&m);
        let (mut lhs, mut a, mut b) = (0.0, 0.0, 0.0);
        for c in 0..m.num_cells() {
            let gu = g.get(c)[0].abs();
            let v = m.volume(c);
            lhs += v * gu.powf(p) * cells[c].powf(p * (p - 2.0));
            a += v * gu.powf(p);
            b += v * (gu / cells[c]).powf(p);
        }
        assert!(lhs <= a + b);
    }

    #[test]
    fn convergence_table_examples() {
        let m = Mesh::build(&MeshSpec::<f64>::unit_box(2, 8)).unwrap();
        let u = ScalarField::from_fn(&m, |x| x[0] * x[1]).unwrap();
        let g = gradient(&u, &m).unwrap();
        let rows = convergence_in_measure(&[g.clone(), g.clone()], &m, &[1e-3]).unwrap();
        assert_eq!(rows[0].fraction, 0.0);
        let fields: Vec<VectorField<f64>> = [10.0, 100.0, 10000.0]
            .iter()
            .map(|k| gradient(&ScalarField::from_fn(&m, |x| x[0] * x[1] + x[0] / k).unwrap(), &m).unwrap())
            .collect();
        let rows = convergence_in_measure(&[g.clone(), fields[0].clone(), fields[1].clone(), fields[2].clone()], &m, &[1e-3]).unwrap();
        let against_base: Vec<f64> = rows.iter().filter(|r| r.j == 0).map(|r| r.fraction).collect();
        assert_eq!(against_base, vec![1.0, 1.0, 0.0]);
        assert!(convergence_in_measure(&[g], &m, &[1e-3]).is_err());
    }

    #[test]
    fn zero_potential_pipeline() {
        let m = Mesh::build(&MeshSpec::<f64>::radial(3, 0.0, 1.0, 512)).unwrap();
        let s = ExhaustionSchedule::annuli(&m, 3).unwrap();
        let trace = run_pipeline(&OperatorSpec::p_laplacian(2.0), &Weight::zero(&m), &m, &s, &PipelineConfig::default()).unwrap();
        assert_eq!(trace.levels.len(), 3);
        for lv in &trace.levels {
            let u = lv.result.u.values();
            assert!(u.iter().all(|v| (*v - u[0]).abs() < 1e-12));
            assert!(lv.energy.rows.iter().all(|r| r.grad_u == 0.0));
            assert!(lv.doubling.doubling.iter().all(|(_, d)| (*d - 1.0).abs() < 1e-9));
        }
        assert!(trace.convergence.iter().all(|r| r.fraction == 0.0));
        assert!(trace.schro.passed() && trace.ric.passed());
    }

    #[test]
    fn gate_refuses_large_weight() {
        let m = Mesh::build(&MeshSpec::<f64>::radial(3, 0.0, 1.0, 256)).unwrap();
        let s = ExhaustionSchedule::annuli(&m, 2).unwrap();
        let sigma = Weight::from_density(CellField::from_fn(&m, |_| 30.0).unwrap());
        let err = run_pipeline(&OperatorSpec::p_laplacian(2.0), &sigma, &m, &s, &PipelineConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Gate { .. }), "{err}");
    }

    #[test]
    fn hardy_pipeline_tracks_power() {
        let params = ProblemParams::new(3, 2.0).unwrap();
        let m = Mesh::build(&MeshSpec::<f64>::radial(3, 0.05, 1.0, 1024)).unwrap();
        let sigma = hardy_weight(&params, 0.75, &m).unwrap();
        let mut s = ExhaustionSchedule::annuli(&m, 3).unwrap();
        s.mollify = false;
        let cfg = PipelineConfig { certified: Some((0.75, 0.0)), ..PipelineConfig::default() };
        let trace = run_pipeline(&OperatorSpec::p_laplacian(2.0), &sigma, &m, &s, &cfg).unwrap();
        let lv = trace.last();
        // oracle: u = A r^{-1/4} + B r^{-3/4} with equal boundary values, up to normalisation
        let Region::Annulus { inner: a, outer: b } = lv.mesh.region() else { unreachable!() };
        let det = a.powf(-0.25) * b.powf(-0.75) - b.powf(-0.25) * a.powf(-0.75);
        let (ca, cb) = ((b.powf(-0.75) - a.powf(-0.75)) / det, (a.powf(-0.25) - b.powf(-0.25)) / det);
        let ratios: Vec<f64> = (0..lv.mesh.num_nodes())
            .map(|i| {
                let r = lv.mesh.node(i)[0];
                lv.result.u.values()[i] / (ca * r.powf(-0.25) + cb * r.powf(-0.75))
            })
            .collect();
        let (lo, hi) = ratios.iter().fold((f64::MAX, f64::MIN), |(x, y), v| (x.min(*v), y.max(*v)));
        assert!(hi / lo < 1.0 + 1e-3, "{lo} {hi}");
        // convergence fractions shrink
        let at = |j: usize| trace.convergence.iter().find(|r| r.j == j && r.k == j + 1 && r.delta == 1e-2).unwrap().fraction;
        assert!(at(1) <= at(0));
    }
}
