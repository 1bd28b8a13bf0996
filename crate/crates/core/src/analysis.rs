//! Manufactured solutions, discrete error norms and convergence studies.

use nalgebra::{Matrix2, Vector2};
use serde::Serialize;

use crate::assembly::{BoundaryData, Discretization, FormParams};
use crate::error::{Error, Result};
use crate::mesh::{Mesh, Point};
use crate::quadrature::{face_rule, volume_rule};
use crate::solver::{solve_navier_stokes, NonlinearSettings, Problem};
use crate::sparse::{CsrMatrix, TripletList};
use crate::spaces::{EGFunction, PressureFunction};

/// Smooth solution of the stationary problem, used to manufacture forcing
/// terms and measure errors.
pub trait ExactSolution: Sync {
    fn velocity(&self, x: Point) -> Vector2<f64>;
    /// `grad[(i, j)] = d u_i / d x_j`.
    fn velocity_grad(&self, x: Point) -> Matrix2<f64>;
    fn velocity_laplacian(&self, x: Point) -> Vector2<f64>;
    fn pressure(&self, x: Point) -> f64;
    fn pressure_grad(&self, x: Point) -> Vector2<f64>;
}

/// Divergence-free vortex with stream function `x^2 (1-x)^2 y^2 (1-y)^2`
/// and pressure `sin(pi x) cos(pi y)`. The velocity vanishes on the boundary
/// of the unit square.
#[derive(Debug, Clone, Copy, Default)]
pub struct PolynomialVortex;

// f(t) = t^2 (1 - t)^2 and its derivatives
fn f0(t: f64) -> f64 {
    t * t * (1.0 - t) * (1.0 - t)
}
fn f1(t: f64) -> f64 {
    2.0 * t * (1.0 - t) * (1.0 - 2.0 * t)
}
fn f2(t: f64) -> f64 {
    2.0 - 12.0 * t + 12.0 * t * t
}
fn f3(t: f64) -> f64 {
    -12.0 + 24.0 * t
}

impl ExactSolution for PolynomialVortex {
    fn velocity(&self, p: Point) -> Vector2<f64> {
        let (x, y) = (p.x, p.y);
        Vector2::new(f0(x) * f1(y), -f1(x) * f0(y))
    }

    fn velocity_grad(&self, p: Point) -> Matrix2<f64> {
        let (x, y) = (p.x, p.y);
        Matrix2::new(
            f1(x) * f1(y),
            f0(x) * f2(y),
            -f2(x) * f0(y),
            -f1(x) * f1(y),
        )
    }

    fn velocity_laplacian(&self, p: Point) -> Vector2<f64> {
        let (x, y) = (p.x, p.y);
        Vector2::new(
            f2(x) * f1(y) + f0(x) * f3(y),
            -f3(x) * f0(y) - f1(x) * f2(y),
        )
    }

    fn pressure(&self, p: Point) -> f64 {
        let pi = std::f64::consts::PI;
        (pi * p.x).sin() * (pi * p.y).cos()
    }

    fn pressure_grad(&self, p: Point) -> Vector2<f64> {
        let pi = std::f64::consts::PI;
        Vector2::new(
            pi * (pi * p.x).cos() * (pi * p.y).cos(),
            -pi * (pi * p.x).sin() * (pi * p.y).sin(),
        )
    }
}

/// The zero solution. Error norms against it are norms of the discrete
/// function itself.
#[derive(Debug, Clone, Copy, Default)]
pub struct Zero;

impl ExactSolution for Zero {
    fn velocity(&self, _: Point) -> Vector2<f64> {
        Vector2::zeros()
    }
    fn velocity_grad(&self, _: Point) -> Matrix2<f64> {
        Matrix2::zeros()
    }
    fn velocity_laplacian(&self, _: Point) -> Vector2<f64> {
        Vector2::zeros()
    }
    fn pressure(&self, _: Point) -> f64 {
        0.0
    }
    fn pressure_grad(&self, _: Point) -> Vector2<f64> {
        Vector2::zeros()
    }
}

/// `f = -mu Lap u + (u . grad) u + grad p`.
pub fn forcing<'a>(exact: &'a dyn ExactSolution, mu: f64) -> impl Fn(Point) -> Vector2<f64> + 'a {
    move |x| {
        let u = exact.velocity(x);
        -mu * exact.velocity_laplacian(x) + exact.velocity_grad(x) * u + exact.pressure_grad(x)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct ErrorNorms {
    /// Broken H1 seminorm plus scaled jump penalty, `|e|_E`.
    pub broken_energy: f64,
    /// `(mu |e|_E^2 + |e|_0^2)^(1/2)`.
    pub energy: f64,
    /// Same with the L2 part measured on the reconstructed velocity.
    pub energy_reconstructed: f64,
    pub l2_velocity: f64,
    pub l2_velocity_reconstructed: f64,
    /// L2 error after removing the means of both pressures.
    pub l2_pressure: f64,
}

/// Errors of a discrete solution `(u_h, p_h)` against `exact`. Interior jumps
/// of the error are jumps of `u_h`; on boundary edges the error trace is
/// `u - u_h`.
pub fn error_norms(
    disc: &Discretization,
    u_h: &EGFunction,
    p_h: &PressureFunction,
    exact: &dyn ExactSolution,
    mu: f64,
    rho: f64,
) -> ErrorNorms {
    let mesh = &disc.mesh;
    let ru = disc.reconstruction.reconstruct(mesh, u_h);
    let (mut grad2, mut l2, mut l2r) = (0.0, 0.0, 0.0);
    let (mut pm_exact, mut area) = (0.0, 0.0);
    for t in 0..mesh.num_triangles() {
        let f = u_h.on_triangle(mesh, t);
        let r = ru.on_triangle(mesh, t);
        for (x, w) in volume_rule().on_triangle(mesh, t) {
            let u = exact.velocity(x);
            grad2 += w * (exact.velocity_grad(x) - f.grad).norm_squared();
            l2 += w * (u - f.eval(x)).norm_squared();
            l2r += w * (u - r.eval(x)).norm_squared();
            pm_exact += w * exact.pressure(x);
        }
        area += mesh.geometry[t].area;
    }
    pm_exact /= area;
    let pm_h = p_h.mean(mesh);
    let mut p2 = 0.0;
    for t in 0..mesh.num_triangles() {
        let ph = p_h.values[t] - pm_h;
        for (x, w) in volume_rule().on_triangle(mesh, t) {
            p2 += w * (exact.pressure(x) - pm_exact - ph).powi(2);
        }
    }
    let mut jump2 = 0.0;
    for (e, edge) in mesh.edges.iter().enumerate() {
        let mut s2 = 0.0;
        for (s, w) in face_rule().params() {
            let (jump, _) = u_h.jump_average(mesh, e, s);
            let err = if edge.is_boundary() {
                exact.velocity(edge.point_at(mesh, s)) - jump
            } else {
                -jump
            };
            s2 += w * err.norm_squared();
        }
        // ds = length * dt and the penalty weight is rho / length
        jump2 += rho * s2;
    }
    let e2 = grad2 + jump2;
    ErrorNorms {
        broken_energy: e2.sqrt(),
        energy: (mu * e2 + l2).sqrt(),
        energy_reconstructed: (mu * e2 + l2r).sqrt(),
        l2_velocity: l2.sqrt(),
        l2_velocity_reconstructed: l2r.sqrt(),
        l2_pressure: p2.sqrt(),
    }
}

/// Norms of a discrete velocity, `error_norms` against the zero solution.
pub fn discrete_norms(disc: &Discretization, u_h: &EGFunction, mu: f64, rho: f64) -> ErrorNorms {
    error_norms(disc, u_h, &PressureFunction::zeros(&disc.mesh), &Zero, mu, rho)
}

/// Gram matrices of the broken energy inner product (gradients plus
/// `rho / h_e` weighted jumps, boundary traces included) and of the L2 inner
/// product on the velocity space.
pub fn gram_matrices(disc: &Discretization, rho: f64) -> (CsrMatrix, CsrMatrix) {
    let mesh = &disc.mesh;
    let table = &disc.standard;
    let mut energy = TripletList::new();
    let mut mass = TripletList::new();
    for (t, basis) in table.per_triangle.iter().enumerate() {
        let area = mesh.geometry[t].area;
        for (i, pi) in basis {
            for (j, pj) in basis {
                energy.push(*i, *j, area * pi.grad.component_mul(&pj.grad).sum());
                let m: f64 = volume_rule().on_triangle(mesh, t).map(|(x, w)| w * pi.eval(x).dot(&pj.eval(x))).sum();
                mass.push(*i, *j, m);
            }
        }
    }
    for edge in &mesh.edges {
        let mut dofs: Vec<usize> = table.per_triangle[edge.t_plus].iter().map(|(d, _)| *d).collect();
        if let Some(tm) = edge.t_minus {
            dofs.extend(table.per_triangle[tm].iter().map(|(d, _)| *d));
        }
        dofs.sort_unstable();
        dofs.dedup();
        let trace = |t: Option<usize>, dof: usize, x: Point| {
            t.and_then(|t| table.per_triangle[t].iter().find(|(d, _)| *d == dof))
                .map_or(Vector2::zeros(), |(_, f)| f.eval(x))
        };
        for (s, w) in face_rule().params() {
            let x = edge.point_at(mesh, s);
            let jumps: Vec<Vector2<f64>> = dofs
                .iter()
                .map(|&d| trace(Some(edge.t_plus), d, x) - trace(edge.t_minus, d, x))
                .collect();
            for (a, ja) in dofs.iter().zip(&jumps) {
                for (b, jb) in dofs.iter().zip(&jumps) {
                    energy.push(*a, *b, rho * w * ja.dot(jb));
                }
            }
        }
    }
    let nv = disc.num_velocity();
    (CsrMatrix::from_triplets(nv, nv, energy), CsrMatrix::from_triplets(nv, nv, mass))
}

/// `log2(e_{k-1} / e_k) / log2(h_{k-1} / h_k)` for consecutive levels. The
/// first entry is `None`.
pub fn eoc(h: &[f64], err: &[f64]) -> Vec<Option<f64>> {
    (0..err.len())
        .map(|k| {
            if k == 0 {
                return None;
            }
            let r = (err[k - 1] / err[k]).ln() / (h[k - 1] / h[k]).ln();
            r.is_finite().then_some(r)
        })
        .collect()
}

/// Least-squares slope of `log err` against `log h`.
pub fn fitted_order(h: &[f64], err: &[f64]) -> f64 {
    let n = h.len() as f64;
    let xs: Vec<f64> = h.iter().map(|h| h.ln()).collect();
    let ys: Vec<f64> = err.iter().map(|e| e.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Outcome of one nonlinear solve inside a study.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Converged,
    MaxIterations,
    Diverged,
    Failed(String),
}

impl RunStatus {
    pub fn is_ok(&self) -> bool {
        matches!(self, RunStatus::Converged)
    }
}

impl std::fmt::Display for RunStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunStatus::Converged => write!(f, "converged"),
            RunStatus::MaxIterations => write!(f, "max-iterations"),
            RunStatus::Diverged => write!(f, "diverged"),
            RunStatus::Failed(msg) => write!(f, "failed: {msg}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConvergenceRow {
    pub n: usize,
    pub h: f64,
    pub errors: ErrorNorms,
    pub iterations: usize,
    pub status: RunStatus,
    pub energy_eoc: Option<f64>,
    pub l2u_eoc: Option<f64>,
    pub l2p_eoc: Option<f64>,
}

fn nan_norms() -> ErrorNorms {
    ErrorNorms {
        broken_energy: f64::NAN,
        energy: f64::NAN,
        energy_reconstructed: f64::NAN,
        l2_velocity: f64::NAN,
        l2_velocity_reconstructed: f64::NAN,
        l2_pressure: f64::NAN,
    }
}

/// Solves the vortex problem on one mesh and measures the errors. Solver
/// failures are reported in the status, with NaN errors.
pub fn run_level(
    mesh: Mesh,
    params: FormParams,
    settings: &NonlinearSettings,
    exact: &dyn ExactSolution,
) -> (ErrorNorms, usize, RunStatus) {
    let disc = Discretization::new(mesh);
    let f = forcing(exact, params.mu);
    let problem = Problem {
        forcing: &f,
        boundary: BoundaryData::from_fn(&disc.mesh, |x| exact.velocity(x)),
    };
    match solve_navier_stokes(&disc, params, settings, &problem) {
        Ok(sol) => {
            let status = if sol.report.converged {
                RunStatus::Converged
            } else {
                RunStatus::MaxIterations
            };
            let errs = error_norms(&disc, &sol.velocity, &sol.pressure, exact, params.mu, params.rho);
            (errs, sol.report.iterations, status)
        }
        Err(Error::Diverged { report }) => (nan_norms(), report.iterations, RunStatus::Diverged),
        Err(e) => (nan_norms(), 0, RunStatus::Failed(e.to_string())),
    }
}

/// Errors and observed orders on `unit_square(n)` for each `n` in `levels`.
pub fn convergence_study(
    levels: &[usize],
    params: FormParams,
    settings: &NonlinearSettings,
    exact: &dyn ExactSolution,
) -> Result<Vec<ConvergenceRow>> {
    if levels.is_empty() {
        return Err(Error::InvalidArgument("no refinement levels given".into()));
    }
    if levels.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument(format!("levels must increase strictly: {levels:?}")));
    }
    let mut rows = Vec::with_capacity(levels.len());
    for &n in levels {
        let mesh = Mesh::unit_square(n)?;
        let (errors, iterations, status) = run_level(mesh, params, settings, exact);
        log::info!(
            "n = {n}: energy {:.4e}, l2u {:.4e}, l2p {:.4e} ({status})",
            errors.energy,
            errors.l2_velocity,
            errors.l2_pressure
        );
        rows.push(ConvergenceRow {
            n,
            h: 1.0 / n as f64,
            errors,
            iterations,
            status,
            energy_eoc: None,
            l2u_eoc: None,
            l2p_eoc: None,
        });
    }
    let h: Vec<f64> = rows.iter().map(|r| r.h).collect();
    let col = |g: fn(&ErrorNorms) -> f64| -> Vec<f64> { rows.iter().map(|r| g(&r.errors)).collect() };
    let ee = eoc(&h, &col(|e| e.energy));
    let eu = eoc(&h, &col(|e| e.l2_velocity));
    let ep = eoc(&h, &col(|e| e.l2_pressure));
    for (k, row) in rows.iter_mut().enumerate() {
        row.energy_eoc = ee[k];
        row.l2u_eoc = eu[k];
        row.l2p_eoc = ep[k];
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbeRow {
    pub mu: f64,
    pub eg_error: f64,
    pub eg_status: RunStatus,
    pub pr_error: f64,
    pub pr_status: RunStatus,
}

/// Velocity energy errors of EG and PR-EG for each viscosity on a fixed mesh.
pub fn pressure_robustness_probe(
    n: usize,
    mus: &[f64],
    rho: f64,
    settings: &NonlinearSettings,
    exact: &dyn ExactSolution,
) -> Result<Vec<ProbeRow>> {
    let mesh = Mesh::unit_square(n)?;
    let mut rows = Vec::with_capacity(mus.len());
    for &mu in mus {
        let eg = run_level(mesh.clone(), FormParams::new(mu, rho, false)?, settings, exact);
        let pr = run_level(mesh.clone(), FormParams::new(mu, rho, true)?, settings, exact);
        log::info!("mu = {mu:e}: EG {:.4e} ({}), PR-EG {:.4e} ({})", eg.0.energy, eg.2, pr.0.energy, pr.2);
        rows.push(ProbeRow {
            mu,
            eg_error: eg.0.energy,
            eg_status: eg.2,
            pr_error: pr.0.energy,
            pr_status: pr.2,
        });
    }
    Ok(rows)
}
