//! Linear saddle-point solves and the nonlinear fixed-point driver.

use log::{debug, info};
use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use crate::assembly::{
    apply_dirichlet, assemble_c_derivative, assemble_c_picard, BoundaryData, Discretization, FormParams,
    SaddleSystem, StokesBlocks,
};
use crate::error::{Error, Result};
use crate::lu::{nested_dissection_paired, SparseLu};
use crate::mesh::Point;
use crate::spaces::{EGFunction, PressureFunction};

const RESIDUAL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Linearization {
    Picard,
    /// Picard matrix plus the volume part of the convection derivative.
    NewtonExperimental,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialGuess {
    Stokes,
    Zero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NonlinearSettings {
    pub tol: f64,
    pub max_iters: usize,
    pub linearization: Linearization,
    pub init: InitialGuess,
}

impl Default for NonlinearSettings {
    fn default() -> Self {
        NonlinearSettings {
            tol: 1e-10,
            max_iters: 20,
            linearization: Linearization::Picard,
            init: InitialGuess::Zero,
        }
    }
}

impl NonlinearSettings {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArgument(format!("tolerance must be positive, got {}", self.tol)));
        }
        if self.max_iters == 0 {
            return Err(Error::InvalidArgument("max_iters must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    /// Relative update `|x_{k+1} - x_k| / |x_k|` of each iteration.
    pub update_norms: Vec<f64>,
    pub converged: bool,
    /// Relative residual of every linear solve, the initial Stokes solve included.
    pub linear_residuals: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct LinearSolution {
    pub velocity: Vec<f64>,
    pub pressure: Vec<f64>,
    pub multiplier: f64,
    pub relative_residual: f64,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Symmetric diagonal scaling: unit velocity diagonal, unit row norm of the
/// scaled divergence block per pressure, unit norm of the scaled constraint.
fn saddle_scaling(system: &SaddleSystem) -> Vec<f64> {
    let a = &system.matrix;
    let nv = system.num_velocity;
    let np = system.num_pressure;
    let mut d = vec![1.0; system.dim()];
    for (i, di) in d.iter_mut().enumerate().take(nv) {
        let diag = a.get(i, i).abs();
        if diag > 0.0 {
            *di = 1.0 / diag.sqrt();
        }
    }
    let mut schur = vec![0.0; np + 1];
    for (i, &di) in d.iter().enumerate().take(nv) {
        for (c, v) in a.row(i) {
            if c >= nv && c < nv + np {
                schur[c - nv] += (v * di).powi(2);
            }
        }
    }
    for q in 0..np {
        if schur[q] > 0.0 {
            d[nv + q] = 1.0 / schur[q].sqrt();
        }
    }
    let lam = nv + np;
    let s: f64 = a.row(lam).map(|(c, v)| (v * d[c]).powi(2)).sum();
    if s > 0.0 {
        d[lam] = 1.0 / s.sqrt();
    }
    d
}

/// Direct solve of the scaled system with up to two steps of iterative
/// refinement on the original one. Each pressure is ordered right after the
/// bubble of its triangle.
pub fn solve_linear(system: &SaddleSystem) -> Result<LinearSolution> {
    let nv = system.num_velocity;
    let np = system.num_pressure;
    let d = saddle_scaling(system);
    let mut scaled = system.matrix.clone();
    for r in 0..scaled.nrows {
        for p in scaled.row_ptr[r]..scaled.row_ptr[r + 1] {
            scaled.values[p] *= d[r] * d[scaled.col_idx[p]];
        }
    }
    let nb = nv - np;
    let pairs: Vec<(usize, usize)> = (0..np).map(|t| (nb + t, nv + t)).collect();
    let order = nested_dissection_paired(&scaled, &pairs, &[system.multiplier_index()]);
    let lu = SparseLu::factor_with_ordering(&scaled, order).map_err(|p| {
        Error::NumericallySingular(format!(
            "no pivot at elimination step {} (column {}, {:?} block), largest candidate {:.3e}",
            p.step,
            p.column,
            system.block_of(p.column),
            p.largest_candidate
        ))
    })?;
    debug!(
        "LU: dimension {}, {} nonzeros, {} in factors, {} off-diagonal pivots",
        system.dim(),
        system.matrix.nnz(),
        lu.factor_nnz(),
        lu.off_diagonal_pivots()
    );
    let solve = |r: &[f64]| -> Vec<f64> {
        let rs: Vec<f64> = r.iter().zip(&d).map(|(r, d)| r * d).collect();
        lu.solve(&rs).iter().zip(&d).map(|(y, d)| y * d).collect()
    };
    let b = &system.rhs;
    let bnorm = norm(b);
    let mut x = solve(b);
    let mut rel = 0.0;
    for step in 0..3 {
        let ax = system.matrix.mul_vec(&x);
        let r: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
        rel = if bnorm > 0.0 { norm(&r) / bnorm } else { norm(&r) };
        if rel <= 1e-14 || step == 2 {
            break;
        }
        let dx = solve(&r);
        x.iter_mut().zip(&dx).for_each(|(x, d)| *x += d);
    }
    if !(rel <= RESIDUAL_TOL) {
        return Err(Error::NumericallySingular(format!(
            "relative residual {rel:.3e} after refinement exceeds {RESIDUAL_TOL:.0e}"
        )));
    }
    Ok(LinearSolution {
        velocity: x[..nv].to_vec(),
        pressure: x[nv..nv + np].to_vec(),
        multiplier: x[nv + np],
        relative_residual: rel,
    })
}

/// Forcing and boundary data of a stationary problem.
pub struct Problem<'a> {
    pub forcing: &'a dyn Fn(Point) -> Vector2<f64>,
    pub boundary: BoundaryData,
}

pub struct NavierStokesSolution {
    pub velocity: EGFunction,
    pub pressure: PressureFunction,
    /// Velocity coefficient vector in the layout numbering.
    pub coefficients: Vec<f64>,
    pub report: SolveReport,
}

fn stacked(sol: &LinearSolution) -> Vec<f64> {
    let mut x = sol.velocity.clone();
    x.extend_from_slice(&sol.pressure);
    x
}

/// Solves the discrete stationary Navier-Stokes problem by fixed-point
/// iteration. The iteration stops when the relative change of the stacked
/// velocity-pressure coefficient vector drops below `settings.tol`, or after
/// `settings.max_iters` linear solves.
pub fn solve_navier_stokes(
    disc: &Discretization,
    params: FormParams,
    settings: &NonlinearSettings,
    problem: &Problem,
) -> Result<NavierStokesSolution> {
    settings.validate()?;
    let blocks = StokesBlocks::assemble(disc, params, problem.forcing);
    let mut report = SolveReport::default();

    let (mut current, mut x_prev) = match settings.init {
        InitialGuess::Zero => {
            let nv = disc.num_velocity();
            let np = disc.num_pressure();
            let zero = LinearSolution {
                velocity: vec![0.0; nv],
                pressure: vec![0.0; np],
                multiplier: 0.0,
                relative_residual: 0.0,
            };
            let x = stacked(&zero);
            (zero, x)
        }
        InitialGuess::Stokes => {
            let sys = apply_dirichlet(&blocks.system(disc, None, None), disc, &problem.boundary)?;
            let sol = solve_linear(&sys)?;
            report.linear_residuals.push(sol.relative_residual);
            let x = stacked(&sol);
            (sol, x)
        }
    };

    let mut growth_streak = 0;
    for k in 1..=settings.max_iters {
        let z = &current.velocity;
        let conv = assemble_c_picard(disc, z, params.pressure_robust);
        let sys = match settings.linearization {
            Linearization::Picard => blocks.system(disc, Some(&conv), None),
            Linearization::NewtonExperimental => {
                let d = assemble_c_derivative(disc, z, params.pressure_robust);
                let extra = d.mul_vec(z);
                let mut t = conv.to_triplets();
                t.extend_from(&d.to_triplets());
                let nv = disc.num_velocity();
                let jac = crate::sparse::CsrMatrix::from_triplets(nv, nv, t);
                blocks.system(disc, Some(&jac), Some(&extra))
            }
        };
        let sys = apply_dirichlet(&sys, disc, &problem.boundary)?;
        let sol = solve_linear(&sys)?;
        report.linear_residuals.push(sol.relative_residual);
        let x = stacked(&sol);
        let diff: Vec<f64> = x.iter().zip(&x_prev).map(|(a, b)| a - b).collect();
        let base = norm(&x_prev);
        let update = if base > 0.0 { norm(&diff) / base } else { norm(&diff) };
        report.update_norms.push(update);
        report.iterations = k;
        debug!("iteration {k}: relative update {update:.3e}");
        current = sol;
        x_prev = x;

        if update < settings.tol {
            report.converged = true;
            break;
        }
        let first = report.update_norms[0];
        let grew = k >= 2 && update > report.update_norms[k - 2] && update > 1e3 * first;
        growth_streak = if grew { growth_streak + 1 } else { 0 };
        if growth_streak >= 3 {
            return Err(Error::Diverged {
                report: Box::new(report),
            });
        }
    }
    info!(
        "nonlinear solve: {} iterations, converged = {}, last update {:.3e}",
        report.iterations,
        report.converged,
        report.update_norms.last().copied().unwrap_or(0.0)
    );
    let velocity = EGFunction::from_coefficients(&disc.layout, &current.velocity);
    let pressure = PressureFunction::new(current.pressure).remove_mean(&disc.mesh);
    Ok(NavierStokesSolution {
        velocity,
        pressure,
        coefficients: current.velocity,
        report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{discrete_norms, forcing, PolynomialVortex};
    use crate::assembly::build_saddle_system;
    use crate::mesh::Mesh;

    fn disc(n: usize) -> Discretization {
        Discretization::new(Mesh::unit_square(n).unwrap())
    }

    fn gradient_forcing(x: Point) -> Vector2<f64> {
        // grad of x^3 y - x y / 2 + sin(2 y)
        Vector2::new(3.0 * x.x * x.x * x.y - 0.5 * x.y, x.x.powi(3) - 0.5 * x.x + 2.0 * (2.0 * x.y).cos())
    }

    #[test]
    fn settings_validated() {
        let mut s = NonlinearSettings::default();
        assert!(s.validate().is_ok());
        s.tol = 0.0;
        assert!(s.validate().is_err());
        s.tol = 1e-8;
        s.max_iters = 0;
        assert!(s.validate().is_err());
    }

    #[test]
    fn linear_solve_has_small_residual_and_zero_mean() {
        let d = disc(4);
        let p = FormParams::new(1.0, 10.0, false).unwrap();
        let f = forcing(&PolynomialVortex, 1.0);
        let sys = apply_dirichlet(&build_saddle_system(&d, p, None, &f), &d, &BoundaryData::homogeneous()).unwrap();
        let sol = solve_linear(&sys).unwrap();
        assert!(sol.relative_residual < 1e-12);
        let mean: f64 = sol.pressure.iter().zip(&d.mesh.geometry).map(|(p, g)| p * g.area).sum();
        assert!(mean.abs() < 1e-13);
    }

    #[test]
    fn singular_system_reported() {
        let d = disc(2);
        let p = FormParams::new(1.0, 10.0, false).unwrap();
        let mut sys = build_saddle_system(&d, p, None, &|_| Vector2::zeros());
        // without the mean constraint the pressure is determined up to a
        // constant and the continuity rows sum to zero
        let lam = sys.multiplier_index();
        let mut t = sys.matrix.to_triplets();
        t.entries.retain(|&(r, c, _)| r != lam && c != lam);
        t.push(lam, lam, 1.0);
        sys.matrix = crate::sparse::CsrMatrix::from_triplets(sys.dim(), sys.dim(), t);
        let mut sys = apply_dirichlet(&sys, &d, &BoundaryData::homogeneous()).unwrap();
        sys.rhs[d.num_velocity()] = 1.0;
        assert!(matches!(solve_linear(&sys), Err(Error::NumericallySingular(_))));
    }

    #[test]
    fn gradient_forcing_leaves_robust_velocity_at_rest() {
        let d = disc(8);
        let settings = NonlinearSettings::default();
        let problem = Problem {
            forcing: &gradient_forcing,
            boundary: BoundaryData::homogeneous(),
        };
        let pr = solve_navier_stokes(&d, FormParams::new(1e-3, 10.0, true).unwrap(), &settings, &problem).unwrap();
        assert!(pr.report.converged);
        let n = discrete_norms(&d, &pr.velocity, 1.0, 10.0);
        assert!(n.broken_energy < 1e-10, "{}", n.broken_energy);

        let eg = solve_navier_stokes(&d, FormParams::new(1e-3, 10.0, false).unwrap(), &settings, &problem).unwrap();
        let n = discrete_norms(&d, &eg.velocity, 1.0, 10.0);
        assert!(n.broken_energy > 1e-4, "{}", n.broken_energy);
    }

    #[test]
    fn homogeneous_problem_stops_immediately() {
        let d = disc(2);
        let problem = Problem {
            forcing: &|_| Vector2::zeros(),
            boundary: BoundaryData::homogeneous(),
        };
        let sol = solve_navier_stokes(&d, FormParams::new(1.0, 10.0, true).unwrap(), &NonlinearSettings::default(), &problem)
            .unwrap();
        assert!(sol.report.converged);
        assert_eq!(sol.report.iterations, 1);
        assert!(sol.coefficients.iter().all(|&c| c == 0.0));
    }

    #[test]
    fn picard_limit_is_a_fixed_point() {
        let d = disc(4);
        let params = FormParams::new(0.1, 10.0, false).unwrap();
        let f = forcing(&PolynomialVortex, 0.1);
        let problem = Problem {
            forcing: &f,
            boundary: BoundaryData::homogeneous(),
        };
        let sol = solve_navier_stokes(&d, params, &NonlinearSettings::default(), &problem).unwrap();
        assert!(sol.report.converged);
        let sys = apply_dirichlet(
            &build_saddle_system(&d, params, Some(&sol.coefficients), &f),
            &d,
            &BoundaryData::homogeneous(),
        )
        .unwrap();
        let mut x = sol.coefficients.clone();
        x.extend_from_slice(&sol.pressure.values);
        let lin = solve_linear(&sys).unwrap();
        x.push(lin.multiplier);
        let r = sys.matrix.mul_vec(&x);
        let res: f64 = r.iter().zip(&sys.rhs).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let bn: f64 = sys.rhs.iter().map(|b| b * b).sum::<f64>().sqrt();
        assert!(res / bn < 1e-8, "{}", res / bn);
    }

    #[test]
    fn iteration_cap_reports_nonconvergence() {
        let d = disc(4);
        let f = |x: Point| Vector2::new(50.0 * x.y, -50.0 * x.x);
        let problem = Problem {
            forcing: &f,
            boundary: BoundaryData::homogeneous(),
        };
        let settings = NonlinearSettings {
            max_iters: 2,
            ..Default::default()
        };
        let sol = solve_navier_stokes(&d, FormParams::new(0.05, 10.0, true).unwrap(), &settings, &problem).unwrap();
        assert!(!sol.report.converged);
        assert_eq!(sol.report.iterations, 2);
        assert_eq!(sol.report.update_norms.len(), 2);
    }

    #[test]
    fn newton_variant_reaches_the_picard_solution() {
        let d = disc(4);
        let params = FormParams::new(0.05, 10.0, true).unwrap();
        let f = forcing(&PolynomialVortex, 0.05);
        let problem = Problem {
            forcing: &f,
            boundary: BoundaryData::lid(&d.mesh),
        };
        let picard = NonlinearSettings {
            init: InitialGuess::Stokes,
            ..Default::default()
        };
        let newton = NonlinearSettings {
            linearization: Linearization::NewtonExperimental,
            ..picard
        };
        let a = solve_navier_stokes(&d, params, &picard, &problem).unwrap();
        let b = solve_navier_stokes(&d, params, &newton, &problem).unwrap();
        assert!(a.report.converged && b.report.converged);
        assert!(b.report.iterations <= a.report.iterations);
        let diff = a.coefficients.iter().zip(&b.coefficients).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-8, "{diff}");
    }
}
