//! Tie-breaking contract of the solver interface, exercised through a
//! synthetic problem with a scale-invariant (constant) objective: every
//! feasible point solves it, so `solve` must return the feasible point
//! closest to the tie-break reference in Frobenius norm.

mod common;

use nalgebra::DMatrix;
use rand::Rng;

use dansf::error::Result;
use dansf::problems::{ProblemData, ProblemInstance};
use dansf::signals::{CovarianceEstimate, CovKind};

/// Constant objective over the covariance ellipsoid; the solution set is the
/// whole feasible region.
struct AnyFeasiblePoint {
    output_dim: usize,
}

impl ProblemInstance for AnyFeasiblePoint {
    fn objective(&self, _x: &DMatrix<f64>, _data: &ProblemData) -> Result<f64> {
        Ok(0.0)
    }

    fn constraint_residuals(
        &self,
        x: &DMatrix<f64>,
        data: &ProblemData,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        Ok((vec![data.factor().quad_form(x) - 1.0], vec![]))
    }

    fn solve(
        &self,
        data: &ProblemData,
        tie_break_ref: Option<&DMatrix<f64>>,
    ) -> Result<DMatrix<f64>> {
        let dim = data.dim();
        match tie_break_ref {
            // the minimum-distance solution is the Frobenius projection of
            // the reference onto the feasible ellipsoid
            Some(reference) => Ok(common::project_onto_ellipsoid(
                &data.factor().to_matrix(),
                reference,
            )),
            None => Ok(DMatrix::zeros(dim, self.output_dim)),
        }
    }

    fn is_solution_unique(&self, _data: &ProblemData) -> bool {
        false
    }

    fn output_dim(&self) -> usize {
        self.output_dim
    }
}

#[test]
fn feasible_reference_is_returned_unchanged() {
    let mut rng = common::rng(5);
    let r = common::random_spd(&mut rng, 6);
    let cov = CovarianceEstimate::new(r.clone(), CovKind::Exact).unwrap();
    let data = ProblemData::from_estimate(&cov, DMatrix::zeros(6, 2)).unwrap();
    let problem = AnyFeasiblePoint { output_dim: 2 };

    // scale a random point well inside the ellipsoid
    let raw = common::random_matrix(&mut rng, 6, 2);
    let quad = (raw.transpose() * &r * &raw).trace();
    let inside = raw / (2.0 * quad.sqrt());
    let solved = problem.solve(&data, Some(&inside)).unwrap();
    assert!((&solved - &inside).norm() < 1e-12);
    assert!(!problem.is_solution_unique(&data));
}

#[test]
fn infeasible_reference_projects_to_nearest_solution() {
    let mut rng = common::rng(6);
    let r = common::random_spd(&mut rng, 5);
    let cov = CovarianceEstimate::new(r.clone(), CovKind::Exact).unwrap();
    let data = ProblemData::from_estimate(&cov, DMatrix::zeros(5, 2)).unwrap();
    let problem = AnyFeasiblePoint { output_dim: 2 };

    let reference = common::random_matrix(&mut rng, 5, 2) * 3.0;
    let solved = problem.solve(&data, Some(&reference)).unwrap();

    // feasible, on the boundary
    let residual = (solved.transpose() * &r * &solved).trace() - 1.0;
    assert!(residual.abs() < 1e-9, "projection should be active: {residual}");

    // no sampled feasible point is closer to the reference
    let solved_dist = (&solved - &reference).norm();
    for _ in 0..200 {
        let cand = common::random_matrix(&mut rng, 5, 2);
        let quad = (cand.transpose() * &r * &cand).trace();
        let feasible = cand / quad.sqrt().max(1.0);
        let dist = (&feasible - &reference).norm();
        assert!(
            dist + 1e-12 >= solved_dist,
            "sampled point beats the tie-break: {dist} < {solved_dist}"
        );
    }

    // without a reference the hook may return any solution
    let fallback = problem.solve(&data, None).unwrap();
    let (ineq, _) = problem.constraint_residuals(&fallback, &data).unwrap();
    assert!(ineq[0] <= 1e-12);
}

#[test]
fn shipped_problems_report_unique_solutions() {
    use dansf::problems::{LcmvProblem, MmseProblem, TraceQclpProblem};
    let mut rng = common::rng(7);
    let r = common::random_spd(&mut rng, 6);
    let cov = CovarianceEstimate::new(r, CovKind::Exact).unwrap();
    let b = common::random_full_rank(&mut rng, 6, 2);
    let data = ProblemData::from_estimate(&cov, b).unwrap();
    let eye = DMatrix::identity(2, 2);
    assert!(TraceQclpProblem::new(eye.clone()).is_solution_unique(&data));
    assert!(MmseProblem::new(eye.clone(), 0.5).is_solution_unique(&data));
    assert!(LcmvProblem::new(eye).is_solution_unique(&data));
}
