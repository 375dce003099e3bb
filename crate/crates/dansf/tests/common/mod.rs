//! Shared test utilities: independent numerical oracles for the three
//! closed-form solvers, plus small random-instance generators.
//!
//! The oracles deliberately avoid the algebraic routes used by the library
//! (whitened triangular solves): projected gradient descent with an exact
//! ellipsoid projection, conjugate gradients on the normal equations, and an
//! LU solve of the full KKT system.

#![allow(dead_code)]

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| 2.0 * rng.gen::<f64>() - 1.0)
}

/// Random symmetric positive-definite matrix with a bounded condition number.
pub fn random_spd(rng: &mut ChaCha8Rng, dim: usize) -> DMatrix<f64> {
    let a = random_matrix(rng, dim, dim);
    &a * a.transpose() + DMatrix::identity(dim, dim) * 0.5
}

/// Random matrix with full column rank (redrawn until the rank check holds).
pub fn random_full_rank(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    loop {
        let m = random_matrix(rng, rows, cols);
        if m.clone().svd(false, false).singular_values.min() > 1e-6 {
            return m;
        }
    }
}

fn quad_form(r: &DMatrix<f64>, x: &DMatrix<f64>) -> f64 {
    (x.transpose() * r * x).trace()
}

/// Minimum-Frobenius-distance projection onto `{X : trace(XᵀRX) ≤ 1}`:
/// `Z(λ) = (I + λR)⁻¹X₀` with `λ ≥ 0` found by bisection on the constraint.
pub fn project_onto_ellipsoid(r: &DMatrix<f64>, x0: &DMatrix<f64>) -> DMatrix<f64> {
    if quad_form(r, x0) <= 1.0 {
        return x0.clone();
    }
    let eye = DMatrix::identity(r.nrows(), r.ncols());
    let z_of = |lam: f64| {
        (&eye + r * lam)
            .lu()
            .solve(x0)
            .expect("I + λR is positive definite")
    };
    let mut hi = 1.0;
    while quad_form(r, &z_of(hi)) > 1.0 {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..120 {
        let mid = 0.5 * (lo + hi);
        if quad_form(r, &z_of(mid)) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    z_of(hi)
}

/// Projected-gradient oracle for `min trace(XᵀB)` over the covariance
/// ellipsoid, annealing the step size in phases. Converges slowly (the
/// objective is linear, so each phase settles to an O(step) neighborhood);
/// used as a loose structural cross-check next to the tight KKT oracle.
pub fn pgd_trace_qclp(r: &DMatrix<f64>, b_eff: &DMatrix<f64>, iters: usize) -> DMatrix<f64> {
    let base_step = 1.0 / b_eff.norm();
    let mut x = DMatrix::zeros(r.nrows(), b_eff.ncols());
    for t in 0..iters {
        let alpha = base_step * 0.5f64.powi((t / 8) as i32);
        x = project_onto_ellipsoid(r, &(&x - b_eff * alpha));
        if alpha < 1e-14 * base_step {
            break;
        }
    }
    x
}

/// Numerical-KKT oracle for the trace objective over the covariance
/// ellipsoid: bisect the multiplier `λ > 0` until the stationary point of
/// `trace(XᵀB) + λ(trace(XᵀRX) − 1)` — obtained by conjugate gradients on
/// `2λR·X = −B` — lands on the constraint boundary.
pub fn kkt_trace_qclp(r: &DMatrix<f64>, b_eff: &DMatrix<f64>) -> DMatrix<f64> {
    let x_of = |lam: f64| cg_solve_spd(r, &(b_eff / (-2.0 * lam)), 20 * r.nrows());
    let constraint = |x: &DMatrix<f64>| quad_form(r, x);
    let mut hi = 1.0;
    while constraint(&x_of(hi)) > 1.0 {
        hi *= 2.0;
    }
    let mut lo = hi / 2.0;
    while constraint(&x_of(lo)) < 1.0 {
        lo /= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if constraint(&x_of(mid)) > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    x_of(0.5 * (lo + hi))
}

/// Conjugate-gradient oracle for the normal equations `R·X = Rhs`, run per
/// column to a tight residual.
pub fn cg_solve_spd(r: &DMatrix<f64>, rhs: &DMatrix<f64>, max_iters: usize) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(rhs.nrows(), rhs.ncols());
    for col in 0..rhs.ncols() {
        let b = rhs.column(col).into_owned();
        let mut xk = nalgebra::DVector::zeros(b.nrows());
        let mut res = b.clone();
        let mut dir = res.clone();
        let mut rho = res.norm_squared();
        let b_norm = b.norm().max(1e-300);
        for _ in 0..max_iters {
            if rho.sqrt() / b_norm < 1e-14 {
                break;
            }
            let r_dir = r * &dir;
            let alpha = rho / dir.dot(&r_dir);
            xk += &dir * alpha;
            res -= r_dir * alpha;
            let rho_next = res.norm_squared();
            dir = &res + &dir * (rho_next / rho);
            rho = rho_next;
        }
        x.set_column(col, &xk);
    }
    x
}

/// KKT-system oracle for the linearly constrained minimum-variance problem:
/// solve `[[2R, B], [Bᵀ, 0]]·[x; λ] = [0; h]` column by column with LU.
pub fn kkt_lcmv(r: &DMatrix<f64>, b: &DMatrix<f64>, h: &DMatrix<f64>) -> DMatrix<f64> {
    let m = r.nrows();
    let l = b.ncols();
    let q = h.nrows();
    let mut kkt = DMatrix::zeros(m + l, m + l);
    kkt.view_mut((0, 0), (m, m)).copy_from(&(r * 2.0));
    kkt.view_mut((0, m), (m, l)).copy_from(b);
    kkt.view_mut((m, 0), (l, m)).copy_from(&b.transpose());
    let lu = kkt.lu();
    let mut x = DMatrix::zeros(m, q);
    let h_t = h.transpose();
    for col in 0..q {
        let mut rhs = nalgebra::DVector::zeros(m + l);
        rhs.rows_mut(m, l).copy_from(&h_t.column(col));
        let sol = lu.solve(&rhs).expect("KKT system is nonsingular");
        x.set_column(col, &sol.rows(0, m).into_owned());
    }
    x
}

pub fn relative_frobenius_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    (a - b).norm() / b.norm().max(1e-300)
}
