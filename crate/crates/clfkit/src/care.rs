//! Continuous-time algebraic Riccati solver for the LQR baseline.
//!
//! For `x' = Ax + Bu` with quadratic weights the HJB collapses to
//! `A'P + PA - P B R^-1 B' P + Q = 0`; its stabilizing solution gives the
//! gain `K = R^-1 B' P` and the quadratic CLF `V = x'Px/2` under which the
//! Sontag feedback reduces exactly to `u = -Kx`.
//!
//! The solver is Newton-Kleinman: starting from a stabilizing gain, each
//! step solves the Lyapunov equation
//!
//! ```text
//! (A - B K_i)' P_i + P_i (A - B K_i) = -(Q + K_i' R K_i)
//! ```
//!
//! as a dense linear system in the n(n+1)/2 symmetric unknowns, then updates
//! `K_{i+1} = R^-1 B' P_i`. Quadratic convergence and no external
//! eigensolver machinery needed at desk scale (n <= 10). The initial gain is
//! `K_0 = 0` when `A` is already Hurwitz, otherwise the Bass construction:
//! with `s > ||A||_F` and `S` solving `(A + sI) S + S (A + sI)' = 2 B B'`,
//! the gain `K_0 = B' S^-1` stabilizes `A - B K_0`.

use crate::expr::Expression;
use crate::model::{ClfCandidate, Weights};
use nalgebra::{Complex, DMatrix};
use thiserror::Error;

/// Desk-scale cap on the state dimension.
pub const MAX_STATE_DIM: usize = 10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CareError {
    #[error("B must have as many rows as A; got A {a_rows}x{a_cols}, B {b_rows}x{b_cols}")]
    ShapeMismatch {
        a_rows: usize,
        a_cols: usize,
        b_rows: usize,
        b_cols: usize,
    },
    #[error("state dimension {n} exceeds the supported maximum {MAX_STATE_DIM}")]
    DimensionTooLarge { n: usize },
    #[error("weights do not match the system: expected Q {n}x{n}, R {m}x{m}")]
    WeightMismatch { n: usize, m: usize },
    #[error("no stabilizing initial gain found; (A, B) may not be stabilizable")]
    NoStabilizingInitialGain,
    #[error("the Lyapunov system of a Newton step is singular")]
    SingularLyapunov,
    #[error("Newton iteration did not converge within {iterations} steps")]
    NonConvergence { iterations: usize },
    #[error("Riccati residual {residual:.3e} exceeds the bound {bound:.3e}")]
    ResidualBound { residual: f64, bound: f64 },
    #[error("computed P is not positive definite")]
    SolutionNotPositiveDefinite,
    #[error("closed loop A - BK is not Hurwitz after convergence")]
    ClosedLoopUnstable,
    #[error("eigenvalue computation (real Schur form) did not converge")]
    EigenvalueFailure,
}

/// `x' = Ax + Bu`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>) -> Result<Self, CareError> {
        if a.nrows() != a.ncols() || b.nrows() != a.nrows() || b.ncols() == 0 || a.nrows() == 0 {
            return Err(CareError::ShapeMismatch {
                a_rows: a.nrows(),
                a_cols: a.ncols(),
                b_rows: b.nrows(),
                b_cols: b.ncols(),
            });
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }
}

/// Stabilizing Riccati solution with its gain and achieved residual.
#[derive(Debug, Clone, PartialEq)]
pub struct CareSolution {
    /// Symmetric positive-definite `P`.
    pub p: DMatrix<f64>,
    /// `K = R^-1 B' P`.
    pub k: DMatrix<f64>,
    /// Frobenius norm of `A'P + PA - P B R^-1 B' P + Q`.
    pub residual_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions {
    pub max_iterations: usize,
    /// Stop when `|P_{i+1} - P_i|_F < convergence_tol * max(1, |P_i|_F)`.
    pub convergence_tol: f64,
    /// Accept only if the residual is below `residual_bound * max(1, |Q|_F)`.
    pub residual_bound: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 50,
            convergence_tol: 1e-12,
            residual_bound: 1e-10,
        }
    }
}

/// Eigenvalues of the closed loop and the stability verdict.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenCheck {
    pub eigenvalues: Vec<Complex<f64>>,
    /// All real parts strictly negative.
    pub stable: bool,
}

fn eigenvalues(m: &DMatrix<f64>) -> Result<Vec<Complex<f64>>, CareError> {
    let schur = nalgebra::linalg::Schur::try_new(m.clone(), f64::EPSILON, 1000)
        .ok_or(CareError::EigenvalueFailure)?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

fn is_hurwitz(m: &DMatrix<f64>) -> Result<bool, CareError> {
    Ok(eigenvalues(m)?.iter().all(|e| e.re < 0.0))
}

/// Index of the packed upper-triangle unknown `P[i][j]`, `i <= j`.
fn pack_index(i: usize, j: usize, n: usize) -> usize {
    debug_assert!(i <= j);
    i * n - i * (i + 1) / 2 + j
}

/// Solve `M'P + PM = RHS` for symmetric `P` (RHS symmetric), treated as a
/// dense linear system in the n(n+1)/2 packed unknowns.
fn solve_lyapunov(m: &DMatrix<f64>, rhs: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let n = m.nrows();
    let unknowns = n * (n + 1) / 2;
    let mut system = DMatrix::<f64>::zeros(unknowns, unknowns);
    let mut rhs_vec = nalgebra::DVector::<f64>::zeros(unknowns);

    for r in 0..n {
        for c in r..n {
            let row = pack_index(r, c, n);
            rhs_vec[row] = rhs[(r, c)];
            for s in 0..n {
                // (M'P)_{rc} = sum_s M_{sr} P_{sc}
                let col = pack_index(s.min(c), s.max(c), n);
                system[(row, col)] += m[(s, r)];
                // (PM)_{rc} = sum_s P_{rs} M_{sc}
                let col = pack_index(r.min(s), r.max(s), n);
                system[(row, col)] += m[(s, c)];
            }
        }
    }

    let solution = system.lu().solve(&rhs_vec)?;
    let mut p = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = solution[pack_index(i, j, n)];
            p[(i, j)] = v;
            p[(j, i)] = v;
        }
    }
    Some(p)
}

/// Bass construction of a stabilizing gain for anti-stable or mixed `A`.
fn bass_stabilizing_gain(sys: &LinearSystem) -> Result<DMatrix<f64>, CareError> {
    let n = sys.state_dim();
    let shift = sys.a.norm() + 1.0;
    let shifted = &sys.a + DMatrix::identity(n, n) * shift;
    let rhs = &sys.b * sys.b.transpose() * 2.0;
    // want S with (A+sI) S + S (A+sI)' = 2BB'; the packed solver handles
    // M'X + XM, so pass M = (A+sI)'
    let s = solve_lyapunov(&shifted.transpose(), &rhs)
        .ok_or(CareError::NoStabilizingInitialGain)?;
    let s_inv_b = s
        .lu()
        .solve(&sys.b)
        .ok_or(CareError::NoStabilizingInitialGain)?;
    let k0 = s_inv_b.transpose();
    let closed = &sys.a - &sys.b * &k0;
    if !is_hurwitz(&closed)? {
        return Err(CareError::NoStabilizingInitialGain);
    }
    Ok(k0)
}

/// Newton-Kleinman solve of the continuous algebraic Riccati equation.
pub fn solve_care(
    sys: &LinearSystem,
    weights: &Weights,
    opts: &SolverOptions,
) -> Result<CareSolution, CareError> {
    let n = sys.state_dim();
    let m = sys.input_dim();
    if n > MAX_STATE_DIM {
        return Err(CareError::DimensionTooLarge { n });
    }
    if weights.state_dim() != n || weights.input_dim() != m {
        return Err(CareError::WeightMismatch { n, m });
    }

    let mut k = if is_hurwitz(&sys.a)? {
        DMatrix::zeros(m, n)
    } else {
        bass_stabilizing_gain(sys)?
    };

    let q = weights.q();
    let r = weights.r();
    let mut p_prev: Option<DMatrix<f64>> = None;
    let mut converged = None;

    for _ in 0..opts.max_iterations {
        let closed = &sys.a - &sys.b * &k;
        let rhs = -(q + k.transpose() * r * &k);
        let p = solve_lyapunov(&closed, &rhs).ok_or(CareError::SingularLyapunov)?;
        k = weights.r_solve_matrix(&(sys.b.transpose() * &p));
        if let Some(prev) = &p_prev {
            if (&p - prev).norm() < opts.convergence_tol * prev.norm().max(1.0) {
                converged = Some(p);
                break;
            }
        }
        p_prev = Some(p);
    }

    let p = converged.ok_or(CareError::NonConvergence {
        iterations: opts.max_iterations,
    })?;

    let k = weights.r_solve_matrix(&(sys.b.transpose() * &p));
    let riccati = sys.a.transpose() * &p + &p * &sys.a
        - &p * &sys.b * weights.r_solve_matrix(&(sys.b.transpose() * &p))
        + q;
    let residual_norm = riccati.norm();
    let bound = opts.residual_bound * q.norm().max(1.0);
    if residual_norm >= bound {
        return Err(CareError::ResidualBound {
            residual: residual_norm,
            bound,
        });
    }
    if nalgebra::Cholesky::new(p.clone()).is_none() {
        return Err(CareError::SolutionNotPositiveDefinite);
    }
    if !is_hurwitz(&(&sys.a - &sys.b * &k))? {
        return Err(CareError::ClosedLoopUnstable);
    }
    Ok(CareSolution {
        p,
        k,
        residual_norm,
    })
}

/// The quadratic CLF `V = x'Px/2`, expanded over `x1..xn`.
pub fn riccati_clf(sol: &CareSolution) -> ClfCandidate {
    let n = sol.p.nrows();
    let term = |coeff: f64, var_expr: Expression| -> Option<Expression> {
        if coeff == 0.0 {
            None
        } else if coeff == 1.0 {
            Some(var_expr)
        } else if coeff == -1.0 {
            Some(-var_expr)
        } else {
            Some(Expression::constant(coeff, n) * var_expr)
        }
    };
    let mut acc: Option<Expression> = None;
    let mut push = |t: Option<Expression>| {
        if let Some(t) = t {
            acc = Some(match acc.take() {
                Some(sum) => sum + t,
                None => t,
            });
        }
    };
    for i in 0..n {
        let xi2 = Expression::variable(i + 1, n).pow(Expression::constant(2.0, n));
        push(term(0.5 * sol.p[(i, i)], xi2));
        for j in (i + 1)..n {
            let xixj = Expression::variable(i + 1, n) * Expression::variable(j + 1, n);
            push(term(sol.p[(i, j)], xixj));
        }
    }
    let v = acc.unwrap_or_else(|| Expression::constant(0.0, n));
    ClfCandidate::new(v).expect("x'Px/2 vanishes at the origin")
}

/// All eigenvalues of `A - BK` must have strictly negative real parts.
pub fn closed_loop_eigen_check(
    sys: &LinearSystem,
    k: &DMatrix<f64>,
) -> Result<EigenCheck, CareError> {
    if k.nrows() != sys.input_dim() || k.ncols() != sys.state_dim() {
        return Err(CareError::ShapeMismatch {
            a_rows: sys.state_dim(),
            a_cols: sys.state_dim(),
            b_rows: k.nrows(),
            b_cols: k.ncols(),
        });
    }
    let closed = &sys.a - &sys.b * k;
    let eigenvalues = eigenvalues(&closed)?;
    let stable = eigenvalues.iter().all(|e| e.re < 0.0);
    Ok(EigenCheck {
        eigenvalues,
        stable,
    })
}
