//! Projection-based factorization of one stage's equality block
//!
//! ```text
//! h_{u,y} = [ f_u  f_y ]
//!           [  0   s_y ]
//!           [ c_u   0  ]
//! ```
//!
//! With `f_y` invertible the dynamics are condensed (`F_u = f_y⁻¹f_u`,
//! `F_0 = f_y⁻¹f_0`) and the kernel of `h_{u,y}` is `[Z_u; −F_u Z_u]` where
//! `Z_u` spans the kernel of the reduced matrix `[−s_y F_u; c_u]`. Ranks are
//! decided by a threshold-pivoted complete LU, so duplicated or dependent
//! `s`/`c` rows are detected rather than inverted.
//!
//! Pseudoinverse solutions use the full-rank factorization `h = M h_P`, where
//! `h_P` holds the independent rows picked by the LU. Both `h_Pᵀ` and `M` have
//! full column rank, so two thin QR factorizations give the Moore-Penrose
//! inverse `h⁺ = h_P⁺ M⁺` without forming normal equations.

use crate::error::StepError;
use crate::linalg::{default_pivot_tol, inf_norm, mat_inf_norm, vstack, Mat, ThresholdLu, Vector};

/// `F_u = f_y⁻¹ f_u`, `F_0 = f_y⁻¹ f_0`.
#[derive(Debug, Clone, PartialEq)]
pub struct CondensedDynamics {
    pub f_u: Mat,
    pub f_0: Vector,
    /// `max(‖f_y F_u − f_u‖∞, ‖f_y F_0 − f_0‖∞)`.
    pub residual: f64,
}

/// Condenses the implicit dynamics. A singular `f_y` is a hard failure.
pub fn condense_dynamics(
    f_y: &Mat,
    f_u: &Mat,
    f0: &Vector,
) -> Result<CondensedDynamics, StepError> {
    let n = f_y.nrows();
    assert_eq!(n, f_y.ncols(), "f_y must be square");
    let lu = ThresholdLu::with_default_tol(f_y);
    if lu.rank() < n {
        return Err(StepError::SingularDynamics {
            stage: 0,
            rank: lu.rank(),
            dim: n,
        });
    }
    let mut big_u = lu.solve(f_u).expect("full rank");
    let mut big_0 = lu.solve_vec(f0).expect("full rank");
    // one step of refinement keeps the residual at roundoff level for
    // moderately conditioned f_y
    let ru = f_u - f_y * &big_u;
    let r0 = f0 - f_y * &big_0;
    big_u += lu.solve(&ru).expect("full rank");
    big_0 += lu.solve_vec(&r0).expect("full rank");
    let residual = mat_inf_norm(&(f_y * &big_u - f_u)).max(inf_norm(&(f_y * &big_0 - f0)));
    Ok(CondensedDynamics {
        f_u: big_u,
        f_0: big_0,
        residual,
    })
}

/// Kernel basis of the stage equality Jacobian restricted to `(u, y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct NullspaceBasis {
    pub z_u: Mat,
    pub z_y: Mat,
    /// Detected rank of `[−s_y F_u; c_u]`.
    pub rank: usize,
    pub pivot_tol: f64,
    /// Original row indices (within `[s; c]`) of the independent rows.
    pub independent_rows: Vec<usize>,
}

impl NullspaceBasis {
    pub fn dim(&self) -> usize {
        self.z_u.ncols()
    }
}

/// Reduced constraint matrix `[−s_y F_u; c_u]`.
pub fn reduced_constraints(s_y: &Mat, c_u: &Mat, cond: &CondensedDynamics) -> Mat {
    let nu = cond.f_u.ncols();
    let top = -(s_y * &cond.f_u);
    vstack(&[&top, c_u], nu)
}

/// Nullspace basis `Z_u = ker([−s_y F_u; c_u])`, `Z_y = −F_u Z_u`.
///
/// `pivot_tol` is relative to the largest pivot; `None` selects machine
/// epsilon times the largest matrix dimension.
pub fn nullspace_basis(
    s_y: &Mat,
    c_u: &Mat,
    cond: &CondensedDynamics,
    pivot_tol: Option<f64>,
) -> NullspaceBasis {
    let nu = cond.f_u.ncols();
    let a = reduced_constraints(s_y, c_u, cond);
    let tol = pivot_tol.unwrap_or_else(|| default_pivot_tol(a.nrows(), a.ncols()));
    assert!(tol > 0.0, "pivot tolerance must be positive");
    if a.nrows() == 0 {
        return NullspaceBasis {
            z_u: Mat::identity(nu, nu),
            z_y: -cond.f_u.clone(),
            rank: 0,
            pivot_tol: tol,
            independent_rows: Vec::new(),
        };
    }
    let lu = ThresholdLu::new(&a, tol);
    let z_u = lu.kernel();
    let z_y = -(&cond.f_u * &z_u);
    NullspaceBasis {
        z_u,
        z_y,
        rank: lu.rank(),
        pivot_tol: tol,
        independent_rows: lu.pivot_rows(),
    }
}

/// Minimum-norm solution of `h_{u,y} [δû; δŷ] = rhs` (one column per rhs).
#[derive(Debug, Clone, PartialEq)]
pub struct ParticularSolution {
    pub du: Mat,
    pub dy: Mat,
    /// False when the rhs is not in the range of `h_{u,y}`; the solution is
    /// then the minimum-norm least-squares one.
    pub consistent: bool,
    pub residual: f64,
}

/// Dual step from the stationarity rows `h_{u,y}ᵀ δλ = −[grad_u; grad_y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DualStep {
    pub f: Vector,
    pub s: Vector,
    pub c: Vector,
    /// `‖h_{u,y}ᵀ δλ + grad‖∞`.
    pub residual: f64,
}

/// Everything the recursion needs from one stage's equality block: the
/// condensed dynamics, the nullspace basis and a pseudoinverse of `h_{u,y}`.
#[derive(Debug, Clone)]
pub struct EqualityProjector {
    pub cond: CondensedDynamics,
    pub basis: NullspaceBasis,
    h: Mat,
    nu: usize,
    nf: usize,
    ns: usize,
    nc: usize,
    /// Thin QR of `h_Pᵀ`.
    q: Mat,
    r: Mat,
    /// Thin QR of `M` with `h = M h_P`.
    qm: Mat,
    rm: Mat,
}

impl EqualityProjector {
    pub fn new(
        f_u: &Mat,
        f_y: &Mat,
        f0: &Vector,
        s_y: &Mat,
        c_u: &Mat,
        pivot_tol: Option<f64>,
    ) -> Result<Self, StepError> {
        let nu = f_u.ncols();
        let ny = f_y.ncols();
        let (nf, ns, nc) = (f_y.nrows(), s_y.nrows(), c_u.nrows());
        let cond = condense_dynamics(f_y, f_u, f0)?;
        let basis = nullspace_basis(s_y, c_u, &cond, pivot_tol);

        let m = nf + ns + nc;
        let mut h = Mat::zeros(m, nu + ny);
        h.view_mut((0, 0), (nf, nu)).copy_from(f_u);
        h.view_mut((0, nu), (nf, ny)).copy_from(f_y);
        h.view_mut((nf, nu), (ns, ny)).copy_from(s_y);
        h.view_mut((nf + ns, 0), (nc, nu)).copy_from(c_u);

        let mut rows: Vec<usize> = (0..nf).collect();
        rows.extend(basis.independent_rows.iter().map(|i| nf + i));
        let rank = rows.len();

        let mut hp_t = Mat::zeros(nu + ny, rank);
        for (j, &i) in rows.iter().enumerate() {
            hp_t.set_column(j, &h.row(i).transpose());
        }
        let (q, r) = thin_qr(hp_t);
        // Mᵀ = R⁻¹ Qᵀ hᵀ
        let mt = r
            .solve_upper_triangular(&(q.transpose() * h.transpose()))
            .ok_or(StepError::NonFinite {
                stage: 0,
                what: "row-space factor",
            })?;
        let (qm, rm) = thin_qr(mt.transpose());

        Ok(Self {
            cond,
            basis,
            h,
            nu,
            nf,
            ns,
            nc,
            q,
            r,
            qm,
            rm,
        })
    }

    /// Rank of the full stage equality Jacobian `h_{u,y}`.
    pub fn rank(&self) -> usize {
        self.r.nrows()
    }

    pub fn h_uy(&self) -> &Mat {
        &self.h
    }

    pub fn n_rows(&self) -> usize {
        self.nf + self.ns + self.nc
    }

    /// Minimum-norm least-squares solution for every column of `rhs`.
    pub fn particular(&self, rhs: &Mat) -> ParticularSolution {
        assert_eq!(
            rhs.nrows(),
            self.n_rows(),
            "rhs rows must match equality rows"
        );
        let n = self.h.ncols();
        let p = rhs.ncols();
        let sol = if self.rank() == 0 {
            Mat::zeros(n, p)
        } else {
            let v = self
                .rm
                .solve_upper_triangular(&(self.qm.transpose() * rhs))
                .expect("nonsingular triangular factor");
            let w = self
                .r
                .tr_solve_upper_triangular(&v)
                .expect("nonsingular triangular factor");
            &self.q * w
        };
        let residual = mat_inf_norm(&(&self.h * &sol - rhs));
        let consistent = residual <= 1e-8 * mat_inf_norm(rhs).max(1.0);
        ParticularSolution {
            du: sol.rows(0, self.nu).into_owned(),
            dy: sol.rows(self.nu, n - self.nu).into_owned(),
            consistent,
            residual,
        }
    }

    pub fn particular_vec(&self, rhs: &Vector) -> ParticularSolution {
        self.particular(&Mat::from_column_slice(rhs.len(), 1, rhs.as_slice()))
    }

    /// Minimum-norm least-squares multipliers of `h_{u,y}ᵀ δλ = −[grad_u; grad_y]`.
    pub fn dual(&self, grad_u: &Vector, grad_y: &Vector) -> DualStep {
        let g = crate::linalg::vstack_vec(&[grad_u, grad_y]);
        let m = self.n_rows();
        let lam = if self.rank() == 0 {
            Vector::zeros(m)
        } else {
            let w = self.q.tr_mul(&(-&g));
            let w = self
                .r
                .solve_upper_triangular(&w)
                .expect("nonsingular triangular factor");
            let w = self
                .rm
                .tr_solve_upper_triangular(&w)
                .expect("nonsingular triangular factor");
            &self.qm * w
        };
        let residual = inf_norm(&(self.h.tr_mul(&lam) + &g));
        DualStep {
            f: lam.rows(0, self.nf).into_owned(),
            s: lam.rows(self.nf, self.ns).into_owned(),
            c: lam.rows(self.nf + self.ns, self.nc).into_owned(),
            residual,
        }
    }
}

fn thin_qr(a: Mat) -> (Mat, Mat) {
    let (m, n) = a.shape();
    if n == 0 {
        return (Mat::zeros(m, 0), Mat::zeros(0, 0));
    }
    let qr = a.qr();
    (qr.q(), qr.r())
}

/// Free-function form of [`EqualityProjector::particular`]. `rhs` stacks the
/// `[f; s; c]` rows.
pub fn particular_solution(
    f_u: &Mat,
    f_y: &Mat,
    s_y: &Mat,
    c_u: &Mat,
    rhs: &Mat,
) -> Result<ParticularSolution, StepError> {
    let p = EqualityProjector::new(f_u, f_y, &Vector::zeros(f_y.nrows()), s_y, c_u, None)?;
    Ok(p.particular(rhs))
}

/// Free-function form of [`EqualityProjector::dual`].
pub fn dual_reconstruct(
    f_u: &Mat,
    f_y: &Mat,
    s_y: &Mat,
    c_u: &Mat,
    grad_u: &Vector,
    grad_y: &Vector,
) -> Result<DualStep, StepError> {
    let p = EqualityProjector::new(f_u, f_y, &Vector::zeros(f_y.nrows()), s_y, c_u, None)?;
    Ok(p.dual(grad_u, grad_y))
}
