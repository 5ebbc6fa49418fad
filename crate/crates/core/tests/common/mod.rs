#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use trajsqp::linalg::vstack;
use trajsqp::model::{StageLq, TerminalLq};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

pub fn rel_diff_vec(a: &Vector, reference: &Vector) -> f64 {
    let d = (a - reference).amax();
    let s = reference.amax();
    if s > 0.0 {
        d / s
    } else {
        d
    }
}

pub fn rel_diff_mat(a: &Mat, reference: &Mat) -> f64 {
    let d = (a - reference).amax();
    let s = reference.amax();
    if s > 0.0 {
        d / s
    } else {
        d
    }
}

/// Value-function derivatives by the raw chain rule: form the full stage KKT
/// matrix, solve for the first-order sensitivities of `(u, y, λ)` and apply
/// `V_x = Q_x + k0ᵀK_ξ`, `V_xx = Q_xx + K0ᵀK_ξ`, from the terminal node back.
/// Returns `(V_x, V_xx)` at nodes `0..=N`.
pub fn naive_value_propagation(lqs: &[StageLq], term: &TerminalLq) -> (Vec<Vector>, Vec<Mat>) {
    let n = lqs.len();
    let mut v_x = vec![Vector::zeros(0); n + 1];
    let mut v_xx = vec![Mat::zeros(0, 0); n + 1];
    v_x[n] = term.grad.clone();
    v_xx[n] = term.hess.clone();
    for k in (0..n).rev() {
        let lq = &lqs[k];
        let (nx, nu, ny) = (lq.nx(), lq.nu(), lq.ny());
        let h_u = vstack(&[&lq.f_u, &Mat::zeros(lq.s0.len(), nu), &lq.c_u], nu);
        let h_y = vstack(&[&lq.f_y, &lq.s_y, &Mat::zeros(lq.c0.len(), ny)], ny);
        let h_x = vstack(&[&lq.f_x, &lq.s_x, &lq.c_x], nx);
        let h0: Vec<f64> = lq
            .f0
            .iter()
            .chain(lq.s0.iter())
            .chain(lq.c0.iter())
            .copied()
            .collect();
        let nh = h0.len();
        let dim = nu + ny + nh;

        let mut kk = Mat::zeros(dim, dim);
        kk.view_mut((0, 0), (nu, nu)).copy_from(&lq.q_uu);
        kk.view_mut((nu, nu), (ny, ny))
            .copy_from(&(&lq.q_yy + &v_xx[k + 1]));
        kk.view_mut((0, nu + ny), (nu, nh))
            .copy_from(&h_u.transpose());
        kk.view_mut((nu, nu + ny), (ny, nh))
            .copy_from(&h_y.transpose());
        kk.view_mut((nu + ny, 0), (nh, nu)).copy_from(&h_u);
        kk.view_mut((nu + ny, nu), (nh, ny)).copy_from(&h_y);

        let mut k0 = Vector::zeros(dim);
        k0.rows_mut(0, nu).copy_from(&lq.q_u);
        k0.rows_mut(nu, ny).copy_from(&(&lq.q_y + &v_x[k + 1]));
        k0.rows_mut(nu + ny, nh).copy_from(&Vector::from_vec(h0));
        let mut big_k0 = Mat::zeros(dim, nx);
        big_k0.view_mut((0, 0), (nu, nx)).copy_from(&lq.q_ux);
        big_k0.view_mut((nu, 0), (ny, nx)).copy_from(&lq.q_yx);
        big_k0.view_mut((nu + ny, 0), (nh, nx)).copy_from(&h_x);

        let lu = kk.lu();
        let k_xi = -lu.solve(&big_k0).expect("stage KKT matrix is nonsingular");
        v_x[k] = &lq.q_x + k_xi.tr_mul(&k0);
        v_xx[k] = &lq.q_xx + big_k0.tr_mul(&k_xi);
    }
    (v_x, v_xx)
}
