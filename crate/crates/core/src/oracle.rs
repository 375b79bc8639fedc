//! Reference solvers used only to cross-check the production code.
//!
//! The discrete-time LQ tracker here shares nothing with [`crate::attack`]:
//! the dynamics are discretized through a matrix exponential of the
//! augmented `[A B; 0 0]` block rather than the closed-form step, and the
//! optimum comes from a backward dynamic-programming recursion on the
//! quadratic value function instead of a Riccati ODE.

use nalgebra::{Matrix2, Matrix3, RowVector2, Vector2};

use crate::attack::{AttackWeights, ReferenceTrajectory};
use crate::ecm::{BatteryState, EcmParams};
use crate::profiles::TimeSeries;

/// Exact zero-order-hold discretization `(Ad, Bd)` for step `dt`.
pub fn zoh_discretize(params: &EcmParams, dt: f64) -> (Matrix2<f64>, Vector2<f64>) {
    let mut m = Matrix3::zeros();
    m[(1, 1)] = -1.0 / (params.r1 * params.c1);
    m[(0, 2)] = -1.0 / params.capacity_q;
    m[(1, 2)] = 1.0 / params.c1;
    let e = (m * dt).exp();
    (
        Matrix2::new(e[(0, 0)], e[(0, 1)], e[(1, 0)], e[(1, 1)]),
        Vector2::new(e[(0, 2)], e[(1, 2)]),
    )
}

/// Optimal attack currents `u_a[0..n-1]` of the discrete-time tracking problem
///
/// ```text
/// min Σ_k 1/2 [(x_k - r_k)' Q2 dt (x_k - r_k) + R dt u_k²] + 1/2 (x_N - r_N)' Q1 (x_N - r_N)
/// ```
///
/// applied in closed loop from `x0`.
pub fn discrete_lq_tracking(
    params: &EcmParams,
    weights: &AttackWeights,
    reference: &ReferenceTrajectory,
    u_nom: &TimeSeries,
    x0: BatteryState,
) -> Vec<f64> {
    let dt = u_nom.dt();
    let n = u_nom.len();
    let (ad, bd) = zoh_discretize(params, dt);
    let q = weights.q2 * dt;
    let r = weights.r * dt;

    // Value function V_k(x) = 1/2 x' P x - p' x + const.
    let mut p_mat = weights.q1;
    let mut p_vec = weights.q1 * reference.at(u_nom.t_end());
    let mut gains: Vec<(RowVector2<f64>, f64)> = vec![(RowVector2::zeros(), 0.0); n - 1];
    for k in (0..n - 1).rev() {
        let w = bd * u_nom.samples()[k];
        let h = r + (bd.transpose() * p_mat * bd)[0];
        let gain = bd.transpose() * p_mat * ad / h;
        let offset = (bd.transpose() * (p_mat * w - p_vec))[0] / h;
        let closed = ad - bd * gain;
        let drift = w - bd * offset;
        let next_mat = q + ad.transpose() * p_mat * ad - ad.transpose() * p_mat * bd * gain;
        let next_vec = q * reference.at(u_nom.time(k)) + closed.transpose() * (p_vec - p_mat * drift)
            - gain.transpose() * (r * offset);
        p_mat = (next_mat + next_mat.transpose()) * 0.5;
        p_vec = next_vec;
        gains[k] = (gain, offset);
    }

    let mut x = x0.as_vector();
    let mut out = Vec::with_capacity(n - 1);
    for (k, (gain, offset)) in gains.iter().enumerate() {
        let u = -(gain * x)[0] - offset;
        out.push(u);
        x = ad * x + bd * (u_nom.samples()[k] + u);
    }
    out
}
