//! Optimal-control input attack.
//!
//! The adversary minimises
//!
//! ```text
//! J = 1/2 e(tf)' Q1 e(tf) + 1/2 ∫ e' Q2 e dt + 1/2 ∫ R u_a² dt,   e = x - x_ref
//! ```
//!
//! subject to `x' = A x + B (u_nom + u_a)`. With the co-state written as
//! `λ = S x - V`, the optimality conditions split into a matrix Riccati
//! equation for `S` and a linear vector equation for `V`, both integrated
//! backward from `S(tf) = Q1`, `V(tf) = Q1 x_ref(tf)`. The attack current
//! is then the state feedback `u_a = -R⁻¹ B' (S x - V)`.

use std::path::Path;

use nalgebra::{Matrix2, SymmetricEigen, Vector2};
use serde::{Deserialize, Serialize};

use crate::ecm::{state_matrices, step, BatteryState, EcmParams, StateMatrices};
use crate::error::{Error, Result};
use crate::profiles::{Grid, TimeSeries};

const SYMMETRY_TOL: f64 = 1e-12;
const PSD_TOL: f64 = 1e-12;

/// Weights of the attack objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackWeights {
    /// Terminal tracking weight.
    pub q1: Matrix2<f64>,
    /// Running tracking weight.
    pub q2: Matrix2<f64>,
    /// Attack-current energy weight.
    pub r: f64,
}

impl AttackWeights {
    pub fn new(q1: Matrix2<f64>, q2: Matrix2<f64>, r: f64) -> Result<Self> {
        check_psd("q1", &q1)?;
        check_psd("q2", &q2)?;
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::InvalidWeights(format!("r must be positive, got {r}")));
        }
        Ok(Self { q1, q2, r })
    }

    pub fn from_diagonals(q1: [f64; 2], q2: [f64; 2], r: f64) -> Result<Self> {
        Self::new(
            Matrix2::from_diagonal(&Vector2::from(q1)),
            Matrix2::from_diagonal(&Vector2::from(q2)),
            r,
        )
    }

    /// SoC-only tracking weights used by the shipped scenarios.
    pub fn scenario_default() -> Self {
        Self::from_diagonals([1e7, 0.0], [1e4, 0.0], 1.0).expect("valid constants")
    }
}

fn check_psd(name: &str, m: &Matrix2<f64>) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidWeights(format!("{name} has non-finite entries")));
    }
    if (m[(0, 1)] - m[(1, 0)]).abs() > SYMMETRY_TOL {
        return Err(Error::InvalidWeights(format!("{name} is not symmetric")));
    }
    let min_eig = SymmetricEigen::new(*m).eigenvalues.min();
    if min_eig < -PSD_TOL {
        return Err(Error::InvalidWeights(format!(
            "{name} is not positive semidefinite (min eigenvalue {min_eig})"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceShape {
    /// SoC moves linearly from start to target over the attack window.
    LinearRamp,
    /// SoC reference sits at the target for the whole window.
    HoldTarget,
}

/// The adversary's desired state trajectory. The `vc` component is always 0.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceTrajectory {
    pub soc_start: f64,
    pub soc_target: f64,
    pub t0: f64,
    pub tf: f64,
    pub shape: ReferenceShape,
}

impl ReferenceTrajectory {
    pub fn new(soc_start: f64, soc_target: f64, t0: f64, tf: f64, shape: ReferenceShape) -> Result<Self> {
        if !(t0.is_finite() && tf.is_finite() && tf > t0) {
            return Err(Error::Config(format!("reference window [{t0}, {tf}] is empty")));
        }
        for (name, v) in [("soc_start", soc_start), ("soc_target", soc_target)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {v}")));
            }
        }
        Ok(Self {
            soc_start,
            soc_target,
            t0,
            tf,
            shape,
        })
    }

    /// Reference spanning the whole grid of `series`.
    pub fn over(series: &TimeSeries, soc_start: f64, soc_target: f64, shape: ReferenceShape) -> Result<Self> {
        Self::new(soc_start, soc_target, series.t0(), series.t_end(), shape)
    }

    pub fn at(&self, t: f64) -> Vector2<f64> {
        let soc = match self.shape {
            ReferenceShape::HoldTarget => self.soc_target,
            ReferenceShape::LinearRamp => {
                if t >= self.tf {
                    self.soc_target
                } else if t <= self.t0 {
                    self.soc_start
                } else {
                    let frac = (t - self.t0) / (self.tf - self.t0);
                    self.soc_start + frac * (self.soc_target - self.soc_start)
                }
            }
        };
        Vector2::new(soc, 0.0)
    }
}

pub fn build_reference(reference: &ReferenceTrajectory, grid: &Grid) -> Vec<Vector2<f64>> {
    (0..grid.len).map(|k| reference.at(grid.time(k))).collect()
}

/// `S(t)` and `V(t)` sampled on the input grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RiccatiSolution {
    pub grid: Grid,
    pub s: Vec<Matrix2<f64>>,
    pub v: Vec<Vector2<f64>>,
}

impl RiccatiSolution {
    fn locate(&self, t: f64) -> Result<(usize, f64)> {
        let (start, end) = (self.grid.t0, self.grid.t_end());
        if !(t >= start && t <= end) {
            return Err(Error::OutOfGrid { t, start, end });
        }
        let pos = ((t - start) / self.grid.dt).min((self.grid.len - 1) as f64);
        let k = (pos.floor() as usize).min(self.grid.len.saturating_sub(2));
        Ok((k, pos - k as f64))
    }

    /// `S(t)` by linear interpolation between grid points.
    pub fn s_at(&self, t: f64) -> Result<Matrix2<f64>> {
        let (k, frac) = self.locate(t)?;
        if self.grid.len == 1 || frac == 0.0 {
            return Ok(self.s[k]);
        }
        Ok(self.s[k] + (self.s[k + 1] - self.s[k]) * frac)
    }

    /// `V(t)` by linear interpolation between grid points.
    pub fn v_at(&self, t: f64) -> Result<Vector2<f64>> {
        let (k, frac) = self.locate(t)?;
        if self.grid.len == 1 || frac == 0.0 {
            return Ok(self.v[k]);
        }
        Ok(self.v[k] + (self.v[k + 1] - self.v[k]) * frac)
    }

    /// CSV with columns `t,s11,s12,s22,v1,v2`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,s11,s12,s22,v1,v2\n");
        for (k, (s, v)) in self.s.iter().zip(&self.v).enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                self.grid.time(k),
                s[(0, 0)],
                s[(0, 1)],
                s[(1, 1)],
                v[0],
                v[1]
            ));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::profiles::write_file(path.as_ref(), self.to_csv().as_bytes())
    }
}

struct SweepRhs<'a> {
    m: StateMatrices,
    /// `B R⁻¹ B'`
    brb: Matrix2<f64>,
    q2: Matrix2<f64>,
    reference: &'a ReferenceTrajectory,
    u_nom: &'a TimeSeries,
}

impl SweepRhs<'_> {
    fn eval(&self, t: f64, s: &Matrix2<f64>, v: &Vector2<f64>) -> (Matrix2<f64>, Vector2<f64>) {
        let a = &self.m.a;
        let at = a.transpose();
        let s_dot = -(s * a + at * s - s * self.brb * s + self.q2);
        let u = self.u_nom.interpolate(t);
        let x_ref = self.reference.at(t);
        let v_dot = -(at * v - s * self.brb * v - s * self.m.b * u + self.q2 * x_ref);
        (s_dot, v_dot)
    }
}

/// Integrate the `S` and `V` equations backward over the grid of `u_nom`
/// with classic RK4, one step per grid interval.
pub fn solve_riccati(
    params: &EcmParams,
    weights: &AttackWeights,
    reference: &ReferenceTrajectory,
    u_nom: &TimeSeries,
) -> Result<RiccatiSolution> {
    let grid = u_nom.grid();
    let m = state_matrices(params);
    let rhs = SweepRhs {
        m,
        brb: m.b * m.b.transpose() / weights.r,
        q2: weights.q2,
        reference,
        u_nom,
    };

    let n = grid.len;
    let mut s = vec![Matrix2::zeros(); n];
    let mut v = vec![Vector2::zeros(); n];
    s[n - 1] = weights.q1;
    v[n - 1] = weights.q1 * reference.at(grid.t_end());

    let h = -grid.dt;
    for k in (1..n).rev() {
        let t = grid.time(k);
        let (s0, v0) = (s[k], v[k]);
        let (ks1, kv1) = rhs.eval(t, &s0, &v0);
        let (ks2, kv2) = rhs.eval(t + 0.5 * h, &(s0 + ks1 * (0.5 * h)), &(v0 + kv1 * (0.5 * h)));
        let (ks3, kv3) = rhs.eval(t + 0.5 * h, &(s0 + ks2 * (0.5 * h)), &(v0 + kv2 * (0.5 * h)));
        let (ks4, kv4) = rhs.eval(t + h, &(s0 + ks3 * h), &(v0 + kv3 * h));
        let s_next = s0 + (ks1 + ks2 * 2.0 + ks3 * 2.0 + ks4) * (h / 6.0);
        let v_next = v0 + (kv1 + kv2 * 2.0 + kv3 * 2.0 + kv4) * (h / 6.0);
        if s_next.iter().chain(v_next.iter()).any(|x| !x.is_finite()) {
            return Err(Error::RiccatiBlowUp { t: grid.time(k - 1) });
        }
        s[k - 1] = (s_next + s_next.transpose()) * 0.5;
        v[k - 1] = v_next;
    }
    Ok(RiccatiSolution { grid, s, v })
}

fn feedback(s: &Matrix2<f64>, v: &Vector2<f64>, b: &Vector2<f64>, r: f64, x: &Vector2<f64>) -> f64 {
    // `+ 0.0` turns the -0.0 produced by all-zero weights into +0.0.
    -(b.dot(&(s * x - v))) / r + 0.0
}

/// `-(1/r) b' (S(t) x - V(t))`, with `S` and `V` interpolated at `t`.
pub fn attack_current(
    riccati: &RiccatiSolution,
    b: &Vector2<f64>,
    r: f64,
    x: &BatteryState,
    t: f64,
) -> Result<f64> {
    let s = riccati.s_at(t)?;
    let v = riccati.v_at(t)?;
    Ok(feedback(&s, &v, b, r, &x.as_vector()))
}

/// Output of [`synthesize_input_attack`].
#[derive(Debug, Clone, PartialEq)]
pub struct InputAttack {
    pub u_a: TimeSeries,
    /// Adversary-model trajectory under `u_nom + u_a`.
    pub states: Vec<BatteryState>,
    pub riccati: RiccatiSolution,
    pub soc_violation: bool,
    /// `|u_nom + u_a|` exceeded the configured bound somewhere. Never clipped.
    pub i_max_violated: bool,
}

impl InputAttack {
    pub fn final_state(&self) -> BatteryState {
        *self.states.last().expect("non-empty trajectory")
    }

    /// `∫ u_a² dt` over the applied intervals.
    pub fn energy(&self) -> f64 {
        attack_energy(&self.u_a)
    }
}

pub(crate) fn attack_energy(u_a: &TimeSeries) -> f64 {
    let s = u_a.samples();
    s[..s.len() - 1].iter().map(|u| u * u).sum::<f64>() * u_a.dt()
}

/// Solve the sweep, then run the closed loop forward on the adversary's own
/// model: at sample `k` the attack current is the feedback of the model
/// state, and the state advances under `u_nom[k] + u_a[k]`.
pub fn synthesize_input_attack(
    params: &EcmParams,
    weights: &AttackWeights,
    reference: &ReferenceTrajectory,
    u_nom: &TimeSeries,
    x0: BatteryState,
    i_max: Option<f64>,
) -> Result<InputAttack> {
    let riccati = solve_riccati(params, weights, reference, u_nom)?;
    let b = state_matrices(params).b;
    let dt = u_nom.dt();
    let n = u_nom.len();

    let mut states = Vec::with_capacity(n);
    let mut u_a = Vec::with_capacity(n);
    let mut x = x0;
    let mut soc_violation = false;
    let mut i_max_violated = false;
    for k in 0..n {
        let u = feedback(&riccati.s[k], &riccati.v[k], &b, weights.r, &x.as_vector());
        if !u.is_finite() {
            return Err(Error::Numerical(format!("attack current not finite at t = {}", u_nom.time(k))));
        }
        let applied = u_nom.samples()[k] + u;
        if let Some(limit) = i_max {
            i_max_violated |= applied.abs() > limit;
        }
        soc_violation |= !x.soc_in_range();
        states.push(x);
        u_a.push(u);
        if k + 1 < n {
            x = step(params, &x, applied, dt);
        }
    }
    Ok(InputAttack {
        u_a: u_nom.with_samples(u_a)?,
        states,
        riccati,
        soc_violation,
        i_max_violated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ecm::OcvCurve;
    use approx::assert_relative_eq;

    fn cell() -> EcmParams {
        EcmParams::paper_cell()
    }

    fn discharge_profile() -> TimeSeries {
        // 0.8 -> 0.5 over an hour.
        let bias = 0.3 * 1.4322e4 / 3600.0;
        crate::profiles::synthetic_profile(crate::profiles::ProfileKind::SinMix, 2.0, bias, 3600.0, 1.0, 11)
            .unwrap()
    }

    #[test]
    fn weights_validation() {
        assert!(AttackWeights::from_diagonals([1.0, 0.0], [1.0, 0.0], 0.0).is_err());
        assert!(AttackWeights::from_diagonals([-1.0, 0.0], [1.0, 0.0], 1.0).is_err());
        let asym = Matrix2::new(1.0, 0.5, 0.4, 1.0);
        assert!(AttackWeights::new(asym, Matrix2::zeros(), 1.0).is_err());
        let indefinite = Matrix2::new(1.0, 2.0, 2.0, 1.0);
        assert!(AttackWeights::new(indefinite, Matrix2::zeros(), 1.0).is_err());
    }

    #[test]
    fn reference_shapes() {
        let r = ReferenceTrajectory::new(0.8, 0.2, 0.0, 100.0, ReferenceShape::LinearRamp).unwrap();
        assert_relative_eq!(r.at(50.0)[0], 0.5, epsilon = 1e-15);
        assert_eq!(r.at(100.0), Vector2::new(0.2, 0.0));
        let h = ReferenceTrajectory::new(0.2, 0.8, 0.0, 100.0, ReferenceShape::HoldTarget).unwrap();
        let grid = Grid::new(0.0, 10.0, 11).unwrap();
        assert!(build_reference(&h, &grid).iter().all(|x| *x == Vector2::new(0.8, 0.0)));
        assert!(ReferenceTrajectory::new(0.8, 1.2, 0.0, 1.0, ReferenceShape::HoldTarget).is_err());
        assert!(ReferenceTrajectory::new(0.8, 0.2, 5.0, 5.0, ReferenceShape::HoldTarget).is_err());
    }

    #[test]
    fn zero_weights_give_zero_solution() {
        let u = discharge_profile();
        let w = AttackWeights::from_diagonals([0.0, 0.0], [0.0, 0.0], 1.0).unwrap();
        let r = ReferenceTrajectory::over(&u, 0.8, 0.2, ReferenceShape::LinearRamp).unwrap();
        let sol = solve_riccati(&cell(), &w, &r, &u).unwrap();
        assert!(sol.s.iter().all(|s| s.iter().all(|&x| x == 0.0)));
        assert!(sol.v.iter().all(|v| v.iter().all(|&x| x == 0.0)));
    }

    #[test]
    fn terminal_conditions_are_exact() {
        let u = discharge_profile();
        let w = AttackWeights::new(Matrix2::new(3.0, 0.5, 0.5, 2.0), Matrix2::new(1.0, 0.1, 0.1, 0.3), 2.0)
            .unwrap();
        let r = ReferenceTrajectory::over(&u, 0.8, 0.2, ReferenceShape::LinearRamp).unwrap();
        let sol = solve_riccati(&cell(), &w, &r, &u).unwrap();
        assert_eq!(*sol.s.last().unwrap(), w.q1);
        assert_eq!(*sol.v.last().unwrap(), w.q1 * Vector2::new(0.2, 0.0));
    }

    #[test]
    fn attack_current_examples() {
        let grid = Grid::new(0.0, 1.0, 3).unwrap();
        let zero = RiccatiSolution {
            grid,
            s: vec![Matrix2::zeros(); 3],
            v: vec![Vector2::zeros(); 3],
        };
        let b = Vector2::new(-0.5, 2.0);
        let x = BatteryState { soc: 0.4, vc: 0.01 };
        assert_eq!(attack_current(&zero, &b, 1.0, &x, 0.5).unwrap(), 0.0);

        // V chosen so that S x = V.
        let s = Matrix2::new(2.0, 0.0, 0.0, 1.0);
        let sol = RiccatiSolution {
            grid,
            s: vec![s; 3],
            v: vec![s * x.as_vector(); 3],
        };
        assert_relative_eq!(attack_current(&sol, &b, 1.0, &x, 1.7).unwrap(), 0.0, epsilon = 1e-15);

        // Scalar case: S = diag(4, 0), V = (1, 0), b = (-0.5, *), r = 2:
        // u = -(-0.5)(4 * 0.4 - 1)/2 = 0.15.
        let sol = RiccatiSolution {
            grid,
            s: vec![Matrix2::new(4.0, 0.0, 0.0, 0.0); 3],
            v: vec![Vector2::new(1.0, 0.0); 3],
        };
        assert_relative_eq!(attack_current(&sol, &b, 2.0, &x, 0.0).unwrap(), 0.15, epsilon = 1e-15);
        assert!(matches!(
            attack_current(&sol, &b, 2.0, &x, 2.5),
            Err(Error::OutOfGrid { .. })
        ));
        assert!(attack_current(&sol, &b, 2.0, &x, -0.1).is_err());
    }

    #[test]
    fn interpolation_between_grid_points() {
        let grid = Grid::new(10.0, 2.0, 2).unwrap();
        let sol = RiccatiSolution {
            grid,
            s: vec![Matrix2::identity(), Matrix2::identity() * 3.0],
            v: vec![Vector2::new(0.0, 1.0), Vector2::new(2.0, 3.0)],
        };
        assert_eq!(sol.s_at(11.0).unwrap(), Matrix2::identity() * 2.0);
        assert_eq!(sol.v_at(11.5).unwrap(), Vector2::new(1.5, 2.5));
        assert_eq!(sol.s_at(12.0).unwrap(), Matrix2::identity() * 3.0);
    }

    #[test]
    fn zero_weights_leave_trajectory_nominal() {
        let p = cell();
        let u = discharge_profile();
        let w = AttackWeights::from_diagonals([0.0, 0.0], [0.0, 0.0], 1.0).unwrap();
        let r = ReferenceTrajectory::over(&u, 0.8, 0.2, ReferenceShape::LinearRamp).unwrap();
        let x0 = BatteryState::new(0.8, 0.0).unwrap();
        let atk = synthesize_input_attack(&p, &w, &r, &u, x0, None).unwrap();
        assert!(atk.u_a.samples().iter().all(|&v| v == 0.0 && v.is_sign_positive()));
        let nominal = crate::ecm::simulate(&p, x0, &u).unwrap();
        assert_eq!(atk.states, nominal.states);
    }

    #[test]
    fn over_discharge_reaches_target() {
        let p = cell();
        let u = discharge_profile();
        let r = ReferenceTrajectory::over(&u, 0.8, 0.2, ReferenceShape::LinearRamp).unwrap();
        let x0 = BatteryState::new(0.8, 0.0).unwrap();
        let atk = synthesize_input_attack(&p, &AttackWeights::scenario_default(), &r, &u, x0, Some(20.0))
            .unwrap();
        let soc = atk.final_state().soc;
        assert!((soc - 0.2).abs() <= 0.02, "final soc {soc}");
        assert!(!atk.i_max_violated);
    }

    #[test]
    fn attacked_states_match_plain_simulation() {
        let p = cell();
        let u = discharge_profile();
        let r = ReferenceTrajectory::over(&u, 0.8, 0.2, ReferenceShape::LinearRamp).unwrap();
        let x0 = BatteryState::new(0.8, 0.0).unwrap();
        let atk = synthesize_input_attack(&p, &AttackWeights::scenario_default(), &r, &u, x0, None).unwrap();
        let sim = crate::ecm::simulate(&p, x0, &u.add(&atk.u_a).unwrap()).unwrap();
        assert_eq!(sim.states, atk.states);
    }

    #[test]
    fn heavier_control_weight_spends_less_energy() {
        let p = cell();
        let u = discharge_profile();
        let r = ReferenceTrajectory::over(&u, 0.8, 0.2, ReferenceShape::LinearRamp).unwrap();
        let x0 = BatteryState::new(0.8, 0.0).unwrap();
        let base = AttackWeights::scenario_default();
        let heavy = AttackWeights { r: 2.0 * base.r, ..base };
        let e1 = synthesize_input_attack(&p, &base, &r, &u, x0, None).unwrap().energy();
        let e2 = synthesize_input_attack(&p, &heavy, &r, &u, x0, None).unwrap().energy();
        assert!(e2 <= e1, "{e2} > {e1}");
    }

    #[test]
    fn i_max_flag_is_reported_not_enforced() {
        let p = cell();
        let u = discharge_profile();
        let r = ReferenceTrajectory::over(&u, 0.8, 0.2, ReferenceShape::LinearRamp).unwrap();
        let x0 = BatteryState::new(0.8, 0.0).unwrap();
        let w = AttackWeights::scenario_default();
        let free = synthesize_input_attack(&p, &w, &r, &u, x0, None).unwrap();
        let capped = synthesize_input_attack(&p, &w, &r, &u, x0, Some(1.0)).unwrap();
        assert!(capped.i_max_violated);
        assert_eq!(free.u_a, capped.u_a);
    }

    #[test]
    fn blow_up_is_reported() {
        // Negative-definite drift is impossible with valid params, so force
        // divergence through an enormous terminal weight on a coarse grid.
        let p = EcmParams::new(1e-3, 0.01, 0.01, 1e-3, OcvCurve::fixture()).unwrap();
        let u = TimeSeries::constant(0.0, 50.0, 40, 0.0).unwrap();
        let w = AttackWeights::from_diagonals([1e300, 1e300], [1e300, 1e300], 1e-300).unwrap();
        let r = ReferenceTrajectory::over(&u, 0.5, 0.5, ReferenceShape::HoldTarget).unwrap();
        assert!(matches!(solve_riccati(&p, &w, &r, &u), Err(Error::RiccatiBlowUp { .. })));
    }
}
