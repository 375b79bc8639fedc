//! First-order equivalent-circuit battery model.
//!
//! State is `(soc, vc)`: state of charge and the voltage across the RC
//! branch. Positive current discharges the cell, so `d soc/dt = -I / Q`.
//! The terminal voltage is `OCV(soc) - vc - I * r0`.
//!
//! Stepping uses the exact zero-order-hold solution of both state
//! equations, so there is no integrator error: SoC is pure coulomb
//! counting and `vc` relaxes with `exp(-dt / (r1 c1))`.

use std::path::Path;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profiles::TimeSeries;

/// Piecewise-linear open-circuit voltage as a function of SoC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct OcvCurve {
    soc: Vec<f64>,
    volts: Vec<f64>,
}

impl OcvCurve {
    pub fn new(soc: Vec<f64>, volts: Vec<f64>) -> Result<Self> {
        if soc.len() != volts.len() {
            return Err(Error::InvalidOcv(format!(
                "{} SoC breakpoints but {} voltages",
                soc.len(),
                volts.len()
            )));
        }
        if soc.len() < 2 {
            return Err(Error::InvalidOcv("need at least 2 breakpoints".into()));
        }
        if soc.iter().chain(&volts).any(|v| !v.is_finite()) {
            return Err(Error::InvalidOcv("non-finite value".into()));
        }
        if soc[0] != 0.0 || soc[soc.len() - 1] != 1.0 {
            return Err(Error::InvalidOcv(format!(
                "breakpoints must span [0, 1], got [{}, {}]",
                soc[0],
                soc[soc.len() - 1]
            )));
        }
        for k in 1..soc.len() {
            if soc[k] <= soc[k - 1] {
                return Err(Error::InvalidOcv(format!(
                    "SoC breakpoints not strictly increasing at index {k}"
                )));
            }
            if volts[k] <= volts[k - 1] {
                return Err(Error::InvalidOcv(format!(
                    "OCV not strictly increasing at index {k} ({} -> {})",
                    volts[k - 1],
                    volts[k]
                )));
            }
        }
        Ok(Self { soc, volts })
    }

    pub fn from_points(points: &[(f64, f64)]) -> Result<Self> {
        Self::new(
            points.iter().map(|p| p.0).collect(),
            points.iter().map(|p| p.1).collect(),
        )
    }

    pub fn soc_breakpoints(&self) -> &[f64] {
        &self.soc
    }

    pub fn ocv_values(&self) -> &[f64] {
        &self.volts
    }

    /// OCV at `soc`. Outside `[0, 1]` the end segment is extended linearly.
    pub fn eval(&self, soc: f64) -> f64 {
        let n = self.soc.len();
        // Segment index: first segment for soc < 0, last for soc > 1.
        let seg = match self.soc.partition_point(|&s| s <= soc) {
            0 => 0,
            i if i >= n => n - 2,
            i => i - 1,
        };
        let (s0, s1) = (self.soc[seg], self.soc[seg + 1]);
        let (v0, v1) = (self.volts[seg], self.volts[seg + 1]);
        v0 + (soc - s0) * (v1 - v0) / (s1 - s0)
    }

    /// Synthetic reference curve for a 4.2 V / 2.5 V class Li-ion cell,
    /// rising from 3.0 V at empty to 4.2 V at full.
    pub fn fixture() -> Self {
        const POINTS: [(f64, f64); 11] = [
            (0.0, 3.00),
            (0.1, 3.45),
            (0.2, 3.55),
            (0.3, 3.62),
            (0.4, 3.67),
            (0.5, 3.72),
            (0.6, 3.79),
            (0.7, 3.87),
            (0.8, 3.96),
            (0.9, 4.07),
            (1.0, 4.20),
        ];
        Self::from_points(&POINTS).expect("fixture curve is valid")
    }
}

impl TryFrom<Vec<[f64; 2]>> for OcvCurve {
    type Error = Error;

    fn try_from(points: Vec<[f64; 2]>) -> Result<Self> {
        Self::new(
            points.iter().map(|p| p[0]).collect(),
            points.iter().map(|p| p[1]).collect(),
        )
    }
}

impl From<OcvCurve> for Vec<[f64; 2]> {
    fn from(c: OcvCurve) -> Self {
        c.soc.into_iter().zip(c.volts).map(|(s, v)| [s, v]).collect()
    }
}

/// Physical parameters of the cell. JSON keys follow the parameter-file schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawParams", into = "RawParams")]
pub struct EcmParams {
    /// Capacity in ampere-seconds.
    pub capacity_q: f64,
    /// Series resistance, ohm.
    pub r0: f64,
    /// RC-branch resistance, ohm.
    pub r1: f64,
    /// RC-branch capacitance, farad.
    pub c1: f64,
    pub ocv: OcvCurve,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawParams {
    #[serde(rename = "capacity_As")]
    capacity_as: f64,
    r0_ohm: f64,
    r1_ohm: f64,
    c1_farad: f64,
    ocv: OcvCurve,
}

impl TryFrom<RawParams> for EcmParams {
    type Error = Error;

    fn try_from(r: RawParams) -> Result<Self> {
        EcmParams::new(r.capacity_as, r.r0_ohm, r.r1_ohm, r.c1_farad, r.ocv)
    }
}

impl From<EcmParams> for RawParams {
    fn from(p: EcmParams) -> Self {
        RawParams {
            capacity_as: p.capacity_q,
            r0_ohm: p.r0,
            r1_ohm: p.r1,
            c1_farad: p.c1,
            ocv: p.ocv,
        }
    }
}

impl EcmParams {
    pub fn new(capacity_q: f64, r0: f64, r1: f64, c1: f64, ocv: OcvCurve) -> Result<Self> {
        for (name, v) in [("capacity_As", capacity_q), ("r0_ohm", r0), ("r1_ohm", r1), ("c1_farad", c1)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidParams(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(Self {
            capacity_q,
            r0,
            r1,
            c1,
            ocv,
        })
    }

    /// Identified 4 Ah cell with the synthetic fixture OCV curve.
    pub fn paper_cell() -> Self {
        Self::new(1.4322e4, 1.3513e-2, 1.028e-2, 5.2584e3, OcvCurve::fixture())
            .expect("valid constants")
    }

    /// RC time constant `r1 * c1` in seconds.
    pub fn tau(&self) -> f64 {
        self.r1 * self.c1
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("params serialize")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = self.to_json();
        text.push('\n');
        crate::profiles::write_file(path.as_ref(), text.as_bytes())
    }
}

/// Model state: state of charge and RC-branch voltage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BatteryState {
    pub soc: f64,
    pub vc: f64,
}

impl BatteryState {
    pub fn new(soc: f64, vc: f64) -> Result<Self> {
        if !soc.is_finite() || !vc.is_finite() {
            return Err(Error::InvalidParams(format!("state must be finite, got ({soc}, {vc})")));
        }
        Ok(Self { soc, vc })
    }

    pub fn as_vector(&self) -> Vector2<f64> {
        Vector2::new(self.soc, self.vc)
    }

    pub fn soc_in_range(&self) -> bool {
        (0.0..=1.0).contains(&self.soc)
    }
}

/// Continuous-time `x' = A x + B u` for the state `(soc, vc)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateMatrices {
    pub a: Matrix2<f64>,
    pub b: Vector2<f64>,
}

pub fn state_matrices(params: &EcmParams) -> StateMatrices {
    StateMatrices {
        a: Matrix2::new(0.0, 0.0, 0.0, -1.0 / (params.r1 * params.c1)),
        b: Vector2::new(-1.0 / params.capacity_q, 1.0 / params.c1),
    }
}

pub fn ocv(curve: &OcvCurve, soc: f64) -> f64 {
    curve.eval(soc)
}

/// `OCV(soc) - vc - current * r0`.
pub fn terminal_voltage(params: &EcmParams, state: &BatteryState, current: f64) -> f64 {
    params.ocv.eval(state.soc) - state.vc - current * params.r0
}

/// Advance one zero-order-hold interval of length `dt` under `current`.
pub fn step(params: &EcmParams, state: &BatteryState, current: f64, dt: f64) -> BatteryState {
    let decay = (-dt / (params.r1 * params.c1)).exp();
    BatteryState {
        soc: state.soc - current * dt / params.capacity_q,
        vc: state.vc * decay + params.r1 * (1.0 - decay) * current,
    }
}

/// Result of driving the model with a current profile.
#[derive(Debug, Clone, PartialEq)]
pub struct Simulation {
    /// `states[k]` is the state at sample `k`; `states[0]` is the initial state.
    pub states: Vec<BatteryState>,
    /// Terminal voltage at each sample under that sample's current.
    pub voltage: TimeSeries,
    /// Set when any state leaves `soc` in `[0, 1]`.
    pub soc_violation: bool,
}

impl Simulation {
    pub fn final_state(&self) -> BatteryState {
        *self.states.last().expect("simulation has at least one state")
    }

    pub fn soc(&self) -> Vec<f64> {
        self.states.iter().map(|s| s.soc).collect()
    }
}

/// Drive the model with `current`. State `k + 1` follows from state `k`
/// under `current[k]` held for one sample interval, so the last sample's
/// current only enters the last voltage reading.
pub fn simulate(params: &EcmParams, x0: BatteryState, current: &TimeSeries) -> Result<Simulation> {
    let dt = current.dt();
    let decay = (-dt / (params.r1 * params.c1)).exp();
    let gain = params.r1 * (1.0 - decay);
    let mut states = Vec::with_capacity(current.len());
    let mut voltage = Vec::with_capacity(current.len());
    let mut x = x0;
    let mut violation = false;
    for (k, &i) in current.samples().iter().enumerate() {
        if k > 0 {
            x = BatteryState {
                soc: x.soc - current.samples()[k - 1] * dt / params.capacity_q,
                vc: x.vc * decay + gain * current.samples()[k - 1],
            };
        }
        violation |= !x.soc_in_range();
        states.push(x);
        voltage.push(terminal_voltage(params, &x, i));
    }
    if voltage.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("simulated voltage is not finite".into()));
    }
    Ok(Simulation {
        states,
        voltage: current.with_samples(voltage)?,
        soc_violation: violation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn linear_curve() -> OcvCurve {
        OcvCurve::from_points(&[(0.0, 3.0), (1.0, 4.2)]).unwrap()
    }

    fn linear_cell() -> EcmParams {
        let p = EcmParams::paper_cell();
        EcmParams::new(p.capacity_q, p.r0, p.r1, p.c1, linear_curve()).unwrap()
    }

    #[test]
    fn paper_cell_matrices() {
        let m = state_matrices(&EcmParams::paper_cell());
        // 1 / (1.028e-2 * 5.2584e3) = 1 / 54.056352
        assert_relative_eq!(m.a[(1, 1)], -0.018499, max_relative = 1e-4);
        assert_relative_eq!(m.b[0], -6.9823e-5, max_relative = 1e-4);
        assert_relative_eq!(m.b[1], 1.9017e-4, max_relative = 1e-4);
        assert_eq!(m.a[(0, 0)], 0.0);
        assert_eq!(m.a[(0, 1)], 0.0);
        assert_eq!(m.a[(1, 0)], 0.0);
    }

    #[test]
    fn unit_matrices() {
        let p = EcmParams::new(1.0, 0.1, 1.0, 1.0, linear_curve()).unwrap();
        let m = state_matrices(&p);
        assert_eq!(m.a[(1, 1)], -1.0);
        assert_eq!(m.b[0], -1.0);
    }

    #[test]
    fn ocv_interpolation_and_extrapolation() {
        assert_relative_eq!(linear_curve().eval(0.5), 3.6, epsilon = 1e-12);
        let c = OcvCurve::from_points(&[(0.0, 3.0), (0.5, 3.7), (1.0, 4.2)]).unwrap();
        assert_relative_eq!(c.eval(0.25), 3.35, epsilon = 1e-12);
        assert_relative_eq!(linear_curve().eval(1.1), 4.32, epsilon = 1e-12);
        assert_relative_eq!(linear_curve().eval(-0.1), 2.88, epsilon = 1e-12);
        assert_eq!(c.eval(0.5), 3.7);
        assert_eq!(c.eval(1.0), 4.2);
    }

    #[test]
    fn ocv_curve_validation() {
        assert!(OcvCurve::from_points(&[(0.0, 3.0)]).is_err());
        assert!(OcvCurve::from_points(&[(0.0, 3.0), (0.9, 4.0)]).is_err());
        assert!(OcvCurve::from_points(&[(0.0, 3.0), (0.5, 3.0), (1.0, 4.0)]).is_err());
        assert!(OcvCurve::from_points(&[(0.0, 3.0), (0.5, 3.5), (0.5, 3.6), (1.0, 4.0)]).is_err());
        assert!(OcvCurve::new(vec![0.0, 1.0], vec![3.0]).is_err());
    }

    #[test]
    fn params_validation() {
        let c = linear_curve();
        assert!(EcmParams::new(0.0, 0.01, 0.01, 1.0, c.clone()).is_err());
        assert!(EcmParams::new(1.0, -0.01, 0.01, 1.0, c.clone()).is_err());
        assert!(EcmParams::new(1.0, 0.01, f64::NAN, 1.0, c.clone()).is_err());
        assert!(EcmParams::new(1.0, 0.01, 0.01, f64::INFINITY, c).is_err());
    }

    #[test]
    fn terminal_voltage_examples() {
        let p = linear_cell();
        let x = BatteryState::new(0.5, 0.05).unwrap();
        assert_relative_eq!(terminal_voltage(&p, &x, 4.0), 3.495948, epsilon = 1e-9);
        assert_relative_eq!(terminal_voltage(&p, &x, -4.0), 3.604052, epsilon = 1e-9);
        let rest = BatteryState::new(0.3, 0.0).unwrap();
        assert_eq!(terminal_voltage(&p, &rest, 0.0), p.ocv.eval(0.3));
    }

    #[test]
    fn step_relaxation_without_current() {
        let p = EcmParams::paper_cell();
        let x = BatteryState::new(0.6, 0.02).unwrap();
        let y = step(&p, &x, 0.0, 5.0);
        assert_eq!(y.soc, 0.6);
        assert_relative_eq!(y.vc, 0.02 * (-5.0 / p.tau()).exp(), epsilon = 1e-15);
    }

    #[test]
    fn step_matches_fine_forward_euler() {
        let p = EcmParams::paper_cell();
        let x = BatteryState::new(0.5, 0.0).unwrap();
        let exact = step(&p, &x, 1.0, 1.0);
        // Forward Euler on vc' = -vc/(r1 c1) + I/c1 with 1e6 substeps.
        let n = 1_000_000;
        let h = 1.0 / n as f64;
        let mut vc = 0.0;
        for _ in 0..n {
            vc += h * (-vc / p.tau() + 1.0 / p.c1);
        }
        assert_relative_eq!(exact.vc, vc, max_relative = 1e-6);
        assert_relative_eq!(exact.vc, 1.8845e-4, max_relative = 2e-4);
    }

    #[test]
    fn constant_discharge_coulomb_count() {
        let p = EcmParams::paper_cell();
        let dt = 0.05;
        let n = (1074.15f64 / dt).round() as usize + 1;
        let i = TimeSeries::constant(0.0, dt, n, 4.0).unwrap();
        let sim = simulate(&p, BatteryState::new(0.8, 0.0).unwrap(), &i).unwrap();
        assert_relative_eq!(sim.final_state().soc, 0.5, epsilon = 1e-10);
        assert!(!sim.soc_violation);
    }

    #[test]
    fn zero_profile_gives_flat_ocv() {
        let p = EcmParams::paper_cell();
        let i = TimeSeries::constant(0.0, 1.0, 50, 0.0).unwrap();
        let sim = simulate(&p, BatteryState::new(0.42, 0.0).unwrap(), &i).unwrap();
        let v0 = p.ocv.eval(0.42);
        assert!(sim.voltage.samples().iter().all(|&v| v == v0));
    }

    #[test]
    fn zero_attack_identity() {
        let p = EcmParams::paper_cell();
        let u = crate::profiles::synthetic_profile(
            crate::profiles::ProfileKind::SinMix, 3.0, 1.0, 600.0, 1.0, 4,
        )
        .unwrap();
        let x0 = BatteryState::new(0.7, 0.0).unwrap();
        let a = simulate(&p, x0, &u).unwrap();
        let b = simulate(&p, x0, &u.add(&u.zeros_like()).unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn simulate_agrees_with_step() {
        let p = EcmParams::paper_cell();
        let u = TimeSeries::new(0.0, 2.0, vec![1.0, -3.0, 2.5, 0.0, 4.0]).unwrap();
        let x0 = BatteryState::new(0.5, 0.01).unwrap();
        let sim = simulate(&p, x0, &u).unwrap();
        let mut x = x0;
        for k in 0..u.len() {
            assert_eq!(sim.states[k], x);
            x = step(&p, &x, u.samples()[k], 2.0);
        }
    }

    #[test]
    fn violation_flag_raised_on_overshoot() {
        let p = EcmParams::paper_cell();
        let i = TimeSeries::constant(0.0, 10.0, 200, 10.0).unwrap();
        let sim = simulate(&p, BatteryState::new(0.5, 0.0).unwrap(), &i).unwrap();
        assert!(sim.soc_violation);
        assert!(sim.final_state().soc < 0.0);
    }

    #[test]
    fn params_json_schema() {
        let json = r#"{"capacity_As": 100.0, "r0_ohm": 0.01, "r1_ohm": 0.02,
                       "c1_farad": 500.0, "ocv": [[0.0, 3.0], [1.0, 4.0]]}"#;
        let p: EcmParams = serde_json::from_str(json).unwrap();
        assert_eq!(p.capacity_q, 100.0);
        assert_eq!(p.ocv.eval(0.5), 3.5);
        let back: EcmParams = serde_json::from_str(&p.to_json()).unwrap();
        assert_eq!(p, back);
        let bad = json.replace("0.01,", "-0.01,");
        assert!(serde_json::from_str::<EcmParams>(&bad).is_err());
    }

    proptest! {
        #[test]
        fn coulomb_exactness(
            currents in proptest::collection::vec(-20.0f64..20.0, 2..400),
            soc0 in 0.0f64..1.0,
            dt in 0.1f64..10.0,
        ) {
            let p = EcmParams::paper_cell();
            let i = TimeSeries::new(0.0, dt, currents.clone()).unwrap();
            let sim = simulate(&p, BatteryState::new(soc0, 0.0).unwrap(), &i).unwrap();
            let applied: f64 = currents[..currents.len() - 1].iter().sum();
            let expected = soc0 - dt / p.capacity_q * applied;
            let got = sim.final_state().soc;
            prop_assert!((got - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        }

        #[test]
        fn zoh_two_half_steps_equal_one_step(
            soc in 0.0f64..1.0, vc in -0.1f64..0.1, i in -20.0f64..20.0, dt in 0.01f64..100.0,
        ) {
            let p = EcmParams::paper_cell();
            let x = BatteryState { soc, vc };
            let twice = step(&p, &step(&p, &x, i, dt), i, dt);
            let once = step(&p, &x, i, 2.0 * dt);
            prop_assert!((twice.soc - once.soc).abs() <= 1e-12);
            prop_assert!((twice.vc - once.vc).abs() <= 1e-12);
        }

        #[test]
        fn output_map_locality_and_monotonicity(
            soc in -0.2f64..1.2, vc in -0.1f64..0.1, delta in -0.1f64..0.1,
            i in -10.0f64..10.0, dsoc in 1e-6f64..0.5,
        ) {
            let p = EcmParams::paper_cell();
            let base = terminal_voltage(&p, &BatteryState { soc, vc }, i);
            let shifted = terminal_voltage(&p, &BatteryState { soc, vc: vc + delta }, i);
            prop_assert!((shifted - base + delta).abs() <= 1e-12);
            let higher = terminal_voltage(&p, &BatteryState { soc: soc + dsoc, vc }, i);
            prop_assert!(higher > base);
        }
    }
}
