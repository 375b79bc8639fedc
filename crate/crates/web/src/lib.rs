//! Browser demo: runs attack scenarios on the built-in cell and returns
//! JSON for the page to plot.
//!
//! Each export takes a JSON options object (missing fields fall back to
//! defaults) and returns a JSON string, or throws a string on bad input.

use ecm_attack::{
    feedback_output_attack, synthesize_input_attack, synthetic_profile, sweep_ka, AttackWeights, BatteryState,
    EcmParams, PlantConfig, ProfileKind, ReferenceShape, ReferenceTrajectory, SweepScenario, TimeSeries,
};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DemoOptions {
    pub profile: ProfileKind,
    pub amplitude: f64,
    pub duration: f64,
    pub seed: u64,
    pub soc_start: f64,
    /// Where the user's own profile would leave the cell.
    pub soc_user_end: f64,
    pub soc_target: f64,
    pub q1_soc: f64,
    pub q2_soc: f64,
    pub r: f64,
    pub k_a: f64,
    /// Plant r0 relative to the adversary's model.
    pub r0_scale: f64,
    pub noise_std: f64,
    pub ka_values: Vec<f64>,
}

impl Default for DemoOptions {
    fn default() -> Self {
        let w = AttackWeights::scenario_default();
        Self {
            profile: ProfileKind::SinMix,
            amplitude: 6.0,
            duration: 3600.0,
            seed: 1,
            soc_start: 0.8,
            soc_user_end: 0.5,
            soc_target: 0.2,
            q1_soc: w.q1[(0, 0)],
            q2_soc: w.q2[(0, 0)],
            r: w.r,
            k_a: -0.05,
            r0_scale: 1.2,
            noise_std: 0.005,
            ka_values: vec![-0.1, -0.05, 0.0, 0.05, 0.1],
        }
    }
}

struct Setup {
    adv: EcmParams,
    plant: PlantConfig,
    x0: BatteryState,
    u_nom: TimeSeries,
    reference: ReferenceTrajectory,
    weights: AttackWeights,
}

const DT: f64 = 1.0;
const MAX_DURATION: f64 = 4.0 * 3600.0;

fn setup(opts_json: &str) -> Result<(DemoOptions, Setup), String> {
    let o: DemoOptions = if opts_json.trim().is_empty() {
        DemoOptions::default()
    } else {
        serde_json::from_str(opts_json).map_err(|e| format!("options: {e}"))?
    };
    if !(o.duration > DT && o.duration <= MAX_DURATION) {
        return Err(format!("duration must lie in ({DT}, {MAX_DURATION}] s"));
    }
    let adv = EcmParams::paper_cell();
    let bias = (o.soc_start - o.soc_user_end) * adv.capacity_q / o.duration;
    let u_nom = synthetic_profile(o.profile, o.amplitude, bias, o.duration, DT, o.seed).map_err(|e| e.to_string())?;
    let plant_params = EcmParams::new(adv.capacity_q, adv.r0 * o.r0_scale, adv.r1, adv.c1, adv.ocv.clone())
        .map_err(|e| e.to_string())?;
    let plant = PlantConfig::new(plant_params, o.noise_std, o.seed).map_err(|e| e.to_string())?;
    let x0 = BatteryState::new(o.soc_start, 0.0).map_err(|e| e.to_string())?;
    let reference = ReferenceTrajectory::over(&u_nom, o.soc_start, o.soc_target, ReferenceShape::LinearRamp)
        .map_err(|e| e.to_string())?;
    let weights = AttackWeights::from_diagonals([o.q1_soc, 0.0], [o.q2_soc, 0.0], o.r).map_err(|e| e.to_string())?;
    Ok((
        o,
        Setup {
            adv,
            plant,
            x0,
            u_nom,
            reference,
            weights,
        },
    ))
}

#[derive(Serialize)]
struct AttackSeries {
    t: Vec<f64>,
    u_nom: Vec<f64>,
    u_a: Vec<f64>,
    soc_nominal: Vec<f64>,
    soc_attacked: Vec<f64>,
    y_nom: Vec<f64>,
    y_plant: Vec<f64>,
    y_measured: Vec<f64>,
    final_soc_nominal: f64,
    final_soc_attacked: f64,
    residual_rms: f64,
    attack_energy: f64,
}

pub fn attack_json(opts_json: &str) -> Result<String, String> {
    let (o, s) = setup(opts_json)?;
    let atk = synthesize_input_attack(&s.adv, &s.weights, &s.reference, &s.u_nom, s.x0, None).map_err(|e| e.to_string())?;
    let st = feedback_output_attack(&s.adv, &s.plant, s.x0, &s.u_nom, &atk.u_a, o.k_a).map_err(|e| e.to_string())?;
    let out = AttackSeries {
        t: s.u_nom.times().collect(),
        u_nom: s.u_nom.samples().to_vec(),
        u_a: atk.u_a.samples().to_vec(),
        soc_nominal: st.nominal_states.iter().map(|x| x.soc).collect(),
        soc_attacked: st.plant_states.iter().map(|x| x.soc).collect(),
        y_nom: st.y_nom.samples().to_vec(),
        y_plant: st.y_plant.samples().to_vec(),
        y_measured: st.y_measured.samples().to_vec(),
        final_soc_nominal: st.final_soc_nominal(),
        final_soc_attacked: st.final_soc_plant(),
        residual_rms: st.residual_rms,
        attack_energy: atk.energy(),
    };
    Ok(serde_json::to_string(&out).expect("serializable"))
}

pub fn sweep_json(opts_json: &str) -> Result<String, String> {
    let (o, s) = setup(opts_json)?;
    let atk = synthesize_input_attack(&s.adv, &s.weights, &s.reference, &s.u_nom, s.x0, None).map_err(|e| e.to_string())?;
    let scenario = SweepScenario {
        adv_params: s.adv,
        plant: s.plant,
        x0: s.x0,
        u_nom: s.u_nom,
        u_a: atk.u_a,
    };
    let table = sweep_ka(&scenario, &o.ka_values).map_err(|e| e.to_string())?;
    Ok(serde_json::to_string(&table).expect("serializable"))
}

#[derive(Serialize)]
struct RiccatiCurves {
    t: Vec<f64>,
    s11: Vec<f64>,
    v1: Vec<f64>,
    /// SoC at which the attack current vanishes, `v1 / s11`, when `s11 > 0`.
    soc_equilibrium: Vec<Option<f64>>,
}

pub fn riccati_json(opts_json: &str) -> Result<String, String> {
    let (_, s) = setup(opts_json)?;
    let sol = ecm_attack::solve_riccati(&s.adv, &s.weights, &s.reference, &s.u_nom).map_err(|e| e.to_string())?;
    let out = RiccatiCurves {
        t: s.u_nom.times().collect(),
        s11: sol.s.iter().map(|m| m[(0, 0)]).collect(),
        v1: sol.v.iter().map(|v| v[0]).collect(),
        soc_equilibrium: sol
            .s
            .iter()
            .zip(&sol.v)
            .map(|(m, v)| (m[(0, 0)] > 0.0).then(|| v[0] / m[(0, 0)]))
            .collect(),
    };
    Ok(serde_json::to_string(&out).expect("serializable"))
}

/// Input attack plus feedback-masked output for the given options.
#[wasm_bindgen]
pub fn run_attack(opts_json: &str) -> Result<String, JsValue> {
    attack_json(opts_json).map_err(|e| JsValue::from_str(&e))
}

/// Residual RMS for each gain in `ka_values`.
#[wasm_bindgen]
pub fn run_sweep(opts_json: &str) -> Result<String, JsValue> {
    sweep_json(opts_json).map_err(|e| JsValue::from_str(&e))
}

/// Riccati solution along the horizon.
#[wasm_bindgen]
pub fn run_riccati(opts_json: &str) -> Result<String, JsValue> {
    riccati_json(opts_json).map_err(|e| JsValue::from_str(&e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn defaults_reach_the_target() {
        let v: Value = serde_json::from_str(&attack_json("").unwrap()).unwrap();
        assert!((v["final_soc_attacked"].as_f64().unwrap() - 0.2).abs() < 0.02);
        assert!((v["final_soc_nominal"].as_f64().unwrap() - 0.5).abs() < 0.005);
        assert_eq!(v["t"].as_array().unwrap().len(), 3601);
    }

    #[test]
    fn perfect_plant_is_fully_masked() {
        let v: Value = serde_json::from_str(&attack_json(r#"{"r0_scale": 1.0, "noise_std": 0.0, "duration": 600}"#).unwrap()).unwrap();
        assert!(v["residual_rms"].as_f64().unwrap() <= 1e-9);
    }

    #[test]
    fn sweep_finds_negative_gain() {
        let v: Value = serde_json::from_str(&sweep_json(r#"{"duration": 1800}"#).unwrap()).unwrap();
        assert!(v["argmin_k_a"].as_f64().unwrap() < 0.0);
    }

    #[test]
    fn riccati_ends_at_terminal_weight() {
        let v: Value = serde_json::from_str(&riccati_json(r#"{"duration": 600}"#).unwrap()).unwrap();
        let s11 = v["s11"].as_array().unwrap();
        assert_eq!(s11.last().unwrap().as_f64().unwrap(), 1e7);
    }

    #[test]
    fn bad_options_are_reported() {
        assert!(attack_json(r#"{"bogus": 1}"#).unwrap_err().contains("options"));
        assert!(attack_json(r#"{"duration": -5}"#).unwrap_err().contains("duration"));
        assert!(sweep_json(r#"{"ka_values": []}"#).is_err());
        assert!(attack_json(r#"{"r": 0}"#).is_err());
    }
}
