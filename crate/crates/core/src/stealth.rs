//! Output-voltage attack that hides the input attack from the BMS.
//!
//! The open-loop attack is the model-predicted voltage difference between
//! the nominal and the attacked trajectory. The feedback variant adds
//! `k_a * (Y - y_nom)`, where `Y` is the measurement as the BMS receives it
//! (plant voltage plus the attack itself). Because the attack appears on
//! both sides, each sample is solved in closed form:
//!
//! ```text
//! y_a = [(y_nom - y_model) + k_a (y_plant - y_nom)] / (1 - k_a)
//! ```
//!
//! which leaves a residual `(y_plant - y_model) / (1 - k_a)`: any model
//! error is scaled by `1 / (1 - k_a)` and a perfect model is masked
//! exactly for every gain.

use std::path::Path;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::ecm::{simulate, BatteryState, EcmParams};
use crate::error::{Error, Result};
use crate::metrics;
use crate::profiles::TimeSeries;

/// The physical cell the attack actually runs against.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantConfig {
    pub true_params: EcmParams,
    /// Standard deviation of additive white voltage-sensor noise, volts.
    pub noise_std: f64,
    pub seed: u64,
}

impl PlantConfig {
    pub fn new(true_params: EcmParams, noise_std: f64, seed: u64) -> Result<Self> {
        if !(noise_std.is_finite() && noise_std >= 0.0) {
            return Err(Error::Config(format!("noise_std must be >= 0, got {noise_std}")));
        }
        Ok(Self {
            true_params,
            noise_std,
            seed,
        })
    }

    /// Plant identical to the adversary's model, without noise.
    pub fn perfect(params: &EcmParams) -> Self {
        Self {
            true_params: params.clone(),
            noise_std: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StealthResult {
    pub k_a: f64,
    /// Adversary-model output under the user's current only.
    pub y_nom: TimeSeries,
    /// Sensed plant voltage under the input attack, before masking.
    pub y_plant: TimeSeries,
    /// Injected output attack.
    pub y_a: TimeSeries,
    /// What the BMS sees: `y_plant + y_a`.
    pub y_measured: TimeSeries,
    pub residual_rms: f64,
    pub max_residual: f64,
    pub plant_states: Vec<BatteryState>,
    pub nominal_states: Vec<BatteryState>,
    pub soc_violation_plant: bool,
    pub soc_violation_nominal: bool,
    /// `|k_a| >= 1`: the correction amplifies model error and noise.
    pub gain_warning: bool,
}

/// Compact JSON summary of a [`StealthResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StealthSummary {
    pub k_a: f64,
    pub residual_rms: f64,
    pub max_residual: f64,
    pub final_soc_plant: f64,
    pub final_soc_nominal: f64,
    pub soc_violation_plant: bool,
    pub soc_violation_nominal: bool,
    pub gain_warning: bool,
}

impl StealthResult {
    pub fn final_soc_plant(&self) -> f64 {
        self.plant_states.last().expect("non-empty").soc
    }

    pub fn final_soc_nominal(&self) -> f64 {
        self.nominal_states.last().expect("non-empty").soc
    }

    pub fn summary(&self) -> StealthSummary {
        StealthSummary {
            k_a: self.k_a,
            residual_rms: self.residual_rms,
            max_residual: self.max_residual,
            final_soc_plant: self.final_soc_plant(),
            final_soc_nominal: self.final_soc_nominal(),
            soc_violation_plant: self.soc_violation_plant,
            soc_violation_nominal: self.soc_violation_nominal,
            gain_warning: self.gain_warning,
        }
    }

    /// CSV with columns `t,y_nom,y_plant,y_a,y_measured`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,y_nom,y_plant,y_a,y_measured\n");
        for k in 0..self.y_nom.len() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.y_nom.time(k),
                self.y_nom.samples()[k],
                self.y_plant.samples()[k],
                self.y_a.samples()[k],
                self.y_measured.samples()[k]
            ));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        crate::profiles::write_file(path.as_ref(), self.to_csv().as_bytes())
    }
}

/// `g(X_nom, U_nom)` from the adversary's model.
pub fn nominal_model_output(adv_params: &EcmParams, x0: BatteryState, u_nom: &TimeSeries) -> Result<TimeSeries> {
    Ok(simulate(adv_params, x0, u_nom)?.voltage)
}

/// `g(X_nom, U_nom) - g(X, U_nom + U_a)`, both from the adversary's model.
pub fn open_loop_output_attack(
    adv_params: &EcmParams,
    x0: BatteryState,
    u_nom: &TimeSeries,
    u_a: &TimeSeries,
) -> Result<TimeSeries> {
    let applied = u_nom.add(u_a)?;
    let y_nom = nominal_model_output(adv_params, x0, u_nom)?;
    let y_att = simulate(adv_params, x0, &applied)?.voltage;
    y_nom.sub(&y_att)
}

/// Run the plant under `u_nom + u_a` and mask its voltage with the
/// feedback-corrected output attack.
pub fn feedback_output_attack(
    adv_params: &EcmParams,
    plant: &PlantConfig,
    x0: BatteryState,
    u_nom: &TimeSeries,
    u_a: &TimeSeries,
    k_a: f64,
) -> Result<StealthResult> {
    if !k_a.is_finite() {
        return Err(Error::Config(format!("k_a must be finite, got {k_a}")));
    }
    let denom = 1.0 - k_a;
    if denom == 0.0 {
        return Err(Error::Config("k_a = 1 leaves the output attack undefined".into()));
    }
    let applied = u_nom.add(u_a)?;

    let nominal = simulate(adv_params, x0, u_nom)?;
    let model_attacked = simulate(adv_params, x0, &applied)?;
    let plant_run = simulate(&plant.true_params, x0, &applied)?;

    let y_nom = nominal.voltage;
    let mut y_plant = plant_run.voltage.into_samples();
    if plant.noise_std > 0.0 {
        let normal = Normal::new(0.0, plant.noise_std)
            .map_err(|e| Error::Config(format!("noise_std: {e}")))?;
        let mut rng = ChaCha8Rng::seed_from_u64(plant.seed);
        for y in &mut y_plant {
            *y += normal.sample(&mut rng);
        }
    }

    let mut y_a = Vec::with_capacity(y_nom.len());
    let mut y_measured = Vec::with_capacity(y_nom.len());
    for ((&nom, &model), &plant_v) in y_nom.samples().iter().zip(model_attacked.voltage.samples()).zip(&y_plant) {
        let a = ((nom - model) + k_a * (plant_v - nom)) / denom;
        y_a.push(a);
        y_measured.push(plant_v + a);
    }

    let y_plant = y_nom.with_samples(y_plant)?;
    let y_a = y_nom.with_samples(y_a)?;
    let y_measured = y_nom.with_samples(y_measured)?;
    let residual_rms = metrics::rms(&y_measured, &y_nom)?;
    let max_residual = metrics::max_abs_diff(&y_measured, &y_nom)?;

    Ok(StealthResult {
        k_a,
        y_nom,
        y_plant,
        y_a,
        y_measured,
        residual_rms,
        max_residual,
        plant_states: plant_run.states,
        nominal_states: nominal.states,
        soc_violation_plant: plant_run.soc_violation,
        soc_violation_nominal: nominal.soc_violation,
        gain_warning: k_a.abs() >= 1.0,
    })
}
