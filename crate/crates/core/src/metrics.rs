//! Stealth and impact metrics, and the output-attack gain sweep.

use serde::{Deserialize, Serialize};

use crate::ecm::{BatteryState, EcmParams};
use crate::error::{Error, Result};
use crate::profiles::TimeSeries;
use crate::stealth::{feedback_output_attack, PlantConfig};

/// Residuals closer than this are treated as equal when picking the best gain.
pub const ARGMIN_TIE_TOL: f64 = 1e-12;

/// Root-mean-square difference of two series on the same grid.
pub fn rms(a: &TimeSeries, b: &TimeSeries) -> Result<f64> {
    a.ensure_same_grid(b)?;
    let sum: f64 = a
        .samples()
        .iter()
        .zip(b.samples())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    Ok((sum / a.len() as f64).sqrt())
}

pub fn max_abs_diff(a: &TimeSeries, b: &TimeSeries) -> Result<f64> {
    a.ensure_same_grid(b)?;
    Ok(a.samples()
        .iter()
        .zip(b.samples())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max))
}

/// Headline numbers of one attack scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSummary {
    pub final_soc_nominal: f64,
    /// Final plant SoC under the input attack.
    pub final_soc_attacked: f64,
    /// Final SoC the adversary's own model predicted.
    pub final_soc_model_attacked: f64,
    pub residual_rms: f64,
    pub residual_max: f64,
    /// `Σ u_a² dt` over the applied intervals, A²·s.
    pub attack_energy: f64,
    pub i_max_violated: bool,
    pub soc_violation_nominal: bool,
    pub soc_violation_attacked: bool,
    pub k_a: f64,
    pub gain_warning: bool,
}

/// Everything the gain sweep needs; the input attack is fixed up front.
#[derive(Debug, Clone)]
pub struct SweepScenario {
    pub adv_params: EcmParams,
    pub plant: PlantConfig,
    pub x0: BatteryState,
    pub u_nom: TimeSeries,
    pub u_a: TimeSeries,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub k_a: f64,
    pub residual_rms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KaSweep {
    /// Sorted by `k_a`.
    pub rows: Vec<SweepRow>,
    pub argmin_k_a: f64,
    pub argmin_residual_rms: f64,
}

impl KaSweep {
    /// CSV with columns `k_a,residual_rms_V`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k_a,residual_rms_V\n");
        for row in &self.rows {
            out.push_str(&format!("{},{}\n", row.k_a, row.residual_rms));
        }
        out
    }

    pub fn residual_at(&self, k_a: f64) -> Option<f64> {
        self.rows.iter().find(|r| r.k_a == k_a).map(|r| r.residual_rms)
    }
}

/// Run the feedback output attack once per gain with the plant's seed and
/// report the residual RMS of each. Ties in the minimum go to the
/// smallest `|k_a|`, then to the smaller `k_a`.
pub fn sweep_ka(scenario: &SweepScenario, ka_values: &[f64]) -> Result<KaSweep> {
    if ka_values.is_empty() {
        return Err(Error::Config("k_a list is empty".into()));
    }
    let mut kas = ka_values.to_vec();
    if let Some(bad) = kas.iter().find(|k| !k.is_finite()) {
        return Err(Error::Config(format!("k_a must be finite, got {bad}")));
    }
    kas.sort_by(f64::total_cmp);

    let eval = |&k_a: &f64| -> Result<SweepRow> {
        let r = feedback_output_attack(
            &scenario.adv_params,
            &scenario.plant,
            scenario.x0,
            &scenario.u_nom,
            &scenario.u_a,
            k_a,
        )?;
        Ok(SweepRow {
            k_a,
            residual_rms: r.residual_rms,
        })
    };

    #[cfg(feature = "parallel")]
    let rows: Result<Vec<SweepRow>> = {
        use rayon::prelude::*;
        kas.par_iter().map(eval).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let rows: Result<Vec<SweepRow>> = kas.iter().map(eval).collect();
    let rows = rows?;

    let best = rows
        .iter()
        .copied()
        .reduce(|best, row| {
            let diff = row.residual_rms - best.residual_rms;
            let better = if diff.abs() <= ARGMIN_TIE_TOL {
                (row.k_a.abs(), row.k_a) < (best.k_a.abs(), best.k_a)
            } else {
                diff < 0.0
            };
            if better {
                row
            } else {
                best
            }
        })
        .expect("non-empty");

    Ok(KaSweep {
        rows,
        argmin_k_a: best.k_a,
        argmin_residual_rms: best.residual_rms,
    })
}
