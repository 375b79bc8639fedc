//! JSON scenario and fit configurations, and the end-to-end pipelines
//! behind the command-line front end.
//!
//! Relative paths inside a config file resolve against the directory that
//! contains the config file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attack::{synthesize_input_attack, AttackWeights, InputAttack, ReferenceShape, ReferenceTrajectory};
use crate::ecm::{simulate, BatteryState, EcmParams, Simulation};
use crate::error::{Error, Result};
use crate::metrics::{sweep_ka, KaSweep, ScenarioSummary, SweepScenario};
use crate::profiles::{load_csv, synthetic_profile, write_file, ProfileKind, TimeSeries};
use crate::stealth::{feedback_output_attack, PlantConfig, StealthResult};
use crate::sysid::{extract_ocv, fit_rc, FitParam, FitReport, Record};

/// Multiplicative changes applied to the adversary's parameters to obtain the plant.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamScale {
    pub capacity: Option<f64>,
    pub r0: Option<f64>,
    pub r1: Option<f64>,
    pub c1: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantSpec {
    /// Separate plant parameter file; defaults to the adversary's.
    pub params_file: Option<PathBuf>,
    #[serde(default)]
    pub scale: ParamScale,
    #[serde(default)]
    pub noise_std: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProfileSpec {
    Synthetic {
        kind: ProfileKind,
        #[serde(default)]
        amplitude: f64,
        bias: f64,
        duration: f64,
        #[serde(default)]
        seed: u64,
    },
    Csv {
        path: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialState {
    pub soc: f64,
    #[serde(default)]
    pub vc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSpec {
    pub soc_target: f64,
    pub shape: ReferenceShape,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsSpec {
    pub q1_diag: [f64; 2],
    pub q2_diag: [f64; 2],
    pub r: f64,
}

/// On-disk scenario description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub name: Option<String>,
    /// The adversary's model.
    pub params_file: PathBuf,
    #[serde(default)]
    pub plant: PlantSpec,
    pub profile: ProfileSpec,
    pub x0: InitialState,
    pub reference: ReferenceSpec,
    pub weights: WeightsSpec,
    pub k_a: f64,
    pub dt: f64,
    #[serde(default)]
    pub i_max: Option<f64>,
    pub output_dir: PathBuf,
    /// Gains used by the sweep command when none are given.
    #[serde(default)]
    pub sweep_ka: Option<Vec<f64>>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

fn base_dir(config_path: &Path) -> PathBuf {
    config_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn load_params(field: &str, path: &Path) -> Result<EcmParams> {
    if !path.exists() {
        return Err(Error::Config(format!("{field}: file {} does not exist", path.display())));
    }
    EcmParams::load(path)
}

fn scaled(p: &EcmParams, s: &ParamScale) -> Result<EcmParams> {
    let factor = |name: &str, f: Option<f64>| -> Result<f64> {
        match f {
            None => Ok(1.0),
            Some(v) if v.is_finite() && v > 0.0 => Ok(v),
            Some(v) => Err(Error::Config(format!("plant.scale.{name} must be positive, got {v}"))),
        }
    };
    EcmParams::new(
        p.capacity_q * factor("capacity", s.capacity)?,
        p.r0 * factor("r0", s.r0)?,
        p.r1 * factor("r1", s.r1)?,
        p.c1 * factor("c1", s.c1)?,
        p.ocv.clone(),
    )
}

/// A loaded, validated scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub adv_params: EcmParams,
    pub plant: PlantConfig,
    pub x0: BatteryState,
    pub u_nom: TimeSeries,
    pub reference: ReferenceTrajectory,
    pub weights: AttackWeights,
    pub k_a: f64,
    pub i_max: Option<f64>,
    pub output_dir: PathBuf,
    pub sweep_ka: Vec<f64>,
}

impl ScenarioConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, PathBuf)> {
        let path = path.as_ref();
        Ok((read_json(path)?, base_dir(path)))
    }

    /// Validate and load every referenced file.
    pub fn build(&self, base: &Path) -> Result<Scenario> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(0.0..=1.0).contains(&self.reference.soc_target) {
            return Err(Error::Config(format!(
                "reference.soc_target must lie in [0, 1], got {}",
                self.reference.soc_target
            )));
        }
        if !(0.0..=1.0).contains(&self.x0.soc) || !self.x0.vc.is_finite() {
            return Err(Error::Config(format!(
                "x0 must have soc in [0, 1] and finite vc, got ({}, {})",
                self.x0.soc, self.x0.vc
            )));
        }
        if !self.k_a.is_finite() {
            return Err(Error::Config(format!("k_a must be finite, got {}", self.k_a)));
        }
        if let Some(limit) = self.i_max {
            if !(limit.is_finite() && limit > 0.0) {
                return Err(Error::Config(format!("i_max must be positive, got {limit}")));
            }
        }

        let adv_params = load_params("params_file", &resolve(base, &self.params_file))?;
        let plant_base = match &self.plant.params_file {
            Some(p) => load_params("plant.params_file", &resolve(base, p))?,
            None => adv_params.clone(),
        };
        let plant = PlantConfig::new(scaled(&plant_base, &self.plant.scale)?, self.plant.noise_std, self.plant.seed)
            .map_err(|e| Error::Config(format!("plant: {e}")))?;

        let u_nom = match &self.profile {
            ProfileSpec::Synthetic {
                kind,
                amplitude,
                bias,
                duration,
                seed,
            } => synthetic_profile(*kind, *amplitude, *bias, *duration, self.dt, *seed)
                .map_err(|e| Error::Config(format!("profile: {e}")))?,
            ProfileSpec::Csv { path } => {
                let full = resolve(base, path);
                if !full.exists() {
                    return Err(Error::Config(format!("profile.csv.path: file {} does not exist", full.display())));
                }
                load_csv(&full, self.dt)?
            }
        };
        if u_nom.len() < 2 {
            return Err(Error::Config("profile must contain at least 2 samples".into()));
        }

        let x0 = BatteryState::new(self.x0.soc, self.x0.vc)?;
        let reference = ReferenceTrajectory::over(&u_nom, self.x0.soc, self.reference.soc_target, self.reference.shape)?;
        let weights = AttackWeights::from_diagonals(self.weights.q1_diag, self.weights.q2_diag, self.weights.r)
            .map_err(|e| Error::Config(format!("weights: {e}")))?;

        Ok(Scenario {
            name: self.name.clone().unwrap_or_else(|| "scenario".into()),
            adv_params,
            plant,
            x0,
            u_nom,
            reference,
            weights,
            k_a: self.k_a,
            i_max: self.i_max,
            output_dir: resolve(base, &self.output_dir),
            sweep_ka: self.sweep_ka.clone().unwrap_or_default(),
        })
    }
}

impl Scenario {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let (cfg, base) = ScenarioConfig::load(path)?;
        cfg.build(&base)
    }

    /// Replace the plant with the adversary's model and drop the noise.
    pub fn perfect_model(mut self) -> Self {
        self.plant = PlantConfig::perfect(&self.adv_params);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.plant.seed = seed;
        self
    }

    pub fn with_output_dir(mut self, dir: impl Into<PathBuf>) -> Self {
        self.output_dir = dir.into();
        self
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("summary serializes");
    text.push('\n');
    write_file(path, text.as_bytes())
}

/// Nominal simulation only.
pub fn run_nominal(s: &Scenario) -> Result<Simulation> {
    simulate(&s.adv_params, s.x0, &s.u_nom)
}

/// Writes `nominal.csv` with columns `t,i,soc,vc,v`.
pub fn write_nominal(s: &Scenario, sim: &Simulation) -> Result<PathBuf> {
    ensure_dir(&s.output_dir)?;
    let mut out = String::from("t,i,soc,vc,v\n");
    for (k, x) in sim.states.iter().enumerate() {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            s.u_nom.time(k),
            s.u_nom.samples()[k],
            x.soc,
            x.vc,
            sim.voltage.samples()[k]
        ));
    }
    let path = s.output_dir.join("nominal.csv");
    write_file(&path, out.as_bytes())?;
    Ok(path)
}

/// Pipeline stage at which a scenario failed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    InputAttack,
    OutputAttack,
    Artifacts,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::InputAttack => "input attack",
            Stage::OutputAttack => "output attack",
            Stage::Artifacts => "artifacts",
        })
    }
}

#[derive(Debug)]
pub struct StageError {
    pub stage: Stage,
    pub source: Error,
}

impl std::fmt::Display for StageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} stage: {}", self.stage, self.source)
    }
}

impl std::error::Error for StageError {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.source)
    }
}

fn at(stage: Stage) -> impl FnOnce(Error) -> StageError {
    move |source| StageError { stage, source }
}

/// Result of the full attack pipeline.
#[derive(Debug, Clone)]
pub struct AttackRun {
    pub input: InputAttack,
    pub stealth: StealthResult,
    pub summary: ScenarioSummary,
}

impl AttackRun {
    /// Rows of `attack.csv`.
    pub fn to_csv(&self, s: &Scenario) -> String {
        let mut out = String::from(
            "t,u_nom,u_a,i_applied,soc_nominal,soc_attacked,y_nom,y_plant,y_a,y_measured\n",
        );
        let st = &self.stealth;
        for k in 0..s.u_nom.len() {
            let (un, ua) = (s.u_nom.samples()[k], self.input.u_a.samples()[k]);
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                s.u_nom.time(k),
                un,
                ua,
                un + ua,
                st.nominal_states[k].soc,
                st.plant_states[k].soc,
                st.y_nom.samples()[k],
                st.y_plant.samples()[k],
                st.y_a.samples()[k],
                st.y_measured.samples()[k],
            ));
        }
        out
    }
}

/// Input attack, plant run and output masking for one scenario.
pub fn run_attack(s: &Scenario) -> std::result::Result<AttackRun, StageError> {
    let input = synthesize_input_attack(&s.adv_params, &s.weights, &s.reference, &s.u_nom, s.x0, s.i_max)
        .map_err(at(Stage::InputAttack))?;
    let stealth = feedback_output_attack(&s.adv_params, &s.plant, s.x0, &s.u_nom, &input.u_a, s.k_a)
        .map_err(at(Stage::OutputAttack))?;
    let summary = ScenarioSummary {
        final_soc_nominal: stealth.final_soc_nominal(),
        final_soc_attacked: stealth.final_soc_plant(),
        final_soc_model_attacked: input.final_state().soc,
        residual_rms: stealth.residual_rms,
        residual_max: stealth.max_residual,
        attack_energy: input.energy(),
        i_max_violated: input.i_max_violated,
        soc_violation_nominal: stealth.soc_violation_nominal,
        soc_violation_attacked: stealth.soc_violation_plant,
        k_a: s.k_a,
        gain_warning: stealth.gain_warning,
    };
    Ok(AttackRun {
        input,
        stealth,
        summary,
    })
}

/// Writes `attack.csv`, `riccati.csv` and `summary.json`.
pub fn write_attack(s: &Scenario, run: &AttackRun) -> std::result::Result<Vec<PathBuf>, StageError> {
    let go = || -> Result<Vec<PathBuf>> {
        ensure_dir(&s.output_dir)?;
        let attack = s.output_dir.join("attack.csv");
        write_file(&attack, run.to_csv(s).as_bytes())?;
        let riccati = s.output_dir.join("riccati.csv");
        run.input.riccati.write_csv(&riccati)?;
        let summary = s.output_dir.join("summary.json");
        write_json(&summary, &run.summary)?;
        Ok(vec![attack, riccati, summary])
    };
    go().map_err(at(Stage::Artifacts))
}

/// Gain sweep on the scenario's input attack.
pub fn run_sweep(s: &Scenario, ka_values: &[f64]) -> std::result::Result<KaSweep, StageError> {
    if ka_values.is_empty() {
        return Err(StageError {
            stage: Stage::OutputAttack,
            source: Error::Config("k_a list is empty".into()),
        });
    }
    let input = synthesize_input_attack(&s.adv_params, &s.weights, &s.reference, &s.u_nom, s.x0, s.i_max)
        .map_err(at(Stage::InputAttack))?;
    let scenario = SweepScenario {
        adv_params: s.adv_params.clone(),
        plant: s.plant.clone(),
        x0: s.x0,
        u_nom: s.u_nom.clone(),
        u_a: input.u_a,
    };
    sweep_ka(&scenario, ka_values).map_err(at(Stage::OutputAttack))
}

/// Writes `sweep.csv` and `sweep.json`.
pub fn write_sweep(s: &Scenario, sweep: &KaSweep) -> Result<Vec<PathBuf>> {
    ensure_dir(&s.output_dir)?;
    let csv = s.output_dir.join("sweep.csv");
    write_file(&csv, sweep.to_csv().as_bytes())?;
    let json = s.output_dir.join("sweep.json");
    write_json(&json, sweep)?;
    Ok(vec![csv, json])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeriesPair {
    pub current_csv: PathBuf,
    pub voltage_csv: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OcvSpec {
    pub charge: SeriesPair,
    pub discharge: SeriesPair,
    pub n_breakpoints: usize,
    #[serde(default)]
    pub r0_guess: Option<f64>,
}

/// On-disk description of an identification run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitConfig {
    /// Starting point; its OCV curve is replaced when `ocv` is given.
    pub initial_params_file: PathBuf,
    pub dt: f64,
    #[serde(default)]
    pub ocv: Option<OcvSpec>,
    /// Dynamic-profile record for the RC fit.
    pub data: SeriesPair,
    pub x0: InitialState,
    #[serde(default)]
    pub frozen: Vec<FitParam>,
    pub output_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOutcome {
    pub report: FitReport,
    /// Present when the OCV curve was extracted in this run.
    pub ocv_covered: Option<(f64, f64)>,
    pub ocv_overpotential: Option<f64>,
    pub high_current_warning: bool,
}

fn load_pair(base: &Path, field: &str, pair: &SeriesPair, dt: f64) -> Result<(TimeSeries, TimeSeries)> {
    let load = |name: &str, p: &Path| -> Result<TimeSeries> {
        let full = resolve(base, p);
        if !full.exists() {
            return Err(Error::Config(format!("{field}.{name}: file {} does not exist", full.display())));
        }
        load_csv(full, dt)
    };
    let i = load("current_csv", &pair.current_csv)?;
    let v = load("voltage_csv", &pair.voltage_csv)?;
    i.ensure_same_grid(&v)?;
    Ok((i, v))
}

impl FitConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<(Self, PathBuf)> {
        let path = path.as_ref();
        Ok((read_json(path)?, base_dir(path)))
    }

    pub fn output_dir(&self, base: &Path) -> PathBuf {
        resolve(base, &self.output_dir)
    }

    /// Extract the OCV (when configured), then fit the RC parameters.
    pub fn run(&self, base: &Path) -> Result<FitOutcome> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        let mut initial = load_params("initial_params_file", &resolve(base, &self.initial_params_file))?;
        let mut outcome_ocv = None;
        if let Some(ocv_cfg) = &self.ocv {
            let (ci, cv) = load_pair(base, "ocv.charge", &ocv_cfg.charge, self.dt)?;
            let (di, dv) = load_pair(base, "ocv.discharge", &ocv_cfg.discharge, self.dt)?;
            let ext = extract_ocv(
                Record::new(&ci, &cv)?,
                Record::new(&di, &dv)?,
                initial.capacity_q,
                ocv_cfg.n_breakpoints,
                ocv_cfg.r0_guess,
            )?;
            initial.ocv = ext.curve.clone();
            outcome_ocv = Some(ext);
        }
        let (i, v) = load_pair(base, "data", &self.data, self.dt)?;
        let x0 = BatteryState::new(self.x0.soc, self.x0.vc)?;
        let report = fit_rc(&initial, Record::new(&i, &v)?, x0, &self.frozen)?;
        Ok(FitOutcome {
            report,
            ocv_covered: outcome_ocv.as_ref().map(|e| e.covered),
            ocv_overpotential: outcome_ocv.as_ref().map(|e| e.overpotential),
            high_current_warning: outcome_ocv.is_some_and(|e| e.high_current_warning),
        })
    }
}

/// Writes `fitted_params.json` and `fit_report.json`.
pub fn write_fit(dir: &Path, outcome: &FitOutcome) -> Result<Vec<PathBuf>> {
    ensure_dir(dir)?;
    let params = dir.join("fitted_params.json");
    outcome.report.fitted.save(&params)?;
    let report = dir.join("fit_report.json");
    write_json(&report, outcome)?;
    Ok(vec![params, report])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    fn params_json() -> String {
        EcmParams::paper_cell().to_json()
    }

    fn config_json(extra: &str) -> String {
        format!(
            r#"{{
  "name": "t",
  "params_file": "cell.json",
  "profile": {{"synthetic": {{"kind": "sin_mix", "amplitude": 1.0, "bias": 2.387, "duration": 600, "seed": 1}}}},
  "x0": {{"soc": 0.8}},
  "reference": {{"soc_target": 0.2, "shape": "linear_ramp"}},
  "weights": {{"q1_diag": [1e7, 0], "q2_diag": [1e4, 0], "r": 1}},
  "k_a": -0.05,
  "dt": 1.0,
  "output_dir": "out"{extra}
}}"#
        )
    }

    #[test]
    fn loads_and_resolves_relative_paths() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "cell.json", &params_json());
        let cfg = write(dir.path(), "s.json", &config_json(""));
        let s = Scenario::from_file(&cfg).unwrap();
        assert_eq!(s.u_nom.len(), 601);
        assert_eq!(s.output_dir, dir.path().join("out"));
        assert_eq!(s.plant.true_params, s.adv_params);
    }

    #[test]
    fn plant_scale_applies() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "cell.json", &params_json());
        let cfg = write(
            dir.path(),
            "s.json",
            &config_json(r#", "plant": {"scale": {"r0": 1.2}, "noise_std": 0.005, "seed": 4}"#),
        );
        let s = Scenario::from_file(&cfg).unwrap();
        assert!((s.plant.true_params.r0 - 1.2 * s.adv_params.r0).abs() < 1e-15);
        assert_eq!(s.plant.seed, 4);
    }

    #[test]
    fn missing_params_file_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write(dir.path(), "s.json", &config_json(""));
        let err = Scenario::from_file(&cfg).unwrap_err().to_string();
        assert!(err.contains("cell.json"), "{err}");
    }

    #[test]
    fn invalid_fields_are_named() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "cell.json", &params_json());
        let bad_dt = config_json("").replace("\"dt\": 1.0", "\"dt\": -1.0");
        let err = Scenario::from_file(write(dir.path(), "a.json", &bad_dt)).unwrap_err().to_string();
        assert!(err.contains("dt"), "{err}");
        let bad_target = config_json("").replace("\"soc_target\": 0.2", "\"soc_target\": 1.2");
        let err = Scenario::from_file(write(dir.path(), "b.json", &bad_target)).unwrap_err().to_string();
        assert!(err.contains("soc_target"), "{err}");
        let bad_r = config_json("").replace("\"r\": 1", "\"r\": 0");
        let err = Scenario::from_file(write(dir.path(), "c.json", &bad_r)).unwrap_err().to_string();
        assert!(err.contains("weights"), "{err}");
        let unknown = config_json(", \"bogus\": 1");
        assert!(Scenario::from_file(write(dir.path(), "d.json", &unknown)).is_err());
    }

    #[test]
    fn attack_pipeline_writes_artifacts() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "cell.json", &params_json());
        let s = Scenario::from_file(write(dir.path(), "s.json", &config_json(""))).unwrap();
        let run = run_attack(&s).unwrap();
        let files = write_attack(&s, &run).unwrap();
        assert_eq!(files.len(), 3);
        let csv = std::fs::read_to_string(&files[0]).unwrap();
        assert!(csv.starts_with("t,u_nom,u_a,i_applied,soc_nominal,soc_attacked,y_nom,y_plant,y_a,y_measured\n"));
        assert_eq!(csv.lines().count(), s.u_nom.len() + 1);
        let summary: ScenarioSummary =
            serde_json::from_str(&std::fs::read_to_string(&files[2]).unwrap()).unwrap();
        assert_eq!(summary, run.summary);
        assert!(summary.residual_rms <= 1e-9);
    }
}
