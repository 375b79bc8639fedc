//! Parameter identification from logged current/voltage data.
//!
//! OCV comes from a pair of low-rate sweeps: a discharge from full and a
//! charge from empty. At matched SoC the two terminal voltages sit roughly
//! symmetric around the OCV, so their mean cancels the IR and polarization
//! drop to first order. RC parameters are then fitted by minimising the
//! voltage RMSE of a simulation with a derivative-free search in log space.

use serde::{Deserialize, Serialize};

use crate::ecm::{simulate, BatteryState, EcmParams, OcvCurve};
use crate::error::{Error, Result};
use crate::profiles::TimeSeries;

/// Minimum SoC span a sweep has to cover.
pub const MIN_SOC_SPAN: f64 = 0.9;
/// Smallest voltage step between consecutive breakpoints.
pub const MIN_OCV_SLOPE_STEP: f64 = 1e-6;
/// SoC distance from a sweep's starting point treated as start-up transient.
const START_GUARD: f64 = 0.02;
const FINE_GRID: usize = 2000;
const IR_WARNING_V: f64 = 0.010;

/// Current and voltage of one logged experiment, sharing a grid.
#[derive(Debug, Clone, Copy)]
pub struct Record<'a> {
    pub current: &'a TimeSeries,
    pub voltage: &'a TimeSeries,
}

impl<'a> Record<'a> {
    pub fn new(current: &'a TimeSeries, voltage: &'a TimeSeries) -> Result<Self> {
        current.ensure_same_grid(voltage)?;
        Ok(Self { current, voltage })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OcvExtraction {
    pub curve: OcvCurve,
    /// SoC interval covered by both sweeps.
    pub covered: (f64, f64),
    /// Half the charge/discharge voltage gap away from the sweep starts.
    pub overpotential: f64,
    /// The sweep current times the supplied `r0` guess exceeded 10 mV.
    pub high_current_warning: bool,
}

/// SoC-ordered samples of one sweep.
struct SweepCurve {
    soc: Vec<f64>,
    volts: Vec<f64>,
    start_soc: f64,
}

impl SweepCurve {
    fn from_record(rec: Record<'_>, capacity_q: f64, start_soc: f64, discharge: bool, label: &str) -> Result<Self> {
        let dt = rec.current.dt();
        let currents = rec.current.samples();
        let mut soc = Vec::with_capacity(currents.len());
        soc.push(start_soc);
        for (k, &i) in currents[..currents.len() - 1].iter().enumerate() {
            if (discharge && i < 0.0) || (!discharge && i > 0.0) {
                return Err(Error::OcvExtraction(format!(
                    "{label} sweep: coulomb-counted SoC is not monotone (current {i} A at t = {})",
                    rec.current.time(k)
                )));
            }
            soc.push(soc[k] - i * dt / capacity_q);
        }
        let span = (soc[soc.len() - 1] - start_soc).abs();
        if span < MIN_SOC_SPAN {
            return Err(Error::OcvExtraction(format!(
                "{label} sweep covers only {span:.3} of SoC (need {MIN_SOC_SPAN})"
            )));
        }

        // Ascending in SoC; of samples with equal SoC keep the latest.
        let mut pairs: Vec<(f64, f64)> = soc.into_iter().zip(rec.voltage.samples().iter().copied()).collect();
        pairs.reverse();
        pairs.dedup_by(|a, b| a.0 == b.0);
        if !discharge {
            pairs.reverse();
        }
        Ok(Self {
            soc: pairs.iter().map(|p| p.0).collect(),
            volts: pairs.iter().map(|p| p.1).collect(),
            start_soc,
        })
    }

    fn span(&self) -> (f64, f64) {
        (self.soc[0], self.soc[self.soc.len() - 1])
    }

    fn eval(&self, s: f64) -> f64 {
        interp(&self.soc, &self.volts, s)
    }
}

/// Linear interpolation on ascending `xs`, clamped at the ends.
fn interp(xs: &[f64], ys: &[f64], x: f64) -> f64 {
    let n = xs.len();
    if x <= xs[0] {
        return ys[0];
    }
    if x >= xs[n - 1] {
        return ys[n - 1];
    }
    let j = xs.partition_point(|&v| v <= x) - 1;
    let (x0, x1) = (xs[j], xs[j + 1]);
    ys[j] + (x - x0) / (x1 - x0) * (ys[j + 1] - ys[j])
}

/// Pool-adjacent-violators projection onto non-decreasing sequences.
pub fn isotonic_increasing(values: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::with_capacity(values.len());
    for &v in values {
        let mut mean = v;
        let mut count = 1usize;
        while let Some(&(prev_mean, prev_count)) = blocks.last() {
            if prev_mean <= mean {
                break;
            }
            blocks.pop();
            mean = (prev_mean * prev_count as f64 + mean * count as f64) / (prev_count + count) as f64;
            count += prev_count;
        }
        blocks.push((mean, count));
    }
    blocks
        .into_iter()
        .flat_map(|(m, c)| std::iter::repeat_n(m, c))
        .collect()
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}

/// Recover an OCV curve with `n_breakpoints` uniformly spaced in SoC.
///
/// The discharge sweep is assumed to start full (SoC 1) and the charge
/// sweep empty (SoC 0). Near each sweep's start, where the RC branch is
/// still charging up, the other sweep is used alone, shifted by the
/// overpotential estimated elsewhere.
pub fn extract_ocv(
    charge: Record<'_>,
    discharge: Record<'_>,
    capacity_q: f64,
    n_breakpoints: usize,
    r0_guess: Option<f64>,
) -> Result<OcvExtraction> {
    if !(capacity_q.is_finite() && capacity_q > 0.0) {
        return Err(Error::InvalidParams(format!("capacity must be positive, got {capacity_q}")));
    }
    if n_breakpoints < 2 {
        return Err(Error::OcvExtraction("need at least 2 breakpoints".into()));
    }
    let chg = SweepCurve::from_record(charge, capacity_q, 0.0, false, "charge")?;
    let dis = SweepCurve::from_record(discharge, capacity_q, 1.0, true, "discharge")?;

    let lo = chg.span().0.max(dis.span().0);
    let hi = chg.span().1.min(dis.span().1);
    if hi - lo < MIN_SOC_SPAN {
        return Err(Error::OcvExtraction(format!(
            "sweeps overlap on [{lo:.3}, {hi:.3}] only (need a span of {MIN_SOC_SPAN})"
        )));
    }

    let mut grid: Vec<f64> = (0..=FINE_GRID)
        .map(|j| j as f64 / FINE_GRID as f64)
        .filter(|&s| s > lo && s < hi)
        .collect();
    grid.insert(0, lo);
    grid.push(hi);

    let v_chg: Vec<f64> = grid.iter().map(|&s| chg.eval(s)).collect();
    let v_dis: Vec<f64> = grid.iter().map(|&s| dis.eval(s)).collect();

    let in_transient = |s: f64, sweep: &SweepCurve| (s - sweep.start_soc).abs() < START_GUARD;
    let settled_gaps: Vec<f64> = grid
        .iter()
        .enumerate()
        .filter(|&(_, &s)| !in_transient(s, &chg) && !in_transient(s, &dis))
        .map(|(j, _)| 0.5 * (v_chg[j] - v_dis[j]))
        .collect();
    let overpotential = if settled_gaps.is_empty() { 0.0 } else { median(settled_gaps) };

    let raw: Vec<f64> = grid
        .iter()
        .enumerate()
        .map(|(j, &s)| {
            if in_transient(s, &dis) && !in_transient(s, &chg) {
                v_chg[j] - overpotential
            } else if in_transient(s, &chg) && !in_transient(s, &dis) {
                v_dis[j] + overpotential
            } else {
                0.5 * (v_chg[j] + v_dis[j])
            }
        })
        .collect();
    let smooth = isotonic_increasing(&raw);

    // End slopes for extrapolating past the covered span.
    let slope_between = |a: usize, b: usize| (smooth[b] - smooth[a]) / (grid[b] - grid[a]);
    let reach = grid.iter().position(|&s| s - lo >= START_GUARD).unwrap_or(grid.len() - 1).max(1);
    let low_slope = slope_between(0, reach);
    let back = grid
        .iter()
        .rposition(|&s| hi - s >= START_GUARD)
        .unwrap_or(0)
        .min(grid.len() - 2);
    let high_slope = slope_between(back, grid.len() - 1);

    let mut soc_bp = Vec::with_capacity(n_breakpoints);
    let mut volts = Vec::with_capacity(n_breakpoints);
    for i in 0..n_breakpoints {
        let s = if i + 1 == n_breakpoints {
            1.0
        } else {
            i as f64 / (n_breakpoints - 1) as f64
        };
        let v = if s < lo {
            smooth[0] - (lo - s) * low_slope
        } else if s > hi {
            smooth[smooth.len() - 1] + (s - hi) * high_slope
        } else {
            interp(&grid, &smooth, s)
        };
        soc_bp.push(s);
        volts.push(v);
    }
    for i in 1..volts.len() {
        volts[i] = volts[i].max(volts[i - 1] + MIN_OCV_SLOPE_STEP);
    }

    let max_current = charge
        .current
        .samples()
        .iter()
        .chain(discharge.current.samples())
        .fold(0.0f64, |m, i| m.max(i.abs()));
    let high_current_warning = r0_guess.is_some_and(|r0| max_current * r0 > IR_WARNING_V);

    Ok(OcvExtraction {
        curve: OcvCurve::new(soc_bp, volts)?,
        covered: (lo, hi),
        overpotential,
        high_current_warning,
    })
}

/// Parameters `fit_rc` can adjust.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitParam {
    Capacity,
    R0,
    R1,
    C1,
}

impl FitParam {
    pub const ALL: [FitParam; 4] = [FitParam::Capacity, FitParam::R0, FitParam::R1, FitParam::C1];

    fn get(self, p: &EcmParams) -> f64 {
        match self {
            FitParam::Capacity => p.capacity_q,
            FitParam::R0 => p.r0,
            FitParam::R1 => p.r1,
            FitParam::C1 => p.c1,
        }
    }

    fn set(self, p: &mut EcmParams, v: f64) {
        match self {
            FitParam::Capacity => p.capacity_q = v,
            FitParam::R0 => p.r0 = v,
            FitParam::R1 => p.r1 = v,
            FitParam::C1 => p.c1 = v,
        }
    }
}

impl std::str::FromStr for FitParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "capacity" => Ok(Self::Capacity),
            "r0" => Ok(Self::R0),
            "r1" => Ok(Self::R1),
            "c1" => Ok(Self::C1),
            other => Err(Error::Config(format!(
                "unknown parameter `{other}` (expected capacity, r0, r1 or c1)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub fitted: EcmParams,
    pub rmse: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Best RMSE after each iteration.
    pub history: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct FitOptions {
    pub max_iterations: usize,
    /// Stop once the simplex values agree to this relative tolerance.
    pub rel_tol: f64,
    /// Initial simplex step in log space.
    pub initial_step: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iterations: 500,
            rel_tol: 1e-6,
            initial_step: 0.25,
        }
    }
}

/// Fit the non-frozen subset of `{capacity, r0, r1, c1}` to logged data.
pub fn fit_rc(
    initial: &EcmParams,
    data: Record<'_>,
    x0: BatteryState,
    frozen: &[FitParam],
) -> Result<FitReport> {
    fit_rc_with(initial, data, x0, frozen, FitOptions::default())
}

pub fn fit_rc_with(
    initial: &EcmParams,
    data: Record<'_>,
    x0: BatteryState,
    frozen: &[FitParam],
    opts: FitOptions,
) -> Result<FitReport> {
    data.current.ensure_same_grid(data.voltage)?;
    let free: Vec<FitParam> = FitParam::ALL.into_iter().filter(|p| !frozen.contains(p)).collect();

    let build = |z: &[f64]| -> Option<EcmParams> {
        let mut p = initial.clone();
        for (param, &log_v) in free.iter().zip(z) {
            param.set(&mut p, log_v.exp());
        }
        EcmParams::new(p.capacity_q, p.r0, p.r1, p.c1, p.ocv).ok()
    };
    let objective = |z: &[f64]| -> f64 {
        let Some(p) = build(z) else {
            return f64::INFINITY;
        };
        match simulate(&p, x0, data.current) {
            Ok(sim) => crate::metrics::rms(&sim.voltage, data.voltage).unwrap_or(f64::INFINITY),
            Err(_) => f64::INFINITY,
        }
    };

    let start: Vec<f64> = free.iter().map(|p| p.get(initial).ln()).collect();
    let outcome = nelder_mead(&objective, &start, opts);
    let fitted = build(&outcome.best).ok_or_else(|| Error::Numerical("fit left the valid parameter range".into()))?;
    if !outcome.best_value.is_finite() {
        return Err(Error::Numerical("no finite RMSE found during the fit".into()));
    }
    Ok(FitReport {
        fitted,
        rmse: outcome.best_value,
        iterations: outcome.iterations,
        converged: outcome.converged,
        history: outcome.history,
    })
}

struct SearchOutcome {
    best: Vec<f64>,
    best_value: f64,
    iterations: usize,
    converged: bool,
    history: Vec<f64>,
}

/// Nelder–Mead with one restart from the best vertex after the simplex
/// first collapses; converged only if the restart cannot improve on it.
fn nelder_mead(f: &dyn Fn(&[f64]) -> f64, start: &[f64], opts: FitOptions) -> SearchOutcome {
    let n = start.len();
    let f0 = f(start);
    if n == 0 {
        return SearchOutcome {
            best: vec![],
            best_value: f0,
            iterations: 0,
            converged: true,
            history: vec![f0],
        };
    }

    let mut history = Vec::new();
    let mut iterations = 0;
    let mut best = start.to_vec();
    let mut best_value = f0;
    let mut restarts = 0;

    loop {
        let mut simplex: Vec<(Vec<f64>, f64)> = vec![(best.clone(), best_value)];
        for i in 0..n {
            let mut v = best.clone();
            v[i] += opts.initial_step;
            let fv = f(&v);
            simplex.push((v, fv));
        }
        let entry_value = best_value;
        let mut collapsed = false;

        while iterations < opts.max_iterations {
            simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
            let (lo_val, hi_val) = (simplex[0].1, simplex[n].1);
            if hi_val.is_finite() && hi_val - lo_val <= opts.rel_tol * lo_val.abs() + 1e-15 {
                collapsed = true;
                break;
            }
            iterations += 1;

            let centroid: Vec<f64> = (0..n)
                .map(|d| simplex[..n].iter().map(|v| v.0[d]).sum::<f64>() / n as f64)
                .collect();
            let along = |t: f64| -> Vec<f64> {
                centroid
                    .iter()
                    .zip(&simplex[n].0)
                    .map(|(c, w)| c + t * (w - c))
                    .collect()
            };

            let reflected = along(-1.0);
            let fr = f(&reflected);
            if fr < simplex[0].1 {
                let expanded = along(-2.0);
                let fe = f(&expanded);
                simplex[n] = if fe < fr { (expanded, fe) } else { (reflected, fr) };
            } else if fr < simplex[n - 1].1 {
                simplex[n] = (reflected, fr);
            } else {
                // Outside contraction when the reflection beat the worst vertex.
                let outside = fr < simplex[n].1;
                let contracted = along(if outside { -0.5 } else { 0.5 });
                let fc = f(&contracted);
                if (outside && fc <= fr) || (!outside && fc < simplex[n].1) {
                    simplex[n] = (contracted, fc);
                } else {
                    let anchor = simplex[0].0.clone();
                    for vertex in simplex.iter_mut().skip(1) {
                        let shrunk: Vec<f64> = anchor
                            .iter()
                            .zip(&vertex.0)
                            .map(|(a, v)| a + 0.5 * (v - a))
                            .collect();
                        let fs = f(&shrunk);
                        *vertex = (shrunk, fs);
                    }
                }
            }

            let (arg, val) = simplex
                .iter()
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|v| (v.0.clone(), v.1))
                .expect("non-empty simplex");
            if val < best_value {
                best = arg;
                best_value = val;
            }
            history.push(best_value);
        }

        if !collapsed {
            return SearchOutcome {
                best,
                best_value,
                iterations,
                converged: false,
                history,
            };
        }
        let gained = entry_value - best_value;
        if restarts > 0 && gained <= opts.rel_tol * best_value.abs() + 1e-15 {
            return SearchOutcome {
                best,
                best_value,
                iterations,
                converged: true,
                history,
            };
        }
        restarts += 1;
    }
}
