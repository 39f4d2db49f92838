//! Gradient-based fitting of disease parameters and modulator weights to a
//! weekly case series: unconstrained mirrors with bijective transforms,
//! Xavier initialization for the recurrent weights, and plain SGD with
//! momentum on an MSE loss (frozen per-iteration noise).

mod learnable;

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::epi_model::{simulate_relaxed, DiseaseParams, EpidemicTrace, SimError};
use crate::interventions::PolicySet;
use crate::population::{ContactGraph, Population};
use crate::rng::derive_seed;

pub use learnable::{init_xavier, xavier_uniform, LearnFlags, LearnableParamSet};

#[derive(Debug, Clone)]
pub enum CalibError {
    LengthMismatch { sim: usize, observed: usize },
    Divergence { iteration: usize },
    InvalidConfig(String),
    Sim(SimError),
    Io(String),
}

impl fmt::Display for CalibError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CalibError::LengthMismatch { sim, observed } => {
                write!(f, "length mismatch: {sim} simulated weeks vs {observed} observed")
            }
            CalibError::Divergence { iteration } => {
                write!(f, "loss became non-finite at iteration {iteration}")
            }
            CalibError::InvalidConfig(m) => write!(f, "invalid calibration config: {m}"),
            CalibError::Sim(e) => write!(f, "{e}"),
            CalibError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl std::error::Error for CalibError {}

impl From<SimError> for CalibError {
    fn from(e: SimError) -> Self {
        CalibError::Sim(e)
    }
}

/// Weekly observed case counts over consecutive weeks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSeries {
    pub start_week: i64,
    pub cases: Vec<f64>,
    #[serde(default)]
    pub region: String,
}

impl ObservationSeries {
    pub fn new(start_week: i64, cases: Vec<f64>, region: impl Into<String>) -> Result<Self, CalibError> {
        if cases.is_empty() {
            return Err(CalibError::InvalidConfig("observation series is empty".into()));
        }
        if cases.iter().any(|&c| c < 0.0 || !c.is_finite()) {
            return Err(CalibError::InvalidConfig("case counts must be non-negative".into()));
        }
        Ok(ObservationSeries { start_week, cases, region: region.into() })
    }

    pub fn n_weeks(&self) -> usize {
        self.cases.len()
    }

    pub fn week_indices(&self) -> impl Iterator<Item = i64> + '_ {
        (0..self.cases.len() as i64).map(move |i| self.start_week + i)
    }

    /// `week_index,cases` with consecutive weeks enforced.
    pub fn load_csv(path: &Path) -> Result<Self, CalibError> {
        let text = fs::read_to_string(path).map_err(|e| CalibError::Io(format!("{}: {e}", path.display())))?;
        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "week_index,cases")) => {}
            _ => {
                return Err(CalibError::InvalidConfig(format!(
                    "{}: expected header `week_index,cases`",
                    path.display()
                )))
            }
        }
        let mut start = None;
        let mut cases = Vec::new();
        for (i, line) in lines {
            if line.is_empty() {
                continue;
            }
            let mut cols = line.split(',');
            let bad = || CalibError::InvalidConfig(format!("{}:{}: bad row", path.display(), i + 1));
            let week: i64 = cols.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            let count: f64 = cols.next().ok_or_else(bad)?.parse().map_err(|_| bad())?;
            if cols.next().is_some() {
                return Err(bad());
            }
            match start {
                None => start = Some(week),
                Some(s) => {
                    if week != s + cases.len() as i64 {
                        return Err(CalibError::InvalidConfig(format!(
                            "{}:{}: weeks must be consecutive",
                            path.display(),
                            i + 1
                        )));
                    }
                }
            }
            cases.push(count);
        }
        ObservationSeries::new(start.unwrap_or(0), cases, "")
    }

    pub fn save_csv(&self, path: &Path) -> Result<(), CalibError> {
        let mut out = String::from("week_index,cases\n");
        for (w, c) in self.week_indices().zip(&self.cases) {
            out.push_str(&format!("{w},{c}\n"));
        }
        fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| CalibError::Io(format!("{}: {e}", path.display())))
    }
}

/// Consecutive 7-day sums over per-day incidence tensors; the final partial
/// week is a partial sum. Differentiable pass-through.
pub fn weekly_sums(tape: &mut Tape, daily: &[Tensor]) -> Result<Tensor, SimError> {
    if daily.is_empty() {
        return Err(SimError::Domain("no daily incidence to aggregate".into()));
    }
    let refs: Vec<&Tensor> = daily.iter().collect();
    let stacked = tape.stack(&refs)?;
    let segments: Vec<u32> = (0..daily.len()).map(|d| (d / 7) as u32).collect();
    let n_weeks = daily.len().div_ceil(7);
    Ok(tape.segment_sum(&stacked, &segments, n_weeks)?)
}

/// Plain weekly aggregation of a finished trace.
pub fn weekly_aggregate(trace: &EpidemicTrace) -> Vec<f64> {
    let mut out = Vec::new();
    for chunk in trace.new_infections.chunks(7) {
        out.push(chunk.iter().sum());
    }
    out
}

/// Mean squared error over weeks.
pub fn loss(tape: &mut Tape, sim_weekly: &Tensor, observed: &[f64]) -> Result<Tensor, CalibError> {
    if sim_weekly.numel() != observed.len() {
        return Err(CalibError::LengthMismatch { sim: sim_weekly.numel(), observed: observed.len() });
    }
    let obs = Tensor::vector(observed.to_vec()).map_err(SimError::from)?;
    let diff = tape.sub(sim_weekly, &obs).map_err(SimError::from)?;
    let sq = tape.mul(&diff, &diff).map_err(SimError::from)?;
    let total = tape.sum(&sq).map_err(SimError::from)?;
    Ok(tape.scale(&total, 1.0 / observed.len() as f64).map_err(SimError::from)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    /// Overrides the run-level seed when set.
    pub seed: Option<u64>,
    /// Divide both series by the observed maximum inside the loss.
    pub normalize_loss: bool,
    pub use_modulator: bool,
    pub hidden: usize,
    /// Straight-through sampling inside the training simulations.
    pub sample_hard: bool,
    pub learn: LearnFlags,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            iterations: 100,
            learning_rate: 0.1,
            momentum: 0.9,
            seed: None,
            normalize_loss: true,
            use_modulator: true,
            hidden: 16,
            sample_hard: false,
            learn: LearnFlags::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub params: DiseaseParams,
    pub loss_history: Vec<f64>,
    pub beta_trajectory: Vec<f64>,
    pub simulated_weekly: Vec<f64>,
    pub best_iteration: usize,
    pub observed_start_week: i64,
    #[serde(default)]
    pub config_hash: String,
}

impl FitResult {
    pub fn write_json(&self, path: &Path) -> Result<(), CalibError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| CalibError::Io(e.to_string()))?;
        fs::write(path, text).map_err(|e| CalibError::Io(format!("{}: {e}", path.display())))
    }

    pub fn read_json(path: &Path) -> Result<Self, CalibError> {
        let text = fs::read_to_string(path).map_err(|e| CalibError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CalibError::Io(format!("{}: {e}", path.display())))
    }
}

/// One forward evaluation of the calibration loss at `set`, with the given
/// frozen noise. Also used by finite-difference checks.
pub fn loss_value(
    set: &LearnableParamSet,
    pop: &Population,
    graph: &ContactGraph,
    policies: &PolicySet,
    observed: &ObservationSeries,
    noise_seed: u64,
    normalize: bool,
    sample_hard: bool,
) -> Result<f64, CalibError> {
    let mut tape = Tape::new();
    let lifted = set.lift(&mut tape)?;
    let horizon = observed.n_weeks() * 7;
    let run = simulate_relaxed(
        &mut tape,
        pop,
        graph,
        &lifted.tape_params,
        policies,
        horizon,
        noise_seed,
        sample_hard,
    )?;
    let weekly = weekly_sums(&mut tape, &run.daily_new)?;
    let (sim, obs) = normalized(&mut tape, &weekly, observed, normalize)?;
    let l = loss(&mut tape, &sim, &obs)?;
    Ok(l.item())
}

fn normalized(
    tape: &mut Tape,
    weekly: &Tensor,
    observed: &ObservationSeries,
    normalize: bool,
) -> Result<(Tensor, Vec<f64>), CalibError> {
    if !normalize {
        return Ok((weekly.clone(), observed.cases.clone()));
    }
    let max_obs = observed.cases.iter().cloned().fold(1.0f64, f64::max);
    let sim = tape.scale(weekly, 1.0 / max_obs).map_err(SimError::from)?;
    let obs = observed.cases.iter().map(|c| c / max_obs).collect();
    Ok((sim, obs))
}

/// SGD loop: relaxed simulation with per-iteration frozen noise, weekly
/// aggregation, MSE, backward, momentum update in unconstrained space.
/// Returns the best-loss snapshot.
pub fn calibrate(
    pop: &Population,
    graph: &ContactGraph,
    observed: &ObservationSeries,
    policies: &PolicySet,
    init: &DiseaseParams,
    config: &CalibrationConfig,
    master_seed: u64,
) -> Result<FitResult, CalibError> {
    if config.iterations == 0 {
        return Err(CalibError::InvalidConfig("iterations must be at least 1".into()));
    }
    if config.learning_rate < 0.0 {
        return Err(CalibError::InvalidConfig("learning rate must be non-negative".into()));
    }
    let seed = config.seed.unwrap_or(master_seed);
    let horizon = observed.n_weeks() * 7;

    let mut set = init_xavier(init, config, seed)?;
    let mask = set.trainable_mask(&config.learn);
    let mut velocity = vec![0.0f64; set.flat_len()];

    let mut loss_history = Vec::with_capacity(config.iterations);
    let mut beta_trajectory = Vec::with_capacity(config.iterations);
    let mut best: Option<(f64, Vec<f64>, Vec<f64>, usize)> = None;

    for iter in 0..config.iterations {
        let noise_seed = derive_seed(seed, 1 + iter as u64);
        let mut tape = Tape::new();
        let lifted = set.lift(&mut tape)?;
        let run = simulate_relaxed(
            &mut tape,
            pop,
            graph,
            &lifted.tape_params,
            policies,
            horizon,
            noise_seed,
            config.sample_hard,
        )?;
        let weekly = weekly_sums(&mut tape, &run.daily_new)?;
        let (sim_n, obs_n) = normalized(&mut tape, &weekly, observed, config.normalize_loss)?;
        let l = loss(&mut tape, &sim_n, &obs_n)?;
        let loss_now = l.item();
        if !loss_now.is_finite() {
            return Err(CalibError::Divergence { iteration: iter });
        }
        loss_history.push(loss_now);
        beta_trajectory.push(set.to_params().beta);

        if best.as_ref().map_or(true, |(b, _, _, _)| loss_now < *b) {
            best = Some((loss_now, set.flat(), weekly.values().to_vec(), iter));
        }

        let grads = tape.backward(&l).map_err(SimError::from)?;
        let leaf_grads: Vec<Vec<f64>> = lifted
            .leaves
            .iter()
            .map(|t| grads.grad(t).expect("leaves are recorded"))
            .collect();
        let mut flat = set.flat();
        for (i, &(leaf, offset)) in lifted.flat_map.iter().enumerate() {
            if !mask[i] {
                continue;
            }
            let g = leaf_grads[leaf][offset];
            velocity[i] = config.momentum * velocity[i] + g;
            flat[i] -= config.learning_rate * velocity[i];
        }
        set.assign_flat(&flat);
    }

    let (_, best_flat, best_weekly, best_iteration) = best.expect("at least one iteration ran");
    set.assign_flat(&best_flat);
    Ok(FitResult {
        params: set.to_params(),
        loss_history,
        beta_trajectory,
        simulated_weekly: best_weekly,
        best_iteration,
        observed_start_week: observed.start_week,
        config_hash: String::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weekly_sums_partial_week() {
        let mut tape = Tape::new();
        let daily: Vec<Tensor> = (0..10).map(|_| Tensor::scalar(1.0).unwrap()).collect();
        let w = weekly_sums(&mut tape, &daily).unwrap();
        assert_eq!(w.values(), &[7.0, 3.0]);
    }

    #[test]
    fn weekly_sums_all_zero() {
        let mut tape = Tape::new();
        let daily: Vec<Tensor> = (0..14).map(|_| Tensor::scalar(0.0).unwrap()).collect();
        let w = weekly_sums(&mut tape, &daily).unwrap();
        assert_eq!(w.values(), &[0.0, 0.0]);
    }

    #[test]
    fn loss_examples() {
        let mut tape = Tape::new();
        let sim = Tensor::vector(vec![1.0, 2.0]).unwrap();
        assert_eq!(loss(&mut tape, &sim, &[1.0, 2.0]).unwrap().item(), 0.0);
        assert_eq!(loss(&mut tape, &sim, &[1.0, 4.0]).unwrap().item(), 2.0);
        // symmetric under identical permutation of both series
        let sim_p = Tensor::vector(vec![2.0, 1.0]).unwrap();
        assert_eq!(
            loss(&mut tape, &sim_p, &[4.0, 1.0]).unwrap().item(),
            loss(&mut tape, &sim, &[1.0, 4.0]).unwrap().item()
        );
        assert!(matches!(
            loss(&mut tape, &sim, &[1.0]),
            Err(CalibError::LengthMismatch { .. })
        ));
    }

    #[test]
    fn observation_csv_round_trip_and_validation() {
        let dir = std::env::temp_dir().join(format!("epidiff-obs-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("observed.csv");
        let obs = ObservationSeries::new(26, vec![3.0, 7.0, 12.0], "r").unwrap();
        obs.save_csv(&path).unwrap();
        let back = ObservationSeries::load_csv(&path).unwrap();
        assert_eq!(back.start_week, 26);
        assert_eq!(back.cases, obs.cases);

        fs::write(&path, "week_index,cases\n1,5\n3,6\n").unwrap();
        assert!(ObservationSeries::load_csv(&path).is_err());
    }
}
