//! The differentiable transmission engine.
//!
//! Two interchangeable execution paths share one set of formulas: a
//! tape-recorded path (relaxed or straight-through sampling) used for
//! calibration and gradient checks, and a plain hard-sampling path used for
//! ensembles. The object-style `refsim` module reimplements the same
//! semantics independently and serves as the statistical oracle.

mod hard;
mod modulator;
mod params;
mod profile;
mod relaxed;
mod trace;

use std::fmt;

use rand::Rng;

use crate::autodiff::{AdError, Tape, Tensor};
use crate::interventions::PolicySet;
use crate::population::{ContactGraph, Population, VenueKind};

pub use modulator::{lstm_step, lstm_step_plain, ModulatorOutputs, PlainModulatorState, TapeModulator};
pub use params::{
    AttributeFactors, DiseaseParams, GateWeights, ModulatorWeights, PhiSchedule, REF_AGE_BAND,
    REF_ETHNICITY, REF_SEX, REF_VACCINATION,
};
pub use profile::{gamma_ratio_scalar, infectiousness_profile, profile_scalar};
pub use relaxed::{simulate_relaxed, RelaxedRun, TapeParams};
pub use trace::EpidemicTrace;

pub use crate::population::VenueKindParams;

#[derive(Debug, Clone)]
pub enum SimError {
    Domain(String),
    InconsistentState(String),
    Ad(AdError),
    Io(String),
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::Domain(m) => write!(f, "domain error: {m}"),
            SimError::InconsistentState(m) => write!(f, "inconsistent state: {m}"),
            SimError::Ad(e) => write!(f, "autodiff error: {e}"),
            SimError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl std::error::Error for SimError {}

impl From<AdError> for SimError {
    fn from(e: AdError) -> Self {
        SimError::Ad(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimMode {
    /// Tape-recorded, fractional Gumbel-Softmax samples; fully smooth in
    /// every learnable parameter. Used by calibration and gradient checks.
    Relaxed,
    /// Tape-recorded with straight-through sampling: integer forward draws,
    /// relaxed surrogate gradients.
    StraightThrough,
    /// Plain stochastic simulation, no tape. Used by ensembles.
    Hard,
}

impl SimMode {
    pub fn parse(s: &str) -> Option<SimMode> {
        match s {
            "relaxed" => Some(SimMode::Relaxed),
            "straight-through" => Some(SimMode::StraightThrough),
            "hard" => Some(SimMode::Hard),
            _ => None,
        }
    }
}

/// Per-agent initial infection indicators from the scalar proportion beta.
/// Agents outside `restriction` are exactly zero; gradients flow to beta.
pub fn seed_initial_infections<R: Rng>(
    tape: &mut Tape,
    beta: &Tensor,
    n_agents: usize,
    restriction: Option<&[u32]>,
    temperature: f64,
    rng: &mut R,
    hard: bool,
) -> Result<Tensor, SimError> {
    if !beta.is_scalar() {
        return Err(SimError::Domain("beta must be scalar".into()));
    }
    let b = beta.item();
    if !(0.0..1.0).contains(&b) {
        return Err(SimError::Domain(format!("beta must lie in [0,1), got {b}")));
    }
    if let Some(r) = restriction {
        if let Some(&bad) = r.iter().find(|&&a| a as usize >= n_agents) {
            return Err(SimError::Domain(format!("restriction references agent {bad} out of range")));
        }
    }
    let p_full = tape.broadcast(beta, n_agents)?;
    let p = match restriction {
        None => p_full,
        Some(ids) => {
            let mut mask = vec![0.0; n_agents];
            for &a in ids {
                mask[a as usize] = 1.0;
            }
            let mask = Tensor::vector(mask)?;
            tape.mul(&p_full, &mask)?
        }
    };
    Ok(tape.gumbel_softmax_bernoulli(&p, temperature, rng, hard)?)
}

/// Per-agent infection probability from summed edge rates:
/// p = 1 - exp(-sum of rates per agent) via a segmented reduction.
pub fn aggregate_exposure(
    tape: &mut Tape,
    edge_rates: &Tensor,
    edge_agents: &[u32],
    n_agents: usize,
) -> Result<Tensor, SimError> {
    let hazard = tape.segment_sum(edge_rates, edge_agents, n_agents)?;
    let neg = tape.neg(&hazard)?;
    let escape = tape.exp(&neg)?;
    Ok(tape.sub_from(1.0, &escape)?)
}

/// Random (outside-the-area) infections: only susceptible mass may flip and
/// the expected hard-mode count is phi_t times the susceptible count.
pub fn random_infections<R: Rng>(
    tape: &mut Tape,
    phi_t: &Tensor,
    susceptible: &Tensor,
    temperature: f64,
    rng: &mut R,
    hard: bool,
) -> Result<Tensor, SimError> {
    if !phi_t.is_scalar() {
        return Err(SimError::Domain("phi must be scalar".into()));
    }
    let v = phi_t.item();
    if !(0.0..1.0).contains(&v) {
        return Err(SimError::Domain(format!("phi must lie in [0,1), got {v}")));
    }
    let p = tape.broadcast(phi_t, susceptible.numel())?;
    let draws = tape.gumbel_softmax_bernoulli(&p, temperature, rng, hard)?;
    Ok(tape.mul(&draws, susceptible)?)
}

/// Infector-side view for a single potential transmission edge.
#[derive(Debug, Clone, Copy)]
pub struct InfectorState {
    pub days_since_infection: f64,
    pub vaccinated: bool,
    /// Isolated or quarantined.
    pub blocked: bool,
}

/// Susceptible-side view for a single potential transmission edge.
#[derive(Debug, Clone, Copy)]
pub struct SusceptibleAttrs {
    /// Product of the agent's attribute susceptibility factors.
    pub h_attr: f64,
    pub vaccinated: bool,
    /// Quarantined.
    pub blocked: bool,
}

/// Per-edge transmission rate
/// R * R_t * h_attr * (rho/q) * profile(t - t_inf) * vaccine factors,
/// zero when either endpoint is blocked or the venue is closed. The bulk
/// engines compute the same quantity factorized per venue.
pub fn edge_transmission_rate(
    infector: &InfectorState,
    susceptible: &SusceptibleAttrs,
    venue_kind: VenueKind,
    venue_open: bool,
    params: &DiseaseParams,
    r_mult: f64,
) -> f64 {
    if infector.blocked || susceptible.blocked || !venue_open {
        return 0.0;
    }
    let prof = profile_scalar(
        infector.days_since_infection,
        params.gamma_shape,
        params.gamma_scale,
        params.theta_ei,
        params.theta_ir,
        params.gate_sharpness,
    );
    let vaccine = (1.0 - params.psi1 * f64::from(susceptible.vaccinated))
        * (1.0 - params.psi2 * f64::from(infector.vaccinated));
    params.r_scale
        * r_mult
        * susceptible.h_attr
        * params.rho_over_q(venue_kind.index())
        * prof
        * vaccine
}

/// Hard-mode run that also returns the policy audit (assigned spans and
/// exemption violations).
pub fn run_with_audit(
    pop: &Population,
    graph: &ContactGraph,
    params: &DiseaseParams,
    policies: &PolicySet,
    horizon_days: usize,
    seed: u64,
) -> Result<(EpidemicTrace, crate::interventions::PolicyAudit), SimError> {
    if horizon_days == 0 {
        return Err(SimError::Domain("horizon must be at least 1 day".into()));
    }
    params.validate()?;
    policies.validate().map_err(SimError::Domain)?;
    hard::run_hard(pop, graph, params, policies, horizon_days, seed)
}

/// Runs one simulation: seeds at day 0, then steps with the weekly
/// modulator. Hard mode is plain sampling; relaxed modes record on a
/// private tape and return the trace.
pub fn run(
    pop: &Population,
    graph: &ContactGraph,
    params: &DiseaseParams,
    policies: &PolicySet,
    horizon_days: usize,
    seed: u64,
    mode: SimMode,
) -> Result<EpidemicTrace, SimError> {
    if horizon_days == 0 {
        return Err(SimError::Domain("horizon must be at least 1 day".into()));
    }
    params.validate()?;
    policies.validate().map_err(SimError::Domain)?;
    match mode {
        SimMode::Hard => hard::run_hard(pop, graph, params, policies, horizon_days, seed).map(|(t, _)| t),
        SimMode::Relaxed | SimMode::StraightThrough => {
            let mut tape = Tape::new();
            let tp = TapeParams::constants(&mut tape, params)?;
            let run = simulate_relaxed(
                &mut tape,
                pop,
                graph,
                &tp,
                policies,
                horizon_days,
                seed,
                mode == SimMode::StraightThrough,
            )?;
            Ok(run.trace)
        }
    }
}
