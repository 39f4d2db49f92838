//! Disease parameters: constrained values used by the engines, plus the
//! recurrent modulator weights.

use serde::{Deserialize, Serialize};

use crate::population::{Agent, VenueKindParams, N_AGE_BANDS};

use super::SimError;

/// Reference categories pinned to 1 in [`AttributeFactors`].
pub const REF_AGE_BAND: usize = 4; // 25-44
pub const REF_SEX: usize = 0; // female
pub const REF_ETHNICITY: usize = 3; // European
pub const REF_VACCINATION: usize = 0; // unvaccinated

/// Multiplicative susceptibility factors per demographic category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeFactors {
    pub age: [f64; N_AGE_BANDS],
    pub sex: [f64; 2],
    pub ethnicity: [f64; 6],
    pub vaccination: [f64; 2],
}

impl Default for AttributeFactors {
    fn default() -> Self {
        AttributeFactors { age: [1.0; N_AGE_BANDS], sex: [1.0; 2], ethnicity: [1.0; 6], vaccination: [1.0; 2] }
    }
}

impl AttributeFactors {
    pub fn validate(&self) -> Result<(), SimError> {
        let all = self
            .age
            .iter()
            .chain(self.sex.iter())
            .chain(self.ethnicity.iter())
            .chain(self.vaccination.iter());
        for &f in all {
            if !(f.is_finite() && f > 0.0) {
                return Err(SimError::Domain("attribute factors must be positive and finite".into()));
            }
        }
        for (name, v) in [
            ("age", self.age[REF_AGE_BAND]),
            ("sex", self.sex[REF_SEX]),
            ("ethnicity", self.ethnicity[REF_ETHNICITY]),
            ("vaccination", self.vaccination[REF_VACCINATION]),
        ] {
            if v != 1.0 {
                return Err(SimError::Domain(format!(
                    "reference {name} category must be pinned to 1 (found {v})"
                )));
            }
        }
        Ok(())
    }

    /// Product of the agent's category factors (vaccination factor uses the
    /// agent's static flag; campaign updates are applied by the engines).
    pub fn h_attr(&self, agent: &Agent) -> f64 {
        self.age[crate::population::AgeBand::of(agent.age).0]
            * self.sex[agent.sex.index()]
            * self.ethnicity[agent.ethnicity.index()]
            * self.vaccination[usize::from(agent.vaccinated)]
    }
}

/// Background random-infection rate: a constant, or one value per week.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PhiSchedule {
    Constant(f64),
    Weekly(Vec<f64>),
}

impl PhiSchedule {
    pub fn at_week(&self, week: usize) -> f64 {
        match self {
            PhiSchedule::Constant(v) => *v,
            PhiSchedule::Weekly(vs) => {
                if vs.is_empty() {
                    0.0
                } else {
                    vs[week.min(vs.len() - 1)]
                }
            }
        }
    }

    fn validate(&self) -> Result<(), SimError> {
        let ok = |v: f64| (0.0..1.0).contains(&v);
        let valid = match self {
            PhiSchedule::Constant(v) => ok(*v),
            PhiSchedule::Weekly(vs) => vs.iter().all(|&v| ok(v)),
        };
        if valid {
            Ok(())
        } else {
            Err(SimError::Domain("phi must lie in [0,1)".into()))
        }
    }
}

/// One LSTM cell (input dimension 1) plus a bounded output head emitting the
/// weekly infectiousness multiplier in (0,2) and phi_t in [0, phi_max).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModulatorWeights {
    pub hidden: usize,
    /// Gate weights in order input, forget, candidate, output.
    pub gates: [GateWeights; 4],
    /// Output head, row-major [2, hidden].
    pub head_w: Vec<f64>,
    pub head_b: [f64; 2],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GateWeights {
    /// Input weights, one per hidden unit (input dimension is 1).
    pub wx: Vec<f64>,
    /// Recurrent weights, row-major [hidden, hidden].
    pub wh: Vec<f64>,
    pub b: Vec<f64>,
}

impl ModulatorWeights {
    pub fn zeros(hidden: usize) -> Self {
        let gate = || GateWeights { wx: vec![0.0; hidden], wh: vec![0.0; hidden * hidden], b: vec![0.0; hidden] };
        ModulatorWeights {
            hidden,
            gates: [gate(), gate(), gate(), gate()],
            head_w: vec![0.0; 2 * hidden],
            head_b: [0.0; 2],
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let h = self.hidden;
        if h == 0 {
            return Err(SimError::Domain("modulator hidden size must be positive".into()));
        }
        for g in &self.gates {
            if g.wx.len() != h || g.wh.len() != h * h || g.b.len() != h {
                return Err(SimError::Domain("modulator gate weight shapes inconsistent with hidden size".into()));
            }
        }
        if self.head_w.len() != 2 * h {
            return Err(SimError::Domain("modulator head shape inconsistent with hidden size".into()));
        }
        let finite = self
            .gates
            .iter()
            .flat_map(|g| g.wx.iter().chain(g.wh.iter()).chain(g.b.iter()))
            .chain(self.head_w.iter())
            .chain(self.head_b.iter())
            .all(|v| v.is_finite());
        if !finite {
            return Err(SimError::Domain("modulator weights must be finite".into()));
        }
        Ok(())
    }

    /// Flat parameter count (used by initialization and gradient checks).
    pub fn n_params(&self) -> usize {
        let h = self.hidden;
        4 * (h + h * h + h) + 2 * h + 2
    }
}

/// All learnable quantities in constrained space, plus the fixed shape
/// knobs of the transmission model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiseaseParams {
    /// Initial infection proportion, in [0,1).
    pub beta: f64,
    /// Background per-day random-infection rate (ignored when a modulator is set).
    pub phi: PhiSchedule,
    /// Days from exposure to infectiousness, > 0.
    pub theta_ei: f64,
    /// Days from infection to recovery, > theta_ei.
    pub theta_ir: f64,
    /// Gamma shape v, > 1 so the mode-normalized profile is bounded.
    pub gamma_shape: f64,
    /// Gamma scale lambda, > 0.
    pub gamma_scale: f64,
    /// Overall infectiousness scaling factor R, > 0.
    pub r_scale: f64,
    pub venue_params: VenueKindParams,
    /// Vaccine efficiency reducing spread to the vaccinated, in [0,1].
    pub psi1: f64,
    /// Vaccine efficiency reducing an infected agent's onward transmission
    /// and reporting, in [0,1].
    pub psi2: f64,
    pub attr_susceptibility: AttributeFactors,
    /// Sigmoid gate sharpness of the infectiousness window, per day.
    pub gate_sharpness: f64,
    /// Gumbel-Softmax temperature.
    pub temperature: f64,
    /// Upper bound for modulator-emitted phi.
    pub phi_max: f64,
    pub modulator: Option<ModulatorWeights>,
}

impl Default for DiseaseParams {
    fn default() -> Self {
        DiseaseParams {
            beta: 1e-5,
            phi: PhiSchedule::Constant(0.0),
            theta_ei: 10.0,
            theta_ir: 18.0,
            gamma_shape: 2.0,
            gamma_scale: 1.0,
            r_scale: 0.05,
            venue_params: VenueKindParams::default(),
            psi1: 0.9,
            psi2: 0.9,
            attr_susceptibility: AttributeFactors::default(),
            gate_sharpness: 4.0,
            temperature: 0.5,
            phi_max: 0.01,
            modulator: None,
        }
    }
}

impl DiseaseParams {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(0.0..1.0).contains(&self.beta) {
            return Err(SimError::Domain("beta must lie in [0,1)".into()));
        }
        self.phi.validate()?;
        if self.theta_ei <= 0.0 {
            return Err(SimError::Domain("theta_ei must be positive".into()));
        }
        if self.theta_ir <= self.theta_ei {
            return Err(SimError::Domain("theta_ir must exceed theta_ei".into()));
        }
        if self.gamma_shape <= 1.0 {
            return Err(SimError::Domain(
                "gamma_shape must exceed 1 so the mode-normalized profile is bounded".into(),
            ));
        }
        if self.gamma_scale <= 0.0 {
            return Err(SimError::Domain("gamma_scale must be positive".into()));
        }
        if self.r_scale <= 0.0 {
            return Err(SimError::Domain("r_scale must be positive".into()));
        }
        self.venue_params.validate().map_err(|e| SimError::Domain(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.psi1) || !(0.0..=1.0).contains(&self.psi2) {
            return Err(SimError::Domain("psi1/psi2 must lie in [0,1]".into()));
        }
        self.attr_susceptibility.validate()?;
        if self.gate_sharpness <= 0.0 {
            return Err(SimError::Domain("gate_sharpness must be positive".into()));
        }
        if self.temperature <= 0.0 {
            return Err(SimError::Domain("temperature must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.phi_max) {
            return Err(SimError::Domain("phi_max must lie in [0,1)".into()));
        }
        if let Some(m) = &self.modulator {
            m.validate()?;
        }
        Ok(())
    }

    /// rho / q for a venue kind index.
    pub fn rho_over_q(&self, kind_index: usize) -> f64 {
        self.venue_params.rho[kind_index] / self.venue_params.q[kind_index]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_params_are_valid() {
        DiseaseParams::default().validate().unwrap();
    }

    #[test]
    fn invariant_violations_rejected() {
        let mut p = DiseaseParams { theta_ir: 5.0, theta_ei: 9.0, ..Default::default() };
        assert!(p.validate().is_err());
        p = DiseaseParams { beta: 1.0, ..Default::default() };
        assert!(p.validate().is_err());
        p = DiseaseParams { gamma_shape: 0.9, ..Default::default() };
        assert!(p.validate().is_err());
        let mut attr = AttributeFactors::default();
        attr.age[REF_AGE_BAND] = 1.2;
        p = DiseaseParams { attr_susceptibility: attr, ..Default::default() };
        assert!(p.validate().is_err());
    }

    #[test]
    fn phi_schedule_lookup() {
        let c = PhiSchedule::Constant(0.01);
        assert_eq!(c.at_week(0), 0.01);
        assert_eq!(c.at_week(99), 0.01);
        let w = PhiSchedule::Weekly(vec![0.1, 0.2]);
        assert_eq!(w.at_week(0), 0.1);
        assert_eq!(w.at_week(1), 0.2);
        assert_eq!(w.at_week(5), 0.2);
    }

    #[test]
    fn disease_params_serde_round_trip() {
        let p = DiseaseParams { modulator: Some(ModulatorWeights::zeros(3)), ..Default::default() };
        let json = serde_json::to_string(&p).unwrap();
        let back: DiseaseParams = serde_json::from_str(&json).unwrap();
        assert_eq!(p, back);
    }
}
