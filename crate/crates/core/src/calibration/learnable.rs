//! Unconstrained mirrors of every learnable quantity, with bijective
//! transforms into constrained space (sigmoid-scaled for bounded
//! parameters, softplus for positive ones).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::epi_model::{
    DiseaseParams, ModulatorWeights, PhiSchedule, SimError, TapeModulator, TapeParams,
    REF_AGE_BAND, REF_ETHNICITY, REF_SEX, REF_VACCINATION,
};
use crate::population::VenueKindParams;
use crate::rng::{derive_rng, salt};

use super::{CalibError, CalibrationConfig};

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(1e-9, 1.0 - 1e-9);
    p.ln() - (1.0 - p).ln()
}

fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else if x < -30.0 {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

fn inv_softplus(y: f64) -> f64 {
    let y = y.max(1e-12);
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

/// Which parameter groups the optimizer may move.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearnFlags {
    pub beta: bool,
    /// theta_ei, theta_ir, gamma shape and scale.
    pub timing: bool,
    pub r_scale: bool,
    pub venues: bool,
    pub vaccine: bool,
    pub attributes: bool,
    pub phi: bool,
    pub modulator: bool,
}

impl Default for LearnFlags {
    fn default() -> Self {
        LearnFlags {
            beta: true,
            timing: true,
            r_scale: true,
            venues: true,
            vaccine: true,
            attributes: true,
            phi: true,
            modulator: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Group {
    Beta,
    Timing,
    RScale,
    Venues,
    Vaccine,
    Attributes,
    Phi,
    Modulator,
}

impl Group {
    fn enabled(&self, f: &LearnFlags) -> bool {
        match self {
            Group::Beta => f.beta,
            Group::Timing => f.timing,
            Group::RScale => f.r_scale,
            Group::Venues => f.venues,
            Group::Vaccine => f.vaccine,
            Group::Attributes => f.attributes,
            Group::Phi => f.phi,
            Group::Modulator => f.modulator,
        }
    }
}

/// Unconstrained mirror of [`DiseaseParams`] plus modulator weights.
/// `transform(inverse(x)) == x` within 1e-9 for in-range values.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnableParamSet {
    pub beta_u: f64,
    pub theta_ei_u: f64,
    pub theta_gap_u: f64,
    pub gamma_shape_u: f64,
    pub gamma_scale_u: f64,
    pub r_scale_u: f64,
    pub rho_u: [f64; 6],
    pub q_u: [f64; 6],
    pub psi1_u: f64,
    pub psi2_u: f64,
    pub attr_age_u: [f64; 7],
    pub attr_sex_u: [f64; 2],
    pub attr_eth_u: [f64; 6],
    pub attr_vax_u: [f64; 2],
    /// Weekly phi mirrors; empty when a modulator is used.
    pub phi_u: Vec<f64>,
    /// Modulator weights are unconstrained as-is.
    pub modulator: Option<ModulatorWeights>,
    pub gate_sharpness: f64,
    pub temperature: f64,
    pub phi_max: f64,
}

/// Tape leaves paired with the constrained [`TapeParams`] built from them.
pub struct LiftedParams {
    pub tape_params: TapeParams,
    /// Unconstrained leaf tensors, in lift order.
    pub leaves: Vec<Tensor>,
    /// flat index -> (leaf index, offset inside the leaf).
    pub flat_map: Vec<(usize, usize)>,
}

impl LearnableParamSet {
    pub fn from_params(p: &DiseaseParams) -> Result<Self, CalibError> {
        p.validate().map_err(CalibError::Sim)?;
        let attr = &p.attr_susceptibility;
        let inv_arr = |a: &[f64]| -> Vec<f64> { a.iter().map(|&v| inv_softplus(v)).collect() };
        let phi_u = match (&p.modulator, &p.phi) {
            (Some(_), _) => Vec::new(),
            (None, PhiSchedule::Constant(c)) => vec![logit(c / p.phi_max)],
            (None, PhiSchedule::Weekly(vs)) => vs.iter().map(|&c| logit(c / p.phi_max)).collect(),
        };
        Ok(LearnableParamSet {
            beta_u: logit(p.beta),
            theta_ei_u: inv_softplus(p.theta_ei),
            theta_gap_u: inv_softplus(p.theta_ir - p.theta_ei),
            gamma_shape_u: inv_softplus(p.gamma_shape - 1.0),
            gamma_scale_u: inv_softplus(p.gamma_scale),
            r_scale_u: inv_softplus(p.r_scale),
            rho_u: std::array::from_fn(|k| inv_softplus(p.venue_params.rho[k])),
            q_u: std::array::from_fn(|k| inv_softplus(p.venue_params.q[k])),
            psi1_u: logit(p.psi1),
            psi2_u: logit(p.psi2),
            attr_age_u: inv_arr(&attr.age).try_into().unwrap(),
            attr_sex_u: inv_arr(&attr.sex).try_into().unwrap(),
            attr_eth_u: inv_arr(&attr.ethnicity).try_into().unwrap(),
            attr_vax_u: inv_arr(&attr.vaccination).try_into().unwrap(),
            phi_u,
            modulator: p.modulator.clone(),
            gate_sharpness: p.gate_sharpness,
            temperature: p.temperature,
            phi_max: p.phi_max,
        })
    }

    pub fn to_params(&self) -> DiseaseParams {
        let theta_ei = softplus(self.theta_ei_u);
        let phi = if self.modulator.is_some() {
            PhiSchedule::Constant(0.0)
        } else if self.phi_u.len() == 1 {
            PhiSchedule::Constant(self.phi_max * sigmoid(self.phi_u[0]))
        } else {
            PhiSchedule::Weekly(self.phi_u.iter().map(|&u| self.phi_max * sigmoid(u)).collect())
        };
        let mut attr = crate::epi_model::AttributeFactors {
            age: std::array::from_fn(|i| softplus(self.attr_age_u[i])),
            sex: std::array::from_fn(|i| softplus(self.attr_sex_u[i])),
            ethnicity: std::array::from_fn(|i| softplus(self.attr_eth_u[i])),
            vaccination: std::array::from_fn(|i| softplus(self.attr_vax_u[i])),
        };
        attr.age[REF_AGE_BAND] = 1.0;
        attr.sex[REF_SEX] = 1.0;
        attr.ethnicity[REF_ETHNICITY] = 1.0;
        attr.vaccination[REF_VACCINATION] = 1.0;
        DiseaseParams {
            beta: sigmoid(self.beta_u),
            phi,
            theta_ei,
            theta_ir: theta_ei + softplus(self.theta_gap_u),
            gamma_shape: 1.0 + softplus(self.gamma_shape_u),
            gamma_scale: softplus(self.gamma_scale_u),
            r_scale: softplus(self.r_scale_u),
            venue_params: VenueKindParams {
                rho: std::array::from_fn(|k| softplus(self.rho_u[k])),
                q: std::array::from_fn(|k| softplus(self.q_u[k])),
            },
            psi1: sigmoid(self.psi1_u),
            psi2: sigmoid(self.psi2_u),
            attr_susceptibility: attr,
            gate_sharpness: self.gate_sharpness,
            temperature: self.temperature,
            phi_max: self.phi_max,
            modulator: self.modulator.clone(),
        }
    }

    fn groups(&self) -> Vec<Group> {
        let mut g = vec![Group::Beta];
        g.extend([Group::Timing; 4]);
        g.push(Group::RScale);
        g.extend([Group::Venues; 12]);
        g.extend([Group::Vaccine; 2]);
        // 13 non-reference attribute factors
        g.extend([Group::Attributes; 6 + 1 + 5 + 1]);
        g.extend(std::iter::repeat(Group::Phi).take(self.phi_u.len()));
        if let Some(m) = &self.modulator {
            g.extend(std::iter::repeat(Group::Modulator).take(m.n_params()));
        }
        g
    }

    pub fn flat_len(&self) -> usize {
        self.groups().len()
    }

    pub fn trainable_mask(&self, flags: &LearnFlags) -> Vec<bool> {
        self.groups().iter().map(|g| g.enabled(flags)).collect()
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut v = vec![
            self.beta_u,
            self.theta_ei_u,
            self.theta_gap_u,
            self.gamma_shape_u,
            self.gamma_scale_u,
            self.r_scale_u,
        ];
        for k in 0..6 {
            v.push(self.rho_u[k]);
            v.push(self.q_u[k]);
        }
        v.push(self.psi1_u);
        v.push(self.psi2_u);
        for (i, &x) in self.attr_age_u.iter().enumerate() {
            if i != REF_AGE_BAND {
                v.push(x);
            }
        }
        for (i, &x) in self.attr_sex_u.iter().enumerate() {
            if i != REF_SEX {
                v.push(x);
            }
        }
        for (i, &x) in self.attr_eth_u.iter().enumerate() {
            if i != REF_ETHNICITY {
                v.push(x);
            }
        }
        for (i, &x) in self.attr_vax_u.iter().enumerate() {
            if i != REF_VACCINATION {
                v.push(x);
            }
        }
        v.extend(&self.phi_u);
        if let Some(m) = &self.modulator {
            for g in &m.gates {
                v.extend(&g.wx);
                v.extend(&g.wh);
                v.extend(&g.b);
            }
            v.extend(&m.head_w);
            v.extend(m.head_b);
        }
        v
    }

    pub fn assign_flat(&mut self, v: &[f64]) {
        assert_eq!(v.len(), self.flat_len(), "flat length mismatch");
        let mut it = v.iter().copied();
        let mut next = || it.next().expect("length checked");
        self.beta_u = next();
        self.theta_ei_u = next();
        self.theta_gap_u = next();
        self.gamma_shape_u = next();
        self.gamma_scale_u = next();
        self.r_scale_u = next();
        for k in 0..6 {
            self.rho_u[k] = next();
            self.q_u[k] = next();
        }
        self.psi1_u = next();
        self.psi2_u = next();
        for i in 0..7 {
            if i != REF_AGE_BAND {
                self.attr_age_u[i] = next();
            }
        }
        for i in 0..2 {
            if i != REF_SEX {
                self.attr_sex_u[i] = next();
            }
        }
        for i in 0..6 {
            if i != REF_ETHNICITY {
                self.attr_eth_u[i] = next();
            }
        }
        for i in 0..2 {
            if i != REF_VACCINATION {
                self.attr_vax_u[i] = next();
            }
        }
        for slot in self.phi_u.iter_mut() {
            *slot = next();
        }
        if let Some(m) = &mut self.modulator {
            for g in &mut m.gates {
                for slot in g.wx.iter_mut().chain(g.wh.iter_mut()).chain(g.b.iter_mut()) {
                    *slot = next();
                }
            }
            for slot in m.head_w.iter_mut().chain(m.head_b.iter_mut()) {
                *slot = next();
            }
        }
    }

    /// Lifts unconstrained leaves onto the tape and applies the transforms,
    /// producing constrained [`TapeParams`].
    pub fn lift(&self, tape: &mut Tape) -> Result<LiftedParams, SimError> {
        let mut leaves: Vec<Tensor> = Vec::new();
        let mut flat_map: Vec<(usize, usize)> = Vec::new();
        let scalar_leaf = |tape: &mut Tape, v: f64, leaves: &mut Vec<Tensor>, map: &mut Vec<(usize, usize)>| -> Result<Tensor, SimError> {
            let t = tape.leaf_scalar(v, true)?;
            leaves.push(t.clone());
            map.push((leaves.len() - 1, 0));
            Ok(t)
        };

        let beta_l = scalar_leaf(tape, self.beta_u, &mut leaves, &mut flat_map)?;
        let tei_l = scalar_leaf(tape, self.theta_ei_u, &mut leaves, &mut flat_map)?;
        let gap_l = scalar_leaf(tape, self.theta_gap_u, &mut leaves, &mut flat_map)?;
        let shape_l = scalar_leaf(tape, self.gamma_shape_u, &mut leaves, &mut flat_map)?;
        let scale_l = scalar_leaf(tape, self.gamma_scale_u, &mut leaves, &mut flat_map)?;
        let r_l = scalar_leaf(tape, self.r_scale_u, &mut leaves, &mut flat_map)?;
        let mut rho_l = Vec::new();
        let mut q_l = Vec::new();
        for k in 0..6 {
            rho_l.push(scalar_leaf(tape, self.rho_u[k], &mut leaves, &mut flat_map)?);
            q_l.push(scalar_leaf(tape, self.q_u[k], &mut leaves, &mut flat_map)?);
        }
        let psi1_l = scalar_leaf(tape, self.psi1_u, &mut leaves, &mut flat_map)?;
        let psi2_l = scalar_leaf(tape, self.psi2_u, &mut leaves, &mut flat_map)?;

        let attr_leaf = |tape: &mut Tape, vals: &[f64], refi: usize, leaves: &mut Vec<Tensor>, map: &mut Vec<(usize, usize)>| -> Result<Vec<Option<Tensor>>, SimError> {
            let mut out = Vec::new();
            for (i, &v) in vals.iter().enumerate() {
                if i == refi {
                    out.push(None);
                } else {
                    let t = tape.leaf_scalar(v, true)?;
                    leaves.push(t.clone());
                    map.push((leaves.len() - 1, 0));
                    out.push(Some(t));
                }
            }
            Ok(out)
        };
        let age_l = attr_leaf(tape, &self.attr_age_u, REF_AGE_BAND, &mut leaves, &mut flat_map)?;
        let sex_l = attr_leaf(tape, &self.attr_sex_u, REF_SEX, &mut leaves, &mut flat_map)?;
        let eth_l = attr_leaf(tape, &self.attr_eth_u, REF_ETHNICITY, &mut leaves, &mut flat_map)?;
        let vax_l = attr_leaf(tape, &self.attr_vax_u, REF_VACCINATION, &mut leaves, &mut flat_map)?;

        let mut phi_l = Vec::new();
        for &u in &self.phi_u {
            phi_l.push(scalar_leaf(tape, u, &mut leaves, &mut flat_map)?);
        }

        let modulator = match &self.modulator {
            None => None,
            Some(w) => {
                let h = w.hidden;
                let mut lift_vec = |tape: &mut Tape, vals: &[f64], shape: Vec<usize>| -> Result<Tensor, SimError> {
                    let t = tape.leaf(vals.to_vec(), shape, true)?;
                    leaves.push(t.clone());
                    let li = leaves.len() - 1;
                    for off in 0..vals.len() {
                        flat_map.push((li, off));
                    }
                    Ok(t)
                };
                let mut gates = Vec::new();
                for g in &w.gates {
                    let wx = lift_vec(tape, &g.wx, vec![h])?;
                    let wh = lift_vec(tape, &g.wh, vec![h, h])?;
                    let b = lift_vec(tape, &g.b, vec![h])?;
                    gates.push((wx, wh, b));
                }
                let head_w = lift_vec(tape, &w.head_w, vec![2, h])?;
                let head_b = lift_vec(tape, &w.head_b, vec![2])?;
                let gates: [(Tensor, Tensor, Tensor); 4] = gates.try_into().map_err(|_| {
                    SimError::Domain("modulator gate count".into())
                })?;
                Some(TapeModulator { hidden: h, gates, head_w, head_b, phi_max: self.phi_max })
            }
        };

        // constrained transforms
        let beta = tape.sigmoid(&beta_l)?;
        let theta_ei = tape.softplus(&tei_l)?;
        let gap = tape.softplus(&gap_l)?;
        let theta_ir = tape.add(&theta_ei, &gap)?;
        let sp_shape = tape.softplus(&shape_l)?;
        let gamma_shape = tape.add_scalar(&sp_shape, 1.0)?;
        let gamma_scale = tape.softplus(&scale_l)?;
        let r_scale = tape.softplus(&r_l)?;
        let mut rho = Vec::new();
        let mut q = Vec::new();
        for k in 0..6 {
            rho.push(tape.softplus(&rho_l[k])?);
            q.push(tape.softplus(&q_l[k])?);
        }
        let psi1 = tape.sigmoid(&psi1_l)?;
        let psi2 = tape.sigmoid(&psi2_l)?;
        let lift_attr = |tape: &mut Tape, ls: &[Option<Tensor>]| -> Result<Vec<Tensor>, SimError> {
            let mut out = Vec::new();
            for l in ls {
                out.push(match l {
                    Some(t) => tape.softplus(t)?,
                    None => Tensor::scalar(1.0)?,
                });
            }
            Ok(out)
        };
        let attr_age = lift_attr(tape, &age_l)?;
        let attr_sex = lift_attr(tape, &sex_l)?;
        let attr_eth = lift_attr(tape, &eth_l)?;
        let attr_vax = lift_attr(tape, &vax_l)?;
        let mut phi = Vec::new();
        for l in &phi_l {
            let s = tape.sigmoid(l)?;
            phi.push(tape.scale(&s, self.phi_max)?);
        }
        if phi.is_empty() && modulator.is_none() {
            phi.push(Tensor::scalar(0.0)?);
        }

        Ok(LiftedParams {
            tape_params: TapeParams {
                beta,
                theta_ei,
                theta_ir,
                gamma_shape,
                gamma_scale,
                r_scale,
                rho,
                q,
                psi1,
                psi2,
                attr_age,
                attr_sex,
                attr_eth,
                attr_vax,
                phi,
                modulator,
                gate_sharpness: self.gate_sharpness,
                temperature: self.temperature,
                phi_max: self.phi_max,
            },
            leaves,
            flat_map,
        })
    }
}

/// Uniform draw in +-sqrt(6 / (fan_in + fan_out)).
pub fn xavier_uniform<R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize, n: usize) -> Vec<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-bound..=bound)).collect()
}

/// Scalar parameters start at the configured midpoints (in unconstrained
/// space); modulator weights are Xavier-uniform with zero biases.
pub fn init_xavier(
    init: &DiseaseParams,
    config: &CalibrationConfig,
    seed: u64,
) -> Result<LearnableParamSet, CalibError> {
    let mut template = init.clone();
    if config.use_modulator {
        let h = config.hidden;
        if h == 0 {
            return Err(CalibError::InvalidConfig("hidden size must be positive".into()));
        }
        let mut rng = derive_rng(seed, salt::INIT);
        let mut gate = || crate::epi_model::GateWeights {
            wx: xavier_uniform(&mut rng, 1, h, h),
            wh: xavier_uniform(&mut rng, h, h, h * h),
            b: vec![0.0; h],
        };
        let gates = [gate(), gate(), gate(), gate()];
        template.modulator = Some(ModulatorWeights {
            hidden: h,
            gates,
            head_w: xavier_uniform(&mut rng, h, 2, 2 * h),
            head_b: [0.0; 2],
        });
    } else {
        template.modulator = None;
    }
    LearnableParamSet::from_params(&template)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::population::VenueKind;

    #[test]
    fn transform_round_trip_within_tolerance() {
        let p = DiseaseParams {
            beta: 3e-4,
            theta_ei: 9.3,
            theta_ir: 17.2,
            gamma_shape: 2.41,
            gamma_scale: 0.5,
            r_scale: 0.07,
            psi1: 0.93,
            psi2: 0.81,
            ..Default::default()
        };
        let set = LearnableParamSet::from_params(&p).unwrap();
        let back = set.to_params();
        assert!((back.beta - p.beta).abs() < 1e-9);
        assert!((back.theta_ei - p.theta_ei).abs() < 1e-9);
        assert!((back.theta_ir - p.theta_ir).abs() < 1e-9);
        assert!((back.gamma_shape - p.gamma_shape).abs() < 1e-9);
        assert!((back.gamma_scale - p.gamma_scale).abs() < 1e-9);
        assert!((back.r_scale - p.r_scale).abs() < 1e-9);
        assert!((back.psi1 - p.psi1).abs() < 1e-9);
        assert!((back.psi2 - p.psi2).abs() < 1e-9);
        back.validate().unwrap();
    }

    #[test]
    fn flat_round_trip() {
        let mut set = LearnableParamSet::from_params(&DiseaseParams::default()).unwrap();
        set.modulator = Some(ModulatorWeights::zeros(3));
        let mut flat = set.flat();
        assert_eq!(flat.len(), set.flat_len());
        for (i, v) in flat.iter_mut().enumerate() {
            *v += i as f64 * 0.01;
        }
        let mut set2 = set.clone();
        set2.assign_flat(&flat);
        assert_eq!(set2.flat(), flat);
    }

    #[test]
    fn constrained_params_always_valid() {
        // random unconstrained values must map into the valid region
        let mut set = LearnableParamSet::from_params(&DiseaseParams::default()).unwrap();
        let mut rng = derive_rng(3, 9);
        for _ in 0..50 {
            let flat: Vec<f64> = (0..set.flat_len()).map(|_| rng.gen_range(-8.0..8.0)).collect();
            set.assign_flat(&flat);
            set.to_params().validate().unwrap();
        }
    }

    #[test]
    fn xavier_bound_for_unit_fans() {
        let mut rng = derive_rng(0, 1);
        let draws = xavier_uniform(&mut rng, 1, 1, 10_000);
        let bound = 3.0_f64.sqrt();
        assert!(draws.iter().all(|v| v.abs() <= bound));
        // empirical mean within 3 sigma of 0: sigma_mean = bound/sqrt(3 n)
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let sigma_mean = bound / (3.0 * draws.len() as f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma_mean, "mean {mean} vs 3 sigma {}", 3.0 * sigma_mean);
    }

    #[test]
    fn xavier_init_deterministic() {
        let cfg = CalibrationConfig { hidden: 4, ..Default::default() };
        let a = init_xavier(&DiseaseParams::default(), &cfg, 9).unwrap();
        let b = init_xavier(&DiseaseParams::default(), &cfg, 9).unwrap();
        assert_eq!(a, b);
        let c = init_xavier(&DiseaseParams::default(), &cfg, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn lift_matches_plain_transforms() {
        let set = LearnableParamSet::from_params(&DiseaseParams {
            beta: 0.01,
            ..DiseaseParams::default()
        })
        .unwrap();
        let p = set.to_params();
        let mut tape = Tape::new();
        let lifted = set.lift(&mut tape).unwrap();
        assert!((lifted.tape_params.beta.item() - p.beta).abs() < 1e-12);
        assert!((lifted.tape_params.theta_ir.item() - p.theta_ir).abs() < 1e-12);
        assert!((lifted.tape_params.gamma_shape.item() - p.gamma_shape).abs() < 1e-12);
        for k in VenueKind::ALL {
            assert!(
                (lifted.tape_params.rho[k.index()].item() - p.venue_params.rho[k.index()]).abs()
                    < 1e-12
            );
        }
        assert_eq!(lifted.flat_map.len(), set.flat_len());
    }
}
