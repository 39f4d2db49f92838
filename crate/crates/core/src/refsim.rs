//! Naive object-style reference simulator: one struct per agent, nested
//! venue loops, sequential Bernoulli draws, no tensors and no tape. It
//! deliberately shares no numerical code with `epi_model` (only type
//! definitions), so statistical agreement between the two is evidence of
//! correctness rather than tautology.

use rand::Rng;

use crate::epi_model::{DiseaseParams, EpidemicTrace, ModulatorWeights, SimError};
use crate::interventions::PolicySet;
use crate::population::{AgeBand, ContactGraph, Population, VenueKind};
use crate::rng::{derive_rng, salt};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Susceptible,
    Exposed,
    Infectious,
    Recovered,
}

/// Per-agent record keeping every field in one allocation, the way a
/// conventional agent-based model would.
struct RefAgent {
    stage: Stage,
    infection_day: i64,
    vaccinated: bool,
    h_attr_base: f64,
    detected: bool,
    detection_tried: bool,
    isolated_until: i64,
    quarantined_until: i64,
    region: usize,
    venues: Vec<u32>,
}

/// Independent windowed-Gamma profile: density ratio against the mode,
/// written without log-Gamma so the route differs from the tape's.
fn ref_profile(dt: f64, v: f64, lambda: f64, theta_ei: f64, theta_ir: f64, k: f64) -> f64 {
    if dt <= 0.0 {
        return 0.0;
    }
    let mode = (v - 1.0) * lambda;
    let ratio = (dt / mode).powf(v - 1.0) * (-(dt - mode) / lambda).exp();
    let gate = |x: f64| 1.0 / (1.0 + (-x).exp());
    ratio * gate(k * (dt - theta_ei)) * gate(k * (theta_ir - dt))
}

/// Independent LSTM forward pass for the weekly modulator.
fn ref_modulator(w: &ModulatorWeights, h: &mut Vec<f64>, c: &mut Vec<f64>, x: f64, phi_max: f64) -> (f64, f64) {
    let n = w.hidden;
    let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
    let act = |gate: &crate::epi_model::GateWeights, r: usize, h: &[f64]| -> f64 {
        let mut z = gate.wx[r] * x + gate.b[r];
        for (j, hj) in h.iter().enumerate() {
            z += gate.wh[r * n + j] * hj;
        }
        z
    };
    let mut new_h = vec![0.0; n];
    let mut new_c = vec![0.0; n];
    for r in 0..n {
        let i_g = sig(act(&w.gates[0], r, h));
        let f_g = sig(act(&w.gates[1], r, h));
        let g_g = act(&w.gates[2], r, h).tanh();
        let o_g = sig(act(&w.gates[3], r, h));
        new_c[r] = f_g * c[r] + i_g * g_g;
        new_h[r] = o_g * new_c[r].tanh();
    }
    let mut out = [w.head_b[0], w.head_b[1]];
    for (row, slot) in out.iter_mut().enumerate() {
        for (j, hj) in new_h.iter().enumerate() {
            *slot += w.head_w[row * n + j] * hj;
        }
    }
    *h = new_h;
    *c = new_c;
    (2.0 * sig(out[0]), phi_max * sig(out[1]))
}

/// Sequential per-agent reference run; accepts the same inputs as
/// `epi_model::run` and emits the same trace schema.
pub fn run_reference(
    pop: &Population,
    _graph: &ContactGraph,
    params: &DiseaseParams,
    policies: &PolicySet,
    horizon_days: usize,
    seed: u64,
) -> Result<EpidemicTrace, SimError> {
    if horizon_days == 0 {
        return Err(SimError::Domain("horizon must be at least 1 day".into()));
    }
    params.validate()?;
    policies.validate().map_err(SimError::Domain)?;

    let n = pop.n_agents();
    let mut regions: Vec<&str> = Vec::new();
    let mut agents: Vec<RefAgent> = pop
        .agents
        .iter()
        .map(|a| {
            let attr = &params.attr_susceptibility;
            let region = match regions.iter().position(|r| *r == a.region) {
                Some(i) => i,
                None => {
                    regions.push(a.region.as_str());
                    regions.len() - 1
                }
            };
            RefAgent {
                stage: Stage::Susceptible,
                infection_day: -1,
                vaccinated: a.vaccinated,
                h_attr_base: attr.age[AgeBand::of(a.age).0]
                    * attr.sex[a.sex.index()]
                    * attr.ethnicity[a.ethnicity.index()],
                detected: false,
                detection_tried: false,
                isolated_until: 0,
                quarantined_until: 0,
                region,
                venues: Vec::new(),
            }
        })
        .collect();
    for v in &pop.venues {
        for &m in &v.members {
            agents[m as usize].venues.push(v.id);
        }
    }
    let mut closed_until: Vec<i64> = vec![0; pop.n_venues()];

    let mut seed_rng = derive_rng(seed, salt::SEEDING);
    let mut day_rng = derive_rng(seed, salt::TRANSMISSION);
    let mut policy_rng = derive_rng(seed, salt::POLICY);

    let mut trace = EpidemicTrace::with_capacity(horizon_days, n);

    // day 0: seeding
    let mut seeds = 0.0;
    for (i, agent) in agents.iter_mut().enumerate() {
        if seed_rng.gen::<f64>() < params.beta {
            agent.stage = Stage::Exposed;
            agent.infection_day = 0;
            trace.infection_time[i] = Some(0);
            seeds += 1.0;
        }
    }

    let mut mod_h = vec![0.0; params.modulator.as_ref().map_or(1, |m| m.hidden)];
    let mut mod_c = mod_h.clone();
    let step_mod = |h: &mut Vec<f64>, c: &mut Vec<f64>, x: f64| -> (f64, f64) {
        match &params.modulator {
            Some(w) => ref_modulator(w, h, c, x, params.phi_max),
            None => (1.0, 0.0),
        }
    };
    let (mut r_mult, mut phi) = step_mod(&mut mod_h, &mut mod_c, seeds / n as f64);
    if params.modulator.is_none() {
        phi = params.phi.at_week(0);
    }
    let mut week_incidence = seeds;

    record(&mut trace, &agents, seeds, r_mult, phi);

    let detection_threshold = (params.theta_ei + policies.icc.detection_delay_days).ceil();

    for day in 1..horizon_days as i64 {
        if day % 7 == 0 {
            let (rm, ph) = step_mod(&mut mod_h, &mut mod_c, week_incidence / n as f64);
            r_mult = rm;
            phi = if params.modulator.is_none() {
                params.phi.at_week((day / 7) as usize)
            } else {
                ph
            };
            week_incidence = 0.0;
        }

        // stage progression
        for agent in agents.iter_mut() {
            if agent.infection_day < 0 {
                continue;
            }
            let dt = (day - agent.infection_day) as f64;
            agent.stage = if dt < params.theta_ei {
                Stage::Exposed
            } else if dt < params.theta_ir {
                Stage::Infectious
            } else {
                Stage::Recovered
            };
        }

        // policies, agent by agent
        let mut campaign_regions: Vec<usize> = Vec::new();
        if policies.any_enabled() {
            let mut newly_detected: Vec<usize> = Vec::new();
            for i in 0..n {
                let a = &mut agents[i];
                if a.detection_tried || a.stage != Stage::Infectious {
                    continue;
                }
                let dt = (day - a.infection_day) as f64;
                if dt < detection_threshold {
                    continue;
                }
                a.detection_tried = true;
                if policy_rng.gen::<f64>() < policies.icc.detection_probability {
                    a.detected = true;
                    newly_detected.push(i);
                }
            }
            for &i in &newly_detected {
                if policies.icc.enabled && policy_rng.gen::<f64>() < policies.icc.compliance_rate {
                    agents[i].isolated_until = day + i64::from(policies.icc.isolation_days);
                }
                if policies.qec.enabled {
                    let venues = agents[i].venues.clone();
                    for vid in venues {
                        let members = pop.venues[vid as usize].members.clone();
                        for m in members {
                            let m = m as usize;
                            if m == i || agents[m].vaccinated {
                                continue;
                            }
                            if policy_rng.gen::<f64>() < policies.qec.tracing_rate {
                                let until = day + i64::from(policies.qec.quarantine_days);
                                agents[m].quarantined_until = agents[m].quarantined_until.max(until);
                            }
                        }
                    }
                }
                if policies.sc.enabled {
                    for &vid in &agents[i].venues {
                        let venue = &pop.venues[vid as usize];
                        if venue.kind == VenueKind::School && day >= closed_until[vid as usize] {
                            closed_until[vid as usize] = day + i64::from(policies.sc.closure_days);
                        }
                    }
                }
            }
            if policies.vc.enabled {
                for a in agents.iter() {
                    if a.detected && a.stage == Stage::Infectious && !campaign_regions.contains(&a.region) {
                        campaign_regions.push(a.region);
                    }
                }
            }
        }

        // transmission: nested venue loops per susceptible agent
        let mut to_infect: Vec<usize> = Vec::new();
        let mut to_vaccinate: Vec<usize> = Vec::new();
        for i in 0..n {
            if agents[i].stage != Stage::Susceptible {
                continue;
            }
            let me = &agents[i];
            let h_attr = me.h_attr_base
                * params.attr_susceptibility.vaccination[usize::from(me.vaccinated)];
            let mut hazard = 0.0;
            for &vid in &me.venues {
                if day < closed_until[vid as usize] {
                    continue;
                }
                let venue = &pop.venues[vid as usize];
                for &m in &venue.members {
                    let other = &agents[m as usize];
                    if m as usize == i || other.infection_day < 0 {
                        continue;
                    }
                    if day < other.isolated_until || day < other.quarantined_until {
                        continue;
                    }
                    let dt = (day - other.infection_day) as f64;
                    hazard += params.r_scale
                        * r_mult
                        * h_attr
                        * (params.venue_params.rho[venue.kind.index()]
                            / params.venue_params.q[venue.kind.index()])
                        * ref_profile(
                            dt,
                            params.gamma_shape,
                            params.gamma_scale,
                            params.theta_ei,
                            params.theta_ir,
                            params.gate_sharpness,
                        )
                        * (1.0 - params.psi1 * f64::from(me.vaccinated))
                        * (1.0 - params.psi2 * f64::from(other.vaccinated));
                }
            }
            let mut p = 1.0 - (-hazard).exp();
            if day < me.quarantined_until {
                p = 0.0;
            }
            let p_total = 1.0 - (1.0 - p) * (1.0 - phi);
            if day_rng.gen::<f64>() < p_total {
                to_infect.push(i);
            }
        }
        for i in 0..n {
            let a = &agents[i];
            if policies.vc.enabled
                && !a.vaccinated
                && day >= a.quarantined_until
                && campaign_regions.contains(&a.region)
                && policy_rng.gen::<f64>() < policies.vc.daily_vaccination_rate
            {
                to_vaccinate.push(i);
            }
        }

        let new_count = to_infect.len() as f64;
        for i in to_infect {
            agents[i].stage = Stage::Exposed;
            agents[i].infection_day = day;
            trace.infection_time[i] = Some(day as u32);
        }
        for i in to_vaccinate {
            agents[i].vaccinated = true;
        }
        week_incidence += new_count;

        record(&mut trace, &agents, new_count, r_mult, phi);
    }

    trace.check_conserved(n, 1e-9)?;
    Ok(trace)
}

fn record(trace: &mut EpidemicTrace, agents: &[RefAgent], new_count: f64, r_mult: f64, phi: f64) {
    let (mut s, mut e, mut i_c, mut r) = (0.0, 0.0, 0.0, 0.0);
    for a in agents {
        if a.infection_day < 0 {
            s += 1.0;
        } else {
            match a.stage {
                // agents infected this step were set to Exposed already
                Stage::Susceptible | Stage::Exposed => e += 1.0,
                Stage::Infectious => i_c += 1.0,
                Stage::Recovered => r += 1.0,
            }
        }
    }
    trace.new_infections.push(new_count);
    trace.s.push(s);
    trace.e.push(e);
    trace.i.push(i_c);
    trace.r.push(r);
    trace.r_mult.push(r_mult);
    trace.phi.push(phi);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::epi_model::PhiSchedule;
    use crate::population::{build_contact_graph, Agent, Ethnicity, Sex, Venue};

    fn pair_population() -> Population {
        let mk = |id: u32| Agent {
            id,
            age: 30,
            sex: Sex::Female,
            ethnicity: Ethnicity::European,
            vaccinated: false,
            household_id: 0,
            school_id: None,
            work_id: None,
            region: "r".into(),
        };
        Population {
            agents: vec![mk(0), mk(1)],
            venues: vec![Venue {
                id: 0,
                kind: VenueKind::Household,
                region: "r".into(),
                members: vec![0, 1],
            }],
        }
    }

    #[test]
    fn zero_parameters_zero_epidemic() {
        let pop = pair_population();
        let graph = build_contact_graph(&pop);
        let params = DiseaseParams {
            beta: 0.0,
            phi: PhiSchedule::Constant(0.0),
            ..DiseaseParams::default()
        };
        let t = run_reference(&pop, &graph, &params, &PolicySet::default(), 20, 1).unwrap();
        assert_eq!(t.cumulative_infections(), 0.0);
    }

    #[test]
    fn household_pair_frequency_matches_closed_form() {
        let pop = pair_population();
        let graph = build_contact_graph(&pop);
        let params = DiseaseParams {
            beta: 0.5,
            phi: PhiSchedule::Constant(0.0),
            r_scale: 0.8,
            theta_ei: 2.0,
            theta_ir: 8.0,
            gamma_scale: 2.0,
            psi1: 0.0,
            psi2: 0.0,
            ..DiseaseParams::default()
        };
        // closed-form single-day infection probability at dt = 1
        let rate = params.r_scale
            * ref_profile(1.0, params.gamma_shape, params.gamma_scale, params.theta_ei, params.theta_ir, params.gate_sharpness);
        let p_expect = 1.0 - (-rate).exp();

        let mut eligible = 0.0;
        let mut hits = 0.0;
        for seed in 0..10_000 {
            let t = run_reference(&pop, &graph, &params, &PolicySet::default(), 2, seed).unwrap();
            let seeded: Vec<bool> = t.infection_time.iter().map(|x| x == &Some(0)).collect();
            if seeded.iter().filter(|&&b| b).count() != 1 {
                continue;
            }
            eligible += 1.0;
            if t.new_infections[1] > 0.0 {
                hits += 1.0;
            }
        }
        let freq = hits / eligible;
        let sigma = (p_expect * (1.0 - p_expect) / eligible).sqrt();
        assert!(
            (freq - p_expect).abs() < 3.0 * sigma,
            "freq {freq} vs closed form {p_expect} with sigma {sigma}"
        );
    }

    #[test]
    fn conservation_and_determinism() {
        let spec = crate::population::PopulationSpec { n_agents: 150, ..Default::default() };
        let pop = crate::population::generate_synthetic(&spec, 3).unwrap();
        let graph = build_contact_graph(&pop);
        let params = DiseaseParams {
            beta: 0.03,
            r_scale: 0.5,
            theta_ei: 3.0,
            theta_ir: 9.0,
            gamma_scale: 3.0,
            ..DiseaseParams::default()
        };
        let a = run_reference(&pop, &graph, &params, &PolicySet::default(), 40, 77).unwrap();
        let b = run_reference(&pop, &graph, &params, &PolicySet::default(), 40, 77).unwrap();
        assert_eq!(a, b);
        a.check_conserved(150, 0.0).unwrap();
    }
}
