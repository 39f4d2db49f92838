//! Plain hard-sampling engine: integer draws, no tape. Consumes exactly two
//! uniforms per agent per day so paired-seed experiments stay coupled when
//! policies change the probabilities.

use rand::Rng;

use crate::interventions::{
    apply_icc, apply_qec, apply_school_closure, apply_vaccination_campaign,
    compose_control_modifier, detect_cases, ControlModifier, PolicyAudit, PolicySet, PolicyState,
};
use crate::population::{ContactGraph, Population};
use crate::rng::{derive_rng, salt};

use super::modulator::{lstm_step_plain, PlainModulatorState};
use super::params::DiseaseParams;
use super::profile::profile_scalar;
use super::trace::EpidemicTrace;
use super::SimError;

pub(crate) fn run_hard(
    pop: &Population,
    graph: &ContactGraph,
    params: &DiseaseParams,
    policies: &PolicySet,
    horizon_days: usize,
    seed: u64,
) -> Result<(EpidemicTrace, PolicyAudit), SimError> {
    let n = pop.n_agents();
    let nv = pop.n_venues();
    let mut trace = EpidemicTrace::with_capacity(horizon_days, n);

    let mut infection_day: Vec<i64> = vec![-1; n];
    let mut vaccinated: Vec<bool> = pop.agents.iter().map(|a| a.vaccinated).collect();
    // age/sex/ethnicity part of h_attr; the vaccination factor tracks campaigns
    let h_base: Vec<f64> = pop
        .agents
        .iter()
        .map(|a| {
            let attr = &params.attr_susceptibility;
            attr.age[crate::population::AgeBand::of(a.age).0]
                * attr.sex[a.sex.index()]
                * attr.ethnicity[a.ethnicity.index()]
        })
        .collect();

    let mut seed_rng = derive_rng(seed, salt::SEEDING);
    let mut trans_rng = derive_rng(seed, salt::TRANSMISSION);
    let mut policy_rng = derive_rng(seed, salt::POLICY);

    let mut policy_state = PolicyState::new(n, nv);
    let mut modulator_state = params.modulator.as_ref().map(|m| PlainModulatorState::zeros(m.hidden));

    // day 0: seeding
    let mut seeds = 0.0;
    for a in 0..n {
        let u: f64 = seed_rng.gen();
        if u < params.beta {
            infection_day[a] = 0;
            trace.infection_time[a] = Some(0);
            seeds += 1.0;
        }
    }

    let mut week_incidence = seeds;
    let advance_modulator = |state: &mut Option<PlainModulatorState>, x: f64| -> (f64, f64) {
        match (state, &params.modulator) {
            (Some(st), Some(w)) => lstm_step_plain(w, st, x, params.phi_max),
            _ => (1.0, 0.0),
        }
    };
    let (mut r_mult, mut phi_w) = advance_modulator(&mut modulator_state, seeds / n as f64);
    if params.modulator.is_none() {
        phi_w = params.phi.at_week(0);
    }

    push_row(&mut trace, &infection_day, 0, params, seeds, r_mult, phi_w, n)?;

    let rho_q: [f64; 6] = std::array::from_fn(|k| params.rho_over_q(k));

    for day in 1..horizon_days as i64 {
        // weekly modulator update with the previous week's normalized incidence
        if day % 7 == 0 {
            let (rm, ph) = advance_modulator(&mut modulator_state, week_incidence / n as f64);
            r_mult = rm;
            phi_w = if params.modulator.is_none() {
                params.phi.at_week((day / 7) as usize)
            } else {
                ph
            };
            week_incidence = 0.0;
        }

        let is_infectious: Vec<bool> = (0..n)
            .map(|a| {
                infection_day[a] >= 0 && {
                    let dt = (day - infection_day[a]) as f64;
                    dt >= params.theta_ei && dt < params.theta_ir
                }
            })
            .collect();

        // outbreak controls
        let (ctl, newly_vaccinated) = if policies.any_enabled() {
            let newly = detect_cases(
                &mut policy_state,
                day,
                &infection_day,
                &is_infectious,
                policies,
                params.theta_ei,
                &mut policy_rng,
            );
            let icc = apply_icc(&mut policy_state, &newly, day, policies, nv, &mut policy_rng);
            let qec = apply_qec(&mut policy_state, &newly, day, pop, &vaccinated, policies, &mut policy_rng);
            let sc = apply_school_closure(&mut policy_state, &newly, day, pop, policies);
            let ctl = compose_control_modifier(&[icc, qec, sc]);
            let vc = apply_vaccination_campaign(
                &policy_state,
                day,
                pop,
                &vaccinated,
                &is_infectious,
                policies,
                &mut policy_rng,
            );
            (ctl, vc)
        } else {
            (ControlModifier::identity(n, nv), Vec::new())
        };

        // infector-side contribution per agent
        let mut contrib = vec![0.0f64; n];
        for a in 0..n {
            if infection_day[a] < 0 {
                continue;
            }
            let dt = (day - infection_day[a]) as f64;
            let prof = profile_scalar(
                dt,
                params.gamma_shape,
                params.gamma_scale,
                params.theta_ei,
                params.theta_ir,
                params.gate_sharpness,
            );
            contrib[a] = prof
                * (1.0 - params.psi2 * f64::from(vaccinated[a]))
                * ctl.infector_factor[a];
        }

        // venue loads, then per-agent hazards over open venues
        let mut load = vec![0.0f64; nv];
        for e in 0..graph.n_edges() {
            load[graph.edge_venue[e] as usize] += contrib[graph.edge_agent[e] as usize];
        }
        let mut hazard = vec![0.0f64; n];
        for e in 0..graph.n_edges() {
            let v = graph.edge_venue[e] as usize;
            if ctl.venue_open[v] == 0.0 {
                continue;
            }
            let a = graph.edge_agent[e] as usize;
            let others = (load[v] - contrib[a]).max(0.0);
            hazard[a] += rho_q[graph.edge_kind[e].index()] * others;
        }

        let mut new_count = 0.0;
        for a in 0..n {
            let u1: f64 = trans_rng.gen();
            let u2: f64 = trans_rng.gen();
            if infection_day[a] >= 0 {
                continue;
            }
            let vax_attr = params.attr_susceptibility.vaccination[usize::from(vaccinated[a])];
            let lambda = params.r_scale
                * r_mult
                * h_base[a]
                * vax_attr
                * (1.0 - params.psi1 * f64::from(vaccinated[a]))
                * hazard[a];
            let p = ctl.susceptible_factor[a] * (1.0 - (-lambda).exp());
            if u1 < p || u2 < phi_w {
                infection_day[a] = day;
                trace.infection_time[a] = Some(day as u32);
                new_count += 1.0;
            }
        }
        week_incidence += new_count;

        // campaign vaccinations take effect from the next day
        for a in newly_vaccinated {
            vaccinated[a as usize] = true;
        }

        push_row(&mut trace, &infection_day, day, params, new_count, r_mult, phi_w, n)?;
    }

    trace.check_conserved(n, 1e-9)?;
    Ok((trace, policy_state.audit))
}

#[allow(clippy::too_many_arguments)]
fn push_row(
    trace: &mut EpidemicTrace,
    infection_day: &[i64],
    day: i64,
    params: &DiseaseParams,
    new_count: f64,
    r_mult: f64,
    phi: f64,
    n: usize,
) -> Result<(), SimError> {
    let (mut s, mut e, mut i, mut r) = (0usize, 0usize, 0usize, 0usize);
    for &t0 in infection_day {
        if t0 < 0 {
            s += 1;
        } else {
            let dt = (day - t0) as f64;
            if dt < params.theta_ei {
                e += 1;
            } else if dt < params.theta_ir {
                i += 1;
            } else {
                r += 1;
            }
        }
    }
    if s + e + i + r != n {
        return Err(SimError::InconsistentState(format!(
            "day {day}: compartments sum to {}",
            s + e + i + r
        )));
    }
    trace.new_infections.push(new_count);
    trace.s.push(s as f64);
    trace.e.push(e as f64);
    trace.i.push(i as f64);
    trace.r.push(r as f64);
    trace.r_mult.push(r_mult);
    trace.phi.push(phi);
    Ok(())
}
