//! Shared test/bench fixtures: small populations with full venue-kind and
//! demographic coverage, and parameter sets that produce lively epidemics
//! at desk scale.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::epi_model::{DiseaseParams, PhiSchedule};
use crate::population::{
    build_contact_graph, Agent, ContactGraph, Ethnicity, Population, Sex, Venue, VenueKind,
};
use crate::rng::derive_rng;

/// Population touching every age band, sex, ethnicity, vaccination status,
/// and venue kind, so every learnable parameter has a live gradient path.
pub fn full_coverage_population(n: usize, seed: u64) -> (Population, ContactGraph) {
    assert!(n >= 20, "coverage fixture needs at least 20 agents");
    let mut rng = derive_rng(seed, 0xF1);
    let ages: [u8; 7] = [3, 8, 15, 21, 33, 50, 70];
    let mut agents: Vec<Agent> = (0..n)
        .map(|i| {
            let age = ages[i % 7] + rng.gen_range(0..2) as u8;
            Agent {
                id: i as u32,
                age,
                sex: if rng.gen::<f64>() < 0.5 { Sex::Female } else { Sex::Male },
                ethnicity: Ethnicity::ALL[i % 6],
                vaccinated: rng.gen::<f64>() < 0.35,
                household_id: 0,
                school_id: None,
                work_id: None,
                region: "region-a".into(),
            }
        })
        .collect();

    let mut venues: Vec<Venue> = Vec::new();
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;
    while cursor < n {
        let size = rng.gen_range(2..=4).min(n - cursor);
        let vid = venues.len() as u32;
        let mut members: Vec<u32> = order[cursor..cursor + size].to_vec();
        members.sort_unstable();
        for &m in &members {
            agents[m as usize].household_id = vid;
        }
        venues.push(Venue { id: vid, kind: VenueKind::Household, region: "region-a".into(), members });
        cursor += size;
    }

    let mut add_venue = |kind: VenueKind, members: Vec<u32>, agents: &mut Vec<Agent>| {
        if members.is_empty() {
            return;
        }
        let vid = venues.len() as u32;
        for &m in &members {
            match kind {
                VenueKind::School => agents[m as usize].school_id = Some(vid),
                VenueKind::Workplace => agents[m as usize].work_id = Some(vid),
                _ => {}
            }
        }
        venues.push(Venue { id: vid, kind, region: "region-a".into(), members });
    };

    let school_age: Vec<u32> =
        agents.iter().filter(|a| (5..=18).contains(&a.age)).map(|a| a.id).collect();
    add_venue(VenueKind::School, school_age, &mut agents);
    let workers: Vec<u32> = agents
        .iter()
        .filter(|a| (19..=64).contains(&a.age))
        .map(|a| a.id)
        .collect();
    let half = workers.len() / 2;
    add_venue(VenueKind::Workplace, workers[..half].to_vec(), &mut agents);
    let adults: Vec<u32> = agents.iter().filter(|a| a.age >= 18).map(|a| a.id).collect();
    add_venue(VenueKind::Pub, adults.iter().step_by(2).copied().collect(), &mut agents);
    add_venue(VenueKind::Cinema, adults.iter().step_by(3).copied().collect(), &mut agents);
    add_venue(VenueKind::Other, order.iter().step_by(4).copied().collect(), &mut agents);

    let pop = Population { agents, venues };
    pop.validate().expect("fixture population is valid");
    let graph = build_contact_graph(&pop);
    (pop, graph)
}

/// Parameters that keep an epidemic burning at a few hundred agents, with
/// every vaccine and attribute pathway active.
pub fn lively_params() -> DiseaseParams {
    let mut params = DiseaseParams {
        beta: 0.05,
        phi: PhiSchedule::Constant(0.002),
        theta_ei: 2.0,
        theta_ir: 8.0,
        gamma_shape: 2.41,
        gamma_scale: 2.0,
        r_scale: 0.35,
        psi1: 0.6,
        psi2: 0.4,
        ..Default::default()
    };
    params.attr_susceptibility.age = [1.3, 1.2, 1.1, 1.05, 1.0, 0.9, 0.8];
    params.attr_susceptibility.sex = [1.0, 1.05];
    params.attr_susceptibility.ethnicity = [1.2, 1.15, 0.9, 1.0, 1.1, 0.95];
    params.attr_susceptibility.vaccination = [1.0, 0.7];
    let mut rho = [0.0; 6];
    let mut q = [0.0; 6];
    for (i, k) in VenueKind::ALL.iter().enumerate() {
        rho[k.index()] = 1.0 + 0.1 * i as f64;
        q[k.index()] = 1.0 + 0.05 * i as f64;
    }
    params.venue_params.rho = rho;
    params.venue_params.q = q;
    params
}
