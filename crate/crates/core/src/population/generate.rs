//! Desk-scale synthetic population generator.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::rng::{derive_rng, salt};

use super::{Agent, Ethnicity, PopError, Population, Sex, Venue, VenueKind, N_AGE_BANDS};

const SCHOOL_AGE: std::ops::RangeInclusive<u8> = 5..=18;
const WORK_AGE: std::ops::RangeInclusive<u8> = 19..=64;
const MAX_HOUSEHOLD_SIZE: usize = 8;

/// Age-band upper bounds matching the seven susceptibility bands.
const BAND_AGE_RANGES: [(u8, u8); N_AGE_BANDS] =
    [(0, 4), (5, 11), (12, 17), (18, 24), (25, 44), (45, 64), (65, 100)];

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationSpec {
    pub n_agents: usize,
    #[serde(default = "default_region")]
    pub region: String,
    /// Mean of the truncated-geometric household size distribution.
    #[serde(default = "default_household_mean")]
    pub household_mean_size: f64,
    /// None picks roughly one school per 500 agents.
    #[serde(default)]
    pub school_count: Option<usize>,
    /// None picks roughly one workplace per 50 agents.
    #[serde(default)]
    pub workplace_count: Option<usize>,
    #[serde(default = "default_employment")]
    pub employment_fraction: f64,
    #[serde(default = "default_age_weights")]
    pub age_band_weights: [f64; N_AGE_BANDS],
    #[serde(default = "default_sex_weights")]
    pub sex_weights: [f64; 2],
    #[serde(default = "default_ethnicity_weights")]
    pub ethnicity_weights: [f64; 6],
    #[serde(default = "default_coverage")]
    pub vaccination_coverage_by_age: [f64; N_AGE_BANDS],
}

fn default_region() -> String {
    "region-a".into()
}
fn default_household_mean() -> f64 {
    2.7
}
fn default_employment() -> f64 {
    0.7
}
fn default_age_weights() -> [f64; N_AGE_BANDS] {
    [0.06, 0.09, 0.08, 0.09, 0.27, 0.25, 0.16]
}
fn default_sex_weights() -> [f64; 2] {
    [0.5, 0.5]
}
fn default_ethnicity_weights() -> [f64; 6] {
    [0.17, 0.08, 0.15, 0.53, 0.015, 0.055]
}
fn default_coverage() -> [f64; N_AGE_BANDS] {
    [0.85; N_AGE_BANDS]
}

impl Default for PopulationSpec {
    fn default() -> Self {
        PopulationSpec {
            n_agents: 1000,
            region: default_region(),
            household_mean_size: default_household_mean(),
            school_count: None,
            workplace_count: None,
            employment_fraction: default_employment(),
            age_band_weights: default_age_weights(),
            sex_weights: default_sex_weights(),
            ethnicity_weights: default_ethnicity_weights(),
            vaccination_coverage_by_age: default_coverage(),
        }
    }
}

impl PopulationSpec {
    pub fn validate(&self) -> Result<(), PopError> {
        if self.n_agents == 0 {
            return Err(PopError::InvalidSpec("n_agents must be at least 1".into()));
        }
        if self.household_mean_size < 1.0 {
            return Err(PopError::InvalidSpec("household_mean_size must be >= 1".into()));
        }
        check_normalized("age_band_weights", &self.age_band_weights)?;
        check_normalized("sex_weights", &self.sex_weights)?;
        check_normalized("ethnicity_weights", &self.ethnicity_weights)?;
        if !(0.0..=1.0).contains(&self.employment_fraction) {
            return Err(PopError::InvalidSpec("employment_fraction must lie in [0,1]".into()));
        }
        for &c in &self.vaccination_coverage_by_age {
            if !(0.0..=1.0).contains(&c) {
                return Err(PopError::InvalidSpec("vaccination coverage must lie in [0,1]".into()));
            }
        }
        Ok(())
    }
}

fn check_normalized(name: &str, w: &[f64]) -> Result<(), PopError> {
    if w.iter().any(|&x| x < 0.0) {
        return Err(PopError::InvalidSpec(format!("{name} has negative entries")));
    }
    let s: f64 = w.iter().sum();
    if (s - 1.0).abs() > 1e-9 {
        return Err(PopError::InvalidSpec(format!("{name} sums to {s}, expected 1")));
    }
    Ok(())
}

fn sample_index<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// Agents drawn to match the marginals in expectation; every agent gets a
/// household, school-age agents a school, working-age agents a workplace
/// with probability `employment_fraction`. Deterministic under `seed`.
pub fn generate_synthetic(spec: &PopulationSpec, seed: u64) -> Result<Population, PopError> {
    spec.validate()?;
    let mut rng = derive_rng(seed, salt::POPULATION);
    let n = spec.n_agents;

    let mut agents: Vec<Agent> = Vec::with_capacity(n);
    for id in 0..n {
        let band = sample_index(&mut rng, &spec.age_band_weights);
        let (lo, hi) = BAND_AGE_RANGES[band];
        let age = rng.gen_range(lo..=hi);
        let sex = Sex::ALL[sample_index(&mut rng, &spec.sex_weights)];
        let ethnicity = Ethnicity::ALL[sample_index(&mut rng, &spec.ethnicity_weights)];
        let vaccinated = rng.gen::<f64>() < spec.vaccination_coverage_by_age[band];
        agents.push(Agent {
            id: id as u32,
            age,
            sex,
            ethnicity,
            vaccinated,
            household_id: 0,
            school_id: None,
            work_id: None,
            region: spec.region.clone(),
        });
    }

    // households: truncated geometric sizes over a shuffled agent order
    let geom_p = 1.0 / spec.household_mean_size;
    let mut order: Vec<u32> = (0..n as u32).collect();
    order.shuffle(&mut rng);
    let mut venues: Vec<Venue> = Vec::new();
    let mut cursor = 0usize;
    while cursor < n {
        let mut size = 1usize;
        while size < MAX_HOUSEHOLD_SIZE && rng.gen::<f64>() >= geom_p {
            size += 1;
        }
        let size = size.min(n - cursor);
        let hid = venues.len() as u32;
        let mut members: Vec<u32> = order[cursor..cursor + size].to_vec();
        members.sort_unstable();
        for &m in &members {
            agents[m as usize].household_id = hid;
        }
        venues.push(Venue { id: hid, kind: VenueKind::Household, region: spec.region.clone(), members });
        cursor += size;
    }

    let school_count = spec.school_count.unwrap_or_else(|| (n / 500).max(1));
    let workplace_count = spec.workplace_count.unwrap_or_else(|| (n / 50).max(1));

    let mut school_members: Vec<Vec<u32>> = vec![Vec::new(); school_count];
    let mut work_members: Vec<Vec<u32>> = vec![Vec::new(); workplace_count];
    for a in agents.iter_mut() {
        if SCHOOL_AGE.contains(&a.age) {
            school_members[rng.gen_range(0..school_count)].push(a.id);
        } else if WORK_AGE.contains(&a.age) && rng.gen::<f64>() < spec.employment_fraction {
            work_members[rng.gen_range(0..workplace_count)].push(a.id);
        }
    }
    // drop venues that drew no members, keep ids contiguous
    for members in school_members.into_iter().filter(|m| !m.is_empty()) {
        let vid = venues.len() as u32;
        for &m in &members {
            agents[m as usize].school_id = Some(vid);
        }
        venues.push(Venue { id: vid, kind: VenueKind::School, region: spec.region.clone(), members });
    }
    for members in work_members.into_iter().filter(|m| !m.is_empty()) {
        let vid = venues.len() as u32;
        for &m in &members {
            agents[m as usize].work_id = Some(vid);
        }
        venues.push(Venue { id: vid, kind: VenueKind::Workplace, region: spec.region.clone(), members });
    }

    let pop = Population { agents, venues };
    pop.validate()?;
    Ok(pop)
}
