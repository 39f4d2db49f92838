//! Synthetic population and the bipartite agent-venue contact graph.

mod generate;
mod io;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use generate::{generate_synthetic, PopulationSpec};
pub use io::{load_population, save_population};

#[derive(Debug, Clone)]
pub enum PopError {
    InvalidSpec(String),
    Parse { file: String, line: usize, msg: String },
    Integrity(String),
    Io(String),
}

impl fmt::Display for PopError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PopError::InvalidSpec(m) => write!(f, "invalid population spec: {m}"),
            PopError::Parse { file, line, msg } => write!(f, "{file}:{line}: parse error: {msg}"),
            PopError::Integrity(m) => write!(f, "integrity error: {m}"),
            PopError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl std::error::Error for PopError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sex {
    Female,
    Male,
}

impl Sex {
    pub const ALL: [Sex; 2] = [Sex::Female, Sex::Male];

    pub fn as_str(&self) -> &'static str {
        match self {
            Sex::Female => "female",
            Sex::Male => "male",
        }
    }

    pub fn index(&self) -> usize {
        *self as usize
    }

    pub fn parse(s: &str) -> Option<Sex> {
        match s {
            "female" => Some(Sex::Female),
            "male" => Some(Sex::Male),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ethnicity {
    Maori,
    Pacific,
    Asian,
    European,
    #[serde(rename = "MELAA")]
    Melaa,
    Other,
}

impl Ethnicity {
    pub const ALL: [Ethnicity; 6] = [
        Ethnicity::Maori,
        Ethnicity::Pacific,
        Ethnicity::Asian,
        Ethnicity::European,
        Ethnicity::Melaa,
        Ethnicity::Other,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Ethnicity::Maori => "Maori",
            Ethnicity::Pacific => "Pacific",
            Ethnicity::Asian => "Asian",
            Ethnicity::European => "European",
            Ethnicity::Melaa => "MELAA",
            Ethnicity::Other => "Other",
        }
    }

    pub fn index(&self) -> usize {
        *self as usize
    }

    pub fn parse(s: &str) -> Option<Ethnicity> {
        Ethnicity::ALL.iter().copied().find(|e| e.as_str() == s)
    }
}

/// Age bands shared by susceptibility factors and demographic breakdowns.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AgeBand(pub usize);

pub const AGE_BAND_LABELS: [&str; 7] = ["0-4", "5-11", "12-17", "18-24", "25-44", "45-64", "65+"];
pub const N_AGE_BANDS: usize = 7;

impl AgeBand {
    pub fn of(age: u8) -> AgeBand {
        AgeBand(match age {
            0..=4 => 0,
            5..=11 => 1,
            12..=17 => 2,
            18..=24 => 3,
            25..=44 => 4,
            45..=64 => 5,
            _ => 6,
        })
    }

    pub fn label(&self) -> &'static str {
        AGE_BAND_LABELS[self.0]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VenueKind {
    Household,
    School,
    Workplace,
    Pub,
    Cinema,
    Other,
}

impl VenueKind {
    pub const ALL: [VenueKind; 6] = [
        VenueKind::Household,
        VenueKind::School,
        VenueKind::Workplace,
        VenueKind::Pub,
        VenueKind::Cinema,
        VenueKind::Other,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            VenueKind::Household => "household",
            VenueKind::School => "school",
            VenueKind::Workplace => "workplace",
            VenueKind::Pub => "pub",
            VenueKind::Cinema => "cinema",
            VenueKind::Other => "other",
        }
    }

    pub fn index(&self) -> usize {
        *self as usize
    }

    pub fn parse(s: &str) -> Option<VenueKind> {
        VenueKind::ALL.iter().copied().find(|k| k.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub id: u32,
    pub age: u8,
    pub sex: Sex,
    pub ethnicity: Ethnicity,
    pub vaccinated: bool,
    pub household_id: u32,
    pub school_id: Option<u32>,
    pub work_id: Option<u32>,
    pub region: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Venue {
    pub id: u32,
    pub kind: VenueKind,
    pub region: String,
    pub members: Vec<u32>,
}

/// Per-venue-kind contact intensity rho and frequency q, indexed by
/// [`VenueKind::index`]. Both strictly positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VenueKindParams {
    pub rho: [f64; 6],
    pub q: [f64; 6],
}

impl Default for VenueKindParams {
    fn default() -> Self {
        VenueKindParams { rho: [1.0; 6], q: [1.0; 6] }
    }
}

impl VenueKindParams {
    pub fn validate(&self) -> Result<(), PopError> {
        for k in VenueKind::ALL {
            if self.rho[k.index()] <= 0.0 || self.q[k.index()] <= 0.0 {
                return Err(PopError::InvalidSpec(format!(
                    "contact intensity/frequency for {} must be positive",
                    k.as_str()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Population {
    pub agents: Vec<Agent>,
    pub venues: Vec<Venue>,
}

impl Population {
    pub fn n_agents(&self) -> usize {
        self.agents.len()
    }

    pub fn n_venues(&self) -> usize {
        self.venues.len()
    }

    /// Full referential-integrity pass; every loader and generator output
    /// goes through here.
    pub fn validate(&self) -> Result<(), PopError> {
        if self.agents.is_empty() {
            return Err(PopError::Integrity("population has no agents".into()));
        }
        for (i, a) in self.agents.iter().enumerate() {
            if a.id as usize != i {
                return Err(PopError::Integrity(format!(
                    "agent ids must be contiguous from 0 (found {} at row {i})",
                    a.id
                )));
            }
            if a.age > 100 {
                return Err(PopError::Integrity(format!("agent {} age {} out of range", a.id, a.age)));
            }
        }
        for (i, v) in self.venues.iter().enumerate() {
            if v.id as usize != i {
                return Err(PopError::Integrity(format!(
                    "venue ids must be contiguous from 0 (found {} at row {i})",
                    v.id
                )));
            }
            if v.members.is_empty() {
                return Err(PopError::Integrity(format!("venue {} has no members", v.id)));
            }
            for &m in &v.members {
                if m as usize >= self.agents.len() {
                    return Err(PopError::Integrity(format!(
                        "venue {} references missing agent {m}",
                        v.id
                    )));
                }
            }
        }
        let venue_kind = |id: u32| -> Option<VenueKind> {
            self.venues.get(id as usize).map(|v| v.kind)
        };
        for a in &self.agents {
            match venue_kind(a.household_id) {
                Some(VenueKind::Household) => {}
                Some(k) => {
                    return Err(PopError::Integrity(format!(
                        "agent {} household_id {} points at a {}",
                        a.id,
                        a.household_id,
                        k.as_str()
                    )))
                }
                None => {
                    return Err(PopError::Integrity(format!(
                        "agent {} references missing household {}",
                        a.id, a.household_id
                    )))
                }
            }
            if let Some(s) = a.school_id {
                match venue_kind(s) {
                    Some(VenueKind::School) => {}
                    _ => {
                        return Err(PopError::Integrity(format!(
                            "agent {} school_id {s} is not a school",
                            a.id
                        )))
                    }
                }
            }
            if let Some(w) = a.work_id {
                match venue_kind(w) {
                    Some(VenueKind::Workplace) => {}
                    _ => {
                        return Err(PopError::Integrity(format!(
                            "agent {} work_id {w} is not a workplace",
                            a.id
                        )))
                    }
                }
            }
        }
        // membership lists must mirror the agent-side columns
        for v in &self.venues {
            for &m in &v.members {
                let a = &self.agents[m as usize];
                let linked = match v.kind {
                    VenueKind::Household => a.household_id == v.id,
                    VenueKind::School => a.school_id == Some(v.id),
                    VenueKind::Workplace => a.work_id == Some(v.id),
                    // other kinds are venue-side only
                    _ => true,
                };
                if !linked {
                    return Err(PopError::Integrity(format!(
                        "venue {} lists agent {m} who does not reference it",
                        v.id
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Static bipartite edge arrays; one edge per (agent, venue membership).
#[derive(Debug, Clone)]
pub struct ContactGraph {
    pub n_agents: usize,
    pub n_venues: usize,
    /// Edges sorted by agent id, household edge first per agent.
    pub edge_agent: Vec<u32>,
    pub edge_venue: Vec<u32>,
    pub edge_kind: Vec<VenueKind>,
    /// CSR offsets into the edge arrays, length n_agents + 1.
    pub agent_offsets: Vec<u32>,
}

impl ContactGraph {
    pub fn n_edges(&self) -> usize {
        self.edge_agent.len()
    }

    pub fn edges_of(&self, agent: u32) -> std::ops::Range<usize> {
        let a = agent as usize;
        self.agent_offsets[a] as usize..self.agent_offsets[a + 1] as usize
    }
}

pub fn build_contact_graph(pop: &Population) -> ContactGraph {
    let n_agents = pop.agents.len();
    let mut edges: Vec<(u32, u32, VenueKind)> = Vec::new();
    for v in &pop.venues {
        for &m in &v.members {
            edges.push((m, v.id, v.kind));
        }
    }
    // household first per agent so an agent's primary edge is predictable
    edges.sort_by_key(|&(a, v, k)| (a, if k == VenueKind::Household { 0 } else { 1 }, v));

    let mut edge_agent = Vec::with_capacity(edges.len());
    let mut edge_venue = Vec::with_capacity(edges.len());
    let mut edge_kind = Vec::with_capacity(edges.len());
    let mut agent_offsets = vec![0u32; n_agents + 1];
    for &(a, v, k) in &edges {
        edge_agent.push(a);
        edge_venue.push(v);
        edge_kind.push(k);
        agent_offsets[a as usize + 1] += 1;
    }
    for i in 0..n_agents {
        agent_offsets[i + 1] += agent_offsets[i];
    }
    ContactGraph {
        n_agents,
        n_venues: pop.venues.len(),
        edge_agent,
        edge_venue,
        edge_kind,
        agent_offsets,
    }
}
