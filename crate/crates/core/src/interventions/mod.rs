//! Outbreak-control measures: isolation of confirmed cases (ICC),
//! quarantine of exposed contacts (QEC), school closure (SC), and
//! vaccination campaigns (VC), composed into per-agent / per-venue
//! control factors.
//!
//! Hard-sampling mode draws Bernoulli events; relaxed mode uses
//! expected-value multipliers so the recorded computation stays
//! deterministic under frozen noise. Policy parameters are user-specified,
//! never learned.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::population::{Population, VenueKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IccPolicy {
    pub enabled: bool,
    pub compliance_rate: f64,
    /// Isolation span from detection, at least 4 days.
    pub isolation_days: u32,
    /// Rash-onset proxy: days after becoming infectious before a detection
    /// trial. These detection fields drive every policy's trigger.
    pub detection_delay_days: f64,
    pub detection_probability: f64,
}

impl Default for IccPolicy {
    fn default() -> Self {
        IccPolicy {
            enabled: false,
            compliance_rate: 0.7,
            isolation_days: 4,
            detection_delay_days: 2.0,
            detection_probability: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QecPolicy {
    pub enabled: bool,
    pub tracing_rate: f64,
    /// In [7, 14] days; vaccinated contacts are exempt.
    pub quarantine_days: u32,
}

impl Default for QecPolicy {
    fn default() -> Self {
        QecPolicy { enabled: false, tracing_rate: 0.7, quarantine_days: 14 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScPolicy {
    pub enabled: bool,
    /// In [7, 14] days (one to two weeks).
    pub closure_days: u32,
}

impl Default for ScPolicy {
    fn default() -> Self {
        ScPolicy { enabled: false, closure_days: 7 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VcPolicy {
    pub enabled: bool,
    /// Per-day vaccination probability for unvaccinated agents in a region
    /// with an active detected case.
    pub daily_vaccination_rate: f64,
}

impl Default for VcPolicy {
    fn default() -> Self {
        VcPolicy { enabled: false, daily_vaccination_rate: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySet {
    pub icc: IccPolicy,
    pub qec: QecPolicy,
    pub sc: ScPolicy,
    pub vc: VcPolicy,
}

impl PolicySet {
    pub fn any_enabled(&self) -> bool {
        self.icc.enabled || self.qec.enabled || self.sc.enabled || self.vc.enabled
    }

    pub fn validate(&self) -> Result<(), String> {
        let rate = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(format!("{name} must lie in [0,1], got {v}"))
            }
        };
        rate("icc.compliance_rate", self.icc.compliance_rate)?;
        rate("icc.detection_probability", self.icc.detection_probability)?;
        rate("qec.tracing_rate", self.qec.tracing_rate)?;
        rate("vc.daily_vaccination_rate", self.vc.daily_vaccination_rate)?;
        if self.icc.detection_delay_days < 0.0 {
            return Err("icc.detection_delay_days must be non-negative".into());
        }
        if self.icc.isolation_days < 4 {
            return Err("icc.isolation_days must be at least 4".into());
        }
        if !(7..=14).contains(&self.qec.quarantine_days) {
            return Err("qec.quarantine_days must lie in [7,14]".into());
        }
        if !(7..=14).contains(&self.sc.closure_days) {
            return Err("sc.closure_days must lie in [7,14]".into());
        }
        Ok(())
    }

    /// First whole day since infection at which a detection trial happens.
    pub fn detection_trial_day(&self, theta_ei: f64) -> f64 {
        (theta_ei + self.icc.detection_delay_days).ceil()
    }
}

/// Evolving record of isolations, quarantines, closures, and detections.
#[derive(Debug, Clone)]
pub struct PolicyState {
    /// Exclusive day bound per agent; 0 means never isolated.
    pub isolated_until: Vec<i64>,
    pub quarantined_until: Vec<i64>,
    /// Exclusive day bound per venue (schools only).
    pub closed_until: Vec<i64>,
    pub detected: Vec<bool>,
    pub detection_day: Vec<i64>,
    detection_tried: Vec<bool>,
    pub audit: PolicyAudit,
}

/// Every assigned span and exemption violation, for invariant checks.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PolicyAudit {
    pub isolation_spans: Vec<u32>,
    pub quarantine_spans: Vec<u32>,
    pub closure_spans: Vec<u32>,
    pub vaccinated_quarantined: usize,
    pub detections: usize,
}

impl PolicyState {
    pub fn new(n_agents: usize, n_venues: usize) -> Self {
        PolicyState {
            isolated_until: vec![0; n_agents],
            quarantined_until: vec![0; n_agents],
            closed_until: vec![0; n_venues],
            detected: vec![false; n_agents],
            detection_day: vec![-1; n_agents],
            detection_tried: vec![false; n_agents],
            audit: PolicyAudit::default(),
        }
    }
}

/// Multiplicative control factors; all in [0,1], venue factors in {0,1}.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlModifier {
    pub susceptible_factor: Vec<f64>,
    pub infector_factor: Vec<f64>,
    pub venue_open: Vec<f64>,
}

impl ControlModifier {
    pub fn identity(n_agents: usize, n_venues: usize) -> Self {
        ControlModifier {
            susceptible_factor: vec![1.0; n_agents],
            infector_factor: vec![1.0; n_agents],
            venue_open: vec![1.0; n_venues],
        }
    }
}

/// Factors combine multiplicatively; any zero is absorbing.
pub fn compose_control_modifier(parts: &[ControlModifier]) -> ControlModifier {
    assert!(!parts.is_empty(), "compose of zero contributions");
    let mut out = parts[0].clone();
    for p in &parts[1..] {
        debug_assert_eq!(out.susceptible_factor.len(), p.susceptible_factor.len());
        debug_assert_eq!(out.venue_open.len(), p.venue_open.len());
        for (o, v) in out.susceptible_factor.iter_mut().zip(&p.susceptible_factor) {
            *o *= v;
        }
        for (o, v) in out.infector_factor.iter_mut().zip(&p.infector_factor) {
            *o *= v;
        }
        for (o, v) in out.venue_open.iter_mut().zip(&p.venue_open) {
            *o *= v;
        }
    }
    out
}

/// One detection trial per agent, the first day its infection age reaches
/// theta_ei + detection_delay while still infectious. Detection is permanent.
/// Returns newly detected agent ids (ascending).
pub fn detect_cases<R: Rng>(
    ps: &mut PolicyState,
    day: i64,
    infection_day: &[i64],
    is_infectious: &[bool],
    policy: &PolicySet,
    theta_ei: f64,
    rng: &mut R,
) -> Vec<u32> {
    let mut newly = Vec::new();
    if !policy.any_enabled() {
        return newly;
    }
    let threshold = policy.detection_trial_day(theta_ei);
    for a in 0..infection_day.len() {
        if ps.detection_tried[a] || infection_day[a] < 0 || !is_infectious[a] {
            continue;
        }
        let dt = (day - infection_day[a]) as f64;
        if dt < threshold {
            continue;
        }
        ps.detection_tried[a] = true;
        if rng.gen::<f64>() < policy.icc.detection_probability {
            ps.detected[a] = true;
            ps.detection_day[a] = day;
            ps.audit.detections += 1;
            newly.push(a as u32);
        }
    }
    newly
}

/// Newly detected agents comply with probability compliance_rate and then
/// contribute an infector-side zero for `isolation_days` from detection.
/// Returns the full ICC contribution for `day`.
pub fn apply_icc<R: Rng>(
    ps: &mut PolicyState,
    newly_detected: &[u32],
    day: i64,
    policy: &PolicySet,
    n_venues: usize,
    rng: &mut R,
) -> ControlModifier {
    let n = ps.isolated_until.len();
    let mut m = ControlModifier::identity(n, n_venues);
    if !policy.icc.enabled {
        return m;
    }
    for &a in newly_detected {
        if rng.gen::<f64>() < policy.icc.compliance_rate {
            ps.isolated_until[a as usize] = day + i64::from(policy.icc.isolation_days);
            ps.audit.isolation_spans.push(policy.icc.isolation_days);
        }
    }
    for a in 0..n {
        if day < ps.isolated_until[a] {
            m.infector_factor[a] = 0.0;
        }
    }
    m
}

/// Unvaccinated venue-mates of newly detected infectors are traced with
/// probability tracing_rate and quarantined (both sides zero) for
/// quarantine_days. Vaccinated agents are exempt.
pub fn apply_qec<R: Rng>(
    ps: &mut PolicyState,
    newly_detected: &[u32],
    day: i64,
    pop: &Population,
    vaccinated: &[bool],
    policy: &PolicySet,
    rng: &mut R,
) -> ControlModifier {
    let n = ps.quarantined_until.len();
    let mut m = ControlModifier::identity(n, pop.n_venues());
    if !policy.qec.enabled {
        return m;
    }
    for &infector in newly_detected {
        let agent = &pop.agents[infector as usize];
        let mut venues: Vec<u32> = vec![agent.household_id];
        venues.extend(agent.school_id);
        venues.extend(agent.work_id);
        // venue-side-only memberships (pubs etc.) are traced as well
        for v in &pop.venues {
            if matches!(v.kind, VenueKind::Pub | VenueKind::Cinema | VenueKind::Other)
                && v.members.contains(&infector)
            {
                venues.push(v.id);
            }
        }
        for vid in venues {
            for &contact in &pop.venues[vid as usize].members {
                if contact == infector || vaccinated[contact as usize] {
                    continue;
                }
                if rng.gen::<f64>() < policy.qec.tracing_rate {
                    if vaccinated[contact as usize] {
                        ps.audit.vaccinated_quarantined += 1;
                    }
                    let until = day + i64::from(policy.qec.quarantine_days);
                    let slot = &mut ps.quarantined_until[contact as usize];
                    *slot = (*slot).max(until);
                    ps.audit.quarantine_spans.push(policy.qec.quarantine_days);
                }
            }
        }
    }
    for a in 0..n {
        if day < ps.quarantined_until[a] {
            m.susceptible_factor[a] = 0.0;
            m.infector_factor[a] = 0.0;
        }
    }
    m
}

/// A school with a newly detected member closes for closure_days; edges
/// through a closed venue contribute nothing until it reopens.
pub fn apply_school_closure(
    ps: &mut PolicyState,
    newly_detected: &[u32],
    day: i64,
    pop: &Population,
    policy: &PolicySet,
) -> ControlModifier {
    let m_agents = ps.isolated_until.len();
    let mut m = ControlModifier::identity(m_agents, pop.n_venues());
    if !policy.sc.enabled {
        return m;
    }
    for &a in newly_detected {
        if let Some(school) = pop.agents[a as usize].school_id {
            let slot = &mut ps.closed_until[school as usize];
            if day >= *slot {
                *slot = day + i64::from(policy.sc.closure_days);
                ps.audit.closure_spans.push(policy.sc.closure_days);
            }
        }
    }
    for v in 0..pop.n_venues() {
        if day < ps.closed_until[v] {
            m.venue_open[v] = 0.0;
        }
    }
    m
}

/// While a region has a detected, still-infectious case, unvaccinated
/// agents there are vaccinated with the daily campaign rate. Returns the
/// agents to vaccinate; the caller applies them so the psi factors change
/// from the next day. Quarantined agents are skipped, which keeps the
/// QEC exemption invariant (no vaccinated agent is ever quarantined).
pub fn apply_vaccination_campaign<R: Rng>(
    ps: &PolicyState,
    day: i64,
    pop: &Population,
    vaccinated: &[bool],
    still_infectious: &[bool],
    policy: &PolicySet,
    rng: &mut R,
) -> Vec<u32> {
    let mut newly = Vec::new();
    if !policy.vc.enabled {
        return newly;
    }
    let mut active_regions: Vec<&str> = Vec::new();
    for a in 0..pop.n_agents() {
        if ps.detected[a] && still_infectious[a] {
            let r = pop.agents[a].region.as_str();
            if !active_regions.contains(&r) {
                active_regions.push(r);
            }
        }
    }
    if active_regions.is_empty() {
        return newly;
    }
    for a in 0..pop.n_agents() {
        if vaccinated[a] || day < ps.quarantined_until[a] {
            continue;
        }
        if !active_regions.contains(&pop.agents[a].region.as_str()) {
            continue;
        }
        if rng.gen::<f64>() < policy.vc.daily_vaccination_rate {
            newly.push(a as u32);
        }
    }
    newly
}

/// Expected infector-side multiplier for a relaxed-mode cohort of infection
/// age `dt`: detection succeeds with detection_probability and isolation is
/// observed with compliance_rate during the isolation window.
pub fn icc_relaxed_cohort_factor(dt: f64, theta_ei: f64, policy: &PolicySet) -> f64 {
    if !policy.icc.enabled {
        return 1.0;
    }
    let start = policy.detection_trial_day(theta_ei);
    if dt >= start && dt < start + f64::from(policy.icc.isolation_days) {
        1.0 - policy.icc.detection_probability * policy.icc.compliance_rate
    } else {
        1.0
    }
}

/// Relaxed-mode expected-value tracker for QEC, SC, and VC. Detection mass
/// is the expected number of detections per agent per day; factors are
/// treated as constants by the tape (policy parameters are not learnable).
pub struct RelaxedPolicyTracker {
    qec_additions: VecDeque<Vec<f64>>,
    school_cum: Vec<f64>,
    school_arm: Vec<f64>,
    closed_until: Vec<i64>,
    /// Per-region ring buffer of newly detected mass, for the VC trigger.
    region_detected: VecDeque<Vec<f64>>,
    regions: Vec<String>,
    region_of: Vec<usize>,
}

impl RelaxedPolicyTracker {
    pub fn new(pop: &Population) -> Self {
        let mut regions: Vec<String> = Vec::new();
        let mut region_of = Vec::with_capacity(pop.n_agents());
        for a in &pop.agents {
            let idx = match regions.iter().position(|r| r == &a.region) {
                Some(i) => i,
                None => {
                    regions.push(a.region.clone());
                    regions.len() - 1
                }
            };
            region_of.push(idx);
        }
        RelaxedPolicyTracker {
            qec_additions: VecDeque::new(),
            school_cum: vec![0.0; pop.n_venues()],
            school_arm: vec![1.0; pop.n_venues()],
            closed_until: vec![0; pop.n_venues()],
            region_detected: VecDeque::new(),
            regions,
            region_of,
        }
    }

    /// Advances one day given the expected newly-detected mass per agent.
    /// Returns control factors for the day, plus per-region campaign
    /// activity for the caller's vaccination update.
    #[allow(clippy::too_many_arguments)]
    pub fn step(
        &mut self,
        day: i64,
        newly_detected_mass: &[f64],
        pop: &Population,
        vaccinated_frac: &[f64],
        policy: &PolicySet,
        active_window_days: usize,
    ) -> (ControlModifier, Vec<bool>) {
        let n = pop.n_agents();
        let nv = pop.n_venues();
        let mut m = ControlModifier::identity(n, nv);

        if policy.qec.enabled {
            // venue-local expected exposure of each contact
            let mut venue_mass = vec![0.0f64; nv];
            for v in &pop.venues {
                venue_mass[v.id as usize] =
                    v.members.iter().map(|&a| newly_detected_mass[a as usize]).sum();
            }
            let mut additions = vec![0.0f64; n];
            for v in &pop.venues {
                let total = venue_mass[v.id as usize];
                if total <= 0.0 {
                    continue;
                }
                for &a in &v.members {
                    let exposure = (total - newly_detected_mass[a as usize]).max(0.0);
                    additions[a as usize] += policy.qec.tracing_rate * exposure;
                }
            }
            for (a, add) in additions.iter_mut().enumerate() {
                if vaccinated_frac[a] >= 1.0 {
                    *add = 0.0;
                } else {
                    // vaccinated fraction of the agent is exempt
                    *add *= 1.0 - vaccinated_frac[a];
                }
            }
            self.qec_additions.push_back(additions);
            while self.qec_additions.len() > policy.qec.quarantine_days as usize {
                self.qec_additions.pop_front();
            }
            for a in 0..n {
                let level: f64 = self.qec_additions.iter().map(|adds| adds[a]).sum();
                let level = level.min(1.0);
                m.susceptible_factor[a] *= 1.0 - level;
                m.infector_factor[a] *= 1.0 - level;
            }
        }

        if policy.sc.enabled {
            for v in &pop.venues {
                if v.kind != VenueKind::School {
                    continue;
                }
                let vid = v.id as usize;
                let mass: f64 = v.members.iter().map(|&a| newly_detected_mass[a as usize]).sum();
                self.school_cum[vid] += mass;
                if day >= self.closed_until[vid] && self.school_cum[vid] >= self.school_arm[vid] {
                    self.closed_until[vid] = day + i64::from(policy.sc.closure_days);
                    self.school_arm[vid] = self.school_cum[vid] + 1.0;
                }
                if day < self.closed_until[vid] {
                    m.venue_open[vid] = 0.0;
                }
            }
        }

        let mut campaign = vec![false; self.regions.len()];
        if policy.vc.enabled {
            let mut by_region = vec![0.0f64; self.regions.len()];
            for a in 0..n {
                by_region[self.region_of[a]] += newly_detected_mass[a];
            }
            self.region_detected.push_back(by_region);
            while self.region_detected.len() > active_window_days {
                self.region_detected.pop_front();
            }
            for (r, flag) in campaign.iter_mut().enumerate() {
                let active: f64 = self.region_detected.iter().map(|d| d[r]).sum();
                *flag = active >= 0.5;
            }
        }

        (m, campaign)
    }

    pub fn region_index(&self, agent: usize) -> usize {
        self.region_of[agent]
    }
}
