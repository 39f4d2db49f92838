//! CSV persistence for populations.
//!
//! agents.csv: `agent_id,age,sex,ethnicity,vaccinated,household_id,school_id,work_id,region`
//! venues.csv: `venue_id,kind,region`
//!
//! Empty membership fields mean no membership; venue member lists are
//! reconstructed from the agent-side columns on load.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Agent, Ethnicity, PopError, Population, Sex, Venue, VenueKind};

pub const AGENTS_HEADER: &str = "agent_id,age,sex,ethnicity,vaccinated,household_id,school_id,work_id,region";
pub const VENUES_HEADER: &str = "venue_id,kind,region";

pub fn save_population(pop: &Population, agents_path: &Path, venues_path: &Path) -> Result<(), PopError> {
    let io_err = |e: std::io::Error| PopError::Io(e.to_string());

    let mut out = String::new();
    out.push_str(AGENTS_HEADER);
    out.push('\n');
    for a in &pop.agents {
        let school = a.school_id.map(|v| v.to_string()).unwrap_or_default();
        let work = a.work_id.map(|v| v.to_string()).unwrap_or_default();
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            a.id,
            a.age,
            a.sex.as_str(),
            a.ethnicity.as_str(),
            u8::from(a.vaccinated),
            a.household_id,
            school,
            work,
            a.region
        ));
    }
    fs::File::create(agents_path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(io_err)?;

    let mut out = String::new();
    out.push_str(VENUES_HEADER);
    out.push('\n');
    for v in &pop.venues {
        out.push_str(&format!("{},{},{}\n", v.id, v.kind.as_str(), v.region));
    }
    fs::File::create(venues_path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(io_err)?;
    Ok(())
}

fn parse_err(file: &Path, line: usize, msg: impl Into<String>) -> PopError {
    PopError::Parse { file: file.display().to_string(), line, msg: msg.into() }
}

fn read_lines(path: &Path) -> Result<Vec<String>, PopError> {
    let text = fs::read_to_string(path)
        .map_err(|e| PopError::Io(format!("{}: {e}", path.display())))?;
    Ok(text.lines().map(str::to_string).collect())
}

pub fn load_population(agents_path: &Path, venues_path: &Path) -> Result<Population, PopError> {
    let venue_lines = read_lines(venues_path)?;
    if venue_lines.is_empty() || venue_lines[0] != VENUES_HEADER {
        return Err(parse_err(venues_path, 1, format!("expected header `{VENUES_HEADER}`")));
    }
    let mut venues: Vec<Venue> = Vec::new();
    for (i, line) in venue_lines.iter().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(parse_err(venues_path, lineno, format!("expected 3 fields, got {}", cols.len())));
        }
        let id: u32 = cols[0]
            .parse()
            .map_err(|_| parse_err(venues_path, lineno, "venue_id is not an integer"))?;
        let kind = VenueKind::parse(cols[1])
            .ok_or_else(|| parse_err(venues_path, lineno, format!("unknown venue kind `{}`", cols[1])))?;
        venues.push(Venue { id, kind, region: cols[2].to_string(), members: Vec::new() });
    }
    if venues.is_empty() {
        return Err(parse_err(venues_path, 1, "no venue rows"));
    }

    let agent_lines = read_lines(agents_path)?;
    if agent_lines.is_empty() || agent_lines[0] != AGENTS_HEADER {
        return Err(parse_err(agents_path, 1, format!("expected header `{AGENTS_HEADER}`")));
    }
    let mut agents: Vec<Agent> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (i, line) in agent_lines.iter().enumerate().skip(1) {
        if line.is_empty() {
            continue;
        }
        let lineno = i + 1;
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 9 {
            return Err(parse_err(agents_path, lineno, format!("expected 9 fields, got {}", cols.len())));
        }
        let id: u32 = cols[0]
            .parse()
            .map_err(|_| parse_err(agents_path, lineno, "agent_id is not an integer"))?;
        if !seen.insert(id) {
            return Err(PopError::Integrity(format!("duplicate agent id {id}")));
        }
        let age: u8 = cols[1]
            .parse()
            .map_err(|_| parse_err(agents_path, lineno, "age is not an integer"))?;
        let sex = Sex::parse(cols[2])
            .ok_or_else(|| parse_err(agents_path, lineno, format!("unknown sex `{}`", cols[2])))?;
        let ethnicity = Ethnicity::parse(cols[3])
            .ok_or_else(|| parse_err(agents_path, lineno, format!("unknown ethnicity `{}`", cols[3])))?;
        let vaccinated = match cols[4] {
            "0" => false,
            "1" => true,
            other => return Err(parse_err(agents_path, lineno, format!("vaccinated must be 0/1, got `{other}`"))),
        };
        let household_id: u32 = cols[5]
            .parse()
            .map_err(|_| parse_err(agents_path, lineno, "household_id is not an integer"))?;
        let parse_opt = |s: &str, what: &str| -> Result<Option<u32>, PopError> {
            if s.is_empty() {
                Ok(None)
            } else {
                s.parse()
                    .map(Some)
                    .map_err(|_| parse_err(agents_path, lineno, format!("{what} is not an integer")))
            }
        };
        let school_id = parse_opt(cols[6], "school_id")?;
        let work_id = parse_opt(cols[7], "work_id")?;
        agents.push(Agent {
            id,
            age,
            sex,
            ethnicity,
            vaccinated,
            household_id,
            school_id,
            work_id,
            region: cols[8].to_string(),
        });
    }
    if agents.is_empty() {
        return Err(parse_err(agents_path, 1, "no agent rows"));
    }

    // rebuild venue membership from the agent-side columns
    for a in &agents {
        let mut link = |vid: u32| -> Result<(), PopError> {
            match venues.get_mut(vid as usize) {
                Some(v) => {
                    v.members.push(a.id);
                    Ok(())
                }
                None => Err(PopError::Integrity(format!(
                    "agent {} references missing venue {vid}",
                    a.id
                ))),
            }
        };
        link(a.household_id)?;
        if let Some(s) = a.school_id {
            link(s)?;
        }
        if let Some(w) = a.work_id {
            link(w)?;
        }
    }

    let pop = Population { agents, venues };
    pop.validate()?;
    Ok(pop)
}
