//! Validation outputs: peak statistics, demographic breakdowns, and the
//! simulated-vs-observed comparison report.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::calibration::ObservationSeries;
use crate::ensemble::EnsembleSummary;
use crate::epi_model::EpidemicTrace;
use crate::population::{AgeBand, Ethnicity, Population, AGE_BAND_LABELS, N_AGE_BANDS};

#[derive(Debug, Clone, PartialEq)]
pub enum MetricsError {
    EmptySeries,
    UnknownAttribute(String),
    WeekRangeMismatch { sim: usize, observed: usize },
    Io(String),
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::EmptySeries => write!(f, "empty series"),
            MetricsError::UnknownAttribute(a) => write!(f, "unknown attribute `{a}`"),
            MetricsError::WeekRangeMismatch { sim, observed } => {
                write!(f, "week ranges differ: {sim} simulated vs {observed} observed")
            }
            MetricsError::Io(m) => write!(f, "io error: {m}"),
        }
    }
}

impl std::error::Error for MetricsError {}

/// Argmax with earliest-week tie-break.
pub fn peak_week(series: &[f64], start_week: i64) -> Result<(i64, f64), MetricsError> {
    if series.is_empty() {
        return Err(MetricsError::EmptySeries);
    }
    let mut best = (start_week, series[0]);
    for (i, &v) in series.iter().enumerate().skip(1) {
        if v > best.1 {
            best = (start_week + i as i64, v);
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Attribute {
    Ethnicity,
    AgeBand,
}

impl Attribute {
    pub fn parse(s: &str) -> Result<Attribute, MetricsError> {
        match s {
            "ethnicity" => Ok(Attribute::Ethnicity),
            "age_band" | "age" => Ok(Attribute::AgeBand),
            other => Err(MetricsError::UnknownAttribute(other.into())),
        }
    }

    pub fn labels(&self) -> Vec<&'static str> {
        match self {
            Attribute::Ethnicity => Ethnicity::ALL.iter().map(|e| e.as_str()).collect(),
            Attribute::AgeBand => AGE_BAND_LABELS.to_vec(),
        }
    }
}

/// Percent of infections per category. With `psi2_reporting`, infections of
/// vaccinated agents are down-weighted by (1 - psi2) to model
/// symptom-suppressed under-reporting. All zeros when nothing was infected.
pub fn breakdown_percentages(
    trace: &EpidemicTrace,
    pop: &Population,
    attribute: Attribute,
    psi2_reporting: Option<f64>,
) -> Vec<f64> {
    let n_cats = match attribute {
        Attribute::Ethnicity => 6,
        Attribute::AgeBand => N_AGE_BANDS,
    };
    let mut weights = vec![0.0f64; n_cats];
    for (a, t) in trace.infection_time.iter().enumerate() {
        if t.is_none() {
            continue;
        }
        let agent = &pop.agents[a];
        let w = match psi2_reporting {
            Some(psi2) if agent.vaccinated => 1.0 - psi2,
            _ => 1.0,
        };
        let cat = match attribute {
            Attribute::Ethnicity => agent.ethnicity.index(),
            Attribute::AgeBand => AgeBand::of(agent.age).0,
        };
        weights[cat] += w;
    }
    let total: f64 = weights.iter().sum();
    if total <= 0.0 {
        return weights;
    }
    weights.iter().map(|w| 100.0 * w / total).collect()
}

/// Labeled breakdown for report output.
pub fn breakdown_by(
    trace: &EpidemicTrace,
    pop: &Population,
    attribute: &str,
    psi2_reporting: Option<f64>,
) -> Result<Vec<(String, f64)>, MetricsError> {
    let attr = Attribute::parse(attribute)?;
    let pct = breakdown_percentages(trace, pop, attr, psi2_reporting);
    Ok(attr.labels().iter().map(|l| l.to_string()).zip(pct).collect())
}

/// `attribute,category,percent` from ensemble member means.
pub fn write_summary_breakdown_csv(summary: &EnsembleSummary, path: &Path) -> Result<(), MetricsError> {
    let mut out = String::from("attribute,category,percent\n");
    for (cat, pct) in mean_breakdown(&summary.member_ethnicity_pct, &Attribute::Ethnicity.labels()) {
        out.push_str(&format!("ethnicity,{cat},{pct}\n"));
    }
    for (cat, pct) in mean_breakdown(&summary.member_age_pct, &Attribute::AgeBand.labels()) {
        out.push_str(&format!("age_band,{cat},{pct}\n"));
    }
    fs::File::create(path)
        .and_then(|mut f| f.write_all(out.as_bytes()))
        .map_err(|e| MetricsError::Io(format!("{}: {e}", path.display())))
}

/// Parses `attribute,category,percent` back into labeled breakdowns.
pub fn read_breakdown_csv(path: &Path) -> Result<(Vec<(String, f64)>, Vec<(String, f64)>), MetricsError> {
    let text =
        fs::read_to_string(path).map_err(|e| MetricsError::Io(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines();
    if lines.next() != Some("attribute,category,percent") {
        return Err(MetricsError::Io(format!("{}: unexpected header", path.display())));
    }
    let mut eth = Vec::new();
    let mut age = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 3 {
            return Err(MetricsError::Io(format!("{}: bad row `{line}`", path.display())));
        }
        let pct: f64 = cols[2]
            .parse()
            .map_err(|_| MetricsError::Io(format!("{}: bad percent `{}`", path.display(), cols[2])))?;
        match cols[0] {
            "ethnicity" => eth.push((cols[1].to_string(), pct)),
            "age_band" => age.push((cols[1].to_string(), pct)),
            other => return Err(MetricsError::UnknownAttribute(other.into())),
        }
    }
    Ok((eth, age))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub week_index: Vec<i64>,
    pub observed: Vec<f64>,
    pub sim_mean: Vec<f64>,
    pub sim_q05: Vec<f64>,
    pub sim_q25: Vec<f64>,
    pub sim_median: Vec<f64>,
    pub sim_q75: Vec<f64>,
    pub sim_q95: Vec<f64>,
    pub cumulative_sim: f64,
    pub cumulative_obs: f64,
    pub cumulative_difference: f64,
    pub peak_week_sim: i64,
    pub peak_value_sim: f64,
    pub peak_week_obs: i64,
    pub peak_value_obs: f64,
    /// Percent of infections per category, averaged across members.
    pub ethnicity_breakdown: Vec<(String, f64)>,
    pub age_breakdown: Vec<(String, f64)>,
}

fn mean_breakdown(per_member: &[Vec<f64>], labels: &[&'static str]) -> Vec<(String, f64)> {
    let n = per_member.len().max(1) as f64;
    labels
        .iter()
        .enumerate()
        .map(|(i, l)| {
            let avg = per_member.iter().map(|m| m[i]).sum::<f64>() / n;
            (l.to_string(), avg)
        })
        .collect()
}

/// Fully populated comparison over aligned week ranges.
pub fn comparison_report(
    summary: &EnsembleSummary,
    observed: &ObservationSeries,
) -> Result<ComparisonReport, MetricsError> {
    if summary.n_weeks() == 0 || observed.cases.is_empty() {
        return Err(MetricsError::EmptySeries);
    }
    if summary.n_weeks() != observed.cases.len() {
        return Err(MetricsError::WeekRangeMismatch {
            sim: summary.n_weeks(),
            observed: observed.cases.len(),
        });
    }
    let start = observed.start_week;
    let (peak_week_sim, peak_value_sim) = peak_week(&summary.mean, start)?;
    let (peak_week_obs, peak_value_obs) = peak_week(&observed.cases, start)?;
    // mean member cumulative equals the cumulative mean curve
    let cumulative_sim = if summary.member_cumulative.is_empty() {
        summary.mean.iter().sum()
    } else {
        summary.member_cumulative.iter().sum::<f64>() / summary.member_cumulative.len() as f64
    };
    let cumulative_obs: f64 = observed.cases.iter().sum();
    Ok(ComparisonReport {
        week_index: observed.week_indices().collect(),
        observed: observed.cases.clone(),
        sim_mean: summary.mean.clone(),
        sim_q05: summary.q05.clone(),
        sim_q25: summary.q25.clone(),
        sim_median: summary.median.clone(),
        sim_q75: summary.q75.clone(),
        sim_q95: summary.q95.clone(),
        cumulative_sim,
        cumulative_obs,
        cumulative_difference: cumulative_sim - cumulative_obs,
        peak_week_sim,
        peak_value_sim,
        peak_week_obs,
        peak_value_obs,
        ethnicity_breakdown: mean_breakdown(
            &summary.member_ethnicity_pct,
            &Attribute::Ethnicity.labels(),
        ),
        age_breakdown: mean_breakdown(&summary.member_age_pct, &Attribute::AgeBand.labels()),
    })
}

impl ComparisonReport {
    pub fn write_json(&self, path: &Path) -> Result<(), MetricsError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| MetricsError::Io(e.to_string()))?;
        fs::write(path, text).map_err(|e| MetricsError::Io(format!("{}: {e}", path.display())))
    }

    pub fn read_json(path: &Path) -> Result<Self, MetricsError> {
        let text = fs::read_to_string(path)
            .map_err(|e| MetricsError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| MetricsError::Io(format!("{}: {e}", path.display())))
    }

    /// `week_index,observed,sim_mean,sim_q05,sim_q95`
    pub fn write_curves_csv(&self, path: &Path) -> Result<(), MetricsError> {
        let mut out = String::from("week_index,observed,sim_mean,sim_q05,sim_q95\n");
        for (i, w) in self.week_index.iter().enumerate() {
            out.push_str(&format!(
                "{w},{},{},{},{}\n",
                self.observed[i], self.sim_mean[i], self.sim_q05[i], self.sim_q95[i]
            ));
        }
        fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| MetricsError::Io(format!("{}: {e}", path.display())))
    }

    /// `attribute,category,percent`
    pub fn write_breakdown_csv(&self, path: &Path) -> Result<(), MetricsError> {
        let mut out = String::from("attribute,category,percent\n");
        for (cat, pct) in &self.ethnicity_breakdown {
            out.push_str(&format!("ethnicity,{cat},{pct}\n"));
        }
        for (cat, pct) in &self.age_breakdown {
            out.push_str(&format!("age_band,{cat},{pct}\n"));
        }
        fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| MetricsError::Io(format!("{}: {e}", path.display())))
    }
}
