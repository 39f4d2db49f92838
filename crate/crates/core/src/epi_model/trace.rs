//! Per-run output record and the trace.csv format.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::SimError;

/// Daily aggregates plus per-agent infection timestamps for one run.
/// In relaxed mode the compartment columns carry fractional masses.
#[derive(Debug, Clone, PartialEq)]
pub struct EpidemicTrace {
    pub new_infections: Vec<f64>,
    pub s: Vec<f64>,
    pub e: Vec<f64>,
    pub i: Vec<f64>,
    pub r: Vec<f64>,
    pub r_mult: Vec<f64>,
    pub phi: Vec<f64>,
    /// Day an agent's indicator flipped; None = never infected. In relaxed
    /// mode this is the first day cumulative infection mass crossed 1/2.
    pub infection_time: Vec<Option<u32>>,
}

impl EpidemicTrace {
    pub fn with_capacity(days: usize, n_agents: usize) -> Self {
        EpidemicTrace {
            new_infections: Vec::with_capacity(days),
            s: Vec::with_capacity(days),
            e: Vec::with_capacity(days),
            i: Vec::with_capacity(days),
            r: Vec::with_capacity(days),
            r_mult: Vec::with_capacity(days),
            phi: Vec::with_capacity(days),
            infection_time: vec![None; n_agents],
        }
    }

    pub fn days(&self) -> usize {
        self.new_infections.len()
    }

    pub fn cumulative_infections(&self) -> f64 {
        self.new_infections.iter().sum()
    }

    /// S+E+I+R == N and monotone cumulative infections, checked to `tol`.
    pub fn check_conserved(&self, n_agents: usize, tol: f64) -> Result<(), SimError> {
        let n = n_agents as f64;
        for d in 0..self.days() {
            let total = self.s[d] + self.e[d] + self.i[d] + self.r[d];
            if (total - n).abs() > tol {
                return Err(SimError::InconsistentState(format!(
                    "day {d}: S+E+I+R = {total}, expected {n}"
                )));
            }
            if self.new_infections[d] < -tol {
                return Err(SimError::InconsistentState(format!(
                    "day {d}: negative incidence {}",
                    self.new_infections[d]
                )));
            }
        }
        Ok(())
    }

    pub fn write_csv(&self, path: &Path) -> Result<(), SimError> {
        let mut out = String::from("day,new_infections,S,E,I,R,R_t_multiplier,phi_t\n");
        for d in 0..self.days() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                d,
                self.new_infections[d],
                self.s[d],
                self.e[d],
                self.i[d],
                self.r[d],
                self.r_mult[d],
                self.phi[d]
            ));
        }
        fs::File::create(path)
            .and_then(|mut f| f.write_all(out.as_bytes()))
            .map_err(|e| SimError::Io(format!("{}: {e}", path.display())))
    }
}
