use std::collections::HashMap;
use std::fmt::Write as _;

use num_complex::Complex64;

use super::AnalysisError;
use crate::integrator::{uniform_grid, Trajectory};

/// Values of named variables on a fixed time grid.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledTrajectory {
    pub names: Vec<String>,
    pub times: Vec<f64>,
    pub rows: Vec<Vec<f64>>,
}

impl SampledTrajectory {
    pub fn from_trajectory(traj: &Trajectory, times: &[f64]) -> Result<Self, AnalysisError> {
        let rows = times.iter().map(|&t| traj.dense_output(t)).collect::<Result<Vec<_>, _>>()?;
        Ok(SampledTrajectory { names: traj.names.clone(), times: times.to_vec(), rows })
    }

    /// Parses the `t,<names…>` CSV written by [`Trajectory::to_csv`].
    pub fn from_csv(text: &str) -> Result<Self, AnalysisError> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(AnalysisError::Parse { line: 1, reason: "empty file".into() })?;
        let mut cols = header.split(',');
        if cols.next().map(str::trim) != Some("t") {
            return Err(AnalysisError::Parse { line: 1, reason: "first column must be `t`".into() });
        }
        let names: Vec<String> = cols.map(|s| s.trim().to_string()).collect();
        let mut times = Vec::new();
        let mut rows = Vec::new();
        for (k, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let vals = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| AnalysisError::Parse { line: k + 1, reason: e.to_string() })?;
            if vals.len() != names.len() + 1 {
                return Err(AnalysisError::Parse {
                    line: k + 1,
                    reason: format!("expected {} columns, found {}", names.len() + 1, vals.len()),
                });
            }
            times.push(vals[0]);
            rows.push(vals[1..].to_vec());
        }
        Ok(SampledTrajectory { names, times, rows })
    }

    pub fn column(&self, name: &str) -> Option<Vec<f64>> {
        let k = self.names.iter().position(|n| n == name)?;
        Some(self.rows.iter().map(|r| r[k]).collect())
    }

    /// ∞-norm difference per shared variable. Both samples must use the
    /// same time grid.
    pub fn diff(&self, other: &SampledTrajectory) -> Result<EquivalenceReport, AnalysisError> {
        if self.times.len() != other.times.len() || self.times.iter().zip(&other.times).any(|(a, b)| (a - b).abs() > 1e-9) {
            return Err(AnalysisError::Parse { line: 0, reason: "time grids differ".into() });
        }
        let idx: HashMap<&str, usize> = other.names.iter().enumerate().map(|(k, n)| (n.as_str(), k)).collect();
        let shared: Vec<(usize, usize)> =
            self.names.iter().enumerate().filter_map(|(k, n)| idx.get(n.as_str()).map(|&j| (k, j))).collect();
        if shared.is_empty() {
            return Err(AnalysisError::DisjointVariables);
        }
        let per_variable: Vec<(String, f64)> = shared
            .iter()
            .map(|&(a, b)| {
                let d = self.rows.iter().zip(&other.rows).map(|(ra, rb)| (ra[a] - rb[b]).abs()).fold(0.0, f64::max);
                (self.names[a].clone(), d)
            })
            .collect();
        let max = per_variable.iter().map(|p| p.1).fold(0.0, f64::max);
        let mean = per_variable.iter().map(|p| p.1).sum::<f64>() / per_variable.len() as f64;
        let dt = if self.times.len() > 1 { self.times[1] - self.times[0] } else { 0.0 };
        Ok(EquivalenceReport { per_variable, max, mean, eigen_diff: None, grid_dt: dt, points: self.times.len() })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EquivalenceReport {
    pub per_variable: Vec<(String, f64)>,
    pub max: f64,
    pub mean: f64,
    pub eigen_diff: Option<f64>,
    pub grid_dt: f64,
    pub points: usize,
}

impl EquivalenceReport {
    /// `variable,infnorm` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("variable,infnorm\n");
        for (n, v) in &self.per_variable {
            writeln!(s, "{n},{v:.16e}").unwrap();
        }
        s
    }

    pub fn worst(&self) -> Option<&(String, f64)> {
        self.per_variable.iter().max_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// Compares two trajectories through their dense output on a uniform grid
/// of spacing `dt` covering the common time span.
pub fn trajectory_diff(a: &Trajectory, b: &Trajectory, dt: f64) -> Result<EquivalenceReport, AnalysisError> {
    let t0 = a.t_start().max(b.t_start());
    let t1 = a.t_end().min(b.t_end());
    let grid = uniform_grid(t0, t1, dt);
    let sa = SampledTrajectory::from_trajectory(a, &grid)?;
    let sb = SampledTrajectory::from_trajectory(b, &grid)?;
    sa.diff(&sb)
}

/// Greedy nearest-neighbour pairing: each eigenvalue of `a` in turn takes
/// the closest unused eigenvalue of `b`. Returns the largest pair distance.
pub fn eigen_diff(a: &[Complex64], b: &[Complex64]) -> Result<f64, AnalysisError> {
    if a.len() != b.len() {
        return Err(AnalysisError::CountMismatch(a.len(), b.len()));
    }
    let mut used = vec![false; b.len()];
    let mut worst = 0.0f64;
    for x in a {
        let (k, d) = b
            .iter()
            .enumerate()
            .filter(|(k, _)| !used[*k])
            .map(|(k, y)| (k, (x - y).norm()))
            .min_by(|p, q| p.1.total_cmp(&q.1))
            .expect("equal lengths");
        used[k] = true;
        worst = worst.max(d);
    }
    Ok(worst)
}
