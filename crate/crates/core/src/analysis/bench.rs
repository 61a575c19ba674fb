use std::collections::BTreeMap;
use std::fmt;

use super::AnalysisError;

/// One timed build.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchRecord {
    pub case: String,
    pub buses: usize,
    pub wall_time: f64,
    pub peak_rss: u64,
    /// Bytes requested from the allocator during the build.
    pub allocated: Option<u64>,
    pub repetition: usize,
}

impl BenchRecord {
    pub const HEADER: &'static str = "case,buses,wall_time_s,peak_rss_bytes,allocated_bytes,repetition";

    pub fn csv_row(&self) -> String {
        let alloc = self.allocated.map(|a| a.to_string()).unwrap_or_default();
        format!("{},{},{:.9e},{},{},{}", self.case, self.buses, self.wall_time, self.peak_rss, alloc, self.repetition)
    }
}

/// Means over the non-warm-up repetitions of one case.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchAggregate {
    pub case: String,
    pub buses: usize,
    pub reps: usize,
    pub wall_time: f64,
    pub peak_rss: f64,
    pub allocated: Option<f64>,
}

/// Groups records by case, dropping repetition 0. Cases with only a warm-up
/// run produce no aggregate.
pub fn aggregate(records: &[BenchRecord]) -> Vec<BenchAggregate> {
    let mut by_case: BTreeMap<(usize, String), Vec<&BenchRecord>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.repetition > 0) {
        by_case.entry((r.buses, r.case.clone())).or_default().push(r);
    }
    by_case
        .into_iter()
        .map(|((buses, case), rs)| {
            let n = rs.len() as f64;
            let allocated = rs.iter().map(|r| r.allocated.map(|a| a as f64)).sum::<Option<f64>>().map(|s| s / n);
            BenchAggregate {
                case,
                buses,
                reps: rs.len(),
                wall_time: rs.iter().map(|r| r.wall_time).sum::<f64>() / n,
                peak_rss: rs.iter().map(|r| r.peak_rss as f64).sum::<f64>() / n,
                allocated,
            }
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalingFit {
    pub exponent: f64,
    pub intercept: f64,
    pub r2: f64,
}

impl fmt::Display for ScalingFit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "exponent {:.4} (r^2 {:.4})", self.exponent, self.r2)
    }
}

/// Least-squares fit of `log metric = a + p log size`.
pub fn fit_scaling(points: &[(f64, f64)]) -> Result<ScalingFit, AnalysisError> {
    let mut sizes: Vec<f64> = points.iter().map(|p| p.0).collect();
    sizes.sort_by(f64::total_cmp);
    sizes.dedup();
    if sizes.len() < 3 {
        return Err(AnalysisError::TooFewPoints(sizes.len()));
    }
    if let Some(p) = points.iter().find(|p| !(p.0 > 0.0 && p.1 > 0.0)) {
        return Err(AnalysisError::NonPositive(if p.1 > 0.0 { p.0 } else { p.1 }));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let exponent = sxy / sxx;
    let intercept = my - exponent * mx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok(ScalingFit { exponent, intercept, r2 })
}

/// Peak resident set size of this process (`VmHWM`), when the OS exposes it.
pub fn peak_rss_bytes() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    let kb: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kb * 1024)
}
