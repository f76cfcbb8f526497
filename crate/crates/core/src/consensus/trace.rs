//! Per-iteration record of a consensus run and its CSV form.

use crate::error::{Error, Result};

pub const TRACE_HEADER: [&str; 6] = ["iteration", "sigma0", "deleted_obs", "deleted_points", "phase_a_ms", "phase_b_ms"];

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SubBlockStat {
    pub sigma0: f64,
    pub lm_iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TraceRow {
    pub iteration: usize,
    pub sigma0: f64,
    pub deleted_observations: usize,
    pub deleted_points: usize,
    pub phase_a_ms: f64,
    pub phase_b_ms: f64,
    pub sub_blocks: Vec<SubBlockStat>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvergenceTrace {
    pub rows: Vec<TraceRow>,
}

impl ConvergenceTrace {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn sigma0(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.sigma0).collect()
    }

    pub fn final_sigma0(&self) -> Option<f64> {
        self.rows.last().map(|r| r.sigma0)
    }

    /// Running minimum of σ₀.
    pub fn best_so_far(&self) -> Vec<f64> {
        self.rows
            .iter()
            .scan(f64::INFINITY, |best, r| {
                *best = best.min(r.sigma0);
                Some(*best)
            })
            .collect()
    }

    pub fn deleted_observations(&self) -> usize {
        self.rows.iter().map(|r| r.deleted_observations).sum()
    }

    pub fn deleted_points(&self) -> usize {
        self.rows.iter().map(|r| r.deleted_points).sum()
    }

    fn sub_block_count(&self) -> usize {
        self.rows.iter().map(|r| r.sub_blocks.len()).max().unwrap_or(0)
    }

    pub fn to_csv(&self) -> String {
        let n = self.sub_block_count();
        let mut header: Vec<String> = TRACE_HEADER.iter().map(|s| s.to_string()).collect();
        for k in 0..n {
            header.push(format!("sb{k}_sigma0"));
            header.push(format!("sb{k}_lm_iters"));
        }
        let mut out = header.join(",");
        out.push('\n');
        for r in &self.rows {
            let mut f = vec![
                r.iteration.to_string(),
                format!("{:.12e}", r.sigma0),
                r.deleted_observations.to_string(),
                r.deleted_points.to_string(),
                format!("{:.3}", r.phase_a_ms),
                format!("{:.3}", r.phase_b_ms),
            ];
            for k in 0..n {
                match r.sub_blocks.get(k) {
                    Some(s) => {
                        f.push(format!("{:.12e}", s.sigma0));
                        f.push(s.lm_iterations.to_string());
                    }
                    None => f.extend([String::new(), String::new()]),
                }
            }
            out.push_str(&f.join(","));
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<ConvergenceTrace> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::parse(1, "empty trace"))?;
        let cols: Vec<&str> = header.split(',').map(str::trim).collect();
        for (i, want) in TRACE_HEADER.iter().enumerate() {
            if cols.get(i) != Some(want) {
                return Err(Error::parse(1, format!("trace column {} should be {want:?}", i + 1)));
            }
        }
        let extra = &cols[TRACE_HEADER.len()..];
        if !extra.len().is_multiple_of(2) {
            return Err(Error::parse(1, "sub-block columns come in sigma0/lm_iters pairs"));
        }
        for (k, pair) in extra.chunks(2).enumerate() {
            if pair[0] != format!("sb{k}_sigma0") || pair[1] != format!("sb{k}_lm_iters") {
                return Err(Error::parse(1, format!("unexpected sub-block columns {pair:?}")));
            }
        }
        let mut rows = Vec::new();
        for (n, line) in lines {
            let f: Vec<&str> = line.split(',').map(str::trim).collect();
            if f.len() != cols.len() {
                return Err(Error::parse(n + 1, format!("expected {} fields, found {}", cols.len(), f.len())));
            }
            let num = |i: usize| -> Result<f64> { f[i].parse().map_err(|_| Error::parse(n + 1, format!("invalid {}", cols[i]))) };
            let int = |i: usize| -> Result<usize> { f[i].parse().map_err(|_| Error::parse(n + 1, format!("invalid {}", cols[i]))) };
            let mut sub_blocks = Vec::new();
            for k in 0..extra.len() / 2 {
                let i = TRACE_HEADER.len() + 2 * k;
                if f[i].is_empty() {
                    continue;
                }
                sub_blocks.push(SubBlockStat {
                    sigma0: num(i)?,
                    lm_iterations: int(i + 1)?,
                });
            }
            rows.push(TraceRow {
                iteration: int(0)?,
                sigma0: num(1)?,
                deleted_observations: int(2)?,
                deleted_points: int(3)?,
                phase_a_ms: num(4)?,
                phase_b_ms: num(5)?,
                sub_blocks,
            });
        }
        Ok(ConvergenceTrace { rows })
    }
}
