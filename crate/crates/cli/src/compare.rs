//! Side-by-side convergence traces.

use consba::consensus::ConvergenceTrace;

/// A trace counts as arrived once its σ₀ is within this factor of the
/// lowest final σ₀ among all inputs.
pub const TARGET_FACTOR: f64 = 1.01;

#[derive(Debug, Clone)]
pub struct Comparison {
    pub labels: Vec<String>,
    pub traces: Vec<ConvergenceTrace>,
    pub target: f64,
    /// First iteration at or below `target`, per trace.
    pub reached: Vec<Option<usize>>,
}

pub fn compare(labels: Vec<String>, traces: Vec<ConvergenceTrace>) -> Comparison {
    let lowest = traces
        .iter()
        .filter_map(|t| t.final_sigma0())
        .filter(|s| s.is_finite())
        .fold(f64::INFINITY, f64::min);
    let target = lowest * TARGET_FACTOR;
    let reached = traces
        .iter()
        .map(|t| t.rows.iter().find(|r| r.sigma0 <= target).map(|r| r.iteration))
        .collect();
    Comparison {
        labels,
        traces,
        target,
        reached,
    }
}

impl Comparison {
    fn rows(&self) -> usize {
        self.traces.iter().map(|t| t.len()).max().unwrap_or(0)
    }

    fn sigma(&self, t: usize, row: usize) -> Option<f64> {
        self.traces[t].rows.get(row).map(|r| r.sigma0)
    }

    /// Difference of trace `t` to the first trace at `row`, where both exist.
    fn difference(&self, t: usize, row: usize) -> Option<f64> {
        Some(self.sigma(t, row)? - self.sigma(0, row)?)
    }

    /// Largest absolute per-iteration difference to the first trace.
    pub fn max_difference(&self) -> f64 {
        let mut m: f64 = 0.0;
        for t in 1..self.traces.len() {
            for row in 0..self.rows() {
                if let Some(d) = self.difference(t, row) {
                    m = m.max(d.abs());
                }
            }
        }
        m
    }

    /// Label of the trace that reached the target in the fewest iterations.
    pub fn fastest(&self) -> Option<&str> {
        self.reached
            .iter()
            .enumerate()
            .filter_map(|(t, r)| r.map(|i| (i, t)))
            .min()
            .map(|(_, t)| self.labels[t].as_str())
    }

    pub fn to_csv(&self) -> String {
        let mut header = vec!["iteration".to_string()];
        header.extend(self.labels.iter().map(|l| format!("sigma0_{l}")));
        header.extend(self.labels.iter().skip(1).map(|l| format!("diff_{l}")));
        let mut out = header.join(",");
        out.push('\n');
        for row in 0..self.rows() {
            let mut f = vec![(row + 1).to_string()];
            for t in 0..self.traces.len() {
                f.push(self.sigma(t, row).map(|s| format!("{s:.12e}")).unwrap_or_default());
            }
            for t in 1..self.traces.len() {
                f.push(self.difference(t, row).map(|d| format!("{d:.6e}")).unwrap_or_default());
            }
            out.push_str(&f.join(","));
            out.push('\n');
        }
        out
    }

    pub fn report(&self) -> String {
        let mut s = String::from("# Convergence comparison\n\n");
        s.push_str("| trace | iterations | final sigma0 | best sigma0 | deleted obs | deleted points | reaches target at |\n");
        s.push_str("|---|---|---|---|---|---|---|\n");
        for (t, trace) in self.traces.iter().enumerate() {
            let best = trace.best_so_far().last().copied().unwrap_or(f64::NAN);
            s.push_str(&format!(
                "| {} | {} | {:.6} | {:.6} | {} | {} | {} |\n",
                self.labels[t],
                trace.len(),
                trace.final_sigma0().unwrap_or(f64::NAN),
                best,
                trace.deleted_observations(),
                trace.deleted_points(),
                self.reached[t].map_or("-".to_string(), |i| i.to_string()),
            ));
        }
        s.push_str(&format!("\nTarget sigma0: {:.6} ({TARGET_FACTOR} x lowest final).\n", self.target));
        if let Some(f) = self.fastest() {
            s.push_str(&format!("First to reach the target: {f}.\n"));
        }
        if self.traces.len() > 1 {
            s.push_str(&format!("Largest difference to {}: {:.3e}.\n", self.labels[0], self.max_difference()));
        }

        s.push_str("\n| iteration |");
        for l in &self.labels {
            s.push_str(&format!(" {l} |"));
        }
        for l in self.labels.iter().skip(1) {
            s.push_str(&format!(" {l} - {} |", self.labels[0]));
        }
        s.push('\n');
        s.push_str(&"|---".repeat(2 * self.labels.len()));
        s.push_str("|\n");
        let cell = |v: Option<f64>, diff: bool| match v {
            Some(x) if diff => format!(" {x:+.3e} |"),
            Some(x) => format!(" {x:.6} |"),
            None => " |".to_string(),
        };
        for row in 0..self.rows() {
            s.push_str(&format!("| {} |", row + 1));
            for t in 0..self.traces.len() {
                s.push_str(&cell(self.sigma(t, row), false));
            }
            for t in 1..self.traces.len() {
                s.push_str(&cell(self.difference(t, row), true));
            }
            s.push('\n');
        }
        s
    }
}
