use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Snapshot of a run at iteration `t`, together with the step taken from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub t: usize,
    /// `f(x_t)`.
    pub f_value: f64,
    /// `‖∇f(x_t)‖²`.
    pub grad_norm2: f64,
    /// `‖x_t − v_t^i‖²` per worker; `None` for crashed workers and, in
    /// single-step mode, for workers that did not act at `t`.
    pub gap2: Vec<Option<f64>>,
    /// `|I_t|` of the step leaving `x_t`; `None` on the final record.
    pub participants: Option<usize>,
    /// `‖x_t − x*‖²` when the optimum is known.
    pub dist2_to_opt: Option<f64>,
}

impl IterationRecord {
    fn known_gaps(&self) -> impl Iterator<Item = f64> + '_ {
        self.gap2.iter().flatten().copied()
    }

    pub fn gap2_min(&self) -> Option<f64> {
        self.known_gaps().reduce(f64::min)
    }

    pub fn gap2_max(&self) -> Option<f64> {
        self.known_gaps().reduce(f64::max)
    }

    pub fn gap2_mean(&self) -> Option<f64> {
        let (sum, n) = self.known_gaps().fold((0.0, 0usize), |(s, n), g| (s + g, n + 1));
        (n > 0).then(|| sum / n as f64)
    }
}

/// Empirical consistency constant with its Monte-Carlo standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmpiricalB {
    /// `sqrt(max_(t,i) mean gap2) / α`.
    pub b: f64,
    /// Delta-method standard error of `b` at the maximizing cell.
    pub se: f64,
    pub t: usize,
    pub worker: usize,
    /// Number of runs contributing to the maximizing cell.
    pub samples: usize,
}

/// Streaming per-cell mean of `gap2` over runs. Runs may be added one at a
/// time so large batches never have to be held in memory.
#[derive(Debug, Clone, Default)]
pub struct GapAccumulator {
    p: usize,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    count: Vec<u32>,
    runs: usize,
}

impl GapAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn runs(&self) -> usize {
        self.runs
    }

    pub fn add_run(&mut self, records: &[IterationRecord]) -> Result<()> {
        let p = records.first().map(|r| r.gap2.len()).unwrap_or(0);
        if self.runs == 0 {
            self.p = p;
        } else if p != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                got: p,
            });
        }
        let cells = records.len() * p;
        if self.sum.len() < cells {
            self.sum.resize(cells, 0.0);
            self.sum_sq.resize(cells, 0.0);
            self.count.resize(cells, 0);
        }
        for (t, rec) in records.iter().enumerate() {
            for (i, g) in rec.gap2.iter().enumerate() {
                if let Some(g) = *g {
                    let k = t * p + i;
                    self.sum[k] += g;
                    self.sum_sq[k] += g * g;
                    self.count[k] += 1;
                }
            }
        }
        self.runs += 1;
        Ok(())
    }

    /// Folds another accumulator in; adding in a fixed order keeps results
    /// bit-reproducible.
    pub fn merge(&mut self, other: &GapAccumulator) -> Result<()> {
        if other.runs == 0 {
            return Ok(());
        }
        if self.runs == 0 {
            *self = other.clone();
            return Ok(());
        }
        if other.p != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                got: other.p,
            });
        }
        if self.sum.len() < other.sum.len() {
            self.sum.resize(other.sum.len(), 0.0);
            self.sum_sq.resize(other.sum.len(), 0.0);
            self.count.resize(other.sum.len(), 0);
        }
        for k in 0..other.sum.len() {
            self.sum[k] += other.sum[k];
            self.sum_sq[k] += other.sum_sq[k];
            self.count[k] += other.count[k];
        }
        self.runs += other.runs;
        Ok(())
    }

    /// Mean gap2 of one cell, if any run observed it.
    pub fn mean(&self, t: usize, worker: usize) -> Option<f64> {
        let k = t * self.p + worker;
        let n = *self.count.get(k)?;
        (n > 0).then(|| self.sum[k] / n as f64)
    }

    pub fn finish(&self, alpha: f64) -> Result<EmpiricalB> {
        if self.runs == 0 {
            return Err(Error::Empty("empirical_B needs at least one run"));
        }
        let mut best: Option<(usize, f64)> = None;
        for k in 0..self.sum.len() {
            let n = self.count[k];
            if n == 0 {
                continue;
            }
            let mean = self.sum[k] / n as f64;
            if best.is_none_or(|(_, m)| mean > m) {
                best = Some((k, mean));
            }
        }
        let (k, mean) = best.ok_or(Error::Empty("no observed gap cells"))?;
        let n = self.count[k] as f64;
        let var = if n > 1.0 {
            ((self.sum_sq[k] - n * mean * mean) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        let se_mean = (var / n).sqrt();
        let b = mean.max(0.0).sqrt() / alpha;
        let se = if mean > 0.0 {
            se_mean / (2.0 * alpha * mean.sqrt())
        } else {
            0.0
        };
        Ok(EmpiricalB {
            b,
            se,
            t: k / self.p.max(1),
            worker: k % self.p.max(1),
            samples: self.count[k] as usize,
        })
    }
}

/// `sqrt(max over (t,i) of the mean over runs of gap2(t,i)) / α`.
pub fn empirical_b(runs: &[&[IterationRecord]], alpha: f64) -> Result<f64> {
    if runs.is_empty() {
        return Err(Error::Empty("empirical_B needs at least one run"));
    }
    let mut acc = GapAccumulator::new();
    for r in runs {
        acc.add_run(r)?;
    }
    Ok(acc.finish(alpha)?.b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(t: usize, gaps: &[Option<f64>]) -> IterationRecord {
        IterationRecord {
            t,
            f_value: 0.0,
            grad_norm2: 0.0,
            gap2: gaps.to_vec(),
            participants: None,
            dist2_to_opt: None,
        }
    }

    #[test]
    fn gap_summaries_skip_unknown_cells() {
        let r = rec(0, &[Some(1.0), None, Some(3.0)]);
        assert_eq!(r.gap2_min(), Some(1.0));
        assert_eq!(r.gap2_max(), Some(3.0));
        assert_eq!(r.gap2_mean(), Some(2.0));
        assert_eq!(rec(0, &[None]).gap2_mean(), None);
    }

    #[test]
    fn empirical_b_takes_max_of_means() {
        let a = vec![rec(0, &[Some(0.0), Some(0.0)]), rec(1, &[Some(4.0), Some(1.0)])];
        let b = vec![rec(0, &[Some(0.0), Some(2.0)]), rec(1, &[Some(0.0), None])];
        // cell means: (0,0)=0, (0,1)=1, (1,0)=2, (1,1)=1
        let got = empirical_b(&[&a, &b], 0.5).unwrap();
        assert!((got - 2f64.sqrt() / 0.5).abs() < 1e-15);
    }

    #[test]
    fn exact_runs_give_zero() {
        let a = vec![rec(0, &[Some(0.0); 3]), rec(1, &[Some(0.0); 3])];
        assert_eq!(empirical_b(&[&a, &a], 0.1).unwrap(), 0.0);
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(empirical_b(&[], 0.1), Err(Error::Empty(_))));
    }

    #[test]
    fn merge_matches_sequential_adds() {
        let a = vec![rec(0, &[Some(1.0), Some(2.0)])];
        let b = vec![rec(0, &[Some(3.0), None])];
        let mut seq = GapAccumulator::new();
        seq.add_run(&a).unwrap();
        seq.add_run(&b).unwrap();
        let mut left = GapAccumulator::new();
        left.add_run(&a).unwrap();
        let mut right = GapAccumulator::new();
        right.add_run(&b).unwrap();
        left.merge(&right).unwrap();
        assert_eq!(seq.finish(1.0).unwrap(), left.finish(1.0).unwrap());
        assert_eq!(left.mean(0, 0), Some(2.0));
        assert_eq!(left.mean(0, 1), Some(2.0));
    }
}
