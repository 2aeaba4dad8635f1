use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::{EmpiricalB, GapAccumulator, IterationRecord, RunConfig, Seeds, SimState};
use crate::objectives::Objective;
use crate::relaxations::ScheduleEvent;

use super::config::{run_fingerprint, ObjectiveSpec};

/// Trials run concurrently within a chunk; chunks are folded in order.
const CHUNK: usize = 16;

/// Per-trial scalars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub trial: usize,
    pub seeds: Seeds,
    pub alpha: f64,
    pub iterations: usize,
    pub final_f: f64,
    pub final_dist2: Option<f64>,
    pub min_grad_norm2: f64,
    pub min_grad_norm2_t: usize,
    /// Largest single `gap2` observed in this trial.
    pub max_gap2: Option<f64>,
}

/// Everything one trial produced.
#[derive(Debug, Clone)]
pub struct RunMetrics {
    pub fingerprint: String,
    pub records: Vec<IterationRecord>,
    pub events: Vec<ScheduleEvent>,
    pub summary: RunSummary,
}

/// Seeds of trial `k`: the base seeds on ChaCha stream `base.stream + k`.
pub fn trial_seeds(base: Seeds, trial: usize) -> Seeds {
    base.with_stream(base.stream + trial as u64)
}

pub fn summarize(records: &[IterationRecord], trial: usize, seeds: Seeds, alpha: f64) -> Result<RunSummary> {
    let last = records.last().ok_or(Error::Empty("run produced no records"))?;
    let (min_t, min_g) = records
        .iter()
        .map(|r| (r.t, r.grad_norm2))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
    let max_gap2 = records
        .iter()
        .filter_map(|r| r.gap2_max())
        .reduce(f64::max);
    Ok(RunSummary {
        trial,
        seeds,
        alpha,
        iterations: last.t,
        final_f: last.f_value,
        final_dist2: last.dist2_to_opt,
        min_grad_norm2: min_g,
        min_grad_norm2_t: min_t,
        max_gap2,
    })
}

/// Runs trial `trial` of `run` to its horizon.
pub fn run_trial(
    spec: &ObjectiveSpec,
    objective: &Objective,
    run: &RunConfig,
    trial: usize,
) -> Result<RunMetrics> {
    let seeds = trial_seeds(run.seeds, trial);
    let cfg = run.clone().with_seeds(seeds);
    let fingerprint = run_fingerprint(spec, &cfg)?;
    let mut state = SimState::new(cfg, objective)?;
    state.run()?;
    let alpha = state.alpha();
    let (records, events, _) = state.into_parts();
    let summary = summarize(&records, trial, seeds, alpha)?;
    Ok(RunMetrics {
        fingerprint,
        records,
        events,
        summary,
    })
}

/// Runs `trials` trials in parallel, mapping each through `map` and folding
/// the results into `acc` in trial order. Only one chunk of mapped values is
/// alive at a time.
pub fn fold_trials<A, T, M, F>(
    spec: &ObjectiveSpec,
    objective: &Objective,
    run: &RunConfig,
    trials: usize,
    mut acc: A,
    map: M,
    mut fold: F,
) -> Result<A>
where
    T: Send,
    M: Fn(RunMetrics) -> Result<T> + Sync,
    F: FnMut(&mut A, T) -> Result<()>,
{
    let ids: Vec<usize> = (0..trials).collect();
    for chunk in ids.chunks(CHUNK) {
        let mapped: Vec<Result<T>> = chunk
            .par_iter()
            .map(|&k| run_trial(spec, objective, run, k).and_then(&map))
            .collect();
        for m in mapped {
            fold(&mut acc, m?)?;
        }
    }
    Ok(acc)
}

/// Mean and standard error of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub se: f64,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        let nf = n as f64;
        let mean = values.iter().sum::<f64>() / nf;
        let se = if n > 1 {
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (nf - 1.0);
            (var / nf).sqrt()
        } else {
            0.0
        };
        Some(Self { mean, se, n })
    }
}

/// Aggregate over the trials of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchSummary {
    pub fingerprint: String,
    pub alpha: f64,
    pub trials: usize,
    pub final_f: Stat,
    pub final_dist2: Option<Stat>,
    /// Mean over trials of each trial's smallest `‖∇f‖²`.
    pub min_grad_norm2: Stat,
    /// Smallest over `t` of the trial-mean `‖∇f(x_t)‖²`.
    pub min_mean_grad_norm2: f64,
    pub min_mean_grad_norm2_t: usize,
    /// Absent when no consistency gap was observed.
    pub empirical_b: Option<EmpiricalB>,
    pub runs: Vec<RunSummary>,
}

#[derive(Default)]
struct BatchAcc {
    gaps: GapAccumulator,
    grad_sum: Vec<f64>,
    grad_count: Vec<usize>,
    runs: Vec<RunSummary>,
}

struct Reduced {
    summary: RunSummary,
    gaps: GapAccumulator,
    grads: Vec<f64>,
}

/// Runs a batch of trials, handing each full trial to `sink` (for example to
/// write its CSV) before reducing it to summaries.
pub fn run_batch<S>(
    spec: &ObjectiveSpec,
    objective: &Objective,
    run: &RunConfig,
    trials: usize,
    sink: S,
) -> Result<BatchSummary>
where
    S: Fn(&RunMetrics) -> Result<()> + Sync,
{
    if trials == 0 {
        return Err(Error::Config("trials must be >= 1".into()));
    }
    let acc = fold_trials(
        spec,
        objective,
        run,
        trials,
        BatchAcc::default(),
        |m| {
            sink(&m)?;
            let mut gaps = GapAccumulator::new();
            gaps.add_run(&m.records)?;
            Ok(Reduced {
                grads: m.records.iter().map(|r| r.grad_norm2).collect(),
                summary: m.summary,
                gaps,
            })
        },
        |acc, r| {
            acc.gaps.merge(&r.gaps)?;
            if acc.grad_sum.len() < r.grads.len() {
                acc.grad_sum.resize(r.grads.len(), 0.0);
                acc.grad_count.resize(r.grads.len(), 0);
            }
            for (t, g) in r.grads.iter().enumerate() {
                acc.grad_sum[t] += g;
                acc.grad_count[t] += 1;
            }
            acc.runs.push(r.summary);
            Ok(())
        },
    )?;

    let alpha = acc.runs[0].alpha;
    let (min_t, min_mean) = acc
        .grad_sum
        .iter()
        .zip(&acc.grad_count)
        .map(|(s, n)| s / *n as f64)
        .enumerate()
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
    let finals: Vec<f64> = acc.runs.iter().map(|r| r.final_f).collect();
    let dists: Vec<f64> = acc.runs.iter().filter_map(|r| r.final_dist2).collect();
    let mins: Vec<f64> = acc.runs.iter().map(|r| r.min_grad_norm2).collect();
    let empirical_b = match acc.gaps.finish(alpha) {
        Ok(b) => Some(b),
        Err(Error::Empty(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(BatchSummary {
        fingerprint: run_fingerprint(spec, run)?,
        alpha,
        trials,
        final_f: Stat::of(&finals).expect("trials >= 1"),
        final_dist2: Stat::of(&dists),
        min_grad_norm2: Stat::of(&mins).expect("trials >= 1"),
        min_mean_grad_norm2: min_mean,
        min_mean_grad_norm2_t: min_t,
        empirical_b,
        runs: acc.runs,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{LearningRate, Mode};
    use crate::objectives::{QuadraticSpec, Spectrum};
    use crate::relaxations::{RelaxationConfig, SchemeKind};

    fn setup() -> (ObjectiveSpec, Objective) {
        let spec = ObjectiveSpec::Quadratic(
            QuadraticSpec::new(3, 8, Spectrum { c: 0.5, l: 2.0 }, 1.0, 5).offset(1.0),
        );
        let obj = spec.build().unwrap();
        (spec, obj)
    }

    fn run(scheme: RelaxationConfig) -> RunConfig {
        RunConfig::new(
            4,
            40,
            LearningRate::Constant(0.05),
            Mode::ParallelStep,
            scheme,
            Seeds::new(3, 4),
        )
    }

    #[test]
    fn stat_of_known_sample() {
        let s = Stat::of(&[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(s.mean, 2.0);
        assert!((s.se - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!(Stat::of(&[]).is_none());
    }

    #[test]
    fn batch_is_deterministic_and_ordered() {
        let (spec, obj) = setup();
        let cfg = run(RelaxationConfig::new(SchemeKind::CrashVar).with_f(1));
        let a = run_batch(&spec, &obj, &cfg, 20, |_| Ok(())).unwrap();
        let b = run_batch(&spec, &obj, &cfg, 20, |_| Ok(())).unwrap();
        assert_eq!(a, b);
        assert!(a.runs.iter().enumerate().all(|(k, r)| r.trial == k));
        assert_eq!(a.runs[3].seeds.stream, 3);
    }

    #[test]
    fn batch_matches_direct_runs() {
        let (spec, obj) = setup();
        let cfg = run(RelaxationConfig::new(SchemeKind::AsyncMp).with_tau_max(2));
        let batch = run_batch(&spec, &obj, &cfg, 3, |_| Ok(())).unwrap();
        let runs: Vec<RunMetrics> = (0..3).map(|k| run_trial(&spec, &obj, &cfg, k).unwrap()).collect();
        let slices: Vec<&[IterationRecord]> = runs.iter().map(|r| r.records.as_slice()).collect();
        let direct = crate::kernel::empirical_b(&slices, 0.05).unwrap();
        assert_eq!(batch.empirical_b.unwrap().b, direct);
        let mean_final = runs.iter().map(|r| r.summary.final_f).sum::<f64>() / 3.0;
        assert!((batch.final_f.mean - mean_final).abs() < 1e-15);
    }

    #[test]
    fn exact_batch_has_zero_b() {
        let (spec, obj) = setup();
        let batch = run_batch(&spec, &obj, &run(RelaxationConfig::exact()), 2, |_| Ok(())).unwrap();
        assert_eq!(batch.empirical_b.unwrap().b, 0.0);
    }

    #[test]
    fn sink_errors_propagate() {
        let (spec, obj) = setup();
        let err = run_batch(&spec, &obj, &run(RelaxationConfig::exact()), 2, |_| {
            Err(Error::Invariant("stop".into()))
        })
        .unwrap_err();
        assert!(matches!(err, Error::Invariant(_)));
    }
}
