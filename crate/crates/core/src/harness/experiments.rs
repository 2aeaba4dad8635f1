use serde::{Deserialize, Serialize};

use crate::compression::Compressor;
use crate::error::{config_err, Error, Result};
use crate::kernel::{LearningRate, MetricsOptions, Mode, RunConfig, Seeds, SimState};
use crate::relaxations::{RelaxationConfig, SchemeKind};
use crate::theory::bound_b;

use super::config::{ExperimentConfig, LowerBoundConfig, ObjectiveSpec, Tolerance, VerifyCase};
use super::output::{fmt_f64, fmt_opt};
use super::trials::{run_batch, BatchSummary};

/// Smallest trial count accepted by `verify-bounds`.
pub const MIN_VERIFY_TRIALS: usize = 30;

/// One line of the `verify-bounds` report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundRow {
    pub label: String,
    pub scheme: SchemeKind,
    /// `None` for measured-only schemes.
    pub b_theory: Option<f64>,
    pub b_empirical: f64,
    pub b_empirical_se: f64,
    /// `None` when the theoretical constant is absent or zero.
    pub ratio: Option<f64>,
    /// `None` for measured-only schemes.
    pub pass: Option<bool>,
    pub alpha: f64,
    pub trials: usize,
    pub formula: Option<String>,
}

impl BoundRow {
    pub fn pass_label(&self) -> &'static str {
        match self.pass {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "n/a",
        }
    }
}

pub const BOUND_COLUMNS: [&str; 7] = [
    "scheme",
    "B_theory",
    "B_empirical",
    "B_empirical_se",
    "ratio",
    "pass",
    "alpha",
];

pub fn bound_rows_table(rows: &[BoundRow]) -> (Vec<String>, Vec<Vec<String>>) {
    let header = BOUND_COLUMNS.iter().map(|s| s.to_string()).collect();
    let body = rows
        .iter()
        .map(|r| {
            vec![
                r.label.clone(),
                r.b_theory.map(fmt_f64).unwrap_or_else(|| "n/a".into()),
                fmt_f64(r.b_empirical),
                fmt_f64(r.b_empirical_se),
                r.ratio.map(fmt_f64).unwrap_or_else(|| "n/a".into()),
                r.pass_label().into(),
                fmt_f64(r.alpha),
            ]
        })
        .collect();
    (header, body)
}

/// `B_emp ≤ B_th·(1 + tol) + se_mult·SE`.
pub fn bound_passes(b_theory: f64, b_emp: f64, se: f64, tol: Tolerance) -> bool {
    b_emp <= b_theory * (1.0 + tol.tol) + tol.se_mult * se
}

/// Runs one `verify-bounds` case.
pub fn verify_case(
    base_spec: &ObjectiveSpec,
    base_run: &RunConfig,
    case: &VerifyCase,
    trials: usize,
    tol: Tolerance,
) -> Result<BoundRow> {
    if trials < MIN_VERIFY_TRIALS {
        return Err(config_err(format!(
            "verify-bounds needs at least {MIN_VERIFY_TRIALS} trials, got {trials}"
        )));
    }
    let spec = case.objective.as_ref().unwrap_or(base_spec);
    let objective = spec.build()?;
    let run = case.run_config(base_run).with_metrics(MetricsOptions::lean());
    run.validate(objective.dim())?;
    let theory = match bound_b(&run.scheme, objective.constants(), run.p, objective.dim()) {
        Ok(t) => Some(t),
        Err(Error::MeasuredOnly(_)) => None,
        Err(e) => return Err(e),
    };
    let batch = run_batch(spec, &objective, &run, trials, |_| Ok(()))?;
    let emp = batch
        .empirical_b
        .ok_or(Error::Empty("no consistency gap was observed"))?;
    let b_theory = theory.as_ref().map(|t| t.b);
    Ok(BoundRow {
        label: case.label(),
        scheme: run.scheme.scheme,
        b_theory,
        b_empirical: emp.b,
        b_empirical_se: emp.se,
        ratio: b_theory.filter(|b| *b > 0.0).map(|b| emp.b / b),
        pass: b_theory.map(|b| bound_passes(b, emp.b, emp.se, tol)),
        alpha: batch.alpha,
        trials,
        formula: theory.map(|t| t.formula.to_string()),
    })
}

pub fn verify_bounds(cfg: &ExperimentConfig) -> Result<Vec<BoundRow>> {
    cfg.validate()?;
    if cfg.verify.is_empty() {
        return Err(config_err("verify-bounds needs at least one entry in `verify`"));
    }
    cfg.verify
        .iter()
        .map(|case| verify_case(&cfg.objective, &cfg.run, case, cfg.trials, cfg.tolerance))
        .collect()
}

/// Iterations-to-ε for one adversarial strength.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundRow {
    pub b: f64,
    /// Step size that reached ε fastest; `None` when no grid point did.
    pub alpha: Option<f64>,
    /// First `t` with `‖x_t − x*‖² ≤ ε`; `None` means more than `cap`.
    pub iterations: Option<usize>,
    /// Closed-form count of plain gradient descent at the chosen step, for `B = 0`.
    pub closed_form: Option<usize>,
}

impl LowerBoundRow {
    pub fn iterations_label(&self, cap: usize) -> String {
        self.iterations
            .map(|n| n.to_string())
            .unwrap_or_else(|| format!(">{cap}"))
    }
}

/// `⌈ln(dist0/ε) / (2|ln(1−α)|)⌉`: gradient descent on `½(x−x*)²` from
/// squared distance `dist0`.
pub fn gd_iterations(dist0: f64, eps: f64, alpha: f64) -> usize {
    if dist0 <= eps {
        return 0;
    }
    ((dist0 / eps).ln() / (2.0 * (1.0 - alpha).ln().abs())).ceil() as usize
}

/// First iteration at which the adversarial run reaches `eps`, or `None`
/// when it stalls or hits `horizon` first.
fn adversarial_hitting_time(
    b: f64,
    alpha: f64,
    horizon: usize,
    lb: &LowerBoundConfig,
    seeds: Seeds,
) -> Result<Option<usize>> {
    let objective = ObjectiveSpec::half_square(1, lb.x_star).build()?;
    let run = RunConfig::new(
        1,
        horizon,
        LearningRate::Constant(alpha),
        Mode::SingleStep,
        RelaxationConfig::new(SchemeKind::Adversarial).with_b_adv(b),
        seeds,
    )
    .with_metrics(MetricsOptions::lean());
    let mut state = SimState::new(run, &objective)?;
    let mut prev = f64::INFINITY;
    let mut reached = false;
    state.run_until(|r| {
        let d = r.dist2_to_opt.expect("quadratic optimum is known");
        if d <= lb.eps {
            reached = true;
            return true;
        }
        // No relative progress left: the run has settled above eps.
        let stalled = d > prev * (1.0 - 1e-12);
        prev = d;
        stalled
    })
    .map(|t| t.filter(|_| reached))
}

/// Iterations-to-ε per adversarial strength, each at its best grid step.
pub fn lower_bound(lb: &LowerBoundConfig, seeds: Seeds) -> Result<Vec<LowerBoundRow>> {
    lb.validate()?;
    let grid = lb.alpha_grid();
    let dist0 = lb.x_star * lb.x_star;
    let mut rows = Vec::with_capacity(lb.b_list.len());
    for &b in &lb.b_list {
        let mut best: Option<(f64, usize)> = None;
        for &alpha in &grid {
            let horizon = best.map_or(lb.cap, |(_, n)| n.saturating_sub(1)).max(1);
            if best.is_some_and(|(_, n)| n <= 1) {
                break;
            }
            if let Some(n) = adversarial_hitting_time(b, alpha, horizon, lb, seeds)? {
                if best.is_none_or(|(_, m)| n < m) {
                    best = Some((alpha, n));
                }
            }
        }
        rows.push(LowerBoundRow {
            b,
            alpha: best.map(|(a, _)| a),
            iterations: best.map(|(_, n)| n),
            closed_form: (b == 0.0)
                .then(|| best.map(|(a, _)| gd_iterations(dist0, lb.eps, a)))
                .flatten(),
        });
    }
    Ok(rows)
}

/// Axes accepted by `sweep`.
pub const SWEEP_AXES: [&str; 10] = [
    "alpha", "b_adv", "beta", "f", "K", "late_prob", "p", "T", "tau_max", "trials",
];

fn as_count(axis: &str, v: f64) -> Result<usize> {
    if v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64 {
        Ok(v as usize)
    } else {
        Err(config_err(format!("sweep axis {axis} needs non-negative integers, got {v}")))
    }
}

/// Applies one axis value to a copy of the experiment.
fn apply_axis(run: &mut RunConfig, trials: &mut usize, axis: &str, v: f64) -> Result<()> {
    let s = &mut run.scheme;
    match axis {
        "alpha" => run.alpha = LearningRate::Constant(v),
        "b_adv" => s.b_adv = v,
        "beta" => s.beta = v,
        "f" => s.f = as_count(axis, v)?,
        "K" => s.compressor = Compressor::TopK(as_count(axis, v)?),
        "late_prob" => s.late_prob = v,
        "p" => run.p = as_count(axis, v)?,
        "T" => run.horizon = as_count(axis, v)?,
        "tau_max" => s.tau_max = as_count(axis, v)?,
        "trials" => *trials = as_count(axis, v)?,
        other => {
            return Err(config_err(format!(
                "unknown sweep axis {other}; expected one of {}",
                SWEEP_AXES.join(", ")
            )))
        }
    }
    Ok(())
}

/// One cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub values: Vec<(String, f64)>,
    pub summary: BatchSummary,
}

pub fn sweep(cfg: &ExperimentConfig) -> Result<Vec<SweepCell>> {
    cfg.validate()?;
    if cfg.sweep.is_empty() {
        return Err(config_err("sweep needs at least one axis"));
    }
    for (axis, values) in &cfg.sweep {
        if values.is_empty() {
            return Err(config_err(format!("sweep axis {axis} is empty")));
        }
    }
    let objective = cfg.objective.build()?;
    let axes: Vec<(&String, &Vec<f64>)> = cfg.sweep.iter().collect();
    let cells: usize = axes.iter().map(|(_, v)| v.len()).product();
    let mut out = Vec::with_capacity(cells);
    for cell in 0..cells {
        let mut rem = cell;
        let mut values = vec![(String::new(), 0.0); axes.len()];
        for (k, (axis, vals)) in axes.iter().enumerate().rev() {
            values[k] = ((*axis).clone(), vals[rem % vals.len()]);
            rem /= vals.len();
        }
        let mut run = cfg.run.clone();
        let mut trials = cfg.trials;
        for (axis, v) in &values {
            apply_axis(&mut run, &mut trials, axis, *v)?;
        }
        if trials == 0 {
            return Err(config_err("trials must be >= 1"));
        }
        run.validate(objective.dim())?;
        let summary = run_batch(&cfg.objective, &objective, &run, trials, |_| Ok(()))?;
        out.push(SweepCell { values, summary });
    }
    Ok(out)
}

pub fn sweep_table(cells: &[SweepCell]) -> (Vec<String>, Vec<Vec<String>>) {
    let mut header: Vec<String> = cells
        .first()
        .map(|c| c.values.iter().map(|(a, _)| a.clone()).collect())
        .unwrap_or_default();
    header.extend(
        [
            "n_trials",
            "alpha",
            "final_f_mean",
            "final_f_se",
            "final_dist2_mean",
            "final_dist2_se",
            "min_grad_norm2_mean",
            "min_grad_norm2_se",
            "min_mean_grad_norm2",
            "B_empirical",
            "B_empirical_se",
            "fingerprint",
        ]
        .map(String::from),
    );
    let rows = cells
        .iter()
        .map(|c| {
            let s = &c.summary;
            let mut row: Vec<String> = c.values.iter().map(|(_, v)| v.to_string()).collect();
            row.extend([
                s.trials.to_string(),
                fmt_f64(s.alpha),
                fmt_f64(s.final_f.mean),
                fmt_f64(s.final_f.se),
                fmt_opt(s.final_dist2.map(|d| d.mean)),
                fmt_opt(s.final_dist2.map(|d| d.se)),
                fmt_f64(s.min_grad_norm2.mean),
                fmt_f64(s.min_grad_norm2.se),
                fmt_f64(s.min_mean_grad_norm2),
                fmt_opt(s.empirical_b.map(|b| b.b)),
                fmt_opt(s.empirical_b.map(|b| b.se)),
                s.fingerprint.clone(),
            ]);
            row
        })
        .collect();
    (header, rows)
}
