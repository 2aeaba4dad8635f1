use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::{RelaxationConfig, ScheduleEvent, SchemeKind};
use crate::error::{config_err, Error, Result};
use crate::kernel::{GradId, Pending, RunConfig, Substitution, Term, WorkerState};
use crate::objectives::{Objective, ObjectiveKind, ParamVector};

/// Planned crashes by iteration: `(node, targets reached)`.
type CrashPlan = BTreeMap<usize, Vec<(usize, Vec<usize>)>>;

/// Event log that can be switched off for large batches.
#[derive(Debug, Default)]
pub struct EventSink(Option<Vec<ScheduleEvent>>);

impl EventSink {
    pub fn new(enabled: bool) -> Self {
        Self(enabled.then(Vec::new))
    }

    pub fn push(&mut self, ev: ScheduleEvent) {
        if let Some(v) = self.0.as_mut() {
            v.push(ev);
        }
    }

    pub fn as_slice(&self) -> &[ScheduleEvent] {
        self.0.as_deref().unwrap_or(&[])
    }

    pub fn into_vec(self) -> Vec<ScheduleEvent> {
        self.0.unwrap_or_default()
    }
}

/// Everything a scheme may touch while deciding one parallel round.
pub struct DeliveryCtx<'a> {
    pub t: usize,
    pub p: usize,
    pub workers: &'a mut [WorkerState],
    pub payloads: &'a BTreeMap<GradId, ParamVector>,
    pub rng: &'a mut ChaCha8Rng,
    pub events: &'a mut EventSink,
    pub crash_count: &'a mut usize,
}

/// Per-receiver view-update terms, `I_t`, and the nodes crashing this round.
#[derive(Debug, Clone, Default)]
pub struct Delivery {
    pub terms: Vec<Vec<Term>>,
    pub participants: Vec<usize>,
    pub crashed: Vec<usize>,
}

type PairKey = (usize, usize, usize);

/// Per-trial scheme state.
#[derive(Debug)]
pub enum SchemeState {
    Exact,
    Crash {
        substitute: bool,
        /// Pre-drawn crash iterations, ascending.
        times: VecDeque<usize>,
        plan: Option<CrashPlan>,
    },
    Omission {
        f: usize,
        fault_prob: f64,
        drop_prob: f64,
        max_delay: usize,
        plan: Option<HashMap<PairKey, Option<usize>>>,
    },
    AsyncMp {
        tau_max: usize,
        plan: Option<HashMap<PairKey, Option<usize>>>,
    },
    SharedMem {
        tau_max: usize,
        /// `x_{t−tau_max} … x_t`, newest last.
        history: VecDeque<ParamVector>,
        plan: Option<HashMap<(usize, usize), usize>>,
    },
    CompressEf,
    ElasticNorm {
        beta: f64,
        full_arrival: bool,
        plan: Option<HashMap<(usize, usize), Vec<usize>>>,
    },
    ElasticVar {
        late_prob: f64,
        plan: Option<HashSet<PairKey>>,
    },
    Adversarial {
        b_adv: f64,
        optimum: ParamVector,
    },
}

fn delay_plan(plan: &[ScheduleEvent]) -> HashMap<PairKey, Option<usize>> {
    plan.iter()
        .filter_map(|ev| match *ev {
            ScheduleEvent::Delay {
                t,
                node,
                target,
                delay,
            } => Some(((t, node, target), delay)),
            _ => None,
        })
        .collect()
}

impl SchemeState {
    pub fn new(config: &RunConfig, objective: &Objective, rng: &mut ChaCha8Rng) -> Result<Self> {
        let rc: &RelaxationConfig = &config.scheme;
        let plan = rc.plan.as_deref();
        Ok(match rc.scheme {
            SchemeKind::Exact => SchemeState::Exact,
            SchemeKind::CrashM2 | SchemeKind::CrashVar => {
                let substitute = rc.scheme == SchemeKind::CrashVar;
                match plan {
                    Some(plan) => {
                        let mut by_t: CrashPlan = BTreeMap::new();
                        for ev in plan {
                            if let ScheduleEvent::Crash { t, node, targets } = ev {
                                by_t.entry(*t).or_default().push((*node, targets.clone()));
                            }
                        }
                        SchemeState::Crash {
                            substitute,
                            times: VecDeque::new(),
                            plan: Some(by_t),
                        }
                    }
                    None => {
                        let mut times: Vec<usize> = (0..rc.f)
                            .map(|_| rng.random_range(0..config.horizon))
                            .collect();
                        times.sort_unstable();
                        SchemeState::Crash {
                            substitute,
                            times: times.into(),
                            plan: None,
                        }
                    }
                }
            }
            SchemeKind::Omission => SchemeState::Omission {
                f: rc.f,
                fault_prob: rc.fault_prob,
                drop_prob: rc.drop_prob,
                max_delay: rc.max_delay,
                plan: plan.map(delay_plan),
            },
            SchemeKind::AsyncMp => {
                let plan = plan.map(delay_plan);
                if let Some(plan) = &plan {
                    if plan.values().any(|d| d.is_none_or(|d| d > rc.tau_max)) {
                        return Err(config_err(
                            "async_mp plans need finite delays no larger than tau_max",
                        ));
                    }
                }
                SchemeState::AsyncMp {
                    tau_max: rc.tau_max,
                    plan,
                }
            }
            SchemeKind::SharedMem => {
                let plan = plan.map(|plan| {
                    plan.iter()
                        .filter_map(|ev| match *ev {
                            ScheduleEvent::Stale { t, coord, delay, .. } => Some(((t, coord), delay)),
                            _ => None,
                        })
                        .collect::<HashMap<_, _>>()
                });
                if let Some(plan) = &plan {
                    if plan.values().any(|&d| d > rc.tau_max) {
                        return Err(config_err("shared_mem plans need delays <= tau_max"));
                    }
                }
                SchemeState::SharedMem {
                    tau_max: rc.tau_max,
                    history: VecDeque::from([ParamVector::zeros(objective.dim())]),
                    plan,
                }
            }
            SchemeKind::CompressEf => SchemeState::CompressEf,
            SchemeKind::ElasticNorm => SchemeState::ElasticNorm {
                beta: rc.beta,
                full_arrival: rc.full_arrival,
                plan: plan.map(|plan| {
                    plan.iter()
                        .filter_map(|ev| match ev {
                            ScheduleEvent::Arrival { t, target, order } => {
                                Some(((*t, *target), order.clone()))
                            }
                            _ => None,
                        })
                        .collect()
                }),
            },
            SchemeKind::ElasticVar => SchemeState::ElasticVar {
                late_prob: rc.late_prob,
                plan: plan.map(|plan| {
                    plan.iter()
                        .filter_map(|ev| match *ev {
                            ScheduleEvent::Late { t, node, target } => Some((t, node, target)),
                            _ => None,
                        })
                        .collect()
                }),
            },
            SchemeKind::Adversarial => {
                if objective.kind() != ObjectiveKind::Quadratic || objective.num_samples() != 1 {
                    return Err(config_err(
                        "adversarial scheme needs a single-sample quadratic objective",
                    ));
                }
                let optimum = objective
                    .optimum()
                    .cloned()
                    .ok_or_else(|| config_err("adversarial scheme needs a known optimum"))?;
                SchemeState::Adversarial {
                    b_adv: rc.b_adv,
                    optimum,
                }
            }
        })
    }

    /// Builds the acting worker's view in single-step mode.
    #[allow(clippy::too_many_arguments)]
    pub fn build_view(
        &mut self,
        t: usize,
        acting: usize,
        x: &ParamVector,
        alpha: f64,
        objective: &Objective,
        rng: &mut ChaCha8Rng,
        events: &mut EventSink,
    ) -> Result<ParamVector> {
        match self {
            SchemeState::Exact => Ok(x.clone()),
            SchemeState::SharedMem {
                tau_max,
                history,
                plan,
            } => {
                let d = x.dim();
                let newest = history.len() - 1;
                let mut view = ParamVector::zeros(d);
                for k in 0..d {
                    let drawn = match plan {
                        Some(plan) => plan.get(&(t, k)).copied().unwrap_or(0),
                        None => rng.random_range(0..=*tau_max),
                    };
                    let delay = drawn.min(newest);
                    view[k] = history[newest - delay][k];
                    if delay > 0 {
                        events.push(ScheduleEvent::Stale {
                            t,
                            node: acting,
                            coord: k,
                            delay,
                        });
                    }
                }
                Ok(view)
            }
            SchemeState::Adversarial { b_adv, optimum } => {
                if *b_adv == 0.0 {
                    return Ok(x.clone());
                }
                let offset = alpha * *b_adv;
                let candidate = |sign: f64| {
                    let mut v = x.clone();
                    v[0] += sign * offset;
                    let mut next = x.clone();
                    next.axpy(-alpha, &objective.sample_gradient_unchecked(0, &v));
                    (v, next.dist2(optimum))
                };
                let (up, up_dist) = candidate(1.0);
                let (down, down_dist) = candidate(-1.0);
                Ok(if down_dist > up_dist { down } else { up })
            }
            other => Err(Error::Invariant(format!(
                "scheme {:?} has no single-step view construction",
                other.kind()
            ))),
        }
    }

    /// Called after the single-step update with the new `x_{t+1}`.
    pub fn observe_x(&mut self, x: &ParamVector) {
        if let SchemeState::SharedMem {
            tau_max, history, ..
        } = self
        {
            history.push_back(x.clone());
            while history.len() > *tau_max + 1 {
                history.pop_front();
            }
        }
    }

    pub fn kind(&self) -> SchemeKind {
        match self {
            SchemeState::Exact => SchemeKind::Exact,
            SchemeState::Crash { substitute: false, .. } => SchemeKind::CrashM2,
            SchemeState::Crash { substitute: true, .. } => SchemeKind::CrashVar,
            SchemeState::Omission { .. } => SchemeKind::Omission,
            SchemeState::AsyncMp { .. } => SchemeKind::AsyncMp,
            SchemeState::SharedMem { .. } => SchemeKind::SharedMem,
            SchemeState::CompressEf => SchemeKind::CompressEf,
            SchemeState::ElasticNorm { .. } => SchemeKind::ElasticNorm,
            SchemeState::ElasticVar { .. } => SchemeKind::ElasticVar,
            SchemeState::Adversarial { .. } => SchemeKind::Adversarial,
        }
    }

    /// Decides one parallel round.
    pub fn deliver(&mut self, ctx: DeliveryCtx<'_>) -> Result<Delivery> {
        match self {
            SchemeState::Exact | SchemeState::CompressEf => Ok(advance_exact(ctx)),
            SchemeState::Crash {
                substitute,
                times,
                plan,
            } => advance_crash(ctx, *substitute, times, plan.as_ref()),
            SchemeState::Omission {
                f,
                fault_prob,
                drop_prob,
                max_delay,
                plan,
            } => advance_omission(
                ctx,
                *f,
                *fault_prob,
                *drop_prob,
                *max_delay,
                plan.as_ref(),
            ),
            SchemeState::AsyncMp { tau_max, plan } => {
                Ok(advance_async_mp(ctx, *tau_max, plan.as_ref()))
            }
            SchemeState::ElasticNorm {
                beta,
                full_arrival,
                plan,
            } => advance_elastic_norm(ctx, *beta, *full_arrival, plan.as_ref()),
            SchemeState::ElasticVar { late_prob, plan } => {
                Ok(advance_elastic_var(ctx, *late_prob, plan.as_ref()))
            }
            other => Err(Error::Invariant(format!(
                "scheme {} has no parallel round",
                other.kind()
            ))),
        }
    }
}

fn alive_nodes(workers: &[WorkerState]) -> Vec<usize> {
    workers.iter().filter(|w| w.alive).map(|w| w.id).collect()
}

/// Removes and returns the inbox entries due at `t`, ordered by id.
fn take_due(worker: &mut WorkerState, t: usize) -> Vec<Term> {
    let mut due: Vec<GradId> = Vec::new();
    worker.inbox.retain(|m| {
        if m.deliver_at == t {
            due.push(m.id);
            false
        } else {
            true
        }
    });
    due.sort_unstable();
    due.into_iter().map(Term::plain).collect()
}

/// Every gradient reaches every node in the same iteration.
pub fn advance_exact(ctx: DeliveryCtx<'_>) -> Delivery {
    let alive = alive_nodes(ctx.workers);
    let all: Vec<Term> = alive
        .iter()
        .map(|&j| Term::plain(GradId::new(ctx.t, j)))
        .collect();
    let mut terms = vec![Vec::new(); ctx.p];
    for &r in &alive {
        terms[r] = all.clone();
    }
    Delivery {
        terms,
        participants: alive,
        crashed: Vec::new(),
    }
}

/// Crash faults: a node may die mid-broadcast, reaching only some receivers.
/// With `substitute`, receivers put their own gradient in the crashed
/// sender's slot.
pub fn advance_crash(
    ctx: DeliveryCtx<'_>,
    substitute: bool,
    times: &mut VecDeque<usize>,
    plan: Option<&CrashPlan>,
) -> Result<Delivery> {
    let t = ctx.t;
    let generating = alive_nodes(ctx.workers);

    let mut crashes: Vec<(usize, Vec<usize>)> = Vec::new();
    match plan {
        Some(plan) => {
            for (node, targets) in plan.get(&t).into_iter().flatten() {
                if !ctx.workers[*node].alive || crashes.iter().any(|(n, _)| n == node) {
                    return Err(Error::Invariant(format!(
                        "crash plan names node {node} which is not alive at t={t}"
                    )));
                }
                crashes.push((*node, targets.clone()));
            }
        }
        None => {
            let mut chosen: Vec<usize> = Vec::new();
            while times.front() == Some(&t) {
                times.pop_front();
                let candidates: Vec<usize> = generating
                    .iter()
                    .copied()
                    .filter(|n| !chosen.contains(n))
                    .collect();
                let node = candidates[ctx.rng.random_range(0..candidates.len())];
                chosen.push(node);
            }
            for &node in &chosen {
                let targets: Vec<usize> = generating
                    .iter()
                    .copied()
                    .filter(|r| *r != node && !chosen.contains(r))
                    .filter(|_| ctx.rng.random_bool(0.5))
                    .collect();
                crashes.push((node, targets));
            }
        }
    }
    *ctx.crash_count += crashes.len();
    for (node, targets) in &crashes {
        ctx.events.push(ScheduleEvent::Crash {
            t,
            node: *node,
            targets: targets.clone(),
        });
    }

    let crashing: HashMap<usize, &Vec<usize>> = crashes.iter().map(|(n, r)| (*n, r)).collect();
    let mut terms = vec![Vec::new(); ctx.p];
    for &r in &generating {
        if crashing.contains_key(&r) {
            continue;
        }
        let mut list = Vec::with_capacity(generating.len());
        for &j in &generating {
            let reached = crashing.get(&j).is_none_or(|targets| targets.contains(&r));
            if reached {
                list.push(Term::plain(GradId::new(t, j)));
            } else if substitute {
                list.push(Term::substitute(GradId::new(t, r), j));
                let w = &mut ctx.workers[r];
                w.substitutions += 1;
                w.permanent_substitutions += 1;
            }
        }
        terms[r] = list;
    }

    let participants = if substitute {
        generating
    } else {
        generating
            .into_iter()
            .filter(|j| {
                crashing.get(j).is_none_or(|targets| {
                    targets.iter().any(|r| *r != *j && !crashing.contains_key(r))
                })
            })
            .collect()
    };
    Ok(Delivery {
        terms,
        participants,
        crashed: crashes.into_iter().map(|(n, _)| n).collect(),
    })
}

/// Message omission: each receiver may be missing at most `f` foreign
/// messages at any time; withheld messages arrive later or never.
pub fn advance_omission(
    ctx: DeliveryCtx<'_>,
    f: usize,
    fault_prob: f64,
    drop_prob: f64,
    max_delay: usize,
    plan: Option<&HashMap<PairKey, Option<usize>>>,
) -> Result<Delivery> {
    let t = ctx.t;
    let alive = alive_nodes(ctx.workers);
    let mut terms = vec![Vec::new(); ctx.p];
    for &r in &alive {
        let mut list = take_due(&mut ctx.workers[r], t);
        for &j in &alive {
            let id = GradId::new(t, j);
            if j == r {
                list.push(Term::plain(id));
                continue;
            }
            let decision: Option<Option<usize>> = match plan {
                Some(plan) => match plan.get(&(t, j, r)) {
                    Some(Some(0)) | None => None,
                    Some(d) => Some(*d),
                },
                None => {
                    if ctx.workers[r].withheld() < f && ctx.rng.random_bool(fault_prob) {
                        if ctx.rng.random_bool(drop_prob) {
                            Some(None)
                        } else {
                            Some(Some(ctx.rng.random_range(1..=max_delay)))
                        }
                    } else {
                        None
                    }
                }
            };
            match decision {
                None => list.push(Term::plain(id)),
                Some(delay) => {
                    let w = &mut ctx.workers[r];
                    match delay {
                        Some(d) => w.inbox.push(Pending {
                            deliver_at: t + d,
                            id,
                        }),
                        None => w.dropped += 1,
                    }
                    ctx.events.push(ScheduleEvent::Delay {
                        t,
                        node: j,
                        target: r,
                        delay,
                    });
                    if w.withheld() > f {
                        return Err(Error::Invariant(format!(
                            "omission budget exceeded at worker {r}: {} > f={f} at t={t}",
                            w.withheld()
                        )));
                    }
                }
            }
        }
        terms[r] = list;
    }
    Ok(Delivery {
        terms,
        participants: alive,
        crashed: Vec::new(),
    })
}

/// Asynchronous message passing: every foreign message is delayed by
/// `0..=tau_max` iterations.
pub fn advance_async_mp(
    ctx: DeliveryCtx<'_>,
    tau_max: usize,
    plan: Option<&HashMap<PairKey, Option<usize>>>,
) -> Delivery {
    let t = ctx.t;
    let alive = alive_nodes(ctx.workers);
    let mut terms = vec![Vec::new(); ctx.p];
    for &r in &alive {
        let mut list = take_due(&mut ctx.workers[r], t);
        for &j in &alive {
            let id = GradId::new(t, j);
            let delay = if j == r {
                0
            } else {
                match plan {
                    Some(plan) => plan.get(&(t, j, r)).copied().flatten().unwrap_or(0),
                    None => ctx.rng.random_range(0..=tau_max),
                }
            };
            if delay == 0 {
                list.push(Term::plain(id));
            } else {
                ctx.workers[r].inbox.push(Pending {
                    deliver_at: t + delay,
                    id,
                });
                ctx.events.push(ScheduleEvent::Delay {
                    t,
                    node: j,
                    target: r,
                    delay: Some(delay),
                });
            }
        }
        terms[r] = list;
    }
    Delivery {
        terms,
        participants: alive,
        crashed: Vec::new(),
    }
}

/// Norm-bounded elastic scheduling: a node proceeds once the foreign
/// gradients received so far sum to at least `β‖own‖`; the rest arrive one
/// iteration late.
pub fn advance_elastic_norm(
    ctx: DeliveryCtx<'_>,
    beta: f64,
    full_arrival: bool,
    plan: Option<&HashMap<(usize, usize), Vec<usize>>>,
) -> Result<Delivery> {
    let t = ctx.t;
    let alive = alive_nodes(ctx.workers);
    let mut terms = vec![Vec::new(); ctx.p];
    for &r in &alive {
        let mut list = take_due(&mut ctx.workers[r], t);
        let foreign: Vec<usize> = alive.iter().copied().filter(|&j| j != r).collect();
        let order = match plan {
            Some(plan) => match plan.get(&(t, r)) {
                Some(order) => {
                    let mut sorted = order.clone();
                    sorted.sort_unstable();
                    if sorted != foreign {
                        return Err(Error::Invariant(format!(
                            "arrival plan at t={t} for node {r} is not a permutation of the senders"
                        )));
                    }
                    order.clone()
                }
                None => foreign.clone(),
            },
            None => {
                let mut order = foreign.clone();
                order.shuffle(ctx.rng);
                order
            }
        };
        let payload = |j: usize| &ctx.payloads[&GradId::new(t, j)];
        let threshold = beta * payload(r).norm();
        let received = if full_arrival {
            order.len()
        } else {
            let mut sum = ParamVector::zeros(payload(r).dim());
            let mut k = 0;
            while sum.norm() < threshold && k < order.len() {
                sum.add_assign(payload(order[k]));
                k += 1;
            }
            k
        };
        let mut current: Vec<usize> = order[..received].to_vec();
        current.push(r);
        current.sort_unstable();
        list.extend(current.into_iter().map(|j| Term::plain(GradId::new(t, j))));
        for &j in &order[received..] {
            ctx.workers[r].inbox.push(Pending {
                deliver_at: t + 1,
                id: GradId::new(t, j),
            });
        }
        if !full_arrival && received < order.len() {
            let mut sum = ParamVector::zeros(payload(r).dim());
            for &j in &order[..received] {
                sum.add_assign(payload(j));
            }
            if sum.norm() < threshold {
                return Err(Error::Invariant(format!(
                    "node {r} proceeded at t={t} below the beta threshold"
                )));
            }
        }
        ctx.events.push(ScheduleEvent::Arrival {
            t,
            target: r,
            order,
        });
        ctx.events.push(ScheduleEvent::Proceed {
            t,
            node: r,
            received,
        });
        terms[r] = list;
    }
    Ok(Delivery {
        terms,
        participants: alive,
        crashed: Vec::new(),
    })
}

/// Variance-bounded elastic scheduling: a receiver uses its own gradient for
/// each late sender and swaps in the true gradient one iteration later.
pub fn advance_elastic_var(
    ctx: DeliveryCtx<'_>,
    late_prob: f64,
    plan: Option<&HashSet<PairKey>>,
) -> Delivery {
    let t = ctx.t;
    let alive = alive_nodes(ctx.workers);
    let mut terms = vec![Vec::new(); ctx.p];
    for &r in &alive {
        let w = &mut ctx.workers[r];
        let mut list = Vec::new();
        for s in std::mem::take(&mut w.last_substitutions) {
            list.push(Term::retract(s.own, s.slot));
            list.push(Term::plain(GradId::new(s.own.origin, s.slot)));
            w.corrections += 1;
        }
        let own = GradId::new(t, r);
        for &j in &alive {
            let late = j != r
                && match plan {
                    Some(plan) => plan.contains(&(t, j, r)),
                    None => ctx.rng.random_bool(late_prob),
                };
            let w = &mut ctx.workers[r];
            if late {
                list.push(Term::substitute(own, j));
                w.last_substitutions.push(Substitution { slot: j, own });
                w.substitutions += 1;
                ctx.events.push(ScheduleEvent::Late {
                    t,
                    node: j,
                    target: r,
                });
            } else {
                list.push(Term::plain(GradId::new(t, j)));
            }
        }
        terms[r] = list;
    }
    Delivery {
        terms,
        participants: alive,
        crashed: Vec::new(),
    }
}
