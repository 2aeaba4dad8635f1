use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{Mode, RunConfig};
use super::records::IterationRecord;
use crate::compression::ef_step;
use crate::error::{Error, Result};
use crate::objectives::{Objective, ParamVector};
use crate::relaxations::{Delivery, DeliveryCtx, EventSink, ScheduleEvent, SchemeKind, SchemeState};

/// Identifies one generated gradient: the iteration it was computed at and
/// the node that computed it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GradId {
    pub origin: usize,
    pub sender: usize,
}

impl GradId {
    pub fn new(origin: usize, sender: usize) -> Self {
        Self { origin, sender }
    }
}

/// One signed contribution to a view update: the view moves by
/// `−sign · payload(id) / p`. `slot` is the sender whose place the term fills,
/// which differs from `id.sender` only for substitutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Term {
    pub sign: i8,
    pub id: GradId,
    pub slot: usize,
}

impl Term {
    pub fn plain(id: GradId) -> Self {
        Self {
            sign: 1,
            id,
            slot: id.sender,
        }
    }

    pub fn substitute(own: GradId, slot: usize) -> Self {
        Self { sign: 1, id: own, slot }
    }

    pub fn retract(own: GradId, slot: usize) -> Self {
        Self { sign: -1, id: own, slot }
    }
}

/// A gradient waiting in a receiver's inbox.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pending {
    pub deliver_at: usize,
    pub id: GradId,
}

/// A receiver used its own gradient in place of a missing one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Substitution {
    pub slot: usize,
    pub own: GradId,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WorkerState {
    pub id: usize,
    /// `v_t^i`.
    pub view: ParamVector,
    /// `ε_t^i`; stays zero unless the scheme uses error feedback.
    pub error_acc: ParamVector,
    pub inbox: Vec<Pending>,
    pub alive: bool,
    /// Substitutions of the previous iteration awaiting correction.
    pub last_substitutions: Vec<Substitution>,
    pub substitutions: usize,
    pub corrections: usize,
    /// Substitutions that are never corrected (crashed senders).
    pub permanent_substitutions: usize,
    /// Messages withheld for good from this receiver.
    pub dropped: usize,
}

impl WorkerState {
    fn new(id: usize, d: usize) -> Self {
        Self {
            id,
            view: ParamVector::zeros(d),
            error_acc: ParamVector::zeros(d),
            inbox: Vec::new(),
            alive: true,
            last_substitutions: Vec::new(),
            substitutions: 0,
            corrections: 0,
            permanent_substitutions: 0,
            dropped: 0,
        }
    }

    /// Messages currently missing from this view: in flight plus dropped.
    pub fn withheld(&self) -> usize {
        self.inbox.len() + self.dropped
    }

    /// Substitutions not yet balanced by a correction.
    pub fn outstanding_substitutions(&self) -> usize {
        self.last_substitutions.len() + self.permanent_substitutions
    }
}

/// One applied view-update term, kept when `log_terms` is on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermRecord {
    pub t: usize,
    pub receiver: usize,
    pub term: Term,
}

/// What a single iteration did.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub t: usize,
    /// `I_t`, in node order.
    pub participants: Vec<usize>,
    /// Stochastic gradient generated by each node, `None` for silent nodes.
    pub gradients: Vec<Option<ParamVector>>,
    /// Node that acted, in single-step mode.
    pub acting: Option<usize>,
    /// Nodes that crashed during this iteration.
    pub crashed: Vec<usize>,
}

/// Complete simulation state of one trial.
pub struct SimState<'o> {
    objective: &'o Objective,
    config: RunConfig,
    alpha: f64,
    t: usize,
    x: ParamVector,
    workers: Vec<WorkerState>,
    crash_count: usize,
    payloads: BTreeMap<GradId, ParamVector>,
    scheme: SchemeState,
    rng_data: ChaCha8Rng,
    rng_sched: ChaCha8Rng,
    events: EventSink,
    samples: Vec<usize>,
    terms: Option<Vec<TermRecord>>,
    records: Vec<IterationRecord>,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Starts a run: `x_0 = v_0^i = ε_0^i = 0`, `t = 0`, both random streams seeded.
pub fn init_run<'o>(config: RunConfig, objective: &'o Objective) -> Result<SimState<'o>> {
    SimState::new(config, objective)
}

impl<'o> SimState<'o> {
    pub fn new(config: RunConfig, objective: &'o Objective) -> Result<Self> {
        let d = objective.dim();
        config.validate(d)?;
        let alpha = config.resolve_alpha(objective)?;
        let mut rng_sched = stream_rng(config.seeds.sched, config.seeds.stream);
        let rng_data = stream_rng(config.seeds.data, config.seeds.stream);
        let scheme = SchemeState::new(&config, objective, &mut rng_sched)?;
        let workers = (0..config.p).map(|i| WorkerState::new(i, d)).collect();
        let mut state = Self {
            objective,
            alpha,
            t: 0,
            x: ParamVector::zeros(d),
            workers,
            crash_count: 0,
            payloads: BTreeMap::new(),
            scheme,
            rng_data,
            rng_sched,
            events: EventSink::new(config.metrics.log_events),
            samples: Vec::new(),
            terms: config.metrics.log_terms.then(Vec::new),
            records: Vec::with_capacity(config.horizon + 1),
            config,
        };
        let first = state.snapshot();
        state.records.push(first);
        Ok(state)
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn objective(&self) -> &Objective {
        self.objective
    }

    /// `x_t`.
    pub fn global_x(&self) -> &ParamVector {
        &self.x
    }

    pub fn workers(&self) -> &[WorkerState] {
        &self.workers
    }

    /// `f_t`, the number of crashes so far.
    pub fn crash_count(&self) -> usize {
        self.crash_count
    }

    /// Largest number of messages currently missing from any one view.
    pub fn in_flight_omitted(&self) -> usize {
        self.workers.iter().map(|w| w.withheld()).max().unwrap_or(0)
    }

    pub fn records(&self) -> &[IterationRecord] {
        &self.records
    }

    pub fn events(&self) -> &[ScheduleEvent] {
        self.events.as_slice()
    }

    pub fn samples(&self) -> &[usize] {
        &self.samples
    }

    pub fn term_log(&self) -> Option<&[TermRecord]> {
        self.terms.as_deref()
    }

    pub fn is_finished(&self) -> bool {
        self.t >= self.config.horizon
    }

    /// `‖x_t − v_t^i‖²`.
    pub fn consistency_gap(&self, i: usize) -> Result<f64> {
        let w = self.workers.get(i).ok_or_else(|| {
            Error::Config(format!("worker {i} does not exist (p={})", self.config.p))
        })?;
        Ok(self.x.dist2(&w.view))
    }

    /// Consumes the state, returning records, events and sample indices.
    pub fn into_parts(self) -> (Vec<IterationRecord>, Vec<ScheduleEvent>, Vec<usize>) {
        (self.records, self.events.into_vec(), self.samples)
    }

    fn snapshot(&self) -> IterationRecord {
        let obj = self.objective;
        let gap2 = match self.config.mode {
            Mode::ParallelStep => self
                .workers
                .iter()
                .map(|w| w.alive.then(|| self.x.dist2(&w.view)))
                .collect(),
            Mode::SingleStep => vec![None; self.config.p],
        };
        IterationRecord {
            t: self.t,
            f_value: obj.eval_unchecked(&self.x),
            grad_norm2: obj.full_gradient_unchecked(&self.x).norm2(),
            gap2,
            participants: None,
            dist2_to_opt: obj.optimum().map(|o| self.x.dist2(o)),
        }
    }

    /// Advances one iteration.
    pub fn step(&mut self) -> Result<StepOutcome> {
        if self.is_finished() {
            return Err(Error::Config(format!(
                "run already reached T={}",
                self.config.horizon
            )));
        }
        let outcome = match self.config.mode {
            Mode::SingleStep => self.single_step()?,
            Mode::ParallelStep => self.parallel_step()?,
        };
        self.check_finite()?;
        self.t += 1;
        let rec = self.snapshot();
        self.records.push(rec);
        Ok(outcome)
    }

    /// Runs to the horizon.
    pub fn run(&mut self) -> Result<()> {
        while !self.is_finished() {
            self.step()?;
        }
        Ok(())
    }

    /// Runs until `stop` accepts the newest record or the horizon is reached.
    /// Returns the iteration at which `stop` first held.
    pub fn run_until<F>(&mut self, mut stop: F) -> Result<Option<usize>>
    where
        F: FnMut(&IterationRecord) -> bool,
    {
        if let Some(r) = self.records.last() {
            if stop(r) {
                return Ok(Some(r.t));
            }
        }
        while !self.is_finished() {
            self.step()?;
            let r = self.records.last().expect("records are never empty");
            if stop(r) {
                return Ok(Some(r.t));
            }
        }
        Ok(None)
    }

    fn draw_sample(&mut self) -> usize {
        let i = self.objective.sample_index(&mut self.rng_data);
        if self.config.metrics.log_samples {
            self.samples.push(i);
        }
        i
    }

    fn single_step(&mut self) -> Result<StepOutcome> {
        let t = self.t;
        let p = self.config.p;
        let acting = t % p;
        let view = self.scheme.build_view(
            t,
            acting,
            &self.x,
            self.alpha,
            self.objective,
            &mut self.rng_sched,
            &mut self.events,
        )?;
        let gap = self.x.dist2(&view);
        self.records[t].gap2[acting] = Some(gap);
        self.records[t].participants = Some(1);

        let idx = self.draw_sample();
        let g = self.objective.sample_gradient_unchecked(idx, &view);
        let c = g.scaled(self.alpha);
        self.x.sub_assign(&c);
        self.workers[acting].view = view;
        self.scheme.observe_x(&self.x);

        let mut gradients = vec![None; p];
        gradients[acting] = Some(g);
        Ok(StepOutcome {
            t,
            participants: vec![acting],
            gradients,
            acting: Some(acting),
            crashed: Vec::new(),
        })
    }

    fn parallel_step(&mut self) -> Result<StepOutcome> {
        let t = self.t;
        let p = self.config.p;
        let alpha = self.alpha;
        let compress = self.config.scheme.scheme == SchemeKind::CompressEf;
        let q = self.config.scheme.compressor;

        // one draw per node, alive or not, keeps the data stream schedule-free
        let indices: Vec<usize> = (0..p).map(|_| self.draw_sample()).collect();
        let mut gradients: Vec<Option<ParamVector>> = vec![None; p];
        let mut contributions: Vec<Option<ParamVector>> = vec![None; p];
        for i in 0..p {
            if !self.workers[i].alive {
                continue;
            }
            let g = self
                .objective
                .sample_gradient_unchecked(indices[i], &self.workers[i].view);
            let c = g.scaled(alpha);
            let payload = if compress {
                let (payload, err) = ef_step(&self.workers[i].error_acc, &c, q)?;
                self.workers[i].error_acc = err;
                payload
            } else {
                c.clone()
            };
            self.payloads.insert(GradId::new(t, i), payload);
            gradients[i] = Some(g);
            contributions[i] = Some(c);
        }

        let Delivery {
            terms,
            participants,
            crashed,
        } = self.scheme.deliver(DeliveryCtx {
            t,
            p,
            workers: &mut self.workers,
            payloads: &self.payloads,
            rng: &mut self.rng_sched,
            events: &mut self.events,
            crash_count: &mut self.crash_count,
        })?;

        let lo = p.div_ceil(2);
        if participants.len() < lo || participants.len() > p {
            return Err(Error::Invariant(format!(
                "|I_t|={} outside [{lo}, {p}] at t={t}",
                participants.len()
            )));
        }

        let pf = p as f64;
        let d = self.x.dim();
        for (r, list) in terms.iter().enumerate() {
            if list.is_empty() {
                continue;
            }
            if !self.workers[r].alive || crashed.contains(&r) {
                return Err(Error::Invariant(format!(
                    "crashed worker {r} received an update at t={t}"
                )));
            }
            let mut acc = ParamVector::zeros(d);
            for term in list {
                let payload = self.payloads.get(&term.id).ok_or_else(|| {
                    Error::Invariant(format!("term references unknown gradient {:?}", term.id))
                })?;
                if term.sign > 0 {
                    acc.add_assign(payload);
                } else {
                    acc.sub_assign(payload);
                }
            }
            self.workers[r].view.sub_assign(&acc.divided(pf));
            if let Some(log) = self.terms.as_mut() {
                log.extend(list.iter().map(|&term| TermRecord { t, receiver: r, term }));
            }
        }

        let mut acc = ParamVector::zeros(d);
        for &j in &participants {
            let c = contributions[j].as_ref().ok_or_else(|| {
                Error::Invariant(format!("node {j} in I_t generated no gradient at t={t}"))
            })?;
            acc.add_assign(c);
        }
        self.x.sub_assign(&acc.divided(pf));

        for &j in &crashed {
            if !self.workers[j].alive {
                return Err(Error::Invariant(format!("node {j} crashed twice")));
            }
            self.workers[j].alive = false;
            self.workers[j].inbox.clear();
            self.workers[j].last_substitutions.clear();
        }
        self.check_budgets()?;
        self.prune_payloads();

        self.records[t].participants = Some(participants.len());
        Ok(StepOutcome {
            t,
            participants,
            gradients,
            acting: None,
            crashed,
        })
    }

    fn check_budgets(&self) -> Result<()> {
        let scheme = &self.config.scheme;
        let t = self.t;
        if scheme.scheme.is_crash() && self.crash_count > scheme.f {
            return Err(Error::Invariant(format!(
                "crash budget exceeded: f_t={} > f={} at t={t}",
                self.crash_count, scheme.f
            )));
        }
        for w in self.workers.iter().filter(|w| w.alive) {
            let outstanding = w.outstanding_substitutions();
            if w.substitutions - w.corrections != outstanding {
                return Err(Error::Invariant(format!(
                    "substitution accounting broken at worker {}: {} - {} != {outstanding}",
                    w.id, w.substitutions, w.corrections
                )));
            }
            match scheme.scheme {
                SchemeKind::Omission if w.withheld() > scheme.f => {
                    return Err(Error::Invariant(format!(
                        "omission budget exceeded at worker {}: {} > f={} at t={t}",
                        w.id,
                        w.withheld(),
                        scheme.f
                    )))
                }
                SchemeKind::AsyncMp
                    if w.inbox.len() > (self.config.p - 1) * scheme.tau_max =>
                {
                    return Err(Error::Invariant(format!(
                        "async backlog {} exceeds (p-1)*tau_max at worker {}",
                        w.inbox.len(),
                        w.id
                    )))
                }
                _ => {}
            }
            for m in &w.inbox {
                let late = m.deliver_at.saturating_sub(m.id.origin);
                let limit = match scheme.scheme {
                    SchemeKind::AsyncMp => scheme.tau_max,
                    SchemeKind::ElasticNorm => 1,
                    _ => usize::MAX,
                };
                if late > limit || m.deliver_at <= t {
                    return Err(Error::Invariant(format!(
                        "message {:?} to worker {} violates its delivery window",
                        m.id, w.id
                    )));
                }
            }
        }
        Ok(())
    }

    fn prune_payloads(&mut self) {
        let next = self.t + 1;
        let mut oldest = next;
        for w in self.workers.iter().filter(|w| w.alive) {
            for m in &w.inbox {
                oldest = oldest.min(m.id.origin);
            }
            for s in &w.last_substitutions {
                oldest = oldest.min(s.own.origin);
            }
        }
        // the newest origins are still needed by corrections next iteration
        let keep_from = oldest.min(self.t);
        self.payloads = self.payloads.split_off(&GradId::new(keep_from, 0));
    }

    fn check_finite(&self) -> Result<()> {
        if !self.x.is_finite() {
            return Err(Error::Invariant(format!(
                "global parameter became non-finite at t={}",
                self.t
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{LearningRate, Seeds};
    use crate::relaxations::RelaxationConfig;
    use crate::testkit::{noisy_quadratic, parallel, single};
    use rand::SeedableRng;

    #[test]
    fn init_is_all_zero() {
        let obj = noisy_quadratic(3, 8, 1);
        let s = init_run(parallel(4, 10, 0.1, RelaxationConfig::exact()), &obj).unwrap();
        assert_eq!(s.global_x(), &ParamVector::zeros(3));
        for w in s.workers() {
            assert_eq!(w.view, ParamVector::zeros(3));
            assert_eq!(w.error_acc, ParamVector::zeros(3));
        }
        let r0 = &s.records()[0];
        assert_eq!(r0.t, 0);
        assert_eq!(r0.gap2, vec![Some(0.0); 4]);
        assert_eq!(r0.f_value, obj.eval(&ParamVector::zeros(3)).unwrap());
        assert_eq!(s.t(), 0);
        for i in 0..4 {
            assert_eq!(s.consistency_gap(i).unwrap(), 0.0);
        }
        assert!(s.consistency_gap(4).is_err());
    }

    #[test]
    fn equal_seeds_are_bit_identical() {
        let obj = noisy_quadratic(3, 8, 1);
        let cfg = parallel(4, 50, 0.1, RelaxationConfig::new(SchemeKind::AsyncMp).with_tau_max(2));
        let mut a = init_run(cfg.clone(), &obj).unwrap();
        let mut b = init_run(cfg, &obj).unwrap();
        a.run().unwrap();
        b.run().unwrap();
        assert_eq!(a.records(), b.records());
        assert_eq!(a.events(), b.events());
        assert_eq!(a.samples(), b.samples());
    }

    #[test]
    fn single_worker_reproduces_sequential_sgd() {
        let obj = noisy_quadratic(3, 8, 2);
        let alpha = 0.07;
        let mut s = init_run(parallel(1, 40, alpha, RelaxationConfig::exact()), &obj).unwrap();
        s.run().unwrap();

        let mut rng = stream_rng(11, 0);
        let mut x = ParamVector::zeros(3);
        for _ in 0..40 {
            let g = obj.stochastic_gradient(&x, &mut rng).unwrap();
            for k in 0..3 {
                x[k] -= alpha * g[k];
            }
        }
        assert_eq!(s.global_x(), &x);

        let mut s = init_run(single(1, 40, alpha, RelaxationConfig::exact()), &obj).unwrap();
        s.run().unwrap();
        assert_eq!(s.global_x(), &x);
    }

    #[test]
    fn parallel_exact_matches_minibatch_reference() {
        let obj = noisy_quadratic(5, 16, 3);
        let alpha = 0.05;
        let p = 4;
        let mut s = init_run(parallel(p, 30, alpha, RelaxationConfig::exact()), &obj).unwrap();
        s.run().unwrap();

        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        rng.set_stream(0);
        let mut x = vec![0.0; 5];
        for _ in 0..30 {
            let xv = ParamVector::from_vec(x.clone());
            let mut sum = vec![0.0; 5];
            for _ in 0..p {
                let i = obj.sample_index(&mut rng);
                let g = obj.sample_gradient(i, &xv).unwrap();
                for k in 0..5 {
                    sum[k] += alpha * g[k];
                }
            }
            for k in 0..5 {
                x[k] -= sum[k] / p as f64;
            }
        }
        assert_eq!(s.global_x().as_slice(), &x[..]);
        for w in s.workers() {
            assert_eq!(&w.view, s.global_x());
        }
    }

    #[test]
    fn run_until_stops_early() {
        let obj = noisy_quadratic(2, 4, 1);
        let mut s = init_run(single(1, 1000, 0.1, RelaxationConfig::exact()), &obj).unwrap();
        let hit = s.run_until(|r| r.t == 17).unwrap();
        assert_eq!(hit, Some(17));
        assert_eq!(s.t(), 17);
        assert_eq!(s.records().len(), 18);
    }

    #[test]
    fn stepping_past_the_horizon_fails() {
        let obj = noisy_quadratic(2, 4, 1);
        let mut s = init_run(single(1, 2, 0.1, RelaxationConfig::exact()), &obj).unwrap();
        s.run().unwrap();
        assert_eq!(s.records().len(), 3);
        assert!(s.step().is_err());
        assert_eq!(s.records()[2].participants, None);
        assert_eq!(s.records()[1].participants, Some(1));
    }

    #[test]
    fn schedule_alpha_is_resolved() {
        let obj = noisy_quadratic(2, 4, 1);
        let cfg = RunConfig::new(
            1,
            10_000,
            LearningRate::Schedule(crate::theory::Theorem::T1),
            Mode::SingleStep,
            RelaxationConfig::exact(),
            Seeds::new(0, 0),
        );
        let s = init_run(cfg.clone(), &obj).unwrap();
        assert_eq!(s.alpha(), 0.01);
        let short = RunConfig { horizon: 10, ..cfg };
        assert!(matches!(init_run(short, &obj), Err(Error::Config(_))));
    }

    #[test]
    fn divergence_is_reported() {
        let obj = noisy_quadratic(2, 4, 1);
        let mut s = init_run(single(1, 5000, 5.0, RelaxationConfig::exact()), &obj).unwrap();
        assert!(matches!(s.run(), Err(Error::Invariant(_))));
    }

    #[test]
    fn payload_cache_is_pruned() {
        let obj = noisy_quadratic(2, 4, 1);
        let cfg = parallel(4, 200, 0.05, RelaxationConfig::new(SchemeKind::AsyncMp).with_tau_max(3));
        let mut s = init_run(cfg, &obj).unwrap();
        s.run().unwrap();
        assert!(s.payloads.len() <= 4 * 4);
    }
}
