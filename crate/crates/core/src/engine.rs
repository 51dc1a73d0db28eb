//! Phase-by-phase construction of equilibrium flows.
//!
//! At each phase start the engine computes labels and active edges per sink,
//! the node inflows `b⁻`, and a thin flow (by water-filling when all
//! commodities share one sink). The phase is extended as far as rates stay
//! constant and labels stay linear, then every edge is advanced.

use std::collections::{BTreeMap, BTreeSet};

use num_traits::{Signed, Zero};
use serde_json::json;
use thiserror::Error;

use crate::flowstate::{event_to_json, EdgeFlow, Event, FlowTrace, PhaseRecord, RateMap};
use crate::labels::{compute_labels, instantaneous_cost, LabelSnapshot};
use crate::network::{nu_min, tau_delta, Instance, TauDelta, DEFAULT_PATH_CAP};
use crate::numerics::{fmt_rat, Ext, PwlFunction, Rat, StepFunction};
use crate::thinflow::{
    check_thinflow, g_eval, solve_thinflow, TfClass, TfCommodity, TfEdge, ThinFlow, ThinFlowConfig, ThinFlowError,
    ThinFlowProblem,
};
use crate::waterfill::{build_h, sort_h, waterfill};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Auto,
    SingleSinkWaterfill,
    MultiCommodityThinFlow,
}

#[derive(Clone, Debug)]
pub struct EngineConfig {
    pub horizon: Rat,
    pub max_phases: usize,
    pub mode: Mode,
    pub thinflow: ThinFlowConfig,
    /// Search budget for the path-length gap used by the certificate.
    pub path_cap: u64,
    /// `(from, max_period)` to run periodicity detection on the final trace.
    pub periodicity: Option<(Rat, Rat)>,
}

impl EngineConfig {
    pub fn new(horizon: Rat) -> Self {
        EngineConfig {
            horizon,
            max_phases: 100_000,
            mode: Mode::Auto,
            thinflow: ThinFlowConfig::default(),
            path_cap: DEFAULT_PATH_CAP,
            periodicity: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    ThinFlow(#[from] ThinFlowError),
    #[error("internal error: {0}")]
    Internal(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outcome {
    Terminated(Rat),
    HorizonReached,
    PhaseCapReached,
}

/// Sufficient condition for termination observed at `time`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Certificate {
    pub time: Rat,
    pub gamma: Rat,
    pub bound: Ext,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Periodicity {
    pub period: Rat,
    pub start: Rat,
}

#[derive(Clone, Debug)]
pub struct SimulationReport {
    pub trace: FlowTrace,
    pub outcome: Outcome,
    pub certificate: Option<Certificate>,
    pub periodicity: Option<Periodicity>,
    /// Γ at the end of the trace.
    pub gamma_end: Rat,
}

impl SimulationReport {
    pub fn to_json_value(&self, inst: &Instance) -> serde_json::Value {
        let outcome = match &self.outcome {
            Outcome::Terminated(t) => json!({ "kind": "Terminated", "at": fmt_rat(t) }),
            Outcome::HorizonReached => json!({ "kind": "HorizonReached" }),
            Outcome::PhaseCapReached => json!({ "kind": "PhaseCapReached" }),
        };
        let phases: Vec<_> = self
            .trace
            .phases
            .iter()
            .map(|p| {
                json!({
                    "start": fmt_rat(&p.start),
                    "end": fmt_rat(&p.end),
                    "events": p.events.iter().map(|e| event_to_json(inst, e)).collect::<Vec<_>>(),
                })
            })
            .collect();
        json!({
            "outcome": outcome,
            "phase_count": self.trace.phases.len(),
            "gamma_end": fmt_rat(&self.gamma_end),
            "certificate": self.certificate.as_ref().map(|c| json!({
                "time": fmt_rat(&c.time),
                "gamma": fmt_rat(&c.gamma),
                "bound": c.bound.to_string(),
            })),
            "periodicity": self.periodicity.as_ref().map(periodicity_json),
            "phases": phases,
        })
    }
}

pub fn periodicity_json(p: &Periodicity) -> serde_json::Value {
    json!({ "period": fmt_rat(&p.period), "start": fmt_rat(&p.start) })
}

/// Rates and label slopes for one phase.
#[derive(Clone, Debug)]
pub struct Plan {
    pub theta: Rat,
    /// Distinct sinks; labels and slopes are indexed like this list.
    pub sinks: Vec<usize>,
    pub labels: Vec<LabelSnapshot>,
    pub slopes: Vec<Vec<Option<Rat>>>,
    /// Nonzero rates keyed by `(commodity, edge)`.
    pub x: BTreeMap<(usize, usize), Rat>,
    pub totals: Vec<Rat>,
}

/// Incremental simulation state.
pub struct Engine<'a> {
    inst: &'a Instance,
    cfg: EngineConfig,
    pub theta: Rat,
    pub edges: Vec<EdgeFlow>,
    inflows: RateMap,
    phases: Vec<PhaseRecord>,
    sinks: Vec<usize>,
    class_of: Vec<usize>,
    waterfill_mode: bool,
    in_cum: Rat,
    out_cum: Rat,
    arrived: Rat,
}

impl<'a> Engine<'a> {
    pub fn new(inst: &'a Instance, cfg: EngineConfig) -> Result<Self, EngineError> {
        if !cfg.horizon.is_positive() {
            return Err(EngineError::Config("horizon must be positive".into()));
        }
        if cfg.max_phases == 0 {
            return Err(EngineError::Config("max_phases must be at least 1".into()));
        }
        let sinks: Vec<usize> = inst.sinks();
        let class_of = inst.commodities.iter().map(|c| sinks.iter().position(|s| *s == c.sink).unwrap()).collect();
        let waterfill_mode = match cfg.mode {
            Mode::Auto => sinks.len() <= 1,
            Mode::SingleSinkWaterfill if sinks.len() > 1 => {
                return Err(EngineError::Config("water-filling mode needs a common sink".into()))
            }
            Mode::SingleSinkWaterfill => true,
            Mode::MultiCommodityThinFlow => false,
        };
        Ok(Engine {
            inst,
            theta: Rat::zero(),
            edges: inst.edges.iter().map(EdgeFlow::new).collect(),
            inflows: RateMap::new(),
            phases: Vec::new(),
            sinks,
            class_of,
            waterfill_mode,
            in_cum: Rat::zero(),
            out_cum: Rat::zero(),
            arrived: Rat::zero(),
            cfg,
        })
    }

    /// Total volume on edges at the current time.
    pub fn gamma(&self) -> Rat {
        &self.in_cum - &self.out_cum
    }

    fn queues(&self) -> Vec<Rat> {
        self.edges.iter().map(|e| e.q_now.clone()).collect()
    }

    /// `b⁻_{i,v}(θ)` for nodes other than the commodity's sink.
    pub fn demands(&self) -> Vec<BTreeMap<usize, Rat>> {
        let mut d: Vec<BTreeMap<usize, Rat>> = vec![BTreeMap::new(); self.inst.commodities.len()];
        for (k, ef) in self.edges.iter().enumerate() {
            let head = self.inst.edges[k].head;
            for (&i, f) in &ef.outflows {
                let r = f.eval(&self.theta);
                if !r.is_zero() && head != self.inst.commodities[i].sink {
                    *d[i].entry(head).or_insert_with(Rat::zero) += r;
                }
            }
        }
        for (i, c) in self.inst.commodities.iter().enumerate() {
            let u = c.inflow.eval(&self.theta);
            if !u.is_zero() {
                *d[i].entry(c.source).or_insert_with(Rat::zero) += u;
            }
        }
        d
    }

    fn problem(&self, labels: &[LabelSnapshot], demands: Vec<BTreeMap<usize, Rat>>) -> ThinFlowProblem {
        ThinFlowProblem {
            n_nodes: self.inst.nodes.len(),
            edges: self
                .inst
                .edges
                .iter()
                .zip(&self.edges)
                .map(|(e, ef)| TfEdge { tail: e.tail, head: e.head, nu: e.nu.clone(), queue_positive: ef.q_now.is_positive() })
                .collect(),
            classes: labels.iter().map(|l| TfClass { sink: l.sink, active: l.active.clone() }).collect(),
            commodities: demands.into_iter().enumerate().map(|(i, demand)| TfCommodity { class: self.class_of[i], demand }).collect(),
        }
    }

    pub fn plan(&self) -> Result<Plan, EngineError> {
        let queues = self.queues();
        let labels: Vec<LabelSnapshot> =
            self.sinks.iter().map(|&t| compute_labels(self.inst, &queues, t, self.theta.clone())).collect();
        let demands = self.demands();
        let tf = if self.waterfill_mode && !self.sinks.is_empty() {
            let tf = self.waterfill_plan(&labels[0], &queues, &demands)?;
            if cfg!(debug_assertions) {
                let verdict = check_thinflow(&self.problem(&labels, demands), &tf);
                if !verdict.pass() {
                    return Err(EngineError::Internal(format!("water-filling result fails thin-flow check: {verdict:?}")));
                }
            }
            tf
        } else {
            solve_thinflow(&self.problem(&labels, demands), &self.cfg.thinflow)?
        };
        let mut totals = vec![Rat::zero(); self.inst.edges.len()];
        for ((_, e), r) in &tf.x {
            totals[*e] += r;
        }
        Ok(Plan { theta: self.theta.clone(), sinks: self.sinks.clone(), labels, slopes: tf.a, x: tf.x, totals })
    }

    /// Nodes in ascending label order, each splitting its inflow over its
    /// active edges by water-filling on the already known head slopes.
    fn waterfill_plan(&self, snap: &LabelSnapshot, queues: &[Rat], demands: &[BTreeMap<usize, Rat>]) -> Result<ThinFlow, EngineError> {
        let inst = self.inst;
        let mut order: Vec<(Rat, usize)> =
            snap.labels.iter().enumerate().filter_map(|(v, l)| l.finite().map(|x| (x.clone(), v))).collect();
        order.sort();
        let mut a: Vec<Option<Rat>> = vec![None; inst.nodes.len()];
        let mut x = BTreeMap::new();
        for (_, v) in order {
            if v == snap.sink {
                a[v] = Some(Rat::zero());
                continue;
            }
            let mut hs = Vec::new();
            for &k in &inst.out_edges[v] {
                if snap.active[k] {
                    let e = &inst.edges[k];
                    let a_w = a[e.head].as_ref().ok_or_else(|| EngineError::Internal("active edge to an unprocessed node".into()))?;
                    hs.push(build_h(k, a_w, &queues[k], &e.nu));
                }
            }
            sort_h(&mut hs);
            let b: Rat = demands.iter().filter_map(|d| d.get(&v)).sum();
            let split = waterfill(&b, &hs).ok_or_else(|| EngineError::Internal(format!("node {} has no active edge", inst.nodes[v])))?;
            a[v] = Some(split.level);
            if b.is_zero() {
                continue;
            }
            for (h, z) in hs.iter().zip(&split.z) {
                if z.is_zero() {
                    continue;
                }
                for (i, d) in demands.iter().enumerate() {
                    if let Some(bi) = d.get(&v) {
                        x.insert((i, h.edge), z * bi / &b);
                    }
                }
            }
        }
        Ok(ThinFlow { x, a: vec![a] })
    }

    /// Longest extension keeping rates constant and labels linear, with the
    /// events that end it.
    pub fn max_feasible_alpha(&self, plan: &Plan) -> Result<(Rat, Vec<Event>), EngineError> {
        let inst = self.inst;
        let theta = &self.theta;
        let mut cands: Vec<(Rat, Event)> = vec![(&self.cfg.horizon - theta, Event::HorizonReached)];
        for (k, e) in inst.edges.iter().enumerate() {
            let q = &self.edges[k].q_now;
            let x = &plan.totals[k];
            if q.is_positive() && *x < e.nu {
                cands.push((q / (&e.nu - x), Event::QueueDepleted(k)));
            }
        }
        for (c, snap) in plan.labels.iter().enumerate() {
            let rep = self.class_of.iter().position(|&cl| cl == c).expect("every sink has a commodity");
            let slopes = &plan.slopes[c];
            for (k, e) in inst.edges.iter().enumerate() {
                if snap.active[k] || e.tail == snap.sink {
                    continue;
                }
                let (Some(lv), Some(lw)) = (snap.labels[e.tail].finite(), snap.labels[e.head].finite()) else { continue };
                let (Some(av), Some(aw)) = (&slopes[e.tail], &slopes[e.head]) else { continue };
                let q = &self.edges[k].q_now;
                let slack = instantaneous_cost(e, q) + lw - lv;
                let d = g_eval(&e.nu, &plan.totals[k], q.is_positive()) / &e.nu + aw - av;
                if d.is_negative() {
                    cands.push((slack / -d, Event::EdgeActivated { edge: k, commodity: rep }));
                }
            }
        }
        let mut rates_by_edge: Vec<BTreeMap<usize, Rat>> = vec![BTreeMap::new(); inst.edges.len()];
        for ((i, e), r) in &plan.x {
            rates_by_edge[*e].insert(*i, r.clone());
        }
        for (k, e) in inst.edges.iter().enumerate() {
            let ef = &self.edges[k];
            let relevant = |i: &usize| inst.commodities[*i].sink != e.head;
            for (_, f) in ef.outflows.iter().filter(|(i, _)| relevant(i)) {
                if let Some(t) = f.next_breakpoint_after(theta) {
                    if *t < ef.exit_now {
                        cands.push((t - theta, Event::NodeInflowBreakpoint(e.head)));
                    }
                }
            }
            if let Some(next) = ef.prospective_outflow(e, &rates_by_edge[k]) {
                let mut ids: BTreeSet<usize> = ef.outflows.keys().copied().collect();
                ids.extend(next.keys().copied());
                for i in ids.into_iter().filter(relevant) {
                    let before = ef.outflows.get(&i).map(|f| f.eval_left(&ef.exit_now).clone()).unwrap_or_else(Rat::zero);
                    let after = next.get(&i).cloned().unwrap_or_else(Rat::zero);
                    if before != after {
                        cands.push((&ef.exit_now - theta, Event::NodeInflowBreakpoint(e.head)));
                        break;
                    }
                }
            }
        }
        for (i, c) in inst.commodities.iter().enumerate() {
            if let Some(t) = c.inflow.next_breakpoint_after(theta) {
                cands.push((t - theta, Event::NetworkInflowBreakpoint(i)));
            }
        }
        if plan.x.is_empty() && *theta >= inst.inflow_end() {
            // only arrivals at sinks remain
            let last = self.edges.iter().filter_map(|ef| ef.outflows.values().filter_map(|f| f.support_end()).max()).max();
            if let Some(t) = last {
                if t > theta {
                    cands.push((t - theta, Event::NetworkEmpty));
                }
            }
        }
        let alpha = cands.iter().map(|(a, _)| a).min().cloned().expect("horizon candidate present");
        if !alpha.is_positive() {
            return Err(EngineError::Internal(format!("non-positive phase length {} at {}", fmt_rat(&alpha), fmt_rat(theta))));
        }
        let mut events: Vec<Event> = cands.into_iter().filter(|(a, _)| *a == alpha).map(|(_, e)| e).collect();
        events.sort();
        events.dedup();
        Ok((alpha, events))
    }

    /// Apply `plan` on `[θ, θ + α)`.
    pub fn advance(&mut self, plan: &Plan, alpha: &Rat, events: Vec<Event>) {
        let inst = self.inst;
        let until = &self.theta + alpha;
        let mut rates_by_edge: Vec<BTreeMap<usize, Rat>> = vec![BTreeMap::new(); inst.edges.len()];
        for ((i, e), r) in &plan.x {
            rates_by_edge[*e].insert(*i, r.clone());
            self.inflows.entry((*i, *e)).or_default().push(self.theta.clone(), until.clone(), r.clone());
        }
        for (k, e) in inst.edges.iter().enumerate() {
            self.in_cum += &plan.totals[k] * alpha;
            self.edges[k].advance(e, &until, &rates_by_edge[k]);
            for (&i, f) in &self.edges[k].outflows {
                let vol: Rat = f.pieces(&self.theta, &until).into_iter().map(|(s, t, r)| r * (t - s)).sum();
                if !vol.is_zero() {
                    if inst.commodities[i].sink == e.head {
                        self.arrived += &vol;
                    }
                    self.out_cum += vol;
                }
            }
        }
        self.phases.push(PhaseRecord { start: self.theta.clone(), end: until.clone(), events });
        self.theta = until;
    }

    fn check_volumes(&self) -> Result<(), EngineError> {
        let injected: Rat = self.inst.commodities.iter().map(|c| c.inflow.integral_to(&self.theta)).sum();
        if self.gamma() != injected - &self.arrived {
            return Err(EngineError::Internal(format!("volume bookkeeping mismatch at {}", fmt_rat(&self.theta))));
        }
        Ok(())
    }

    fn finish(self, outcome: Outcome, certificate: Option<Certificate>) -> SimulationReport {
        let mut outflows = RateMap::new();
        let mut queues: Vec<PwlFunction> = Vec::with_capacity(self.edges.len());
        let gamma_end = self.gamma();
        for (k, ef) in self.edges.into_iter().enumerate() {
            for (i, f) in ef.outflows {
                outflows.insert((i, k), f);
            }
            queues.push(ef.queue);
        }
        let trace = FlowTrace { horizon: self.theta, inflows: self.inflows, outflows, queues, phases: self.phases };
        let periodicity = match (&self.cfg.periodicity, &outcome) {
            (Some((from, max)), Outcome::HorizonReached) => detect_periodicity(&trace, from, max),
            _ => None,
        };
        SimulationReport { trace, outcome, certificate, periodicity, gamma_end }
    }
}

/// `τ_Δ · ν_min` over all sinks, or `None` if the gap search gave up.
fn certificate_bound(inst: &Instance, cap: u64) -> Option<Ext> {
    let nu = nu_min(inst)?;
    let mut best = Ext::Inf;
    for t in inst.sinks() {
        match tau_delta(inst, t, cap) {
            TauDelta::Unavailable => return None,
            TauDelta::Infinite => {}
            TauDelta::Finite { value, .. } => best = best.min(Ext::Fin(value)),
        }
    }
    Some(match best {
        Ext::Fin(v) => Ext::Fin(v * nu),
        Ext::Inf => Ext::Inf,
    })
}

/// The termination certificate at the current state, if it applies.
pub fn termination_certificate(time: &Rat, gamma: &Rat, bound: &Ext) -> Option<Certificate> {
    let holds = match bound {
        Ext::Inf => true,
        Ext::Fin(b) => gamma < b,
    };
    holds.then(|| Certificate { time: time.clone(), gamma: gamma.clone(), bound: bound.clone() })
}

pub fn simulate(inst: &Instance, cfg: &EngineConfig) -> Result<SimulationReport, EngineError> {
    let mut eng = Engine::new(inst, cfg.clone())?;
    let inflow_end = inst.inflow_end();
    let mut bound: Option<Option<Ext>> = None;
    let mut certificate = None;
    loop {
        eng.check_volumes()?;
        if eng.theta >= inflow_end {
            if certificate.is_none() {
                let b = bound.get_or_insert_with(|| certificate_bound(inst, cfg.path_cap));
                if let Some(b) = b {
                    certificate = termination_certificate(&eng.theta, &eng.gamma(), b);
                }
            }
            if eng.gamma().is_zero() {
                let at = eng.theta.clone();
                return Ok(eng.finish(Outcome::Terminated(at), certificate));
            }
        }
        if eng.theta >= cfg.horizon {
            return Ok(eng.finish(Outcome::HorizonReached, certificate));
        }
        if eng.phases.len() >= cfg.max_phases {
            return Ok(eng.finish(Outcome::PhaseCapReached, certificate));
        }
        let plan = eng.plan()?;
        let (alpha, events) = eng.max_feasible_alpha(&plan)?;
        eng.advance(&plan, &alpha, events);
    }
}

/// Smallest period `p ≤ max_period` such that every queue and every inflow
/// function on `[from, from + p)` repeats exactly on `[from + p, from + 2p)`.
/// `None` if the state does not change inside the window.
pub fn detect_periodicity(trace: &FlowTrace, from: &Rat, max_period: &Rat) -> Option<Periodicity> {
    let window_end = from + max_period + max_period;
    let inside = |t: &Rat| t >= from && *t <= window_end;
    let mut times: BTreeSet<Rat> = BTreeSet::new();
    for q in &trace.queues {
        times.extend(q.breakpoints().iter().filter(|t| inside(t)).cloned());
    }
    for f in trace.inflows.values() {
        times.extend(f.breakpoints().iter().filter(|t| inside(t)).cloned());
    }
    if times.is_empty() {
        return None;
    }
    let times: Vec<Rat> = times.into_iter().collect();
    let mut periods: BTreeSet<Rat> = BTreeSet::new();
    for (a, ta) in times.iter().enumerate() {
        for tb in &times[a + 1..] {
            let p = tb - ta;
            if p <= *max_period {
                periods.insert(p);
            }
        }
    }
    periods.into_iter().find(|p| from + p + p <= trace.horizon && repeats(trace, from, p)).map(|period| Periodicity { period, start: from.clone() })
}

fn repeats(trace: &FlowTrace, from: &Rat, p: &Rat) -> bool {
    let mid = from + p;
    let end = &mid + p;
    for f in trace.inflows.values() {
        if !same_steps(f, from, &mid, p) {
            return false;
        }
    }
    trace.queues.iter().all(|q| same_pwl(q, from, &end, p))
}

fn same_steps(f: &StepFunction, a: &Rat, b: &Rat, p: &Rat) -> bool {
    let first = f.pieces(a, b);
    let second = f.pieces(&(a + p), &(b + p));
    first.len() == second.len()
        && first.iter().zip(&second).all(|(x, y)| &x.0 + p == y.0 && &x.1 + p == y.1 && x.2 == y.2)
}

/// `q(t) = q(t + p)` on `[a, end − p]`, checked at all breakpoints of both
/// sides.
fn same_pwl(q: &PwlFunction, a: &Rat, end: &Rat, p: &Rat) -> bool {
    let b = end - p;
    let mut pts: BTreeSet<Rat> = BTreeSet::from([a.clone(), b.clone()]);
    for t in q.breakpoints() {
        if t > a && *t < b {
            pts.insert(t.clone());
        }
        let s = t - p;
        if s > *a && s < b {
            pts.insert(s);
        }
    }
    pts.iter().all(|t| q.eval(t) == q.eval(&(t + p)))
}
