//! Independent certification of flow traces.
//!
//! Queues are recomputed from the stored inflows alone (reflected cumulative
//! inflow), outflows by pushing each inflow segment through the exit-time map
//! `T(ϑ) = ϑ + τ + q(ϑ)/ν`. All data are step or piecewise-linear functions,
//! so comparing values at the union of breakpoints (and slopes where needed)
//! decides each condition on the whole interval. Nothing here reads the phase
//! log or trusts stored outflows and queues.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use num_traits::{Signed, Zero};
use serde_json::json;

use crate::flowstate::{FlowTrace, RateMap};
use crate::network::Instance;
use crate::numerics::{fmt_rat, PwlFunction, Rat, StepFunction};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Witness {
    pub commodity: Option<String>,
    pub element: String,
    pub time: Option<Rat>,
    pub lhs: Rat,
    pub rhs: Rat,
}

impl Witness {
    pub fn new(commodity: Option<String>, element: String, time: Option<Rat>, lhs: Rat, rhs: Rat) -> Self {
        Witness { commodity, element, time, lhs, rhs }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Check {
    pub id: String,
    pub pass: bool,
    pub witness: Option<Witness>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Verdict {
    pub checks: Vec<Check>,
}

impl Verdict {
    /// Record a check; a witness means failure.
    pub fn record(&mut self, id: &str, witness: Option<Witness>) {
        self.checks.push(Check { id: id.to_string(), pass: witness.is_none(), witness });
    }

    pub fn pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// Whether every check with this id passed (vacuously true if absent).
    pub fn passed(&self, id: &str) -> bool {
        self.checks.iter().filter(|c| c.id == id).all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &Check> {
        self.checks.iter().filter(|c| !c.pass)
    }

    pub fn merge(&mut self, other: Verdict) {
        self.checks.extend(other.checks);
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        let checks: Vec<_> = self
            .checks
            .iter()
            .map(|c| {
                let witness = c.witness.as_ref().map(|w| {
                    json!({
                        "commodity": w.commodity,
                        "element": w.element,
                        "time": w.time.as_ref().map(fmt_rat),
                        "lhs": fmt_rat(&w.lhs),
                        "rhs": fmt_rat(&w.rhs),
                    })
                });
                json!({ "id": c.id, "pass": c.pass, "witness": witness })
            })
            .collect();
        json!({ "pass": self.pass(), "checks": checks })
    }
}

/// Queues and per-commodity outflows rebuilt from the inflows.
struct Recomputed {
    queues: Vec<PwlFunction>,
    outflows: RateMap,
    /// `T_e(horizon)`: outflows are determined on `[0, exit_end)`.
    exit_end: Vec<Rat>,
    /// Total inflow per edge.
    totals: Vec<StepFunction>,
}

fn by_edge(inst: &Instance, map: &RateMap) -> Vec<Vec<(usize, StepFunction)>> {
    let mut out = vec![Vec::new(); inst.edges.len()];
    for ((i, e), f) in map {
        out[*e].push((*i, f.clone()));
    }
    out
}

fn recompute(inst: &Instance, trace: &FlowTrace) -> Recomputed {
    let h = &trace.horizon;
    let zero = Rat::zero();
    let inflows = by_edge(inst, &trace.inflows);
    let mut queues = Vec::with_capacity(inst.edges.len());
    let mut outflows = RateMap::new();
    let mut exit_end = Vec::with_capacity(inst.edges.len());
    let mut totals = Vec::with_capacity(inst.edges.len());
    for (k, edge) in inst.edges.iter().enumerate() {
        let total = inflows[k].iter().fold(StepFunction::zero(), |acc, (_, f)| acc.add(f));
        // reflected cumulative inflow minus capacity
        let mut q = PwlFunction::constant(zero.clone(), zero.clone());
        let mut qv = zero.clone();
        for (s, e, rate) in total.pieces(&zero, h) {
            let slope = &rate - &edge.nu;
            if qv.is_positive() || slope.is_positive() {
                q.push(s.clone(), slope.clone());
                let end = &qv + &slope * (&e - &s);
                if end.is_negative() {
                    let empty_at = &s + &qv / -&slope;
                    q.push(empty_at, zero.clone());
                    qv = zero.clone();
                } else {
                    qv = end;
                }
            } else {
                q.push(s, zero.clone());
            }
        }
        // exit-time map, piece by piece
        let mut cuts: Vec<Rat> = vec![zero.clone(), h.clone()];
        cuts.extend(q.breakpoints().iter().filter(|t| t.is_positive() && *t < h).cloned());
        cuts.extend(total.breakpoints().iter().filter(|t| t.is_positive() && *t < h).cloned());
        for (_, f) in &inflows[k] {
            cuts.extend(f.breakpoints().iter().filter(|t| t.is_positive() && *t < h).cloned());
        }
        cuts.sort();
        cuts.dedup();
        let exit = |t: &Rat| t + &edge.tau + q.eval(t) / &edge.nu;
        let mut per: BTreeMap<usize, StepFunction> = BTreeMap::new();
        for w in cuts.windows(2) {
            let (ta, tb) = (exit(&w[0]), exit(&w[1]));
            if tb <= ta {
                continue;
            }
            let stretch = (&tb - &ta) / (&w[1] - &w[0]);
            for (i, f) in &inflows[k] {
                let r = f.eval(&w[0]);
                if !r.is_zero() {
                    per.entry(*i).or_default().push(ta.clone(), tb.clone(), r / &stretch);
                }
            }
        }
        for (i, f) in per {
            outflows.insert((i, k), f);
        }
        exit_end.push(exit(h));
        queues.push(q);
        totals.push(total);
    }
    Recomputed { queues, outflows, exit_end, totals }
}

fn first_nonzero(f: &StepFunction, a: &Rat, b: &Rat) -> Option<(Rat, Rat)> {
    f.pieces(a, b).into_iter().find(|(_, _, v)| !v.is_zero()).map(|(s, _, v)| (s, v))
}

fn cumulative(fs: &[(usize, StepFunction)]) -> PwlFunction {
    fs.iter().fold(PwlFunction::constant(Rat::zero(), Rat::zero()), |acc, (_, f)| acc.add(&f.integrate()))
}

/// Model equations: queue definition and dynamics, nonnegativity, flow
/// conservation at nodes and sinks, capacity operation, FIFO.
pub fn verify_feasible(inst: &Instance, trace: &FlowTrace) -> Verdict {
    let mut v = Verdict::default();
    let h = &trace.horizon;
    let zero = Rat::zero();
    if !h.is_positive() {
        v.record("horizon", Some(Witness::new(None, "trace".into(), None, h.clone(), zero)));
        return v;
    }
    let rc = recompute(inst, trace);
    let stored_out = by_edge(inst, &trace.outflows);
    let derived_out = by_edge(inst, &rc.outflows);
    let edge_name = |k: usize| inst.edges[k].id.clone();
    let com_name = |i: usize| Some(inst.commodities[i].id.clone());

    let mut eq1 = None;
    let mut dyn_ = None;
    let mut nonneg = None;
    let mut eq5 = None;
    let mut eq7 = None;
    for (k, edge) in inst.edges.iter().enumerate() {
        let stored_q = trace.queues.get(k).cloned().unwrap_or_else(|| PwlFunction::constant(zero.clone(), zero.clone()));
        let f_in = rc.totals[k].integrate();
        let f_out = cumulative(&stored_out[k]);
        let mut pts: BTreeSet<Rat> = BTreeSet::from([zero.clone(), h.clone()]);
        let within = |t: &Rat| !t.is_negative() && t <= h;
        pts.extend(stored_q.breakpoints().iter().filter(|t| within(t)).cloned());
        pts.extend(rc.queues[k].breakpoints().iter().filter(|t| within(t)).cloned());
        pts.extend(f_in.breakpoints().iter().filter(|t| within(t)).cloned());
        pts.extend(f_out.breakpoints().iter().map(|t| t - &edge.tau).filter(|t| within(t)));
        for t in &pts {
            let sq = stored_q.eval(t);
            if nonneg.is_none() && sq.is_negative() {
                nonneg = Some(Witness::new(None, edge_name(k), Some(t.clone()), sq.clone(), zero.clone()));
            }
            let def = f_in.eval(t) - f_out.eval(&(t + &edge.tau));
            if eq1.is_none() && sq != def {
                eq1 = Some(Witness::new(None, edge_name(k), Some(t.clone()), sq.clone(), def));
            }
            let rq = rc.queues[k].eval(t);
            if dyn_.is_none() && sq != rq {
                dyn_ = Some(Witness::new(None, edge_name(k), Some(t.clone()), sq, rq));
            }
        }
        // capacity operation on [τ, h + τ)
        if eq5.is_none() {
            let out_total = stored_out[k].iter().fold(StepFunction::zero(), |acc, (_, f)| acc.add(f));
            let mut cuts: BTreeSet<Rat> = BTreeSet::from([zero.clone(), h.clone()]);
            cuts.extend(rc.queues[k].breakpoints().iter().filter(|t| t.is_positive() && *t < h).cloned());
            cuts.extend(rc.totals[k].breakpoints().iter().filter(|t| t.is_positive() && *t < h).cloned());
            let cuts: Vec<Rat> = cuts.into_iter().collect();
            'pieces: for w in cuts.windows(2) {
                let q0 = rc.queues[k].eval(&w[0]);
                let inflow = rc.totals[k].eval(&w[0]);
                let busy = q0.is_positive() || rc.queues[k].slope_at(&w[0]).is_positive();
                let expect = if busy || *inflow > edge.nu { edge.nu.clone() } else { inflow.clone() };
                for (s, _, val) in out_total.pieces(&(&w[0] + &edge.tau), &(&w[1] + &edge.tau)) {
                    if val != expect {
                        eq5 = Some(Witness::new(None, edge_name(k), Some(s), val, expect));
                        break 'pieces;
                    }
                }
            }
        }
        // per-commodity outflows against the exit-time image of the inflows
        if eq7.is_none() {
            let mut ids: BTreeSet<usize> = stored_out[k].iter().map(|(i, _)| *i).collect();
            ids.extend(derived_out[k].iter().map(|(i, _)| *i));
            for i in ids {
                let stored = stored_out[k].iter().find(|(j, _)| *j == i).map(|(_, f)| f.clone()).unwrap_or_default();
                let derived = derived_out[k].iter().find(|(j, _)| *j == i).map(|(_, f)| f.clone()).unwrap_or_default();
                if let Some((t, d)) = first_nonzero(&stored.sub(&derived), &zero, &rc.exit_end[k]) {
                    let s = stored.eval(&t).clone();
                    eq7 = Some(Witness::new(com_name(i), edge_name(k), Some(t), s.clone(), s - d));
                    break;
                }
            }
        }
    }
    v.record("eq1", eq1);
    v.record("queue_dynamics", dyn_);
    v.record("queue_nonneg", nonneg);
    v.record("eq5", eq5);
    v.record("eq7", eq7);

    // conservation with recomputed outflows on [0, h)
    let mut net: BTreeMap<(usize, usize), StepFunction> = BTreeMap::new();
    for ((i, e), f) in &trace.inflows {
        let key = (*i, inst.edges[*e].tail);
        let cur = net.remove(&key).unwrap_or_default();
        net.insert(key, cur.add(f));
    }
    for ((i, e), f) in &rc.outflows {
        let key = (*i, inst.edges[*e].head);
        let cur = net.remove(&key).unwrap_or_default();
        net.insert(key, cur.sub(f));
    }
    for (i, c) in inst.commodities.iter().enumerate() {
        let key = (i, c.source);
        let cur = net.remove(&key).unwrap_or_default();
        net.insert(key, cur.sub(&c.inflow));
    }
    let mut eq3 = None;
    let mut eq4 = None;
    for ((i, node), f) in &net {
        let at_sink = inst.commodities[*i].sink == *node;
        for (s, _, val) in f.pieces(&zero, h) {
            if at_sink && val.is_positive() && eq4.is_none() {
                eq4 = Some(Witness::new(com_name(*i), inst.nodes[*node].clone(), Some(s), val, zero.clone()));
                break;
            }
            if !at_sink && !val.is_zero() && eq3.is_none() {
                eq3 = Some(Witness::new(com_name(*i), inst.nodes[*node].clone(), Some(s), val, zero.clone()));
                break;
            }
        }
    }
    v.record("eq3", eq3);
    v.record("eq4", eq4);
    v
}

/// Labels with their right derivatives at `t`, by Dijkstra on
/// `(value, slope)` pairs in lexicographic order.
fn labels_with_slopes(inst: &Instance, sink: usize, cost: &[(Rat, Rat)]) -> Vec<Option<(Rat, Rat)>> {
    let n = inst.nodes.len();
    let mut best: Vec<Option<(Rat, Rat)>> = vec![None; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    best[sink] = Some((Rat::zero(), Rat::zero()));
    heap.push(Reverse((Rat::zero(), Rat::zero(), sink)));
    while let Some(Reverse((l, a, w))) = heap.pop() {
        if done[w] {
            continue;
        }
        done[w] = true;
        for &k in &inst.in_edges[w] {
            let v = inst.edges[k].tail;
            if done[v] {
                continue;
            }
            let cand = (&l + &cost[k].0, &a + &cost[k].1);
            if best[v].as_ref().map_or(true, |b| cand < *b) {
                best[v] = Some(cand.clone());
                heap.push(Reverse((cand.0, cand.1, v)));
            }
        }
    }
    best
}

/// The equilibrium condition: inflow of a commodity enters only edges on a
/// current shortest path to its sink.
///
/// On each piece where inflows are constant and queues linear, labels are
/// concave piecewise-linear. The piece is walked from kink to kink: at each
/// point the labels and right slopes are computed, tightness of every used
/// edge is checked in value and slope, and the next kink is where the linear
/// extension of some edge's reduced cost hits zero.
pub fn verify_ide(inst: &Instance, trace: &FlowTrace) -> Verdict {
    let mut v = Verdict::default();
    let h = &trace.horizon;
    let zero = Rat::zero();
    let rc = recompute(inst, trace);
    let sinks: BTreeSet<usize> = inst.commodities.iter().map(|c| c.sink).collect();
    let mut witness = None;
    'sinks: for &t in &sinks {
        let used: Vec<(usize, usize, &StepFunction)> = trace
            .inflows
            .iter()
            .filter(|((i, _), f)| inst.commodities[*i].sink == t && !f.is_zero())
            .map(|((i, e), f)| (*i, *e, f))
            .collect();
        if used.is_empty() {
            continue;
        }
        let mut cuts: BTreeSet<Rat> = BTreeSet::from([zero.clone(), h.clone()]);
        for (_, _, f) in &used {
            cuts.extend(f.breakpoints().iter().filter(|x| x.is_positive() && *x < h).cloned());
        }
        for q in &rc.queues {
            cuts.extend(q.breakpoints().iter().filter(|x| x.is_positive() && *x < h).cloned());
        }
        let cuts: Vec<Rat> = cuts.into_iter().collect();
        for w in cuts.windows(2) {
            let live: Vec<(usize, usize)> =
                used.iter().filter(|(_, _, f)| f.eval(&w[0]).is_positive()).map(|(i, e, _)| (*i, *e)).collect();
            if live.is_empty() {
                continue;
            }
            let mut at = w[0].clone();
            loop {
                let cost: Vec<(Rat, Rat)> = inst
                    .edges
                    .iter()
                    .zip(&rc.queues)
                    .map(|(e, q)| (&e.tau + q.eval(&at) / &e.nu, q.slope_at(&at) / &e.nu))
                    .collect();
                let lab = labels_with_slopes(inst, t, &cost);
                for &(i, k) in &live {
                    let e = &inst.edges[k];
                    let ok = match (&lab[e.tail], &lab[e.head]) {
                        (Some(lv), Some(lw)) => {
                            e.tail != t && lv.0 == &lw.0 + &cost[k].0 && lv.1 == &lw.1 + &cost[k].1
                        }
                        _ => false,
                    };
                    if !ok {
                        let lhs = lab[e.tail].as_ref().map(|x| x.0.clone()).unwrap_or_else(Rat::zero);
                        let rhs = lab[e.head].as_ref().map(|x| &x.0 + &cost[k].0).unwrap_or_else(Rat::zero);
                        witness = Some(Witness::new(Some(inst.commodities[i].id.clone()), e.id.clone(), Some(at.clone()), lhs, rhs));
                        break 'sinks;
                    }
                }
                let mut next: Option<Rat> = None;
                for (k, e) in inst.edges.iter().enumerate() {
                    let (Some(lv), Some(lw)) = (&lab[e.tail], &lab[e.head]) else { continue };
                    let d = &cost[k].1 + &lw.1 - &lv.1;
                    if d.is_negative() {
                        let gap = &cost[k].0 + &lw.0 - &lv.0;
                        let hit = &at + gap / -d;
                        if next.as_ref().map_or(true, |n| hit < *n) {
                            next = Some(hit);
                        }
                    }
                }
                match next {
                    Some(n) if n < w[1] => at = n,
                    _ => break,
                }
            }
        }
    }
    v.record("ide", witness);
    v
}

/// Emptiness at `theta`: no flow on edges, everything injected has arrived,
/// and nothing is injected later.
pub fn verify_termination(inst: &Instance, trace: &FlowTrace, theta: &Rat) -> Verdict {
    let mut v = Verdict::default();
    let zero = Rat::zero();
    if *theta > trace.horizon || theta.is_negative() {
        v.record("claim_within_horizon", Some(Witness::new(None, "trace".into(), Some(theta.clone()), theta.clone(), trace.horizon.clone())));
        return v;
    }
    v.record("claim_within_horizon", None);
    let rc = recompute(inst, trace);
    let mut gamma = zero.clone();
    for f in trace.inflows.values() {
        gamma += f.integral_to(theta);
    }
    let mut arrived = zero.clone();
    for ((i, e), f) in &rc.outflows {
        let vol = f.integral_to(theta);
        if inst.edges[*e].head == inst.commodities[*i].sink {
            arrived += &vol;
        }
        gamma -= vol;
    }
    let injected: Rat = inst.commodities.iter().map(|c| c.inflow.integral_to(theta)).sum();
    v.record("gamma_zero", (!gamma.is_zero()).then(|| Witness::new(None, "network".into(), Some(theta.clone()), gamma.clone(), zero.clone())));
    v.record("arrived_equals_injected", (arrived != injected).then(|| Witness::new(None, "sinks".into(), Some(theta.clone()), arrived, injected)));
    let mut later = None;
    for c in &inst.commodities {
        let big = c.inflow.support_end().cloned().unwrap_or_else(Rat::zero).max(theta.clone()) + Rat::from_integer(1.into());
        if let Some((s, val)) = first_nonzero(&c.inflow, theta, &big) {
            later = Some(Witness::new(Some(c.id.clone()), inst.nodes[c.source].clone(), Some(s), val, zero.clone()));
            break;
        }
    }
    v.record("no_later_inflow", later);
    v
}
