//! Flows over time: per-commodity edge inflows, the outflows and queues they
//! induce, phase log, volume bookkeeping, and the trace file formats.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{segments_to_step, step_to_segments, Edge, Instance, RawSegment};
use crate::numerics::{fmt_rat, serde_rat, PwlFunction, Rat, StepFunction};

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("internal error: {0}")]
    Internal(String),
}

/// Why a phase ended. Variant order is the reporting order for ties.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Event {
    QueueDepleted(usize),
    EdgeActivated { edge: usize, commodity: usize },
    NodeInflowBreakpoint(usize),
    NetworkInflowBreakpoint(usize),
    HorizonReached,
    NetworkEmpty,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PhaseRecord {
    pub start: Rat,
    pub end: Rat,
    pub events: Vec<Event>,
}

/// Inflow/outflow rates keyed by `(commodity, edge)`.
pub type RateMap = BTreeMap<(usize, usize), StepFunction>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FlowTrace {
    /// Inflows are defined on `[0, horizon)`.
    pub horizon: Rat,
    pub inflows: RateMap,
    /// Derived; known up to the exit time of the last particle entering
    /// before `horizon`.
    pub outflows: RateMap,
    pub queues: Vec<PwlFunction>,
    pub phases: Vec<PhaseRecord>,
}

/// Incremental state of one edge: queue function and outflows derived so far.
#[derive(Clone, Debug)]
pub struct EdgeFlow {
    pub queue: PwlFunction,
    /// Time up to which inflows have been fed in.
    pub now: Rat,
    pub q_now: Rat,
    /// Outflows are known on `[0, exit_now)`.
    pub exit_now: Rat,
    pub outflows: BTreeMap<usize, StepFunction>,
}

impl EdgeFlow {
    pub fn new(edge: &Edge) -> Self {
        EdgeFlow {
            queue: PwlFunction::constant(Rat::zero(), Rat::zero()),
            now: Rat::zero(),
            q_now: Rat::zero(),
            exit_now: edge.tau.clone(),
            outflows: BTreeMap::new(),
        }
    }

    /// Feed constant per-commodity inflow `rates` on `[now, until)`. Outflow
    /// follows capacity operation and FIFO; a queue running empty inside the
    /// interval splits it.
    pub fn advance(&mut self, edge: &Edge, until: &Rat, rates: &BTreeMap<usize, Rat>) {
        let total: Rat = rates.values().sum();
        while self.now < *until {
            let mut stop = until.clone();
            if self.q_now.is_positive() && total < edge.nu {
                let depl = &self.now + &self.q_now / (&edge.nu - &total);
                if depl < stop {
                    stop = depl;
                }
            }
            self.segment(edge, &stop, rates, &total);
        }
    }

    fn segment(&mut self, edge: &Edge, stop: &Rat, rates: &BTreeMap<usize, Rat>, total: &Rat) {
        let dt = stop - &self.now;
        let congested = self.q_now.is_positive() || *total > edge.nu;
        let slope = if congested { total - &edge.nu } else { Rat::zero() };
        self.queue.push(self.now.clone(), slope.clone());
        let q_end = &self.q_now + &slope * &dt;
        let exit_end = stop + &edge.tau + &q_end / &edge.nu;
        if exit_end > self.exit_now {
            for (&i, r) in rates {
                if r.is_zero() {
                    continue;
                }
                let out = if congested { r * &edge.nu / total } else { r.clone() };
                self.outflows.entry(i).or_default().push(self.exit_now.clone(), exit_end.clone(), out);
            }
            self.exit_now = exit_end;
        }
        self.q_now = q_end;
        self.now = stop.clone();
    }

    /// Per-commodity outflow rates produced by feeding `rates` from `now`
    /// onward, or `None` if no particle entering now leaves (queue draining
    /// with zero inflow).
    pub fn prospective_outflow(&self, edge: &Edge, rates: &BTreeMap<usize, Rat>) -> Option<BTreeMap<usize, Rat>> {
        let total: Rat = rates.values().sum();
        let congested = self.q_now.is_positive() || total > edge.nu;
        if congested && total.is_zero() {
            return None;
        }
        Some(
            rates
                .iter()
                .filter(|(_, r)| !r.is_zero())
                .map(|(&i, r)| (i, if congested { r * &edge.nu / &total } else { r.clone() }))
                .collect(),
        )
    }
}

/// Derive outflows and queues of every edge from the inflow functions on
/// `[0, horizon)`.
pub fn derive_all(inst: &Instance, inflows: &RateMap, horizon: &Rat) -> (RateMap, Vec<PwlFunction>) {
    let mut by_edge: Vec<Vec<(usize, &StepFunction)>> = vec![Vec::new(); inst.edges.len()];
    for ((i, e), f) in inflows {
        by_edge[*e].push((*i, f));
    }
    let mut outflows = RateMap::new();
    let mut queues = Vec::with_capacity(inst.edges.len());
    for (k, edge) in inst.edges.iter().enumerate() {
        let mut ef = EdgeFlow::new(edge);
        let mut cuts: Vec<Rat> = by_edge[k]
            .iter()
            .flat_map(|(_, f)| f.breakpoints().iter().cloned())
            .filter(|t| t.is_positive() && t < horizon)
            .collect();
        cuts.push(horizon.clone());
        cuts.sort();
        cuts.dedup();
        for c in cuts {
            let rates: BTreeMap<usize, Rat> = by_edge[k].iter().map(|(i, f)| (*i, f.eval(&ef.now).clone())).collect();
            ef.advance(edge, &c, &rates);
        }
        for (i, f) in ef.outflows {
            outflows.insert((i, k), f);
        }
        queues.push(ef.queue);
    }
    (outflows, queues)
}

pub fn queue_length(trace: &FlowTrace, e: usize, t: &Rat) -> Rat {
    trace.queues[e].eval(t)
}

/// `T_e(ϑ) = ϑ + τ_e + q_e(ϑ)/ν_e`.
pub fn exit_time(inst: &Instance, trace: &FlowTrace, e: usize, t: &Rat) -> Rat {
    let edge = &inst.edges[e];
    t + &edge.tau + queue_length(trace, e, t) / &edge.nu
}

/// `b⁻_{i,v}(θ)`: incoming outflow of commodity `i` plus its network inflow at
/// its source.
pub fn node_inflow(inst: &Instance, trace: &FlowTrace, i: usize, v: usize, t: &Rat) -> Rat {
    let mut b: Rat = inst.in_edges[v]
        .iter()
        .filter_map(|&e| trace.outflows.get(&(i, e)))
        .map(|f| f.eval(t).clone())
        .sum();
    let c = &inst.commodities[i];
    if c.source == v {
        b += c.inflow.eval(t);
    }
    b
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Volumes {
    pub edge_loads: Vec<Rat>,
    pub gamma: Rat,
    pub arrived: Rat,
    pub injected: Rat,
}

/// Edge loads `F⁺_e − F⁻_e`, their total Γ, and the volume Z absorbed at sinks.
pub fn volumes(inst: &Instance, trace: &FlowTrace, t: &Rat) -> Result<Volumes, TraceError> {
    let mut loads = vec![Rat::zero(); inst.edges.len()];
    let mut arrived = Rat::zero();
    for ((i, e), f) in &trace.inflows {
        let v = f.integral_to(t);
        if inst.edges[*e].tail == inst.commodities[*i].sink {
            arrived -= &v;
        }
        loads[*e] += v;
    }
    for ((i, e), f) in &trace.outflows {
        let v = f.integral_to(t);
        if inst.edges[*e].head == inst.commodities[*i].sink {
            arrived += &v;
        }
        loads[*e] -= v;
    }
    let gamma: Rat = loads.iter().sum();
    let injected: Rat = inst.commodities.iter().map(|c| c.inflow.integral_to(t)).sum();
    if gamma != &injected - &arrived {
        return Err(TraceError::Internal(format!(
            "volume identity violated at {}: gamma {} vs injected {} - arrived {}",
            fmt_rat(t),
            fmt_rat(&gamma),
            fmt_rat(&injected),
            fmt_rat(&arrived)
        )));
    }
    Ok(Volumes { edge_loads: loads, gamma, arrived, injected })
}

#[derive(Serialize, Deserialize)]
struct RawTrace {
    #[serde(with = "serde_rat")]
    horizon: Rat,
    phases: Vec<RawPhase>,
    inflows: Vec<RawRate>,
    queues: Vec<RawQueue>,
}

#[derive(Serialize, Deserialize)]
struct RawPhase {
    #[serde(with = "serde_rat")]
    start: Rat,
    #[serde(with = "serde_rat")]
    end: Rat,
    events: Vec<RawEvent>,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct RawEvent {
    kind: String,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    edge: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    commodity: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    node: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct RawRate {
    commodity: String,
    edge: String,
    segments: Vec<RawSegment>,
}

#[derive(Serialize, Deserialize)]
struct RawQueue {
    edge: String,
    pieces: Vec<RawPiece>,
}

#[derive(Serialize, Deserialize)]
struct RawPiece {
    #[serde(with = "serde_rat")]
    time: Rat,
    #[serde(with = "serde_rat")]
    value: Rat,
    #[serde(with = "serde_rat")]
    slope: Rat,
}

pub(crate) fn event_to_raw(inst: &Instance, ev: &Event) -> RawEvent {
    let mut raw = RawEvent { kind: String::new(), edge: None, commodity: None, node: None };
    match ev {
        Event::QueueDepleted(e) => {
            raw.kind = "QueueDepleted".into();
            raw.edge = Some(inst.edges[*e].id.clone());
        }
        Event::EdgeActivated { edge, commodity } => {
            raw.kind = "EdgeActivated".into();
            raw.edge = Some(inst.edges[*edge].id.clone());
            raw.commodity = Some(inst.commodities[*commodity].id.clone());
        }
        Event::NodeInflowBreakpoint(v) => {
            raw.kind = "NodeInflowBreakpoint".into();
            raw.node = Some(inst.nodes[*v].clone());
        }
        Event::NetworkInflowBreakpoint(i) => {
            raw.kind = "NetworkInflowBreakpoint".into();
            raw.commodity = Some(inst.commodities[*i].id.clone());
        }
        Event::HorizonReached => raw.kind = "HorizonReached".into(),
        Event::NetworkEmpty => raw.kind = "NetworkEmpty".into(),
    }
    raw
}

pub(crate) fn event_to_json(inst: &Instance, ev: &Event) -> serde_json::Value {
    serde_json::to_value(event_to_raw(inst, ev)).expect("event serialization")
}

fn event_from_raw(inst: &Instance, raw: RawEvent) -> Result<Event, TraceError> {
    let edge = |r: &RawEvent| {
        r.edge.as_deref().and_then(|id| inst.edge_index(id)).ok_or_else(|| TraceError::Parse(format!("{}: unknown edge", r.kind)))
    };
    let commodity = |r: &RawEvent| {
        r.commodity
            .as_deref()
            .and_then(|id| inst.commodity_index(id))
            .ok_or_else(|| TraceError::Parse(format!("{}: unknown commodity", r.kind)))
    };
    Ok(match raw.kind.as_str() {
        "QueueDepleted" => Event::QueueDepleted(edge(&raw)?),
        "EdgeActivated" => Event::EdgeActivated { edge: edge(&raw)?, commodity: commodity(&raw)? },
        "NodeInflowBreakpoint" => Event::NodeInflowBreakpoint(
            raw.node.as_deref().and_then(|n| inst.node_index(n)).ok_or_else(|| TraceError::Parse("unknown node".into()))?,
        ),
        "NetworkInflowBreakpoint" => Event::NetworkInflowBreakpoint(commodity(&raw)?),
        "HorizonReached" => Event::HorizonReached,
        "NetworkEmpty" => Event::NetworkEmpty,
        other => return Err(TraceError::Parse(format!("unknown event kind {other:?}"))),
    })
}

impl FlowTrace {
    pub fn to_json(&self, inst: &Instance) -> String {
        let raw = RawTrace {
            horizon: self.horizon.clone(),
            phases: self
                .phases
                .iter()
                .map(|p| RawPhase {
                    start: p.start.clone(),
                    end: p.end.clone(),
                    events: p.events.iter().map(|e| event_to_raw(inst, e)).collect(),
                })
                .collect(),
            inflows: self
                .inflows
                .iter()
                .filter(|(_, f)| !f.is_zero())
                .map(|((i, e), f)| RawRate {
                    commodity: inst.commodities[*i].id.clone(),
                    edge: inst.edges[*e].id.clone(),
                    segments: step_to_segments(f),
                })
                .collect(),
            queues: self
                .queues
                .iter()
                .enumerate()
                .filter(|(_, q)| q.breakpoints().len() > 1 || !q.values()[0].is_zero() || !q.slopes()[0].is_zero())
                .map(|(e, q)| RawQueue {
                    edge: inst.edges[e].id.clone(),
                    pieces: q.parts().map(|(t, v, s)| RawPiece { time: t.clone(), value: v.clone(), slope: s.clone() }).collect(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&raw).expect("trace serialization")
    }

    /// Parse a trace; outflows are re-derived from the inflows, queues are
    /// taken as stored.
    pub fn from_json(inst: &Instance, bytes: &[u8]) -> Result<FlowTrace, TraceError> {
        let raw: RawTrace = serde_json::from_slice(bytes).map_err(|e| TraceError::Parse(e.to_string()))?;
        let mut inflows = RateMap::new();
        for r in raw.inflows {
            let i = inst.commodity_index(&r.commodity).ok_or_else(|| TraceError::Parse(format!("unknown commodity {:?}", r.commodity)))?;
            let e = inst.edge_index(&r.edge).ok_or_else(|| TraceError::Parse(format!("unknown edge {:?}", r.edge)))?;
            let f = segments_to_step(r.segments).map_err(TraceError::Parse)?;
            inflows.insert((i, e), f);
        }
        let mut queues: Vec<PwlFunction> = vec![PwlFunction::constant(Rat::zero(), Rat::zero()); inst.edges.len()];
        for q in raw.queues {
            let e = inst.edge_index(&q.edge).ok_or_else(|| TraceError::Parse(format!("unknown edge {:?}", q.edge)))?;
            queues[e] = PwlFunction::from_parts(q.pieces.into_iter().map(|p| (p.time, p.value, p.slope)).collect())
                .map_err(TraceError::Parse)?;
        }
        let mut phases = Vec::new();
        for p in raw.phases {
            let events = p.events.into_iter().map(|r| event_from_raw(inst, r)).collect::<Result<_, _>>()?;
            phases.push(PhaseRecord { start: p.start, end: p.end, events });
        }
        let (outflows, _) = derive_all(inst, &inflows, &raw.horizon);
        Ok(FlowTrace { horizon: raw.horizon, inflows, outflows, queues, phases })
    }

    /// Parse a trace without its instance. Edges and commodities are indexed
    /// by first appearance; outflows and events are left empty. Enough for
    /// periodicity analysis.
    pub fn from_json_detached(bytes: &[u8]) -> Result<FlowTrace, TraceError> {
        let raw: RawTrace = serde_json::from_slice(bytes).map_err(|e| TraceError::Parse(e.to_string()))?;
        let mut edges: BTreeMap<String, usize> = BTreeMap::new();
        let mut coms: BTreeMap<String, usize> = BTreeMap::new();
        let index = |map: &mut BTreeMap<String, usize>, name: String| {
            let n = map.len();
            *map.entry(name).or_insert(n)
        };
        let mut inflows = RateMap::new();
        for r in raw.inflows {
            let key = (index(&mut coms, r.commodity), index(&mut edges, r.edge));
            inflows.insert(key, segments_to_step(r.segments).map_err(TraceError::Parse)?);
        }
        let mut queues = Vec::new();
        for q in raw.queues {
            let e = index(&mut edges, q.edge);
            let f = PwlFunction::from_parts(q.pieces.into_iter().map(|p| (p.time, p.value, p.slope)).collect())
                .map_err(TraceError::Parse)?;
            if queues.len() <= e {
                queues.resize(e + 1, PwlFunction::constant(Rat::zero(), Rat::zero()));
            }
            queues[e] = f;
        }
        let phases = raw.phases.into_iter().map(|p| PhaseRecord { start: p.start, end: p.end, events: Vec::new() }).collect();
        Ok(FlowTrace { horizon: raw.horizon, inflows, outflows: RateMap::new(), queues, phases })
    }

    /// Long-format CSV `time,kind,commodity,edge,value` at breakpoints.
    pub fn to_csv(&self, inst: &Instance) -> String {
        let mut out = String::from("time,kind,commodity,edge,value\n");
        let mut rows = |kind: &str, map: &RateMap| {
            for ((i, e), f) in map {
                let (cid, eid) = (&inst.commodities[*i].id, &inst.edges[*e].id);
                for (t, v) in f.breakpoints().iter().zip(f.values().iter().chain(std::iter::once(f.default_value()))) {
                    let _ = writeln!(out, "{},{kind},{cid},{eid},{}", fmt_rat(t), fmt_rat(v));
                }
            }
        };
        rows("inflow", &self.inflows);
        rows("outflow", &self.outflows);
        for (e, q) in self.queues.iter().enumerate() {
            let eid = &inst.edges[e].id;
            let mut ts: Vec<Rat> = q.breakpoints().to_vec();
            ts.push(self.horizon.clone());
            ts.dedup();
            for t in ts.into_iter().filter(|t| *t <= self.horizon) {
                let _ = writeln!(out, "{},queue,,{eid},{}", fmt_rat(&t), fmt_rat(&q.eval(&t)));
            }
        }
        out
    }
}
