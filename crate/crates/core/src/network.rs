//! Network instances: graph, edge parameters, commodities, JSON format.

use std::collections::{BTreeSet, HashMap, VecDeque};

use num_traits::{Signed, Zero};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{fmt_rat, serde_rat, Ext, Rat, StepFunction};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum InstanceError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("validation error: {0}")]
    Validation(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Edge {
    pub id: String,
    pub tail: usize,
    pub head: usize,
    pub tau: Rat,
    pub nu: Rat,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Commodity {
    pub id: String,
    pub source: usize,
    pub sink: usize,
    pub inflow: StepFunction,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Instance {
    pub nodes: Vec<String>,
    pub edges: Vec<Edge>,
    pub commodities: Vec<Commodity>,
    pub out_edges: Vec<Vec<usize>>,
    pub in_edges: Vec<Vec<usize>>,
    node_index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct RawInstance {
    nodes: Vec<String>,
    edges: Vec<RawEdge>,
    commodities: Vec<RawCommodity>,
}

#[derive(Serialize, Deserialize)]
struct RawEdge {
    id: String,
    tail: String,
    head: String,
    #[serde(with = "serde_rat")]
    tau: Rat,
    #[serde(with = "serde_rat")]
    nu: Rat,
}

#[derive(Serialize, Deserialize)]
struct RawCommodity {
    id: String,
    source: String,
    sink: String,
    inflow: Vec<RawSegment>,
}

#[derive(Serialize, Deserialize)]
pub(crate) struct RawSegment {
    #[serde(with = "serde_rat")]
    pub from: Rat,
    #[serde(with = "serde_rat")]
    pub to: Rat,
    #[serde(with = "serde_rat")]
    pub rate: Rat,
}

pub(crate) fn step_to_segments(f: &StepFunction) -> Vec<RawSegment> {
    f.segments()
        .filter(|(_, _, v)| !v.is_zero())
        .map(|(a, b, v)| RawSegment { from: a.clone(), to: b.clone(), rate: v.clone() })
        .collect()
}

pub(crate) fn segments_to_step(segs: Vec<RawSegment>) -> Result<StepFunction, String> {
    StepFunction::from_segments(segs.into_iter().map(|s| (s.from, s.to, s.rate)))
}

/// Plain description used by generators before validation.
pub struct InstanceBuilder {
    nodes: Vec<String>,
    index: HashMap<String, usize>,
    edges: Vec<Edge>,
    commodities: Vec<Commodity>,
}

impl Default for InstanceBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl InstanceBuilder {
    pub fn new() -> Self {
        InstanceBuilder { nodes: Vec::new(), index: HashMap::new(), edges: Vec::new(), commodities: Vec::new() }
    }

    pub fn node(&mut self, name: &str) -> usize {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        self.nodes.push(name.to_string());
        self.index.insert(name.to_string(), self.nodes.len() - 1);
        self.nodes.len() - 1
    }

    pub fn edge(&mut self, id: &str, tail: &str, head: &str, tau: Rat, nu: Rat) -> usize {
        let (t, h) = (self.node(tail), self.node(head));
        self.edges.push(Edge { id: id.to_string(), tail: t, head: h, tau, nu });
        self.edges.len() - 1
    }

    pub fn commodity(&mut self, id: &str, source: &str, sink: &str, inflow: StepFunction) {
        let (s, t) = (self.node(source), self.node(sink));
        self.commodities.push(Commodity { id: id.to_string(), source: s, sink: t, inflow });
    }

    pub fn build(self) -> Result<Instance, InstanceError> {
        Instance::new(self.nodes, self.edges, self.commodities)
    }
}

impl Instance {
    pub fn new(nodes: Vec<String>, edges: Vec<Edge>, commodities: Vec<Commodity>) -> Result<Self, InstanceError> {
        let mut node_index = HashMap::new();
        for (i, n) in nodes.iter().enumerate() {
            if node_index.insert(n.clone(), i).is_some() {
                return Err(InstanceError::Validation(format!("duplicate node {n:?}")));
            }
        }
        let mut seen = BTreeSet::new();
        let mut out_edges = vec![Vec::new(); nodes.len()];
        let mut in_edges = vec![Vec::new(); nodes.len()];
        for (k, e) in edges.iter().enumerate() {
            if !seen.insert(e.id.clone()) {
                return Err(InstanceError::Validation(format!("duplicate edge id {:?}", e.id)));
            }
            if !e.tau.is_positive() {
                return Err(InstanceError::Validation(format!("edge {:?}: transit time {} is not positive", e.id, fmt_rat(&e.tau))));
            }
            if !e.nu.is_positive() {
                return Err(InstanceError::Validation(format!("edge {:?}: capacity {} is not positive", e.id, fmt_rat(&e.nu))));
            }
            if e.tail >= nodes.len() || e.head >= nodes.len() {
                return Err(InstanceError::Validation(format!("edge {:?}: unknown endpoint", e.id)));
            }
            out_edges[e.tail].push(k);
            in_edges[e.head].push(k);
        }
        let inst = Instance { nodes, edges, commodities, out_edges, in_edges, node_index };
        let mut cids = BTreeSet::new();
        for c in &inst.commodities {
            if !cids.insert(c.id.clone()) {
                return Err(InstanceError::Validation(format!("duplicate commodity id {:?}", c.id)));
            }
            if c.inflow.values().iter().any(|v| v.is_negative()) || c.inflow.default_value().is_negative() {
                return Err(InstanceError::Validation(format!("commodity {:?}: negative inflow rate", c.id)));
            }
            if !c.inflow.default_value().is_zero() {
                return Err(InstanceError::Validation(format!("commodity {:?}: inflow must have bounded support", c.id)));
            }
            if c.inflow.support_start().is_some_and(|s| s.is_negative()) {
                return Err(InstanceError::Validation(format!("commodity {:?}: inflow before time 0", c.id)));
            }
            if c.source == c.sink {
                return Err(InstanceError::Validation(format!("commodity {:?}: source equals sink", c.id)));
            }
            if !inst.reaches(c.source, c.sink) {
                return Err(InstanceError::Validation(format!(
                    "commodity {:?}: sink {:?} unreachable from source {:?}",
                    c.id, inst.nodes[c.sink], inst.nodes[c.source]
                )));
            }
        }
        Ok(inst)
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.node_index.get(name).copied()
    }

    pub fn edge_index(&self, id: &str) -> Option<usize> {
        self.edges.iter().position(|e| e.id == id)
    }

    pub fn commodity_index(&self, id: &str) -> Option<usize> {
        self.commodities.iter().position(|c| c.id == id)
    }

    fn reaches(&self, from: usize, to: usize) -> bool {
        let mut seen = vec![false; self.nodes.len()];
        let mut queue = VecDeque::from([from]);
        seen[from] = true;
        while let Some(v) = queue.pop_front() {
            if v == to {
                return true;
            }
            for &e in &self.out_edges[v] {
                let w = self.edges[e].head;
                if !seen[w] {
                    seen[w] = true;
                    queue.push_back(w);
                }
            }
        }
        false
    }

    /// Distinct sinks in order of first appearance among commodities.
    pub fn sinks(&self) -> Vec<usize> {
        let mut out = Vec::new();
        for c in &self.commodities {
            if !out.contains(&c.sink) {
                out.push(c.sink);
            }
        }
        out
    }

    /// Time after which every network inflow is zero.
    pub fn inflow_end(&self) -> Rat {
        self.commodities
            .iter()
            .filter_map(|c| c.inflow.support_end().cloned())
            .max()
            .unwrap_or_else(Rat::zero)
    }

    pub fn to_json(&self) -> String {
        let raw = RawInstance {
            nodes: self.nodes.clone(),
            edges: self
                .edges
                .iter()
                .map(|e| RawEdge {
                    id: e.id.clone(),
                    tail: self.nodes[e.tail].clone(),
                    head: self.nodes[e.head].clone(),
                    tau: e.tau.clone(),
                    nu: e.nu.clone(),
                })
                .collect(),
            commodities: self
                .commodities
                .iter()
                .map(|c| RawCommodity {
                    id: c.id.clone(),
                    source: self.nodes[c.source].clone(),
                    sink: self.nodes[c.sink].clone(),
                    inflow: step_to_segments(&c.inflow),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&raw).expect("instance serialization")
    }
}

pub fn load_instance(bytes: &[u8]) -> Result<Instance, InstanceError> {
    let raw: RawInstance = serde_json::from_slice(bytes).map_err(|e| InstanceError::Parse(e.to_string()))?;
    let mut idx = HashMap::new();
    for (i, n) in raw.nodes.iter().enumerate() {
        idx.insert(n.clone(), i);
    }
    let lookup = |name: &str, what: &str| {
        idx.get(name).copied().ok_or_else(|| InstanceError::Validation(format!("{what}: unknown node {name:?}")))
    };
    let mut edges = Vec::with_capacity(raw.edges.len());
    for e in raw.edges {
        let tail = lookup(&e.tail, &format!("edge {:?}", e.id))?;
        let head = lookup(&e.head, &format!("edge {:?}", e.id))?;
        edges.push(Edge { id: e.id, tail, head, tau: e.tau, nu: e.nu });
    }
    let mut commodities = Vec::with_capacity(raw.commodities.len());
    for c in raw.commodities {
        let what = format!("commodity {:?}", c.id);
        let source = lookup(&c.source, &what)?;
        let sink = lookup(&c.sink, &what)?;
        if c.inflow.iter().any(|s| s.rate.is_negative()) {
            return Err(InstanceError::Validation(format!("{what}: negative inflow rate")));
        }
        let inflow = segments_to_step(c.inflow).map_err(|m| InstanceError::Validation(format!("{what}: {m}")))?;
        commodities.push(Commodity { id: c.id, source, sink, inflow });
    }
    Instance::new(raw.nodes, edges, commodities)
}

pub fn save_instance(inst: &Instance) -> Vec<u8> {
    inst.to_json().into_bytes()
}

pub fn nu_min(inst: &Instance) -> Option<Rat> {
    inst.edges.iter().map(|e| e.nu.clone()).min()
}

/// Outcome of the path-length gap computation.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum TauDelta {
    /// Smallest positive gap, realised at `node` by two path lengths.
    Finite { value: Rat, node: usize, shorter: Rat, longer: Rat },
    /// No node has two distinct path lengths to the sink.
    Infinite,
    /// The enumeration budget ran out.
    Unavailable,
}

impl TauDelta {
    pub fn as_ext(&self) -> Option<Ext> {
        match self {
            TauDelta::Finite { value, .. } => Some(Ext::Fin(value.clone())),
            TauDelta::Infinite => Some(Ext::Inf),
            TauDelta::Unavailable => None,
        }
    }
}

pub const DEFAULT_PATH_CAP: u64 = 1_000_000;

/// Minimal positive difference between the lengths of two simple paths from
/// a common node to `sink`, by exhaustive enumeration. `cap` bounds the number
/// of search steps.
pub fn tau_delta(inst: &Instance, sink: usize, cap: u64) -> TauDelta {
    let n = inst.nodes.len();
    // nodes that can reach the sink at all
    let mut useful = vec![false; n];
    let mut queue = VecDeque::from([sink]);
    useful[sink] = true;
    while let Some(v) = queue.pop_front() {
        for &e in &inst.in_edges[v] {
            let u = inst.edges[e].tail;
            if !useful[u] {
                useful[u] = true;
                queue.push_back(u);
            }
        }
    }
    let mut budget = cap;
    let mut best: Option<(Rat, usize, Rat, Rat)> = None;
    for u in 0..n {
        if u == sink || !useful[u] {
            continue;
        }
        let mut lengths = BTreeSet::new();
        let mut on_path = vec![false; n];
        on_path[u] = true;
        // explicit DFS stack of (node, next out-edge position, length so far)
        let mut stack: Vec<(usize, usize, Rat)> = vec![(u, 0, Rat::zero())];
        while let Some(top) = stack.last_mut() {
            let (v, pos) = (top.0, top.1);
            if pos >= inst.out_edges[v].len() {
                on_path[v] = false;
                stack.pop();
                continue;
            }
            top.1 += 1;
            let e = &inst.edges[inst.out_edges[v][pos]];
            let w = e.head;
            if on_path[w] || !useful[w] {
                continue;
            }
            if budget == 0 {
                return TauDelta::Unavailable;
            }
            budget -= 1;
            let len = &top.2 + &e.tau;
            if w == sink {
                lengths.insert(len);
            } else {
                on_path[w] = true;
                stack.push((w, 0, len));
            }
        }
        let lens: Vec<Rat> = lengths.into_iter().collect();
        for pair in lens.windows(2) {
            let gap = &pair[1] - &pair[0];
            if best.as_ref().map_or(true, |b| gap < b.0) {
                best = Some((gap, u, pair[0].clone(), pair[1].clone()));
            }
        }
    }
    match best {
        Some((value, node, shorter, longer)) => TauDelta::Finite { value, node, shorter, longer },
        None => TauDelta::Infinite,
    }
}
