//! Snapshot shortest-path labels under instantaneous travel times.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use crate::network::{Edge, Instance};
use crate::numerics::{Ext, Rat};

/// Labels towards one sink at one instant.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelSnapshot {
    pub time: Rat,
    pub sink: usize,
    pub labels: Vec<Ext>,
    pub active: Vec<bool>,
}

/// `c_e = τ_e + q_e / ν_e`.
pub fn instantaneous_cost(e: &Edge, queue: &Rat) -> Rat {
    &e.tau + queue / &e.nu
}

/// Dijkstra on reversed edges towards `sink`. Labels depend on the sink only,
/// so commodities sharing a sink share the snapshot.
pub fn compute_labels(inst: &Instance, queues: &[Rat], sink: usize, time: Rat) -> LabelSnapshot {
    let n = inst.nodes.len();
    let costs: Vec<Rat> = inst.edges.iter().zip(queues).map(|(e, q)| instantaneous_cost(e, q)).collect();
    let mut dist: Vec<Option<Rat>> = vec![None; n];
    let mut done = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[sink] = Some(Rat::from_integer(0.into()));
    heap.push(Reverse((dist[sink].clone().unwrap(), sink)));
    while let Some(Reverse((d, w))) = heap.pop() {
        if done[w] {
            continue;
        }
        done[w] = true;
        for &k in &inst.in_edges[w] {
            let v = inst.edges[k].tail;
            if done[v] {
                continue;
            }
            let cand = &d + &costs[k];
            if dist[v].as_ref().map_or(true, |cur| cand < *cur) {
                dist[v] = Some(cand.clone());
                heap.push(Reverse((cand, v)));
            }
        }
    }
    let labels: Vec<Ext> = dist.into_iter().map(|d| d.map_or(Ext::Inf, Ext::Fin)).collect();
    let active = inst
        .edges
        .iter()
        .zip(&costs)
        .map(|(e, c)| match (&labels[e.tail], &labels[e.head]) {
            (Ext::Fin(lv), Ext::Fin(lw)) => e.tail != sink && *lv == lw + c,
            _ => false,
        })
        .collect();
    LabelSnapshot { time, sink, labels, active }
}
