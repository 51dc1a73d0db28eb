//! Generators and oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;

use ideflow_core::instances::{gen_random, RandomParams};
use ideflow_core::labels::compute_labels;
use ideflow_core::network::Instance;
use ideflow_core::numerics::{int, rat, Rat};
use ideflow_core::thinflow::{TfClass, TfCommodity, TfEdge, ThinFlow, ThinFlowProblem};
use ideflow_core::waterfill::{build_h, sort_h, waterfill, HFunc};
use num_traits::{Signed, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn quarter(rng: &mut impl Rng, lo: i64, hi: i64) -> Rat {
    rat(rng.gen_range(lo..=hi), 4)
}

/// Up to four h-functions sorted for water-filling, and a rational `b ≤ 8`.
pub fn random_hfuncs(seed: u64) -> (Rat, Vec<HFunc>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = rng.gen_range(1..=4);
    let mut hs: Vec<HFunc> = (0..p)
        .map(|edge| {
            let nu = quarter(&mut rng, 1, 12);
            let a_w = quarter(&mut rng, -8, 8);
            let queue = if rng.gen_bool(0.5) { quarter(&mut rng, 1, 8) } else { Rat::zero() };
            build_h(edge, &a_w, &queue, &nu)
        })
        .collect();
    sort_h(&mut hs);
    (rat(rng.gen_range(0..=32), 4), hs)
}

/// KKT conditions of a split; returns a description of the first violation.
pub fn kkt_violation(b: &Rat, hs: &[HFunc], z: &[Rat], level: &Rat) -> Option<String> {
    let total: Rat = z.iter().sum();
    if total != *b {
        return Some(format!("sum {total} != b {b}"));
    }
    for (h, zi) in hs.iter().zip(z) {
        if zi.is_negative() {
            return Some(format!("negative rate on edge {}", h.edge));
        }
        if zi.is_positive() && h.eval(zi) != *level {
            return Some(format!("edge {} used at h = {} but level {}", h.edge, h.eval(zi), level));
        }
        if zi.is_zero() && h.eval(&Rat::zero()) < *level {
            return Some(format!("edge {} unused below level", h.edge));
        }
    }
    None
}

/// All points of the simplex `{z ≥ 0, Σz = b}` whose coordinates are
/// multiples of `step`, plus the remainder on the last coordinate.
pub fn grid_points(b: &Rat, p: usize, step: &Rat) -> Vec<Vec<Rat>> {
    fn rec(left: &Rat, k: usize, step: &Rat, cur: &mut Vec<Rat>, out: &mut Vec<Vec<Rat>>) {
        if k == 1 {
            cur.push(left.clone());
            out.push(cur.clone());
            cur.pop();
            return;
        }
        let mut v = Rat::zero();
        while v <= *left {
            cur.push(v.clone());
            rec(&(left - &v), k - 1, step, cur, out);
            cur.pop();
            v += step;
        }
    }
    let mut out = Vec::new();
    rec(b, p, step, &mut Vec::new(), &mut out);
    out
}

/// A random snapshot: random instance, random queues, per-sink active sets
/// and random node demands at nodes that can reach their sink.
pub fn random_thinflow_problem(seed: u64, single_sink: bool) -> ThinFlowProblem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7f4a_7c15);
    let n = rng.gen_range(3..=6);
    let sinks = if single_sink { 1 } else { rng.gen_range(1..=2) };
    let need = n - 1 + sinks - 1;
    let m = rng.gen_range(need..=8.min(n * (n - 1)).max(need));
    let commodities = rng.gen_range(1..=3);
    let params = RandomParams { n, m, sinks, commodities, acyclic: false };
    let inst = gen_random(seed, params).expect("valid parameters");
    let queues: Vec<Rat> =
        inst.edges.iter().map(|_| if rng.gen_bool(0.4) { quarter(&mut rng, 1, 8) } else { Rat::zero() }).collect();
    snapshot_problem(&inst, &queues, &mut rng)
}

fn snapshot_problem(inst: &Instance, queues: &[Rat], rng: &mut impl Rng) -> ThinFlowProblem {
    let sinks = inst.sinks();
    let snaps: Vec<_> = sinks.iter().map(|&t| compute_labels(inst, queues, t, Rat::zero())).collect();
    let commodities = inst
        .commodities
        .iter()
        .map(|c| {
            let class = sinks.iter().position(|&t| t == c.sink).unwrap();
            let mut demand = BTreeMap::new();
            for v in 0..inst.nodes.len() {
                if v != c.sink && snaps[class].labels[v].finite().is_some() && rng.gen_bool(0.5) {
                    demand.insert(v, quarter(rng, 1, 16));
                }
            }
            TfCommodity { class, demand }
        })
        .collect();
    ThinFlowProblem {
        n_nodes: inst.nodes.len(),
        edges: inst
            .edges
            .iter()
            .zip(queues)
            .map(|(e, q)| TfEdge { tail: e.tail, head: e.head, nu: e.nu.clone(), queue_positive: q.is_positive() })
            .collect(),
        classes: snaps.iter().map(|s| TfClass { sink: s.sink, active: s.active.clone() }).collect(),
        commodities,
    }
}

/// Single-class thin flow assembled node by node by water-filling.
pub fn waterfill_solution(p: &ThinFlowProblem) -> ThinFlow {
    assert_eq!(p.classes.len(), 1);
    let class = &p.classes[0];
    // order by the longest active path so every head precedes its tails
    let mut longest: Vec<Option<usize>> = vec![None; p.n_nodes];
    longest[class.sink] = Some(0);
    for _ in 0..p.n_nodes {
        for (k, e) in p.edges.iter().enumerate() {
            if let (true, Some(h)) = (class.active[k], longest[e.head]) {
                if longest[e.tail].map_or(true, |t| t < h + 1) {
                    longest[e.tail] = Some(h + 1);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..p.n_nodes).filter(|&v| longest[v].is_some()).collect();
    order.sort_by_key(|&v| longest[v]);
    let mut a: Vec<Option<Rat>> = vec![None; p.n_nodes];
    let mut x = BTreeMap::new();
    for v in order {
        if v == class.sink {
            a[v] = Some(Rat::zero());
            continue;
        }
        let mut hs: Vec<HFunc> = p
            .edges
            .iter()
            .enumerate()
            .filter(|(k, e)| class.active[*k] && e.tail == v)
            .map(|(k, e)| {
                let q = if e.queue_positive { int(1) } else { Rat::zero() };
                build_h(k, a[e.head].as_ref().expect("head processed first"), &q, &e.nu)
            })
            .collect();
        sort_h(&mut hs);
        let b: Rat = p.commodities.iter().filter_map(|c| c.demand.get(&v)).sum();
        let split = waterfill(&b, &hs).expect("reachable node has an active edge");
        a[v] = Some(split.level);
        for (h, z) in hs.iter().zip(&split.z) {
            if z.is_zero() {
                continue;
            }
            for (i, c) in p.commodities.iter().enumerate() {
                if let Some(bi) = c.demand.get(&v) {
                    x.insert((i, h.edge), z * bi / &b);
                }
            }
        }
    }
    ThinFlow { x, a: vec![a] }
}

pub fn single_sink_params(rng: &mut impl Rng, acyclic: bool) -> RandomParams {
    let n = rng.gen_range(3..=6);
    let max = if acyclic { n * (n - 1) / 2 } else { n * (n - 1) };
    let m = rng.gen_range(n - 1..=max.min(n + 4));
    RandomParams { n, m, sinks: 1, commodities: rng.gen_range(1..=3), acyclic }
}

pub fn multi_sink_acyclic_params(rng: &mut impl Rng) -> RandomParams {
    let n = rng.gen_range(4..=6);
    let sinks = rng.gen_range(2..=3);
    let need = n - 1 + sinks - 1;
    let m = rng.gen_range(need..=(n * (n - 1) / 2).min(n + 4).max(need));
    RandomParams { n, m, sinks, commodities: rng.gen_range(2..=3), acyclic: true }
}
