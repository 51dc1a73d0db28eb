//! Built-in instances and seeded random families.
//!
//! The non-terminating constructions use gadget A: nodes `v1..v7`, a cycle
//! `v1 v2 v3 v4 v5 v1` and a cycle `v1 v2 v6 v7 v1` sharing `v1v2`, one
//! commodity with inflow 2 on `[s mod 5, s mod 5 + 1)` at `v1`, and exit edges
//! from `v2`, `v5`, `v7` into the paths `P2`, `P5`, `P7` towards its sink.
//! Path gadgets `B_j` chain time-shifted copies of A along their vertical
//! paths (`v1 → v2` of each copy, three edges between copies). Connector
//! wiring is reconstructed: padding edges give every exit path the same
//! transit-time length `L = 49` to its sink.

use num_traits::Zero;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::network::{Instance, InstanceBuilder};
use crate::numerics::{int, rat, Rat, StepFunction};

fn build(b: InstanceBuilder) -> Instance {
    b.build().expect("built-in instance is valid")
}

pub fn gen_fig2() -> Instance {
    let mut b = InstanceBuilder::new();
    for n in ["s1", "v", "s2", "t"] {
        b.node(n);
    }
    b.edge("s1v", "s1", "v", int(1), int(2));
    b.edge("s1t", "s1", "t", int(3), int(1));
    b.edge("vs2", "v", "s2", int(1), int(2));
    b.edge("s2t", "s2", "t", int(1), int(1));
    b.edge("s2s1", "s2", "s1", int(1), int(1));
    b.commodity("1", "s1", "t", StepFunction::indicator(int(0), int(1), int(3)));
    b.commodity("2", "s2", "t", StepFunction::indicator(int(1), int(2), int(4)));
    build(b)
}

pub fn gen_example3() -> Instance {
    let mut b = InstanceBuilder::new();
    for n in ["s", "v", "w", "t"] {
        b.node(n);
    }
    b.edge("sv", "s", "v", int(1), int(7));
    b.edge("st", "s", "t", int(3), int(1));
    b.edge("vw", "v", "w", int(1), int(7));
    b.edge("wt", "w", "t", int(1), int(1));
    b.edge("ws", "w", "s", int(1), int(6));
    b.commodity("1", "s", "t", StepFunction::indicator(int(0), int(1), int(16)));
    build(b)
}

pub fn gen_nonuniqueness() -> Instance {
    let mut b = InstanceBuilder::new();
    for n in ["s", "v", "w", "t"] {
        b.node(n);
    }
    b.edge("sv", "s", "v", int(1), int(2));
    b.edge("sw", "s", "w", int(1), int(2));
    b.edge("vt", "v", "t", int(1), int(2));
    b.edge("wt", "w", "t", int(1), int(1));
    b.commodity("1", "s", "t", StepFunction::indicator(int(0), int(1), int(2)));
    build(b)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GadgetKind {
    TwoSink,
    SingleSource,
}

/// Shifts of the gadget-A copies along a path gadget, before adding `k`.
pub fn path_gadget_shifts(j: u32) -> &'static [u32] {
    match j {
        2 => &[0, 0, 0, 0, 1, 1, 1, 1, 2, 2, 2, 2],
        5 => &[3, 3, 3, 4, 4, 4],
        7 => &[3, 3, 3, 4, 4, 4, 5, 5, 6],
        _ => panic!("no path gadget B{j}"),
    }
}

/// Padding edges appended after the last copy so all path gadgets have the
/// vertical length of `B2`.
pub fn path_gadget_padding(j: u32) -> usize {
    match j {
        2 => 0,
        5 => 24,
        7 => 12,
        _ => panic!("no path gadget B{j}"),
    }
}

/// Transit-time length of every exit path from a gadget A to its sink.
pub const HOOK_LENGTH: i64 = 49;

const PATHS: [u32; 3] = [2, 5, 7];

fn one() -> Rat {
    int(1)
}

fn e(b: &mut InstanceBuilder, tail: &str, head: &str) {
    b.edge(&format!("{tail}->{head}"), tail, head, one(), one());
}

fn sink_name(c: usize) -> &'static str {
    if c == 0 {
        "t"
    } else {
        "t'"
    }
}

/// Gadget-A commodity: `(id, source node, sink, shift)`.
struct GadgetCommodity {
    id: String,
    source: String,
    sink: &'static str,
    shift: u32,
}

fn two_sink_graph(b: &mut InstanceBuilder) -> Vec<GadgetCommodity> {
    b.node("t");
    b.node("t'");
    let mut coms = Vec::new();
    for c in 0..2usize {
        for j in PATHS {
            for k in 0..5u32 {
                let pre = format!("C{c}.B{j}+{k}");
                let shifts = path_gadget_shifts(j);
                let input = format!("{pre}.in");
                let first = format!("{pre}.A1.v1");
                e(b, &input, &first);
                for (m0, base) in shifts.iter().enumerate() {
                    let m = m0 + 1;
                    let s = base + k;
                    let a = format!("{pre}.A{m}");
                    let v = |x: u32| format!("{a}.v{x}");
                    for (x, y) in [(1, 2), (2, 3), (3, 4), (4, 5), (5, 1), (2, 6), (6, 7), (7, 1)] {
                        e(b, &v(x), &v(y));
                    }
                    let other = 1 - c;
                    let r = s % 5;
                    for (hook, pj) in [(2, 2), (5, 5), (7, 7)] {
                        e(b, &v(hook), &format!("C{other}.B{pj}+{r}.in"));
                    }
                    if m < shifts.len() {
                        let g1 = format!("{pre}.g{m}.1");
                        let g2 = format!("{pre}.g{m}.2");
                        e(b, &v(2), &g1);
                        e(b, &g1, &g2);
                        e(b, &g2, &format!("{pre}.A{}.v1", m + 1));
                    }
                    coms.push(GadgetCommodity { id: a.clone(), source: v(1), sink: sink_name(c), shift: s });
                }
                let last = format!("{pre}.A{}.v2", shifts.len());
                let mut prev = last;
                for p in 1..=path_gadget_padding(j) {
                    let pad = format!("{pre}.pad{p}");
                    e(b, &prev, &pad);
                    prev = pad;
                }
                let out = format!("{pre}.out");
                e(b, &prev, &out);
                // vertical paths of C1 lead to t, those of C0 to t'
                e(b, &out, sink_name(1 - c));
            }
        }
    }
    coms
}

fn gadget_inflow(shift: u32) -> StepFunction {
    let r = int((shift % 5) as i64);
    StepFunction::indicator(r.clone(), r + one(), int(2))
}

pub fn gen_gadget_graph(kind: GadgetKind) -> Instance {
    let mut b = InstanceBuilder::new();
    let coms = two_sink_graph(&mut b);
    match kind {
        GadgetKind::TwoSink => {
            for g in coms {
                b.commodity(&g.id, &g.source, g.sink, gadget_inflow(g.shift));
            }
        }
        GadgetKind::SingleSource => {
            let mut totals = [Rat::zero(), Rat::zero()];
            b.node("src");
            for g in &coms {
                let r = (g.shift % 5) as i64;
                // release at r via an edge of length r; no edge needed for r = 0
                let start = if r == 0 {
                    g.source.clone()
                } else {
                    let s = format!("S~.{}", g.id);
                    b.edge(&format!("{s}->{}", g.source), &s, &g.source, int(r), int(2));
                    s
                };
                let tau_p = int(r + 1 + HOOK_LENGTH);
                let (v, w) = (format!("V.{}", g.id), format!("W.{}", g.id));
                b.edge(&format!("src->{v}"), "src", &v, int(1), int(6));
                b.edge(&format!("{v}->{w}"), &v, &w, int(1), int(3));
                b.edge(&format!("src->{w}"), "src", &w, int(2), &tau_p - one());
                b.edge(&format!("{w}->{start}"), &w, &start, int(2), int(2));
                b.edge(&format!("{w}->{}", g.sink), &w, g.sink, int(1), int(1));
                totals[usize::from(g.sink != "t")] += tau_p + int(5);
            }
            b.commodity("0", "src", "t", StepFunction::indicator(int(0), int(1), totals[0].clone()));
            b.commodity("0'", "src", "t'", StepFunction::indicator(int(0), int(1), totals[1].clone()));
        }
    }
    build(b)
}

/// One gadget A (shift 0, sink `t`) whose exit paths imitate `B2`, `B5`, `B7`:
/// each copy of A on a vertical path is replaced by a single driver edge
/// `a → b` that receives inflow 2 on `[s mod 5 + 5h, s mod 5 + 5h + 1)` from
/// a driver commodity leaving immediately to `t'`. The instantaneous waiting
/// time along each path then follows the same five-step pattern.
pub fn gen_gadget_smoke(periods: u32) -> Instance {
    let mut b = InstanceBuilder::new();
    b.node("t");
    b.node("t'");
    let v = |x: u32| format!("A.v{x}");
    for (x, y) in [(1, 2), (2, 3), (3, 4), (4, 5), (5, 1), (2, 6), (6, 7), (7, 1)] {
        e(&mut b, &v(x), &v(y));
    }
    for (hook, j) in [(2, 2u32), (5, 5), (7, 7)] {
        let pre = format!("P{j}");
        let input = format!("{pre}.in");
        e(&mut b, &v(hook), &input);
        let shifts = path_gadget_shifts(j);
        let mut prev = input;
        for (m0, s) in shifts.iter().enumerate() {
            let m = m0 + 1;
            let (a, bb) = (format!("{pre}.a{m}"), format!("{pre}.b{m}"));
            if m == 1 {
                e(&mut b, &prev, &a);
            } else {
                let (g1, g2) = (format!("{pre}.g{}.1", m - 1), format!("{pre}.g{}.2", m - 1));
                e(&mut b, &prev, &g1);
                e(&mut b, &g1, &g2);
                e(&mut b, &g2, &a);
            }
            e(&mut b, &a, &bb);
            e(&mut b, &bb, "t'");
            let r = (s % 5) as i64;
            let segs = (0..periods as i64).map(|h| (int(r + 5 * h), int(r + 5 * h + 1), int(2)));
            b.commodity(&format!("{pre}.d{m}"), &a, "t'", StepFunction::from_segments(segs).expect("disjoint boxes"));
            prev = bb;
        }
        for p in 1..=path_gadget_padding(j) {
            let pad = format!("{pre}.pad{p}");
            e(&mut b, &prev, &pad);
            prev = pad;
        }
        let out = format!("{pre}.out");
        e(&mut b, &prev, &out);
        e(&mut b, &out, "t");
    }
    b.commodity("A", &v(1), "t", gadget_inflow(0));
    build(b)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RandomParams {
    pub n: usize,
    pub m: usize,
    pub sinks: usize,
    pub commodities: usize,
    pub acyclic: bool,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParamError {
    #[error("invalid generator parameters: {0}")]
    Invalid(String),
}

fn quarter(rng: &mut ChaCha8Rng) -> Rat {
    rat(rng.gen_range(1..=16), 4)
}

/// Seeded random instance. Nodes are `n0..`; edges `e0..`; every commodity
/// has a source that reaches its sink. With `acyclic`, all edges follow a
/// random topological order.
pub fn gen_random(seed: u64, p: RandomParams) -> Result<Instance, ParamError> {
    if p.n < 2 || p.sinks == 0 || p.sinks >= p.n || p.commodities == 0 {
        return Err(ParamError::Invalid(format!("need n >= 2, 1 <= sinks < n, commodities >= 1 (got {p:?})")));
    }
    let need = p.n - 1 + p.sinks - 1;
    let max_edges = if p.acyclic { p.n * (p.n - 1) / 2 } else { p.n * (p.n - 1) };
    if p.m < need || p.m > max_edges {
        return Err(ParamError::Invalid(format!("edge count {} outside [{need}, {max_edges}]", p.m)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..p.n).collect();
    order.shuffle(&mut rng);
    // position of each node in the order; the root sink comes last
    let root = order[p.n - 1];
    let mut pos = vec![0; p.n];
    for (k, &v) in order.iter().enumerate() {
        pos[v] = k;
    }
    let mut sinks = vec![root];
    let mut others: Vec<usize> = order[1..p.n - 1].to_vec();
    others.shuffle(&mut rng);
    sinks.extend(others.into_iter().take(p.sinks - 1));
    let mut pairs: Vec<(usize, usize)> = Vec::new();
    let has = |pairs: &Vec<(usize, usize)>, a: usize, b: usize| pairs.contains(&(a, b));
    // in-tree towards the root: each node points to a later node
    for k in 0..p.n - 1 {
        let head = order[rng.gen_range(k + 1..p.n)];
        pairs.push((order[k], head));
    }
    // every other sink needs a predecessor; it sits after order[0]
    for &s in &sinks[1..] {
        if !pairs.iter().any(|&(_, h)| h == s) {
            let tail = order[rng.gen_range(0..pos[s])];
            pairs.push((tail, s));
        }
    }
    while pairs.len() < p.m {
        let (a, b) = (rng.gen_range(0..p.n), rng.gen_range(0..p.n));
        if a == b || has(&pairs, a, b) || (p.acyclic && pos[a] > pos[b]) {
            continue;
        }
        pairs.push((a, b));
    }
    let mut b = InstanceBuilder::new();
    let name = |v: usize| format!("n{v}");
    for v in 0..p.n {
        b.node(&name(v));
    }
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); p.n];
    for (k, &(x, y)) in pairs.iter().enumerate() {
        b.edge(&format!("e{k}"), &name(x), &name(y), quarter(&mut rng), quarter(&mut rng));
        out[x].push(y);
    }
    for c in 0..p.commodities {
        let sink = sinks[c % sinks.len()];
        let sources: Vec<usize> = (0..p.n).filter(|&v| v != sink && reaches(&out, v, sink)).collect();
        let source = *sources.choose(&mut rng).expect("every sink has a predecessor");
        let from = rat(rng.gen_range(0..4), 2);
        let len = rat(rng.gen_range(1..=4), 2);
        let rate = quarter(&mut rng);
        b.commodity(&format!("c{c}"), &name(source), &name(sink), StepFunction::indicator(from.clone(), from + len, rate));
    }
    Ok(b.build().expect("generated instance is valid"))
}

fn reaches(out: &[Vec<usize>], from: usize, to: usize) -> bool {
    let mut seen = vec![false; out.len()];
    let mut stack = vec![from];
    seen[from] = true;
    while let Some(v) = stack.pop() {
        if v == to {
            return true;
        }
        for &w in &out[v] {
            if !seen[w] {
                seen[w] = true;
                stack.push(w);
            }
        }
    }
    false
}

pub fn builtin_names() -> &'static [&'static str] {
    &["fig2", "example3", "nonuniqueness", "nonterm-two-sink", "nonterm-single-source", "gadget-a-smoke"]
}

/// Smoke-variant driver periods; enough for a horizon of 25.
pub const SMOKE_PERIODS: u32 = 6;

pub fn builtin(name: &str) -> Option<Instance> {
    Some(match name {
        "fig2" => gen_fig2(),
        "example3" => gen_example3(),
        "nonuniqueness" => gen_nonuniqueness(),
        "nonterm-two-sink" => gen_gadget_graph(GadgetKind::TwoSink),
        "nonterm-single-source" => gen_gadget_graph(GadgetKind::SingleSource),
        "gadget-a-smoke" => gen_gadget_smoke(SMOKE_PERIODS),
        _ => return None,
    })
}
