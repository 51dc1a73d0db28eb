//! Multi-commodity thin flows: per-phase edge rates `x` and label slopes `a`.
//!
//! Commodities whose sink and active edge set coincide have identical labels,
//! so the solver works on label classes and splits a class's rate at a node
//! among its commodities in proportion to their demands there.
//!
//! The search enumerates the binary structure (which edges carry flow, which
//! uncongested edges overflow, which edge attains a label minimum) in
//! lexicographic order and checks each guess with an exact LP. Guesses are
//! decomposed along the dependency order of the nodes that must choose a
//! split: a node depends on every node reachable along its active edges whose
//! flow enters an edge it can see. Strongly connected groups are solved
//! jointly, dependencies first; a group that is a single node whose successor
//! labels are already fixed reduces to water-filling.

use std::collections::{BTreeMap, BTreeSet, HashMap, VecDeque};

use num_traits::{Signed, Zero};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;
use rayon::prelude::*;
use thiserror::Error;

use crate::numerics::{fmt_rat, Rat};
use crate::simplex::{feasible_point, Rel, Row};
use crate::verify::{Verdict, Witness};
use crate::waterfill::{build_h_offset, sort_h, waterfill};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TfEdge {
    pub tail: usize,
    pub head: usize,
    pub nu: Rat,
    pub queue_positive: bool,
}

/// A sink together with an active edge set. Every commodity belongs to one.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TfClass {
    pub sink: usize,
    pub active: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TfCommodity {
    pub class: usize,
    /// Node inflow `b⁻_{i,v}`; absent means zero.
    pub demand: BTreeMap<usize, Rat>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ThinFlowProblem {
    pub n_nodes: usize,
    pub edges: Vec<TfEdge>,
    pub classes: Vec<TfClass>,
    pub commodities: Vec<TfCommodity>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ThinFlow {
    /// Nonzero rates keyed by `(commodity, edge)`.
    pub x: BTreeMap<(usize, usize), Rat>,
    /// Label slopes per class and node; `None` where the sink is unreachable
    /// along active edges.
    pub a: Vec<Vec<Option<Rat>>>,
}

impl ThinFlow {
    pub fn rate(&self, i: usize, e: usize) -> Rat {
        self.x.get(&(i, e)).cloned().unwrap_or_else(Rat::zero)
    }

    pub fn slope(&self, p: &ThinFlowProblem, i: usize, v: usize) -> Option<&Rat> {
        self.a[p.commodities[i].class][v].as_ref()
    }

    pub fn edge_totals(&self, n_edges: usize) -> Vec<Rat> {
        let mut tot = vec![Rat::zero(); n_edges];
        for ((_, e), r) in &self.x {
            tot[*e] += r;
        }
        tot
    }
}

/// One decoded guess: `y = true` means the rate on that unit edge is zero,
/// `z = true` means the uncongested edge stays within capacity, and `argmin`
/// names the edge that attains a label minimum.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinaryGuess {
    pub y: Vec<bool>,
    pub z: Vec<bool>,
    pub argmin: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Strategy {
    /// Solve dependency groups separately (default).
    Decomposed,
    /// One joint enumeration over every node with a choice.
    Monolithic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ThinFlowConfig {
    pub binary_cap: u32,
    pub strategy: Strategy,
}

impl Default for ThinFlowConfig {
    fn default() -> Self {
        ThinFlowConfig { binary_cap: 24, strategy: Strategy::Decomposed }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ThinFlowError {
    #[error("thin flow search needs {needed} binaries, cap is {cap}")]
    CapExceeded { needed: u32, cap: u32 },
    #[error("no thin flow found: {0}")]
    NoSolution(String),
}

/// `g_e(x) = x − ν` on a queue, `max(x − ν, 0)` otherwise.
pub fn g_eval(nu: &Rat, x: &Rat, queue_positive: bool) -> Rat {
    let d = x - nu;
    if queue_positive || d.is_positive() {
        d
    } else {
        Rat::zero()
    }
}

/// Nodes that reach the class sink along active edges, and the active edges
/// usable for that (head reaches the sink, tail is not the sink).
struct ClassView {
    reach: Vec<bool>,
    eff: Vec<bool>,
    out: Vec<Vec<usize>>,
    inn: Vec<Vec<usize>>,
}

fn class_view(p: &ThinFlowProblem, c: &TfClass) -> ClassView {
    let n = p.n_nodes;
    let mut inn_all = vec![Vec::new(); n];
    for (k, e) in p.edges.iter().enumerate() {
        if c.active[k] {
            inn_all[e.head].push(k);
        }
    }
    let mut reach = vec![false; n];
    reach[c.sink] = true;
    let mut queue = VecDeque::from([c.sink]);
    while let Some(w) = queue.pop_front() {
        for &k in &inn_all[w] {
            let v = p.edges[k].tail;
            if !reach[v] {
                reach[v] = true;
                queue.push_back(v);
            }
        }
    }
    let eff: Vec<bool> = p
        .edges
        .iter()
        .enumerate()
        .map(|(k, e)| c.active[k] && reach[e.head] && e.tail != c.sink)
        .collect();
    let mut out = vec![Vec::new(); n];
    let mut inn = vec![Vec::new(); n];
    for (k, e) in p.edges.iter().enumerate() {
        if eff[k] {
            out[e.tail].push(k);
            inn[e.head].push(k);
        }
    }
    ClassView { reach, eff, out, inn }
}

#[derive(Clone, Debug)]
struct Unit {
    class: usize,
    node: usize,
    b: Rat,
    cands: Vec<usize>,
}

struct Solver<'a> {
    p: &'a ThinFlowProblem,
    views: Vec<ClassView>,
    fixed: Vec<Rat>,
    /// Memoised labels whose inputs are final.
    memo: Vec<HashMap<usize, Rat>>,
}

impl<'a> Solver<'a> {
    fn edge_term(&self, k: usize) -> Rat {
        let e = &self.p.edges[k];
        g_eval(&e.nu, &self.fixed[k], e.queue_positive) / &e.nu
    }

    /// Label slope of `(c, w)` from final rates, by memoised recursion along
    /// the acyclic active edges.
    fn label(&mut self, c: usize, w: usize) -> Rat {
        if let Some(v) = self.memo[c].get(&w) {
            return v.clone();
        }
        let sink = self.p.classes[c].sink;
        let mut stack = vec![(w, false)];
        while let Some((v, expanded)) = stack.pop() {
            if self.memo[c].contains_key(&v) {
                continue;
            }
            if v == sink {
                self.memo[c].insert(v, Rat::zero());
                continue;
            }
            let outs = self.views[c].out[v].clone();
            if !expanded {
                stack.push((v, true));
                for &k in &outs {
                    let h = self.p.edges[k].head;
                    if !self.memo[c].contains_key(&h) {
                        stack.push((h, false));
                    }
                }
                continue;
            }
            let best = outs
                .iter()
                .map(|&k| self.edge_term(k) + &self.memo[c][&self.p.edges[k].head])
                .min()
                .expect("node reaching the sink has an active edge");
            self.memo[c].insert(v, best);
        }
        self.memo[c][&w].clone()
    }
}

pub fn solve_thinflow(p: &ThinFlowProblem, cfg: &ThinFlowConfig) -> Result<ThinFlow, ThinFlowError> {
    let views: Vec<ClassView> = p.classes.iter().map(|c| class_view(p, c)).collect();
    // aggregate demand per (class, node)
    let mut demand: BTreeMap<(usize, usize), Rat> = BTreeMap::new();
    for com in &p.commodities {
        for (v, b) in &com.demand {
            if b.is_positive() && *v != p.classes[com.class].sink {
                *demand.entry((com.class, *v)).or_insert_with(Rat::zero) += b;
            }
        }
    }
    let mut units = Vec::new();
    for ((c, v), b) in demand {
        let cands = views[c].out[v].clone();
        if cands.is_empty() {
            return Err(ThinFlowError::NoSolution(format!("node {v} has demand {} but no active path to sink", fmt_rat(&b))));
        }
        units.push(Unit { class: c, node: v, b, cands });
    }
    let mut solver = Solver {
        p,
        views,
        fixed: vec![Rat::zero(); p.edges.len()],
        memo: vec![HashMap::new(); p.classes.len()],
    };
    let mut unit_rates: Vec<Vec<Rat>> = units.iter().map(|u| vec![Rat::zero(); u.cands.len()]).collect();
    let mut choice = Vec::new();
    for (ui, u) in units.iter().enumerate() {
        if u.cands.len() == 1 {
            unit_rates[ui][0] = u.b.clone();
            solver.fixed[u.cands[0]] += &u.b;
        } else {
            choice.push(ui);
        }
    }
    let groups: Vec<Vec<usize>> = match cfg.strategy {
        Strategy::Monolithic => {
            if choice.is_empty() {
                vec![]
            } else {
                vec![choice.clone()]
            }
        }
        Strategy::Decomposed => dependency_groups(&solver, &units, &choice),
    };
    for group in groups {
        if cfg.strategy == Strategy::Decomposed && group.len() == 1 {
            let ui = group[0];
            let u = &units[ui];
            let mut hs = Vec::with_capacity(u.cands.len());
            for &k in &u.cands {
                let e = &p.edges[k];
                let a_w = solver.label(u.class, e.head);
                hs.push(build_h_offset(k, &a_w, e.queue_positive, &e.nu, &solver.fixed[k]));
            }
            sort_h(&mut hs);
            let split = waterfill(&u.b, &hs).expect("unit has candidate edges");
            for (h, z) in hs.iter().zip(split.z) {
                let pos = u.cands.iter().position(|&k| k == h.edge).unwrap();
                solver.fixed[h.edge] += &z;
                unit_rates[ui][pos] = z;
            }
            continue;
        }
        let rates = solve_group(&mut solver, &units, &group, cfg)?;
        for (ui, r) in group.iter().zip(rates) {
            for (pos, z) in r.into_iter().enumerate() {
                solver.fixed[units[*ui].cands[pos]] += &z;
                unit_rates[*ui][pos] = z;
            }
        }
    }
    // all rates are final: labels everywhere
    solver.memo.iter_mut().for_each(|m| m.clear());
    let mut a = Vec::with_capacity(p.classes.len());
    for c in 0..p.classes.len() {
        let mut row = vec![None; p.n_nodes];
        for v in 0..p.n_nodes {
            if solver.views[c].reach[v] {
                row[v] = Some(solver.label(c, v));
            }
        }
        a.push(row);
    }
    // split class rates among commodities
    let unit_index: HashMap<(usize, usize), usize> = units.iter().enumerate().map(|(i, u)| ((u.class, u.node), i)).collect();
    let mut x = BTreeMap::new();
    for (i, com) in p.commodities.iter().enumerate() {
        for (v, b) in &com.demand {
            if !b.is_positive() || *v == p.classes[com.class].sink {
                continue;
            }
            let ui = unit_index[&(com.class, *v)];
            let u = &units[ui];
            for (pos, &k) in u.cands.iter().enumerate() {
                let z = &unit_rates[ui][pos];
                if z.is_positive() {
                    *x.entry((i, k)).or_insert_with(Rat::zero) += z * b / &u.b;
                }
            }
        }
    }
    Ok(ThinFlow { x, a })
}

fn dependency_groups(solver: &Solver, units: &[Unit], choice: &[usize]) -> Vec<Vec<usize>> {
    let p = solver.p;
    let mut at_node: HashMap<usize, Vec<usize>> = HashMap::new();
    for (ci, &ui) in choice.iter().enumerate() {
        at_node.entry(units[ui].node).or_default().push(ci);
    }
    let mut g: DiGraph<(), ()> = DiGraph::new();
    let idx: Vec<_> = choice.iter().map(|_| g.add_node(())).collect();
    for (ci, &ui) in choice.iter().enumerate() {
        let u = &units[ui];
        let view = &solver.views[u.class];
        let mut seen = BTreeSet::from([u.node]);
        let mut queue = VecDeque::from([u.node]);
        let mut deps = BTreeSet::new();
        while let Some(w) = queue.pop_front() {
            if let Some(list) = at_node.get(&w) {
                for &cj in list {
                    if units[choice[cj]].cands.iter().any(|&k| view.eff[k]) {
                        deps.insert(cj);
                    }
                }
            }
            for &k in &view.out[w] {
                let h = p.edges[k].head;
                if seen.insert(h) {
                    queue.push_back(h);
                }
            }
        }
        for cj in deps {
            if cj != ci {
                g.add_edge(idx[ci], idx[cj], ());
            }
        }
    }
    // tarjan_scc lists components in reverse topological order, so every
    // group comes after the groups it depends on
    tarjan_scc(&g)
        .into_iter()
        .map(|comp| {
            let mut members: Vec<usize> = comp.into_iter().map(|n| choice[n.index()]).collect();
            members.sort_by_key(|&ui| (units[ui].class, units[ui].node));
            members
        })
        .collect()
}

struct GroupModel {
    /// (unit, candidate position) per rate column
    cols: Vec<(usize, usize)>,
    unit_cols: Vec<Vec<usize>>,
    unit_b: Vec<Rat>,
    /// touched uncongested edges with a free overflow choice: (edge, rate columns, ν − fixed)
    z_edges: Vec<(usize, Vec<usize>, Rat)>,
    /// label variables: (class, node)
    label_vars: Vec<(usize, usize)>,
    /// per label variable: list of (edge, expression parts)
    label_rows: Vec<Vec<LabelAlt>>,
    /// per label variable: index into its alternatives forced to equality by y, or argmin slot
    label_kind: Vec<LabelKind>,
    argmin_slots: Vec<usize>,
}

#[derive(Clone, Debug)]
struct LabelAlt {
    /// g_e/ν_e as a linear form of rate columns (when the edge is touched)
    g_lin: Option<(Vec<usize>, Rat, Rat, Option<usize>)>,
    /// constant g_e/ν_e when untouched
    g_const: Rat,
    head_var: Option<usize>,
    head_const: Rat,
    /// column of the unit-edge rate if this alternative is a unit candidate
    unit_col: Option<usize>,
}

#[derive(Clone, Debug)]
enum LabelKind {
    Unit,
    Single,
    Argmin(usize),
}

fn build_group_model(solver: &mut Solver, units: &[Unit], group: &[usize]) -> GroupModel {
    let p = solver.p;
    let mut cols = Vec::new();
    let mut unit_cols = Vec::new();
    let mut unit_b = Vec::new();
    let mut touched: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut touched_cap: BTreeMap<usize, Rat> = BTreeMap::new();
    for (gi, &ui) in group.iter().enumerate() {
        let u = &units[ui];
        let mut mine = Vec::new();
        for (pos, &k) in u.cands.iter().enumerate() {
            cols.push((gi, pos));
            mine.push(cols.len() - 1);
            touched.entry(k).or_default().push(cols.len() - 1);
            *touched_cap.entry(k).or_insert_with(Rat::zero) += &u.b;
        }
        unit_cols.push(mine);
        unit_b.push(u.b.clone());
    }
    // overflow choices on touched uncongested edges; forced when decidable
    let mut z_edges = Vec::new();
    let mut z_slot: HashMap<usize, Option<usize>> = HashMap::new();
    let mut z_fixed_over: HashMap<usize, bool> = HashMap::new();
    for (&k, colset) in &touched {
        let e = &p.edges[k];
        if e.queue_positive {
            continue;
        }
        let room = &e.nu - &solver.fixed[k];
        if !room.is_positive() {
            z_fixed_over.insert(k, true);
            z_slot.insert(k, None);
        } else if touched_cap[&k] <= room {
            z_fixed_over.insert(k, false);
            z_slot.insert(k, None);
        } else {
            z_slot.insert(k, Some(z_edges.len()));
            z_edges.push((k, colset.clone(), room));
        }
    }
    // label variables: nodes downstream of a group unit that see a touched edge
    let classes: BTreeSet<usize> = group.iter().map(|&ui| units[ui].class).collect();
    let mut label_vars = Vec::new();
    let mut var_of: HashMap<(usize, usize), usize> = HashMap::new();
    let unit_at: HashMap<(usize, usize), usize> = group.iter().enumerate().map(|(gi, &ui)| ((units[ui].class, units[ui].node), gi)).collect();
    for &c in &classes {
        let view = &solver.views[c];
        let mut fwd = BTreeSet::new();
        let mut queue = VecDeque::new();
        for &ui in group {
            if units[ui].class == c && fwd.insert(units[ui].node) {
                queue.push_back(units[ui].node);
            }
        }
        while let Some(w) = queue.pop_front() {
            for &k in &view.out[w] {
                let h = p.edges[k].head;
                if fwd.insert(h) {
                    queue.push_back(h);
                }
            }
        }
        let mut bwd = BTreeSet::new();
        let mut queue = VecDeque::new();
        for &k in touched.keys() {
            if view.eff[k] && bwd.insert(p.edges[k].tail) {
                queue.push_back(p.edges[k].tail);
            }
        }
        while let Some(w) = queue.pop_front() {
            for &k in &view.inn[w] {
                let t = p.edges[k].tail;
                if bwd.insert(t) {
                    queue.push_back(t);
                }
            }
        }
        for w in fwd.intersection(&bwd) {
            var_of.insert((c, *w), label_vars.len());
            label_vars.push((c, *w));
        }
    }
    let mut label_rows = Vec::with_capacity(label_vars.len());
    let mut label_kind = Vec::with_capacity(label_vars.len());
    let mut argmin_slots = Vec::new();
    for &(c, w) in &label_vars {
        let outs = solver.views[c].out[w].clone();
        let mut alts = Vec::with_capacity(outs.len());
        for &k in &outs {
            let e = &p.edges[k];
            let (head_var, head_const) = match var_of.get(&(c, e.head)) {
                Some(&vi) => (Some(vi), Rat::zero()),
                None => (None, solver.label(c, e.head)),
            };
            let (g_lin, g_const) = match touched.get(&k) {
                Some(colset) => {
                    // g/ν = (fixed + Σx − ν)/ν when overflowing, else 0
                    let base = (&solver.fixed[k] - &e.nu) / &e.nu;
                    let scale = Rat::from_integer(1.into()) / &e.nu;
                    let slot = if e.queue_positive || z_fixed_over.get(&k) == Some(&true) {
                        None
                    } else if z_fixed_over.get(&k) == Some(&false) {
                        // never overflows: g = 0
                        alts.push(LabelAlt {
                            g_lin: None,
                            g_const: Rat::zero(),
                            head_var,
                            head_const,
                            unit_col: unit_col_for(&unit_at, &unit_cols, units, group, c, w, k),
                        });
                        continue;
                    } else {
                        z_slot[&k]
                    };
                    (Some((colset.clone(), scale, base, slot)), Rat::zero())
                }
                None => (None, solver.edge_term(k)),
            };
            alts.push(LabelAlt {
                g_lin,
                g_const,
                head_var,
                head_const,
                unit_col: unit_col_for(&unit_at, &unit_cols, units, group, c, w, k),
            });
        }
        let kind = if unit_at.contains_key(&(c, w)) {
            LabelKind::Unit
        } else if alts.len() == 1 {
            LabelKind::Single
        } else {
            argmin_slots.push(alts.len());
            LabelKind::Argmin(argmin_slots.len() - 1)
        };
        label_rows.push(alts);
        label_kind.push(kind);
    }
    GroupModel { cols, unit_cols, unit_b, z_edges, label_vars, label_rows, label_kind, argmin_slots }
}

fn unit_col_for(
    unit_at: &HashMap<(usize, usize), usize>,
    unit_cols: &[Vec<usize>],
    units: &[Unit],
    group: &[usize],
    c: usize,
    w: usize,
    k: usize,
) -> Option<usize> {
    let gi = *unit_at.get(&(c, w))?;
    let pos = units[group[gi]].cands.iter().position(|&x| x == k)?;
    Some(unit_cols[gi][pos])
}

impl GroupModel {
    fn radices(&self) -> Vec<usize> {
        let mut r = vec![2; self.cols.len() + self.z_edges.len()];
        r.extend(self.argmin_slots.iter().copied());
        r
    }

    fn decode(&self, mut idx: u64, radices: &[usize]) -> BinaryGuess {
        let mut digits = vec![0usize; radices.len()];
        for pos in (0..radices.len()).rev() {
            digits[pos] = (idx % radices[pos] as u64) as usize;
            idx /= radices[pos] as u64;
        }
        let ny = self.cols.len();
        let nz = self.z_edges.len();
        BinaryGuess {
            y: digits[..ny].iter().map(|d| *d == 1).collect(),
            z: digits[ny..ny + nz].iter().map(|d| *d == 0).collect(),
            argmin: digits[ny + nz..].to_vec(),
        }
    }

    /// Rates per group unit if the guess admits a solution.
    fn try_guess(&self, guess: &BinaryGuess) -> Option<Vec<Vec<Rat>>> {
        // every unit must keep at least one edge open
        for cols in &self.unit_cols {
            if cols.iter().all(|&c| guess.y[c]) {
                return None;
            }
        }
        // variable layout: open rate columns, then a⁺/a⁻ per label variable
        let mut var_of_col = vec![None; self.cols.len()];
        let mut nv = 0;
        for (c, slot) in var_of_col.iter_mut().enumerate() {
            if !guess.y[c] {
                *slot = Some(nv);
                nv += 1;
            }
        }
        let a_base = nv;
        nv += 2 * self.label_vars.len();
        let mut rows = Vec::new();
        for (cols, b) in self.unit_cols.iter().zip(&self.unit_b) {
            let coeffs: Vec<_> = cols.iter().filter_map(|&c| var_of_col[c].map(|v| (v, Rat::from_integer(1.into())))).collect();
            rows.push(Row { coeffs, rel: Rel::Eq, rhs: b.clone() });
        }
        for ((_, cols, room), within) in self.z_edges.iter().zip(&guess.z) {
            let coeffs: Vec<_> = cols.iter().filter_map(|&c| var_of_col[c].map(|v| (v, Rat::from_integer(1.into())))).collect();
            rows.push(Row { coeffs, rel: if *within { Rel::Le } else { Rel::Ge }, rhs: room.clone() });
        }
        let one = Rat::from_integer(1.into());
        for (li, alts) in self.label_rows.iter().enumerate() {
            for (ai, alt) in alts.iter().enumerate() {
                // a_w − g/ν − a_head  (rel)  const
                let mut coeffs = vec![(a_base + 2 * li, one.clone()), (a_base + 2 * li + 1, -one.clone())];
                let mut rhs = alt.head_const.clone() + &alt.g_const;
                if let Some(h) = alt.head_var {
                    coeffs.push((a_base + 2 * h, -one.clone()));
                    coeffs.push((a_base + 2 * h + 1, one.clone()));
                }
                if let Some((cols, scale, base, slot)) = &alt.g_lin {
                    let active = match slot {
                        None => true,
                        Some(s) => !guess.z[*s],
                    };
                    if active {
                        for &c in cols {
                            if let Some(v) = var_of_col[c] {
                                coeffs.push((v, -scale.clone()));
                            }
                        }
                        rhs += base;
                    }
                }
                let tight = match self.label_kind[li] {
                    LabelKind::Unit => alt.unit_col.is_some_and(|c| !guess.y[c]),
                    LabelKind::Single => true,
                    LabelKind::Argmin(s) => guess.argmin[s] == ai,
                };
                rows.push(Row { coeffs, rel: if tight { Rel::Eq } else { Rel::Le }, rhs });
            }
        }
        let sol = feasible_point(nv, &rows)?;
        let mut out: Vec<Vec<Rat>> = self.unit_cols.iter().map(|c| vec![Rat::zero(); c.len()]).collect();
        for (c, &(gi, pos)) in self.cols.iter().enumerate() {
            if let Some(v) = var_of_col[c] {
                out[gi][pos] = sol[v].clone();
            }
        }
        Some(out)
    }
}

fn solve_group(solver: &mut Solver, units: &[Unit], group: &[usize], cfg: &ThinFlowConfig) -> Result<Vec<Vec<Rat>>, ThinFlowError> {
    let model = build_group_model(solver, units, group);
    let radices = model.radices();
    let bits: u32 = radices.iter().map(|&r| usize::BITS - (r - 1).leading_zeros()).sum();
    if bits > cfg.binary_cap {
        return Err(ThinFlowError::CapExceeded { needed: bits, cap: cfg.binary_cap });
    }
    let total: u64 = radices.iter().map(|&r| r as u64).product();
    let found = (0..total).into_par_iter().find_map_first(|idx| model.try_guess(&model.decode(idx, &radices)));
    found.ok_or_else(|| {
        let nodes: Vec<String> = group.iter().map(|&ui| format!("class {} node {}", units[ui].class, units[ui].node)).collect();
        ThinFlowError::NoSolution(format!("no feasible guess for group [{}]", nodes.join(", ")))
    })
}

/// Check TF1–TF5 exactly.
pub fn check_thinflow(p: &ThinFlowProblem, tf: &ThinFlow) -> Verdict {
    let mut verdict = Verdict::default();
    let n_edges = p.edges.len();
    let totals = tf.edge_totals(n_edges);
    let views: Vec<ClassView> = p.classes.iter().map(|c| class_view(p, c)).collect();
    let loc = |k: usize| format!("edge {k}");

    // nonnegativity and TF2
    let mut nonneg = None;
    let mut tf2 = None;
    for ((i, k), r) in &tf.x {
        if r.is_negative() && nonneg.is_none() {
            nonneg = Some(Witness::new(Some(i.to_string()), loc(*k), None, r.clone(), Rat::zero()));
        }
        if !r.is_zero() && !p.classes[p.commodities[*i].class].active[*k] && tf2.is_none() {
            tf2 = Some(Witness::new(Some(i.to_string()), loc(*k), None, r.clone(), Rat::zero()));
        }
    }
    verdict.record("nonnegative", nonneg);
    verdict.record("TF2", tf2);

    // TF1
    let mut tf1 = None;
    'outer: for (i, com) in p.commodities.iter().enumerate() {
        let sink = p.classes[com.class].sink;
        let mut out = vec![Rat::zero(); p.n_nodes];
        for ((j, k), r) in tf.x.range((i, 0)..(i + 1, 0)) {
            debug_assert_eq!(*j, i);
            out[p.edges[*k].tail] += r;
        }
        for v in 0..p.n_nodes {
            if v == sink {
                continue;
            }
            let b = com.demand.get(&v).cloned().unwrap_or_else(Rat::zero);
            if out[v] != b {
                tf1 = Some(Witness::new(Some(i.to_string()), format!("node {v}"), None, out[v].clone(), b));
                break 'outer;
            }
        }
    }
    verdict.record("TF1", tf1);

    // TF3 and TF4 per class
    let mut tf3 = None;
    let mut tf4 = None;
    for (c, class) in p.classes.iter().enumerate() {
        let a = &tf.a[c];
        if a[class.sink].as_ref().map_or(true, |v| !v.is_zero()) && tf3.is_none() {
            tf3 = Some(Witness::new(
                None,
                format!("class {c} sink {}", class.sink),
                None,
                a[class.sink].clone().unwrap_or_else(Rat::zero),
                Rat::zero(),
            ));
        }
        for v in 0..p.n_nodes {
            if v == class.sink || !views[c].reach[v] || tf4.is_some() {
                continue;
            }
            let Some(av) = &a[v] else {
                tf4 = Some(Witness::new(None, format!("class {c} node {v} missing label"), None, Rat::zero(), Rat::zero()));
                continue;
            };
            let mut best: Option<Rat> = None;
            for &k in &views[c].out[v] {
                let e = &p.edges[k];
                let Some(aw) = &a[e.head] else { continue };
                let alt = g_eval(&e.nu, &totals[k], e.queue_positive) / &e.nu + aw;
                if best.as_ref().map_or(true, |b| alt < *b) {
                    best = Some(alt);
                }
            }
            if best.as_ref() != Some(av) {
                tf4 = Some(Witness::new(None, format!("class {c} node {v}"), None, av.clone(), best.unwrap_or_else(Rat::zero)));
            }
        }
    }
    verdict.record("TF3", tf3);
    verdict.record("TF4", tf4);

    // TF5
    let mut tf5 = None;
    for ((i, k), r) in &tf.x {
        if !r.is_positive() {
            continue;
        }
        let c = p.commodities[*i].class;
        let e = &p.edges[*k];
        let (Some(av), Some(aw)) = (&tf.a[c][e.tail], &tf.a[c][e.head]) else {
            tf5 = Some(Witness::new(Some(i.to_string()), loc(*k), None, r.clone(), Rat::zero()));
            break;
        };
        let rhs = g_eval(&e.nu, &totals[*k], e.queue_positive) / &e.nu + aw;
        if *av != rhs {
            tf5 = Some(Witness::new(Some(i.to_string()), loc(*k), None, av.clone(), rhs));
            break;
        }
    }
    verdict.record("TF5", tf5);
    verdict
}
