//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

mod common;

use std::cmp::Reverse;
use std::collections::{BTreeSet, BinaryHeap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use common::*;
use ideflow_core::engine::{detect_periodicity, simulate, EngineConfig, Outcome, SimulationReport};
use ideflow_core::flowstate::{volumes, FlowTrace};
use ideflow_core::instances::{
    gen_example3, gen_fig2, gen_gadget_graph, gen_gadget_smoke, gen_nonuniqueness, gen_random, GadgetKind, SMOKE_PERIODS,
};
use ideflow_core::network::Instance;
use ideflow_core::numerics::{fmt_rat, int, rat, PwlFunction, Rat, StepFunction};
use ideflow_core::thinflow::{check_thinflow, solve_thinflow, ThinFlowConfig};
use ideflow_core::verify::{verify_feasible, verify_ide, verify_termination, Verdict};
use ideflow_core::waterfill::{opt_objective, waterfill, HFunc};
use num_traits::{ToPrimitive, Zero};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Res = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn inflow_rate(inst: &Instance, trace: &FlowTrace, com: &str, edge: &str, t: &Rat) -> Rat {
    let key = (inst.commodity_index(com).unwrap(), inst.edge_index(edge).unwrap());
    trace.inflows.get(&key).map(|f| f.eval(t).clone()).unwrap_or_else(Rat::zero)
}

/// Value of `com` on `edge` if it is constant on `[a, b)`.
fn constant_inflow(inst: &Instance, trace: &FlowTrace, com: &str, edge: &str, a: &Rat, b: &Rat) -> Option<Rat> {
    let key = (inst.commodity_index(com).unwrap(), inst.edge_index(edge).unwrap());
    let f = trace.inflows.get(&key).cloned().unwrap_or_else(StepFunction::zero);
    let pieces = f.pieces(a, b);
    (pieces.len() == 1).then(|| pieces[0].2.clone())
}

fn queue(inst: &Instance, trace: &FlowTrace, edge: &str, t: &Rat) -> Rat {
    trace.queues[inst.edge_index(edge).unwrap()].eval(t)
}

fn full_verdict(inst: &Instance, trace: &FlowTrace) -> Verdict {
    let mut v = verify_feasible(inst, trace);
    v.merge(verify_ide(inst, trace));
    v
}

fn failing_ids(v: &Verdict) -> String {
    v.failures().map(|c| c.id.clone()).collect::<Vec<_>>().join(",")
}

fn within(elapsed: Duration, limit_secs: f64, what: &str) -> Result<(), String> {
    ensure(elapsed.as_secs_f64() < limit_secs, || format!("{what} took {:.2}s, limit {limit_secs}s", elapsed.as_secs_f64()))
}

fn criterion_fig2() -> Res {
    let inst = gen_fig2();
    let start = Instant::now();
    let rep = simulate(&inst, &EngineConfig::new(int(3))).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let tr = &rep.trace;
    let (z, one, two, three) = (int(0), int(1), int(2), int(3));
    let split0 = (
        constant_inflow(&inst, tr, "1", "s1t", &z, &one),
        constant_inflow(&inst, tr, "1", "s1v", &z, &one),
    );
    ensure(split0 == (Some(int(1)), Some(int(2))), || format!("split on [0,1) is {split0:?}"))?;
    ensure(queue(&inst, tr, "s2t", &two) == int(3), || "q_s2t(2) != 3".into())?;
    let split2 = (
        constant_inflow(&inst, tr, "1", "s2t", &two, &three),
        constant_inflow(&inst, tr, "1", "s2s1", &two, &three),
    );
    ensure(split2 == (Some(int(1)), Some(int(1))), || format!("split at s2 on [2,3) is {split2:?}"))?;
    let q = &tr.queues[inst.edge_index("s2t").unwrap()];
    ensure(q.slope_at(&two).is_zero() && q.breakpoints().iter().all(|b| *b <= two || *b >= three), || {
        "q_s2t not constant on [2,3)".into()
    })?;
    within(elapsed, 1.0, "simulation")?;
    Ok(format!("{:.3}s", elapsed.as_secs_f64()))
}

fn criterion_example3() -> Res {
    let inst = gen_example3();
    let start = Instant::now();
    let rep = simulate(&inst, &EngineConfig::new(int(100))).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let tr = &rep.trace;
    let bounds: BTreeSet<Rat> = tr.phases.iter().flat_map(|p| [p.start.clone(), p.end.clone()]).collect();
    for b in [int(0), int(1), int(2), rat(5, 2), rat(7, 2), int(4), rat(9, 2), int(5)] {
        ensure(bounds.contains(&b), || format!("missing phase boundary {}", fmt_rat(&b)))?;
    }
    let expect = [
        ("st", int(0), int(2)),
        ("sv", int(0), int(14)),
        ("wt", rat(5, 2), int(1)),
        ("ws", rat(5, 2), int(6)),
        ("wt", rat(7, 2), int(6)),
        ("ws", rat(7, 2), int(1)),
        ("st", rat(9, 2), int(0)),
        ("sv", rat(9, 2), int(1)),
    ];
    for (e, t, v) in expect {
        let got = inflow_rate(&inst, tr, "1", e, &t);
        ensure(got == v, || format!("f+_{e}({}) = {}, expected {}", fmt_rat(&t), fmt_rat(&got), fmt_rat(&v)))?;
    }
    for (e, t, v) in [("st", int(1), int(1)), ("sv", int(1), int(7)), ("wt", int(3), int(3))] {
        let got = queue(&inst, tr, e, &t);
        ensure(got == v, || format!("q_{e}({}) = {}", fmt_rat(&t), fmt_rat(&got)))?;
    }
    let Outcome::Terminated(end) = &rep.outcome else {
        return Err(format!("outcome {:?}", rep.outcome));
    };
    let vol = volumes(&inst, tr, end).map_err(|e| e.to_string())?;
    ensure(vol.gamma.is_zero() && vol.arrived == int(16), || {
        format!("at {}: gamma {} arrived {}", fmt_rat(end), fmt_rat(&vol.gamma), fmt_rat(&vol.arrived))
    })?;
    within(elapsed, 1.0, "simulation")?;
    Ok(format!("terminated at {}, {:.3}s", fmt_rat(end), elapsed.as_secs_f64()))
}

/// Volume on edges at every phase boundary from `from` on.
fn gamma_values(inst: &Instance, rep: &SimulationReport, from: &Rat) -> BTreeSet<Rat> {
    rep.trace
        .phases
        .iter()
        .flat_map(|p| [p.start.clone(), p.end.clone()])
        .filter(|t| t >= from)
        .map(|t| volumes(inst, &rep.trace, &t).unwrap().gamma)
        .collect()
}

/// Volume of commodity `com` that has reached its sink by `t`.
fn arrived(inst: &Instance, trace: &FlowTrace, com: usize, t: &Rat) -> Rat {
    let sink = inst.commodities[com].sink;
    trace
        .outflows
        .iter()
        .filter(|((i, e), _)| *i == com && inst.edges[*e].head == sink)
        .map(|(_, f)| f.integral_to(t))
        .sum()
}

fn criterion_two_sink(store: &mut Vec<(Instance, FlowTrace)>) -> Res {
    // warm-up: inflows stop at 5, one more period to settle, then three periods
    let inst = gen_gadget_graph(GadgetKind::TwoSink);
    let (from, horizon) = (int(10), int(30));
    let cfg = EngineConfig::new(horizon.clone());
    let start = Instant::now();
    let rep = simulate(&inst, &cfg).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(rep.outcome == Outcome::HorizonReached, || format!("outcome {:?}", rep.outcome))?;
    let gammas = gamma_values(&inst, &rep, &inst.inflow_end());
    ensure(gammas.len() == 1, || format!("gamma not constant after inflows stop: {gammas:?}"))?;
    let period = detect_periodicity(&rep.trace, &from, &int(10)).map(|p| p.period);
    ensure(period == Some(int(5)), || format!("period {period:?}"))?;
    within(elapsed, 60.0, "full gadget")?;

    // smoke variant
    let smoke = gen_gadget_smoke(SMOKE_PERIODS);
    let cfg = EngineConfig::new(int(25));
    let s0 = Instant::now();
    let srep = simulate(&smoke, &cfg).map_err(|e| e.to_string())?;
    let s_elapsed = s0.elapsed();
    let a = smoke.commodity_index("A").unwrap();
    ensure(arrived(&smoke, &srep.trace, a, &int(25)).is_zero(), || "gadget commodity reached its sink".into())?;
    let speriod = detect_periodicity(&srep.trace, &int(10), &int(5)).map(|p| p.period);
    ensure(speriod == Some(int(5)), || format!("smoke period {speriod:?}"))?;
    within(s_elapsed, 1.0, "smoke variant")?;
    let g = gammas.into_iter().next().unwrap();
    store.push((inst, rep.trace));
    store.push((smoke, srep.trace));
    Ok(format!(
        "period 5 from 10, gamma {} after inflows stop, {:.2}s; smoke {:.3}s",
        fmt_rat(&g),
        elapsed.as_secs_f64(),
        s_elapsed.as_secs_f64()
    ))
}

/// Integer Dijkstra over transit times.
fn transit_distance(inst: &Instance, from: usize, to: usize) -> Option<i64> {
    let mut dist: Vec<Option<i64>> = vec![None; inst.nodes.len()];
    let mut heap = BinaryHeap::from([Reverse((0i64, from))]);
    while let Some(Reverse((d, v))) = heap.pop() {
        if dist[v].is_some() {
            continue;
        }
        dist[v] = Some(d);
        for &k in &inst.out_edges[v] {
            let e = &inst.edges[k];
            assert!(e.tau.is_integer());
            heap.push(Reverse((d + e.tau.to_integer().to_i64().unwrap(), e.head)));
        }
    }
    dist[to]
}

fn criterion_single_source(store: &mut Vec<(Instance, FlowTrace)>) -> Res {
    let inst = gen_gadget_graph(GadgetKind::SingleSource);
    // the w→sink queues drain by θ = 60; three periods after that
    let (from, horizon) = (int(60), int(75));
    let cfg = EngineConfig::new(horizon);
    let start = Instant::now();
    let rep = simulate(&inst, &cfg).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let tr = &rep.trace;
    let mut checked = 0;
    for (w, name) in inst.nodes.iter().enumerate().filter(|(_, n)| n.starts_with("W.")) {
        let outs = &inst.out_edges[w];
        let to_sink = *outs.iter().find(|&&k| ["t", "t'"].contains(&inst.nodes[inst.edges[k].head].as_str())).unwrap();
        let to_start = *outs.iter().find(|&&k| k != to_sink).unwrap();
        let sink = inst.edges[to_sink].head;
        let s_tilde = inst.edges[to_start].head;
        let tau_p = transit_distance(&inst, s_tilde, sink).ok_or_else(|| format!("{name}: no path into the gadget"))?;
        let q = tr.queues[to_sink].eval(&int(3));
        ensure(q == int(tau_p + 1), || format!("{name}: queue at 3 is {}, expected {}", fmt_rat(&q), tau_p + 1))?;
        let mut total = StepFunction::zero();
        for ((_, e), f) in &tr.outflows {
            if *e == to_start {
                total = total.add(f);
            }
        }
        let pieces = total.pieces(&int(5), &int(6));
        ensure(pieces.len() == 1 && pieces[0].2 == int(2), || format!("{name}: arrival at s~ on [5,6) is {pieces:?}"))?;
        checked += 1;
    }
    ensure(checked == 270, || format!("found {checked} gadget commodities"))?;
    ensure(rep.outcome == Outcome::HorizonReached, || format!("outcome {:?}", rep.outcome))?;
    let gammas = gamma_values(&inst, &rep, &from);
    ensure(gammas.len() == 1, || format!("gamma not constant after {}: {gammas:?}", fmt_rat(&from)))?;
    let period = detect_periodicity(tr, &from, &int(5)).map(|p| p.period);
    ensure(period == Some(int(5)), || format!("period {period:?}"))?;
    let g = gammas.into_iter().next().unwrap();
    store.push((inst, rep.trace));
    Ok(format!("checkpoints at 3 and [5,6) hold, period 5 from 60 with gamma {}, {:.2}s", fmt_rat(&g), elapsed.as_secs_f64()))
}

fn mutate(trace: &FlowTrace, rng: &mut ChaCha8Rng) -> (FlowTrace, String) {
    let mut t = trace.clone();
    let h = trace.horizon.clone();
    let delta = [rat(1, 4), rat(1, 2), int(1), int(2)].choose(rng).unwrap().clone();
    // a random sub-interval [a, b) of [0, horizon) on the quarter grid
    let n = (&h * int(4)).to_integer().to_i64().unwrap();
    let a0 = rng.gen_range(0..n);
    let b0 = rng.gen_range(a0 + 1..=n.min(a0 + 8));
    let (a, b) = (rat(a0, 4), rat(b0, 4));
    match rng.gen_range(0..3) {
        0 | 1 => {
            let map = if rng.gen_bool(0.5) { &mut t.inflows } else { &mut t.outflows };
            let keys: Vec<_> = map.keys().cloned().collect();
            let key = *keys.choose(rng).unwrap();
            let f = map.get_mut(&key).unwrap();
            *f = f.add(&StepFunction::indicator(a.clone(), b.clone(), delta.clone()));
            (t, format!("rate of {key:?} + {} on [{}, {})", fmt_rat(&delta), fmt_rat(&a), fmt_rat(&b)))
        }
        _ => {
            let k = rng.gen_range(0..t.queues.len());
            let mid = (&a + &b) / int(2);
            let slope = &delta / (&mid - &a);
            let tent = PwlFunction::from_parts(vec![
                (a.clone(), Rat::zero(), slope.clone()),
                (mid.clone(), delta.clone(), -slope),
                (b.clone(), Rat::zero(), Rat::zero()),
            ])
            .unwrap();
            t.queues[k] = t.queues[k].add(&tent);
            (t, format!("queue {k} + tent {} on [{}, {})", fmt_rat(&delta), fmt_rat(&a), fmt_rat(&b)))
        }
    }
}

fn criterion_verifier(store: &[(Instance, FlowTrace)]) -> Res {
    let mut traces: Vec<(String, Instance, FlowTrace)> = Vec::new();
    for (name, inst) in [("fig2", gen_fig2()), ("example3", gen_example3()), ("nonuniqueness", gen_nonuniqueness())] {
        let rep = simulate(&inst, &EngineConfig::new(int(100))).map_err(|e| e.to_string())?;
        traces.push((name.into(), inst, rep.trace));
    }
    for (k, (inst, tr)) in store.iter().enumerate() {
        traces.push((format!("stored trace {k}"), inst.clone(), tr.clone()));
    }
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let p = if seed % 2 == 0 { single_sink_params(&mut rng, false) } else { multi_sink_acyclic_params(&mut rng) };
        let inst = gen_random(seed, p).unwrap();
        let rep = simulate(&inst, &EngineConfig::new(int(1000))).map_err(|e| e.to_string())?;
        traces.push((format!("random {seed}"), inst, rep.trace));
    }
    for (name, inst, tr) in &traces {
        let v = full_verdict(inst, tr);
        ensure(v.pass(), || format!("{name} fails {}", failing_ids(&v)))?;
    }
    let (_, inst, base) = &traces[1];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for m in 0..100 {
        let (mutated, what) = mutate(base, &mut rng);
        let v = full_verdict(inst, &mutated);
        ensure(!v.pass(), || format!("mutation {m} ({what}) passes all checks"))?;
    }
    Ok(format!("{} traces pass, 100/100 mutations rejected", traces.len()))
}

/// Exact grid minimum of the objective over `z_i = k_i/32`, `Σ z_i = b`,
/// scaled to integers. Requires quarter-valued `β`, `γ`, `α`.
fn grid_minimum(b: &Rat, hs: &[HFunc]) -> Rat {
    let q = |r: &Rat| -> i128 {
        let v = r * int(4);
        assert!(v.is_integer());
        v.to_integer().to_i128().unwrap()
    };
    let lcm = hs.iter().map(|h| q(&h.alpha)).fold(1i128, |acc, a| acc / gcd(acc, a) * a);
    // term·512·lcm = 4·B·k·lcm + (k − 8G)⁺²·lcm/A with β = B/4, γ = G/4, α = A/4, z = k/32
    let total = (b * int(32)).to_integer().to_i64().unwrap() as usize;
    let tables: Vec<Vec<i128>> = hs
        .iter()
        .map(|h| {
            let (bb, g, a) = (q(&h.beta), q(&h.gamma), q(&h.alpha));
            (0..=total as i128)
                .map(|k| {
                    let over = (k - 8 * g).max(0);
                    4 * bb * k * lcm + over * over * (lcm / a)
                })
                .collect()
        })
        .collect();
    fn rec(tables: &[Vec<i128>], left: usize, acc: i128, best: &mut i128) {
        if tables.len() == 1 {
            *best = (*best).min(acc + tables[0][left]);
            return;
        }
        for k in 0..=left {
            rec(&tables[1..], left - k, acc + tables[0][k], best);
        }
    }
    let mut best = i128::MAX;
    rec(&tables, total, 0, &mut best);
    Rat::new(best.into(), (512 * lcm).into())
}

fn gcd(a: i128, b: i128) -> i128 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

fn criterion_waterfill() -> Res {
    for seed in 0..500u64 {
        let (b, hs) = random_hfuncs(seed);
        let split = waterfill(&b, &hs).ok_or("empty edge list")?;
        if let Some(v) = kkt_violation(&b, &hs, &split.z, &split.level) {
            return Err(format!("seed {seed}: {v}"));
        }
        let obj = opt_objective(&hs, &split.z);
        let grid = grid_minimum(&b, &hs);
        ensure(obj <= grid, || format!("seed {seed}: objective {} above grid minimum {}", fmt_rat(&obj), fmt_rat(&grid)))?;
    }
    Ok("500 sets: KKT exact, objective at or below the 1/32 grid".into())
}

fn criterion_thinflow() -> Res {
    let mut single = 0;
    for seed in 0..200u64 {
        let single_sink = seed % 2 == 0;
        let p = random_thinflow_problem(seed, single_sink);
        let tf = solve_thinflow(&p, &ThinFlowConfig::default()).map_err(|e| format!("seed {seed}: {e}"))?;
        let v = check_thinflow(&p, &tf);
        ensure(v.pass(), || format!("seed {seed}: solver output fails {}", failing_ids(&v)))?;
        if p.classes.len() == 1 {
            let wf = waterfill_solution(&p);
            let v = check_thinflow(&p, &wf);
            ensure(v.pass(), || format!("seed {seed}: water-filling fails {}", failing_ids(&v)))?;
            single += 1;
        }
    }
    Ok(format!("200 problems pass, {single} single-sink cross-checked"))
}

fn criterion_termination() -> Res {
    let mut max_phases = 0;
    for (family, base) in [("single-sink", 0u64), ("acyclic multi-sink", 10_000)] {
        for s in 0..100 {
            let seed = base + s;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = if base == 0 {
                let acyclic = rng.gen_bool(0.5);
                single_sink_params(&mut rng, acyclic)
            } else {
                multi_sink_acyclic_params(&mut rng)
            };
            let inst = gen_random(seed, p).unwrap();
            let mut cfg = EngineConfig::new(int(1_000_000));
            cfg.max_phases = 10_000;
            let rep = simulate(&inst, &cfg).map_err(|e| format!("{family} seed {seed}: {e}"))?;
            let Outcome::Terminated(end) = &rep.outcome else {
                return Err(format!("{family} seed {seed}: {:?}", rep.outcome));
            };
            let cert = rep.certificate.as_ref().ok_or_else(|| format!("{family} seed {seed}: no certificate"))?;
            ensure(cert.time <= *end, || format!("{family} seed {seed}: certificate after termination"))?;
            let v = verify_termination(&inst, &rep.trace, end);
            ensure(v.pass(), || format!("{family} seed {seed}: termination check fails {}", failing_ids(&v)))?;
            let vol = volumes(&inst, &rep.trace, end).map_err(|e| e.to_string())?;
            ensure(vol.gamma.is_zero() && vol.arrived == vol.injected, || format!("{family} seed {seed}: not empty"))?;
            max_phases = max_phases.max(rep.trace.phases.len());
        }
    }
    Ok(format!("200 runs terminate with certificates, at most {max_phases} phases"))
}

fn criterion_determinism() -> Res {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let p = multi_sink_acyclic_params(&mut rng);
    let cases = [
        ("fig2", gen_fig2(), int(3)),
        ("example3", gen_example3(), int(20)),
        ("smoke", gen_gadget_smoke(SMOKE_PERIODS), int(25)),
        ("random", gen_random(9, p).unwrap(), int(100)),
    ];
    for (name, inst, h) in cases {
        let cfg = EngineConfig::new(h);
        let a = simulate(&inst, &cfg).map_err(|e| e.to_string())?;
        let b = simulate(&inst, &cfg).map_err(|e| e.to_string())?;
        ensure(a.trace.to_json(&inst) == b.trace.to_json(&inst), || format!("{name}: traces differ"))?;
        ensure(a.to_json_value(&inst) == b.to_json_value(&inst), || format!("{name}: reports differ"))?;
    }
    Ok("repeated runs give byte-identical traces".into())
}

fn run(n: usize, name: &str, f: impl FnOnce() -> Res) -> bool {
    let res = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panic: {}", msg.unwrap_or_default()))
    });
    match res {
        Ok(detail) => {
            println!("PASS criterion {n} ({name}): {detail}");
            true
        }
        Err(why) => {
            println!("FAIL criterion {n} ({name}): {why}");
            false
        }
    }
}

fn main() {
    let mut store = Vec::new();
    let results = [
        run(1, "two-commodity example", criterion_fig2),
        run(2, "single-commodity cycling example", criterion_example3),
        run(3, "non-terminating two-sink gadget", || criterion_two_sink(&mut store)),
        run(4, "single-source variant", || criterion_single_source(&mut store)),
        run(5, "verifier soundness", || criterion_verifier(&store)),
        run(6, "water-filling optimality", criterion_waterfill),
        run(7, "thin-flow correctness", criterion_thinflow),
        run(8, "termination with certificates", criterion_termination),
        run(9, "determinism", criterion_determinism),
    ];
    let passed = results.iter().filter(|r| **r).count();
    println!("{passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
