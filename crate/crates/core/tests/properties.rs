mod common;

use common::*;
use ideflow_core::engine::{simulate, EngineConfig, Mode, Outcome};
use ideflow_core::flowstate::volumes;
use ideflow_core::instances::gen_random;
use ideflow_core::labels::{compute_labels, instantaneous_cost};
use ideflow_core::numerics::{fmt_rat, int, parse_rat, rat, Ext, PwlFunction, Rat, StepFunction};
use ideflow_core::thinflow::{check_thinflow, solve_thinflow, Strategy as Search, ThinFlow, ThinFlowConfig};
use ideflow_core::verify::{verify_feasible, verify_ide, verify_termination};
use ideflow_core::waterfill::{opt_objective, waterfill};
use num_integer::Integer;
use num_traits::{Signed, Zero};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small_rat() -> impl Strategy<Value = Rat> {
    (-64i64..64, 1i64..16).prop_map(|(n, d)| rat(n, d))
}

fn boxes() -> impl Strategy<Value = Vec<(Rat, Rat, Rat)>> {
    prop::collection::vec((0i64..16, 1i64..8, 0i64..16), 0..6)
        .prop_map(|v| v.into_iter().map(|(a, l, r)| (rat(a, 2), rat(a + l, 2), rat(r, 4))).collect())
}

proptest! {
    #[test]
    fn rationals_stay_reduced_and_round_trip(r in small_rat()) {
        prop_assert!(r.denom().is_positive());
        prop_assert_eq!(r.numer().gcd(r.denom()), num_bigint::BigInt::from(1));
        prop_assert_eq!(parse_rat(&fmt_rat(&r)).unwrap(), r);
    }

    #[test]
    fn step_functions_are_canonical(a in boxes(), b in boxes()) {
        let f = StepFunction::from_segments(a).unwrap();
        let g = StepFunction::from_segments(b).unwrap();
        let h = f.add(&g);
        for s in [&f, &g, &h] {
            prop_assert!(s.breakpoints().windows(2).all(|w| w[0] < w[1]));
            // no breakpoint without a change of value
            let mut prev = s.default_value().clone();
            for v in s.values() {
                prop_assert!(*v != prev);
                prev = v.clone();
            }
        }
        let t = int(20);
        prop_assert_eq!(h.integral_to(&t), f.integral_to(&t) + g.integral_to(&t));
    }

    #[test]
    fn integrals_are_continuous(a in boxes(), b in boxes()) {
        let f = StepFunction::from_segments(a).unwrap().integrate();
        let g = StepFunction::from_segments(b).unwrap().integrate();
        let h: PwlFunction = f.sub(&g);
        let (bs, vs, ss) = (h.breakpoints(), h.values(), h.slopes());
        for k in 0..bs.len().saturating_sub(1) {
            prop_assert_eq!(&vs[k + 1], &(&vs[k] + &ss[k] * (&bs[k + 1] - &bs[k])));
            prop_assert!(ss[k] != ss[k + 1]);
        }
    }

    #[test]
    fn waterfill_split_satisfies_kkt(seed in any::<u64>()) {
        let (b, hs) = random_hfuncs(seed);
        let split = waterfill(&b, &hs).unwrap();
        prop_assert_eq!(kkt_violation(&b, &hs, &split.z, &split.level), None);
    }

    #[test]
    fn waterfill_beats_random_feasible_points(seed in any::<u64>(), cuts in prop::collection::vec(0u32..=64, 3)) {
        let (b, hs) = random_hfuncs(seed);
        let split = waterfill(&b, &hs).unwrap();
        // a random point of the simplex from sorted cut positions
        let mut c: Vec<Rat> = cuts.iter().take(hs.len() - 1).map(|k| &b * rat(*k as i64, 64)).collect();
        c.sort();
        let mut z = Vec::new();
        let mut prev = Rat::zero();
        for x in c.iter().chain(std::iter::once(&b)) {
            z.push(x - &prev);
            prev = x.clone();
        }
        prop_assert!(opt_objective(&hs, &split.z) <= opt_objective(&hs, &z));
    }

    #[test]
    fn labels_satisfy_bellman_equations(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = single_sink_params(&mut rng, false);
        let inst = gen_random(seed, p).unwrap();
        let queues: Vec<Rat> = inst.edges.iter().map(|_| quarter(&mut rng, 0, 8)).collect();
        let sink = inst.commodities[0].sink;
        let snap = compute_labels(&inst, &queues, sink, Rat::zero());
        // Bellman-Ford oracle
        let mut d: Vec<Option<Rat>> = vec![None; inst.nodes.len()];
        d[sink] = Some(Rat::zero());
        for _ in 0..inst.nodes.len() {
            for (e, q) in inst.edges.iter().zip(&queues) {
                if let Some(dh) = d[e.head].clone() {
                    let cand = dh + instantaneous_cost(e, q);
                    if d[e.tail].as_ref().map_or(true, |cur| cand < *cur) {
                        d[e.tail] = Some(cand);
                    }
                }
            }
        }
        for v in 0..inst.nodes.len() {
            prop_assert_eq!(snap.labels[v].clone(), d[v].clone().map_or(Ext::Inf, Ext::Fin));
        }
        for (k, (e, q)) in inst.edges.iter().zip(&queues).enumerate() {
            let tight = match (&d[e.tail], &d[e.head]) {
                (Some(lv), Some(lw)) => e.tail != sink && *lv == lw + instantaneous_cost(e, q),
                _ => false,
            };
            prop_assert_eq!(snap.active[k], tight);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn thin_flows_pass_their_check(seed in any::<u64>()) {
        let p = random_thinflow_problem(seed, false);
        let tf = solve_thinflow(&p, &ThinFlowConfig::default()).unwrap();
        let verdict = check_thinflow(&p, &tf);
        prop_assert!(verdict.pass(), "{:?}", verdict.failures().collect::<Vec<_>>());
    }

    #[test]
    fn strategies_both_give_valid_thin_flows(seed in any::<u64>()) {
        let p = random_thinflow_problem(seed, false);
        let cfg = ThinFlowConfig { strategy: Search::Monolithic, ..ThinFlowConfig::default() };
        let tf = solve_thinflow(&p, &cfg).unwrap();
        prop_assert!(check_thinflow(&p, &tf).pass());
    }

    #[test]
    fn thin_flows_scale_with_demand_and_capacity(seed in any::<u64>(), k in 1i64..5) {
        let p = random_thinflow_problem(seed, false);
        let tf = solve_thinflow(&p, &ThinFlowConfig::default()).unwrap();
        let c = rat(k, 2);
        let mut scaled = p.clone();
        for e in &mut scaled.edges {
            e.nu *= &c;
        }
        for com in &mut scaled.commodities {
            for d in com.demand.values_mut() {
                *d *= &c;
            }
        }
        // slopes are invariant, rates scale
        let moved = ThinFlow { x: tf.x.iter().map(|(key, r)| (*key, r * &c)).collect(), a: tf.a.clone() };
        prop_assert!(check_thinflow(&scaled, &moved).pass());
        let direct = solve_thinflow(&scaled, &ThinFlowConfig::default()).unwrap();
        prop_assert!(check_thinflow(&scaled, &direct).pass());
    }

    #[test]
    fn single_sink_waterfill_is_a_thin_flow(seed in any::<u64>()) {
        let p = random_thinflow_problem(seed, true);
        let wf = waterfill_solution(&p);
        prop_assert!(check_thinflow(&p, &wf).pass());
        // slopes of a single-sink thin flow are unique
        let tf = solve_thinflow(&p, &ThinFlowConfig::default()).unwrap();
        prop_assert_eq!(&tf.a, &wf.a);
    }
}

fn assert_terminates(seed: u64, acyclic_multi: bool, mode: Mode) -> Result<(), TestCaseError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = if acyclic_multi {
        multi_sink_acyclic_params(&mut rng)
    } else {
        let acyclic = rng.gen_bool(0.5);
        single_sink_params(&mut rng, acyclic)
    };
    let inst = gen_random(seed, params).unwrap();
    let mut cfg = EngineConfig::new(int(10_000));
    cfg.max_phases = 10_000;
    cfg.mode = mode;
    let rep = simulate(&inst, &cfg).unwrap();
    let Outcome::Terminated(t) = rep.outcome.clone() else {
        return Err(TestCaseError::fail(format!("seed {seed}: {:?}", rep.outcome)));
    };
    prop_assert!(rep.gamma_end.is_zero());
    prop_assert!(verify_feasible(&inst, &rep.trace).pass());
    prop_assert!(verify_ide(&inst, &rep.trace).pass());
    prop_assert!(verify_termination(&inst, &rep.trace, &t).pass());
    // total volume on edges never grows once inflows have stopped
    let end = inst.inflow_end();
    let mut prev: Option<Rat> = None;
    for ph in rep.trace.phases.iter().filter(|ph| ph.start >= end) {
        let g = volumes(&inst, &rep.trace, &ph.end).unwrap().gamma;
        let g0 = volumes(&inst, &rep.trace, &ph.start).unwrap().gamma;
        prop_assert!(g <= g0);
        if let Some(p) = &prev {
            prop_assert!(g0 <= *p);
        }
        prev = Some(g);
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn single_sink_flows_terminate(seed in any::<u64>()) {
        assert_terminates(seed, false, Mode::Auto)?;
    }

    #[test]
    fn single_sink_flows_terminate_with_thin_flow_solver(seed in any::<u64>()) {
        assert_terminates(seed, false, Mode::MultiCommodityThinFlow)?;
    }

    #[test]
    fn acyclic_multi_sink_flows_terminate(seed in any::<u64>()) {
        assert_terminates(seed, true, Mode::Auto)?;
    }
}

/// All simple-path lengths from every node to `sink`, by plain recursion.
fn path_lengths(inst: &ideflow_core::network::Instance, sink: usize) -> Vec<Vec<Rat>> {
    fn walk(inst: &ideflow_core::network::Instance, v: usize, sink: usize, seen: &mut Vec<bool>, len: Rat, out: &mut Vec<Rat>) {
        if v == sink {
            out.push(len);
            return;
        }
        for e in inst.edges.iter().filter(|e| e.tail == v) {
            if seen[e.head] {
                continue;
            }
            seen[e.head] = true;
            walk(inst, e.head, sink, seen, &len + &e.tau, out);
            seen[e.head] = false;
        }
    }
    (0..inst.nodes.len())
        .map(|v| {
            let mut seen = vec![false; inst.nodes.len()];
            seen[v] = true;
            let mut out = Vec::new();
            walk(inst, v, sink, &mut seen, Rat::zero(), &mut out);
            out
        })
        .collect()
}

fn min_gap(lengths: &[Vec<Rat>]) -> Option<Rat> {
    let mut best: Option<Rat> = None;
    for ls in lengths {
        for a in ls {
            for b in ls {
                let d = b - a;
                if d.is_positive() && best.as_ref().map_or(true, |x| d < *x) {
                    best = Some(d);
                }
            }
        }
    }
    best
}

fn tau_delta_value(inst: &ideflow_core::network::Instance, sink: usize) -> Option<Rat> {
    use ideflow_core::network::{tau_delta, TauDelta, DEFAULT_PATH_CAP};
    match tau_delta(inst, sink, DEFAULT_PATH_CAP) {
        TauDelta::Finite { value, shorter, longer, .. } => {
            assert_eq!(&longer - &shorter, value);
            Some(value)
        }
        TauDelta::Infinite => None,
        TauDelta::Unavailable => panic!("path cap hit on a small instance"),
    }
}

#[test]
fn tau_delta_of_the_examples() {
    use ideflow_core::instances::{gen_example3, gen_fig2};
    for inst in [gen_fig2(), gen_example3()] {
        let t = inst.node_index("t").unwrap();
        assert_eq!(min_gap(&path_lengths(&inst, t)), Some(int(3)));
        assert_eq!(tau_delta_value(&inst, t), Some(int(3)));
    }
}

proptest! {
    #[test]
    fn tau_delta_matches_path_enumeration(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = single_sink_params(&mut rng, false);
        let inst = gen_random(seed, p).unwrap();
        let sink = inst.commodities[0].sink;
        prop_assert_eq!(tau_delta_value(&inst, sink), min_gap(&path_lengths(&inst, sink)));
    }
}
