//! Per-node flow distribution for the single-sink case by water-filling.
//!
//! Each active outgoing edge `e = vw` contributes a marginal cost
//! `h_e(z) = β` for `z ≤ γ` and `β + (z − γ)/α` beyond, and the node's inflow
//! `b` is poured into the edges so that all used edges share one level.

use num_traits::{Signed, Zero};

use crate::numerics::Rat;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HFunc {
    pub edge: usize,
    pub beta: Rat,
    pub gamma: Rat,
    pub alpha: Rat,
}

impl HFunc {
    pub fn eval(&self, z: &Rat) -> Rat {
        if *z <= self.gamma {
            self.beta.clone()
        } else {
            &self.beta + (z - &self.gamma) / &self.alpha
        }
    }

    /// `max{z ≥ 0 : h(z) ≤ level}`; requires `level ≥ β`.
    pub fn reach(&self, level: &Rat) -> Rat {
        debug_assert!(*level >= self.beta);
        &self.gamma + &self.alpha * (level - &self.beta)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Split {
    /// Rates in the order of the input h-functions.
    pub z: Vec<Rat>,
    pub level: Rat,
}

/// h-function for edge `e` with head slope `a_w`, queue `q` and capacity `ν`.
pub fn build_h(edge: usize, a_w: &Rat, queue: &Rat, nu: &Rat) -> HFunc {
    if queue.is_positive() {
        HFunc { edge, beta: a_w - Rat::from_integer(1.into()), gamma: Rat::zero(), alpha: nu.clone() }
    } else {
        HFunc { edge, beta: a_w.clone(), gamma: nu.clone(), alpha: nu.clone() }
    }
}

/// h-function when part of the edge's inflow is already committed.
///
/// With `fixed` units of inflow already on the edge, the remaining marginal
/// cost is `h(z) = g(fixed + z)/ν + a_w`.
pub fn build_h_offset(edge: usize, a_w: &Rat, queue_positive: bool, nu: &Rat, fixed: &Rat) -> HFunc {
    let over = (fixed - nu) / nu;
    if queue_positive || fixed >= nu {
        HFunc { edge, beta: a_w + over, gamma: Rat::zero(), alpha: nu.clone() }
    } else {
        HFunc { edge, beta: a_w.clone(), gamma: nu - fixed, alpha: nu.clone() }
    }
}

/// Sort by `β`, ties by edge id.
pub fn sort_h(hs: &mut [HFunc]) {
    hs.sort_by(|a, b| a.beta.cmp(&b.beta).then(a.edge.cmp(&b.edge)));
}

/// Water-filling on β-sorted h-functions. Returns `None` only for an empty
/// edge list.
pub fn waterfill(b: &Rat, hs: &[HFunc]) -> Option<Split> {
    let p = hs.len();
    if p == 0 {
        return None;
    }
    debug_assert!(hs.windows(2).all(|w| (&w[0].beta, w[0].edge) <= (&w[1].beta, w[1].edge)));
    let filled = |r: usize, level: &Rat| -> Rat { hs[..r].iter().map(|h| h.reach(level)).sum() };
    // largest r with Σ_{i≤r} reach_i(β_r) ≤ b; the sum is monotone in r
    let mut r = 0;
    while r < p && filled(r + 1, &hs[r].beta) <= *b {
        r += 1;
    }
    let mut z = vec![Rat::zero(); p];
    if r == 0 {
        z[0] = b.clone();
        return Some(Split { z, level: hs[0].beta.clone() });
    }
    if r < p {
        let next = &hs[r].beta;
        let upto = filled(r, next);
        if upto <= *b {
            for i in 0..r {
                z[i] = hs[i].reach(next);
            }
            z[r] = b - upto;
            return Some(Split { z, level: next.clone() });
        }
    }
    let base = &hs[r - 1].beta;
    for i in 0..r {
        z[i] = hs[i].reach(base);
    }
    let rest = b - filled(r, base);
    let total_alpha: Rat = hs[..r].iter().map(|h| h.alpha.clone()).sum();
    for i in 0..r {
        z[i] += &hs[i].alpha / &total_alpha * &rest;
    }
    Some(Split { z, level: base + rest / total_alpha })
}

/// `Σ_i ∫_0^{z_i} h_i`.
pub fn opt_objective(hs: &[HFunc], z: &[Rat]) -> Rat {
    hs.iter()
        .zip(z)
        .map(|(h, zi)| {
            let over = zi - &h.gamma;
            let quad = if over.is_positive() { &over * &over / (&h.alpha * Rat::from_integer(2.into())) } else { Rat::zero() };
            &h.beta * zi + quad
        })
        .sum()
}
