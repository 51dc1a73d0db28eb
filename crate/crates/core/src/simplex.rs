//! Exact rational phase-one simplex: decides feasibility of
//! `{x ≥ 0 : rows}` and returns a vertex when feasible.

use num_traits::{One, Signed, Zero};

use crate::numerics::Rat;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Rel {
    Le,
    Ge,
    Eq,
}

#[derive(Clone, Debug)]
pub struct Row {
    pub coeffs: Vec<(usize, Rat)>,
    pub rel: Rel,
    pub rhs: Rat,
}

/// Bland's rule throughout, so no cycling.
pub fn feasible_point(n_vars: usize, rows: &[Row]) -> Option<Vec<Rat>> {
    let m = rows.len();
    if m == 0 {
        return Some(vec![Rat::zero(); n_vars]);
    }
    // normalise to nonnegative right-hand sides
    let mut norm: Vec<(Vec<Rat>, Rel, Rat)> = Vec::with_capacity(m);
    for r in rows {
        let mut dense = vec![Rat::zero(); n_vars];
        for (j, c) in &r.coeffs {
            dense[*j] += c;
        }
        let (rel, rhs) = if r.rhs.is_negative() {
            for c in dense.iter_mut() {
                *c = -c.clone();
            }
            let flipped = match r.rel {
                Rel::Le => Rel::Ge,
                Rel::Ge => Rel::Le,
                Rel::Eq => Rel::Eq,
            };
            (flipped, -r.rhs.clone())
        } else {
            (r.rel, r.rhs.clone())
        };
        norm.push((dense, rel, rhs));
    }
    let n_slack = norm.iter().filter(|r| r.1 != Rel::Eq).count();
    let n_art = norm.iter().filter(|r| r.1 != Rel::Le).count();
    let art_start = n_vars + n_slack;
    let ncols = art_start + n_art;
    let mut tab: Vec<Vec<Rat>> = Vec::with_capacity(m);
    let mut basis = Vec::with_capacity(m);
    let (mut s, mut a) = (n_vars, art_start);
    for (dense, rel, rhs) in norm {
        let mut row = dense;
        row.resize(ncols + 1, Rat::zero());
        match rel {
            Rel::Le => {
                row[s] = Rat::one();
                basis.push(s);
                s += 1;
            }
            Rel::Ge => {
                row[s] = -Rat::one();
                s += 1;
                row[a] = Rat::one();
                basis.push(a);
                a += 1;
            }
            Rel::Eq => {
                row[a] = Rat::one();
                basis.push(a);
                a += 1;
            }
        }
        row[ncols] = rhs;
        tab.push(row);
    }
    // reduced costs of the phase-one objective (sum of artificials)
    let mut cost = vec![Rat::zero(); ncols + 1];
    for (i, &b) in basis.iter().enumerate() {
        if b >= art_start {
            for j in 0..=ncols {
                if j < art_start || j == ncols {
                    cost[j] -= &tab[i][j];
                }
            }
        }
    }
    loop {
        let Some(enter) = (0..ncols).find(|&j| cost[j].is_negative()) else { break };
        let mut leave: Option<(usize, Rat)> = None;
        for i in 0..m {
            if tab[i][enter].is_positive() {
                let ratio = &tab[i][ncols] / &tab[i][enter];
                let better = match &leave {
                    None => true,
                    Some((li, lr)) => ratio < *lr || (ratio == *lr && basis[i] < basis[*li]),
                };
                if better {
                    leave = Some((i, ratio));
                }
            }
        }
        // the phase-one objective is bounded below by zero
        let (pr, _) = leave.expect("phase-one simplex cannot be unbounded");
        pivot(&mut tab, &mut cost, pr, enter);
        basis[pr] = enter;
    }
    if !cost[ncols].is_zero() {
        // cost[ncols] holds minus the objective value
        return None;
    }
    let mut x = vec![Rat::zero(); n_vars];
    for (i, &b) in basis.iter().enumerate() {
        if b < n_vars {
            x[b] = tab[i][ncols].clone();
        }
    }
    Some(x)
}

fn pivot(tab: &mut [Vec<Rat>], cost: &mut [Rat], pr: usize, pc: usize) {
    let inv = Rat::one() / &tab[pr][pc];
    for v in tab[pr].iter_mut() {
        if !v.is_zero() {
            *v *= &inv;
        }
    }
    let prow = tab[pr].clone();
    for (i, row) in tab.iter_mut().enumerate() {
        if i == pr || row[pc].is_zero() {
            continue;
        }
        let f = row[pc].clone();
        for (v, p) in row.iter_mut().zip(&prow) {
            if !p.is_zero() {
                *v -= &f * p;
            }
        }
    }
    if !cost[pc].is_zero() {
        let f = cost[pc].clone();
        for (v, p) in cost.iter_mut().zip(&prow) {
            if !p.is_zero() {
                *v -= &f * p;
            }
        }
    }
}
