//! Exact rationals, the extended value `+∞`, and the two piecewise function
//! shapes everything else is expressed in: right-constant step functions and
//! continuous piecewise-linear functions.

use std::cmp::Ordering;
use std::fmt;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{Signed, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

pub type Rat = BigRational;

pub fn rat(n: i64, d: i64) -> Rat {
    Rat::new(BigInt::from(n), BigInt::from(d))
}

pub fn int(n: i64) -> Rat {
    Rat::from_integer(BigInt::from(n))
}

/// Parses `"p/q"` or `"p"`. Decimal literals such as `"2.5"` are accepted too
/// and converted exactly.
pub fn parse_rat(s: &str) -> Result<Rat, String> {
    let s = s.trim();
    let bad = || format!("invalid rational {s:?}");
    if let Some((p, q)) = s.split_once('/') {
        let p: BigInt = p.trim().parse().map_err(|_| bad())?;
        let q: BigInt = q.trim().parse().map_err(|_| bad())?;
        if q.is_zero() {
            return Err(format!("zero denominator in {s:?}"));
        }
        return Ok(Rat::new(p, q));
    }
    if let Some((ip, fp)) = s.split_once('.') {
        if fp.is_empty() || !fp.bytes().all(|b| b.is_ascii_digit()) {
            return Err(bad());
        }
        let neg = ip.starts_with('-');
        let ip_abs: BigInt = ip.trim_start_matches(['-', '+']).parse().unwrap_or_default();
        let scale = BigInt::from(10u32).pow(fp.len() as u32);
        let frac: BigInt = fp.parse().map_err(|_| bad())?;
        let mut num = ip_abs * &scale + frac;
        if neg {
            num = -num;
        }
        return Ok(Rat::new(num, scale));
    }
    let p: BigInt = s.parse().map_err(|_| bad())?;
    Ok(Rat::from_integer(p))
}

pub fn fmt_rat(r: &Rat) -> String {
    if r.is_integer() {
        r.numer().to_string()
    } else {
        format!("{}/{}", r.numer(), r.denom())
    }
}

/// Serde adapter: rationals travel as strings.
pub mod serde_rat {
    use super::*;

    pub fn serialize<S: Serializer>(r: &Rat, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&fmt_rat(r))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Rat, D::Error> {
        let raw = RatLiteral::deserialize(d)?;
        raw.into_rat().map_err(serde::de::Error::custom)
    }

    /// Accept both `"3/2"` and plain JSON integers.
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum RatLiteral {
        Str(String),
        Int(i64),
    }

    impl RatLiteral {
        fn into_rat(self) -> Result<Rat, String> {
            match self {
                RatLiteral::Str(s) => parse_rat(&s),
                RatLiteral::Int(i) => Ok(int(i)),
            }
        }
    }
}

/// A finite rational or the explicit `+∞` sentinel.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Ext {
    Fin(Rat),
    Inf,
}

impl Ext {
    pub fn finite(&self) -> Option<&Rat> {
        match self {
            Ext::Fin(r) => Some(r),
            Ext::Inf => None,
        }
    }

    pub fn is_inf(&self) -> bool {
        matches!(self, Ext::Inf)
    }
}

impl Ord for Ext {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Ext::Fin(a), Ext::Fin(b)) => a.cmp(b),
            (Ext::Fin(_), Ext::Inf) => Ordering::Less,
            (Ext::Inf, Ext::Fin(_)) => Ordering::Greater,
            (Ext::Inf, Ext::Inf) => Ordering::Equal,
        }
    }
}

impl PartialOrd for Ext {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Ext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Ext::Fin(r) => f.write_str(&fmt_rat(r)),
            Ext::Inf => f.write_str("inf"),
        }
    }
}

impl Serialize for Ext {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

/// Right-constant step function.
///
/// `values[k]` holds on `[breakpoints[k], breakpoints[k+1])`; outside
/// `[breakpoints[0], breakpoints[last])` the function equals `default`.
/// Kept canonical: no two adjacent segments share a value and the outermost
/// segments differ from `default`, so structural equality is function
/// equality.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct StepFunction {
    breakpoints: Vec<Rat>,
    values: Vec<Rat>,
    default: Rat,
}

impl Default for StepFunction {
    fn default() -> Self {
        Self::zero()
    }
}

impl StepFunction {
    pub fn zero() -> Self {
        StepFunction { breakpoints: Vec::new(), values: Vec::new(), default: Rat::zero() }
    }

    /// `value` on `[from, to)`, zero elsewhere.
    pub fn indicator(from: Rat, to: Rat, value: Rat) -> Self {
        let mut f = Self::zero();
        f.push(from, to, value);
        f
    }

    /// Sum of boxes `(from, to, rate)`; overlapping boxes add up.
    pub fn from_segments<I>(segs: I) -> Result<Self, String>
    where
        I: IntoIterator<Item = (Rat, Rat, Rat)>,
    {
        let segs: Vec<_> = segs.into_iter().collect();
        for (a, b, _) in &segs {
            if a >= b {
                return Err(format!("empty or reversed interval [{}, {})", fmt_rat(a), fmt_rat(b)));
            }
        }
        let mut cuts: Vec<Rat> = segs.iter().flat_map(|(a, b, _)| [a.clone(), b.clone()]).collect();
        cuts.sort();
        cuts.dedup();
        let mut f = Self::zero();
        for w in cuts.windows(2) {
            let v = segs
                .iter()
                .filter(|(a, b, _)| *a <= w[0] && w[1] <= *b)
                .fold(Rat::zero(), |acc, (_, _, r)| acc + r);
            f.push(w[0].clone(), w[1].clone(), v);
        }
        Ok(f)
    }

    pub fn breakpoints(&self) -> &[Rat] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[Rat] {
        &self.values
    }

    pub fn default_value(&self) -> &Rat {
        &self.default
    }

    pub fn is_zero(&self) -> bool {
        self.values.is_empty() && self.default.is_zero()
    }

    /// End of the stored part; beyond it the function is `default`.
    pub fn support_end(&self) -> Option<&Rat> {
        self.breakpoints.last()
    }

    pub fn support_start(&self) -> Option<&Rat> {
        self.breakpoints.first()
    }

    /// Stored segments `(start, end, value)`.
    pub fn segments(&self) -> impl Iterator<Item = (&Rat, &Rat, &Rat)> {
        self.values.iter().enumerate().map(move |(k, v)| (&self.breakpoints[k], &self.breakpoints[k + 1], v))
    }

    /// Value at `t`; at a breakpoint this is the value to the right.
    pub fn eval(&self, t: &Rat) -> &Rat {
        let k = self.breakpoints.partition_point(|b| b <= t);
        if k == 0 || k == self.breakpoints.len() {
            &self.default
        } else {
            &self.values[k - 1]
        }
    }

    /// Left limit at `t`.
    pub fn eval_left(&self, t: &Rat) -> &Rat {
        let k = self.breakpoints.partition_point(|b| b < t);
        if k == 0 || k == self.breakpoints.len() {
            &self.default
        } else {
            &self.values[k - 1]
        }
    }

    /// First breakpoint strictly after `t`.
    pub fn next_breakpoint_after(&self, t: &Rat) -> Option<&Rat> {
        let k = self.breakpoints.partition_point(|b| b <= t);
        self.breakpoints.get(k)
    }

    /// Append `value` on `[start, end)`. Requires `start` to be at or after
    /// the current support end; the gap (if any) keeps the default value.
    pub fn push(&mut self, start: Rat, end: Rat, value: Rat) {
        if start >= end {
            return;
        }
        let Some(last) = self.breakpoints.last() else {
            if value != self.default {
                self.breakpoints = vec![start, end];
                self.values = vec![value];
            }
            return;
        };
        assert!(start >= *last, "step function segments must be appended in order");
        if start > *last {
            if value == self.default {
                return;
            }
            self.values.push(self.default.clone());
            self.breakpoints.push(start);
            self.values.push(value);
            self.breakpoints.push(end);
        } else if Some(&value) == self.values.last() {
            *self.breakpoints.last_mut().unwrap() = end;
        } else if value != self.default {
            self.values.push(value);
            self.breakpoints.push(end);
        }
    }

    /// Pieces `(start, end, value)` covering `[a, b)` exactly, default-valued
    /// gaps included, adjacent equal pieces merged.
    pub fn pieces(&self, a: &Rat, b: &Rat) -> Vec<(Rat, Rat, Rat)> {
        let mut out: Vec<(Rat, Rat, Rat)> = Vec::new();
        if a >= b {
            return out;
        }
        let mut cuts = vec![a.clone()];
        cuts.extend(self.breakpoints.iter().filter(|t| *t > a && *t < b).cloned());
        cuts.push(b.clone());
        for w in cuts.windows(2) {
            let v = self.eval(&w[0]).clone();
            match out.last_mut() {
                Some(last) if last.2 == v => last.1 = w[1].clone(),
                _ => out.push((w[0].clone(), w[1].clone(), v)),
            }
        }
        out
    }

    /// `∫_0^t f`. Requires default zero.
    pub fn integral_to(&self, t: &Rat) -> Rat {
        debug_assert!(self.default.is_zero());
        let mut acc = Rat::zero();
        for (s, e, v) in self.segments() {
            if s >= t {
                break;
            }
            let hi = if e < t { e } else { t };
            let lo = if s.is_negative() { Rat::zero() } else { s.clone() };
            if *hi > lo {
                acc += v * (hi - lo);
            }
        }
        acc
    }

    /// Antiderivative with value 0 at time 0. Requires default zero.
    pub fn integrate(&self) -> PwlFunction {
        debug_assert!(self.default.is_zero());
        let mut f = PwlFunction::constant(Rat::zero(), Rat::zero());
        for (s, e, v) in self.segments() {
            f.push(s.clone(), v.clone());
            f.push(e.clone(), Rat::zero());
        }
        f
    }

    pub fn add(&self, other: &StepFunction) -> StepFunction {
        self.combine(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &StepFunction) -> StepFunction {
        self.combine(other, |a, b| a - b)
    }

    pub fn scale(&self, c: &Rat) -> StepFunction {
        self.map(|v| v * c)
    }

    pub fn map(&self, op: impl Fn(&Rat) -> Rat) -> StepFunction {
        let mut out = StepFunction { breakpoints: Vec::new(), values: Vec::new(), default: op(&self.default) };
        for (s, e, v) in self.segments() {
            out.push(s.clone(), e.clone(), op(v));
        }
        out
    }

    pub fn combine(&self, other: &StepFunction, op: impl Fn(&Rat, &Rat) -> Rat) -> StepFunction {
        let default = op(&self.default, &other.default);
        let mut cuts: Vec<Rat> = self.breakpoints.iter().chain(other.breakpoints.iter()).cloned().collect();
        cuts.sort();
        cuts.dedup();
        let mut out = StepFunction { breakpoints: Vec::new(), values: Vec::new(), default };
        for w in cuts.windows(2) {
            out.push(w[0].clone(), w[1].clone(), op(self.eval(&w[0]), other.eval(&w[0])));
        }
        out
    }
}

/// Continuous piecewise-linear function.
///
/// On `[breakpoints[k], breakpoints[k+1])` the function starts at `values[k]`
/// with slope `slopes[k]`; the last segment extends to `+∞`. Before the first
/// breakpoint the function is constant at `values[0]`. Consecutive segments
/// with equal slopes are merged.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PwlFunction {
    breakpoints: Vec<Rat>,
    values: Vec<Rat>,
    slopes: Vec<Rat>,
}

impl PwlFunction {
    pub fn constant(at: Rat, value: Rat) -> Self {
        PwlFunction { breakpoints: vec![at], values: vec![value], slopes: vec![Rat::zero()] }
    }

    pub fn linear(at: Rat, value: Rat, slope: Rat) -> Self {
        PwlFunction { breakpoints: vec![at], values: vec![value], slopes: vec![slope] }
    }

    /// Build from `(time, value, slope)` triples; validates continuity.
    pub fn from_parts(parts: Vec<(Rat, Rat, Rat)>) -> Result<Self, String> {
        if parts.is_empty() {
            return Err("piecewise-linear function needs at least one breakpoint".into());
        }
        let mut it = parts.into_iter();
        let (t0, v0, s0) = it.next().unwrap();
        let mut f = PwlFunction::linear(t0, v0, s0);
        for (t, v, s) in it {
            let last = f.breakpoints.last().unwrap();
            if t <= *last {
                return Err(format!("breakpoints not ascending at {}", fmt_rat(&t)));
            }
            if f.eval(&t) != v {
                return Err(format!("discontinuity at {}", fmt_rat(&t)));
            }
            f.push(t, s);
        }
        Ok(f)
    }

    pub fn breakpoints(&self) -> &[Rat] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[Rat] {
        &self.values
    }

    pub fn slopes(&self) -> &[Rat] {
        &self.slopes
    }

    pub fn parts(&self) -> impl Iterator<Item = (&Rat, &Rat, &Rat)> {
        self.breakpoints.iter().zip(self.values.iter()).zip(self.slopes.iter()).map(|((t, v), s)| (t, v, s))
    }

    fn segment_index(&self, t: &Rat) -> Option<usize> {
        let k = self.breakpoints.partition_point(|b| b <= t);
        k.checked_sub(1)
    }

    pub fn eval(&self, t: &Rat) -> Rat {
        match self.segment_index(t) {
            None => self.values[0].clone(),
            Some(k) => &self.values[k] + &self.slopes[k] * (t - &self.breakpoints[k]),
        }
    }

    /// Slope to the right of `t`.
    pub fn slope_at(&self, t: &Rat) -> Rat {
        match self.segment_index(t) {
            None => Rat::zero(),
            Some(k) => self.slopes[k].clone(),
        }
    }

    /// From `at` onward use `slope`. `at` must not precede the last breakpoint.
    pub fn push(&mut self, at: Rat, slope: Rat) {
        let last = self.breakpoints.last().unwrap();
        assert!(at >= *last, "piecewise-linear segments must be appended in order");
        if *self.slopes.last().unwrap() == slope {
            return;
        }
        if at == *last {
            let n = self.slopes.len();
            if n >= 2 && self.slopes[n - 2] == slope {
                self.breakpoints.pop();
                self.values.pop();
                self.slopes.pop();
            } else {
                self.slopes[n - 1] = slope;
            }
            return;
        }
        let v = self.eval(&at);
        self.breakpoints.push(at);
        self.values.push(v);
        self.slopes.push(slope);
    }

    /// Pieces `(start, end, value at start, slope)` covering `[a, b)`.
    pub fn pieces(&self, a: &Rat, b: &Rat) -> Vec<(Rat, Rat, Rat, Rat)> {
        let mut out = Vec::new();
        if a >= b {
            return out;
        }
        let mut cuts = vec![a.clone()];
        cuts.extend(self.breakpoints.iter().filter(|t| *t > a && *t < b).cloned());
        cuts.push(b.clone());
        for w in cuts.windows(2) {
            out.push((w[0].clone(), w[1].clone(), self.eval(&w[0]), self.slope_at(&w[0])));
        }
        out
    }

    pub fn combine(&self, other: &PwlFunction, sign: i64) -> PwlFunction {
        let mut cuts: Vec<Rat> = self.breakpoints.iter().chain(other.breakpoints.iter()).cloned().collect();
        cuts.sort();
        cuts.dedup();
        let c = int(sign);
        let first = &cuts[0];
        let mut out = PwlFunction::linear(
            first.clone(),
            self.eval(first) + &c * other.eval(first),
            self.slope_at(first) + &c * other.slope_at(first),
        );
        for t in &cuts[1..] {
            out.push(t.clone(), self.slope_at(t) + &c * other.slope_at(t));
        }
        out
    }

    pub fn add(&self, other: &PwlFunction) -> PwlFunction {
        self.combine(other, 1)
    }

    pub fn sub(&self, other: &PwlFunction) -> PwlFunction {
        self.combine(other, -1)
    }

    pub fn scale(&self, c: &Rat) -> PwlFunction {
        if c.is_zero() {
            return PwlFunction::constant(self.breakpoints[0].clone(), Rat::zero());
        }
        PwlFunction {
            breakpoints: self.breakpoints.clone(),
            values: self.values.iter().map(|v| v * c).collect(),
            slopes: self.slopes.iter().map(|s| s * c).collect(),
        }
    }
}

pub fn step_eval(f: &StepFunction, t: &Rat) -> Rat {
    f.eval(t).clone()
}

pub fn step_integrate(f: &StepFunction) -> PwlFunction {
    f.integrate()
}

/// Smallest `t ≥ t0` with `g(t) = h(t)`, approached from `g ≤ h`; `None` if
/// `g` stays strictly below `h` forever. Requires `g(t0) ≤ h(t0)`.
pub fn pwl_first_meet(g: &PwlFunction, h: &PwlFunction, t0: &Rat) -> Option<Rat> {
    let d = h.sub(g);
    let mut t = t0.clone();
    let mut v = d.eval(&t);
    debug_assert!(!v.is_negative(), "pwl_first_meet needs g(t0) <= h(t0)");
    if v.is_zero() {
        return Some(t);
    }
    let mut upcoming: Vec<Rat> = d.breakpoints().iter().filter(|b| **b > t).cloned().collect();
    upcoming.reverse();
    loop {
        let s = d.slope_at(&t);
        let end = upcoming.pop();
        if s.is_negative() {
            let root = &t + &v / -&s;
            if end.as_ref().map_or(true, |e| root <= *e) {
                return Some(root);
            }
        }
        let e = end?;
        v = d.eval(&e);
        t = e;
        if v.is_zero() {
            return Some(t);
        }
    }
}
