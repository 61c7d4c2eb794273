//! Haar measures of the kernel classes `M_{a,b}` at finite level, and exact
//! piecewise-geometric models of their tails.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::exactnum::{geometric_tail, Rational};
use crate::matgroups::{MatrixGroupLevel, SizeGuard};
use crate::modmatrix::{
    det_minus_identity_valuation_raw, elementary_valuations_raw, minus_identity_raw, Entries,
    ResidueRing,
};

/// Measures of the classes `M_{a,b}` visible at level n (those with
/// `a + b < n`), plus the mass that level n cannot classify.
///
/// `censored[a]` for `a < n` is the mass with first elementary valuation `a`
/// and second `≥ n`; `censored[n]` is the mass of `M ≡ I`. Each of these is an
/// exact sum over hidden classes: `censored[a] = Σ_{b ≥ n−a} μ(a,b)` and
/// `censored[n] = Σ_{a ≥ n} Σ_b μ(a,b)`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasureTable {
    ell: u32,
    level: u32,
    entries: BTreeMap<(u32, u32), Rational>,
    censored: Vec<Rational>,
    tag: String,
}

#[derive(Clone, Debug, Default)]
struct Tally {
    grid: Vec<u64>,
    censored: Vec<u64>,
    total: u64,
}

impl Tally {
    fn new(n: u32) -> Self {
        let n = n as usize;
        Tally {
            grid: vec![0; n * n],
            censored: vec![0; n + 1],
            total: 0,
        }
    }

    fn add(&mut self, ring: &ResidueRing, m: &Entries) {
        let (e1, e2) = elementary_valuations_raw(ring, &minus_identity_raw(ring, m));
        self.add_class(ring.level(), e1, e2, 1);
    }

    fn add_class(&mut self, n: u32, e1: u32, e2: u32, count: u64) {
        if e2 < n {
            self.grid[(e1 * n + (e2 - e1)) as usize] += count;
        } else {
            self.censored[e1 as usize] += count;
        }
        self.total += count;
    }

    fn merge(mut self, other: Tally) -> Tally {
        for (x, y) in self.grid.iter_mut().zip(other.grid) {
            *x += y;
        }
        for (x, y) in self.censored.iter_mut().zip(other.censored) {
            *x += y;
        }
        self.total += other.total;
        self
    }

    fn of<'a>(ring: &ResidueRing, elements: impl IntoParallelIterator<Item = &'a Entries>) -> Tally {
        let n = ring.level();
        elements
            .into_par_iter()
            .fold(
                || Tally::new(n),
                |mut t, m| {
                    t.add(ring, m);
                    t
                },
            )
            .reduce(|| Tally::new(n), Tally::merge)
    }

    fn into_table(self, ring: &ResidueRing, tag: String) -> MeasureTable {
        let n = ring.level();
        let mut entries = BTreeMap::new();
        for a in 0..n {
            for b in 0..n - a {
                let count = self.grid[(a * n + b) as usize];
                entries.insert((a, b), Rational::ratio(count, self.total));
            }
        }
        let censored = self
            .censored
            .iter()
            .map(|&c| Rational::ratio(c, self.total))
            .collect();
        MeasureTable {
            ell: ring.ell(),
            level: n,
            entries,
            censored,
            tag,
        }
    }
}

impl MeasureTable {
    pub fn ell(&self) -> u32 {
        self.ell
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    /// `μ(a, b)` if the class is visible at this level.
    pub fn get(&self, a: u32, b: u32) -> Option<&Rational> {
        self.entries.get(&(a, b))
    }

    pub fn mu(&self, a: u32, b: u32) -> Result<Rational> {
        self.get(a, b).cloned().ok_or_else(|| Error::LevelTooLow {
            level: self.level,
            reason: format!("class ({a},{b}) needs level > {}", a + b),
        })
    }

    pub fn entries(&self) -> impl Iterator<Item = ((u32, u32), &Rational)> {
        self.entries.iter().map(|(k, v)| (*k, v))
    }

    /// Mass with first valuation `a` (or `M ≡ I` when `a = n`) whose class is
    /// not visible at this level.
    pub fn censored(&self, a: u32) -> &Rational {
        &self.censored[a as usize]
    }

    pub fn undetermined(&self) -> Rational {
        self.censored.iter().sum()
    }

    /// Grid mass plus undetermined mass; always exactly 1.
    pub fn total(&self) -> Rational {
        self.entries.values().sum::<Rational>() + self.undetermined()
    }

    /// Pointwise `½(self + other)`.
    pub fn average(&self, other: &MeasureTable) -> Result<MeasureTable> {
        if (self.ell, self.level) != (other.ell, other.level) {
            return Err(Error::RingMismatch(
                self.ell,
                self.level,
                other.ell,
                other.level,
            ));
        }
        let half = Rational::ratio(1, 2);
        let entries = self
            .entries
            .iter()
            .map(|(k, v)| (*k, (v + &other.entries[k]) * &half))
            .collect();
        let censored = self
            .censored
            .iter()
            .zip(&other.censored)
            .map(|(x, y)| (x + y) * &half)
            .collect();
        Ok(MeasureTable {
            ell: self.ell,
            level: self.level,
            entries,
            censored,
            tag: format!("average({}, {})", self.tag, other.tag),
        })
    }

    pub fn to_json(&self) -> Value {
        json!({
            "tag": self.tag,
            "ell": self.ell,
            "level": self.level,
            "total": self.total().to_string(),
            "entries": self.entries.iter().map(|((a, b), mu)| json!({
                "a": a, "b": b, "mu": mu.to_string()
            })).collect::<Vec<_>>(),
            "undetermined": self.undetermined().to_string(),
            "censored": self.censored.iter().map(|c| c.to_string()).collect::<Vec<_>>(),
        })
    }
}

/// Classifies every element of `g` by kernel class.
pub fn measure_table(g: &MatrixGroupLevel) -> MeasureTable {
    let ring = g.ring();
    Tally::of(&ring, g.raw_elements()).into_table(&ring, format!("{:?}", g.tag()))
}

/// The measure table at level `n` of the full GL₂-preimage of `base`,
/// without enumerating the preimage.
///
/// Over the fiber of `g`, `M − I` runs through `X + ℓᵐY` with `Y` uniform.
/// If `X` is already classified at level `m` every lift has its class.
/// Otherwise `X ≡ U·diag(ℓ^{e₁}, 0)·V mod ℓᵐ`, and since `U·Y·V` is again
/// uniform, the class distribution over the fiber depends on `e₁` alone; it is
/// counted once per `e₁` by enumerating `Y`.
pub fn lifted_measure_table(
    base: &MatrixGroupLevel,
    n: u32,
    guard: SizeGuard,
) -> Result<MeasureTable> {
    let m = base.level();
    if n < m {
        return Err(Error::InvalidInput(format!(
            "cannot lift level {m} down to {n}"
        )));
    }
    if n == m {
        return Ok(measure_table(base));
    }
    let low = base.ring();
    let ring = low.at_level(n)?;
    let ell = ring.ell() as u64;
    let fiber = ell.pow(4 * (n - m));
    guard.check(fiber as u128 * (m as u128 + 1))?;
    let mut classes = vec![0u64; m as usize + 1];
    let mut tally = Tally::new(n);
    for g in base.raw_elements() {
        let (e1, e2) = elementary_valuations_raw(&low, &minus_identity_raw(&low, g));
        if e2 < m {
            tally.add_class(n, e1, e2, fiber);
        } else {
            classes[e1 as usize] += 1;
        }
    }
    let step = ring.ell_pow(m);
    let side = ring.ell_pow(n - m);
    for (e1, &weight) in classes.iter().enumerate() {
        if weight == 0 {
            continue;
        }
        let corner = if (e1 as u32) < m { ring.ell_pow(e1 as u32) } else { 0 };
        let hist = (0..side)
            .into_par_iter()
            .fold(
                || Tally::new(n),
                |mut t, y0| {
                    for y1 in 0..side {
                        for y2 in 0..side {
                            for y3 in 0..side {
                                let x = [
                                    ring.add(corner, ring.mul(step, y0)),
                                    ring.mul(step, y1),
                                    ring.mul(step, y2),
                                    ring.mul(step, y3),
                                ];
                                let (a, b) = elementary_valuations_raw(&ring, &x);
                                t.add_class(n, a, b, weight);
                            }
                        }
                    }
                    t
                },
            )
            .reduce(|| Tally::new(n), Tally::merge);
        tally = tally.merge(hist);
    }
    Ok(tally.into_table(&ring, format!("lift of {:?} to level {n}", base.tag())))
}

/// Measure of `{M ∈ G(n) : det(M − I) ≡ 0 mod ℓᵏ}`.
pub fn singular_mass(g: &MatrixGroupLevel, k: u32) -> Result<Rational> {
    let ring = g.ring();
    if k > ring.level() {
        return Err(Error::LevelTooLow {
            level: ring.level(),
            reason: format!("singular mass at depth {k}"),
        });
    }
    let hits = g
        .raw_elements()
        .par_iter()
        .filter(|m| det_minus_identity_valuation_raw(&ring, m) >= k)
        .count();
    Ok(Rational::ratio(hits as u64, g.order() as u64))
}

/// Conditional measure tables on the Cartan coset `C` and on `N ∖ C`.
pub fn split_coset_tables(g: &MatrixGroupLevel) -> Result<(MeasureTable, MeasureTable)> {
    let not_normalizer =
        || Error::InvalidInput("group is not a 2-coset extension of a Cartan subgroup".into());
    let cartan = g.cartan().ok_or_else(not_normalizer)?;
    let ring = g.ring();
    let (inner, outer): (Vec<&Entries>, Vec<&Entries>) = g
        .raw_elements()
        .iter()
        .partition(|m| cartan.contains(&ring, m));
    if inner.is_empty() || inner.len() != outer.len() {
        return Err(not_normalizer());
    }
    let tag = format!("{:?}", g.tag());
    Ok((
        Tally::of(&ring, inner).into_table(&ring, format!("{tag}/C")),
        Tally::of(&ring, outer).into_table(&ring, format!("{tag}/N-C")),
    ))
}

/// A subset of N: a single point or a tail `{k, k+1, …}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Span {
    Single(u32),
    From(u32),
}

impl Span {
    pub fn contains(&self, x: u32) -> bool {
        match *self {
            Span::Single(s) => x == s,
            Span::From(s) => x >= s,
        }
    }

    pub fn intersect(&self, other: &Span) -> Option<Span> {
        match (*self, *other) {
            (Span::Single(x), s) | (s, Span::Single(x)) => s.contains(x).then_some(Span::Single(x)),
            (Span::From(x), Span::From(y)) => Some(Span::From(x.max(y))),
        }
    }

    /// `Σ_{x ∈ span} ℓ^{−step·x}`.
    fn weight_sum(&self, ell: u32, step: u32) -> Result<Rational> {
        match *self {
            Span::Single(x) => Ok(Rational::power(ell as u64, -((step * x) as i64))),
            Span::From(x) if step >= 1 => Ok(geometric_tail(ell as u64, step, x)),
            Span::From(x) => Err(Error::UncoveredRegion(format!(
                "non-decaying tail from {x}"
            ))),
        }
    }

    fn to_json(self, axis: &str) -> (String, Value) {
        match self {
            Span::Single(x) => (format!("{axis}_set"), json!([x])),
            Span::From(x) => (format!("{axis}_from"), json!(x)),
        }
    }
}

/// `c·ℓ^{−αa−βb}` on the product region `a × b`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdmissiblePiece {
    pub a: Span,
    pub b: Span,
    pub c: Rational,
    pub alpha: u32,
    pub beta: u32,
}

impl AdmissiblePiece {
    pub fn value(&self, ell: u32, a: u32, b: u32) -> Rational {
        let e = (self.alpha * a + self.beta * b) as i64;
        &self.c * Rational::power(ell as u64, -e)
    }

    pub fn contains(&self, a: u32, b: u32) -> bool {
        self.a.contains(a) && self.b.contains(b)
    }

    /// Sum of the piece over its intersection with `a × b`.
    pub fn sum_over(&self, ell: u32, a: &Span, b: &Span) -> Result<Rational> {
        let (Some(sa), Some(sb)) = (self.a.intersect(a), self.b.intersect(b)) else {
            return Ok(Rational::zero());
        };
        if self.c.is_zero() {
            return Ok(Rational::zero());
        }
        Ok(&self.c * sa.weight_sum(ell, self.alpha)? * sb.weight_sum(ell, self.beta)?)
    }

    pub fn to_json(&self) -> Value {
        let (ka, va) = self.a.to_json("a");
        let (kb, vb) = self.b.to_json("b");
        let mut obj = serde_json::Map::new();
        obj.insert(ka, va);
        obj.insert(kb, vb);
        obj.insert("c".into(), json!(self.c.to_string()));
        obj.insert("alpha".into(), json!(self.alpha));
        obj.insert("beta".into(), json!(self.beta));
        Value::Object(obj)
    }
}

/// An exact function on N² given by a finite grid `a < A, b < B` and
/// admissible pieces on the rest: one row piece `{a} × [B, ∞)` per `a < A`,
/// one column piece `[A, ∞) × {b}` per `b < B`, and the interior
/// `[A, ∞) × [B, ∞)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TailModel {
    ell: u32,
    a_split: u32,
    b_split: u32,
    cells: BTreeMap<(u32, u32), Rational>,
    rows: Vec<AdmissiblePiece>,
    cols: Vec<AdmissiblePiece>,
    interior: AdmissiblePiece,
}

impl TailModel {
    /// Builds a model from its parts. `rows[a] = (c, α, β)` and so on.
    pub fn from_parts(
        ell: u32,
        a_split: u32,
        b_split: u32,
        cells: impl Fn(u32, u32) -> Rational,
        rows: impl Fn(u32) -> (Rational, u32, u32),
        cols: impl Fn(u32) -> (Rational, u32, u32),
        interior: (Rational, u32, u32),
    ) -> TailModel {
        let mut grid = BTreeMap::new();
        for a in 0..a_split {
            for b in 0..b_split {
                grid.insert((a, b), cells(a, b));
            }
        }
        let piece = |a, b, (c, alpha, beta): (Rational, u32, u32)| AdmissiblePiece {
            a,
            b,
            c,
            alpha,
            beta,
        };
        TailModel {
            ell,
            a_split,
            b_split,
            cells: grid,
            rows: (0..a_split)
                .map(|a| piece(Span::Single(a), Span::From(b_split), rows(a)))
                .collect(),
            cols: (0..b_split)
                .map(|b| piece(Span::From(a_split), Span::Single(b), cols(b)))
                .collect(),
            interior: piece(Span::From(a_split), Span::From(b_split), interior),
        }
    }

    /// The constant function `c·ℓ^{−αa−βb}` everywhere.
    pub fn pure(ell: u32, c: Rational, alpha: u32, beta: u32) -> TailModel {
        TailModel::from_parts(
            ell,
            0,
            0,
            |_, _| unreachable!(),
            |_| unreachable!(),
            |_| unreachable!(),
            (c, alpha, beta),
        )
    }

    pub fn ell(&self) -> u32 {
        self.ell
    }

    /// Grid thresholds `(A, B)`.
    pub fn thresholds(&self) -> (u32, u32) {
        (self.a_split, self.b_split)
    }

    pub fn pieces(&self) -> impl Iterator<Item = &AdmissiblePiece> {
        self.rows
            .iter()
            .chain(self.cols.iter())
            .chain(std::iter::once(&self.interior))
    }

    pub fn cells(&self) -> impl Iterator<Item = ((u32, u32), &Rational)> {
        self.cells.iter().map(|(k, v)| (*k, v))
    }

    fn piece_at(&self, a: u32, b: u32) -> &AdmissiblePiece {
        match (a < self.a_split, b < self.b_split) {
            (true, false) => &self.rows[a as usize],
            (false, true) => &self.cols[b as usize],
            (false, false) => &self.interior,
            (true, true) => unreachable!("grid cell"),
        }
    }

    pub fn value(&self, a: u32, b: u32) -> Rational {
        match self.cells.get(&(a, b)) {
            Some(v) => v.clone(),
            None => self.piece_at(a, b).value(self.ell, a, b),
        }
    }

    /// Sum over the region `a × b`.
    pub fn sum_region(&self, a: &Span, b: &Span) -> Result<Rational> {
        let mut total = Rational::zero();
        for ((x, y), v) in &self.cells {
            if a.contains(*x) && b.contains(*y) {
                total += v;
            }
        }
        for p in self.pieces() {
            total += p.sum_over(self.ell, a, b)?;
        }
        Ok(total)
    }

    /// Sum over all of N².
    pub fn total(&self) -> Result<Rational> {
        self.sum_region(&Span::From(0), &Span::From(0))
    }

    /// The same function with a larger grid.
    pub fn refine(&self, a_split: u32, b_split: u32) -> TailModel {
        assert!(a_split >= self.a_split && b_split >= self.b_split);
        let src = |a: u32, b: u32| {
            let p = self.piece_at(a, b);
            (p.c.clone(), p.alpha, p.beta)
        };
        TailModel::from_parts(
            self.ell,
            a_split,
            b_split,
            |a, b| self.value(a, b),
            |a| src(a, b_split),
            |b| src(a_split, b),
            src(a_split, b_split),
        )
    }

    /// Pointwise product.
    pub fn multiply(&self, other: &TailModel) -> Result<TailModel> {
        if self.ell != other.ell {
            return Err(Error::InvalidInput(format!(
                "cannot multiply models at ℓ = {} and ℓ = {}",
                self.ell, other.ell
            )));
        }
        let a_split = self.a_split.max(other.a_split);
        let b_split = self.b_split.max(other.b_split);
        let x = self.refine(a_split, b_split);
        let y = other.refine(a_split, b_split);
        let prod = |p: &AdmissiblePiece, q: &AdmissiblePiece| {
            (&p.c * &q.c, p.alpha + q.alpha, p.beta + q.beta)
        };
        Ok(TailModel::from_parts(
            self.ell,
            a_split,
            b_split,
            |a, b| &x.cells[&(a, b)] * &y.cells[&(a, b)],
            |a| prod(&x.rows[a as usize], &y.rows[a as usize]),
            |b| prod(&x.cols[b as usize], &y.cols[b as usize]),
            prod(&x.interior, &y.interior),
        ))
    }

    /// Multiplies by `ℓ^{−αa−βb}`.
    pub fn weighted(&self, alpha: u32, beta: u32) -> TailModel {
        self.multiply(&TailModel::pure(self.ell, Rational::one(), alpha, beta))
            .expect("same ℓ")
    }

    pub fn scaled(&self, factor: &Rational) -> TailModel {
        self.multiply(&TailModel::pure(self.ell, factor.clone(), 0, 0))
            .expect("same ℓ")
    }

    pub fn to_json(&self) -> Value {
        json!({
            "ell": self.ell,
            "thresholds": [self.a_split, self.b_split],
            "entries": self.cells.iter().map(|((a, b), mu)| json!({
                "a": a, "b": b, "mu": mu.to_string()
            })).collect::<Vec<_>>(),
            "pieces": self.pieces().map(AdmissiblePiece::to_json).collect::<Vec<_>>(),
        })
    }
}

/// `k` with `x = ℓᵏ`, if any.
fn exact_log(x: &Rational, ell: u32) -> Option<u32> {
    if !x.is_integer() || x.is_negative() || x.is_zero() {
        return None;
    }
    let mut n = x.numer().clone();
    let l = num_bigint::BigInt::from(ell);
    let mut k = 0;
    while n > num_bigint::BigInt::from(1) {
        if &n % &l != num_bigint::BigInt::from(0) {
            return None;
        }
        n /= &l;
        k += 1;
    }
    Some(k)
}

/// Decay exponent along one axis, read from consecutive nonzero cells.
/// `Ok(None)` when every available pair is zero.
fn decay_exponent(
    table: &MeasureTable,
    pairs: impl Iterator<Item = ((u32, u32), (u32, u32))>,
) -> std::result::Result<Option<u32>, ()> {
    let mut found = None;
    for (p, q) in pairs {
        let (Some(x), Some(y)) = (table.get(p.0, p.1), table.get(q.0, q.1)) else {
            continue;
        };
        match (x.is_zero(), y.is_zero()) {
            (true, true) => continue,
            (false, false) => {}
            _ => return Err(()),
        }
        let k = exact_log(&(x / y), table.ell).filter(|&k| k >= 1).ok_or(())?;
        match found {
            None => found = Some(k),
            Some(prev) if prev != k => return Err(()),
            _ => {}
        }
    }
    Ok(found)
}

fn fit_with_thresholds(primary: &MeasureTable, a_split: u32, b_split: u32) -> Option<TailModel> {
    let n = primary.level;
    let alpha = decay_exponent(
        primary,
        (a_split..n).flat_map(|a| (0..n).map(move |b| ((a, b), (a + 1, b)))),
    )
    .ok()?
    .unwrap_or(1);
    let beta = decay_exponent(
        primary,
        (0..n).flat_map(|a| (b_split..n).map(move |b| ((a, b), (a, b + 1)))),
    )
    .ok()?
    .unwrap_or(1);
    let ell = primary.ell as u64;
    let coeff = |a: u32, b: u32| {
        let mu = primary.get(a, b).expect("anchor inside the grid");
        mu * Rational::power(ell, (alpha * a + beta * b) as i64)
    };
    Some(TailModel::from_parts(
        primary.ell,
        a_split,
        b_split,
        |a, b| primary.get(a, b).expect("grid cell").clone(),
        |a| (coeff(a, b_split), alpha, beta),
        |b| (coeff(a_split, b), alpha, beta),
        (coeff(a_split, b_split), alpha, beta),
    ))
}

/// Checks a model against every visible cell and every censored mass.
fn agrees_with(model: &TailModel, table: &MeasureTable) -> Result<bool> {
    for ((a, b), mu) in table.entries() {
        if model.value(a, b) != *mu {
            return Ok(false);
        }
    }
    let n = table.level;
    for a in 0..n {
        let hidden = model.sum_region(&Span::Single(a), &Span::From(n - a))?;
        if hidden != *table.censored(a) {
            return Ok(false);
        }
    }
    let identity_mass = model.sum_region(&Span::From(n), &Span::From(0))?;
    Ok(identity_mass == *table.censored(n))
}

/// Fits an exact [`TailModel`] to a measure table.
///
/// Grid thresholds `(A, B)` are tried in order of increasing `A + B`. Decay
/// exponents come from ratios of consecutive cells, coefficients from the
/// cells `(a, B)`, `(A, b)` and `(A, B)`. A candidate is accepted only if it
/// reproduces every cell and every censored mass of `primary` (and of
/// `confirm`, if given). Each piece meets at least one censored mass, so no
/// piece goes unchecked. Level 3 is the minimum.
pub fn fit_tail(primary: &MeasureTable, confirm: Option<&MeasureTable>) -> Result<TailModel> {
    let n = primary.level;
    let needed = 3;
    if n < needed {
        return Err(Error::LevelTooLow {
            level: n,
            reason: format!("tail fitting needs level ≥ {needed}"),
        });
    }
    if let Some(c) = confirm {
        if c.ell != primary.ell {
            return Err(Error::RingMismatch(primary.ell, n, c.ell, c.level));
        }
    }
    for s in 0..n {
        for a_split in 0..=s {
            let b_split = s - a_split;
            let Some(model) = fit_with_thresholds(primary, a_split, b_split) else {
                continue;
            };
            if !agrees_with(&model, primary)? {
                continue;
            }
            if let Some(c) = confirm {
                if !agrees_with(&model, c)? {
                    continue;
                }
            }
            return Ok(model);
        }
    }
    Err(Error::FitRejected(format!(
        "no piecewise-geometric model reproduces the level-{n} table; raise the level"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matgroups::{
        cartan, generated_subgroup, gl2_full, normalizer_cartan, preimage_group, Cartan,
        SizeGuard,
    };
    use crate::modmatrix::{ResidueMatrix, ResidueRing};

    fn r(s: &str) -> Rational {
        s.parse().unwrap()
    }

    fn guard() -> SizeGuard {
        SizeGuard::default()
    }

    fn mod3_group(n: u32) -> MatrixGroupLevel {
        let ring = ResidueRing::new(3, 1).unwrap();
        let g = generated_subgroup(
            3,
            1,
            &[
                ResidueMatrix::from_rows(ring, [[1, 1], [0, 1]]),
                ResidueMatrix::from_rows(ring, [[-1, 0], [0, 1]]),
            ],
            guard(),
        )
        .unwrap();
        preimage_group(&g, n, guard()).unwrap()
    }

    #[test]
    fn gl2_mod2_fixed_point_free_mass() {
        let t = measure_table(&gl2_full(2, 1, guard()).unwrap());
        assert_eq!(t.mu(0, 0).unwrap(), r("1/3"));
        assert_eq!(t.undetermined(), r("2/3"));
        assert_eq!(t.total(), Rational::one());
    }

    #[test]
    fn mod3_example_values() {
        let t = measure_table(&mod3_group(3));
        assert_eq!(t.mu(0, 0).unwrap(), Rational::zero());
        assert_eq!(t.mu(0, 1).unwrap(), r("5/9"));
        assert_eq!(t.mu(1, 0).unwrap(), r("8/81"));
        assert_eq!(t.mu(0, 2).unwrap(), r("5/27"));
        assert_eq!(t.mu(1, 1).unwrap(), r("32/729"));
        assert_eq!(t.total(), Rational::one());
        assert!(t.mu(2, 1).is_err());
    }

    #[test]
    fn singular_mass_examples() {
        let g = gl2_full(2, 1, guard()).unwrap();
        assert_eq!(singular_mass(&g, 0).unwrap(), Rational::one());
        assert_eq!(singular_mass(&g, 1).unwrap(), r("2/3"));
        assert!(singular_mass(&g, 2).is_err());
        let g = gl2_full(3, 2, guard()).unwrap();
        let t = measure_table(&g);
        let s1 = singular_mass(&g, 1).unwrap();
        let s2 = singular_mass(&g, 2).unwrap();
        assert!(s2 <= s1);
        // Everything outside a + b < k has det(M − I) divisible by ℓᵏ.
        let below: Rational = t.entries().filter(|((a, b), _)| a + b < 1).map(|(_, v)| v).sum();
        assert_eq!(Rational::one() - below, s1);
        assert!(t.undetermined() <= s2);
    }

    #[test]
    fn level_stability() {
        for (ell, top) in [(2u32, 4u32), (3, 3)] {
            let tables: Vec<_> = (1..=top)
                .map(|n| measure_table(&gl2_full(ell, n, guard()).unwrap()))
                .collect();
            for lo in &tables {
                for hi in &tables {
                    for ((a, b), v) in lo.entries() {
                        if let Some(w) = hi.get(a, b) {
                            assert_eq!(v, w, "ℓ={ell} ({a},{b})");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn coset_tables_mod13() {
        let ring = ResidueRing::new(13, 1).unwrap();
        let g = generated_subgroup(
            13,
            1,
            &[
                ResidueMatrix::from_rows(ring, [[2, 0], [0, 2]]),
                ResidueMatrix::from_rows(ring, [[5, 0], [0, 1]]),
                ResidueMatrix::from_rows(ring, [[0, 1], [-1, 0]]),
            ],
            guard(),
        )
        .unwrap()
        .with_cartan(Cartan::Diagonal)
        .unwrap();
        let (c, star) = split_coset_tables(&g).unwrap();
        assert_eq!(c.mu(0, 0).unwrap(), r("41/48"));
        assert_eq!(star.mu(0, 0).unwrap(), r("11/12"));
        // At level 1 the (0, ≥1) classes are only visible as censored mass.
        assert_eq!(*star.censored(0), r("1/12"));
        assert_eq!(c.total(), Rational::one());
        assert_eq!(star.total(), Rational::one());
    }

    #[test]
    fn nonsplit_other_coset_has_no_deep_classes() {
        for ell in [3u32, 5] {
            let n = if ell == 3 { 3 } else { 2 };
            let c = cartan(ell, n, Cartan::nonsplit_for(ell), guard()).unwrap();
            let g = normalizer_cartan(&c, guard()).unwrap();
            let (_, star) = split_coset_tables(&g).unwrap();
            for ((a, _), v) in star.entries() {
                if a >= 1 {
                    assert!(v.is_zero());
                }
            }
            for a in 1..=n {
                assert!(star.censored(a).is_zero());
            }
        }
    }

    #[test]
    fn split_rejects_non_normalizer() {
        assert!(split_coset_tables(&mod3_group(1)).is_err());
        let c = cartan(5, 1, Cartan::with_d(2), guard()).unwrap();
        assert!(split_coset_tables(&c).is_err());
    }

    #[test]
    fn fit_reproduces_mod3_formula() {
        let t3 = measure_table(&mod3_group(3));
        let t4 = measure_table(&mod3_group(4));
        let model = fit_tail(&t3, Some(&t4)).unwrap();
        for a in 0..8u32 {
            for b in 0..8u32 {
                let expected = match (a, b) {
                    (0, 0) => Rational::zero(),
                    (0, b) => Rational::from(5) * Rational::power(3, -(b as i64) - 1),
                    (a, 0) => Rational::from(8) * Rational::power(3, -4 * a as i64),
                    (a, b) => Rational::from(32) * Rational::power(3, -4 * a as i64 - b as i64 - 1),
                };
                assert_eq!(model.value(a, b), expected, "({a},{b})");
            }
        }
        assert_eq!(model.total().unwrap(), Rational::one());
        let on_level4_alone = fit_tail(&t4, None).unwrap();
        assert_eq!(on_level4_alone.total().unwrap(), Rational::one());
        assert_eq!(on_level4_alone.value(5, 7), model.value(5, 7));
    }

    #[test]
    fn fit_gl2_mod2_is_normalized() {
        let t4 = measure_table(&gl2_full(2, 4, guard()).unwrap());
        let t5 = measure_table(&gl2_full(2, 5, guard()).unwrap());
        let model = fit_tail(&t4, Some(&t5)).unwrap();
        assert_eq!(model.total().unwrap(), Rational::one());
    }

    #[test]
    fn fit_needs_enough_levels() {
        let t2 = measure_table(&gl2_full(2, 2, guard()).unwrap());
        assert!(matches!(fit_tail(&t2, None), Err(Error::LevelTooLow { .. })));
        let t1 = measure_table(&gl2_full(2, 1, guard()).unwrap());
        assert!(matches!(fit_tail(&t1, Some(&t2)), Err(Error::LevelTooLow { .. })));
    }

    #[test]
    fn fit_rejects_tampered_tables() {
        let mut t4 = measure_table(&mod3_group(4));
        let bump = r("1/3000");
        *t4.entries.get_mut(&(0, 3)).unwrap() += &bump;
        t4.censored[0] = &t4.censored[0] - &bump;
        assert!(matches!(fit_tail(&t4, None), Err(Error::FitRejected(_))));
    }

    #[test]
    fn zero_tails_fit_with_zero_coefficients() {
        let c = cartan(3, 4, Cartan::nonsplit_for(3), guard()).unwrap();
        let t = measure_table(&c);
        let model = fit_tail(&t, None).unwrap();
        assert_eq!(model.total().unwrap(), Rational::one());
        for p in model.pieces() {
            if p.b != Span::Single(0) && p.b != Span::From(0) {
                assert!(p.c.is_zero(), "{p:?}");
            }
        }
    }

    #[test]
    fn lifted_tables_match_enumeration() {
        let base = gl2_full(2, 1, guard()).unwrap();
        for n in 1..=4 {
            let direct = measure_table(&gl2_full(2, n, guard()).unwrap());
            let lifted = lifted_measure_table(&base, n, guard()).unwrap();
            assert_eq!(direct.entries, lifted.entries, "level {n}");
            assert_eq!(direct.censored, lifted.censored);
        }
        let base = mod3_group(1);
        for n in 2..=3 {
            let direct = measure_table(&mod3_group(n));
            let lifted = lifted_measure_table(&base, n, guard()).unwrap();
            assert_eq!(direct.entries, lifted.entries);
            assert_eq!(direct.censored, lifted.censored);
        }
        let base2 = preimage_group(&base, 2, guard()).unwrap();
        let direct = measure_table(&mod3_group(3));
        assert_eq!(lifted_measure_table(&base2, 3, guard()).unwrap().entries, direct.entries);
        let t = lifted_measure_table(&gl2_full(3, 1, guard()).unwrap(), 4, guard()).unwrap();
        assert_eq!(t.total(), Rational::one());
    }

    #[test]
    fn model_algebra() {
        let m = TailModel::from_parts(
            2,
            1,
            1,
            |_, _| r("1/2"),
            |_| (Rational::one(), 1, 1),
            |_| (Rational::one(), 1, 1),
            (Rational::one(), 1, 1),
        );
        let fine = m.refine(3, 2);
        for a in 0..6 {
            for b in 0..6 {
                assert_eq!(m.value(a, b), fine.value(a, b));
            }
        }
        assert_eq!(m.total().unwrap(), fine.total().unwrap());
        let sq = m.multiply(&fine).unwrap();
        assert_eq!(sq.value(2, 3), m.value(2, 3) * m.value(2, 3));
        let w = m.weighted(2, 1);
        assert_eq!(w.value(1, 2), m.value(1, 2) * Rational::power(2, -4));
        let flat = TailModel::pure(2, Rational::one(), 0, 1);
        assert!(matches!(flat.total(), Err(Error::UncoveredRegion(_))));
        let zero = TailModel::pure(2, Rational::zero(), 0, 0);
        assert_eq!(zero.total().unwrap(), Rational::zero());
    }

    #[test]
    fn table_json_shape() {
        let t = measure_table(&gl2_full(2, 1, guard()).unwrap());
        let v = t.to_json();
        assert_eq!(v["entries"][0]["mu"], "1/3");
        assert_eq!(v["undetermined"], "2/3");
    }
}
