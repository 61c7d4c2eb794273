//! Finite-level arboreal images inside `(Z/ℓⁿ)² ⋊ GL₂(Z/ℓⁿ)`.
//!
//! A group is stored as its matrix projection `G(n)`, the translation
//! subgroup `L = W_n(I)`, and one translation `t₀(M)` per matrix; every fiber
//! is then `W_n(M) = t₀(M) + L`.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exactnum::Rational;
use crate::matgroups::{generated_subgroup, preimage_group, GroupSpec, MatrixGroupLevel, SizeGuard};
use crate::measures::TailModel;
use crate::modmatrix::{
    apply_raw, code_raw, elementary_valuations_raw, minus_identity_raw, mul_raw, reduce_raw,
    Entries, ResidueMatrix, ResidueRing, Vector, IDENTITY,
};

fn egcd(a: i64, b: i64) -> (i64, i64, i64) {
    let (mut r0, mut r1, mut s0, mut s1, mut t0, mut t1) = (a, b, 1i64, 0i64, 0i64, 1i64);
    while r1 != 0 {
        let q = r0.div_euclid(r1);
        (r0, r1) = (r1, r0 - q * r1);
        (s0, s1) = (s1, s0 - q * s1);
        (t0, t1) = (t1, t0 - q * t1);
    }
    if r0 < 0 {
        (-r0, -s0, -t0)
    } else {
        (r0, s0, t0)
    }
}

/// A subgroup of `(Z/NZ)²`, kept as the Hermite basis `(p, q), (0, r)` of
/// its preimage in Z², with `p | N` and `r | N`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Subgroup2 {
    modulus: i64,
    p: i64,
    q: i64,
    r: i64,
}

impl Subgroup2 {
    pub fn generated(modulus: u32, gens: impl IntoIterator<Item = Vector>) -> Self {
        let n = modulus as i64;
        let (mut a, mut b, mut r) = (n, 0i64, n);
        for [c, d] in gens {
            let (c, d) = (c as i64, d as i64);
            let (g, s, t) = egcd(a, c);
            if g == 0 {
                continue;
            }
            let other = ((c / g) as i128 * b as i128 - (a / g) as i128 * d as i128)
                .rem_euclid(r as i128) as i64;
            (a, b) = (g, ((s as i128 * b as i128 + t as i128 * d as i128).rem_euclid(r as i128)) as i64);
            r = egcd(r, other).0;
            b = b.rem_euclid(r);
        }
        Subgroup2 {
            modulus: n,
            p: a,
            q: b.rem_euclid(r),
            r,
        }
    }

    /// `ℓᵏ·(Z/NZ)²`.
    pub fn scaled_full(modulus: u32, scale: u32) -> Self {
        Subgroup2::generated(modulus, [[scale % modulus, 0], [0, scale % modulus]])
    }

    pub fn order(&self) -> u64 {
        ((self.modulus / self.p) * (self.modulus / self.r)) as u64
    }

    pub fn contains(&self, v: &Vector) -> bool {
        let (x, y) = (v[0] as i64, v[1] as i64);
        if x % self.p != 0 {
            return false;
        }
        let k = x / self.p;
        (y - k * self.q).rem_euclid(self.r) == 0
    }

    pub fn basis(&self) -> [Vector; 2] {
        let n = self.modulus;
        [
            [(self.p % n) as u32, (self.q % n) as u32],
            [0, (self.r % n) as u32],
        ]
    }

    pub fn join(&self, other: &Subgroup2) -> Subgroup2 {
        let [u, v] = other.basis();
        Subgroup2::generated(self.modulus as u32, self.basis().into_iter().chain([u, v]))
    }

    pub fn elements(&self) -> Vec<Vector> {
        let n = self.modulus;
        let mut out = Vec::with_capacity(self.order() as usize);
        for i in 0..n / self.p {
            for j in 0..n / self.r {
                let x = (i * self.p).rem_euclid(n);
                let y = (i * self.q + j * self.r).rem_euclid(n);
                out.push([x as u32, y as u32]);
            }
        }
        out
    }
}

/// An element `(t, M)` of the semidirect product.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ArborealElement {
    pub t: Vector,
    pub m: ResidueMatrix,
}

impl ArborealElement {
    pub fn new(t: Vector, m: ResidueMatrix) -> Self {
        let ring = m.ring();
        let q = ring.modulus();
        ArborealElement {
            t: [t[0] % q, t[1] % q],
            m,
        }
    }

    pub fn identity(ring: ResidueRing) -> Self {
        ArborealElement {
            t: [0, 0],
            m: ResidueMatrix::identity(ring),
        }
    }

    /// `(t₁, M₁)·(t₂, M₂) = (t₁ + M₁t₂, M₁M₂)`.
    pub fn compose(&self, other: &ArborealElement) -> Result<ArborealElement> {
        let ring = self.m.ring();
        let m = self.m.mul(&other.m)?;
        let mt = apply_raw(&ring, &self.m.entries(), &other.t);
        Ok(ArborealElement {
            t: [ring.add(self.t[0], mt[0]), ring.add(self.t[1], mt[1])],
            m,
        })
    }

    pub fn pow(&self, k: u64) -> ArborealElement {
        let mut acc = ArborealElement::identity(self.m.ring());
        for _ in 0..k {
            acc = acc.compose(self).expect("same ring");
        }
        acc
    }
}

/// `δ(a, b)` at finite level; `empty` marks a class with no matrices.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaValue {
    pub value: Rational,
    pub empty: bool,
}

/// Per-matrix data: `im(M − I) + L` and whether it meets the fiber.
struct FiberStats {
    /// `#im(M − I)`.
    image: u64,
    /// `#(im(M − I) + L)`.
    join: u64,
    hit: bool,
}

#[derive(Clone, Debug)]
pub struct ArborealGroupLevel {
    projection: MatrixGroupLevel,
    lattice: Subgroup2,
    offsets: Vec<Vector>,
}

impl ArborealGroupLevel {
    pub fn ring(&self) -> ResidueRing {
        self.projection.ring()
    }

    pub fn ell(&self) -> u32 {
        self.projection.ell()
    }

    pub fn level(&self) -> u32 {
        self.projection.level()
    }

    pub fn projection(&self) -> &MatrixGroupLevel {
        &self.projection
    }

    /// `W_n(I)`.
    pub fn translations(&self) -> &Subgroup2 {
        &self.lattice
    }

    pub fn order(&self) -> u128 {
        self.projection.order() as u128 * self.lattice.order() as u128
    }

    fn index(&self, m: &ResidueMatrix) -> Result<usize> {
        if m.ring() != self.ring() {
            return Err(Error::NotInProjection);
        }
        self.projection
            .index_of(&m.entries())
            .ok_or(Error::NotInProjection)
    }

    pub fn contains(&self, e: &ArborealElement) -> bool {
        let Ok(i) = self.index(&e.m) else {
            return false;
        };
        let ring = self.ring();
        let t0 = self.offsets[i];
        self.lattice
            .contains(&[ring.sub(e.t[0], t0[0]), ring.sub(e.t[1], t0[1])])
    }

    /// `W_n(M) = {t : (t, M) ∈ A}`.
    pub fn kummer_fiber(&self, m: &ResidueMatrix) -> Result<Vec<Vector>> {
        let i = self.index(m)?;
        let ring = self.ring();
        let t0 = self.offsets[i];
        let mut fiber: Vec<Vector> = self
            .lattice
            .elements()
            .into_iter()
            .map(|v| [ring.add(v[0], t0[0]), ring.add(v[1], t0[1])])
            .collect();
        fiber.sort_unstable();
        Ok(fiber)
    }

    /// Every element, for small groups.
    pub fn elements(&self) -> Vec<ArborealElement> {
        let ring = self.ring();
        let l = self.lattice.elements();
        self.projection
            .raw_elements()
            .iter()
            .zip(&self.offsets)
            .flat_map(|(m, t0)| {
                let m = ResidueMatrix::from_entries(ring, *m);
                l.iter().map(move |v| ArborealElement {
                    t: [ring.add(v[0], t0[0]), ring.add(v[1], t0[1])],
                    m,
                })
            })
            .collect()
    }

    fn stats(&self, i: usize) -> FiberStats {
        let ring = self.ring();
        let x = minus_identity_raw(&ring, &self.projection.raw_elements()[i]);
        let image = Subgroup2::generated(ring.modulus(), [[x[0], x[2]], [x[1], x[3]]]);
        let join = image.join(&self.lattice);
        FiberStats {
            image: image.order(),
            join: join.order(),
            hit: join.contains(&self.offsets[i]),
        }
    }

    fn log_ell(&self, ratio: u64) -> u32 {
        let l = self.ell() as u64;
        let mut k = 0;
        let mut x = ratio;
        while x > 1 {
            debug_assert_eq!(x % l, 0);
            x /= l;
            k += 1;
        }
        k
    }

    /// `−log_ℓ w(M)`, or `None` when `w(M) = 0`.
    fn w_exponent(&self, i: usize) -> Option<u32> {
        let s = self.stats(i);
        s.hit
            .then(|| self.log_ell(s.join / self.lattice.order()))
    }

    /// `w_n(M) = #(im(M − I) ∩ W_n(M)) / #im(M − I)`.
    pub fn w_value(&self, m: &ResidueMatrix) -> Result<Rational> {
        let i = self.index(m)?;
        Ok(match self.w_exponent(i) {
            Some(j) => Rational::power(self.ell() as u64, -(j as i64)),
            None => Rational::zero(),
        })
    }

    /// `F = ℓ^{2n} / #W_n(I)`.
    pub fn failure_constant(&self) -> Rational {
        let q = self.ring().modulus() as u64;
        Rational::ratio(q * q, self.lattice.order())
    }

    /// Proportion of `(t, M)` with `t ∈ im(M − I)`: the upper approximation
    /// `D_n` of the density.
    pub fn fixed_density_level(&self) -> Rational {
        // #(im ∩ W)/#L = #im/#(im + L) when the fiber meets im + L.
        let n = self.level() as usize;
        let hist = (0..self.projection.order())
            .into_par_iter()
            .fold(
                || vec![0u64; 2 * n + 1],
                |mut h, i| {
                    let s = self.stats(i);
                    if s.hit {
                        h[self.log_ell(s.join / s.image) as usize] += 1;
                    }
                    h
                },
            )
            .reduce(
                || vec![0u64; 2 * n + 1],
                |mut x, y| {
                    x.iter_mut().zip(y).for_each(|(a, b)| *a += b);
                    x
                },
            );
        let ell = self.ell() as u64;
        let total: Rational = hist
            .iter()
            .enumerate()
            .map(|(k, &c)| Rational::from(c as i64) * Rational::power(ell, -(k as i64)))
            .sum();
        total / Rational::from(self.projection.order() as i64)
    }

    /// `[hi − tail, hi]` with `hi = D_n`.
    pub fn density_interval(&self, tail: &Rational) -> (Rational, Rational) {
        let hi = self.fixed_density_level();
        (&hi - tail, hi)
    }

    /// Averages of `w` over every class visible at this level.
    pub fn delta_grid(&self) -> BTreeMap<(u32, u32), DeltaValue> {
        let ring = self.ring();
        let n = self.level();
        let width = 2 * n as usize + 2;
        let hist = (0..self.projection.order())
            .into_par_iter()
            .fold(HashMap::<(u32, u32), Vec<u64>>::new, |mut h, i| {
                let x = minus_identity_raw(&ring, &self.projection.raw_elements()[i]);
                let (e1, e2) = elementary_valuations_raw(&ring, &x);
                if e2 < n {
                    let slot = h.entry((e1, e2 - e1)).or_insert_with(|| vec![0; width]);
                    match self.w_exponent(i) {
                        Some(j) => slot[j as usize] += 1,
                        None => slot[width - 1] += 1,
                    }
                }
                h
            })
            .reduce(HashMap::new, |mut x, y| {
                for (k, v) in y {
                    let slot = x.entry(k).or_insert_with(|| vec![0; width]);
                    slot.iter_mut().zip(v).for_each(|(a, b)| *a += b);
                }
                x
            });
        let ell = self.ell() as u64;
        let mut out = BTreeMap::new();
        for a in 0..n {
            for b in 0..n - a {
                let value = match hist.get(&(a, b)) {
                    None => DeltaValue {
                        value: Rational::zero(),
                        empty: true,
                    },
                    Some(h) => {
                        let count: u64 = h.iter().sum();
                        let sum: Rational = h[..width - 1]
                            .iter()
                            .enumerate()
                            .map(|(j, &c)| Rational::from(c as i64) * Rational::power(ell, -(j as i64)))
                            .sum();
                        DeltaValue {
                            value: sum / Rational::from(count as i64),
                            empty: false,
                        }
                    }
                };
                out.insert((a, b), value);
            }
        }
        out
    }

    /// `δ(a, b)` at this level.
    pub fn delta_ab(&self, a: u32, b: u32) -> Result<DeltaValue> {
        if a + b >= self.level() {
            return Err(Error::LevelTooLow {
                level: self.level(),
                reason: format!("δ({a},{b}) needs level > {}", a + b),
            });
        }
        Ok(self.delta_grid().remove(&(a, b)).expect("visible class"))
    }

    /// All `(t, M)` at level n+1 reducing into this group.
    pub fn lift(&self, guard: SizeGuard) -> Result<ArborealGroupLevel> {
        let n = self.level();
        let projection = preimage_group(&self.projection, n + 1, guard)?;
        let ring = projection.ring();
        let q_old = self.ring().modulus();
        let lattice = Subgroup2::generated(
            ring.modulus(),
            self.lattice
                .basis()
                .into_iter()
                .chain([[q_old, 0], [0, q_old]]),
        );
        guard.check(projection.order() as u128 * lattice.order() as u128)?;
        let below = self.ring();
        let offsets = projection
            .raw_elements()
            .par_iter()
            .map(|m| {
                let i = self
                    .projection
                    .index_of(&reduce_raw(&below, m))
                    .expect("preimage reduces into the base group");
                self.offsets[i]
            })
            .collect();
        Ok(ArborealGroupLevel {
            projection,
            lattice,
            offsets,
        })
    }

    /// Fits a constant-per-piece model of `δ` from the visible grid.
    ///
    /// Thresholds `(A, B)` are tried in order of increasing `A + B`; the model
    /// is accepted when every non-empty visible class of this level (and of
    /// `confirm`, if given) matches. Pieces with no non-empty visible class
    /// get value 0.
    pub fn delta_model(&self, confirm: Option<&ArborealGroupLevel>) -> Result<TailModel> {
        let grids: Vec<_> = std::iter::once(self)
            .chain(confirm)
            .map(|g| g.delta_grid())
            .collect();
        let n = self.level();
        let ell = self.ell();
        let lookup = |a: u32, b: u32| -> Option<Rational> {
            grids.iter().find_map(|g| {
                g.get(&(a, b))
                    .filter(|d| !d.empty)
                    .map(|d| d.value.clone())
            })
        };
        let first_in = |cells: Vec<(u32, u32)>| {
            cells
                .into_iter()
                .find_map(|(a, b)| lookup(a, b))
                .unwrap_or_else(Rational::zero)
        };
        let top = confirm.map_or(n, |c| c.level().max(n));
        for s in 0..n {
            for a_split in 0..=s {
                let b_split = s - a_split;
                let model = TailModel::from_parts(
                    ell,
                    a_split,
                    b_split,
                    |a, b| lookup(a, b).unwrap_or_else(Rational::zero),
                    |a| (first_in((b_split..top).map(|b| (a, b)).collect()), 0, 0),
                    |b| (first_in((a_split..top).map(|a| (a, b)).collect()), 0, 0),
                    (
                        first_in(
                            (0..top)
                                .flat_map(|k| (0..=k).map(move |i| (a_split + i, b_split + k - i)))
                                .collect(),
                        ),
                        0,
                        0,
                    ),
                );
                let fits = grids.iter().all(|g| {
                    g.iter()
                        .all(|(&(a, b), d)| d.empty || model.value(a, b) == d.value)
                });
                if fits {
                    return Ok(model);
                }
            }
        }
        Err(Error::FitRejected(format!(
            "δ is not piecewise constant on the level-{n} grid; raise the level"
        )))
    }
}

/// `{(t, M) : M ∈ G, t ∈ ℓ^{min(d,n)}(Z/ℓⁿ)²}`.
pub fn standard_arboreal(
    g: &MatrixGroupLevel,
    d: u32,
    guard: SizeGuard,
) -> Result<ArborealGroupLevel> {
    let ring = g.ring();
    let lattice = Subgroup2::scaled_full(ring.modulus(), ring.ell_pow(d.min(ring.level())));
    guard.check(g.order() as u128 * lattice.order() as u128)?;
    Ok(ArborealGroupLevel {
        projection: g.clone(),
        lattice,
        offsets: vec![[0, 0]; g.order()],
    })
}

/// The subgroup generated by `gens` under the semidirect law.
pub fn generated_arboreal(
    ell: u32,
    n: u32,
    gens: &[ArborealElement],
    guard: SizeGuard,
) -> Result<ArborealGroupLevel> {
    let ring = ResidueRing::new(ell, n)?;
    let q = ring.modulus() as u128;
    for g in gens {
        if g.m.ring() != ring {
            let r = g.m.ring();
            return Err(Error::RingMismatch(r.ell(), r.level(), ell, n));
        }
        if !g.m.is_invertible() {
            return Err(Error::NotInvertible {
                modulus: ring.modulus() as u64,
            });
        }
    }
    let code = |t: &Vector, m: &Entries| {
        (code_raw(&ring, m) as u128 * q + t[0] as u128) * q + t[1] as u128
    };
    let raw: Vec<(Vector, Entries)> = gens.iter().map(|g| (g.t, g.m.entries())).collect();
    let start = ([0u32, 0u32], IDENTITY);
    let mut seen = HashSet::from([code(&start.0, &start.1)]);
    let mut queue = VecDeque::from([start]);
    let mut fibers: HashMap<u64, Vec<Vector>> = HashMap::new();
    while let Some((t, m)) = queue.pop_front() {
        fibers.entry(code_raw(&ring, &m)).or_default().push(t);
        for (gt, gm) in &raw {
            let mt = apply_raw(&ring, &m, gt);
            let nt = [ring.add(t[0], mt[0]), ring.add(t[1], mt[1])];
            let nm = mul_raw(&ring, &m, gm);
            if seen.insert(code(&nt, &nm)) {
                if seen.len() as u128 > guard.0 as u128 {
                    return Err(Error::SizeGuard {
                        requested: seen.len() as u128,
                        limit: guard.0,
                    });
                }
                queue.push_back((nt, nm));
            }
        }
    }
    let matrices: Vec<ResidueMatrix> = gens.iter().map(|g| g.m).collect();
    let projection = generated_subgroup(ell, n, &matrices, guard)?;
    if projection.order() != fibers.len() {
        return Err(Error::ClosureAudit(
            "projection of the generated group disagrees with the generated projection".into(),
        ));
    }
    let identity_fiber = &fibers[&code_raw(&ring, &IDENTITY)];
    let lattice = Subgroup2::generated(ring.modulus(), identity_fiber.iter().copied());
    if lattice.order() != identity_fiber.len() as u64 {
        return Err(Error::ClosureAudit("W(I) is not a subgroup".into()));
    }
    let mut offsets = Vec::with_capacity(projection.order());
    for m in projection.raw_elements() {
        let fiber = &fibers[&code_raw(&ring, m)];
        let t0 = fiber[0];
        let translate = fiber.len() == identity_fiber.len()
            && fiber
                .iter()
                .all(|t| lattice.contains(&[ring.sub(t[0], t0[0]), ring.sub(t[1], t0[1])]));
        if !translate {
            return Err(Error::ClosureAudit(format!(
                "fiber over {m:?} is not a translate of W(I)"
            )));
        }
        offsets.push(t0);
    }
    Ok(ArborealGroupLevel {
        projection,
        lattice,
        offsets,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum KummerSpec {
    Defect {
        d: u32,
    },
    /// Generators `[t, M]` of the arboreal group.
    Explicit {
        elements: Vec<([i64; 2], [[i64; 2]; 2])>,
    },
}

/// JSON description of an arboreal group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArborealSpec {
    pub ell: u32,
    pub level: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<GroupSpec>,
    pub kummer: KummerSpec,
}

impl ArborealSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn at_level(&self, level: u32) -> ArborealSpec {
        ArborealSpec {
            level,
            image: self.image.as_ref().map(|g| g.at_level(level)),
            ..self.clone()
        }
    }

    pub fn build(&self, guard: SizeGuard) -> Result<ArborealGroupLevel> {
        let image = match &self.image {
            Some(spec) => {
                if (spec.ell, spec.level) != (self.ell, self.level) {
                    return Err(Error::InvalidInput(
                        "image spec must share ell and level with the arboreal spec".into(),
                    ));
                }
                Some(spec.build(guard)?)
            }
            None => None,
        };
        match &self.kummer {
            KummerSpec::Defect { d } => {
                let g = image.ok_or_else(|| {
                    Error::InvalidInput("defect mode needs an image group".into())
                })?;
                standard_arboreal(&g, *d, guard)
            }
            KummerSpec::Explicit { elements } => {
                let ring = ResidueRing::new(self.ell, self.level)?;
                let gens: Vec<ArborealElement> = elements
                    .iter()
                    .map(|(t, m)| {
                        ArborealElement::new(
                            [ring.reduce(t[0]), ring.reduce(t[1])],
                            ResidueMatrix::from_rows(ring, *m),
                        )
                    })
                    .collect();
                let a = generated_arboreal(self.ell, self.level, &gens, guard)?;
                if let Some(g) = image {
                    if g.raw_elements() != a.projection.raw_elements() {
                        return Err(Error::InvalidInput(
                            "explicit elements do not project onto the stated image".into(),
                        ));
                    }
                    let cartan = g.cartan();
                    let mut a = a;
                    if let Some(c) = cartan {
                        a.projection = a.projection.with_cartan(c)?;
                    }
                    return Ok(a);
                }
                Ok(a)
            }
        }
    }
}
