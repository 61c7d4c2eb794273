//! Finite subgroups of GL₂(Z/ℓⁿZ): the full group, Cartan subgroups and
//! their normalizers, groups generated by explicit matrices, and preimages of
//! a level-m group at a higher level.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::modmatrix::{
    code_raw, det_raw, inv_raw, mul_raw, reduce_raw, Entries, ResidueMatrix, ResidueRing, IDENTITY,
};

/// Default cap on the number of enumerated elements.
pub const DEFAULT_SIZE_GUARD: u64 = 8_000_000;

/// Environment variable overriding [`DEFAULT_SIZE_GUARD`].
pub const SIZE_GUARD_ENV: &str = "ORDER_DENSITY_SIZE_GUARD";

/// Groups at or below this order get an exhaustive pairwise closure audit.
pub const FULL_AUDIT_LIMIT: usize = 2_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SizeGuard(pub u64);

impl SizeGuard {
    pub fn from_env() -> Self {
        std::env::var(SIZE_GUARD_ENV)
            .ok()
            .and_then(|v| v.trim().parse().ok())
            .map(SizeGuard)
            .unwrap_or_default()
    }

    pub fn check(&self, requested: u128) -> Result<()> {
        if requested > self.0 as u128 {
            Err(Error::SizeGuard {
                requested,
                limit: self.0,
            })
        } else {
            Ok(())
        }
    }
}

impl Default for SizeGuard {
    fn default() -> Self {
        SizeGuard(DEFAULT_SIZE_GUARD)
    }
}

/// A Cartan subgroup given by the invertible elements of `Z/ℓⁿ[φ]`.
///
/// `Companion { r, d }` uses `φ = [[0, d], [1, r]]`, so `φ² = rφ + d`.
/// `Diagonal` uses `φ = diag(1, 0)`, i.e. the diagonal matrices.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "model")]
pub enum Cartan {
    Companion { r: i64, d: i64 },
    Diagonal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CartanKind {
    Split,
    Nonsplit,
    Ramified,
}

impl Cartan {
    /// The `(0, d)` family.
    pub fn with_d(d: i64) -> Self {
        Cartan::Companion { r: 0, d }
    }

    /// Canonical split Cartan at ℓ: `(0, 1)` for odd ℓ, `(1, 0)` at ℓ = 2.
    pub fn split_for(ell: u32) -> Self {
        if ell == 2 {
            Cartan::Companion { r: 1, d: 0 }
        } else {
            Cartan::Companion { r: 0, d: 1 }
        }
    }

    /// Canonical nonsplit Cartan at ℓ: `(0, ε)` with ε the least non-residue
    /// for odd ℓ, and `(1, 1)` (φ² = φ + 1) at ℓ = 2.
    pub fn nonsplit_for(ell: u32) -> Self {
        if ell == 2 {
            return Cartan::Companion { r: 1, d: 1 };
        }
        let l = ell as u64;
        let eps = (2..l)
            .find(|&x| (1..l).all(|y| (y * y) % l != x))
            .expect("odd primes have non-residues");
        Cartan::Companion { r: 0, d: eps as i64 }
    }

    pub fn kind(&self, ell: u32) -> CartanKind {
        let (r, d) = match *self {
            Cartan::Diagonal => return CartanKind::Split,
            Cartan::Companion { r, d } => (r, d),
        };
        let l = ell as i64;
        if ell == 2 {
            return match (r.rem_euclid(2), d.rem_euclid(2)) {
                (1, 0) => CartanKind::Split,
                (1, _) => CartanKind::Nonsplit,
                _ => CartanKind::Ramified,
            };
        }
        let disc = (r * r + 4 * d).rem_euclid(l);
        if disc == 0 {
            CartanKind::Ramified
        } else if (1..l).any(|y| (y * y) % l == disc) {
            CartanKind::Split
        } else {
            CartanKind::Nonsplit
        }
    }

    pub fn phi(&self, ring: &ResidueRing) -> Entries {
        match *self {
            Cartan::Companion { r, d } => [0, ring.reduce(d), 1, ring.reduce(r)],
            Cartan::Diagonal => [1, 0, 0, 0],
        }
    }

    /// Coset representative `w` of the normalizer: `w² = I` and
    /// `wφw⁻¹ = rI − φ`. For the `(0, d)` family this is `diag(1, −1)`.
    pub fn w(&self, ring: &ResidueRing) -> Entries {
        match *self {
            Cartan::Companion { r, .. } => [1, ring.reduce(r), 0, ring.reduce(-1)],
            Cartan::Diagonal => [0, 1, 1, 0],
        }
    }

    /// `xI + yφ`.
    pub fn element(&self, ring: &ResidueRing, x: u32, y: u32) -> Entries {
        let phi = self.phi(ring);
        [
            ring.add(x, ring.mul(y, phi[0])),
            ring.mul(y, phi[1]),
            ring.mul(y, phi[2]),
            ring.add(x, ring.mul(y, phi[3])),
        ]
    }

    /// Coordinates `(x, y)` with `m = xI + yφ`, if `m` lies in the algebra.
    pub fn coords(&self, ring: &ResidueRing, m: &Entries) -> Option<(u32, u32)> {
        let (x, y) = match *self {
            Cartan::Companion { .. } => (m[0], m[2]),
            Cartan::Diagonal => (m[3], ring.sub(m[0], m[3])),
        };
        (self.element(ring, x, y) == *m).then_some((x, y))
    }

    pub fn contains(&self, ring: &ResidueRing, m: &Entries) -> bool {
        self.coords(ring, m).is_some()
    }

    /// Membership in the nontrivial coset `wC`.
    pub fn in_other_coset(&self, ring: &ResidueRing, m: &Entries) -> bool {
        self.contains(ring, &mul_raw(ring, &self.w(ring), m))
    }

    fn det(&self, ring: &ResidueRing, x: u32, y: u32) -> u32 {
        det_raw(ring, &self.element(ring, x, y))
    }
}

impl fmt::Display for Cartan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cartan::Companion { r, d } => write!(f, "cartan(r={r},d={d})"),
            Cartan::Diagonal => write!(f, "cartan(diagonal)"),
        }
    }
}

/// The algebraic group a preimage is taken in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ambient {
    Gl2,
    Cartan(Cartan),
    Normalizer(Cartan),
}

impl Ambient {
    /// Dimension of the ambient group (exponent of ℓ in the level-step kernel).
    pub fn dimension(&self) -> u32 {
        match self {
            Ambient::Gl2 => 4,
            Ambient::Cartan(_) | Ambient::Normalizer(_) => 2,
        }
    }

    pub fn cartan(&self) -> Option<Cartan> {
        match *self {
            Ambient::Gl2 => None,
            Ambient::Cartan(c) | Ambient::Normalizer(c) => Some(c),
        }
    }

    fn contains(&self, ring: &ResidueRing, m: &Entries) -> bool {
        match self {
            Ambient::Gl2 => ring.is_unit(det_raw(ring, m)),
            Ambient::Cartan(c) => c.contains(ring, m),
            Ambient::Normalizer(c) => c.contains(ring, m) || c.in_other_coset(ring, m),
        }
    }

    /// Generators of the kernel of reduction from level `n` to level `m`.
    fn kernel_generators(&self, ring: &ResidueRing, m: u32) -> Vec<Entries> {
        let mut gens = Vec::new();
        for k in m..ring.level() {
            let s = ring.ell_pow(k);
            gens.push([1 + s, 0, 0, 1 + s]);
            match self {
                Ambient::Gl2 => {
                    gens.push([1 + s, 0, 0, 1]);
                    gens.push([1, s, 0, 1]);
                    gens.push([1, 0, s, 1]);
                    gens.push([1, 0, 0, 1 + s]);
                }
                Ambient::Cartan(c) | Ambient::Normalizer(c) => {
                    gens.push(c.element(ring, 1, s));
                }
            }
        }
        gens
    }

    /// One lift of `g` inside the ambient.
    fn canonical_lift(&self, base: &ResidueRing, ring: &ResidueRing, g: &Entries) -> Result<Entries> {
        match self {
            Ambient::Gl2 => Ok(*g),
            _ => self.lift_by_coords(base, ring, g),
        }
    }

    fn lift_by_coords(&self, base: &ResidueRing, ring: &ResidueRing, g: &Entries) -> Result<Entries> {
        let cartan = self.cartan().expect("Cartan ambient");
        if let Some((x, y)) = cartan.coords(base, g) {
            return Ok(cartan.element(ring, x, y));
        }
        let wg = mul_raw(base, &cartan.w(base), g);
        let (x, y) = cartan.coords(base, &wg).ok_or_else(not_in_ambient)?;
        Ok(mul_raw(ring, &cartan.w(ring), &cartan.element(ring, x, y)))
    }

    /// Every lift of `g` (given at level `base`) to `ring` inside the ambient.
    fn lifts(
        &self,
        base: &ResidueRing,
        ring: &ResidueRing,
        g: &Entries,
        out: &mut Vec<Entries>,
    ) -> Result<()> {
        let step = base.modulus();
        let count = ring.modulus() / step;
        match self {
            Ambient::Gl2 => {
                for a in 0..count {
                    for b in 0..count {
                        for c in 0..count {
                            for d in 0..count {
                                out.push([
                                    g[0] + step * a,
                                    g[1] + step * b,
                                    g[2] + step * c,
                                    g[3] + step * d,
                                ]);
                            }
                        }
                    }
                }
            }
            Ambient::Cartan(cartan) | Ambient::Normalizer(cartan) => {
                let (twist, inner) = if let Some(xy) = cartan.coords(base, g) {
                    (None, xy)
                } else if matches!(self, Ambient::Normalizer(_)) {
                    let wg = mul_raw(base, &cartan.w(base), g);
                    let xy = cartan.coords(base, &wg).ok_or_else(not_in_ambient)?;
                    (Some(cartan.w(ring)), xy)
                } else {
                    return Err(not_in_ambient());
                };
                for s in 0..count {
                    for t in 0..count {
                        let c = cartan.element(ring, inner.0 + step * s, inner.1 + step * t);
                        out.push(match &twist {
                            Some(w) => mul_raw(ring, w, &c),
                            None => c,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

fn not_in_ambient() -> Error {
    Error::InvalidInput("base group element is not in the ambient group".into())
}

/// How a group was constructed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupTag {
    Full,
    Cartan(Cartan),
    Normalizer(Cartan),
    Generated,
    Preimage { base_level: u32, ambient: Ambient },
}

/// A finite subgroup `G(n)` of GL₂(Z/ℓⁿZ) with its full element list.
#[derive(Clone, Debug)]
pub struct MatrixGroupLevel {
    ring: ResidueRing,
    elements: Vec<Entries>,
    generators: Vec<Entries>,
    tag: GroupTag,
    cartan: Option<Cartan>,
}

impl MatrixGroupLevel {
    fn from_parts(
        ring: ResidueRing,
        mut elements: Vec<Entries>,
        generators: Vec<Entries>,
        tag: GroupTag,
        cartan: Option<Cartan>,
    ) -> Self {
        elements.sort_unstable_by_key(|m| code_raw(&ring, m));
        elements.dedup();
        MatrixGroupLevel {
            ring,
            elements,
            generators,
            tag,
            cartan,
        }
    }

    pub fn ring(&self) -> ResidueRing {
        self.ring
    }

    pub fn ell(&self) -> u32 {
        self.ring.ell()
    }

    pub fn level(&self) -> u32 {
        self.ring.level()
    }

    pub fn order(&self) -> usize {
        self.elements.len()
    }

    pub fn tag(&self) -> GroupTag {
        self.tag
    }

    /// The Cartan subgroup whose normalizer contains this group, if known.
    pub fn cartan(&self) -> Option<Cartan> {
        self.cartan
    }

    /// Elements sorted by their code.
    pub fn raw_elements(&self) -> &[Entries] {
        &self.elements
    }

    pub fn raw_generators(&self) -> &[Entries] {
        &self.generators
    }

    pub fn elements(&self) -> impl Iterator<Item = ResidueMatrix> + '_ {
        self.elements
            .iter()
            .map(|m| ResidueMatrix::from_entries(self.ring, *m))
    }

    pub fn generators(&self) -> impl Iterator<Item = ResidueMatrix> + '_ {
        self.generators
            .iter()
            .map(|m| ResidueMatrix::from_entries(self.ring, *m))
    }

    /// Position of `m` in [`raw_elements`](Self::raw_elements).
    pub fn index_of(&self, m: &Entries) -> Option<usize> {
        let code = code_raw(&self.ring, m);
        self.elements
            .binary_search_by_key(&code, |e| code_raw(&self.ring, e))
            .ok()
    }

    pub fn contains_raw(&self, m: &Entries) -> bool {
        self.index_of(m).is_some()
    }

    pub fn contains(&self, m: &ResidueMatrix) -> bool {
        m.ring() == self.ring && self.contains_raw(&m.entries())
    }

    /// Records that every element lies in the normalizer of `cartan`.
    pub fn with_cartan(mut self, cartan: Cartan) -> Result<Self> {
        let inside = self
            .elements
            .iter()
            .all(|m| cartan.contains(&self.ring, m) || cartan.in_other_coset(&self.ring, m));
        if !inside {
            return Err(Error::InvalidInput(format!(
                "group is not contained in the normalizer of {cartan}"
            )));
        }
        self.cartan = Some(cartan);
        Ok(self)
    }

    /// The image of the element set at a lower level.
    pub fn reduce_to(&self, level: u32) -> Result<MatrixGroupLevel> {
        if level > self.level() {
            return Err(Error::InvalidInput(format!(
                "cannot reduce level {} to {level}",
                self.level()
            )));
        }
        let target = self.ring.at_level(level)?;
        let elements = self.elements.iter().map(|m| reduce_raw(&target, m)).collect();
        let generators = self
            .generators
            .iter()
            .map(|m| reduce_raw(&target, m))
            .collect();
        Ok(MatrixGroupLevel::from_parts(
            target,
            elements,
            generators,
            self.tag,
            self.cartan,
        ))
    }

    /// Checks that the element set is a group.
    ///
    /// Small groups get every pairwise product checked. Larger groups with a
    /// generator list are rebuilt by a breadth-first orbit of `I` and compared
    /// with the stored set, which proves closure. Otherwise a deterministic
    /// sample of products is checked.
    pub fn audit_closure(&self) -> Result<()> {
        let ring = &self.ring;
        let fail = |what: String| Err(Error::ClosureAudit(what));
        if !self.contains_raw(&IDENTITY) {
            return fail("identity missing".into());
        }
        if !ring.gl2_order().is_multiple_of(self.order() as u128) {
            return fail(format!("order {} does not divide #GL2", self.order()));
        }
        if self.order() <= FULL_AUDIT_LIMIT {
            for a in &self.elements {
                let inv = inv_raw(ring, a).ok_or(Error::NotInvertible {
                    modulus: ring.modulus() as u64,
                })?;
                if !self.contains_raw(&inv) {
                    return fail(format!("inverse of {a:?} missing"));
                }
                for b in &self.elements {
                    if !self.contains_raw(&mul_raw(ring, a, b)) {
                        return fail(format!("{a:?}·{b:?} missing"));
                    }
                }
            }
            return Ok(());
        }
        if !self.generators.is_empty() {
            for g in &self.generators {
                if !self.contains_raw(g) {
                    return fail(format!("generator {g:?} missing"));
                }
            }
            let reached = orbit_of_identity(ring, &self.generators, self.order() as u128 + 1)?;
            if reached.len() != self.order() {
                return fail(format!(
                    "generators span {} elements, stored set has {}",
                    reached.len(),
                    self.order()
                ));
            }
            for m in &reached {
                if !self.contains_raw(m) {
                    return fail(format!("{m:?} reachable but not stored"));
                }
            }
            return Ok(());
        }
        let n = self.elements.len() as u64;
        let mut state = 0x9e37_79b9_7f4a_7c15u64;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state % n) as usize
        };
        for _ in 0..50_000 {
            let a = &self.elements[next()];
            let b = &self.elements[next()];
            if !self.contains_raw(&mul_raw(ring, a, b)) {
                return fail(format!("{a:?}·{b:?} missing"));
            }
            let inv = inv_raw(ring, a).expect("stored elements are invertible");
            if !self.contains_raw(&inv) {
                return fail(format!("inverse of {a:?} missing"));
            }
        }
        Ok(())
    }
}

/// All elements reachable from `I` by right multiplication with generators.
fn orbit_of_identity(ring: &ResidueRing, gens: &[Entries], cap: u128) -> Result<Vec<Entries>> {
    let mut seen = HashSet::new();
    let mut out = vec![IDENTITY];
    seen.insert(code_raw(ring, &IDENTITY));
    let mut head = 0;
    while head < out.len() {
        let x = out[head];
        head += 1;
        for g in gens {
            let y = mul_raw(ring, &x, g);
            if seen.insert(code_raw(ring, &y)) {
                out.push(y);
                if out.len() as u128 > cap {
                    return Err(Error::SizeGuard {
                        requested: out.len() as u128,
                        limit: cap.min(u64::MAX as u128) as u64,
                    });
                }
            }
        }
    }
    Ok(out)
}

/// A small generating set, found greedily. Used for level-1 groups only.
fn greedy_generators(ring: &ResidueRing, elements: &[Entries]) -> Vec<Entries> {
    let mut gens: Vec<Entries> = Vec::new();
    let mut span: HashSet<u64> = HashSet::from([code_raw(ring, &IDENTITY)]);
    for m in elements {
        if span.contains(&code_raw(ring, m)) {
            continue;
        }
        gens.push(*m);
        span = orbit_of_identity(ring, &gens, u128::MAX)
            .expect("uncapped")
            .iter()
            .map(|e| code_raw(ring, e))
            .collect();
    }
    gens
}

/// All of GL₂(Z/ℓⁿZ).
pub fn gl2_full(ell: u32, n: u32, guard: SizeGuard) -> Result<MatrixGroupLevel> {
    let ring = ResidueRing::new(ell, n)?;
    guard.check(ring.gl2_order())?;
    let base = ResidueRing::new(ell, 1)?;
    let level_one: Vec<Entries> = crate::modmatrix::all_matrices(base)
        .filter(|m| base.is_unit(det_raw(&base, m)))
        .collect();
    let gens = greedy_generators(&base, &level_one);
    let g1 = MatrixGroupLevel::from_parts(base, level_one, gens, GroupTag::Full, None);
    let mut g = preimage_within(&g1, n, Ambient::Gl2, guard)?;
    g.tag = GroupTag::Full;
    Ok(g)
}

/// The Cartan subgroup `{xI + yφ invertible}` at level n.
pub fn cartan(ell: u32, n: u32, cartan: Cartan, guard: SizeGuard) -> Result<MatrixGroupLevel> {
    let ring = ResidueRing::new(ell, n)?;
    let q = ring.modulus();
    guard.check((q as u128) * (q as u128))?;
    let mut elements = Vec::new();
    for x in 0..q {
        for y in 0..q {
            if ring.is_unit(cartan.det(&ring, x, y)) {
                elements.push(cartan.element(&ring, x, y));
            }
        }
    }
    let base = ring.at_level(1)?;
    let base_elems: Vec<Entries> = elements
        .iter()
        .map(|m| reduce_raw(&base, m))
        .collect::<HashSet<_>>()
        .into_iter()
        .collect::<Vec<_>>();
    let mut base_sorted = base_elems;
    base_sorted.sort_unstable_by_key(|m| code_raw(&base, m));
    let amb = Ambient::Cartan(cartan);
    let mut gens = greedy_generators(&base, &base_sorted)
        .iter()
        .map(|x| amb.canonical_lift(&base, &ring, x))
        .collect::<Result<Vec<_>>>()?;
    gens.extend(Ambient::Cartan(cartan).kernel_generators(&ring, 1));
    Ok(MatrixGroupLevel::from_parts(
        ring,
        elements,
        gens,
        GroupTag::Cartan(cartan),
        Some(cartan),
    ))
}

/// `C ∪ wC` for a group built by [`cartan`].
pub fn normalizer_cartan(c: &MatrixGroupLevel, guard: SizeGuard) -> Result<MatrixGroupLevel> {
    let GroupTag::Cartan(params) = c.tag else {
        return Err(Error::InvalidInput(
            "normalizer_cartan expects a group built by cartan()".into(),
        ));
    };
    guard.check(2 * c.order() as u128)?;
    let ring = c.ring;
    let w = params.w(&ring);
    if mul_raw(&ring, &w, &w) != IDENTITY {
        return Err(Error::ClosureAudit("w² ≠ I".into()));
    }
    let w_inv = inv_raw(&ring, &w).expect("w is an involution");
    for g in &c.generators {
        let conj = mul_raw(&ring, &mul_raw(&ring, &w, g), &w_inv);
        if !c.contains_raw(&conj) {
            return Err(Error::ClosureAudit(format!(
                "w does not normalize {params}: w·{g:?}·w⁻¹ ∉ C"
            )));
        }
    }
    let mut elements = c.elements.clone();
    elements.extend(c.elements.iter().map(|m| mul_raw(&ring, &w, m)));
    let mut gens = c.generators.clone();
    gens.push(w);
    Ok(MatrixGroupLevel::from_parts(
        ring,
        elements,
        gens,
        GroupTag::Normalizer(params),
        Some(params),
    ))
}

/// The subgroup generated by `gens` (breadth-first orbit of `I`).
pub fn generated_subgroup(
    ell: u32,
    n: u32,
    gens: &[ResidueMatrix],
    guard: SizeGuard,
) -> Result<MatrixGroupLevel> {
    let ring = ResidueRing::new(ell, n)?;
    let mut raw = Vec::with_capacity(gens.len());
    for g in gens {
        if g.ring() != ring {
            let r = g.ring();
            return Err(Error::RingMismatch(r.ell(), r.level(), ell, n));
        }
        if !g.is_invertible() {
            return Err(Error::NotInvertible {
                modulus: ring.modulus() as u64,
            });
        }
        raw.push(g.entries());
    }
    let elements = orbit_of_identity(&ring, &raw, guard.0 as u128)?;
    Ok(MatrixGroupLevel::from_parts(
        ring,
        elements,
        raw,
        GroupTag::Generated,
        None,
    ))
}

/// All matrices mod ℓⁿ reducing into `g` (taken inside GL₂).
pub fn preimage_group(g: &MatrixGroupLevel, n: u32, guard: SizeGuard) -> Result<MatrixGroupLevel> {
    preimage_within(g, n, Ambient::Gl2, guard)
}

/// All elements of the ambient group mod ℓⁿ reducing into `g`.
pub fn preimage_within(
    g: &MatrixGroupLevel,
    n: u32,
    ambient: Ambient,
    guard: SizeGuard,
) -> Result<MatrixGroupLevel> {
    let m = g.level();
    if n < m {
        return Err(Error::InvalidInput(format!(
            "preimage level {n} below base level {m}"
        )));
    }
    if n == m {
        for e in &g.elements {
            if !ambient.contains(&g.ring, e) {
                return Err(not_in_ambient());
            }
        }
        return Ok(g.clone());
    }
    let ring = g.ring.at_level(n)?;
    let ell = g.ell() as u128;
    let fiber = ell.pow(ambient.dimension() * (n - m));
    guard.check(g.order() as u128 * fiber)?;
    let mut elements = Vec::with_capacity(g.order() * fiber as usize);
    for e in &g.elements {
        if !ambient.contains(&g.ring, e) {
            return Err(not_in_ambient());
        }
        ambient.lifts(&g.ring, &ring, e, &mut elements)?;
    }
    let mut gens = g
        .generators
        .iter()
        .map(|x| ambient.canonical_lift(&g.ring, &ring, x))
        .collect::<Result<Vec<_>>>()?;
    gens.extend(ambient.kernel_generators(&ring, m));
    let cartan = ambient.cartan().or(g.cartan);
    Ok(MatrixGroupLevel::from_parts(
        ring,
        elements,
        gens,
        GroupTag::Preimage {
            base_level: m,
            ambient,
        },
        cartan,
    ))
}

/// `#ker(G(n) → G(n−1))`, the number of elements congruent to `I` mod ℓ^{n−1}.
pub fn reduction_kernel_size(g: &MatrixGroupLevel) -> Result<u64> {
    if g.level() < 2 {
        return Err(Error::LevelTooLow {
            level: g.level(),
            reason: "reduction kernel needs level ≥ 2".into(),
        });
    }
    let below = g.ring.at_level(g.level() - 1)?;
    Ok(g.elements
        .iter()
        .filter(|m| reduce_raw(&below, m) == IDENTITY)
        .count() as u64)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupMode {
    Full,
    Cartan,
    Normalizer,
    Generated,
    Preimage,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CartanModel {
    Companion,
    Diagonal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AmbientMode {
    Gl2,
    Cartan,
    Normalizer,
}

/// JSON description of a group, as read by the CLI.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupSpec {
    pub ell: u32,
    pub level: u32,
    pub mode: GroupMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<CartanModel>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generators: Option<Vec<[[i64; 2]; 2]>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base_level: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ambient: Option<AmbientMode>,
}

impl GroupSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// The same description at another level.
    pub fn at_level(&self, level: u32) -> GroupSpec {
        GroupSpec {
            level,
            ..self.clone()
        }
    }

    pub fn cartan_params(&self) -> Result<Option<Cartan>> {
        match (self.model, self.d) {
            (Some(CartanModel::Diagonal), _) => Ok(Some(Cartan::Diagonal)),
            (_, Some(d)) => Ok(Some(Cartan::Companion {
                r: self.r.unwrap_or(0),
                d,
            })),
            (Some(CartanModel::Companion), None) => Err(Error::InvalidInput(
                "companion Cartan needs the parameter d".into(),
            )),
            (None, None) => Ok(None),
        }
    }

    fn require_cartan(&self) -> Result<Cartan> {
        self.cartan_params()?.ok_or_else(|| {
            Error::InvalidInput(format!("mode {:?} needs a Cartan (d or model)", self.mode))
        })
    }

    fn generator_matrices(&self, ring: ResidueRing) -> Vec<ResidueMatrix> {
        self.generators
            .iter()
            .flatten()
            .map(|rows| ResidueMatrix::from_rows(ring, *rows))
            .collect()
    }

    pub fn build(&self, guard: SizeGuard) -> Result<MatrixGroupLevel> {
        match self.mode {
            GroupMode::Full => gl2_full(self.ell, self.level, guard),
            GroupMode::Cartan => cartan(self.ell, self.level, self.require_cartan()?, guard),
            GroupMode::Normalizer => {
                let c = cartan(self.ell, self.level, self.require_cartan()?, guard)?;
                normalizer_cartan(&c, guard)
            }
            GroupMode::Generated => {
                let ring = ResidueRing::new(self.ell, self.level)?;
                let g = generated_subgroup(
                    self.ell,
                    self.level,
                    &self.generator_matrices(ring),
                    guard,
                )?;
                match self.cartan_params()? {
                    Some(c) => g.with_cartan(c),
                    None => Ok(g),
                }
            }
            GroupMode::Preimage => {
                let base_level = self.base_level.ok_or_else(|| {
                    Error::InvalidInput("preimage mode needs base_level".into())
                })?;
                let base_ring = ResidueRing::new(self.ell, base_level)?;
                let base = generated_subgroup(
                    self.ell,
                    base_level,
                    &self.generator_matrices(base_ring),
                    guard,
                )?;
                let ambient = match self.ambient.unwrap_or(AmbientMode::Gl2) {
                    AmbientMode::Gl2 => Ambient::Gl2,
                    AmbientMode::Cartan => Ambient::Cartan(self.require_cartan()?),
                    AmbientMode::Normalizer => Ambient::Normalizer(self.require_cartan()?),
                };
                let base = match ambient.cartan().or(self.cartan_params()?) {
                    Some(c) => base.with_cartan(c)?,
                    None => base,
                };
                preimage_within(&base, self.level, ambient, guard)
            }
        }
    }
}
