//! 2×2 matrices over Z/ℓⁿZ and the fixed-point invariant of `M − I`.
//!
//! Entries are stored as machine words. A [`ResidueRing`] carries the prime
//! ℓ and the level n; every [`ResidueMatrix`] carries its ring, and binary
//! operations reject operands from different rings.
//!
//! The hot enumeration loops elsewhere in the crate work on bare [`Entries`]
//! arrays through the `*_raw` functions to avoid the per-element ring checks.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exactnum::is_prime_u64;

/// Row-major entries `[m11, m12, m21, m22]`, each reduced into `[0, ℓⁿ)`.
pub type Entries = [u32; 4];

/// A column vector in `(Z/ℓⁿ)²`.
pub type Vector = [u32; 2];

/// Largest modulus accepted: codes of matrices must fit in 64 bits.
pub const MAX_MODULUS: u64 = 65_535;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ResidueRing {
    ell: u32,
    level: u32,
    modulus: u32,
}

impl ResidueRing {
    pub fn new(ell: u32, level: u32) -> Result<Self> {
        if !is_prime_u64(ell as u64) {
            return Err(Error::NotPrime { value: ell.to_string() });
        }
        if level == 0 {
            return Err(Error::InvalidInput("level must be at least 1".into()));
        }
        let modulus = (ell as u64)
            .checked_pow(level)
            .filter(|&q| q <= MAX_MODULUS)
            .ok_or_else(|| {
                Error::InvalidInput(format!("{ell}^{level} exceeds the supported modulus"))
            })?;
        Ok(ResidueRing {
            ell,
            level,
            modulus: modulus as u32,
        })
    }

    pub fn ell(&self) -> u32 {
        self.ell
    }

    pub fn level(&self) -> u32 {
        self.level
    }

    pub fn modulus(&self) -> u32 {
        self.modulus
    }

    /// The same prime at another level.
    pub fn at_level(&self, level: u32) -> Result<Self> {
        ResidueRing::new(self.ell, level)
    }

    /// ℓᵏ for `k ≤ level`.
    pub fn ell_pow(&self, k: u32) -> u32 {
        debug_assert!(k <= self.level);
        self.ell.pow(k)
    }

    pub fn reduce(&self, x: i64) -> u32 {
        x.rem_euclid(self.modulus as i64) as u32
    }

    #[inline]
    pub fn add(&self, a: u32, b: u32) -> u32 {
        let s = a + b;
        if s >= self.modulus {
            s - self.modulus
        } else {
            s
        }
    }

    #[inline]
    pub fn sub(&self, a: u32, b: u32) -> u32 {
        if a >= b {
            a - b
        } else {
            a + self.modulus - b
        }
    }

    #[inline]
    pub fn neg(&self, a: u32) -> u32 {
        if a == 0 {
            0
        } else {
            self.modulus - a
        }
    }

    #[inline]
    pub fn mul(&self, a: u32, b: u32) -> u32 {
        ((a as u64 * b as u64) % self.modulus as u64) as u32
    }

    #[inline]
    pub fn is_unit(&self, a: u32) -> bool {
        !a.is_multiple_of(self.ell)
    }

    /// The valuation of a residue, clipped at the level (so `v(0) = n`).
    #[inline]
    pub fn valuation(&self, mut a: u32) -> u32 {
        if a == 0 {
            return self.level;
        }
        let mut v = 0;
        while a.is_multiple_of(self.ell) {
            a /= self.ell;
            v += 1;
        }
        v
    }

    pub fn inv(&self, a: u32) -> Option<u32> {
        if !self.is_unit(a) {
            return None;
        }
        let (mut r0, mut r1) = (self.modulus as i64, a as i64);
        let (mut s0, mut s1) = (0i64, 1i64);
        while r1 != 0 {
            let q = r0 / r1;
            (r0, r1) = (r1, r0 - q * r1);
            (s0, s1) = (s1, s0 - q * s1);
        }
        Some(self.reduce(s0))
    }

    /// Number of invertible 2×2 matrices: `gl₂(ℓ)·ℓ^{4(n−1)}`.
    pub fn gl2_order(&self) -> u128 {
        let l = self.ell as u128;
        (l * l - 1) * (l * l - l) * l.pow(4 * (self.level - 1))
    }
}

impl fmt::Display for ResidueRing {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Z/{}^{}", self.ell, self.level)
    }
}

#[inline]
pub fn mul_raw(ring: &ResidueRing, a: &Entries, b: &Entries) -> Entries {
    let q = ring.modulus as u64;
    let [a11, a12, a21, a22] = a.map(u64::from);
    let [b11, b12, b21, b22] = b.map(u64::from);
    [
        ((a11 * b11 + a12 * b21) % q) as u32,
        ((a11 * b12 + a12 * b22) % q) as u32,
        ((a21 * b11 + a22 * b21) % q) as u32,
        ((a21 * b12 + a22 * b22) % q) as u32,
    ]
}

#[inline]
pub fn det_raw(ring: &ResidueRing, m: &Entries) -> u32 {
    ring.sub(ring.mul(m[0], m[3]), ring.mul(m[1], m[2]))
}

#[inline]
pub fn minus_identity_raw(ring: &ResidueRing, m: &Entries) -> Entries {
    [ring.sub(m[0], 1), m[1], m[2], ring.sub(m[3], 1)]
}

pub fn inv_raw(ring: &ResidueRing, m: &Entries) -> Option<Entries> {
    let d = ring.inv(det_raw(ring, m))?;
    Some([
        ring.mul(m[3], d),
        ring.mul(ring.neg(m[1]), d),
        ring.mul(ring.neg(m[2]), d),
        ring.mul(m[0], d),
    ])
}

#[inline]
pub fn apply_raw(ring: &ResidueRing, m: &Entries, v: &Vector) -> Vector {
    let q = ring.modulus as u64;
    let [m11, m12, m21, m22] = m.map(u64::from);
    let (x, y) = (v[0] as u64, v[1] as u64);
    [((m11 * x + m12 * y) % q) as u32, ((m21 * x + m22 * y) % q) as u32]
}

/// Reduces entries to a lower level of the same prime.
#[inline]
pub fn reduce_raw(target: &ResidueRing, m: &Entries) -> Entries {
    m.map(|x| x % target.modulus)
}

/// Mixed-radix code of a matrix; injective for a fixed ring.
#[inline]
pub fn code_raw(ring: &ResidueRing, m: &Entries) -> u64 {
    let q = ring.modulus as u64;
    ((m[0] as u64 * q + m[1] as u64) * q + m[2] as u64) * q + m[3] as u64
}

pub const IDENTITY: Entries = [1, 0, 0, 1];

/// Smith-form valuations `(e1, e2)` of a matrix over Z/ℓⁿ, clipped at n.
///
/// `e1` is the minimum entry valuation; the pivot is the first entry in
/// row-major order achieving it.
pub fn elementary_valuations_raw(ring: &ResidueRing, a: &Entries) -> (u32, u32) {
    let n = ring.level;
    let vals = a.map(|x| ring.valuation(x));
    let (pivot, &e1) = vals
        .iter()
        .enumerate()
        .min_by_key(|&(i, v)| (*v, i))
        .expect("four entries");
    if e1 >= n {
        return (n, n);
    }
    // pivot at (i, j); q shares its row, r its column, s is opposite.
    let (i, j) = (pivot / 2, pivot % 2);
    let p = a[2 * i + j];
    let q = a[2 * i + (1 - j)];
    let r = a[2 * (1 - i) + j];
    let s = a[2 * (1 - i) + (1 - j)];
    let scale = ring.ell_pow(e1);
    let unit = p / scale;
    let unit_inv = ring.inv(unit % ring.modulus).expect("pivot quotient is a unit");
    let r_red = r / scale;
    let correction = ring.mul(ring.mul(r_red, unit_inv), q);
    let x = ring.sub(s, correction);
    (e1, ring.valuation(x).min(n))
}

/// Valuation of `det(M − I)`, clipped at the level.
#[inline]
pub fn det_minus_identity_valuation_raw(ring: &ResidueRing, m: &Entries) -> u32 {
    ring.valuation(det_raw(ring, &minus_identity_raw(ring, m)))
}

/// The isomorphism type of `ker(M − I)` on the ℓ-divisible group, when the
/// current level is high enough to see it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum KernelClass {
    /// Kernel `≅ Z/ℓᵃ × Z/ℓ^{a+b}`.
    Determined { a: u32, b: u32 },
    Undetermined,
}

pub fn kernel_class_raw(ring: &ResidueRing, m: &Entries) -> KernelClass {
    let (e1, e2) = elementary_valuations_raw(ring, &minus_identity_raw(ring, m));
    if e2 < ring.level {
        KernelClass::Determined { a: e1, b: e2 - e1 }
    } else {
        KernelClass::Undetermined
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct ResidueMatrix {
    ring: ResidueRing,
    m: Entries,
}

impl ResidueMatrix {
    /// Builds a matrix from arbitrary integers, reducing them.
    pub fn new(ring: ResidueRing, entries: [i64; 4]) -> Self {
        ResidueMatrix {
            ring,
            m: entries.map(|x| ring.reduce(x)),
        }
    }

    /// Wraps already-reduced entries.
    pub fn from_entries(ring: ResidueRing, m: Entries) -> Self {
        debug_assert!(m.iter().all(|&x| x < ring.modulus));
        ResidueMatrix { ring, m }
    }

    pub fn from_rows(ring: ResidueRing, rows: [[i64; 2]; 2]) -> Self {
        ResidueMatrix::new(ring, [rows[0][0], rows[0][1], rows[1][0], rows[1][1]])
    }

    pub fn identity(ring: ResidueRing) -> Self {
        ResidueMatrix { ring, m: IDENTITY }
    }

    pub fn ring(&self) -> ResidueRing {
        self.ring
    }

    pub fn entries(&self) -> Entries {
        self.m
    }

    pub fn rows(&self) -> [[u32; 2]; 2] {
        [[self.m[0], self.m[1]], [self.m[2], self.m[3]]]
    }

    pub fn det(&self) -> u32 {
        det_raw(&self.ring, &self.m)
    }

    pub fn trace(&self) -> u32 {
        self.ring.add(self.m[0], self.m[3])
    }

    pub fn is_invertible(&self) -> bool {
        self.ring.is_unit(self.det())
    }

    pub fn is_identity(&self) -> bool {
        self.m == IDENTITY
    }

    fn check_ring(&self, other: &ResidueMatrix) -> Result<()> {
        if self.ring != other.ring {
            return Err(Error::RingMismatch(
                self.ring.ell,
                self.ring.level,
                other.ring.ell,
                other.ring.level,
            ));
        }
        Ok(())
    }

    pub fn mul(&self, rhs: &ResidueMatrix) -> Result<ResidueMatrix> {
        self.check_ring(rhs)?;
        Ok(ResidueMatrix {
            ring: self.ring,
            m: mul_raw(&self.ring, &self.m, &rhs.m),
        })
    }

    pub fn sub(&self, rhs: &ResidueMatrix) -> Result<ResidueMatrix> {
        self.check_ring(rhs)?;
        let r = &self.ring;
        Ok(ResidueMatrix {
            ring: self.ring,
            m: [0, 1, 2, 3].map(|i| r.sub(self.m[i], rhs.m[i])),
        })
    }

    pub fn inv(&self) -> Result<ResidueMatrix> {
        inv_raw(&self.ring, &self.m)
            .map(|m| ResidueMatrix { ring: self.ring, m })
            .ok_or(Error::NotInvertible {
                modulus: self.ring.modulus as u64,
            })
    }

    /// Non-negative power by repeated squaring.
    pub fn pow(&self, mut k: u64) -> ResidueMatrix {
        let mut base = self.m;
        let mut acc = IDENTITY;
        while k > 0 {
            if k & 1 == 1 {
                acc = mul_raw(&self.ring, &acc, &base);
            }
            base = mul_raw(&self.ring, &base, &base);
            k >>= 1;
        }
        ResidueMatrix { ring: self.ring, m: acc }
    }

    pub fn minus_identity(&self) -> ResidueMatrix {
        ResidueMatrix {
            ring: self.ring,
            m: minus_identity_raw(&self.ring, &self.m),
        }
    }

    /// Reduction to a lower level.
    pub fn reduce_to(&self, level: u32) -> Result<ResidueMatrix> {
        if level > self.ring.level {
            return Err(Error::InvalidInput(format!(
                "cannot reduce level {} to level {level}",
                self.ring.level
            )));
        }
        let target = self.ring.at_level(level)?;
        Ok(ResidueMatrix {
            ring: target,
            m: reduce_raw(&target, &self.m),
        })
    }

    pub fn apply(&self, v: &Vector) -> Vector {
        apply_raw(&self.ring, &self.m, v)
    }

    pub fn code(&self) -> u64 {
        code_raw(&self.ring, &self.m)
    }
}

impl fmt::Debug for ResidueMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[[{},{}],[{},{}]] mod {}",
            self.m[0], self.m[1], self.m[2], self.m[3], self.ring.modulus
        )
    }
}

/// Smith-form valuations of `a` (typically `M − I`).
pub fn elementary_valuations(a: &ResidueMatrix) -> (u32, u32) {
    elementary_valuations_raw(&a.ring, &a.m)
}

/// The kernel class of an invertible matrix.
pub fn kernel_class(m: &ResidueMatrix) -> KernelClass {
    kernel_class_raw(&m.ring, &m.m)
}

/// Iterates over all ℓ^{4n} matrices of a ring (including singular ones).
pub fn all_matrices(ring: ResidueRing) -> impl Iterator<Item = Entries> {
    let q = ring.modulus;
    (0..q).flat_map(move |a| {
        (0..q).flat_map(move |b| (0..q).flat_map(move |c| (0..q).map(move |d| [a, b, c, d])))
    })
}

/// Iterates over all ℓ^{2n} vectors of a ring.
pub fn all_vectors(ring: ResidueRing) -> impl Iterator<Item = Vector> {
    let q = ring.modulus;
    (0..q).flat_map(move |x| (0..q).map(move |y| [x, y]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ring(ell: u32, level: u32) -> ResidueRing {
        ResidueRing::new(ell, level).unwrap()
    }

    /// Independent oracle: count solutions of `A v = 0` over all vectors.
    fn kernel_count(ring: ResidueRing, a: &Entries) -> u64 {
        all_vectors(ring)
            .filter(|v| apply_raw(&ring, a, v) == [0, 0])
            .count() as u64
    }

    #[test]
    fn inverse_and_power_examples() {
        let r = ring(2, 2);
        let id = ResidueMatrix::identity(r);
        assert_eq!(id.inv().unwrap(), id);
        let u = ResidueMatrix::from_rows(r, [[1, 1], [0, 1]]);
        assert_eq!(u.pow(4), id);
        assert_ne!(u.pow(2), id);
        let m = ResidueMatrix::from_rows(ring(3, 2), [[2, 5], [7, 3]]);
        let mi = m.inv().unwrap();
        assert!(m.mul(&mi).unwrap().is_identity());
        assert!(mi.mul(&m).unwrap().is_identity());
    }

    #[test]
    fn singular_inverse_and_ring_mismatch_rejected() {
        let m = ResidueMatrix::from_rows(ring(3, 1), [[1, 1], [1, 1]]);
        assert!(matches!(m.inv(), Err(Error::NotInvertible { .. })));
        let a = ResidueMatrix::identity(ring(3, 1));
        let b = ResidueMatrix::identity(ring(3, 2));
        assert!(matches!(a.mul(&b), Err(Error::RingMismatch(..))));
    }

    #[test]
    fn ring_validation() {
        assert!(ResidueRing::new(4, 1).is_err());
        assert!(ResidueRing::new(3, 0).is_err());
        assert!(ResidueRing::new(2, 17).is_err());
        assert_eq!(ring(13, 2).gl2_order(), 26_208 * 28_561);
    }

    #[test]
    fn elementary_valuation_examples() {
        let r = ring(3, 2);
        assert_eq!(elementary_valuations_raw(&r, &[0, 0, 0, 0]), (2, 2));
        assert_eq!(elementary_valuations_raw(&r, &[3, 0, 0, 1]), (0, 1));
        assert_eq!(kernel_count(r, &[3, 0, 0, 1]), 3);
        let r = ring(2, 3);
        assert_eq!(elementary_valuations_raw(&r, &[2, 0, 0, 4]), (1, 2));
        assert_eq!(kernel_count(r, &[2, 0, 0, 4]), 8);
    }

    #[test]
    fn kernel_class_examples() {
        let r = ring(3, 2);
        assert_eq!(
            kernel_class(&ResidueMatrix::identity(r)),
            KernelClass::Undetermined
        );
        let m = ResidueMatrix::from_rows(r, [[4, 0], [0, 2]]);
        assert_eq!(kernel_class(&m), KernelClass::Determined { a: 0, b: 1 });
        let fixed = all_vectors(r).filter(|v| m.apply(v) == *v).count();
        assert_eq!(fixed, 3);
    }

    #[test]
    fn gl2_mod_2_fixed_point_free_elements() {
        let r = ring(2, 1);
        let determined: Vec<_> = all_matrices(r)
            .filter(|m| r.is_unit(det_raw(&r, m)))
            .filter(|m| kernel_class_raw(&r, m) == KernelClass::Determined { a: 0, b: 0 })
            .collect();
        assert_eq!(determined.len(), 2);
        for m in determined {
            let mm = ResidueMatrix::from_entries(r, m);
            assert_eq!(mm.pow(3), ResidueMatrix::identity(r));
        }
    }

    #[test]
    fn kernel_size_matches_brute_force_at_ell_2() {
        for n in 1..=3 {
            let r = ring(2, n);
            for a in all_matrices(r) {
                let (e1, e2) = elementary_valuations_raw(&r, &a);
                assert!(e1 <= e2 && e2 <= n);
                assert_eq!(kernel_count(r, &a), 1u64 << (e1 + e2), "{a:?} at level {n}");
            }
        }
    }

    #[test]
    fn valuations_sum_to_det_valuation_when_determined() {
        for (ell, max_n) in [(2, 3), (3, 3)] {
            for n in 1..=max_n {
                let r = ring(ell, n);
                for a in all_matrices(r) {
                    let (e1, e2) = elementary_valuations_raw(&r, &a);
                    if e2 < n {
                        assert_eq!((e1 + e2).min(n), r.valuation(det_raw(&r, &a)));
                    }
                }
            }
        }
    }

    #[test]
    fn valuations_are_pivot_independent() {
        // Transposing and swapping rows or columns moves the pivot without
        // changing the Smith form.
        let r = ring(3, 2);
        for a in all_matrices(r) {
            let base = elementary_valuations_raw(&r, &a);
            let transposed = [a[0], a[2], a[1], a[3]];
            let swapped = [a[2], a[3], a[0], a[1]];
            let col_swapped = [a[1], a[0], a[3], a[2]];
            assert_eq!(elementary_valuations_raw(&r, &transposed), base);
            assert_eq!(elementary_valuations_raw(&r, &swapped), base);
            assert_eq!(elementary_valuations_raw(&r, &col_swapped), base);
        }
    }

    #[test]
    fn kernel_class_is_stable_under_lifting() {
        for (ell, max_n) in [(2u32, 4u32), (3, 3)] {
            for n in 1..=max_n {
                let low = ring(ell, n);
                let high = ring(ell, n + 1);
                let step = low.modulus;
                for m in all_matrices(low).filter(|m| low.is_unit(det_raw(&low, m))) {
                    let KernelClass::Determined { .. } = kernel_class_raw(&low, &m) else {
                        continue;
                    };
                    let class = kernel_class_raw(&low, &m);
                    for lift in 0..ell.pow(4) {
                        let digits = [lift % ell, (lift / ell) % ell, (lift / ell / ell) % ell, lift / ell.pow(3)];
                        let lifted = [0, 1, 2, 3].map(|i| m[i] + step * digits[i]);
                        assert_eq!(kernel_class_raw(&high, &lifted), class);
                    }
                }
            }
        }
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn inverse_round_trip(ell in prop::sample::select(vec![2u32, 3, 5, 13]), level in 1u32..3, e in prop::array::uniform4(0i64..10_000)) {
                let r = ring(ell, level);
                let m = ResidueMatrix::new(r, e);
                prop_assume!(m.is_invertible());
                prop_assert!(m.mul(&m.inv().unwrap()).unwrap().is_identity());
            }

            #[test]
            fn kernel_size_formula_at_ell_3(level in 1u32..3, e in prop::array::uniform4(0i64..1000)) {
                let r = ring(3, level);
                let a = ResidueMatrix::new(r, e).entries();
                let (e1, e2) = elementary_valuations_raw(&r, &a);
                prop_assert_eq!(kernel_count(r, &a), 3u64.pow(e1 + e2));
            }
        }
    }
}
