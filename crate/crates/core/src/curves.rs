//! Elliptic curves over Q reduced modulo primes: point counts, point
//! orders, and empirical frequencies of points with order prime to ℓ.

use num_bigint::BigInt;
use num_traits::{Signed, ToPrimitive, Zero};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::exactnum::Rational;

/// A curve `y² + a1·xy + a3·y = x³ + a2·x² + a4·x + a6` over Q.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CurveQ {
    pub label: String,
    pub a: [i64; 5],
    discriminant: BigInt,
}

/// An integral point.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointQ {
    pub x: i64,
    pub y: i64,
}

/// The `b` and `c` invariants.
struct Invariants {
    b2: BigInt,
    b4: BigInt,
    b6: BigInt,
    b8: BigInt,
}

impl CurveQ {
    pub fn new(label: impl Into<String>, a: [i64; 5]) -> Result<Self> {
        let inv = Self::invariants(&a);
        let Invariants { b2, b4, b6, b8 } = &inv;
        let disc = -(b2 * b2 * b8) - BigInt::from(8) * b4 * b4 * b4 - BigInt::from(27) * b6 * b6
            + BigInt::from(9) * b2 * b4 * b6;
        if disc.is_zero() {
            return Err(Error::InvalidInput(format!("curve {a:?} is singular")));
        }
        Ok(CurveQ {
            label: label.into(),
            a,
            discriminant: disc,
        })
    }

    fn invariants(a: &[i64; 5]) -> Invariants {
        let [a1, a2, a3, a4, a6] = a.map(BigInt::from);
        Invariants {
            b2: &a1 * &a1 + 4 * &a2,
            b4: 2 * &a4 + &a1 * &a3,
            b6: &a3 * &a3 + 4 * &a6,
            b8: &a1 * &a1 * &a6 + 4 * &a2 * &a6 - &a1 * &a3 * &a4 + &a2 * &a3 * &a3 - &a4 * &a4,
        }
    }

    pub fn discriminant(&self) -> &BigInt {
        &self.discriminant
    }

    /// `(c4, c6)`.
    pub fn c_invariants(&self) -> (BigInt, BigInt) {
        let Invariants { b2, b4, b6, .. } = Self::invariants(&self.a);
        let c4 = &b2 * &b2 - 24 * &b4;
        let c6 = -(&b2 * &b2 * &b2) + 36 * &b2 * &b4 - 216 * &b6;
        (c4, c6)
    }

    pub fn contains(&self, p: &PointQ) -> bool {
        let [a1, a2, a3, a4, a6] = self.a.map(BigInt::from);
        let (x, y) = (BigInt::from(p.x), BigInt::from(p.y));
        &y * &y + &a1 * &x * &y + &a3 * &y == &x * &x * &x + &a2 * &x * &x + &a4 * &x + &a6
    }

    pub fn reduce_good(&self, p: u64) -> Reduction {
        if p <= 3 {
            return Reduction::Skip(SkipReason::SmallPrime);
        }
        if (&self.discriminant % BigInt::from(p)).is_zero() {
            return Reduction::Skip(SkipReason::BadReduction);
        }
        let (c4, c6) = self.c_invariants();
        let m = |x: BigInt| {
            let r = x % BigInt::from(p);
            let r = if r.is_negative() { r + BigInt::from(p) } else { r };
            r.to_u64().expect("reduced below p")
        };
        let a = m(-27 * c4);
        let b = m(-54 * c6);
        Reduction::Good(CurveFp { p, a, b })
    }

    /// Image of an integral point on the reduced short model.
    pub fn reduce_point(&self, point: &PointQ, curve: &CurveFp) -> AffinePoint {
        let Invariants { b2, .. } = Self::invariants(&self.a);
        let p = BigInt::from(curve.p);
        let [a1, _, a3, _, _] = self.a.map(BigInt::from);
        let (x, y) = (BigInt::from(point.x), BigInt::from(point.y));
        let m = |v: BigInt| {
            let r = v % &p;
            let r = if r.is_negative() { r + &p } else { r };
            r.to_u64().expect("reduced below p")
        };
        let big_x = m(36 * &x + 3 * &b2);
        let big_y = m(108 * (2 * &y + &a1 * &x + &a3));
        Some((big_x, big_y))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SkipReason {
    SmallPrime,
    BadReduction,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Reduction {
    Good(CurveFp),
    Skip(SkipReason),
}

/// `y² = x³ + a·x + b` over F_p, p > 3.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CurveFp {
    pub p: u64,
    pub a: u64,
    pub b: u64,
}

/// `None` is the point at infinity.
pub type AffinePoint = Option<(u64, u64)>;

fn mulmod(x: u64, y: u64, p: u64) -> u64 {
    ((x as u128 * y as u128) % p as u128) as u64
}

fn powmod(mut x: u64, mut e: u64, p: u64) -> u64 {
    let mut acc = 1 % p;
    x %= p;
    while e > 0 {
        if e & 1 == 1 {
            acc = mulmod(acc, x, p);
        }
        x = mulmod(x, x, p);
        e >>= 1;
    }
    acc
}

impl CurveFp {
    pub fn rhs(&self, x: u64) -> u64 {
        let p = self.p;
        (mulmod(mulmod(x, x, p), x, p) + mulmod(self.a, x, p) + self.b) % p
    }

    pub fn contains(&self, pt: &AffinePoint) -> bool {
        match *pt {
            None => true,
            Some((x, y)) => mulmod(y, y, self.p) == self.rhs(x),
        }
    }

    fn inv(&self, x: u64) -> u64 {
        powmod(x, self.p - 2, self.p)
    }

    pub fn neg(&self, pt: &AffinePoint) -> AffinePoint {
        pt.map(|(x, y)| (x, (self.p - y) % self.p))
    }

    pub fn add(&self, u: &AffinePoint, v: &AffinePoint) -> AffinePoint {
        let p = self.p;
        let (Some((x1, y1)), Some((x2, y2))) = (*u, *v) else {
            return u.or(*v);
        };
        let lambda = if x1 == x2 {
            if (y1 + y2) % p == 0 {
                return None;
            }
            let num = (3 * mulmod(x1, x1, p) + self.a) % p;
            mulmod(num, self.inv(2 * y1 % p), p)
        } else {
            mulmod((y2 + p - y1) % p, self.inv((x2 + p - x1) % p), p)
        };
        let x3 = (mulmod(lambda, lambda, p) + 2 * p - x1 - x2) % p;
        let y3 = (mulmod(lambda, (x1 + p - x3) % p, p) + p - y1) % p;
        Some((x3, y3))
    }

    pub fn mul(&self, k: u64, pt: &AffinePoint) -> AffinePoint {
        let mut acc = None;
        let mut base = *pt;
        let mut k = k;
        while k > 0 {
            if k & 1 == 1 {
                acc = self.add(&acc, &base);
            }
            base = self.add(&base, &base);
            k >>= 1;
        }
        acc
    }

    /// `#E(F_p) = p + 1 + Σ χ(x³ + ax + b)`, checked against the Hasse bound.
    pub fn group_order(&self) -> Result<u64> {
        let p = self.p;
        let add = |x: u64, y: u64| {
            let s = x + y;
            if s >= p {
                s - p
            } else {
                s
            }
        };
        // squares by (x+1)² = x² + 2x + 1
        let mut square = vec![false; p as usize];
        let (mut sq, mut step) = (0u64, 1u64);
        for _ in 1..p {
            sq = add(sq, step);
            step = add(step, 2);
            square[sq as usize] = true;
        }
        // f by forward differences: Δf(x) = 3x² + 3x + 1 + a, Δ²f(x) = 6x + 6
        let (mut f, mut d1, mut d2) = (self.b % p, (1 + self.a) % p, 6 % p);
        let six = 6 % p;
        let mut sum: i64 = 0;
        for _ in 0..p {
            if f != 0 {
                sum += if square[f as usize] { 1 } else { -1 };
            }
            f = add(f, d1);
            d1 = add(d1, d2);
            d2 = add(d2, six);
        }
        let n = (p as i64 + 1 + sum) as u64;
        let trace = sum.unsigned_abs();
        if trace * trace > 4 * p {
            return Err(Error::Hasse { p, order: n });
        }
        Ok(n)
    }

    /// Some point with the given x-coordinate, if any.
    pub fn lift_x(&self, x: u64) -> AffinePoint {
        let f = self.rhs(x);
        if f == 0 {
            return Some((x, 0));
        }
        if powmod(f, (self.p - 1) / 2, self.p) != 1 {
            return None;
        }
        // Tonelli–Shanks
        let p = self.p;
        let (mut q, mut s) = (p - 1, 0);
        while q % 2 == 0 {
            q /= 2;
            s += 1;
        }
        let z = (2..p).find(|&z| powmod(z, (p - 1) / 2, p) == p - 1).expect("non-residue");
        let (mut m, mut c, mut t, mut r) = (s, powmod(z, q, p), powmod(f, q, p), powmod(f, q.div_ceil(2), p));
        while t != 1 {
            let mut i = 0;
            let mut tt = t;
            while tt != 1 {
                tt = mulmod(tt, tt, p);
                i += 1;
            }
            let b = powmod(c, 1 << (m - i - 1), p);
            m = i;
            c = mulmod(b, b, p);
            t = mulmod(t, c, p);
            r = mulmod(r, b, p);
        }
        Some((x, r))
    }
}

/// Prime factors of `n` by trial division.
pub fn prime_factors(mut n: u64) -> Vec<u64> {
    let mut out = Vec::new();
    let mut q = 2;
    while q * q <= n {
        if n.is_multiple_of(q) {
            out.push(q);
            while n.is_multiple_of(q) {
                n /= q;
            }
        }
        q += if q == 2 { 1 } else { 2 };
    }
    if n > 1 {
        out.push(n);
    }
    out
}

/// The order of `pt`, given a multiple `n` of it.
pub fn point_order(curve: &CurveFp, pt: &AffinePoint, n: u64) -> Result<u64> {
    if curve.mul(n, pt).is_some() {
        return Err(Error::InconsistentOrder(format!(
            "{n}·P ≠ O on {curve:?}"
        )));
    }
    let mut order = n;
    for q in prime_factors(n) {
        while order.is_multiple_of(q) && curve.mul(order / q, pt).is_none() {
            order /= q;
        }
    }
    Ok(order)
}

pub fn v_ell(mut n: u64, ell: u64) -> u32 {
    let mut v = 0;
    while n > 0 && n.is_multiple_of(ell) {
        n /= ell;
        v += 1;
    }
    v
}

/// Primes up to `bound` (sieve of Eratosthenes).
pub fn primes_up_to(bound: u64) -> Vec<u64> {
    let n = bound as usize;
    let mut composite = vec![false; n + 1];
    let mut out = Vec::new();
    for i in 2..=n {
        if !composite[i] {
            out.push(i as u64);
            let mut j = i * i;
            while j <= n {
                composite[j] = true;
                j += i;
            }
        }
    }
    out
}

/// One prime of a sweep.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct SweepRow {
    pub p: u64,
    pub n: u64,
    pub ord: u64,
    pub v_ell: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SkippedPrime {
    pub p: u64,
    pub reason: SkipReason,
}

/// Result of [`empirical_density`].
#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub label: String,
    pub ell: u32,
    pub scale: u32,
    pub bound: u64,
    pub rows: Vec<SweepRow>,
    pub skipped: Vec<SkippedPrime>,
    /// Primes where `ℓᵏα` has order prime to ℓ.
    pub count_coprime: u64,
    pub exact_reference: Option<Rational>,
}

impl SweepReport {
    pub fn primes_used(&self) -> u64 {
        self.rows.len() as u64
    }

    pub fn frequency(&self) -> f64 {
        self.count_coprime as f64 / self.primes_used().max(1) as f64
    }

    pub fn frequency_decimal(&self) -> String {
        format!("{:.5}", self.frequency())
    }

    pub fn to_json(&self) -> Value {
        let mut v = json!({
            "label": self.label,
            "ell": self.ell,
            "scale": self.scale,
            "bound": self.bound,
            "primes_used": self.primes_used(),
            "primes_skipped": self.skipped,
            "count_coprime": self.count_coprime,
            "frequency": self.frequency_decimal(),
        });
        if let Some(x) = &self.exact_reference {
            v["exact_reference"] = json!(x.to_string());
            v["exact_decimal"] = json!(x.decimal(5));
            v["difference"] = json!(format!("{:.5}", (self.frequency() - x.to_f64()).abs()));
        }
        v
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("p,N,ord,v_ell\n");
        for r in &self.rows {
            out.push_str(&format!("{},{},{},{}\n", r.p, r.n, r.ord, r.v_ell));
        }
        out
    }
}

/// Frequency, over good primes `p ≤ bound`, of `ℓ ∤ ord(ℓᵏα mod p)`.
pub fn empirical_density(
    curve: &CurveQ,
    point: &PointQ,
    ell: u32,
    bound: u64,
    scale: u32,
) -> Result<SweepReport> {
    if bound < 1_000 {
        return Err(Error::InvalidInput(format!(
            "sweep bound {bound} below 1000"
        )));
    }
    if !crate::exactnum::is_prime_u64(ell as u64) {
        return Err(Error::NotPrime {
            value: ell.to_string(),
        });
    }
    if !curve.contains(point) {
        return Err(Error::InvalidInput(format!(
            "point ({}, {}) is not on {}",
            point.x, point.y, curve.label
        )));
    }
    let outcomes: Vec<std::result::Result<SweepRow, SkippedPrime>> = primes_up_to(bound)
        .into_par_iter()
        .map(|p| match curve.reduce_good(p) {
            Reduction::Skip(reason) => Ok(Err(SkippedPrime { p, reason })),
            Reduction::Good(e) => {
                let n = e.group_order()?;
                let pt = curve.reduce_point(point, &e);
                debug_assert!(e.contains(&pt));
                let ord = point_order(&e, &pt, n)?;
                let v = v_ell(ord, ell as u64).saturating_sub(scale);
                Ok(Ok(SweepRow { p, n, ord, v_ell: v }))
            }
        })
        .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => rows.push(r),
            Err(s) => skipped.push(s),
        }
    }
    let count_coprime = rows.iter().filter(|r| r.v_ell == 0).count() as u64;
    Ok(SweepReport {
        label: curve.label.clone(),
        ell,
        scale,
        bound,
        rows,
        skipped,
        count_coprime,
        exact_reference: None,
    })
}

/// JSON curve description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSpec {
    pub label: String,
    pub a: [i64; 5],
    pub point: [i64; 2],
}

impl CurveSpec {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn build(&self) -> Result<(CurveQ, PointQ)> {
        let curve = CurveQ::new(self.label.clone(), self.a)?;
        let point = PointQ {
            x: self.point[0],
            y: self.point[1],
        };
        if !curve.contains(&point) {
            return Err(Error::InvalidInput(format!(
                "point {:?} is not on {}",
                self.point, self.label
            )));
        }
        Ok((curve, point))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn curve37() -> CurveQ {
        CurveQ::new("37.a1", [0, 0, 1, -1, 0]).unwrap()
    }

    #[test]
    fn discriminants() {
        assert_eq!(*curve37().discriminant(), BigInt::from(37));
        let c = CurveQ::new("cm4", [0, 0, 0, 3, 0]).unwrap();
        // −16(4·27) = −1728
        assert_eq!(*c.discriminant(), BigInt::from(-1728));
        assert!(CurveQ::new("cusp", [0, 0, 0, 0, 0]).is_err());
    }

    #[test]
    fn reduction_policy() {
        let c = curve37();
        assert_eq!(c.reduce_good(37), Reduction::Skip(SkipReason::BadReduction));
        assert_eq!(c.reduce_good(2), Reduction::Skip(SkipReason::SmallPrime));
        assert_eq!(c.reduce_good(3), Reduction::Skip(SkipReason::SmallPrime));
        assert!(matches!(c.reduce_good(5), Reduction::Good(_)));
    }

    #[test]
    fn counts_match_enumeration() {
        let c = CurveQ::new("cm4", [0, 0, 0, 3, 0]).unwrap();
        let Reduction::Good(e) = c.reduce_good(7) else { panic!() };
        // direct count on the original model y² = x³ + 3x mod 7
        let mut direct = 1;
        for x in 0..7u64 {
            for y in 0..7u64 {
                if (y * y) % 7 == (x * x * x + 3 * x) % 7 {
                    direct += 1;
                }
            }
        }
        assert_eq!(direct, 8);
        assert_eq!(e.group_order().unwrap(), 8);
        for curve in [curve37(), CurveQ::new("153.b2", [0, 0, 1, 6, 27]).unwrap()] {
            for p in primes_up_to(200) {
                let Reduction::Good(e) = curve.reduce_good(p) else { continue };
                let [a1, a2, a3, a4, a6] = curve.a;
                let md = |v: i64| v.rem_euclid(p as i64);
                let mut direct = 1u64;
                for x in 0..p as i64 {
                    for y in 0..p as i64 {
                        let lhs = md(y * y + a1 * x * y + a3 * y);
                        let rhs = md(x * x * x + a2 * x * x + a4 * x + a6);
                        if lhs == rhs {
                            direct += 1;
                        }
                    }
                }
                assert_eq!(e.group_order().unwrap(), direct, "{} p={p}", curve.label);
            }
        }
    }

    #[test]
    fn lagrange_and_orders() {
        let c = curve37();
        for p in [101u64, 499, 1009] {
            let Reduction::Good(e) = c.reduce_good(p) else { panic!() };
            let n = e.group_order().unwrap();
            let mut found = 0;
            for x in 0..p {
                if let Some(pt) = e.lift_x(x) {
                    assert!(e.contains(&Some(pt)));
                    assert_eq!(e.mul(n, &Some(pt)), None);
                    let ord = point_order(&e, &Some(pt), n).unwrap();
                    assert_eq!(n % ord, 0);
                    assert_eq!(e.mul(ord, &Some(pt)), None);
                    for q in prime_factors(ord) {
                        assert!(e.mul(ord / q, &Some(pt)).is_some());
                    }
                    found += 1;
                    if found == 20 {
                        break;
                    }
                }
            }
            assert_eq!(found, 20);
            assert_eq!(point_order(&e, &None, n).unwrap(), 1);
        }
    }

    #[test]
    fn inconsistent_order_rejected() {
        let c = curve37();
        let Reduction::Good(e) = c.reduce_good(101) else { panic!() };
        let pt = c.reduce_point(&PointQ { x: 0, y: 0 }, &e);
        let n = e.group_order().unwrap();
        assert!(matches!(point_order(&e, &pt, n + 1), Err(Error::InconsistentOrder(_))));
    }

    #[test]
    fn scaling_identity() {
        let c = curve37();
        let alpha = PointQ { x: 0, y: 0 };
        for p in primes_up_to(3000) {
            let Reduction::Good(e) = c.reduce_good(p) else { continue };
            let n = e.group_order().unwrap();
            let pt = c.reduce_point(&alpha, &e);
            assert!(e.contains(&pt));
            let v = v_ell(point_order(&e, &pt, n).unwrap(), 2);
            for k in 0..4u32 {
                let scaled = e.mul(1 << k, &pt);
                let vk = v_ell(point_order(&e, &scaled, n).unwrap(), 2);
                assert_eq!(vk, v.saturating_sub(k), "p={p} k={k}");
            }
        }
    }

    #[test]
    fn sweep_is_monotone_in_scale() {
        let c = curve37();
        let alpha = PointQ { x: 0, y: 0 };
        let freqs: Vec<u64> = (0..3)
            .map(|k| empirical_density(&c, &alpha, 2, 5_000, k).unwrap().count_coprime)
            .collect();
        assert!(freqs.windows(2).all(|w| w[0] <= w[1]));
        let r = empirical_density(&c, &alpha, 2, 5_000, 0).unwrap();
        assert!(r.count_coprime <= r.primes_used());
        assert_eq!(r.skipped.len(), 3);
        assert!(r.to_csv().starts_with("p,N,ord,v_ell\n5,"));
        assert!(empirical_density(&c, &alpha, 2, 10, 0).is_err());
        assert!(empirical_density(&c, &PointQ { x: 1, y: 1 }, 2, 5_000, 0).is_err());
    }

    #[test]
    fn curve_spec_json() {
        let spec = CurveSpec::from_json(r#"{"label":"153.b2","a":[0,0,1,6,27],"point":[5,13]}"#)
            .unwrap();
        let (c, p) = spec.build().unwrap();
        assert!(c.contains(&p));
        let bad = CurveSpec::from_json(r#"{"label":"x","a":[0,0,1,6,27],"point":[5,12]}"#).unwrap();
        assert!(bad.build().is_err());
    }
}
