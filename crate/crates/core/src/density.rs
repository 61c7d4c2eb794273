//! Exact densities: closed formulas for the standard image types, exact
//! summation of the kernel-class series over fitted tail models, scaled
//! points, and the denominator audit.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::arboreal::ArborealGroupLevel;
use crate::error::{Error, Result};
use crate::exactnum::{in_z_inv_ell, BigInt, Rational};
use crate::matgroups::{
    cartan, generated_subgroup, gl2_full, normalizer_cartan, AmbientMode, Cartan, GroupMode,
    GroupSpec, MatrixGroupLevel, SizeGuard,
};
use crate::measures::{
    fit_tail, lifted_measure_table, measure_table, split_coset_tables, MeasureTable, Span,
    TailModel,
};
use crate::modmatrix::{ResidueMatrix, ResidueRing};

/// Highest level tried when deriving a measure model.
pub const MAX_DERIVED_LEVEL: u32 = 12;

/// The ℓ-adic image of Galois.
#[derive(Clone, Debug, PartialEq)]
pub enum ImageType {
    GL2Full,
    SplitCartan,
    NonsplitCartan,
    NormSplit,
    NormNonsplit,
    Explicit(GroupSpec),
}

impl ImageType {
    /// Whether the image lies in a Cartan normalizer (the CM exponent case of
    /// the denominator audit).
    pub fn cm(&self) -> bool {
        match self {
            ImageType::GL2Full => false,
            ImageType::Explicit(spec) => {
                matches!(spec.mode, GroupMode::Cartan | GroupMode::Normalizer)
                    || matches!(
                        spec.ambient,
                        Some(AmbientMode::Cartan) | Some(AmbientMode::Normalizer)
                    )
                    || spec.model.is_some()
            }
            _ => true,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ImageType::GL2Full => "gl2",
            ImageType::SplitCartan => "split",
            ImageType::NonsplitCartan => "nonsplit",
            ImageType::NormSplit => "norm-split",
            ImageType::NormNonsplit => "norm-nonsplit",
            ImageType::Explicit(_) => "explicit",
        }
    }

    pub const CLOSED: [ImageType; 5] = [
        ImageType::GL2Full,
        ImageType::SplitCartan,
        ImageType::NonsplitCartan,
        ImageType::NormSplit,
        ImageType::NormNonsplit,
    ];
}

impl fmt::Display for ImageType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ImageType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "gl2" | "full" => ImageType::GL2Full,
            "split" => ImageType::SplitCartan,
            "nonsplit" => ImageType::NonsplitCartan,
            "norm-split" => ImageType::NormSplit,
            "norm-nonsplit" => ImageType::NormNonsplit,
            other => {
                return Err(Error::InvalidInput(format!(
                    "unknown image type {other:?} (expected gl2, split, nonsplit, norm-split, norm-nonsplit)"
                )))
            }
        })
    }
}

fn check_prime(ell: u32) -> Result<()> {
    if crate::exactnum::is_prime_u64(ell as u64) {
        Ok(())
    } else {
        Err(Error::NotPrime {
            value: ell.to_string(),
        })
    }
}

/// Closed-form density for the five standard image types.
pub fn closed_density(image: &ImageType, ell: u32, d: u32) -> Result<Rational> {
    check_prime(ell)?;
    let l = ell as i64;
    let one = Rational::one();
    let r = |x: i64| Rational::from(x);
    let scale = Rational::power(ell as u64, 1 - d as i64);
    // 1 − ℓ^{1−d}/(ℓ² − 1), the density for the non-trivial normalizer coset.
    let coset = || &one - &scale / r(l * l - 1);
    let split = || {
        let c = coset();
        &c * &c
    };
    let nonsplit = || &one - &scale * &scale / r(l.pow(4) - 1);
    let half = Rational::ratio(1, 2);
    Ok(match image {
        ImageType::GL2Full => {
            &one - &scale * r(l.pow(3) - l - 1) / (r(l * l - 1) * r(l.pow(3) - 1))
        }
        ImageType::SplitCartan => split(),
        ImageType::NonsplitCartan => nonsplit(),
        ImageType::NormSplit => &half * (coset() + split()),
        ImageType::NormNonsplit => &half * (coset() + nonsplit()),
        ImageType::Explicit(_) => {
            return Err(Error::InvalidInput(
                "explicit images have no closed formula; use the series".into(),
            ))
        }
    })
}

/// How `δ(a, b)` is obtained.
#[derive(Clone, Debug, PartialEq)]
pub enum DeltaRule {
    /// Maximal Kummer extension up to defect `d`.
    Defect(u32),
    /// A fitted table with its failure constant.
    Table { failure: Rational, delta: TailModel },
}

impl DeltaRule {
    pub fn failure(&self, ell: u32) -> Rational {
        match self {
            DeltaRule::Defect(d) => Rational::power(ell as u64, 2 * *d as i64),
            DeltaRule::Table { failure, .. } => failure.clone(),
        }
    }

    pub fn delta_model(&self, ell: u32) -> TailModel {
        match self {
            DeltaRule::Defect(d) => defect_delta_model(ell, *d),
            DeltaRule::Table { delta, .. } => delta.clone(),
        }
    }
}

/// `δ(a, b) = ℓ^{2a+b−2d−max(a−d,0)−max(a+b−d,0)}` as a tail model.
pub fn defect_delta_model(ell: u32, d: u32) -> TailModel {
    let exp = |a: u32, b: u32| {
        let (a, b, d) = (a as i64, b as i64, d as i64);
        2 * a + b - 2 * d - (a - d).max(0) - (a + b - d).max(0)
    };
    let l = ell as u64;
    TailModel::from_parts(
        ell,
        d,
        d,
        |a, b| Rational::power(l, exp(a, b)),
        |a| (Rational::power(l, a as i64 - d as i64), 0, 0),
        |_| (Rational::one(), 0, 0),
        (Rational::one(), 0, 0),
    )
}

/// One named contribution to a series.
#[derive(Clone, Debug, PartialEq)]
pub struct SeriesTerm {
    pub region: String,
    pub value: Rational,
}

fn span_label(s: &Span) -> String {
    match s {
        Span::Single(x) => x.to_string(),
        Span::From(x) => format!("≥{x}"),
    }
}

/// The terms `F·μ(a,b)·ℓ^{−2a−b}·δ(a,b)` grouped by grid cell and piece.
pub fn series_terms(mu: &TailModel, rule: &DeltaRule) -> Result<Vec<SeriesTerm>> {
    let ell = mu.ell();
    let f = rule.failure(ell);
    let summand = mu.weighted(2, 1).multiply(&rule.delta_model(ell))?;
    let mut terms = Vec::new();
    for ((a, b), v) in summand.cells() {
        terms.push(SeriesTerm {
            region: format!("a={a},b={b}"),
            value: &f * v,
        });
    }
    for p in summand.pieces() {
        terms.push(SeriesTerm {
            region: format!("a={},b={}", span_label(&p.a), span_label(&p.b)),
            value: &f * p.sum_over(ell, &Span::From(0), &Span::From(0))?,
        });
    }
    Ok(terms)
}

/// `F·Σ μ(a,b)·ℓ^{−2a−b}·δ(a,b)` over all of N², summed exactly.
pub fn sum_series(mu: &TailModel, rule: &DeltaRule) -> Result<Rational> {
    Ok(series_terms(mu, rule)?.into_iter().map(|t| t.value).sum())
}

/// A measure on kernel classes as a weighted mixture of tail models (one per
/// coset for Cartan normalizers).
#[derive(Clone, Debug, PartialEq)]
pub struct MeasureModel {
    pub ell: u32,
    pub components: Vec<(Rational, TailModel)>,
    /// Level of the primary tables.
    pub level: u32,
    /// Whether a second level confirmed the fit.
    pub confirmed: bool,
}

impl MeasureModel {
    pub fn series(&self, rule: &DeltaRule) -> Result<Rational> {
        let mut total = Rational::zero();
        for (w, t) in &self.components {
            total += w * sum_series(t, rule)?;
        }
        Ok(total)
    }

    pub fn value(&self, a: u32, b: u32) -> Rational {
        self.components.iter().map(|(w, t)| w * t.value(a, b)).sum()
    }

    pub fn total(&self) -> Result<Rational> {
        let mut total = Rational::zero();
        for (w, t) in &self.components {
            total += w * t.total()?;
        }
        Ok(total)
    }
}

/// Per-coset tables when the group extends a Cartan subgroup by `w`,
/// otherwise the single table.
fn component_tables(g: &MatrixGroupLevel) -> Vec<MeasureTable> {
    if g.cartan().is_some() {
        if let Ok((c, star)) = split_coset_tables(g) {
            return vec![c, star];
        }
    }
    vec![measure_table(g)]
}

fn explicit_base(spec: &GroupSpec, guard: SizeGuard) -> Result<Option<MatrixGroupLevel>> {
    match spec.mode {
        GroupMode::Full => Ok(Some(gl2_full(spec.ell, 1, guard)?)),
        GroupMode::Preimage if spec.ambient.unwrap_or(AmbientMode::Gl2) == AmbientMode::Gl2 => {
            let base_level = spec
                .base_level
                .ok_or_else(|| Error::InvalidInput("preimage mode needs base_level".into()))?;
            let ring = ResidueRing::new(spec.ell, base_level)?;
            let gens: Vec<ResidueMatrix> = spec
                .generators
                .iter()
                .flatten()
                .map(|rows| ResidueMatrix::from_rows(ring, *rows))
                .collect();
            Ok(Some(generated_subgroup(spec.ell, base_level, &gens, guard)?))
        }
        _ => Ok(None),
    }
}

/// Tables at level `n` for the given image, one per mixture component.
pub fn image_tables(
    image: &ImageType,
    ell: u32,
    n: u32,
    guard: SizeGuard,
) -> Result<Vec<MeasureTable>> {
    Ok(match image {
        ImageType::GL2Full => vec![lifted_measure_table(&gl2_full(ell, 1, guard)?, n, guard)?],
        ImageType::SplitCartan => vec![measure_table(&cartan(ell, n, Cartan::split_for(ell), guard)?)],
        ImageType::NonsplitCartan => {
            vec![measure_table(&cartan(ell, n, Cartan::nonsplit_for(ell), guard)?)]
        }
        ImageType::NormSplit | ImageType::NormNonsplit => {
            let c = if matches!(image, ImageType::NormSplit) {
                Cartan::split_for(ell)
            } else {
                Cartan::nonsplit_for(ell)
            };
            let (x, y) = split_coset_tables(&normalizer_cartan(&cartan(ell, n, c, guard)?, guard)?)?;
            vec![x, y]
        }
        ImageType::Explicit(spec) => {
            if spec.ell != ell {
                return Err(Error::InvalidInput(format!(
                    "image spec is at ℓ = {}, not {ell}",
                    spec.ell
                )));
            }
            match explicit_base(spec, guard)? {
                Some(base) if n >= base.level() => vec![lifted_measure_table(&base, n, guard)?],
                _ => component_tables(&spec.at_level(n).build(guard)?),
            }
        }
    })
}

/// Enumerates the image at increasing levels until every component admits
/// an exact tail fit (confirmed by the next level whenever it fits under
/// the size guard).
pub fn derived_measure_model(
    image: &ImageType,
    ell: u32,
    min_level: u32,
    guard: SizeGuard,
) -> Result<MeasureModel> {
    check_prime(ell)?;
    let start = min_level.max(3);
    let mut primary = image_tables(image, ell, start, guard)?;
    let mut last_err = None;
    for n in start..=MAX_DERIVED_LEVEL {
        let confirm = match image_tables(image, ell, n + 1, guard) {
            Ok(t) => Some(t),
            Err(Error::SizeGuard { .. }) => None,
            Err(e) => return Err(e),
        };
        let fits: Result<Vec<TailModel>> = primary
            .iter()
            .enumerate()
            .map(|(i, t)| fit_tail(t, confirm.as_ref().map(|c| &c[i])))
            .collect();
        match fits {
            Ok(models) => {
                let weight = Rational::ratio(1, models.len() as u64);
                return Ok(MeasureModel {
                    ell,
                    components: models.into_iter().map(|m| (weight.clone(), m)).collect(),
                    level: n,
                    confirmed: confirm.is_some(),
                });
            }
            Err(e @ Error::FitRejected(_)) => last_err = Some(e),
            Err(e) => return Err(e),
        }
        match confirm {
            Some(next) => primary = next,
            None => break,
        }
    }
    Err(last_err.unwrap_or_else(|| {
        Error::FitRejected(format!("no exact fit up to level {MAX_DERIVED_LEVEL}"))
    }))
}

/// Density of `ℓᵏ·α` given the inputs for `α` at defect `d`.
#[derive(Clone, Debug)]
pub enum DensityInput {
    Closed { image: ImageType, ell: u32, d: u32 },
    Series { model: MeasureModel, d: u32 },
}

impl DensityInput {
    pub fn evaluate(&self) -> Result<Rational> {
        match self {
            DensityInput::Closed { image, ell, d } => closed_density(image, *ell, *d),
            DensityInput::Series { model, d } => model.series(&DeltaRule::Defect(*d)),
        }
    }
}

/// Re-evaluates with defect `d + k`.
pub fn scaled_density(base: &DensityInput, k: u32) -> Result<Rational> {
    let scaled = match base {
        DensityInput::Closed { image, ell, d } => DensityInput::Closed {
            image: image.clone(),
            ell: *ell,
            d: d + k,
        },
        DensityInput::Series { model, d } => DensityInput::Series {
            model: model.clone(),
            d: d + k,
        },
    };
    scaled.evaluate()
}

/// `x·(ℓ−1)(ℓ²−1)²(ℓᴱ−1) ∈ Z[1/ℓ]` with `E = 4` for CM images, else 6.
pub fn denominator_audit(x: &Rational, ell: u32, cm: bool) -> Result<bool> {
    check_prime(ell)?;
    let l = BigInt::from(ell);
    let e = if cm { 4 } else { 6 };
    let one = BigInt::from(1);
    let l2 = &l * &l - &one;
    let factor = (&l - &one) * &l2 * &l2 * (num_traits::pow(l.clone(), e) - &one);
    in_z_inv_ell(&(x * Rational::integer(factor)), &l)
}

/// The closed density is nondecreasing in `d` on `0..=20` with deficit at
/// most `ℓ³·ℓ^{−d}`.
pub fn limit_audit(image: &ImageType, ell: u32) -> Result<bool> {
    let mut prev: Option<Rational> = None;
    for d in 0..=20u32 {
        let v = closed_density(image, ell, d)?;
        if prev.as_ref().is_some_and(|p| &v < p) {
            return Ok(false);
        }
        let deficit = Rational::one() - &v;
        if deficit > Rational::power(ell as u64, 3 - d as i64) || deficit.is_negative() {
            return Ok(false);
        }
        prev = Some(v);
    }
    Ok(true)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Closed,
    Series,
    Interval,
}

/// A computed density with the data it came from.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityResult {
    /// Exact value, or the upper end of the interval.
    pub value: Rational,
    /// Lower end when only an interval is known.
    pub lower: Option<Rational>,
    pub method: Method,
    pub ell: u32,
    pub d: Option<u32>,
    pub failure: Rational,
    pub image: String,
    pub level: Option<u32>,
}

impl DensityResult {
    pub fn exact(value: Rational, method: Method, ell: u32, d: Option<u32>, image: &str) -> Self {
        let failure = d.map_or_else(Rational::one, |d| Rational::power(ell as u64, 2 * d as i64));
        DensityResult {
            value,
            lower: None,
            method,
            ell,
            d,
            failure,
            image: image.to_string(),
            level: None,
        }
    }

    pub fn to_json(&self) -> Value {
        let mut v = json!({
            "value": self.value.to_string(),
            "decimal": self.value.decimal(5),
            "method": self.method,
            "ell": self.ell,
            "failure": self.failure.to_string(),
            "image": self.image,
        });
        if let Some(d) = self.d {
            v["d"] = json!(d);
        }
        if let Some(level) = self.level {
            v["level"] = json!(level);
        }
        if let Some(lo) = &self.lower {
            v["interval"] = json!([lo.to_string(), self.value.to_string()]);
            v["interval_decimal"] = json!([lo.decimal(5), self.value.decimal(5)]);
        }
        v
    }
}

/// Density for an arboreal group: exact when `δ` admits a tail model and
/// the matrix projection admits a measure model, otherwise the level-n
/// interval `[D_n − μ(B_n), D_n]`.
pub fn arboreal_density(
    a: &ArborealGroupLevel,
    confirm: Option<&ArborealGroupLevel>,
) -> Result<DensityResult> {
    let ell = a.ell();
    let failure = a.failure_constant();
    let exact = (|| -> Result<Rational> {
        let delta = a.delta_model(confirm)?;
        let primary = component_tables(a.projection());
        let second = confirm.map(|c| component_tables(c.projection()));
        let mut total = Rational::zero();
        let weight = Rational::ratio(1, primary.len() as u64);
        let rule = DeltaRule::Table {
            failure: failure.clone(),
            delta,
        };
        for (i, t) in primary.iter().enumerate() {
            let model = fit_tail(t, second.as_ref().map(|s| &s[i]))?;
            total += &weight * sum_series(&model, &rule)?;
        }
        Ok(total)
    })();
    let mut result = match exact {
        Ok(value) => DensityResult {
            value,
            lower: None,
            method: Method::Series,
            ell,
            d: None,
            failure,
            image: "arboreal".into(),
            level: Some(a.level()),
        },
        Err(Error::FitRejected(_)) | Err(Error::LevelTooLow { .. }) => {
            let tail = crate::measures::singular_mass(a.projection(), a.level())?;
            let (lo, hi) = a.density_interval(&tail);
            DensityResult {
                value: hi,
                lower: Some(if lo.is_negative() { Rational::zero() } else { lo }),
                method: Method::Interval,
                ell,
                d: None,
                failure,
                image: "arboreal".into(),
                level: Some(a.level()),
            }
        }
        Err(e) => return Err(e),
    };
    result.level = Some(a.level());
    Ok(result)
}
