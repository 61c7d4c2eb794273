//! The reference table replayed by `order-density verify`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use clap::ValueEnum;
use order_density::arboreal::standard_arboreal;
use order_density::curves::{empirical_density, CurveSpec};
use order_density::density::{derived_measure_model, DeltaRule, ImageType, MeasureModel};
use order_density::matgroups::{gl2_full, GroupSpec, SizeGuard};
use order_density::measures::singular_mass;
use order_density::{Error, Rational, Result};

use crate::{CliError, CliResult};

/// Largest accepted |frequency − exact| in the empirical section.
pub const EMPIRICAL_TOLERANCE: f64 = 0.005;

/// `section,case,ell,d,expected`; `d` is the scale for empirical rows.
pub const FIXTURES: &str = "\
section,case,ell,d,expected
closed,gl2,2,0,11/21
closed,gl2,2,1,16/21
closed,gl2,2,2,37/42
closed,gl2,3,0,139/208
closed,gl2,3,1,185/208
closed,gl2,3,2,601/624
closed,gl2,5,0,2381/2976
closed,gl2,5,1,2857/2976
closed,gl2,7,0,14071/16416
closed,gl2,7,1,16081/16416
closed,norm-split,5,0,817/1152
closed,norm-split,5,1,1081/1152
closed,norm-nonsplit,2,0,8/15
closed,norm-nonsplit,2,1,4/5
closed,norm-nonsplit,2,2,109/120
pipeline,order6-mod3,3,0,23/104
pipeline,order6-mod3,3,1,77/104
pipeline,order6-mod3,3,2,95/104
pipeline,index3-mod13,13,0,16801/18816
pipeline,index3-mod13,13,1,18649/18816
arboreal,gl2-level1,2,0,5/8
arboreal,gl2-interval-level4,2,0,11/21
empirical,37.a1,2,0,11/21
empirical,153.b2,3,0,23/104
empirical,1521.b2,13,0,16801/18816
empirical,cm-i,5,0,817/1152
empirical,cm-zeta3,2,0,8/15
";

const ORDER6_MOD3: &str = r#"{"ell":3,"level":3,"mode":"preimage","base_level":1,
    "generators":[[[1,1],[0,1]],[[-1,0],[0,1]]]}"#;

const INDEX3_MOD13: &str = r#"{"ell":13,"level":3,"mode":"preimage","base_level":1,
    "ambient":"normalizer","model":"diagonal",
    "generators":[[[2,0],[0,2]],[[5,0],[0,1]],[[0,1],[-1,0]]]}"#;

fn curve(label: &str) -> Option<CurveSpec> {
    let (a, point) = match label {
        "37.a1" => ([0, 0, 1, -1, 0], [0, 0]),
        "153.b2" => ([0, 0, 1, 6, 27], [5, 13]),
        "1521.b2" => ([0, 0, 1, 0, 7140], [56, 427]),
        "cm-i" => ([0, 0, 0, 3, 0], [1, -2]),
        "cm-zeta3" => ([0, 0, 0, 0, 3], [1, 2]),
        _ => return None,
    };
    Some(CurveSpec {
        label: label.to_string(),
        a,
        point,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, ValueEnum)]
pub enum Section {
    Closed,
    Pipeline,
    Cross,
    Arboreal,
    Empirical,
}

impl Section {
    fn name(self) -> &'static str {
        match self {
            Section::Closed => "closed",
            Section::Pipeline => "pipeline",
            Section::Cross => "cross",
            Section::Arboreal => "arboreal",
            Section::Empirical => "empirical",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Section::from_str(s, true).ok()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fixture {
    pub section: Section,
    pub case: String,
    pub ell: u32,
    pub d: u32,
    pub expected: Rational,
}

pub fn parse_fixtures(text: &str) -> CliResult<Vec<Fixture>> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut out = Vec::new();
    for row in reader.records() {
        let row = row?;
        let field = |i: usize| row.get(i).unwrap_or("").trim();
        let bad = |what: &str| CliError::Usage(format!("fixture {:?}: bad {what}", row));
        out.push(Fixture {
            section: Section::parse(field(0)).ok_or_else(|| bad("section"))?,
            case: field(1).to_string(),
            ell: field(2).parse().map_err(|_| bad("ell"))?,
            d: field(3).parse().map_err(|_| bad("d"))?,
            expected: field(4).parse().map_err(|_| bad("expected value"))?,
        });
    }
    Ok(out)
}

pub struct Options {
    pub skip: Vec<Section>,
    pub bound: u64,
    pub guard: SizeGuard,
}

#[derive(Clone, Debug)]
pub struct Check {
    pub section: Section,
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub checks: Vec<Check>,
}

impl Report {
    pub fn failures(&self) -> usize {
        self.checks.iter().filter(|c| !c.pass).count()
    }

    pub fn table(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let mark = if c.pass { "PASS" } else { "FAIL" };
            let _ = writeln!(out, "{mark}  {:9}  {:32}  {}", c.section.name(), c.name, c.detail);
        }
        let _ = writeln!(
            out,
            "{} checks, {} failed",
            self.checks.len(),
            self.failures()
        );
        out
    }

    fn push(&mut self, section: Section, name: String, outcome: Result<(bool, String)>) {
        let (pass, detail) = outcome.unwrap_or_else(|e| (false, format!("error: {e}")));
        self.checks.push(Check {
            section,
            name,
            pass,
            detail,
        });
    }
}

fn exact_check(got: Rational, want: &Rational) -> (bool, String) {
    if &got == want {
        (true, got.to_string())
    } else {
        (false, format!("got {got}, expected {want}"))
    }
}

fn pipeline_model(case: &str, guard: SizeGuard) -> Result<MeasureModel> {
    let spec = match case {
        "order6-mod3" => ORDER6_MOD3,
        "index3-mod13" => INDEX3_MOD13,
        other => return Err(Error::InvalidInput(format!("unknown pipeline {other:?}"))),
    };
    let spec = GroupSpec::from_json(spec)?;
    let ell = spec.ell;
    derived_measure_model(&ImageType::Explicit(spec), ell, 3, guard)
}

fn arboreal_check(f: &Fixture, guard: SizeGuard) -> Result<(bool, String)> {
    match f.case.as_str() {
        "gl2-level1" => {
            let g = gl2_full(f.ell, 1, guard)?;
            let a = standard_arboreal(&g, f.d, guard)?;
            Ok(exact_check(a.fixed_density_level(), &f.expected))
        }
        "gl2-interval-level4" => {
            let mut prev: Option<Rational> = None;
            let mut interval = None;
            for n in 1..=4 {
                let g = gl2_full(f.ell, n, guard)?;
                let a = standard_arboreal(&g, f.d, guard)?;
                let dn = a.fixed_density_level();
                if prev.as_ref().is_some_and(|p| &dn > p) {
                    return Ok((false, format!("D_{n} = {dn} increases")));
                }
                if n == 4 {
                    interval = Some(a.density_interval(&singular_mass(&g, 4)?));
                }
                prev = Some(dn);
            }
            let (lo, hi) = interval.expect("level 4 reached");
            let inside = lo <= f.expected && f.expected <= hi;
            Ok((inside, format!("[{}, {}]", lo.decimal(5), hi.decimal(5))))
        }
        other => Err(Error::InvalidInput(format!("unknown arboreal case {other:?}"))),
    }
}

fn empirical_check(f: &Fixture, bound: u64) -> Result<(bool, String)> {
    let spec = curve(&f.case)
        .ok_or_else(|| Error::InvalidInput(format!("unknown curve {:?}", f.case)))?;
    let (c, p) = spec.build()?;
    let report = empirical_density(&c, &p, f.ell, bound, f.d)?;
    let diff = (report.frequency() - f.expected.to_f64()).abs();
    Ok((
        diff <= EMPIRICAL_TOLERANCE,
        format!(
            "{} vs {} (|Δ| = {diff:.5}, {} primes)",
            report.frequency_decimal(),
            f.expected.decimal(5),
            report.primes_used()
        ),
    ))
}

/// Replays `fixtures`; `closed` supplies the closed formulas.
pub fn run(
    fixtures: &[Fixture],
    options: &Options,
    closed: &dyn Fn(&ImageType, u32, u32) -> Result<Rational>,
) -> Report {
    let mut report = Report::default();
    let skipped = |s: Section| options.skip.contains(&s);
    let mut models: BTreeMap<String, Result<MeasureModel>> = BTreeMap::new();
    for f in fixtures.iter().filter(|f| !skipped(f.section)) {
        let name = format!("{} ℓ={} d={}", f.case, f.ell, f.d);
        let outcome = match f.section {
            Section::Closed => f
                .case
                .parse::<ImageType>()
                .and_then(|image| closed(&image, f.ell, f.d))
                .map(|v| exact_check(v, &f.expected)),
            Section::Pipeline => {
                let model = models
                    .entry(f.case.clone())
                    .or_insert_with(|| pipeline_model(&f.case, options.guard));
                match model {
                    Ok(m) => m
                        .series(&DeltaRule::Defect(f.d))
                        .map(|v| exact_check(v, &f.expected)),
                    Err(e) => Err(Error::InvalidInput(e.to_string())),
                }
            }
            Section::Arboreal => arboreal_check(f, options.guard),
            Section::Empirical => empirical_check(f, options.bound),
            Section::Cross => Err(Error::InvalidInput(
                "cross checks are generated, not read from fixtures".into(),
            )),
        };
        report.push(f.section, name, outcome);
    }
    if !skipped(Section::Cross) {
        for image in ImageType::CLOSED {
            for ell in [2, 3] {
                let model = derived_measure_model(&image, ell, 3, options.guard);
                for d in 0..=2 {
                    let outcome = model.as_ref().map_err(|e| Error::InvalidInput(e.to_string())).and_then(|m| {
                        let series = m.series(&DeltaRule::Defect(d))?;
                        Ok(exact_check(series, &closed(&image, ell, d)?))
                    });
                    report.push(Section::Cross, format!("{} ℓ={ell} d={d}", image.name()), outcome);
                }
            }
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use order_density::density::closed_density;

    fn options() -> Options {
        Options {
            skip: vec![Section::Empirical],
            bound: 100_000,
            guard: SizeGuard::default(),
        }
    }

    #[test]
    fn fixtures_parse() {
        let f = parse_fixtures(FIXTURES).unwrap();
        assert_eq!(f.len(), 27);
        assert_eq!(f.iter().filter(|f| f.section == Section::Closed).count(), 15);
        assert!(parse_fixtures("section,case,ell,d,expected\nbogus,x,2,0,1/2\n").is_err());
    }

    #[test]
    fn exact_sections_pass() {
        let f = parse_fixtures(FIXTURES).unwrap();
        let report = run(&f, &options(), &closed_density);
        assert_eq!(report.failures(), 0, "{}", report.table());
        assert_eq!(report.checks.len(), 22 + 30);
    }

    #[test]
    fn tampered_formula_fails() {
        let f = parse_fixtures(FIXTURES).unwrap();
        let tampered = |image: &ImageType, ell: u32, d: u32| {
            let v = closed_density(image, ell, d)?;
            Ok(if matches!(image, ImageType::GL2Full) && ell == 2 {
                v + Rational::power(2, -20)
            } else {
                v
            })
        };
        let report = run(&f, &options(), &tampered);
        // three closed fixtures and three cross identities
        assert_eq!(report.failures(), 6, "{}", report.table());
    }
}
