//! Command implementations behind the `order-density` binary.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use order_density::arboreal::ArborealSpec;
use order_density::curves::{empirical_density, CurveSpec};
use order_density::density::{
    arboreal_density, closed_density, derived_measure_model, DeltaRule, DensityResult, ImageType,
    Method,
};
use order_density::matgroups::{GroupSpec, SizeGuard};
use order_density::measures::{fit_tail, measure_table, split_coset_tables, MeasureTable};
use order_density::{Error, Rational};
use serde_json::{json, Value};

pub mod verify;

#[derive(Debug, Parser)]
#[command(name = "order-density", version, about = "Densities of primes where a point has order prime to ℓ")]
pub struct Cli {
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Write the JSON report here instead of stdout.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Enumeration cap; overrides ORDER_DENSITY_SIZE_GUARD.
    #[arg(long, global = true)]
    pub size_guard: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Closed-form density for a standard image type.
    Exact {
        #[arg(long, value_parser = parse_image)]
        image: ImageType,
        #[arg(long)]
        ell: u32,
        #[arg(long, default_value_t = 0)]
        defect: u32,
        /// Density of ℓᵏ·α instead of α.
        #[arg(long, default_value_t = 0)]
        scale: u32,
    },
    /// Density from an enumerated measure table and its tail fit.
    Series {
        #[arg(long, value_parser = parse_image, required_unless_present = "group", conflicts_with = "group")]
        image: Option<ImageType>,
        /// Group spec (JSON).
        #[arg(long)]
        group: Option<PathBuf>,
        #[arg(long, required_unless_present = "group")]
        ell: Option<u32>,
        #[arg(long, default_value_t = 0)]
        defect: u32,
        #[arg(long, default_value_t = 0)]
        scale: u32,
        /// First level to enumerate.
        #[arg(long, default_value_t = 3)]
        min_level: u32,
    },
    /// Measure table of a group spec, optionally with its tail model.
    Measure {
        #[arg(long)]
        group: PathBuf,
        /// Overrides the level in the spec.
        #[arg(long)]
        level: Option<u32>,
        /// Fit a tail model, confirmed one level up when that fits the guard.
        #[arg(long)]
        fit: bool,
    },
    /// Finite-level density of an arboreal group.
    Simulate {
        #[arg(long)]
        arboreal: PathBuf,
        #[arg(long)]
        level: Option<u32>,
        /// Also build the next level to attempt an exact value.
        #[arg(long)]
        confirm: bool,
    },
    /// Frequency over primes up to a bound.
    Empirical {
        #[arg(long)]
        curve: PathBuf,
        #[arg(long)]
        ell: u32,
        #[arg(long, default_value_t = 100_000)]
        bound: u64,
        #[arg(long, default_value_t = 0)]
        scale: u32,
        /// Exact value to report alongside the frequency.
        #[arg(long)]
        exact: Option<Rational>,
        /// Per-prime rows (p, N, ord, v_ell).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Replay the reference table; nonzero exit on any mismatch.
    Verify {
        #[arg(long, default_value = "reference")]
        suite: String,
        #[arg(long, value_enum, value_delimiter = ',')]
        skip: Vec<verify::Section>,
        /// Replacement fixture CSV.
        #[arg(long)]
        fixtures: Option<PathBuf>,
        /// Sweep bound for the empirical section.
        #[arg(long, default_value_t = 100_000)]
        bound: u64,
    },
}

fn parse_image(s: &str) -> std::result::Result<ImageType, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0} verification checks failed")]
    Verify(usize),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) => match e {
                Error::SizeGuard { .. } => 3,
                Error::InvalidInput(_)
                | Error::NotPrime { .. }
                | Error::Json(_)
                | Error::LevelTooLow { .. } => 2,
                _ => 1,
            },
            CliError::Io { .. } => 2,
            CliError::Csv(_) => 1,
            CliError::Verify(_) => 4,
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn read(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Tables for each coset component of `g`.
fn component_tables(spec: &GroupSpec, guard: SizeGuard) -> CliResult<Vec<MeasureTable>> {
    let g = spec.build(guard)?;
    Ok(if g.cartan().is_some() {
        let (c, s) = split_coset_tables(&g)?;
        vec![c, s]
    } else {
        vec![measure_table(&g)]
    })
}

pub fn cmd_exact(image: &ImageType, ell: u32, d: u32) -> CliResult<DensityResult> {
    let value = closed_density(image, ell, d)?;
    Ok(DensityResult::exact(value, Method::Closed, ell, Some(d), image.name()))
}

pub fn cmd_series(
    image: &ImageType,
    ell: u32,
    d: u32,
    min_level: u32,
    guard: SizeGuard,
) -> CliResult<Value> {
    let model = derived_measure_model(image, ell, min_level, guard)?;
    let value = model.series(&DeltaRule::Defect(d))?;
    let mut result = DensityResult::exact(value, Method::Series, ell, Some(d), image.name());
    result.level = Some(model.level);
    let mut out = result.to_json();
    out["confirmed"] = json!(model.confirmed);
    out["components"] = model
        .components
        .iter()
        .map(|(w, t)| json!({"weight": w.to_string(), "model": t.to_json()}))
        .collect();
    Ok(out)
}

pub fn cmd_measure(spec: &GroupSpec, fit: bool, guard: SizeGuard) -> CliResult<Value> {
    let tables = component_tables(spec, guard)?;
    let mut out = json!({
        "ell": spec.ell,
        "level": spec.level,
        "tables": tables.iter().map(MeasureTable::to_json).collect::<Vec<_>>(),
    });
    if fit {
        let confirm = match component_tables(&spec.at_level(spec.level + 1), guard) {
            Ok(t) => Some(t),
            Err(CliError::Core(Error::SizeGuard { .. })) => None,
            Err(e) => return Err(e),
        };
        let fits = tables
            .iter()
            .enumerate()
            .map(|(i, t)| fit_tail(t, confirm.as_ref().map(|c| &c[i])).map(|m| m.to_json()))
            .collect::<order_density::Result<Vec<_>>>()?;
        out["fits"] = json!(fits);
        out["confirmed"] = json!(confirm.is_some());
    }
    Ok(out)
}

pub fn cmd_simulate(spec: &ArborealSpec, confirm: bool, guard: SizeGuard) -> CliResult<Value> {
    let a = spec.build(guard)?;
    let next = if confirm {
        Some(spec.at_level(spec.level + 1).build(guard)?)
    } else {
        None
    };
    let result = arboreal_density(&a, next.as_ref())?;
    let mut out = result.to_json();
    out["fixed_density"] = json!(a.fixed_density_level().to_string());
    out["order"] = json!(a.order().to_string());
    Ok(out)
}

pub fn cmd_empirical(
    curve: &CurveSpec,
    ell: u32,
    bound: u64,
    scale: u32,
    exact: Option<Rational>,
    csv_path: Option<&Path>,
) -> CliResult<Value> {
    let (c, p) = curve.build()?;
    let mut report = empirical_density(&c, &p, ell, bound, scale)?;
    report.exact_reference = exact;
    if let Some(path) = csv_path {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["p", "N", "ord", "v_ell"])?;
        for r in &report.rows {
            w.write_record(&[r.p.to_string(), r.n.to_string(), r.ord.to_string(), r.v_ell.to_string()])?;
        }
        w.flush().map_err(|source| CliError::Io {
            path: path.display().to_string(),
            source,
        })?;
    }
    Ok(report.to_json())
}

/// Runs one invocation; the returned text goes to stdout or `--output`.
pub fn run(cli: Cli) -> CliResult<String> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let guard = cli.size_guard.map(SizeGuard).unwrap_or_else(SizeGuard::from_env);
    let report = match cli.command {
        Command::Exact {
            image,
            ell,
            defect,
            scale,
        } => cmd_exact(&image, ell, defect + scale)?.to_json(),
        Command::Series {
            image,
            group,
            ell,
            defect,
            scale,
            min_level,
        } => {
            let image = match (image, group) {
                (Some(image), None) => image,
                (None, Some(path)) => ImageType::Explicit(GroupSpec::from_json(&read(&path)?)?),
                _ => return Err(CliError::Usage("give exactly one of --image, --group".into())),
            };
            let ell = match (&image, ell) {
                (ImageType::Explicit(spec), None) => spec.ell,
                (_, Some(ell)) => ell,
                (_, None) => return Err(CliError::Usage("--ell is required".into())),
            };
            cmd_series(&image, ell, defect + scale, min_level, guard)?
        }
        Command::Measure { group, level, fit } => {
            let spec = GroupSpec::from_json(&read(&group)?)?;
            let spec = match level {
                Some(n) => spec.at_level(n),
                None => spec,
            };
            cmd_measure(&spec, fit, guard)?
        }
        Command::Simulate {
            arboreal,
            level,
            confirm,
        } => {
            let spec = ArborealSpec::from_json(&read(&arboreal)?)?;
            let spec = match level {
                Some(n) => spec.at_level(n),
                None => spec,
            };
            cmd_simulate(&spec, confirm, guard)?
        }
        Command::Empirical {
            curve,
            ell,
            bound,
            scale,
            exact,
            csv,
        } => {
            let spec = CurveSpec::from_json(&read(&curve)?)?;
            cmd_empirical(&spec, ell, bound, scale, exact, csv.as_deref())?
        }
        Command::Verify {
            suite,
            skip,
            fixtures,
            bound,
        } => {
            if suite != "reference" {
                return Err(CliError::Usage(format!("unknown suite {suite:?}")));
            }
            let text = match fixtures {
                Some(path) => read(&path)?,
                None => verify::FIXTURES.to_string(),
            };
            let fixtures = verify::parse_fixtures(&text)?;
            let options = verify::Options { skip, bound, guard };
            let report = verify::run(&fixtures, &options, &closed_density);
            let table = report.table();
            let failed = report.failures();
            if failed > 0 {
                print!("{table}");
                return Err(CliError::Verify(failed));
            }
            return Ok(table);
        }
    };
    let text = serde_json::to_string_pretty(&report).map_err(Error::from)? + "\n";
    match cli.output {
        Some(path) => {
            write(&path, &text)?;
            Ok(String::new())
        }
        None => Ok(text),
    }
}
