use std::fs;
use std::path::{Path, PathBuf};

use cmm::baselines::SinkhornOptions;
use cmm::experiments::{default_lambda_grid, log_grid, DomainAdaptConfig};
use cmm::io::ProblemDescriptor;
use cmm::par::Execution;
use cmm::solvers::{SolverConfig, SolverKind};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Solve,
    SweepLambda,
    OpwDist,
    DomainAdapt,
    Check,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::SweepLambda => "sweep-lambda",
            Command::OpwDist => "opw-dist",
            Command::DomainAdapt => "domain-adapt",
            Command::Check => "check",
        }
    }
}

/// Values given on the command line; each replaces the config entry.
#[derive(Debug, Default, Clone)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub solver: Option<SolverKind>,
    pub lambda: Option<f64>,
    pub rotations: Vec<f64>,
    pub trials: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    command: Option<Command>,
    problem: Option<Value>,
    solver: Option<Value>,
    solver_kind: Option<SolverKind>,
    out: Option<PathBuf>,
    seed: Option<u64>,
    execution: Option<Execution>,
    sweep: Option<RawSweep>,
    domain_adapt: Option<Value>,
    check: Option<CheckSection>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    lambdas: Option<Vec<f64>>,
    grid: Option<GridSpec>,
    #[serde(default)]
    sinkhorn: SinkhornOptions,
}

#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridSpec {
    lo: f64,
    hi: f64,
    count: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepSection {
    pub lambdas: Vec<f64>,
    pub sinkhorn: SinkhornOptions,
}

#[derive(Debug, Clone, Serialize)]
pub struct DomainAdaptSection {
    pub angles: Vec<f64>,
    #[serde(flatten)]
    pub config: DomainAdaptConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckPoint {
    Independence,
    Random,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CheckSection {
    pub directions: usize,
    pub point: CheckPoint,
    pub gradient_tol: f64,
    pub hessian_tol: f64,
}

impl Default for CheckSection {
    fn default() -> Self {
        CheckSection {
            directions: 10,
            point: CheckPoint::Random,
            gradient_tol: 1e-6,
            hessian_tol: 1e-5,
        }
    }
}

const DEFAULT_ANGLES: [f64; 5] = [10.0, 30.0, 50.0, 70.0, 90.0];

/// Fully resolved run configuration. Its JSON form is hashed and written
/// to `config.json`.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub seed: u64,
    pub solver_kind: SolverKind,
    pub execution: Execution,
    pub solver: SolverConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub problem: Option<ProblemDescriptor>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub domain_adapt: Option<DomainAdaptSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub check: Option<CheckSection>,
    #[serde(skip)]
    pub out: PathBuf,
    /// Directory that relative paths inside the problem descriptor resolve against.
    #[serde(skip)]
    pub problem_base: PathBuf,
}

fn parse_value<T: DeserializeOwned>(value: Value, prefix: &str) -> Result<T, CliError> {
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { prefix.to_string() } else { format!("{prefix}.{path}") };
        let message = e.into_inner().to_string();
        // Internally tagged and flattened types lose the path; recover the name.
        let field = match message.strip_prefix("missing field `").and_then(|r| r.split('`').next()) {
            Some(name) if path == "." => format!("{prefix}.{name}"),
            _ => field,
        };
        CliError::config(field, message)
    })
}

/// Parses a problem descriptor and rejects top-level keys it does not use.
fn parse_problem(value: Value) -> Result<ProblemDescriptor, CliError> {
    let given: Vec<String> = value.as_object().map(|m| m.keys().cloned().collect()).unwrap_or_default();
    let pb: ProblemDescriptor = parse_value(value, "problem")?;
    let known = serde_json::to_value(&pb).expect("descriptor serializes");
    if let Some(key) = given.iter().find(|k| known.get(k.as_str()).is_none()) {
        return Err(CliError::config(
            format!("problem.{key}"),
            format!("unknown field `{key}` for variant `{}`", pb.variant()),
        ));
    }
    Ok(pb)
}

fn read_json(path: &Path, field: &str) -> Result<Value, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config(field, format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::config(field, format!("{}: {e}", path.display())))
}

/// A section given inline or as `{"file": path}`; returns the value and the
/// directory its own relative paths resolve against.
fn resolve_section(value: Value, base: &Path, field: &str) -> Result<(Value, PathBuf), CliError> {
    if let Value::Object(map) = &value {
        if map.len() == 1 {
            if let Some(file) = map.get("file") {
                let Some(file) = file.as_str() else {
                    return Err(CliError::config(format!("{field}.file"), "expected a path string"));
                };
                let path = base.join(file);
                let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
                return Ok((read_json(&path, &format!("{field}.file"))?, dir));
            }
        }
    }
    Ok((value, base.to_path_buf()))
}

fn check_lambda(v: f64, field: &str) -> Result<(), CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(CliError::config(field, format!("must be positive, got {v}")))
    }
}

impl RunConfig {
    /// Reads the config file (if any), applies overrides and validates
    /// everything the command will need.
    pub fn load(command: Command, path: Option<&Path>, ov: &Overrides) -> Result<Self, CliError> {
        let (raw, base) = match path {
            Some(p) => {
                let value = read_json(p, "config")?;
                let base = p.parent().map(Path::to_path_buf).unwrap_or_default();
                (parse_value::<RawConfig>(value, "config")?, base)
            }
            None => (parse_value::<RawConfig>(Value::Object(Default::default()), "config")?, PathBuf::new()),
        };
        if let Some(c) = raw.command {
            if c != command {
                return Err(CliError::config(
                    "command",
                    format!("config is for `{}` but `{}` was requested", c.name(), command.name()),
                ));
            }
        }
        let out = ov
            .out
            .clone()
            .or(raw.out.map(|o| base.join(o)))
            .ok_or_else(|| CliError::config("out", "no output directory given (use --out or `out`)"))?;

        let solver = match raw.solver {
            Some(v) => {
                let (v, _) = resolve_section(v, &base, "solver")?;
                parse_value::<SolverConfig>(v, "solver")?
            }
            None => SolverConfig::default(),
        };
        solver.validate().map_err(|e| CliError::from_core("solver", e))?;

        let (mut problem, problem_base) = match raw.problem {
            Some(v) => {
                let (v, dir) = resolve_section(v, &base, "problem")?;
                (Some(parse_problem(v)?), dir)
            }
            None => (None, base.clone()),
        };

        let mut cfg = RunConfig {
            command,
            seed: ov.seed.or(raw.seed).unwrap_or(0),
            solver_kind: ov.solver.or(raw.solver_kind).unwrap_or_default(),
            execution: raw.execution.unwrap_or_default(),
            solver,
            problem: None,
            sweep: None,
            domain_adapt: None,
            check: None,
            out,
            problem_base,
        };

        match command {
            Command::Solve | Command::Check | Command::OpwDist => {
                let Some(pb) = problem.as_mut() else {
                    return Err(CliError::config("problem", "this command needs a problem descriptor"));
                };
                if let Some(l) = ov.lambda {
                    match pb.lambda_mut() {
                        Some(slot) => *slot = l,
                        None => return Err(CliError::config("lambda", format!("variant `{}` has no regularizer", pb.variant()))),
                    }
                }
                if command == Command::OpwDist && !matches!(pb, ProblemDescriptor::OrderPreserving { .. }) {
                    return Err(CliError::config("problem.variant", "opw-dist needs the order_preserving variant"));
                }
                if command == Command::Check {
                    let mut check = raw.check.unwrap_or_default();
                    if let Some(t) = ov.trials {
                        check.directions = t;
                    }
                    if check.directions == 0 {
                        return Err(CliError::config("check.directions", "must be at least 1"));
                    }
                    cfg.check = Some(check);
                }
                cfg.problem = problem;
            }
            Command::SweepLambda => {
                let pb = problem.unwrap_or_else(|| {
                    serde_json::from_str(r#"{"variant": "entropic", "instance": "synthetic", "lambda": 1.0}"#)
                        .expect("static descriptor")
                });
                if !matches!(pb, ProblemDescriptor::Entropic { .. } | ProblemDescriptor::Classic { .. }) {
                    return Err(CliError::config("problem.variant", "sweep-lambda needs transport data (classic or entropic)"));
                }
                let sweep = raw.sweep.unwrap_or_default();
                let lambdas = match (ov.lambda, sweep.lambdas, sweep.grid) {
                    (Some(l), _, _) => vec![l],
                    (None, Some(_), Some(_)) => {
                        return Err(CliError::config("sweep", "give either `lambdas` or `grid`, not both"))
                    }
                    (None, Some(ls), None) => ls,
                    (None, None, Some(g)) => {
                        check_lambda(g.lo, "sweep.grid.lo")?;
                        check_lambda(g.hi, "sweep.grid.hi")?;
                        log_grid(g.lo, g.hi, g.count)
                    }
                    (None, None, None) => default_lambda_grid(),
                };
                if lambdas.is_empty() {
                    return Err(CliError::config("sweep.lambdas", "grid is empty"));
                }
                for (i, &l) in lambdas.iter().enumerate() {
                    check_lambda(l, &format!("sweep.lambdas[{i}]"))?;
                }
                cfg.problem = Some(pb);
                cfg.sweep = Some(SweepSection {
                    lambdas,
                    sinkhorn: sweep.sinkhorn,
                });
            }
            Command::DomainAdapt => {
                let mut section = raw.domain_adapt.unwrap_or(Value::Object(Default::default()));
                let angles = match section.as_object_mut().and_then(|m| m.remove("angles")) {
                    Some(v) => parse_value::<Vec<f64>>(v, "domain_adapt.angles")?,
                    None => DEFAULT_ANGLES.to_vec(),
                };
                let mut config = parse_value::<DomainAdaptConfig>(section, "domain_adapt")?;
                if let Some(l) = ov.lambda {
                    config.lambda = l;
                }
                if let Some(t) = ov.trials {
                    config.trials = t;
                }
                let angles = if ov.rotations.is_empty() { angles } else { ov.rotations.clone() };
                if angles.is_empty() {
                    return Err(CliError::config("domain_adapt.angles", "no rotation angles"));
                }
                if let Some(i) = angles.iter().position(|a| !a.is_finite()) {
                    return Err(CliError::config(format!("domain_adapt.angles[{i}]"), "must be finite"));
                }
                config.validate().map_err(|e| CliError::from_core("domain_adapt", e))?;
                cfg.domain_adapt = Some(DomainAdaptSection { angles, config });
            }
        }
        Ok(cfg)
    }

    /// SHA-256 of the resolved configuration JSON, hex encoded.
    pub fn hash(&self) -> String {
        let text = serde_json::to_string(self).expect("config serializes");
        Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }
}
